//! Losses, Adam, early stopping and the full-graph training loop.

use std::time::Instant;

use ndarray::{Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{trace_from_tape, BandSource, EnergyTrace};
use crate::error::{Error, Result};
use crate::graph::{Graph, Split};
use crate::model::{backward, forward, ForwardTape, ModelConfig, ModelParams};
use crate::operators::PropagationOperators;
use crate::spectral::SpectralSummary;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    /// L2 coefficient on w_in and w_out.
    pub weight_decay: f64,
    pub max_epochs: usize,
    /// Epochs without a strict validation-accuracy improvement before stopping.
    pub patience: usize,
    /// Drives dropout. Initialization uses `ModelConfig::seed`.
    pub seed: u64,
    /// Also decay trunk weights (the plain GCN baseline).
    pub trunk_weight_decay: bool,
    /// Interval of the eval-mode band checks.
    pub trace_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-3,
            weight_decay: 5e-4,
            max_epochs: 1500,
            patience: 100,
            seed: 0,
            trunk_weight_decay: false,
            trace_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("weight decay must be non-negative".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be positive".into()));
        }
        if self.patience > self.max_epochs {
            return Err(Error::Config(format!(
                "patience {} exceeds max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        if self.trace_every == 0 {
            return Err(Error::Config("trace_every must be positive".into()));
        }
        Ok(())
    }
}

/// Mean softmax cross-entropy over the masked nodes, and its gradient with
/// respect to the logits (zero on unmasked rows).
pub fn task_loss(logits: ArrayView2<'_, f64>, labels: &[usize], mask: &[bool]) -> Result<(f64, Array2<f64>)> {
    let (n, c) = logits.dim();
    if labels.len() != n || mask.len() != n {
        return Err(Error::Contract("labels and mask must have one entry per node".into()));
    }
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(Error::Config("training mask is empty".into()));
    }
    let scale = 1.0 / count as f64;
    let mut grad = Array2::zeros((n, c));
    let mut loss = 0.0;
    for (i, row) in logits.axis_iter(Axis(0)).enumerate() {
        if !mask[i] {
            continue;
        }
        let y = labels[i];
        if y >= c {
            return Err(Error::Contract(format!("label {y} of node {i} outside {c} classes")));
        }
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let sum: f64 = row.iter().map(|&v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        loss += log_z - row[y];
        let mut g = grad.row_mut(i);
        for (j, &v) in row.iter().enumerate() {
            g[j] = (v - log_z).exp() * scale;
        }
        g[y] -= scale;
    }
    Ok((loss * scale, grad))
}

fn anchored_frobenius(w: &Array2<f64>, anchor: f64, gamma: f64) -> (f64, Array2<f64>) {
    let mut diff = w.clone();
    diff.diag_mut().mapv_inplace(|v| v - anchor);
    let norm = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        // Nondifferentiable at the anchor; take the zero subgradient.
        diff.fill(0.0);
        return (0.0, diff);
    }
    diff *= gamma / norm;
    (gamma * norm, diff)
}

/// γ‖W⁽¹⁾ − √c_max·I‖_F + γ Σ_{k>1} ‖W⁽ᵏ⁾ − I‖_F with per-layer gradients.
pub fn ortho_reg_loss(w_layers: &[Array2<f64>], c_max: f64, gamma: f64) -> (f64, Vec<Array2<f64>>) {
    anchored_penalty(w_layers, |k| if k == 0 { c_max.sqrt() } else { 1.0 }, gamma)
}

/// Trunk penalty for a model configuration: orthogonal anchors, or anchors at
/// zero under Glorot initialization.
pub fn trunk_penalty(w_layers: &[Array2<f64>], config: &ModelConfig) -> (f64, Vec<Array2<f64>>) {
    anchored_penalty(w_layers, |k| config.anchor_scale(k), config.gamma)
}

fn anchored_penalty(w_layers: &[Array2<f64>], anchor: impl Fn(usize) -> f64, gamma: f64) -> (f64, Vec<Array2<f64>>) {
    let mut total = 0.0;
    let grads = w_layers
        .iter()
        .enumerate()
        .map(|(k, w)| {
            let (l, g) = anchored_frobenius(w, anchor(k), gamma);
            total += l;
            g
        })
        .collect();
    (total, grads)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub task: f64,
    pub trunk: f64,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.task + self.trunk
    }
}

/// Task loss plus trunk penalty over `mask`, with exact gradients. L2 weight
/// decay is applied by the optimizer, not here.
pub fn objective(
    params: &ModelParams,
    graph: &Graph,
    ops: &PropagationOperators,
    config: &ModelConfig,
    mask: &[bool],
    training: bool,
    rng: &mut ChaCha8Rng,
) -> Result<(LossParts, ModelParams, ForwardTape)> {
    let (logits, tape) = forward(graph, ops, params, config, training, rng)?;
    let (task, g_logits) = task_loss(logits.view(), graph.labels(), mask)?;
    let mut grads = backward(&tape, g_logits.view(), params, config, graph, ops)?;
    let mut trunk = 0.0;
    if config.trunk_trainable() && config.gamma > 0.0 {
        let (l, gw) = trunk_penalty(&params.w_layers, config);
        trunk = l;
        for (g, r) in grads.w_layers.iter_mut().zip(gw) {
            *g += &r;
        }
    }
    Ok((LossParts { task, trunk }, grads, tape))
}

/// Which tensors receive L2 decay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightDecay {
    pub rate: f64,
    pub trunk: bool,
}

impl WeightDecay {
    /// ½·rate·Σ‖W‖² over the decayed tensors.
    pub fn penalty(&self, params: &ModelParams) -> f64 {
        let sq = |w: &Array2<f64>| w.iter().map(|v| v * v).sum::<f64>();
        let mut s = sq(&params.w_in) + sq(&params.w_out);
        if self.trunk {
            s += params.w_layers.iter().map(sq).sum::<f64>();
        }
        0.5 * self.rate * s
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    pub t: u64,
    m: ModelParams,
    v: ModelParams,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        Self {
            t: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }
}

/// One Adam step with L2 decay added to the gradients of the decayed tensors.
/// Uses the folded bias correction lr·√(1−β₂ᵗ)/(1−β₁ᵗ).
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut AdamState,
    lr: f64,
    decay: WeightDecay,
) -> Result<()> {
    if state.m.n_scalars() != params.n_scalars() || grads.n_scalars() != params.n_scalars() {
        return Err(Error::Contract("optimizer state does not match parameters".into()));
    }
    state.t += 1;
    let t = state.t as i32;
    let step = lr * (1.0 - ADAM_BETA2.powi(t)).sqrt() / (1.0 - ADAM_BETA1.powi(t));

    let n_trunk = params.k_layers();
    // Tensor order: w_in, b_in, w_layers.., b_shifts, w_out, b_out.
    let decayed = |i: usize| i == 0 || i == n_trunk + 3 || (decay.trunk && (2..2 + n_trunk).contains(&i));
    let values = params.tensors_mut();
    let g = grads.tensors();
    let m = state.m.tensors_mut();
    let v = state.v.tensors_mut();
    for (i, (((p, g), m), v)) in values.into_iter().zip(g).zip(m).zip(v).enumerate() {
        if p.len() != g.len() {
            return Err(Error::Contract("gradient shape does not match parameters".into()));
        }
        let wd = if decayed(i) { decay.rate } else { 0.0 };
        for j in 0..p.len() {
            let gj = g[j] + wd * p[j];
            m[j] = ADAM_BETA1 * m[j] + (1.0 - ADAM_BETA1) * gj;
            v[j] = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * gj * gj;
            p[j] -= step * m[j] / (v[j].sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

/// Fraction of masked nodes whose argmax logit (lowest index on ties) is the label.
pub fn accuracy(logits: ArrayView2<'_, f64>, labels: &[usize], mask: &[bool]) -> Result<f64> {
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(Error::Config("evaluation mask is empty".into()));
    }
    if labels.len() != logits.nrows() || mask.len() != logits.nrows() {
        return Err(Error::Contract("labels and mask must have one entry per node".into()));
    }
    let mut correct = 0usize;
    for (i, row) in logits.axis_iter(Axis(0)).enumerate() {
        if !mask[i] {
            continue;
        }
        let mut best = 0;
        for (j, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = j;
            }
        }
        correct += usize::from(best == labels[i]);
    }
    Ok(correct as f64 / count as f64)
}

/// Eval-mode accuracy over `mask`.
pub fn evaluate(
    params: &ModelParams,
    graph: &Graph,
    ops: &PropagationOperators,
    config: &ModelConfig,
    mask: &[bool],
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (logits, _) = forward(graph, ops, params, config, false, &mut rng)?;
    accuracy(logits.view(), graph.labels(), mask)
}

/// Band violations of one periodic eval-mode check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandCheck {
    pub epoch: usize,
    pub violations: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Timing {
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub schema_version: u32,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Total training objective per epoch, including the L2 term.
    pub train_loss: Vec<f64>,
    pub val_accuracy: Vec<f64>,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    /// Evaluated once, on the best-validation parameters.
    pub test_accuracy: f64,
    pub epochs_run: usize,
    pub band_checks: Vec<BandCheck>,
    /// Eval-mode trace of the best-validation parameters.
    pub trace: EnergyTrace,
    /// The only nondeterministic field.
    pub timing: Timing,
}

impl TrainReport {
    pub fn without_timing(&self) -> Self {
        Self {
            timing: Timing::default(),
            ..self.clone()
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: Self = serde_json::from_str(text).map_err(|e| Error::Config(format!("bad report: {e}")))?;
        if report.schema_version != REPORT_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "report schema {} unsupported (expected {REPORT_SCHEMA_VERSION})",
                report.schema_version
            )));
        }
        Ok(report)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub report: TrainReport,
    /// Best-validation parameters.
    pub params: ModelParams,
}

fn at_epoch(epoch: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Numeric { location } => Error::Numeric {
            location: format!("epoch {epoch}, {location}"),
        },
        other => other,
    }
}

/// Full-batch training with early stopping on validation accuracy.
pub fn train(
    graph: &Graph,
    ops: &PropagationOperators,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    spectral: std::result::Result<&SpectralSummary, String>,
) -> Result<TrainOutcome> {
    model_config.validate()?;
    train_config.validate()?;
    let start = Instant::now();
    let train_mask = graph.mask(Split::Train);
    let val_mask = graph.mask(Split::Val);
    let test_mask = graph.mask(Split::Test);
    for (mask, name) in [(&train_mask, "train"), (&val_mask, "val"), (&test_mask, "test")] {
        if !mask.iter().any(|&m| m) {
            return Err(Error::Config(format!("{name} split is empty")));
        }
    }

    let mut params = ModelParams::init(model_config, graph.d_in(), graph.n_classes())?;
    let mut state = AdamState::new(&params);
    let decay = WeightDecay {
        rate: train_config.weight_decay,
        trunk: train_config.trunk_weight_decay && model_config.trunk_trainable(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(train_config.seed);
    let mut eval_rng = ChaCha8Rng::seed_from_u64(0);

    let mut train_loss = Vec::new();
    let mut val_accuracy = Vec::new();
    let mut band_checks = Vec::new();
    let mut best = (0usize, f64::NEG_INFINITY, params.clone());
    let mut stale = 0usize;

    for epoch in 0..train_config.max_epochs {
        let wrap = at_epoch(epoch);
        let (parts, grads, _) =
            objective(&params, graph, ops, model_config, &train_mask, true, &mut rng).map_err(&wrap)?;
        let loss = parts.total() + decay.penalty(&params);
        adam_step(&mut params, &grads, &mut state, train_config.lr, decay)?;
        if !params.all_finite() {
            return Err(Error::Numeric {
                location: format!("epoch {epoch}, parameters after update"),
            });
        }

        let (logits, tape) = forward(graph, ops, &params, model_config, false, &mut eval_rng).map_err(&wrap)?;
        let acc = accuracy(logits.view(), graph.labels(), &val_mask)?;
        train_loss.push(loss);
        val_accuracy.push(acc);

        if epoch % train_config.trace_every == 0 {
            let trace = trace_from_tape(&tape, &params, ops, model_config, spectral.clone(), BandSource::Post)?;
            let violations = trace.violations();
            if !violations.is_empty() {
                log::debug!("epoch {epoch}: band violated at layers {violations:?}");
            }
            band_checks.push(BandCheck { epoch, violations });
        }
        if epoch % 100 == 0 {
            log::info!("epoch {epoch}: loss {loss:.4} val {acc:.4}");
        }

        if acc > best.1 {
            best = (epoch, acc, params.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= train_config.patience {
                log::info!("early stop at epoch {epoch}, best epoch {}", best.0);
                break;
            }
        }
    }

    let (best_epoch, best_val_accuracy, best_params) = best;
    let (logits, tape) = forward(graph, ops, &best_params, model_config, false, &mut eval_rng)?;
    let test_accuracy = accuracy(logits.view(), graph.labels(), &test_mask)?;
    let trace = trace_from_tape(&tape, &best_params, ops, model_config, spectral, BandSource::Post)?;
    let epochs_run = train_loss.len();
    Ok(TrainOutcome {
        report: TrainReport {
            schema_version: REPORT_SCHEMA_VERSION,
            model: model_config.clone(),
            train: train_config.clone(),
            train_loss,
            val_accuracy,
            best_epoch,
            best_val_accuracy,
            test_accuracy,
            epochs_run,
            band_checks,
            trace,
            timing: Timing {
                wall_time_secs: start.elapsed().as_secs_f64(),
            },
        },
        params: best_params,
    })
}

/// Mean and sample standard deviation over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub schema_version: u32,
    pub seeds: Vec<u64>,
    pub test_accuracy: Vec<f64>,
    pub test_accuracy_mean: f64,
    pub test_accuracy_std: f64,
    pub best_epoch_mean: f64,
    /// E(X⁽ᴷ⁾)/E(X⁽⁰⁾) of each best checkpoint.
    pub final_energy_ratio: Vec<f64>,
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl Aggregate {
    pub fn from_reports(reports: &[TrainReport]) -> Self {
        let acc: Vec<f64> = reports.iter().map(|r| r.test_accuracy).collect();
        let (mean, std) = mean_std(&acc);
        let epochs: Vec<f64> = reports.iter().map(|r| r.best_epoch as f64).collect();
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            seeds: reports.iter().map(|r| r.model.seed).collect(),
            test_accuracy: acc,
            test_accuracy_mean: mean,
            test_accuracy_std: std,
            best_epoch_mean: mean_std(&epochs).0,
            final_energy_ratio: reports.iter().map(|r| r.trace.final_ratio()).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::generate_synthetic;
    use crate::model::Variant;
    use crate::operators::build_operators;
    use ndarray::array;

    #[test]
    fn uniform_logits_cost_log_c() {
        let logits = Array2::zeros((4, 5));
        let (l, g) = task_loss(logits.view(), &[0, 1, 2, 3], &[true, true, false, true]).unwrap();
        assert!((l - 5f64.ln()).abs() < 1e-15);
        assert_eq!(g.row(2).sum(), 0.0);
        // Softmax minus one-hot sums to zero on each masked row.
        assert!(g.row(0).sum().abs() < 1e-15);
    }

    #[test]
    fn confident_logits_cost_nothing() {
        let mut prev = f64::INFINITY;
        for margin in [1.0, 5.0, 10.0, 20.0] {
            let logits = array![[margin, 0.0, 0.0]];
            let (l, _) = task_loss(logits.view(), &[0], &[true]).unwrap();
            assert!(l < prev && l > 0.0);
            prev = l;
        }
        assert!(prev < 1e-8);
        // Max-subtraction keeps huge margins finite.
        let (l, g) = task_loss(array![[1e4, 0.0, -1e4]].view(), &[0], &[true]).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn logit_gradient_matches_differences() {
        let logits = array![[0.3, -1.2, 2.0], [1.5, 0.1, -0.4], [0.0, 0.7, 0.2]];
        let labels = [2, 0, 1];
        let mask = [true, false, true];
        let (_, g) = task_loss(logits.view(), &labels, &mask).unwrap();
        let h = 1e-6;
        for i in 0..3 {
            for j in 0..3 {
                let mut p = logits.clone();
                p[[i, j]] += h;
                let mut m = logits.clone();
                m[[i, j]] -= h;
                let fd = (task_loss(p.view(), &labels, &mask).unwrap().0
                    - task_loss(m.view(), &labels, &mask).unwrap().0)
                    / (2.0 * h);
                let err = (fd - g[[i, j]]).abs() / fd.abs().max(g[[i, j]].abs()).max(1e-4);
                assert!(err <= 1e-7, "({i},{j}): {fd} vs {}", g[[i, j]]);
            }
        }
    }

    #[test]
    fn empty_masks_are_config_errors() {
        let logits = Array2::zeros((2, 2));
        assert!(matches!(task_loss(logits.view(), &[0, 1], &[false, false]), Err(Error::Config(_))));
        assert!(matches!(accuracy(logits.view(), &[0, 1], &[false, false]), Err(Error::Config(_))));
    }

    #[test]
    fn anchors_cost_nothing() {
        let ws = vec![Array2::<f64>::eye(3) * 0.5, Array2::eye(3), Array2::eye(3)];
        let (l, g) = ortho_reg_loss(&ws, 0.25, 20.0);
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|m| m.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn single_entry_perturbation_costs_gamma_eps() {
        let mut w = Array2::<f64>::eye(4) * 0.8f64.sqrt();
        w[[1, 2]] += -0.03;
        let (l, g) = ortho_reg_loss(&[w], 0.8, 20.0);
        let g = &g[0];
        assert!((l - 20.0 * 0.03).abs() < 1e-12);
        assert!((g[[1, 2]] + 20.0).abs() < 1e-12);
        assert_eq!(g.iter().filter(|&&v| v != 0.0).count(), 1);
    }

    #[test]
    fn glorot_anchor_is_zero() {
        let cfg = ModelConfig {
            weight_init: crate::model::WeightInit::Glorot,
            gamma: 2.0,
            ..Default::default()
        };
        let w = array![[3.0, 0.0], [0.0, 4.0]];
        assert_eq!(trunk_penalty(&[w], &cfg).0, 10.0);
    }

    fn tiny_params() -> ModelParams {
        let cfg = ModelConfig { k_layers: 1, d_hidden: 2, ..Default::default() };
        ModelParams::init(&cfg, 3, 2).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = tiny_params();
        let before = p.clone();
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &before.zeros_like(), &mut s, 0.1, WeightDecay { rate: 0.0, trunk: false }).unwrap();
        assert_eq!(p, before);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn first_step_closed_form() {
        for g in [3.0, -0.25, 1e-7] {
            let mut p = tiny_params();
            let before = p.clone();
            let mut grads = p.zeros_like();
            grads.b_out[0] = g;
            let mut s = AdamState::new(&p);
            let lr = 0.01;
            adam_step(&mut p, &grads, &mut s, lr, WeightDecay { rate: 0.0, trunk: false }).unwrap();
            let expected = -lr * g / (g.abs() + ADAM_EPS / (1.0 - ADAM_BETA2).sqrt());
            let delta = p.b_out[0] - before.b_out[0];
            assert!((delta - expected).abs() <= 1e-15 * lr, "{delta} vs {expected}");
        }
    }

    #[test]
    fn decay_skips_biases_and_trunk() {
        let mut p = tiny_params();
        p.b_in.fill(1.0);
        let before = p.clone();
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &before.zeros_like(), &mut s, 0.1, WeightDecay { rate: 0.5, trunk: false }).unwrap();
        assert_eq!(p.b_in, before.b_in);
        assert_eq!(p.w_layers, before.w_layers);
        assert_ne!(p.w_in, before.w_in);
        let mut q = before.clone();
        let mut s = AdamState::new(&q);
        adam_step(&mut q, &before.zeros_like(), &mut s, 0.1, WeightDecay { rate: 0.5, trunk: true }).unwrap();
        assert_ne!(q.w_layers, before.w_layers);
    }

    #[test]
    fn accuracy_tie_break_picks_class_zero() {
        let logits = Array2::zeros((4, 3));
        let acc = accuracy(logits.view(), &[0, 1, 0, 2], &[true; 4]).unwrap();
        assert_eq!(acc, 0.5);
        let logits = array![[0.0, 1.0], [2.0, 1.0]];
        assert_eq!(accuracy(logits.view(), &[1, 0], &[true, true]).unwrap(), 1.0);
    }

    #[test]
    fn mean_std_uses_sample_deviation() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[7.0]), (7.0, 0.0));
    }

    #[test]
    fn config_invariants() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { lr: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { patience: 2000, ..Default::default() }.validate().is_err());
    }

    fn small_run(variant: Variant, seed: u64) -> TrainOutcome {
        let g = generate_synthetic(80, 0.06, 8, 3, 4).unwrap();
        let ops = build_operators(&g).unwrap();
        let mc = ModelConfig {
            variant,
            k_layers: 3,
            d_hidden: 8,
            dropout: 0.3,
            seed,
            ..Default::default()
        };
        let tc = TrainConfig { max_epochs: 60, patience: 20, seed, lr: 0.01, ..Default::default() };
        train(&g, &ops, &mc, &tc, Err("skipped".into())).unwrap()
    }

    #[test]
    fn training_is_deterministic() {
        let a = small_run(Variant::Egnn, 3);
        let b = small_run(Variant::Egnn, 3);
        assert_eq!(a.report.without_timing(), b.report.without_timing());
        assert_eq!(a.params, b.params);
        let c = small_run(Variant::Egnn, 4);
        assert_ne!(a.report.train_loss, c.report.train_loss);
    }

    #[test]
    fn reported_test_accuracy_is_at_best_validation() {
        let out = small_run(Variant::Gcn, 1);
        let r = &out.report;
        let max = r.val_accuracy.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(r.best_val_accuracy, max);
        assert_eq!(r.best_epoch, r.val_accuracy.iter().position(|&a| a == max).unwrap());
        let g = generate_synthetic(80, 0.06, 8, 3, 4).unwrap();
        let ops = build_operators(&g).unwrap();
        let test = evaluate(&out.params, &g, &ops, &r.model, &g.mask(Split::Test)).unwrap();
        assert_eq!(test, r.test_accuracy);
        assert_eq!(r.band_checks.len(), r.epochs_run.div_ceil(10));
    }

    #[test]
    fn report_json_round_trips() {
        let r = small_run(Variant::Sgc, 0).report;
        assert_eq!(TrainReport::from_json(&r.to_json()).unwrap(), r);
        let mut bumped: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        bumped["schema_version"] = 99.into();
        assert!(TrainReport::from_json(&bumped.to_string()).is_err());
    }

    #[test]
    fn sgc_trunk_stays_frozen() {
        let out = small_run(Variant::Sgc, 2);
        assert!(out.params.w_layers.iter().all(|w| *w == Array2::<f64>::eye(8)));
    }
}
