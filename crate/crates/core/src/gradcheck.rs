//! Central finite-difference check of the hand-derived gradients.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{generate_synthetic, Graph, Split};
use crate::model::{forward, Activation, ModelConfig, ModelParams, Variant};
use crate::operators::{build_operators, PropagationOperators};
use crate::train::objective;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckOptions {
    pub variant: Variant,
    pub k_layers: usize,
    pub activation: Activation,
    pub n: usize,
    pub d_in: usize,
    pub d_hidden: usize,
    pub n_classes: usize,
    /// Coordinates to check; all trainable ones when there are fewer.
    pub samples: usize,
    pub step: f64,
    pub tolerance: f64,
    /// Trunk penalty weight; the point is moved off the anchors so the
    /// penalty is differentiable.
    pub gamma: f64,
    pub seed: u64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            variant: Variant::Egnn,
            k_layers: 4,
            activation: Activation::Srelu,
            n: 20,
            d_in: 6,
            d_hidden: 8,
            n_classes: 3,
            samples: 400,
            step: 1e-5,
            tolerance: 1e-5,
            gamma: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinateCheck {
    pub index: usize,
    pub name: String,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub checked: usize,
    /// Coordinates whose ±step moved an activation across its kink.
    pub skipped: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub worst: Option<CoordinateCheck>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_rel_err <= self.tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4)
}

/// Which side of each kink every activation input sits on.
fn activation_pattern(
    params: &ModelParams,
    graph: &Graph,
    ops: &PropagationOperators,
    config: &ModelConfig,
) -> Result<Vec<bool>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (_, tape) = forward(graph, ops, params, config, false, &mut rng)?;
    let mut pattern = Vec::new();
    if config.input_activation() != Activation::Linear {
        pattern.extend(tape.transform_pre.iter().map(|&v| v >= 0.0));
    }
    for (k, pre) in tape.pre.iter().enumerate() {
        match config.trunk_activation() {
            Activation::Srelu => pattern.extend(pre.iter().map(|&v| v >= params.b_shifts[k])),
            Activation::Relu => pattern.extend(pre.iter().map(|&v| v >= 0.0)),
            Activation::Linear => {}
        }
    }
    Ok(pattern)
}

/// Scalar indices that the optimizer updates.
fn trainable(params: &ModelParams, config: &ModelConfig) -> Vec<usize> {
    let trunk_start = params.w_in.len() + params.b_in.len();
    let trunk_end = trunk_start + params.w_layers.iter().map(|w| w.len()).sum::<usize>();
    let shifts_end = trunk_end + params.b_shifts.len();
    (0..params.n_scalars())
        .filter(|&i| {
            let frozen_trunk = (trunk_start..trunk_end).contains(&i) && !config.trunk_trainable();
            let frozen_shift = (trunk_end..shifts_end).contains(&i) && !config.shifts_trainable();
            !(frozen_trunk || frozen_shift)
        })
        .collect()
}

/// Synthetic problem, model config and a random point off the anchors.
pub fn setup(options: &GradcheckOptions) -> Result<(Graph, PropagationOperators, ModelConfig, ModelParams)> {
    let graph = generate_synthetic(options.n, 0.3, options.d_in, options.n_classes, options.seed)?;
    let ops = build_operators(&graph)?;
    let (c_min, alpha, beta) = match options.variant {
        Variant::Egnn => (0.2, 0.1, 0.1),
        _ => (0.0, 0.0, 0.0),
    };
    let config = ModelConfig {
        variant: options.variant,
        k_layers: options.k_layers,
        d_hidden: options.d_hidden,
        c_min,
        alpha,
        beta,
        gamma: options.gamma,
        b_init: 0.0,
        dropout: 0.0,
        activation: options.activation,
        seed: options.seed,
        ..Default::default()
    };
    let mut params = ModelParams::init(&config, graph.d_in(), graph.n_classes())?;
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed ^ 0x9e37_79b9);
    for t in params.tensors_mut() {
        for v in t.iter_mut() {
            *v += 0.1 * rng.sample::<f64, _>(StandardNormal);
        }
    }
    if !config.trunk_trainable() {
        params.w_layers.iter_mut().for_each(|w| *w = ndarray::Array2::eye(config.d_hidden));
    }
    if config.shifts_trainable() {
        params.b_shifts.iter_mut().for_each(|b| *b = rng.gen_range(-0.3..0.1));
    } else {
        params.b_shifts.fill(0.0);
    }
    Ok((graph, ops, config, params))
}

/// Compare analytic gradients of task loss + trunk penalty with central
/// differences. `corrupt` edits the analytic gradients first (negative control).
pub fn gradcheck(options: &GradcheckOptions, corrupt: Option<&dyn Fn(&mut ModelParams)>) -> Result<GradcheckReport> {
    if !(options.step > 0.0) {
        return Err(Error::Config("finite-difference step must be positive".into()));
    }
    let (graph, ops, config, params) = setup(options)?;
    let mask = graph.mask(Split::Train);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (_, mut grads, _) = objective(&params, &graph, &ops, &config, &mask, false, &mut rng)?;
    if let Some(f) = corrupt {
        f(&mut grads);
    }
    let analytic = grads.scalars();
    let base_pattern = activation_pattern(&params, &graph, &ops, &config)?;

    let candidates = trainable(&params, &config);
    let mut pick = ChaCha8Rng::seed_from_u64(options.seed);
    let chosen: Vec<usize> = if candidates.len() <= options.samples {
        candidates
    } else {
        let mut idx: Vec<usize> =
            sample(&mut pick, candidates.len(), options.samples).into_iter().map(|i| candidates[i]).collect();
        idx.sort_unstable();
        idx
    };

    let loss_at = |p: &ModelParams| -> Result<(f64, bool)> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (parts, _, _) = objective(p, &graph, &ops, &config, &mask, false, &mut rng)?;
        Ok((parts.total(), activation_pattern(p, &graph, &ops, &config)? == base_pattern))
    };

    let mut report = GradcheckReport {
        checked: 0,
        skipped: 0,
        max_rel_err: 0.0,
        tolerance: options.tolerance,
        worst: None,
    };
    for idx in chosen {
        let mut plus = params.clone();
        *plus.scalar_mut(idx) += options.step;
        let mut minus = params.clone();
        *minus.scalar_mut(idx) -= options.step;
        let (lp, same_p) = loss_at(&plus)?;
        let (lm, same_m) = loss_at(&minus)?;
        if !(same_p && same_m) {
            report.skipped += 1;
            continue;
        }
        let numeric = (lp - lm) / (2.0 * options.step);
        let err = relative_error(analytic[idx], numeric);
        report.checked += 1;
        if err > report.max_rel_err || report.worst.is_none() {
            report.max_rel_err = report.max_rel_err.max(err);
            report.worst = Some(CoordinateCheck {
                index: idx,
                name: params.scalar_name(idx),
                analytic: analytic[idx],
                numeric,
                rel_err: err,
            });
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn egnn_gradients_match() {
        let r = gradcheck(&GradcheckOptions::default(), None).unwrap();
        assert!(r.passed(), "{r:?}");
        assert!(r.checked >= 200, "{r:?}");
    }

    #[test]
    fn baseline_variants_match() {
        for (variant, activation) in [(Variant::Gcn, Activation::Relu), (Variant::Sgc, Activation::Linear)] {
            let o = GradcheckOptions { variant, activation, k_layers: 3, ..Default::default() };
            let r = gradcheck(&o, None).unwrap();
            assert!(r.passed(), "{variant:?}: {r:?}");
        }
    }

    #[test]
    fn zero_layers_check_head_and_input() {
        let r = gradcheck(&GradcheckOptions { k_layers: 0, ..Default::default() }, None).unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let hook = |g: &mut ModelParams| g.w_in *= 1.5;
        let r = gradcheck(&GradcheckOptions::default(), Some(&hook)).unwrap();
        assert!(!r.passed());
        assert!(r.worst.unwrap().name.starts_with("w_in"));
    }
}
