use std::fmt::Write as _;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::energy::dirichlet_trace;
use crate::error::Result;
use crate::graph::{generate_synthetic, Graph};
use crate::model::srelu;
use crate::operators::build_operators;
use crate::spectral::{
    check_preconditions, eigen_decomposition, eigenvalues, lemma1_bounds, relaxed_upper,
    residual_operator_min_abs_eigenvalue, summarize_eigenvalues, weight_spectrum, PreconditionReport,
    DEFAULT_EIGEN_CAP,
};

/// Relative slack on the linear-layer bounds.
const BOUND_SLACK: f64 = 1e-8;
/// Relative slack on the relaxed bound and on rectifier decay.
const RELAXED_SLACK: f64 = 1e-10;
const RELU_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub trials: usize,
    pub seed: u64,
    pub c_min: f64,
    pub c_max: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            trials: 100,
            seed: 0,
            c_min: 0.2,
            c_max: 1.0,
            alpha: 0.1,
            beta: 0.1,
        }
    }
}

/// Parameters that regenerate one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorstCase {
    pub trial: usize,
    pub n: usize,
    pub p: f64,
    pub graph_seed: u64,
    pub d: usize,
    /// Relative excess over the bound; ≤ 0 means the bound held.
    pub violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub name: String,
    pub trials: usize,
    pub passes: usize,
    pub tolerance: f64,
    pub max_violation: f64,
    pub worst: Option<WorstCase>,
}

impl SuiteResult {
    fn new(name: &str, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            trials: 0,
            passes: 0,
            tolerance,
            max_violation: f64::NEG_INFINITY,
            worst: None,
        }
    }

    fn record(&mut self, violation: f64, case: impl FnOnce() -> WorstCase) {
        self.trials += 1;
        if violation <= self.tolerance {
            self.passes += 1;
        }
        if violation > self.max_violation {
            self.max_violation = violation;
            self.worst = Some(WorstCase { violation, ..case() });
        }
    }

    pub fn passed(&self) -> bool {
        self.passes == self.trials
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub options: VerifyOptions,
    pub suites: Vec<SuiteResult>,
    /// λ₀ of the graph the preconditions were evaluated on.
    pub lambda0: f64,
    pub preconditions: PreconditionReport,
    /// min |λ| of (1−c_min)P̃ + αI on the same graph.
    pub residual_min_abs_eigenvalue: f64,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(SuiteResult::passed) && self.preconditions.all_pass()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for suite in &self.suites {
            let _ = writeln!(
                s,
                "{:<22} {:>5}/{:<5} max relative excess {:+.3e} (tolerance {:.0e}) {}",
                suite.name,
                suite.passes,
                suite.trials,
                suite.max_violation,
                suite.tolerance,
                if suite.passed() { "PASS" } else { "FAIL" }
            );
            if !suite.passed() {
                if let Some(w) = &suite.worst {
                    let _ = writeln!(
                        s,
                        "  worst: trial {} n={} p={} graph_seed={} d={} excess={:e}",
                        w.trial, w.n, w.p, w.graph_seed, w.d, w.violation
                    );
                }
            }
        }
        let o = &self.options;
        let lower = &self.preconditions.lower_limit;
        let upper = &self.preconditions.upper_limit;
        let _ = writeln!(
            s,
            "lower-limit precondition c_max >= c_min/(2c_min-1)^2: {} >= {} -> {}",
            lower.lhs,
            fmt_rhs(lower.rhs),
            lower.verdict.as_str()
        );
        let _ = writeln!(
            s,
            "upper-limit precondition sqrt(c_max) >= beta/((1-c_min)lambda0+beta): {} >= {} -> {}",
            upper.lhs,
            fmt_rhs(upper.rhs),
            upper.verdict.as_str()
        );
        let _ = writeln!(
            s,
            "c_min={} c_max={} alpha={} beta={} lambda0={} min|eig((1-c_min)P+alpha I)|={:e}",
            o.c_min, o.c_max, o.alpha, o.beta, self.lambda0, self.residual_min_abs_eigenvalue
        );
        let _ = writeln!(s, "overall: {}", if self.passed() { "PASS" } else { "FAIL" });
        s
    }
}

fn fmt_rhs(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".into(), |x| x.to_string())
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

/// Random signed permutation: orthogonal, so s_min = s_max = 1.
fn signed_permutation(rng: &mut ChaCha8Rng, d: usize) -> Array2<f64> {
    let mut perm: Vec<usize> = (0..d).collect();
    perm.shuffle(rng);
    let mut w = Array2::zeros((d, d));
    for (i, &j) in perm.iter().enumerate() {
        w[[i, j]] = if rng.gen::<bool>() { 1.0 } else { -1.0 };
    }
    w
}

/// Energies below this fraction of the energy scale of a trial are roundoff.
const ROUNDOFF_FLOOR: f64 = 1e-12;

/// Relative excess of `value` over `bound`. Both sides below the roundoff
/// floor of `scale` compare as equal-sized, so a bound of exactly 0 (an
/// eigenvalue at 1) is not failed by a residue of 1e-30.
fn excess_above(value: f64, bound: f64, scale: f64) -> f64 {
    let denom = bound.abs().max(value.abs()).max(ROUNDOFF_FLOOR * scale.abs()).max(f64::MIN_POSITIVE);
    (value - bound) / denom
}

struct TrialGraph {
    graph: Graph,
    n: usize,
    p: f64,
    seed: u64,
}

fn random_graph(rng: &mut ChaCha8Rng) -> Result<TrialGraph> {
    let n = rng.gen_range(10..=200);
    let p = rng.gen_range(0.02..0.6);
    let seed = rng.gen();
    Ok(TrialGraph {
        graph: generate_synthetic(n, p, 1, 2, seed)?,
        n,
        p,
        seed,
    })
}

/// Randomized checks of the linear-layer energy bracket, its relaxed upper
/// bound, and rectifier energy decay, plus the residual-layer preconditions.
/// `reference` supplies λ₀ for the preconditions; a fixed synthetic graph is
/// used when absent.
pub fn verify_lemmas(options: &VerifyOptions, reference: Option<&Graph>) -> Result<VerificationReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut bracket = SuiteResult::new("linear-layer bracket", BOUND_SLACK);
    let mut relaxed = SuiteResult::new("relaxed upper bound", RELAXED_SLACK);
    let mut relu = SuiteResult::new("relu energy decay", RELU_SLACK);

    for trial in 0..options.trials {
        let tg = random_graph(&mut rng)?;
        let ops = build_operators(&tg.graph)?;
        let d = rng.gen_range(1..=16);
        let case = || WorstCase {
            trial,
            n: tg.n,
            p: tg.p,
            graph_seed: tg.seed,
            d,
            violation: 0.0,
        };
        let (vals, vecs) = eigen_decomposition(&ops.delta_tilde, DEFAULT_EIGEN_CAP)?;
        let summary = match summarize_eigenvalues(&vals) {
            Ok(s) => s,
            Err(_) => continue,
        };

        // Every fifth trial is a near-equality case: orthogonal W and X inside
        // the eigenspace of λ₀ or λ₁, where one side of the bracket is tight.
        let (x, w) = if trial % 5 == 0 {
            let target = if trial % 10 == 0 { summary.lambda0 } else { summary.lambda1 };
            let col = vals.iter().position(|&l| l == target).expect("eigenvalue present");
            let v = vecs.column(col).to_owned().insert_axis(Axis(1));
            (v.dot(&gaussian(&mut rng, 1, d)), signed_permutation(&mut rng, d))
        } else {
            (gaussian(&mut rng, tg.n, d), gaussian(&mut rng, d, d))
        };

        let e = dirichlet_trace(x.view(), &ops.delta_tilde)?;
        let x_next = ops.p_tilde.matmul(x.view())?.dot(&w);
        let e_next = dirichlet_trace(x_next.view(), &ops.delta_tilde)?;
        let ws = weight_spectrum(w.view())?;
        let (lower, upper) = lemma1_bounds(e, ws, summary);
        let scale = relaxed_upper(e, ws);
        let v = excess_above(e_next, upper, scale).max(excess_above(lower, e_next, scale));
        bracket.record(v, case);
        relaxed.record(excess_above(e_next, scale, scale), case);

        let shift = rng.gen_range(-1.0..1.0);
        let xr = gaussian(&mut rng, tg.n, d) + shift;
        let e_raw = dirichlet_trace(xr.view(), &ops.delta_tilde)?;
        let e_act = dirichlet_trace(srelu(xr.view(), 0.0).view(), &ops.delta_tilde)?;
        relu.record(excess_above(e_act, e_raw, e_raw), case);
    }

    let reference_graph;
    let graph = match reference {
        Some(g) => g,
        None => {
            reference_graph = generate_synthetic(100, 0.05, 1, 2, options.seed)?;
            &reference_graph
        }
    };
    let eig = eigenvalues(&build_operators(graph)?.delta_tilde, DEFAULT_EIGEN_CAP)?;
    let lambda0 = summarize_eigenvalues(&eig)?.lambda0;
    let preconditions = check_preconditions(options.c_min, options.c_max, options.beta, lambda0);
    let q_min = residual_operator_min_abs_eigenvalue(&eig, options.c_min, options.alpha);
    if q_min < 1e-8 {
        log::warn!("(1-c_min)P + alpha I is numerically singular (min |eig| = {q_min:e})");
    }
    Ok(VerificationReport {
        options: options.clone(),
        suites: vec![bracket, relaxed, relu],
        lambda0,
        preconditions,
        residual_min_abs_eigenvalue: q_min,
    })
}
