//! Per-layer energy traces with band and bound checks, CSV export, and the
//! randomized checks of the energy bounds.

mod verify;

pub use verify::{verify_lemmas, SuiteResult, VerificationReport, VerifyOptions, WorstCase};

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::energy::dirichlet_trace;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::model::{forward, ForwardTape, ModelConfig, ModelParams};
use crate::operators::PropagationOperators;
use crate::spectral::{lemma1_bounds, prop1_limits, weight_spectrum, SpectralSummary};

/// Relative energy below which a layer counts as collapsed.
pub const COLLAPSE_RATIO: f64 = 1e-3;

pub const CSV_HEADER: &str = "layer,energy_pre,energy_post,lower_limit,upper_limit,lemma1_lower,lemma1_upper,in_band";

/// Which embedding is compared against the band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandSource {
    #[default]
    Post,
    Pre,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub layer: usize,
    pub energy_pre: f64,
    pub energy_post: f64,
    pub lower_limit: Option<f64>,
    pub upper_limit: Option<f64>,
    pub lemma1_lower: Option<f64>,
    pub lemma1_upper: Option<f64>,
    pub in_band: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyTrace {
    pub rows: Vec<TraceRow>,
    pub band_source: BandSource,
    /// Absolute band tolerance, 1e-8·E(X⁽⁰⁾).
    pub epsilon: f64,
    /// Set when the spectral summary could not be computed.
    pub bounds_omitted: Option<String>,
}

impl EnergyTrace {
    pub fn e0(&self) -> f64 {
        self.rows[0].energy_post
    }

    pub fn violations(&self) -> Vec<usize> {
        self.rows.iter().filter(|r| !r.in_band).map(|r| r.layer).collect()
    }

    pub fn final_energy(&self) -> f64 {
        self.rows.last().expect("trace has layer 0").energy_post
    }

    /// E(X⁽ᴷ⁾)/E(X⁽⁰⁾); 0 when E(X⁽⁰⁾) is 0.
    pub fn final_ratio(&self) -> f64 {
        let e0 = self.e0();
        if e0 > 0.0 {
            self.final_energy() / e0
        } else {
            0.0
        }
    }

    pub fn collapsed(&self) -> bool {
        self.final_ratio() < COLLAPSE_RATIO
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.rows.len() + 1));
        out.push_str(CSV_HEADER);
        out.push('\n');
        let opt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
        for r in &self.rows {
            writeln!(
                out,
                "{},{:?},{:?},{},{},{},{},{}",
                r.layer,
                r.energy_pre,
                r.energy_post,
                opt(r.lower_limit),
                opt(r.upper_limit),
                opt(r.lemma1_lower),
                opt(r.lemma1_upper),
                r.in_band
            )
            .expect("write to string");
        }
        out
    }

    pub fn export_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Parse CSV produced by [`EnergyTrace::to_csv`].
pub fn parse_csv(text: &str) -> Result<Vec<TraceRow>> {
    let perr = |line: usize, msg: String| Error::Parse {
        file: "trace csv".into(),
        line,
        msg,
    };
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        _ => return Err(perr(1, "missing or unexpected header".into())),
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(perr(lineno, format!("expected 8 fields, found {}", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| perr(lineno, format!("bad number '{s}': {e}")));
        let opt = |s: &str| if s.is_empty() { Ok(None) } else { num(s).map(Some) };
        rows.push(TraceRow {
            layer: f[0].parse().map_err(|e| perr(lineno, format!("bad layer '{}': {e}", f[0])))?,
            energy_pre: num(f[1])?,
            energy_post: num(f[2])?,
            lower_limit: opt(f[3])?,
            upper_limit: opt(f[4])?,
            lemma1_lower: opt(f[5])?,
            lemma1_upper: opt(f[6])?,
            in_band: match f[7] {
                "true" => true,
                "false" => false,
                other => return Err(perr(lineno, format!("bad flag '{other}'"))),
            },
        });
    }
    Ok(rows)
}

/// Build a trace from a recorded forward pass.
pub fn trace_from_tape(
    tape: &ForwardTape,
    params: &ModelParams,
    ops: &PropagationOperators,
    config: &ModelConfig,
    spectral: std::result::Result<&SpectralSummary, String>,
    band_source: BandSource,
) -> Result<EnergyTrace> {
    let k_layers = tape.k_layers();
    let delta = &ops.delta_tilde;
    let mut post = Vec::with_capacity(k_layers + 1);
    let mut pre = Vec::with_capacity(k_layers + 1);
    for k in 0..=k_layers {
        post.push(dirichlet_trace(tape.embedding(k), delta)?);
        pre.push(dirichlet_trace(tape.pre_embedding(k), delta)?);
    }
    let e0 = post[0];
    let epsilon = 1e-8 * e0;
    let mut rows = Vec::with_capacity(k_layers + 1);
    rows.push(TraceRow {
        layer: 0,
        energy_pre: pre[0],
        energy_post: e0,
        lower_limit: None,
        upper_limit: None,
        lemma1_lower: None,
        lemma1_upper: None,
        in_band: true,
    });
    for k in 1..=k_layers {
        let (lower, upper) = prop1_limits(e0, post[k - 1], config.c_min, config.c_max);
        let e = match band_source {
            BandSource::Post => post[k],
            BandSource::Pre => pre[k],
        };
        let (l1_lower, l1_upper) = match spectral {
            Ok(spec) => {
                let (a, b) = lemma1_bounds(post[k - 1], weight_spectrum(params.w_layers[k - 1].view())?, *spec);
                (Some(a), Some(b))
            }
            Err(_) => (None, None),
        };
        rows.push(TraceRow {
            layer: k,
            energy_pre: pre[k],
            energy_post: post[k],
            lower_limit: Some(lower),
            upper_limit: Some(upper),
            lemma1_lower: l1_lower,
            lemma1_upper: l1_upper,
            in_band: lower - epsilon <= e && e <= upper + epsilon,
        });
    }
    Ok(EnergyTrace {
        rows,
        band_source,
        epsilon,
        bounds_omitted: spectral.err(),
    })
}

/// Eval-mode forward pass followed by per-layer energies. `spectral` is the
/// summary of Δ̃ when available, or the reason it is not.
pub fn record_trace(
    params: &ModelParams,
    graph: &Graph,
    ops: &PropagationOperators,
    config: &ModelConfig,
    spectral: std::result::Result<&SpectralSummary, String>,
    band_source: BandSource,
) -> Result<EnergyTrace> {
    // Eval mode draws no random numbers; the generator is a placeholder.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (_, tape) = forward(graph, ops, params, config, false, &mut rng)?;
    trace_from_tape(&tape, params, ops, config, spectral, band_source)
}
