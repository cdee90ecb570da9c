//! Network definition: configuration, parameters, layers, and the
//! hand-derived reverse pass.

mod layers;
mod pass;

pub use layers::{
    classifier_head, egnn_layer, gcn_layer, input_transform, orthogonal_init, srelu, srelu_backward, Activation,
    NEG_INF_SHIFT,
};
pub use pass::{backward, forward, ForwardTape, InputDropout};

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Gcn,
    Sgc,
    Egnn,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gcn" => Ok(Variant::Gcn),
            "sgc" => Ok(Variant::Sgc),
            "egnn" => Ok(Variant::Egnn),
            _ => Err(Error::Config(format!("unknown variant '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightInit {
    /// √c_max·I for the first trunk layer, I afterwards.
    Orthogonal,
    Glorot,
}

impl std::str::FromStr for WeightInit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "orthogonal" => Ok(WeightInit::Orthogonal),
            "glorot" => Ok(WeightInit::Glorot),
            _ => Err(Error::Config(format!("unknown weight init '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub k_layers: usize,
    pub d_hidden: usize,
    pub c_min: f64,
    pub c_max: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub b_init: f64,
    pub dropout: f64,
    pub activation: Activation,
    pub weight_init: WeightInit,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Egnn,
            k_layers: 4,
            d_hidden: 64,
            c_min: 0.2,
            c_max: 1.0,
            alpha: 0.1,
            beta: 0.1,
            gamma: 20.0,
            b_init: -10.0,
            dropout: 0.0,
            activation: Activation::Srelu,
            weight_init: WeightInit::Orthogonal,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.d_hidden == 0 {
            return bad("d_hidden must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.gamma >= 0.0) {
            return bad(format!("gamma {} must be non-negative", self.gamma));
        }
        if !self.b_init.is_finite() {
            return bad("b_init must be finite; use -1e30 for an identity shift".into());
        }
        if !(self.c_max > 0.0 && self.c_max <= 1.0) {
            return bad(format!("c_max {} outside (0, 1]", self.c_max));
        }
        if self.variant == Variant::Egnn {
            // c_min = 0 is accepted so the no-residual ablation can run.
            if !(self.c_min >= 0.0 && self.c_min < 1.0) {
                return bad(format!("c_min {} outside [0, 1)", self.c_min));
            }
            if !(self.alpha >= 0.0 && self.beta >= 0.0) {
                return bad("alpha and beta must be non-negative".into());
            }
            if (self.alpha + self.beta - self.c_min).abs() > 1e-12 {
                return bad(format!(
                    "alpha + beta = {} must equal c_min = {}",
                    self.alpha + self.beta,
                    self.c_min
                ));
            }
        }
        Ok(())
    }

    /// Activation used by the propagation layers.
    pub fn trunk_activation(&self) -> Activation {
        match self.variant {
            Variant::Sgc => Activation::Linear,
            _ => self.activation,
        }
    }

    /// The input transform rectifies unless the trunk is linear.
    pub fn input_activation(&self) -> Activation {
        match self.trunk_activation() {
            Activation::Linear => Activation::Linear,
            _ => Activation::Relu,
        }
    }

    pub fn trunk_trainable(&self) -> bool {
        self.variant != Variant::Sgc
    }

    pub fn shifts_trainable(&self) -> bool {
        self.trunk_activation() == Activation::Srelu
    }

    /// Coefficients (p, a, b) of S = p·P̃X⁽ᵏ⁻¹⁾ + a·X⁽ᵏ⁻¹⁾ + b·X⁽⁰⁾.
    pub fn mixing(&self) -> (f64, f64, f64) {
        match self.variant {
            Variant::Egnn => (1.0 - self.c_min, self.alpha, self.beta),
            Variant::Gcn | Variant::Sgc => (1.0, 0.0, 0.0),
        }
    }

    /// Anchor Aₖ of the trunk penalty γ‖W⁽ᵏ⁾ − Aₖ‖_F as a multiple of I.
    pub fn anchor_scale(&self, layer: usize) -> f64 {
        match self.weight_init {
            WeightInit::Orthogonal if layer == 0 => self.c_max.sqrt(),
            WeightInit::Orthogonal => 1.0,
            WeightInit::Glorot => 0.0,
        }
    }
}

/// Trainable tensors. The same struct carries gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub w_in: Array2<f64>,
    pub b_in: Array1<f64>,
    pub w_layers: Vec<Array2<f64>>,
    pub b_shifts: Vec<f64>,
    pub w_out: Array2<f64>,
    pub b_out: Array1<f64>,
}

fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-a..a))
}

impl ModelParams {
    pub fn init(config: &ModelConfig, d_in: usize, n_classes: usize) -> Result<Self> {
        config.validate()?;
        let d = config.d_hidden;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let w_in = glorot(&mut rng, d_in, d);
        let w_out = glorot(&mut rng, d, n_classes);
        let w_layers = (0..config.k_layers)
            .map(|k| match (config.variant, config.weight_init) {
                (Variant::Sgc, _) => Array2::eye(d),
                (_, WeightInit::Orthogonal) => orthogonal_init(k + 1, config.c_max, d),
                (_, WeightInit::Glorot) => glorot(&mut rng, d, d),
            })
            .collect();
        let shift = match config.trunk_activation() {
            Activation::Srelu => config.b_init,
            _ => 0.0,
        };
        Ok(Self {
            w_in,
            b_in: Array1::zeros(d),
            w_layers,
            b_shifts: vec![shift; config.k_layers],
            w_out,
            b_out: Array1::zeros(n_classes),
        })
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        Self {
            w_in: Array2::zeros(self.w_in.raw_dim()),
            b_in: Array1::zeros(self.b_in.len()),
            w_layers: self.w_layers.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            b_shifts: vec![0.0; self.b_shifts.len()],
            w_out: Array2::zeros(self.w_out.raw_dim()),
            b_out: Array1::zeros(self.b_out.len()),
        }
    }

    pub fn k_layers(&self) -> usize {
        self.w_layers.len()
    }

    pub fn d_hidden(&self) -> usize {
        self.w_in.ncols()
    }

    pub fn n_scalars(&self) -> usize {
        self.w_in.len()
            + self.b_in.len()
            + self.w_layers.iter().map(|w| w.len()).sum::<usize>()
            + self.b_shifts.len()
            + self.w_out.len()
            + self.b_out.len()
    }

    /// Flat view over every scalar, in a fixed order.
    pub fn scalars(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_scalars());
        out.extend(self.w_in.iter());
        out.extend(self.b_in.iter());
        for w in &self.w_layers {
            out.extend(w.iter());
        }
        out.extend(self.b_shifts.iter());
        out.extend(self.w_out.iter());
        out.extend(self.b_out.iter());
        out
    }

    /// Mutable access to scalar `idx` in the order of [`Self::scalars`].
    #[allow(unused_assignments)]
    pub fn scalar_mut(&mut self, mut idx: usize) -> &mut f64 {
        macro_rules! take {
            ($arr:expr) => {
                if idx < $arr.len() {
                    return $arr.iter_mut().nth(idx).unwrap();
                }
                idx -= $arr.len();
            };
        }
        take!(self.w_in);
        take!(self.b_in);
        for w in self.w_layers.iter_mut() {
            take!(w);
        }
        take!(self.b_shifts);
        take!(self.w_out);
        take!(self.b_out);
        panic!("scalar index out of range")
    }

    /// Human-readable name of scalar `idx`.
    pub fn scalar_name(&self, mut idx: usize) -> String {
        let mat = |name: &str, w: &Array2<f64>, i: usize| format!("{name}[{},{}]", i / w.ncols(), i % w.ncols());
        if idx < self.w_in.len() {
            return mat("w_in", &self.w_in, idx);
        }
        idx -= self.w_in.len();
        if idx < self.b_in.len() {
            return format!("b_in[{idx}]");
        }
        idx -= self.b_in.len();
        for (k, w) in self.w_layers.iter().enumerate() {
            if idx < w.len() {
                return mat(&format!("w_layers.{k}"), w, idx);
            }
            idx -= w.len();
        }
        if idx < self.b_shifts.len() {
            return format!("b_shifts[{idx}]");
        }
        idx -= self.b_shifts.len();
        if idx < self.w_out.len() {
            return mat("w_out", &self.w_out, idx);
        }
        idx -= self.w_out.len();
        format!("b_out[{idx}]")
    }

    /// Contiguous storage of every tensor, in the order of [`Self::scalars`].
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = vec![
            self.w_in.as_slice_memory_order().expect("contiguous"),
            self.b_in.as_slice_memory_order().expect("contiguous"),
        ];
        out.extend(self.w_layers.iter().map(|w| w.as_slice_memory_order().expect("contiguous")));
        out.push(&self.b_shifts);
        out.push(self.w_out.as_slice_memory_order().expect("contiguous"));
        out.push(self.b_out.as_slice_memory_order().expect("contiguous"));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = vec![
            self.w_in.as_slice_memory_order_mut().expect("contiguous"),
            self.b_in.as_slice_memory_order_mut().expect("contiguous"),
        ];
        out.extend(self.w_layers.iter_mut().map(|w| w.as_slice_memory_order_mut().expect("contiguous")));
        out.push(&mut self.b_shifts);
        out.push(self.w_out.as_slice_memory_order_mut().expect("contiguous"));
        out.push(self.b_out.as_slice_memory_order_mut().expect("contiguous"));
        out
    }

    pub fn all_finite(&self) -> bool {
        self.scalars().iter().all(|v| v.is_finite())
    }

    /// Check shapes against a config and graph dimensions.
    pub fn check_shapes(&self, config: &ModelConfig, d_in: usize, n_classes: usize) -> Result<()> {
        let d = config.d_hidden;
        let ok = self.w_in.dim() == (d_in, d)
            && self.b_in.len() == d
            && self.w_layers.len() == config.k_layers
            && self.w_layers.iter().all(|w| w.dim() == (d, d))
            && self.b_shifts.len() == config.k_layers
            && self.w_out.dim() == (d, n_classes)
            && self.b_out.len() == n_classes;
        if ok {
            Ok(())
        } else {
            Err(Error::Contract(format!(
                "parameters do not match config (K={}, d_hidden={d}) on d_in={d_in}, C={n_classes}",
                config.k_layers
            )))
        }
    }
}
