use ndarray::{Array1, Array2, ArrayView2, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

/// Stand-in for a shift of −∞, which turns SReLU into the identity.
pub const NEG_INF_SHIFT: f64 = -1e30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Srelu,
    Relu,
    Linear,
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "srelu" => Ok(Activation::Srelu),
            "relu" => Ok(Activation::Relu),
            "linear" | "identity" => Ok(Activation::Linear),
            _ => Err(Error::Config(format!("unknown activation '{s}'"))),
        }
    }
}

/// Elementwise max(b, x). NaN propagates.
pub fn srelu(x: ArrayView2<'_, f64>, b: f64) -> Array2<f64> {
    x.mapv(|v| if v < b { b } else { v })
}

/// Gradients of srelu w.r.t. x and b. Entries with x ≥ b route to x, the
/// clamped entries (x < b) route to b.
pub fn srelu_backward(pre: ArrayView2<'_, f64>, b: f64, upstream: ArrayView2<'_, f64>) -> (Array2<f64>, f64) {
    let mut grad_b = 0.0;
    let mut grad_x = Array2::zeros(pre.raw_dim());
    Zip::from(&mut grad_x).and(&pre).and(&upstream).for_each(|g, &x, &u| {
        if x < b {
            grad_b += u;
        } else {
            *g = u;
        }
    });
    (grad_x, grad_b)
}

pub(crate) fn activate(pre: ArrayView2<'_, f64>, act: Activation, b: f64) -> Array2<f64> {
    match act {
        Activation::Srelu => srelu(pre, b),
        Activation::Relu => srelu(pre, 0.0),
        Activation::Linear => pre.to_owned(),
    }
}

/// Returns the gradient w.r.t. the pre-activation and w.r.t. the shift.
pub(crate) fn activate_backward(
    pre: ArrayView2<'_, f64>,
    act: Activation,
    b: f64,
    upstream: Array2<f64>,
) -> (Array2<f64>, f64) {
    match act {
        Activation::Srelu => srelu_backward(pre, b, upstream.view()),
        Activation::Relu => (srelu_backward(pre, 0.0, upstream.view()).0, 0.0),
        Activation::Linear => (upstream, 0.0),
    }
}

/// Trunk weight at 1-based layer `k`: √c_max·I for the first, I after.
pub fn orthogonal_init(k: usize, c_max: f64, d: usize) -> Array2<f64> {
    if k <= 1 {
        Array2::eye(d) * c_max.sqrt()
    } else {
        Array2::eye(d)
    }
}

/// S = p·P̃X⁽ᵏ⁻¹⁾ + a·X⁽ᵏ⁻¹⁾ + b·X⁽⁰⁾. Unit and zero coefficients are skipped so
/// the plain propagation path stays bit-identical to P̃X.
pub(crate) fn mix(
    x_prev: ArrayView2<'_, f64>,
    x0: ArrayView2<'_, f64>,
    p_tilde: &CsrMatrix,
    (p, a, b): (f64, f64, f64),
) -> Result<Array2<f64>> {
    let mut s = p_tilde.matmul(x_prev)?;
    if p != 1.0 {
        s *= p;
    }
    if a != 0.0 {
        s.scaled_add(a, &x_prev);
    }
    if b != 0.0 {
        if x0.dim() != x_prev.dim() {
            return Err(Error::Contract("initial embedding shape differs from layer input".into()));
        }
        s.scaled_add(b, &x0);
    }
    Ok(s)
}

fn check_weight(x: ArrayView2<'_, f64>, w: ArrayView2<'_, f64>) -> Result<()> {
    if x.ncols() != w.nrows() {
        return Err(Error::Contract(format!(
            "layer input width {} does not match weight rows {}",
            x.ncols(),
            w.nrows()
        )));
    }
    Ok(())
}

/// σ(P̃X⁽ᵏ⁻¹⁾W).
pub fn gcn_layer(
    x_prev: ArrayView2<'_, f64>,
    p_tilde: &CsrMatrix,
    w: ArrayView2<'_, f64>,
    activation: Activation,
    b: f64,
) -> Result<Array2<f64>> {
    check_weight(x_prev, w)?;
    let s = mix(x_prev, x_prev, p_tilde, (1.0, 0.0, 0.0))?;
    Ok(activate(s.dot(&w).view(), activation, b))
}

/// σ([(1−c_min)P̃X⁽ᵏ⁻¹⁾ + αX⁽ᵏ⁻¹⁾ + βX⁽⁰⁾]W).
#[allow(clippy::too_many_arguments)]
pub fn egnn_layer(
    x_prev: ArrayView2<'_, f64>,
    x0: ArrayView2<'_, f64>,
    p_tilde: &CsrMatrix,
    w: ArrayView2<'_, f64>,
    b: f64,
    c_min: f64,
    alpha: f64,
    beta: f64,
    activation: Activation,
) -> Result<Array2<f64>> {
    check_weight(x_prev, w)?;
    let s = mix(x_prev, x0, p_tilde, (1.0 - c_min, alpha, beta))?;
    Ok(activate(s.dot(&w).view(), activation, b))
}

/// Inverted dropout over the stored entries of a sparse matrix.
pub(crate) fn dropout_sparse(x: &CsrMatrix, rate: f64, rng: &mut impl Rng) -> CsrMatrix {
    let keep = 1.0 / (1.0 - rate);
    let values = x
        .values()
        .iter()
        .map(|&v| if rng.gen::<f64>() < rate { 0.0 } else { v * keep })
        .collect();
    x.with_values(values).expect("pattern unchanged")
}

/// Inverted dropout mask with entries 0 or 1/(1−rate).
pub(crate) fn dropout_mask(rows: usize, cols: usize, rate: f64, rng: &mut impl Rng) -> Array2<f64> {
    let keep = 1.0 / (1.0 - rate);
    Array2::from_shape_simple_fn((rows, cols), || if rng.gen::<f64>() < rate { 0.0 } else { keep })
}

fn add_bias(mut m: Array2<f64>, bias: &Array1<f64>) -> Array2<f64> {
    m += bias;
    m
}

/// Input transform pieces: (dropped input, pre-activation, X⁽⁰⁾).
pub(crate) fn transform_parts(
    x_raw: &CsrMatrix,
    params: &ModelParams,
    config: &ModelConfig,
    training: bool,
    rng: &mut impl Rng,
) -> Result<(Option<CsrMatrix>, Array2<f64>, Array2<f64>)> {
    if x_raw.n_cols() != params.w_in.nrows() {
        return Err(Error::Contract(format!(
            "feature width {} does not match input weight rows {}",
            x_raw.n_cols(),
            params.w_in.nrows()
        )));
    }
    let dropped = (training && config.dropout > 0.0).then(|| dropout_sparse(x_raw, config.dropout, rng));
    let src = dropped.as_ref().unwrap_or(x_raw);
    let pre = add_bias(src.matmul(params.w_in.view())?, &params.b_in);
    let x0 = activate(pre.view(), config.input_activation(), 0.0);
    Ok((dropped, pre, x0))
}

/// X⁽⁰⁾ = σ(dropout(X)·W_in + b_in).
pub fn input_transform(
    x_raw: &CsrMatrix,
    params: &ModelParams,
    config: &ModelConfig,
    training: bool,
    rng: &mut impl Rng,
) -> Result<Array2<f64>> {
    Ok(transform_parts(x_raw, params, config, training, rng)?.2)
}

/// Head pieces: (dropout mask, logits).
pub(crate) fn head_parts(
    x_k: ArrayView2<'_, f64>,
    params: &ModelParams,
    config: &ModelConfig,
    training: bool,
    rng: &mut impl Rng,
) -> Result<(Option<Array2<f64>>, Array2<f64>)> {
    if x_k.ncols() != params.w_out.nrows() {
        return Err(Error::Contract("final embedding width does not match head".into()));
    }
    let mask = (training && config.dropout > 0.0).then(|| dropout_mask(x_k.nrows(), x_k.ncols(), config.dropout, rng));
    let logits = match &mask {
        Some(m) => (&x_k * m).dot(&params.w_out),
        None => x_k.dot(&params.w_out),
    };
    Ok((mask, add_bias(logits, &params.b_out)))
}

/// logits = dropout(X⁽ᴷ⁾)·W_out + b_out.
pub fn classifier_head(
    x_k: ArrayView2<'_, f64>,
    params: &ModelParams,
    config: &ModelConfig,
    training: bool,
    rng: &mut impl Rng,
) -> Result<Array2<f64>> {
    Ok(head_parts(x_k, params, config, training, rng)?.1)
}
