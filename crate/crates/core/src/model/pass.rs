use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;

use super::layers::{activate, activate_backward, head_parts, mix, transform_parts};
use super::{ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::operators::PropagationOperators;
use crate::sparse::CsrMatrix;

/// Dropped copy of the input features, kept only when dropout fired.
pub type InputDropout = Option<CsrMatrix>;

/// Everything the reverse pass and the energy tracer need from one forward call.
#[derive(Debug, Clone)]
pub struct ForwardTape {
    pub input_dropped: InputDropout,
    /// dropout(X)·W_in + b_in before the input activation.
    pub transform_pre: Array2<f64>,
    pub x0: Array2<f64>,
    /// Mixed layer inputs S⁽ᵏ⁾, kept only when the trunk weights train.
    pub mixed: Vec<Array2<f64>>,
    /// S⁽ᵏ⁾W⁽ᵏ⁾ per layer, before the activation.
    pub pre: Vec<Array2<f64>>,
    /// X⁽ᵏ⁾ per layer.
    pub post: Vec<Array2<f64>>,
    pub head_mask: Option<Array2<f64>>,
}

impl ForwardTape {
    pub fn k_layers(&self) -> usize {
        self.post.len()
    }

    /// X⁽ᵏ⁾ for k in 0..=K.
    pub fn embedding(&self, k: usize) -> ArrayView2<'_, f64> {
        if k == 0 {
            self.x0.view()
        } else {
            self.post[k - 1].view()
        }
    }

    /// Pre-activation matrix of layer k (the input transform for k = 0).
    pub fn pre_embedding(&self, k: usize) -> ArrayView2<'_, f64> {
        if k == 0 {
            self.transform_pre.view()
        } else {
            self.pre[k - 1].view()
        }
    }
}

fn ensure_finite(m: &Array2<f64>, location: impl FnOnce() -> String) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric { location: location() })
    }
}

/// Input transform, K propagation layers, classifier head.
pub fn forward(
    graph: &Graph,
    ops: &PropagationOperators,
    params: &ModelParams,
    config: &ModelConfig,
    training: bool,
    rng: &mut impl Rng,
) -> Result<(Array2<f64>, ForwardTape)> {
    params.check_shapes(config, graph.d_in(), graph.n_classes())?;
    if ops.n() != graph.n() {
        return Err(Error::Contract("operators were built for a different graph".into()));
    }
    let (input_dropped, transform_pre, x0) = transform_parts(graph.features_sparse(), params, config, training, rng)?;
    ensure_finite(&x0, || "input transform".into())?;

    let act = config.trunk_activation();
    let coeffs = config.mixing();
    let keep_mixed = config.trunk_trainable();
    let mut mixed = Vec::with_capacity(if keep_mixed { config.k_layers } else { 0 });
    let mut pre = Vec::with_capacity(config.k_layers);
    let mut post: Vec<Array2<f64>> = Vec::with_capacity(config.k_layers);
    for (k, w) in params.w_layers.iter().enumerate() {
        let x_prev = post.last().unwrap_or(&x0);
        let s = mix(x_prev.view(), x0.view(), &ops.p_tilde, coeffs)?;
        let z = s.dot(w);
        let x = activate(z.view(), act, params.b_shifts[k]);
        ensure_finite(&x, || format!("layer {}", k + 1))?;
        if keep_mixed {
            mixed.push(s);
        }
        pre.push(z);
        post.push(x);
    }

    let x_k = post.last().unwrap_or(&x0);
    let (head_mask, logits) = head_parts(x_k.view(), params, config, training, rng)?;
    ensure_finite(&logits, || "classifier head".into())?;
    Ok((
        logits,
        ForwardTape {
            input_dropped,
            transform_pre,
            x0,
            mixed,
            pre,
            post,
            head_mask,
        },
    ))
}

/// Exact gradients of ⟨logits_grad, logits⟩ w.r.t. every parameter. Frozen
/// parameters (SGC trunk, fixed shifts) receive zero gradient.
pub fn backward(
    tape: &ForwardTape,
    logits_grad: ArrayView2<'_, f64>,
    params: &ModelParams,
    config: &ModelConfig,
    graph: &Graph,
    ops: &PropagationOperators,
) -> Result<ModelParams> {
    let k_layers = params.k_layers();
    let mixed_expected = if config.trunk_trainable() { k_layers } else { 0 };
    if tape.k_layers() != k_layers || tape.pre.len() != k_layers || tape.mixed.len() != mixed_expected {
        return Err(Error::Contract(format!(
            "tape has {} layers but parameters have {k_layers}",
            tape.k_layers()
        )));
    }
    let n = tape.x0.nrows();
    if logits_grad.dim() != (n, params.w_out.ncols()) {
        return Err(Error::Contract("logit gradient shape does not match tape".into()));
    }

    let mut grads = params.zeros_like();
    let x_k = tape.embedding(k_layers);

    // Head.
    let head_in = match &tape.head_mask {
        Some(m) => &x_k * m,
        None => x_k.to_owned(),
    };
    grads.w_out = head_in.t().dot(&logits_grad);
    grads.b_out = logits_grad.sum_axis(Axis(0));
    let mut dx = logits_grad.dot(&params.w_out.t());
    if let Some(m) = &tape.head_mask {
        dx *= m;
    }

    // Trunk, last layer first.
    let act = config.trunk_activation();
    let (p_coef, a_coef, b_coef) = config.mixing();
    let mut dx0_residual = (b_coef != 0.0).then(|| Array2::<f64>::zeros(tape.x0.raw_dim()));
    for k in (0..k_layers).rev() {
        let (dz, db) = activate_backward(tape.pre[k].view(), act, params.b_shifts[k], dx);
        if config.shifts_trainable() {
            grads.b_shifts[k] = db;
        }
        if config.trunk_trainable() {
            grads.w_layers[k] = tape.mixed[k].t().dot(&dz);
        }
        let ds = dz.dot(&params.w_layers[k].t());
        // P̃ is symmetric, so P̃ᵀ·dS = P̃·dS.
        let mut prev = ops.p_tilde.matmul(ds.view())?;
        if p_coef != 1.0 {
            prev *= p_coef;
        }
        if a_coef != 0.0 {
            prev.scaled_add(a_coef, &ds);
        }
        if let Some(acc) = dx0_residual.as_mut() {
            acc.scaled_add(b_coef, &ds);
        }
        dx = prev;
    }
    if let Some(acc) = dx0_residual {
        dx += &acc;
    }

    // Input transform.
    let (dh0, _) = activate_backward(tape.transform_pre.view(), config.input_activation(), 0.0, dx);
    let src = tape.input_dropped.as_ref().unwrap_or(graph.features_sparse());
    grads.w_in = src.transpose_matmul(dh0.view())?;
    grads.b_in = dh0.sum_axis(Axis(0));
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::generate_synthetic;
    use crate::model::layers::{egnn_layer, gcn_layer};
    use crate::model::{Activation, Variant};
    use crate::operators::build_operators;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(cfg: &ModelConfig) -> (Graph, PropagationOperators, ModelParams) {
        let g = generate_synthetic(20, 0.2, 5, 3, 11).unwrap();
        let ops = build_operators(&g).unwrap();
        let p = ModelParams::init(cfg, g.d_in(), g.n_classes()).unwrap();
        (g, ops, p)
    }

    #[test]
    fn eval_forward_is_deterministic() {
        let cfg = ModelConfig { k_layers: 3, d_hidden: 8, dropout: 0.5, ..Default::default() };
        let (g, ops, p) = setup(&cfg);
        let mut r1 = ChaCha8Rng::seed_from_u64(1);
        let mut r2 = ChaCha8Rng::seed_from_u64(2);
        let (a, _) = forward(&g, &ops, &p, &cfg, false, &mut r1).unwrap();
        let (b, _) = forward(&g, &ops, &p, &cfg, false, &mut r2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_layers_is_head_of_transform() {
        let cfg = ModelConfig { k_layers: 0, d_hidden: 6, ..Default::default() };
        let (g, ops, p) = setup(&cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (logits, tape) = forward(&g, &ops, &p, &cfg, false, &mut rng).unwrap();
        assert_eq!(tape.k_layers(), 0);
        let x0 = crate::model::input_transform(g.features_sparse(), &p, &cfg, false, &mut rng).unwrap();
        let expected = crate::model::classifier_head(x0.view(), &p, &cfg, false, &mut rng).unwrap();
        assert_eq!(logits, expected);
    }

    #[test]
    fn tape_replays_bit_exactly() {
        for variant in [Variant::Egnn, Variant::Gcn] {
            let cfg = ModelConfig { variant, k_layers: 4, d_hidden: 6, b_init: -0.05, ..Default::default() };
            let (g, ops, p) = setup(&cfg);
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let (_, tape) = forward(&g, &ops, &p, &cfg, false, &mut rng).unwrap();
            for k in 0..4 {
                let w = p.w_layers[k].view();
                let b = p.b_shifts[k];
                let replay = match variant {
                    Variant::Gcn => gcn_layer(tape.embedding(k), &ops.p_tilde, w, Activation::Srelu, b),
                    _ => egnn_layer(
                        tape.embedding(k),
                        tape.x0.view(),
                        &ops.p_tilde,
                        w,
                        b,
                        cfg.c_min,
                        cfg.alpha,
                        cfg.beta,
                        Activation::Srelu,
                    ),
                }
                .unwrap();
                assert_eq!(replay, tape.post[k]);
            }
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let cfg = ModelConfig { k_layers: 3, d_hidden: 6, ..Default::default() };
        let (g, ops, p) = setup(&cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (logits, tape) = forward(&g, &ops, &p, &cfg, true, &mut rng).unwrap();
        let grads = backward(&tape, Array2::zeros(logits.raw_dim()).view(), &p, &cfg, &g, &ops).unwrap();
        assert!(grads.scalars().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mismatched_tape_is_rejected() {
        let cfg = ModelConfig { k_layers: 2, d_hidden: 4, ..Default::default() };
        let (g, ops, p) = setup(&cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (logits, tape) = forward(&g, &ops, &p, &cfg, false, &mut rng).unwrap();
        let cfg3 = ModelConfig { k_layers: 3, ..cfg };
        let p3 = ModelParams::init(&cfg3, g.d_in(), g.n_classes()).unwrap();
        let err = backward(&tape, logits.view(), &p3, &cfg3, &g, &ops).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn overflow_names_the_layer() {
        let cfg = ModelConfig { k_layers: 3, d_hidden: 4, weight_init: crate::model::WeightInit::Orthogonal, ..Default::default() };
        let (g, ops, mut p) = setup(&cfg);
        p.w_layers[1].fill(f64::MAX);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = forward(&g, &ops, &p, &cfg, false, &mut rng).unwrap_err();
        assert!(err.to_string().contains("layer 2"), "{err}");
    }
}
