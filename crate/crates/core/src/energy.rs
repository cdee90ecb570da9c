//! Dirichlet energy E(X) = tr(XᵀΔ̃X), in its trace form and in the
//! degree-normalized pairwise-distance form.

use ndarray::ArrayView2;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::sparse::CsrMatrix;

/// Values in [-CLAMP, 0) are rounding noise and reported as zero.
const CLAMP: f64 = 1e-9;

fn dot(a: ArrayView2<'_, f64>, i: usize, j: usize) -> f64 {
    let (ri, rj) = (a.row(i), a.row(j));
    match (ri.as_slice(), rj.as_slice()) {
        (Some(x), Some(y)) => x.iter().zip(y).map(|(p, q)| p * q).sum(),
        _ => ri.dot(&rj),
    }
}

/// tr(XᵀΔ̃X) = Σᵢⱼ Δ̃ᵢⱼ⟨xᵢ, xⱼ⟩ over the stored entries of Δ̃.
pub fn dirichlet_trace(x: ArrayView2<'_, f64>, delta_tilde: &CsrMatrix) -> Result<f64> {
    if x.nrows() != delta_tilde.n_rows() || delta_tilde.n_rows() != delta_tilde.n_cols() {
        return Err(Error::Contract(format!(
            "energy: {} embedding rows against a {}x{} Laplacian",
            x.nrows(),
            delta_tilde.n_rows(),
            delta_tilde.n_cols()
        )));
    }
    let mut total = 0.0;
    for (i, j, v) in delta_tilde.iter() {
        total += v * dot(x, i, j);
    }
    if (-CLAMP..0.0).contains(&total) {
        total = 0.0;
    }
    Ok(total)
}

/// ½ Σ over ordered pairs of aᵢⱼ‖xᵢ/√(1+dᵢ) − xⱼ/√(1+dⱼ)‖².
pub fn dirichlet_pairwise(x: ArrayView2<'_, f64>, g: &Graph) -> Result<f64> {
    if x.nrows() != g.n() {
        return Err(Error::Contract(format!(
            "energy: {} embedding rows for a graph with {} nodes",
            x.nrows(),
            g.n()
        )));
    }
    let scale: Vec<f64> = g.degrees().iter().map(|d| 1.0 / (1.0 + d).sqrt()).collect();
    let mut total = 0.0;
    for (i, j, a) in g.adjacency().iter() {
        let (si, sj) = (scale[i], scale[j]);
        let dist: f64 = x
            .row(i)
            .iter()
            .zip(x.row(j).iter())
            .map(|(&p, &q)| {
                let t = p * si - q * sj;
                t * t
            })
            .sum();
        total += a * dist;
    }
    Ok(0.5 * total)
}
