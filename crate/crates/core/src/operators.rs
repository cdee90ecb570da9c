//! Augmented normalized adjacency P̃ = D̃^{-1/2}(A + I)D̃^{-1/2} and the
//! matching Laplacian Δ̃ = I − P̃.

use crate::error::Result;
use crate::graph::Graph;
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone)]
pub struct PropagationOperators {
    pub p_tilde: CsrMatrix,
    pub delta_tilde: CsrMatrix,
    /// 1 + dᵢ per node.
    pub aug_degrees: Vec<f64>,
}

impl PropagationOperators {
    pub fn n(&self) -> usize {
        self.p_tilde.n_rows()
    }
}

/// Both matrices share one sparsity pattern: the adjacency plus the full
/// diagonal, columns ascending per row.
pub fn build_operators(g: &Graph) -> Result<PropagationOperators> {
    let n = g.n();
    let adj = g.adjacency();
    let aug: Vec<f64> = g.degrees().iter().map(|d| 1.0 + d).collect();

    let mut indptr = Vec::with_capacity(n + 1);
    let mut indices = Vec::with_capacity(adj.nnz() + n);
    let mut p_vals = Vec::with_capacity(adj.nnz() + n);
    let mut d_vals = Vec::with_capacity(adj.nnz() + n);
    indptr.push(0);
    for i in 0..n {
        let (cols, vals) = adj.row(i);
        let mut diag_done = false;
        for (&j, &a) in cols.iter().zip(vals) {
            if !diag_done && j > i {
                indices.push(i);
                p_vals.push(1.0 / aug[i]);
                d_vals.push(1.0 - 1.0 / aug[i]);
                diag_done = true;
            }
            // Product under the root is commutative, so (i, j) and (j, i) agree bitwise.
            let p = a / (aug[i] * aug[j]).sqrt();
            indices.push(j);
            p_vals.push(p);
            d_vals.push(-p);
        }
        if !diag_done {
            indices.push(i);
            p_vals.push(1.0 / aug[i]);
            d_vals.push(1.0 - 1.0 / aug[i]);
        }
        indptr.push(indices.len());
    }

    let p_tilde = CsrMatrix::from_parts(n, n, indptr.clone(), indices.clone(), p_vals)?;
    let delta_tilde = CsrMatrix::from_parts(n, n, indptr, indices, d_vals)?;
    Ok(PropagationOperators {
        p_tilde,
        delta_tilde,
        aug_degrees: aug,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate_synthetic, Split};
    use ndarray::{array, Array2};

    fn path3() -> Graph {
        Graph::from_edges(&[(0, 1), (1, 2)], Array2::zeros((3, 1)), vec![0; 3], vec![Split::None; 3]).unwrap()
    }

    /// Dense D̃^{-1/2}(A+I)D̃^{-1/2} built entry by entry.
    fn dense_p_tilde(g: &Graph) -> Array2<f64> {
        let n = g.n();
        let mut a = g.adjacency().to_dense();
        for i in 0..n {
            a[[i, i]] += 1.0;
        }
        let deg: Vec<f64> = (0..n).map(|i| a.row(i).sum()).collect();
        Array2::from_shape_fn((n, n), |(i, j)| a[[i, j]] / (deg[i].sqrt() * deg[j].sqrt()))
    }

    #[test]
    fn single_edge_operators() {
        let g = Graph::from_edges(&[(0, 1)], Array2::zeros((2, 1)), vec![0, 0], vec![Split::None; 2])
            .unwrap();
        let ops = build_operators(&g).unwrap();
        assert_eq!(ops.p_tilde.to_dense(), array![[0.5, 0.5], [0.5, 0.5]]);
        assert_eq!(ops.delta_tilde.to_dense(), array![[0.5, -0.5], [-0.5, 0.5]]);
        assert_eq!(ops.aug_degrees, vec![2.0, 2.0]);
    }

    #[test]
    fn isolated_node_has_unit_self_loop() {
        let g = Graph::from_edges(&[], Array2::zeros((1, 1)), vec![0], vec![Split::None]).unwrap();
        let ops = build_operators(&g).unwrap();
        assert_eq!(ops.p_tilde.to_dense(), array![[1.0]]);
        assert_eq!(ops.delta_tilde.to_dense(), array![[0.0]]);
    }

    #[test]
    fn path_entry_matches_hand_value() {
        let ops = build_operators(&path3()).unwrap();
        let expected = 1.0 / 6.0f64.sqrt();
        assert!((ops.p_tilde.get(0, 1) - expected).abs() < 1e-15);
        assert!((ops.p_tilde.get(0, 1) - 0.40825).abs() < 1e-5);
        assert!((ops.p_tilde.get(1, 1) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn sparse_matches_dense_construction() {
        for seed in 0..5 {
            let g = generate_synthetic(60 + 20 * seed as usize, 0.08, 2, 2, seed).unwrap();
            let ops = build_operators(&g).unwrap();
            let dense = dense_p_tilde(&g);
            let diff = (&ops.p_tilde.to_dense() - &dense).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
            assert!(diff <= 1e-14, "seed {seed}: {diff}");
        }
    }

    #[test]
    fn p_plus_delta_is_identity_and_symmetric() {
        let g = generate_synthetic(120, 0.05, 2, 2, 3).unwrap();
        let ops = build_operators(&g).unwrap();
        assert_eq!(ops.p_tilde.asymmetry(), 0.0);
        assert_eq!(ops.delta_tilde.asymmetry(), 0.0);
        let sum = ops.p_tilde.to_dense() + ops.delta_tilde.to_dense();
        let eye = Array2::<f64>::eye(g.n());
        let diff = (&sum - &eye).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
        assert!(diff <= 1e-14);
    }

    #[test]
    fn hub_rows_can_exceed_one() {
        // Star centre: 1/4 + 3/sqrt(8) > 1, so row sums are not bounded by 1.
        let g = Graph::from_edges(&[(0, 1), (0, 2), (0, 3)], Array2::zeros((4, 1)), vec![0; 4], vec![Split::None; 4])
            .unwrap();
        let ops = build_operators(&g).unwrap();
        let centre: f64 = ops.p_tilde.row(0).1.iter().sum();
        assert!((centre - (0.25 + 3.0 / 8.0f64.sqrt())).abs() < 1e-15);
    }
}
