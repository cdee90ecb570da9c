//! Compressed sparse row storage and the sparse-dense kernels used by the
//! propagation and input-transform paths.
//!
//! Column indices are sorted ascending within each row and never repeat.

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Assemble from raw parts, checking the structural invariants.
    pub fn from_parts(
        n_rows: usize,
        n_cols: usize,
        indptr: Vec<usize>,
        indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if indptr.len() != n_rows + 1 || indptr[0] != 0 {
            return Err(Error::Contract("csr indptr has wrong length".into()));
        }
        if indices.len() != values.len() || *indptr.last().unwrap() != indices.len() {
            return Err(Error::Contract("csr indices/values length mismatch".into()));
        }
        for r in 0..n_rows {
            if indptr[r] > indptr[r + 1] {
                return Err(Error::Contract(format!("csr indptr decreases at row {r}")));
            }
            let row = &indices[indptr[r]..indptr[r + 1]];
            if row.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Contract(format!("csr row {r} not strictly sorted")));
            }
            if row.last().is_some_and(|&c| c >= n_cols) {
                return Err(Error::Contract(format!("csr row {r} column out of range")));
            }
        }
        Ok(Self {
            n_rows,
            n_cols,
            indptr,
            indices,
            values,
        })
    }

    /// Build from (row, col, value) triplets. Duplicates are summed.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        mut triplets: Vec<(usize, usize, f64)>,
    ) -> Result<Self> {
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut indptr = vec![0usize; n_rows + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if r >= n_rows || c >= n_cols {
                return Err(Error::Contract(format!("triplet ({r}, {c}) out of bounds")));
            }
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            indices.push(c);
            values.push(v);
            indptr[r + 1] += 1;
            last = Some((r, c));
        }
        for r in 0..n_rows {
            indptr[r + 1] += indptr[r];
        }
        Self::from_parts(n_rows, n_cols, indptr, indices, values)
    }

    /// Keep only the nonzero entries of a dense matrix.
    pub fn from_dense(dense: ArrayView2<'_, f64>) -> Self {
        let (n_rows, n_cols) = dense.dim();
        let mut indptr = Vec::with_capacity(n_rows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for row in dense.axis_iter(Axis(0)) {
            for (c, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    indices.push(c);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        Self {
            n_rows,
            n_cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn indptr(&self) -> &[usize] {
        &self.indptr
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Column indices and values of one row.
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let span = self.indptr[r]..self.indptr[r + 1];
        (&self.indices[span.clone()], &self.values[span])
    }

    /// Iterate stored entries in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_rows).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(move |(&c, &v)| (r, c, v))
        })
    }

    /// Entry lookup by binary search in the row.
    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        match cols.binary_search(&c) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    /// Same sparsity pattern with values replaced.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.nnz() {
            return Err(Error::Contract("replacement values length mismatch".into()));
        }
        Ok(Self {
            values,
            ..self.clone()
        })
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.n_rows, self.n_cols));
        for (r, c, v) in self.iter() {
            out[[r, c]] = v;
        }
        out
    }

    /// Largest absolute difference between (i, j) and (j, i) over stored entries.
    pub fn asymmetry(&self) -> f64 {
        self.iter()
            .map(|(r, c, v)| (v - self.get(c, r)).abs())
            .fold(0.0, f64::max)
    }

    /// `self · rhs` for a dense right-hand side.
    pub fn matmul(&self, rhs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if rhs.nrows() != self.n_cols {
            return Err(Error::Contract(format!(
                "sparse matmul: {}x{} times {}x{}",
                self.n_rows,
                self.n_cols,
                rhs.nrows(),
                rhs.ncols()
            )));
        }
        let d = rhs.ncols();
        let mut out = Array2::<f64>::zeros((self.n_rows, d));
        for (r, mut out_row) in out.axis_iter_mut(Axis(0)).enumerate() {
            let (cols, vals) = self.row(r);
            let acc = out_row.as_slice_mut().expect("fresh array is contiguous");
            for (&c, &v) in cols.iter().zip(vals) {
                let src = rhs.row(c);
                match src.as_slice() {
                    Some(s) => {
                        for (a, &x) in acc.iter_mut().zip(s) {
                            *a += v * x;
                        }
                    }
                    None => {
                        for (a, &x) in acc.iter_mut().zip(src.iter()) {
                            *a += v * x;
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · rhs` without forming the transpose.
    pub fn transpose_matmul(&self, rhs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if rhs.nrows() != self.n_rows {
            return Err(Error::Contract(format!(
                "sparse transpose matmul: ({}x{})ᵀ times {}x{}",
                self.n_rows,
                self.n_cols,
                rhs.nrows(),
                rhs.ncols()
            )));
        }
        let d = rhs.ncols();
        let mut out = Array2::<f64>::zeros((self.n_cols, d));
        for r in 0..self.n_rows {
            let (cols, vals) = self.row(r);
            let src = rhs.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                let mut dst = out.row_mut(c);
                dst.scaled_add(v, &src);
            }
        }
        Ok(out)
    }
}
