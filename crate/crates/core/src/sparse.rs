//! Compressed sparse row storage for count and transition matrices.

use std::ops::AddAssign;

/// Square (or rectangular) matrix in CSR layout. Column indices within
/// each row are strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix<T> {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<T>,
}

impl<T: Copy + AddAssign + PartialEq + Default> CsrMatrix<T> {
    /// Builds a matrix from `(row, col, value)` triplets. Duplicate
    /// coordinates are summed; explicit zeros (after summing) are dropped.
    pub fn from_triplets(rows: usize, cols: usize, mut triplets: Vec<(usize, usize, T)>) -> Self {
        triplets.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; rows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<T> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            assert!(
                r < rows && c < cols,
                "triplet ({r}, {c}) outside {rows}x{cols}"
            );
            if last == Some((r, c)) {
                *values.last_mut().expect("duplicate follows an entry") += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        let mut m = CsrMatrix {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        };
        m.drop_zeros();
        m
    }

    fn drop_zeros(&mut self) {
        let zero = T::default();
        if self.values.iter().all(|v| *v != zero) {
            return;
        }
        let mut row_ptr = vec![0usize; self.rows + 1];
        let mut col_idx = Vec::with_capacity(self.col_idx.len());
        let mut values = Vec::with_capacity(self.values.len());
        for r in 0..self.rows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                if self.values[k] != zero {
                    col_idx.push(self.col_idx[k]);
                    values.push(self.values[k]);
                }
            }
            row_ptr[r + 1] = col_idx.len();
        }
        self.row_ptr = row_ptr;
        self.col_idx = col_idx;
        self.values = values;
    }
}

impl<T: Copy> CsrMatrix<T> {
    /// Assembles a matrix from raw CSR arrays, validating the structure.
    pub fn from_raw(
        rows: usize,
        cols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<T>,
    ) -> Result<Self, String> {
        if row_ptr.len() != rows + 1 {
            return Err(format!(
                "row_ptr has {} entries, expected {}",
                row_ptr.len(),
                rows + 1
            ));
        }
        if col_idx.len() != values.len() || row_ptr[rows] != values.len() || row_ptr[0] != 0 {
            return Err("inconsistent CSR array lengths".into());
        }
        for r in 0..rows {
            if row_ptr[r] > row_ptr[r + 1] {
                return Err(format!("row_ptr decreases at row {r}"));
            }
            let cs = &col_idx[row_ptr[r]..row_ptr[r + 1]];
            if cs.windows(2).any(|w| w[0] >= w[1]) || cs.iter().any(|&c| c >= cols) {
                return Err(format!("row {r} has unsorted or out-of-range columns"));
            }
        }
        Ok(CsrMatrix {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of row `r`.
    pub fn row(&self, r: usize) -> (&[usize], &[T]) {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        (&self.col_idx[span.clone()], &self.values[span])
    }

    pub fn row_iter(&self, r: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let (c, v) = self.row(r);
        c.iter().copied().zip(v.iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> Option<T> {
        let (cols, vals) = self.row(r);
        cols.binary_search(&c).ok().map(|k| vals[k])
    }

    /// All stored entries in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        (0..self.rows).flat_map(move |r| self.row_iter(r).map(move |(c, v)| (r, c, v)))
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn map<U: Copy>(&self, mut f: impl FnMut(T) -> U) -> CsrMatrix<U> {
        CsrMatrix {
            rows: self.rows,
            cols: self.cols,
            row_ptr: self.row_ptr.clone(),
            col_idx: self.col_idx.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Transposed copy; rows of the result list the predecessors of each
    /// column of `self`.
    pub fn transpose(&self) -> CsrMatrix<T> {
        let mut counts = vec![0usize; self.cols + 1];
        for &c in &self.col_idx {
            counts[c + 1] += 1;
        }
        for c in 0..self.cols {
            counts[c + 1] += counts[c];
        }
        let row_ptr = counts.clone();
        let mut next = counts;
        let mut col_idx = vec![0usize; self.nnz()];
        let mut values = Vec::with_capacity(self.nnz());
        // Filled in place; start from a copy so every slot is initialized.
        values.extend_from_slice(&self.values);
        for r in 0..self.rows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.col_idx[k];
                let slot = next[c];
                col_idx[slot] = r;
                values[slot] = self.values[k];
                next[c] += 1;
            }
        }
        CsrMatrix {
            rows: self.cols,
            cols: self.rows,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Sub-matrix keeping the listed indices (which must be sorted) on both
    /// axes, renumbered 0..keep.len().
    pub fn restrict(&self, keep: &[usize]) -> CsrMatrix<T> {
        debug_assert!(keep.windows(2).all(|w| w[0] < w[1]));
        let mut remap = vec![usize::MAX; self.cols.max(self.rows)];
        for (new, &old) in keep.iter().enumerate() {
            remap[old] = new;
        }
        let mut row_ptr = Vec::with_capacity(keep.len() + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for &old in keep {
            for (c, v) in self.row_iter(old) {
                let nc = remap[c];
                if nc != usize::MAX {
                    col_idx.push(nc);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        CsrMatrix {
            rows: keep.len(),
            cols: keep.len(),
            row_ptr,
            col_idx,
            values,
        }
    }
}

impl CsrMatrix<f64> {
    /// `out = x^T A`, i.e. the left action used by stationary iterations.
    pub fn left_mul(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (r, &xr) in x.iter().enumerate().take(self.rows) {
            if xr == 0.0 {
                continue;
            }
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                out[c] += xr * v;
            }
        }
    }

    pub fn row_sum(&self, r: usize) -> f64 {
        self.row(r).1.iter().sum()
    }

    pub fn to_dense(&self) -> ndarray::Array2<f64> {
        let mut d = ndarray::Array2::<f64>::zeros((self.rows, self.cols));
        for (r, c, v) in self.iter() {
            d[(r, c)] = v;
        }
        d
    }
}
