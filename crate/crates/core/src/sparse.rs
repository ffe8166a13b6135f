//! Compressed sparse row storage.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// Row-major sparse matrix with column indices sorted ascending per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    n_rows: usize,
    n_cols: usize,
    indptr: Vec<usize>,
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl Csr {
    /// Builds from per-row entry lists. Entries are sorted by column; duplicate
    /// columns within a row are summed.
    pub fn from_rows(n_cols: usize, rows: Vec<Vec<(u32, f64)>>) -> Self {
        let n_rows = rows.len();
        let mut indptr = Vec::with_capacity(n_rows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            let start = indices.len();
            for (c, v) in row {
                debug_assert!((c as usize) < n_cols);
                if indices.len() > start && *indices.last().unwrap() == c {
                    *values.last_mut().unwrap() += v;
                } else {
                    indices.push(c);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        Csr {
            n_rows,
            n_cols,
            indptr,
            indices,
            values,
        }
    }

    pub(crate) fn from_raw(
        n_rows: usize,
        n_cols: usize,
        indptr: Vec<usize>,
        indices: Vec<u32>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if indptr.len() != n_rows + 1
            || indptr[0] != 0
            || *indptr.last().unwrap() != indices.len()
            || indices.len() != values.len()
            || indptr.windows(2).any(|w| w[0] > w[1])
        {
            return Err(Error::Format("inconsistent CSR arrays".into()));
        }
        for r in 0..n_rows {
            let cols = &indices[indptr[r]..indptr[r + 1]];
            if cols.windows(2).any(|w| w[0] >= w[1]) || cols.iter().any(|&c| c as usize >= n_cols)
            {
                return Err(Error::Format(format!("CSR row {r} has unsorted or out-of-range columns")));
            }
        }
        Ok(Csr {
            n_rows,
            n_cols,
            indptr,
            indices,
            values,
        })
    }

    pub fn from_dense(m: ArrayView2<f64>) -> Self {
        let rows = m
            .outer_iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .filter(|(_, &v)| v != 0.0)
                    .map(|(c, &v)| (c as u32, v))
                    .collect()
            })
            .collect();
        Csr::from_rows(m.ncols(), rows)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }
    pub fn n_cols(&self) -> usize {
        self.n_cols
    }
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }
    pub fn indptr(&self) -> &[usize] {
        &self.indptr
    }
    pub fn indices(&self) -> &[u32] {
        &self.indices
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn row(&self, r: usize) -> (&[u32], &[f64]) {
        let (a, b) = (self.indptr[r], self.indptr[r + 1]);
        (&self.indices[a..b], &self.values[a..b])
    }

    pub fn row_iter(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (c, v) = self.row(r);
        c.iter().zip(v).map(|(&c, &v)| (c as usize, v))
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        match cols.binary_search(&(c as u32)) {
            Ok(i) => vals[i],
            Err(_) => 0.0,
        }
    }

    pub fn contains(&self, r: usize, c: usize) -> bool {
        self.row(r).0.binary_search(&(c as u32)).is_ok()
    }

    pub fn transpose(&self) -> Csr {
        let mut rows: Vec<Vec<(u32, f64)>> = vec![Vec::new(); self.n_cols];
        for r in 0..self.n_rows {
            for (c, v) in self.row_iter(r) {
                rows[c].push((r as u32, v));
            }
        }
        Csr::from_rows(self.n_rows, rows)
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.n_rows, self.n_cols));
        for r in 0..self.n_rows {
            for (c, v) in self.row_iter(r) {
                out[[r, c]] = v;
            }
        }
        out
    }

    /// Sparse × dense product. Each output row sums its terms in ascending
    /// column order.
    pub fn mul_dense(&self, m: ArrayView2<f64>) -> Result<Array2<f64>> {
        if m.nrows() != self.n_cols {
            return Err(Error::Shape {
                expected: format!("{} rows", self.n_cols),
                found: format!("{} rows", m.nrows()),
            });
        }
        let d = m.ncols();
        let rows = crate::par::map_rows(self.n_rows, |r| {
            let mut acc = vec![0.0; d];
            for (c, v) in self.row_iter(r) {
                for (a, x) in acc.iter_mut().zip(m.row(c)) {
                    *a += v * x;
                }
            }
            acc
        });
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        Ok(Array2::from_shape_vec((self.n_rows, d), flat).expect("row lengths agree"))
    }

    /// `selfᵀ · m` without materialising the transpose.
    pub fn tmul_dense(&self, m: ArrayView2<f64>) -> Array2<f64> {
        assert_eq!(m.nrows(), self.n_rows);
        let mut out = Array2::zeros((self.n_cols, m.ncols()));
        for r in 0..self.n_rows {
            let mr = m.row(r);
            for (c, v) in self.row_iter(r) {
                let mut o = out.row_mut(c);
                o.scaled_add(v, &mr);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn duplicates_are_summed_and_sorted() {
        let m = Csr::from_rows(3, vec![vec![(2, 1.0), (0, 2.0), (2, 0.5)]]);
        assert_eq!(m.row(0).0, &[0, 2]);
        assert_eq!(m.row(0).1, &[2.0, 1.5]);
    }

    #[test]
    fn transpose_and_products_agree_with_dense() {
        let d = array![[1.0, 0.0, 2.0], [0.0, 0.0, 3.0]];
        let s = Csr::from_dense(d.view());
        assert_eq!(s.transpose().to_dense(), d.t().to_owned());
        let m = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        assert_eq!(s.mul_dense(m.view()).unwrap(), d.dot(&m));
        let w = array![[1.0], [2.0]];
        assert_eq!(s.tmul_dense(w.view()), d.t().dot(&w));
        assert!(s.mul_dense(w.view()).is_err());
    }
}
