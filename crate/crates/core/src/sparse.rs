//! Compressed sparse row storage and a chunked triplet assembler.

/// Row-major sparse matrix with sorted, duplicate-free columns per row.
#[derive(Clone, Debug)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            row_ptr: vec![0; nrows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Builds a matrix from unsorted triplets, summing duplicates.
    pub fn from_triplets(nrows: usize, ncols: usize, rows: &[u32], cols: &[u32], vals: &[f64]) -> Self {
        debug_assert_eq!(rows.len(), cols.len());
        debug_assert_eq!(rows.len(), vals.len());
        let mut counts = vec![0usize; nrows + 1];
        for &r in rows {
            counts[r as usize + 1] += 1;
        }
        for i in 0..nrows {
            counts[i + 1] += counts[i];
        }
        let mut next = counts.clone();
        let mut order = vec![0usize; rows.len()];
        for (k, &r) in rows.iter().enumerate() {
            let slot = &mut next[r as usize];
            order[*slot] = k;
            *slot += 1;
        }

        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::with_capacity(rows.len());
        let mut values = Vec::with_capacity(rows.len());
        row_ptr.push(0);
        let mut scratch: Vec<(u32, f64)> = Vec::new();
        for i in 0..nrows {
            scratch.clear();
            scratch.extend(order[counts[i]..counts[i + 1]].iter().map(|&k| (cols[k], vals[k])));
            // stable sort keeps the summation order of duplicates deterministic
            scratch.sort_by_key(|&(c, _)| c);
            let mut iter = scratch.iter().peekable();
            while let Some(&(c, mut v)) = iter.next() {
                while let Some(&&(c2, v2)) = iter.peek() {
                    if c2 != c {
                        break;
                    }
                    v += v2;
                    iter.next();
                }
                col_idx.push(c as usize);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    /// `y = self * x`
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols, "matvec dimension mismatch");
        (0..self.nrows)
            .map(|i| self.row(i).map(|(j, v)| v * x[j]).sum())
            .collect()
    }

    /// `y += self * x`
    pub fn mul_vec_add(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for (i, yi) in y.iter_mut().enumerate() {
            *yi += self.row(i).map(|(j, v)| v * x[j]).sum::<f64>();
        }
    }

    /// `y = selfᵀ * x`
    pub fn mul_transpose_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows);
        let mut y = vec![0.0; self.ncols];
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (j, v) in self.row(i) {
                y[j] += v * xi;
            }
        }
        y
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut rows = Vec::with_capacity(self.nnz());
        let mut cols = Vec::with_capacity(self.nnz());
        for i in 0..self.nrows {
            for (j, _) in self.row(i) {
                rows.push(j as u32);
                cols.push(i as u32);
            }
        }
        CsrMatrix::from_triplets(self.ncols, self.nrows, &rows, &cols, &self.values)
    }

    /// Entry `(i, j)` or zero.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[span.clone()].binary_search(&j) {
            Ok(k) => self.values[span.start + k],
            Err(_) => 0.0,
        }
    }

    /// Sum of two matrices of equal shape.
    pub fn add(&self, other: &CsrMatrix) -> CsrMatrix {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let mut row_ptr = Vec::with_capacity(self.nrows + 1);
        let mut col_idx = Vec::with_capacity(self.nnz() + other.nnz());
        let mut values = Vec::with_capacity(self.nnz() + other.nnz());
        row_ptr.push(0);
        for i in 0..self.nrows {
            let mut a = self.row(i).peekable();
            let mut b = other.row(i).peekable();
            loop {
                match (a.peek().copied(), b.peek().copied()) {
                    (None, None) => break,
                    (Some((ja, va)), Some((jb, vb))) if ja == jb => {
                        col_idx.push(ja);
                        values.push(va + vb);
                        a.next();
                        b.next();
                    }
                    (Some((ja, va)), Some((jb, _))) if ja < jb => {
                        col_idx.push(ja);
                        values.push(va);
                        a.next();
                    }
                    (Some(_), Some((jb, vb))) | (None, Some((jb, vb))) => {
                        col_idx.push(jb);
                        values.push(vb);
                        b.next();
                    }
                    (Some((ja, va)), None) => {
                        col_idx.push(ja);
                        values.push(va);
                        a.next();
                    }
                }
            }
            row_ptr.push(col_idx.len());
        }
        CsrMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Sparse product `self * other` (row-by-row with a dense accumulator).
    pub fn matmul(&self, other: &CsrMatrix) -> CsrMatrix {
        assert_eq!(self.ncols, other.nrows, "matmul dimension mismatch");
        let mut acc = vec![0.0; other.ncols];
        let mut mark = vec![usize::MAX; other.ncols];
        let mut touched: Vec<usize> = Vec::new();
        let mut row_ptr = Vec::with_capacity(self.nrows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for i in 0..self.nrows {
            touched.clear();
            for (k, a) in self.row(i) {
                for (j, b) in other.row(k) {
                    if mark[j] != i {
                        mark[j] = i;
                        acc[j] = 0.0;
                        touched.push(j);
                    }
                    acc[j] += a * b;
                }
            }
            touched.sort_unstable();
            for &j in &touched {
                if acc[j] != 0.0 {
                    col_idx.push(j);
                    values.push(acc[j]);
                }
            }
            row_ptr.push(col_idx.len());
        }
        CsrMatrix {
            nrows: self.nrows,
            ncols: other.ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// The first `n` rows.
    pub fn top_rows(&self, n: usize) -> CsrMatrix {
        assert!(n <= self.nrows);
        let end = self.row_ptr[n];
        CsrMatrix {
            nrows: n,
            ncols: self.ncols,
            row_ptr: self.row_ptr[..=n].to_vec(),
            col_idx: self.col_idx[..end].to_vec(),
            values: self.values[..end].to_vec(),
        }
    }

    /// Max |a_ij − a_ji| over the square leading block; used to pick symmetric solvers.
    pub fn asymmetry(&self) -> f64 {
        let n = self.nrows.min(self.ncols);
        let mut worst = 0.0f64;
        for i in 0..n {
            for (j, v) in self.row(i) {
                if j < n {
                    worst = worst.max((v - self.get(j, i)).abs());
                }
            }
        }
        worst
    }
}

const CHUNK: usize = 1 << 22;

/// Accumulates triplets and periodically compresses them so that assembly
/// of large stencils does not hold every duplicate in memory at once.
pub struct TripletBuilder {
    nrows: usize,
    ncols: usize,
    rows: Vec<u32>,
    cols: Vec<u32>,
    vals: Vec<f64>,
    merged: Option<CsrMatrix>,
}

impl TripletBuilder {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        assert!(nrows < u32::MAX as usize && ncols < u32::MAX as usize);
        Self {
            nrows,
            ncols,
            rows: Vec::new(),
            cols: Vec::new(),
            vals: Vec::new(),
            merged: None,
        }
    }

    #[inline]
    pub fn push(&mut self, row: usize, col: usize, val: f64) {
        if val == 0.0 {
            return;
        }
        self.rows.push(row as u32);
        self.cols.push(col as u32);
        self.vals.push(val);
        if self.rows.len() >= CHUNK {
            self.flush();
        }
    }

    fn flush(&mut self) {
        if self.rows.is_empty() {
            return;
        }
        let chunk = CsrMatrix::from_triplets(self.nrows, self.ncols, &self.rows, &self.cols, &self.vals);
        self.rows.clear();
        self.cols.clear();
        self.vals.clear();
        self.merged = Some(match self.merged.take() {
            Some(m) => m.add(&chunk),
            None => chunk,
        });
    }

    pub fn build(mut self) -> CsrMatrix {
        self.flush();
        self.merged
            .unwrap_or_else(|| CsrMatrix::zeros(self.nrows, self.ncols))
    }
}

/// Compensated (Neumaier) summation.
pub fn stable_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

pub fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_are_summed() {
        let m = CsrMatrix::from_triplets(2, 3, &[0, 1, 0, 0], &[2, 0, 2, 1], &[1.0, 4.0, 2.0, -1.0]);
        assert_eq!(m.nnz(), 3);
        assert_eq!(m.get(0, 2), 3.0);
        assert_eq!(m.get(0, 1), -1.0);
        assert_eq!(m.get(1, 0), 4.0);
        assert_eq!(m.get(1, 1), 0.0);
    }

    #[test]
    fn transpose_and_matvec_agree() {
        let m = CsrMatrix::from_triplets(3, 2, &[0, 1, 2, 2], &[0, 1, 0, 1], &[1.0, 2.0, 3.0, 4.0]);
        let x = [1.0, -2.0, 0.5];
        let a = m.mul_transpose_vec(&x);
        let b = m.transpose().mul_vec(&x);
        assert_eq!(a, b);
        assert_eq!(a, vec![2.5, -2.0]);
    }

    #[test]
    fn matmul_matches_dense_product() {
        let a = CsrMatrix::from_triplets(2, 3, &[0, 0, 1, 1], &[0, 2, 1, 2], &[1.0, 2.0, -1.0, 3.0]);
        let b = CsrMatrix::from_triplets(3, 2, &[0, 1, 2, 2], &[1, 0, 0, 1], &[4.0, 5.0, 6.0, -2.0]);
        let c = a.matmul(&b);
        // dense: [[1,0,2],[0,-1,3]] * [[0,4],[5,0],[6,-2]]
        assert_eq!(c.get(0, 0), 12.0);
        assert_eq!(c.get(0, 1), 0.0);
        assert_eq!(c.get(1, 0), 13.0);
        assert_eq!(c.get(1, 1), -6.0);
        assert_eq!(c.nnz(), 3);
        let top = c.top_rows(1);
        assert_eq!((top.nrows(), top.nnz()), (1, 1));
    }

    #[test]
    fn builder_merges_chunks() {
        let mut b = TripletBuilder::new(4, 4);
        for k in 0..10 {
            b.push(k % 4, (k * 3) % 4, 1.0);
        }
        b.flush();
        b.push(0, 0, 5.0);
        let m = b.build();
        assert_eq!(m.get(0, 0), 8.0);
        let total: f64 = m.values().iter().sum();
        assert_eq!(total, 15.0);
    }

    #[test]
    fn compensated_sum_is_exact_for_repeated_values() {
        let x = 0.1f64;
        let s = stable_sum(std::iter::repeat(x).take(4096));
        assert!((s / 4096.0 - x).abs() <= f64::EPSILON * x);
    }
}
