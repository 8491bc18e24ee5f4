//! Dense row-major matrices, a thin `dgemm` wrapper and a banded symmetric
//! positive-definite solver used by the finite-element assembly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major `f64` matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix whose columns are the given vectors.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let cols = columns.len();
        let rows = columns.first().map_or(0, Vec::len);
        let mut m = Self::zeros(rows, cols);
        for (j, c) in columns.iter().enumerate() {
            if c.len() != rows {
                return Err(Error::Shape(format!("column {j} has length {} != {rows}", c.len())));
            }
            for (i, v) in c.iter().enumerate() {
                m.data[i * cols + j] = *v;
            }
        }
        Ok(m)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `self * other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        gemm(
            self.rows,
            self.cols,
            other.cols,
            1.0,
            MatView::row_major(&self.data, self.cols),
            MatView::row_major(&other.data, other.cols),
            0.0,
            &mut out.data,
            other.cols,
        );
        Ok(out)
    }

    /// `selfᵀ * other` without materialising the transpose.
    pub fn t_matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::Shape(format!(
                "cannot multiply ({}x{})ᵀ by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.cols, other.cols);
        gemm(
            self.cols,
            self.rows,
            other.cols,
            1.0,
            MatView::transposed(&self.data, self.cols),
            MatView::row_major(&other.data, other.cols),
            0.0,
            &mut out.data,
            other.cols,
        );
        Ok(out)
    }
}

/// Borrowed strided view handed to [`gemm`].
#[derive(Clone, Copy)]
pub struct MatView<'a> {
    pub data: &'a [f64],
    pub row_stride: isize,
    pub col_stride: isize,
}

impl<'a> MatView<'a> {
    /// Row-major matrix with `cols` columns.
    pub fn row_major(data: &'a [f64], cols: usize) -> Self {
        Self { data, row_stride: cols as isize, col_stride: 1 }
    }

    /// Transpose of a row-major matrix with `cols` columns.
    pub fn transposed(data: &'a [f64], cols: usize) -> Self {
        Self { data, row_stride: 1, col_stride: cols as isize }
    }
}

/// `C = alpha * A * B + beta * C` with `A: m×k`, `B: k×n` and `C` row-major
/// with leading dimension `ldc`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: MatView<'_>,
    b: MatView<'_>,
    beta: f64,
    c: &mut [f64],
    ldc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for i in 0..m {
            for v in &mut c[i * ldc..i * ldc + n] {
                *v *= beta;
            }
        }
        return;
    }
    // Bounds are checked here once; dgemm itself works on raw pointers.
    let last = |v: &MatView<'_>, r: usize, cc: usize| {
        ((r - 1) as isize * v.row_stride + (cc - 1) as isize * v.col_stride) as usize
    };
    assert!(last(&a, m, k) < a.data.len(), "gemm: A out of bounds");
    assert!(last(&b, k, n) < b.data.len(), "gemm: B out of bounds");
    assert!((m - 1) * ldc + n <= c.len(), "gemm: C out of bounds");
    // SAFETY: every index touched by dgemm lies inside the slices checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.row_stride,
            a.col_stride,
            b.data.as_ptr(),
            b.row_stride,
            b.col_stride,
            beta,
            c.as_mut_ptr(),
            ldc as isize,
            1,
        );
    }
}

/// Symmetric banded matrix stored by rows of its lower band.
///
/// Row `i` keeps columns `i - bandwidth ..= i`; entry `(i, j)` lives at
/// `i * (bandwidth + 1) + (bandwidth - (i - j))`.
#[derive(Clone, Debug)]
pub struct BandMatrix {
    n: usize,
    bandwidth: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, bandwidth: usize) -> Self {
        Self { n, bandwidth, data: vec![0.0; n * (bandwidth + 1)] }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    pub fn clear(&mut self) {
        self.data.iter_mut().for_each(|v| *v = 0.0);
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.bandwidth);
        i * (self.bandwidth + 1) + (self.bandwidth - (i - j))
    }

    /// Adds `v` to the symmetric pair `(i, j)` / `(j, i)`; only the lower entry is stored.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        let k = self.idx(r, c);
        self.data[k] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        if r - c > self.bandwidth {
            0.0
        } else {
            self.data[self.idx(r, c)]
        }
    }

    /// Replaces row and column `i` by the identity row, used for homogeneous
    /// Dirichlet conditions.
    pub fn constrain(&mut self, i: usize) {
        let lo = i.saturating_sub(self.bandwidth);
        for j in lo..i {
            let k = self.idx(i, j);
            self.data[k] = 0.0;
        }
        let hi = (i + self.bandwidth).min(self.n - 1);
        for r in i + 1..=hi {
            let k = self.idx(r, i);
            self.data[k] = 0.0;
        }
        let k = self.idx(i, i);
        self.data[k] = 1.0;
    }

    /// In-place Cholesky factorisation `A = L Lᵀ`.
    pub fn cholesky(mut self) -> Result<BandCholesky> {
        let bw = self.bandwidth;
        let w = bw + 1;
        for i in 0..self.n {
            let j0 = i.saturating_sub(bw);
            for j in j0..=i {
                // L[i][j] = (A[i][j] - sum_k L[i][k] L[j][k]) / L[j][j]
                let k0 = j0.max(j.saturating_sub(bw));
                let mut s = self.data[i * w + bw - (i - j)];
                let ri = i * w + bw - i;
                let rj = j * w + bw - j;
                for k in k0..j {
                    s -= self.data[ri + k] * self.data[rj + k];
                }
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(Error::Solver(format!(
                            "matrix is not positive definite at row {i} (pivot {s:.3e})"
                        )));
                    }
                    self.data[i * w + bw] = s.sqrt();
                } else {
                    self.data[i * w + bw - (i - j)] = s / self.data[j * w + bw];
                }
            }
        }
        Ok(BandCholesky { factor: self })
    }
}

/// Lower-triangular band factor produced by [`BandMatrix::cholesky`].
#[derive(Clone, Debug)]
pub struct BandCholesky {
    factor: BandMatrix,
}

impl BandCholesky {
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.factor.n;
        let bw = self.factor.bandwidth;
        let w = bw + 1;
        let d = &self.factor.data;
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            let row = i * w + bw - i;
            let mut s = b[i];
            for j in j0..i {
                s -= d[row + j] * b[j];
            }
            b[i] = s / d[i * w + bw];
        }
        for i in (0..n).rev() {
            let hi = (i + bw).min(n - 1);
            let mut s = b[i];
            for r in i + 1..=hi {
                s -= d[r * w + bw - (r - i)] * b[r];
            }
            b[i] = s / d[i * w + bw];
        }
    }
}

/// Reverse Cuthill–McKee ordering of an undirected graph given as adjacency
/// lists. Returns `order` with `order[new] = old`.
pub fn reverse_cuthill_mckee(adjacency: &[Vec<usize>]) -> Vec<usize> {
    let n = adjacency.len();
    let degree: Vec<usize> = adjacency.iter().map(Vec::len).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    while order.len() < n {
        let start = pseudo_peripheral(adjacency, &degree, &visited);
        visited[start] = true;
        let mut head = order.len();
        order.push(start);
        while head < order.len() {
            let v = order[head];
            head += 1;
            let mut next: Vec<usize> = adjacency[v].iter().copied().filter(|&u| !visited[u]).collect();
            next.sort_by_key(|&u| (degree[u], u));
            for u in next {
                visited[u] = true;
                order.push(u);
            }
        }
    }
    order.reverse();
    order
}

fn pseudo_peripheral(adjacency: &[Vec<usize>], degree: &[usize], visited: &[bool]) -> usize {
    let mut start = (0..adjacency.len())
        .filter(|&v| !visited[v])
        .min_by_key(|&v| (degree[v], v))
        .expect("at least one unvisited vertex");
    let mut best_depth = 0;
    for _ in 0..8 {
        let levels = bfs_levels(adjacency, start, visited);
        let depth = *levels.iter().flatten().max().unwrap_or(&0);
        if depth <= best_depth && best_depth > 0 {
            break;
        }
        best_depth = depth;
        let far = (0..adjacency.len())
            .filter(|&v| levels[v] == Some(depth))
            .min_by_key(|&v| (degree[v], v))
            .unwrap_or(start);
        if far == start {
            break;
        }
        start = far;
    }
    start
}

fn bfs_levels(adjacency: &[Vec<usize>], start: usize, visited: &[bool]) -> Vec<Option<usize>> {
    let mut level = vec![None; adjacency.len()];
    level[start] = Some(0);
    let mut queue = std::collections::VecDeque::from([start]);
    while let Some(v) = queue.pop_front() {
        let lv = level[v].unwrap_or(0);
        for &u in &adjacency[v] {
            if !visited[u] && level[u].is_none() {
                level[u] = Some(lv + 1);
                queue.push_back(u);
            }
        }
    }
    level
}
