//! Dense rank-3 tensor and matrix kernels.
//!
//! Everything here works on row-major `f64` storage. The mode-n unfolding
//! convention is fixed once for the whole crate: `unfold(t, mode)` has one
//! row per index of the chosen mode, and its columns iterate the remaining
//! modes in original order with the *later* mode fastest. All rank and
//! trace-norm quantities are derived from a singular value decomposition.

use crate::{Error, Result};

/// One of the three modes of a rank-3 tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    One,
    Two,
    Three,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::One, Mode::Two, Mode::Three];

    /// Zero-based axis index.
    pub fn axis(self) -> usize {
        match self {
            Mode::One => 0,
            Mode::Two => 1,
            Mode::Three => 2,
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.axis() + 1)
    }
}

/// A dense matrix stored in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.values[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_values(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                op: "DenseMatrix::from_values",
                detail: format!("{} values for a {rows}x{cols} matrix", values.len()),
            });
        }
        Ok(Self { rows, cols, values })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.values[r * self.cols + c] = v;
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.values[c * self.rows + r] = self.values[r * self.cols + c];
            }
        }
        out
    }

    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.rows {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                detail: format!(
                    "{}x{} times {}x{}",
                    self.rows, self.cols, other.rows, other.cols
                ),
            });
        }
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.values[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let src = &other.values[k * other.cols..(k + 1) * other.cols];
                let dst = &mut out.values[i * other.cols..(i + 1) * other.cols];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += a * s;
                }
            }
        }
        Ok(out)
    }

    /// Standard Kronecker product; `(a ⊗ b)` has shape
    /// `(a.rows * b.rows) x (a.cols * b.cols)`.
    pub fn kronecker(&self, other: &DenseMatrix) -> DenseMatrix {
        let rows = self.rows * other.rows;
        let cols = self.cols * other.cols;
        let mut out = DenseMatrix::zeros(rows, cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                let a = self.values[i * self.cols + j];
                if a == 0.0 {
                    continue;
                }
                for p in 0..other.rows {
                    for q in 0..other.cols {
                        out.values[(i * other.rows + p) * cols + (j * other.cols + q)] =
                            a * other.values[p * other.cols + q];
                    }
                }
            }
        }
        out
    }

    /// Horizontal concatenation `[self, other]`.
    pub fn concat_cols(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.rows != other.rows {
            return Err(Error::ShapeMismatch {
                op: "concat_cols",
                detail: format!("{} rows vs {} rows", self.rows, other.rows),
            });
        }
        let cols = self.cols + other.cols;
        let mut out = DenseMatrix::zeros(self.rows, cols);
        for r in 0..self.rows {
            out.values[r * cols..r * cols + self.cols]
                .copy_from_slice(&self.values[r * self.cols..(r + 1) * self.cols]);
            out.values[r * cols + self.cols..(r + 1) * cols]
                .copy_from_slice(&other.values[r * other.cols..(r + 1) * other.cols]);
        }
        Ok(out)
    }

    pub fn sub(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn add(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    fn zip_with(
        &self,
        other: &DenseMatrix,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<DenseMatrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::ShapeMismatch {
                op,
                detail: format!(
                    "{}x{} vs {}x{}",
                    self.rows, self.cols, other.rows, other.cols
                ),
            });
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            values,
        })
    }

    pub fn scaled(&self, s: f64) -> DenseMatrix {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            values: self.values.iter().map(|v| v * s).collect(),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// A dense rank-3 tensor stored in row-major order (last index fastest).
#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor3 {
    shape: (usize, usize, usize),
    values: Vec<f64>,
}

impl DenseTensor3 {
    pub fn zeros(shape: (usize, usize, usize)) -> Self {
        Self {
            shape,
            values: vec![0.0; shape.0 * shape.1 * shape.2],
        }
    }

    pub fn from_values(shape: (usize, usize, usize), values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.0 * shape.1 * shape.2 {
            return Err(Error::ShapeMismatch {
                op: "DenseTensor3::from_values",
                detail: format!(
                    "{} values for a {}x{}x{} tensor",
                    values.len(),
                    shape.0,
                    shape.1,
                    shape.2
                ),
            });
        }
        Ok(Self { shape, values })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.shape.1 + j) * self.shape.2 + k
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.idx(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        let idx = self.idx(i, j, k);
        self.values[idx] = v;
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, s: f64) -> DenseTensor3 {
        DenseTensor3 {
            shape: self.shape,
            values: self.values.iter().map(|v| v * s).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &DenseTensor3) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op: "add_assign",
                detail: format!("{:?} vs {:?}", self.shape, other.shape),
            });
        }
        for (d, s) in self.values.iter_mut().zip(&other.values) {
            *d += s;
        }
        Ok(())
    }

    pub fn sub(&self, other: &DenseTensor3) -> Result<DenseTensor3> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op: "sub",
                detail: format!("{:?} vs {:?}", self.shape, other.shape),
            });
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect();
        Ok(DenseTensor3 {
            shape: self.shape,
            values,
        })
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Mode-n product: contracts the chosen mode with the columns of `m`.
    /// The result replaces that mode's extent by `m.rows()`.
    pub fn mode_product(&self, m: &DenseMatrix, mode: Mode) -> Result<DenseTensor3> {
        let (n1, n2, n3) = self.shape;
        let contracted = match mode {
            Mode::One => n1,
            Mode::Two => n2,
            Mode::Three => n3,
        };
        if m.cols() != contracted {
            return Err(Error::ShapeMismatch {
                op: "mode_product",
                detail: format!(
                    "matrix is {}x{} but mode-{mode} extent is {contracted}",
                    m.rows(),
                    m.cols()
                ),
            });
        }
        let p = m.rows();
        match mode {
            Mode::One => {
                let mut out = DenseTensor3::zeros((p, n2, n3));
                for a in 0..p {
                    for i in 0..n1 {
                        let w = m.get(a, i);
                        if w == 0.0 {
                            continue;
                        }
                        let src = &self.values[i * n2 * n3..(i + 1) * n2 * n3];
                        let dst = &mut out.values[a * n2 * n3..(a + 1) * n2 * n3];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += w * s;
                        }
                    }
                }
                Ok(out)
            }
            Mode::Two => {
                let mut out = DenseTensor3::zeros((n1, p, n3));
                for i in 0..n1 {
                    for a in 0..p {
                        for j in 0..n2 {
                            let w = m.get(a, j);
                            if w == 0.0 {
                                continue;
                            }
                            let src = &self.values[(i * n2 + j) * n3..(i * n2 + j + 1) * n3];
                            let dst = &mut out.values[(i * p + a) * n3..(i * p + a + 1) * n3];
                            for (d, s) in dst.iter_mut().zip(src) {
                                *d += w * s;
                            }
                        }
                    }
                }
                Ok(out)
            }
            Mode::Three => {
                let mut out = DenseTensor3::zeros((n1, n2, p));
                for ij in 0..n1 * n2 {
                    let src = &self.values[ij * n3..(ij + 1) * n3];
                    let dst = &mut out.values[ij * p..(ij + 1) * p];
                    for a in 0..p {
                        let mut s = 0.0;
                        for k in 0..n3 {
                            s += m.get(a, k) * src[k];
                        }
                        dst[a] = s;
                    }
                }
                Ok(out)
            }
        }
    }

    /// Mode-n unfolding. Rows follow the chosen mode; columns iterate the
    /// remaining modes in original order with the later mode fastest.
    pub fn unfold(&self, mode: Mode) -> DenseMatrix {
        let (n1, n2, n3) = self.shape;
        match mode {
            Mode::One => {
                // Row-major layout already matches: columns are (j, k) with k fastest.
                DenseMatrix {
                    rows: n1,
                    cols: n2 * n3,
                    values: self.values.clone(),
                }
            }
            Mode::Two => {
                let mut m = DenseMatrix::zeros(n2, n1 * n3);
                for i in 0..n1 {
                    for j in 0..n2 {
                        for k in 0..n3 {
                            m.values[j * (n1 * n3) + i * n3 + k] = self.get(i, j, k);
                        }
                    }
                }
                m
            }
            Mode::Three => {
                let mut m = DenseMatrix::zeros(n3, n1 * n2);
                for i in 0..n1 {
                    for j in 0..n2 {
                        for k in 0..n3 {
                            m.values[k * (n1 * n2) + i * n2 + j] = self.get(i, j, k);
                        }
                    }
                }
                m
            }
        }
    }

    /// Inverse of [`DenseTensor3::unfold`] for the given mode and shape.
    pub fn fold(m: &DenseMatrix, mode: Mode, shape: (usize, usize, usize)) -> Result<DenseTensor3> {
        let (n1, n2, n3) = shape;
        let (want_rows, want_cols) = match mode {
            Mode::One => (n1, n2 * n3),
            Mode::Two => (n2, n1 * n3),
            Mode::Three => (n3, n1 * n2),
        };
        if m.rows() != want_rows || m.cols() != want_cols {
            return Err(Error::ShapeMismatch {
                op: "fold",
                detail: format!(
                    "matrix is {}x{} but mode-{mode} of {shape:?} needs {want_rows}x{want_cols}",
                    m.rows(),
                    m.cols()
                ),
            });
        }
        let mut t = DenseTensor3::zeros(shape);
        match mode {
            Mode::One => t.values.copy_from_slice(m.values()),
            Mode::Two => {
                for i in 0..n1 {
                    for j in 0..n2 {
                        for k in 0..n3 {
                            t.values[(i * n2 + j) * n3 + k] = m.values[j * (n1 * n3) + i * n3 + k];
                        }
                    }
                }
            }
            Mode::Three => {
                for i in 0..n1 {
                    for j in 0..n2 {
                        for k in 0..n3 {
                            t.values[(i * n2 + j) * n3 + k] = m.values[k * (n1 * n2) + i * n2 + j];
                        }
                    }
                }
            }
        }
        Ok(t)
    }
}

/// Singular value decomposition `m = u * diag(sigma) * v^T` with
/// `sigma` sorted descending; `u` is `rows x k`, `v` is `cols x k`.
#[derive(Clone, Debug)]
pub struct Svd {
    pub u: DenseMatrix,
    pub sigma: Vec<f64>,
    pub v: DenseMatrix,
}

impl Svd {
    /// Drops singular values at or below `rel_tol * sigma_max`, returning the
    /// compact factors.
    pub fn compact(&self, rel_tol: f64) -> Svd {
        let smax = self.sigma.first().copied().unwrap_or(0.0);
        let thresh = rel_tol * smax;
        let r = self.sigma.iter().take_while(|&&s| s > thresh).count();
        let mut u = DenseMatrix::zeros(self.u.rows(), r);
        let mut v = DenseMatrix::zeros(self.v.rows(), r);
        for c in 0..r {
            for row in 0..self.u.rows() {
                u.set(row, c, self.u.get(row, c));
            }
            for row in 0..self.v.rows() {
                v.set(row, c, self.v.get(row, c));
            }
        }
        Svd {
            u,
            sigma: self.sigma[..r].to_vec(),
            v,
        }
    }
}

/// Relative threshold used by [`numerical_rank`]: a singular value counts
/// toward the rank when it exceeds `RANK_REL_TOL * sigma_max * max(rows, cols)`.
pub const RANK_REL_TOL: f64 = 1e-10;

/// Singular value cutoff (relative to `sigma_max`) for compact SVDs feeding
/// inverse square-root factors.
pub const COMPACT_SVD_REL_TOL: f64 = 1e-12;

/// Full (thin) SVD of a dense matrix.
pub fn svd(m: &DenseMatrix) -> Result<Svd> {
    let (rows, cols) = (m.rows(), m.cols());
    let k = rows.min(cols);
    if k == 0 {
        return Ok(Svd {
            u: DenseMatrix::zeros(rows, 0),
            sigma: Vec::new(),
            v: DenseMatrix::zeros(cols, 0),
        });
    }
    let dm = nalgebra::DMatrix::from_row_slice(rows, cols, m.values());
    let svd = dm
        .try_svd(true, true, f64::EPSILON, 0)
        .ok_or(Error::SvdFailure { rows, cols })?;
    let nu = svd.u.ok_or(Error::SvdFailure { rows, cols })?;
    let nvt = svd.v_t.ok_or(Error::SvdFailure { rows, cols })?;

    // Extract triplets and order by singular value, largest first.
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut u = DenseMatrix::zeros(rows, k);
    let mut v = DenseMatrix::zeros(cols, k);
    let mut sigma = Vec::with_capacity(k);
    for (c, &src) in order.iter().enumerate() {
        sigma.push(svd.singular_values[src]);
        for r in 0..rows {
            u.set(r, c, nu[(r, src)]);
        }
        for r in 0..cols {
            v.set(r, c, nvt[(src, r)]);
        }
    }
    Ok(Svd { u, sigma, v })
}

/// Sum of singular values (trace norm / nuclear norm).
pub fn trace_norm(m: &DenseMatrix) -> Result<f64> {
    Ok(singular_values(m)?.iter().sum())
}

/// Singular values only, sorted descending.
pub fn singular_values(m: &DenseMatrix) -> Result<Vec<f64>> {
    let (rows, cols) = (m.rows(), m.cols());
    if rows.min(cols) == 0 {
        return Ok(Vec::new());
    }
    let dm = nalgebra::DMatrix::from_row_slice(rows, cols, m.values());
    let sv = dm
        .try_svd(false, false, f64::EPSILON, 0)
        .ok_or(Error::SvdFailure { rows, cols })?;
    let mut s: Vec<f64> = sv.singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    Ok(s)
}

/// Count of singular values above the relative threshold; the rank of a zero
/// matrix is 0.
pub fn numerical_rank(m: &DenseMatrix) -> Result<usize> {
    let s = singular_values(m)?;
    let smax = s.first().copied().unwrap_or(0.0);
    if smax == 0.0 {
        return Ok(0);
    }
    let thresh = RANK_REL_TOL * smax * m.rows().max(m.cols()) as f64;
    Ok(s.iter().filter(|&&x| x > thresh).count())
}
