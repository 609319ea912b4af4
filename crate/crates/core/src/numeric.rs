//! Dense linear algebra and kernel primitives.
//!
//! Everything here is a pure function of its inputs. The Gram matrix of the
//! Gaussian kernel is symmetric positive definite for distinct points but
//! becomes badly conditioned quickly as the kernel widens, so it is never
//! inverted: [`KernelSolver`] factors it once (Cholesky with a small diagonal
//! jitter, or an SVD least-squares solve for rectangular systems) and the
//! factorization is reused for every right-hand side.

use crate::error::{Error, Result};
use nalgebra::DMatrix;

/// Dense row-major matrix of finite `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major data, rejecting wrong lengths and
    /// non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim(rows * cols, data.len(), "matrix entry count"));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "matrix entry ({}, {})",
                pos / cols.max(1),
                pos % cols.max(1)
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Stacks equally long rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::dim(cols, r.len(), "row length"));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
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
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> + '_ {
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(Error::dim(self.cols, rhs.rows, "matmul inner dimension"));
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(rhs.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self^T v` for a vector with `rows` entries.
    pub fn tr_mul_vec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (i, &vi) in v.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += a * vi;
            }
        }
        out
    }

    /// `self v` for a vector with `cols` entries.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.cols);
        self.row_iter()
            .map(|r| r.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Maximum absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Infinity norm (maximum absolute row sum).
    pub fn norm_inf(&self) -> f64 {
        self.row_iter()
            .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.rows == self.cols
            && (0..self.rows)
                .all(|i| (0..i).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= tol))
    }

    pub fn sub(&self, rhs: &Matrix) -> Result<Matrix> {
        if (self.rows, self.cols) != (rhs.rows, rhs.cols) {
            return Err(Error::dim(self.data.len(), rhs.data.len(), "matrix subtraction"));
        }
        let data = self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    /// In-place `self += alpha * rhs`.
    pub fn axpy(&mut self, alpha: f64, rhs: &Matrix) {
        debug_assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a += alpha * b;
        }
    }

    pub(crate) fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    pub(crate) fn from_dmatrix(m: &DMatrix<f64>) -> Matrix {
        let mut out = Matrix::zeros(m.nrows(), m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                out[(i, j)] = m[(i, j)];
            }
        }
        out
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Options for kernel-system solves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    /// Added to the diagonal of the Gram matrix before factoring.
    pub ridge_jitter: f64,
    /// A warning is logged when the estimated condition number exceeds this.
    pub max_condition_warn: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            ridge_jitter: 1e-10,
            max_condition_warn: 1e12,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.ridge_jitter >= 0.0 && self.ridge_jitter.is_finite()) {
            return Err(Error::invalid("ridge_jitter", "must be finite and >= 0"));
        }
        if !(self.max_condition_warn > 0.0) {
            return Err(Error::invalid("max_condition_warn", "must be > 0"));
        }
        Ok(())
    }
}

/// Normwise relative backward error accepted by [`solve_linear`]:
/// `‖(G + jI)A − B‖∞ ≤ RESIDUAL_TOL · (‖G + jI‖∞‖A‖∞ + ‖B‖∞)`.
pub const RESIDUAL_TOL: f64 = 1e-8;

#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Gaussian kernel `exp(-‖x − c‖² / width)`.
#[inline]
pub fn gaussian(x: &[f64], center: &[f64], width: f64) -> f64 {
    (-squared_distance(x, center) / width).exp()
}

/// `G[i][j] = exp(-‖points_i − centers_j‖² / kernel_width)`.
pub fn gram_matrix(points: &Matrix, centers: &Matrix, kernel_width: f64) -> Result<Matrix> {
    if !(kernel_width > 0.0 && kernel_width.is_finite()) {
        return Err(Error::invalid("kernel_width", format!("must be > 0, got {kernel_width}")));
    }
    if points.cols() != centers.cols() {
        return Err(Error::dim(centers.cols(), points.cols(), "gram_matrix point dimension"));
    }
    let mut g = Matrix::zeros(points.rows(), centers.rows());
    for i in 0..points.rows() {
        let p = points.row(i);
        for j in 0..centers.rows() {
            g[(i, j)] = gaussian(p, centers.row(j), kernel_width);
        }
    }
    Ok(g)
}

#[derive(Debug, Clone)]
enum Factor {
    /// Lower Cholesky factor of `G + jitter·I`.
    Cholesky(Matrix),
    /// Minimum-norm least-squares solve for rectangular `G`.
    LeastSquares(nalgebra::SVD<f64, nalgebra::Dyn, nalgebra::Dyn>),
}

/// A factored kernel system `G·A = B`, reusable across right-hand sides.
#[derive(Debug, Clone)]
pub struct KernelSolver {
    factor: Factor,
    rows: usize,
    cols: usize,
    jitter: f64,
}

impl KernelSolver {
    /// Factors `G` once. Square systems use Cholesky of `G + jitter·I`;
    /// tall systems (fewer centers than samples) use an SVD least-squares solve.
    pub fn factor(g: &Matrix, opts: &SolveOptions) -> Result<Self> {
        opts.validate()?;
        if g.rows() == 0 || g.cols() == 0 {
            return Err(Error::invalid("G", "empty matrix"));
        }
        let factor = if g.rows() == g.cols() {
            let l = cholesky_lower(g, opts.ridge_jitter)?;
            let (lo, hi) = (0..l.rows())
                .map(|i| l[(i, i)])
                .fold((f64::INFINITY, 0.0f64), |(lo, hi), d| (lo.min(d), hi.max(d)));
            let cond_estimate = (hi / lo).powi(2);
            if cond_estimate > opts.max_condition_warn {
                log::warn!(
                    "kernel matrix is ill-conditioned (estimated condition {cond_estimate:.3e})"
                );
            }
            Factor::Cholesky(l)
        } else if g.rows() > g.cols() {
            let svd = nalgebra::SVD::new(g.to_dmatrix(), true, true);
            let smax = svd.singular_values.max();
            let smin = svd.singular_values.min();
            if smin <= 0.0 || smax / smin > opts.max_condition_warn {
                log::warn!("least-squares kernel system is ill-conditioned ({smax:.3e}/{smin:.3e})");
            }
            Factor::LeastSquares(svd)
        } else {
            return Err(Error::invalid(
                "G",
                format!("underdetermined system ({} rows < {} cols)", g.rows(), g.cols()),
            ));
        };
        Ok(Self {
            factor,
            rows: g.rows(),
            cols: g.cols(),
            jitter: opts.ridge_jitter,
        })
    }

    /// Number of unknown rows (centers).
    pub fn unknowns(&self) -> usize {
        self.cols
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Solves for `A` given `B` (`rows × L`).
    pub fn solve(&self, b: &Matrix) -> Result<Matrix> {
        if b.rows() != self.rows {
            return Err(Error::dim(self.rows, b.rows(), "right-hand side rows"));
        }
        let out = match &self.factor {
            Factor::Cholesky(l) => cholesky_solve(l, b),
            Factor::LeastSquares(svd) => {
                // Tikhonov-filtered pseudo-inverse: x = V diag(s / (s² + j)) Uᵀ b.
                let u = svd.u.as_ref().expect("left singular vectors computed");
                let v_t = svd.v_t.as_ref().expect("right singular vectors computed");
                let smax = svd.singular_values.max();
                let filtered = svd.singular_values.map(|s| {
                    if s <= 1e-15 * smax {
                        0.0
                    } else {
                        s / (s * s + self.jitter)
                    }
                });
                let mut utb = u.transpose() * b.to_dmatrix();
                for (i, mut row) in utb.row_iter_mut().enumerate() {
                    row *= filtered[i];
                }
                Matrix::from_dmatrix(&(v_t.transpose() * utb))
            }
        };
        if out.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("kernel solve produced non-finite coefficients".into()));
        }
        Ok(out)
    }
}

/// Lower Cholesky factor of `a + jitter·I`; names the failing pivot.
pub(crate) fn cholesky_lower(a: &Matrix, jitter: f64) -> Result<Matrix> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::dim(n, a.cols(), "Cholesky requires a square matrix"));
    }
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)] + jitter;
        {
            let lj = l.row(j);
            d -= lj[..j].iter().map(|v| v * v).sum::<f64>();
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::Singular(format!(
                "Cholesky pivot {j} is {d:.3e} (matrix not positive definite even with jitter {jitter:.1e})"
            )));
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in j + 1..n {
            let s: f64 = {
                let (li, lj) = (l.row(i), l.row(j));
                li[..j].iter().zip(&lj[..j]).map(|(x, y)| x * y).sum()
            };
            l[(i, j)] = (a[(i, j)] - s) / djj;
        }
    }
    Ok(l)
}

/// Solves `L Lᵀ X = B` column by column.
pub(crate) fn cholesky_solve(l: &Matrix, b: &Matrix) -> Matrix {
    let n = l.rows();
    let k = b.cols();
    let mut x = b.clone();
    // forward: L y = b
    for i in 0..n {
        for c in 0..k {
            let mut s = x[(i, c)];
            for j in 0..i {
                s -= l[(i, j)] * x[(j, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
    }
    // backward: Lᵀ x = y
    for i in (0..n).rev() {
        for c in 0..k {
            let mut s = x[(i, c)];
            for j in i + 1..n {
                s -= l[(j, i)] * x[(j, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
    }
    x
}

/// Solves `(G + jitter·I)·A = B` for square `G` with one step of iterative
/// refinement, and checks the normwise backward error against
/// [`RESIDUAL_TOL`].
pub fn solve_linear(g: &Matrix, b: &Matrix, opts: &SolveOptions) -> Result<Matrix> {
    opts.validate()?;
    if g.rows() != g.cols() {
        return Err(Error::dim(g.rows(), g.cols(), "solve_linear requires square G"));
    }
    if b.rows() != g.rows() {
        return Err(Error::dim(g.rows(), b.rows(), "right-hand side rows"));
    }
    let l = cholesky_lower(g, opts.ridge_jitter)?;
    let mut a = cholesky_solve(&l, b);
    let residual = |a: &Matrix| -> Result<Matrix> {
        let mut r = g.matmul(a)?;
        r.axpy(opts.ridge_jitter, a);
        r.sub(b)
    };
    let r = residual(&a)?;
    let correction = cholesky_solve(&l, &r);
    a.axpy(-1.0, &correction);
    let r = residual(&a)?;
    let scale = (g.norm_inf() + opts.ridge_jitter) * a.norm_inf() + b.norm_inf();
    let err = r.norm_inf();
    if !err.is_finite() || err > RESIDUAL_TOL * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::Singular(format!(
            "residual {err:.3e} exceeds tolerance (scale {scale:.3e})"
        )));
    }
    if a.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("solution contains non-finite entries".into()));
    }
    Ok(a)
}

/// Central difference `(F(p + s·d) − F(p − s·d)) / 2s`.
pub fn finite_difference_directional<F>(
    functional: F,
    point: &[f64],
    direction: &[f64],
    step: f64,
) -> Result<f64>
where
    F: Fn(&[f64]) -> f64,
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::invalid("step", "must be > 0"));
    }
    if point.len() != direction.len() {
        return Err(Error::dim(point.len(), direction.len(), "direction length"));
    }
    let shifted = |sign: f64| -> Vec<f64> {
        point
            .iter()
            .zip(direction)
            .map(|(p, d)| p + sign * step * d)
            .collect()
    };
    let plus = functional(&shifted(1.0));
    let minus = functional(&shifted(-1.0));
    if !plus.is_finite() || !minus.is_finite() {
        return Err(Error::NonFinite(format!(
            "functional evaluated to {plus} / {minus} at ±{step}"
        )));
    }
    Ok((plus - minus) / (2.0 * step))
}

/// Default central-difference step on [0,1]-normalized inputs.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Inverse and determinant of a small SPD matrix via Cholesky.
pub(crate) fn spd_inverse_and_det(a: &Matrix) -> Result<(Matrix, f64)> {
    let l = cholesky_lower(a, 0.0)?;
    let det_sqrt: f64 = (0..l.rows()).map(|i| l[(i, i)]).product();
    let inv = cholesky_solve(&l, &Matrix::identity(a.rows()));
    Ok((inv, det_sqrt * det_sqrt))
}
