//! Softmax-of-RBF class-probability estimator.
//!
//! `h^j(x) = Σ_i A[i, j]·exp(−‖x − center_i‖² / c)` and `f = softmax(h)`.
//! All evaluation takes inputs already mapped to the unit box; the stored
//! [`Normalization`] is only applied by the raw-input prediction path.

use crate::error::{Error, Result};
use crate::harness::Normalization;
use crate::numeric::{squared_distance, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// The trainable estimator: RBF centers, kernel width and coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct RbfModel {
    centers: Matrix,
    kernel_width: f64,
    coefficients: Matrix,
    normalization: Normalization,
}

/// Plain-data copy of every field of an [`RbfModel`], for persistence.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSnapshot {
    pub feature_dim: usize,
    pub num_classes: usize,
    pub kernel_width: f64,
    /// Per-dimension `(min, max)` used to map raw inputs into [0,1].
    pub normalization: Vec<(f64, f64)>,
    /// Row-major `num_centers × feature_dim`.
    pub centers: Vec<f64>,
    /// Row-major `num_centers × num_classes`.
    pub coefficients: Vec<f64>,
}

/// Everything the geometric and loss gradients need at one input point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointGeometry {
    pub h: Vec<f64>,
    pub f: Vec<f64>,
    /// `∂f/∂h`, `L × L`.
    pub jac_fh: Matrix,
    /// First partials `f^a_i`, `L × N`.
    pub df: Matrix,
    /// Second partials: `d2f[a]` is the symmetric `N × N` Hessian of `f^a`.
    pub d2f: Vec<Matrix>,
}

impl PointGeometry {
    pub fn num_classes(&self) -> usize {
        self.f.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.df.cols()
    }
}

impl RbfModel {
    pub fn new(
        centers: Matrix,
        kernel_width: f64,
        coefficients: Matrix,
        normalization: Normalization,
    ) -> Result<Self> {
        if !(kernel_width > 0.0 && kernel_width.is_finite()) {
            return Err(Error::invalid("kernel_width", format!("must be > 0, got {kernel_width}")));
        }
        if centers.rows() == 0 || centers.cols() == 0 {
            return Err(Error::invalid("centers", "need at least one center of dimension >= 1"));
        }
        if coefficients.rows() != centers.rows() {
            return Err(Error::dim(centers.rows(), coefficients.rows(), "coefficient rows"));
        }
        if coefficients.cols() < 2 {
            return Err(Error::invalid("num_classes", "need at least 2 classes"));
        }
        if normalization.dim() != centers.cols() {
            return Err(Error::dim(centers.cols(), normalization.dim(), "normalization dimension"));
        }
        Ok(Self {
            centers,
            kernel_width,
            coefficients,
            normalization,
        })
    }

    pub fn centers(&self) -> &Matrix {
        &self.centers
    }

    pub fn kernel_width(&self) -> f64 {
        self.kernel_width
    }

    pub fn coefficients(&self) -> &Matrix {
        &self.coefficients
    }

    pub fn normalization(&self) -> &Normalization {
        &self.normalization
    }

    pub fn num_classes(&self) -> usize {
        self.coefficients.cols()
    }

    pub fn feature_dim(&self) -> usize {
        self.centers.cols()
    }

    pub fn num_centers(&self) -> usize {
        self.centers.rows()
    }

    /// Replaces the coefficient matrix (same shape).
    pub fn set_coefficients(&mut self, coefficients: Matrix) -> Result<()> {
        if (coefficients.rows(), coefficients.cols())
            != (self.coefficients.rows(), self.coefficients.cols())
        {
            return Err(Error::dim(
                self.coefficients.rows() * self.coefficients.cols(),
                coefficients.rows() * coefficients.cols(),
                "coefficient shape",
            ));
        }
        self.coefficients = coefficients;
        Ok(())
    }

    pub fn snapshot(&self) -> ModelSnapshot {
        ModelSnapshot {
            feature_dim: self.feature_dim(),
            num_classes: self.num_classes(),
            kernel_width: self.kernel_width,
            normalization: self.normalization.ranges().to_vec(),
            centers: self.centers.as_slice().to_vec(),
            coefficients: self.coefficients.as_slice().to_vec(),
        }
    }

    pub fn from_snapshot(s: ModelSnapshot) -> Result<Self> {
        if s.feature_dim == 0 || s.centers.len() % s.feature_dim != 0 {
            return Err(Error::invalid("centers", "length is not a multiple of feature_dim"));
        }
        let m = s.centers.len() / s.feature_dim;
        let centers = Matrix::new(m, s.feature_dim, s.centers)?;
        let coefficients = Matrix::new(m, s.num_classes, s.coefficients)?;
        let normalization = Normalization::new(s.normalization)?;
        Self::new(centers, s.kernel_width, coefficients, normalization)
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.feature_dim() {
            return Err(Error::dim(self.feature_dim(), x.len(), "input dimension"));
        }
        Ok(())
    }

    /// `h(x)` for a normalized input.
    pub fn eval_h(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let l = self.num_classes();
        let mut h = vec![0.0; l];
        for i in 0..self.num_centers() {
            let phi = (-squared_distance(x, self.centers.row(i)) / self.kernel_width).exp();
            for (hj, a) in h.iter_mut().zip(self.coefficients.row(i)) {
                *hj += a * phi;
            }
        }
        Ok(h)
    }

    /// `f(x) = softmax(h(x))` for a normalized input.
    pub fn eval_f(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.eval_h(x)?))
    }

    /// `f` and its first partials only; cheaper than [`Self::point_geometry`].
    pub fn first_order(&self, x: &[f64]) -> Result<(Vec<f64>, Matrix)> {
        self.check_dim(x)?;
        let (n, l) = (self.feature_dim(), self.num_classes());
        let scale = -2.0 / self.kernel_width;
        let mut h = vec![0.0; l];
        let mut dh = Matrix::zeros(l, n);
        let mut diff = vec![0.0; n];
        for i in 0..self.num_centers() {
            let c = self.centers.row(i);
            for (d, (xk, ck)) in diff.iter_mut().zip(x.iter().zip(c)) {
                *d = xk - ck;
            }
            let phi = (-diff.iter().map(|d| d * d).sum::<f64>() / self.kernel_width).exp();
            for (j, a) in self.coefficients.row(i).iter().enumerate() {
                let w = a * phi;
                h[j] += w;
                for (dst, d) in dh.row_mut(j).iter_mut().zip(&diff) {
                    *dst += scale * w * d;
                }
            }
        }
        let f = softmax(&h);
        let mut df = Matrix::zeros(l, n);
        for k in 0..n {
            let mean: f64 = (0..l).map(|b| f[b] * dh[(b, k)]).sum();
            for a in 0..l {
                df[(a, k)] = f[a] * (dh[(a, k)] - mean);
            }
        }
        Ok((f, df))
    }

    /// `h`, `f`, `∂f/∂h` and the analytic first and second input partials of `f`.
    pub fn point_geometry(&self, x: &[f64]) -> Result<PointGeometry> {
        self.check_dim(x)?;
        let (n, l) = (self.feature_dim(), self.num_classes());
        let c = self.kernel_width;

        // h, ∂h/∂x and Σ_i w_ij d_ik d_il (lower triangle), w_ij = A_ij φ_i(x).
        let mut h = vec![0.0; l];
        let mut dh = Matrix::zeros(l, n);
        let mut outer: Vec<Matrix> = (0..l).map(|_| Matrix::zeros(n, n)).collect();
        let mut diff = vec![0.0; n];
        for i in 0..self.num_centers() {
            let center = self.centers.row(i);
            for (d, (xk, ck)) in diff.iter_mut().zip(x.iter().zip(center)) {
                *d = xk - ck;
            }
            let phi = (-diff.iter().map(|d| d * d).sum::<f64>() / c).exp();
            for (j, a) in self.coefficients.row(i).iter().enumerate() {
                let w = a * phi;
                if w == 0.0 {
                    continue;
                }
                h[j] += w;
                let dh_row = dh.row_mut(j);
                for (dst, d) in dh_row.iter_mut().zip(&diff) {
                    *dst += w * d;
                }
                let o = &mut outer[j];
                for k in 0..n {
                    let wk = w * diff[k];
                    let row = o.row_mut(k);
                    for ll in 0..=k {
                        row[ll] += wk * diff[ll];
                    }
                }
            }
        }
        let g1 = -2.0 / c;
        let g2 = 4.0 / (c * c);
        // ∂²h^j/∂x_k∂x_l = (4/c²) Σ_i w_ij d_ik d_il − (2/c) δ_kl h^j
        let mut d2h = outer;
        for j in 0..l {
            for v in dh.row_mut(j) {
                *v *= g1;
            }
            let m = &mut d2h[j];
            for k in 0..n {
                for ll in 0..=k {
                    let mut v = g2 * m[(k, ll)];
                    if k == ll {
                        v += g1 * h[j];
                    }
                    m[(k, ll)] = v;
                    m[(ll, k)] = v;
                }
            }
        }

        let f = softmax(&h);
        let jac_fh = jacobian_f_h(&f);

        // u_ak = h^a_k − Σ_b f^b h^b_k, so f^a_k = f^a u_ak.
        let mut u = Matrix::zeros(l, n);
        for k in 0..n {
            let mean: f64 = (0..l).map(|b| f[b] * dh[(b, k)]).sum();
            for a in 0..l {
                u[(a, k)] = dh[(a, k)] - mean;
            }
        }
        let mut df = Matrix::zeros(l, n);
        for a in 0..l {
            for k in 0..n {
                df[(a, k)] = f[a] * u[(a, k)];
            }
        }

        // f^a_kl = f^a (u_ak u_al + h^a_kl − Σ_b f^b h^b_kl − Σ_b f^b u_bk u_bl)
        let mut shared = Matrix::zeros(n, n);
        for b in 0..l {
            for k in 0..n {
                for ll in 0..=k {
                    shared[(k, ll)] += f[b] * (d2h[b][(k, ll)] + u[(b, k)] * u[(b, ll)]);
                }
            }
        }
        let mut d2f = Vec::with_capacity(l);
        for a in 0..l {
            let mut m = Matrix::zeros(n, n);
            for k in 0..n {
                for ll in 0..=k {
                    let v = f[a] * (u[(a, k)] * u[(a, ll)] + d2h[a][(k, ll)] - shared[(k, ll)]);
                    m[(k, ll)] = v;
                    m[(ll, k)] = v;
                }
            }
            d2f.push(m);
        }

        Ok(PointGeometry {
            h,
            f,
            jac_fh,
            df,
            d2f,
        })
    }
}

/// Softmax with max-subtraction.
pub fn softmax(h: &[f64]) -> Vec<f64> {
    let max = h.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = h.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    out
}

/// Softmax Jacobian `∂f^a/∂h^b = f^a (δ_ab − f^b)`.
pub fn jacobian_f_h(f: &[f64]) -> Matrix {
    let l = f.len();
    let mut j = Matrix::zeros(l, l);
    for a in 0..l {
        for b in 0..l {
            let delta = if a == b { 1.0 } else { 0.0 };
            j[(a, b)] = f[a] * (delta - f[b]);
        }
    }
    j
}

/// Deterministic k-means (k-means++ seeding, Lloyd iterations) used to pick
/// a subset of RBF centers for large training sets.
pub fn kmeans_centers(points: &Matrix, count: usize, seed: u64) -> Result<Matrix> {
    let m = points.rows();
    if count == 0 || count > m {
        return Err(Error::invalid(
            "center_count",
            format!("must be in 1..={m}, got {count}"),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![rng.gen_range(0..m)];
    let mut nearest: Vec<f64> = (0..m)
        .map(|i| squared_distance(points.row(i), points.row(chosen[0])))
        .collect();
    while chosen.len() < count {
        let total: f64 = nearest.iter().sum();
        let next = if total <= 0.0 {
            // all remaining points coincide with a center
            (0..m).find(|i| !chosen.contains(i)).unwrap_or(0)
        } else {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = m - 1;
            for (i, d) in nearest.iter().enumerate() {
                if target < *d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        };
        chosen.push(next);
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(squared_distance(points.row(i), points.row(next)));
        }
    }
    let n = points.cols();
    let mut centers = Matrix::from_rows(&chosen.iter().map(|&i| points.row(i)).collect::<Vec<_>>())?;
    let mut assignment = vec![usize::MAX; m];
    for _ in 0..100 {
        let mut changed = false;
        for (i, slot) in assignment.iter_mut().enumerate() {
            let p = points.row(i);
            let best = (0..count)
                .map(|j| (j, squared_distance(p, centers.row(j))))
                .fold((0, f64::INFINITY), |acc, (j, d)| if d < acc.1 { (j, d) } else { acc })
                .0;
            if *slot != best {
                *slot = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = Matrix::zeros(count, n);
        let mut counts = vec![0usize; count];
        for (i, &j) in assignment.iter().enumerate() {
            counts[j] += 1;
            for (s, v) in sums.row_mut(j).iter_mut().zip(points.row(i)) {
                *s += v;
            }
        }
        for j in 0..count {
            if counts[j] > 0 {
                for (c, s) in centers.row_mut(j).iter_mut().zip(sums.row(j)) {
                    *c = s / counts[j] as f64;
                }
            }
        }
    }
    Ok(centers)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(centers: Vec<Vec<f64>>, width: f64, coeffs: Vec<Vec<f64>>) -> RbfModel {
        let n = centers[0].len();
        RbfModel::new(
            Matrix::from_rows(&centers).unwrap(),
            width,
            Matrix::from_rows(&coeffs).unwrap(),
            Normalization::unit(n),
        )
        .unwrap()
    }

    fn random_model(rng: &mut ChaCha8Rng, n: usize, l: usize, m: usize) -> RbfModel {
        let centers: Vec<Vec<f64>> = (0..m).map(|_| (0..n).map(|_| rng.gen()).collect()).collect();
        let coeffs: Vec<Vec<f64>> = (0..m)
            .map(|_| (0..l).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        model(centers, rng.gen_range(0.05..0.5), coeffs)
    }

    #[test]
    fn zero_coefficients_give_zero_h() {
        let m = model(vec![vec![0.3, 0.1], vec![0.9, 0.4]], 0.5, vec![vec![0.0; 3]; 2]);
        assert_eq!(m.eval_h(&[0.2, 0.2]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn kernel_is_one_at_center() {
        let m = model(vec![vec![0.4]], 0.1, vec![vec![2.0, -1.0]]);
        assert_eq!(m.eval_h(&[0.4]).unwrap(), vec![2.0, -1.0]);
    }

    #[test]
    fn eval_h_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = random_model(&mut rng, 2, 3, 3);
        let x = [rng.gen::<f64>(), rng.gen::<f64>()];
        let h = m.eval_h(&x).unwrap();
        for j in 0..3 {
            let mut direct = 0.0;
            for i in 0..3 {
                let c = m.centers().row(i);
                let d2 = (x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2);
                direct += m.coefficients()[(i, j)] * (-d2 / m.kernel_width()).exp();
            }
            assert!((h[j] - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0, 0.0]), vec![0.5, 0.5]);
        for v in softmax(&[1.0, 1.0, 1.0]) {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let f = softmax(&[1000.0, 0.0]);
        assert!(f.iter().all(|v| v.is_finite()));
        // log-sum-exp oracle: f_2 = exp(0 − lse) with lse = 1000 + ln(1 + e^-1000)
        assert_eq!(f[0], 1.0);
        assert!(f[1] < 1e-300 || f[1] == 0.0);
    }

    #[test]
    fn jacobian_examples() {
        let j = jacobian_f_h(&[0.5, 0.5]);
        assert_eq!(j.as_slice(), &[0.25, -0.25, -0.25, 0.25]);
        let third = 1.0 / 3.0;
        let j = jacobian_f_h(&[third, third, third]);
        for a in 0..3 {
            for b in 0..3 {
                let expect = if a == b { 2.0 / 9.0 } else { -1.0 / 9.0 };
                assert!((j[(a, b)] - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn jacobian_matches_finite_differences_through_h() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let h: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let f = softmax(&h);
            let j = jacobian_f_h(&f);
            let step = 1e-6;
            for b in 0..4 {
                let mut hp = h.clone();
                let mut hm = h.clone();
                hp[b] += step;
                hm[b] -= step;
                let (fp, fm) = (softmax(&hp), softmax(&hm));
                for a in 0..4 {
                    let fd = (fp[a] - fm[a]) / (2.0 * step);
                    assert!((fd - j[(a, b)]).abs() < 1e-6);
                }
            }
            // constant shifts in h leave f unchanged
            let ones = j.mul_vec(&[1.0; 4]);
            assert!(ones.iter().map(|v| v.abs()).sum::<f64>() < 1e-12);
        }
    }

    #[test]
    fn constant_estimator_geometry_is_flat() {
        let m = model(vec![vec![0.1, 0.2], vec![0.7, 0.5]], 0.3, vec![vec![0.0; 2]; 2]);
        let g = m.point_geometry(&[0.4, 0.6]).unwrap();
        assert_eq!(g.f, vec![0.5, 0.5]);
        assert!(g.df.as_slice().iter().all(|v| *v == 0.0));
        assert!(g.d2f.iter().all(|d| d.as_slice().iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn geometry_simplex_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..20 {
            let (n, l) = (rng.gen_range(1..4), rng.gen_range(2..5));
            let m = random_model(&mut rng, n, l, 4);
            let x: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
            let g = m.point_geometry(&x).unwrap();
            assert!((g.f.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for k in 0..n {
                let s: f64 = (0..l).map(|a| g.df[(a, k)]).sum();
                assert!(s.abs() < 1e-12);
            }
            for d in &g.d2f {
                assert!(d.is_symmetric(0.0));
            }
            for j in 0..l {
                let col: f64 = (0..l).map(|a| g.jac_fh[(a, j)]).sum();
                assert!(col.abs() < 1e-15);
            }
        }
    }

    #[test]
    fn first_order_agrees_with_full_geometry() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_model(&mut rng, 3, 3, 6);
        let x = [0.2, 0.5, 0.8];
        let (f, df) = m.first_order(&x).unwrap();
        let g = m.point_geometry(&x).unwrap();
        for (a, b) in f.iter().zip(&g.f) {
            assert!((a - b).abs() < 1e-15);
        }
        for (a, b) in df.as_slice().iter().zip(g.df.as_slice()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn shift_invariance_of_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let m = random_model(&mut rng, 2, 3, 5);
        // A constant added to every row adds the same Σφ to every h^j.
        let mut m2 = m.clone();
        let common: Vec<f64> = vec![0.4; 3];
        let mut c = m.coefficients().clone();
        for i in 0..c.rows() {
            for (v, s) in c.row_mut(i).iter_mut().zip(&common) {
                *v += s;
            }
        }
        m2.set_coefficients(c).unwrap();
        for _ in 0..10 {
            let x = [rng.gen::<f64>(), rng.gen::<f64>()];
            let (a, b) = (m.eval_f(&x).unwrap(), m2.eval_f(&x).unwrap());
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let m = model(vec![vec![0.1, 0.2]], 0.3, vec![vec![1.0, 0.0]]);
        assert!(matches!(m.eval_h(&[0.1]), Err(Error::DimensionMismatch { .. })));
        assert!(m.point_geometry(&[0.1, 0.2, 0.3]).is_err());
    }

    #[test]
    fn snapshot_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = random_model(&mut rng, 2, 2, 3);
        assert_eq!(RbfModel::from_snapshot(m.snapshot()).unwrap(), m);
    }

    #[test]
    fn kmeans_is_deterministic_and_sized() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rows: Vec<Vec<f64>> = (0..60).map(|_| vec![rng.gen(), rng.gen()]).collect();
        let pts = Matrix::from_rows(&rows).unwrap();
        let a = kmeans_centers(&pts, 7, 42).unwrap();
        let b = kmeans_centers(&pts, 7, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.rows(), a.cols()), (7, 2));
        assert!(kmeans_centers(&pts, 61, 0).is_err());
    }
}
