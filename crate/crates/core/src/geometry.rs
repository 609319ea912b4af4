//! Geometry of the graph `{(x, f(x))} ⊂ R^{N+L}` of the estimator.
//!
//! The graph inherits the metric `g_ij = δ_ij + Σ_a f^a_i f^a_j`; its volume
//! `∫ √det g dx` is the regularizer, and its L²(dvol) gradient with respect to
//! `f` is minus the last `L` components of the mean-curvature vector `Tr II`.
//!
//! Pointwise quantities here work on any `K × N` first-derivative matrix, so
//! the same code serves the full `L`-component graph and the reduced graph
//! used when one simplex component is dropped.

use crate::error::{Error, Result};
use crate::estimator::{PointGeometry, RbfModel};
use crate::numeric::{spd_inverse_and_det, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Induced metric, its inverse and `√det g` at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricData {
    pub g: Matrix,
    pub g_inv: Matrix,
    pub sqrt_det_g: f64,
}

/// Metric of the graph of a map with Jacobian `df` (`K × N`).
pub fn metric_from_jacobian(df: &Matrix) -> Result<MetricData> {
    let n = df.cols();
    let mut g = Matrix::identity(n);
    for row in df.row_iter() {
        for i in 0..n {
            for j in 0..=i {
                g[(i, j)] += row[i] * row[j];
            }
        }
    }
    for i in 0..n {
        for j in 0..i {
            g[(j, i)] = g[(i, j)];
        }
    }
    let (g_inv, det) = spd_inverse_and_det(&g)
        .map_err(|e| Error::Singular(format!("induced metric factorization: {e}")))?;
    Ok(MetricData {
        g,
        g_inv,
        sqrt_det_g: det.sqrt(),
    })
}

pub fn induced_metric(geom: &PointGeometry) -> Result<MetricData> {
    metric_from_jacobian(&geom.df)
}

/// `√det(I + dfᵀ df)`.
pub fn volume_density(df: &Matrix) -> Result<f64> {
    Ok(metric_from_jacobian(df)?.sqrt_det_g)
}

/// Last-`K` components of `Tr II` for the graph of a map with first partials
/// `df` (`K × N`) and Hessians `d2f` (`K` of `N × N`):
///
/// `(Tr II)^ℓ = g^{ij} ( f^ℓ_{ij} − g^{rs} f^a_{rs} f^a_i f^ℓ_j )`.
///
/// Evaluation order: `t_a = g^{rs} f^a_{rs}` (r, s outer, a inner), then
/// `q_i = Σ_a t_a f^a_i`, then per component `t_ℓ − Σ_{ij} g^{ij} q_i f^ℓ_j`.
pub fn trace_ii_from_parts(df: &Matrix, d2f: &[Matrix], metric: &MetricData) -> Vec<f64> {
    let (k, n) = (df.rows(), df.cols());
    debug_assert_eq!(d2f.len(), k);
    let gi = &metric.g_inv;
    let mut t = vec![0.0; k];
    for r in 0..n {
        for s in 0..n {
            let w = gi[(r, s)];
            for (ta, h) in t.iter_mut().zip(d2f) {
                *ta += w * h[(r, s)];
            }
        }
    }
    let mut q = vec![0.0; n];
    for (i, qi) in q.iter_mut().enumerate() {
        *qi = (0..k).map(|a| t[a] * df[(a, i)]).sum();
    }
    // p_j = Σ_i g^{ij} q_i
    let mut p = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            p[j] += gi[(i, j)] * q[i];
        }
    }
    (0..k)
        .map(|l| t[l] - (0..n).map(|j| p[j] * df[(l, j)]).sum::<f64>())
        .collect()
}

/// `Tr II^L` for the graph of the full estimator.
pub fn trace_second_fundamental_form(geom: &PointGeometry, metric: &MetricData) -> Vec<f64> {
    trace_ii_from_parts(&geom.df, &geom.d2f, metric)
}

/// Axis-aligned box in input space.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl DomainBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::dim(lower.len(), upper.len(), "domain bounds"));
        }
        if lower.iter().zip(&upper).any(|(a, b)| !(a < b)) {
            return Err(Error::invalid("domain", "every lower bound must be below its upper bound"));
        }
        Ok(Self { lower, upper })
    }

    /// `[0, 1]^n`
    pub fn unit(n: usize) -> Self {
        Self {
            lower: vec![0.0; n],
            upper: vec![1.0; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn measure(&self) -> f64 {
        self.lower.iter().zip(&self.upper).map(|(a, b)| b - a).product()
    }
}

/// Cell centers and the common cell volume of a midpoint-rule grid.
pub fn midpoint_grid(domain: &DomainBox, resolution: &[usize]) -> Result<(Vec<Vec<f64>>, f64)> {
    let n = domain.dim();
    if resolution.len() != n {
        return Err(Error::dim(n, resolution.len(), "grid resolution axes"));
    }
    if resolution.iter().any(|&r| r < 2) {
        return Err(Error::invalid("resolution", "need at least 2 cells per axis"));
    }
    let steps: Vec<f64> = (0..n)
        .map(|k| (domain.upper[k] - domain.lower[k]) / resolution[k] as f64)
        .collect();
    let total: usize = resolution.iter().product();
    let mut points = Vec::with_capacity(total);
    let mut idx = vec![0usize; n];
    for _ in 0..total {
        points.push(
            (0..n)
                .map(|k| domain.lower[k] + (idx[k] as f64 + 0.5) * steps[k])
                .collect(),
        );
        for k in 0..n {
            idx[k] += 1;
            if idx[k] < resolution[k] {
                break;
            }
            idx[k] = 0;
        }
    }
    Ok((points, steps.iter().product()))
}

/// Midpoint-rule quadrature of `∫ √det g dx` over `domain` (N ≤ 3).
pub fn graph_volume(model: &RbfModel, domain: &DomainBox, resolution: &[usize]) -> Result<f64> {
    let n = model.feature_dim();
    if n > 3 {
        return Err(Error::QuadratureDimension(n));
    }
    if domain.dim() != n {
        return Err(Error::dim(n, domain.dim(), "domain dimension"));
    }
    let (points, cell) = midpoint_grid(domain, resolution)?;
    let densities: Vec<f64> = points
        .par_iter()
        .map(|x| {
            let (_, df) = model.first_order(x)?;
            volume_density(&df)
        })
        .collect::<Result<_>>()?;
    Ok(densities.iter().sum::<f64>() * cell)
}

/// Monte-Carlo estimate of the graph volume with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VolumeEstimate {
    pub estimate: f64,
    pub standard_error: f64,
}

/// Uniform-sampling estimate of `∫ √det g dx`, usable in any dimension.
pub fn monte_carlo_volume(
    model: &RbfModel,
    domain: &DomainBox,
    samples: usize,
    seed: u64,
) -> Result<VolumeEstimate> {
    let n = model.feature_dim();
    if domain.dim() != n {
        return Err(Error::dim(n, domain.dim(), "domain dimension"));
    }
    if samples < 100 {
        return Err(Error::invalid("samples", "need at least 100 samples"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<Vec<f64>> = (0..samples)
        .map(|_| {
            (0..n)
                .map(|k| rng.gen_range(domain.lower[k]..domain.upper[k]))
                .collect()
        })
        .collect();
    let values: Vec<f64> = points
        .par_iter()
        .map(|x| {
            let (_, df) = model.first_order(x)?;
            volume_density(&df)
        })
        .collect::<Result<_>>()?;
    let count = samples as f64;
    let mean = values.iter().sum::<f64>() / count;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1.0);
    let measure = domain.measure();
    Ok(VolumeEstimate {
        estimate: measure * mean,
        standard_error: measure * (var / count).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::Normalization;

    fn flat_model(n: usize, l: usize) -> RbfModel {
        RbfModel::new(
            Matrix::from_rows(&[vec![0.5; n], vec![0.2; n]]).unwrap(),
            0.3,
            Matrix::zeros(2, l),
            Normalization::unit(n),
        )
        .unwrap()
    }

    #[test]
    fn flat_graph_metric_is_identity() {
        let m = metric_from_jacobian(&Matrix::zeros(3, 2)).unwrap();
        assert_eq!(m.g, Matrix::identity(2));
        assert_eq!(m.g_inv, Matrix::identity(2));
        assert_eq!(m.sqrt_det_g, 1.0);
    }

    #[test]
    fn one_dimensional_binary_metric() {
        let s = 0.7;
        let df = Matrix::new(2, 1, vec![s, -s]).unwrap();
        let m = metric_from_jacobian(&df).unwrap();
        assert!((m.g[(0, 0)] - (1.0 + 2.0 * s * s)).abs() < 1e-15);
        assert!((m.sqrt_det_g - (1.0 + 2.0 * s * s).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn metric_matches_direct_assembly() {
        let df = Matrix::new(3, 2, vec![0.3, -0.2, 0.1, 0.5, -0.4, -0.3]).unwrap();
        let m = metric_from_jacobian(&df).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let mut v = if i == j { 1.0 } else { 0.0 };
                for a in 0..3 {
                    v += df[(a, i)] * df[(a, j)];
                }
                assert!((m.g[(i, j)] - v).abs() < 1e-12);
            }
        }
        let prod = m.g.matmul(&m.g_inv).unwrap();
        let eye = Matrix::identity(2);
        assert!(prod.sub(&eye).unwrap().max_abs() < 1e-10);
        let det = m.g[(0, 0)] * m.g[(1, 1)] - m.g[(0, 1)] * m.g[(1, 0)];
        assert!((m.sqrt_det_g - det.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn zero_hessian_gives_zero_trace() {
        let df = Matrix::new(2, 2, vec![0.3, -0.1, -0.3, 0.1]).unwrap();
        let metric = metric_from_jacobian(&df).unwrap();
        let tr = trace_ii_from_parts(&df, &[Matrix::zeros(2, 2), Matrix::zeros(2, 2)], &metric);
        assert_eq!(tr, vec![0.0, 0.0]);
    }

    #[test]
    fn single_curve_trace_formula() {
        // graph of a scalar function of one variable: f''/(1+f'²)²
        let (d1, d2) = (0.8, -1.7);
        let df = Matrix::new(1, 1, vec![d1]).unwrap();
        let metric = metric_from_jacobian(&df).unwrap();
        let tr = trace_ii_from_parts(&df, &[Matrix::new(1, 1, vec![d2]).unwrap()], &metric);
        let expect = d2 / (1.0 + d1 * d1).powi(2);
        assert!((tr[0] - expect).abs() < 1e-15 * expect.abs().max(1.0));
    }

    #[test]
    fn flat_model_volume_is_domain_measure() {
        let m = flat_model(2, 3);
        let v = graph_volume(&m, &DomainBox::unit(2), &[16, 16]).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
        let mc = monte_carlo_volume(&m, &DomainBox::unit(2), 200, 4).unwrap();
        assert_eq!(mc.estimate, 1.0);
        assert_eq!(mc.standard_error, 0.0);
    }

    #[test]
    fn quadrature_rejects_high_dimension() {
        let m = flat_model(4, 2);
        assert!(matches!(
            graph_volume(&m, &DomainBox::unit(4), &[4, 4, 4, 4]),
            Err(Error::QuadratureDimension(4))
        ));
    }

    #[test]
    fn midpoint_grid_layout() {
        let (pts, w) = midpoint_grid(&DomainBox::unit(2), &[2, 4]).unwrap();
        assert_eq!(pts.len(), 8);
        assert_eq!(w, 0.125);
        assert_eq!(pts[0], vec![0.25, 0.125]);
        assert_eq!(pts[1], vec![0.75, 0.125]);
        assert!(midpoint_grid(&DomainBox::unit(2), &[1, 4]).is_err());
    }
}
