//! Independent numerical checks of the analytic derivatives and of the
//! curvature term.
//!
//! * input derivatives of `f` against central differences of `f` itself;
//! * `Tr II` of a one-dimensional graph against the closed-form curvature of
//!   a space curve;
//! * the pairing `−∫ Tr II·φ dvol` against a finite difference of the
//!   quadrature volume along a compactly supported perturbation `φ`.

use crate::error::{Error, Result};
use crate::estimator::{jacobian_f_h, softmax, PointGeometry, RbfModel};
use crate::geometry::{induced_metric, midpoint_grid, trace_second_fundamental_form, volume_density, DomainBox};
use crate::harness::Normalization;
use crate::losses::{
    cross_entropy_grad_h, cross_entropy_loss, knn_damping, knn_grad_from_mean, knn_mean_target,
    quadratic_grad_h, quadratic_loss, Damping, OneHotTarget,
};
use crate::numeric::{finite_difference_directional, Matrix, DEFAULT_FD_STEP};
use crate::trainer::{curvature_vector, SimplexStrategy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub const DERIVATIVE_TOL: f64 = 1e-4;
pub const CURVE_TOL: f64 = 1e-8;
pub const VARIATION_TOL: f64 = 1e-3;
pub const VARIATION_RESOLUTION: usize = 64;

/// Result of one check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckOutcome {
    fn new(name: &'static str, max_rel_error: f64, tolerance: f64) -> Self {
        Self {
            name,
            max_rel_error,
            tolerance,
            passed: max_rel_error <= tolerance,
        }
    }
}

fn rel(a: f64, b: f64, scale: f64) -> f64 {
    (a - b).abs() / scale.max(1e-12)
}

/// A model on `[0, 1]^n` with random centers and coefficients of order one.
pub fn random_model(n: usize, l: usize, centers: usize, kernel_width: f64, seed: u64) -> Result<RbfModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c: Vec<f64> = (0..centers * n).map(|_| rng.gen::<f64>()).collect();
    let a: Vec<f64> = (0..centers * l).map(|_| rng.gen_range(-1.0..1.0)).collect();
    RbfModel::new(
        Matrix::new(centers, n, c)?,
        kernel_width,
        Matrix::new(centers, l, a)?,
        Normalization::unit(n),
    )
}

/// Random probe points in the interior of the unit box.
pub fn random_points(n: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| (0..n).map(|_| rng.gen_range(0.05..0.95)).collect())
        .collect()
}

/// Checks `df` against differences of `f` and `d2f` against differences of
/// `df`, both relative to the largest entry of the analytic block.
pub fn check_input_derivatives(model: &RbfModel, points: &[Vec<f64>], step: f64) -> Result<[CheckOutcome; 2]> {
    let n = model.feature_dim();
    let (mut worst1, mut worst2) = (0.0f64, 0.0f64);
    for x in points {
        let geom = model.point_geometry(x)?;
        let scale1 = geom.df.max_abs().max(1e-3);
        let scale2 = geom.d2f.iter().map(Matrix::max_abs).fold(1e-3, f64::max);
        for k in 0..n {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += step;
            xm[k] -= step;
            let (fp, dfp) = model.first_order(&xp)?;
            let (fm, dfm) = model.first_order(&xm)?;
            for a in 0..model.num_classes() {
                let fd = (fp[a] - fm[a]) / (2.0 * step);
                worst1 = worst1.max(rel(geom.df[(a, k)], fd, scale1));
                for j in 0..n {
                    let fd2 = (dfp[(a, j)] - dfm[(a, j)]) / (2.0 * step);
                    worst2 = worst2.max(rel(geom.d2f[a][(j, k)], fd2, scale2));
                }
            }
        }
    }
    Ok([
        CheckOutcome::new("df", worst1, DERIVATIVE_TOL),
        CheckOutcome::new("d2f", worst2, DERIVATIVE_TOL),
    ])
}

/// For a one-dimensional input the graph is the curve `t ↦ (t, F(t))` and
/// its curvature vector, restricted to the `F` components, is
/// `(F″ − (F″·F′) F′ / (1 + |F′|²)) / (1 + |F′|²)`.
pub fn check_curve_curvature(model: &RbfModel, points: &[Vec<f64>]) -> Result<CheckOutcome> {
    if model.feature_dim() != 1 {
        return Err(Error::invalid("model", "curve check needs a one-dimensional input"));
    }
    let mut worst = 0.0f64;
    for x in points {
        let geom = model.point_geometry(x)?;
        let metric = induced_metric(&geom)?;
        let tr = trace_second_fundamental_form(&geom, &metric);
        let d1: Vec<f64> = geom.df.column(0);
        let d2: Vec<f64> = geom.d2f.iter().map(|m| m[(0, 0)]).collect();
        let speed2 = 1.0 + d1.iter().map(|v| v * v).sum::<f64>();
        let dot: f64 = d1.iter().zip(&d2).map(|(a, b)| a * b).sum();
        let expected: Vec<f64> = d1
            .iter()
            .zip(&d2)
            .map(|(p, pp)| (pp - dot * p / speed2) / speed2)
            .collect();
        let scale = expected.iter().fold(1e-3, |m: f64, v| m.max(v.abs()));
        for (a, b) in tr.iter().zip(&expected) {
            worst = worst.max(rel(*a, *b, scale));
        }
    }
    Ok(CheckOutcome::new("curve", worst, CURVE_TOL))
}

/// Smooth bump equal to one at the center of `[lo, hi]^n` and vanishing with
/// all derivatives outside it; returns the value and gradient.
pub fn bump(x: &[f64], lo: f64, hi: f64) -> (f64, Vec<f64>) {
    let n = x.len();
    let mut vals = vec![0.0; n];
    let mut ders = vec![0.0; n];
    for k in 0..n {
        let s = (2.0 * x[k] - lo - hi) / (hi - lo);
        if s.abs() >= 1.0 {
            return (0.0, vec![0.0; n]);
        }
        let q = 1.0 - s * s;
        vals[k] = (1.0 - 1.0 / q).exp();
        ders[k] = vals[k] * (-2.0 * s / (q * q)) * 2.0 / (hi - lo);
    }
    let value: f64 = vals.iter().product();
    let grad = (0..n)
        .map(|k| {
            (0..n)
                .map(|j| if j == k { ders[j] } else { vals[j] })
                .product()
        })
        .collect();
    (value, grad)
}

const BUMP_LO: f64 = 0.15;
const BUMP_HI: f64 = 0.85;

/// Compares `d/dε Vol(f + εφ)` at `ε = 0`, with `φ = v·bump`, against
/// `−Σ_cells w √det g Σ_a Tr II^a φ^a` on the same midpoint grid.
pub fn check_first_variation(model: &RbfModel, direction: &[f64], resolution: usize) -> Result<CheckOutcome> {
    let n = model.feature_dim();
    let l = model.num_classes();
    if direction.len() != l {
        return Err(Error::dim(l, direction.len(), "perturbation direction"));
    }
    if n > 3 {
        return Err(Error::QuadratureDimension(n));
    }
    let (points, cell) = midpoint_grid(&DomainBox::unit(n), &vec![resolution; n])?;
    let volume = |eps: f64| -> Result<f64> {
        let parts: Vec<f64> = points
            .par_iter()
            .map(|x| {
                let (_, mut df) = model.first_order(x)?;
                let (_, grad) = bump(x, BUMP_LO, BUMP_HI);
                for a in 0..l {
                    for k in 0..n {
                        df[(a, k)] += eps * direction[a] * grad[k];
                    }
                }
                volume_density(&df)
            })
            .collect::<Result<_>>()?;
        Ok(parts.iter().sum::<f64>() * cell)
    };
    let eps = 1e-4;
    let fd = (volume(eps)? - volume(-eps)?) / (2.0 * eps);
    let pairing: Vec<f64> = points
        .par_iter()
        .map(|x| {
            let (b, _) = bump(x, BUMP_LO, BUMP_HI);
            if b == 0.0 {
                return Ok(0.0);
            }
            let geom = model.point_geometry(x)?;
            let metric = induced_metric(&geom)?;
            let tr = trace_second_fundamental_form(&geom, &metric);
            let dot: f64 = tr.iter().zip(direction).map(|(t, v)| t * v * b).sum();
            Ok(-metric.sqrt_det_g * dot)
        })
        .collect::<Result<_>>()?;
    let analytic = pairing.iter().sum::<f64>() * cell;
    let err = rel(fd, analytic, fd.abs().max(analytic.abs()));
    log::debug!("first variation: difference {fd:.10e}, pairing {analytic:.10e}");
    Ok(CheckOutcome::new("first-variation", err, VARIATION_TOL))
}

/// For a binary model on a line under component dropping, the curvature of
/// the kept component is that of the plane curve `t ↦ (t, f(t))`:
/// `f″ / (1 + f′²)²`.
pub fn check_binary_drop_curvature(model: &RbfModel, points: &[Vec<f64>], drop: usize) -> Result<CheckOutcome> {
    if model.feature_dim() != 1 || model.num_classes() != 2 {
        return Err(Error::invalid("model", "binary curve check needs N = 1 and L = 2"));
    }
    let kept = 1 - drop.min(1);
    let mut worst = 0.0f64;
    for x in points {
        let geom = model.point_geometry(x)?;
        let tr = curvature_vector(&geom, None, SimplexStrategy::ComponentDrop, drop)?;
        let (d1, d2) = (geom.df[(kept, 0)], geom.d2f[kept][(0, 0)]);
        let expected = d2 / (1.0 + d1 * d1).powi(2);
        worst = worst.max(rel(tr[kept], expected, expected.abs().max(1e-3)));
        worst = worst.max(rel(tr[drop], -expected, expected.abs().max(1e-3)));
    }
    Ok(CheckOutcome::new("binary-curve", worst, CURVE_TOL))
}

/// Random direction in `R^l` with zero component sum (tangent to the simplex).
pub fn random_tangent(l: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut v: Vec<f64> = (0..l).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mean = v.iter().sum::<f64>() / l as f64;
    for x in &mut v {
        *x -= mean;
    }
    v
}

/// `∂/∂h_j` of the loss at one sample against central
/// differences of the loss composed with softmax, at `configs` random
/// `(h, class)` draws. Returns the quadratic and cross-entropy outcomes.
pub fn check_loss_gradients(l: usize, configs: usize, seed: u64) -> Result<[CheckOutcome; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut worst_q, mut worst_ce) = (0.0f64, 0.0f64);
    let step = DEFAULT_FD_STEP;
    for _ in 0..configs {
        let h: Vec<f64> = (0..l).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let target = OneHotTarget::new(rng.gen_range(0..l), l)?;
        let f = softmax(&h);
        let geom = PointGeometry {
            jac_fh: jacobian_f_h(&f),
            h: h.clone(),
            f,
            df: Matrix::zeros(l, 1),
            d2f: vec![Matrix::zeros(1, 1); l],
        };
        let gq = quadratic_grad_h(&geom, &target);
        let gce = cross_entropy_grad_h(&geom, &target);
        let scale_q = gq.iter().fold(1e-3, |m: f64, v| m.max(v.abs()));
        let scale_ce = gce.iter().fold(1e-3, |m: f64, v| m.max(v.abs()));
        for j in 0..l {
            let mut e = vec![0.0; l];
            e[j] = 1.0;
            let q = |p: &[f64]| quadratic_loss(&[softmax(p)], &[target]).unwrap_or(f64::NAN);
            let ce = |p: &[f64]| cross_entropy_loss(&[softmax(p)], &[target]).unwrap_or(f64::NAN);
            let fdq = finite_difference_directional(q, &h, &e, step)?;
            let fdce = finite_difference_directional(ce, &h, &e, step)?;
            worst_q = worst_q.max(rel(gq[j], fdq, scale_q));
            worst_ce = worst_ce.max(rel(gce[j], fdce, scale_ce));
        }
    }
    Ok([
        CheckOutcome::new("quadratic-loss", worst_q, DERIVATIVE_TOL),
        CheckOutcome::new("cross-entropy-loss", worst_ce, DERIVATIVE_TOL),
    ])
}

/// The kNN field `2φ(f − z̄_k)` paired with a bump perturbation `ψ = v·β`
/// against a central difference of the grid quadrature of
/// `∫ ‖f − z̄_k‖² dx`. Cells where the damping is below one (near the
/// equidistance set) are excluded from both sides.
pub fn check_knn_gradient(
    model: &RbfModel,
    features: &Matrix,
    labels: &[usize],
    k: usize,
    direction: &[f64],
    resolution: usize,
) -> Result<CheckOutcome> {
    let n = model.feature_dim();
    let l = model.num_classes();
    if direction.len() != l {
        return Err(Error::dim(l, direction.len(), "perturbation direction"));
    }
    let (points, cell) = midpoint_grid(&DomainBox::unit(n), &vec![resolution; n])?;
    let damping = Damping::default();
    let mut cells = Vec::new();
    for x in &points {
        let phi = knn_damping(x, features, k, damping);
        if phi < 1.0 {
            continue;
        }
        let mean = knn_mean_target(x, features, labels, l, k)?;
        let f = model.eval_f(x)?;
        let (b, _) = bump(x, BUMP_LO, BUMP_HI);
        cells.push((f, mean, b, phi));
    }
    let penalty = |eps: f64| -> f64 {
        cells
            .iter()
            .map(|(f, mean, b, _)| {
                f.iter()
                    .zip(mean)
                    .zip(direction)
                    .map(|((fa, ma), va)| (fa + eps * va * b - ma).powi(2))
                    .sum::<f64>()
            })
            .sum::<f64>()
            * cell
    };
    let eps = 1e-4;
    let fd = (penalty(eps) - penalty(-eps)) / (2.0 * eps);
    let analytic = cells
        .iter()
        .map(|(f, mean, b, phi)| {
            knn_grad_from_mean(f, mean, *phi)
                .iter()
                .zip(direction)
                .map(|(g, v)| g * v * b)
                .sum::<f64>()
        })
        .sum::<f64>()
        * cell;
    Ok(CheckOutcome::new(
        "knn-distance",
        rel(fd, analytic, fd.abs().max(analytic.abs())),
        VARIATION_TOL,
    ))
}

/// The battery behind the command-line `gradcheck` for one `(N, L)`:
/// input-derivative differences, the curve oracles when `N = 1`, loss
/// gradients, and `perturbations` first-variation pairings with random
/// simplex-tangent directions at `resolution` cells per axis.
pub fn run_suite(n: usize, l: usize, seed: u64, resolution: usize, perturbations: usize) -> Result<Vec<CheckOutcome>> {
    if !(1..=3).contains(&n) || l < 2 {
        return Err(Error::invalid("N/L", format!("need 1 <= N <= 3 and L >= 2, got N = {n}, L = {l}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    let mut worst = [0.0f64; 2];
    for _ in 0..20 {
        let model = random_model(n, l, 6, rng.gen_range(0.1..0.6), rng.gen())?;
        let points = random_points(n, 1, rng.gen());
        for (w, c) in worst.iter_mut().zip(check_input_derivatives(&model, &points, DEFAULT_FD_STEP)?) {
            *w = w.max(c.max_rel_error);
        }
    }
    out.push(CheckOutcome::new("df", worst[0], DERIVATIVE_TOL));
    out.push(CheckOutcome::new("d2f", worst[1], DERIVATIVE_TOL));

    if n == 1 {
        let model = random_model(1, l, 5, 0.2, rng.gen())?;
        out.push(check_curve_curvature(&model, &random_points(1, 50, rng.gen()))?);
        if l == 2 {
            let model = random_model(1, 2, 5, 0.2, rng.gen())?;
            let points = random_points(1, 50, rng.gen());
            let a = check_binary_drop_curvature(&model, &points, 1)?;
            let b = check_binary_drop_curvature(&model, &points, 0)?;
            out.push(if a.max_rel_error >= b.max_rel_error { a } else { b });
        }
    }

    out.extend(check_loss_gradients(l, 20, rng.gen())?);

    if n <= 2 {
        let mut worst = 0.0f64;
        for _ in 0..perturbations {
            let model = random_model(n, l, 6, rng.gen_range(0.1..0.6), rng.gen())?;
            let v = random_tangent(l, &mut rng);
            worst = worst.max(check_first_variation(&model, &v, resolution)?.max_rel_error);
        }
        out.push(CheckOutcome::new("first-variation", worst, VARIATION_TOL));

        let model = random_model(n, l, 6, 0.3, rng.gen())?;
        let features = Matrix::new(30, n, (0..30 * n).map(|_| rng.gen::<f64>()).collect())?;
        let labels: Vec<usize> = (0..30).map(|i| i % l).collect();
        let v = random_tangent(l, &mut rng);
        out.push(check_knn_gradient(&model, &features, &labels, 3, &v, resolution)?);
    }
    Ok(out)
}
