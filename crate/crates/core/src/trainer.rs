//! Gradient-flow training of the RBF coefficients.
//!
//! Starting from `h ≡ (1, …, 1)` at every training point, each iteration
//! evaluates the total gradient `∇P_h(x_i)` (empirical loss plus `λ` times the
//! graph-volume gradient) at every training point and moves the coefficients
//! by `A ← A − τ G⁻¹ [∇P_h(x_1), …, ∇P_h(x_m)]ᵀ`, which shifts `h(x_i)` by
//! `−τ ∇P_h(x_i)`. `G` is factored once during initialization.

use crate::error::{Error, Result};
use crate::estimator::{kmeans_centers, softmax, PointGeometry, RbfModel};
use crate::geometry::{
    metric_from_jacobian, trace_ii_from_parts, trace_second_fundamental_form, MetricData,
};
use crate::harness::Dataset;
use crate::losses::{
    cross_entropy_grad_h, cross_entropy_loss, knn_damping, knn_grad_from_mean, knn_mean_target,
    quadratic_grad_h, quadratic_loss, LossKind, OneHotTarget,
};
use crate::numeric::{gram_matrix, KernelSolver, Matrix, SolveOptions};
use rayon::prelude::*;

/// Smallest probability the tangent-projection strategy lets a training
/// point reach before it shortens the step.
pub const TANGENT_PROJECT_FLOOR: f64 = 1e-6;

/// How the geometric gradient is kept tangent to the simplex.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimplexStrategy {
    /// Compute the curvature of the graph of the `L − 1` retained components
    /// and recover the dropped one as minus their sum.
    ComponentDrop,
    /// Project the full curvature vector onto `{y : Σ y = 0}` and shorten
    /// steps that would push a probability below [`TANGENT_PROJECT_FLOOR`].
    TangentProject,
}

/// Where the RBF centers come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CenterSelection {
    TrainingPoints,
    KMeans { count: usize, seed: u64 },
}

/// Default ridge for training. With the bare `1e-10` conditioning jitter the
/// flow diverges for `λ·τ` around 0.1 on typical data.
pub const DEFAULT_TRAIN_RIDGE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub kernel_width: f64,
    pub lambda: f64,
    pub step_size: f64,
    pub max_iters: usize,
    pub loss: LossKind,
    pub simplex_strategy: SimplexStrategy,
    /// Stop once the mean absolute coefficient change drops below this;
    /// 0 runs all `max_iters` iterations.
    pub convergence_tol: f64,
    /// Ridge added to `G` before factoring. Beyond conditioning, it damps the
    /// high-frequency modes of the update that make the explicit curvature
    /// step unstable when `G` is nearly singular.
    pub ridge_jitter: f64,
    pub centers: CenterSelection,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            kernel_width: 0.5,
            lambda: 1.0,
            step_size: 0.1,
            max_iters: 5,
            loss: LossKind::CrossEntropy,
            simplex_strategy: SimplexStrategy::ComponentDrop,
            convergence_tol: 0.0,
            ridge_jitter: DEFAULT_TRAIN_RIDGE,
            centers: CenterSelection::TrainingPoints,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kernel_width > 0.0 && self.kernel_width.is_finite()) {
            return Err(Error::invalid("kernel_width", "must be > 0"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid("lambda", "must be >= 0"));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::invalid("step_size", "must be > 0"));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters", "must be >= 1"));
        }
        if !(self.convergence_tol >= 0.0) {
            return Err(Error::invalid("convergence_tol", "must be >= 0"));
        }
        if !(self.ridge_jitter >= 0.0 && self.ridge_jitter.is_finite()) {
            return Err(Error::invalid("ridge_jitter", "must be >= 0"));
        }
        Ok(())
    }
}

/// State of one executed iteration, measured after its update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub empirical_loss: f64,
    /// Mean of `√det g` over the training points.
    pub geometric_penalty: f64,
    pub mean_abs_delta: f64,
    pub train_error: f64,
    /// Largest `|Σ_ℓ f^ℓ(x_i) − 1|` over the training points.
    pub simplex_deviation: f64,
    /// Smallest probability over the training points.
    pub min_probability: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainTrace {
    pub records: Vec<IterationRecord>,
}

/// Initialized flow: the model with `h ≡ 1` at the training points, plus the
/// Gram matrix and its factorization reused by every update.
#[derive(Debug, Clone)]
pub struct Initialized {
    pub model: RbfModel,
    pub gram: Matrix,
    pub solver: KernelSolver,
}

/// Class with the fewest samples; ties go to the largest index.
pub fn drop_class(class_counts: &[usize]) -> usize {
    let mut best = 0;
    for (c, &n) in class_counts.iter().enumerate() {
        if n <= class_counts[best] {
            best = c;
        }
    }
    best
}

fn require_normalized(dataset: &Dataset) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::Dataset("training set is empty".into()));
    }
    let Some(_) = dataset.normalization() else {
        return Err(Error::Dataset(
            "training data must be normalized to [0, 1] first".into(),
        ));
    };
    Ok(())
}

/// Builds centers, factors `G` and solves `G A = H` with `H` all ones.
pub fn initialize(dataset: &Dataset, config: &TrainConfig) -> Result<Initialized> {
    config.validate()?;
    require_normalized(dataset)?;
    let features = dataset.features();
    let centers = match config.centers {
        CenterSelection::TrainingPoints => features.clone(),
        CenterSelection::KMeans { count, seed } => kmeans_centers(features, count, seed)?,
    };
    let gram = gram_matrix(features, &centers, config.kernel_width)?;
    let opts = SolveOptions {
        ridge_jitter: config.ridge_jitter,
        ..SolveOptions::default()
    };
    let solver = KernelSolver::factor(&gram, &opts)?;
    let ones = Matrix::filled(dataset.len(), dataset.num_classes(), 1.0);
    let coefficients = solver.solve(&ones)?;
    let normalization = dataset
        .normalization()
        .cloned()
        .expect("checked by require_normalized");
    let model = RbfModel::new(centers, config.kernel_width, coefficients, normalization)?;
    Ok(Initialized {
        model,
        gram,
        solver,
    })
}

/// `Tr II^L` made tangent to the simplex by `strategy`. `full_metric` is
/// only consulted by `TangentProject` and recomputed when absent.
pub fn curvature_vector(
    geom: &PointGeometry,
    full_metric: Option<&MetricData>,
    strategy: SimplexStrategy,
    drop_class: usize,
) -> Result<Vec<f64>> {
    let l = geom.num_classes();
    match strategy {
        SimplexStrategy::TangentProject => {
            let owned;
            let metric = match full_metric {
                Some(m) => m,
                None => {
                    owned = metric_from_jacobian(&geom.df)?;
                    &owned
                }
            };
            let mut tr = trace_second_fundamental_form(geom, metric);
            let mean = tr.iter().sum::<f64>() / l as f64;
            for v in &mut tr {
                *v -= mean;
            }
            Ok(tr)
        }
        SimplexStrategy::ComponentDrop => {
            if drop_class >= l {
                return Err(Error::invalid("drop_class", format!("{drop_class} >= {l}")));
            }
            let kept: Vec<usize> = (0..l).filter(|&a| a != drop_class).collect();
            let rows: Vec<&[f64]> = kept.iter().map(|&a| geom.df.row(a)).collect();
            let df = Matrix::from_rows(&rows)?;
            let d2f: Vec<Matrix> = kept.iter().map(|&a| geom.d2f[a].clone()).collect();
            let metric = metric_from_jacobian(&df)?;
            let reduced = trace_ii_from_parts(&df, &d2f, &metric);
            let mut tr = vec![0.0; l];
            for (&a, v) in kept.iter().zip(&reduced) {
                tr[a] = *v;
            }
            tr[drop_class] = -reduced.iter().sum::<f64>();
            Ok(tr)
        }
    }
}

/// Gradient of the graph volume with respect to `h`: `−(∂f/∂h)ᵀ Tr II^L`.
pub fn geometric_grad_h(
    geom: &PointGeometry,
    metric: &MetricData,
    strategy: SimplexStrategy,
    drop_class: usize,
) -> Result<Vec<f64>> {
    let tr = curvature_vector(geom, Some(metric), strategy, drop_class)?;
    Ok(geom.jac_fh.tr_mul_vec(&tr).into_iter().map(|v| -v).collect())
}

/// Precomputed kNN quantities at one training point.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnPointTerm {
    pub mean_target: Vec<f64>,
    pub damping: f64,
}

/// Total `h`-space gradient at one training point.
///
/// * quadratic: `(∂f/∂h)ᵀ (2(f − z) − λ Tr II^L)`
/// * cross-entropy: `(f − z) − λ (∂f/∂h)ᵀ Tr II^L`
/// * kNN distance: `(∂f/∂h)ᵀ (2φ(f − z̄_k) − λ Tr II^L)`
pub fn total_grad_h(
    geom: &PointGeometry,
    metric: Option<&MetricData>,
    target: &OneHotTarget,
    config: &TrainConfig,
    drop_class: usize,
    knn: Option<&KnnPointTerm>,
) -> Result<Vec<f64>> {
    let curvature = if config.lambda > 0.0 {
        Some(curvature_vector(
            geom,
            metric,
            config.simplex_strategy,
            drop_class,
        )?)
    } else {
        None
    };
    let lambda = config.lambda;
    let f_space = |mut v: Vec<f64>| -> Vec<f64> {
        if let Some(tr) = &curvature {
            for (x, t) in v.iter_mut().zip(tr) {
                *x -= lambda * t;
            }
        }
        geom.jac_fh.tr_mul_vec(&v)
    };
    Ok(match config.loss {
        LossKind::Quadratic => match &curvature {
            None => quadratic_grad_h(geom, target),
            Some(_) => f_space(
                geom.f
                    .iter()
                    .enumerate()
                    .map(|(l, v)| 2.0 * (v - target.component(l)))
                    .collect(),
            ),
        },
        LossKind::CrossEntropy => {
            let mut g = cross_entropy_grad_h(geom, target);
            if let Some(tr) = &curvature {
                let geo = geom.jac_fh.tr_mul_vec(tr);
                for (x, t) in g.iter_mut().zip(geo) {
                    *x -= lambda * t;
                }
            }
            g
        }
        LossKind::KnnDistance { .. } => {
            let term = knn.ok_or_else(|| {
                Error::invalid("knn", "kNN loss requires the neighbor mean at each point")
            })?;
            f_space(knn_grad_from_mean(&geom.f, &term.mean_target, term.damping))
        }
    })
}

/// Label and class probabilities for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Zero-based class index.
    pub label: usize,
    pub probabilities: Vec<f64>,
}

/// Index of the largest entry; ties go to the smallest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Plug-in classifier on a raw (unnormalized) input.
pub fn predict(model: &RbfModel, x: &[f64]) -> Result<Prediction> {
    let xn = model.normalization().apply(x)?;
    predict_normalized(model, &xn)
}

/// Plug-in classifier on an input already mapped into [0, 1]^N.
pub fn predict_normalized(model: &RbfModel, x: &[f64]) -> Result<Prediction> {
    let probabilities = model.eval_f(x)?;
    Ok(Prediction {
        label: argmax(&probabilities),
        probabilities,
    })
}

/// Misclassification rate on a dataset whose features are already normalized
/// consistently with the model.
pub fn error_rate(model: &RbfModel, dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Ok(0.0);
    }
    let wrong = (0..dataset.len())
        .into_par_iter()
        .map(|i| Ok(usize::from(predict_normalized(model, dataset.features().row(i))?.label != dataset.labels()[i])))
        .collect::<Result<Vec<usize>>>()?
        .into_iter()
        .sum::<usize>();
    Ok(wrong as f64 / dataset.len() as f64)
}

/// Runs the gradient flow from scratch.
pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<(RbfModel, TrainTrace)> {
    let init = initialize(dataset, config)?;
    train_from(&init, dataset, config)
}

/// Runs the gradient flow from an existing initialization, e.g. one shared by
/// several `λ` values with the same kernel width.
pub fn train_from(
    init: &Initialized,
    dataset: &Dataset,
    config: &TrainConfig,
) -> Result<(RbfModel, TrainTrace)> {
    config.validate()?;
    require_normalized(dataset)?;
    dataset.check_all_classes_present()?;
    if init.model.kernel_width() != config.kernel_width {
        return Err(Error::invalid(
            "kernel_width",
            "initialization was built for a different kernel width",
        ));
    }
    if init.gram.rows() != dataset.len() {
        return Err(Error::dim(init.gram.rows(), dataset.len(), "initialization sample count"));
    }
    config.loss.validate(dataset.len())?;

    let m = dataset.len();
    let l = dataset.num_classes();
    let features = dataset.features();
    let targets: Vec<OneHotTarget> = dataset
        .labels()
        .iter()
        .map(|&y| OneHotTarget::new(y, l))
        .collect::<Result<_>>()?;
    let dropped = drop_class(&dataset.class_counts());
    let knn_terms: Option<Vec<KnnPointTerm>> = match config.loss {
        LossKind::KnnDistance { k, damping } => Some(
            (0..m)
                .into_par_iter()
                .map(|i| {
                    let x = features.row(i);
                    Ok(KnnPointTerm {
                        mean_target: knn_mean_target(x, features, dataset.labels(), l, k)?,
                        damping: knn_damping(x, features, k, damping),
                    })
                })
                .collect::<Result<_>>()?,
        ),
        _ => None,
    };

    let mut model = init.model.clone();
    let mut trace = TrainTrace::default();
    for iteration in 1..=config.max_iters {
        let grads: Vec<Vec<f64>> = (0..m)
            .into_par_iter()
            .map(|i| {
                let geom = model.point_geometry(features.row(i))?;
                total_grad_h(
                    &geom,
                    None,
                    &targets[i],
                    config,
                    dropped,
                    knn_terms.as_ref().map(|t| &t[i]),
                )
            })
            .collect::<Result<_>>()?;
        let mut rhs = Matrix::zeros(m, l);
        for (i, g) in grads.iter().enumerate() {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient {
                    sample: i,
                    iteration,
                });
            }
            rhs.row_mut(i).copy_from_slice(g);
        }
        let delta = init.solver.solve(&rhs)?;

        let mut scale = config.step_size;
        let mut next = model.coefficients().clone();
        next.axpy(-scale, &delta);
        let mut h_train = init.gram.matmul(&next)?;
        if config.simplex_strategy == SimplexStrategy::TangentProject {
            while min_probability(&h_train) < TANGENT_PROJECT_FLOOR && scale > config.step_size * 1e-9 {
                scale *= 0.5;
                next = model.coefficients().clone();
                next.axpy(-scale, &delta);
                h_train = init.gram.matmul(&next)?;
            }
        }
        if next.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "coefficients became non-finite in iteration {iteration}"
            )));
        }
        let mean_abs_delta = scale * delta.as_slice().iter().map(|v| v.abs()).sum::<f64>()
            / delta.as_slice().len() as f64;
        model.set_coefficients(next)?;

        let record = measure(&model, dataset, &h_train, &targets, config, iteration, mean_abs_delta)?;
        log::debug!(
            "iter {iteration}: loss {:.6} geo {:.6} err {:.4}",
            record.empirical_loss,
            record.geometric_penalty,
            record.train_error
        );
        trace.records.push(record);
        if mean_abs_delta < config.convergence_tol {
            break;
        }
    }
    Ok((model, trace))
}

fn min_probability(h: &Matrix) -> f64 {
    h.row_iter()
        .flat_map(|row| softmax(row))
        .fold(f64::INFINITY, f64::min)
}

fn measure(
    model: &RbfModel,
    dataset: &Dataset,
    h_train: &Matrix,
    targets: &[OneHotTarget],
    config: &TrainConfig,
    iteration: usize,
    mean_abs_delta: f64,
) -> Result<IterationRecord> {
    let f_values: Vec<Vec<f64>> = h_train.row_iter().map(softmax).collect();
    let empirical_loss = match config.loss {
        LossKind::CrossEntropy => cross_entropy_loss(&f_values, targets)?,
        _ => quadratic_loss(&f_values, targets)?,
    };
    let wrong = f_values
        .iter()
        .zip(dataset.labels())
        .filter(|(f, &y)| argmax(f) != y)
        .count();
    let simplex_deviation = f_values
        .iter()
        .map(|f| (f.iter().sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    let min_probability = f_values
        .iter()
        .flatten()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let densities: Vec<f64> = (0..dataset.len())
        .into_par_iter()
        .map(|i| {
            let (_, df) = model.first_order(dataset.features().row(i))?;
            Ok(metric_from_jacobian(&df)?.sqrt_det_g)
        })
        .collect::<Result<_>>()?;
    Ok(IterationRecord {
        iteration,
        empirical_loss,
        geometric_penalty: densities.iter().sum::<f64>() / densities.len() as f64,
        mean_abs_delta,
        train_error: wrong as f64 / dataset.len() as f64,
        simplex_deviation,
        min_probability,
    })
}
