//! Synthetic datasets.

use super::dataset::{Dataset, Normalization};
use crate::error::{Error, Result};
use crate::numeric::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Samples are drawn from `[-15, 15]²`.
pub const CIRCLE_HALF_WIDTH: f64 = 15.0;
/// Points within this distance of the origin are positive.
pub const CIRCLE_RADIUS: f64 = 10.0;

/// Class index of a raw point: 1 (`"+1"`) inside the disc, 0 (`"-1"`) outside.
pub fn circle_label(x: &[f64]) -> usize {
    let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
    usize::from(CIRCLE_RADIUS - r > 0.0)
}

/// `m` points uniform on `[-15, 15]²` labeled by `sign(10 − ‖x‖₂)`, already
/// normalized by the fixed box. If a draw happens to contain a single class,
/// the last sample is redrawn until the missing class appears.
pub fn make_circle_dataset(m: usize, seed: u64) -> Result<Dataset> {
    if m < 10 {
        return Err(Error::invalid("m", "need at least 10 samples"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| -> [f64; 2] {
        [
            rng.gen_range(-CIRCLE_HALF_WIDTH..CIRCLE_HALF_WIDTH),
            rng.gen_range(-CIRCLE_HALF_WIDTH..CIRCLE_HALF_WIDTH),
        ]
    };
    let mut raw: Vec<[f64; 2]> = (0..m).map(|_| draw(&mut rng)).collect();
    let mut labels: Vec<usize> = raw.iter().map(|p| circle_label(p)).collect();
    for class in 0..2 {
        if !labels.contains(&class) {
            let slot = if class == 0 { m - 1 } else { m - 2 };
            loop {
                let p = draw(&mut rng);
                if circle_label(&p) == class {
                    raw[slot] = p;
                    labels[slot] = class;
                    break;
                }
            }
        }
    }
    let normalization =
        Normalization::new(vec![(-CIRCLE_HALF_WIDTH, CIRCLE_HALF_WIDTH); 2])?;
    let rows: Vec<Vec<f64>> = raw
        .iter()
        .map(|p| normalization.apply(p))
        .collect::<Result<_>>()?;
    Dataset::from_normalized(
        "circle",
        Matrix::from_rows(&rows)?,
        labels,
        vec!["-1".into(), "+1".into()],
        normalization,
    )
}

/// Isotropic Gaussian blobs, one per center, as a raw (unnormalized) dataset.
pub fn make_blobs(
    per_class: usize,
    centers: &[Vec<f64>],
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if centers.len() < 2 || per_class == 0 {
        return Err(Error::invalid("centers", "need >= 2 centers and >= 1 sample each"));
    }
    let noise = Normal::new(0.0, spread).map_err(|e| Error::invalid("spread", e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..per_class {
        for (c, center) in centers.iter().enumerate() {
            rows.push(center.iter().map(|v| v + noise.sample(&mut rng)).collect::<Vec<f64>>());
            labels.push(c);
        }
    }
    Dataset::new(
        "blobs",
        Matrix::from_rows(&rows)?,
        labels,
        (0..centers.len()).map(|c| format!("blob{c}")).collect(),
    )
}
