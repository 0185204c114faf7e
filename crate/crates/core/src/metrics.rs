//! Class-wise evaluation metrics: accuracies, the ρ fairness score, and
//! feature-space class geometry.
//!
//! ρ compares a modified training method against its baseline by combining
//! the relative change of the worst class's accuracy with the relative
//! change of the average: ρ = Δworst/worst₀ − Δavg/avg₀. A positive value
//! means the method helped the worst class more than it cost on average.
//!
//! Class geometry mirrors the feature-space analysis that motivates
//! distance-aware weighting: per-class centroids of embedding vectors, their
//! scalar variances, and the matrix of inter-centroid distances, from which
//! each class's average distance to the others is derived.

use crate::error::Error;
use crate::io::{sig, write_atomic};
use crate::Result;
use ndarray::Array2;
use std::path::Path;

/// Per-class and aggregate accuracies (percent) for one evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    /// Clean accuracy per class, percent.
    pub clean_per_class: Vec<f64>,
    /// Robust accuracy per class, percent.
    pub robust_per_class: Vec<f64>,
    /// Unweighted mean clean accuracy.
    pub avg_clean: f64,
    /// Unweighted mean robust accuracy.
    pub avg_robust: f64,
    /// Minimum clean accuracy over classes.
    pub worst_clean: f64,
    /// Minimum robust accuracy over classes.
    pub worst_robust: f64,
    /// Class attaining the minimum robust accuracy (lowest index on ties).
    pub worst_class: usize,
}

impl MetricsRecord {
    /// Build a record from per-class percentages, computing the aggregates.
    pub fn from_per_class(clean: Vec<f64>, robust: Vec<f64>) -> Result<Self> {
        if clean.is_empty() || clean.len() != robust.len() {
            return Err(Error::DimensionMismatch {
                context: "per-class accuracy vectors",
                expected: clean.len(),
                got: robust.len(),
            });
        }
        for &v in clean.iter().chain(robust.iter()) {
            if !(0.0..=100.0).contains(&v) {
                return Err(Error::config(format!("accuracy {v} outside [0, 100]")));
            }
        }
        let c = clean.len() as f64;
        let avg_clean = clean.iter().sum::<f64>() / c;
        let avg_robust = robust.iter().sum::<f64>() / c;
        let worst_clean = clean.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut worst_class = 0;
        for (i, &v) in robust.iter().enumerate() {
            if v < robust[worst_class] {
                worst_class = i;
            }
        }
        let worst_robust = robust[worst_class];
        Ok(MetricsRecord {
            clean_per_class: clean,
            robust_per_class: robust,
            avg_clean,
            avg_robust,
            worst_clean,
            worst_robust,
            worst_class,
        })
    }

    /// Number of classes.
    pub fn num_classes(&self) -> usize {
        self.clean_per_class.len()
    }
}

/// ρ = (worstΔ − worst₀)/worst₀ − (avgΔ − avg₀)/avg₀ for accuracy pairs
/// `(avg, worst)`; both baseline entries must be positive.
pub fn rho(baseline: (f64, f64), delta: (f64, f64)) -> Result<f64> {
    let (avg0, worst0) = baseline;
    if !(avg0 > 0.0) {
        return Err(Error::ZeroBaseline { which: "average accuracy" });
    }
    if !(worst0 > 0.0) {
        return Err(Error::ZeroBaseline { which: "worst-class accuracy" });
    }
    let (avg1, worst1) = delta;
    Ok((worst1 - worst0) / worst0 - (avg1 - avg0) / avg0)
}

/// Feature-space summary of labeled embeddings.
#[derive(Clone, Debug)]
pub struct ClassGeometry {
    /// Per-class centroid vectors (C × dim).
    pub centroids: Array2<f64>,
    /// Per-class scalar variance: mean squared ℓ₂ deviation from the
    /// centroid.
    pub variances: Vec<f64>,
    /// Symmetric matrix of inter-centroid Euclidean distances.
    pub distances: Array2<f64>,
    /// Average distance from each class's centroid to all other centroids.
    pub avg_distances: Vec<f64>,
}

/// Compute centroids, variances, and inter-class distances of labeled
/// embedding vectors. Every class in [0, num_classes) needs ≥ 1 sample.
pub fn class_geometry(
    embeddings: &Array2<f64>,
    labels: &[usize],
    num_classes: usize,
) -> Result<ClassGeometry> {
    if labels.len() != embeddings.nrows() {
        return Err(Error::DimensionMismatch {
            context: "geometry label count",
            expected: embeddings.nrows(),
            got: labels.len(),
        });
    }
    if num_classes < 2 {
        return Err(Error::config("class geometry needs ≥ 2 classes"));
    }
    let dim = embeddings.ncols();
    let mut centroids = Array2::<f64>::zeros((num_classes, dim));
    let mut counts = vec![0usize; num_classes];
    for (i, &y) in labels.iter().enumerate() {
        if y >= num_classes {
            return Err(Error::config(format!(
                "label {y} out of range for {num_classes} classes"
            )));
        }
        counts[y] += 1;
        let mut row = centroids.row_mut(y);
        row += &embeddings.row(i);
    }
    for (class, &count) in counts.iter().enumerate() {
        if count == 0 {
            return Err(Error::EmptyClass { class });
        }
        centroids.row_mut(class).mapv_inplace(|v| v / count as f64);
    }
    let mut variances = vec![0.0; num_classes];
    for (i, &y) in labels.iter().enumerate() {
        let dev: f64 = embeddings
            .row(i)
            .iter()
            .zip(centroids.row(y))
            .map(|(x, m)| (x - m) * (x - m))
            .sum();
        variances[y] += dev;
    }
    for (class, v) in variances.iter_mut().enumerate() {
        *v /= counts[class] as f64;
    }
    let mut distances = Array2::<f64>::zeros((num_classes, num_classes));
    for a in 0..num_classes {
        for b in (a + 1)..num_classes {
            let d: f64 = centroids
                .row(a)
                .iter()
                .zip(centroids.row(b))
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            distances[[a, b]] = d;
            distances[[b, a]] = d;
        }
    }
    let avg_distances = (0..num_classes)
        .map(|a| distances.row(a).sum() / (num_classes - 1) as f64)
        .collect();
    Ok(ClassGeometry { centroids, variances, distances, avg_distances })
}

/// Pearson correlation coefficient; needs ≥ 3 points and nonzero variance
/// on both sides.
pub fn correlation(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::DegenerateInput {
            reason: format!("length mismatch: {} vs {}", xs.len(), ys.len()),
        });
    }
    if xs.len() < 3 {
        return Err(Error::DegenerateInput {
            reason: format!("need ≥ 3 points, got {}", xs.len()),
        });
    }
    let n = xs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        let dx = x - mean_x;
        let dy = y - mean_y;
        cov += dx * dy;
        var_x += dx * dx;
        var_y += dy * dy;
    }
    if var_x == 0.0 || var_y == 0.0 {
        return Err(Error::DegenerateInput {
            reason: "zero variance on one side".to_string(),
        });
    }
    Ok((cov / (var_x * var_y).sqrt()).clamp(-1.0, 1.0))
}

/// Serialize per-epoch metrics: `epoch,class,clean_acc,robust_acc` rows for
/// every class, then `AVG` and `WORST` aggregate rows per epoch
/// (9 significant digits); epochs are 1-based.
pub fn epoch_metrics_csv(history: &[MetricsRecord]) -> String {
    let mut out = String::from("epoch,class,clean_acc,robust_acc\n");
    for (idx, record) in history.iter().enumerate() {
        let epoch = idx + 1;
        for class in 0..record.num_classes() {
            out.push_str(&format!(
                "{epoch},{class},{},{}\n",
                sig(record.clean_per_class[class], 9),
                sig(record.robust_per_class[class], 9),
            ));
        }
        out.push_str(&format!(
            "{epoch},AVG,{},{}\n",
            sig(record.avg_clean, 9),
            sig(record.avg_robust, 9),
        ));
        out.push_str(&format!(
            "{epoch},WORST,{},{}\n",
            sig(record.worst_clean, 9),
            sig(record.worst_robust, 9),
        ));
    }
    out
}

/// Write the per-class geometry table `class,variance,avg_distance,robust_acc`
/// (9 significant digits), pairing the geometry with robust accuracies.
pub fn write_geometry_csv(
    geometry: &ClassGeometry,
    robust_acc: &[f64],
    path: &Path,
) -> Result<()> {
    let c = geometry.variances.len();
    if robust_acc.len() != c {
        return Err(Error::DimensionMismatch {
            context: "geometry robust accuracy count",
            expected: c,
            got: robust_acc.len(),
        });
    }
    let mut out = String::from("class,variance,avg_distance,robust_acc\n");
    for class in 0..c {
        out.push_str(&format!(
            "{class},{},{},{}\n",
            sig(geometry.variances[class], 9),
            sig(geometry.avg_distances[class], 9),
            sig(robust_acc[class], 9),
        ));
    }
    write_atomic(path, &out)
}

/// Write the full inter-centroid distance matrix as headerless C×C CSV
/// (12 significant digits).
pub fn write_distance_matrix_csv(geometry: &ClassGeometry, path: &Path) -> Result<()> {
    let c = geometry.variances.len();
    let mut out = String::new();
    for a in 0..c {
        let cells: Vec<String> = (0..c).map(|b| sig(geometry.distances[[a, b]], 12)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    write_atomic(path, &out)
}
