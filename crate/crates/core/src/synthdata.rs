//! Seeded generation of multi-class Gaussian-mixture datasets.
//!
//! The only randomness source is the crate's counter-based generator, so a
//! `(spec, seed)` pair always produces the same dataset, byte for byte after
//! serialization, on every platform. The fairness preset builds a four-class
//! geometry with one deliberately hard class: class 0 sits close to class 1
//! and far from classes 2–3, and carries the largest within-class spread, so
//! its difficulty comes from geometry rather than sample counts.

use crate::error::Error;
use crate::io::{sig, write_atomic};
use crate::rng::{derive_seed, shuffle, NormalSource};
use crate::Result;
use ndarray::Array2;
use std::path::Path;

/// Stream tags for deriving independent sub-seeds.
const STREAM_SHUFFLE: u64 = 0xD5;
const STREAM_TRAIN: u64 = 0xA1;
const STREAM_TEST: u64 = 0xA2;

/// One mixture component: an isotropic Gaussian.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassSpec {
    /// Mean vector, length d.
    pub mean: Vec<f64>,
    /// Per-class standard deviation (isotropic), > 0.
    pub std: f64,
}

/// A balanced C-class Gaussian mixture.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureSpec {
    /// Ordered class components; index = label.
    pub classes: Vec<ClassSpec>,
    /// Input dimension shared by every mean.
    pub d: usize,
    /// Draws per class.
    pub samples_per_class: usize,
}

impl MixtureSpec {
    /// Validated constructor: ≥ 2 classes, means of one common dimension,
    /// positive standard deviations.
    pub fn new(classes: Vec<ClassSpec>, samples_per_class: usize) -> Result<Self> {
        if classes.len() < 2 {
            return Err(Error::config(format!(
                "a mixture needs at least 2 classes, got {}",
                classes.len()
            )));
        }
        let d = classes[0].mean.len();
        if d == 0 {
            return Err(Error::config("class means must have dimension ≥ 1"));
        }
        for (i, class) in classes.iter().enumerate() {
            if class.mean.len() != d {
                return Err(Error::DimensionMismatch {
                    context: "mixture class mean",
                    expected: d,
                    got: class.mean.len(),
                });
            }
            if !(class.std > 0.0) || !class.std.is_finite() {
                return Err(Error::config(format!(
                    "class {i} std must be positive and finite, got {}",
                    class.std
                )));
            }
        }
        Ok(MixtureSpec { classes, d, samples_per_class })
    }

    /// Number of classes C.
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// Euclidean distance between two class centroids.
    pub fn centroid_distance(&self, a: usize, b: usize) -> f64 {
        self.classes[a]
            .mean
            .iter()
            .zip(&self.classes[b].mean)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    }
}

/// A finite labeled sample of a mixture.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    /// n × d matrix of inputs.
    pub points: Array2<f64>,
    /// n labels in [0, C).
    pub labels: Vec<usize>,
    /// Number of classes the labels refer to.
    pub num_classes: usize,
}

impl LabeledDataset {
    /// Number of samples.
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    /// Whether the dataset has no rows.
    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Input dimension.
    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    /// Per-class sample counts.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Row indices belonging to one class, in dataset order.
    pub fn class_indices(&self, class: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, &y)| (y == class).then_some(i))
            .collect()
    }
}

/// Draw a balanced dataset: exactly `samples_per_class` i.i.d. points per
/// class, generated class block by class block from per-class sub-streams,
/// then globally shuffled — all derived from the one seed.
pub fn sample(spec: &MixtureSpec, seed: u64) -> LabeledDataset {
    let c = spec.num_classes();
    let n = c * spec.samples_per_class;
    let mut points = Array2::<f64>::zeros((n, spec.d));
    let mut labels = vec![0usize; n];
    for (class_idx, class) in spec.classes.iter().enumerate() {
        let mut normals = NormalSource::new(derive_seed(seed, class_idx as u64));
        let base = class_idx * spec.samples_per_class;
        for row in 0..spec.samples_per_class {
            labels[base + row] = class_idx;
            for (col, &mean) in class.mean.iter().enumerate() {
                points[[base + row, col]] = normals.next_scaled(mean, class.std);
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    shuffle(&mut order, derive_seed(seed, STREAM_SHUFFLE));
    let mut shuffled_points = Array2::<f64>::zeros((n, spec.d));
    let mut shuffled_labels = vec![0usize; n];
    for (dst, &src) in order.iter().enumerate() {
        shuffled_labels[dst] = labels[src];
        shuffled_points.row_mut(dst).assign(&points.row(src));
    }
    LabeledDataset { points: shuffled_points, labels: shuffled_labels, num_classes: c }
}

/// The four-class fairness geometry and its train/test splits.
///
/// Class means (unit vectors eᵢ are coordinate axes):
/// * class 0 (hard): η·1/√d, standard deviation `sigma_hard`;
/// * class 1 (near neighbor): class 0's mean + `near_gap`·e₁;
/// * classes 2, 3 (far): class 0's mean + `far_gap`·e₂ / e₃;
/// * classes 1–3 have standard deviation 1.
///
/// Requires d ≥ 3 so the three offsets are orthogonal, and
/// `far_gap ≥ near_gap > 0` (equal gaps give the symmetric placement).
/// Train and test splits come from disjoint derived seeds.
#[allow(clippy::too_many_arguments)]
pub fn preset_fairness(
    d: usize,
    eta: f64,
    near_gap: f64,
    far_gap: f64,
    sigma_hard: f64,
    samples_per_class: usize,
    seed: u64,
) -> Result<(MixtureSpec, LabeledDataset, LabeledDataset)> {
    if !(near_gap > 0.0) || !(far_gap >= near_gap) {
        return Err(Error::InvalidGaps {
            reason: format!(
                "need far_gap ≥ near_gap > 0, got near_gap={near_gap}, far_gap={far_gap}"
            ),
        });
    }
    if d < 3 {
        return Err(Error::InvalidGaps {
            reason: format!("the four-class geometry needs d ≥ 3, got {d}"),
        });
    }
    if !(sigma_hard > 0.0) || !sigma_hard.is_finite() {
        return Err(Error::config(format!(
            "sigma_hard must be positive and finite, got {sigma_hard}"
        )));
    }
    let base: Vec<f64> = vec![eta / (d as f64).sqrt(); d];
    let offset = |axis: usize, gap: f64| -> Vec<f64> {
        let mut m = base.clone();
        m[axis] += gap;
        m
    };
    let spec = MixtureSpec::new(
        vec![
            ClassSpec { mean: base.clone(), std: sigma_hard },
            ClassSpec { mean: offset(0, near_gap), std: 1.0 },
            ClassSpec { mean: offset(1, far_gap), std: 1.0 },
            ClassSpec { mean: offset(2, far_gap), std: 1.0 },
        ],
        samples_per_class,
    )?;
    let train = sample(&spec, derive_seed(seed, STREAM_TRAIN));
    let test = sample(&spec, derive_seed(seed, STREAM_TEST));
    Ok((spec, train, test))
}

/// Serialize a dataset to CSV: header `y,x0,…,x{d−1}`, one row per sample,
/// 9 significant digits.
pub fn write_dataset_csv(dataset: &LabeledDataset, path: &Path) -> Result<()> {
    let d = dataset.dim();
    let mut out = String::from("y");
    for j in 0..d {
        out.push_str(&format!(",x{j}"));
    }
    out.push('\n');
    for (i, &y) in dataset.labels.iter().enumerate() {
        out.push_str(&y.to_string());
        for j in 0..d {
            out.push(',');
            out.push_str(&sig(dataset.points[[i, j]], 9));
        }
        out.push('\n');
    }
    write_atomic(path, &out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_class_spec(std: f64, samples: usize) -> MixtureSpec {
        MixtureSpec::new(
            vec![
                ClassSpec { mean: vec![1.0, 0.0, 0.0], std },
                ClassSpec { mean: vec![-1.0, 0.0, 0.0], std },
            ],
            samples,
        )
        .unwrap()
    }

    #[test]
    fn zero_samples_gives_empty_dataset() {
        let ds = sample(&two_class_spec(1.0, 0), 3);
        assert_eq!(ds.len(), 0);
        assert!(ds.is_empty());
        assert_eq!(ds.points.nrows(), 0);
    }

    #[test]
    fn vanishing_variance_pins_points_to_means() {
        let spec = two_class_spec(1e-9, 50);
        let ds = sample(&spec, 12);
        for (i, &y) in ds.labels.iter().enumerate() {
            for j in 0..spec.d {
                let delta = (ds.points[[i, j]] - spec.classes[y].mean[j]).abs();
                assert!(delta < 1e-6, "row {i} coord {j} off by {delta}");
            }
        }
    }

    #[test]
    fn empirical_means_obey_law_of_large_numbers() {
        // 10⁵ total points across two classes.
        let spec = two_class_spec(1.0, 50_000);
        let ds = sample(&spec, 99);
        let n = spec.samples_per_class as f64;
        let bound = 3.0 * spec.classes[0].std / n.sqrt();
        for class in 0..2 {
            let rows = ds.class_indices(class);
            assert_eq!(rows.len(), spec.samples_per_class);
            for j in 0..spec.d {
                let mean: f64 =
                    rows.iter().map(|&i| ds.points[[i, j]]).sum::<f64>() / n;
                let expected = spec.classes[class].mean[j];
                assert!(
                    (mean - expected).abs() <= bound,
                    "class {class} coord {j}: {mean} vs {expected} (bound {bound})"
                );
            }
        }
    }

    #[test]
    fn sampling_is_deterministic_and_seed_sensitive() {
        let spec = two_class_spec(1.0, 200);
        let a = sample(&spec, 7);
        let b = sample(&spec, 7);
        assert_eq!(a, b);
        let c = sample(&spec, 8);
        assert_ne!(a.points, c.points);
    }

    #[test]
    fn class_counts_are_balanced_after_shuffle() {
        let spec = two_class_spec(1.0, 333);
        let ds = sample(&spec, 21);
        assert_eq!(ds.class_counts(), vec![333, 333]);
        // The shuffle actually interleaves: the first block is no longer
        // single-class.
        let first_block: Vec<usize> = ds.labels.iter().take(333).copied().collect();
        assert!(first_block.iter().any(|&y| y != first_block[0]));
    }

    #[test]
    fn preset_distances_match_requested_gaps() {
        let (spec, _, _) = preset_fairness(10, 1.0, 1.2, 3.0, 1.3, 10, 5).unwrap();
        assert!((spec.centroid_distance(0, 1) - 1.2).abs() < 1e-9);
        assert!((spec.centroid_distance(0, 2) - 3.0).abs() < 1e-9);
        assert!((spec.centroid_distance(0, 3) - 3.0).abs() < 1e-9);
    }

    #[test]
    fn preset_hard_class_is_nearest_on_average() {
        let (spec, _, _) = preset_fairness(10, 1.0, 1.2, 3.0, 1.3, 10, 5).unwrap();
        let avg_dist = |c: usize| -> f64 {
            (0..4)
                .filter(|&o| o != c)
                .map(|o| spec.centroid_distance(c, o))
                .sum::<f64>()
                / 3.0
        };
        let d0 = avg_dist(0);
        for c in 1..4 {
            assert!(
                d0 < avg_dist(c),
                "class 0 avg {d0} not minimal vs class {c} avg {}",
                avg_dist(c)
            );
        }
    }

    #[test]
    fn preset_equal_gaps_are_symmetric() {
        let (spec, _, _) = preset_fairness(10, 1.0, 2.0, 2.0, 1.3, 10, 5).unwrap();
        let d01 = spec.centroid_distance(0, 1);
        for c in 2..4 {
            assert!((spec.centroid_distance(0, c) - d01).abs() < 1e-9);
        }
    }

    #[test]
    fn preset_is_deterministic_with_disjoint_splits() {
        let (_, train_a, test_a) = preset_fairness(10, 1.0, 1.2, 3.0, 1.3, 20, 42).unwrap();
        let (_, train_b, test_b) = preset_fairness(10, 1.0, 1.2, 3.0, 1.3, 20, 42).unwrap();
        assert_eq!(train_a, train_b);
        assert_eq!(test_a, test_b);
        assert_ne!(train_a.points, test_a.points);
    }

    #[test]
    fn preset_rejects_bad_gaps() {
        assert!(matches!(
            preset_fairness(10, 1.0, 3.0, 1.2, 1.3, 10, 5),
            Err(Error::InvalidGaps { .. })
        ));
        assert!(matches!(
            preset_fairness(10, 1.0, 0.0, 1.2, 1.3, 10, 5),
            Err(Error::InvalidGaps { .. })
        ));
        assert!(matches!(
            preset_fairness(2, 1.0, 1.2, 3.0, 1.3, 10, 5),
            Err(Error::InvalidGaps { .. })
        ));
    }

    #[test]
    fn spec_constructor_validates() {
        assert!(MixtureSpec::new(vec![ClassSpec { mean: vec![0.0], std: 1.0 }], 5).is_err());
        assert!(MixtureSpec::new(
            vec![
                ClassSpec { mean: vec![0.0, 1.0], std: 1.0 },
                ClassSpec { mean: vec![0.0], std: 1.0 },
            ],
            5
        )
        .is_err());
        assert!(MixtureSpec::new(
            vec![
                ClassSpec { mean: vec![0.0], std: 0.0 },
                ClassSpec { mean: vec![1.0], std: 1.0 },
            ],
            5
        )
        .is_err());
    }

    #[test]
    fn dataset_csv_round_trip_is_byte_stable() {
        let spec = two_class_spec(1.0, 5);
        let ds = sample(&spec, 3);
        let dir = std::env::temp_dir().join("dafa_lab_synthdata_test");
        let path = dir.join("data.csv");
        write_dataset_csv(&ds, &path).unwrap();
        let first = std::fs::read_to_string(&path).unwrap();
        write_dataset_csv(&ds, &path).unwrap();
        let second = std::fs::read_to_string(&path).unwrap();
        assert_eq!(first, second);
        assert!(first.starts_with("y,x0,x1,x2\n"));
        assert_eq!(first.lines().count(), 11);
        std::fs::remove_dir_all(&dir).ok();
    }
}
