//! The class-weight allocation engine.
//!
//! Input: a C×C matrix p where p[i][j] is the average softmax probability of
//! class j on (adversarial) examples of true class i — the diagonal p[i][i]
//! measures how easy class i is. Weights start at w0 per class and move
//! pairwise: whenever class i is strictly harder than class j
//! (p[i][i] < p[j][j]), some mass moves from j's weight to i's. The three
//! schemes differ only in how much mass a pair exchanges; every exchange is
//! equal-and-opposite, so the total Σ W = C·w0 is conserved exactly until
//! clipping. Exact ties transfer nothing (strict inequalities).
//!
//! A similarity matrix can also come from mean class embeddings (cosine
//! similarity, floored at zero, row-normalized) and feeds the same engine.

use crate::error::Error;
use crate::io::{parse_float_rows, read_to_string, sig, write_atomic};
use crate::Result;
use std::path::Path;

/// Maximum tolerated drift of a probability row sum from 1.
pub const ROW_SUM_TOL: f64 = 1e-6;

/// C×C class-wise probability (or normalized similarity) matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassProbMatrix {
    p: Vec<Vec<f64>>,
}

impl ClassProbMatrix {
    /// Validated constructor: square, C ≥ 2, entries in [0, 1], every row
    /// summing to 1 within [`ROW_SUM_TOL`].
    pub fn new(p: Vec<Vec<f64>>) -> Result<Self> {
        let c = p.len();
        if c < 2 {
            return Err(Error::InvalidMatrix {
                row: 0,
                reason: format!("need at least 2 classes, got {c}"),
            });
        }
        for (i, row) in p.iter().enumerate() {
            if row.len() != c {
                return Err(Error::InvalidMatrix {
                    row: i,
                    reason: format!("expected {c} columns, got {}", row.len()),
                });
            }
            if let Some(&bad) = row.iter().find(|&&v| !(0.0..=1.0).contains(&v)) {
                return Err(Error::InvalidMatrix {
                    row: i,
                    reason: format!("entry {bad} outside [0, 1]"),
                });
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidMatrix {
                    row: i,
                    reason: format!("row sums to {sum}, expected 1 within {ROW_SUM_TOL}"),
                });
            }
        }
        Ok(ClassProbMatrix { p })
    }

    /// Number of classes C.
    pub fn num_classes(&self) -> usize {
        self.p.len()
    }

    /// Entry p[i][j].
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.p[i][j]
    }

    /// Diagonal entry p[i][i]: the self-probability ("easiness") of class i.
    pub fn difficulty_diag(&self, i: usize) -> f64 {
        self.p[i][i]
    }

    /// Write as headerless C×C CSV, 12 significant digits.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for row in &self.p {
            let cells: Vec<String> = row.iter().map(|&v| sig(v, 12)).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        write_atomic(path, &out)
    }

    /// Read from the headerless CSV format, revalidating all invariants.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = read_to_string(path)?;
        ClassProbMatrix::new(parse_float_rows(&text, path)?)
    }
}

/// Per-class weights produced by the engine.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassWeights {
    /// Weight per class, index = label.
    pub w: Vec<f64>,
    /// The λ the allocation used.
    pub lambda_used: f64,
    /// Whether clipping changed any entry.
    pub clipped: bool,
}

impl ClassWeights {
    /// Uniform weights w0 for C classes (what a λ = 0 allocation returns).
    pub fn uniform(c: usize, w0: f64) -> Self {
        ClassWeights { w: vec![w0; c], lambda_used: 0.0, clipped: false }
    }

    /// Write as CSV `class,weight`, 9 significant digits.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("class,weight\n");
        for (i, &w) in self.w.iter().enumerate() {
            out.push_str(&format!("{i},{}\n", sig(w, 9)));
        }
        write_atomic(path, &out)
    }
}

/// How much weight a (harder i, easier j) pair exchanges.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightScheme {
    /// Transfer p[i][j]: the hard class's similarity toward the easy one.
    Basic,
    /// Transfer p[i][j]·p[j][j]: similarity scaled by the easy class's
    /// easiness, drawing more from the easier of equally similar neighbors.
    DifficultyScaled,
    /// Transfer p[j][i]: the easy class's similarity toward the hard one.
    EasyReference,
}

impl WeightScheme {
    /// Mass moved from class `easy` to class `hard` when
    /// p[hard][hard] < p[easy][easy].
    fn transfer(self, p: &ClassProbMatrix, hard: usize, easy: usize) -> f64 {
        match self {
            WeightScheme::Basic => p.get(hard, easy),
            WeightScheme::DifficultyScaled => p.get(hard, easy) * p.get(easy, easy),
            WeightScheme::EasyReference => p.get(easy, hard),
        }
    }
}

/// Core allocation: W_i = w0 + λ·Σ_{j≠i} (gains from harder-than-j pairs −
/// losses to harder classes), with the pair transfer set by `scheme`. Exact
/// diagonal ties exchange nothing.
pub fn allocate(
    p: &ClassProbMatrix,
    lambda: f64,
    w0: f64,
    scheme: WeightScheme,
) -> Result<ClassWeights> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::config(format!("lambda must be ≥ 0 and finite, got {lambda}")));
    }
    if !(w0 > 0.0) || !w0.is_finite() {
        return Err(Error::config(format!("w0 must be > 0 and finite, got {w0}")));
    }
    let c = p.num_classes();
    let mut w = vec![w0; c];
    for i in 0..c {
        let mut delta = 0.0;
        for j in 0..c {
            if i == j {
                continue;
            }
            if p.difficulty_diag(i) < p.difficulty_diag(j) {
                delta += scheme.transfer(p, i, j);
            } else if p.difficulty_diag(i) > p.difficulty_diag(j) {
                delta -= scheme.transfer(p, j, i);
            }
        }
        w[i] += lambda * delta;
    }
    Ok(ClassWeights { w, lambda_used: lambda, clipped: false })
}

/// Basic allocation (unit λ): pair transfer p[i][j].
pub fn weights_basic(p: &ClassProbMatrix, w0: f64) -> Result<ClassWeights> {
    allocate(p, 1.0, w0, WeightScheme::Basic)
}

/// Difficulty-scaled allocation: pair transfer p[i][j]·p[j][j], scaled by λ.
pub fn weights_scaled(p: &ClassProbMatrix, lambda: f64, w0: f64) -> Result<ClassWeights> {
    allocate(p, lambda, w0, WeightScheme::DifficultyScaled)
}

/// Easy-reference allocation: pair transfer p[j][i], scaled by λ.
pub fn weights_easy_reference(p: &ClassProbMatrix, lambda: f64, w0: f64) -> Result<ClassWeights> {
    allocate(p, lambda, w0, WeightScheme::EasyReference)
}

/// Elementwise floor at K > 0; the flag records whether anything changed.
/// The Σ W = C·w0 conservation no longer holds after an active clip.
pub fn clip(weights: &ClassWeights, k: f64) -> Result<ClassWeights> {
    if !(k > 0.0) || !k.is_finite() {
        return Err(Error::config(format!("clip floor K must be > 0, got {k}")));
    }
    let w: Vec<f64> = weights.w.iter().map(|&v| v.max(k)).collect();
    let clipped = weights.clipped || w != weights.w;
    Ok(ClassWeights { w, lambda_used: weights.lambda_used, clipped })
}

/// Build a similarity matrix from per-class mean embeddings: unit-ℓ₂
/// normalize, take cosine similarities, floor negatives at zero, normalize
/// each row to sum 1. The diagonal similarity is 1, so rows cannot
/// degenerate unless an embedding has zero norm.
pub fn prob_from_embeddings(embeddings: &[Vec<f64>]) -> Result<ClassProbMatrix> {
    let c = embeddings.len();
    if c < 2 {
        return Err(Error::InvalidMatrix {
            row: 0,
            reason: format!("need at least 2 class embeddings, got {c}"),
        });
    }
    let dim = embeddings[0].len();
    let mut unit = Vec::with_capacity(c);
    for (class, e) in embeddings.iter().enumerate() {
        if e.len() != dim {
            return Err(Error::DimensionMismatch {
                context: "class embedding length",
                expected: dim,
                got: e.len(),
            });
        }
        let norm = e.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::ZeroEmbedding { class });
        }
        unit.push(e.iter().map(|v| v / norm).collect::<Vec<f64>>());
    }
    let mut rows = Vec::with_capacity(c);
    for i in 0..c {
        let mut row: Vec<f64> = (0..c)
            .map(|j| {
                let dot: f64 = unit[i].iter().zip(&unit[j]).map(|(a, b)| a * b).sum();
                dot.max(0.0)
            })
            .collect();
        // Cosine of a vector with itself can land at 1 + ulp; keep entries
        // inside [0, 1] for the matrix invariant.
        for v in row.iter_mut() {
            *v = v.min(1.0);
        }
        let sum: f64 = row.iter().sum();
        if !(sum > 0.0) {
            return Err(Error::DegenerateRow { row: i });
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
        rows.push(row);
    }
    ClassProbMatrix::new(rows)
}
