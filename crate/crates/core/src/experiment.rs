//! Paired experiment runners over the synthetic presets.
//!
//! Every experiment here trains matched runs — identical data and attack
//! budgets at a given seed — varying only the treatment arm (class
//! weighting, per-class radii, or task geometry), then assembles a
//! schema-stable CSV report plus a human-readable summary. Runs are
//! independent, so the runners can dispatch them across a bounded worker
//! pool; reports are always assembled single-threaded in (configuration,
//! seed) order, which makes reruns byte-identical regardless of the job
//! count.

use std::collections::VecDeque;
use std::path::Path;
use std::sync::Mutex;

use serde::Deserialize;

use crate::dafa::ClassWeights;
use crate::io::{read_to_string, sig, write_atomic};
use crate::metrics::{class_geometry, correlation, rho, ClassGeometry, MetricsRecord};
use crate::nn::{forward, MlpParams};
use crate::rng::derive_seed;
use crate::synthdata::{preset_fairness, sample, ClassSpec, LabeledDataset, MixtureSpec};
use crate::training::{train, DafaMode, TrainConfig, TrainMode, WeightVariant};
use crate::{Error, Result};

/// Stream tag separating dataset generation from the training streams that
/// consume the same master seed.
const STREAM_DATA: u64 = 0xF1;

// ---------------------------------------------------------------------------
// Presets
// ---------------------------------------------------------------------------

/// Geometry and size of the four-class fairness task.
///
/// The defaults are calibrated so that the standard protocol (40 epochs,
/// half-way warm-up, β = 6, ε = 0.5, λ = 1) exhibits the documented
/// fairness behavior: the hard near pair trades accuracy toward its weaker
/// member without inverting, and the far classes give up little.
#[derive(Clone, Debug, PartialEq)]
pub struct FairnessPreset {
    /// Input dimension (≥ 3).
    pub dim: usize,
    /// Base mean scale η.
    pub eta: f64,
    /// Gap between the hard class and its near neighbor.
    pub near_gap: f64,
    /// Gap from the hard class to each far class.
    pub far_gap: f64,
    /// Standard deviation of the hard class (others are 1).
    pub sigma_hard: f64,
    /// Draws per class in each of the train and test splits.
    pub samples_per_class: usize,
}

impl Default for FairnessPreset {
    fn default() -> Self {
        FairnessPreset {
            dim: 10,
            eta: 1.0,
            near_gap: 3.2,
            far_gap: 5.0,
            sigma_hard: 1.9,
            samples_per_class: 2000,
        }
    }
}

impl FairnessPreset {
    /// Generate the train/test splits for one master seed. Data streams are
    /// derived from the seed, so runs that share a seed share data exactly.
    pub fn generate(&self, seed: u64) -> Result<(MixtureSpec, LabeledDataset, LabeledDataset)> {
        preset_fairness(
            self.dim,
            self.eta,
            self.near_gap,
            self.far_gap,
            self.sigma_hard,
            self.samples_per_class,
            derive_seed(seed, STREAM_DATA),
        )
    }
}

/// A symmetric two-class task: equal standard deviations, means separated
/// by `gap` along the first coordinate. Used by the margin-asymmetry
/// experiment, where only the per-class training radii differ.
#[derive(Clone, Debug, PartialEq)]
pub struct NearPairPreset {
    /// Input dimension (≥ 1).
    pub dim: usize,
    /// Base mean scale η.
    pub eta: f64,
    /// Distance between the two class means.
    pub gap: f64,
    /// Draws per class in each of the train and test splits.
    pub samples_per_class: usize,
}

impl Default for NearPairPreset {
    fn default() -> Self {
        NearPairPreset { dim: 10, eta: 1.0, gap: 2.5, samples_per_class: 1000 }
    }
}

impl NearPairPreset {
    /// Build the two-component mixture.
    pub fn spec(&self) -> Result<MixtureSpec> {
        if self.dim == 0 {
            return Err(Error::config("near-pair preset needs dim ≥ 1"));
        }
        if !(self.gap > 0.0) || !self.gap.is_finite() {
            return Err(Error::config(format!(
                "near-pair gap must be positive and finite, got {}",
                self.gap
            )));
        }
        let base: Vec<f64> = vec![self.eta / (self.dim as f64).sqrt(); self.dim];
        let mut other = base.clone();
        other[0] += self.gap;
        MixtureSpec::new(
            vec![ClassSpec { mean: base, std: 1.0 }, ClassSpec { mean: other, std: 1.0 }],
            self.samples_per_class,
        )
    }

    /// Generate the train/test splits for one master seed.
    pub fn generate(&self, seed: u64) -> Result<(MixtureSpec, LabeledDataset, LabeledDataset)> {
        let spec = self.spec()?;
        let data_seed = derive_seed(seed, STREAM_DATA);
        let train_set = sample(&spec, derive_seed(data_seed, 1));
        let test_set = sample(&spec, derive_seed(data_seed, 2));
        Ok((spec, train_set, test_set))
    }
}

// ---------------------------------------------------------------------------
// Run matrix
// ---------------------------------------------------------------------------

/// One completed training run inside an experiment.
#[derive(Clone, Debug)]
pub struct ArmRun {
    /// Which arm of the experiment this run belongs to (e.g. "baseline").
    pub label: String,
    /// Master seed of the run.
    pub seed: u64,
    /// Final model parameters.
    pub params: MlpParams,
    /// Per-epoch evaluation records; the last entry is the final test-set
    /// evaluation.
    pub history: Vec<MetricsRecord>,
    /// The class weights the run trained with after warm-up.
    pub weights: ClassWeights,
}

impl ArmRun {
    /// The final full-test-set evaluation.
    pub fn final_metrics(&self) -> &MetricsRecord {
        self.history.last().expect("training history is never empty")
    }
}

/// Run boxed tasks on up to `jobs` worker threads, returning results in
/// task order. `jobs = 1` runs everything on the calling thread. The first
/// error aborts the collection (remaining queued tasks are skipped).
fn run_parallel<T: Send>(
    tasks: Vec<Box<dyn FnOnce() -> Result<T> + Send>>,
    jobs: usize,
) -> Result<Vec<T>> {
    if jobs == 0 {
        return Err(Error::config("--jobs must be ≥ 1"));
    }
    if jobs == 1 {
        return tasks.into_iter().map(|task| task()).collect();
    }
    let queue: Mutex<VecDeque<(usize, Box<dyn FnOnce() -> Result<T> + Send>)>> =
        Mutex::new(tasks.into_iter().enumerate().collect());
    let results: Mutex<Vec<Option<Result<T>>>> = {
        let n = queue.lock().expect("queue lock").len();
        Mutex::new((0..n).map(|_| None).collect())
    };
    let failed = Mutex::new(false);
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                if *failed.lock().expect("failure flag lock") {
                    return;
                }
                let next = queue.lock().expect("queue lock").pop_front();
                let Some((index, task)) = next else { return };
                let outcome = task();
                if outcome.is_err() {
                    *failed.lock().expect("failure flag lock") = true;
                }
                results.lock().expect("results lock")[index] = Some(outcome);
            });
        }
    });
    let collected = results.into_inner().expect("results lock");
    let mut out = Vec::with_capacity(collected.len());
    for slot in collected {
        match slot {
            Some(Ok(value)) => out.push(value),
            Some(Err(e)) => return Err(e),
            // A task skipped because an earlier one failed; report the
            // failure found above instead.
            None => {
                return Err(Error::config(
                    "experiment aborted after an earlier run failed",
                ))
            }
        }
    }
    Ok(out)
}

/// Train one run per (arm, seed) pair on the fairness preset. Arms run in
/// the given order, seeds within each arm; data at a given seed is shared
/// by every arm, so the comparison is paired.
pub fn run_fairness_arms(
    preset: &FairnessPreset,
    template: &TrainConfig,
    arms: &[(&str, DafaMode)],
    seeds: &[u64],
    jobs: usize,
) -> Result<Vec<ArmRun>> {
    if seeds.is_empty() {
        return Err(Error::config("at least one seed is required"));
    }
    let mut tasks: Vec<Box<dyn FnOnce() -> Result<ArmRun> + Send>> = Vec::new();
    for &(label, mode) in arms {
        for &seed in seeds {
            let preset = preset.clone();
            let mut config = template.clone();
            config.seed = seed;
            config.dafa_mode = mode;
            let label = label.to_string();
            tasks.push(Box::new(move || {
                let (_, train_set, test_set) = preset.generate(seed)?;
                let (params, history, weights) = train(&config, &train_set, &test_set)?;
                Ok(ArmRun { label, seed, params, history, weights })
            }));
        }
    }
    run_parallel(tasks, jobs)
}

// ---------------------------------------------------------------------------
// Fairness report
// ---------------------------------------------------------------------------

/// Format one accuracy cell at the report's 9 significant digits.
fn cell(x: f64) -> String {
    sig(x, 9)
}

/// Sample standard deviation (n − 1 denominator); `None` below 2 samples.
fn sample_std(values: &[f64]) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let ss = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
    Some((ss / (values.len() - 1) as f64).sqrt())
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// The paired fairness report: per-seed rows for each arm followed by
/// mean and std rows. ρ columns are filled on treatment rows only, each ρ
/// computed against the baseline run with the same seed and then averaged;
/// std cells are empty with a single seed.
///
/// Header: `config,seed,clean_avg,clean_worst,robust_avg,robust_worst,rho_nat,rho_rob`.
pub fn fairness_report(baseline: &[ArmRun], treatments: &[&[ArmRun]]) -> Result<String> {
    let mut out =
        String::from("config,seed,clean_avg,clean_worst,robust_avg,robust_worst,rho_nat,rho_rob\n");
    let mut arms: Vec<&[ArmRun]> = vec![baseline];
    arms.extend_from_slice(treatments);
    for (arm_index, runs) in arms.iter().enumerate() {
        if runs.is_empty() {
            return Err(Error::config("fairness report needs ≥ 1 run per arm"));
        }
        let label = &runs[0].label;
        let mut columns: Vec<Vec<f64>> = vec![Vec::new(); 6];
        let mut any_rho = false;
        for run in runs.iter() {
            let m = run.final_metrics();
            let mut row = vec![
                label.clone(),
                run.seed.to_string(),
                cell(m.avg_clean),
                cell(m.worst_clean),
                cell(m.avg_robust),
                cell(m.worst_robust),
            ];
            columns[0].push(m.avg_clean);
            columns[1].push(m.worst_clean);
            columns[2].push(m.avg_robust);
            columns[3].push(m.worst_robust);
            if arm_index == 0 {
                row.push(String::new());
                row.push(String::new());
            } else {
                let base = baseline
                    .iter()
                    .find(|b| b.seed == run.seed)
                    .ok_or_else(|| {
                        Error::config(format!(
                            "treatment arm {label} seed {} has no baseline partner",
                            run.seed
                        ))
                    })?
                    .final_metrics();
                let rho_nat =
                    rho((base.avg_clean, base.worst_clean), (m.avg_clean, m.worst_clean))?;
                let rho_rob =
                    rho((base.avg_robust, base.worst_robust), (m.avg_robust, m.worst_robust))?;
                row.push(cell(rho_nat));
                row.push(cell(rho_rob));
                columns[4].push(rho_nat);
                columns[5].push(rho_rob);
                any_rho = true;
            }
            out.push_str(&row.join(","));
            out.push('\n');
        }
        let stat_cell = |values: &[f64], stat: &dyn Fn(&[f64]) -> Option<f64>| -> String {
            if values.is_empty() {
                String::new()
            } else {
                stat(values).map(|v| cell(v)).unwrap_or_default()
            }
        };
        let mean_some = |v: &[f64]| Some(mean(v));
        let mut mean_row = vec![label.clone(), "mean".to_string()];
        let mut std_row = vec![label.clone(), "std".to_string()];
        for (col, values) in columns.iter().enumerate() {
            let used = if col < 4 { !values.is_empty() } else { any_rho };
            if used {
                mean_row.push(stat_cell(values, &mean_some));
                std_row.push(stat_cell(values, &sample_std));
            } else {
                mean_row.push(String::new());
                std_row.push(String::new());
            }
        }
        out.push_str(&mean_row.join(","));
        out.push('\n');
        out.push_str(&std_row.join(","));
        out.push('\n');
    }
    Ok(out)
}

/// Plain-text summary of a fairness report for terminal output.
pub fn fairness_summary(baseline: &[ArmRun], treatments: &[&[ArmRun]]) -> String {
    let mut out = String::new();
    let mut arms: Vec<&[ArmRun]> = vec![baseline];
    arms.extend_from_slice(treatments);
    for runs in arms {
        if runs.is_empty() {
            continue;
        }
        let avg: Vec<f64> = runs.iter().map(|r| r.final_metrics().avg_robust).collect();
        let worst: Vec<f64> = runs.iter().map(|r| r.final_metrics().worst_robust).collect();
        out.push_str(&format!(
            "{:<12} robust avg {:6.2}  worst {:6.2}  ({} seed{})\n",
            runs[0].label,
            mean(&avg),
            mean(&worst),
            runs.len(),
            if runs.len() == 1 { "" } else { "s" },
        ));
    }
    out
}

// ---------------------------------------------------------------------------
// Margin asymmetry
// ---------------------------------------------------------------------------

/// One run of the margin-asymmetry grid.
#[derive(Clone, Debug)]
pub struct MarginRun {
    /// Training objective of the run.
    pub mode: TrainMode,
    /// Which radii pattern the run trained with.
    pub radii_label: String,
    /// The per-class training radii (class 0, class 1).
    pub radii: (f64, f64),
    /// Master seed.
    pub seed: u64,
    /// Final test-set evaluation at the shared test radius.
    pub metrics: MetricsRecord,
}

/// The radii grid of the margin-asymmetry experiment, as multiples of the
/// test radius: symmetric, class 0 doubled, class 1 doubled.
pub const MARGIN_RADII: [(&str, f64, f64); 3] =
    [("symmetric", 1.0, 1.0), ("a_large", 2.0, 1.0), ("b_large", 1.0, 2.0)];

/// Train the margin-asymmetry grid: for each mode, radii pattern, and
/// seed, a run on the symmetric near-pair task with fixed per-class
/// training radii, all evaluated at the same test radius.
pub fn run_margin_asymmetry(
    preset: &NearPairPreset,
    template: &TrainConfig,
    modes: &[TrainMode],
    seeds: &[u64],
    jobs: usize,
) -> Result<Vec<MarginRun>> {
    if seeds.is_empty() {
        return Err(Error::config("at least one seed is required"));
    }
    let mut tasks: Vec<Box<dyn FnOnce() -> Result<MarginRun> + Send>> = Vec::new();
    for &mode in modes {
        for (radii_label, mult_a, mult_b) in MARGIN_RADII {
            for &seed in seeds {
                let preset = preset.clone();
                let mut config = template.clone();
                let epsilon = config.eval_epsilon;
                config.seed = seed;
                config.mode = mode;
                config.dafa_mode = DafaMode::Off;
                config.fixed_class_radii = Some(vec![mult_a * epsilon, mult_b * epsilon]);
                let radii = (mult_a * epsilon, mult_b * epsilon);
                let label = radii_label.to_string();
                tasks.push(Box::new(move || {
                    let (_, train_set, test_set) = preset.generate(seed)?;
                    let (_, history, _) = train(&config, &train_set, &test_set)?;
                    Ok(MarginRun {
                        mode,
                        radii_label: label,
                        radii,
                        seed,
                        metrics: history.last().expect("non-empty history").clone(),
                    })
                }));
            }
        }
    }
    run_parallel(tasks, jobs)
}

/// CSV report of the margin-asymmetry grid: one row per run and class,
/// then a mean row per (mode, radii, class) group.
///
/// Header: `mode,radii,seed,class,clean_acc,robust_acc`.
pub fn margin_report(runs: &[MarginRun]) -> String {
    let mut out = String::from("mode,radii,seed,class,clean_acc,robust_acc\n");
    let mode_name = |m: TrainMode| match m {
        TrainMode::Trades => "trades",
        TrainMode::Pgd => "pgd",
    };
    // Group rows by (mode, radii) in first-appearance order, seeds inside.
    let mut groups: Vec<(TrainMode, String)> = Vec::new();
    for run in runs {
        let key = (run.mode, run.radii_label.clone());
        if !groups.contains(&key) {
            groups.push(key);
        }
    }
    for (mode, radii_label) in groups {
        let members: Vec<&MarginRun> = runs
            .iter()
            .filter(|r| r.mode == mode && r.radii_label == radii_label)
            .collect();
        let classes = members[0].metrics.clean_per_class.len();
        for run in &members {
            for class in 0..classes {
                out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    mode_name(mode),
                    radii_label,
                    run.seed,
                    class,
                    cell(run.metrics.clean_per_class[class]),
                    cell(run.metrics.robust_per_class[class]),
                ));
            }
        }
        for class in 0..classes {
            let clean: Vec<f64> =
                members.iter().map(|r| r.metrics.clean_per_class[class]).collect();
            let robust: Vec<f64> =
                members.iter().map(|r| r.metrics.robust_per_class[class]).collect();
            out.push_str(&format!(
                "{},{},mean,{},{},{}\n",
                mode_name(mode),
                radii_label,
                class,
                cell(mean(&clean)),
                cell(mean(&robust)),
            ));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Distance sweep
// ---------------------------------------------------------------------------

/// One baseline run of the distance sweep with its feature-space geometry.
#[derive(Clone, Debug)]
pub struct SweepRun {
    /// The near-gap value of this run's task geometry.
    pub near_gap: f64,
    /// Master seed.
    pub seed: u64,
    /// The trained baseline run.
    pub run: ArmRun,
    /// Feature-space class geometry of the final model on the test set.
    pub geometry: ClassGeometry,
    /// Pearson correlation between per-class average centroid distance and
    /// per-class robust accuracy.
    pub pearson: f64,
}

/// Class geometry of a model's feature space: forward the dataset and
/// measure centroids, variances, and distances on the last hidden
/// activations.
pub fn embedding_geometry(params: &MlpParams, data: &LabeledDataset) -> Result<ClassGeometry> {
    let trace = forward(params, &data.points)?;
    class_geometry(trace.embeddings(), &data.labels, data.num_classes)
}

/// Train baseline (uniform-weight) runs at each near-gap value and
/// measure how feature-space distance tracks robust accuracy.
pub fn run_distance_sweep(
    base: &FairnessPreset,
    near_gaps: &[f64],
    template: &TrainConfig,
    seeds: &[u64],
    jobs: usize,
) -> Result<Vec<SweepRun>> {
    if near_gaps.is_empty() {
        return Err(Error::config("at least one near-gap value is required"));
    }
    if seeds.is_empty() {
        return Err(Error::config("at least one seed is required"));
    }
    let mut tasks: Vec<Box<dyn FnOnce() -> Result<SweepRun> + Send>> = Vec::new();
    for &near_gap in near_gaps {
        for &seed in seeds {
            let mut preset = base.clone();
            preset.near_gap = near_gap;
            // Keep the preset valid when sweeping past the far gap.
            if preset.far_gap < near_gap {
                preset.far_gap = near_gap;
            }
            let mut config = template.clone();
            config.seed = seed;
            config.dafa_mode = DafaMode::Off;
            tasks.push(Box::new(move || {
                let (_, train_set, test_set) = preset.generate(seed)?;
                let (params, history, weights) = train(&config, &train_set, &test_set)?;
                let geometry = embedding_geometry(&params, &test_set)?;
                let final_metrics = history.last().expect("non-empty history").clone();
                let pearson =
                    correlation(&geometry.avg_distances, &final_metrics.robust_per_class)?;
                Ok(SweepRun {
                    near_gap,
                    seed,
                    run: ArmRun {
                        label: "baseline".to_string(),
                        seed,
                        params,
                        history,
                        weights,
                    },
                    geometry,
                    pearson,
                })
            }));
        }
    }
    run_parallel(tasks, jobs)
}

/// CSV report of the distance sweep: one row per run and class carrying
/// that run's geometry and accuracy, with the run-level Pearson
/// correlation repeated on each row.
///
/// Header: `near_gap,seed,class,variance,avg_distance,robust_acc,pearson`.
pub fn sweep_report(runs: &[SweepRun]) -> String {
    let mut out = String::from("near_gap,seed,class,variance,avg_distance,robust_acc,pearson\n");
    for run in runs {
        let m = run.run.final_metrics();
        for class in 0..m.robust_per_class.len() {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                run.near_gap,
                run.seed,
                class,
                cell(run.geometry.variances[class]),
                cell(run.geometry.avg_distances[class]),
                cell(m.robust_per_class[class]),
                cell(run.pearson),
            ));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Experiment configuration files
// ---------------------------------------------------------------------------

fn default_eta() -> f64 {
    1.0
}
fn default_near_gap() -> f64 {
    FairnessPreset::default().near_gap
}
fn default_far_gap() -> f64 {
    FairnessPreset::default().far_gap
}
fn default_sigma_hard() -> f64 {
    FairnessPreset::default().sigma_hard
}
fn default_samples() -> usize {
    FairnessPreset::default().samples_per_class
}
fn default_dim() -> usize {
    FairnessPreset::default().dim
}
fn default_epochs() -> usize {
    40
}
fn default_lambda() -> f64 {
    1.0
}
fn default_beta() -> f64 {
    6.0
}
fn default_lr() -> f64 {
    0.1
}
fn default_weight_decay() -> f64 {
    5e-4
}
fn default_batch_size() -> usize {
    128
}
fn default_mode() -> TrainMode {
    TrainMode::Trades
}
fn default_dafa_mode() -> DafaMode {
    DafaMode::Off
}
fn default_variant() -> WeightVariant {
    WeightVariant::Prob
}
fn default_clip() -> f64 {
    0.1
}
fn default_steps() -> usize {
    10
}
fn default_step_frac() -> f64 {
    0.25
}
fn default_epsilon() -> f64 {
    0.5
}
fn default_seeds() -> Vec<u64> {
    vec![1]
}
fn default_out_dir() -> String {
    "out".to_string()
}

/// One explicit mixture component in a config file.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpecConfig {
    /// Mean vector.
    pub mean: Vec<f64>,
    /// Isotropic standard deviation.
    pub std: f64,
}

/// The `data` section: either the named fairness preset (with optional
/// geometry overrides) or an explicit class list — exactly one of the two.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Named preset; only "fairness" is recognized.
    #[serde(default)]
    pub preset: Option<String>,
    /// Explicit mixture components (alternative to `preset`).
    #[serde(default)]
    pub classes: Option<Vec<ClassSpecConfig>>,
    /// Input dimension for the preset.
    #[serde(default = "default_dim")]
    pub dim: usize,
    /// Base mean scale η for the preset.
    #[serde(default = "default_eta")]
    pub eta: f64,
    /// Near-pair gap for the preset.
    #[serde(default = "default_near_gap")]
    pub near_gap: f64,
    /// Far-class gap for the preset.
    #[serde(default = "default_far_gap")]
    pub far_gap: f64,
    /// Hard-class standard deviation for the preset.
    #[serde(default = "default_sigma_hard")]
    pub sigma_hard: f64,
    /// Draws per class in each split.
    #[serde(default = "default_samples")]
    pub samples_per_class: usize,
}

/// The `train` section: architecture and optimization settings.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    /// Full layer sizes, input through logits, e.g. `[10, 64, 64, 4]`.
    pub layers: Vec<usize>,
    /// Total epochs.
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// Warm-up boundary τ; defaults to ⌈epochs/2⌉.
    #[serde(default)]
    pub warmup: Option<usize>,
    /// Weight-allocation strength λ.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Robustness term coefficient β.
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// Initial learning rate.
    #[serde(default = "default_lr")]
    pub lr: f64,
    /// L2 weight decay.
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    /// Mini-batch size.
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Training objective: "trades" or "pgd".
    #[serde(default = "default_mode")]
    pub mode: TrainMode,
    /// Weight application: "off", "loss_only", "margin_only", or "both".
    #[serde(default = "default_dafa_mode")]
    pub dafa_mode: DafaMode,
    /// Similarity source: "prob", "embedding", or "easy_ref".
    #[serde(default = "default_variant")]
    pub variant: WeightVariant,
    /// Lower clip bound for computed weights.
    #[serde(default = "default_clip")]
    pub clip: f64,
    /// Per-class evaluation subsample during training epochs (the final
    /// epoch always evaluates the full test set).
    #[serde(default)]
    pub eval_per_class: Option<usize>,
}

/// The `attack_train` section: the PGD budget used inside training.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackTrainSection {
    /// Base ℓ∞ radius ε.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Gradient steps.
    #[serde(default = "default_steps")]
    pub steps: usize,
    /// Step length as a fraction of the radius.
    #[serde(default = "default_step_frac")]
    pub step_frac: f64,
}

impl Default for AttackTrainSection {
    fn default() -> Self {
        AttackTrainSection {
            epsilon: default_epsilon(),
            steps: default_steps(),
            step_frac: default_step_frac(),
        }
    }
}

/// The `attack_eval` section: evaluation always uses the fixed 20-step
/// budget, so only the radius is configurable.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackEvalSection {
    /// Evaluation ℓ∞ radius; defaults to the training radius.
    #[serde(default)]
    pub epsilon: Option<f64>,
}

impl Default for AttackEvalSection {
    fn default() -> Self {
        AttackEvalSection { epsilon: None }
    }
}

/// The `output` section.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// Directory receiving every artifact of the run.
    #[serde(default = "default_out_dir")]
    pub dir: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: default_out_dir() }
    }
}

/// A complete experiment configuration document.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Task data: preset or explicit mixture.
    pub data: DataSection,
    /// Training settings.
    pub train: TrainSection,
    /// Training-attack budget.
    #[serde(default)]
    pub attack_train: AttackTrainSection,
    /// Evaluation-attack radius.
    #[serde(default)]
    pub attack_eval: AttackEvalSection,
    /// Output locations.
    #[serde(default)]
    pub output: OutputSection,
    /// Master seeds, one run per seed.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
}

impl ExperimentConfig {
    /// Parse a JSON config file, rejecting unknown keys.
    pub fn load(path: &Path) -> Result<Self> {
        let text = read_to_string(path)?;
        let config: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    /// Structural validation beyond what serde enforces.
    pub fn validate(&self) -> Result<()> {
        match (&self.data.preset, &self.data.classes) {
            (Some(_), Some(_)) => {
                return Err(Error::config(
                    "data section must set exactly one of `preset` and `classes`, got both",
                ))
            }
            (None, None) => {
                return Err(Error::config(
                    "data section must set exactly one of `preset` and `classes`",
                ))
            }
            (Some(name), None) if name != "fairness" => {
                return Err(Error::config(format!(
                    "unknown preset {name:?}; the only named preset is \"fairness\""
                )))
            }
            _ => {}
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds list must not be empty"));
        }
        if self.train.layers.len() < 2 {
            return Err(Error::config(
                "train.layers needs at least input and output sizes",
            ));
        }
        let (d, c) = self.data_shape()?;
        let first = self.train.layers[0];
        let last = *self.train.layers.last().expect("checked non-empty");
        if first != d {
            return Err(Error::config(format!(
                "train.layers starts at {first} but the data dimension is {d}"
            )));
        }
        if last != c {
            return Err(Error::config(format!(
                "train.layers ends at {last} but the task has {c} classes"
            )));
        }
        Ok(())
    }

    /// Input dimension and class count of the configured data.
    fn data_shape(&self) -> Result<(usize, usize)> {
        if let Some(classes) = &self.data.classes {
            if classes.len() < 2 {
                return Err(Error::config("data.classes needs at least 2 classes"));
            }
            Ok((classes[0].mean.len(), classes.len()))
        } else {
            Ok((self.data.dim, 4))
        }
    }

    /// The fairness preset described by the data section, if it uses one.
    pub fn fairness_preset(&self) -> Option<FairnessPreset> {
        self.data.preset.as_ref()?;
        Some(FairnessPreset {
            dim: self.data.dim,
            eta: self.data.eta,
            near_gap: self.data.near_gap,
            far_gap: self.data.far_gap,
            sigma_hard: self.data.sigma_hard,
            samples_per_class: self.data.samples_per_class,
        })
    }

    /// Generate the train/test splits for one seed.
    pub fn generate(&self, seed: u64) -> Result<(MixtureSpec, LabeledDataset, LabeledDataset)> {
        if let Some(preset) = self.fairness_preset() {
            preset.generate(seed)
        } else {
            let classes = self
                .data
                .classes
                .as_ref()
                .expect("validated: classes present when preset absent")
                .iter()
                .map(|c| ClassSpec { mean: c.mean.clone(), std: c.std })
                .collect();
            let spec = MixtureSpec::new(classes, self.data.samples_per_class)?;
            let data_seed = derive_seed(seed, STREAM_DATA);
            let train_set = sample(&spec, derive_seed(data_seed, 1));
            let test_set = sample(&spec, derive_seed(data_seed, 2));
            Ok((spec, train_set, test_set))
        }
    }

    /// The training configuration for one seed.
    pub fn train_config(&self, seed: u64) -> Result<TrainConfig> {
        let epochs = self.train.epochs;
        let mut config = TrainConfig::standard(
            self.train.layers.clone(),
            epochs,
            self.attack_train.epsilon,
            seed,
        );
        if let Some(warmup) = self.train.warmup {
            config.warmup_tau = warmup;
        }
        config.lambda = self.train.lambda;
        config.beta = self.train.beta;
        config.lr.initial = self.train.lr;
        config.weight_decay = self.train.weight_decay;
        config.batch_size = self.train.batch_size;
        config.mode = self.train.mode;
        config.dafa_mode = self.train.dafa_mode;
        config.variant = self.train.variant;
        config.clip_k = self.train.clip;
        config.attack_steps = self.attack_train.steps;
        config.attack_step_frac = self.attack_train.step_frac;
        config.eval_epsilon = self.attack_eval.epsilon.unwrap_or(self.attack_train.epsilon);
        config.eval_per_class = self.train.eval_per_class;
        config.validate()?;
        Ok(config)
    }

    /// Write every artifact of one completed run into the output directory:
    /// epoch metrics, final weights, and the model checkpoint, all atomic.
    pub fn write_run_artifacts(&self, out_dir: &Path, run: &ArmRun) -> Result<()> {
        let tag = format!("{}_seed{}", run.label, run.seed);
        let metrics_csv = crate::metrics::epoch_metrics_csv(&run.history);
        write_atomic(&out_dir.join(format!("{tag}_epochs.csv")), &metrics_csv)?;
        run.weights.write_csv(&out_dir.join(format!("{tag}_weights.csv")))?;
        crate::nn::write_checkpoint(&run.params, &out_dir.join(format!("{tag}_model.json")))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::MetricsRecord;

    fn record(clean: Vec<f64>, robust: Vec<f64>) -> MetricsRecord {
        MetricsRecord::from_per_class(clean, robust).unwrap()
    }

    fn fake_run(label: &str, seed: u64, clean: Vec<f64>, robust: Vec<f64>) -> ArmRun {
        ArmRun {
            label: label.to_string(),
            seed,
            params: crate::nn::init(&[2, 2], seed).unwrap(),
            history: vec![record(clean, robust)],
            weights: ClassWeights::uniform(2, 1.0),
        }
    }

    #[test]
    fn parallel_results_keep_task_order() {
        let make_tasks = || -> Vec<Box<dyn FnOnce() -> Result<usize> + Send>> {
            (0..17)
                .map(|i| {
                    let task: Box<dyn FnOnce() -> Result<usize> + Send> =
                        Box::new(move || Ok(i * i));
                    task
                })
                .collect()
        };
        let sequential = run_parallel(make_tasks(), 1).unwrap();
        let parallel = run_parallel(make_tasks(), 4).unwrap();
        assert_eq!(sequential, (0..17).map(|i| i * i).collect::<Vec<_>>());
        assert_eq!(sequential, parallel);
    }

    #[test]
    fn parallel_propagates_task_errors() {
        let tasks: Vec<Box<dyn FnOnce() -> Result<usize> + Send>> = vec![
            Box::new(|| Ok(1)),
            Box::new(|| Err(Error::config("boom"))),
            Box::new(|| Ok(3)),
        ];
        let err = run_parallel(tasks, 2).unwrap_err();
        assert!(err.to_string().contains("boom") || err.to_string().contains("aborted"));
        assert!(run_parallel::<usize>(Vec::new(), 0).is_err());
    }

    #[test]
    fn fairness_report_structure_and_rho() {
        // Per-class accuracies chosen so the aggregates hit the documented
        // ρ example: baseline robust (avg 50, worst 20), treatment robust
        // (avg 49, worst 30) → ρ_rob = 0.52 exactly.
        let baseline = vec![
            fake_run("baseline", 1, vec![90.0, 70.0], vec![80.0, 20.0]),
            fake_run("baseline", 2, vec![90.0, 70.0], vec![80.0, 20.0]),
        ];
        let dafa = vec![
            fake_run("dafa", 1, vec![90.0, 70.0], vec![68.0, 30.0]),
            fake_run("dafa", 2, vec![90.0, 70.0], vec![68.0, 30.0]),
        ];
        let report = fairness_report(&baseline, &[&dafa]).unwrap();
        let lines: Vec<&str> = report.lines().collect();
        assert_eq!(
            lines[0],
            "config,seed,clean_avg,clean_worst,robust_avg,robust_worst,rho_nat,rho_rob"
        );
        // 2 seeds + mean + std per arm, 2 arms, plus header.
        assert_eq!(lines.len(), 1 + 2 * 4);
        assert!(lines[1].starts_with("baseline,1,") && lines[1].ends_with(",,"));
        let dafa_row: Vec<&str> = lines[5].split(',').collect();
        assert_eq!(dafa_row[0], "dafa");
        assert_eq!(dafa_row[6], "0.00000000e0");
        assert_eq!(dafa_row[7], "5.20000000e-1");
        // Identical values across the two seeds → std 0 on data columns.
        let std_row: Vec<&str> = lines[8].split(',').collect();
        assert_eq!(std_row[1], "std");
        assert_eq!(std_row[4], "0.00000000e0");
        // Byte determinism.
        assert_eq!(report, fairness_report(&baseline, &[&dafa]).unwrap());
    }

    #[test]
    fn fairness_report_single_seed_leaves_std_empty() {
        let baseline = vec![fake_run("baseline", 1, vec![80.0, 70.0], vec![50.0, 20.0])];
        let dafa = vec![fake_run("dafa", 1, vec![80.0, 70.0], vec![49.0, 30.0])];
        let report = fairness_report(&baseline, &[&dafa]).unwrap();
        let std_rows: Vec<&str> =
            report.lines().filter(|l| l.split(',').nth(1) == Some("std")).collect();
        assert_eq!(std_rows.len(), 2);
        for row in std_rows {
            let cells: Vec<&str> = row.split(',').collect();
            assert!(cells[2..].iter().all(|c| c.is_empty()), "row {row}");
        }
    }

    #[test]
    fn fairness_report_requires_matching_seeds() {
        let baseline = vec![fake_run("baseline", 1, vec![80.0], vec![50.0])];
        let dafa = vec![fake_run("dafa", 7, vec![80.0], vec![49.0])];
        assert!(fairness_report(&baseline, &[&dafa]).is_err());
    }

    #[test]
    fn margin_report_groups_and_means() {
        let runs = vec![
            MarginRun {
                mode: TrainMode::Trades,
                radii_label: "symmetric".to_string(),
                radii: (0.5, 0.5),
                seed: 1,
                metrics: record(vec![90.0, 88.0], vec![70.0, 68.0]),
            },
            MarginRun {
                mode: TrainMode::Trades,
                radii_label: "symmetric".to_string(),
                radii: (0.5, 0.5),
                seed: 2,
                metrics: record(vec![92.0, 86.0], vec![72.0, 66.0]),
            },
        ];
        let report = margin_report(&runs);
        let lines: Vec<&str> = report.lines().collect();
        assert_eq!(lines[0], "mode,radii,seed,class,clean_acc,robust_acc");
        // 2 runs × 2 classes + 2 mean rows.
        assert_eq!(lines.len(), 7);
        let mean_rows: Vec<&str> =
            lines.iter().filter(|l| l.contains(",mean,")).copied().collect();
        assert_eq!(mean_rows.len(), 2);
        assert_eq!(mean_rows[0], "trades,symmetric,mean,0,9.10000000e1,7.10000000e1");
    }

    #[test]
    fn config_parses_with_defaults_and_rejects_unknown_keys() {
        let text = r#"{
            "data": {"preset": "fairness", "dim": 6, "samples_per_class": 50},
            "train": {"layers": [6, 16, 4], "epochs": 4},
            "seeds": [3, 4]
        }"#;
        let config: ExperimentConfig = serde_json::from_str(text).unwrap();
        config.validate().unwrap();
        assert_eq!(config.train.beta, 6.0);
        assert_eq!(config.attack_train.epsilon, 0.5);
        assert_eq!(config.output.dir, "out");
        let tc = config.train_config(3).unwrap();
        assert_eq!(tc.warmup_tau, 2);
        assert_eq!(tc.eval_epsilon, 0.5);

        let unknown = r#"{
            "data": {"preset": "fairness"},
            "train": {"layers": [10, 4], "epochss": 4}
        }"#;
        assert!(serde_json::from_str::<ExperimentConfig>(unknown).is_err());
    }

    #[test]
    fn config_requires_exactly_one_data_source() {
        let both = r#"{
            "data": {"preset": "fairness", "classes": [{"mean": [0.0], "std": 1.0},
                                                        {"mean": [1.0], "std": 1.0}]},
            "train": {"layers": [10, 4]}
        }"#;
        let config: ExperimentConfig = serde_json::from_str(both).unwrap();
        assert!(config.validate().is_err());

        let neither = r#"{"data": {}, "train": {"layers": [10, 4]}}"#;
        let config: ExperimentConfig = serde_json::from_str(neither).unwrap();
        assert!(config.validate().is_err());
    }

    #[test]
    fn config_checks_layer_shape_against_data() {
        let text = r#"{
            "data": {"classes": [{"mean": [0.0, 0.0], "std": 1.0},
                                  {"mean": [2.0, 0.0], "std": 1.0}],
                      "samples_per_class": 20},
            "train": {"layers": [3, 8, 2]}
        }"#;
        let config: ExperimentConfig = serde_json::from_str(text).unwrap();
        let err = config.validate().unwrap_err().to_string();
        assert!(err.contains("data dimension"), "{err}");

        let text = r#"{
            "data": {"classes": [{"mean": [0.0, 0.0], "std": 1.0},
                                  {"mean": [2.0, 0.0], "std": 1.0}],
                      "samples_per_class": 20},
            "train": {"layers": [2, 8, 3]}
        }"#;
        let config: ExperimentConfig = serde_json::from_str(text).unwrap();
        let err = config.validate().unwrap_err().to_string();
        assert!(err.contains("classes"), "{err}");
    }

    #[test]
    fn tiny_fairness_matrix_is_deterministic_across_job_counts() {
        // Comfortably separated classes at a small radius so even a
        // 3-epoch model keeps every per-class robust accuracy nonzero
        // (ρ needs positive baselines).
        let preset = FairnessPreset {
            dim: 3,
            eta: 1.0,
            near_gap: 3.0,
            far_gap: 4.5,
            sigma_hard: 1.0,
            samples_per_class: 50,
        };
        let mut template = TrainConfig::standard(vec![3, 8, 4], 6, 0.1, 0);
        template.eval_per_class = Some(15);
        template.eval_epsilon = 0.05;
        let arms = [("baseline", DafaMode::Off), ("dafa", DafaMode::Both)];
        let seeds = [5, 6];
        let one = run_fairness_arms(&preset, &template, &arms, &seeds, 1).unwrap();
        let four = run_fairness_arms(&preset, &template, &arms, &seeds, 4).unwrap();
        assert_eq!(one.len(), 4);
        assert_eq!(one[0].label, "baseline");
        assert_eq!(one[2].label, "dafa");
        assert_eq!(one[1].seed, 6);
        for (a, b) in one.iter().zip(&four) {
            assert_eq!(a.params, b.params);
            assert_eq!(a.history, b.history);
        }
        // Equal runs make equal summaries; the ρ-bearing report is covered
        // by the fixture tests above.
        assert_eq!(
            fairness_summary(&one[..2], &[&one[2..]]),
            fairness_summary(&four[..2], &[&four[2..]])
        );
    }

    #[test]
    fn tiny_margin_grid_runs_and_reports() {
        let preset = NearPairPreset { dim: 3, eta: 1.0, gap: 2.0, samples_per_class: 25 };
        let mut template = TrainConfig::standard(vec![3, 6, 2], 2, 0.2, 0);
        template.eval_per_class = Some(10);
        let runs =
            run_margin_asymmetry(&preset, &template, &[TrainMode::Trades], &[9], 2).unwrap();
        assert_eq!(runs.len(), 3);
        assert_eq!(runs[0].radii_label, "symmetric");
        assert_eq!(runs[1].radii, (0.4, 0.2));
        let report = margin_report(&runs);
        // 3 runs × 2 classes + 3 groups × 2 mean rows + header.
        assert_eq!(report.lines().count(), 1 + 6 + 6);
    }

    #[test]
    fn tiny_distance_sweep_reports_geometry() {
        let base = FairnessPreset {
            dim: 3,
            eta: 1.0,
            near_gap: 1.0,
            far_gap: 2.0,
            sigma_hard: 1.2,
            samples_per_class: 25,
        };
        let mut template = TrainConfig::standard(vec![3, 6, 4], 2, 0.2, 0);
        template.eval_per_class = Some(10);
        let runs = run_distance_sweep(&base, &[1.0, 2.5], &template, &[4], 2).unwrap();
        assert_eq!(runs.len(), 2);
        for run in &runs {
            assert!(run.pearson.is_finite());
            assert!((-1.0..=1.0).contains(&run.pearson));
            assert_eq!(run.geometry.avg_distances.len(), 4);
        }
        let report = sweep_report(&runs);
        assert_eq!(report.lines().count(), 1 + 2 * 4);
        assert!(report.starts_with("near_gap,seed,class,"));
    }
}
