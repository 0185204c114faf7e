//! Adversarial training loops with one-shot distance-aware class weighting.
//!
//! A run has three phases. Epochs 1..τ are a warm-up trained with uniform
//! class weights. During the final warm-up epoch the softmax outputs of the
//! adversarial training examples are accumulated per true class — no extra
//! inference pass. At the epoch-τ boundary those averages become a class
//! similarity matrix, the weight engine converts it into per-class weights
//! exactly once, and epochs τ+1..K continue with the frozen weights applied
//! to the cross-entropy term and/or the per-class adversarial margin.
//!
//! Two objectives are supported. `Trades` minimizes
//! W_y·CE(f(x), y) + β·KL(f(x) ‖ f(x+δ)) with δ maximizing the KL term
//! inside the per-example ball; β itself is never scaled by the class
//! weight. `Pgd` minimizes W_y·CE(f(x+δ), y) with δ from a cross-entropy
//! attack. Everything is deterministic given the seed: shuffle order,
//! attack initialization, and evaluation streams are all derived from it.

use crate::attack::{pgd, AttackConfig, AttackObjective, AttackTarget};
use crate::dafa::{
    allocate, clip, prob_from_embeddings, weights_easy_reference, weights_scaled,
    ClassProbMatrix, ClassWeights, WeightScheme,
};
use crate::error::Error;
use crate::metrics::MetricsRecord;
use crate::nn::{
    backward, ce_dlogits, forward, init, kl_dlogits_adv, kl_dlogits_clean, sgd_step,
    MlpParams,
};
use crate::rng::derive_seed;
use crate::synthdata::LabeledDataset;
use crate::Result;
use ndarray::{ArrayView1, Axis};
use serde::{Deserialize, Serialize};

/// Stream tag for parameter initialization.
const STREAM_INIT: u64 = 0xE1;
/// Stream tag for per-epoch shuffle order.
const STREAM_SHUFFLE: u64 = 0xE2;
/// Stream tag for per-batch attack randomness.
const STREAM_ATTACK: u64 = 0xE3;
/// Stream tag for evaluation attacks.
const STREAM_EVAL: u64 = 0xE4;
/// Stream tag for the evaluation subsample.
const STREAM_SUBSET: u64 = 0xE5;

/// Training objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Clean CE plus β-weighted KL robustness term, KL-objective attack.
    Trades,
    /// CE on adversarial examples only, CE-objective attack.
    Pgd,
}

/// Which parts of the objective the computed class weights touch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DafaMode {
    /// Never compute weights; uniform throughout.
    Off,
    /// Scale only the CE term by W_y.
    LossOnly,
    /// Scale only the per-class attack radius to W_y·ε.
    MarginOnly,
    /// Scale both the CE term and the radius.
    Both,
}

impl DafaMode {
    /// Whether the CE term is scaled after warm-up.
    pub fn scales_loss(self) -> bool {
        matches!(self, DafaMode::LossOnly | DafaMode::Both)
    }

    /// Whether the attack radius is scaled after warm-up.
    pub fn scales_margin(self) -> bool {
        matches!(self, DafaMode::MarginOnly | DafaMode::Both)
    }
}

/// How the class similarity matrix feeding the weight engine is obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightVariant {
    /// Mean adversarial softmax outputs, difficulty-scaled allocation.
    Prob,
    /// Cosine similarities of mean feature embeddings, basic allocation.
    Embedding,
    /// Mean adversarial softmax outputs, easy-reference allocation.
    EasyRef,
}

/// Step learning-rate schedule: `initial`, multiplied by `factor` at every
/// epoch listed in `decay_epochs` (1-based, inclusive).
#[derive(Clone, Debug, PartialEq)]
pub struct LrSchedule {
    /// Rate for epoch 1.
    pub initial: f64,
    /// Epochs at which the rate is multiplied by `factor`.
    pub decay_epochs: Vec<usize>,
    /// Multiplier applied at each decay epoch.
    pub factor: f64,
}

impl LrSchedule {
    /// Default schedule: 0.1, ×0.1 at 90% and 95% of the run.
    pub fn standard(epochs: usize) -> Self {
        let at = |frac: f64| ((epochs as f64 * frac).ceil() as usize).max(1);
        LrSchedule { initial: 0.1, decay_epochs: vec![at(0.9), at(0.95)], factor: 0.1 }
    }

    /// Learning rate in effect at a 1-based epoch.
    pub fn rate_at(&self, epoch: usize) -> f64 {
        let decays = self.decay_epochs.iter().filter(|&&d| d <= epoch).count();
        self.initial * self.factor.powi(decays as i32)
    }
}

/// Full specification of one training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Network layer sizes, input dimension first, class count last.
    pub layer_sizes: Vec<usize>,
    /// Total number of epochs K.
    pub epochs: usize,
    /// Warm-up length τ; weights are computed at the end of epoch τ.
    pub warmup_tau: usize,
    /// Weight-allocation scale λ.
    pub lambda: f64,
    /// TRADES trade-off β (never multiplied by class weights).
    pub beta: f64,
    /// Base adversarial margin ε.
    pub base_epsilon: f64,
    /// Learning-rate schedule.
    pub lr: LrSchedule,
    /// L2 weight decay coefficient.
    pub weight_decay: f64,
    /// Minibatch size; the last partial batch of an epoch is kept.
    pub batch_size: usize,
    /// Master seed; every stream in the run derives from it.
    pub seed: u64,
    /// Training objective.
    pub mode: TrainMode,
    /// What the computed weights apply to.
    pub dafa_mode: DafaMode,
    /// How the weights are computed.
    pub variant: WeightVariant,
    /// Lower clip bound for computed weights.
    pub clip_k: f64,
    /// Attack steps during training.
    pub attack_steps: usize,
    /// Attack step size as a fraction of the per-example radius.
    pub attack_step_frac: f64,
    /// Uniform test radius for per-epoch evaluation.
    pub eval_epsilon: f64,
    /// Per-class cap for intermediate-epoch evaluation; the final epoch
    /// always evaluates the full test set.
    pub eval_per_class: Option<usize>,
    /// Fixed per-class training radii, overriding ε and margin scaling;
    /// requires `dafa_mode = Off`.
    pub fixed_class_radii: Option<Vec<f64>>,
}

impl TrainConfig {
    /// Defaults: τ = ⌈K/2⌉, λ = 1, β = 6, standard schedule, weight decay
    /// 5e−4, batch 128, TRADES with weighting off, 10-step radius/4 attack.
    pub fn standard(layer_sizes: Vec<usize>, epochs: usize, epsilon: f64, seed: u64) -> Self {
        TrainConfig {
            layer_sizes,
            epochs,
            warmup_tau: epochs.div_ceil(2),
            lambda: 1.0,
            beta: 6.0,
            base_epsilon: epsilon,
            lr: LrSchedule::standard(epochs),
            weight_decay: 5e-4,
            batch_size: 128,
            seed,
            mode: TrainMode::Trades,
            dafa_mode: DafaMode::Off,
            variant: WeightVariant::Prob,
            clip_k: 0.1,
            attack_steps: 10,
            attack_step_frac: 0.25,
            eval_epsilon: epsilon,
            eval_per_class: None,
            fixed_class_radii: None,
        }
    }

    /// Check the config's internal invariants.
    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::EmptyArchitecture { got: self.layer_sizes.len() });
        }
        if self.epochs == 0 || self.warmup_tau == 0 || self.warmup_tau >= self.epochs {
            return Err(Error::config(format!(
                "need 0 < warmup_tau < epochs, got τ = {} of {}",
                self.warmup_tau, self.epochs
            )));
        }
        for (name, v) in [
            ("lambda", self.lambda),
            ("beta", self.beta),
            ("base_epsilon", self.base_epsilon),
            ("eval_epsilon", self.eval_epsilon),
            ("weight_decay", self.weight_decay),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::config(format!("{name} must be ≥ 0 and finite, got {v}")));
            }
        }
        if !(self.lr.initial > 0.0) || !(self.lr.factor > 0.0) {
            return Err(Error::config("learning rate and decay factor must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be ≥ 1"));
        }
        if !(self.clip_k > 0.0) {
            return Err(Error::config(format!("clip_k must be > 0, got {}", self.clip_k)));
        }
        if self.attack_steps == 0 || !(self.attack_step_frac > 0.0) {
            return Err(Error::config("attack needs ≥ 1 step and a positive step fraction"));
        }
        if let Some(radii) = &self.fixed_class_radii {
            if radii.len() != self.num_classes() {
                return Err(Error::DimensionMismatch {
                    context: "fixed per-class radii",
                    expected: self.num_classes(),
                    got: radii.len(),
                });
            }
            if radii.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
                return Err(Error::config("fixed radii must be ≥ 0 and finite"));
            }
            if self.dafa_mode != DafaMode::Off {
                return Err(Error::config(
                    "fixed per-class radii require the weight engine to be off",
                ));
            }
        }
        Ok(())
    }

    /// Class count implied by the architecture.
    pub fn num_classes(&self) -> usize {
        *self.layer_sizes.last().unwrap_or(&0)
    }
}

/// Running per-class mean of vectors (softmax outputs or embeddings).
#[derive(Clone, Debug)]
pub struct ClassMeanAccumulator {
    sums: Vec<Vec<f64>>,
    counts: Vec<usize>,
}

impl ClassMeanAccumulator {
    /// Empty accumulator for `num_classes` classes of `dim`-vectors.
    pub fn new(num_classes: usize, dim: usize) -> Self {
        ClassMeanAccumulator {
            sums: vec![vec![0.0; dim]; num_classes],
            counts: vec![0; num_classes],
        }
    }

    /// Add one vector under its true class.
    pub fn record(&mut self, row: ArrayView1<f64>, class: usize) {
        for (s, v) in self.sums[class].iter_mut().zip(row) {
            *s += v;
        }
        self.counts[class] += 1;
    }

    /// Examples seen per class.
    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// Per-class means; every class must have been seen at least once.
    pub fn means(&self) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(self.sums.len());
        for (class, sum) in self.sums.iter().enumerate() {
            let n = self.counts[class];
            if n == 0 {
                return Err(Error::EmptyClass { class });
            }
            out.push(sum.iter().map(|v| v / n as f64).collect());
        }
        Ok(out)
    }
}

/// Mutable state of a run between epochs.
#[derive(Clone, Debug)]
pub struct TrainState {
    /// Current network parameters.
    pub params: MlpParams,
    /// Last completed epoch (1-based; 0 before training).
    pub epoch: usize,
    /// Class weights in effect: uniform through epoch τ, frozen after.
    pub weights: ClassWeights,
    /// Adversarial softmax sums collected during the final warm-up epoch.
    pub probs: ClassMeanAccumulator,
    /// Adversarial embedding sums collected during the final warm-up epoch.
    pub embeddings: ClassMeanAccumulator,
}

/// Turn accumulated adversarial softmax outputs into a class probability
/// matrix: row i is the mean softmax over class-i examples, renormalized to
/// absorb floating drift.
pub fn collect_prob_matrix(acc: &ClassMeanAccumulator) -> Result<ClassProbMatrix> {
    let mut rows = acc.means()?;
    for row in &mut rows {
        let total: f64 = row.iter().sum();
        if total > 0.0 {
            for v in row.iter_mut() {
                *v /= total;
            }
        }
    }
    ClassProbMatrix::new(rows)
}

/// Compute clipped class weights from the accumulated state per the
/// configured variant.
fn compute_weights(config: &TrainConfig, state: &TrainState) -> Result<ClassWeights> {
    let raw = match config.variant {
        WeightVariant::Prob => {
            let p = collect_prob_matrix(&state.probs)?;
            weights_scaled(&p, config.lambda, 1.0)?
        }
        WeightVariant::EasyRef => {
            let p = collect_prob_matrix(&state.probs)?;
            weights_easy_reference(&p, config.lambda, 1.0)?
        }
        WeightVariant::Embedding => {
            let means = state.embeddings.means()?;
            let p = prob_from_embeddings(&means)?;
            allocate(&p, config.lambda, 1.0, WeightScheme::Basic)?
        }
    };
    clip(&raw, config.clip_k)
}

/// Deterministic stratified subset: up to `per_class` examples of every
/// class, chosen by a seeded shuffle of each class's indices.
pub fn stratified_subsample(
    data: &LabeledDataset,
    per_class: usize,
    seed: u64,
) -> LabeledDataset {
    let mut keep = Vec::new();
    for class in 0..data.num_classes {
        let mut idx = data.class_indices(class);
        crate::rng::shuffle(&mut idx, derive_seed(seed, class as u64));
        idx.truncate(per_class);
        keep.extend(idx);
    }
    keep.sort_unstable();
    LabeledDataset {
        points: data.points.select(Axis(0), &keep),
        labels: keep.iter().map(|&i| data.labels[i]).collect(),
        num_classes: data.num_classes,
    }
}

/// Per-class clean and robust accuracy under an evaluation attack. An
/// example counts as robust only if it is classified correctly both clean
/// and under the attack, so robust accuracy never exceeds clean accuracy
/// and an ε = 0 attack reproduces clean accuracy exactly.
pub fn evaluate(
    params: &MlpParams,
    test: &LabeledDataset,
    attack: &AttackConfig,
) -> Result<MetricsRecord> {
    if attack.objective != AttackObjective::Ce {
        return Err(Error::config("evaluation uses a cross-entropy attack"));
    }
    let clean_trace = forward(params, &test.points)?;
    let clean_pred = clean_trace.predictions();
    let radii = vec![attack.epsilon; test.len()];
    let delta = pgd(
        params,
        &test.points,
        AttackTarget::Ce { labels: &test.labels },
        &radii,
        attack,
    )?;
    let adv_trace = forward(params, &(&test.points + &delta))?;
    let adv_pred = adv_trace.predictions();

    let c = test.num_classes;
    let mut total = vec![0usize; c];
    let mut clean_ok = vec![0usize; c];
    let mut robust_ok = vec![0usize; c];
    for (i, &y) in test.labels.iter().enumerate() {
        total[y] += 1;
        if clean_pred[i] == y {
            clean_ok[y] += 1;
            if adv_pred[i] == y {
                robust_ok[y] += 1;
            }
        }
    }
    let mut clean_acc = Vec::with_capacity(c);
    let mut robust_acc = Vec::with_capacity(c);
    for class in 0..c {
        if total[class] == 0 {
            return Err(Error::EmptyClass { class });
        }
        clean_acc.push(100.0 * clean_ok[class] as f64 / total[class] as f64);
        robust_acc.push(100.0 * robust_ok[class] as f64 / total[class] as f64);
    }
    MetricsRecord::from_per_class(clean_acc, robust_acc)
}

/// Check that a dataset matches the configured architecture.
fn check_dataset(config: &TrainConfig, data: &LabeledDataset, role: &'static str) -> Result<()> {
    if data.dim() != config.layer_sizes[0] {
        return Err(Error::DimensionMismatch {
            context: role,
            expected: config.layer_sizes[0],
            got: data.dim(),
        });
    }
    if data.num_classes != config.num_classes() {
        return Err(Error::config(format!(
            "{role} has {} classes, architecture expects {}",
            data.num_classes,
            config.num_classes()
        )));
    }
    if data.is_empty() {
        return Err(Error::config(format!("{role} is empty")));
    }
    Ok(())
}

/// Run one full training loop. Returns the final parameters, one
/// `MetricsRecord` per epoch, and the class weights in effect at the end
/// (uniform when the weight engine is off).
pub fn train(
    config: &TrainConfig,
    train_set: &LabeledDataset,
    test_set: &LabeledDataset,
) -> Result<(MlpParams, Vec<MetricsRecord>, ClassWeights)> {
    config.validate()?;
    check_dataset(config, train_set, "training set")?;
    check_dataset(config, test_set, "test set")?;
    if config.mode == TrainMode::Pgd && config.dafa_mode.scales_margin() {
        log::warn!(
            "margin scaling under the PGD objective tends to hurt the worst class; \
             loss-only weighting is the recommended pairing"
        );
    }

    let c = config.num_classes();
    let embed_dim = if config.layer_sizes.len() > 2 {
        config.layer_sizes[config.layer_sizes.len() - 2]
    } else {
        config.layer_sizes[0]
    };
    let mut state = TrainState {
        params: init(&config.layer_sizes, derive_seed(config.seed, STREAM_INIT))?,
        epoch: 0,
        weights: ClassWeights::uniform(c, 1.0),
        probs: ClassMeanAccumulator::new(c, c),
        embeddings: ClassMeanAccumulator::new(c, embed_dim),
    };
    let n = train_set.len();
    let mut history = Vec::with_capacity(config.epochs);

    // Fixed evaluation subset for intermediate epochs; the final epoch uses
    // the full test set.
    let subset = config
        .eval_per_class
        .map(|k| stratified_subsample(test_set, k, derive_seed(config.seed, STREAM_SUBSET)));

    for epoch in 1..=config.epochs {
        let lr = config.lr.rate_at(epoch);
        let collect = epoch == config.warmup_tau;
        let weighted = epoch > config.warmup_tau;

        let mut order: Vec<usize> = (0..n).collect();
        crate::rng::shuffle(
            &mut order,
            derive_seed(derive_seed(config.seed, STREAM_SHUFFLE), epoch as u64),
        );

        let attack_epoch_seed = derive_seed(derive_seed(config.seed, STREAM_ATTACK), epoch as u64);
        for (batch_idx, chunk) in order.chunks(config.batch_size).enumerate() {
            let x = train_set.points.select(Axis(0), chunk);
            let y: Vec<usize> = chunk.iter().map(|&i| train_set.labels[i]).collect();

            let radii: Vec<f64> = y
                .iter()
                .map(|&label| match &config.fixed_class_radii {
                    Some(fixed) => fixed[label],
                    None if weighted && config.dafa_mode.scales_margin() => {
                        state.weights.w[label] * config.base_epsilon
                    }
                    None => config.base_epsilon,
                })
                .collect();
            let objective = match config.mode {
                TrainMode::Trades => AttackObjective::Kl,
                TrainMode::Pgd => AttackObjective::Ce,
            };
            let attack = AttackConfig::new(
                config.base_epsilon,
                config.attack_steps,
                config.attack_step_frac,
                crate::attack::AttackInit::SmallRandom,
                objective,
                derive_seed(attack_epoch_seed, batch_idx as u64),
            )?;

            let clean_trace = forward(&state.params, &x)?;
            let target = match config.mode {
                TrainMode::Trades => AttackTarget::Kl { clean: &clean_trace },
                TrainMode::Pgd => AttackTarget::Ce { labels: &y },
            };
            let delta = pgd(&state.params, &x, target, &radii, &attack)?;
            let adv_trace = forward(&state.params, &(&x + &delta))?;

            if collect {
                for (i, &label) in y.iter().enumerate() {
                    state.probs.record(adv_trace.probs.row(i), label);
                    state.embeddings.record(adv_trace.embeddings().row(i), label);
                }
            }

            let class_weights = if weighted && config.dafa_mode.scales_loss() {
                Some(state.weights.w.as_slice())
            } else {
                None
            };
            let grads = match config.mode {
                TrainMode::Trades => {
                    let mut dz_clean = ce_dlogits(&clean_trace, &y, class_weights)?;
                    dz_clean.scaled_add(config.beta, &kl_dlogits_clean(&clean_trace, &adv_trace)?);
                    let dz_adv = kl_dlogits_adv(&clean_trace, &adv_trace)? * config.beta;
                    let (mut grads, _) = backward(&state.params, &clean_trace, &dz_clean)?;
                    let (adv_grads, _) = backward(&state.params, &adv_trace, &dz_adv)?;
                    grads.add_scaled(&adv_grads, 1.0);
                    grads
                }
                TrainMode::Pgd => {
                    let dz = ce_dlogits(&adv_trace, &y, class_weights)?;
                    backward(&state.params, &adv_trace, &dz)?.0
                }
            };
            sgd_step(&mut state.params, &grads, lr, config.weight_decay);
        }

        if epoch == config.warmup_tau && config.dafa_mode != DafaMode::Off {
            state.weights = compute_weights(config, &state)?;
        }
        state.epoch = epoch;

        let eval_set = match (&subset, epoch == config.epochs) {
            (Some(s), false) => s,
            _ => test_set,
        };
        let eval_attack = AttackConfig::evaluation(
            config.eval_epsilon,
            derive_seed(derive_seed(config.seed, STREAM_EVAL), epoch as u64),
        );
        history.push(evaluate(&state.params, eval_set, &eval_attack)?);
    }

    Ok((state.params, history, state.weights))
}
