//! The Perpetual Learning Machine: a storage classifier and a recall
//! synthesizer trained against each other.
//!
//! Pretraining fits both networks to the 75 real digits. After that the
//! digits are no longer used for training: each PSGD step samples a class
//! under a [`BiasSchedule`], synthesizes that class's image with the recall
//! network, and trains both networks on the synthesized pair. The original
//! images are only read by [`evaluate_groups`].

mod metrics;

pub use metrics::{linear_fit_slope, mean, moving_average, MetricsLog, MetricsRow};

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{
    one_hot, zero_mean, Dataset75, GroupAssignment, ImageVector, IMAGE_LEN, NUM_CLASSES,
    NUM_GROUPS,
};
use crate::error::{PlmError, Result};
use crate::nncore::{
    argmax, init_network, read_network, write_network, ActivationKind, LossKind, Network,
    CHECKPOINT_MAGIC,
};
use crate::regularize::{
    derive_seed, parallel_dithered_gradient, DitherSpec, DropoutSpec, ReplicaConfig,
    ReplicaStreams,
};

pub const HIDDEN_UNITS: usize = 100;

// Stream-derivation tags; keep distinct so phases never share noise.
const NET_STORAGE: u64 = 1;
const NET_RECALL: u64 = 2;
const PHASE_PRETRAIN: u64 = 11;
const PHASE_LEARN: u64 = 12;
const PHASE_PSGD: u64 = 13;
const SHUFFLE: u64 = 19;

/// The coupled storage (784-100-75) and recall (75-100-784) networks.
#[derive(Debug, Clone, PartialEq)]
pub struct PlmPair {
    pub storage: Network,
    pub recall: Network,
}

pub fn init_storage(seed: u64) -> Result<Network> {
    init_network(
        &[IMAGE_LEN, HIDDEN_UNITS, NUM_CLASSES],
        &[ActivationKind::Sigmoid, ActivationKind::Softmax],
        LossKind::CrossEntropy,
        seed,
    )
}

pub fn init_recall(seed: u64) -> Result<Network> {
    init_network(
        &[NUM_CLASSES, HIDDEN_UNITS, IMAGE_LEN],
        &[ActivationKind::Sigmoid, ActivationKind::Sigmoid],
        LossKind::MeanSquaredError,
        seed,
    )
}

impl PlmPair {
    /// Fresh pair; the two networks get independent seeds derived from `seed`.
    pub fn new(seed: u64) -> Result<Self> {
        Ok(Self {
            storage: init_storage(derive_seed(seed, &[NET_STORAGE]))?,
            recall: init_recall(derive_seed(seed, &[NET_RECALL]))?,
        })
    }

    pub fn from_networks(storage: Network, recall: Network) -> Result<Self> {
        let ok = storage.input_dim() == IMAGE_LEN
            && recall.output_dim() == IMAGE_LEN
            && storage.output_dim() == NUM_CLASSES
            && recall.input_dim() == NUM_CLASSES
            && storage.loss() == LossKind::CrossEntropy
            && recall.loss() == LossKind::MeanSquaredError;
        if !ok {
            return Err(PlmError::format(format!(
                "networks {:?} / {:?} do not form a storage/recall pair",
                storage.dims(),
                recall.dims()
            )));
        }
        Ok(Self { storage, recall })
    }

    pub fn is_finite(&self) -> bool {
        self.storage.is_finite() && self.recall.is_finite()
    }
}

pub fn save_checkpoint(pair: &PlmPair, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    write_checkpoint(&mut w, pair)?;
    w.flush()?;
    Ok(())
}

pub fn write_checkpoint<W: Write>(w: &mut W, pair: &PlmPair) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    write_network(w, &pair.storage)?;
    write_network(w, &pair.recall)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<PlmPair> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path.as_ref())?).read_to_end(&mut bytes)?;
    read_checkpoint(&bytes)
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<PlmPair> {
    let mut r = bytes
        .strip_prefix(CHECKPOINT_MAGIC.as_slice())
        .ok_or_else(|| PlmError::format("missing PLMCKPT1 magic"))?;
    let storage = read_network(&mut r)?;
    let recall = read_network(&mut r)?;
    if !r.is_empty() {
        return Err(PlmError::format(format!("{} trailing bytes in checkpoint", r.len())));
    }
    PlmPair::from_networks(storage, recall)
}

/// Selection probabilities for groups 1, 2 and 3.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasSchedule {
    p: [f64; NUM_GROUPS],
}

impl BiasSchedule {
    pub const LEARNING: [f64; 3] = [0.80, 0.15, 0.05];
    pub const FORGETTING: [f64; 3] = [0.99, 0.01, 0.0];
    pub const UNIFORM: [f64; 3] = [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0];

    pub fn new(p: [f64; NUM_GROUPS]) -> Result<Self> {
        if p.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(PlmError::config(format!("probabilities must be non-negative: {p:?}")));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(PlmError::config(format!("probabilities sum to {sum}, not 1")));
        }
        Ok(Self { p })
    }

    pub fn learning() -> Self {
        Self { p: Self::LEARNING }
    }

    pub fn forgetting() -> Self {
        Self { p: Self::FORGETTING }
    }

    pub fn probabilities(&self) -> [f64; NUM_GROUPS] {
        self.p
    }
}

impl fmt::Display for BiasSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", self.p[0], self.p[1], self.p[2])
    }
}

/// Picks a group by its probability, then a class uniformly within it.
/// Groups with probability zero are never returned.
pub fn sample_class<R: Rng + ?Sized>(
    bias: &BiasSchedule,
    groups: &GroupAssignment,
    rng: &mut R,
) -> usize {
    let u: f64 = rng.gen();
    let mut cum = 0.0;
    let mut chosen = None;
    for (g, &p) in bias.p.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        cum += p;
        chosen = Some(g);
        if u < cum {
            break;
        }
    }
    let group = chosen.expect("schedule has a positive probability") + 1;
    *groups
        .members(group)
        .choose(rng)
        .expect("groups are non-empty")
}

/// Hyperparameters for one regularized SGD step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Learning rate for the recall network; its MSE loss averages over 784
    /// outputs, so its gradients are much smaller than the storage network's.
    pub recall_learning_rate: f64,
    pub replicas: ReplicaConfig,
    pub dither: DitherSpec,
    pub dropout: DropoutSpec,
    /// Dither the recall network's one-hot class input as well as images.
    pub dither_class_input: bool,
    pub noise_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            recall_learning_rate: 392.0,
            replicas: ReplicaConfig::default(),
            dither: DitherSpec::default(),
            dropout: DropoutSpec::default(),
            dither_class_input: false,
            noise_seed: 0,
        }
    }
}

impl TrainConfig {
    /// No dither, no dropout, one replica: a plain SGD step.
    pub fn noiseless(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            recall_learning_rate: learning_rate,
            replicas: ReplicaConfig { count: 1 },
            dither: DitherSpec::none(),
            dropout: DropoutSpec::none(),
            dither_class_input: false,
            noise_seed: 0,
        }
    }

    fn streams(&self, phase: u64, net: u64, step: u64) -> ReplicaStreams {
        ReplicaStreams::new(derive_seed(self.noise_seed, &[phase, net]), step)
    }
}

/// Eval-mode recall of a class: no dither, no dropout.
pub fn synthesize(recall: &Network, class: usize) -> Result<ImageVector> {
    ImageVector::new(recall.predict(&one_hot(class, NUM_CLASSES)?)?)
}

fn check_network(net: &Network, what: &str) -> Result<()> {
    if net.is_finite() {
        Ok(())
    } else {
        Err(PlmError::Numeric(format!("{what} parameters became non-finite")))
    }
}

/// One regularized SGD step of the storage network on `zero_mean(image) -> class`.
pub fn train_step_storage(
    storage: &mut Network,
    image: &ImageVector,
    class: usize,
    cfg: &TrainConfig,
    streams: ReplicaStreams,
) -> Result<()> {
    let input = zero_mean(image.as_slice());
    let target = one_hot(class, NUM_CLASSES)?;
    let g = parallel_dithered_gradient(
        storage,
        &input,
        &target,
        cfg.replicas,
        cfg.dither,
        cfg.dropout,
        streams,
    )?;
    storage.apply_update(&g, cfg.learning_rate)?;
    check_network(storage, "storage")
}

/// One regularized SGD step of the recall network on `one_hot(class) -> target`.
pub fn train_step_recall(
    recall: &mut Network,
    class: usize,
    target: &ImageVector,
    cfg: &TrainConfig,
    streams: ReplicaStreams,
) -> Result<()> {
    let input = one_hot(class, NUM_CLASSES)?;
    let dither = if cfg.dither_class_input {
        cfg.dither
    } else {
        DitherSpec::none()
    };
    let g = parallel_dithered_gradient(
        recall,
        &input,
        target.as_slice(),
        cfg.replicas,
        dither,
        cfg.dropout,
        streams,
    )?;
    recall.apply_update(&g, cfg.recall_learning_rate)?;
    check_network(recall, "recall")
}

fn diverged(iteration: u64, e: PlmError) -> PlmError {
    match e {
        PlmError::Numeric(reason) => PlmError::Divergence { iteration, reason },
        other => other,
    }
}

/// Unbiased full-sweep SGD on the real digits. Each epoch visits all 75
/// classes in a fresh seeded order and trains both networks on each.
pub fn pretrain(
    pair: &mut PlmPair,
    data: &Dataset75,
    epochs: u32,
    cfg: &TrainConfig,
    shuffle_seed: u64,
) -> Result<()> {
    pretrain_with(pair, data, epochs, cfg, shuffle_seed, |_, _| {})
}

/// [`pretrain`] with a callback after every epoch (`epoch` counts from 1).
pub fn pretrain_with<F: FnMut(u32, &PlmPair)>(
    pair: &mut PlmPair,
    data: &Dataset75,
    epochs: u32,
    cfg: &TrainConfig,
    shuffle_seed: u64,
    mut on_epoch: F,
) -> Result<()> {
    let mut step = 0u64;
    for epoch in 0..epochs {
        let mut order: Vec<usize> = (0..NUM_CLASSES).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
            shuffle_seed,
            &[SHUFFLE, u64::from(epoch)],
        )));
        for class in order {
            let image = data.image(class);
            train_step_storage(
                &mut pair.storage,
                image,
                class,
                cfg,
                cfg.streams(PHASE_PRETRAIN, NET_STORAGE, step),
            )
            .map_err(|e| diverged(step, e))?;
            train_step_recall(
                &mut pair.recall,
                class,
                image,
                cfg,
                cfg.streams(PHASE_PRETRAIN, NET_RECALL, step),
            )
            .map_err(|e| diverged(step, e))?;
            step += 1;
        }
        on_epoch(epoch + 1, pair);
    }
    Ok(())
}

/// Eval-mode class prediction for an image in canonical range.
pub fn classify(storage: &Network, image: &[f64]) -> Result<usize> {
    Ok(argmax(&storage.predict(&zero_mean(image))?))
}

/// Per-group fraction of the original digits the storage network misclassifies.
pub fn evaluate_groups(
    storage: &Network,
    data: &Dataset75,
    groups: &GroupAssignment,
) -> Result<[f64; NUM_GROUPS]> {
    let mut wrong = [0usize; NUM_GROUPS];
    for class in 0..NUM_CLASSES {
        if classify(storage, data.image(class).as_slice())? != class {
            wrong[groups.group_of(class) - 1] += 1;
        }
    }
    let mut err = [0.0; NUM_GROUPS];
    for g in 0..NUM_GROUPS {
        err[g] = wrong[g] as f64 / groups.members(g + 1).len() as f64;
    }
    Ok(err)
}

/// Number of the 75 originals the storage network misclassifies.
pub fn storage_errors(storage: &Network, data: &Dataset75) -> Result<usize> {
    let mut wrong = 0;
    for class in 0..NUM_CLASSES {
        if classify(storage, data.image(class).as_slice())? != class {
            wrong += 1;
        }
    }
    Ok(wrong)
}

/// Number of classes whose recall-synthesized image the storage network
/// misclassifies. Reads no training data.
pub fn recall_errors(pair: &PlmPair) -> Result<usize> {
    let mut wrong = 0;
    for class in 0..NUM_CLASSES {
        let img = synthesize(&pair.recall, class)?;
        if classify(&pair.storage, img.as_slice())? != class {
            wrong += 1;
        }
    }
    Ok(wrong)
}

/// The perpetual loop. Holds no reference to the training images.
#[derive(Debug, Clone)]
pub struct PsgdState {
    pub pair: PlmPair,
    groups: GroupAssignment,
    bias: BiasSchedule,
    cfg: TrainConfig,
    sampler: ChaCha8Rng,
    iteration: u64,
}

impl PsgdState {
    pub fn new(
        pair: PlmPair,
        groups: GroupAssignment,
        bias: BiasSchedule,
        cfg: TrainConfig,
        sampler_seed: u64,
    ) -> Self {
        Self {
            pair,
            groups,
            bias,
            cfg,
            sampler: ChaCha8Rng::seed_from_u64(derive_seed(sampler_seed, &[PHASE_PSGD])),
            iteration: 0,
        }
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn groups(&self) -> &GroupAssignment {
        &self.groups
    }

    pub fn bias(&self) -> &BiasSchedule {
        &self.bias
    }

    /// Sample a class, recall its image, and train both networks on that
    /// synthesized pair. Returns the sampled class.
    pub fn step(&mut self) -> Result<usize> {
        let it = self.iteration;
        let class = sample_class(&self.bias, &self.groups, &mut self.sampler);
        let image = synthesize(&self.pair.recall, class).map_err(|e| diverged(it, e))?;
        train_step_storage(
            &mut self.pair.storage,
            &image,
            class,
            &self.cfg,
            self.cfg.streams(PHASE_PSGD, NET_STORAGE, it),
        )
        .map_err(|e| diverged(it, e))?;
        train_step_recall(
            &mut self.pair.recall,
            class,
            &image,
            &self.cfg,
            self.cfg.streams(PHASE_PSGD, NET_RECALL, it),
        )
        .map_err(|e| diverged(it, e))?;
        self.iteration += 1;
        Ok(class)
    }
}

/// Seeds for every random choice in an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seeds {
    pub init: u64,
    pub split: u64,
    pub sampler: u64,
    pub dither: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            init: 1,
            split: 2015,
            sampler: 3,
            dither: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub bias: BiasSchedule,
    pub iterations: u64,
    pub eval_every: u64,
    pub seeds: Seeds,
    /// Stop as soon as every group reaches zero error (learning run only).
    pub stop_at_zero: bool,
}

/// An experiment that stopped early; carries everything logged so far.
#[derive(Debug)]
pub struct RunAborted {
    pub log: MetricsLog,
    pub error: PlmError,
}

impl fmt::Display for RunAborted {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({} rows logged)", self.error, self.log.len())
    }
}

impl std::error::Error for RunAborted {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

fn log_row(
    log: &mut MetricsLog,
    iteration: u64,
    storage: &Network,
    data: &Dataset75,
    groups: &GroupAssignment,
) -> Result<[f64; NUM_GROUPS]> {
    let errors = evaluate_groups(storage, data, groups)?;
    log.push(MetricsRow { iteration, errors });
    Ok(errors)
}

fn check_eval_every(cfg: &ExperimentConfig) -> Result<()> {
    if cfg.eval_every == 0 {
        Err(PlmError::config("eval_every must be at least 1"))
    } else {
        Ok(())
    }
}

/// Biased non-batch SGD of a fresh storage network on the real digits.
///
/// Logs iteration 0 (untrained) and then every `eval_every` iterations.
pub fn run_selective_learning(
    cfg: &ExperimentConfig,
    data: &Dataset75,
    groups: &GroupAssignment,
) -> std::result::Result<MetricsLog, RunAborted> {
    let mut log = MetricsLog::new();
    let result = (|| {
        check_eval_every(cfg)?;
        let mut storage = init_storage(derive_seed(cfg.seeds.init, &[NET_STORAGE]))?;
        let mut sampler =
            ChaCha8Rng::seed_from_u64(derive_seed(cfg.seeds.sampler, &[PHASE_LEARN]));
        let mut errors = log_row(&mut log, 0, &storage, data, groups)?;
        for it in 0..cfg.iterations {
            if cfg.stop_at_zero && errors.iter().all(|&e| e == 0.0) {
                break;
            }
            let class = sample_class(&cfg.bias, groups, &mut sampler);
            train_step_storage(
                &mut storage,
                data.image(class),
                class,
                &cfg.train,
                cfg.train.streams(PHASE_LEARN, NET_STORAGE, it),
            )
            .map_err(|e| diverged(it, e))?;
            let done = it + 1;
            if done % cfg.eval_every == 0 {
                errors = log_row(&mut log, done, &storage, data, groups)?;
            }
        }
        Ok(())
    })();
    match result {
        Ok(()) => Ok(log),
        Err(error) => Err(RunAborted { log, error }),
    }
}

/// Biased PSGD from a (normally pretrained) pair. The original digits are
/// read only for evaluation. Returns the log and the final pair.
pub fn run_selective_forgetting(
    pair: PlmPair,
    cfg: &ExperimentConfig,
    data: &Dataset75,
    groups: &GroupAssignment,
) -> std::result::Result<(MetricsLog, PlmPair), RunAborted> {
    let mut log = MetricsLog::new();
    let mut state = PsgdState::new(pair, groups.clone(), cfg.bias, cfg.train, cfg.seeds.sampler);
    let result = (|| {
        check_eval_every(cfg)?;
        log_row(&mut log, 0, &state.pair.storage, data, groups)?;
        for _ in 0..cfg.iterations {
            state.step()?;
            if state.iteration().is_multiple_of(cfg.eval_every) {
                log_row(&mut log, state.iteration(), &state.pair.storage, data, groups)?;
            }
        }
        Ok(())
    })();
    match result {
        Ok(()) => Ok((log, state.pair)),
        Err(error) => Err(RunAborted { log, error }),
    }
}
