//! End-to-end training orchestration: initialization, the epoch loop,
//! scheduled center reassignment, incremental cost accumulation, ablation
//! modes, and per-epoch run history.

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::assign::{
    head_cost_matrices, solve_heads, CenterAssignment, CostAccumulator, CostMatrix,
    GreedyOrderMode, Solver, SubCodebook,
};
use crate::code::{
    codebook_distance_stats, head_slice, sample_codebook_bernoulli, sample_codebook_unique,
    BinaryCode, Codebook, HeadLayout,
};
use crate::data::{Dataset, LabelMask};
use crate::model::{backward, cosine_lr, scale_factor, HashModel, LossConfig, OptimizerConfig};
use crate::seed::{SeedStreams, Stream};
use crate::{Error, Result};

/// Training mode: the full method, its single-head variant, or fixed
/// centers with reassignment disabled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "CRH")]
    Crh,
    #[serde(rename = "CRH-M")]
    CrhM,
    #[serde(rename = "CRH-U")]
    CrhU,
}

/// How cost matrices are produced at a reassignment event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostSource {
    /// Re-encode the whole training set with the current model.
    ExactRecompute,
    /// Accumulate from batch outputs produced during the epoch.
    Incremental,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodebookSampling {
    Bernoulli,
    Unique,
}

/// Reassignment cadence: every `warmup_interval` epochs during the first
/// `warmup_epochs`, every `later_interval` afterwards. `None` means never.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateSchedule {
    pub warmup_epochs: u32,
    pub warmup_interval: Option<u32>,
    pub later_interval: Option<u32>,
}

impl Default for UpdateSchedule {
    fn default() -> Self {
        Self {
            warmup_epochs: 20,
            warmup_interval: Some(1),
            later_interval: Some(5),
        }
    }
}

impl UpdateSchedule {
    /// Uniform cadence: update whenever `epoch % interval == 0`.
    pub fn every(interval: u32) -> Self {
        Self {
            warmup_epochs: 0,
            warmup_interval: None,
            later_interval: Some(interval),
        }
    }

    /// No updates at all.
    pub fn never() -> Self {
        Self {
            warmup_epochs: 0,
            warmup_interval: None,
            later_interval: None,
        }
    }

    pub fn should_update(&self, epoch: u32) -> bool {
        if epoch == 0 {
            return false;
        }
        if epoch <= self.warmup_epochs {
            match self.warmup_interval {
                Some(i) if i > 0 => epoch.is_multiple_of(i),
                _ => false,
            }
        } else {
            match self.later_interval {
                Some(i) if i > 0 => (epoch - self.warmup_epochs).is_multiple_of(i),
                _ => false,
            }
        }
    }
}

fn default_lambda() -> f64 {
    0.1
}
fn default_margin() -> f64 {
    0.2
}
fn default_batch_size() -> usize {
    128
}
fn default_learning_rate() -> f64 {
    1e-4
}
fn default_solver() -> Solver {
    Solver::Greedy
}
fn default_mode() -> Mode {
    Mode::Crh
}
fn default_sampling() -> CodebookSampling {
    CodebookSampling::Unique
}
fn default_cost_source() -> CostSource {
    CostSource::ExactRecompute
}
fn default_greedy_order() -> GreedyOrderMode {
    GreedyOrderMode::PerHead
}

/// Full run configuration; the JSON config file mirrors these field names.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Code length in bits.
    pub k: usize,
    /// Codebook cardinality.
    pub m: usize,
    /// Head count; exactly one of `h`/`d` may be given (default: one head).
    #[serde(default)]
    pub h: Option<usize>,
    /// Per-head bit width, alternative to `h`.
    #[serde(default)]
    pub d: Option<usize>,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_margin")]
    pub margin: f64,
    /// Softmax scale; `null` derives `sqrt(2) * ln(C-1)` from the dataset.
    #[serde(default)]
    pub s: Option<f64>,
    pub epochs: u32,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub update_schedule: UpdateSchedule,
    #[serde(default = "default_solver")]
    pub solver: Solver,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    #[serde(default = "default_sampling")]
    pub codebook_sampling: CodebookSampling,
    #[serde(default = "default_cost_source")]
    pub cost_source: CostSource,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default = "default_greedy_order")]
    pub greedy_order: GreedyOrderMode,
}

impl TrainConfig {
    /// Resolved layout after mode normalization (`CRH-M` forces one head).
    pub fn layout(&self) -> Result<HeadLayout> {
        let heads = if self.mode == Mode::CrhM {
            1
        } else {
            match (self.h, self.d) {
                (Some(h), None) => h,
                (None, Some(d)) => {
                    if d == 0 || !self.k.is_multiple_of(d) {
                        return Err(Error::InvalidParameter(format!(
                            "head width {d} does not evenly split {} bits",
                            self.k
                        )));
                    }
                    self.k / d
                }
                (None, None) => 1,
                (Some(h), Some(d)) => {
                    if h * d != self.k {
                        return Err(Error::InvalidParameter(format!(
                            "h={h} and d={d} disagree with k={}",
                            self.k
                        )));
                    }
                    h
                }
            }
        };
        HeadLayout::for_bits(self.k, heads)
    }

    fn validate(&self, dataset: &Dataset) -> Result<HeadLayout> {
        if dataset.is_empty() {
            return Err(Error::InvalidParameter("empty dataset".into()));
        }
        dataset.check_all_classes_populated()?;
        if dataset.classes() < 2 {
            return Err(Error::InvalidParameter(
                "training needs at least 2 classes".into(),
            ));
        }
        if self.m < dataset.classes() {
            return Err(Error::InvalidParameter(format!(
                "codebook size {} below class count {}",
                self.m,
                dataset.classes()
            )));
        }
        if self.batch_size < 1 {
            return Err(Error::InvalidParameter(
                "batch_size must be at least 1".into(),
            ));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "learning_rate must be finite and nonnegative, got {}",
                self.learning_rate
            )));
        }
        self.layout()
    }

    /// Softmax scale: explicit, or derived from the class count.
    pub fn resolve_scale(&self, classes: usize) -> Result<f64> {
        match self.s {
            Some(s) => Ok(s),
            None => scale_factor(classes),
        }
    }
}

/// One history record per epoch. The change fraction is present only on
/// reassignment epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u32,
    pub mean_loss: f64,
    pub reassigned: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub change_fraction: Option<f64>,
    pub d_min: u32,
    pub d_avg: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunHistory {
    pub records: Vec<EpochRecord>,
}

impl RunHistory {
    /// JSON-lines: one record per epoch.
    pub fn write_jsonl(&self, writer: &mut impl Write) -> Result<()> {
        for record in &self.records {
            serde_json::to_writer(&mut *writer, record)?;
            writer.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl(reader: impl BufRead) -> Result<Self> {
        let mut records = Vec::new();
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(&line)?);
        }
        Ok(Self { records })
    }
}

/// Everything produced by a run.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: HashModel,
    pub assignment: CenterAssignment,
    pub codebook: Codebook,
    pub history: RunHistory,
    pub initial_assignment: CenterAssignment,
    pub epochs_run: u32,
}

/// Initial state of a run; produced by [`initialize`], replaceable in tests
/// and tools via [`train_with`].
#[derive(Debug, Clone)]
pub struct TrainInit {
    pub codebook: Codebook,
    pub assignment: CenterAssignment,
    pub model: HashModel,
}

/// Samples the codebook, picks `C` distinct rows as initial centers (the
/// same column in every head), and seeds the model parameters.
pub fn initialize(cfg: &TrainConfig, dataset: &Dataset) -> Result<TrainInit> {
    let layout = cfg.validate(dataset)?;
    let streams = SeedStreams::new(cfg.seed);

    let codebook = match cfg.codebook_sampling {
        CodebookSampling::Unique => {
            sample_codebook_unique(cfg.k, cfg.m, &mut streams.rng(Stream::Codebook))?
        }
        CodebookSampling::Bernoulli => {
            sample_codebook_bernoulli(cfg.k, cfg.m, &mut streams.rng(Stream::Codebook))?.codebook
        }
    };

    let classes = dataset.classes();
    let mut rng = streams.rng(Stream::InitAssignment);
    let mut columns: Vec<usize> = (0..cfg.m).collect();
    for i in 0..classes {
        let j = i + rng.random_range(0..cfg.m - i);
        columns.swap(i, j);
    }
    columns.truncate(classes);
    let assignment = CenterAssignment::initial(columns, layout);

    let model = HashModel::init(dataset.dim(), cfg.k, &mut streams.rng(Stream::ModelInit))?;
    Ok(TrainInit {
        codebook,
        assignment,
        model,
    })
}

/// Per-head accumulators assembling reassignment cost matrices from batch
/// outputs as the epoch streams by.
#[derive(Debug, Clone)]
pub struct CostAccumulatorSet {
    layout: HeadLayout,
    subs: Vec<SubCodebook>,
    accumulators: Vec<CostAccumulator>,
}

impl CostAccumulatorSet {
    pub fn new(codebook: &Codebook, layout: HeadLayout, classes: usize) -> Result<Self> {
        let mut subs = Vec::with_capacity(layout.heads());
        let mut accumulators = Vec::with_capacity(layout.heads());
        for h in 0..layout.heads() {
            let sub = SubCodebook::for_head(codebook, layout, h)?;
            accumulators.push(CostAccumulator::new(sub.distinct().to_vec(), classes)?);
            subs.push(sub);
        }
        Ok(Self {
            layout,
            subs,
            accumulators,
        })
    }

    pub fn add_batch(&mut self, signs: &[BinaryCode], labels: &[&LabelMask]) -> Result<()> {
        for (code, mask) in signs.iter().zip(labels) {
            for h in 0..self.layout.heads() {
                let slice = head_slice(code, self.layout, h)?;
                self.accumulators[h].add_sample(&slice, mask)?;
            }
        }
        Ok(())
    }

    /// Cost matrices from everything accumulated so far; errors naming the
    /// class if one never received a sample.
    pub fn finish(self) -> Result<(Vec<SubCodebook>, Vec<CostMatrix>)> {
        let costs = self
            .accumulators
            .iter()
            .map(|a| a.finalize())
            .collect::<Result<Vec<_>>>()?;
        Ok((self.subs, costs))
    }
}

/// Runs the full training loop from a fresh initialization.
pub fn train(cfg: &TrainConfig, dataset: &Dataset) -> Result<TrainOutput> {
    let init = initialize(cfg, dataset)?;
    train_with(cfg, dataset, init)
}

/// Runs the training loop from the given initial state.
pub fn train_with(cfg: &TrainConfig, dataset: &Dataset, init: TrainInit) -> Result<TrainOutput> {
    let layout = cfg.validate(dataset)?;
    if init.codebook.bits() != cfg.k || init.codebook.len() != cfg.m {
        return Err(Error::InvalidParameter(format!(
            "codebook is {}x{}, config expects {}x{}",
            init.codebook.len(),
            init.codebook.bits(),
            cfg.m,
            cfg.k
        )));
    }
    let classes = dataset.classes();
    let scale = cfg.resolve_scale(classes)?;
    let loss_cfg = LossConfig::new(scale, cfg.margin, cfg.lambda)?;
    let updates_enabled = cfg.mode != Mode::CrhU;
    let incremental = cfg.cost_source == CostSource::Incremental;

    let TrainInit {
        codebook,
        mut assignment,
        mut model,
    } = init;
    let initial_assignment = assignment.clone();

    let streams = SeedStreams::new(cfg.seed);
    let mut batch_rng = streams.rng(Stream::BatchOrder);
    let mut greedy_rng = streams.rng(Stream::GreedyOrder);

    let n = dataset.len();
    let mut history = RunHistory::default();
    let mut lr = cosine_lr(cfg.learning_rate, 0, cfg.epochs);
    let mut last_event: Option<(f64, f64)> = None; // (mean loss, change fraction)
    let mut epochs_run = 0;

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut batch_rng);

        let centers = assignment.centers(&codebook)?;
        let event_due = updates_enabled && cfg.update_schedule.should_update(epoch);
        let mut accumulator = if updates_enabled && incremental {
            Some(CostAccumulatorSet::new(&codebook, layout, classes)?)
        } else {
            None
        };

        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let feats: Vec<&[f32]> = chunk.iter().map(|&i| dataset.feature(i)).collect();
            let labels: Vec<&LabelMask> = chunk.iter().map(|&i| dataset.label(i)).collect();
            let grads = backward(&model, &feats, &labels, &centers, &loss_cfg)?;
            if let Some(acc) = &mut accumulator {
                acc.add_batch(&grads.signs, &labels)?;
            }
            model.apply_gradients(&grads.grad_w, &grads.grad_b, lr, &cfg.optimizer)?;
            loss_sum += grads.loss.total * chunk.len() as f64;
        }
        let mean_loss = loss_sum / n as f64;

        let mut change_fraction = None;
        if event_due {
            let (subs, costs) = match (&mut accumulator, incremental) {
                (Some(_), true) => accumulator.take().unwrap().finish()?,
                _ => {
                    let samples: Vec<&[f32]> = (0..n).map(|i| dataset.feature(i)).collect();
                    let codes = model.encode_all(&samples)?;
                    head_cost_matrices(&codes, dataset.labels(), classes, &codebook, layout)?
                }
            };
            let outcome = solve_heads(
                &subs,
                &costs,
                layout,
                classes,
                cfg.solver,
                cfg.greedy_order,
                &mut greedy_rng,
            )
            .map_err(|e| match e {
                Error::InfeasibleHead { head, distinct, classes } => Error::InvalidParameter(
                    format!(
                        "epoch {epoch}: head {head} infeasible ({distinct} distinct sub-codes < {classes} classes)"
                    ),
                ),
                other => other,
            })?;
            let new_centers = outcome.assignment.centers(&codebook)?;
            let changed = centers
                .iter()
                .zip(&new_centers)
                .filter(|(old, new)| old != new)
                .count();
            change_fraction = Some(changed as f64 / classes as f64);
            assignment = outcome.assignment;
        }

        let stats = codebook_distance_stats(&assignment.centers(&codebook)?)?;
        history.records.push(EpochRecord {
            epoch,
            mean_loss,
            reassigned: event_due,
            change_fraction,
            d_min: stats.d_min,
            d_avg: stats.d_avg(),
        });
        epochs_run = epoch;

        // Convergence: two consecutive reassignment events with no center
        // movement and essentially no loss improvement.
        let mut converged = false;
        if let Some(cf) = change_fraction {
            if let Some((prev_loss, prev_cf)) = last_event {
                converged = prev_cf == 0.0 && cf == 0.0 && (prev_loss - mean_loss) < 1e-6;
            }
            last_event = Some((mean_loss, cf));
        }
        lr = cosine_lr(cfg.learning_rate, epoch, cfg.epochs);
        if converged {
            break;
        }
    }

    Ok(TrainOutput {
        model,
        assignment,
        codebook,
        history,
        initial_assignment,
        epochs_run,
    })
}
