//! Self-supervised training: patch batches, the three losses, Adam steps,
//! the training loop and validation.

mod batch;
mod losses;

use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use serde::Deserialize;
use thiserror::Error;

pub use batch::{gather_patch, TrainingBatch};
pub use losses::{loss_correspondence, loss_inlier, loss_redundancy, LossTerm, ResponseMatrix, LOG_CLAMP};

use crate::correspondence::{label_matches, Correspondence, LabeledMatchSet, MatchLabel, DEFAULT_THRESHOLD_PX};
use crate::extraction::{extract_points, match_by_channel, ExtractionError, InterestPointSet};
use crate::network::{NetworkConfig, NetworkError, NetworkParams};
use crate::numerics::{adam_step, AdamConfig, AdamState, NumericsError};
use crate::{Image, Scalar};

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Extraction(#[from] ExtractionError),
    #[error("loss became non-finite at step {step} (L_inl {l_inl}, L_red {l_red}, L_cor {l_cor})")]
    NonFiniteLoss { step: usize, l_inl: f64, l_red: f64, l_cor: f64 },
    #[error("pair source: {0}")]
    PairSource(String),
    #[error("no validation pairs")]
    NoValidationPairs,
    #[error("config: {0}")]
    Config(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Multipliers of the three loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub inlier: f64,
    pub redundancy: f64,
    pub correspondence: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { inlier: 1.0, redundancy: 1.0, correspondence: 1.0 }
    }
}

/// Unweighted term sums over both images, their weighted total, and label counts.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossReport {
    pub l_inl: f64,
    pub l_red: f64,
    pub l_cor: f64,
    pub total: f64,
    pub inliers: usize,
    pub outliers: usize,
    pub unassigned: usize,
}

impl LossReport {
    pub fn from_labels(labels: &[MatchLabel]) -> Self {
        let count = |l| labels.iter().filter(|&&x| x == l).count();
        Self {
            inliers: count(MatchLabel::Inlier),
            outliers: count(MatchLabel::Outlier),
            unassigned: count(MatchLabel::Unassigned),
            ..Self::default()
        }
    }
}

/// An image pair and its ground-truth correspondence.
#[derive(Clone)]
pub struct TrainingPair {
    pub image_a: Image,
    pub image_b: Image,
    pub psi: Arc<dyn Correspondence + Send + Sync>,
}

impl std::fmt::Debug for TrainingPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TrainingPair")
            .field("size_a", &(self.image_a.width(), self.image_a.height()))
            .field("size_b", &(self.image_b.width(), self.image_b.height()))
            .finish_non_exhaustive()
    }
}

/// Supplies one training pair per step.
pub trait PairSource {
    fn pair(&mut self, step: usize) -> Result<TrainingPair, TrainingError>;
}

/// Cycles through a fixed list.
#[derive(Debug, Clone)]
pub struct PairCycle(pub Vec<TrainingPair>);

impl PairSource for PairCycle {
    fn pair(&mut self, step: usize) -> Result<TrainingPair, TrainingError> {
        if self.0.is_empty() {
            return Err(TrainingError::PairSource("empty pair list".into()));
        }
        Ok(self.0[step % self.0.len()].clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepConfig {
    pub weights: LossWeights,
    pub threshold_px: f64,
}

impl Default for StepConfig {
    fn default() -> Self {
        Self { weights: LossWeights::default(), threshold_px: DEFAULT_THRESHOLD_PX }
    }
}

/// Points, matches and labels of one pair under the current network.
#[derive(Debug, Clone)]
pub struct PairDetections {
    pub points_a: InterestPointSet,
    pub points_b: InterestPointSet,
    pub labels: LabeledMatchSet,
}

impl PairDetections {
    /// Fraction of channels whose point in `I` no other channel shares.
    pub fn distinct_fraction(&self) -> f64 {
        let coords = self.points_a.coordinates();
        if coords.is_empty() {
            return 0.0;
        }
        let unique = coords.iter().filter(|c| coords.iter().filter(|d| d == c).count() == 1).count();
        unique as f64 / coords.len() as f64
    }
}

/// Runs the detector on both images and labels the channel matches.
pub fn detect_and_label<T: Scalar, C: Correspondence + ?Sized>(
    params: &NetworkParams<T>,
    image_a: &Image,
    image_b: &Image,
    psi: &C,
    threshold_px: f64,
) -> Result<PairDetections, TrainingError> {
    let margin = params.config.border_margin();
    let points_a = extract_points(&params.forward_full(image_a)?, margin)?;
    let points_b = extract_points(&params.forward_full(image_b)?, margin)?;
    let matches = match_by_channel(&points_a, &points_b)?;
    let labels = label_matches(
        &matches,
        psi,
        (image_a.width(), image_a.height()),
        (image_b.width(), image_b.height()),
        threshold_px,
    );
    Ok(PairDetections { points_a, points_b, labels })
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub report: LossReport,
    pub detections: PairDetections,
    /// True when no patch could be gathered and no update was made.
    pub skipped: bool,
}

/// One symmetric training step on a pair, ending in a single Adam update.
pub fn train_step<T: Scalar, C: Correspondence + ?Sized>(
    image_a: &Image,
    image_b: &Image,
    psi: &C,
    params: &mut NetworkParams<T>,
    adam: &mut AdamState<T>,
    config: &StepConfig,
) -> Result<StepOutcome, TrainingError> {
    let detections = detect_and_label(params, image_a, image_b, psi, config.threshold_px)?;
    let batch = TrainingBatch::<T>::build(image_a, image_b, &detections.labels, params.receptive_field());
    if batch.is_empty() {
        log::warn!("no gatherable patches, step skipped");
        let report = LossReport::from_labels(&detections.labels.labels());
        return Ok(StepOutcome { report, detections, skipped: true });
    }
    let (report, grads) = batch.loss_and_gradient(params, &config.weights)?;
    if !report.total.is_finite() {
        return Err(TrainingError::NonFiniteLoss { step: adam.step_count as usize, l_inl: report.l_inl, l_red: report.l_red, l_cor: report.l_cor });
    }
    let grad_blocks = grads.blocks();
    adam_step(&mut params.blocks_mut(), &grad_blocks, adam)?;
    Ok(StepOutcome { report, detections, skipped: false })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationSummary {
    pub mean_inliers: f64,
    pub median_inliers: f64,
    pub matching_scores: Vec<f64>,
}

/// Inlier statistics of `params` over `pairs`; parameters are not touched.
pub fn validate<T: Scalar>(params: &NetworkParams<T>, pairs: &[TrainingPair], threshold_px: f64) -> Result<ValidationSummary, TrainingError> {
    if pairs.is_empty() {
        return Err(TrainingError::NoValidationPairs);
    }
    let mut counts = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let det = detect_and_label(params, &pair.image_a, &pair.image_b, pair.psi.as_ref(), threshold_px)?;
        counts.push(det.labels.inlier_count() as f64);
    }
    let n = params.n_channels() as f64;
    let matching_scores = counts.iter().map(|c| c / n).collect();
    let mean_inliers = counts.iter().sum::<f64>() / counts.len() as f64;
    let mut sorted = counts.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let mid = sorted.len() / 2;
    let median_inliers = if sorted.len() % 2 == 1 { sorted[mid] } else { 0.5 * (sorted[mid - 1] + sorted[mid]) };
    Ok(ValidationSummary { mean_inliers, median_inliers, matching_scores })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    /// Validate every this many steps (and before the first step).
    pub val_every: usize,
    pub adam: AdamConfig,
    pub step: StepConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { iterations: 100_000, val_every: 1000, adam: AdamConfig::default(), step: StepConfig::default() }
    }
}

/// One row of the training log; `val_inlier_mean` only on validation steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainLogRow {
    pub step: usize,
    pub l_inl: f64,
    pub l_red: f64,
    pub l_cor: f64,
    pub inlier_count: usize,
    pub val_inlier_mean: Option<f64>,
}

pub const TRAIN_LOG_HEADER: &str = "step,L_inl,L_red,L_cor,inlier_count,val_inlier_mean";

pub fn write_train_log(rows: &[TrainLogRow], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "{TRAIN_LOG_HEADER}")?;
    for r in rows {
        let val = r.val_inlier_mean.map(|v| v.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{},{},{},{}", r.step, r.l_inl, r.l_red, r.l_cor, r.inlier_count, val)?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome<T> {
    /// Parameters with the best validation mean, or the final ones when
    /// there is no validation set.
    pub params: NetworkParams<T>,
    pub log: Vec<TrainLogRow>,
    pub best_val_inlier_mean: Option<f64>,
}

/// Fixed-budget training from `initial`.
pub fn train<T: Scalar>(
    initial: NetworkParams<T>,
    source: &mut dyn PairSource,
    validation: &[TrainingPair],
    config: &TrainConfig,
) -> Result<TrainingOutcome<T>, TrainingError> {
    if config.val_every == 0 {
        return Err(TrainingError::Config("val_every must be positive".into()));
    }
    let mut params = initial;
    let mut adam = AdamState::new(config.adam, &params.block_layout());
    let mut log = Vec::with_capacity(config.iterations);
    let mut best: Option<(f64, NetworkParams<T>)> = None;
    let consider = |params: &NetworkParams<T>, best: &mut Option<(f64, NetworkParams<T>)>| -> Result<Option<f64>, TrainingError> {
        if validation.is_empty() {
            return Ok(None);
        }
        let mean = validate(params, validation, config.step.threshold_px)?.mean_inliers;
        if best.as_ref().is_none_or(|(b, _)| mean > *b) {
            *best = Some((mean, params.clone()));
        }
        Ok(Some(mean))
    };
    consider(&params, &mut best)?;
    for step in 0..config.iterations {
        let pair = source.pair(step)?;
        let outcome = train_step(&pair.image_a, &pair.image_b, pair.psi.as_ref(), &mut params, &mut adam, &config.step)
            .map_err(|e| match e {
                TrainingError::NonFiniteLoss { l_inl, l_red, l_cor, .. } => TrainingError::NonFiniteLoss { step, l_inl, l_red, l_cor },
                e => e,
            })?;
        let val = if (step + 1) % config.val_every == 0 { consider(&params, &mut best)? } else { None };
        let r = outcome.report;
        log.push(TrainLogRow { step, l_inl: r.l_inl, l_red: r.l_red, l_cor: r.l_cor, inlier_count: r.inliers, val_inlier_mean: val });
        log::debug!("step {step}: loss {:.4}, inliers {}", r.total, r.inliers);
    }
    let best_val_inlier_mean = best.as_ref().map(|(m, _)| *m);
    let params = best.map(|(_, p)| p).unwrap_or(params);
    Ok(TrainingOutcome { params, log, best_val_inlier_mean })
}

/// Training settings file (TOML).
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingFileConfig {
    #[serde(default = "default_channels")]
    pub n_channels: usize,
    /// Overrides the 14-layer default, for small experiments.
    pub depth: Option<usize>,
    /// Hidden channel counts of the two halves.
    pub hidden: Option<(usize, usize)>,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_val_every")]
    pub val_every: usize,
    #[serde(default = "default_o_train")]
    pub o_train: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub weights: LossWeights,
    /// Training dataset descriptor.
    pub dataset: PathBuf,
    /// Validation dataset descriptor.
    pub val_dataset: Option<PathBuf>,
    #[serde(default = "default_val_pairs")]
    pub val_pairs: usize,
}

fn default_channels() -> usize {
    128
}
fn default_lr() -> f64 {
    AdamConfig::default().lr
}
fn default_iterations() -> usize {
    TrainConfig::default().iterations
}
fn default_val_every() -> usize {
    TrainConfig::default().val_every
}
fn default_o_train() -> f64 {
    crate::klt::PairSelectionConfig::TRAINING_OVERLAP
}
fn default_val_pairs() -> usize {
    10
}

impl TrainingFileConfig {
    pub fn parse(text: &str) -> Result<Self, TrainingError> {
        let c: Self = toml::from_str(text).map_err(|e| TrainingError::Config(e.to_string()))?;
        if !(c.lr > 0.0) || c.val_every == 0 || !(c.o_train > 0.0 && c.o_train <= 1.0) {
            return Err(TrainingError::Config("lr and val_every must be positive, o_train in (0, 1]".into()));
        }
        Ok(c)
    }

    pub fn network_config(&self) -> NetworkConfig {
        let base = NetworkConfig::with_channels(self.n_channels);
        NetworkConfig {
            depth: self.depth.unwrap_or(base.depth),
            intermediate_channels: self.hidden.unwrap_or(base.intermediate_channels),
            seed: self.seed,
            ..base
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            iterations: self.iterations,
            val_every: self.val_every,
            adam: AdamConfig { lr: self.lr, ..AdamConfig::default() },
            step: StepConfig { weights: self.weights, ..StepConfig::default() },
        }
    }
}
