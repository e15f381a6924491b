//! Adam and the four training procedures.
//!
//! Every variant runs the same loop: per epoch, shuffle the source pairs,
//! refresh the population statistics the objective needs (target mean
//! attention, source class centroids), then take one Adam step per batch of
//! the combined objective. The variants differ only in the objective's
//! coefficients and in which partitions they require.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::PairRecord;
use crate::error::{Error, Result};
use crate::features::{FeatureChannels, Featurizer, PairFeatures, DEFAULT_CROP};
use crate::losses::{self, Batch, Centroids, LossValue, Objective};
use crate::model::{self, AttentionVector, Dims, Gradients, ModelParams, TensorSet, ThetaInput};
use crate::rng;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Cross-entropy on the source domain only.
    #[default]
    Base,
    /// Source cross-entropy plus KL alignment to unlabeled target attention.
    Zero,
    /// Source cross-entropy plus the centroid-weighted support loss.
    Few,
    /// All three terms.
    Hyb,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Base => "base",
            Variant::Zero => "zero",
            Variant::Few => "few",
            Variant::Hyb => "hyb",
        }
    }

    pub fn uses_target(self) -> bool {
        matches!(self, Variant::Zero | Variant::Hyb)
    }

    pub fn uses_support(self) -> bool {
        matches!(self, Variant::Few | Variant::Hyb)
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(Variant::Base),
            "zero" => Ok(Variant::Zero),
            "few" => Ok(Variant::Few),
            "hyb" => Ok(Variant::Hyb),
            other => Err(Error::InvalidHyperparameter(format!("unknown variant `{other}`"))),
        }
    }
}

/// Training hyperparameters. Defaults reproduce the reference setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub variant: Variant,
    pub lambda: f64,
    pub phi: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub embed_dim: usize,
    pub latent_dim: usize,
    pub attention_dim: usize,
    pub hidden_dim: usize,
    pub crop: usize,
    pub theta_input: ThetaInput,
    pub channels: FeatureChannels,
    /// Compute the target mean attention over a random batch of this many
    /// target pairs instead of the whole target domain.
    pub target_batch: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Base,
            lambda: 0.98,
            phi: 1.0,
            learning_rate: 1e-4,
            batch_size: 16,
            epochs: 100,
            seed: 0,
            embed_dim: 300,
            latent_dim: 64,
            attention_dim: 256,
            hidden_dim: 256,
            crop: DEFAULT_CROP,
            theta_input: ThetaInput::Latent,
            channels: FeatureChannels::Both,
            target_batch: None,
        }
    }
}

impl TrainConfig {
    pub fn dims(&self, features: usize) -> Dims {
        Dims::new(features, self.embed_dim, self.latent_dim, self.attention_dim, self.hidden_dim)
    }

    pub fn objective(&self) -> Result<Objective> {
        match self.variant {
            Variant::Base => Ok(Objective::base()),
            Variant::Zero => Objective::un(self.lambda),
            Variant::Few => Objective::ssl(self.phi),
            Variant::Hyb => Objective::hybrid(self.lambda, self.phi),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.objective()?;
        if self.batch_size == 0 {
            return Err(Error::InvalidHyperparameter("batch size must be ≥ 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidHyperparameter(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if self.crop == 0 {
            return Err(Error::InvalidHyperparameter("crop must be ≥ 1".into()));
        }
        if self.target_batch == Some(0) {
            return Err(Error::InvalidHyperparameter("target batch must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Adam moment accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl OptimizerState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update over a flat parameter vector.
pub fn adam_update(params: &mut [f64], grads: &[f64], state: &mut OptimizerState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() {
        return Err(Error::DimensionMismatch(format!(
            "adam: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient("parameters".into()));
    }
    state.t += 1;
    let bc1 = 1.0 - ADAM_BETA1.powi(state.t as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(state.t as i32);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
    Ok(())
}

/// Adam step on model tensors; names the offending tensor on non-finite input.
pub fn adam_step(params: &mut ModelParams, grads: &Gradients, state: &mut OptimizerState, lr: f64) -> Result<()> {
    if params.layout() != grads.layout() {
        return Err(Error::DimensionMismatch("gradient layout differs from parameters".into()));
    }
    if let Some(t) = grads.first_non_finite() {
        return Err(Error::NonFiniteGradient(t.name().to_string()));
    }
    adam_update(params.as_mut_slice(), grads.as_slice(), state, lr)
}

/// A featurized pair with its 0/1 target.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFeatures {
    pub features: PairFeatures,
    pub y: f64,
}

impl LabeledFeatures {
    pub fn new(features: PairFeatures, label: bool) -> Self {
        Self {
            features,
            y: if label { 1.0 } else { 0.0 },
        }
    }
}

/// Featurizes labeled pairs, failing on the first unlabeled one.
pub fn featurize_labeled(
    featurizer: &Featurizer,
    pairs: &[PairRecord],
    partition: &'static str,
) -> Result<Vec<LabeledFeatures>> {
    pairs
        .iter()
        .map(|p| {
            let label = p.label.ok_or_else(|| Error::UnlabeledPair {
                pair_id: p.pair_id.clone(),
                partition,
            })?;
            Ok(LabeledFeatures::new(featurizer.featurize(p)?, label))
        })
        .collect()
}

/// Per-epoch means of the batch losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochTrace {
    pub epoch: usize,
    pub base: f64,
    pub target: f64,
    pub support: f64,
    pub total: f64,
    pub seconds: f64,
}

pub fn write_loss_trace<W: Write>(writer: W, trace: &[EpochTrace]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["epoch", "l_base", "l_target", "l_support", "total", "wall_clock"])?;
    for t in trace {
        wtr.write_record(&[
            t.epoch.to_string(),
            t.base.to_string(),
            t.target.to_string(),
            t.support.to_string(),
            t.total.to_string(),
            format!("{:.6}", t.seconds),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_loss_trace_file(path: impl AsRef<Path>, trace: &[EpochTrace]) -> Result<()> {
    write_loss_trace(std::fs::File::create(path)?, trace)
}

/// What the observer sees after every optimizer step.
#[derive(Debug)]
pub struct StepRecord<'a> {
    pub epoch: usize,
    pub step: usize,
    pub loss: LossValue,
    pub grads: &'a Gradients,
    pub params: &'a ModelParams,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub trace: Vec<EpochTrace>,
}

/// Partitions handed to a training run.
#[derive(Debug, Clone, Copy)]
pub struct TrainingSet<'a> {
    pub source: &'a [LabeledFeatures],
    pub target: &'a [PairFeatures],
    pub support: &'a [LabeledFeatures],
}

pub fn train_base(source: &[LabeledFeatures], config: &TrainConfig) -> Result<TrainOutcome> {
    let config = TrainConfig {
        variant: Variant::Base,
        ..config.clone()
    };
    train(&TrainingSet { source, target: &[], support: &[] }, &config, |_| {})
}

pub fn train_zero(source: &[LabeledFeatures], target: &[PairFeatures], config: &TrainConfig) -> Result<TrainOutcome> {
    let config = TrainConfig {
        variant: Variant::Zero,
        ..config.clone()
    };
    train(&TrainingSet { source, target, support: &[] }, &config, |_| {})
}

pub fn train_few(
    source: &[LabeledFeatures],
    support: &[LabeledFeatures],
    target: &[PairFeatures],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let config = TrainConfig {
        variant: Variant::Few,
        ..config.clone()
    };
    train(&TrainingSet { source, target, support }, &config, |_| {})
}

pub fn train_hyb(
    source: &[LabeledFeatures],
    support: &[LabeledFeatures],
    target: &[PairFeatures],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let config = TrainConfig {
        variant: Variant::Hyb,
        ..config.clone()
    };
    train(&TrainingSet { source, target, support }, &config, |_| {})
}

/// Runs `config.variant` on `data`, calling `observer` after every step.
pub fn train<F>(data: &TrainingSet<'_>, config: &TrainConfig, mut observer: F) -> Result<TrainOutcome>
where
    F: FnMut(&StepRecord<'_>),
{
    config.validate()?;
    let variant = config.variant;
    if data.source.is_empty() {
        return Err(Error::MissingPartition("source"));
    }
    if variant.uses_target() && data.target.is_empty() {
        return Err(Error::MissingPartition("target"));
    }
    if variant.uses_support() && data.support.is_empty() {
        return Err(Error::MissingPartition("support"));
    }
    if (variant == Variant::Zero || variant == Variant::Hyb)
        && config.lambda == 1.0 {
            log::warn!("λ = 1 drops the classification loss entirely; expect degraded, uninformative scores");
        }
    let objective = config.objective()?;
    let features = data.source[0].features.features;
    let dims = config.dims(features);
    for f in data
        .source
        .iter()
        .chain(data.support)
        .map(|l| &l.features)
        .chain(data.target)
    {
        if f.features != dims.features || f.dim != dims.embed {
            return Err(Error::DimensionMismatch(format!(
                "pair features are {}×{}, expected {}×{}",
                f.features, f.dim, dims.features, dims.embed
            )));
        }
    }

    let mut params = model::init_params(dims, config.theta_input, config.seed)?;
    let layout = params.layout();
    let mut state = OptimizerState::new(layout.total());
    let mut main_grads = TensorSet::zeros(layout);
    let mut support_grads = TensorSet::zeros(layout);

    let mut shuffle_rng = rng::stream(config.seed, "shuffle");
    let mut support_rng = rng::stream(config.seed, "support-batches");
    let mut target_rng = rng::stream(config.seed, "target-batches");

    let mut order: Vec<usize> = (0..data.source.len()).collect();
    let mut support_order: Vec<usize> = (0..data.support.len()).collect();
    let support_batch = config.batch_size.min(data.support.len().max(1));
    let mut trace = Vec::with_capacity(config.epochs);
    let mut step = 0usize;
    let started = Instant::now();

    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);

        let mean_target = if variant.uses_target() {
            Some(target_mean(data.target, &params, config.target_batch, &mut target_rng)?)
        } else {
            None
        };
        let centroids = if variant.uses_support() {
            support_order.shuffle(&mut support_rng);
            Some(source_centroids(data.source, &params)?)
        } else {
            None
        };

        let mut sums = LossValue::default();
        let mut batches = 0usize;
        let mut support_cursor = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let source: Vec<(&PairFeatures, f64)> = chunk
                .iter()
                .map(|&i| (&data.source[i].features, data.source[i].y))
                .collect();

            main_grads.fill(0.0);
            let main_objective = Objective { support: 0.0, ..objective };
            let batch = Batch {
                source: &source,
                support: &[],
                mean_target: mean_target.as_deref(),
                centroids: None,
            };
            let mut loss = losses::evaluate(&main_objective, &batch, &params, Some(&mut main_grads))?;

            if let Some(c) = centroids.as_ref() {
                let support: Vec<(&PairFeatures, f64)> = (0..support_batch)
                    .map(|k| {
                        let i = support_order[(support_cursor + k) % support_order.len()];
                        (&data.support[i].features, data.support[i].y)
                    })
                    .collect();
                support_cursor = (support_cursor + support_batch) % support_order.len();
                support_grads.fill(0.0);
                let support_value = support_loss(&support, c, &params, &mut support_grads)?;
                loss.support = support_value;
                loss.total += objective.support * support_value;
                main_grads.add_scaled(&support_grads, objective.support);
            }

            adam_step(&mut params, &main_grads, &mut state, config.learning_rate)?;
            observer(&StepRecord {
                epoch,
                step,
                loss,
                grads: &main_grads,
                params: &params,
            });
            step += 1;
            batches += 1;
            sums.base += loss.base;
            sums.target += loss.target;
            sums.support += loss.support;
            sums.total += loss.total;
        }
        let n = batches.max(1) as f64;
        trace.push(EpochTrace {
            epoch,
            base: sums.base / n,
            target: sums.target / n,
            support: sums.support / n,
            total: sums.total / n,
            seconds: started.elapsed().as_secs_f64(),
        });
    }
    Ok(TrainOutcome { params, trace })
}

/// Unscaled support-loss value and gradient for one support batch.
fn support_loss(
    support: &[(&PairFeatures, f64)],
    centroids: &Centroids,
    params: &ModelParams,
    grads: &mut Gradients,
) -> Result<f64> {
    let objective = Objective {
        base: 0.0,
        target: 0.0,
        support: 1.0,
    };
    let batch = Batch {
        source: &[],
        support,
        mean_target: None,
        centroids: Some(centroids),
    };
    Ok(losses::evaluate(&objective, &batch, params, Some(grads))?.support)
}

fn target_mean(
    target: &[PairFeatures],
    params: &ModelParams,
    batch: Option<usize>,
    rng: &mut rng::Rng,
) -> Result<Vec<f64>> {
    match batch {
        Some(n) if n < target.len() => {
            let sample: Vec<PairFeatures> = target.choose_multiple(rng, n).cloned().collect();
            losses::mean_target_attention(&sample, params)
        }
        _ => losses::mean_target_attention(target, params),
    }
}

fn source_centroids(source: &[LabeledFeatures], params: &ModelParams) -> Result<Centroids> {
    let labeled = source
        .iter()
        .map(|l| Ok((model::forward(&l.features, params)?.attention.0, l.y >= 0.5)))
        .collect::<Result<Vec<_>>>()?;
    losses::compute_centroids(&labeled)
}

/// Score and attention vector of one pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub pair_id: String,
    pub score: f64,
    pub attention: AttentionVector,
}

/// Scores `pairs` in order.
pub fn predict(params: &ModelParams, pairs: &[PairRecord], featurizer: &Featurizer) -> Result<Vec<Prediction>> {
    let dims = params.dims();
    if featurizer.feature_count() != dims.features || featurizer.provider().dim() != dims.embed {
        return Err(Error::DimensionMismatch(format!(
            "featurizer yields {}×{}, model expects {}×{}",
            featurizer.feature_count(),
            featurizer.provider().dim(),
            dims.features,
            dims.embed
        )));
    }
    pairs
        .iter()
        .map(|p| {
            let pass = model::forward(&featurizer.featurize(p)?, params)?;
            Ok(Prediction {
                pair_id: p.pair_id.clone(),
                score: pass.y_hat,
                attention: pass.attention,
            })
        })
        .collect()
}

/// Scores already-featurized pairs.
pub fn predict_features(params: &ModelParams, features: &[PairFeatures]) -> Result<Vec<f64>> {
    features
        .iter()
        .map(|h| model::forward(h, params).map(|p| p.y_hat))
        .collect()
}
