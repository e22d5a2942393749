//! Objectives and the minibatch training loop.
//!
//! Contrastive variants minimise, per sample,
//! `||z' − ẑ'||² + max(0, λ − ||z⁻ − ẑ'||²)` averaged over the batch, where
//! `ẑ'` is the predicted next latent and `z⁻` the encoded next state of some
//! other sample. Penalties are added as `β · mean(‖·‖)` over the batch.
//! The `spr` objective replaces the target with a stop-gradient embedding
//! from the moving-average encoder and drops the negative term.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envs::TransitionDataset;
use crate::model::{BoundModel, ModelError, Variant, WorldModel};
use crate::optim::{Adam, AdamConfig, OptimError};
use crate::rng::substream;
use crate::tape::{Tape, Var};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error("negatives need a batch of at least 2 samples, got {0}")]
    BatchTooSmall(usize),
    #[error("{what} width differs: model expects {model}, dataset has {dataset}")]
    WidthMismatch {
        what: &'static str,
        model: usize,
        dataset: usize,
    },
    #[error("{objective} objective does not apply to variant {variant}")]
    WrongVariant {
        objective: &'static str,
        variant: Variant,
    },
    /// `term` names the loss term, or the operation that overflowed when
    /// the forward pass itself fails.
    #[error("non-finite {term} at epoch {epoch}, batch {batch}")]
    NonFinite {
        term: &'static str,
        epoch: usize,
        batch: usize,
    },
    #[error("invalid train config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Penalty coefficient β.
    pub beta: f64,
    /// Hinge margin λ.
    pub margin: f64,
    /// L2 coefficient on dynamics weights (`weight_decay` variant only).
    pub weight_decay: f64,
    /// Hinge against every other batch member instead of one negative.
    pub all_negatives: bool,
    /// `spr` only: compare L2-normalised prediction and target (cosine
    /// form) instead of raw squared error. The raw form has the constant
    /// encoder as an attracting solution.
    pub spr_normalize: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            epochs: 50,
            learning_rate: 1e-3,
            beta: 0.1,
            margin: 1.0,
            weight_decay: 1e-4,
            all_negatives: false,
            spr_normalize: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Batch size of the original contrastive setup.
    pub fn full_scale() -> Self {
        Self {
            batch_size: 512,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(TrainError::BatchTooSmall(self.batch_size));
        }
        let nonneg = [
            ("train.learning_rate", self.learning_rate),
            ("train.beta", self.beta),
            ("train.margin", self.margin),
            ("train.weight_decay", self.weight_decay),
        ];
        for (name, v) in nonneg {
            if !v.is_finite() || v < 0.0 {
                return Err(TrainError::Config(format!("{name} = {v} must be finite and non-negative")));
            }
        }
        Ok(())
    }
}

/// Scalar terms of one objective evaluation. Inactive terms are zero.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub prediction: f64,
    pub negative: f64,
    pub penalty: f64,
    pub decay: f64,
}

impl LossBreakdown {
    pub fn terms(&self) -> [(&'static str, f64); 5] {
        [
            ("total", self.total),
            ("prediction", self.prediction),
            ("negative", self.negative),
            ("penalty", self.penalty),
            ("decay", self.decay),
        ]
    }

    fn first_non_finite(&self) -> Option<&'static str> {
        self.terms().into_iter().find(|(_, v)| !v.is_finite()).map(|(n, _)| n)
    }
}

/// Tape handles for the terms of an objective.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    pub prediction: Var,
    pub negative: Option<Var>,
    pub penalty: Option<Var>,
    pub decay: Option<Var>,
}

impl LossVars {
    pub fn breakdown(&self, tape: &Tape) -> LossBreakdown {
        let get = |v: Option<Var>| v.map_or(0.0, |v| tape.value(v).data()[0]);
        LossBreakdown {
            total: get(Some(self.total)),
            prediction: get(Some(self.prediction)),
            negative: get(self.negative),
            penalty: get(self.penalty),
            decay: get(self.decay),
        }
    }
}

/// How each sample's negative is chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum Negatives {
    /// Sample `i` is contrasted with the next state of sample `perm[i]`.
    Permutation(Vec<usize>),
    /// Sample `i` is contrasted with every other next state, averaged.
    AllOthers,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatentNorm {
    L1,
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Penalty {
    None,
    Query,
    Latent(LatentNorm),
}

/// One minibatch of transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub obs: Tensor,
    pub actions: Tensor,
    pub next_obs: Tensor,
}

impl Batch {
    /// Transitions `(e, t) → (e, t + 1)`.
    pub fn from_dataset(dataset: &TransitionDataset, idx: &[(usize, usize)]) -> Self {
        let next: Vec<_> = idx.iter().map(|&(e, t)| (e, t + 1)).collect();
        Self {
            obs: dataset.gather_observations(idx),
            actions: dataset.gather_actions(idx),
            next_obs: dataset.gather_observations(&next),
        }
    }

    pub fn len(&self) -> usize {
        self.obs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A uniformly random permutation with no fixed points, drawn by rejection.
pub fn sample_negatives<R: Rng>(batch_size: usize, rng: &mut R) -> Result<Vec<usize>> {
    if batch_size < 2 {
        return Err(TrainError::BatchTooSmall(batch_size));
    }
    let mut perm: Vec<usize> = (0..batch_size).collect();
    loop {
        perm.shuffle(rng);
        if perm.iter().enumerate().all(|(i, &p)| i != p) {
            return Ok(perm);
        }
    }
}

fn hinge_terms(tape: &mut Tape, z_next: Var, z_pred: Var, negatives: &Negatives, margin: f64) -> Result<(Var, Var)> {
    let err = tape.sub(z_next, z_pred)?;
    let sq = tape.row_sqnorm(err)?;
    let prediction = tape.mean(sq)?;
    let negative = match negatives {
        Negatives::Permutation(perm) => {
            let b = tape.value(z_next).rows();
            if perm.len() != b {
                return Err(TrainError::Config(format!(
                    "negative assignment has {} entries for a batch of {b}",
                    perm.len()
                )));
            }
            let z_neg = tape.gather_rows(z_next, perm)?;
            let diff = tape.sub(z_neg, z_pred)?;
            let d = tape.row_sqnorm(diff)?;
            let m = tape.affine(d, -1.0, margin)?;
            let h = tape.max_const(m, 0.0)?;
            tape.mean(h)?
        }
        Negatives::AllOthers => {
            let b = tape.value(z_next).rows();
            if b < 2 {
                return Err(TrainError::BatchTooSmall(b));
            }
            let d = tape.pairwise_sqdist(z_pred, z_next)?;
            let m = tape.affine(d, -1.0, margin)?;
            let h = tape.max_const(m, 0.0)?;
            let w = 1.0 / (b * (b - 1)) as f64;
            let mask = Tensor::raw(
                vec![b, b],
                (0..b * b).map(|k| if k / b == k % b { 0.0 } else { w }).collect(),
            );
            let mask = tape.constant(mask);
            let masked = tape.mul(h, mask)?;
            tape.sum(masked)?
        }
    };
    Ok((prediction, negative))
}

/// Contrastive terms for given latent batches.
pub fn contrastive_loss(z_next: &Tensor, z_pred: &Tensor, z_negative: &Tensor, margin: f64) -> Result<LossBreakdown> {
    for other in [z_pred, z_negative] {
        if other.shape() != z_next.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "contrastive_loss",
                left: z_next.shape().to_vec(),
                right: other.shape().to_vec(),
            }
            .into());
        }
    }
    let mut tape = Tape::new();
    let zn = tape.constant(z_next.clone());
    let zp = tape.constant(z_pred.clone());
    // Stacking the negatives after the targets lets the permutation form
    // address them: row i is contrasted with row b + i.
    let b = z_next.rows();
    let mut stacked = z_next.data().to_vec();
    stacked.extend_from_slice(z_negative.data());
    let both = tape.constant(Tensor::raw(vec![2 * b, z_next.cols()], stacked));
    let idx: Vec<usize> = (b..2 * b).collect();
    let zneg = tape.gather_rows(both, &idx)?;
    let err = tape.sub(zn, zp)?;
    let sq = tape.row_sqnorm(err)?;
    let prediction = tape.mean(sq)?;
    let diff = tape.sub(zneg, zp)?;
    let d = tape.row_sqnorm(diff)?;
    let m = tape.affine(d, -1.0, margin)?;
    let h = tape.max_const(m, 0.0)?;
    let negative = tape.mean(h)?;
    let total = tape.add(prediction, negative)?;
    let vars = LossVars {
        total,
        prediction,
        negative: Some(negative),
        penalty: None,
        decay: None,
    };
    Ok(vars.breakdown(&tape))
}

fn penalty_for(variant: Variant) -> Penalty {
    match variant {
        Variant::Cwm | Variant::Topk => Penalty::None,
        Variant::Plsm | Variant::WeightDecay | Variant::Hybrid | Variant::Spr => Penalty::Query,
        Variant::LatentL1 => Penalty::Latent(LatentNorm::L1),
        Variant::LatentL2 | Variant::NoQuery => Penalty::Latent(LatentNorm::L2),
    }
}

/// Builds the variant's full objective on `tape`.
pub fn objective(
    model: &WorldModel,
    tape: &mut Tape,
    bound: &BoundModel,
    batch: &Batch,
    config: &TrainConfig,
    negatives: &Negatives,
) -> Result<LossVars> {
    build(model, tape, bound, batch, config, negatives, penalty_for(model.variant()))
}

fn build(
    model: &WorldModel,
    tape: &mut Tape,
    bound: &BoundModel,
    batch: &Batch,
    config: &TrainConfig,
    negatives: &Negatives,
    penalty: Penalty,
) -> Result<LossVars> {
    let obs = tape.constant(batch.obs.clone());
    let next_obs = tape.constant(batch.next_obs.clone());
    let actions = tape.constant(batch.actions.clone());
    let z = model.encode_var(tape, bound, obs)?;
    let step = model.step_var(tape, bound, z, actions)?;

    let (prediction, negative) = if model.variant() == Variant::Spr {
        let mut target = model.target_encode_var(tape, bound, next_obs)?;
        let mut pred = step.next;
        if config.spr_normalize {
            target = tape.row_normalize(target)?;
            pred = tape.row_normalize(pred)?;
        }
        let err = tape.sub(target, pred)?;
        let sq = tape.row_sqnorm(err)?;
        (tape.mean(sq)?, None)
    } else {
        let z_next = model.encode_var(tape, bound, next_obs)?;
        let (p, n) = hinge_terms(tape, z_next, step.next, negatives, config.margin)?;
        (p, Some(n))
    };

    let norm = match (penalty, step.h) {
        (Penalty::None, _) => None,
        (Penalty::Query, Some(h)) => Some(tape.row_sqnorm(h)?),
        (Penalty::Query, None) => return Err(ModelError::NoQuery(model.variant()).into()),
        (Penalty::Latent(LatentNorm::L1), _) => Some(tape.row_l1norm(z)?),
        (Penalty::Latent(LatentNorm::L2), _) => Some(tape.row_sqnorm(z)?),
    };
    let penalty = match norm {
        Some(n) => {
            let m = tape.mean(n)?;
            Some(tape.affine(m, config.beta, 0.0)?)
        }
        None => None,
    };

    let decay = if model.variant() == Variant::WeightDecay {
        let mut acc: Option<Var> = None;
        for id in model.dynamics_weight_ids() {
            let sq = tape.square(bound.params[id])?;
            let s = tape.sum(sq)?;
            acc = Some(match acc {
                Some(a) => tape.add(a, s)?,
                None => s,
            });
        }
        match acc {
            Some(a) => Some(tape.affine(a, config.weight_decay, 0.0)?),
            None => None,
        }
    } else {
        None
    };

    let mut total = prediction;
    for term in [negative, penalty, decay].into_iter().flatten() {
        total = tape.add(total, term)?;
    }
    Ok(LossVars {
        total,
        prediction,
        negative,
        penalty,
        decay,
    })
}

fn evaluate(model: &WorldModel, batch: &Batch, config: &TrainConfig, negatives: &Negatives, penalty: Penalty) -> Result<LossBreakdown> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let vars = build(model, &mut tape, &bound, batch, config, negatives, penalty)?;
    Ok(vars.breakdown(&tape))
}

/// Objective value of `model`'s own variant on `batch`.
pub fn loss(model: &WorldModel, batch: &Batch, config: &TrainConfig, negatives: &Negatives) -> Result<LossBreakdown> {
    evaluate(model, batch, config, negatives, penalty_for(model.variant()))
}

/// Contrastive loss through the query path plus `β · mean ||h||²`.
pub fn plsm_loss(model: &WorldModel, batch: &Batch, config: &TrainConfig, negatives: &Negatives) -> Result<LossBreakdown> {
    let v = model.variant();
    if !v.has_query() || v == Variant::Spr {
        return Err(TrainError::WrongVariant {
            objective: "plsm",
            variant: v,
        });
    }
    evaluate(model, batch, config, negatives, Penalty::Query)
}

/// Squared error against the target encoder plus `β · mean ||h||²`.
pub fn spr_loss(model: &WorldModel, batch: &Batch, config: &TrainConfig) -> Result<LossBreakdown> {
    if model.variant() != Variant::Spr {
        return Err(TrainError::WrongVariant {
            objective: "spr",
            variant: model.variant(),
        });
    }
    evaluate(model, batch, config, &Negatives::AllOthers, Penalty::Query)
}

/// Contrastive loss on the direct path plus `β · mean ||z||₁` or `β · mean ||z||²`.
pub fn latent_reg_loss(
    model: &WorldModel,
    batch: &Batch,
    norm: LatentNorm,
    config: &TrainConfig,
    negatives: &Negatives,
) -> Result<LossBreakdown> {
    let v = model.variant();
    if !matches!(v, Variant::LatentL1 | Variant::LatentL2 | Variant::NoQuery) {
        return Err(TrainError::WrongVariant {
            objective: "latent-regularised",
            variant: v,
        });
    }
    evaluate(model, batch, config, negatives, Penalty::Latent(norm))
}

/// Per-epoch averages of the loss terms plus any hook metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: LossBreakdown,
    pub extra: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub variant: Variant,
    pub seed: u64,
    pub steps: u64,
    pub epochs: Vec<EpochMetrics>,
}

impl MetricsRecord {
    /// One row per epoch: `epoch,total,prediction,negative,penalty,decay`
    /// followed by hook metrics in name order.
    pub fn to_csv(&self) -> String {
        let extras: Vec<&String> = self.epochs.first().map(|e| e.extra.keys().collect()).unwrap_or_default();
        let mut out = String::from("epoch,total,prediction,negative,penalty,decay");
        for k in &extras {
            out.push(',');
            out.push_str(k);
        }
        out.push('\n');
        for e in &self.epochs {
            write!(out, "{}", e.epoch).unwrap();
            for (_, v) in e.loss.terms() {
                write!(out, ",{v}").unwrap();
            }
            for k in &extras {
                write!(out, ",{}", e.extra.get(*k).copied().unwrap_or(f64::NAN)).unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn summary(&self) -> serde_json::Value {
        serde_json::json!({
            "variant": self.variant,
            "seed": self.seed,
            "epochs": self.epochs.len(),
            "optimizer_steps": self.steps,
            "first": self.epochs.first(),
            "final": self.epochs.last(),
        })
    }

    pub fn final_loss(&self) -> Option<LossBreakdown> {
        self.epochs.last().map(|e| e.loss)
    }
}

fn check_widths(model: &WorldModel, dataset: &TransitionDataset) -> Result<()> {
    for (what, m, d) in [
        ("observation", model.obs_dim(), dataset.obs_dim()),
        ("action", model.action_dim(), dataset.action_dim()),
    ] {
        if m != d {
            return Err(TrainError::WidthMismatch {
                what,
                model: m,
                dataset: d,
            });
        }
    }
    Ok(())
}

pub fn train(model: &mut WorldModel, dataset: &TransitionDataset, config: &TrainConfig) -> Result<MetricsRecord> {
    train_with_hook(model, dataset, config, &mut |_, _| Vec::new())
}

/// Trains for `config.epochs` epochs of shuffled minibatches. After each
/// epoch `hook` may return extra named metrics to log.
pub fn train_with_hook(
    model: &mut WorldModel,
    dataset: &TransitionDataset,
    config: &TrainConfig,
    hook: &mut dyn FnMut(usize, &WorldModel) -> Vec<(String, f64)>,
) -> Result<MetricsRecord> {
    config.validate()?;
    check_widths(model, dataset)?;
    let mut order = dataset.transition_index();
    let mut shuffle_rng = substream(config.seed, "train/shuffle");
    let mut negative_rng = substream(config.seed, "train/negatives");
    let mut adam = Adam::new(
        AdamConfig {
            learning_rate: config.learning_rate,
            ..AdamConfig::default()
        },
        model.params(),
    );
    let tau = model.config().ema_tau;
    let mut record = MetricsRecord {
        variant: model.variant(),
        seed: config.seed,
        steps: 0,
        epochs: Vec::with_capacity(config.epochs),
    };

    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut sum = LossBreakdown::default();
        let mut batches = 0usize;
        for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
            // A trailing singleton has no valid negative.
            if chunk.len() < 2 {
                continue;
            }
            let batch = Batch::from_dataset(dataset, chunk);
            let negatives = if config.all_negatives {
                Negatives::AllOthers
            } else {
                Negatives::Permutation(sample_negatives(chunk.len(), &mut negative_rng)?)
            };
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape);
            let non_finite = |e: TrainError, fallback: &'static str| match e {
                TrainError::Tensor(TensorError::NonFinite { op }) | TrainError::Model(ModelError::Tensor(TensorError::NonFinite { op })) => {
                    TrainError::NonFinite {
                        term: if fallback.is_empty() { op } else { fallback },
                        epoch,
                        batch: bi,
                    }
                }
                e => e,
            };
            let vars = objective(model, &mut tape, &bound, &batch, config, &negatives).map_err(|e| non_finite(e, ""))?;
            let terms = vars.breakdown(&tape);
            if let Some(term) = terms.first_non_finite() {
                return Err(TrainError::NonFinite { term, epoch, batch: bi });
            }
            let grads = tape
                .backward(vars.total)
                .map_err(|e| non_finite(e.into(), "gradient"))?;
            adam.step(model.params_mut(), &grads.param_grads()).map_err(|e| match e {
                OptimError::NonFinite(_) => TrainError::NonFinite {
                    term: "parameter update",
                    epoch,
                    batch: bi,
                },
                e => e.into(),
            })?;
            if model.variant() == Variant::Spr {
                model.ema_update(tau)?;
            }
            sum.total += terms.total;
            sum.prediction += terms.prediction;
            sum.negative += terms.negative;
            sum.penalty += terms.penalty;
            sum.decay += terms.decay;
            batches += 1;
        }
        let n = batches.max(1) as f64;
        let mean = LossBreakdown {
            total: sum.total / n,
            prediction: sum.prediction / n,
            negative: sum.negative / n,
            penalty: sum.penalty / n,
            decay: sum.decay / n,
        };
        record.epochs.push(EpochMetrics {
            epoch,
            loss: mean,
            extra: hook(epoch, model).into_iter().collect(),
        });
    }
    record.steps = adam.steps();
    Ok(record)
}
