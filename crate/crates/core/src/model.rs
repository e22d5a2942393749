//! World-model architectures.
//!
//! Every variant encodes an observation into a latent `z` and predicts the
//! next latent residually, `z' = z + Δ`. They differ in what the dynamics
//! head sees:
//!
//! | variant                          | Δ computed from                      |
//! |----------------------------------|--------------------------------------|
//! | `cwm`, `latent_l1/l2`, `no_query`| `d([z ; a])`                         |
//! | `plsm`, `weight_decay`, `spr`    | `d([h ; a])`, `h = f([z ; a])`       |
//! | `topk`                           | as `plsm`, `h` reduced to its top-k  |
//! | `hybrid`                         | `[d₁([h ; a]) ; d₂([z ; a])]`        |
//!
//! The `spr` variant also carries an exponential-moving-average copy of the
//! encoder that is never touched by the optimizer.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::container::{Container, ContainerError};
use crate::nn::{Mlp, ParamStore};
use crate::rng::substream;
use crate::tape::{ParamId, Tape, Var};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{what}: expected width {expected}, got {got}")]
    Width {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("variant {0} has no query network")]
    NoQuery(Variant),
    #[error("variant {0} has no target encoder")]
    NoTarget(Variant),
    #[error("rollout needs at least one action")]
    EmptyActions,
    #[error("invalid model config: {0}")]
    Config(String),
    #[error(transparent)]
    Container(#[from] ContainerError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Cwm,
    Plsm,
    LatentL1,
    LatentL2,
    NoQuery,
    Topk,
    WeightDecay,
    Hybrid,
    Spr,
}

impl Variant {
    pub const ALL: [Variant; 9] = [
        Variant::Cwm,
        Variant::Plsm,
        Variant::LatentL1,
        Variant::LatentL2,
        Variant::NoQuery,
        Variant::Topk,
        Variant::WeightDecay,
        Variant::Hybrid,
        Variant::Spr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Cwm => "cwm",
            Variant::Plsm => "plsm",
            Variant::LatentL1 => "latent_l1",
            Variant::LatentL2 => "latent_l2",
            Variant::NoQuery => "no_query",
            Variant::Topk => "topk",
            Variant::WeightDecay => "weight_decay",
            Variant::Hybrid => "hybrid",
            Variant::Spr => "spr",
        }
    }

    /// Whether a query network sits between `z` and the dynamics head.
    pub fn has_query(self) -> bool {
        matches!(
            self,
            Variant::Plsm | Variant::Topk | Variant::WeightDecay | Variant::Hybrid | Variant::Spr
        )
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| ModelError::Config(format!("model.variant: unknown variant {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub variant: Variant,
    pub latent_dim: usize,
    pub query_dim: usize,
    pub hidden_units: usize,
    pub hidden_layers: usize,
    /// Entries of `h` kept by the `topk` variant.
    pub topk_k: usize,
    /// EMA coefficient of the `spr` target encoder.
    pub ema_tau: f64,
    /// Fraction of the latent governed by query-path dynamics (`hybrid`).
    pub hybrid_split: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Plsm,
            latent_dim: 32,
            query_dim: 32,
            hidden_units: 128,
            hidden_layers: 2,
            topk_k: 15,
            ema_tau: 0.99,
            hybrid_split: 0.5,
        }
    }
}

impl ModelConfig {
    /// Widths from the original contrastive setup: 512 hidden units and
    /// 50-dimensional latent and query spaces.
    pub fn full_scale(variant: Variant) -> Self {
        Self {
            variant,
            latent_dim: 50,
            query_dim: 50,
            hidden_units: 512,
            ..Self::default()
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(ModelError::Config(m));
        if self.latent_dim == 0 || self.query_dim == 0 || self.hidden_units == 0 {
            return err("model widths must be positive".into());
        }
        if self.variant == Variant::Topk && !(1..=self.query_dim).contains(&self.topk_k) {
            return err(format!("model.topk_k = {} outside 1..={}", self.topk_k, self.query_dim));
        }
        if self.variant == Variant::Hybrid {
            if !(self.hybrid_split > 0.0 && self.hybrid_split < 1.0) {
                return err(format!("model.hybrid_split = {} outside (0, 1)", self.hybrid_split));
            }
            let s = self.split_width();
            if s == 0 || s == self.latent_dim {
                return err(format!(
                    "model.hybrid_split = {} leaves an empty half of a {}-wide latent",
                    self.hybrid_split, self.latent_dim
                ));
            }
        }
        if !(0.0..1.0).contains(&self.ema_tau) {
            return err(format!("model.ema_tau = {} outside [0, 1)", self.ema_tau));
        }
        Ok(())
    }

    /// Width of the parsimonious half of a hybrid latent.
    pub fn split_width(&self) -> usize {
        (self.hybrid_split * self.latent_dim as f64).round() as usize
    }

    fn mlp_dims(&self, input: usize, output: usize) -> Vec<usize> {
        let mut dims = vec![input];
        dims.extend(std::iter::repeat_n(self.hidden_units, self.hidden_layers));
        dims.push(output);
        dims
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Dynamics {
    Single(Mlp),
    Hybrid { parsimonious: Mlp, free: Mlp },
}

/// Encoder, optional query network, dynamics head and optional target
/// encoder, together with their parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldModel {
    config: ModelConfig,
    obs_dim: usize,
    action_dim: usize,
    params: ParamStore,
    encoder: Mlp,
    query: Option<Mlp>,
    dynamics: Dynamics,
    target: Option<ParamStore>,
}

/// Tape handles for a model's parameters.
#[derive(Debug, Clone)]
pub struct BoundModel {
    pub params: Vec<Var>,
    pub target: Option<Vec<Var>>,
}

/// Tape handles produced by one latent transition.
#[derive(Debug, Clone, Copy)]
pub struct StepVars {
    pub h: Option<Var>,
    pub delta: Var,
    pub next: Var,
}

impl WorldModel {
    /// Builds a freshly initialised model. Each network draws from its own
    /// substream of `seed`, so networks shared between variants start from
    /// identical weights.
    pub fn new(config: ModelConfig, obs_dim: usize, action_dim: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let (zd, hd, a) = (config.latent_dim, config.query_dim, action_dim);
        let mut params = ParamStore::new();
        let encoder = Mlp::new(
            &mut params,
            "encoder",
            &config.mlp_dims(obs_dim, zd),
            &mut substream(seed, "init/encoder"),
        );
        let query = config.variant.has_query().then(|| {
            Mlp::new(
                &mut params,
                "query",
                &config.mlp_dims(zd + a, hd),
                &mut substream(seed, "init/query"),
            )
        });
        let dynamics = match config.variant {
            Variant::Hybrid => {
                let s = config.split_width();
                Dynamics::Hybrid {
                    parsimonious: Mlp::new(
                        &mut params,
                        "dynamics",
                        &config.mlp_dims(hd + a, s),
                        &mut substream(seed, "init/dynamics"),
                    ),
                    free: Mlp::new(
                        &mut params,
                        "dynamics_free",
                        &config.mlp_dims(zd + a, zd - s),
                        &mut substream(seed, "init/dynamics_free"),
                    ),
                }
            }
            v => {
                let input = if v.has_query() { hd } else { zd };
                Dynamics::Single(Mlp::new(
                    &mut params,
                    "dynamics",
                    &config.mlp_dims(input + a, zd),
                    &mut substream(seed, "init/dynamics"),
                ))
            }
        };
        let target = (config.variant == Variant::Spr).then(|| {
            let mut t = ParamStore::new();
            for id in encoder.param_ids() {
                t.push(params.name(id), params.get(id).clone());
            }
            t
        });
        Ok(Self {
            config,
            obs_dim,
            action_dim,
            params,
            encoder,
            query,
            dynamics,
            target,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn target_params(&self) -> Option<&ParamStore> {
        self.target.as_ref()
    }

    /// Mutable access to the target encoder, for tests and tools that
    /// perturb it directly. Training only changes it through
    /// [`WorldModel::ema_update`].
    pub fn target_params_mut(&mut self) -> Option<&mut ParamStore> {
        self.target.as_mut()
    }

    pub fn encoder(&self) -> &Mlp {
        &self.encoder
    }

    pub fn query_net(&self) -> Option<&Mlp> {
        self.query.as_ref()
    }

    /// The dynamics network fed by `h` (or by `z` when there is no query).
    pub fn dynamics_net(&self) -> &Mlp {
        match &self.dynamics {
            Dynamics::Single(m) => m,
            Dynamics::Hybrid { parsimonious, .. } => parsimonious,
        }
    }

    /// Weight matrices (not biases) of every dynamics network.
    pub fn dynamics_weight_ids(&self) -> Vec<ParamId> {
        let nets: Vec<&Mlp> = match &self.dynamics {
            Dynamics::Single(m) => vec![m],
            Dynamics::Hybrid { parsimonious, free } => vec![parsimonious, free],
        };
        nets.into_iter()
            .flat_map(|m| m.layers.iter().map(|l| l.weight))
            .collect()
    }

    /// Weight matrix of the first dynamics layer.
    pub fn first_dynamics_weight(&self) -> &Tensor {
        self.params.get(self.dynamics_net().layers[0].weight)
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundModel {
        let params = self.params.bind(tape);
        // Target parameters enter as constants: no gradient reaches them.
        let target = self
            .target
            .as_ref()
            .map(|t| t.iter().map(|(_, v)| tape.constant(v.clone())).collect());
        BoundModel { params, target }
    }

    fn check_width(what: &'static str, t: &Tensor, expected: usize) -> Result<()> {
        let got = if t.shape().len() == 2 { t.shape()[1] } else { t.numel() };
        if t.shape().len() != 2 || got != expected {
            return Err(ModelError::Width { what, expected, got });
        }
        Ok(())
    }

    pub fn encode_var(&self, tape: &mut Tape, b: &BoundModel, obs: Var) -> Result<Var> {
        Self::check_width("observation", tape.value(obs), self.obs_dim)?;
        Ok(self.encoder.forward(tape, &b.params, obs)?)
    }

    /// Target-encoder embedding behind a stop-gradient.
    pub fn target_encode_var(&self, tape: &mut Tape, b: &BoundModel, obs: Var) -> Result<Var> {
        let target = b
            .target
            .as_ref()
            .ok_or(ModelError::NoTarget(self.variant()))?;
        Self::check_width("observation", tape.value(obs), self.obs_dim)?;
        // The target store mirrors the encoder's parameter layout, which
        // always occupies the first ids of the main store.
        let z = self.encoder.forward(tape, target, obs)?;
        Ok(tape.stop_grad(z))
    }

    fn check_za(&self, tape: &Tape, z: Var, a: Var) -> Result<()> {
        Self::check_width("latent", tape.value(z), self.config.latent_dim)?;
        Self::check_width("action", tape.value(a), self.action_dim)?;
        if tape.value(z).rows() != tape.value(a).rows() {
            return Err(ModelError::Tensor(TensorError::ShapeMismatch {
                op: "step",
                left: tape.value(z).shape().to_vec(),
                right: tape.value(a).shape().to_vec(),
            }));
        }
        Ok(())
    }

    /// `h = f([z ; a])`, reduced to its top-k entries for `topk`.
    pub fn query_var(&self, tape: &mut Tape, b: &BoundModel, z: Var, a: Var) -> Result<Var> {
        let query = self.query.as_ref().ok_or(ModelError::NoQuery(self.variant()))?;
        self.check_za(tape, z, a)?;
        let za = tape.concat(z, a)?;
        let h = query.forward(tape, &b.params, za)?;
        if self.variant() == Variant::Topk {
            Ok(tape.topk(h, self.config.topk_k)?)
        } else {
            Ok(h)
        }
    }

    /// Dynamics head output given an explicit `h`. `z` is only read by the
    /// unconstrained half of a hybrid model.
    pub fn delta_from_query_var(
        &self,
        tape: &mut Tape,
        b: &BoundModel,
        h: Var,
        z: Var,
        a: Var,
    ) -> Result<Var> {
        if !self.variant().has_query() {
            return Err(ModelError::NoQuery(self.variant()));
        }
        Self::check_width("query", tape.value(h), self.config.query_dim)?;
        let ha = tape.concat(h, a)?;
        match &self.dynamics {
            Dynamics::Single(d) => Ok(d.forward(tape, &b.params, ha)?),
            Dynamics::Hybrid { parsimonious, free } => {
                let d1 = parsimonious.forward(tape, &b.params, ha)?;
                let za = tape.concat(z, a)?;
                let d2 = free.forward(tape, &b.params, za)?;
                Ok(tape.concat(d1, d2)?)
            }
        }
    }

    /// One latent transition `z → z + Δ`.
    pub fn step_var(&self, tape: &mut Tape, b: &BoundModel, z: Var, a: Var) -> Result<StepVars> {
        self.check_za(tape, z, a)?;
        let (h, delta) = if self.variant().has_query() {
            let h = self.query_var(tape, b, z, a)?;
            (Some(h), self.delta_from_query_var(tape, b, h, z, a)?)
        } else {
            let Dynamics::Single(d) = &self.dynamics else {
                unreachable!("hybrid dynamics always has a query")
            };
            let za = tape.concat(z, a)?;
            (None, d.forward(tape, &b.params, za)?)
        };
        let next = tape.add(z, delta)?;
        Ok(StepVars { h, delta, next })
    }

    /// Latent batch `[B, |z|]` for observations `[B, obs_dim]`.
    pub fn encode(&self, obs: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape);
        let o = tape.constant(obs.clone());
        let z = self.encode_var(&mut tape, &b, o)?;
        Ok(tape.value(z).clone())
    }

    /// Target-encoder latents (spr only).
    pub fn target_encode(&self, obs: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape);
        let o = tape.constant(obs.clone());
        let z = self.target_encode_var(&mut tape, &b, o)?;
        Ok(tape.value(z).clone())
    }

    fn run_step(&self, z: &Tensor, a: &Tensor) -> Result<(Option<Tensor>, Tensor, Tensor)> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape);
        let zv = tape.constant(z.clone());
        let av = tape.constant(a.clone());
        let s = self.step_var(&mut tape, &b, zv, av)?;
        Ok((
            s.h.map(|h| tape.value(h).clone()),
            tape.value(s.delta).clone(),
            tape.value(s.next).clone(),
        ))
    }

    pub fn query(&self, z: &Tensor, a: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape);
        let zv = tape.constant(z.clone());
        let av = tape.constant(a.clone());
        let h = self.query_var(&mut tape, &b, zv, av)?;
        Ok(tape.value(h).clone())
    }

    pub fn predict_delta(&self, z: &Tensor, a: &Tensor) -> Result<Tensor> {
        Ok(self.run_step(z, a)?.1)
    }

    /// Dynamics output for an injected `h`, bypassing the query network.
    pub fn delta_from_query(&self, h: &Tensor, z: &Tensor, a: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape);
        let hv = tape.constant(h.clone());
        let zv = tape.constant(z.clone());
        let av = tape.constant(a.clone());
        let d = self.delta_from_query_var(&mut tape, &b, hv, zv, av)?;
        Ok(tape.value(d).clone())
    }

    pub fn predict_next(&self, z: &Tensor, a: &Tensor) -> Result<Tensor> {
        Ok(self.run_step(z, a)?.2)
    }

    /// Query output, delta and next latent in one pass.
    pub fn step_outputs(&self, z: &Tensor, a: &Tensor) -> Result<(Option<Tensor>, Tensor, Tensor)> {
        self.run_step(z, a)
    }

    /// Encodes `obs` once and applies the latent transition for each action
    /// batch in turn, never re-encoding intermediate observations.
    pub fn rollout(&self, obs: &Tensor, actions: &[Tensor]) -> Result<Tensor> {
        if actions.is_empty() {
            return Err(ModelError::EmptyActions);
        }
        let mut tape = Tape::new();
        let b = self.bind(&mut tape);
        let o = tape.constant(obs.clone());
        let z = self.rollout_var(&mut tape, &b, o, actions)?;
        Ok(tape.value(z).clone())
    }

    pub fn rollout_var(&self, tape: &mut Tape, b: &BoundModel, obs: Var, actions: &[Tensor]) -> Result<Var> {
        if actions.is_empty() {
            return Err(ModelError::EmptyActions);
        }
        let mut z = self.encode_var(tape, b, obs)?;
        for a in actions {
            let av = tape.constant(a.clone());
            z = self.step_var(tape, b, z, av)?.next;
        }
        Ok(z)
    }

    /// `θ⁻ ← τ θ⁻ + (1 − τ) θ` for every encoder parameter.
    pub fn ema_update(&mut self, tau: f64) -> Result<()> {
        let target = self.target.as_mut().ok_or(ModelError::NoTarget(self.config.variant))?;
        if !(0.0..=1.0).contains(&tau) {
            return Err(ModelError::Config(format!("ema tau {tau} outside [0, 1]")));
        }
        for (i, id) in self.encoder.param_ids().enumerate() {
            let online = self.params.get(id).data().to_vec();
            for (t, o) in target.get_mut(i).data_mut().iter_mut().zip(online) {
                *t = tau * *t + (1.0 - tau) * o;
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>, config_echo: serde_json::Value) -> Result<()> {
        let meta = serde_json::json!({
            "variant": self.variant(),
            "model": self.config,
            "obs_dim": self.obs_dim,
            "action_dim": self.action_dim,
            "config": config_echo,
        });
        let mut c = Container::new("checkpoint", meta);
        for (name, t) in self.params.iter() {
            c.push(name, t.clone());
        }
        if let Some(target) = &self.target {
            for (name, t) in target.iter() {
                c.push(format!("target.{name}"), t.clone());
            }
        }
        c.save(path)?;
        Ok(())
    }

    /// Loads a checkpoint, returning the model and its config echo.
    pub fn load(path: impl AsRef<Path>) -> Result<(Self, serde_json::Value)> {
        let c = Container::load(path)?;
        c.expect_kind("checkpoint")?;
        let field = |k: &str| {
            c.meta
                .get(k)
                .cloned()
                .ok_or_else(|| ModelError::Config(format!("checkpoint header lacks {k}")))
        };
        let config: ModelConfig = serde_json::from_value(field("model")?).map_err(ContainerError::from)?;
        let obs_dim: usize = serde_json::from_value(field("obs_dim")?).map_err(ContainerError::from)?;
        let action_dim: usize = serde_json::from_value(field("action_dim")?).map_err(ContainerError::from)?;
        let mut model = Self::new(config, obs_dim, action_dim, 0)?;
        let names: Vec<String> = model.params.iter().map(|(n, _)| n.to_string()).collect();
        for (id, name) in names.iter().enumerate() {
            let t = c.array(name)?;
            if t.shape() != model.params.get(id).shape() {
                return Err(ModelError::Config(format!(
                    "checkpoint array {name} has shape {:?}, expected {:?}",
                    t.shape(),
                    model.params.get(id).shape()
                )));
            }
            *model.params.get_mut(id) = t.clone();
        }
        if let Some(target) = model.target.as_mut() {
            for i in 0..target.len() {
                let name = format!("target.{}", target.name(i));
                *target.get_mut(i) = c.array(&name)?.clone();
            }
        }
        Ok((model, c.meta.get("config").cloned().unwrap_or_default()))
    }
}
