use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::container::Container;
use crate::rng::{episode_rng, Rng as ChaCha};
use crate::tensor::Tensor;

use super::grid::{is_wall, render, step, EnvState};
use super::{EnvConfig, EnvError, EnvKind};

/// Random-policy episodes with ground-truth factors.
///
/// * `observations`: `[E, T, C, n, n]`
/// * `actions`: one-hot `[E, T-1, A]`
/// * `factors`: `[E, T, C, 2]` object positions, `-1` for absent slots
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionDataset {
    pub config: EnvConfig,
    /// Standard deviation of observation noise applied after generation.
    pub noise_sigma: f64,
    pub observations: Tensor,
    pub actions: Tensor,
    pub factors: Tensor,
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetMeta {
    config: EnvConfig,
    noise_sigma: f64,
}

struct Episode {
    observations: Vec<f64>,
    actions: Vec<f64>,
    factors: Vec<f64>,
}

fn sample_initial(config: &EnvConfig, rng: &mut ChaCha) -> EnvState {
    let n = config.grid_size;
    let cells: Vec<(usize, usize)> = (0..n * n)
        .map(|i| (i / n, i % n))
        .filter(|&p| config.kind != EnvKind::Wall || !is_wall(n, p))
        .collect();
    loop {
        let positions: Vec<(usize, usize)> = (0..config.present())
            .map(|_| *cells.choose(rng).expect("non-empty grid"))
            .collect();
        let distinct = positions
            .iter()
            .enumerate()
            .all(|(i, p)| !positions[..i].contains(p));
        if distinct {
            return EnvState { positions };
        }
    }
}

fn push_factors(out: &mut Vec<f64>, state: &EnvState, slots: usize) {
    for slot in 0..slots {
        match state.positions.get(slot) {
            Some(&(r, c)) => out.extend([r as f64, c as f64]),
            None => out.extend([-1.0, -1.0]),
        }
    }
}

fn generate_episode(config: &EnvConfig, episode: u64) -> Episode {
    let mut rng = episode_rng(config.seed, episode);
    let t_len = config.episode_length;
    let a_dim = config.action_dim();
    // Only actions that address present objects are ever sampled.
    let valid_actions = match config.kind {
        EnvKind::Shapes => 4 * config.present(),
        _ => a_dim,
    };
    let mut state = sample_initial(config, &mut rng);
    let mut ep = Episode {
        observations: Vec::with_capacity(t_len * config.obs_dim()),
        actions: vec![0.0; (t_len - 1) * a_dim],
        factors: Vec::with_capacity(t_len * config.channels() * 2),
    };
    for t in 0..t_len {
        ep.observations.extend_from_slice(render(&state, config).data());
        push_factors(&mut ep.factors, &state, config.channels());
        if t + 1 < t_len {
            let a = rng.random_range(0..valid_actions);
            ep.actions[t * a_dim + a] = 1.0;
            state = step(config, &state, a);
        }
    }
    ep
}

/// Generates `num_episodes` random-policy episodes. Episode `e` draws from
/// its own stream seeded with `seed ⊕ e`, so the result does not depend on
/// how episodes are scheduled.
pub fn generate_dataset(config: &EnvConfig, num_episodes: usize) -> Result<TransitionDataset, EnvError> {
    if config.present() > config.free_cells() {
        return Err(EnvError::ImpossiblePlacement {
            objects: config.present(),
            cells: config.free_cells(),
        });
    }
    config.validate()?;
    if num_episodes == 0 {
        return Err(EnvError::InvalidConfig {
            field: "episodes",
            msg: "at least one episode is required".into(),
        });
    }
    let episodes: Vec<Episode> = (0..num_episodes as u64)
        .into_par_iter()
        .map(|e| generate_episode(config, e))
        .collect();
    let (n, c, t_len) = (config.grid_size, config.channels(), config.episode_length);
    let e = num_episodes;
    let mut obs = Vec::with_capacity(e * t_len * config.obs_dim());
    let mut act = Vec::with_capacity(e * (t_len - 1) * config.action_dim());
    let mut fac = Vec::with_capacity(e * t_len * c * 2);
    for ep in episodes {
        obs.extend(ep.observations);
        act.extend(ep.actions);
        fac.extend(ep.factors);
    }
    Ok(TransitionDataset {
        config: config.clone(),
        noise_sigma: 0.0,
        observations: Tensor::new(vec![e, t_len, c, n, n], obs).expect("finite"),
        actions: Tensor::new(vec![e, t_len - 1, config.action_dim()], act).expect("finite"),
        factors: Tensor::new(vec![e, t_len, c, 2], fac).expect("finite"),
    })
}

/// Adds i.i.d. `N(0, sigma²)` noise to every observation entry.
pub fn corrupt(dataset: &TransitionDataset, sigma: f64, seed: u64) -> Result<TransitionDataset, EnvError> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(EnvError::InvalidConfig {
            field: "noise",
            msg: format!("sigma must be finite and non-negative, got {sigma}"),
        });
    }
    let mut out = dataset.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    let mut rng = ChaCha::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("valid sigma");
    for v in out.observations.data_mut() {
        *v += normal.sample(&mut rng);
    }
    out.noise_sigma = (dataset.noise_sigma.powi(2) + sigma * sigma).sqrt();
    Ok(out)
}

impl TransitionDataset {
    pub fn episodes(&self) -> usize {
        self.observations.shape()[0]
    }

    /// Observations per episode.
    pub fn episode_length(&self) -> usize {
        self.observations.shape()[1]
    }

    pub fn obs_dim(&self) -> usize {
        self.observations.shape()[2..].iter().product()
    }

    pub fn action_dim(&self) -> usize {
        self.actions.shape()[2]
    }

    pub fn num_transitions(&self) -> usize {
        self.episodes() * (self.episode_length() - 1)
    }

    /// Flattened observation `t` of episode `e`.
    pub fn observation(&self, e: usize, t: usize) -> &[f64] {
        let d = self.obs_dim();
        let i = e * self.episode_length() + t;
        &self.observations.data()[i * d..(i + 1) * d]
    }

    pub fn action(&self, e: usize, t: usize) -> &[f64] {
        let a = self.action_dim();
        let i = e * (self.episode_length() - 1) + t;
        &self.actions.data()[i * a..(i + 1) * a]
    }

    pub fn action_index(&self, e: usize, t: usize) -> usize {
        self.action(e, t)
            .iter()
            .position(|&v| v == 1.0)
            .expect("one-hot action")
    }

    /// Ground-truth state reconstructed from the factor annotations.
    pub fn state(&self, e: usize, t: usize) -> EnvState {
        let slots = self.factors.shape()[2];
        let base = (e * self.episode_length() + t) * slots * 2;
        let f = &self.factors.data()[base..base + slots * 2];
        let positions = f
            .chunks_exact(2)
            .filter(|p| p[0] >= 0.0)
            .map(|p| (p[0] as usize, p[1] as usize))
            .collect();
        EnvState { positions }
    }

    /// Transition `(episode, t)` pairs in dataset order.
    pub fn transition_index(&self) -> Vec<(usize, usize)> {
        let t_len = self.episode_length();
        (0..self.episodes())
            .flat_map(|e| (0..t_len - 1).map(move |t| (e, t)))
            .collect()
    }

    /// `[B, D]` observations at the given `(episode, t)` pairs.
    pub fn gather_observations(&self, idx: &[(usize, usize)]) -> Tensor {
        let d = self.obs_dim();
        let mut data = Vec::with_capacity(idx.len() * d);
        for &(e, t) in idx {
            data.extend_from_slice(self.observation(e, t));
        }
        Tensor::new(vec![idx.len(), d], data).expect("finite observations")
    }

    pub fn gather_actions(&self, idx: &[(usize, usize)]) -> Tensor {
        let a = self.action_dim();
        let mut data = Vec::with_capacity(idx.len() * a);
        for &(e, t) in idx {
            data.extend_from_slice(self.action(e, t));
        }
        Tensor::new(vec![idx.len(), a], data).expect("finite actions")
    }

    /// Object slot addressed by action index `a`.
    pub fn action_object(&self, a: usize) -> usize {
        match self.config.kind {
            EnvKind::Shapes => a / 4,
            _ => 0,
        }
    }

    fn check(&self) -> Result<(), EnvError> {
        let c = &self.config;
        let (e, t) = (self.episodes(), self.episode_length());
        let n = c.grid_size;
        let expect = |name: &str, got: &[usize], want: Vec<usize>| {
            if got == want.as_slice() {
                Ok(())
            } else {
                Err(EnvError::Inconsistent(format!("{name} has shape {got:?}, expected {want:?}")))
            }
        };
        expect("observations", self.observations.shape(), vec![e, t, c.channels(), n, n])?;
        expect("actions", self.actions.shape(), vec![e, t - 1, c.action_dim()])?;
        expect("factors", self.factors.shape(), vec![e, t, c.channels(), 2])?;
        Ok(())
    }
}

pub fn save_dataset(dataset: &TransitionDataset, path: impl AsRef<Path>) -> Result<(), EnvError> {
    let meta = DatasetMeta {
        config: dataset.config.clone(),
        noise_sigma: dataset.noise_sigma,
    };
    let mut c = Container::new("dataset", serde_json::to_value(meta).expect("meta serializes"));
    c.push("observations", dataset.observations.clone());
    c.push("actions", dataset.actions.clone());
    c.push("factors", dataset.factors.clone());
    c.save(path)?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<TransitionDataset, EnvError> {
    let c = Container::load(path)?;
    c.expect_kind("dataset")?;
    let meta: DatasetMeta = serde_json::from_value(c.meta.clone())
        .map_err(crate::container::ContainerError::from)?;
    let ds = TransitionDataset {
        config: meta.config,
        noise_sigma: meta.noise_sigma,
        observations: c.array("observations")?.clone(),
        actions: c.array("actions")?.clone(),
        factors: c.array("factors")?.clone(),
    };
    ds.check()?;
    Ok(ds)
}
