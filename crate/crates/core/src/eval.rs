//! Measurements on trained models.
//!
//! All functions are read-only over a model and a dataset and are
//! deterministic: samples are visited in dataset order and ties resolve to
//! the lowest index.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envs::TransitionDataset;
use crate::model::{ModelError, WorldModel};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("horizon {horizon} needs episodes of at least {} observations, dataset has {length}", horizon + 1)]
    Horizon { horizon: usize, length: usize },
    #[error("{what} width differs: model expects {model}, dataset has {dataset}")]
    WidthMismatch {
        what: &'static str,
        model: usize,
        dataset: usize,
    },
    #[error("no samples to evaluate")]
    Empty,
    #[error("epsilon must be positive and finite, got {0}")]
    Epsilon(f64),
    #[error("probe: {0}")]
    Probe(String),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Multi-step prediction horizons reported by default.
pub const DEFAULT_HORIZONS: [usize; 5] = [1, 2, 3, 5, 10];
/// Clustering radius after delta normalisation.
pub const DEFAULT_EPSILON: f64 = 0.05;
/// Ridge coefficient of the decoding probes.
pub const PROBE_ALPHA: f64 = 1e-3;

fn check_widths(model: &WorldModel, dataset: &TransitionDataset) -> Result<()> {
    for (what, m, d) in [
        ("observation", model.obs_dim(), dataset.obs_dim()),
        ("action", model.action_dim(), dataset.action_dim()),
    ] {
        if m != d {
            return Err(EvalError::WidthMismatch {
                what,
                model: m,
                dataset: d,
            });
        }
    }
    Ok(())
}

fn sqdist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Hits@1 per horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitsResult {
    pub accuracy: BTreeMap<usize, f64>,
    pub reference_size: usize,
}

impl HitsResult {
    pub fn at(&self, horizon: usize) -> Option<f64> {
        self.accuracy.get(&horizon).copied()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("horizon,accuracy,reference_size\n");
        for (h, a) in &self.accuracy {
            writeln!(out, "{h},{a},{}", self.reference_size).unwrap();
        }
        out
    }
}

/// Fraction of rows `i` of `pred` whose nearest row of `refs` is row `i`.
/// Ties go to the lowest reference index.
pub fn rank1_accuracy(pred: &Tensor, refs: &Tensor) -> f64 {
    let n = pred.rows();
    let hits = (0..n)
        .filter(|&i| {
            let p = pred.row(i);
            let mut best = (f64::INFINITY, usize::MAX);
            for j in 0..refs.rows() {
                let d = sqdist(p, refs.row(j));
                if d < best.0 {
                    best = (d, j);
                }
            }
            best.1 == i
        })
        .count();
    hits as f64 / n as f64
}

/// One sample per episode, starting at its first observation: encode
/// `s_0`, roll the latent forward through the recorded actions, and
/// compare against the encoded `s_N` of every episode.
pub fn hits_at_1(model: &WorldModel, dataset: &TransitionDataset, horizons: &[usize]) -> Result<HitsResult> {
    check_widths(model, dataset)?;
    let length = dataset.episode_length();
    let max = horizons.iter().copied().max().ok_or(EvalError::Empty)?;
    if let Some(&bad) = horizons.iter().find(|&&h| h == 0 || h >= length) {
        return Err(EvalError::Horizon { horizon: bad, length });
    }
    let episodes: Vec<usize> = (0..dataset.episodes()).collect();
    let at = |t: usize| -> Vec<(usize, usize)> { episodes.iter().map(|&e| (e, t)).collect() };
    let mut z = model.encode(&dataset.gather_observations(&at(0)))?;
    let wanted: BTreeSet<usize> = horizons.iter().copied().collect();
    let mut accuracy = BTreeMap::new();
    for n in 1..=max {
        z = model.predict_next(&z, &dataset.gather_actions(&at(n - 1)))?;
        if wanted.contains(&n) {
            let refs = model.encode(&dataset.gather_observations(&at(n)))?;
            accuracy.insert(n, rank1_accuracy(&z, &refs));
        }
    }
    Ok(HitsResult {
        accuracy,
        reference_size: episodes.len(),
    })
}

/// Greedy first-fit ε-ball clustering. Each point joins the first existing
/// centroid within `epsilon`, else becomes a new centroid. Returns labels
/// and centroids.
pub fn cluster_points(points: &Tensor, epsilon: f64) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(EvalError::Epsilon(epsilon));
    }
    let eps2 = epsilon * epsilon;
    let mut centroids: Vec<Vec<f64>> = Vec::new();
    let labels = (0..points.rows())
        .map(|i| {
            let p = points.row(i);
            match centroids.iter().position(|c| sqdist(c, p) <= eps2) {
                Some(k) => k,
                None => {
                    centroids.push(p.to_vec());
                    centroids.len() - 1
                }
            }
        })
        .collect();
    Ok((labels, centroids))
}

fn entropy_bits<'a>(counts: impl Iterator<Item = &'a usize> + Clone) -> f64 {
    let total: usize = counts.clone().sum();
    if total == 0 {
        return 0.0;
    }
    let h: f64 = counts
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total as f64;
            -p * p.log2()
        })
        .sum();
    // Clamp rounding residue of a point mass.
    h.max(0.0)
}

/// `Σ_a p(a) · H(label | a)` in bits.
pub fn empirical_mi(actions: &[usize], labels: &[usize]) -> f64 {
    let mut per: BTreeMap<usize, BTreeMap<usize, usize>> = BTreeMap::new();
    for (&a, &l) in actions.iter().zip(labels) {
        *per.entry(a).or_default().entry(l).or_default() += 1;
    }
    let n = actions.len().min(labels.len()) as f64;
    per.values()
        .map(|freq| {
            let na: usize = freq.values().sum();
            na as f64 / n * entropy_bits(freq.values())
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub epsilon: f64,
    /// Distinct clusters among each action's deltas, by action index.
    pub per_action_counts: Vec<usize>,
    pub marginal_count: usize,
    pub centroids: Vec<Vec<f64>>,
    /// Cluster label frequencies per action.
    pub action_frequencies: Vec<BTreeMap<usize, usize>>,
    pub empirical_mi: f64,
}

impl ClusterReport {
    pub fn max_per_action(&self) -> usize {
        self.per_action_counts.iter().copied().max().unwrap_or(0)
    }
}

/// Clusters `deltas` (one row per sample) after scaling them to unit mean
/// norm. All-zero deltas are left unscaled.
pub fn cluster_deltas(deltas: &Tensor, actions: &[usize], action_dim: usize, epsilon: f64) -> Result<ClusterReport> {
    let n = deltas.rows();
    if n == 0 || deltas.numel() == 0 {
        return Err(EvalError::Empty);
    }
    if actions.len() != n {
        return Err(EvalError::Probe(format!("{} actions for {n} deltas", actions.len())));
    }
    let mean_norm = (0..n).map(|i| norm(deltas.row(i))).sum::<f64>() / n as f64;
    let scale = if mean_norm > 0.0 { 1.0 / mean_norm } else { 1.0 };
    let scaled = Tensor::raw(deltas.shape().to_vec(), deltas.data().iter().map(|v| v * scale).collect());
    let (labels, centroids) = cluster_points(&scaled, epsilon)?;
    let width = action_dim.max(actions.iter().map(|a| a + 1).max().unwrap_or(0));
    let mut action_frequencies = vec![BTreeMap::new(); width];
    for (&a, &l) in actions.iter().zip(&labels) {
        *action_frequencies[a].entry(l).or_insert(0) += 1;
    }
    Ok(ClusterReport {
        epsilon,
        per_action_counts: action_frequencies.iter().map(BTreeMap::len).collect(),
        marginal_count: centroids.len(),
        centroids,
        action_frequencies,
        empirical_mi: empirical_mi(actions, &labels),
    })
}

/// Clusters the predicted delta of every transition in `dataset`.
pub fn delta_clusters(model: &WorldModel, dataset: &TransitionDataset, epsilon: f64) -> Result<ClusterReport> {
    check_widths(model, dataset)?;
    let idx = dataset.transition_index();
    if idx.is_empty() {
        return Err(EvalError::Empty);
    }
    let z = model.encode(&dataset.gather_observations(&idx))?;
    let deltas = model.predict_delta(&z, &dataset.gather_actions(&idx))?;
    let actions: Vec<usize> = idx.iter().map(|&(e, t)| dataset.action_index(e, t)).collect();
    cluster_deltas(&deltas, &actions, dataset.action_dim(), epsilon)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormReport {
    pub mean_h_norm: f64,
    pub mean_z_norm: f64,
    pub plsm_weight_norm: f64,
    pub baseline_weight_norm: f64,
    /// `mean ||h|| / mean ||z||`.
    pub h_over_z: f64,
    /// Ratio of first dynamics-layer Frobenius norms, plsm over baseline.
    pub weight_ratio: f64,
}

fn mean_row_norm(t: &Tensor) -> f64 {
    (0..t.rows()).map(|i| norm(t.row(i))).sum::<f64>() / t.rows() as f64
}

/// Query norms of `plsm` against latent norms of `baseline` on the same
/// transitions, plus their first dynamics-layer weight norms.
pub fn norm_diagnostics(plsm: &WorldModel, baseline: &WorldModel, dataset: &TransitionDataset) -> Result<NormReport> {
    check_widths(plsm, dataset)?;
    check_widths(baseline, dataset)?;
    let idx = dataset.transition_index();
    if idx.is_empty() {
        return Err(EvalError::Empty);
    }
    let obs = dataset.gather_observations(&idx);
    let actions = dataset.gather_actions(&idx);
    let h = plsm.query(&plsm.encode(&obs)?, &actions)?;
    let z = baseline.encode(&obs)?;
    let (mean_h_norm, mean_z_norm) = (mean_row_norm(&h), mean_row_norm(&z));
    let plsm_weight_norm = plsm.first_dynamics_weight().frobenius_norm();
    let baseline_weight_norm = baseline.first_dynamics_weight().frobenius_norm();
    Ok(NormReport {
        mean_h_norm,
        mean_z_norm,
        plsm_weight_norm,
        baseline_weight_norm,
        h_over_z: mean_h_norm / mean_z_norm,
        weight_ratio: plsm_weight_norm / baseline_weight_norm,
    })
}

/// Linear map fitted by ridge regression on centred data. The intercept
/// is not penalised.
#[derive(Debug, Clone, PartialEq)]
pub struct Ridge {
    /// `[features, targets]`.
    pub weights: DMatrix<f64>,
    pub intercept: DVector<f64>,
}

fn to_matrix(t: &Tensor) -> DMatrix<f64> {
    DMatrix::from_row_slice(t.rows(), t.cols(), t.data())
}

fn column_means(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.mean()))
}

fn centred(m: &DMatrix<f64>, means: &DVector<f64>) -> DMatrix<f64> {
    let mut c = m.clone();
    for (j, mut col) in c.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[j]);
    }
    c
}

impl Ridge {
    /// Solves `(XᵀX + αI) W = Xᵀy` on centred `x`, `y`.
    pub fn fit(x: &Tensor, y: &Tensor, alpha: f64) -> Result<Self> {
        if x.rows() != y.rows() || x.rows() == 0 {
            return Err(EvalError::Probe(format!(
                "features have {} rows, targets {}",
                x.rows(),
                y.rows()
            )));
        }
        let (xm, ym) = (to_matrix(x), to_matrix(y));
        let (mx, my) = (column_means(&xm), column_means(&ym));
        let (xc, yc) = (centred(&xm, &mx), centred(&ym, &my));
        let mut gram = xc.transpose() * &xc;
        for i in 0..gram.nrows() {
            gram[(i, i)] += alpha;
        }
        let rhs = xc.transpose() * yc;
        let weights = match gram.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => gram
                .lu()
                .solve(&rhs)
                .ok_or_else(|| EvalError::Probe("singular normal equations".into()))?,
        };
        let intercept = my - weights.transpose() * mx;
        Ok(Self { weights, intercept })
    }

    pub fn predict(&self, x: &Tensor) -> DMatrix<f64> {
        let mut out = to_matrix(x) * &self.weights;
        for mut row in out.row_iter_mut() {
            row += self.intercept.transpose();
        }
        out
    }
}

/// Mean over target columns of `1 − SSE / SST`, with SST taken around the
/// evaluation targets' own mean. Constant targets score 0.
pub fn r_squared(pred: &DMatrix<f64>, y: &Tensor) -> f64 {
    let ym = to_matrix(y);
    let cols = ym.ncols();
    (0..cols)
        .map(|j| {
            let col = ym.column(j);
            let mean = col.mean();
            let sst: f64 = col.iter().map(|v| (v - mean).powi(2)).sum();
            let sse: f64 = col.iter().zip(pred.column(j).iter()).map(|(a, b)| (a - b).powi(2)).sum();
            if sst > 0.0 {
                1.0 - sse / sst
            } else {
                0.0
            }
        })
        .sum::<f64>()
        / cols as f64
}

/// Fits on the first 80% of rows and returns R² on the rest.
pub fn holdout_r2(x: &Tensor, y: &Tensor, alpha: f64) -> Result<f64> {
    let n = x.rows();
    let cut = n * 4 / 5;
    if cut < 2 || cut == n {
        return Err(EvalError::Probe(format!("{n} samples are too few for an 80/20 split")));
    }
    let train: Vec<usize> = (0..cut).collect();
    let test: Vec<usize> = (cut..n).collect();
    let ridge = Ridge::fit(&x.select_rows(&train), &y.select_rows(&train), alpha)?;
    let yt = y.select_rows(&test);
    Ok(r_squared(&ridge.predict(&x.select_rows(&test)), &yt))
}

/// Which representation a probe reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeSource {
    Latent,
    Query,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectProbe {
    pub object: usize,
    pub r2_latent: f64,
    pub r2_query: f64,
    pub r2_query_conditioned: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    /// Decoding every present object's (row, column) from `z`.
    pub r2_latent: f64,
    /// Same targets from `h` over all transitions.
    pub r2_query: f64,
    /// Mean over objects of the per-object conditioned and unconditioned
    /// query scores.
    pub r2_query_conditioned: f64,
    pub r2_query_object: f64,
    pub objects: Vec<ObjectProbe>,
}

/// Ridge decoding probe: from `source` over transitions whose action
/// addresses `condition` (all transitions if `None`) to the positions of
/// `objects`. Returns held-out R².
pub fn decode_probe(
    model: &WorldModel,
    dataset: &TransitionDataset,
    source: ProbeSource,
    objects: &[usize],
    condition: Option<usize>,
) -> Result<f64> {
    check_widths(model, dataset)?;
    let idx: Vec<(usize, usize)> = dataset
        .transition_index()
        .into_iter()
        .filter(|&(e, t)| condition.is_none_or(|o| dataset.action_object(dataset.action_index(e, t)) == o))
        .collect();
    if idx.is_empty() {
        return Err(EvalError::Empty);
    }
    let z = model.encode(&dataset.gather_observations(&idx))?;
    let x = match source {
        ProbeSource::Latent => z,
        ProbeSource::Query => model.query(&z, &dataset.gather_actions(&idx))?,
    };
    let mut y = Vec::with_capacity(idx.len() * objects.len() * 2);
    for &(e, t) in &idx {
        let state = dataset.state(e, t);
        for &o in objects {
            let (r, c) = *state
                .positions
                .get(o)
                .ok_or_else(|| EvalError::Probe(format!("object {o} absent at episode {e}, step {t}")))?;
            y.extend([r as f64, c as f64]);
        }
    }
    let y = Tensor::raw(vec![idx.len(), objects.len() * 2], y);
    holdout_r2(&x, &y, PROBE_ALPHA)
}

/// The full probe panel over every present object.
pub fn probe_report(model: &WorldModel, dataset: &TransitionDataset) -> Result<ProbeReport> {
    let all: Vec<usize> = (0..dataset.config.present()).collect();
    let r2_latent = decode_probe(model, dataset, ProbeSource::Latent, &all, None)?;
    let r2_query = decode_probe(model, dataset, ProbeSource::Query, &all, None)?;
    let objects = all
        .iter()
        .map(|&o| {
            Ok(ObjectProbe {
                object: o,
                r2_latent: decode_probe(model, dataset, ProbeSource::Latent, &[o], None)?,
                r2_query: decode_probe(model, dataset, ProbeSource::Query, &[o], None)?,
                r2_query_conditioned: decode_probe(model, dataset, ProbeSource::Query, &[o], Some(o))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let k = objects.len() as f64;
    Ok(ProbeReport {
        r2_latent,
        r2_query,
        r2_query_conditioned: objects.iter().map(|o| o.r2_query_conditioned).sum::<f64>() / k,
        r2_query_object: objects.iter().map(|o| o.r2_query).sum::<f64>() / k,
        objects,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapseReport {
    pub per_dim_variance: Vec<f64>,
    pub mean_variance: f64,
}

/// Population variance of each latent dimension over all observations.
pub fn collapse_metric(model: &WorldModel, dataset: &TransitionDataset) -> Result<CollapseReport> {
    if model.obs_dim() != dataset.obs_dim() {
        return Err(EvalError::WidthMismatch {
            what: "observation",
            model: model.obs_dim(),
            dataset: dataset.obs_dim(),
        });
    }
    let idx: Vec<(usize, usize)> = (0..dataset.episodes())
        .flat_map(|e| (0..dataset.episode_length()).map(move |t| (e, t)))
        .collect();
    let z = model.encode(&dataset.gather_observations(&idx))?;
    Ok(latent_variance(&z))
}

pub fn latent_variance(z: &Tensor) -> CollapseReport {
    let (n, d) = (z.rows() as f64, z.cols());
    let per_dim_variance: Vec<f64> = (0..d)
        .map(|j| {
            let mean = (0..z.rows()).map(|i| z.row(i)[j]).sum::<f64>() / n;
            (0..z.rows()).map(|i| (z.row(i)[j] - mean).powi(2)).sum::<f64>() / n
        })
        .collect();
    let mean_variance = per_dim_variance.iter().sum::<f64>() / d as f64;
    CollapseReport {
        per_dim_variance,
        mean_variance,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn identical_predictions_hit_only_the_first_reference() {
        let pred = t(&[vec![0.0], vec![0.0], vec![0.0], vec![0.0]]);
        let refs = t(&[vec![1.0], vec![2.0], vec![3.0], vec![4.0]]);
        assert_eq!(rank1_accuracy(&pred, &refs), 0.25);
        // Exact ties resolve to the lowest index.
        let tie = t(&[vec![0.0], vec![0.0]]);
        assert_eq!(rank1_accuracy(&tie, &tie), 0.5);
        assert_eq!(rank1_accuracy(&refs, &refs), 1.0);
    }

    #[test]
    fn identical_deltas_form_one_cluster() {
        let d = t(&vec![vec![1.0, 2.0]; 6]);
        let r = cluster_deltas(&d, &[0, 1, 0, 1, 2, 2], 3, 0.05).unwrap();
        assert_eq!(r.marginal_count, 1);
        assert_eq!(r.per_action_counts, vec![1, 1, 1]);
        assert_eq!(r.empirical_mi, 0.0);
    }

    #[test]
    fn separated_groups_form_two_clusters() {
        let d = t(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![0.001, 0.0], vec![1.0, 0.001]]);
        let (labels, c) = cluster_points(&d, 0.05).unwrap();
        assert_eq!(labels, vec![0, 1, 0, 1]);
        assert_eq!(c.len(), 2);
        assert!(cluster_points(&d, 0.0).is_err());
        assert!(matches!(cluster_deltas(&Tensor::zeros(&[0, 2]), &[], 1, 0.1), Err(EvalError::Empty) | Err(EvalError::Tensor(_))));
    }

    #[test]
    fn mi_of_two_equiprobable_clusters_is_one_bit() {
        let actions = [0, 0, 1, 1];
        assert!((empirical_mi(&actions, &[0, 1, 2, 3]) - 1.0).abs() < 1e-15);
        assert_eq!(empirical_mi(&actions, &[0, 0, 1, 1]), 0.0);
    }

    #[test]
    fn ridge_on_three_points() {
        // x = [0, 1, 2], y = [1, 3, 4]: centred x = [-1, 0, 1], centred
        // y = [-5/3, 1/3, 4/3], so w = (Σ xc·yc) / (Σ xc² + α) = 3 / (2 + α).
        let x = t(&[vec![0.0], vec![1.0], vec![2.0]]);
        let y = t(&[vec![1.0], vec![3.0], vec![4.0]]);
        let alpha = 0.5;
        let r = Ridge::fit(&x, &y, alpha).unwrap();
        let w = 3.0 / (2.0 + alpha);
        assert!((r.weights[(0, 0)] - w).abs() < 1e-12);
        assert!((r.intercept[0] - (8.0 / 3.0 - w)).abs() < 1e-12);
    }

    #[test]
    fn realizable_and_noise_targets() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let n = 500;
        let x: Vec<f64> = (0..n * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = Tensor::raw(vec![n, 4], x);
        let lin: Vec<f64> = (0..n).map(|i| 2.0 * x.row(i)[0] - x.row(i)[3] + 0.5).collect();
        assert!(holdout_r2(&x, &Tensor::raw(vec![n, 1], lin), PROBE_ALPHA).unwrap() >= 0.999);
        let noise: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        assert!(holdout_r2(&x, &Tensor::raw(vec![n, 1], noise), PROBE_ALPHA).unwrap() <= 0.05);
    }

    #[test]
    fn variance_of_constant_and_spread_latents() {
        assert_eq!(latent_variance(&t(&vec![vec![1.0, 2.0]; 5])).mean_variance, 0.0);
        let v = latent_variance(&t(&[vec![0.0], vec![2.0]]));
        assert_eq!(v.per_dim_variance, vec![1.0]);
    }

    #[test]
    fn hits_csv_rows() {
        let r = HitsResult {
            accuracy: [(1, 1.0), (10, 0.5)].into_iter().collect(),
            reference_size: 4,
        };
        assert_eq!(r.to_csv(), "horizon,accuracy,reference_size\n1,1,4\n10,0.5,4\n");
    }

    proptest! {
        #[test]
        fn mi_is_bounded_by_marginal_entropy(
            pts in proptest::collection::vec((0usize..4, -1.0f64..1.0, -1.0f64..1.0), 1..60),
            eps in 0.01f64..0.5,
        ) {
            let actions: Vec<usize> = pts.iter().map(|p| p.0).collect();
            let d = Tensor::raw(vec![pts.len(), 2], pts.iter().flat_map(|p| [p.1, p.2]).collect());
            let r = cluster_deltas(&d, &actions, 4, eps).unwrap();
            prop_assert!(r.empirical_mi >= 0.0);
            prop_assert!(r.empirical_mi <= (r.marginal_count as f64).log2() + 1e-12);
            prop_assert!(r.marginal_count >= r.max_per_action());
            prop_assert_eq!(&r, &cluster_deltas(&d, &actions, 4, eps).unwrap());
        }

        #[test]
        fn every_point_lies_within_epsilon_of_its_centroid(
            pts in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..60),
            eps in 0.01f64..0.5,
        ) {
            let d = Tensor::raw(vec![pts.len(), 2], pts.iter().flat_map(|p| [p.0, p.1]).collect());
            let (labels, cents) = cluster_points(&d, eps).unwrap();
            for (i, &l) in labels.iter().enumerate() {
                prop_assert!(sqdist(d.row(i), &cents[l]) <= eps * eps);
                // First fit: no earlier centroid would have accepted the point.
                for c in &cents[..l] {
                    prop_assert!(sqdist(d.row(i), c) > eps * eps);
                }
            }
        }
    }
}
