//! Experiment cells and the named study bundles.
//!
//! A *cell* is one trained model: an [`ExperimentConfig`] taken through
//! dataset generation, training and in-distribution evaluation, with its
//! artifacts written to `cells/<env>-<variant>-beta<β>-seed<s>/` under the
//! lab's output root. A [`Lab`] memoises cells so that bundles sharing a
//! configuration train it once.
//!
//! Each bundle writes `<root>/<suite>/comparison.csv` and `report.json`
//! and returns a [`SuiteReport`] whose checks encode the pass/fail
//! thresholds of that study.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig};
use crate::envs::{corrupt, generate_dataset, EnvConfig, EnvError, EnvKind, TransitionDataset};
use crate::eval::{self, ClusterReport, EvalError, HitsResult, NormReport, ProbeReport};
use crate::model::{ModelError, Variant, WorldModel};
use crate::rng::substream_seed;
use crate::training::{train, MetricsRecord, TrainError};

#[derive(Debug, Error)]
pub enum SuiteError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("unknown suite {0:?}")]
    UnknownSuite(String),
}

pub type Result<T> = std::result::Result<T, SuiteError>;

pub(crate) fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    let io = |source| SuiteError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io)?;
    }
    std::fs::write(path, contents).map_err(io)
}

pub(crate) fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialise");
    s.push('\n');
    s
}

/// Named bundles, in the order `suite all` runs them.
pub const SUITES: [&str; 8] = [
    "fig2",
    "appendixB",
    "appendixC",
    "appendixD",
    "generalization",
    "robustness",
    "probes",
    "collapse",
];

/// Seeds every bundle averages over.
pub const DEFAULT_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
/// `topk` setting of the ablation bundle.
pub const ABLATION_TOPK: usize = 15;
/// β of the degenerate `spr` configuration.
pub const COLLAPSE_BETA: f64 = 1e3;

/// One pass/fail threshold of a bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub criterion: u8,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(criterion: u8, name: &str, passed: bool, detail: String) -> Self {
        Self {
            criterion,
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.join(","));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: String,
    pub seeds: Vec<u64>,
    pub table: Table,
    pub checks: Vec<Check>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let tag = if c.passed { "PASS" } else { "FAIL" };
            writeln!(out, "[{tag}] criterion {} {}: {}", c.criterion, c.name, c.detail).unwrap();
        }
        out
    }
}

/// A trained model with its configuration and in-distribution scores.
#[derive(Debug, Clone)]
pub struct Cell {
    pub config: ExperimentConfig,
    pub model: WorldModel,
    pub metrics: MetricsRecord,
    pub hits: HitsResult,
    pub dir: PathBuf,
}

impl Cell {
    pub fn eval_dataset(&self) -> Result<TransitionDataset> {
        Ok(self.config.eval_dataset()?)
    }
}

/// Trains `config` and writes `config.toml`, `checkpoint.plsm`,
/// `metrics.csv`, `summary.json`, `hits.json` and `hits.csv` into `dir`.
pub fn run_cell(config: &ExperimentConfig, dir: &Path) -> Result<Cell> {
    let config = config.clone().resolve()?;
    write_file(&dir.join("config.toml"), config.to_toml()?)?;
    let data = config.train_dataset()?;
    let mut model = WorldModel::new(config.model.clone(), data.obs_dim(), data.action_dim(), config.seed)?;
    let metrics = train(&mut model, &data, &config.train)?;
    let mut eval_data = config.eval_dataset()?;
    if config.eval.noise > 0.0 {
        eval_data = corrupt(&eval_data, config.eval.noise, substream_seed(config.seed, "noise"))?;
    }
    let hits = eval::hits_at_1(&model, &eval_data, &config.eval.horizons)?;
    let echo = serde_json::to_value(&config).expect("config serialises");
    model.save(dir.join("checkpoint.plsm"), echo)?;
    write_file(&dir.join("metrics.csv"), metrics.to_csv())?;
    let mut summary = metrics.summary();
    summary["format_version"] = crate::container::FORMAT_VERSION.into();
    summary["hits"] = serde_json::to_value(&hits).expect("hits serialise");
    write_file(&dir.join("summary.json"), to_json(&summary))?;
    write_file(&dir.join("hits.json"), to_json(&hits))?;
    write_file(&dir.join("hits.csv"), hits.to_csv())?;
    Ok(Cell {
        config,
        model,
        metrics,
        hits,
        dir: dir.to_path_buf(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct CellKey {
    env: EnvKind,
    variant: Variant,
    beta_bits: u64,
    seed: u64,
}

/// Memoising runner for cells and bundles.
#[derive(Debug)]
pub struct Lab {
    root: PathBuf,
    seeds: Vec<u64>,
    /// Base configuration per environment; variant, β and seed are set per cell.
    bases: BTreeMap<&'static str, ExperimentConfig>,
    cells: BTreeMap<CellKey, Arc<Cell>>,
    verbose: bool,
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

impl Lab {
    /// A lab with desk-scale defaults: heart `n = 8`, shapes `n = 5, k = 5`.
    pub fn new(root: impl Into<PathBuf>) -> Self {
        let heart = ExperimentConfig {
            env: EnvConfig::heart(),
            ..ExperimentConfig::default()
        };
        let shapes = ExperimentConfig {
            env: EnvConfig::shapes(5),
            ..ExperimentConfig::default()
        };
        Self {
            root: root.into(),
            seeds: DEFAULT_SEEDS.to_vec(),
            bases: [("heart", heart), ("shapes", shapes)].into_iter().collect(),
            cells: BTreeMap::new(),
            verbose: false,
        }
    }

    pub fn with_seeds(mut self, seeds: &[u64]) -> Self {
        self.seeds = seeds.to_vec();
        self
    }

    /// Replaces the base configuration used for cells on `env`.
    pub fn with_base(mut self, config: ExperimentConfig) -> Self {
        self.bases.insert(config.env.kind.name(), config);
        self
    }

    pub fn verbose(mut self, on: bool) -> Self {
        self.verbose = on;
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn seeds(&self) -> &[u64] {
        &self.seeds
    }

    pub fn base(&self, env: EnvKind) -> ExperimentConfig {
        self.bases
            .get(env.name())
            .cloned()
            .unwrap_or_else(|| ExperimentConfig {
                env: match env {
                    EnvKind::Heart => EnvConfig::heart(),
                    EnvKind::Wall => EnvConfig::wall(),
                    EnvKind::Shapes => EnvConfig::shapes(5),
                },
                ..ExperimentConfig::default()
            })
    }

    /// Trains (or recalls) the cell for `variant` on `env` with β and seed.
    pub fn cell(&mut self, env: EnvKind, variant: Variant, beta: f64, seed: u64) -> Result<Arc<Cell>> {
        let key = CellKey {
            env,
            variant,
            beta_bits: beta.to_bits(),
            seed,
        };
        if let Some(c) = self.cells.get(&key) {
            return Ok(Arc::clone(c));
        }
        let mut config = self.base(env);
        config.seed = seed;
        config.model.variant = variant;
        config.train.beta = beta;
        if variant == Variant::Topk {
            config.model.topk_k = ABLATION_TOPK.min(config.model.query_dim);
        }
        let dir = self
            .root
            .join("cells")
            .join(format!("{}-{}-beta{}-seed{}", env.name(), variant.name(), beta, seed));
        if self.verbose {
            eprintln!("training {}", dir.display());
        }
        let cell = Arc::new(run_cell(&config, &dir)?);
        self.cells.insert(key, Arc::clone(&cell));
        Ok(cell)
    }

    fn default_beta(&self, env: EnvKind) -> f64 {
        self.base(env).train.beta
    }

    fn shapes(&mut self, variant: Variant, seed: u64) -> Result<Arc<Cell>> {
        let beta = self.default_beta(EnvKind::Shapes);
        self.cell(EnvKind::Shapes, variant, beta, seed)
    }

    fn finish(&self, suite: &str, table: Table, checks: Vec<Check>) -> Result<SuiteReport> {
        let report = SuiteReport {
            suite: suite.to_string(),
            seeds: self.seeds.clone(),
            table,
            checks,
        };
        let dir = self.root.join(suite);
        write_file(&dir.join("comparison.csv"), report.table.to_csv())?;
        write_file(&dir.join("report.json"), to_json(&report))?;
        Ok(report)
    }

    pub fn run(&mut self, suite: &str) -> Result<SuiteReport> {
        match suite {
            "fig2" => self.fig2(),
            "appendixB" => self.appendix_b(),
            "appendixC" => self.appendix_c(),
            "appendixD" => self.appendix_d(),
            "generalization" => self.generalization(),
            "robustness" => self.robustness(),
            "probes" => self.probes(),
            "collapse" => self.collapse(),
            other => Err(SuiteError::UnknownSuite(other.to_string())),
        }
    }

    /// Delta clusters of plsm and cwm on the heart environment.
    pub fn fig2(&mut self) -> Result<SuiteReport> {
        let beta = self.default_beta(EnvKind::Heart);
        let mut table = Table::new(&["seed", "variant", "max_per_action", "marginal", "empirical_mi_bits"]);
        let mut per_seed: Vec<(ClusterReport, ClusterReport)> = Vec::new();
        for seed in self.seeds.clone() {
            let mut reports = Vec::new();
            for variant in [Variant::Plsm, Variant::Cwm] {
                let cell = self.cell(EnvKind::Heart, variant, beta, seed)?;
                let r = eval::delta_clusters(&cell.model, &cell.eval_dataset()?, cell.config.eval.epsilon)?;
                write_file(
                    &self.root.join("fig2").join(format!("clusters-{variant}-seed{seed}.json")),
                    to_json(&r),
                )?;
                table.push(vec![
                    seed.to_string(),
                    variant.to_string(),
                    r.max_per_action().to_string(),
                    r.marginal_count.to_string(),
                    r.empirical_mi.to_string(),
                ]);
                reports.push(r);
            }
            let cwm = reports.pop().expect("two reports");
            let plsm = reports.pop().expect("two reports");
            per_seed.push((plsm, cwm));
        }
        let n = per_seed.len();
        let compact = per_seed.iter().filter(|(p, _)| p.max_per_action() <= 3 && p.marginal_count <= 10).count();
        let more = per_seed.iter().filter(|(p, c)| c.marginal_count > p.marginal_count).count();
        let need = (4 * n).div_ceil(5);
        let lower_mi = per_seed.iter().filter(|(p, c)| p.empirical_mi < c.empirical_mi).count();
        let describe = |f: &dyn Fn(&(ClusterReport, ClusterReport)) -> String| {
            per_seed.iter().map(f).collect::<Vec<_>>().join(" ")
        };
        let checks = vec![
            Check::new(
                3,
                "plsm clusters compact",
                compact == n,
                format!(
                    "plsm (max per action, marginal) per seed: {}",
                    describe(&|(p, _)| format!("({},{})", p.max_per_action(), p.marginal_count))
                ),
            ),
            Check::new(
                3,
                "cwm marginal count larger",
                more >= need,
                format!(
                    "{more}/{n} seeds (need {need}); cwm marginal per seed: {}",
                    describe(&|(_, c)| c.marginal_count.to_string())
                ),
            ),
            Check::new(
                3,
                "plsm mutual information lower",
                lower_mi == n,
                format!(
                    "{lower_mi}/{n} seeds; (plsm, cwm) bits: {}",
                    describe(&|(p, c)| format!("({:.3},{:.3})", p.empirical_mi, c.empirical_mi))
                ),
            ),
        ];
        self.finish("fig2", table, checks)
    }

    fn hits_table(&mut self, variants: &[Variant]) -> Result<(Table, BTreeMap<Variant, Vec<HitsResult>>)> {
        let horizons = self.base(EnvKind::Shapes).eval.horizons;
        let mut cols = vec!["variant".to_string(), "seed".to_string()];
        cols.extend(horizons.iter().map(|h| format!("hits@1_h{h}")));
        let mut table = Table {
            columns: cols,
            rows: Vec::new(),
        };
        let mut all = BTreeMap::new();
        for &v in variants {
            for seed in self.seeds.clone() {
                let cell = self.shapes(v, seed)?;
                let mut row = vec![v.to_string(), seed.to_string()];
                row.extend(horizons.iter().map(|&h| cell.hits.at(h).unwrap_or(f64::NAN).to_string()));
                table.push(row);
                all.entry(v).or_insert_with(Vec::new).push(cell.hits.clone());
            }
            let mut row = vec![v.to_string(), "mean".to_string()];
            row.extend(horizons.iter().map(|&h| mean(all[&v].iter().map(|r| r.at(h).unwrap_or(f64::NAN))).to_string()));
            table.push(row);
        }
        Ok((table, all))
    }

    fn mean_at(hits: &[HitsResult], h: usize) -> f64 {
        mean(hits.iter().map(|r| r.at(h).unwrap_or(f64::NAN)))
    }

    /// Hits@1 of plsm against cwm and latent-regularised baselines.
    pub fn appendix_b(&mut self) -> Result<SuiteReport> {
        let (table, _) = self.hits_table(&[Variant::Plsm, Variant::Cwm, Variant::LatentL1, Variant::LatentL2])?;
        self.finish("appendixB", table, Vec::new())
    }

    /// Ablations of the query network.
    pub fn appendix_c(&mut self) -> Result<SuiteReport> {
        let (table, all) =
            self.hits_table(&[Variant::Plsm, Variant::NoQuery, Variant::Topk, Variant::WeightDecay])?;
        let h = self.longest_horizon();
        let m = |v: Variant| Self::mean_at(&all[&v], h);
        let (plsm, nq, tk, wd) = (m(Variant::Plsm), m(Variant::NoQuery), m(Variant::Topk), m(Variant::WeightDecay));
        let checks = vec![
            Check::new(7, "no_query below plsm", nq < plsm, format!("h{h}: no_query {nq:.4} vs plsm {plsm:.4}")),
            Check::new(
                7,
                "topk on par with plsm",
                (tk - plsm).abs() <= 0.05,
                format!("h{h}: topk {tk:.4} vs plsm {plsm:.4}"),
            ),
            Check::new(
                7,
                "weight_decay on par with plsm",
                (wd - plsm).abs() <= 0.05,
                format!("h{h}: weight_decay {wd:.4} vs plsm {plsm:.4}"),
            ),
        ];
        self.finish("appendixC", table, checks)
    }

    fn longest_horizon(&self) -> usize {
        self.base(EnvKind::Shapes).eval.horizons.iter().copied().max().unwrap_or(1)
    }

    /// Query norms of plsm against latent norms of cwm.
    pub fn appendix_d(&mut self) -> Result<SuiteReport> {
        let mut table = Table::new(&[
            "seed",
            "mean_h_norm",
            "mean_z_norm",
            "h_over_z",
            "plsm_weight_norm",
            "cwm_weight_norm",
            "weight_ratio",
        ]);
        let mut reports: Vec<NormReport> = Vec::new();
        for seed in self.seeds.clone() {
            let plsm = self.shapes(Variant::Plsm, seed)?;
            let cwm = self.shapes(Variant::Cwm, seed)?;
            let r = eval::norm_diagnostics(&plsm.model, &cwm.model, &plsm.eval_dataset()?)?;
            table.push(vec![
                seed.to_string(),
                r.mean_h_norm.to_string(),
                r.mean_z_norm.to_string(),
                r.h_over_z.to_string(),
                r.plsm_weight_norm.to_string(),
                r.baseline_weight_norm.to_string(),
                r.weight_ratio.to_string(),
            ]);
            reports.push(r);
        }
        let h = mean(reports.iter().map(|r| r.mean_h_norm));
        let z = mean(reports.iter().map(|r| r.mean_z_norm));
        let within = reports.iter().filter(|r| r.weight_ratio < 3.0 && r.weight_ratio > 1.0 / 3.0).count();
        let checks = vec![
            Check::new(
                8,
                "query norm two orders below latent norm",
                h < 0.01 * z,
                format!("mean ||h|| {h:.5} vs 0.01 x mean ||z|| {:.5}", 0.01 * z),
            ),
            Check::new(
                8,
                "first dynamics-layer norms comparable",
                within == reports.len(),
                format!(
                    "{within}/{} seeds within a factor of 3; ratios {}",
                    reports.len(),
                    reports.iter().map(|r| format!("{:.3}", r.weight_ratio)).collect::<Vec<_>>().join(" ")
                ),
            ),
        ];
        self.finish("appendixD", table, checks)
    }

    /// Trained on all objects, evaluated in distribution and on scenes with
    /// fewer objects present.
    pub fn generalization(&mut self) -> Result<SuiteReport> {
        let base = self.base(EnvKind::Shapes);
        let k_train = base.env.num_objects;
        let h = self.longest_horizon();
        let ks: Vec<usize> = [1, 2, 3].into_iter().filter(|&k| k < k_train).collect();
        let mut table = Table::new(&["variant", "seed", "k", "horizon", "hits@1"]);
        let mut acc: BTreeMap<(Variant, usize), Vec<f64>> = BTreeMap::new();
        let mut h1: Vec<f64> = Vec::new();
        for seed in self.seeds.clone() {
            for v in [Variant::Plsm, Variant::Cwm] {
                let cell = self.shapes(v, seed)?;
                let own = cell.hits.at(h).unwrap_or(f64::NAN);
                table.push(vec![v.to_string(), seed.to_string(), k_train.to_string(), h.to_string(), own.to_string()]);
                acc.entry((v, k_train)).or_default().push(own);
                if v == Variant::Plsm {
                    h1.push(cell.hits.at(1).unwrap_or(f64::NAN));
                }
                for &k in &ks {
                    let env = cell
                        .config
                        .eval_env()
                        .with_present(k)
                        .with_seed(substream_seed(cell.config.seed, &format!("data/eval/k{k}")));
                    let data = generate_dataset(&env, cell.config.data.eval_episodes)?;
                    let a = eval::hits_at_1(&cell.model, &data, &[h])?.at(h).unwrap_or(f64::NAN);
                    table.push(vec![v.to_string(), seed.to_string(), k.to_string(), h.to_string(), a.to_string()]);
                    acc.entry((v, k)).or_default().push(a);
                }
            }
        }
        let m = |v, k| mean(acc[&(v, k)].iter().copied());
        let (p, c) = (m(Variant::Plsm, k_train), m(Variant::Cwm, k_train));
        let h1_mean = mean(h1.iter().copied());
        let mut checks = vec![
            Check::new(4, "plsm long-horizon accuracy at least cwm", p >= c, format!("h{h}: plsm {p:.4} vs cwm {c:.4}")),
            Check::new(4, "plsm one-step accuracy", h1_mean >= 0.95, format!("h1: plsm {h1_mean:.4} (need 0.95)")),
        ];
        for &k in &ks {
            let (p, c) = (m(Variant::Plsm, k), m(Variant::Cwm, k));
            checks.push(Check::new(
                5,
                &format!("plsm at least cwm with {k} objects"),
                p >= c,
                format!("h{h}: plsm {p:.4} vs cwm {c:.4}"),
            ));
        }
        self.finish("generalization", table, checks)
    }

    /// Accuracy on evaluation data corrupted with Gaussian noise.
    pub fn robustness(&mut self) -> Result<SuiteReport> {
        let h = self.longest_horizon();
        let mut table = Table::new(&["variant", "seed", "sigma", "hits@1"]);
        let mut acc: BTreeMap<(Variant, u64), Vec<f64>> = BTreeMap::new();
        let sigmas = [0.1, 0.2];
        for seed in self.seeds.clone() {
            for v in [Variant::Plsm, Variant::Cwm] {
                let cell = self.shapes(v, seed)?;
                let clean = cell.eval_dataset()?;
                for &s in &sigmas {
                    let noisy = corrupt(&clean, s, substream_seed(cell.config.seed, &format!("noise/{s}")))?;
                    let a = eval::hits_at_1(&cell.model, &noisy, &[h])?.at(h).unwrap_or(f64::NAN);
                    table.push(vec![v.to_string(), seed.to_string(), s.to_string(), a.to_string()]);
                    acc.entry((v, s.to_bits())).or_default().push(a);
                }
            }
        }
        let checks = sigmas
            .iter()
            .map(|&s| {
                let p = mean(acc[&(Variant::Plsm, s.to_bits())].iter().copied());
                let c = mean(acc[&(Variant::Cwm, s.to_bits())].iter().copied());
                Check::new(6, &format!("plsm at least cwm at sigma {s}"), p >= c, format!("h{h}: plsm {p:.4} vs cwm {c:.4}"))
            })
            .collect();
        self.finish("robustness", table, checks)
    }

    /// Linear decoding of object positions from latent and query states.
    pub fn probes(&mut self) -> Result<SuiteReport> {
        let mut table = Table::new(&["seed", "r2_latent", "r2_query", "r2_query_object", "r2_query_conditioned"]);
        let mut reports: Vec<ProbeReport> = Vec::new();
        for seed in self.seeds.clone() {
            let cell = self.shapes(Variant::Plsm, seed)?;
            let r = eval::probe_report(&cell.model, &cell.eval_dataset()?)?;
            write_file(&self.root.join("probes").join(format!("probe-seed{seed}.json")), to_json(&r))?;
            table.push(vec![
                seed.to_string(),
                r.r2_latent.to_string(),
                r.r2_query.to_string(),
                r.r2_query_object.to_string(),
                r.r2_query_conditioned.to_string(),
            ]);
            reports.push(r);
        }
        let n = reports.len();
        let a = reports.iter().filter(|r| r.r2_latent > r.r2_query).count();
        let b = reports.iter().filter(|r| r.r2_query_conditioned > r.r2_query_object).count();
        let checks = vec![
            Check::new(9, "latent decodes positions better than query", 2 * a > n, format!("{a}/{n} seeds")),
            Check::new(
                9,
                "conditioned query decodes its object better",
                2 * b > n,
                format!("{b}/{n} seeds"),
            ),
        ];
        self.finish("probes", table, checks)
    }

    /// Latent variance of spr under the default and a degenerate β.
    pub fn collapse(&mut self) -> Result<SuiteReport> {
        let seed = self.seeds.first().copied().unwrap_or(0);
        let standard_beta = self.default_beta(EnvKind::Shapes);
        let mut table = Table::new(&["beta", "mean_latent_variance"]);
        let mut var = Vec::new();
        for beta in [standard_beta, COLLAPSE_BETA] {
            let cell = self.cell(EnvKind::Shapes, Variant::Spr, beta, seed)?;
            let r = eval::collapse_metric(&cell.model, &cell.eval_dataset()?)?;
            table.push(vec![beta.to_string(), r.mean_variance.to_string()]);
            var.push(r.mean_variance);
        }
        let checks = vec![
            Check::new(10, "degenerate spr collapses", var[1] < 1e-4, format!("beta {COLLAPSE_BETA}: {:.3e}", var[1])),
            Check::new(10, "standard spr keeps variance", var[0] > 1e-2, format!("beta {standard_beta}: {:.3e}", var[0])),
        ];
        self.finish("collapse", table, checks)
    }
}
