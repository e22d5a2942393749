//! Command-line driver.
//!
//! Exit codes: 0 success, 1 configuration error, 2 runtime failure,
//! 3 a suite threshold failed.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig, OUT_ENV};
use crate::envs::{corrupt, generate_dataset, load_dataset, save_dataset, EnvError, EnvKind, TransitionDataset};
use crate::eval::{self, EvalError};
use crate::model::{ModelError, Variant, WorldModel};
use crate::rng::substream_seed;
use crate::suite::{to_json, write_file, Lab, SuiteError, SUITES};
use crate::training::{train, TrainError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
    #[error("{0}")]
    Threshold(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
            CliError::Threshold(_) => 3,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Read { .. } => CliError::Runtime(e.to_string()),
            e => CliError::Config(e.to_string()),
        }
    }
}

impl From<EnvError> for CliError {
    fn from(e: EnvError) -> Self {
        match e {
            EnvError::InvalidConfig { .. } | EnvError::ImpossiblePlacement { .. } => CliError::Config(e.to_string()),
            e => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(_) | ModelError::Width { .. } => CliError::Config(e.to_string()),
            e => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Model(m) => m.into(),
            TrainError::Config(_) | TrainError::BatchTooSmall(_) | TrainError::WidthMismatch { .. } => {
                CliError::Config(e.to_string())
            }
            e => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Model(m) => m.into(),
            EvalError::WidthMismatch { .. } | EvalError::Horizon { .. } | EvalError::Epsilon(_) => {
                CliError::Config(e.to_string())
            }
            e => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<SuiteError> for CliError {
    fn from(e: SuiteError) -> Self {
        match e {
            SuiteError::Config(c) => c.into(),
            SuiteError::Env(c) => c.into(),
            SuiteError::Model(c) => c.into(),
            SuiteError::Train(c) => c.into(),
            SuiteError::Eval(c) => c.into(),
            SuiteError::UnknownSuite(_) => CliError::Config(e.to_string()),
            SuiteError::Io { .. } => CliError::Runtime(e.to_string()),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

/// Parsimonious latent-space world-model laboratory.
#[derive(Debug, Parser)]
#[command(name = "plsm-lab", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a transition dataset.
    Generate(GenerateArgs),
    /// Train a model on a dataset file.
    Train(TrainArgs),
    /// Multi-step Hits@1 of a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Norm, cluster, probe and collapse diagnostics.
    Diagnose {
        #[command(subcommand)]
        what: Diagnose,
    },
    /// Run a named study bundle (or `all`).
    Suite(SuiteArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML experiment config; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output location; defaults to $PLSM_LAB_OUT, then `output.dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub env: Option<String>,
    #[arg(long)]
    pub objects: Option<usize>,
    /// Objects actually placed (fewer than `--objects` for generalization sets).
    #[arg(long)]
    pub present: Option<usize>,
    #[arg(long)]
    pub grid: Option<usize>,
    /// Observations per episode.
    #[arg(long)]
    pub length: Option<usize>,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ModelFlags {
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub margin: Option<f64>,
    #[arg(long = "topk-k")]
    pub topk_k: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long = "batch-size")]
    pub batch_size: Option<usize>,
    #[arg(long = "lr")]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub latent: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub dataset: PathBuf,
    #[command(flatten)]
    pub flags: ModelFlags,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Comma-separated prediction horizons.
    #[arg(long, value_delimiter = ',')]
    pub horizons: Option<Vec<usize>>,
    /// Gaussian noise σ applied to the observations before evaluation.
    #[arg(long)]
    pub noise: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Diagnose {
    /// Query norms of a plsm checkpoint against latent norms of a baseline.
    Norm {
        #[arg(long)]
        plsm: PathBuf,
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Delta clusters and empirical mutual information.
    Cluster {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = eval::DEFAULT_EPSILON)]
        epsilon: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Ridge decoding of object positions from latent and query states.
    Probe {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-dimension latent variance.
    Collapse {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct SuiteArgs {
    #[command(flatten)]
    pub common: Common,
    /// One of fig2, appendixB, appendixC, appendixD, generalization,
    /// robustness, probes, collapse, all.
    pub name: String,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',', default_values_t = crate::suite::DEFAULT_SEEDS)]
    pub seeds: Vec<u64>,
}

fn out_root(flag: Option<&Path>, config: &ExperimentConfig) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    match std::env::var_os(OUT_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => config.output.dir.clone(),
    }
}

fn base_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    Ok(match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    })
}

fn load_data(path: &Path) -> Result<TransitionDataset> {
    if !path.exists() {
        return Err(CliError::Runtime(format!("dataset {} does not exist", path.display())));
    }
    Ok(load_dataset(path)?)
}

fn load_model(path: &Path) -> Result<WorldModel> {
    if !path.exists() {
        return Err(CliError::Runtime(format!("checkpoint {} does not exist", path.display())));
    }
    Ok(WorldModel::load(path)?.0)
}

fn check_action_width(model: &WorldModel, data: &TransitionDataset) -> Result<()> {
    if model.action_dim() != data.action_dim() || model.obs_dim() != data.obs_dim() {
        return Err(CliError::Config(format!(
            "checkpoint expects action width {} and observation width {}, dataset has action width {} and observation width {}",
            model.action_dim(),
            model.obs_dim(),
            data.action_dim(),
            data.obs_dim()
        )));
    }
    Ok(())
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    write_file(path, contents).map_err(CliError::from)
}

fn cmd_generate(a: GenerateArgs) -> Result<()> {
    let mut c = base_config(a.common.config.as_deref())?;
    if let Some(kind) = &a.env {
        let kind: EnvKind = kind.parse()?;
        let k = c.env.num_objects;
        c.env = match kind {
            EnvKind::Heart => crate::envs::EnvConfig::heart(),
            EnvKind::Wall => crate::envs::EnvConfig::wall(),
            EnvKind::Shapes => crate::envs::EnvConfig::shapes(k),
        };
    }
    if let Some(k) = a.objects {
        c.env.num_objects = k;
    }
    c.env.present_objects = a.present.or(c.env.present_objects);
    if let Some(n) = a.grid {
        c.env.grid_size = n;
    }
    if let Some(t) = a.length {
        c.env.episode_length = t;
    }
    if let Some(e) = a.episodes {
        c.data.train_episodes = e;
    }
    if let Some(s) = a.seed {
        c.seed = s;
    }
    let c = c.resolve()?;
    let path = match &a.common.out {
        Some(p) => p.clone(),
        None => out_root(None, &c).join("datasets").join(format!(
            "{}-k{}-seed{}.plsm",
            c.env.kind.name(),
            c.env.present(),
            c.seed
        )),
    };
    let data = generate_dataset(&c.env, c.data.train_episodes)?;
    save_dataset(&data, &path)?;
    let sidecar = serde_json::json!({
        "format_version": crate::container::FORMAT_VERSION,
        "seed": c.seed,
        "episodes": c.data.train_episodes,
        "env": c.env,
    });
    write(&path.with_extension("json"), to_json(&sidecar))?;
    println!("{}", path.display());
    Ok(())
}

fn apply_flags(c: &mut ExperimentConfig, f: &ModelFlags) -> Result<()> {
    if let Some(v) = &f.variant {
        c.model.variant = v.parse::<Variant>()?;
    }
    if let Some(b) = f.beta {
        c.train.beta = b;
    }
    if let Some(m) = f.margin {
        c.train.margin = m;
    }
    if let Some(k) = f.topk_k {
        c.model.topk_k = k;
    }
    if let Some(e) = f.epochs {
        c.train.epochs = e;
    }
    if let Some(b) = f.batch_size {
        c.train.batch_size = b;
    }
    if let Some(lr) = f.learning_rate {
        c.train.learning_rate = lr;
    }
    if let Some(h) = f.hidden {
        c.model.hidden_units = h;
    }
    if let Some(z) = f.latent {
        c.model.latent_dim = z;
        c.model.query_dim = z;
    }
    if let Some(s) = f.seed {
        c.seed = s;
    }
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut c = base_config(a.common.config.as_deref())?;
    apply_flags(&mut c, &a.flags)?;
    let data = load_data(&a.dataset)?;
    c.env = data.config.clone();
    c.data.train_episodes = data.episodes();
    let mut c = c.resolve()?;
    // The dataset file fixes the environment, including its seed.
    c.env = data.config.clone();
    let dir = out_root(a.common.out.as_deref(), &c)
        .join("train")
        .join(format!("{}-seed{}", c.model.variant, c.seed));
    let mut model = WorldModel::new(c.model.clone(), data.obs_dim(), data.action_dim(), c.seed)?;
    write(&dir.join("config.toml"), c.to_toml()?)?;
    let metrics = train(&mut model, &data, &c.train)?;
    model.save(dir.join("checkpoint.plsm"), serde_json::to_value(&c).expect("config serialises"))?;
    write(&dir.join("metrics.csv"), metrics.to_csv())?;
    let mut summary = metrics.summary();
    summary["format_version"] = crate::container::FORMAT_VERSION.into();
    summary["dataset"] = a.dataset.display().to_string().into();
    write(&dir.join("summary.json"), to_json(&summary))?;
    println!("{}", dir.display());
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let mut c = base_config(a.common.config.as_deref())?;
    let model = load_model(&a.checkpoint)?;
    let mut data = load_data(&a.dataset)?;
    check_action_width(&model, &data)?;
    if let Some(h) = a.horizons {
        c.eval.horizons = h;
    }
    if let Some(n) = a.noise {
        c.eval.noise = n;
    }
    c.data.eval_steps = data.episode_length() - 1;
    c.env = data.config.clone();
    c.model = model.config().clone();
    let c = c.resolve()?;
    if c.eval.noise > 0.0 {
        data = corrupt(&data, c.eval.noise, substream_seed(c.seed, "noise"))?;
    }
    let hits = eval::hits_at_1(&model, &data, &c.eval.horizons)?;
    let dir = match a.common.out {
        Some(d) => d,
        None => match std::env::var_os(OUT_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v).join("eval"),
            _ => a.checkpoint.parent().unwrap_or(Path::new(".")).join("eval"),
        },
    };
    write(&dir.join("config.toml"), c.to_toml()?)?;
    write(&dir.join("hits.json"), to_json(&hits))?;
    write(&dir.join("hits.csv"), hits.to_csv())?;
    print!("{}", hits.to_csv());
    Ok(())
}

fn emit<T: serde::Serialize>(value: &T, out: Option<PathBuf>, name: &str) -> Result<()> {
    let text = to_json(value);
    if let Some(dir) = out {
        write(&dir.join(name), &text)?;
    }
    print!("{text}");
    Ok(())
}

fn cmd_diagnose(d: Diagnose) -> Result<()> {
    match d {
        Diagnose::Norm {
            plsm,
            baseline,
            dataset,
            out,
        } => {
            let (p, b, data) = (load_model(&plsm)?, load_model(&baseline)?, load_data(&dataset)?);
            check_action_width(&p, &data)?;
            check_action_width(&b, &data)?;
            emit(&eval::norm_diagnostics(&p, &b, &data)?, out, "norms.json")
        }
        Diagnose::Cluster {
            checkpoint,
            dataset,
            epsilon,
            out,
        } => {
            let (m, data) = (load_model(&checkpoint)?, load_data(&dataset)?);
            check_action_width(&m, &data)?;
            emit(&eval::delta_clusters(&m, &data, epsilon)?, out, "clusters.json")
        }
        Diagnose::Probe { checkpoint, dataset, out } => {
            let (m, data) = (load_model(&checkpoint)?, load_data(&dataset)?);
            check_action_width(&m, &data)?;
            emit(&eval::probe_report(&m, &data)?, out, "probe.json")
        }
        Diagnose::Collapse { checkpoint, dataset, out } => {
            let (m, data) = (load_model(&checkpoint)?, load_data(&dataset)?);
            check_action_width(&m, &data)?;
            emit(&eval::collapse_metric(&m, &data)?, out, "collapse.json")
        }
    }
}

fn cmd_suite(a: SuiteArgs) -> Result<()> {
    let names: Vec<&str> = if a.name == "all" {
        SUITES.to_vec()
    } else if SUITES.contains(&a.name.as_str()) {
        vec![a.name.as_str()]
    } else {
        return Err(CliError::Config(format!(
            "unknown suite {:?}; expected one of {} or all",
            a.name,
            SUITES.join(", ")
        )));
    };
    let base = base_config(a.common.config.as_deref())?;
    let root = out_root(a.common.out.as_deref(), &base);
    let mut lab = Lab::new(&root).with_seeds(&a.seeds).verbose(true);
    if a.common.config.is_some() {
        base.validate()?;
        lab = lab.with_base(base);
    }
    let mut failed = Vec::new();
    for name in names {
        let report = lab.run(name)?;
        print!("{}", report.summary());
        if !report.passed() {
            failed.push(name);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Threshold(format!("thresholds failed in: {}", failed.join(", "))))
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Diagnose { what } => cmd_diagnose(what),
        Command::Suite(a) => cmd_suite(a),
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
