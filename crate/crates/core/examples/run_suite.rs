//! Runs a named study bundle at reduced size through the library. The
//! same bundles are available as `plsm-lab suite <name>`.

use plsm_lab::config::ExperimentConfig;
use plsm_lab::envs::EnvConfig;
use plsm_lab::suite::Lab;

fn reduced(env: EnvConfig) -> ExperimentConfig {
    let mut c = ExperimentConfig { env, ..ExperimentConfig::default() };
    c.train.epochs = 3;
    c.data.train_episodes = 200;
    c.data.eval_episodes = 100;
    c
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let name = std::env::args().nth(1).unwrap_or_else(|| "appendixD".to_string());
    let dir = tempfile::tempdir()?;
    let mut lab = Lab::new(dir.path())
        .with_seeds(&[0, 1])
        .with_base(reduced(EnvConfig::heart()))
        .with_base(reduced(EnvConfig::shapes(5)));
    let report = lab.run(&name)?;
    println!("{}", report.table.to_csv());
    print!("{}", report.summary());
    println!("artifacts under {}", dir.path().display());
    Ok(())
}
