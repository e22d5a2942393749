//! Experiment configs are TOML with flat dotted keys. Resolving derives
//! every component seed from the root seed; the resolved copy is what
//! runs write next to their outputs.

use plsm_lab::config::ExperimentConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let text = r#"
seed = 7
env.kind = "heart"
env.num_objects = 1
model.variant = "plsm"
train.beta = 0.1
train.epochs = 20
"#;
    let resolved = ExperimentConfig::from_toml(text)?.resolve()?;
    println!("{}", resolved.to_toml()?);

    match ExperimentConfig::from_toml("train.betta = 0.1\n") {
        Ok(_) => unreachable!("unknown keys are rejected"),
        Err(e) => println!("rejected: {e}"),
    }
    Ok(())
}
