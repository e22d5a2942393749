use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_plsm-lab"));
    c.env_remove("PLSM_LAB_OUT");
    c
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn generate(out: &Path, extra: &[&str]) -> Output {
    let mut c = bin();
    c.args(["generate", "--episodes", "20", "--out"]).arg(out).args(extra);
    run(&mut c)
}

fn tiny_config(dir: &Path) -> PathBuf {
    let path = dir.join("tiny.toml");
    std::fs::write(
        &path,
        "seed = 0\n\
         env.kind = \"shapes\"\n\
         env.num_objects = 3\n\
         model.hidden_units = 8\n\
         model.latent_dim = 4\n\
         model.query_dim = 4\n\
         train.epochs = 1\n\
         train.batch_size = 16\n\
         data.train_episodes = 10\n\
         data.eval_episodes = 10\n",
    )
    .unwrap();
    path
}

#[test]
fn generate_is_deterministic_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.plsm"), dir.path().join("b.plsm"));
    assert!(generate(&a, &["--seed", "5"]).status.success());
    assert!(generate(&b, &["--seed", "5"]).status.success());
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert!(a.with_extension("json").exists());
    let c = dir.path().join("c.plsm");
    assert!(generate(&c, &["--seed", "6"]).status.success());
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
}

#[test]
fn unknown_environment_is_a_config_error_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let o = generate(&dir.path().join("x.plsm"), &["--env", "maze"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("env.kind"), "{}", stderr(&o));
}

#[test]
fn bad_flags_and_unknown_config_keys_exit_one() {
    assert_eq!(run(bin().args(["train", "--no-such-flag"])).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "train.betta = 0.2\n").unwrap();
    let o = run(bin().args(["generate", "--config"]).arg(&cfg));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("betta"), "{}", stderr(&o));
    assert_eq!(run(bin().arg("--help")).status.code(), Some(0));
}

#[test]
fn missing_dataset_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(bin().args(["train", "--dataset"]).arg(dir.path().join("absent.plsm")).arg("--out").arg(dir.path()));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("does not exist"));
}

#[test]
fn train_eval_and_diagnose_round_trip_with_width_checks() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("s3.plsm");
    assert!(generate(&data, &["--objects", "3"]).status.success());
    let o = run(bin()
        .args(["train", "--dataset"])
        .arg(&data)
        .args(["--variant", "plsm", "--epochs", "2", "--hidden", "8", "--latent", "4", "--batch-size", "32", "--out"])
        .arg(dir.path()));
    assert!(o.status.success(), "{}", stderr(&o));
    let run_dir = dir.path().join("train/plsm-seed0");
    for f in ["config.toml", "checkpoint.plsm", "metrics.csv", "summary.json"] {
        assert!(run_dir.join(f).exists(), "missing {f}");
    }
    let csv = std::fs::read_to_string(run_dir.join("metrics.csv")).unwrap();
    assert!(csv.starts_with("epoch,total,prediction,negative,penalty,decay"));
    assert_eq!(csv.lines().count(), 3);
    let resolved = std::fs::read_to_string(run_dir.join("config.toml")).unwrap();
    assert!(resolved.contains("beta = 0.1") && resolved.contains("format_version"));

    let ckpt = run_dir.join("checkpoint.plsm");
    let eval_dir = dir.path().join("eval");
    let o = run(bin().args(["eval", "--checkpoint"]).arg(&ckpt).arg("--dataset").arg(&data).args(["--horizons", "1,3"]).arg("--out").arg(&eval_dir));
    assert!(o.status.success(), "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.starts_with("horizon,accuracy,reference_size\n1,"), "{stdout}");
    assert!(eval_dir.join("hits.json").exists());

    // A five-object dataset has twenty action columns; the checkpoint has twelve.
    let wide = dir.path().join("s5.plsm");
    assert!(generate(&wide, &["--objects", "5"]).status.success());
    let o = run(bin().args(["eval", "--checkpoint"]).arg(&ckpt).arg("--dataset").arg(&wide).arg("--out").arg(&eval_dir));
    assert_eq!(o.status.code(), Some(1));
    let msg = stderr(&o);
    assert!(msg.contains("action width 12") && msg.contains("action width 20"), "{msg}");

    for what in ["cluster", "probe", "collapse"] {
        let o = run(bin().args(["diagnose", what, "--checkpoint"]).arg(&ckpt).arg("--dataset").arg(&data));
        assert!(o.status.success(), "{what}: {}", stderr(&o));
        serde_json::from_slice::<serde_json::Value>(&o.stdout).expect("json report");
    }
    let o = run(bin().args(["diagnose", "norm", "--plsm"]).arg(&ckpt).arg("--baseline").arg(&ckpt).arg("--dataset").arg(&data));
    let norms: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(norms["weight_ratio"], 1.0);
}

#[test]
fn output_root_comes_from_the_environment_unless_overridden() {
    let dir = tempfile::tempdir().unwrap();
    let env_root = dir.path().join("from-env");
    let o = run(bin().env("PLSM_LAB_OUT", &env_root).args(["generate", "--episodes", "5", "--seed", "2"]));
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(env_root.join("datasets/shapes-k5-seed2.plsm").exists());
    let flag = dir.path().join("flag.plsm");
    let o = run(bin().env("PLSM_LAB_OUT", &env_root).args(["generate", "--episodes", "5", "--seed", "3", "--out"]).arg(&flag));
    assert!(o.status.success());
    assert!(flag.exists());
    assert!(!env_root.join("datasets/shapes-k5-seed3.plsm").exists());
}

#[test]
fn suite_reruns_are_byte_identical_and_thresholds_set_the_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let roots = [dir.path().join("r1"), dir.path().join("r2")];
    for root in &roots {
        let o = run(bin().args(["suite", "collapse", "--seeds", "0", "--config"]).arg(&cfg).arg("--out").arg(root));
        // One epoch on ten episodes cannot meet the collapse thresholds.
        assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
        assert!(String::from_utf8_lossy(&o.stdout).contains("[FAIL] criterion 10"));
    }
    let files = |root: &Path| {
        let mut out = Vec::new();
        let mut stack = vec![root.to_path_buf()];
        while let Some(d) = stack.pop() {
            for e in std::fs::read_dir(&d).unwrap() {
                let p = e.unwrap().path();
                if p.is_dir() {
                    stack.push(p);
                } else {
                    out.push(p.strip_prefix(root).unwrap().to_path_buf());
                }
            }
        }
        out.sort();
        out
    };
    let listing = files(&roots[0]);
    assert_eq!(listing, files(&roots[1]));
    assert!(listing.iter().any(|p| p.ends_with("metrics.csv")));
    for rel in listing {
        assert_eq!(std::fs::read(roots[0].join(&rel)).unwrap(), std::fs::read(roots[1].join(&rel)).unwrap(), "{}", rel.display());
    }
    assert_eq!(run(bin().args(["suite", "fig9"])).status.code(), Some(1));
}
