//! The acceptance gate: one test per criterion, each printing a single
//! PASS/FAIL line to the real stdout (bypassing the test harness's capture)
//! so that the full table appears in `cargo test` output.
//!
//! Trained models are shared: every criterion takes the same [`Lab`], which
//! memoises cells, and suite reports are cached so that criteria drawn from
//! one suite run it once. Lab artifacts land under the cargo target
//! directory in `acceptance/` for inspection.

mod common;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, OnceLock};
use std::time::{Duration, Instant};

use plsm_lab::config::ExperimentConfig;
use plsm_lab::envs::{heart_step, EnvConfig, EnvState};
use plsm_lab::suite::{Lab, SuiteReport};

struct Shared {
    lab: Lab,
    reports: BTreeMap<String, Result<SuiteReport, String>>,
}

fn root() -> PathBuf {
    Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance")
}

fn shared() -> &'static Mutex<Shared> {
    static SHARED: OnceLock<Mutex<Shared>> = OnceLock::new();
    SHARED.get_or_init(|| {
        let _ = std::fs::remove_dir_all(root());
        Mutex::new(Shared {
            lab: Lab::new(root().join("lab")),
            reports: BTreeMap::new(),
        })
    })
}

/// Writes past the harness capture and records the line in a summary file.
fn report(criterion: u8, passed: bool, detail: &str) {
    let line = format!("{} criterion {criterion:>2}: {detail}\n", if passed { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    let path = root().join("summary.txt");
    let _ = std::fs::create_dir_all(root());
    if let Ok(mut f) = std::fs::OpenOptions::new().create(true).append(true).open(path) {
        let _ = f.write_all(line.as_bytes());
    }
}

fn conclude(criterion: u8, passed: bool, detail: String) {
    report(criterion, passed, &detail);
    assert!(passed, "criterion {criterion}: {detail}");
}

/// Runs `suite` once (timed from lock acquisition) and grades `criterion`
/// from its checks. `limit` bounds the time spent in this criterion's own
/// work; cells already trained for an earlier criterion are reused.
fn suite_criterion(criterion: u8, suite: &str, limit: Option<Duration>) {
    let mut guard = shared().lock().unwrap_or_else(|p| p.into_inner());
    let started = Instant::now();
    let Shared { lab, reports } = &mut *guard;
    let result = reports
        .entry(suite.to_string())
        .or_insert_with(|| lab.run(suite).map_err(|e| e.to_string()))
        .clone();
    let elapsed = started.elapsed();
    drop(guard);
    let r = match result {
        Ok(r) => r,
        Err(e) => return conclude(criterion, false, format!("suite {suite} failed: {e}")),
    };
    let checks: Vec<_> = r.checks.iter().filter(|c| c.criterion == criterion).collect();
    let mut passed = !checks.is_empty() && checks.iter().all(|c| c.passed);
    let mut parts: Vec<String> = checks
        .iter()
        .map(|c| format!("{}{} ({})", if c.passed { "" } else { "NOT " }, c.name, c.detail))
        .collect();
    if let Some(limit) = limit {
        let within = elapsed <= limit;
        passed &= within;
        parts.push(format!("{:.0?} of {:.0?} allowed", elapsed, limit));
    }
    conclude(criterion, passed, format!("[{suite}] {}", parts.join("; ")));
}

#[test]
fn criterion_01_gradient_correctness() {
    let started = Instant::now();
    let results = common::gradient_suite();
    let elapsed = started.elapsed();
    let worst = results.iter().cloned().fold(("none".to_string(), 0.0), |a, b| if b.1 > a.1 { b } else { a });
    let failing: Vec<_> = results.iter().filter(|(_, e)| !(*e < 1e-4)).map(|(n, _)| n.as_str()).collect();
    let passed = failing.is_empty() && elapsed < Duration::from_secs(10);
    conclude(
        1,
        passed,
        format!(
            "{} checks, worst {} at {:.2e}, failing {:?}, {:.2?}",
            results.len(),
            worst.0,
            worst.1,
            failing,
            elapsed
        ),
    );
}

#[test]
fn criterion_02_oracle_equivalence() {
    let started = Instant::now();
    let (checked, bad) = common::shapes_oracle_check(10_000, 2024);
    // Exhaustive enumeration of the heart environment's step rule over
    // every cell and action, against the reference.
    let n = EnvConfig::heart().grid_size;
    let mut deltas = std::collections::BTreeSet::new();
    let mut heart_bad = 0;
    for r in 0..n {
        for c in 0..n {
            for dir in 0..8 {
                let next = heart_step(&EnvState::single(r, c), n, dir).positions[0];
                let d = (next.0 as isize - r as isize, next.1 as isize - c as isize);
                heart_bad += usize::from(d != common::heart_rule(r, c, n, dir));
                deltas.insert(d);
            }
        }
    }
    let sampled = common::heart_dataset_deltas(200, 2024).map(|s| s.len());
    let elapsed = started.elapsed();
    let passed = checked >= 10_000
        && bad == 0
        && heart_bad == 0
        && deltas.len() == 9
        && sampled == Some(9)
        && elapsed < Duration::from_secs(30);
    conclude(
        2,
        passed,
        format!(
            "{bad} of {checked} shapes transitions differ; heart {} deltas enumerated ({heart_bad} rule mismatches), {:?} in generated data; {:.2?}",
            deltas.len(),
            sampled,
            elapsed
        ),
    );
}

#[test]
fn criterion_03_fig2_clusters() {
    suite_criterion(3, "fig2", Some(Duration::from_secs(600)));
}

#[test]
fn criterion_04_hits_ordering() {
    suite_criterion(4, "generalization", Some(Duration::from_secs(1800)));
}

#[test]
fn criterion_05_generalization_ordering() {
    suite_criterion(5, "generalization", None);
}

#[test]
fn criterion_06_robustness_ordering() {
    suite_criterion(6, "robustness", None);
}

#[test]
fn criterion_07_ablation_ordering() {
    suite_criterion(7, "appendixC", None);
}

#[test]
fn criterion_08_norms() {
    suite_criterion(8, "appendixD", None);
}

#[test]
fn criterion_09_probe_ordering() {
    suite_criterion(9, "probes", None);
}

#[test]
fn criterion_10_collapse() {
    suite_criterion(10, "collapse", None);
}

fn tiny(env: EnvConfig) -> ExperimentConfig {
    let mut c = ExperimentConfig {
        env,
        ..ExperimentConfig::default()
    };
    c.model.hidden_units = 12;
    c.model.latent_dim = 6;
    c.model.query_dim = 6;
    c.train.epochs = 2;
    c.train.batch_size = 32;
    c.data.train_episodes = 12;
    c.data.eval_episodes = 12;
    c
}

fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let bytes = std::fs::read(&p).unwrap();
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), bytes));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn criterion_11_determinism() {
    // Every suite at reduced size, twice, into separate roots.
    let base = root().join("determinism");
    let _ = std::fs::remove_dir_all(&base);
    let mut outcomes = Vec::new();
    for run in ["a", "b"] {
        let mut lab = Lab::new(base.join(run))
            .with_seeds(&[0, 1])
            .with_base(tiny(EnvConfig::heart()))
            .with_base(tiny(EnvConfig::shapes(5)));
        let mut summaries = Vec::new();
        for suite in plsm_lab::suite::SUITES {
            match lab.run(suite) {
                Ok(r) => summaries.push(r.summary()),
                Err(e) => return conclude(11, false, format!("suite {suite} failed: {e}")),
            }
        }
        outcomes.push((tree(&base.join(run)), summaries));
    }
    let (a, b) = (&outcomes[0], &outcomes[1]);
    let metrics = a.0.iter().filter(|(p, _)| p.extension().is_some_and(|e| e == "csv" || e == "json")).count();
    let differing: Vec<String> = a
        .0
        .iter()
        .zip(&b.0)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.display().to_string())
        .collect();
    let passed = a.0.len() == b.0.len() && differing.is_empty() && a.1 == b.1 && metrics > 0;
    conclude(
        11,
        passed,
        format!(
            "{} suites re-run: {} files ({metrics} metrics/report files), {} differ {:?}",
            plsm_lab::suite::SUITES.len(),
            a.0.len(),
            differing.len(),
            differing.iter().take(3).collect::<Vec<_>>()
        ),
    );
}
