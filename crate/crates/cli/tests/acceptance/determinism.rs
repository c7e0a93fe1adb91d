use std::process::Command;

use tls13_core::harness::{run_scenario, KeyUpdateOption, ScenarioOptions};

use crate::support::*;

fn simulate(dir: &std::path::Path, tag: &str) -> Result<(Vec<u8>, Vec<u8>), String> {
    let report = dir.join(format!("report-{tag}.txt"));
    let keylog = dir.join(format!("keylog-{tag}.txt"));
    let out = Command::new(env!("CARGO_BIN_EXE_tls13"))
        .args(["simulate", "--seed", "7", "--tickets", "2", "--key-update", "both", "--resume"])
        .arg("--report")
        .arg(&report)
        .arg("--keylog")
        .arg(&keylog)
        .output()
        .ctx("running tls13")?;
    ensure!(
        out.status.success(),
        "tls13 simulate failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    Ok((
        std::fs::read(&report).ctx("report")?,
        std::fs::read(&keylog).ctx("keylog")?,
    ))
}

pub fn determinism() -> Verdict {
    let dir = tempfile::tempdir().ctx("tempdir")?;
    let (report_a, keylog_a) = simulate(dir.path(), "a")?;
    let (report_b, keylog_b) = simulate(dir.path(), "b")?;
    ensure!(!report_a.is_empty() && !keylog_a.is_empty(), "empty CLI output");
    ensure!(report_a == report_b, "reports differ between runs");
    ensure!(keylog_a == keylog_b, "keylogs differ between runs");

    let opts = |seed| ScenarioOptions {
        seed,
        tickets: 2,
        resume: true,
        post_handshake_auth: true,
        key_update: Some(KeyUpdateOption::Both),
        force_hrr: true,
        ..ScenarioOptions::default()
    };
    let a = run_scenario(&opts(7)).ctx("scenario")?;
    let b = run_scenario(&opts(7)).ctx("scenario")?;
    ensure!(a.report.render() == b.report.render(), "library reports differ");
    ensure!(a.keylog.render() == b.keylog.render(), "library keylogs differ");
    let c = run_scenario(&opts(8)).ctx("scenario")?;
    ensure!(
        a.keylog.render() != c.keylog.render(),
        "different seeds produced the same keylog"
    );
    Ok(format!(
        "seed 7 twice via CLI: report {} B and keylog {} B identical; library runs identical, seed 8 differs",
        report_a.len(),
        keylog_a.len()
    ))
}
