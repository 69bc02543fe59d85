use std::path::PathBuf;

use serde::Serialize;

use crate::manifest::{load_manifest, Run, RunManifest, RunStatus};

#[derive(Serialize)]
struct RunRow<'a> {
    run: String,
    command: &'static str,
    status: RunStatus,
    organism_fingerprint: Option<&'a str>,
    outputs: usize,
    checks_passed: usize,
    checks_failed: usize,
}

#[derive(Serialize)]
struct MetricRow<'a> {
    run: String,
    command: &'static str,
    metric: &'a str,
    value: f64,
}

#[derive(Serialize)]
struct Entry<'a> {
    run: String,
    manifest: &'a RunManifest,
}

/// Collects several run manifests into one summary.
pub fn run(runs: &[PathBuf], run: &mut Run) -> anyhow::Result<()> {
    let manifests = runs
        .iter()
        .map(|path| {
            let dir = if path.is_dir() { path.clone() } else { path.parent().map(PathBuf::from).unwrap_or_default() };
            let m = load_manifest(path)?;
            run.input(&dir.join(crate::manifest::MANIFEST_FILE))?;
            Ok((dir.display().to_string(), m))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;

    let rows: Vec<RunRow> = manifests
        .iter()
        .map(|(name, m)| RunRow {
            run: name.clone(),
            command: m.invocation.name(),
            status: m.status,
            organism_fingerprint: m.organism_fingerprint.as_deref(),
            outputs: m.outputs.len(),
            checks_passed: m.checks.iter().filter(|c| c.passed).count(),
            checks_failed: m.checks.iter().filter(|c| !c.passed).count(),
        })
        .collect();
    run.write_csv("summary.csv", &rows)?;
    let metrics: Vec<MetricRow> = manifests
        .iter()
        .flat_map(|(name, m)| {
            m.metrics.iter().map(move |(metric, &value)| MetricRow {
                run: name.clone(),
                command: m.invocation.name(),
                metric,
                value,
            })
        })
        .collect();
    run.write_csv("metrics.csv", &metrics)?;
    let entries: Vec<Entry> = manifests.iter().map(|(name, m)| Entry { run: name.clone(), manifest: m }).collect();
    run.write_json("summary.json", &entries)?;

    let failed = manifests.iter().filter(|(_, m)| m.status != RunStatus::Ok).count();
    run.metric("runs", manifests.len() as f64);
    run.metric("failed_runs", failed as f64);
    run.check("failed_runs", failed as f64, "== 0", failed == 0);
    Ok(())
}
