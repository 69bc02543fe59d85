use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use entcell::corpus::toy_inventory;
use entcell::localization::{collect_activations, write_activation_dump, ActivationDump, PositionPolicy};
use entcell::{Scenario, ScenarioConfig};
use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_entcell");

fn entcell(dir: &Path, args: &[&str]) -> (i32, String) {
    let out = Command::new(BIN).current_dir(dir).args(args).output().unwrap();
    let text = String::from_utf8_lossy(&out.stdout).into_owned() + &String::from_utf8_lossy(&out.stderr);
    (out.status.code().unwrap(), text)
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    fs::write(dir.join(name), body).unwrap();
    name.to_string()
}

fn manifest(run: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap()
}

fn files_under(root: &Path) -> BTreeSet<PathBuf> {
    let mut out = BTreeSet::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out
}

fn read_csv(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(|r| r.unwrap()).collect()
}

const SMALL: &str = "entity_limit = 5\nbaseline_count = 60\n";

#[test]
fn manifest_lists_every_output() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", SMALL);
    for command in ["build", "localize", "robustness"] {
        let run = tmp.path().join(command);
        let (code, text) = entcell(tmp.path(), &[command, "--config", &cfg, "--out-dir", command]);
        assert_eq!(code, 0, "{text}");
        let m = manifest(&run);
        assert_eq!(m["status"], "ok");
        assert_eq!(m["invocation"]["command"], command);
        assert!(m["organism_fingerprint"].is_string());
        let listed: BTreeSet<PathBuf> = m["outputs"]
            .as_array()
            .unwrap()
            .iter()
            .map(|f| PathBuf::from(f["path"].as_str().unwrap()))
            .collect();
        let mut written = files_under(&run);
        written.remove(Path::new("manifest.json"));
        assert_eq!(listed, written, "{command}");
    }
}

#[test]
fn histogram_counts_sum_to_entities() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", "entity_limit = 12\nbaseline_count = 60\n");
    let (code, text) = entcell(tmp.path(), &["localize", "--config", &cfg, "--out-dir", "loc"]);
    assert_eq!(code, 0, "{text}");
    let rows = read_csv(&tmp.path().join("loc/layer_histogram.csv"));
    assert_eq!(rows.len(), 8);
    let total: usize = rows.iter().map(|r| r[1].parse::<usize>().unwrap()).sum();
    assert_eq!(total, 12);
    let cells = read_csv(&tmp.path().join("loc/cell_map.csv"));
    let top_layers: Vec<usize> = cells.iter().filter(|r| &r[1] == "1").map(|r| r[2].parse().unwrap()).collect();
    assert_eq!(top_layers.len(), 12);
    for (layer, row) in rows.iter().enumerate() {
        let n = top_layers.iter().filter(|&&l| l == layer).count();
        assert_eq!(row[1].parse::<usize>().unwrap(), n);
    }
    let svg = fs::read_to_string(tmp.path().join("loc/layer_histogram.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
}

#[test]
fn inject_check_follows_the_success_floor() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", &format!("{SMALL}[injection]\ncell_counts = [1]\n"));
    let (code, text) = entcell(tmp.path(), &["inject", "--config", &cfg, "--out-dir", "inj", "--check"]);
    let facts = read_csv(&tmp.path().join("inj/facts.csv"));
    let eligible: Vec<_> = facts.iter().filter(|r| &r[5] == "true").collect();
    let rate = eligible.iter().filter(|r| &r[6] == "true").count() as f64 / eligible.len() as f64;
    assert_eq!(code == 5, rate < 0.9, "{text}");

    let above = write_config(
        tmp.path(),
        "above.toml",
        &format!("{SMALL}[injection]\ncell_counts = [1]\nmin_success = {}\n", rate + 0.01),
    );
    let (code, _) = entcell(tmp.path(), &["inject", "--config", &above, "--out-dir", "inj2", "--check"]);
    assert_eq!(code, 5);
    let (code, _) = entcell(tmp.path(), &["inject", "--config", &above, "--out-dir", "inj3"]);
    assert_eq!(code, 0, "without --check thresholds only annotate");
    assert_eq!(manifest(&tmp.path().join("inj2"))["checks"][0]["passed"], false);
}

#[test]
fn exit_codes_by_failure_class() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let typo = write_config(dir, "typo.toml", "entity_limt = 3\n");
    assert_eq!(entcell(dir, &["build", "--config", &typo]).0, 2);
    let small = write_config(dir, "s.toml", SMALL);
    assert_eq!(entcell(dir, &["steer", "--config", &small, "--alpha-grid", "1,2"]).0, 2);
    assert_eq!(entcell(dir, &["localize", "--config", &small, "--k", "2"]).0, 2);
    let layers = write_config(dir, "l.toml", "entity_limit = 3\n[organism]\nnum_layers = 0\n");
    assert_eq!(entcell(dir, &["build", "--config", &layers, "--out-dir", "l"]).0, 2);

    let missing = write_config(dir, "m.toml", "inventory = \"absent.jsonl\"\n");
    assert_eq!(entcell(dir, &["build", "--config", &missing, "--out-dir", "m"]).0, 3);
    fs::write(dir.join("broken.jsonl"), "{\"entity_id\": 1}\n").unwrap();
    let broken = write_config(dir, "b.toml", "inventory = \"broken.jsonl\"\n");
    assert_eq!(entcell(dir, &["build", "--config", &broken, "--out-dir", "b"]).0, 3);

    let diverge = write_config(
        dir,
        "d.toml",
        &format!("{SMALL}[steering]\nlearning_rate = 1e300\nsteps = 5\n"),
    );
    let (code, text) = entcell(dir, &["steer", "--config", &diverge, "--out-dir", "d"]);
    assert_eq!(code, 4, "{text}");
    let m = manifest(&dir.join("d"));
    assert_eq!(m["status"], "failed");
    assert!(dir.join("d/steering_result.json").exists());
}

#[test]
fn report_summarizes_two_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let cfg = write_config(dir, "c.toml", SMALL);
    assert_eq!(entcell(dir, &["build", "--config", &cfg, "--out-dir", "a"]).0, 0);
    assert_eq!(entcell(dir, &["localize", "--config", &cfg, "--out-dir", "b", "--seed", "9"]).0, 0);
    let (code, text) = entcell(dir, &["report", "a", "b", "--out-dir", "rep"]);
    assert_eq!(code, 0, "{text}");
    let summary: Value = serde_json::from_str(&fs::read_to_string(dir.join("rep/summary.json")).unwrap()).unwrap();
    let runs = summary.as_array().unwrap();
    assert_eq!(runs.len(), 2);
    assert_eq!(runs[0]["manifest"]["invocation"]["command"], "build");
    assert_eq!(runs[1]["manifest"]["invocation"]["command"], "localize");
    assert_eq!(runs[1]["manifest"]["overrides"][0], "--seed 9");
    assert_eq!(read_csv(&dir.join("rep/summary.csv")).len(), 2);
}

#[test]
fn checkpoint_and_replay_reproduce_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let cfg = write_config(dir, "c.toml", SMALL);
    assert_eq!(entcell(dir, &["build", "--config", &cfg, "--out-dir", "a"]).0, 0);
    assert_eq!(entcell(dir, &["localize", "--config", &cfg, "--out-dir", "fresh"]).0, 0);
    let args = ["localize", "--config", &cfg, "--out-dir", "ck", "--checkpoint", "a/checkpoint"];
    assert_eq!(entcell(dir, &args).0, 0);
    for file in ["cell_map.csv", "recovery.csv", "layer_histogram.csv"] {
        assert_eq!(
            fs::read(dir.join("fresh").join(file)).unwrap(),
            fs::read(dir.join("ck").join(file)).unwrap(),
            "{file}"
        );
    }
    let (code, text) = entcell(dir, &["replay", "ck", "--out-dir", "again"]);
    assert_eq!(code, 0, "{text}");
    assert!(text.contains("0 mismatched"));

    // A tampered output no longer matches its recorded digest.
    fs::write(dir.join("again/recovery.csv"), "x\n").unwrap();
    let m = manifest(&dir.join("again"));
    let mut edited = m.clone();
    edited["outputs"][0]["sha256"] = Value::String("0".repeat(64));
    fs::write(dir.join("again/manifest.json"), serde_json::to_string(&edited).unwrap()).unwrap();
    assert_eq!(entcell(dir, &["replay", "again", "--out-dir", "third"]).0, 5);
}

#[test]
fn localize_from_activation_dumps() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let scenario = Scenario::build::<&str>(toy_inventory().take(3), ScenarioConfig::default(), &[]).unwrap();
    let baseline = collect_activations(&scenario.organism, &scenario.baseline_prompts(60).unwrap()).unwrap();
    let entity = collect_activations(&scenario.organism, &scenario.canonical_prompts("Q76", 2).unwrap()).unwrap();
    let dump = |a| ActivationDump::new(PositionPolicy::EntityToken, a).unwrap();
    write_activation_dump(&dir.join("Q76.bin"), &dump(entity.mapv(|x| x as f32))).unwrap();
    write_activation_dump(&dir.join("base.bin"), &dump(baseline.mapv(|x| x as f32))).unwrap();

    let args = ["localize", "--dump", "Q76.bin", "--baseline-dump", "base.bin", "--out-dir", "d"];
    let (code, text) = entcell(dir, &args);
    assert_eq!(code, 0, "{text}");
    let planted = scenario.organism.ground_truth().planted_cells["Q76"];
    let top = &read_csv(&dir.join("d/cell_map.csv"))[0];
    assert_eq!((&top[0], &top[1]), ("Q76", "1"));
    assert_eq!(top[2].parse::<usize>().unwrap(), planted.layer);
    assert_eq!(top[3].parse::<usize>().unwrap(), planted.neuron);
    let table = read_csv(&dir.join("d/stability_table.csv"));
    assert_eq!(table.len(), scenario.organism.num_layers() * scenario.organism.mlp_width());
    assert_eq!(manifest(&dir.join("d"))["inputs"].as_array().unwrap().len(), 2);

    assert_eq!(entcell(dir, &["localize", "--dump", "Q76.bin"]).0, 2);
    fs::write(dir.join("junk.bin"), b"not a dump").unwrap();
    let args = ["localize", "--dump", "junk.bin", "--baseline-dump", "base.bin", "--out-dir", "j"];
    assert_eq!(entcell(dir, &args).0, 3);
}
