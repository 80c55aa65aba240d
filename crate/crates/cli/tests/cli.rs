use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use wscl_cli::artifacts;
use wscl_cli::commands::{Stage, Status, Workspace};
use wscl_cli::config::{PipelineConfig, OUT_DIR_ENV};
use wscl_cli::pipeline;

fn wscl(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wscl"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove(OUT_DIR_ENV)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn small_workspace(out: &Path) -> Workspace {
    let mut cfg = PipelineConfig::small();
    cfg.output_dir = out.to_path_buf();
    let mut ws = Workspace::new(cfg).unwrap();
    ws.quiet = true;
    ws
}

#[test]
fn run_writes_every_stage_and_is_idempotent() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path();
    let first = wscl(out, &["--preset", "small", "-q", "run"]);
    assert_eq!(first.status.code(), Some(0), "{}", stderr(&first));
    for f in [
        "gen/descriptions.jsonl",
        "scenes/scenes.jsonl",
        "scenes/proposals.jsonl",
        "scenes/features/000000.bin",
        "label/triplets.jsonl",
        "label/recall.json",
        "targets/targets.jsonl",
        "train/model.wscl",
        "train/vocab.json",
        "train/loss_history.csv",
        "eval/results.jsonl",
        "eval/report.json",
        "eval/benchmark/labels.json",
        "report/summary.json",
    ] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    for s in Stage::ALL {
        assert!(out.join(s.name()).join("manifest.json").is_file());
    }
    let before = artifacts::hash_tree(out).unwrap();
    let second = wscl(out, &["--preset", "small", "run"]);
    assert_eq!(second.status.code(), Some(0));
    let err = stderr(&second);
    assert_eq!(err.matches("up to date").count(), 7, "{err}");
    assert_eq!(artifacts::hash_tree(out).unwrap(), before);
}

#[test]
fn disk_pipeline_matches_in_memory_run() {
    let tmp = tempfile::tempdir().unwrap();
    let ws = small_workspace(tmp.path());
    ws.run_all().unwrap();
    let pool = pipeline::load_pool(&ws.cfg).unwrap();
    let bench = pipeline::benchmark(&ws.cfg, &pool).unwrap();
    let mem = pipeline::run_in_memory(&ws.cfg, &bench).unwrap();
    let disk: wscl::MetricReport = artifacts::read_json(&tmp.path().join("eval/report.json")).unwrap();
    assert_eq!(disk, mem.report);
    let model = ws.model().unwrap();
    assert_eq!(model.params, mem.trained.model.params);
}

#[test]
fn missing_upstream_names_prior_subcommand() {
    let tmp = tempfile::tempdir().unwrap();
    let o = wscl(tmp.path(), &["train"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("wscl scenes"), "{}", stderr(&o));
    let o = wscl(tmp.path(), &["scenes"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("wscl gen"));
}

#[test]
fn stale_upstream_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(wscl(tmp.path(), &["--preset", "small", "-q", "gen"]).status.code(), Some(0));
    let o = wscl(tmp.path(), &["--preset", "small", "--set", "descriptions.seed=9", "scenes"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("wscl gen"));
}

#[test]
fn config_errors_report_field_path() {
    let tmp = tempfile::tempdir().unwrap();
    let o = wscl(tmp.path(), &["--set", "train.epochz=3", "gen"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("train.epochz"));
    let o = wscl(tmp.path(), &["--threshold-p", "1.5", "label"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("labeler.threshold_p"));
    let o = wscl(tmp.path(), &["--set", "images_per_description=0", "gen"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("images_per_description"));
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, r#"{"pool": "desk20", "labeller": {}}"#).unwrap();
    let o = wscl(tmp.path(), &["--config", bad.to_str().unwrap(), "gen"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("labeller"));
}

#[test]
fn empty_corpus_warns_and_succeeds() {
    let tmp = tempfile::tempdir().unwrap();
    let o = wscl(tmp.path(), &["--set", "descriptions.num_descriptions=0", "gen"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stderr(&o).contains("warning"));
    assert_eq!(fs::read(tmp.path().join("gen/descriptions.jsonl")).unwrap().len(), 0);
}

#[test]
fn divergent_training_exits_with_numeric_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let o = wscl(
        tmp.path(),
        &["--preset", "small", "--set", "train.learning_rate=1e300", "-q", "run"],
    );
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn environment_sets_output_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_wscl"))
        .args(["--preset", "small", "-q", "gen"])
        .env(OUT_DIR_ENV, tmp.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(tmp.path().join("gen/descriptions.jsonl").is_file());
}

#[test]
fn artifact_schemas() {
    let tmp = tempfile::tempdir().unwrap();
    let ws = small_workspace(tmp.path());
    for s in [Stage::Gen, Stage::Scenes, Stage::Label, Stage::Targets] {
        ws.run_stage(s).unwrap();
    }
    let first_line = |f: &str| -> Value {
        let text = fs::read_to_string(tmp.path().join(f)).unwrap();
        serde_json::from_str(text.lines().next().unwrap()).unwrap()
    };
    let keys = |v: &Value| -> Vec<String> {
        let mut k: Vec<String> = v.as_object().unwrap().keys().cloned().collect();
        k.sort();
        k
    };
    assert_eq!(
        keys(&first_line("gen/descriptions.jsonl")),
        ["category_id", "id", "nonsubject_spans", "provenance", "seed", "subject_span", "text"]
    );
    let scene = first_line("scenes/scenes.jsonl");
    assert_eq!(
        keys(&scene),
        ["description_id", "image_seed", "objects", "referent_ids", "relation_edges", "scene_id"]
    );
    assert_eq!(keys(&scene["objects"][0]), ["attributes", "box", "category", "instance_id"]);
    let triplet = first_line("label/triplets.jsonl");
    assert_eq!(keys(&triplet), ["assignments", "description", "provenance", "scene_id"]);
    assert_eq!(triplet["provenance"], "weak_to_strong");
    assert_eq!(keys(&triplet["assignments"][0]), ["proposal_index", "span"]);
    let record = first_line("targets/targets.jsonl");
    assert_eq!(
        keys(&record),
        ["flat_tokens", "item_kinds", "mask", "rows", "scene_id", "target", "token_map"]
    );
    let bits = record["target"].as_str().unwrap();
    assert!(bits.chars().all(|c| c == '0' || c == '1'));
    assert_eq!(
        bits.len(),
        record["rows"].as_u64().unwrap() as usize * record["flat_tokens"].as_array().unwrap().len()
    );

    let bin = fs::read(tmp.path().join("scenes/features/000000.bin")).unwrap();
    let n = u32::from_le_bytes(bin[0..4].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bin[4..8].try_into().unwrap()) as usize;
    assert_eq!(d, ws.cfg.features.d);
    assert_eq!(bin.len(), 8 + 8 * n * d);
    let proposals = scene["objects"].as_array().unwrap().len() + ws.cfg.features.background;
    assert_eq!(n, proposals);

    let manifest: Value = artifacts::read_json(&tmp.path().join("scenes/manifest.json")).unwrap();
    assert_eq!(manifest["stage"], "scenes");
    assert_eq!(manifest["seeds"]["seed"], 0);
    assert!(manifest["inputs"]["gen/manifest.json"].is_string());
    assert!(manifest["outputs"]["scenes.jsonl"].is_string());
    let echoed: PipelineConfig = serde_json::from_value(manifest["config"].clone()).unwrap();
    assert_eq!(echoed.descriptions, ws.cfg.descriptions);
}

#[test]
fn checkpoint_header() {
    let tmp = tempfile::tempdir().unwrap();
    let ws = small_workspace(tmp.path());
    ws.run_all().unwrap();
    let bytes = fs::read(tmp.path().join("train/model.wscl")).unwrap();
    assert_eq!(&bytes[0..4], b"WSCL");
    assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
    let name_len = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    assert_eq!(&bytes[10..10 + name_len], b"visual.weight");
    let csv = fs::read_to_string(tmp.path().join("train/loss_history.csv")).unwrap();
    assert!(csv.starts_with("epoch,grounding_loss,total\n0,"));
    assert_eq!(csv.lines().count(), ws.cfg.train.epochs + 2);
}

#[test]
fn tampered_output_is_rebuilt() {
    let tmp = tempfile::tempdir().unwrap();
    let ws = small_workspace(tmp.path());
    assert_eq!(ws.run_stage(Stage::Gen).unwrap(), Status::Built);
    let path = tmp.path().join("gen/descriptions.jsonl");
    let original = fs::read(&path).unwrap();
    fs::write(&path, b"{}\n").unwrap();
    assert_eq!(ws.run_stage(Stage::Gen).unwrap(), Status::Built);
    assert_eq!(fs::read(&path).unwrap(), original);
    assert_eq!(ws.run_stage(Stage::Gen).unwrap(), Status::UpToDate);
}

#[test]
fn external_results_are_scored() {
    let tmp = tempfile::tempdir().unwrap();
    let ws = small_workspace(tmp.path());
    ws.run_all().unwrap();
    let results = tmp.path().join("eval/results.jsonl");
    let scored = ws.eval_external(&results).unwrap();
    let stored: wscl::MetricReport = artifacts::read_json(&tmp.path().join("eval/report.json")).unwrap();
    assert_eq!(scored, stored);

    let truncated = tmp.path().join("partial.jsonl");
    let text = fs::read_to_string(&results).unwrap();
    fs::write(&truncated, text.lines().skip(1).collect::<Vec<_>>().join("\n")).unwrap();
    let o = wscl(
        tmp.path(),
        &["--preset", "small", "eval", "--results", truncated.to_str().unwrap()],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("incomplete results"));
}

#[test]
fn threshold_ablation_writes_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let o = wscl(tmp.path(), &["--preset", "small", "-q", "ablate", "threshold"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(tmp.path().join("ablate/threshold/table.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "threshold_p,recall_weak_to_strong,recall_grounding_baseline");
    assert_eq!(lines.len(), 4);
    assert!(tmp.path().join("ablate/threshold/table.json").is_file());
    assert!(tmp.path().join("ablate/threshold/manifest.json").is_file());
}

#[test]
fn parse_prints_indented_tree() {
    let tmp = tempfile::tempdir().unwrap();
    let o = wscl(tmp.path(), &["parse", "a green avocado without a plate"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("description\n  subject [0..3]"), "{text}");
    assert!(text.contains("(negated)"));
}

#[test]
fn config_subcommand_prints_resolved_config() {
    let tmp = tempfile::tempdir().unwrap();
    let o = wscl(tmp.path(), &["--preset", "small", "--set", "train.epochs=7", "config"]);
    assert_eq!(o.status.code(), Some(0));
    let cfg = PipelineConfig::from_json(&String::from_utf8(o.stdout).unwrap()).unwrap();
    assert_eq!(cfg.train.epochs, 7);
    assert_eq!(cfg.descriptions.num_descriptions, 5);
    assert_eq!(cfg.output_dir, tmp.path());
}
