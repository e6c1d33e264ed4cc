use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

struct Workspace {
    _tmp: tempfile::TempDir,
    dir: PathBuf,
}

impl Workspace {
    fn new() -> Workspace {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("work");
        fs::create_dir_all(&dir).unwrap();
        let src = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/e2e");
        for entry in fs::read_dir(src).unwrap() {
            let entry = entry.unwrap();
            fs::copy(entry.path(), dir.join(entry.file_name())).unwrap();
        }
        Workspace { _tmp: tmp, dir }
    }

    fn run_dir(&self, name: &str) -> PathBuf {
        self.dir.join("runs").join(name)
    }

    fn cotkt(&self, run: &Path, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_cotkt"))
            .current_dir(&self.dir)
            .arg("--config")
            .arg(self.dir.join("config.json"))
            .arg("--run-dir")
            .arg(run)
            .args(args)
            .output()
            .unwrap()
    }

    fn ok(&self, run: &Path, args: &[&str]) -> Output {
        let out = self.cotkt(run, args);
        assert!(
            out.status.success(),
            "cotkt {args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        out
    }

    fn edit_config(&self, f: impl FnOnce(&mut Value)) {
        let path = self.dir.join("config.json");
        let mut v: Value = serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
        f(&mut v);
        fs::write(path, serde_json::to_vec_pretty(&v).unwrap()).unwrap();
    }
}

fn lines(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count()
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

#[test]
fn harvest_writes_all_and_correct_cots() {
    let ws = Workspace::new();
    let run = ws.run_dir("h");
    let out = ws.ok(&run, &["harvest"]);
    assert_eq!(
        String::from_utf8_lossy(&out.stdout).trim(),
        run.display().to_string()
    );
    assert_eq!(lines(&run.join("cots.jsonl")), 10);
    assert_eq!(lines(&run.join("cots_correct.jsonl")), 7);
    let wrong: Vec<String> = fs::read_to_string(run.join("cots.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap())
        .filter(|v| v["correct"] == false)
        .map(|v| v["item_id"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(wrong, ["s03", "s06", "s08"]);

    let manifest = json(&run.join("run_manifest.json"));
    let first = manifest["stages"]["harvest"].clone();
    ws.ok(&run, &["harvest"]);
    assert_eq!(
        json(&run.join("run_manifest.json"))["stages"]["harvest"],
        first
    );
    for key in ["run_id", "created_at", "config_hash", "tool_version"] {
        assert!(manifest[key].is_string(), "{key}");
    }
}

#[test]
fn subsample_is_seeded() {
    let ws = Workspace::new();
    let (a, b, c) = (ws.run_dir("a"), ws.run_dir("b"), ws.run_dir("c"));
    ws.ok(&a, &["harvest", "--n", "5"]);
    ws.ok(&b, &["harvest", "--n", "5"]);
    ws.ok(&c, &["--seed", "99", "harvest", "--n", "5"]);
    assert_eq!(lines(&a.join("cots.jsonl")), 5);
    let items = |r: &Path| fs::read(r.join("items.jsonl")).unwrap();
    assert_eq!(items(&a), items(&b));
    assert_ne!(items(&a), items(&c));
}

#[test]
fn missing_dataset_exits_2() {
    let ws = Workspace::new();
    ws.edit_config(|v| v["datasets"][0]["path"] = "nowhere.csv".into());
    let out = ws.cotkt(&ws.run_dir("m"), &["harvest"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not found"));
}

#[test]
fn usage_errors_exit_2() {
    let ws = Workspace::new();
    let out = ws.cotkt(&ws.run_dir("u"), &["harvest", "--teacher", "nobody"]);
    assert_eq!(out.status.code(), Some(2));
    let out = ws.cotkt(&ws.run_dir("u"), &["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    let out = ws.cotkt(
        &ws.run_dir("u"),
        &["eval", "--arm", "Bogus=x.jsonl", "--model", "m"],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn build_train_emits_grammar_and_default_manifest() {
    let ws = Workspace::new();
    ws.edit_config(|v| {
        v.as_object_mut().unwrap().remove("training");
    });
    let run = ws.run_dir("t");
    ws.ok(&run, &["harvest"]);
    ws.ok(&run, &["build-train"]);
    let text = fs::read_to_string(run.join("train.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 7);
    for line in text.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        cotkt_core::kt::parse_train_text(v["text"].as_str().unwrap()).unwrap();
    }
    assert_eq!(
        json(&run.join("training_manifest.json")),
        serde_json::json!({
            "lora_dim": 64, "alpha": 16, "dropout": 0.1, "epochs": 20, "batch_size": 4,
            "learning_rate": 2e-4, "weight_decay": 0.001, "optimizer": "Adam", "warmup": 0.03
        })
    );
    let out = ws.cotkt(&run, &["build-train", "--sizes", "16"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("exceeds"));
}

#[test]
fn build_train_without_correct_cots_fails() {
    let ws = Workspace::new();
    let run = ws.run_dir("e");
    ws.ok(&run, &["harvest"]);
    fs::write(run.join("cots_correct.jsonl"), "").unwrap();
    let out = ws.cotkt(&run, &["build-train"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no training examples"));
}

#[test]
fn eval_reports_hand_computed_metrics() {
    let ws = Workspace::new();
    let run = ws.run_dir("ev");
    ws.ok(&run, &["harvest"]);
    ws.ok(
        &run,
        &[
            "eval",
            "--live",
            "KT=student",
            "--arm",
            "Vanilla=vanilla.predictions.jsonl",
            "--arm",
            "QA=qa.predictions.jsonl",
            "--model",
            "vicuna-7b",
        ],
    );
    // student: 7/10 correct; wrong at 0.85 and 0.90 exceed 0.8; ECE bins worked by hand
    let kt = json(&run.join("eval/vicuna-7b__sst2__KT/report.json"));
    assert_eq!(kt["acc"], 0.7);
    assert_eq!(kt["rob"], 0.2);
    assert!((kt["ece"].as_f64().unwrap() - 0.275).abs() < 1e-12);
    // vanilla: s01, s04, s07, s09 correct; s02 .95, s03 .9, s05 .85, s06 .99 overconfident
    let vanilla = json(&run.join("eval/vicuna-7b__sst2__Vanilla/report.json"));
    assert_eq!(vanilla["acc"], 0.4);
    assert_eq!(vanilla["rob"], 0.4);
    assert_eq!(vanilla["n_with_confidence"], 9);

    let csv = fs::read_to_string(run.join("eval/comparison.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(
        rows[0],
        "metric,vicuna-7b/sst2/Vanilla,vicuna-7b/sst2/QA,vicuna-7b/sst2/KT"
    );
    assert_eq!(rows[1], "ACC,0.400,0.600,0.700*");
    assert_eq!(rows[2], "ROB,0.400,0.200*,0.200*");
    assert!(rows[3].starts_with("ECE,"));
    for f in [
        "predictions.jsonl",
        "reliability.csv",
        "reliability.svg",
        "replies.jsonl",
    ] {
        assert!(
            run.join("eval/vicuna-7b__sst2__KT").join(f).is_file(),
            "{f}"
        );
    }
}

#[test]
fn live_eval_is_bit_identical_across_runs() {
    let ws = Workspace::new();
    let (a, b) = (ws.run_dir("la"), ws.run_dir("lb"));
    for run in [&a, &b] {
        ws.ok(run, &["eval", "--live", "KT=student"]);
    }
    let report = "eval/vicuna-7b-kt__sst2__KT/report.json";
    assert_eq!(
        fs::read(a.join(report)).unwrap(),
        fs::read(b.join(report)).unwrap()
    );
}

#[test]
fn completed_outputs_are_immutable() {
    let ws = Workspace::new();
    let run = ws.run_dir("imm");
    ws.ok(
        &run,
        &["eval", "--arm", "QA=qa.predictions.jsonl", "--model", "m"],
    );
    let out = ws.cotkt(
        &run,
        &[
            "eval",
            "--arm",
            "QA=vanilla.predictions.jsonl",
            "--model",
            "m",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("already recorded"));
}

#[test]
fn verify_detects_tampering() {
    let ws = Workspace::new();
    let run = ws.run_dir("v");
    ws.ok(&run, &["harvest"]);
    ws.ok(&run, &["--verify", "harvest"]);
    fs::write(run.join("cots_correct.jsonl"), "{}\n").unwrap();
    let out = ws.cotkt(&run, &["--verify", "harvest"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cots_correct.jsonl"));
}

#[test]
fn sweep_plan_and_attach() {
    let ws = Workspace::new();
    let run = ws.run_dir("sw");
    ws.ok(&run, &["harvest"]);
    ws.ok(&run, &["sweep", "plan"]);
    let small = fs::read_to_string(run.join("sweep/train_2.jsonl")).unwrap();
    let large = fs::read_to_string(run.join("sweep/train_4.jsonl")).unwrap();
    assert!(large.starts_with(&small));
    let out = ws.cotkt(
        &run,
        &[
            "sweep",
            "attach",
            "--pred",
            "2=sweep_pred_2.jsonl",
            "--model",
            "m",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("size 4"));
    let out = ws.ok(
        &run,
        &[
            "sweep",
            "attach",
            "--pred",
            "2=sweep_pred_2.jsonl",
            "--pred",
            "4=sweep_pred_4.jsonl",
            "--model",
            "m",
        ],
    );
    let csv = fs::read_to_string(run.join("sweep/curve.csv")).unwrap();
    assert_eq!(String::from_utf8_lossy(&out.stdout), csv);
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[1].starts_with("2,0.5,") && rows[2].starts_with("4,0.8,"));
    assert!(run.join("sweep/predictions_4.jsonl").is_file());
}

#[test]
fn report_combines_reports_without_a_config() {
    let ws = Workspace::new();
    let run = ws.run_dir("r");
    ws.ok(
        &run,
        &[
            "eval",
            "--arm",
            "QA=qa.predictions.jsonl",
            "--arm",
            "KT=vanilla.predictions.jsonl",
            "--model",
            "m",
        ],
    );
    let out = Command::new(env!("CARGO_BIN_EXE_cotkt"))
        .arg("--config")
        .arg("absent.json")
        .arg("report")
        .arg(run.join("eval/m__sst2__QA/report.json"))
        .arg(run.join("eval/m__sst2__KT/report.json"))
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("m/sst2/QA") && text.contains("m/sst2/KT"));
}
