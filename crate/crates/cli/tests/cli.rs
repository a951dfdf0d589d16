use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_grounded-rank"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn grounded-rank")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn write_json(p: &Path, v: &Value) {
    fs::write(p, serde_json::to_string_pretty(v).unwrap()).unwrap();
}

/// Synthesizes a small corpus set and returns the path of its experiment
/// config, shrunk to train in well under a second.
fn small_experiment(dir: &Path) -> PathBuf {
    let spec = dir.join("spec.json");
    write_json(
        &spec,
        &json!({"synth": {"concepts": 5, "images": 40, "val_images": 20, "test_images": 20, "feature_dim": 16}}),
    );
    let data = dir.join("data");
    let out = bin(&["synth", "--config", s(&spec), "--out", s(&data)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let path = data.join("experiment.json");
    let mut cfg = read_json(&path);
    cfg["model"] = json!({"word_dim": 8, "hidden_dim": 8, "image_dim": 16});
    cfg["train"]["batch_size"] = json!(8);
    cfg["train"]["max_updates"] = json!(60);
    cfg["train"]["eval_interval_updates"] = json!(20);
    write_json(&path, &cfg);
    path
}

#[test]
fn synth_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        assert_eq!(code(&bin(&["synth", "--seed", "4", "--out", s(d)])), 0);
    }
    for f in [
        "aligned.imgf",
        "aligned.jsonl",
        "disjoint.jsonl",
        "test.imgf",
        "concepts.json",
        "experiment.json",
    ] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn more_concepts_than_images_is_config_error() {
    let tmp = TempDir::new().unwrap();
    let spec = tmp.path().join("spec.json");
    write_json(&spec, &json!({"synth": {"concepts": 10, "images": 5}}));
    let out = bin(&["synth", "--config", s(&spec), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(code(&out), 2);
}

#[test]
fn unknown_config_field_is_config_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("cfg.json");
    write_json(&cfg, &json!({"seeds": [1], "learning_rate": 0.1}));
    assert_eq!(code(&bin(&["train", "--config", s(&cfg)])), 2);
}

#[test]
fn missing_checkpoint_is_config_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_experiment(tmp.path());
    let out = bin(&[
        "eval",
        "--config",
        s(&cfg),
        "--checkpoint",
        s(&tmp.path().join("nope.ckpt")),
        "--out",
        s(&tmp.path().join("e")),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn train_eval_pseudopairs_round() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_experiment(tmp.path());
    let run = tmp.path().join("run");
    let out = bin(&["train", "--config", s(&cfg), "--out", s(&run)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("sum(sum)"));
    for f in [
        "model.ckpt",
        "train_log.jsonl",
        "train_summary.json",
        "report.json",
        "report.txt",
        "report.csv",
    ] {
        assert!(run.join("seed-1").join(f).exists(), "{f}");
    }
    assert!(run.join("train.meta.json").exists());
    let summary = read_json(&run.join("seed-1/train_summary.json"));
    assert!(summary["task_counts"]["image-caption"].as_u64().unwrap() > 0);
    assert!(summary["task_counts"]["caption-caption"].as_u64().unwrap() > 0);

    let ckpt = run.join("seed-1/model.ckpt");
    let ev = tmp.path().join("eval");
    let out = bin(&["eval", "--config", s(&cfg), "--checkpoint", s(&ckpt), "--out", s(&ev)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        read_json(&ev.join("eval_report.json")),
        read_json(&run.join("seed-1/report.json"))
    );

    let pairs = |filter: &str, name: &str| -> Vec<f64> {
        let mut c = read_json(&cfg);
        c["pseudopairs"]["filter"] = json!(filter);
        let path = cfg.with_file_name(format!("{name}.json"));
        write_json(&path, &c);
        let dir = tmp.path().join(name);
        let out = bin(&[
            "pseudopairs",
            "--config",
            s(&path),
            "--checkpoint",
            s(&ckpt),
            "--out",
            s(&dir),
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        fs::read_to_string(dir.join("pairs.jsonl"))
            .unwrap()
            .lines()
            .map(|l| {
                serde_json::from_str::<Value>(l).unwrap()["similarity"]
                    .as_f64()
                    .unwrap()
            })
            .collect()
    };
    let all = pairs("none", "pp_all");
    let top = pairs("keep-top-25", "pp_top");
    let mut sorted = all.clone();
    sorted.sort_by(f64::total_cmp);
    let idx = ((75.0 * sorted.len() as f64 / 100.0).floor() as usize).min(sorted.len() - 1);
    assert_eq!(top.len(), all.iter().filter(|&&v| v >= sorted[idx]).count());

    let retrain = tmp.path().join("pp_retrain");
    let out = bin(&[
        "pseudopairs",
        "--config",
        s(&cfg),
        "--checkpoint",
        s(&ckpt),
        "--out",
        s(&retrain),
        "--retrain",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(retrain.join("cycle/model.ckpt").exists());
    assert!(retrain.join("diagnostics.json").exists());
}

#[test]
fn multi_seed_train_and_report() {
    let tmp = TempDir::new().unwrap();
    let cfg_path = small_experiment(tmp.path());
    let mut cfg = read_json(&cfg_path);
    cfg["seeds"] = json!([1, 2]);
    write_json(&cfg_path, &cfg);
    let run = tmp.path().join("run");
    assert_eq!(code(&bin(&["train", "--config", s(&cfg_path), "--out", s(&run)])), 0);
    for f in ["seed-1/report.json", "seed-2/report.json", "report.json", "report.csv"] {
        assert!(run.join(f).exists(), "{f}");
    }

    let rep = tmp.path().join("rep");
    let out = bin(&[
        "report",
        "--out",
        s(&rep),
        s(&run.join("seed-1/report.json")),
        s(&run.join("seed-2/report.json")),
    ]);
    assert_eq!(code(&out), 0);
    let mean = read_json(&rep.join("mean_report.json"));
    assert_eq!(mean, read_json(&run.join("report.json")));

    let cmp = tmp.path().join("cmp");
    assert_eq!(
        code(&bin(&["compare-losses", "--config", s(&cfg_path), "--out", s(&cmp)])),
        0
    );
    let csv = fs::read_to_string(cmp.join("compare_losses.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "variant,seed,sum_of_sums,updates");
    assert_eq!(lines.len() - 1, 2 * 2 + 2);
    assert!(lines.iter().any(|l| l.starts_with("sum-violation,mean,")));
}

#[test]
fn ingest_translations_adds_captions() {
    let tmp = TempDir::new().unwrap();
    let cfg_path = small_experiment(tmp.path());
    let data = cfg_path.parent().unwrap();
    let first: Value = serde_json::from_str(
        fs::read_to_string(data.join("disjoint.jsonl"))
            .unwrap()
            .lines()
            .next()
            .unwrap(),
    )
    .unwrap();
    let tr = data.join("tr.jsonl");
    fs::write(
        &tr,
        format!(
            "{}\n",
            json!({"source_caption_id": first["caption_id"], "language": "en", "text": "a photo"})
        ),
    )
    .unwrap();
    let mut cfg = read_json(&cfg_path);
    cfg["corpora"][1]["translations"] = json!([{"path": "tr.jsonl", "language": "en"}]);
    write_json(&cfg_path, &cfg);
    let out_dir = tmp.path().join("ing");
    let out = bin(&["ingest-translations", "--config", s(&cfg_path), "--out", s(&out_dir)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(read_json(&out_dir.join("ingest.json")), json!({"disjoint": 1}));
    let merged = fs::read_to_string(out_dir.join("disjoint.jsonl")).unwrap();
    assert!(merged.contains("\"provenance\":\"translated\""));
}
