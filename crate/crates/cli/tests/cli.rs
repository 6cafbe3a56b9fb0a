use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use tempfile::TempDir;

fn truce(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_truce"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn lines(path: &Path) -> Vec<serde_json::Value> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

/// A small corpus and a briefly trained model, shared by the tests below.
struct Fixture {
    _dir: TempDir,
    root: PathBuf,
    data: PathBuf,
    ckpt: PathBuf,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        let root = dir.path().to_path_buf();
        let data = root.join("synth.jsonl");
        let ckpt = root.join("truce.ckpt");
        let o = truce(&["synth-gen", "--out", s(&data), "--n", "60", "--seed", "3"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let o = truce(&["train", "--data", s(&data), "--out", s(&ckpt), "--epochs", "1"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        Fixture { _dir: dir, root, data, ckpt }
    })
}

#[test]
fn help_and_version_succeed() {
    assert_eq!(code(&truce(&["--help"])), 0);
    assert_eq!(code(&truce(&["--version"])), 0);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&truce(&[])), 1);
    assert_eq!(code(&truce(&["train", "--bogus"])), 1);
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("d.jsonl");
    assert_eq!(code(&truce(&["synth-gen", "--out", s(&out), "--classes", "5"])), 1);
    assert!(!out.exists());
}

#[test]
fn unknown_config_keys_exit_one() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "[train]\nepochs = 2\nlearning_rate = 0.1\n").unwrap();
    let out = dir.path().join("d.jsonl");
    let o = truce(&["--config", s(&cfg), "synth-gen", "--out", s(&out)]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("learning_rate"));
}

#[test]
fn synth_gen_refuses_to_overwrite_without_force() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("d.jsonl");
    let o = truce(&["synth-gen", "--out", s(&out), "--n", "12"]);
    assert_eq!(code(&o), 0);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("increase-begin"), "{stdout}");
    let before = fs::read(&out).unwrap();

    let o = truce(&["synth-gen", "--out", s(&out), "--n", "24"]);
    assert_eq!(code(&o), 1);
    assert_eq!(fs::read(&out).unwrap(), before);

    assert_eq!(code(&truce(&["synth-gen", "--out", s(&out), "--n", "24", "--force"])), 0);
    assert_eq!(lines(&out).len(), 24);
}

#[test]
fn synth_gen_options_and_sidecar() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "[data]\nn = 40\nt = 16\n").unwrap();
    let out = dir.path().join("d.jsonl");
    // The flag wins over the file for n; t comes from the file.
    let o = truce(&["--config", s(&cfg), "synth-gen", "--out", s(&out), "--n", "20", "--classes", "4"]);
    assert_eq!(code(&o), 0);
    let recs = lines(&out);
    assert_eq!(recs.len(), 20);
    assert!(recs.iter().all(|r| r["series"].as_array().unwrap().len() == 16));
    let held_out = |r: &serde_json::Value| {
        let m = &r["meta"];
        (m["trend"] == "increase" && m["location"] == "end") || (m["trend"] == "decrease" && m["location"] == "begin")
    };
    assert!(!recs.iter().any(held_out));

    let side: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("d.jsonl.config.json")).unwrap()).unwrap();
    assert_eq!(side["tool_version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(side["config"]["n"], 20);
    assert_eq!(side["config"]["t"], 16);
}

#[test]
fn synth_gen_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    truce(&["synth-gen", "--out", s(&a), "--n", "30", "--seed", "9"]);
    truce(&["synth-gen", "--out", s(&b), "--n", "30", "--seed", "9"]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn ingest_writes_normalised_windows_with_provenance() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("prices");
    fs::create_dir(&csv).unwrap();
    let mut body = String::from("date,close\n");
    for i in 0..200 {
        body.push_str(&format!("d{i},{}\n", 50.0 + (i as f64 * 0.37).sin() * 10.0 + i as f64 * 0.05));
    }
    fs::write(csv.join("acme_daily.csv"), &body).unwrap();
    fs::write(csv.join("acme_weekly.csv"), &body).unwrap();
    let out = dir.path().join("windows.jsonl");
    let o = truce(&["ingest", "--csv-dir", s(&csv), "--out", s(&out), "--count", "25", "--seed", "1"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = lines(&out);
    assert_eq!(rows[0]["type"], "config");
    assert_eq!(rows[0]["config"]["data"]["count"], 25);
    assert_eq!(rows.len(), 26);
    for r in &rows[1..] {
        let series = r["series"].as_array().unwrap();
        assert_eq!(series.len(), 12);
        assert!(series.iter().all(|v| (0.0..=100.0).contains(&v.as_f64().unwrap())));
        assert_eq!(r["provenance"]["company"], "acme");
    }
}

#[test]
fn convert_keeps_counts() {
    let dir = TempDir::new().unwrap();
    let train = dir.path().join("train.json");
    fs::write(
        &train,
        r#"[{"values": [1, 2, 3], "annotations": ["goes up", "rises"]},
            {"values": [3, 2, 1], "annotations": ["falls"]}]"#,
    )
    .unwrap();
    let test = dir.path().join("test.jsonl");
    fs::write(&test, "{\"series\": [5, 5, 6], \"captions\": [\"jumps at the end\"]}\n").unwrap();
    let out = dir.path().join("c.jsonl");
    let o = truce(&["convert", "--released", s(&train), s(&test), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let recs = lines(&out);
    assert_eq!(recs.len(), 3);
    let caps: usize = recs.iter().map(|r| r["captions"].as_array().unwrap().len()).sum();
    assert_eq!(caps, 4);
    assert_eq!(recs[2]["split"], "test");
}

#[test]
fn train_writes_checkpoint_and_log_with_config() {
    let f = fixture();
    assert!(f.ckpt.exists());
    let log = lines(&f.root.join("truce.ckpt.metrics.jsonl"));
    assert_eq!(log[0]["type"], "config");
    assert_eq!(log[0]["tool_version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(log[0]["config"]["train"]["epochs"], 1);
    assert_eq!(log[1]["type"], "epoch");
    assert_eq!(log.last().unwrap()["type"], "result");
}

#[test]
fn ablations_are_rejected_for_baselines() {
    let f = fixture();
    let out = f.root.join("never.ckpt");
    let o = truce(&["train", "--data", s(&f.data), "--model", "fc", "--ablate", "noheur", "--out", s(&out)]);
    assert_eq!(code(&o), 1);
}

#[test]
fn greedy_captions_are_byte_identical_and_carry_programs() {
    let f = fixture();
    let a = f.root.join("cap_a.jsonl");
    let b = f.root.join("cap_b.jsonl");
    for out in [&a, &b] {
        let o = truce(&["caption", "--ckpt", s(&f.ckpt), "--data", s(&f.data), "--out", s(out)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let rows = lines(&a);
    assert_eq!(rows[0]["type"], "config");
    for r in &rows[1..] {
        assert!(r["program"].as_u64().unwrap() < 24);
        let score = r["score"].as_f64().unwrap();
        assert!(score > 0.0 && score < 1.0);
    }
}

#[test]
fn sampling_emits_l_captions_per_instance() {
    let f = fixture();
    let out = f.root.join("samples.jsonl");
    let o = truce(&[
        "caption", "--ckpt", s(&f.ckpt), "--data", s(&f.data), "--mode", "sample", "--l", "12", "--top-p", "0.7",
        "--seed", "4", "--out", s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = lines(&out);
    let test_records = lines(&f.data).iter().filter(|r| r["split"] == "test").count();
    assert_eq!(rows.len() - 1, 12 * test_records);
    assert_eq!(rows[0]["config"]["l"], 12);
}

#[test]
fn caption_rejects_foreign_vocabulary() {
    let f = fixture();
    let data = f.root.join("foreign.jsonl");
    fs::write(
        &data,
        "{\"id\":\"a\",\"series\":[1,2,3],\"captions\":[\"zigzagging wildly\"],\"meta\":null,\"split\":\"train\"}\n",
    )
    .unwrap();
    let o = truce(&["caption", "--ckpt", s(&f.ckpt), "--data", s(&data), "--split", "train"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("vocabulary mismatch"));
}

#[test]
fn metrics_suite_reports_all_columns() {
    let f = fixture();
    let out = f.root.join("metrics.jsonl");
    let o = truce(&["eval", "--suite", "metrics", "--ckpt", s(&f.ckpt), "--data", s(&f.data), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = lines(&out);
    assert_eq!(rows[0]["type"], "config");
    let summary = rows.iter().find(|r| r["type"] == "summary").unwrap();
    for k in ["bleu3", "bleu4", "rouge_l", "cider", "perplexity", "correctness"] {
        assert!(summary[k].is_number(), "{k}: {summary}");
    }
    assert!(summary["perplexity"].as_f64().unwrap() >= 1.0);
}

#[test]
fn correctness_suite_needs_metadata() {
    let f = fixture();
    let data = f.root.join("nometa.jsonl");
    let text: String = fs::read_to_string(&f.data)
        .unwrap()
        .lines()
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            v["meta"] = serde_json::Value::Null;
            format!("{v}\n")
        })
        .collect();
    fs::write(&data, text).unwrap();
    let o = truce(&["eval", "--suite", "correctness", "--ckpt", s(&f.ckpt), "--data", s(&data)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("metadata"));
}

#[test]
fn coverage_suite_sweeps_default_masses_and_plots() {
    let f = fixture();
    let out = f.root.join("coverage.jsonl");
    let plot = f.root.join("coverage.svg");
    let o = truce(&[
        "eval", "--suite", "coverage", "--ckpt", s(&f.ckpt), "--data", s(&f.data), "--l", "2", "--out", s(&out),
        "--plot", s(&plot), "--threads", "1",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let ps: Vec<f64> = lines(&out)
        .iter()
        .filter(|r| r["type"] == "coverage")
        .map(|r| r["top_p"].as_f64().unwrap())
        .collect();
    let expected = [0.3, 0.5, 0.7, 0.9, 1.0];
    assert_eq!(ps.len(), expected.len());
    for (p, e) in ps.iter().zip(expected) {
        assert!((p - e).abs() < 1e-6);
    }
    let svg = fs::read_to_string(&plot).unwrap();
    assert!(svg.contains("<svg") && svg.contains(env!("CARGO_PKG_VERSION")));
}

#[test]
fn analyze_suite_lists_module_words() {
    let f = fixture();
    let out = f.root.join("analyze.jsonl");
    let o = truce(&[
        "eval", "--suite", "analyze", "--ckpt", s(&f.ckpt), "--data", s(&f.data), "--split", "train", "--out", s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows: Vec<_> = lines(&out).into_iter().filter(|r| r["type"] == "module").collect();
    assert_eq!(rows.len(), 6 + 4);
    assert_eq!(rows[0]["row"]["kind"], "pattern");
}

#[test]
fn nearnbr_trains_and_evaluates() {
    let f = fixture();
    let ckpt = f.root.join("nn.ckpt");
    let o = truce(&["train", "--data", s(&f.data), "--model", "nearnbr", "--out", s(&ckpt)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = truce(&["eval", "--suite", "transfer", "--ckpt", s(&ckpt)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    let last: serde_json::Value = serde_json::from_str(stdout.lines().last().unwrap()).unwrap();
    assert_eq!(last["type"], "transfer");
    assert_eq!(last["t"], 24);
    assert_eq!(last["instances"], 100);
    // Composition accuracy is defined for the full model only.
    let o = truce(&["eval", "--suite", "composition", "--ckpt", s(&ckpt), "--data", s(&f.data)]);
    assert_eq!(code(&o), 2);
}

#[test]
fn divergent_training_writes_outputs_and_exits_two() {
    let f = fixture();
    let out = f.root.join("diverged.ckpt");
    let o = truce(&["train", "--data", s(&f.data), "--out", s(&out), "--epochs", "2", "--lr", "1e30", "--lambda", "10"]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("diverged"));
    let log = lines(&f.root.join("diverged.ckpt.metrics.jsonl"));
    assert_eq!(log.last().unwrap()["type"], "result");
}
