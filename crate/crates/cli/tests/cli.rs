use std::collections::BTreeMap;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Command, Stdio};

use riskpipe::corpus::write_labels_csv;
use riskpipe::embeddings::{EmbeddingHeader, EmbeddingTable};
use riskpipe::metrics::latency_cost;
use riskpipe::numerics::Matrix;
use riskpipe::regression::{ModelDocument, PcaSpec, RiskModel, SimpleRidgeModel};
use riskpipe::synth::{generate, SynthSpec};
use riskpipe_cli::commands::{evaluate, prepare, simulate, synth, train, SynthArgs};
use riskpipe_cli::{EvalSplit, RunConfig, Task};
use serde_json::Value;

fn riskpipe(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_riskpipe")).args(args).output().unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn corpus(dir: &Path, n: usize, seed: u64) {
    synth(&SynthArgs {
        spec: SynthSpec {
            n_subjects: n,
            seed,
            ..SynthSpec::default()
        },
        output_dir: dir.join("data"),
    })
    .unwrap();
}

fn config(dir: &Path) -> RunConfig {
    RunConfig {
        data_dir: Some(dir.join("data/subjects")),
        labels_path: vec![dir.join("data/labels.csv")],
        embeddings_path: Some(dir.join("data/embeddings.jsonl")),
        output_dir: dir.join("run"),
        ..RunConfig::default()
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn missing_label_file_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path(), 8, 1);
    let (code, _, err) = riskpipe(&[
        "prepare",
        "--data-dir",
        s(&dir.path().join("data/subjects")),
        "--labels-path",
        s(&dir.path().join("nope.csv")),
        "--output-dir",
        s(&dir.path().join("run")),
    ]);
    assert_eq!(code, 2, "{err}");
    assert!(err.contains("nope.csv"), "{err}");
}

#[test]
fn unlabelled_subject_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path(), 8, 1);
    let labels = std::fs::read_to_string(dir.path().join("data/labels.csv")).unwrap();
    let trimmed: Vec<&str> = labels.lines().filter(|l| !l.starts_with("subject0003")).collect();
    std::fs::write(dir.path().join("data/labels.csv"), trimmed.join("\n")).unwrap();
    let (code, _, err) = riskpipe(&[
        "prepare",
        "--data-dir",
        s(&dir.path().join("data/subjects")),
        "--labels-path",
        s(&dir.path().join("data/labels.csv")),
        "--output-dir",
        s(&dir.path().join("run")),
    ]);
    assert_eq!(code, 2);
    assert!(err.contains("no label for subject subject0003"), "{err}");
}

#[test]
fn bad_flags_exit_with_two() {
    assert_eq!(riskpipe(&["train", "--task", "2e"]).0, 2);
    assert_eq!(riskpipe(&["train", "--pca-components", "2", "--pca-variance", "0.5"]).0, 2);
    assert_eq!(riskpipe(&["frobnicate"]).0, 2);
    assert_eq!(riskpipe(&["--help"]).0, 0);
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path(), 40, 2);
    let file = dir.path().join("run.json");
    let cfg = serde_json::json!({
        "data_dir": dir.path().join("data/subjects"),
        "labels_path": [dir.path().join("data/labels.csv")],
        "output_dir": dir.path().join("run"),
        "validation_fraction": 0.5,
        "seed": 9,
    });
    std::fs::write(&file, cfg.to_string()).unwrap();
    let (code, out, err) = riskpipe(&["prepare", "--config", s(&file), "--validation-fraction", "0.25"]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("30 train / 10 validation"), "{out}");
    let manifest: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("run/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 9);
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 16);
}

#[test]
fn simple_task_writes_clipped_simple_model() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path(), 60, 4);
    let cfg = RunConfig {
        task: Task::B,
        lambda: vec![0.1, 1.0],
        ..config(dir.path())
    };
    prepare(&cfg).unwrap();
    let out = train(&cfg).unwrap();
    let RiskModel::Simple(model) = &out.model.model else {
        panic!("expected a simple model");
    };
    let raw = std::fs::read_to_string(dir.path().join("run/model.json")).unwrap();
    assert!(raw.contains(r#""kind": "simple""#));
    let extreme = Matrix::new(2, 16, [vec![50.0; 16], vec![-50.0; 16]].concat()).unwrap();
    assert!(model.predict(&extreme).unwrap().iter().all(|p| (0.0..=1.0).contains(p)));
    let report = evaluate(&cfg).unwrap();
    let titles: Vec<&str> = report.tables.iter().map(|(t, _)| t.as_str()).collect();
    assert_eq!(titles, ["task 2a absolute", "task 2b absolute", "task 2b ranking"]);
}

#[test]
fn variance_target_records_selected_k() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path(), 60, 5);
    let cfg = RunConfig {
        pca_variance: Some(0.85),
        ..config(dir.path())
    };
    prepare(&cfg).unwrap();
    let out = train(&cfg).unwrap();
    let RiskModel::Multi(m) = &out.model.model else {
        panic!("expected a multi-output model");
    };
    let k = m.pca_components.unwrap();
    assert!((1..16).contains(&k));
    assert_eq!(m.pca_variance_target, Some(0.85));
    assert_eq!(out.report["pca_components"], k);
}

/// Embeddings carrying the label distributions make an exact fit possible.
fn perfect_fixture(dir: &Path) -> RunConfig {
    let data = generate(&SynthSpec {
        n_subjects: 40,
        seed: 6,
        ..SynthSpec::default()
    });
    let subjects = dir.join("data/subjects");
    std::fs::create_dir_all(&subjects).unwrap();
    for h in &data.histories {
        std::fs::write(subjects.join(format!("{}.json", h.subject_id)), h.to_json()).unwrap();
    }
    std::fs::write(dir.join("data/labels.csv"), write_labels_csv(&data.labels)).unwrap();
    let mut table = EmbeddingTable::new(EmbeddingHeader {
        encoder: "oracle".into(),
        pooling: "none".into(),
        dimension: 3,
        max_length: 0,
        created_at: "1970-01-01T00:00:00Z".into(),
    });
    for (h, r) in data.histories.iter().zip(&data.labels) {
        // the fourth share is implied by the other three
        let v = r.d_dist.probs()[..3].to_vec();
        table.insert(h.subject_id.clone(), None, v.clone()).unwrap();
        for round in 1..=h.len() {
            table.insert(h.subject_id.clone(), Some(round), v.clone()).unwrap();
        }
    }
    table.save(&dir.join("data/embeddings.jsonl")).unwrap();
    RunConfig {
        lambda: vec![0.0],
        strategy: riskpipe::regression::Strategy::Independent,
        split: EvalSplit::All,
        ..config(dir)
    }
}

#[test]
fn perfect_predictions_score_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = perfect_fixture(dir.path());
    prepare(&cfg).unwrap();
    train(&cfg).unwrap();
    let report = evaluate(&cfg).unwrap();
    let table = |t: &str| -> BTreeMap<String, Option<f64>> {
        report.tables.iter().find(|(n, _)| n == t).unwrap().1.iter().cloned().collect()
    };
    for t in ["task 2a absolute", "task 2c absolute"] {
        assert!((table(t)["accuracy"].unwrap() - 1.0).abs() < 1e-12, "{t}");
        assert!((table(t)["macro_f1"].unwrap() - 1.0).abs() < 1e-12, "{t}");
    }
    assert!(table("task 2b absolute")["RMSE"].unwrap() < 1e-9);
    assert!(table("task 2d absolute")["rmse mean"].unwrap() < 1e-9);
    assert_eq!(table("task 2d ranking")["p@50"], None);
}

#[test]
fn always_positive_model_erde() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = perfect_fixture(dir.path());
    prepare(&cfg).unwrap();
    let x = Matrix::new(3, 3, vec![0.1, 0.2, 0.3, 0.4, 0.3, 0.2, 0.0, 0.0, 0.5]).unwrap();
    let model = SimpleRidgeModel::fit(&x, &[1.0; 3], 1.0, PcaSpec::None, false).unwrap();
    let doc = ModelDocument::new(RiskModel::Simple(model), "fixture");
    std::fs::write(dir.path().join("run/model.json"), doc.to_json()).unwrap();
    let out = simulate(&cfg, false).unwrap();

    let labels = std::fs::read_to_string(dir.path().join("data/labels.csv")).unwrap();
    let positives = labels.lines().skip(1).filter(|l| l.split(',').nth(1) == Some("1")).count() as f64;
    let n = 40.0;
    // every subject is flagged at round 1: TPs cost lc(1), negatives cost c_fp
    let expected = (positives * latency_cost(1, 30) + (n - positives) * (positives / n)) / n;
    let erde30 = out.metrics.iter().find(|(k, _)| k == "erde30").unwrap().1.unwrap();
    assert!((erde30 - expected).abs() < 1e-12, "{erde30} vs {expected}");
    for key in ["latency_tp", "speed", "latency_weighted_f1"] {
        assert!(out.report["metrics"].get(key).is_some(), "{key}");
    }
    assert_eq!(out.metrics.iter().find(|(k, _)| k == "latency_tp").unwrap().1, Some(1.0));
}

#[test]
fn serve_and_client_processes_agree_with_simulate() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path(), 12, 8);
    let cfg = RunConfig {
        split: EvalSplit::All,
        ..config(dir.path())
    };
    prepare(&cfg).unwrap();
    train(&cfg).unwrap();
    simulate(&cfg, false).unwrap();
    let common = [
        "--data-dir".to_string(),
        s(&dir.path().join("data/subjects")).to_string(),
        "--labels-path".to_string(),
        s(&dir.path().join("data/labels.csv")).to_string(),
        "--embeddings-path".to_string(),
        s(&dir.path().join("data/embeddings.jsonl")).to_string(),
        "--output-dir".to_string(),
        s(&dir.path().join("run")).to_string(),
        "--split".to_string(),
        "all".to_string(),
    ];
    let mut server = Command::new(env!("CARGO_BIN_EXE_riskpipe"))
        .arg("serve")
        .args(&common)
        .args(["--addr", "127.0.0.1:0"])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut server_out = BufReader::new(server.stdout.take().unwrap());
    let mut first = String::new();
    server_out.read_line(&mut first).unwrap();
    let addr = first.trim().strip_prefix("listening on ").unwrap().to_string();
    let client = Command::new(env!("CARGO_BIN_EXE_riskpipe"))
        .arg("client")
        .args(&common)
        .args(["--addr", &addr])
        .output()
        .unwrap();
    assert!(client.status.success(), "{}", String::from_utf8_lossy(&client.stderr));
    let mut rest = String::new();
    std::io::Read::read_to_string(&mut server_out, &mut rest).unwrap();
    assert!(server.wait().unwrap().success());
    assert!(rest.contains("erde30"), "{rest}");
    let read = |f: &str| std::fs::read_to_string(dir.path().join("run").join(f)).unwrap();
    assert_eq!(read("traces.jsonl"), read("client_traces.jsonl"));
    assert_eq!(read("traces.jsonl"), read("server_traces.jsonl"));
}

#[test]
fn exporter_pipe_drives_simulation() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path(), 10, 9);
    let cfg = RunConfig {
        split: EvalSplit::All,
        ..config(dir.path())
    };
    prepare(&cfg).unwrap();
    train(&cfg).unwrap();
    let table_run = simulate(&cfg, false).unwrap();
    // a stand-in exporter that answers from the embedding file
    let script = dir.path().join("exporter.py");
    std::fs::write(
        &script,
        r#"import json, sys
path = sys.argv[1]
vectors = {}
with open(path) as f:
    next(f)
    for line in f:
        r = json.loads(line)
        vectors[(r["subject_id"], r["round"])] = r["vector"]
for line in sys.stdin:
    q = json.loads(line)
    v = vectors[(q["subject_id"], q["round"])]
    print(json.dumps({"subject_id": q["subject_id"], "round": q["round"], "vector": v}), flush=True)
"#,
    )
    .unwrap();
    if Command::new("python3").arg("--version").output().is_err() {
        eprintln!("python3 unavailable; skipping");
        return;
    }
    let piped = RunConfig {
        exporter: Some(format!(
            "python3 {} {}",
            s(&script),
            s(&dir.path().join("data/embeddings.jsonl"))
        )),
        embeddings_path: None,
        ..cfg
    };
    let pipe_run = simulate(&piped, false).unwrap();
    assert_eq!(
        riskpipe::stream::traces_to_jsonl(&table_run.traces),
        riskpipe::stream::traces_to_jsonl(&pipe_run.traces)
    );
}
