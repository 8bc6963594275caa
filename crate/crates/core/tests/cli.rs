use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn tdsent(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tdsent"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, sentences: usize, dim: usize) {
    let o = tdsent(&[
        "synth",
        "--sentences",
        &sentences.to_string(),
        "--dim",
        &dim.to_string(),
        "--seed",
        "3",
        "--out",
        p(dir),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

fn train(dir: &Path, variant: &str, epochs: usize, out: &Path) -> Output {
    tdsent(&[
        "train",
        "--train",
        p(&dir.join("train.txt")),
        "--test",
        p(&dir.join("test.txt")),
        "--embeddings",
        p(&dir.join("embeddings.txt")),
        "--variant",
        variant,
        "--epochs",
        &epochs.to_string(),
        "--seed",
        "2",
        "--out",
        p(out),
        "--quiet",
    ])
}

#[test]
fn train_then_eval_reproduces_logged_metrics() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    let run = tmp.path().join("run");
    synth(&data, 60, 6);
    let o = train(&data, "td-lstm", 2, &run);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["model.ckpt", "train_log.jsonl", "timing.jsonl", "config.json"] {
        assert!(run.join(f).is_file(), "{f} missing");
    }
    assert!(stdout(&o).contains("test accuracy"));

    let log = std::fs::read_to_string(run.join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
    let last: serde_json::Value = serde_json::from_str(log.lines().last().unwrap()).unwrap();

    let json = tmp.path().join("eval.json");
    let o = tdsent(&[
        "eval",
        "--model",
        p(&run),
        "--test",
        p(&data.join("test.txt")),
        "--json",
        p(&json),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("gold\\pred"));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(report["accuracy"], last["test_accuracy"]);
    assert_eq!(report["macro_f1"], last["test_macro_f1"]);
    assert_eq!(report["confusion"].as_array().unwrap().len(), 3);

    let again = tdsent(&["eval", "--model", p(&run), "--test", p(&data.join("test.txt"))]);
    assert_eq!(again.stdout, o.stdout);

    let wrong = tdsent(&[
        "eval",
        "--model",
        p(&run),
        "--test",
        p(&data.join("test.txt")),
        "--variant",
        "tc-lstm",
    ]);
    assert_eq!(wrong.status.code(), Some(3));
}

#[test]
fn lstm_trains_on_a_target_corpus() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 30, 4);
    let o = train(&data, "lstm", 1, &tmp.path().join("run"));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn missing_corpus_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    let o = train(tmp.path(), "td-lstm", 1, &tmp.path().join("run"));
    assert_eq!(o.status.code(), Some(2));
    assert!(!tmp.path().join("run").join("model.ckpt").exists());
}

#[test]
fn corrupted_checkpoint_is_a_format_error() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    let run = tmp.path().join("run");
    synth(&data, 30, 4);
    assert!(train(&data, "tc-lstm", 1, &run).status.success());
    let ckpt = run.join("model.ckpt");
    let mut bytes = std::fs::read(&ckpt).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x5a;
    std::fs::write(&ckpt, &bytes).unwrap();
    let o = tdsent(&["eval", "--model", p(&ckpt), "--test", p(&data.join("test.txt"))]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn predict_prints_a_distribution() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    let run = tmp.path().join("run");
    synth(&data, 30, 4);
    assert!(train(&data, "att-td-lstm", 1, &run).status.success());

    let o = tdsent(&[
        "predict",
        "--model",
        p(&run),
        "--sentence",
        "i love $T$ today",
        "--target",
        "the phone",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(["negative", "neutral", "positive"].contains(&lines[0]));
    let total: f64 = lines[1..]
        .iter()
        .map(|l| l.split_whitespace().nth(1).unwrap().parse::<f64>().unwrap())
        .sum();
    assert!((total - 1.0).abs() < 1e-6);

    let o = tdsent(&[
        "predict",
        "--model",
        p(&run),
        "--sentence",
        "no placeholder here",
        "--target",
        "phone",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn gradcheck_lists_every_parameter_once() {
    let o = tdsent(&["gradcheck", "--dim", "4"]);
    let text = stdout(&o);
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split_whitespace().collect()).collect();
    for v in ["lstm", "td-lstm", "tc-lstm", "att-td-lstm"] {
        let names: Vec<&str> = rows.iter().filter(|r| r[0] == v).map(|r| r[1]).collect();
        assert!(!names.is_empty(), "{v} missing");
        let mut unique = names.clone();
        unique.sort();
        unique.dedup();
        assert_eq!(unique.len(), names.len(), "{v} lists a parameter twice");
        assert!(names.contains(&"softmax.w") && names.contains(&"embedding"));
    }
    let failing = rows.iter().filter(|r| r[4] == "FAIL").count();
    assert_eq!(o.status.success(), failing == 0);
    for r in &rows {
        let err: f64 = r[3].parse().unwrap();
        assert!(err < 1e-2, "{r:?}");
    }
}

#[test]
fn gradcheck_catches_a_broken_adjoint() {
    let o = tdsent(&["gradcheck", "--variant", "td-lstm", "--inject-fault", "sigmoid-adjoint"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAIL"));
}

#[test]
fn experiment_writes_a_report() {
    let tmp = TempDir::new().unwrap();
    let spec = tmp.path().join("grid.toml");
    std::fs::write(
        &spec,
        "variants = [\"lstm\", \"td-lstm\", \"tc-lstm\"]\n\n[data.synthetic]\nsentences = 30\n\n\
         [[embeddings]]\nname = \"random-4\"\ndim = 4\n\n[train]\nepochs = 1\n",
    )
    .unwrap();
    let out = tmp.path().join("report");
    let o = tdsent(&["experiment", "--spec", p(&spec), "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(text.contains("s/epoch"));
    for v in ["lstm", "td-lstm", "tc-lstm"] {
        assert!(text.lines().any(|l| l.starts_with(v)));
    }
    assert!(out.join("report.json").is_file());

    std::fs::write(&spec, "variants = []\n\n[data.synthetic]\nsentences = 30\n").unwrap();
    let o = tdsent(&["experiment", "--spec", p(&spec)]);
    assert_eq!(o.status.code(), Some(2));
}
