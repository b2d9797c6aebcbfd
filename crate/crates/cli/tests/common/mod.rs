#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use op2vec_fixtures::apk::apk;
use op2vec_fixtures::dex::program_dex;

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_op2vec")
}

pub fn op2vec(args: &[&str]) -> Output {
    Command::new(bin()).args(args).env_remove("OP2VEC_SEED").output().expect("spawn op2vec")
}

pub fn op2vec_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut c = Command::new(bin());
    c.args(args).env_remove("OP2VEC_SEED");
    for (k, v) in env {
        c.env(k, v);
    }
    c.output().expect("spawn op2vec")
}

pub fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "op2vec failed with {:?}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).expect("stdout is UTF-8")
}

pub fn s(p: &Path) -> &str {
    p.to_str().expect("UTF-8 path")
}

/// Writes each program as an app: every third one as a two-DEX APK, every
/// third as a one-DEX APK, the rest as bare DEX files. Returns the input
/// directory and a labels file.
pub fn write_apps(root: &Path, programs: &[(Vec<u8>, u8)]) -> (PathBuf, PathBuf) {
    let apps = root.join("apps");
    fs::create_dir_all(&apps).unwrap();
    let mut labels = Vec::new();
    for (i, (ops, label)) in programs.iter().enumerate() {
        let name = match i % 3 {
            0 => {
                let cut = ops.len() / 2;
                fs::write(apps.join(format!("app{i:04}.apk")), apk(&[program_dex(&ops[..cut], 64), program_dex(&ops[cut..], 64)]))
                    .unwrap();
                format!("app{i:04}.apk")
            }
            1 => {
                fs::write(apps.join(format!("app{i:04}.apk")), apk(&[program_dex(ops, 64)])).unwrap();
                format!("app{i:04}.apk")
            }
            _ => {
                fs::write(apps.join(format!("app{i:04}.dex")), program_dex(ops, 64)).unwrap();
                format!("app{i:04}.dex")
            }
        };
        labels.push(serde_json::json!({ "path": format!("apps/{name}"), "label": label }));
    }
    let labels_path = root.join("labels.json");
    fs::write(&labels_path, serde_json::to_string_pretty(&labels).unwrap()).unwrap();
    (apps, labels_path)
}

pub struct Artifacts {
    pub table: PathBuf,
    pub dataset: PathBuf,
    pub model: PathBuf,
    pub epochs: Vec<serde_json::Value>,
    pub metrics: serde_json::Value,
    pub holdout_metrics: Option<serde_json::Value>,
}

/// Runs all six stages under `work`.
pub fn run_pipeline(work: &Path, apps: &Path, labels: &Path, config: &Path, seed: &str, holdout: bool) -> Artifacts {
    let out = work.join("out");
    let seqs = out.join("seqs");
    let manifest = seqs.join("manifest.json");
    ok(&op2vec(&["-q", "extract", s(apps), "-o", s(&seqs), "--labels", s(labels), "-c", s(config)]));
    ok(&op2vec(&["corpus", "-m", s(&manifest), "-o", s(&out.join("vocab.json")), "-c", s(config)]));
    let table = out.join("table.o2vt");
    ok(&op2vec(&[
        "-q",
        "train-embeddings",
        "-m",
        s(&manifest),
        "-c",
        s(config),
        "-o",
        s(&table),
        "--seed",
        seed,
    ]));
    let dataset = out.join("data.op2v");
    ok(&op2vec(&["-q", "embed", "-t", s(&table), "-m", s(&manifest), "-o", s(&dataset), "-c", s(config)]));
    let model = out.join("model.o2vc");
    let lines = ok(&op2vec(&[
        "-q",
        "train-classifier",
        "-d",
        s(&dataset),
        "-c",
        s(config),
        "-o",
        s(&model),
        "--seed",
        seed,
    ]));
    let epochs = lines.lines().map(|l| serde_json::from_str(l).expect("epoch line is JSON")).collect();
    let metrics = serde_json::from_str(&ok(&op2vec(&["evaluate", "-d", s(&dataset), "--model", s(&model)]))).unwrap();
    let holdout_metrics = holdout.then(|| {
        serde_json::from_str(&ok(&op2vec(&["evaluate", "-d", s(&dataset), "--model", s(&model), "--holdout"])))
            .unwrap()
    });
    Artifacts {
        table,
        dataset,
        model,
        epochs,
        metrics,
        holdout_metrics,
    }
}

/// Checks the ratio definitions against the counts exactly; undefined
/// ratios must be null.
pub fn metrics_identities_hold(m: &serde_json::Value) -> bool {
    let c = |k: &str| m[k].as_u64().expect("count");
    let (tp, fp, tn, fn_) = (c("tp"), c("fp"), c("tn"), c("fn"));
    let ratio = |n: u64, d: u64| if d == 0 { None } else { Some(n as f64 / d as f64) };
    let field = |k: &str| m[k].as_f64();
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        _ => None,
    };
    field("accuracy") == ratio(tp + tn, tp + tn + fp + fn_)
        && field("precision") == precision
        && field("recall") == recall
        && field("f1") == f1
        && (precision.is_some() || m["precision"].is_null())
}
