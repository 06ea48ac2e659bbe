use std::path::Path;
use std::process::{Command, Output};

fn desdis(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_desdis"))
        .args(args)
        .env("DESDIS_THREADS", "1")
        .output()
        .expect("binary runs");
    assert!(
        out.status.success(),
        "desdis {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("stdout is json")
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_owned()
}

#[test]
fn count_params_lists_the_zoo() {
    let v = json(&desdis(&["count-params", "--json"]));
    let rows = v.as_array().unwrap();
    assert_eq!(rows.len(), 9);
    let d8 = rows.iter().find(|r| r["arch"] == "desdis-8").unwrap();
    assert_eq!(d8["params"], 80584);
    let one = json(&desdis(&["count-params", "--arch", "teacher7", "--json"]));
    assert_eq!(one[0]["params"], 1334560);
}

#[test]
fn verify_prop1_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = path(dir.path(), "prop1.csv");
    let v = json(&desdis(&["verify-prop1", "--records", "50", "--seed", "3", "--out", &csv, "--json"]));
    assert_eq!(v["records"], 50);
    assert!(v["max_gap"].as_f64().unwrap() < 1e-6);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 51);
    assert!(text.starts_with("alpha_p,alpha_n,"));
}

#[test]
fn synth_train_distill_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = path(dir.path(), "synth.ddps");
    let teacher = path(dir.path(), "teacher.ddck");
    let student = path(dir.path(), "student.ddck");

    let s = json(&desdis(&["synth", "--points", "40", "--per-point", "3", "--seed", "1", "--out", &data, "--json"]));
    assert_eq!(s["patches"], 120);

    let common = ["--data", &data, "--arch", "desdis-8", "--batch", "8", "--epochs", "2", "--seed", "4", "--json"];
    let mut args = vec!["train-teacher"];
    args.extend(common);
    args.extend(["--out", &teacher]);
    let t = json(&desdis(&args));
    assert_eq!(t["arch"], "desdis-8");
    assert_eq!(t["epochs"].as_array().unwrap().len(), 2);

    let mut args = vec!["distill", "--teacher-ckpt", &teacher, "--alpha-p", "9", "--alpha-n", "9", "--margin", "1"];
    args.extend(common);
    args.extend(["--out", &student]);
    let d = json(&desdis(&args));
    assert!(d["epochs"][0]["teacher_pos"].is_number());

    let e = json(&desdis(&["eval", "--data", &data, "--ckpt", &student, "--json"]));
    assert_eq!(e["arch"], "desdis-8");
    let fpr = e["evaluation"]["fpr95"].as_f64().unwrap();
    assert!((fpr - d["fpr95"].as_f64().unwrap()).abs() < 1e-12);
}

#[test]
fn bad_arguments_fail_cleanly() {
    let out = Command::new(env!("CARGO_BIN_EXE_desdis"))
        .args(["count-params", "--arch", "resnet"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("resnet"));
}
