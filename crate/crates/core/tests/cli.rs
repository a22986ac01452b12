use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn kdad(data: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kdad"))
        .env("KDAD_DATA_DIR", data)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn idx(dir: &Path, prefix: &str, per_class: usize, rng: &mut ChaCha8Rng) {
    let n = per_class * 10;
    let mut images = Vec::new();
    for v in [0x803u32, n as u32, 28, 28] {
        images.extend_from_slice(&v.to_be_bytes());
    }
    let mut labels = Vec::new();
    for v in [0x801u32, n as u32] {
        labels.extend_from_slice(&v.to_be_bytes());
    }
    for i in 0..n {
        let class = (i % 10) as u8;
        labels.push(class);
        // a bright band whose row depends on the class, plus noise
        for r in 0..28 {
            for _ in 0..28 {
                let base = if r / 3 == usize::from(class) { 200 } else { 10 };
                images.push(base + rng.random_range(0..40u8));
            }
        }
    }
    fs::write(dir.join(format!("{prefix}-images-idx3-ubyte")), images).unwrap();
    fs::write(dir.join(format!("{prefix}-labels-idx1-ubyte")), labels).unwrap();
}

/// Tiny MNIST- and Fashion-shaped datasets.
fn synthetic_data(root: &Path) {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for name in ["mnist", "fashion"] {
        let dir = root.join(name);
        fs::create_dir_all(&dir).unwrap();
        idx(&dir, "train", 30, &mut rng);
        idx(&dir, "t10k", 12, &mut rng);
    }
}

const TINY: [&str; 10] = [
    "--set",
    "epochs=1",
    "--set",
    "train_count=20",
    "--set",
    "test_inlier_count=10",
    "--set",
    "test_anomaly_count=18",
    "--set",
    "batch_size=10",
];

#[test]
fn print_defaults_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let out = kdad(tmp.path(), &["run", "--print-defaults"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("epochs = 300"));
    let cfg = tmp.path().join("defaults.txt");
    fs::write(&cfg, &text).unwrap();
    let again = kdad(tmp.path(), &["run", "--config", cfg.to_str().unwrap(), "--print-defaults"]);
    assert_eq!(String::from_utf8(again.stdout).unwrap(), text);

    let desk = kdad(tmp.path(), &["run", "--profile", "desk", "--print-defaults"]);
    let desk = String::from_utf8(desk.stdout).unwrap();
    assert!(desk.contains("epochs = 30\n") && desk.contains("train_count = 2000\n"));
}

#[test]
fn validation_errors_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.txt");
    fs::write(&bad, "epochs = many\n").unwrap();
    assert_eq!(code(&kdad(tmp.path(), &["run", "--config", bad.to_str().unwrap()])), 1);
    assert_eq!(code(&kdad(tmp.path(), &["run", "--set", "rho=2"])), 1);
    assert_eq!(code(&kdad(tmp.path(), &["run", "--set", "no_such_key=1"])), 1);
    assert_eq!(code(&kdad(tmp.path(), &["frobnicate"])), 1);
}

#[test]
fn missing_data_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = kdad(&tmp.path().join("nowhere"), &["run", "--out", tmp.path().join("r").to_str().unwrap()]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn run_distill_plot_report() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synthetic_data(&data);

    let run = tmp.path().join("run");
    let mut args = vec!["run", "--out", run.to_str().unwrap(), "--set", "regime=colearn_outlier", "--set", "student_id=S7"];
    args.extend(TINY);
    let out = kdad(&data, &args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["config.txt", "teacher.json", "student.json", "train_log.jsonl", "metrics.csv", "metrics.json"] {
        assert!(run.join(f).is_file(), "{f} missing");
    }
    let metrics: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("metrics.json")).unwrap()).unwrap();
    let ratio = metrics["auc_ratio"].as_f64().unwrap();
    assert!(ratio.is_finite());
    let csv = fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(
        csv.lines().next().unwrap(),
        "dataset,inlier_class,regime,student_id,seed,auc_teacher,auc_student,auc_ratio,emd_inlier,emd_outlier"
    );
    // one log line per epoch and phase, epoch 0 included
    let log = fs::read_to_string(run.join("train_log.jsonl")).unwrap();
    assert!(log.lines().count() >= 2);
    for line in log.lines() {
        serde_json::from_str::<serde_json::Value>(line).unwrap();
    }

    let distilled = tmp.path().join("distilled");
    let mut args: Vec<String> = vec![
        "distill".into(),
        "--teacher".into(),
        run.join("teacher.json").to_str().unwrap().to_owned(),
        "--out".into(),
        distilled.to_str().unwrap().to_owned(),
        "--set".into(),
        "student_id=S6".into(),
    ];
    args.extend(TINY.iter().map(|s| s.to_string()));
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    let out = kdad(&data, &args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let distilled_metrics = fs::read_to_string(distilled.join("metrics.json")).unwrap();
    assert!(distilled_metrics.contains("\"regime\": \"offline\""));

    let bad_teacher = tmp.path().join("broken.json");
    fs::write(&bad_teacher, "{\"format\": 1}").unwrap();
    let broken_out = tmp.path().join("broken");
    let mut args = vec!["distill", "--teacher", bad_teacher.to_str().unwrap(), "--out", broken_out.to_str().unwrap()];
    args.extend(TINY);
    assert_eq!(code(&kdad(&data, &args)), 2);

    let csv_path = run.join("metrics.csv");
    let svg = tmp.path().join("fig.svg");
    let out = kdad(&data, &["plot", "--csv", csv_path.to_str().unwrap(), "--out", svg.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let doc = fs::read_to_string(&svg).unwrap();
    roxmltree::Document::parse(&doc).unwrap();
    assert!(doc.contains("viewBox"));

    let summary = tmp.path().join("summary.csv");
    let out = kdad(&data, &["report", "--csv", csv_path.to_str().unwrap(), "--out", summary.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8(out.stdout).unwrap().contains("colearn_outlier"));
    assert!(summary.is_file());

    let empty = tmp.path().join("empty.csv");
    fs::write(&empty, "").unwrap();
    assert_eq!(code(&kdad(&data, &["plot", "--csv", empty.to_str().unwrap(), "--out", svg.to_str().unwrap()])), 2);
}

#[test]
fn train_teacher_writes_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synthetic_data(&data);
    let out_dir = tmp.path().join("t");
    let mut args = vec!["train-teacher", "--out", out_dir.to_str().unwrap(), "--set", "teacher_loss=mae"];
    args.extend(TINY);
    let out = kdad(&data, &args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let ck = fs::read_to_string(out_dir.join("teacher.json")).unwrap();
    assert!(ck.contains("\"loss\":\"mae\""));
}
