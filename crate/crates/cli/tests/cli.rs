//! End-to-end runs of the `dynconv` binary: outputs, exit codes and determinism.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dynconv::layers::{Preset, Task};
use dynconv::metrics::flops_model;
use dynconv::train::load_checkpoint;
use dynconv_cli::commands::flops::FlopsOutput;
use dynconv_cli::commands::kfold::KfoldReport;
use dynconv_cli::commands::train::TrainReport;

fn dynconv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dynconv")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("config.json");
    let body = format!(r#"{{"width_multiplier": 0.25, "depth": 1, "kr_dim": 4, "batch_size": 16{extra}}}"#);
    fs::write(&path, body).unwrap();
    path
}

fn bars(dir: &Path) -> PathBuf {
    let out = dir.join("bars");
    let r = dynconv(&["--seed", "3", "--out", s(&out), "gen-data", "oriented-bars", "--per-class", "8", "--test-per-class", "3"]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    out
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn gen_data_is_deterministic_and_refuses_to_overwrite() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let args = |o: &Path| vec!["--seed".to_string(), "7".into(), "--out".into(), s(o).into(), "gen-data".into(), "oriented-bars".into()];
    let run = |o: &Path| dynconv(&args(o).iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(code(&run(&a)), 0);
    assert_eq!(code(&run(&b)), 0);
    assert_eq!(read_dir_bytes(&a), read_dir_bytes(&b));
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["train_count"], 200);
    assert_eq!(manifest["num_classes"], 4);

    let again = run(&a);
    assert_eq!(code(&again), 1);
    assert!(stderr(&again).contains("--force"));
    let mut forced = args(&a);
    forced.insert(0, "--force".into());
    assert_eq!(code(&dynconv(&forced.iter().map(String::as_str).collect::<Vec<_>>())), 0);

    let bad = dynconv(&["--out", s(&tmp.path().join("c")), "gen-data", "spirals"]);
    assert_eq!(code(&bad), 2);
    assert!(stderr(&bad).contains("oriented-bars"));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(code(&dynconv(&[])), 2);
    assert_eq!(code(&dynconv(&["frobnicate"])), 2);
    assert_eq!(code(&dynconv(&["train", "--preset", "nope"])), 2);
    assert_eq!(code(&dynconv(&["train", "--preset", "base-cnn"])), 2, "missing --out");
}

#[test]
fn bad_config_fails_before_training() {
    let tmp = tempfile::tempdir().unwrap();
    let data = bars(tmp.path());
    let cfg = tmp.path().join("bad.json");
    fs::write(&cfg, r#"{"learning_rat": 0.01}"#).unwrap();
    let out = tmp.path().join("run");
    let r = dynconv(&["--config", s(&cfg), "--out", s(&out), "train", "--dataset", s(&data)]);
    assert_ne!(code(&r), 0);
    assert!(stderr(&r).contains("learning_rat"), "{}", stderr(&r));
    assert!(!out.join("report.json").exists());
}

#[test]
fn train_writes_consistent_artifacts_and_eval_reproduces_them() {
    let tmp = tempfile::tempdir().unwrap();
    let data = bars(tmp.path());
    let cfg = small_config(tmp.path(), r#", "epochs": 3"#);
    let a = tmp.path().join("run");
    let artifacts = || -> Vec<Vec<u8>> {
        let r = dynconv(&["--config", s(&cfg), "--force", "--out", s(&a), "train", "--preset", "local-soft", "--dataset", s(&data)]);
        assert_eq!(code(&r), 0, "{}", stderr(&r));
        ["curves.csv", "report.json", "attn_epoch3.csv"].iter().map(|f| fs::read(a.join(f)).unwrap()).collect()
    };
    assert_eq!(artifacts(), artifacts());

    let report = TrainReport::load(&a.join("report.json")).unwrap();
    assert_eq!(report.epochs.len(), 3);
    assert_eq!(fs::read_to_string(a.join("curves.csv")).unwrap().lines().count(), 1 + report.epochs.len());
    assert!(report.wall_clock_seconds.is_none());
    let (model, _) = load_checkpoint(&a.join(&report.final_checkpoint)).unwrap();
    assert_eq!(report.flops_total, flops_model(&model).total);
    for ckpt in &report.checkpoints {
        assert!(a.join(ckpt).is_file(), "{ckpt}");
    }
    let header = fs::read_to_string(a.join("attn_epoch1.csv")).unwrap();
    assert!(header.starts_with("sample,layer,kind,index,weight"));

    let ckpt = a.join("final.ckpt");
    let r = dynconv(&["eval", "--checkpoint", s(&ckpt), "--dataset", s(&data), "--split", "train"]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let v: serde_json::Value = serde_json::from_str(&stdout(&r)).unwrap();
    let logged = report.final_metrics.train_metric;
    assert!((v["accuracy"].as_f64().unwrap() - logged).abs() <= 1e-6);

    let r = dynconv(&["eval", "--checkpoint", s(&ckpt), "--dataset", s(&data), "--preset", "odconv"]);
    assert_eq!(code(&r), 1);
    let msg = stderr(&r);
    assert!(msg.contains("local_soft") && msg.contains("odconv"), "{msg}");
}

#[test]
fn segment_runs_report_miou_and_need_masks() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("shapes");
    let r = dynconv(&["--out", s(&data), "gen-data", "shapes-seg", "--count", "8", "--test-count", "4", "--size", "16"]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let cfg = small_config(tmp.path(), r#", "epochs": 1, "stages": 2"#);
    let out = tmp.path().join("run");
    let r = dynconv(&["--config", s(&cfg), "--out", s(&out), "train", "--preset", "odconv", "--task", "segment", "--dataset", s(&data)]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let r = dynconv(&["eval", "--checkpoint", s(&out.join("final.ckpt")), "--dataset", s(&data)]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&r)).unwrap();
    assert!(v.get("miou").is_some() && v.get("accuracy").is_none());

    fs::remove_file(data.join("test-masks.idx")).unwrap();
    let r = dynconv(&["eval", "--checkpoint", s(&out.join("final.ckpt")), "--dataset", s(&data)]);
    assert_eq!(code(&r), 1);
    assert!(stderr(&r).contains("masks"));
}

#[test]
fn gradcheck_passes_and_names_a_corrupted_group() {
    let r = dynconv(&["gradcheck", "--preset", "hard-attention"]);
    assert_eq!(code(&r), 0, "{}", stdout(&r));
    assert!(stdout(&r).contains("hard_attention: PASS"));

    let r = dynconv(&["gradcheck", "--preset", "odconv", "--corrupt", "stage1.block0.conv1.bank"]);
    assert_eq!(code(&r), 1);
    let text = stdout(&r) + &stderr(&r);
    assert!(text.contains("stage1.block0.conv1.bank") && text.contains("analytic") && text.contains("numeric"), "{text}");
}

#[test]
fn flops_json_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("f.json");
    let r = dynconv(&["flops", "--fixture", "two-layer", "--json", s(&path)]);
    assert_eq!(code(&r), 0);
    let fixture: FlopsOutput = serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
    assert_eq!(fixture.fixture_report.unwrap().total, 4864);

    // With every kernel active, hard attention costs as much as local soft.
    let cfg = tmp.path().join("all_active.json");
    fs::write(&cfg, r#"{"k_active": 4}"#).unwrap();
    let r = dynconv(&["--config", s(&cfg), "flops", "--json", s(&path)]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let table: FlopsOutput = serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
    let totals: Vec<u64> = table.presets.iter().map(|p| p.report.total).collect();
    assert_eq!(table.presets.len(), Preset::IMAGE_VARIANTS.len());
    assert!(totals.windows(2).all(|w| w[0] <= w[1]), "{totals:?}");

    let r = dynconv(&["flops", "--json", s(&path)]);
    assert_eq!(code(&r), 0);
    let sparse: FlopsOutput = serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
    let total = |t: &FlopsOutput, p: Preset| t.presets.iter().find(|x| x.preset == p).unwrap().report.total;
    assert!(total(&sparse, Preset::HardAttention) < total(&sparse, Preset::LocalSoft));
    assert_eq!(total(&sparse, Preset::LocalSoft), total(&table, Preset::LocalSoft));
    for p in &table.presets {
        assert_eq!(p.report.total, p.report.layers.iter().map(|l| l.flops).sum::<u64>());
        assert!(stdout(&r).contains(&p.report.total.to_string()));
    }
    assert_eq!(table.task, Task::Classify);
}

#[test]
fn kfold_summarizes_a_fold_file() {
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("folds.tsv");
    fs::write(&file, "fold\tloss\taccuracy\n0\t1.349\t0.620\n1\t1.093\t0.692\n2\t1.2\t0.641\n3\t1.3\t0.551\n4\t1.1\t0.667\n5\t1.2\t0.641\n6\t1.3\t0.603\n7\t1.2\t0.615\n8\t0.9\t0.782\n9\t1.294\t0.718\n").unwrap();
    let out = tmp.path().join("out");
    let r = dynconv(&["--out", s(&out), "kfold", "--folds-from-file", s(&file)]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    assert!(stdout(&r).contains("mean accuracy 0.653  std 0.062"), "{}", stdout(&r));
    let report: KfoldReport = serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.folds.len(), 10);
    assert!((report.summary.mean - 0.653).abs() <= 5e-4);

    fs::write(&file, "0.5\n").unwrap();
    assert_eq!(code(&dynconv(&["kfold", "--folds-from-file", s(&file)])), 1);
}

#[test]
fn kfold_training_is_deterministic_and_partitions_the_data() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("series");
    let r = dynconv(&["--out", s(&data), "gen-data", "synth-timeseries", "--per-class", "25", "--test-per-class", "9", "--length", "32"]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let cfg = small_config(tmp.path(), r#", "epochs": 2, "pretrain_epochs": 1"#);
    let run = |name: &str| {
        let out = tmp.path().join(name);
        let r = dynconv(&["--config", s(&cfg), "--out", s(&out), "kfold", "--preset", "net2-dcnn", "--dataset", s(&data), "--folds", "10"]);
        assert_eq!(code(&r), 0, "{}", stderr(&r));
        (out, stdout(&r))
    };
    let ((a, table_a), (b, table_b)) = (run("a"), run("b"));
    assert_eq!(table_a, table_b);
    assert_eq!(fs::read(a.join("folds.csv")).unwrap(), fs::read(b.join("folds.csv")).unwrap());
    let report: KfoldReport = serde_json::from_slice(&fs::read(a.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.folds.len(), 10);
    assert!(report.folds.iter().all(|f| (0.0..=1.0).contains(&f.accuracy)));

    let r = dynconv(&["kfold", "--preset", "odconv", "--dataset", s(&data)]);
    assert_eq!(code(&r), 1);
}
