use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn deskbert(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_deskbert"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_fixtures(dir: &Path) {
    let mut csv = String::from("text,label\n");
    let mut corpus = String::new();
    for i in 0..24 {
        csv.push_str(&format!("\"good, great film {i}\",pos\n"));
        csv.push_str(&format!("awful poor film {i},neg\n"));
        corpus.push_str(&format!("the film was good {i}\nthe plot was poor\nwe left early\n\n"));
    }
    fs::write(dir.join("data.csv"), csv).unwrap();
    fs::write(dir.join("corpus.txt"), corpus).unwrap();
    fs::write(
        dir.join("tiny.cfg"),
        "hidden=8\nffn_dim=16\nnum_heads=2\nnum_layers=1\nmax_positions=24\nmax_len=24\nepochs=1\nbatch_size=8\n",
    )
    .unwrap();
}

#[test]
fn full_pipeline_runs_and_writes_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    write_fixtures(d);

    let o = deskbert(d, &["tokenizer-train", "--corpus", "corpus.txt", "--vocab-size", "80", "--out", "tok"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(d.join("tok/vocab.txt").exists() && d.join("tok/merges.txt").exists());

    let o = deskbert(
        d,
        &["pretrain", "--corpus", "corpus.txt", "--tokenizer", "tok", "--config", "tiny.cfg", "--seed", "3", "--out", "pre"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let trace = fs::read_to_string(d.join("pre/loss.csv")).unwrap();
    assert!(trace.starts_with("step,lr,loss\n"));

    let o = deskbert(
        d,
        &[
            "finetune", "--data", "data.csv", "--tokenizer", "tok", "--checkpoint", "pre/model.ckpt", "--config",
            "tiny.cfg", "--out", "ft",
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let metrics: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("ft/metrics.json")).unwrap()).unwrap();
    assert!(metrics["macro_f1"].is_number());
}

#[test]
fn baseline_and_gridsearch_write_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    write_fixtures(d);
    fs::write(d.join("bow.cfg"), "max_df=1.0\ngrid.penalty=0.1,1.0\n").unwrap();

    let o = deskbert(d, &["baseline", "--data", "data.csv", "--config", "bow.cfg", "--out", "base"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("base/report.json")).unwrap()).unwrap();
    for key in ["manifest", "environment", "arms"] {
        assert!(report.get(key).is_some(), "missing {key}");
    }
    let arm = &report["arms"][0];
    assert!(arm["aggregate"]["mean"].is_number());
    assert!(arm["repetitions"][0]["seconds"].is_number());
    assert!(d.join("base/summary.txt").exists());

    let o = deskbert(d, &["gridsearch", "--data", "data.csv", "--config", "bow.cfg", "--folds", "3", "--out", "grid"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let cv: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("grid/cv.json")).unwrap()).unwrap();
    assert_eq!(cv["rows"].as_array().unwrap().len(), 6);
}

#[test]
fn report_is_reproducible_apart_from_timings() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    write_fixtures(d);
    fs::write(d.join("run.manifest"), "dataset=data.csv\nseed=5\narms=bow\narm.bow.max_df=1.0\n").unwrap();
    let mut reports = Vec::new();
    for out in ["a", "b"] {
        let o = deskbert(d, &["report", "run.manifest", "--out", out]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let mut v: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(d.join(out).join("report.json")).unwrap()).unwrap();
        deskbert::eval::strip_timings(&mut v);
        reports.push(v);
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn exit_codes_distinguish_usage_and_arm_failures() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    write_fixtures(d);

    assert_eq!(deskbert(d, &["no-such-command"]).status.code(), Some(2));
    assert_eq!(deskbert(d, &["baseline"]).status.code(), Some(2));
    fs::write(d.join("bad.cfg"), "this line has no equals sign\n").unwrap();
    assert_eq!(
        deskbert(d, &["baseline", "--data", "data.csv", "--config", "bad.cfg"]).status.code(),
        Some(2)
    );

    fs::write(d.join("fail.manifest"), "dataset=data.csv\narms=bow\narm.bow.penalty=-1\n").unwrap();
    let o = deskbert(d, &["report", "fail.manifest", "--out", "f"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(d.join("f/report.json").exists());
}
