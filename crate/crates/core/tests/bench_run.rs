use std::path::Path;

use dsgc::bench::{
    gen_sim_dataset, gradcheck, load_reports, run_experiment, run_stem, summarize, GradSizes, GradTarget, RunConfig,
    SimKind, SimTask, Stat,
};
use dsgc::conv::LayerKind;
use dsgc::train::TrainReport;
use dsgc::Error;

fn sim_config(dir: &Path, out: &str) -> RunConfig {
    let json = format!(
        r#"{{
            "dataset": "{}",
            "output_dir": "{}",
            "seeds": [1, 2],
            "train": {{ "optimizer": "adam", "lr": 0.01, "epochs": 3, "batch_size": 16 }},
            "models": [
                {{ "label": "gc", "preset": "sim", "operator": "gc" }},
                {{ "label": "dsgc", "preset": "sim", "operator": "dsgc" }}
            ]
        }}"#,
        dir.join("sim.json").display(),
        dir.join(out).display()
    );
    RunConfig::from_json(&json).unwrap()
}

fn write_sim(dir: &Path) {
    gen_sim_dataset(&SimTask::new(SimKind::Shift, 8, 8, 48, 3))
        .unwrap()
        .write(&dir.join("sim.json"))
        .unwrap();
}

fn without_clock(mut r: TrainReport) -> TrainReport {
    r.wall_seconds = 0.0;
    r
}

#[test]
fn sim_presets_have_matched_budgets_and_rerun_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    write_sim(dir.path());
    let first = run_experiment(&sim_config(dir.path(), "a")).unwrap();
    assert_eq!(first.reports.len(), 4);
    let gc = first.summary_for("gc").unwrap().param_count as f64;
    let dsgc = first.summary_for("dsgc").unwrap().param_count as f64;
    assert!((dsgc / gc - 1.0).abs() <= 0.1, "gc {gc} vs dsgc {dsgc}");

    let second = run_experiment(&sim_config(dir.path(), "b")).unwrap();
    for (a, b) in first.reports.iter().zip(&second.reports) {
        assert_eq!(without_clock(a.clone()), without_clock(b.clone()));
        assert_eq!(
            without_clock(a.clone()).to_json().unwrap().as_bytes(),
            without_clock(b.clone()).to_json().unwrap().as_bytes()
        );
    }

    let out = dir.path().join("a");
    for name in ["gc-s1.report.json", "gc-s1.curve.csv", "dsgc-s2.model.json", "dsgc-s2.model.bin", "summary.json"] {
        assert!(out.join(name).exists(), "missing {name}");
    }
    assert_eq!(run_stem(&out, "gc", 1), out.join("gc-s1"));
    let loaded = load_reports(&out).unwrap();
    assert_eq!(loaded.len(), 4);
}

#[test]
fn parallel_runs_match_sequential_ones() {
    let dir = tempfile::tempdir().unwrap();
    write_sim(dir.path());
    let seq = run_experiment(&sim_config(dir.path(), "seq")).unwrap();
    let mut cfg = sim_config(dir.path(), "par");
    cfg.parallel = 3;
    let par = run_experiment(&cfg).unwrap();
    for (a, b) in seq.reports.iter().zip(&par.reports) {
        assert_eq!(without_clock(a.clone()), without_clock(b.clone()));
    }
}

#[test]
fn missing_dataset_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let err = run_experiment(&sim_config(dir.path(), "out")).unwrap_err();
    assert!(matches!(err, Error::Io { .. }), "{err}");
    assert_eq!(dsgc::bench::exit_code(&err), 2);
}

#[test]
fn config_errors_are_rejected_with_positions() {
    let unknown = r#"{
  "dataset": "d.json",
  "output_dir": "o",
  "train": { "lr": 0.1, "epochs": 2 },
  "models": [ { "label": "x", "preset": "sim", "operator": "gc" } ],
  "colour": 3
}"#;
    let err = RunConfig::from_json(unknown).unwrap_err();
    assert!(err.to_string().contains("line 6"), "{err}");
    assert_eq!(dsgc::bench::exit_code(&err), 2);

    let base = |models: &str, extra: &str| {
        format!(
            r#"{{"dataset":"d","output_dir":"o","train":{{"lr":0.1,"epochs":2}},"models":{models}{extra}}}"#
        )
    };
    for (models, extra) in [
        ("[]", ""),
        (r#"[{"label":"a","preset":"sim"}]"#, ""),
        (r#"[{"label":"a"}]"#, ""),
        (r#"[{"label":"a","preset":"sim","operator":"gc"},{"label":"a","preset":"sim","operator":"gc"}]"#, ""),
        (r#"[{"label":"a/b","preset":"sim","operator":"gc"}]"#, ""),
        (r#"[{"label":"a","preset":"sim","operator":"gc"}]"#, r#","seeds":[]"#),
        (r#"[{"label":"a","preset":"sim","operator":"gc"}]"#, r#","forecast":{"window":0}"#),
    ] {
        let err = RunConfig::from_json(&base(models, extra)).unwrap_err();
        assert_eq!(dsgc::bench::exit_code(&err), 2, "{models}{extra}: {err}");
    }
}

#[test]
fn stat_uses_the_sample_standard_deviation() {
    let s = Stat::of(&[1.0, 2.0, 3.0, 4.0]);
    assert_eq!(s.mean, 2.5);
    assert!((s.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    assert_eq!(Stat::of(&[7.0]).std, 0.0);
    assert!(Stat::of(&[]).mean.is_nan());
}

#[test]
fn summaries_group_by_label_in_order() {
    let rep = |label: &str, seed: u64, loss: f64, test: Option<f64>| TrainReport {
        version: "v1".into(),
        label: label.into(),
        seed,
        precision: Default::default(),
        param_count: 10,
        epochs: 1,
        train_loss: vec![loss],
        val_metric: vec![],
        best_epoch: 0,
        test_metric: test,
        wall_seconds: 0.0,
    };
    let s = summarize(&[
        rep("b", 0, 1.0, Some(0.5)),
        rep("a", 0, 2.0, None),
        rep("b", 1, 3.0, Some(1.5)),
    ]);
    assert_eq!(s.len(), 2);
    assert_eq!(s[0].label, "b");
    assert_eq!(s[0].seeds, vec![0, 1]);
    assert_eq!(s[0].final_train_loss.mean, 2.0);
    assert_eq!(s[0].test_metric.unwrap().mean, 1.0);
    assert!(s[1].test_metric.is_none());
}

#[test]
fn gradcheck_examples_pass() {
    let dsgc = GradTarget {
        kind: LayerKind::Dsgc,
        gat: false,
    };
    let sizes = GradSizes {
        p: 3,
        q: 4,
        groups: 2,
        nodes: 12,
        ..GradSizes::default()
    };
    let r = gradcheck(dsgc, sizes, 5).unwrap();
    assert!(r.passed(), "{r:?}");

    for gat in [false, true] {
        let monet = GradTarget {
            kind: LayerKind::Monet,
            gat,
        };
        let r = gradcheck(monet, GradSizes { kernels: 2, ..sizes }, 5).unwrap();
        assert!(r.passed(), "{r:?}");
        for g in ["mu", "log_var", "u0", "u1", "input"] {
            assert!(r.groups.iter().any(|x| x.group == g), "no group {g}");
        }
    }

    let cheby = GradTarget {
        kind: LayerKind::Cheby,
        gat: false,
    };
    let r = gradcheck(cheby, GradSizes { kernels: 3, ..sizes }, 5).unwrap();
    assert!(r.passed(), "{r:?}");
    assert_eq!(r.groups.len(), 4);
}

#[test]
fn gradcheck_targets_parse() {
    assert_eq!("monet-gat".parse::<GradTarget>().unwrap().to_string(), "monet-gat");
    assert_eq!("cheby".parse::<GradTarget>().unwrap().kind, LayerKind::Cheby);
    assert!("gc-gat".parse::<GradTarget>().is_err());
    assert_eq!(GradTarget::all().len(), LayerKind::ALL.len() + 1);
}
