mod common;

use common::{random_coords, random_tensor, rng};
use dsgc::bench::{gen_sim_dataset, SimKind, SimTask};
use dsgc::conv::LayerKind;
use dsgc::graph::{knn_build, NodeCoordinates};
use dsgc::model::{build_model, sim_task_preset, Activation, GraphStack, HeadSpec, ModelSpec};
use dsgc::tensor::{Optimizer, OptimizerKind};
use dsgc::train::{
    bce_loss, cross_entropy_loss, rmse, train_loop, train_step, ForecastProblem, SampleSet, SeriesSplit, Targets,
    TaskData, TimeSeries, TrainConfig, TrainReport,
};
use dsgc::Error;
use rand::Rng;

#[test]
fn bce_examples() {
    assert!((bce_loss(&[0.5], &[1.0]).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
    assert!(bce_loss(&[1.0, 0.0, 1.0], &[1.0, 0.0, 1.0]).unwrap() <= 1e-6);
    assert!(matches!(bce_loss(&[0.5], &[0.3]), Err(Error::Contract(_))));
}

#[test]
fn cross_entropy_examples() {
    let uniform = vec![0.0; 10];
    assert!((cross_entropy_loss(&uniform, 10, &[3]).unwrap() - 10f64.ln()).abs() < 1e-12);
    let mut confident = vec![0.0; 4];
    confident[2] = 60.0;
    assert!(cross_entropy_loss(&confident, 4, &[2]).unwrap() < 1e-20);
    assert!(cross_entropy_loss(&uniform, 10, &[10]).is_err());
}

#[test]
fn rmse_examples() {
    let a = [1.0, -2.0, 3.5];
    assert_eq!(rmse(&a, &a).unwrap(), 0.0);
    let shifted: Vec<f64> = a.iter().map(|v| v + 2.0).collect();
    assert!((rmse(&shifted, &a).unwrap() - 2.0).abs() < 1e-12);
    let mut r = rng(1);
    let p: Vec<f64> = (0..50).map(|_| r.gen_range(-3.0..3.0)).collect();
    let t: Vec<f64> = (0..50).map(|_| r.gen_range(-3.0..3.0)).collect();
    let direct = (p.iter().zip(&t).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / 50.0).sqrt();
    assert!((rmse(&p, &t).unwrap() - direct).abs() < 1e-12);
}

#[test]
fn step_schedule_divides_at_milestones() {
    let cfg = TrainConfig::new(OptimizerKind::Sgd, 0.1, 100);
    let s = cfg.schedule();
    assert!((s.lr_at(0) - 0.1).abs() < 1e-15);
    assert!((s.lr_at(49) - 0.1).abs() < 1e-15);
    assert!((s.lr_at(50) - 0.01).abs() < 1e-15);
    assert!((s.lr_at(80) - 0.001).abs() < 1e-15);
}

#[test]
fn milestones_must_be_increasing_fractions() {
    let mut cfg = TrainConfig::new(OptimizerKind::Adam, 0.01, 10);
    cfg.milestones = vec![0.75, 0.5];
    assert!(cfg.validate().is_err());
    cfg.milestones = vec![0.5, 1.0];
    assert!(cfg.validate().is_err());
    cfg.milestones = vec![0.25, 0.5];
    assert!(cfg.validate().is_ok());
}

fn regression_spec(channels: usize) -> ModelSpec {
    ModelSpec {
        input_channels: channels,
        embed_dim: 0,
        layers: Vec::new(),
        pools: Vec::new(),
        head: HeadSpec::NodeRegression,
        head_activation: Activation::None,
    }
}

#[test]
fn sgd_recovers_the_slope_of_a_line() {
    let stack = GraphStack::<f64>::single(knn_build(&NodeCoordinates::new(vec![[0.0, 0.0]]).unwrap(), 1).unwrap());
    let xs: Vec<f64> = (0..21).map(|i| i as f64 / 10.0 - 1.0).collect();
    let set = SampleSet::new(
        1,
        1,
        xs.iter().map(|&x| vec![x]).collect(),
        Targets::NodeRegression {
            values: xs.iter().map(|&x| vec![2.0 * x]).collect(),
            mask: vec![vec![1.0]; xs.len()],
            scale: 1.0,
        },
    )
    .unwrap();
    let empty = SampleSet::new(1, 1, Vec::new(), Targets::NodeRegression { values: vec![], mask: vec![], scale: 1.0 })
        .unwrap();
    let data = TaskData {
        train: set,
        val: empty.clone(),
        test: empty,
    };
    let mut model = build_model(&regression_spec(1), &stack, 0).unwrap();
    let mut cfg = TrainConfig::new(OptimizerKind::Sgd, 0.5, 200);
    cfg.milestones.clear();
    let report = train_loop(&mut model, &stack, &data, &cfg, "line").unwrap();
    assert!((model.params()[0].value().data()[0] - 2.0).abs() < 1e-3);
    assert_eq!(report.train_loss.len(), 200);
    assert_eq!(report.val_metric.len(), 200);
    assert_eq!(report.test_metric, None);
}

fn sim_data(samples: usize) -> (GraphStack<f64>, TaskData) {
    let task = SimTask::new(SimKind::Shift, 4, 4, samples, 3);
    let file = gen_sim_dataset(&task).unwrap();
    (GraphStack::single(file.neighbor_graph().unwrap()), file.task_data().unwrap())
}

#[test]
fn same_seed_gives_bitwise_identical_reports() {
    let (stack, data) = sim_data(24);
    let spec = sim_task_preset(LayerKind::Dsgc, 4, 4);
    let mut cfg = TrainConfig::new(OptimizerKind::Adam, 0.01, 4);
    cfg.batch_size = Some(8);
    cfg.seed = 5;
    let run = || {
        let mut m = build_model(&spec, &stack, 5).unwrap();
        train_loop(&mut m, &stack, &data, &cfg, "det").unwrap()
    };
    let (a, b) = (run(), run());
    let bits = |r: &TrainReport| r.train_loss.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(a.val_metric, b.val_metric);
}

#[test]
fn small_sgd_step_does_not_increase_a_frozen_batch_loss() {
    let (stack, data) = sim_data(16);
    for kind in [LayerKind::Dsgc, LayerKind::Gc, LayerKind::Monet, LayerKind::Cheby] {
        let spec = sim_task_preset(kind, 4, 4);
        let mut model = build_model(&spec, &stack, 2).unwrap();
        let idx: Vec<usize> = (0..16).collect();
        let mut opt = Optimizer::sgd(1e-4);
        let before = train_step(&mut model, &stack, &data.train, &idx, &mut opt, 0).unwrap();
        let after = train_step(&mut model, &stack, &data.train, &idx, &mut opt, 0).unwrap();
        assert!(after <= before, "{kind}: {before} -> {after}");
    }
}

#[test]
fn report_serializes_with_matching_curve() {
    let (stack, data) = sim_data(8);
    let mut model = build_model(&sim_task_preset(LayerKind::Gc, 4, 4), &stack, 0).unwrap();
    let report = train_loop(&mut model, &stack, &data, &TrainConfig::new(OptimizerKind::Adam, 0.01, 3), "gc").unwrap();
    let back = TrainReport::from_json(&report.to_json().unwrap()).unwrap();
    assert_eq!(back, report);
    let csv = report.curve_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "epoch,train_loss,val_metric");
    assert_eq!(lines.len(), 4);
}

#[test]
fn non_finite_loss_is_reported_with_its_epoch() {
    let coords = random_coords(&mut rng(4), 6, 2.0);
    let stack = GraphStack::<f64>::single(knn_build(&coords, 3).unwrap());
    let mut r = rng(5);
    let inputs: Vec<Vec<f64>> = (0..10).map(|_| (0..6).map(|_| r.gen_range(-1e3..1e3)).collect()).collect();
    let values: Vec<Vec<f64>> = inputs.iter().map(|x| x.iter().map(|v| -v).collect()).collect();
    let set = SampleSet::new(6, 1, inputs, Targets::NodeRegression { values, mask: vec![vec![1.0; 6]; 10], scale: 1.0 })
        .unwrap();
    let data = TaskData {
        train: set.clone(),
        val: set.clone(),
        test: set,
    };
    let mut model = build_model(&regression_spec(1), &stack, 0).unwrap();
    let cfg = TrainConfig::new(OptimizerKind::Sgd, 1e6, 50);
    match train_loop(&mut model, &stack, &data, &cfg, "boom") {
        Err(Error::Divergence { epoch, .. }) => assert!(epoch < 50),
        other => panic!("expected divergence, got {other:?}"),
    }
}

fn ramp_series(steps: usize, nodes: usize) -> TimeSeries {
    let mut r = rng(6);
    let values = (0..steps * nodes).map(|_| r.gen_range(-1.0..1.0)).collect();
    TimeSeries::fully_observed(steps, nodes, values).unwrap()
}

#[test]
fn chronological_split_is_sixty_twenty_twenty() {
    let s = SeriesSplit::chronological(2000);
    assert_eq!((s.train.clone(), s.val.clone(), s.test.clone()), (0..1200, 1200..1600, 1600..2000));
}

#[test]
fn persistence_equals_one_step_difference_rms() {
    let series = ramp_series(100, 3);
    let problem = ForecastProblem::new(series.clone(), 4, false).unwrap();
    let test = problem.split.test.clone();
    let mut ss = 0.0;
    let mut count = 0;
    for t in test.clone() {
        for i in 0..3 {
            ss += (series.at(t, i).unwrap() - series.at(t - 1, i).unwrap()).powi(2);
            count += 1;
        }
    }
    let direct = (ss / count as f64).sqrt();
    assert!((problem.persistence_rmse(test).unwrap() - direct).abs() < 1e-12);
}

#[test]
fn mask_channel_marks_exactly_the_missing_points() {
    let (steps, nodes) = (40, 5);
    let mut r = rng(7);
    let values: Vec<f64> = (0..steps * nodes).map(|_| r.gen_range(-1.0..1.0)).collect();
    let observed: Vec<bool> = (0..steps * nodes).map(|_| r.gen_bool(0.8)).collect();
    let series = TimeSeries::new(steps, nodes, values, observed.clone()).unwrap();
    let problem = ForecastProblem::new(series, 3, true).unwrap();
    let set = problem.samples(3..steps).unwrap();
    assert_eq!(set.channels, 4);
    for (s, x) in set.inputs.iter().enumerate() {
        let t = s + 3;
        for i in 0..nodes {
            let missing = !observed[(t - 1) * nodes + i];
            assert_eq!(x[i * 4 + 3], f64::from(u8::from(missing)));
            for w in 0..3 {
                if !observed[(t - 3 + w) * nodes + i] {
                    assert_eq!(x[i * 4 + w], 0.0);
                }
            }
        }
    }
}

#[test]
fn short_history_is_skipped() {
    let problem = ForecastProblem::new(ramp_series(30, 2), 5, false).unwrap();
    assert_eq!(problem.samples(0..10).unwrap().len(), 5);
}

#[test]
fn constant_series_is_learned_exactly() {
    let series = TimeSeries::fully_observed(60, 4, vec![3.25; 240]).unwrap();
    let problem = ForecastProblem::new(series, 2, false).unwrap();
    let data = problem.task_data().unwrap();
    let stack = GraphStack::<f64>::single(knn_build(&random_coords(&mut rng(8), 4, 2.0), 2).unwrap());
    let mut model = build_model(&regression_spec(2), &stack, 0).unwrap();
    let mut cfg = TrainConfig::new(OptimizerKind::Sgd, 0.5, 100);
    cfg.milestones.clear();
    train_loop(&mut model, &stack, &data, &cfg, "const").unwrap();
    assert!(dsgc::train::rolling_forecast_eval(&model, &stack, &problem).unwrap() < 1e-6);
}

#[test]
fn batch_input_stacks_samples_in_order() {
    let x = random_tensor(&mut rng(9), &[3, 4], 1.0);
    let inputs: Vec<Vec<f64>> = (0..3).map(|s| x.data()[s * 4..(s + 1) * 4].to_vec()).collect();
    let set = SampleSet::new(2, 2, inputs, Targets::Class(vec![0, 1, 0])).unwrap();
    let b = set.batch_input::<f64>(&[2, 0]);
    assert_eq!(b.shape(), &[4, 2]);
    assert_eq!(&b.data()[..4], &x.data()[8..12]);
    assert_eq!(&b.data()[4..], &x.data()[..4]);
}
