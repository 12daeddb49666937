mod common;

use common::{random_coords, random_tensor, rng};
use dsgc::conv::LayerKind;
use dsgc::graph::{kmeans_coarsen, knn_build, knn_build_periodic, NodeCoordinates};
use dsgc::model::{
    build_model, doc_classify_preset, grid_classify_preset, sim_task_preset, ts_forecast_preset, Activation,
    GraphStack, HeadSpec, LayerSpec, Mode, Model, ModelSpec, PoolSpec,
};
use dsgc::tensor::{PoolMode, Real, Tape, Tensor};
use dsgc::Error;

fn sim_stack<T: Real>() -> GraphStack<T> {
    GraphStack::single(knn_build_periodic(&NodeCoordinates::grid(8, 8), 9, [8.0, 8.0]).unwrap())
}

fn forward<T: Real>(model: &Model<T>, stack: &GraphStack<T>, x: &Tensor<T>, mode: Mode) -> Vec<T> {
    let mut tape = Tape::new();
    let f = model.forward(&mut tape, stack, x.clone(), mode).unwrap();
    tape.value(f.output).data().to_vec()
}

fn layer_of(e: Error) -> Option<usize> {
    match e {
        Error::Config { layer, .. } => layer,
        other => panic!("expected a configuration error, got {other}"),
    }
}

#[test]
fn sim_presets_have_three_tanh_layers_with_k_nine() {
    for kind in [LayerKind::Dsgc, LayerKind::Gc] {
        let s = sim_task_preset(kind, 8, 8);
        assert_eq!(s.layers.len(), 3);
        assert!(s.layers.iter().all(|l| l.k == Some(9) && l.activation == Activation::Tanh));
        assert_eq!(s.head, HeadSpec::NodeSigmoid);
        assert!(s.pools.is_empty());
    }
}

#[test]
fn sim_presets_have_matched_budgets() {
    let dsgc = sim_task_preset(LayerKind::Dsgc, 8, 8).param_count(&[64]) as f64;
    for kind in [LayerKind::Gc, LayerKind::Mpnn, LayerKind::Monet, LayerKind::Cheby, LayerKind::Dsc, LayerKind::Full] {
        let other = sim_task_preset(kind, 8, 8).param_count(&[64]) as f64;
        let ratio = other / dsgc;
        assert!((0.9..=1.1).contains(&ratio), "{kind}: ratio {ratio}");
    }
}

#[test]
fn forecast_presets_count_input_channels() {
    assert_eq!(ts_forecast_preset(LayerKind::Dsgc, 6, 0, true).first_layer_inputs(), 7);
    assert_eq!(ts_forecast_preset(LayerKind::Dsgc, 18, 4, false).first_layer_inputs(), 22);
    assert_eq!(ts_forecast_preset(LayerKind::Gc, 9, 0, false).first_layer_inputs(), 9);
    let s = ts_forecast_preset(LayerKind::Dsgc, 6, 4, true);
    assert_eq!(s.layers.len(), 7);
    assert_eq!(s.head, HeadSpec::NodeRegression);
    let gc = ts_forecast_preset(LayerKind::Gc, 6, 4, true).param_count(&[50]) as f64;
    let ratio = gc / s.param_count(&[50]) as f64;
    assert!((0.9..=1.1).contains(&ratio), "ratio {ratio}");
}

#[test]
fn empty_stack_with_node_head_is_logistic_regression() {
    let spec = ModelSpec {
        input_channels: 3,
        embed_dim: 0,
        layers: Vec::new(),
        pools: Vec::new(),
        head: HeadSpec::NodeSigmoid,
        head_activation: Activation::None,
    };
    let stack = GraphStack::<f64>::single(knn_build(&random_coords(&mut rng(1), 5, 2.0), 2).unwrap());
    let model = build_model(&spec, &stack, 3).unwrap();
    assert_eq!(model.num_params(), 4);
    let x = random_tensor(&mut rng(2), &[5, 3], 1.0);
    let y = model.predict(&stack, x.clone()).unwrap();
    let p = model.params();
    let (w, b) = (p[0].value(), p[1].value());
    for i in 0..5 {
        let z: f64 = (0..3).map(|c| x.at(i, c) * w.at(c, 0)).sum::<f64>() + b.data()[0];
        assert!((y.data()[i] - 1.0 / (1.0 + (-z).exp())).abs() < 1e-12);
    }
}

#[test]
fn channel_mismatch_names_the_layer() {
    let mut spec = sim_task_preset(LayerKind::Dsgc, 8, 8);
    spec.layers[2].in_channels = 5;
    assert_eq!(layer_of(build_model::<f64>(&spec, &sim_stack(), 0).unwrap_err()), Some(2));
}

#[test]
fn neighborhood_size_mismatch_names_the_layer() {
    let mut spec = sim_task_preset(LayerKind::Gc, 8, 8);
    spec.layers[1].k = Some(5);
    assert_eq!(layer_of(build_model::<f64>(&spec, &sim_stack(), 0).unwrap_err()), Some(1));
}

#[test]
fn wrong_coarsening_size_is_rejected() {
    let spec = grid_classify_preset(LayerKind::Dsgc, 1, 4, &[5, 4], 4, 3);
    let coords = random_coords(&mut rng(3), 40, 4.0);
    let base = knn_build(&coords, 5).unwrap();
    // 40 nodes with factor 4 should give 10 clusters, not 8
    let map = kmeans_coarsen(&coords, 8, 0, PoolMode::Max).unwrap();
    let coarse = knn_build(&map.centroids(), 4).unwrap();
    let stack = GraphStack::<f64>::from_parts(vec![base, coarse], vec![map]).unwrap();
    assert_eq!(layer_of(build_model(&spec, &stack, 0).unwrap_err()), Some(0));
}

#[test]
fn grid_operators_need_grid_graphs() {
    let spec = sim_task_preset(LayerKind::Dsc, 8, 8);
    let planar = GraphStack::<f64>::single(knn_build(&random_coords(&mut rng(4), 64, 8.0), 9).unwrap());
    assert_eq!(layer_of(build_model(&spec, &planar, 0).unwrap_err()), Some(0));
    assert!(build_model::<f64>(&spec, &sim_stack(), 0).is_ok());
}

#[test]
fn bad_groups_and_dropout_are_rejected() {
    let mut spec = sim_task_preset(LayerKind::Dsgc, 8, 8);
    spec.layers[1].groups = 3;
    assert_eq!(layer_of(spec.validate().unwrap_err()), Some(1));
    let mut spec = sim_task_preset(LayerKind::Dsgc, 8, 8);
    spec.layers[0].dropout = 1.0;
    assert_eq!(layer_of(spec.validate().unwrap_err()), Some(0));
}

#[test]
fn dropout_is_active_only_in_training() {
    let stack = sim_stack::<f64>();
    let mut spec = sim_task_preset(LayerKind::Dsgc, 8, 8);
    let x = random_tensor(&mut rng(5), &[128, 1], 1.0);
    let plain = build_model(&spec, &stack, 7).unwrap();
    let a = forward(&plain, &stack, &x, Mode::Train(1));
    assert_eq!(a, forward(&plain, &stack, &x, Mode::Eval));

    for l in &mut spec.layers {
        l.dropout = 0.5;
    }
    let dropped = build_model(&spec, &stack, 7).unwrap();
    assert_eq!(forward(&dropped, &stack, &x, Mode::Eval), a);
    let t1 = forward(&dropped, &stack, &x, Mode::Train(1));
    assert_eq!(t1, forward(&dropped, &stack, &x, Mode::Train(1)));
    assert_ne!(t1, a);
    assert_ne!(t1, forward(&dropped, &stack, &x, Mode::Train(2)));
}

#[test]
fn model_is_permutation_equivariant_without_pooling() {
    let coords = random_coords(&mut rng(6), 20, 4.0);
    let perm: Vec<usize> = (0..20).map(|i| (i * 7 + 3) % 20).collect();
    let permuted = NodeCoordinates::new(perm.iter().map(|&i| coords.get(i)).collect()).unwrap();
    let stack = GraphStack::<f64>::single(knn_build(&coords, 6).unwrap());
    let pstack = GraphStack::<f64>::single(knn_build(&permuted, 6).unwrap());
    let mut spec = sim_task_preset(LayerKind::Dsgc, 4, 5);
    for l in &mut spec.layers {
        l.k = Some(6);
    }
    let mut model = build_model(&spec, &stack, 8).unwrap();
    for (i, p) in model.params_mut().into_iter().enumerate() {
        let shape = p.value().shape().to_vec();
        p.set_value(random_tensor(&mut rng(100 + i as u64), &shape, 0.5)).unwrap();
    }
    let x = random_tensor(&mut rng(9), &[20, 1], 1.0);
    let px = Tensor::matrix(20, 1, perm.iter().map(|&i| x.at(i, 0)).collect()).unwrap();
    let y = model.predict(&stack, x).unwrap();
    let py = model.predict(&pstack, px).unwrap();
    for (a, &i) in perm.iter().enumerate() {
        assert!((py.data()[a] - y.data()[i]).abs() < 1e-12);
    }
}

#[test]
fn pooled_classifier_emits_one_row_per_sample() {
    let spec = grid_classify_preset(LayerKind::Dsgc, 1, 8, &[9, 5], 4, 4);
    let base = knn_build(&random_coords(&mut rng(10), 48, 6.0), 9).unwrap();
    let stack = GraphStack::<f64>::for_spec(&spec, base, 0).unwrap();
    assert_eq!(stack.nodes_per_level(), vec![48, 12]);
    let model = build_model(&spec, &stack, 0).unwrap();
    assert_eq!(model.num_params(), spec.param_count(&[48, 12]));
    let y = model.predict(&stack, random_tensor(&mut rng(11), &[96, 1], 1.0)).unwrap();
    assert_eq!(y.shape(), &[2, 4]);
}

#[test]
fn doc_preset_has_five_convs_and_two_layer_mlp() {
    let s = doc_classify_preset(LayerKind::Dsgc, 4);
    assert_eq!(s.conv_layers(), 5);
    assert!(s.layers.iter().all(|l| l.dropout == 0.5));
    match s.head {
        HeadSpec::Classifier { hidden, classes, dropout } => {
            assert_eq!(hidden.len(), 1);
            assert_eq!(classes, 4);
            assert_eq!(dropout, 0.5);
        }
        other => panic!("unexpected head {other:?}"),
    }
}

fn assert_round_trip<T: Real>(spec: &ModelSpec, stack: &GraphStack<T>, x: Tensor<T>) {
    let model = build_model(spec, stack, 21).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let stem = dir.path().join("model.v1");
    model.save(&stem).unwrap();
    let loaded = Model::load(&stem, stack).unwrap();
    let a = model.predict(stack, x.clone()).unwrap();
    let b = loaded.predict(stack, x).unwrap();
    let bits = |t: &Tensor<T>| t.data().iter().map(|v| v.to_f64_lossy().to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(model.manifest(), loaded.manifest());
}

#[test]
fn saved_models_reproduce_outputs_bitwise() {
    let stack32 = sim_stack::<f32>();
    let x32 = random_tensor(&mut rng(12), &[64, 1], 1.0).cast::<f32>();
    for kind in [LayerKind::Dsgc, LayerKind::Monet, LayerKind::Cheby, LayerKind::Full] {
        assert_round_trip(&sim_task_preset(kind, 8, 8), &stack32, x32.clone());
    }
    let coords = random_coords(&mut rng(13), 30, 4.0);
    let forecast = ts_forecast_preset(LayerKind::Dsgc, 3, 2, true);
    let stack = GraphStack::<f64>::single(knn_build(&coords, 5).unwrap());
    assert_round_trip(&forecast, &stack, random_tensor(&mut rng(14), &[60, 4], 1.0));
    let pooled = grid_classify_preset(LayerKind::Gc, 1, 4, &[5, 3], 3, 2);
    let stack = GraphStack::<f64>::for_spec(&pooled, knn_build(&coords, 5).unwrap(), 1).unwrap();
    assert_round_trip(&pooled, &stack, random_tensor(&mut rng(15), &[30, 1], 1.0));
}

#[test]
fn loading_with_the_wrong_precision_fails() {
    let spec = sim_task_preset(LayerKind::Gc, 8, 8);
    let model = build_model::<f32>(&spec, &sim_stack(), 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let stem = dir.path().join("m");
    model.save(&stem).unwrap();
    assert!(Model::<f64>::load(&stem, &sim_stack()).is_err());
}

#[test]
fn truncated_blob_is_rejected() {
    let spec = sim_task_preset(LayerKind::Gc, 8, 8);
    let stack = sim_stack::<f64>();
    let model = build_model(&spec, &stack, 0).unwrap();
    let blob = model.to_blob();
    assert!(Model::from_saved(&model.manifest(), &blob[..blob.len() - 3], &stack).is_err());
    let mut extra = blob.clone();
    extra.push(0);
    assert!(Model::from_saved(&model.manifest(), &extra, &stack).is_err());
}

#[test]
fn spec_round_trips_through_json() {
    let mut spec = grid_classify_preset(LayerKind::Monet, 2, 6, &[9, 5, 3], 4, 3);
    spec.layers[0] = LayerSpec::new(LayerKind::Monet, 2, 6).with_k(9).with_kernels(3).with_dropout(0.2);
    spec.pools[0] = PoolSpec {
        after_layer: 0,
        factor: 2,
        mode: PoolMode::Mean,
    };
    let json = serde_json::to_string(&spec).unwrap();
    assert_eq!(serde_json::from_str::<ModelSpec>(&json).unwrap(), spec);
}
