mod common;

use common::oracles::{dsc_oracle, dsgc_oracle, flat, full_oracle, gc_oracle, matmul, monet_oracle};
use common::{max_abs, random_coords, random_tensor, rng};
use dsgc::conv::{
    bind, ChebyLayer, ConvLayer, DscLayer, DsgcLayer, FullConvLayer, GcLayer, GraphLevel, GridStencil, MonetLayer,
};
use dsgc::graph::{knn_build, knn_build_periodic, NeighborGraph, NodeCoordinates};
use dsgc::tensor::{Parameter, Tape, Tensor};

fn randomize(params: Vec<&mut Parameter<f64>>, seed: u64) {
    for (i, p) in params.into_iter().enumerate() {
        let shape = p.value().shape().to_vec();
        p.set_value(random_tensor(&mut rng(seed + i as u64 * 101), &shape, 0.8)).unwrap();
    }
}

fn run(layer: &ConvLayer<f64>, level: &GraphLevel<f64>, x: &Tensor<f64>) -> Tensor<f64> {
    let mut tape = Tape::new();
    let p = bind(&mut tape, &layer.params());
    let xv = tape.constant(x.clone());
    let y = layer.forward(&mut tape, &p, level, xv).unwrap();
    tape.value(y).clone()
}

fn random_level(seed: u64, n: usize, k: usize) -> (NeighborGraph, GraphLevel<f64>) {
    let g = knn_build(&random_coords(&mut rng(seed), n, 3.0), k).unwrap();
    (g.clone(), GraphLevel::new(g))
}

#[test]
fn dsgc_matches_nested_loop_oracle() {
    let (g, level) = random_level(1, 14, 5);
    for (c, normalize) in [(1, true), (2, true), (6, true), (3, false)] {
        let mut l = DsgcLayer::new(&mut rng(2), 4, 6, c, 7, normalize).unwrap();
        randomize(l.params_mut(), 3);
        let x = random_tensor(&mut rng(4), &[14, 4], 1.0);
        let y = run(&ConvLayer::Dsgc(l.clone()), &level, &x);
        assert!(max_abs(y.data(), &dsgc_oracle(&l, &g, &x)) < 1e-12, "C = {c}");
    }
}

#[test]
fn batched_forward_equals_per_graph_forward() {
    let (_, level) = random_level(5, 10, 4);
    let mut l = DsgcLayer::new(&mut rng(6), 3, 4, 2, 5, true).unwrap();
    randomize(l.params_mut(), 7);
    let layer = ConvLayer::Dsgc(l);
    let x = random_tensor(&mut rng(8), &[30, 3], 1.0);
    let y = run(&layer, &level, &x);
    for b in 0..3 {
        let xb = Tensor::matrix(10, 3, x.data()[b * 30..(b + 1) * 30].to_vec()).unwrap();
        assert!(max_abs(&y.data()[b * 40..(b + 1) * 40], run(&layer, &level, &xb).data()) < 1e-12);
    }
}

#[test]
fn channels_in_one_group_share_their_filter() {
    let (_, level) = random_level(9, 12, 4);
    let mut l = DsgcLayer::new(&mut rng(10), 2, 4, 2, 6, true).unwrap();
    randomize(l.params_mut(), 11);
    // U copies input channel 0 into output channels 0, 1 and input 1 into 2, 3
    l.u_mut()
        .set_value(Tensor::matrix(2, 4, vec![1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0]).unwrap())
        .unwrap();
    let x = random_tensor(&mut rng(12), &[12, 2], 1.0);
    let y = run(&ConvLayer::Dsgc(l), &level, &x);
    for i in 0..12 {
        assert_eq!(y.at(i, 0), y.at(i, 1));
        assert_eq!(y.at(i, 2), y.at(i, 3));
    }
    assert!((0..12).any(|i| (y.at(i, 0) - y.at(i, 2)).abs() > 1e-6));
}

#[test]
fn dsgc_is_permutation_equivariant() {
    let coords = random_coords(&mut rng(13), 16, 3.0);
    let perm: Vec<usize> = {
        use rand::seq::SliceRandom;
        let mut p: Vec<usize> = (0..16).collect();
        p.shuffle(&mut rng(14));
        p
    };
    // node `a` of the permuted cloud is node `perm[a]` of the original
    let permuted = NodeCoordinates::new(perm.iter().map(|&i| coords.get(i)).collect()).unwrap();
    let level = GraphLevel::new(knn_build(&coords, 5).unwrap());
    let plevel = GraphLevel::new(knn_build(&permuted, 5).unwrap());
    let mut l = DsgcLayer::new(&mut rng(15), 3, 4, 2, 6, true).unwrap();
    randomize(l.params_mut(), 16);
    let layer = ConvLayer::Dsgc(l);
    let x = random_tensor(&mut rng(17), &[16, 3], 1.0);
    let xr = &x;
    let px = Tensor::matrix(16, 3, perm.iter().flat_map(|&i| (0..3).map(move |c| xr.at(i, c))).collect()).unwrap();
    let y = run(&layer, &level, &x);
    let py = run(&layer, &plevel, &px);
    for (a, &i) in perm.iter().enumerate() {
        for q in 0..4 {
            assert!((py.at(a, q) - y.at(i, q)).abs() < 1e-12);
        }
    }
}

#[test]
fn gc_matches_dense_product() {
    let (g, level) = random_level(18, 15, 6);
    let mut l = GcLayer::new(&mut rng(19), 3, 5);
    randomize(l.params_mut(), 20);
    let x = random_tensor(&mut rng(21), &[15, 3], 1.0);
    let expect = gc_oracle(&g, l.params()[0].value(), &x);
    assert!(max_abs(run(&ConvLayer::Gc(l), &level, &x).data(), &expect) < 1e-12);
}

#[test]
fn label_propagation_averages_neighbors() {
    let (g, level) = random_level(22, 11, 3);
    let x = random_tensor(&mut rng(23), &[11, 2], 1.0);
    let y = run(&ConvLayer::Lp, &level, &x);
    for i in 0..11 {
        for c in 0..2 {
            let mean = g.neighbors(i).iter().map(|&j| x.at(j, c)).sum::<f64>() / 3.0;
            assert!((y.at(i, c) - mean).abs() < 1e-12);
        }
    }
}

#[test]
fn monet_matches_nested_loop_oracle() {
    let (g, level) = random_level(24, 13, 5);
    for gat in [false, true] {
        let mut l = MonetLayer::new(&mut rng(25), 3, 4, 3, gat).unwrap();
        randomize(l.params_mut(), 26);
        let x = random_tensor(&mut rng(27), &[13, 3], 1.0);
        let y = run(&ConvLayer::Monet(l.clone()), &level, &x);
        assert!(max_abs(y.data(), &monet_oracle(&l, &g, &x)) < 1e-12, "gat = {gat}");
    }
}

#[test]
fn cheby_order_one_is_a_channel_map() {
    let (_, level) = random_level(28, 9, 3);
    let mut l = ChebyLayer::new(&mut rng(29), 2, 3, 1, 9).unwrap();
    randomize(l.params_mut(), 30);
    let x = random_tensor(&mut rng(31), &[9, 2], 1.0);
    let expect = flat(&matmul(&x, l.params()[0].value()));
    assert!(max_abs(run(&ConvLayer::Cheby(l), &level, &x).data(), &expect) < 1e-12);
}

#[test]
fn cheby_rejects_a_graph_of_another_size() {
    let (_, level) = random_level(32, 9, 3);
    let l = ChebyLayer::<f64>::new(&mut rng(33), 2, 3, 2, 10).unwrap();
    let layer = ConvLayer::Cheby(l);
    let mut tape = Tape::new();
    let p = bind(&mut tape, &layer.params());
    let x = tape.constant(Tensor::zeros(&[9, 2]));
    assert!(layer.forward(&mut tape, &p, &level, x).is_err());
}

fn torus(h: usize, w: usize) -> GraphLevel<f64> {
    GraphLevel::new(knn_build_periodic(&NodeCoordinates::grid(h, w), 9, [w as f64, h as f64]).unwrap())
}

#[test]
fn dsc_with_one_hot_table_shifts_the_image() {
    let (h, w) = (4, 5);
    let level = torus(h, w);
    let x = random_tensor(&mut rng(34), &[h * w, 2], 1.0);
    // Δ = c_i − c_j = (1, 0): every node reads its left neighbor
    let col = GridStencil::index(1, 0).unwrap();
    let mut table = vec![0.0; 2 * 9];
    table[col] = 1.0;
    table[9 + col] = 1.0;
    let l = DscLayer::from_parts(Tensor::identity(2), Tensor::matrix(2, 9, table).unwrap());
    let y = run(&ConvLayer::Dsc(l), &level, &x);
    for r in 0..h {
        for c in 0..w {
            let src = r * w + (c + w - 1) % w;
            for ch in 0..2 {
                assert_eq!(y.at(r * w + c, ch), x.at(src, ch));
            }
        }
    }
}

#[test]
fn dsc_with_center_table_is_identity() {
    let level = torus(3, 4);
    let mut table = vec![0.0; 3 * 9];
    for q in 0..3 {
        table[q * 9 + GridStencil::CENTER] = 1.0;
    }
    let l = DscLayer::from_parts(Tensor::identity(3), Tensor::matrix(3, 9, table).unwrap());
    let x = random_tensor(&mut rng(35), &[12, 3], 1.0);
    assert_eq!(run(&ConvLayer::Dsc(l), &level, &x).data(), x.data());
}

#[test]
fn dsc_matches_nested_loop_oracle() {
    let (h, w) = (3, 5);
    let level = torus(h, w);
    let g = level.graph().clone();
    let mut l = DscLayer::new(&mut rng(36), 2, 3);
    randomize(l.params_mut(), 37);
    let x = random_tensor(&mut rng(38), &[h * w, 2], 1.0);
    let p = l.params();
    let expect = dsc_oracle(&g, p[0].value(), p[1].value(), &x);
    assert!(max_abs(run(&ConvLayer::Dsc(l), &level, &x).data(), &expect) < 1e-12);
}

#[test]
fn full_conv_with_center_block_only_is_one_by_one() {
    let level = torus(4, 4);
    let m = random_tensor(&mut rng(39), &[3, 2], 1.0);
    let blocks: Vec<Tensor<f64>> = (0..9)
        .map(|r| if r == GridStencil::CENTER { m.clone() } else { Tensor::zeros(&[3, 2]) })
        .collect();
    let l = FullConvLayer::from_blocks(&blocks).unwrap();
    let x = random_tensor(&mut rng(40), &[16, 3], 1.0);
    assert!(max_abs(run(&ConvLayer::Full(l), &level, &x).data(), &flat(&matmul(&x, &m))) < 1e-12);
}

#[test]
fn full_conv_matches_nested_loop_oracle() {
    let level = torus(3, 3);
    let g = level.graph().clone();
    let mut l = FullConvLayer::new(&mut rng(41), 2, 3);
    randomize(l.params_mut(), 42);
    let x = random_tensor(&mut rng(43), &[9, 2], 1.0);
    let expect = full_oracle(&g, &l, &x);
    assert!(max_abs(run(&ConvLayer::Full(l), &level, &x).data(), &expect) < 1e-12);
}

#[test]
fn grid_operators_reject_off_grid_graphs() {
    let (_, level) = random_level(44, 12, 9);
    let layer = ConvLayer::Dsc(DscLayer::<f64>::new(&mut rng(45), 2, 2));
    let mut tape = Tape::new();
    let p = bind(&mut tape, &layer.params());
    let x = tape.constant(Tensor::zeros(&[12, 2]));
    assert!(layer.forward(&mut tape, &p, &level, x).is_err());
}

#[test]
fn groups_must_divide_output_channels() {
    assert!(DsgcLayer::<f64>::new(&mut rng(46), 3, 6, 4, 5, true).is_err());
}

#[test]
fn fresh_filter_is_uniform_over_each_neighborhood() {
    let (g, level) = random_level(47, 10, 5);
    let l = DsgcLayer::<f64>::new(&mut rng(48), 2, 2, 1, 8, true).unwrap();
    let gc = GcLayer::from_u(l.u().value().clone());
    let x = random_tensor(&mut rng(49), &[10, 2], 1.0);
    let a = run(&ConvLayer::Dsgc(l), &level, &x);
    let b = run(&ConvLayer::Gc(gc), &level, &x);
    assert!(a.max_abs_diff(&b) < 1e-12);
    assert_eq!(g.k(), 5);
}
