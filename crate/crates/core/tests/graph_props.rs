mod common;

use common::{random_coords, rng};
use dsgc::graph::{
    edge_offset_feature, kmeans_coarsen, knn_build, knn_build_periodic, normalized_adjacency, scaled_laplacian,
    NodeCoordinates,
};
use dsgc::tensor::PoolMode;
use proptest::prelude::*;

fn brute_force_neighbors(pts: &[[f64; 2]], i: usize, k: usize, period: Option<[f64; 2]>) -> Vec<usize> {
    let d = |a: f64, p: Option<f64>| match p {
        Some(p) => {
            let w = a.rem_euclid(p);
            w.min(p - w)
        }
        None => a.abs(),
    };
    let mut others: Vec<(f64, usize)> = (0..pts.len())
        .filter(|&j| j != i)
        .map(|j| {
            let dx = d(pts[i][0] - pts[j][0], period.map(|p| p[0]));
            let dy = d(pts[i][1] - pts[j][1], period.map(|p| p[1]));
            (dx * dx + dy * dy, j)
        })
        .collect();
    others.sort_by(|a, b| a.partial_cmp(b).unwrap());
    std::iter::once(i).chain(others.into_iter().take(k - 1).map(|(_, j)| j)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn knn_matches_brute_force(n in 1usize..=200, kk in 1usize..=12, seed in any::<u64>()) {
        let k = kk.min(n);
        let c = random_coords(&mut rng(seed), n, 10.0);
        let g = knn_build(&c, k).unwrap();
        prop_assert_eq!(g.num_edges(), n * k);
        for i in 0..n {
            prop_assert_eq!(g.neighbors(i).to_vec(), brute_force_neighbors(c.as_slice(), i, k, None));
        }
    }

    #[test]
    fn periodic_knn_matches_brute_force(n in 1usize..=120, kk in 1usize..=9, seed in any::<u64>()) {
        let k = kk.min(n);
        let c = random_coords(&mut rng(seed), n, 10.0);
        let g = knn_build_periodic(&c, k, [10.0, 10.0]).unwrap();
        for i in 0..n {
            prop_assert_eq!(g.neighbors(i).to_vec(), brute_force_neighbors(c.as_slice(), i, k, Some([10.0, 10.0])));
        }
    }

    #[test]
    fn kmeans_objective_never_increases(n in 2usize..150, frac in 0.05f64..1.0, seed in any::<u64>()) {
        let c = random_coords(&mut rng(seed), n, 5.0);
        let m = ((n as f64 * frac).ceil() as usize).clamp(1, n);
        let map = kmeans_coarsen(&c, m, seed, PoolMode::Mean).unwrap();
        let h = map.objective_history();
        prop_assert!(!h.is_empty());
        for w in h.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0), "objective rose: {:?}", h);
        }
        let mut counts = vec![0usize; m];
        for &a in map.assignment() {
            counts[a] += 1;
        }
        prop_assert!(counts.iter().all(|&n| n > 0));
        prop_assert_eq!(map.centroids().len(), m);
    }
}

#[test]
fn edges_are_grouped_by_destination_with_self_first() {
    let c = random_coords(&mut rng(3), 40, 4.0);
    let g = knn_build(&c, 6).unwrap();
    let segs = g.segments();
    assert_eq!(segs.count(), 40);
    for i in 0..40 {
        let r = segs.range(i);
        assert_eq!(r.len(), 6);
        assert!(g.edges().dst()[r.clone()].iter().all(|&d| d == i));
        assert_eq!(g.edges().src()[r.start], i);
    }
}

#[test]
fn edge_offsets_describe_destination_minus_source() {
    let c = random_coords(&mut rng(4), 25, 4.0);
    let g = knn_build(&c, 5).unwrap();
    for (e, (&s, &d)) in g.edges().src().iter().zip(g.edges().dst()).enumerate() {
        assert_eq!(g.deltas()[e], edge_offset_feature(c.get(d), c.get(s)));
    }
}

#[test]
fn periodic_offsets_take_the_short_way_round() {
    let g = knn_build_periodic(&NodeCoordinates::grid(4, 4), 9, [4.0, 4.0]).unwrap();
    // node 0 sits at (0, 0); the node at column 3 is one step to its left
    let e = g.segments().range(0).find(|&e| g.edges().src()[e] == 3).unwrap();
    assert_eq!(g.deltas()[e], [1.0, 1.0, 0.0, 0.0, 1.0]);
}

#[test]
fn uniform_adjacency_rows_sum_to_one() {
    let g = knn_build(&random_coords(&mut rng(5), 30, 3.0), 7).unwrap();
    let w = normalized_adjacency(&g);
    for r in g.segments().iter() {
        assert!((w[r].iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn laplacian_is_symmetric_with_isolated_rows_negative_identity() {
    let c = NodeCoordinates::new(vec![[0.0, 0.0], [1.0, 0.0], [5.0, 5.0]]).unwrap();
    let g = knn_build(&c, 1).unwrap();
    let l = scaled_laplacian(&g).unwrap();
    for i in 0..3 {
        for j in 0..3 {
            assert_eq!(l.at(i, j), if i == j { -1.0 } else { 0.0 });
        }
    }
    let g = knn_build(&random_coords(&mut rng(6), 20, 3.0), 4).unwrap();
    let l = scaled_laplacian(&g).unwrap();
    for i in 0..20 {
        for j in 0..20 {
            assert!((l.at(i, j) - l.at(j, i)).abs() < 1e-15);
        }
    }
}

#[test]
fn kmeans_is_reproducible_for_a_seed() {
    let c = random_coords(&mut rng(8), 60, 5.0);
    let a = kmeans_coarsen(&c, 12, 17, PoolMode::Max).unwrap();
    let b = kmeans_coarsen(&c, 12, 17, PoolMode::Max).unwrap();
    assert_eq!(a.assignment(), b.assignment());
}
