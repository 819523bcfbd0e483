use subsample_nn::analysis::{
    build_theorem1_network, contribution_ratios, lemma1_error, random_linear_fixture, theorem1_check, theorem1_ratio,
};
use subsample_nn::linalg::Rng;
use subsample_nn::nn;

#[test]
fn recursion_matches_direct_difference_on_random_networks() {
    let mut rng = Rng::new(0, 1);
    for _ in 0..100 {
        let (model, x, sets) = random_linear_fixture(&mut rng, 4, 16).unwrap();
        let profile = lemma1_error(&model, &x, &sets).unwrap();
        assert!(profile.max_recursion_error(1e-8) <= 1e-10);

        // exact activations agree with the training engine
        let trace = nn::forward(&model, &x).unwrap();
        for (k, a) in profile.exact.iter().enumerate() {
            let row = trace.post[k + 1].row(0);
            for (u, v) in a.iter().zip(row) {
                assert!((u - v).abs() <= 1e-12 * v.abs().max(1.0));
            }
        }

        // masked activations by an independent loop
        let mut prev: Vec<f64> = x.as_slice().to_vec();
        for (k, w) in model.weights.iter().enumerate() {
            let next: Vec<f64> = (0..w.cols())
                .map(|j| sets[k][j].iter().map(|&i| prev[i] * w.get(i, j)).sum::<f64>() + model.biases[k][j])
                .collect();
            for (u, v) in profile.approx[k].iter().zip(&next) {
                assert!((u - v).abs() <= 1e-12 * v.abs().max(1.0));
            }
            prev = next;
        }
    }
}

#[test]
fn fully_active_sets_give_zero_error() {
    let mut rng = Rng::new(3, 1);
    for _ in 0..20 {
        let (model, x, mut sets) = random_linear_fixture(&mut rng, 4, 10).unwrap();
        for (k, layer) in sets.iter_mut().enumerate() {
            for node in layer.iter_mut() {
                *node = (0..model.layer_dims[k]).collect();
            }
        }
        let p = lemma1_error(&model, &x, &sets).unwrap();
        assert!(p.direct.iter().flat_map(|d| d.iter()).all(|&e| e.abs() <= 1e-12));
        assert!(p.recursive.iter().flat_map(|d| d.iter()).all(|&e| e.abs() <= 1e-12));
    }
}

#[test]
fn exponential_law_for_several_ratios() {
    for c in [1usize, 2, 5, 10] {
        for depth in 1..=8 {
            let (model, sets, x) = build_theorem1_network(c, depth, 2 * (c + 1)).unwrap();
            let split = contribution_ratios(&model, &x, &sets).unwrap();
            for r in split.iter().flat_map(|v| v.iter()) {
                assert!((r - c as f64).abs() <= 1e-12 * c as f64);
            }
            let rows = theorem1_check(&model, &x, &sets, c).unwrap();
            assert_eq!(rows.len(), depth);
            for row in &rows {
                assert!(row.max_rel_error <= 1e-9, "c={c} k={}: {}", row.k, row.max_rel_error);
                let want = ((c as f64 + 1.0) / c as f64).powi(row.k as i32) - 1.0;
                assert!((row.measured - want).abs() <= 1e-9 * want);
            }
        }
    }
}

#[test]
fn c1_doubles_every_layer() {
    let (model, sets, x) = build_theorem1_network(1, 6, 4).unwrap();
    let rows = theorem1_check(&model, &x, &sets, 1).unwrap();
    for row in rows {
        assert!((row.measured - (2f64.powi(row.k as i32) - 1.0)).abs() < 1e-9);
    }
}

#[test]
fn c5_table_values() {
    let (model, sets, x) = build_theorem1_network(5, 6, 12).unwrap();
    let rows = theorem1_check(&model, &x, &sets, 5).unwrap();
    let printed = [0.2, 0.44, 0.72, 1.07, 1.48, 1.98];
    for (row, want) in rows.iter().zip(printed) {
        assert!((row.measured - want).abs() <= 0.01, "k={}: {}", row.k, row.measured);
    }
    assert!((theorem1_ratio(5.0, 6) - 1.985984).abs() < 1e-6);
}
