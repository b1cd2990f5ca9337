mod common;

use advdiff::attention::{coupling_dense, AttentionHead};
use advdiff::graph::{adjacency_gap, perturb_edges, spectral_norm, Edge, Graph, NormMode};
use advdiff::io::{format_graph, format_matrix_csv, parse_graph, parse_matrix_csv};
use advdiff::synthetic::{block_of, ShiftKind};
use advdiff::{Matrix, Tape};
use proptest::prelude::*;

fn graph_strategy(max_n: usize) -> impl Strategy<Value = Graph> {
    (2..=max_n).prop_flat_map(|n| {
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))).collect();
        let m = pairs.len();
        (
            Just(n),
            Just(pairs),
            proptest::collection::vec(proptest::option::weighted(0.4, 0.1f64..3.0), m),
        )
            .prop_map(|(n, pairs, weights)| {
                let edges = pairs
                    .into_iter()
                    .zip(weights)
                    .filter_map(|((u, v), w)| w.map(|weight| Edge { u, v, weight }));
                Graph::new(n, edges).unwrap()
            })
    })
}

fn matrix_strategy(max: usize) -> impl Strategy<Value = Matrix> {
    (1..=max, 1..=max).prop_flat_map(|(r, c)| {
        proptest::collection::vec(-10.0f64..10.0, r * c).prop_map(move |v| Matrix::from_vec(r, c, v).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn symmetric_normalization_is_symmetric(g in graph_strategy(10)) {
        let a = g.normalized_adjacency(NormMode::Symmetric);
        prop_assert!(a.max_abs_diff(&a.transpose()).unwrap() < 1e-15);
    }

    #[test]
    fn row_normalization_is_stochastic(g in graph_strategy(10)) {
        let a = g.normalized_adjacency(NormMode::Row);
        let deg = g.degrees();
        for (i, s) in a.row_sums().into_iter().enumerate() {
            let expected = if deg[i] > 0.0 { 1.0 } else { 0.0 };
            prop_assert!((s - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn spectral_norm_is_transpose_and_scale_invariant(m in matrix_strategy(6), k in -4.0f64..4.0) {
        let base = spectral_norm(&m, 1e-12, 10_000).unwrap().value;
        let t = spectral_norm(&m.transpose(), 1e-12, 10_000).unwrap().value;
        let scaled = spectral_norm(&m.scale(k), 1e-12, 10_000).unwrap().value;
        let tol = 1e-6 * base.max(1e-12);
        prop_assert!((base - t).abs() <= tol);
        prop_assert!((scaled - k.abs() * base).abs() <= 1e-6 * (k.abs() * base).max(1e-12));
        let oracle = common::jacobi_spectral_norm(&m);
        prop_assert!((base - oracle).abs() <= 1e-6 * oracle.max(1e-12));
    }

    #[test]
    fn perturbation_is_an_involution(g in graph_strategy(9), flips in 0usize..6, seed in any::<u64>()) {
        let unweighted = Graph::unweighted(g.n(), &g.edges().iter().map(|e| (e.u, e.v)).collect::<Vec<_>>()).unwrap();
        let flips = flips.min(advdiff::graph::pair_count(g.n()));
        let once = perturb_edges(&unweighted, flips, seed).unwrap();
        let twice = perturb_edges(&once, flips, seed).unwrap();
        prop_assert_eq!(twice, unweighted);
    }

    #[test]
    fn adjacency_gap_is_symmetric_and_zero_on_identity(a in graph_strategy(8), b in graph_strategy(8)) {
        prop_assume!(a.n() == b.n());
        let ab = adjacency_gap(&a, &b, NormMode::Symmetric).unwrap();
        let ba = adjacency_gap(&b, &a, NormMode::Symmetric).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-9 * ab.max(1.0));
        prop_assert_eq!(adjacency_gap(&a, &a, NormMode::Symmetric).unwrap(), 0.0);
        if a != b {
            prop_assert!(ab > 0.0 || a.normalized_adjacency(NormMode::Symmetric) == b.normalized_adjacency(NormMode::Symmetric));
        }
    }

    #[test]
    fn graph_text_round_trips(g in graph_strategy(12)) {
        prop_assert_eq!(parse_graph(&format_graph(&g)).unwrap(), g);
    }

    #[test]
    fn matrix_csv_round_trips(m in matrix_strategy(7)) {
        prop_assert_eq!(parse_matrix_csv(&format_matrix_csv(&m).unwrap()).unwrap(), m);
    }

    #[test]
    fn coupling_is_row_stochastic_and_nonnegative(seed in any::<u64>(), n in 1usize..20, d in 1usize..5) {
        let mut r = common::rng(seed);
        let z0 = common::random_matrix(&mut r, n, d);
        let head = AttentionHead::new(common::random_matrix(&mut r, d, d), common::random_matrix(&mut r, d, d)).unwrap();
        let tape = Tape::new();
        let h = head.bind(&tape);
        let z = tape.constant(z0);
        let c = tape.value(&coupling_dense(&tape, &z, &h).unwrap());
        prop_assert!(c.as_slice().iter().all(|&x| x >= 0.0));
        // A row is all zero only when every score vanishes, which needs
        // exactly opposed unit directions (possible for d = 1).
        for s in c.row_sums() {
            prop_assert!((s - 1.0).abs() < 1e-12 || (d == 1 && s == 0.0), "row sum {}", s);
        }
    }

    #[test]
    fn blocks_stay_in_range(u in 0.0f64..=1.0, b in 1usize..30) {
        prop_assert!(block_of(u, b) < b);
    }

    #[test]
    fn schedules_are_valid(i in 1usize..=12, n in 1usize..2000) {
        for kind in ShiftKind::ALL {
            prop_assert!(kind.schedule(i, n).validate().is_ok());
        }
    }
}
