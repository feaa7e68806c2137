//! Temporal and spatial encodings and meta-path adjacencies against
//! enumeration oracles and invariants.

mod common;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use trans_core::ehr::CodeKind;
use trans_core::graph::{metapath_adjacency, MetaPath, PatientGraph};
use trans_core::spatial::{encode_graph, laplacian_pe, rw_structural_encoding, MetaPaths};
use trans_core::temporal::{functional_time_encode, normalize_visit_times, time_factor};

fn permute(w: &[f64], n: usize, perm: &[usize]) -> Vec<f64> {
    // node i of the original becomes node perm[i]
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[perm[i] * n + perm[j]] = w[i * n + j];
        }
    }
    out
}

fn kind() -> impl Strategy<Value = CodeKind> {
    prop_oneof![Just(CodeKind::Diagnosis), Just(CodeKind::Procedure), Just(CodeKind::Medication)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn normalized_times_span_unit_interval(times in prop::collection::vec(-1e4..1e4f64, 1..12), a in 0.01..100.0f64, b in -1e3..1e3f64) {
        let mut sorted = times.clone();
        sorted.sort_by(f64::total_cmp);
        let z = normalize_visit_times(&sorted);
        prop_assert!(z.iter().all(|x| (0.0..=1.0).contains(x)));
        prop_assert!(z.windows(2).all(|w| w[0] <= w[1]));
        if sorted[sorted.len() - 1] > sorted[0] {
            prop_assert_eq!(z[0], 0.0);
            prop_assert_eq!(z[z.len() - 1], 1.0);
        }
        let shifted: Vec<f64> = sorted.iter().map(|t| a * t + b).collect();
        let z2 = normalize_visit_times(&shifted);
        for (x, y) in z.iter().zip(&z2) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn functional_encoding_has_unit_norm_and_a_stationary_kernel(
        omega in prop::collection::vec(-10.0..10.0f64, 1..24), t in 0.0..200.0f64, s in 0.0..200.0f64, shift in -50.0..50.0f64,
    ) {
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let (pt, ps) = (functional_time_encode(t, &omega), functional_time_encode(s, &omega));
        prop_assert_eq!(pt.len(), 2 * omega.len());
        prop_assert!((norm(&pt) - 1.0).abs() < 1e-9);
        let k1 = dot(&pt, &ps);
        let k2 = dot(&functional_time_encode(t + shift, &omega), &functional_time_encode(s + shift, &omega));
        prop_assert!((k1 - k2).abs() < 1e-9, "{} vs {}", k1, k2);
        let direct = omega.iter().map(|w| (w * (t - s)).cos()).sum::<f64>() / omega.len() as f64;
        prop_assert!((k1 - direct).abs() < 1e-9);
    }

    #[test]
    fn time_factor_is_bounded_by_its_weight_norm(
        omega in prop::collection::vec(-3.0..3.0f64, 1..10), t in 0.0..50.0f64, bias in -2.0..2.0f64, seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weight: Vec<f64> = (0..2 * omega.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let wn = weight.iter().map(|x| x * x).sum::<f64>().sqrt();
        let a = time_factor(t, &omega, &weight, bias);
        prop_assert!((a - bias).abs() <= wn + 1e-12);
        // a weight aligned with the encoding attains the bound
        let phi = functional_time_encode(t, &omega);
        let aligned: Vec<f64> = phi.iter().map(|x| x * wn).collect();
        prop_assert!((time_factor(t, &omega, &aligned, bias) - bias - wn).abs() < 1e-9);
    }

    #[test]
    fn random_walk_encoding_matches_walk_enumeration(seed in any::<u64>(), n in 1usize..=6, k in 1usize..=5, diag in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = common::random_weights(&mut rng, n, 0.5, 4, diag);
        let se = rw_structural_encoding(&w, n, k).unwrap();
        for i in 0..n {
            for step in 1..=k {
                let got = se[i * k + step - 1];
                prop_assert!((0.0..=1.0).contains(&got));
                prop_assert!((got - common::brute_return_probability(&w, n, i, step)).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn random_walk_encoding_is_equivariant(seed in any::<u64>(), n in 1usize..=7, k in 1usize..=4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = common::random_weights(&mut rng, n, 0.6, 3, false);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let a = rw_structural_encoding(&w, n, k).unwrap();
        let b = rw_structural_encoding(&permute(&w, n, &perm), n, k).unwrap();
        for i in 0..n {
            for s in 0..k {
                prop_assert!((a[i * k + s] - b[perm[i] * k + s]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn laplacian_encoding_is_an_orthonormal_eigenbasis(seed in any::<u64>(), n in 1usize..=9, k in 1usize..=6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = common::random_weights(&mut rng, n, 0.45, 5, false);
        let pe = laplacian_pe(&w, n, k).unwrap();
        let lap = common::reference_laplacian(&w, n);
        let cols = pe.eigenvalues.len();
        prop_assert!(cols <= k);
        prop_assert!(pe.eigenvalues.windows(2).all(|x| x[0] <= x[1]));
        prop_assert!(pe.eigenvalues.iter().all(|&l| l > 1e-9 && l <= 2.0 + 1e-9));
        let col = |c: usize| (0..n).map(|r| pe.pe[r * k + c]).collect::<Vec<f64>>();
        for c in 0..k {
            let v = col(c);
            if c >= cols {
                prop_assert!(v.iter().all(|&x| x == 0.0));
                continue;
            }
            let first = v.iter().find(|x| x.abs() > 1e-9).copied().unwrap();
            prop_assert!(first > 0.0);
            for r in 0..n {
                let lv: f64 = (0..n).map(|j| lap[r * n + j] * v[j]).sum();
                prop_assert!((lv - pe.eigenvalues[c] * v[r]).abs() < 1e-9);
            }
            for c2 in 0..cols {
                let d: f64 = v.iter().zip(col(c2)).map(|(a, b)| a * b).sum();
                let want = if c == c2 { 1.0 } else { 0.0 };
                prop_assert!((d - want).abs() < 1e-9);
            }
        }
        let deg: Vec<f64> = (0..n).map(|i| (0..n).map(|j| w[i * n + j]).sum()).collect();
        for i in (0..n).filter(|&i| deg[i] == 0.0) {
            prop_assert!(pe.pe[i * k..(i + 1) * k].iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn laplacian_spectrum_is_relabelling_invariant(seed in any::<u64>(), n in 2usize..=8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = common::random_weights(&mut rng, n, 0.5, 3, false);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let a = laplacian_pe(&w, n, n).unwrap().eigenvalues;
        let b = laplacian_pe(&permute(&w, n, &perm), n, n).unwrap().eigenvalues;
        prop_assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn metapath_adjacency_matches_walk_enumeration(seed in any::<u64>(), mid in prop::collection::vec(kind(), 1..4), end in kind()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let visits = common::random_small_patient(&mut rng, 10);
        let graph = PatientGraph::from_visits(&visits);
        let mut kinds = vec![end];
        kinds.extend(mid);
        kinds.push(end);
        let path = MetaPath::new(kinds).unwrap();
        let adj = metapath_adjacency(&graph, &path);
        let (nodes, counts) = common::brute_metapath_counts(&graph, &path);
        prop_assert_eq!(&adj.nodes, &nodes);
        prop_assert_eq!(&adj.counts, &counts);
        if path.is_palindromic() {
            prop_assert!(adj.is_symmetric());
        }
    }

    #[test]
    fn graph_encoding_rows_follow_event_nodes(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let visits = common::random_small_patient(&mut rng, 12);
        let graph = PatientGraph::from_visits(&visits);
        let enc = encode_graph(&graph, &MetaPaths::default(), 3).unwrap();
        prop_assert_eq!(enc.n_nodes(), graph.n_events());
        let t = enc.as_tensor();
        prop_assert_eq!((t.rows(), t.cols()), (graph.n_events(), 6));
        for kind in CodeKind::ALL {
            let adj = metapath_adjacency(&graph, &MetaPath::default_for(kind));
            let n = adj.n();
            let mut w = adj.to_f64();
            for i in 0..n {
                w[i * n + i] = 0.0;
            }
            let se = rw_structural_encoding(&w, n.max(1), 3);
            if n == 0 {
                continue;
            }
            let se = se.unwrap();
            for (r, &e) in adj.nodes.iter().enumerate() {
                prop_assert_eq!(enc.se_row(e), &se[r * 3..(r + 1) * 3]);
            }
        }
    }
}
