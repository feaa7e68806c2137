//! The dense tape layer against a per-visit evaluation built from the plain
//! score, aggregation and update functions, plus structural properties.

mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use trans_core::ehr::{visit, CodeKind, Visit};
use trans_core::graph::PatientGraph;
use trans_core::layer::{aggregate, attention_score, update, Activation, GammaMode, LayerGraph, LayerSpec};
use trans_core::numeric::{ParamStore, Tape, Tensor};

fn spec(d: usize, heads: usize, gamma: GammaMode, activation: Activation, vv_alpha: bool) -> LayerSpec {
    LayerSpec {
        index: 0,
        d,
        heads,
        gamma,
        activation,
        update_events: false,
        visit_edge_time_factor: vv_alpha,
    }
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row_slice(r).to_vec()).collect()
}

fn random_rows(rng: &mut impl Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

fn to_tensor(rows: &[Vec<f64>], d: usize) -> Tensor {
    Tensor::matrix(rows.len(), d, rows.concat()).unwrap()
}

/// `x · W` for a row vector and a row-major `W`.
fn vec_mat(x: &[f64], w: &Tensor) -> Vec<f64> {
    (0..w.cols()).map(|c| x.iter().enumerate().map(|(r, v)| v * w.get(r, c)).sum()).collect()
}

fn param<'a>(store: &'a ParamStore, spec: &LayerSpec, head: usize, what: &str) -> &'a Tensor {
    store.get(&format!("layer{}.head{head}.{what}", spec.index)).unwrap()
}

/// New visit features, one visit at a time.
fn reference_layer(
    spec: &LayerSpec,
    store: &ParamStore,
    graph: &PatientGraph,
    hv: &[Vec<f64>],
    he: &[Vec<f64>],
    alpha: &[f64],
) -> Vec<Vec<f64>> {
    let dh = spec.d_head();
    let gamma = match spec.gamma {
        GammaMode::Fixed(g) => g,
        GammaMode::Learnable => {
            let raw = store.get(&spec.gamma_name()).unwrap().item();
            1.0 / (1.0 + (-raw).exp())
        }
    };
    let mut out = Vec::with_capacity(hv.len());
    for t in 0..hv.len() {
        let events = &graph.visit_events[t];
        if events.is_empty() && t == 0 {
            out.push(hv[t].clone());
            continue;
        }
        let mut messages = Vec::with_capacity(spec.heads);
        let mut maps = Vec::with_capacity(spec.heads);
        for i in 0..spec.heads {
            let q = vec_mat(&hv[t], param(store, spec, i, "q"));
            let (wk, wv) = (param(store, spec, i, "k"), param(store, spec, i, "v"));
            let mut scores = Vec::new();
            let mut values = Vec::new();
            for &e in events {
                let kind = match graph.events[e].kind {
                    CodeKind::Diagnosis => "w_diagnosis",
                    CodeKind::Procedure => "w_procedure",
                    CodeKind::Medication => "w_medication",
                };
                let w = param(store, spec, i, kind).data();
                scores.push(attention_score(&q, &vec_mat(&he[e], wk), w, alpha[t], dh));
                values.push(vec_mat(&he[e], wv));
            }
            if t > 0 {
                let a = if spec.visit_edge_time_factor { alpha[t - 1] } else { 1.0 };
                let w = param(store, spec, i, "w_visit").data();
                scores.push(attention_score(&q, &vec_mat(&hv[t - 1], wk), w, a, dh));
                values.push(vec_mat(&hv[t - 1], wv));
            }
            let (_, message) = aggregate(&scores, &values, dh);
            messages.push(message);
            maps.push((
                param(store, spec, i, "update_w").data().to_vec(),
                param(store, spec, i, "update_b").data().to_vec(),
            ));
        }
        out.push(update(&messages, &hv[t], &maps, gamma, spec.activation));
    }
    out
}

fn tape_layer(
    spec: &LayerSpec,
    store: &ParamStore,
    graph: &PatientGraph,
    hv: &[Vec<f64>],
    he: &[Vec<f64>],
    alpha: &[f64],
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let lg = LayerGraph::new(graph).unwrap();
    let mut tape = Tape::new();
    let v = tape.leaf(to_tensor(hv, spec.d), true);
    let e = tape.leaf(to_tensor(he, spec.d), true);
    let a = tape.leaf(Tensor::col(alpha.to_vec()), true);
    let (nv, ne) = spec.forward(&mut tape, store, &lg, v, e, a, None).unwrap();
    (rows(tape.value(nv)), rows(tape.value(ne)))
}

struct Case {
    spec: LayerSpec,
    store: ParamStore,
    graph: PatientGraph,
    hv: Vec<Vec<f64>>,
    he: Vec<Vec<f64>>,
    alpha: Vec<f64>,
}

fn case(seed: u64, spec: LayerSpec) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let visits = common::random_small_patient(&mut rng, 12);
    let graph = PatientGraph::from_visits(&visits);
    let mut store = ParamStore::new();
    spec.init(&mut store, &mut rng).unwrap();
    if spec.gamma == GammaMode::Learnable {
        store.get_mut(&spec.gamma_name()).unwrap().data_mut()[0] = rng.random_range(-2.0..2.0);
    }
    let hv = random_rows(&mut rng, graph.n_visits(), spec.d);
    let he = random_rows(&mut rng, graph.n_events(), spec.d);
    let alpha = (0..graph.n_visits()).map(|_| rng.random_range(0.2..2.0)).collect();
    Case {
        spec,
        store,
        graph,
        hv,
        he,
        alpha,
    }
}

fn max_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn arb_spec() -> impl Strategy<Value = LayerSpec> {
    let act = prop_oneof![
        Just(Activation::Gelu),
        Just(Activation::Relu),
        Just(Activation::Tanh),
        Just(Activation::Identity)
    ];
    let gamma = prop_oneof![(0.0..=1.0f64).prop_map(GammaMode::Fixed), Just(GammaMode::Learnable)];
    ((1usize..=3), (1usize..=3), gamma, act, any::<bool>())
        .prop_map(|(heads, dh, gamma, act, vv)| spec(heads * dh, heads, gamma, act, vv))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn dense_layer_matches_per_visit_reference(seed in any::<u64>(), spec in arb_spec()) {
        let c = case(seed, spec);
        let (nv, ne) = tape_layer(&c.spec, &c.store, &c.graph, &c.hv, &c.he, &c.alpha);
        let reference = reference_layer(&c.spec, &c.store, &c.graph, &c.hv, &c.he, &c.alpha);
        prop_assert!(max_diff(&nv, &reference) < 1e-12, "max diff {}", max_diff(&nv, &reference));
        prop_assert_eq!(ne, c.he);
    }

    #[test]
    fn visits_never_see_later_visits(seed in any::<u64>(), spec in arb_spec()) {
        let c = case(seed, spec);
        let t = c.graph.n_visits();
        prop_assume!(t >= 2);
        let (before, _) = tape_layer(&c.spec, &c.store, &c.graph, &c.hv, &c.he, &c.alpha);
        let mut hv = c.hv.clone();
        for x in &mut hv[t - 1] {
            *x += 0.75;
        }
        let mut alpha = c.alpha.clone();
        alpha[t - 1] *= 3.0;
        let (after, _) = tape_layer(&c.spec, &c.store, &c.graph, &hv, &c.he, &alpha);
        for v in 0..t - 1 {
            prop_assert_eq!(&before[v], &after[v]);
        }
    }
}

/// Renames codes so that the sorted event order is reversed within each
/// kind; the layer must give the same visit features once event rows follow
/// their codes.
#[test]
fn event_relabelling_does_not_change_visits() {
    for seed in 0..40u64 {
        let c = case(seed, spec(6, 2, GammaMode::Fixed(0.4), Activation::Gelu, true));
        let rename = |code: &str| -> String {
            let (p, n) = code.split_at(1);
            format!("{p}{}", 9 - n.parse::<u32>().unwrap())
        };
        let visits: Vec<Visit> = c
            .graph
            .visit_events
            .iter()
            .enumerate()
            .map(|(t, evs)| {
                let mut v = visit(t as f64, &[], &[], &[]);
                for &e in evs {
                    let node = &c.graph.events[e];
                    let set = match node.kind {
                        CodeKind::Diagnosis => &mut v.diagnoses,
                        CodeKind::Procedure => &mut v.procedures,
                        CodeKind::Medication => &mut v.medications,
                    };
                    set.insert(rename(&node.code));
                }
                v
            })
            .collect();
        let g2 = PatientGraph::from_visits(&visits);
        let mut he2 = vec![Vec::new(); g2.n_events()];
        for (e, node) in c.graph.events.iter().enumerate() {
            let target = g2
                .events
                .iter()
                .position(|x| x.kind == node.kind && x.code == rename(&node.code))
                .unwrap();
            he2[target] = c.he[e].clone();
        }
        let (a, _) = tape_layer(&c.spec, &c.store, &c.graph, &c.hv, &c.he, &c.alpha);
        let (b, _) = tape_layer(&c.spec, &c.store, &g2, &c.hv, &he2, &c.alpha);
        assert!(max_diff(&a, &b) < 1e-12, "seed {seed}: {}", max_diff(&a, &b));
    }
}

/// With one shared bilinear form for every node type and unit time factors,
/// node types stop mattering: moving an event to another kind, features
/// unchanged, leaves every visit output unchanged.
#[test]
fn shared_type_maps_reduce_to_homogeneous_attention() {
    let s = spec(4, 2, GammaMode::Fixed(0.6), Activation::Tanh, false);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut store = ParamStore::new();
    s.init(&mut store, &mut rng).unwrap();
    for head in 0..2 {
        let shared = store.get(&format!("layer0.head{head}.w_visit")).unwrap().clone();
        for kind in ["diagnosis", "procedure", "medication"] {
            *store.get_mut(&format!("layer0.head{head}.w_{kind}")).unwrap() = shared.clone();
        }
    }
    let g1 = PatientGraph::from_visits(&[
        visit(0.0, &["a", "b"], &["c"], &[]),
        visit(1.0, &["b"], &[], &["m"]),
    ]);
    // "a" becomes a medication; its feature row follows it.
    let g2 = PatientGraph::from_visits(&[
        visit(0.0, &["b"], &["c"], &["a"]),
        visit(1.0, &["b"], &[], &["m"]),
    ]);
    let feats: std::collections::BTreeMap<&str, Vec<f64>> = [
        ("a", vec![0.3, -0.2, 0.9, 0.1]),
        ("b", vec![-0.5, 0.4, 0.2, -0.7]),
        ("c", vec![0.8, 0.1, -0.3, 0.5]),
        ("m", vec![0.0, -0.9, 0.6, 0.2]),
    ]
    .into_iter()
    .collect();
    let he = |g: &PatientGraph| g.events.iter().map(|e| feats[e.code.as_str()].clone()).collect::<Vec<_>>();
    let hv = random_rows(&mut rng, 2, 4);
    let alpha = vec![1.0, 1.0];
    let (a, _) = tape_layer(&s, &store, &g1, &hv, &he(&g1), &alpha);
    let (b, _) = tape_layer(&s, &store, &g2, &hv, &he(&g2), &alpha);
    assert!(max_diff(&a, &b) < 1e-14);

    // With distinct maps the move is visible.
    let mut distinct = ParamStore::new();
    s.init(&mut distinct, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let (c, _) = tape_layer(&s, &distinct, &g1, &hv, &he(&g1), &alpha);
    let (d, _) = tape_layer(&s, &distinct, &g2, &hv, &he(&g2), &alpha);
    assert!(max_diff(&c, &d) > 1e-6);
}

#[test]
fn event_updates_read_only_attached_visits() {
    let mut s = spec(4, 1, GammaMode::Fixed(0.5), Activation::Gelu, false);
    s.update_events = true;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::new();
    s.init(&mut store, &mut rng).unwrap();
    let g = PatientGraph::from_visits(&[visit(0.0, &["a"], &[], &[]), visit(1.0, &["b"], &[], &[])]);
    let hv = random_rows(&mut rng, 2, 4);
    let he = random_rows(&mut rng, 2, 4);
    let (_, e1) = tape_layer(&s, &store, &g, &hv, &he, &[1.0, 1.0]);
    let mut hv2 = hv.clone();
    hv2[1] = vec![5.0; 4];
    let (_, e2) = tape_layer(&s, &store, &g, &hv2, &he, &[1.0, 1.0]);
    assert_eq!(e1[0], e2[0], "event a only touches visit 0");
    assert_ne!(e1[1], e2[1], "event b reads visit 1");
}
