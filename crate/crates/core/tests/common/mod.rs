//! Independent reference implementations shared by the integration tests.
//! Everything here is written from the definitions, by enumeration where
//! possible, and never calls the routine it checks.

#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::Rng;
use trans_core::ehr::{CodeKind, Visit};
use trans_core::graph::{MetaPath, PatientGraph};

/// Random symmetric non-negative integer weights, row-major `n × n`.
/// Some nodes may end up isolated.
pub fn random_weights(rng: &mut impl Rng, n: usize, density: f64, max_w: u32, diagonal: bool) -> Vec<f64> {
    let mut w = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            if i == j && !diagonal {
                continue;
            }
            if rng.random_bool(density) {
                let x = rng.random_range(1..=max_w) as f64;
                w[i * n + j] = x;
                w[j * n + i] = x;
            }
        }
    }
    w
}

/// Probability that a `steps`-step random walk from `start` with
/// transition weights `w` ends at `start`, summed over every walk.
pub fn brute_return_probability(w: &[f64], n: usize, start: usize, steps: usize) -> f64 {
    fn go(w: &[f64], n: usize, at: usize, left: usize, start: usize, p: f64) -> f64 {
        if left == 0 {
            return if at == start { p } else { 0.0 };
        }
        let deg: f64 = (0..n).map(|j| w[at * n + j]).sum();
        if deg == 0.0 {
            return 0.0;
        }
        (0..n)
            .filter(|&j| w[at * n + j] > 0.0)
            .map(|j| go(w, n, j, left - 1, start, p * w[at * n + j] / deg))
            .sum()
    }
    go(w, n, start, steps, start, 1.0)
}

/// `I − D^{-1/2} A D^{-1/2}` written out entry by entry, with zero rows
/// and columns for isolated nodes.
pub fn reference_laplacian(w: &[f64], n: usize) -> Vec<f64> {
    let deg: Vec<f64> = (0..n).map(|i| (0..n).map(|j| w[i * n + j]).sum()).collect();
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if deg[i] == 0.0 || deg[j] == 0.0 {
                continue;
            }
            let delta = if i == j { 1.0 } else { 0.0 };
            l[i * n + j] = delta - w[i * n + j] / (deg[i] * deg[j]).sqrt();
        }
    }
    l
}

/// Number of typed walks `e0 – v – e1 – v – … – en` between every pair of
/// events of the path's endpoint kind, by depth-first enumeration over the
/// graph's incidence lists. Rows and columns follow ascending event id.
pub fn brute_metapath_counts(graph: &PatientGraph, path: &MetaPath) -> (Vec<usize>, Vec<u64>) {
    let kinds = path.kinds();
    let nodes: Vec<usize> = (0..graph.n_events())
        .filter(|&e| graph.events[e].kind == kinds[0])
        .collect();
    let n = nodes.len();
    let mut counts = vec![0u64; n * n];
    fn walk(g: &PatientGraph, kinds: &[CodeKind], step: usize, at: usize, out: &mut Vec<usize>) {
        if step + 1 == kinds.len() {
            out.push(at);
            return;
        }
        for &v in &g.event_visits[at] {
            for &e in &g.visit_events[v] {
                if g.events[e].kind == kinds[step + 1] {
                    walk(g, kinds, step + 1, e, out);
                }
            }
        }
    }
    for (r, &e) in nodes.iter().enumerate() {
        let mut ends = Vec::new();
        walk(graph, kinds, 0, e, &mut ends);
        for end in ends {
            let c = nodes.iter().position(|&x| x == end).expect("endpoint kind");
            counts[r * n + c] += 1;
        }
    }
    (nodes, counts)
}

/// A random patient whose graph has at most `max_nodes` visit plus event
/// nodes, drawn from small per-kind code pools so codes recur.
pub fn random_small_patient(rng: &mut impl Rng, max_nodes: usize) -> Vec<Visit> {
    loop {
        let t = rng.random_range(1..=3usize);
        let mut visits = Vec::with_capacity(t);
        for i in 0..t {
            let pick = |rng: &mut dyn rand::RngCore, prefix: &str| -> Vec<String> {
                (0..3)
                    .filter(|_| rng.random_bool(0.45))
                    .map(|c| format!("{prefix}{c}"))
                    .collect()
            };
            let d = pick(rng, "d");
            let p = pick(rng, "p");
            let m = pick(rng, "m");
            let (d, p, m) = (refs(&d), refs(&p), refs(&m));
            visits.push(trans_core::ehr::visit(i as f64 * 10.0, &d, &p, &m));
        }
        let g = PatientGraph::from_visits(&visits);
        if g.n_visits() + g.n_events() <= max_nodes && g.n_events() > 0 {
            return visits;
        }
    }
}

fn refs(v: &[String]) -> Vec<&str> {
    v.iter().map(String::as_str).collect()
}

/// Top-`k` label indices by repeated selection of the highest remaining
/// score, lowest index first among equals.
pub fn brute_top_k(scores: &[f64], k: usize) -> BTreeSet<usize> {
    let mut chosen = BTreeSet::new();
    for _ in 0..k.min(scores.len()) {
        let mut best: Option<usize> = None;
        for (i, &s) in scores.iter().enumerate() {
            if chosen.contains(&i) {
                continue;
            }
            if best.is_none_or(|b| s > scores[b]) {
                best = Some(i);
            }
        }
        chosen.insert(best.expect("k bounded by scores"));
    }
    chosen
}

/// `|top-k ∩ Y| / min(k, |Y|)` by set intersection.
pub fn brute_visit_precision(truth: &BTreeSet<usize>, scores: &[f64], k: usize) -> f64 {
    let hits = brute_top_k(scores, k).intersection(truth).count();
    hits as f64 / k.min(truth.len()) as f64
}

/// Micro-averaged hits over true labels by set intersection.
pub fn brute_code_accuracy(visits: &[(BTreeSet<usize>, Vec<f64>)], k: usize) -> f64 {
    let hits: usize = visits
        .iter()
        .map(|(t, s)| brute_top_k(s, k).intersection(t).count())
        .sum();
    let total: usize = visits.iter().map(|(t, _)| t.len()).sum();
    hits as f64 / total as f64
}

/// AUC from the Mann–Whitney rank sum, ties given their mid-rank.
pub fn rank_auc(pos: &[f64], neg: &[f64]) -> f64 {
    let mut all: Vec<(f64, bool)> = pos.iter().map(|&x| (x, true)).chain(neg.iter().map(|&x| (x, false))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        let mid = (i + 1 + j) as f64 / 2.0;
        rank_sum += mid * all[i..j].iter().filter(|x| x.1).count() as f64;
        i = j;
    }
    let (np, nn) = (pos.len() as f64, neg.len() as f64);
    (rank_sum - np * (np + 1.0) / 2.0) / (np * nn)
}
