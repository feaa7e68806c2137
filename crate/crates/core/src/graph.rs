//! Per-sample temporal heterogeneous patient graphs and meta-path
//! adjacencies over event nodes.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::ehr::{CodeKind, Sample, Visit};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VisitNode {
    pub index_t: usize,
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct EventNode {
    pub kind: CodeKind,
    pub code: String,
}

/// Undirected event–visit edge; one per code occurrence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct EvEdge {
    pub event: usize,
    pub visit: usize,
    /// Equals the visit node's `index_t`.
    pub time_index: usize,
}

/// Visit nodes form a directed chain; event nodes are unique per
/// `(kind, code)` and ordered by it, so code order inside visits never
/// affects node ids.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PatientGraph {
    pub visits: Vec<VisitNode>,
    pub events: Vec<EventNode>,
    pub ev_edges: Vec<EvEdge>,
    /// `(t, t + 1)` pairs of visit node ids.
    pub vv_edges: Vec<(usize, usize)>,
    /// Event ids attached to each visit, ascending.
    #[serde(skip)]
    pub visit_events: Vec<Vec<usize>>,
    /// Visit ids attached to each event, ascending.
    #[serde(skip)]
    pub event_visits: Vec<Vec<usize>>,
}

impl PatientGraph {
    pub fn from_visits(visits: &[Visit]) -> PatientGraph {
        let mut ids: BTreeMap<EventNode, usize> = BTreeMap::new();
        for v in visits {
            for (kind, code) in v.iter_codes() {
                ids.entry(EventNode {
                    kind,
                    code: code.to_string(),
                })
                .or_insert(0);
            }
        }
        for (i, id) in ids.values_mut().enumerate() {
            *id = i;
        }
        let events: Vec<EventNode> = ids.keys().cloned().collect();
        let mut ev_edges = Vec::new();
        let mut visit_events = vec![Vec::new(); visits.len()];
        let mut event_visits = vec![Vec::new(); events.len()];
        for (vi, v) in visits.iter().enumerate() {
            let mut attached: Vec<usize> = v
                .iter_codes()
                .map(|(kind, code)| {
                    ids[&EventNode {
                        kind,
                        code: code.to_string(),
                    }]
                })
                .collect();
            attached.sort_unstable();
            for &e in &attached {
                ev_edges.push(EvEdge {
                    event: e,
                    visit: vi,
                    time_index: vi + 1,
                });
                event_visits[e].push(vi);
            }
            visit_events[vi] = attached;
        }
        PatientGraph {
            visits: visits
                .iter()
                .enumerate()
                .map(|(i, v)| VisitNode {
                    index_t: i + 1,
                    time: v.time,
                })
                .collect(),
            events,
            ev_edges,
            vv_edges: (1..visits.len()).map(|t| (t - 1, t)).collect(),
            visit_events,
            event_visits,
        }
    }

    pub fn n_visits(&self) -> usize {
        self.visits.len()
    }

    pub fn n_events(&self) -> usize {
        self.events.len()
    }

    /// Event ids of one kind, ascending.
    pub fn events_of_kind(&self, kind: CodeKind) -> Vec<usize> {
        (0..self.events.len()).filter(|&e| self.events[e].kind == kind).collect()
    }

    /// JSON adjacency listing for debugging and export.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Graph of a sample's history, the partially observed visit included.
pub fn build_patient_graph(sample: &Sample) -> PatientGraph {
    PatientGraph::from_visits(&sample.history)
}

/// A typed walk `k0 – visit – k1 – visit – ... – kn` over event kinds with
/// visits as intermediaries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MetaPath {
    kinds: Vec<CodeKind>,
}

impl MetaPath {
    pub fn new(kinds: Vec<CodeKind>) -> Result<MetaPath> {
        if kinds.len() < 2 || kinds.first() != kinds.last() {
            return Err(Error::Argument(format!(
                "meta-path must have at least two event kinds and start and end on the same kind, got {kinds:?}"
            )));
        }
        Ok(MetaPath { kinds })
    }

    /// `(k, v) - (v, far) - (far, v) - (v, k)`: medications and procedures
    /// go through diagnoses, diagnoses go through medications.
    pub fn default_for(kind: CodeKind) -> MetaPath {
        let far = match kind {
            CodeKind::Medication | CodeKind::Procedure => CodeKind::Diagnosis,
            CodeKind::Diagnosis => CodeKind::Medication,
        };
        MetaPath {
            kinds: vec![kind, far, kind],
        }
    }

    pub fn endpoint(&self) -> CodeKind {
        self.kinds[0]
    }

    pub fn kinds(&self) -> &[CodeKind] {
        &self.kinds
    }

    pub fn is_palindromic(&self) -> bool {
        self.kinds.iter().eq(self.kinds.iter().rev())
    }
}

/// Walk counts between event nodes of one kind along a meta-path.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetaPathAdjacency {
    pub node_kind: CodeKind,
    /// Event node ids of `node_kind`, giving the row/column order.
    pub nodes: Vec<usize>,
    /// Row-major `n × n` counts.
    pub counts: Vec<u64>,
    pub path: MetaPath,
}

impl MetaPathAdjacency {
    pub fn n(&self) -> usize {
        self.nodes.len()
    }

    pub fn get(&self, i: usize, j: usize) -> u64 {
        self.counts[i * self.n() + j]
    }

    pub fn is_symmetric(&self) -> bool {
        let n = self.n();
        (0..n).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64).collect()
    }
}

fn incidence(graph: &PatientGraph, nodes: &[usize]) -> Vec<u64> {
    let t = graph.n_visits();
    let mut b = vec![0u64; nodes.len() * t];
    for (r, &e) in nodes.iter().enumerate() {
        for &v in &graph.event_visits[e] {
            b[r * t + v] = 1;
        }
    }
    b
}

/// `a (n×k) · bᵀ` where `b` is `m×k`.
fn mul_transposed(a: &[u64], n: usize, b: &[u64], m: usize, k: usize) -> Vec<u64> {
    let mut out = vec![0u64; n * m];
    for i in 0..n {
        for j in 0..m {
            out[i * m + j] = (0..k).map(|x| a[i * k + x] * b[j * k + x]).sum();
        }
    }
    out
}

/// Product of bipartite incidence matrices along the path.
pub fn metapath_adjacency(graph: &PatientGraph, path: &MetaPath) -> MetaPathAdjacency {
    let kinds = path.kinds();
    let nodes = graph.events_of_kind(path.endpoint());
    let t = graph.n_visits();
    let incidences: Vec<(usize, Vec<u64>)> = kinds
        .iter()
        .map(|&k| {
            let ids = graph.events_of_kind(k);
            (ids.len(), incidence(graph, &ids))
        })
        .collect();
    // current: rows = endpoint nodes, cols = visits
    let mut current = incidences[0].1.clone();
    let n0 = incidences[0].0;
    for (nk, bk) in &incidences[1..kinds.len() - 1] {
        // (n0 × T)·(T × nk)·(nk × T): go through the intermediate kind and back to visits
        let to_kind = mul_transposed(&current, n0, bk, *nk, t);
        let mut back = vec![0u64; n0 * t];
        for i in 0..n0 {
            for x in 0..*nk {
                let w = to_kind[i * nk + x];
                if w != 0 {
                    for v in 0..t {
                        back[i * t + v] += w * bk[x * t + v];
                    }
                }
            }
        }
        current = back;
    }
    let (n_last, b_last) = &incidences[kinds.len() - 1];
    let counts = mul_transposed(&current, n0, b_last, *n_last, t);
    MetaPathAdjacency {
        node_kind: path.endpoint(),
        nodes,
        counts,
        path: path.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ehr::visit;

    #[test]
    fn hand_counted_graph() {
        let g = PatientGraph::from_visits(&[
            visit(0.0, &["d1"], &[], &["m1"]),
            visit(1.0, &["d1"], &["p1"], &[]),
            visit(2.0, &[], &[], &["m2"]),
        ]);
        assert_eq!(g.n_visits(), 3);
        assert_eq!(g.n_events(), 4);
        assert_eq!(g.ev_edges.len(), 5);
        assert_eq!(g.vv_edges, vec![(0, 1), (1, 2)]);
        for e in &g.ev_edges {
            assert_eq!(e.time_index, g.visits[e.visit].index_t);
        }
        assert!(g.event_visits.iter().all(|v| !v.is_empty()));
    }

    #[test]
    fn single_visit_has_no_chain() {
        let g = PatientGraph::from_visits(&[visit(0.0, &["a", "b"], &["c"], &[])]);
        assert_eq!((g.n_visits(), g.n_events(), g.ev_edges.len(), g.vv_edges.len()), (1, 3, 3, 0));
    }

    #[test]
    fn code_order_does_not_matter() {
        let mut v1 = visit(0.0, &["b", "a"], &[], &["z", "y"]);
        let g1 = PatientGraph::from_visits(std::slice::from_ref(&v1));
        v1.diagnoses = ["a", "b"].iter().map(|s| s.to_string()).collect();
        let g2 = PatientGraph::from_visits(&[v1]);
        assert_eq!(g1, g2);
    }

    #[test]
    fn single_closed_walk() {
        let g = PatientGraph::from_visits(&[visit(0.0, &["d1"], &[], &["m1"])]);
        let a = metapath_adjacency(&g, &MetaPath::default_for(CodeKind::Medication));
        assert_eq!(a.counts, vec![1]);
    }

    #[test]
    fn two_visits_four_walks() {
        let g = PatientGraph::from_visits(&[visit(0.0, &["d1"], &[], &["m1"]), visit(1.0, &["d1"], &[], &["m1"])]);
        let a = metapath_adjacency(&g, &MetaPath::default_for(CodeKind::Medication));
        assert_eq!(a.counts, vec![4]);
    }

    #[test]
    fn no_diagnoses_gives_zero_matrix() {
        let g = PatientGraph::from_visits(&[visit(0.0, &[], &[], &["m1", "m2"]), visit(1.0, &[], &["p"], &["m1"])]);
        let a = metapath_adjacency(&g, &MetaPath::default_for(CodeKind::Medication));
        assert_eq!(a.n(), 2);
        assert!(a.counts.iter().all(|&c| c == 0));
        let p = metapath_adjacency(&g, &MetaPath::default_for(CodeKind::Diagnosis));
        assert_eq!(p.n(), 0);
        assert!(p.counts.is_empty());
    }

    #[test]
    fn invalid_paths_rejected() {
        assert!(MetaPath::new(vec![CodeKind::Medication]).is_err());
        assert!(MetaPath::new(vec![CodeKind::Medication, CodeKind::Diagnosis]).is_err());
        assert!(MetaPath::new(vec![CodeKind::Medication, CodeKind::Diagnosis, CodeKind::Medication]).unwrap().is_palindromic());
    }

    #[test]
    fn json_dump_lists_edges() {
        let g = PatientGraph::from_visits(&[visit(0.0, &["d1"], &[], &["m1"])]);
        let json = g.to_json().unwrap();
        assert!(json.contains("ev_edges") && json.contains("\"m1\""));
    }
}
