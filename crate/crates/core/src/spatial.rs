//! Laplacian positional encodings and random-walk structural encodings of
//! event nodes, computed on meta-path adjacencies.
//!
//! Self-walks (the adjacency diagonal) are dropped before either encoding:
//! every node trivially reaches itself through each of its own visits, and
//! keeping those counts would swamp the return probabilities.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::ehr::CodeKind;
use crate::error::{Error, Result};
use crate::graph::{metapath_adjacency, MetaPath, MetaPathAdjacency, PatientGraph};
use crate::numeric::Tensor;

/// Eigenvalues at or below this are treated as zero.
pub const ZERO_EIGENVALUE: f64 = 1e-9;
const ZERO_COMPONENT: f64 = 1e-10;

fn check_square(weights: &[f64], n: usize, what: &'static str) -> Result<()> {
    if weights.len() != n * n {
        return Err(Error::dim(what, format!("{} weights for {n} nodes", weights.len())));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::Argument(format!("{what}: adjacency must be finite and non-negative")));
    }
    Ok(())
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Argument("encoding dimension k must be positive".into()));
    }
    Ok(())
}

fn degrees(weights: &[f64], n: usize) -> Vec<f64> {
    (0..n).map(|i| weights[i * n..(i + 1) * n].iter().sum()).collect()
}

/// `I − D^{-1/2} A D^{-1/2}`; isolated nodes get an identity row.
pub fn normalized_laplacian(weights: &[f64], n: usize) -> Result<Vec<f64>> {
    check_square(weights, n, "normalized_laplacian")?;
    let inv_sqrt: Vec<f64> = degrees(weights, n)
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
        .collect();
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let id = if i == j { 1.0 } else { 0.0 };
            l[i * n + j] = id - inv_sqrt[i] * weights[i * n + j] * inv_sqrt[j];
        }
    }
    Ok(l)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaplacianPe {
    pub k: usize,
    /// Row-major `n × k`; column `i` is the `i`-th selected eigenvector,
    /// zero where fewer than `k` exist.
    pub pe: Vec<f64>,
    /// Eigenvalues of the selected columns, ascending.
    pub eigenvalues: Vec<f64>,
}

/// Eigenvectors of the `k` smallest nonzero eigenvalues of the normalized
/// Laplacian, each oriented so its first nonzero component is positive.
///
/// Isolated nodes are left out of the eigenproblem and receive zero rows;
/// including them would contribute spurious unit eigenvalues whose
/// eigenvectors are indicator vectors.
pub fn laplacian_pe(weights: &[f64], n: usize, k: usize) -> Result<LaplacianPe> {
    check_k(k)?;
    check_square(weights, n, "laplacian_pe")?;
    let deg = degrees(weights, n);
    let active: Vec<usize> = (0..n).filter(|&i| deg[i] > 0.0).collect();
    let mut pe = vec![0.0; n * k];
    let mut eigenvalues = Vec::new();
    if active.is_empty() {
        return Ok(LaplacianPe { k, pe, eigenvalues });
    }
    let m = active.len();
    let full = normalized_laplacian(weights, n)?;
    let sub = DMatrix::from_fn(m, m, |r, c| full[active[r] * n + active[c]]);
    let eig = SymmetricEigen::new(sub);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));
    for (col, &j) in order
        .iter()
        .filter(|&&j| eig.eigenvalues[j] > ZERO_EIGENVALUE)
        .take(k)
        .enumerate()
    {
        let v = eig.eigenvectors.column(j);
        let sign = v
            .iter()
            .find(|x| x.abs() > ZERO_COMPONENT)
            .map_or(1.0, |x| x.signum());
        for (r, &node) in active.iter().enumerate() {
            pe[node * k + col] = sign * v[r];
        }
        eigenvalues.push(eig.eigenvalues[j]);
    }
    Ok(LaplacianPe { k, pe, eigenvalues })
}

/// Diagonals of `W̃^1..W̃^k` with `W̃ = D^{-1}A`, row-major `n × k`.
pub fn rw_structural_encoding(weights: &[f64], n: usize, k: usize) -> Result<Vec<f64>> {
    check_k(k)?;
    check_square(weights, n, "rw_structural_encoding")?;
    let deg = degrees(weights, n);
    let mut w = vec![0.0; n * n];
    for i in 0..n {
        if deg[i] > 0.0 {
            for j in 0..n {
                w[i * n + j] = weights[i * n + j] / deg[i];
            }
        }
    }
    let mut se = vec![0.0; n * k];
    let mut power = w.clone();
    for step in 0..k {
        for i in 0..n {
            se[i * k + step] = power[i * n + i].clamp(0.0, 1.0);
        }
        if step + 1 < k {
            let mut next = vec![0.0; n * n];
            for i in 0..n {
                for x in 0..n {
                    let p = power[i * n + x];
                    if p != 0.0 {
                        for j in 0..n {
                            next[i * n + j] += p * w[x * n + j];
                        }
                    }
                }
            }
            power = next;
        }
    }
    Ok(se)
}

fn without_diagonal(adj: &MetaPathAdjacency) -> Vec<f64> {
    let n = adj.n();
    let mut w = adj.to_f64();
    for i in 0..n {
        w[i * n + i] = 0.0;
    }
    w
}

/// Positional and structural encodings for every event node of a graph.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpatialEncoding {
    pub k: usize,
    /// Row-major `n_events × k`.
    pub pe: Vec<f64>,
    /// Row-major `n_events × k`, entries in `[0, 1]`.
    pub se: Vec<f64>,
}

impl SpatialEncoding {
    pub fn n_nodes(&self) -> usize {
        self.pe.len() / self.k
    }

    pub fn pe_row(&self, e: usize) -> &[f64] {
        &self.pe[e * self.k..(e + 1) * self.k]
    }

    pub fn se_row(&self, e: usize) -> &[f64] {
        &self.se[e * self.k..(e + 1) * self.k]
    }

    /// `n_events × 2k` block `[pe | se]`.
    pub fn as_tensor(&self) -> Tensor {
        let n = self.n_nodes();
        let mut data = Vec::with_capacity(n * 2 * self.k);
        for e in 0..n {
            data.extend_from_slice(self.pe_row(e));
            data.extend_from_slice(self.se_row(e));
        }
        Tensor::matrix(n, 2 * self.k, data).expect("consistent encoding shape")
    }
}

/// Meta-paths per event kind, indexed by [`CodeKind::index`].
#[derive(Debug, Clone, PartialEq)]
pub struct MetaPaths(pub [MetaPath; 3]);

impl Default for MetaPaths {
    fn default() -> Self {
        MetaPaths(CodeKind::ALL.map(MetaPath::default_for))
    }
}

impl MetaPaths {
    pub fn new(paths: [MetaPath; 3]) -> Result<MetaPaths> {
        for kind in CodeKind::ALL {
            if paths[kind.index()].endpoint() != kind {
                return Err(Error::Config(format!("meta-path for {kind} must start and end on {kind}")));
            }
        }
        Ok(MetaPaths(paths))
    }

    pub fn for_kind(&self, kind: CodeKind) -> &MetaPath {
        &self.0[kind.index()]
    }
}

pub fn encode_graph(graph: &PatientGraph, paths: &MetaPaths, k: usize) -> Result<SpatialEncoding> {
    check_k(k)?;
    let n_events = graph.n_events();
    let mut pe = vec![0.0; n_events * k];
    let mut se = vec![0.0; n_events * k];
    for kind in CodeKind::ALL {
        let adj = metapath_adjacency(graph, paths.for_kind(kind));
        let n = adj.n();
        if n == 0 {
            continue;
        }
        let w = without_diagonal(&adj);
        let lap = laplacian_pe(&w, n, k)?;
        let rw = rw_structural_encoding(&w, n, k)?;
        for (r, &e) in adj.nodes.iter().enumerate() {
            pe[e * k..(e + 1) * k].copy_from_slice(&lap.pe[r * k..(r + 1) * k]);
            se[e * k..(e + 1) * k].copy_from_slice(&rw[r * k..(r + 1) * k]);
        }
    }
    Ok(SpatialEncoding { k, pe, se })
}

/// `base ⊕ pe ⊕ se` row by row; `None` leaves `base` unchanged.
pub fn attach_spatial_encodings(base: &Tensor, enc: Option<&SpatialEncoding>) -> Result<Tensor> {
    let Some(enc) = enc else {
        return Ok(base.clone());
    };
    let n = base.rows();
    if enc.n_nodes() != n {
        return Err(Error::dim(
            "attach_spatial_encodings",
            format!("{n} feature rows vs {} encoded nodes", enc.n_nodes()),
        ));
    }
    let d = base.cols();
    let mut data = Vec::with_capacity(n * (d + 2 * enc.k));
    for e in 0..n {
        data.extend_from_slice(base.row_slice(e));
        data.extend_from_slice(enc.pe_row(e));
        data.extend_from_slice(enc.se_row(e));
    }
    Tensor::matrix(n, d + 2 * enc.k, data)
}
