//! Graph construction and the discrete operators everything else runs on.
//!
//! Conventions, fixed across the crate:
//! - edges are stored once per unordered pair, canonically oriented
//!   src = min(i, j), sorted lexicographically;
//! - edge weights are inverse distances w = 1 / (d + 1e-6);
//! - the generator Laplacian is L = D^-1 (A - D): rows sum to zero,
//!   diagonal exactly -1, spectrum in the closed left half plane, so
//!   du/dt = L u relaxes toward consensus;
//! - the incidence matrix B has +1 at the source and -1 at the
//!   destination of each edge, so (B f)[e] = f(src) - f(dst) and
//!   (Bᵀ g)[v] sums outgoing minus incoming edge values.

use std::collections::BTreeSet;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;

/// Guard added to every distance before inversion so coincident nodes
/// produce large-but-finite weights.
pub const DISTANCE_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub name: String,
    pub seed: u64,
    pub k: usize,
    pub provenance: String,
}

/// A graph problem instance: geometry, connectivity, boundary flags, and
/// the initial scalar field the solvers evolve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSample {
    pub positions: Vec<[f64; 3]>,
    pub edges: Vec<[usize; 2]>,
    pub weights: Vec<f64>,
    #[serde(
        serialize_with = "serialize_mask",
        deserialize_with = "deserialize_mask"
    )]
    pub boundary_mask: Vec<bool>,
    pub diffusivity: Vec<f64>,
    pub u0: Vec<f64>,
    pub metadata: Metadata,
}

fn serialize_mask<S: Serializer>(mask: &[bool], s: S) -> std::result::Result<S::Ok, S::Error> {
    let ints: Vec<u8> = mask.iter().map(|&b| u8::from(b)).collect();
    ints.serialize(s)
}

fn deserialize_mask<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<bool>, D::Error> {
    let ints = Vec::<u8>::deserialize(d)?;
    for &v in &ints {
        if v > 1 {
            return Err(serde::de::Error::custom(format!(
                "boundary_mask entries must be 0 or 1, got {v}"
            )));
        }
    }
    Ok(ints.into_iter().map(|v| v != 0).collect())
}

impl GraphSample {
    pub fn n_nodes(&self) -> usize {
        self.positions.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_nodes();
        if n < 2 {
            return Err(Error::InsufficientNodes { have: n, need: 2 });
        }
        for (what, len) in [
            ("boundary_mask", self.boundary_mask.len()),
            ("diffusivity", self.diffusivity.len()),
            ("u0", self.u0.len()),
        ] {
            if len != n {
                return Err(Error::LengthMismatch { what, got: len, expected: n });
            }
        }
        if self.weights.len() != self.edges.len() {
            return Err(Error::LengthMismatch {
                what: "weights",
                got: self.weights.len(),
                expected: self.edges.len(),
            });
        }
        for (i, p) in self.positions.iter().enumerate() {
            if !p.iter().all(|c| c.is_finite()) {
                return Err(Error::Invalid(format!("non-finite position at node {i}")));
            }
        }
        for (i, &u) in self.u0.iter().enumerate() {
            if !u.is_finite() {
                return Err(Error::Invalid(format!("non-finite u0 at node {i}")));
            }
        }
        for (i, &d) in self.diffusivity.iter().enumerate() {
            if !(d.is_finite() && d > 0.0) {
                return Err(Error::Invalid(format!("diffusivity must be positive, node {i}")));
            }
        }
        let mut seen = BTreeSet::new();
        for (e, &[a, b]) in self.edges.iter().enumerate() {
            if a >= n || b >= n {
                return Err(Error::Invalid(format!("edge {e} references missing node")));
            }
            if a == b {
                return Err(Error::Invalid(format!("edge {e} is a self loop")));
            }
            if !seen.insert((a.min(b), a.max(b))) {
                return Err(Error::Invalid(format!("duplicate edge {e}: ({a}, {b})")));
            }
            if !(self.weights[e].is_finite() && self.weights[e] > 0.0) {
                return Err(Error::Invalid(format!("weight must be positive, edge {e}")));
            }
        }
        if self.boundary_mask.iter().all(|&b| b) {
            return Err(Error::Invalid("no interior node".into()));
        }
        Ok(())
    }

    pub fn interior_indices(&self) -> Vec<usize> {
        (0..self.n_nodes()).filter(|&i| !self.boundary_mask[i]).collect()
    }
}

pub fn euclidean(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// k-nearest-neighbour connectivity, symmetrized by union: (i, j) is kept
/// when either node ranks the other among its k nearest. Distance ties
/// break toward the lower node index. Returns canonical sorted edges.
pub fn build_knn_graph(positions: &[[f64; 3]], k: usize) -> Result<Vec<[usize; 2]>> {
    let n = positions.len();
    if k == 0 {
        return Err(Error::Invalid("k must be at least 1".into()));
    }
    if n <= k {
        return Err(Error::InsufficientNodes { have: n, need: k + 1 });
    }
    for (i, p) in positions.iter().enumerate() {
        if !p.iter().all(|c| c.is_finite()) {
            return Err(Error::Invalid(format!("non-finite position at node {i}")));
        }
    }

    let mut edges = BTreeSet::new();
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
    for i in 0..n {
        cand.clear();
        for (j, p) in positions.iter().enumerate() {
            if j != i {
                cand.push((euclidean(&positions[i], p), j));
            }
        }
        let cmp = |a: &(f64, usize), b: &(f64, usize)| {
            a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
        };
        cand.select_nth_unstable_by(k - 1, cmp);
        for &(_, j) in &cand[..k] {
            edges.insert([i.min(j), i.max(j)]);
        }
    }
    let edges: Vec<[usize; 2]> = edges.into_iter().collect();

    let comps = connected_components(n, &edges);
    if comps > 1 {
        log::warn!("knn graph with k={k} has {comps} connected components");
    }
    Ok(edges)
}

pub fn edge_weights_inverse_distance(
    positions: &[[f64; 3]],
    edges: &[[usize; 2]],
) -> Vec<f64> {
    edges
        .iter()
        .map(|&[a, b]| 1.0 / (euclidean(&positions[a], &positions[b]) + DISTANCE_EPSILON))
        .collect()
}

/// Weighted node degrees; an edge contributes its weight to both ends.
pub fn weighted_degrees(n_nodes: usize, edges: &[[usize; 2]], weights: &[f64]) -> Vec<f64> {
    let mut deg = vec![0.0; n_nodes];
    for (&[a, b], &w) in edges.iter().zip(weights) {
        deg[a] += w;
        deg[b] += w;
    }
    deg
}

/// Generator-convention Laplacian L = D^-1 (A - D). Each row holds
/// w_ij / deg_i off the diagonal and exactly -1 on it.
pub fn laplacian_generator(
    n_nodes: usize,
    edges: &[[usize; 2]],
    weights: &[f64],
) -> Result<SparseMatrix> {
    if weights.len() != edges.len() {
        return Err(Error::LengthMismatch {
            what: "weights",
            got: weights.len(),
            expected: edges.len(),
        });
    }
    let deg = weighted_degrees(n_nodes, edges, weights);
    for (i, &d) in deg.iter().enumerate() {
        if d <= 0.0 || !d.is_finite() {
            return Err(Error::ZeroDegree(i));
        }
    }
    let mut triplets = Vec::with_capacity(2 * edges.len() + n_nodes);
    for (&[a, b], &w) in edges.iter().zip(weights) {
        triplets.push((a, b, w / deg[a]));
        triplets.push((b, a, w / deg[b]));
    }
    for i in 0..n_nodes {
        triplets.push((i, i, -1.0));
    }
    SparseMatrix::from_triplets(n_nodes, n_nodes, &triplets)
}

/// Weight law for the positive-semidefinite solver Laplacians.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CnVariant {
    /// w = 1 / (d + eps)
    Irregular,
    /// w = 1 / (d + eps)^2
    Pde,
}

impl CnVariant {
    pub fn weight(&self, distance: f64) -> f64 {
        let guarded = distance + DISTANCE_EPSILON;
        match self {
            CnVariant::Irregular => 1.0 / guarded,
            CnVariant::Pde => 1.0 / (guarded * guarded),
        }
    }
}

impl std::fmt::Display for CnVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CnVariant::Irregular => write!(f, "irregular"),
            CnVariant::Pde => write!(f, "pde"),
        }
    }
}

impl std::str::FromStr for CnVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "irregular" => Ok(CnVariant::Irregular),
            "pde" => Ok(CnVariant::Pde),
            other => Err(Error::Invalid(format!("unknown variant '{other}'"))),
        }
    }
}

/// Positive-semidefinite Laplacian L = D_w - A_w with weights recomputed
/// from node positions under the variant's law.
pub fn laplacian_cn(
    positions: &[[f64; 3]],
    edges: &[[usize; 2]],
    variant: CnVariant,
) -> Result<SparseMatrix> {
    let n = positions.len();
    let mut triplets = Vec::with_capacity(4 * edges.len());
    for (e, &[a, b]) in edges.iter().enumerate() {
        if a >= n || b >= n {
            return Err(Error::Invalid(format!("edge {e} references missing node")));
        }
        let w = variant.weight(euclidean(&positions[a], &positions[b]));
        triplets.push((a, a, w));
        triplets.push((b, b, w));
        triplets.push((a, b, -w));
        triplets.push((b, a, -w));
    }
    SparseMatrix::from_triplets(n, n, &triplets)
}

/// Signed incidence operator B of shape (E, N): +1 at src, -1 at dst.
pub fn build_incidence(n_nodes: usize, edges: &[[usize; 2]]) -> Result<SparseMatrix> {
    let mut triplets = Vec::with_capacity(2 * edges.len());
    for (e, &[src, dst]) in edges.iter().enumerate() {
        if src >= n_nodes || dst >= n_nodes {
            return Err(Error::Invalid(format!("edge {e} references missing node")));
        }
        if src == dst {
            return Err(Error::Invalid(format!("edge {e} is a self loop")));
        }
        triplets.push((e, src, 1.0));
        triplets.push((e, dst, -1.0));
    }
    SparseMatrix::from_triplets(edges.len(), n_nodes, &triplets)
}

/// BᵀB: the combinatorial node Laplacian (degree on the diagonal, -1 per
/// edge), independent of edge orientation.
pub fn node_laplacian_from_incidence(b: &SparseMatrix) -> Result<SparseMatrix> {
    b.transpose().matmul_sparse(b)
}

/// BBᵀ: the edge-space Laplacian; diagonal 2, off-diagonal ±1 for edge
/// pairs sharing a node, sign given by the orientations.
pub fn edge_laplacian_from_incidence(b: &SparseMatrix) -> Result<SparseMatrix> {
    b.matmul_sparse(&b.transpose())
}

pub fn connected_components(n_nodes: usize, edges: &[[usize; 2]]) -> usize {
    let mut parent: Vec<usize> = (0..n_nodes).collect();
    fn find(parent: &mut Vec<usize>, mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for &[a, b] in edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra] = rb;
        }
    }
    let mut roots = BTreeSet::new();
    for i in 0..n_nodes {
        let r = find(&mut parent, i);
        roots.insert(r);
    }
    roots.len()
}

pub fn validate_permutation(perm: &[usize], n: usize) -> Result<()> {
    if perm.len() != n {
        return Err(Error::BadPermutation);
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n || seen[p] {
            return Err(Error::BadPermutation);
        }
        seen[p] = true;
    }
    Ok(())
}

/// Relabel a per-node field: out[perm[i]] = field[i].
pub fn permute_node_field(field: &[f64], perm: &[usize]) -> Result<Vec<f64>> {
    validate_permutation(perm, field.len())?;
    let mut out = vec![0.0; field.len()];
    for (i, &p) in perm.iter().enumerate() {
        out[p] = field[i];
    }
    Ok(out)
}

/// Where each edge of a relabeled graph landed, and whether its canonical
/// orientation flipped (sign -1) in the process.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgePermutation {
    pub to_new: Vec<usize>,
    pub sign: Vec<f64>,
}

impl EdgePermutation {
    /// Transport a signed per-edge field onto the relabeled graph.
    pub fn apply(&self, field: &[f64]) -> Result<Vec<f64>> {
        if field.len() != self.to_new.len() {
            return Err(Error::LengthMismatch {
                what: "edge field",
                got: field.len(),
                expected: self.to_new.len(),
            });
        }
        let mut out = vec![0.0; field.len()];
        for (e, (&t, &s)) in self.to_new.iter().zip(&self.sign).enumerate() {
            out[t] = s * field[e];
        }
        Ok(out)
    }
}

/// Relabel every node of a sample by perm (old index i becomes perm[i]),
/// re-canonicalizing edge orientation and order. The returned map carries
/// each original edge to its new slot together with the orientation sign.
pub fn permute_graph(g: &GraphSample, perm: &[usize]) -> Result<(GraphSample, EdgePermutation)> {
    let n = g.n_nodes();
    validate_permutation(perm, n)?;

    let mut positions = vec![[0.0; 3]; n];
    let mut boundary = vec![false; n];
    let mut diffusivity = vec![0.0; n];
    for (i, &p) in perm.iter().enumerate() {
        positions[p] = g.positions[i];
        boundary[p] = g.boundary_mask[i];
        diffusivity[p] = g.diffusivity[i];
    }
    let u0 = permute_node_field(&g.u0, perm)?;

    // (canonical edge, original index, orientation sign)
    let mut relabeled: Vec<([usize; 2], usize, f64)> = g
        .edges
        .iter()
        .enumerate()
        .map(|(e, &[a, b])| {
            let (pa, pb) = (perm[a], perm[b]);
            if pa < pb {
                ([pa, pb], e, 1.0)
            } else {
                ([pb, pa], e, -1.0)
            }
        })
        .collect();
    relabeled.sort_by(|x, y| x.0.cmp(&y.0));

    let mut edges = Vec::with_capacity(relabeled.len());
    let mut weights = vec![0.0; relabeled.len()];
    let mut to_new = vec![0usize; relabeled.len()];
    let mut sign = vec![0.0; relabeled.len()];
    for (slot, &(pair, e, s)) in relabeled.iter().enumerate() {
        edges.push(pair);
        weights[slot] = g.weights[e];
        to_new[e] = slot;
        sign[e] = s;
    }

    let sample = GraphSample {
        positions,
        edges,
        weights,
        boundary_mask: boundary,
        diffusivity,
        u0,
        metadata: g.metadata.clone(),
    };
    Ok((sample, EdgePermutation { to_new, sign }))
}
