//! Crank-Nicolson reference solver for graph diffusion with Dirichlet
//! boundaries.
//!
//! The semi-discrete system is du/dt = S K u, factored as a positive
//! diagonal scale S times the symmetric stiffness K = A_w - D_w whose
//! spectrum is non-positive. The generator normalization takes
//! S = diag(D_i / deg_i), so S K equals the diffusivity-scaled
//! generator operator D^-1(A - D); the unnormalized flag takes
//! S = diag(D_i). Each step solves the midpoint system
//! (I - (dt/2) S K) u+ = (I + (dt/2) S K) u multiplied through by
//! S^-1, which is symmetric positive definite on the free nodes and
//! safe for conjugate gradients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{euclidean, weighted_degrees, CnVariant, GraphSample};
use crate::sparse::SparseMatrix;

pub const CG_TOL: f64 = 1e-10;

/// Time-indexed node fields from a solver or a model rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn validate(&self) -> Result<()> {
        if self.states.is_empty() {
            return Err(Error::Invalid("trajectory has no states".into()));
        }
        if self.times.len() != self.states.len() {
            return Err(Error::LengthMismatch {
                what: "trajectory times",
                got: self.times.len(),
                expected: self.states.len(),
            });
        }
        let n = self.states[0].len();
        for (k, s) in self.states.iter().enumerate() {
            if s.len() != n {
                return Err(Error::LengthMismatch {
                    what: "trajectory state",
                    got: s.len(),
                    expected: n,
                });
            }
            if k > 0 && self.times[k] <= self.times[k - 1] {
                return Err(Error::Invalid(format!(
                    "trajectory times not strictly increasing at index {k}"
                )));
            }
        }
        Ok(())
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().map(|s| s.as_slice()).unwrap_or(&[])
    }

    /// Spacing of the time grid; errors when fewer than two states or the
    /// spacing drifts by more than 1e-9 relative.
    pub fn uniform_dt(&self) -> Result<f64> {
        if self.times.len() < 2 {
            return Err(Error::Invalid("trajectory needs at least two states".into()));
        }
        let dt = self.times[1] - self.times[0];
        for w in self.times.windows(2) {
            if ((w[1] - w[0]) - dt).abs() > 1e-9 * dt.abs().max(1.0) {
                return Err(Error::Invalid("trajectory time grid is not uniform".into()));
            }
        }
        Ok(dt)
    }
}

/// Whether the stiffness rows are divided by weighted degree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// S = diag(D_i / deg_i); S K is the generator operator scaled by D.
    Generator,
    /// S = diag(D_i); S K = -D (D_w - A_w).
    Unnormalized,
}

/// du/dt = S K u with S = diag(scale) and symmetric stiffness
/// K = A_w - D_w (non-positive spectrum, zero row sums).
#[derive(Debug, Clone)]
pub struct DiffusionOperator {
    pub scale: Vec<f64>,
    pub stiffness: SparseMatrix,
}

impl DiffusionOperator {
    /// Stiffness from weights recomputed under the variant's law, scale
    /// from the normalization choice.
    pub fn assemble(
        graph: &GraphSample,
        variant: CnVariant,
        norm: Normalization,
    ) -> Result<Self> {
        let weights: Vec<f64> = graph
            .edges
            .iter()
            .map(|&[a, b]| variant.weight(euclidean(&graph.positions[a], &graph.positions[b])))
            .collect();
        Self::from_edge_weights(
            graph.n_nodes(),
            &graph.edges,
            &weights,
            &graph.diffusivity,
            norm,
        )
    }

    /// Same construction but trusting the weights stored on the sample.
    pub fn from_weights(graph: &GraphSample, norm: Normalization) -> Result<Self> {
        Self::from_edge_weights(
            graph.n_nodes(),
            &graph.edges,
            &graph.weights,
            &graph.diffusivity,
            norm,
        )
    }

    fn from_edge_weights(
        n: usize,
        edges: &[[usize; 2]],
        weights: &[f64],
        diffusivity: &[f64],
        norm: Normalization,
    ) -> Result<Self> {
        if diffusivity.len() != n {
            return Err(Error::LengthMismatch {
                what: "diffusivity",
                got: diffusivity.len(),
                expected: n,
            });
        }
        let mut triplets = Vec::with_capacity(4 * edges.len());
        for (e, &[a, b]) in edges.iter().enumerate() {
            if a >= n || b >= n {
                return Err(Error::Invalid(format!("edge {e} references missing node")));
            }
            let w = weights[e];
            triplets.push((a, b, w));
            triplets.push((b, a, w));
            triplets.push((a, a, -w));
            triplets.push((b, b, -w));
        }
        let stiffness = SparseMatrix::from_triplets(n, n, &triplets)?;
        let deg = weighted_degrees(n, edges, weights);
        let mut scale = Vec::with_capacity(n);
        for i in 0..n {
            let d = diffusivity[i];
            if !d.is_finite() || d < 0.0 {
                return Err(Error::Invalid(format!("diffusivity[{i}] = {d} is not admissible")));
            }
            let s = match norm {
                Normalization::Unnormalized => d,
                Normalization::Generator => {
                    if d == 0.0 {
                        0.0
                    } else if deg[i] <= 0.0 || !deg[i].is_finite() {
                        return Err(Error::ZeroDegree(i));
                    } else {
                        d / deg[i]
                    }
                }
            };
            scale.push(s);
        }
        Ok(DiffusionOperator { scale, stiffness })
    }

    pub fn n_nodes(&self) -> usize {
        self.scale.len()
    }

    /// S K u.
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let mut v = self.stiffness.matvec(u);
        for (vi, si) in v.iter_mut().zip(&self.scale) {
            *vi *= si;
        }
        v
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn cg<F: Fn(&[f64]) -> Vec<f64>>(
    apply: F,
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>> {
    let b_norm = dot(b, b).sqrt();
    if b_norm == 0.0 {
        return Ok(vec![0.0; b.len()]);
    }
    let mut x = vec![0.0; b.len()];
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut rs = dot(&r, &r);
    for it in 1..=max_iter {
        let ap = apply(&p);
        let pap = dot(&p, &ap);
        if pap <= 0.0 || !pap.is_finite() {
            return Err(Error::SolveFailed { residual: rs.sqrt() / b_norm, iters: it });
        }
        let alpha = rs / pap;
        for i in 0..x.len() {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rs_new = dot(&r, &r);
        if rs_new.sqrt() <= tol * b_norm {
            return Ok(x);
        }
        let beta = rs_new / rs;
        for i in 0..p.len() {
            p[i] = r[i] + beta * p[i];
        }
        rs = rs_new;
    }
    Err(Error::SolveFailed { residual: rs.sqrt() / b_norm, iters: max_iter })
}

/// Conjugate-gradient solve of A x = b for symmetric positive definite A.
pub fn solve_sparse_spd(
    a: &SparseMatrix,
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>> {
    let (rows, cols) = a.shape();
    if rows != cols {
        return Err(Error::Invalid(format!("matrix {rows}x{cols} is not square")));
    }
    if b.len() != rows {
        return Err(Error::LengthMismatch { what: "rhs", got: b.len(), expected: rows });
    }
    cg(|x| a.matvec(x), b, tol, max_iter)
}

/// One midpoint step. Boundary nodes are pinned to boundary_value; nodes
/// with zero scale are frozen at their current value (the operator cannot
/// move them).
pub fn cn_step(
    u: &[f64],
    op: &DiffusionOperator,
    dt: f64,
    boundary_mask: &[bool],
    boundary_value: f64,
) -> Result<Vec<f64>> {
    let n = op.n_nodes();
    if u.len() != n {
        return Err(Error::LengthMismatch { what: "state", got: u.len(), expected: n });
    }
    if boundary_mask.len() != n {
        return Err(Error::LengthMismatch {
            what: "boundary mask",
            got: boundary_mask.len(),
            expected: n,
        });
    }
    if !dt.is_finite() || dt < 0.0 {
        return Err(Error::Invalid(format!("time step {dt} is not admissible")));
    }
    for (i, &s) in op.scale.iter().enumerate() {
        if !s.is_finite() || s < 0.0 {
            return Err(Error::Invalid(format!("operator scale[{i}] = {s} is not admissible")));
        }
    }

    // known value per node, None when the node is a solver unknown
    let known: Vec<Option<f64>> = (0..n)
        .map(|i| {
            if boundary_mask[i] {
                Some(boundary_value)
            } else if op.scale[i] == 0.0 {
                Some(u[i])
            } else {
                None
            }
        })
        .collect();
    let free: Vec<usize> = (0..n).filter(|&i| known[i].is_none()).collect();
    if free.is_empty() {
        return Ok(known.iter().map(|v| v.unwrap()).collect());
    }

    let ku = op.stiffness.matvec(u);
    let half = dt / 2.0;
    let mut rhs = Vec::with_capacity(free.len());
    for &i in &free {
        let mut r = u[i] / op.scale[i] + half * ku[i];
        // implicit coupling to pinned nodes moves to the right-hand side
        for (j, kij) in op.stiffness.iter_row(i) {
            if let Some(v) = known[j] {
                r += half * kij * v;
            }
        }
        rhs.push(r);
    }

    let apply = |x: &[f64]| {
        let mut full = vec![0.0; n];
        for (slot, &i) in free.iter().enumerate() {
            full[i] = x[slot];
        }
        let kx = op.stiffness.matvec(&full);
        free.iter()
            .enumerate()
            .map(|(slot, &i)| x[slot] / op.scale[i] - half * kx[i])
            .collect()
    };
    let sol = cg(apply, &rhs, CG_TOL, 20 * free.len() + 200)?;

    let mut out = vec![0.0; n];
    for (i, v) in known.iter().enumerate() {
        if let Some(v) = v {
            out[i] = *v;
        }
    }
    for (slot, &i) in free.iter().enumerate() {
        out[i] = sol[slot];
    }
    Ok(out)
}

/// Repeated cn_step from u0 with zero Dirichlet boundary.
pub fn cn_rollout(
    graph: &GraphSample,
    variant: CnVariant,
    t_final: f64,
    n_t: usize,
) -> Result<Trajectory> {
    cn_rollout_with(graph, variant, Normalization::Generator, t_final, n_t)
}

pub fn cn_rollout_with(
    graph: &GraphSample,
    variant: CnVariant,
    norm: Normalization,
    t_final: f64,
    n_t: usize,
) -> Result<Trajectory> {
    if !(t_final > 0.0) || !t_final.is_finite() {
        return Err(Error::Invalid(format!("final time {t_final} is not admissible")));
    }
    if n_t == 0 {
        return Err(Error::Invalid("need at least one time step".into()));
    }
    let op = DiffusionOperator::assemble(graph, variant, norm)?;
    let dt = t_final / n_t as f64;
    let boundary_value = 0.0;

    let mut state: Vec<f64> = graph
        .u0
        .iter()
        .zip(&graph.boundary_mask)
        .map(|(&v, &b)| if b { boundary_value } else { v })
        .collect();
    let mut times = Vec::with_capacity(n_t + 1);
    let mut states = Vec::with_capacity(n_t + 1);
    times.push(0.0);
    states.push(state.clone());
    for k in 1..=n_t {
        state = cn_step(&state, &op, dt, &graph.boundary_mask, boundary_value)?;
        times.push(k as f64 * dt);
        states.push(state.clone());
    }
    Ok(Trajectory { times, states })
}
