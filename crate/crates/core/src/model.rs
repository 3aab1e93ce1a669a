//! Neural dynamics models over graph samples: the node-edge-edge-node
//! network with an explicit edge head, plus GCN and MLP baselines, all
//! built on the autodiff tape so one implementation serves training,
//! evaluation, and gradient checks.
//!
//! Edge states are kept in two channels with opposite behavior under
//! orientation flips: the even channel sees [f_src + f_dst, length,
//! time encoding] and carries biases; the odd channel sees
//! [f_src - f_dst, unit direction] and is bias-free with odd
//! activations, so flipping an edge negates it exactly. Node-level
//! aggregates transport the odd channel through B^T, which cancels the
//! flip; the node-dynamics head is therefore orientation-invariant and
//! the edge-dynamics head orientation-covariant, matching the structure
//! the skew-coupled losses expect.

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::cn::Trajectory;
use crate::error::{Error, Result};
use crate::graph::{build_incidence, laplacian_generator, weighted_degrees, GraphSample};
use crate::sparse::SparseMatrix;

pub const DEFAULT_OMEGAS: [f64; 5] = [1.0, 2.0, 4.0, 8.0, 16.0];
pub const PARAMS_FORMAT_VERSION: u32 = 1;

/// Rational Fourier features [sin(wt/(1+wt)), cos(wt/(1+wt))] per
/// frequency; bounded for all t >= 0 because the argument saturates at 1.
pub fn encode_time(t: f64, omegas: &[f64]) -> Result<Vec<f64>> {
    if !(t >= 0.0) {
        return Err(Error::Invalid(format!("time {t} must be non-negative")));
    }
    if omegas.is_empty() {
        return Err(Error::Invalid("need at least one frequency".into()));
    }
    let mut out = Vec::with_capacity(2 * omegas.len());
    for &w in omegas {
        if !(w > 0.0) || !w.is_finite() {
            return Err(Error::Invalid(format!("frequency {w} must be positive")));
        }
        let arg = w * t / (1.0 + w * t);
        out.push(arg.sin());
        out.push(arg.cos());
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Ocgnn,
    Gcn,
    Mlp,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelKind::Ocgnn => write!(f, "ocgnn"),
            ModelKind::Gcn => write!(f, "gcn"),
            ModelKind::Mlp => write!(f, "mlp"),
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ocgnn" => Ok(ModelKind::Ocgnn),
            "gcn" => Ok(ModelKind::Gcn),
            "mlp" => Ok(ModelKind::Mlp),
            other => Err(Error::Invalid(format!("unknown model kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// fan-in of the layer this tensor belongs to; drives the init bound
    pub fan_in: usize,
    /// initialize to exactly one (the anchor gain) instead of uniform
    pub init_one: bool,
}

impl ParamSpec {
    fn new(name: &str, rows: usize, cols: usize, fan_in: usize) -> Self {
        ParamSpec { name: name.into(), rows, cols, fan_in, init_one: false }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// All learnable weights of one model, stored as a single flat vector with
/// a named-segment layout so the optimizer can treat it as one array.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub kind: ModelKind,
    pub hidden: usize,
    pub layers: usize,
    pub omegas: Vec<f64>,
    pub specs: Vec<ParamSpec>,
    pub data: Vec<f64>,
}

fn ocgnn_specs(hidden: usize, layers: usize, n_time: usize) -> Vec<ParamSpec> {
    let h = hidden;
    let mut specs = Vec::new();
    let mut node_dim = 1;
    for b in 0..layers {
        let even_in = node_dim + 1 + n_time;
        let odd_in = node_dim + 3;
        specs.push(ParamSpec::new(&format!("block{b}.edge_even.w"), even_in, h, even_in));
        specs.push(ParamSpec::new(&format!("block{b}.edge_even.b"), 1, h, even_in));
        specs.push(ParamSpec::new(&format!("block{b}.edge_odd.w"), odd_in, h, odd_in));
        specs.push(ParamSpec::new(&format!("block{b}.refine_even.w"), 2 * h, h, 2 * h));
        specs.push(ParamSpec::new(&format!("block{b}.refine_even.b"), 1, h, 2 * h));
        specs.push(ParamSpec::new(&format!("block{b}.refine_odd.w"), 2 * h, h, 2 * h));
        specs.push(ParamSpec::new(&format!("block{b}.node.w"), 2 * h, h, 2 * h));
        specs.push(ParamSpec::new(&format!("block{b}.node.b"), 1, h, 2 * h));
        node_dim = h;
    }
    specs.push(ParamSpec::new("head.node.w", h, 1, h));
    specs.push(ParamSpec::new("head.node.b", 1, 1, h));
    specs.push(ParamSpec::new("head.edge.w", h, 1, h));
    let mut anchor = ParamSpec::new("head.anchor", 1, 1, 1);
    anchor.init_one = true;
    specs.push(anchor);
    specs
}

fn gcn_specs(hidden: usize, layers: usize, n_time: usize) -> Vec<ParamSpec> {
    let h = hidden;
    let mut specs = Vec::new();
    let mut dim = 1 + n_time;
    for l in 0..layers {
        specs.push(ParamSpec::new(&format!("layer{l}.w"), dim, h, dim));
        specs.push(ParamSpec::new(&format!("layer{l}.b"), 1, h, dim));
        dim = h;
    }
    specs.push(ParamSpec::new("head.w", h, 1, h));
    specs.push(ParamSpec::new("head.b", 1, 1, h));
    specs
}

fn mlp_specs(hidden: usize, layers: usize, n_time: usize) -> Vec<ParamSpec> {
    let h = hidden;
    let mut specs = Vec::new();
    let mut dim = 4 + n_time;
    for l in 0..layers {
        specs.push(ParamSpec::new(&format!("layer{l}.w"), dim, h, dim));
        specs.push(ParamSpec::new(&format!("layer{l}.b"), 1, h, dim));
        dim = h;
    }
    specs.push(ParamSpec::new("head.w", h, 1, h));
    specs.push(ParamSpec::new("head.b", 1, 1, h));
    specs
}

impl ModelParams {
    /// Seeded uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)]; the
    /// anchor gain starts at exactly 1 so the untrained network already
    /// leans on the diffusion operator.
    pub fn init(
        kind: ModelKind,
        hidden: usize,
        layers: usize,
        omegas: &[f64],
        seed: u64,
    ) -> Result<Self> {
        if hidden == 0 || layers == 0 {
            return Err(Error::Invalid("hidden width and layer count must be positive".into()));
        }
        if omegas.is_empty() {
            return Err(Error::Invalid("need at least one frequency".into()));
        }
        let n_time = 2 * omegas.len();
        let specs = match kind {
            ModelKind::Ocgnn => ocgnn_specs(hidden, layers, n_time),
            ModelKind::Gcn => gcn_specs(hidden, layers, n_time),
            ModelKind::Mlp => mlp_specs(hidden, layers, n_time),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Vec::with_capacity(specs.iter().map(|s| s.len()).sum());
        for spec in &specs {
            if spec.init_one {
                data.extend(std::iter::repeat(1.0).take(spec.len()));
            } else {
                let bound = 1.0 / (spec.fan_in as f64).sqrt();
                data.extend((0..spec.len()).map(|_| rng.gen_range(-bound..bound)));
            }
        }
        Ok(ModelParams {
            kind,
            hidden,
            layers,
            omegas: omegas.to_vec(),
            specs,
            data,
        })
    }

    pub fn n_params(&self) -> usize {
        self.data.len()
    }

    pub fn validate(&self) -> Result<()> {
        let expect: usize = self.specs.iter().map(|s| s.len()).sum();
        if self.data.len() != expect {
            return Err(Error::LengthMismatch {
                what: "parameter vector",
                got: self.data.len(),
                expected: expect,
            });
        }
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("parameters contain non-finite values".into()));
        }
        Ok(())
    }

    pub fn zero(&mut self) {
        self.data.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn segment_offset(&self, name: &str) -> Result<(usize, &ParamSpec)> {
        let mut off = 0;
        for s in &self.specs {
            if s.name == name {
                return Ok((off, s));
            }
            off += s.len();
        }
        Err(Error::Invalid(format!("no parameter segment '{name}'")))
    }

    pub fn set_segment(&mut self, name: &str, values: &[f64]) -> Result<()> {
        let (off, spec) = self.segment_offset(name)?;
        if values.len() != spec.len() {
            return Err(Error::LengthMismatch {
                what: "segment",
                got: values.len(),
                expected: spec.len(),
            });
        }
        let len = spec.len();
        self.data[off..off + len].copy_from_slice(values);
        Ok(())
    }
}

/// Serialized form: architecture descriptor plus the flat vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamsDocument {
    pub version: u32,
    pub kind: ModelKind,
    pub hidden: usize,
    pub layers: usize,
    pub omegas: Vec<f64>,
    pub data: Vec<f64>,
}

impl ModelParams {
    pub fn to_document(&self) -> ParamsDocument {
        ParamsDocument {
            version: PARAMS_FORMAT_VERSION,
            kind: self.kind,
            hidden: self.hidden,
            layers: self.layers,
            omegas: self.omegas.clone(),
            data: self.data.clone(),
        }
    }

    pub fn from_document(doc: ParamsDocument) -> Result<Self> {
        if doc.version != PARAMS_FORMAT_VERSION {
            return Err(Error::Invalid(format!(
                "parameter document version {} (expected {PARAMS_FORMAT_VERSION})",
                doc.version
            )));
        }
        let mut params = ModelParams::init(doc.kind, doc.hidden, doc.layers, &doc.omegas, 0)?;
        if doc.data.len() != params.data.len() {
            return Err(Error::LengthMismatch {
                what: "parameter vector",
                got: doc.data.len(),
                expected: params.data.len(),
            });
        }
        params.data = doc.data;
        params.validate()?;
        Ok(params)
    }
}

/// Constant per-graph structures shared by every forward pass.
pub struct GraphContext {
    pub n_nodes: usize,
    pub n_edges: usize,
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    pub incidence: Rc<SparseMatrix>,
    /// |B|: +1 at both endpoints, for orientation-free aggregation in a
    /// single edge-ordered pass
    pub incidence_abs: Rc<SparseMatrix>,
    pub laplacian_gen: Rc<SparseMatrix>,
    pub gcn_adj: Rc<SparseMatrix>,
    /// 1 / (number of incident edges), floored at one edge
    pub inv_edge_count: Vec<f64>,
    pub lengths: Vec<f64>,
    /// row-major E x 3 unit vectors src -> dst
    pub unit_dirs: Vec<f64>,
    pub diffusivity: Vec<f64>,
    /// per-edge Fickian coefficient w * avg(D/deg) over the two endpoints;
    /// -flux_coeff .* (B u) is the discrete diffusive flux of u
    pub flux_coeff: Vec<f64>,
    /// 1.0 on interior nodes, 0.0 on boundary nodes
    pub interior: Vec<f64>,
    pub positions_flat: Vec<f64>,
    pub u0: Vec<f64>,
}

impl GraphContext {
    pub fn new(graph: &GraphSample) -> Result<Self> {
        let n = graph.n_nodes();
        let e = graph.n_edges();
        if e == 0 {
            return Err(Error::Invalid("graph has no edges".into()));
        }
        let src: Vec<usize> = graph.edges.iter().map(|&[a, _]| a).collect();
        let dst: Vec<usize> = graph.edges.iter().map(|&[_, b]| b).collect();
        let incidence = Rc::new(build_incidence(n, &graph.edges)?);
        let mut abs_triplets = Vec::with_capacity(2 * e);
        for (i, (&a, &b)) in src.iter().zip(&dst).enumerate() {
            abs_triplets.push((i, a, 1.0));
            abs_triplets.push((i, b, 1.0));
        }
        let incidence_abs = Rc::new(SparseMatrix::from_triplets(e, n, &abs_triplets)?);
        let laplacian_gen = Rc::new(laplacian_generator(n, &graph.edges, &graph.weights)?);

        // symmetric-normalized weighted adjacency with self-loops
        let mut deg_tilde = vec![1.0; n];
        for (i, &w) in graph.weights.iter().enumerate() {
            deg_tilde[src[i]] += w;
            deg_tilde[dst[i]] += w;
        }
        let inv_sqrt: Vec<f64> = deg_tilde.iter().map(|d| 1.0 / d.sqrt()).collect();
        let mut adj_triplets = Vec::with_capacity(2 * e + n);
        for (i, &w) in graph.weights.iter().enumerate() {
            let (a, b) = (src[i], dst[i]);
            adj_triplets.push((a, b, w * inv_sqrt[a] * inv_sqrt[b]));
            adj_triplets.push((b, a, w * inv_sqrt[a] * inv_sqrt[b]));
        }
        for (i, &s) in inv_sqrt.iter().enumerate() {
            adj_triplets.push((i, i, s * s));
        }
        let gcn_adj = Rc::new(SparseMatrix::from_triplets(n, n, &adj_triplets)?);

        let mut count = vec![0usize; n];
        for i in 0..e {
            count[src[i]] += 1;
            count[dst[i]] += 1;
        }
        let inv_edge_count: Vec<f64> = count.iter().map(|&c| 1.0 / c.max(1) as f64).collect();

        let mut lengths = Vec::with_capacity(e);
        let mut unit_dirs = Vec::with_capacity(3 * e);
        for i in 0..e {
            let (a, b) = (graph.positions[src[i]], graph.positions[dst[i]]);
            let d = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
            let len = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            lengths.push(len);
            if len > 0.0 {
                unit_dirs.extend_from_slice(&[d[0] / len, d[1] / len, d[2] / len]);
            } else {
                unit_dirs.extend_from_slice(&[0.0, 0.0, 0.0]);
            }
        }
        let wdeg = weighted_degrees(n, &graph.edges, &graph.weights);
        let flux_coeff: Vec<f64> = graph
            .weights
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let (a, b) = (src[i], dst[i]);
                0.5 * w * (graph.diffusivity[a] / wdeg[a] + graph.diffusivity[b] / wdeg[b])
            })
            .collect();

        let interior: Vec<f64> = graph.boundary_mask.iter().map(|&b| if b { 0.0 } else { 1.0 }).collect();
        let positions_flat: Vec<f64> = graph.positions.iter().flat_map(|p| p.iter().copied()).collect();

        Ok(GraphContext {
            n_nodes: n,
            n_edges: e,
            src,
            dst,
            incidence,
            incidence_abs,
            laplacian_gen,
            gcn_adj,
            inv_edge_count,
            lengths,
            unit_dirs,
            diffusivity: graph.diffusivity.clone(),
            flux_coeff,
            interior,
            positions_flat,
            u0: graph.u0.clone(),
        })
    }

    /// Discrete Fickian flux of a node field: -flux_coeff .* (B u). Starts
    /// the rollout edge field on the scale of the node dynamics it couples to.
    pub fn initial_flux(&self, u: &[f64]) -> Vec<f64> {
        self.incidence
            .matvec(u)
            .iter()
            .zip(&self.flux_coeff)
            .map(|(bu, c)| -c * bu)
            .collect()
    }
}

/// Per-segment tape leaves, all views into one flat parameter leaf.
pub struct BoundParams {
    pub flat: Var,
    pub segments: Vec<Var>,
}

impl BoundParams {
    fn get(&self, params: &ModelParams, name: &str) -> Result<Var> {
        params
            .specs
            .iter()
            .position(|s| s.name == name)
            .map(|i| self.segments[i])
            .ok_or_else(|| Error::Invalid(format!("no parameter segment '{name}'")))
    }
}

/// Record the flat vector as one leaf and carve named views out of it,
/// so the gradient of the whole model is a single flat array.
pub fn bind_params(tape: &Tape, params: &ModelParams) -> Result<BoundParams> {
    params.validate()?;
    let flat = tape.var(params.data.len(), 1, params.data.clone())?;
    bind_params_to(tape, params, flat)
}

/// Same carving against a caller-provided flat leaf (used by gradient
/// checks that perturb the flat vector directly).
pub fn bind_params_to(tape: &Tape, params: &ModelParams, flat: Var) -> Result<BoundParams> {
    if flat.len() != params.data.len() {
        return Err(Error::LengthMismatch {
            what: "flat parameters",
            got: flat.len(),
            expected: params.data.len(),
        });
    }
    let mut segments = Vec::with_capacity(params.specs.len());
    let mut off = 0;
    for spec in &params.specs {
        let idx: Vec<usize> = (off..off + spec.len()).collect();
        let seg = tape.gather_rows(flat, &idx)?;
        segments.push(tape.reshape(seg, spec.rows, spec.cols)?);
        off += spec.len();
    }
    Ok(BoundParams { flat, segments })
}

fn time_features_for_rows(tape: &Tape, t: f64, omegas: &[f64], rows: usize) -> Result<Var> {
    let gamma = encode_time(t, omegas)?;
    let cols = gamma.len();
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        data.extend_from_slice(&gamma);
    }
    tape.constant(rows, cols, data)
}

/// One forward pass of the node-edge-edge-node model on the tape.
/// Returns the node-dynamics field (N x 1) and edge-dynamics field (E x 1).
pub fn ocgnn_on_tape(
    tape: &Tape,
    ctx: &GraphContext,
    params: &ModelParams,
    bound: &BoundParams,
    f: Var,
    t: f64,
) -> Result<(Var, Var)> {
    if params.kind != ModelKind::Ocgnn {
        return Err(Error::Invalid(format!("expected ocgnn parameters, got {}", params.kind)));
    }
    if f.rows != ctx.n_nodes || f.cols != 1 {
        return Err(Error::LengthMismatch { what: "node field", got: f.len(), expected: ctx.n_nodes });
    }
    let e = ctx.n_edges;
    let gamma_e = time_features_for_rows(tape, t, &params.omegas, e)?;
    let len_col = tape.constant(e, 1, ctx.lengths.clone())?;
    let dirs = tape.constant(e, 3, ctx.unit_dirs.clone())?;

    let mut x = f;
    let mut h_odd_last = None;
    for b in 0..params.layers {
        let xs = tape.gather_rows(x, &ctx.src)?;
        let xd = tape.gather_rows(x, &ctx.dst)?;

        // node-to-edge: even channel [x_src + x_dst, length, gamma(t)],
        // odd channel [x_src - x_dst, unit direction]
        let even_in = tape.concat_cols(tape.concat_cols(tape.add(xs, xd)?, len_col)?, gamma_e)?;
        let odd_in = tape.concat_cols(tape.sub(xs, xd)?, dirs)?;
        let w_ee = bound.get(params, &format!("block{b}.edge_even.w"))?;
        let b_ee = bound.get(params, &format!("block{b}.edge_even.b"))?;
        let w_eo = bound.get(params, &format!("block{b}.edge_odd.w"))?;
        let mut h_even = tape.tanh(tape.add_bias(tape.matmul(even_in, w_ee)?, b_ee)?);
        let mut h_odd = tape.tanh(tape.matmul(odd_in, w_eo)?);

        // edge-to-edge: edges sharing a node exchange through that node's
        // mean; the odd channel rides B^T so the exchange stays odd
        let m_even = tape.scale_rows(tape.spmm_t(&ctx.incidence_abs, h_even)?, &ctx.inv_edge_count)?;
        let m_odd = tape.scale_rows(tape.spmm_t(&ctx.incidence, h_odd)?, &ctx.inv_edge_count)?;
        let a_even = tape.scalar_mul(
            tape.add(tape.gather_rows(m_even, &ctx.src)?, tape.gather_rows(m_even, &ctx.dst)?)?,
            0.5,
        );
        let a_odd = tape.sub(tape.gather_rows(m_odd, &ctx.src)?, tape.gather_rows(m_odd, &ctx.dst)?)?;
        let w_re = bound.get(params, &format!("block{b}.refine_even.w"))?;
        let b_re = bound.get(params, &format!("block{b}.refine_even.b"))?;
        let w_ro = bound.get(params, &format!("block{b}.refine_odd.w"))?;
        h_even = tape.tanh(tape.add_bias(tape.matmul(tape.concat_cols(h_even, a_even)?, w_re)?, b_re)?);
        h_odd = tape.tanh(tape.matmul(tape.concat_cols(h_odd, a_odd)?, w_ro)?);

        // edge-to-node: both channels land even at the nodes
        let n_even = tape.scale_rows(tape.spmm_t(&ctx.incidence_abs, h_even)?, &ctx.inv_edge_count)?;
        let n_odd = tape.scale_rows(tape.spmm_t(&ctx.incidence, h_odd)?, &ctx.inv_edge_count)?;
        let w_n = bound.get(params, &format!("block{b}.node.w"))?;
        let b_n = bound.get(params, &format!("block{b}.node.b"))?;
        x = tape.tanh(tape.add_bias(tape.matmul(tape.concat_cols(n_even, n_odd)?, w_n)?, b_n)?);
        h_odd_last = Some(h_odd);
    }

    let w_head = bound.get(params, "head.node.w")?;
    let b_head = bound.get(params, "head.node.b")?;
    let mut f_dot = tape.add_bias(tape.matmul(x, w_head)?, b_head)?;

    // anchor correction: alpha * D * (L_gen f)
    let alpha = bound.get(params, "head.anchor")?;
    let lf = tape.spmm(&ctx.laplacian_gen, f)?;
    let anchor = tape.scale_var(tape.scale_rows(lf, &ctx.diffusivity)?, alpha)?;
    f_dot = tape.add(f_dot, anchor)?;

    let w_ghead = bound.get(params, "head.edge.w")?;
    let g_dot = tape.matmul(h_odd_last.expect("layers >= 1"), w_ghead)?;
    Ok((f_dot, g_dot))
}

/// Spectral baseline: h0 = [f, gamma(t)], h <- tanh(A_hat h W + b).
pub fn gcn_on_tape(
    tape: &Tape,
    ctx: &GraphContext,
    params: &ModelParams,
    bound: &BoundParams,
    f: Var,
    t: f64,
) -> Result<Var> {
    if params.kind != ModelKind::Gcn {
        return Err(Error::Invalid(format!("expected gcn parameters, got {}", params.kind)));
    }
    if f.rows != ctx.n_nodes || f.cols != 1 {
        return Err(Error::LengthMismatch { what: "node field", got: f.len(), expected: ctx.n_nodes });
    }
    let gamma_n = time_features_for_rows(tape, t, &params.omegas, ctx.n_nodes)?;
    let mut h = tape.concat_cols(f, gamma_n)?;
    for l in 0..params.layers {
        let w = bound.get(params, &format!("layer{l}.w"))?;
        let b = bound.get(params, &format!("layer{l}.b"))?;
        h = tape.tanh(tape.add_bias(tape.spmm(&ctx.gcn_adj, tape.matmul(h, w)?)?, b)?);
    }
    let w = bound.get(params, "head.w")?;
    let b = bound.get(params, "head.b")?;
    tape.add_bias(tape.matmul(h, w)?, b)
}

/// Coordinate baseline: per-node dense net on [x_i, u0_i, gamma(t)];
/// ignores connectivity entirely.
pub fn mlp_on_tape(
    tape: &Tape,
    ctx: &GraphContext,
    params: &ModelParams,
    bound: &BoundParams,
    t: f64,
) -> Result<Var> {
    if params.kind != ModelKind::Mlp {
        return Err(Error::Invalid(format!("expected mlp parameters, got {}", params.kind)));
    }
    let n = ctx.n_nodes;
    let pos = tape.constant(n, 3, ctx.positions_flat.clone())?;
    let u0 = tape.constant(n, 1, ctx.u0.clone())?;
    let gamma_n = time_features_for_rows(tape, t, &params.omegas, n)?;
    let mut h = tape.concat_cols(tape.concat_cols(pos, u0)?, gamma_n)?;
    for l in 0..params.layers {
        let w = bound.get(params, &format!("layer{l}.w"))?;
        let b = bound.get(params, &format!("layer{l}.b"))?;
        h = tape.tanh(tape.add_bias(tape.matmul(h, w)?, b)?);
    }
    let w = bound.get(params, "head.w")?;
    let b = bound.get(params, "head.b")?;
    tape.add_bias(tape.matmul(h, w)?, b)
}

/// Forward dispatch: node dynamics always, edge dynamics for the model
/// that has an edge head.
pub fn forward_on_tape(
    tape: &Tape,
    ctx: &GraphContext,
    params: &ModelParams,
    bound: &BoundParams,
    f: Var,
    t: f64,
) -> Result<(Var, Option<Var>)> {
    match params.kind {
        ModelKind::Ocgnn => {
            let (fd, gd) = ocgnn_on_tape(tape, ctx, params, bound, f, t)?;
            Ok((fd, Some(gd)))
        }
        ModelKind::Gcn => Ok((gcn_on_tape(tape, ctx, params, bound, f, t)?, None)),
        ModelKind::Mlp => Ok((mlp_on_tape(tape, ctx, params, bound, t)?, None)),
    }
}

/// Convenience single forward pass without gradient plumbing.
pub fn ocgnn_forward(
    graph: &GraphSample,
    f: &[f64],
    t: f64,
    params: &ModelParams,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let ctx = GraphContext::new(graph)?;
    let tape = Tape::new();
    let bound = bind_params(&tape, params)?;
    let fv = tape.var(ctx.n_nodes, 1, f.to_vec())?;
    let (fd, gd) = ocgnn_on_tape(&tape, &ctx, params, &bound, fv, t)?;
    Ok((tape.value(fd), tape.value(gd)))
}

pub fn gcn_forward(graph: &GraphSample, f: &[f64], t: f64, params: &ModelParams) -> Result<Vec<f64>> {
    let ctx = GraphContext::new(graph)?;
    let tape = Tape::new();
    let bound = bind_params(&tape, params)?;
    let fv = tape.var(ctx.n_nodes, 1, f.to_vec())?;
    Ok(tape.value(gcn_on_tape(&tape, &ctx, params, &bound, fv, t)?))
}

pub fn mlp_forward(
    positions: &[[f64; 3]],
    u0: &[f64],
    t: f64,
    params: &ModelParams,
) -> Result<Vec<f64>> {
    if params.kind != ModelKind::Mlp {
        return Err(Error::Invalid(format!("expected mlp parameters, got {}", params.kind)));
    }
    if positions.len() != u0.len() {
        return Err(Error::LengthMismatch {
            what: "initial condition",
            got: u0.len(),
            expected: positions.len(),
        });
    }
    let n = positions.len();
    let tape = Tape::new();
    let bound = bind_params(&tape, params)?;
    let pos_flat: Vec<f64> = positions.iter().flat_map(|p| p.iter().copied()).collect();
    let pos = tape.constant(n, 3, pos_flat)?;
    let u0v = tape.constant(n, 1, u0.to_vec())?;
    let gamma_n = time_features_for_rows(&tape, t, &params.omegas, n)?;
    let mut h = tape.concat_cols(tape.concat_cols(pos, u0v)?, gamma_n)?;
    for l in 0..params.layers {
        let w = bound.get(params, &format!("layer{l}.w"))?;
        let b = bound.get(params, &format!("layer{l}.b"))?;
        h = tape.tanh(tape.add_bias(tape.matmul(h, w)?, b)?);
    }
    let w = bound.get(params, "head.w")?;
    let b = bound.get(params, "head.b")?;
    Ok(tape.value(tape.add_bias(tape.matmul(h, w)?, b)?))
}

pub fn euler_update(f: &[f64], f_dot: &[f64], dt: f64) -> Vec<f64> {
    f.iter().zip(f_dot).map(|(&x, &d)| x + dt * d).collect()
}

/// On-tape rollout used by training: all states and dynamics stay
/// connected to the parameter leaf. States include t = 0 and every one of
/// the n_t uniformly spaced points; dynamics are evaluated at each.
pub struct TapeRollout {
    pub times: Vec<f64>,
    pub f: Vec<Var>,
    pub f_dot: Vec<Var>,
    /// empty for models without an edge head
    pub g: Vec<Var>,
    pub g_dot: Vec<Var>,
}

pub fn rollout_on_tape(
    tape: &Tape,
    ctx: &GraphContext,
    params: &ModelParams,
    bound: &BoundParams,
    t_final: f64,
    n_t: usize,
) -> Result<TapeRollout> {
    if !(t_final > 0.0) || !t_final.is_finite() {
        return Err(Error::Invalid(format!("final time {t_final} is not admissible")));
    }
    if n_t == 0 {
        return Err(Error::Invalid("need at least one time step".into()));
    }
    let dt = t_final / n_t as f64;
    let n = ctx.n_nodes;

    let f0_data: Vec<f64> = ctx.u0.iter().zip(&ctx.interior).map(|(&u, &m)| u * m).collect();
    let mut f = tape.constant(n, 1, f0_data)?;
    let has_edges = params.kind == ModelKind::Ocgnn;
    let mut g = if has_edges {
        let f0 = tape.value(f);
        Some(tape.constant(ctx.n_edges, 1, ctx.initial_flux(&f0))?)
    } else {
        None
    };

    let mut out = TapeRollout {
        times: Vec::with_capacity(n_t + 1),
        f: Vec::with_capacity(n_t + 1),
        f_dot: Vec::with_capacity(n_t + 1),
        g: Vec::new(),
        g_dot: Vec::new(),
    };
    for k in 0..=n_t {
        let t = k as f64 * dt;
        let (f_dot, g_dot) = forward_on_tape(tape, ctx, params, bound, f, t)?;
        out.times.push(t);
        out.f.push(f);
        out.f_dot.push(f_dot);
        if let (Some(gv), Some(gd)) = (g, g_dot) {
            out.g.push(gv);
            out.g_dot.push(gd);
        }
        if k < n_t {
            // advance and re-pin the zero boundary by masking
            let stepped = tape.add(f, tape.scalar_mul(f_dot, dt))?;
            f = tape.scale_rows(stepped, &ctx.interior)?;
            if tape.value(f).iter().any(|v| !v.is_finite()) {
                return Err(Error::RolloutDiverged(k + 1));
            }
            if let Some(gv) = g {
                let gd = *out.g_dot.last().expect("pushed above");
                g = Some(tape.add(gv, tape.scalar_mul(gd, dt))?);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct RolloutResult {
    pub nodes: Trajectory,
    pub edges: Option<Trajectory>,
}

/// Evaluation rollout: a fresh tape per step keeps memory flat over long
/// horizons; bit-identical to the on-tape path because both use the same
/// forward functions.
pub fn euler_rollout(
    graph: &GraphSample,
    params: &ModelParams,
    t_final: f64,
    n_t: usize,
) -> Result<RolloutResult> {
    if !(t_final > 0.0) || !t_final.is_finite() {
        return Err(Error::Invalid(format!("final time {t_final} is not admissible")));
    }
    if n_t == 0 {
        return Err(Error::Invalid("need at least one time step".into()));
    }
    let ctx = GraphContext::new(graph)?;
    let dt = t_final / n_t as f64;

    let mut f: Vec<f64> = ctx.u0.iter().zip(&ctx.interior).map(|(&u, &m)| u * m).collect();
    let has_edges = params.kind == ModelKind::Ocgnn;
    let mut g = if has_edges { Some(ctx.initial_flux(&f)) } else { None };

    let mut times = vec![0.0];
    let mut states = vec![f.clone()];
    let mut edge_states = g.as_ref().map(|g0| vec![g0.clone()]);

    for k in 1..=n_t {
        let t = (k - 1) as f64 * dt;
        let tape = Tape::new();
        let bound = bind_params(&tape, params)?;
        let fv = tape.var(ctx.n_nodes, 1, f.clone())?;
        let (fd, gd) = forward_on_tape(&tape, &ctx, params, &bound, fv, t)?;
        let f_dot = tape.value(fd);
        f = euler_update(&f, &f_dot, dt);
        for (x, m) in f.iter_mut().zip(&ctx.interior) {
            *x *= m;
        }
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::RolloutDiverged(k));
        }
        if let (Some(gs), Some(gdv)) = (g.as_mut(), gd) {
            let g_dot = tape.value(gdv);
            for (x, d) in gs.iter_mut().zip(&g_dot) {
                *x += dt * d;
            }
        }
        times.push(k as f64 * dt);
        states.push(f.clone());
        if let (Some(all), Some(gs)) = (edge_states.as_mut(), g.as_ref()) {
            all.push(gs.clone());
        }
    }
    Ok(RolloutResult {
        nodes: Trajectory { times: times.clone(), states },
        edges: edge_states.map(|states| Trajectory { times, states }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_knn_graph, edge_weights_inverse_distance, permute_graph, Metadata};

    fn small_graph(seed: u64, n: usize) -> GraphSample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let positions: Vec<[f64; 3]> =
            (0..n).map(|_| [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()]).collect();
        let edges = build_knn_graph(&positions, 3).unwrap();
        let weights = edge_weights_inverse_distance(&positions, &edges);
        let mut boundary_mask = vec![false; n];
        boundary_mask[0] = true;
        GraphSample {
            diffusivity: (0..n).map(|_| 0.5 + rng.gen::<f64>()).collect(),
            u0: (0..n).map(|_| rng.gen::<f64>()).collect(),
            positions,
            edges,
            weights,
            boundary_mask,
            metadata: Metadata::default(),
        }
    }

    #[test]
    fn time_encoding_matches_hand_values() {
        let g = encode_time(0.0, &DEFAULT_OMEGAS).unwrap();
        assert_eq!(g.len(), 10);
        for pair in g.chunks(2) {
            assert_eq!(pair[0], 0.0);
            assert_eq!(pair[1], 1.0);
        }
        let g = encode_time(1.0, &[1.0]).unwrap();
        assert!((g[0] - 0.5f64.sin()).abs() < 1e-15);
        assert!((g[1] - 0.5f64.cos()).abs() < 1e-15);
        // saturation keeps every component bounded for huge times
        let g = encode_time(1e6, &DEFAULT_OMEGAS).unwrap();
        for &v in &g {
            assert!(v.abs() <= 1.0);
            assert!((v - 1.0f64.sin()).abs() < 1e-3 || (v - 1.0f64.cos()).abs() < 1e-3);
        }
        assert!(encode_time(-0.1, &[1.0]).is_err());
        assert!(encode_time(1.0, &[]).is_err());
        assert!(encode_time(1.0, &[0.0]).is_err());
    }

    #[test]
    fn params_round_trip_and_validate() {
        let p = ModelParams::init(ModelKind::Ocgnn, 8, 2, &DEFAULT_OMEGAS, 3).unwrap();
        p.validate().unwrap();
        assert!(p.data.iter().all(|v| v.abs() <= 1.0));
        let (off, spec) = p.segment_offset("head.anchor").unwrap();
        assert_eq!(spec.len(), 1);
        assert_eq!(p.data[off], 1.0);

        let doc = p.to_document();
        let text = crate::io::to_json_string(&doc).unwrap();
        let back: ParamsDocument = crate::io::from_json_str(&text).unwrap();
        let q = ModelParams::from_document(back).unwrap();
        assert_eq!(p, q);

        let again = ModelParams::init(ModelKind::Ocgnn, 8, 2, &DEFAULT_OMEGAS, 3).unwrap();
        assert_eq!(p, again, "init is deterministic per seed");
        let other = ModelParams::init(ModelKind::Ocgnn, 8, 2, &DEFAULT_OMEGAS, 4).unwrap();
        assert_ne!(p, other);
    }

    #[test]
    fn zero_params_give_bias_only_dynamics() {
        let g = small_graph(1, 8);
        let mut p = ModelParams::init(ModelKind::Ocgnn, 6, 2, &DEFAULT_OMEGAS, 0).unwrap();
        p.zero();
        let f: Vec<f64> = (0..8).map(|i| i as f64 * 0.1).collect();
        let (fd, gd) = ocgnn_forward(&g, &f, 0.3, &p).unwrap();
        assert!(fd.iter().all(|&v| v == 0.0), "zero weights, zero bias, zero anchor");
        assert!(gd.iter().all(|&v| v == 0.0));

        p.set_segment("head.node.b", &[0.7]).unwrap();
        let (fd, _) = ocgnn_forward(&g, &f, 0.3, &p).unwrap();
        assert!(fd.iter().all(|&v| (v - 0.7).abs() < 1e-15), "bias-only constant field");

        let mut gp = ModelParams::init(ModelKind::Gcn, 6, 2, &DEFAULT_OMEGAS, 0).unwrap();
        gp.zero();
        let fd = gcn_forward(&g, &f, 0.3, &gp).unwrap();
        assert!(fd.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_field_zeroes_the_difference_features() {
        // with only the odd path wired (zero even/bias/head-node weights,
        // nonzero odd + edge head), a constant f gives g_dot = 0
        let g = small_graph(2, 8);
        let mut p = ModelParams::init(ModelKind::Ocgnn, 6, 1, &DEFAULT_OMEGAS, 5).unwrap();
        // kill the direction feature contribution: odd input is then
        // exactly [f_src - f_dst, 0, 0, 0] after this surgery
        let (off, spec) = p.segment_offset("block0.edge_odd.w").unwrap();
        let rows = spec.rows;
        let cols = spec.cols;
        let mut w = p.data[off..off + rows * cols].to_vec();
        for r in 1..rows {
            for c in 0..cols {
                w[r * cols + c] = 0.0;
            }
        }
        p.set_segment("block0.edge_odd.w", &w).unwrap();
        let f = vec![0.42; 8];
        let (_, gd) = ocgnn_forward(&g, &f, 0.1, &p).unwrap();
        assert!(gd.iter().all(|&v| v.abs() < 1e-15), "constant field, zero differences: {gd:?}");
    }

    #[test]
    fn ocgnn_is_permutation_and_orientation_equivariant() {
        let g = small_graph(7, 9);
        let p = ModelParams::init(ModelKind::Ocgnn, 6, 2, &DEFAULT_OMEGAS, 11).unwrap();
        let f: Vec<f64> = (0..9).map(|i| ((i * 13 % 7) as f64) * 0.21 - 0.4).collect();
        let (fd, gd) = ocgnn_forward(&g, &f, 0.4, &p).unwrap();

        // relabel nodes: outputs must transport with the permutation
        let perm: Vec<usize> = vec![3, 1, 4, 0, 8, 2, 7, 5, 6];
        let (pg, edge_perm) = permute_graph(&g, &perm).unwrap();
        let pf = crate::graph::permute_node_field(&f, &perm).unwrap();
        let (pfd, pgd) = ocgnn_forward(&pg, &pf, 0.4, &p).unwrap();
        let fd_t = crate::graph::permute_node_field(&fd, &perm).unwrap();
        let gd_t = edge_perm.apply(&gd).unwrap();
        for (a, b) in pfd.iter().zip(&fd_t) {
            assert!((a - b).abs() < 1e-10, "node equivariance: {a} vs {b}");
        }
        for (a, b) in pgd.iter().zip(&gd_t) {
            assert!((a - b).abs() < 1e-10, "edge equivariance: {a} vs {b}");
        }

        // flip every edge orientation: f_dot unchanged, g_dot negated
        let mut flipped = g.clone();
        for e in flipped.edges.iter_mut() {
            e.swap(0, 1);
        }
        let (ffd, fgd) = ocgnn_forward(&flipped, &f, 0.4, &p).unwrap();
        for (a, b) in ffd.iter().zip(&fd) {
            assert!((a - b).abs() < 1e-12, "orientation invariance: {a} vs {b}");
        }
        for (a, b) in fgd.iter().zip(&gd) {
            assert!((a + b).abs() < 1e-12, "orientation covariance: {a} vs {b}");
        }
    }

    #[test]
    fn gcn_is_permutation_equivariant_and_mlp_ignores_edges() {
        let g = small_graph(4, 8);
        let p = ModelParams::init(ModelKind::Gcn, 6, 2, &DEFAULT_OMEGAS, 9).unwrap();
        let f: Vec<f64> = (0..8).map(|i| (i as f64).cos()).collect();
        let fd = gcn_forward(&g, &f, 0.2, &p).unwrap();
        let perm: Vec<usize> = vec![5, 0, 3, 7, 1, 6, 2, 4];
        let (pg, _) = permute_graph(&g, &perm).unwrap();
        let pf = crate::graph::permute_node_field(&f, &perm).unwrap();
        let pfd = gcn_forward(&pg, &pf, 0.2, &p).unwrap();
        let fd_t = crate::graph::permute_node_field(&fd, &perm).unwrap();
        for (a, b) in pfd.iter().zip(&fd_t) {
            assert!((a - b).abs() < 1e-10);
        }

        let mp = ModelParams::init(ModelKind::Mlp, 6, 2, &DEFAULT_OMEGAS, 9).unwrap();
        let out = mlp_forward(&g.positions, &g.u0, 0.2, &mp).unwrap();
        let mut rewired = g.clone();
        rewired.edges = vec![[0, 5], [1, 2], [3, 4], [6, 7]];
        rewired.weights = vec![1.0; 4];
        let ctx_out = {
            let ctx = GraphContext::new(&rewired).unwrap();
            let tape = Tape::new();
            let bound = bind_params(&tape, &mp).unwrap();
            tape.value(mlp_on_tape(&tape, &ctx, &mp, &bound, 0.2).unwrap())
        };
        assert_eq!(out, ctx_out, "mlp output is a function of coordinates only");
    }

    #[test]
    fn euler_update_arithmetic_and_rollout_shape() {
        assert_eq!(euler_update(&[1.0, 2.0], &[0.5, -1.0], 0.1), vec![1.05, 1.9]);

        let g = small_graph(3, 8);
        let p = ModelParams::init(ModelKind::Ocgnn, 4, 1, &DEFAULT_OMEGAS, 2).unwrap();
        let r = euler_rollout(&g, &p, 0.5, 1).unwrap();
        assert_eq!(r.nodes.states.len(), 2, "n_t = 1 applies exactly one update");
        r.nodes.validate().unwrap();
        let edges = r.edges.unwrap();
        assert_eq!(edges.states.len(), 2);

        // boundary stays pinned at zero the whole way
        let long = euler_rollout(&g, &p, 1.0, 10).unwrap();
        for s in &long.nodes.states {
            assert_eq!(s[0], 0.0);
        }
    }

    #[test]
    fn zero_dynamics_yield_a_constant_trajectory() {
        let g = small_graph(5, 8);
        let mut p = ModelParams::init(ModelKind::Gcn, 4, 1, &DEFAULT_OMEGAS, 2).unwrap();
        p.zero();
        let r = euler_rollout(&g, &p, 1.0, 5).unwrap();
        for s in &r.nodes.states[1..] {
            assert_eq!(s, &r.nodes.states[0]);
        }
    }

    #[test]
    fn rollout_divergence_is_reported_with_step_index() {
        let g = small_graph(6, 8);
        let mut p = ModelParams::init(ModelKind::Ocgnn, 4, 1, &DEFAULT_OMEGAS, 2).unwrap();
        p.zero();
        // a large negative anchor runs diffusion backward, which explodes
        p.set_segment("head.anchor", &[-400.0]).unwrap();
        match euler_rollout(&g, &p, 400.0, 400) {
            Err(Error::RolloutDiverged(step)) => assert!(step >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn tape_rollout_matches_the_evaluation_rollout() {
        let g = small_graph(8, 8);
        let p = ModelParams::init(ModelKind::Ocgnn, 4, 2, &DEFAULT_OMEGAS, 6).unwrap();
        let eval = euler_rollout(&g, &p, 0.4, 4).unwrap();

        let ctx = GraphContext::new(&g).unwrap();
        let tape = Tape::new();
        let bound = bind_params(&tape, &p).unwrap();
        let roll = rollout_on_tape(&tape, &ctx, &p, &bound, 0.4, 4).unwrap();
        assert_eq!(roll.f.len(), 5);
        assert_eq!(roll.g.len(), 5);
        for (var, state) in roll.f.iter().zip(&eval.nodes.states) {
            let v = tape.value(*var);
            for (a, b) in v.iter().zip(state) {
                assert_eq!(a.to_bits(), b.to_bits(), "paths must agree bit for bit");
            }
        }
        let edges = eval.edges.unwrap();
        for (var, state) in roll.g.iter().zip(&edges.states) {
            let v = tape.value(*var);
            for (a, b) in v.iter().zip(state) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
