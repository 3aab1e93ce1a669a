//! Physics-informed training: the four loss components, inverse-log
//! loss weighting, Adam, and the epoch loop.
//!
//! Weighting constants (the dynamic PDE scale, the residual normalizers,
//! the lambdas) are recomputed from detached values once per epoch and
//! enter the tape as plain multipliers, so within an epoch the recorded
//! loss is exactly the function the gradient belongs to.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::graph::GraphSample;
use crate::model::{
    bind_params, bind_params_to, rollout_on_tape, GraphContext, ModelKind, ModelParams,
    TapeRollout, DEFAULT_OMEGAS,
};

pub const LAMBDA_MIN: f64 = 0.1;
pub const LAMBDA_MAX: f64 = 10.0;
const SCALE_EPS: f64 = 1e-8;
/// floor for the residual normalizers so a collapsed field cannot blow
/// the normalized residual up
const ALPHA_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    /// rollout horizon and number of Euler steps; losses are collocated
    /// on the rollout grid (t = 0 plus n_t uniform points)
    pub t_final: f64,
    pub n_t: usize,
    pub hidden: usize,
    pub layers: usize,
    pub omegas: Vec<f64>,
    pub seed: u64,
    /// divide the skew residuals by running magnitudes of |f_dot| and |Bf|
    pub normalize_ptensor: bool,
    /// blend factor toward the previous lambdas (0 = pure schedule)
    pub lambda_momentum: f64,
    /// decay of the running magnitude estimates
    pub stat_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 500,
            lr: 3e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps_adam: 1e-8,
            t_final: 1.0,
            n_t: 5,
            hidden: 16,
            layers: 2,
            omegas: DEFAULT_OMEGAS.to_vec(),
            seed: 0,
            normalize_ptensor: true,
            lambda_momentum: 0.0,
            stat_decay: 0.9,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::Invalid(format!("learning rate {} is not admissible", self.lr)));
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Invalid(format!("{name} {v} must lie in [0, 1)")));
            }
        }
        if !(self.t_final > 0.0) || self.n_t == 0 {
            return Err(Error::Invalid("rollout needs a positive horizon and step count".into()));
        }
        if self.hidden == 0 || self.layers == 0 {
            return Err(Error::Invalid("hidden width and layer count must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda_momentum) {
            return Err(Error::Invalid("lambda momentum must lie in [0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.stat_decay) {
            return Err(Error::Invalid("stat decay must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// One epoch's components and the weights that combined them.
/// Invariant: total = sum of lambda_k * l_k (checked to 1e-12 in tests).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub epoch: usize,
    pub l_pde: f64,
    pub l_bc: f64,
    pub l_ic: f64,
    pub l_pt: f64,
    /// (lambda_pde, lambda_bc, lambda_ic, lambda_pt)
    pub lambdas: [f64; 4],
    pub scale_s: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn components(&self) -> [f64; 4] {
        [self.l_pde, self.l_bc, self.l_ic, self.l_pt]
    }
}

/// Energy bookkeeping over one epoch's snapshots: the skew pairing
/// f'R_f + g'R_g, its Cauchy-Schwarz bound, and the antisymmetry defect
/// f'B'g - g'Bf that exact transport would make zero.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnergyReport {
    pub epoch: usize,
    pub max_abs_pairing: f64,
    /// min over snapshots of (bound - |pairing|); negative means violated
    pub min_bound_margin: f64,
    pub max_abs_skew: f64,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub params: ModelParams,
    pub history: Vec<LossBreakdown>,
    /// one per epoch for models with an edge head, empty otherwise
    pub energy: Vec<EnergyReport>,
}

/// Mean squared PDE residual R = f_dot - D (L_gen f) at one time point,
/// unscaled; the dynamic factor is applied by the caller.
pub fn loss_pde_at(tape: &Tape, ctx: &GraphContext, f_dot: Var, f: Var) -> Result<Var> {
    let lf = tape.spmm(&ctx.laplacian_gen, f)?;
    let dlf = tape.scale_rows(lf, &ctx.diffusivity)?;
    let r = tape.sub(f_dot, dlf)?;
    Ok(tape.scalar_mul(tape.squared_norm(r), 1.0 / ctx.n_nodes as f64))
}

/// Mean squared boundary value at one time point (zero-value Dirichlet
/// target). Zero boundary nodes make this identically zero.
pub fn loss_bc_at(tape: &Tape, ctx: &GraphContext, f: Var) -> Result<Var> {
    let boundary: Vec<f64> = ctx.interior.iter().map(|&m| 1.0 - m).collect();
    let n_b = boundary.iter().filter(|&&b| b > 0.0).count();
    if n_b == 0 {
        return Ok(tape.scalar(0.0));
    }
    let masked = tape.scale_rows(f, &boundary)?;
    Ok(tape.scalar_mul(tape.squared_norm(masked), 1.0 / n_b as f64))
}

/// Mean squared deviation of the t = 0 prediction from the initial state
/// (with the boundary condition already applied to the target).
pub fn loss_ic_at(tape: &Tape, ctx: &GraphContext, f0: Var) -> Result<Var> {
    let target: Vec<f64> = ctx.u0.iter().zip(&ctx.interior).map(|(&u, &m)| u * m).collect();
    let tv = tape.constant(ctx.n_nodes, 1, target)?;
    let d = tape.sub(f0, tv)?;
    Ok(tape.scalar_mul(tape.squared_norm(d), 1.0 / ctx.n_nodes as f64))
}

/// Squared norms of the skew residuals R_f = f_dot - B'g and
/// R_g = g_dot + Bf at one time point; the '+' in R_g is the sign that
/// keeps the pairing energy-consistent. Residuals are divided by the
/// supplied normalizers (pass 1.0 to disable).
pub fn loss_ptensor_at(
    tape: &Tape,
    ctx: &GraphContext,
    f_dot: Var,
    g_dot: Var,
    f: Var,
    g: Var,
    alpha_f: f64,
    alpha_g: f64,
) -> Result<Var> {
    if g.rows != ctx.n_edges || g_dot.rows != ctx.n_edges {
        return Err(Error::LengthMismatch {
            what: "edge field",
            got: g.rows,
            expected: ctx.n_edges,
        });
    }
    let r_f = tape.sub(f_dot, tape.spmm_t(&ctx.incidence, g)?)?;
    let r_g = tape.add(g_dot, tape.spmm(&ctx.incidence, f)?)?;
    let r_f = tape.scalar_mul(r_f, 1.0 / alpha_f);
    let r_g = tape.scalar_mul(r_g, 1.0 / alpha_g);
    tape.add(tape.squared_norm(r_f), tape.squared_norm(r_g))
}

/// Inverse-logarithmic weighting: lambda_k proportional to
/// 1/log(e + l_k/l_mean), renormalized so the active weights sum to the
/// number of active components, then clipped to [0.1, 10]. Inactive
/// components keep lambda = 0.
pub fn update_lambdas(
    losses: &[f64; 4],
    previous: &[f64; 4],
    active: &[bool; 4],
    momentum: f64,
) -> [f64; 4] {
    let n_active = active.iter().filter(|&&a| a).count();
    let mut out = [0.0; 4];
    if n_active == 0 {
        return out;
    }
    let mean: f64 =
        losses.iter().zip(active).filter(|(_, &a)| a).map(|(&l, _)| l).sum::<f64>() / n_active as f64;
    let mut targets = [0.0; 4];
    let mut sum = 0.0;
    for k in 0..4 {
        if active[k] {
            targets[k] = if mean > 0.0 {
                1.0 / (std::f64::consts::E + losses[k] / mean).ln()
            } else {
                1.0
            };
            sum += targets[k];
        }
    }
    let scale = n_active as f64 / sum;
    for k in 0..4 {
        if active[k] {
            let blended = momentum * previous[k] + (1.0 - momentum) * targets[k] * scale;
            out[k] = blended.clamp(LAMBDA_MIN, LAMBDA_MAX);
        }
    }
    out
}

struct RunningStat {
    value: Option<f64>,
    decay: f64,
}

impl RunningStat {
    fn new(decay: f64) -> Self {
        RunningStat { value: None, decay }
    }

    /// first observation seeds the estimate, later ones blend in
    fn observe(&mut self, obs: f64) {
        self.value = Some(match self.value {
            None => obs,
            Some(v) => self.decay * v + (1.0 - self.decay) * obs,
        });
    }

    fn value(&self) -> f64 {
        self.value.unwrap_or(1.0)
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: usize,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    fn new(n: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam { m: vec![0.0; n], v: vec![0.0; n], t: 0, lr, beta1, beta2, eps }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Fixed per-epoch weighting of the loss components.
#[derive(Debug, Clone, Copy)]
pub struct LossWeights {
    pub lambdas: [f64; 4],
    pub scale_s: f64,
    pub alpha_f: f64,
    pub alpha_g: f64,
}

struct Components {
    l_pde: Var,
    l_bc: Var,
    l_ic: Var,
    l_pt: Option<Var>,
}

fn assemble_components(
    tape: &Tape,
    ctx: &GraphContext,
    roll: &TapeRollout,
    scale_s: f64,
    alpha_f: f64,
    alpha_g: f64,
) -> Result<Components> {
    let k_count = roll.f.len();
    let inv_k = 1.0 / k_count as f64;
    let with_pt = !roll.g.is_empty();

    let mut pde_acc = tape.scalar(0.0);
    let mut bc_acc = tape.scalar(0.0);
    let mut pt_acc = tape.scalar(0.0);
    for k in 0..k_count {
        pde_acc = tape.add(pde_acc, loss_pde_at(tape, ctx, roll.f_dot[k], roll.f[k])?)?;
        bc_acc = tape.add(bc_acc, loss_bc_at(tape, ctx, roll.f[k])?)?;
        if with_pt {
            let term = loss_ptensor_at(
                tape,
                ctx,
                roll.f_dot[k],
                roll.g_dot[k],
                roll.f[k],
                roll.g[k],
                alpha_f,
                alpha_g,
            )?;
            pt_acc = tape.add(pt_acc, term)?;
        }
    }
    Ok(Components {
        l_pde: tape.scalar_mul(pde_acc, inv_k * scale_s),
        l_bc: tape.scalar_mul(bc_acc, inv_k),
        l_ic: loss_ic_at(tape, ctx, roll.f[0])?,
        l_pt: with_pt.then(|| tape.scalar_mul(pt_acc, inv_k)),
    })
}

/// Full weighted loss built from a caller-provided flat parameter leaf,
/// with every weighting constant frozen; this is the exact function the
/// per-epoch gradient differentiates, exposed for finite-difference
/// verification.
pub fn total_loss_on_tape(
    tape: &Tape,
    ctx: &GraphContext,
    params: &ModelParams,
    flat: Var,
    t_final: f64,
    n_t: usize,
    weights: &LossWeights,
) -> Result<Var> {
    let bound = bind_params_to(tape, params, flat)?;
    let roll = rollout_on_tape(tape, ctx, params, &bound, t_final, n_t)?;
    let comps = assemble_components(tape, ctx, &roll, weights.scale_s, weights.alpha_f, weights.alpha_g)?;
    let mut total = tape.scalar(0.0);
    let parts = [Some(comps.l_pde), Some(comps.l_bc), Some(comps.l_ic), comps.l_pt];
    for (k, part) in parts.iter().enumerate() {
        if let Some(p) = part {
            total = tape.add(total, tape.scalar_mul(*p, weights.lambdas[k]))?;
        }
    }
    Ok(total)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Train starting from freshly initialized parameters.
pub fn train(graph: &GraphSample, kind: ModelKind, config: &TrainConfig) -> Result<TrainResult> {
    let params = ModelParams::init(kind, config.hidden, config.layers, &config.omegas, config.seed)?;
    train_with_params(graph, params, config)
}

/// Train continuing from the given parameters. Per epoch: roll out on the
/// tape, freeze the weighting constants, assemble the four components,
/// backprop, Adam step. Lambdas start uniform over the active components
/// and follow the inverse-log schedule computed from the previous epoch's
/// component values, so each epoch optimizes a combination fixed before
/// the epoch is observed.
pub fn train_with_params(
    graph: &GraphSample,
    mut params: ModelParams,
    config: &TrainConfig,
) -> Result<TrainResult> {
    config.validate()?;
    graph.validate()?;
    params.validate()?;
    let ctx = GraphContext::new(graph)?;
    let has_pt = params.kind == ModelKind::Ocgnn;
    let active = [true, true, true, has_pt];
    let mut prev_lambdas = [1.0, 1.0, 1.0, if has_pt { 1.0 } else { 0.0 }];

    let mut adam = Adam::new(
        params.n_params(),
        config.lr,
        config.beta1,
        config.beta2,
        config.eps_adam,
    );
    // vector-norm magnitudes feed the skew-residual normalizers, per-node
    // RMS magnitudes feed the PDE scale; conflating them skews the PDE
    // weight by a factor of N
    let mut r_fdot = RunningStat::new(config.stat_decay);
    let mut r_bf = RunningStat::new(config.stat_decay);
    let mut r_fdot_rms = RunningStat::new(config.stat_decay);
    let mut r_dlf_rms = RunningStat::new(config.stat_decay);

    let mut history = Vec::with_capacity(config.epochs);
    let mut energy = Vec::new();

    for epoch in 0..config.epochs {
        let tape = Tape::new();
        let bound = bind_params(&tape, &params)?;
        let roll = rollout_on_tape(&tape, &ctx, &params, &bound, config.t_final, config.n_t)?;
        let k_count = roll.f.len();

        // detached magnitude estimates feeding the weighting constants
        let mut ss_fdot = 0.0;
        let mut ss_dlf = 0.0;
        let mut ss_bf = 0.0;
        for k in 0..k_count {
            let f = tape.value(roll.f[k]);
            let fd = tape.value(roll.f_dot[k]);
            let lf = ctx.laplacian_gen.matvec(&f);
            ss_fdot += fd.iter().map(|x| x * x).sum::<f64>();
            ss_dlf += lf.iter().zip(&ctx.diffusivity).map(|(x, d)| (x * d) * (x * d)).sum::<f64>();
            ss_bf += ctx.incidence.matvec(&f).iter().map(|x| x * x).sum::<f64>();
        }
        let over_time = |ss: f64| (ss / k_count as f64).sqrt();
        let per_node = |ss: f64| (ss / (k_count * ctx.n_nodes) as f64).sqrt();
        r_fdot.observe(over_time(ss_fdot));
        r_bf.observe(over_time(ss_bf));
        r_fdot_rms.observe(per_node(ss_fdot));
        r_dlf_rms.observe(per_node(ss_dlf));

        let scale_s = 1.0 / (r_fdot_rms.value() * r_dlf_rms.value() + SCALE_EPS);
        let (alpha_f, alpha_g) = if config.normalize_ptensor {
            (r_fdot.value().max(ALPHA_FLOOR), r_bf.value().max(ALPHA_FLOOR))
        } else {
            (1.0, 1.0)
        };

        let comps = assemble_components(&tape, &ctx, &roll, scale_s, alpha_f, alpha_g)?;
        let l_vals = [
            tape.scalar_value(comps.l_pde),
            tape.scalar_value(comps.l_bc),
            tape.scalar_value(comps.l_ic),
            comps.l_pt.map_or(0.0, |v| tape.scalar_value(v)),
        ];
        if l_vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteLoss { epoch });
        }
        let lambdas = prev_lambdas;

        let mut total = tape.scalar(0.0);
        let parts = [Some(comps.l_pde), Some(comps.l_bc), Some(comps.l_ic), comps.l_pt];
        for (k, part) in parts.iter().enumerate() {
            if let Some(p) = part {
                total = tape.add(total, tape.scalar_mul(*p, lambdas[k]))?;
            }
        }
        let total_val = tape.scalar_value(total);
        if !total_val.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }

        history.push(LossBreakdown {
            epoch,
            l_pde: l_vals[0],
            l_bc: l_vals[1],
            l_ic: l_vals[2],
            l_pt: l_vals[3],
            lambdas,
            scale_s,
            total: total_val,
        });

        if has_pt {
            let mut max_pairing = 0.0f64;
            let mut min_margin = f64::INFINITY;
            let mut max_skew = 0.0f64;
            for k in 0..k_count {
                let f = tape.value(roll.f[k]);
                let g = tape.value(roll.g[k]);
                let fd = tape.value(roll.f_dot[k]);
                let gd = tape.value(roll.g_dot[k]);
                let btg = ctx.incidence.matvec_transpose(&g);
                let bf = ctx.incidence.matvec(&f);
                let r_f: Vec<f64> = fd.iter().zip(&btg).map(|(a, b)| a - b).collect();
                let r_g: Vec<f64> = gd.iter().zip(&bf).map(|(a, b)| a + b).collect();
                let pairing = dot(&f, &r_f) + dot(&g, &r_g);
                let bound_val = norm(&f) * norm(&r_f) + norm(&g) * norm(&r_g);
                let skew = dot(&f, &btg) - dot(&g, &bf);
                max_pairing = max_pairing.max(pairing.abs());
                min_margin = min_margin.min(bound_val - pairing.abs());
                max_skew = max_skew.max(skew.abs());
            }
            energy.push(EnergyReport {
                epoch,
                max_abs_pairing: max_pairing,
                min_bound_margin: min_margin,
                max_abs_skew: max_skew,
            });
        }

        tape.backward(total)?;
        let grad = tape.grad(bound.flat)?;
        adam.step(&mut params.data, &grad);
        prev_lambdas = update_lambdas(&l_vals, &lambdas, &active, config.lambda_momentum);
    }

    Ok(TrainResult { params, history, energy })
}
