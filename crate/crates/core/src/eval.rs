//! Metrics against the CN reference, the physical-consistency probe,
//! Hamiltonian diagnostics, and the benchmark orchestration that turns
//! trained models into report tables.

use serde::{Deserialize, Serialize};

use crate::cn::{cn_rollout, DiffusionOperator, Normalization, Trajectory};
use crate::error::{Error, Result};
use crate::graph::{CnVariant, GraphSample};
use crate::model::{euler_rollout, ModelKind, ModelParams};
use crate::training::{train, LossBreakdown, TrainConfig};

fn check_same_length(pred: &[f64], reference: &[f64]) -> Result<()> {
    if pred.is_empty() {
        return Err(Error::Invalid("metrics need at least one entry".into()));
    }
    if pred.len() != reference.len() {
        return Err(Error::LengthMismatch {
            what: "metric inputs",
            got: pred.len(),
            expected: reference.len(),
        });
    }
    Ok(())
}

pub fn mae(pred: &[f64], reference: &[f64]) -> Result<f64> {
    check_same_length(pred, reference)?;
    Ok(pred.iter().zip(reference).map(|(p, r)| (p - r).abs()).sum::<f64>() / pred.len() as f64)
}

pub fn mse(pred: &[f64], reference: &[f64]) -> Result<f64> {
    check_same_length(pred, reference)?;
    Ok(pred.iter().zip(reference).map(|(p, r)| (p - r) * (p - r)).sum::<f64>() / pred.len() as f64)
}

/// Scale-consistent L2: ||pred - ref||_2 / sqrt(N).
pub fn l2_norm_error(pred: &[f64], reference: &[f64]) -> Result<f64> {
    mse(pred, reference).map(f64::sqrt)
}

/// Forward-difference physical-consistency probe:
/// R(t_k) = (u_{k+1} - u_k)/dt - D L u_k, aggregated as
/// sqrt(sum_k ||R(t_k)||^2 / (n_t N)).
pub fn pde_residual_time_with(traj: &Trajectory, op: &DiffusionOperator) -> Result<f64> {
    traj.validate()?;
    if traj.states.len() < 2 {
        return Err(Error::Invalid("residual probe needs at least 2 states".into()));
    }
    let dt = traj.uniform_dt()?;
    if !(dt > 0.0) {
        return Err(Error::Invalid("residual probe needs a positive time step".into()));
    }
    let n = traj.states[0].len();
    if op.n_nodes() != n {
        return Err(Error::LengthMismatch { what: "operator", got: op.n_nodes(), expected: n });
    }
    let n_t = traj.states.len() - 1;
    let mut acc = 0.0;
    for k in 0..n_t {
        let u = &traj.states[k];
        let u_next = &traj.states[k + 1];
        let lu = op.apply(u);
        for i in 0..n {
            let r = (u_next[i] - u[i]) / dt - lu[i];
            acc += r * r;
        }
    }
    Ok((acc / (n_t * n) as f64).sqrt())
}

/// Same probe with the operator assembled from the graph under the given
/// weight-law variant (generator scaling).
pub fn pde_residual_time(traj: &Trajectory, graph: &GraphSample, variant: CnVariant) -> Result<f64> {
    let op = DiffusionOperator::assemble(graph, variant, Normalization::Generator)?;
    pde_residual_time_with(traj, &op)
}

/// Quadratic energy of the coupled node/edge state.
pub fn hamiltonian(f: &[f64], g: &[f64]) -> f64 {
    0.5 * f.iter().map(|x| x * x).sum::<f64>() + 0.5 * g.iter().map(|x| x * x).sum::<f64>()
}

/// Drift series H(t_k) - H(t_0) for paired node/edge trajectories.
pub fn hamiltonian_drift(nodes: &Trajectory, edges: &Trajectory) -> Result<Vec<f64>> {
    nodes.validate()?;
    edges.validate()?;
    if nodes.states.len() != edges.states.len() {
        return Err(Error::LengthMismatch {
            what: "edge trajectory",
            got: edges.states.len(),
            expected: nodes.states.len(),
        });
    }
    let h0 = hamiltonian(&nodes.states[0], &edges.states[0]);
    Ok(nodes
        .states
        .iter()
        .zip(&edges.states)
        .map(|(f, g)| hamiltonian(f, g) - h0)
        .collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mesh: String,
    pub model: String,
    pub reference: String,
    pub mae: f64,
    pub mse: f64,
    pub l2_norm: f64,
    pub pde_residual_time: f64,
    /// wall-clock bookkeeping; never written into the deterministic CSVs
    pub runtime_seconds: f64,
}

impl MetricsReport {
    pub fn validate(&self) -> Result<()> {
        let vals = [self.mae, self.mse, self.l2_norm, self.pde_residual_time];
        if vals.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Invalid("metrics must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Final-time metrics plus the residual probe for one predicted
/// trajectory against a reference trajectory on the same grid.
pub fn evaluate_trajectory(
    pred: &Trajectory,
    reference: &Trajectory,
    graph: &GraphSample,
    variant: CnVariant,
    mesh: &str,
    model: &str,
) -> Result<MetricsReport> {
    pred.validate()?;
    reference.validate()?;
    if pred.states.len() != reference.states.len() {
        return Err(Error::LengthMismatch {
            what: "trajectory grid",
            got: pred.states.len(),
            expected: reference.states.len(),
        });
    }
    let pf = pred.final_state();
    let rf = reference.final_state();
    Ok(MetricsReport {
        mesh: mesh.into(),
        model: model.into(),
        reference: variant.to_string(),
        mae: mae(pf, rf)?,
        mse: mse(pf, rf)?,
        l2_norm: l2_norm_error(pf, rf)?,
        pde_residual_time: pde_residual_time(pred, graph, variant)?,
        runtime_seconds: 0.0,
    })
}

/// Normalized L2 error per time step, for the temporal error curves.
pub fn error_curve(pred: &Trajectory, reference: &Trajectory) -> Result<Vec<(f64, f64)>> {
    if pred.states.len() != reference.states.len() {
        return Err(Error::LengthMismatch {
            what: "trajectory grid",
            got: pred.states.len(),
            expected: reference.states.len(),
        });
    }
    pred.times
        .iter()
        .zip(pred.states.iter().zip(&reference.states))
        .map(|(&t, (p, r))| Ok((t, l2_norm_error(p, r)?)))
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub t_final: f64,
    pub n_t: usize,
    pub reference: CnVariant,
    pub models: Vec<ModelKind>,
    pub include_untrained: bool,
    pub seeds: Vec<u64>,
    pub train: TrainConfig,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            // horizon and grid are this artifact's defaults, not sourced
            t_final: 1.0,
            n_t: 100,
            reference: CnVariant::Irregular,
            models: vec![ModelKind::Ocgnn, ModelKind::Gcn],
            include_untrained: true,
            seeds: vec![0],
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkEntry {
    pub mesh: String,
    pub model: String,
    pub seed: u64,
    pub report: MetricsReport,
    pub error_curve: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct BenchmarkOutput {
    pub entries: Vec<BenchmarkEntry>,
    /// (mesh, model, seed) -> per-epoch loss records
    pub loss_histories: Vec<(String, String, u64, Vec<LossBreakdown>)>,
}

fn model_label(kind: ModelKind, trained: bool) -> String {
    if trained {
        kind.to_string()
    } else {
        format!("{kind}-untrained")
    }
}

/// Train each requested model per seed, roll it out on the reference
/// grid, and score it against the CN trajectory. Rows are a pure function
/// of inputs and seeds.
pub fn benchmark(
    samples: &[(String, GraphSample)],
    config: &BenchmarkConfig,
) -> Result<BenchmarkOutput> {
    if samples.is_empty() {
        return Err(Error::Invalid("benchmark needs at least one sample".into()));
    }
    if config.seeds.is_empty() {
        return Err(Error::Invalid("benchmark needs at least one seed".into()));
    }
    let mut out = BenchmarkOutput::default();
    for (mesh_name, graph) in samples {
        graph.validate()?;
        let reference = cn_rollout(graph, config.reference, config.t_final, config.n_t)?;
        for &seed in &config.seeds {
            for &kind in &config.models {
                let start = std::time::Instant::now();
                let cfg = TrainConfig { seed, ..config.train.clone() };
                let trained = train(graph, kind, &cfg)?;
                let rollout = euler_rollout(graph, &trained.params, config.t_final, config.n_t)?;
                let mut report = evaluate_trajectory(
                    &rollout.nodes,
                    &reference,
                    graph,
                    config.reference,
                    mesh_name,
                    &model_label(kind, true),
                )?;
                report.runtime_seconds = start.elapsed().as_secs_f64();
                out.entries.push(BenchmarkEntry {
                    mesh: mesh_name.clone(),
                    model: model_label(kind, true),
                    seed,
                    report,
                    error_curve: error_curve(&rollout.nodes, &reference)?,
                });
                out.loss_histories.push((
                    mesh_name.clone(),
                    model_label(kind, true),
                    seed,
                    trained.history,
                ));

                if config.include_untrained && kind == ModelKind::Ocgnn {
                    let start = std::time::Instant::now();
                    let params =
                        ModelParams::init(kind, cfg.hidden, cfg.layers, &cfg.omegas, seed)?;
                    let rollout = euler_rollout(graph, &params, config.t_final, config.n_t)?;
                    let mut report = evaluate_trajectory(
                        &rollout.nodes,
                        &reference,
                        graph,
                        config.reference,
                        mesh_name,
                        &model_label(kind, false),
                    )?;
                    report.runtime_seconds = start.elapsed().as_secs_f64();
                    out.entries.push(BenchmarkEntry {
                        mesh: mesh_name.clone(),
                        model: model_label(kind, false),
                        seed,
                        report,
                        error_curve: error_curve(&rollout.nodes, &reference)?,
                    });
                }
            }
        }
    }
    Ok(out)
}

fn fmt_metric(v: f64) -> String {
    format!("{v:.12e}")
}

/// One row per (mesh, model, seed); runtime intentionally omitted so the
/// bytes are reproducible.
pub fn metrics_csv(entries: &[BenchmarkEntry]) -> String {
    let mut s = String::from("mesh,model,seed,reference,mae,mse,l2_norm,pde_residual_time\n");
    for e in entries {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            e.mesh,
            e.model,
            e.seed,
            e.report.reference,
            fmt_metric(e.report.mae),
            fmt_metric(e.report.mse),
            fmt_metric(e.report.l2_norm),
            fmt_metric(e.report.pde_residual_time),
        ));
    }
    s
}

pub fn loss_csv(histories: &[(String, String, u64, Vec<LossBreakdown>)]) -> String {
    let mut s = String::from(
        "mesh,model,seed,epoch,l_pde,l_bc,l_ic,l_pt,lambda_pde,lambda_bc,lambda_ic,lambda_pt,scale_s,total\n",
    );
    for (mesh, model, seed, history) in histories {
        for h in history {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                mesh,
                model,
                seed,
                h.epoch,
                fmt_metric(h.l_pde),
                fmt_metric(h.l_bc),
                fmt_metric(h.l_ic),
                fmt_metric(h.l_pt),
                fmt_metric(h.lambdas[0]),
                fmt_metric(h.lambdas[1]),
                fmt_metric(h.lambdas[2]),
                fmt_metric(h.lambdas[3]),
                fmt_metric(h.scale_s),
                fmt_metric(h.total),
            ));
        }
    }
    s
}

pub fn error_curve_csv(entries: &[BenchmarkEntry]) -> String {
    let mut s = String::from("mesh,model,seed,time,l2_norm_error\n");
    for e in entries {
        for &(t, v) in &e.error_curve {
            s.push_str(&format!("{},{},{},{},{}\n", e.mesh, e.model, e.seed, fmt_metric(t), fmt_metric(v)));
        }
    }
    s
}
