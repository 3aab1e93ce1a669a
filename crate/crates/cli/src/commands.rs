//! One function per subcommand. Each returns the process exit code;
//! errors bubble to main where they are mapped to 1 or 2.

use std::fs;
use std::path::Path;
use std::time::Instant;

use meshdiff_core::cn::cn_rollout;
use meshdiff_core::eval;
use meshdiff_core::fd::{cfl_timestep, hot_disc_ic, run_fd_diffusion, Grid2D};
use meshdiff_core::graph::{CnVariant, GraphSample};
use meshdiff_core::io::{load_json, save_json};
use meshdiff_core::meshgen::generate_physical_mesh;
use meshdiff_core::meshio::{parse_obj, parse_ply, realmesh_to_graphsample};
use meshdiff_core::model::ModelKind;
use meshdiff_core::plot::{line_plot_svg, Series};
use meshdiff_core::training::train;
use meshdiff_core::verify::run_all;
use meshdiff_core::{Error, Result};

use crate::config::{
    BenchmarkCfg, FdDemoCfg, GenMeshCfg, IngestCfg, SolveCnCfg, TrainCfg, VerifyCfg,
};

fn max_abs(values: &[f64]) -> f64 {
    values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

pub fn gen_mesh(cfg: &GenMeshCfg) -> Result<i32> {
    let params = cfg.healing_params();
    let (sample, records) = generate_physical_mesh(cfg.n, cfg.seed, &params)?;
    save_json(&sample, Path::new(&cfg.out))?;
    if let Some(path) = &cfg.wound_csv {
        let mut csv = String::from("step,time,sum_damage\n");
        for r in &records {
            csv.push_str(&format!("{},{:.12e},{:.12e}\n", r.step, r.time, r.sum_damage));
        }
        fs::write(path, csv)?;
    }
    let final_damage = records.last().map(|r| r.sum_damage).unwrap_or(0.0);
    println!(
        "wrote {} ({} nodes, {} edges, final wound size {:.3e})",
        cfg.out,
        sample.n_nodes(),
        sample.n_edges(),
        final_damage
    );
    Ok(0)
}

pub fn ingest(cfg: &IngestCfg) -> Result<i32> {
    let input = cfg
        .input
        .as_deref()
        .ok_or_else(|| Error::Invalid("no input mesh given (--in)".into()))?;
    let path = Path::new(input);
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase();
    let text = fs::read_to_string(path)?;
    let mesh = match ext.as_str() {
        "obj" => parse_obj(&text)?,
        "ply" => parse_ply(&text)?,
        other => {
            return Err(Error::Invalid(format!(
                "unsupported mesh extension '{other}' (expected obj or ply)"
            )))
        }
    };
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("mesh");
    let sample = realmesh_to_graphsample(&mesh, cfg.n, cfg.k, cfg.seed, name)?;
    save_json(&sample, Path::new(&cfg.out))?;
    println!(
        "wrote {} ({} nodes, {} edges, from {} mesh vertices)",
        cfg.out,
        sample.n_nodes(),
        sample.n_edges(),
        mesh.vertices.len()
    );
    Ok(0)
}

pub fn solve_cn(cfg: &SolveCnCfg) -> Result<i32> {
    let sample_path = cfg
        .sample
        .as_deref()
        .ok_or_else(|| Error::Invalid("no sample given (--sample)".into()))?;
    let graph: GraphSample = load_json(Path::new(sample_path))?;
    graph.validate()?;
    let variant: CnVariant = cfg.variant.parse()?;
    let traj = cn_rollout(&graph, variant, cfg.t_final, cfg.nt)?;
    save_json(&traj, Path::new(&cfg.out))?;
    println!(
        "wrote {} ({} states, final max |u| = {:.6e})",
        cfg.out,
        traj.states.len(),
        max_abs(traj.final_state())
    );
    Ok(0)
}

pub fn fd_demo(cfg: &FdDemoCfg) -> Result<i32> {
    let grid = if cfg.perturb == 0.0 {
        Grid2D::uniform(cfg.nx, cfg.ny)?
    } else {
        Grid2D::perturbed(cfg.nx, cfg.ny, cfg.perturb, cfg.seed)?
    };
    // the step is always chosen for the regular spacing; reusing it on the
    // perturbed grid is exactly the failure this demo exhibits
    let dx = 1.0 / (cfg.nx - 1) as f64;
    let dy = 1.0 / (cfg.ny - 1) as f64;
    let dt = match cfg.dt {
        Some(v) => v,
        None => cfl_timestep(dx, dy, cfg.diffusivity)?,
    };
    let u0 = hot_disc_ic(&grid, [0.5, 0.5], 0.25);
    let run = run_fd_diffusion(&grid, cfg.diffusivity, dt, cfg.steps, &u0, 0.0)?;

    let mut csv = String::from("step,max_u,diverged\n");
    for (k, state) in run.trajectory.states.iter().enumerate() {
        csv.push_str(&format!(
            "{},{:.12e},{}\n",
            k,
            max_abs(state),
            u8::from(run.diverged_by(k))
        ));
    }
    fs::write(&cfg.out_csv, csv)?;
    println!(
        "wrote {} ({} steps, dt = {:.6e}, {})",
        cfg.out_csv,
        cfg.steps,
        dt,
        if run.diverged { "diverged" } else { "bounded" }
    );
    Ok(0)
}

pub fn train_model(cfg: &TrainCfg) -> Result<i32> {
    let sample_path = cfg
        .sample
        .as_deref()
        .ok_or_else(|| Error::Invalid("no sample given (--sample)".into()))?;
    let graph: GraphSample = load_json(Path::new(sample_path))?;
    graph.validate()?;
    let kind: ModelKind = cfg.model.parse()?;
    let train_config = cfg.train_config();

    let start = Instant::now();
    let result = train(&graph, kind, &train_config)?;
    let secs = start.elapsed().as_secs_f64();
    save_json(&result.params.to_document(), Path::new(&cfg.out))?;

    if let Some(path) = &cfg.loss_csv {
        let mesh = mesh_label(&graph, sample_path);
        let histories = vec![(mesh, kind.to_string(), cfg.seed, result.history.clone())];
        fs::write(path, eval::loss_csv(&histories))?;
    }
    if let Some(path) = &cfg.energy_csv {
        let mut csv = String::from("epoch,max_abs_pairing,min_bound_margin,max_abs_skew\n");
        for e in &result.energy {
            csv.push_str(&format!(
                "{},{:.12e},{:.12e},{:.12e}\n",
                e.epoch, e.max_abs_pairing, e.min_bound_margin, e.max_abs_skew
            ));
        }
        fs::write(path, csv)?;
    }

    let first = result.history.first().map(|h| h.total).unwrap_or(f64::NAN);
    let last = result.history.last().map(|h| h.total).unwrap_or(f64::NAN);
    println!(
        "trained {kind} for {} epochs in {:.1}s (total loss {:.6e} -> {:.6e}), wrote {}",
        train_config.epochs, secs, first, last, cfg.out
    );
    Ok(0)
}

fn mesh_label(graph: &GraphSample, path: &str) -> String {
    if graph.metadata.name.is_empty() {
        Path::new(path)
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("sample")
            .to_string()
    } else {
        graph.metadata.name.clone()
    }
}

fn file_token(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect()
}

pub fn benchmark(cfg: &BenchmarkCfg) -> Result<i32> {
    if cfg.samples.is_empty() {
        return Err(Error::Invalid("no samples given (--sample, repeatable)".into()));
    }
    let mut samples = Vec::with_capacity(cfg.samples.len());
    for p in &cfg.samples {
        let graph: GraphSample = load_json(Path::new(p))?;
        samples.push((mesh_label(&graph, p), graph));
    }
    let config = cfg.benchmark_config()?;
    let out_dir = Path::new(&cfg.out_dir);
    fs::create_dir_all(out_dir)?;

    let start = Instant::now();
    let output = eval::benchmark(&samples, &config)?;
    fs::write(out_dir.join("metrics.csv"), eval::metrics_csv(&output.entries))?;
    fs::write(out_dir.join("loss_history.csv"), eval::loss_csv(&output.loss_histories))?;
    fs::write(out_dir.join("error_curves.csv"), eval::error_curve_csv(&output.entries))?;

    for (name, _) in &samples {
        let loss_series: Vec<Series> = output
            .loss_histories
            .iter()
            .filter(|(mesh, _, _, _)| mesh == name)
            .map(|(_, model, seed, hist)| Series {
                label: format!("{model} seed {seed}"),
                points: hist.iter().map(|h| (h.epoch as f64, h.total)).collect(),
            })
            .collect();
        if !loss_series.is_empty() {
            let svg = line_plot_svg(
                &format!("training loss on {name}"),
                "epoch",
                "total loss",
                &loss_series,
                true,
            )?;
            fs::write(out_dir.join(format!("loss_{}.svg", file_token(name))), svg)?;
        }

        let error_series: Vec<Series> = output
            .entries
            .iter()
            .filter(|e| &e.mesh == name)
            .map(|e| Series {
                label: format!("{} seed {}", e.model, e.seed),
                points: e.error_curve.clone(),
            })
            .collect();
        if !error_series.is_empty() {
            let svg = line_plot_svg(
                &format!("error vs cn-{} on {name}", cfg.reference),
                "t",
                "normalized l2 error",
                &error_series,
                false,
            )?;
            fs::write(out_dir.join(format!("error_{}.svg", file_token(name))), svg)?;
        }
    }

    for e in &output.entries {
        println!(
            "{:<12} {:<16} seed {:<3} l2 {:.4e}  residual {:.4e}",
            e.mesh, e.model, e.seed, e.report.l2_norm, e.report.pde_residual_time
        );
    }
    println!(
        "benchmark finished in {:.1}s, reports in {}",
        start.elapsed().as_secs_f64(),
        cfg.out_dir
    );
    Ok(0)
}

pub fn verify(cfg: &VerifyCfg) -> Result<i32> {
    let reports = run_all(cfg.seed);
    let mut failed = 0usize;
    for r in &reports {
        println!("{} {:<24} {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
        if !r.passed {
            failed += 1;
        }
    }
    if failed == 0 {
        println!("all {} checks passed", reports.len());
        Ok(0)
    } else {
        println!("{failed} of {} checks failed", reports.len());
        Ok(2)
    }
}
