//! meshdiff: mesh generation, classical diffusion solvers, and
//! structure-aware graph networks behind one binary.
//!
//! Exit codes: 0 success, 1 validation or I/O error, 2 numerical failure
//! (solver breakdown, diverged rollout, failed invariant check).

mod commands;
mod config;

use std::path::PathBuf;
use std::process;

use clap::{Args, Parser, Subcommand};
use meshdiff_core::{Error, Result};

use config::FileConfig;

#[derive(Debug, Parser)]
#[command(name = "meshdiff", version, about)]
struct Cli {
    /// TOML config file; command-line flags override its values
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// print the effective configuration for every subcommand and exit
    #[arg(long, global = true)]
    show_config: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate wound healing on an ellipsoid and export the point cloud
    GenMesh(GenMeshArgs),
    /// Build a graph sample from a triangle mesh file (.obj or .ply)
    Ingest(IngestArgs),
    /// Crank-Nicolson diffusion rollout on a graph sample
    SolveCn(SolveCnArgs),
    /// Explicit finite-difference stability demo on a 2-d grid
    FdDemo(FdDemoArgs),
    /// Fit a model to the diffusion dynamics of one sample
    Train(TrainArgs),
    /// Train the model set and score it against the CN reference
    Benchmark(BenchmarkArgs),
    /// Run the built-in invariant checks
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
struct GenMeshArgs {
    /// number of surface nodes
    #[arg(long)]
    n: Option<usize>,
    /// neighbours per node in the kNN graph
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// output sample JSON
    #[arg(long)]
    out: Option<String>,
    /// wound-size log (CSV: step,time,sum_damage)
    #[arg(long)]
    wound_csv: Option<String>,
    /// healing diffusion coefficient
    #[arg(long)]
    d_h: Option<f64>,
    /// recovery rate toward full health
    #[arg(long)]
    eta: Option<f64>,
    /// damage inhibition of healing
    #[arg(long)]
    lambda: Option<f64>,
    /// damage decay rate in healed tissue
    #[arg(long)]
    beta: Option<f64>,
    /// stress source coefficient
    #[arg(long)]
    k1: Option<f64>,
    /// stress sink coefficient
    #[arg(long)]
    k2: Option<f64>,
    /// stress relaxation coefficient
    #[arg(long)]
    k3: Option<f64>,
    /// healing-simulation time step
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    n_steps: Option<usize>,
    #[arg(long)]
    displacement_scale: Option<f64>,
    /// rebuild the kNN graph every this many steps
    #[arg(long)]
    rebuild_every: Option<usize>,
    /// angular radius of the initial wound, radians
    #[arg(long)]
    wound_angle: Option<f64>,
    /// surface-constraint tolerance for boundary detection
    #[arg(long)]
    boundary_delta: Option<f64>,
}

impl GenMeshArgs {
    fn apply(self, cfg: &mut config::GenMeshCfg) {
        if let Some(v) = self.n {
            cfg.n = v;
        }
        if let Some(v) = self.k {
            cfg.k = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.out {
            cfg.out = v;
        }
        if self.wound_csv.is_some() {
            cfg.wound_csv = self.wound_csv;
        }
        if let Some(v) = self.d_h {
            cfg.d_h = v;
        }
        if let Some(v) = self.eta {
            cfg.eta = v;
        }
        if let Some(v) = self.lambda {
            cfg.lambda = v;
        }
        if let Some(v) = self.beta {
            cfg.beta = v;
        }
        if let Some(v) = self.k1 {
            cfg.k1 = v;
        }
        if let Some(v) = self.k2 {
            cfg.k2 = v;
        }
        if let Some(v) = self.k3 {
            cfg.k3 = v;
        }
        if let Some(v) = self.dt {
            cfg.dt = v;
        }
        if let Some(v) = self.n_steps {
            cfg.n_steps = v;
        }
        if let Some(v) = self.displacement_scale {
            cfg.displacement_scale = v;
        }
        if let Some(v) = self.rebuild_every {
            cfg.rebuild_every = v;
        }
        if let Some(v) = self.wound_angle {
            cfg.wound_angle = v;
        }
        if let Some(v) = self.boundary_delta {
            cfg.boundary_delta = v;
        }
    }
}

#[derive(Debug, Args)]
struct IngestArgs {
    /// input mesh file (.obj or .ply)
    #[arg(long = "in")]
    input: Option<String>,
    /// nodes to subsample from the mesh vertices
    #[arg(long)]
    n: Option<usize>,
    /// neighbours per node in the kNN graph
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// output sample JSON
    #[arg(long)]
    out: Option<String>,
}

impl IngestArgs {
    fn apply(self, cfg: &mut config::IngestCfg) {
        if self.input.is_some() {
            cfg.input = self.input;
        }
        if let Some(v) = self.n {
            cfg.n = v;
        }
        if let Some(v) = self.k {
            cfg.k = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.out {
            cfg.out = v;
        }
    }
}

#[derive(Debug, Args)]
struct SolveCnArgs {
    /// graph sample JSON
    #[arg(long)]
    sample: Option<String>,
    /// weight law: irregular (1/d) or pde (1/d^2)
    #[arg(long)]
    variant: Option<String>,
    /// final time
    #[arg(long = "T")]
    t_final: Option<f64>,
    /// number of time steps
    #[arg(long)]
    nt: Option<usize>,
    /// output trajectory JSON
    #[arg(long)]
    out: Option<String>,
}

impl SolveCnArgs {
    fn apply(self, cfg: &mut config::SolveCnCfg) {
        if self.sample.is_some() {
            cfg.sample = self.sample;
        }
        if let Some(v) = self.variant {
            cfg.variant = v;
        }
        if let Some(v) = self.t_final {
            cfg.t_final = v;
        }
        if let Some(v) = self.nt {
            cfg.nt = v;
        }
        if let Some(v) = self.out {
            cfg.out = v;
        }
    }
}

#[derive(Debug, Args)]
struct FdDemoArgs {
    #[arg(long)]
    nx: Option<usize>,
    #[arg(long)]
    ny: Option<usize>,
    /// node jitter as a fraction of the spacing, in [0, 1)
    #[arg(long)]
    perturb: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    diffusivity: Option<f64>,
    /// explicit time step; default is the uniform-grid stability limit
    #[arg(long)]
    dt: Option<f64>,
    /// output CSV (step,max_u,diverged)
    #[arg(long)]
    out_csv: Option<String>,
}

impl FdDemoArgs {
    fn apply(self, cfg: &mut config::FdDemoCfg) {
        if let Some(v) = self.nx {
            cfg.nx = v;
        }
        if let Some(v) = self.ny {
            cfg.ny = v;
        }
        if let Some(v) = self.perturb {
            cfg.perturb = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.steps {
            cfg.steps = v;
        }
        if let Some(v) = self.diffusivity {
            cfg.diffusivity = v;
        }
        if self.dt.is_some() {
            cfg.dt = self.dt;
        }
        if let Some(v) = self.out_csv {
            cfg.out_csv = v;
        }
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// graph sample JSON
    #[arg(long)]
    sample: Option<String>,
    /// ocgnn, gcn, or mlp
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// training horizon
    #[arg(long = "T")]
    t_final: Option<f64>,
    /// collocation points per epoch
    #[arg(long)]
    nt: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    /// time-encoding frequencies, comma separated
    #[arg(long, value_delimiter = ',')]
    omegas: Option<Vec<f64>>,
    #[arg(long)]
    seed: Option<u64>,
    /// normalize the consistency residuals by running field magnitudes
    #[arg(long)]
    normalize_ptensor: Option<bool>,
    #[arg(long)]
    lambda_momentum: Option<f64>,
    #[arg(long)]
    stat_decay: Option<f64>,
    /// output parameter JSON
    #[arg(long)]
    out: Option<String>,
    /// per-epoch loss CSV
    #[arg(long)]
    loss_csv: Option<String>,
    /// per-epoch energy diagnostics CSV
    #[arg(long)]
    energy_csv: Option<String>,
}

impl TrainArgs {
    fn apply(self, cfg: &mut config::TrainCfg) {
        if self.sample.is_some() {
            cfg.sample = self.sample;
        }
        if let Some(v) = self.model {
            cfg.model = v;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.lr {
            cfg.lr = v;
        }
        if let Some(v) = self.t_final {
            cfg.t_final = v;
        }
        if let Some(v) = self.nt {
            cfg.nt = v;
        }
        if let Some(v) = self.hidden {
            cfg.hidden = v;
        }
        if let Some(v) = self.layers {
            cfg.layers = v;
        }
        if let Some(v) = self.omegas {
            cfg.omegas = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.normalize_ptensor {
            cfg.normalize_ptensor = v;
        }
        if let Some(v) = self.lambda_momentum {
            cfg.lambda_momentum = v;
        }
        if let Some(v) = self.stat_decay {
            cfg.stat_decay = v;
        }
        if let Some(v) = self.out {
            cfg.out = v;
        }
        if self.loss_csv.is_some() {
            cfg.loss_csv = self.loss_csv;
        }
        if self.energy_csv.is_some() {
            cfg.energy_csv = self.energy_csv;
        }
    }
}

#[derive(Debug, Args)]
struct BenchmarkArgs {
    /// graph sample JSON, repeatable
    #[arg(long = "sample")]
    samples: Vec<String>,
    #[arg(long)]
    out_dir: Option<String>,
    /// reference weight law: irregular or pde
    #[arg(long)]
    reference: Option<String>,
    /// evaluation horizon
    #[arg(long = "T")]
    t_final: Option<f64>,
    /// evaluation time steps
    #[arg(long)]
    nt: Option<usize>,
    /// models to train, comma separated
    #[arg(long, value_delimiter = ',')]
    models: Option<Vec<String>>,
    /// also score an untrained network as the floor
    #[arg(long)]
    include_untrained: Option<bool>,
    /// training seeds, comma separated
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    /// collocation points per training epoch
    #[arg(long)]
    train_nt: Option<usize>,
    /// training horizon
    #[arg(long)]
    train_t_final: Option<f64>,
}

impl BenchmarkArgs {
    fn apply(self, cfg: &mut config::BenchmarkCfg) {
        if !self.samples.is_empty() {
            cfg.samples = self.samples;
        }
        if let Some(v) = self.out_dir {
            cfg.out_dir = v;
        }
        if let Some(v) = self.reference {
            cfg.reference = v;
        }
        if let Some(v) = self.t_final {
            cfg.t_final = v;
        }
        if let Some(v) = self.nt {
            cfg.nt = v;
        }
        if let Some(v) = self.models {
            cfg.models = v;
        }
        if let Some(v) = self.include_untrained {
            cfg.include_untrained = v;
        }
        if let Some(v) = self.seeds {
            cfg.seeds = v;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.lr {
            cfg.lr = v;
        }
        if let Some(v) = self.hidden {
            cfg.hidden = v;
        }
        if let Some(v) = self.layers {
            cfg.layers = v;
        }
        if let Some(v) = self.train_nt {
            cfg.train_nt = v;
        }
        if let Some(v) = self.train_t_final {
            cfg.train_t_final = v;
        }
    }
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[arg(long)]
    seed: Option<u64>,
}

impl VerifyArgs {
    fn apply(self, cfg: &mut config::VerifyCfg) {
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
    }
}

enum Which {
    GenMesh,
    Ingest,
    SolveCn,
    FdDemo,
    Train,
    Benchmark,
    Verify,
}

fn run(cli: Cli) -> Result<i32> {
    let mut file = FileConfig::load(cli.config.as_deref())?;
    let which = cli.command.map(|cmd| match cmd {
        Command::GenMesh(a) => {
            a.apply(&mut file.gen_mesh);
            Which::GenMesh
        }
        Command::Ingest(a) => {
            a.apply(&mut file.ingest);
            Which::Ingest
        }
        Command::SolveCn(a) => {
            a.apply(&mut file.solve_cn);
            Which::SolveCn
        }
        Command::FdDemo(a) => {
            a.apply(&mut file.fd_demo);
            Which::FdDemo
        }
        Command::Train(a) => {
            a.apply(&mut file.train);
            Which::Train
        }
        Command::Benchmark(a) => {
            a.apply(&mut file.benchmark);
            Which::Benchmark
        }
        Command::Verify(a) => {
            a.apply(&mut file.verify);
            Which::Verify
        }
    });

    if cli.show_config {
        print!("{}", file.to_toml()?);
        return Ok(0);
    }
    match which {
        None => Err(Error::Invalid("no subcommand given (see --help)".into())),
        Some(Which::GenMesh) => commands::gen_mesh(&file.gen_mesh),
        Some(Which::Ingest) => commands::ingest(&file.ingest),
        Some(Which::SolveCn) => commands::solve_cn(&file.solve_cn),
        Some(Which::FdDemo) => commands::fd_demo(&file.fd_demo),
        Some(Which::Train) => commands::train_model(&file.train),
        Some(Which::Benchmark) => commands::benchmark(&file.benchmark),
        Some(Which::Verify) => commands::verify(&file.verify),
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help and --version land here too; keep their zero exit and
            // map genuine usage errors to the validation code
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            process::exit(code);
        }
    };
    let code = match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                2
            } else {
                1
            }
        }
    };
    process::exit(code);
}
