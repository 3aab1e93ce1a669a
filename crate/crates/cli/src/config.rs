//! Layered configuration: built-in defaults, then an optional TOML file,
//! then command-line flags, highest last. Section and key names are
//! kebab-case, matching the flag spelling.

use std::fs;
use std::path::Path;

use meshdiff_core::eval::BenchmarkConfig;
use meshdiff_core::graph::CnVariant;
use meshdiff_core::meshgen::HealingParams;
use meshdiff_core::model::ModelKind;
use meshdiff_core::training::TrainConfig;
use meshdiff_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct GenMeshCfg {
    pub n: usize,
    pub k: usize,
    pub seed: u64,
    pub out: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wound_csv: Option<String>,
    pub d_h: f64,
    pub eta: f64,
    pub lambda: f64,
    pub beta: f64,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub dt: f64,
    pub n_steps: usize,
    pub displacement_scale: f64,
    pub rebuild_every: usize,
    pub wound_angle: f64,
    pub boundary_delta: f64,
}

impl Default for GenMeshCfg {
    fn default() -> Self {
        let p = HealingParams::default();
        GenMeshCfg {
            n: 300,
            k: p.k,
            seed: 42,
            out: "sample.json".into(),
            wound_csv: None,
            d_h: p.d_h,
            eta: p.eta,
            lambda: p.lambda,
            beta: p.beta,
            k1: p.k1,
            k2: p.k2,
            k3: p.k3,
            dt: p.dt,
            n_steps: p.n_steps,
            displacement_scale: p.displacement_scale,
            rebuild_every: p.rebuild_every,
            wound_angle: p.wound_angle,
            boundary_delta: p.boundary_delta,
        }
    }
}

impl GenMeshCfg {
    pub fn healing_params(&self) -> HealingParams {
        HealingParams {
            d_h: self.d_h,
            eta: self.eta,
            lambda: self.lambda,
            beta: self.beta,
            k1: self.k1,
            k2: self.k2,
            k3: self.k3,
            dt: self.dt,
            n_steps: self.n_steps,
            displacement_scale: self.displacement_scale,
            rebuild_every: self.rebuild_every,
            k: self.k,
            wound_angle: self.wound_angle,
            boundary_delta: self.boundary_delta,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct IngestCfg {
    /// .obj or .ply file to read; required at run time
    #[serde(rename = "in", skip_serializing_if = "Option::is_none")]
    pub input: Option<String>,
    pub n: usize,
    pub k: usize,
    pub seed: u64,
    pub out: String,
}

impl Default for IngestCfg {
    fn default() -> Self {
        IngestCfg { input: None, n: 2000, k: 10, seed: 7, out: "sample.json".into() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct FdDemoCfg {
    pub nx: usize,
    pub ny: usize,
    pub perturb: f64,
    pub seed: u64,
    pub steps: usize,
    pub diffusivity: f64,
    /// explicit step; when absent the stability limit of the unperturbed
    /// spacing is used, perturbed or not
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    pub out_csv: String,
}

impl Default for FdDemoCfg {
    fn default() -> Self {
        FdDemoCfg {
            nx: 100,
            ny: 100,
            perturb: 0.0,
            seed: 1,
            steps: 1000,
            diffusivity: 1.0,
            dt: None,
            out_csv: "fd.csv".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct SolveCnCfg {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sample: Option<String>,
    pub variant: String,
    pub t_final: f64,
    pub nt: usize,
    pub out: String,
}

impl Default for SolveCnCfg {
    fn default() -> Self {
        SolveCnCfg {
            sample: None,
            variant: "irregular".into(),
            t_final: 1.0,
            nt: 100,
            out: "traj.json".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct TrainCfg {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sample: Option<String>,
    pub model: String,
    pub epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    pub t_final: f64,
    pub nt: usize,
    pub hidden: usize,
    pub layers: usize,
    pub omegas: Vec<f64>,
    pub seed: u64,
    pub normalize_ptensor: bool,
    pub lambda_momentum: f64,
    pub stat_decay: f64,
    pub out: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss_csv: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub energy_csv: Option<String>,
}

impl Default for TrainCfg {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainCfg {
            sample: None,
            model: "ocgnn".into(),
            epochs: t.epochs,
            lr: t.lr,
            beta1: t.beta1,
            beta2: t.beta2,
            eps_adam: t.eps_adam,
            t_final: t.t_final,
            nt: t.n_t,
            hidden: t.hidden,
            layers: t.layers,
            omegas: t.omegas,
            seed: t.seed,
            normalize_ptensor: t.normalize_ptensor,
            lambda_momentum: t.lambda_momentum,
            stat_decay: t.stat_decay,
            out: "params.json".into(),
            loss_csv: None,
            energy_csv: None,
        }
    }
}

impl TrainCfg {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps_adam: self.eps_adam,
            t_final: self.t_final,
            n_t: self.nt,
            hidden: self.hidden,
            layers: self.layers,
            omegas: self.omegas.clone(),
            seed: self.seed,
            normalize_ptensor: self.normalize_ptensor,
            lambda_momentum: self.lambda_momentum,
            stat_decay: self.stat_decay,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct BenchmarkCfg {
    /// sample JSON paths; at least one required at run time
    pub samples: Vec<String>,
    pub out_dir: String,
    pub reference: String,
    pub t_final: f64,
    pub nt: usize,
    pub models: Vec<String>,
    pub include_untrained: bool,
    pub seeds: Vec<u64>,
    pub epochs: usize,
    pub lr: f64,
    pub hidden: usize,
    pub layers: usize,
    /// collocation grid used while training, separate from the eval grid
    pub train_nt: usize,
    pub train_t_final: f64,
}

impl Default for BenchmarkCfg {
    fn default() -> Self {
        let b = BenchmarkConfig::default();
        BenchmarkCfg {
            samples: Vec::new(),
            out_dir: "bench_out".into(),
            reference: b.reference.to_string(),
            t_final: b.t_final,
            nt: b.n_t,
            models: b.models.iter().map(|m| m.to_string()).collect(),
            include_untrained: b.include_untrained,
            seeds: b.seeds,
            epochs: b.train.epochs,
            lr: b.train.lr,
            hidden: b.train.hidden,
            layers: b.train.layers,
            train_nt: b.train.n_t,
            train_t_final: b.train.t_final,
        }
    }
}

impl BenchmarkCfg {
    pub fn benchmark_config(&self) -> Result<BenchmarkConfig> {
        let reference: CnVariant = self.reference.parse()?;
        let mut models = Vec::with_capacity(self.models.len());
        for m in &self.models {
            models.push(m.parse::<ModelKind>()?);
        }
        let train = TrainConfig {
            epochs: self.epochs,
            lr: self.lr,
            hidden: self.hidden,
            layers: self.layers,
            n_t: self.train_nt,
            t_final: self.train_t_final,
            ..TrainConfig::default()
        };
        Ok(BenchmarkConfig {
            t_final: self.t_final,
            n_t: self.nt,
            reference,
            models,
            include_untrained: self.include_untrained,
            seeds: self.seeds.clone(),
            train,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct VerifyCfg {
    pub seed: u64,
}

impl Default for VerifyCfg {
    fn default() -> Self {
        VerifyCfg { seed: 0 }
    }
}

/// Every subcommand's section in one document; this is also what
/// --show-config prints.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct FileConfig {
    pub gen_mesh: GenMeshCfg,
    pub ingest: IngestCfg,
    pub solve_cn: SolveCnCfg,
    pub fd_demo: FdDemoCfg,
    pub train: TrainCfg,
    pub benchmark: BenchmarkCfg,
    pub verify: VerifyCfg,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<FileConfig> {
        match path {
            None => Ok(FileConfig::default()),
            Some(p) => {
                let text = fs::read_to_string(p)?;
                toml::from_str(&text)
                    .map_err(|e| Error::Invalid(format!("config {}: {e}", p.display())))
            }
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Invalid(format!("config render: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = FileConfig::default();
        let text = cfg.to_toml().unwrap();
        let back: FileConfig = toml::from_str(&text).unwrap();
        assert_eq!(back.gen_mesh.n, cfg.gen_mesh.n);
        assert_eq!(back.train.omegas, cfg.train.omegas);
        assert_eq!(back.benchmark.models, cfg.benchmark.models);
    }

    #[test]
    fn partial_section_keeps_other_defaults() {
        let cfg: FileConfig = toml::from_str("[fd-demo]\nnx = 31\n").unwrap();
        assert_eq!(cfg.fd_demo.nx, 31);
        assert_eq!(cfg.fd_demo.ny, FdDemoCfg::default().ny);
        assert_eq!(cfg.solve_cn.nt, 100);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<FileConfig>("[fd-demo]\nnnx = 31\n").is_err());
        assert!(toml::from_str::<FileConfig>("[fd-demos]\nnx = 31\n").is_err());
    }

    #[test]
    fn benchmark_config_parses_names() {
        let mut cfg = BenchmarkCfg::default();
        cfg.models = vec!["ocgnn".into(), "mlp".into()];
        cfg.reference = "pde".into();
        let b = cfg.benchmark_config().unwrap();
        assert_eq!(b.reference, CnVariant::Pde);
        assert_eq!(b.models, vec![ModelKind::Ocgnn, ModelKind::Mlp]);
        cfg.models = vec!["resnet".into()];
        assert!(cfg.benchmark_config().is_err());
    }
}
