//! Physically driven mesh generation. Points are sampled on an ellipsoid
//! shell, a circular wound is stamped into the damage field, and a coupled
//! healing/damage/stress relaxation runs while stress pushes nodes along the
//! outward surface normal. The end state (positions irregular, healing field
//! as initial condition) is packaged as a [`GraphSample`].
//!
//! Field update per step, explicit Euler on the old state:
//!   h <- clamp(h + dt (D_h L h + eta (1 - h) - lambda D), 0, 1)
//!   D <- max(D + dt (-beta D (1 - h)), 0)
//!   sigma <- sigma + dt (k1 h - k2 D - k3 sigma)
//! so total damage never increases and h stays in [0, 1].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{
    build_knn_graph, edge_weights_inverse_distance, laplacian_generator, GraphSample, Metadata,
};
use crate::sparse::SparseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipsoid {
    pub center: [f64; 3],
    pub semi_axes: [f64; 3],
}

impl Default for Ellipsoid {
    fn default() -> Self {
        Ellipsoid {
            center: [0.5, 0.5, 0.5],
            semi_axes: [0.6, 0.4, 0.3],
        }
    }
}

impl Ellipsoid {
    /// Sum of squared normalized coordinates; 1 on the surface.
    pub fn constraint(&self, p: &[f64; 3]) -> f64 {
        let mut q = 0.0;
        for i in 0..3 {
            let d = (p[i] - self.center[i]) / self.semi_axes[i];
            q += d * d;
        }
        q
    }

    /// Unit outward normal (normalized constraint gradient). Zero vector if
    /// the point sits at the center.
    pub fn outward_normal(&self, p: &[f64; 3]) -> [f64; 3] {
        let mut g = [0.0; 3];
        for i in 0..3 {
            g[i] = (p[i] - self.center[i]) / (self.semi_axes[i] * self.semi_axes[i]);
        }
        let norm = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
        if norm < 1e-12 {
            return [0.0; 3];
        }
        [g[0] / norm, g[1] / norm, g[2] / norm]
    }

    pub fn surface_point(&self, theta: f64, phi: f64) -> [f64; 3] {
        [
            self.center[0] + self.semi_axes[0] * phi.sin() * theta.cos(),
            self.center[1] + self.semi_axes[1] * phi.sin() * theta.sin(),
            self.center[2] + self.semi_axes[2] * phi.cos(),
        ]
    }
}

/// Uniform-in-angle sampling of the default ellipsoid shell:
/// theta = 2 pi u1, phi = arccos(2 u2 - 1).
pub fn sample_ellipsoid(n: usize, seed: u64) -> Result<Vec<[f64; 3]>> {
    sample_on_ellipsoid(&Ellipsoid::default(), n, seed)
}

pub fn sample_on_ellipsoid(ell: &Ellipsoid, n: usize, seed: u64) -> Result<Vec<[f64; 3]>> {
    if n == 0 {
        return Err(Error::InsufficientNodes { have: 0, need: 1 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts = Vec::with_capacity(n);
    for _ in 0..n {
        let u1: f64 = rng.gen();
        let u2: f64 = rng.gen();
        let theta = 2.0 * std::f64::consts::PI * u1;
        let phi = (2.0 * u2 - 1.0).acos();
        pts.push(ell.surface_point(theta, phi));
    }
    Ok(pts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HealingParams {
    /// healing diffusion coefficient
    pub d_h: f64,
    /// recovery rate toward h = 1
    pub eta: f64,
    /// damage inhibition of healing
    pub lambda: f64,
    /// damage decay rate where tissue is healed
    pub beta: f64,
    /// stress source from healing
    pub k1: f64,
    /// stress sink from damage
    pub k2: f64,
    /// stress relaxation
    pub k3: f64,
    pub dt: f64,
    pub n_steps: usize,
    /// stress-to-displacement gain per unit time
    pub displacement_scale: f64,
    /// rebuild the kNN graph every this many steps
    pub rebuild_every: usize,
    pub k: usize,
    /// angular radius of the initial wound cap, radians
    pub wound_angle: f64,
    /// ellipsoid-constraint tolerance for boundary detection
    pub boundary_delta: f64,
}

impl Default for HealingParams {
    fn default() -> Self {
        HealingParams {
            d_h: 0.1,
            eta: 1.0,
            lambda: 0.5,
            beta: 1.0,
            k1: 1.0,
            k2: 1.0,
            k3: 0.5,
            dt: 0.01,
            n_steps: 500,
            displacement_scale: 0.02,
            rebuild_every: 50,
            k: 10,
            wound_angle: 0.7,
            boundary_delta: 0.2,
        }
    }
}

/// Evolving surface: node positions, the three coupled fields, and the
/// current graph with its generator Laplacian.
#[derive(Debug, Clone)]
pub struct SurfaceState {
    pub ellipsoid: Ellipsoid,
    pub positions: Vec<[f64; 3]>,
    pub h: Vec<f64>,
    pub damage: Vec<f64>,
    pub stress: Vec<f64>,
    pub edges: Vec<[usize; 2]>,
    pub weights: Vec<f64>,
    pub laplacian: SparseMatrix,
}

impl SurfaceState {
    pub fn n_nodes(&self) -> usize {
        self.positions.len()
    }

    /// Rebuild connectivity, weights, and Laplacian from current positions.
    pub fn rebuild_graph(&mut self, k: usize) -> Result<()> {
        self.edges = build_knn_graph(&self.positions, k)?;
        self.weights = edge_weights_inverse_distance(&self.positions, &self.edges);
        self.laplacian = laplacian_generator(self.n_nodes(), &self.edges, &self.weights)?;
        Ok(())
    }
}

/// One explicit Euler step of the coupled fields, all right-hand sides
/// evaluated on the pre-step state. Errors out instead of clamping when the
/// raw healing update leaves [-1, 2], which signals an unstable dt.
pub fn step_healing_damage_stress(state: &mut SurfaceState, p: &HealingParams) -> Result<()> {
    let lh = state.laplacian.matvec(&state.h);
    let n = state.n_nodes();
    let mut h_new = vec![0.0; n];
    let (mut pre_min, mut pre_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..n {
        let rhs = p.d_h * lh[i] + p.eta * (1.0 - state.h[i]) - p.lambda * state.damage[i];
        let pre = state.h[i] + p.dt * rhs;
        pre_min = pre_min.min(pre);
        pre_max = pre_max.max(pre);
        h_new[i] = pre.clamp(0.0, 1.0);
    }
    if pre_min < -1.0 || pre_max > 2.0 || !pre_min.is_finite() || !pre_max.is_finite() {
        return Err(Error::UnstableHealingStep { min: pre_min, max: pre_max });
    }
    for i in 0..n {
        let d_rhs = -p.beta * state.damage[i] * (1.0 - state.h[i]);
        let s_rhs = p.k1 * state.h[i] - p.k2 * state.damage[i] - p.k3 * state.stress[i];
        state.damage[i] = (state.damage[i] + p.dt * d_rhs).max(0.0);
        state.stress[i] += p.dt * s_rhs;
    }
    state.h = h_new;
    Ok(())
}

/// Move every node along its outward ellipsoid normal by scale * sigma.
pub fn displace_by_stress(state: &mut SurfaceState, scale: f64) {
    for i in 0..state.positions.len() {
        let n = state.ellipsoid.outward_normal(&state.positions[i]);
        let step = scale * state.stress[i];
        for c in 0..3 {
            state.positions[i][c] += step * n[c];
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WoundRecord {
    pub step: usize,
    pub time: f64,
    pub sum_damage: f64,
}

/// Full generation pipeline. Returns the finished sample plus the per-step
/// total-damage series (step 0 included).
pub fn generate_physical_mesh(
    n: usize,
    seed: u64,
    p: &HealingParams,
) -> Result<(GraphSample, Vec<WoundRecord>)> {
    let ellipsoid = Ellipsoid::default();
    let positions = sample_on_ellipsoid(&ellipsoid, n, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x77ed);
    let wound_center = positions[rng.gen_range(0..n)];

    let mut damage = vec![0.0; n];
    for i in 0..n {
        if angular_distance(&ellipsoid, &positions[i], &wound_center) <= p.wound_angle {
            damage[i] = 1.0;
        }
    }
    let h: Vec<f64> = damage.iter().map(|&d| 1.0 - d).collect();

    let mut state = SurfaceState {
        ellipsoid,
        positions,
        h,
        damage,
        stress: vec![0.0; n],
        edges: Vec::new(),
        weights: Vec::new(),
        laplacian: SparseMatrix::from_triplets(n, n, &[])?,
    };
    state.rebuild_graph(p.k)?;

    let mut series = Vec::with_capacity(p.n_steps + 1);
    series.push(WoundRecord { step: 0, time: 0.0, sum_damage: state.damage.iter().sum() });

    for step in 0..p.n_steps {
        if step > 0 && p.rebuild_every > 0 && step % p.rebuild_every == 0 {
            state.rebuild_graph(p.k)?;
        }
        step_healing_damage_stress(&mut state, p)?;
        // displacement_scale is a rate; one step moves scale * sigma * dt
        displace_by_stress(&mut state, p.displacement_scale * p.dt);
        series.push(WoundRecord {
            step: step + 1,
            time: (step + 1) as f64 * p.dt,
            sum_damage: state.damage.iter().sum(),
        });
    }

    state.rebuild_graph(p.k)?;
    let boundary_mask: Vec<bool> = state
        .positions
        .iter()
        .map(|pos| (state.ellipsoid.constraint(pos) - 1.0).abs() <= p.boundary_delta)
        .collect();

    let sample = GraphSample {
        positions: state.positions,
        edges: state.edges,
        weights: state.weights,
        boundary_mask,
        diffusivity: vec![0.05; n],
        u0: state.h,
        metadata: Metadata {
            name: format!("ellipsoid-n{n}-seed{seed}"),
            seed,
            k: p.k,
            provenance: "meshgen".into(),
        },
    };
    sample.validate()?;
    Ok((sample, series))
}

fn angular_distance(ell: &Ellipsoid, a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let ra = unit_from_center(ell, a);
    let rb = unit_from_center(ell, b);
    let dot = (ra[0] * rb[0] + ra[1] * rb[1] + ra[2] * rb[2]).clamp(-1.0, 1.0);
    dot.acos()
}

fn unit_from_center(ell: &Ellipsoid, p: &[f64; 3]) -> [f64; 3] {
    let v = [
        p[0] - ell.center[0],
        p[1] - ell.center[1],
        p[2] - ell.center[2],
    ];
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt().max(1e-300);
    [v[0] / n, v[1] / n, v[2] / n]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampled_points_sit_on_the_surface() {
        let pts = sample_ellipsoid(200, 42).unwrap();
        let ell = Ellipsoid::default();
        for p in &pts {
            assert!((ell.constraint(p) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let a = sample_ellipsoid(50, 7).unwrap();
        let b = sample_ellipsoid(50, 7).unwrap();
        let c = sample_ellipsoid(50, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn pole_parameters_hit_the_top_of_the_axis() {
        let ell = Ellipsoid::default();
        let p = ell.surface_point(0.0, 0.0);
        assert!((p[0] - 0.5).abs() < 1e-15);
        assert!((p[1] - 0.5).abs() < 1e-15);
        assert!((p[2] - 0.8).abs() < 1e-15);
    }

    fn single_node_state() -> SurfaceState {
        SurfaceState {
            ellipsoid: Ellipsoid {
                center: [0.0; 3],
                semi_axes: [1.0; 3],
            },
            positions: vec![[0.0, 0.0, 1.0]],
            h: vec![0.0],
            damage: vec![1.0],
            stress: vec![0.0],
            edges: vec![],
            weights: vec![],
            laplacian: SparseMatrix::from_triplets(1, 1, &[]).unwrap(),
        }
    }

    #[test]
    fn single_node_euler_step_matches_hand_values() {
        let mut state = single_node_state();
        let p = HealingParams { dt: 0.1, ..Default::default() };
        step_healing_damage_stress(&mut state, &p).unwrap();
        // h: 0 + 0.1 (1*1 - 0.5*1) = 0.05; D: 1 - 0.1*1*1 = 0.9
        assert!((state.h[0] - 0.05).abs() < 1e-15);
        assert!((state.damage[0] - 0.9).abs() < 1e-15);
        // sigma: 0 + 0.1 (1*0 - 1*1 - 0.5*0) = -0.1
        assert!((state.stress[0] + 0.1).abs() < 1e-15);
    }

    #[test]
    fn oversized_dt_is_rejected() {
        let mut state = single_node_state();
        let p = HealingParams { dt: 10.0, ..Default::default() };
        assert!(matches!(
            step_healing_damage_stress(&mut state, &p),
            Err(Error::UnstableHealingStep { .. })
        ));
    }

    #[test]
    fn displacement_moves_along_the_normal() {
        let mut state = single_node_state();
        state.stress = vec![0.1];
        displace_by_stress(&mut state, 1.0);
        assert_eq!(state.positions[0], [0.0, 0.0, 1.1]);
        // zero scale or zero stress leave positions alone
        displace_by_stress(&mut state, 0.0);
        assert_eq!(state.positions[0], [0.0, 0.0, 1.1]);
        state.stress = vec![0.0];
        displace_by_stress(&mut state, 1.0);
        assert_eq!(state.positions[0], [0.0, 0.0, 1.1]);
    }

    #[test]
    fn generated_mesh_is_valid_and_damage_decays() {
        let p = HealingParams::default();
        let (sample, series) = generate_physical_mesh(80, 3, &p).unwrap();
        sample.validate().unwrap();
        assert_eq!(series.len(), p.n_steps + 1);
        for w in series.windows(2) {
            assert!(w[1].sum_damage <= w[0].sum_damage);
        }
        for &h in &sample.u0 {
            assert!((0.0..=1.0).contains(&h));
        }
        assert!(series[0].sum_damage > 0.0, "wound should stamp some damage");
    }

    #[test]
    fn generation_is_deterministic_per_seed() {
        let p = HealingParams::default();
        let (a, _) = generate_physical_mesh(60, 11, &p).unwrap();
        let (b, _) = generate_physical_mesh(60, 11, &p).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn run_too_short_to_displace_reports_missing_interior() {
        // nodes barely leave the shell, so the boundary band swallows all of
        // them and validation refuses the sample
        let p = HealingParams { n_steps: 5, ..Default::default() };
        match generate_physical_mesh(60, 11, &p) {
            Err(Error::Invalid(msg)) => assert!(msg.contains("interior")),
            other => panic!("expected missing-interior error, got {other:?}"),
        }
    }
}
