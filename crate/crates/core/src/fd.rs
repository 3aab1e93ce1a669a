//! Explicit finite-difference diffusion on the unit square: stable on the
//! uniform grid at the CFL step, divergent on a randomly perturbed grid
//! with the same step. The perturbed stencil keeps the 5-point neighbor
//! topology but uses true neighbor distances in the second differences,
//! which is exactly the naive scheme that loses negative definiteness.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cn::Trajectory;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Grid2D {
    pub nx: usize,
    pub ny: usize,
    /// row-major over (iy, ix): node (ix, iy) lives at iy * nx + ix
    pub coords: Vec<[f64; 2]>,
    pub dx_mean: f64,
    pub dy_mean: f64,
    pub perturbation_fraction: f64,
}

impl Grid2D {
    pub fn uniform(nx: usize, ny: usize) -> Result<Self> {
        if nx < 3 || ny < 3 {
            return Err(Error::Invalid(format!("grid {nx}x{ny} has no interior")));
        }
        let dx = 1.0 / (nx - 1) as f64;
        let dy = 1.0 / (ny - 1) as f64;
        let mut coords = Vec::with_capacity(nx * ny);
        for iy in 0..ny {
            for ix in 0..nx {
                coords.push([ix as f64 * dx, iy as f64 * dy]);
            }
        }
        Ok(Grid2D { nx, ny, coords, dx_mean: dx, dy_mean: dy, perturbation_fraction: 0.0 })
    }

    /// Uniform grid with every interior node jittered by up to
    /// fraction * spacing per coordinate, clipped to the unit box.
    pub fn perturbed(nx: usize, ny: usize, fraction: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(Error::Invalid(format!(
                "perturbation fraction {fraction} must lie in [0, 1)"
            )));
        }
        let mut grid = Self::uniform(nx, ny)?;
        grid.perturbation_fraction = fraction;
        if fraction == 0.0 {
            return Ok(grid);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for iy in 1..ny - 1 {
            for ix in 1..nx - 1 {
                let i = grid.index(ix, iy);
                let jx = (2.0 * rng.gen::<f64>() - 1.0) * fraction * grid.dx_mean;
                let jy = (2.0 * rng.gen::<f64>() - 1.0) * fraction * grid.dy_mean;
                grid.coords[i][0] = (grid.coords[i][0] + jx).clamp(0.0, 1.0);
                grid.coords[i][1] = (grid.coords[i][1] + jy).clamp(0.0, 1.0);
            }
        }
        Ok(grid)
    }

    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }

    pub fn is_boundary(&self, ix: usize, iy: usize) -> bool {
        ix == 0 || iy == 0 || ix == self.nx - 1 || iy == self.ny - 1
    }

    pub fn n_nodes(&self) -> usize {
        self.nx * self.ny
    }
}

/// Largest stable explicit step on a uniform grid.
pub fn cfl_timestep(dx: f64, dy: f64, diffusivity: f64) -> Result<f64> {
    for (name, v) in [("dx", dx), ("dy", dy), ("diffusivity", diffusivity)] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::Invalid(format!("{name} = {v} must be positive")));
        }
    }
    let (dx2, dy2) = (dx * dx, dy * dy);
    Ok(dx2 * dy2 / (2.0 * diffusivity * (dx2 + dy2)))
}

/// u = 1 inside the disc, 0 outside.
pub fn hot_disc_ic(grid: &Grid2D, center: [f64; 2], radius: f64) -> Vec<f64> {
    grid.coords
        .iter()
        .map(|c| {
            let d2 = (c[0] - center[0]).powi(2) + (c[1] - center[1]).powi(2);
            if d2 <= radius * radius {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct FdRun {
    pub trajectory: Trajectory,
    pub diverged: bool,
    /// first step at which max|u| exceeded 10x the initial max or went
    /// non-finite; divergence is sticky from there on
    pub diverged_step: Option<usize>,
}

impl FdRun {
    pub fn diverged_by(&self, step: usize) -> bool {
        self.diverged_step.map(|s| step >= s).unwrap_or(false)
    }
}

fn second_difference(u_l: f64, u_c: f64, u_r: f64, h_l: f64, h_r: f64) -> f64 {
    2.0 / (h_l + h_r) * ((u_r - u_c) / h_r - (u_c - u_l) / h_l)
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// March the explicit 5-point scheme. Boundary nodes hold boundary_value
/// throughout; state0 is the initial condition with the boundary applied.
pub fn run_fd_diffusion(
    grid: &Grid2D,
    diffusivity: f64,
    dt: f64,
    n_steps: usize,
    u0: &[f64],
    boundary_value: f64,
) -> Result<FdRun> {
    let n = grid.n_nodes();
    if u0.len() != n {
        return Err(Error::LengthMismatch { what: "initial condition", got: u0.len(), expected: n });
    }
    if !dt.is_finite() || dt < 0.0 {
        return Err(Error::Invalid(format!("time step {dt} is not admissible")));
    }
    if u0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("initial condition is not finite".into()));
    }

    let mut state = u0.to_vec();
    for iy in 0..grid.ny {
        for ix in 0..grid.nx {
            if grid.is_boundary(ix, iy) {
                state[grid.index(ix, iy)] = boundary_value;
            }
        }
    }
    let initial_max = state.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let blowup = 10.0 * initial_max;

    let mut times = Vec::with_capacity(n_steps + 1);
    let mut states = Vec::with_capacity(n_steps + 1);
    times.push(0.0);
    states.push(state.clone());
    // dt = 0 is a demo degenerate; index states by step count so the time
    // grid still increases
    let tick = if dt > 0.0 { dt } else { 1.0 };

    let mut diverged_step = None;
    let mut next = state.clone();
    for step in 1..=n_steps {
        for iy in 1..grid.ny - 1 {
            for ix in 1..grid.nx - 1 {
                let c = grid.index(ix, iy);
                let (w, e) = (grid.index(ix - 1, iy), grid.index(ix + 1, iy));
                let (s, nn) = (grid.index(ix, iy - 1), grid.index(ix, iy + 1));
                let lap = second_difference(
                    state[w],
                    state[c],
                    state[e],
                    dist(grid.coords[c], grid.coords[w]),
                    dist(grid.coords[c], grid.coords[e]),
                ) + second_difference(
                    state[s],
                    state[c],
                    state[nn],
                    dist(grid.coords[c], grid.coords[s]),
                    dist(grid.coords[c], grid.coords[nn]),
                );
                next[c] = state[c] + dt * diffusivity * lap;
            }
        }
        std::mem::swap(&mut state, &mut next);
        if diverged_step.is_none() {
            let max = state.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if !max.is_finite() || max > blowup {
                diverged_step = Some(step);
            }
        }
        times.push(step as f64 * tick);
        states.push(state.clone());
    }

    Ok(FdRun {
        trajectory: Trajectory { times, states },
        diverged: diverged_step.is_some(),
        diverged_step,
    })
}

/// Independent boundary-flux tally on the uniform grid: the change of
/// total interior heat per step must equal dt * D * sum over
/// interior-boundary edges of (u_b - u_i)/h^2. Returns the worst relative
/// mismatch over the run.
pub fn check_conservation(grid: &Grid2D, run: &FdRun, diffusivity: f64, dt: f64) -> Result<f64> {
    if grid.perturbation_fraction != 0.0 {
        return Err(Error::Invalid(
            "conservation tally only holds on the uniform grid".into(),
        ));
    }
    let interior_sum = |u: &[f64]| {
        let mut s = 0.0;
        for iy in 1..grid.ny - 1 {
            for ix in 1..grid.nx - 1 {
                s += u[grid.index(ix, iy)];
            }
        }
        s
    };
    let dx2 = grid.dx_mean * grid.dx_mean;
    let dy2 = grid.dy_mean * grid.dy_mean;
    let scale = interior_sum(&run.trajectory.states[0]).abs().max(1.0);

    let mut worst: f64 = 0.0;
    for w in run.trajectory.states.windows(2) {
        let (prev, next) = (&w[0], &w[1]);
        // flux through the four walls, evaluated on the pre-step field
        let mut flux = 0.0;
        for ix in 1..grid.nx - 1 {
            flux += (prev[grid.index(ix, 0)] - prev[grid.index(ix, 1)]) / dy2;
            flux += (prev[grid.index(ix, grid.ny - 1)] - prev[grid.index(ix, grid.ny - 2)]) / dy2;
        }
        for iy in 1..grid.ny - 1 {
            flux += (prev[grid.index(0, iy)] - prev[grid.index(1, iy)]) / dx2;
            flux += (prev[grid.index(grid.nx - 1, iy)] - prev[grid.index(grid.nx - 2, iy)]) / dx2;
        }
        let change = interior_sum(next) - interior_sum(prev);
        worst = worst.max((change - dt * diffusivity * flux).abs() / scale);
    }
    Ok(worst)
}
