//! Acceptance gate for the workspace: ten end-to-end checks covering the
//! operator algebra, the exact integrators, both solvers, the autodiff
//! engine, the models, and the training loop. Every test prints exactly
//! one PASS/FAIL line and pins its tolerances and runtime budget in code.

use std::collections::HashSet;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use meshdiff_core::autodiff::{grad_check, Tape};
use meshdiff_core::cn::{cn_rollout, DiffusionOperator, Normalization};
use meshdiff_core::dense::{skew_closed_form, symmetric_expm_apply, expm_scaled_symmetric_apply};
use meshdiff_core::eval::{self, l2_norm_error, mae, mse, BenchmarkConfig};
use meshdiff_core::fd::{cfl_timestep, hot_disc_ic, run_fd_diffusion, Grid2D};
use meshdiff_core::graph::{
    build_incidence, edge_weights_inverse_distance, permute_graph, permute_node_field,
    CnVariant, GraphSample, Metadata,
};
use meshdiff_core::io::to_json_string;
use meshdiff_core::meshgen::{
    generate_physical_mesh, sample_on_ellipsoid, step_healing_damage_stress, Ellipsoid,
    HealingParams, SurfaceState,
};
use meshdiff_core::model::{
    gcn_forward, ocgnn_forward, GraphContext, ModelKind, ModelParams, DEFAULT_OMEGAS,
};
use meshdiff_core::sparse::SparseMatrix;
use meshdiff_core::training::{
    loss_ptensor_at, total_loss_on_tape, train, LossWeights, TrainConfig,
};
use meshdiff_core::Result;

fn report(n: usize, name: &str, pass: bool, detail: String) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!("acceptance {n:02} {name}: {verdict} ({detail})");
    assert!(pass, "acceptance criterion {n} ({name}) failed: {detail}");
}

fn within(start: Instant, budget: Duration) -> (bool, f64) {
    let elapsed = start.elapsed();
    (elapsed <= budget, elapsed.as_secs_f64())
}

/// Random connected-by-chain graph with extra cycle edges in arbitrary
/// orientation; all-interior boundary, positive diffusivity.
fn random_graph(rng: &mut ChaCha8Rng, n: usize, extra: usize) -> GraphSample {
    let mut edges: Vec<[usize; 2]> = (1..n).map(|i| [i - 1, i]).collect();
    let mut have: HashSet<[usize; 2]> = edges.iter().map(|&[a, b]| [a.min(b), a.max(b)]).collect();
    let mut attempts = 0;
    let mut added = 0;
    while added < extra && attempts < 40 * (extra + 1) {
        attempts += 1;
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        if a == b {
            continue;
        }
        if have.insert([a.min(b), a.max(b)]) {
            edges.push([a, b]);
            added += 1;
        }
    }
    let positions: Vec<[f64; 3]> = (0..n)
        .map(|_| [rng.gen::<f64>() * 2.0 - 1.0, rng.gen::<f64>() * 2.0 - 1.0, rng.gen::<f64>()])
        .collect();
    let weights = edge_weights_inverse_distance(&positions, &edges);
    let u0: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
    GraphSample {
        positions,
        edges,
        weights,
        boundary_mask: vec![false; n],
        diffusivity: vec![0.05; n],
        u0,
        metadata: Metadata::default(),
    }
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn half_norm2(a: &[f64]) -> f64 {
    0.5 * a.iter().map(|x| x * x).sum::<f64>()
}

#[test]
fn c01_incidence_adjointness_and_laplacian_factorization() {
    const TOL: f64 = 1e-12;
    const BUDGET: Duration = Duration::from_secs(1);
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst_adj = 0.0f64;
    let mut worst_lap = 0.0f64;
    for _ in 0..50 {
        let n = rng.gen_range(2..=20);
        let extra = rng.gen_range(0..=n);
        let g = random_graph(&mut rng, n, extra);
        let b = build_incidence(n, &g.edges).unwrap();

        let f = random_vec(&mut rng, n);
        let gv = random_vec(&mut rng, g.n_edges());
        let lhs = dot(&b.matvec(&f), &gv);
        let rhs = dot(&f, &b.matvec_transpose(&gv));
        worst_adj = worst_adj.max((lhs - rhs).abs());

        // B'B against the hand-counted combinatorial Laplacian, entrywise
        let mut lap = vec![0.0; n * n];
        for &[a, c] in &g.edges {
            lap[a * n + a] += 1.0;
            lap[c * n + c] += 1.0;
            lap[a * n + c] -= 1.0;
            lap[c * n + a] -= 1.0;
        }
        let btb = b.transpose().matmul_sparse(&b).unwrap().to_dense();
        for (x, y) in btb.iter().zip(&lap) {
            worst_lap = worst_lap.max((x - y).abs());
        }
    }
    let (in_time, secs) = within(start, BUDGET);
    report(
        1,
        "incidence-adjointness",
        worst_adj <= TOL && worst_lap == 0.0 && in_time,
        format!("adjointness defect {worst_adj:.3e}, Laplacian defect {worst_lap:.3e}, {secs:.2}s"),
    );
}

#[test]
fn c02_hamiltonian_conservation_and_wrong_sign_drift() {
    const TOL_DRIFT: f64 = 1e-10;
    const MIN_WRONG: f64 = 1e-3;
    const BUDGET: Duration = Duration::from_secs(5);
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut max_drift = 0.0f64;
    let mut min_wrong = f64::INFINITY;
    for _ in 0..5 {
        let n = rng.gen_range(4..=10);
        let extra = rng.gen_range(1..=n);
        let g = random_graph(&mut rng, n, extra);
        let e = g.n_edges();
        let b = build_incidence(n, &g.edges).unwrap();
        let f0 = random_vec(&mut rng, n);
        let g0 = random_vec(&mut rng, e);
        let h0 = half_norm2(&f0) + half_norm2(&g0);

        // exact rotation: closed form of df/dt = B'g, dg/dt = -Bf
        for k in 0..=200 {
            let t = k as f64 * 0.5;
            let (f, gv) = skew_closed_form(&b, &f0, &g0, t).unwrap();
            max_drift = max_drift.max((half_norm2(&f) + half_norm2(&gv) - h0).abs());
        }

        // wrong sign dg/dt = +Bf makes the block matrix [[0, B'], [B, 0]]
        // symmetric, so its exact exponential is available and hyperbolic
        let m = n + e;
        let mut sym = vec![0.0; m * m];
        for r in 0..e {
            for (c, v) in b.iter_row(r) {
                sym[c * m + (n + r)] = v;
                sym[(n + r) * m + c] = v;
            }
        }
        let mut state0 = f0.clone();
        state0.extend_from_slice(&g0);
        let mut wrong = 0.0f64;
        for &t in &[0.25, 0.5, 1.0] {
            let st = symmetric_expm_apply(&sym, m, t, &state0).unwrap();
            wrong = wrong.max((half_norm2(&st) - h0).abs());
        }
        min_wrong = min_wrong.min(wrong);
    }
    let (in_time, secs) = within(start, BUDGET);
    report(
        2,
        "hamiltonian-conservation",
        max_drift < TOL_DRIFT && min_wrong > MIN_WRONG && in_time,
        format!("exact drift {max_drift:.3e}, wrong-sign drift {min_wrong:.3e}, {secs:.2}s"),
    );
}

#[test]
fn c03_permutation_and_orientation_equivariance() {
    const TOL: f64 = 1e-10;
    const BUDGET: Duration = Duration::from_secs(30);
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst = 0.0f64;
    for trial in 0..100u64 {
        let n = rng.gen_range(4..=12);
        let extra = rng.gen_range(1..=n);
        let g = random_graph(&mut rng, n, extra);
        let e = g.n_edges();
        let f = random_vec(&mut rng, n);
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        let (pg, ep) = permute_graph(&g, &perm).unwrap();
        // flip a random subset of the relabeled edges
        let flips: Vec<bool> = (0..e).map(|_| rng.gen_bool(0.5)).collect();
        let mut pg2 = pg.clone();
        for (s, &flip) in flips.iter().enumerate() {
            if flip {
                pg2.edges[s].swap(0, 1);
            }
        }
        let transport_edge = |x: &[f64]| -> Vec<f64> {
            let mut out = ep.apply(x).unwrap();
            for (s, &flip) in flips.iter().enumerate() {
                if flip {
                    out[s] = -out[s];
                }
            }
            out
        };

        let run = |worst: &mut f64| -> Result<()> {
            let pf = permute_node_field(&f, &perm)?;
            let p = ModelParams::init(ModelKind::Ocgnn, 6, 2, &DEFAULT_OMEGAS, 9000 + trial)?;
            let (fd, gd) = ocgnn_forward(&g, &f, 0.3, &p)?;
            let (pfd, pgd) = ocgnn_forward(&pg2, &pf, 0.3, &p)?;
            for (a, b) in pfd.iter().zip(&permute_node_field(&fd, &perm)?) {
                *worst = worst.max((a - b).abs());
            }
            for (a, b) in pgd.iter().zip(&transport_edge(&gd)) {
                *worst = worst.max((a - b).abs());
            }

            let gp = ModelParams::init(ModelKind::Gcn, 6, 2, &DEFAULT_OMEGAS, 9100 + trial)?;
            let fd_g = gcn_forward(&g, &f, 0.3, &gp)?;
            let pfd_g = gcn_forward(&pg2, &pf, 0.3, &gp)?;
            for (a, b) in pfd_g.iter().zip(&permute_node_field(&fd_g, &perm)?) {
                *worst = worst.max((a - b).abs());
            }

            // consistency loss is a scalar of the same fields
            let fdot = random_vec(&mut ChaCha8Rng::seed_from_u64(7000 + trial), n);
            let gdot = random_vec(&mut ChaCha8Rng::seed_from_u64(7100 + trial), e);
            let gfield = random_vec(&mut ChaCha8Rng::seed_from_u64(7200 + trial), e);
            let eval_pt = |graph: &GraphSample,
                           fd_: &[f64],
                           gd_: &[f64],
                           f_: &[f64],
                           g_: &[f64]|
             -> Result<f64> {
                let ctx = GraphContext::new(graph)?;
                let tape = Tape::new();
                let fdv = tape.constant(ctx.n_nodes, 1, fd_.to_vec())?;
                let gdv = tape.constant(ctx.n_edges, 1, gd_.to_vec())?;
                let fv = tape.constant(ctx.n_nodes, 1, f_.to_vec())?;
                let gv = tape.constant(ctx.n_edges, 1, g_.to_vec())?;
                let loss = loss_ptensor_at(&tape, &ctx, fdv, gdv, fv, gv, 1.3, 0.8)?;
                Ok(tape.scalar_value(loss))
            };
            let base = eval_pt(&g, &fdot, &gdot, &f, &gfield)?;
            let moved = eval_pt(
                &pg2,
                &permute_node_field(&fdot, &perm)?,
                &transport_edge(&gdot),
                &permute_node_field(&f, &perm)?,
                &transport_edge(&gfield),
            )?;
            *worst = worst.max((base - moved).abs());
            Ok(())
        };
        run(&mut worst).unwrap();
    }
    let (in_time, secs) = within(start, BUDGET);
    report(
        3,
        "equivariance",
        worst <= TOL && in_time,
        format!("max defect {worst:.3e} over 100 triples, {secs:.2}s"),
    );
}

#[test]
fn c04_energy_drift_bound_on_training_snapshots() {
    const TOL_SKEW: f64 = 1e-10;
    let start = Instant::now();
    let (graph, _) = generate_physical_mesh(80, 4, &HealingParams::default()).unwrap();
    let config = TrainConfig { epochs: 60, ..TrainConfig::default() };
    let result = train(&graph, ModelKind::Ocgnn, &config).unwrap();

    let mut min_margin = f64::INFINITY;
    let mut max_skew = 0.0f64;
    for rep in &result.energy {
        min_margin = min_margin.min(rep.min_bound_margin);
        max_skew = max_skew.max(rep.max_abs_skew);
    }
    let pass = result.energy.len() == config.epochs && min_margin >= 0.0 && max_skew <= TOL_SKEW;
    report(
        4,
        "energy-drift-bound",
        pass,
        format!(
            "{} snapshots, min bound margin {min_margin:.3e}, max skew {max_skew:.3e}, {:.2}s",
            result.energy.len(),
            start.elapsed().as_secs_f64()
        ),
    );
}

#[test]
fn c05_gradients_match_central_differences() {
    const TOL_PRIMITIVE: f64 = 1e-4;
    const TOL_FULL: f64 = 1e-3;
    const STEP: f64 = 1e-5;
    const BUDGET: Duration = Duration::from_secs(60);
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(505);

    // operands on a 10-node graph for the structured primitives
    let g10 = random_graph(&mut rng, 10, 8);
    let ctx = GraphContext::new(&g10).unwrap();
    let e10 = ctx.n_edges;
    let idx: Vec<usize> = (0..e10).map(|_| rng.gen_range(0..10)).collect();
    let row_scale: Vec<f64> = (0..10).map(|_| rng.gen::<f64>() + 0.5).collect();

    // values away from zero keep relu and the FD stencil honest
    let spread = |rng: &mut ChaCha8Rng, len: usize| -> Vec<f64> {
        (0..len)
            .map(|_| {
                let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                sign * (0.2 + 0.8 * rng.gen::<f64>())
            })
            .collect()
    };

    let w_const: Vec<f64> = (0..12).map(|_| rng.gen::<f64>() - 0.5).collect();

    let mut worst: Vec<(String, f64)> = Vec::new();
    let mut check = |name: &str, len: usize, f: &dyn Fn(&Tape, meshdiff_core::autodiff::Var) -> Result<meshdiff_core::autodiff::Var>| {
        let x = spread(&mut rng, len);
        let rep = grad_check(f, &x, STEP, TOL_PRIMITIVE).unwrap();
        worst.push((name.to_string(), rep.max_rel_err));
        assert!(rep.pass, "primitive {name} exceeded tol: {:.3e}", rep.max_rel_err);
    };
    check("matmul", 12, &|t, x| {
        let a = t.reshape(x, 3, 4)?;
        let b = t.constant(4, 3, w_const.clone())?;
        Ok(t.squared_norm(t.matmul(a, b)?))
    });
    check("add", 10, &|t, x| {
        let c = t.constant(10, 1, (0..10).map(|i| 0.1 * i as f64).collect())?;
        Ok(t.squared_norm(t.add(x, c)?))
    });
    check("sub", 10, &|t, x| {
        let c = t.constant(10, 1, (0..10).map(|i| 0.3 - 0.05 * i as f64).collect())?;
        Ok(t.squared_norm(t.sub(c, x)?))
    });
    check("mul", 10, &|t, x| {
        let c = t.constant(10, 1, (0..10).map(|i| 1.0 + 0.1 * i as f64).collect())?;
        Ok(t.squared_norm(t.mul(x, c)?))
    });
    check("scalar_mul", 10, &|t, x| Ok(t.squared_norm(t.scalar_mul(x, -1.7))));
    check("scale_var", 11, &|t, x| {
        // last coordinate is the scalar multiplier
        let v = t.gather_rows(x, &(0..10).collect::<Vec<_>>())?;
        let s = t.gather_rows(x, &[10])?;
        Ok(t.squared_norm(t.scale_var(v, s)?))
    });
    check("add_bias", 12, &|t, x| {
        let a = t.reshape(t.gather_rows(x, &(0..9).collect::<Vec<_>>())?, 3, 3)?;
        let b = t.reshape(t.gather_rows(x, &[9, 10, 11])?, 1, 3)?;
        Ok(t.squared_norm(t.add_bias(a, b)?))
    });
    check("tanh", 10, &|t, x| Ok(t.squared_norm(t.tanh(x))));
    check("relu", 10, &|t, x| Ok(t.squared_norm(t.relu(x))));
    check("gather_rows", 10, &|t, x| Ok(t.squared_norm(t.gather_rows(x, &idx)?)));
    check("scatter_add_rows", e10, &|t, x| {
        Ok(t.squared_norm(t.scatter_add_rows(x, &idx, 10)?))
    });
    check("scale_rows", 10, &|t, x| Ok(t.squared_norm(t.scale_rows(x, &row_scale)?)));
    check("spmm", 10, &|t, x| Ok(t.squared_norm(t.spmm(&ctx.incidence.clone(), x)?)));
    check("spmm_t", e10, &|t, x| {
        Ok(t.squared_norm(t.spmm_t(&ctx.incidence.clone(), x)?))
    });
    check("sum", 10, &|t, x| {
        let s = t.sum(x);
        Ok(t.mul(s, s)?)
    });
    check("mean", 10, &|t, x| {
        let m = t.mean(x);
        Ok(t.mul(m, m)?)
    });
    check("squared_norm", 10, &|t, x| {
        let q = t.squared_norm(x);
        Ok(t.mul(q, q)?)
    });
    check("reshape", 12, &|t, x| {
        let a = t.reshape(x, 4, 3)?;
        Ok(t.squared_norm(t.tanh(a)))
    });
    check("concat_cols", 12, &|t, x| {
        let a = t.reshape(t.gather_rows(x, &(0..6).collect::<Vec<_>>())?, 3, 2)?;
        let b = t.reshape(t.gather_rows(x, &(6..12).collect::<Vec<_>>())?, 3, 2)?;
        Ok(t.squared_norm(t.concat_cols(a, b)?))
    });

    // full four-term objective, gradient with respect to every parameter
    let mut g_full = random_graph(&mut rng, 10, 10);
    g_full.boundary_mask[0] = true;
    g_full.boundary_mask[9] = true;
    let ctx_full = GraphContext::new(&g_full).unwrap();
    let params = ModelParams::init(ModelKind::Ocgnn, 3, 1, &[1.0, 4.0], 55).unwrap();
    let weights = LossWeights {
        lambdas: [1.0, 0.7, 1.3, 0.9],
        scale_s: 0.8,
        alpha_f: 1.2,
        alpha_g: 0.6,
    };
    let full = grad_check(
        |t, x| total_loss_on_tape(t, &ctx_full, &params, x, 0.5, 2, &weights),
        &params.data,
        STEP,
        TOL_FULL,
    )
    .unwrap();
    worst.push(("full-loss".into(), full.max_rel_err));

    let max_primitive =
        worst.iter().filter(|(n, _)| n != "full-loss").map(|(_, e)| *e).fold(0.0, f64::max);
    let (in_time, secs) = within(start, BUDGET);
    report(
        5,
        "gradient-correctness",
        full.pass && max_primitive <= TOL_PRIMITIVE && in_time,
        format!(
            "{} primitives max err {max_primitive:.3e}, full loss err {:.3e}, {secs:.2}s",
            worst.len() - 1,
            full.max_rel_err
        ),
    );
}

#[test]
fn c06_cn_matches_dense_exponential_oracle() {
    const TOL: f64 = 1e-3;
    const BUDGET: Duration = Duration::from_secs(10);
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(606);

    let path: Vec<[f64; 3]> = (0..10).map(|i| [i as f64 * 0.4, 0.0, 0.0]).collect();
    let path_edges: Vec<[usize; 2]> = (0..9).map(|i| [i, i + 1]).collect();
    let star: Vec<[f64; 3]> = std::iter::once([0.0, 0.0, 0.0])
        .chain((0..8).map(|i| {
            let a = i as f64 * std::f64::consts::PI / 4.0;
            [a.cos(), a.sin(), 0.0]
        }))
        .collect();
    let star_edges: Vec<[usize; 2]> = (1..9).map(|i| [0, i]).collect();
    let rand_g = random_graph(&mut rng, 8, 6);

    let mut families: Vec<(&str, GraphSample)> = vec![
        ("path", sample_from(path, path_edges, &mut rng)),
        ("star", sample_from(star, star_edges, &mut rng)),
        ("random", rand_g),
    ];

    let mut worst_err = 0.0f64;
    let mut all_bounded = true;
    for (_, g) in &mut families {
        let traj = cn_rollout(g, CnVariant::Irregular, 1.0, 1000).unwrap();
        let op = DiffusionOperator::assemble(g, CnVariant::Irregular, Normalization::Generator)
            .unwrap();
        let n = g.n_nodes();
        let exact =
            expm_scaled_symmetric_apply(&op.scale, &op.stiffness.to_dense(), n, 1.0, &traj.states[0])
                .unwrap();
        for (a, b) in traj.final_state().iter().zip(&exact) {
            worst_err = worst_err.max((a - b).abs());
        }

        // rerun with two pinned nodes: the zero boundary may only pull
        // the sup norm down
        g.boundary_mask[0] = true;
        g.boundary_mask[n - 1] = true;
        let dirichlet = cn_rollout(g, CnVariant::Irregular, 1.0, 1000).unwrap();
        for traj in [&traj, &dirichlet] {
            let mut prev = f64::INFINITY;
            for s in &traj.states {
                let sup = s.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
                all_bounded &= sup <= prev + 1e-12;
                prev = sup;
            }
        }
    }
    let (in_time, secs) = within(start, BUDGET);
    report(
        6,
        "cn-vs-expm",
        worst_err < TOL && all_bounded && in_time,
        format!("final-state max error {worst_err:.3e}, sup-norm non-increasing: {all_bounded}, {secs:.2}s"),
    );
}

fn sample_from(
    positions: Vec<[f64; 3]>,
    edges: Vec<[usize; 2]>,
    rng: &mut ChaCha8Rng,
) -> GraphSample {
    let n = positions.len();
    let weights = edge_weights_inverse_distance(&positions, &edges);
    GraphSample {
        positions,
        edges,
        weights,
        boundary_mask: vec![false; n],
        diffusivity: (0..n).map(|_| 0.3 + 0.7 * rng.gen::<f64>()).collect(),
        u0: (0..n).map(|_| rng.gen::<f64>()).collect(),
        metadata: Metadata::default(),
    }
}

#[test]
fn c07_fd_stable_on_uniform_grid_diverges_when_perturbed() {
    const BUDGET: Duration = Duration::from_secs(60);
    let start = Instant::now();
    let nx = 100;
    let ny = 100;
    let diffusivity = 1.0;
    let dx = 1.0 / (nx - 1) as f64;
    let dt = cfl_timestep(dx, dx, diffusivity).unwrap();

    let uniform = Grid2D::uniform(nx, ny).unwrap();
    let u0 = hot_disc_ic(&uniform, [0.5, 0.5], 0.25);
    let sup0 = u0.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let run = run_fd_diffusion(&uniform, diffusivity, dt, 1000, &u0, 0.0).unwrap();
    let sup_final =
        run.trajectory.final_state().iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let uniform_ok = !run.diverged && sup_final <= sup0 + 1e-12;

    let mut diverged_count = 0;
    for seed in 1..=5 {
        let grid = Grid2D::perturbed(nx, ny, 0.6, seed).unwrap();
        let u0p = hot_disc_ic(&grid, [0.5, 0.5], 0.25);
        let runp = run_fd_diffusion(&grid, diffusivity, dt, 1000, &u0p, 0.0).unwrap();
        if runp.diverged {
            diverged_count += 1;
        }
    }
    let (in_time, secs) = within(start, BUDGET);
    report(
        7,
        "fd-instability",
        uniform_ok && diverged_count >= 4 && in_time,
        format!(
            "uniform bounded (sup {sup_final:.3e} <= {sup0:.1}), perturbed diverged {diverged_count}/5, {secs:.2}s"
        ),
    );
}

#[test]
fn c08_physical_mesh_invariants_and_determinism() {
    const BUDGET: Duration = Duration::from_secs(30);
    let start = Instant::now();
    let params = HealingParams::default();

    let (s1, r1) = generate_physical_mesh(800, 7, &params).unwrap();
    let (s2, r2) = generate_physical_mesh(800, 7, &params).unwrap();
    let bytes1 = to_json_string(&s1).unwrap();
    let bytes2 = to_json_string(&s2).unwrap();
    let deterministic = bytes1 == bytes2 && r1 == r2;

    let h_in_range = s1.u0.iter().all(|&h| (0.0..=1.0).contains(&h));
    let d_nonneg = s1.diffusivity.iter().all(|&d| d >= 0.0);
    let decay = r1.windows(2).all(|w| w[1].sum_damage <= w[0].sum_damage + 1e-12)
        && r1.iter().all(|r| r.sum_damage >= 0.0);

    // step the public simulation API directly so the per-node bounds are
    // checked on every step, not just on the exported end state
    let ell = Ellipsoid::default();
    let positions = sample_on_ellipsoid(&ell, 200, 11).unwrap();
    let damage: Vec<f64> =
        positions.iter().map(|p| if p[2] > 0.5 { 1.0 } else { 0.0 }).collect();
    let h: Vec<f64> = damage.iter().map(|&d| 1.0 - d).collect();
    let n = positions.len();
    let mut state = SurfaceState {
        ellipsoid: ell,
        positions,
        h,
        damage,
        stress: vec![0.0; n],
        edges: Vec::new(),
        weights: Vec::new(),
        laplacian: SparseMatrix::from_triplets(n, n, &[]).unwrap(),
    };
    state.rebuild_graph(10).unwrap();
    let mut stepwise_ok = true;
    let mut prev_sum: f64 = state.damage.iter().sum();
    for _ in 0..300 {
        step_healing_damage_stress(&mut state, &params).unwrap();
        stepwise_ok &= state.h.iter().all(|&v| (0.0..=1.0).contains(&v));
        stepwise_ok &= state.damage.iter().all(|&v| v >= 0.0);
        let sum: f64 = state.damage.iter().sum();
        stepwise_ok &= sum <= prev_sum + 1e-12;
        prev_sum = sum;
    }

    let (in_time, secs) = within(start, BUDGET);
    report(
        8,
        "physical-mesh",
        deterministic && h_in_range && d_nonneg && decay && stepwise_ok && in_time,
        format!(
            "byte-identical: {deterministic}, h in [0,1]: {h_in_range}, stepwise bounds: {stepwise_ok}, wound decay: {decay}, {secs:.2}s"
        ),
    );
}

#[test]
fn c09_learning_benchmark_ordering() {
    const BUDGET: Duration = Duration::from_secs(900);
    const MAX_L2: f64 = 0.1;
    let start = Instant::now();
    let (graph, _) = generate_physical_mesh(300, 0, &HealingParams::default()).unwrap();
    let config = BenchmarkConfig {
        seeds: vec![0, 1, 2, 3, 4],
        train: TrainConfig { epochs: 500, ..TrainConfig::default() },
        ..BenchmarkConfig::default()
    };
    let out = eval::benchmark(&[("m300".to_string(), graph)], &config).unwrap();

    let median = |label: &str, pick: &dyn Fn(&eval::BenchmarkEntry) -> f64| -> f64 {
        let mut vals: Vec<f64> =
            out.entries.iter().filter(|e| e.model == label).map(|e| pick(e)).collect();
        assert_eq!(vals.len(), 5, "expected one {label} entry per seed");
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        vals[2]
    };
    let res = |e: &eval::BenchmarkEntry| e.report.pde_residual_time;
    let res_ocgnn = median("ocgnn", &res);
    let res_gcn = median("gcn", &res);
    let res_floor = median("ocgnn-untrained", &res);
    let l2_ocgnn = median("ocgnn", &|e| e.report.l2_norm);

    let (in_time, secs) = within(start, BUDGET);
    report(
        9,
        "learning-benchmark",
        res_ocgnn < res_gcn && res_gcn < res_floor && l2_ocgnn < MAX_L2 && in_time,
        format!(
            "median residual ocgnn {res_ocgnn:.3e} < gcn {res_gcn:.3e} < untrained {res_floor:.3e}; ocgnn l2 {l2_ocgnn:.3e}, {secs:.0}s"
        ),
    );
}

#[test]
fn c10_metric_arithmetic_worked_examples() {
    let pred = [1.0, 0.0];
    let reference = [0.0, 0.0];
    let m1 = mae(&pred, &reference).unwrap();
    let m2 = mse(&pred, &reference).unwrap();
    let m3 = l2_norm_error(&pred, &reference).unwrap();
    let exact = m1 == 0.5 && m2 == 0.5 && m3 == 0.5f64.sqrt() && (m3 - 0.70711).abs() < 5e-6;

    let self_zero = mae(&pred, &pred).unwrap() == 0.0
        && mse(&pred, &pred).unwrap() == 0.0
        && l2_norm_error(&pred, &pred).unwrap() == 0.0;

    // constant offset c: mae |c|, mse c^2, l2 |c| (c chosen binary-exact)
    let base = [0.5, -1.25, 2.0, 0.75];
    let shifted: Vec<f64> = base.iter().map(|v| v - 0.25).collect();
    let offset_ok = mae(&shifted, &base).unwrap() == 0.25
        && mse(&shifted, &base).unwrap() == 0.0625
        && l2_norm_error(&shifted, &base).unwrap() == 0.25;

    report(
        10,
        "metric-arithmetic",
        exact && self_zero && offset_ok,
        format!("mae {m1}, mse {m2}, l2 {m3:.5}, self-comparison zeros: {self_zero}"),
    );
}
