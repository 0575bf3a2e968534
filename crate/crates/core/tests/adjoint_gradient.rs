mod common;

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wavecip::adjoint::*;
use wavecip::geometry::{Aabb, CoefficientField, Mesh, TimeGrid};
use wavecip::gradient::*;
use wavecip::wave::*;

fn cube8() -> Mesh<f64> {
    Mesh::uniform(
        Aabb::new([0.0; 3], [1.0; 3]),
        Aabb::new([0.125, 0.125, 0.125], [0.875, 0.875, 1.0]),
        0.125,
        false,
    )
    .unwrap()
}

fn random_series(rng: &mut ChaCha8Rng, n_nodes: usize, n_levels: usize) -> NodeSeries<f64> {
    let mut s = NodeSeries::zeros(n_nodes, n_levels);
    s.data.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
    s
}

/// Σ_levels Σ_i m̃_i a_i·b_i over the given level range, with `a` on dofs.
fn boundary_pairing(disc: &Discretization<f64>, hist: &WaveHistory<f64>, q: &NodeSeries<f64>, levels: std::ops::Range<usize>) -> f64 {
    let b = disc.boundary();
    let mut s = 0.0;
    for n in levels {
        let e = hist.level(n);
        let ql = q.level(n);
        for (i, &d) in b.dofs.iter().enumerate() {
            for k in 0..3 {
                s += b.weights[i] * e[3 * d + k] * ql[3 * i + k];
            }
        }
    }
    s
}

#[test]
fn adjoint_dot_product_test() {
    let mesh = cube8();
    let eps = CoefficientField::from_fn(&mesh, |p| 1.0 + 3.0 * p[0] * p[1]);
    let disc = Discretization::new(&mesh);
    let op = WaveOperator::new(&disc, &eps, 1.0).unwrap();
    let time = TimeGrid::new(2.0, 0.025, 0.5).unwrap();
    let n = time.n_steps;
    let nb = disc.boundary().len();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..10 {
        let mut p = random_series(&mut rng, nb, n + 1);
        let mut q = random_series(&mut rng, nb, n + 1);
        // p acts on steps 1..N-1, q on levels 2..N
        p.level_mut(0).fill(0.0);
        p.level_mut(n).fill(0.0);
        q.level_mut(0).fill(0.0);
        q.level_mut(1).fill(0.0);
        let e = run_state(&op, &time, &p).unwrap();
        let lam = run_adjoint(&op, &time, &q).unwrap();
        let lhs = boundary_pairing(&disc, &e, &q, 2..n + 1);
        let rhs = boundary_pairing(&disc, &lam, &p, 1..n);
        let rel = (lhs - rhs).abs() / lhs.abs().max(rhs.abs());
        assert!(rel <= 1e-10, "lhs {lhs} rhs {rhs} rel {rel}");
    }
}

#[test]
fn adjoint_is_the_time_reversed_forward_solve() {
    let mesh = cube8();
    let eps = CoefficientField::constant(&mesh, 1.0);
    let disc = Discretization::new(&mesh);
    let op = WaveOperator::new(&disc, &eps, 1.0).unwrap();
    let time = TimeGrid::new(1.0, 0.025, 0.5).unwrap();
    let n = time.n_steps;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p = random_series(&mut rng, disc.boundary().len(), n + 1);
    let mut q = NodeSeries::zeros(p.n_nodes, n + 1);
    for j in 1..=n {
        q.level_mut(j).copy_from_slice(p.level(n + 1 - j));
    }
    let e = run_state(&op, &time, &p).unwrap();
    let lam = run_adjoint(&op, &time, &q).unwrap();
    for k in 1..=n {
        let a = e.level(k);
        let b = lam.level(n + 1 - k);
        let err = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(err <= 1e-12 * (1.0 + e.max_abs()), "level {k}: {err}");
    }
}

#[test]
fn adjoint_vanishes_near_the_final_time() {
    let mesh = cube8();
    let eps = CoefficientField::constant(&mesh, 2.0);
    let cfg = ForwardConfig::new(1.0, TimeGrid::new(1.0, 0.025, 0.5).unwrap()).unwrap();
    let cutoff = CutoffZdelta::default_for(1.0);
    let disc = Discretization::new(&mesh);
    let n = cfg.time.n_steps;
    // residual supported only where z_δ vanishes is annihilated
    let mut g = BoundaryRecord::zeros(&disc, cfg.time.dt, n + 1);
    for lvl in 0..=n {
        if cfg.time.time(lvl) > 1.0 - 0.05 + 1e-12 {
            g.dirichlet.level_mut(lvl).fill(1.0);
        }
    }
    let state = WaveHistory::zeros(&disc, cfg.time.dt, n + 1);
    let src = AdjointSource::from_state(&disc, &state, &g, &cutoff, &cfg.time).unwrap();
    assert!(src.residual.data.iter().all(|&v| v == 0.0));
    let lam = solve_adjoint(&mesh, &eps, &cfg, &src).unwrap();
    assert!(lam.data.iter().all(|&v| v == 0.0));

    // a generic residual still leaves λ ≡ 0 on (T − δ/2, T]
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for v in g.dirichlet.data.iter_mut() {
        *v = rng.gen_range(-1.0..1.0);
    }
    let src = AdjointSource::from_state(&disc, &state, &g, &cutoff, &cfg.time).unwrap();
    let lam = solve_adjoint(&mesh, &eps, &cfg, &src).unwrap();
    assert!(lam.max_abs() > 0.0);
    for lvl in 0..=n {
        if cfg.time.time(lvl) > 1.0 - 0.05 {
            assert!(lam.level(lvl).iter().all(|&v| v == 0.0), "level {lvl}");
        }
    }
}

#[test]
fn adjoint_is_linear_in_the_residual() {
    let mesh = cube8();
    let eps = CoefficientField::from_fn(&mesh, |p| 1.0 + p[2]);
    let disc = Discretization::new(&mesh);
    let op = WaveOperator::new(&disc, &eps, 1.0).unwrap();
    let time = TimeGrid::new(1.0, 0.025, 0.5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let nb = disc.boundary().len();
    let a = random_series(&mut rng, nb, time.n_levels());
    let b = random_series(&mut rng, nb, time.n_levels());
    let mut ab = a.clone();
    ab.scaled_add(-2.5, &b);
    let la = run_adjoint(&op, &time, &a).unwrap();
    let lb = run_adjoint(&op, &time, &b).unwrap();
    let lab = run_adjoint(&op, &time, &ab).unwrap();
    let combo: Vec<f64> = la.data.iter().zip(&lb.data).map(|(x, y)| x - 2.5 * y).collect();
    assert!(rel_l2(&lab.data, &combo) < 1e-12);
}

#[test]
fn gradient_matches_finite_differences_on_a_random_twin() {
    let spec = spec6();
    let mesh = mesh(&spec, 0.04);
    assert_eq!(mesh.n_cells(), 216);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let draws: Vec<f64> = (0..mesh.n_cells()).map(|_| rng.gen()).collect();
    let mut eps = CoefficientField::constant(&mesh, 1.0);
    let mut glob = CoefficientField::constant(&mesh, 1.0);
    for c in (0..mesh.n_cells()).filter(|&c| mesh.in_omega(c)) {
        eps.values[c] = 1.0 + 2.0 * draws[c];
        glob.values[c] = 1.5;
    }
    let problem = twin_problem(&mesh, 0.01, glob);
    let ev = problem.evaluate(&eps).unwrap();
    let g = &ev.gradient;
    let gmax = g.max_abs();
    assert!(gmax > 0.0);
    let h = 1e-3;
    let mut checked = 0;
    for c in 0..mesh.n_cells() {
        if !mesh.in_omega(c) {
            assert_eq!(g.values[c], 0.0);
            continue;
        }
        if g.values[c].abs() < 0.1 * gmax {
            continue;
        }
        let mut plus = eps.clone();
        let mut minus = eps.clone();
        plus.values[c] += h;
        minus.values[c] -= h;
        let fd = (problem.misfit(&plus).unwrap() - problem.misfit(&minus).unwrap()) / (2.0 * h);
        let analytic = g.values[c] * mesh.cell_volume(c);
        let rel = (fd - analytic).abs() / analytic.abs();
        assert!(rel <= 0.05, "cell {c}: fd {fd} analytic {analytic}");
        checked += 1;
    }
    assert!(checked > 0);
}

#[test]
fn directional_derivative_matches_over_a_range_of_steps() {
    let spec = spec6();
    let mesh = mesh(&spec, 0.04);
    let glob = CoefficientField::constant(&mesh, 1.0);
    let problem = twin_problem(&mesh, 0.01, glob);
    let eps = CoefficientField::from_fn(&mesh, |p| 1.5 + 10.0 * p[0]);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let dir: Vec<f64> =
        (0..mesh.n_cells()).map(|c| if mesh.in_omega(c) { rng.gen_range(-1.0..1.0) } else { 0.0 }).collect();
    let ev = problem.evaluate(&eps).unwrap();
    let vol: Vec<f64> = (0..mesh.n_cells()).map(|c| mesh.cell_volume(c)).collect();
    let analytic: f64 = (0..mesh.n_cells()).map(|c| ev.gradient.values[c] * vol[c] * dir[c]).sum();
    for h in [1e-4, 1e-3, 1e-2] {
        let shift = |sgn: f64| CoefficientField {
            values: eps.values.iter().zip(&dir).map(|(&e, &d)| e + sgn * h * d).collect(),
            mesh_id: eps.mesh_id,
        };
        let fd = (problem.misfit(&shift(1.0)).unwrap() - problem.misfit(&shift(-1.0)).unwrap()) / (2.0 * h);
        assert!((fd - analytic).abs() <= 0.05 * analytic.abs(), "h={h}: fd {fd} analytic {analytic}");
    }
}

#[test]
fn doubling_gamma_doubles_only_the_regularization_limb() {
    let spec = spec6();
    let mesh = mesh(&spec, 0.04);
    let glob = CoefficientField::constant(&mesh, 1.0);
    let eps = CoefficientField::from_fn(&mesh, |p| 2.0 + 5.0 * p[1]);
    let p1 = twin_problem(&mesh, 0.01, glob.clone());
    let p2 = twin_problem(&mesh, 0.02, glob);
    let state = p1.state(&eps).unwrap();
    let lam = p1.adjoint(&eps, &state).unwrap();
    let t = &p1.config.time;
    let a = assemble_gradient_limbs(&p1.disc, &state, &lam, &eps, &p1.tik, 1.0, t).unwrap();
    let b = assemble_gradient_limbs(&p2.disc, &state, &lam, &eps, &p2.tik, 1.0, t).unwrap();
    for c in 0..mesh.n_cells() {
        assert_eq!(b.regularization[c], 2.0 * a.regularization[c]);
        assert_eq!(b.time_derivative[c], a.time_derivative[c]);
        assert_eq!(b.divergence[c], a.divergence[c]);
    }
}

#[test]
fn consistent_data_is_a_fixed_point() {
    let spec = spec6();
    let mesh = mesh(&spec, 0.04);
    let glob = box_inclusion(&mesh, [-0.08, -0.08, -0.12], [0.0, 0.04, 0.0], 2.5);
    let cfg = config(0.6, 0.003);
    let data = solve_forward_g(&spec, &mesh, &glob, &cfg, &waveform(), false).unwrap().record;
    let tik = TikhonovConfig::new(0.01, glob.clone(), &mesh).unwrap();
    let problem = MeshProblem::new(&mesh, cfg, CutoffZdelta::default_for(0.6), tik, data.clone(), data).unwrap();
    let ev = problem.evaluate(&glob).unwrap();
    assert!(ev.misfit < 1e-20, "{}", ev.misfit);
    assert!(ev.gradient.norm_l2 <= 1e-8, "{}", ev.gradient.norm_l2);
}
