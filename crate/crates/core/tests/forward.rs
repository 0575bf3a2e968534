mod common;

use common::*;
use wavecip::geometry::{CellKey, CoefficientField, TimeGrid};
use wavecip::wave::*;
use wavecip::Error;

fn plane_wave_error(h: f64, dt: f64) -> f64 {
    let spec = column_spec();
    let mesh = mesh(&spec, h);
    let eps = CoefficientField::constant(&mesh, 1.0);
    let cfg = config(1.2, dt);
    let wf = waveform();
    let run = solve_forward_g(&spec, &mesh, &eps, &cfg, &wf, true).unwrap();
    let hist = run.history.unwrap();
    let disc = Discretization::new(&mesh);
    let (mut num, mut den) = (0.0, 0.0);
    for n in 0..cfg.time.n_levels() {
        let t = cfg.time.time(n);
        for d in 0..disc.n_dof() {
            let z = mesh.node_pos(disc.node_of_dof(d))[2];
            let exact = wf.eval(t - (spec.source_z - z));
            num += (hist.level(n)[3 * d + 1] - exact).powi(2);
            den += exact * exact;
        }
    }
    (num / den).sqrt()
}

#[test]
fn plane_wave_converges_under_joint_halving() {
    let coarse = plane_wave_error(0.04, 0.003);
    let fine = plane_wave_error(0.02, 0.0015);
    assert!(coarse / fine >= 1.8, "ratio {}", coarse / fine);
}

#[test]
fn field_vanishes_ahead_of_the_front() {
    let spec = column_spec();
    let mesh = mesh(&spec, 0.02);
    let eps = CoefficientField::constant(&mesh, 1.0);
    let cfg = config(0.3, 0.003);
    let run = solve_forward_g(&spec, &mesh, &eps, &cfg, &waveform(), true).unwrap();
    let hist = run.history.unwrap();
    let disc = Discretization::new(&mesh);
    let h = 0.02;
    for n in 0..cfg.time.n_levels() {
        let t = cfg.time.time(n);
        for d in 0..disc.n_dof() {
            let z = mesh.node_pos(disc.node_of_dof(d))[2];
            let v = hist.level(n)[3 * d + 1];
            let ahead = spec.source_z - z;
            // the stencil reaches one cell further per step
            if ahead > n as f64 * h + 1e-9 {
                assert_eq!(v, 0.0, "t={t} z={z}");
            }
            // lattice dispersion leaves a super-exponentially small precursor
            if ahead > t + 5.0 * h {
                assert!(v.abs() < 1e-4, "t={t} z={z} v={v}");
            }
        }
    }
}

#[test]
fn zero_neumann_data_gives_zero_state() {
    let spec = small_spec();
    let mesh = mesh(&spec, 0.04);
    let eps = CoefficientField::constant(&mesh, 2.0);
    let cfg = config(0.3, 0.003);
    let disc = Discretization::new(&mesh);
    let rec = BoundaryRecord::zeros(&disc, 0.003, cfg.time.n_levels());
    let hist = solve_state_gb(&mesh, &eps, &cfg, &rec).unwrap();
    assert!(hist.data.iter().all(|&v| v == 0.0));
}

#[test]
fn state_problem_reproduces_the_full_run() {
    let spec = small_spec();
    let base = mesh(&spec, 0.04);
    // refine two cells, one of them touching Γ, to exercise hanging nodes
    let marks = [[-0.04, -0.04, -0.04], [0.0, 0.0, 0.0]]
        .iter()
        .map(|&p| base.cell(base.locate(p).unwrap()))
        .collect::<std::collections::BTreeSet<CellKey>>();
    let mesh = base.refine_cells(&marks).unwrap();
    assert!(mesh.n_cells() > base.n_cells());
    let eps = box_inclusion(&mesh, [-0.08, -0.08, -0.08], [0.04, 0.04, 0.02], 4.0);
    let cfg = config(0.6, 0.003);
    let run = solve_forward_g(&spec, &mesh, &eps, &cfg, &waveform(), true).unwrap();
    let full = run.history.unwrap();
    let state = solve_state_gb(&mesh, &eps, &cfg, &run.record).unwrap();
    let err = rel_l2(&state.data, &full.data);
    assert!(err < 1e-6, "relative error {err}");
    assert!(full.max_abs() > 0.1);
}

#[test]
fn state_problem_is_linear_in_the_data() {
    let spec = small_spec();
    let mesh = mesh(&spec, 0.04);
    let eps = box_inclusion(&mesh, [-0.08, -0.08, -0.08], [0.08, 0.08, 0.0], 3.0);
    let cfg = config(0.3, 0.003);
    let disc = Discretization::new(&mesh);
    let n = cfg.time.n_levels();
    let mut p1 = BoundaryRecord::zeros(&disc, 0.003, n);
    let mut p2 = p1.clone();
    for (i, v) in p1.neumann.data.iter_mut().enumerate() {
        *v = ((i * 31 % 17) as f64 - 8.0) / 8.0;
    }
    for (i, v) in p2.neumann.data.iter_mut().enumerate() {
        *v = ((i * 7 % 23) as f64).sin();
    }
    let mut sum = p1.clone();
    sum.neumann.scaled_add(1.0, &p2.neumann);
    let a = solve_state_gb(&mesh, &eps, &cfg, &p1).unwrap();
    let b = solve_state_gb(&mesh, &eps, &cfg, &p2).unwrap();
    let c = solve_state_gb(&mesh, &eps, &cfg, &sum).unwrap();
    let ab: Vec<f64> = a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect();
    assert!(rel_l2(&c.data, &ab) < 1e-12);
}

#[test]
fn energy_is_conserved_in_a_closed_box() {
    let spec = small_spec();
    let mesh = mesh(&spec, 0.04);
    let eps = box_inclusion(&mesh, [-0.08, -0.08, -0.08], [0.08, 0.08, 0.0], 4.0);
    let disc = Discretization::new(&mesh);
    let op = WaveOperator::new(&disc, &eps, 1.0).unwrap();
    let dt = cfl_max_dt(&mesh, &eps, 1.0);
    let b = disc.boundary();
    let hist = leapfrog_history(&op, dt, 600, |n, buf| {
        if n < 30 {
            let q: Vec<f64> = (0..3 * b.len()).map(|i| ((i + n) as f64 * 0.37).sin()).collect();
            op.add_boundary_load(&q, buf);
        }
    })
    .unwrap();
    let energy = |n: usize| discrete_energy(&op, hist.level(n - 1), hist.level(n), dt);
    let e0 = energy(40);
    assert!(e0 > 0.0);
    for n in (100..600).step_by(100) {
        let growth = (energy(n) - e0) / e0;
        assert!(growth.abs() < 1e-10, "step {n}: {growth}");
    }
}

#[test]
fn cfl_bound_is_stable_and_scales_with_h() {
    let spec = small_spec();
    let base = mesh(&spec, 0.04);
    let one = CoefficientField::constant(&base, 1.0);
    let dt = cfl_max_dt(&base, &one, 1.0);
    assert!((dt - 0.9 * 0.04 / 3f64.sqrt()).abs() < 1e-12);
    assert!(0.003 <= dt);
    let key = base.cell(base.locate([0.0, 0.0, -0.02]).unwrap());
    let fine = base.refine_cells(&[key].into()).unwrap();
    let one_f = CoefficientField::constant(&fine, 1.0);
    assert!((cfl_max_dt(&fine, &one_f, 1.0) - dt / 2.0).abs() < 1e-12);

    // the bound lies below the exact stability limit 2/sqrt(λ_max)
    for (mesh, eps) in [
        (&base, CoefficientField::constant(&base, 1.0)),
        (&base, box_inclusion(&base, [-1.0; 3], [1.0; 3], 4.0)),
        (&fine, box_inclusion(&fine, [-1.0; 3], [1.0; 3], 9.0)),
    ] {
        let disc = Discretization::new(mesh);
        let op = WaveOperator::new(&disc, &eps, 1.0).unwrap();
        let limit = 2.0 / op.max_eigenvalue(400).sqrt();
        assert!(cfl_max_dt(mesh, &eps, 1.0) < limit);
    }
}

#[test]
fn stability_is_governed_by_the_longitudinal_speed() {
    // with s = 1 the divergence mode travels at unit speed whatever ε is,
    // so a step scaled by sqrt(min ε) would be unstable for ε ≡ 4
    let spec = small_spec();
    let mesh = mesh(&spec, 0.04);
    let eps = box_inclusion(&mesh, [-1.0; 3], [1.0; 3], 4.0);
    let disc = Discretization::new(&mesh);
    let op = WaveOperator::new(&disc, &eps, 1.0).unwrap();
    let limit = 2.0 / op.max_eigenvalue(400).sqrt();
    let scaled = 0.9 * 0.04 * 2.0 / 3f64.sqrt();
    assert!(scaled > limit * 0.99 || limit < 0.05, "limit {limit}");
    let cfg = ForwardConfig::new(1.0, TimeGrid::new(1.2, 0.04, 0.2).unwrap()).unwrap();
    let rec = BoundaryRecord::zeros(&disc, 0.04, cfg.time.n_levels());
    assert!(matches!(
        solve_state_gb(&mesh, &eps, &cfg, &rec),
        Err(Error::Stability { .. })
    ));
}

#[test]
fn inclusion_perturbs_gamma_only_after_two_way_travel() {
    let spec = small_spec();
    let mesh = mesh(&spec, 0.04);
    let top = -0.04;
    let eps = box_inclusion(&mesh, [-0.08, -0.08, -0.12], [0.08, 0.08, top], 4.0);
    let one = CoefficientField::constant(&mesh, 1.0);
    let cfg = config(0.81, 0.003);
    let wf = waveform();
    let a = solve_forward_g(&spec, &mesh, &eps, &cfg, &wf, false).unwrap().record;
    let b = solve_forward_g(&spec, &mesh, &one, &cfg, &wf, false).unwrap().record;
    // Γ at z = 0.04, inclusion top face at z = top; incident wave reaches Γ at 0.08
    let arrival = (spec.source_z - spec.gamma_z) + 2.0 * (spec.gamma_z - top);
    let mut early = 0.0f64;
    let mut late = 0.0f64;
    for n in 0..cfg.time.n_levels() {
        let t = cfg.time.time(n);
        for i in 0..a.n_nodes() {
            if a.sides[i] & (1 << 5) == 0 {
                continue;
            }
            let d = (a.dirichlet.get(n, i, 1) - b.dirichlet.get(n, i, 1)).abs();
            if t < arrival - 0.1 {
                early = early.max(d);
            } else {
                late = late.max(d);
            }
        }
    }
    assert!(late > 1e-2, "late {late}");
    // the lattice precursor of the scattered wave is tiny but not zero
    assert!(early < 2e-3 * late, "early {early} late {late}");
}

#[test]
fn waveform_switches_off_continuously() {
    let wf = waveform();
    assert!(wf.eval(wf.t1).abs() < 1e-12);
    assert_eq!(wf.eval(wf.t1 + 1e-6), 0.0);
    assert!((wf.eval(std::f64::consts::PI / 60.0) - 1.0).abs() < 1e-12);
}
