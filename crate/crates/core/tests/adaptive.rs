mod common;

use std::collections::BTreeSet;

use common::*;
use wavecip::adaptive::*;
use wavecip::adjoint::CutoffZdelta;
use wavecip::geometry::{CoefficientField, Mesh};
use wavecip::gradient::{GradientField, MeshProblem, TikhonovConfig};
use wavecip::optimize::{CgConfig, CgStop};
use wavecip::wave::*;

fn refine_top_layer(m: &Mesh<f64>) -> Mesh<f64> {
    // Ω reaches the upper face, so splitting its top layer changes boundary faces
    let top = m.bounds().hi[2];
    let marked: BTreeSet<_> = (0..m.n_cells())
        .filter(|&c| m.in_omega(c) && m.cell_center(c)[2] > top - 0.04 && m.cell_center(c)[0] < 0.0)
        .map(|c| m.cell(c))
        .collect();
    m.refine_cells(&marked).unwrap()
}

#[test]
fn record_transfer_is_exact_for_bilinear_fields() {
    let m0 = mesh(&spec6(), 0.04);
    let m1 = refine_top_layer(&m0);
    assert!(m1.n_cells() > m0.n_cells());
    let (d0, d1) = (Discretization::new(&m0), Discretization::new(&m1));
    let f = |p: [f64; 3], n: usize, k: usize| (1.0 + n as f64) * (p[0] + 2.0 * p[1] - p[2] + k as f64 + 3.0 * p[1] * p[2]);
    let mut rec = BoundaryRecord::zeros(&d0, 0.1, 3);
    for n in 0..3 {
        for (i, p) in d0.boundary().positions.iter().enumerate() {
            for k in 0..3 {
                rec.dirichlet.set(n, i, k, f(*p, n, k));
                rec.neumann.set(n, i, k, -f(*p, n, k));
            }
        }
    }
    let out = transfer_record(&rec, &m0, &d0, &m1, &d1).unwrap();
    out.check(&d1, 3).unwrap();
    assert!(d1.boundary().len() > d0.boundary().len());
    for n in 0..3 {
        for (i, p) in d1.boundary().positions.iter().enumerate() {
            for k in 0..3 {
                assert!((out.dirichlet.get(n, i, k) - f(*p, n, k)).abs() < 1e-12);
                assert!((out.neumann.get(n, i, k) + f(*p, n, k)).abs() < 1e-12);
            }
        }
    }
    // identity transfer
    let same = transfer_record(&rec, &m0, &d0, &m0, &d0).unwrap();
    assert_eq!(same.dirichlet, rec.dirichlet);
}

#[test]
fn resampling_keeps_shared_levels() {
    let m0 = mesh(&spec6(), 0.04);
    let d0 = Discretization::new(&m0);
    let cfg = config(0.6, 0.003);
    let rec = solve_forward_g(&spec6(), &m0, &CoefficientField::constant(&m0, 1.0), &cfg, &waveform(), false)
        .unwrap()
        .record;
    let fine = cfg.time.halved();
    let out = resample_record(&rec, &cfg.time, &fine).unwrap();
    out.check(&d0, fine.n_levels()).unwrap();
    for n in 0..cfg.time.n_levels() {
        for (a, b) in out.dirichlet.level(2 * n).iter().zip(rec.dirichlet.level(n)) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }
    let mid = out.dirichlet.get(7, 0, 1);
    let expect = 0.5 * (rec.dirichlet.get(3, 0, 1) + rec.dirichlet.get(4, 0, 1));
    assert!((mid - expect).abs() < 1e-12);
}

#[test]
fn time_step_halves_until_stable() {
    let m0 = mesh(&spec6(), 0.04);
    let t = config(0.6, 0.06).time;
    let g = time_grid_for(&m0, &t, 1.0);
    let bound = cfl_max_dt(&m0, &CoefficientField::constant(&m0, 1.0), 1.0);
    assert!(g.dt <= bound && 2.0 * g.dt > bound);
    let ratio = (t.dt / g.dt).round() as usize;
    assert!(ratio.is_power_of_two() && ratio > 1);
    assert_eq!(g.n_steps, ratio * t.n_steps);
}

#[test]
fn consistent_data_stops_on_the_base_mesh() {
    let spec = spec6();
    let base = mesh(&spec, 0.04);
    let glob = box_inclusion(&base, [-0.08, -0.08, -0.12], [0.0, 0.04, 0.0], 2.0);
    let cfg = config(0.6, 0.003);
    let data = solve_forward_g(&spec, &base, &glob, &cfg, &waveform(), false).unwrap().record;
    let problem = AdaptiveProblem {
        base_mesh: &base,
        eps_glob: glob,
        data,
        config: cfg,
        cutoff: CutoffZdelta::default_for(0.6),
        gamma: 0.01,
    };
    let ad = AdaptiveConfig { cg: CgConfig { theta: 1e-8, ..CgConfig::default() }, ..AdaptiveConfig::default() };
    let out = run_adaptive(&problem, &ad).unwrap();
    assert_eq!(out.meshes.len(), 1);
    assert_eq!(out.stop(), AdaptiveStop::Step3Tolerance);
    assert_eq!(out.record.meshes[0].iterations, 0);
}

fn fake_solution(mesh: &Mesh<f64>, norm_scale: f64, stop: CgStop) -> MeshSolution<f64> {
    let disc = Discretization::new(mesh);
    let vals = (0..mesh.n_cells())
        .map(|c| if mesh.in_omega(c) { norm_scale * (1.0 + mesh.cell_center(c)[0]) } else { 0.0 })
        .collect();
    MeshSolution {
        eps: CoefficientField::constant(mesh, 1.0),
        grad: GradientField::new(&disc, vals),
        misfit: 1.0,
        iterations: 1,
        cg_stop: stop,
        history: vec![],
        time: config(0.6, 0.003).time,
    }
}

#[test]
fn growing_gradient_norm_stops_refinement() {
    let base = mesh(&spec6(), 0.04);
    let out = drive(base, &AdaptiveConfig::default(), |k, m| Ok(fake_solution(m, 1.0 + k as f64, CgStop::MaxIterations)))
        .unwrap();
    assert_eq!(out.meshes.len(), 2);
    assert_eq!(out.stop(), AdaptiveStop::Step6);
    assert!(out.record.meshes[1].n_cells > out.record.meshes[0].n_cells);
    assert!(out.record.meshes[0].marked > 0);
}

#[test]
fn refinement_cap_and_flat_gradient() {
    let base = mesh(&spec6(), 0.04);
    let cfg = AdaptiveConfig { max_refinements: 2, ..AdaptiveConfig::default() };
    let out = drive(base.clone(), &cfg, |k, m| Ok(fake_solution(m, 0.5f64.powi(k as i32), CgStop::LineSearchStall)))
        .unwrap();
    assert_eq!(out.meshes.len(), 3);
    assert_eq!(out.stop(), AdaptiveStop::MaxRefinements);
    let counts: Vec<usize> = out.record.meshes.iter().map(|e| e.n_cells).collect();
    assert!(counts.windows(2).all(|w| w[1] > w[0]), "{counts:?}");
    let lines = out.record.json_lines();
    assert_eq!(lines.lines().count(), 4);
    assert!(lines.lines().last().unwrap().contains("MaxRefinements"));
    assert!(out.record.summary_table().contains("2x refined"));

    let flat = drive(base, &cfg, |_, m| Ok(fake_solution(m, 0.0, CgStop::NormStabilized))).unwrap();
    assert_eq!(flat.stop(), AdaptiveStop::ConvergedFlat);
}

#[test]
fn refinement_concentrates_at_the_inclusion() {
    let spec = small_spec();
    let base = mesh(&spec, 0.04);
    let (lo, hi) = ([-0.04, -0.04, -0.08], [0.04, 0.04, 0.0]);
    let truth = box_inclusion(&base, lo, hi, 4.0);
    let cfg = config(0.6, 0.003);
    let data = solve_forward_g(&spec, &base, &truth, &cfg, &waveform(), false).unwrap().record;
    let problem = AdaptiveProblem {
        base_mesh: &base,
        eps_glob: CoefficientField::constant(&base, 1.0),
        data,
        config: cfg,
        cutoff: CutoffZdelta::default_for(0.6),
        gamma: 0.001,
    };
    let ad = AdaptiveConfig {
        max_refinements: 1,
        cg: CgConfig { max_iters: 4, ..CgConfig::default() },
        ..AdaptiveConfig::default()
    };
    let out = run_adaptive(&problem, &ad).unwrap();
    assert!(out.meshes.len() >= 2, "{}", out.record.summary_table());
    let (m0, sol0) = (&out.meshes[0], &out.solutions[0]);
    let marked = mark_cells(&sol0.grad, m0, 0.7).unwrap();
    let near = marked
        .iter()
        .filter(|&&c| {
            let p = m0.cell_center(c);
            (0..3).all(|d| p[d] > lo[d] - 0.04 - 1e-9 && p[d] < hi[d] + 0.04 + 1e-9)
        })
        .count();
    assert!(near as f64 >= 0.7 * marked.len() as f64, "{near} of {}", marked.len());

    // the recorded result reproduces its gradient norm
    let last = out.final_solution();
    let mesh = out.final_mesh();
    let disc = Discretization::new(mesh);
    let glob = wavecip::geometry::interpolate_coefficient(&problem.eps_glob, &base, mesh).unwrap();
    let data = data_for_mesh(&problem, &Discretization::new(&base), mesh, &disc, &last.time).unwrap();
    let tik = TikhonovConfig::new(problem.gamma, glob, mesh).unwrap();
    let cfg = ForwardConfig::new(1.0, last.time).unwrap();
    let mp = MeshProblem::new(mesh, cfg, problem.cutoff, tik, data.clone(), data).unwrap();
    let again = mp.evaluate(&last.eps).unwrap().gradient.norm_l2;
    assert!((again - last.grad.norm_l2).abs() <= 1e-12 * last.grad.norm_l2.max(1e-300));
}
