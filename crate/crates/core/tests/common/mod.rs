#![allow(dead_code)]

use wavecip::geometry::{build_base_mesh, CoefficientField, DomainSpec, Mesh, TimeGrid};
use wavecip::adjoint::CutoffZdelta;
use wavecip::gradient::{MeshProblem, TikhonovConfig};
use wavecip::wave::{solve_forward_g, ForwardConfig, SourceWaveform};

pub const OMEGA: f64 = 30.0;

/// Laterally narrow column; a normally incident plane wave is exact in it.
pub fn column_spec() -> DomainSpec<f64> {
    DomainSpec::from_half_widths(0.08, 0.08, 0.16, 0.12, 0.04, 0.04, 0.1, 0.04).unwrap()
}

/// 12 x 12 x 5 cells of size 0.04 below Γ, two source layers above.
pub fn small_spec() -> DomainSpec<f64> {
    DomainSpec::from_half_widths(0.24, 0.24, 0.16, 0.12, 0.16, 0.16, 0.12, 0.04).unwrap()
}

pub fn mesh(spec: &DomainSpec<f64>, h: f64) -> Mesh<f64> {
    build_base_mesh(spec, h).unwrap()
}

pub fn config(t_final: f64, dt: f64) -> ForwardConfig<f64> {
    let wf = SourceWaveform::new(OMEGA);
    ForwardConfig::new(1.0, TimeGrid::new(t_final, dt, wf.t1).unwrap()).unwrap()
}

pub fn waveform() -> SourceWaveform<f64> {
    SourceWaveform::new(OMEGA)
}

/// `ε = value` on cells whose centre lies in the box, 1 elsewhere.
pub fn box_inclusion(mesh: &Mesh<f64>, lo: [f64; 3], hi: [f64; 3], value: f64) -> CoefficientField<f64> {
    CoefficientField::from_fn(mesh, |p| {
        if (0..3).all(|d| p[d] > lo[d] && p[d] < hi[d]) {
            value
        } else {
            1.0
        }
    })
}

pub fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den.max(f64::MIN_POSITIVE)).sqrt()
}

/// 6 x 6 x 6 cells of size 0.04, Ω covering the inner 4 x 4 x 5 block.
pub fn spec6() -> DomainSpec<f64> {
    DomainSpec::from_half_widths(0.12, 0.12, 0.2, 0.12, 0.08, 0.08, 0.16, 0.04).unwrap()
}

pub fn twin_problem(mesh: &Mesh<f64>, gamma: f64, glob: CoefficientField<f64>) -> MeshProblem<'_, f64> {
    let spec = spec6();
    let cfg = config(0.6, 0.003);
    let truth = box_inclusion(mesh, [-0.04, -0.04, -0.12], [0.04, 0.04, -0.04], 4.0);
    let data = solve_forward_g(&spec, mesh, &truth, &cfg, &waveform(), false).unwrap().record;
    let tik = TikhonovConfig::new(gamma, glob, mesh).unwrap();
    MeshProblem::new(mesh, cfg, CutoffZdelta::default_for(0.6), tik, data.clone(), data).unwrap()
}

