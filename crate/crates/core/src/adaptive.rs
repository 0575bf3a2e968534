//! Refine-and-restart outer loop.
//!
//! On every mesh the coefficient is reconstructed from the prior `ε_glob`,
//! cells where the final gradient is within `β₁` of its maximum are split,
//! and the loop ends once the gradient norm no longer drops from one mesh
//! to the next.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use log::info;
use serde::{Deserialize, Serialize};

use crate::adjoint::CutoffZdelta;
use crate::error::{Error, Result};
use crate::geometry::{interpolate_coefficient, CellKey, CoefficientField, Mesh, TimeGrid};
use crate::gradient::{GradientField, MeshProblem, TikhonovConfig};
use crate::optimize::{minimize_on_mesh, CgConfig, CgStop, IterationRecord};
use crate::scalar::Real;
use crate::wave::{cfl_max_dt, resample_record, transfer_record, BoundaryRecord, Discretization, ForwardConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveConfig<T> {
    /// Marking fraction `β₁`.
    pub beta1: T,
    pub max_refinements: usize,
    pub cg: CgConfig<T>,
}

impl<T: Real> Default for AdaptiveConfig<T> {
    fn default() -> Self {
        Self { beta1: T::lit(0.7), max_refinements: 5, cg: CgConfig::default() }
    }
}

impl<T: Real> AdaptiveConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta1 > T::zero() && self.beta1 < T::one()) {
            return Err(Error::Config(format!("β₁ = {} must lie in (0, 1)", self.beta1)));
        }
        self.cg.validate()
    }
}

/// Cells of `Ω` with `|L'| ≥ β₁ max_Ω |L'|`, ascending.
pub fn mark_cells<T: Real>(grad: &GradientField<T>, mesh: &Mesh<T>, beta1: T) -> Result<Vec<usize>> {
    if grad.values.len() != mesh.n_cells() || grad.mesh_id != mesh.id() {
        return Err(Error::Shape("gradient does not belong to the mesh".into()));
    }
    let max = (0..mesh.n_cells())
        .filter(|&c| mesh.in_omega(c))
        .fold(T::zero(), |m, c| m.max(grad.values[c].abs()));
    if max == T::zero() {
        return Err(Error::ConvergedFlat);
    }
    let threshold = beta1 * max;
    Ok((0..mesh.n_cells()).filter(|&c| mesh.in_omega(c) && grad.values[c].abs() >= threshold).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AdaptiveStop {
    /// The gradient tolerance was met on the last mesh.
    Step3Tolerance,
    /// The gradient norm did not drop after the last refinement.
    Step6,
    ConvergedFlat,
    MaxRefinements,
}

/// Result of the inner minimization on one mesh.
#[derive(Debug, Clone)]
pub struct MeshSolution<T> {
    pub eps: CoefficientField<T>,
    pub grad: GradientField<T>,
    pub misfit: T,
    pub iterations: usize,
    pub cg_stop: CgStop,
    pub history: Vec<IterationRecord<T>>,
    pub time: TimeGrid<T>,
}

/// One row of the run summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshEntry {
    pub refinement: usize,
    pub mesh_id: u64,
    pub n_cells: usize,
    pub iterations: usize,
    pub grad_norm: f64,
    pub misfit: f64,
    pub eps_max: f64,
    pub dt: f64,
    pub cg_stop: CgStop,
    /// Cells marked for the next refinement (0 on the last mesh).
    pub marked: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveRunRecord {
    pub meshes: Vec<MeshEntry>,
    pub stop: Option<AdaptiveStop>,
}

impl AdaptiveRunRecord {
    /// One JSON object per mesh, then the stop reason.
    pub fn json_lines(&self) -> String {
        let mut out = String::new();
        for e in &self.meshes {
            out.push_str(&serde_json::to_string(e).expect("plain record"));
            out.push('\n');
        }
        out.push_str(&serde_json::json!({ "stop": self.stop }).to_string());
        out.push('\n');
        out
    }

    /// Rows `coarse, 1× refined, …` with cell count, iterations, `‖L'‖`, `F` and `max ε`.
    pub fn summary_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<12} {:>8} {:>4} {:>12} {:>12} {:>8}", "mesh", "cells", "M", "|L'|", "F", "max eps");
        for e in &self.meshes {
            let name = if e.refinement == 0 { "coarse".to_string() } else { format!("{}x refined", e.refinement) };
            let _ = writeln!(
                out,
                "{:<12} {:>8} {:>4} {:>12.4e} {:>12.4e} {:>8.3}",
                name, e.n_cells, e.iterations, e.grad_norm, e.misfit, e.eps_max
            );
        }
        let _ = writeln!(out, "stop: {:?}", self.stop);
        out
    }
}

/// Meshes and per-mesh solutions of a finished run; the last entry is the result.
#[derive(Debug, Clone)]
pub struct AdaptiveOutcome<T> {
    pub meshes: Vec<Mesh<T>>,
    pub solutions: Vec<MeshSolution<T>>,
    pub record: AdaptiveRunRecord,
}

impl<T: Real> AdaptiveOutcome<T> {
    pub fn final_mesh(&self) -> &Mesh<T> {
        self.meshes.last().expect("at least one mesh")
    }

    pub fn final_solution(&self) -> &MeshSolution<T> {
        self.solutions.last().expect("at least one mesh")
    }

    pub fn stop(&self) -> AdaptiveStop {
        self.record.stop.expect("finished run")
    }
}

/// The outer loop with the per-mesh solve supplied by the caller.
pub fn drive<T: Real>(
    base: Mesh<T>,
    cfg: &AdaptiveConfig<T>,
    mut solve: impl FnMut(usize, &Mesh<T>) -> Result<MeshSolution<T>>,
) -> Result<AdaptiveOutcome<T>> {
    cfg.validate()?;
    let mut out = AdaptiveOutcome {
        meshes: vec![base],
        solutions: Vec::new(),
        record: AdaptiveRunRecord { meshes: Vec::new(), stop: None },
    };
    loop {
        let k = out.solutions.len();
        let mesh = &out.meshes[k];
        let sol = solve(k, mesh)?;
        out.record.meshes.push(MeshEntry {
            refinement: k,
            mesh_id: mesh.id(),
            n_cells: mesh.n_cells(),
            iterations: sol.iterations,
            grad_norm: sol.grad.norm_l2.to_f64_lossy(),
            misfit: sol.misfit.to_f64_lossy(),
            eps_max: sol.eps.max_in_omega(mesh).to_f64_lossy(),
            dt: sol.time.dt.to_f64_lossy(),
            cg_stop: sol.cg_stop,
            marked: 0,
        });
        info!("mesh {k}: {} cells, M = {}, |L'| = {:e}", mesh.n_cells(), sol.iterations, sol.grad.norm_l2);
        let prev_norm = out.solutions.last().map(|s| s.grad.norm_l2);
        out.solutions.push(sol);
        let sol = out.solutions.last().unwrap();

        let stop = if prev_norm.is_some_and(|p| sol.grad.norm_l2 >= p) {
            Some(AdaptiveStop::Step6)
        } else if sol.cg_stop == CgStop::GradientTolerance {
            Some(AdaptiveStop::Step3Tolerance)
        } else if k >= cfg.max_refinements {
            Some(AdaptiveStop::MaxRefinements)
        } else {
            None
        };
        if let Some(stop) = stop {
            out.record.stop = Some(stop);
            break;
        }
        let marked = match mark_cells(&sol.grad, mesh, cfg.beta1) {
            Ok(m) => m,
            Err(Error::ConvergedFlat) => {
                out.record.stop = Some(AdaptiveStop::ConvergedFlat);
                break;
            }
            Err(e) => return Err(e),
        };
        out.record.meshes[k].marked = marked.len();
        let keys: BTreeSet<CellKey> = marked.iter().map(|&c| mesh.cell(c)).collect();
        let refined = mesh.refine_cells(&keys)?;
        if refined.n_cells() <= mesh.n_cells() {
            return Err(Error::Refinement("refinement did not add cells".into()));
        }
        out.meshes.push(refined);
    }
    info!("adaptive run stopped: {:?}", out.record.stop);
    Ok(out)
}

/// Inputs of a full reconstruction, all given on the base mesh.
#[derive(Debug, Clone)]
pub struct AdaptiveProblem<'a, T> {
    pub base_mesh: &'a Mesh<T>,
    pub eps_glob: CoefficientField<T>,
    /// Dirichlet trace `g̃` and Neumann data `p`.
    pub data: BoundaryRecord<T>,
    pub config: ForwardConfig<T>,
    pub cutoff: CutoffZdelta<T>,
    pub gamma: T,
}

/// Largest `τ / 2^k` that satisfies the CFL bound on `mesh`.
pub fn time_grid_for<T: Real>(mesh: &Mesh<T>, base: &TimeGrid<T>, s: T) -> TimeGrid<T> {
    let dt_max = cfl_max_dt(mesh, &CoefficientField::constant(mesh, T::one()), s);
    let mut time = *base;
    while time.dt > dt_max {
        time = time.halved();
    }
    time
}

/// Moves the base-mesh data onto `mesh` and `time`.
pub fn data_for_mesh<T: Real>(
    problem: &AdaptiveProblem<'_, T>,
    base_disc: &Discretization<T>,
    mesh: &Mesh<T>,
    disc: &Discretization<T>,
    time: &TimeGrid<T>,
) -> Result<BoundaryRecord<T>> {
    let data = if time.approx_eq(&problem.config.time) {
        problem.data.clone()
    } else {
        resample_record(&problem.data, &problem.config.time, time)?
    };
    if mesh.id() == problem.base_mesh.id() {
        Ok(data)
    } else {
        transfer_record(&data, problem.base_mesh, base_disc, mesh, disc)
    }
}

/// Full adaptive reconstruction.
pub fn run_adaptive<T: Real>(problem: &AdaptiveProblem<'_, T>, cfg: &AdaptiveConfig<T>) -> Result<AdaptiveOutcome<T>> {
    let base = problem.base_mesh;
    problem.eps_glob.validate(base)?;
    let base_disc = Discretization::new(base);
    problem.data.check(&base_disc, problem.config.time.n_levels())?;
    drive(base.clone(), cfg, |k, mesh| {
        let glob = interpolate_coefficient(&problem.eps_glob, base, mesh)?;
        let time = time_grid_for(mesh, &problem.config.time, problem.config.s);
        if time.dt < problem.config.time.dt {
            info!("mesh {k}: time step reduced to {:e}", time.dt);
        }
        let disc = Discretization::new(mesh);
        let data = data_for_mesh(problem, &base_disc, mesh, &disc, &time)?;
        let config = ForwardConfig::new(problem.config.s, time)?;
        let tik = TikhonovConfig::new(problem.gamma, glob.clone(), mesh)?;
        let mp = MeshProblem::new(mesh, config, problem.cutoff, tik, data.clone(), data)?;
        let out = minimize_on_mesh(&mp, &glob, &cfg.cg)?;
        if out.violations > 0 {
            return Err(Error::Domain(format!("{} bound violations on mesh {k}", out.violations)));
        }
        Ok(MeshSolution {
            eps: out.eps,
            grad: out.grad,
            misfit: out.misfit,
            iterations: out.iterations,
            cg_stop: out.stop,
            history: out.history,
            time,
        })
    })
}
