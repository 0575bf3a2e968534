//! Backward-in-time adjoint problem driven by boundary residuals.
//!
//! The adjoint operator carries `s ε ∇(∇·λ)` where the state carries
//! `s ∇(∇·(εE))`. With `ε` constant per cell and the divergence sampled at
//! the cell centre both weak forms reduce to `s ε_K (∇·u)(∇·v)|K|`, so the
//! adjoint reuses the state operator, stepped backward from `λ^N = λ^{N+1} = 0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CoefficientField, Mesh, TimeGrid};
use crate::scalar::Real;
use crate::wave::{
    check_cfl, leapfrog_history, BoundaryRecord, Discretization, ForwardConfig, NodeSeries,
    WaveHistory, WaveOperator,
};

/// Temporal cutoff `z_δ`: 1 up to `T − δ`, 0 after `T − δ/2`, smoothstep between.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffZdelta<T> {
    pub delta: T,
    pub t_final: T,
}

impl<T: Real> CutoffZdelta<T> {
    pub fn new(delta: T, t_final: T) -> Result<Self> {
        if !(delta > T::zero() && delta < t_final) {
            return Err(Error::Config(format!("cutoff width δ = {delta} must lie in (0, T)")));
        }
        Ok(Self { delta, t_final })
    }

    /// Default width `δ = 0.1 T`.
    pub fn default_for(t_final: T) -> Self {
        Self { delta: T::lit(0.1) * t_final, t_final }
    }

    /// Value without the domain check.
    #[inline]
    pub fn value(&self, t: T) -> T {
        let start = self.t_final - self.delta;
        if t <= start {
            return T::one();
        }
        let u = T::lit(2.0) * (t - start) / self.delta;
        if u >= T::one() {
            return T::zero();
        }
        T::one() - u * u * (T::lit(3.0) - T::lit(2.0) * u)
    }
}

/// Evaluates `z_δ(t)` for `t ∈ [0, T]`.
pub fn zdelta_eval<T: Real>(cutoff: &CutoffZdelta<T>, t: T) -> Result<T> {
    let slack = T::lit(1e-12) * cutoff.t_final;
    if !(t >= -slack && t <= cutoff.t_final + slack) {
        return Err(Error::Domain(format!("t = {t} outside [0, {}]", cutoff.t_final)));
    }
    Ok(cutoff.value(t))
}

/// Residual `z_δ(t)(g̃ − E)` on the boundary nodes of `G_b`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointSource<T> {
    pub mesh_id: u64,
    pub residual: NodeSeries<T>,
}

impl<T: Real> AdjointSource<T> {
    pub fn zeros(disc: &Discretization<T>, n_levels: usize) -> Self {
        Self { mesh_id: disc.mesh_id(), residual: NodeSeries::zeros(disc.boundary().len(), n_levels) }
    }

    /// Builds the residual from a state history and measured traces.
    pub fn from_state(
        disc: &Discretization<T>,
        state: &WaveHistory<T>,
        g_tilde: &BoundaryRecord<T>,
        cutoff: &CutoffZdelta<T>,
        time: &TimeGrid<T>,
    ) -> Result<Self> {
        let n_levels = time.n_levels();
        g_tilde.check(disc, n_levels)?;
        if state.mesh_id != disc.mesh_id() || state.n_levels != n_levels {
            return Err(Error::Shape("state history does not match the adjoint problem".into()));
        }
        let b = disc.boundary();
        let mut residual = NodeSeries::zeros(b.len(), n_levels);
        for n in 0..n_levels {
            let z = cutoff.value(time.time(n));
            if z == T::zero() {
                continue;
            }
            let e = state.level(n);
            let g = g_tilde.dirichlet.level(n);
            let r = residual.level_mut(n);
            for (i, &d) in b.dofs.iter().enumerate() {
                for k in 0..3 {
                    r[3 * i + k] = z * (g[3 * i + k] - e[3 * d + k]);
                }
            }
        }
        Ok(Self { mesh_id: disc.mesh_id(), residual })
    }
}

/// Adjoint solve for an already assembled operator.
///
/// Returns `λ^0 … λ^N`; level `j` is produced by the step that consumes the
/// residual at level `j + 1`.
pub fn run_adjoint<T: Real>(
    op: &WaveOperator<'_, T>,
    time: &TimeGrid<T>,
    source: &NodeSeries<T>,
) -> Result<WaveHistory<T>> {
    let n = time.n_steps;
    if source.n_levels != n + 1 || source.n_nodes != op.disc().boundary().len() {
        return Err(Error::Shape("adjoint source does not match the time grid".into()));
    }
    // reversed storage: rev[k] = λ^{N+1-k}
    let rev = leapfrog_history(op, time.dt, n + 2, |k, buf| {
        op.add_boundary_load(source.level(n + 1 - k), buf);
    })
    .map_err(|e| match e {
        Error::Divergence { step } => Error::Divergence { step: (n + 1).saturating_sub(step) },
        other => other,
    })?;
    let mut out = WaveHistory::zeros(op.disc(), time.dt, n + 1);
    for j in 0..=n {
        out.level_mut(j).copy_from_slice(rev.level(n + 1 - j));
    }
    Ok(out)
}

/// Integrates the adjoint problem backward from `T` with Neumann data `source`.
pub fn solve_adjoint<T: Real>(
    mesh: &Mesh<T>,
    coefficient: &CoefficientField<T>,
    config: &ForwardConfig<T>,
    source: &AdjointSource<T>,
) -> Result<WaveHistory<T>> {
    coefficient.check_mesh(mesh)?;
    check_cfl(mesh, coefficient, config.s, config.time.dt)?;
    if source.mesh_id != mesh.id() {
        return Err(Error::Shape("adjoint source belongs to a different mesh".into()));
    }
    let disc = Discretization::new(mesh);
    let op = WaveOperator::new(&disc, coefficient, config.s)?;
    run_adjoint(&op, &config.time, &source.residual)
}
