//! Tikhonov functional and its per-cell derivative.
//!
//! On the discrete level the functional is
//!
//! ```text
//! F(ε) = ½ Σ_n τ w_n z_δ(t_n) Σ_i m̃_i |E_i^n − g̃_i^n|²  +  γ/2 Σ_{K⊂Ω} |K| (ε_K − ε_glob,K)²
//! ```
//!
//! with trapezoidal weights `w_n` and the lumped boundary mass `m̃`. Its
//! derivative combines the state and adjoint histories cell by cell:
//!
//! ```text
//! L'_K = γ(ε_K − ε_glob,K) − (1/|K|) Σ_n (1/τ) Σ_i μ_{K,i} Δλ_i^{n+½}·ΔE_i^{n+½}
//!        + s Σ_n τ (∇·E^n)_K (∇·λ^n)_K
//! ```
//!
//! where `μ_{K,i}` is the share of cell `K` in the lumped mass of dof `i`.
//! Time derivatives are the centred half-step differences of the leapfrog
//! grid, which makes `L'` the exact derivative of the discrete `F`.

use rayon::prelude::*;

use crate::adjoint::{run_adjoint, AdjointSource, CutoffZdelta};
use crate::error::{Error, Result};
use crate::geometry::{CoefficientField, Mesh, TimeGrid};
use crate::scalar::Real;
use crate::wave::{
    check_cfl, run_state, BoundaryRecord, Discretization, ForwardConfig, WaveHistory, WaveOperator,
};

/// Regularization weight and the reference coefficient.
#[derive(Debug, Clone, PartialEq)]
pub struct TikhonovConfig<T> {
    pub gamma: T,
    pub eps_glob: CoefficientField<T>,
}

impl<T: Real> TikhonovConfig<T> {
    pub fn new(gamma: T, eps_glob: CoefficientField<T>, mesh: &Mesh<T>) -> Result<Self> {
        if !(gamma > T::zero()) {
            return Err(Error::Config(format!("γ = {gamma} must be positive")));
        }
        eps_glob.validate(mesh)?;
        Ok(Self { gamma, eps_glob })
    }
}

/// Per-cell derivative, zero outside `Ω`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField<T> {
    pub mesh_id: u64,
    pub values: Vec<T>,
    /// `‖L'‖_{L₂(Ω)}`.
    pub norm_l2: T,
}

impl<T: Real> GradientField<T> {
    pub fn new(disc: &Discretization<T>, values: Vec<T>) -> Self {
        let norm_l2 = l2_norm(disc, &values);
        Self { mesh_id: disc.mesh_id(), values, norm_l2 }
    }

    pub fn zeros(disc: &Discretization<T>) -> Self {
        Self::new(disc, vec![T::zero(); disc.n_cells()])
    }

    pub fn max_abs(&self) -> T {
        crate::scalar::max_abs(&self.values)
    }
}

/// The three additive parts of the derivative, each already divided by `|K|`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientLimbs<T> {
    pub regularization: Vec<T>,
    pub time_derivative: Vec<T>,
    pub divergence: Vec<T>,
}

impl<T: Real> GradientLimbs<T> {
    pub fn total(&self) -> Vec<T> {
        (0..self.regularization.len())
            .map(|c| self.regularization[c] + self.time_derivative[c] + self.divergence[c])
            .collect()
    }
}

/// `L₂(Ω)` norm of a per-cell field.
pub fn l2_norm<T: Real>(disc: &Discretization<T>, values: &[T]) -> T {
    l2_dot(disc, values, values).sqrt()
}

/// `L₂(Ω)` inner product of per-cell fields.
pub fn l2_dot<T: Real>(disc: &Discretization<T>, a: &[T], b: &[T]) -> T {
    (0..disc.n_cells())
        .filter(|&c| disc.in_omega(c))
        .fold(T::zero(), |s, c| s + disc.volume(c) * a[c] * b[c])
}

fn check_histories<T: Real>(disc: &Discretization<T>, time: &TimeGrid<T>, hist: &[&WaveHistory<T>]) -> Result<()> {
    for h in hist {
        if h.mesh_id != disc.mesh_id() || h.n_levels != time.n_levels() || h.n_values != disc.n_values() {
            return Err(Error::Shape("history does not match mesh or time grid".into()));
        }
    }
    Ok(())
}

/// Regularization term `γ/2 Σ_{K⊂Ω} |K| (ε − ε_glob)²`.
pub fn regularization_term<T: Real>(disc: &Discretization<T>, eps: &CoefficientField<T>, tik: &TikhonovConfig<T>) -> T {
    let diff: Vec<T> = eps.values.iter().zip(&tik.eps_glob.values).map(|(&a, &b)| a - b).collect();
    T::lit(0.5) * tik.gamma * l2_dot(disc, &diff, &diff)
}

/// Data term `½ Σ_n τ w_n z_δ Σ_i m̃_i |E − g̃|²`.
pub fn data_term<T: Real>(
    disc: &Discretization<T>,
    e_hist: &WaveHistory<T>,
    g_tilde: &BoundaryRecord<T>,
    cutoff: &CutoffZdelta<T>,
    time: &TimeGrid<T>,
) -> Result<T> {
    check_histories(disc, time, &[e_hist])?;
    g_tilde.check(disc, time.n_levels())?;
    let b = disc.boundary();
    let mut total = T::zero();
    for n in 0..time.n_levels() {
        let z = cutoff.value(time.time(n));
        if z == T::zero() {
            continue;
        }
        let e = e_hist.level(n);
        let g = g_tilde.dirichlet.level(n);
        let mut s = T::zero();
        for (i, &d) in b.dofs.iter().enumerate() {
            let mut r2 = T::zero();
            for k in 0..3 {
                let r = e[3 * d + k] - g[3 * i + k];
                r2 = r2 + r * r;
            }
            s = s + b.weights[i] * r2;
        }
        total = total + time.dt * time.trapezoid_weight(n) * z * s;
    }
    Ok(T::lit(0.5) * total)
}

/// Value of the Tikhonov functional for a given state history.
pub fn evaluate_misfit<T: Real>(
    disc: &Discretization<T>,
    e_hist: &WaveHistory<T>,
    g_tilde: &BoundaryRecord<T>,
    cutoff: &CutoffZdelta<T>,
    tik: &TikhonovConfig<T>,
    eps: &CoefficientField<T>,
    time: &TimeGrid<T>,
) -> Result<T> {
    if eps.mesh_id != disc.mesh_id() || tik.eps_glob.mesh_id != disc.mesh_id() {
        return Err(Error::Shape("coefficient does not match the mesh".into()));
    }
    Ok(data_term(disc, e_hist, g_tilde, cutoff, time)? + regularization_term(disc, eps, tik))
}

/// The three parts of the derivative per cell.
pub fn assemble_gradient_limbs<T: Real>(
    disc: &Discretization<T>,
    e_hist: &WaveHistory<T>,
    lambda_hist: &WaveHistory<T>,
    eps: &CoefficientField<T>,
    tik: &TikhonovConfig<T>,
    s: T,
    time: &TimeGrid<T>,
) -> Result<GradientLimbs<T>> {
    check_histories(disc, time, &[e_hist, lambda_hist])?;
    if eps.mesh_id != disc.mesh_id() || tik.eps_glob.mesh_id != disc.mesh_id() {
        return Err(Error::Shape("coefficient does not match the mesh".into()));
    }
    let n_levels = time.n_levels();
    let dt = time.dt;
    let inv_dt = T::one() / dt;
    let per_cell: Vec<[T; 3]> = (0..disc.n_cells())
        .into_par_iter()
        .with_min_len(64)
        .map(|c| {
            if !disc.in_omega(c) {
                return [T::zero(); 3];
            }
            let vol = disc.volume(c);
            let reg = tik.gamma * (eps.values[c] - tik.eps_glob.values[c]);
            let weights = disc.cell_mass_weights(c);
            let mut td = T::zero();
            for n in 0..n_levels - 1 {
                let (e0, e1) = (e_hist.level(n), e_hist.level(n + 1));
                let (l0, l1) = (lambda_hist.level(n), lambda_hist.level(n + 1));
                for &(d, w) in weights {
                    let mut acc = T::zero();
                    for k in 3 * d..3 * d + 3 {
                        acc = acc + (l1[k] - l0[k]) * (e1[k] - e0[k]);
                    }
                    td = td + w * acc;
                }
            }
            let mut dv = T::zero();
            for n in 0..n_levels {
                dv = dv + disc.divergence(c, e_hist.level(n)) * disc.divergence(c, lambda_hist.level(n));
            }
            [reg, -td * inv_dt / vol, s * dt * dv]
        })
        .collect();
    Ok(GradientLimbs {
        regularization: per_cell.iter().map(|v| v[0]).collect(),
        time_derivative: per_cell.iter().map(|v| v[1]).collect(),
        divergence: per_cell.iter().map(|v| v[2]).collect(),
    })
}

/// Derivative of the functional with respect to the per-cell coefficient.
pub fn assemble_gradient<T: Real>(
    disc: &Discretization<T>,
    e_hist: &WaveHistory<T>,
    lambda_hist: &WaveHistory<T>,
    eps: &CoefficientField<T>,
    tik: &TikhonovConfig<T>,
    s: T,
    time: &TimeGrid<T>,
) -> Result<GradientField<T>> {
    let limbs = assemble_gradient_limbs(disc, e_hist, lambda_hist, eps, tik, s, time)?;
    Ok(GradientField::new(disc, limbs.total()))
}

/// Everything needed to evaluate the functional and its derivative on one mesh.
#[derive(Debug, Clone)]
pub struct MeshProblem<'a, T> {
    pub mesh: &'a Mesh<T>,
    pub disc: Discretization<T>,
    pub config: ForwardConfig<T>,
    pub cutoff: CutoffZdelta<T>,
    pub tik: TikhonovConfig<T>,
    pub g_tilde: BoundaryRecord<T>,
    pub neumann: BoundaryRecord<T>,
}

/// Functional value with its derivative and the state that produced them.
#[derive(Debug, Clone)]
pub struct Evaluation<T> {
    pub misfit: T,
    pub gradient: GradientField<T>,
    pub state: WaveHistory<T>,
}

impl<'a, T: Real> MeshProblem<'a, T> {
    pub fn new(
        mesh: &'a Mesh<T>,
        config: ForwardConfig<T>,
        cutoff: CutoffZdelta<T>,
        tik: TikhonovConfig<T>,
        g_tilde: BoundaryRecord<T>,
        neumann: BoundaryRecord<T>,
    ) -> Result<Self> {
        let disc = Discretization::new(mesh);
        let n = config.time.n_levels();
        g_tilde.check(&disc, n)?;
        neumann.check(&disc, n)?;
        tik.eps_glob.check_mesh(mesh)?;
        Ok(Self { mesh, disc, config, cutoff, tik, g_tilde, neumann })
    }

    fn operator(&self, eps: &CoefficientField<T>) -> Result<WaveOperator<'_, T>> {
        eps.check_mesh(self.mesh)?;
        check_cfl(self.mesh, eps, self.config.s, self.config.time.dt)?;
        WaveOperator::new(&self.disc, eps, self.config.s)
    }

    pub fn state(&self, eps: &CoefficientField<T>) -> Result<WaveHistory<T>> {
        let op = self.operator(eps)?;
        run_state(&op, &self.config.time, &self.neumann.neumann)
    }

    pub fn misfit_of_state(&self, eps: &CoefficientField<T>, state: &WaveHistory<T>) -> Result<T> {
        evaluate_misfit(&self.disc, state, &self.g_tilde, &self.cutoff, &self.tik, eps, &self.config.time)
    }

    /// `F(ε)`; needs only the state solve.
    pub fn misfit(&self, eps: &CoefficientField<T>) -> Result<T> {
        let state = self.state(eps)?;
        self.misfit_of_state(eps, &state)
    }

    pub fn adjoint(&self, eps: &CoefficientField<T>, state: &WaveHistory<T>) -> Result<WaveHistory<T>> {
        let op = self.operator(eps)?;
        let src = AdjointSource::from_state(&self.disc, state, &self.g_tilde, &self.cutoff, &self.config.time)?;
        run_adjoint(&op, &self.config.time, &src.residual)
    }

    /// `F(ε)` and `L'(ε)` from one state and one adjoint solve.
    pub fn evaluate(&self, eps: &CoefficientField<T>) -> Result<Evaluation<T>> {
        let state = self.state(eps)?;
        let misfit = self.misfit_of_state(eps, &state)?;
        let lambda = self.adjoint(eps, &state)?;
        let gradient =
            assemble_gradient(&self.disc, &state, &lambda, eps, &self.tik, self.config.s, &self.config.time)?;
        Ok(Evaluation { misfit, gradient, state })
    }
}
