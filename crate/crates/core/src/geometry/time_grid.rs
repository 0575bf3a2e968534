use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Uniform partition of `(0, T)` into `n_steps` intervals of length `dt`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid<T> {
    pub t_final: T,
    pub dt: T,
    pub n_steps: usize,
    /// Source shutoff time `t₁`.
    pub t1: T,
}

impl<T: Real> TimeGrid<T> {
    pub fn new(t_final: T, dt: T, t1: T) -> Result<Self> {
        if !(dt > T::zero()) {
            return Err(Error::Config("time step must be positive".into()));
        }
        if !(t1 > T::zero() && t1 < t_final) {
            return Err(Error::Config("require 0 < t1 < T".into()));
        }
        let n = (t_final / dt).round();
        let n_steps = n.to_usize().ok_or_else(|| Error::Config("bad step count".into()))?;
        if n_steps == 0 || ((n * dt - t_final).abs() > T::lit(1e-9) * t_final.max(T::one())) {
            return Err(Error::Config(format!(
                "T = {t_final} is not an integer multiple of dt = {dt}"
            )));
        }
        Ok(Self { t_final, dt, n_steps, t1 })
    }

    #[inline]
    pub fn time(&self, n: usize) -> T {
        T::from_usize(n).unwrap() * self.dt
    }

    /// Number of time levels, `n_steps + 1`.
    pub fn n_levels(&self) -> usize {
        self.n_steps + 1
    }

    /// The same interval with the step halved (CFL adaptation under refinement).
    pub fn halved(&self) -> Self {
        Self {
            t_final: self.t_final,
            dt: self.dt / T::lit(2.0),
            n_steps: self.n_steps * 2,
            t1: self.t1,
        }
    }

    /// Trapezoidal weight of level `n` (without the factor `dt`).
    pub fn trapezoid_weight(&self, n: usize) -> T {
        if n == 0 || n == self.n_steps {
            T::lit(0.5)
        } else {
            T::one()
        }
    }

    pub fn approx_eq(&self, other: &Self) -> bool {
        self.n_steps == other.n_steps
            && (self.dt - other.dt).abs() <= T::lit(1e-12) * self.dt.abs()
    }
}
