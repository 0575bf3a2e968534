//! Explicit time-domain solvers for the stabilized vector wave system.

pub mod operator;
mod record;
mod solver;
mod transfer;

pub use operator::{BoundaryLayout, Discretization, Scratch, WaveOperator};
pub use record::{BoundaryRecord, NodeSeries, WaveHistory};
pub use solver::{
    cfl_max_dt, check_cfl, discrete_energy, extend_coefficient, leapfrog, leapfrog_history,
    run_state, solve_forward_g, solve_state_gb, ForwardRun,
};
pub use transfer::{resample_record, transfer_record};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::TimeGrid;
use crate::scalar::Real;

/// Incident pulse `f(t) = sin(ωt)` on `[0, t₁]`, zero afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceWaveform<T> {
    pub omega: T,
    pub t1: T,
}

impl<T: Real> SourceWaveform<T> {
    /// One full period: `t₁ = 2π/ω`.
    pub fn new(omega: T) -> Self {
        Self { omega, t1: T::lit(std::f64::consts::TAU) / omega }
    }

    #[inline]
    pub fn eval(&self, t: T) -> T {
        if t < T::zero() || t > self.t1 {
            T::zero()
        } else {
            (self.omega * t).sin()
        }
    }
}

/// Time grid and stabilization constant shared by every solve of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForwardConfig<T> {
    pub s: T,
    pub time: TimeGrid<T>,
}

impl<T: Real> ForwardConfig<T> {
    pub fn new(s: T, time: TimeGrid<T>) -> Result<Self> {
        if !(s >= T::one()) {
            return Err(Error::Config(format!("stabilization s = {s} must be >= 1")));
        }
        Ok(Self { s, time })
    }
}
