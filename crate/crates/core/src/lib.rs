//! Adaptive reconstruction of a dielectric coefficient from time-resolved
//! backscattered boundary data.
//!
//! The pipeline minimizes a Tikhonov functional over a piecewise-constant
//! coefficient with an adjoint-state conjugate-gradient method, refining an
//! octree hexahedral mesh where the gradient is large:
//!
//! * [`geometry`] — domains, the refinable mesh and coefficient fields;
//! * [`wave`] — explicit solvers for the stabilized vector wave system;
//! * [`adjoint`] — the backward problem driven by boundary residuals;
//! * [`gradient`] — misfit and per-cell derivative of the functional;
//! * [`optimize`] — conjugate gradients on one mesh;
//! * [`adaptive`] — the refine-and-restart outer loop;
//! * [`data`] — twin data, propagation, calibration and immersing;
//! * [`report`] — target images and summary metrics;
//! * [`io`] — binary containers and VTK export.
//!
//! Everything numerical is generic over [`Real`] (`f32` or `f64`); the
//! aliases below fix the precision used by the command-line tool.

pub mod adaptive;
pub mod adjoint;
pub mod data;
pub mod error;
pub mod geometry;
pub mod gradient;
pub mod io;
pub mod optimize;
pub mod report;
pub mod scalar;
pub mod wave;

pub use error::{Error, Result};
pub use scalar::Real;

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub type Mesh64 = geometry::Mesh<f64>;
pub type Coefficient64 = geometry::CoefficientField<f64>;
pub type DomainSpec64 = geometry::DomainSpec<f64>;
pub type TimeGrid64 = geometry::TimeGrid<f64>;
pub type BoundaryRecord64 = wave::BoundaryRecord<f64>;
pub type Mesh32 = geometry::Mesh<f32>;
pub type Coefficient32 = geometry::CoefficientField<f32>;
