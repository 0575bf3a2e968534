//! Computational domains, the refinable cell mesh and cell-wise coefficients.

pub mod coefficient;
pub mod domain;
pub mod mesh;
pub mod time_grid;

pub use coefficient::{interpolate_coefficient, rescale_contrast, smooth_coefficient, CoefficientField, EPS_MAX, EPS_MIN};
pub use domain::{Aabb, DomainSpec};
pub use mesh::{build_base_mesh, face_corners, CellKey, Mesh, CORNER_OFFSETS, MAX_LEVEL, N_FACES};
pub use time_grid::TimeGrid;
