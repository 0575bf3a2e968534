use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::geometry::mesh::{CellKey, Mesh};
use crate::scalar::Real;

/// Lower bound of the admissible coefficient set.
pub const EPS_MIN: f64 = 1.0;
/// Upper bound of the admissible coefficient set (effective constant of metals).
pub const EPS_MAX: f64 = 25.0;

/// Piecewise-constant relative permittivity, one value per mesh cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientField<T> {
    pub values: Vec<T>,
    pub mesh_id: u64,
}

impl<T: Real> CoefficientField<T> {
    /// `value` inside `Ω`, one outside.
    pub fn constant(mesh: &Mesh<T>, value: T) -> Self {
        Self::from_fn(mesh, |_| value)
    }

    /// Samples `f` at cell centres inside `Ω`; cells outside `Ω` get one.
    pub fn from_fn(mesh: &Mesh<T>, f: impl Fn([T; 3]) -> T) -> Self {
        let values = (0..mesh.n_cells())
            .map(|c| if mesh.in_omega(c) { f(mesh.cell_center(c)) } else { T::one() })
            .collect();
        Self { values, mesh_id: mesh.id() }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn check_mesh(&self, mesh: &Mesh<T>) -> Result<()> {
        if self.mesh_id != mesh.id() || self.values.len() != mesh.n_cells() {
            return Err(Error::Shape(format!(
                "coefficient belongs to mesh {:#x}, expected {:#x}",
                self.mesh_id,
                mesh.id()
            )));
        }
        Ok(())
    }

    /// Number of cells violating `[1, 25]` or `ε = 1` outside `Ω`.
    pub fn count_violations(&self, mesh: &Mesh<T>) -> usize {
        let lo = T::lit(EPS_MIN);
        let hi = T::lit(EPS_MAX);
        self.values
            .iter()
            .enumerate()
            .filter(|&(c, &v)| {
                !(v >= lo && v <= hi) || (!mesh.in_omega(c) && v != T::one())
            })
            .count()
    }

    pub fn validate(&self, mesh: &Mesh<T>) -> Result<()> {
        self.check_mesh(mesh)?;
        match self.count_violations(mesh) {
            0 => Ok(()),
            n => Err(Error::Domain(format!("{n} cells violate coefficient bounds"))),
        }
    }

    /// `max_Ω ε`.
    pub fn max_in_omega(&self, mesh: &Mesh<T>) -> T {
        self.values
            .iter()
            .enumerate()
            .filter(|&(c, _)| mesh.in_omega(c))
            .fold(T::one(), |m, (_, &v)| m.max(v))
    }

    /// `‖ε‖_{L₂(Ω)}`.
    pub fn l2_norm_omega(&self, mesh: &Mesh<T>) -> T {
        l2_norm_omega(mesh, &self.values)
    }

    /// `∫_G_b ε dV`.
    pub fn integral(&self, mesh: &Mesh<T>) -> T {
        self.values.iter().enumerate().map(|(c, &v)| v * mesh.cell_volume(c)).sum()
    }
}

/// `L₂(Ω)` norm of a cell-wise field.
pub fn l2_norm_omega<T: Real>(mesh: &Mesh<T>, values: &[T]) -> T {
    l2_dot_omega(mesh, values, values).sqrt()
}

/// `L₂(Ω)` inner product of two cell-wise fields.
pub fn l2_dot_omega<T: Real>(mesh: &Mesh<T>, a: &[T], b: &[T]) -> T {
    (0..mesh.n_cells())
        .filter(|&c| mesh.in_omega(c))
        .map(|c| mesh.cell_volume(c) * a[c] * b[c])
        .sum()
}

/// Volume-weighted transfer of a coefficient between meshes of the same base grid.
///
/// A destination cell covered by a coarser or equal source cell inherits its
/// value; a destination cell split into several source cells receives their
/// volume average.
pub fn interpolate_coefficient<T: Real>(
    src: &CoefficientField<T>,
    src_mesh: &Mesh<T>,
    dst_mesh: &Mesh<T>,
) -> Result<CoefficientField<T>> {
    src.check_mesh(src_mesh)?;
    if !src_mesh.same_base_grid(dst_mesh) {
        return Err(Error::Geometry("meshes do not tile the same box".into()));
    }
    let by_key: HashMap<CellKey, T> = src_mesh
        .cells()
        .iter()
        .zip(&src.values)
        .map(|(k, &v)| (*k, v))
        .collect();
    let mut values = Vec::with_capacity(dst_mesh.n_cells());
    for (c, key) in dst_mesh.cells().iter().enumerate() {
        let v = if !dst_mesh.in_omega(c) {
            T::one()
        } else {
            lookup_average(key, &by_key)
                .ok_or_else(|| Error::Geometry(format!("cell {key:?} not covered by source")))?
        };
        values.push(v);
    }
    Ok(CoefficientField { values, mesh_id: dst_mesh.id() })
}

fn lookup_average<T: Real>(key: &CellKey, src: &HashMap<CellKey, T>) -> Option<T> {
    let mut anc = Some(*key);
    while let Some(k) = anc {
        if let Some(&v) = src.get(&k) {
            return Some(v);
        }
        anc = k.parent();
    }
    descendant_average(key, src)
}

fn descendant_average<T: Real>(key: &CellKey, src: &HashMap<CellKey, T>) -> Option<T> {
    if let Some(&v) = src.get(key) {
        return Some(v);
    }
    if key.level >= crate::geometry::mesh::MAX_LEVEL {
        return None;
    }
    let mut acc = T::zero();
    for child in key.children() {
        acc = acc + descendant_average(&child, src)?;
    }
    Some(acc / T::lit(8.0))
}


/// Gaussian smoothing of `ε − 1` over `Ω` (kernel `exp(−r²/2σ²)`, volume weighted).
///
/// Cells outside `Ω` stay at one; the kernel is renormalised per cell so a
/// constant field is reproduced.
pub fn smooth_coefficient<T: Real>(eps: &CoefficientField<T>, mesh: &Mesh<T>, sigma: T) -> Result<CoefficientField<T>> {
    eps.check_mesh(mesh)?;
    if !(sigma > T::zero()) {
        return Err(Error::Config(format!("smoothing width {sigma} must be positive")));
    }
    let inside: Vec<usize> = (0..mesh.n_cells()).filter(|&c| mesh.in_omega(c)).collect();
    let centres: Vec<[T; 3]> = inside.iter().map(|&c| mesh.cell_center(c)).collect();
    let two_s2 = T::lit(2.0) * sigma * sigma;
    let mut values = vec![T::one(); mesh.n_cells()];
    for (i, &c) in inside.iter().enumerate() {
        let (mut num, mut den) = (T::zero(), T::zero());
        for (j, &d) in inside.iter().enumerate() {
            let r2 = (0..3).map(|k| (centres[i][k] - centres[j][k]).powi(2)).fold(T::zero(), |a, b| a + b);
            let w = (-r2 / two_s2).exp() * mesh.cell_volume(d);
            num = num + w * (eps.values[d] - T::one());
            den = den + w;
        }
        values[c] = T::one() + num / den;
    }
    Ok(CoefficientField { values, mesh_id: eps.mesh_id })
}

/// Rescales the contrast `ε − 1` in `Ω` so that `max_Ω ε = peak`.
pub fn rescale_contrast<T: Real>(eps: &CoefficientField<T>, mesh: &Mesh<T>, peak: T) -> Result<CoefficientField<T>> {
    eps.check_mesh(mesh)?;
    let max = eps.max_in_omega(mesh);
    if !(max > T::one()) || !(peak >= T::one()) {
        return Err(Error::Config("contrast rescaling needs max ε > 1 and peak ≥ 1".into()));
    }
    let f = (peak - T::one()) / (max - T::one());
    let values = eps
        .values
        .iter()
        .enumerate()
        .map(|(c, &v)| if mesh.in_omega(c) { T::one() + (v - T::one()) * f } else { T::one() })
        .collect();
    Ok(CoefficientField { values, mesh_id: eps.mesh_id })
}
