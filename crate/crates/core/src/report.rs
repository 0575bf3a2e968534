//! Target images and summary metrics of a reconstruction.

use serde::{Deserialize, Serialize};

use crate::geometry::{CoefficientField, Mesh};
use crate::scalar::Real;

/// Reconstructed maxima above this value are read as metallic targets.
pub const METALLIC_EPS: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TargetClass {
    Dielectric,
    MetallicLike,
}

impl TargetClass {
    pub fn of(eps_max: f64) -> Self {
        if eps_max > METALLIC_EPS {
            Self::MetallicLike
        } else {
            Self::Dielectric
        }
    }

    /// Image cut-off as a fraction of the maximum.
    pub fn cutoff(self) -> f64 {
        match self {
            Self::Dielectric => 0.85,
            Self::MetallicLike => 0.3,
        }
    }
}

/// Keeps `ε` where it reaches the mode's fraction of `max_Ω ε`, sets 1 elsewhere.
pub fn threshold_image<T: Real>(eps: &CoefficientField<T>, mesh: &Mesh<T>, mode: TargetClass) -> CoefficientField<T> {
    let limit = T::lit(mode.cutoff()) * eps.max_in_omega(mesh);
    let values = eps
        .values
        .iter()
        .enumerate()
        .map(|(c, &v)| if mesh.in_omega(c) && v >= limit { v } else { T::one() })
        .collect();
    CoefficientField { values, mesh_id: eps.mesh_id }
}

/// Cells of `Ω` kept by [`threshold_image`] (ties included even when `ε = 1`).
pub fn support_cells<T: Real>(eps: &CoefficientField<T>, mesh: &Mesh<T>, mode: TargetClass) -> Vec<usize> {
    let limit = T::lit(mode.cutoff()) * eps.max_in_omega(mesh);
    (0..mesh.n_cells()).filter(|&c| mesh.in_omega(c) && eps.values[c] >= limit).collect()
}

/// Extent `[lo, hi]` per axis of a set of cells.
pub fn bounding_box<T: Real>(mesh: &Mesh<T>, cells: &[usize]) -> Option<[[f64; 2]; 3]> {
    let mut out: Option<[[f64; 2]; 3]> = None;
    for &c in cells {
        let b = mesh.cell_bounds(c);
        let bx = out.get_or_insert([[f64::INFINITY, f64::NEG_INFINITY]; 3]);
        for d in 0..3 {
            bx[d][0] = bx[d][0].min(b.lo[d].to_f64_lossy());
            bx[d][1] = bx[d][1].max(b.hi[d].to_f64_lossy());
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetComparison {
    pub n_true: f64,
    /// `|n − n_true| / n_true`.
    pub n_error: f64,
    pub true_box: Option<[[f64; 2]; 3]>,
    /// Relative extent error per axis, when both boxes exist.
    pub extent_error: Option<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetReport {
    pub eps_max: f64,
    pub n_target: f64,
    pub classification: TargetClass,
    pub support_cells: Vec<usize>,
    pub bounding_box: Option<[[f64; 2]; 3]>,
    pub comparison: Option<TargetComparison>,
}

impl TargetReport {
    pub const TSV_HEADER: &'static str = "mesh\teps_max\tn_target\tclass\tn_true\terror";

    /// Row in the layout of the published result tables.
    pub fn tsv_row(&self, mesh_label: &str) -> String {
        let (n_true, err) = match &self.comparison {
            Some(c) => (format!("{:.2}", c.n_true), format!("{:.0}%", 100.0 * c.n_error)),
            None => ("-".into(), "-".into()),
        };
        format!(
            "{mesh_label}\t{:.1}\t{:.2}\t{:?}\t{n_true}\t{err}",
            self.eps_max, self.n_target, self.classification
        )
    }
}

/// `ε_max = max_Ω ε`, `n = √ε_max`, class, support and, given the truth, errors.
pub fn make_report<T: Real>(eps: &CoefficientField<T>, mesh: &Mesh<T>, truth: Option<&CoefficientField<T>>) -> TargetReport {
    let eps_max = eps.max_in_omega(mesh).to_f64_lossy();
    let classification = TargetClass::of(eps_max);
    let support = support_cells(eps, mesh, classification);
    let bbox = bounding_box(mesh, &support);
    let n_target = eps_max.sqrt();
    let comparison = truth.map(|t| {
        let t_max = t.max_in_omega(mesh).to_f64_lossy();
        let n_true = t_max.sqrt();
        let t_support = support_cells(t, mesh, TargetClass::of(t_max));
        let true_box = bounding_box(mesh, &t_support);
        let extent_error = match (&bbox, &true_box) {
            (Some(a), Some(b)) => Some(std::array::from_fn(|d| {
                let (ea, eb) = (a[d][1] - a[d][0], b[d][1] - b[d][0]);
                (ea - eb).abs() / eb
            })),
            _ => None,
        };
        TargetComparison { n_true, n_error: (n_target - n_true).abs() / n_true, true_box, extent_error }
    });
    TargetReport { eps_max, n_target, classification, support_cells: support, bounding_box: bbox, comparison }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Aabb;

    fn mesh() -> Mesh<f64> {
        Mesh::uniform(Aabb::new([0.0; 3], [3.0; 3]), Aabb::new([0.5; 3], [2.5, 2.5, 3.0]), 0.5, false).unwrap()
    }

    fn omega(m: &Mesh<f64>) -> Vec<usize> {
        (0..m.n_cells()).filter(|&c| m.in_omega(c)).collect()
    }

    #[test]
    fn metallic_threshold() {
        let m = mesh();
        let o = omega(&m);
        let mut e = CoefficientField::constant(&m, 1.0);
        e.values[o[0]] = 14.4;
        e.values[o[1]] = 4.32;
        e.values[o[2]] = 4.31;
        let img = threshold_image(&e, &m, TargetClass::MetallicLike);
        assert_eq!(img.values[o[0]], 14.4);
        assert_eq!(img.values[o[1]], 4.32);
        assert_eq!(img.values[o[2]], 1.0);
        assert!(img.values.iter().zip(&e.values).all(|(a, b)| *a == 1.0 || a == b));
    }

    #[test]
    fn constant_field_is_fixed() {
        let m = mesh();
        let e = CoefficientField::constant(&m, 1.0);
        for mode in [TargetClass::Dielectric, TargetClass::MetallicLike] {
            assert_eq!(threshold_image(&e, &m, mode).values, e.values);
        }
    }

    #[test]
    fn two_level_dielectric_image() {
        let m = mesh();
        let o = omega(&m);
        let mut e = CoefficientField::constant(&m, 1.0);
        for &c in &o[..4] {
            e.values[c] = 4.0;
        }
        for &c in &o[4..] {
            e.values[c] = 1.2;
        }
        let img = threshold_image(&e, &m, TargetClass::Dielectric);
        for &c in &o {
            assert_eq!(img.values[c], if e.values[c] == 4.0 { 4.0 } else { 1.0 });
        }
        let d = support_cells(&e, &m, TargetClass::Dielectric);
        let mt = support_cells(&e, &m, TargetClass::MetallicLike);
        assert!(d.iter().all(|c| mt.contains(c)));
    }

    #[test]
    fn report_values() {
        let m = mesh();
        let o = omega(&m);
        let mut e = CoefficientField::constant(&m, 1.0);
        e.values[o[0]] = 4.0;
        let r = make_report(&e, &m, None);
        assert_eq!(r.n_target, 2.0);
        assert_eq!(r.classification, TargetClass::Dielectric);
        assert!((r.n_target * r.n_target - r.eps_max).abs() < 1e-12);
        let bb = r.bounding_box.unwrap();
        let b = m.cell_bounds(o[0]);
        assert_eq!(bb[0], [b.lo[0], b.hi[0]]);

        e.values[o[0]] = 17.0;
        assert_eq!(make_report(&e, &m, None).classification, TargetClass::MetallicLike);

        let mut truth = CoefficientField::constant(&m, 1.0);
        truth.values[o[0]] = 4.0;
        e.values[o[0]] = 1.9 * 1.9;
        let r = make_report(&e, &m, Some(&truth));
        let c = r.comparison.as_ref().unwrap();
        assert!((c.n_error - 0.05).abs() < 1e-12);
        assert_eq!(c.extent_error, Some([0.0; 3]));
        assert!(r.tsv_row("1x refined").ends_with("\t1.90\tDielectric\t2.00\t5%"));
    }
}
