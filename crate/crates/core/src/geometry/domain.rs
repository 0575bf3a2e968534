use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Axis-aligned box `lo < x < hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb<T> {
    pub lo: [T; 3],
    pub hi: [T; 3],
}

impl<T: Real> Aabb<T> {
    pub fn new(lo: [T; 3], hi: [T; 3]) -> Self {
        Self { lo, hi }
    }

    pub fn extent(&self, axis: usize) -> T {
        self.hi[axis] - self.lo[axis]
    }

    pub fn volume(&self) -> T {
        self.extent(0) * self.extent(1) * self.extent(2)
    }

    /// Closed containment with an absolute slack `tol`.
    pub fn contains(&self, p: [T; 3], tol: T) -> bool {
        (0..3).all(|d| p[d] >= self.lo[d] - tol && p[d] <= self.hi[d] + tol)
    }

    fn is_proper(&self) -> bool {
        (0..3).all(|d| self.hi[d] > self.lo[d])
    }
}

/// Geometry of the computational domain `G`, the inclusion domain `Ω`,
/// the backscattering plane `Γ` (`z = c₁`) and the incident plane (`z = z₀`).
///
/// `G_b` is the part of `G` below `Γ₁`, i.e. `g_bounds` with its upper z
/// face moved down to `gamma_z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec<T> {
    pub g_bounds: Aabb<T>,
    pub omega_bounds: Aabb<T>,
    pub gamma_z: T,
    pub source_z: T,
}

impl<T: Real> DomainSpec<T> {
    /// Builds and validates a domain from the half-widths used in the
    /// literature: `G = (-X,X)×(-Y,Y)×(-Z,z₀)`, `Ω = (-a,a)×(-b,b)×(-c,c₁)`.
    #[allow(clippy::too_many_arguments)]
    pub fn from_half_widths(x: T, y: T, z: T, z0: T, a: T, b: T, c: T, c1: T) -> Result<Self> {
        let spec = Self {
            g_bounds: Aabb::new([-x, -y, -z], [x, y, z0]),
            omega_bounds: Aabb::new([-a, -b, -c], [a, b, c1]),
            gamma_z: c1,
            source_z: z0,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// The domain used for the laboratory reconstructions:
    /// `G = (-0.56,0.56)²×(-0.16,0.1)`, `Ω = (-0.5,0.5)²×(-0.1,0.04)`.
    pub fn laboratory() -> Self {
        Self::from_half_widths(
            T::lit(0.56),
            T::lit(0.56),
            T::lit(0.16),
            T::lit(0.1),
            T::lit(0.5),
            T::lit(0.5),
            T::lit(0.1),
            T::lit(0.04),
        )
        .expect("laboratory domain is valid")
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.g_bounds;
        let o = &self.omega_bounds;
        if !g.is_proper() || !o.is_proper() {
            return Err(Error::Geometry("degenerate box".into()));
        }
        for d in 0..2 {
            if !(o.lo[d] > g.lo[d] && o.hi[d] < g.hi[d]) {
                return Err(Error::Geometry(format!(
                    "omega must lie strictly inside G along axis {d}"
                )));
            }
        }
        if !(o.lo[2] > g.lo[2]) {
            return Err(Error::Geometry("omega must lie strictly above -Z".into()));
        }
        // -Z < -c < c1 < z0
        if !(g.lo[2] < o.lo[2] && o.lo[2] < self.gamma_z && self.gamma_z < self.source_z) {
            return Err(Error::Geometry("require -Z < -c < c1 < z0".into()));
        }
        if (g.hi[2] - self.source_z).abs() > T::lit(1e-12) * g.extent(2) {
            return Err(Error::Geometry("upper face of G must be the incident plane".into()));
        }
        if (o.hi[2] - self.gamma_z).abs() > T::lit(1e-12) * g.extent(2) {
            return Err(Error::Geometry("upper face of omega must be the plane gamma".into()));
        }
        Ok(())
    }

    /// `G_b`: the part of `G` between `z = -Z` and `Γ₁`.
    pub fn gb_bounds(&self) -> Aabb<T> {
        let mut b = self.g_bounds;
        b.hi[2] = self.gamma_z;
        b
    }

    /// `true` if `(x, y)` lies in the closed rectangle `Γ`.
    pub fn in_gamma_xy(&self, x: T, y: T, tol: T) -> bool {
        let o = &self.omega_bounds;
        x >= o.lo[0] - tol && x <= o.hi[0] + tol && y >= o.lo[1] - tol && y <= o.hi[1] + tol
    }
}
