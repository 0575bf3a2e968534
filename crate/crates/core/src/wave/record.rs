use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::wave::operator::{BoundaryLayout, Discretization};

/// Three-component time series on a fixed node set, level-major.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSeries<T> {
    pub n_nodes: usize,
    pub n_levels: usize,
    pub data: Vec<T>,
}

impl<T: Real> NodeSeries<T> {
    pub fn zeros(n_nodes: usize, n_levels: usize) -> Self {
        Self { n_nodes, n_levels, data: vec![T::zero(); 3 * n_nodes * n_levels] }
    }

    #[inline]
    pub fn level(&self, n: usize) -> &[T] {
        let w = 3 * self.n_nodes;
        &self.data[n * w..(n + 1) * w]
    }

    #[inline]
    pub fn level_mut(&mut self, n: usize) -> &mut [T] {
        let w = 3 * self.n_nodes;
        &mut self.data[n * w..(n + 1) * w]
    }

    #[inline]
    pub fn get(&self, level: usize, node: usize, comp: usize) -> T {
        self.data[(level * self.n_nodes + node) * 3 + comp]
    }

    #[inline]
    pub fn set(&mut self, level: usize, node: usize, comp: usize, v: T) {
        self.data[(level * self.n_nodes + node) * 3 + comp] = v;
    }

    pub fn scaled_add(&mut self, a: T, other: &Self) {
        for (x, &y) in self.data.iter_mut().zip(&other.data) {
            *x = *x + a * y;
        }
    }
}

/// Dirichlet trace `g̃` and Neumann data `p` on the boundary of `G_b`.
///
/// Nodes are the free boundary nodes of the `G_b` mesh in dof order; every
/// node appears once and the faces they span partition the box surface.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryRecord<T> {
    pub mesh_id: u64,
    pub dt: T,
    pub keys: Vec<[i64; 3]>,
    pub positions: Vec<[T; 3]>,
    pub sides: Vec<u8>,
    pub dirichlet: NodeSeries<T>,
    pub neumann: NodeSeries<T>,
}

impl<T: Real> BoundaryRecord<T> {
    pub fn zeros(disc: &Discretization<T>, dt: T, n_levels: usize) -> Self {
        let b: &BoundaryLayout<T> = disc.boundary();
        Self {
            mesh_id: disc.mesh_id(),
            dt,
            keys: b.keys.clone(),
            positions: b.positions.clone(),
            sides: b.sides.clone(),
            dirichlet: NodeSeries::zeros(b.len(), n_levels),
            neumann: NodeSeries::zeros(b.len(), n_levels),
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.keys.len()
    }

    pub fn n_levels(&self) -> usize {
        self.dirichlet.n_levels
    }

    /// Checks that the record belongs to `disc` and has `n_levels` samples.
    pub fn check(&self, disc: &Discretization<T>, n_levels: usize) -> Result<()> {
        if self.mesh_id != disc.mesh_id() || self.n_nodes() != disc.boundary().len() {
            return Err(Error::Shape("boundary record belongs to a different mesh".into()));
        }
        if self.n_levels() != n_levels || self.neumann.n_levels != n_levels {
            return Err(Error::Shape(format!(
                "boundary record has {} levels, time grid needs {n_levels}",
                self.n_levels()
            )));
        }
        Ok(())
    }
}

/// Full space–time history of a field on one discretization.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveHistory<T> {
    pub mesh_id: u64,
    pub dt: T,
    pub n_values: usize,
    pub n_levels: usize,
    pub data: Vec<T>,
}

impl<T: Real> WaveHistory<T> {
    pub fn zeros(disc: &Discretization<T>, dt: T, n_levels: usize) -> Self {
        let n_values = disc.n_values();
        Self { mesh_id: disc.mesh_id(), dt, n_values, n_levels, data: vec![T::zero(); n_values * n_levels] }
    }

    #[inline]
    pub fn level(&self, n: usize) -> &[T] {
        &self.data[n * self.n_values..(n + 1) * self.n_values]
    }

    #[inline]
    pub fn level_mut(&mut self, n: usize) -> &mut [T] {
        &mut self.data[n * self.n_values..(n + 1) * self.n_values]
    }

    /// Disjoint views of levels `n - 2`, `n - 1` (read) and `n` (write).
    pub fn split_step(&mut self, n: usize) -> (&[T], &[T], &mut [T]) {
        let w = self.n_values;
        let (head, tail) = self.data.split_at_mut(n * w);
        let (a, b) = head[(n - 2) * w..].split_at(w);
        (a, b, &mut tail[..w])
    }

    /// Trace on the boundary layout of `disc`.
    pub fn boundary_trace(&self, disc: &Discretization<T>) -> NodeSeries<T> {
        let b = disc.boundary();
        let mut out = NodeSeries::zeros(b.len(), self.n_levels);
        for n in 0..self.n_levels {
            let src = self.level(n);
            let dst = out.level_mut(n);
            for (i, &d) in b.dofs.iter().enumerate() {
                dst[3 * i..3 * i + 3].copy_from_slice(&src[3 * d..3 * d + 3]);
            }
        }
        out
    }

    pub fn max_abs(&self) -> T {
        crate::scalar::max_abs(&self.data)
    }
}
