//! Mass-lumped trilinear discretization of the stabilized vector wave operator.
//!
//! For a vector field `E` the element bilinear form is
//!
//! ```text
//! a_K(E, v) = ∫_K ∇E : ∇v  −  (∇·E)(∇·v)  +  s (∇·(ε_K E))(∇·v)
//! ```
//!
//! The gradient term is integrated exactly; both divergence terms use the
//! cell-centre value of `∇·E`, which is also where the gradient assembly
//! evaluates divergences. With `ε` constant per cell the state and adjoint
//! operators coincide and the assembled matrix is symmetric.
//!
//! Degrees of freedom are the three components of every free (non-hanging)
//! mesh node, interleaved as `[E₁, E₂, E₃]` per dof.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::mesh::{face_corners, Mesh, CORNER_OFFSETS, N_FACES};
use crate::geometry::CoefficientField;
use crate::scalar::Real;

/// `u` gathered on the 8 corners of one cell, `[a * 3 + component]`.
pub type Local<T> = [T; 24];

const NO_DOF: usize = usize::MAX;

#[derive(Debug, Clone)]
struct Element<T> {
    nodes: [usize; 8],
    /// Direct dof of every corner when no corner is hanging.
    dofs: Option<[usize; 8]>,
    h: T,
}

/// Boundary dofs of a discretization together with their lumped face weights.
#[derive(Debug, Clone)]
pub struct BoundaryLayout<T> {
    /// Dof index of every boundary node, ascending.
    pub dofs: Vec<usize>,
    /// Integer node keys, used to match nodes across meshes.
    pub keys: Vec<[i64; 3]>,
    pub positions: Vec<[T; 3]>,
    /// Bit `f` is set when the node lies on box face `f`.
    pub sides: Vec<u8>,
    /// Row-summed boundary mass `m̃_i = Σ_faces Σ_corners (area / 4) C_{a,i}`.
    pub weights: Vec<T>,
    /// The same mass restricted to faces on one box side.
    pub side_weights: [Vec<T>; N_FACES],
}

impl<T: Real> BoundaryLayout<T> {
    pub fn len(&self) -> usize {
        self.dofs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dofs.is_empty()
    }
}

/// Geometry-dependent part of the discrete operator; independent of `ε`.
#[derive(Debug, Clone)]
pub struct Discretization<T> {
    mesh_id: u64,
    n_dof: usize,
    node_dof: Vec<usize>,
    expand_ptr: Vec<usize>,
    expand: Vec<(usize, T)>,
    dof_node: Vec<usize>,
    elements: Vec<Element<T>>,
    /// Per cell, `(dof, Σ_a C_{a,dof} |K| / 8)`.
    mass_ptr: Vec<usize>,
    mass_weights: Vec<(usize, T)>,
    in_omega: Vec<bool>,
    volumes: Vec<T>,
    laplace_ref: [[T; 8]; 8],
    grad_ref: [[T; 3]; 8],
    boundary: BoundaryLayout<T>,
}

/// Stiffness of the scalar Laplacian on the unit cube, by 2-point Gauss rule.
pub fn unit_laplace_stiffness<T: Real>() -> [[T; 8]; 8] {
    let g = 0.5 / 3f64.sqrt();
    let pts = [0.5 - g, 0.5 + g];
    let mut k = [[0f64; 8]; 8];
    for &x in &pts {
        for &y in &pts {
            for &z in &pts {
                let q = [x, y, z];
                let grads: Vec<[f64; 3]> = (0..8).map(|a| shape_grad(a, q)).collect();
                for a in 0..8 {
                    for b in 0..8 {
                        let dotg: f64 = (0..3).map(|d| grads[a][d] * grads[b][d]).sum();
                        k[a][b] += dotg / 8.0;
                    }
                }
            }
        }
    }
    k.map(|row| row.map(T::lit))
}

fn shape_grad(a: usize, q: [f64; 3]) -> [f64; 3] {
    let o = CORNER_OFFSETS[a];
    let f = |d: usize| if o[d] == 1 { q[d] } else { 1.0 - q[d] };
    let df = |d: usize| if o[d] == 1 { 1.0 } else { -1.0 };
    [df(0) * f(1) * f(2), f(0) * df(1) * f(2), f(0) * f(1) * df(2)]
}

/// Shape-function gradients at the centre of the unit cube (entries `±1/4`).
pub fn unit_centre_gradients<T: Real>() -> [[T; 3]; 8] {
    let mut g = [[T::zero(); 3]; 8];
    for (a, row) in g.iter_mut().enumerate() {
        let v = shape_grad(a, [0.5; 3]);
        *row = v.map(T::lit);
    }
    g
}

impl<T: Real> Discretization<T> {
    pub fn new(mesh: &Mesh<T>) -> Self {
        let n_nodes = mesh.n_nodes();
        let mut node_dof = vec![NO_DOF; n_nodes];
        let mut dof_node = Vec::new();
        for (n, slot) in node_dof.iter_mut().enumerate() {
            if !mesh.is_hanging(n) {
                *slot = dof_node.len();
                dof_node.push(n);
            }
        }
        let mut expand_ptr = Vec::with_capacity(n_nodes + 1);
        let mut expand = Vec::new();
        expand_ptr.push(0);
        for n in 0..n_nodes {
            match mesh.constraint(n) {
                None => expand.push((node_dof[n], T::one())),
                Some(c) => expand.extend(c.iter().map(|&(p, w)| (node_dof[p], w))),
            }
            expand_ptr.push(expand.len());
        }

        let mut elements = Vec::with_capacity(mesh.n_cells());
        let mut mass_ptr = vec![0usize];
        let mut mass_weights = Vec::new();
        let mut volumes = Vec::with_capacity(mesh.n_cells());
        for c in 0..mesh.n_cells() {
            let nodes = *mesh.cell_nodes(c);
            let conforming = nodes.iter().all(|&n| node_dof[n] != NO_DOF);
            let dofs = conforming.then(|| nodes.map(|n| node_dof[n]));
            let h = mesh.cell_size(c);
            let vol = mesh.cell_volume(c);
            volumes.push(vol);
            elements.push(Element { nodes, dofs, h });
            let mut acc: Vec<(usize, T)> = Vec::with_capacity(8);
            let eighth = vol / T::lit(8.0);
            for &n in &nodes {
                for &(dof, w) in &expand[expand_ptr[n]..expand_ptr[n + 1]] {
                    match acc.iter_mut().find(|e| e.0 == dof) {
                        Some(e) => e.1 = e.1 + w * eighth,
                        None => acc.push((dof, w * eighth)),
                    }
                }
            }
            acc.sort_by_key(|e| e.0);
            mass_weights.extend(acc);
            mass_ptr.push(mass_weights.len());
        }

        let n_dof = dof_node.len();
        let boundary = Self::boundary_layout(mesh, &node_dof, &expand_ptr, &expand, n_dof);
        Self {
            mesh_id: mesh.id(),
            n_dof,
            node_dof,
            expand_ptr,
            expand,
            dof_node,
            elements,
            mass_ptr,
            mass_weights,
            in_omega: (0..mesh.n_cells()).map(|c| mesh.in_omega(c)).collect(),
            volumes,
            laplace_ref: unit_laplace_stiffness(),
            grad_ref: unit_centre_gradients(),
            boundary,
        }
    }

    fn boundary_layout(
        mesh: &Mesh<T>,
        node_dof: &[usize],
        expand_ptr: &[usize],
        expand: &[(usize, T)],
        n_dof: usize,
    ) -> BoundaryLayout<T> {
        let mut side_mass: [Vec<T>; N_FACES] = Default::default();
        for m in side_mass.iter_mut() {
            *m = vec![T::zero(); n_dof];
        }
        let mut sides = vec![0u8; n_dof];
        for c in 0..mesh.n_cells() {
            let h = mesh.cell_size(c);
            let quarter_area = h * h / T::lit(4.0);
            let nodes = mesh.cell_nodes(c);
            for f in 0..N_FACES {
                if !mesh.is_boundary_face(c, f) {
                    continue;
                }
                for a in face_corners(f) {
                    let n = nodes[a];
                    for &(dof, w) in &expand[expand_ptr[n]..expand_ptr[n + 1]] {
                        side_mass[f][dof] = side_mass[f][dof] + w * quarter_area;
                        sides[dof] |= 1 << f;
                    }
                }
            }
        }
        let dofs: Vec<usize> = (0..n_dof).filter(|&d| sides[d] != 0).collect();
        let dof_node: Vec<usize> =
            (0..node_dof.len()).filter(|&n| node_dof[n] != NO_DOF).collect();
        let keys = dofs.iter().map(|&d| mesh.node_key(dof_node[d])).collect();
        let positions = dofs.iter().map(|&d| mesh.node_pos(dof_node[d])).collect();
        let side_weights: [Vec<T>; N_FACES] =
            std::array::from_fn(|f| dofs.iter().map(|&d| side_mass[f][d]).collect());
        let weights = (0..dofs.len())
            .map(|b| side_weights.iter().fold(T::zero(), |s, w| s + w[b]))
            .collect();
        BoundaryLayout {
            sides: dofs.iter().map(|&d| sides[d]).collect(),
            dofs,
            keys,
            positions,
            weights,
            side_weights,
        }
    }

    pub fn mesh_id(&self) -> u64 {
        self.mesh_id
    }
    /// Number of free nodes.
    pub fn n_dof(&self) -> usize {
        self.n_dof
    }
    /// Length of a field vector (three components per dof).
    pub fn n_values(&self) -> usize {
        3 * self.n_dof
    }
    pub fn n_cells(&self) -> usize {
        self.elements.len()
    }
    pub fn boundary(&self) -> &BoundaryLayout<T> {
        &self.boundary
    }
    pub fn dof_of_node(&self, n: usize) -> Option<usize> {
        (self.node_dof[n] != NO_DOF).then_some(self.node_dof[n])
    }
    pub fn node_of_dof(&self, d: usize) -> usize {
        self.dof_node[d]
    }
    pub fn in_omega(&self, c: usize) -> bool {
        self.in_omega[c]
    }
    pub fn volume(&self, c: usize) -> T {
        self.volumes[c]
    }

    /// Value of component `comp` at mesh node `n`, resolving constraints.
    pub fn node_value(&self, x: &[T], n: usize, comp: usize) -> T {
        self.expand[self.expand_ptr[n]..self.expand_ptr[n + 1]]
            .iter()
            .fold(T::zero(), |s, &(d, w)| s + w * x[3 * d + comp])
    }

    /// Expansion of mesh node `n` into `(dof, weight)` pairs.
    pub fn node_expansion(&self, n: usize) -> &[(usize, T)] {
        &self.expand[self.expand_ptr[n]..self.expand_ptr[n + 1]]
    }

    /// `(dof, Σ_a C_{a,dof} |K|/8)` for cell `c`.
    pub fn cell_mass_weights(&self, c: usize) -> &[(usize, T)] {
        &self.mass_weights[self.mass_ptr[c]..self.mass_ptr[c + 1]]
    }

    /// Corner values of cell `c`.
    #[inline]
    pub fn gather(&self, c: usize, x: &[T]) -> Local<T> {
        let e = &self.elements[c];
        let mut u = [T::zero(); 24];
        match &e.dofs {
            Some(dofs) => {
                for a in 0..8 {
                    let d = dofs[a];
                    u[3 * a] = x[3 * d];
                    u[3 * a + 1] = x[3 * d + 1];
                    u[3 * a + 2] = x[3 * d + 2];
                }
            }
            None => {
                for a in 0..8 {
                    let n = e.nodes[a];
                    for &(d, w) in &self.expand[self.expand_ptr[n]..self.expand_ptr[n + 1]] {
                        u[3 * a] = u[3 * a] + w * x[3 * d];
                        u[3 * a + 1] = u[3 * a + 1] + w * x[3 * d + 1];
                        u[3 * a + 2] = u[3 * a + 2] + w * x[3 * d + 2];
                    }
                }
            }
        }
        u
    }

    #[inline]
    fn scatter(&self, c: usize, f: &Local<T>, y: &mut [T]) {
        let e = &self.elements[c];
        match &e.dofs {
            Some(dofs) => {
                for a in 0..8 {
                    let d = dofs[a];
                    y[3 * d] = y[3 * d] + f[3 * a];
                    y[3 * d + 1] = y[3 * d + 1] + f[3 * a + 1];
                    y[3 * d + 2] = y[3 * d + 2] + f[3 * a + 2];
                }
            }
            None => {
                for a in 0..8 {
                    let n = e.nodes[a];
                    for &(d, w) in &self.expand[self.expand_ptr[n]..self.expand_ptr[n + 1]] {
                        y[3 * d] = y[3 * d] + w * f[3 * a];
                        y[3 * d + 1] = y[3 * d + 1] + w * f[3 * a + 1];
                        y[3 * d + 2] = y[3 * d + 2] + w * f[3 * a + 2];
                    }
                }
            }
        }
    }

    /// `h ∇·u` at the centre of cell `c` for gathered corner values.
    #[inline]
    pub fn scaled_divergence(&self, u: &Local<T>) -> T {
        let g = &self.grad_ref;
        let mut s = T::zero();
        for a in 0..8 {
            s = s + g[a][0] * u[3 * a] + g[a][1] * u[3 * a + 1] + g[a][2] * u[3 * a + 2];
        }
        s
    }

    /// `∇·u` at the centre of cell `c`.
    pub fn divergence(&self, c: usize, x: &[T]) -> T {
        let u = self.gather(c, x);
        self.scaled_divergence(&u) / self.elements[c].h
    }

    pub fn cell_size(&self, c: usize) -> T {
        self.elements[c].h
    }

    /// Element force `K_c u` for a cell with divergence weight `coef = sε − 1`.
    #[inline]
    fn element_force(&self, c: usize, coef: T, u: &Local<T>) -> Local<T> {
        let h = self.elements[c].h;
        let lap = &self.laplace_ref;
        let g = &self.grad_ref;
        let mut f = [T::zero(); 24];
        // ∇·(∇E): component-wise Laplacian
        for a in 0..8 {
            let row = &lap[a];
            let mut s0 = T::zero();
            let mut s1 = T::zero();
            let mut s2 = T::zero();
            for b in 0..8 {
                s0 = s0 + row[b] * u[3 * b];
                s1 = s1 + row[b] * u[3 * b + 1];
                s2 = s2 + row[b] * u[3 * b + 2];
            }
            f[3 * a] = h * s0;
            f[3 * a + 1] = h * s1;
            f[3 * a + 2] = h * s2;
        }
        // ∇(∇·E) enters with weight −1, s∇(∇·(εE)) with weight sε
        let div = self.scaled_divergence(u) * coef * h;
        for a in 0..8 {
            f[3 * a] = f[3 * a] + div * g[a][0];
            f[3 * a + 1] = f[3 * a + 1] + div * g[a][1];
            f[3 * a + 2] = f[3 * a + 2] + div * g[a][2];
        }
        f
    }
}

/// The discrete operator for a given coefficient and stabilization constant.
#[derive(Debug, Clone)]
pub struct WaveOperator<'a, T> {
    disc: &'a Discretization<T>,
    eps: Vec<T>,
    /// `s ε_K − 1` per cell.
    div_coef: Vec<T>,
    s: T,
    mass: Vec<T>,
    inv_mass: Vec<T>,
}

/// Reusable buffer for stiffness applications.
#[derive(Debug, Default)]
pub struct Scratch<T> {
    local: Vec<Local<T>>,
    pub(crate) kx: Vec<T>,
}

const PAR_MIN_CELLS: usize = 2048;

impl<'a, T: Real> WaveOperator<'a, T> {
    pub fn new(disc: &'a Discretization<T>, eps: &CoefficientField<T>, s: T) -> Result<Self> {
        if eps.mesh_id != disc.mesh_id || eps.values.len() != disc.n_cells() {
            return Err(Error::Shape("coefficient does not match discretization".into()));
        }
        Ok(Self::from_values(disc, eps.values.clone(), s))
    }

    pub fn from_values(disc: &'a Discretization<T>, eps: Vec<T>, s: T) -> Self {
        let mut mass = vec![T::zero(); disc.n_dof];
        for (c, &e) in eps.iter().enumerate() {
            for &(d, w) in disc.cell_mass_weights(c) {
                mass[d] = mass[d] + e * w;
            }
        }
        let inv_mass = mass.iter().map(|&m| T::one() / m).collect();
        let div_coef = eps.iter().map(|&e| s * e - T::one()).collect();
        Self { disc, eps, div_coef, s, mass, inv_mass }
    }

    pub fn disc(&self) -> &'a Discretization<T> {
        self.disc
    }
    pub fn s(&self) -> T {
        self.s
    }
    pub fn eps(&self) -> &[T] {
        &self.eps
    }
    /// Lumped mass per dof (shared by the three components).
    pub fn mass(&self) -> &[T] {
        &self.mass
    }
    pub fn inv_mass(&self) -> &[T] {
        &self.inv_mass
    }

    /// `y = K x`.
    pub fn apply(&self, x: &[T], y: &mut [T], scratch: &mut Scratch<T>) {
        let disc = self.disc;
        let n = disc.n_cells();
        y.iter_mut().for_each(|v| *v = T::zero());
        if n >= PAR_MIN_CELLS {
            scratch.local.resize(n, [T::zero(); 24]);
            scratch.local.par_iter_mut().with_min_len(256).enumerate().for_each(|(c, out)| {
                let u = disc.gather(c, x);
                *out = disc.element_force(c, self.div_coef[c], &u);
            });
            for (c, f) in scratch.local.iter().enumerate() {
                disc.scatter(c, f, y);
            }
        } else {
            for c in 0..n {
                let u = disc.gather(c, x);
                let f = disc.element_force(c, self.div_coef[c], &u);
                disc.scatter(c, &f, y);
            }
        }
    }

    /// `xᵀ K y`.
    pub fn energy_product(&self, x: &[T], y: &[T]) -> T {
        let disc = self.disc;
        (0..disc.n_cells())
            .map(|c| {
                let u = disc.gather(c, y);
                let v = disc.gather(c, x);
                let f = disc.element_force(c, self.div_coef[c], &u);
                v.iter().zip(&f).fold(T::zero(), |s, (&a, &b)| s + a * b)
            })
            .sum()
    }

    /// `xᵀ M y` with the lumped mass.
    pub fn mass_product(&self, x: &[T], y: &[T]) -> T {
        let mut s = T::zero();
        for (d, &m) in self.mass.iter().enumerate() {
            s = s + m * (x[3 * d] * y[3 * d] + x[3 * d + 1] * y[3 * d + 1] + x[3 * d + 2] * y[3 * d + 2]);
        }
        s
    }

    /// Adds `B q` to `load`, `q` given per boundary node (3 components).
    pub fn add_boundary_load(&self, q: &[T], load: &mut [T]) {
        let b = &self.disc.boundary;
        for (i, &d) in b.dofs.iter().enumerate() {
            let m = b.weights[i];
            load[3 * d] = load[3 * d] + m * q[3 * i];
            load[3 * d + 1] = load[3 * d + 1] + m * q[3 * i + 1];
            load[3 * d + 2] = load[3 * d + 2] + m * q[3 * i + 2];
        }
    }

    /// Largest eigenvalue of `M⁻¹K` by power iteration, for stability checks.
    pub fn max_eigenvalue(&self, iters: usize) -> T {
        let n = self.disc.n_values();
        let mut x: Vec<T> = (0..n)
            .map(|i| T::lit(((i * 7919 % 104_729) as f64 / 104_729.0) - 0.5))
            .collect();
        let mut y = vec![T::zero(); n];
        let mut scratch = Scratch::default();
        let mut lambda = T::zero();
        for _ in 0..iters {
            self.apply(&x, &mut y, &mut scratch);
            for d in 0..self.disc.n_dof {
                for k in 0..3 {
                    y[3 * d + k] = y[3 * d + k] * self.inv_mass[d];
                }
            }
            // Rayleigh quotient in the M inner product
            let num = self.mass_product(&x, &y);
            let den = self.mass_product(&x, &x);
            lambda = num / den;
            let norm = self.mass_product(&y, &y).sqrt();
            for (xi, &yi) in x.iter_mut().zip(&y) {
                *xi = yi / norm;
            }
        }
        lambda
    }
}
