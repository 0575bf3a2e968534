//! Hierarchically refinable hexahedral mesh.
//!
//! Cells are axis-aligned cubes addressed by an integer [`CellKey`]: the
//! refinement level and the integer origin measured in units of the finest
//! representable cell (`base_size / 2^MAX_LEVEL`). A level-`ℓ` cell has edge
//! `2^(MAX_LEVEL-ℓ)` units. Refinement bisects a cell along every axis.
//!
//! Level balance is kept across faces and edges, so every hanging node sits
//! at an edge midpoint or a face centre of a coarser leaf. Hanging nodes are
//! constrained to the trilinear interpolant of that leaf; chains of
//! constraints are resolved down to free nodes.

use std::collections::{BTreeSet, HashMap};

use crate::error::{Error, Result};
use crate::geometry::domain::{Aabb, DomainSpec};
use crate::scalar::Real;

/// Deepest refinement level representable by the integer addressing.
pub const MAX_LEVEL: u8 = 8;
const FINE: i64 = 1 << MAX_LEVEL;

/// Local corner `a` of a cell has offsets `(a & 1, (a >> 1) & 1, (a >> 2) & 1)`.
pub const CORNER_OFFSETS: [[i64; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [0, 1, 0],
    [1, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [0, 1, 1],
    [1, 1, 1],
];

/// Face `f` has outward normal along axis `f / 2`, negative for even `f`.
pub const N_FACES: usize = 6;

/// Local corners lying on face `f`, in counter-clockwise-free tensor order.
pub fn face_corners(f: usize) -> [usize; 4] {
    let axis = f / 2;
    let side = (f % 2) as i64;
    let mut out = [0usize; 4];
    let mut k = 0;
    for (a, off) in CORNER_OFFSETS.iter().enumerate() {
        if off[axis] == side {
            out[k] = a;
            k += 1;
        }
    }
    out
}

/// Stable identifier of a cell, valid across meshes with the same base grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellKey {
    pub level: u8,
    pub origin: [i64; 3],
}

impl CellKey {
    /// Edge length in integer units.
    #[inline]
    pub fn size(&self) -> i64 {
        FINE >> self.level
    }

    pub fn corner(&self, a: usize) -> [i64; 3] {
        let s = self.size();
        let o = CORNER_OFFSETS[a];
        [
            self.origin[0] + o[0] * s,
            self.origin[1] + o[1] * s,
            self.origin[2] + o[2] * s,
        ]
    }

    pub fn children(&self) -> [CellKey; 8] {
        let half = self.size() / 2;
        let mut out = [*self; 8];
        for (a, child) in out.iter_mut().enumerate() {
            let o = CORNER_OFFSETS[a];
            child.level = self.level + 1;
            child.origin = [
                self.origin[0] + o[0] * half,
                self.origin[1] + o[1] * half,
                self.origin[2] + o[2] * half,
            ];
        }
        out
    }

    pub fn parent(&self) -> Option<CellKey> {
        if self.level == 0 {
            return None;
        }
        let s = FINE >> (self.level - 1);
        Some(CellKey {
            level: self.level - 1,
            origin: [
                self.origin[0].div_euclid(s) * s,
                self.origin[1].div_euclid(s) * s,
                self.origin[2].div_euclid(s) * s,
            ],
        })
    }

    /// `true` if `other` is this cell or lies inside it.
    pub fn covers(&self, other: &CellKey) -> bool {
        if other.level < self.level {
            return false;
        }
        let s = self.size();
        (0..3).all(|d| other.origin[d] >= self.origin[d] && other.origin[d] < self.origin[d] + s)
    }
}

/// Hexahedral mesh tiling an axis-aligned box.
#[derive(Debug, Clone)]
pub struct Mesh<T> {
    id: u64,
    lo: [T; 3],
    base_size: T,
    dims: [usize; 3],
    omega: Aabb<T>,
    top_cap: bool,
    cells: Vec<CellKey>,
    lookup: HashMap<CellKey, usize>,
    in_omega: Vec<bool>,
    nodes: Vec<[i64; 3]>,
    node_lookup: HashMap<[i64; 3], usize>,
    cell_nodes: Vec<[usize; 8]>,
    adjacency: Vec<[Vec<usize>; N_FACES]>,
    constraints: Vec<Option<Vec<(usize, T)>>>,
}

/// Uniform level-0 tiling of `G_b` with cubes of edge `base_cell_size`.
///
/// Cells touching `Γ₁` are held within one level of the base so the mesh
/// extends conformingly up to the incident plane (see [`Mesh::extend_to_source`]).
pub fn build_base_mesh<T: Real>(spec: &DomainSpec<T>, base_cell_size: T) -> Result<Mesh<T>> {
    spec.validate()?;
    Mesh::uniform(spec.gb_bounds(), spec.omega_bounds, base_cell_size, true)
}

fn divide_exact<T: Real>(extent: T, size: T) -> Result<usize> {
    let q = extent / size;
    let n = q.round();
    if n < T::one() || (q - n).abs() > T::lit(1e-9) * n.max(T::one()) {
        return Err(Error::Geometry(format!(
            "cell size {size} does not divide extent {extent}"
        )));
    }
    Ok(n.to_usize().unwrap())
}

fn fnv1a(bytes: &[u8], mut h: u64) -> u64 {
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

impl<T: Real> Mesh<T> {
    /// Uniform level-0 mesh over `bounds`.
    pub fn uniform(bounds: Aabb<T>, omega: Aabb<T>, base_size: T, top_cap: bool) -> Result<Self> {
        if !(base_size > T::zero()) {
            return Err(Error::Geometry("cell size must be positive".into()));
        }
        let mut dims = [0usize; 3];
        for (d, n) in dims.iter_mut().enumerate() {
            *n = divide_exact(bounds.extent(d), base_size)?;
        }
        let mut cells = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for k in 0..dims[2] as i64 {
            for j in 0..dims[1] as i64 {
                for i in 0..dims[0] as i64 {
                    cells.push(CellKey { level: 0, origin: [i * FINE, j * FINE, k * FINE] });
                }
            }
        }
        Ok(Self::from_cells(bounds.lo, base_size, dims, omega, top_cap, cells))
    }

    /// Assembles all derived tables from a list of leaf cells.
    ///
    /// The caller guarantees that `cells` tile the box exactly.
    pub fn from_cells(
        lo: [T; 3],
        base_size: T,
        dims: [usize; 3],
        omega: Aabb<T>,
        top_cap: bool,
        cells: Vec<CellKey>,
    ) -> Self {
        let lookup: HashMap<CellKey, usize> =
            cells.iter().enumerate().map(|(i, k)| (*k, i)).collect();
        let mut mesh = Self {
            id: 0,
            lo,
            base_size,
            dims,
            omega,
            top_cap,
            cells,
            lookup,
            in_omega: Vec::new(),
            nodes: Vec::new(),
            node_lookup: HashMap::new(),
            cell_nodes: Vec::new(),
            adjacency: Vec::new(),
            constraints: Vec::new(),
        };
        mesh.in_omega = (0..mesh.cells.len())
            .map(|c| mesh.omega.contains(mesh.cell_center(c), mesh.unit() * T::lit(1e-3)))
            .collect();
        mesh.build_nodes();
        mesh.build_adjacency();
        mesh.build_constraints();
        mesh.id = mesh.compute_id();
        mesh
    }

    fn compute_id(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for d in 0..3 {
            h = fnv1a(&self.lo[d].to_f64_lossy().to_le_bytes(), h);
            h = fnv1a(&(self.dims[d] as u64).to_le_bytes(), h);
        }
        h = fnv1a(&self.base_size.to_f64_lossy().to_le_bytes(), h);
        for c in &self.cells {
            h = fnv1a(&[c.level], h);
            for d in 0..3 {
                h = fnv1a(&c.origin[d].to_le_bytes(), h);
            }
        }
        h
    }

    fn build_nodes(&mut self) {
        let mut nodes = Vec::new();
        let mut node_lookup = HashMap::new();
        let mut cell_nodes = Vec::with_capacity(self.cells.len());
        for key in &self.cells {
            let mut local = [0usize; 8];
            for (a, slot) in local.iter_mut().enumerate() {
                let p = key.corner(a);
                *slot = *node_lookup.entry(p).or_insert_with(|| {
                    nodes.push(p);
                    nodes.len() - 1
                });
            }
            cell_nodes.push(local);
        }
        self.nodes = nodes;
        self.node_lookup = node_lookup;
        self.cell_nodes = cell_nodes;
    }

    fn build_adjacency(&mut self) {
        let mut adjacency = Vec::with_capacity(self.cells.len());
        for key in &self.cells {
            let mut faces: [Vec<usize>; N_FACES] = Default::default();
            for (f, slot) in faces.iter_mut().enumerate() {
                let axis = f / 2;
                let dir = if f % 2 == 0 { -1 } else { 1 };
                let s = key.size();
                let mut nb = *key;
                nb.origin[axis] += dir * s;
                if !self.key_inside(&nb) {
                    continue;
                }
                *slot = self.leaves_across(&nb, f ^ 1);
            }
            adjacency.push(faces);
        }
        self.adjacency = adjacency;
    }

    /// Leaves inside (or covering) `region` that touch its face `face`.
    fn leaves_across(&self, region: &CellKey, face: usize) -> Vec<usize> {
        if let Some(&i) = self.lookup.get(region) {
            return vec![i];
        }
        let mut anc = *region;
        while let Some(p) = anc.parent() {
            if let Some(&i) = self.lookup.get(&p) {
                return vec![i];
            }
            anc = p;
        }
        if region.level >= MAX_LEVEL {
            return Vec::new();
        }
        let axis = face / 2;
        let side = (face % 2) as i64;
        let mut out = Vec::new();
        for (a, child) in region.children().iter().enumerate() {
            if CORNER_OFFSETS[a][axis] == side {
                out.extend(self.leaves_across(child, face));
            }
        }
        out
    }

    fn key_inside(&self, key: &CellKey) -> bool {
        (0..3).all(|d| key.origin[d] >= 0 && key.origin[d] < self.dims[d] as i64 * FINE)
    }

    fn build_constraints(&mut self) {
        // direct parents of every hanging node
        let mut direct: Vec<Option<Vec<(usize, T)>>> = vec![None; self.nodes.len()];
        let half = T::lit(0.5);
        let quarter = T::lit(0.25);
        for (c, key) in self.cells.iter().enumerate() {
            if key.size() < 2 {
                continue;
            }
            let corners = &self.cell_nodes[c];
            // edges: corners differing in exactly one offset bit
            for a in 0..8usize {
                for bit in [1usize, 2, 4] {
                    let b = a | bit;
                    if b == a {
                        continue;
                    }
                    let pa = self.nodes[corners[a]];
                    let pb = self.nodes[corners[b]];
                    let mid = [(pa[0] + pb[0]) / 2, (pa[1] + pb[1]) / 2, (pa[2] + pb[2]) / 2];
                    if let Some(&n) = self.node_lookup.get(&mid) {
                        if direct[n].is_none() {
                            direct[n] = Some(vec![(corners[a], half), (corners[b], half)]);
                        }
                    }
                }
            }
            for f in 0..N_FACES {
                let fc = face_corners(f);
                let mut centre = [0i64; 3];
                for &a in &fc {
                    let p = self.nodes[corners[a]];
                    for d in 0..3 {
                        centre[d] += p[d];
                    }
                }
                for v in centre.iter_mut() {
                    *v /= 4;
                }
                if let Some(&n) = self.node_lookup.get(&centre) {
                    if direct[n].is_none() {
                        direct[n] = Some(fc.iter().map(|&a| (corners[a], quarter)).collect());
                    }
                }
            }
        }
        let mut resolved: Vec<Option<Vec<(usize, T)>>> = vec![None; self.nodes.len()];
        for n in 0..self.nodes.len() {
            if direct[n].is_some() {
                let r = Self::resolve(n, &direct);
                resolved[n] = Some(r);
            }
        }
        self.constraints = resolved;
    }

    fn resolve(n: usize, direct: &[Option<Vec<(usize, T)>>]) -> Vec<(usize, T)> {
        match &direct[n] {
            None => vec![(n, T::one())],
            Some(parents) => {
                let mut acc: Vec<(usize, T)> = Vec::new();
                for &(p, w) in parents {
                    for (q, wq) in Self::resolve(p, direct) {
                        match acc.iter_mut().find(|(i, _)| *i == q) {
                            Some(e) => e.1 = e.1 + w * wq,
                            None => acc.push((q, w * wq)),
                        }
                    }
                }
                acc.sort_by_key(|e| e.0);
                acc
            }
        }
    }

    // ---- accessors -------------------------------------------------------

    /// Content hash identifying the cell layout.
    pub fn id(&self) -> u64 {
        self.id
    }
    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }
    pub fn cells(&self) -> &[CellKey] {
        &self.cells
    }
    pub fn cell(&self, c: usize) -> CellKey {
        self.cells[c]
    }
    pub fn cell_index(&self, key: &CellKey) -> Option<usize> {
        self.lookup.get(key).copied()
    }
    pub fn level(&self, c: usize) -> u8 {
        self.cells[c].level
    }
    pub fn levels(&self) -> impl Iterator<Item = u8> + '_ {
        self.cells.iter().map(|k| k.level)
    }
    pub fn in_omega(&self, c: usize) -> bool {
        self.in_omega[c]
    }
    pub fn omega(&self) -> &Aabb<T> {
        &self.omega
    }
    pub fn lo(&self) -> [T; 3] {
        self.lo
    }
    pub fn base_size(&self) -> T {
        self.base_size
    }
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }
    pub fn top_cap(&self) -> bool {
        self.top_cap
    }
    pub fn bounds(&self) -> Aabb<T> {
        let mut hi = self.lo;
        for (d, h) in hi.iter_mut().enumerate() {
            *h = *h + T::from_usize(self.dims[d]).unwrap() * self.base_size;
        }
        Aabb::new(self.lo, hi)
    }
    pub fn cell_nodes(&self, c: usize) -> &[usize; 8] {
        &self.cell_nodes[c]
    }
    pub fn node_key(&self, n: usize) -> [i64; 3] {
        self.nodes[n]
    }
    pub fn node_at(&self, key: &[i64; 3]) -> Option<usize> {
        self.node_lookup.get(key).copied()
    }
    /// Face neighbours of cell `c` across face `f` (empty on the box boundary).
    pub fn adjacency(&self, c: usize, f: usize) -> &[usize] {
        &self.adjacency[c][f]
    }
    /// Resolved constraint of a hanging node, `None` for free nodes.
    pub fn constraint(&self, n: usize) -> Option<&[(usize, T)]> {
        self.constraints[n].as_deref()
    }
    pub fn is_hanging(&self, n: usize) -> bool {
        self.constraints[n].is_some()
    }

    /// Length of one integer unit.
    #[inline]
    pub fn unit(&self) -> T {
        self.base_size / T::from_i64(FINE).unwrap()
    }

    pub fn to_coord(&self, units: [i64; 3]) -> [T; 3] {
        let u = self.unit();
        [
            self.lo[0] + T::from_i64(units[0]).unwrap() * u,
            self.lo[1] + T::from_i64(units[1]).unwrap() * u,
            self.lo[2] + T::from_i64(units[2]).unwrap() * u,
        ]
    }

    pub fn node_pos(&self, n: usize) -> [T; 3] {
        self.to_coord(self.nodes[n])
    }

    pub fn cell_size(&self, c: usize) -> T {
        T::from_i64(self.cells[c].size()).unwrap() * self.unit()
    }

    pub fn cell_volume(&self, c: usize) -> T {
        let h = self.cell_size(c);
        h * h * h
    }

    pub fn cell_center(&self, c: usize) -> [T; 3] {
        let k = self.cells[c];
        let p = self.to_coord(k.origin);
        let half = self.cell_size(c) / T::lit(2.0);
        [p[0] + half, p[1] + half, p[2] + half]
    }

    pub fn cell_bounds(&self, c: usize) -> Aabb<T> {
        let k = self.cells[c];
        let lo = self.to_coord(k.origin);
        let h = self.cell_size(c);
        Aabb::new(lo, [lo[0] + h, lo[1] + h, lo[2] + h])
    }

    pub fn h_min(&self) -> T {
        let max_level = self.levels().max().unwrap_or(0);
        self.base_size / T::from_i64(1i64 << max_level).unwrap()
    }

    pub fn total_volume(&self) -> T {
        (0..self.n_cells()).map(|c| self.cell_volume(c)).sum()
    }

    /// `true` if face `f` of cell `c` lies on the outer boundary of the box.
    pub fn is_boundary_face(&self, c: usize, f: usize) -> bool {
        let k = self.cells[c];
        let axis = f / 2;
        if f % 2 == 0 {
            k.origin[axis] == 0
        } else {
            k.origin[axis] + k.size() == self.dims[axis] as i64 * FINE
        }
    }

    fn touches_top(&self, c: usize) -> bool {
        self.is_boundary_face(c, 5)
    }

    /// Same base grid (origin, spacing, extents).
    pub fn same_base_grid(&self, other: &Mesh<T>) -> bool {
        let tol = self.base_size * T::lit(1e-9);
        self.dims == other.dims
            && (self.base_size - other.base_size).abs() <= tol
            && (0..3).all(|d| (self.lo[d] - other.lo[d]).abs() <= tol)
    }

    /// Leaf containing the point given in doubled integer units.
    pub fn find_leaf_doubled(&self, p2: [i64; 3]) -> Option<usize> {
        for d in 0..3 {
            if p2[d] <= 0 || p2[d] >= 2 * self.dims[d] as i64 * FINE {
                return None;
            }
        }
        for level in 0..=MAX_LEVEL {
            let s = FINE >> level;
            let key = CellKey {
                level,
                origin: [
                    p2[0].div_euclid(2 * s) * s,
                    p2[1].div_euclid(2 * s) * s,
                    p2[2].div_euclid(2 * s) * s,
                ],
            };
            if let Some(&c) = self.lookup.get(&key) {
                return Some(c);
            }
        }
        None
    }

    /// Leaf containing a physical point (ties broken toward larger indices).
    pub fn locate(&self, p: [T; 3]) -> Option<usize> {
        let u = self.unit();
        let mut p2 = [0i64; 3];
        for d in 0..3 {
            let x = ((p[d] - self.lo[d]) / u * T::lit(2.0)).floor().to_i64()?;
            // nudge off cell faces into the interior
            p2[d] = if x % 2 == 0 { x + 1 } else { x };
            let max = 2 * self.dims[d] as i64 * FINE;
            p2[d] = p2[d].clamp(1, max - 1);
        }
        self.find_leaf_doubled(p2)
    }

    /// Probe points (doubled units) just outside every face and edge of `c`.
    fn neighbour_probes(&self, c: usize) -> Vec<[i64; 3]> {
        let k = self.cells[c];
        let s = k.size();
        let lo = [2 * k.origin[0], 2 * k.origin[1], 2 * k.origin[2]];
        let centre = [lo[0] + s, lo[1] + s, lo[2] + s];
        let mut out = Vec::with_capacity(18);
        // per axis: -1 -> just below, 0 -> centre, 1 -> just above
        let offset = |d: usize, o: i64| -> i64 {
            match o {
                -1 => lo[d] - 1,
                1 => lo[d] + 2 * s + 1,
                _ => centre[d],
            }
        };
        for ox in -1..=1i64 {
            for oy in -1..=1i64 {
                for oz in -1..=1i64 {
                    let nz = (ox != 0) as u8 + (oy != 0) as u8 + (oz != 0) as u8;
                    if nz == 1 || nz == 2 {
                        out.push([offset(0, ox), offset(1, oy), offset(2, oz)]);
                    }
                }
            }
        }
        out
    }

    /// Face-and-edge level balance holds everywhere.
    pub fn is_balanced(&self) -> bool {
        (0..self.n_cells()).all(|c| {
            let l = self.level(c);
            self.neighbour_probes(c).into_iter().all(|p| match self.find_leaf_doubled(p) {
                Some(n) => self.level(n) + 1 >= l,
                None => true,
            })
        })
    }

    fn cannot_refine(&self, c: usize) -> bool {
        !self.in_omega[c]
            || self.cells[c].level >= MAX_LEVEL
            || (self.top_cap && self.touches_top(c) && self.cells[c].level >= 1)
    }

    /// Bisects every marked leaf and the closure needed to keep level balance.
    ///
    /// Marked keys that are no longer leaves because they were already
    /// refined are ignored. Marked leaves whose refinement would force a
    /// refinement outside `Ω` are left as they are.
    pub fn refine_cells(&self, marked: &BTreeSet<CellKey>) -> Result<Mesh<T>> {
        let mut todo: BTreeSet<usize> = BTreeSet::new();
        for key in marked {
            match self.lookup.get(key) {
                Some(&c) => {
                    if !self.in_omega[c] {
                        return Err(Error::Refinement(format!(
                            "cell {key:?} lies outside omega"
                        )));
                    }
                    if !self.cannot_refine(c) {
                        todo.insert(c);
                    } else {
                        log::debug!("cell {key:?} is at its maximal level, not refined");
                    }
                }
                None => {
                    let already = self.cells.iter().any(|leaf| key.covers(leaf));
                    if !already {
                        return Err(Error::Refinement(format!("no cell {key:?} in mesh")));
                    }
                }
            }
        }
        let mut forbidden: BTreeSet<usize> = BTreeSet::new();
        loop {
            let mut changed = false;
            let snapshot: Vec<usize> = todo.iter().copied().collect();
            for c in snapshot {
                if !todo.contains(&c) {
                    continue;
                }
                let l = self.level(c);
                for p in self.neighbour_probes(c) {
                    let Some(n) = self.find_leaf_doubled(p) else { continue };
                    if self.level(n) >= l || todo.contains(&n) {
                        continue;
                    }
                    if forbidden.contains(&n) || self.cannot_refine(n) {
                        todo.remove(&c);
                        forbidden.insert(c);
                        changed = true;
                        break;
                    }
                    todo.insert(n);
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        if todo.is_empty() {
            return Ok(self.clone());
        }
        let mut cells = Vec::with_capacity(self.cells.len() + 7 * todo.len());
        for (c, key) in self.cells.iter().enumerate() {
            if todo.contains(&c) {
                cells.extend_from_slice(&key.children());
            } else {
                cells.push(*key);
            }
        }
        Ok(Mesh::from_cells(self.lo, self.base_size, self.dims, self.omega, self.top_cap, cells))
    }

    /// Extends a mesh of `G_b` upward by level-0 layers to cover all of `G`.
    pub fn extend_to_source(&self, spec: &DomainSpec<T>) -> Result<Mesh<T>> {
        let extra = divide_exact(spec.source_z - spec.gamma_z, self.base_size)?;
        let mut cells = self.cells.clone();
        let nz0 = self.dims[2] as i64;
        for k in 0..extra as i64 {
            for j in 0..self.dims[1] as i64 {
                for i in 0..self.dims[0] as i64 {
                    cells.push(CellKey { level: 0, origin: [i * FINE, j * FINE, (nz0 + k) * FINE] });
                }
            }
        }
        let dims = [self.dims[0], self.dims[1], self.dims[2] + extra];
        Ok(Mesh::from_cells(self.lo, self.base_size, dims, self.omega, false, cells))
    }

    /// Number of extra level-0 layers above `G_b` in a mesh built by
    /// [`Mesh::extend_to_source`], given the `G_b` mesh.
    pub fn layers_above(&self, gb: &Mesh<T>) -> usize {
        self.dims[2] - gb.dims[2]
    }
}
