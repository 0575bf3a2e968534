//! Moving boundary records between meshes and time grids.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::geometry::{face_corners, Mesh, TimeGrid, CORNER_OFFSETS, MAX_LEVEL};
use crate::scalar::Real;
use crate::wave::operator::Discretization;
use crate::wave::record::{BoundaryRecord, NodeSeries};

/// Bilinear transfer of a record to the boundary nodes of another mesh of
/// the same box. Nodes shared by both meshes keep their values exactly.
pub fn transfer_record<T: Real>(
    record: &BoundaryRecord<T>,
    src_mesh: &Mesh<T>,
    src_disc: &Discretization<T>,
    dst_mesh: &Mesh<T>,
    dst_disc: &Discretization<T>,
) -> Result<BoundaryRecord<T>> {
    record.check(src_disc, record.n_levels())?;
    if !src_mesh.same_base_grid(dst_mesh) {
        return Err(Error::Geometry("meshes do not tile the same box".into()));
    }
    let slot: HashMap<usize, usize> =
        src_disc.boundary().dofs.iter().enumerate().map(|(i, &d)| (d, i)).collect();
    let fine = 1i64 << MAX_LEVEL;
    let extent: [i64; 3] = std::array::from_fn(|d| src_mesh.dims()[d] as i64 * fine);

    // every destination node as a sparse combination of source record slots
    let b = dst_disc.boundary();
    let mut stencils: Vec<Vec<(usize, T)>> = Vec::with_capacity(b.len());
    for (i, key) in b.keys.iter().enumerate() {
        let p2: [i64; 3] = std::array::from_fn(|d| {
            let x = 2 * key[d];
            if x + 1 < 2 * extent[d] { x + 1 } else { x - 1 }
        });
        let c = src_mesh
            .find_leaf_doubled(p2)
            .ok_or_else(|| Error::Geometry(format!("boundary node {key:?} outside source mesh")))?;
        let f = (0..6)
            .find(|&f| b.sides[i] & (1 << f) != 0 && src_mesh.is_boundary_face(c, f))
            .ok_or_else(|| Error::Geometry(format!("no source face for boundary node {key:?}")))?;
        let cell = src_mesh.cell(c);
        let size = cell.size();
        let axis = f / 2;
        let (u_ax, v_ax) = ((axis + 1) % 3, (axis + 2) % 3);
        let u = T::from_i64(key[u_ax] - cell.origin[u_ax]).unwrap() / T::from_i64(size).unwrap();
        let v = T::from_i64(key[v_ax] - cell.origin[v_ax]).unwrap() / T::from_i64(size).unwrap();
        let mut st: Vec<(usize, T)> = Vec::with_capacity(4);
        for a in face_corners(f) {
            let off = CORNER_OFFSETS[a];
            let wu = if off[u_ax] == 1 { u } else { T::one() - u };
            let wv = if off[v_ax] == 1 { v } else { T::one() - v };
            let w = wu * wv;
            if w == T::zero() {
                continue;
            }
            let node = src_mesh.cell_nodes(c)[a];
            for &(dof, cw) in src_disc.node_expansion(node) {
                let s = *slot
                    .get(&dof)
                    .ok_or_else(|| Error::Geometry("face corner is not a boundary node".into()))?;
                match st.iter_mut().find(|e| e.0 == s) {
                    Some(e) => e.1 = e.1 + w * cw,
                    None => st.push((s, w * cw)),
                }
            }
        }
        stencils.push(st);
    }

    let apply = |src: &NodeSeries<T>| {
        let mut out = NodeSeries::zeros(b.len(), src.n_levels);
        for n in 0..src.n_levels {
            let from = src.level(n);
            let to = out.level_mut(n);
            for (i, st) in stencils.iter().enumerate() {
                for k in 0..3 {
                    to[3 * i + k] = st.iter().fold(T::zero(), |acc, &(s, w)| acc + w * from[3 * s + k]);
                }
            }
        }
        out
    };
    let mut out = BoundaryRecord::zeros(dst_disc, record.dt, record.n_levels());
    out.dirichlet = apply(&record.dirichlet);
    out.neumann = apply(&record.neumann);
    Ok(out)
}

/// Piecewise-linear resampling of a record onto another time grid of the
/// same interval.
pub fn resample_record<T: Real>(
    record: &BoundaryRecord<T>,
    src: &TimeGrid<T>,
    dst: &TimeGrid<T>,
) -> Result<BoundaryRecord<T>> {
    if record.n_levels() != src.n_levels() {
        return Err(Error::Shape("record does not match its time grid".into()));
    }
    if (src.t_final - dst.t_final).abs() > T::lit(1e-9) * src.t_final {
        return Err(Error::Shape("time grids cover different intervals".into()));
    }
    let resample = |s: &NodeSeries<T>| {
        let mut out = NodeSeries::zeros(s.n_nodes, dst.n_levels());
        for n in 0..dst.n_levels() {
            let x = dst.time(n) / src.dt;
            let lo = x.floor().to_usize().unwrap_or(0).min(src.n_steps);
            let hi = (lo + 1).min(src.n_steps);
            let w = (x - T::from_usize(lo).unwrap()).max(T::zero()).min(T::one());
            let (a, b) = (s.level(lo), s.level(hi));
            for (o, (&p, &q)) in out.level_mut(n).iter_mut().zip(a.iter().zip(b)) {
                *o = p + w * (q - p);
            }
        }
        out
    };
    Ok(BoundaryRecord {
        dt: dst.dt,
        dirichlet: resample(&record.dirichlet),
        neumann: resample(&record.neumann),
        ..record.clone()
    })
}
