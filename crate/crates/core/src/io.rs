//! Binary containers (`WSMESH1` for meshes with cell fields, `WSBND1` for
//! boundary data) and legacy VTK export.
//!
//! All binary numbers are little-endian; reals are stored as `f64`
//! regardless of the working precision.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::data::MeasurementPlaneData;
use crate::error::{Error, Result};
use crate::geometry::{Aabb, CellKey, CoefficientField, Mesh};
use crate::scalar::Real;
use crate::wave::{BoundaryRecord, Discretization, NodeSeries};

pub const MESH_MAGIC: &[u8; 8] = b"WSMESH1\0";
pub const BND_MAGIC: &[u8; 8] = b"WSBND1\0\0";
const VERSION: u32 = 1;
const KIND_RECORD: u32 = 0;
const KIND_PLANE: u32 = 1;

struct Out<W: Write>(W);

impl<W: Write> Out<W> {
    fn u8(&mut self, v: u8) -> Result<()> {
        Ok(self.0.write_all(&[v])?)
    }
    fn u32(&mut self, v: u32) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    fn u64(&mut self, v: u64) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    fn i64(&mut self, v: i64) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    fn real<T: Real>(&mut self, v: T) -> Result<()> {
        Ok(self.0.write_all(&v.to_f64_lossy().to_le_bytes())?)
    }
    fn reals<T: Real>(&mut self, v: &[T]) -> Result<()> {
        v.iter().try_for_each(|&x| self.real(x))
    }
    fn str(&mut self, s: &str) -> Result<()> {
        self.u32(s.len() as u32)?;
        Ok(self.0.write_all(s.as_bytes())?)
    }
}

struct In<R: Read>(R);

impl<R: Read> In<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.0.read_exact(&mut b).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::Format("truncated container".into()),
            _ => Error::Io(e),
        })?;
        Ok(b)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }
    fn len(&mut self, limit: u64) -> Result<usize> {
        let n = self.u64()?;
        if n > limit {
            return Err(Error::Format(format!("implausible length {n}")));
        }
        Ok(n as usize)
    }
    fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.bytes()?))
    }
    fn real<T: Real>(&mut self) -> Result<T> {
        let v = f64::from_le_bytes(self.bytes()?);
        T::from_f64(v).ok_or_else(|| Error::Format(format!("value {v} not representable")))
    }
    fn reals<T: Real>(&mut self, n: usize) -> Result<Vec<T>> {
        (0..n).map(|_| self.real()).collect()
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        if n > 1 << 24 {
            return Err(Error::Format("string too long".into()));
        }
        let mut b = vec![0u8; n];
        self.0.read_exact(&mut b).map_err(|_| Error::Format("truncated container".into()))?;
        String::from_utf8(b).map_err(|e| Error::Format(e.to_string()))
    }
    fn magic(&mut self, expect: &[u8; 8]) -> Result<()> {
        let m = self.bytes::<8>()?;
        if &m != expect {
            return Err(Error::Format(format!("bad magic, expected {}", String::from_utf8_lossy(expect))));
        }
        let v = self.u32()?;
        if v != VERSION {
            return Err(Error::Format(format!("unsupported container version {v}")));
        }
        Ok(())
    }
}

const MAX_ITEMS: u64 = 1 << 40;

/// Mesh geometry, named cell fields and a free-form metadata string.
#[derive(Debug, Clone)]
pub struct MeshFile<T> {
    pub mesh: Mesh<T>,
    pub fields: Vec<(String, Vec<T>)>,
    pub meta: String,
}

impl<T: Real> MeshFile<T> {
    pub fn field(&self, name: &str) -> Option<&[T]> {
        self.fields.iter().find(|f| f.0 == name).map(|f| f.1.as_slice())
    }

    pub fn coefficient(&self, name: &str) -> Result<CoefficientField<T>> {
        let values = self.field(name).ok_or_else(|| Error::Format(format!("no field '{name}'")))?;
        Ok(CoefficientField { values: values.to_vec(), mesh_id: self.mesh.id() })
    }
}

pub fn write_mesh<T: Real, W: Write>(
    w: W,
    mesh: &Mesh<T>,
    fields: &[(&str, &[T])],
    meta: &str,
) -> Result<()> {
    let mut o = Out(w);
    o.0.write_all(MESH_MAGIC)?;
    o.u32(VERSION)?;
    o.reals(&mesh.lo())?;
    o.real(mesh.base_size())?;
    for d in mesh.dims() {
        o.u64(d as u64)?;
    }
    let om = mesh.omega();
    o.reals(&om.lo)?;
    o.reals(&om.hi)?;
    o.u8(mesh.top_cap() as u8)?;
    o.u64(mesh.n_cells() as u64)?;
    for k in mesh.cells() {
        o.u8(k.level)?;
        for d in 0..3 {
            o.i64(k.origin[d])?;
        }
    }
    o.u32(fields.len() as u32)?;
    for (name, values) in fields {
        if values.len() != mesh.n_cells() {
            return Err(Error::Shape(format!("field '{name}' has {} values", values.len())));
        }
        o.str(name)?;
        o.reals(values)?;
    }
    o.str(meta)?;
    o.0.flush()?;
    Ok(())
}

pub fn read_mesh<T: Real, R: Read>(r: R) -> Result<MeshFile<T>> {
    let mut i = In(r);
    i.magic(MESH_MAGIC)?;
    let lo: Vec<T> = i.reals(3)?;
    let base: T = i.real()?;
    let dims = [i.len(1 << 20)?, i.len(1 << 20)?, i.len(1 << 20)?];
    let olo: Vec<T> = i.reals(3)?;
    let ohi: Vec<T> = i.reals(3)?;
    let top_cap = i.u8()? != 0;
    let n = i.len(MAX_ITEMS)?;
    let mut cells = Vec::with_capacity(n.min(1 << 24));
    for _ in 0..n {
        let level = i.u8()?;
        cells.push(CellKey { level, origin: [i.i64()?, i.i64()?, i.i64()?] });
    }
    let nf = i.u32()?;
    let mut fields = Vec::new();
    for _ in 0..nf {
        let name = i.str()?;
        fields.push((name, i.reals(n)?));
    }
    let meta = i.str()?;
    let omega = Aabb::new([olo[0], olo[1], olo[2]], [ohi[0], ohi[1], ohi[2]]);
    let mesh = Mesh::from_cells([lo[0], lo[1], lo[2]], base, dims, omega, top_cap, cells);
    Ok(MeshFile { mesh, fields, meta })
}

fn write_series<T: Real, W: Write>(o: &mut Out<W>, s: &NodeSeries<T>) -> Result<()> {
    o.reals(&s.data)
}

/// `WSBND1` with a boundary record.
pub fn write_record<T: Real, W: Write>(w: W, rec: &BoundaryRecord<T>) -> Result<()> {
    let mut o = Out(w);
    o.0.write_all(BND_MAGIC)?;
    o.u32(VERSION)?;
    o.u32(KIND_RECORD)?;
    o.u64(rec.mesh_id)?;
    o.real(rec.dt)?;
    o.u64(rec.n_nodes() as u64)?;
    o.u64(rec.n_levels() as u64)?;
    for k in &rec.keys {
        for d in 0..3 {
            o.i64(k[d])?;
        }
    }
    for p in &rec.positions {
        o.reals(p)?;
    }
    for &s in &rec.sides {
        o.u8(s)?;
    }
    write_series(&mut o, &rec.dirichlet)?;
    write_series(&mut o, &rec.neumann)?;
    o.0.flush()?;
    Ok(())
}

/// `WSBND1` with a detector-plane grid.
pub fn write_plane<T: Real, W: Write>(w: W, d: &MeasurementPlaneData<T>) -> Result<()> {
    let mut o = Out(w);
    o.0.write_all(BND_MAGIC)?;
    o.u32(VERSION)?;
    o.u32(KIND_PLANE)?;
    for n in [d.nx, d.ny, d.nt] {
        o.u64(n as u64)?;
    }
    for v in [d.x0, d.y0, d.dx, d.dt, d.plane_z] {
        o.real(v)?;
    }
    o.reals(&d.samples)?;
    o.0.flush()?;
    Ok(())
}

/// Contents of a `WSBND1` container.
#[derive(Debug, Clone)]
pub enum BoundaryFile<T> {
    Record(BoundaryRecord<T>),
    Plane(MeasurementPlaneData<T>),
}

pub fn read_boundary<T: Real, R: Read>(r: R) -> Result<BoundaryFile<T>> {
    let mut i = In(r);
    i.magic(BND_MAGIC)?;
    match i.u32()? {
        KIND_RECORD => {
            let mesh_id = i.u64()?;
            let dt = i.real()?;
            let n = i.len(MAX_ITEMS)?;
            let levels = i.len(MAX_ITEMS)?;
            let mut keys = Vec::with_capacity(n.min(1 << 24));
            for _ in 0..n {
                keys.push([i.i64()?, i.i64()?, i.i64()?]);
            }
            let mut positions = Vec::with_capacity(n.min(1 << 24));
            for _ in 0..n {
                positions.push([i.real()?, i.real()?, i.real()?]);
            }
            let sides = (0..n).map(|_| i.u8()).collect::<Result<Vec<u8>>>()?;
            let mut series = || -> Result<NodeSeries<T>> {
                Ok(NodeSeries { n_nodes: n, n_levels: levels, data: i.reals(3 * n * levels)? })
            };
            let dirichlet = series()?;
            let neumann = series()?;
            Ok(BoundaryFile::Record(BoundaryRecord { mesh_id, dt, keys, positions, sides, dirichlet, neumann }))
        }
        KIND_PLANE => {
            let (nx, ny, nt) = (i.len(1 << 20)?, i.len(1 << 20)?, i.len(1 << 30)?);
            let (x0, y0, dx, dt, z) = (i.real()?, i.real()?, i.real()?, i.real()?, i.real()?);
            let mut d = MeasurementPlaneData::zeros(nx, ny, nt, x0, y0, dx, dt, z);
            d.samples = i.reals(nx * ny * nt)?;
            d.validate()?;
            Ok(BoundaryFile::Plane(d))
        }
        k => Err(Error::Format(format!("unknown boundary container kind {k}"))),
    }
}

pub fn read_record<T: Real, R: Read>(r: R) -> Result<BoundaryRecord<T>> {
    match read_boundary(r)? {
        BoundaryFile::Record(rec) => Ok(rec),
        BoundaryFile::Plane(_) => Err(Error::Format("expected a boundary record, found a detector plane".into())),
    }
}

pub fn read_plane<T: Real, R: Read>(r: R) -> Result<MeasurementPlaneData<T>> {
    match read_boundary(r)? {
        BoundaryFile::Plane(p) => Ok(p),
        BoundaryFile::Record(_) => Err(Error::Format("expected a detector plane, found a boundary record".into())),
    }
}

/// VTK corner `i` is local corner `VTK_ORDER[i]`.
const VTK_ORDER: [usize; 8] = [0, 1, 3, 2, 4, 5, 7, 6];

/// Legacy ASCII unstructured grid with cell scalars and nodal vectors.
///
/// Nodal vectors are given per free node (dof order of `disc`) and are
/// expanded to hanging nodes.
pub fn write_vtk<T: Real, W: Write>(
    w: W,
    mesh: &Mesh<T>,
    cell_scalars: &[(&str, &[T])],
    point_vectors: &[(&str, &[T])],
    disc: Option<&Discretization<T>>,
) -> Result<()> {
    let mut w = BufWriter::new(w);
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "wavecip mesh {:016x}", mesh.id())?;
    writeln!(w, "ASCII\nDATASET UNSTRUCTURED_GRID")?;
    writeln!(w, "POINTS {} double", mesh.n_nodes())?;
    for n in 0..mesh.n_nodes() {
        let p = mesh.node_pos(n);
        writeln!(w, "{:e} {:e} {:e}", p[0].to_f64_lossy(), p[1].to_f64_lossy(), p[2].to_f64_lossy())?;
    }
    writeln!(w, "CELLS {} {}", mesh.n_cells(), 9 * mesh.n_cells())?;
    for c in 0..mesh.n_cells() {
        let nodes = mesh.cell_nodes(c);
        let ids: Vec<String> = VTK_ORDER.iter().map(|&a| nodes[a].to_string()).collect();
        writeln!(w, "8 {}", ids.join(" "))?;
    }
    writeln!(w, "CELL_TYPES {}", mesh.n_cells())?;
    for _ in 0..mesh.n_cells() {
        writeln!(w, "12")?;
    }
    if !cell_scalars.is_empty() {
        writeln!(w, "CELL_DATA {}", mesh.n_cells())?;
        for (name, values) in cell_scalars {
            if values.len() != mesh.n_cells() {
                return Err(Error::Shape(format!("cell field '{name}' has {} values", values.len())));
            }
            writeln!(w, "SCALARS {name} double 1\nLOOKUP_TABLE default")?;
            for v in values.iter() {
                writeln!(w, "{:e}", v.to_f64_lossy())?;
            }
        }
    }
    if !point_vectors.is_empty() {
        let disc = disc.ok_or_else(|| Error::Shape("nodal output needs the discretization".into()))?;
        writeln!(w, "POINT_DATA {}", mesh.n_nodes())?;
        for (name, x) in point_vectors {
            if x.len() != disc.n_values() {
                return Err(Error::Shape(format!("nodal field '{name}' has {} values", x.len())));
            }
            writeln!(w, "VECTORS {name} double")?;
            for n in 0..mesh.n_nodes() {
                let v: [f64; 3] = std::array::from_fn(|k| disc.node_value(x, n, k).to_f64_lossy());
                writeln!(w, "{:e} {:e} {:e}", v[0], v[1], v[2])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path)?))
}

pub fn save_mesh<T: Real>(path: &Path, mesh: &Mesh<T>, fields: &[(&str, &[T])], meta: &str) -> Result<()> {
    write_mesh(create(path)?, mesh, fields, meta)
}

pub fn load_mesh<T: Real>(path: &Path) -> Result<MeshFile<T>> {
    read_mesh(open(path)?)
}

pub fn save_record<T: Real>(path: &Path, rec: &BoundaryRecord<T>) -> Result<()> {
    write_record(create(path)?, rec)
}

pub fn load_record<T: Real>(path: &Path) -> Result<BoundaryRecord<T>> {
    read_record(open(path)?)
}

pub fn save_plane<T: Real>(path: &Path, d: &MeasurementPlaneData<T>) -> Result<()> {
    write_plane(create(path)?, d)
}

pub fn load_plane<T: Real>(path: &Path) -> Result<MeasurementPlaneData<T>> {
    read_plane(open(path)?)
}

pub fn save_vtk<T: Real>(
    path: &Path,
    mesh: &Mesh<T>,
    cell_scalars: &[(&str, &[T])],
    point_vectors: &[(&str, &[T])],
    disc: Option<&Discretization<T>>,
) -> Result<()> {
    write_vtk(create(path)?, mesh, cell_scalars, point_vectors, disc)
}
