//! Inversion-ready boundary data: twin synthesis, f–k propagation,
//! calibration, immersing and complementation.

use std::io::{BufRead, Write};

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CoefficientField, DomainSpec, Mesh};
use crate::scalar::Real;
use crate::wave::{solve_forward_g, BoundaryRecord, ForwardConfig, SourceWaveform};

/// Bit of [`BoundaryRecord::sides`] for the upper face `Γ₁`.
pub const TOP_SIDE: u8 = 1 << 5;
/// The measured field component (`E₂`).
pub const MEASURED_COMPONENT: usize = 1;

/// Scalar samples `g(xᵢ, yⱼ, tₙ)` on a uniform detector grid, time-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementPlaneData<T> {
    pub nx: usize,
    pub ny: usize,
    pub nt: usize,
    pub x0: T,
    pub y0: T,
    /// Detector pitch, equal in `x` and `y`.
    pub dx: T,
    pub dt: T,
    pub plane_z: T,
    pub samples: Vec<T>,
}

impl<T: Real> MeasurementPlaneData<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn zeros(nx: usize, ny: usize, nt: usize, x0: T, y0: T, dx: T, dt: T, plane_z: T) -> Self {
        Self { nx, ny, nt, x0, y0, dx, dt, plane_z, samples: vec![T::zero(); nx * ny * nt] }
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize, it: usize) -> usize {
        (it * self.ny + iy) * self.nx + ix
    }

    #[inline]
    pub fn get(&self, ix: usize, iy: usize, it: usize) -> T {
        self.samples[self.index(ix, iy, it)]
    }

    pub fn x(&self, ix: usize) -> T {
        self.x0 + T::from_usize(ix).unwrap() * self.dx
    }

    pub fn y(&self, iy: usize) -> T {
        self.y0 + T::from_usize(iy).unwrap() * self.dx
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 || self.nt == 0 || self.samples.len() != self.nx * self.ny * self.nt {
            return Err(Error::Shape("measurement grid is incomplete".into()));
        }
        if !(self.dx > T::zero() && self.dt > T::zero()) {
            return Err(Error::Geometry("grid spacings must be positive".into()));
        }
        if !crate::scalar::all_finite(&self.samples) {
            return Err(Error::Format("non-finite sample".into()));
        }
        Ok(())
    }

    /// Largest raw sample.
    pub fn max(&self) -> T {
        self.samples.iter().fold(T::neg_infinity(), |m, &v| m.max(v))
    }

    pub fn energy(&self) -> T {
        self.samples.iter().map(|&v| v * v).sum()
    }

    /// Grid index of a point, if it is a detector position.
    pub fn locate(&self, x: T, y: T) -> Option<(usize, usize)> {
        let tol = T::lit(1e-6);
        let fx = (x - self.x0) / self.dx;
        let fy = (y - self.y0) / self.dx;
        let (rx, ry) = (fx.round(), fy.round());
        if (fx - rx).abs() > tol || (fy - ry).abs() > tol || rx < T::zero() || ry < T::zero() {
            return None;
        }
        let (ix, iy) = (rx.to_usize()?, ry.to_usize()?);
        (ix < self.nx && iy < self.ny).then_some((ix, iy))
    }

    /// Text grid: `# nx ny nt dx dt`, `# x0 y0 z`, then one row of `nx`
    /// values per `(t, y)`.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# {} {} {} {:e} {:e}", self.nx, self.ny, self.nt, self.dx, self.dt)?;
        writeln!(w, "# {:e} {:e} {:e}", self.x0, self.y0, self.plane_z)?;
        for row in self.samples.chunks(self.nx) {
            let line: Vec<String> = row.iter().map(|v| format!("{:e}", v.to_f64_lossy())).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let mut header = |what: &str| -> Result<Vec<String>> {
            let line = lines.next().ok_or_else(|| Error::Format(format!("missing {what} header")))??;
            let rest = line.strip_prefix('#').ok_or_else(|| Error::Format(format!("bad {what} header")))?;
            Ok(rest.split_whitespace().map(str::to_owned).collect())
        };
        let h1 = header("size")?;
        let h2 = header("origin")?;
        if h1.len() != 5 || h2.len() != 3 {
            return Err(Error::Format("malformed header".into()));
        }
        let int = |s: &str| s.parse::<usize>().map_err(|e| Error::Format(format!("{s}: {e}")));
        let num = |s: &str| {
            s.parse::<f64>().map(T::lit).map_err(|e| Error::Format(format!("{s}: {e}")))
        };
        let (nx, ny, nt) = (int(&h1[0])?, int(&h1[1])?, int(&h1[2])?);
        let mut d = Self::zeros(nx, ny, nt, num(&h2[0])?, num(&h2[1])?, num(&h1[3])?, num(&h1[4])?, num(&h2[2])?);
        let mut k = 0;
        for line in lines {
            let line = line?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            for tok in line.split_whitespace() {
                if k >= d.samples.len() {
                    return Err(Error::Format("too many samples".into()));
                }
                d.samples[k] = num(tok)?;
                k += 1;
            }
        }
        if k != d.samples.len() {
            return Err(Error::Format(format!("expected {} samples, found {k}", d.samples.len())));
        }
        d.validate()?;
        Ok(d)
    }
}

/// Slots of a record on `Γ₁` and the subset above `Γ`.
fn top_slots<T: Real>(record: &BoundaryRecord<T>, spec: &DomainSpec<T>) -> (Vec<usize>, Vec<bool>) {
    let tol = T::lit(1e-9);
    let slots: Vec<usize> = (0..record.n_nodes()).filter(|&i| record.sides[i] & TOP_SIDE != 0).collect();
    let in_gamma = slots
        .iter()
        .map(|&i| {
            let p = record.positions[i];
            spec.in_gamma_xy(p[0], p[1], tol)
        })
        .collect();
    (slots, in_gamma)
}

/// `E₂` of a record restricted to `Γ` as a detector grid with the node pitch.
pub fn plane_from_record<T: Real>(record: &BoundaryRecord<T>, spec: &DomainSpec<T>) -> Result<MeasurementPlaneData<T>> {
    let (slots, in_gamma) = top_slots(record, spec);
    let gamma: Vec<usize> = slots.iter().zip(&in_gamma).filter(|e| *e.1).map(|e| *e.0).collect();
    if gamma.is_empty() {
        return Err(Error::Geometry("no record nodes above Γ".into()));
    }
    let mut xs: Vec<T> = gamma.iter().map(|&i| record.positions[i][0]).collect();
    let mut ys: Vec<T> = gamma.iter().map(|&i| record.positions[i][1]).collect();
    let dedup = |v: &mut Vec<T>| {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v.dedup_by(|a, b| (*a - *b).abs() < T::lit(1e-9));
    };
    dedup(&mut xs);
    dedup(&mut ys);
    if xs.len() < 2 || ys.len() < 2 {
        return Err(Error::Geometry("Γ needs at least two detectors per axis".into()));
    }
    let dx = xs[1] - xs[0];
    let mut d = MeasurementPlaneData::zeros(
        xs.len(),
        ys.len(),
        record.n_levels(),
        xs[0],
        ys[0],
        dx,
        record.dt,
        record.positions[gamma[0]][2],
    );
    if gamma.len() != d.nx * d.ny {
        return Err(Error::Geometry("nodes above Γ do not form a uniform grid".into()));
    }
    for &i in &gamma {
        let p = record.positions[i];
        let (ix, iy) =
            d.locate(p[0], p[1]).ok_or_else(|| Error::Geometry("nodes above Γ are not uniformly spaced".into()))?;
        for n in 0..d.nt {
            let k = d.index(ix, iy, n);
            d.samples[k] = record.dirichlet.get(n, i, MEASURED_COMPONENT);
        }
    }
    Ok(d)
}

/// Simulated measurement for a known coefficient, with multiplicative
/// uniform noise `v (1 + σ U(−1, 1))`.
#[allow(clippy::too_many_arguments)]
pub fn synthesize_twin_data<T: Real>(
    spec: &DomainSpec<T>,
    mesh: &Mesh<T>,
    eps_true: &CoefficientField<T>,
    config: &ForwardConfig<T>,
    waveform: &SourceWaveform<T>,
    noise_level: T,
    seed: u64,
) -> Result<MeasurementPlaneData<T>> {
    if !(noise_level >= T::zero()) {
        return Err(Error::Config("noise level must be non-negative".into()));
    }
    eps_true.validate(mesh)?;
    let run = solve_forward_g(spec, mesh, eps_true, config, waveform, false)?;
    let mut d = plane_from_record(&run.record, spec)?;
    if noise_level > T::zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in d.samples.iter_mut() {
            let u: f64 = rng.gen_range(-1.0..=1.0);
            *v = *v * (T::one() + noise_level * T::lit(u));
        }
    }
    Ok(d)
}

fn frequencies<T: Real>(n: usize, spacing: T) -> Vec<T> {
    let scale = T::lit(std::f64::consts::TAU) / (T::from_usize(n).unwrap() * spacing);
    (0..n)
        .map(|j| {
            let k = if 2 * j < n { j as f64 } else { j as f64 - n as f64 };
            T::lit(k) * scale
        })
        .collect()
}

/// In-place FFT of a `[nt][ny][nx]` array along one axis.
fn fft_axis<T: Real>(data: &mut [Complex<T>], dims: [usize; 3], axis: usize, inverse: bool) {
    let [nt, ny, nx] = dims;
    let n = dims[axis];
    let mut planner = FftPlanner::<T>::new();
    let fft = if inverse { planner.plan_fft_inverse(n) } else { planner.plan_fft_forward(n) };
    match axis {
        2 => data.par_chunks_mut(nx).for_each(|row| fft.process(row)),
        1 => data.par_chunks_mut(nx * ny).for_each(|slab| {
            let mut buf = vec![Complex::new(T::zero(), T::zero()); ny];
            for ix in 0..nx {
                for iy in 0..ny {
                    buf[iy] = slab[iy * nx + ix];
                }
                fft.process(&mut buf);
                for iy in 0..ny {
                    slab[iy * nx + ix] = buf[iy];
                }
            }
        }),
        _ => {
            let plane = nx * ny;
            let cols: Vec<Vec<Complex<T>>> = (0..plane)
                .into_par_iter()
                .map(|c| {
                    let mut buf: Vec<Complex<T>> = (0..nt).map(|it| data[it * plane + c]).collect();
                    fft.process(&mut buf);
                    buf
                })
                .collect();
            for (c, col) in cols.into_iter().enumerate() {
                for (it, v) in col.into_iter().enumerate() {
                    data[it * plane + c] = v;
                }
            }
        }
    }
}

/// Phase-shift (f–k) extrapolation of the measured field from `plane_z` to
/// `target_z` in air (`c = 1`).
///
/// Components with `ω² ≤ k_x² + k_y²` (evanescent, including the static
/// part) and the temporal Nyquist bin are removed; the rest is shifted by
/// `exp(i sgn(ω) k_z Δz)`, `Δz = plane_z − target_z`, which advances an
/// upgoing wave by its travel time. The transform is periodic in all three
/// directions.
pub fn propagate_data<T: Real>(data: &MeasurementPlaneData<T>, target_z: T) -> Result<MeasurementPlaneData<T>> {
    data.validate()?;
    let dims = [data.nt, data.ny, data.nx];
    let dz = data.plane_z - target_z;
    let mut buf: Vec<Complex<T>> = data.samples.iter().map(|&v| Complex::new(v, T::zero())).collect();
    for axis in 0..3 {
        fft_axis(&mut buf, dims, axis, false);
    }
    let w = frequencies(data.nt, data.dt);
    let kx = frequencies(data.nx, data.dx);
    let ky = frequencies(data.ny, data.dx);
    let plane = data.nx * data.ny;
    buf.par_chunks_mut(plane).enumerate().for_each(|(it, slab)| {
        let omega = w[it];
        let nyquist = data.nt % 2 == 0 && 2 * it == data.nt;
        for iy in 0..data.ny {
            for ix in 0..data.nx {
                let v = &mut slab[iy * data.nx + ix];
                let kz2 = omega * omega - kx[ix] * kx[ix] - ky[iy] * ky[iy];
                if nyquist || !(kz2 > T::zero()) {
                    *v = Complex::new(T::zero(), T::zero());
                } else {
                    let phase = omega.signum() * kz2.sqrt() * dz;
                    *v = *v * Complex::from_polar(T::one(), phase);
                }
            }
        }
    });
    for axis in 0..3 {
        fft_axis(&mut buf, dims, axis, true);
    }
    let norm = T::from_usize(buf.len()).unwrap();
    let mut out = data.clone();
    out.plane_z = target_z;
    for (o, v) in out.samples.iter_mut().zip(&buf) {
        *o = v.re / norm;
    }
    Ok(out)
}

/// Calibration factor `r = E₂,max / g_max` and the scaled data `r g`.
///
/// The data are normalised by `g_max` and the ratios rounded to 24-bit
/// precision before scaling by `E₂,max`, so the result does not depend on
/// the amplitude units of the input (a rescaled record calibrates to the
/// same bits) and a second calibration is the identity.
pub fn calibrate<T: Real>(data: &MeasurementPlaneData<T>, e2_max: T) -> Result<(T, MeasurementPlaneData<T>)> {
    data.validate()?;
    let g_max = data.max();
    if !(g_max > T::zero()) {
        return Err(Error::Calibration(format!("data maximum {g_max} is not positive")));
    }
    if !(e2_max > T::zero()) {
        return Err(Error::Calibration(format!("simulated maximum {e2_max} is not positive")));
    }
    let mut out = data.clone();
    for v in out.samples.iter_mut() {
        let q = T::lit(f64::from((*v / g_max).to_f64_lossy() as f32));
        *v = e2_max * q;
    }
    Ok((e2_max / g_max, out))
}

/// Largest simulated `E₂` over `Γ × [0, T]`.
pub fn simulated_e2_max<T: Real>(sim: &BoundaryRecord<T>, spec: &DomainSpec<T>) -> T {
    let (slots, in_gamma) = top_slots(sim, spec);
    let mut m = T::neg_infinity();
    for n in 0..sim.n_levels() {
        for (&i, _) in slots.iter().zip(&in_gamma).filter(|e| *e.1) {
            m = m.max(sim.dirichlet.get(n, i, MEASURED_COMPONENT));
        }
    }
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImmersingConfig<T> {
    pub beta: T,
}

impl<T: Real> Default for ImmersingConfig<T> {
    fn default() -> Self {
        Self { beta: T::lit(0.5) }
    }
}

impl<T: Real> ImmersingConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > T::zero() && self.beta < T::one()) {
            return Err(Error::Config(format!("immersing threshold β = {} must lie in (0, 1)", self.beta)));
        }
        Ok(())
    }
}

/// `E₂` on the nodes of `Γ₁`, level-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ImmersedTrace<T> {
    /// Record slots of the `Γ₁` nodes.
    pub slots: Vec<usize>,
    pub in_gamma: Vec<bool>,
    pub n_levels: usize,
    pub values: Vec<T>,
}

impl<T: Real> ImmersedTrace<T> {
    #[inline]
    pub fn get(&self, level: usize, j: usize) -> T {
        self.values[level * self.slots.len() + j]
    }
}

/// Keeps the measured value above `Γ` where it reaches `β` times the
/// largest measured value of the same time level; everywhere else on `Γ₁`
/// the simulated `E₂` is used.
pub fn immerse<T: Real>(
    g_incl: &MeasurementPlaneData<T>,
    sim: &BoundaryRecord<T>,
    spec: &DomainSpec<T>,
    cfg: &ImmersingConfig<T>,
) -> Result<ImmersedTrace<T>> {
    cfg.validate()?;
    g_incl.validate()?;
    let n_levels = sim.n_levels();
    if g_incl.nt != n_levels || (g_incl.dt - sim.dt).abs() > T::lit(1e-9) * sim.dt {
        return Err(Error::Shape("measurement and simulation time grids differ".into()));
    }
    let (slots, in_gamma) = top_slots(sim, spec);
    let mut cells = Vec::with_capacity(slots.len());
    for (&i, &g) in slots.iter().zip(&in_gamma) {
        if !g {
            cells.push(None);
            continue;
        }
        let p = sim.positions[i];
        let at = g_incl
            .locate(p[0], p[1])
            .ok_or_else(|| Error::Shape(format!("no detector at ({}, {})", p[0], p[1])))?;
        cells.push(Some(at));
    }
    let m = slots.len();
    let mut values = vec![T::zero(); n_levels * m];
    for n in 0..n_levels {
        let level = &g_incl.samples[n * g_incl.nx * g_incl.ny..(n + 1) * g_incl.nx * g_incl.ny];
        let threshold = cfg.beta * level.iter().fold(T::neg_infinity(), |a, &v| a.max(v));
        for (j, &i) in slots.iter().enumerate() {
            let simulated = sim.dirichlet.get(n, i, MEASURED_COMPONENT);
            values[n * m + j] = match cells[j] {
                Some((ix, iy)) => {
                    let g = g_incl.get(ix, iy, n);
                    if g >= threshold {
                        g
                    } else {
                        simulated
                    }
                }
                None => simulated,
            };
        }
    }
    Ok(ImmersedTrace { slots, in_gamma, n_levels, values })
}

/// Simulation record for `ε_glob` with `E₂` on `Γ₁` replaced by the immersed
/// trace; the Neumann data stay those of the simulation.
pub fn complement_boundary_data<T: Real>(
    sim: &BoundaryRecord<T>,
    immersed: &ImmersedTrace<T>,
) -> Result<BoundaryRecord<T>> {
    if immersed.n_levels != sim.n_levels() || immersed.slots.iter().any(|&i| i >= sim.n_nodes()) {
        return Err(Error::Shape("immersed trace does not match the record".into()));
    }
    let mut out = sim.clone();
    for n in 0..immersed.n_levels {
        for (j, &i) in immersed.slots.iter().enumerate() {
            out.dirichlet.set(n, i, MEASURED_COMPONENT, immersed.get(n, j));
        }
    }
    Ok(out)
}

/// The prior simulation, `E₂,max` over `Γ` and the complemented record in one call.
#[allow(clippy::too_many_arguments)]
pub fn prepare_boundary_data<T: Real>(
    spec: &DomainSpec<T>,
    mesh: &Mesh<T>,
    eps_glob: &CoefficientField<T>,
    config: &ForwardConfig<T>,
    waveform: &SourceWaveform<T>,
    measured: &MeasurementPlaneData<T>,
    target_z: Option<T>,
    immersing: &ImmersingConfig<T>,
) -> Result<PreparedData<T>> {
    let sim = solve_forward_g(spec, mesh, eps_glob, config, waveform, false)?.record;
    let propagated = match target_z {
        Some(z) => propagate_data(measured, z)?,
        None => measured.clone(),
    };
    let e2_max = simulated_e2_max(&sim, spec);
    let (factor, g_incl) = calibrate(&propagated, e2_max)?;
    let immersed = immerse(&g_incl, &sim, spec, immersing)?;
    let record = complement_boundary_data(&sim, &immersed)?;
    Ok(PreparedData { record, calibration_factor: factor, simulated: sim })
}

#[derive(Debug, Clone)]
pub struct PreparedData<T> {
    /// `g̃` (Dirichlet) and `p` (Neumann) on the base mesh.
    pub record: BoundaryRecord<T>,
    pub calibration_factor: T,
    pub simulated: BoundaryRecord<T>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> MeasurementPlaneData<f64> {
        let mut d = MeasurementPlaneData::zeros(3, 2, 4, -0.02, 0.0, 0.02, 0.1, 0.04);
        for (k, v) in d.samples.iter_mut().enumerate() {
            *v = (k as f64 * 0.37).sin();
        }
        d
    }

    #[test]
    fn text_round_trip() {
        let d = grid();
        let mut buf = Vec::new();
        d.write_text(&mut buf).unwrap();
        let back = MeasurementPlaneData::read_text(buf.as_slice()).unwrap();
        assert_eq!(back, d);
        let text = String::from_utf8(buf).unwrap();
        let cut = text.trim_end().rfind('\n').unwrap();
        assert!(MeasurementPlaneData::<f64>::read_text(text[..cut].as_bytes()).is_err());
    }

    #[test]
    fn calibration_arithmetic() {
        let mut d = grid();
        d.samples[5] = 10.0;
        let (r, out) = calibrate(&d, 2.0).unwrap();
        assert_eq!(r, 0.2);
        assert_eq!(out.max(), 2.0);
        let (r2, again) = calibrate(&out, 2.0).unwrap();
        assert_eq!(r2, 1.0);
        assert_eq!(again.samples, out.samples);

        let mut big = d.clone();
        big.samples.iter_mut().for_each(|v| *v *= 1000.0);
        let (_, scaled) = calibrate(&big, 2.0).unwrap();
        assert_eq!(scaled.samples, out.samples);

        let mut neg = d.clone();
        neg.samples.iter_mut().for_each(|v| *v = -v.abs() - 1.0);
        assert!(matches!(calibrate(&neg, 2.0), Err(Error::Calibration(_))));
    }

    #[test]
    fn frequency_layout() {
        let f = frequencies(4, 0.25f64);
        let s = std::f64::consts::TAU;
        assert_eq!(f, vec![0.0, s, -2.0 * s, -s]);
    }
}
