use log::debug;

use crate::error::{Error, Result};
use crate::geometry::{CoefficientField, DomainSpec, Mesh, TimeGrid};
use crate::scalar::{all_finite, Real};
use crate::wave::operator::{Discretization, Scratch, WaveOperator};
use crate::wave::record::{BoundaryRecord, NodeSeries, WaveHistory};
use crate::wave::{ForwardConfig, SourceWaveform};

const CFL_SAFETY: f64 = 0.9;

/// Largest stable time step for the explicit scheme.
///
/// The transverse waves travel at `1/√ε` but the stabilized divergence
/// carries longitudinal waves at `√s`, independent of `ε`; the bound uses
/// the faster of the two.
pub fn cfl_max_dt<T: Real>(mesh: &Mesh<T>, coefficient: &CoefficientField<T>, s: T) -> T {
    let eps_min = coefficient.values.iter().fold(T::infinity(), |m, &v| m.min(v));
    let c_max = s.sqrt().max(T::one() / eps_min.sqrt());
    T::lit(CFL_SAFETY) * mesh.h_min() / (T::lit(3.0).sqrt() * c_max)
}

pub fn check_cfl<T: Real>(mesh: &Mesh<T>, coefficient: &CoefficientField<T>, s: T, dt: T) -> Result<()> {
    let dt_max = cfl_max_dt(mesh, coefficient, s);
    if dt > dt_max {
        return Err(Error::Stability { dt: dt.to_f64_lossy(), dt_max: dt_max.to_f64_lossy() });
    }
    Ok(())
}

/// One central-difference step: `next = 2 cur − prev + dt² M⁻¹ (load − K cur)`.
pub fn leapfrog<T: Real>(
    op: &WaveOperator<'_, T>,
    prev: &[T],
    cur: &[T],
    next: &mut [T],
    load: &[T],
    dt: T,
    scratch: &mut Scratch<T>,
) {
    let mut kx = std::mem::take(&mut scratch.kx);
    kx.resize(cur.len(), T::zero());
    op.apply(cur, &mut kx, scratch);
    let dt2 = dt * dt;
    let two = T::lit(2.0);
    let inv_mass = op.inv_mass();
    for (d, &im) in inv_mass.iter().enumerate() {
        let c = dt2 * im;
        for k in 3 * d..3 * d + 3 {
            next[k] = two * cur[k] - prev[k] + c * (load[k] - kx[k]);
        }
    }
    scratch.kx = kx;
}

/// Runs the scheme from two zero levels, filling `n_levels` levels.
///
/// `load(n, buf)` supplies the right-hand side of the step that produces
/// level `n + 1`; `buf` arrives zeroed.
pub fn leapfrog_history<T: Real>(
    op: &WaveOperator<'_, T>,
    dt: T,
    n_levels: usize,
    mut load: impl FnMut(usize, &mut [T]),
) -> Result<WaveHistory<T>> {
    let disc = op.disc();
    let mut hist = WaveHistory::zeros(disc, dt, n_levels);
    let mut scratch = Scratch::default();
    let mut buf = vec![T::zero(); disc.n_values()];
    for n in 1..n_levels.saturating_sub(1) {
        buf.iter_mut().for_each(|v| *v = T::zero());
        load(n, &mut buf);
        let (prev, cur, next) = hist.split_step(n + 1);
        leapfrog(op, prev, cur, next, &buf, dt, &mut scratch);
        if !all_finite(next) {
            return Err(Error::Divergence { step: n + 1 });
        }
    }
    Ok(hist)
}

/// State problem on `G_b` for an already assembled operator.
pub fn run_state<T: Real>(
    op: &WaveOperator<'_, T>,
    time: &TimeGrid<T>,
    neumann: &NodeSeries<T>,
) -> Result<WaveHistory<T>> {
    let n_levels = time.n_levels();
    if neumann.n_levels != n_levels || neumann.n_nodes != op.disc().boundary().len() {
        return Err(Error::Shape("Neumann data does not match the state problem".into()));
    }
    // p at the last level would only feed level N+1
    leapfrog_history(op, time.dt, n_levels, |n, buf| {
        op.add_boundary_load(neumann.level(n), buf);
    })
}

/// Solves the Neumann-driven state problem on `G_b` from zero initial data.
pub fn solve_state_gb<T: Real>(
    mesh: &Mesh<T>,
    coefficient: &CoefficientField<T>,
    config: &ForwardConfig<T>,
    neumann: &BoundaryRecord<T>,
) -> Result<WaveHistory<T>> {
    coefficient.check_mesh(mesh)?;
    check_cfl(mesh, coefficient, config.s, config.time.dt)?;
    let disc = Discretization::new(mesh);
    neumann.check(&disc, config.time.n_levels())?;
    let op = WaveOperator::new(&disc, coefficient, config.s)?;
    run_state(&op, &config.time, &neumann.neumann)
}

/// Discrete energy between levels `prev` and `cur`.
///
/// `½ ‖(cur − prev)/dt‖²_M + ½ curᵀ K prev` is exactly conserved by the
/// scheme without sources or absorbing terms.
pub fn discrete_energy<T: Real>(op: &WaveOperator<'_, T>, prev: &[T], cur: &[T], dt: T) -> T {
    let diff: Vec<T> = cur.iter().zip(prev).map(|(&a, &b)| (a - b) / dt).collect();
    let half = T::lit(0.5);
    half * op.mass_product(&diff, &diff) + half * op.energy_product(cur, prev)
}

/// Coefficient on the extended mesh: copied on `G_b` cells, 1 above.
pub fn extend_coefficient<T: Real>(
    gb_mesh: &Mesh<T>,
    coefficient: &CoefficientField<T>,
    g_mesh: &Mesh<T>,
) -> CoefficientField<T> {
    let values = g_mesh
        .cells()
        .iter()
        .map(|k| gb_mesh.cell_index(k).map_or(T::one(), |c| coefficient.values[c]))
        .collect();
    CoefficientField { values, mesh_id: g_mesh.id() }
}

/// Output of a forward solve on `G`.
#[derive(Debug, Clone)]
pub struct ForwardRun<T> {
    /// Dirichlet trace and consistent Neumann flux on the boundary of `G_b`.
    pub record: BoundaryRecord<T>,
    /// Field restricted to the nodes of `G_b`, when requested.
    pub history: Option<WaveHistory<T>>,
}

/// Solves the incident-wave problem on `G` and records traces on `∂G_b`.
///
/// `gb_mesh` and `coefficient` live on `G_b`; the mesh is extended upward to
/// the source plane with base-level layers where the coefficient is 1.
/// The recorded Neumann data is the discrete flux that makes
/// [`solve_state_gb`] on `G_b` reproduce this run.
pub fn solve_forward_g<T: Real>(
    spec: &DomainSpec<T>,
    gb_mesh: &Mesh<T>,
    coefficient: &CoefficientField<T>,
    config: &ForwardConfig<T>,
    waveform: &SourceWaveform<T>,
    keep_history: bool,
) -> Result<ForwardRun<T>> {
    coefficient.check_mesh(gb_mesh)?;
    let time = &config.time;
    let dt = time.dt;
    check_cfl(gb_mesh, coefficient, config.s, dt)?;
    let g_mesh = gb_mesh.extend_to_source(spec)?;
    let eps_g = extend_coefficient(gb_mesh, coefficient, &g_mesh);
    let disc_g = Discretization::new(&g_mesh);
    let disc_b = Discretization::new(gb_mesh);
    let op_g = WaveOperator::new(&disc_g, &eps_g, config.s)?;
    let op_b = WaveOperator::new(&disc_b, coefficient, config.s)?;
    debug!(
        "forward solve: {} cells on G, {} on G_b, {} steps",
        g_mesh.n_cells(),
        gb_mesh.n_cells(),
        time.n_steps
    );

    // every free G_b node as a combination of G dofs
    let restrict: Vec<Vec<(usize, T)>> = (0..disc_b.n_dof())
        .map(|d| {
            let key = gb_mesh.node_key(disc_b.node_of_dof(d));
            let n = g_mesh.node_at(&key).expect("G_b node present in G");
            disc_g.node_expansion(n).to_vec()
        })
        .collect();
    let restrict_into = |x: &[T], out: &mut [T]| {
        for (d, ex) in restrict.iter().enumerate() {
            for k in 0..3 {
                out[3 * d + k] = ex.iter().fold(T::zero(), |s, &(g, w)| s + w * x[3 * g + k]);
            }
        }
    };

    let bl = disc_g.boundary();
    const BOTTOM: usize = 4;
    const TOP: usize = 5;
    let top_dofs: Vec<usize> =
        (0..bl.len()).filter(|&i| bl.sides[i] & (1 << TOP) != 0).map(|i| bl.dofs[i]).collect();
    let absorbing = |side: usize| -> Vec<(usize, T)> {
        (0..bl.len())
            .filter(|&i| bl.side_weights[side][i] > T::zero())
            .map(|i| (bl.dofs[i], bl.side_weights[side][i]))
            .collect()
    };
    let bottom_abs = absorbing(BOTTOM);
    let top_abs = absorbing(TOP);

    let n_levels = time.n_levels();
    let mut record = BoundaryRecord::zeros(&disc_b, dt, n_levels);
    let mut history = keep_history.then(|| WaveHistory::zeros(&disc_b, dt, n_levels));

    let ng = disc_g.n_values();
    let nb = disc_b.n_values();
    let mut prev = vec![T::zero(); ng];
    let mut cur = vec![T::zero(); ng];
    let mut next = vec![T::zero(); ng];
    let mut load = vec![T::zero(); ng];
    let mut scratch = Scratch::default();
    let mut eb = [vec![T::zero(); nb], vec![T::zero(); nb], vec![T::zero(); nb]];
    let mut kb = vec![T::zero(); nb];
    let mut scratch_b = Scratch::default();

    let set_top = |x: &mut [T], t: T| {
        let f = waveform.eval(t);
        for &d in &top_dofs {
            x[3 * d] = T::zero();
            x[3 * d + 1] = f;
            x[3 * d + 2] = T::zero();
        }
    };
    set_top(&mut cur, time.time(1));
    restrict_into(&cur, &mut eb[1]);
    let inv_dt = T::one() / dt;
    let inv_dt2 = inv_dt * inv_dt;
    let two = T::lit(2.0);

    for n in 0..n_levels {
        // advance G to level n + 1 (levels 0 and 1 are initial data)
        if n >= 1 {
            load.iter_mut().for_each(|v| *v = T::zero());
            let t_next = time.time(n + 1);
            let dirichlet_on = t_next <= waveform.t1;
            let mut absorb = |list: &[(usize, T)]| {
                for &(d, w) in list {
                    for k in 3 * d..3 * d + 3 {
                        load[k] = load[k] - w * (cur[k] - prev[k]) * inv_dt;
                    }
                }
            };
            absorb(&bottom_abs);
            if !dirichlet_on {
                absorb(&top_abs);
            }
            leapfrog(&op_g, &prev, &cur, &mut next, &load, dt, &mut scratch);
            if dirichlet_on {
                set_top(&mut next, t_next);
            }
            if !all_finite(&next) {
                return Err(Error::Divergence { step: n + 1 });
            }
            std::mem::swap(&mut prev, &mut cur);
            std::mem::swap(&mut cur, &mut next);
            // eb = [level n-1, level n, level n+1]
            eb.rotate_left(1);
            restrict_into(&cur, &mut eb[2]);
        } else {
            // level 1 is already in eb[1]; shift so eb = [-1, 0, 1]
            eb.swap(1, 2);
            eb[1].iter_mut().for_each(|v| *v = T::zero());
        }

        // record level n: trace and flux (M a + K E)/m̃
        op_b.apply(&eb[1], &mut kb, &mut scratch_b);
        let layout = disc_b.boundary();
        let mass = op_b.mass();
        let (dir, neu) = (record.dirichlet.level_mut(n), record.neumann.level_mut(n));
        for (i, &d) in layout.dofs.iter().enumerate() {
            for k in 0..3 {
                let j = 3 * d + k;
                let acc = (eb[2][j] - two * eb[1][j] + eb[0][j]) * inv_dt2;
                dir[3 * i + k] = eb[1][j];
                neu[3 * i + k] = (mass[d] * acc + kb[j]) / layout.weights[i];
            }
        }
        if let Some(h) = history.as_mut() {
            h.level_mut(n).copy_from_slice(&eb[1]);
        }
    }
    Ok(ForwardRun { record, history })
}
