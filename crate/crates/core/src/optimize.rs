//! Fletcher–Reeves conjugate gradients on a fixed mesh.

use std::io::Write;

use log::{debug, info, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CoefficientField, Mesh, EPS_MAX, EPS_MIN};
use crate::gradient::{l2_dot, l2_norm, GradientField, MeshProblem};
use crate::scalar::{max_abs, Real};

/// Backtracking parameters for the Armijo rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineSearchConfig<T> {
    /// First trial step, divided by `max |d|`.
    pub alpha0: T,
    pub backtrack: T,
    pub c: T,
    pub max_trials: usize,
}

impl<T: Real> Default for LineSearchConfig<T> {
    fn default() -> Self {
        Self { alpha0: T::one(), backtrack: T::lit(0.5), c: T::lit(1e-4), max_trials: 20 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CgConfig<T> {
    /// Gradient-norm tolerance `θ`.
    pub theta: T,
    pub max_iters: usize,
    pub line_search: LineSearchConfig<T>,
    pub bounds: (T, T),
    /// `‖ε‖` counts as stabilized when its relative change stays below this
    pub stabilization_tol: T,
    /// for this many consecutive iterations.
    pub stabilization_window: usize,
}

impl<T: Real> Default for CgConfig<T> {
    fn default() -> Self {
        Self {
            theta: T::lit(1e-9),
            max_iters: 20,
            line_search: LineSearchConfig::default(),
            bounds: (T::lit(EPS_MIN), T::lit(EPS_MAX)),
            stabilization_tol: T::lit(1e-4),
            stabilization_window: 3,
        }
    }
}

impl<T: Real> CgConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let ls = &self.line_search;
        if !(self.theta > T::zero()) || !(ls.alpha0 > T::zero()) {
            return Err(Error::Config("θ and α₀ must be positive".into()));
        }
        if !(ls.backtrack > T::zero() && ls.backtrack < T::one()) || ls.max_trials == 0 {
            return Err(Error::Config("invalid backtracking parameters".into()));
        }
        if !(self.bounds.0 >= T::lit(EPS_MIN) && self.bounds.1 <= T::lit(EPS_MAX) && self.bounds.0 < self.bounds.1) {
            return Err(Error::Config("coefficient bounds must lie within [1, 25]".into()));
        }
        Ok(())
    }
}

/// One line of the iteration log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord<T> {
    pub m: usize,
    pub misfit: T,
    pub grad_norm: T,
    pub eps_norm: T,
    pub alpha: T,
    pub beta: T,
}

impl<T: Real> IterationRecord<T> {
    pub const TSV_HEADER: &'static str = "iter\tF\tgrad_norm\teps_norm\talpha\tbeta";

    pub fn tsv(&self) -> String {
        format!(
            "{}\t{:.12e}\t{:.12e}\t{:.12e}\t{:.6e}\t{:.6e}",
            self.m, self.misfit, self.grad_norm, self.eps_norm, self.alpha, self.beta
        )
    }
}

pub fn write_iteration_log<T: Real, W: Write>(history: &[IterationRecord<T>], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{}", IterationRecord::<T>::TSV_HEADER)?;
    for r in history {
        writeln!(w, "{}", r.tsv())?;
    }
    Ok(())
}

/// Current iterate with everything the next CG step needs.
#[derive(Debug, Clone)]
pub struct InversionState<T> {
    pub eps: CoefficientField<T>,
    pub grad: GradientField<T>,
    pub dir: Vec<T>,
    pub beta: T,
    pub misfit: T,
    pub m: usize,
    pub history: Vec<IterationRecord<T>>,
}

/// Clamps every cell to `[1, 25]` and resets cells outside `Ω` to one.
pub fn truncate_bounds<T: Real>(eps: &CoefficientField<T>, mesh: &Mesh<T>) -> CoefficientField<T> {
    truncate_to(eps, mesh, (T::lit(EPS_MIN), T::lit(EPS_MAX)))
}

pub fn truncate_to<T: Real>(eps: &CoefficientField<T>, mesh: &Mesh<T>, (lo, hi): (T, T)) -> CoefficientField<T> {
    let values = eps
        .values
        .iter()
        .enumerate()
        .map(|(c, &v)| if mesh.in_omega(c) { v.max(lo).min(hi) } else { T::one() })
        .collect();
    CoefficientField { values, mesh_id: eps.mesh_id }
}

/// Fletcher–Reeves direction `d = −L' + β d_prev`, `β = ‖L'‖² / ‖L'_prev‖²`.
///
/// Without a previous state, or when the previous gradient vanishes, this
/// is steepest descent with `β = 0`.
pub fn cg_direction<T: Real>(
    problem_disc: &crate::wave::Discretization<T>,
    state: Option<&InversionState<T>>,
    grad_new: &GradientField<T>,
) -> (Vec<T>, T) {
    let steepest: Vec<T> = grad_new.values.iter().map(|&g| -g).collect();
    let Some(prev) = state else {
        return (steepest, T::zero());
    };
    let prev_norm = prev.grad.norm_l2;
    if prev_norm == T::zero() {
        warn!("previous gradient vanished, restarting with steepest descent");
        return (steepest, T::zero());
    }
    let beta = (grad_new.norm_l2 / prev_norm).powi(2);
    let dir: Vec<T> = steepest.iter().zip(&prev.dir).map(|(&s, &d)| s + beta * d).collect();
    if l2_dot(problem_disc, &grad_new.values, &dir) >= T::zero() && grad_new.norm_l2 > T::zero() {
        debug!("conjugate direction is not a descent direction, restarting");
        return (steepest, T::zero());
    }
    (dir, beta)
}

/// Accepted step of a backtracking line search.
#[derive(Debug, Clone)]
pub struct LineSearchResult<T> {
    pub alpha: T,
    pub eps: CoefficientField<T>,
    pub misfit: T,
    pub trials: usize,
}

/// Armijo backtracking on the truncated iterate `P(ε + α d)`.
pub fn line_search_step<T: Real>(
    problem: &MeshProblem<'_, T>,
    eps: &CoefficientField<T>,
    misfit: T,
    grad: &GradientField<T>,
    dir: &[T],
    cfg: &CgConfig<T>,
    mut visit: impl FnMut(&CoefficientField<T>),
) -> Result<LineSearchResult<T>> {
    let slope = l2_dot(&problem.disc, &grad.values, dir);
    armijo_backtrack(problem.mesh, eps, misfit, slope, dir, cfg, |cand| {
        visit(cand);
        problem.misfit(cand)
    })
}

/// Backtracking core; `slope` is `⟨L', d⟩` and `f` evaluates the functional.
pub fn armijo_backtrack<T: Real>(
    mesh: &Mesh<T>,
    eps: &CoefficientField<T>,
    misfit: T,
    slope: T,
    dir: &[T],
    cfg: &CgConfig<T>,
    mut f: impl FnMut(&CoefficientField<T>) -> Result<T>,
) -> Result<LineSearchResult<T>> {
    let ls = &cfg.line_search;
    let dmax = max_abs(dir);
    if !(slope < T::zero()) || dmax == T::zero() {
        return Err(Error::LineSearchStall { trials: 0 });
    }
    let mut alpha = ls.alpha0 / dmax;
    for trial in 1..=ls.max_trials {
        let moved = CoefficientField {
            values: eps.values.iter().zip(dir).map(|(&e, &d)| e + alpha * d).collect(),
            mesh_id: eps.mesh_id,
        };
        let cand = truncate_to(&moved, mesh, cfg.bounds);
        let value = f(&cand)?;
        debug!("line search trial {trial}: α = {alpha:e}, F = {value:e}");
        if value <= misfit + ls.c * alpha * slope {
            return Ok(LineSearchResult { alpha, eps: cand, misfit: value, trials: trial });
        }
        alpha = alpha * ls.backtrack;
    }
    Err(Error::LineSearchStall { trials: ls.max_trials })
}

/// Why the CG loop on one mesh ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CgStop {
    GradientTolerance,
    NormStabilized,
    LineSearchStall,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct CgOutcome<T> {
    pub eps: CoefficientField<T>,
    pub grad: GradientField<T>,
    pub misfit: T,
    /// Number of accepted CG updates `M`.
    pub iterations: usize,
    pub stop: CgStop,
    pub history: Vec<IterationRecord<T>>,
    /// Bound or support violations seen in any evaluated coefficient.
    pub violations: usize,
}

fn norm_stabilized<T: Real>(history: &[IterationRecord<T>], cfg: &CgConfig<T>) -> bool {
    let w = cfg.stabilization_window;
    if w == 0 || history.len() < w + 1 {
        return false;
    }
    history[history.len() - w - 1..].windows(2).all(|p| {
        let (a, b) = (p[0].eps_norm, p[1].eps_norm);
        (b - a).abs() < cfg.stabilization_tol * a.abs().max(T::min_positive_value())
    })
}

/// Runs CG from `initial` until the gradient is small, `‖ε‖` stabilizes,
/// the line search stalls or the iteration cap is reached.
pub fn minimize_on_mesh<T: Real>(
    problem: &MeshProblem<'_, T>,
    initial: &CoefficientField<T>,
    cfg: &CgConfig<T>,
) -> Result<CgOutcome<T>> {
    cfg.validate()?;
    let mesh = problem.mesh;
    let disc = &problem.disc;
    let mut violations = 0usize;
    let mut check = |e: &CoefficientField<T>| violations += e.count_violations(mesh);

    let eps0 = truncate_to(initial, mesh, cfg.bounds);
    check(&eps0);
    let ev = problem.evaluate(&eps0)?;
    let (dir, beta) = cg_direction(disc, None, &ev.gradient);
    let mut state = InversionState {
        history: vec![IterationRecord {
            m: 0,
            misfit: ev.misfit,
            grad_norm: ev.gradient.norm_l2,
            eps_norm: l2_norm(disc, &eps0.values),
            alpha: T::zero(),
            beta,
        }],
        eps: eps0,
        grad: ev.gradient,
        dir,
        beta,
        misfit: ev.misfit,
        m: 0,
    };
    let stop = loop {
        if state.grad.norm_l2 <= cfg.theta {
            break CgStop::GradientTolerance;
        }
        if state.m >= cfg.max_iters {
            break CgStop::MaxIterations;
        }
        let step = match line_search_step(problem, &state.eps, state.misfit, &state.grad, &state.dir, cfg, &mut check) {
            Ok(s) => s,
            Err(Error::LineSearchStall { trials }) => {
                info!("line search stalled after {trials} trials at iteration {}", state.m);
                break CgStop::LineSearchStall;
            }
            Err(e) => return Err(e),
        };
        let ev = problem.evaluate(&step.eps)?;
        let (dir, beta) = cg_direction(disc, Some(&state), &ev.gradient);
        state.m += 1;
        state.history.push(IterationRecord {
            m: state.m,
            misfit: ev.misfit,
            grad_norm: ev.gradient.norm_l2,
            eps_norm: l2_norm(disc, &step.eps.values),
            alpha: step.alpha,
            beta,
        });
        debug!("{}", state.history.last().unwrap().tsv());
        state.eps = step.eps;
        state.grad = ev.gradient;
        state.misfit = ev.misfit;
        state.dir = dir;
        state.beta = beta;
        if norm_stabilized(&state.history, cfg) {
            break CgStop::NormStabilized;
        }
    };
    info!("CG stopped after {} iterations: {stop:?}, F = {:e}", state.m, state.misfit);
    Ok(CgOutcome {
        eps: state.eps,
        grad: state.grad,
        misfit: state.misfit,
        iterations: state.m,
        stop,
        history: state.history,
        violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Aabb;
    use crate::wave::Discretization;

    fn mesh() -> Mesh<f64> {
        Mesh::uniform(Aabb::new([0.0; 3], [3.0; 3]), Aabb::new([0.5; 3], [2.5, 2.5, 3.0]), 0.5, false).unwrap()
    }

    #[test]
    fn truncation_examples() {
        let m = mesh();
        let c = m.locate([1.5, 1.5, 1.5]).unwrap();
        let mut e = CoefficientField::constant(&m, 4.0);
        e.values[c] = 30.0;
        let other = (0..m.n_cells()).find(|&k| m.in_omega(k) && k != c).unwrap();
        e.values[other] = 0.5;
        let outside = (0..m.n_cells()).find(|&k| !m.in_omega(k)).unwrap();
        e.values[outside] = 3.0;
        let t = truncate_bounds(&e, &m);
        assert_eq!(t.values[c], 25.0);
        assert_eq!(t.values[other], 1.0);
        assert_eq!(t.values[outside], 1.0);
        let third = (0..m.n_cells()).find(|&k| m.in_omega(k) && k != c && k != other);
        if let Some(k) = third {
            assert_eq!(t.values[k], 4.0);
        }
        assert_eq!(t.count_violations(&m), 0);
    }

    #[test]
    fn fletcher_reeves_directions() {
        let m = mesh();
        let disc = Discretization::new(&m);
        let vals: Vec<f64> = (0..m.n_cells()).map(|c| if m.in_omega(c) { 1.0 + c as f64 } else { 0.0 }).collect();
        let g = GradientField::new(&disc, vals.clone());
        let (d0, b0) = cg_direction(&disc, None, &g);
        assert_eq!(b0, 0.0);
        assert!(d0.iter().zip(&vals).all(|(d, v)| *d == -v));

        // equal norms: β = 1 and d = −g + d_prev
        let prev = InversionState {
            eps: CoefficientField::constant(&m, 1.0),
            grad: g.clone(),
            dir: vec![-0.1; m.n_cells()],
            beta: 0.0,
            misfit: 0.0,
            m: 0,
            history: vec![],
        };
        let (d1, b1) = cg_direction(&disc, Some(&prev), &g);
        assert!((b1 - 1.0).abs() < 1e-15);
        assert!(d1.iter().zip(&vals).all(|(d, v)| (*d - (-v - 0.1)).abs() < 1e-15));

        let zero = GradientField::zeros(&disc);
        let (dz, _) = cg_direction(&disc, Some(&prev), &zero);
        assert!(dz.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn quadratic_toy_accepts_the_first_trial() {
        // F(ε) = ½ Σ (ε_c − 3)², minimizer reached exactly with α₀ / max|d|
        let m = mesh();
        let target = 3.0;
        let f = |e: &CoefficientField<f64>| -> Result<f64> {
            Ok((0..m.n_cells()).filter(|&c| m.in_omega(c)).map(|c| 0.5 * (e.values[c] - target).powi(2)).sum())
        };
        let eps = CoefficientField::constant(&m, 1.0);
        let grad: Vec<f64> = (0..m.n_cells()).map(|c| if m.in_omega(c) { 1.0 - target } else { 0.0 }).collect();
        let dir: Vec<f64> = grad.iter().map(|g| -g).collect();
        let slope: f64 = grad.iter().zip(&dir).map(|(g, d)| g * d).sum();
        let cfg = CgConfig { line_search: LineSearchConfig { alpha0: 2.0, ..Default::default() }, ..CgConfig::default() };
        let r = armijo_backtrack(&m, &eps, f(&eps).unwrap(), slope, &dir, &cfg, f).unwrap();
        assert_eq!(r.trials, 1);
        assert_eq!(r.misfit, 0.0);
        assert_eq!(r.alpha, 1.0);

        let up: Vec<f64> = grad.clone();
        let stall = armijo_backtrack(&m, &eps, 0.0, -slope, &up, &cfg, f);
        assert!(matches!(stall, Err(Error::LineSearchStall { trials: 0 })));
    }

    #[test]
    fn iteration_log_is_tab_separated() {
        let r = IterationRecord { m: 2, misfit: 1.5, grad_norm: 0.1, eps_norm: 3.0, alpha: 0.5, beta: 0.25 };
        assert_eq!(r.tsv().split('\t').count(), 6);
        let mut buf = Vec::new();
        write_iteration_log(&[r], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("iter\tF\tgrad_norm\teps_norm\talpha\tbeta\n2\t"));
    }
}
