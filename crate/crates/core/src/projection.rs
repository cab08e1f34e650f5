//! Euclidean projections: closed forms for single constraints, Dykstra's
//! cyclic scheme for intersections of halfspaces and slabs, ridge-regularized
//! Gauss-Newton on the active set for everything else, and the decomposed
//! projection onto `C_t(x0) = (1 - t) x0 + t C1`.

use crate::constraints::{Constraint, ConstraintSet};
use crate::error::{Error, Result};
use crate::flow::{affine_map, interpolate};
use crate::num::{axpy, dot, norm, solve_spd};

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionReport {
    pub x_out: Vec<f64>,
    pub iterations: usize,
    pub final_max_violation: f64,
    pub converged: bool,
    /// Max violation before each iteration, then once more at exit.
    pub violation_history: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GnConfig {
    pub lambda: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub step_cap: Option<f64>,
}

impl Default for GnConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-6,
            max_iters: 100,
            tol: 1e-10,
            step_cap: None,
        }
    }
}

impl GnConfig {
    /// One Gauss-Newton correction, as applied after every sampling step.
    pub fn single_pass() -> Self {
        Self {
            max_iters: 1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || !(self.tol > 0.0) {
            return Err(Error::Config("Gauss-Newton needs lambda > 0 and tol > 0".into()));
        }
        if matches!(self.step_cap, Some(c) if !(c > 0.0)) {
            return Err(Error::Config("step cap must be positive".into()));
        }
        Ok(())
    }
}

/// Halfspace projection `x - max(0, a.x - b) a / ||a||^2`.
pub fn project_linear(x: &[f64], a: &[f64], b: f64) -> Vec<f64> {
    let excess = dot(a, x) - b;
    let mut out = x.to_vec();
    if excess > 0.0 {
        axpy(-excess / dot(a, a), a, &mut out);
    }
    out
}

/// Slab projection: clips `a.x` into `[lo, hi]` along `a`.
pub fn project_band(x: &[f64], a: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let s = dot(a, x);
    let target = s.clamp(lo, hi);
    let mut out = x.to_vec();
    if target != s {
        axpy((target - s) / dot(a, a), a, &mut out);
    }
    out
}

/// Closed-form projection onto a single constraint, where one exists.
/// `index` is only used to label a singular min-distance query.
pub fn project_onto(x: &[f64], c: &Constraint, index: usize) -> Result<Option<Vec<f64>>> {
    Ok(match c {
        Constraint::Linear(l) => Some(project_linear(x, &l.a, l.b)),
        Constraint::Band(b) => Some(project_band(x, &b.a, b.lo, b.hi)),
        Constraint::Quadratic(q) => {
            let r = q.b.sqrt();
            Some(project_band(x, &q.a, -r, r))
        }
        Constraint::MinDistance(m) => {
            let off: Vec<f64> = m.subset.iter().zip(&m.center).map(|(&i, c)| x[i] - c).collect();
            let n = norm(&off);
            if n >= m.radius {
                Some(x.to_vec())
            } else if n > 0.0 {
                let mut out = x.to_vec();
                for ((&i, c), o) in m.subset.iter().zip(&m.center).zip(&off) {
                    out[i] = c + o * m.radius / n;
                }
                Some(out)
            } else {
                return Err(Error::SingularGradient { index });
            }
        }
        Constraint::Smooth(_) => None,
    })
}

/// Dykstra's cyclic projections onto the intersection of halfspaces, slabs
/// and quadratic slabs, in declaration order. Converges to the Euclidean
/// projection when the intersection is nonempty. Stops once the iterate is
/// feasible within `tol * (1 + ||y||)` and every constraint carrying a nonzero correction
/// is tight, which are the KKT conditions of the projection problem.
pub fn project_pocs(
    x: &[f64],
    cs: &ConstraintSet,
    max_cycles: usize,
    tol: f64,
) -> Result<ProjectionReport> {
    let cons = cs.constraints();
    if let Some(c) = cons.iter().find(|c| !c.is_convex()) {
        return Err(Error::Config(format!(
            "cyclic projection needs convex closed-form constraints, got {}",
            c.kind()
        )));
    }
    let d = x.len();
    let mut y = x.to_vec();
    let mut incr = vec![vec![0.0; d]; cons.len()];
    let mut history = Vec::new();
    let mut cycles = 0;
    loop {
        let viol = cs.max_violation(&y)?;
        history.push(viol);
        let scaled_tol = tol * (1.0 + norm(&y));
        let kkt = cons
            .iter()
            .zip(&incr)
            .all(|(c, p)| p.iter().all(|v| *v == 0.0) || c.value(&y) >= -scaled_tol);
        if viol <= scaled_tol && kkt {
            return Ok(ProjectionReport {
                x_out: y,
                iterations: cycles,
                final_max_violation: viol,
                converged: true,
                violation_history: history,
            });
        }
        if cycles == max_cycles {
            return Ok(ProjectionReport {
                x_out: y,
                iterations: cycles,
                final_max_violation: viol,
                converged: false,
                violation_history: history,
            });
        }
        for (i, c) in cons.iter().enumerate() {
            let z: Vec<f64> = y.iter().zip(&incr[i]).map(|(a, b)| a + b).collect();
            let p = project_onto(&z, c, i)?.expect("convex kinds have closed forms");
            incr[i] = z.iter().zip(&p).map(|(a, b)| a - b).collect();
            y = p;
        }
        cycles += 1;
    }
}

/// Iterated ridge-regularized Gauss-Newton on the active set:
/// `y = (J J^T + lambda I)^{-1} r`, `x <- x - J^T y`, with hinge residuals
/// `r` and the active set recomputed every iteration.
pub fn gauss_newton_project(x: &[f64], cs: &ConstraintSet, cfg: &GnConfig) -> Result<ProjectionReport> {
    cfg.validate()?;
    let mut x = x.to_vec();
    let mut history = Vec::new();
    let mut iterations = 0;
    loop {
        let g = cs.values(&x)?;
        let viol = g.iter().cloned().fold(0.0, f64::max);
        if let Some(prev) = history.last() {
            if viol > *prev {
                log::debug!("Gauss-Newton violation rose from {prev:e} to {viol:e}");
            }
        }
        history.push(viol);
        if viol <= cfg.tol || iterations == cfg.max_iters {
            return Ok(ProjectionReport {
                x_out: x,
                iterations,
                final_max_violation: viol,
                converged: viol <= cfg.tol,
                violation_history: history,
            });
        }
        let active: Vec<usize> = (0..g.len()).filter(|&i| g[i] > 0.0).collect();
        let r: Vec<f64> = active.iter().map(|&i| g[i]).collect();
        let j = cs.jacobian_active(&x, &active)?;
        let y = solve_spd(&j.gram_ridge(cfg.lambda), &r)?;
        let mut dx = j.tr_matvec(&y);
        if let Some(cap) = cfg.step_cap {
            let n = norm(&dx);
            if n > cap {
                dx.iter_mut().for_each(|v| *v *= cap / n);
            }
        }
        axpy(-1.0, &dx, &mut x);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("Gauss-Newton iterate became non-finite".into()));
        }
        iterations += 1;
    }
}

/// Terminal Newton-Schur refinement: up to `budget` Gauss-Newton iterations
/// (ridge retained). `converged` reports whether the result is feasible
/// within the set's tolerance.
pub fn final_refine(x: &[f64], cs: &ConstraintSet, budget: usize) -> Result<ProjectionReport> {
    let cfg = GnConfig {
        max_iters: budget,
        // drive well below the feasibility verdict so the ridge bias vanishes
        tol: cs.tol() * 1e-4,
        ..GnConfig::default()
    };
    let mut rep = gauss_newton_project(x, cs, &cfg)?;
    rep.converged = rep.final_max_violation <= cs.tol();
    Ok(rep)
}

/// Projection onto `C1`: closed form for a single constraint, Dykstra for
/// several convex closed-form ones, Gauss-Newton otherwise.
pub fn project_clean(x: &[f64], cs: &ConstraintSet, cfg: &GnConfig) -> Result<Vec<f64>> {
    match cs.constraints() {
        [] => Ok(x.to_vec()),
        [c] => match project_onto(x, c, 0)? {
            Some(p) => Ok(p),
            None => Ok(gauss_newton_project(x, cs, cfg)?.x_out),
        },
        _ if cs.is_convex() => Ok(project_pocs(x, cs, 10_000, 1e-12)?.x_out),
        _ => Ok(gauss_newton_project(x, cs, cfg)?.x_out),
    }
}

/// `P_t(x) = (1 - t) x0 + t P_1(M_t(x))`.
pub fn project_decomposed(
    x: &[f64],
    x0: &[f64],
    t: f64,
    cs: &ConstraintSet,
    cfg: &GnConfig,
) -> Result<Vec<f64>> {
    let clean = affine_map(x, x0, t)?;
    let projected = project_clean(&clean, cs, cfg)?;
    interpolate(x0, &projected, t)
}
