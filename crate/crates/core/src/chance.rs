//! Probabilistic scheduler and the deterministic reformulations that turn
//! clean-sample constraints into constraints on the noisy state `x_t`.
//!
//! Writing `x1 = x_t / t - xi` with `xi = (1 - t) / t * x0 ~ N(0, sigma^2 I)`
//! and `sigma = (1 - t) / t`, a linear chance constraint
//! `P(a . (x_t / t - xi) <= b) >= p` is equivalent to
//! `a . x_t <= t b - t sigma ||a|| z_p`. The quadratic version is enforced
//! through a symmetric slab and a union bound over its two sides.

use std::sync::Arc;

use crate::constraints::{
    Constraint, ConstraintSet, LinearBand, LinearIneq, MinDistance, QuadIneq, SmoothScalar,
};
use crate::error::{check_dim, Error, Result};
use crate::flow::affine_map;
use crate::num::{dot, norm, normal_quantile};

/// Satisfaction probabilities below this make a constraint vacuous.
pub const MIN_SATISFY_PROB: f64 = 1e-12;
/// Satisfaction probabilities are capped at `1 - MIN_SATISFY_PROB`.
pub const MAX_SATISFY_PROB: f64 = 1.0 - 1e-12;

/// `phi(t) = (t / 2)^n`
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scheduler {
    exponent: f64,
}

impl Scheduler {
    pub fn new(exponent: f64) -> Result<Self> {
        if !(exponent > 0.0 && exponent.is_finite()) {
            return Err(Error::Config(format!(
                "scheduler exponent must be positive, got {exponent}"
            )));
        }
        Ok(Self { exponent })
    }

    pub fn exponent(&self) -> f64 {
        self.exponent
    }

    pub fn phi(&self, t: f64) -> f64 {
        (t / 2.0).powf(self.exponent)
    }
}

/// Noise scale `(1 - t) / t` of `xi` along the linear path.
pub fn sigma_of_t(t: f64) -> Result<f64> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::Domain(format!("sigma(t) needs 0 < t <= 1, got {t}")));
    }
    Ok((1.0 - t) / t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TightenedKind {
    /// `a . x_t <= rhs`
    Linear,
    /// `|a . x_t| <= rhs`
    QuadraticBand,
    /// Nothing is enforced at this step.
    Inactive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TightenedConstraint {
    pub kind: TightenedKind,
    pub a: Vec<f64>,
    pub rhs: f64,
}

impl TightenedConstraint {
    pub fn to_constraint(&self) -> Option<Constraint> {
        match self.kind {
            TightenedKind::Linear => Some(Constraint::Linear(LinearIneq {
                a: self.a.clone(),
                b: self.rhs,
            })),
            TightenedKind::QuadraticBand => Some(Constraint::Band(LinearBand {
                a: self.a.clone(),
                lo: -self.rhs,
                hi: self.rhs,
            })),
            TightenedKind::Inactive => None,
        }
    }
}

fn check_prob(p: f64) -> Result<()> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!(
            "satisfaction probability must lie in (0, 1), got {p}"
        )));
    }
    Ok(())
}

/// Shift of the bound: `t sigma ||a|| z_p`. Exactly zero at `t = 1`.
fn margin(a: &[f64], t: f64, z: f64) -> Result<f64> {
    let sigma = sigma_of_t(t)?;
    Ok(t * sigma * norm(a) * z)
}

pub fn tighten_linear(c: &LinearIneq, t: f64, satisfy_prob: f64) -> Result<TightenedConstraint> {
    check_prob(satisfy_prob)?;
    let z = normal_quantile(satisfy_prob)?;
    let rhs = t * c.b - margin(&c.a, t, z)?;
    Ok(TightenedConstraint {
        kind: TightenedKind::Linear,
        a: c.a.clone(),
        rhs,
    })
}

pub fn tighten_quadratic(c: &QuadIneq, t: f64, satisfy_prob: f64) -> Result<TightenedConstraint> {
    check_prob(satisfy_prob)?;
    let z = normal_quantile(0.5 * (1.0 + satisfy_prob))?;
    let sigma = sigma_of_t(t)?;
    let root = c.b.sqrt();
    let shift = sigma * norm(&c.a) * z;
    if root < shift {
        return Ok(TightenedConstraint {
            kind: TightenedKind::Inactive,
            a: c.a.clone(),
            rhs: f64::INFINITY,
        });
    }
    Ok(TightenedConstraint {
        kind: TightenedKind::QuadraticBand,
        a: c.a.clone(),
        rhs: t * (root - shift),
    })
}

/// Tightens each side of a slab at `1 - (1 - p) / 2`. When the tightened
/// slab is empty it collapses to its midpoint, the most probable placement.
pub fn tighten_band(c: &LinearBand, t: f64, satisfy_prob: f64) -> Result<LinearBand> {
    check_prob(satisfy_prob)?;
    let side = 1.0 - 0.5 * (1.0 - satisfy_prob);
    let [upper, lower] = c.halves();
    let hi = tighten_linear(&upper, t, side)?.rhs;
    let lo = -tighten_linear(&lower, t, side)?.rhs;
    let (lo, hi) = if lo > hi {
        let mid = 0.5 * t * (c.lo + c.hi);
        (mid, mid)
    } else {
        (lo, hi)
    };
    Ok(LinearBand { a: c.a.clone(), lo, hi })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Deterministic reformulations that marginalize over the noise.
    Marginal,
    /// `C_t(x0) = (1 - t) x0 + t C1` for the realized noise.
    Pathwise,
}

/// Constraints to enforce on the state at time `t`.
pub fn tighten_set(
    cs: &ConstraintSet,
    t: f64,
    scheduler: &Scheduler,
    mode: Mode,
    x0: Option<&[f64]>,
) -> Result<ConstraintSet> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::Domain(format!("tightening needs 0 < t <= 1, got {t}")));
    }
    match mode {
        Mode::Marginal => tighten_marginal(cs, t, scheduler),
        Mode::Pathwise => {
            let x0 = x0.ok_or_else(|| Error::Config("pathwise mode needs the realized x0".into()))?;
            compose_affine(cs, t, x0)
        }
    }
}

fn tighten_marginal(cs: &ConstraintSet, t: f64, scheduler: &Scheduler) -> Result<ConstraintSet> {
    for c in cs.constraints() {
        if matches!(c, Constraint::MinDistance(_) | Constraint::Smooth(_)) {
            return Err(Error::Config(format!(
                "{} constraints have no marginal reformulation; use pathwise mode",
                c.kind()
            )));
        }
    }
    let phi = scheduler.phi(t);
    let mut out = ConstraintSet::empty(cs.dim()).with_tol(cs.tol())?;
    if phi < MIN_SATISFY_PROB {
        return Ok(out);
    }
    let p = phi.min(MAX_SATISFY_PROB);
    for c in cs.constraints() {
        let tightened = match c {
            Constraint::Linear(l) => tighten_linear(l, t, p)?.to_constraint(),
            Constraint::Quadratic(q) => tighten_quadratic(q, t, p)?.to_constraint(),
            Constraint::Band(b) => Some(Constraint::Band(tighten_band(b, t, p)?)),
            Constraint::MinDistance(_) | Constraint::Smooth(_) => unreachable!(),
        };
        if let Some(tc) = tightened {
            out.push(tc)?;
        }
    }
    Ok(out)
}

/// Rewrites every `g(M_t(x)) <= 0` as an explicit constraint on `x`.
fn compose_affine(cs: &ConstraintSet, t: f64, x0: &[f64]) -> Result<ConstraintSet> {
    check_dim(cs.dim(), x0.len())?;
    let s = 1.0 - t;
    let mut out = ConstraintSet::empty(cs.dim()).with_tol(cs.tol())?;
    for c in cs.constraints() {
        let composed = match c {
            Constraint::Linear(l) => Constraint::Linear(LinearIneq {
                a: l.a.clone(),
                b: t * l.b + s * dot(&l.a, x0),
            }),
            Constraint::Band(b) => {
                let shift = s * dot(&b.a, x0);
                Constraint::Band(LinearBand {
                    a: b.a.clone(),
                    lo: t * b.lo + shift,
                    hi: t * b.hi + shift,
                })
            }
            Constraint::Quadratic(q) => {
                let shift = s * dot(&q.a, x0);
                let half = t * q.b.sqrt();
                Constraint::Band(LinearBand {
                    a: q.a.clone(),
                    lo: shift - half,
                    hi: shift + half,
                })
            }
            Constraint::MinDistance(m) => Constraint::MinDistance(MinDistance {
                center: m
                    .subset
                    .iter()
                    .zip(&m.center)
                    .map(|(&i, c)| s * x0[i] + t * c)
                    .collect(),
                radius: t * m.radius,
                subset: m.subset.clone(),
            }),
            Constraint::Smooth(sm) => {
                let (g, grad) = sm.parts();
                let x0a: Arc<Vec<f64>> = Arc::new(x0.to_vec());
                let x0b = x0a.clone();
                Constraint::Smooth(SmoothScalar::trusted(
                    format!("{}@t={t}", sm.name()),
                    Arc::new(move |x: &[f64]| {
                        g(&affine_map(x, &x0a, t).expect("dimension checked"))
                    }),
                    Arc::new(move |x: &[f64]| {
                        grad(&affine_map(x, &x0b, t).expect("dimension checked"))
                            .into_iter()
                            .map(|v| v / t)
                            .collect()
                    }),
                ))
            }
        };
        out.push(composed)?;
    }
    Ok(out)
}
