//! Constraints on clean samples, `C1 = { x : g_i(x) <= 0 for all i }`.
//!
//! Every constraint is a single scalar `g_i`; the hinge residual
//! `max(0, g_i(x))` is zero exactly on the feasible side.

use std::fmt;
use std::sync::Arc;

use crate::error::{check_dim, Error, Result};
use crate::num::{dot, norm, Mat};

pub const DEFAULT_TOL: f64 = 1e-8;

/// `a . x <= b`
#[derive(Debug, Clone, PartialEq)]
pub struct LinearIneq {
    pub a: Vec<f64>,
    pub b: f64,
}

impl LinearIneq {
    pub fn new(a: Vec<f64>, b: f64) -> Result<Self> {
        check_normal(&a)?;
        Ok(Self { a, b })
    }
}

/// `lo <= a . x <= hi`
#[derive(Debug, Clone, PartialEq)]
pub struct LinearBand {
    pub a: Vec<f64>,
    pub lo: f64,
    pub hi: f64,
}

impl LinearBand {
    pub fn new(a: Vec<f64>, lo: f64, hi: f64) -> Result<Self> {
        check_normal(&a)?;
        if !(lo <= hi) {
            return Err(Error::Config(format!("band needs lo <= hi, got [{lo}, {hi}]")));
        }
        Ok(Self { a, lo, hi })
    }

    /// The equivalent pair `a . x <= hi` and `-a . x <= -lo`.
    pub fn halves(&self) -> [LinearIneq; 2] {
        [
            LinearIneq { a: self.a.clone(), b: self.hi },
            LinearIneq { a: self.a.iter().map(|v| -v).collect(), b: -self.lo },
        ]
    }
}

/// `(a . x)^2 <= b` with `b > 0`
#[derive(Debug, Clone, PartialEq)]
pub struct QuadIneq {
    pub a: Vec<f64>,
    pub b: f64,
}

impl QuadIneq {
    pub fn new(a: Vec<f64>, b: f64) -> Result<Self> {
        check_normal(&a)?;
        if !(b > 0.0) {
            return Err(Error::Config(format!("quadratic bound must be positive, got {b}")));
        }
        Ok(Self { a, b })
    }
}

/// `|| x[subset] - center || >= radius`. Nonconvex.
#[derive(Debug, Clone, PartialEq)]
pub struct MinDistance {
    pub center: Vec<f64>,
    pub radius: f64,
    pub subset: Vec<usize>,
}

impl MinDistance {
    pub fn new(center: Vec<f64>, radius: f64, subset: Vec<usize>) -> Result<Self> {
        check_dim(center.len(), subset.len())?;
        if !(radius > 0.0) {
            return Err(Error::Config(format!("radius must be positive, got {radius}")));
        }
        Ok(Self { center, radius, subset })
    }

    /// Convenience for constraints over all coordinates.
    pub fn full(center: Vec<f64>, radius: f64) -> Result<Self> {
        let subset = (0..center.len()).collect();
        Self::new(center, radius, subset)
    }

    fn offset(&self, x: &[f64]) -> Vec<f64> {
        self.subset.iter().zip(&self.center).map(|(&i, c)| x[i] - c).collect()
    }
}

pub(crate) type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub(crate) type GradFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// General smooth scalar constraint given by evaluator closures.
#[derive(Clone)]
pub struct SmoothScalar {
    name: String,
    g: ScalarFn,
    grad: GradFn,
}

impl fmt::Debug for SmoothScalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SmoothScalar").field("name", &self.name).finish()
    }
}

impl SmoothScalar {
    /// Builds the constraint, checking the analytic gradient against central
    /// differences (`h = 1e-6`, relative error `<= 1e-5`) at every probe.
    pub fn new<G, D>(name: impl Into<String>, g: G, grad: D, probes: &[Vec<f64>]) -> Result<Self>
    where
        G: Fn(&[f64]) -> f64 + Send + Sync + 'static,
        D: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        let s = Self {
            name: name.into(),
            g: Arc::new(g),
            grad: Arc::new(grad),
        };
        for p in probes {
            s.check_gradient(p, 1e-6, 1e-5)?;
        }
        Ok(s)
    }

    /// Skips the finite-difference check; for compositions of already
    /// validated constraints.
    pub(crate) fn trusted(name: impl Into<String>, g: ScalarFn, grad: GradFn) -> Self {
        Self { name: name.into(), g, grad }
    }

    pub(crate) fn parts(&self) -> (ScalarFn, GradFn) {
        (self.g.clone(), self.grad.clone())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        (self.g)(x)
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        (self.grad)(x)
    }

    fn check_gradient(&self, x: &[f64], h: f64, rel: f64) -> Result<()> {
        let an = self.gradient(x);
        check_dim(x.len(), an.len())?;
        let fd = central_difference(|y| self.value(y), x, h);
        let scale = norm(&an).max(1.0);
        for (i, (a, f)) in an.iter().zip(&fd).enumerate() {
            if (a - f).abs() > rel * scale {
                return Err(Error::Config(format!(
                    "gradient of '{}' disagrees with finite differences at coordinate {i}: {a} vs {f}",
                    self.name
                )));
            }
        }
        Ok(())
    }
}

pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut y = x.to_vec();
    (0..x.len())
        .map(|i| {
            let xi = y[i];
            y[i] = xi + h;
            let fp = f(&y);
            y[i] = xi - h;
            let fm = f(&y);
            y[i] = xi;
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

fn check_normal(a: &[f64]) -> Result<()> {
    if a.is_empty() || !(norm(a) > 0.0) {
        return Err(Error::Config("constraint normal must be nonzero".into()));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub enum Constraint {
    Linear(LinearIneq),
    Band(LinearBand),
    Quadratic(QuadIneq),
    MinDistance(MinDistance),
    Smooth(SmoothScalar),
}

impl Constraint {
    pub fn kind(&self) -> &'static str {
        match self {
            Constraint::Linear(_) => "linear",
            Constraint::Band(_) => "band",
            Constraint::Quadratic(_) => "quadratic",
            Constraint::MinDistance(_) => "min_distance",
            Constraint::Smooth(_) => "smooth",
        }
    }

    /// Dimension implied by the constraint data, if any.
    pub fn dim_hint(&self) -> Option<usize> {
        match self {
            Constraint::Linear(c) => Some(c.a.len()),
            Constraint::Band(c) => Some(c.a.len()),
            Constraint::Quadratic(c) => Some(c.a.len()),
            Constraint::MinDistance(_) | Constraint::Smooth(_) => None,
        }
    }

    pub fn is_convex(&self) -> bool {
        !matches!(self, Constraint::MinDistance(_) | Constraint::Smooth(_))
    }

    /// Constraint function `g(x)`; feasible iff `g(x) <= 0`.
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Constraint::Linear(c) => dot(&c.a, x) - c.b,
            Constraint::Band(c) => {
                let s = dot(&c.a, x);
                (s - c.hi).max(c.lo - s)
            }
            Constraint::Quadratic(c) => {
                let s = dot(&c.a, x);
                s * s - c.b
            }
            Constraint::MinDistance(c) => c.radius - norm(&c.offset(x)),
            Constraint::Smooth(c) => c.value(x),
        }
    }

    /// Gradient of `g` at `x`. For bands this is the gradient of the side
    /// that currently attains the max.
    pub fn gradient(&self, x: &[f64], index: usize) -> Result<Vec<f64>> {
        Ok(match self {
            Constraint::Linear(c) => c.a.clone(),
            Constraint::Band(c) => {
                let s = dot(&c.a, x);
                if s - c.hi >= c.lo - s {
                    c.a.clone()
                } else {
                    c.a.iter().map(|v| -v).collect()
                }
            }
            Constraint::Quadratic(c) => {
                let s = 2.0 * dot(&c.a, x);
                c.a.iter().map(|v| s * v).collect()
            }
            Constraint::MinDistance(c) => {
                let off = c.offset(x);
                let n = norm(&off);
                if !(n > 0.0) {
                    return Err(Error::SingularGradient { index });
                }
                let mut gr = vec![0.0; x.len()];
                for (&i, o) in c.subset.iter().zip(&off) {
                    gr[i] = -o / n;
                }
                gr
            }
            Constraint::Smooth(c) => c.gradient(x),
        })
    }
}

/// Ordered list of constraints sharing one state dimension.
#[derive(Debug, Clone)]
pub struct ConstraintSet {
    dim: usize,
    constraints: Vec<Constraint>,
    tol: f64,
}

impl ConstraintSet {
    pub fn new(dim: usize, constraints: Vec<Constraint>) -> Result<Self> {
        for c in &constraints {
            if let Some(d) = c.dim_hint() {
                check_dim(dim, d)?;
            }
            if let Constraint::MinDistance(m) = c {
                if m.subset.iter().any(|&i| i >= dim) {
                    return Err(Error::Config("min-distance subset index out of range".into()));
                }
            }
        }
        Ok(Self {
            dim,
            constraints,
            tol: DEFAULT_TOL,
        })
    }

    pub fn empty(dim: usize) -> Self {
        Self { dim, constraints: Vec::new(), tol: DEFAULT_TOL }
    }

    pub fn with_tol(mut self, tol: f64) -> Result<Self> {
        if !(tol > 0.0) {
            return Err(Error::Config(format!("violation tolerance must be positive, got {tol}")));
        }
        self.tol = tol;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn push(&mut self, c: Constraint) -> Result<()> {
        if let Some(d) = c.dim_hint() {
            check_dim(self.dim, d)?;
        }
        self.constraints.push(c);
        Ok(())
    }

    /// True when every member is a halfspace or a slab.
    pub fn is_polyhedral(&self) -> bool {
        self.constraints
            .iter()
            .all(|c| matches!(c, Constraint::Linear(_) | Constraint::Band(_)))
    }

    pub fn is_convex(&self) -> bool {
        self.constraints.iter().all(Constraint::is_convex)
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        check_dim(self.dim, x.len())?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite state".into()));
        }
        Ok(())
    }

    pub fn values(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x)?;
        Ok(self.constraints.iter().map(|c| c.value(x)).collect())
    }

    /// Hinge residuals `max(0, g_i(x))`.
    pub fn residuals(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.values(x)?.into_iter().map(|g| g.max(0.0)).collect())
    }

    /// Indices with `g_i(x) > 0`.
    pub fn active_set(&self, x: &[f64]) -> Result<Vec<usize>> {
        Ok(self
            .values(x)?
            .iter()
            .enumerate()
            .filter(|(_, g)| **g > 0.0)
            .map(|(i, _)| i)
            .collect())
    }

    /// Rows are the gradients of the listed constraints.
    pub fn jacobian_active(&self, x: &[f64], active: &[usize]) -> Result<Mat> {
        self.check_point(x)?;
        let mut j = Mat::zeros(active.len(), self.dim);
        for (row, &i) in active.iter().enumerate() {
            let g = self.constraints[i].gradient(x, i)?;
            check_dim(self.dim, g.len())?;
            j.row_mut(row).copy_from_slice(&g);
        }
        Ok(j)
    }

    /// Largest hinge residual (0 for an empty set).
    pub fn max_violation(&self, x: &[f64]) -> Result<f64> {
        Ok(self.residuals(x)?.into_iter().fold(0.0, f64::max))
    }

    pub fn is_feasible(&self, x: &[f64]) -> Result<bool> {
        Ok(self.max_violation(x)? <= self.tol)
    }
}
