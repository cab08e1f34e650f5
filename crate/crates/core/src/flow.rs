//! Exact marginal velocity fields under the linear (OT) interpolation path.
//!
//! With `x_t = (1 - t) x0 + t x1` and `x0 ~ N(0, I)`, the conditional law of
//! `x_t` given a clean sample `x1` is `N(t x1, (1 - t)^2 I)`. The marginal
//! velocity is the posterior mean of the conditional velocity
//! `(x1 - x_t) / (1 - t)`, i.e. `(E[x1 | x_t] - x) / (1 - t)`, which we
//! evaluate in closed form for empirical and isotropic Gaussian-mixture
//! targets.

use crate::error::{check_dim, Error, Result};
use crate::num::SeededRng;

/// Velocity queries at or above this time are evaluated here instead.
pub const T_CLAMP: f64 = 1.0 - 1e-9;

/// One isotropic Gaussian component `N(mean, scale^2 I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureComponent {
    pub mean: Vec<f64>,
    pub scale: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Empirical { atoms: Vec<Vec<f64>>, weights: Vec<f64> },
    GaussianMixture { components: Vec<MixtureComponent> },
}

impl Target {
    /// Equally weighted empirical target.
    pub fn empirical(atoms: Vec<Vec<f64>>) -> Result<Self> {
        let m = atoms.len();
        Self::weighted_empirical(atoms, vec![1.0 / m.max(1) as f64; m])
    }

    pub fn weighted_empirical(atoms: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::Config("empirical target needs at least one atom".into()));
        }
        check_dim(atoms.len(), weights.len())?;
        check_weights(&weights)?;
        let d = atoms[0].len();
        for a in &atoms {
            check_dim(d, a.len())?;
        }
        Ok(Target::Empirical { atoms, weights })
    }

    pub fn gaussian_mixture(components: Vec<MixtureComponent>) -> Result<Self> {
        let Some(first) = components.first() else {
            return Err(Error::Config("mixture needs at least one component".into()));
        };
        let d = first.mean.len();
        for c in &components {
            check_dim(d, c.mean.len())?;
            if !(c.scale > 0.0) {
                return Err(Error::Config(format!(
                    "mixture scale must be positive, got {}",
                    c.scale
                )));
            }
        }
        let w: Vec<f64> = components.iter().map(|c| c.weight).collect();
        check_weights(&w)?;
        Ok(Target::GaussianMixture { components })
    }

    pub fn dim(&self) -> usize {
        match self {
            Target::Empirical { atoms, .. } => atoms[0].len(),
            Target::GaussianMixture { components } => components[0].mean.len(),
        }
    }

    /// Posterior weights over atoms/components given `x_t = x`.
    pub fn posterior_weights(&self, x: &[f64], t: f64) -> Vec<f64> {
        let one_minus = 1.0 - t;
        let logits: Vec<f64> = match self {
            Target::Empirical { atoms, weights } => {
                let var = one_minus * one_minus;
                atoms
                    .iter()
                    .zip(weights)
                    .map(|(a, w)| {
                        let sq: f64 = x.iter().zip(a).map(|(xi, ai)| (xi - t * ai).powi(2)).sum();
                        w.ln() - 0.5 * sq / var
                    })
                    .collect()
            }
            Target::GaussianMixture { components } => {
                let d = x.len() as f64;
                components
                    .iter()
                    .map(|c| {
                        let var = t * t * c.scale * c.scale + one_minus * one_minus;
                        let sq: f64 = x
                            .iter()
                            .zip(&c.mean)
                            .map(|(xi, mi)| (xi - t * mi).powi(2))
                            .sum();
                        c.weight.ln() - 0.5 * d * var.ln() - 0.5 * sq / var
                    })
                    .collect()
            }
        };
        softmax(&logits)
    }

    /// Posterior mean `E[x1 | x_t = x]`.
    pub fn posterior_mean(&self, x: &[f64], t: f64) -> Vec<f64> {
        let w = self.posterior_weights(x, t);
        let mut out = vec![0.0; x.len()];
        match self {
            Target::Empirical { atoms, .. } => {
                for (wi, a) in w.iter().zip(atoms) {
                    if *wi == 0.0 {
                        continue;
                    }
                    for (o, ai) in out.iter_mut().zip(a) {
                        *o += wi * ai;
                    }
                }
            }
            Target::GaussianMixture { components } => {
                let one_minus = 1.0 - t;
                for (wi, c) in w.iter().zip(components) {
                    if *wi == 0.0 {
                        continue;
                    }
                    let s2 = c.scale * c.scale;
                    let gain = t * s2 / (t * t * s2 + one_minus * one_minus);
                    for ((o, xi), mi) in out.iter_mut().zip(x).zip(&c.mean) {
                        *o += wi * (mi + gain * (xi - t * mi));
                    }
                }
            }
        }
        out
    }
}

impl Target {
    /// One draw from the target.
    pub fn sample(&self, rng: &mut SeededRng) -> Vec<f64> {
        let pick = |weights: &mut dyn Iterator<Item = f64>, u: f64| {
            let mut acc = 0.0;
            let mut last = 0;
            for (i, w) in weights.enumerate() {
                acc += w;
                last = i;
                if u < acc {
                    return i;
                }
            }
            last
        };
        let u = rng.uniform();
        match self {
            Target::Empirical { atoms, weights } => atoms[pick(&mut weights.iter().copied(), u)].clone(),
            Target::GaussianMixture { components } => {
                let c = &components[pick(&mut components.iter().map(|c| c.weight), u)];
                c.mean.iter().map(|m| m + c.scale * rng.std_normal()).collect()
            }
        }
    }
}

fn check_weights(w: &[f64]) -> Result<()> {
    if w.iter().any(|x| !(*x > 0.0)) {
        return Err(Error::Config("weights must be positive".into()));
    }
    let s: f64 = w.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("weights must sum to 1, got {s}")));
    }
    Ok(())
}

/// Numerically stable softmax (log-sum-exp shift).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Anything that can drive the flow ODE.
pub trait VelocityField: Sync {
    fn dim(&self) -> usize;
    fn velocity(&self, x: &[f64], t: f64) -> Result<Vec<f64>>;
}

/// Standard-normal source transported to `target`.
#[derive(Debug, Clone)]
pub struct FlowModel {
    target: Target,
}

impl FlowModel {
    pub fn new(target: Target) -> Self {
        Self { target }
    }

    pub fn target(&self) -> &Target {
        &self.target
    }

    /// `u_t(x) = (E[x1 | x_t = x] - x) / (1 - t)`. Times in
    /// `[T_CLAMP, 1)` are clamped to `T_CLAMP`; `t >= 1` is rejected.
    pub fn exact_velocity(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        check_dim(self.target.dim(), x.len())?;
        if !(0.0..1.0).contains(&t) {
            return Err(Error::Domain(format!("velocity needs 0 <= t < 1, got {t}")));
        }
        let t = t.min(T_CLAMP);
        let mean = self.target.posterior_mean(x, t);
        let inv = 1.0 / (1.0 - t);
        Ok(mean.iter().zip(x).map(|(m, xi)| (m - xi) * inv).collect())
    }
}

impl VelocityField for FlowModel {
    fn dim(&self) -> usize {
        self.target.dim()
    }

    fn velocity(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        self.exact_velocity(x, t)
    }
}

fn check_time(t: f64, allow_zero: bool) -> Result<()> {
    let ok = if allow_zero {
        (0.0..=1.0).contains(&t)
    } else {
        t > 0.0 && t <= 1.0
    };
    if ok {
        Ok(())
    } else {
        Err(Error::Domain(format!("time {t} outside its admissible range")))
    }
}

/// `(1 - t) x0 + t x1`
pub fn interpolate(x0: &[f64], x1: &[f64], t: f64) -> Result<Vec<f64>> {
    check_dim(x0.len(), x1.len())?;
    check_time(t, true)?;
    Ok(x0
        .iter()
        .zip(x1)
        .map(|(a, b)| (1.0 - t) * a + t * b)
        .collect())
}

/// Affine map `M_t(x) = (x - (1 - t) x0) / t`, the inverse of
/// [`interpolate`] in its second argument.
pub fn affine_map(x: &[f64], x0: &[f64], t: f64) -> Result<Vec<f64>> {
    check_dim(x0.len(), x.len())?;
    check_time(t, false)?;
    Ok(x
        .iter()
        .zip(x0)
        .map(|(xi, ai)| (xi - (1.0 - t) * ai) / t)
        .collect())
}

/// Clean sample implied by `x_t` and the realized noise `x0`.
pub fn recover_x1(x_t: &[f64], x0: &[f64], t: f64) -> Result<Vec<f64>> {
    affine_map(x_t, x0, t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_atom(c: Vec<f64>) -> FlowModel {
        FlowModel::new(Target::empirical(vec![c]).unwrap())
    }

    #[test]
    fn interpolation_examples() {
        assert_eq!(interpolate(&[0.0, 0.0], &[2.0, 4.0], 0.5).unwrap(), vec![1.0, 2.0]);
        let x0 = [0.3, -1.2];
        let x1 = [2.5, 7.0];
        assert_eq!(interpolate(&x0, &x1, 0.0).unwrap(), x0.to_vec());
        assert_eq!(interpolate(&x0, &x1, 1.0).unwrap(), x1.to_vec());
        assert!(matches!(
            interpolate(&[0.0], &[1.0, 2.0], 0.5),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn recovery_examples() {
        assert_eq!(recover_x1(&[1.0, 2.0], &[0.0, 0.0], 0.5).unwrap(), vec![2.0, 4.0]);
        assert_eq!(recover_x1(&[1.5, -3.0], &[9.0, 9.0], 1.0).unwrap(), vec![1.5, -3.0]);
        assert!(matches!(recover_x1(&[1.0], &[0.0], 0.0), Err(Error::Domain(_))));
        assert_eq!(affine_map(&[3.0], &[2.0], 0.5).unwrap(), vec![4.0]);
        assert_eq!(affine_map(&[2.0], &[2.0], 0.5).unwrap(), vec![2.0]);
    }

    #[test]
    fn path_inversion_round_trip() {
        let mut rng = SeededRng::new(5, 0);
        for _ in 0..500 {
            let x0 = rng.std_normal_vec(4);
            let x1 = rng.std_normal_vec(4);
            for t in [0.3, 0.05, 0.5, 0.77, 1.0] {
                let xt = interpolate(&x0, &x1, t).unwrap();
                let back = recover_x1(&xt, &x0, t).unwrap();
                let m = affine_map(&xt, &x0, t).unwrap();
                for i in 0..4 {
                    let tol = 1e-12 * (1.0 + x0[i].abs() / t);
                    assert!((back[i] - x1[i]).abs() <= tol);
                    assert_eq!(back[i], m[i]);
                }
            }
        }
    }

    #[test]
    fn single_atom_velocity_closed_form() {
        let m = single_atom(vec![2.0]);
        assert_eq!(m.exact_velocity(&[0.0], 0.5).unwrap(), vec![4.0]);
    }

    #[test]
    fn symmetric_atoms_cancel() {
        let m = FlowModel::new(Target::empirical(vec![vec![-1.0], vec![1.0]]).unwrap());
        for t in [0.0, 0.3, 0.9, 0.999] {
            assert_eq!(m.exact_velocity(&[0.0], t).unwrap(), vec![0.0]);
        }
    }

    #[test]
    fn three_atom_velocity_matches_brute_force_posterior() {
        let atoms = vec![vec![-1.3], vec![0.4], vec![2.2]];
        let weights = vec![0.2, 0.5, 0.3];
        let m = FlowModel::new(Target::weighted_empirical(atoms.clone(), weights.clone()).unwrap());
        let (x, t) = (0.3, 0.7);
        // direct Bayes rule with explicit Gaussian likelihoods
        let var = (1.0f64 - t).powi(2);
        let lik: Vec<f64> = atoms
            .iter()
            .zip(&weights)
            .map(|(a, w)| w * (-(x - t * a[0]).powi(2) / (2.0 * var)).exp())
            .collect();
        let z: f64 = lik.iter().sum();
        let mean: f64 = lik.iter().zip(&atoms).map(|(l, a)| l * a[0]).sum::<f64>() / z;
        let expected = (mean - x) / (1.0 - t);
        let got = m.exact_velocity(&[x], t).unwrap()[0];
        assert!((got - expected).abs() <= 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn mixture_single_component_matches_conjugate_update() {
        let c = MixtureComponent { mean: vec![1.0, -2.0], scale: 0.5, weight: 1.0 };
        let m = FlowModel::new(Target::gaussian_mixture(vec![c]).unwrap());
        let (x, t) = ([0.2, 0.4], 0.6);
        let s2 = 0.25;
        let gain = t * s2 / (t * t * s2 + (1.0 - t) * (1.0 - t));
        let v = m.exact_velocity(&x, t).unwrap();
        for i in 0..2 {
            let mu = [1.0, -2.0][i];
            let post = mu + gain * (x[i] - t * mu);
            assert!((v[i] - (post - x[i]) / (1.0 - t)).abs() < 1e-12);
        }
    }

    #[test]
    fn posterior_weights_form_a_simplex() {
        let mut rng = SeededRng::new(9, 0);
        let atoms: Vec<Vec<f64>> = (0..7).map(|_| rng.std_normal_vec(3)).collect();
        let target = Target::empirical(atoms).unwrap();
        for _ in 0..200 {
            let x = rng.std_normal_vec(3);
            let t = rng.uniform();
            let w = target.posterior_weights(&x, t);
            assert!(w.iter().all(|wi| *wi >= 0.0));
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn near_one_posterior_picks_nearest_atom() {
        let atoms = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 3.0]];
        let target = Target::empirical(atoms.clone()).unwrap();
        let t = 1.0 - 1e-6;
        let x = [0.8 * t, 0.1 * t];
        let mean = target.posterior_mean(&x, t);
        assert!((mean[0] - 1.0).abs() < 1e-12 && mean[1].abs() < 1e-12);
    }

    #[test]
    fn euler_on_single_atom_is_the_straight_line() {
        let c = vec![3.0, -1.0];
        let m = single_atom(c.clone());
        let x0 = vec![0.5, 0.5];
        for n in [10usize, 100] {
            let mut x = x0.clone();
            for k in 0..n {
                let t = k as f64 / n as f64;
                let v = m.exact_velocity(&x, t).unwrap();
                for i in 0..2 {
                    x[i] += v[i] / n as f64;
                }
                let line = interpolate(&x0, &c, (k + 1) as f64 / n as f64).unwrap();
                for i in 0..2 {
                    assert!((x[i] - line[i]).abs() < 1e-9);
                }
            }
            let err = crate::num::dist(&x, &c);
            assert!(err <= crate::num::dist(&c, &x0) / n as f64);
        }
    }

    #[test]
    fn velocity_time_guards() {
        let m = single_atom(vec![1.0]);
        assert!(matches!(m.exact_velocity(&[0.0], 1.0), Err(Error::Domain(_))));
        let clamped = m.exact_velocity(&[0.0], 1.0 - 1e-12).unwrap();
        let at_clamp = m.exact_velocity(&[0.0], T_CLAMP).unwrap();
        assert_eq!(clamped, at_clamp);
        assert!(clamped[0].is_finite());
    }

    #[test]
    fn construction_rejects_bad_targets() {
        assert!(Target::empirical(vec![]).is_err());
        assert!(Target::weighted_empirical(vec![vec![0.0]], vec![0.5]).is_err());
        let bad = MixtureComponent { mean: vec![0.0], scale: 0.0, weight: 1.0 };
        assert!(Target::gaussian_mixture(vec![bad]).is_err());
    }

    #[test]
    fn sampling_matches_weights() {
        let t = Target::weighted_empirical(vec![vec![0.0], vec![1.0]], vec![0.25, 0.75]).unwrap();
        let mut rng = SeededRng::new(1, 0);
        let ones = (0..40_000).filter(|_| t.sample(&mut rng)[0] == 1.0).count() as f64 / 40_000.0;
        assert!((ones - 0.75).abs() < 4.0 * (0.75f64 * 0.25 / 40_000.0).sqrt());
        let comp = MixtureComponent { mean: vec![3.0, -1.0], scale: 0.5, weight: 1.0 };
        let g = Target::gaussian_mixture(vec![comp]).unwrap();
        let n = 40_000;
        let mean0 = (0..n).map(|_| g.sample(&mut rng)[0]).sum::<f64>() / n as f64;
        assert!((mean0 - 3.0).abs() < 4.0 * 0.5 / (n as f64).sqrt());
    }
}
