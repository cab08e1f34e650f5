//! 1-D reaction-diffusion benchmark `v_t = nu v_ss + rho v (1 - v)` on
//! `[0, 1]` with Neumann fluxes, its constraint set and metrics.
//!
//! Fields are stored frame-major: entry `k * n_s + i` is `v(s_i, t_k)`.

use std::sync::Arc;

use crate::constraints::{Constraint, ConstraintSet, LinearBand, SmoothScalar};
use crate::error::{check_dim, Error, Result};
use crate::num::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RdGrid {
    pub n_s: usize,
    pub n_t: usize,
    pub dt_phys: f64,
}

impl RdGrid {
    pub fn new(n_s: usize, n_t: usize, dt_phys: f64) -> Result<Self> {
        if n_s < 4 || n_t < 2 {
            return Err(Error::Config(format!("grid {n_s}x{n_t} too small (need n_s >= 4, n_t >= 2)")));
        }
        if !(dt_phys > 0.0 && dt_phys.is_finite()) {
            return Err(Error::Config(format!("dt_phys must be positive, got {dt_phys}")));
        }
        Ok(Self { n_s, n_t, dt_phys })
    }

    pub fn dim(&self) -> usize {
        self.n_s * self.n_t
    }

    pub fn h(&self) -> f64 {
        1.0 / (self.n_s - 1) as f64
    }

    pub fn s(&self, i: usize) -> f64 {
        i as f64 * self.h()
    }

    /// Trapezoid weights.
    pub fn weights(&self) -> Vec<f64> {
        let h = self.h();
        let mut w = vec![h; self.n_s];
        w[0] = h / 2.0;
        w[self.n_s - 1] = h / 2.0;
        w
    }

    pub fn frame<'a>(&self, field: &'a [f64], k: usize) -> &'a [f64] {
        &field[k * self.n_s..(k + 1) * self.n_s]
    }
}

impl Default for RdGrid {
    fn default() -> Self {
        Self { n_s: 32, n_t: 20, dt_phys: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RdProblem {
    pub grid: RdGrid,
    pub nu: f64,
    pub rho: f64,
    pub ic: Vec<f64>,
    /// Inflow through `s = 0`: `-nu v_s(0) = g_left`.
    pub g_left: f64,
    /// Outflow through `s = 1`: `-nu v_s(1) = g_right`.
    pub g_right: f64,
    pub delta: f64,
}

impl RdProblem {
    pub fn new(grid: RdGrid, nu: f64, rho: f64, ic: Vec<f64>, g_left: f64, g_right: f64, delta: f64) -> Result<Self> {
        check_dim(grid.n_s, ic.len())?;
        if !(nu > 0.0 && nu.is_finite() && rho >= 0.0 && rho.is_finite()) {
            return Err(Error::Config(format!("need nu > 0 and rho >= 0, got nu={nu}, rho={rho}")));
        }
        if !(delta >= 0.0) {
            return Err(Error::Config(format!("band half-width must be >= 0, got {delta}")));
        }
        if ic.iter().chain([&g_left, &g_right]).any(|v| !v.is_finite()) {
            return Err(Error::Config("non-finite initial condition or flux".into()));
        }
        Ok(Self { grid, nu, rho, ic, g_left, g_right, delta })
    }

    pub fn net_inflow(&self) -> f64 {
        self.g_left - self.g_right
    }
}

pub fn mass(grid: &RdGrid, frame: &[f64]) -> f64 {
    grid.weights().iter().zip(frame).map(|(w, v)| w * v).sum()
}

fn reaction_integral(w: &[f64], rho: f64, frame: &[f64]) -> f64 {
    w.iter().zip(frame).map(|(w, v)| w * rho * v * (1.0 - v)).sum()
}

/// Semi-implicit finite differences: backward Euler diffusion with ghost-node
/// Neumann fluxes, forward Euler reaction. One step per stored frame.
/// The scheme conserves `mass` exactly against trapezoid-in-space,
/// left-endpoint-in-time quadrature of the mass law.
pub fn simulate_rd(p: &RdProblem) -> Result<Vec<Vec<f64>>> {
    let g = &p.grid;
    let n = g.n_s;
    let h = g.h();
    let dt = g.dt_phys;
    let r = dt * p.nu / (h * h);

    let mut sub = vec![-r; n];
    let mut diag = vec![1.0 + 2.0 * r; n];
    let mut sup = vec![-r; n];
    sup[0] = -2.0 * r;
    sub[n - 1] = -2.0 * r;
    sub[0] = 0.0;
    sup[n - 1] = 0.0;
    diag[0] = 1.0 + 2.0 * r;

    let mut frames = Vec::with_capacity(g.n_t);
    frames.push(p.ic.clone());
    for k in 1..g.n_t {
        let prev = &frames[k - 1];
        let mut rhs: Vec<f64> = prev.iter().map(|v| v + dt * p.rho * v * (1.0 - v)).collect();
        rhs[0] += 2.0 * dt * p.g_left / h;
        rhs[n - 1] -= 2.0 * dt * p.g_right / h;
        let next = thomas(&sub, &diag, &sup, &rhs);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Simulation(format!("non-finite state at frame {k}")));
        }
        frames.push(next);
    }
    Ok(frames)
}

/// Tridiagonal solve; `sub[0]` and `sup[n-1]` are ignored.
fn thomas(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = sup[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - sub[i] * c[i - 1];
        c[i] = if i + 1 < n { sup[i] / m } else { 0.0 };
        d[i] = (rhs[i] - sub[i] * d[i - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

pub fn flatten(frames: &[Vec<f64>]) -> Vec<f64> {
    frames.concat()
}

/// Mass-law residual at frame `k >= 1`:
/// `m_k - m_0 - dt sum_{j<k} rho trap(v_j (1 - v_j)) - k dt (g_L - g_R)`.
pub fn mass_residual(p: &RdProblem, field: &[f64], k: usize) -> f64 {
    let g = &p.grid;
    let w = g.weights();
    let dt = g.dt_phys;
    let reaction: f64 = (0..k).map(|j| reaction_integral(&w, p.rho, g.frame(field, j))).sum();
    mass(g, g.frame(field, k)) - mass(g, g.frame(field, 0)) - dt * reaction - k as f64 * dt * p.net_inflow()
}

fn mass_residual_gradient(p: &RdProblem, field: &[f64], k: usize) -> Vec<f64> {
    let g = &p.grid;
    let n = g.n_s;
    let w = g.weights();
    let c = g.dt_phys * p.rho;
    let mut grad = vec![0.0; field.len()];
    for j in 0..k {
        let v = g.frame(field, j);
        for i in 0..n {
            grad[j * n + i] = -c * w[i] * (1.0 - 2.0 * v[i]);
        }
    }
    for i in 0..n {
        grad[i] -= w[i];
        grad[k * n + i] += w[i];
    }
    grad
}

/// IC bands first (`n_s` of them, frame 0), then for each frame `k >= 1`
/// the pair `+F_k - delta <= 0`, `-F_k - delta <= 0`.
pub fn rd_constraints(p: &RdProblem) -> Result<ConstraintSet> {
    let g = p.grid;
    let d = g.dim();
    let mut cs = Vec::with_capacity(g.n_s + 2 * (g.n_t - 1));
    for (i, v) in p.ic.iter().enumerate() {
        let mut a = vec![0.0; d];
        a[i] = 1.0;
        cs.push(Constraint::Band(LinearBand::new(a, v - p.delta, v + p.delta)?));
    }
    let shared = Arc::new(p.clone());
    let probe = vec![flatten(&vec![p.ic.clone(); g.n_t])];
    for k in 1..g.n_t {
        for sign in [1.0, -1.0] {
            let (pv, pg) = (shared.clone(), shared.clone());
            let delta = p.delta;
            let name = format!("mass[{k}]{}", if sign > 0.0 { "+" } else { "-" });
            let c = SmoothScalar::new(
                name,
                move |x: &[f64]| sign * mass_residual(&pv, x, k) - delta,
                move |x: &[f64]| {
                    let mut gr = mass_residual_gradient(&pg, x, k);
                    gr.iter_mut().for_each(|v| *v *= sign);
                    gr
                },
                &probe,
            )?;
            cs.push(Constraint::Smooth(c));
        }
    }
    ConstraintSet::new(d, cs)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RdMetrics {
    pub mmse: f64,
    pub smse: f64,
    pub cv_ic: f64,
    pub cv_cl: f64,
}

fn mean_std(batch: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let d = batch[0].len();
    let n = batch.len() as f64;
    let mut mean = vec![0.0; d];
    for x in batch {
        for (m, v) in mean.iter_mut().zip(x) {
            *m += v / n;
        }
    }
    let mut var = vec![0.0; d];
    for x in batch {
        for ((s, v), m) in var.iter_mut().zip(x).zip(&mean) {
            *s += (v - m) * (v - m) / n;
        }
    }
    (mean, var.into_iter().map(f64::sqrt).collect())
}

/// Pointwise errors of the batch mean and (population) standard deviation
/// against the reference batch, and the worst IC-band and mass-law hinge
/// violations over the generated batch. Band constraints count as IC,
/// smooth constraints as conservation law.
pub fn rd_metrics(generated: &[Vec<f64>], reference: &[Vec<f64>], cs: &ConstraintSet) -> Result<RdMetrics> {
    if generated.len() < 2 {
        return Err(Error::Domain("need at least two generated fields".into()));
    }
    if reference.is_empty() {
        return Err(Error::Domain("empty reference batch".into()));
    }
    let d = cs.dim();
    for x in generated.iter().chain(reference) {
        check_dim(d, x.len())?;
    }
    let (gm, gs) = mean_std(generated);
    let (rm, rs) = mean_std(reference);
    let msq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / d as f64;
    let mut cv_ic: f64 = 0.0;
    let mut cv_cl: f64 = 0.0;
    for x in generated {
        for c in cs.constraints() {
            let r = c.value(x).max(0.0);
            match c {
                Constraint::Band(_) => cv_ic = cv_ic.max(r),
                Constraint::Smooth(_) => cv_cl = cv_cl.max(r),
                _ => {}
            }
        }
    }
    Ok(RdMetrics { mmse: msq(&gm, &rm), smse: msq(&gs, &rs), cv_ic, cv_cl })
}

/// Smooth profile plus a localized bump.
pub fn random_ic(grid: &RdGrid, rng: &mut SeededRng) -> Vec<f64> {
    let base = rng.uniform_range(0.3, 0.7);
    let amps: Vec<f64> = (1..=4).map(|m| rng.uniform_range(-0.15, 0.15) / m as f64).collect();
    let bump = rng.uniform_range(-0.2, 0.2);
    let center = rng.uniform_range(0.1, 0.9);
    let width = rng.uniform_range(0.05, 0.15);
    (0..grid.n_s)
        .map(|i| {
            let s = grid.s(i);
            let modes: f64 = amps
                .iter()
                .enumerate()
                .map(|(m, a)| a * ((m + 1) as f64 * std::f64::consts::PI * s).cos())
                .sum();
            base + modes + bump * (-((s - center) / width).powi(2)).exp()
        })
        .collect()
}

pub const FLUX_RANGE: f64 = 2e-3;

pub fn random_fluxes(rng: &mut SeededRng) -> (f64, f64) {
    (rng.uniform_range(-FLUX_RANGE, FLUX_RANGE), rng.uniform_range(-FLUX_RANGE, FLUX_RANGE))
}

#[derive(Debug, Clone, PartialEq, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RdSetup {
    pub n_s: usize,
    pub n_t: usize,
    pub dt_phys: f64,
    pub nu: f64,
    pub rho: f64,
    pub delta: f64,
    /// Training set is every pairing of `train_ics` ICs with `train_fluxes`
    /// flux pairs.
    pub train_ics: usize,
    pub train_fluxes: usize,
}

impl Default for RdSetup {
    fn default() -> Self {
        Self {
            n_s: 32,
            n_t: 20,
            dt_phys: 0.05,
            nu: 0.005,
            rho: 0.01,
            delta: 1e-10,
            train_ics: 16,
            train_fluxes: 8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RdBenchmark {
    /// Flattened simulated fields forming the empirical target.
    pub dataset: Vec<Vec<f64>>,
    /// Unseen IC and fluxes the generator is conditioned on.
    pub problem: RdProblem,
    /// Simulated solution of `problem`.
    pub reference: Vec<f64>,
}

/// Stream 0 draws training conditions, stream 1 the test condition, so the
/// two pools are disjoint draws.
pub fn rd_benchmark(setup: &RdSetup, seed: u64) -> Result<RdBenchmark> {
    let grid = RdGrid::new(setup.n_s, setup.n_t, setup.dt_phys)?;
    if setup.train_ics == 0 || setup.train_fluxes == 0 {
        return Err(Error::Config("training set must be nonempty".into()));
    }
    let mut rng = SeededRng::new(seed, 0);
    let ics: Vec<Vec<f64>> = (0..setup.train_ics).map(|_| random_ic(&grid, &mut rng)).collect();
    let fluxes: Vec<(f64, f64)> = (0..setup.train_fluxes).map(|_| random_fluxes(&mut rng)).collect();
    let mut dataset = Vec::with_capacity(ics.len() * fluxes.len());
    for ic in &ics {
        for &(gl, gr) in &fluxes {
            let p = RdProblem::new(grid, setup.nu, setup.rho, ic.clone(), gl, gr, setup.delta)?;
            dataset.push(flatten(&simulate_rd(&p)?));
        }
    }
    let mut test_rng = SeededRng::new(seed, 1);
    let ic = random_ic(&grid, &mut test_rng);
    let (gl, gr) = random_fluxes(&mut test_rng);
    let problem = RdProblem::new(grid, setup.nu, setup.rho, ic, gl, gr, setup.delta)?;
    let reference = flatten(&simulate_rd(&problem)?);
    Ok(RdBenchmark { dataset, problem, reference })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::central_difference;
    use std::f64::consts::PI;

    fn problem(ic: Vec<f64>, gl: f64, gr: f64) -> RdProblem {
        RdProblem::new(RdGrid::default(), 0.005, 0.01, ic, gl, gr, 1e-10).unwrap()
    }

    #[test]
    fn equilibria() {
        for level in [0.0, 1.0] {
            let f = simulate_rd(&problem(vec![level; 32], 0.0, 0.0)).unwrap();
            assert_eq!(f.len(), 20);
            for frame in &f {
                assert!(frame.iter().all(|v| (v - level).abs() < 1e-15));
            }
        }
    }

    #[test]
    fn heat_mode_decay() {
        let grid = RdGrid::new(32, 20, 0.05).unwrap();
        for (nu, m) in [(0.005, 1usize), (0.005, 2), (0.005, 3), (0.05, 1)] {
            let kw = m as f64 * PI;
            let ic: Vec<f64> = (0..32).map(|i| (kw * grid.s(i)).cos()).collect();
            let p = RdProblem::new(grid, nu, 0.0, ic.clone(), 0.0, 0.0, 1e-10).unwrap();
            let f = simulate_rd(&p).unwrap();
            let last = f.last().unwrap();
            let t = grid.dt_phys * (grid.n_t - 1) as f64;
            let amp = last.iter().zip(&ic).map(|(a, b)| a * b).sum::<f64>() / ic.iter().map(|b| b * b).sum::<f64>();
            let exact = (-nu * kw * kw * t).exp();
            assert!((amp / exact - 1.0).abs() < 0.05, "nu {nu} mode {m}: {amp} vs {exact}");
            // and stays a pure mode
            for (a, b) in last.iter().zip(&ic) {
                assert!((a - amp * b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn simulator_satisfies_its_constraints() {
        let grid = RdGrid::default();
        let mut rng = SeededRng::new(7, 0);
        for _ in 0..20 {
            let ic = random_ic(&grid, &mut rng);
            let (gl, gr) = random_fluxes(&mut rng);
            let p = problem(ic.clone(), gl, gr);
            let field = flatten(&simulate_rd(&p).unwrap());
            assert_eq!(&field[..32], &ic[..]);
            let cs = rd_constraints(&p).unwrap();
            assert!(cs.max_violation(&field).unwrap() <= 1e-8);
            for k in 1..20 {
                assert!(mass_residual(&p, &field, k).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn ic_perturbation_shows_in_cv_ic() {
        let mut rng = SeededRng::new(1, 0);
        let p = problem(random_ic(&RdGrid::default(), &mut rng), 0.001, -0.0005);
        let cs = rd_constraints(&p).unwrap();
        let mut field = flatten(&simulate_rd(&p).unwrap());
        field[5] += 0.1;
        let m = rd_metrics(&[field.clone(), field.clone()], &[field.clone()], &cs).unwrap();
        assert!((m.cv_ic - (0.1 - 1e-10)).abs() < 1e-14);
    }

    #[test]
    fn zero_field_violates_mass_law_by_net_flux() {
        let p = problem(vec![0.0; 32], 0.002, -0.001);
        let cs = rd_constraints(&p).unwrap();
        let zero = vec![0.0; 640];
        let worst = 19.0 * 0.05 * 0.003 - 1e-10;
        let m = rd_metrics(&[zero.clone(), zero.clone()], std::slice::from_ref(&zero), &cs).unwrap();
        assert!((m.cv_cl - worst).abs() < 1e-15);
        assert_eq!(m.cv_ic, 0.0);
    }

    #[test]
    fn mass_gradients_match_finite_differences() {
        let mut rng = SeededRng::new(3, 0);
        let p = problem(random_ic(&RdGrid::default(), &mut rng), 0.001, 0.0015);
        for trial in 0..5 {
            let x: Vec<f64> = (0..640).map(|_| rng.uniform_range(-0.5, 1.5)).collect();
            let k = 1 + trial * 4;
            let an = mass_residual_gradient(&p, &x, k);
            let fd = central_difference(|y| mass_residual(&p, y, k), &x, 1e-6);
            let scale = an.iter().map(|v| v * v).sum::<f64>().sqrt();
            for (a, f) in an.iter().zip(&fd) {
                assert!((a - f).abs() <= 1e-5 * scale);
            }
        }
    }

    #[test]
    fn metric_examples() {
        let cs = ConstraintSet::empty(640);
        let mut rng = SeededRng::new(5, 0);
        let refs: Vec<Vec<f64>> = (0..4).map(|_| rng.std_normal_vec(640)).collect();
        let m = rd_metrics(&refs, &refs, &cs).unwrap();
        assert_eq!((m.mmse, m.smse), (0.0, 0.0));
        let shifted: Vec<Vec<f64>> = refs.iter().map(|x| x.iter().map(|v| v + 0.1).collect()).collect();
        let m = rd_metrics(&shifted, &refs, &cs).unwrap();
        assert!((m.mmse - 0.01).abs() < 1e-12);
        assert!(m.smse < 1e-24);
    }

    #[test]
    fn metrics_match_double_loop() {
        let cs = ConstraintSet::empty(6);
        let mut rng = SeededRng::new(8, 0);
        let gen: Vec<Vec<f64>> = (0..5).map(|_| rng.std_normal_vec(6)).collect();
        let refs: Vec<Vec<f64>> = (0..3).map(|_| rng.std_normal_vec(6)).collect();
        let m = rd_metrics(&gen, &refs, &cs).unwrap();
        let (mut mmse, mut smse) = (0.0, 0.0);
        for j in 0..6 {
            let stats = |b: &[Vec<f64>]| {
                let mut s = 0.0;
                for x in b {
                    s += x[j];
                }
                let mu = s / b.len() as f64;
                let mut v = 0.0;
                for x in b {
                    v += (x[j] - mu).powi(2);
                }
                (mu, (v / b.len() as f64).sqrt())
            };
            let (gm, gs) = stats(&gen);
            let (rm, rs) = stats(&refs);
            mmse += (gm - rm).powi(2) / 6.0;
            smse += (gs - rs).powi(2) / 6.0;
        }
        assert!((m.mmse - mmse).abs() < 1e-14 && (m.smse - smse).abs() < 1e-14);
    }

    #[test]
    fn shape_errors() {
        let cs = ConstraintSet::empty(4);
        assert!(rd_metrics(&[vec![0.0; 4]], &[vec![0.0; 4]], &cs).is_err());
        assert!(rd_metrics(&[vec![0.0; 4], vec![0.0; 3]], &[vec![0.0; 4]], &cs).is_err());
        assert!(RdGrid::new(3, 5, 0.1).is_err());
    }

    #[test]
    fn benchmark_is_deterministic() {
        let setup = RdSetup { train_ics: 3, train_fluxes: 2, ..RdSetup::default() };
        let a = rd_benchmark(&setup, 4).unwrap();
        let b = rd_benchmark(&setup, 4).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.dataset.len(), 6);
        assert_eq!(a.reference, b.reference);
        let cs = rd_constraints(&a.problem).unwrap();
        assert!(cs.max_violation(&a.reference).unwrap() <= 1e-8);
    }
}
