//! Independent oracles: Monte Carlo chance estimates, brute-force
//! projections, distribution distances and batch feasibility accounting.

pub mod suite;

use crate::constraints::{Constraint, ConstraintSet};
use crate::error::{check_dim, Error, Result};
use crate::num::{dist, dot, SeededRng};
use crate::samplers::SampleRecord;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub p_hat: f64,
    pub stderr: f64,
    pub n_trials: usize,
}

impl McEstimate {
    pub fn from_counts(hits: usize, n_trials: usize) -> Self {
        let p_hat = hits as f64 / n_trials as f64;
        Self { p_hat, stderr: (p_hat * (1.0 - p_hat) / n_trials as f64).sqrt(), n_trials }
    }

    /// `|p_hat - p| <= k * stderr`, with the binomial stderr taken at the
    /// hypothesized `p` so a degenerate `p_hat` cannot pass vacuously.
    pub fn within(&self, p: f64, k: f64) -> bool {
        let se = (p * (1.0 - p) / self.n_trials as f64).sqrt().max(self.stderr);
        (self.p_hat - p).abs() <= k * se
    }
}

pub const MIN_MC_TRIALS: usize = 10_000;

/// Frequency of `g(x_t / t - xi) <= 0` with `xi = (1 - t) / t * x0`,
/// `x0 ~ N(0, I)`.
pub fn mc_chance(c: &Constraint, x_t: &[f64], t: f64, n_trials: usize, rng: &mut SeededRng) -> Result<McEstimate> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::Domain(format!("mc_chance needs 0 < t <= 1, got {t}")));
    }
    if n_trials < MIN_MC_TRIALS {
        return Err(Error::Domain(format!("need at least {MIN_MC_TRIALS} trials, got {n_trials}")));
    }
    if let Some(d) = c.dim_hint() {
        check_dim(d, x_t.len())?;
    }
    let sigma = (1.0 - t) / t;
    let base: Vec<f64> = x_t.iter().map(|v| v / t).collect();
    let mut y = base.clone();
    let mut hits = 0;
    for _ in 0..n_trials {
        for (yi, bi) in y.iter_mut().zip(&base) {
            *yi = bi - sigma * rng.std_normal();
        }
        if c.value(&y) <= 0.0 {
            hits += 1;
        }
    }
    Ok(McEstimate::from_counts(hits, n_trials))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BruteForce {
    /// Exhaustive lattice `x + h Z^d` inside the ball of radius `radius`
    /// around `x`.
    Grid { h: f64, radius: f64 },
    /// Best of `restarts` seeded quadratic-penalty gradient descents.
    Restarts { restarts: usize, seed: u64 },
}

impl BruteForce {
    pub fn grid(radius: f64) -> Self {
        BruteForce::Grid { h: 1e-3, radius }
    }
}

pub fn brute_force_project(x: &[f64], cs: &ConstraintSet, mode: BruteForce) -> Result<Vec<f64>> {
    check_dim(cs.dim(), x.len())?;
    if cs.max_violation(x)? <= 0.0 {
        return Ok(x.to_vec());
    }
    match mode {
        BruteForce::Grid { h, radius } => lattice_search(x, cs, h, radius),
        BruteForce::Restarts { restarts, seed } => penalty_search(x, cs, restarts, seed),
    }
}

fn lattice_search(x: &[f64], cs: &ConstraintSet, h: f64, radius: f64) -> Result<Vec<f64>> {
    let d = x.len();
    if d > 4 {
        return Err(Error::Oracle(format!("lattice oracle limited to d <= 4, got {d}")));
    }
    let m = (radius / h).ceil() as i64;
    let side = (2 * m + 1) as u64;
    let total = side.checked_pow(d as u32).ok_or_else(|| Error::Oracle("lattice too large".into()))?;
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut y = vec![0.0; d];
    let mut offs = vec![-m; d];
    for _ in 0..total {
        let r2: i64 = offs.iter().map(|o| o * o).sum();
        if (r2 as f64) * h * h <= radius * radius {
            let d2 = r2 as f64 * h * h;
            if best.as_ref().is_none_or(|(b, _)| d2 < *b) {
                for ((yi, xi), o) in y.iter_mut().zip(x).zip(&offs) {
                    *yi = xi + *o as f64 * h;
                }
                if cs.constraints().iter().all(|c| c.value(&y) <= 0.0) {
                    best = Some((d2, y.clone()));
                }
            }
        }
        for o in offs.iter_mut() {
            *o += 1;
            if *o <= m {
                break;
            }
            *o = -m;
        }
    }
    best.map(|(_, y)| y)
        .ok_or_else(|| Error::Oracle("no feasible lattice point in the search ball".into()))
}

fn penalty_search(x: &[f64], cs: &ConstraintSet, restarts: usize, seed: u64) -> Result<Vec<f64>> {
    let mut rng = SeededRng::new(seed, 0);
    let mut best: Option<(f64, Vec<f64>)> = None;
    let k = cs.len();
    for _ in 0..restarts.max(1) {
        let mut y: Vec<f64> = x.iter().map(|v| v + 0.5 * rng.std_normal()).collect();
        let mut mu = 1.0;
        while mu <= 1e10 {
            // minimize |y - x|^2 / 2 + mu / 2 sum relu(g)^2 by damped gradient steps
            for _ in 0..2000 {
                let mut grad: Vec<f64> = y.iter().zip(x).map(|(a, b)| a - b).collect();
                let mut curv: f64 = 1.0;
                for i in 0..k {
                    let c = &cs.constraints()[i];
                    let g = c.value(&y);
                    if g > 0.0 {
                        let gg = c.gradient(&y, i)?;
                        let n2 = dot(&gg, &gg);
                        curv += mu * n2;
                        for (a, b) in grad.iter_mut().zip(&gg) {
                            *a += mu * g * b;
                        }
                    }
                }
                let step = 1.0 / curv;
                let gn2 = dot(&grad, &grad);
                for (a, b) in y.iter_mut().zip(&grad) {
                    *a -= step * b;
                }
                if gn2.sqrt() * step < 1e-14 {
                    break;
                }
            }
            mu *= 10.0;
        }
        let viol = cs.max_violation(&y)?;
        if viol <= cs.tol() {
            let d2 = dist(&y, x);
            if best.as_ref().is_none_or(|(b, _)| d2 < *b) {
                best = Some((d2, y));
            }
        }
    }
    best.map(|(_, y)| y)
        .ok_or_else(|| Error::Oracle("no restart reached a feasible point".into()))
}

/// Exact squared 1-D W2 between empirical measures with uniform weights,
/// integrating the difference of quantile functions; inputs get sorted.
pub fn w2_squared_1d(a: &mut [f64], b: &mut [f64]) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len(), b.len());
    if na == nb {
        return a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / na as f64;
    }
    // merge the CDF breakpoints i/na and j/nb, compared exactly as i*nb vs j*na
    let (mut i, mut j) = (0usize, 0usize);
    let mut last = 0usize;
    let denom = (na * nb) as f64;
    let mut acc = 0.0;
    while i < na && j < nb {
        let next_a = (i + 1) * nb;
        let next_b = (j + 1) * na;
        let next = next_a.min(next_b);
        let diff = a[i] - b[j];
        acc += (next - last) as f64 / denom * diff * diff;
        last = next;
        if next_a == next {
            i += 1;
        }
        if next_b == next {
            j += 1;
        }
    }
    acc
}

/// Square root of the average over `n_projections` random directions of the
/// 1-D squared W2 between projected batches.
pub fn sliced_w2(a: &[Vec<f64>], b: &[Vec<f64>], n_projections: usize, rng: &mut SeededRng) -> Result<f64> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Domain("sliced_w2 needs at least two points per batch".into()));
    }
    let d = a[0].len();
    for x in a.iter().chain(b) {
        check_dim(d, x.len())?;
    }
    if n_projections == 0 {
        return Err(Error::Domain("need at least one projection".into()));
    }
    let mut total = 0.0;
    for _ in 0..n_projections {
        let theta = rng.unit_vec(d);
        let mut pa: Vec<f64> = a.iter().map(|x| dot(x, &theta)).collect();
        let mut pb: Vec<f64> = b.iter().map(|x| dot(x, &theta)).collect();
        total += w2_squared_1d(&mut pa, &mut pb);
    }
    Ok((total / n_projections as f64).max(0.0).sqrt())
}

pub const DEFAULT_PROJECTIONS: usize = 128;

fn sqrtm_2x2(m: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let s = det.max(0.0).sqrt();
    let t = (m[0][0] + m[1][1] + 2.0 * s).sqrt();
    [[(m[0][0] + s) / t, m[0][1] / t], [m[1][0] / t, (m[1][1] + s) / t]]
}

fn mul_2x2(a: [[f64; 2]; 2], b: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let mut c = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

/// Closed-form W2 between `N(m1, s1)` and `N(m2, s2)` in the plane.
pub fn gaussian_w2_2d(m1: [f64; 2], s1: [[f64; 2]; 2], m2: [f64; 2], s2: [[f64; 2]; 2]) -> f64 {
    let r2 = sqrtm_2x2(s2);
    let cross = sqrtm_2x2(mul_2x2(mul_2x2(r2, s1), r2));
    let shift = (m1[0] - m2[0]).powi(2) + (m1[1] - m2[1]).powi(2);
    let tr = s1[0][0] + s1[1][1] + s2[0][0] + s2[1][1] - 2.0 * (cross[0][0] + cross[1][1]);
    (shift + tr.max(0.0)).sqrt()
}

/// Sliced analogue of [`gaussian_w2_2d`]: the 1-D Gaussian W2 of every
/// projection averaged over the circle by midpoint quadrature.
pub fn gaussian_sliced_w2_2d(m1: [f64; 2], s1: [[f64; 2]; 2], m2: [f64; 2], s2: [[f64; 2]; 2]) -> f64 {
    let n = 3600;
    let quad = |s: [[f64; 2]; 2], c: f64, si: f64| s[0][0] * c * c + 2.0 * s[0][1] * c * si + s[1][1] * si * si;
    let mut acc = 0.0;
    for k in 0..n {
        let th = (k as f64 + 0.5) * std::f64::consts::PI / n as f64;
        let (si, c) = th.sin_cos();
        let dm = (m1[0] - m2[0]) * c + (m1[1] - m2[1]) * si;
        let ds = quad(s1, c, si).sqrt() - quad(s2, c, si).sqrt();
        acc += dm * dm + ds * ds;
    }
    (acc / n as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistortionReport {
    pub sliced_w2: f64,
    pub feasibility_rate: f64,
    pub mean_projection_move: f64,
}

/// Batch feasibility against `cs`, total per-sample correction, and sliced W2
/// of the terminal states against `reference`.
pub fn feasibility_report(
    records: &[SampleRecord],
    cs: &ConstraintSet,
    reference: &[Vec<f64>],
    n_projections: usize,
    rng: &mut SeededRng,
) -> Result<DistortionReport> {
    let x1: Vec<Vec<f64>> = records.iter().map(|r| r.x1.clone()).collect();
    Ok(DistortionReport {
        feasibility_rate: feasibility_rate(records, cs)?,
        mean_projection_move: mean_projection_move(records)?,
        sliced_w2: sliced_w2(&x1, reference, n_projections, rng)?,
    })
}

/// Fraction of terminal states within the set's tolerance.
pub fn feasibility_rate(records: &[SampleRecord], cs: &ConstraintSet) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Domain("empty batch".into()));
    }
    let mut feasible = 0usize;
    for r in records {
        if cs.max_violation(&r.x1)? <= cs.tol() {
            feasible += 1;
        }
    }
    Ok(feasible as f64 / records.len() as f64)
}

/// Batch mean of each trajectory's summed per-step corrections.
pub fn mean_projection_move(records: &[SampleRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Domain("empty batch".into()));
    }
    Ok(records.iter().map(|r| r.projection_moves.iter().sum::<f64>()).sum::<f64>() / records.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chance::tighten_linear;
    use crate::constraints::{LinearIneq, MinDistance};
    use crate::num::{normal_cdf, norm};
    use crate::projection::project_linear;

    #[test]
    fn mc_degenerate_at_t1() {
        let c = Constraint::Linear(LinearIneq::new(vec![1.0, 0.0], 1.0).unwrap());
        let mut rng = SeededRng::new(0, 0);
        assert_eq!(mc_chance(&c, &[0.5, 3.0], 1.0, 10_000, &mut rng).unwrap().p_hat, 1.0);
        assert_eq!(mc_chance(&c, &[1.5, 3.0], 1.0, 10_000, &mut rng).unwrap().p_hat, 0.0);
        assert!(mc_chance(&c, &[0.5, 3.0], 1.0, 100, &mut rng).is_err());
    }

    #[test]
    fn mc_at_tightened_boundary() {
        let l = LinearIneq::new(vec![1.0, 2.0], 0.5).unwrap();
        let tc = tighten_linear(&l, 0.5, 0.95).unwrap();
        let x = crate::num::scale(&tc.a, tc.rhs / dot(&tc.a, &tc.a));
        let mut rng = SeededRng::new(42, 0);
        let est = mc_chance(&Constraint::Linear(l), &x, 0.5, 200_000, &mut rng).unwrap();
        assert!(est.within(0.95, 3.0), "{est:?}");
    }

    #[test]
    fn mc_matches_gaussian_tail() {
        let mut rng = SeededRng::new(5, 1);
        for _ in 0..50 {
            let a = rng.std_normal_vec(3);
            let b = rng.std_normal();
            let t = rng.uniform_range(0.1, 0.9);
            let x = rng.std_normal_vec(3);
            let sigma = (1.0 - t) / t;
            let exact = normal_cdf((b - dot(&a, &x) / t) / (sigma * norm(&a)));
            let est = mc_chance(
                &Constraint::Linear(LinearIneq::new(a, b).unwrap()),
                &x,
                t,
                20_000,
                &mut rng,
            )
            .unwrap();
            assert!((est.p_hat - exact).abs() <= 3.0 * est.stderr.max(1.0 / 20_000.0), "{est:?} vs {exact}");
        }
    }

    #[test]
    fn lattice_halfspace_matches_closed_form() {
        let cs = ConstraintSet::new(2, vec![Constraint::Linear(LinearIneq::new(vec![1.0, 1.0], 0.0).unwrap())]).unwrap();
        let x = [0.3, 0.2];
        let bf = brute_force_project(&x, &cs, BruteForce::grid(0.5)).unwrap();
        assert!(dist(&bf, &project_linear(&x, &[1.0, 1.0], 0.0)) <= 2e-3);
    }

    #[test]
    fn lattice_ring_matches_radial_point() {
        let cs = ConstraintSet::new(2, vec![Constraint::MinDistance(MinDistance::full(vec![0.0, 0.0], 1.0).unwrap())]).unwrap();
        let x = [0.3, -0.4];
        let bf = brute_force_project(&x, &cs, BruteForce::grid(0.6)).unwrap();
        let exact = crate::num::scale(&x, 1.0 / norm(&x));
        assert!(dist(&bf, &exact) <= 2e-3);
    }

    #[test]
    fn feasible_point_is_returned() {
        let cs = ConstraintSet::new(2, vec![Constraint::Linear(LinearIneq::new(vec![1.0, 0.0], 1.0).unwrap())]).unwrap();
        assert_eq!(brute_force_project(&[0.0, 5.0], &cs, BruteForce::grid(1.0)).unwrap(), vec![0.0, 5.0]);
    }

    #[test]
    fn restart_oracle_matches_closed_form() {
        let a = vec![1.0, -2.0, 0.5, 1.0, 0.0];
        let cs = ConstraintSet::new(5, vec![Constraint::Linear(LinearIneq::new(a.clone(), -1.0).unwrap())]).unwrap();
        let x = [1.0, 0.0, 2.0, 0.0, 3.0];
        let bf = brute_force_project(&x, &cs, BruteForce::Restarts { restarts: 4, seed: 1 }).unwrap();
        assert!(dist(&bf, &project_linear(&x, &a, -1.0)) <= 1e-6);
    }

    #[test]
    fn sliced_w2_examples() {
        let mut rng = SeededRng::new(1, 0);
        let a: Vec<Vec<f64>> = (0..50).map(|_| rng.std_normal_vec(3)).collect();
        assert_eq!(sliced_w2(&a, &a, 16, &mut rng).unwrap(), 0.0);
        let zeros = vec![vec![0.0]; 3];
        let cs = vec![vec![2.5]; 4];
        assert!((sliced_w2(&zeros, &cs, 4, &mut rng).unwrap() - 2.5).abs() < 1e-15);
        assert!(sliced_w2(&a[..1], &a, 4, &mut rng).is_err());
    }

    #[test]
    fn w2_1d_unequal_sizes() {
        // {0, 1} vs {0, 0.5, 1}: quantile functions differ on [1/3, 1/2) by 0.5
        // and on [1/2, 2/3) by 0.5
        let v = w2_squared_1d(&mut [1.0, 0.0], &mut [0.5, 1.0, 0.0]);
        assert!((v - (1.0 / 6.0) * 0.25 * 2.0).abs() < 1e-15);
        // replicated batch equals the original
        let v = w2_squared_1d(&mut [0.0, 1.0, 0.0, 1.0], &mut [3.0, -1.0]);
        let w = w2_squared_1d(&mut [0.0, 1.0], &mut [3.0, -1.0]);
        assert!((v - w).abs() < 1e-15);
    }

    #[test]
    fn sliced_w2_symmetric_nonnegative() {
        let mut rng = SeededRng::new(2, 0);
        for _ in 0..10 {
            let a: Vec<Vec<f64>> = (0..7).map(|_| rng.std_normal_vec(2)).collect();
            let b: Vec<Vec<f64>> = (0..11).map(|_| rng.std_normal_vec(2)).collect();
            let ab = sliced_w2(&a, &b, 32, &mut SeededRng::new(9, 0)).unwrap();
            let ba = sliced_w2(&b, &a, 32, &mut SeededRng::new(9, 0)).unwrap();
            assert!(ab >= 0.0 && (ab - ba).abs() < 1e-12);
        }
    }

    #[test]
    fn sliced_w2_against_gaussian_closed_form() {
        let mut rng = SeededRng::new(3, 0);
        let (m1, m2) = ([0.0, 0.0], [1.0, -0.5]);
        let (s1, s2) = ([[1.0, 0.0], [0.0, 1.0]], [[2.0, 0.6], [0.6, 0.5]]);
        let l2 = sqrtm_2x2(s2);
        let a: Vec<Vec<f64>> = (0..10_000).map(|_| rng.std_normal_vec(2)).collect();
        let b: Vec<Vec<f64>> = (0..10_000)
            .map(|_| {
                let z = rng.std_normal_vec(2);
                vec![m2[0] + l2[0][0] * z[0] + l2[0][1] * z[1], m2[1] + l2[1][0] * z[0] + l2[1][1] * z[1]]
            })
            .collect();
        let est = sliced_w2(&a, &b, DEFAULT_PROJECTIONS, &mut rng).unwrap();
        let exact = gaussian_sliced_w2_2d(m1, s1, m2, s2);
        assert!((est / exact - 1.0).abs() < 0.1, "{est} vs {exact}");
        // the sliced distance never exceeds the full one
        assert!(exact <= gaussian_w2_2d(m1, s1, m2, s2));
    }

    #[test]
    fn bures_examples() {
        let id = [[1.0, 0.0], [0.0, 1.0]];
        assert!((gaussian_w2_2d([0.0, 0.0], id, [3.0, 4.0], id) - 5.0).abs() < 1e-12);
        let s = [[4.0, 0.0], [0.0, 4.0]];
        // sqrt(2 * (2 - 1)^2)
        assert!((gaussian_w2_2d([0.0, 0.0], id, [0.0, 0.0], s) - 2f64.sqrt()).abs() < 1e-12);
    }
}
