//! Unconstrained, repeated-projection, ECI and chance-constrained samplers
//! over fixed-step Euler and Heun integrators.

use std::time::Duration;

use crate::chance::{tighten_set, Mode, Scheduler};
use crate::constraints::ConstraintSet;
use crate::error::{Error, Result};
use crate::flow::{VelocityField, T_CLAMP};
use crate::num::{axpy, dist, SeededRng};
use crate::projection::{final_refine, project_clean, project_decomposed, GnConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Vanilla,
    Repeated,
    Eci,
    Ccfm,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Vanilla => "vanilla",
            Algorithm::Repeated => "repeated",
            Algorithm::Eci => "eci",
            Algorithm::Ccfm => "ccfm",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stepper {
    Euler,
    Heun,
}

#[derive(Debug, Clone)]
pub struct SamplerConfig {
    pub algorithm: Algorithm,
    pub stepper: Stepper,
    pub steps: usize,
    pub scheduler: Scheduler,
    pub mode: Mode,
    /// Per-step correction settings.
    pub gn: GnConfig,
    pub final_budget: usize,
    pub seed: u64,
    pub samples: usize,
    /// Noise-resampling events for ECI; 0 disables them.
    pub eci_mixing: usize,
}

impl SamplerConfig {
    pub fn new(algorithm: Algorithm, steps: usize) -> Self {
        Self {
            algorithm,
            stepper: Stepper::Euler,
            steps,
            scheduler: Scheduler::new(0.5).expect("positive exponent"),
            mode: Mode::Marginal,
            gn: GnConfig::single_pass(),
            final_budget: 30,
            seed: 0,
            samples: 1,
            eci_mixing: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("sampler needs at least one step".into()));
        }
        self.gn.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub index: usize,
    pub x0: Vec<f64>,
    /// `states[0] = x0`, `states[N] = x1`.
    pub states: Vec<Vec<f64>>,
    pub x1: Vec<f64>,
    /// Clean-constraint violation of each post-step state.
    pub per_step_violation: Vec<f64>,
    /// `||x' - x||` of each per-step correction.
    pub projection_moves: Vec<f64>,
    pub final_violation: f64,
    /// Terminal refinement ran and reached the set's tolerance.
    pub feasible: bool,
    pub refine_iterations: usize,
    pub wall_time: Duration,
}

pub fn euler_step<V: VelocityField + ?Sized>(field: &V, x: &[f64], t: f64, dt: f64) -> Result<Vec<f64>> {
    let mut out = x.to_vec();
    if dt == 0.0 {
        return Ok(out);
    }
    let u = field.velocity(x, t.min(T_CLAMP))?;
    axpy(dt, &u, &mut out);
    Ok(out)
}

/// Predictor-corrector (explicit trapezoid) step.
pub fn heun_step<V: VelocityField + ?Sized>(field: &V, x: &[f64], t: f64, dt: f64) -> Result<Vec<f64>> {
    let mut out = x.to_vec();
    if dt == 0.0 {
        return Ok(out);
    }
    let u0 = field.velocity(x, t.min(T_CLAMP))?;
    let mut pred = x.to_vec();
    axpy(dt, &u0, &mut pred);
    let u1 = field.velocity(&pred, (t + dt).min(T_CLAMP))?;
    for ((o, a), b) in out.iter_mut().zip(&u0).zip(&u1) {
        *o += 0.5 * dt * (a + b);
    }
    Ok(out)
}

fn advance<V: VelocityField + ?Sized>(stepper: Stepper, field: &V, x: &[f64], t: f64, dt: f64) -> Result<Vec<f64>> {
    match stepper {
        Stepper::Euler => euler_step(field, x, t, dt),
        Stepper::Heun => heun_step(field, x, t, dt),
    }
}

/// The per-step chance-constrained projection at time `t` (the time of the
/// state being projected).
pub fn ccfm_project(
    x: &[f64],
    x0: &[f64],
    t: f64,
    cs: &ConstraintSet,
    scheduler: &Scheduler,
    mode: Mode,
    gn: &GnConfig,
) -> Result<Vec<f64>> {
    match mode {
        Mode::Marginal => {
            let tightened = tighten_set(cs, t, scheduler, mode, None)?;
            project_clean(x, &tightened, gn)
        }
        Mode::Pathwise => project_decomposed(x, x0, t, cs, gn),
    }
}

/// Retries once after nudging `x` by 1e-8 in a seeded random direction when
/// a min-distance constraint is queried exactly at its center.
fn nudged<F>(x: &[f64], rng: &mut SeededRng, mut f: F) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    match f(x) {
        Err(Error::SingularGradient { .. }) => {
            let mut y = x.to_vec();
            axpy(1e-8, &rng.unit_vec(x.len()), &mut y);
            f(&y)
        }
        other => other,
    }
}

struct Stopwatch {
    #[cfg(not(target_arch = "wasm32"))]
    start: std::time::Instant,
}

impl Stopwatch {
    fn start() -> Self {
        Self {
            #[cfg(not(target_arch = "wasm32"))]
            start: std::time::Instant::now(),
        }
    }

    fn elapsed(&self) -> Duration {
        #[cfg(not(target_arch = "wasm32"))]
        return self.start.elapsed();
        #[cfg(target_arch = "wasm32")]
        Duration::ZERO
    }
}

struct Trajectory {
    states: Vec<Vec<f64>>,
    moves: Vec<f64>,
}

impl Trajectory {
    fn new(x0: &[f64], steps: usize) -> Self {
        let mut states = Vec::with_capacity(steps + 1);
        states.push(x0.to_vec());
        Self { states, moves: Vec::with_capacity(steps) }
    }

    fn push(&mut self, x: Vec<f64>, moved: f64) {
        self.states.push(x);
        self.moves.push(moved);
    }

    fn last(&self) -> &[f64] {
        self.states.last().expect("trajectory starts with x0")
    }
}

fn finish(
    index: usize,
    mut traj: Trajectory,
    cs: &ConstraintSet,
    refine_budget: Option<usize>,
    clock: Stopwatch,
    rng: &mut SeededRng,
) -> Result<SampleRecord> {
    let mut refine_iterations = 0;
    let mut feasible = false;
    if let Some(budget) = refine_budget {
        let last = traj.last().to_vec();
        let mut iters = 0;
        let mut ok = false;
        let refined = nudged(&last, rng, |y| {
            let rep = final_refine(y, cs, budget)?;
            iters = rep.iterations;
            ok = rep.converged;
            Ok(rep.x_out)
        })?;
        refine_iterations = iters;
        feasible = ok;
        *traj.states.last_mut().expect("nonempty") = refined;
    }
    let per_step_violation = traj.states[1..]
        .iter()
        .map(|s| cs.max_violation(s))
        .collect::<Result<Vec<_>>>()?;
    let x1 = traj.last().to_vec();
    let final_violation = cs.max_violation(&x1)?;
    if refine_budget.is_some() && !feasible {
        log::warn!("sample {index}: max violation {final_violation:e} after final refinement");
    }
    Ok(SampleRecord {
        index,
        x0: traj.states[0].clone(),
        x1,
        states: traj.states,
        per_step_violation,
        projection_moves: traj.moves,
        final_violation,
        feasible: feasible || (refine_budget.is_none() && final_violation <= cs.tol()),
        refine_iterations,
        wall_time: clock.elapsed(),
    })
}

fn start<V: VelocityField + ?Sized>(model: &V, cfg: &SamplerConfig, index: usize) -> Result<(SeededRng, Vec<f64>)> {
    cfg.validate()?;
    let mut rng = SeededRng::new(cfg.seed, index as u64);
    let x0 = rng.std_normal_vec(model.dim());
    Ok((rng, x0))
}

fn grid(k: usize, n: usize) -> f64 {
    k as f64 / n as f64
}

/// Plain flow ODE integration; `cs` only feeds the diagnostics.
pub fn sample_vanilla<V: VelocityField + ?Sized>(
    model: &V,
    cs: &ConstraintSet,
    cfg: &SamplerConfig,
    index: usize,
) -> Result<SampleRecord> {
    let clock = Stopwatch::start();
    let (mut rng, x0) = start(model, cfg, index)?;
    let n = cfg.steps;
    let mut traj = Trajectory::new(&x0, n);
    for k in 0..n {
        let (t, t1) = (grid(k, n), grid(k + 1, n));
        let x = advance(cfg.stepper, model, traj.last(), t, t1 - t)?;
        traj.push(x, 0.0);
    }
    finish(index, traj, cs, None, clock, &mut rng)
}

/// Every tentative step is projected onto the clean-sample set itself.
pub fn sample_repeated<V: VelocityField + ?Sized>(
    model: &V,
    cs: &ConstraintSet,
    cfg: &SamplerConfig,
    index: usize,
) -> Result<SampleRecord> {
    let clock = Stopwatch::start();
    let (mut rng, x0) = start(model, cfg, index)?;
    let n = cfg.steps;
    let mut traj = Trajectory::new(&x0, n);
    for k in 0..n {
        let (t, t1) = (grid(k, n), grid(k + 1, n));
        let x = advance(cfg.stepper, model, traj.last(), t, t1 - t)?;
        let p = nudged(&x, &mut rng, |y| project_clean(y, cs, &cfg.gn))?;
        let moved = dist(&p, &x);
        traj.push(p, moved);
    }
    finish(index, traj, cs, Some(cfg.final_budget), clock, &mut rng)
}

/// Extrapolate to t = 1, correct the prediction onto the clean set, and
/// interpolate back along the predicted noise (fresh noise at mixing events).
pub fn sample_eci<V: VelocityField + ?Sized>(
    model: &V,
    cs: &ConstraintSet,
    cfg: &SamplerConfig,
    index: usize,
) -> Result<SampleRecord> {
    let clock = Stopwatch::start();
    let (mut rng, x0) = start(model, cfg, index)?;
    let n = cfg.steps;
    let spacing = if cfg.eci_mixing == 0 { 0 } else { n.div_ceil(cfg.eci_mixing) };
    let mut traj = Trajectory::new(&x0, n);
    for k in 0..n {
        let (t, t1) = (grid(k, n), grid(k + 1, n));
        let x = traj.last().to_vec();
        let dt = t1 - t;
        // velocity actually used by the stepper over this step
        let stepped = advance(cfg.stepper, model, &x, t, dt)?;
        let u: Vec<f64> = stepped.iter().zip(&x).map(|(a, b)| (a - b) / dt).collect();

        let mut x1_hat = x.clone();
        axpy(1.0 - t, &u, &mut x1_hat);
        let x1_corr = nudged(&x1_hat, &mut rng, |y| project_clean(y, cs, &cfg.gn))?;

        let noise = if spacing > 0 && (k + 1) % spacing == 0 {
            rng.std_normal_vec(x.len())
        } else {
            let mut e = x.clone();
            axpy(-t, &u, &mut e);
            e
        };
        let next: Vec<f64> = noise
            .iter()
            .zip(&x1_corr)
            .map(|(e, c)| (1.0 - t1) * e + t1 * c)
            .collect();
        let moved = t1 * dist(&x1_corr, &x1_hat);
        traj.push(next, moved);
    }
    finish(index, traj, cs, Some(cfg.final_budget), clock, &mut rng)
}

/// Chance-constrained flow matching: step, then project onto the
/// time-dependent tightened set.
pub fn sample_ccfm<V: VelocityField + ?Sized>(
    model: &V,
    cs: &ConstraintSet,
    cfg: &SamplerConfig,
    index: usize,
) -> Result<SampleRecord> {
    let clock = Stopwatch::start();
    let (mut rng, x0) = start(model, cfg, index)?;
    let n = cfg.steps;
    let mut traj = Trajectory::new(&x0, n);
    for k in 0..n {
        let (t, t1) = (grid(k, n), grid(k + 1, n));
        let x = advance(cfg.stepper, model, traj.last(), t, t1 - t)?;
        let p = nudged(&x, &mut rng, |y| {
            ccfm_project(y, &x0, t1, cs, &cfg.scheduler, cfg.mode, &cfg.gn)
        })?;
        let moved = dist(&p, &x);
        traj.push(p, moved);
    }
    finish(index, traj, cs, Some(cfg.final_budget), clock, &mut rng)
}

pub fn sample<V: VelocityField + ?Sized>(
    model: &V,
    cs: &ConstraintSet,
    cfg: &SamplerConfig,
    index: usize,
) -> Result<SampleRecord> {
    match cfg.algorithm {
        Algorithm::Vanilla => sample_vanilla(model, cs, cfg, index),
        Algorithm::Repeated => sample_repeated(model, cs, cfg, index),
        Algorithm::Eci => sample_eci(model, cs, cfg, index),
        Algorithm::Ccfm => sample_ccfm(model, cs, cfg, index),
    }
}

/// Runs `cfg.samples` independent samples. Each sample owns the RNG stream
/// `(cfg.seed, index)`, so results do not depend on scheduling.
pub fn run_batch<V: VelocityField + ?Sized>(
    model: &V,
    cs: &ConstraintSet,
    cfg: &SamplerConfig,
) -> Result<Vec<SampleRecord>> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..cfg.samples)
            .into_par_iter()
            .map(|i| sample(model, cs, cfg, i))
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..cfg.samples).map(|i| sample(model, cs, cfg, i)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::{Constraint, LinearIneq};
    use crate::flow::{FlowModel, MixtureComponent, Target};
    use crate::num::norm;

    struct Constant(Vec<f64>);
    impl VelocityField for Constant {
        fn dim(&self) -> usize {
            self.0.len()
        }
        fn velocity(&self, _x: &[f64], _t: f64) -> Result<Vec<f64>> {
            Ok(self.0.clone())
        }
    }

    /// `u(x) = k x`
    struct Linear(f64);
    impl VelocityField for Linear {
        fn dim(&self) -> usize {
            1
        }
        fn velocity(&self, x: &[f64], _t: f64) -> Result<Vec<f64>> {
            Ok(vec![self.0 * x[0]])
        }
    }

    fn mixture() -> FlowModel {
        let comp = |m: f64| MixtureComponent { mean: vec![m, 0.0], scale: 0.5, weight: 0.5 };
        FlowModel::new(Target::gaussian_mixture(vec![comp(-2.0), comp(2.0)]).unwrap())
    }

    fn halfspace(b: f64) -> ConstraintSet {
        ConstraintSet::new(2, vec![Constraint::Linear(LinearIneq::new(vec![1.0, 0.0], b).unwrap())]).unwrap()
    }

    #[test]
    fn euler_examples() {
        let f = Constant(vec![1.0, 0.0]);
        assert_eq!(euler_step(&f, &[0.0, 0.0], 0.0, 0.1).unwrap(), vec![0.1, 0.0]);
        assert_eq!(euler_step(&f, &[0.3, 0.4], 0.2, 0.0).unwrap(), vec![0.3, 0.4]);
    }

    #[test]
    fn heun_examples() {
        let f = Constant(vec![1.0, -2.0]);
        assert_eq!(
            heun_step(&f, &[0.5, 0.5], 0.1, 0.25).unwrap(),
            euler_step(&f, &[0.5, 0.5], 0.1, 0.25).unwrap()
        );
        assert_eq!(heun_step(&f, &[0.5, 0.5], 0.1, 0.0).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn heun_local_error_is_third_order() {
        // exact flow x exp(k dt); the local error should shrink ~8x per halving
        let f = Linear(-1.3);
        let mut prev = None;
        for dt in [0.1, 0.05, 0.025, 0.0125] {
            let err = (heun_step(&f, &[1.0], 0.0, dt).unwrap()[0] - (-1.3 * dt).exp()).abs();
            if let Some(p) = prev {
                let ratio: f64 = p / err;
                assert!((ratio - 8.0).abs() < 0.5, "ratio {ratio}");
            }
            prev = Some(err);
        }
    }

    #[test]
    fn grid_convergence_rates() {
        // single-atom target under a linear-in-x perturbation is exactly
        // straight, so use the exponential ODE for rates instead
        let f = Linear(1.0);
        for (stepper, expected) in [(Stepper::Euler, 2.0), (Stepper::Heun, 4.0)] {
            let mut errs = vec![];
            for n in [20usize, 40, 80] {
                let mut x = vec![1.0];
                for k in 0..n {
                    x = advance(stepper, &f, &x, grid(k, n), 1.0 / n as f64).unwrap();
                }
                errs.push((x[0] - std::f64::consts::E).abs());
            }
            for w in errs.windows(2) {
                let r = w[0] / w[1];
                assert!(r > expected / 2.0 && r < expected * 2.0, "{stepper:?}: {r}");
            }
        }
    }

    #[test]
    fn vanilla_hits_single_atom_and_is_deterministic() {
        let c = vec![1.5, -0.5];
        let model = FlowModel::new(Target::empirical(vec![c.clone()]).unwrap());
        let mut cfg = SamplerConfig::new(Algorithm::Vanilla, 50);
        cfg.seed = 3;
        let cs = ConstraintSet::empty(2);
        let r = sample_vanilla(&model, &cs, &cfg, 0).unwrap();
        assert!(dist(&r.x1, &c) <= dist(&r.x0, &c) / 50.0);
        let again = sample_vanilla(&model, &cs, &cfg, 0).unwrap();
        assert_eq!(r.states, again.states);
        assert_eq!(r.states.len(), 51);
        assert_eq!(r.states[0], r.x0);
        assert_eq!(r.states[50], r.x1);
    }

    #[test]
    fn no_constraints_all_samplers_agree() {
        let model = mixture();
        let cs = ConstraintSet::empty(2);
        for stepper in [Stepper::Euler, Stepper::Heun] {
            let mut base = SamplerConfig::new(Algorithm::Vanilla, 40);
            base.stepper = stepper;
            base.seed = 11;
            base.eci_mixing = 0;
            let v = sample(&model, &cs, &base, 2).unwrap();
            for alg in [Algorithm::Repeated, Algorithm::Eci, Algorithm::Ccfm] {
                let cfg = SamplerConfig { algorithm: alg, ..base.clone() };
                let r = sample(&model, &cs, &cfg, 2).unwrap();
                for (a, b) in r.states.iter().zip(&v.states) {
                    assert!(dist(a, b) <= 1e-10, "{alg:?} {stepper:?}: {}", dist(a, b));
                }
            }
        }
    }

    #[test]
    fn loose_halfspace_changes_nothing() {
        let model = mixture();
        let cs = halfspace(50.0);
        let base = SamplerConfig { seed: 5, ..SamplerConfig::new(Algorithm::Vanilla, 30) };
        let v = sample(&model, &cs, &base, 0).unwrap();
        for alg in [Algorithm::Repeated, Algorithm::Ccfm] {
            let r = sample(&model, &cs, &SamplerConfig { algorithm: alg, ..base.clone() }, 0).unwrap();
            assert!(r.projection_moves.iter().all(|m| *m == 0.0));
            for (a, b) in r.states.iter().zip(&v.states) {
                assert!(dist(a, b) <= 1e-12);
            }
        }
    }

    #[test]
    fn constrained_samplers_end_feasible() {
        let model = mixture();
        let cs = halfspace(0.0);
        for alg in [Algorithm::Repeated, Algorithm::Eci, Algorithm::Ccfm] {
            let cfg = SamplerConfig { seed: 1, samples: 20, ..SamplerConfig::new(alg, 50) };
            for r in run_batch(&model, &cs, &cfg).unwrap() {
                assert!(r.feasible, "{alg:?}");
                assert!(r.final_violation <= 1e-8);
                if alg == Algorithm::Repeated {
                    assert!(r.per_step_violation.iter().all(|v| *v <= 1e-8));
                }
            }
        }
    }

    #[test]
    fn eci_single_feasible_atom() {
        let c = vec![-1.0, 0.5];
        let model = FlowModel::new(Target::empirical(vec![c.clone()]).unwrap());
        let cfg = SamplerConfig { seed: 2, ..SamplerConfig::new(Algorithm::Eci, 40) };
        let r = sample_eci(&model, &halfspace(0.0), &cfg, 0).unwrap();
        assert!(dist(&r.x1, &c) <= 1e-9 + dist(&r.x0, &c) / 40.0);
        let again = sample_eci(&model, &halfspace(0.0), &cfg, 0).unwrap();
        assert_eq!(r, SampleRecord { wall_time: r.wall_time, ..again });
    }

    #[test]
    fn ccfm_last_step_uses_untightened_constraints() {
        let cs = halfspace(0.3);
        let sched = Scheduler::new(0.5).unwrap();
        let x = [2.0, 1.0];
        let p = ccfm_project(&x, &[0.0, 0.0], 1.0, &cs, &sched, Mode::Marginal, &GnConfig::single_pass()).unwrap();
        assert!(dist(&p, &[0.3, 1.0]) <= 1e-15);
        let p = ccfm_project(&x, &[0.4, 0.0], 1.0, &cs, &sched, Mode::Pathwise, &GnConfig::single_pass()).unwrap();
        assert!(dist(&p, &[0.3, 1.0]) <= 1e-15);
    }

    #[test]
    fn batch_is_order_independent() {
        let model = mixture();
        let cs = halfspace(0.0);
        let cfg = SamplerConfig { seed: 9, samples: 8, ..SamplerConfig::new(Algorithm::Ccfm, 20) };
        let batch = run_batch(&model, &cs, &cfg).unwrap();
        for (i, r) in batch.iter().enumerate() {
            assert_eq!(r.index, i);
            let solo = sample(&model, &cs, &cfg, i).unwrap();
            assert_eq!(solo.states, r.states);
        }
    }

    #[test]
    fn zero_steps_is_a_config_error() {
        let cfg = SamplerConfig::new(Algorithm::Vanilla, 0);
        assert!(matches!(
            sample(&mixture(), &ConstraintSet::empty(2), &cfg, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn min_distance_center_is_nudged() {
        use crate::constraints::MinDistance;
        // atom at the center of the forbidden disc: repeated projection hits
        // the singular point once the flow collapses onto it
        let model = FlowModel::new(Target::empirical(vec![vec![0.0, 0.0]]).unwrap());
        let cs = ConstraintSet::new(
            2,
            vec![Constraint::MinDistance(MinDistance::full(vec![0.0, 0.0], 0.5).unwrap())],
        )
        .unwrap();
        let cfg = SamplerConfig { seed: 4, ..SamplerConfig::new(Algorithm::Repeated, 10) };
        let r = sample(&model, &cs, &cfg, 0).unwrap();
        assert!(r.feasible);
        assert!(norm(&r.x1) >= 0.5 - 1e-8);
    }
}
