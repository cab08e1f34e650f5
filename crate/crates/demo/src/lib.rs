//! wasm-bindgen entry points for `www/index.html`. Every function returns a
//! flat `Float64Array`; shapes are documented per function.

use ccfm::chance::{tighten_set, Mode, Scheduler};
use ccfm::constraints::{Constraint, ConstraintSet, LinearIneq};
use ccfm::flow::{FlowModel, MixtureComponent, Target};
use ccfm::pde::{rd_benchmark, rd_constraints, RdSetup};
use ccfm::samplers::{run_batch, sample, Algorithm, SamplerConfig};
use wasm_bindgen::prelude::*;

fn js(e: ccfm::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn algorithm(name: &str) -> Result<Algorithm, JsError> {
    match name {
        "vanilla" => Ok(Algorithm::Vanilla),
        "repeated" => Ok(Algorithm::Repeated),
        "eci" => Ok(Algorithm::Eci),
        "ccfm" => Ok(Algorithm::Ccfm),
        other => Err(JsError::new(&format!("unknown algorithm {other:?}"))),
    }
}

fn bimodal() -> Result<FlowModel, ccfm::Error> {
    let comp = |m: f64| MixtureComponent { mean: vec![m, 0.0], scale: 0.5, weight: 0.5 };
    Ok(FlowModel::new(Target::gaussian_mixture(vec![comp(-2.0), comp(2.0)])?))
}

fn halfspace(b: f64) -> Result<ConstraintSet, ccfm::Error> {
    ConstraintSet::new(2, vec![Constraint::Linear(LinearIneq::new(vec![1.0, 0.0], b)?)])
}

/// Trajectories on the two-mode mixture under `x <= b`.
/// Layout: `samples x (steps + 1) x 2`.
#[wasm_bindgen]
pub fn mixture_trajectories(
    alg: &str,
    exponent: f64,
    steps: usize,
    b: f64,
    samples: usize,
    seed: u64,
) -> Result<Vec<f64>, JsError> {
    let model = bimodal().map_err(js)?;
    let cs = halfspace(b).map_err(js)?;
    let mut cfg = SamplerConfig::new(algorithm(alg)?, steps);
    cfg.scheduler = Scheduler::new(exponent).map_err(js)?;
    cfg.seed = seed;
    cfg.samples = samples;
    let records = run_batch(&model, &cs, &cfg).map_err(js)?;
    Ok(records.iter().flat_map(|r| r.states.iter().flatten().copied()).collect())
}

/// Marginal bound on the clean estimate, `rhs / t`, of `x <= b` at `points`
/// evenly spaced times in `(0, 1]`. `NaN` where nothing is enforced.
/// Layout: `points x [t, bound]`.
#[wasm_bindgen]
pub fn bound_curve(exponent: f64, b: f64, points: usize) -> Result<Vec<f64>, JsError> {
    let cs = halfspace(b).map_err(js)?;
    let sched = Scheduler::new(exponent).map_err(js)?;
    let mut out = Vec::with_capacity(2 * points);
    for i in 1..=points {
        let t = i as f64 / points as f64;
        let tightened = tighten_set(&cs, t, &sched, Mode::Marginal, None).map_err(js)?;
        let bound = match tightened.constraints().first() {
            Some(Constraint::Linear(l)) => l.b / t,
            _ => f64::NAN,
        };
        out.extend([t, bound]);
    }
    Ok(out)
}

/// One reaction-diffusion sample conditioned on the benchmark's held-out
/// initial condition and fluxes, followed by the simulated reference.
/// Layout: `[n_s, n_t, sample (n_t x n_s), reference (n_t x n_s)]`.
#[wasm_bindgen]
pub fn rd_sample(alg: &str, steps: usize, seed: u64) -> Result<Vec<f64>, JsError> {
    let setup = RdSetup::default();
    let bench = rd_benchmark(&setup, 0).map_err(js)?;
    let cs = rd_constraints(&bench.problem).map_err(js)?;
    let model = FlowModel::new(Target::empirical(bench.dataset).map_err(js)?);
    let mut cfg = SamplerConfig::new(algorithm(alg)?, steps);
    cfg.mode = Mode::Pathwise;
    cfg.seed = seed;
    let record = sample(&model, &cs, &cfg, 0).map_err(js)?;
    let mut out = vec![setup.n_s as f64, setup.n_t as f64];
    out.extend(record.x1);
    out.extend(bench.reference);
    Ok(out)
}
