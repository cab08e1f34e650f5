//! Config-driven experiment runner: builds the benchmark, sweeps algorithms,
//! scheduler exponents and seeds, and writes a deterministic CSV.
//!
//! `results.csv` columns, fixed:
//! `experiment_id,algorithm,steps,exponent,seed,feasibility_rate,sliced_w2,mmse,smse,cv_ic,cv_cl,mean_projection_move`.
//! Reals use 9 significant digits; cells that do not apply are empty
//! (`exponent` outside CCFM, `sliced_w2` for reaction-diffusion, the PDE
//! metrics elsewhere). Wall-clock times go to a separate timing file.

pub mod config;
pub mod figure;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

pub use config::{ExperimentConfig, FigureKind, ModelSpec};
pub use figure::{emit_figure, render_trajectories, render_violation_curve};

use crate::constraints::ConstraintSet;
use crate::error::{Error, Result};
use crate::flow::{FlowModel, Target};
use crate::num::SeededRng;
use crate::pde::{rd_benchmark, rd_constraints, rd_metrics, RdMetrics};
use crate::samplers::{run_batch, Algorithm, SampleRecord};
use crate::verify::{feasibility_rate, mean_projection_move, sliced_w2};

pub const CSV_HEADER: &str =
    "experiment_id,algorithm,steps,exponent,seed,feasibility_rate,sliced_w2,mmse,smse,cv_ic,cv_cl,mean_projection_move";
pub const TIMING_HEADER: &str = "experiment_id,algorithm,exponent,seed,wall_time_s";

/// RNG stream reserved for metric randomness (slice directions).
const METRIC_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Success,
    ConfigError,
    NumericalFailure,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        match self {
            ExitStatus::Success => 0,
            ExitStatus::ConfigError => 2,
            ExitStatus::NumericalFailure => 3,
        }
    }

    pub fn of_error(e: &Error) -> Self {
        match e {
            Error::Numerical(_) | Error::SingularGradient { .. } | Error::Simulation(_) | Error::Oracle(_) => {
                ExitStatus::NumericalFailure
            }
            Error::Domain(_) | Error::Dimension { .. } | Error::Config(_) | Error::Io(_) => ExitStatus::ConfigError,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Overrides {
    /// Replaces the configured seed list.
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub experiment_id: String,
    pub algorithm: Algorithm,
    pub steps: usize,
    pub exponent: Option<f64>,
    pub seed: u64,
    pub feasibility_rate: f64,
    pub sliced_w2: Option<f64>,
    pub rd: Option<RdMetrics>,
    pub mean_projection_move: f64,
}

fn fmt9(v: f64) -> String {
    format!("{v:.8e}")
}

fn opt9(v: Option<f64>) -> String {
    v.map(fmt9).unwrap_or_default()
}

impl ResultRow {
    pub fn to_csv(&self) -> String {
        let rd = |f: fn(&RdMetrics) -> f64| opt9(self.rd.as_ref().map(f));
        [
            self.experiment_id.clone(),
            self.algorithm.name().to_string(),
            self.steps.to_string(),
            opt9(self.exponent),
            self.seed.to_string(),
            fmt9(self.feasibility_rate),
            opt9(self.sliced_w2),
            rd(|m| m.mmse),
            rd(|m| m.smse),
            rd(|m| m.cv_ic),
            rd(|m| m.cv_cl),
            fmt9(self.mean_projection_move),
        ]
        .join(",")
    }
}

/// A benchmark ready to sample.
pub struct Prepared {
    pub model: FlowModel,
    pub cs: ConstraintSet,
    pub reference: Vec<Vec<f64>>,
    pub is_rd: bool,
}

/// Rejection sampling of `target` restricted to `cs`.
pub fn conditioned_reference(target: &Target, cs: &ConstraintSet, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let mut rng = SeededRng::new(seed, 0);
    let mut out = Vec::with_capacity(n);
    let budget = n.saturating_mul(1000).max(1000);
    for _ in 0..budget {
        if out.len() == n {
            break;
        }
        let x = target.sample(&mut rng);
        if cs.max_violation(&x)? <= 0.0 {
            out.push(x);
        }
    }
    if out.len() < n {
        return Err(Error::Config(format!(
            "feasible region too unlikely: {} of {n} reference samples after {budget} draws",
            out.len()
        )));
    }
    Ok(out)
}

pub fn prepare(cfg: &ExperimentConfig, base: &Path) -> Result<Prepared> {
    if let ModelSpec::Rd { setup, data_seed } = &cfg.model {
        let bench = rd_benchmark(setup, *data_seed)?;
        let cs = rd_constraints(&bench.problem)?.with_tol(cfg.tolerance)?;
        return Ok(Prepared {
            model: FlowModel::new(Target::empirical(bench.dataset)?),
            cs,
            reference: vec![bench.reference],
            is_rd: true,
        });
    }
    let target = cfg.target(base)?.expect("non-rd models have targets");
    let cs = cfg.constraint_set(target.dim())?;
    let m = &cfg.metrics;
    let reference = if m.reference == "conditioned" {
        conditioned_reference(&target, &cs, m.reference_samples, m.reference_seed)?
    } else {
        let r = crate::io::read_matrix(base.join(&m.reference))?;
        if r[0].len() != target.dim() {
            return Err(Error::Dimension { expected: target.dim(), got: r[0].len() });
        }
        r
    };
    Ok(Prepared { model: FlowModel::new(target), cs, reference, is_rd: false })
}

pub struct RunOutput {
    pub rows: Vec<ResultRow>,
    pub timings: Vec<(Algorithm, Option<f64>, u64, Duration)>,
    /// `(algorithm, seed, sample index)` of samples that failed terminal
    /// refinement.
    pub infeasible: Vec<(Algorithm, u64, usize)>,
    pub figures: Vec<(String, FigureKind, Vec<SampleRecord>)>,
}

impl RunOutput {
    pub fn csv(&self) -> String {
        let mut s = String::with_capacity(128 * (self.rows.len() + 1));
        s.push_str(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.to_csv());
            s.push('\n');
        }
        s
    }

    pub fn timing_csv(&self, id: &str) -> String {
        let mut s = String::from(TIMING_HEADER);
        s.push('\n');
        for (alg, n, seed, d) in &self.timings {
            writeln!(s, "{id},{},{},{seed},{:.6}", alg.name(), opt9(*n), d.as_secs_f64()).unwrap();
        }
        s
    }
}

/// Runs every (algorithm, exponent, seed) cell; nothing is written.
pub fn execute(cfg: &ExperimentConfig, base: &Path, ov: &Overrides) -> Result<RunOutput> {
    let prep = prepare(cfg, base)?;
    let seeds = ov.seed.map(|s| vec![s]).unwrap_or_else(|| cfg.sampler.seeds.clone());
    let mut out = RunOutput { rows: vec![], timings: vec![], infeasible: vec![], figures: vec![] };
    for &alg in &cfg.sampler.algorithms {
        let exponents: Vec<Option<f64>> = if alg == Algorithm::Ccfm {
            cfg.sampler.exponents.iter().copied().map(Some).collect()
        } else {
            vec![None]
        };
        for (ei, &n) in exponents.iter().enumerate() {
            for (si, &seed) in seeds.iter().enumerate() {
                let scfg = cfg.sampler.sampler_config(alg, n.unwrap_or(cfg.sampler.exponents[0]), seed)?;
                log::info!("{}: {} n={n:?} seed={seed}", cfg.id, alg.name());
                let records = run_batch(&prep.model, &prep.cs, &scfg)?;
                let refined = alg != Algorithm::Vanilla;
                for r in records.iter().filter(|r| refined && !r.feasible) {
                    log::error!(
                        "{}: {} seed {seed} sample {} infeasible after final refinement (max violation {:e})",
                        cfg.id,
                        alg.name(),
                        r.index,
                        r.final_violation
                    );
                    out.infeasible.push((alg, seed, r.index));
                }
                let (sliced_w2, rd) = if prep.is_rd {
                    let x1: Vec<Vec<f64>> = records.iter().map(|r| r.x1.clone()).collect();
                    let m = if x1.len() >= 2 { Some(rd_metrics(&x1, &prep.reference, &prep.cs)?) } else { None };
                    (None, m)
                } else {
                    let x1: Vec<Vec<f64>> = records.iter().map(|r| r.x1.clone()).collect();
                    let mut rng = SeededRng::new(seed, METRIC_STREAM);
                    (Some(sliced_w2(&x1, &prep.reference, cfg.metrics.projections, &mut rng)?), None)
                };
                out.rows.push(ResultRow {
                    experiment_id: cfg.id.clone(),
                    algorithm: alg,
                    steps: cfg.sampler.steps,
                    exponent: n,
                    seed,
                    feasibility_rate: feasibility_rate(&records, &prep.cs)?,
                    sliced_w2,
                    rd,
                    mean_projection_move: mean_projection_move(&records)?,
                });
                out.timings.push((alg, n, seed, records.iter().map(|r| r.wall_time).sum()));
                if ei == 0 && si == 0 {
                    for &kind in &cfg.output.figures {
                        let suffix = match kind {
                            FigureKind::Trajectory2d => "trajectory",
                            FigureKind::ViolationCurve => "violation",
                        };
                        let take = cfg.output.figure_samples.min(records.len());
                        out.figures.push((
                            format!("{}_{}_{suffix}.svg", cfg.id, alg.name()),
                            kind,
                            records[..take].to_vec(),
                        ));
                    }
                }
            }
        }
    }
    Ok(out)
}

fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_outputs(cfg: &ExperimentConfig, out: &RunOutput, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (name, kind, records) in &out.figures {
        emit_figure(records, *kind, &dir.join(name))?;
    }
    write_atomic(&dir.join(&cfg.output.timing), &out.timing_csv(&cfg.id))?;
    write_atomic(&dir.join(&cfg.output.csv), &out.csv())
}

pub fn output_dir(cfg: &ExperimentConfig, ov: &Overrides) -> PathBuf {
    ov.out_dir.clone().unwrap_or_else(|| cfg.output.dir.clone())
}

/// Loads, runs and writes one experiment. Config problems exit with 2 and
/// write nothing; samples left infeasible by the terminal refinement, or
/// numerical breakdowns, exit with 3.
pub fn run_experiment(path: &Path, ov: &Overrides) -> ExitStatus {
    let result = (|| {
        let cfg = ExperimentConfig::load(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let out = execute(&cfg, base, ov)?;
        write_outputs(&cfg, &out, &output_dir(&cfg, ov))?;
        Ok::<_, Error>(out)
    })();
    match result {
        Ok(out) if out.infeasible.is_empty() => ExitStatus::Success,
        Ok(out) => {
            log::error!("{} infeasible samples", out.infeasible.len());
            ExitStatus::NumericalFailure
        }
        Err(e) => {
            log::error!("{}: {e}", path.display());
            ExitStatus::of_error(&e)
        }
    }
}
