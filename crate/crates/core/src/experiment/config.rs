//! TOML experiment description.
//!
//! ```toml
//! id = "mixture_ccfm"
//!
//! [model]
//! kind = "mixture"
//! components = [
//!     { mean = [-2.0, 0.0], scale = 0.5, weight = 0.5 },
//!     { mean = [2.0, 0.0], scale = 0.5, weight = 0.5 },
//! ]
//!
//! [[constraint]]
//! kind = "linear"
//! a = [1.0, 0.0]
//! b = 0.0
//!
//! [sampler]
//! algorithms = ["ccfm", "repeated"]
//! steps = 100
//! samples = 200
//! seeds = [0, 1, 2]
//! ```

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::chance::{Mode, Scheduler};
use crate::constraints::{Constraint, ConstraintSet, LinearBand, LinearIneq, MinDistance, QuadIneq, DEFAULT_TOL};
use crate::error::{Error, Result};
use crate::flow::{MixtureComponent, Target};
use crate::pde::RdSetup;
use crate::projection::GnConfig;
use crate::samplers::{Algorithm, SamplerConfig, Stepper};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub id: String,
    pub model: ModelSpec,
    #[serde(default, rename = "constraint")]
    pub constraints: Vec<ConstraintSpec>,
    #[serde(default = "default_tol")]
    pub tolerance: f64,
    pub sampler: SamplerSpec,
    #[serde(default)]
    pub metrics: MetricsSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

fn default_tol() -> f64 {
    DEFAULT_TOL
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ModelSpec {
    Mixture {
        components: Vec<ComponentSpec>,
    },
    /// Atoms from a matrix file, one per row.
    Empirical {
        data: PathBuf,
        #[serde(default)]
        weights: Option<Vec<f64>>,
    },
    /// Simulated reaction-diffusion fields; constraints come from the
    /// held-out test condition.
    Rd {
        #[serde(default)]
        setup: RdSetup,
        #[serde(default)]
        data_seed: u64,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentSpec {
    pub mean: Vec<f64>,
    pub scale: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConstraintSpec {
    Linear { a: Vec<f64>, b: f64 },
    Band { a: Vec<f64>, lo: f64, hi: f64 },
    Quadratic { a: Vec<f64>, b: f64 },
    MinDistance {
        center: Vec<f64>,
        radius: f64,
        #[serde(default)]
        subset: Option<Vec<usize>>,
    },
}

impl ConstraintSpec {
    pub fn build(&self) -> Result<Constraint> {
        Ok(match self {
            ConstraintSpec::Linear { a, b } => Constraint::Linear(LinearIneq::new(a.clone(), *b)?),
            ConstraintSpec::Band { a, lo, hi } => Constraint::Band(LinearBand::new(a.clone(), *lo, *hi)?),
            ConstraintSpec::Quadratic { a, b } => Constraint::Quadratic(QuadIneq::new(a.clone(), *b)?),
            ConstraintSpec::MinDistance { center, radius, subset: None } => {
                Constraint::MinDistance(MinDistance::full(center.clone(), *radius)?)
            }
            ConstraintSpec::MinDistance { center, radius, subset: Some(s) } => {
                Constraint::MinDistance(MinDistance::new(center.clone(), *radius, s.clone())?)
            }
        })
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSpec {
    pub algorithms: Vec<Algorithm>,
    #[serde(default = "default_stepper")]
    pub stepper: Stepper,
    pub steps: usize,
    #[serde(default = "default_exponents")]
    pub exponents: Vec<f64>,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    #[serde(default = "default_budget")]
    pub final_budget: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    pub samples: usize,
    #[serde(default = "default_mixing")]
    pub eci_mixing: usize,
    /// Gauss-Newton iterations per intermediate correction.
    #[serde(default = "default_gn_iters")]
    pub gn_iters: usize,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
}

fn default_stepper() -> Stepper {
    Stepper::Euler
}
fn default_exponents() -> Vec<f64> {
    vec![0.5]
}
fn default_mode() -> Mode {
    Mode::Marginal
}
fn default_budget() -> usize {
    30
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_mixing() -> usize {
    2
}
fn default_gn_iters() -> usize {
    1
}
fn default_lambda() -> f64 {
    1e-6
}

impl SamplerSpec {
    pub fn sampler_config(&self, algorithm: Algorithm, exponent: f64, seed: u64) -> Result<SamplerConfig> {
        let cfg = SamplerConfig {
            algorithm,
            stepper: self.stepper,
            steps: self.steps,
            scheduler: Scheduler::new(exponent)?,
            mode: self.mode,
            gn: GnConfig {
                lambda: self.lambda,
                max_iters: self.gn_iters,
                ..GnConfig::default()
            },
            final_budget: self.final_budget,
            seed,
            samples: self.samples,
            eci_mixing: self.eci_mixing,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsSpec {
    /// `"conditioned"` rejection-samples the target restricted to the
    /// constraint set; anything else is a matrix file path.
    pub reference: String,
    pub reference_samples: usize,
    pub reference_seed: u64,
    pub projections: usize,
}

impl Default for MetricsSpec {
    fn default() -> Self {
        Self {
            reference: "conditioned".into(),
            reference_samples: 2000,
            reference_seed: 12345,
            projections: crate::verify::DEFAULT_PROJECTIONS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FigureKind {
    #[serde(rename = "trajectory_2d")]
    Trajectory2d,
    ViolationCurve,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSpec {
    pub dir: PathBuf,
    pub csv: String,
    pub timing: String,
    pub figures: Vec<FigureKind>,
    /// Records drawn per figure.
    pub figure_samples: usize,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("results"),
            csv: "results.csv".into(),
            timing: "timing.csv".into(),
            figures: Vec::new(),
            figure_samples: 30,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    fn check(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.id.is_empty() || !self.id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
            return bad("id must be a nonempty [A-Za-z0-9_-] string");
        }
        let s = &self.sampler;
        if s.algorithms.is_empty() {
            return bad("sampler.algorithms is empty");
        }
        if s.seeds.is_empty() {
            return bad("sampler.seeds is empty");
        }
        if s.exponents.is_empty() {
            return bad("sampler.exponents is empty");
        }
        if s.samples == 0 || s.steps == 0 {
            return bad("sampler.samples and sampler.steps must be positive");
        }
        if self.metrics.projections == 0 {
            return bad("metrics.projections must be positive");
        }
        if matches!(self.model, ModelSpec::Rd { .. }) && !self.constraints.is_empty() {
            return bad("rd models derive their constraints; remove [[constraint]] blocks");
        }
        Ok(())
    }

    /// Target of a mixture or empirical model; relative data paths resolve
    /// against `base`.
    pub fn target(&self, base: &Path) -> Result<Option<Target>> {
        Ok(match &self.model {
            ModelSpec::Mixture { components } => Some(Target::gaussian_mixture(
                components
                    .iter()
                    .map(|c| MixtureComponent { mean: c.mean.clone(), scale: c.scale, weight: c.weight })
                    .collect(),
            )?),
            ModelSpec::Empirical { data, weights } => {
                let atoms = crate::io::read_matrix(base.join(data))?;
                Some(match weights {
                    Some(w) => Target::weighted_empirical(atoms, w.clone())?,
                    None => Target::empirical(atoms)?,
                })
            }
            ModelSpec::Rd { .. } => None,
        })
    }

    pub fn constraint_set(&self, dim: usize) -> Result<ConstraintSet> {
        let cs = self.constraints.iter().map(ConstraintSpec::build).collect::<Result<Vec<_>>>()?;
        ConstraintSet::new(dim, cs)?.with_tol(self.tolerance)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
id = "t"
[model]
kind = "mixture"
components = [{ mean = [0.0, 1.0], scale = 1.0, weight = 1.0 }]
[[constraint]]
kind = "band"
a = [1.0, 1.0]
lo = -1.0
hi = 1.0
[[constraint]]
kind = "min_distance"
center = [0.0]
radius = 0.5
subset = [1]
[sampler]
algorithms = ["ccfm", "eci"]
steps = 10
samples = 4
"#;

    #[test]
    fn parses_with_defaults() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.sampler.seeds, vec![0]);
        assert_eq!(cfg.sampler.final_budget, 30);
        assert_eq!(cfg.sampler.mode, Mode::Marginal);
        assert_eq!(cfg.metrics.projections, 128);
        assert_eq!(cfg.constraints.len(), 2);
        let cs = cfg.constraint_set(2).unwrap();
        assert_eq!(cs.len(), 2);
        assert_eq!(cfg.target(Path::new(".")).unwrap().unwrap().dim(), 2);
    }

    #[test]
    fn rejects_malformed() {
        for bad in [
            "id = 3",
            &MINIMAL.replace("kind = \"band\"", "kind = \"banana\""),
            &MINIMAL.replace("steps = 10", "steps = 10\nsteep = 3"),
            &MINIMAL.replace("algorithms = [\"ccfm\", \"eci\"]", "algorithms = []"),
            &MINIMAL.replace("id = \"t\"", "id = \"a/b\""),
        ] {
            assert!(matches!(ExperimentConfig::from_toml(bad), Err(Error::Config(_))), "{bad}");
        }
        let cfg = ExperimentConfig::from_toml(&MINIMAL.replace("lo = -1.0", "lo = 2.0")).unwrap();
        assert!(cfg.constraint_set(2).is_err());
    }

    #[test]
    fn sampler_config_validates_exponent() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert!(cfg.sampler.sampler_config(Algorithm::Ccfm, 0.5, 1).is_ok());
        assert!(cfg.sampler.sampler_config(Algorithm::Ccfm, -1.0, 1).is_err());
    }
}
