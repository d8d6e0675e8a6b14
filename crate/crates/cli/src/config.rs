//! TOML config schema, defaults, and lowering to a core `SimConfig`.
//!
//! Only the particle list, `epsilon`, `delta_a`, and `T` are required;
//! every other key has the default shown in its section struct. Unknown
//! keys are rejected, and `parse_str` after `to_toml_string` returns the
//! same `ConfigFile` value.

use std::fs;
use std::path::{Path, PathBuf};

use adhesim_core::{
    DomainSpec, OffRate, RateModel, SimConfig, SolverChoice, StepPolicy, Vec2,
};
use serde::{Deserialize, Serialize};

use crate::error::{io_at, CliError};

/// On-disk schema. Field order matters for serialization: TOML wants the
/// top-level scalars before the first table header.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub epsilon: f64,
    pub delta_a: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(default)]
    pub seed: u64,
    pub particles: Particles,
    #[serde(default)]
    pub domain: Domain,
    #[serde(default)]
    pub load: Load,
    #[serde(default)]
    pub rates: Rates,
    #[serde(default)]
    pub noise: Noise,
    #[serde(default)]
    pub solver: Solver,
    #[serde(default)]
    pub output: Output,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Particles {
    pub positions: Vec<[f64; 2]>,
    pub radii: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Domain {
    #[serde(default = "plane_kind")]
    pub kind: String,
    #[serde(rename = "L", default, skip_serializing_if = "Option::is_none")]
    pub length: Option<f64>,
    #[serde(rename = "H", default, skip_serializing_if = "Option::is_none")]
    pub height: Option<f64>,
}

fn plane_kind() -> String {
    "plane".into()
}

impl Default for Domain {
    fn default() -> Self {
        Domain {
            kind: plane_kind(),
            length: None,
            height: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Load {
    pub nu: f64,
}

impl Default for Load {
    fn default() -> Self {
        Load { nu: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rates {
    #[serde(default = "one")]
    pub beta: f64,
    #[serde(default = "one")]
    pub zeta: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for Rates {
    fn default() -> Self {
        Rates {
            beta: 1.0,
            zeta: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Noise {
    pub sigma: f64,
}

impl Default for Noise {
    fn default() -> Self {
        Noise { sigma: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Solver {
    #[serde(default = "uzawa_kind")]
    pub kind: String,
    #[serde(default)]
    pub eta_policy: EtaPolicy,
}

fn uzawa_kind() -> String {
    "uzawa".into()
}

impl Default for Solver {
    fn default() -> Self {
        Solver {
            kind: uzawa_kind(),
            eta_policy: EtaPolicy::default(),
        }
    }
}

/// `eta_policy = "auto"` or a fixed positive dual step, e.g.
/// `eta_policy = 0.25`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EtaPolicy {
    Fixed(f64),
    Named(String),
}

impl Default for EtaPolicy {
    fn default() -> Self {
        EtaPolicy::Named("auto".into())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Output {
    #[serde(default = "out_dir")]
    pub dir: String,
    #[serde(default = "one_step")]
    pub stride: usize,
}

fn out_dir() -> String {
    "out".into()
}

fn one_step() -> usize {
    1
}

impl Default for Output {
    fn default() -> Self {
        Output {
            dir: out_dir(),
            stride: 1,
        }
    }
}

/// A validated experiment: the lowered core config plus where to write.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub sim: SimConfig,
    pub out_dir: PathBuf,
}

pub fn parse_file(path: &Path) -> Result<ConfigFile, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_at(path, e))?;
    parse_str(&text)
}

/// toml's own errors carry line/column info; they pass through verbatim.
pub fn parse_str(text: &str) -> Result<ConfigFile, CliError> {
    toml::from_str(text).map_err(|e| CliError::Validation(e.to_string()))
}

pub fn to_toml_string(cfg: &ConfigFile) -> String {
    toml::to_string(cfg).expect("schema has no non-serializable states")
}

fn bad(key: &str, msg: String) -> CliError {
    CliError::Validation(format!("{key}: {msg}"))
}

impl ConfigFile {
    /// Validate everything and lower to a core config. Error messages name
    /// the offending key.
    pub fn build(&self) -> Result<Experiment, CliError> {
        let particles = &self.particles;
        if particles.positions.is_empty() {
            return Err(bad(
                "particles.positions",
                "at least one particle required".into(),
            ));
        }
        for (k, p) in particles.positions.iter().enumerate() {
            if !(p[0].is_finite() && p[1].is_finite()) {
                return Err(bad(
                    "particles.positions",
                    format!("entry {k} is not finite: [{}, {}]", p[0], p[1]),
                ));
            }
        }
        if particles.radii.len() != particles.positions.len() {
            return Err(bad(
                "particles.radii",
                format!(
                    "{} radii for {} positions",
                    particles.radii.len(),
                    particles.positions.len()
                ),
            ));
        }
        for (k, r) in particles.radii.iter().enumerate() {
            if !(*r > 0.0 && r.is_finite()) {
                return Err(bad(
                    "particles.radii",
                    format!("entry {k} must be positive and finite, got {r}"),
                ));
            }
        }

        let domain = match self.domain.kind.as_str() {
            "plane" => {
                if self.domain.length.is_some() || self.domain.height.is_some() {
                    return Err(bad("domain.L", "periods apply to torus domains only".into()));
                }
                DomainSpec::Plane
            }
            "torus" => {
                let length = self
                    .domain
                    .length
                    .ok_or_else(|| bad("domain.L", "required for torus domains".into()))?;
                let height = self
                    .domain
                    .height
                    .ok_or_else(|| bad("domain.H", "required for torus domains".into()))?;
                DomainSpec::torus(length, height).map_err(|e| bad("domain", e.to_string()))?
            }
            other => {
                return Err(bad(
                    "domain.kind",
                    format!("expected \"plane\" or \"torus\", got \"{other}\""),
                ))
            }
        };

        check_positive("epsilon", self.epsilon)?;
        check_positive("delta_a", self.delta_a)?;
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return Err(bad(
                "T",
                format!("must be nonnegative and finite, got {}", self.horizon),
            ));
        }
        check_nonnegative("load.nu", self.load.nu)?;
        check_nonnegative("rates.beta", self.rates.beta)?;
        check_positive("rates.zeta", self.rates.zeta)?;
        check_nonnegative("noise.sigma", self.noise.sigma)?;

        let solver = match self.solver.kind.as_str() {
            "uzawa" => {
                let step = match &self.solver.eta_policy {
                    EtaPolicy::Named(s) if s == "auto" => StepPolicy::Auto { safety: 0.9 },
                    EtaPolicy::Named(s) => {
                        return Err(bad(
                            "solver.eta_policy",
                            format!("expected \"auto\" or a positive number, got \"{s}\""),
                        ))
                    }
                    EtaPolicy::Fixed(x) => {
                        if !(*x > 0.0 && x.is_finite()) {
                            return Err(bad(
                                "solver.eta_policy",
                                format!("fixed step must be positive and finite, got {x}"),
                            ));
                        }
                        StepPolicy::Fixed(*x)
                    }
                };
                SolverChoice::Uzawa { step }
            }
            "penalty" => {
                match &self.solver.eta_policy {
                    EtaPolicy::Named(s) if s == "auto" => {}
                    _ => {
                        return Err(bad(
                            "solver.eta_policy",
                            "fixed dual steps apply to the uzawa solver only".into(),
                        ))
                    }
                }
                SolverChoice::Penalty
            }
            other => {
                return Err(bad(
                    "solver.kind",
                    format!("expected \"uzawa\" or \"penalty\", got \"{other}\""),
                ))
            }
        };

        if self.output.stride == 0 {
            return Err(bad("output.stride", "must be at least 1".into()));
        }
        if self.output.dir.is_empty() {
            return Err(bad("output.dir", "must not be empty".into()));
        }

        let n = particles.positions.len();
        let mut sim = SimConfig::new(
            particles
                .positions
                .iter()
                .map(|p| Vec2::new(p[0], p[1]))
                .collect(),
            particles.radii.clone(),
        );
        sim.domain = domain;
        sim.epsilon = self.epsilon;
        sim.age_step = self.delta_a;
        sim.horizon = self.horizon;
        sim.load_nu = self.load.nu;
        let zeta = OffRate::constant(self.rates.zeta).map_err(|e| bad("rates.zeta", e.to_string()))?;
        sim.rates = RateModel::uniform(n, self.rates.beta, zeta)
            .map_err(|e| bad("rates", e.to_string()))?;
        sim.noise_sigma = self.noise.sigma;
        sim.seed = self.seed;
        sim.solver = solver;
        sim.stride = self.output.stride;

        // Backstop: geometric feasibility, domain fit, rate-grid build.
        sim.validate().map_err(CliError::from)?;

        Ok(Experiment {
            sim,
            out_dir: PathBuf::from(&self.output.dir),
        })
    }
}

fn check_positive(key: &str, x: f64) -> Result<(), CliError> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(bad(key, format!("must be positive and finite, got {x}")))
    }
}

fn check_nonnegative(key: &str, x: f64) -> Result<(), CliError> {
    if x >= 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(bad(key, format!("must be nonnegative and finite, got {x}")))
    }
}
