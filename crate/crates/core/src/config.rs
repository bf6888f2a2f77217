//! Experiment configuration (JSON) and its validation.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::singular_values_desc;
use crate::lti::system::gaussian_matrix;
use crate::lti::{CostSpec, DisturbanceKind, DisturbanceSpec, LtiSystem, SystemMatrices};
use crate::pipeline::{ceil_t23, Horizon, Mode, Schedule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub n: usize,
    pub m: usize,
    /// Output dimension; defaults to `n`.
    #[serde(default)]
    pub p: Option<usize>,
    /// Decay rate: target operator norm of a random `A`, or the certified
    /// bound for explicit matrices.
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub matrices: Option<SystemMatrices>,
    /// Use `C = I` instead of a random output map when no matrices are given.
    #[serde(default)]
    pub identity_output: bool,
}

fn default_rho() -> f64 {
    0.7
}

/// Stand-in regret `c T^exponent (1 + noise * U[-1, 1])` for exercising the
/// sweep machinery without running the learner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticRegret {
    #[serde(default = "one")]
    pub c: f64,
    #[serde(default = "two_thirds")]
    pub exponent: f64,
    #[serde(default = "five_percent")]
    pub noise: f64,
}

fn one() -> f64 {
    1.0
}
fn two_thirds() -> f64 {
    2.0 / 3.0
}
fn five_percent() -> f64 {
    0.05
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub system: SystemConfig,
    pub disturbance: DisturbanceSpec,
    /// Measurement noise on outputs; output mode only.
    #[serde(default)]
    pub measurement: Option<DisturbanceSpec>,
    pub cost: CostSpec,
    pub horizon: usize,
    #[serde(default, rename = "L")]
    pub l: Option<usize>,
    #[serde(default, rename = "N")]
    pub n_rollout: Option<usize>,
    #[serde(default, rename = "I0")]
    pub i0: Option<usize>,
    #[serde(default = "one", rename = "D")]
    pub d: f64,
    /// Gradient bound; derived from the cost weights and the reachable box
    /// when absent.
    #[serde(default, rename = "G")]
    pub g: Option<f64>,
    #[serde(default)]
    pub window: Option<usize>,
    /// Count exploration steps toward regret.
    #[serde(default = "yes")]
    pub include_stage1_cost: bool,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Horizons for `sweep`.
    #[serde(default)]
    pub horizons: Vec<usize>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub synthetic: Option<SyntheticRegret>,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

/// Validation failure, naming the violated standing assumption when there
/// is one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub assumption: Option<u8>,
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.assumption {
            Some(k) => write!(f, "Assumption {k} violated: {}", self.message),
            None => write!(f, "invalid config: {}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

fn violated(assumption: Option<u8>, message: impl Into<String>) -> ConfigError {
    ConfigError { assumption, message: message.into() }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn output(&self) -> bool {
        self.mode == Mode::Output
    }

    pub fn signal_dim(&self) -> usize {
        if self.output() {
            self.system.p.unwrap_or(self.system.n)
        } else {
            self.system.n
        }
    }

    pub fn accounting(&self) -> Horizon {
        if self.include_stage1_cost {
            Horizon::Full
        } else {
            Horizon::CommitOnly
        }
    }

    /// Schedule for a given horizon with this config's overrides.
    pub fn schedule(&self, horizon: usize) -> Schedule {
        Schedule::resolve(horizon, self.system.n, self.system.m, self.l, self.n_rollout, self.i0)
    }

    /// Probe excitation order `L + 2n`.
    pub fn pe_order(&self, horizon: usize) -> usize {
        self.schedule(horizon).l + 2 * self.system.n
    }

    /// Hex SHA-256 of the canonical JSON serialization.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Check every assumption the chosen mode relies on, for `horizon`.
    pub fn validate_for(&self, horizon: usize) -> std::result::Result<(), ConfigError> {
        let sys = &self.system;
        if sys.n == 0 || sys.m == 0 {
            return Err(violated(None, "system dimensions n and m must be positive"));
        }
        if !(sys.rho > 0.0 && sys.rho < 1.0) {
            return Err(violated(Some(1), format!("decay rate rho must lie in (0, 1), got {}", sys.rho)));
        }
        if let Err(e) = self.build_system() {
            let assumption = match e {
                Error::Unstable { .. } | Error::DecayRate { .. } => Some(1),
                _ => None,
            };
            return Err(violated(assumption, e.to_string()));
        }
        if self.disturbance.epsilon < 0.0 {
            return Err(violated(Some(2), "disturbance bound epsilon must be nonnegative"));
        }
        if let Some(e) = &self.measurement {
            if e.epsilon < 0.0 {
                return Err(violated(Some(2), "measurement noise bound must be nonnegative"));
            }
            if !self.output() && e.kind != DisturbanceKind::Zero && e.epsilon > 0.0 {
                return Err(violated(None, "measurement noise is only meaningful in output mode"));
            }
        }
        if let Some(g) = self.g {
            if g <= 0.0 {
                return Err(violated(Some(3), format!("gradient bound G must be positive, got {g}")));
            }
        }
        if self.cost.q < 0.0 || self.cost.r < 0.0 || self.cost.target_amplitude < 0.0 {
            return Err(violated(Some(3), "cost weights must be nonnegative"));
        }
        if self.d <= 0.0 {
            return Err(violated(Some(4), format!("norm bound D must be positive, got {}", self.d)));
        }
        if horizon < 2 {
            return Err(violated(None, format!("horizon must be at least 2, got {horizon}")));
        }
        if self.seeds.is_empty() {
            return Err(violated(None, "at least one seed is required"));
        }
        if self.window == Some(0) {
            return Err(violated(None, "window must be positive when set"));
        }
        let sch = self.schedule(horizon);
        if sch.l < 2 * sys.n {
            return Err(violated(Some(5), format!("L = {} is below 2n = {} (need L = log T >= 2n)", sch.l, 2 * sys.n)));
        }
        let lower = (sys.m + sys.n + 1) * sch.l;
        if sch.n_rollout < lower {
            return Err(violated(Some(6), format!("N = {} is below (m+n+1)L = {lower}", sch.n_rollout)));
        }
        let pe_width = (sys.m + 1) * (sch.l + 2 * sys.n) - 1;
        if sch.n_rollout < pe_width {
            return Err(violated(
                None,
                format!("N = {} is too short for a probe exciting of order L+2n (needs {pe_width})", sch.n_rollout),
            ));
        }
        if self.mode != Mode::Clean {
            // N < T^(2/3), i.e. N^3 < T^2
            if (sch.n_rollout as u128).pow(3) >= (horizon as u128).pow(2) {
                return Err(violated(
                    Some(6),
                    format!("N = {} is not below T^(2/3) = {:.3} (ceil {})", sch.n_rollout, (horizon as f64).powf(2.0 / 3.0), ceil_t23(horizon)),
                ));
            }
            if sch.i0 == 0 {
                return Err(violated(None, "I0 must be positive"));
            }
            if sch.t_s >= horizon {
                return Err(violated(None, format!("exploration T_s = N*I0 = {} leaves no steps of T = {horizon}", sch.t_s)));
            }
        }
        if self.output() {
            let p = sys.p.unwrap_or(sys.n);
            if p < sys.n {
                return Err(violated(None, format!("output map must be injective: p = {p} < n = {}", sys.n)));
            }
            if let Ok(s) = self.build_system() {
                let sv = singular_values_desc(s.c());
                if sv.len() < sys.n || sv[sys.n - 1] <= 1e-8 * sv[0] {
                    return Err(violated(None, "output map C must have full column rank"));
                }
            }
        } else if sys.p.is_some_and(|p| p != sys.n) {
            return Err(violated(None, "p differs from n outside output mode"));
        }
        Ok(())
    }

    pub fn validate(&self) -> std::result::Result<(), ConfigError> {
        self.validate_for(self.horizon)?;
        for &t in &self.horizons {
            self.validate_for(t)?;
        }
        Ok(())
    }

    /// The true system: explicit matrices, or a random draw from `system.seed`.
    pub fn build_system(&self) -> Result<LtiSystem<f64>> {
        let sys = &self.system;
        if let Some(mats) = &sys.matrices {
            let built: LtiSystem<f64> = mats.build(Some(sys.rho))?;
            if built.n() != sys.n || built.m() != sys.m {
                return Err(Error::Contract(format!(
                    "system matrices are {}x{} but n = {}, m = {}",
                    built.n(),
                    built.m(),
                    sys.n,
                    sys.m
                )));
            }
            return Ok(built);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(sys.seed);
        let base = LtiSystem::random(sys.n, sys.m, sys.rho, &mut rng)?;
        if !self.output() || sys.identity_output {
            return Ok(base);
        }
        let p = sys.p.unwrap_or(sys.n);
        for _ in 0..100 {
            let c: DMatrix<f64> = gaussian_matrix(p, sys.n, &mut rng);
            let sv = singular_values_desc(&c);
            if sv.len() >= sys.n && sv[sys.n - 1] > 0.2 * sv[0] {
                return base.with_output(c / sv[0]);
            }
        }
        Err(Error::Contract("could not draw a well-conditioned output map".into()))
    }
}
