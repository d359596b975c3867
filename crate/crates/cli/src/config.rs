//! Run configuration: one strict JSON document shared by all subcommands.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use multisoliton::pde::ProblemConfig;
use multisoliton::shooting::ShootingConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    /// Collocation nodes.
    #[serde(default = "default_n")]
    pub n: usize,
    /// Final similarity time for `reduced`, `simulate` and `shoot`.
    pub horizon: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// Worker threads for the shooting scans; 0 lets the pool decide.
    #[serde(default)]
    pub threads: usize,
    #[serde(default)]
    pub reduced: ReducedRun,
    #[serde(default)]
    pub simulate: SimulateRun,
    #[serde(default)]
    pub shooting: ShootingConfig,
    #[serde(default)]
    pub verify: VerifyRun,
}

fn default_n() -> usize {
    64
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReducedRun {
    /// Start time; the problem's `s0` when absent.
    pub s_start: Option<f64>,
    /// Output rows, log-spaced in `s`.
    pub samples: usize,
    /// Initial displacement from `ζ̄ + ζ₀` in eigen-coordinates `φ`.
    pub phi0: Vec<f64>,
}

impl Default for ReducedRun {
    fn default() -> Self {
        ReducedRun {
            s_start: None,
            samples: 200,
            phi0: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateRun {
    /// Shooting-ball coordinates; takes precedence over `nu0`/`phi10`.
    pub ball: Option<Vec<f64>>,
    pub nu0: Option<Vec<f64>>,
    pub phi10: f64,
    pub cadence: f64,
    /// `η` in `E₂`.
    pub lyapunov_eta: f64,
    /// `δ` of the parameter estimates.
    pub delta: f64,
    pub monitor: bool,
    /// Monitors stop once the top-fifth modal tail of `w₁` exceeds this.
    pub tail_tol: f64,
}

impl Default for SimulateRun {
    fn default() -> Self {
        SimulateRun {
            ball: None,
            nu0: None,
            phi10: 0.0,
            cadence: 0.05,
            lyapunov_eta: 0.1,
            delta: 0.5,
            monitor: true,
            tail_tol: 1e-5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fault {
    /// Perturb one `σ_i` of the interaction matrix.
    Sigma,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyRun {
    pub fault: Option<Fault>,
}

/// Command-line overrides.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub n: Option<usize>,
    pub s0: Option<f64>,
    pub horizon: Option<f64>,
    pub threads: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// A small unperturbed two-soliton setup.
    pub fn demo() -> Self {
        RunConfig {
            problem: ProblemConfig::unperturbed(3.0, 2, 0.0, 10.0),
            n: default_n(),
            horizon: 11.0,
            seed: 0,
            out: default_out(),
            threads: 0,
            reduced: ReducedRun::default(),
            simulate: SimulateRun::default(),
            shooting: ShootingConfig::default(),
            verify: VerifyRun::default(),
        }
    }

    /// Applies flags, then `MULTISOLITON_THREADS` on top of `--threads`.
    pub fn apply(&mut self, o: &Overrides, env_threads: Option<&str>) -> Result<()> {
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
        if let Some(n) = o.n {
            self.n = n;
        }
        if let Some(s0) = o.s0 {
            self.problem.s0 = s0;
        }
        if let Some(h) = o.horizon {
            self.horizon = h;
        }
        if let Some(t) = o.threads {
            self.threads = t;
        }
        if let Some(v) = env_threads {
            self.threads = v
                .trim()
                .parse()
                .with_context(|| format!("MULTISOLITON_THREADS = {v:?} is not a thread count"))?;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        self.problem.validate()?;
        self.shooting.validate()?;
        if self.n < 8 {
            bail!("n = {} must be at least 8", self.n);
        }
        if !(self.horizon.is_finite() && self.horizon >= self.problem.s0) {
            bail!(
                "horizon = {} must be finite and >= s0 = {}",
                self.horizon,
                self.problem.s0
            );
        }
        if !self.reduced.phi0.is_empty() && self.reduced.phi0.len() != self.problem.k {
            bail!(
                "reduced.phi0 has {} entries, expected k = {}",
                self.reduced.phi0.len(),
                self.problem.k
            );
        }
        if let Some(b) = &self.simulate.ball {
            if b.len() != self.problem.k + 1 {
                bail!(
                    "simulate.ball has {} entries, expected k + 1 = {}",
                    b.len(),
                    self.problem.k + 1
                );
            }
            if b.iter().any(|x| !(x.abs() <= 1.0)) {
                bail!("simulate.ball must lie in [-1, 1]");
            }
        }
        if let Some(nu) = &self.simulate.nu0 {
            if nu.len() != self.problem.k {
                bail!(
                    "simulate.nu0 has {} entries, expected k = {}",
                    nu.len(),
                    self.problem.k
                );
            }
        }
        if !(self.simulate.cadence > 0.0) {
            bail!("simulate.cadence must be > 0");
        }
        if !(self.simulate.tail_tol > 0.0) {
            bail!("simulate.tail_tol must be > 0");
        }
        if !(self.simulate.lyapunov_eta > 0.0 && self.simulate.lyapunov_eta <= 1.0) {
            bail!("simulate.lyapunov_eta must lie in (0, 1]");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_unknown_keys() {
        let mut v = serde_json::to_value(RunConfig::demo()).unwrap();
        v["problem"]["bogus"] = 1.into();
        assert!(RunConfig::from_json(&v.to_string()).is_err());
        let mut v = serde_json::to_value(RunConfig::demo()).unwrap();
        v["extra"] = 1.into();
        assert!(RunConfig::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn round_trips() {
        let c = RunConfig::demo();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), c);
    }

    #[test]
    fn env_overrides_flag() {
        let mut c = RunConfig::demo();
        c.apply(
            &Overrides {
                threads: Some(3),
                ..Default::default()
            },
            Some("5"),
        )
        .unwrap();
        assert_eq!(c.threads, 5);
        c.apply(
            &Overrides {
                threads: Some(3),
                ..Default::default()
            },
            None,
        )
        .unwrap();
        assert_eq!(c.threads, 3);
        assert!(c.apply(&Overrides::default(), Some("many")).is_err());
    }

    #[test]
    fn minimal_document_fills_defaults() {
        let text = r#"{"problem": {"p": 3, "k": 2, "zeta0": 0, "s0": 10, "c1": 1}, "horizon": 12}"#;
        let c = RunConfig::from_json(text).unwrap();
        assert_eq!(c.n, 64);
        assert_eq!(c.simulate.cadence, 0.05);
        assert_eq!(c.problem.c_cfl, 20.0);
    }
}
