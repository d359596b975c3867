//! Shooting in the `k + 1` free parameters `(ν_{1,0}, …, ν_{k,0}, φ_{1,0})`:
//! the rescaling onto the unit ball, the shrinking-set norm, exit times and a
//! max-exit-time subdivision search.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::p_bar;
use crate::error::{Error, Result};
use crate::grid::{make_grid, Grid};
use crate::modulation::{track, ModulationOptions, TrackOptions, TrackOutcome, TrackRecord};
use crate::pde::{build_initial_data, initial_params, ProblemConfig};
use crate::reduced::ReducedConfig;

/// Slack on `N ≤ 1` so that ball-boundary points are not flagged by rounding
/// at `s₀`.
const EXIT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShootingConfig {
    /// `δ` of the parameter estimates; only `η` depends on it.
    pub delta: f64,
    /// Number of search levels.
    pub depth: usize,
    /// Samples per axis on each level; odd, so that the parent midpoint is
    /// re-sampled.
    pub per_axis: usize,
    pub cadence: f64,
}

impl Default for ShootingConfig {
    fn default() -> Self {
        ShootingConfig {
            delta: 0.5,
            depth: 4,
            per_axis: 5,
            cadence: 0.05,
        }
    }
}

impl ShootingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "delta = {} must be > 0",
                self.delta
            )));
        }
        if self.per_axis == 0 || self.per_axis % 2 == 0 {
            return Err(Error::InvalidParameter(format!(
                "per_axis = {} must be odd",
                self.per_axis
            )));
        }
        if !(self.cadence > 0.0) {
            return Err(Error::InvalidParameter("cadence must be > 0".into()));
        }
        if self.depth == 0 {
            return Err(Error::InvalidParameter("depth must be >= 1".into()));
        }
        Ok(())
    }
}

/// `η = ¼ min{1, δ, p̄/2 - ½, (α-1)/2}`, the last term only with a
/// log-damped `f`.
pub fn eta(cfg: &ProblemConfig, delta: f64) -> f64 {
    let mut m = 1f64.min(delta).min(p_bar(cfg.p) / 2.0 - 0.5);
    if let Some(a) = cfg.perturbation.decay_alpha() {
        m = m.min((a - 1.0) / 2.0);
    }
    m / 4.0
}

/// `N = max{s^{1/2+η}‖q‖, s^{1/2+|γ_i|}|ν_i|, s^η|φ_i|}`.
pub fn shrink_norm(
    red: &ReducedConfig,
    eta: f64,
    s: f64,
    norm_q: f64,
    nu: &[f64],
    phi: &[f64],
) -> f64 {
    shrink_components(red, eta, s, norm_q, nu, phi)
        .into_iter()
        .fold(0.0, f64::max)
}

/// The components of `N` in the order `q, ν_1..ν_k, φ_1..φ_k`.
fn shrink_components(
    red: &ReducedConfig,
    eta: f64,
    s: f64,
    norm_q: f64,
    nu: &[f64],
    phi: &[f64],
) -> Vec<f64> {
    let mut v = vec![s.powf(0.5 + eta) * norm_q];
    v.extend(
        nu.iter()
            .zip(red.gamma())
            .map(|(n, g)| s.powf(0.5 + g.abs()) * n.abs()),
    );
    v.extend(phi.iter().map(|f| s.powf(eta) * f.abs()));
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "index")]
pub enum ExitAxis {
    Q,
    /// 1-based soliton index.
    Nu(usize),
    Phi(usize),
}

impl ExitAxis {
    fn from_component(k: usize, c: usize) -> Self {
        match c {
            0 => ExitAxis::Q,
            c if c <= k => ExitAxis::Nu(c),
            c => ExitAxis::Phi(c - k),
        }
    }
}

impl std::fmt::Display for ExitAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ExitAxis::Q => write!(f, "q"),
            ExitAxis::Nu(i) => write!(f, "nu_{i}"),
            ExitAxis::Phi(i) => write!(f, "phi_{i}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitStatus {
    Exited,
    Survived,
    /// The modulation failed before any exit.
    DecompositionLost,
    Unstable,
    /// Some `ν_{i,0} ≤ -1 + |d_i|`: no generalized soliton exists there.
    Inadmissible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exit {
    pub status: ExitStatus,
    /// Exit time (or the horizon, or the last good time).
    pub s: f64,
    pub axis: Option<ExitAxis>,
    /// Sign of the binding coordinate.
    pub direction: f64,
    /// Whether the binding rescaled coordinate was increasing through 1.
    pub outgoing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShootingPoint {
    pub ball: Vec<f64>,
    pub nu0: Vec<f64>,
    pub phi10: f64,
    pub exit: Exit,
}

/// Shared state for a shooting study.
#[derive(Debug, Clone)]
pub struct Shooter {
    pub problem: ProblemConfig,
    pub config: ShootingConfig,
    pub eta: f64,
    /// `S_max`: a point still in the shrinking set here survives.
    pub horizon: f64,
    grid: Grid,
}

impl Shooter {
    pub fn new(
        problem: ProblemConfig,
        config: ShootingConfig,
        n: usize,
        horizon: f64,
    ) -> Result<Self> {
        problem.validate()?;
        config.validate()?;
        let eta = eta(&problem, config.delta);
        if !(eta > 0.0) {
            return Err(Error::InvalidParameter(format!("eta = {eta} must be > 0")));
        }
        if !(horizon.is_finite() && horizon >= problem.s0) {
            return Err(Error::InvalidParameter(format!(
                "horizon {horizon} before s0 = {}",
                problem.s0
            )));
        }
        let grid = make_grid(n, problem.p)?;
        Ok(Shooter {
            problem,
            config,
            eta,
            horizon,
            grid,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.problem.k + 1
    }

    /// Ball radii `s^{-1/2-|γ_i|}` and `s^{-η}`.
    pub fn radii(&self, s: f64) -> Vec<f64> {
        let mut r: Vec<f64> = self
            .problem
            .reduced()
            .gamma()
            .iter()
            .map(|g| s.powf(-0.5 - g.abs()))
            .collect();
        r.push(s.powf(-self.eta));
        r
    }

    /// `Γ_s`: ball coordinates to `(ν_{i,0}, φ_{1,0})`.
    pub fn gamma_rescale(&self, s: f64, ball: &[f64]) -> Result<(Vec<f64>, f64)> {
        if ball.len() != self.dim() {
            return Err(Error::ShapeMismatch {
                expected: self.dim(),
                got: ball.len(),
            });
        }
        let r = self.radii(s);
        let k = self.problem.k;
        Ok(((0..k).map(|i| ball[i] * r[i]).collect(), ball[k] * r[k]))
    }

    pub fn gamma_inverse(&self, s: f64, nu0: &[f64], phi10: f64) -> Result<Vec<f64>> {
        if nu0.len() != self.problem.k {
            return Err(Error::ShapeMismatch {
                expected: self.problem.k,
                got: nu0.len(),
            });
        }
        let r = self.radii(s);
        let mut b: Vec<f64> = nu0.iter().zip(&r).map(|(v, r)| v / r).collect();
        b.push(phi10 / r[self.problem.k]);
        Ok(b)
    }

    pub fn shrink_norm(&self, rec: &TrackRecord) -> f64 {
        shrink_norm(
            &self.problem.reduced(),
            self.eta,
            rec.dec.s,
            rec.norm_q,
            &rec.dec.nu(),
            &rec.phi,
        )
    }

    /// Runs the point until its trajectory leaves the shrinking set or reaches
    /// the horizon. Returns the exit and, if `keep`, the tracked records.
    pub fn exit_time(&self, ball: &[f64], keep: bool) -> Result<(ShootingPoint, Vec<TrackRecord>)> {
        let s0 = self.problem.s0;
        let (nu0, phi10) = self.gamma_rescale(s0, ball)?;
        let (st0, guess) = match initial_params(&self.problem, s0, &nu0, phi10).and_then(|g| {
            Ok((
                build_initial_data(&self.problem, &self.grid, s0, &nu0, phi10, self.eta)?,
                g,
            ))
        }) {
            Ok(v) => v,
            Err(Error::InvalidParameter(_)) => {
                let exit = Exit {
                    status: ExitStatus::Inadmissible,
                    s: s0,
                    axis: None,
                    direction: 0.0,
                    outgoing: false,
                };
                return Ok((
                    ShootingPoint {
                        ball: ball.to_vec(),
                        nu0,
                        phi10,
                        exit,
                    },
                    Vec::new(),
                ));
            }
            Err(e) => return Err(e),
        };
        let red = self.problem.reduced();
        let k = self.problem.k;
        let opts = TrackOptions {
            cadence: self.config.cadence,
            modulation: ModulationOptions::default(),
            eta: Some(self.eta),
        };
        let mut prev: Option<(f64, Vec<f64>)> = None;
        let mut exit: Option<Exit> = None;
        let mut kept = Vec::new();
        let horizon = self.horizon;
        let tr = track(
            &self.problem,
            &self.grid,
            &st0,
            &guess,
            s0,
            horizon,
            opts,
            |rec| {
                let comps = shrink_components(
                    &red,
                    self.eta,
                    rec.dec.s,
                    rec.norm_q,
                    &rec.dec.nu(),
                    &rec.phi,
                );
                if keep {
                    kept.push(rec.clone());
                }
                let (c, n) = argmax(&comps);
                if n > 1.0 + EXIT_TOL {
                    let (s_exit, outgoing) = match &prev {
                        Some((sp, cp)) => {
                            let np = cp.iter().copied().fold(0.0, f64::max);
                            let t = ((1.0 - np) / (n - np)).clamp(0.0, 1.0);
                            (sp + t * (rec.dec.s - sp), comps[c] > cp[c])
                        }
                        None => (rec.dec.s, true),
                    };
                    let direction = match ExitAxis::from_component(k, c) {
                        ExitAxis::Q => 1.0,
                        ExitAxis::Nu(i) => rec.dec.params[i - 1].nu.signum(),
                        ExitAxis::Phi(i) => rec.phi[i - 1].signum(),
                    };
                    exit = Some(Exit {
                        status: ExitStatus::Exited,
                        s: s_exit,
                        axis: Some(ExitAxis::from_component(k, c)),
                        direction,
                        outgoing,
                    });
                    return false;
                }
                prev = Some((rec.dec.s, comps));
                true
            },
        )?;
        let exit = match exit {
            Some(e) => e,
            None => {
                let (status, s) = match tr.outcome {
                    TrackOutcome::DecompositionLost { last_good_s, .. } => {
                        (ExitStatus::DecompositionLost, last_good_s)
                    }
                    TrackOutcome::Unstable { last_stable_s } => {
                        (ExitStatus::Unstable, last_stable_s)
                    }
                    _ => (ExitStatus::Survived, horizon),
                };
                Exit {
                    status,
                    s,
                    axis: None,
                    direction: 0.0,
                    outgoing: false,
                }
            }
        };
        Ok((
            ShootingPoint {
                ball: ball.to_vec(),
                nu0,
                phi10,
                exit,
            },
            kept,
        ))
    }

    /// Max-exit-time subdivision search over the ball.
    pub fn search(&self) -> Result<SearchReport> {
        let dim = self.dim();
        let m = self.config.per_axis;
        // cells are laid out around a center so that, for odd `per_axis`,
        // the middle child reuses the parent's point bit for bit
        let mut center = vec![0.0; dim];
        let mut width = 2.0;
        let mut levels: Vec<SearchLevel> = Vec::new();
        let mut best: Option<ShootingPoint> = None;
        let degenerate = self.horizon <= self.problem.s0;
        if degenerate {
            // nothing to discriminate: report the midpoint of the ball
            let mid = self.exit_time(&vec![0.0; dim], false)?.0;
            levels.push(SearchLevel {
                level: 0,
                lo: vec![-1.0; dim],
                width,
                best_cell: vec![m / 2; dim],
                best_exit_s: mid.exit.s,
                points: vec![mid.clone()],
            });
            best = Some(mid);
        }
        for level in 0..if degenerate { 0 } else { self.config.depth } {
            let cells: Vec<Vec<usize>> = (0..m.pow(dim as u32))
                .map(|c| unflatten(c, m, dim))
                .collect();
            let sub = width / m as f64;
            let mid = (m as f64 - 1.0) / 2.0;
            let points: Vec<Vec<f64>> = cells
                .iter()
                .map(|idx| {
                    idx.iter()
                        .zip(&center)
                        .map(|(&i, c)| c + (i as f64 - mid) * sub)
                        .collect()
                })
                .collect();
            let results: Vec<Result<ShootingPoint>> = points
                .par_iter()
                .map(|b| self.exit_time(b, false).map(|r| r.0))
                .collect();
            let results: Vec<ShootingPoint> = results.into_iter().collect::<Result<_>>()?;
            // first maximal index in lexicographic order
            let mut bi = 0;
            for (i, r) in results.iter().enumerate() {
                if r.exit.s > results[bi].exit.s {
                    bi = i;
                }
            }
            let winner = results[bi].clone();
            levels.push(SearchLevel {
                level,
                lo: center.iter().map(|c| c - 0.5 * width).collect(),
                width,
                best_cell: cells[bi].clone(),
                best_exit_s: winner.exit.s,
                points: results,
            });
            let done = winner.exit.status == ExitStatus::Survived;
            best = Some(winner);
            if done {
                break;
            }
            center = points[bi].clone();
            width = sub;
        }
        let best = best.expect("depth >= 1");
        let monotone = levels
            .windows(2)
            .all(|w| w[1].best_exit_s >= w[0].best_exit_s);
        Ok(SearchReport {
            problem: self.problem,
            shooting: self.config,
            n: self.grid.n_nodes(),
            horizon: self.horizon,
            eta: self.eta,
            levels,
            best_ball: best.ball.clone(),
            best_nu0: best.nu0.clone(),
            best_phi10: best.phi10,
            best_exit: best.exit,
            monotone,
        })
    }
}

fn argmax(v: &[f64]) -> (usize, f64) {
    let mut bi = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[bi] {
            bi = i;
        }
    }
    (bi, v[bi])
}

/// Lexicographic multi-index of `c` with `m` values per axis, first axis
/// most significant.
fn unflatten(mut c: usize, m: usize, dim: usize) -> Vec<usize> {
    let mut idx = vec![0; dim];
    for d in (0..dim).rev() {
        idx[d] = c % m;
        c /= m;
    }
    idx
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchLevel {
    pub level: usize,
    /// Lower corner and edge length of the searched cell.
    pub lo: Vec<f64>,
    pub width: f64,
    pub best_cell: Vec<usize>,
    pub best_exit_s: f64,
    pub points: Vec<ShootingPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub problem: ProblemConfig,
    pub shooting: ShootingConfig,
    pub n: usize,
    pub horizon: f64,
    pub eta: f64,
    pub levels: Vec<SearchLevel>,
    pub best_ball: Vec<f64>,
    pub best_nu0: Vec<f64>,
    pub best_phi10: f64,
    pub best_exit: Exit,
    /// Best exit time non-decreasing over levels.
    pub monotone: bool,
}
