//! Decomposition of a state into `k` generalized solitons plus a remainder
//! orthogonal to their null and expanding directions.

use crate::diagnostics::{gauges, Gauges};
use crate::error::{Error, Result};
use crate::grid::{Grid, State};
use crate::pde::{simulate, soliton_sum, ProblemConfig, SimOptions};
use crate::reduced::{eigen_system, xi_coords, EigenSystem, ReducedState};
use crate::solitons::{project, projector_basis, ProjectorBasis, SolitonParam};

#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub s: f64,
    pub params: Vec<SolitonParam>,
    pub q: State,
    /// `Π_l^{d_i*}(q)` ordered `(i, l)` lexicographically.
    pub residuals: Vec<f64>,
    pub iterations: usize,
}

impl Decomposition {
    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    /// `ζ_i = -argtanh d_i`.
    pub fn zeta(&self) -> Vec<f64> {
        self.params.iter().map(|sp| sp.zeta()).collect()
    }

    pub fn zeta_star(&self) -> Vec<f64> {
        self.params.iter().map(|sp| sp.zeta_star()).collect()
    }

    pub fn nu(&self) -> Vec<f64> {
        self.params.iter().map(|sp| sp.nu).collect()
    }

    pub fn d(&self) -> Vec<f64> {
        self.params.iter().map(|sp| sp.d).collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ModulationOptions {
    pub max_iter: usize,
    pub tol: f64,
    /// Jacobian step is `fd_step·(1 - |d_i|)`.
    pub fd_step: f64,
    /// Minimum gap `ζ*_{i+1} - ζ*_i` of the guess; `None` skips the check.
    pub min_gap: Option<f64>,
    /// `A` in `-1 + 1/A ≤ ν/(1-|d|) ≤ A`.
    pub a_bound: f64,
    /// Largest acceptable `‖q̂‖_𝓗` for the guess.
    pub max_q: f64,
}

impl Default for ModulationOptions {
    fn default() -> Self {
        ModulationOptions {
            max_iter: 50,
            tol: 1e-10,
            fd_step: 1e-6,
            min_gap: None,
            a_bound: 10.0,
            max_q: 1.0,
        }
    }
}

impl ModulationOptions {
    /// Gap threshold `((p-1)/8) log s₀`.
    pub fn with_default_gap(mut self, p: f64, s0: f64) -> Self {
        self.min_gap = Some((p - 1.0) / 8.0 * s0.ln());
        self
    }
}

fn in_domain(params: &[SolitonParam]) -> bool {
    params
        .iter()
        .all(|sp| sp.validate().is_ok() && sp.d_star().abs() < 1.0)
}

struct Eval {
    q: State,
    res: Vec<f64>,
}

fn evaluate(p: f64, g: &Grid, st: &State, params: &[SolitonParam]) -> Result<Eval> {
    let sum = soliton_sum(p, g, params)?;
    let q = st - &sum;
    let mut res = Vec::with_capacity(2 * params.len());
    for sp in params {
        let basis: ProjectorBasis = projector_basis(p, sp.d_star(), g)?;
        res.push(project(&basis, 0, &q));
        res.push(project(&basis, 1, &q));
    }
    Ok(Eval { q, res })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn check_guess(
    g: &Grid,
    q_hat: &State,
    guess: &[SolitonParam],
    opts: &ModulationOptions,
) -> Result<()> {
    for (i, sp) in guess.iter().enumerate() {
        let r = sp.nu / (1.0 - sp.d.abs());
        if r < -1.0 + 1.0 / opts.a_bound || r > opts.a_bound {
            return Err(Error::IllSeparated(format!(
                "nu_{}/(1-|d_{}|) = {r:.3e} outside the basin",
                i + 1,
                i + 1
            )));
        }
    }
    if let Some(e) = opts.min_gap {
        for (i, w) in guess.windows(2).enumerate() {
            let gap = w[1].zeta_star() - w[0].zeta_star();
            if gap < e {
                return Err(Error::IllSeparated(format!(
                    "gap {} between solitons {} and {} below {e:.3}",
                    gap,
                    i + 1,
                    i + 2
                )));
            }
        }
    }
    let nq = g.norm_h(q_hat);
    if !(nq <= opts.max_q) {
        return Err(Error::IllSeparated(format!(
            "initial remainder norm {nq:.3e} exceeds {}",
            opts.max_q
        )));
    }
    Ok(())
}

/// Damped Newton solve of `Π_l^{d_i*}(q) = 0` in the unknowns `(d_i, ν_i)`.
pub fn decompose(
    p: f64,
    g: &Grid,
    s: f64,
    st: &State,
    guess: &[SolitonParam],
    opts: &ModulationOptions,
) -> Result<Decomposition> {
    if guess.is_empty() {
        return Err(Error::InvalidParameter("empty soliton guess".into()));
    }
    if !in_domain(guess) {
        return Err(Error::IllSeparated(
            "guess outside the parameter domain".into(),
        ));
    }
    let k = guess.len();
    let mut params = guess.to_vec();
    let mut cur = evaluate(p, g, st, &params)?;
    check_guess(g, &cur.q, guess, opts)?;
    let mut fnorm = norm(&cur.res);
    let mut it = 0;
    while cur.res.iter().any(|r| r.abs() >= opts.tol) {
        if it >= opts.max_iter {
            return Err(Error::NoConvergence {
                iterations: it,
                residual: fnorm,
            });
        }
        it += 1;
        let m = 2 * k;
        let mut jac = nalgebra::DMatrix::<f64>::zeros(m, m);
        for i in 0..k {
            for c in 0..2 {
                let h = opts.fd_step * (1.0 - params[i].d.abs());
                let mut plus = params.clone();
                let mut minus = params.clone();
                if c == 0 {
                    plus[i].d += h;
                    minus[i].d -= h;
                } else {
                    plus[i].nu += h;
                    minus[i].nu -= h;
                }
                let fp = evaluate(p, g, st, &plus)?.res;
                let fm = evaluate(p, g, st, &minus)?.res;
                for r in 0..m {
                    jac[(r, 2 * i + c)] = (fp[r] - fm[r]) / (2.0 * h);
                }
            }
        }
        let rhs = nalgebra::DVector::from_iterator(m, cur.res.iter().map(|r| -r));
        let delta = jac
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Singular("modulation Jacobian".into()))?;
        let mut lambda = 1.0;
        loop {
            let mut trial = params.clone();
            for i in 0..k {
                trial[i].d += lambda * delta[2 * i];
                trial[i].nu += lambda * delta[2 * i + 1];
            }
            if in_domain(&trial) {
                let ev = evaluate(p, g, st, &trial)?;
                let tn = norm(&ev.res);
                if tn <= (1.0 - 1e-4 * lambda) * fnorm || tn < opts.tol {
                    params = trial;
                    cur = ev;
                    fnorm = tn;
                    break;
                }
            }
            lambda *= 0.5;
            if lambda < 1.0 / 1024.0 {
                return Err(Error::NoConvergence {
                    iterations: it,
                    residual: fnorm,
                });
            }
        }
    }
    Ok(Decomposition {
        s,
        params,
        q: cur.q,
        residuals: cur.res,
        iterations: it,
    })
}

/// One output of [`track`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrackRecord {
    pub dec: Decomposition,
    pub norm_q: f64,
    pub xi: Vec<f64>,
    pub phi: Vec<f64>,
    pub gauges: Gauges,
    /// The shrinking-set norm, when an `η` was supplied.
    pub n_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrackOutcome {
    Completed,
    /// The observer asked to stop.
    Stopped,
    DecompositionLost {
        last_good_s: f64,
        reason: String,
    },
    Unstable {
        last_stable_s: f64,
    },
}

#[derive(Debug, Clone)]
pub struct Track {
    pub records: Vec<TrackRecord>,
    pub outcome: TrackOutcome,
}

#[derive(Debug, Clone, Copy)]
pub struct TrackOptions {
    pub cadence: f64,
    pub modulation: ModulationOptions,
    /// `η` of the shrinking set; enables `N(s)`.
    pub eta: Option<f64>,
}

impl Default for TrackOptions {
    fn default() -> Self {
        TrackOptions {
            cadence: 0.05,
            modulation: ModulationOptions::default(),
            eta: None,
        }
    }
}

pub(crate) fn make_record(
    cfg: &ProblemConfig,
    g: &Grid,
    eig: &EigenSystem,
    dec: Decomposition,
    eta: Option<f64>,
) -> Result<TrackRecord> {
    let red = cfg.reduced();
    let st = ReducedState {
        s: dec.s,
        zeta: dec.zeta(),
    };
    let xi = xi_coords(&red, &st)?;
    let phi = eig.to_phi(&xi);
    let norm_q = g.norm_h(&dec.q);
    let gauges = gauges(cfg.p, &dec, norm_q);
    let n_value =
        eta.map(|e| crate::shooting::shrink_norm(&red, e, dec.s, norm_q, &dec.nu(), &phi));
    Ok(TrackRecord {
        dec,
        norm_q,
        xi,
        phi,
        gauges,
        n_value,
    })
}

/// Simulates from `st0` and re-decomposes at every output, warm-starting from
/// the previous parameters. `observer` sees each record and may stop the run.
pub fn track(
    cfg: &ProblemConfig,
    g: &Grid,
    st0: &State,
    guess0: &[SolitonParam],
    s0: f64,
    s_end: f64,
    opts: TrackOptions,
    mut observer: impl FnMut(&TrackRecord) -> bool,
) -> Result<Track> {
    let eig = eigen_system(&cfg.reduced())?;
    let mut records: Vec<TrackRecord> = Vec::new();
    let mut guess = guess0.to_vec();
    let mut lost: Option<TrackOutcome> = None;
    let mut stopped = false;
    let sim_opts = SimOptions {
        output_every: opts.cadence,
        keep: false,
        ..SimOptions::default()
    };
    let res = simulate(cfg, g, st0, s0, s_end, sim_opts, |rec| {
        // basin checks apply to the cold start; later solves warm-start from
        // the previous parameters and only need to stay in the domain
        let mo = if records.is_empty() {
            opts.modulation
        } else {
            ModulationOptions {
                min_gap: None,
                a_bound: f64::INFINITY,
                ..opts.modulation
            }
        };
        match decompose(cfg.p, g, rec.s, &rec.state, &guess, &mo)
            .and_then(|d| make_record(cfg, g, &eig, d, opts.eta))
        {
            Ok(r) => {
                guess = r.dec.params.clone();
                let go = observer(&r);
                records.push(r);
                if !go {
                    stopped = true;
                }
                go
            }
            Err(e) => {
                let last_good_s = records.last().map(|r| r.dec.s).unwrap_or(rec.s);
                lost = Some(TrackOutcome::DecompositionLost {
                    last_good_s,
                    reason: e.to_string(),
                });
                false
            }
        }
    });
    let outcome = match res {
        Err(Error::Unstable { last_stable_s }) => TrackOutcome::Unstable { last_stable_s },
        Err(e) => return Err(e),
        Ok(_) => match lost {
            Some(l) => l,
            None if stopped => TrackOutcome::Stopped,
            None => TrackOutcome::Completed,
        },
    };
    Ok(Track { records, outcome })
}

/// Column names of the modulated-trajectory CSV.
pub fn track_csv_header(k: usize) -> Vec<String> {
    let mut h = vec!["s".to_string(), "normH_q".to_string()];
    for i in 1..=k {
        for name in ["d", "nu", "zeta", "xi", "phi"] {
            h.push(format!("{name}_{i}"));
        }
    }
    h.extend(["J", "Jbar", "N"].map(String::from));
    h
}

impl TrackRecord {
    pub fn csv_row(&self) -> Vec<f64> {
        let mut row = vec![self.dec.s, self.norm_q];
        let zeta = self.dec.zeta();
        for i in 0..self.dec.params.len() {
            row.extend([
                self.dec.params[i].d,
                self.dec.params[i].nu,
                zeta[i],
                self.xi[i],
                self.phi[i],
            ]);
        }
        row.extend([
            self.gauges.j,
            self.gauges.jbar,
            self.n_value.unwrap_or(f64::NAN),
        ]);
        row
    }
}
