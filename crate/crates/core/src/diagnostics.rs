//! Energy functionals, interaction gauges and monitors for the parameter
//! estimates along tracked trajectories.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::grid::{Field, Grid, State};
use crate::modulation::{Decomposition, TrackRecord};
use crate::pde::{soliton_sum, spow, Potential, ProblemConfig};
use crate::reduced::eigen_system;

/// `p̄`: `p` below 2, `1.99` at 2, `2` above.
pub fn p_bar(p: f64) -> f64 {
    if p < 2.0 {
        p
    } else if p == 2.0 {
        1.99
    } else {
        2.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Gauges {
    pub j: f64,
    pub jbar: f64,
    pub jstar: f64,
    pub jhat_star: f64,
    pub norm_q: f64,
    /// `|ν_i|/(1-d_i²)`.
    pub nu_ratio: Vec<f64>,
}

fn gap_sum(zeta: &[f64], rate: f64) -> f64 {
    zeta.windows(2).map(|w| (-rate * (w[1] - w[0])).exp()).sum()
}

pub fn gauges(p: f64, dec: &Decomposition, norm_q: f64) -> Gauges {
    let r = 2.0 / (p - 1.0);
    let zeta = dec.zeta();
    let zs = dec.zeta_star();
    let nu_ratio: Vec<f64> = dec
        .params
        .iter()
        .map(|sp| sp.nu.abs() / (1.0 - sp.d * sp.d))
        .collect();
    Gauges {
        j: gap_sum(&zeta, r),
        jbar: nu_ratio.iter().sum(),
        jstar: gap_sum(&zs, r),
        jhat_star: gap_sum(&zs, p_bar(p) / (p - 1.0)),
        norm_q,
        nu_ratio,
    }
}

/// The Lyapunov functional of the unperturbed equation.
pub fn energy_e(p: f64, g: &Grid, st: &State) -> f64 {
    let dw = g.differentiate(&st.w1);
    let c = (p + 1.0) / (p - 1.0).powi(2);
    let y = g.nodes();
    let dens: Vec<f64> = (0..g.n_nodes())
        .map(|j| {
            let w = st.w1[j];
            0.5 * st.w2[j] * st.w2[j] + 0.5 * dw[j] * dw[j] * (1.0 - y[j] * y[j]) + c * w * w
                - w.abs().powf(p + 1.0) / (p + 1.0)
        })
        .collect();
    g.integrate(&Field::new(dens))
}

/// `ψ = p|K*₁|^{p-1} - 2(p+1)/(p-1)²` for the soliton sum of `dec`.
pub fn psi(p: f64, g: &Grid, dec: &Decomposition) -> Result<Field> {
    let k1 = soliton_sum(p, g, &dec.params)?.w1;
    let c = 2.0 * (p + 1.0) / (p - 1.0).powi(2);
    Ok(k1.map(|v| p * v.abs().powf(p - 1.0) - c))
}

/// `φ(r, q) = ∫(r₁'q₁'(1-y²) - ψr₁q₁ + r₂q₂)ρ`.
pub fn quad_phi_psi(p: f64, g: &Grid, dec: &Decomposition, r: &State, q: &State) -> Result<f64> {
    let psi = psi(p, g, dec)?;
    Ok(phi_with(g, &psi, r, q))
}

fn phi_with(g: &Grid, psi: &Field, r: &State, q: &State) -> f64 {
    let dr = g.differentiate(&r.w1);
    let dq = g.differentiate(&q.w1);
    let y = g.nodes();
    let dens: Vec<f64> = (0..g.n_nodes())
        .map(|j| {
            dr[j] * dq[j] * (1.0 - y[j] * y[j]) - psi[j] * r.w1[j] * q.w1[j] + r.w2[j] * q.w2[j]
        })
        .collect();
    g.integrate(&Field::new(dens))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Lyapunov {
    pub e1: f64,
    pub e2: f64,
    pub phi_qq: f64,
    pub r_minus: f64,
}

/// `E₁ = ½φ(q,q) + R₋` and `E₂ = E₁ + η∫q₁q₂ρ`.
pub fn lyapunov_e1_e2(
    cfg: &ProblemConfig,
    g: &Grid,
    dec: &Decomposition,
    eta: f64,
) -> Result<Lyapunov> {
    let p = cfg.p;
    let k1 = soliton_sum(p, g, &dec.params)?.w1;
    let c = 2.0 * (p + 1.0) / (p - 1.0).powi(2);
    let psi = k1.map(|v| p * v.abs().powf(p - 1.0) - c);
    let q = &dec.q;
    let phi_qq = phi_with(g, &psi, q, q);
    let pot = Potential::new();
    let h: Vec<f64> = (0..g.n_nodes())
        .map(|j| {
            let kk = k1[j];
            let qq = q.w1[j];
            let big = (kk + qq).abs().powf(p + 1.0) / (p + 1.0)
                - kk.abs().powf(p + 1.0) / (p + 1.0)
                - spow(kk, p) * qq
                - 0.5 * p * kk.abs().powf(p - 1.0) * qq * qq;
            big + pot.eval(&cfg.perturbation, p, dec.s, kk + qq)
        })
        .collect();
    let r_minus = -g.integrate(&Field::new(h));
    let e1 = 0.5 * phi_qq + r_minus;
    let e2 = e1 + eta * g.dot(&q.w1, &q.w2);
    Ok(Lyapunov {
        e1,
        e2,
        phi_qq,
        r_minus,
    })
}

/// One evaluated instance of a monitored inequality.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonitorRow {
    pub s: f64,
    pub lhs: f64,
    /// Bracket with unit constants: the sum of `terms`.
    pub rhs: f64,
    pub ratio: f64,
    pub terms: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonitorReport {
    pub name: String,
    pub term_names: Vec<String>,
    pub samples: usize,
    /// Samples with a vanishing side, excluded from the fit.
    pub skipped: usize,
    /// `exp(mean log(lhs/rhs))`, the least-squares constant on log-ratios.
    pub fitted_c: f64,
    pub max_ratio: f64,
    /// Slope of `log ratio` against `s`.
    pub slope: f64,
    pub slope_t: f64,
    /// One-sided p-value for a positive slope.
    pub p_value: f64,
    pub bounded: bool,
    /// Share of samples in which each term is the largest.
    pub dominant_share: Vec<f64>,
    /// Largest term over the last quarter of the window.
    pub late_dominant: String,
    #[serde(skip)]
    pub rows: Vec<MonitorRow>,
}

impl MonitorReport {
    pub fn csv_header() -> [&'static str; 4] {
        ["s", "LHS", "RHS", "ratio"]
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct InequalityReport {
    pub monitors: Vec<MonitorReport>,
    pub confidence: f64,
    pub delta: f64,
    pub alpha: Option<f64>,
}

impl InequalityReport {
    pub fn all_bounded(&self) -> bool {
        self.monitors.iter().all(|m| m.bounded)
    }

    pub fn get(&self, name: &str) -> Option<&MonitorReport> {
        self.monitors.iter().find(|m| m.name == name)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MonitorOptions {
    /// `δ` of the parameter estimates.
    pub delta: f64,
    pub confidence: f64,
}

impl Default for MonitorOptions {
    fn default() -> Self {
        MonitorOptions {
            delta: 0.5,
            confidence: 0.95,
        }
    }
}

fn summarize(
    name: &str,
    term_names: &[&str],
    rows: Vec<MonitorRow>,
    confidence: f64,
) -> Result<MonitorReport> {
    let used: Vec<&MonitorRow> = rows
        .iter()
        .filter(|r| r.lhs > 0.0 && r.rhs > 0.0 && r.ratio.is_finite())
        .collect();
    let skipped = rows.len() - used.len();
    if used.len() < 3 {
        return Err(Error::InsufficientSamples(format!(
            "{name}: {} usable samples",
            used.len()
        )));
    }
    let xs: Vec<f64> = used.iter().map(|r| r.s).collect();
    let ys: Vec<f64> = used.iter().map(|r| r.ratio.ln()).collect();
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    // Newey–West standard error: the samples come from a smooth trajectory,
    // so residuals are strongly autocorrelated and the plain OLS error is
    // far too small.
    let u: Vec<f64> = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - mx) * (y - my - slope * (x - mx)))
        .collect();
    let lags = newey_west_lags(u.len()).min(u.len() - 1);
    let mut var: f64 = u.iter().map(|v| v * v).sum();
    for l in 1..=lags {
        let w = 1.0 - l as f64 / (lags + 1) as f64;
        var += 2.0 * w * u[l..].iter().zip(&u).map(|(a, b)| a * b).sum::<f64>();
    }
    let se = var.max(0.0).sqrt() / sxx;
    let (slope_t, p_value) = if se > 0.0 {
        let t = slope / se;
        let dist = StudentsT::new(0.0, 1.0, m - 2.0)
            .map_err(|e| Error::InvalidParameter(e.to_string()))?;
        (t, 1.0 - dist.cdf(t))
    } else if slope > 0.0 {
        (f64::INFINITY, 0.0)
    } else {
        (f64::NEG_INFINITY, 1.0)
    };
    let nt = term_names.len();
    let mut share = vec![0.0; nt];
    for r in &rows {
        if let Some(i) = argmax(&r.terms) {
            share[i] += 1.0 / rows.len() as f64;
        }
    }
    let late_start = rows.len() - rows.len().div_ceil(4);
    let mut late = vec![0.0; nt];
    for r in &rows[late_start..] {
        for (a, t) in late.iter_mut().zip(&r.terms) {
            *a += t;
        }
    }
    let late_dominant = argmax(&late)
        .map(|i| term_names[i].to_string())
        .unwrap_or_default();
    Ok(MonitorReport {
        name: name.to_string(),
        term_names: term_names.iter().map(|s| s.to_string()).collect(),
        samples: rows.len(),
        skipped,
        fitted_c: my.exp(),
        max_ratio: used.iter().map(|r| r.ratio).fold(0.0, f64::max),
        slope,
        slope_t,
        p_value,
        bounded: p_value >= 1.0 - confidence,
        dominant_share: share,
        late_dominant,
        rows,
    })
}

/// Bartlett bandwidth `⌊4 (m/100)^{2/9}⌋`.
fn newey_west_lags(m: usize) -> usize {
    (4.0 * (m as f64 / 100.0).powf(2.0 / 9.0)).floor() as usize
}

fn argmax(v: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, x) in v.iter().enumerate() {
        if x.is_finite() && best.is_none_or(|b| *x > v[b]) {
            best = Some(i);
        }
    }
    best
}

fn row(s: f64, lhs: f64, terms: Vec<f64>) -> MonitorRow {
    let rhs: f64 = terms.iter().sum();
    MonitorRow {
        s,
        lhs,
        rhs,
        ratio: lhs / rhs,
        terms,
    }
}

/// Evaluates the four parameter estimates along `records`, with time
/// derivatives from central differences on the (uniform) output cadence.
pub fn inequality_monitor(
    cfg: &ProblemConfig,
    records: &[TrackRecord],
    opts: MonitorOptions,
) -> Result<InequalityReport> {
    if records.len() < 5 {
        return Err(Error::InsufficientSamples(format!(
            "{} records, need at least 5",
            records.len()
        )));
    }
    let p = cfg.p;
    let k = cfg.k;
    let rate = 2.0 / (p - 1.0);
    let pb = p_bar(p);
    let alpha = cfg.perturbation.decay_alpha();
    let delta = opts.delta;
    let eig = eigen_system(&cfg.reduced())?;
    let s_start = records[0].dec.s;
    let q0sq = records[0].norm_q.powi(2);
    let floor = |s: f64| alpha.map(|a| s.powf(-a));

    let mut nu_rows = Vec::new();
    let mut zeta_rows = Vec::new();
    let mut q_rows = Vec::new();
    let mut phi_rows = Vec::new();
    let with_floor = |mut t: Vec<f64>, s: f64| {
        if let Some(f) = floor(s) {
            t.push(f);
        }
        t
    };
    for w in records.windows(3) {
        let (a, b, c) = (&w[0], &w[1], &w[2]);
        let s = b.dec.s;
        let h = c.dec.s - a.dec.s;
        let q = b.norm_q;
        let gj = &b.gauges;
        let j = gj.j;
        let jb = gj.jbar;

        let lhs_nu = (0..k)
            .map(|i| {
                let nd = (c.dec.params[i].nu - a.dec.params[i].nu) / h;
                let sp = b.dec.params[i];
                (nd - sp.nu).abs() / (1.0 - sp.d * sp.d)
            })
            .fold(0.0, f64::max);
        nu_rows.push(row(s, lhs_nu, with_floor(vec![q * q, j, q * jb], s)));

        let (za, zb, zc) = (a.dec.zeta(), b.dec.zeta(), c.dec.zeta());
        let bracket = vec![q * q, (j + q) * jb, j.powf(1.0 + delta)];
        let lhs_zeta = (0..k)
            .map(|i| {
                let zd = (zc[i] - za[i]) / h;
                let left = if i > 0 {
                    (-rate * (zb[i] - zb[i - 1])).exp()
                } else {
                    0.0
                };
                let right = if i + 1 < k {
                    (-rate * (zb[i + 1] - zb[i])).exp()
                } else {
                    0.0
                };
                (zd / cfg.c1 - (left - right)).abs()
            })
            .fold(0.0, f64::max);
        zeta_rows.push(row(s, lhs_zeta, with_floor(bracket.clone(), s)));

        q_rows.push(row(
            s,
            q * q,
            with_floor(vec![(-delta * (s - s_start)).exp() * q0sq, j.powf(pb)], s),
        ));

        let phi2: f64 = b.phi.iter().map(|x| x * x).sum();
        let lhs_phi = (0..k)
            .map(|i| {
                let pd = (c.phi[i] - a.phi[i]) / h;
                (pd - eig.values[i] / s * b.phi[i]).abs()
            })
            .fold(0.0, f64::max);
        let mut t = vec![phi2 / s];
        t.extend(bracket);
        phi_rows.push(row(s, lhs_phi, with_floor(t, s)));
    }
    let fl = |mut v: Vec<&'static str>| {
        if alpha.is_some() {
            v.push("s^-alpha");
        }
        v
    };
    let conf = opts.confidence;
    let monitors = vec![
        summarize("est_nu", &fl(vec!["q^2", "J", "q*Jbar"]), nu_rows, conf)?,
        summarize(
            "est_zeta",
            &fl(vec!["q^2", "(J+q)*Jbar", "J^(1+delta)"]),
            zeta_rows,
            conf,
        )?,
        summarize(
            "est_q",
            &fl(vec!["e^(-delta(s-s0))*q0^2", "J^pbar"]),
            q_rows,
            conf,
        )?,
        summarize(
            "est_phi",
            &fl(vec!["sum(phi^2)/s", "q^2", "(J+q)*Jbar", "J^(1+delta)"]),
            phi_rows,
            conf,
        )?,
    ];
    Ok(InequalityReport {
        monitors,
        confidence: conf,
        delta,
        alpha,
    })
}

/// Least-squares `c₁` in `ζ̇_i = c₁(e^{-r(ζ_i-ζ_{i-1})} - e^{-r(ζ_{i+1}-ζ_i)})`
/// over `records`, with central differences for `ζ̇`.
pub fn fit_c1(p: f64, records: &[TrackRecord]) -> Result<f64> {
    if records.len() < 3 {
        return Err(Error::InsufficientSamples(format!(
            "{} records, need at least 3",
            records.len()
        )));
    }
    let rate = 2.0 / (p - 1.0);
    let (mut num, mut den) = (0.0, 0.0);
    for w in records.windows(3) {
        let (za, zb, zc) = (w[0].dec.zeta(), w[1].dec.zeta(), w[2].dec.zeta());
        let h = w[2].dec.s - w[0].dec.s;
        let k = zb.len();
        for i in 0..k {
            let left = if i > 0 {
                (-rate * (zb[i] - zb[i - 1])).exp()
            } else {
                0.0
            };
            let right = if i + 1 < k {
                (-rate * (zb[i + 1] - zb[i])).exp()
            } else {
                0.0
            };
            let f = left - right;
            num += (zc[i] - za[i]) / h * f;
            den += f * f;
        }
    }
    Ok(num / den)
}
