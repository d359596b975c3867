//! The similarity-variable wave equation as a first-order system in `s`.
//!
//! `∂ₛw₁ = w₂`,
//! `∂ₛw₂ = 𝓛w₁ - a(a+1)w₁ + |w₁|^{p-1}w₁ - (1+2a)w₂ - 2y∂_y w₂ + f̃ + g̃`
//! with `a = 2/(p-1)`. Perturbations enter through their rescaled forms and are
//! evaluated in log space so that large `s` does not overflow.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Dense, Field, Grid, State};
use crate::quadrature::gauss_jacobi;
use crate::reduced::{bar_zeta, ReducedConfig};
use crate::solitons::{kappa_star, SolitonParam};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FKind {
    #[default]
    None,
    /// `f(u) = M₀|u|^{p-1}u / log(2+u²)^α`
    LogDampedPower,
    /// `f(u) = M₀|u|^{q-1}u`, `q < p`
    SubcriticalPower,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GKind {
    #[default]
    None,
    /// `g(x,t,u,v,z) = ε[cos x (1+u²)^{(p+1)/4} + tanh v + tanh z]`
    BoundedMixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerturbationSpec {
    pub kind_f: FKind,
    pub kind_g: GKind,
    /// Amplitude of `f`.
    #[serde(rename = "M0")]
    pub m0: f64,
    pub alpha: f64,
    pub epsilon: f64,
    pub q_exp: f64,
    pub x0: f64,
    #[serde(rename = "T0")]
    pub t0: f64,
}

impl Default for PerturbationSpec {
    fn default() -> Self {
        PerturbationSpec {
            kind_f: FKind::None,
            kind_g: GKind::None,
            m0: 1.0,
            alpha: 2.0,
            epsilon: 0.0,
            q_exp: 2.0,
            x0: 0.0,
            t0: 1.0,
        }
    }
}

impl PerturbationSpec {
    pub fn is_none(&self) -> bool {
        self.kind_f == FKind::None && self.kind_g == GKind::None
    }

    pub fn validate(&self, p: f64) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.m0.is_finite() && self.m0 >= 0.0) {
            return bad(format!("M0 = {} must be >= 0", self.m0));
        }
        if self.kind_f == FKind::LogDampedPower && !(self.alpha > 1.0) {
            return bad(format!("alpha = {} must be > 1", self.alpha));
        }
        if self.kind_f == FKind::SubcriticalPower
            && !(self.q_exp.is_finite() && self.q_exp < p && self.q_exp >= 1.0)
        {
            return bad(format!("q_exp = {} must lie in [1, p)", self.q_exp));
        }
        if !self.epsilon.is_finite() {
            return bad("epsilon must be finite".into());
        }
        if !(self.t0.is_finite() && self.t0 > 0.0 && self.x0.is_finite()) {
            return bad(format!(
                "frame (x0, T0) = ({}, {}) invalid",
                self.x0, self.t0
            ));
        }
        Ok(())
    }

    /// The constant `M₀` for which `g` satisfies its growth bound.
    pub fn g_bound_constant(&self, p: f64) -> f64 {
        self.epsilon.abs() * (2.0 + 1f64.max(2f64.powf((p - 3.0) / 4.0)))
    }

    /// Exponent of the `C/s^α` floor contributed by `f`; `None` if `f` decays
    /// faster than any power.
    pub fn decay_alpha(&self) -> Option<f64> {
        match self.kind_f {
            FKind::LogDampedPower => Some(self.alpha),
            _ => None,
        }
    }
}

/// `|x|^{e-1}x`, with value 0 at 0.
#[inline]
pub fn spow(x: f64, e: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else if e == 3.0 {
        x * x * x
    } else {
        x.abs().powf(e - 1.0) * x
    }
}

/// `ln(e^a + e^b)`
#[inline]
fn logaddexp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// `f̃(w) = e^{-2ps/(p-1)} f(e^{2s/(p-1)} w)`.
pub fn f_tilde(spec: &PerturbationSpec, p: f64, s: f64, w: f64) -> f64 {
    match spec.kind_f {
        FKind::None => 0.0,
        FKind::LogDampedPower => {
            if w == 0.0 {
                return 0.0;
            }
            let ln_u = 2.0 * s / (p - 1.0) + w.abs().ln();
            let l = logaddexp(2f64.ln(), 2.0 * ln_u);
            spec.m0 * spow(w, p) / l.powf(spec.alpha)
        }
        FKind::SubcriticalPower => {
            spec.m0 * (-2.0 * (p - spec.q_exp) * s / (p - 1.0)).exp() * spow(w, spec.q_exp)
        }
    }
}

/// Unscaled `f(u)`, used by the growth-bound checks.
pub fn f_raw(spec: &PerturbationSpec, p: f64, u: f64) -> f64 {
    match spec.kind_f {
        FKind::None => 0.0,
        FKind::LogDampedPower => spec.m0 * spow(u, p) / (2.0 + u * u).ln().powf(spec.alpha),
        FKind::SubcriticalPower => spec.m0 * spow(u, spec.q_exp),
    }
}

/// Unscaled `g(x, t, u, v, z)`.
pub fn g_raw(spec: &PerturbationSpec, p: f64, x: f64, _t: f64, u: f64, v: f64, z: f64) -> f64 {
    match spec.kind_g {
        GKind::None => 0.0,
        GKind::BoundedMixed => {
            spec.epsilon * (x.cos() * (1.0 + u * u).powf((p + 1.0) / 4.0) + v.tanh() + z.tanh())
        }
    }
}

/// `e^{-x}·tanh(e^{c}·v)` without overflow.
#[inline]
fn damped_tanh(decay: f64, growth: f64, v: f64) -> f64 {
    if v == 0.0 {
        return 0.0;
    }
    let arg = growth + v.abs().ln();
    let t = if arg > 20.0 { 1.0 } else { arg.exp().tanh() };
    (-decay).exp() * t * v.signum()
}

/// `g̃` at one node, with `w`, `∂_y w` and `∂ₛ w` given.
pub fn g_tilde(spec: &PerturbationSpec, p: f64, s: f64, y: f64, w: f64, wy: f64, ws: f64) -> f64 {
    match spec.kind_g {
        GKind::None => 0.0,
        GKind::BoundedMixed => {
            let decay = 2.0 * p * s / (p - 1.0);
            let x = spec.x0 + y * (-s).exp();
            // e^{-decay}(1+U²)^{(p+1)/4}, U = e^{2s/(p-1)}w
            let ln_u2 = if w == 0.0 {
                f64::NEG_INFINITY
            } else {
                2.0 * (2.0 * s / (p - 1.0) + w.abs().ln())
            };
            let t1 = x.cos() * (-decay + (p + 1.0) / 4.0 * logaddexp(0.0, ln_u2)).exp();
            let grow = (p + 1.0) * s / (p - 1.0);
            let z = ws + y * wy + 2.0 * w / (p - 1.0);
            spec.epsilon * (t1 + damped_tanh(decay, grow, wy) + damped_tanh(decay, grow, z))
        }
    }
}

/// Scaled potential `F̃(w) = ∫₀^w f̃`.
#[derive(Debug, Clone)]
pub struct Potential {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl Potential {
    pub fn new() -> Self {
        let r = gauss_jacobi(24, 0.0).expect("Legendre rule");
        Potential {
            nodes: r.nodes,
            weights: r.weights,
        }
    }

    pub fn eval(&self, spec: &PerturbationSpec, p: f64, s: f64, w: f64) -> f64 {
        match spec.kind_f {
            FKind::None => 0.0,
            FKind::SubcriticalPower => {
                spec.m0
                    * (-2.0 * (p - spec.q_exp) * s / (p - 1.0)).exp()
                    * w.abs().powf(spec.q_exp + 1.0)
                    / (spec.q_exp + 1.0)
            }
            FKind::LogDampedPower => {
                let h = 0.5 * w;
                self.nodes
                    .iter()
                    .zip(&self.weights)
                    .map(|(x, wt)| wt * f_tilde(spec, p, s, h * (x + 1.0)))
                    .sum::<f64>()
                    * h
            }
        }
    }
}

impl Default for Potential {
    fn default() -> Self {
        Self::new()
    }
}

/// Exponential damping of the highest modal coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterSpec {
    pub enabled: bool,
    /// Modes with index `≥ cutoff·n` are damped.
    pub cutoff: f64,
    /// Per unit `s`, the last mode is multiplied by this factor.
    pub last_mode_factor: f64,
}

impl Default for FilterSpec {
    fn default() -> Self {
        FilterSpec {
            enabled: true,
            cutoff: 0.9,
            last_mode_factor: 0.5,
        }
    }
}

impl FilterSpec {
    /// Per-step modal multipliers for step `ds`.
    pub fn multipliers(&self, n: usize, ds: f64) -> Vec<f64> {
        let mc = ((self.cutoff * n as f64).floor() as usize).min(n - 1);
        let rate = self.last_mode_factor.ln() * ds;
        (0..n)
            .map(|m| {
                if !self.enabled || m < mc {
                    1.0
                } else {
                    let x = (m - mc + 1) as f64 / (n - mc) as f64;
                    (rate * x * x).exp()
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub p: f64,
    pub k: usize,
    pub zeta0: f64,
    pub s0: f64,
    pub c1: f64,
    #[serde(default)]
    pub perturbation: PerturbationSpec,
    #[serde(default = "default_cfl")]
    pub c_cfl: f64,
    #[serde(default)]
    pub filter: FilterSpec,
}

fn default_cfl() -> f64 {
    20.0
}

impl ProblemConfig {
    pub fn unperturbed(p: f64, k: usize, zeta0: f64, s0: f64) -> Self {
        ProblemConfig {
            p,
            k,
            zeta0,
            s0,
            c1: 1.0,
            perturbation: PerturbationSpec::default(),
            c_cfl: default_cfl(),
            filter: FilterSpec::default(),
        }
    }

    pub fn reduced(&self) -> ReducedConfig {
        ReducedConfig {
            k: self.k,
            p: self.p,
            c1: self.c1,
            zeta0: self.zeta0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.reduced().validate()?;
        self.perturbation.validate(self.p)?;
        if !(self.s0.is_finite() && self.s0 > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "s0 = {} must be > 0",
                self.s0
            )));
        }
        if !(self.c_cfl.is_finite() && self.c_cfl > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "c_cfl = {} must be > 0",
                self.c_cfl
            )));
        }
        let f = &self.filter;
        if !(f.cutoff > 0.0
            && f.cutoff <= 1.0
            && f.last_mode_factor > 0.0
            && f.last_mode_factor <= 1.0)
        {
            return Err(Error::InvalidParameter(
                "filter cutoff and factor must lie in (0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Right-hand side of the first-order system.
pub fn rhs_w(cfg: &ProblemConfig, g: &Grid, s: f64, st: &State) -> State {
    let n = g.n_nodes();
    let p = cfg.p;
    let a = g.weight_exponent();
    let lin = a * (a + 1.0);
    let damp = 1.0 + 2.0 * a;
    let y = g.nodes();
    let w1 = st.w1.values();
    let w2 = st.w2.values();

    let mut lw = vec![0.0; n];
    g.apply_l_into(w1, &mut lw);
    let mut dw2 = vec![0.0; n];
    g.differentiate_into(w2, &mut dw2);
    let spec = &cfg.perturbation;
    let dw1 = if spec.kind_g != GKind::None {
        let mut d = vec![0.0; n];
        g.differentiate_into(w1, &mut d);
        d
    } else {
        Vec::new()
    };

    let mut out = vec![0.0; n];
    for j in 0..n {
        let mut v = lw[j] - lin * w1[j] + spow(w1[j], p) - damp * w2[j] - 2.0 * y[j] * dw2[j];
        if spec.kind_f != FKind::None {
            v += f_tilde(spec, p, s, w1[j]);
        }
        if spec.kind_g != GKind::None {
            v += g_tilde(spec, p, s, y[j], w1[j], dw1[j], w2[j]);
        }
        out[j] = v;
    }
    State::new(st.w2.clone(), Field::new(out))
}

/// One classical Runge–Kutta step.
pub fn step(cfg: &ProblemConfig, g: &Grid, s: f64, st: &State, ds: f64) -> State {
    let k1 = rhs_w(cfg, g, s, st);
    let mut tmp = st.clone();
    tmp.axpy(0.5 * ds, &k1);
    let k2 = rhs_w(cfg, g, s + 0.5 * ds, &tmp);
    let mut tmp = st.clone();
    tmp.axpy(0.5 * ds, &k2);
    let k3 = rhs_w(cfg, g, s + 0.5 * ds, &tmp);
    let mut tmp = st.clone();
    tmp.axpy(ds, &k3);
    let k4 = rhs_w(cfg, g, s + ds, &tmp);
    let mut out = st.clone();
    out.axpy(ds / 6.0, &k1);
    out.axpy(ds / 3.0, &k2);
    out.axpy(ds / 3.0, &k3);
    out.axpy(ds / 6.0, &k4);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimRecord {
    pub s: f64,
    pub state: State,
    pub cfl_dt: f64,
    pub stable: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct SimOptions {
    /// Spacing of observer calls in `s`; 0 calls after every step.
    pub output_every: f64,
    /// Return the records (otherwise only the observer sees them).
    pub keep: bool,
    pub max_halvings: u32,
    /// A state whose sup-norm exceeds this is treated as unstable.
    pub blowup_threshold: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            output_every: 0.05,
            keep: true,
            max_halvings: 6,
            blowup_threshold: 1e8,
        }
    }
}

fn healthy(st: &State, threshold: f64) -> bool {
    st.is_finite() && st.w1.max_abs() < threshold && st.w2.max_abs() < threshold
}

/// Integrates from `s0` to `s_end`. The observer sees the initial state and
/// every output; returning `false` stops the run early.
pub fn simulate(
    cfg: &ProblemConfig,
    g: &Grid,
    st0: &State,
    s0: f64,
    s_end: f64,
    opts: SimOptions,
    mut observer: impl FnMut(&SimRecord) -> bool,
) -> Result<Vec<SimRecord>> {
    cfg.validate()?;
    if st0.len() != g.n_nodes() {
        return Err(Error::ShapeMismatch {
            expected: g.n_nodes(),
            got: st0.len(),
        });
    }
    if !(s_end >= s0) {
        return Err(Error::InvalidParameter(format!(
            "s_end = {s_end} before s0 = {s0}"
        )));
    }
    let n = g.n_nodes();
    let ds_cfl = cfg.c_cfl / (n * n) as f64;
    let mut records = Vec::new();
    let first = SimRecord {
        s: s0,
        state: st0.clone(),
        cfl_dt: ds_cfl,
        stable: healthy(st0, opts.blowup_threshold),
    };
    if !first.stable {
        return Err(Error::Unstable { last_stable_s: s0 });
    }
    let go_on = observer(&first);
    if opts.keep {
        records.push(first);
    }
    if !go_on || s_end == s0 {
        return Ok(records);
    }

    let interval = if opts.output_every > 0.0 {
        opts.output_every
    } else {
        ds_cfl
    };
    let mut s = s0;
    let mut st = st0.clone();
    let mut halvings = 0u32;
    let mut m: u64 = 0;
    let mut filter_cache: Option<(f64, Dense)> = None;
    while s < s_end {
        m += 1;
        let target = (s0 + m as f64 * interval).min(s_end);
        let span = target - s;
        let dmax = ds_cfl / 2f64.powi(halvings as i32);
        let steps = (span / dmax).ceil().max(1.0) as usize;
        let ds = span / steps as f64;
        let filt = if cfg.filter.enabled {
            let fresh = !matches!(&filter_cache, Some((d, _)) if *d == ds);
            if fresh {
                filter_cache = Some((ds, g.modal_multiplier(&cfg.filter.multipliers(n, ds))));
            }
            filter_cache.as_ref().map(|(_, f)| f)
        } else {
            None
        };
        let mut trial = st.clone();
        let mut ok = true;
        for i in 0..steps {
            trial = step(cfg, g, s + i as f64 * ds, &trial, ds);
            if let Some(f) = filt {
                trial = State::new(
                    Field::new(f.apply(trial.w1.values())),
                    Field::new(f.apply(trial.w2.values())),
                );
            }
            if !healthy(&trial, opts.blowup_threshold) {
                ok = false;
                break;
            }
        }
        if !ok {
            if halvings >= opts.max_halvings {
                return Err(Error::Unstable { last_stable_s: s });
            }
            halvings += 1;
            m -= 1;
            continue;
        }
        s = target;
        st = trial;
        let rec = SimRecord {
            s,
            state: st.clone(),
            cfl_dt: ds,
            stable: true,
        };
        let go_on = observer(&rec);
        if opts.keep {
            records.push(rec);
        }
        if !go_on {
            break;
        }
    }
    Ok(records)
}

/// Soliton parameters of the initial data: `d̂_i = -tanh(ζ̄_i(s₀) + ζ₀ + (p-1)φ₁₀/2)`.
pub fn initial_params(
    cfg: &ProblemConfig,
    s0: f64,
    nu0: &[f64],
    phi10: f64,
) -> Result<Vec<SolitonParam>> {
    let red = cfg.reduced();
    if nu0.len() != cfg.k {
        return Err(Error::ShapeMismatch {
            expected: cfg.k,
            got: nu0.len(),
        });
    }
    let bar = bar_zeta(&red, s0)?;
    bar.iter()
        .zip(nu0)
        .enumerate()
        .map(|(i, (b, nu))| {
            let d = -(b + cfg.zeta0 + (cfg.p - 1.0) / 2.0 * phi10).tanh();
            let sign = if i % 2 == 0 { -1.0 } else { 1.0 };
            SolitonParam::new(d, *nu, sign)
        })
        .collect()
}

/// `Σ (-1)^i κ*(params_i)`.
pub fn soliton_sum(p: f64, g: &Grid, params: &[SolitonParam]) -> Result<State> {
    let mut acc = State::zeros(g.n_nodes());
    for sp in params {
        acc.axpy(sp.sign, &kappa_star(p, sp, g)?);
    }
    Ok(acc)
}

/// Initial data from `k + 1` shooting parameters, rejecting values outside
/// the ball `|ν_i| ≤ s₀^{-1/2-|γ_i|}`, `|φ₁₀| ≤ s₀^{-η}`.
pub fn build_initial_data(
    cfg: &ProblemConfig,
    g: &Grid,
    s0: f64,
    nu0: &[f64],
    phi10: f64,
    eta: f64,
) -> Result<State> {
    cfg.validate()?;
    let tol = 1.0 + 1e-12;
    for (i, (nu, gam)) in nu0.iter().zip(cfg.reduced().gamma()).enumerate() {
        let r = s0.powf(-0.5 - gam.abs());
        if nu.abs() > r * tol {
            return Err(Error::InvalidParameter(format!(
                "|nu_{}| = {} exceeds ball radius {r}",
                i + 1,
                nu.abs()
            )));
        }
    }
    let r = s0.powf(-eta);
    if phi10.abs() > r * tol {
        return Err(Error::InvalidParameter(format!(
            "|phi_10| = {} exceeds ball radius {r}",
            phi10.abs()
        )));
    }
    soliton_sum(cfg.p, g, &initial_params(cfg, s0, nu0, phi10)?)
}

/// `‖∂ₛ exact(s) - rhs_w(s, exact(s))‖_𝓗` with a central difference in `s`.
pub fn residual_of(cfg: &ProblemConfig, g: &Grid, exact: &dyn Fn(f64) -> State, s: f64) -> f64 {
    let h = 1e-4 * s.abs().max(1.0);
    let ds = (&exact(s + h) - &exact(s - h)).scaled(0.5 / h);
    let r = rhs_w(cfg, g, s, &exact(s));
    g.norm_h(&(&ds - &r))
}

/// A backward-cone slice `t = T₀ - e^{-s}` in physical variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicalSlice {
    pub t: f64,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
}

pub fn to_physical(p: f64, spec: &PerturbationSpec, g: &Grid, w: &Field, s: f64) -> PhysicalSlice {
    let scale = (2.0 * s / (p - 1.0)).exp();
    let es = (-s).exp();
    PhysicalSlice {
        t: spec.t0 - es,
        x: g.nodes().iter().map(|y| spec.x0 + y * es).collect(),
        u: w.values().iter().map(|v| v * scale).collect(),
    }
}

/// Inverse of [`to_physical`] on the same nodes.
pub fn from_physical(p: f64, slice: &PhysicalSlice, s: f64) -> Field {
    let scale = (-2.0 * s / (p - 1.0)).exp();
    Field::new(slice.u.iter().map(|v| v * scale).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub s: f64,
    pub nodes: Vec<f64>,
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
}

impl Snapshot {
    pub fn new(g: &Grid, s: f64, st: &State) -> Self {
        Snapshot {
            s,
            nodes: g.nodes().to_vec(),
            w1: st.w1.values().to_vec(),
            w2: st.w2.values().to_vec(),
        }
    }
}
