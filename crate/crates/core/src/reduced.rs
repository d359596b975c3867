//! Reduced dynamics of the soliton centers.
//!
//! `ζ̇_i = c₁(e^{-2(ζ_i - ζ_{i-1})/(p-1)} - e^{-2(ζ_{i+1} - ζ_i)/(p-1)})`, where
//! the left term is absent for `i = 1` and the right term for `i = k`.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReducedConfig {
    pub k: usize,
    pub p: f64,
    pub c1: f64,
    pub zeta0: f64,
}

impl ReducedConfig {
    pub fn new(k: usize, p: f64, c1: f64, zeta0: f64) -> Result<Self> {
        let cfg = ReducedConfig { k, p, c1, zeta0 };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::InvalidParameter(format!(
                "need k >= 2 solitons, got {}",
                self.k
            )));
        }
        if !(self.p.is_finite() && self.p > 1.0) {
            return Err(Error::InvalidParameter(format!(
                "p = {} must be > 1",
                self.p
            )));
        }
        if !(self.c1.is_finite() && self.c1 > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "c1 = {} must be > 0",
                self.c1
            )));
        }
        if !self.zeta0.is_finite() {
            return Err(Error::InvalidParameter("zeta0 must be finite".into()));
        }
        Ok(())
    }

    /// `γ_i = (p-1)(-i + (k+1)/2)` for `i = 1..=k`.
    pub fn gamma(&self) -> Vec<f64> {
        let mid = (self.k as f64 + 1.0) / 2.0;
        (1..=self.k)
            .map(|i| (self.p - 1.0) * (mid - i as f64))
            .collect()
    }

    /// `σ_i = i(k-i)/2` for `i = 1..k-1`.
    pub fn sigma(&self) -> Vec<f64> {
        (1..self.k)
            .map(|i| (i * (self.k - i)) as f64 / 2.0)
            .collect()
    }

    fn rate(&self) -> f64 {
        2.0 / (self.p - 1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedState {
    pub s: f64,
    pub zeta: Vec<f64>,
}

impl ReducedState {
    pub fn is_ordered(&self) -> bool {
        self.zeta.windows(2).all(|w| w[0] < w[1])
    }
}

/// Constant offsets of the explicit zero-mean solution.
pub fn alpha_bar(cfg: &ReducedConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let half = (cfg.p - 1.0) / 2.0;
    let mut alpha = vec![0.0; cfg.k];
    for (i, sigma) in cfg.sigma().into_iter().enumerate() {
        let l = (cfg.p - 1.0) * sigma / (2.0 * cfg.c1);
        alpha[i + 1] = alpha[i] - half * l.ln();
    }
    let mean = alpha.iter().sum::<f64>() / cfg.k as f64;
    alpha.iter_mut().for_each(|a| *a -= mean);
    // σ is palindromic, so ᾱ is odd about the middle; make that exact
    let k = cfg.k;
    for i in 0..k / 2 {
        let v = 0.5 * (alpha[i] - alpha[k - 1 - i]);
        alpha[i] = v;
        alpha[k - 1 - i] = -v;
    }
    if k % 2 == 1 {
        alpha[k / 2] = 0.0;
    }
    Ok(alpha)
}

/// `ζ̄(s)`, the explicit solution with zero center of mass.
pub fn bar_zeta(cfg: &ReducedConfig, s: f64) -> Result<Vec<f64>> {
    if !(s.is_finite() && s > 0.0) {
        return Err(Error::InvalidParameter(format!("s = {s} must be > 0")));
    }
    let alpha = alpha_bar(cfg)?;
    let mid = (cfg.k as f64 + 1.0) / 2.0;
    let slope = (cfg.p - 1.0) / 2.0 * s.ln();
    Ok(alpha
        .iter()
        .enumerate()
        .map(|(i, a)| ((i + 1) as f64 - mid) * slope + a)
        .collect())
}

/// `d/ds ζ̄(s)`.
pub fn bar_zeta_dot(cfg: &ReducedConfig, s: f64) -> Vec<f64> {
    let mid = (cfg.k as f64 + 1.0) / 2.0;
    (1..=cfg.k)
        .map(|i| (i as f64 - mid) * (cfg.p - 1.0) / (2.0 * s))
        .collect()
}

pub fn rhs_tl(cfg: &ReducedConfig, zeta: &[f64]) -> Vec<f64> {
    let k = zeta.len();
    let r = cfg.rate();
    let mut out = vec![0.0; k];
    for i in 0..k {
        let left = if i > 0 {
            (-r * (zeta[i] - zeta[i - 1])).exp()
        } else {
            0.0
        };
        let right = if i + 1 < k {
            (-r * (zeta[i + 1] - zeta[i])).exp()
        } else {
            0.0
        };
        out[i] = cfg.c1 * (left - right);
    }
    out
}

/// Jacobian `∂(rhs_tl)_i/∂ζ_j`.
pub fn jacobian_tl(cfg: &ReducedConfig, zeta: &[f64]) -> DMatrix<f64> {
    let k = zeta.len();
    let r = cfg.rate();
    let mut jac = DMatrix::zeros(k, k);
    for i in 0..k {
        if i > 0 {
            let e = cfg.c1 * r * (-r * (zeta[i] - zeta[i - 1])).exp();
            jac[(i, i)] -= e;
            jac[(i, i - 1)] += e;
        }
        if i + 1 < k {
            let e = cfg.c1 * r * (-r * (zeta[i + 1] - zeta[i])).exp();
            jac[(i, i)] -= e;
            jac[(i, i + 1)] += e;
        }
    }
    jac
}

/// Output of [`integrate_tl`]: accepted steps, including the start.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub s: Vec<f64>,
    pub zeta: Vec<Vec<f64>>,
    /// Set when some accepted state lost the ordering `ζ₁ < … < ζ_k`.
    pub ordering_violated: bool,
}

impl Trajectory {
    pub fn last(&self) -> ReducedState {
        ReducedState {
            s: *self.s.last().unwrap(),
            zeta: self.zeta.last().unwrap().clone(),
        }
    }

    /// State at `s` by cubic Hermite interpolation between accepted steps.
    pub fn at(&self, cfg: &ReducedConfig, s: f64, forcing: Option<&Forcing>) -> Vec<f64> {
        let idx = match self.s.iter().position(|&t| t >= s) {
            Some(0) => return self.zeta[0].clone(),
            Some(i) => i,
            None => return self.zeta.last().unwrap().clone(),
        };
        let (s0, s1) = (self.s[idx - 1], self.s[idx]);
        let (z0, z1) = (&self.zeta[idx - 1], &self.zeta[idx]);
        let f0 = full_rhs(cfg, s0, z0, forcing);
        let f1 = full_rhs(cfg, s1, z1, forcing);
        let h = s1 - s0;
        let t = (s - s0) / h;
        let (h00, h10, h01, h11) = (
            2.0 * t.powi(3) - 3.0 * t * t + 1.0,
            t.powi(3) - 2.0 * t * t + t,
            -2.0 * t.powi(3) + 3.0 * t * t,
            t.powi(3) - t * t,
        );
        (0..z0.len())
            .map(|i| h00 * z0[i] + h10 * h * f0[i] + h01 * z1[i] + h11 * h * f1[i])
            .collect()
    }

    /// CSV rows `s, ζ…, ξ…, φ…`.
    pub fn rows(&self, cfg: &ReducedConfig) -> Result<Vec<Vec<f64>>> {
        let eig = eigen_system(cfg)?;
        let mut rows = Vec::with_capacity(self.s.len());
        for (s, zeta) in self.s.iter().zip(&self.zeta) {
            let st = ReducedState {
                s: *s,
                zeta: zeta.clone(),
            };
            let xi = xi_coords(cfg, &st)?;
            let phi = eig.to_phi(&xi);
            let mut row = vec![*s];
            row.extend_from_slice(zeta);
            row.extend(xi);
            row.extend(phi);
            rows.push(row);
        }
        Ok(rows)
    }
}

pub fn csv_header(k: usize) -> Vec<String> {
    let mut h = vec!["s".to_string()];
    for name in ["zeta", "xi", "phi"] {
        h.extend((1..=k).map(|i| format!("{name}_{i}")));
    }
    h
}

/// Additive forcing `(s, ζ) ↦ f` on the right-hand side.
pub type Forcing = dyn Fn(f64, &[f64]) -> Vec<f64> + Sync;

fn full_rhs(cfg: &ReducedConfig, s: f64, zeta: &[f64], forcing: Option<&Forcing>) -> Vec<f64> {
    let mut f = rhs_tl(cfg, zeta);
    if let Some(g) = forcing {
        for (a, b) in f.iter_mut().zip(g(s, zeta)) {
            *a += b;
        }
    }
    f
}

#[derive(Debug, Clone, Copy)]
pub struct TlOptions {
    pub rtol: f64,
    pub atol: f64,
    pub h_min: f64,
}

impl Default for TlOptions {
    fn default() -> Self {
        TlOptions {
            rtol: 1e-10,
            atol: 1e-12,
            h_min: 1e-12,
        }
    }
}

// Dormand–Prince 5(4) tableau
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Adaptive Dormand–Prince integration of the reduced system.
pub fn integrate_tl(
    cfg: &ReducedConfig,
    state0: &ReducedState,
    s_end: f64,
    forcing: Option<&Forcing>,
    opts: TlOptions,
) -> Result<Trajectory> {
    cfg.validate()?;
    if state0.zeta.len() != cfg.k {
        return Err(Error::ShapeMismatch {
            expected: cfg.k,
            got: state0.zeta.len(),
        });
    }
    if !(s_end > state0.s) {
        return Err(Error::InvalidParameter(format!(
            "s_end = {s_end} must exceed s0 = {}",
            state0.s
        )));
    }
    let k = cfg.k;
    let mut s = state0.s;
    let mut z = state0.zeta.clone();
    let mut traj = Trajectory {
        s: vec![s],
        zeta: vec![z.clone()],
        ordering_violated: !state0.is_ordered(),
    };
    let mut h = 1e-3 * (s_end - s).min(s.abs().max(1.0));
    let mut stages: Vec<Vec<f64>> = vec![vec![0.0; k]; 7];
    stages[0] = full_rhs(cfg, s, &z, forcing);
    while s < s_end {
        h = h.min(s_end - s);
        if h < opts.h_min * s.abs().max(1.0) {
            return Err(Error::StepUnderflow { s });
        }
        for st in 1..7 {
            let mut zt = z.clone();
            for (j, row) in stages.iter().enumerate().take(st) {
                let aij = A[st][j];
                if aij != 0.0 {
                    for (a, b) in zt.iter_mut().zip(row) {
                        *a += h * aij * b;
                    }
                }
            }
            stages[st] = full_rhs(cfg, s + C[st] * h, &zt, forcing);
        }
        let mut z5 = z.clone();
        let mut err = 0.0f64;
        for i in 0..k {
            let mut d5 = 0.0;
            let mut d4 = 0.0;
            for st in 0..7 {
                d5 += B5[st] * stages[st][i];
                d4 += B4[st] * stages[st][i];
            }
            z5[i] += h * d5;
            let sc = opts.atol + opts.rtol * z[i].abs().max(z5[i].abs());
            err = err.max((h * (d5 - d4) / sc).abs());
        }
        if !err.is_finite() {
            h *= 0.25;
            continue;
        }
        if err <= 1.0 {
            s += h;
            z = z5;
            // FSAL: the last stage is the derivative at the new point
            stages[0] = stages[6].clone();
            if !z.windows(2).all(|w| w[0] < w[1]) {
                traj.ordering_violated = true;
            }
            traj.s.push(s);
            traj.zeta.push(z.clone());
        }
        let fac = if err == 0.0 {
            5.0
        } else {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        };
        h *= fac;
    }
    Ok(traj)
}

/// Tridiagonal interaction matrix `M`.
pub fn interaction_matrix(cfg: &ReducedConfig) -> Result<DMatrix<f64>> {
    cfg.validate()?;
    let k = cfg.k;
    let sigma = cfg.sigma();
    let mut m = DMatrix::zeros(k, k);
    for i in 0..k {
        let left = if i > 0 { sigma[i - 1] } else { 0.0 };
        let right = if i + 1 < k { sigma[i] } else { 0.0 };
        m[(i, i)] = -(left + right);
        if i > 0 {
            m[(i, i - 1)] = left;
        }
        if i + 1 < k {
            m[(i, i + 1)] = right;
        }
    }
    Ok(m)
}

/// Spectrum of `M`, eigenvalues descending.
#[derive(Debug, Clone)]
pub struct EigenSystem {
    pub values: Vec<f64>,
    /// `vectors[i]` is `e_{i+1}`, max-norm 1, first nonzero entry positive.
    pub vectors: Vec<Vec<f64>>,
}

pub fn eigen_system(cfg: &ReducedConfig) -> Result<EigenSystem> {
    let m = interaction_matrix(cfg)?;
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..cfg.k).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let mut values = Vec::with_capacity(cfg.k);
    let mut vectors = Vec::with_capacity(cfg.k);
    for &j in &order {
        values.push(eig.eigenvalues[j]);
        let mut v: Vec<f64> = eig.eigenvectors.column(j).iter().copied().collect();
        let max = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let first = v
            .iter()
            .copied()
            .find(|x| x.abs() > 1e-12 * max)
            .unwrap_or(1.0);
        let sc = first.signum() / max;
        v.iter_mut().for_each(|x| *x *= sc);
        vectors.push(v);
    }
    Ok(EigenSystem { values, vectors })
}

impl EigenSystem {
    /// Coefficients of `ξ` in the eigenbasis (orthogonal since `M` is symmetric).
    pub fn to_phi(&self, xi: &[f64]) -> Vec<f64> {
        self.vectors
            .iter()
            .map(|e| {
                let num: f64 = e.iter().zip(xi).map(|(a, b)| a * b).sum();
                let den: f64 = e.iter().map(|a| a * a).sum();
                num / den
            })
            .collect()
    }

    pub fn from_phi(&self, phi: &[f64]) -> Vec<f64> {
        let k = self.vectors.len();
        let mut xi = vec![0.0; k];
        for (c, e) in phi.iter().zip(&self.vectors) {
            for (x, v) in xi.iter_mut().zip(e) {
                *x += c * v;
            }
        }
        xi
    }
}

/// `ξ_i = (2/(p-1))(ζ_i - ζ̄_i(s) - ζ₀)`.
pub fn xi_coords(cfg: &ReducedConfig, st: &ReducedState) -> Result<Vec<f64>> {
    let bar = bar_zeta(cfg, st.s)?;
    let r = cfg.rate();
    Ok(st
        .zeta
        .iter()
        .zip(&bar)
        .map(|(z, b)| r * (z - b - cfg.zeta0))
        .collect())
}

pub fn zeta_from_xi(cfg: &ReducedConfig, s: f64, xi: &[f64]) -> Result<Vec<f64>> {
    let bar = bar_zeta(cfg, s)?;
    let half = (cfg.p - 1.0) / 2.0;
    Ok(xi
        .iter()
        .zip(&bar)
        .map(|(x, b)| half * x + b + cfg.zeta0)
        .collect())
}

pub fn to_phi_coords(cfg: &ReducedConfig, st: &ReducedState) -> Result<Vec<f64>> {
    Ok(eigen_system(cfg)?.to_phi(&xi_coords(cfg, st)?))
}

pub fn from_phi_coords(cfg: &ReducedConfig, s: f64, phi: &[f64]) -> Result<ReducedState> {
    let xi = eigen_system(cfg)?.from_phi(phi);
    Ok(ReducedState {
        s,
        zeta: zeta_from_xi(cfg, s, &xi)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(k: usize) -> ReducedConfig {
        ReducedConfig::new(k, 3.0, 1.0, 0.0).unwrap()
    }

    fn max_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn alpha_bar_k2() {
        let a = alpha_bar(&cfg(2)).unwrap();
        let h = 2f64.ln() / 2.0;
        assert!((a[0] + h).abs() < 1e-15 && (a[1] - h).abs() < 1e-15);
    }

    #[test]
    fn alpha_bar_symmetry() {
        for k in 2..=6 {
            for &(p, c1) in &[(3.0, 1.0), (2.0, 0.3), (5.0, 2.5)] {
                let c = ReducedConfig::new(k, p, c1, 0.7).unwrap();
                let a = alpha_bar(&c).unwrap();
                assert!(a.iter().sum::<f64>().abs() < 1e-13);
                for i in 0..k {
                    assert_eq!(a[i] + a[k - 1 - i], 0.0);
                }
            }
        }
    }

    #[test]
    fn bar_zeta_at_e() {
        let c = cfg(2);
        let a = alpha_bar(&c).unwrap();
        let z = bar_zeta(&c, std::f64::consts::E).unwrap();
        // slope (p-1)/2 · ln e = 1, offsets ∓1/2
        assert!((z[0] - (-0.5 + a[0])).abs() < 1e-15);
        assert!((z[1] - (0.5 + a[1])).abs() < 1e-15);
        assert!(bar_zeta(&c, 0.0).is_err());
    }

    #[test]
    fn bar_zeta_is_exact() {
        for k in 2..=6 {
            let c = ReducedConfig::new(k, 3.0, 0.8, 0.0).unwrap();
            for &s in &[1.0, 10.0, 100.0, 1000.0, 1e6] {
                let z = bar_zeta(&c, s).unwrap();
                let res = max_diff(&rhs_tl(&c, &z), &bar_zeta_dot(&c, s));
                assert!(res <= 1e-13, "k={k} s={s} {res}");
            }
        }
    }

    #[test]
    fn rhs_k2_closed_form() {
        let c = ReducedConfig::new(2, 3.0, 1.7, 0.0).unwrap();
        let a = 0.8;
        let r = rhs_tl(&c, &[-a, a]);
        let e = (-4.0 * a / 2.0f64).exp();
        assert!((r[0] + 1.7 * e).abs() < 1e-15 && (r[1] - 1.7 * e).abs() < 1e-15);
    }

    #[test]
    fn matrix_and_spectrum() {
        let m = interaction_matrix(&cfg(3)).unwrap();
        let want = DMatrix::from_row_slice(3, 3, &[-1.0, 1.0, 0.0, 1.0, -2.0, 1.0, 0.0, 1.0, -1.0]);
        assert_eq!(m, want);
        for k in 2..=10 {
            let e = eigen_system(&cfg(k)).unwrap();
            for (i, v) in e.values.iter().enumerate() {
                let want = -(((i + 1) * i) as f64) / 2.0;
                assert!((v - want).abs() < 1e-10, "k={k} i={i} {v}");
            }
            assert!(e.vectors[0].iter().all(|&x| (x - 1.0).abs() < 1e-12));
        }
    }

    #[test]
    fn jacobian_is_m_over_s() {
        let c = ReducedConfig::new(4, 3.0, 1.3, 0.2).unwrap();
        let m = interaction_matrix(&c).unwrap();
        for &s in &[10.0, 1e4] {
            let z = bar_zeta(&c, s).unwrap();
            let j = jacobian_tl(&c, &z) * s;
            assert!((j - &m).abs().max() < 1e-10);
        }
    }

    #[test]
    fn phi_round_trip() {
        let c = ReducedConfig::new(5, 3.0, 1.0, 0.3).unwrap();
        let e = eigen_system(&c).unwrap();
        let xi = [0.3, -1.2, 0.5, 2.0, -0.1];
        assert!(max_diff(&e.from_phi(&e.to_phi(&xi)), &xi) < 1e-12);
        let p = e.to_phi(&e.vectors[0]);
        assert!((p[0] - 1.0).abs() < 1e-14 && p[1..].iter().all(|v| v.abs() < 1e-14));
        let st = from_phi_coords(&c, 20.0, &[0.1, 0.0, -0.2, 0.0, 0.05]).unwrap();
        let back = to_phi_coords(&c, &st).unwrap();
        assert!(max_diff(&back, &[0.1, 0.0, -0.2, 0.0, 0.05]) < 1e-12);
    }

    #[test]
    fn tracks_exact_solution() {
        let c = ReducedConfig::new(3, 3.0, 1.0, 0.4).unwrap();
        let s0 = 5.0;
        let z0: Vec<f64> = bar_zeta(&c, s0)
            .unwrap()
            .iter()
            .map(|v| v + c.zeta0)
            .collect();
        let tr = integrate_tl(
            &c,
            &ReducedState { s: s0, zeta: z0 },
            10.0 * s0,
            None,
            TlOptions::default(),
        )
        .unwrap();
        assert!(!tr.ordering_violated);
        for (s, z) in tr.s.iter().zip(&tr.zeta) {
            let want: Vec<f64> = bar_zeta(&c, *s)
                .unwrap()
                .iter()
                .map(|v| v + c.zeta0)
                .collect();
            assert!(max_diff(z, &want) < 1e-8);
        }
        let mid = tr.at(&c, 17.3, None);
        let want: Vec<f64> = bar_zeta(&c, 17.3)
            .unwrap()
            .iter()
            .map(|v| v + c.zeta0)
            .collect();
        assert!(max_diff(&mid, &want) < 1e-7);
    }

    #[test]
    fn forcing_is_applied() {
        let c = cfg(2);
        let z0 = bar_zeta(&c, 10.0).unwrap();
        let push = |_s: f64, _z: &[f64]| vec![1.0, 1.0];
        let tr = integrate_tl(
            &c,
            &ReducedState { s: 10.0, zeta: z0 },
            12.0,
            Some(&push),
            TlOptions::default(),
        )
        .unwrap();
        let com: f64 = tr.last().zeta.iter().sum::<f64>() / 2.0;
        assert!((com - 2.0).abs() < 1e-9);
    }
}
