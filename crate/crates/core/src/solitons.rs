//! Stationary solitons `κ(d)`, the generalized family `κ*(d, ν)` and the
//! projectors onto the null and unstable directions of the linearization.

use crate::error::{Error, Result};
use crate::grid::{Field, Grid, State};

/// `κ₀ = (2(p+1)/(p-1)²)^{1/(p-1)}`.
pub fn kappa0(p: f64) -> f64 {
    (2.0 * (p + 1.0) / (p - 1.0).powi(2)).powf(1.0 / (p - 1.0))
}

/// `max |𝓛κ - a(a+1)κ + |κ|^{p-1}κ|` over the nodes, `a = 2/(p-1)`: the
/// discrete stationarity defect of `κ(d)`.
pub fn stationary_residual(p: f64, d: f64, g: &Grid) -> Result<f64> {
    let k = kappa(p, d, g)?;
    let lk = g.apply_l(&k);
    let a = 2.0 / (p - 1.0);
    Ok((0..g.n_nodes())
        .map(|j| (lk[j] - a * (a + 1.0) * k[j] + k[j].abs().powf(p - 1.0) * k[j]).abs())
        .fold(0.0, f64::max))
}

/// Parameters of one generalized soliton.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolitonParam {
    pub d: f64,
    pub nu: f64,
    /// `+1` or `-1`.
    pub sign: f64,
}

impl SolitonParam {
    pub fn new(d: f64, nu: f64, sign: f64) -> Result<Self> {
        let sp = SolitonParam { d, nu, sign };
        sp.validate()?;
        Ok(sp)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d.is_finite() && self.d.abs() < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "soliton parameter d = {} outside (-1, 1)",
                self.d
            )));
        }
        if !(self.nu.is_finite() && self.nu > -1.0 + self.d.abs()) {
            return Err(Error::InvalidParameter(format!(
                "soliton parameter nu = {} must exceed -1 + |d| = {}",
                self.nu,
                -1.0 + self.d.abs()
            )));
        }
        if self.sign != 1.0 && self.sign != -1.0 {
            return Err(Error::InvalidParameter(format!(
                "sign must be +1 or -1, got {}",
                self.sign
            )));
        }
        Ok(())
    }

    /// `d* = d/(1+ν)`.
    pub fn d_star(&self) -> f64 {
        self.d / (1.0 + self.nu)
    }

    /// `ζ = -argtanh d`.
    pub fn zeta(&self) -> f64 {
        -self.d.atanh()
    }

    pub fn zeta_star(&self) -> f64 {
        -self.d_star().atanh()
    }
}

fn check_d(d: f64) -> Result<()> {
    if d.is_finite() && d.abs() < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "|d| = {} must be < 1",
            d.abs()
        )))
    }
}

/// Pointwise `κ(d, y)`.
pub fn kappa_at(p: f64, d: f64, y: f64) -> f64 {
    let b = 1.0 / (p - 1.0);
    kappa0(p) * (1.0 - d * d).powf(b) * (1.0 + d * y).powf(-2.0 * b)
}

/// Pointwise `(κ₁*, κ₂*)(d, ν, y)`.
pub fn kappa_star_at(p: f64, d: f64, nu: f64, y: f64) -> (f64, f64) {
    let b = 1.0 / (p - 1.0);
    let a = 2.0 * b;
    let c = kappa0(p) * (1.0 - d * d).powf(b);
    let u = 1.0 + d * y + nu;
    (c * u.powf(-a), -a * c * nu * u.powf(-a - 1.0))
}

pub fn kappa(p: f64, d: f64, g: &Grid) -> Result<Field> {
    check_d(d)?;
    Ok(Field::from_fn(g, |y| kappa_at(p, d, y)))
}

pub fn kappa_star(p: f64, sp: &SolitonParam, g: &Grid) -> Result<State> {
    sp.validate()?;
    let mut k1 = Vec::with_capacity(g.n_nodes());
    let mut k2 = Vec::with_capacity(g.n_nodes());
    for &y in g.nodes() {
        let (a, b) = kappa_star_at(p, sp.d, sp.nu, y);
        k1.push(a);
        k2.push(b);
    }
    Ok(State::new(Field::new(k1), Field::new(k2)))
}

/// `∂_d (κ₁*, κ₂*)`.
pub fn d_kappa_star_dd(p: f64, sp: &SolitonParam, g: &Grid) -> Result<State> {
    sp.validate()?;
    let b = 1.0 / (p - 1.0);
    let a = 2.0 * b;
    let (d, nu) = (sp.d, sp.nu);
    let k0 = kappa0(p);
    let m = 1.0 - d * d;
    let mb = m.powf(b);
    let mb1 = m.powf(b - 1.0);
    let mut q1 = Vec::with_capacity(g.n_nodes());
    let mut q2 = Vec::with_capacity(g.n_nodes());
    for &y in g.nodes() {
        let u = 1.0 + d * y + nu;
        q1.push(k0 * (-2.0 * d * b * mb1 * u.powf(-a) - a * y * mb * u.powf(-a - 1.0)));
        q2.push(
            -a * k0
                * nu
                * (-2.0 * d * b * mb1 * u.powf(-a - 1.0) - (a + 1.0) * y * mb * u.powf(-a - 2.0)),
        );
    }
    Ok(State::new(Field::new(q1), Field::new(q2)))
}

/// `∂_ν (κ₁*, κ₂*)`.
pub fn d_kappa_star_dnu(p: f64, sp: &SolitonParam, g: &Grid) -> Result<State> {
    sp.validate()?;
    let b = 1.0 / (p - 1.0);
    let a = 2.0 * b;
    let (d, nu) = (sp.d, sp.nu);
    let c = kappa0(p) * (1.0 - d * d).powf(b);
    let mut q1 = Vec::with_capacity(g.n_nodes());
    let mut q2 = Vec::with_capacity(g.n_nodes());
    for &y in g.nodes() {
        let u = 1.0 + d * y + nu;
        q1.push(-a * c * u.powf(-a - 1.0));
        q2.push(-a * c * (u.powf(-a - 1.0) - (a + 1.0) * nu * u.powf(-a - 2.0)));
    }
    Ok(State::new(Field::new(q1), Field::new(q2)))
}

/// Dual pair `W₀, W₁` for the directions `F₀` (null) and `F₁` (unstable).
///
/// `W_l` is stored already multiplied by its scale so that
/// `project(l, F_m) = δ_lm`.
///
/// Projections are not taken as `φ(W_l, r)` with nodal quadrature: since
/// `(-𝓛 + 1)W_{l,1} = g_l`, one has `φ(W_l, r) = ∫(g_l r₁ + W_{l,2} r₂)ρ`,
/// and `g₀ρ` behaves like `(1-y²)^{2/(p-1)-1}` at the ends. That term is
/// integrated with a companion Gauss–Jacobi rule of the lower exponent
/// applied to the interpolant of `r₁`. The result is a covector acting on
/// nodal values.
#[derive(Debug, Clone)]
pub struct ProjectorBasis {
    pub d: f64,
    pub w0: State,
    pub w1: State,
    pub f0: State,
    pub f1: State,
    /// Multipliers applied to the raw `W_l` built with `c₀ = c₁(d) = 1`.
    pub scale: [f64; 2],
    /// `Π_l(r) = dual[l].w1 · r₁ + dual[l].w2 · r₂`
    pub dual: [State; 2],
}

/// Right-hand side of the Helmholtz problem defining `W_{l,1}`.
fn w1_rhs(g: &Grid, l: f64, w2: &Field, dw2: &Field) -> Field {
    let (smooth, singular) = rhs_coefficients(g.p(), l);
    let v: Vec<f64> = g
        .nodes()
        .iter()
        .enumerate()
        .map(|(j, &y)| smooth * w2[j] - 2.0 * y * dw2[j] + singular * w2[j] / (1.0 - y * y))
        .collect();
    Field::new(v)
}

fn rhs_coefficients(p: f64, l: f64) -> (f64, f64) {
    (l - (p + 3.0) / (p - 1.0), 8.0 / (p - 1.0))
}

/// Covector `(v₁, v₂)` with `v₁·r₁ + v₂·r₂ = ∫(g_l r₁ + W_{l,2} r₂)ρ` for
/// unit constants.
fn dual_covector(g: &Grid, d: f64, l: usize, w2: &Field, dw2: &Field) -> State {
    let p = g.p();
    let (smooth, singular) = rhs_coefficients(p, l as f64);
    let wq = g.quad_weights();
    let mut v1: Vec<f64> = g
        .nodes()
        .iter()
        .enumerate()
        .map(|(j, &y)| wq[j] * (smooth * w2[j] - 2.0 * y * dw2[j]))
        .collect();
    let v2: Vec<f64> = (0..g.n_nodes()).map(|j| wq[j] * w2[j]).collect();

    let n = g.n_nodes();
    let aux = g.singular_rule();
    for (k, &z) in aux.nodes.iter().enumerate() {
        let c = aux.weights[k] * singular * w2_closed(p, d, l, z).0;
        for (vj, lj) in v1.iter_mut().zip(&aux.interp[k * n..(k + 1) * n]) {
            *vj += c * lj;
        }
    }
    State::new(Field::new(v1), Field::new(v2))
}

pub(crate) fn apply_covector(c: &State, r: &State) -> f64 {
    let a: f64 =
        c.w1.values()
            .iter()
            .zip(r.w1.values())
            .map(|(x, y)| x * y)
            .sum();
    let b: f64 =
        c.w2.values()
            .iter()
            .zip(r.w2.values())
            .map(|(x, y)| x * y)
            .sum();
    a + b
}

/// `W_{l,2}` closed forms with unit constants, together with `∂_y` (exact).
fn w2_closed(p: f64, d: f64, l: usize, y: f64) -> (f64, f64) {
    let b = 1.0 / (p - 1.0);
    let a = 2.0 * b;
    let c = (1.0 - d * d).powf(b);
    let u = 1.0 + d * y;
    if l == 1 {
        let v = c * (1.0 - y * y) * u.powf(-a - 1.0);
        let dv =
            c * (-2.0 * y * u.powf(-a - 1.0) - (a + 1.0) * d * (1.0 - y * y) * u.powf(-a - 2.0));
        (v, dv)
    } else {
        let v = c * (y + d) * u.powf(-a - 1.0);
        let dv = c * (u.powf(-a - 1.0) - (a + 1.0) * d * (y + d) * u.powf(-a - 2.0));
        (v, dv)
    }
}

/// `F₀(d)` and `F₁(d)`.
pub fn f_directions(p: f64, d: f64, g: &Grid) -> Result<(State, State)> {
    check_d(d)?;
    let b = 1.0 / (p - 1.0);
    let a = 2.0 * b;
    let c0 = (1.0 - d * d).powf(b);
    let c1 = (1.0 - d * d).powf(p * b);
    let f0 = Field::from_fn(g, |y| c0 * (y + d) * (1.0 + d * y).powf(-a - 1.0));
    let f1 = Field::from_fn(g, |y| c1 * (1.0 + d * y).powf(-a - 1.0));
    let n = g.n_nodes();
    Ok((State::new(f0, Field::zeros(n)), State::new(f1.clone(), f1)))
}

pub fn projector_basis(p: f64, d: f64, g: &Grid) -> Result<ProjectorBasis> {
    check_d(d)?;
    if (g.p() - p).abs() > 0.0 {
        return Err(Error::InvalidParameter(format!(
            "grid built for p = {}, asked for p = {p}",
            g.p()
        )));
    }
    let (f0, f1) = f_directions(p, d, g)?;
    let raw = |l: usize| -> Result<(State, State)> {
        let mut w2 = Vec::with_capacity(g.n_nodes());
        let mut dw2 = Vec::with_capacity(g.n_nodes());
        for &y in g.nodes() {
            let (v, dv) = w2_closed(p, d, l, y);
            w2.push(v);
            dw2.push(dv);
        }
        let w2 = Field::new(w2);
        let dw2 = Field::new(dw2);
        let rhs = w1_rhs(g, l as f64, &w2, &dw2);
        let w1 = g.solve_helmholtz(&rhs)?;
        let dual = dual_covector(g, d, l, &w2, &dw2);
        Ok((State::new(w1, w2), dual))
    };
    let (w0, c0) = raw(0)?;
    let (w1, c1) = raw(1)?;
    let n0 = apply_covector(&c0, &f0);
    let n1 = apply_covector(&c1, &f1);
    if n0.abs() < 1e-300 || n1.abs() < 1e-300 || !n0.is_finite() || !n1.is_finite() {
        return Err(Error::Singular(format!(
            "projector normalization degenerate at d = {d}"
        )));
    }
    let scale = [1.0 / n0, 1.0 / n1];
    Ok(ProjectorBasis {
        d,
        w0: w0.scaled(scale[0]),
        w1: w1.scaled(scale[1]),
        f0,
        f1,
        scale,
        dual: [c0.scaled(scale[0]), c1.scaled(scale[1])],
    })
}

impl ProjectorBasis {
    pub fn w(&self, l: usize) -> &State {
        if l == 0 {
            &self.w0
        } else {
            &self.w1
        }
    }

    pub fn f(&self, l: usize) -> &State {
        if l == 0 {
            &self.f0
        } else {
            &self.f1
        }
    }
}

/// `Π_l^d(r)`.
pub fn project(basis: &ProjectorBasis, l: usize, r: &State) -> f64 {
    apply_covector(&basis.dual[l], r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;

    #[test]
    fn kappa0_p3() {
        assert!((kappa0(3.0) - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn kappa_at_minus_d() {
        for &(p, d) in &[(3.0f64, 0.4f64), (2.0, -0.7), (5.0, 0.95)] {
            let v = kappa_at(p, d, -d);
            let want = kappa0(p) * (1.0 - d * d).powf(-1.0 / (p - 1.0));
            assert!((v - want).abs() < 1e-12 * want);
        }
    }

    #[test]
    fn stationarity() {
        let g = make_grid(64, 3.0).unwrap();
        for &d in &[0.0, 0.3, 0.5] {
            let k = kappa(3.0, d, &g).unwrap();
            let lk = g.apply_l(&k);
            let res = (0..64)
                .map(|j| (lk[j] - 2.0 * k[j] + k[j].powi(3)).abs())
                .fold(0.0, f64::max);
            assert!(res < 1e-6, "d = {d}: {res}");
            assert!((stationary_residual(3.0, d, &g).unwrap() - res).abs() < 1e-14);
        }
        for p in [2.0, 5.0] {
            let g = make_grid(64, p).unwrap();
            assert!(stationary_residual(p, 0.3, &g).unwrap() < 1e-6);
        }
    }

    #[test]
    fn kappa_star_at_nu_zero() {
        let g = make_grid(32, 3.0).unwrap();
        let sp = SolitonParam::new(0.4, 0.0, 1.0).unwrap();
        let ks = kappa_star(3.0, &sp, &g).unwrap();
        assert_eq!(ks.w1, kappa(3.0, 0.4, &g).unwrap());
        assert!(ks.w2.max_abs() == 0.0);
    }

    #[test]
    fn lambda_identity() {
        for &p in &[2.0f64, 3.0, 5.0] {
            for &(d, nu) in &[(0.3f64, 0.1f64), (-0.8, 0.5), (0.9, -0.05)] {
                let b = 1.0 / (p - 1.0);
                let lam = (1.0 - d * d).powf(b) / ((1.0 + nu) * (1.0 + nu) - d * d).powf(b);
                let ds = d / (1.0 + nu);
                for i in 0..21 {
                    let y = -0.99 + 0.099 * i as f64;
                    let lhs = kappa_star_at(p, d, nu, y).0;
                    let rhs = lam * kappa_at(p, ds, y);
                    assert!((lhs - rhs).abs() <= 1e-13 * lhs.abs());
                }
            }
        }
    }

    #[test]
    fn rejects_invalid() {
        assert!(SolitonParam::new(1.0, 0.0, 1.0).is_err());
        assert!(SolitonParam::new(0.5, -0.5, 1.0).is_err());
        assert!(SolitonParam::new(0.5, 0.0, 0.5).is_err());
        let g = make_grid(16, 3.0).unwrap();
        assert!(kappa(3.0, -1.0, &g).is_err());
        assert!(projector_basis(3.0, 1.2, &g).is_err());
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let g = make_grid(32, 3.0).unwrap();
        let h = 1e-6;
        for &d in &[-0.5, 0.0, 0.5] {
            for &nu in &[-0.1, 0.0, 0.1] {
                let sp = SolitonParam::new(d, nu, 1.0).unwrap();
                let dd = d_kappa_star_dd(3.0, &sp, &g).unwrap();
                let dn = d_kappa_star_dnu(3.0, &sp, &g).unwrap();
                let ks = |d, nu| kappa_star(3.0, &SolitonParam { d, nu, sign: 1.0 }, &g).unwrap();
                let fd_d = (&ks(d + h, nu) - &ks(d - h, nu)).scaled(0.5 / h);
                let fd_n = (&ks(d, nu + h) - &ks(d, nu - h)).scaled(0.5 / h);
                for (an, fd) in [(&dd, &fd_d), (&dn, &fd_n)] {
                    let scale = an.w1.max_abs().max(an.w2.max_abs()).max(1.0);
                    let err = (an - fd).w1.max_abs().max((an - fd).w2.max_abs());
                    assert!(err < 1e-5 * scale, "d={d} nu={nu} err={err}");
                }
            }
        }
    }

    #[test]
    fn w_at_zero_shapes() {
        let g = make_grid(24, 3.0).unwrap();
        let b = projector_basis(3.0, 0.0, &g).unwrap();
        for (j, &y) in g.nodes().iter().enumerate() {
            assert!((b.w0.w2[j] / b.scale[0] - y).abs() < 1e-14);
            assert!((b.w1.w2[j] / b.scale[1] - (1.0 - y * y)).abs() < 1e-14);
            // smooth closed form of W_{1,1} at d = 0, p = 3
            assert!((b.w1.w1[j] / b.scale[1] - (6.0 * y * y + 34.0) / 11.0).abs() < 1e-11);
        }
    }

    #[test]
    fn duality() {
        for &n in &[64usize, 96] {
            let g = make_grid(n, 3.0).unwrap();
            for &d in &[0.0, 0.5, -0.5] {
                let b = projector_basis(3.0, d, &g).unwrap();
                for l in 0..2 {
                    for m in 0..2 {
                        let v = project(&b, l, b.f(m));
                        let want = if l == m { 1.0 } else { 0.0 };
                        assert!((v - want).abs() < 1e-8, "n={n} d={d} l={l} m={m}: {v}");
                    }
                }
            }
        }
    }

    #[test]
    fn unstable_projector_matches_phi() {
        let g = make_grid(40, 3.0).unwrap();
        let b = projector_basis(3.0, 0.3, &g).unwrap();
        let r = State::new(
            Field::from_fn(&g, |y| (y + 0.2).cos()),
            Field::from_fn(&g, |y| y * y),
        );
        assert!((project(&b, 1, &r) - g.inner_phi0(&b.w1, &r)).abs() < 1e-12);
    }

    #[test]
    fn f0_is_d_derivative_of_kappa() {
        let g = make_grid(48, 3.0).unwrap();
        for &d in &[-0.6, 0.0, 0.3, 0.9] {
            let sp = SolitonParam::new(d, 0.0, 1.0).unwrap();
            let dk = d_kappa_star_dd(3.0, &sp, &g).unwrap();
            let (f0, _) = f_directions(3.0, d, &g).unwrap();
            let c = g.inner_phi0(&dk, &f0) / (g.norm_h(&dk) * g.norm_h(&f0));
            assert!(c.abs() > 1.0 - 1e-10, "{c}");
        }
    }
}
