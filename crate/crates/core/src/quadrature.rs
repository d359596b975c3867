//! Symmetric Gauss–Jacobi rules for the weight `(1 - y^2)^a` on `(-1, 1)`.
//!
//! Nodes start from the Golub–Welsch eigenvalues of the Jacobi matrix and are
//! polished by Newton iteration on `P_n^{(a,a)}`; weights follow from the
//! derivative at the nodes and are normalised to the exact total mass.

use nalgebra::{DMatrix, SymmetricEigen};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};

/// Nodes, weights and `P_n'(y_j)` of an `n`-point rule.
#[derive(Debug, Clone)]
pub struct GaussJacobi {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub(crate) dpn: Vec<f64>,
}

/// Exact `∫ (1 - y^2)^a dy` over `(-1, 1)`.
pub fn total_mass(a: f64) -> f64 {
    2f64.powf(2.0 * a + 1.0) * gamma(a + 1.0).powi(2) / gamma(2.0 * a + 2.0)
}

/// Evaluates the Jacobi polynomials `P_0..=P_m` (parameters `a, a`) at `x`.
pub fn jacobi_all(m: usize, a: f64, x: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(m + 1);
    out.push(1.0);
    if m == 0 {
        return out;
    }
    out.push((a + 1.0) * x);
    for j in 2..=m {
        let jf = j as f64;
        let c = 2.0 * jf + 2.0 * a;
        let lhs = 2.0 * jf * (jf + 2.0 * a) * (c - 2.0);
        let b1 = (c - 1.0) * c * (c - 2.0);
        let b2 = 2.0 * (jf + a - 1.0).powi(2) * c;
        let next = (b1 * x * out[j - 1] - b2 * out[j - 2]) / lhs;
        out.push(next);
    }
    out
}

/// `(P_n(x), P_n'(x))` for parameters `(a, a)`.
pub fn jacobi_with_derivative(n: usize, a: f64, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let (mut p0, mut d0) = (1.0, 0.0);
    let (mut p1, mut d1) = ((a + 1.0) * x, a + 1.0);
    for j in 2..=n {
        let jf = j as f64;
        let c = 2.0 * jf + 2.0 * a;
        let lhs = 2.0 * jf * (jf + 2.0 * a) * (c - 2.0);
        let b1 = (c - 1.0) * c * (c - 2.0);
        let b2 = 2.0 * (jf + a - 1.0).powi(2) * c;
        let p2 = (b1 * x * p1 - b2 * p0) / lhs;
        let d2 = (b1 * (p1 + x * d1) - b2 * d0) / lhs;
        p0 = p1;
        d0 = d1;
        p1 = p2;
        d1 = d2;
    }
    (p1, d1)
}

/// Builds the `n`-point Gauss rule for the weight `(1 - y^2)^a`, `a > 0`.
pub fn gauss_jacobi(n: usize, a: f64) -> Result<GaussJacobi> {
    if n == 0 {
        return Err(Error::InvalidGrid("rule needs at least one node".into()));
    }
    if !(a.is_finite() && a > -1.0) {
        return Err(Error::InvalidGrid(format!(
            "weight exponent {a} must exceed -1"
        )));
    }
    let mut jac = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let kf = k as f64;
        let c = 2.0 * kf + 2.0 * a;
        let b = (kf * (kf + 2.0 * a) / ((c + 1.0) * (c - 1.0))).sqrt();
        jac[(k, k - 1)] = b;
        jac[(k - 1, k)] = b;
    }
    let mut nodes: Vec<f64> = SymmetricEigen::new(jac)
        .eigenvalues
        .iter()
        .copied()
        .collect();
    nodes.sort_by(|x, y| x.partial_cmp(y).expect("finite eigenvalues"));

    let mut dpn = vec![0.0; n];
    for (x, dp) in nodes.iter_mut().zip(dpn.iter_mut()) {
        for _ in 0..20 {
            let (pn, d) = jacobi_with_derivative(n, a, *x);
            let step = pn / d;
            *x -= step;
            if step.abs() <= 4.0 * f64::EPSILON * x.abs().max(1e-3) {
                break;
            }
        }
        *dp = jacobi_with_derivative(n, a, *x).1;
    }
    // exact symmetry
    for j in 0..n / 2 {
        let m = 0.5 * (nodes[n - 1 - j] - nodes[j]);
        nodes[j] = -m;
        nodes[n - 1 - j] = m;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    for (x, dp) in nodes.iter().zip(dpn.iter_mut()) {
        *dp = jacobi_with_derivative(n, a, *x).1;
    }

    let raw: Vec<f64> = nodes
        .iter()
        .zip(&dpn)
        .map(|(x, d)| 1.0 / ((1.0 - x * x) * d * d))
        .collect();
    let scale = total_mass(a) / raw.iter().sum::<f64>();
    let weights = raw.iter().map(|w| w * scale).collect();
    Ok(GaussJacobi {
        nodes,
        weights,
        dpn,
    })
}
