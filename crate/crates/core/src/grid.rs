//! Weighted spectral discretisation of `(-1, 1)`.
//!
//! Everything lives on the open Gauss–Jacobi nodes of the weight
//! `ρ(y) = (1 - y^2)^{2/(p-1)}`. A nodal vector is identified with its
//! interpolating polynomial of degree `n - 1`; on that space the quadrature,
//! the derivative, the operator `𝓛` and the `𝓗₀` Galerkin form are exact.

use std::ops::{Add, AddAssign, Index, Mul, Neg, Sub};
use std::sync::OnceLock;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::quadrature::{gauss_jacobi, jacobi_all};

pub const MIN_NODES: usize = 8;

/// Dense row-major square matrix used on the hot paths.
#[derive(Debug, Clone)]
pub(crate) struct Dense {
    n: usize,
    data: Vec<f64>,
}

impl Dense {
    fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    #[inline]
    fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    #[inline]
    pub(crate) fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        for (row, o) in self.data.chunks_exact(self.n).zip(out.iter_mut()) {
            *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    pub(crate) fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.apply_into(x, &mut out);
        out
    }

    fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.n, &self.data)
    }
}

/// Nodal values of one scalar function on a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Field(Vec<f64>);

impl Field {
    pub fn new(values: Vec<f64>) -> Self {
        Field(values)
    }

    /// Like [`Field::new`] but rejects non-finite entries.
    pub fn try_new(values: Vec<f64>) -> Result<Self> {
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "non-finite value at node {bad}"
            )));
        }
        Ok(Field(values))
    }

    pub fn zeros(n: usize) -> Self {
        Field(vec![0.0; n])
    }

    pub fn constant(n: usize, c: f64) -> Self {
        Field(vec![c; n])
    }

    /// Samples `f` at the grid nodes.
    pub fn from_fn(grid: &Grid, f: impl Fn(f64) -> f64) -> Self {
        Field(grid.nodes.iter().map(|&y| f(y)).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field(self.0.iter().map(|&v| f(v)).collect())
    }

    /// Pointwise combination with another field of the same length.
    pub fn zip_map(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Field {
        Field(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    /// `self += alpha * x`
    pub fn axpy(&mut self, alpha: f64, x: &Field) {
        for (a, b) in self.0.iter_mut().zip(&x.0) {
            *a += alpha * b;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl Index<usize> for Field {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl Add for &Field {
    type Output = Field;
    fn add(self, rhs: &Field) -> Field {
        self.zip_map(rhs, |a, b| a + b)
    }
}

impl Sub for &Field {
    type Output = Field;
    fn sub(self, rhs: &Field) -> Field {
        self.zip_map(rhs, |a, b| a - b)
    }
}

impl Mul<&Field> for f64 {
    type Output = Field;
    fn mul(self, rhs: &Field) -> Field {
        rhs.map(|v| self * v)
    }
}

impl AddAssign<&Field> for Field {
    fn add_assign(&mut self, rhs: &Field) {
        self.axpy(1.0, rhs);
    }
}

/// The pair `(w, ∂ₛw)`, or any element `(q₁, q₂)` of `𝓗`.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub w1: Field,
    pub w2: Field,
}

impl State {
    pub fn new(w1: Field, w2: Field) -> Self {
        debug_assert_eq!(w1.len(), w2.len());
        State { w1, w2 }
    }

    pub fn zeros(n: usize) -> Self {
        State {
            w1: Field::zeros(n),
            w2: Field::zeros(n),
        }
    }

    pub fn len(&self) -> usize {
        self.w1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w1.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.w1.is_finite() && self.w2.is_finite()
    }

    pub fn axpy(&mut self, alpha: f64, x: &State) {
        self.w1.axpy(alpha, &x.w1);
        self.w2.axpy(alpha, &x.w2);
    }

    pub fn scaled(&self, alpha: f64) -> State {
        State {
            w1: alpha * &self.w1,
            w2: alpha * &self.w2,
        }
    }
}

impl Add for &State {
    type Output = State;
    fn add(self, rhs: &State) -> State {
        State {
            w1: &self.w1 + &rhs.w1,
            w2: &self.w2 + &rhs.w2,
        }
    }
}

impl Sub for &State {
    type Output = State;
    fn sub(self, rhs: &State) -> State {
        State {
            w1: &self.w1 - &rhs.w1,
            w2: &self.w2 - &rhs.w2,
        }
    }
}

impl Neg for &State {
    type Output = State;
    fn neg(self) -> State {
        self.scaled(-1.0)
    }
}

impl Mul<&State> for f64 {
    type Output = State;
    fn mul(self, rhs: &State) -> State {
        rhs.scaled(self)
    }
}

impl AddAssign<&State> for State {
    fn add_assign(&mut self, rhs: &State) {
        self.axpy(1.0, rhs);
    }
}

/// Gauss–Jacobi grid with its differentiation, `𝓛` and Helmholtz operators.
#[derive(Debug, Clone)]
pub struct Grid {
    n: usize,
    p: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    /// barycentric interpolation weights `1/P_n'(y_j)`
    bary: Vec<f64>,
    diff: Dense,
    diff2: Dense,
    lop: Dense,
    /// `modal[j][m]`: orthonormal Jacobi polynomial `m` at node `j`
    modal: Dense,
    helmholtz: Cholesky<f64, Dyn>,
    singular: OnceLock<SingularRule>,
}

/// Gauss–Jacobi rule for `(1-y²)^{a-1}` with `2n` nodes, plus the matrix
/// interpolating nodal values onto it. Integrates `r/(1-y²)` against `ρ`
/// for polynomial `r` times smooth factors.
#[derive(Debug, Clone)]
pub(crate) struct SingularRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    /// row-major `2n × n`
    pub interp: Vec<f64>,
}

/// Builds the `n`-node grid for the exponent `p`.
pub fn make_grid(n: usize, p: f64) -> Result<Grid> {
    Grid::new(n, p)
}

impl Grid {
    pub fn new(n: usize, p: f64) -> Result<Self> {
        if n < MIN_NODES {
            return Err(Error::InvalidGrid(format!(
                "need at least {MIN_NODES} nodes, got {n}"
            )));
        }
        if !(p.is_finite() && p > 1.0) {
            return Err(Error::InvalidGrid(format!("exponent p = {p} must be > 1")));
        }
        let a = 2.0 / (p - 1.0);
        let rule = gauss_jacobi(n, a)?;
        let nodes = rule.nodes;
        let weights = rule.weights;

        // barycentric weights are 1/P_n'(y_j) up to a common factor
        let mut diff = Dense::zeros(n);
        for i in 0..n {
            let mut diag = 0.0;
            for j in 0..n {
                if i != j {
                    let v = rule.dpn[i] / (rule.dpn[j] * (nodes[i] - nodes[j]));
                    diff.set(i, j, v);
                    diag -= v;
                }
            }
            diff.set(i, i, diag);
        }
        let mut diff2 = Dense::zeros(n);
        for i in 0..n {
            let mut diag = 0.0;
            for j in 0..n {
                if i != j {
                    let v = 2.0 * diff.get(i, j) * (diff.get(i, i) - 1.0 / (nodes[i] - nodes[j]));
                    diff2.set(i, j, v);
                    diag -= v;
                }
            }
            diff2.set(i, i, diag);
        }
        let mut lop = Dense::zeros(n);
        for i in 0..n {
            let y = nodes[i];
            for j in 0..n {
                let v = (1.0 - y * y) * diff2.get(i, j) - (2.0 + 2.0 * a) * y * diff.get(i, j);
                lop.set(i, j, v);
            }
        }

        let mut modal = Dense::zeros(n);
        let polys: Vec<Vec<f64>> = nodes.iter().map(|&y| jacobi_all(n - 1, a, y)).collect();
        for m in 0..n {
            let norm2: f64 = polys
                .iter()
                .zip(&weights)
                .map(|(pv, w)| w * pv[m] * pv[m])
                .sum();
            let inv = 1.0 / norm2.sqrt();
            for j in 0..n {
                modal.set(j, m, polys[j][m] * inv);
            }
        }

        // Galerkin matrix of -𝓛 + 1 in the nodal basis: Dᵀ W (1-y²) D + W
        let d = diff.to_nalgebra();
        let stiff_w = DVector::from_iterator(
            n,
            nodes.iter().zip(&weights).map(|(y, w)| w * (1.0 - y * y)),
        );
        let mut a_mat = d.transpose() * DMatrix::from_diagonal(&stiff_w) * &d;
        for j in 0..n {
            a_mat[(j, j)] += weights[j];
        }
        let a_mat = 0.5 * (&a_mat + a_mat.transpose());
        let helmholtz = Cholesky::new(a_mat)
            .ok_or_else(|| Error::Singular("Helmholtz Galerkin matrix".into()))?;

        let bary = rule.dpn.iter().map(|d| 1.0 / d).collect();
        Ok(Grid {
            n,
            p,
            nodes,
            weights,
            bary,
            diff,
            diff2,
            lop,
            modal,
            helmholtz,
            singular: OnceLock::new(),
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    /// Exponent of the weight, `2/(p-1)`.
    pub fn weight_exponent(&self) -> f64 {
        2.0 / (self.p - 1.0)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn quad_weights(&self) -> &[f64] {
        &self.weights
    }

    fn check(&self, f: &Field) -> Result<()> {
        if f.len() != self.n {
            return Err(Error::ShapeMismatch {
                expected: self.n,
                got: f.len(),
            });
        }
        Ok(())
    }

    /// `∫ f ρ dy` by quadrature.
    pub fn integrate(&self, f: &Field) -> f64 {
        f.values()
            .iter()
            .zip(&self.weights)
            .map(|(v, w)| v * w)
            .sum()
    }

    /// `⟨f, g⟩_ρ = ∫ f g ρ dy`.
    pub fn dot(&self, f: &Field, g: &Field) -> f64 {
        f.values()
            .iter()
            .zip(g.values())
            .zip(&self.weights)
            .map(|((a, b), w)| a * b * w)
            .sum()
    }

    pub fn differentiate(&self, f: &Field) -> Field {
        Field(self.diff.apply(f.values()))
    }

    pub(crate) fn differentiate_into(&self, f: &[f64], out: &mut [f64]) {
        self.diff.apply_into(f, out);
    }

    pub fn second_derivative(&self, f: &Field) -> Field {
        Field(self.diff2.apply(f.values()))
    }

    /// `𝓛f = (1/ρ)∂_y(ρ(1-y²)∂_y f)` in the expanded form
    /// `(1-y²)f'' - (2 + 4/(p-1)) y f'`.
    pub fn apply_l(&self, f: &Field) -> Field {
        Field(self.lop.apply(f.values()))
    }

    pub(crate) fn apply_l_into(&self, f: &[f64], out: &mut [f64]) {
        self.lop.apply_into(f, out);
    }

    /// Galerkin solution of `-𝓛r + r = rhs` in the discrete `𝓗₀`.
    pub fn solve_helmholtz(&self, rhs: &Field) -> Result<Field> {
        self.check(rhs)?;
        let b = DVector::from_iterator(
            self.n,
            rhs.values().iter().zip(&self.weights).map(|(r, w)| r * w),
        );
        let x = self.helmholtz.solve(&b);
        Field::try_new(x.iter().copied().collect())
            .map_err(|_| Error::Singular("Helmholtz solve produced non-finite values".into()))
    }

    /// Residual of the weak Helmholtz equation, measured in the dual
    /// discrete `𝓗₀` norm.
    pub fn helmholtz_residual(&self, r: &Field, rhs: &Field) -> f64 {
        let n = self.n;
        let l = self.helmholtz.l();
        let a = &l * l.transpose();
        let x = DVector::from_column_slice(r.values());
        let b = DVector::from_iterator(
            n,
            rhs.values().iter().zip(&self.weights).map(|(v, w)| v * w),
        );
        let res = &a * &x - b;
        // ‖res‖_{A^{-1}} = sqrt(resᵀ A^{-1} res)
        let z = self.helmholtz.solve(&res);
        res.dot(&z).max(0.0).sqrt()
    }

    pub fn norm_h0(&self, f: &Field) -> f64 {
        self.inner_h0(f, f).max(0.0).sqrt()
    }

    pub(crate) fn inner_h0(&self, f: &Field, g: &Field) -> f64 {
        let df = self.differentiate(f);
        let dg = self.differentiate(g);
        let mut acc = 0.0;
        for j in 0..self.n {
            let y = self.nodes[j];
            acc += self.weights[j] * (f[j] * g[j] + df[j] * dg[j] * (1.0 - y * y));
        }
        acc
    }

    pub fn norm_h(&self, s: &State) -> f64 {
        self.inner_phi0(s, s).max(0.0).sqrt()
    }

    /// `φ(q, r) = ∫ (q₁r₁ + q₁'r₁'(1-y²) + q₂r₂) ρ dy`.
    pub fn inner_phi0(&self, q: &State, r: &State) -> f64 {
        self.inner_h0(&q.w1, &r.w1) + self.dot(&q.w2, &r.w2)
    }

    /// Coefficients in the `ρ`-orthonormal Jacobi basis.
    pub fn to_modal(&self, f: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut c = vec![0.0; n];
        for j in 0..n {
            let wf = self.weights[j] * f[j];
            let row = &self.modal.data[j * n..(j + 1) * n];
            for (cm, v) in c.iter_mut().zip(row) {
                *cm += wf * v;
            }
        }
        c
    }

    /// Largest modal coefficient among the top fifth of modes, relative to
    /// the largest overall. A resolution indicator.
    pub fn modal_tail(&self, f: &Field) -> f64 {
        let c = self.to_modal(f.values());
        let big = c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if big == 0.0 {
            return 0.0;
        }
        let top = c[self.n - self.n / 5..]
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        top / big
    }

    pub fn from_modal(&self, c: &[f64]) -> Vec<f64> {
        self.modal.apply(c)
    }

    pub(crate) fn singular_rule(&self) -> &SingularRule {
        self.singular.get_or_init(|| {
            let rule =
                gauss_jacobi(2 * self.n, self.weight_exponent() - 1.0).expect("valid exponent");
            let interp = self.interpolation_matrix(&rule.nodes);
            SingularRule {
                nodes: rule.nodes,
                weights: rule.weights,
                interp,
            }
        })
    }

    /// Nodal matrix of the modal multiplier `c_m ↦ sigma[m] c_m`.
    pub(crate) fn modal_multiplier(&self, sigma: &[f64]) -> Dense {
        let n = self.n;
        let mut out = Dense::zeros(n);
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for (m, sg) in sigma.iter().enumerate() {
                    acc += self.modal.get(i, m) * sg * self.modal.get(j, m);
                }
                out.set(i, j, acc * self.weights[j]);
            }
        }
        out
    }

    /// Row-major `z.len() × n` matrix evaluating the nodal interpolant at `z`.
    pub fn interpolation_matrix(&self, z: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![0.0; z.len() * n];
        for (k, &x) in z.iter().enumerate() {
            let row = &mut out[k * n..(k + 1) * n];
            if let Some(j) = self.nodes.iter().position(|&y| y == x) {
                row[j] = 1.0;
                continue;
            }
            let mut total = 0.0;
            for j in 0..n {
                let t = self.bary[j] / (x - self.nodes[j]);
                row[j] = t;
                total += t;
            }
            row.iter_mut().for_each(|v| *v /= total);
        }
        out
    }

    /// Evaluates the nodal interpolant of `f` at `x`.
    pub fn interpolate(&self, f: &Field, x: f64) -> f64 {
        self.interpolation_matrix(&[x])
            .iter()
            .zip(f.values())
            .map(|(a, b)| a * b)
            .sum()
    }
}

pub fn differentiate(g: &Grid, f: &Field) -> Field {
    g.differentiate(f)
}

pub fn apply_l(g: &Grid, f: &Field) -> Field {
    g.apply_l(f)
}

pub fn solve_helmholtz(g: &Grid, rhs: &Field) -> Result<Field> {
    g.solve_helmholtz(rhs)
}

pub fn norm_h(g: &Grid, s: &State) -> f64 {
    g.norm_h(s)
}

pub fn norm_h0(g: &Grid, f: &Field) -> f64 {
    g.norm_h0(f)
}

pub fn inner_phi0(g: &Grid, q: &State, r: &State) -> f64 {
    g.inner_phi0(q, r)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize, p: f64) -> Grid {
        make_grid(n, p).unwrap()
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(make_grid(7, 3.0), Err(Error::InvalidGrid(_))));
        assert!(matches!(make_grid(16, 1.0), Err(Error::InvalidGrid(_))));
        assert!(matches!(make_grid(16, 0.5), Err(Error::InvalidGrid(_))));
    }

    #[test]
    fn weight_integrals() {
        let g = grid(32, 3.0);
        assert!((g.integrate(&Field::constant(32, 1.0)) - 4.0 / 3.0).abs() < 1e-12);
        assert!(g.integrate(&Field::from_fn(&g, |y| y)).abs() < 1e-14);
        // ∫(1-y²)² dy = 16/15 from the antiderivative y - 2y³/3 + y⁵/5
        let g = grid(48, 2.0);
        assert!((g.integrate(&Field::constant(48, 1.0)) - 16.0 / 15.0).abs() < 1e-12);
    }

    #[test]
    fn nodes_open_and_increasing() {
        let g = grid(40, 2.5);
        assert!(g.nodes().windows(2).all(|w| w[0] < w[1]));
        assert!(g.nodes().iter().all(|y| y.abs() < 1.0));
        assert!(g.quad_weights().iter().all(|&w| w > 0.0));
    }

    #[test]
    fn derivative_of_constant_and_square() {
        let g = grid(32, 3.0);
        assert!(g.differentiate(&Field::constant(32, 2.5)).max_abs() < 1e-12);
        let d = g.differentiate(&Field::from_fn(&g, |y| y * y));
        for (j, &y) in g.nodes().iter().enumerate() {
            assert!((d[j] - 2.0 * y).abs() < 1e-10);
        }
    }

    #[test]
    fn derivative_of_sine_converges() {
        let err = |n: usize| {
            let g = grid(n, 3.0);
            let d = g.differentiate(&Field::from_fn(&g, |y| (3.0 * y).sin()));
            g.nodes()
                .iter()
                .enumerate()
                .map(|(j, &y)| (d[j] - 3.0 * (3.0 * y).cos()).abs())
                .fold(0.0, f64::max)
        };
        let (e24, e48) = (err(24), err(48));
        assert!(e24 < 1e-8, "{e24}");
        assert!(e48 < 1e-11, "{e48}");
    }

    #[test]
    fn l_of_y() {
        // 𝓛y = -(2 + 4/(p-1)) y; for p = 3 that is -4y
        let g = grid(24, 3.0);
        let ly = g.apply_l(&Field::from_fn(&g, |y| y));
        for (j, &y) in g.nodes().iter().enumerate() {
            assert!((ly[j] + 4.0 * y).abs() < 1e-11);
        }
        assert!(g.apply_l(&Field::constant(24, 1.3)).max_abs() < 1e-10);
    }

    #[test]
    fn helmholtz_constant_rhs() {
        let g = grid(32, 3.0);
        let r = g.solve_helmholtz(&Field::constant(32, 0.7)).unwrap();
        assert!(r.values().iter().all(|v| (v - 0.7).abs() < 1e-11));
        assert!(g.helmholtz_residual(&r, &Field::constant(32, 0.7)) < 1e-9);
    }

    #[test]
    fn helmholtz_polynomial() {
        // (-𝓛 + 1)(6y² + 34)/11 = 2 + 6y² for p = 3
        let g = grid(16, 3.0);
        let r = g
            .solve_helmholtz(&Field::from_fn(&g, |y| 2.0 + 6.0 * y * y))
            .unwrap();
        for (j, &y) in g.nodes().iter().enumerate() {
            assert!((r[j] - (6.0 * y * y + 34.0) / 11.0).abs() < 1e-12);
        }
    }

    #[test]
    fn h_norm_of_constant_state() {
        let g = grid(32, 3.0);
        let k0 = 2f64.sqrt();
        let s = State::new(Field::constant(32, k0), Field::zeros(32));
        assert!((g.norm_h(&s).powi(2) - 8.0 / 3.0).abs() < 1e-12);
        assert_eq!(g.norm_h(&State::zeros(32)), 0.0);
    }

    #[test]
    fn phi0_block_structure() {
        let g = grid(32, 3.0);
        let k0 = Field::constant(32, 2f64.sqrt());
        let a = State::new(k0.clone(), Field::zeros(32));
        let b = State::new(Field::zeros(32), k0);
        assert_eq!(g.inner_phi0(&a, &b), 0.0);
    }

    #[test]
    fn interpolation_reproduces_polynomials() {
        let g = grid(12, 3.0);
        let f = Field::from_fn(&g, |y| 1.0 - 2.0 * y + y.powi(7));
        for &x in &[-0.999, -0.3, 0.0, 0.5, 0.97, g.nodes()[3]] {
            assert!((g.interpolate(&f, x) - (1.0 - 2.0 * x + x.powi(7))).abs() < 1e-13);
        }
    }

    #[test]
    fn modal_round_trip() {
        let g = grid(20, 3.0);
        let f = Field::from_fn(&g, |y| (2.0 * y).exp());
        let back = g.from_modal(&g.to_modal(f.values()));
        for (a, b) in back.iter().zip(f.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn modal_tail_separates_smooth_from_sharp() {
        let g = grid(40, 3.0);
        assert!(g.modal_tail(&Field::from_fn(&g, |y| y * y)) < 1e-13);
        assert!(g.modal_tail(&Field::from_fn(&g, |y| 1.0 / (1.0 + 400.0 * y * y))) > 1e-3);
        assert_eq!(g.modal_tail(&Field::zeros(40)), 0.0);
    }
}
