//! Potential-energy models with exact derivatives.
//!
//! Builtin families:
//!
//! ```text
//! quartic-double-well-1d     U(q) = (q² - 1)² / 4
//! separable-double-well-nd   U(q) = (q₁² - 1)² / 4 + Σ_{i≥2} ωᵢ² qᵢ² / 2
//! polynomial-custom          dense coefficients, total degree ≤ 6, d ≤ 3
//! ```
//!
//! Dense polynomial coefficients are ordered by total degree, and within a
//! degree lexicographically with the exponent of q₁ largest first, e.g. for
//! d = 2: `1, q₁, q₂, q₁², q₁q₂, q₂², q₁³, ...`.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{input, Error, Result};

pub const MAX_POLY_DEGREE: usize = 6;
pub const MAX_POLY_DIM: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    #[serde(rename = "quartic-double-well-1d")]
    QuarticDoubleWell1d,
    SeparableDoubleWellNd,
    PolynomialCustom,
}

/// A point x = (q, p) of phase space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseState {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
}

impl PhaseState {
    pub fn new(q: Vec<f64>, p: Vec<f64>) -> Result<Self> {
        if q.len() != p.len() {
            return Err(Error::Dimension {
                expected: q.len(),
                got: p.len(),
            });
        }
        Ok(Self { q, p })
    }

    pub fn at_rest(q: &[f64]) -> Self {
        Self {
            q: q.to_vec(),
            p: vec![0.0; q.len()],
        }
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    /// Flattened (q, p).
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.q.clone();
        v.extend_from_slice(&self.p);
        v
    }

    pub fn from_slice(x: &[f64]) -> Self {
        let d = x.len() / 2;
        Self {
            q: x[..d].to_vec(),
            p: x[d..].to_vec(),
        }
    }

    pub fn momentum_flipped(&self) -> Self {
        Self {
            q: self.q.clone(),
            p: self.p.iter().map(|v| -v).collect(),
        }
    }

    pub fn distance(&self, other: &PhaseState) -> f64 {
        self.q
            .iter()
            .zip(&other.q)
            .chain(self.p.iter().zip(&other.p))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Monomial {
    coef: f64,
    pow: [u8; MAX_POLY_DIM],
}

/// Sparse polynomial in up to three variables.
#[derive(Clone, Debug, PartialEq)]
struct Polynomial {
    terms: Vec<Monomial>,
}

impl Polynomial {
    fn derivative(&self, var: usize) -> Polynomial {
        let terms = self
            .terms
            .iter()
            .filter(|m| m.pow[var] > 0)
            .map(|m| {
                let mut pow = m.pow;
                pow[var] -= 1;
                Monomial {
                    coef: m.coef * f64::from(m.pow[var]),
                    pow,
                }
            })
            .collect();
        Polynomial { terms }
    }

    fn eval(&self, powers: &[[f64; MAX_POLY_DEGREE + 1]]) -> f64 {
        let mut acc = 0.0;
        for m in &self.terms {
            let mut t = m.coef;
            for (i, pw) in powers.iter().enumerate() {
                t *= pw[m.pow[i] as usize];
            }
            acc += t;
        }
        acc
    }
}

/// Exponent tuples of all monomials of total degree ≤ `degree` in dense order.
pub fn monomial_exponents(dim: usize, degree: usize) -> Vec<Vec<u8>> {
    fn fill(dim: usize, rest: u8, prefix: &mut Vec<u8>, out: &mut Vec<Vec<u8>>) {
        if prefix.len() + 1 == dim {
            prefix.push(rest);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for k in (0..=rest).rev() {
            prefix.push(k);
            fill(dim, rest - k, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    for deg in 0..=degree as u8 {
        fill(dim, deg, &mut Vec::with_capacity(dim), &mut out);
    }
    out
}

#[derive(Clone, Debug)]
struct PolyDerivatives {
    value: Polynomial,
    grad: Vec<Polynomial>,
    hess: Vec<Vec<Polynomial>>,
    lap: Polynomial,
}

#[derive(Clone, Debug)]
pub struct PotentialModel {
    dim: usize,
    family: Family,
    parameters: Vec<f64>,
    offset: f64,
    poly: Option<PolyDerivatives>,
}

impl PartialEq for PotentialModel {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.family == other.family
            && self.parameters == other.parameters
            && self.offset.to_bits() == other.offset.to_bits()
    }
}

impl PotentialModel {
    /// Validating constructor used by configuration front ends.
    pub fn new(family: Family, dim: usize, parameters: Vec<f64>, offset: f64) -> Result<Self> {
        if dim == 0 {
            return input("dimension must be positive");
        }
        if !offset.is_finite() || parameters.iter().any(|v| !v.is_finite()) {
            return input("parameters and offset must be finite");
        }
        let poly = match family {
            Family::QuarticDoubleWell1d => {
                if dim != 1 || !parameters.is_empty() {
                    return input("quartic-double-well-1d takes d = 1 and no parameters");
                }
                None
            }
            Family::SeparableDoubleWellNd => {
                if parameters.len() + 1 != dim {
                    return input(format!(
                        "separable-double-well-nd with d = {dim} needs {} stiffness values, got {}",
                        dim - 1,
                        parameters.len()
                    ));
                }
                if parameters.iter().any(|&w| w <= 0.0) {
                    return input("transverse stiffnesses must be positive");
                }
                None
            }
            Family::PolynomialCustom => Some(build_polynomial(dim, &parameters)?),
        };
        Ok(Self {
            dim,
            family,
            parameters,
            offset,
            poly,
        })
    }

    pub fn quartic_1d() -> Self {
        Self::new(Family::QuarticDoubleWell1d, 1, Vec::new(), 0.0).expect("builtin model")
    }

    /// d = 1 + omega2.len()
    pub fn separable(omega2: &[f64]) -> Result<Self> {
        Self::new(Family::SeparableDoubleWellNd, omega2.len() + 1, omega2.to_vec(), 0.0)
    }

    /// Polynomial from sparse `(coefficient, exponents)` terms.
    pub fn polynomial(dim: usize, terms: &[(f64, &[u8])]) -> Result<Self> {
        if dim == 0 || dim > MAX_POLY_DIM {
            return input(format!("polynomial-custom supports 1 ≤ d ≤ {MAX_POLY_DIM}"));
        }
        let mut degree = 0usize;
        for (_, e) in terms {
            if e.len() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    got: e.len(),
                });
            }
            degree = degree.max(e.iter().map(|&k| k as usize).sum());
        }
        if degree > MAX_POLY_DEGREE {
            return input(format!("total degree {degree} exceeds {MAX_POLY_DEGREE}"));
        }
        let exps = monomial_exponents(dim, degree);
        let mut dense = vec![0.0; exps.len()];
        for (c, e) in terms {
            let idx = exps.iter().position(|x| x.as_slice() == *e).unwrap();
            dense[idx] += c;
        }
        Self::new(Family::PolynomialCustom, dim, dense, 0.0)
    }

    /// U(q) = value + ½ (q - center)ᵀ H (q - center), as a custom polynomial.
    pub fn quadratic(center: &[f64], hessian: &DMatrix<f64>, value: f64) -> Result<Self> {
        let d = center.len();
        let mut terms: Vec<(f64, Vec<u8>)> = Vec::new();
        let unit = |i: usize, k: u8| {
            let mut e = vec![0u8; d];
            e[i] += k;
            e
        };
        let mut constant = value;
        for i in 0..d {
            for j in 0..d {
                let h = 0.5 * hessian[(i, j)];
                // h (qᵢ - cᵢ)(qⱼ - cⱼ)
                let mut e = unit(i, 1);
                e[j] += 1;
                terms.push((h, e));
                terms.push((-h * center[j], unit(i, 1)));
                terms.push((-h * center[i], unit(j, 1)));
                constant += h * center[i] * center[j];
            }
        }
        terms.push((constant, vec![0u8; d]));
        let borrowed: Vec<(f64, &[u8])> = terms.iter().map(|(c, e)| (*c, e.as_slice())).collect();
        Self::polynomial(d, &borrowed)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn parameters(&self) -> &[f64] {
        &self.parameters
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn with_offset(&self, offset: f64) -> Self {
        let mut m = self.clone();
        m.offset = offset;
        m
    }

    fn check(&self, q: &[f64]) -> Result<()> {
        if q.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: q.len(),
            });
        }
        Ok(())
    }

    fn powers(&self, q: &[f64]) -> [[f64; MAX_POLY_DEGREE + 1]; MAX_POLY_DIM] {
        let mut pw = [[1.0; MAX_POLY_DEGREE + 1]; MAX_POLY_DIM];
        for (i, &x) in q.iter().enumerate() {
            for k in 1..=MAX_POLY_DEGREE {
                pw[i][k] = pw[i][k - 1] * x;
            }
        }
        pw
    }

    /// U(q) + offset. Panics (debug) on dimension mismatch; see [`Self::eval_energy`].
    #[inline]
    pub fn energy(&self, q: &[f64]) -> f64 {
        debug_assert_eq!(q.len(), self.dim);
        let u = match self.family {
            Family::QuarticDoubleWell1d => {
                let a = q[0] * q[0] - 1.0;
                0.25 * a * a
            }
            Family::SeparableDoubleWellNd => {
                let a = q[0] * q[0] - 1.0;
                let mut u = 0.25 * a * a;
                for (w, x) in self.parameters.iter().zip(&q[1..]) {
                    u += 0.5 * w * x * x;
                }
                u
            }
            Family::PolynomialCustom => {
                let pw = self.powers(q);
                self.poly.as_ref().unwrap().value.eval(&pw[..self.dim])
            }
        };
        u + self.offset
    }

    #[inline]
    pub fn gradient_into(&self, q: &[f64], out: &mut [f64]) {
        debug_assert_eq!(q.len(), self.dim);
        match self.family {
            Family::QuarticDoubleWell1d => out[0] = q[0] * q[0] * q[0] - q[0],
            Family::SeparableDoubleWellNd => {
                out[0] = q[0] * q[0] * q[0] - q[0];
                for (i, w) in self.parameters.iter().enumerate() {
                    out[i + 1] = w * q[i + 1];
                }
            }
            Family::PolynomialCustom => {
                let pw = self.powers(q);
                for (o, g) in out.iter_mut().zip(&self.poly.as_ref().unwrap().grad) {
                    *o = g.eval(&pw[..self.dim]);
                }
            }
        }
    }

    pub fn gradient(&self, q: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim];
        self.gradient_into(q, &mut g);
        g
    }

    pub fn hessian(&self, q: &[f64]) -> DMatrix<f64> {
        debug_assert_eq!(q.len(), self.dim);
        let d = self.dim;
        let mut h = DMatrix::zeros(d, d);
        match self.family {
            Family::QuarticDoubleWell1d => h[(0, 0)] = 3.0 * q[0] * q[0] - 1.0,
            Family::SeparableDoubleWellNd => {
                h[(0, 0)] = 3.0 * q[0] * q[0] - 1.0;
                for (i, w) in self.parameters.iter().enumerate() {
                    h[(i + 1, i + 1)] = *w;
                }
            }
            Family::PolynomialCustom => {
                let pw = self.powers(q);
                let poly = self.poly.as_ref().unwrap();
                for i in 0..d {
                    for j in 0..d {
                        h[(i, j)] = poly.hess[i][j].eval(&pw[..d]);
                    }
                }
            }
        }
        h
    }

    /// ΔU(q)
    pub fn laplacian(&self, q: &[f64]) -> f64 {
        match self.family {
            Family::PolynomialCustom => {
                let pw = self.powers(q);
                self.poly.as_ref().unwrap().lap.eval(&pw[..self.dim])
            }
            _ => self.hessian(q).trace(),
        }
    }

    pub fn eval_energy(&self, q: &[f64]) -> Result<f64> {
        self.check(q)?;
        Ok(self.energy(q))
    }

    pub fn eval_gradient(&self, q: &[f64]) -> Result<Vec<f64>> {
        self.check(q)?;
        Ok(self.gradient(q))
    }

    pub fn eval_hessian(&self, q: &[f64]) -> Result<DMatrix<f64>> {
        self.check(q)?;
        Ok(self.hessian(q))
    }

    /// V(q, p) = U(q) + |p|²/2
    pub fn hamiltonian(&self, x: &PhaseState) -> f64 {
        self.energy(&x.q) + 0.5 * x.p.iter().map(|v| v * v).sum::<f64>()
    }
}

fn build_polynomial(dim: usize, dense: &[f64]) -> Result<PolyDerivatives> {
    if dim > MAX_POLY_DIM {
        return input(format!("polynomial-custom supports d ≤ {MAX_POLY_DIM}"));
    }
    let degree = (0..=MAX_POLY_DEGREE)
        .find(|&deg| monomial_exponents(dim, deg).len() == dense.len())
        .ok_or_else(|| {
            Error::Input(format!(
                "{} coefficients do not form a dense polynomial of degree ≤ {MAX_POLY_DEGREE} in d = {dim}",
                dense.len()
            ))
        })?;
    let terms = monomial_exponents(dim, degree)
        .into_iter()
        .zip(dense)
        .filter(|(_, c)| **c != 0.0)
        .map(|(e, &coef)| {
            let mut pow = [0u8; MAX_POLY_DIM];
            pow[..dim].copy_from_slice(&e);
            Monomial { coef, pow }
        })
        .collect();
    let value = Polynomial { terms };
    let grad: Vec<Polynomial> = (0..dim).map(|i| value.derivative(i)).collect();
    let hess: Vec<Vec<Polynomial>> = grad
        .iter()
        .map(|g| (0..dim).map(|j| g.derivative(j)).collect())
        .collect();
    let lap = Polynomial {
        terms: (0..dim).flat_map(|i| hess[i][i].terms.clone()).collect(),
    };
    Ok(PolyDerivatives { value, grad, hess, lap })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    pub beta: f64,
    pub radii: Vec<f64>,
    /// Outermost-shell minimum of ⟨q,∇U⟩ / (|q|² + U).
    pub min_ratio_1: f64,
    /// Outermost-shell minimum of |∇U| − βΔU.
    pub min_ratio_2: f64,
    pub shell_min_ratio_1: Vec<f64>,
    pub shell_min_ratio_2: Vec<f64>,
    pub pass: bool,
}

pub const DEFAULT_GROWTH_SHELLS: usize = 8;
pub const DEFAULT_GROWTH_DIRECTIONS: usize = 64;

pub fn default_growth_radii() -> Vec<f64> {
    (1..=DEFAULT_GROWTH_SHELLS)
        .map(|k| 10.0 * k as f64 / DEFAULT_GROWTH_SHELLS as f64)
        .collect()
}

/// Unit directions: ± coordinate axes first, then seeded Gaussian directions.
pub(crate) fn sample_directions(dim: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut dirs = Vec::with_capacity(count);
    for i in 0..dim {
        for s in [1.0, -1.0] {
            let mut e = vec![0.0; dim];
            e[i] = s;
            dirs.push(e);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while dirs.len() < count {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            dirs.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    dirs.truncate(count.max(1));
    dirs
}

/// Sampled necessary test of the two growth conditions at infinity.
pub fn check_growth_conditions(
    model: &PotentialModel,
    beta: f64,
    radius_grid: &[f64],
    samples_per_shell: usize,
) -> Result<GrowthReport> {
    if radius_grid.is_empty() {
        return input("empty radius grid");
    }
    if !(beta > 0.0) {
        return input("beta must be positive");
    }
    if samples_per_shell == 0 {
        return input("samples_per_shell must be positive");
    }
    if radius_grid.windows(2).any(|w| w[1] <= w[0]) || radius_grid[0] <= 0.0 {
        return input("radii must be positive and increasing");
    }
    let dirs = sample_directions(model.dim(), samples_per_shell, 0x9e37_79b9);
    let mut r1 = Vec::with_capacity(radius_grid.len());
    let mut r2 = Vec::with_capacity(radius_grid.len());
    for &r in radius_grid {
        let mut m1 = f64::INFINITY;
        let mut m2 = f64::INFINITY;
        for dir in &dirs {
            let q: Vec<f64> = dir.iter().map(|x| x * r).collect();
            let g = model.gradient(&q);
            let u = model.energy(&q);
            let qg: f64 = q.iter().zip(&g).map(|(a, b)| a * b).sum();
            m1 = m1.min(qg / (r * r + u));
            let gn = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            m2 = m2.min(gn - beta * model.laplacian(&q));
        }
        r1.push(m1);
        r2.push(m2);
    }
    let min_ratio_1 = *r1.last().unwrap();
    let min_ratio_2 = *r2.last().unwrap();
    Ok(GrowthReport {
        beta,
        radii: radius_grid.to_vec(),
        min_ratio_1,
        min_ratio_2,
        shell_min_ratio_1: r1,
        shell_min_ratio_2: r2,
        pass: min_ratio_1 > 0.0 && min_ratio_2 > 0.0,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivativeReport {
    pub n_points: usize,
    /// max ‖FD(U) - ∇U‖∞ / max(‖∇U‖∞, 1)
    pub gradient_rel: f64,
    /// max ‖FD(∇U) - ∇²U‖∞ / max(‖∇²U‖∞, 1)
    pub hessian_rel: f64,
    pub hessian_asymmetry: f64,
    pub pass: bool,
}

pub const GRADIENT_FD_TOL: f64 = 1e-6;
pub const HESSIAN_FD_TOL: f64 = 1e-5;
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Central differences of U and ∇U at `n_points` uniform points of [-half, half]^d.
pub fn derivative_consistency(model: &PotentialModel, n_points: usize, half: f64, seed: u64) -> DerivativeReport {
    use rand::Rng;
    let d = model.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut gr, mut hr, mut asym) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..n_points {
        let q: Vec<f64> = (0..d).map(|_| rng.random_range(-half..half)).collect();
        let g = model.gradient(&q);
        let h = model.hessian(&q);
        let mut gerr = 0.0f64;
        let mut herr = 0.0f64;
        for i in 0..d {
            let step = 1e-5 * q[i].abs().max(1.0);
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[i] += step;
            qm[i] -= step;
            gerr = gerr.max(((model.energy(&qp) - model.energy(&qm)) / (2.0 * step) - g[i]).abs());
            let (gp, gm) = (model.gradient(&qp), model.gradient(&qm));
            for j in 0..d {
                herr = herr.max(((gp[j] - gm[j]) / (2.0 * step) - h[(j, i)]).abs());
                asym = asym.max((h[(i, j)] - h[(j, i)]).abs());
            }
        }
        let gscale = g.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        gr = gr.max(gerr / gscale);
        hr = hr.max(herr / h.amax().max(1.0));
    }
    DerivativeReport {
        n_points,
        gradient_rel: gr,
        hessian_rel: hr,
        hessian_asymmetry: asym,
        pass: gr < GRADIENT_FD_TOL && hr < HESSIAN_FD_TOL && asym <= SYMMETRY_TOL,
    }
}

/// Shift the offset so that the global minimum of U becomes 0.
pub fn normalize_offset(model: &PotentialModel, landscape_min_value: f64) -> PotentialModel {
    if landscape_min_value == 0.0 {
        return model.clone();
    }
    model.with_offset(model.offset() - landscape_min_value)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + b.abs())
    }

    fn sep2() -> PotentialModel {
        PotentialModel::separable(&[4.0]).unwrap()
    }

    #[test]
    fn quartic_values() {
        let m = PotentialModel::quartic_1d();
        assert_eq!(m.eval_energy(&[1.0]).unwrap(), 0.0);
        assert_eq!(m.eval_energy(&[0.0]).unwrap(), 0.25);
        assert_eq!(m.eval_gradient(&[2.0]).unwrap(), vec![6.0]);
        assert_eq!(m.eval_gradient(&[1.0]).unwrap(), vec![0.0]);
        assert_eq!(m.eval_gradient(&[-1.0]).unwrap(), vec![0.0]);
        assert_eq!(m.eval_hessian(&[1.0]).unwrap()[(0, 0)], 2.0);
        assert_eq!(m.eval_hessian(&[0.0]).unwrap()[(0, 0)], -1.0);
        assert!(matches!(
            m.eval_energy(&[0.0, 1.0]),
            Err(Error::Dimension { expected: 1, got: 2 })
        ));
    }

    #[test]
    fn separable_values() {
        let m = sep2();
        assert_eq!(m.energy(&[0.0, 0.0]), 0.25);
        let h = m.hessian(&[0.0, 0.0]);
        assert_eq!(h, DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 4.0]));
    }

    #[test]
    fn hamiltonian_values() {
        let m = PotentialModel::quartic_1d();
        let x = |q: f64, p: f64| PhaseState::new(vec![q], vec![p]).unwrap();
        assert_eq!(m.hamiltonian(&x(1.0, 0.0)), 0.0);
        assert_eq!(m.hamiltonian(&x(0.0, 0.0)), 0.25);
        assert_eq!(m.hamiltonian(&x(1.0, 1.0)), 0.5);
    }

    #[test]
    fn dense_order() {
        let e = monomial_exponents(2, 2);
        let want: Vec<Vec<u8>> = vec![vec![0, 0], vec![1, 0], vec![0, 1], vec![2, 0], vec![1, 1], vec![0, 2]];
        assert_eq!(e, want);
        assert_eq!(monomial_exponents(3, 6).len(), 84);
    }

    #[test]
    fn polynomial_matches_builtin_quartic() {
        let p = PotentialModel::polynomial(1, &[(0.25, &[0]), (-0.5, &[2]), (0.25, &[4])]).unwrap();
        let b = PotentialModel::quartic_1d();
        for &q in &[-1.7, -0.3, 0.0, 0.4, 1.0, 2.2] {
            assert!(close(p.energy(&[q]), b.energy(&[q]), 1e-14));
            assert!(close(p.gradient(&[q])[0], b.gradient(&[q])[0], 1e-14));
            assert!(close(p.hessian(&[q])[(0, 0)], b.hessian(&[q])[(0, 0)], 1e-14));
        }
    }

    #[test]
    fn bad_dense_length_rejected() {
        assert!(PotentialModel::new(Family::PolynomialCustom, 2, vec![1.0; 4], 0.0).is_err());
        assert!(PotentialModel::new(Family::PolynomialCustom, 4, vec![1.0], 0.0).is_err());
        assert!(PotentialModel::new(Family::SeparableDoubleWellNd, 3, vec![1.0], 0.0).is_err());
    }

    #[test]
    fn quadratic_constructor() {
        let h = DMatrix::from_row_slice(2, 2, &[-1.0, 0.3, 0.3, 2.0]);
        let m = PotentialModel::quadratic(&[0.5, -1.0], &h, 0.25).unwrap();
        assert!(close(m.energy(&[0.5, -1.0]), 0.25, 1e-14));
        let g = m.gradient(&[1.5, -1.0]);
        assert!(close(g[0], -1.0, 1e-14) && close(g[1], 0.3, 1e-14));
        assert_eq!(m.hessian(&[7.0, 3.0]), h);
    }

    #[test]
    fn growth_examples() {
        let radii = default_growth_radii();
        let q = PotentialModel::quartic_1d();
        assert!(check_growth_conditions(&q, 0.1, &radii, 64).unwrap().pass);
        assert!(!check_growth_conditions(&q, 1e6, &radii, 64).unwrap().pass);
        let lin = PotentialModel::polynomial(1, &[(1.0, &[1])]).unwrap();
        assert!(!check_growth_conditions(&lin, 0.1, &radii, 64).unwrap().pass);
        assert!(check_growth_conditions(&sep2(), 0.1, &radii, 64).unwrap().pass);
        assert!(check_growth_conditions(&q, 0.1, &[], 64).is_err());
        assert!(check_growth_conditions(&q, 0.1, &[2.0, 1.0], 64).is_err());
    }

    #[test]
    fn offsets() {
        let q = PotentialModel::quartic_1d();
        assert_eq!(normalize_offset(&q, 0.0), q);
        let shifted = q.with_offset(-3.0);
        let fixed = normalize_offset(&shifted, -3.0);
        assert_eq!(fixed.offset(), 0.0);
        assert_eq!(normalize_offset(&fixed, 0.0), fixed);
        assert_eq!(fixed.gradient(&[0.7]), shifted.gradient(&[0.7]));
    }

    #[test]
    fn derivatives_consistent_for_builtins() {
        let models = [
            PotentialModel::quartic_1d(),
            PotentialModel::separable(&[2.0, 0.5]).unwrap(),
            PotentialModel::polynomial(
                2,
                &[
                    (0.25, &[4, 0]),
                    (-0.5, &[2, 0]),
                    (1.0, &[0, 2]),
                    (0.3, &[1, 1]),
                    (0.1, &[2, 2]),
                ],
            )
            .unwrap(),
        ];
        for m in &models {
            let r = derivative_consistency(m, 100, 2.0, 11);
            assert!(r.pass, "{r:?}");
        }
    }
}
