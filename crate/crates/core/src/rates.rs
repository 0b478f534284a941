//! Spectral objects at the saddle and closed-form transition times.
//!
//! With H_V = blockdiag(H_U^σ, I) and M = [[0, I], [-I, γI]], the rate
//! eigenpair solves H_V M v = -μ v with
//!
//! ```text
//! μ = (-γ + √(γ² + 4λ₁)) / 2,   v = ((μ+γ) u, u),   |u| = 1
//! ```
//!
//! where H_U^σ u = -λ₁ u. Mean transition time from m:
//!
//! ```text
//! underdamped  κ = (2π/μ)  √(-det H_U^σ / det H_U^m)
//! overdamped   κ = (2π/λ₁) √(-det H_U^σ / det H_U^m)
//! E[τ] ≈ κ exp((U(σ) - U(m)) / ε)
//! ```

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{input, Error, Result};
use crate::landscape::{LandscapeReport, DEGENERACY_TOL};
use crate::linalg::{dot, sym_eigen};
use crate::potential::PotentialModel;

pub fn compute_mu(gamma: f64, lambda1: f64) -> Result<f64> {
    if !(gamma > 0.0) || !(lambda1 > 0.0) {
        return input("compute_mu needs γ > 0 and λ₁ > 0");
    }
    // 2λ₁ / (γ + √(γ² + 4λ₁)) avoids cancellation for large γ
    Ok(2.0 * lambda1 / (gamma + (gamma * gamma + 4.0 * lambda1).sqrt()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaddleFrame {
    pub gamma: f64,
    pub dim: usize,
    pub sigma: Vec<f64>,
    pub u_sigma: f64,
    /// λ₁ (H_V has -λ₁ along e₁), λ₂..λ_d, then d ones.
    pub lambda: Vec<f64>,
    /// Orthonormal basis e₁..e_{2d} of R^{2d}: eᵢ = (wᵢ, 0), e_{d+i} = (0, wᵢ).
    pub basis: Vec<Vec<f64>>,
    pub mu: f64,
    /// (v_q, v_p) with v_p = u, v_q = (μ+γ) u.
    pub v: Vec<f64>,
    pub v_in_basis: Vec<f64>,
    pub hessian_sigma: Vec<Vec<f64>>,
}

impl SaddleFrame {
    pub fn from_hessian(h: &DMatrix<f64>, gamma: f64, sigma: &[f64], u_sigma: f64) -> Result<Self> {
        let d = h.nrows();
        if h.ncols() != d || sigma.len() != d {
            return Err(Error::Dimension {
                expected: d,
                got: sigma.len(),
            });
        }
        let (vals, vecs) = sym_eigen(h);
        if vals.iter().any(|v| v.abs() < DEGENERACY_TOL) {
            return Err(Error::Spectral(format!(
                "degenerate saddle Hessian, eigenvalues {vals:?}"
            )));
        }
        if vals[0] >= 0.0 || vals.iter().skip(1).any(|&v| v <= 0.0) {
            return Err(Error::Spectral(format!("saddle Hessian is not index one: {vals:?}")));
        }
        let lambda1 = -vals[0];
        let mu = compute_mu(gamma, lambda1)?;
        let w: Vec<Vec<f64>> = (0..d).map(|k| vecs.column(k).iter().copied().collect()).collect();
        let mut u = w[0].clone();
        if u.iter().find(|x| x.abs() > 1e-12).is_some_and(|x| *x < 0.0) {
            u.iter_mut().for_each(|x| *x = -*x);
        }
        let mut basis = Vec::with_capacity(2 * d);
        for wi in &w {
            let mut e = wi.clone();
            e.extend(std::iter::repeat_n(0.0, d));
            basis.push(e);
        }
        for wi in &w {
            let mut e = vec![0.0; d];
            e.extend_from_slice(wi);
            basis.push(e);
        }
        basis[0] = u.iter().copied().chain(std::iter::repeat_n(0.0, d)).collect();
        basis[d] = std::iter::repeat_n(0.0, d).chain(u.iter().copied()).collect();
        let mut v: Vec<f64> = u.iter().map(|x| (mu + gamma) * x).collect();
        v.extend_from_slice(&u);
        let v_in_basis = basis.iter().map(|e| dot(e, &v)).collect();
        let mut lambda = vec![lambda1];
        lambda.extend_from_slice(&vals[1..]);
        lambda.extend(std::iter::repeat_n(1.0, d));
        Ok(Self {
            gamma,
            dim: d,
            sigma: sigma.to_vec(),
            u_sigma,
            lambda,
            basis,
            mu,
            v,
            v_in_basis,
            hessian_sigma: (0..d).map(|i| h.row(i).iter().copied().collect()).collect(),
        })
    }

    /// Same frame with u negated if needed so that e₁ points from σ towards
    /// `target` (the capacity box puts its + face on the m side).
    pub fn oriented_toward(&self, target: &[f64]) -> Self {
        let d = self.dim;
        let u = &self.basis[0][..d];
        let along: f64 = target
            .iter()
            .zip(&self.sigma)
            .zip(u)
            .map(|((t, s), ui)| (t - s) * ui)
            .sum();
        if along >= 0.0 {
            return self.clone();
        }
        let mut out = self.clone();
        out.basis[0].iter_mut().for_each(|x| *x = -*x);
        out.basis[d].iter_mut().for_each(|x| *x = -*x);
        out.v.iter_mut().for_each(|x| *x = -*x);
        out.v_in_basis = out.basis.iter().map(|e| dot(e, &out.v)).collect();
        out
    }

    pub fn lambda1(&self) -> f64 {
        self.lambda[0]
    }

    pub fn hessian_matrix(&self) -> DMatrix<f64> {
        let d = self.dim;
        DMatrix::from_fn(d, d, |i, j| self.hessian_sigma[i][j])
    }

    /// H_V at (σ, 0).
    pub fn h_v(&self) -> DMatrix<f64> {
        let d = self.dim;
        let mut m = DMatrix::zeros(2 * d, 2 * d);
        m.view_mut((0, 0), (d, d)).copy_from(&self.hessian_matrix());
        for i in 0..d {
            m[(d + i, d + i)] = 1.0;
        }
        m
    }

    /// [[0, I], [-I, γI]]
    pub fn m_matrix(&self) -> DMatrix<f64> {
        let d = self.dim;
        let mut m = DMatrix::zeros(2 * d, 2 * d);
        for i in 0..d {
            m[(i, d + i)] = 1.0;
            m[(d + i, i)] = -1.0;
            m[(d + i, d + i)] = self.gamma;
        }
        m
    }

    pub fn det_hessian_sigma(&self) -> f64 {
        -self.lambda[..self.dim].iter().product::<f64>()
    }

    /// Saddle-centred frame coordinates xᵢ = ⟨x - (σ, 0), eᵢ⟩.
    pub fn to_frame(&self, q: &[f64], p: &[f64]) -> Vec<f64> {
        let mut x: Vec<f64> = q.iter().zip(&self.sigma).map(|(a, b)| a - b).collect();
        x.extend_from_slice(p);
        self.basis.iter().map(|e| dot(e, &x)).collect()
    }

    /// Inverse of [`Self::to_frame`]: returns (q, p).
    pub fn from_frame(&self, coords: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let d = self.dim;
        let mut x = vec![0.0; 2 * d];
        for (c, e) in coords.iter().zip(&self.basis) {
            for (xi, ei) in x.iter_mut().zip(e) {
                *xi += c * ei;
            }
        }
        let q = x[..d].iter().zip(&self.sigma).map(|(a, b)| a + b).collect();
        (q, x[d..].to_vec())
    }

    /// ⟨x - (σ, 0), v⟩
    pub fn v_projection(&self, q: &[f64], p: &[f64]) -> f64 {
        let d = self.dim;
        let mut s = 0.0;
        for i in 0..d {
            s += (q[i] - self.sigma[i]) * self.v[i] + p[i] * self.v[d + i];
        }
        s
    }
}

pub fn build_saddle_frame(model: &PotentialModel, report: &LandscapeReport, gamma: f64) -> Result<SaddleFrame> {
    if !report.is_valid_double_well {
        return input("saddle frame needs a valid double well");
    }
    let h = model.hessian(&report.saddle.location);
    SaddleFrame::from_hessian(&h, gamma, &report.saddle.location, report.saddle.energy)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameIdentities {
    /// |μ(μ+γ) - λ₁|
    pub mu_residual: f64,
    /// ‖H_V M v + μ v‖_∞
    pub eigen_residual: f64,
    /// |-v₁²/λ₁ + Σ_{i≥2} vᵢ²/λᵢ + γ/μ|
    pub matrix_equality_residual: f64,
    /// Ascending spectrum of H_V + (μ/γ) v vᵀ.
    pub shifted_spectrum: Vec<f64>,
    pub momentum_block_ones: bool,
    pub pass: bool,
}

pub const MU_TOL: f64 = 1e-12;
pub const EIGEN_TOL: f64 = 1e-10;
pub const IDENTITY_TOL: f64 = 1e-10;
pub const KERNEL_TOL: f64 = 1e-9;

pub fn verify_frame_identities(frame: &SaddleFrame) -> FrameIdentities {
    let (mu, gamma, l1) = (frame.mu, frame.gamma, frame.lambda1());
    let mu_residual = (mu * (mu + gamma) - l1).abs();
    let hv = frame.h_v();
    let v = nalgebra::DVector::from_column_slice(&frame.v);
    let r = &hv * frame.m_matrix() * &v + &v * mu;
    let eigen_residual = r.amax();
    // coordinates recomputed by projection, not taken from the constructor
    let coords: Vec<f64> = frame.basis.iter().map(|e| dot(e, &frame.v)).collect();
    let mut s = -coords[0] * coords[0] / l1;
    for i in 1..coords.len() {
        s += coords[i] * coords[i] / frame.lambda[i];
    }
    let matrix_equality_residual = (s + gamma / mu).abs();
    let shifted = &hv + &v * v.transpose() * (mu / gamma);
    let (spec, _) = sym_eigen(&shifted);
    let d = frame.dim;
    let momentum_block_ones = frame.lambda[d..].iter().all(|&x| x == 1.0);
    let near_zero = spec.iter().filter(|x| x.abs() < KERNEL_TOL).count();
    let positive = spec.iter().filter(|&&x| x >= KERNEL_TOL).count();
    let pass = mu_residual < MU_TOL
        && eigen_residual < EIGEN_TOL
        && matrix_equality_residual < IDENTITY_TOL
        && near_zero == 1
        && positive == spec.len() - 1
        && momentum_block_ones;
    FrameIdentities {
        mu_residual,
        eigen_residual,
        matrix_equality_residual,
        shifted_spectrum: spec,
        momentum_block_ones,
        pass,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Underdamped,
    Overdamped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EkPrediction {
    pub regime: Regime,
    pub prefactor: f64,
    pub exponent: f64,
    pub epsilon: f64,
    pub predicted_mean_time: f64,
}

pub fn ek_prefactor(report: &LandscapeReport, frame: &SaddleFrame, regime: Regime) -> Result<f64> {
    let det_m = report.m.hessian_determinant();
    if !(det_m > 0.0) {
        return Err(Error::Structural(format!("det H_U^m = {det_m} is not positive")));
    }
    let det_s = frame.det_hessian_sigma();
    let root = (-det_s / det_m).sqrt();
    let rate = match regime {
        Regime::Underdamped => frame.mu,
        Regime::Overdamped => frame.lambda1(),
    };
    Ok(2.0 * PI / rate * root)
}

pub fn ek_prediction(
    report: &LandscapeReport,
    frame: &SaddleFrame,
    epsilon: f64,
    regime: Regime,
) -> Result<EkPrediction> {
    if !(epsilon > 0.0) {
        return input("ε must be positive");
    }
    let prefactor = ek_prefactor(report, frame, regime)?;
    let exponent = fw_exponent(report);
    Ok(EkPrediction {
        regime,
        prefactor,
        exponent,
        epsilon,
        predicted_mean_time: prefactor * (exponent / epsilon).exp(),
    })
}

/// U(σ) - U(m), the limit of ε log E_m[τ].
pub fn fw_exponent(report: &LandscapeReport) -> f64 {
    report.barrier_from_m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::landscape::analyze;
    use proptest::prelude::*;

    fn quartic() -> (PotentialModel, LandscapeReport, SaddleFrame) {
        let m = PotentialModel::quartic_1d();
        let r = analyze(&m, None).unwrap();
        let f = build_saddle_frame(&m, &r, 1.0).unwrap();
        (m, r, f)
    }

    #[test]
    fn mu_examples() {
        assert_eq!(compute_mu(1.0, 2.0).unwrap(), 1.0);
        let mu = compute_mu(1.0, 1.0).unwrap();
        assert!((mu - 0.6180339887).abs() < 1e-10);
        assert!((mu * (mu + 1.0) - 1.0).abs() < 1e-12);
        let g = 1e3;
        let mu = compute_mu(g, 1.0).unwrap();
        assert!((mu * g - 1.0).abs() < 1e-5);
        assert!(compute_mu(0.0, 1.0).is_err() && compute_mu(1.0, -1.0).is_err());
    }

    #[test]
    fn quartic_frame() {
        let (_, _, f) = quartic();
        assert_eq!(f.lambda, vec![1.0, 1.0]);
        assert!((f.mu - 0.618034).abs() < 1e-6);
        assert!((f.v[0] - 1.618034).abs() < 1e-6 && f.v[1] == 1.0);
        let id = verify_frame_identities(&f);
        assert!(id.pass, "{id:?}");
    }

    #[test]
    fn separable_frame() {
        let m = PotentialModel::separable(&[4.0]).unwrap();
        let r = analyze(&m, None).unwrap();
        let f = build_saddle_frame(&m, &r, 1.0).unwrap();
        assert_eq!(f.lambda, vec![1.0, 4.0, 1.0, 1.0]);
        assert!((f.mu - 0.618034).abs() < 1e-6);
        assert!(verify_frame_identities(&f).pass);
    }

    #[test]
    fn sign_flip_of_u() {
        let h = DMatrix::from_row_slice(2, 2, &[-1.0, 0.4, 0.4, 3.0]);
        let f = SaddleFrame::from_hessian(&h, 0.8, &[0.0, 0.0], 0.0).unwrap();
        let d = 2;
        assert!(f.v[d..].iter().find(|x| x.abs() > 1e-12).unwrap() > &0.0);
        let mut flipped = f.clone();
        flipped.v.iter_mut().for_each(|x| *x = -*x);
        flipped.basis[0].iter_mut().for_each(|x| *x = -*x);
        flipped.basis[d].iter_mut().for_each(|x| *x = -*x);
        assert!(verify_frame_identities(&flipped).pass);
    }

    #[test]
    fn closed_form_identity_example() {
        // γ = 1, λ₁ = 2, μ = 1: -(μ+γ)²/λ₁ + 1 = -1 = -γ/μ
        let h = DMatrix::from_row_slice(1, 1, &[-2.0]);
        let f = SaddleFrame::from_hessian(&h, 1.0, &[0.0], 0.0).unwrap();
        assert_eq!(f.mu, 1.0);
        assert_eq!(verify_frame_identities(&f).matrix_equality_residual, 0.0);
    }

    #[test]
    fn prefactors() {
        let (_, r, f) = quartic();
        let u = ek_prediction(&r, &f, 0.15, Regime::Underdamped).unwrap();
        assert!((u.prefactor - 7.18873).abs() < 1e-4);
        assert!((u.predicted_mean_time - 38.06).abs() < 0.01);
        let o = ek_prediction(&r, &f, 0.15, Regime::Overdamped).unwrap();
        assert!((o.prefactor - 4.44288).abs() < 1e-4);
        assert!((u.prefactor / o.prefactor - (f.mu + f.gamma)).abs() < 1e-12);
        assert_eq!(fw_exponent(&r), 0.25);
    }

    #[test]
    fn large_friction_ratio() {
        let m = PotentialModel::quartic_1d();
        let r = analyze(&m, None).unwrap();
        let f = build_saddle_frame(&m, &r, 1e3).unwrap();
        let ku = ek_prefactor(&r, &f, Regime::Underdamped).unwrap();
        let ko = ek_prefactor(&r, &f, Regime::Overdamped).unwrap();
        assert!((ku / ko / 1e3 - 1.0).abs() < 5e-3);
    }

    #[test]
    fn offsets_and_tilts() {
        let m = PotentialModel::quartic_1d().with_offset(5.0);
        let r = analyze(&m, None).unwrap();
        assert!((fw_exponent(&r) - 0.25).abs() < 1e-12);
        // U + 0.1 q: deeper well on the left, recomputed barrier
        let tilted = PotentialModel::polynomial(1, &[(0.25, &[0]), (0.1, &[1]), (-0.5, &[2]), (0.25, &[4])]).unwrap();
        let r = analyze(&tilted, None).unwrap();
        let roots = [r.m.location[0], r.saddle.location[0]];
        for x in roots {
            assert!((x * x * x - x + 0.1).abs() < 1e-9);
        }
        let u = |q: f64| (q * q - 1.0).powi(2) / 4.0 + 0.1 * q;
        assert!((fw_exponent(&r) - (u(roots[1]) - u(roots[0]))).abs() < 1e-12);
        assert!(r.m.location[0] < 0.0, "default m is the deeper well");
    }

    fn random_saddle(d: usize, seed: u64) -> DMatrix<f64> {
        use rand::SeedableRng;
        use rand_distr::{Distribution, Uniform};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let uni = Uniform::new(-1.0f64, 1.0).unwrap();
        let a = DMatrix::from_fn(d, d, |_, _| uni.sample(&mut rng));
        let q = a.qr().q();
        let mut diag = vec![-(0.2 + uni.sample(&mut rng).abs() * 3.0)];
        for _ in 1..d {
            diag.push(0.2 + uni.sample(&mut rng).abs() * 5.0);
        }
        &q * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(diag)) * q.transpose()
    }

    #[test]
    fn random_saddles() {
        for k in 0..10 {
            let d = 2 + k % 2;
            let h = random_saddle(d, k as u64);
            let f = SaddleFrame::from_hessian(&h, 0.5 + k as f64 * 0.3, &vec![0.0; d], 0.0).unwrap();
            let id = verify_frame_identities(&f);
            assert!(id.matrix_equality_residual < 1e-9 && id.pass, "{id:?}");
        }
    }

    proptest! {
        #[test]
        fn ratio_is_mu_plus_gamma(gamma in 0.01f64..50.0, l1 in 0.01f64..20.0) {
            let h = DMatrix::from_row_slice(1, 1, &[-l1]);
            let f = SaddleFrame::from_hessian(&h, gamma, &[0.0], 0.0).unwrap();
            let ku = 2.0 * PI / f.mu;
            let ko = 2.0 * PI / f.lambda1();
            prop_assert!((ku / ko - (f.mu + gamma)).abs() < 1e-12 * (f.mu + gamma));
            prop_assert!((f.mu * (f.mu + gamma) - l1).abs() < 1e-12 * l1.max(1.0));
        }

        #[test]
        fn frame_identities_hold(seed in 0u64..10_000, gamma in 0.05f64..20.0, d in 1usize..4) {
            let h = if d == 1 { DMatrix::from_row_slice(1, 1, &[-0.3 - (seed % 7) as f64]) } else { random_saddle(d, seed) };
            let f = SaddleFrame::from_hessian(&h, gamma, &vec![0.0; d], 0.0).unwrap();
            let id = verify_frame_identities(&f);
            prop_assert!(id.eigen_residual < 1e-10 * (1.0 + gamma));
            prop_assert!(id.matrix_equality_residual < 1e-9 * (1.0 + gamma / f.mu));
        }

        #[test]
        fn prediction_prefactor_is_epsilon_free(eps in 0.01f64..2.0) {
            let (_, r, f) = quartic();
            let p = ek_prediction(&r, &f, eps, Regime::Underdamped).unwrap();
            let back = p.predicted_mean_time * (-p.exponent / eps).exp();
            prop_assert!((back - p.prefactor).abs() < 1e-12 * p.prefactor);
        }
    }
}
