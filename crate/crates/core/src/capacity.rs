//! Capacity machinery by deterministic quadrature (d ≤ 2).
//!
//! Every phase-space integral ∫ e^{-V/ε} over a region of the form
//! {a ≤ V < E, q ∈ A} is reduced to a position integral by doing the momentum
//! Gaussian in closed form. Integrals are carried as e^{u_ref/ε}·∫..., with
//! u_ref the lowest minimum, so large offsets never underflow; only ratios
//! and logs leave this module unscaled.

use std::f64::consts::{PI, SQRT_2};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erf, erfc};
use statrs::function::gamma::gamma_ur;

use crate::dynamics::{apply_generator, generator_unchecked, PhaseFunction};
use crate::error::{input, Error, Result};
use crate::landscape::{CriticalPoint, LandscapeReport};
use crate::linalg::{dot, norm};
use crate::potential::{sample_directions, PhaseState, PotentialModel};
use crate::quadrature::{
    negative_intervals, refine, refine_abs, sign_changes, with_breaks, QuadratureSpec, Rule, ROOT_GRID,
};
use crate::rates::{ek_prediction, EkPrediction, Regime, SaddleFrame};

/// Box scale. Small on purpose: at desk-scale ε a larger K pushes the box
/// faces past the minima of the quartic well.
pub const DEFAULT_K: f64 = 1.0;
/// Quadrature domain is {V ≤ U(σ) + TRUNCATION_GAP}.
pub const TRUNCATION_GAP: f64 = 8.0;
pub const DEFAULT_THETA: f64 = 1e-3;

pub fn default_truncation(report: &LandscapeReport) -> f64 {
    report.saddle.energy + TRUNCATION_GAP
}

/// δ = √(ε log(1/ε))
pub fn delta(epsilon: f64) -> f64 {
    (epsilon * (1.0 / epsilon).ln()).sqrt()
}

/// ∫_{R^d} e^{-|p|²/2ε} dp
fn momentum_total(d: usize, eps: f64) -> f64 {
    (2.0 * PI * eps).powf(d as f64 / 2.0)
}

/// ∫_{|p|²/2 ≥ x} e^{-|p|²/2ε} dp, the full Gaussian mass when x ≤ 0.
pub fn momentum_tail(d: usize, eps: f64, x: f64) -> f64 {
    let c = momentum_total(d, eps);
    if x <= 0.0 {
        return c;
    }
    let y = x / eps;
    match d {
        1 => c * erfc(y.sqrt()),
        2 => c * (-y).exp(),
        _ => c * gamma_ur(d as f64 / 2.0, y),
    }
}

/// ∫_{|p|²/2 < x} e^{-|p|²/2ε} dp
pub fn momentum_mass(d: usize, eps: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    match d {
        1 => momentum_total(1, eps) * erf((x / eps).sqrt()),
        2 => momentum_total(2, eps) * -(-x / eps).exp_m1(),
        _ => momentum_total(d, eps) - momentum_tail(d, eps, x),
    }
}

fn std_normal_cdf(y: f64) -> f64 {
    0.5 * erfc(-y / SQRT_2)
}

fn std_normal_pdf(y: f64) -> f64 {
    (-0.5 * y * y).exp() / (2.0 * PI).sqrt()
}

/// C^∞ step: 0 for t ≤ 0, 1 for t ≥ 1.
pub fn smooth_step(t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    if t >= 1.0 {
        return 1.0;
    }
    let a = (-1.0 / t).exp();
    let b = (-1.0 / (1.0 - t)).exp();
    a / (a + b)
}

fn check_dim(model: &PotentialModel) -> Result<()> {
    if model.dim() > 2 {
        return input("capacity quadrature supports d ≤ 2");
    }
    Ok(())
}

fn check_eps(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return input("capacity quadrature needs 0 < ε < 1");
    }
    Ok(())
}

/// Radius of a ball containing {U < level}, from sampled rays.
fn sublevel_radius(model: &PotentialModel, level: f64) -> Result<f64> {
    let d = model.dim();
    let dirs = sample_directions(d, if d == 1 { 2 } else { 64 }, 11);
    let above = |r: f64| {
        dirs.iter().all(|e| {
            let q: Vec<f64> = e.iter().map(|x| r * x).collect();
            model.energy(&q) > level
        })
    };
    let mut hi = 1.0;
    while !(above(hi) && above(2.0 * hi)) {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::Accuracy(format!("sublevel set {{U < {level}}} looks unbounded")));
        }
    }
    let n = 400;
    let mut last = 0.0;
    for k in 0..=n {
        let r = 2.0 * hi * k as f64 / n as f64;
        if !above(r) {
            last = r;
        }
    }
    Ok(last + 4.0 * hi / n as f64)
}

/// Gradient descent with backtracking; returns the index of the minimum reached.
fn descend_to_minimum(model: &PotentialModel, q0: &[f64], minima: &[Vec<f64>]) -> Option<usize> {
    let mut q = q0.to_vec();
    let mut u = model.energy(&q);
    let mut t = 1e-2;
    for _ in 0..50_000 {
        for (k, m) in minima.iter().enumerate() {
            let dist: f64 = q.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            if dist < 1e-4 {
                return Some(k);
            }
        }
        let g = model.gradient(&q);
        let gg = dot(&g, &g);
        if gg < 1e-28 {
            break;
        }
        t *= 2.0;
        loop {
            let trial: Vec<f64> = q.iter().zip(&g).map(|(a, b)| a - t * b).collect();
            let ut = model.energy(&trial);
            if ut <= u - 1e-4 * t * gg {
                q = trial;
                u = ut;
                break;
            }
            t *= 0.5;
            if t < 1e-18 {
                return None;
            }
        }
    }
    minima
        .iter()
        .position(|m| q.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() < 1e-3)
}

type Keep<'a> = &'a (dyn Fn(&[f64]) -> bool + Sync);

/// ∫ over {q : U(q) < level, keep(q)} of f(q, U(q)) dq, d ∈ {1, 2}.
/// `kinks` are further U-levels across which f is not smooth.
struct SublevelIntegral<'a> {
    model: &'a PotentialModel,
    level: f64,
    kinks: Vec<f64>,
    radius: f64,
    keep: Option<Keep<'a>>,
    outer_breaks: Vec<f64>,
}

impl<'a> SublevelIntegral<'a> {
    fn new(model: &'a PotentialModel, level: f64, kinks: Vec<f64>, keep: Option<Keep<'a>>) -> Result<Self> {
        let radius = sublevel_radius(model, level)?;
        let mut s = Self {
            model,
            level,
            kinks,
            radius,
            keep,
            outer_breaks: Vec::new(),
        };
        if model.dim() == 2 {
            s.outer_breaks = s.find_outer_breaks();
        }
        Ok(s)
    }

    fn levels(&self) -> Vec<f64> {
        let mut l = vec![self.level];
        l.extend(self.kinks.iter().copied().filter(|&k| k < self.level));
        l
    }

    /// Pieces of [lo, hi] where g(x) = U(x) is below `level`, split at the kink levels.
    fn line_pieces(&self, u_of: &dyn Fn(f64) -> f64, lo: f64, hi: f64) -> Vec<Vec<f64>> {
        let g = |x: f64| u_of(x) - self.level;
        negative_intervals(&g, lo, hi, ROOT_GRID)
            .into_iter()
            .map(|(a, b)| {
                let mut extra = Vec::new();
                for &k in &self.kinks {
                    if k < self.level {
                        extra.extend(sign_changes(&|x: f64| u_of(x) - k, a, b, 64));
                    }
                }
                with_breaks(a, b, &extra)
            })
            .collect()
    }

    /// q₁ values where the number of crossings of some level along the q₂ line changes.
    fn find_outer_breaks(&self) -> Vec<f64> {
        let r = self.radius;
        let levels = self.levels();
        let signature = |x1: f64| -> Vec<usize> {
            levels
                .iter()
                .map(|&l| sign_changes(&|x2: f64| self.model.energy(&[x1, x2]) - l, -r, r, ROOT_GRID).len())
                .collect()
        };
        let n = 400;
        let xs: Vec<f64> = (0..=n).map(|k| -r + 2.0 * r * k as f64 / n as f64).collect();
        let sigs: Vec<Vec<usize>> = xs.iter().map(|&x| signature(x)).collect();
        let mut breaks = Vec::new();
        for k in 0..n {
            if sigs[k] != sigs[k + 1] {
                let (mut a, mut b) = (xs[k], xs[k + 1]);
                let sa = sigs[k].clone();
                for _ in 0..50 {
                    let mid = 0.5 * (a + b);
                    if signature(mid) == sa {
                        a = mid;
                    } else {
                        b = mid;
                    }
                }
                breaks.push(0.5 * (a + b));
            }
        }
        breaks
    }

    fn eval(&self, rule: &Rule, panels: usize, f: &(dyn Fn(&[f64], f64) -> f64 + Sync)) -> f64 {
        let r = self.radius;
        match self.model.dim() {
            1 => {
                let u_of = |x: f64| self.model.energy(&[x]);
                let mut total = Vec::new();
                for piece in self.line_pieces(&u_of, -r, r) {
                    let mid = [0.5 * (piece[0] + piece[piece.len() - 1])];
                    if self.keep.is_some_and(|k| !k(&mid)) {
                        continue;
                    }
                    total.push(rule.integrate_pieces(&piece, panels, &mut |x| f(&[x], u_of(x))));
                }
                crate::quadrature::pairwise_sum(&total)
            }
            _ => {
                let breaks = with_breaks(-r, r, &self.outer_breaks);
                rule.integrate_pieces(&breaks, panels, &mut |x1| {
                    let u_of = |x2: f64| self.model.energy(&[x1, x2]);
                    let mut total = Vec::new();
                    for piece in self.line_pieces(&u_of, -r, r) {
                        let mid = [x1, 0.5 * (piece[0] + piece[piece.len() - 1])];
                        if self.keep.is_some_and(|k| !k(&mid)) {
                            continue;
                        }
                        total.push(rule.integrate_pieces(&piece, panels, &mut |x2| f(&[x1, x2], u_of(x2))));
                    }
                    crate::quadrature::pairwise_sum(&total)
                })
            }
        }
    }
}

/// e^{u_ref/ε} ∫_{lower ≤ V < upper, q ∈ keep} e^{-V/ε} dq dp, refined.
/// `lower = None` means no lower cut.
fn phase_mass(
    model: &PotentialModel,
    eps: f64,
    u_ref: f64,
    lower: Option<f64>,
    upper: f64,
    keep: Option<Keep<'_>>,
    quad: QuadratureSpec,
) -> Result<(f64, f64)> {
    let d = model.dim();
    let kinks: Vec<f64> = lower.into_iter().collect();
    let region = SublevelIntegral::new(model, upper, kinks, keep)?;
    let rule = Rule::new(quad.points)?;
    let f = |_: &[f64], u: f64| {
        let w = (-(u - u_ref) / eps).exp();
        let inner = match lower {
            None => momentum_mass(d, eps, upper - u),
            Some(a) => momentum_tail(d, eps, a - u) - momentum_tail(d, eps, upper - u),
        };
        w * inner
    };
    let out = refine(quad, |panels| Ok(region.eval(&rule, panels, &f)))?;
    Ok((out.value, out.rel_change))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionFunction {
    pub epsilon: f64,
    pub truncation_energy: f64,
    pub z_eps: f64,
    pub log_z_eps: f64,
    pub laplace_approx: f64,
    pub ratio: f64,
    /// Integrals are stored as e^{energy_ref/ε}·(value).
    pub energy_ref: f64,
    pub z_scaled: f64,
    pub rel_change: f64,
}

impl PartitionFunction {
    /// Normalisation 1 at reference energy `energy_ref`: used by controls
    /// whose potential is not confining (only ratios are reported there).
    pub fn unit(epsilon: f64, energy_ref: f64) -> Self {
        Self {
            epsilon,
            truncation_energy: f64::INFINITY,
            z_eps: (-energy_ref / epsilon).exp(),
            log_z_eps: -energy_ref / epsilon,
            laplace_approx: f64::NAN,
            ratio: f64::NAN,
            energy_ref,
            z_scaled: 1.0,
            rel_change: 0.0,
        }
    }

    fn weight(&self, energy: f64) -> f64 {
        (-(energy - self.energy_ref) / self.epsilon).exp()
    }
}

/// Z_ε = ∫_{V ≤ truncation} e^{-V/ε}, with the Laplace sum over `minima`.
pub fn partition_function(
    model: &PotentialModel,
    minima: &[CriticalPoint],
    epsilon: f64,
    truncation_energy: f64,
    quad: QuadratureSpec,
) -> Result<PartitionFunction> {
    check_dim(model)?;
    check_eps(epsilon)?;
    if minima.is_empty() {
        return input("partition function needs at least one minimum");
    }
    let d = model.dim();
    let u_ref = minima.iter().map(|c| c.energy).fold(f64::INFINITY, f64::min);
    let (z_scaled, rel_change) = phase_mass(model, epsilon, u_ref, None, truncation_energy, None, quad)?;
    let laplace_scaled: f64 = minima
        .iter()
        .map(|c| {
            (2.0 * PI * epsilon).powi(d as i32) / c.hessian_determinant().sqrt() * (-(c.energy - u_ref) / epsilon).exp()
        })
        .sum();
    Ok(PartitionFunction {
        epsilon,
        truncation_energy,
        z_eps: z_scaled * (-u_ref / epsilon).exp(),
        log_z_eps: z_scaled.ln() - u_ref / epsilon,
        laplace_approx: laplace_scaled * (-u_ref / epsilon).exp(),
        ratio: z_scaled / laplace_scaled,
        energy_ref: u_ref,
        z_scaled,
        rel_change,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TightnessReport {
    pub a: f64,
    pub epsilons: Vec<f64>,
    /// e^{a/ε} ∫_{V ≥ a} e^{-V/ε}
    pub values: Vec<f64>,
    pub z_values: Vec<f64>,
    pub bounded: bool,
}

/// Scaled tail masses over an ε grid; bounded when no value exceeds its
/// predecessor by more than 10%.
pub fn tightness_probe(
    model: &PotentialModel,
    minima: &[CriticalPoint],
    a: f64,
    epsilon_grid: &[f64],
    truncation_energy: f64,
    quad: QuadratureSpec,
) -> Result<TightnessReport> {
    let mut values = Vec::new();
    let mut z_values = Vec::new();
    for &eps in epsilon_grid {
        let z = partition_function(model, minima, eps, truncation_energy, quad)?;
        let u_ref = z.energy_ref;
        let v = if a >= truncation_energy {
            0.0
        } else if a <= u_ref + 1e-12 * u_ref.abs().max(1.0) {
            // the cut is at or below min U: the region is the whole domain
            z.z_scaled * ((a - u_ref) / eps).exp()
        } else {
            let (s, _) = phase_mass(model, eps, u_ref, Some(a), truncation_energy, None, quad)?;
            s * ((a - u_ref) / eps).exp()
        };
        values.push(v);
        z_values.push(z.z_eps);
    }
    let bounded = values.windows(2).all(|w| w[1] <= 1.1 * w[0]) && values.iter().all(|v| v.is_finite());
    Ok(TightnessReport {
        a,
        epsilons: epsilon_grid.to_vec(),
        values,
        z_values,
        bounded,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaddleBox {
    pub k: f64,
    pub delta: f64,
    /// Along e₁..e_{2d}.
    pub half_widths: Vec<f64>,
    pub center_q: Vec<f64>,
    /// U(σ) + K²δ²
    pub energy_cap: f64,
}

impl SaddleBox {
    pub fn contains(&self, coords: &[f64]) -> bool {
        coords.iter().zip(&self.half_widths).all(|(x, h)| x.abs() <= *h)
    }
}

/// j_ε(x) = Φ(√(μ/γε)·⟨x - (σ,0), v⟩) plus the two cut-offs of the test function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestFunction {
    pub frame: SaddleFrame,
    pub epsilon: f64,
    pub theta: f64,
    pub k: f64,
    pub delta: f64,
    /// √(μ/γε)
    pub scale: f64,
}

impl TestFunction {
    fn arg(&self, q: &[f64], p: &[f64]) -> f64 {
        self.scale * self.frame.v_projection(q, p)
    }

    pub fn j(&self, q: &[f64], p: &[f64]) -> f64 {
        std_normal_cdf(self.arg(q, p))
    }

    /// 1 - j without cancellation.
    pub fn one_minus_j(&self, q: &[f64], p: &[f64]) -> f64 {
        std_normal_cdf(-self.arg(q, p))
    }

    /// Mirror image of x across {⟨x - (σ,0), v⟩ = 0}.
    pub fn reflect(&self, x: &PhaseState) -> PhaseState {
        let d = self.frame.dim;
        let s = self.frame.v_projection(&x.q, &x.p);
        let vv = dot(&self.frame.v, &self.frame.v);
        let c = 2.0 * s / vv;
        let q = (0..d).map(|i| x.q[i] - c * self.frame.v[i]).collect();
        let p = (0..d).map(|i| x.p[i] - c * self.frame.v[d + i]).collect();
        PhaseState { q, p }
    }

    /// Ramp φ_θ in x₁: 0 on the box, 1 at distance θ beyond either x₁ face.
    pub fn phi_theta(&self, x1: f64) -> f64 {
        let a1 = self.k * self.delta / self.frame.lambda1().sqrt();
        smooth_step((x1.abs() - a1) / self.theta)
    }

    /// Cut-off g_ε as a function of V: 1 up to U(σ)+K²δ²/2, 0 from U(σ)+K²δ².
    pub fn g_of_energy(&self, v: f64) -> f64 {
        let kd2 = self.k * self.k * self.delta * self.delta;
        smooth_step((self.frame.u_sigma + kd2 - v) / (0.5 * kd2))
    }
}

impl PhaseFunction for TestFunction {
    fn value(&self, x: &PhaseState) -> f64 {
        self.j(&x.q, &x.p)
    }
    fn gradient(&self, x: &PhaseState) -> Vec<f64> {
        let a = self.arg(&x.q, &x.p);
        let c = self.scale * std_normal_pdf(a);
        self.frame.v.iter().map(|vi| c * vi).collect()
    }
    fn hessian(&self, x: &PhaseState) -> nalgebra::DMatrix<f64> {
        let a = self.arg(&x.q, &x.p);
        let c = -self.scale * self.scale * a * std_normal_pdf(a);
        let v = nalgebra::DVector::from_column_slice(&self.frame.v);
        &v * v.transpose() * c
    }
}

pub fn build_test_function(frame: &SaddleFrame, epsilon: f64, k: f64, theta: f64) -> Result<(TestFunction, SaddleBox)> {
    check_eps(epsilon)?;
    if !(k > 0.0) || !(theta > 0.0) {
        return input("K and θ must be positive");
    }
    let dl = delta(epsilon);
    if dl >= 1.0 {
        return input("δ(ε) must be below 1");
    }
    let half_widths = frame
        .lambda
        .iter()
        .enumerate()
        .map(|(i, l)| {
            if i == 0 {
                k * dl / l.sqrt()
            } else {
                2.0 * k * dl / l.sqrt()
            }
        })
        .collect();
    let tf = TestFunction {
        frame: frame.clone(),
        epsilon,
        theta,
        k,
        delta: dl,
        scale: (frame.mu / (frame.gamma * epsilon)).sqrt(),
    };
    let bx = SaddleBox {
        k,
        delta: dl,
        half_widths,
        center_q: frame.sigma.clone(),
        energy_cap: frame.u_sigma + k * k * dl * dl,
    };
    Ok((tf, bx))
}

/// e^{u_ref/ε} ∫_{Q^±} weight(x̃_d, q) e^{-V/ε} dx̃ on the face x₁ = side·Kδ/√λ₁.
/// `weight` must not depend on the momentum components other than x̃_d.
fn face_integral(
    model: &PotentialModel,
    tf: &TestFunction,
    bx: &SaddleBox,
    side: f64,
    u_ref: f64,
    weight: &(dyn Fn(f64, &[f64]) -> f64 + Sync),
    quad: QuadratureSpec,
    atol: f64,
) -> Result<(f64, f64)> {
    let fr = &tf.frame;
    let d = fr.dim;
    let eps = tf.epsilon;
    let e_cap = bx.energy_cap;
    let hw = &bx.half_widths;
    let x1 = side * hw[0];
    let rule = Rule::new(quad.points)?;
    let w = |v: f64| (-(v - u_ref) / eps).exp();
    let position = |x2: f64| -> Vec<f64> {
        (0..d)
            .map(|i| fr.sigma[i] + x1 * fr.basis[0][i] + if d == 2 { x2 * fr.basis[1][i] } else { 0.0 })
            .collect()
    };
    let out = match d {
        1 => {
            let q = position(0.0);
            let u = model.energy(&q);
            let lim = if u < e_cap {
                hw[1].min((2.0 * (e_cap - u)).sqrt())
            } else {
                0.0
            };
            refine_abs(quad, atol, |panels| {
                Ok(rule.integrate(-lim, lim, panels, &mut |xd| weight(xd, &q) * w(u + 0.5 * xd * xd)))
            })?
        }
        2 => {
            let (b2, b3, b4) = (hw[1], hw[2], hw[3]);
            let u_of = |x2: f64| model.energy(&position(x2));
            let g = |x2: f64| u_of(x2) - e_cap;
            let mut pieces = Vec::new();
            for (a, b) in negative_intervals(&g, -b2, b2, ROOT_GRID) {
                let mut extra = Vec::new();
                for lvl in [
                    e_cap - 0.5 * b3 * b3,
                    e_cap - 0.5 * b4 * b4,
                    e_cap - 0.5 * (b3 * b3 + b4 * b4),
                ] {
                    extra.extend(sign_changes(&|x: f64| u_of(x) - lvl, a, b, 64));
                }
                pieces.push(with_breaks(a, b, &extra));
            }
            let root2pe = (2.0 * PI * eps).sqrt();
            refine_abs(quad, atol, |panels| {
                let parts: Vec<f64> = pieces
                    .iter()
                    .map(|piece| {
                        rule.integrate_pieces(piece, panels, &mut |x2| {
                            let q = position(x2);
                            let u = model.energy(&q);
                            if u >= e_cap {
                                return 0.0;
                            }
                            let room = 2.0 * (e_cap - u);
                            let l3 = b3.min(room.sqrt());
                            let mut inner_breaks = Vec::new();
                            if room > b4 * b4 {
                                let c = (room - b4 * b4).sqrt();
                                inner_breaks.extend([-c, c]);
                            }
                            let br = with_breaks(-l3, l3, &inner_breaks);
                            rule.integrate_pieces(&br, panels, &mut |x3| {
                                let l4 = b4.min((room - x3 * x3).max(0.0).sqrt());
                                let gx4 = root2pe * erf(l4 / (2.0 * eps).sqrt());
                                weight(x3, &q) * w(u + 0.5 * x3 * x3) * gx4
                            })
                        })
                    })
                    .collect();
                Ok(crate::quadrature::pairwise_sum(&parts))
            })?
        }
        _ => return input("capacity quadrature supports d ≤ 2"),
    };
    Ok((out.value, out.rel_change))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapacityEstimate {
    pub epsilon: f64,
    pub k: f64,
    /// Plus-face integral with h* at its W_m plateau value 1.
    pub boundary_integral: f64,
    pub alpha_epsilon: f64,
    pub ratio: f64,
    /// Minus-face integral with h* at its W_s plateau value 0.
    pub minus_side_integral: f64,
    pub minus_ratio: f64,
    /// Minus-face integral with h*(q, p) replaced by j_ε(q, -p).
    pub minus_side_surrogate: f64,
    pub minus_surrogate_ratio: f64,
    pub face_q: Vec<f64>,
    pub rel_change: f64,
}

/// α_ε Z_ε e^{U(σ)/ε} 2π / (2πε)^d, which equals μ/√|det H_U^σ|.
pub fn alpha_identity(alpha: f64, z: &PartitionFunction, frame: &SaddleFrame) -> f64 {
    let d = frame.dim as i32;
    alpha * z.z_scaled / z.weight(frame.u_sigma) * 2.0 * PI / (2.0 * PI * z.epsilon).powi(d)
}

pub fn alpha_epsilon(frame: &SaddleFrame, z: &PartitionFunction) -> f64 {
    let d = frame.dim as i32;
    (2.0 * PI * z.epsilon).powi(d) / (2.0 * PI) * frame.mu / frame.det_hessian_sigma().abs().sqrt()
        * z.weight(frame.u_sigma)
        / z.z_scaled
}

/// Plus- and minus-face capacity integrals against α_ε. The frame is first
/// oriented so that its + face looks at `towards_m`.
pub fn boundary_capacity_integral(
    model: &PotentialModel,
    frame: &SaddleFrame,
    towards_m: &[f64],
    epsilon: f64,
    k: f64,
    z: &PartitionFunction,
    quad: QuadratureSpec,
) -> Result<CapacityEstimate> {
    check_dim(model)?;
    if (z.epsilon - epsilon).abs() > 0.0 {
        return input("partition function computed at a different ε");
    }
    let frame = frame.oriented_toward(towards_m);
    let (tf, bx) = build_test_function(&frame, epsilon, k, DEFAULT_THETA)?;
    let u_ref = z.energy_ref;
    let d = frame.dim;
    let plus_weight = |xd: f64, q: &[f64]| {
        let mut p = vec![0.0; d];
        p[0] = xd;
        -xd * tf.one_minus_j(q, &momentum_in_q_frame(&frame, &p))
    };
    let alpha = alpha_epsilon(&frame, z);
    let atol = 1e-10 * alpha * z.z_scaled;
    let (plus, rel_plus) = face_integral(model, &tf, &bx, 1.0, u_ref, &plus_weight, quad, atol)?;
    let surrogate_weight = |xd: f64, q: &[f64]| {
        let mut p = vec![0.0; d];
        p[0] = xd;
        let pp = momentum_in_q_frame(&frame, &p);
        let flipped: Vec<f64> = pp.iter().map(|x| -x).collect();
        xd * tf.j(q, &pp) * tf.j(q, &flipped)
    };
    let (minus_sur, rel_minus) = face_integral(model, &tf, &bx, -1.0, u_ref, &surrogate_weight, quad, atol)?;
    let boundary_integral = plus / z.z_scaled;
    let minus_side_surrogate = minus_sur / z.z_scaled;
    let face_q: Vec<f64> = (0..d)
        .map(|i| frame.sigma[i] + bx.half_widths[0] * frame.basis[0][i])
        .collect();
    Ok(CapacityEstimate {
        epsilon,
        k,
        boundary_integral,
        alpha_epsilon: alpha,
        ratio: boundary_integral / alpha,
        minus_side_integral: 0.0,
        minus_ratio: 0.0,
        minus_side_surrogate,
        minus_surrogate_ratio: minus_side_surrogate / alpha,
        face_q,
        rel_change: rel_plus.max(rel_minus),
    })
}

/// Momentum with frame components (x_{d+1}, x_{d+2}, ...) = `coords` back in
/// the original axes: p = Σ coordsᵢ wᵢ.
fn momentum_in_q_frame(frame: &SaddleFrame, coords: &[f64]) -> Vec<f64> {
    let d = frame.dim;
    let mut p = vec![0.0; d];
    for (i, c) in coords.iter().enumerate() {
        for (pk, ek) in p.iter_mut().zip(&frame.basis[d + i][d..]) {
            *pk += c * ek;
        }
    }
    p
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NumeratorEstimate {
    pub epsilon: f64,
    /// (1/Z) ∫_{W_m ∩ {V < level}} e^{-V/ε}
    pub value: f64,
    /// (1/Z)(2πε)^d e^{-U(m)/ε}/√det H_U^m
    pub laplace_formula: f64,
    pub ratio: f64,
    pub level: f64,
    pub rel_change: f64,
}

/// Numerator over the sublevel component of `minimum` below `level`
/// (`None`: the truncation energy of `z`).
pub fn numerator_integral_with(
    model: &PotentialModel,
    minimum: &CriticalPoint,
    all_minima: &[Vec<f64>],
    level: Option<f64>,
    z: &PartitionFunction,
    quad: QuadratureSpec,
) -> Result<NumeratorEstimate> {
    check_dim(model)?;
    let eps = z.epsilon;
    let d = model.dim();
    let level = level.unwrap_or(if z.truncation_energy.is_finite() {
        z.truncation_energy
    } else {
        minimum.energy + TRUNCATION_GAP
    });
    let laplace_formula =
        (2.0 * PI * eps).powi(d as i32) * z.weight(minimum.energy) / minimum.hessian_determinant().sqrt() / z.z_scaled;
    let idx = all_minima
        .iter()
        .position(|m| norm(&m.iter().zip(&minimum.location).map(|(a, b)| a - b).collect::<Vec<_>>()) < 1e-6)
        .ok_or_else(|| Error::Input("minimum not among the supplied minima".into()))?;
    if level <= minimum.energy {
        return Ok(NumeratorEstimate {
            epsilon: eps,
            value: 0.0,
            laplace_formula,
            ratio: 0.0,
            level,
            rel_change: 0.0,
        });
    }
    let keep = move |q: &[f64]| descend_to_minimum(model, q, all_minima) == Some(idx);
    let keep_ref: Keep<'_> = &keep;
    let keep_opt = if all_minima.len() > 1 { Some(keep_ref) } else { None };
    let (scaled, rel_change) = phase_mass(model, eps, z.energy_ref, None, level, keep_opt, quad)?;
    let value = scaled / z.z_scaled;
    Ok(NumeratorEstimate {
        epsilon: eps,
        value,
        laplace_formula,
        ratio: value / laplace_formula,
        level,
        rel_change,
    })
}

/// Numerator below U(σ) - K²δ² in the well of m.
pub fn numerator_integral(
    model: &PotentialModel,
    report: &LandscapeReport,
    k: f64,
    z: &PartitionFunction,
    quad: QuadratureSpec,
) -> Result<NumeratorEstimate> {
    let dl = delta(z.epsilon);
    let level = report.saddle.energy - k * k * dl * dl;
    numerator_integral_with(model, &report.m, &report.minima_positions(), Some(level), z, quad)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeRatio {
    pub mean_time_estimate: f64,
    pub ek_cross_check_ratio: f64,
}

pub fn predicted_time_ratio(
    numerator: &NumeratorEstimate,
    cap: &CapacityEstimate,
    ek: &EkPrediction,
) -> Result<TimeRatio> {
    if numerator.epsilon != cap.epsilon || cap.epsilon != ek.epsilon {
        return input("numerator, capacity and prediction use different ε");
    }
    if cap.boundary_integral == 0.0 || !cap.boundary_integral.is_finite() {
        return Err(Error::Division("capacity estimate is zero".into()));
    }
    let mean_time_estimate = numerator.value / cap.boundary_integral;
    Ok(TimeRatio {
        mean_time_estimate,
        ek_cross_check_ratio: mean_time_estimate / ek.predicted_mean_time,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HarmonicityReport {
    pub n_samples: usize,
    /// max |L̃_ε j_ε| with L̃ built from the quadratic model at σ.
    pub max_linearized: f64,
    /// mean |L_ε j_ε| over the same samples.
    pub mean_full: f64,
    /// ∫_{K ∩ J} |L_ε j_ε| dμ_ε / α_ε (quadrature for d = 1, uniform sampling for d = 2).
    pub integral_over_alpha: f64,
}

fn sample_box_region(
    model: &PotentialModel,
    tf: &TestFunction,
    bx: &SaddleBox,
    n: usize,
    seed: u64,
) -> (Vec<PhaseState>, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    let mut tries = 0;
    while out.len() < n && tries < 1000 * n {
        tries += 1;
        let coords: Vec<f64> = bx.half_widths.iter().map(|h| rng.random_range(-*h..=*h)).collect();
        let (q, p) = tf.frame.from_frame(&coords);
        let x = PhaseState { q, p };
        if model.hamiltonian(&x) < bx.energy_cap {
            out.push(x);
        }
    }
    (out, tries)
}

pub fn harmonicity_residual(
    model: &PotentialModel,
    tf: &TestFunction,
    bx: &SaddleBox,
    z: &PartitionFunction,
    n_samples: usize,
    seed: u64,
    quad: QuadratureSpec,
) -> Result<HarmonicityReport> {
    let fr = &tf.frame;
    let (gamma, eps) = (fr.gamma, tf.epsilon);
    let quadratic = PotentialModel::quadratic(&fr.sigma, &fr.hessian_matrix(), fr.u_sigma)?;
    let (samples, tries) = sample_box_region(model, tf, bx, n_samples, seed);
    if samples.is_empty() {
        return Err(Error::Estimation(
            "no samples inside the box below the energy cap".into(),
        ));
    }
    let mut max_lin = 0.0f64;
    let mut sum_full = 0.0;
    for x in &samples {
        max_lin = max_lin.max(apply_generator(&quadratic, gamma, eps, tf, x, false)?.abs());
        sum_full += apply_generator(model, gamma, eps, tf, x, false)?.abs();
    }
    let alpha = alpha_epsilon(fr, z);
    let d = fr.dim;
    let integral = if d == 1 {
        let rule = Rule::new(quad.points)?;
        let e_cap = bx.energy_cap;
        let (a1, b2) = (bx.half_widths[0], bx.half_widths[1]);
        let u = fr.basis[0][0];
        let q_of = |x1: f64| fr.sigma[0] + x1 * u;
        let u_of = |x1: f64| model.energy(&[q_of(x1)]);
        let g = |x1: f64| u_of(x1) - e_cap;
        let mut pieces = Vec::new();
        for (a, b) in negative_intervals(&g, -a1, a1, ROOT_GRID) {
            let mut extra = sign_changes(&|x: f64| u_of(x) - (e_cap - 0.5 * b2 * b2), a, b, 64);
            // |L j| has a kink where the Taylor remainder of ∇U changes sign
            let rem = |x1: f64| {
                let q = q_of(x1);
                model.gradient(&[q])[0] - fr.hessian_sigma[0][0] * (q - fr.sigma[0])
            };
            extra.extend(sign_changes(&rem, a, b, 256));
            if a < 0.0 && b > 0.0 {
                extra.push(0.0);
            }
            pieces.push(with_breaks(a, b, &extra));
        }
        let out = refine_abs(quad, 1e-10 * alpha * z.z_scaled, |panels| {
            let parts: Vec<f64> = pieces
                .iter()
                .map(|piece| {
                    rule.integrate_pieces(piece, panels, &mut |x1| {
                        let q = q_of(x1);
                        let uq = model.energy(&[q]);
                        let lim = b2.min((2.0 * (e_cap - uq)).max(0.0).sqrt());
                        rule.integrate(-lim, lim, panels, &mut |xp| {
                            let x = PhaseState {
                                q: vec![q],
                                p: vec![xp * u],
                            };
                            generator_unchecked(model, gamma, eps, tf, &x, false).abs() * z.weight(uq + 0.5 * xp * xp)
                        })
                    })
                })
                .collect();
            Ok(crate::quadrature::pairwise_sum(&parts))
        })?;
        out.value / z.z_scaled / alpha
    } else {
        let vol: f64 = bx.half_widths.iter().map(|h| 2.0 * h).product();
        let s: f64 = samples
            .iter()
            .map(|x| generator_unchecked(model, gamma, eps, tf, x, false).abs() * z.weight(model.hamiltonian(x)))
            .sum();
        // uniform box draws, rejection folded back into the estimate
        vol * s / tries as f64 / z.z_scaled / alpha
    };
    Ok(HarmonicityReport {
        n_samples: samples.len(),
        max_linearized: max_lin,
        mean_full: sum_full / samples.len() as f64,
        integral_over_alpha: integral,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxEnergyReport {
    pub n_samples: usize,
    /// min over lateral faces of V - U(σ) - (5/4)K²δ²
    pub lateral_margin: f64,
    /// the same in units of K²δ²
    pub lateral_margin_units: f64,
    /// Largest a with ⟨x,v⟩ ≥ aKδ or V ≥ U(σ) + aK²δ² on the + face (mirrored on the - face).
    pub dichotomy_a: f64,
    pub pass: bool,
}

pub fn box_boundary_energy_check(
    model: &PotentialModel,
    tf: &TestFunction,
    bx: &SaddleBox,
    n_samples: usize,
    seed: u64,
) -> Result<BoxEnergyReport> {
    if n_samples == 0 {
        return input("need at least one sample");
    }
    let fr = &tf.frame;
    let n = bx.half_widths.len();
    let kd = bx.k * bx.delta;
    let kd2 = kd * kd;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lateral = f64::INFINITY;
    let mut a_best = f64::INFINITY;
    for i in 0..n_samples {
        let mut coords: Vec<f64> = bx.half_widths.iter().map(|h| rng.random_range(-*h..=*h)).collect();
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        if i % 2 == 0 {
            let face = rng.random_range(1..n);
            coords[face] = sign * bx.half_widths[face];
            let (q, p) = fr.from_frame(&coords);
            let v = model.hamiltonian(&PhaseState { q, p });
            lateral = lateral.min(v - fr.u_sigma - 1.25 * kd2);
        } else {
            coords[0] = sign * bx.half_widths[0];
            let (q, p) = fr.from_frame(&coords);
            let s = fr.v_projection(&q, &p);
            let v = model.hamiltonian(&PhaseState { q, p });
            let a = (sign * s / kd).max((v - fr.u_sigma) / kd2);
            a_best = a_best.min(a);
        }
    }
    Ok(BoxEnergyReport {
        n_samples,
        lateral_margin: lateral,
        lateral_margin_units: lateral / kd2,
        dichotomy_a: a_best,
        pass: lateral >= 0.0 && a_best > 0.0,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapacityReport {
    pub epsilon: f64,
    pub gamma: f64,
    pub k: f64,
    #[serde(rename = "Z_eps")]
    pub z_eps: f64,
    pub log_z_eps: f64,
    pub partition: PartitionFunction,
    pub numerator: NumeratorEstimate,
    pub capacity_estimate: CapacityEstimate,
    pub predicted_mean_time: f64,
    pub ek_prediction: EkPrediction,
    pub ek_cross_check_ratio: f64,
    pub margins: BoxEnergyReport,
}

/// Z, numerator, boundary integral and their ratio against the closed form.
pub fn capacity_report(
    model: &PotentialModel,
    report: &LandscapeReport,
    frame: &SaddleFrame,
    epsilon: f64,
    k: f64,
    quad: QuadratureSpec,
) -> Result<CapacityReport> {
    let minima = [report.m.clone(), report.s.clone()];
    let z = partition_function(model, &minima, epsilon, default_truncation(report), quad)?;
    let numerator = numerator_integral(model, report, k, &z, quad)?;
    let cap = boundary_capacity_integral(model, frame, &report.m.location, epsilon, k, &z, quad)?;
    let ek = ek_prediction(report, frame, epsilon, Regime::Underdamped)?;
    let ratio = predicted_time_ratio(&numerator, &cap, &ek)?;
    let (tf, bx) = build_test_function(&frame.oriented_toward(&report.m.location), epsilon, k, DEFAULT_THETA)?;
    let margins = box_boundary_energy_check(model, &tf, &bx, 2000, 5)?;
    Ok(CapacityReport {
        epsilon,
        gamma: frame.gamma,
        k,
        z_eps: z.z_eps,
        log_z_eps: z.log_z_eps,
        partition: z,
        numerator,
        capacity_estimate: cap,
        predicted_mean_time: ratio.mean_time_estimate,
        ek_prediction: ek,
        ek_cross_check_ratio: ratio.ek_cross_check_ratio,
        margins,
    })
}
