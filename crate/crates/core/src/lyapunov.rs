//! Lyapunov functions for the Langevin generator.
//!
//! Both the global and the local function have the form
//!
//! ```text
//! H(x) = |p|²/2 + a⟨q-z, p⟩ + a²|q-z|² + U(q) - U(z),   a = (γ-λ)/2
//! ```
//!
//! (z = 0 and U(z) → 0 for the global one). Every existential constant is
//! replaced by a measured one over an explicit, seeded sample set.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    apply_generator, integrate_until, IntegratorConfig, PhaseFunction, ProcessKind, Scheme, StopReason, StopSpec,
};
use crate::error::{input, Error, Result};
use crate::landscape::{CriticalPoint, PointKind};
use crate::potential::{PhaseState, PotentialModel};
use crate::stats::least_squares;

/// Shells used to measure the growth constant: 0.25, 0.5, ..., 10.
const GROWTH_SHELLS: usize = 40;
const GROWTH_DIRECTIONS: usize = 64;
/// Points per unit radius when scanning |q| ≤ M for the momentum cutoff.
const SUP_DENSITY: usize = 400;
/// Safety factor on sampled suprema.
const SUP_MARGIN: f64 = 1.1;
const RHO_START: f64 = 1.0;
const RHO_SHRINK: f64 = 0.8;
const RHO_MIN: f64 = 1e-3;
/// Local growth constant as a fraction of its quadratic-form value.
const LOCAL_C_FRACTION: f64 = 0.25;
const LOCAL_SAMPLES: usize = 4000;
const SEED: u64 = 0x1a9_0f00d;

/// H around `center`, as a phase function with analytic derivatives.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapunovFn {
    pub center: Vec<f64>,
    pub u_center: f64,
    /// (γ - λ)/2
    pub a: f64,
    #[serde(skip)]
    model: Option<PotentialModel>,
}

impl LyapunovFn {
    pub fn new(model: &PotentialModel, center: Vec<f64>, u_center: f64, a: f64) -> Self {
        Self {
            center,
            u_center,
            a,
            model: Some(model.clone()),
        }
    }

    fn model(&self) -> &PotentialModel {
        self.model.as_ref().expect("LyapunovFn without a model")
    }

    pub fn eval(&self, q: &[f64], p: &[f64]) -> f64 {
        let a = self.a;
        let mut s = 0.0;
        for i in 0..q.len() {
            let y = q[i] - self.center[i];
            s += 0.5 * p[i] * p[i] + a * y * p[i] + a * a * y * y;
        }
        s + self.model().energy(q) - self.u_center
    }

    /// |∇_p H|² = |p + a(q - z)|²
    pub fn momentum_gradient_sq(&self, x: &PhaseState) -> f64 {
        (0..x.dim())
            .map(|i| (x.p[i] + self.a * (x.q[i] - self.center[i])).powi(2))
            .sum()
    }
}

impl PhaseFunction for LyapunovFn {
    fn value(&self, x: &PhaseState) -> f64 {
        self.eval(&x.q, &x.p)
    }

    fn gradient(&self, x: &PhaseState) -> Vec<f64> {
        let d = x.dim();
        let a = self.a;
        let du = self.model().gradient(&x.q);
        let mut g = vec![0.0; 2 * d];
        for i in 0..d {
            let y = x.q[i] - self.center[i];
            g[i] = a * x.p[i] + 2.0 * a * a * y + du[i];
            g[d + i] = x.p[i] + a * y;
        }
        g
    }

    fn hessian(&self, x: &PhaseState) -> DMatrix<f64> {
        let d = x.dim();
        let a = self.a;
        let mut h = DMatrix::zeros(2 * d, 2 * d);
        h.view_mut((0, 0), (d, d)).copy_from(&self.model().hessian(&x.q));
        for i in 0..d {
            h[(i, i)] += 2.0 * a * a;
            h[(i, d + i)] = a;
            h[(d + i, i)] = a;
            h[(d + i, d + i)] = 1.0;
        }
        h
    }
}

/// exp(αH/ε)
struct ExpLyapunov<'a> {
    h: &'a LyapunovFn,
    k: f64,
}

impl PhaseFunction for ExpLyapunov<'_> {
    fn value(&self, x: &PhaseState) -> f64 {
        (self.k * self.h.value(x)).exp()
    }
    fn gradient(&self, x: &PhaseState) -> Vec<f64> {
        let e = self.value(x);
        self.h.gradient(x).into_iter().map(|g| e * self.k * g).collect()
    }
    fn hessian(&self, x: &PhaseState) -> DMatrix<f64> {
        let e = self.value(x);
        let g = DMatrix::from_column_slice(2 * x.dim(), 1, &self.h.gradient(x));
        (self.h.hessian(x) * self.k + &g * g.transpose() * (self.k * self.k)) * e
    }
}

/// Largest λ ∈ (0, γ) with λ(γ-λ)/2 < c and 2λ/(γ-λ) < c (supremum, not attained).
pub fn lambda_bound(c: f64, gamma: f64) -> f64 {
    let second = c * gamma / (2.0 + c);
    let disc = gamma * gamma - 8.0 * c;
    let first = if disc > 0.0 { 0.5 * (gamma - disc.sqrt()) } else { gamma };
    second.min(first).min(gamma)
}

fn lambda_ok(lambda: f64, c: f64, gamma: f64) -> bool {
    lambda > 0.0 && lambda < gamma && lambda * (gamma - lambda) / 2.0 < c && 2.0 * lambda / (gamma - lambda) < c
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalLyapunov {
    pub gamma: f64,
    pub lambda: f64,
    /// Measured growth constant and the radius beyond which it holds.
    pub c: f64,
    pub m1: f64,
    pub m: f64,
    pub r: f64,
    /// Sampled sup over |q| ≤ M entering R (before the safety factor).
    pub sup_term: f64,
    pub h: LyapunovFn,
}

impl GlobalLyapunov {
    pub fn in_compact(&self, x: &PhaseState) -> bool {
        norm(&x.q) <= self.m && norm(&x.p) <= self.r
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn unit_directions(dim: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    crate::potential::sample_directions(dim, count, seed)
}

/// ⟨∇U(q), q⟩ - (2λ/(γ-λ))U(q) - λ(γ-λ)/2 |q|²
fn drift_term(model: &PotentialModel, q: &[f64], lambda: f64, gamma: f64) -> f64 {
    let g = model.gradient(q);
    let qg: f64 = q.iter().zip(&g).map(|(a, b)| a * b).sum();
    let a = (gamma - lambda) / 2.0;
    qg - lambda / a * model.energy(q) - lambda * a * q.iter().map(|x| x * x).sum::<f64>()
}

/// Follows the construction in the non-explosion argument: measure (c, M₁),
/// take λ at half its admissible bound, then M and R (R for ε = 1).
pub fn build_global_lyapunov(model: &PotentialModel, gamma: f64) -> Result<GlobalLyapunov> {
    if !(gamma > 0.0) {
        return input("γ must be positive");
    }
    let d = model.dim();
    let dirs = unit_directions(d, GROWTH_DIRECTIONS, SEED);
    let radii: Vec<f64> = (1..=GROWTH_SHELLS)
        .map(|k| 10.0 * k as f64 / GROWTH_SHELLS as f64)
        .collect();
    let shell_min: Vec<f64> = radii
        .iter()
        .map(|&r| {
            dirs.iter()
                .map(|u| {
                    let q: Vec<f64> = u.iter().map(|x| x * r).collect();
                    let g = model.gradient(&q);
                    let qg: f64 = q.iter().zip(&g).map(|(a, b)| a * b).sum();
                    qg / (r * r + model.energy(&q))
                })
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    // first shell from which every outer shell has a positive ratio
    let k1 = (0..radii.len())
        .find(|&k| shell_min[k..].iter().all(|&v| v > 0.0))
        .ok_or_else(|| Error::Construction("growth ratio not positive on the outermost shell".into()))?;
    let m1 = radii[k1];
    let c = 0.5 * shell_min[k1..].iter().copied().fold(f64::INFINITY, f64::min);
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::Construction(format!("measured growth constant c = {c}")));
    }
    let lambda = 0.5 * lambda_bound(c, gamma);
    debug_assert!(lambda_ok(lambda, c, gamma));
    let a = (gamma - lambda) / 2.0;
    let m_req = (d as f64 * gamma / (a * (c - lambda * a))).sqrt();
    let m = 1.01 * m1.max(m_req);

    // sup over |q| ≤ M: radial lines through the direction set plus the origin
    let steps = (SUP_DENSITY as f64 * m).ceil() as usize;
    let sup_dirs = unit_directions(d, if d == 1 { 2 } else { 256 }, SEED + 1);
    let mut sup = drift_term(model, &vec![0.0; d], lambda, gamma).abs();
    for u in &sup_dirs {
        for k in 1..=steps {
            let r = m * k as f64 / steps as f64;
            let q: Vec<f64> = u.iter().map(|x| x * r).collect();
            sup = sup.max(drift_term(model, &q, lambda, gamma).abs());
        }
    }
    let eps_worst = 1.0;
    let r = ((2.0 / gamma) * (a * SUP_MARGIN * sup + d as f64 * gamma * eps_worst)).sqrt();
    Ok(GlobalLyapunov {
        gamma,
        lambda,
        c,
        m1,
        m,
        r,
        sup_term: sup,
        h: LyapunovFn::new(model, vec![0.0; d], 0.0, a),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub x: PhaseState,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalVerification {
    pub epsilon: f64,
    pub n_samples: usize,
    pub violations: Vec<Violation>,
    /// max of L H + λH over the samples
    pub max_residual: f64,
    /// max |generator route - closed form| / scale
    pub identity_residual: f64,
}

/// Uniform samples from the box |q_i| ≤ 2M, |p_i| ≤ 2R with K removed.
pub fn exterior_samples(g: &GlobalLyapunov, dim: usize, n: usize, seed: u64) -> Vec<PhaseState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let q: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0 * g.m..2.0 * g.m)).collect();
        let p: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0 * g.r..2.0 * g.r)).collect();
        let x = PhaseState { q, p };
        if !g.in_compact(&x) {
            out.push(x);
        }
    }
    out
}

/// Check L_ε H + λH ≤ 0 at every sample outside K.
pub fn verify_global_lyapunov(
    g: &GlobalLyapunov,
    model: &PotentialModel,
    epsilon: f64,
    samples: &[PhaseState],
) -> Result<GlobalVerification> {
    let d = model.dim() as f64;
    let a = g.h.a;
    let rows: Vec<(f64, f64, bool)> = samples
        .par_iter()
        .filter(|x| !g.in_compact(x))
        .map(|x| {
            let lh = apply_generator(model, g.gamma, epsilon, &g.h, x, false)?;
            let res = lh + g.lambda * g.h.value(x);
            let closed = -0.5 * g.gamma * x.p.iter().map(|v| v * v).sum::<f64>()
                - a * drift_term(model, &x.q, g.lambda, g.gamma)
                + d * g.gamma * epsilon;
            let scale = 1.0 + lh.abs() + g.lambda * g.h.value(x).abs();
            Ok((res, (res - closed).abs() / scale, res > 0.0))
        })
        .collect::<Result<_>>()?;
    let kept: Vec<&PhaseState> = samples.iter().filter(|x| !g.in_compact(x)).collect();
    let violations = rows
        .iter()
        .zip(&kept)
        .filter(|(r, _)| r.2)
        .map(|(r, x)| Violation {
            x: (*x).clone(),
            residual: r.0,
        })
        .collect();
    Ok(GlobalVerification {
        epsilon,
        n_samples: rows.len(),
        violations,
        max_residual: rows.iter().map(|r| r.0).fold(f64::NEG_INFINITY, f64::max),
        identity_residual: rows.iter().map(|r| r.1).fold(0.0, f64::max),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalLyapunov {
    pub center: Vec<f64>,
    pub gamma: f64,
    pub lambda: f64,
    pub rho: f64,
    pub alpha: f64,
    /// Local growth constant used to pick ρ and λ.
    pub c: f64,
    /// Measured sup of |∇_p H|²/H (with margin).
    pub big_c: f64,
    /// Sampled min of H over the sphere of radius ρ: sublevel sets below it sit inside the ball.
    pub delta_admissible: f64,
    /// Sampled min of H / |x - (z,0)|².
    pub dominance: f64,
    pub h: LyapunovFn,
}

/// Uniform draw from the phase-space ball of radius ρ around (z, 0).
fn phase_ball(center: &[f64], rho: f64, n: usize, seed: u64) -> Vec<PhaseState> {
    let d = center.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let g: Vec<f64> = (0..2 * d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let nn = norm(&g);
            let u: f64 = rng.random();
            let s = rho * u.powf(1.0 / (2 * d) as f64) / nn;
            PhaseState {
                q: (0..d).map(|i| center[i] + s * g[i]).collect(),
                p: (0..d).map(|i| s * g[d + i]).collect(),
            }
        })
        .collect()
}

pub fn build_local_lyapunov(model: &PotentialModel, z: &CriticalPoint, gamma: f64) -> Result<LocalLyapunov> {
    if z.kind != PointKind::Minimum {
        return input("local Lyapunov function needs a minimum with positive-definite Hessian");
    }
    if !(gamma > 0.0) {
        return input("γ must be positive");
    }
    let d = model.dim();
    let zq = &z.location;
    let uz = z.energy;
    // ⟨Ay,y⟩/(|y|² + ⟨Ay,y⟩/2) ≥ λ_min/(1 + λ_min/2) for the quadratic part
    let lmin = z.hessian_eigenvalues[0];
    let c = LOCAL_C_FRACTION * lmin / (1.0 + 0.5 * lmin);
    let holds = |rho: f64| {
        phase_ball(zq, rho, LOCAL_SAMPLES, SEED + 2).iter().all(|x| {
            let y: Vec<f64> = (0..d).map(|i| x.q[i] - zq[i]).collect();
            let g = model.gradient(&x.q);
            let lhs: f64 = g.iter().zip(&y).map(|(a, b)| a * b).sum();
            lhs >= c * (y.iter().map(|v| v * v).sum::<f64>() + model.energy(&x.q) - uz)
        })
    };
    let mut rho = RHO_START;
    while !holds(rho) {
        rho *= RHO_SHRINK;
        if rho < RHO_MIN {
            return Err(Error::Construction("no admissible ρ above 1e-3".into()));
        }
    }
    let lambda = 0.5 * lambda_bound(c, gamma);
    let a = (gamma - lambda) / 2.0;
    let h = LyapunovFn::new(model, zq.clone(), uz, a);
    let samples = phase_ball(zq, rho, LOCAL_SAMPLES, SEED + 3);
    let mut big_c = 0.0f64;
    let mut dominance = f64::INFINITY;
    for x in &samples {
        let hv = h.value(x);
        let r2: f64 = (0..d).map(|i| (x.q[i] - zq[i]).powi(2) + x.p[i] * x.p[i]).sum();
        if r2 > 1e-12 {
            big_c = big_c.max(h.momentum_gradient_sq(x) / hv);
            dominance = dominance.min(hv / r2);
        }
    }
    let big_c = SUP_MARGIN * big_c;
    let delta_admissible = unit_directions(2 * d, 512, SEED + 4)
        .iter()
        .map(|u| {
            h.eval(
                &(0..d).map(|i| zq[i] + rho * u[i]).collect::<Vec<_>>(),
                &(0..d).map(|i| rho * u[d + i]).collect::<Vec<_>>(),
            )
        })
        .fold(f64::INFINITY, f64::min);
    Ok(LocalLyapunov {
        center: zq.clone(),
        gamma,
        lambda,
        rho,
        alpha: lambda / (2.0 * big_c * gamma),
        c,
        big_c,
        delta_admissible,
        dominance,
        h,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalVerification {
    pub epsilon: f64,
    pub n_samples: usize,
    pub violations_linear: usize,
    pub violations_exponential: usize,
    /// max of L H + λH - dγε
    pub max_residual_linear: f64,
    /// max of L e^{αH/ε} / e^{αH/ε} - αdγ
    pub max_residual_exponential: f64,
}

/// Tolerance for the equality case at (z, 0).
const LOCAL_TOL: f64 = 1e-9;

pub fn local_samples(l: &LocalLyapunov, n: usize, seed: u64) -> Vec<PhaseState> {
    phase_ball(&l.center, l.rho, n, seed)
}

pub fn verify_local_inequalities(
    l: &LocalLyapunov,
    model: &PotentialModel,
    epsilon: f64,
    samples: &[PhaseState],
) -> Result<LocalVerification> {
    let d = model.dim() as f64;
    let g = l.gamma;
    let ex = ExpLyapunov {
        h: &l.h,
        k: l.alpha / epsilon,
    };
    let rows: Vec<(f64, f64)> = samples
        .par_iter()
        .map(|x| {
            let lh = apply_generator(model, g, epsilon, &l.h, x, false)?;
            let r1 = lh + l.lambda * l.h.value(x) - d * g * epsilon;
            let le = apply_generator(model, g, epsilon, &ex, x, false)?;
            let r2 = le / ex.value(x) - l.alpha * d * g;
            Ok((r1, r2))
        })
        .collect::<Result<_>>()?;
    let tol1 = LOCAL_TOL * (1.0 + d * g * epsilon);
    let tol2 = LOCAL_TOL * (1.0 + l.alpha * d * g);
    Ok(LocalVerification {
        epsilon,
        n_samples: rows.len(),
        violations_linear: rows.iter().filter(|r| r.0 > tol1).count(),
        violations_exponential: rows.iter().filter(|r| r.1 > tol2).count(),
        max_residual_linear: rows.iter().map(|r| r.0).fold(f64::NEG_INFINITY, f64::max),
        max_residual_exponential: rows.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExitProbeSpec {
    pub a: f64,
    pub b: f64,
    pub t: f64,
    pub n_traj: usize,
    pub dt: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExitProbe {
    pub epsilon: f64,
    pub exits: usize,
    pub n_traj: usize,
    pub probability: f64,
    /// Rule-of-three bound when no exit was seen.
    pub upper_bound: Option<f64>,
}

/// Point with H ≥ a on the ray from (z,0) along u (upper end of a bisection).
fn level_point(h: &LyapunovFn, z: &[f64], u: &[f64], rho: f64, a: f64) -> PhaseState {
    let d = z.len();
    let at = |s: f64| PhaseState {
        q: (0..d).map(|i| z[i] + s * u[i]).collect(),
        p: (0..d).map(|i| s * u[d + i]).collect(),
    };
    let (mut lo, mut hi) = (0.0, rho);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if h.value(&at(mid)) >= a {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    at(hi)
}

/// Fraction of trajectories started on {H = a} that reach {H ≥ b} by time t.
pub fn exit_probability_probe(
    l: &LocalLyapunov,
    model: &PotentialModel,
    epsilon: f64,
    spec: &ExitProbeSpec,
) -> Result<ExitProbe> {
    if !(spec.a > 0.0 && spec.a <= spec.b) {
        return input("need 0 < a ≤ b");
    }
    if spec.b >= l.delta_admissible {
        return input(format!(
            "b = {} leaves B(z, ρ): sublevel sets are contained only below {}",
            spec.b, l.delta_admissible
        ));
    }
    if spec.n_traj == 0 {
        return input("n_traj must be at least 1");
    }
    let ic = IntegratorConfig::new(Scheme::SplittingObabo, spec.dt, spec.t, spec.seed, 0)?;
    let d = model.dim();
    let dirs = unit_directions(2 * d, spec.n_traj + 2 * d, spec.seed);
    let hfun = l.h.clone();
    let f: crate::dynamics::LevelFn = Arc::new(move |q: &[f64], p: &[f64]| hfun.eval(q, p));
    let stops = [StopSpec::Level { f, level: spec.b }];
    let exits: Vec<bool> = (0..spec.n_traj)
        .into_par_iter()
        .map(|i| {
            let x0 = level_point(&l.h, &l.center, &dirs[2 * d + i], l.rho, spec.a);
            let mut c = ic;
            c.stream_id = i as u64;
            let ev = integrate_until(ProcessKind::Forward, model, l.gamma, epsilon, &x0, &stops, &c)?;
            Ok(ev.reason == StopReason::EnergyLevelCrossed)
        })
        .collect::<Result<_>>()?;
    let k = exits.iter().filter(|&&e| e).count();
    let n = spec.n_traj as f64;
    Ok(ExitProbe {
        epsilon,
        exits: k,
        n_traj: spec.n_traj,
        probability: k as f64 / n,
        upper_bound: (k == 0).then_some(3.0 / n),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExitEnvelope {
    pub probes: Vec<ExitProbe>,
    /// Fitted slope of log P against (b - a)/ε over ε values with exits.
    pub slope: Option<f64>,
}

pub fn exit_envelope(
    l: &LocalLyapunov,
    model: &PotentialModel,
    eps_grid: &[f64],
    spec: &ExitProbeSpec,
) -> Result<ExitEnvelope> {
    let probes: Vec<ExitProbe> = eps_grid
        .iter()
        .map(|&e| exit_probability_probe(l, model, e, spec))
        .collect::<Result<_>>()?;
    let pts: Vec<(f64, f64)> = probes
        .iter()
        .filter(|p| p.exits > 0)
        .map(|p| ((spec.b - spec.a) / p.epsilon, p.probability.ln()))
        .collect();
    let slope = (pts.len() >= 2).then(|| least_squares(&pts).0);
    Ok(ExitEnvelope { probes, slope })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::landscape::analyze;
    use proptest::prelude::*;

    fn quartic() -> (PotentialModel, crate::landscape::LandscapeReport) {
        let m = PotentialModel::quartic_1d();
        let r = analyze(&m, None).unwrap();
        (m, r)
    }

    #[test]
    fn global_construction_quartic() {
        let (m, r) = quartic();
        let g = build_global_lyapunov(&m, 1.0).unwrap();
        assert!(lambda_ok(g.lambda, g.c, 1.0));
        assert!(g.lambda < 1.0 && g.m > g.m1);
        for cp in [&r.m, &r.s, &r.saddle] {
            assert!(g.in_compact(&PhaseState::at_rest(&cp.location)));
        }
        let xs = exterior_samples(&g, 1, 2000, 1);
        for eps in [0.5, 0.99] {
            let v = verify_global_lyapunov(&g, &m, eps, &xs).unwrap();
            assert!(v.violations.is_empty(), "{:?}", v.violations.first());
            assert!(v.identity_residual < 1e-10);
        }
    }

    #[test]
    fn compact_points_skipped() {
        let (m, _) = quartic();
        let g = build_global_lyapunov(&m, 1.0).unwrap();
        let v = verify_global_lyapunov(&g, &m, 0.5, &[PhaseState::at_rest(&[0.0])]).unwrap();
        assert_eq!(v.n_samples, 0);
        assert!(v.violations.is_empty());
    }

    #[test]
    fn lambda_bound_is_sharp() {
        for &(c, g) in &[(0.5, 1.0), (0.01, 3.0), (5.0, 0.5), (0.2, 2.0)] {
            let b = lambda_bound(c, g);
            assert!(lambda_ok(0.999 * b, c, g));
            assert!(!lambda_ok(1.001 * b, c, g) || b == g);
        }
    }

    #[test]
    fn local_construction_quartic() {
        let (m, r) = quartic();
        let l = build_local_lyapunov(&m, &r.m, 1.0).unwrap();
        assert!(l.rho >= 0.3, "{}", l.rho);
        assert_eq!(l.h.value(&PhaseState::at_rest(&r.m.location)), 0.0);
        assert!(l.dominance > 0.0);
        let xs = local_samples(&l, 2000, 9);
        let v = verify_local_inequalities(&l, &m, 0.1, &xs).unwrap();
        assert_eq!((v.violations_linear, v.violations_exponential), (0, 0), "{v:?}");
        // equality at the fixed point
        let z = PhaseState::at_rest(&r.m.location);
        let v = verify_local_inequalities(&l, &m, 0.1, &[z]).unwrap();
        assert!(v.max_residual_linear.abs() < 1e-12 && v.max_residual_exponential.abs() < 1e-12);
    }

    #[test]
    fn quadratic_well_needs_no_shrinking() {
        let h = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let m = PotentialModel::quadratic(&[0.5, -0.5], &h, 0.0).unwrap();
        let z = CriticalPoint::classify(&m, vec![0.5, -0.5]);
        let l = build_local_lyapunov(&m, &z, 1.0).unwrap();
        assert_eq!(l.rho, RHO_START);
    }

    #[test]
    fn exit_probe_edges() {
        let (m, r) = quartic();
        let l = build_local_lyapunov(&m, &r.m, 1.0).unwrap();
        let spec = ExitProbeSpec {
            a: 0.05,
            b: 0.05,
            t: 1.0,
            n_traj: 20,
            dt: 1e-3,
            seed: 3,
        };
        assert_eq!(exit_probability_probe(&l, &m, 0.05, &spec).unwrap().probability, 1.0);
        let spec = ExitProbeSpec {
            b: 0.08,
            t: 2.0,
            n_traj: 400,
            ..spec
        };
        let p1 = exit_probability_probe(&l, &m, 0.05, &spec).unwrap().probability;
        let p2 = exit_probability_probe(&l, &m, 0.05, &ExitProbeSpec { t: 4.0, ..spec })
            .unwrap()
            .probability;
        assert!(p2 >= p1);
        assert!(exit_probability_probe(&l, &m, 0.05, &ExitProbeSpec { b: 10.0, ..spec }).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn lyapunov_identity(q in -3.0f64..3.0, p in -3.0f64..3.0, lam in 0.01f64..0.9, eps in 0.01f64..1.0) {
            let m = PotentialModel::quartic_1d();
            let h = LyapunovFn::new(&m, vec![0.0], 0.0, (1.0 - lam) / 2.0);
            let x = PhaseState::new(vec![q], vec![p]).unwrap();
            let lh = apply_generator(&m, 1.0, eps, &h, &x, false).unwrap();
            let closed = -0.5 * p * p - (1.0 - lam) / 2.0 * drift_term(&m, &[q], lam, 1.0) + eps;
            prop_assert!((lh + lam * h.value(&x) - closed).abs() < 1e-10 * (1.0 + lh.abs()));
        }
    }
}
