//! Monte Carlo hitting times and committors.
//!
//! Trajectory i of an ensemble draws its noise from ChaCha8 stream
//! `first_stream + i` of `base_seed`, and results are merged with a fixed
//! pairwise tree, so the statistics do not depend on thread count or
//! scheduling.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{integrate_until, IntegratorConfig, ProcessKind, StopEvent, StopReason, StopSpec};
use crate::error::{input, Error, Result};
use crate::landscape::{well_membership, LandscapeReport, Well};
use crate::potential::{PhaseState, PotentialModel};
use crate::stats::{least_squares, pairwise_merge};

/// Desk-scale floor on the ball radius (the asymptotic choice is r = ε).
pub const RADIUS_FLOOR: f64 = 0.2;
/// Default max_time in units of the predicted mean transition time.
pub const TIMEOUT_FACTOR: f64 = 50.0;

pub fn default_radius(epsilon: f64) -> f64 {
    epsilon.max(RADIUS_FLOOR)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: PhaseState,
    pub radius: f64,
}

impl Ball {
    pub fn around(q: &[f64], radius: f64) -> Self {
        Self {
            center: PhaseState::at_rest(q),
            radius,
        }
    }

    pub fn contains(&self, x: &PhaseState) -> bool {
        x.distance(&self.center) <= self.radius
    }

    fn stop(&self, avoid: bool) -> StopSpec {
        if avoid {
            StopSpec::Avoid {
                center: self.center.clone(),
                radius: self.radius,
            }
        } else {
            StopSpec::Target {
                center: self.center.clone(),
                radius: self.radius,
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub epsilon: f64,
    pub gamma: f64,
    pub n_traj: usize,
    pub start: PhaseState,
    pub target: Ball,
    pub avoid: Option<Ball>,
    /// `rng_seed` and `stream_id` are overwritten per trajectory.
    pub integrator: IntegratorConfig,
    pub base_seed: u64,
    pub first_stream: u64,
}

impl EnsembleConfig {
    /// Start at (m, 0), target the ball around (s, 0) of radius max(ε, 0.2),
    /// time out at 50 × `predicted_mean`.
    pub fn standard(
        report: &LandscapeReport,
        epsilon: f64,
        gamma: f64,
        n_traj: usize,
        predicted_mean: f64,
        integrator: IntegratorConfig,
        base_seed: u64,
    ) -> Result<Self> {
        let mut integrator = integrator;
        integrator.max_time = TIMEOUT_FACTOR * predicted_mean;
        let cfg = Self {
            epsilon,
            gamma,
            n_traj,
            start: PhaseState::at_rest(&report.m.location),
            target: Ball::around(&report.s.location, default_radius(epsilon)),
            avoid: None,
            integrator,
            base_seed,
            first_stream: 0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !(self.gamma > 0.0) {
            return input("ensemble needs ε > 0 and γ > 0");
        }
        if self.n_traj == 0 {
            return input("n_traj must be at least 1");
        }
        if !(self.target.radius > 0.0) {
            return input("target radius must be positive");
        }
        if let Some(a) = &self.avoid {
            if !(a.radius > 0.0) {
                return input("avoid radius must be positive");
            }
            if a.center.distance(&self.target.center) <= a.radius + self.target.radius {
                return input("target and avoid balls overlap");
            }
        }
        self.integrator.validate()
    }

    fn stops(&self) -> Vec<StopSpec> {
        let mut s = vec![self.target.stop(false)];
        if let Some(a) = &self.avoid {
            s.push(a.stop(true));
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub trajectory_id: u64,
    pub hit_time: f64,
    pub stop_reason: StopReason,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HittingStats {
    pub n_traj: usize,
    pub n_completed: usize,
    pub n_timeout: usize,
    pub mean: f64,
    pub variance: f64,
    pub ci95_half_width: f64,
    pub min: f64,
    pub max: f64,
    pub wall_time: f64,
    pub base_seed: u64,
    /// Half-open range of stream ids used.
    pub streams: (u64, u64),
}

/// Run `n_traj` trajectories from `start` in parallel; events come back in stream order.
pub fn run_ensemble(
    model: &PotentialModel,
    cfg: &EnsembleConfig,
    start: &PhaseState,
    first_stream: u64,
) -> Result<Vec<StopEvent>> {
    cfg.validate()?;
    let stops = cfg.stops();
    (0..cfg.n_traj as u64)
        .into_par_iter()
        .map(|i| {
            let mut ic = cfg.integrator;
            ic.rng_seed = cfg.base_seed;
            ic.stream_id = first_stream + i;
            integrate_until(ProcessKind::Forward, model, cfg.gamma, cfg.epsilon, start, &stops, &ic)
        })
        .collect()
}

fn summarize(cfg: &EnsembleConfig, events: &[StopEvent], wall: f64, first_stream: u64) -> Result<HittingStats> {
    let times: Vec<Option<f64>> = events
        .iter()
        .map(|e| (e.reason == StopReason::HitTarget).then_some(e.time))
        .collect();
    let st = pairwise_merge(&times);
    let n_completed = st.n as usize;
    let n_timeout = events.iter().filter(|e| e.reason == StopReason::Timeout).count();
    if n_completed == 0 {
        return Err(Error::Estimation(format!(
            "no trajectory reached the target within t={} ({} timeouts of {})",
            cfg.integrator.max_time, n_timeout, cfg.n_traj
        )));
    }
    let variance = st.variance();
    Ok(HittingStats {
        n_traj: cfg.n_traj,
        n_completed,
        n_timeout,
        mean: st.mean,
        variance,
        ci95_half_width: 1.96 * (variance / n_completed as f64).sqrt(),
        min: st.min,
        max: st.max,
        wall_time: wall,
        base_seed: cfg.base_seed,
        streams: (first_stream, first_stream + cfg.n_traj as u64),
    })
}

/// Mean of the first time the target ball is reached; timeouts are counted
/// and excluded from the moments.
pub fn estimate_mean_hitting_time(model: &PotentialModel, cfg: &EnsembleConfig) -> Result<HittingStats> {
    estimate_with_records(model, cfg).map(|(s, _)| s)
}

pub fn estimate_with_records(
    model: &PotentialModel,
    cfg: &EnsembleConfig,
) -> Result<(HittingStats, Vec<TrajectoryRecord>)> {
    if cfg.target.contains(&cfg.start) {
        return input("start lies inside the target ball");
    }
    let t0 = Instant::now();
    let events = run_ensemble(model, cfg, &cfg.start, cfg.first_stream)?;
    let stats = summarize(cfg, &events, t0.elapsed().as_secs_f64(), cfg.first_stream)?;
    let records = events
        .iter()
        .enumerate()
        .map(|(i, e)| TrajectoryRecord {
            trajectory_id: cfg.first_stream + i as u64,
            hit_time: e.time,
            stop_reason: e.reason,
        })
        .collect();
    Ok((stats, records))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommittorEstimate {
    pub x: PhaseState,
    /// P_x(τ_M < τ_S)
    pub h: f64,
    /// The same estimate from (q, -p).
    pub h_star: f64,
    /// P_x(τ_S < τ_M)
    pub p_s: f64,
    pub timeout_fraction: f64,
    pub n: usize,
    pub ci95: f64,
    pub unreliable: bool,
}

fn committor_at(
    model: &PotentialModel,
    cfg: &EnsembleConfig,
    x: &PhaseState,
    first_stream: u64,
) -> Result<(f64, f64, f64)> {
    let ev = run_ensemble(model, cfg, x, first_stream)?;
    let n = ev.len() as f64;
    let count = |r: StopReason| ev.iter().filter(|e| e.reason == r).count() as f64 / n;
    Ok((
        count(StopReason::HitTarget),
        count(StopReason::HitAvoid),
        count(StopReason::Timeout),
    ))
}

/// h_{M,S} at each point, with `cfg.target` = M ball and `cfg.avoid` = S ball.
pub fn estimate_equilibrium_potential(
    model: &PotentialModel,
    cfg: &EnsembleConfig,
    points: &[PhaseState],
) -> Result<Vec<CommittorEstimate>> {
    if cfg.avoid.is_none() {
        return input("committor estimation needs both an M ball (target) and an S ball (avoid)");
    }
    cfg.validate()?;
    let n = cfg.n_traj as u64;
    points
        .iter()
        .enumerate()
        .map(|(k, x)| {
            let base = cfg.first_stream + 2 * k as u64 * n;
            let (h, p_s, timeout_fraction) = committor_at(model, cfg, x, base)?;
            let (h_star, _, _) = committor_at(model, cfg, &x.momentum_flipped(), base + n)?;
            Ok(CommittorEstimate {
                x: x.clone(),
                h,
                h_star,
                p_s,
                timeout_fraction,
                n: cfg.n_traj,
                ci95: 1.96 * (h * (1.0 - h) / cfg.n_traj as f64).sqrt(),
                unreliable: timeout_fraction > 0.5,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Least squares of log(mean) against 1/ε: slope ≈ barrier, intercept ≈ log κ.
pub fn barrier_slope_fit(series: &[(f64, f64)]) -> Result<SlopeFit> {
    let mut eps: Vec<f64> = series.iter().map(|s| s.0).collect();
    eps.sort_by(f64::total_cmp);
    eps.dedup();
    if eps.len() < 3 {
        return input("slope fit needs at least three distinct ε values");
    }
    if series.iter().any(|&(e, m)| !(e > 0.0) || !(m > 0.0)) {
        return input("slope fit needs positive ε and positive means");
    }
    let pts: Vec<(f64, f64)> = series.iter().map(|&(e, m)| (1.0 / e, m.ln())).collect();
    let (slope, intercept, r_squared) = least_squares(&pts);
    Ok(SlopeFit {
        slope,
        intercept,
        r_squared,
    })
}

pub fn barrier_slope_fit_stats(series: &[(f64, HittingStats)]) -> Result<SlopeFit> {
    let pts: Vec<(f64, f64)> = series.iter().map(|(e, s)| (*e, s.mean)).collect();
    barrier_slope_fit(&pts)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StartProbe {
    pub radius: f64,
    pub center_mean: f64,
    pub starts: Vec<PhaseState>,
    pub means: Vec<f64>,
    pub spread: f64,
}

/// Uniform draw from the phase-space ball of radius r around `center`.
fn ball_point(center: &PhaseState, r: f64, rng: &mut ChaCha8Rng) -> PhaseState {
    let x = center.to_vec();
    let n = x.len();
    let g: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    let u: f64 = rand::Rng::random(rng);
    let scale = r * u.powf(1.0 / n as f64) / norm;
    PhaseState::from_slice(&x.iter().zip(&g).map(|(a, b)| a + scale * b).collect::<Vec<_>>())
}

/// Mean hitting times from `n_points` uniform starts in B(cfg.start, ε^β)
/// against the mean from cfg.start itself. All starts share the same noise
/// streams, which removes most of the Monte Carlo noise from the comparison.
pub fn start_insensitivity_probe(
    model: &PotentialModel,
    cfg: &EnsembleConfig,
    beta: f64,
    n_points: usize,
) -> Result<StartProbe> {
    if !(beta > 0.5 && beta <= 1.0) {
        return input("β must lie in (1/2, 1]");
    }
    start_probe_with_radius(model, cfg, cfg.epsilon.powf(beta), n_points)
}

pub fn start_probe_with_radius(
    model: &PotentialModel,
    cfg: &EnsembleConfig,
    radius: f64,
    n_points: usize,
) -> Result<StartProbe> {
    if !(radius >= 0.0) {
        return input("start ball radius must be non-negative");
    }
    let center_mean = estimate_mean_hitting_time(model, cfg)?.mean;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.base_seed ^ 0x5eed_57a2);
    let starts: Vec<PhaseState> = (0..n_points)
        .map(|_| ball_point(&cfg.start, radius, &mut rng))
        .collect();
    let mut means = Vec::with_capacity(n_points);
    for s in &starts {
        let mut c = cfg.clone();
        c.start = s.clone();
        means.push(estimate_mean_hitting_time(model, &c)?.mean);
    }
    let spread = means.iter().map(|m| (m / center_mean - 1.0).abs()).fold(0.0, f64::max);
    Ok(StartProbe {
        radius,
        center_mean,
        starts,
        means,
        spread,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeReport {
    /// (V(x) - V(σ,0))/ε for the resolvable points
    pub xs: Vec<f64>,
    /// log(1 - h)
    pub ys: Vec<f64>,
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    pub conclusive: bool,
    pub pass: bool,
}

/// Points with at least this many non-M outcomes enter the fit.
pub const MIN_RESOLVED_FAILURES: f64 = 3.0;

/// Regress log(1 - h) on (V(x) - V(σ,0))/ε over resolvable points.
pub fn committor_envelope_check(
    estimates: &[CommittorEstimate],
    report: &LandscapeReport,
    model: &PotentialModel,
    epsilon: f64,
) -> Result<EnvelopeReport> {
    let v_sigma = report.saddle.energy;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for e in estimates {
        let v = model.hamiltonian(&e.x);
        if v >= v_sigma {
            return input(format!("point {:?} is not below the saddle energy", e.x));
        }
        if well_membership(model, report, &e.x)? != Well::Wm {
            return input(format!("point {:?} is not in W_m", e.x));
        }
        let miss = 1.0 - e.h;
        if miss > 0.0 && miss * e.n as f64 >= MIN_RESOLVED_FAILURES {
            xs.push((v - v_sigma) / epsilon);
            ys.push(miss.ln());
        }
    }
    if xs.len() < 3 {
        return Ok(EnvelopeReport {
            xs,
            ys,
            slope: None,
            intercept: None,
            conclusive: false,
            pass: false,
        });
    }
    let pts: Vec<(f64, f64)> = xs.iter().copied().zip(ys.iter().copied()).collect();
    let (slope, intercept, _) = least_squares(&pts);
    Ok(EnvelopeReport {
        xs,
        ys,
        slope: Some(slope),
        intercept: Some(intercept),
        conclusive: true,
        pass: slope >= 0.5,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::Scheme;
    use crate::landscape::analyze;

    fn quartic() -> (PotentialModel, LandscapeReport) {
        let m = PotentialModel::quartic_1d();
        let r = analyze(&m, None).unwrap();
        (m, r)
    }

    fn cfg(r: &LandscapeReport, eps: f64, n: usize, max_time: f64, seed: u64) -> EnsembleConfig {
        let ic = IntegratorConfig::new(Scheme::SplittingObabo, 1e-2, max_time, seed, 0).unwrap();
        let mut c = EnsembleConfig::standard(r, eps, 1.0, n, 1.0, ic, seed).unwrap();
        c.integrator.max_time = max_time;
        c
    }

    #[test]
    fn start_inside_target_is_rejected() {
        let (m, r) = quartic();
        let mut c = cfg(&r, 0.3, 4, 100.0, 1);
        c.start = PhaseState::at_rest(&r.s.location);
        assert!(matches!(estimate_mean_hitting_time(&m, &c), Err(Error::Input(_))));
    }

    #[test]
    fn overlapping_balls_rejected() {
        let (_, r) = quartic();
        let mut c = cfg(&r, 0.3, 4, 100.0, 1);
        c.avoid = Some(Ball::around(&[-0.9], 0.2));
        assert!(c.validate().is_err());
    }

    #[test]
    fn all_timeouts_is_an_estimation_error() {
        let (m, r) = quartic();
        let c = cfg(&r, 0.05, 8, 0.5, 1);
        assert!(matches!(estimate_mean_hitting_time(&m, &c), Err(Error::Estimation(_))));
    }

    #[test]
    fn reproducible_and_thread_independent() {
        let (m, r) = quartic();
        let c = cfg(&r, 0.4, 64, 1e3, 7);
        let a = estimate_mean_hitting_time(&m, &c).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| estimate_mean_hitting_time(&m, &c).unwrap());
        assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        assert_eq!(a.variance.to_bits(), b.variance.to_bits());
        assert_eq!(a.n_completed + a.n_timeout, a.n_traj);
        assert_eq!(a.streams, (0, 64));
    }

    #[test]
    fn records_line_up_with_stats() {
        let (m, r) = quartic();
        let c = cfg(&r, 0.4, 16, 1e3, 3);
        let (s, rec) = estimate_with_records(&m, &c).unwrap();
        assert_eq!(rec.len(), 16);
        let hits: Vec<f64> = rec
            .iter()
            .filter(|r| r.stop_reason == StopReason::HitTarget)
            .map(|r| r.hit_time)
            .collect();
        assert_eq!(hits.len(), s.n_completed);
        assert!((hits.iter().sum::<f64>() / hits.len() as f64 - s.mean).abs() < 1e-9 * s.mean);
    }

    #[test]
    fn committor_boundary_values() {
        let (m, r) = quartic();
        let mut c = cfg(&r, 0.1, 50, 200.0, 2);
        c.target = Ball::around(&r.m.location, 0.2);
        c.avoid = Some(Ball::around(&r.s.location, 0.2));
        let pts = [
            PhaseState::new(vec![r.m.location[0] + 0.05], vec![0.02]).unwrap(),
            PhaseState::new(vec![r.s.location[0] - 0.05], vec![0.0]).unwrap(),
        ];
        let est = estimate_equilibrium_potential(&m, &c, &pts).unwrap();
        assert_eq!(est[0].h, 1.0);
        assert_eq!(est[1].h, 0.0);
        for e in &est {
            assert!((e.h + e.p_s + e.timeout_fraction - 1.0).abs() < 1e-12);
        }
        c.avoid = None;
        assert!(estimate_equilibrium_potential(&m, &c, &pts).is_err());
    }

    #[test]
    fn slope_fit_exact_and_guarded() {
        let (k, b) = (7.18873_f64, 0.25_f64);
        let pts: Vec<(f64, f64)> = [0.3, 0.25, 0.2, 0.1].iter().map(|&e| (e, k * (b / e).exp())).collect();
        let f = barrier_slope_fit(&pts).unwrap();
        assert!((f.slope - b).abs() < 1e-12 && (f.intercept - k.ln()).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
        assert!(barrier_slope_fit(&pts[..2]).is_err());
        assert!(barrier_slope_fit(&[(0.3, 1.0), (0.2, -1.0), (0.1, 2.0)]).is_err());
    }

    #[test]
    fn degenerate_start_ball() {
        let (m, r) = quartic();
        let c = cfg(&r, 0.4, 32, 1e3, 5);
        let p = start_probe_with_radius(&m, &c, 0.0, 3).unwrap();
        assert_eq!(p.spread, 0.0);
        assert!(start_insensitivity_probe(&m, &c, 0.5, 3).is_err());
    }

    #[test]
    fn ball_points_inside() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = PhaseState::at_rest(&[1.0]);
        for _ in 0..200 {
            assert!(ball_point(&c, 0.3, &mut rng).distance(&c) <= 0.3 + 1e-12);
        }
    }

    #[test]
    fn envelope_on_synthetic_data() {
        let (m, r) = quartic();
        let eps = 0.12;
        let est: Vec<CommittorEstimate> = [0.2, 0.3, 0.4, 0.5, 0.6, 0.7]
            .iter()
            .map(|&q| {
                let x = PhaseState::at_rest(&[q]);
                let miss = ((m.hamiltonian(&x) - 0.25) / eps).exp();
                CommittorEstimate {
                    x,
                    h: 1.0 - miss,
                    h_star: 1.0 - miss,
                    p_s: miss,
                    timeout_fraction: 0.0,
                    n: 1_000_000_000,
                    ci95: 0.0,
                    unreliable: false,
                }
            })
            .collect();
        let rep = committor_envelope_check(&est, &r, &m, eps).unwrap();
        assert!((rep.slope.unwrap() - 1.0).abs() < 1e-6 && rep.pass);
        let ones: Vec<CommittorEstimate> = est
            .into_iter()
            .map(|mut e| {
                e.h = 1.0;
                e
            })
            .collect();
        let rep = committor_envelope_check(&ones, &r, &m, eps).unwrap();
        assert!(!rep.conclusive);
    }

    #[test]
    fn ci_shrinks_with_more_trajectories() {
        let (m, r) = quartic();
        let mut ratios = Vec::new();
        for seed in 0..4 {
            let a = estimate_mean_hitting_time(&m, &cfg(&r, 0.5, 400, 1e3, 100 + seed)).unwrap();
            let b = estimate_mean_hitting_time(&m, &cfg(&r, 0.5, 800, 1e3, 200 + seed)).unwrap();
            ratios.push(b.ci95_half_width / a.ci95_half_width);
        }
        let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
        assert!((0.6..=0.82).contains(&mean), "{ratios:?}");
    }
}
