//! Critical points, double-well structure and the wells W_m, W_s of
//! {V < U(σ)}.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::run_zero_noise_flow;
use crate::error::{input, Error, Result};
use crate::linalg::{norm, sym_eigen};
use crate::potential::{PhaseState, PotentialModel};

pub const NEWTON_TOL: f64 = 1e-10;
pub const DEDUP_TOL: f64 = 1e-6;
pub const DEGENERACY_TOL: f64 = 1e-8;
pub const FLOW_BALL: f64 = 1e-3;
pub const MAX_FLOW_TIME: f64 = 1e3;
const NEWTON_MAX_ITER: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PointKind {
    Minimum,
    #[serde(rename = "index-1-saddle")]
    IndexOneSaddle,
    Other,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalPoint {
    pub location: Vec<f64>,
    pub kind: PointKind,
    /// Ascending.
    pub hessian_eigenvalues: Vec<f64>,
    /// Orthonormal eigenvectors, one per row, matching `hessian_eigenvalues`.
    pub hessian_eigenvectors: Vec<Vec<f64>>,
    pub energy: f64,
    pub gradient_norm: f64,
}

impl CriticalPoint {
    pub fn classify(model: &PotentialModel, location: Vec<f64>) -> Self {
        let h = model.hessian(&location);
        let (vals, vecs) = sym_eigen(&h);
        let neg = vals.iter().filter(|&&v| v < -DEGENERACY_TOL).count();
        let pos = vals.iter().filter(|&&v| v > DEGENERACY_TOL).count();
        let kind = if pos == vals.len() {
            PointKind::Minimum
        } else if neg == 1 && pos + 1 == vals.len() {
            PointKind::IndexOneSaddle
        } else {
            PointKind::Other
        };
        let rows = (0..vals.len())
            .map(|k| vecs.column(k).iter().copied().collect())
            .collect();
        Self {
            gradient_norm: norm(&model.gradient(&location)),
            energy: model.energy(&location),
            location,
            kind,
            hessian_eigenvalues: vals,
            hessian_eigenvectors: rows,
        }
    }

    pub fn hessian_determinant(&self) -> f64 {
        self.hessian_eigenvalues.iter().product()
    }
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

/// Damped Newton on ∇U = 0 with an eigen-decomposed pseudo-inverse step.
fn newton(model: &PotentialModel, seed: &[f64]) -> Option<Vec<f64>> {
    let d = seed.len();
    let mut x = seed.to_vec();
    let mut g = model.gradient(&x);
    let mut gn = norm(&g);
    for _ in 0..NEWTON_MAX_ITER {
        if gn < NEWTON_TOL {
            return Some(x);
        }
        let (vals, vecs) = sym_eigen(&model.hessian(&x));
        let mut dx = vec![0.0; d];
        for k in 0..d {
            if vals[k].abs() < 1e-12 {
                continue;
            }
            let w = vecs.column(k);
            let c: f64 = (0..d).map(|i| w[i] * g[i]).sum::<f64>() / vals[k];
            for i in 0..d {
                dx[i] -= c * w[i];
            }
        }
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<f64> = x.iter().zip(&dx).map(|(a, b)| a + t * b).collect();
            let tg = model.gradient(&trial);
            let tn = norm(&tg);
            if tn.is_finite() && tn < gn {
                x = trial;
                g = tg;
                gn = tn;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted || norm(&x) > 1e6 {
            return None;
        }
    }
    (gn < NEWTON_TOL).then_some(x)
}

/// Multi-start Newton from a tensor grid of seeds over `bounds`.
pub fn find_critical_points(
    model: &PotentialModel,
    bounds: &[(f64, f64)],
    grid_density: usize,
) -> Result<Vec<CriticalPoint>> {
    let d = model.dim();
    if bounds.len() != d {
        return Err(Error::Dimension {
            expected: d,
            got: bounds.len(),
        });
    }
    if grid_density < 2 {
        return input("grid_density must be at least 2");
    }
    if bounds.iter().any(|(a, b)| !(a < b)) {
        return input("empty search box");
    }
    let total = grid_density.pow(d as u32);
    let seeds: Vec<Vec<f64>> = (0..total)
        .map(|mut k| {
            (0..d)
                .map(|i| {
                    let j = k % grid_density;
                    k /= grid_density;
                    let (a, b) = bounds[i];
                    a + (b - a) * j as f64 / (grid_density - 1) as f64
                })
                .collect()
        })
        .collect();
    let mut found: Vec<Vec<f64>> = seeds.par_iter().filter_map(|s| newton(model, s)).collect();
    found.sort_by(|a, b| lex_cmp(a, b));
    let mut unique: Vec<Vec<f64>> = Vec::new();
    for x in found {
        let dup = unique
            .iter()
            .any(|u| u.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() < DEDUP_TOL);
        if !dup {
            unique.push(x);
        }
    }
    Ok(unique.into_iter().map(|x| CriticalPoint::classify(model, x)).collect())
}

/// Default search box: [-3, 3] per axis.
pub fn default_search_box(dim: usize) -> Vec<(f64, f64)> {
    vec![(-3.0, 3.0); dim]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandscapeReport {
    /// The starting well.
    pub m: CriticalPoint,
    pub s: CriticalPoint,
    pub saddle: CriticalPoint,
    pub barrier_from_m: f64,
    pub barrier_from_s: f64,
    /// −λ^σ is the unique negative Hessian eigenvalue at σ.
    pub lambda_sigma: f64,
    pub is_valid_double_well: bool,
    pub n_minima: usize,
    pub n_saddles: usize,
    pub n_other: usize,
}

impl LandscapeReport {
    pub fn minima_positions(&self) -> Vec<Vec<f64>> {
        vec![self.m.location.clone(), self.s.location.clone()]
    }
}

/// Pick m, s and σ. `start_well`: position hint; m is the minimum nearest to
/// it. Without a hint m is the minimum with the larger barrier, ties broken
/// towards the lexicographically larger position.
pub fn build_landscape(
    model: &PotentialModel,
    critical_points: &[CriticalPoint],
    start_well: Option<&[f64]>,
) -> Result<LandscapeReport> {
    let _ = model;
    let mut pts = critical_points.to_vec();
    pts.sort_by(|a, b| lex_cmp(&a.location, &b.location));
    let minima: Vec<&CriticalPoint> = pts.iter().filter(|c| c.kind == PointKind::Minimum).collect();
    let saddles: Vec<&CriticalPoint> = pts.iter().filter(|c| c.kind == PointKind::IndexOneSaddle).collect();
    let n_other = pts.len() - minima.len() - saddles.len();
    if minima.len() < 2 || saddles.is_empty() {
        return Err(Error::Structural(format!(
            "need two minima and an index-1 saddle; found {} minima, {} saddles, {} other",
            minima.len(),
            saddles.len(),
            n_other
        )));
    }
    let by_energy = |a: &&CriticalPoint, b: &&CriticalPoint| {
        a.energy
            .total_cmp(&b.energy)
            .then_with(|| lex_cmp(&a.location, &b.location))
    };
    let saddle = (*saddles.iter().min_by(|a, b| by_energy(a, b)).unwrap()).clone();
    let mut low = minima.clone();
    low.sort_by(by_energy);
    let (a, b) = (low[0].clone(), low[1].clone());
    let dist = |c: &CriticalPoint, h: &[f64]| c.location.iter().zip(h).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let a_is_m = match start_well {
        Some(h) => dist(&a, h) <= dist(&b, h),
        None => {
            if (a.energy - b.energy).abs() > 1e-9 {
                a.energy < b.energy
            } else {
                lex_cmp(&a.location, &b.location) == Ordering::Greater
            }
        }
    };
    let (m, s) = if a_is_m { (a, b) } else { (b, a) };
    let lambda_sigma = -saddle.hessian_eigenvalues[0];
    Ok(LandscapeReport {
        barrier_from_m: saddle.energy - m.energy,
        barrier_from_s: saddle.energy - s.energy,
        lambda_sigma,
        is_valid_double_well: minima.len() == 2
            && saddles.len() == 1
            && saddle.energy > m.energy
            && saddle.energy > s.energy,
        n_minima: minima.len(),
        n_saddles: saddles.len(),
        n_other,
        m,
        s,
        saddle,
    })
}

/// Locate critical points in the default box and assemble the report.
pub fn analyze(model: &PotentialModel, start_well: Option<&[f64]>) -> Result<LandscapeReport> {
    let density = match model.dim() {
        1 => 61,
        2 => 31,
        _ => 13,
    };
    let cps = find_critical_points(model, &default_search_box(model.dim()), density)?;
    build_landscape(model, &cps, start_well)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Well {
    #[serde(rename = "W_m")]
    Wm,
    #[serde(rename = "W_s")]
    Ws,
    #[serde(rename = "outside")]
    Outside,
}

/// Component of {V < V(σ, 0)} containing x, decided by the noiseless flow
/// (γ = 1; the components do not depend on γ).
pub fn well_membership(model: &PotentialModel, report: &LandscapeReport, x: &PhaseState) -> Result<Well> {
    if !report.is_valid_double_well {
        return input("well membership needs a valid double well");
    }
    if model.hamiltonian(x) >= report.saddle.energy {
        return Ok(Well::Outside);
    }
    match run_zero_noise_flow(model, 1.0, x, &report.minima_positions(), FLOW_BALL, MAX_FLOW_TIME) {
        Ok(out) => Ok(if out.limit_index == 0 { Well::Wm } else { Well::Ws }),
        Err(e) => Err(Error::Classification(format!("flow from {x:?} did not settle: {e}"))),
    }
}

#[derive(PartialEq)]
struct Node(f64, usize);
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Node {
    fn cmp(&self, o: &Self) -> Ordering {
        o.0.total_cmp(&self.0).then_with(|| o.1.cmp(&self.1))
    }
}

/// Bottleneck search: min over grid paths from (m,0) to (s,0) of the max of V
/// along the path. d = 1 uses the (q, p) plane, d = 2 the position plane p = 0.
pub fn minimax_path_energy(model: &PotentialModel, report: &LandscapeReport, grid_density: usize) -> Result<f64> {
    let d = model.dim();
    if d > 2 {
        return input("minimax grid oracle supports d ≤ 2");
    }
    if grid_density < 3 {
        return input("grid_density must be at least 3");
    }
    let (m, s) = (&report.m.location, &report.s.location);
    if m == s {
        return Ok(report.m.energy);
    }
    let pts = [m, s, &report.saddle.location];
    let lo = |i: usize| pts.iter().map(|p| p[i]).fold(f64::INFINITY, f64::min) - 1.0;
    let hi = |i: usize| pts.iter().map(|p| p[i]).fold(f64::NEG_INFINITY, f64::max) + 1.0;
    let (ax, bx) = (lo(0), hi(0));
    let (ay, by) = if d == 1 {
        let w = 0.5 * (bx - ax);
        (-w, w)
    } else {
        (lo(1), hi(1))
    };
    let n = grid_density;
    let coord = |a: f64, b: f64, k: usize| a + (b - a) * k as f64 / (n - 1) as f64;
    let value = |i: usize, j: usize| {
        let (u, v) = (coord(ax, bx, i), coord(ay, by, j));
        if d == 1 {
            model.energy(&[u]) + 0.5 * v * v
        } else {
            model.energy(&[u, v])
        }
    };
    let vals: Vec<f64> = (0..n * n).map(|k| value(k / n, k % n)).collect();
    let nearest = |p: &[f64]| {
        let snap = |x: f64, a: f64, b: f64| {
            (((x - a) / (b - a)) * (n - 1) as f64)
                .round()
                .clamp(0.0, (n - 1) as f64) as usize
        };
        let i = snap(p[0], ax, bx);
        let j = if d == 1 { snap(0.0, ay, by) } else { snap(p[1], ay, by) };
        i * n + j
    };
    let (src, dst) = (nearest(m), nearest(s));
    if src == dst {
        return Err(Error::Resolution("grid too coarse to separate the wells".into()));
    }
    let mut best = vec![f64::INFINITY; n * n];
    let mut heap = BinaryHeap::new();
    best[src] = vals[src];
    heap.push(Node(vals[src], src));
    while let Some(Node(c, k)) = heap.pop() {
        if k == dst {
            return Ok(c);
        }
        if c > best[k] {
            continue;
        }
        let (i, j) = (k / n, k % n);
        let mut nb = [usize::MAX; 4];
        if i > 0 {
            nb[0] = k - n;
        }
        if i + 1 < n {
            nb[1] = k + n;
        }
        if j > 0 {
            nb[2] = k - 1;
        }
        if j + 1 < n {
            nb[3] = k + 1;
        }
        for &t in nb.iter().filter(|&&t| t != usize::MAX) {
            let c2 = c.max(vals[t]);
            if c2 < best[t] {
                best[t] = c2;
                heap.push(Node(c2, t));
            }
        }
    }
    Err(Error::Resolution("wells not connected on the grid".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quartic_report() -> (PotentialModel, LandscapeReport) {
        let m = PotentialModel::quartic_1d();
        let cps = find_critical_points(&m, &[(-2.0, 2.0)], 41).unwrap();
        let r = build_landscape(&m, &cps, None).unwrap();
        (m, r)
    }

    #[test]
    fn quartic_critical_points() {
        let m = PotentialModel::quartic_1d();
        let cps = find_critical_points(&m, &[(-2.0, 2.0)], 41).unwrap();
        assert_eq!(cps.len(), 3);
        let want = [
            (-1.0, PointKind::Minimum),
            (0.0, PointKind::IndexOneSaddle),
            (1.0, PointKind::Minimum),
        ];
        for (c, (x, k)) in cps.iter().zip(want) {
            assert!((c.location[0] - x).abs() < 1e-10);
            assert_eq!(c.kind, k);
            assert!(c.gradient_norm < NEWTON_TOL);
        }
    }

    #[test]
    fn quartic_report_values() {
        let (_, r) = quartic_report();
        assert!(r.is_valid_double_well);
        assert!((r.m.location[0] - 1.0).abs() < 1e-10, "m defaults to +1");
        assert!((r.barrier_from_m - 0.25).abs() < 1e-12);
        assert!((r.barrier_from_s - 0.25).abs() < 1e-12);
        assert!((r.lambda_sigma - 1.0).abs() < 1e-12);
    }

    #[test]
    fn start_hint_selects_m() {
        let m = PotentialModel::quartic_1d();
        let cps = find_critical_points(&m, &[(-2.0, 2.0)], 41).unwrap();
        let r = build_landscape(&m, &cps, Some(&[-0.8])).unwrap();
        assert!((r.m.location[0] + 1.0).abs() < 1e-10);
    }

    #[test]
    fn order_independent() {
        let m = PotentialModel::quartic_1d();
        let mut cps = find_critical_points(&m, &[(-2.0, 2.0)], 41).unwrap();
        let a = build_landscape(&m, &cps, None).unwrap();
        cps.reverse();
        assert_eq!(a, build_landscape(&m, &cps, None).unwrap());
    }

    #[test]
    fn separable_2d() {
        let m = PotentialModel::separable(&[4.0]).unwrap();
        let cps = find_critical_points(&m, &[(-2.0, 2.0), (-2.0, 2.0)], 21).unwrap();
        assert_eq!(cps.len(), 3);
        let r = build_landscape(&m, &cps, None).unwrap();
        assert!(r.is_valid_double_well);
        assert!((r.lambda_sigma - 1.0).abs() < 1e-12 && (r.barrier_from_m - 0.25).abs() < 1e-12);
        assert!(r.saddle.location.iter().all(|x| x.abs() < 1e-10));
    }

    #[test]
    fn constant_zero_is_degenerate() {
        let m = PotentialModel::polynomial(1, &[(0.0, &[0])]).unwrap();
        let cps = find_critical_points(&m, &[(-1.0, 1.0)], 5).unwrap();
        assert!(cps.iter().all(|c| c.kind == PointKind::Other));
        assert!(build_landscape(&m, &cps, None).is_err());
    }

    #[test]
    fn triple_well_is_not_a_double_well() {
        // U = q²(q² - 1)²: minima at 0, ±1 and two saddles in between
        let m = PotentialModel::polynomial(1, &[(1.0, &[2]), (-2.0, &[4]), (1.0, &[6])]).unwrap();
        let cps = find_critical_points(&m, &[(-1.5, 1.5)], 61).unwrap();
        let r = build_landscape(&m, &cps, None).unwrap();
        assert_eq!(r.n_minima, 3);
        assert!(!r.is_valid_double_well);
    }

    #[test]
    fn membership() {
        let (m, r) = quartic_report();
        let x = |q: f64, p: f64| PhaseState::new(vec![q], vec![p]).unwrap();
        assert_eq!(well_membership(&m, &r, &x(1.0, 0.0)).unwrap(), Well::Wm);
        assert_eq!(well_membership(&m, &r, &x(0.0, 0.9)).unwrap(), Well::Outside);
        assert_eq!(well_membership(&m, &r, &x(0.5, 0.0)).unwrap(), Well::Wm);
        assert_eq!(well_membership(&m, &r, &x(-0.5, 0.0)).unwrap(), Well::Ws);
        assert_eq!(
            well_membership(&m, &r, &x(0.7, 0.2)).unwrap(),
            well_membership(&m, &r, &x(0.7, -0.2)).unwrap()
        );
    }

    #[test]
    fn minimax_matches_saddle() {
        let (m, r) = quartic_report();
        let e = minimax_path_energy(&m, &r, 401).unwrap();
        assert!((e - 0.25).abs() < 2.0 * 0.01, "{e}");
        let same = LandscapeReport {
            s: r.m.clone(),
            ..r.clone()
        };
        assert_eq!(minimax_path_energy(&m, &same, 401).unwrap(), r.m.energy);
        let s2 = PotentialModel::separable(&[4.0]).unwrap();
        let r2 = analyze(&s2, None).unwrap();
        let e2 = minimax_path_energy(&s2, &r2, 201).unwrap();
        assert!((e2 - 0.25).abs() < 0.02, "{e2}");
    }
}
