//! Composite Gauss–Legendre quadrature on intervals with exact level-set limits.
//!
//! Each interval [a, b] is mapped through the smoothstep x = a + (b-a) s²(3-2s),
//! which turns square-root endpoint behaviour (integrands vanishing on a level
//! set) into something polynomial-like in s.

use std::num::NonZeroUsize;

use gauss_quad::GaussLegendre;
use serde::{Deserialize, Serialize};

use crate::error::{input, Error, Result};

pub const DEFAULT_POINTS: usize = 64;
pub const DEFAULT_PANELS: usize = 4;
/// Relative change between successive refinements that counts as converged.
pub const REFINE_TOL: f64 = 1e-8;
pub const MAX_REFINEMENTS: usize = 4;
/// Grid used to bracket level crossings before bisection.
pub const ROOT_GRID: usize = 800;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    pub points: usize,
    pub panels: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            points: DEFAULT_POINTS,
            panels: DEFAULT_PANELS,
        }
    }
}

/// Gauss–Legendre nodes and weights mapped to [0, 1].
#[derive(Clone, Debug)]
pub struct Rule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl Rule {
    pub fn new(points: usize) -> Result<Self> {
        let n = NonZeroUsize::new(points).ok_or_else(|| Error::Input("quadrature needs at least one point".into()))?;
        let gl = GaussLegendre::new(n);
        let (nodes, weights) = gl
            .as_node_weight_pairs()
            .iter()
            .map(|&(x, w)| (0.5 * (x + 1.0), 0.5 * w))
            .unzip();
        Ok(Self { nodes, weights })
    }

    pub fn points(&self) -> usize {
        self.nodes.len()
    }

    /// ∫_a^b f with `panels` equal panels in the smoothstep variable.
    pub fn integrate(&self, a: f64, b: f64, panels: usize, f: &mut dyn FnMut(f64) -> f64) -> f64 {
        if !(b > a) {
            return 0.0;
        }
        let len = b - a;
        let h = 1.0 / panels as f64;
        let sums: Vec<f64> = (0..panels)
            .map(|k| {
                let s0 = k as f64 * h;
                let mut acc = 0.0;
                for (t, w) in self.nodes.iter().zip(&self.weights) {
                    let s = s0 + h * t;
                    let x = a + len * s * s * (3.0 - 2.0 * s);
                    let jac = 6.0 * s * (1.0 - s) * len;
                    acc += w * jac * f(x);
                }
                acc * h
            })
            .collect();
        pairwise_sum(&sums)
    }

    /// Sum of [`Self::integrate`] over consecutive breakpoints.
    pub fn integrate_pieces(&self, breaks: &[f64], panels: usize, f: &mut dyn FnMut(f64) -> f64) -> f64 {
        let parts: Vec<f64> = breaks
            .windows(2)
            .map(|w| self.integrate(w[0], w[1], panels, f))
            .collect();
        pairwise_sum(&parts)
    }
}

/// Fixed-shape binary tree summation.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        2 => xs[0] + xs[1],
        n => {
            let (a, b) = xs.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Refined {
    pub value: f64,
    pub previous: f64,
    pub rel_change: f64,
    pub panels: usize,
}

/// Evaluate at `spec.panels`, then keep doubling until two successive values
/// agree to [`REFINE_TOL`].
pub fn refine(spec: QuadratureSpec, eval: impl FnMut(usize) -> Result<f64>) -> Result<Refined> {
    refine_abs(spec, 0.0, eval)
}

/// As [`refine`], but changes below `atol` also count as converged (for
/// integrals that cancel to nearly zero).
pub fn refine_abs(spec: QuadratureSpec, atol: f64, mut eval: impl FnMut(usize) -> Result<f64>) -> Result<Refined> {
    if spec.panels == 0 || spec.points == 0 {
        return input("quadrature spec needs points > 0 and panels > 0");
    }
    let mut panels = spec.panels;
    let mut prev = eval(panels)?;
    for _ in 0..MAX_REFINEMENTS {
        panels *= 2;
        let cur = eval(panels)?;
        let scale = cur.abs().max(prev.abs());
        let rel = if scale == 0.0 { 0.0 } else { (cur - prev).abs() / scale };
        if !cur.is_finite() {
            return Err(Error::Accuracy(format!(
                "non-finite quadrature value at {panels} panels"
            )));
        }
        if rel <= REFINE_TOL || (cur - prev).abs() <= atol {
            return Ok(Refined {
                value: cur,
                previous: prev,
                rel_change: rel,
                panels,
            });
        }
        prev = cur;
    }
    Err(Error::Accuracy(format!(
        "quadrature still changing after {MAX_REFINEMENTS} refinements (last value {prev})"
    )))
}

fn bisect(g: &dyn Fn(f64) -> f64, mut lo: f64, mut hi: f64, glo: f64) -> f64 {
    let neg_lo = glo < 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if (g(mid) < 0.0) == neg_lo {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Points in (a, b) where g changes sign, bracketed on a uniform grid.
pub fn sign_changes(g: &dyn Fn(f64) -> f64, a: f64, b: f64, grid: usize) -> Vec<f64> {
    let mut roots = Vec::new();
    let h = (b - a) / grid as f64;
    let mut x0 = a;
    let mut g0 = g(a);
    for k in 1..=grid {
        let x1 = if k == grid { b } else { a + k as f64 * h };
        let g1 = g(x1);
        if (g0 < 0.0) != (g1 < 0.0) {
            roots.push(bisect(g, x0, x1, g0));
        }
        x0 = x1;
        g0 = g1;
    }
    roots
}

/// Maximal sub-intervals of [a, b] on which g < 0.
pub fn negative_intervals(g: &dyn Fn(f64) -> f64, a: f64, b: f64, grid: usize) -> Vec<(f64, f64)> {
    let mut pts = vec![a];
    pts.extend(sign_changes(g, a, b, grid));
    pts.push(b);
    pts.windows(2)
        .filter(|w| w[1] > w[0] && g(0.5 * (w[0] + w[1])) < 0.0)
        .map(|w| (w[0], w[1]))
        .collect()
}

/// `breaks` restricted to (lo, hi), with the endpoints added, sorted.
pub fn with_breaks(lo: f64, hi: f64, extra: &[f64]) -> Vec<f64> {
    let mut v = vec![lo];
    v.extend(extra.iter().copied().filter(|&x| x > lo && x < hi));
    v.push(hi);
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn polynomials_exact() {
        let r = Rule::new(8).unwrap();
        // smoothstep map is cubic, so the pulled-back integrand has degree 3k+2
        let v = r.integrate(-1.0, 2.0, 1, &mut |x| x * x);
        assert!((v - 3.0).abs() < 1e-13);
        let v = r.integrate(0.0, 1.0, 3, &mut |x| x.powi(4));
        assert!((v - 0.2).abs() < 1e-14);
    }

    #[test]
    fn sqrt_endpoint() {
        // ∫_0^1 √(1-x²) = π/4
        let r = Rule::new(64).unwrap();
        let v = r.integrate(-1.0, 1.0, 4, &mut |x| (1.0 - x * x).max(0.0).sqrt());
        assert!((v - std::f64::consts::PI / 2.0).abs() < 1e-10);
    }

    #[test]
    fn refinement_converges_or_errors() {
        let spec = QuadratureSpec::default();
        let r = Rule::new(spec.points).unwrap();
        let out = refine(spec, |n| Ok(r.integrate(0.0, 3.0, n, &mut |x: f64| (-x * x).exp()))).unwrap();
        assert!(out.rel_change <= REFINE_TOL);
        assert!((out.value - 0.886207348259521).abs() < 1e-12);
        let mut k = 0.0;
        let bad = refine(spec, |_| {
            k += 1.0;
            Ok(k)
        });
        assert!(matches!(bad, Err(Error::Accuracy(_))));
    }

    #[test]
    fn intervals_of_double_well() {
        let g = |x: f64| (x * x - 1.0).powi(2) / 4.0 - 0.1;
        let iv = negative_intervals(&g, -3.0, 3.0, ROOT_GRID);
        assert_eq!(iv.len(), 2);
        for (a, b) in iv {
            assert!(g(a).abs() < 1e-14 && g(b).abs() < 1e-14);
        }
        assert!(negative_intervals(&|x: f64| x * x + 1.0, -1.0, 1.0, 10).is_empty());
        assert_eq!(negative_intervals(&|_| -1.0, -1.0, 1.0, 10), vec![(-1.0, 1.0)]);
    }

    #[test]
    fn breaks_sorted() {
        assert_eq!(
            with_breaks(0.0, 1.0, &[0.5, 2.0, -1.0, 0.25]),
            vec![0.0, 0.25, 0.5, 1.0]
        );
    }

    proptest! {
        #[test]
        fn pairwise_matches_naive(xs in prop::collection::vec(-1e3f64..1e3, 0..100)) {
            let naive: f64 = xs.iter().sum();
            prop_assert!((pairwise_sum(&xs) - naive).abs() < 1e-9);
        }

        #[test]
        fn gaussian_moments(s in 0.05f64..2.0) {
            let r = Rule::new(64).unwrap();
            let l = 12.0 * s;
            let v = r.integrate(-l, l, 4, &mut |x| (-x * x / (2.0 * s * s)).exp());
            prop_assert!((v / (s * (2.0 * std::f64::consts::PI).sqrt()) - 1.0).abs() < 1e-12);
        }
    }
}
