use std::collections::VecDeque;

use crate::error::{Error, Result};

/// Settings for limited-memory BFGS.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsConfig {
    /// Number of stored correction pairs.
    pub memory: usize,
    /// Converged once the gradient's Euclidean norm drops below this.
    pub grad_tol: f64,
    pub max_iter: usize,
    /// Converged once an accepted step changes the objective by less than
    /// `rel_f_tol * max(|f|, 1)`.
    pub rel_f_tol: f64,
    /// Sufficient-decrease and curvature constants of the strong Wolfe
    /// conditions.
    pub c1: f64,
    pub c2: f64,
    pub max_line_search: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            memory: 10,
            grad_tol: 1e-8,
            max_iter: 500,
            rel_f_tol: 1e4 * f64::EPSILON,
            c1: 1e-4,
            c2: 0.9,
            max_line_search: 40,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    GradientTolerance,
    ObjectiveTolerance,
    /// No step along steepest descent reduces the objective any further.
    Stalled,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub termination: Termination,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

struct Point {
    alpha: f64,
    f: f64,
    slope: f64,
    x: Vec<f64>,
    g: Vec<f64>,
}

enum Search {
    Found(Point),
    Failed,
}

/// Minimizes a smooth objective. `objective` returns the value and gradient
/// at a point.
///
/// When a step along the quasi-Newton direction cannot satisfy the line
/// search, the curvature memory is cleared and steepest descent is tried.
/// If that also fails without any decrease the current point is returned as
/// [`Termination::Stalled`]; an error is raised only for non-finite values at
/// the starting point or when the very first search fails.
pub fn minimize_lbfgs<F>(mut objective: F, x0: &[f64], cfg: &LbfgsConfig) -> Result<LbfgsResult>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let mut x = x0.to_vec();
    let (mut f, mut g) = objective(&x);
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("objective at the starting point".into()));
    }

    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(cfg.memory);
    let mut iterations = 0;
    let termination = loop {
        let gnorm = norm(&g);
        if gnorm < cfg.grad_tol {
            break Termination::GradientTolerance;
        }
        if iterations >= cfg.max_iter {
            break Termination::MaxIterations;
        }
        iterations += 1;

        let mut direction = two_loop(&g, &history);
        let mut initial = if history.is_empty() { 1.0 / gnorm.max(1.0) } else { 1.0 };
        if dot(&direction, &g) >= 0.0 {
            history.clear();
            direction = g.iter().map(|v| -v).collect();
            initial = 1.0 / gnorm.max(1.0);
        }

        let mut found = line_search(&mut objective, &x, f, &g, &direction, initial, cfg);
        if matches!(found, Search::Failed) && !history.is_empty() {
            history.clear();
            direction = g.iter().map(|v| -v).collect();
            found = line_search(&mut objective, &x, f, &g, &direction, 1.0 / gnorm.max(1.0), cfg);
        }
        let point = match found {
            Search::Found(p) => p,
            Search::Failed if iterations == 1 => {
                return Err(Error::Optimization(
                    "line search failed from the starting point".into(),
                ))
            }
            Search::Failed => break Termination::Stalled,
        };

        let s: Vec<f64> = point.x.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = point.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-10 * norm(&s) * norm(&y) {
            if history.len() == cfg.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        let change = (f - point.f).abs();
        let f_scale = f.abs().max(point.f.abs()).max(1.0);
        x = point.x;
        f = point.f;
        g = point.g;
        if change <= cfg.rel_f_tol * f_scale {
            break Termination::ObjectiveTolerance;
        }
    };

    Ok(LbfgsResult {
        grad_norm: norm(&g),
        x,
        f,
        iterations,
        termination,
    })
}

/// `-H g` from the stored correction pairs, with the usual `s'y / y'y`
/// initial scaling.
fn two_loop(g: &[f64], history: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = history.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

/// Strong Wolfe line search with bracketing and cubic-interpolation zoom.
fn line_search<F>(
    objective: &mut F,
    x: &[f64],
    f0: f64,
    g0: &[f64],
    d: &[f64],
    initial: f64,
    cfg: &LbfgsConfig,
) -> Search
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let slope0 = dot(g0, d);
    if !(slope0 < 0.0) {
        return Search::Failed;
    }
    let mut probe = |alpha: f64| -> Point {
        let xn: Vec<f64> = x.iter().zip(d).map(|(xi, di)| xi + alpha * di).collect();
        let (f, g) = objective(&xn);
        let ok = f.is_finite() && g.iter().all(|v| v.is_finite());
        Point {
            alpha,
            f: if ok { f } else { f64::INFINITY },
            slope: if ok { dot(&g, d) } else { f64::NAN },
            x: xn,
            g,
        }
    };
    let armijo = |p: &Point| p.f <= f0 + cfg.c1 * p.alpha * slope0;
    let curvature = |p: &Point| p.slope.abs() <= -cfg.c2 * slope0;

    let mut budget = cfg.max_line_search;
    let mut prev = Point {
        alpha: 0.0,
        f: f0,
        slope: slope0,
        x: x.to_vec(),
        g: g0.to_vec(),
    };
    let mut alpha = initial;
    let mut first = true;
    let (mut lo, mut hi) = loop {
        if budget == 0 {
            return Search::Failed;
        }
        budget -= 1;
        let cur = probe(alpha);
        if !cur.f.is_finite() {
            // Step into an invalid region: shrink.
            alpha *= 0.1;
            if alpha < 1e-20 {
                return Search::Failed;
            }
            continue;
        }
        if !armijo(&cur) || (!first && cur.f >= prev.f) {
            break (prev, cur);
        }
        if curvature(&cur) {
            return Search::Found(cur);
        }
        if cur.slope >= 0.0 {
            break (cur, prev);
        }
        first = false;
        alpha = cur.alpha * 2.0;
        prev = cur;
    };

    // Zoom: `lo` satisfies sufficient decrease with the lowest value seen.
    while budget > 0 {
        budget -= 1;
        let (a, b) = (lo.alpha.min(hi.alpha), lo.alpha.max(hi.alpha));
        let width = b - a;
        if width <= 1e-16 * b.max(1e-300) {
            break;
        }
        let mut trial = cubic_min(&lo, &hi).unwrap_or(0.5 * (a + b));
        if !(trial > a + 0.1 * width && trial < b - 0.1 * width) {
            trial = 0.5 * (a + b);
        }
        let cur = probe(trial);
        if !armijo(&cur) || cur.f >= lo.f {
            hi = cur;
        } else {
            if curvature(&cur) {
                return Search::Found(cur);
            }
            if cur.slope * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = cur;
        }
    }
    if lo.alpha > 0.0 && lo.f < f0 {
        Search::Found(lo)
    } else {
        Search::Failed
    }
}

/// Minimizer of the cubic interpolating value and slope at both ends.
fn cubic_min(p: &Point, q: &Point) -> Option<f64> {
    if !q.f.is_finite() || !q.slope.is_finite() {
        return None;
    }
    let d1 = p.slope + q.slope - 3.0 * (p.f - q.f) / (p.alpha - q.alpha);
    let disc = d1 * d1 - p.slope * q.slope;
    if disc < 0.0 {
        return None;
    }
    let d2 = (q.alpha - p.alpha).signum() * disc.sqrt();
    let t = q.alpha - (q.alpha - p.alpha) * (q.slope + d2 - d1) / (q.slope - p.slope + 2.0 * d2);
    t.is_finite().then_some(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> (f64, Vec<f64>) {
        let f = (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let g = vec![
            -2.0 * (1.0 - x[0]) - 400.0 * x[0] * (x[1] - x[0] * x[0]),
            200.0 * (x[1] - x[0] * x[0]),
        ];
        (f, g)
    }

    #[test]
    fn solves_rosenbrock() {
        let cfg = LbfgsConfig { rel_f_tol: 0.0, ..Default::default() };
        let r = minimize_lbfgs(rosenbrock, &[-1.2, 1.0], &cfg).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 1.0).abs() < 1e-6, "{r:?}");
    }

    #[test]
    fn ill_conditioned_quadratic() {
        let scales: Vec<f64> = (0..20).map(|i| 10f64.powi(i % 7)).collect();
        let obj = |x: &[f64]| {
            let f = x.iter().zip(&scales).map(|(v, s)| 0.5 * s * (v - 1.0).powi(2)).sum();
            let g = x.iter().zip(&scales).map(|(v, s)| s * (v - 1.0)).collect();
            (f, g)
        };
        let r = minimize_lbfgs(obj, &[0.0; 20], &LbfgsConfig::default()).unwrap();
        assert!(r.x.iter().all(|v| (v - 1.0).abs() < 1e-6), "{r:?}");
    }

    #[test]
    fn rejects_non_finite_start() {
        let r = minimize_lbfgs(|_| (f64::NAN, vec![0.0]), &[0.0], &LbfgsConfig::default());
        assert!(r.is_err());
    }

    #[test]
    fn smoothed_abs_stalls_gracefully() {
        let eps = 1e-8;
        let obj = |x: &[f64]| {
            let r = (x[0] * x[0] + eps * eps).sqrt();
            (r + 0.5 * (x[1] - 2.0).powi(2), vec![x[0] / r, x[1] - 2.0])
        };
        let r = minimize_lbfgs(obj, &[0.3, 0.0], &LbfgsConfig::default()).unwrap();
        assert!(r.x[0].abs() < 1e-6 && (r.x[1] - 2.0).abs() < 1e-6, "{r:?}");
    }
}
