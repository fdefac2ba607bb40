/// Settings for the downhill simplex search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMeadConfig {
    /// Offset of the initial simplex vertices along each axis.
    pub initial_step: f64,
    pub max_iter: usize,
    /// Stop once the spread of objective values across the simplex falls
    /// below `f_tol * (1 + |f_best|)` and its diameter below `x_tol`.
    pub f_tol: f64,
    pub x_tol: f64,
}

impl Default for NelderMeadConfig {
    fn default() -> Self {
        Self {
            initial_step: 0.1,
            max_iter: 4000,
            f_tol: 1e-12,
            x_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Derivative-free minimization. Non-finite objective values are treated as
/// `+inf`, so the simplex simply retreats from them.
pub fn minimize_nelder_mead<F>(mut f: F, x0: &[f64], cfg: &NelderMeadConfig) -> NelderMeadResult
where
    F: FnMut(&[f64]) -> f64,
{
    let dim = x0.len();
    let mut eval = |x: &[f64]| {
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    if dim == 0 {
        return NelderMeadResult {
            x: Vec::new(),
            f: eval(x0),
            iterations: 0,
            converged: true,
        };
    }

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    simplex.push((x0.to_vec(), eval(x0)));
    for i in 0..dim {
        let mut v = x0.to_vec();
        v[i] += cfg.initial_step;
        let fv = eval(&v);
        simplex.push((v, fv));
    }

    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iter {
        iterations += 1;
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[dim].1;
        let diameter = simplex[1..]
            .iter()
            .map(|(v, _)| {
                v.iter()
                    .zip(&simplex[0].0)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if (worst - best).abs() <= cfg.f_tol * (1.0 + best.abs()) && diameter <= cfg.x_tol {
            converged = true;
            break;
        }

        let centroid: Vec<f64> = (0..dim)
            .map(|j| simplex[..dim].iter().map(|(v, _)| v[j]).sum::<f64>() / dim as f64)
            .collect();
        let toward = |scale: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[dim].0)
                .map(|(c, w)| c + scale * (c - w))
                .collect()
        };

        let reflected = toward(1.0);
        let fr = eval(&reflected);
        if fr < simplex[0].1 {
            let expanded = toward(2.0);
            let fe = eval(&expanded);
            simplex[dim] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
            continue;
        }
        if fr < simplex[dim - 1].1 {
            simplex[dim] = (reflected, fr);
            continue;
        }
        let (contracted, fc) = if fr < simplex[dim].1 {
            let c = toward(0.5);
            let fc = eval(&c);
            (c, fc)
        } else {
            let c = toward(-0.5);
            let fc = eval(&c);
            (c, fc)
        };
        if fc < simplex[dim].1.min(fr) {
            simplex[dim] = (contracted, fc);
            continue;
        }
        let anchor = simplex[0].0.clone();
        for vertex in simplex.iter_mut().skip(1) {
            for (x, a) in vertex.0.iter_mut().zip(&anchor) {
                *x = a + 0.5 * (*x - a);
            }
            vertex.1 = eval(&vertex.0);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, f) = simplex.swap_remove(0);
    NelderMeadResult {
        x,
        f,
        iterations,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let r = minimize_nelder_mead(
            |x| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2),
            &[-1.2, 1.0],
            &NelderMeadConfig::default(),
        );
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-4 && (r.x[1] - 1.0).abs() < 1e-4, "{:?}", r.x);
    }

    #[test]
    fn avoids_non_finite_region() {
        let r = minimize_nelder_mead(
            |x| if x[0] > 0.5 { f64::NAN } else { (x[0] - 0.3).powi(2) },
            &[0.0],
            &NelderMeadConfig::default(),
        );
        assert!((r.x[0] - 0.3).abs() < 1e-6);
    }
}
