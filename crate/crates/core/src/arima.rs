//! Non-seasonal ARIMA(p, d, q) on log prices: conditional-sum-of-squares
//! Gaussian likelihood, simplex-search estimation, least-BIC order selection
//! and one-step rolling forecasts.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{minimize_nelder_mead, NelderMeadConfig};
use crate::stats::{diff, ljung_box, LjungBoxResult, LJUNG_BOX_LAGS};

/// Roots of the AR or MA polynomial at or inside this modulus flag a fit.
const ROOT_MARGIN: f64 = 1.001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ArimaSpec {
    pub p: usize,
    pub d: usize,
    pub q: usize,
}

impl ArimaSpec {
    pub fn new(p: usize, d: usize, q: usize) -> Self {
        Self { p, d, q }
    }

    /// Estimated parameters including the innovation variance.
    pub fn num_params(&self) -> usize {
        self.p + self.q + 1
    }

    fn max_lag(&self) -> usize {
        self.p.max(self.q)
    }

    fn validate(&self) -> Result<()> {
        if self.d > 1 {
            return Err(Error::InvalidArgument(format!(
                "only d in {{0, 1}} is supported, got d = {}",
                self.d
            )));
        }
        Ok(())
    }
}

impl std::fmt::Display for ArimaSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ARIMA({},{},{})", self.p, self.d, self.q)
    }
}

/// All `(p, d, q)` with `p <= p_max` and `q <= q_max`.
pub fn candidate_grid(p_max: usize, q_max: usize, d: usize) -> Vec<ArimaSpec> {
    (0..=p_max)
        .flat_map(|p| (0..=q_max).map(move |q| ArimaSpec::new(p, d, q)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArimaFit {
    pub spec: ArimaSpec,
    pub phi: Vec<f64>,
    pub theta: Vec<f64>,
    pub sigma2: f64,
    pub loglik: f64,
    pub bic: f64,
    /// Effective sample size behind the likelihood.
    pub nobs: usize,
    pub residuals: Vec<f64>,
    /// True when an AR or MA root lies within the unit circle margin.
    pub near_unit_root: bool,
}

/// CSS residuals `e_t = w_t - sum phi_i w_{t-i} - sum theta_j e_{t-j}` for
/// `t >= max(p, q)`, with earlier innovations taken as zero.
fn css_residuals(phi: &[f64], theta: &[f64], w: &[f64]) -> Vec<f64> {
    let start = phi.len().max(theta.len());
    let mut e = vec![0.0; w.len()];
    for t in start..w.len() {
        let ar: f64 = phi.iter().enumerate().map(|(i, c)| c * w[t - 1 - i]).sum();
        let ma: f64 = theta.iter().enumerate().map(|(j, c)| c * e[t - 1 - j]).sum();
        e[t] = w[t] - ar - ma;
    }
    e.drain(..start);
    e
}

/// Negative conditional Gaussian log-likelihood at the profiled variance
/// `sigma^2 = sum e^2 / n`, together with the residuals.
pub fn css_neg_loglik(phi: &[f64], theta: &[f64], w: &[f64]) -> Result<(f64, Vec<f64>)> {
    css_neg_loglik_from(phi, theta, w, phi.len().max(theta.len()))
}

/// As [`css_neg_loglik`], but only residuals from index `n_cond` on enter
/// the likelihood. `n_cond` is raised to the model's maximum lag if lower.
pub fn css_neg_loglik_from(phi: &[f64], theta: &[f64], w: &[f64], n_cond: usize) -> Result<(f64, Vec<f64>)> {
    let start = phi.len().max(theta.len());
    let n_cond = n_cond.max(start);
    if w.len() < n_cond + 5 {
        return Err(Error::InsufficientData(format!(
            "{} observations for a likelihood conditioned on {n_cond}",
            w.len()
        )));
    }
    let mut e = css_residuals(phi, theta, w);
    e.drain(..n_cond - start);
    let n = e.len() as f64;
    let sigma2 = e.iter().map(|v| v * v).sum::<f64>() / n;
    let value = 0.5 * n * ((2.0 * std::f64::consts::PI).ln() + sigma2.ln() + 1.0);
    Ok((value, e))
}

/// True if any root of `1 - sum c_i z^i` has modulus at most `margin`.
fn has_root_within(coefs: &[f64], margin: f64) -> bool {
    let k = coefs.len();
    if k == 0 {
        return false;
    }
    // Companion eigenvalues are reciprocals of the polynomial roots.
    let companion = DMatrix::from_fn(k, k, |i, j| {
        if i == 0 {
            coefs[j]
        } else if i == j + 1 {
            1.0
        } else {
            0.0
        }
    });
    companion
        .complex_eigenvalues()
        .iter()
        .any(|l| l.re.hypot(l.im) >= 1.0 / margin)
}

/// True if the AR polynomial has a root on or inside the unit circle.
pub fn is_explosive(phi: &[f64]) -> bool {
    has_root_within(phi, 1.0)
}

fn near_unit_root(phi: &[f64], theta: &[f64]) -> bool {
    let neg_theta: Vec<f64> = theta.iter().map(|t| -t).collect();
    has_root_within(phi, ROOT_MARGIN) || has_root_within(&neg_theta, ROOT_MARGIN)
}

/// Start points for the simplex search: the origin, then all `+0.1`, all
/// `-0.1`, and alternating signs.
fn start_points(dim: usize) -> Vec<Vec<f64>> {
    vec![
        vec![0.0; dim],
        vec![0.1; dim],
        vec![-0.1; dim],
        (0..dim).map(|i| if i % 2 == 0 { 0.1 } else { -0.1 }).collect(),
    ]
}

/// Fits `spec` to a log-price series by minimizing the CSS objective.
pub fn fit_arima(logp: &[f64], spec: ArimaSpec) -> Result<ArimaFit> {
    fit_arima_conditioned(logp, spec, 0)
}

/// Fits with the likelihood taken over differenced observations from index
/// `n_cond` on (at least the model's maximum lag), so that fits of
/// different orders can share one sample.
pub fn fit_arima_conditioned(logp: &[f64], spec: ArimaSpec, n_cond: usize) -> Result<ArimaFit> {
    spec.validate()?;
    if logp.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("log-price series".into()));
    }
    let w = diff(logp, spec.d)?;
    let dim = spec.p + spec.q;
    let objective = |x: &[f64]| {
        css_neg_loglik_from(&x[..spec.p], &x[spec.p..], &w, n_cond).map_or(f64::INFINITY, |(v, _)| v)
    };
    // Surface length errors before searching.
    css_neg_loglik_from(&vec![0.0; spec.p], &vec![0.0; spec.q], &w, n_cond)?;

    let cfg = NelderMeadConfig::default();
    let mut best: Option<(Vec<f64>, f64)> = None;
    let starts = if dim == 0 { vec![Vec::new()] } else { start_points(dim) };
    for x0 in starts {
        let r = minimize_nelder_mead(objective, &x0, &cfg);
        if best.as_ref().is_none_or(|(_, f)| r.f < *f) {
            best = Some((r.x, r.f));
        }
    }
    let (x, value) = best.expect("at least one start point");
    if !value.is_finite() {
        return Err(Error::Optimization(format!("{spec}: objective is not finite at the optimum")));
    }
    let (phi, theta) = (x[..spec.p].to_vec(), x[spec.p..].to_vec());
    let (value, residuals) = css_neg_loglik_from(&phi, &theta, &w, n_cond)?;
    let nobs = residuals.len();
    let sigma2 = residuals.iter().map(|v| v * v).sum::<f64>() / nobs as f64;
    if !(sigma2 > 0.0) {
        return Err(Error::ZeroVariance(format!("{spec}: residual variance is zero")));
    }
    let loglik = -value;
    let bic = spec.num_params() as f64 * (nobs as f64).ln() - 2.0 * loglik;
    let near_unit_root = near_unit_root(&phi, &theta);
    if near_unit_root {
        log::warn!("{spec}: estimated polynomial has a root near the unit circle");
    }
    Ok(ArimaFit {
        spec,
        phi,
        theta,
        sigma2,
        loglik,
        bic,
        nobs,
        residuals,
        near_unit_root,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateOutcome {
    pub spec: ArimaSpec,
    pub bic: Option<f64>,
    pub loglik: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArimaSelection {
    pub best: ArimaFit,
    pub candidates: Vec<CandidateOutcome>,
}

/// Fits every candidate (in parallel) and keeps the least-BIC fit. Ties go
/// to fewer parameters, then to the lower MA order.
///
/// All candidates are conditioned on the largest lag in the grid, so every
/// BIC is computed on the same observations.
pub fn select_arima(logp: &[f64], candidates: &[ArimaSpec]) -> Result<ArimaSelection> {
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("no ARIMA candidates".into()));
    }
    let n_cond = candidates.iter().map(|s| s.p.max(s.q)).max().unwrap_or(0);
    let fits: Vec<Result<ArimaFit>> = candidates
        .par_iter()
        .map(|&spec| fit_arima_conditioned(logp, spec, n_cond))
        .collect();

    let table = candidates
        .iter()
        .zip(&fits)
        .map(|(&spec, fit)| match fit {
            Ok(f) => CandidateOutcome {
                spec,
                bic: Some(f.bic),
                loglik: Some(f.loglik),
                error: None,
            },
            Err(e) => CandidateOutcome {
                spec,
                bic: None,
                loglik: None,
                error: Some(e.to_string()),
            },
        })
        .collect();

    let best = fits
        .into_iter()
        .filter_map(Result::ok)
        .min_by(|a, b| {
            a.bic
                .total_cmp(&b.bic)
                .then(a.spec.num_params().cmp(&b.spec.num_params()))
                .then(a.spec.q.cmp(&b.spec.q))
        })
        .ok_or_else(|| Error::Optimization("every ARIMA candidate failed to fit".into()))?;
    Ok(ArimaSelection {
        best,
        candidates: table,
    })
}

/// One-step-ahead price forecast for week `index`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OneStep {
    pub index: usize,
    pub previous_price: f64,
    pub predicted_price: f64,
    /// `predicted_price - previous_price`.
    pub predicted_delta: f64,
}

/// How coefficients evolve over a rolling forecast.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RollingMode {
    /// Coefficients fixed at the fitted values; only the history grows.
    #[default]
    Frozen,
    /// Re-estimate on all observations before each forecast.
    Refit,
}

fn first_forecastable(spec: &ArimaSpec) -> usize {
    spec.max_lag() + spec.d
}

fn check_start(spec: &ArimaSpec, len: usize, start: usize) -> Result<()> {
    let min = first_forecastable(spec).max(1);
    if start < min || start >= len {
        return Err(Error::InvalidArgument(format!(
            "forecast start {start} outside {min}..{len} for {spec}"
        )));
    }
    Ok(())
}

/// One-step prediction of the (differenced) log series at position `j` of
/// `w`, given residuals for all earlier positions.
fn predict_w(phi: &[f64], theta: &[f64], w: &[f64], e: &[f64], j: usize) -> f64 {
    let ar: f64 = phi.iter().enumerate().map(|(i, c)| c * w[j - 1 - i]).sum();
    let ma: f64 = theta.iter().enumerate().map(|(k, c)| c * e[j - 1 - k]).sum();
    ar + ma
}

fn to_price(spec: &ArimaSpec, logp: &[f64], t: usize, w_hat: f64) -> OneStep {
    let previous_price = logp[t - 1].exp();
    let predicted_price = if spec.d == 1 {
        previous_price * w_hat.exp()
    } else {
        w_hat.exp()
    };
    OneStep {
        index: t,
        previous_price,
        predicted_price,
        predicted_delta: predicted_price - previous_price,
    }
}

/// Frozen-coefficient one-step forecasts for every index in
/// `test_start..full_logp.len()`. Each forecast uses observed history
/// through the previous week only.
pub fn rolling_forecast(fit: &ArimaFit, full_logp: &[f64], test_start: usize) -> Result<Vec<OneStep>> {
    let spec = fit.spec;
    check_start(&spec, full_logp.len(), test_start)?;
    let w = diff(full_logp, spec.d)?;
    let m = spec.max_lag();
    let mut e = vec![0.0; m];
    e.extend(css_residuals(&fit.phi, &fit.theta, &w));
    Ok((test_start..full_logp.len())
        .map(|t| {
            let w_hat = predict_w(&fit.phi, &fit.theta, &w, &e, t - spec.d);
            to_price(&spec, full_logp, t, w_hat)
        })
        .collect())
}

/// Rolling forecasts re-estimating `spec` on `full_logp[..t]` before each
/// step.
pub fn rolling_forecast_refit(spec: ArimaSpec, full_logp: &[f64], test_start: usize) -> Result<Vec<OneStep>> {
    check_start(&spec, full_logp.len(), test_start)?;
    (test_start..full_logp.len())
        .map(|t| {
            let fit = fit_arima(&full_logp[..t], spec)?;
            let mut ext = full_logp[..t].to_vec();
            // Placeholder for the unknown week; only history before it is read.
            ext.push(full_logp[t - 1]);
            let step = rolling_forecast(&fit, &ext, t)?;
            Ok(step[0])
        })
        .collect()
}

pub fn rolling(mode: RollingMode, fit: &ArimaFit, full_logp: &[f64], test_start: usize) -> Result<Vec<OneStep>> {
    match mode {
        RollingMode::Frozen => rolling_forecast(fit, full_logp, test_start),
        RollingMode::Refit => rolling_forecast_refit(fit.spec, full_logp, test_start),
    }
}

/// Ljung-Box check of the fit residuals at lags 1, 6 and 12.
pub fn residual_diagnostics(fit: &ArimaFit) -> Result<LjungBoxResult> {
    ljung_box(&fit.residuals, &LJUNG_BOX_LAGS)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::simulate::{simulate_arima, ArimaSimulation};
    use crate::stats::log_series;

    fn sim(phi: &[f64], theta: &[f64], n: usize, seed: u64) -> Vec<f64> {
        let prices = simulate_arima(&ArimaSimulation {
            spec: ArimaSpec::new(phi.len(), 1, theta.len()),
            phi: phi.to_vec(),
            theta: theta.to_vec(),
            sigma: 0.02,
            n,
            seed,
        })
        .unwrap();
        log_series(&prices).unwrap()
    }

    #[test]
    fn css_white_noise_closed_form() {
        let w: Vec<f64> = (0..50).map(|i| ((i * 7919) % 13) as f64 / 13.0 - 0.5).collect();
        let (value, e) = css_neg_loglik(&[], &[], &w).unwrap();
        assert_eq!(e, w);
        let s2 = w.iter().map(|v| v * v).sum::<f64>() / 50.0;
        let ll: f64 = w
            .iter()
            .map(|v| -0.5 * (2.0 * std::f64::consts::PI * s2).ln() - v * v / (2.0 * s2))
            .sum();
        assert!((value + ll).abs() < 1e-9);

        let (_, e) = css_neg_loglik(&[0.0], &[], &w).unwrap();
        assert_eq!(e, w[1..].to_vec());
        assert!(css_neg_loglik(&[0.1, 0.2], &[0.3], &w[..6]).is_err());
    }

    #[test]
    fn css_minimizer_matches_grid() {
        let logp = sim(&[0.6], &[], 500, 5);
        let w = diff(&logp, 1).unwrap();
        let grid_best = (-99..=99)
            .map(|i| i as f64 / 100.0)
            .min_by(|a, b| {
                let fa = css_neg_loglik(&[*a], &[], &w).unwrap().0;
                let fb = css_neg_loglik(&[*b], &[], &w).unwrap().0;
                fa.total_cmp(&fb)
            })
            .unwrap();
        assert!((grid_best - 0.6).abs() < 0.05, "{grid_best}");
        let fit = fit_arima(&logp, ArimaSpec::new(1, 1, 0)).unwrap();
        assert!((fit.phi[0] - grid_best).abs() <= 0.01);
    }

    #[test]
    fn white_noise_variance() {
        let logp = sim(&[], &[], 300, 9);
        let w = diff(&logp, 1).unwrap();
        let fit = fit_arima(&logp, ArimaSpec::new(0, 1, 0)).unwrap();
        let s2 = w.iter().map(|v| v * v).sum::<f64>() / w.len() as f64;
        assert!(((fit.sigma2 - s2) / s2).abs() < 1e-6);
        assert_eq!(fit.residuals.len(), fit.nobs);
        let k = 1.0;
        assert_eq!(fit.bic, k * (fit.nobs as f64).ln() - 2.0 * fit.loglik);
    }

    #[test]
    fn recovers_ar2() {
        let good = (0..20)
            .filter(|&seed| {
                let fit = fit_arima(&sim(&[0.5, -0.3], &[], 400, 1000 + seed), ArimaSpec::new(2, 1, 0)).unwrap();
                (fit.phi[0] - 0.5).abs() <= 0.1 && (fit.phi[1] + 0.3).abs() <= 0.1
            })
            .count();
        assert!(good >= 16, "{good}/20");
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(fit_arima(&[0.0; 40], ArimaSpec::new(0, 2, 0)).is_err());
        assert!(fit_arima(&[0.0, 1.0, f64::NAN], ArimaSpec::new(0, 1, 0)).is_err());
        // Constant log-prices: residual variance zero.
        assert!(fit_arima(&[0.5; 40], ArimaSpec::new(0, 1, 0)).is_err());
        assert!(select_arima(&[0.5; 40], &[]).is_err());
    }

    #[test]
    fn unit_root_flag() {
        assert!(is_explosive(&[1.0]));
        assert!(is_explosive(&[0.5, 0.6]));
        assert!(!is_explosive(&[0.5, -0.3]));
        assert!(near_unit_root(&[], &[-1.0]));
        assert!(!near_unit_root(&[0.3], &[0.4]));
    }

    fn manual_fit(phi: Vec<f64>, theta: Vec<f64>, d: usize) -> ArimaFit {
        ArimaFit {
            spec: ArimaSpec::new(phi.len(), d, theta.len()),
            phi,
            theta,
            sigma2: 1.0,
            loglik: 0.0,
            bic: 0.0,
            nobs: 0,
            residuals: vec![],
            near_unit_root: false,
        }
    }

    #[test]
    fn zero_coefficients_give_naive_forecast() {
        let logp = sim(&[0.4], &[0.2], 60, 3);
        let fit = manual_fit(vec![0.0], vec![0.0], 1);
        let steps = rolling_forecast(&fit, &logp, 30).unwrap();
        assert_eq!(steps.len(), 30);
        for s in steps {
            assert!((s.predicted_price - logp[s.index - 1].exp()).abs() < 1e-12);
            assert!(s.predicted_delta.abs() < 1e-12);
        }
    }

    #[test]
    fn ar1_one_step() {
        // log prices 0, 0.1 => last log increment 0.1.
        let logp = vec![0.0, 0.0, 0.1, 0.1];
        let fit = manual_fit(vec![0.5], vec![], 1);
        let steps = rolling_forecast(&fit, &logp, 3).unwrap();
        let w_hat = (steps[0].predicted_price / steps[0].previous_price).ln();
        assert!((w_hat - 0.05).abs() < 1e-12);
        assert!(rolling_forecast(&fit, &logp, 4).is_err());
        assert!(rolling_forecast(&fit, &logp, 1).is_err());
    }

    #[test]
    fn forecasts_scale_with_prices() {
        let logp = sim(&[0.5, -0.3], &[0.2], 120, 77);
        let fit = fit_arima(&logp[..90], ArimaSpec::new(2, 1, 1)).unwrap();
        let c: f64 = 3.7;
        let shifted: Vec<f64> = logp.iter().map(|v| v + c.ln()).collect();
        let a = rolling_forecast(&fit, &logp, 90).unwrap();
        let b = rolling_forecast(&fit, &shifted, 90).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((y.predicted_price - c * x.predicted_price).abs() < 1e-9 * y.predicted_price);
            let rx = (x.predicted_price / x.previous_price).ln();
            let ry = (y.predicted_price / y.previous_price).ln();
            assert!((rx - ry).abs() < 1e-12);
        }
    }

    #[test]
    fn refit_mode_runs() {
        let logp = sim(&[0.5], &[], 80, 21);
        let spec = ArimaSpec::new(1, 1, 0);
        let steps = rolling_forecast_refit(spec, &logp, 75).unwrap();
        assert_eq!(steps.len(), 5);
        let fit = fit_arima(&logp[..75], spec).unwrap();
        let frozen = rolling_forecast(&fit, &logp, 75).unwrap();
        // The first refit step uses the same data as the frozen fit.
        assert!((steps[0].predicted_price - frozen[0].predicted_price).abs() < 1e-9);
    }

    #[test]
    fn selection_invariants() {
        let logp = sim(&[0.5, -0.3], &[], 300, 4);
        let single = select_arima(&logp, &[ArimaSpec::new(1, 1, 1)]).unwrap();
        assert_eq!(single.best.spec, ArimaSpec::new(1, 1, 1));

        let sel = select_arima(&logp, &candidate_grid(2, 2, 1)).unwrap();
        assert_eq!(sel.candidates.len(), 9);
        for c in &sel.candidates {
            assert!(sel.best.bic <= c.bic.unwrap());
        }
        // Every candidate is scored on the same differenced observations.
        assert_eq!(sel.best.nobs, logp.len() - 1 - 2);
    }

    #[test]
    fn conditioning_drops_leading_residuals() {
        let w: Vec<f64> = (0..40).map(|i| ((i * 31) % 17) as f64 / 17.0 - 0.5).collect();
        let (_, full) = css_neg_loglik(&[0.4], &[0.2], &w).unwrap();
        let (v, late) = css_neg_loglik_from(&[0.4], &[0.2], &w, 3).unwrap();
        assert_eq!(late, full[2..].to_vec());
        let n = late.len() as f64;
        let s2 = late.iter().map(|e| e * e).sum::<f64>() / n;
        assert!((v - 0.5 * n * ((2.0 * std::f64::consts::PI * s2).ln() + 1.0)).abs() < 1e-9);
        assert_eq!(css_neg_loglik_from(&[0.4], &[], &w, 0).unwrap().1.len(), 39);
        assert!(css_neg_loglik_from(&[], &[], &w[..10], 6).is_err());
    }

    #[test]
    fn diagnostics_detect_misspecification() {
        let rejected = (0..20)
            .filter(|&seed| {
                let logp = sim(&[0.5, -0.3], &[], 400, 300 + seed);
                let fit = fit_arima(&logp, ArimaSpec::new(0, 1, 0)).unwrap();
                !residual_diagnostics(&fit).unwrap().at(6).unwrap().white_noise_ok
            })
            .count();
        assert!(rejected >= 19, "{rejected}/20");

        let ok = (0..20)
            .filter(|&seed| {
                let logp = sim(&[0.5, -0.3], &[], 400, 600 + seed);
                let fit = fit_arima(&logp, ArimaSpec::new(2, 1, 0)).unwrap();
                residual_diagnostics(&fit).unwrap().all_ok()
            })
            .count();
        assert!(ok >= 17, "{ok}/20");

        let mut zero = manual_fit(vec![], vec![], 1);
        zero.residuals = vec![0.0; 30];
        assert!(residual_diagnostics(&zero).is_err());
    }
}
