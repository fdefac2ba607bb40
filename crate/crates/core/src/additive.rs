//! Decomposable additive forecaster: a continuous piecewise-linear trend
//! with sparse changepoints plus a Fourier yearly seasonality, fitted by
//! maximum a posteriori estimation.
//!
//! Times are days since 1970-01-01. Internally the fit works on time
//! rescaled to `[0, 1]` over the training window and prices divided by their
//! training maximum; [`AdditiveParams`] are always reported on the original
//! scale.

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{minimize_lbfgs, LbfgsConfig, Termination};

pub const YEAR_DAYS: f64 = 365.25;

/// Smoothing of `|x|` in the Laplace prior: `sqrt(x^2 + eps^2)`.
pub const SMOOTH_ABS_EPS: f64 = 1e-8;

pub const DEFAULT_TAU_GRID: [f64; 5] = [0.005, 0.01, 0.05, 0.1, 0.5];
pub const DEFAULT_SIGMA_GRID: [f64; 6] = [0.01, 0.05, 0.1, 0.5, 1.0, 2.0];

pub fn days_since_epoch(date: NaiveDate) -> f64 {
    (date - NaiveDate::from_ymd_opt(1970, 1, 1).expect("valid epoch")).num_days() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdditiveConfig {
    /// Laplace prior scale on the rate adjustments.
    pub tau: f64,
    /// Gaussian prior scale on the Fourier coefficients.
    pub sigma_season: f64,
    pub n_changepoints: usize,
    /// Share of the training span that holds changepoints.
    pub changepoint_fraction: f64,
    pub fourier_order: usize,
    /// Seasonal period in days.
    pub period: f64,
}

impl Default for AdditiveConfig {
    fn default() -> Self {
        Self {
            tau: 0.05,
            sigma_season: 10.0,
            n_changepoints: 25,
            changepoint_fraction: 0.8,
            fourier_order: 10,
            period: YEAR_DAYS,
        }
    }
}

impl AdditiveConfig {
    fn validate(&self) -> Result<()> {
        let positive = self.tau > 0.0 && self.sigma_season > 0.0 && self.period > 0.0;
        let fraction = self.changepoint_fraction > 0.0 && self.changepoint_fraction <= 1.0;
        if !positive || !fraction {
            return Err(Error::InvalidArgument(format!("invalid additive config {self:?}")));
        }
        Ok(())
    }

    fn dim(&self) -> usize {
        2 + self.n_changepoints + 2 * self.fourier_order
    }
}

/// Trend and seasonality coefficients. Intercept corrections are derived
/// from `-changepoints[j] * delta[j]` and never stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdditiveParams {
    /// Base growth rate (price per day).
    pub k: f64,
    /// Offset (value of the base line at day 0).
    pub m: f64,
    /// Rate adjustments, one per changepoint.
    pub delta: Vec<f64>,
    /// Changepoint times in days since the epoch.
    pub changepoints: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub period: f64,
}

impl AdditiveParams {
    pub fn zeros(changepoints: Vec<f64>, fourier_order: usize, period: f64) -> Self {
        Self {
            k: 0.0,
            m: 0.0,
            delta: vec![0.0; changepoints.len()],
            changepoints,
            a: vec![0.0; fourier_order],
            b: vec![0.0; fourier_order],
            period,
        }
    }

    /// Parameters flattened as `[k, m, delta.., a.., b..]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = vec![self.k, self.m];
        v.extend(&self.delta);
        v.extend(&self.a);
        v.extend(&self.b);
        v
    }

    /// Inverse of [`AdditiveParams::to_vec`], keeping changepoints and period.
    pub fn with_vec(&self, v: &[f64]) -> Self {
        let s = self.delta.len();
        let n = self.a.len();
        Self {
            k: v[0],
            m: v[1],
            delta: v[2..2 + s].to_vec(),
            changepoints: self.changepoints.clone(),
            a: v[2 + s..2 + s + n].to_vec(),
            b: v[2 + s + n..2 + s + 2 * n].to_vec(),
            period: self.period,
        }
    }
}

/// `S` changepoints at `t0 + i * fraction * span / S`, `i = 1..=S`, over the
/// span of `times`.
pub fn place_changepoints(times: &[f64], count: usize, fraction: f64) -> Result<Vec<f64>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    if count > times.len() {
        return Err(Error::InvalidArgument(format!(
            "{count} changepoints for {} training points",
            times.len()
        )));
    }
    let lo = times.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = times.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let step = fraction * (hi - lo) / count as f64;
    Ok((1..=count).map(|i| lo + i as f64 * step).collect())
}

pub fn trend_eval(params: &AdditiveParams, t: f64) -> f64 {
    let mut slope = params.k;
    let mut offset = params.m;
    for (s, d) in params.changepoints.iter().zip(&params.delta) {
        if t > *s {
            slope += d;
            offset -= s * d;
        }
    }
    slope * t + offset
}

pub fn seasonality_eval(params: &AdditiveParams, t: f64) -> f64 {
    let w = 2.0 * std::f64::consts::PI * t / params.period;
    params
        .a
        .iter()
        .zip(&params.b)
        .enumerate()
        .map(|(i, (a, b))| {
            let x = (i + 1) as f64 * w;
            a * x.cos() + b * x.sin()
        })
        .sum()
}

/// Point forecast: trend plus seasonality.
pub fn predict(params: &AdditiveParams, t: f64) -> f64 {
    trend_eval(params, t) + seasonality_eval(params, t)
}

fn fourier_row(t: f64, order: usize, period: f64) -> Vec<f64> {
    let w = 2.0 * std::f64::consts::PI * t / period;
    let mut row = Vec::with_capacity(2 * order);
    row.extend((1..=order).map(|n| (n as f64 * w).cos()));
    row.extend((1..=order).map(|n| (n as f64 * w).sin()));
    row
}

/// Penalized least-squares problem in whatever time unit `trend_time` and
/// `changepoints` share; seasonal features are precomputed.
struct Objective {
    trend_time: Vec<f64>,
    features: Vec<Vec<f64>>,
    y: Vec<f64>,
    changepoints: Vec<f64>,
    order: usize,
    tau: f64,
    sigma: f64,
}

impl Objective {
    fn value_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let s = self.changepoints.len();
        let n = self.order;
        let (k, m) = (x[0], x[1]);
        let delta = &x[2..2 + s];
        let beta = &x[2 + s..2 + s + 2 * n];
        let mut grad = vec![0.0; x.len()];
        let mut value = 0.0;

        for ((&u, feats), &y) in self.trend_time.iter().zip(&self.features).zip(&self.y) {
            let mut slope = k;
            let mut offset = m;
            for (sj, dj) in self.changepoints.iter().zip(delta) {
                if u > *sj {
                    slope += dj;
                    offset -= sj * dj;
                }
            }
            let season: f64 = feats.iter().zip(beta).map(|(f, b)| f * b).sum();
            let r = y - slope * u - offset - season;
            value += 0.5 * r * r;
            grad[0] -= r * u;
            grad[1] -= r;
            for (j, sj) in self.changepoints.iter().enumerate() {
                if u > *sj {
                    grad[2 + j] -= r * (u - sj);
                }
            }
            for (gi, f) in grad[2 + s..].iter_mut().zip(feats) {
                *gi -= r * f;
            }
        }

        for (j, d) in delta.iter().enumerate() {
            let smooth = (d * d + SMOOTH_ABS_EPS * SMOOTH_ABS_EPS).sqrt();
            value += smooth / self.tau;
            grad[2 + j] += d / (smooth * self.tau);
        }
        let inv_var = 1.0 / (self.sigma * self.sigma);
        for (i, b) in beta.iter().enumerate() {
            value += 0.5 * b * b * inv_var;
            grad[2 + s + i] += b * inv_var;
        }
        (value, grad)
    }
}

/// Negative log posterior (up to a constant) and its gradient with respect
/// to `[k, m, delta.., a.., b..]`, for `(t, y)` pairs with `t` in days.
pub fn neg_log_posterior(
    params: &AdditiveParams,
    data: &[(f64, f64)],
    config: &AdditiveConfig,
) -> Result<(f64, Vec<f64>)> {
    config.validate()?;
    let order = params.a.len();
    let objective = Objective {
        trend_time: data.iter().map(|d| d.0).collect(),
        features: data.iter().map(|d| fourier_row(d.0, order, params.period)).collect(),
        y: data.iter().map(|d| d.1).collect(),
        changepoints: params.changepoints.clone(),
        order,
        tau: config.tau,
        sigma: config.sigma_season,
    };
    let (value, grad) = objective.value_grad(&params.to_vec());
    if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("additive objective".into()));
    }
    Ok((value, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub t0: f64,
    pub span: f64,
    pub y_scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdditiveFit {
    pub params: AdditiveParams,
    pub config: AdditiveConfig,
    pub scaling: Scaling,
    pub objective: f64,
    pub iterations: usize,
    pub termination: Termination,
    pub train_rmse: f64,
}

/// MAP fit on `(date, price)` observations in any order.
pub fn fit_map(train: &[(NaiveDate, f64)], config: &AdditiveConfig) -> Result<AdditiveFit> {
    let data: Vec<(f64, f64)> = train.iter().map(|(d, y)| (days_since_epoch(*d), *y)).collect();
    fit_map_days(&data, config)
}

pub fn fit_map_days(data: &[(f64, f64)], config: &AdditiveConfig) -> Result<AdditiveFit> {
    config.validate()?;
    if data.len() < 2 {
        return Err(Error::InsufficientData("additive fit needs at least two points".into()));
    }
    if data.len() < 2 * config.n_changepoints {
        log::warn!(
            "{} training points for {} changepoints",
            data.len(),
            config.n_changepoints
        );
    }
    let t0 = data.iter().map(|d| d.0).fold(f64::INFINITY, f64::min);
    let t1 = data.iter().map(|d| d.0).fold(f64::NEG_INFINITY, f64::max);
    let span = t1 - t0;
    let y_scale = data.iter().map(|d| d.1.abs()).fold(0.0, f64::max);
    if !(span > 0.0) || !(y_scale > 0.0) || data.iter().any(|d| !d.1.is_finite()) {
        return Err(Error::InsufficientData(
            "additive fit needs distinct dates and finite, non-zero prices".into(),
        ));
    }

    let u: Vec<f64> = data.iter().map(|d| (d.0 - t0) / span).collect();
    let y: Vec<f64> = data.iter().map(|d| d.1 / y_scale).collect();
    let cps_u = place_changepoints(&u, config.n_changepoints, config.changepoint_fraction)?;
    let objective = Objective {
        trend_time: u.clone(),
        features: data
            .iter()
            .map(|d| fourier_row(d.0, config.fourier_order, config.period))
            .collect(),
        y: y.clone(),
        changepoints: cps_u.clone(),
        order: config.fourier_order,
        tau: config.tau,
        sigma: config.sigma_season,
    };

    let (k0, m0) = ols_line(&u, &y);
    let mut x0 = vec![0.0; config.dim()];
    x0[0] = k0;
    x0[1] = m0;
    let result = minimize_lbfgs(|x| objective.value_grad(x), &x0, &LbfgsConfig::default())?;
    if !result.f.is_finite() {
        return Err(Error::NonFinite("additive objective at the optimum".into()));
    }

    let x = &result.x;
    let s = config.n_changepoints;
    let n = config.fourier_order;
    let params = AdditiveParams {
        k: y_scale * x[0] / span,
        m: y_scale * (x[1] - x[0] * t0 / span),
        delta: x[2..2 + s].iter().map(|d| y_scale * d / span).collect(),
        changepoints: cps_u.iter().map(|c| t0 + span * c).collect(),
        a: x[2 + s..2 + s + n].iter().map(|v| y_scale * v).collect(),
        b: x[2 + s + n..].iter().map(|v| y_scale * v).collect(),
        period: config.period,
    };
    let train_rmse = (data
        .iter()
        .map(|(t, y)| (y - predict(&params, *t)).powi(2))
        .sum::<f64>()
        / data.len() as f64)
        .sqrt();
    Ok(AdditiveFit {
        params,
        config: *config,
        scaling: Scaling { t0, span, y_scale },
        objective: result.f,
        iterations: result.iterations,
        termination: result.termination,
        train_rmse,
    })
}

fn ols_line(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, my - slope * mx)
}

/// A week to forecast in a walk-forward loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalTarget {
    pub date: NaiveDate,
    pub observed: f64,
    /// Observed price of the preceding week.
    pub previous: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WalkForwardPoint {
    pub date: NaiveDate,
    pub previous: f64,
    pub observed: f64,
    pub predicted: f64,
}

impl WalkForwardPoint {
    pub fn predicted_delta(&self) -> f64 {
        self.predicted - self.previous
    }

    pub fn observed_delta(&self) -> f64 {
        self.observed - self.previous
    }
}

/// Forecasts each target from a fresh fit on every history point dated
/// strictly before it.
pub fn walk_forward(
    config: &AdditiveConfig,
    history: &[(NaiveDate, f64)],
    targets: &[EvalTarget],
) -> Result<Vec<WalkForwardPoint>> {
    targets
        .par_iter()
        .map(|target| {
            let past: Vec<(NaiveDate, f64)> =
                history.iter().copied().filter(|(d, _)| *d < target.date).collect();
            let fit = fit_map(&past, config)?;
            Ok(WalkForwardPoint {
                date: target.date,
                previous: target.previous,
                observed: target.observed,
                predicted: predict(&fit.params, days_since_epoch(target.date)),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpandingEval {
    pub points: Vec<WalkForwardPoint>,
    pub metrics: crate::harness::metrics::MetricsReport,
}

/// Expanding-window evaluation over `history[eval_range]`: before every
/// evaluated point the model is refitted on all earlier points.
pub fn expanding_window_eval(
    config: &AdditiveConfig,
    history: &[(NaiveDate, f64)],
    eval_range: std::ops::Range<usize>,
) -> Result<ExpandingEval> {
    if eval_range.start == 0 || eval_range.end > history.len() || eval_range.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "evaluation range {eval_range:?} must lie within 1..{}",
            history.len()
        )));
    }
    let targets: Vec<EvalTarget> = eval_range
        .map(|i| EvalTarget {
            date: history[i].0,
            observed: history[i].1,
            previous: history[i - 1].1,
        })
        .collect();
    let points = walk_forward(config, history, &targets)?;
    let series = crate::harness::metrics::ForecastSeries::from_walk_forward(&points);
    let metrics = crate::harness::metrics::compute_metrics(&series)?;
    Ok(ExpandingEval { points, metrics })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub tau: f64,
    pub sigma: f64,
    /// `None` when a fit failed.
    pub vrmse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdditiveGridResult {
    pub best: AdditiveConfig,
    pub best_vrmse: f64,
    pub cells: Vec<GridCell>,
}

/// Tunes `tau` and `sigma_season` by the walk-forward RMSE of price
/// increments over the validation weeks. Ties go to the smaller `tau`, then
/// the smaller `sigma`.
pub fn grid_search_additive(
    train: &[(NaiveDate, f64)],
    valid: &[(NaiveDate, f64)],
    tau_grid: &[f64],
    sigma_grid: &[f64],
    base: &AdditiveConfig,
) -> Result<AdditiveGridResult> {
    if tau_grid.is_empty() || sigma_grid.is_empty() {
        return Err(Error::InvalidArgument("empty additive grid".into()));
    }
    let history: Vec<(NaiveDate, f64)> = train.iter().chain(valid).copied().collect();
    let mut prev = train
        .last()
        .ok_or_else(|| Error::InsufficientData("empty training series".into()))?
        .1;
    let targets: Vec<EvalTarget> = valid
        .iter()
        .map(|&(date, observed)| {
            let t = EvalTarget { date, observed, previous: prev };
            prev = observed;
            t
        })
        .collect();
    if targets.is_empty() {
        return Err(Error::InsufficientData("empty validation series".into()));
    }

    let combos: Vec<(f64, f64)> = tau_grid
        .iter()
        .flat_map(|&t| sigma_grid.iter().map(move |&s| (t, s)))
        .collect();
    let cells: Vec<GridCell> = combos
        .par_iter()
        .map(|&(tau, sigma)| {
            let cfg = AdditiveConfig { tau, sigma_season: sigma, ..*base };
            let vrmse = match walk_forward(&cfg, &history, &targets) {
                Ok(points) => {
                    let mse = points
                        .iter()
                        .map(|p| (p.predicted_delta() - p.observed_delta()).powi(2))
                        .sum::<f64>()
                        / points.len() as f64;
                    Some(mse.sqrt()).filter(|v| v.is_finite())
                }
                Err(e) => {
                    log::warn!("additive tau={tau} sigma={sigma} failed: {e}");
                    None
                }
            };
            GridCell { tau, sigma, vrmse }
        })
        .collect();

    let best = cells
        .iter()
        .filter_map(|c| c.vrmse.map(|v| (c, v)))
        .min_by(|(a, va), (b, vb)| {
            va.total_cmp(vb)
                .then(a.tau.total_cmp(&b.tau))
                .then(a.sigma.total_cmp(&b.sigma))
        })
        .ok_or_else(|| Error::Optimization("every additive grid cell failed".into()))?;
    Ok(AdditiveGridResult {
        best: AdditiveConfig { tau: best.0.tau, sigma_season: best.0.sigma, ..*base },
        best_vrmse: best.1,
        cells,
    })
}
