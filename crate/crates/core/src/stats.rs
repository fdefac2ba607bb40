//! Econometric diagnostics: log and difference transforms, sample ACF and
//! PACF, the Augmented Dickey-Fuller unit-root test and the Ljung-Box
//! portmanteau test.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_lr;

use crate::error::{Error, Result};

/// Large-sample critical values for the constant-only ADF regression.
pub const ADF_CRITICAL_VALUES: [(&str, f64); 3] = [("1%", -3.43), ("5%", -2.86), ("10%", -2.57)];

/// Lags reported by the residual white-noise check.
pub const LJUNG_BOX_LAGS: [usize; 3] = [1, 6, 12];

pub fn log_series(x: &[f64]) -> Result<Vec<f64>> {
    x.iter()
        .enumerate()
        .map(|(i, &v)| {
            if v > 0.0 {
                Ok(v.ln())
            } else {
                Err(Error::InvalidArgument(format!(
                    "log of non-positive value {v} at index {i}"
                )))
            }
        })
        .collect()
}

/// `d`-fold first differences.
pub fn diff(x: &[f64], d: usize) -> Result<Vec<f64>> {
    if d > 0 && x.len() <= d {
        return Err(Error::InsufficientData(format!(
            "cannot difference {} values {d} times",
            x.len()
        )));
    }
    let mut out = x.to_vec();
    for _ in 0..d {
        out = out.windows(2).map(|w| w[1] - w[0]).collect();
    }
    Ok(out)
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample autocorrelations for lags `0..=max_lag`.
pub fn acf(x: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    if max_lag >= x.len() {
        return Err(Error::InvalidArgument(format!(
            "max_lag {max_lag} must be below the series length {}",
            x.len()
        )));
    }
    let m = mean(x);
    let centered: Vec<f64> = x.iter().map(|v| v - m).collect();
    let denom: f64 = centered.iter().map(|v| v * v).sum();
    if !(denom > 0.0) || denom < 1e-300 {
        return Err(Error::ZeroVariance("constant series has no autocorrelation".into()));
    }
    Ok((0..=max_lag)
        .map(|k| {
            centered[..x.len() - k]
                .iter()
                .zip(&centered[k..])
                .map(|(a, b)| a * b)
                .sum::<f64>()
                / denom
        })
        .collect())
}

/// Partial autocorrelations for lags `0..=max_lag` by the Durbin-Levinson
/// recursion on the sample ACF. Entry 0 is 1.
pub fn pacf(x: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let rho = acf(x, max_lag)?;
    Ok(durbin_levinson(&rho))
}

pub(crate) fn durbin_levinson(rho: &[f64]) -> Vec<f64> {
    let max_lag = rho.len() - 1;
    let mut out = vec![1.0];
    let mut phi: Vec<f64> = Vec::new();
    for k in 1..=max_lag {
        let num = rho[k] - (1..k).map(|j| phi[j - 1] * rho[k - j]).sum::<f64>();
        let den = 1.0 - (1..k).map(|j| phi[j - 1] * rho[j]).sum::<f64>();
        let pkk = if den.abs() > 1e-300 { num / den } else { 0.0 };
        let prev = phi.clone();
        for j in 1..k {
            phi[j - 1] = prev[j - 1] - pkk * prev[k - j - 1];
        }
        phi.push(pkk);
        out.push(pkk);
    }
    out
}

/// Ordinary least squares summary.
pub(crate) struct OlsFit {
    pub beta: DVector<f64>,
    pub rss: f64,
    /// `(X'X)^-1`, to be scaled by the residual variance.
    pub xtx_inv: DMatrix<f64>,
}

pub(crate) fn ols(x: &DMatrix<f64>, y: &DVector<f64>) -> Option<OlsFit> {
    let xt = x.transpose();
    let xtx = &xt * x;
    let chol = xtx.clone().cholesky()?;
    let beta = chol.solve(&(&xt * y));
    let resid = y - x * &beta;
    let rss = resid.dot(&resid);
    // Near-singular designs pass Cholesky with garbage; guard on conditioning.
    let diag_max = xtx.diagonal().max();
    let l_min = chol.l().diagonal().iter().fold(f64::INFINITY, |a, &b| a.min(b.abs()));
    if !(l_min * l_min > diag_max * 1e-13) {
        return None;
    }
    Some(OlsFit {
        beta,
        rss,
        xtx_inv: chol.inverse(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdfResult {
    pub statistic: f64,
    pub lags_used: usize,
    pub nobs: usize,
    pub critical_values: BTreeMap<String, f64>,
    pub reject_unit_root_at_5pct: bool,
}

/// ADF regression `dx_t = c + gamma x_{t-1} + sum beta_i dx_{t-i} + e_t`
/// with the lag order picked by least AIC over `0..=floor(12 (n/100)^(1/4))`
/// on a common sample, then refitted on all usable observations.
pub fn adf_test(x: &[f64]) -> Result<AdfResult> {
    let n = x.len();
    if n < 30 {
        return Err(Error::InsufficientData(format!(
            "ADF test needs at least 30 observations, got {n}"
        )));
    }
    let m = mean(x);
    if x.iter().all(|v| (v - m).abs() <= 1e-12 * m.abs().max(1.0)) {
        return Err(Error::ZeroVariance("ADF regression on a constant series".into()));
    }
    let dx = diff(x, 1)?;
    let max_lag = ((12.0 * (n as f64 / 100.0).powf(0.25)).floor() as usize).min(dx.len() / 2 - 2);

    let design = |lags: usize, start: usize| -> (DMatrix<f64>, DVector<f64>) {
        let rows = dx.len() - start;
        let mut xm = DMatrix::zeros(rows, 2 + lags);
        let mut y = DVector::zeros(rows);
        for (r, j) in (start..dx.len()).enumerate() {
            y[r] = dx[j];
            xm[(r, 0)] = 1.0;
            xm[(r, 1)] = x[j];
            for i in 1..=lags {
                xm[(r, 1 + i)] = dx[j - i];
            }
        }
        (xm, y)
    };

    let mut best: Option<(f64, usize)> = None;
    for lags in 0..=max_lag {
        let (xm, y) = design(lags, max_lag);
        let Some(fit) = ols(&xm, &y) else { continue };
        let nobs = y.len() as f64;
        let aic = nobs * (fit.rss / nobs).max(1e-300).ln() + 2.0 * (lags + 2) as f64;
        if best.is_none_or(|(a, _)| aic < a) {
            best = Some((aic, lags));
        }
    }
    let (_, lags) = best.ok_or_else(|| Error::ZeroVariance("degenerate ADF regression".into()))?;

    let (xm, y) = design(lags, lags);
    let fit = ols(&xm, &y).ok_or_else(|| Error::ZeroVariance("degenerate ADF regression".into()))?;
    let dof = y.len() as f64 - (lags + 2) as f64;
    let s2 = fit.rss / dof;
    let se = (s2 * fit.xtx_inv[(1, 1)]).sqrt();
    if !(se > 0.0) || !se.is_finite() {
        return Err(Error::ZeroVariance("ADF regression has a perfect fit".into()));
    }
    let statistic = fit.beta[1] / se;
    let critical_values: BTreeMap<String, f64> = ADF_CRITICAL_VALUES
        .iter()
        .map(|&(k, v)| (k.to_string(), v))
        .collect();
    Ok(AdfResult {
        statistic,
        lags_used: lags,
        nobs: y.len(),
        reject_unit_root_at_5pct: statistic < critical_values["5%"],
        critical_values,
    })
}

/// Quantile of the chi-square distribution, found by bisection on the
/// regularized lower incomplete gamma function.
pub fn chi2_quantile(p: f64, df: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) || !(df > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "chi-square quantile needs 0 < p < 1 and df > 0, got p={p}, df={df}"
        )));
    }
    let cdf = |x: f64| gamma_lr(df / 2.0, x / 2.0);
    let mut hi = df.max(1.0);
    while cdf(hi) < p {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-13 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LjungBoxEntry {
    pub lag: usize,
    pub q: f64,
    pub chi2_95: f64,
    pub white_noise_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LjungBoxResult {
    pub entries: Vec<LjungBoxEntry>,
}

impl LjungBoxResult {
    pub fn all_ok(&self) -> bool {
        self.entries.iter().all(|e| e.white_noise_ok)
    }

    pub fn at(&self, lag: usize) -> Option<&LjungBoxEntry> {
        self.entries.iter().find(|e| e.lag == lag)
    }
}

/// `Q_h = n (n + 2) sum_{k=1..h} rho_k^2 / (n - k)` for each requested lag,
/// against the 95% chi-square quantile with `h` degrees of freedom.
pub fn ljung_box(residuals: &[f64], lags: &[usize]) -> Result<LjungBoxResult> {
    let max_lag = lags.iter().copied().max().unwrap_or(0);
    if max_lag == 0 {
        return Err(Error::InvalidArgument("Ljung-Box needs at least one positive lag".into()));
    }
    let rho = acf(residuals, max_lag)?;
    let n = residuals.len() as f64;
    let mut cumulative = vec![0.0; max_lag + 1];
    for k in 1..=max_lag {
        cumulative[k] = cumulative[k - 1] + rho[k] * rho[k] / (n - k as f64);
    }
    let entries = lags
        .iter()
        .map(|&h| {
            if h == 0 {
                return Err(Error::InvalidArgument("Ljung-Box lag 0".into()));
            }
            let q = n * (n + 2.0) * cumulative[h];
            let chi2_95 = chi2_quantile(0.95, h as f64)?;
            Ok(LjungBoxEntry {
                lag: h,
                q,
                chi2_95,
                white_noise_ok: q < chi2_95,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LjungBoxResult { entries })
}
