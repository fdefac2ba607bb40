//! Forecast error metrics. RMSE and MAE are computed on weekly price
//! increments, MAPE on price levels.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::additive::WalkForwardPoint;
use crate::error::{Error, Result};

/// One-step forecasts over a run of weeks. `delta[t] = observed[t] -
/// previous[t]` and `predicted_delta[t] = predicted[t] - previous[t]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastSeries {
    pub week_start: Vec<NaiveDate>,
    pub previous: Vec<f64>,
    pub observed: Vec<f64>,
    pub predicted: Vec<f64>,
}

impl ForecastSeries {
    pub fn len(&self) -> usize {
        self.week_start.len()
    }

    pub fn is_empty(&self) -> bool {
        self.week_start.is_empty()
    }

    pub fn observed_delta(&self) -> Vec<f64> {
        self.observed.iter().zip(&self.previous).map(|(p, q)| p - q).collect()
    }

    pub fn predicted_delta(&self) -> Vec<f64> {
        self.predicted.iter().zip(&self.previous).map(|(p, q)| p - q).collect()
    }

    pub fn from_walk_forward(points: &[WalkForwardPoint]) -> Self {
        Self {
            week_start: points.iter().map(|p| p.date).collect(),
            previous: points.iter().map(|p| p.previous).collect(),
            observed: points.iter().map(|p| p.observed).collect(),
            predicted: points.iter().map(|p| p.predicted).collect(),
        }
    }

    /// Builds a series from predicted increments.
    pub fn from_deltas(
        week_start: Vec<NaiveDate>,
        previous: Vec<f64>,
        observed: Vec<f64>,
        predicted_delta: &[f64],
    ) -> Self {
        let predicted = previous.iter().zip(predicted_delta).map(|(q, d)| q + d).collect();
        Self { week_start, previous, observed, predicted }
    }

    /// The no-change forecast over the same weeks.
    pub fn naive(&self) -> Self {
        Self { predicted: self.previous.clone(), ..self.clone() }
    }

    fn check(&self) -> Result<()> {
        let n = self.week_start.len();
        if self.previous.len() != n || self.observed.len() != n || self.predicted.len() != n {
            return Err(Error::Shape("forecast series columns differ in length".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rmse: f64,
    pub mae: f64,
    pub mape: f64,
    pub count: usize,
}

pub fn compute_metrics(fs: &ForecastSeries) -> Result<MetricsReport> {
    fs.check()?;
    if fs.is_empty() {
        return Err(Error::InsufficientData("no forecasts to score".into()));
    }
    if let Some(i) = fs.observed.iter().position(|p| !(*p > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "observed price {} on {} is not positive",
            fs.observed[i], fs.week_start[i]
        )));
    }
    let n = fs.len() as f64;
    let errors: Vec<f64> = fs
        .predicted_delta()
        .iter()
        .zip(fs.observed_delta())
        .map(|(a, b)| a - b)
        .collect();
    let rmse = (errors.iter().map(|e| e * e).sum::<f64>() / n).sqrt();
    let mae = errors.iter().map(|e| e.abs()).sum::<f64>() / n;
    let mape = fs
        .predicted
        .iter()
        .zip(&fs.observed)
        .map(|(h, p)| (h - p).abs() / p)
        .sum::<f64>()
        / n;
    if !(rmse.is_finite() && mae.is_finite() && mape.is_finite()) {
        return Err(Error::NonFinite("forecast metrics".into()));
    }
    Ok(MetricsReport { rmse, mae, mape, count: fs.len() })
}
