use chrono::NaiveDate;

use super::train::Dataset;
use crate::error::{Error, Result};
use crate::weekly::{make_supervised, Scaler, ScalingMethod, SplitDataset, SupervisedWindows, FEATURES};

/// A contiguous weekly series prepared for the networks: features scaled
/// with statistics of the training weeks, raw prices kept for targets.
#[derive(Debug, Clone, PartialEq)]
pub struct NnData {
    pub weeks: Vec<NaiveDate>,
    pub features: Vec<[f64; FEATURES]>,
    pub prices: Vec<f64>,
    /// Index of the first validation week.
    pub valid_start: usize,
    /// Index of the first test week.
    pub test_start: usize,
    pub scaler: Scaler,
    /// Targets are divided by this during training: the largest absolute
    /// weekly increment among training weeks.
    pub target_scale: f64,
}

/// Windows grouped by the partition of their target week.
#[derive(Debug, Clone, PartialEq)]
pub struct Partitions {
    pub train: SupervisedWindows,
    pub valid: SupervisedWindows,
    pub test: SupervisedWindows,
}

impl NnData {
    pub fn from_split(split: &SplitDataset, method: ScalingMethod) -> Result<Self> {
        let scaler = Scaler::fit(&split.train, method)?;
        let rows: Vec<_> =
            split.train.rows.iter().chain(&split.valid.rows).chain(&split.test.rows).collect();
        let prices: Vec<f64> = rows.iter().map(|r| r.avg_price).collect();
        let train_len = split.train.len();
        let target_scale = prices[..train_len]
            .windows(2)
            .map(|w| (w[1] - w[0]).abs())
            .fold(0.0, f64::max);
        Ok(Self {
            weeks: rows.iter().map(|r| r.week_start).collect(),
            features: rows.iter().map(|r| scaler.transform_row(&r.features())).collect(),
            prices,
            valid_start: train_len,
            test_start: train_len + split.valid.len(),
            scaler,
            target_scale: if target_scale > 0.0 { target_scale } else { 1.0 },
        })
    }

    pub fn len(&self) -> usize {
        self.prices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prices.is_empty()
    }

    pub fn partition(&self, window: usize) -> Result<Partitions> {
        let all = make_supervised(&self.features, &self.prices, window)?;
        let (v, t) = (self.valid_start, self.test_start);
        Ok(Partitions {
            train: all.select(|i| i < v),
            valid: all.select(|i| i >= v && i < t),
            test: all.select(|i| i >= t),
        })
    }

    pub fn dataset(&self, windows: &SupervisedWindows) -> Result<Dataset> {
        Dataset::from_windows(windows, FEATURES, self.target_scale)
    }

    /// Training and validation datasets for a window length.
    pub fn train_valid(&self, window: usize) -> Result<(Dataset, Dataset)> {
        let p = self.partition(window)?;
        if p.train.is_empty() {
            return Err(Error::EmptyPartition("train"));
        }
        if p.valid.is_empty() {
            return Err(Error::EmptyPartition("valid"));
        }
        Ok((self.dataset(&p.train)?, self.dataset(&p.valid)?))
    }
}
