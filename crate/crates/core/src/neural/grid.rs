//! Hyperparameter grids for both families, a resumable parallel search, and
//! the refit used for test forecasts.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::{Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::NnData;
use super::layers::Padding;
use super::network::{ConvSpec, Family, NetworkParams, NetworkSpec};
use super::train::{mse, predict_dataset, train, train_epochs, TrainConfig};
use crate::error::{Error, Result};

pub const LAYERS: [usize; 3] = [1, 2, 3];
pub const UNITS: [usize; 3] = [32, 64, 96];
pub const DROPOUT: [f64; 3] = [0.1, 0.2, 0.3];
pub const LEARNING_RATES: [f64; 2] = [0.0005, 0.001];
pub const FILTERS: [usize; 3] = [10, 20, 30];
pub const KERNELS: [usize; 2] = [2, 4];
pub const WINDOWS_B: [usize; 3] = [4, 8, 12];
pub const REPEATS_A: usize = 10;
pub const REPEATS_B: usize = 2;

pub fn family_a_grid() -> Vec<NetworkSpec> {
    let mut out = Vec::new();
    for &l in &LAYERS {
        for &u in &UNITS {
            for &r in &DROPOUT {
                for &a in &LEARNING_RATES {
                    out.push(NetworkSpec::family_a(l, u, r, a));
                }
            }
        }
    }
    out
}

/// Every family-B combination, including ones whose shapes cannot be
/// instantiated.
pub fn family_b_grid() -> Vec<NetworkSpec> {
    let mut out = Vec::new();
    for base in family_a_grid() {
        for &filters in &FILTERS {
            for &kernel in &KERNELS {
                for pad1 in Padding::ALL {
                    for pad2 in Padding::ALL {
                        for &n in &WINDOWS_B {
                            let conv = ConvSpec { filters, kernel, pad1, pad2 };
                            out.push(NetworkSpec::family_b(
                                base.layers,
                                base.units,
                                base.dropout,
                                base.learning_rate,
                                conv,
                                n,
                            ));
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn grid(family: Family) -> Vec<NetworkSpec> {
    match family {
        Family::A => family_a_grid(),
        Family::B => family_b_grid(),
    }
}

pub fn default_repeats(family: Family) -> usize {
    match family {
        Family::A => REPEATS_A,
        Family::B => REPEATS_B,
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of one training run, a function of the base seed and the run's
/// position in the grid only.
pub fn run_seed(base: u64, config_index: usize, repeat: usize) -> u64 {
    splitmix64(base ^ splitmix64(((config_index as u64) << 20) | repeat as u64))
}

/// One line of the search journal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JournalRecord {
    pub config_index: usize,
    pub repeat: usize,
    pub seed: u64,
    pub key: String,
    pub train_rmse: Option<f64>,
    pub valid_rmse: Option<f64>,
    pub stopped_epoch: Option<usize>,
    pub best_epoch: Option<usize>,
    pub error: Option<String>,
}

const JOURNAL_HEADER: &str =
    "config_index,repeat,seed,key,train_rmse,valid_rmse,stopped_epoch,best_epoch,error\n";

/// Append-only CSV of finished runs.
pub struct Journal {
    path: PathBuf,
    file: std::fs::File,
}

impl Journal {
    /// Opens or creates the journal and returns the runs already recorded.
    /// A torn last line from an interrupted write is discarded.
    pub fn open(path: &Path) -> Result<(Self, Vec<JournalRecord>)> {
        if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let complete = match text.rfind('\n') {
            Some(i) => &text[..=i],
            None => "",
        };
        if complete.len() != text.len() {
            log::warn!("{}: dropping a partial last line", path.display());
            file.set_len(complete.len() as u64).map_err(|e| Error::io(path, e))?;
            file.seek(SeekFrom::End(0)).map_err(|e| Error::io(path, e))?;
        }
        if complete.is_empty() {
            file.write_all(JOURNAL_HEADER.as_bytes()).map_err(|e| Error::io(path, e))?;
        } else if !complete.starts_with(JOURNAL_HEADER) {
            return Err(Error::Config(format!("{} is not a grid journal", path.display())));
        }
        let mut records = Vec::new();
        for r in csv::Reader::from_reader(complete.as_bytes()).deserialize() {
            records.push(r?);
        }
        Ok((Self { path: path.to_path_buf(), file }, records))
    }

    pub fn append(&mut self, rec: &JournalRecord) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        w.serialize(rec)?;
        let line = w.into_inner().map_err(|e| Error::Csv(e.into_error().into()))?;
        self.file.write_all(&line).map_err(|e| Error::io(&self.path, e))?;
        self.file.flush().map_err(|e| Error::io(&self.path, e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridOptions {
    pub repeats: usize,
    /// Base training settings; each run derives its own seed from `seed`.
    pub train: TrainConfig,
    /// Restricts the search to these grid positions.
    pub indices: Option<Vec<usize>>,
    pub journal: Option<PathBuf>,
}

/// Best result over the repeats of one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub config_index: usize,
    pub key: String,
    pub spec: NetworkSpec,
    pub num_params: usize,
    pub train_rmse: f64,
    pub valid_rmse: f64,
    pub stopped_epoch: usize,
    pub best_repeat: usize,
    pub repeats_ok: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridOutcome {
    pub family: Family,
    pub rows: Vec<GridRow>,
    pub best: GridRow,
    /// Grid positions skipped because their shapes are empty.
    pub infeasible: Vec<usize>,
    pub failed_runs: usize,
}

fn run_one(spec: &NetworkSpec, data: &NnData, cfg: &TrainConfig) -> Result<(f64, f64, usize, usize)> {
    let (tr, va) = data.train_valid(spec.window)?;
    let out = train(spec, &tr, &va, cfg)?;
    let scale = data.target_scale;
    let train_rmse = mse(spec, &out.params, &tr)?.sqrt() * scale;
    let valid_rmse = out.best_valid_loss.sqrt() * scale;
    Ok((train_rmse, valid_rmse, out.stopped_epoch, out.best_epoch))
}

/// Trains every feasible configuration `repeats` times and keeps, per
/// configuration, the repeat with the lowest validation RMSE on raw price
/// increments. The winner has the lowest validation RMSE; ties go to fewer
/// parameters, then to the earlier grid position.
pub fn grid_search_nn(family: Family, data: &NnData, opts: &GridOptions) -> Result<GridOutcome> {
    if opts.repeats == 0 {
        return Err(Error::InvalidArgument("repeats must be at least 1".into()));
    }
    let specs = grid(family);
    let indices: Vec<usize> = match &opts.indices {
        Some(ix) => {
            if let Some(bad) = ix.iter().find(|&&i| i >= specs.len()) {
                return Err(Error::InvalidArgument(format!(
                    "grid index {bad} out of range for {} configurations",
                    specs.len()
                )));
            }
            ix.clone()
        }
        None => (0..specs.len()).collect(),
    };
    let (feasible, infeasible): (Vec<usize>, Vec<usize>) =
        indices.into_iter().partition(|&i| specs[i].validate().is_ok());
    for &i in &infeasible {
        log::info!("skipping infeasible configuration {}", specs[i].key());
    }

    let (journal, done) = match &opts.journal {
        Some(p) => {
            let (j, recs) = Journal::open(p)?;
            (Some(Mutex::new(j)), recs)
        }
        None => (None, Vec::new()),
    };
    let mut results: BTreeMap<(usize, usize), JournalRecord> = BTreeMap::new();
    for r in done {
        match specs.get(r.config_index) {
            Some(s) if s.key() == r.key => {}
            _ => {
                return Err(Error::Config(format!(
                    "journal entry for configuration {} (`{}`) does not belong to the family {family} grid",
                    r.config_index, r.key
                )))
            }
        }
        results.insert((r.config_index, r.repeat), r);
    }

    let pending: Vec<(usize, usize)> = feasible
        .iter()
        .flat_map(|&i| (0..opts.repeats).map(move |r| (i, r)))
        .filter(|k| !results.contains_key(k))
        .collect();
    log::info!(
        "family {family}: {} runs pending, {} already journaled",
        pending.len(),
        results.len()
    );
    let fresh: Vec<Result<JournalRecord>> = pending
        .par_iter()
        .map(|&(i, r)| {
            let spec = &specs[i];
            let seed = run_seed(opts.train.seed, i, r);
            let cfg = TrainConfig { seed, ..opts.train };
            let rec = match run_one(spec, data, &cfg) {
                Ok((tr, va, stop, best)) => JournalRecord {
                    config_index: i,
                    repeat: r,
                    seed,
                    key: spec.key(),
                    train_rmse: Some(tr),
                    valid_rmse: Some(va),
                    stopped_epoch: Some(stop),
                    best_epoch: Some(best),
                    error: None,
                },
                Err(e) => {
                    log::warn!("{} repeat {r} failed: {e}", spec.key());
                    JournalRecord {
                        config_index: i,
                        repeat: r,
                        seed,
                        key: spec.key(),
                        train_rmse: None,
                        valid_rmse: None,
                        stopped_epoch: None,
                        best_epoch: None,
                        error: Some(e.to_string()),
                    }
                }
            };
            if let Some(j) = &journal {
                j.lock().expect("journal lock").append(&rec)?;
            }
            Ok(rec)
        })
        .collect();
    for rec in fresh {
        let rec = rec?;
        results.insert((rec.config_index, rec.repeat), rec);
    }

    let mut rows = Vec::new();
    let mut failed_runs = 0;
    for &i in &feasible {
        let mut best: Option<(f64, f64, usize, usize)> = None;
        let mut ok = 0;
        for r in 0..opts.repeats {
            let rec = &results[&(i, r)];
            match (rec.train_rmse, rec.valid_rmse, rec.stopped_epoch) {
                (Some(tr), Some(va), Some(stop)) if va.is_finite() => {
                    ok += 1;
                    if best.is_none_or(|b| va < b.1) {
                        best = Some((tr, va, stop, r));
                    }
                }
                _ => failed_runs += 1,
            }
        }
        if let Some((tr, va, stop, r)) = best {
            rows.push(GridRow {
                config_index: i,
                key: specs[i].key(),
                spec: specs[i],
                num_params: specs[i].num_params(),
                train_rmse: tr,
                valid_rmse: va,
                stopped_epoch: stop,
                best_repeat: r,
                repeats_ok: ok,
            });
        }
    }
    let best = rows
        .iter()
        .min_by(|a, b| {
            a.valid_rmse
                .total_cmp(&b.valid_rmse)
                .then(a.num_params.cmp(&b.num_params))
                .then(a.config_index.cmp(&b.config_index))
        })
        .cloned()
        .ok_or_else(|| Error::Optimization(format!("every family {family} configuration failed")))?;
    Ok(GridOutcome { family, rows, best, infeasible, failed_runs })
}

/// Flat row for `grid_<family>.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCsvRow {
    pub config_index: usize,
    pub key: String,
    pub layers: usize,
    pub units: usize,
    pub dropout: f64,
    pub learning_rate: f64,
    pub filters: Option<usize>,
    pub kernel: Option<usize>,
    pub pad1: Option<&'static str>,
    pub pad2: Option<&'static str>,
    pub window: usize,
    pub num_params: usize,
    pub train_rmse: f64,
    pub valid_rmse: f64,
    pub stopped_epoch: usize,
}

impl From<&GridRow> for GridCsvRow {
    fn from(r: &GridRow) -> Self {
        let c = r.spec.conv;
        Self {
            config_index: r.config_index,
            key: r.key.clone(),
            layers: r.spec.layers,
            units: r.spec.units,
            dropout: r.spec.dropout,
            learning_rate: r.spec.learning_rate,
            filters: c.map(|c| c.filters),
            kernel: c.map(|c| c.kernel),
            pad1: c.map(|c| c.pad1.as_str()),
            pad2: c.map(|c| c.pad2.as_str()),
            window: r.spec.window,
            num_params: r.num_params,
            train_rmse: r.train_rmse,
            valid_rmse: r.valid_rmse,
            stopped_epoch: r.stopped_epoch,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NnPoint {
    pub date: NaiveDate,
    pub previous: f64,
    pub observed: f64,
    pub predicted_delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NnForecast {
    pub params: NetworkParams,
    pub points: Vec<NnPoint>,
}

/// Retrains on training plus validation windows for exactly
/// `stopped_epoch` epochs, then forecasts every test week one step ahead
/// from observed history.
pub fn refit_and_forecast(
    spec: &NetworkSpec,
    stopped_epoch: usize,
    data: &NnData,
    cfg: &TrainConfig,
) -> Result<NnForecast> {
    if stopped_epoch == 0 {
        return Err(Error::InvalidArgument("refit needs at least one epoch".into()));
    }
    let parts = data.partition(spec.window)?;
    if parts.test.is_empty() {
        return Err(Error::EmptyPartition("test"));
    }
    let fit_windows = parts.train.concat(&parts.valid);
    let params = train_epochs(spec, &data.dataset(&fit_windows)?, stopped_epoch, cfg)?;
    let points = forecast_windows(spec, &params, data, &parts.test)?;
    Ok(NnForecast { params, points })
}

/// Teacher-forced one-step forecasts for the given windows.
pub fn forecast_windows(
    spec: &NetworkSpec,
    params: &NetworkParams,
    data: &NnData,
    windows: &crate::weekly::SupervisedWindows,
) -> Result<Vec<NnPoint>> {
    let pred = predict_dataset(spec, params, &data.dataset(windows)?)?;
    Ok(windows
        .target_index
        .iter()
        .zip(pred)
        .map(|(&t, d)| NnPoint {
            date: data.weeks[t],
            previous: data.prices[t - 1],
            observed: data.prices[t],
            predicted_delta: d * data.target_scale,
        })
        .collect())
}
