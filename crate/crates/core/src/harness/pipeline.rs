//! End-to-end run: ingest, weekly preparation, per-family tuning and test
//! evaluation on one shared set of weeks, then report and artifact files.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::config::{AdditiveSection, ArimaSection, PipelineConfig};
use super::metrics::{compute_metrics, ForecastSeries, MetricsReport};
use crate::additive::{grid_search_additive, walk_forward, AdditiveConfig, AdditiveGridResult, EvalTarget};
use crate::arima::{candidate_grid, residual_diagnostics, rolling, select_arima, ArimaSelection};
use crate::error::{Error, Result};
use crate::ingest::{parse_orders, restrict, weighted_price_stats, zscore_filter};
use crate::io::{write_atomic, write_csv_atomic, write_json_atomic};
use crate::neural::container::{self, ModelBundle};
use crate::neural::grid::{run_seed, GridCsvRow, NnPoint};
use crate::neural::{grid_search_nn, refit_and_forecast, Family, GridOptions, GridOutcome, NnData};
use crate::stats::{acf, adf_test, diff, log_series, pacf, AdfResult, LjungBoxResult};
use crate::weekly::{fill_gaps, resample_weekly, split, trim_leading_gap, SplitDataset, WeeklySeries};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const FAMILIES: [&str; 4] = ["arima", "additive", "nn_A", "nn_B"];

pub fn family_name(f: Family) -> &'static str {
    match f {
        Family::A => "nn_A",
        Family::B => "nn_B",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub records_read: usize,
    pub records_for_article: usize,
    pub records_kept: usize,
    pub weeks: usize,
    pub weeks_interpolated: usize,
    pub weeks_trimmed: usize,
    pub train_weeks: usize,
    pub valid_weeks: usize,
    pub test_weeks: usize,
    pub first_week: NaiveDate,
    pub last_week: NaiveDate,
}

/// Cleaned weekly data shared by every family.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub summary: DataSummary,
    /// Gap-filled, contiguous series.
    pub series: WeeklySeries,
    pub split: SplitDataset,
}

impl Prepared {
    pub fn test_start(&self) -> usize {
        self.split.train.len() + self.split.valid.len()
    }

    pub fn prices(&self) -> Vec<f64> {
        self.series.prices()
    }

    /// Observed test weeks with the preceding observed price.
    pub fn test_targets(&self) -> Vec<EvalTarget> {
        let p = self.prices();
        (self.test_start()..p.len())
            .map(|t| EvalTarget { date: self.series.rows[t].week_start, observed: p[t], previous: p[t - 1] })
            .collect()
    }

    fn skeleton(&self) -> ForecastSeries {
        let targets = self.test_targets();
        ForecastSeries {
            week_start: targets.iter().map(|t| t.date).collect(),
            previous: targets.iter().map(|t| t.previous).collect(),
            observed: targets.iter().map(|t| t.observed).collect(),
            predicted: targets.iter().map(|t| t.previous).collect(),
        }
    }
}

pub fn prepare(cfg: &PipelineConfig) -> Result<Prepared> {
    let stage = "ingest";
    let file = std::fs::File::open(&cfg.input).map_err(|e| Error::io(&cfg.input, e).in_stage(stage))?;
    let records = parse_orders(std::io::BufReader::new(file), cfg.delimiter as u8).map_err(|e| e.in_stage(stage))?;
    let article = restrict(&records, &cfg.article, cfg.cutoff);
    let stats = weighted_price_stats(&article).map_err(|e| e.in_stage(stage))?;
    let kept = zscore_filter(&article, &stats, cfg.z_threshold).map_err(|e| e.in_stage(stage))?;

    let stage = "weekly";
    let mut raw = resample_weekly(&kept).map_err(|e| e.in_stage(stage))?;
    raw.product = cfg.article.clone();
    let trimmed = trim_leading_gap(&raw, cfg.max_gap);
    let series = fill_gaps(&trimmed, cfg.max_gap).map_err(|e| e.in_stage(stage))?;
    let sp = split(&series, cfg.train_end, cfg.valid_end).map_err(|e| e.in_stage(stage))?;
    let summary = DataSummary {
        records_read: records.len(),
        records_for_article: article.len(),
        records_kept: kept.len(),
        weeks: series.len(),
        weeks_interpolated: series.rows.iter().filter(|r| r.interpolated).count(),
        weeks_trimmed: raw.len() - trimmed.len(),
        train_weeks: sp.train.len(),
        valid_weeks: sp.valid.len(),
        test_weeks: sp.test.len(),
        first_week: series.rows[0].week_start,
        last_week: series.rows[series.len() - 1].week_start,
    };
    Ok(Prepared { summary, series, split: sp })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub adf_log_price: AdfResult,
    pub adf_log_increment: AdfResult,
    pub acf_log_increment: Vec<f64>,
    pub pacf_log_increment: Vec<f64>,
}

pub const ANALYSIS_LAGS: usize = 20;

/// Unit-root tests and correlograms on the training and validation weeks.
pub fn analyze(prep: &Prepared) -> Result<Analysis> {
    let run = || -> Result<Analysis> {
        let logp = log_series(&prep.prices()[..prep.test_start()])?;
        let w = diff(&logp, 1)?;
        let lags = ANALYSIS_LAGS.min(w.len().saturating_sub(2)).max(1);
        Ok(Analysis {
            adf_log_price: adf_test(&logp)?,
            adf_log_increment: adf_test(&w)?,
            acf_log_increment: acf(&w, lags)?,
            pacf_log_increment: pacf(&w, lags)?,
        })
    };
    run().map_err(|e| e.in_stage("analyze"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FamilyRun<T> {
    pub tuned: T,
    pub forecast: ForecastSeries,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArimaTuned {
    pub selection: ArimaSelection,
    pub diagnostics: Option<LjungBoxResult>,
}

/// BIC selection on training plus validation weeks, then one-step test
/// forecasts.
pub fn run_arima(prep: &Prepared, section: &ArimaSection) -> Result<FamilyRun<ArimaTuned>> {
    let clock = Instant::now();
    let go = || -> Result<FamilyRun<ArimaTuned>> {
        let logp = log_series(&prep.prices())?;
        let start = prep.test_start();
        let selection = select_arima(&logp[..start], &candidate_grid(section.p_max, section.q_max, 1))?;
        let diagnostics = match residual_diagnostics(&selection.best) {
            Ok(d) => Some(d),
            Err(e) => {
                log::warn!("residual diagnostics unavailable: {e}");
                None
            }
        };
        let steps = rolling(section.rolling, &selection.best, &logp, start)?;
        let sk = prep.skeleton();
        let deltas: Vec<f64> = steps.iter().map(|s| s.predicted_delta).collect();
        let forecast = ForecastSeries::from_deltas(sk.week_start, sk.previous, sk.observed, &deltas);
        Ok(FamilyRun { tuned: ArimaTuned { selection, diagnostics }, forecast, seconds: 0.0 })
    };
    let mut out = go().map_err(|e| e.in_stage("arima"))?;
    out.seconds = clock.elapsed().as_secs_f64();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdditiveTuned {
    pub grid: AdditiveGridResult,
}

fn observed_rows(series: &WeeklySeries) -> Vec<(NaiveDate, f64)> {
    series.rows.iter().filter(|r| !r.interpolated).map(|r| (r.week_start, r.avg_price)).collect()
}

/// Grid search by walk-forward over validation weeks, then walk-forward
/// over the test weeks. Only observed (non-interpolated) weeks are fitted.
pub fn run_additive(prep: &Prepared, section: &AdditiveSection) -> Result<FamilyRun<AdditiveTuned>> {
    let clock = Instant::now();
    let go = || -> Result<FamilyRun<AdditiveTuned>> {
        let train = observed_rows(&prep.split.train);
        let valid = observed_rows(&prep.split.valid);
        let grid = grid_search_additive(&train, &valid, &section.taus, &section.sigmas, &section.base())?;
        let history = observed_rows(&prep.series);
        let points = walk_forward(&grid.best, &history, &prep.test_targets())?;
        Ok(FamilyRun {
            tuned: AdditiveTuned { grid },
            forecast: ForecastSeries::from_walk_forward(&points),
            seconds: 0.0,
        })
    };
    let mut out = go().map_err(|e| e.in_stage("additive"))?;
    out.seconds = clock.elapsed().as_secs_f64();
    Ok(out)
}

/// Fits the additive model with fixed priors on training plus validation
/// weeks.
pub fn fit_additive_final(prep: &Prepared, cfg: &AdditiveConfig) -> Result<crate::additive::AdditiveFit> {
    let rows = observed_rows(&prep.series);
    let cut = prep.split.valid.rows.last().map(|r| r.week_start).expect("non-empty split");
    let history: Vec<_> = rows.into_iter().filter(|(d, _)| *d <= cut).collect();
    crate::additive::fit_map(&history, cfg).map_err(|e| e.in_stage("additive"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct NnTuned {
    pub grid: GridOutcome,
    pub bundle: ModelBundle,
    pub refit_seed: u64,
}

/// Grid search on validation loss, refit on training plus validation for
/// the stopping epoch of the best run, then teacher-forced test forecasts.
pub fn run_nn(prep: &Prepared, cfg: &PipelineConfig, family: Family, journal: Option<&Path>) -> Result<FamilyRun<NnTuned>> {
    let clock = Instant::now();
    let stage = match family {
        Family::A => "nn_A",
        Family::B => "nn_B",
    };
    let go = || -> Result<FamilyRun<NnTuned>> {
        let data = NnData::from_split(&prep.split, cfg.scaling)?;
        let section = cfg.nn.family(family);
        let opts = GridOptions {
            repeats: section.repeats_for(family),
            train: cfg.nn.train_config(cfg.seed),
            indices: section.indices.clone(),
            journal: journal.map(Path::to_path_buf),
        };
        let grid = grid_search_nn(family, &data, &opts)?;
        let best = &grid.best;
        let refit_seed = run_seed(cfg.seed, best.config_index, best.best_repeat);
        let fc = refit_and_forecast(&best.spec, best.stopped_epoch, &data, &cfg.nn.train_config(refit_seed))?;
        let forecast = nn_series(&fc.points);
        let bundle = ModelBundle {
            spec: best.spec,
            params: fc.params,
            target_scale: data.target_scale,
            scaler: Some(data.scaler.clone()),
        };
        Ok(FamilyRun { tuned: NnTuned { grid, bundle, refit_seed }, forecast, seconds: 0.0 })
    };
    let mut out = go().map_err(|e| e.in_stage(stage))?;
    out.seconds = clock.elapsed().as_secs_f64();
    Ok(out)
}

fn nn_series(points: &[NnPoint]) -> ForecastSeries {
    ForecastSeries::from_deltas(
        points.iter().map(|p| p.date).collect(),
        points.iter().map(|p| p.previous).collect(),
        points.iter().map(|p| p.observed).collect(),
        &points.iter().map(|p| p.predicted_delta).collect::<Vec<_>>(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyReport {
    pub metrics: MetricsReport,
    pub beats_naive: bool,
    /// Chosen hyperparameters and fitted quantities, family specific.
    pub selected: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub schema_version: u32,
    pub article: String,
    pub seed: u64,
    pub train_end: NaiveDate,
    pub valid_end: NaiveDate,
    pub data: DataSummary,
    pub analysis: Option<Analysis>,
    pub test_weeks: Vec<NaiveDate>,
    pub naive: MetricsReport,
    pub families: BTreeMap<String, FamilyReport>,
    /// Wall-clock tuning time per family. Kept out of `report.json` so that
    /// reruns compare byte for byte; written to `timings.json`.
    #[serde(skip)]
    pub tuning_seconds: BTreeMap<String, f64>,
}

/// One row of `forecast_<family>.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastRow {
    pub week_start: NaiveDate,
    pub p: f64,
    pub p_hat: f64,
    pub delta: f64,
    pub delta_hat: f64,
}

pub fn forecast_rows(fs: &ForecastSeries) -> Vec<ForecastRow> {
    let d = fs.observed_delta();
    let dh = fs.predicted_delta();
    (0..fs.len())
        .map(|i| ForecastRow {
            week_start: fs.week_start[i],
            p: fs.observed[i],
            p_hat: fs.predicted[i],
            delta: d[i],
            delta_hat: dh[i],
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
struct ArimaGridRow {
    p: usize,
    d: usize,
    q: usize,
    bic: Option<f64>,
    loglik: Option<f64>,
    error: Option<String>,
}

pub fn write_arima_grid(path: &Path, selection: &ArimaSelection) -> Result<()> {
    let rows: Vec<ArimaGridRow> = selection
        .candidates
        .iter()
        .map(|c| ArimaGridRow {
            p: c.spec.p,
            d: c.spec.d,
            q: c.spec.q,
            bic: c.bic,
            loglik: c.loglik,
            error: c.error.clone(),
        })
        .collect();
    write_csv_atomic(path, &rows)
}

pub fn write_additive_grid(path: &Path, grid: &AdditiveGridResult) -> Result<()> {
    write_csv_atomic(path, &grid.cells)
}

pub fn write_nn_grid(path: &Path, grid: &GridOutcome) -> Result<()> {
    let rows: Vec<GridCsvRow> = grid.rows.iter().map(GridCsvRow::from).collect();
    write_csv_atomic(path, &rows)
}

pub fn write_forecast(path: &Path, fs: &ForecastSeries) -> Result<()> {
    write_csv_atomic(path, &forecast_rows(fs))
}

fn arima_selected(t: &ArimaTuned) -> serde_json::Value {
    let b = &t.selection.best;
    serde_json::json!({
        "order": [b.spec.p, b.spec.d, b.spec.q],
        "phi": b.phi,
        "theta": b.theta,
        "sigma2": b.sigma2,
        "loglik": b.loglik,
        "bic": b.bic,
        "nobs": b.nobs,
        "near_unit_root": b.near_unit_root,
        "ljung_box": t.diagnostics,
    })
}

fn nn_selected(t: &NnTuned) -> serde_json::Value {
    let b = &t.grid.best;
    serde_json::json!({
        "spec": b.spec,
        "key": b.key,
        "config_index": b.config_index,
        "num_params": b.num_params,
        "train_rmse": b.train_rmse,
        "valid_rmse": b.valid_rmse,
        "stopped_epoch": b.stopped_epoch,
        "configurations_trained": t.grid.rows.len(),
        "configurations_infeasible": t.grid.infeasible.len(),
        "failed_runs": t.grid.failed_runs,
        "refit_seed": t.refit_seed,
    })
}

/// Runs every enabled family and writes `report.json`, `timings.json`,
/// `weekly.csv`, `forecast_<family>.csv`, `grid_<family>.csv` and the
/// network weight files into the output directory.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<ComparisonReport> {
    let out = &cfg.output_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let prep = prepare(cfg)?;
    let mut weekly = Vec::new();
    prep.series.write_csv(&mut weekly)?;
    write_atomic(&out.join("weekly.csv"), &weekly)?;
    let analysis = match analyze(&prep) {
        Ok(a) => Some(a),
        Err(e) => {
            log::warn!("{e}");
            None
        }
    };

    let mut forecasts: BTreeMap<String, ForecastSeries> = BTreeMap::new();
    let mut selected: BTreeMap<String, serde_json::Value> = BTreeMap::new();
    let mut seconds: BTreeMap<String, f64> = BTreeMap::new();

    if cfg.arima.enabled {
        let r = run_arima(&prep, &cfg.arima)?;
        write_arima_grid(&out.join("grid_arima.csv"), &r.tuned.selection)?;
        selected.insert("arima".into(), arima_selected(&r.tuned));
        seconds.insert("arima".into(), r.seconds);
        forecasts.insert("arima".into(), r.forecast);
    }
    if cfg.additive.enabled {
        let r = run_additive(&prep, &cfg.additive)?;
        write_additive_grid(&out.join("grid_additive.csv"), &r.tuned.grid)?;
        selected.insert(
            "additive".into(),
            serde_json::json!({
                "tau": r.tuned.grid.best.tau,
                "sigma": r.tuned.grid.best.sigma_season,
                "valid_rmse": r.tuned.grid.best_vrmse,
                "config": r.tuned.grid.best,
            }),
        );
        seconds.insert("additive".into(), r.seconds);
        forecasts.insert("additive".into(), r.forecast);
    }
    for family in [Family::A, Family::B] {
        if !cfg.nn.family(family).enabled {
            continue;
        }
        let name = family_name(family);
        let journal = out.join(format!("journal_{name}.csv"));
        let r = run_nn(&prep, cfg, family, Some(&journal))?;
        write_nn_grid(&out.join(format!("grid_{name}.csv")), &r.tuned.grid)?;
        container::save(&out.join(format!("{name}.bin")), &r.tuned.bundle)?;
        selected.insert(name.into(), nn_selected(&r.tuned));
        seconds.insert(name.into(), r.seconds);
        forecasts.insert(name.into(), r.forecast);
    }

    let skeleton = prep.skeleton();
    for (name, fs) in &forecasts {
        if fs.week_start != skeleton.week_start || fs.observed != skeleton.observed {
            return Err(Error::Shape(format!("{name} forecasts cover different test weeks")).in_stage("report"));
        }
        write_forecast(&out.join(format!("forecast_{name}.csv")), fs)?;
    }
    let naive = compute_metrics(&skeleton.naive()).map_err(|e| e.in_stage("report"))?;
    let mut families = BTreeMap::new();
    for (name, fs) in &forecasts {
        let metrics = compute_metrics(fs).map_err(|e| e.in_stage("report"))?;
        families.insert(
            name.clone(),
            FamilyReport {
                beats_naive: metrics.rmse <= naive.rmse,
                metrics,
                selected: selected.remove(name).unwrap_or_default(),
            },
        );
    }
    let report = ComparisonReport {
        schema_version: REPORT_SCHEMA_VERSION,
        article: cfg.article.clone(),
        seed: cfg.seed,
        train_end: cfg.train_end,
        valid_end: cfg.valid_end,
        data: prep.summary.clone(),
        analysis,
        test_weeks: skeleton.week_start.clone(),
        naive,
        families,
        tuning_seconds: seconds,
    };
    write_json_atomic(&out.join("report.json"), &report)?;
    write_json_atomic(&out.join("timings.json"), &report.tuning_seconds)?;
    Ok(report)
}

/// One row of the fitted additive decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComponentRow {
    pub week_start: NaiveDate,
    pub observed: f64,
    pub trend: f64,
    pub seasonality: f64,
    pub fitted: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChangepointRow {
    pub date: NaiveDate,
    /// Slope change in price units per day.
    pub delta: f64,
}

pub fn additive_components(fit: &crate::additive::AdditiveFit, series: &WeeklySeries) -> Vec<ComponentRow> {
    use crate::additive::{days_since_epoch, seasonality_eval, trend_eval};
    series
        .rows
        .iter()
        .map(|r| {
            let t = days_since_epoch(r.week_start);
            let trend = trend_eval(&fit.params, t);
            let seasonality = seasonality_eval(&fit.params, t);
            ComponentRow { week_start: r.week_start, observed: r.avg_price, trend, seasonality, fitted: trend + seasonality }
        })
        .collect()
}

pub fn additive_changepoints(fit: &crate::additive::AdditiveFit) -> Vec<ChangepointRow> {
    let epoch = NaiveDate::from_ymd_opt(1970, 1, 1).expect("valid date");
    fit.params
        .changepoints
        .iter()
        .zip(&fit.params.delta)
        .map(|(&s, &delta)| ChangepointRow { date: epoch + chrono::Duration::days(s.round() as i64), delta })
        .collect()
}
