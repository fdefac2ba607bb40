use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use pricecast::additive::{walk_forward, AdditiveConfig};
use pricecast::harness::pipeline::{self, ComparisonReport, Prepared, FAMILIES};
use pricecast::harness::{compute_metrics, run_pipeline, PipelineConfig};
use pricecast::io::{write_atomic, write_csv_atomic};
use pricecast::neural::{container, Family};

#[derive(Debug, Parser)]
#[command(name = "pricecast", version, about = "Weekly wholesale price forecasting")]
struct Cli {
    /// Overrides the seed in the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel grids (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// TOML or JSON run configuration.
    #[arg(long, global = true, default_value = "pricecast.toml")]
    config: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Clean order lines and write the weekly series.
    Preprocess,
    /// Unit-root tests and correlograms of the log-price increments.
    Analyze,
    /// BIC selection over ARIMA(p, 1, q).
    FitArima {
        /// Largest AR and MA orders, as `pmax,qmax`.
        #[arg(long, value_parser = parse_grid)]
        grid: Option<(usize, usize)>,
    },
    /// One-step test forecasts from the selected ARIMA model.
    ForecastArima {
        #[arg(long, value_parser = parse_grid)]
        grid: Option<(usize, usize)>,
    },
    /// Fit the additive model with fixed prior scales.
    FitAdditive {
        #[arg(long)]
        tau: f64,
        #[arg(long)]
        sigma: f64,
    },
    /// Prior-scale grid search for the additive model.
    GridAdditive,
    /// Hyperparameter search for one network family.
    GridNn {
        #[arg(long)]
        family: Family,
        /// Trainings per configuration.
        #[arg(long)]
        repeats: Option<usize>,
    },
    /// Full pipeline: every enabled family on the shared test weeks.
    Evaluate,
    /// Summarize one or more report files.
    Compare {
        /// Report files; defaults to the configured output directory.
        reports: Vec<PathBuf>,
    },
}

fn parse_grid(s: &str) -> std::result::Result<(usize, usize), String> {
    let (p, q) = s.split_once(',').ok_or("expected pmax,qmax")?;
    let p = p.trim().parse().map_err(|e| format!("pmax: {e}"))?;
    let q = q.trim().parse().map_err(|e| format!("qmax: {e}"))?;
    Ok((p, q))
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::load(&cli.config).with_context(|| format!("loading {}", cli.config.display()))?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    std::fs::create_dir_all(&cfg.output_dir).with_context(|| format!("creating {}", cfg.output_dir.display()))?;
    Ok(cfg)
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(j) = cli.jobs {
        if j == 0 {
            bail!("--jobs must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(j).build_global()?;
    }
    if let Command::Compare { reports } = &cli.command {
        let paths = if reports.is_empty() {
            vec![load_config(&cli)?.output_dir.join("report.json")]
        } else {
            reports.clone()
        };
        return compare(&paths);
    }

    let mut cfg = load_config(&cli)?;
    let out = cfg.output_dir.clone();
    match &cli.command {
        Command::Preprocess => {
            let prep = pipeline::prepare(&cfg)?;
            let mut buf = Vec::new();
            prep.series.write_csv(&mut buf)?;
            write_atomic(&out.join("weekly.csv"), &buf)?;
            print_json(&prep.summary)?;
        }
        Command::Analyze => {
            let prep = pipeline::prepare(&cfg)?;
            let a = pipeline::analyze(&prep)?;
            let mut text = String::from("lag,acf,pacf\n");
            for (k, (r, p)) in a.acf_log_increment.iter().zip(&a.pacf_log_increment).enumerate() {
                text.push_str(&format!("{},{r},{p}\n", k + 1));
            }
            write_atomic(&out.join("correlogram.csv"), text.as_bytes())?;
            print!("{text}");
            print_json(&serde_json::json!({
                "adf_log_price": a.adf_log_price,
                "adf_log_increment": a.adf_log_increment,
            }))?;
        }
        Command::FitArima { grid } | Command::ForecastArima { grid } => {
            if let Some((p, q)) = grid {
                cfg.arima.p_max = *p;
                cfg.arima.q_max = *q;
            }
            let prep = pipeline::prepare(&cfg)?;
            let r = pipeline::run_arima(&prep, &cfg.arima)?;
            pipeline::write_arima_grid(&out.join("grid_arima.csv"), &r.tuned.selection)?;
            if matches!(cli.command, Command::FitArima { .. }) {
                print_json(&r.tuned)?;
            } else {
                pipeline::write_forecast(&out.join("forecast_arima.csv"), &r.forecast)?;
                print_forecast(&r.forecast)?;
            }
        }
        Command::FitAdditive { tau, sigma } => fit_additive(&cfg, *tau, *sigma)?,
        Command::GridAdditive => {
            let prep = pipeline::prepare(&cfg)?;
            let r = pipeline::run_additive(&prep, &cfg.additive)?;
            pipeline::write_additive_grid(&out.join("grid_additive.csv"), &r.tuned.grid)?;
            pipeline::write_forecast(&out.join("forecast_additive.csv"), &r.forecast)?;
            print_json(&serde_json::json!({
                "best": r.tuned.grid.best,
                "best_valid_rmse": r.tuned.grid.best_vrmse,
                "test": compute_metrics(&r.forecast)?,
                "seconds": r.seconds,
            }))?;
        }
        Command::GridNn { family, repeats } => {
            let section = match family {
                Family::A => &mut cfg.nn.a,
                Family::B => &mut cfg.nn.b,
            };
            if repeats.is_some() {
                section.repeats = *repeats;
            }
            cfg.validate()?;
            let name = pipeline::family_name(*family);
            let prep = pipeline::prepare(&cfg)?;
            let journal = out.join(format!("journal_{name}.csv"));
            let r = pipeline::run_nn(&prep, &cfg, *family, Some(&journal))?;
            pipeline::write_nn_grid(&out.join(format!("grid_{name}.csv")), &r.tuned.grid)?;
            pipeline::write_forecast(&out.join(format!("forecast_{name}.csv")), &r.forecast)?;
            container::save(&out.join(format!("{name}.bin")), &r.tuned.bundle)?;
            let best = &r.tuned.grid.best;
            print_json(&serde_json::json!({
                "family": name,
                "selected": best.spec,
                "key": best.key,
                "valid_rmse": best.valid_rmse,
                "stopped_epoch": best.stopped_epoch,
                "configurations_trained": r.tuned.grid.rows.len(),
                "configurations_infeasible": r.tuned.grid.infeasible.len(),
                "test": compute_metrics(&r.forecast)?,
                "seconds": r.seconds,
            }))?;
        }
        Command::Evaluate => {
            let report = run_pipeline(&cfg)?;
            print_table(&[(out.join("report.json"), report)]);
        }
        Command::Compare { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn fit_additive(cfg: &PipelineConfig, tau: f64, sigma: f64) -> Result<()> {
    let out = &cfg.output_dir;
    let prep: Prepared = pipeline::prepare(cfg)?;
    let model = AdditiveConfig { tau, sigma_season: sigma, ..cfg.additive.base() };
    let fit = pipeline::fit_additive_final(&prep, &model)?;
    write_csv_atomic(&out.join("additive_components.csv"), &pipeline::additive_components(&fit, &prep.series))?;
    write_csv_atomic(&out.join("additive_changepoints.csv"), &pipeline::additive_changepoints(&fit))?;
    let history: Vec<_> = prep
        .series
        .rows
        .iter()
        .filter(|r| !r.interpolated)
        .map(|r| (r.week_start, r.avg_price))
        .collect();
    let points = walk_forward(&model, &history, &prep.test_targets())?;
    let fs = pricecast::harness::ForecastSeries::from_walk_forward(&points);
    pipeline::write_forecast(&out.join("forecast_additive.csv"), &fs)?;
    print_json(&serde_json::json!({
        "tau": tau,
        "sigma": sigma,
        "k": fit.params.k,
        "m": fit.params.m,
        "train_rmse": fit.train_rmse,
        "iterations": fit.iterations,
        "test": compute_metrics(&fs)?,
    }))
}

fn print_forecast(fs: &pricecast::harness::ForecastSeries) -> Result<()> {
    let mut out = std::io::stdout().lock();
    writeln!(out, "week_start,p,p_hat,delta,delta_hat")?;
    for r in pipeline::forecast_rows(fs) {
        writeln!(out, "{},{},{},{},{}", r.week_start, r.p, r.p_hat, r.delta, r.delta_hat)?;
    }
    Ok(())
}

fn compare(paths: &[PathBuf]) -> Result<()> {
    let mut reports = Vec::new();
    for p in paths {
        reports.push((p.clone(), read_report(p)?));
    }
    print_table(&reports);
    Ok(())
}

fn read_report(path: &Path) -> Result<ComparisonReport> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn print_table(reports: &[(PathBuf, ComparisonReport)]) {
    for (path, r) in reports {
        println!("{} (article {}, {} test weeks)", path.display(), r.article, r.test_weeks.len());
        println!("  {:<10} {:>10} {:>10} {:>10}  beats naive", "family", "rmse", "mae", "mape");
        let line = |name: &str, m: &pricecast::harness::MetricsReport, flag: &str| {
            println!("  {name:<10} {:>10.4} {:>10.4} {:>10.4}  {flag}", m.rmse, m.mae, m.mape);
        };
        line("naive", &r.naive, "-");
        for name in FAMILIES {
            if let Some(f) = r.families.get(name) {
                line(name, &f.metrics, if f.beats_naive { "yes" } else { "no" });
            }
        }
    }
}
