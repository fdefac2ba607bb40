//! Seeded synthetic series with known structure, used as test oracles and
//! for end-to-end smoke runs.

use chrono::{Duration, NaiveDate};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::arima::{is_explosive, ArimaSpec};
use crate::error::{Error, Result};
use crate::ingest::OrderRecord;

/// Price level the simulated log-price paths start from.
pub const SIM_BASE_PRICE: f64 = 2.0;

const BURN_IN: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct ArimaSimulation {
    pub spec: ArimaSpec,
    pub phi: Vec<f64>,
    pub theta: Vec<f64>,
    /// Innovation standard deviation.
    pub sigma: f64,
    /// Number of prices returned.
    pub n: usize,
    pub seed: u64,
}

/// Gaussian ARMA(p, q) drawn on log increments (or on log levels when
/// `d = 0`), integrated and exponentiated onto a price path starting at
/// [`SIM_BASE_PRICE`].
pub fn simulate_arima(sim: &ArimaSimulation) -> Result<Vec<f64>> {
    if sim.phi.len() != sim.spec.p || sim.theta.len() != sim.spec.q {
        return Err(Error::InvalidArgument(format!(
            "{} needs {} AR and {} MA coefficients",
            sim.spec, sim.spec.p, sim.spec.q
        )));
    }
    if sim.spec.d > 1 || !(sim.sigma >= 0.0) {
        return Err(Error::InvalidArgument("simulation needs d <= 1 and sigma >= 0".into()));
    }
    if is_explosive(&sim.phi) {
        return Err(Error::Explosive(format!("AR coefficients {:?}", sim.phi)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(sim.seed);
    let len = sim.n + BURN_IN;
    let e: Vec<f64> = (0..len)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            sim.sigma * z
        })
        .collect();
    let mut x = vec![0.0; len];
    for t in 0..len {
        let ar: f64 = sim
            .phi
            .iter()
            .enumerate()
            .filter(|(i, _)| t > *i)
            .map(|(i, c)| c * x[t - 1 - i])
            .sum();
        let ma: f64 = sim
            .theta
            .iter()
            .enumerate()
            .filter(|(j, _)| t > *j)
            .map(|(j, c)| c * e[t - 1 - j])
            .sum();
        x[t] = ar + ma + e[t];
    }
    let x = &x[BURN_IN..];
    let base = SIM_BASE_PRICE.ln();
    let logp: Vec<f64> = if sim.spec.d == 1 {
        std::iter::once(base)
            .chain(x[1..].iter().scan(base, |level, w| {
                *level += w;
                Some(*level)
            }))
            .collect()
    } else {
        x.iter().map(|v| base + v).collect()
    };
    Ok(logp.into_iter().map(f64::exp).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrendSeasonSimulation {
    pub start: NaiveDate,
    /// Slope in price units per day before the changepoint.
    pub k: f64,
    /// Level at the first date.
    pub m: f64,
    /// Index of the week at which the slope changes.
    pub changepoint: usize,
    /// Slope change (per day) from the changepoint on.
    pub delta: f64,
    /// Amplitude of the yearly cosine.
    pub amplitude: f64,
    pub noise_sigma: f64,
    pub n: usize,
    pub seed: u64,
}

/// Weekly `(date, price)` samples of a continuous piecewise-linear trend
/// plus a single yearly harmonic plus Gaussian noise. Time runs in days from
/// `start`.
pub fn simulate_trend_season(sim: &TrendSeasonSimulation) -> Result<Vec<(NaiveDate, f64)>> {
    if sim.n < 10 {
        return Err(Error::InvalidArgument("trend/season simulation needs n >= 10".into()));
    }
    let noise = Normal::new(0.0, sim.noise_sigma.max(0.0))
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(sim.seed);
    let change_day = 7.0 * sim.changepoint as f64;
    Ok((0..sim.n)
        .map(|i| {
            let t = 7.0 * i as f64;
            let trend = sim.m + sim.k * t + sim.delta * (t - change_day).max(0.0);
            let season =
                sim.amplitude * (2.0 * std::f64::consts::PI * t / crate::additive::YEAR_DAYS).cos();
            let eps = if sim.noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            (sim.start + Duration::weeks(i as i64), trend + season + eps)
        })
        .collect())
}

/// Synthetic order lines for one article whose weekly mean price follows
/// `weekly_prices`, for end-to-end pipeline runs.
pub fn synthetic_orders(
    article: &str,
    start_monday: NaiveDate,
    weekly_prices: &[f64],
    seed: u64,
) -> Vec<OrderRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = Normal::new(0.0, 0.01).expect("valid normal");
    let mut out = Vec::new();
    let mut order_no = 0u64;
    for (w, &price) in weekly_prices.iter().enumerate() {
        let lines = 2 + (rand::Rng::gen_range(&mut rng, 0..5usize));
        for l in 0..lines {
            order_no += 1;
            let qty = rand::Rng::gen_range(&mut rng, 1..30u32) as f64;
            out.push(OrderRecord {
                date: start_monday + Duration::days(7 * w as i64 + (l % 5) as i64),
                order_number: format!("{order_no}"),
                unit_price: (price * (1.0 + jitter.sample(&mut rng))).max(0.01),
                article_code: article.to_string(),
                quantity: qty,
                customer_code: format!("C{}", rand::Rng::gen_range(&mut rng, 0..12u32)),
                on_offer: rand::Rng::gen_bool(&mut rng, 0.1),
                offer_type: None,
                unit_cost: price * 0.8,
            });
        }
    }
    out
}
