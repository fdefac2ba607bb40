//! Weekly resampling, gap handling, chronological splits, feature scaling
//! and supervised window construction for the neural models.

use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};

use chrono::{Datelike, Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{weighted_moments, OrderRecord};

/// Weeks per year used by the seasonal time embedding.
pub const WEEKS_PER_YEAR: f64 = 52.1429;

/// Longest gap (in weeks) that is interpolated rather than trimmed.
pub const DEFAULT_MAX_GAP: usize = 4;

/// Number of numeric network input columns per week.
pub const FEATURES: usize = 9;

pub const FEATURE_NAMES: [&str; FEATURES] = [
    "quantity",
    "customers",
    "orders",
    "on_sale",
    "cost",
    "week_cos",
    "week_sin",
    "p_std",
    "avg_price",
];

/// Column of `avg_price` within [`WeeklyRow::features`].
pub const PRICE_FEATURE: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeeklyRow {
    /// Monday opening the ISO week.
    pub week_start: NaiveDate,
    pub quantity: f64,
    pub customers: u32,
    pub orders: u32,
    pub on_sale: u32,
    /// Quantity-weighted mean unit cost.
    pub cost: f64,
    pub week_cos: f64,
    pub week_sin: f64,
    /// Quantity-weighted price standard deviation within the week.
    pub p_std: f64,
    /// Quantity-weighted mean unit price.
    pub avg_price: f64,
    pub interpolated: bool,
}

impl WeeklyRow {
    /// The nine numeric network inputs, in [`FEATURE_NAMES`] order.
    pub fn features(&self) -> [f64; FEATURES] {
        [
            self.quantity,
            f64::from(self.customers),
            f64::from(self.orders),
            f64::from(self.on_sale),
            self.cost,
            self.week_cos,
            self.week_sin,
            self.p_std,
            self.avg_price,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeeklySeries {
    pub product: String,
    pub rows: Vec<WeeklyRow>,
}

impl WeeklySeries {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn prices(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.avg_price).collect()
    }

    pub fn weeks(&self) -> Vec<NaiveDate> {
        self.rows.iter().map(|r| r.week_start).collect()
    }

    /// Missing weeks between consecutive rows, paired with the row index
    /// that follows each gap.
    pub fn gaps(&self) -> Vec<(usize, usize)> {
        self.rows
            .windows(2)
            .enumerate()
            .filter_map(|(i, w)| {
                let missing = weeks_between(w[0].week_start, w[1].week_start).saturating_sub(1);
                (missing > 0).then_some((i + 1, missing))
            })
            .collect()
    }

    fn with_rows(&self, rows: Vec<WeeklyRow>) -> Self {
        WeeklySeries {
            product: self.product.clone(),
            rows,
        }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush().map_err(|e| Error::io("<weekly csv>", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R, product: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let rows = r.deserialize().collect::<Result<Vec<WeeklyRow>, _>>()?;
        Ok(WeeklySeries {
            product: product.to_string(),
            rows,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub train: WeeklySeries,
    pub valid: WeeklySeries,
    pub test: WeeklySeries,
}

fn weeks_between(a: NaiveDate, b: NaiveDate) -> usize {
    ((b - a).num_days() / 7).max(0) as usize
}

pub fn monday_of(date: NaiveDate) -> NaiveDate {
    date - Duration::days(i64::from(date.weekday().num_days_from_monday()))
}

/// Zero-based ISO week number, with week 53 folded onto 52.
pub fn week_of_year(date: NaiveDate) -> u32 {
    (date.iso_week().week() - 1).min(52)
}

pub fn time_embedding(week_of_year: u32) -> Result<(f64, f64)> {
    if week_of_year > 52 {
        return Err(Error::InvalidArgument(format!(
            "week of year must be in 0..=52, got {week_of_year}"
        )));
    }
    let angle = 2.0 * std::f64::consts::PI * f64::from(week_of_year) / WEEKS_PER_YEAR;
    Ok((angle.cos(), angle.sin()))
}

fn embedding_for(week_start: NaiveDate) -> (f64, f64) {
    time_embedding(week_of_year(week_start)).expect("week_of_year is always in range")
}

/// Aggregates orders of a single article into ISO weeks. Weeks without
/// orders are left out.
pub fn resample_weekly(records: &[OrderRecord]) -> Result<WeeklySeries> {
    let first = records
        .first()
        .ok_or_else(|| Error::InsufficientData("no records to resample".into()))?;
    if let Some(other) = records.iter().find(|r| r.article_code != first.article_code) {
        return Err(Error::InvalidArgument(format!(
            "records mix articles `{}` and `{}`",
            first.article_code, other.article_code
        )));
    }

    let mut buckets: BTreeMap<NaiveDate, Vec<&OrderRecord>> = BTreeMap::new();
    for r in records {
        buckets.entry(monday_of(r.date)).or_default().push(r);
    }

    let rows = buckets
        .into_iter()
        .map(|(week_start, recs)| {
            let customers: HashSet<&str> = recs.iter().map(|r| r.customer_code.as_str()).collect();
            let (week_cos, week_sin) = embedding_for(week_start);
            let price = weighted_or_plain(recs.iter().map(|r| (r.unit_price, r.quantity)));
            let cost = weighted_or_plain(recs.iter().map(|r| (r.unit_cost, r.quantity)));
            WeeklyRow {
                week_start,
                quantity: recs.iter().map(|r| r.quantity).sum(),
                customers: customers.len() as u32,
                orders: recs.len() as u32,
                on_sale: recs.iter().filter(|r| r.on_offer).count() as u32,
                cost: cost.0,
                week_cos,
                week_sin,
                p_std: price.1,
                avg_price: price.0,
                interpolated: false,
            }
        })
        .collect();

    Ok(WeeklySeries {
        product: first.article_code.clone(),
        rows,
    })
}

/// Quantity-weighted (mean, std); falls back to equal weights when every
/// quantity in the week is zero.
fn weighted_or_plain<I>(pairs: I) -> (f64, f64)
where
    I: Iterator<Item = (f64, f64)> + Clone,
{
    weighted_moments(pairs.clone())
        .or_else(|| weighted_moments(pairs.map(|(x, _)| (x, 1.0))))
        .map(|s| (s.mean, s.std))
        .expect("week buckets are never empty")
}

/// Cuts the series so it starts right after the last gap longer than
/// `max_gap` weeks.
pub fn trim_leading_gap(series: &WeeklySeries, max_gap: usize) -> WeeklySeries {
    let start = series
        .gaps()
        .into_iter()
        .filter(|&(_, len)| len > max_gap)
        .map(|(idx, _)| idx)
        .next_back()
        .unwrap_or(0);
    series.with_rows(series.rows[start..].to_vec())
}

/// Inserts linearly interpolated rows for every missing week.
pub fn fill_gaps(series: &WeeklySeries, max_gap: usize) -> Result<WeeklySeries> {
    let mut rows: Vec<WeeklyRow> = Vec::with_capacity(series.len());
    for pair in series.rows.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        rows.push(a.clone());
        let missing = weeks_between(a.week_start, b.week_start).saturating_sub(1);
        if missing > max_gap {
            return Err(Error::GapTooLong {
                len: missing,
                before: b.week_start,
                max: max_gap,
            });
        }
        for j in 1..=missing {
            let frac = j as f64 / (missing + 1) as f64;
            let week_start = a.week_start + Duration::weeks(j as i64);
            let (week_cos, week_sin) = embedding_for(week_start);
            rows.push(WeeklyRow {
                week_start,
                quantity: 0.0,
                customers: 0,
                orders: 0,
                on_sale: 0,
                cost: a.cost + frac * (b.cost - a.cost),
                week_cos,
                week_sin,
                p_std: 0.0,
                avg_price: a.avg_price + frac * (b.avg_price - a.avg_price),
                interpolated: true,
            });
        }
    }
    if let Some(last) = series.rows.last() {
        rows.push(last.clone());
    }
    Ok(series.with_rows(rows))
}

/// [`fill_gaps`], additionally requiring the series to reach the week of
/// `through`. A missing tail cannot be interpolated.
pub fn fill_gaps_through(
    series: &WeeklySeries,
    max_gap: usize,
    through: NaiveDate,
) -> Result<WeeklySeries> {
    let filled = fill_gaps(series, max_gap)?;
    match filled.rows.last() {
        Some(last) if last.week_start >= monday_of(through) => Ok(filled),
        Some(last) => Err(Error::TrailingGap(last.week_start)),
        None => Err(Error::InsufficientData("empty series".into())),
    }
}

/// Chronological split: train `<= train_end`, valid `(train_end, valid_end]`,
/// test `> valid_end`.
pub fn split(series: &WeeklySeries, train_end: NaiveDate, valid_end: NaiveDate) -> Result<SplitDataset> {
    if train_end >= valid_end {
        return Err(Error::InvalidArgument(format!(
            "train_end {train_end} must precede valid_end {valid_end}"
        )));
    }
    let last = series
        .rows
        .last()
        .ok_or_else(|| Error::InsufficientData("empty series".into()))?
        .week_start;
    if valid_end > last {
        return Err(Error::InvalidArgument(format!(
            "valid_end {valid_end} lies beyond the last week {last}"
        )));
    }
    let part = |keep: &dyn Fn(NaiveDate) -> bool, name: &'static str| {
        let rows: Vec<_> = series.rows.iter().filter(|r| keep(r.week_start)).cloned().collect();
        if rows.is_empty() {
            Err(Error::EmptyPartition(name))
        } else {
            Ok(series.with_rows(rows))
        }
    };
    Ok(SplitDataset {
        train: part(&|d| d <= train_end, "train")?,
        valid: part(&|d| d > train_end && d <= valid_end, "valid")?,
        test: part(&|d| d > valid_end, "test")?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingMethod {
    #[default]
    MinMax,
    ZScore,
}

/// Per-column affine feature scaling fitted on training rows.
///
/// For min-max scaling `low`/`high` are the column minimum and maximum; for
/// z-scores they hold mean and mean + std, so `(x - low) / (high - low)` is
/// the transform in both cases. Zero-width columns map to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub method: ScalingMethod,
    pub low: [f64; FEATURES],
    pub high: [f64; FEATURES],
}

impl Scaler {
    pub fn fit(train: &WeeklySeries, method: ScalingMethod) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::InsufficientData("cannot fit a scaler on no rows".into()));
        }
        let feats: Vec<_> = train.rows.iter().map(WeeklyRow::features).collect();
        let mut low = [0.0; FEATURES];
        let mut high = [0.0; FEATURES];
        for c in 0..FEATURES {
            let col = feats.iter().map(|f| f[c]);
            match method {
                ScalingMethod::MinMax => {
                    low[c] = col.clone().fold(f64::INFINITY, f64::min);
                    high[c] = col.fold(f64::NEG_INFINITY, f64::max);
                }
                ScalingMethod::ZScore => {
                    let n = feats.len() as f64;
                    let mean = col.clone().sum::<f64>() / n;
                    let var = col.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
                    low[c] = mean;
                    high[c] = mean + var.sqrt();
                }
            }
        }
        Ok(Scaler { method, low, high })
    }

    pub fn transform_row(&self, features: &[f64; FEATURES]) -> [f64; FEATURES] {
        std::array::from_fn(|c| {
            let width = self.high[c] - self.low[c];
            if width > 0.0 {
                (features[c] - self.low[c]) / width
            } else {
                0.0
            }
        })
    }

    pub fn inverse_row(&self, scaled: &[f64; FEATURES]) -> [f64; FEATURES] {
        std::array::from_fn(|c| {
            let width = self.high[c] - self.low[c];
            if width > 0.0 {
                self.low[c] + scaled[c] * width
            } else {
                self.low[c]
            }
        })
    }

    pub fn apply(&self, series: &WeeklySeries) -> Vec<[f64; FEATURES]> {
        series.rows.iter().map(|r| self.transform_row(&r.features())).collect()
    }
}

pub fn fit_scaler(train: &WeeklySeries) -> Result<Scaler> {
    Scaler::fit(train, ScalingMethod::MinMax)
}

pub fn apply_scaler(scaler: &Scaler, series: &WeeklySeries) -> Vec<[f64; FEATURES]> {
    scaler.apply(series)
}

/// Sliding windows of `n` scaled weeks paired with the next-week price
/// increment.
#[derive(Debug, Clone, PartialEq)]
pub struct SupervisedWindows {
    /// Row-major `n x FEATURES` blocks.
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    /// Series index of the week each target refers to.
    pub target_index: Vec<usize>,
    pub n: usize,
}

impl SupervisedWindows {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Samples whose target week index satisfies `keep`.
    pub fn select(&self, keep: impl Fn(usize) -> bool) -> SupervisedWindows {
        let mut out = SupervisedWindows {
            inputs: Vec::new(),
            targets: Vec::new(),
            target_index: Vec::new(),
            n: self.n,
        };
        for i in 0..self.len() {
            if keep(self.target_index[i]) {
                out.inputs.push(self.inputs[i].clone());
                out.targets.push(self.targets[i]);
                out.target_index.push(self.target_index[i]);
            }
        }
        out
    }

    pub fn concat(&self, other: &SupervisedWindows) -> SupervisedWindows {
        let mut out = self.clone();
        out.inputs.extend(other.inputs.iter().cloned());
        out.targets.extend_from_slice(&other.targets);
        out.target_index.extend_from_slice(&other.target_index);
        out
    }
}

/// Builds windows ending at every `t` in `n-1..=T-2`, with target
/// `raw_prices[t+1] - raw_prices[t]` on the unscaled prices.
pub fn make_supervised(
    rows: &[[f64; FEATURES]],
    raw_prices: &[f64],
    n: usize,
) -> Result<SupervisedWindows> {
    if n == 0 {
        return Err(Error::InvalidArgument("window length must be at least 1".into()));
    }
    if rows.len() != raw_prices.len() {
        return Err(Error::Shape(format!(
            "{} feature rows but {} prices",
            rows.len(),
            raw_prices.len()
        )));
    }
    let total = rows.len();
    if total <= n {
        return Err(Error::InsufficientData(format!(
            "series of {total} weeks is too short for windows of {n}"
        )));
    }
    let mut out = SupervisedWindows {
        inputs: Vec::with_capacity(total - n),
        targets: Vec::with_capacity(total - n),
        target_index: Vec::with_capacity(total - n),
        n,
    };
    for t in (n - 1)..(total - 1) {
        out.inputs.push(rows[t + 1 - n..=t].iter().flatten().copied().collect());
        out.targets.push(raw_prices[t + 1] - raw_prices[t]);
        out.target_index.push(t + 1);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn date(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    fn order(d: &str, price: f64, qty: f64, customer: &str, offer: bool) -> OrderRecord {
        OrderRecord {
            date: date(d),
            order_number: "1".into(),
            unit_price: price,
            article_code: "A".into(),
            quantity: qty,
            customer_code: customer.into(),
            on_offer: offer,
            offer_type: None,
            unit_cost: 1.0,
        }
    }

    fn row(week_start: NaiveDate, price: f64) -> WeeklyRow {
        let (week_cos, week_sin) = embedding_for(week_start);
        WeeklyRow {
            week_start,
            quantity: 10.0,
            customers: 1,
            orders: 1,
            on_sale: 0,
            cost: price * 0.8,
            week_cos,
            week_sin,
            p_std: 0.0,
            avg_price: price,
            interpolated: false,
        }
    }

    fn series_at(weeks: &[i64], prices: &[f64]) -> WeeklySeries {
        let base = date("2018-01-01");
        WeeklySeries {
            product: "A".into(),
            rows: weeks
                .iter()
                .zip(prices)
                .map(|(&w, &p)| row(base + Duration::weeks(w), p))
                .collect(),
        }
    }

    #[test]
    fn resample_counts() {
        // 2019-01-07 is a Monday.
        let recs = vec![
            order("2019-01-07", 1.0, 1.0, "c1", false),
            order("2019-01-09", 1.0, 1.0, "c2", true),
            order("2019-01-13", 1.0, 1.0, "c1", false),
        ];
        let s = resample_weekly(&recs).unwrap();
        assert_eq!(s.len(), 1);
        let r = &s.rows[0];
        assert_eq!((r.orders, r.customers, r.on_sale), (3, 2, 1));
        assert_eq!(r.week_start, date("2019-01-07"));
        assert!(!r.interpolated);
    }

    #[test]
    fn resample_weighted_price() {
        let recs = vec![
            order("2019-01-07", 1.40, 10.0, "c1", false),
            order("2019-01-08", 1.60, 10.0, "c2", false),
        ];
        let r = &resample_weekly(&recs).unwrap().rows[0];
        assert!((r.avg_price - 1.50).abs() < 1e-12);
        assert!((r.p_std - 0.10).abs() < 1e-12);

        let single = resample_weekly(&recs[..1]).unwrap();
        assert_eq!(single.rows[0].p_std, 0.0);
    }

    #[test]
    fn resample_rejects_empty_and_mixed() {
        assert!(resample_weekly(&[]).is_err());
        let mut b = order("2019-01-07", 1.0, 1.0, "c", false);
        b.article_code = "B".into();
        assert!(resample_weekly(&[order("2019-01-07", 1.0, 1.0, "c", false), b]).is_err());
    }

    #[test]
    fn trims_after_long_hole() {
        let mut weeks: Vec<i64> = (0..5).collect();
        weeks.extend(25..60);
        let prices = vec![1.0; weeks.len()];
        let s = series_at(&weeks, &prices);
        let t = trim_leading_gap(&s, DEFAULT_MAX_GAP);
        assert_eq!(t.rows[0].week_start, date("2018-01-01") + Duration::weeks(25));
        assert_eq!(t.len(), 35);

        let dense = series_at(&(0..30).collect::<Vec<_>>(), &[1.0; 30]);
        assert_eq!(trim_leading_gap(&dense, DEFAULT_MAX_GAP), dense);

        let short_gaps = series_at(&[0, 1, 4, 5, 9], &[1.0; 5]);
        assert_eq!(trim_leading_gap(&short_gaps, DEFAULT_MAX_GAP), short_gaps);
    }

    #[test]
    fn fill_single_and_double_gaps() {
        let s = series_at(&[0, 2], &[1.0, 3.0]);
        let f = fill_gaps(&s, DEFAULT_MAX_GAP).unwrap();
        assert_eq!(f.len(), 3);
        assert!((f.rows[1].avg_price - 2.0).abs() < 1e-12);
        assert!(f.rows[1].interpolated);
        assert_eq!(f.rows[1].orders, 0);
        assert_eq!(f.rows[1].quantity, 0.0);

        let s = series_at(&[0, 3], &[1.0, 4.0]);
        let f = fill_gaps(&s, DEFAULT_MAX_GAP).unwrap();
        let p: Vec<f64> = f.prices();
        assert!((p[1] - 2.0).abs() < 1e-12 && (p[2] - 3.0).abs() < 1e-12);

        let dense = series_at(&[0, 1, 2], &[1.0, 2.0, 3.0]);
        assert_eq!(fill_gaps(&dense, DEFAULT_MAX_GAP).unwrap(), dense);
    }

    #[test]
    fn fill_errors() {
        let s = series_at(&[0, 10], &[1.0, 2.0]);
        assert!(matches!(fill_gaps(&s, 4), Err(Error::GapTooLong { len: 9, .. })));
        let s = series_at(&[0, 1], &[1.0, 2.0]);
        let after = date("2018-01-01") + Duration::weeks(3);
        assert!(matches!(fill_gaps_through(&s, 4, after), Err(Error::TrailingGap(_))));
        assert!(fill_gaps_through(&s, 4, date("2018-01-08")).is_ok());
    }

    #[test]
    fn split_partitions() {
        let weeks: Vec<i64> = (0..120).collect();
        let s = series_at(&weeks, &vec![1.0; 120]);
        let parts = split(&s, date("2018-06-30"), date("2019-03-31")).unwrap();
        assert_eq!(parts.train.len() + parts.valid.len() + parts.test.len(), 120);
        assert!(parts.train.rows.last().unwrap().week_start < parts.valid.rows[0].week_start);
        assert!(parts.valid.rows.last().unwrap().week_start < parts.test.rows[0].week_start);

        assert!(split(&s, date("2018-06-30"), date("2025-01-01")).is_err());
        assert!(split(&s, date("2019-06-30"), date("2019-03-31")).is_err());
        assert!(matches!(
            split(&s, date("2017-06-30"), date("2019-03-31")),
            Err(Error::EmptyPartition("train"))
        ));
    }

    #[test]
    fn embedding_values() {
        assert_eq!(time_embedding(0).unwrap(), (1.0, 0.0));
        // Reference values from a 30-digit evaluation.
        let (c, s) = time_embedding(13).unwrap();
        assert!((c - 0.004_304_825_811_567_88).abs() < 1e-12, "{c}");
        assert!((s - 0.999_990_734_194_438_5).abs() < 1e-12, "{s}");
        let (c, s) = time_embedding(26).unwrap();
        assert!((c + 0.999_962_936_949_464_1).abs() < 1e-12, "{c}");
        assert!((s - 0.008_609_571_847_777_87).abs() < 1e-12, "{s}");
        assert!(time_embedding(53).is_err());
    }

    #[test]
    fn scaler_examples() {
        let s = series_at(&[0, 1, 2], &[1.0, 2.0, 3.0]);
        let sc = fit_scaler(&s).unwrap();
        let scaled = sc.apply(&s);
        let col: Vec<f64> = scaled.iter().map(|r| r[PRICE_FEATURE]).collect();
        assert_eq!(col, vec![0.0, 0.5, 1.0]);
        // quantity is constant at 10
        assert!(scaled.iter().all(|r| r[0] == 0.0));

        let valid = series_at(&[3], &[4.0]);
        assert!((sc.apply(&valid)[0][PRICE_FEATURE] - 1.5).abs() < 1e-12);

        let z = Scaler::fit(&s, ScalingMethod::ZScore).unwrap();
        let zs: Vec<f64> = z.apply(&s).iter().map(|r| r[PRICE_FEATURE]).collect();
        assert!((zs.iter().sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn supervised_examples() {
        let prices = [1.41, 1.55, 1.69, 1.75, 1.86, 1.90];
        let rows: Vec<[f64; FEATURES]> = prices.iter().map(|&p| [p; FEATURES]).collect();
        let w = make_supervised(&rows, &prices, 4).unwrap();
        assert_eq!(w.len(), 2);
        assert_eq!(w.inputs[0].len(), 4 * FEATURES);
        assert_eq!(w.target_index, vec![4, 5]);

        let w1 = make_supervised(&rows, &prices, 1).unwrap();
        assert!((w1.targets[0] - 0.14).abs() < 1e-12);
        assert!(make_supervised(&rows, &prices, 6).is_err());
        assert!(make_supervised(&rows, &prices, 0).is_err());
    }

    proptest! {
        #[test]
        fn trim_then_fill_is_evenly_spaced(steps in proptest::collection::vec(1i64..12, 1..60)) {
            let mut weeks = vec![0i64];
            for s in &steps {
                weeks.push(weeks.last().unwrap() + s);
            }
            let prices: Vec<f64> = (0..weeks.len()).map(|i| 1.0 + i as f64 * 0.01).collect();
            let s = series_at(&weeks, &prices);
            let filled = fill_gaps(&trim_leading_gap(&s, DEFAULT_MAX_GAP), DEFAULT_MAX_GAP).unwrap();
            for w in filled.rows.windows(2) {
                prop_assert_eq!((w[1].week_start - w[0].week_start).num_days(), 7);
            }
        }

        #[test]
        fn scaler_round_trip(values in proptest::collection::vec(-1e3f64..1e3, 2..40)) {
            let weeks: Vec<i64> = (0..values.len() as i64).collect();
            let s = series_at(&weeks, &values);
            let sc = Scaler::fit(&s, ScalingMethod::MinMax).unwrap();
            for r in &s.rows {
                let f = r.features();
                let back = sc.inverse_row(&sc.transform_row(&f));
                let c = PRICE_FEATURE;
                if sc.high[c] > sc.low[c] {
                    prop_assert!((back[c] - f[c]).abs() <= 1e-12 * f[c].abs().max(1.0));
                }
            }
        }

        #[test]
        fn targets_translation_equivariant(
            prices in proptest::collection::vec(0.5f64..5.0, 3..30),
            shift in -0.4f64..10.0,
        ) {
            let rows: Vec<[f64; FEATURES]> = prices.iter().map(|&p| [p; FEATURES]).collect();
            let shifted: Vec<f64> = prices.iter().map(|p| p + shift).collect();
            let a = make_supervised(&rows, &prices, 2).unwrap();
            let b = make_supervised(&rows, &shifted, 2).unwrap();
            for (x, y) in a.targets.iter().zip(&b.targets) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn resampling_conserves_quantity(
            orders in proptest::collection::vec((0i64..400, 0.0f64..50.0), 1..80),
        ) {
            let base = date("2019-01-01");
            let recs: Vec<OrderRecord> = orders
                .iter()
                .map(|&(d, q)| {
                    let mut o = order("2019-01-01", 2.0, q, "c", false);
                    o.date = base + Duration::days(d);
                    o
                })
                .collect();
            let s = resample_weekly(&recs).unwrap();
            let total: f64 = recs.iter().map(|r| r.quantity).sum();
            let weekly: f64 = s.rows.iter().map(|r| r.quantity).sum();
            prop_assert!((total - weekly).abs() < 1e-9 * total.max(1.0));
            for r in &s.rows {
                prop_assert!(r.customers <= r.orders);
                prop_assert!((r.week_cos.powi(2) + r.week_sin.powi(2) - 1.0).abs() < 1e-9);
            }
        }
    }
}
