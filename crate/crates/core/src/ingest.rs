//! Raw order records: parsing, product/date restriction and price outlier
//! removal by quantity-weighted z-score.

use std::io::Read;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column names expected in the order file header.
pub const ORDER_COLUMNS: [&str; 9] = [
    "date",
    "order_number",
    "unit_price",
    "article_code",
    "quantity",
    "customer_code",
    "on_offer",
    "offer_type",
    "unit_cost",
];

/// Z-score beyond which a record is treated as a price outlier.
pub const DEFAULT_Z_THRESHOLD: f64 = 4.0;

/// One raw sales line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderRecord {
    pub date: NaiveDate,
    pub order_number: String,
    pub unit_price: f64,
    pub article_code: String,
    pub quantity: f64,
    pub customer_code: String,
    pub on_offer: bool,
    pub offer_type: Option<String>,
    pub unit_cost: f64,
}

/// Quantity-weighted mean and standard deviation of unit prices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedStats {
    pub mean: f64,
    pub std: f64,
    pub total_weight: f64,
}

/// Weighted mean and population standard deviation of `(value, weight)`
/// pairs. Returns `None` when the total weight is zero.
pub(crate) fn weighted_moments<I>(pairs: I) -> Option<WeightedStats>
where
    I: IntoIterator<Item = (f64, f64)> + Clone,
{
    let (total, sum) = pairs
        .clone()
        .into_iter()
        .fold((0.0, 0.0), |(w, s), (x, q)| (w + q, s + q * x));
    if total <= 0.0 {
        return None;
    }
    let mean = sum / total;
    let var = pairs
        .into_iter()
        .map(|(x, q)| q * (x - mean) * (x - mean))
        .sum::<f64>()
        / total;
    Some(WeightedStats {
        mean,
        std: var.max(0.0).sqrt(),
        total_weight: total,
    })
}

/// Parses delimited order records. The header must name all nine
/// [`ORDER_COLUMNS`]; their order is free.
pub fn parse_orders<R: Read>(source: R, delimiter: u8) -> Result<Vec<OrderRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .flexible(true)
        .has_headers(true)
        .from_reader(source);

    let headers = reader.headers()?.clone();
    let mut index = [0usize; 9];
    for (slot, name) in index.iter_mut().zip(ORDER_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))?;
    }

    let mut records = Vec::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != headers.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", headers.len(), row.len()),
            });
        }
        let field = |i: usize| row.get(index[i]).unwrap_or("").trim();
        let bad = |what: &str, value: &str| Error::Parse {
            line,
            message: format!("invalid {what} `{value}`"),
        };

        let date = NaiveDate::parse_from_str(field(0), "%Y-%m-%d")
            .map_err(|_| bad("date", field(0)))?;
        let unit_price = parse_number(field(2)).ok_or_else(|| bad("unit_price", field(2)))?;
        let quantity = parse_number(field(4)).ok_or_else(|| bad("quantity", field(4)))?;
        let unit_cost = parse_number(field(8)).ok_or_else(|| bad("unit_cost", field(8)))?;
        let on_offer = match field(6) {
            "" | "0" => false,
            "1" => true,
            other => return Err(bad("on_offer", other)),
        };
        if unit_price <= 0.0 {
            return Err(bad("unit_price (must be positive)", field(2)));
        }
        if quantity < 0.0 {
            return Err(bad("quantity (must be non-negative)", field(4)));
        }
        if unit_cost < 0.0 {
            return Err(bad("unit_cost (must be non-negative)", field(8)));
        }
        let offer_type = Some(field(7)).filter(|s| !s.is_empty()).map(str::to_string);

        records.push(OrderRecord {
            date,
            order_number: field(1).to_string(),
            unit_price,
            article_code: field(3).to_string(),
            quantity,
            customer_code: field(5).to_string(),
            on_offer,
            offer_type,
            unit_cost,
        });
    }
    Ok(records)
}

/// Writes records with the [`ORDER_COLUMNS`] header, readable by
/// [`parse_orders`].
pub fn write_orders<W: std::io::Write>(records: &[OrderRecord], writer: W, delimiter: u8) -> Result<()> {
    let mut w = csv::WriterBuilder::new().delimiter(delimiter).from_writer(writer);
    w.write_record(ORDER_COLUMNS)?;
    for r in records {
        w.write_record([
            r.date.to_string(),
            r.order_number.clone(),
            r.unit_price.to_string(),
            r.article_code.clone(),
            r.quantity.to_string(),
            r.customer_code.clone(),
            if r.on_offer { "1" } else { "0" }.to_string(),
            r.offer_type.clone().unwrap_or_default(),
            r.unit_cost.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("order output", e))?;
    Ok(())
}

/// Strict dot-decimal number. Rejects thousands separators, comma decimals
/// and non-finite spellings.
fn parse_number(s: &str) -> Option<f64> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit() || b"+-.eE".contains(&b)) {
        return None;
    }
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Keeps records of `article` dated on or before `cutoff`, in input order.
pub fn restrict(records: &[OrderRecord], article: &str, cutoff: NaiveDate) -> Vec<OrderRecord> {
    records
        .iter()
        .filter(|r| r.article_code == article && r.date <= cutoff)
        .cloned()
        .collect()
}

pub fn weighted_price_stats(records: &[OrderRecord]) -> Result<WeightedStats> {
    weighted_moments(records.iter().map(|r| (r.unit_price, r.quantity))).ok_or(Error::NoWeight)
}

/// Drops records whose price z-score exceeds `threshold` in absolute value.
/// With a zero standard deviation every z-score is taken to be 0.
pub fn zscore_filter(
    records: &[OrderRecord],
    stats: &WeightedStats,
    threshold: f64,
) -> Result<Vec<OrderRecord>> {
    if !(threshold > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "z-score threshold must be positive, got {threshold}"
        )));
    }
    if stats.std == 0.0 {
        return Ok(records.to_vec());
    }
    Ok(records
        .iter()
        .filter(|r| ((r.unit_price - stats.mean) / stats.std).abs() <= threshold)
        .cloned()
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str =
        "date,order_number,unit_price,article_code,quantity,customer_code,on_offer,offer_type,unit_cost\n";

    fn record(date: &str, price: f64, qty: f64) -> OrderRecord {
        OrderRecord {
            date: date.parse().unwrap(),
            order_number: "o".into(),
            unit_price: price,
            article_code: "A1".into(),
            quantity: qty,
            customer_code: "c".into(),
            on_offer: false,
            offer_type: None,
            unit_cost: 1.0,
        }
    }

    #[test]
    fn header_only_is_empty() {
        assert!(parse_orders(HEADER.as_bytes(), b',').unwrap().is_empty());
    }

    #[test]
    fn parses_rows_in_order() {
        let text = format!(
            "{HEADER}2019-01-02,1,1.50,A1,10,C1,0,,1.10\n\
             2019-01-03,2,1.60,A1,5,C2,1,promo,1.10\n\
             2019-01-04,3,1.70,B2,1,C1,,,1.20\n"
        );
        let recs = parse_orders(text.as_bytes(), b',').unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[0].order_number, "1");
        assert!(!recs[0].on_offer);
        assert_eq!(recs[1].offer_type.as_deref(), Some("promo"));
        assert!(recs[1].on_offer);
        assert!(!recs[2].on_offer);
        assert_eq!(recs[2].article_code, "B2");
    }

    #[test]
    fn comma_decimal_rejected_on_its_line() {
        let text = format!("{HEADER}2019-01-02,1,1.50,A1,10,C1,0,,1.10\n2019-01-03,2,\"2,00\",A1,5,C2,0,,1.10\n");
        match parse_orders(text.as_bytes(), b',') {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let unquoted = format!("{HEADER}2019-01-03,2,2,00,A1,5,C2,0,,1.10\n");
        assert!(matches!(
            parse_orders(unquoted.as_bytes(), b','),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn semicolon_delimiter() {
        let text = HEADER.replace(',', ";") + "2019-01-02;1;1.50;A1;10;C1;0;;1.10\n";
        assert_eq!(parse_orders(text.as_bytes(), b';').unwrap().len(), 1);
    }

    #[test]
    fn missing_column_named() {
        let text = "date,order_number,unit_price,article_code,quantity,customer_code,on_offer,offer_type\n";
        match parse_orders(text.as_bytes(), b',') {
            Err(Error::MissingColumn(c)) => assert_eq!(c, "unit_cost"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_date_and_price() {
        let text = format!("{HEADER}2019-13-02,1,1.50,A1,10,C1,0,,1.10\n");
        assert!(matches!(parse_orders(text.as_bytes(), b','), Err(Error::Parse { line: 2, .. })));
        let text = format!("{HEADER}2019-01-02,1,0,A1,10,C1,0,,1.10\n");
        assert!(parse_orders(text.as_bytes(), b',').is_err());
        let text = format!("{HEADER}2019-01-02,1,1.5,A1,-1,C1,0,,1.10\n");
        assert!(parse_orders(text.as_bytes(), b',').is_err());
    }

    #[test]
    fn restrict_boundaries() {
        let cutoff: NaiveDate = "2020-03-09".parse().unwrap();
        let recs = vec![record("2020-03-09", 2.0, 1.0), record("2020-03-10", 2.0, 1.0)];
        let kept = restrict(&recs, "A1", cutoff);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].date, cutoff);
        assert!(restrict(&recs, "ZZ", cutoff).is_empty());
        assert_eq!(restrict(&kept, "A1", cutoff), kept);
    }

    #[test]
    fn weighted_stats_examples() {
        let s = weighted_price_stats(&[record("2019-01-01", 2.0, 5.0)]).unwrap();
        assert_eq!((s.mean, s.std, s.total_weight), (2.0, 0.0, 5.0));

        // mean = (1 + 9)/4 = 2.5; var = (1*2.25 + 3*0.25)/4 = 0.75
        let s = weighted_price_stats(&[record("2019-01-01", 1.0, 1.0), record("2019-01-01", 3.0, 3.0)])
            .unwrap();
        assert!((s.mean - 2.5).abs() < 1e-15);
        assert!((s.std - 0.75f64.sqrt()).abs() < 1e-15);
        assert!((s.std - 0.8660).abs() < 1e-4);

        assert!(matches!(
            weighted_price_stats(&[record("2019-01-01", 1.0, 0.0)]),
            Err(Error::NoWeight)
        ));
    }

    #[test]
    fn zscore_examples() {
        let stats = WeightedStats { mean: 2.0, std: 0.1, total_weight: 10.0 };
        let recs = vec![record("2019-01-01", 2.0, 1.0), record("2019-01-01", 2.5, 1.0)];
        let kept = zscore_filter(&recs, &stats, DEFAULT_Z_THRESHOLD).unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].unit_price, 2.0);

        let flat = vec![record("2019-01-01", 2.0, 1.0); 4];
        let s = weighted_price_stats(&flat).unwrap();
        assert_eq!(zscore_filter(&flat, &s, 4.0).unwrap().len(), 4);

        assert!(zscore_filter(&recs, &stats, 0.0).is_err());
        assert!(zscore_filter(&recs, &stats, -1.0).is_err());
    }

    #[test]
    fn stats_invariant_under_reordering() {
        let mut recs: Vec<_> = (0..20)
            .map(|i| record("2019-01-01", 1.0 + (i as f64 * 0.37).sin().abs(), (i % 7) as f64))
            .collect();
        let a = weighted_price_stats(&recs).unwrap();
        recs.reverse();
        recs.rotate_left(7);
        let b = weighted_price_stats(&recs).unwrap();
        assert!((a.mean - b.mean).abs() < 1e-12);
        assert!((a.std - b.std).abs() < 1e-12);
    }
}
