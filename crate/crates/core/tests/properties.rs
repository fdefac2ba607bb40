use chrono::{Duration, NaiveDate};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pricecast::arima::{fit_arima, rolling, ArimaSpec, RollingMode};
use pricecast::harness::metrics::ForecastSeries;
use pricecast::harness::simulate::{simulate_arima, ArimaSimulation};
use pricecast::ingest::{restrict, OrderRecord};
use pricecast::neural::container::{decode, encode, ModelBundle};
use pricecast::neural::grid::{family_a_grid, family_b_grid};
use pricecast::neural::NetworkParams;
use pricecast::stats::{ljung_box, log_series};

fn log_prices(seed: u64, n: usize) -> Vec<f64> {
    let p = simulate_arima(&ArimaSimulation {
        spec: ArimaSpec::new(1, 1, 0),
        phi: vec![0.3],
        theta: vec![],
        sigma: 0.03,
        n,
        seed,
    })
    .unwrap();
    log_series(&p).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn bic_identity(p in 0usize..3, q in 0usize..3, seed in 0u64..1000) {
        let fit = fit_arima(&log_prices(seed, 150), ArimaSpec::new(p, 1, q)).unwrap();
        let k = (p + q + 1) as f64;
        prop_assert_eq!(fit.bic, k * (fit.nobs as f64).ln() - 2.0 * fit.loglik);
        prop_assert_eq!(fit.residuals.len(), fit.nobs);
    }

    #[test]
    fn arima_forecasts_scale_with_prices(c in 0.1f64..20.0, seed in 0u64..1000) {
        let logp = log_prices(seed, 120);
        let shifted: Vec<f64> = logp.iter().map(|v| v + c.ln()).collect();
        let fit = fit_arima(&logp, ArimaSpec::new(1, 1, 1)).unwrap();
        // A non-invertible MA recursion amplifies rounding without bound.
        prop_assume!(!fit.near_unit_root);
        let base = rolling(RollingMode::Frozen, &fit, &logp, 100).unwrap();
        let scaled = rolling(RollingMode::Frozen, &fit, &shifted, 100).unwrap();
        for (a, b) in base.iter().zip(&scaled) {
            prop_assert!((b.predicted_price - c * a.predicted_price).abs() <= 1e-9 * b.predicted_price.abs());
        }
    }

    #[test]
    fn restrict_is_idempotent(days in proptest::collection::vec((0i64..400, 0usize..3), 0..60), cut in 0i64..400) {
        let start = NaiveDate::from_ymd_opt(2018, 1, 1).unwrap();
        let records: Vec<OrderRecord> = days
            .iter()
            .enumerate()
            .map(|(i, &(d, a))| OrderRecord {
                date: start + Duration::days(d),
                order_number: i.to_string(),
                unit_price: 1.0 + i as f64,
                article_code: ["A", "B", "C"][a].into(),
                quantity: 1.0,
                customer_code: "c".into(),
                on_offer: false,
                offer_type: None,
                unit_cost: 0.5,
            })
            .collect();
        let cutoff = start + Duration::days(cut);
        let once = restrict(&records, "B", cutoff);
        prop_assert_eq!(restrict(&once, "B", cutoff), once.clone());
        prop_assert!(once.iter().all(|r| r.article_code == "B" && r.date <= cutoff));
    }

    #[test]
    fn forecast_series_increment_identities(
        prices in proptest::collection::vec(0.5f64..5.0, 3..30),
        deltas in proptest::collection::vec(-0.5f64..0.5, 30),
    ) {
        let n = prices.len() - 1;
        let start = NaiveDate::from_ymd_opt(2020, 1, 6).unwrap();
        let fs = ForecastSeries::from_deltas(
            (0..n).map(|i| start + Duration::weeks(i as i64)).collect(),
            prices[..n].to_vec(),
            prices[1..].to_vec(),
            &deltas[..n],
        );
        let (d, dh) = (fs.observed_delta(), fs.predicted_delta());
        for i in 0..n {
            prop_assert_eq!(d[i], fs.observed[i] - fs.previous[i]);
            prop_assert_eq!(dh[i], fs.predicted[i] - fs.previous[i]);
            prop_assert!((dh[i] - deltas[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn ljung_box_grows_with_lag(seed in 0u64..1000) {
        let w: Vec<f64> = log_prices(seed, 200).windows(2).map(|x| x[1] - x[0]).collect();
        let r = ljung_box(&w, &[1, 2, 4, 8, 12]).unwrap();
        for pair in r.entries.windows(2) {
            prop_assert!(pair[1].q > pair[0].q);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn weight_container_round_trips(index in 0usize..8748, use_a in any::<bool>(), seed in any::<u64>()) {
        let spec = if use_a { family_a_grid()[index % 54] } else { family_b_grid()[index] };
        prop_assume!(spec.validate().is_ok());
        let params = NetworkParams::init(&spec, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let bundle = ModelBundle { spec, params, target_scale: 0.25, scaler: None };
        let bytes = encode(&bundle).unwrap();
        prop_assert_eq!(&bytes[..8], b"PCNNWTS\0");
        let back = decode(&bytes).unwrap();
        prop_assert_eq!(back.params.flatten(), bundle.params.flatten());
        prop_assert_eq!(back.spec, bundle.spec);
        prop_assert!(decode(&bytes[..bytes.len() - 1]).is_err());
    }
}
