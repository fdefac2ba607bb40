//! Weekly wholesale price forecasting.
//!
//! The crate covers the whole pipeline: raw order ingestion and outlier
//! removal ([`ingest`]), weekly resampling and supervised windows
//! ([`weekly`]), econometric diagnostics ([`stats`]), ARIMA estimation and
//! order selection ([`arima`]), a changepoint trend plus Fourier seasonality
//! additive model ([`additive`]), LSTM and CNN+LSTM networks ([`neural`]),
//! and the evaluation harness that compares them ([`harness`]).

pub mod additive;
pub mod arima;
pub mod error;
pub mod harness;
pub mod ingest;
pub mod io;
pub mod neural;
pub mod optim;
pub mod stats;
pub mod weekly;

pub use error::{Error, Result};
