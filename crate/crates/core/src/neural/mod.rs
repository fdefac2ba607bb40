//! LSTM and CNN+LSTM regressors for weekly price increments, built on
//! hand-written layers with analytic gradients.

pub mod container;
pub mod data;
pub mod grid;
pub mod layers;
pub mod network;
pub mod tensor;
pub mod train;

pub use data::NnData;
pub use grid::{grid_search_nn, refit_and_forecast, GridOptions, GridOutcome};
pub use network::{ConvSpec, Family, NetworkParams, NetworkSpec};
pub use train::{train, TrainConfig};
