use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{forward, loss_and_grads, NetworkParams, NetworkSpec};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::weekly::SupervisedWindows;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            max_epochs: 150,
            patience: 5,
            beta1: 0.9,
            beta2: 0.999,
            eps_adam: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience >= self.max_epochs {
            return Err(Error::InvalidArgument(format!("invalid training config {self:?}")));
        }
        Ok(())
    }
}

/// First and second moment estimates for Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], step: 0 }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, alpha: f64, cfg: &TrainConfig) {
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        *p -= alpha * (*m / c1) / ((*v / c2).sqrt() + cfg.eps_adam);
    }
}

fn adam_step_network(
    params: &mut NetworkParams,
    grads: &NetworkParams,
    state: &mut AdamState,
    alpha: f64,
    cfg: &TrainConfig,
) {
    let mut flat = params.flatten();
    adam_step(&mut flat, &grads.flatten(), state, alpha, cfg);
    params.load_flat(&flat).expect("same architecture");
}

/// Input windows stacked as `[samples, window, dim]` with scalar targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Tensor,
    pub targets: Vec<f64>,
}

impl Dataset {
    pub fn new(inputs: Tensor, targets: Vec<f64>) -> Result<Self> {
        if inputs.shape.len() != 3 || inputs.dim(0) != targets.len() {
            return Err(Error::Shape(format!(
                "inputs {:?} do not match {} targets",
                inputs.shape,
                targets.len()
            )));
        }
        Ok(Self { inputs, targets })
    }

    /// Stacks windows, dividing targets by `target_scale`.
    pub fn from_windows(w: &SupervisedWindows, dim: usize, target_scale: f64) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::EmptyPartition("window"));
        }
        let data: Vec<f64> = w.inputs.iter().flatten().copied().collect();
        let inputs = Tensor::new(vec![w.len(), w.n, dim], data)?;
        Self::new(inputs, w.targets.iter().map(|t| t / target_scale).collect())
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        let mut shape = self.inputs.shape.clone();
        shape[0] += other.len();
        let mut data = self.inputs.data.clone();
        data.extend_from_slice(&other.inputs.data);
        let mut targets = self.targets.clone();
        targets.extend_from_slice(&other.targets);
        Dataset::new(Tensor::new(shape, data)?, targets)
    }

    fn gather(&self, idx: &[usize]) -> (Tensor, Vec<f64>) {
        let per: usize = self.inputs.shape[1..].iter().product();
        let mut data = Vec::with_capacity(idx.len() * per);
        for &i in idx {
            data.extend_from_slice(&self.inputs.data[i * per..(i + 1) * per]);
        }
        let mut shape = self.inputs.shape.clone();
        shape[0] = idx.len();
        (Tensor { shape, data }, idx.iter().map(|&i| self.targets[i]).collect())
    }
}

/// Inference-mode predictions for a whole dataset.
pub fn predict_dataset(spec: &NetworkSpec, params: &NetworkParams, data: &Dataset) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut out = Vec::with_capacity(data.len());
    for chunk in idx.chunks(256) {
        let (x, _) = data.gather(chunk);
        out.extend(forward(spec, params, &x, false, &mut rng)?);
    }
    Ok(out)
}

pub fn mse(spec: &NetworkSpec, params: &NetworkParams, data: &Dataset) -> Result<f64> {
    let pred = predict_dataset(spec, params, data)?;
    let v = pred.iter().zip(&data.targets).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / data.len() as f64;
    if !v.is_finite() {
        return Err(Error::NonFinite("validation loss".into()));
    }
    Ok(v)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Mean training-mode batch loss per epoch.
    pub train_loss: Vec<f64>,
    pub valid_loss: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Weights from the epoch with the lowest validation loss.
    pub params: NetworkParams,
    pub history: TrainHistory,
    /// 1-based epoch at which training ended.
    pub stopped_epoch: usize,
    pub best_epoch: usize,
    pub best_valid_loss: f64,
}

fn run_epoch(
    spec: &NetworkSpec,
    params: &mut NetworkParams,
    data: &Dataset,
    state: &mut AdamState,
    order: &mut [usize],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    order.shuffle(rng);
    let mut total = 0.0;
    for chunk in order.chunks(cfg.batch_size) {
        let (x, y) = data.gather(chunk);
        let (loss, grads) = loss_and_grads(spec, params, &x, &y, rng)?;
        total += loss * chunk.len() as f64;
        adam_step_network(params, &grads, state, spec.learning_rate, cfg);
    }
    let epoch_loss = total / data.len() as f64;
    if !epoch_loss.is_finite() || params.flatten().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("training diverged".into()));
    }
    Ok(epoch_loss)
}

/// Mini-batch Adam with early stopping on the validation loss. Training
/// ends after `patience` epochs without a strict improvement.
pub fn train(spec: &NetworkSpec, train: &Dataset, valid: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() || valid.is_empty() {
        return Err(Error::EmptyPartition(if train.is_empty() { "train" } else { "valid" }));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = NetworkParams::init(spec, &mut rng)?;
    let mut state = AdamState::new(params.num_params());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = TrainHistory::default();
    let mut best = (f64::INFINITY, 0, params.clone());
    let mut since_best = 0;
    let mut stopped = cfg.max_epochs;
    for epoch in 1..=cfg.max_epochs {
        let tl = run_epoch(spec, &mut params, train, &mut state, &mut order, cfg, &mut rng)?;
        let vl = mse(spec, &params, valid)?;
        history.train_loss.push(tl);
        history.valid_loss.push(vl);
        if vl < best.0 {
            best = (vl, epoch, params.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                stopped = epoch;
                break;
            }
        }
    }
    Ok(TrainOutcome {
        params: best.2,
        history,
        stopped_epoch: stopped,
        best_epoch: best.1,
        best_valid_loss: best.0,
    })
}

/// Trains for exactly `epochs` epochs without validation.
pub fn train_epochs(spec: &NetworkSpec, data: &Dataset, epochs: usize, cfg: &TrainConfig) -> Result<NetworkParams> {
    if epochs == 0 {
        return Err(Error::InvalidArgument("refit needs at least one epoch".into()));
    }
    if data.is_empty() {
        return Err(Error::EmptyPartition("train"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = NetworkParams::init(spec, &mut rng)?;
    let mut state = AdamState::new(params.num_params());
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..epochs {
        run_epoch(spec, &mut params, data, &mut state, &mut order, cfg, &mut rng)?;
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn adam_first_step_and_zero_gradient() {
        let cfg = TrainConfig::default();
        let mut x = [1.0];
        let mut st = AdamState::new(1);
        adam_step(&mut x, &[3.7], &mut st, 0.01, &cfg);
        assert!((1.0 - x[0] - 0.01).abs() < 1e-8);
        let mut y = [2.0, -1.0];
        let mut st = AdamState::new(2);
        for _ in 0..10 {
            adam_step(&mut y, &[0.0, 0.0], &mut st, 0.01, &cfg);
        }
        assert_eq!(y, [2.0, -1.0]);
    }

    #[test]
    fn adam_descends_quadratic_bowl() {
        let cfg = TrainConfig::default();
        let mut x = [1.0];
        let mut st = AdamState::new(1);
        for _ in 0..500 {
            let g = [2.0 * x[0]];
            adam_step(&mut x, &g, &mut st, 0.01, &cfg);
        }
        assert!(x[0].abs() < 0.05, "{}", x[0]);
    }

    fn linear_data(n: usize, seed: u64, constant: bool) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.01).unwrap();
        let (w, d) = (4, 3);
        let data: Vec<f64> = (0..n * w * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let targets = (0..n)
            .map(|i| {
                if constant {
                    0.3
                } else {
                    let last = &data[(i * w + w - 1) * d..(i * w + w) * d];
                    0.5 * last[0] - 0.3 * last[1] + noise.sample(&mut rng)
                }
            })
            .collect();
        Dataset::new(Tensor::new(vec![n, w, d], data).unwrap(), targets).unwrap()
    }

    fn spec(lr: f64) -> NetworkSpec {
        NetworkSpec { input_dim: 3, ..NetworkSpec::family_a(1, 8, 0.1, lr) }
    }

    #[test]
    fn learns_linear_target() {
        let (tr, va) = (linear_data(200, 1, false), linear_data(60, 2, false));
        let cfg = TrainConfig { max_epochs: 40, seed: 3, ..Default::default() };
        let out = train(&spec(0.01), &tr, &va, &cfg).unwrap();
        let initial = {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let p = NetworkParams::init(&spec(0.01), &mut rng).unwrap();
            mse(&spec(0.01), &p, &va).unwrap()
        };
        assert!(out.best_valid_loss < initial, "{} vs {initial}", out.best_valid_loss);
        assert_eq!(out.best_valid_loss, out.history.valid_loss.iter().copied().fold(f64::INFINITY, f64::min));
        assert_eq!(mse(&spec(0.01), &out.params, &va).unwrap(), out.best_valid_loss);
    }

    #[test]
    fn constant_validation_loss_stops_after_patience() {
        let (tr, va) = (linear_data(40, 1, true), linear_data(10, 2, true));
        let out = train(&spec(0.0), &tr, &va, &TrainConfig::default()).unwrap();
        assert_eq!(out.stopped_epoch, 6);
        assert_eq!(out.best_epoch, 1);
    }

    #[test]
    fn training_is_deterministic() {
        let (tr, va) = (linear_data(70, 1, false), linear_data(20, 2, false));
        let cfg = TrainConfig { max_epochs: 8, seed: 11, ..Default::default() };
        let a = train(&spec(0.005), &tr, &va, &cfg).unwrap();
        let b = train(&spec(0.005), &tr, &va, &cfg).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn refit_contract() {
        let d = linear_data(20, 1, false);
        assert!(train_epochs(&spec(0.01), &d, 0, &TrainConfig::default()).is_err());
        assert!(train_epochs(&spec(0.01), &d, 2, &TrainConfig::default()).is_ok());
        let empty = linear_data(5, 1, false);
        assert!(train(&spec(0.01), &empty, &Dataset { inputs: empty.inputs.clone(), targets: vec![] }, &TrainConfig::default()).is_err());
    }
}
