//! Differentiable layers over batched sequences shaped `[batch, time, dim]`.
//! Each layer's gradients are returned as a value of the layer type itself.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::{gemm_nn, gemm_nt, gemm_tn, glorot_normal, glorot_normal_shaped, Tensor};
use crate::error::{Error, Result};

fn expect_rank(x: &Tensor, rank: usize, what: &str) -> Result<()> {
    if x.shape.len() != rank {
        return Err(Error::Shape(format!("{what} expects rank {rank}, got {:?}", x.shape)));
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `[out, in]`.
    pub w: Tensor,
    pub b: Tensor,
}

impl Dense {
    pub fn init<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        Self { w: glorot_normal(inputs, outputs, rng), b: Tensor::zeros(&[outputs]) }
    }

    pub fn zeros_like(&self) -> Self {
        Self { w: self.w.zeros_like(), b: self.b.zeros_like() }
    }

    /// `[batch, in] -> [batch, out]`, linear activation.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        expect_rank(x, 2, "dense")?;
        let (batch, inputs, outputs) = (x.dim(0), x.dim(1), self.w.dim(0));
        if inputs != self.w.dim(1) {
            return Err(Error::Shape(format!("dense expects {} inputs, got {inputs}", self.w.dim(1))));
        }
        let mut y = Vec::with_capacity(batch * outputs);
        for _ in 0..batch {
            y.extend_from_slice(&self.b.data);
        }
        gemm_nt(&x.data, &self.w.data, &mut y, batch, inputs, outputs);
        Tensor::new(vec![batch, outputs], y)
    }

    pub fn backward(&self, x: &Tensor, dy: &Tensor) -> (Tensor, Dense) {
        let (batch, inputs, outputs) = (x.dim(0), x.dim(1), self.w.dim(0));
        let mut grads = self.zeros_like();
        gemm_tn(&dy.data, &x.data, &mut grads.w.data, outputs, batch, inputs);
        for row in dy.data.chunks(outputs) {
            grads.b.data.iter_mut().zip(row).for_each(|(g, d)| *g += d);
        }
        let mut dx = Tensor::zeros(&x.shape);
        gemm_nn(&dy.data, &self.w.data, &mut dx.data, batch, outputs, inputs);
        (dx, grads)
    }
}

/// LSTM with gate blocks ordered input, forget, cell candidate, output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lstm {
    /// `[4 * units, in]`.
    pub w: Tensor,
    /// `[4 * units, units]`.
    pub u: Tensor,
    pub b: Tensor,
}

pub struct LstmCache {
    x: Tensor,
    /// Activated gates, `[batch, time, 4 * units]`.
    gates: Vec<f64>,
    c: Vec<f64>,
    tanh_c: Vec<f64>,
    h: Vec<f64>,
}

impl Lstm {
    /// Glorot normal kernels, zero biases except a forget bias of 1.
    pub fn init<R: Rng + ?Sized>(inputs: usize, units: usize, rng: &mut R) -> Self {
        let w = glorot_normal(inputs, 4 * units, rng);
        let u = glorot_normal(units, 4 * units, rng);
        let mut b = Tensor::zeros(&[4 * units]);
        b.data[units..2 * units].iter_mut().for_each(|v| *v = 1.0);
        Self { w, u, b }
    }

    pub fn units(&self) -> usize {
        self.u.dim(1)
    }

    pub fn zeros_like(&self) -> Self {
        Self { w: self.w.zeros_like(), u: self.u.zeros_like(), b: self.b.zeros_like() }
    }

    /// `[batch, time, in] -> [batch, time, units]`, starting from zero
    /// hidden and cell states.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, LstmCache)> {
        expect_rank(x, 3, "lstm")?;
        let (batch, time, inputs) = (x.dim(0), x.dim(1), x.dim(2));
        let units = self.units();
        if inputs != self.w.dim(1) {
            return Err(Error::Shape(format!("lstm expects {} inputs, got {inputs}", self.w.dim(1))));
        }
        let g4 = 4 * units;
        let mut gates = vec![0.0; batch * time * g4];
        let mut c = vec![0.0; batch * time * units];
        let mut tanh_c = vec![0.0; batch * time * units];
        let mut h = vec![0.0; batch * time * units];
        let mut xt = vec![0.0; batch * inputs];
        let mut h_prev = vec![0.0; batch * units];
        let mut c_prev = vec![0.0; batch * units];
        let mut z = vec![0.0; batch * g4];

        for t in 0..time {
            for bi in 0..batch {
                let src = (bi * time + t) * inputs;
                xt[bi * inputs..(bi + 1) * inputs].copy_from_slice(&x.data[src..src + inputs]);
                z[bi * g4..(bi + 1) * g4].copy_from_slice(&self.b.data);
            }
            gemm_nt(&xt, &self.w.data, &mut z, batch, inputs, g4);
            gemm_nt(&h_prev, &self.u.data, &mut z, batch, units, g4);
            for bi in 0..batch {
                let zb = &z[bi * g4..(bi + 1) * g4];
                let base = (bi * time + t) * g4;
                let sbase = (bi * time + t) * units;
                for j in 0..units {
                    let i_g = sigmoid(zb[j]);
                    let f_g = sigmoid(zb[units + j]);
                    let g_g = zb[2 * units + j].tanh();
                    let o_g = sigmoid(zb[3 * units + j]);
                    let cv = f_g * c_prev[bi * units + j] + i_g * g_g;
                    let tc = cv.tanh();
                    let hv = o_g * tc;
                    gates[base + j] = i_g;
                    gates[base + units + j] = f_g;
                    gates[base + 2 * units + j] = g_g;
                    gates[base + 3 * units + j] = o_g;
                    c[sbase + j] = cv;
                    tanh_c[sbase + j] = tc;
                    h[sbase + j] = hv;
                    c_prev[bi * units + j] = cv;
                    h_prev[bi * units + j] = hv;
                }
            }
        }
        let out = Tensor::new(vec![batch, time, units], h.clone())?;
        Ok((out, LstmCache { x: x.clone(), gates, c, tanh_c, h }))
    }

    /// Backpropagation through time. `dh` is the loss gradient with respect
    /// to every output hidden state.
    pub fn backward(&self, cache: &LstmCache, dh: &Tensor) -> (Tensor, Lstm) {
        let x = &cache.x;
        let (batch, time, inputs) = (x.dim(0), x.dim(1), x.dim(2));
        let units = self.units();
        let g4 = 4 * units;
        let mut grads = self.zeros_like();
        let mut dx = Tensor::zeros(&x.shape);
        let mut dh_next = vec![0.0; batch * units];
        let mut dc_next = vec![0.0; batch * units];
        let mut dz = vec![0.0; batch * g4];
        let mut xt = vec![0.0; batch * inputs];
        let mut h_prev = vec![0.0; batch * units];
        let mut dxt = vec![0.0; batch * inputs];

        for t in (0..time).rev() {
            for bi in 0..batch {
                let base = (bi * time + t) * g4;
                let sbase = (bi * time + t) * units;
                for j in 0..units {
                    let i_g = cache.gates[base + j];
                    let f_g = cache.gates[base + units + j];
                    let g_g = cache.gates[base + 2 * units + j];
                    let o_g = cache.gates[base + 3 * units + j];
                    let tc = cache.tanh_c[sbase + j];
                    let c_prev = if t > 0 { cache.c[sbase - units + j] } else { 0.0 };
                    let dhv = dh.data[sbase + j] + dh_next[bi * units + j];
                    let dc = dhv * o_g * (1.0 - tc * tc) + dc_next[bi * units + j];
                    let zrow = &mut dz[bi * g4..(bi + 1) * g4];
                    zrow[j] = dc * g_g * i_g * (1.0 - i_g);
                    zrow[units + j] = dc * c_prev * f_g * (1.0 - f_g);
                    zrow[2 * units + j] = dc * i_g * (1.0 - g_g * g_g);
                    zrow[3 * units + j] = dhv * tc * o_g * (1.0 - o_g);
                    dc_next[bi * units + j] = dc * f_g;
                }
                let src = (bi * time + t) * inputs;
                xt[bi * inputs..(bi + 1) * inputs].copy_from_slice(&x.data[src..src + inputs]);
                if t > 0 {
                    let hs = (bi * time + t - 1) * units;
                    h_prev[bi * units..(bi + 1) * units].copy_from_slice(&cache.h[hs..hs + units]);
                } else {
                    h_prev[bi * units..(bi + 1) * units].iter_mut().for_each(|v| *v = 0.0);
                }
            }
            gemm_tn(&dz, &xt, &mut grads.w.data, g4, batch, inputs);
            gemm_tn(&dz, &h_prev, &mut grads.u.data, g4, batch, units);
            for row in dz.chunks(g4) {
                grads.b.data.iter_mut().zip(row).for_each(|(g, d)| *g += d);
            }
            dxt.iter_mut().for_each(|v| *v = 0.0);
            gemm_nn(&dz, &self.w.data, &mut dxt, batch, g4, inputs);
            for bi in 0..batch {
                let dst = (bi * time + t) * inputs;
                dx.data[dst..dst + inputs].copy_from_slice(&dxt[bi * inputs..(bi + 1) * inputs]);
            }
            dh_next.iter_mut().for_each(|v| *v = 0.0);
            gemm_nn(&dz, &self.u.data, &mut dh_next, batch, g4, units);
        }
        (dx, grads)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    None,
    Same,
    Causal,
}

impl Padding {
    pub const ALL: [Padding; 3] = [Padding::Same, Padding::Causal, Padding::None];

    /// Zeros added before and after a sequence for a kernel of size `k`.
    /// `Same` puts the odd zero on the right.
    pub fn amounts(self, k: usize) -> (usize, usize) {
        match self {
            Padding::None => (0, 0),
            Padding::Causal => (k - 1, 0),
            Padding::Same => ((k - 1) / 2, k - 1 - (k - 1) / 2),
        }
    }

    /// Output length for input length `t`, if non-empty.
    pub fn output_len(self, t: usize, k: usize) -> Option<usize> {
        let (l, r) = self.amounts(k);
        (t + l + r).checked_sub(k).map(|v| v + 1).filter(|&v| v >= 1)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Padding::None => "none",
            Padding::Same => "same",
            Padding::Causal => "causal",
        }
    }
}

impl std::str::FromStr for Padding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" | "no" | "valid" => Ok(Padding::None),
            "same" => Ok(Padding::Same),
            "causal" => Ok(Padding::Causal),
            other => Err(Error::InvalidArgument(format!("unknown padding `{other}`"))),
        }
    }
}

/// One-dimensional cross-correlation along time followed by ReLU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv1d {
    /// `[filters, kernel, in]`.
    pub w: Tensor,
    pub b: Tensor,
    pub padding: Padding,
}

pub struct ConvCache {
    input_shape: Vec<usize>,
    cols: Vec<f64>,
    z: Vec<f64>,
}

impl ConvCache {
    /// Values entering the ReLU.
    pub fn pre_activation(&self) -> &[f64] {
        &self.z
    }
}

impl Conv1d {
    pub fn init<R: Rng + ?Sized>(
        inputs: usize,
        filters: usize,
        kernel: usize,
        padding: Padding,
        rng: &mut R,
    ) -> Self {
        Self {
            w: glorot_normal_shaped(&[filters, kernel, inputs], kernel * inputs, kernel * filters, rng),
            b: Tensor::zeros(&[filters]),
            padding,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self { w: self.w.zeros_like(), b: self.b.zeros_like(), padding: self.padding }
    }

    pub fn kernel(&self) -> usize {
        self.w.dim(1)
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, ConvCache)> {
        expect_rank(x, 3, "conv1d")?;
        let (batch, time, inputs) = (x.dim(0), x.dim(1), x.dim(2));
        let (filters, k) = (self.w.dim(0), self.kernel());
        if inputs != self.w.dim(2) {
            return Err(Error::Shape(format!("conv1d expects {} channels, got {inputs}", self.w.dim(2))));
        }
        let out_len = self.padding.output_len(time, k).ok_or_else(|| {
            Error::Shape(format!("kernel {k} exceeds sequence length {time} without padding"))
        })?;
        let (left, _) = self.padding.amounts(k);
        let width = k * inputs;
        let rows = batch * out_len;
        let mut cols = vec![0.0; rows * width];
        for bi in 0..batch {
            for t in 0..out_len {
                let row = &mut cols[(bi * out_len + t) * width..(bi * out_len + t + 1) * width];
                for j in 0..k {
                    let src = t as isize + j as isize - left as isize;
                    if src >= 0 && (src as usize) < time {
                        let s = (bi * time + src as usize) * inputs;
                        row[j * inputs..(j + 1) * inputs].copy_from_slice(&x.data[s..s + inputs]);
                    }
                }
            }
        }
        let mut z = Vec::with_capacity(rows * filters);
        for _ in 0..rows {
            z.extend_from_slice(&self.b.data);
        }
        gemm_nt(&cols, &self.w.data, &mut z, rows, width, filters);
        let y = z.iter().map(|v| v.max(0.0)).collect();
        let out = Tensor::new(vec![batch, out_len, filters], y)?;
        Ok((out, ConvCache { input_shape: x.shape.clone(), cols, z }))
    }

    pub fn backward(&self, cache: &ConvCache, dy: &Tensor) -> (Tensor, Conv1d) {
        let (batch, time, inputs) = (cache.input_shape[0], cache.input_shape[1], cache.input_shape[2]);
        let (filters, k) = (self.w.dim(0), self.kernel());
        let out_len = dy.dim(1);
        let (left, _) = self.padding.amounts(k);
        let width = k * inputs;
        let rows = batch * out_len;
        let dz: Vec<f64> =
            dy.data.iter().zip(&cache.z).map(|(d, z)| if *z > 0.0 { *d } else { 0.0 }).collect();
        let mut grads = self.zeros_like();
        gemm_tn(&dz, &cache.cols, &mut grads.w.data, filters, rows, width);
        for row in dz.chunks(filters) {
            grads.b.data.iter_mut().zip(row).for_each(|(g, d)| *g += d);
        }
        let mut dcols = vec![0.0; rows * width];
        gemm_nn(&dz, &self.w.data, &mut dcols, rows, filters, width);
        let mut dx = Tensor::zeros(&cache.input_shape);
        for bi in 0..batch {
            for t in 0..out_len {
                let row = &dcols[(bi * out_len + t) * width..(bi * out_len + t + 1) * width];
                for j in 0..k {
                    let src = t as isize + j as isize - left as isize;
                    if src >= 0 && (src as usize) < time {
                        let s = (bi * time + src as usize) * inputs;
                        dx.data[s..s + inputs]
                            .iter_mut()
                            .zip(&row[j * inputs..(j + 1) * inputs])
                            .for_each(|(a, b)| *a += b);
                    }
                }
            }
        }
        (dx, grads)
    }
}

pub const POOL_SIZE: usize = 2;

/// Non-overlapping means over pairs of time steps; an odd last step is
/// dropped.
pub fn avgpool_forward(x: &Tensor) -> Result<Tensor> {
    expect_rank(x, 3, "avgpool")?;
    let (batch, time, dim) = (x.dim(0), x.dim(1), x.dim(2));
    if time < POOL_SIZE {
        return Err(Error::Shape(format!("pooling needs at least {POOL_SIZE} steps, got {time}")));
    }
    let out_len = time / POOL_SIZE;
    let mut y = vec![0.0; batch * out_len * dim];
    for bi in 0..batch {
        for t in 0..out_len {
            for p in 0..POOL_SIZE {
                let s = (bi * time + t * POOL_SIZE + p) * dim;
                let d = (bi * out_len + t) * dim;
                for c in 0..dim {
                    y[d + c] += x.data[s + c] / POOL_SIZE as f64;
                }
            }
        }
    }
    Tensor::new(vec![batch, out_len, dim], y)
}

pub fn avgpool_backward(input_shape: &[usize], dy: &Tensor) -> Tensor {
    let (batch, time, dim) = (input_shape[0], input_shape[1], input_shape[2]);
    let out_len = dy.dim(1);
    let mut dx = Tensor::zeros(input_shape);
    for bi in 0..batch {
        for t in 0..out_len {
            for p in 0..POOL_SIZE {
                let s = (bi * time + t * POOL_SIZE + p) * dim;
                let d = (bi * out_len + t) * dim;
                for c in 0..dim {
                    dx.data[s + c] += dy.data[d + c] / POOL_SIZE as f64;
                }
            }
        }
    }
    dx
}

/// Inverted-dropout mask: zero with probability `rate`, otherwise
/// `1 / (1 - rate)`.
pub fn dropout_mask<R: Rng + ?Sized>(shape: &[usize], rate: f64, rng: &mut R) -> Tensor {
    let keep = 1.0 / (1.0 - rate);
    let n = shape.iter().product();
    let data = (0..n).map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep }).collect();
    Tensor { shape: shape.to_vec(), data }
}

/// Returns the output and, in training mode with `rate > 0`, the mask used.
pub fn dropout_forward<R: Rng + ?Sized>(
    x: &Tensor,
    rate: f64,
    training: bool,
    rng: &mut R,
) -> Result<(Tensor, Option<Tensor>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!("dropout rate {rate} outside [0, 1)")));
    }
    if !training || rate == 0.0 {
        return Ok((x.clone(), None));
    }
    let mask = dropout_mask(&x.shape, rate, rng);
    Ok((apply_mask(x, &mask), Some(mask)))
}

/// Elementwise product; also the backward pass of dropout.
pub fn apply_mask(x: &Tensor, mask: &Tensor) -> Tensor {
    Tensor {
        shape: x.shape.clone(),
        data: x.data.iter().zip(&mask.data).map(|(a, m)| a * m).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn seq(batch: usize, time: usize, dim: usize, data: Vec<f64>) -> Tensor {
        Tensor::new(vec![batch, time, dim], data).unwrap()
    }

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect() }
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    /// Central differences of `sum(weights * f(x))` with respect to `x`.
    fn fd_check(x: &mut Vec<f64>, analytic: &[f64], mut loss: impl FnMut(&[f64]) -> f64) {
        let h = 1e-5;
        for i in 0..x.len() {
            let orig = x[i];
            x[i] = orig + h;
            let fp = loss(x);
            x[i] = orig - h;
            let fm = loss(x);
            x[i] = orig;
            let fd = (fp - fm) / (2.0 * h);
            assert!(rel_err(analytic[i], fd) <= 1e-4, "component {i}: {} vs {fd}", analytic[i]);
        }
    }

    fn weighted(y: &Tensor, w: &Tensor) -> f64 {
        y.data.iter().zip(&w.data).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn dense_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..20 {
            let layer = Dense { w: random(&[3, 4], &mut rng), b: random(&[3], &mut rng) };
            let x = random(&[5, 4], &mut rng);
            let dy = random(&[5, 3], &mut rng);
            let (dx, g) = layer.backward(&x, &dy);
            let mut xv = x.data.clone();
            fd_check(&mut xv, &dx.data, |v| {
                weighted(&layer.forward(&Tensor::new(x.shape.clone(), v.to_vec()).unwrap()).unwrap(), &dy)
            });
            let mut wv = layer.w.data.clone();
            fd_check(&mut wv, &g.w.data, |v| {
                let l = Dense { w: Tensor::new(vec![3, 4], v.to_vec()).unwrap(), b: layer.b.clone() };
                weighted(&l.forward(&x).unwrap(), &dy)
            });
            let mut bv = layer.b.data.clone();
            fd_check(&mut bv, &g.b.data, |v| {
                let l = Dense { w: layer.w.clone(), b: Tensor::new(vec![3], v.to_vec()).unwrap() };
                weighted(&l.forward(&x).unwrap(), &dy)
            });
        }
    }

    #[test]
    fn lstm_gradients_through_time() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (d, u, t, b) = (3, 4, 5, 2);
        for _ in 0..20 {
            let layer = Lstm {
                w: random(&[4 * u, d], &mut rng),
                u: random(&[4 * u, u], &mut rng),
                b: random(&[4 * u], &mut rng),
            };
            let x = random(&[b, t, d], &mut rng);
            let dh = random(&[b, t, u], &mut rng);
            let (_, cache) = layer.forward(&x).unwrap();
            let (dx, g) = layer.backward(&cache, &dh);
            let fwd = |l: &Lstm, x: &Tensor| weighted(&l.forward(x).unwrap().0, &dh);
            let mut xv = x.data.clone();
            fd_check(&mut xv, &dx.data, |v| fwd(&layer, &Tensor::new(x.shape.clone(), v.to_vec()).unwrap()));
            for which in 0..3 {
                let (mut v, an) = match which {
                    0 => (layer.w.data.clone(), g.w.data.clone()),
                    1 => (layer.u.data.clone(), g.u.data.clone()),
                    _ => (layer.b.data.clone(), g.b.data.clone()),
                };
                fd_check(&mut v, &an, |p| {
                    let mut l = layer.clone();
                    match which {
                        0 => l.w.data = p.to_vec(),
                        1 => l.u.data = p.to_vec(),
                        _ => l.b.data = p.to_vec(),
                    }
                    fwd(&l, &x)
                });
            }
        }
    }

    #[test]
    fn lstm_zero_weights_and_bounds() {
        let layer = Lstm {
            w: Tensor::zeros(&[8, 3]),
            u: Tensor::zeros(&[8, 2]),
            b: Tensor::zeros(&[8]),
        };
        let x = seq(1, 4, 3, (0..12).map(f64::from).collect());
        let (h, _) = layer.forward(&x).unwrap();
        assert!(h.data.iter().all(|v| *v == 0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let big = Lstm::init(3, 5, &mut rng);
        let x = Tensor { shape: vec![2, 6, 3], data: (0..36).map(|i| (i as f64 - 18.0) * 3.0).collect() };
        assert!(big.forward(&x).unwrap().0.data.iter().all(|v| v.abs() <= 1.0));
        assert!(Lstm::init(4, 5, &mut rng).forward(&x).is_err());
    }

    #[test]
    fn lstm_single_step_by_hand() {
        // One unit, scalar input 0.5, W = [0.1, 0.2, 0.3, 0.4], b = [0, 1, 0, 0].
        let layer = Lstm {
            w: Tensor::new(vec![4, 1], vec![0.1, 0.2, 0.3, 0.4]).unwrap(),
            u: Tensor::new(vec![4, 1], vec![0.5; 4]).unwrap(),
            b: Tensor::new(vec![4], vec![0.0, 1.0, 0.0, 0.0]).unwrap(),
        };
        let (h, _) = layer.forward(&seq(1, 1, 1, vec![0.5])).unwrap();
        let s = |v: f64| 1.0 / (1.0 + (-v).exp());
        let (i, g, o) = (s(0.05), (0.15f64).tanh(), s(0.2));
        let expect = o * (i * g).tanh();
        assert!((h.data[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn forget_bias_initialised_to_one() {
        let l = Lstm::init(2, 3, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(l.b.data, vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    fn conv(w: Vec<f64>, k: usize, padding: Padding) -> Conv1d {
        Conv1d { w: Tensor::new(vec![1, k, 1], w).unwrap(), b: Tensor::zeros(&[1]), padding }
    }

    #[test]
    fn conv_examples() {
        let x = seq(1, 4, 1, vec![1.0, 2.0, 3.0, 4.0]);
        let y = conv(vec![1.0, 1.0], 2, Padding::None).forward(&x).unwrap().0;
        assert_eq!(y.data, vec![3.0, 5.0, 7.0]);
        let y = conv(vec![1.0, 1.0], 2, Padding::Causal).forward(&x).unwrap().0;
        assert_eq!(y.data, vec![1.0, 3.0, 5.0, 7.0]);
        let y = conv(vec![1.0, 1.0], 2, Padding::Same).forward(&x).unwrap().0;
        assert_eq!(y.data, vec![3.0, 5.0, 7.0, 4.0]);
        let y = conv(vec![-1.0, 0.0], 2, Padding::None).forward(&x).unwrap().0;
        assert!(y.data.iter().all(|v| *v == 0.0));
        assert!(conv(vec![1.0; 5], 5, Padding::None).forward(&x).is_err());
        assert_eq!(conv(vec![1.0; 5], 5, Padding::Same).forward(&x).unwrap().0.dim(1), 4);
    }

    #[test]
    fn conv_gradients_all_paddings() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for padding in Padding::ALL {
            let mut done = 0;
            while done < 20 {
                let k = if rng.gen_bool(0.5) { 2 } else { 3 };
                let layer = Conv1d {
                    w: random(&[3, k, 2], &mut rng),
                    b: random(&[3], &mut rng),
                    padding,
                };
                let x = random(&[2, 6, 2], &mut rng);
                let (y, cache) = layer.forward(&x).unwrap();
                // Skip draws with a pre-activation next to the ReLU kink.
                if cache.z.iter().any(|z| z.abs() < 1e-3) {
                    continue;
                }
                let dy = random(&y.shape, &mut rng);
                let (dx, g) = layer.backward(&cache, &dy);
                let mut xv = x.data.clone();
                fd_check(&mut xv, &dx.data, |v| {
                    weighted(&layer.forward(&Tensor::new(x.shape.clone(), v.to_vec()).unwrap()).unwrap().0, &dy)
                });
                let mut wv = layer.w.data.clone();
                fd_check(&mut wv, &g.w.data, |v| {
                    let mut l = layer.clone();
                    l.w.data = v.to_vec();
                    weighted(&l.forward(&x).unwrap().0, &dy)
                });
                let mut bv = layer.b.data.clone();
                fd_check(&mut bv, &g.b.data, |v| {
                    let mut l = layer.clone();
                    l.b.data = v.to_vec();
                    weighted(&l.forward(&x).unwrap().0, &dy)
                });
                done += 1;
            }
        }
    }

    #[test]
    fn avgpool_examples_and_gradient() {
        let y = avgpool_forward(&seq(1, 4, 1, vec![1.0, 2.0, 3.0, 4.0])).unwrap();
        assert_eq!(y.data, vec![1.5, 3.5]);
        let y = avgpool_forward(&seq(1, 3, 1, vec![1.0, 2.0, 3.0])).unwrap();
        assert_eq!(y.data, vec![1.5]);
        let y = avgpool_forward(&seq(1, 6, 1, vec![2.5; 6])).unwrap();
        assert!(y.data.iter().all(|v| *v == 2.5));
        assert!(avgpool_forward(&seq(1, 1, 1, vec![1.0])).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let x = random(&[2, 7, 3], &mut rng);
            let dy = random(&[2, 3, 3], &mut rng);
            let dx = avgpool_backward(&x.shape, &dy);
            let mut xv = x.data.clone();
            fd_check(&mut xv, &dx.data, |v| {
                weighted(&avgpool_forward(&Tensor::new(x.shape.clone(), v.to_vec()).unwrap()).unwrap(), &dy)
            });
        }
    }

    #[test]
    fn dropout_behaviour() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let x = seq(1, 5, 2, (0..10).map(f64::from).collect());
        assert_eq!(dropout_forward(&x, 0.0, true, &mut rng).unwrap().0, x);
        assert_eq!(dropout_forward(&x, 0.7, false, &mut rng).unwrap().0, x);
        assert!(dropout_forward(&x, 1.0, true, &mut rng).is_err());

        let ones = Tensor { shape: vec![1_000_000], data: vec![1.0; 1_000_000] };
        let (y, _) = dropout_forward(&ones, 0.5, true, &mut rng).unwrap();
        let mean = y.data.iter().sum::<f64>() / y.len() as f64;
        assert!((mean - 1.0).abs() < 0.01, "{mean}");

        for _ in 0..20 {
            let x = random(&[2, 3, 4], &mut rng);
            let mask = dropout_mask(&x.shape, 0.3, &mut rng);
            let dy = random(&x.shape, &mut rng);
            let dx = apply_mask(&dy, &mask);
            let mut xv = x.data.clone();
            fd_check(&mut xv, &dx.data, |v| {
                weighted(&apply_mask(&Tensor::new(x.shape.clone(), v.to_vec()).unwrap(), &mask), &dy)
            });
        }
    }
}
