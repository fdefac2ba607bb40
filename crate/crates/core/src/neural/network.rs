use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    apply_mask, avgpool_backward, avgpool_forward, dropout_forward, Conv1d, ConvCache, Dense, Lstm,
    LstmCache, Padding, POOL_SIZE,
};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::weekly::FEATURES;

pub const FAMILY_A_WINDOW: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    /// Stacked LSTM layers.
    A,
    /// Convolution, pooling, convolution, then stacked LSTM layers.
    B,
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(Family::A),
            "B" | "b" => Ok(Family::B),
            other => Err(Error::InvalidArgument(format!("unknown family `{other}`"))),
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Family::A => "A",
            Family::B => "B",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub filters: usize,
    pub kernel: usize,
    pub pad1: Padding,
    pub pad2: Padding,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub family: Family,
    pub layers: usize,
    pub units: usize,
    pub dropout: f64,
    pub learning_rate: f64,
    pub conv: Option<ConvSpec>,
    /// Input window length in weeks.
    pub window: usize,
    pub input_dim: usize,
}

impl NetworkSpec {
    pub fn family_a(layers: usize, units: usize, dropout: f64, learning_rate: f64) -> Self {
        Self {
            family: Family::A,
            layers,
            units,
            dropout,
            learning_rate,
            conv: None,
            window: FAMILY_A_WINDOW,
            input_dim: FEATURES,
        }
    }

    pub fn family_b(
        layers: usize,
        units: usize,
        dropout: f64,
        learning_rate: f64,
        conv: ConvSpec,
        window: usize,
    ) -> Self {
        Self {
            family: Family::B,
            layers,
            units,
            dropout,
            learning_rate,
            conv: Some(conv),
            window,
            input_dim: FEATURES,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.layers == 0 || self.units == 0 || self.window == 0 || self.input_dim == 0 {
            return bad(format!("degenerate network {self:?}"));
        }
        if !(0.0..1.0).contains(&self.dropout) || !(self.learning_rate >= 0.0) {
            return bad(format!("dropout or learning rate out of range in {self:?}"));
        }
        match (self.family, self.conv) {
            (Family::A, None) if self.window == FAMILY_A_WINDOW => {}
            (Family::A, _) => return bad(format!("family A takes no convolutions and n = {FAMILY_A_WINDOW}")),
            (Family::B, None) => return bad("family B needs convolution settings".into()),
            (Family::B, Some(c)) if c.filters == 0 || c.kernel == 0 => {
                return bad(format!("degenerate convolution {c:?}"))
            }
            (Family::B, Some(_)) => {}
        }
        if self.lstm_input_len().is_none() {
            return Err(Error::Shape(format!("{} leaves an empty sequence", self.key())));
        }
        Ok(())
    }

    /// Sequence length reaching the first LSTM layer, or `None` when some
    /// intermediate length drops below one.
    pub fn lstm_input_len(&self) -> Option<usize> {
        match self.conv {
            None => Some(self.window),
            Some(c) => {
                let t1 = c.pad1.output_len(self.window, c.kernel)?;
                let t2 = Some(t1 / POOL_SIZE).filter(|&v| v >= 1)?;
                c.pad2.output_len(t2, c.kernel)
            }
        }
    }

    /// Compact label, unique within a grid.
    pub fn key(&self) -> String {
        let mut s = format!(
            "{}:l={},nu={},r={},a={}",
            self.family, self.layers, self.units, self.dropout, self.learning_rate
        );
        if let Some(c) = self.conv {
            s.push_str(&format!(
                ",f={},ks={},pad1={},pad2={}",
                c.filters,
                c.kernel,
                c.pad1.as_str(),
                c.pad2.as_str()
            ));
        }
        s.push_str(&format!(",n={}", self.window));
        s
    }

    pub fn num_params(&self) -> usize {
        let mut total = 0;
        let mut width = self.input_dim;
        if let Some(c) = self.conv {
            total += c.filters * c.kernel * width + c.filters;
            total += c.filters * c.kernel * c.filters + c.filters;
            width = c.filters;
        }
        for _ in 0..self.layers {
            total += 4 * self.units * (width + self.units + 1);
            width = self.units;
        }
        total + self.units + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub conv1: Option<Conv1d>,
    pub conv2: Option<Conv1d>,
    pub lstm: Vec<Lstm>,
    pub dense: Dense,
}

impl NetworkParams {
    pub fn init<R: Rng + ?Sized>(spec: &NetworkSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut width = spec.input_dim;
        let (conv1, conv2) = match spec.conv {
            Some(c) => {
                let a = Conv1d::init(width, c.filters, c.kernel, c.pad1, rng);
                let b = Conv1d::init(c.filters, c.filters, c.kernel, c.pad2, rng);
                width = c.filters;
                (Some(a), Some(b))
            }
            None => (None, None),
        };
        let mut lstm = Vec::with_capacity(spec.layers);
        for _ in 0..spec.layers {
            lstm.push(Lstm::init(width, spec.units, rng));
            width = spec.units;
        }
        let dense = Dense::init(width, 1, rng);
        Ok(Self { conv1, conv2, lstm, dense })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            conv1: self.conv1.as_ref().map(Conv1d::zeros_like),
            conv2: self.conv2.as_ref().map(Conv1d::zeros_like),
            lstm: self.lstm.iter().map(Lstm::zeros_like).collect(),
            dense: self.dense.zeros_like(),
        }
    }

    /// Every weight tensor in a fixed order, with a descriptive name.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (name, c) in [("conv1", &self.conv1), ("conv2", &self.conv2)] {
            if let Some(c) = c {
                out.push((format!("{name}.w"), &c.w));
                out.push((format!("{name}.b"), &c.b));
            }
        }
        for (i, l) in self.lstm.iter().enumerate() {
            out.push((format!("lstm{i}.w"), &l.w));
            out.push((format!("lstm{i}.u"), &l.u));
            out.push((format!("lstm{i}.b"), &l.b));
        }
        out.push(("dense.w".into(), &self.dense.w));
        out.push(("dense.b".into(), &self.dense.b));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for c in [&mut self.conv1, &mut self.conv2].into_iter().flatten() {
            out.push(&mut c.w);
            out.push(&mut c.b);
        }
        for l in &mut self.lstm {
            out.push(&mut l.w);
            out.push(&mut l.u);
            out.push(&mut l.b);
        }
        out.push(&mut self.dense.w);
        out.push(&mut self.dense.b);
        out
    }

    pub fn num_params(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// All weights concatenated in [`NetworkParams::named_tensors`] order.
    pub fn flatten(&self) -> Vec<f64> {
        self.named_tensors().iter().flat_map(|(_, t)| t.data.iter().copied()).collect()
    }

    /// Overwrites the weights from a flat vector produced by `flatten`.
    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "{} weights for a network of {}",
                flat.len(),
                self.num_params()
            )));
        }
        let mut pos = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.data.copy_from_slice(&flat[pos..pos + n]);
            pos += n;
        }
        Ok(())
    }
}

struct Trace {
    conv1: Option<ConvCache>,
    pool_input: Vec<usize>,
    conv2: Option<ConvCache>,
    lstm: Vec<LstmCache>,
    masks: Vec<Option<Tensor>>,
    seq_shape: Vec<usize>,
    last: Tensor,
}

fn run<R: Rng + ?Sized>(
    spec: &NetworkSpec,
    params: &NetworkParams,
    x: &Tensor,
    training: bool,
    rng: &mut R,
) -> Result<(Tensor, Trace)> {
    if x.shape.len() != 3 || x.dim(1) != spec.window || x.dim(2) != spec.input_dim {
        return Err(Error::Shape(format!(
            "network expects [batch, {}, {}], got {:?}",
            spec.window, spec.input_dim, x.shape
        )));
    }
    let mut h = x.clone();
    let mut conv1 = None;
    let mut conv2 = None;
    let mut pool_input = Vec::new();
    if let (Some(c1), Some(c2)) = (&params.conv1, &params.conv2) {
        let (y, cache) = c1.forward(&h)?;
        conv1 = Some(cache);
        pool_input = y.shape.clone();
        let pooled = avgpool_forward(&y)?;
        let (y, cache) = c2.forward(&pooled)?;
        conv2 = Some(cache);
        h = y;
    }
    let mut lstm = Vec::with_capacity(params.lstm.len());
    let mut masks = Vec::with_capacity(params.lstm.len());
    for layer in &params.lstm {
        let (y, cache) = layer.forward(&h)?;
        lstm.push(cache);
        let (y, mask) = dropout_forward(&y, spec.dropout, training, rng)?;
        masks.push(mask);
        h = y;
    }
    let (batch, time, units) = (h.dim(0), h.dim(1), h.dim(2));
    let mut last = Vec::with_capacity(batch * units);
    for b in 0..batch {
        let s = (b * time + time - 1) * units;
        last.extend_from_slice(&h.data[s..s + units]);
    }
    let last = Tensor::new(vec![batch, units], last)?;
    let y = params.dense.forward(&last)?;
    let trace = Trace {
        conv1,
        pool_input,
        conv2,
        lstm,
        masks,
        seq_shape: h.shape.clone(),
        last,
    };
    Ok((y, trace))
}

/// One prediction per sample of a `[batch, window, input_dim]` batch. In
/// training mode dropout masks are drawn from `rng`.
pub fn forward<R: Rng + ?Sized>(
    spec: &NetworkSpec,
    params: &NetworkParams,
    x: &Tensor,
    training: bool,
    rng: &mut R,
) -> Result<Vec<f64>> {
    Ok(run(spec, params, x, training, rng)?.0.data)
}

/// Mean squared error over the batch and its gradient for every weight, in
/// training mode.
pub fn loss_and_grads<R: Rng + ?Sized>(
    spec: &NetworkSpec,
    params: &NetworkParams,
    x: &Tensor,
    targets: &[f64],
    rng: &mut R,
) -> Result<(f64, NetworkParams)> {
    let (y, trace) = run(spec, params, x, true, rng)?;
    if targets.len() != y.len() {
        return Err(Error::Shape(format!("{} targets for {} samples", targets.len(), y.len())));
    }
    let batch = y.len() as f64;
    let mse = y.data.iter().zip(targets).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / batch;
    if !mse.is_finite() {
        return Err(Error::NonFinite("training loss".into()));
    }
    let dy = Tensor {
        shape: y.shape.clone(),
        data: y.data.iter().zip(targets).map(|(a, b)| 2.0 * (a - b) / batch).collect(),
    };

    let mut grads = params.zeros_like();
    let (dlast, gd) = params.dense.backward(&trace.last, &dy);
    grads.dense = gd;
    let (nb, time, units) = (trace.seq_shape[0], trace.seq_shape[1], trace.seq_shape[2]);
    let mut dh = Tensor::zeros(&trace.seq_shape);
    for b in 0..nb {
        let s = (b * time + time - 1) * units;
        dh.data[s..s + units].copy_from_slice(&dlast.data[b * units..(b + 1) * units]);
    }
    for i in (0..params.lstm.len()).rev() {
        if let Some(mask) = &trace.masks[i] {
            dh = apply_mask(&dh, mask);
        }
        let (dx, g) = params.lstm[i].backward(&trace.lstm[i], &dh);
        grads.lstm[i] = g;
        dh = dx;
    }
    if let (Some(c1), Some(c2), Some(k1), Some(k2)) =
        (&params.conv1, &params.conv2, &trace.conv1, &trace.conv2)
    {
        let (dpool, g2) = c2.backward(k2, &dh);
        let dconv = avgpool_backward(&trace.pool_input, &dpool);
        let (_, g1) = c1.backward(k1, &dconv);
        grads.conv1 = Some(g1);
        grads.conv2 = Some(g2);
    }
    Ok((mse, grads))
}
