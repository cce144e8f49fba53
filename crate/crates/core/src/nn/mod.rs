//! Small fully-connected networks: ReLU trunk, typed output heads, exact
//! backpropagation and momentum SGD with plateau-driven learning-rate drops.
//!
//! Parameters live in one flat vector. Layer `l` stores its weights input-major
//! (`w[i * out + j]` connects input `i` to unit `j`) followed by its biases, so
//! zero inputs can be skipped row by row. Sparse rasters and post-ReLU
//! activations make this the dominant saving.

mod file;
mod train;

use std::fmt;
use std::str::FromStr;

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

pub use file::{read_model, write_model, Model, MODEL_MAGIC};
pub use train::{fit, sgd_step, EpochRecord, TrainConfig, TrainingHistory};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadKind {
    Tanh,
    Sigmoid,
    Linear,
    Softmax,
}

impl HeadKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            HeadKind::Tanh => "tanh",
            HeadKind::Sigmoid => "sigmoid",
            HeadKind::Linear => "linear",
            HeadKind::Softmax => "softmax",
        }
    }
}

impl FromStr for HeadKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<HeadKind> {
        Ok(match s {
            "tanh" => HeadKind::Tanh,
            "sigmoid" => HeadKind::Sigmoid,
            "linear" => HeadKind::Linear,
            "softmax" => HeadKind::Softmax,
            other => return Err(Error::NetSpec(format!("unknown head kind {other:?}"))),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Head {
    pub kind: HeadKind,
    pub width: usize,
}

impl Head {
    pub fn new(kind: HeadKind, width: usize) -> Head {
        Head { kind, width }
    }
}

/// Layer widths, output heads and the initialisation seed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetSpec {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub heads: Vec<Head>,
    pub seed: u64,
}

impl NetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input == 0 {
            return Err(Error::NetSpec("input width must be at least 1".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::NetSpec("hidden widths must be at least 1".into()));
        }
        if self.heads.is_empty() {
            return Err(Error::NetSpec("at least one head is required".into()));
        }
        for h in &self.heads {
            if h.width == 0 {
                return Err(Error::NetSpec("head widths must be at least 1".into()));
            }
            if h.kind == HeadKind::Softmax && h.width < 2 {
                return Err(Error::NetSpec("softmax heads need at least two classes".into()));
            }
        }
        Ok(())
    }

    pub fn output_width(&self) -> usize {
        self.heads.iter().map(|h| h.width).sum()
    }

    /// Input, hidden and output widths in order.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(self.input);
        w.extend_from_slice(&self.hidden);
        w.push(self.output_width());
        w
    }

    /// Offset of each layer's weight block and bias block.
    pub fn layer_offsets(&self) -> Vec<LayerOffsets> {
        let widths = self.widths();
        let mut at = 0;
        widths
            .windows(2)
            .map(|w| {
                let o = LayerOffsets { weights: at, biases: at + w[0] * w[1], inputs: w[0], outputs: w[1] };
                at += w[0] * w[1] + w[1];
                o
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.widths().windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Start of head `k` within the output vector.
    pub fn head_offset(&self, k: usize) -> usize {
        self.heads[..k].iter().map(|h| h.width).sum()
    }
}

impl fmt::Display for NetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let hidden: Vec<String> = self.hidden.iter().map(|h| h.to_string()).collect();
        let heads: Vec<String> = self.heads.iter().map(|h| format!("{}:{}", h.kind.as_str(), h.width)).collect();
        writeln!(f, "input = {}", self.input)?;
        writeln!(f, "hidden = {}", hidden.join(","))?;
        writeln!(f, "heads = {}", heads.join(","))?;
        writeln!(f, "seed = {}", self.seed)
    }
}

impl FromStr for NetSpec {
    type Err = Error;

    /// Parses the `key = value` lines written by `Display`; unknown keys are rejected.
    fn from_str(text: &str) -> Result<NetSpec> {
        let bad = |m: String| Error::NetSpec(m);
        let (mut input, mut hidden, mut heads, mut seed) = (None, None, None, None);
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("expected key = value, got {line:?}")))?;
            let (k, v) = (k.trim(), v.trim());
            match k {
                "input" => input = Some(v.parse::<usize>().map_err(|e| bad(format!("input: {e}")))?),
                "hidden" => {
                    let h: std::result::Result<Vec<usize>, _> =
                        v.split(',').filter(|s| !s.trim().is_empty()).map(|s| s.trim().parse()).collect();
                    hidden = Some(h.map_err(|e| bad(format!("hidden: {e}")))?);
                }
                "heads" => {
                    let mut hs = Vec::new();
                    for part in v.split(',') {
                        let (kind, width) =
                            part.trim().split_once(':').ok_or_else(|| bad(format!("head {part:?}: expected kind:width")))?;
                        let width = width.parse().map_err(|e| bad(format!("head {part:?}: {e}")))?;
                        hs.push(Head::new(kind.parse()?, width));
                    }
                    heads = Some(hs);
                }
                "seed" => seed = Some(v.parse::<u64>().map_err(|e| bad(format!("seed: {e}")))?),
                other => return Err(bad(format!("unknown key {other:?}"))),
            }
        }
        let spec = NetSpec {
            input: input.ok_or_else(|| bad("missing input".into()))?,
            hidden: hidden.ok_or_else(|| bad("missing hidden".into()))?,
            heads: heads.ok_or_else(|| bad("missing heads".into()))?,
            seed: seed.ok_or_else(|| bad("missing seed".into()))?,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerOffsets {
    pub weights: usize,
    pub biases: usize,
    pub inputs: usize,
    pub outputs: usize,
}

/// A network: its spec and the flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub spec: NetSpec,
    pub params: Vec<f64>,
}

/// Result of a forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Forward {
    /// Head outputs after their nonlinearities, concatenated in head order.
    pub outputs: Vec<f64>,
    /// Output pre-activations.
    pub logits: Vec<f64>,
    /// Post-ReLU activations of each hidden layer.
    pub hidden: Vec<Vec<f64>>,
}

impl Forward {
    /// Activations of the last hidden layer (the input itself for a net without hidden layers).
    pub fn features(&self) -> &[f64] {
        self.hidden.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// `y[j] = b[j] + sum_i x[i] w[i][j]`, skipping zero inputs.
fn affine<T: Copy + Into<f64>>(params: &[f64], o: &LayerOffsets, x: &[T], y: &mut Vec<f64>) {
    y.clear();
    y.extend_from_slice(&params[o.biases..o.biases + o.outputs]);
    for (i, &xi) in x.iter().enumerate() {
        let xi: f64 = xi.into();
        if xi == 0.0 {
            continue;
        }
        let row = &params[o.weights + i * o.outputs..o.weights + (i + 1) * o.outputs];
        for (yj, wij) in y.iter_mut().zip(row) {
            *yj += xi * wij;
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn apply_heads(heads: &[Head], logits: &[f64], out: &mut [f64]) {
    let mut at = 0;
    for h in heads {
        let (z, y) = (&logits[at..at + h.width], &mut out[at..at + h.width]);
        match h.kind {
            HeadKind::Tanh => z.iter().zip(y).for_each(|(z, y)| *y = z.tanh()),
            HeadKind::Sigmoid => z.iter().zip(y).for_each(|(z, y)| *y = sigmoid(*z)),
            HeadKind::Linear => y.copy_from_slice(z),
            HeadKind::Softmax => {
                let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for (z, y) in z.iter().zip(y.iter_mut()) {
                    *y = (z - m).exp();
                    sum += *y;
                }
                y.iter_mut().for_each(|y| *y /= sum);
            }
        }
        at += h.width;
    }
}

impl Network {
    /// Glorot-uniform weights, zero biases, drawn from the spec's seed.
    pub fn init(spec: NetSpec) -> Result<Network> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut params = vec![0.0; spec.param_count()];
        for o in spec.layer_offsets() {
            let limit = (6.0 / (o.inputs + o.outputs) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit).expect("finite bound");
            for w in &mut params[o.weights..o.biases] {
                *w = dist.sample(&mut rng);
            }
        }
        Ok(Network { spec, params })
    }

    pub fn zeros(spec: NetSpec) -> Result<Network> {
        spec.validate()?;
        let n = spec.param_count();
        Ok(Network { spec, params: vec![0.0; n] })
    }

    pub fn from_params(spec: NetSpec, params: Vec<f64>) -> Result<Network> {
        spec.validate()?;
        if params.len() != spec.param_count() {
            return Err(Error::Dimension { expected: spec.param_count(), got: params.len() });
        }
        if let Some(i) = params.iter().position(|p| !p.is_finite()) {
            return Err(Error::NetSpec(format!("parameter {i} is not finite")));
        }
        Ok(Network { spec, params })
    }

    pub fn forward<T: Copy + Into<f64>>(&self, input: &[T]) -> Result<Forward> {
        if input.len() != self.spec.input {
            return Err(Error::Dimension { expected: self.spec.input, got: input.len() });
        }
        let offsets = self.spec.layer_offsets();
        let (last, trunk) = offsets.split_last().expect("at least one layer");
        let mut hidden: Vec<Vec<f64>> = Vec::with_capacity(trunk.len());
        for o in trunk {
            let mut y = Vec::with_capacity(o.outputs);
            match hidden.last() {
                Some(prev) => affine(&self.params, o, prev, &mut y),
                None => affine(&self.params, o, input, &mut y),
            }
            y.iter_mut().for_each(|v| *v = v.max(0.0));
            hidden.push(y);
        }
        let mut logits = Vec::with_capacity(last.outputs);
        match hidden.last() {
            Some(prev) => affine(&self.params, last, prev, &mut logits),
            None => affine(&self.params, last, input, &mut logits),
        }
        let mut outputs = vec![0.0; logits.len()];
        apply_heads(&self.spec.heads, &logits, &mut outputs);
        Ok(Forward { outputs, logits, hidden })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    /// `(y - t)^2` summed over the head's units, on the head output.
    SquaredError,
    /// Bernoulli negative log-likelihood; sigmoid heads only.
    BinaryCrossEntropy,
    /// Categorical negative log-likelihood against a target distribution; softmax heads only.
    CrossEntropy,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossTerm {
    pub head: usize,
    pub kind: LossKind,
    pub weight: f64,
}

/// A weighted sum of per-head losses. The batch loss is the mean over examples.
#[derive(Clone, Debug, PartialEq)]
pub struct LossSpec {
    pub terms: Vec<LossTerm>,
}

impl LossSpec {
    pub fn check(&self, spec: &NetSpec) -> Result<()> {
        for t in &self.terms {
            let head = spec.heads.get(t.head).ok_or_else(|| Error::NetSpec(format!("loss refers to head {}", t.head)))?;
            let ok = match t.kind {
                LossKind::SquaredError => head.kind != HeadKind::Softmax,
                LossKind::BinaryCrossEntropy => head.kind == HeadKind::Sigmoid,
                LossKind::CrossEntropy => head.kind == HeadKind::Softmax,
            };
            if !ok {
                return Err(Error::NetSpec(format!("{:?} loss on a {} head", t.kind, head.kind.as_str())));
            }
            if !(t.weight.is_finite() && t.weight >= 0.0) {
                return Err(Error::NetSpec(format!("loss weight {} on head {}", t.weight, t.head)));
            }
        }
        Ok(())
    }

    /// Loss of one example and its gradient with respect to the output pre-activations.
    fn example(&self, spec: &NetSpec, fwd: &Forward, target: &[f64], dlogits: &mut [f64]) -> f64 {
        dlogits.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        for t in &self.terms {
            let head = spec.heads[t.head];
            let at = spec.head_offset(t.head);
            let range = at..at + head.width;
            let (y, z, tg) = (&fwd.outputs[range.clone()], &fwd.logits[range.clone()], &target[range.clone()]);
            let g = &mut dlogits[range];
            match t.kind {
                LossKind::SquaredError => {
                    for k in 0..head.width {
                        let e = y[k] - tg[k];
                        loss += t.weight * e * e;
                        let dy_dz = match head.kind {
                            HeadKind::Tanh => 1.0 - y[k] * y[k],
                            HeadKind::Sigmoid => y[k] * (1.0 - y[k]),
                            _ => 1.0,
                        };
                        g[k] += t.weight * 2.0 * e * dy_dz;
                    }
                }
                LossKind::BinaryCrossEntropy => {
                    for k in 0..head.width {
                        // softplus(z) - t z, computed stably
                        let sp = z[k].max(0.0) + (-z[k].abs()).exp().ln_1p();
                        loss += t.weight * (sp - tg[k] * z[k]);
                        g[k] += t.weight * (y[k] - tg[k]);
                    }
                }
                LossKind::CrossEntropy => {
                    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let lse = m + z.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
                    let mass: f64 = tg.iter().sum();
                    for k in 0..head.width {
                        loss += t.weight * tg[k] * (lse - z[k]);
                        g[k] += t.weight * (mass * y[k] - tg[k]);
                    }
                }
            }
        }
        loss
    }
}

/// Training examples: row-major inputs and targets laid out like the output vector.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Samples {
    pub input_dim: usize,
    pub target_dim: usize,
    pub inputs: Vec<f32>,
    pub targets: Vec<f64>,
}

impl Samples {
    pub fn new(input_dim: usize, target_dim: usize) -> Samples {
        Samples { input_dim, target_dim, inputs: Vec::new(), targets: Vec::new() }
    }

    pub fn push(&mut self, input: &[f32], target: &[f64]) -> Result<()> {
        if input.len() != self.input_dim {
            return Err(Error::Dimension { expected: self.input_dim, got: input.len() });
        }
        if target.len() != self.target_dim {
            return Err(Error::Dimension { expected: self.target_dim, got: target.len() });
        }
        self.inputs.extend_from_slice(input);
        self.targets.extend_from_slice(target);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.inputs.len().checked_div(self.input_dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input(&self, i: usize) -> &[f32] {
        &self.inputs[i * self.input_dim..(i + 1) * self.input_dim]
    }

    pub fn target(&self, i: usize) -> &[f64] {
        &self.targets[i * self.target_dim..(i + 1) * self.target_dim]
    }
}

fn check_samples(net: &Network, samples: &Samples) -> Result<()> {
    if samples.input_dim != net.spec.input {
        return Err(Error::Dimension { expected: net.spec.input, got: samples.input_dim });
    }
    if samples.target_dim != net.spec.output_width() {
        return Err(Error::Dimension { expected: net.spec.output_width(), got: samples.target_dim });
    }
    Ok(())
}

/// Mean loss over `indices` and its exact gradient with respect to every parameter.
pub fn backward(net: &Network, samples: &Samples, indices: &[usize], loss: &LossSpec) -> Result<(f64, Vec<f64>)> {
    check_samples(net, samples)?;
    loss.check(&net.spec)?;
    if indices.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let offsets = net.spec.layer_offsets();
    let mut grad = vec![0.0; net.params.len()];
    let mut total = 0.0;
    let mut delta = vec![0.0; net.spec.output_width()];
    let mut prev_delta = Vec::new();
    for &i in indices {
        let x = samples.input(i);
        let fwd = net.forward(x)?;
        let l = loss.example(&net.spec, &fwd, samples.target(i), &mut delta);
        if !l.is_finite() {
            return Err(Error::NonFiniteLoss { index: i });
        }
        total += l;
        let mut d = delta.clone();
        for (layer, o) in offsets.iter().enumerate().rev() {
            for (gb, dj) in grad[o.biases..o.biases + o.outputs].iter_mut().zip(&d) {
                *gb += dj;
            }
            let input: Vec<f64> = if layer == 0 {
                x.iter().map(|&v| f64::from(v)).collect()
            } else {
                fwd.hidden[layer - 1].clone()
            };
            if layer > 0 {
                prev_delta.clear();
                prev_delta.resize(o.inputs, 0.0);
            }
            for (i, &a) in input.iter().enumerate() {
                if a == 0.0 {
                    // zero input: no weight gradient, and for hidden layers the ReLU is inactive
                    continue;
                }
                let row = o.weights + i * o.outputs;
                for (j, dj) in d.iter().enumerate() {
                    grad[row + j] += a * dj;
                }
                if layer > 0 {
                    let w = &net.params[row..row + o.outputs];
                    prev_delta[i] = w.iter().zip(&d).map(|(w, d)| w * d).sum();
                }
            }
            if layer > 0 {
                std::mem::swap(&mut d, &mut prev_delta);
            }
        }
    }
    let n = indices.len() as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    Ok((total / n, grad))
}

/// Mean loss over all samples.
pub fn mean_loss(net: &Network, samples: &Samples, loss: &LossSpec) -> Result<f64> {
    check_samples(net, samples)?;
    loss.check(&net.spec)?;
    if samples.is_empty() {
        return Err(Error::Empty("samples"));
    }
    let mut scratch = vec![0.0; net.spec.output_width()];
    let mut total = 0.0;
    for i in 0..samples.len() {
        let fwd = net.forward(samples.input(i))?;
        let l = loss.example(&net.spec, &fwd, samples.target(i), &mut scratch);
        if !l.is_finite() {
            return Err(Error::NonFiniteLoss { index: i });
        }
        total += l;
    }
    Ok(total / samples.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> NetSpec {
        NetSpec {
            input: 3,
            hidden: vec![4, 3],
            heads: vec![Head::new(HeadKind::Tanh, 1), Head::new(HeadKind::Sigmoid, 1), Head::new(HeadKind::Linear, 2)],
            seed: 11,
        }
    }

    #[test]
    fn zero_params_give_neutral_outputs() {
        let net = Network::zeros(small()).unwrap();
        let f = net.forward(&[0.3f32, -1.0, 2.0]).unwrap();
        assert_eq!(f.outputs, vec![0.0, 0.5, 0.0, 0.0]);
    }

    #[test]
    fn single_unit_is_tanh_of_product() {
        let spec = NetSpec { input: 1, hidden: vec![], heads: vec![Head::new(HeadKind::Tanh, 1)], seed: 0 };
        let net = Network::from_params(spec, vec![0.7, 0.0]).unwrap();
        let f = net.forward(&[0.5f64]).unwrap();
        assert!((f.outputs[0] - (0.35f64).tanh()).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch() {
        let net = Network::init(small()).unwrap();
        assert!(matches!(net.forward(&[1.0f32]), Err(Error::Dimension { expected: 3, got: 1 })));
    }

    #[test]
    fn spec_text_round_trip() {
        let s = small();
        assert_eq!(s.to_string().parse::<NetSpec>().unwrap(), s);
        assert!("input = 3\nhidden = 2\nheads = relu:1\nseed = 1".parse::<NetSpec>().is_err());
    }

    #[test]
    fn param_layout() {
        let s = small();
        assert_eq!(s.param_count(), 3 * 4 + 4 + 4 * 3 + 3 + 3 * 4 + 4);
        let o = s.layer_offsets();
        assert_eq!(o[1].weights, 16);
        assert_eq!(o[2].biases, s.param_count() - 4);
    }

    #[test]
    fn softmax_sums_to_one() {
        let spec = NetSpec { input: 2, hidden: vec![5], heads: vec![Head::new(HeadKind::Softmax, 3)], seed: 3 };
        let net = Network::init(spec).unwrap();
        let f = net.forward(&[0.4f32, -2.0]).unwrap();
        assert!((f.outputs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_on_tanh_head_rejected() {
        let loss = LossSpec { terms: vec![LossTerm { head: 0, kind: LossKind::BinaryCrossEntropy, weight: 1.0 }] };
        assert!(loss.check(&small()).is_err());
    }
}
