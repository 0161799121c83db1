//! Trainable segmentation model contract, a small two-layer convolutional
//! reference network, and the Adam optimizer.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor};

/// What the training loop needs from a model.
pub trait SegmentationModel {
    /// `[d, H, W, C_in]` to per-voxel class probabilities `[d, H, W, K]`.
    fn forward(&self, input: &Tensor) -> Result<Tensor>;

    /// Parameter gradients for an upstream gradient w.r.t. the probabilities.
    fn backward(&self, input: &Tensor, d_prob: &Tensor) -> Result<Vec<f64>>;

    fn params(&self) -> &[f64];

    fn params_mut(&mut self) -> &mut [f64];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetShape {
    pub in_channels: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl NetShape {
    pub fn param_count(&self) -> usize {
        let (c, f, k) = (self.in_channels, self.hidden, self.classes);
        9 * c * f + f + f * k + k
    }

    fn offsets(&self) -> Offsets {
        let (c, f, k) = (self.in_channels, self.hidden, self.classes);
        let b1 = 9 * c * f;
        let w2 = b1 + f;
        let b2 = w2 + f * k;
        Offsets { b1, w2, b2 }
    }
}

/// Parameter layout: conv1 weights `[F][C_in][3][3]`, conv1 bias `[F]`,
/// conv2 weights `[K][F]`, conv2 bias `[K]`.
struct Offsets {
    b1: usize,
    w2: usize,
    b2: usize,
}

/// 3×3 convolution (zero padded, per slice), ReLU, 1×1 convolution, softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct TinySegNet {
    shape: NetShape,
    params: Vec<f64>,
}

struct Activations {
    /// Pre-activation of the hidden layer, `[d, H, W, F]`.
    hidden: Vec<f64>,
    probs: Vec<f64>,
}

impl TinySegNet {
    /// Uniform initialization in `±1/sqrt(fan_in)` per layer.
    pub fn new(shape: NetShape, rng: &mut Rng) -> Result<Self> {
        let mut net = Self::zeros(shape)?;
        let o = shape.offsets();
        let b1 = 1.0 / ((9 * shape.in_channels) as f64).sqrt();
        let b2 = 1.0 / (shape.hidden as f64).sqrt();
        for (i, p) in net.params.iter_mut().enumerate() {
            let bound = if i < o.w2 { b1 } else { b2 };
            *p = rng.uniform_range(-bound, bound);
        }
        Ok(net)
    }

    pub fn zeros(shape: NetShape) -> Result<Self> {
        if shape.in_channels == 0 || shape.hidden == 0 || shape.classes == 0 {
            return Err(Error::Config(format!(
                "network dims must be positive: {shape:?}"
            )));
        }
        Ok(Self {
            shape,
            params: vec![0.0; shape.param_count()],
        })
    }

    pub fn from_params(shape: NetShape, params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(shape)?;
        if params.len() != net.params.len() {
            return Err(Error::Shape(format!(
                "{shape:?} needs {} parameters, got {}",
                net.params.len(),
                params.len()
            )));
        }
        net.params = params;
        Ok(net)
    }

    pub fn shape(&self) -> NetShape {
        self.shape
    }

    fn dims_of(&self, input: &Tensor) -> Result<(usize, usize, usize)> {
        match *input.dims() {
            [d, h, w, c] if c == self.shape.in_channels => Ok((d, h, w)),
            [_, _, _, c] => Err(Error::Shape(format!(
                "network expects {} input channels, got {c}",
                self.shape.in_channels
            ))),
            _ => Err(Error::Shape(format!(
                "input must be [d, H, W, C], got {:?}",
                input.dims()
            ))),
        }
    }

    fn w1(&self, f: usize, c: usize, ky: usize, kx: usize) -> usize {
        ((f * self.shape.in_channels + c) * 3 + ky) * 3 + kx
    }

    fn run(&self, input: &Tensor) -> Result<Activations> {
        let (d, h, w) = self.dims_of(input)?;
        let NetShape {
            in_channels: cin,
            hidden: nf,
            classes: k,
        } = self.shape;
        let o = self.shape.offsets();
        let p = &self.params;
        let x = input.values();
        let voxels = d * h * w;

        let mut hidden = vec![0.0; voxels * nf];
        for z in 0..d {
            for y in 0..h {
                for xx in 0..w {
                    let v = (z * h + y) * w + xx;
                    let out = &mut hidden[v * nf..(v + 1) * nf];
                    out.copy_from_slice(&p[o.b1..o.b1 + nf]);
                    for ky in 0..3 {
                        let Some(sy) = (y + ky).checked_sub(1).filter(|&s| s < h) else {
                            continue;
                        };
                        for kx in 0..3 {
                            let Some(sx) = (xx + kx).checked_sub(1).filter(|&s| s < w) else {
                                continue;
                            };
                            let src = ((z * h + sy) * w + sx) * cin;
                            for c in 0..cin {
                                let xv = x[src + c];
                                if xv == 0.0 {
                                    continue;
                                }
                                for (f, acc) in out.iter_mut().enumerate() {
                                    *acc += p[self.w1(f, c, ky, kx)] * xv;
                                }
                            }
                        }
                    }
                }
            }
        }

        let mut probs = vec![0.0; voxels * k];
        let mut logits = vec![0.0; k];
        for v in 0..voxels {
            let hv = &hidden[v * nf..(v + 1) * nf];
            for (j, l) in logits.iter_mut().enumerate() {
                let row = &p[o.w2 + j * nf..o.w2 + (j + 1) * nf];
                *l = p[o.b2 + j]
                    + row
                        .iter()
                        .zip(hv)
                        .map(|(wt, &a)| wt * a.max(0.0))
                        .sum::<f64>();
            }
            softmax_into(&logits, &mut probs[v * k..(v + 1) * k]);
        }
        Ok(Activations { hidden, probs })
    }
}

fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

impl SegmentationModel for TinySegNet {
    fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let (d, h, w) = self.dims_of(input)?;
        let acts = self.run(input)?;
        Tensor::new(vec![d, h, w, self.shape.classes], acts.probs)
    }

    fn backward(&self, input: &Tensor, d_prob: &Tensor) -> Result<Vec<f64>> {
        let (d, h, w) = self.dims_of(input)?;
        let NetShape {
            in_channels: cin,
            hidden: nf,
            classes: k,
        } = self.shape;
        if d_prob.dims() != [d, h, w, k] {
            return Err(Error::Shape(format!(
                "upstream gradient {:?} does not match output [{d}, {h}, {w}, {k}]",
                d_prob.dims()
            )));
        }
        let acts = self.run(input)?;
        let o = self.shape.offsets();
        let p = &self.params;
        let x = input.values();
        let g = d_prob.values();
        let mut grad = vec![0.0; p.len()];
        let mut d_logit = vec![0.0; k];
        let mut d_hidden = vec![0.0; nf];

        for z in 0..d {
            for y in 0..h {
                for xx in 0..w {
                    let v = (z * h + y) * w + xx;
                    let pv = &acts.probs[v * k..(v + 1) * k];
                    let gv = &g[v * k..(v + 1) * k];
                    let dot: f64 = pv.iter().zip(gv).map(|(a, b)| a * b).sum();
                    for j in 0..k {
                        d_logit[j] = pv[j] * (gv[j] - dot);
                    }
                    if d_logit.iter().all(|&dl| dl == 0.0) {
                        continue;
                    }
                    let hv = &acts.hidden[v * nf..(v + 1) * nf];
                    d_hidden.fill(0.0);
                    for (j, &dl) in d_logit.iter().enumerate() {
                        grad[o.b2 + j] += dl;
                        for f in 0..nf {
                            grad[o.w2 + j * nf + f] += dl * hv[f].max(0.0);
                            d_hidden[f] += dl * p[o.w2 + j * nf + f];
                        }
                    }
                    for f in 0..nf {
                        if hv[f] <= 0.0 {
                            d_hidden[f] = 0.0;
                        }
                        grad[o.b1 + f] += d_hidden[f];
                    }
                    for ky in 0..3 {
                        let Some(sy) = (y + ky).checked_sub(1).filter(|&s| s < h) else {
                            continue;
                        };
                        for kx in 0..3 {
                            let Some(sx) = (xx + kx).checked_sub(1).filter(|&s| s < w) else {
                                continue;
                            };
                            let src = ((z * h + sy) * w + sx) * cin;
                            for c in 0..cin {
                                let xv = x[src + c];
                                if xv == 0.0 {
                                    continue;
                                }
                                for (f, &dh) in d_hidden.iter().enumerate() {
                                    grad[self.w1(f, c, ky, kx)] += dh * xv;
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(grad)
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }
}

/// Arg-max label map `[D, H, W]` for a preprocessed `[D, H, W, C]` volume.
pub fn predict_labels<M: SegmentationModel>(model: &M, input: &Tensor) -> Result<Tensor> {
    crate::data::argmax_labels(&model.forward(input)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let beta_ok = |b: f64| (0.0..1.0).contains(&b);
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !beta_ok(self.beta1) || !beta_ok(self.beta2) {
            return Err(Error::Config(format!(
                "betas must lie in [0, 1), got {} and {}",
                self.beta1, self.beta2
            )));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::Config(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, param_count: usize) -> Self {
        Self {
            config,
            first_moment: vec![0.0; param_count],
            second_moment: vec![0.0; param_count],
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.second_moment
    }

    /// One bias-corrected Adam update. Parameters are left untouched on error.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first_moment.len() {
            return Err(Error::Shape(format!(
                "adam expects {} parameters, got {} params and {} grads",
                self.first_moment.len(),
                params.len(),
                grads.len()
            )));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!(
                "gradient of parameter {i} is {}",
                grads[i]
            )));
        }
        self.step += 1;
        let AdamConfig {
            learning_rate: lr,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.first_moment[i] = beta1 * self.first_moment[i] + (1.0 - beta1) * g;
            self.second_moment[i] = beta2 * self.second_moment[i] + (1.0 - beta2) * g * g;
            let m_hat = self.first_moment[i] / c1;
            let v_hat = self.second_moment[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
        }
        Ok(())
    }
}

/// Header stored ahead of the parameters in a checkpoint file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub shape: NetShape,
    pub param_count: usize,
    /// Outer iteration (or epoch) the weights were taken from.
    pub iteration: usize,
    pub mean_dice: f64,
}

/// Checkpoint layout: `u64` LE header length, JSON header, then the
/// parameters as little-endian `f64`.
pub fn encode_checkpoint(net: &TinySegNet, iteration: usize, mean_dice: f64) -> Vec<u8> {
    let header = CheckpointHeader {
        shape: net.shape,
        param_count: net.params.len(),
        iteration,
        mean_dice,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(8 + json.len() + 8 * net.params.len());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for p in &net.params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

pub fn decode_checkpoint(
    bytes: &[u8],
) -> std::result::Result<(CheckpointHeader, TinySegNet), String> {
    let len_bytes: [u8; 8] = bytes
        .get(..8)
        .and_then(|b| b.try_into().ok())
        .ok_or("file is shorter than its length prefix")?;
    let len = usize::try_from(u64::from_le_bytes(len_bytes)).map_err(|_| "header too large")?;
    let header_end = 8usize.checked_add(len).ok_or("header too large")?;
    let json = bytes.get(8..header_end).ok_or("truncated header")?;
    let header: CheckpointHeader =
        serde_json::from_slice(json).map_err(|e| format!("bad header: {e}"))?;
    if header.param_count != header.shape.param_count() {
        return Err(format!(
            "header declares {} parameters but shape {:?} needs {}",
            header.param_count,
            header.shape,
            header.shape.param_count()
        ));
    }
    let body = &bytes[header_end..];
    if body.len() != 8 * header.param_count {
        return Err(format!(
            "expected {} parameter bytes, found {}",
            8 * header.param_count,
            body.len()
        ));
    }
    let params = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let net = TinySegNet::from_params(header.shape, params).map_err(|e| e.to_string())?;
    Ok((header, net))
}

pub fn write_checkpoint(
    path: &Path,
    net: &TinySegNet,
    iteration: usize,
    mean_dice: f64,
) -> Result<()> {
    fs::write(path, encode_checkpoint(net, iteration, mean_dice)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<(CheckpointHeader, TinySegNet)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|reason| Error::format(path, reason))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_diff_grad;

    fn shape() -> NetShape {
        NetShape {
            in_channels: 3,
            hidden: 5,
            classes: 4,
        }
    }

    fn random_input(rng: &mut Rng, dims: Vec<usize>) -> Tensor {
        let n = dims.iter().product();
        Tensor::new(dims, (0..n).map(|_| rng.normal()).collect()).unwrap()
    }

    #[test]
    fn param_count_formula() {
        let s = NetShape {
            in_channels: 3,
            hidden: 16,
            classes: 4,
        };
        assert_eq!(s.param_count(), 9 * 3 * 16 + 16 + 16 * 4 + 4);
        let net = TinySegNet::new(s, &mut Rng::new(0)).unwrap();
        assert_eq!(net.params().len(), s.param_count());
        let bound = 1.0 / 27f64.sqrt();
        assert!(net.params()[..9 * 3 * 16].iter().all(|p| p.abs() <= bound));
    }

    #[test]
    fn zero_weights_give_uniform_output() {
        let net = TinySegNet::zeros(shape()).unwrap();
        let x = random_input(&mut Rng::new(1), vec![2, 3, 3, 3]);
        let out = net.forward(&x).unwrap();
        assert!(out.values().iter().all(|&p| (p - 0.25).abs() < 1e-15));
    }

    #[test]
    fn output_is_a_distribution() {
        let mut rng = Rng::new(2);
        let net = TinySegNet::new(shape(), &mut rng).unwrap();
        let x = random_input(&mut rng, vec![2, 5, 4, 3]);
        let out = net.forward(&x).unwrap();
        assert_eq!(out.dims(), &[2, 5, 4, 4]);
        for voxel in out.values().chunks(4) {
            assert!((voxel.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        assert_eq!(out, net.forward(&x).unwrap());
    }

    #[test]
    fn channel_mismatch_is_shape_error() {
        let net = TinySegNet::zeros(shape()).unwrap();
        let x = Tensor::zeros(vec![1, 2, 2, 2]).unwrap();
        assert!(matches!(net.forward(&x), Err(Error::Shape(_))));
        let x = Tensor::zeros(vec![1, 2, 2, 3]).unwrap();
        let bad = Tensor::zeros(vec![1, 2, 2, 3]).unwrap();
        assert!(matches!(net.backward(&x, &bad), Err(Error::Shape(_))));
    }

    #[test]
    fn translation_equivariance_in_interior() {
        let mut rng = Rng::new(3);
        let net = TinySegNet::new(shape(), &mut rng).unwrap();
        let (h, w) = (7, 7);
        let x = random_input(&mut rng, vec![1, h, w, 3]);
        // Shift right by one pixel.
        let mut shifted = Tensor::zeros(vec![1, h, w, 3]).unwrap();
        for y in 0..h {
            for xx in 1..w {
                for c in 0..3 {
                    shifted.values_mut()[(y * w + xx) * 3 + c] =
                        x.values()[(y * w + xx - 1) * 3 + c];
                }
            }
        }
        let a = net.forward(&x).unwrap();
        let b = net.forward(&shifted).unwrap();
        for y in 1..h - 1 {
            for xx in 2..w - 1 {
                for k in 0..4 {
                    let av = a.values()[(y * w + xx - 1) * 4 + k];
                    let bv = b.values()[(y * w + xx) * 4 + k];
                    assert!((av - bv).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = Rng::new(4);
        for _ in 0..3 {
            let net = TinySegNet::new(shape(), &mut rng).unwrap();
            let x = random_input(&mut rng, vec![2, 3, 4, 3]);
            let upstream = random_input(&mut rng, vec![2, 3, 4, 4]);
            let analytic = net.backward(&x, &upstream).unwrap();
            let params = Tensor::new(vec![net.params().len()], net.params().to_vec()).unwrap();
            let numeric = finite_diff_grad(
                |p| {
                    let probe = TinySegNet::from_params(shape(), p.values().to_vec()).unwrap();
                    let out = probe.forward(&x).unwrap();
                    out.values()
                        .iter()
                        .zip(upstream.values())
                        .map(|(a, b)| a * b)
                        .sum()
                },
                &params,
                1e-6,
            )
            .unwrap();
            for (i, (a, n)) in analytic.iter().zip(numeric.values()).enumerate() {
                let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-7);
                assert!(rel < 1e-4, "param {i}: {a} vs {n}");
            }
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let mut rng = Rng::new(5);
        let net = TinySegNet::new(shape(), &mut rng).unwrap();
        let x = random_input(&mut rng, vec![1, 3, 3, 3]);
        let g = net
            .backward(&x, &Tensor::zeros(vec![1, 3, 3, 4]).unwrap())
            .unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn relu_blocks_gradient_for_negative_preactivation() {
        let s = NetShape {
            in_channels: 1,
            hidden: 1,
            classes: 2,
        };
        let mut params = vec![0.0; s.param_count()];
        let o = s.offsets();
        params[o.b1] = -1.0;
        params[o.w2] = 1.0;
        let net = TinySegNet::from_params(s, params).unwrap();
        let x = Tensor::zeros(vec![1, 2, 2, 1]).unwrap();
        let up = Tensor::new(
            vec![1, 2, 2, 2],
            vec![1.0, -1.0, 1.0, 0.0, 0.5, 2.0, 0.0, 1.0],
        )
        .unwrap();
        let g = net.backward(&x, &up).unwrap();
        assert!(g[..o.w2].iter().all(|&v| v == 0.0));
        assert!(g[o.b2..].iter().any(|&v| v != 0.0));
    }

    #[test]
    fn adam_first_step_is_learning_rate() {
        let mut state = AdamState::new(AdamConfig::default(), 1);
        let mut w = [0.0];
        state.step(&mut w, &[1.0]).unwrap();
        assert!((w[0] + 0.01).abs() < 1e-6 * 0.01 + 1e-9, "{}", w[0]);
        assert_eq!(state.steps(), 1);
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut state = AdamState::new(AdamConfig::default(), 2);
        let mut w = [1.0, -2.0];
        state.step(&mut w, &[0.5, 0.5]).unwrap();
        let before = w;
        let m = state.first_moment()[0];
        state.step(&mut w, &[0.0, 0.0]).unwrap();
        assert!((state.first_moment()[0] - 0.9 * m).abs() < 1e-15);
        // The running moments still move the parameters; with zero moments they stay put.
        let mut fresh = AdamState::new(AdamConfig::default(), 2);
        let mut v = before;
        fresh.step(&mut v, &[0.0, 0.0]).unwrap();
        assert_eq!(v, before);
    }

    #[test]
    fn adam_descends_quadratic_bowl() {
        let mut state = AdamState::new(AdamConfig::default(), 1);
        let mut w = [1.0];
        for _ in 0..200 {
            let g = [2.0 * w[0]];
            state.step(&mut w, &g).unwrap();
        }
        assert!(w[0].abs() < 0.1, "{}", w[0]);
    }

    #[test]
    fn adam_rejects_nan_gradient() {
        let mut state = AdamState::new(AdamConfig::default(), 3);
        let mut w = [0.0; 3];
        let err = state.step(&mut w, &[0.0, f64::NAN, 0.0]).unwrap_err();
        assert!(err.to_string().contains("parameter 1"));
        assert_eq!(state.steps(), 0);
    }

    #[test]
    fn checkpoint_roundtrip_and_corruption() {
        let net = TinySegNet::new(shape(), &mut Rng::new(9)).unwrap();
        let bytes = encode_checkpoint(&net, 3, 0.5);
        let (header, back) = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back, net);
        assert_eq!(header.iteration, 3);
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_checkpoint(&bytes[..4]).is_err());
    }
}
