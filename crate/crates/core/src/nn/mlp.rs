use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    /// Linear, LayerNorm, ReLU, Linear.
    Shallow,
    /// Three LayerNorm/ReLU blocks then a linear head; the third block also
    /// sees the raw input.
    Deep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct LayerSpec {
    in_dim: usize,
    out_dim: usize,
    /// LayerNorm followed by ReLU after the affine map.
    norm: bool,
    /// The network input is concatenated after the previous activation.
    skip_input: bool,
}

#[derive(Debug, Clone, Copy)]
struct Offsets {
    weight: usize,
    bias: usize,
    gain: usize,
    shift: usize,
}

/// Fully connected network with parameters in one flat buffer.
///
/// Tensor order, per layer: weight (out x in, row-major), bias, and for
/// normalized layers the LayerNorm gain then shift.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    arch: Arch,
    in_dim: usize,
    hidden: usize,
    out_dim: usize,
    layers: Vec<LayerSpec>,
    params: Vec<f64>,
}

/// Per-sample activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    inputs: Vec<Vec<f64>>,
    affine: Vec<Vec<f64>>,
    normalized: Vec<Vec<f64>>,
    inv_std: Vec<f64>,
    pub output: Vec<f64>,
}

fn layer_specs(arch: Arch, in_dim: usize, hidden: usize, out_dim: usize) -> Vec<LayerSpec> {
    let dense = |i, o, norm, skip| LayerSpec {
        in_dim: i,
        out_dim: o,
        norm,
        skip_input: skip,
    };
    match arch {
        Arch::Shallow => vec![
            dense(in_dim, hidden, true, false),
            dense(hidden, out_dim, false, false),
        ],
        Arch::Deep => vec![
            dense(in_dim, hidden, true, false),
            dense(hidden, hidden, true, false),
            dense(hidden + in_dim, hidden, true, true),
            dense(hidden, out_dim, false, false),
        ],
    }
}

fn layer_size(l: &LayerSpec) -> usize {
    l.in_dim * l.out_dim + l.out_dim + if l.norm { 2 * l.out_dim } else { 0 }
}

impl Mlp {
    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases, unit
    /// LayerNorm gain, zero shift.
    pub fn new(
        arch: Arch,
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let layers = layer_specs(arch, in_dim, hidden, out_dim);
        let mut params = Vec::with_capacity(layers.iter().map(layer_size).sum());
        for l in &layers {
            let bound = 1.0 / (l.in_dim as f64).sqrt();
            for _ in 0..l.in_dim * l.out_dim + l.out_dim {
                params.push(rng.random_range(-bound..bound));
            }
            if l.norm {
                params.extend(std::iter::repeat_n(1.0, l.out_dim));
                params.extend(std::iter::repeat_n(0.0, l.out_dim));
            }
        }
        Mlp {
            arch,
            in_dim,
            hidden,
            out_dim,
            layers,
            params,
        }
    }

    pub fn from_params(
        arch: Arch,
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
        params: Vec<f64>,
    ) -> Result<Self> {
        let layers = layer_specs(arch, in_dim, hidden, out_dim);
        let expected: usize = layers.iter().map(layer_size).sum();
        if params.len() != expected {
            return Err(Error::dims(format!(
                "network expects {expected} parameters, got {}",
                params.len()
            )));
        }
        Ok(Mlp {
            arch,
            in_dim,
            hidden,
            out_dim,
            layers,
            params,
        })
    }

    pub fn arch(&self) -> Arch {
        self.arch
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// Zero the weights and bias of the output layer.
    pub fn zero_output_layer(&mut self) {
        let last = self.layers.len() - 1;
        let o = self.offsets(last);
        let l = self.layers[last];
        self.params[o.weight..o.bias + l.out_dim].fill(0.0);
    }

    fn offsets(&self, layer: usize) -> Offsets {
        let start: usize = self.layers[..layer].iter().map(layer_size).sum();
        let l = &self.layers[layer];
        let weight = start;
        let bias = weight + l.in_dim * l.out_dim;
        let gain = bias + l.out_dim;
        Offsets {
            weight,
            bias,
            gain,
            shift: gain + l.out_dim,
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_traced(x).output
    }

    pub fn forward_traced(&self, x: &[f64]) -> Trace {
        assert_eq!(x.len(), self.in_dim, "network input length");
        let n = self.layers.len();
        let mut trace = Trace {
            inputs: Vec::with_capacity(n),
            affine: Vec::with_capacity(n),
            normalized: Vec::with_capacity(n),
            inv_std: Vec::with_capacity(n),
            output: Vec::new(),
        };
        let mut h = x.to_vec();
        let mut start = 0;
        for l in &self.layers {
            let input = if l.skip_input {
                let mut v = h;
                v.extend_from_slice(x);
                v
            } else {
                h
            };
            let w = &self.params[start..start + l.in_dim * l.out_dim];
            let b = &self.params
                [start + l.in_dim * l.out_dim..start + l.in_dim * l.out_dim + l.out_dim];
            let mut z = b.to_vec();
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &w[o * l.in_dim..(o + 1) * l.in_dim];
                *zo += row.iter().zip(&input).map(|(a, b)| a * b).sum::<f64>();
            }
            if l.norm {
                let g0 = start + l.in_dim * l.out_dim + l.out_dim;
                let gain = &self.params[g0..g0 + l.out_dim];
                let shift = &self.params[g0 + l.out_dim..g0 + 2 * l.out_dim];
                let m = z.len() as f64;
                let mean = z.iter().sum::<f64>() / m;
                let var = z.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
                let inv = 1.0 / (var + LN_EPS).sqrt();
                let xhat: Vec<f64> = z.iter().map(|v| (v - mean) * inv).collect();
                let y: Vec<f64> = xhat
                    .iter()
                    .zip(gain)
                    .zip(shift)
                    .map(|((xh, g), s)| g * xh + s)
                    .collect();
                h = y.iter().map(|&v| if v < 0.0 { 0.0 } else { v }).collect();
                trace.normalized.push(xhat);
                trace.inv_std.push(inv);
                trace.affine.push(y);
            } else {
                h = z.clone();
                trace.normalized.push(Vec::new());
                trace.inv_std.push(0.0);
                trace.affine.push(z);
            }
            trace.inputs.push(input);
            start += layer_size(l);
        }
        trace.output = h;
        trace
    }

    /// Accumulate parameter gradients into `grad` for output gradient
    /// `d_out` and return the gradient with respect to the input.
    pub fn backward(&self, trace: &Trace, d_out: &[f64], grad: &mut [f64]) -> Vec<f64> {
        assert_eq!(grad.len(), self.params.len(), "gradient buffer length");
        let mut g = d_out.to_vec();
        let mut d_input = vec![0.0; self.in_dim];
        for li in (0..self.layers.len()).rev() {
            let l = self.layers[li];
            let o = self.offsets(li);
            let dz = if l.norm {
                let y = &trace.affine[li];
                let xhat = &trace.normalized[li];
                let inv = trace.inv_std[li];
                let dy: Vec<f64> = g
                    .iter()
                    .zip(y)
                    .map(|(&gv, &yv)| if yv > 0.0 { gv } else { 0.0 })
                    .collect();
                let mut dxhat = vec![0.0; l.out_dim];
                for k in 0..l.out_dim {
                    grad[o.gain + k] += dy[k] * xhat[k];
                    grad[o.shift + k] += dy[k];
                    dxhat[k] = dy[k] * self.params[o.gain + k];
                }
                let m = l.out_dim as f64;
                let mean_d = dxhat.iter().sum::<f64>() / m;
                let mean_dx = dxhat.iter().zip(xhat).map(|(a, b)| a * b).sum::<f64>() / m;
                dxhat
                    .iter()
                    .zip(xhat)
                    .map(|(&d, &xh)| inv * (d - mean_d - xh * mean_dx))
                    .collect::<Vec<_>>()
            } else {
                g
            };
            let input = &trace.inputs[li];
            let mut d_in = vec![0.0; l.in_dim];
            for (out, &dzo) in dz.iter().enumerate() {
                grad[o.bias + out] += dzo;
                if dzo == 0.0 {
                    continue;
                }
                let w = &self.params[o.weight + out * l.in_dim..o.weight + (out + 1) * l.in_dim];
                let gw = &mut grad[o.weight + out * l.in_dim..o.weight + (out + 1) * l.in_dim];
                for i in 0..l.in_dim {
                    gw[i] += dzo * input[i];
                    d_in[i] += dzo * w[i];
                }
            }
            if l.skip_input {
                let h = l.in_dim - self.in_dim;
                for (acc, v) in d_input.iter_mut().zip(&d_in[h..]) {
                    *acc += v;
                }
                d_in.truncate(h);
            }
            g = d_in;
        }
        for (acc, v) in d_input.iter_mut().zip(&g) {
            *acc += v;
        }
        d_input
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}
