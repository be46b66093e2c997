//! Small dense and convolutional networks with explicit reverse passes.
//! A zeroed clone of a network doubles as its gradient accumulator.

use super::params::{ParamKind, TensorSink, TensorSource};
use crate::error::Result;
use rand::Rng;

fn uniform_init(rng: &mut impl Rng, n: usize, fan_in: usize) -> Vec<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    (0..n).map(|_| bound * (2.0 * rng.random::<f64>() - 1.0)).collect()
}

#[inline]
fn relu(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&a| a.max(0.0)).collect()
}

#[inline]
fn relu_backward(pre: &[f64], g: &mut [f64]) {
    for (gi, &p) in g.iter_mut().zip(pre) {
        if p <= 0.0 {
            *gi = 0.0;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs x inputs`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weight: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    pub fn random(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        Self {
            inputs,
            outputs,
            weight: uniform_init(rng, inputs * outputs, inputs),
            bias: vec![0.0; outputs],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.inputs, self.outputs)
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.weight
            .chunks_exact(self.inputs)
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }

    /// Accumulates parameter gradients into `grad`; returns `W^T gy`.
    pub fn backward(&self, x: &[f64], gy: &[f64], grad: &mut Linear) -> Vec<f64> {
        let mut gx = vec![0.0; self.inputs];
        for (o, &g) in gy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad.bias[o] += g;
            let row = &self.weight[o * self.inputs..(o + 1) * self.inputs];
            let grow = &mut grad.weight[o * self.inputs..(o + 1) * self.inputs];
            for i in 0..self.inputs {
                grow[i] += g * x[i];
                gx[i] += row[i] * g;
            }
        }
        gx
    }

    pub fn export(&self, sink: &mut TensorSink) {
        sink.push("weight", &[self.outputs, self.inputs], ParamKind::Backbone, self.weight.clone());
        sink.push("bias", &[self.outputs], ParamKind::Backbone, self.bias.clone());
    }

    pub fn import(&mut self, src: &mut TensorSource) -> Result<()> {
        self.weight
            .copy_from_slice(src.take("weight", &[self.outputs, self.inputs])?);
        self.bias.copy_from_slice(src.take("bias", &[self.outputs])?);
        Ok(())
    }

    pub fn add_assign(&mut self, other: &Linear) {
        add_into(&mut self.weight, &other.weight);
        add_into(&mut self.bias, &other.bias);
    }
}

fn add_into(a: &mut [f64], b: &[f64]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

/// Two hidden rectifier layers; the output layer starts at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: [Linear; 3],
}

#[derive(Debug, Clone)]
pub struct MlpTrace {
    pre0: Vec<f64>,
    pre1: Vec<f64>,
}

fn min_abs(v: &[f64]) -> f64 {
    v.iter().fold(f64::INFINITY, |m, x| m.min(x.abs()))
}

impl MlpTrace {
    /// Distance of the closest hidden pre-activation from the ReLU kink.
    pub fn relu_margin(&self) -> f64 {
        min_abs(&self.pre0).min(min_abs(&self.pre1))
    }
}

impl Mlp {
    pub fn new(inputs: usize, hidden: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        Self {
            layers: [
                Linear::random(inputs, hidden, rng),
                Linear::random(hidden, hidden, rng),
                Linear::zeros(hidden, outputs),
            ],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.clone().map(|l| l.zeros_like()),
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_trace(x).0
    }

    pub fn forward_trace(&self, x: &[f64]) -> (Vec<f64>, MlpTrace) {
        let pre0 = self.layers[0].forward(x);
        let pre1 = self.layers[1].forward(&relu(&pre0));
        let out = self.layers[2].forward(&relu(&pre1));
        (out, MlpTrace { pre0, pre1 })
    }

    pub fn backward(&self, x: &[f64], trace: &MlpTrace, gout: &[f64], grad: &mut Mlp) -> Vec<f64> {
        let h1 = relu(&trace.pre1);
        let mut g1 = self.layers[2].backward(&h1, gout, &mut grad.layers[2]);
        relu_backward(&trace.pre1, &mut g1);
        let h0 = relu(&trace.pre0);
        let mut g0 = self.layers[1].backward(&h0, &g1, &mut grad.layers[1]);
        relu_backward(&trace.pre0, &mut g0);
        self.layers[0].backward(x, &g0, &mut grad.layers[0])
    }

    pub fn export(&self, sink: &mut TensorSink) {
        for (i, l) in self.layers.iter().enumerate() {
            l.export(&mut sink.scope(&format!("l{i}")));
        }
    }

    pub fn import(&mut self, src: &mut TensorSource) -> Result<()> {
        for (i, l) in self.layers.iter_mut().enumerate() {
            let mut s = src.scope(&format!("l{i}"));
            l.import(&mut s)?;
            src.sync(s);
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &Mlp) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.add_assign(b);
        }
    }
}

/// 3x3 convolution with zero padding on a site-major `height x width` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv3x3 {
    pub inputs: usize,
    pub outputs: usize,
    /// `[out][in][tap]` with taps in row-major 3x3 order.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv3x3 {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weight: vec![0.0; inputs * outputs * 9],
            bias: vec![0.0; outputs],
        }
    }

    pub fn random(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        Self {
            inputs,
            outputs,
            weight: uniform_init(rng, inputs * outputs * 9, inputs * 9),
            bias: vec![0.0; outputs],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.inputs, self.outputs)
    }

    fn taps(h: usize, w: usize, r: usize, c: usize) -> impl Iterator<Item = (usize, usize)> {
        (0..9usize).filter_map(move |t| {
            let (rr, cc) = ((r + t / 3) as isize - 1, (c + t % 3) as isize - 1);
            (rr >= 0 && cc >= 0 && (rr as usize) < h && (cc as usize) < w).then(|| (t, rr as usize * w + cc as usize))
        })
    }

    pub fn forward(&self, x: &[f64], h: usize, w: usize) -> Vec<f64> {
        let (ci, co) = (self.inputs, self.outputs);
        let mut y = vec![0.0; h * w * co];
        for r in 0..h {
            for c in 0..w {
                let out = &mut y[(r * w + c) * co..(r * w + c + 1) * co];
                out.copy_from_slice(&self.bias);
                for (t, src) in Self::taps(h, w, r, c) {
                    let xin = &x[src * ci..(src + 1) * ci];
                    for (o, acc) in out.iter_mut().enumerate() {
                        let base = o * ci * 9;
                        let mut s = 0.0;
                        for (i, xv) in xin.iter().enumerate() {
                            s += self.weight[base + i * 9 + t] * xv;
                        }
                        *acc += s;
                    }
                }
            }
        }
        y
    }

    pub fn backward(&self, x: &[f64], gy: &[f64], h: usize, w: usize, grad: &mut Conv3x3) -> Vec<f64> {
        let (ci, co) = (self.inputs, self.outputs);
        let mut gx = vec![0.0; h * w * ci];
        for r in 0..h {
            for c in 0..w {
                let g = &gy[(r * w + c) * co..(r * w + c + 1) * co];
                add_into(&mut grad.bias, g);
                for (t, src) in Self::taps(h, w, r, c) {
                    for (o, &go) in g.iter().enumerate() {
                        if go == 0.0 {
                            continue;
                        }
                        let base = o * ci * 9;
                        for i in 0..ci {
                            grad.weight[base + i * 9 + t] += go * x[src * ci + i];
                            gx[src * ci + i] += self.weight[base + i * 9 + t] * go;
                        }
                    }
                }
            }
        }
        gx
    }

    pub fn export(&self, sink: &mut TensorSink) {
        sink.push(
            "weight",
            &[self.outputs, self.inputs, 3, 3],
            ParamKind::Backbone,
            self.weight.clone(),
        );
        sink.push("bias", &[self.outputs], ParamKind::Backbone, self.bias.clone());
    }

    pub fn import(&mut self, src: &mut TensorSource) -> Result<()> {
        self.weight
            .copy_from_slice(src.take("weight", &[self.outputs, self.inputs, 3, 3])?);
        self.bias.copy_from_slice(src.take("bias", &[self.outputs])?);
        Ok(())
    }

    pub fn add_assign(&mut self, other: &Conv3x3) {
        add_into(&mut self.weight, &other.weight);
        add_into(&mut self.bias, &other.bias);
    }
}

/// Three 3x3 convolutions with rectifiers between; the last starts at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvNet {
    pub layers: [Conv3x3; 3],
}

#[derive(Debug, Clone)]
pub struct ConvTrace {
    pre0: Vec<f64>,
    pre1: Vec<f64>,
}

impl ConvTrace {
    pub fn relu_margin(&self) -> f64 {
        min_abs(&self.pre0).min(min_abs(&self.pre1))
    }
}

impl ConvNet {
    pub fn new(inputs: usize, hidden: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        Self {
            layers: [
                Conv3x3::random(inputs, hidden, rng),
                Conv3x3::random(hidden, hidden, rng),
                Conv3x3::zeros(hidden, outputs),
            ],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.clone().map(|l| l.zeros_like()),
        }
    }

    pub fn forward_trace(&self, x: &[f64], h: usize, w: usize) -> (Vec<f64>, ConvTrace) {
        let pre0 = self.layers[0].forward(x, h, w);
        let pre1 = self.layers[1].forward(&relu(&pre0), h, w);
        let out = self.layers[2].forward(&relu(&pre1), h, w);
        (out, ConvTrace { pre0, pre1 })
    }

    pub fn backward(
        &self,
        x: &[f64],
        trace: &ConvTrace,
        gout: &[f64],
        h: usize,
        w: usize,
        grad: &mut ConvNet,
    ) -> Vec<f64> {
        let h1 = relu(&trace.pre1);
        let mut g1 = self.layers[2].backward(&h1, gout, h, w, &mut grad.layers[2]);
        relu_backward(&trace.pre1, &mut g1);
        let h0 = relu(&trace.pre0);
        let mut g0 = self.layers[1].backward(&h0, &g1, h, w, &mut grad.layers[1]);
        relu_backward(&trace.pre0, &mut g0);
        self.layers[0].backward(x, &g0, h, w, &mut grad.layers[0])
    }

    pub fn export(&self, sink: &mut TensorSink) {
        for (i, l) in self.layers.iter().enumerate() {
            l.export(&mut sink.scope(&format!("c{i}")));
        }
    }

    pub fn import(&mut self, src: &mut TensorSource) -> Result<()> {
        for (i, l) in self.layers.iter_mut().enumerate() {
            let mut s = src.scope(&format!("c{i}"));
            l.import(&mut s)?;
            src.sync(s);
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &ConvNet) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.add_assign(b);
        }
    }
}
