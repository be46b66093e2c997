use super::nn::{Conv3x3, Linear};
use super::params::{TensorSink, TensorSource};
use super::shape::{join_channels, split_channels, Shape};
use crate::error::{invalid, Result};

pub const HALF_LOG_TWO_PI: f64 = 0.918_938_533_204_672_8;

/// Zero-initialised map from the kept half to `(mean, log_std)` of the
/// factored-out half.
#[derive(Debug, Clone, PartialEq)]
pub enum PriorNet {
    Dense(Linear),
    Conv { conv: Conv3x3, height: usize, width: usize },
}

/// Factors out the second channel half under a conditional Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub shape: Shape,
    pub net: PriorNet,
}

#[derive(Debug, Clone)]
pub struct SplitTrace {
    keep: Vec<f64>,
    out: Vec<f64>,
    mean: Vec<f64>,
    log_std: Vec<f64>,
}

impl Split {
    pub fn new(shape: Shape) -> Result<Self> {
        let half = shape.half_channels()?;
        let net = match half {
            Shape::Image {
                channels,
                height,
                width,
            } => PriorNet::Conv {
                conv: Conv3x3::zeros(channels, 2 * channels),
                height,
                width,
            },
            _ => PriorNet::Dense(Linear::zeros(half.numel(), 2 * half.numel())),
        };
        Ok(Self { shape, net })
    }

    pub fn half(&self) -> Shape {
        self.shape.with_channels(self.shape.channels() / 2)
    }

    fn params_for(&self, keep: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let half = self.half();
        match &self.net {
            PriorNet::Dense(l) => {
                let o = l.forward(keep);
                let n = half.numel();
                (o[..n].to_vec(), o[n..].to_vec())
            }
            PriorNet::Conv { conv, height, width } => {
                let o = conv.forward(keep, *height, *width);
                split_channels(half.with_channels(2 * half.channels()), &o)
            }
        }
    }

    /// Returns the kept half and the log-density of the factored-out half.
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        let (keep, lp, _) = self.forward_trace(x)?;
        Ok((keep, lp))
    }

    pub fn forward_trace(&self, x: &[f64]) -> Result<(Vec<f64>, f64, SplitTrace)> {
        if x.len() != self.shape.numel() {
            return Err(invalid(format!("split input of length {} for shape {}", x.len(), self.shape)));
        }
        let (keep, out) = split_channels(self.shape, x);
        let (mean, log_std) = self.params_for(&keep);
        let lp = gaussian_log_density(&out, &mean, &log_std);
        let trace = SplitTrace {
            keep: keep.clone(),
            out,
            mean,
            log_std,
        };
        Ok((keep, lp, trace))
    }

    /// Standardised residual `(out - mean) / std` of the factored-out half.
    pub fn standardize(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let (keep, _, t) = self.forward_trace(x)?;
        let eps = t
            .out
            .iter()
            .zip(&t.mean)
            .zip(&t.log_std)
            .map(|((o, m), l)| (o - m) * (-l).exp())
            .collect();
        Ok((keep, eps))
    }

    /// Rebuilds the input from the kept half and the factored-out half.
    pub fn inverse(&self, keep: &[f64], out: &[f64]) -> Vec<f64> {
        join_channels(self.shape, keep, out)
    }

    /// Rebuilds the input from a standardised residual.
    pub fn inverse_standard(&self, keep: &[f64], eps: &[f64]) -> Result<Vec<f64>> {
        if keep.len() != self.half().numel() || eps.len() != keep.len() {
            return Err(invalid("split inverse length mismatch"));
        }
        let (mean, log_std) = self.params_for(keep);
        let out: Vec<f64> = eps
            .iter()
            .zip(&mean)
            .zip(&log_std)
            .map(|((e, m), l)| m + l.exp() * e)
            .collect();
        Ok(self.inverse(keep, &out))
    }

    /// `g_keep` is the cotangent of the kept half; the log-density term is
    /// included with unit weight.
    pub fn backward(&self, trace: &SplitTrace, g_keep: &[f64], grad: &mut Split) -> Vec<f64> {
        let n = trace.out.len();
        let mut g_out = Vec::with_capacity(n);
        let mut g_mean = Vec::with_capacity(n);
        let mut g_log_std = Vec::with_capacity(n);
        for i in 0..n {
            let inv_var = (-2.0 * trace.log_std[i]).exp();
            let r = trace.out[i] - trace.mean[i];
            g_out.push(-r * inv_var);
            g_mean.push(r * inv_var);
            g_log_std.push(r * r * inv_var - 1.0);
        }
        let half = self.half();
        let extra = match (&self.net, &mut grad.net) {
            (PriorNet::Dense(l), PriorNet::Dense(g)) => l.backward(&trace.keep, &[g_mean, g_log_std].concat(), g),
            (PriorNet::Conv { conv, height, width }, PriorNet::Conv { conv: g, .. }) => {
                let gout = join_channels(half.with_channels(2 * half.channels()), &g_mean, &g_log_std);
                conv.backward(&trace.keep, &gout, *height, *width, g)
            }
            _ => unreachable!("prior net kinds differ"),
        };
        let gk: Vec<f64> = g_keep.iter().zip(&extra).map(|(a, b)| a + b).collect();
        join_channels(self.shape, &gk, &g_out)
    }

    pub fn zeros_like(&self) -> Self {
        let net = match &self.net {
            PriorNet::Dense(l) => PriorNet::Dense(l.zeros_like()),
            PriorNet::Conv { conv, height, width } => PriorNet::Conv {
                conv: conv.zeros_like(),
                height: *height,
                width: *width,
            },
        };
        Self { shape: self.shape, net }
    }

    pub fn add_assign(&mut self, other: &Split) {
        match (&mut self.net, &other.net) {
            (PriorNet::Dense(a), PriorNet::Dense(b)) => a.add_assign(b),
            (PriorNet::Conv { conv: a, .. }, PriorNet::Conv { conv: b, .. }) => a.add_assign(b),
            _ => unreachable!("prior net kinds differ"),
        }
    }

    pub fn export(&self, sink: &mut TensorSink) {
        match &self.net {
            PriorNet::Dense(l) => l.export(sink),
            PriorNet::Conv { conv, .. } => conv.export(sink),
        }
    }

    pub fn import(&mut self, src: &mut TensorSource) -> Result<()> {
        match &mut self.net {
            PriorNet::Dense(l) => l.import(src),
            PriorNet::Conv { conv, .. } => conv.import(src),
        }
    }
}

/// `sum_i log N(x_i; mean_i, exp(log_std_i)^2)`.
pub fn gaussian_log_density(x: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    x.iter()
        .zip(mean)
        .zip(log_std)
        .map(|((v, m), l)| {
            let r = (v - m) * (-l).exp();
            -HALF_LOG_TWO_PI - l - 0.5 * r * r
        })
        .sum()
}

pub fn standard_normal_log_density(z: &[f64]) -> f64 {
    z.iter().map(|v| -HALF_LOG_TWO_PI - 0.5 * v * v).sum()
}
