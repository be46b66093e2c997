use super::params::{ParamKind, TensorSink, TensorSource};
use crate::error::{invalid, Result};

/// Per-channel affine map `y = exp(log_scale) * x + bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActNorm {
    pub log_scale: Vec<f64>,
    pub bias: Vec<f64>,
    pub initialized: bool,
}

const MIN_STD: f64 = 1e-6;

impl ActNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            log_scale: vec![0.0; channels],
            bias: vec![0.0; channels],
            initialized: false,
        }
    }

    pub fn channels(&self) -> usize {
        self.bias.len()
    }

    fn sites(&self, len: usize) -> Result<usize> {
        let c = self.channels();
        if !len.is_multiple_of(c) {
            return Err(invalid(format!("input of length {len} has no whole sites of {c} channels")));
        }
        Ok(len / c)
    }

    /// Sets scale and bias so that `batch` maps to zero mean, unit variance
    /// per channel, then marks the layer initialised.
    pub fn data_init(&mut self, batch: &[Vec<f64>]) -> Result<()> {
        let c = self.channels();
        let mut sum = vec![0.0; c];
        let mut count = 0usize;
        for x in batch {
            self.sites(x.len())?;
            for site in x.chunks_exact(c) {
                for (s, v) in sum.iter_mut().zip(site) {
                    *s += v;
                }
                count += 1;
            }
        }
        if count == 0 {
            return Err(invalid("actnorm initialisation needs a non-empty batch"));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let mut var = vec![0.0; c];
        for x in batch {
            for site in x.chunks_exact(c) {
                for ((v, m), s) in var.iter_mut().zip(&mean).zip(site) {
                    *v += (s - m) * (s - m);
                }
            }
        }
        for ch in 0..c {
            let mut std = (var[ch] / count as f64).sqrt();
            if !(std >= MIN_STD) {
                log::warn!("actnorm channel {ch} has std {std:e}; clamping to {MIN_STD:e}");
                std = MIN_STD;
            }
            self.log_scale[ch] = -std.ln();
            self.bias[ch] = -mean[ch] / std;
        }
        self.initialized = true;
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        let sites = self.sites(x.len())?;
        let c = self.channels();
        let scale: Vec<f64> = self.log_scale.iter().map(|l| l.exp()).collect();
        let mut y = Vec::with_capacity(x.len());
        for site in x.chunks_exact(c) {
            for ch in 0..c {
                y.push(scale[ch] * site[ch] + self.bias[ch]);
            }
        }
        Ok((y, self.log_det(sites)))
    }

    pub fn log_det(&self, sites: usize) -> f64 {
        sites as f64 * self.log_scale.iter().sum::<f64>()
    }

    pub fn inverse(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.sites(y.len())?;
        let c = self.channels();
        let inv: Vec<f64> = self.log_scale.iter().map(|l| (-l).exp()).collect();
        let mut x = Vec::with_capacity(y.len());
        for site in y.chunks_exact(c) {
            for ch in 0..c {
                x.push((site[ch] - self.bias[ch]) * inv[ch]);
            }
        }
        Ok(x)
    }

    /// Reverse pass including the log-det term; `grad` holds accumulators
    /// for `log_scale` and `bias`.
    pub fn backward(&self, x: &[f64], gy: &[f64], grad: &mut ActNorm) -> Vec<f64> {
        let c = self.channels();
        let scale: Vec<f64> = self.log_scale.iter().map(|l| l.exp()).collect();
        let mut gx = Vec::with_capacity(x.len());
        for (site, gsite) in x.chunks_exact(c).zip(gy.chunks_exact(c)) {
            for ch in 0..c {
                let g = gsite[ch];
                grad.bias[ch] += g;
                grad.log_scale[ch] += g * scale[ch] * site[ch] + 1.0;
                gx.push(g * scale[ch]);
            }
        }
        gx
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            log_scale: vec![0.0; self.channels()],
            bias: vec![0.0; self.channels()],
            initialized: false,
        }
    }

    pub fn add_assign(&mut self, other: &ActNorm) {
        for (a, b) in self.log_scale.iter_mut().zip(&other.log_scale) {
            *a += b;
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += b;
        }
    }

    pub fn export(&self, sink: &mut TensorSink) {
        let c = self.channels();
        sink.push("log_scale", &[c], ParamKind::Backbone, self.log_scale.clone());
        sink.push("bias", &[c], ParamKind::Backbone, self.bias.clone());
        sink.push(
            "initialized",
            &[1],
            ParamKind::Buffer,
            vec![if self.initialized { 1.0 } else { 0.0 }],
        );
    }

    pub fn import(&mut self, src: &mut TensorSource) -> Result<()> {
        let c = self.channels();
        self.log_scale.copy_from_slice(src.take("log_scale", &[c])?);
        self.bias.copy_from_slice(src.take("bias", &[c])?);
        self.initialized = src.take("initialized", &[1])?[0] != 0.0;
        Ok(())
    }
}
