use super::nn::{ConvNet, ConvTrace, Mlp, MlpTrace};
use super::params::{TensorSink, TensorSource};
use super::shape::{join_channels, split_channels, Shape};
use crate::error::{invalid, Result};
use rand::Rng;

/// Offset added to the raw scale so a zero conditioner output starts the
/// coupling at `sigmoid(2)`.
pub const SCALE_OFFSET: f64 = 2.0;

pub fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

pub fn log_sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        -(-u).exp().ln_1p()
    } else {
        u - u.exp().ln_1p()
    }
}

/// Network mapping one channel half to two outputs of the other half's size.
#[derive(Debug, Clone, PartialEq)]
pub enum Conditioner {
    Dense(Mlp),
    Conv { net: ConvNet, height: usize, width: usize },
}

#[derive(Debug, Clone)]
pub enum ConditionerTrace {
    Dense(MlpTrace),
    Conv(ConvTrace),
}

impl ConditionerTrace {
    pub fn relu_margin(&self) -> f64 {
        match self {
            ConditionerTrace::Dense(t) => t.relu_margin(),
            ConditionerTrace::Conv(t) => t.relu_margin(),
        }
    }
}

impl Conditioner {
    /// Dense network for flat and sequence data, convolutional for images.
    pub fn new(half: Shape, hidden: usize, rng: &mut impl Rng) -> Self {
        match half {
            Shape::Image {
                channels,
                height,
                width,
            } => Conditioner::Conv {
                net: ConvNet::new(channels, hidden, 2 * channels, rng),
                height,
                width,
            },
            _ => Conditioner::Dense(Mlp::new(half.numel(), hidden, 2 * half.numel(), rng)),
        }
    }

    pub fn forward_trace(&self, a: &[f64]) -> (Vec<f64>, ConditionerTrace) {
        match self {
            Conditioner::Dense(m) => {
                let (o, t) = m.forward_trace(a);
                (o, ConditionerTrace::Dense(t))
            }
            Conditioner::Conv { net, height, width } => {
                let (o, t) = net.forward_trace(a, *height, *width);
                (o, ConditionerTrace::Conv(t))
            }
        }
    }

    pub fn backward(&self, a: &[f64], trace: &ConditionerTrace, gout: &[f64], grad: &mut Conditioner) -> Vec<f64> {
        match (self, trace, grad) {
            (Conditioner::Dense(m), ConditionerTrace::Dense(t), Conditioner::Dense(g)) => m.backward(a, t, gout, g),
            (Conditioner::Conv { net, height, width }, ConditionerTrace::Conv(t), Conditioner::Conv { net: g, .. }) => {
                net.backward(a, t, gout, *height, *width, g)
            }
            _ => unreachable!("conditioner and gradient kinds differ"),
        }
    }

    /// Splits the network output into (first, second), each laid out like
    /// the conditioned half.
    pub fn split_output(&self, half: Shape, out: &[f64]) -> (Vec<f64>, Vec<f64>) {
        match self {
            Conditioner::Dense(_) => {
                let n = half.numel();
                (out[..n].to_vec(), out[n..].to_vec())
            }
            Conditioner::Conv { .. } => split_channels(half.with_channels(2 * half.channels()), out),
        }
    }

    pub fn join_output(&self, half: Shape, first: &[f64], second: &[f64]) -> Vec<f64> {
        match self {
            Conditioner::Dense(_) => [first, second].concat(),
            Conditioner::Conv { .. } => join_channels(half.with_channels(2 * half.channels()), first, second),
        }
    }

    pub fn zeros_like(&self) -> Self {
        match self {
            Conditioner::Dense(m) => Conditioner::Dense(m.zeros_like()),
            Conditioner::Conv { net, height, width } => Conditioner::Conv {
                net: net.zeros_like(),
                height: *height,
                width: *width,
            },
        }
    }

    pub fn add_assign(&mut self, other: &Conditioner) {
        match (self, other) {
            (Conditioner::Dense(a), Conditioner::Dense(b)) => a.add_assign(b),
            (Conditioner::Conv { net: a, .. }, Conditioner::Conv { net: b, .. }) => a.add_assign(b),
            _ => unreachable!("conditioner kinds differ"),
        }
    }

    pub fn export(&self, sink: &mut TensorSink) {
        match self {
            Conditioner::Dense(m) => m.export(sink),
            Conditioner::Conv { net, .. } => net.export(sink),
        }
    }

    pub fn import(&mut self, src: &mut TensorSource) -> Result<()> {
        match self {
            Conditioner::Dense(m) => m.import(src),
            Conditioner::Conv { net, .. } => net.import(src),
        }
    }
}

/// Affine coupling: the first channel half passes through and conditions a
/// scale and shift of the second half.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    pub shape: Shape,
    pub net: Conditioner,
}

#[derive(Debug, Clone)]
pub struct CouplingTrace {
    x: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
    scale: Vec<f64>,
    net: ConditionerTrace,
}

impl CouplingTrace {
    pub fn relu_margin(&self) -> f64 {
        self.net.relu_margin()
    }
}

impl Coupling {
    pub fn new(shape: Shape, hidden: usize, rng: &mut impl Rng) -> Result<Self> {
        let half = shape.half_channels()?;
        Ok(Self {
            shape,
            net: Conditioner::new(half, hidden, rng),
        })
    }

    fn half(&self) -> Shape {
        self.shape.with_channels(self.shape.channels() / 2)
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.shape.numel() {
            return Err(invalid(format!(
                "coupling input of length {} for shape {}",
                x.len(),
                self.shape
            )));
        }
        Ok(())
    }

    fn scale_shift(&self, a: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>, ConditionerTrace) {
        let (out, trace) = self.net.forward_trace(a);
        let (raw, shift) = self.net.split_output(self.half(), &out);
        let ls: Vec<f64> = raw.iter().map(|r| log_sigmoid(r + SCALE_OFFSET)).collect();
        let scale = raw.iter().map(|r| sigmoid(r + SCALE_OFFSET)).collect();
        (scale, ls, shift, trace)
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        let (y, ld, _) = self.forward_trace(x)?;
        Ok((y, ld))
    }

    pub fn forward_trace(&self, x: &[f64]) -> Result<(Vec<f64>, f64, CouplingTrace)> {
        self.check(x)?;
        let (a, b) = split_channels(self.shape, x);
        let (scale, ls, shift, net) = self.scale_shift(&a);
        let yb: Vec<f64> = b
            .iter()
            .zip(&scale)
            .zip(&shift)
            .map(|((v, s), t)| s * v + t)
            .collect();
        let y = join_channels(self.shape, &a, &yb);
        let trace = CouplingTrace {
            x: x.to_vec(),
            a,
            b,
            scale,
            net,
        };
        Ok((y, ls.iter().sum(), trace))
    }

    pub fn inverse(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check(y)?;
        let (a, yb) = split_channels(self.shape, y);
        let (scale, _, shift, _) = self.scale_shift(&a);
        let b: Vec<f64> = yb
            .iter()
            .zip(&scale)
            .zip(&shift)
            .map(|((v, s), t)| (v - t) / s)
            .collect();
        Ok(join_channels(self.shape, &a, &b))
    }

    /// Reverse pass including the log-det term.
    pub fn backward(&self, trace: &CouplingTrace, gy: &[f64], grad: &mut Coupling) -> Vec<f64> {
        let (ga, gb) = split_channels(self.shape, gy);
        let n = gb.len();
        let mut g_raw = Vec::with_capacity(n);
        let mut gx_b = Vec::with_capacity(n);
        for i in 0..n {
            let s = trace.scale[i];
            gx_b.push(gb[i] * s);
            let g_scale = gb[i] * trace.b[i] + 1.0 / s;
            g_raw.push(g_scale * s * (1.0 - s));
        }
        let gout = self.net.join_output(self.half(), &g_raw, &gb);
        let extra = self.net.backward(&trace.a, &trace.net, &gout, &mut grad.net);
        let gx_a: Vec<f64> = ga.iter().zip(&extra).map(|(p, q)| p + q).collect();
        debug_assert_eq!(trace.x.len(), gy.len());
        join_channels(self.shape, &gx_a, &gx_b)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            shape: self.shape,
            net: self.net.zeros_like(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::nn::Linear;
    use crate::oracle::{dense_log_abs_det_real, numerical_jacobian};
    use crate::rng;

    fn randomized(shape: Shape, seed: u64) -> Coupling {
        let mut g = rng::seeded(seed);
        let mut c = Coupling::new(shape, 6, &mut g).unwrap();
        if let Conditioner::Dense(m) = &mut c.net {
            m.layers[2] = Linear::random(6, 2 * shape.numel() / 2, &mut g);
        }
        c
    }

    #[test]
    fn zero_conditioner_scales_by_sigmoid_two() {
        let mut g = rng::seeded(0);
        let c = Coupling::new(Shape::Flat(6), 8, &mut g).unwrap();
        let x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let (y, ld) = c.forward(&x).unwrap();
        let s = sigmoid(2.0);
        assert_eq!(&y[..3], &x[..3]);
        for i in 3..6 {
            assert!((y[i] - s * x[i]).abs() < 1e-15);
        }
        assert!((ld - 3.0 * s.ln()).abs() < 1e-14);
    }

    #[test]
    fn round_trip_random_weights() {
        let c = randomized(Shape::Flat(8), 3);
        let x = [0.3, -1.2, 0.8, 2.0, -0.4, 0.1, 1.5, -2.2];
        let y = c.forward(&x).unwrap().0;
        let back = c.inverse(&y).unwrap();
        for (p, q) in back.iter().zip(&x) {
            assert!((p - q).abs() <= 1e-10);
        }
    }

    #[test]
    fn log_det_matches_dense_jacobian() {
        let c = randomized(Shape::Flat(8), 4);
        let x = [0.3, -1.2, 0.8, 2.0, -0.4, 0.1, 1.5, -2.2];
        let jac = numerical_jacobian(|v| c.forward(v).unwrap().0, &x, 1e-5);
        let ld = c.forward(&x).unwrap().1;
        assert!((dense_log_abs_det_real(&jac) - ld).abs() <= 1e-7);
    }

    #[test]
    fn odd_channels_rejected() {
        let mut g = rng::seeded(0);
        assert!(Coupling::new(Shape::Flat(5), 4, &mut g).is_err());
    }

    #[test]
    fn stable_log_sigmoid() {
        assert!((log_sigmoid(-800.0) + 800.0).abs() < 1e-12);
        assert_eq!(log_sigmoid(800.0), 0.0);
        assert!((log_sigmoid(0.3) - sigmoid(0.3).ln()).abs() < 1e-15);
    }
}
