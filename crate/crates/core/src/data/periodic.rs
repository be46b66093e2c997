use super::{split_sizes, Dataset, SPLIT_STREAMS};
use crate::error::{invalid, Result};
use crate::flow::Shape;
use crate::rng;
use rand::Rng;
use rand_distr::StandardNormal;
use std::f64::consts::PI;

pub const FUNDAMENTALS: [usize; 3] = [2, 3, 4];
pub const HARMONICS: usize = 3;
pub const NOISE: f64 = 0.02;

/// Channel-major signal `sum_h amp[c][h] sin(2 pi h f t / length + phase[c][h])`
/// plus `noise` times standard normal noise.
pub fn periodic_signal(
    length: usize,
    fundamental: usize,
    amps: &[[f64; HARMONICS]],
    phases: &[[f64; HARMONICS]],
    noise: f64,
    g: &mut impl Rng,
) -> Vec<Vec<f64>> {
    amps.iter()
        .zip(phases)
        .map(|(a, p)| {
            (0..length)
                .map(|t| {
                    let s: f64 = (0..HARMONICS)
                        .map(|h| {
                            let w = 2.0 * PI * ((h + 1) * fundamental) as f64 * t as f64 / length as f64;
                            a[h] * (w + p[h]).sin()
                        })
                        .sum();
                    s + if noise > 0.0 {
                        noise * g.sample::<f64, _>(StandardNormal)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

fn draw_sample(length: usize, channels: usize, noise: f64, g: &mut impl Rng) -> Vec<f64> {
    let f = FUNDAMENTALS[g.random_range(0..FUNDAMENTALS.len())];
    let amps: Vec<[f64; HARMONICS]> = (0..channels)
        .map(|_| std::array::from_fn(|h| (0.5 + 0.5 * g.random::<f64>()) / (h + 1) as f64))
        .collect();
    let phases: Vec<[f64; HARMONICS]> = (0..channels)
        .map(|_| std::array::from_fn(|_| 2.0 * PI * g.random::<f64>()))
        .collect();
    let sig = periodic_signal(length, f, &amps, &phases, noise, g);
    let lo = sig.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    let hi = sig.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut out = vec![0.0; length * channels];
    for (c, ch) in sig.iter().enumerate() {
        for (t, v) in ch.iter().enumerate() {
            out[t * channels + c] = (2.0 * (v - lo) / span - 1.0).clamp(-1.0, 1.0);
        }
    }
    out
}

/// Multi-channel periodic series, min-max normalised to `[-1, 1]` per sample.
pub fn periodic1d(length: usize, channels: usize, n: usize, seed: u64) -> Result<Dataset> {
    if length < 2 || !length.is_power_of_two() {
        return Err(invalid(format!("length {length} is not a power of two")));
    }
    if channels == 0 {
        return Err(invalid("channels must be at least 1"));
    }
    let [a, b, c] = split_sizes(n.max(1));
    let draw = |k: usize, s: u64| {
        let mut g = rng::stream(seed, s);
        (0..k).map(|_| draw_sample(length, channels, NOISE, &mut g)).collect::<Vec<_>>()
    };
    Ok(Dataset {
        kind: "periodic1d".into(),
        shape: Shape::Seq { channels, length },
        train: draw(a, SPLIT_STREAMS[0]),
        val: draw(b, SPLIT_STREAMS[1]),
        test: draw(c, SPLIT_STREAMS[2]),
        seed,
        permutation: None,
        n_bits: 0,
        truth: None,
    })
}
