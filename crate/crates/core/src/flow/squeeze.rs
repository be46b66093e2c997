use super::shape::Shape;
use crate::error::{invalid, Result};

/// Space-to-channel reshuffle. Images: each 2x2 patch becomes 4 channels per
/// input channel, `c * 4 + quadrant` with quadrants ordered top-left,
/// top-right, bottom-left, bottom-right. Sequences: pairs of adjacent steps,
/// `c * 2 + parity`. Flat data is passed through.
pub fn squeeze(shape: Shape, x: &[f64]) -> Result<Vec<f64>> {
    check(shape, x)?;
    let out_shape = shape.squeezed()?;
    let mut y = vec![0.0; x.len()];
    for (src, dst) in index_map(shape, out_shape) {
        y[dst] = x[src];
    }
    Ok(y)
}

/// Exact inverse of [`squeeze`]; `shape` is the unsqueezed shape.
pub fn unsqueeze(shape: Shape, y: &[f64]) -> Result<Vec<f64>> {
    check(shape, y)?;
    let out_shape = shape.squeezed()?;
    let mut x = vec![0.0; y.len()];
    for (src, dst) in index_map(shape, out_shape) {
        x[src] = y[dst];
    }
    Ok(x)
}

fn check(shape: Shape, x: &[f64]) -> Result<()> {
    if x.len() != shape.numel() {
        return Err(invalid(format!("input length {} does not match shape {shape}", x.len())));
    }
    Ok(())
}

fn index_map(shape: Shape, out: Shape) -> Vec<(usize, usize)> {
    let oc = out.channels();
    match shape {
        Shape::Flat(d) => (0..d).map(|i| (i, i)).collect(),
        Shape::Seq { channels, length } => {
            let mut m = Vec::with_capacity(channels * length);
            for t in 0..length {
                for c in 0..channels {
                    m.push((t * channels + c, (t / 2) * oc + c * 2 + t % 2));
                }
            }
            m
        }
        Shape::Image {
            channels,
            height,
            width,
        } => {
            let ow = width / 2;
            let mut m = Vec::with_capacity(shape.numel());
            for r in 0..height {
                for col in 0..width {
                    let q = (r % 2) * 2 + col % 2;
                    let site = (r / 2) * ow + col / 2;
                    for c in 0..channels {
                        m.push(((r * width + col) * channels + c, site * oc + c * 4 + q));
                    }
                }
            }
            m
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patch_becomes_channels_in_quadrant_order() {
        let s = Shape::Image {
            channels: 1,
            height: 2,
            width: 2,
        };
        assert_eq!(squeeze(s, &[1.0, 2.0, 3.0, 4.0]).unwrap(), vec![1.0, 2.0, 3.0, 4.0]);
        let s2 = Shape::Image {
            channels: 2,
            height: 2,
            width: 2,
        };
        // Site-major input: (a0, a1), (b0, b1), (c0, c1), (d0, d1).
        let x = [10.0, 20.0, 11.0, 21.0, 12.0, 22.0, 13.0, 23.0];
        assert_eq!(
            squeeze(s2, &x).unwrap(),
            vec![10.0, 11.0, 12.0, 13.0, 20.0, 21.0, 22.0, 23.0]
        );
    }

    #[test]
    fn sequence_pairs_adjacent_steps() {
        let s = Shape::Seq { channels: 1, length: 4 };
        assert_eq!(squeeze(s, &[1.0, 2.0, 3.0, 4.0]).unwrap(), vec![1.0, 2.0, 3.0, 4.0]);
        let s2 = Shape::Seq { channels: 2, length: 2 };
        assert_eq!(squeeze(s2, &[1.0, 5.0, 2.0, 6.0]).unwrap(), vec![1.0, 2.0, 5.0, 6.0]);
    }

    #[test]
    fn round_trip_is_bitwise_and_preserves_multiset() {
        let s = Shape::Image {
            channels: 3,
            height: 4,
            width: 6,
        };
        let x: Vec<f64> = (0..72).map(|i| ((i * 37) % 72) as f64 * 0.1 - 1.3).collect();
        let y = squeeze(s, &x).unwrap();
        assert_eq!(unsqueeze(s, &y).unwrap(), x);
        let mut a = x.clone();
        let mut b = y.clone();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        assert_eq!(a, b);
    }

    #[test]
    fn odd_sizes_are_rejected() {
        let s = Shape::Image {
            channels: 1,
            height: 3,
            width: 2,
        };
        assert!(squeeze(s, &[0.0; 6]).is_err());
    }
}
