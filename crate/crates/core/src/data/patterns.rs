use super::{batch::dequantize, split_sizes, Dataset, SPLIT_STREAMS};
use crate::butterfly::permute;
use crate::error::{invalid, Result};
use crate::flow::Shape;
use crate::rng;
use rand::seq::SliceRandom;
use rand::Rng;

/// One integer-valued `side x side` image: a dim background with one or two
/// bright rectangles or crosses.
pub fn draw_pattern(side: usize, g: &mut impl Rng) -> Vec<f64> {
    let mut img = vec![0.0; side * side];
    for v in img.iter_mut() {
        *v = f64::from(g.random_range(0..32u8));
    }
    let shapes = g.random_range(1..=2);
    for _ in 0..shapes {
        let level = f64::from(g.random_range(192..=255u8));
        if g.random::<bool>() {
            let (h, w) = (g.random_range(2..=side / 2), g.random_range(2..=side / 2));
            let (r0, c0) = (g.random_range(0..=side - h), g.random_range(0..=side - w));
            for r in r0..r0 + h {
                for c in c0..c0 + w {
                    img[r * side + c] = level;
                }
            }
        } else {
            let (r0, c0) = (g.random_range(0..side), g.random_range(0..side));
            for k in 0..side {
                img[r0 * side + k] = level;
                img[k * side + c0] = level;
            }
        }
    }
    img
}

/// Patterns with a dataset-wide pixel permutation. With `dequantize` the
/// values are mapped to `[0, 1)` with uniform noise, otherwise they stay in
/// `0..=255`.
pub fn permuted_patterns(side: usize, n: usize, seed: u64, identity: bool, dequant: bool) -> Result<Dataset> {
    if side < 2 || !side.is_power_of_two() {
        return Err(invalid(format!("side {side} is not a power of two")));
    }
    let d = side * side;
    let mut perm: Vec<usize> = (0..d).collect();
    if !identity {
        perm.shuffle(&mut rng::stream(seed, 0));
    }
    let [a, b, c] = split_sizes(n.max(1));
    let draw = |k: usize, s: u64| -> Result<Vec<Vec<f64>>> {
        let mut g = rng::stream(seed, s);
        let mut noise = rng::stream(seed, s + 100);
        (0..k)
            .map(|_| {
                let x = permute(&perm, &draw_pattern(side, &mut g));
                if dequant {
                    dequantize(&x, 8, &mut noise)
                } else {
                    Ok(x)
                }
            })
            .collect()
    };
    Ok(Dataset {
        kind: "permuted_patterns".into(),
        shape: Shape::Image {
            channels: 1,
            height: side,
            width: side,
        },
        train: draw(a, SPLIT_STREAMS[0])?,
        val: draw(b, SPLIT_STREAMS[1])?,
        test: draw(c, SPLIT_STREAMS[2])?,
        seed,
        permutation: Some(perm),
        n_bits: if dequant { 8 } else { 0 },
        truth: None,
    })
}
