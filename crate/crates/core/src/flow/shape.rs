use crate::error::{invalid, Result};

/// Layout of one sample. Storage is site-major with channels fastest:
/// element `(site, c)` lives at `site * channels + c`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Shape {
    /// `D` coordinates, treated as `D` channels at a single site.
    Flat(usize),
    Seq { channels: usize, length: usize },
    Image { channels: usize, height: usize, width: usize },
}

impl Shape {
    pub fn channels(&self) -> usize {
        match *self {
            Shape::Flat(d) => d,
            Shape::Seq { channels, .. } | Shape::Image { channels, .. } => channels,
        }
    }

    pub fn sites(&self) -> usize {
        match *self {
            Shape::Flat(_) => 1,
            Shape::Seq { length, .. } => length,
            Shape::Image { height, width, .. } => height * width,
        }
    }

    pub fn numel(&self) -> usize {
        self.channels() * self.sites()
    }

    pub fn is_spatial_2d(&self) -> bool {
        matches!(self, Shape::Image { .. })
    }

    /// Shape after a space-to-channel squeeze. Flat shapes are unchanged.
    pub fn squeezed(&self) -> Result<Shape> {
        match *self {
            Shape::Flat(d) => Ok(Shape::Flat(d)),
            Shape::Seq { channels, length } => {
                if length % 2 != 0 {
                    return Err(invalid(format!("cannot squeeze odd length {length}")));
                }
                Ok(Shape::Seq {
                    channels: 2 * channels,
                    length: length / 2,
                })
            }
            Shape::Image {
                channels,
                height,
                width,
            } => {
                if height % 2 != 0 || width % 2 != 0 {
                    return Err(invalid(format!("cannot squeeze odd spatial size {height}x{width}")));
                }
                Ok(Shape::Image {
                    channels: 4 * channels,
                    height: height / 2,
                    width: width / 2,
                })
            }
        }
    }

    /// Same sites, a different channel count.
    pub fn with_channels(&self, c: usize) -> Shape {
        match *self {
            Shape::Flat(_) => Shape::Flat(c),
            Shape::Seq { length, .. } => Shape::Seq { channels: c, length },
            Shape::Image { height, width, .. } => Shape::Image {
                channels: c,
                height,
                width,
            },
        }
    }

    /// Shape of either channel half.
    pub fn half_channels(&self) -> Result<Shape> {
        let c = self.channels();
        if !c.is_multiple_of(2) || c == 0 {
            return Err(invalid(format!("channel count {c} is not even")));
        }
        Ok(self.with_channels(c / 2))
    }

    pub fn dims(&self) -> Vec<usize> {
        match *self {
            Shape::Flat(d) => vec![d],
            Shape::Seq { channels, length } => vec![channels, length],
            Shape::Image {
                channels,
                height,
                width,
            } => vec![channels, height, width],
        }
    }

    pub fn from_dims(dims: &[usize]) -> Result<Shape> {
        let s = match *dims {
            [d] => Shape::Flat(d),
            [channels, length] => Shape::Seq { channels, length },
            [channels, height, width] => Shape::Image {
                channels,
                height,
                width,
            },
            _ => return Err(invalid(format!("unsupported shape {dims:?}"))),
        };
        if s.numel() == 0 {
            return Err(invalid("empty shape"));
        }
        Ok(s)
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let d: Vec<String> = self.dims().iter().map(|v| v.to_string()).collect();
        write!(f, "{}", d.join("x"))
    }
}

impl std::str::FromStr for Shape {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Shape> {
        let dims = s
            .split('x')
            .map(|p| p.trim().parse::<usize>().map_err(|_| invalid(format!("bad shape '{s}'"))))
            .collect::<Result<Vec<_>>>()?;
        Shape::from_dims(&dims)
    }
}

/// Converts channel-major (`c, site`) data into the canonical layout.
pub fn from_channel_major(shape: Shape, x: &[f64]) -> Vec<f64> {
    let (c, s) = (shape.channels(), shape.sites());
    let mut out = vec![0.0; x.len()];
    for ch in 0..c {
        for site in 0..s {
            out[site * c + ch] = x[ch * s + site];
        }
    }
    out
}

pub fn to_channel_major(shape: Shape, x: &[f64]) -> Vec<f64> {
    let (c, s) = (shape.channels(), shape.sites());
    let mut out = vec![0.0; x.len()];
    for ch in 0..c {
        for site in 0..s {
            out[ch * s + site] = x[site * c + ch];
        }
    }
    out
}

/// Splits channels into the first and second halves.
pub fn split_channels(shape: Shape, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let c = shape.channels();
    let h = c / 2;
    let mut a = Vec::with_capacity(x.len() / 2);
    let mut b = Vec::with_capacity(x.len() / 2);
    for site in x.chunks_exact(c) {
        a.extend_from_slice(&site[..h]);
        b.extend_from_slice(&site[h..]);
    }
    (a, b)
}

/// Inverse of [`split_channels`]; `shape` is the joined shape.
pub fn join_channels(shape: Shape, a: &[f64], b: &[f64]) -> Vec<f64> {
    let h = shape.channels() / 2;
    let mut out = Vec::with_capacity(a.len() + b.len());
    for (pa, pb) in a.chunks_exact(h).zip(b.chunks_exact(h)) {
        out.extend_from_slice(pa);
        out.extend_from_slice(pb);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn squeeze_shapes() {
        let s = Shape::Image {
            channels: 3,
            height: 4,
            width: 6,
        };
        assert_eq!(
            s.squeezed().unwrap(),
            Shape::Image {
                channels: 12,
                height: 2,
                width: 3
            }
        );
        assert!(Shape::Seq { channels: 2, length: 3 }.squeezed().is_err());
        assert_eq!(Shape::Flat(8).squeezed().unwrap(), Shape::Flat(8));
    }

    #[test]
    fn channel_major_round_trip() {
        let s = Shape::Seq { channels: 3, length: 5 };
        let x: Vec<f64> = (0..15).map(|v| v as f64).collect();
        let canon = from_channel_major(s, &x);
        assert_eq!(canon[1], 5.0);
        assert_eq!(to_channel_major(s, &canon), x);
    }

    #[test]
    fn split_join_round_trip() {
        let s = Shape::Seq { channels: 4, length: 2 };
        let x: Vec<f64> = (0..8).map(|v| v as f64).collect();
        let (a, b) = split_channels(s, &x);
        assert_eq!(a, vec![0.0, 1.0, 4.0, 5.0]);
        assert_eq!(b, vec![2.0, 3.0, 6.0, 7.0]);
        assert_eq!(join_channels(s, &a, &b), x);
    }

    #[test]
    fn parse_and_display() {
        let s: Shape = "3x8x8".parse().unwrap();
        assert_eq!(s.to_string(), "3x8x8");
        assert_eq!(s.numel(), 192);
        assert!("0".parse::<Shape>().is_err());
    }
}
