use super::gaussian::permuted_gaussian;
use super::io::{read_header, read_samples};
use super::patterns::permuted_patterns;
use super::periodic::periodic1d;
use super::toy2d::{toy2d, TOY_KINDS};
use super::{split_sizes, Dataset, SPLIT_STREAMS};
use crate::error::{invalid, Result};
use crate::flow::Shape;
use crate::rng;
use rand::Rng;
use rand_distr::StandardNormal;
use std::collections::BTreeMap;

/// Dataset description `kind:key=value,key=value`, e.g.
/// `permuted_gaussian:dim=16,n=4096,seed=3`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSpec {
    pub kind: String,
    pub params: BTreeMap<String, String>,
}

impl std::str::FromStr for DatasetSpec {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
        if kind.is_empty() {
            return Err(invalid("empty dataset kind"));
        }
        let mut params = BTreeMap::new();
        for kv in rest.split(',').filter(|p| !p.is_empty()) {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| invalid(format!("dataset parameter '{kv}' is not key=value")))?;
            params.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(Self {
            kind: kind.to_string(),
            params,
        })
    }
}

impl std::fmt::Display for DatasetSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.kind)?;
        for (i, (k, v)) in self.params.iter().enumerate() {
            write!(f, "{}{k}={v}", if i == 0 { ':' } else { ',' })?;
        }
        Ok(())
    }
}

struct Params<'a> {
    map: &'a BTreeMap<String, String>,
    allowed: Vec<&'static str>,
}

impl Params<'_> {
    fn get<T: std::str::FromStr>(&mut self, key: &'static str, default: T) -> Result<T> {
        self.allowed.push(key);
        match self.map.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| invalid(format!("dataset parameter {key}='{v}' is invalid"))),
        }
    }

    fn finish(self) -> Result<()> {
        match self.map.keys().find(|k| !self.allowed.contains(&k.as_str())) {
            Some(k) => Err(invalid(format!("unknown dataset parameter '{k}'"))),
            None => Ok(()),
        }
    }
}

/// Parsed generator arguments of a [`DatasetSpec`].
#[derive(Debug, Clone, PartialEq)]
enum Source {
    Toy { kind: String, n: usize, seed: u64 },
    Gaussian { dim: usize, n: usize, seed: u64, identity: bool },
    Periodic { length: usize, channels: usize, n: usize, seed: u64 },
    Patterns { side: usize, n: usize, seed: u64, identity: bool, dequant: bool },
    Normal { dim: usize, n: usize, seed: u64 },
    File { path: String },
}

impl DatasetSpec {
    fn source(&self) -> Result<Source> {
        let mut p = Params {
            map: &self.params,
            allowed: Vec::new(),
        };
        let kind = self.kind.as_str();
        let src = match kind {
            k if TOY_KINDS.contains(&k) => Source::Toy {
                kind: k.to_string(),
                n: p.get("n", 4096)?,
                seed: p.get("seed", 0)?,
            },
            "permuted_gaussian" => Source::Gaussian {
                dim: p.get("dim", 16)?,
                n: p.get("n", 4096)?,
                seed: p.get("seed", 0)?,
                identity: p.get("identity", false)?,
            },
            "periodic1d" => Source::Periodic {
                length: p.get("length", 64)?,
                channels: p.get("channels", 2)?,
                n: p.get("n", 2048)?,
                seed: p.get("seed", 0)?,
            },
            "permuted_patterns" => Source::Patterns {
                side: p.get("side", 8)?,
                n: p.get("n", 2048)?,
                seed: p.get("seed", 0)?,
                identity: p.get("identity", false)?,
                dequant: p.get("dequantize", true)?,
            },
            "standard_normal" => Source::Normal {
                dim: p.get("dim", 8)?,
                n: p.get("n", 4096)?,
                seed: p.get("seed", 0)?,
            },
            "file" => Source::File {
                path: p.get("path", String::new())?,
            },
            _ => return Err(invalid(format!("unknown dataset kind '{kind}'"))),
        };
        p.finish()?;
        Ok(src)
    }

    /// Sample shape, without generating any data. Files are only opened to
    /// read their header.
    pub fn shape(&self) -> Result<Shape> {
        Ok(match self.source()? {
            Source::Toy { .. } => Shape::Flat(2),
            Source::Gaussian { dim, .. } | Source::Normal { dim, .. } => Shape::Flat(dim),
            Source::Periodic { length, channels, .. } => Shape::Seq { channels, length },
            Source::Patterns { side, .. } => Shape::Image {
                channels: 1,
                height: side,
                width: side,
            },
            Source::File { path } => read_header(open(&path)?)?.1,
        })
    }

    pub fn load(&self) -> Result<Dataset> {
        Ok(match self.source()? {
            Source::Toy { kind, n, seed } => toy2d(&kind, n, seed)?,
            Source::Gaussian { dim, n, seed, identity } => permuted_gaussian(dim, n, seed, identity)?,
            Source::Periodic { length, channels, n, seed } => periodic1d(length, channels, n, seed)?,
            Source::Patterns {
                side,
                n,
                seed,
                identity,
                dequant,
            } => permuted_patterns(side, n, seed, identity, dequant)?,
            Source::Normal { dim, n, seed } => standard_normal(dim, n, seed)?,
            Source::File { path } => {
                let s = read_samples(open(&path)?)?;
                Dataset {
                    kind: s.kind,
                    shape: s.shape,
                    train: s.data.clone(),
                    val: s.data.clone(),
                    test: s.data,
                    seed: 0,
                    permutation: None,
                    n_bits: 0,
                    truth: None,
                }
            }
        })
    }
}

fn open(path: &str) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|e| invalid(format!("cannot open '{path}': {e}")))
}

pub fn standard_normal(dim: usize, n: usize, seed: u64) -> Result<Dataset> {
    if dim == 0 {
        return Err(invalid("dimension must be at least 1"));
    }
    let [a, b, c] = split_sizes(n.max(1));
    let draw = |k: usize, s: u64| {
        let mut g = rng::stream(seed, s);
        (0..k)
            .map(|_| (0..dim).map(|_| g.sample::<f64, _>(StandardNormal)).collect())
            .collect::<Vec<Vec<f64>>>()
    };
    Ok(Dataset {
        kind: "standard_normal".into(),
        shape: Shape::Flat(dim),
        train: draw(a, SPLIT_STREAMS[0]),
        val: draw(b, SPLIT_STREAMS[1]),
        test: draw(c, SPLIT_STREAMS[2]),
        seed,
        permutation: None,
        n_bits: 0,
        truth: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_display() {
        let s: DatasetSpec = "two_rings:n=100,seed=3".parse().unwrap();
        assert_eq!(s.kind, "two_rings");
        assert_eq!(s.to_string(), "two_rings:n=100,seed=3");
        assert_eq!(s.load().unwrap().train.len(), 100);
        assert!("two_rings:n".parse::<DatasetSpec>().is_err());
        assert!("two_rings:bogus=1".parse::<DatasetSpec>().unwrap().load().is_err());
        assert!("nope".parse::<DatasetSpec>().unwrap().load().is_err());
    }

    #[test]
    fn every_kind_loads() {
        for spec in [
            "two_rings:n=8",
            "moons:n=8",
            "checkerboard:n=8",
            "permuted_gaussian:dim=8,n=8",
            "periodic1d:length=16,channels=2,n=8",
            "permuted_patterns:n=8",
            "standard_normal:dim=4,n=8",
        ] {
            let spec = spec.parse::<DatasetSpec>().unwrap();
            let ds = spec.load().unwrap();
            assert_eq!(spec.shape().unwrap(), ds.shape);
            assert!(ds.train.iter().all(|x| x.len() == ds.shape.numel()));
        }
    }
}
