//! `bfdata v1`: a header line `bfdata v1 <kind> <shape> <n>` followed by
//! `n * prod(shape)` little-endian `f64` values.

use crate::error::{invalid, Result};
use crate::flow::Shape;
use std::io::{BufRead, Read, Write};

#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    pub kind: String,
    pub shape: Shape,
    pub data: Vec<Vec<f64>>,
}

pub fn write_samples(mut w: impl Write, kind: &str, shape: Shape, data: &[Vec<f64>]) -> std::io::Result<()> {
    if kind.is_empty() || kind.contains(char::is_whitespace) {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidInput,
            format!("kind '{kind}' must be a non-empty word"),
        ));
    }
    writeln!(w, "bfdata v1 {kind} {shape} {}", data.len())?;
    let mut buf = Vec::with_capacity(data.len() * shape.numel() * 8);
    for x in data {
        if x.len() != shape.numel() {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidInput,
                format!("sample of length {} for shape {shape}", x.len()),
            ));
        }
        for v in x {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf)
}

/// Parses the header line, returning `(kind, shape, n)`.
pub fn read_header(r: impl Read) -> Result<(String, Shape, usize)> {
    parse_header(&mut std::io::BufReader::new(r))
}

fn parse_header(r: &mut impl BufRead) -> Result<(String, Shape, usize)> {
    let mut header = String::new();
    r.read_line(&mut header)
        .map_err(|e| invalid(format!("cannot read bfdata header: {e}")))?;
    let fields: Vec<&str> = header.trim_end_matches('\n').split(' ').collect();
    let [magic, version, kind, shape, n] = fields[..] else {
        return Err(invalid(format!("malformed bfdata header '{}'", header.trim_end())));
    };
    if magic != "bfdata" || version != "v1" {
        return Err(invalid(format!("unsupported bfdata header '{}'", header.trim_end())));
    }
    let shape: Shape = shape.parse()?;
    let n: usize = n.parse().map_err(|_| invalid(format!("bad sample count '{n}'")))?;
    Ok((kind.to_string(), shape, n))
}

pub fn read_samples(r: impl Read) -> Result<Samples> {
    let mut r = std::io::BufReader::new(r);
    let (kind, shape, n) = parse_header(&mut r)?;
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)
        .map_err(|e| invalid(format!("cannot read bfdata payload: {e}")))?;
    let d = shape.numel();
    if payload.len() != n * d * 8 {
        return Err(invalid(format!(
            "bfdata payload has {} bytes, expected {}",
            payload.len(),
            n * d * 8
        )));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(Samples {
        kind,
        shape,
        data: values.chunks_exact(d).map(<[f64]>::to_vec).collect(),
    })
}
