use crate::error::{invalid, Error, Result};

/// Which optimizer group a tensor belongs to; buffers are never trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamKind {
    Backbone,
    Butterfly,
    Buffer,
}

impl ParamKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ParamKind::Backbone => "backbone",
            ParamKind::Butterfly => "butterfly",
            ParamKind::Buffer => "buffer",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "backbone" => Ok(ParamKind::Backbone),
            "butterfly" => Ok(ParamKind::Butterfly),
            "buffer" => Ok(ParamKind::Buffer),
            _ => Err(invalid(format!("unknown parameter kind '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_trainable(&self) -> bool {
        self.kind != ParamKind::Buffer
    }
}

/// Ordered, named view of every parameter and buffer in a model.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamTable {
    pub tensors: Vec<Tensor>,
}

impl ParamTable {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.tensors.iter().filter(|t| t.is_trainable()).map(Tensor::numel).sum()
    }

    pub fn zeros_like(&self) -> ParamTable {
        ParamTable {
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor {
                    data: vec![0.0; t.numel()],
                    ..t.clone()
                })
                .collect(),
        }
    }

    /// Checks that `other` has the same names, shapes and kinds in order.
    pub fn check_layout(&self, other: &ParamTable) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::ShapeMismatch(format!(
                "parameter tables have {} and {} tensors",
                self.len(),
                other.len()
            )));
        }
        for (a, b) in self.tensors.iter().zip(&other.tensors) {
            if a.name != b.name || a.shape != b.shape || a.kind != b.kind || a.numel() != b.numel() {
                return Err(Error::ShapeMismatch(format!(
                    "tensor '{}' {:?} does not match '{}' {:?}",
                    a.name, a.shape, b.name, b.shape
                )));
            }
        }
        Ok(())
    }

    /// `self += scale * other`, element-wise.
    pub fn axpy(&mut self, scale: f64, other: &ParamTable) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += scale * y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in &mut self.tensors {
            for v in &mut t.data {
                *v *= s;
            }
        }
    }

    /// Euclidean norm over trainable tensors.
    pub fn norm(&self) -> f64 {
        self.tensors
            .iter()
            .filter(|t| t.is_trainable())
            .flat_map(|t| t.data.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

/// Collects tensors under a dotted name prefix.
pub struct TensorSink<'a> {
    prefix: String,
    out: &'a mut Vec<Tensor>,
}

impl<'a> TensorSink<'a> {
    pub fn new(out: &'a mut Vec<Tensor>) -> Self {
        Self {
            prefix: String::new(),
            out,
        }
    }

    pub fn scope(&mut self, name: &str) -> TensorSink<'_> {
        TensorSink {
            prefix: format!("{}{}.", self.prefix, name),
            out: self.out,
        }
    }

    pub fn push(&mut self, name: &str, shape: &[usize], kind: ParamKind, data: Vec<f64>) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len(), "{name}");
        self.out.push(Tensor {
            name: format!("{}{}", self.prefix, name),
            shape: shape.to_vec(),
            kind,
            data,
        });
    }
}

/// Reads tensors back in export order, validating names and shapes.
pub struct TensorSource<'a> {
    tensors: std::slice::Iter<'a, Tensor>,
    prefix: String,
}

impl<'a> TensorSource<'a> {
    pub fn new(table: &'a ParamTable) -> Self {
        Self {
            tensors: table.tensors.iter(),
            prefix: String::new(),
        }
    }

    pub fn scope<'b>(&'b mut self, name: &str) -> TensorSource<'a>
    where
        'a: 'b,
    {
        TensorSource {
            tensors: self.tensors.clone(),
            prefix: format!("{}{}.", self.prefix, name),
        }
    }

    /// Advances this source past everything consumed by a scoped child.
    pub fn sync(&mut self, child: TensorSource<'a>) {
        self.tensors = child.tensors;
    }

    pub fn take(&mut self, name: &str, shape: &[usize]) -> Result<&'a [f64]> {
        let full = format!("{}{}", self.prefix, name);
        let t = self
            .tensors
            .next()
            .ok_or_else(|| Error::ShapeMismatch(format!("missing tensor '{full}'")))?;
        if t.name != full || t.shape != shape {
            return Err(Error::ShapeMismatch(format!(
                "expected '{full}' {shape:?}, found '{}' {:?}",
                t.name, t.shape
            )));
        }
        Ok(&t.data)
    }

    pub fn finish(mut self) -> Result<()> {
        match self.tensors.next() {
            None => Ok(()),
            Some(t) => Err(Error::ShapeMismatch(format!("unexpected tensor '{}'", t.name))),
        }
    }
}
