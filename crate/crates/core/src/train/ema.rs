use crate::error::{invalid, Error, Result};
use crate::flow::{ParamKind, ParamTable, Tensor};

/// Which parameters get an exponential moving average.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EmaMode {
    #[default]
    None,
    All,
    Butterfly,
}

impl EmaMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            EmaMode::None => "none",
            EmaMode::All => "all",
            EmaMode::Butterfly => "butterfly",
        }
    }

    fn covers(&self, t: &Tensor) -> bool {
        match self {
            EmaMode::None => false,
            EmaMode::All => t.is_trainable(),
            EmaMode::Butterfly => t.kind == ParamKind::Butterfly,
        }
    }
}

impl std::str::FromStr for EmaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(EmaMode::None),
            "all" => Ok(EmaMode::All),
            "butterfly" => Ok(EmaMode::Butterfly),
            _ => Err(invalid(format!("unknown EMA mode '{s}'"))),
        }
    }
}

/// Shadow copies of the covered parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct EmaState {
    pub mode: EmaMode,
    pub decay: f64,
    shadow: Vec<Option<Vec<f64>>>,
}

impl EmaState {
    pub fn new(mode: EmaMode, decay: f64, params: &ParamTable) -> Self {
        let mut s = Self {
            mode,
            decay,
            shadow: Vec::new(),
        };
        s.reset(params);
        s
    }

    /// Restarts every shadow from the current parameters.
    pub fn reset(&mut self, params: &ParamTable) {
        self.shadow = params
            .tensors
            .iter()
            .map(|t| self.mode.covers(t).then(|| t.data.clone()))
            .collect();
    }

    pub fn update(&mut self, params: &ParamTable) {
        let a = self.decay;
        for (s, t) in self.shadow.iter_mut().zip(&params.tensors) {
            if let Some(s) = s {
                for (x, p) in s.iter_mut().zip(&t.data) {
                    *x = a * *x + (1.0 - a) * p;
                }
            }
        }
    }

    /// `params` with covered tensors replaced by their shadows.
    pub fn apply(&self, params: &ParamTable) -> ParamTable {
        let mut out = params.clone();
        for (t, s) in out.tensors.iter_mut().zip(&self.shadow) {
            if let Some(s) = s {
                t.data.clone_from(s);
            }
        }
        out
    }

    pub fn export(&self, params: &ParamTable, prefix: &str, out: &mut Vec<Tensor>) {
        for (t, s) in params.tensors.iter().zip(&self.shadow) {
            if let Some(s) = s {
                out.push(Tensor {
                    name: format!("{prefix}.{}", t.name),
                    shape: t.shape.clone(),
                    kind: ParamKind::Buffer,
                    data: s.clone(),
                });
            }
        }
    }

    pub fn import(&mut self, params: &ParamTable, prefix: &str, state: &ParamTable) -> Result<()> {
        for (t, s) in params.tensors.iter().zip(self.shadow.iter_mut()) {
            if let Some(s) = s {
                let name = format!("{prefix}.{}", t.name);
                let src = state
                    .get(&name)
                    .ok_or_else(|| invalid(format!("EMA state '{name}' is missing")))?;
                if src.numel() != t.numel() {
                    return Err(Error::ShapeMismatch(format!("EMA state '{name}' has {} values", src.numel())));
                }
                s.clone_from(&src.data);
            }
        }
        Ok(())
    }
}
