use crate::error::{invalid, Error, Result};
use crate::flow::{ParamKind, ParamTable, Tensor};

/// Adam moments for the tensors of one parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub group: ParamKind,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    /// Indices into the parameter table covered by this group.
    indices: Vec<usize>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &ParamTable, group: ParamKind) -> Self {
        let indices: Vec<usize> = params
            .tensors
            .iter()
            .enumerate()
            .filter(|(_, t)| t.kind == group && t.is_trainable())
            .map(|(i, _)| i)
            .collect();
        let zeros = |i: &usize| vec![0.0; params.tensors[*i].numel()];
        Self {
            group,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: indices.iter().map(zeros).collect(),
            v: indices.iter().map(zeros).collect(),
            indices,
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// Squared norm of this group's gradients.
    pub fn grad_sq_norm(&self, grads: &ParamTable) -> f64 {
        self.indices
            .iter()
            .flat_map(|&i| grads.tensors[i].data.iter())
            .map(|g| g * g)
            .sum()
    }

    /// One bias-corrected Adam update `p -= lr * m_hat / (sqrt(v_hat) + eps)`.
    /// Nothing is modified when any gradient in the group is non-finite.
    pub fn step(&mut self, params: &mut ParamTable, grads: &ParamTable, lr: f64) -> Result<()> {
        params.check_layout(grads)?;
        for &i in &self.indices {
            let g = &grads.tensors[i];
            if g.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient { name: g.name.clone() });
            }
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for (k, &i) in self.indices.iter().enumerate() {
            let p = &mut params.tensors[i].data;
            let g = &grads.tensors[i].data;
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for j in 0..p.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mh = m[j] / c1;
                let vh = v[j] / c2;
                p[j] -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }

    /// Moments and step counter as buffers named `{prefix}.m.<param>`,
    /// `{prefix}.v.<param>` and `{prefix}.step`.
    pub fn export(&self, params: &ParamTable, prefix: &str, out: &mut Vec<Tensor>) {
        out.push(Tensor {
            name: format!("{prefix}.step"),
            shape: vec![1],
            kind: ParamKind::Buffer,
            data: vec![self.step as f64],
        });
        for (which, moments) in [("m", &self.m), ("v", &self.v)] {
            for (k, &i) in self.indices.iter().enumerate() {
                let t = &params.tensors[i];
                out.push(Tensor {
                    name: format!("{prefix}.{which}.{}", t.name),
                    shape: t.shape.clone(),
                    kind: ParamKind::Buffer,
                    data: moments[k].clone(),
                });
            }
        }
    }

    pub fn import(&mut self, params: &ParamTable, prefix: &str, state: &ParamTable) -> Result<()> {
        let find = |name: String, len: usize| -> Result<Vec<f64>> {
            let t = state
                .get(&name)
                .ok_or_else(|| invalid(format!("optimizer state '{name}' is missing")))?;
            if t.numel() != len {
                return Err(Error::ShapeMismatch(format!("optimizer state '{name}' has {} values", t.numel())));
            }
            Ok(t.data.clone())
        };
        let step = find(format!("{prefix}.step"), 1)?[0];
        if step < 0.0 || step.fract() != 0.0 {
            return Err(invalid(format!("bad optimizer step {step}")));
        }
        for (k, &i) in self.indices.iter().enumerate() {
            let t = &params.tensors[i];
            self.m[k] = find(format!("{prefix}.m.{}", t.name), t.numel())?;
            self.v[k] = find(format!("{prefix}.v.{}", t.name), t.numel())?;
        }
        self.step = step as u64;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(value: f64) -> ParamTable {
        ParamTable {
            tensors: vec![Tensor {
                name: "w".into(),
                shape: vec![1],
                kind: ParamKind::Backbone,
                data: vec![value],
            }],
        }
    }

    #[test]
    fn zero_gradient_keeps_parameters() {
        let mut p = scalar(1.5);
        let mut s = AdamState::new(&p, ParamKind::Backbone);
        s.step(&mut p, &scalar(0.0), 0.1).unwrap();
        assert_eq!(p.tensors[0].data[0], 1.5);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = scalar(0.0);
        let mut s = AdamState::new(&p, ParamKind::Backbone);
        s.step(&mut p, &scalar(1.0), 1e-3).unwrap();
        let expected = -1e-3 * 1.0 / (1.0 + 1e-8);
        assert!((p.tensors[0].data[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn two_step_recursion() {
        let (lr, g) = (0.01, 0.3);
        let mut p = scalar(0.0);
        let mut s = AdamState::new(&p, ParamKind::Backbone);
        s.step(&mut p, &scalar(g), lr).unwrap();
        s.step(&mut p, &scalar(g), lr).unwrap();
        let mut x = 0.0;
        let (mut m, mut v) = (0.0, 0.0);
        for t in 1..=2 {
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            x -= lr * mh / (vh.sqrt() + 1e-8);
        }
        assert!((p.tensors[0].data[0] - x).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_leaves_state_alone() {
        let mut p = scalar(2.0);
        let mut s = AdamState::new(&p, ParamKind::Backbone);
        let before = s.clone();
        let err = s.step(&mut p, &scalar(f64::NAN), 0.1).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { .. }));
        assert_eq!(s, before);
        assert_eq!(p.tensors[0].data[0], 2.0);
    }

    #[test]
    fn other_groups_are_ignored() {
        let mut p = scalar(1.0);
        let mut s = AdamState::new(&p, ParamKind::Butterfly);
        s.step(&mut p, &scalar(5.0), 0.1).unwrap();
        assert_eq!(p.tensors[0].data[0], 1.0);
    }

    #[test]
    fn state_round_trip() {
        let mut p = scalar(0.0);
        let mut s = AdamState::new(&p, ParamKind::Backbone);
        s.step(&mut p, &scalar(0.7), 0.1).unwrap();
        let mut v = Vec::new();
        s.export(&p, "opt.backbone", &mut v);
        let mut t = AdamState::new(&p, ParamKind::Backbone);
        t.import(&p, "opt.backbone", &ParamTable { tensors: v }).unwrap();
        assert_eq!(s, t);
    }
}
