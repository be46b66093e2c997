use super::params::{ParamKind, TensorSink, TensorSource};
use crate::blockwise::{BlockPairGrad, BlockwiseFactor, BlockwiseLayer};
use crate::butterfly::{ButterflyFactor, ButterflyLayer, SegmentedLayer};
use crate::error::{invalid, Result};

/// Learnable linear mixing inside a flow step.
#[derive(Debug, Clone, PartialEq)]
pub enum Mix {
    Naive(ButterflyLayer<f64>),
    Blockwise(BlockwiseLayer<f64>),
    Segmented(SegmentedLayer<f64>),
}

/// Inputs seen by every factor, in storage order.
#[derive(Debug, Clone)]
pub struct MixTrace {
    inputs: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq)]
enum FactorGrads {
    /// Per segment, per factor, per pair.
    Naive(Vec<Vec<Vec<[f64; 4]>>>),
    /// Per factor, per pair: cotangent of the realised `2C x 2C` block.
    Blockwise(Vec<Vec<Vec<f64>>>),
}

/// Gradient accumulator; log-det terms are added at export time, weighted
/// by the number of accumulated samples.
#[derive(Debug, Clone, PartialEq)]
pub struct MixGrad {
    factors: FactorGrads,
    count: f64,
}

fn naive_segments(m: &Mix) -> Vec<&ButterflyLayer<f64>> {
    match m {
        Mix::Naive(l) => vec![l],
        Mix::Segmented(s) => s.segments().iter().collect(),
        Mix::Blockwise(_) => Vec::new(),
    }
}

fn blocks(data: &[f64]) -> Vec<[f64; 4]> {
    data.chunks_exact(4).map(|c| [c[0], c[1], c[2], c[3]]).collect()
}

fn flatten(blocks: &[[f64; 4]]) -> Vec<f64> {
    blocks.iter().flatten().copied().collect()
}

fn strict_lower(n: usize) -> impl Iterator<Item = usize> {
    (0..n).flat_map(move |i| (0..i).map(move |j| i * n + j))
}

fn strict_upper(n: usize) -> impl Iterator<Item = usize> {
    (0..n).flat_map(move |i| (i + 1..n).map(move |j| i * n + j))
}

impl Mix {
    pub fn dim(&self) -> usize {
        match self {
            Mix::Naive(l) => l.dim(),
            Mix::Blockwise(l) => l.dim(),
            Mix::Segmented(s) => s.dim(),
        }
    }

    pub fn log_det(&self) -> f64 {
        match self {
            Mix::Naive(l) => l.log_abs_det(),
            Mix::Blockwise(l) => l.log_det(),
            Mix::Segmented(s) => s.log_abs_det(),
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        match self {
            Mix::Naive(l) => l.apply(x),
            Mix::Blockwise(l) => l.apply(x),
            Mix::Segmented(s) => s.apply(x),
        }
    }

    pub fn inverse(&self, y: &[f64]) -> Result<Vec<f64>> {
        match self {
            Mix::Naive(l) => l.invert_apply(y),
            Mix::Blockwise(l) => l.invert_apply(y),
            Mix::Segmented(s) => s.invert_apply(y),
        }
    }

    pub fn forward_trace(&self, x: &[f64]) -> Result<(Vec<f64>, f64, MixTrace)> {
        if x.len() != self.dim() {
            return Err(invalid(format!("mix input of length {} for dimension {}", x.len(), self.dim())));
        }
        let mut y = x.to_vec();
        let mut inputs = Vec::new();
        match self {
            Mix::Blockwise(l) => {
                let mut seen = vec![Vec::new(); l.factors().len()];
                for (j, f) in l.factors().iter().enumerate().rev() {
                    seen[j] = y.clone();
                    f.apply_in_place(&mut y);
                }
                inputs.push(seen);
            }
            _ => {
                let mut off = 0;
                for seg in naive_segments(self) {
                    let part = &mut y[off..off + seg.dim()];
                    let mut seen = vec![Vec::new(); seg.len()];
                    for (j, f) in seg.factors().iter().enumerate().rev() {
                        seen[j] = part.to_vec();
                        f.apply_in_place(part);
                    }
                    inputs.push(seen);
                    off += seg.dim();
                }
            }
        }
        Ok((y, self.log_det(), MixTrace { inputs }))
    }

    pub fn zero_grad(&self) -> MixGrad {
        let factors = match self {
            Mix::Blockwise(l) => FactorGrads::Blockwise(
                l.factors()
                    .iter()
                    .map(|f| {
                        let c = f.block_size();
                        vec![vec![0.0; 4 * c * c]; f.pairs().len()]
                    })
                    .collect(),
            ),
            _ => FactorGrads::Naive(
                naive_segments(self)
                    .iter()
                    .map(|s| {
                        s.factors()
                            .iter()
                            .map(|f| vec![[0.0; 4]; f.indexing().num_pairs()])
                            .collect()
                    })
                    .collect(),
            ),
        };
        MixGrad { factors, count: 0.0 }
    }

    /// Reverse pass for one sample, including the log-det term.
    pub fn backward(&self, trace: &MixTrace, gy: &[f64], grad: &mut MixGrad) -> Vec<f64> {
        grad.count += 1.0;
        match (self, &mut grad.factors) {
            (Mix::Blockwise(l), FactorGrads::Blockwise(gs)) => {
                let mut g = gy.to_vec();
                for (j, f) in l.factors().iter().enumerate() {
                    g = blockwise_vjp(f, &trace.inputs[0][j], &g, &mut gs[j]);
                }
                g
            }
            (_, FactorGrads::Naive(gs)) => {
                let mut out = Vec::with_capacity(gy.len());
                let mut off = 0;
                for (s, seg) in naive_segments(self).into_iter().enumerate() {
                    let mut g = gy[off..off + seg.dim()].to_vec();
                    for (j, f) in seg.factors().iter().enumerate() {
                        let mut gx = vec![0.0; g.len()];
                        f.vjp(&trace.inputs[s][j], &g, &mut gx, &mut gs[s][j]);
                        g = gx;
                    }
                    out.extend_from_slice(&g);
                    off += seg.dim();
                }
                out
            }
            _ => unreachable!("mix and gradient kinds differ"),
        }
    }

    pub fn export(&self, sink: &mut TensorSink) {
        match self {
            Mix::Naive(l) => export_naive(l, sink, |f, _| factor_weights(f)),
            Mix::Segmented(s) => {
                for (i, seg) in s.segments().iter().enumerate() {
                    export_naive(seg, &mut sink.scope(&format!("s{i}")), |f, _| factor_weights(f));
                }
            }
            Mix::Blockwise(l) => {
                for (j, f) in l.factors().iter().enumerate() {
                    let data: Vec<BlockPairGrad<f64>> = f
                        .pairs()
                        .iter()
                        .map(|p| BlockPairGrad {
                            x: p.x.as_slice().to_vec(),
                            w: p.w.as_slice().to_vec(),
                            y_lower: p.y.lower.clone(),
                            y_upper: p.y.upper.clone(),
                            y_log_s: p.y.log_s.clone(),
                            z_lower: p.z.lower.clone(),
                            z_upper: p.z.upper.clone(),
                            z_log_s: p.z.log_s.clone(),
                        })
                        .collect();
                    export_blockwise(f, &data, &mut sink.scope(&format!("f{j}")), false);
                }
            }
        }
    }

    /// Writes `grad` in the same layout as [`Self::export`].
    pub fn export_grad(&self, grad: &MixGrad, sink: &mut TensorSink) {
        let count = grad.count;
        match (self, &grad.factors) {
            (Mix::Naive(l), FactorGrads::Naive(gs)) => {
                export_naive(l, sink, |f, j| factor_grad(f, &gs[0][j], count));
            }
            (Mix::Segmented(s), FactorGrads::Naive(gs)) => {
                for (i, seg) in s.segments().iter().enumerate() {
                    export_naive(seg, &mut sink.scope(&format!("s{i}")), |f, j| {
                        factor_grad(f, &gs[i][j], count)
                    });
                }
            }
            (Mix::Blockwise(l), FactorGrads::Blockwise(gs)) => {
                for (j, f) in l.factors().iter().enumerate() {
                    let c = f.block_size();
                    let data: Vec<BlockPairGrad<f64>> = f
                        .pairs()
                        .iter()
                        .zip(&gs[j])
                        .map(|(p, gm)| {
                            let m = crate::dense::DenseMatrix::from_fn(2 * c, 2 * c, |r, col| gm[r * 2 * c + col]);
                            let mut g = p.backprop_realized(&m);
                            g.y_log_s.iter_mut().for_each(|v| *v += count);
                            g.z_log_s.iter_mut().for_each(|v| *v += count);
                            g
                        })
                        .collect();
                    export_blockwise(f, &data, &mut sink.scope(&format!("f{j}")), true);
                }
            }
            _ => unreachable!("mix and gradient kinds differ"),
        }
    }

    pub fn import(&mut self, src: &mut TensorSource) -> Result<()> {
        match self {
            Mix::Naive(l) => import_naive(l, src),
            Mix::Segmented(s) => {
                for (i, seg) in s.segments_mut().iter_mut().enumerate() {
                    let mut child = src.scope(&format!("s{i}"));
                    import_naive(seg, &mut child)?;
                    src.sync(child);
                }
                Ok(())
            }
            Mix::Blockwise(l) => {
                for (j, f) in l.factors_mut().iter_mut().enumerate() {
                    let mut child = src.scope(&format!("f{j}"));
                    import_blockwise(f, &mut child)?;
                    src.sync(child);
                }
                Ok(())
            }
        }
    }
}

impl MixGrad {
    pub fn add_assign(&mut self, other: &MixGrad) {
        self.count += other.count;
        match (&mut self.factors, &other.factors) {
            (FactorGrads::Naive(a), FactorGrads::Naive(b)) => {
                for (x, y) in a.iter_mut().flatten().flatten().zip(b.iter().flatten().flatten()) {
                    for i in 0..4 {
                        x[i] += y[i];
                    }
                }
            }
            (FactorGrads::Blockwise(a), FactorGrads::Blockwise(b)) => {
                for (x, y) in a.iter_mut().flatten().zip(b.iter().flatten()) {
                    for (p, q) in x.iter_mut().zip(y) {
                        *p += q;
                    }
                }
            }
            _ => unreachable!("gradient kinds differ"),
        }
    }
}

fn blockwise_vjp(f: &BlockwiseFactor<f64>, x: &[f64], gy: &[f64], gm: &mut [Vec<f64>]) -> Vec<f64> {
    let c = f.block_size();
    let n = 2 * c;
    let mut gx = gy.to_vec();
    let mut v = vec![0.0; n];
    let mut g = vec![0.0; n];
    for (k, m) in f.realized().iter().enumerate() {
        let (op, oq) = f.pair_offsets(k);
        v[..c].copy_from_slice(&x[op..op + c]);
        v[c..].copy_from_slice(&x[oq..oq + c]);
        g[..c].copy_from_slice(&gy[op..op + c]);
        g[c..].copy_from_slice(&gy[oq..oq + c]);
        let acc = &mut gm[k];
        let ms = m.as_slice();
        let mut out = vec![0.0; n];
        for r in 0..n {
            let gr = g[r];
            for col in 0..n {
                acc[r * n + col] += gr * v[col];
                out[col] += ms[r * n + col] * gr;
            }
        }
        gx[op..op + c].copy_from_slice(&out[..c]);
        gx[oq..oq + c].copy_from_slice(&out[c..]);
    }
    gx
}

fn factor_weights(f: &ButterflyFactor<f64>) -> Vec<[f64; 4]> {
    if f.is_tied() {
        f.tied_weights()
    } else {
        f.weights().to_vec()
    }
}

fn factor_grad(f: &ButterflyFactor<f64>, per_pair: &[[f64; 4]], count: f64) -> Vec<[f64; 4]> {
    let mut g = per_pair.to_vec();
    if count != 0.0 {
        f.log_det_grad(count, &mut g);
    }
    if f.is_tied() {
        f.reduce_tied(&g)
    } else {
        g
    }
}

fn export_naive(
    l: &ButterflyLayer<f64>,
    sink: &mut TensorSink,
    data: impl Fn(&ButterflyFactor<f64>, usize) -> Vec<[f64; 4]>,
) {
    for (j, f) in l.factors().iter().enumerate() {
        let w = data(f, j);
        sink.push(
            &format!("f{j}.weights"),
            &[w.len(), 2, 2],
            ParamKind::Butterfly,
            flatten(&w),
        );
    }
}

fn import_naive(l: &mut ButterflyLayer<f64>, src: &mut TensorSource) -> Result<()> {
    for (j, f) in l.factors_mut().iter_mut().enumerate() {
        let n = if f.is_tied() {
            f.indexing().sub_blocks()
        } else {
            f.indexing().num_pairs()
        };
        let w = blocks(src.take(&format!("f{j}.weights"), &[n, 2, 2])?);
        if f.is_tied() {
            f.set_tied_weights(&w)?;
        } else {
            f.set_weights(&w)?;
        }
    }
    Ok(())
}

fn export_blockwise(f: &BlockwiseFactor<f64>, data: &[BlockPairGrad<f64>], sink: &mut TensorSink, zero_buffers: bool) {
    let c = f.block_size();
    let p = f.pairs().len();
    let tri = c * (c - 1) / 2;
    let gather = |get: &dyn Fn(&BlockPairGrad<f64>) -> Vec<f64>| -> Vec<f64> { data.iter().flat_map(get).collect() };
    let b = ParamKind::Butterfly;
    sink.push("x", &[p, c, c], b, gather(&|d| d.x.clone()));
    sink.push("w", &[p, c, c], b, gather(&|d| d.w.clone()));
    sink.push("y_lower", &[p, tri], b, gather(&|d| strict_lower(c).map(|i| d.y_lower[i]).collect()));
    sink.push("y_upper", &[p, tri], b, gather(&|d| strict_upper(c).map(|i| d.y_upper[i]).collect()));
    sink.push("y_log_s", &[p, c], b, gather(&|d| d.y_log_s.clone()));
    sink.push("z_lower", &[p, tri], b, gather(&|d| strict_lower(c).map(|i| d.z_lower[i]).collect()));
    sink.push("z_upper", &[p, tri], b, gather(&|d| strict_upper(c).map(|i| d.z_upper[i]).collect()));
    sink.push("z_log_s", &[p, c], b, gather(&|d| d.z_log_s.clone()));
    let buffer = |v: Vec<f64>| if zero_buffers { vec![0.0; v.len()] } else { v };
    let pairs = f.pairs();
    sink.push(
        "y_perm",
        &[p, c],
        ParamKind::Buffer,
        buffer(pairs.iter().flat_map(|q| q.y.perm.iter().map(|&v| v as f64)).collect()),
    );
    sink.push("y_sign", &[p, c], ParamKind::Buffer, buffer(pairs.iter().flat_map(|q| q.y.sign.clone()).collect()));
    sink.push(
        "z_perm",
        &[p, c],
        ParamKind::Buffer,
        buffer(pairs.iter().flat_map(|q| q.z.perm.iter().map(|&v| v as f64)).collect()),
    );
    sink.push("z_sign", &[p, c], ParamKind::Buffer, buffer(pairs.iter().flat_map(|q| q.z.sign.clone()).collect()));
}

fn import_blockwise(f: &mut BlockwiseFactor<f64>, src: &mut TensorSource) -> Result<()> {
    let c = f.block_size();
    let p = f.pairs().len();
    let tri = c * (c - 1) / 2;
    let x = src.take("x", &[p, c, c])?;
    let w = src.take("w", &[p, c, c])?;
    let yl = src.take("y_lower", &[p, tri])?;
    let yu = src.take("y_upper", &[p, tri])?;
    let ys = src.take("y_log_s", &[p, c])?;
    let zl = src.take("z_lower", &[p, tri])?;
    let zu = src.take("z_upper", &[p, tri])?;
    let zs = src.take("z_log_s", &[p, c])?;
    let yp = src.take("y_perm", &[p, c])?;
    let ysg = src.take("y_sign", &[p, c])?;
    let zp = src.take("z_perm", &[p, c])?;
    let zsg = src.take("z_sign", &[p, c])?;
    let to_perm = |v: &[f64]| -> Result<Vec<usize>> {
        let perm: Vec<usize> = v.iter().map(|&a| a as usize).collect();
        let mut seen = vec![false; v.len()];
        for (&a, &u) in v.iter().zip(&perm) {
            if a != u as f64 || u >= v.len() || std::mem::replace(&mut seen[u], true) {
                return Err(invalid("corrupt LU permutation"));
            }
        }
        Ok(perm)
    };
    let check_sign = |v: &[f64]| -> Result<()> {
        if v.iter().all(|&s| s == 1.0 || s == -1.0) {
            Ok(())
        } else {
            Err(invalid("corrupt LU sign"))
        }
    };
    check_sign(ysg)?;
    check_sign(zsg)?;
    let mut perms = Vec::with_capacity(2 * p);
    for k in 0..p {
        perms.push((to_perm(&yp[k * c..(k + 1) * c])?, to_perm(&zp[k * c..(k + 1) * c])?));
    }
    f.update_pairs(|pairs| {
        for (k, pair) in pairs.iter_mut().enumerate() {
            let cc = c * c;
            pair.x.as_mut_slice().copy_from_slice(&x[k * cc..(k + 1) * cc]);
            pair.w.as_mut_slice().copy_from_slice(&w[k * cc..(k + 1) * cc]);
            for (lu, (l, u, s, sg, perm)) in [
                (&mut pair.y, (yl, yu, ys, ysg, &perms[k].0)),
                (&mut pair.z, (zl, zu, zs, zsg, &perms[k].1)),
            ] {
                for (t, i) in strict_lower(c).enumerate() {
                    lu.lower[i] = l[k * tri + t];
                }
                for (t, i) in strict_upper(c).enumerate() {
                    lu.upper[i] = u[k * tri + t];
                }
                lu.log_s.copy_from_slice(&s[k * c..(k + 1) * c]);
                lu.sign.copy_from_slice(&sg[k * c..(k + 1) * c]);
                lu.perm.clone_from(perm);
            }
        }
    });
    Ok(())
}
