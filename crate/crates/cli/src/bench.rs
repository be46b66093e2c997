//! Single-threaded wall-clock timing of butterfly forward and inversion
//! passes.

use std::hint::black_box;
use std::time::Instant;

use butterflow::blockwise::BlockwiseLayer;
use butterflow::butterfly::{ButterflyLayer, Init};
use butterflow::rng;
use butterflow::Result;
use rand::Rng;
use rand_distr::StandardNormal;

pub const WARMUP_REPS: usize = 3;
pub const CSV_HEADER: &str = "op,dim,batch,median_ns,iqr_ns";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchOp {
    /// Forward pass: apply plus log-determinant.
    Matvec,
    /// Inversion pass: inverse apply only.
    Inverse,
    LogDet,
    BlockwiseMatvec,
}

impl BenchOp {
    pub fn as_str(&self) -> &'static str {
        match self {
            BenchOp::Matvec => "matvec",
            BenchOp::Inverse => "inverse",
            BenchOp::LogDet => "logdet",
            BenchOp::BlockwiseMatvec => "blockwise_matvec",
        }
    }
}

impl std::str::FromStr for BenchOp {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "matvec" => Ok(BenchOp::Matvec),
            "inverse" => Ok(BenchOp::Inverse),
            "logdet" => Ok(BenchOp::LogDet),
            "blockwise_matvec" => Ok(BenchOp::BlockwiseMatvec),
            _ => Err(format!("unknown op '{s}' (matvec, inverse, logdet, blockwise_matvec)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchSettings {
    pub reps: usize,
    /// Maximum factor level of the benchmarked layer (clamped to `log2(D/C)`).
    pub levels: usize,
    pub block_size: usize,
}

impl Default for BenchSettings {
    fn default() -> Self {
        Self {
            reps: 20,
            levels: 2,
            block_size: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub op: BenchOp,
    pub dim: usize,
    pub batch: usize,
    pub median_ns: f64,
    pub iqr_ns: f64,
}

impl BenchRow {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.0},{:.0}",
            self.op.as_str(),
            self.dim,
            self.batch,
            self.median_ns,
            self.iqr_ns
        )
    }
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn measure(reps: usize, mut f: impl FnMut()) -> (f64, f64) {
    for _ in 0..WARMUP_REPS {
        f();
    }
    let mut times: Vec<f64> = (0..reps.max(1))
        .map(|_| {
            let t = Instant::now();
            f();
            t.elapsed().as_nanos() as f64
        })
        .collect();
    times.sort_by(f64::total_cmp);
    (quantile(&times, 0.5), quantile(&times, 0.75) - quantile(&times, 0.25))
}

pub fn run(op: BenchOp, dim: usize, batch: usize, settings: &BenchSettings) -> Result<BenchRow> {
    let mut g = rng::seeded(dim as u64);
    let mut inputs: Vec<Vec<f64>> = (0..batch)
        .map(|_| (0..dim).map(|_| g.sample(StandardNormal)).collect())
        .collect();
    let depth = |units: usize| settings.levels.min(units.trailing_zeros() as usize).max(1);
    let (median_ns, iqr_ns) = match op {
        BenchOp::BlockwiseMatvec => {
            let c = settings.block_size;
            let levels: Vec<usize> = (1..=depth(dim / c.max(1))).collect();
            let layer = BlockwiseLayer::<f64>::with_levels(dim, c, &levels, Init::Rotation, 0)?;
            measure(settings.reps, || {
                for x in inputs.iter_mut() {
                    layer.apply_in_place(black_box(x));
                }
            })
        }
        _ => {
            let layer = ButterflyLayer::<f64>::standard(dim, depth(dim), false, Init::Rotation, 0, false)?;
            match op {
                BenchOp::Matvec => measure(settings.reps, || {
                    for x in inputs.iter_mut() {
                        layer.apply_in_place(black_box(x));
                        black_box(layer.log_abs_det());
                    }
                }),
                BenchOp::Inverse => measure(settings.reps, || {
                    let inv = layer.inverse().expect("rotations are invertible");
                    for x in inputs.iter_mut() {
                        inv.apply_in_place(black_box(x));
                    }
                }),
                _ => measure(settings.reps, || {
                    for _ in 0..batch {
                        black_box(black_box(&layer).log_abs_det());
                    }
                }),
            }
        }
    };
    Ok(BenchRow {
        op,
        dim,
        batch,
        median_ns,
        iqr_ns,
    })
}

/// Least-squares slope of `log(time)` against `log(dim)`.
pub fn log_log_slope(rows: &[BenchRow]) -> f64 {
    let pts: Vec<(f64, f64)> = rows.iter().map(|r| ((r.dim as f64).ln(), r.median_ns.ln())).collect();
    let n = pts.len() as f64;
    let (mx, my) = pts.iter().fold((0.0, 0.0), |(a, b), p| (a + p.0 / n, b + p.1 / n));
    let (sxy, sxx) = pts
        .iter()
        .fold((0.0, 0.0), |(a, b), p| (a + (p.0 - mx) * (p.1 - my), b + (p.0 - mx).powi(2)));
    sxy / sxx
}
