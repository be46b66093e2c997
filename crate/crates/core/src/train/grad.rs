use crate::error::{invalid, Result};
use crate::flow::{FlowModel, ParamTable};

/// Samples per gradient chunk. Chunks are reduced in index order, so the
/// result does not depend on the number of threads.
const CHUNK: usize = 8;

/// Thread cap from `BFLW_THREADS`, 1 when unset or invalid.
pub fn threads_from_env() -> usize {
    match std::env::var("BFLW_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => n,
            _ => {
                log::warn!("ignoring BFLW_THREADS={v:?}, expected a positive integer");
                1
            }
        },
        Err(_) => 1,
    }
}

fn chunk_grad(model: &FlowModel, xs: &[Vec<f64>]) -> Result<(f64, ParamTable)> {
    let mut g = model.zero_grad();
    let mut total = 0.0;
    for x in xs {
        total += model.accumulate_grad(x, &mut g)?;
    }
    Ok((total, model.grad_table(&g)))
}

/// Mean negative log-likelihood (nats per sample) of `batch` and its exact
/// gradient with respect to every trainable parameter.
pub fn backward(model: &FlowModel, batch: &[Vec<f64>], threads: usize) -> Result<(f64, ParamTable)> {
    if batch.is_empty() {
        return Err(invalid("empty batch"));
    }
    let chunks: Vec<&[Vec<f64>]> = batch.chunks(CHUNK).collect();
    let threads = threads.max(1).min(chunks.len());
    let results: Vec<Result<(f64, ParamTable)>> = if threads == 1 {
        chunks.iter().map(|c| chunk_grad(model, c)).collect()
    } else {
        let per = chunks.len().div_ceil(threads);
        std::thread::scope(|s| {
            let handles: Vec<_> = chunks
                .chunks(per)
                .map(|group| s.spawn(move || group.iter().map(|c| chunk_grad(model, c)).collect::<Vec<_>>()))
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("gradient worker panicked"))
                .collect()
        })
    };
    let mut total = 0.0;
    let mut grad: Option<ParamTable> = None;
    for r in results {
        let (t, g) = r?;
        total += t;
        match &mut grad {
            None => grad = Some(g),
            Some(acc) => acc.axpy(1.0, &g),
        }
    }
    let mut grad = grad.expect("at least one chunk");
    let n = batch.len() as f64;
    grad.scale(-1.0 / n);
    Ok((-total / n, grad))
}
