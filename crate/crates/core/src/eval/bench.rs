use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{score_batch, ReidModel};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub batch_size: usize,
    pub n_points: usize,
    pub warmup: usize,
    pub n_trials: usize,
    /// Wall time of each timed trial, warmup excluded.
    pub samples_ms: Vec<f64>,
    pub mean_ms: f64,
    /// Sample standard deviation over `sqrt(n_trials)`.
    pub stderr_ms: f64,
    pub pairs_per_sec: f64,
    pub threads: usize,
}

/// Times [`score_batch`] on random clouds.
pub fn bench(model: &ReidModel, batch_size: usize, n_trials: usize, warmup: usize, seed: u64) -> Result<BenchReport> {
    if batch_size == 0 || n_trials < 2 {
        return Err(Error::Config("bench needs batch_size >= 1 and at least 2 trials".into()));
    }
    let n = model.n_points();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cloud = || Tensor::new(vec![n, 3], (0..3 * n).map(|_| rng.gen_range(-1.0f32..1.0)).collect());
    let pairs = (0..batch_size)
        .map(|_| Ok((cloud()?, cloud()?)))
        .collect::<Result<Vec<_>>>()?;

    for _ in 0..warmup {
        score_batch(model, &pairs)?;
    }
    let mut samples_ms = Vec::with_capacity(n_trials);
    for _ in 0..n_trials {
        let t = Instant::now();
        std::hint::black_box(score_batch(model, &pairs)?);
        samples_ms.push(t.elapsed().as_secs_f64() * 1e3);
    }
    let k = n_trials as f64;
    let mean_ms = samples_ms.iter().sum::<f64>() / k;
    let var = samples_ms.iter().map(|s| (s - mean_ms).powi(2)).sum::<f64>() / (k - 1.0);
    Ok(BenchReport {
        batch_size,
        n_points: n,
        warmup,
        n_trials,
        mean_ms,
        stderr_ms: var.sqrt() / k.sqrt(),
        pairs_per_sec: batch_size as f64 / (mean_ms / 1e3),
        threads: rayon::current_num_threads(),
        samples_ms,
    })
}
