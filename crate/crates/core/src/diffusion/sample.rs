use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::{Checkpoint, Denoiser, PosteriorVariance};
use crate::rng::step_rng;

const CHUNK: usize = 256;

/// Guided noise prediction `(1 + w)·ε(x, n, α) − w·ε(x, n, ∅)`, one column
/// per sample.
pub fn cfg_predict(net: &Denoiser, x: &DMatrix<f64>, steps: &[usize], alpha_norm: f64, w: f64) -> DMatrix<f64> {
    let b = x.ncols();
    let cond = net.predict(x, steps, &vec![Some(alpha_norm); b]);
    let uncond = net.predict(x, steps, &vec![None; b]);
    cond * (1.0 + w) - uncond * w
}

/// Draw `count` samples at condition `alpha` with guidance weight `w`.
/// Sample `i` uses its own random stream, so the output does not depend on
/// how the work is split across threads.
pub fn sample(ck: &Checkpoint, alpha: f64, w: f64, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let dim = ck.stats.dim();
    let a = ck.stats.normalize_alpha(alpha);
    let s = &ck.schedule;
    let n_steps = s.n_steps();
    let indices: Vec<usize> = (0..count).collect();
    indices
        .par_chunks(CHUNK)
        .flat_map_iter(|chunk| {
            let mut rngs: Vec<_> = chunk.iter().map(|&i| step_rng(seed, i, 0)).collect();
            let b = chunk.len();
            let mut x = DMatrix::from_fn(dim, b, |_, _| 0.0);
            for (j, rng) in rngs.iter_mut().enumerate() {
                for k in 0..dim {
                    x[(k, j)] = rng.sample(StandardNormal);
                }
            }
            for n in (1..=n_steps).rev() {
                let eps = cfg_predict(&ck.denoiser, &x, &vec![n; b], a, w);
                let ab = s.alpha_bar(n);
                let coef = s.beta(n) / (1.0 - ab).sqrt();
                let inv_sqrt_alpha = 1.0 / s.alpha(n).sqrt();
                x = (x - eps * coef) * inv_sqrt_alpha;
                if n > 1 {
                    let var = match ck.config.posterior_variance {
                        PosteriorVariance::Beta => s.beta(n),
                        PosteriorVariance::BetaTilde => (1.0 - s.alpha_bar(n - 1)) / (1.0 - ab) * s.beta(n),
                    };
                    let sd = var.sqrt();
                    for (j, rng) in rngs.iter_mut().enumerate() {
                        for k in 0..dim {
                            let xi: f64 = rng.sample(StandardNormal);
                            x[(k, j)] += sd * xi;
                        }
                    }
                }
            }
            let stats = &ck.stats;
            (0..b).map(move |j| stats.denormalize(x.column(j).as_slice())).collect::<Vec<_>>()
        })
        .collect()
}
