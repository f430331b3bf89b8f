use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::network::Denoiser;
use super::{Checkpoint, DiffusionConfig, DiffusionError, Gradients, NormalizationStats, VarianceSchedule, CHECKPOINT_FORMAT};

/// One training record: a costate (or any data vector), its condition and
/// per-example loss weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub x: Vec<f64>,
    pub alpha: f64,
    pub reward: f64,
    /// Objective value, used to discard the worst records before fine-tuning.
    pub j_star: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingReport {
    /// Mean minibatch loss over consecutive windows of steps.
    pub loss_history: Vec<f64>,
    pub steps: usize,
    pub examples: usize,
}

const LOSS_WINDOW: usize = 100;
const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

pub struct Adam {
    m: Gradients,
    v: Gradients,
    t: i32,
    pub learning_rate: f64,
}

impl Adam {
    pub fn new(params: &Denoiser, learning_rate: f64) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
            learning_rate,
        }
    }

    pub fn step(&mut self, params: &mut Denoiser, grads: &Gradients) {
        self.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.t);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t);
        let lr = self.learning_rate;
        for (((p, g), m), v) in params
            .slices_mut()
            .into_iter()
            .zip(grads.slices())
            .zip(self.m.slices_mut())
            .zip(self.v.slices_mut())
        {
            for i in 0..p.len() {
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPS);
            }
        }
    }
}

/// Reward-weighted noise-prediction loss on one minibatch and its gradient.
///
/// `noisy` and `noise` hold one example per column; the loss is
/// `Σ_j w_j ‖ε̂_j − ε_j‖² / (B·d)`.
pub fn batch_loss(
    net: &Denoiser,
    noisy: &DMatrix<f64>,
    steps: &[usize],
    cond: &[Option<f64>],
    noise: &DMatrix<f64>,
    weights: &[f64],
) -> (f64, Gradients) {
    let (pred, cache) = net.forward(noisy, steps, cond);
    let scale = 1.0 / (noisy.len() as f64);
    let mut resid = pred - noise;
    let mut loss = 0.0;
    for (j, mut col) in resid.column_iter_mut().enumerate() {
        loss += weights[j] * col.norm_squared();
        col *= 2.0 * weights[j] * scale;
    }
    let mut grads = net.zeros_like();
    net.backward(&cache, resid, &mut grads);
    (loss * scale, grads)
}

fn check_examples(examples: &[TrainingExample], dim: usize) -> Result<(), DiffusionError> {
    if examples.is_empty() {
        return Err(DiffusionError::EmptyDataset);
    }
    if let Some(e) = examples.iter().find(|e| e.x.len() != dim) {
        return Err(DiffusionError::Dimension {
            expected: dim,
            got: e.x.len(),
        });
    }
    if examples.iter().any(|e| !(e.reward.is_finite() && e.reward >= 0.0)) {
        return Err(DiffusionError::Config("rewards must be finite and non-negative".into()));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn optimize(
    net: &mut Denoiser,
    stats: &NormalizationStats,
    schedule: &VarianceSchedule,
    examples: &[TrainingExample],
    cfg: &DiffusionConfig,
    steps: usize,
    rng: &mut ChaCha8Rng,
) -> TrainingReport {
    let normalized: Vec<Vec<f64>> = examples.iter().map(|e| stats.normalize(&e.x)).collect();
    let dim = stats.dim();
    let b = cfg.batch_size;
    let mut adam = Adam::new(net, cfg.learning_rate);
    let mut report = TrainingReport {
        steps,
        examples: examples.len(),
        ..Default::default()
    };
    let mut window = 0.0;
    let mut in_window = 0;
    for _ in 0..steps {
        let mut noisy = DMatrix::zeros(dim, b);
        let mut noise = DMatrix::zeros(dim, b);
        let mut ns = Vec::with_capacity(b);
        let mut cond = Vec::with_capacity(b);
        let mut weights = Vec::with_capacity(b);
        for j in 0..b {
            let i = rng.random_range(0..examples.len());
            let n = rng.random_range(1..=schedule.n_steps());
            let ab = schedule.alpha_bar(n);
            let (sa, sb) = (ab.sqrt(), (1.0 - ab).sqrt());
            for k in 0..dim {
                let e: f64 = rng.sample(StandardNormal);
                noise[(k, j)] = e;
                noisy[(k, j)] = sa * normalized[i][k] + sb * e;
            }
            let dropped = rng.random::<f64>() < cfg.p_drop;
            cond.push((!dropped).then(|| stats.normalize_alpha(examples[i].alpha)));
            ns.push(n);
            weights.push(examples[i].reward);
        }
        let (loss, grads) = batch_loss(net, &noisy, &ns, &cond, &noise, &weights);
        adam.step(net, &grads);
        window += loss;
        in_window += 1;
        if in_window == LOSS_WINDOW {
            report.loss_history.push(window / in_window as f64);
            window = 0.0;
            in_window = 0;
        }
    }
    if in_window > 0 {
        report.loss_history.push(window / in_window as f64);
    }
    report
}

/// Train a fresh model on `examples`.
pub fn train(examples: &[TrainingExample], cfg: &DiffusionConfig, fingerprint: &str) -> Result<(Checkpoint, TrainingReport), DiffusionError> {
    cfg.validate()?;
    let dim = examples.first().ok_or(DiffusionError::EmptyDataset)?.x.len();
    check_examples(examples, dim)?;
    let stats = NormalizationStats::fit(examples.iter().map(|e| e.x.as_slice()))?;
    let schedule = cfg.schedule()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = Denoiser::init(cfg.dims(dim), &mut rng);
    let report = optimize(&mut net, &stats, &schedule, examples, cfg, cfg.train_steps, &mut rng);
    Ok((
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            config: cfg.clone(),
            schedule,
            stats,
            denoiser: net,
            fingerprint: fingerprint.to_string(),
        },
        report,
    ))
}

/// Drop the `fraction` of records with the largest objective value.
/// Records without an objective are kept.
pub fn filter_worst(examples: &[TrainingExample], fraction: f64) -> Vec<TrainingExample> {
    let with_j = examples.iter().filter(|e| e.j_star.is_some()).count();
    let drop = (with_j as f64 * fraction).floor() as usize;
    let mut order: Vec<usize> = (0..examples.len()).filter(|&i| examples[i].j_star.is_some()).collect();
    // Worst first; stable, so equal values drop in record order.
    order.sort_by(|&a, &b| examples[b].j_star.unwrap().total_cmp(&examples[a].j_star.unwrap()));
    let mut discard = vec![false; examples.len()];
    for &i in order.iter().take(drop) {
        discard[i] = true;
    }
    examples.iter().zip(discard).filter(|(_, d)| !d).map(|(e, _)| e.clone()).collect()
}

/// Continue training `baseline` on reward-weighted `examples`, after
/// discarding the worst records. Normalization is refitted on the kept set.
pub fn finetune(
    baseline: &Checkpoint,
    examples: &[TrainingExample],
    cfg: &DiffusionConfig,
    fingerprint: &str,
) -> Result<(Checkpoint, TrainingReport), DiffusionError> {
    cfg.validate()?;
    let dim = baseline.stats.dim();
    check_examples(examples, dim)?;
    if cfg.dims(dim) != baseline.denoiser.dims {
        return Err(DiffusionError::Config("fine-tuning config does not match the baseline architecture".into()));
    }
    let kept = filter_worst(examples, cfg.finetune_discard);
    check_examples(&kept, dim)?;
    let stats = NormalizationStats::fit(kept.iter().map(|e| e.x.as_slice()))?;
    let schedule = cfg.schedule()?;
    if schedule != baseline.schedule {
        return Err(DiffusionError::Config("fine-tuning schedule differs from the baseline".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xF1AE_7E5E_0000_0001);
    let mut net = baseline.denoiser.clone();
    let report = optimize(&mut net, &stats, &schedule, &kept, cfg, cfg.finetune_steps, &mut rng);
    Ok((
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            config: cfg.clone(),
            schedule,
            stats,
            denoiser: net,
            fingerprint: fingerprint.to_string(),
        },
        report,
    ))
}
