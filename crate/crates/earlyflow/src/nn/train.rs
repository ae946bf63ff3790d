//! Training loop: weighted cross-entropy, Adam, length-bucketed batching,
//! optional multi-threaded gradient fan-out.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::{loss, Model, Params};

/// Optimizer and loop hyper-parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            seed: 0,
            shuffle: true,
        }
    }
}

/// Adam moment accumulators, shaped like the parameters.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Params,
    pub v: Params,
    pub step: u64,
}

impl AdamState {
    pub fn new(model: &Model) -> Self {
        Self {
            m: Params::zeros(&model.cfg),
            v: Params::zeros(&model.cfg),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut Params, grads: &Params, state: &mut AdamState, cfg: &TrainConfig) {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let p_blocks = params.blocks_mut();
    let g_blocks = grads.blocks();
    let m_blocks = state.m.blocks_mut();
    let v_blocks = state.v.blocks_mut();
    for (((p, g), m), v) in p_blocks
        .into_iter()
        .zip(g_blocks)
        .zip(m_blocks)
        .zip(v_blocks)
    {
        for i in 0..p.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_epsilon);
        }
    }
}

/// One training example: a flow prefix as a `T×d` matrix, its class, and
/// its sample weight.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub input: Matrix,
    pub label: usize,
    pub weight: f64,
}

/// Worker threads for per-batch gradient fan-out, from
/// `EARLYFLOW_THREADS` (default 1).
pub fn thread_count() -> usize {
    std::env::var("EARLYFLOW_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}

/// Trains the model in place and returns the per-epoch mean weighted loss.
///
/// Deterministic given the seed: shuffling uses a dedicated generator, and
/// batches group samples of equal packet count (no padding — fake packets
/// would shift the pooled statistics). Gradient fan-out reduces with
/// compensated (Kahan) accumulation in a fixed chunk order, so thread
/// count perturbs results by no more than summation rounding.
pub fn train(model: &mut Model, samples: &[TrainSample], cfg: &TrainConfig) -> Vec<f64> {
    assert!(!samples.is_empty(), "training set must be non-empty");
    assert!(cfg.epochs >= 1 && cfg.batch_size >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = AdamState::new(model);
    let threads = thread_count();
    let mut history = Vec::with_capacity(cfg.epochs);

    let mut order: Vec<usize> = (0..samples.len()).collect();
    for _ in 0..cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let mut epoch_loss = 0.0;
        for batch in bucket_batches(&order, samples, cfg.batch_size) {
            let (grads, batch_loss) = batch_gradients(model, samples, &batch, threads);
            epoch_loss += batch_loss;
            adam_step(&mut model.params, &grads, &mut state, cfg);
        }
        history.push(epoch_loss / samples.len() as f64);
    }
    history
}

/// Groups a shuffled index order into batches of samples with equal packet
/// count. Buckets fill in encounter order and flush when full; leftovers
/// flush at the end in ascending-length order.
fn bucket_batches(order: &[usize], samples: &[TrainSample], batch_size: usize) -> Vec<Vec<usize>> {
    let mut buckets: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut batches = Vec::new();
    for &idx in order {
        let t = samples[idx].input.rows;
        let bucket = buckets.entry(t).or_default();
        bucket.push(idx);
        if bucket.len() == batch_size {
            batches.push(std::mem::take(bucket));
        }
    }
    for (_, bucket) in buckets {
        if !bucket.is_empty() {
            batches.push(bucket);
        }
    }
    batches
}

/// Mean gradient over a batch plus the summed weighted loss.
fn batch_gradients(
    model: &Model,
    samples: &[TrainSample],
    batch: &[usize],
    threads: usize,
) -> (Params, f64) {
    let chunk = batch.len().div_ceil(threads.min(batch.len()).max(1));
    let parts: Vec<(Params, f64)> = if threads <= 1 || batch.len() == 1 {
        vec![chunk_gradients(model, samples, batch)]
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = batch
                .chunks(chunk)
                .map(|ids| scope.spawn(move || chunk_gradients(model, samples, ids)))
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        })
    };
    let mut grads = Params::zeros(&model.cfg);
    let mut comp = Params::zeros(&model.cfg);
    let mut total_loss = 0.0;
    for (part, part_loss) in parts {
        total_loss += part_loss;
        kahan_add(&mut grads, &mut comp, &part);
    }
    grads.scale(1.0 / batch.len() as f64);
    (grads, total_loss)
}

fn chunk_gradients(model: &Model, samples: &[TrainSample], ids: &[usize]) -> (Params, f64) {
    let mut acc = Params::zeros(&model.cfg);
    let mut comp = Params::zeros(&model.cfg);
    let mut loss_sum = 0.0;
    for &idx in ids {
        let s = &samples[idx];
        let trace = model
            .forward(s.input.clone())
            .expect("training samples were shape-checked at load");
        loss_sum += loss(&trace, s.label, s.weight);
        let g = model.backward(&trace, s.label, s.weight);
        kahan_add(&mut acc, &mut comp, &g);
    }
    (acc, loss_sum)
}

/// Compensated accumulation: `acc += rhs` with a running error term.
fn kahan_add(acc: &mut Params, comp: &mut Params, rhs: &Params) {
    for ((a, c), r) in acc
        .blocks_mut()
        .into_iter()
        .zip(comp.blocks_mut())
        .zip(rhs.blocks())
    {
        for i in 0..a.len() {
            let y = r[i] - c[i];
            let t = a[i] + y;
            c[i] = (t - a[i]) - y;
            a[i] = t;
        }
    }
}
