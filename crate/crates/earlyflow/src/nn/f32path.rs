//! 32-bit inference path. Training stays in f64 for gradient-check
//! fidelity; inference can run the same pipeline in f32 (half the memory
//! traffic). The two paths must agree within 1e-4 in probabilities.

use super::{Model, ShapeMismatch};
use crate::preprocess::PacketVector;

/// Single-precision copy of a trained model, forward-only.
#[derive(Debug, Clone)]
pub struct ModelF32 {
    input_dim: usize,
    channels: usize,
    ln_epsilon: f32,
    conv_w: Vec<f32>,
    conv_b: Vec<f32>,
    ln_gain: Vec<f32>,
    ln_shift: Vec<f32>,
    w1: Vec<f32>,
    b1: Vec<f32>,
    w2: Vec<f32>,
    b2: Vec<f32>,
    hidden: usize,
    class_count: usize,
}

impl ModelF32 {
    pub fn from_model(m: &Model) -> Self {
        let cast = |v: &[f64]| v.iter().map(|&x| x as f32).collect::<Vec<f32>>();
        Self {
            input_dim: m.cfg.input_dim,
            channels: m.cfg.channels,
            ln_epsilon: m.cfg.ln_epsilon as f32,
            conv_w: cast(&m.params.conv_w.data),
            conv_b: cast(&m.params.conv_b),
            ln_gain: cast(&m.params.ln_gain),
            ln_shift: cast(&m.params.ln_shift),
            w1: cast(&m.params.w1.data),
            b1: cast(&m.params.b1),
            w2: cast(&m.params.w2.data),
            b2: cast(&m.params.b2),
            hidden: m.cfg.hidden,
            class_count: m.cfg.class_count,
        }
    }

    pub fn probabilities(&self, packets: &[PacketVector]) -> Result<Vec<f32>, ShapeMismatch> {
        if packets.is_empty() {
            return Err(ShapeMismatch {
                context: "flow length",
                expected: 1,
                got: 0,
            });
        }
        let ch = self.channels;
        // Per-packet embeddings (conv k=1 → ReLU → layer norm).
        let mut embedded = Vec::with_capacity(packets.len());
        for pkt in packets {
            if pkt.dim() != self.input_dim {
                return Err(ShapeMismatch {
                    context: "packet vector dimension",
                    expected: self.input_dim,
                    got: pkt.dim(),
                });
            }
            let mut e = vec![0.0f32; ch];
            for (k, slot) in e.iter_mut().enumerate() {
                let wk = &self.conv_w[k * self.input_dim..(k + 1) * self.input_dim];
                let mut acc = self.conv_b[k];
                for (&x, &w) in pkt.values.iter().zip(wk) {
                    acc += x * w;
                }
                *slot = acc.max(0.0);
            }
            let n = ch as f32;
            let mean = e.iter().sum::<f32>() / n;
            let var = e.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / n;
            let inv_std = 1.0 / (var + self.ln_epsilon).sqrt();
            for (c, v) in e.iter_mut().enumerate() {
                *v = self.ln_gain[c] * ((*v - mean) * inv_std) + self.ln_shift[c];
            }
            embedded.push(e);
        }
        // Average pool (window 2, stride 2) then global average.
        let p = embedded.len().div_ceil(2);
        let mut g = vec![0.0f32; ch];
        for i in 0..p {
            let lo = 2 * i;
            let hi = (lo + 2).min(embedded.len());
            let div = (hi - lo) as f32;
            for c in 0..ch {
                let mut acc = 0.0;
                for row in &embedded[lo..hi] {
                    acc += row[c];
                }
                g[c] += acc / div;
            }
        }
        for v in &mut g {
            *v /= p as f32;
        }
        // Dense head.
        let mut h = vec![0.0f32; self.hidden];
        for (k, slot) in h.iter_mut().enumerate() {
            let wk = &self.w1[k * ch..(k + 1) * ch];
            let acc: f32 = wk.iter().zip(&g).map(|(&w, &x)| w * x).sum();
            *slot = (acc + self.b1[k]).max(0.0);
        }
        let mut logits = vec![0.0f32; self.class_count];
        for (k, slot) in logits.iter_mut().enumerate() {
            let wk = &self.w2[k * self.hidden..(k + 1) * self.hidden];
            let acc: f32 = wk.iter().zip(&h).map(|(&w, &x)| w * x).sum();
            *slot = acc + self.b2[k];
        }
        let max = logits.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let mut exps: Vec<f32> = logits.iter().map(|&v| (v - max).exp()).collect();
        let sum: f32 = exps.iter().sum();
        for v in &mut exps {
            *v /= sum;
        }
        Ok(exps)
    }
}
