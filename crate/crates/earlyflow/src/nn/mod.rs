//! The flow classifier: a from-scratch 1-D convolutional network over
//! per-packet byte vectors.
//!
//! Pipeline (forward): conv kernel-size-1 (32 channels) → ReLU → layer
//! normalization over channels per time step → temporal average pool
//! (window 2, stride 2, same padding) → global average pool → dense 64
//! with ReLU → dense C → softmax.
//!
//! Everything is hand-rolled in 64-bit floats so the analytic gradients
//! can be validated against central finite differences to tight
//! tolerances. A 32-bit inference path exists for the monitor; it must
//! agree with the 64-bit path within 1e-4 in probabilities.

mod f32path;
mod io;
pub mod layers;
mod matrix;
mod train;

pub use f32path::ModelF32;
pub use io::{load_model, save_model, ModelFormatError};
pub use matrix::Matrix;
pub use train::{thread_count, train, AdamState, TrainConfig, TrainSample};

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::preprocess::PacketVector;
use layers::*;

/// Input dimension or packet-count disagreement between a model and the
/// data handed to it.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("shape mismatch: {context}: expected {expected}, got {got}")]
pub struct ShapeMismatch {
    pub context: &'static str,
    pub expected: usize,
    pub got: usize,
}

/// Architecture hyper-parameters. `channels` and `hidden` default to the
/// published 32/64; tests shrink them to keep finite-difference sweeps
/// cheap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub class_count: usize,
    pub channels: usize,
    pub hidden: usize,
    pub ln_epsilon: f64,
    /// Class names, index-aligned with label ids.
    pub classes: Vec<String>,
}

impl ModelConfig {
    /// Standard architecture for the given input dimension and classes.
    pub fn new(input_dim: usize, classes: Vec<String>) -> Self {
        Self {
            input_dim,
            class_count: classes.len(),
            channels: 32,
            hidden: 64,
            ln_epsilon: 1e-5,
            classes,
        }
    }

    /// Total number of trainable scalars:
    /// conv (d·ch + ch) + layer norm (2·ch) + dense1 (ch·hid + hid) +
    /// output (hid·C + C).
    pub fn parameter_count(&self) -> usize {
        let (d, ch, hid, c) = (self.input_dim, self.channels, self.hidden, self.class_count);
        (d * ch + ch) + 2 * ch + (ch * hid + hid) + (hid * c + c)
    }
}

/// All trainable parameters. Gradients and Adam moments reuse this shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub conv_w: Matrix,
    pub conv_b: Vec<f64>,
    pub ln_gain: Vec<f64>,
    pub ln_shift: Vec<f64>,
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

impl Params {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        Self {
            conv_w: Matrix::zeros(cfg.channels, cfg.input_dim),
            conv_b: vec![0.0; cfg.channels],
            ln_gain: vec![0.0; cfg.channels],
            ln_shift: vec![0.0; cfg.channels],
            w1: Matrix::zeros(cfg.hidden, cfg.channels),
            b1: vec![0.0; cfg.hidden],
            w2: Matrix::zeros(cfg.class_count, cfg.hidden),
            b2: vec![0.0; cfg.class_count],
        }
    }

    /// The eight parameter blocks in serialization order.
    pub fn blocks(&self) -> [&[f64]; 8] {
        [
            &self.conv_w.data,
            &self.conv_b,
            &self.ln_gain,
            &self.ln_shift,
            &self.w1.data,
            &self.b1,
            &self.w2.data,
            &self.b2,
        ]
    }

    pub fn blocks_mut(&mut self) -> [&mut Vec<f64>; 8] {
        [
            &mut self.conv_w.data,
            &mut self.conv_b,
            &mut self.ln_gain,
            &mut self.ln_shift,
            &mut self.w1.data,
            &mut self.b1,
            &mut self.w2.data,
            &mut self.b2,
        ]
    }

    /// Exhaustive count of stored scalars.
    pub fn scalar_count(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    /// `self += rhs`, block by block.
    pub fn add_assign(&mut self, rhs: &Params) {
        for (dst, src) in self.blocks_mut().into_iter().zip(rhs.blocks()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for block in self.blocks_mut() {
            for v in block.iter_mut() {
                *v *= c;
            }
        }
    }
}

/// The model: architecture plus parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub cfg: ModelConfig,
    pub params: Params,
}

/// Per-layer activations retained for backpropagation, plus the output
/// distribution.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub x: Matrix,
    pub z1: Matrix,
    pub xhat: Matrix,
    pub inv_std: Vec<f64>,
    pub y: Matrix,
    pub pooled: Matrix,
    pub g: Vec<f64>,
    pub h_pre: Vec<f64>,
    pub h: Vec<f64>,
    pub logits: Vec<f64>,
    pub probabilities: Vec<f64>,
}

impl Model {
    /// Fresh model with fan-scaled uniform weights (limit
    /// √(6/(fan_in+fan_out))), zero biases, layer-norm gain 1 / shift 0.
    /// Deterministic in `seed`.
    pub fn new(cfg: ModelConfig, seed: u64) -> Self {
        assert!(cfg.class_count >= 2, "need at least two classes");
        assert!(cfg.input_dim >= 1, "input dimension must be positive");
        assert_eq!(cfg.classes.len(), cfg.class_count);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Params::zeros(&cfg);
        let mut fill = |m: &mut Matrix, fan_in: usize, fan_out: usize| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit);
            for v in &mut m.data {
                *v = dist.sample(&mut rng);
            }
        };
        fill(&mut params.conv_w, cfg.input_dim, cfg.channels);
        fill(&mut params.w1, cfg.channels, cfg.hidden);
        fill(&mut params.w2, cfg.hidden, cfg.class_count);
        for v in &mut params.ln_gain {
            *v = 1.0;
        }
        Self { cfg, params }
    }

    pub fn parameter_count(&self) -> usize {
        self.cfg.parameter_count()
    }

    /// Converts vectorized packets into the `T×d` input matrix, checking
    /// dimensions.
    pub fn input_matrix(&self, packets: &[PacketVector]) -> Result<Matrix, ShapeMismatch> {
        if packets.is_empty() {
            return Err(ShapeMismatch {
                context: "flow length",
                expected: 1,
                got: 0,
            });
        }
        let mut x = Matrix::zeros(packets.len(), self.cfg.input_dim);
        for (t, pkt) in packets.iter().enumerate() {
            if pkt.dim() != self.cfg.input_dim {
                return Err(ShapeMismatch {
                    context: "packet vector dimension",
                    expected: self.cfg.input_dim,
                    got: pkt.dim(),
                });
            }
            for (slot, &v) in x.row_mut(t).iter_mut().zip(&pkt.values) {
                *slot = v as f64;
            }
        }
        Ok(x)
    }

    /// Full forward pass over a `T×d` input.
    pub fn forward(&self, x: Matrix) -> Result<ForwardTrace, ShapeMismatch> {
        if x.rows == 0 {
            return Err(ShapeMismatch {
                context: "flow length",
                expected: 1,
                got: 0,
            });
        }
        if x.cols != self.cfg.input_dim {
            return Err(ShapeMismatch {
                context: "input dimension",
                expected: self.cfg.input_dim,
                got: x.cols,
            });
        }
        let p = &self.params;
        let z1 = conv1x1_forward(&x, &p.conv_w, &p.conv_b);
        let a1 = relu_forward(&z1);
        let (y, xhat, inv_std) = layernorm_forward(&a1, &p.ln_gain, &p.ln_shift, self.cfg.ln_epsilon);
        let pooled = avgpool2_forward(&y);
        let g = gap_forward(&pooled);
        let h_pre = dense_forward(&g, &p.w1, &p.b1);
        let h = relu_vec_forward(&h_pre);
        let logits = dense_forward(&h, &p.w2, &p.b2);
        let probabilities = softmax(&logits);
        Ok(ForwardTrace {
            x,
            z1,
            xhat,
            inv_std,
            y,
            pooled,
            g,
            h_pre,
            h,
            logits,
            probabilities,
        })
    }

    /// Forward pass straight from vectorized packets.
    pub fn forward_packets(&self, packets: &[PacketVector]) -> Result<ForwardTrace, ShapeMismatch> {
        self.forward(self.input_matrix(packets)?)
    }

    /// Probabilities only, without keeping the trace.
    pub fn probabilities(&self, packets: &[PacketVector]) -> Result<Vec<f64>, ShapeMismatch> {
        Ok(self.forward_packets(packets)?.probabilities)
    }

    /// Gradients of `loss(trace, label, weight)` w.r.t. every parameter.
    pub fn backward(&self, trace: &ForwardTrace, label: usize, sample_weight: f64) -> Params {
        let p = &self.params;
        let dprobs = loss_grad(&trace.probabilities, label, sample_weight);
        let dlogits = softmax_backward(&trace.probabilities, &dprobs);
        let (dw2, db2, dh) = dense_backward(&trace.h, &p.w2, &dlogits);
        let dh_pre = relu_vec_backward(&trace.h_pre, &dh);
        let (dw1, db1, dg) = dense_backward(&trace.g, &p.w1, &dh_pre);
        let dpooled = gap_backward(trace.pooled.rows, &dg);
        let dy = avgpool2_backward(trace.y.rows, &dpooled);
        let (da1, dgain, dshift) = layernorm_backward(&trace.xhat, &trace.inv_std, &p.ln_gain, &dy);
        let dz1 = relu_backward(&trace.z1, &da1);
        let (dconv_w, dconv_b) = conv1x1_backward(&trace.x, &dz1);
        Params {
            conv_w: dconv_w,
            conv_b: dconv_b,
            ln_gain: dgain,
            ln_shift: dshift,
            w1: dw1,
            b1: db1,
            w2: dw2,
            b2: db2,
        }
    }

    /// Per-packet embedding: conv → ReLU → layer norm for a single time
    /// step. Because the kernel size is 1 and normalization is per step,
    /// a packet's embedding never depends on its neighbors — this is what
    /// makes incremental per-packet inference possible.
    pub fn embed_packet(&self, packet: &PacketVector) -> Result<Vec<f64>, ShapeMismatch> {
        if packet.dim() != self.cfg.input_dim {
            return Err(ShapeMismatch {
                context: "packet vector dimension",
                expected: self.cfg.input_dim,
                got: packet.dim(),
            });
        }
        let p = &self.params;
        let ch = self.cfg.channels;
        let mut a = vec![0.0; ch];
        for (k, slot) in a.iter_mut().enumerate() {
            let wk = p.conv_w.row(k);
            let mut acc = p.conv_b[k];
            for (&xv, &wv) in packet.values.iter().zip(wk) {
                acc += xv as f64 * wv;
            }
            *slot = acc.max(0.0);
        }
        let n = ch as f64;
        let mean = a.iter().sum::<f64>() / n;
        let var = a.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv_std = 1.0 / (var + self.cfg.ln_epsilon).sqrt();
        for (c, v) in a.iter_mut().enumerate() {
            *v = p.ln_gain[c] * ((*v - mean) * inv_std) + p.ln_shift[c];
        }
        Ok(a)
    }

    /// Classification head over an already-global-pooled feature vector.
    pub fn head_probabilities(&self, g: &[f64]) -> Vec<f64> {
        let p = &self.params;
        let h = relu_vec_forward(&dense_forward(g, &p.w1, &p.b1));
        softmax(&dense_forward(&h, &p.w2, &p.b2))
    }
}

/// Weighted categorical cross-entropy: −w·ln(p_label), with the
/// probability clamped below at 1e-12.
pub fn loss(trace: &ForwardTrace, label: usize, sample_weight: f64) -> f64 {
    loss_from_probabilities(&trace.probabilities, label, sample_weight)
}

pub fn loss_from_probabilities(probs: &[f64], label: usize, sample_weight: f64) -> f64 {
    -sample_weight * probs[label].max(1e-12).ln()
}

/// Gradient of the clamped loss in probability space. Consistent with the
/// clamp: once p_label falls below the floor the loss is constant, so the
/// gradient is zero.
fn loss_grad(probs: &[f64], label: usize, sample_weight: f64) -> Vec<f64> {
    let mut d = vec![0.0; probs.len()];
    if probs[label] > 1e-12 {
        d[label] = -sample_weight / probs[label];
    }
    d
}
