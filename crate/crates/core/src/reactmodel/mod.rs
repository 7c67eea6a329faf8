//! Recurrent variational autoencoder over controller modes and actions.
//!
//! The encoder reads the previous mode and the current state and scores the
//! current mode. A Gumbel-softmax relaxation of that score feeds the decoder,
//! which predicts the action class and the continuous action targets. The
//! encoder-only baseline shares the encoder architecture and trains on the
//! mode cross-entropy alone.

mod io;
pub mod lstm;
mod standardize;

use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::confdet::{OWN_FEATURES, SLOT_WIDTH};
use crate::labeler::LabeledFlight;
use lstm::Net;
pub use standardize::Standardizer;

pub const MODE_COUNT: usize = 3;
pub const CAT_ACTION_COUNT: usize = 3;
pub const CONT_ACTION_COUNT: usize = 4;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("feature dimension mismatch: model expects {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize },
    #[error("training diverged at epoch {epoch}: loss {loss} stayed above {factor}x the initial {initial}")]
    Diverged {
        epoch: usize,
        loss: f64,
        initial: f64,
        factor: f64,
    },
    #[error("empty training set")]
    Empty,
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("{path}: {msg}")]
    Format { path: String, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Vae,
    Encoder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub lstm_layers: usize,
    pub lstm_units: usize,
    pub mode_count: usize,
    pub cat_action_count: usize,
    pub cont_action_count: usize,
    pub gumbel_temperature: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Trajectories per optimiser step.
    pub batch_size: usize,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
    pub divergence_factor: f64,
    pub divergence_patience: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            lstm_layers: 2,
            lstm_units: 64,
            mode_count: MODE_COUNT,
            cat_action_count: CAT_ACTION_COUNT,
            cont_action_count: CONT_ACTION_COUNT,
            gumbel_temperature: 1.0,
            learning_rate: 1e-3,
            epochs: 1000,
            batch_size: 16,
            clip_norm: 5.0,
            divergence_factor: 10.0,
            divergence_patience: 10,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.mode_count != MODE_COUNT
            || self.cat_action_count != CAT_ACTION_COUNT
            || self.cont_action_count != CONT_ACTION_COUNT
        {
            return bad("class counts must be 3 modes, 3 action classes, 4 continuous actions");
        }
        if self.lstm_layers == 0 || self.lstm_units == 0 {
            return bad("lstm_layers and lstm_units must be positive");
        }
        if !(self.gumbel_temperature > 0.0) {
            return bad("gumbel_temperature must be positive");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.clip_norm >= 0.0) {
            return bad("clip_norm must be non-negative");
        }
        Ok(())
    }
}

/// One trajectory as model input and targets (unstandardised).
#[derive(Debug, Clone, PartialEq)]
pub struct SeqData {
    pub features: Array2<f64>,
    pub modes: Vec<usize>,
    pub actions: Vec<usize>,
    pub cont: Array2<f64>,
}

impl SeqData {
    pub fn from_labeled(f: &LabeledFlight) -> Self {
        let n = f.rows.len();
        let dim = f.rows.first().map_or(OWN_FEATURES, |r| r.point.feature_vector().len());
        let mut features = Array2::zeros((n, dim));
        let mut cont = Array2::zeros((n, CONT_ACTION_COUNT));
        for (i, r) in f.rows.iter().enumerate() {
            for (j, v) in r.point.feature_vector().into_iter().enumerate() {
                features[[i, j]] = v;
            }
            for (j, v) in r.cont.to_array().into_iter().enumerate() {
                cont[[i, j]] = v;
            }
        }
        Self {
            features,
            modes: f.rows.iter().map(|r| r.mode.index()).collect(),
            actions: f.rows.iter().map(|r| r.action.index()).collect(),
            cont,
        }
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }
}

/// Neighbour slots implied by a feature width.
pub fn slots_for_dim(dim: usize) -> Option<usize> {
    dim.checked_sub(OWN_FEATURES)
        .filter(|b| b % SLOT_WIDTH == 0)
        .map(|b| b / SLOT_WIDTH)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub ce_enc: f64,
    pub ce_dec: f64,
    pub mse: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub loss: LossParts,
}

/// Softmax of one row, numerically stable.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn log_softmax_at(logits: &[f64], k: usize) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    logits[k] - lse
}

/// Standard Gumbel draw.
pub fn gumbel_noise<R: Rng>(rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    let u = u.max(f64::MIN_POSITIVE);
    -(-u.ln()).ln()
}

/// Relaxed one-hot sample `softmax((logits + g) / tau)` for given noise.
pub fn gumbel_softmax_with_noise(logits: &[f64], noise: &[f64], tau: f64) -> Vec<f64> {
    let u: Vec<f64> = logits.iter().zip(noise).map(|(l, g)| (l + g) / tau).collect();
    softmax(&u)
}

pub fn gumbel_softmax_sample<R: Rng>(logits: &[f64], tau: f64, rng: &mut R) -> Vec<f64> {
    let noise: Vec<f64> = logits.iter().map(|_| gumbel_noise(rng)).collect();
    gumbel_softmax_with_noise(logits, &noise, tau)
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// A padded, time-major batch of standardised sequences.
#[derive(Debug, Clone)]
pub struct Batch {
    pub steps: usize,
    pub batch: usize,
    /// Features only, `steps * batch` rows.
    pub feats: Array2<f64>,
    /// Teacher-forced previous mode one-hot followed by features.
    pub x_enc: Array2<f64>,
    pub modes: Vec<usize>,
    pub actions: Vec<usize>,
    pub cont: Array2<f64>,
    pub mask: Vec<bool>,
    pub rows: usize,
}

impl Batch {
    pub fn new(seqs: &[&SeqData]) -> Self {
        let batch = seqs.len();
        let steps = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
        let dim = seqs.first().map_or(0, |s| s.features.ncols());
        let n = steps * batch;
        let mut feats = Array2::zeros((n, dim));
        let mut x_enc = Array2::zeros((n, MODE_COUNT + dim));
        let mut modes = vec![0; n];
        let mut actions = vec![0; n];
        let mut cont = Array2::zeros((n, CONT_ACTION_COUNT));
        let mut mask = vec![false; n];
        for (b, sq) in seqs.iter().enumerate() {
            for t in 0..sq.len() {
                let row = t * batch + b;
                let prev = if t == 0 { 0 } else { sq.modes[t - 1] };
                x_enc[[row, prev]] = 1.0;
                feats.row_mut(row).assign(&sq.features.row(t));
                x_enc.slice_mut(s![row, MODE_COUNT..]).assign(&sq.features.row(t));
                modes[row] = sq.modes[t];
                actions[row] = sq.actions[t];
                cont.row_mut(row).assign(&sq.cont.row(t));
                mask[row] = true;
            }
        }
        let rows = mask.iter().filter(|m| **m).count();
        Self {
            steps,
            batch,
            feats,
            x_enc,
            modes,
            actions,
            cont,
            mask,
            rows,
        }
    }
}

/// Recurrent state of one network for step-by-step inference.
#[derive(Debug, Clone)]
pub struct RecState {
    h: Vec<Array2<f64>>,
    c: Vec<Array2<f64>>,
}

impl RecState {
    fn new(net: &Net) -> Self {
        let hd = net.layers[0].hidden();
        let n = net.layers.len();
        Self {
            h: vec![Array2::zeros((1, hd)); n],
            c: vec![Array2::zeros((1, hd)); n],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub mode_probs: [f64; MODE_COUNT],
    pub mode: usize,
    pub action_probs: [f64; CAT_ACTION_COUNT],
    pub action: usize,
    /// Continuous action estimates in original units.
    pub cont: [f64; CONT_ACTION_COUNT],
}

#[derive(Debug, Clone, Copy)]
pub enum Feedback<'a> {
    /// Previous mode from the given ground truth.
    TeacherForced(&'a [usize]),
    /// Previous mode from the model's own argmax; the first step uses C0.
    SelfFed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReactModel {
    pub config: ModelConfig,
    pub kind: ModelKind,
    pub standardizer: Standardizer,
    pub encoder: Net,
    pub decoder: Option<Net>,
}

/// Adam over a flat view of every parameter tensor.
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr,
        }
    }

    fn step(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>, scale: f64) {
        self.t += 1;
        let bc1 = 1.0 - Self::B1.powi(self.t);
        let bc2 = 1.0 - Self::B2.powi(self.t);
        let mut k = 0;
        for (p, g) in params.into_iter().zip(grads) {
            for (pi, gi) in p.iter_mut().zip(g) {
                let g = gi * scale;
                self.m[k] = Self::B1 * self.m[k] + (1.0 - Self::B1) * g;
                self.v[k] = Self::B2 * self.v[k] + (1.0 - Self::B2) * g * g;
                let mh = self.m[k] / bc1;
                let vh = self.v[k] / bc2;
                *pi -= self.lr * mh / (vh.sqrt() + Self::EPS);
                k += 1;
            }
        }
    }
}

impl ReactModel {
    /// Fresh parameters for `dim` input features.
    pub fn init(config: &ModelConfig, kind: ModelKind, standardizer: Standardizer, dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let input = MODE_COUNT + dim;
        let (h, l) = (config.lstm_units, config.lstm_layers);
        let encoder = Net::init(input, h, l, MODE_COUNT, rng);
        let decoder = match kind {
            ModelKind::Vae => Some(Net::init(input, h, l, CAT_ACTION_COUNT + CONT_ACTION_COUNT, rng)),
            ModelKind::Encoder => None,
        };
        Self {
            config: config.clone(),
            kind,
            standardizer,
            encoder,
            decoder,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.encoder.input() - MODE_COUNT
    }

    fn tensors(&self) -> Vec<&[f64]> {
        let mut v = self.encoder.tensors();
        if let Some(d) = &self.decoder {
            v.extend(d.tensors());
        }
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.encoder.tensors_mut();
        if let Some(d) = &mut self.decoder {
            v.extend(d.tensors_mut());
        }
        v
    }

    /// Flat copy of all parameters, encoder first.
    pub fn flat_params(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        let mut k = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.copy_from_slice(&flat[k..k + n]);
            k += n;
        }
    }

    /// Loss and parameter gradients (flat, same order as `flat_params`)
    /// for a standardised batch and fixed Gumbel noise (`rows x 3`).
    pub fn loss_and_grad(&self, batch: &Batch, noise: &Array2<f64>) -> (LossParts, Vec<f64>) {
        let (parts, ge, gd) = self.loss_impl(batch, noise, true);
        let mut flat = ge.expect("gradients requested").tensors().concat();
        if let Some(gd) = gd {
            flat.extend(gd.tensors().concat());
        }
        (parts, flat)
    }

    pub fn loss(&self, batch: &Batch, noise: &Array2<f64>) -> LossParts {
        self.loss_impl(batch, noise, false).0
    }

    fn loss_impl(&self, batch: &Batch, noise: &Array2<f64>, grads: bool) -> (LossParts, Option<Net>, Option<Net>) {
        let n = batch.rows.max(1) as f64;
        let tau = self.config.gumbel_temperature;
        let (logits, enc_cache) = self.encoder.forward(batch.x_enc.clone(), batch.steps, batch.batch);
        let rows = logits.nrows();
        let mut d_enc = Array2::zeros((rows, MODE_COUNT));
        let mut parts = LossParts::default();
        for r in 0..rows {
            if !batch.mask[r] {
                continue;
            }
            let l = logits.row(r).to_vec();
            parts.ce_enc -= log_softmax_at(&l, batch.modes[r]);
            let p = softmax(&l);
            for k in 0..MODE_COUNT {
                d_enc[[r, k]] = (p[k] - if k == batch.modes[r] { 1.0 } else { 0.0 }) / n;
            }
        }
        parts.ce_enc /= n;

        let mut dec_grad = None;
        if let Some(dec) = &self.decoder {
            let dim = batch.feats.ncols();
            let mut x_dec = Array2::zeros((rows, MODE_COUNT + dim));
            let mut z = Array2::zeros((rows, MODE_COUNT));
            for r in 0..rows {
                let zr = gumbel_softmax_with_noise(&logits.row(r).to_vec(), &noise.row(r).to_vec(), tau);
                for k in 0..MODE_COUNT {
                    z[[r, k]] = zr[k];
                }
            }
            x_dec.slice_mut(s![.., ..MODE_COUNT]).assign(&z);
            x_dec.slice_mut(s![.., MODE_COUNT..]).assign(&batch.feats);
            let (out, dec_cache) = dec.forward(x_dec, batch.steps, batch.batch);
            let mut d_out = Array2::zeros(out.raw_dim());
            for r in 0..rows {
                if !batch.mask[r] {
                    continue;
                }
                let l: Vec<f64> = (0..CAT_ACTION_COUNT).map(|k| out[[r, k]]).collect();
                parts.ce_dec -= log_softmax_at(&l, batch.actions[r]);
                let q = softmax(&l);
                for k in 0..CAT_ACTION_COUNT {
                    d_out[[r, k]] = (q[k] - if k == batch.actions[r] { 1.0 } else { 0.0 }) / n;
                }
                for k in 0..CONT_ACTION_COUNT {
                    let e = out[[r, CAT_ACTION_COUNT + k]] - batch.cont[[r, k]];
                    parts.mse += e * e;
                    d_out[[r, CAT_ACTION_COUNT + k]] = 2.0 * e / (CONT_ACTION_COUNT as f64 * n);
                }
            }
            parts.ce_dec /= n;
            parts.mse /= CONT_ACTION_COUNT as f64 * n;
            if grads {
                let mut gd = dec.zeros_like();
                let dx = dec.backward(&dec_cache, &d_out, &mut gd);
                // Through the relaxed sample into the encoder logits.
                for r in 0..rows {
                    let dot: f64 = (0..MODE_COUNT).map(|k| z[[r, k]] * dx[[r, k]]).sum();
                    for k in 0..MODE_COUNT {
                        d_enc[[r, k]] += z[[r, k]] * (dx[[r, k]] - dot) / tau;
                    }
                }
                dec_grad = Some(gd);
            }
        }
        parts.total = parts.ce_enc + parts.ce_dec + parts.mse;
        if !grads {
            return (parts, None, None);
        }
        let mut ge = self.encoder.zeros_like();
        self.encoder.backward(&enc_cache, &d_enc, &mut ge);
        (parts, Some(ge), dec_grad)
    }

    fn check_dim(&self, got: usize) -> Result<(), ModelError> {
        let expected = self.feature_dim();
        if got != expected {
            return Err(ModelError::Dimension { expected, got });
        }
        Ok(())
    }

    fn run_step(net: &Net, head_in: &[f64], x_std: &[f64], state: &mut RecState) -> Vec<f64> {
        let l0 = &net.layers[0];
        let mut x = Array2::zeros((1, l0.input()));
        for (k, v) in head_in.iter().chain(x_std).enumerate() {
            x[[0, k]] = *v;
        }
        for (k, layer) in net.layers.iter().enumerate() {
            let mut pre = layer.project(&x.view());
            layer.step(&mut pre.view_mut(), &mut state.h[k], &mut state.c[k]);
            x = state.h[k].clone();
        }
        net.head.forward(&x.view()).row(0).to_vec()
    }

    pub fn new_encoder_state(&self) -> RecState {
        RecState::new(&self.encoder)
    }

    pub fn new_decoder_state(&self) -> Option<RecState> {
        self.decoder.as_ref().map(RecState::new)
    }

    /// One encoder step on a standardised feature vector.
    pub fn encoder_step(&self, prev_mode: usize, x_std: &[f64], state: &mut RecState) -> Result<[f64; MODE_COUNT], ModelError> {
        self.check_dim(x_std.len())?;
        let mut onehot = [0.0; MODE_COUNT];
        onehot[prev_mode] = 1.0;
        let out = Self::run_step(&self.encoder, &onehot, x_std, state);
        Ok([out[0], out[1], out[2]])
    }

    /// One decoder step: action-class logits and standardised continuous
    /// estimates. `None` for the encoder-only baseline.
    pub fn decoder_step(
        &self,
        mode: &[f64; MODE_COUNT],
        x_std: &[f64],
        state: &mut RecState,
    ) -> Result<Option<([f64; CAT_ACTION_COUNT], [f64; CONT_ACTION_COUNT])>, ModelError> {
        self.check_dim(x_std.len())?;
        let Some(dec) = &self.decoder else {
            return Ok(None);
        };
        let out = Self::run_step(dec, mode, x_std, state);
        Ok(Some(([out[0], out[1], out[2]], [out[3], out[4], out[5], out[6]])))
    }

    /// Predictions for one trajectory of raw feature rows.
    pub fn predict(&self, features: &Array2<f64>, feedback: Feedback<'_>) -> Result<Vec<PredictionRow>, ModelError> {
        self.check_dim(features.ncols())?;
        let x = self.standardizer.apply(features);
        let mut enc = self.new_encoder_state();
        let mut dec = self.new_decoder_state();
        let mut prev = 0;
        let mut out = Vec::with_capacity(x.nrows());
        for t in 0..x.nrows() {
            let row = x.row(t).to_vec();
            if let Feedback::TeacherForced(truth) = feedback {
                prev = if t == 0 { 0 } else { truth[t - 1] };
            }
            let logits = self.encoder_step(prev, &row, &mut enc)?;
            let p = softmax(&logits);
            let mode = argmax(&p);
            let mut onehot = [0.0; MODE_COUNT];
            onehot[mode] = 1.0;
            let (action_probs, cont) = match dec.as_mut() {
                Some(state) => {
                    let (al, c) = self.decoder_step(&onehot, &row, state)?.expect("decoder present");
                    let q = softmax(&al);
                    ([q[0], q[1], q[2]], self.standardizer.unapply_cont(&c))
                }
                None => ([1.0, 0.0, 0.0], [0.0; CONT_ACTION_COUNT]),
            };
            out.push(PredictionRow {
                mode_probs: [p[0], p[1], p[2]],
                mode,
                action: argmax(&action_probs),
                action_probs,
                cont,
            });
            prev = mode;
        }
        Ok(out)
    }

    /// Loss over whole sequences with noise drawn from `seed`.
    pub fn evaluate_loss(&self, data: &[SeqData], seed: u64) -> LossParts {
        let std: Vec<SeqData> = data.iter().map(|s| self.standardizer.apply_seq(s)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut acc = LossParts::default();
        let mut rows = 0usize;
        for chunk in std.chunks(self.config.batch_size) {
            let refs: Vec<&SeqData> = chunk.iter().collect();
            let b = Batch::new(&refs);
            let noise = Array2::from_shape_fn((b.steps * b.batch, MODE_COUNT), |_| gumbel_noise(&mut rng));
            let l = self.loss(&b, &noise);
            let w = b.rows as f64;
            acc.total += l.total * w;
            acc.ce_enc += l.ce_enc * w;
            acc.ce_dec += l.ce_dec * w;
            acc.mse += l.mse * w;
            rows += b.rows;
        }
        let n = rows.max(1) as f64;
        LossParts {
            total: acc.total / n,
            ce_enc: acc.ce_enc / n,
            ce_dec: acc.ce_dec / n,
            mse: acc.mse / n,
        }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), ModelError> {
        io::save(self, path)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ModelError> {
        io::load(path)
    }
}

/// Train a model. Deterministic for a given config (including seed).
pub fn train(data: &[SeqData], config: &ModelConfig, kind: ModelKind) -> Result<(ReactModel, Vec<EpochLoss>), ModelError> {
    config.validate()?;
    let data: Vec<&SeqData> = data.iter().filter(|s| !s.is_empty()).collect();
    if data.is_empty() {
        return Err(ModelError::Empty);
    }
    let dim = data[0].features.ncols();
    for s in &data {
        if s.features.ncols() != dim {
            return Err(ModelError::Dimension {
                expected: dim,
                got: s.features.ncols(),
            });
        }
    }
    let standardizer = Standardizer::fit(data.iter().copied(), dim);
    let std: Vec<SeqData> = data.iter().map(|s| standardizer.apply_seq(s)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = ReactModel::init(config, kind, standardizer, dim, &mut rng);
    let mut adam = Adam::new(model.flat_params().len(), config.learning_rate);
    let mut curve = Vec::with_capacity(config.epochs + 1);

    let initial = model.evaluate_loss_std(&std, &mut rng);
    curve.push(EpochLoss { epoch: 0, loss: initial });
    let mut above = 0;
    let mut order: Vec<usize> = (0..std.len()).collect();
    for epoch in 1..=config.epochs {
        shuffle(&mut order, &mut rng);
        let mut acc = LossParts::default();
        let mut rows = 0usize;
        for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
            let refs: Vec<&SeqData> = chunk.iter().map(|&i| &std[i]).collect();
            let b = Batch::new(&refs);
            let noise = Array2::from_shape_fn((b.steps * b.batch, MODE_COUNT), |_| gumbel_noise(&mut rng));
            let (l, grad) = model.loss_and_grad(&b, &noise);
            if !l.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(ModelError::NonFinite { epoch, batch: bi });
            }
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            let scale = if config.clip_norm > 0.0 && norm > config.clip_norm {
                config.clip_norm / norm
            } else {
                1.0
            };
            let grads = split_like(&grad, &model);
            adam.step(model.tensors_mut(), grads.iter().map(Vec::as_slice).collect(), scale);
            let w = b.rows as f64;
            acc.total += l.total * w;
            acc.ce_enc += l.ce_enc * w;
            acc.ce_dec += l.ce_dec * w;
            acc.mse += l.mse * w;
            rows += b.rows;
        }
        let n = rows.max(1) as f64;
        let loss = LossParts {
            total: acc.total / n,
            ce_enc: acc.ce_enc / n,
            ce_dec: acc.ce_dec / n,
            mse: acc.mse / n,
        };
        curve.push(EpochLoss { epoch, loss });
        log::debug!("epoch {epoch}: loss {:.5}", loss.total);
        if loss.total > config.divergence_factor * initial.total {
            above += 1;
            if above >= config.divergence_patience {
                return Err(ModelError::Diverged {
                    epoch,
                    loss: loss.total,
                    initial: initial.total,
                    factor: config.divergence_factor,
                });
            }
        } else {
            above = 0;
        }
    }
    Ok((model, curve))
}

fn split_like(flat: &[f64], model: &ReactModel) -> Vec<Vec<f64>> {
    let mut k = 0;
    model
        .tensors()
        .iter()
        .map(|t| {
            let v = flat[k..k + t.len()].to_vec();
            k += t.len();
            v
        })
        .collect()
}

fn shuffle<R: Rng>(v: &mut [usize], rng: &mut R) {
    for i in (1..v.len()).rev() {
        let j = rng.random_range(0..=i);
        v.swap(i, j);
    }
}

impl ReactModel {
    fn evaluate_loss_std(&self, std: &[SeqData], rng: &mut ChaCha8Rng) -> LossParts {
        let mut acc = LossParts::default();
        let mut rows = 0usize;
        for chunk in std.chunks(self.config.batch_size) {
            let refs: Vec<&SeqData> = chunk.iter().collect();
            let b = Batch::new(&refs);
            let noise = Array2::from_shape_fn((b.steps * b.batch, MODE_COUNT), |_| gumbel_noise(rng));
            let l = self.loss(&b, &noise);
            let w = b.rows as f64;
            acc.total += l.total * w;
            acc.ce_enc += l.ce_enc * w;
            acc.ce_dec += l.ce_dec * w;
            acc.mse += l.mse * w;
            rows += b.rows;
        }
        let n = rows.max(1) as f64;
        LossParts {
            total: acc.total / n,
            ce_enc: acc.ce_enc / n,
            ce_dec: acc.ce_dec / n,
            mse: acc.mse / n,
        }
    }

    /// Structural parameter shapes of the encoder network.
    pub fn encoder_shapes(&self) -> Vec<Vec<usize>> {
        self.encoder.shapes()
    }
}

/// Write a loss curve as CSV.
pub fn loss_curve_csv(curve: &[EpochLoss]) -> String {
    let mut s = String::from("epoch,loss,ce_enc,ce_dec,mse\n");
    for e in curve {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            e.epoch, e.loss.total, e.loss.ce_enc, e.loss.ce_dec, e.loss.mse
        ));
    }
    s
}

#[cfg(test)]
mod tests;
