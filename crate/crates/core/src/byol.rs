//! Self-supervised pretraining of the spectrogram encoder with online/target networks and EMA
//! target updates, plus frozen-encoder embedding export.

use crate::mel::{make_views, Crop, MelConfig, MelError, MelFrontend};
use crate::nn::{
    l2_normalize, l2_normalize_backward, load_checkpoint, prefixed, save_checkpoint, Adam, AdamConfig, CheckpointError, Encoder,
    EncoderShape, Mlp, Params,
};
use crate::signal_io::PcgRecording;
use ndarray::{concatenate, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum ByolError {
    #[error("checkpoint load error: {0}")]
    CheckpointLoad(String),
    #[error("bad ssl configuration: {0}")]
    BadConfig(String),
    #[error("no recordings to train on")]
    Empty,
    #[error(transparent)]
    Mel(#[from] MelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl From<CheckpointError> for ByolError {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Load(m) => ByolError::CheckpointLoad(m),
            CheckpointError::Io(e) => ByolError::Io(e),
            CheckpointError::Json(e) => ByolError::Json(e),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ByolConfig {
    pub embed_dim: usize,
    pub projector_hidden: usize,
    pub projection_dim: usize,
    pub predictor_hidden: usize,
    pub tau: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam: AdamConfig,
}

impl Default for ByolConfig {
    fn default() -> Self {
        Self {
            embed_dim: 3072,
            projector_hidden: 256,
            projection_dim: 128,
            predictor_hidden: 256,
            tau: 0.99,
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-4,
            adam: AdamConfig::default(),
        }
    }
}

impl ByolConfig {
    pub fn validate(&self) -> Result<(), ByolError> {
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(ByolError::BadConfig(format!("tau {} outside [0, 1]", self.tau)));
        }
        if self.embed_dim == 0 || self.batch_size == 0 || self.projection_dim == 0 {
            return Err(ByolError::BadConfig("dimensions and batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(ByolError::BadConfig("learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// Online branch: encoder, projector and predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct Online {
    pub encoder: Encoder,
    pub projector: Mlp,
    pub predictor: Mlp,
}

impl Params for Online {
    fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut t = prefixed("encoder.", &self.encoder);
        t.extend(prefixed("projector.", &self.projector));
        t.extend(prefixed("predictor.", &self.predictor));
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.encoder.tensors_mut();
        t.extend(self.projector.tensors_mut());
        t.extend(self.predictor.tensors_mut());
        t
    }
}

/// Target branch: no predictor, only moved by [`ByolState::ema_update`].
#[derive(Debug, Clone, PartialEq)]
pub struct Target {
    pub encoder: Encoder,
    pub projector: Mlp,
}

impl Params for Target {
    fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut t = prefixed("encoder.", &self.encoder);
        t.extend(prefixed("projector.", &self.projector));
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.encoder.tensors_mut();
        t.extend(self.projector.tensors_mut());
        t
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ByolState {
    pub online: Online,
    pub target: Target,
    pub tau: f64,
    pub step: u64,
}

/// `|n(p) - n(t)|^2` with unit-L2 normalization; in `[0, 4]`.
pub fn loss_term(p: &[f64], t: &[f64]) -> f64 {
    let (u, _) = l2_normalize(p);
    let (z, _) = l2_normalize(t);
    u.iter().zip(&z).map(|(a, b)| (a - b).powi(2)).sum()
}

/// EMA of every element: `target <- tau * target + (1 - tau) * online`.
pub fn ema(target: &mut dyn Params, online: &dyn Params, tau: f64) {
    let src = online.tensors();
    for (dst, (_, _, s)) in target.tensors_mut().into_iter().zip(src) {
        for (d, &o) in dst.iter_mut().zip(s) {
            *d = tau * *d + (1.0 - tau) * o;
        }
    }
}

impl ByolState {
    pub fn new(shape: EncoderShape, cfg: &ByolConfig, rng: &mut ChaCha8Rng) -> Self {
        let encoder = Encoder::new(shape, rng);
        let projector = Mlp::new(&[shape.embed_dim, cfg.projector_hidden, cfg.projection_dim], rng);
        let predictor = Mlp::new(&[cfg.projection_dim, cfg.predictor_hidden, cfg.projection_dim], rng);
        let target = Target {
            encoder: encoder.clone(),
            projector: projector.clone(),
        };
        Self {
            online: Online {
                encoder,
                projector,
                predictor,
            },
            target,
            tau: cfg.tau,
            step: 0,
        }
    }

    pub fn ema_update(&mut self) {
        ema(&mut self.target, &self.online, self.tau);
    }

    fn stack(&self, v1: &[ArrayView2<f64>], v2: &[ArrayView2<f64>]) -> crate::nn::FeatureMap {
        let all: Vec<ArrayView2<f64>> = v1.iter().chain(v2).copied().collect();
        self.online.encoder.input_map(&all)
    }

    fn target_projection(&self, x: &crate::nn::FeatureMap) -> Array2<f64> {
        self.target.projector.forward(self.target.encoder.embed(x).view())
    }

    /// Mean over the batch of the symmetric loss; `v1[i]` and `v2[i]` are views of one item.
    pub fn loss(&self, v1: &[ArrayView2<f64>], v2: &[ArrayView2<f64>]) -> f64 {
        let x = self.stack(v1, v2);
        let p = self
            .online
            .predictor
            .forward(self.online.projector.forward(self.online.encoder.embed(&x).view()).view());
        let t = self.target_projection(&x);
        symmetric_terms(&p, &t).0
    }

    /// Loss and its gradient with respect to the online parameters; the target is a constant.
    pub fn loss_and_grad(&self, v1: &[ArrayView2<f64>], v2: &[ArrayView2<f64>]) -> (f64, Online) {
        let x = self.stack(v1, v2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (emb, enc_cache) = self.online.encoder.forward(&x);
        let (z, proj_cache) = self.online.projector.forward_train(emb.view(), 0.0, &mut rng);
        let (p, pred_cache) = self.online.predictor.forward_train(z.view(), 0.0, &mut rng);
        let t = self.target_projection(&x);
        let (loss, dp) = symmetric_terms(&p, &t);
        let mut grad = self.online.clone();
        grad.zero();
        let dz = self.online.predictor.backward(&pred_cache, dp.view(), &mut grad.predictor);
        let demb = self.online.projector.backward(&proj_cache, dz.view(), &mut grad.projector);
        self.online.encoder.backward(&enc_cache, demb.view(), &mut grad.encoder);
        (loss, grad)
    }

    /// One Adam step on the online network. The target is not touched.
    pub fn train_step(&mut self, opt: &mut Adam, v1: &[ArrayView2<f64>], v2: &[ArrayView2<f64>], lr: f64) -> f64 {
        let (loss, grad) = self.loss_and_grad(v1, v2);
        opt.step(&mut self.online, &grad, lr);
        self.step += 1;
        loss
    }
}

/// Batch mean of `term(p_i, t_{n+i}) + term(p_{n+i}, t_i)` and its gradient w.r.t. `p`.
fn symmetric_terms(p: &Array2<f64>, t: &Array2<f64>) -> (f64, Array2<f64>) {
    let n2 = p.nrows();
    let n = n2 / 2;
    let mut dp = Array2::zeros(p.dim());
    let mut total = 0.0;
    for i in 0..n2 {
        let j = if i < n { i + n } else { i - n };
        let (u, norm) = l2_normalize(p.row(i).as_slice().unwrap());
        let (zt, _) = l2_normalize(t.row(j).as_slice().unwrap());
        let diff: Vec<f64> = u.iter().zip(&zt).map(|(a, b)| a - b).collect();
        total += diff.iter().map(|d| d * d).sum::<f64>();
        let g: Vec<f64> = diff.iter().map(|d| 2.0 * d / n as f64).collect();
        let gp = l2_normalize_backward(&u, norm, &g);
        dp.row_mut(i).assign(&ndarray::Array1::from(gp));
    }
    (total / n as f64, dp)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainLog {
    /// Mean per-item loss of each epoch.
    pub epoch_loss: Vec<f64>,
    pub steps: u64,
}

/// Deterministic seed for item `item` of epoch `epoch`.
fn item_seed(seed: u64, epoch: usize, item: usize) -> u64 {
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for v in [epoch as u64, item as u64] {
        h = (h ^ v).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h ^= h >> 31;
    }
    h
}

fn checkpoint_config(shape: &EncoderShape, cfg: &ByolConfig, mel: &MelConfig) -> serde_json::Value {
    serde_json::json!({ "encoder": shape, "ssl": cfg, "mel": mel })
}

pub fn save_state(state: &ByolState, shape: &EncoderShape, cfg: &ByolConfig, mel: &MelConfig, path: &Path) -> Result<(), ByolError> {
    let mut t = prefixed("online.", &state.online);
    t.extend(prefixed("target.", &state.target));
    save_checkpoint(path, "byol", checkpoint_config(shape, cfg, mel), &t)?;
    Ok(())
}

pub fn save_encoder(encoder: &Encoder, mel: &MelConfig, path: &Path) -> Result<(), ByolError> {
    let cfg = serde_json::json!({ "encoder": encoder.shape, "mel": mel });
    save_checkpoint(path, "encoder", cfg, &prefixed("encoder.", encoder))?;
    Ok(())
}

/// Loads the encoder from an `encoder`, `byol` (online branch) or `screen` checkpoint, together
/// with the mel configuration it was trained with.
pub fn load_encoder(path: &Path) -> Result<(Encoder, MelConfig), ByolError> {
    let (manifest, map) = load_checkpoint(path)?;
    let prefix = match manifest.kind.as_str() {
        "encoder" | "screen" => "encoder.",
        "byol" => "online.encoder.",
        k => return Err(ByolError::CheckpointLoad(format!("checkpoint kind `{k}` holds no encoder"))),
    };
    let shape: EncoderShape = serde_json::from_value(manifest.config["encoder"].clone())
        .map_err(|e| ByolError::CheckpointLoad(format!("encoder shape: {e}")))?;
    let mel: MelConfig = serde_json::from_value(manifest.config["mel"].clone())
        .map_err(|e| ByolError::CheckpointLoad(format!("mel config: {e}")))?;
    let mut enc = Encoder::new(shape, &mut ChaCha8Rng::seed_from_u64(0));
    enc.load_named(prefix, &map)?;
    Ok((enc, mel))
}

/// Rounds parameters to f32 so the in-memory model equals its reloaded checkpoint.
pub fn quantize(p: &mut dyn Params) {
    for t in p.tensors_mut() {
        t.iter_mut().for_each(|v| *v = *v as f32 as f64);
    }
}

#[derive(Debug, Clone)]
pub enum PretrainInit {
    Random,
    /// Online encoder from a checkpoint; projector and predictor start fresh.
    Checkpoint(std::path::PathBuf),
}

/// BYOL pretraining. Per step: random-crop log-mel, two augmented views, symmetric loss,
/// Adam on the online network, EMA of the target. With `out_dir`, the full state is written to
/// `checkpoint.json` after every epoch.
pub fn pretrain(
    recs: &[PcgRecording],
    mel: &MelConfig,
    cfg: &ByolConfig,
    init: &PretrainInit,
    seed: u64,
    out_dir: Option<&Path>,
) -> Result<(ByolState, PretrainLog), ByolError> {
    cfg.validate()?;
    if recs.is_empty() {
        return Err(ByolError::Empty);
    }
    let frontend = MelFrontend::new(mel)?;
    let shape = EncoderShape::spectrogram(cfg.embed_dim);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = ByolState::new(shape, cfg, &mut rng);
    if let PretrainInit::Checkpoint(path) = init {
        let (enc, _) = load_encoder(path)?;
        if enc.shape != shape {
            return Err(ByolError::CheckpointLoad(format!(
                "checkpoint encoder {:?} does not match configured {:?}",
                enc.shape, shape
            )));
        }
        state.online.encoder = enc.clone();
        state.target.encoder = enc;
        state.target.projector = state.online.projector.clone();
    }
    // resample once; log_mel then only crops
    let recs: Vec<PcgRecording> = recs.par_iter().map(|r| crate::signal_io::resample(r, mel.rate_hz)).collect();
    let mut opt = Adam::new(cfg.adam, &state.online);
    let mut log = PretrainLog {
        epoch_loss: Vec::with_capacity(cfg.epochs),
        steps: 0,
    };
    let mut order: Vec<usize> = (0..recs.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut sum, mut count) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let views: Vec<(Array2<f64>, Array2<f64>)> = batch
                .par_iter()
                .map(|&i| {
                    let mut r = ChaCha8Rng::seed_from_u64(item_seed(seed, epoch, i));
                    let spec = frontend.log_mel(&recs[i], Crop::Random, &mut r);
                    make_views(&spec, mel, &mut r).map(|(a, b)| (a.grid, b.grid))
                })
                .collect::<Result<_, _>>()?;
            let v1: Vec<ArrayView2<f64>> = views.iter().map(|v| v.0.view()).collect();
            let v2: Vec<ArrayView2<f64>> = views.iter().map(|v| v.1.view()).collect();
            let loss = state.train_step(&mut opt, &v1, &v2, cfg.learning_rate);
            state.ema_update();
            sum += loss * batch.len() as f64;
            count += batch.len();
        }
        let mean = sum / count as f64;
        log::info!("pretrain epoch {}/{}: mean loss {mean:.6}", epoch + 1, cfg.epochs);
        log.epoch_loss.push(mean);
        if let Some(dir) = out_dir {
            save_state(&state, &shape, cfg, mel, &dir.join("checkpoint.json"))?;
        }
    }
    log.steps = state.step;
    Ok((state, log))
}

/// Center-crop embeddings of each recording with a frozen encoder, one row per recording.
pub fn encode_frozen(encoder: &Encoder, mel: &MelConfig, recs: &[PcgRecording]) -> Result<Array2<f64>, ByolError> {
    let frontend = MelFrontend::new(mel)?;
    if recs.is_empty() {
        return Ok(Array2::zeros((0, encoder.shape.embed_dim)));
    }
    let chunks: Vec<Array2<f64>> = recs
        .par_chunks(32)
        .map(|chunk| {
            let grids: Vec<Array2<f64>> = chunk.iter().map(|r| frontend.log_mel_eval(r).grid).collect();
            let views: Vec<ArrayView2<f64>> = grids.iter().map(|g| g.view()).collect();
            encoder.embed(&encoder.input_map(&views))
        })
        .collect();
    let views: Vec<_> = chunks.iter().map(|c| c.view()).collect();
    Ok(concatenate(Axis(0), &views).expect("consistent embedding widths"))
}

/// Embedding table CSV `id,e_0,...,e_{d-1}`.
pub fn write_embeddings(ids: &[String], emb: &Array2<f64>, path: &Path) -> Result<(), ByolError> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["id".to_string()];
    header.extend((0..emb.ncols()).map(|i| format!("e_{i}")));
    w.write_record(&header)?;
    for (id, row) in ids.iter().zip(emb.rows()) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(|v| format!("{v:?}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
