use super::{encode_demographics, AcBmiCutoffs, DemographicRecord, ScreenError, DEMO_DIM};
use crate::byol::quantize;
use crate::mel::{Crop, MelConfig, MelFrontend};
use crate::nn::{prefixed, softmax, Adam, AdamConfig, Encoder, Mlp, Params};
use crate::signal_io::PcgRecording;
use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Fusion {
    #[serde(rename = "audio")]
    Audio,
    #[serde(rename = "audio+demo")]
    AudioDemo,
}

impl Fusion {
    pub fn input_dim(self, audio_dim: usize) -> usize {
        match self {
            Fusion::Audio => audio_dim,
            Fusion::AudioDemo => audio_dim + DEMO_DIM,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    Frozen,
    Finetune,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeadConfig {
    pub hidden: usize,
    pub dropout: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Learning rate is multiplied by `decay_factor` every `decay_every` epochs.
    pub decay_every: usize,
    pub decay_factor: f64,
    pub adam: AdamConfig,
    /// Z-score head inputs with statistics of the training inputs.
    pub standardize: bool,
    pub acbmi_cutoffs: AcBmiCutoffs,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            hidden: 256,
            dropout: 0.5,
            epochs: 20,
            batch_size: 32,
            learning_rate: 1e-4,
            decay_every: 5,
            decay_factor: 0.1,
            adam: AdamConfig::default(),
            standardize: true,
            acbmi_cutoffs: AcBmiCutoffs::default(),
        }
    }
}

impl HeadConfig {
    /// Learning rate in effect during 1-based `epoch`.
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        let k = (epoch.max(1) - 1) / self.decay_every.max(1);
        self.learning_rate * self.decay_factor.powi(k as i32)
    }

    pub fn validate(&self) -> Result<(), ScreenError> {
        self.acbmi_cutoffs.validate()?;
        if !(0.0..1.0).contains(&self.dropout) || self.batch_size == 0 || self.hidden == 0 || !(self.learning_rate > 0.0) {
            return Err(ScreenError::BadConfig("need dropout in [0, 1), positive batch, hidden and learning rate".into()));
        }
        Ok(())
    }
}

/// Concatenation `[audio, demo]`.
pub fn fuse(audio: &[f64], demo: &[f64], audio_dim: usize) -> Result<Vec<f64>, ScreenError> {
    if audio.len() != audio_dim {
        return Err(ScreenError::DimMismatch {
            expected: audio_dim,
            got: audio.len(),
        });
    }
    if demo.len() != DEMO_DIM {
        return Err(ScreenError::DimMismatch {
            expected: DEMO_DIM,
            got: demo.len(),
        });
    }
    let mut v = audio.to_vec();
    v.extend_from_slice(demo);
    Ok(v)
}

/// Builds the head input matrix for a fusion mode; `demo` is required for `AudioDemo`.
pub fn head_inputs(
    audio: ArrayView2<f64>,
    demo: Option<&[DemographicRecord]>,
    fusion: Fusion,
    cutoffs: &AcBmiCutoffs,
) -> Result<Array2<f64>, ScreenError> {
    match (fusion, demo) {
        (Fusion::Audio, d) => {
            if d.is_some() {
                log::warn!("unimodal model: demographics ignored");
            }
            Ok(audio.to_owned())
        }
        (Fusion::AudioDemo, None) => Err(ScreenError::ModalityMismatch("multimodal model needs demographics".into())),
        (Fusion::AudioDemo, Some(d)) => {
            if d.len() != audio.nrows() {
                return Err(ScreenError::DimMismatch {
                    expected: audio.nrows(),
                    got: d.len(),
                });
            }
            let d_audio = audio.ncols();
            let mut out = Array2::zeros((audio.nrows(), d_audio + DEMO_DIM));
            for (i, (row, rec)) in audio.rows().into_iter().zip(d).enumerate() {
                let fused = fuse(row.as_slice().unwrap_or(&row.to_vec()), &encode_demographics(rec, cutoffs), d_audio)?;
                out.row_mut(i).assign(&ndarray::Array1::from(fused));
            }
            Ok(out)
        }
    }
}

/// Fixed per-column affine map `(x - mean) / std` in front of the head.
#[derive(Debug, Clone, PartialEq)]
pub struct InputScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl InputScaler {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Column means and population standard deviations, rounded to checkpoint precision.
    /// Constant columns keep unit scale.
    pub fn fit(x: ArrayView2<f64>) -> Self {
        let mut s = Self::identity(x.ncols());
        if x.nrows() == 0 {
            return s;
        }
        for (j, col) in x.columns().into_iter().enumerate() {
            let m = col.mean().unwrap_or(0.0);
            let sd = col.std(0.0);
            s.mean[j] = m;
            s.std[j] = if sd > 1e-8 { sd } else { 1.0 };
        }
        quantize(&mut s);
        s
    }

    pub fn apply(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = x.to_owned();
        for mut row in out.rows_mut() {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        out
    }

    /// Gradient with respect to the unscaled input.
    pub fn backward(&self, dy: ArrayView2<f64>) -> Array2<f64> {
        let mut out = dy.to_owned();
        for mut row in out.rows_mut() {
            for (v, s) in row.iter_mut().zip(&self.std) {
                *v /= s;
            }
        }
        out
    }
}

impl Params for InputScaler {
    fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        vec![
            ("mean".into(), vec![self.mean.len()], &self.mean[..]),
            ("std".into(), vec![self.std.len()], &self.std[..]),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.mean[..], &mut self.std[..]]
    }
}

/// Classification head: input scaling, then `input -> hidden -> hidden -> 2` with relu and
/// dropout on hidden layers.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadModel {
    pub fusion: Fusion,
    pub audio_dim: usize,
    pub scaler: InputScaler,
    pub mlp: Mlp,
}

impl HeadModel {
    pub fn new(audio_dim: usize, fusion: Fusion, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let d = fusion.input_dim(audio_dim);
        Self {
            fusion,
            audio_dim,
            scaler: InputScaler::identity(d),
            mlp: Mlp::new(&[d, hidden, hidden, 2], rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.fusion.input_dim(self.audio_dim)
    }

    pub fn logits(&self, x: ArrayView2<f64>) -> Result<Array2<f64>, ScreenError> {
        if x.ncols() != self.input_dim() {
            return Err(ScreenError::DimMismatch {
                expected: self.input_dim(),
                got: x.ncols(),
            });
        }
        Ok(self.mlp.forward(self.scaler.apply(x).view()))
    }

    /// `p_abnormal` per row.
    pub fn predict_proba(&self, x: ArrayView2<f64>) -> Result<Vec<f64>, ScreenError> {
        Ok(self.logits(x)?.rows().into_iter().map(|r| softmax(&r.to_vec())[1]).collect())
    }
}

/// Abnormal (1) unless normal is strictly more probable.
pub fn label_from_p(p_abnormal: f64) -> u8 {
    (p_abnormal >= 0.5) as u8
}

/// Mean cross-entropy over rows and its gradient with respect to the logits.
pub fn cross_entropy(logits: &Array2<f64>, y: &[u8]) -> (f64, Array2<f64>) {
    let n = logits.nrows() as f64;
    let mut d = Array2::zeros(logits.dim());
    let mut loss = 0.0;
    for (i, row) in logits.rows().into_iter().enumerate() {
        let p = softmax(row.as_slice().unwrap());
        let t = y[i] as usize;
        loss -= p[t].max(1e-300).ln();
        for k in 0..2 {
            d[[i, k]] = (p[k] - if k == t { 1.0 } else { 0.0 }) / n;
        }
    }
    (loss / n, d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadTrainLog {
    pub epoch_loss: Vec<f64>,
    pub epoch_lr: Vec<f64>,
}

fn check_labels(y: &[u8]) -> Result<(), ScreenError> {
    if y.is_empty() {
        return Err(ScreenError::Empty);
    }
    if y.iter().all(|&v| v == y[0]) {
        return Err(ScreenError::SingleClass);
    }
    Ok(())
}

/// Frozen-mode training on precomputed (possibly fused) head inputs.
pub fn train_head(
    x: ArrayView2<f64>,
    y: &[u8],
    audio_dim: usize,
    fusion: Fusion,
    cfg: &HeadConfig,
    seed: u64,
) -> Result<(HeadModel, HeadTrainLog), ScreenError> {
    cfg.validate()?;
    check_labels(y)?;
    if x.nrows() != y.len() {
        return Err(ScreenError::DimMismatch {
            expected: y.len(),
            got: x.nrows(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut head = HeadModel::new(audio_dim, fusion, cfg.hidden, &mut rng);
    if x.ncols() != head.input_dim() {
        return Err(ScreenError::DimMismatch {
            expected: head.input_dim(),
            got: x.ncols(),
        });
    }
    if cfg.standardize {
        head.scaler = InputScaler::fit(x);
    }
    let x = head.scaler.apply(x);
    let mut opt = Adam::new(cfg.adam, &head.mlp);
    let mut log = HeadTrainLog {
        epoch_loss: Vec::new(),
        epoch_lr: Vec::new(),
    };
    let mut order: Vec<usize> = (0..y.len()).collect();
    for epoch in 1..=cfg.epochs {
        let lr = cfg.lr_at_epoch(epoch);
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let xb = x.select(Axis(0), batch);
            let yb: Vec<u8> = batch.iter().map(|&i| y[i]).collect();
            let (logits, cache) = head.mlp.forward_train(xb.view(), cfg.dropout, &mut rng);
            let (loss, d) = cross_entropy(&logits, &yb);
            let mut grad = head.mlp.clone();
            grad.zero();
            head.mlp.backward(&cache, d.view(), &mut grad);
            opt.step(&mut head.mlp, &grad, lr);
            sum += loss * batch.len() as f64;
        }
        let mean = sum / y.len() as f64;
        log::info!("head epoch {epoch}/{}: lr {lr:e}, mean loss {mean:.6}", cfg.epochs);
        log.epoch_loss.push(mean);
        log.epoch_lr.push(lr);
    }
    Ok((head, log))
}

struct Joint<'a> {
    encoder: &'a mut Encoder,
    mlp: &'a mut Mlp,
}

impl Params for Joint<'_> {
    fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut t = prefixed("encoder.", &*self.encoder);
        t.extend(prefixed("head.", &*self.mlp));
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.encoder.tensors_mut();
        t.extend(self.mlp.tensors_mut());
        t
    }
}

/// Joint training of encoder and head from recordings (random-crop spectrograms per epoch).
#[allow(clippy::too_many_arguments)]
pub fn train_finetune(
    encoder: &Encoder,
    mel: &MelConfig,
    recs: &[PcgRecording],
    demo: Option<&[DemographicRecord]>,
    y: &[u8],
    fusion: Fusion,
    cfg: &HeadConfig,
    seed: u64,
) -> Result<(HeadModel, Encoder, HeadTrainLog), ScreenError> {
    cfg.validate()?;
    check_labels(y)?;
    if recs.len() != y.len() {
        return Err(ScreenError::DimMismatch {
            expected: y.len(),
            got: recs.len(),
        });
    }
    let frontend = MelFrontend::new(mel)?;
    let d_audio = encoder.shape.embed_dim;
    let demo_block: Option<Array2<f64>> = match (fusion, demo) {
        (Fusion::AudioDemo, None) => return Err(ScreenError::ModalityMismatch("multimodal model needs demographics".into())),
        (Fusion::AudioDemo, Some(d)) => Some(Array2::from_shape_fn((d.len(), DEMO_DIM), |(i, j)| encode_demographics(&d[i], &cfg.acbmi_cutoffs)[j])),
        (Fusion::Audio, _) => None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut head = HeadModel::new(d_audio, fusion, cfg.hidden, &mut rng);
    if cfg.standardize {
        let emb = crate::byol::encode_frozen(encoder, mel, recs)?;
        let x0 = match &demo_block {
            Some(d) => ndarray::concatenate![Axis(1), emb, d.view()],
            None => emb,
        };
        head.scaler = InputScaler::fit(x0.view());
    }
    let mut enc = encoder.clone();
    let mut opt = Adam::new(cfg.adam, &Joint {
        encoder: &mut enc,
        mlp: &mut head.mlp,
    });
    let recs: Vec<PcgRecording> = recs.par_iter().map(|r| crate::signal_io::resample(r, mel.rate_hz)).collect();
    let mut log = HeadTrainLog {
        epoch_loss: Vec::new(),
        epoch_lr: Vec::new(),
    };
    let mut order: Vec<usize> = (0..y.len()).collect();
    for epoch in 1..=cfg.epochs {
        let lr = cfg.lr_at_epoch(epoch);
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let grids: Vec<Array2<f64>> = batch
                .par_iter()
                .map(|&i| {
                    let mut r = ChaCha8Rng::seed_from_u64(seed ^ ((epoch as u64) << 32) ^ i as u64);
                    frontend.log_mel(&recs[i], Crop::Random, &mut r).grid
                })
                .collect();
            let views: Vec<ArrayView2<f64>> = grids.iter().map(|g| g.view()).collect();
            let xmap = enc.input_map(&views);
            let (emb, enc_cache) = enc.forward(&xmap);
            let xb = match &demo_block {
                Some(d) => ndarray::concatenate![Axis(1), emb, d.select(Axis(0), batch)],
                None => emb,
            };
            let xb = head.scaler.apply(xb.view());
            let yb: Vec<u8> = batch.iter().map(|&i| y[i]).collect();
            let (logits, cache) = head.mlp.forward_train(xb.view(), cfg.dropout, &mut rng);
            let (loss, d) = cross_entropy(&logits, &yb);
            let mut g_mlp = head.mlp.clone();
            g_mlp.zero();
            let dx = head.scaler.backward(head.mlp.backward(&cache, d.view(), &mut g_mlp).view());
            let mut g_enc = enc.clone();
            g_enc.zero();
            enc.backward(&enc_cache, dx.slice(ndarray::s![.., ..d_audio]), &mut g_enc);
            let grads = Joint {
                encoder: &mut g_enc,
                mlp: &mut g_mlp,
            };
            opt.step(
                &mut Joint {
                    encoder: &mut enc,
                    mlp: &mut head.mlp,
                },
                &grads,
                lr,
            );
            sum += loss * batch.len() as f64;
        }
        let mean = sum / y.len() as f64;
        log::info!("finetune epoch {epoch}/{}: lr {lr:e}, mean loss {mean:.6}", cfg.epochs);
        log.epoch_loss.push(mean);
        log.epoch_lr.push(lr);
    }
    Ok((head, enc, log))
}

/// Encoder, head and everything needed to score a recording.
#[derive(Debug, Clone, PartialEq)]
pub struct ScreenModel {
    pub encoder: Encoder,
    pub mel: MelConfig,
    pub head: HeadModel,
    pub head_config: HeadConfig,
    pub mode: TrainMode,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScreenConfigJson {
    encoder: crate::nn::EncoderShape,
    mel: MelConfig,
    head: HeadConfig,
    fusion: Fusion,
    mode: TrainMode,
}

impl ScreenModel {
    /// `p_abnormal` for each recording; `demo` must be given iff the model is multimodal
    /// (given to a unimodal model it is ignored with a warning).
    pub fn predict(&self, recs: &[PcgRecording], demo: Option<&[DemographicRecord]>) -> Result<Vec<f64>, ScreenError> {
        if self.head.fusion == Fusion::AudioDemo && demo.is_none() {
            return Err(ScreenError::ModalityMismatch("multimodal model needs demographics".into()));
        }
        let emb = crate::byol::encode_frozen(&self.encoder, &self.mel, recs)?;
        let x = head_inputs(emb.view(), demo, self.head.fusion, &self.head_config.acbmi_cutoffs)?;
        self.head.predict_proba(x.view())
    }

    /// Single-recording prediction `(p_abnormal, label)`, tie going to abnormal.
    pub fn predict_outcome(&self, rec: &PcgRecording, demo: Option<&DemographicRecord>) -> Result<(f64, u8), ScreenError> {
        let d = demo.map(std::slice::from_ref);
        let p = self.predict(std::slice::from_ref(rec), d)?[0];
        Ok((p, label_from_p(p)))
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), ScreenError> {
        let cfg = ScreenConfigJson {
            encoder: self.encoder.shape,
            mel: self.mel.clone(),
            head: self.head_config.clone(),
            fusion: self.head.fusion,
            mode: self.mode,
        };
        let mut t = prefixed("encoder.", &self.encoder);
        t.extend(prefixed("scaler.", &self.head.scaler));
        t.extend(prefixed("head.", &self.head.mlp));
        crate::nn::save_checkpoint(path, "screen", serde_json::to_value(cfg)?, &t)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ScreenError> {
        let (manifest, map) = crate::nn::load_checkpoint(path)?;
        if manifest.kind != "screen" {
            return Err(ScreenError::Checkpoint(format!("expected a screen checkpoint, found `{}`", manifest.kind)));
        }
        let cfg: ScreenConfigJson = serde_json::from_value(manifest.config).map_err(|e| ScreenError::Checkpoint(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut encoder = Encoder::new(cfg.encoder, &mut rng);
        encoder.load_named("encoder.", &map)?;
        let mut head = HeadModel::new(cfg.encoder.embed_dim, cfg.fusion, cfg.head.hidden, &mut rng);
        head.scaler.load_named("scaler.", &map)?;
        head.mlp.load_named("head.", &map)?;
        Ok(Self {
            encoder,
            mel: cfg.mel,
            head,
            head_config: cfg.head,
            mode: cfg.mode,
        })
    }

    /// Rounds all parameters to the checkpoint precision.
    pub fn quantize(&mut self) {
        quantize(&mut self.encoder);
        quantize(&mut self.head.scaler);
        quantize(&mut self.head.mlp);
    }
}
