//! Fixed-size log-mel spectrograms and the two view augmentations (mel-axis roll, time stretch).

use crate::dsp::{hann, mel_filterbank, PowerSpectrum};
use crate::signal_io::{pad_by_replication, resample, PcgRecording};
use ndarray::{s, Array2, Axis};
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

pub const N_FRAMES: usize = 96;
pub const N_MELS: usize = 64;
pub const MIN_DURATION_S: f64 = 0.975;
/// Largest allowed mel-axis shift.
pub const MAX_SHIFT_BINS: i32 = 8;
pub const STRETCH_LIMITS: (f64, f64) = (0.6, 1.5);
/// Smallest zero-padded FFT length; keeps bin spacing below the mel filter spacing at 1 kHz.
const MIN_FFT: usize = 512;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MelError {
    #[error("pitch shift {0} exceeds {MAX_SHIFT_BINS} bins")]
    ShiftTooLarge(i32),
    #[error("stretch factor {0} outside [0.6, 1.5]")]
    FactorOutOfRange(f64),
    #[error("bad mel configuration: {0}")]
    BadConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase", deny_unknown_fields)]
pub enum Normalization {
    /// Each spectrogram standardized by its own mean and std.
    Instance,
    /// Fixed statistics, typically from [`corpus_stats`].
    Corpus { mean: f64, std: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MelConfig {
    /// Recordings are resampled to this rate first.
    pub rate_hz: u32,
    pub window_ms: f64,
    pub hop_ms: f64,
    pub fmin_hz: f64,
    /// Upper filter edge as a fraction of `rate_hz`.
    pub fmax_fraction: f64,
    pub log_eps: f64,
    pub std_floor: f64,
    pub normalization: Normalization,
    /// Views draw integer shifts uniformly from `[-pitch_shift_bins, pitch_shift_bins]`.
    pub pitch_shift_bins: i32,
    /// Views draw stretch factors uniformly from this range.
    pub stretch_range: (f64, f64),
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            rate_hz: 1000,
            window_ms: 64.0,
            hop_ms: 10.0,
            fmin_hz: 20.0,
            fmax_fraction: 0.45,
            log_eps: 1e-10,
            std_floor: 1e-6,
            normalization: Normalization::Instance,
            pitch_shift_bins: MAX_SHIFT_BINS,
            stretch_range: (0.8, 1.25),
        }
    }
}

impl MelConfig {
    pub fn validate(&self) -> Result<(), MelError> {
        let bad = |m: &str| Err(MelError::BadConfig(m.into()));
        if self.rate_hz == 0 || self.window_ms <= 0.0 || self.hop_ms <= 0.0 {
            return bad("rate, window and hop must be positive");
        }
        if !(self.fmin_hz >= 0.0 && self.fmin_hz < self.fmax_fraction * self.rate_hz as f64 && self.fmax_fraction <= 0.5) {
            return bad("need 0 <= fmin < fmax_fraction * rate and fmax_fraction <= 0.5");
        }
        if self.pitch_shift_bins < 0 || self.pitch_shift_bins > MAX_SHIFT_BINS {
            return Err(MelError::ShiftTooLarge(self.pitch_shift_bins));
        }
        let (lo, hi) = self.stretch_range;
        for f in [lo, hi] {
            check_factor(f)?;
        }
        if lo > hi {
            return bad("stretch_range must be ordered");
        }
        if let Normalization::Corpus { std, .. } = self.normalization {
            if !(std > 0.0) {
                return bad("corpus std must be positive");
            }
        }
        Ok(())
    }

    pub fn window_len(&self) -> usize {
        (self.window_ms * 1e-3 * self.rate_hz as f64).round() as usize
    }

    pub fn hop_len(&self) -> usize {
        ((self.hop_ms * 1e-3 * self.rate_hz as f64).round() as usize).max(1)
    }
}

fn check_factor(f: f64) -> Result<(), MelError> {
    if !(STRETCH_LIMITS.0..=STRETCH_LIMITS.1).contains(&f) {
        return Err(MelError::FactorOutOfRange(f));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    /// `N_FRAMES x N_MELS`, time-major.
    pub grid: Array2<f64>,
    pub rate_hz: u32,
    /// `(mean, std)` used for standardization.
    pub norm_stats: (f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Crop {
    Center,
    /// Start frame drawn uniformly.
    Random,
}

/// Precomputed window and filterbank for one configuration.
pub struct MelFrontend {
    cfg: MelConfig,
    window: Vec<f64>,
    hop: usize,
    n_fft: usize,
    /// Per filter: first nonzero bin and its weights.
    filters: Vec<(usize, Vec<f64>)>,
}

impl MelFrontend {
    pub fn new(cfg: &MelConfig) -> Result<Self, MelError> {
        cfg.validate()?;
        let win = cfg.window_len().max(2);
        let n_fft = win.next_power_of_two().max(MIN_FFT);
        let rate = cfg.rate_hz as f64;
        let filters = mel_filterbank(N_MELS, n_fft, rate, cfg.fmin_hz, cfg.fmax_fraction * rate, true)
            .into_iter()
            .map(|w| {
                let first = w.iter().position(|&v| v > 0.0).unwrap_or(0);
                let last = w.iter().rposition(|&v| v > 0.0).map_or(first, |i| i + 1);
                (first, w[first..last].to_vec())
            })
            .collect();
        Ok(Self {
            cfg: cfg.clone(),
            window: hann(win),
            hop: cfg.hop_len(),
            n_fft,
            filters,
        })
    }

    pub fn config(&self) -> &MelConfig {
        &self.cfg
    }

    fn prepare(&self, rec: &PcgRecording) -> Vec<f64> {
        let r = resample(rec, self.cfg.rate_hz);
        let r = pad_by_replication(&r, MIN_DURATION_S);
        r.samples
    }

    /// Number of centered frames for `n` samples.
    fn total_frames(&self, n: usize) -> usize {
        1 + n / self.hop
    }

    /// Unnormalized `log(power + eps)` frames `start..start + count` of a centered STFT
    /// (reflect padding of half a window on both sides).
    fn log_frames(&self, x: &[f64], start: usize, count: usize) -> Array2<f64> {
        let win = self.window.len();
        let half = win / 2;
        let n = x.len() as isize;
        let reflect = |i: isize| -> f64 {
            if n == 1 {
                return x[0];
            }
            let period = 2 * (n - 1);
            let mut j = i.rem_euclid(period);
            if j >= n {
                j = period - j;
            }
            x[j as usize]
        };
        let mut ps = PowerSpectrum::new(self.n_fft);
        let mut frame = vec![0.0; win];
        let mut power = vec![0.0; ps.n_bins()];
        let mut out = Array2::zeros((count, N_MELS));
        for t in 0..count {
            let c = ((start + t) * self.hop) as isize - half as isize;
            for (k, f) in frame.iter_mut().enumerate() {
                *f = reflect(c + k as isize) * self.window[k];
            }
            ps.compute(&frame, &mut power);
            for (m, (first, w)) in self.filters.iter().enumerate() {
                let e: f64 = w.iter().zip(&power[*first..]).map(|(a, b)| a * b).sum();
                out[[t, m]] = (e + self.cfg.log_eps).ln();
            }
        }
        out
    }

    /// Full-length unnormalized log-mel of a recording.
    pub fn log_mel_full(&self, rec: &PcgRecording) -> Array2<f64> {
        let x = self.prepare(rec);
        self.log_frames(&x, 0, self.total_frames(x.len()))
    }

    /// Unnormalized 96-frame crop.
    pub fn log_mel_raw<R: Rng + ?Sized>(&self, rec: &PcgRecording, crop: Crop, rng: &mut R) -> Array2<f64> {
        let x = self.prepare(rec);
        let total = self.total_frames(x.len());
        debug_assert!(total >= N_FRAMES);
        let slack = total - N_FRAMES;
        let start = match crop {
            Crop::Center => slack / 2,
            Crop::Random => rng.random_range(0..=slack),
        };
        self.log_frames(&x, start, N_FRAMES)
    }

    /// Normalized 96x64 log-mel spectrogram. `rng` is only used by [`Crop::Random`].
    pub fn log_mel<R: Rng + ?Sized>(&self, rec: &PcgRecording, crop: Crop, rng: &mut R) -> MelSpectrogram {
        let grid = self.log_mel_raw(rec, crop, rng);
        let spec = MelSpectrogram {
            grid,
            rate_hz: self.cfg.rate_hz,
            norm_stats: (0.0, 1.0),
        };
        match self.cfg.normalization {
            Normalization::Instance => standardize(spec, self.cfg.std_floor),
            Normalization::Corpus { mean, std } => apply_stats(spec, mean, std),
        }
    }

    /// Center-crop spectrogram, the deterministic evaluation path.
    pub fn log_mel_eval(&self, rec: &PcgRecording) -> MelSpectrogram {
        self.log_mel(rec, Crop::Center, &mut rand_chacha::ChaCha8Rng::seed_from_u64(0))
    }
}

fn apply_stats(mut spec: MelSpectrogram, mean: f64, std: f64) -> MelSpectrogram {
    spec.grid.mapv_inplace(|v| (v - mean) / std);
    spec.norm_stats = (mean, std);
    spec
}

/// Per-instance standardization with a std floor; idempotent.
pub fn standardize(spec: MelSpectrogram, std_floor: f64) -> MelSpectrogram {
    let n = spec.grid.len() as f64;
    let mean = spec.grid.sum() / n;
    let var = spec.grid.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < std_floor {
        // constant input: all zeros, and stays so on repeat
        let mut s = spec;
        s.grid.fill(0.0);
        s.norm_stats = (mean, std_floor);
        return s;
    }
    apply_stats(spec, mean, std)
}

/// Mean and std of unnormalized center-crop log-mel values over a corpus.
pub fn corpus_stats(frontend: &MelFrontend, recs: &[PcgRecording]) -> (f64, f64) {
    let (mut s, mut s2, mut n) = (0.0, 0.0, 0.0);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    for r in recs {
        let g = frontend.log_mel_raw(r, Crop::Center, &mut rng);
        s += g.sum();
        s2 += g.iter().map(|v| v * v).sum::<f64>();
        n += g.len() as f64;
    }
    let mean = s / n;
    (mean, (s2 / n - mean * mean).max(0.0).sqrt())
}

/// Rolls the mel axis by `shift` bins (positive = upwards); vacated bins take the grid minimum.
pub fn pitch_shift(spec: &MelSpectrogram, shift: i32) -> Result<MelSpectrogram, MelError> {
    if shift.abs() > MAX_SHIFT_BINS {
        return Err(MelError::ShiftTooLarge(shift));
    }
    let fill = spec.grid.iter().copied().fold(f64::INFINITY, f64::min);
    let mut grid = Array2::from_elem(spec.grid.dim(), fill);
    let s = shift as isize;
    let m = N_MELS as isize;
    for b in 0..m {
        let src = b - s;
        if (0..m).contains(&src) {
            grid.column_mut(b as usize).assign(&spec.grid.column(src as usize));
        }
    }
    Ok(MelSpectrogram { grid, ..spec.clone() })
}

/// Linear time resampling to `round(96 / factor)` frames, then center crop or padding with the
/// last frame back to 96.
pub fn time_stretch(spec: &MelSpectrogram, factor: f64) -> Result<MelSpectrogram, MelError> {
    check_factor(factor)?;
    let n = spec.grid.nrows();
    let len = (n as f64 / factor).round() as usize;
    if len == n {
        return Ok(spec.clone());
    }
    let mut stretched = Array2::zeros((len, spec.grid.ncols()));
    for j in 0..len {
        // endpoints map to endpoints
        let pos = j as f64 * (n - 1) as f64 / (len - 1) as f64;
        let i0 = (pos.floor() as usize).min(n - 1);
        let i1 = (i0 + 1).min(n - 1);
        let w = pos - i0 as f64;
        let row = &spec.grid.row(i0) * (1.0 - w) + &spec.grid.row(i1) * w;
        stretched.row_mut(j).assign(&row);
    }
    let grid = if len > n {
        let off = (len - n) / 2;
        stretched.slice(s![off..off + n, ..]).to_owned()
    } else {
        let last = stretched.row(len - 1).to_owned();
        let mut g = Array2::zeros((n, spec.grid.ncols()));
        g.slice_mut(s![..len, ..]).assign(&stretched);
        for mut r in g.axis_iter_mut(Axis(0)).skip(len) {
            r.assign(&last);
        }
        g
    };
    Ok(MelSpectrogram { grid, ..spec.clone() })
}

/// One augmented view: time stretch then pitch shift, re-standardized.
pub fn augment<R: Rng + ?Sized>(spec: &MelSpectrogram, cfg: &MelConfig, rng: &mut R) -> Result<MelSpectrogram, MelError> {
    let (lo, hi) = cfg.stretch_range;
    let factor = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let k = cfg.pitch_shift_bins;
    let shift = if k > 0 { rng.random_range(-k..=k) } else { 0 };
    let v = pitch_shift(&time_stretch(spec, factor)?, shift)?;
    Ok(standardize(v, cfg.std_floor))
}

/// Two independently augmented views.
pub fn make_views<R: Rng + ?Sized>(
    spec: &MelSpectrogram,
    cfg: &MelConfig,
    rng: &mut R,
) -> Result<(MelSpectrogram, MelSpectrogram), MelError> {
    let a = augment(spec, cfg, rng)?;
    let b = augment(spec, cfg, rng)?;
    Ok((a, b))
}

/// Debug export: one CSV row per time frame.
pub fn write_csv(spec: &MelSpectrogram, path: &Path) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for row in spec.grid.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()
}

/// Raw little-endian f32 values, time-major.
pub fn to_f32_blob(spec: &MelSpectrogram) -> Vec<u8> {
    spec.grid.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect()
}

pub fn from_f32_blob(bytes: &[u8], rate_hz: u32) -> Option<MelSpectrogram> {
    if bytes.len() != N_FRAMES * N_MELS * 4 {
        return None;
    }
    let vals: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Some(MelSpectrogram {
        grid: Array2::from_shape_vec((N_FRAMES, N_MELS), vals).ok()?,
        rate_hz,
        norm_stats: (0.0, 1.0),
    })
}
