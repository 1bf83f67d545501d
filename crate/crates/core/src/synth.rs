//! Synthetic PCG generator with known heart rate, S1/S2 timing, murmur content and SNR.
//!
//! Every cycle starts with an S1 event; S2 follows after `systole_fraction` of the
//! cycle. Both are Gaussian-windowed cosines (sigma 25 ms) peaking at their scheduled
//! time, so the analytic envelope peaks exactly on the schedule. Murmurs are
//! band-limited Gaussian noise shaped by a Hann window over the systolic gap.

use crate::screen::{AgeGroup, DemographicRecord, Sex};
use crate::signal_io::{write_manifest, write_wav, Manifest, ManifestRow, OutcomeLabel, PcgRecording, SignalError, WavEncoding};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::Path;
use thiserror::Error;

/// Width of the S1/S2 Gaussian window.
pub const EVENT_SIGMA_S: f64 = 0.025;
/// Time of the first S1 event; keeps the first event clear of the recording edge.
pub const FIRST_S1_S: f64 = 0.1;
/// Murmur window is inset from the S1/S2 centers by this much.
const MURMUR_INSET_S: f64 = 0.05;
const PEAK_LIMIT: f64 = 0.99;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthesis spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Signal(#[from] SignalError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub heart_rate_bpm: f64,
    pub duration_s: f64,
    pub sample_rate_hz: u32,
    pub s1_freq_hz: f64,
    pub s2_freq_hz: f64,
    /// S2 peak amplitude relative to S1 (S1 peak is 1 before noise/normalization).
    pub s2_amp_ratio: f64,
    pub systole_fraction: f64,
    pub murmur: bool,
    pub murmur_band_hz: (f64, f64),
    pub murmur_amp: f64,
    /// `f64::INFINITY` disables additive noise.
    pub snr_db: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            heart_rate_bpm: 72.0,
            duration_s: 10.0,
            sample_rate_hz: 1000,
            s1_freq_hz: 60.0,
            s2_freq_hz: 90.0,
            s2_amp_ratio: 0.8,
            systole_fraction: 0.35,
            murmur: false,
            murmur_band_hz: (150.0, 400.0),
            murmur_amp: 0.2,
            snr_db: f64::INFINITY,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidSpec(m.to_string()));
        if !(40.0..=200.0).contains(&self.heart_rate_bpm) {
            return bad("heart_rate_bpm must be in [40, 200]");
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return bad("duration_s must be positive");
        }
        if self.sample_rate_hz == 0 {
            return bad("sample_rate_hz must be positive");
        }
        if !(self.systole_fraction > 0.0 && self.systole_fraction < 0.5) {
            return bad("systole_fraction must be in (0, 0.5)");
        }
        let (lo, hi) = self.murmur_band_hz;
        if self.murmur && !(lo >= 0.0 && lo < hi && hi < self.sample_rate_hz as f64 / 2.0) {
            return bad("murmur band must satisfy 0 <= low < high < rate/2");
        }
        if self.snr_db.is_nan() {
            return bad("snr_db must not be NaN");
        }
        Ok(())
    }

    pub fn cycle_s(&self) -> f64 {
        60.0 / self.heart_rate_bpm
    }
}

/// Scheduled S1 and S2 centers in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct EventSchedule {
    pub s1: Vec<f64>,
    pub s2: Vec<f64>,
}

pub fn event_schedule(spec: &SynthSpec) -> EventSchedule {
    let cycle = spec.cycle_s();
    let mut s1 = Vec::new();
    let mut s2 = Vec::new();
    let mut i = 0usize;
    loop {
        let t1 = FIRST_S1_S + i as f64 * cycle;
        if t1 >= spec.duration_s {
            break;
        }
        s1.push(t1);
        let t2 = t1 + spec.systole_fraction * cycle;
        if t2 < spec.duration_s {
            s2.push(t2);
        }
        i += 1;
    }
    EventSchedule { s1, s2 }
}

fn add_event(buf: &mut [f64], rate: f64, center: f64, freq: f64, amp: f64) {
    if amp == 0.0 {
        return;
    }
    let reach = 4.0 * EVENT_SIGMA_S;
    let lo = ((center - reach) * rate).floor().max(0.0) as usize;
    let hi = (((center + reach) * rate).ceil() as usize).min(buf.len().saturating_sub(1));
    for (i, v) in buf.iter_mut().enumerate().take(hi + 1).skip(lo) {
        let dt = i as f64 / rate - center;
        *v += amp * (-dt * dt / (2.0 * EVENT_SIGMA_S * EVENT_SIGMA_S)).exp() * (2.0 * PI * freq * dt).cos();
    }
}

/// Unit-RMS Gaussian noise restricted to `[lo, hi]` Hz by zeroing FFT bins.
fn band_noise(n: usize, rate: f64, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = (0..n).map(|_| Complex::new(rng.sample::<f64, _>(StandardNormal), 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, c) in buf.iter_mut().enumerate() {
        let kk = k.min(n - k);
        let f = kk as f64 * rate / n as f64;
        if f < lo || f > hi {
            *c = Complex::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let out: Vec<f64> = buf.iter().map(|c| c.re / n as f64).collect();
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    if rms > 0.0 {
        out.into_iter().map(|v| v / rms).collect()
    } else {
        out
    }
}

/// Noiseless part of the recording (heart sounds plus murmur), before peak limiting.
pub fn synthesize_clean(spec: &SynthSpec) -> Result<Vec<f64>, SynthError> {
    spec.validate()?;
    let rate = spec.sample_rate_hz as f64;
    let n = (spec.duration_s * rate).round().max(1.0) as usize;
    let mut x = vec![0.0; n];
    let sched = event_schedule(spec);
    for &t in &sched.s1 {
        add_event(&mut x, rate, t, spec.s1_freq_hz, 1.0);
    }
    for &t in &sched.s2 {
        add_event(&mut x, rate, t, spec.s2_freq_hz, spec.s2_amp_ratio);
    }
    if spec.murmur && spec.murmur_amp > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x6d75_726d_7572);
        let noise = band_noise(n, rate, spec.murmur_band_hz.0, spec.murmur_band_hz.1, &mut rng);
        let mut mask = vec![0.0; n];
        for (&a, &b) in sched.s1.iter().zip(&sched.s2) {
            let start = a + MURMUR_INSET_S;
            let end = b - MURMUR_INSET_S;
            if end <= start {
                continue;
            }
            let i0 = (start * rate).ceil() as usize;
            let i1 = ((end * rate).floor() as usize).min(n.saturating_sub(1));
            for (i, m) in mask.iter_mut().enumerate().take(i1 + 1).skip(i0) {
                let u = (i as f64 / rate - start) / (end - start);
                *m = (PI * u).sin().powi(2);
            }
        }
        for ((v, m), e) in x.iter_mut().zip(&mask).zip(&noise) {
            *v += spec.murmur_amp * m * e;
        }
    }
    Ok(x)
}

/// Full synthetic recording: clean signal plus white noise at exactly `snr_db`
/// (noise power rescaled to the target), then scaled down if the peak exceeds 0.99.
pub fn synthesize(spec: &SynthSpec) -> Result<PcgRecording, SynthError> {
    let (noisy, _) = synthesize_with_reference(spec)?;
    Ok(noisy)
}

/// Like [`synthesize`], also returning the noiseless reference at the same scale.
pub fn synthesize_with_reference(spec: &SynthSpec) -> Result<(PcgRecording, Vec<f64>), SynthError> {
    let mut clean = synthesize_clean(spec)?;
    let n = clean.len();
    let mut x = clean.clone();
    if spec.snr_db.is_finite() {
        let p_sig = clean.iter().map(|v| v * v).sum::<f64>() / n as f64;
        let p_noise = p_sig / 10f64.powf(spec.snr_db / 10.0);
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut w: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let p_w = w.iter().map(|v| v * v).sum::<f64>() / n as f64;
        let g = if p_w > 0.0 { (p_noise / p_w).sqrt() } else { 0.0 };
        w.iter_mut().for_each(|v| *v *= g);
        x.iter_mut().zip(&w).for_each(|(a, b)| *a += b);
    }
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > PEAK_LIMIT {
        let g = PEAK_LIMIT / peak;
        x.iter_mut().for_each(|v| *v *= g);
        clean.iter_mut().for_each(|v| *v *= g);
    }
    let rec = PcgRecording::new(x, spec.sample_rate_hz, format!("synth_{}", spec.seed))?;
    Ok((rec, clean))
}

/// Default SNR → score table: `>= 15 dB → 5`, `[10, 15) → 4`, `[5, 10) → 3`, `[0, 5) → 2`, else 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QualityRule {
    /// Descending lower bounds for scores 5, 4, 3, 2.
    pub thresholds_db: [f64; 4],
}

impl Default for QualityRule {
    fn default() -> Self {
        Self {
            thresholds_db: [15.0, 10.0, 5.0, 0.0],
        }
    }
}

impl QualityRule {
    pub fn score(&self, snr_db: f64) -> u8 {
        for (i, &t) in self.thresholds_db.iter().enumerate() {
            if snr_db >= t {
                return 5 - i as u8;
            }
        }
        1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub sample_rate_hz: u32,
    pub duration_s: (f64, f64),
    pub heart_rate_bpm: (f64, f64),
    pub systole_fraction: (f64, f64),
    pub s2_amp_ratio: (f64, f64),
    pub s1_freq_hz: (f64, f64),
    pub s2_freq_hz: (f64, f64),
    /// Fraction of recordings carrying a murmur, spread evenly over the index range.
    pub murmur_fraction: f64,
    pub murmur_amp: (f64, f64),
    pub murmur_band_hz: (f64, f64),
    pub snr_db: (f64, f64),
    pub quality_rule: QualityRule,
    pub demographics: bool,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            sample_rate_hz: 1000,
            duration_s: (6.0, 10.0),
            heart_rate_bpm: (55.0, 90.0),
            systole_fraction: (0.3, 0.4),
            s2_amp_ratio: (0.5, 1.0),
            s1_freq_hz: (50.0, 70.0),
            s2_freq_hz: (80.0, 100.0),
            murmur_fraction: 0.5,
            murmur_amp: (0.1, 0.3),
            murmur_band_hz: (150.0, 400.0),
            snr_db: (-10.0, 25.0),
            quality_rule: QualityRule::default(),
            demographics: true,
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi <= lo {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Per-item seed; independent of how many items are generated.
fn item_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(i as u64).wrapping_mul(0xbf58_476d_1ce4_e5b9) ^ 0x94d0_49bb_1331_11eb
}

fn random_demographics(rng: &mut ChaCha8Rng) -> DemographicRecord {
    let sex = if rng.random_bool(0.5) { Sex::Female } else { Sex::Male };
    let r: f64 = rng.random();
    let (age_group, h_range, bmi_range) = if r < 0.05 {
        (AgeGroup::Neonate, (45.0, 60.0), (10.0, 17.0))
    } else if r < 0.17 {
        (AgeGroup::Infant, (60.0, 90.0), (13.0, 21.0))
    } else if r < 0.85 {
        (AgeGroup::Child, (90.0, 150.0), (12.0, 25.0))
    } else if r < 0.93 {
        (AgeGroup::Adolescent, (140.0, 185.0), (15.0, 32.0))
    } else {
        (AgeGroup::Missing, (90.0, 150.0), (12.0, 25.0))
    };
    let height = uniform(rng, h_range);
    let bmi = uniform(rng, bmi_range);
    let weight = bmi * (height / 100.0).powi(2);
    let measured = rng.random_bool(0.9);
    let pregnant = sex == Sex::Female && age_group == AgeGroup::Adolescent && rng.random_bool(0.3);
    DemographicRecord {
        sex,
        age_group,
        height_cm: measured.then_some((height * 10.0).round() / 10.0),
        weight_kg: measured.then_some((weight * 10.0).round() / 10.0),
        pregnant: Some(pregnant),
    }
}

/// One generated corpus item.
#[derive(Debug, Clone)]
pub struct CorpusItem {
    pub row: ManifestRow,
    pub spec: SynthSpec,
    pub recording: PcgRecording,
}

/// Generates `n` labeled recordings in memory. Item `i` depends only on `(seed, i)`.
pub fn generate_corpus(n: usize, cfg: &CorpusConfig, seed: u64) -> Result<Vec<CorpusItem>, SynthError> {
    (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(item_seed(seed, i));
            let f = cfg.murmur_fraction.clamp(0.0, 1.0);
            let murmur = ((i + 1) as f64 * f).floor() > (i as f64 * f).floor();
            let spec = SynthSpec {
                heart_rate_bpm: uniform(&mut rng, cfg.heart_rate_bpm),
                duration_s: uniform(&mut rng, cfg.duration_s),
                sample_rate_hz: cfg.sample_rate_hz,
                s1_freq_hz: uniform(&mut rng, cfg.s1_freq_hz),
                s2_freq_hz: uniform(&mut rng, cfg.s2_freq_hz),
                s2_amp_ratio: uniform(&mut rng, cfg.s2_amp_ratio),
                systole_fraction: uniform(&mut rng, cfg.systole_fraction),
                murmur,
                murmur_band_hz: cfg.murmur_band_hz,
                murmur_amp: uniform(&mut rng, cfg.murmur_amp),
                snr_db: uniform(&mut rng, cfg.snr_db),
                seed: rng.random(),
            };
            let demo = if cfg.demographics {
                random_demographics(&mut rng)
            } else {
                DemographicRecord::default()
            };
            let mut recording = synthesize(&spec)?;
            let name = format!("rec_{i:05}");
            recording.source_id = name.clone();
            let row = ManifestRow {
                path: format!("wav/{name}.wav"),
                quality_score: Some(cfg.quality_rule.score(spec.snr_db)),
                outcome: Some(if murmur { OutcomeLabel::Abnormal } else { OutcomeLabel::Normal }),
                demographics: demo,
                split_tag: None,
            };
            Ok(CorpusItem { row, spec, recording })
        })
        .collect()
}

/// Writes `n` recordings under `out_dir/wav/` plus `out_dir/manifest.csv`.
pub fn make_corpus(n: usize, cfg: &CorpusConfig, seed: u64, out_dir: &Path) -> Result<(Manifest, Vec<SynthSpec>), SynthError> {
    assert!(n > 0, "corpus size must be positive");
    let items = generate_corpus(n, cfg, seed)?;
    std::fs::create_dir_all(out_dir.join("wav")).map_err(SignalError::from)?;
    let mut rows = Vec::with_capacity(n);
    let mut specs = Vec::with_capacity(n);
    for item in items {
        write_wav(&item.recording, &out_dir.join(&item.row.path), WavEncoding::Pcm16)?;
        rows.push(item.row);
        specs.push(item.spec);
    }
    let mut manifest = Manifest::new(rows, out_dir)?;
    manifest.has_demographics = cfg.demographics;
    write_manifest(&manifest, &out_dir.join("manifest.csv"))?;
    Ok((manifest, specs))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn power(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
    }

    #[test]
    fn schedule_has_one_s1_per_cycle() {
        let spec = SynthSpec {
            heart_rate_bpm: 60.0,
            duration_s: 10.0,
            ..Default::default()
        };
        let s = event_schedule(&spec);
        assert_eq!(s.s1.len(), 10);
        for w in s.s1.windows(2) {
            assert!((w[1] - w[0] - 1.0).abs() < 1e-12);
        }
        assert!((s.s2[0] - s.s1[0] - 0.35).abs() < 1e-12);
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let spec = SynthSpec {
            murmur: true,
            snr_db: 5.0,
            seed: 42,
            ..Default::default()
        };
        assert_eq!(synthesize(&spec).unwrap(), synthesize(&spec).unwrap());
        let other = SynthSpec { seed: 43, ..spec.clone() };
        assert_ne!(synthesize(&spec).unwrap().samples, synthesize(&other).unwrap().samples);
    }

    #[test]
    fn measured_snr_matches_request() {
        for (k, snr) in [-10.0, -3.0, 0.0, 7.5, 20.0, 30.0].into_iter().enumerate() {
            let spec = SynthSpec {
                snr_db: snr,
                murmur: k % 2 == 0,
                seed: k as u64,
                ..Default::default()
            };
            let (noisy, clean) = synthesize_with_reference(&spec).unwrap();
            let noise: Vec<f64> = noisy.samples.iter().zip(&clean).map(|(a, b)| a - b).collect();
            let measured = 10.0 * (power(&clean) / power(&noise)).log10();
            assert!((measured - snr).abs() <= 0.5, "requested {snr}, measured {measured}");
            assert!(noisy.samples.iter().all(|v| v.abs() <= 1.0));
        }
    }

    #[test]
    fn murmur_stays_in_its_band_and_in_systole() {
        let base = SynthSpec {
            heart_rate_bpm: 60.0,
            ..Default::default()
        };
        let with = synthesize_clean(&SynthSpec { murmur: true, ..base.clone() }).unwrap();
        let without = synthesize_clean(&base).unwrap();
        let diff: Vec<f64> = with.iter().zip(&without).map(|(a, b)| a - b).collect();
        // nothing added in diastole (0.55 s .. 1.05 s of the first cycle)
        assert!(diff[550..1050].iter().all(|v| *v == 0.0));
        assert!(diff[150..400].iter().any(|v| *v != 0.0));
    }

    #[test]
    fn invalid_specs_rejected() {
        let bad = [
            SynthSpec { heart_rate_bpm: 30.0, ..Default::default() },
            SynthSpec { systole_fraction: 0.5, ..Default::default() },
            SynthSpec { murmur: true, murmur_band_hz: (150.0, 600.0), ..Default::default() },
        ];
        for s in bad {
            assert!(matches!(synthesize(&s), Err(SynthError::InvalidSpec(_))));
        }
    }

    #[test]
    fn quality_rule_table() {
        let q = QualityRule::default();
        assert_eq!(q.score(20.0), 5);
        assert_eq!(q.score(15.0), 5);
        assert_eq!(q.score(12.0), 4);
        assert_eq!(q.score(5.0), 3);
        assert_eq!(q.score(0.0), 2);
        assert_eq!(q.score(-3.0), 1);
    }

    #[test]
    fn balanced_corpus() {
        let cfg = CorpusConfig {
            duration_s: (1.0, 1.5),
            ..Default::default()
        };
        let items = generate_corpus(400, &cfg, 7).unwrap();
        let abnormal = items.iter().filter(|it| it.row.outcome == Some(OutcomeLabel::Abnormal)).count();
        assert_eq!(abnormal, 200);
        assert!(items.iter().all(|it| it.row.quality_score == Some(cfg.quality_rule.score(it.spec.snr_db))));
        assert!(items.iter().all(|it| (it.row.outcome == Some(OutcomeLabel::Abnormal)) == it.spec.murmur));
    }

    #[test]
    fn corpus_written_to_disk() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = CorpusConfig {
            duration_s: (1.0, 2.0),
            ..Default::default()
        };
        let (m, specs) = make_corpus(5, &cfg, 3, dir.path()).unwrap();
        assert_eq!(m.len(), 5);
        assert_eq!(specs.len(), 5);
        let back = crate::signal_io::read_manifest(&dir.path().join("manifest.csv")).unwrap();
        assert_eq!(back.rows, m.rows);
        for r in &back.rows {
            let rec = crate::signal_io::load_wav(&back.resolve(r)).unwrap();
            assert_eq!(rec.sample_rate_hz, 1000);
        }
    }
}
