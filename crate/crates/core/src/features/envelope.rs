use super::FeatureError;
use crate::dsp::{analytic_magnitude, find_peaks};
use crate::signal_io::PcgRecording;
use serde::{Deserialize, Serialize};

/// Floor added to the analytic magnitude before taking the log.
pub const ENVELOPE_EPS: f64 = 1e-10;
pub const ENVELOPE_CUTOFF_HZ: f64 = 8.0;
pub const REQUIRED_RATE_HZ: u32 = 1000;
/// Minimum distance between envelope peaks.
pub const MIN_PEAK_DISTANCE_S: f64 = 0.2;
/// Minimum prominence relative to the median peak height.
pub const REL_PROMINENCE: f64 = 0.25;
/// Half width of the S1/S2 intervals around each peak.
pub const SOUND_HALF_WIDTH_S: f64 = 0.05;
pub const MIN_PEAKS: usize = 4;

/// First-order low-pass run forward then backward (zero phase).
fn lowpass_zero_phase(x: &mut [f64], cutoff_hz: f64, rate: f64) {
    if x.is_empty() {
        return;
    }
    let alpha = 1.0 - (-2.0 * std::f64::consts::PI * cutoff_hz / rate).exp();
    let mut y = x[0];
    for v in x.iter_mut() {
        y += alpha * (*v - y);
        *v = y;
    }
    let mut y = x[x.len() - 1];
    for v in x.iter_mut().rev() {
        y += alpha * (*v - y);
        *v = y;
    }
}

/// Homomorphic envelope `exp(lowpass(log(|analytic(x)| + eps)))` of a 1 kHz recording.
pub fn homomorphic_envelope(rec: &PcgRecording) -> Result<Vec<f64>, FeatureError> {
    if rec.sample_rate_hz != REQUIRED_RATE_HZ {
        return Err(FeatureError::WrongSampleRate(rec.sample_rate_hz));
    }
    Ok(envelope_at(&rec.samples, rec.sample_rate_hz as f64))
}

pub(crate) fn envelope_at(x: &[f64], rate: f64) -> Vec<f64> {
    let mut log_mag: Vec<f64> = analytic_magnitude(x).into_iter().map(|m| (m + ENVELOPE_EPS).ln()).collect();
    lowpass_zero_phase(&mut log_mag, ENVELOPE_CUTOFF_HZ, rate);
    log_mag.into_iter().map(f64::exp).collect()
}

/// Closed time intervals in seconds.
pub type Interval = (f64, f64);

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Segmentation {
    pub s1_intervals: Vec<Interval>,
    pub s2_intervals: Vec<Interval>,
    pub systole_intervals: Vec<Interval>,
    pub diastole_intervals: Vec<Interval>,
}

/// Envelope peak indices used by the segmenter.
pub fn envelope_peaks(env: &[f64], rate: f64) -> Vec<usize> {
    let min_dist = (MIN_PEAK_DISTANCE_S * rate).round() as usize;
    find_peaks(env, min_dist, REL_PROMINENCE).into_iter().map(|p| p.index).collect()
}

/// Pairs envelope peaks into cycles: the shorter of the alternating inter-peak gaps is
/// systole (S1 -> S2), the longer is diastole (S2 -> next S1).
pub fn segment_envelope(env: &[f64], rate_hz: f64) -> Result<Segmentation, FeatureError> {
    let peaks = envelope_peaks(env, rate_hz);
    if peaks.len() < MIN_PEAKS {
        return Err(FeatureError::TooFewPeaks(peaks.len()));
    }
    let gaps: Vec<f64> = peaks.windows(2).map(|w| (w[1] - w[0]) as f64).collect();
    let parity_mean = |p: usize| {
        let g: Vec<f64> = gaps.iter().skip(p).step_by(2).copied().collect();
        g.iter().sum::<f64>() / g.len() as f64
    };
    let (m0, m1) = (parity_mean(0), parity_mean(1));
    let sys_parity = if m0 <= m1 { 0 } else { 1 };
    let (short, long) = if sys_parity == 0 { (m0, m1) } else { (m1, m0) };
    if short >= 0.9 * long {
        return Err(FeatureError::DegeneratePairing);
    }
    let mut consistent = 0usize;
    let mut checked = 0usize;
    for i in (sys_parity..gaps.len()).step_by(2) {
        if i + 1 < gaps.len() {
            checked += 1;
            if gaps[i] < gaps[i + 1] {
                consistent += 1;
            }
        }
    }
    if checked > 0 && (consistent as f64) < 0.6 * checked as f64 {
        return Err(FeatureError::DegeneratePairing);
    }

    let dur = env.len() as f64 / rate_hz;
    let t = |i: usize| peaks[i] as f64 / rate_hz;
    let around = |c: f64| ((c - SOUND_HALF_WIDTH_S).max(0.0), (c + SOUND_HALF_WIDTH_S).min(dur));
    let mut seg = Segmentation::default();
    let mut i = sys_parity;
    while i + 1 < peaks.len() {
        let (s1, s2) = (t(i), t(i + 1));
        seg.s1_intervals.push(around(s1));
        seg.s2_intervals.push(around(s2));
        let sys = (s1 + SOUND_HALF_WIDTH_S, s2 - SOUND_HALF_WIDTH_S);
        if sys.1 > sys.0 {
            seg.systole_intervals.push(sys);
        }
        if i + 2 < peaks.len() {
            let dia = (s2 + SOUND_HALF_WIDTH_S, t(i + 2) - SOUND_HALF_WIDTH_S);
            if dia.1 > dia.0 {
                seg.diastole_intervals.push(dia);
            }
        }
        i += 2;
    }
    Ok(seg)
}

/// Mean of `env` over all samples falling inside any of the intervals; `None` if no sample does.
fn pooled_mean(env: &[f64], rate: f64, intervals: &[Interval]) -> Option<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for &(a, b) in intervals {
        let lo = (a * rate).ceil().max(0.0) as usize;
        let hi = ((b * rate).floor() as usize).min(env.len().saturating_sub(1));
        if lo > hi || env.is_empty() {
            continue;
        }
        sum += env[lo..=hi].iter().sum::<f64>();
        count += hi - lo + 1;
    }
    (count > 0).then(|| sum / count as f64)
}

fn quality_factor(env: &[f64], rate: f64, sound: &[Interval], seg: &Segmentation) -> f64 {
    let (Some(s), Some(sys), Some(dia)) = (
        pooled_mean(env, rate, sound),
        pooled_mean(env, rate, &seg.systole_intervals),
        pooled_mean(env, rate, &seg.diastole_intervals),
    ) else {
        return 0.0;
    };
    let denom = 0.5 * (sys + dia);
    if denom < 1e-12 {
        0.0
    } else {
        s / denom
    }
}

/// Mean S2 envelope height over the mean of the systolic and diastolic heights.
pub fn s2_quality_factor(env: &[f64], rate_hz: f64, seg: &Segmentation) -> f64 {
    quality_factor(env, rate_hz, &seg.s2_intervals, seg)
}

/// Same construction as [`s2_quality_factor`] over the S1 intervals.
pub fn s1_quality_factor(env: &[f64], rate_hz: f64, seg: &Segmentation) -> f64 {
    quality_factor(env, rate_hz, &seg.s1_intervals, seg)
}
