use super::PcgRecording;

/// Input samples contributing to each output sample.
pub const TAPS_PER_PHASE: usize = 64;
const HALF: i64 = (TAPS_PER_PHASE / 2) as i64;
/// Anti-alias cutoff as a fraction of the lower of the two rates.
const CUTOFF_RATIO: f64 = 0.45;
const MAX_CACHED_PHASES: u64 = 4096;

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Hann-windowed sinc taps for one fractional phase, normalized to unit DC gain.
fn phase_taps(frac: f64, fc: f64) -> [f64; TAPS_PER_PHASE] {
    let mut taps = [0.0; TAPS_PER_PHASE];
    for (i, tap) in taps.iter_mut().enumerate() {
        let d = (i as i64 - (HALF - 1)) as f64 - frac;
        let w = if d.abs() < HALF as f64 {
            0.5 * (1.0 + (std::f64::consts::PI * d / HALF as f64).cos())
        } else {
            0.0
        };
        *tap = 2.0 * fc * sinc(2.0 * fc * d) * w;
    }
    let sum: f64 = taps.iter().sum();
    if sum.abs() > 0.0 {
        taps.iter_mut().for_each(|t| *t /= sum);
    }
    taps
}

/// Rational-ratio polyphase resampler with a Hann-windowed sinc prototype.
///
/// Output length is `round(len * target / source)`. Same-rate input is returned untouched.
pub fn resample(rec: &PcgRecording, target_hz: u32) -> PcgRecording {
    assert!(target_hz > 0, "target rate must be positive");
    let src = rec.sample_rate_hz as u64;
    let dst = target_hz as u64;
    if src == dst {
        return rec.clone();
    }
    let g = gcd(src, dst);
    let up = dst / g;
    let down = src / g;
    let n_in = rec.samples.len() as u64;
    let n_out = ((n_in as u128 * dst as u128 + src as u128 / 2) / src as u128) as usize;
    // normalized to the input rate
    let fc = CUTOFF_RATIO * src.min(dst) as f64 / src as f64;

    let table: Option<Vec<[f64; TAPS_PER_PHASE]>> = (up <= MAX_CACHED_PHASES)
        .then(|| (0..up).map(|p| phase_taps(p as f64 / up as f64, fc)).collect());

    let x = &rec.samples;
    let mut out = Vec::with_capacity(n_out);
    for j in 0..n_out as u64 {
        let pos = j * down;
        let base = (pos / up) as i64;
        let phase = pos % up;
        let owned;
        let taps = match &table {
            Some(t) => &t[phase as usize],
            None => {
                owned = phase_taps(phase as f64 / up as f64, fc);
                &owned
            }
        };
        let start = base - (HALF - 1);
        let mut acc = 0.0;
        for (i, &h) in taps.iter().enumerate() {
            let k = start + i as i64;
            if k >= 0 && (k as usize) < x.len() {
                acc += h * x[k as usize];
            }
        }
        out.push(acc.clamp(-1.0, 1.0));
    }
    PcgRecording {
        samples: out,
        sample_rate_hz: target_hz,
        source_id: rec.source_id.clone(),
        subject_id: rec.subject_id.clone(),
    }
}
