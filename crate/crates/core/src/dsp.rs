//! Small DSP building blocks shared by the feature extractor and the mel front end.

use rustfft::{num_complex::Complex, FftPlanner};
use std::f64::consts::PI;

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect()
}

pub fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        0.0
    } else {
        x.iter().sum::<f64>() / x.len() as f64
    }
}

/// Population variance.
pub fn variance(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64
}

pub fn std_dev(x: &[f64]) -> f64 {
    variance(x).sqrt()
}

/// Sample skewness; NaN for constant input.
pub fn skewness(x: &[f64]) -> f64 {
    let m = mean(x);
    let s = std_dev(x);
    x.iter().map(|v| ((v - m) / s).powi(3)).sum::<f64>() / x.len() as f64
}

/// Excess kurtosis; NaN for constant input.
pub fn kurtosis(x: &[f64]) -> f64 {
    let m = mean(x);
    let s = std_dev(x);
    x.iter().map(|v| ((v - m) / s).powi(4)).sum::<f64>() / x.len() as f64 - 3.0
}

/// Magnitude of the analytic signal (FFT Hilbert transform).
pub fn analytic_magnitude(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    // one-sided spectrum: keep DC (and Nyquist for even n), double positive frequencies
    let half = n.div_ceil(2);
    for (k, c) in buf.iter_mut().enumerate() {
        if k == 0 || (n % 2 == 0 && k == n / 2) {
            continue;
        }
        if k < half {
            *c *= 2.0;
        } else {
            *c = Complex::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|c| c.norm() / n as f64).collect()
}

/// Power spectrum `|FFT(frame zero-padded to n_fft)|^2` for bins `0..=n_fft/2`.
pub struct PowerSpectrum {
    n_fft: usize,
    fft: std::sync::Arc<dyn rustfft::Fft<f64>>,
    buf: Vec<Complex<f64>>,
}

impl PowerSpectrum {
    pub fn new(n_fft: usize) -> Self {
        Self {
            n_fft,
            fft: FftPlanner::new().plan_fft_forward(n_fft),
            buf: vec![Complex::new(0.0, 0.0); n_fft],
        }
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn compute(&mut self, frame: &[f64], out: &mut [f64]) {
        debug_assert!(frame.len() <= self.n_fft);
        for (i, c) in self.buf.iter_mut().enumerate() {
            *c = Complex::new(frame.get(i).copied().unwrap_or(0.0), 0.0);
        }
        self.fft.process(&mut self.buf);
        for (o, c) in out.iter_mut().zip(&self.buf) {
            *o = c.norm_sqr();
        }
    }
}

/// Welch PSD estimate (Hann window, per-segment mean removal, averaged periodograms).
///
/// Returns `(frequencies, density)` with `n_fft / 2 + 1` bins. A signal shorter than
/// `n_fft` is treated as a single zero-padded segment.
pub fn welch(x: &[f64], rate: f64, n_fft: usize, overlap: usize) -> (Vec<f64>, Vec<f64>) {
    let n_bins = n_fft / 2 + 1;
    let freqs: Vec<f64> = (0..n_bins).map(|k| k as f64 * rate / n_fft as f64).collect();
    let seg = n_fft.min(x.len()).max(1);
    let step = (n_fft - overlap).max(1);
    let win = hann(seg);
    let win_pow: f64 = win.iter().map(|w| w * w).sum();
    let mut ps = PowerSpectrum::new(n_fft);
    let mut acc = vec![0.0; n_bins];
    let mut tmp = vec![0.0; n_bins];
    let mut frame = vec![0.0; seg];
    let mut count = 0usize;
    let mut start = 0usize;
    while start + seg <= x.len() {
        let part = &x[start..start + seg];
        let m = mean(part);
        for ((f, &v), &w) in frame.iter_mut().zip(part).zip(&win) {
            *f = (v - m) * w;
        }
        ps.compute(&frame, &mut tmp);
        acc.iter_mut().zip(&tmp).for_each(|(a, t)| *a += t);
        count += 1;
        start += step;
    }
    let scale = if count == 0 || win_pow == 0.0 {
        0.0
    } else {
        1.0 / (count as f64 * win_pow * rate)
    };
    for (k, a) in acc.iter_mut().enumerate() {
        *a *= scale;
        if k != 0 && !(n_fft % 2 == 0 && k == n_fft / 2) {
            *a *= 2.0;
        }
    }
    (freqs, acc)
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Center frequencies of `n_filters` triangles evenly spaced on the mel scale.
pub fn mel_centers(n_filters: usize, fmin: f64, fmax: f64) -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
    (1..=n_filters)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_filters + 1) as f64))
        .collect()
}

/// Triangular mel filterbank over FFT bins, `weights[filter][bin]`.
///
/// With `area_normalize` each triangle is scaled by `2 / (f_right - f_left)`, so every
/// filter integrates to the same area in Hz.
pub fn mel_filterbank(n_filters: usize, n_fft: usize, rate: f64, fmin: f64, fmax: f64, area_normalize: bool) -> Vec<Vec<f64>> {
    let (lo, hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
    let edges: Vec<f64> = (0..n_filters + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_filters + 1) as f64))
        .collect();
    let n_bins = n_fft / 2 + 1;
    (0..n_filters)
        .map(|m| {
            let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
            let norm = if area_normalize { 2.0 / (r - l) } else { 1.0 };
            (0..n_bins)
                .map(|k| {
                    let f = k as f64 * rate / n_fft as f64;
                    let w = if f > l && f <= c {
                        (f - l) / (c - l)
                    } else if f > c && f < r {
                        (r - f) / (r - c)
                    } else {
                        0.0
                    };
                    w * norm
                })
                .collect()
        })
        .collect()
}

/// Orthonormal DCT-II, first `n_out` coefficients.
pub fn dct2(x: &[f64], n_out: usize) -> Vec<f64> {
    let n = x.len() as f64;
    (0..n_out)
        .map(|k| {
            let s: f64 = x
                .iter()
                .enumerate()
                .map(|(i, v)| v * (PI * k as f64 * (i as f64 + 0.5) / n).cos())
                .sum();
            let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
            s * scale
        })
        .collect()
}

/// Autocorrelation of the mean-removed signal normalized by lag 0, for lags `0..max_lag`.
/// All zeros if the signal is constant.
pub fn autocorrelation(x: &[f64], max_lag: usize) -> Vec<f64> {
    let n = x.len();
    let max_lag = max_lag.min(n);
    if n == 0 {
        return vec![0.0; max_lag];
    }
    let m = mean(x);
    let size = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = (0..size)
        .map(|i| Complex::new(if i < n { x[i] - m } else { 0.0 }, 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(size).process(&mut buf);
    buf.iter_mut().for_each(|c| *c = Complex::new(c.norm_sqr(), 0.0));
    planner.plan_fft_inverse(size).process(&mut buf);
    let r0 = buf[0].re;
    if r0 <= 0.0 || !r0.is_finite() {
        return vec![0.0; max_lag];
    }
    (0..max_lag).map(|k| buf[k].re / r0).collect()
}

/// Local maxima with their topographic prominence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub index: usize,
    pub height: f64,
    pub prominence: f64,
}

/// Peak picking: local maxima, then a greedy minimum-distance filter keeping the tallest
/// peaks, then a prominence filter `prominence >= rel_prominence * median(height)`.
pub fn find_peaks(x: &[f64], min_distance: usize, rel_prominence: f64) -> Vec<Peak> {
    let n = x.len();
    let mut cand = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        if x[i] > x[i - 1] {
            // plateau: advance to its end, use the middle
            let mut j = i;
            while j + 1 < n && x[j + 1] == x[i] {
                j += 1;
            }
            if j + 1 < n && x[j + 1] < x[i] {
                cand.push((i + j) / 2);
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    // tallest first, ties by position
    let mut order: Vec<usize> = (0..cand.len()).collect();
    order.sort_by(|&a, &b| x[cand[b]].total_cmp(&x[cand[a]]).then(cand[a].cmp(&cand[b])));
    let mut keep = vec![true; cand.len()];
    for (pos, &oi) in order.iter().enumerate() {
        if !keep[oi] {
            continue;
        }
        for &oj in &order[pos + 1..] {
            if keep[oj] && cand[oi].abs_diff(cand[oj]) < min_distance {
                keep[oj] = false;
            }
        }
    }
    let kept: Vec<usize> = cand.iter().zip(&keep).filter(|(_, &k)| k).map(|(&c, _)| c).collect();
    if kept.is_empty() {
        return Vec::new();
    }
    let mut heights: Vec<f64> = kept.iter().map(|&i| x[i]).collect();
    heights.sort_by(f64::total_cmp);
    let median = if heights.len() % 2 == 1 {
        heights[heights.len() / 2]
    } else {
        0.5 * (heights[heights.len() / 2 - 1] + heights[heights.len() / 2])
    };
    kept.into_iter()
        .map(|i| Peak {
            index: i,
            height: x[i],
            prominence: prominence(x, i),
        })
        .filter(|p| p.prominence >= rel_prominence * median)
        .collect()
}

/// Height of a peak above the higher of its two bases.
fn prominence(x: &[f64], peak: usize) -> f64 {
    let h = x[peak];
    let mut left_min = h;
    let mut i = peak;
    while i > 0 {
        i -= 1;
        if x[i] > h {
            break;
        }
        left_min = left_min.min(x[i]);
    }
    let mut right_min = h;
    let mut j = peak + 1;
    while j < x.len() {
        if x[j] > h {
            break;
        }
        right_min = right_min.min(x[j]);
        j += 1;
    }
    h - left_min.max(right_min)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analytic_magnitude_of_sine_is_flat() {
        let x: Vec<f64> = (0..1000).map(|i| 0.7 * (2.0 * PI * 50.0 * i as f64 / 1000.0).sin()).collect();
        let m = analytic_magnitude(&x);
        assert!(m.iter().all(|v| (v - 0.7).abs() < 1e-9));
    }

    #[test]
    fn welch_matches_parseval_for_white_noise() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..20000).map(|_| rng.random::<f64>() - 0.5).collect();
        let (f, p) = welch(&x, 1000.0, 1024, 512);
        let df = f[1] - f[0];
        let total: f64 = p.iter().sum::<f64>() * df;
        assert!((total / variance(&x) - 1.0).abs() < 0.05, "{total}");
    }

    #[test]
    fn filterbank_triangles() {
        let fb = mel_filterbank(8, 256, 1000.0, 0.0, 500.0, false);
        assert_eq!(fb.len(), 8);
        assert!(fb.iter().all(|f| f.len() == 129));
        assert!(fb.iter().all(|f| f.iter().cloned().fold(0.0, f64::max) <= 1.0));
        let fbn = mel_filterbank(8, 4096, 1000.0, 0.0, 500.0, true);
        for f in &fbn {
            let area: f64 = f.iter().sum::<f64>() * 1000.0 / 4096.0;
            assert!((area - 1.0).abs() < 0.02, "{area}");
        }
    }

    #[test]
    fn dct_of_constant_has_only_dc() {
        let c = dct2(&[2.0; 16], 4);
        assert!((c[0] - 2.0 * 4.0).abs() < 1e-12);
        assert!(c[1..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn autocorrelation_of_periodic_signal() {
        let x: Vec<f64> = (0..2000).map(|i| (2.0 * PI * i as f64 / 100.0).sin()).collect();
        let r = autocorrelation(&x, 300);
        assert_eq!(r[0], 1.0);
        let best = (50..300).max_by(|&a, &b| r[a].total_cmp(&r[b])).unwrap();
        assert_eq!(best, 100);
        assert_eq!(autocorrelation(&[3.0; 10], 5), vec![0.0; 5]);
    }

    #[test]
    fn peaks_respect_distance_and_prominence() {
        let mut x = vec![0.0; 100];
        x[10] = 5.0;
        x[12] = 4.0; // too close to 10
        x[50] = 3.0;
        x[80] = 0.1; // too small
        x[79] = 0.05;
        let p = find_peaks(&x, 5, 0.25);
        let idx: Vec<usize> = p.iter().map(|p| p.index).collect();
        assert_eq!(idx, vec![10, 50]);
        assert_eq!(p[0].prominence, 5.0);
        assert!(find_peaks(&[1.0; 50], 5, 0.25).is_empty());
    }
}
