use super::{PcgRecording, SignalError};
use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use std::path::Path;

/// On-disk sample encoding for [`write_wav`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavEncoding {
    Pcm16,
    Float32,
}

const PCM16_SCALE: f64 = 32768.0;

/// Loads a mono 16-bit PCM or 32-bit float WAV file.
///
/// Integer samples are divided by 32768. Float samples outside `[-1, 1]` are clipped.
pub fn load_wav(path: &Path) -> Result<PcgRecording, SignalError> {
    let reader = WavReader::open(path).map_err(|e| map_hound(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(SignalError::UnsupportedFormat(format!(
            "{} channels (only mono is accepted)",
            spec.channels
        )));
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / PCM16_SCALE))
            .collect::<Result<_, _>>()
            .map_err(|e| map_hound(path, e))?,
        (SampleFormat::Float, 32) => {
            let raw: Vec<f32> = reader
                .into_samples::<f32>()
                .collect::<Result<_, _>>()
                .map_err(|e| map_hound(path, e))?;
            if let Some(i) = raw.iter().position(|v| !v.is_finite()) {
                return Err(SignalError::NonFinite(i));
            }
            raw.into_iter().map(|v| (v as f64).clamp(-1.0, 1.0)).collect()
        }
        (fmt, bits) => {
            return Err(SignalError::UnsupportedFormat(format!("{bits}-bit {fmt:?} samples")));
        }
    };
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    PcgRecording::new(samples, spec.sample_rate, id)
}

/// Writes a mono WAV file. PCM16 quantizes with `round(x * 32768)` clamped to the i16 range.
pub fn write_wav(rec: &PcgRecording, path: &Path, encoding: WavEncoding) -> Result<(), SignalError> {
    let (bits, fmt) = match encoding {
        WavEncoding::Pcm16 => (16, SampleFormat::Int),
        WavEncoding::Float32 => (32, SampleFormat::Float),
    };
    let spec = WavSpec {
        channels: 1,
        sample_rate: rec.sample_rate_hz,
        bits_per_sample: bits,
        sample_format: fmt,
    };
    let mut w = WavWriter::create(path, spec).map_err(|e| map_hound(path, e))?;
    for &x in &rec.samples {
        let res = match encoding {
            WavEncoding::Pcm16 => {
                let q = (x * PCM16_SCALE).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16;
                w.write_sample(q)
            }
            WavEncoding::Float32 => w.write_sample(x as f32),
        };
        res.map_err(|e| map_hound(path, e))?;
    }
    w.finalize().map_err(|e| map_hound(path, e))
}

fn map_hound(path: &Path, e: hound::Error) -> SignalError {
    match e {
        hound::Error::IoError(io) => SignalError::Io(io),
        hound::Error::Unsupported => SignalError::UnsupportedFormat("non-PCM encoding".into()),
        hound::Error::FormatError(reason) => SignalError::CorruptHeader {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        },
        other => SignalError::CorruptHeader {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_i16(path: &Path, values: &[i16], channels: u16) {
        let spec = WavSpec {
            channels,
            sample_rate: 1000,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(path, spec).unwrap();
        for &v in values {
            w.write_sample(v).unwrap();
        }
        w.finalize().unwrap();
    }

    #[test]
    fn integer_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        write_i16(&p, &[0, -32768, 16384], 1);
        let r = load_wav(&p).unwrap();
        assert_eq!(r.samples, vec![0.0, -1.0, 0.5]);
        assert_eq!(r.sample_rate_hz, 1000);
        assert_eq!(r.source_id, "a");
    }

    #[test]
    fn pcm16_round_trip_within_one_lsb() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rt.wav");
        let samples: Vec<f64> = (0..100).map(|i| ((i as f64) * 0.37).sin() * 0.999).collect();
        let rec = PcgRecording::new(samples.clone(), 1000, "rt").unwrap();
        write_wav(&rec, &p, WavEncoding::Pcm16).unwrap();
        let back = load_wav(&p).unwrap();
        assert_eq!(back.len(), 100);
        for (a, b) in samples.iter().zip(&back.samples) {
            assert!((a - b).abs() <= 1.0 / 32768.0);
        }
    }

    #[test]
    fn float_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.wav");
        let rec = PcgRecording::new(vec![0.25, -0.5, 1.0], 4000, "f").unwrap();
        write_wav(&rec, &p, WavEncoding::Float32).unwrap();
        assert_eq!(load_wav(&p).unwrap().samples, rec.samples);
    }

    #[test]
    fn rejects_stereo_and_empty_and_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let st = dir.path().join("s.wav");
        write_i16(&st, &[1, 2, 3, 4], 2);
        assert!(matches!(load_wav(&st), Err(SignalError::UnsupportedFormat(_))));

        let empty = dir.path().join("e.wav");
        write_i16(&empty, &[], 1);
        assert!(matches!(load_wav(&empty), Err(SignalError::EmptyAudio)));

        let junk = dir.path().join("j.wav");
        std::fs::File::create(&junk).unwrap().write_all(b"RIFX nonsense here").unwrap();
        assert!(matches!(load_wav(&junk), Err(SignalError::CorruptHeader { .. })));
    }

    #[test]
    fn rejects_unsupported_bit_depth() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b8.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: 1000,
            bits_per_sample: 8,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(&p, spec).unwrap();
        w.write_sample(3i8).unwrap();
        w.finalize().unwrap();
        assert!(matches!(load_wav(&p), Err(SignalError::UnsupportedFormat(_))));
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(32))]
        #[test]
        fn round_trip_error_bounded(xs in proptest::collection::vec(-1.0f64..=1.0, 1..200)) {
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("p.wav");
            let rec = PcgRecording::new(xs.clone(), 1000, "p").unwrap();
            write_wav(&rec, &p, WavEncoding::Pcm16).unwrap();
            let back = load_wav(&p).unwrap();
            for (a, b) in xs.iter().zip(&back.samples) {
                proptest::prop_assert!((a - b).abs() <= 2f64.powi(-15));
            }
        }
    }
}
