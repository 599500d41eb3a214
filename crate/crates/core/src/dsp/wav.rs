//! WAV files: 16-bit PCM or 32-bit float, one or two channels.

use std::path::Path;

use hound::{SampleFormat as HoundFormat, WavReader, WavSpec, WavWriter};

use crate::error::{invalid, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleFormat {
    Pcm16,
    Float32,
}

/// Writes equal-length channels (1 or 2), interleaved.
pub fn write_wav(path: &Path, channels: &[&[f64]], sample_rate: u32, format: SampleFormat) -> Result<()> {
    if channels.is_empty() || channels.len() > 2 {
        invalid!("{} channels; only mono and stereo are supported", channels.len());
    }
    let len = channels[0].len();
    if channels.iter().any(|c| c.len() != len) {
        invalid!("channel lengths differ");
    }
    let spec = WavSpec {
        channels: channels.len() as u16,
        sample_rate,
        bits_per_sample: match format {
            SampleFormat::Pcm16 => 16,
            SampleFormat::Float32 => 32,
        },
        sample_format: match format {
            SampleFormat::Pcm16 => HoundFormat::Int,
            SampleFormat::Float32 => HoundFormat::Float,
        },
    };
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let mut w = WavWriter::create(path, spec).map_err(wav_err)?;
    for i in 0..len {
        for c in channels {
            match format {
                SampleFormat::Pcm16 => {
                    let v = (c[i].clamp(-1.0, 1.0) * 32767.0).round() as i16;
                    w.write_sample(v).map_err(wav_err)?;
                }
                SampleFormat::Float32 => w.write_sample(c[i] as f32).map_err(wav_err)?,
            }
        }
    }
    w.finalize().map_err(wav_err)
}

/// Reads a mono or stereo file into per-channel buffers; the file's rate
/// must equal `expected_rate` (no resampling).
pub fn read_wav(path: &Path, expected_rate: u32) -> Result<Vec<Vec<f64>>> {
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let mut r = WavReader::open(path).map_err(wav_err)?;
    let spec = r.spec();
    if spec.sample_rate != expected_rate {
        invalid!(
            "{}: sample rate {} Hz, expected {expected_rate} Hz",
            path.display(),
            spec.sample_rate
        );
    }
    let n_ch = spec.channels as usize;
    if n_ch == 0 || n_ch > 2 {
        invalid!("{}: {n_ch} channels", path.display());
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (HoundFormat::Int, 16) => r
            .samples::<i16>()
            .map(|s| s.map(|v| f64::from(v) / 32767.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_err)?,
        (HoundFormat::Float, 32) => r
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_err)?,
        (fmt, bits) => invalid!("{}: unsupported {bits}-bit {fmt:?}", path.display()),
    };
    let mut out = vec![Vec::with_capacity(interleaved.len() / n_ch); n_ch];
    for (i, v) in interleaved.into_iter().enumerate() {
        out[i % n_ch].push(v);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_stereo_round_trip_and_rate_check() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let l = vec![0.25, -0.5, 0.125];
        let r = vec![0.0, 0.75, -1.0];
        write_wav(&p, &[&l, &r], 16_000, SampleFormat::Float32).unwrap();
        let back = read_wav(&p, 16_000).unwrap();
        assert_eq!(back, vec![l, r]);
        assert!(read_wav(&p, 8_000).is_err());
    }

    #[test]
    fn pcm16_mono_quantizes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.wav");
        let x = vec![0.5, -0.25, 0.0];
        write_wav(&p, &[&x], 16_000, SampleFormat::Pcm16).unwrap();
        let back = read_wav(&p, 16_000).unwrap();
        assert_eq!(back.len(), 1);
        for (a, b) in back[0].iter().zip(&x) {
            assert!((a - b).abs() < 1.0 / 32767.0);
        }
    }
}
