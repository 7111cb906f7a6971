//! RIFF WAVE input and output.
//!
//! Output is always 16-bit signed PCM, mono. Input accepts integer PCM of
//! any width and 32-bit float; multichannel files are averaged to mono.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use jpd_core::Waveform;

use crate::error::{Error, Result};

fn wav_err(path: &Path) -> impl FnOnce(hound::Error) -> Error + '_ {
    move |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_wav(path: &Path, audio: &Waveform) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let rate = audio.sample_rate.round();
    if !(rate >= 1.0 && rate <= u32::MAX as f64) {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("unsupported sample rate {}", audio.sample_rate),
        });
    }
    let spec = WavSpec {
        channels: 1,
        sample_rate: rate as u32,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut w = WavWriter::create(path, spec).map_err(wav_err(path))?;
    for &s in &audio.samples {
        let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        w.write_sample(v).map_err(wav_err(path))?;
    }
    w.finalize().map_err(wav_err(path))
}

pub fn read_wav(path: &Path) -> Result<Waveform> {
    let mut r = WavReader::open(path).map_err(wav_err(path))?;
    let spec = r.spec();
    let channels = spec.channels.max(1) as usize;
    let interleaved: Vec<f64> = match spec.sample_format {
        SampleFormat::Float => r
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_err(path))?,
        SampleFormat::Int => {
            let scale = (1u64 << (spec.bits_per_sample.clamp(1, 32) - 1)) as f64;
            r.samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(wav_err(path))?
        }
    };
    let samples = interleaved
        .chunks(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect();
    Ok(Waveform::new(samples, spec.sample_rate as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_within_one_lsb() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        let samples: Vec<f64> = (0..1000).map(|i| 0.7 * (i as f64 * 0.05).sin()).collect();
        write_wav(&path, &Waveform::new(samples.clone(), 16000.0)).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.sample_rate, 16000.0);
        assert_eq!(back.samples.len(), 1000);
        for (a, b) in samples.iter().zip(&back.samples) {
            assert!((a - b).abs() <= 1.0 / 32768.0);
        }
    }

    #[test]
    fn missing_file_is_an_error() {
        assert!(matches!(
            read_wav(Path::new("/nonexistent/x.wav")),
            Err(Error::Wav { .. })
        ));
    }
}
