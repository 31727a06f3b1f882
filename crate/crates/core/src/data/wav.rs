//! WAV input and output through `hound`.
//!
//! Reads 16-bit PCM (scaled by 1/32768) and 32-bit float; always writes
//! 32-bit float, which round-trips bit-exactly.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::dsp::AudioBuffer;
use crate::error::{Error, Result};

fn wav_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Wav {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Loads a mono or stereo file, requiring `expected_rate`.
pub fn load_wav(path: impl AsRef<Path>, expected_rate: u32) -> Result<AudioBuffer<f32>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = WavReader::new(std::io::BufReader::new(file)).map_err(|e| wav_err(path, e))?;
    let spec = reader.spec();
    if spec.sample_rate != expected_rate {
        return Err(Error::UnsupportedSampleRate {
            found: spec.sample_rate,
            expected: expected_rate,
        });
    }
    let channels = spec.channels as usize;
    if channels == 0 || channels > 2 {
        return Err(wav_err(path, format!("{channels} channels (need 1 or 2)")));
    }
    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32_768.0))
            .collect::<Result<_, _>>()
            .map_err(|e| wav_err(path, e))?,
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .collect::<Result<_, _>>()
            .map_err(|e| wav_err(path, e))?,
        (fmt, bits) => {
            return Err(wav_err(
                path,
                format!("unsupported encoding {fmt:?} {bits}-bit (need PCM16 or float32)"),
            ))
        }
    };
    let mut data = vec![Vec::with_capacity(interleaved.len() / channels); channels];
    for frame in interleaved.chunks_exact(channels) {
        for (c, &v) in frame.iter().enumerate() {
            data[c].push(v);
        }
    }
    AudioBuffer::new(spec.sample_rate, data)
}

/// Writes 32-bit float samples.
pub fn save_wav(path: impl AsRef<Path>, audio: &AudioBuffer<f32>) -> Result<()> {
    let path = path.as_ref();
    let spec = WavSpec {
        channels: audio.num_channels() as u16,
        sample_rate: audio.sample_rate(),
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut writer = WavWriter::create(path, spec).map_err(|e| wav_err(path, e))?;
    for i in 0..audio.len() {
        for c in audio.channels() {
            writer.write_sample(c[i]).map_err(|e| wav_err(path, e))?;
        }
    }
    writer.finalize().map_err(|e| wav_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.wav");
        let left: Vec<f32> = (0..1000).map(|i| (i as f32 * 0.37).sin() * 0.9).collect();
        let right: Vec<f32> = left.iter().map(|v| -v / 3.0).collect();
        let a = AudioBuffer::stereo(48_000, left, right).unwrap();
        save_wav(&p, &a).unwrap();
        let b = load_wav(&p, 48_000).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pcm16_is_scaled() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pcm.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: 48_000,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(&p, spec).unwrap();
        for v in [16_384i16, -32_768, 0] {
            w.write_sample(v).unwrap();
        }
        w.finalize().unwrap();
        let a = load_wav(&p, 48_000).unwrap();
        assert_eq!(a.channel(0), &[0.5, -1.0, 0.0]);
    }

    #[test]
    fn wrong_rate_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cd.wav");
        save_wav(&p, &AudioBuffer::mono(44_100, vec![0.0f32; 10]).unwrap()).unwrap();
        let err = load_wav(&p, 48_000).unwrap_err();
        assert!(err.to_string().contains("unsupported sample rate"), "{err}");
    }

    #[test]
    fn malformed_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.wav");
        std::fs::write(&p, b"RIFF1234WAVEjunk").unwrap();
        assert!(matches!(load_wav(&p, 48_000), Err(Error::Wav { .. })));
        assert!(matches!(
            load_wav(dir.path().join("none.wav"), 48_000),
            Err(Error::Io { .. })
        ));
    }
}
