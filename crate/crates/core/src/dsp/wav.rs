//! 32-bit float WAV persistence.

use std::path::Path;

use super::AudioClip;
use crate::error::{Error, Result};

fn hound_err(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::AudioFormat {
            path: path.to_path_buf(),
            detail: other.to_string(),
        },
    }
}

/// Writes interleaved little-endian float32 samples.
pub fn write_wav(path: &Path, clip: &AudioClip) -> Result<()> {
    let spec = hound::WavSpec {
        channels: clip.channels() as u16,
        sample_rate: clip.sample_rate(),
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(|e| hound_err(path, e))?;
    for i in 0..clip.len() {
        for c in 0..clip.channels() {
            w.write_sample(clip.channel(c)[i]).map_err(|e| hound_err(path, e))?;
        }
    }
    w.finalize().map_err(|e| hound_err(path, e))
}

/// Reads a float32 WAV; integer PCM and other encodings are rejected.
pub fn read_wav(path: &Path) -> Result<AudioClip> {
    let mut r = hound::WavReader::open(path).map_err(|e| hound_err(path, e))?;
    let spec = r.spec();
    if spec.sample_format != hound::SampleFormat::Float || spec.bits_per_sample != 32 {
        return Err(Error::AudioFormat {
            path: path.to_path_buf(),
            detail: format!(
                "expected 32-bit float samples, found {:?} with {} bits",
                spec.sample_format, spec.bits_per_sample
            ),
        });
    }
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::AudioFormat {
            path: path.to_path_buf(),
            detail: "zero channels".into(),
        });
    }
    let mut samples = vec![Vec::with_capacity(r.len() as usize / channels); channels];
    for (i, s) in r.samples::<f32>().enumerate() {
        samples[i % channels].push(s.map_err(|e| hound_err(path, e))?);
    }
    AudioClip::new(samples, spec.sample_rate)
}
