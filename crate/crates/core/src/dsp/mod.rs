//! Audio front-end: clip conditioning, decimation, mel spectrograms,
//! channel normalization and amplitude envelopes.

mod envelope;
mod normalize;
mod resample;
mod spectral;
pub mod wav;

pub use envelope::{amplitude_envelope, Envelope};
pub use normalize::{apply_normalization, fit_channel_stats, invert_normalization, ChannelStats};
pub use resample::{design_lowpass, resample_down, ANTI_ALIAS_TAPS};
pub use spectral::{
    hz_to_mel, mel_filterbank, mel_spectrogram, mel_spectrogram_with, mel_to_hz, stft_power,
    MelConfig, MelFilterbank, MelSpectrogram, PowerSpectrogram,
};

use crate::error::{Error, Result};

/// Rate at which clips are recorded and simulated.
pub const RAW_SAMPLE_RATE: u32 = 44_100;
/// Integer decimation factor from the raw rate to the pipeline rate.
pub const DECIMATION: usize = 4;
/// Rate used by every downstream stage (44100 / 4).
pub const PIPELINE_SAMPLE_RATE: u32 = RAW_SAMPLE_RATE / DECIMATION as u32;
pub const CLIP_SECONDS: usize = 4;
pub const STFT_WINDOW: usize = 400;
pub const STFT_HOP: usize = 160;
pub const N_MELS: usize = 16;
/// Envelope frame, about 23 ms at the pipeline rate.
pub const ENVELOPE_FRAME: usize = 256;

/// Multichannel waveform. Every channel has the same length.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<Vec<f32>>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<Vec<f32>>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("audio clip must have at least one channel"));
        }
        if sample_rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        let len = samples[0].len();
        if let Some((i, ch)) = samples.iter().enumerate().find(|(_, c)| c.len() != len) {
            return Err(Error::shape(
                "AudioClip::new",
                format!("channel {i} has {} samples, channel 0 has {len}", ch.len()),
            ));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    /// Silent clip.
    pub fn zeros(channels: usize, len: usize, sample_rate: u32) -> Result<Self> {
        Self::new(vec![vec![0.0; len]; channels], sample_rate)
    }

    pub fn channels(&self) -> usize {
        self.samples.len()
    }

    pub fn len(&self) -> usize {
        self.samples[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn channel(&self, i: usize) -> &[f32] {
        &self.samples[i]
    }

    pub fn samples(&self) -> &[Vec<f32>] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Vec<f32>> {
        self.samples
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }

    /// Root-mean-square over all channels and samples.
    pub fn rms(&self) -> f64 {
        let n = (self.len() * self.channels()).max(1);
        let sq: f64 = self
            .samples
            .iter()
            .flat_map(|c| c.iter())
            .map(|&s| (s as f64) * (s as f64))
            .sum();
        (sq / n as f64).sqrt()
    }

    /// Per-channel sum of squares.
    pub fn channel_energy(&self) -> Vec<f64> {
        self.samples
            .iter()
            .map(|c| c.iter().map(|&s| (s as f64) * (s as f64)).sum())
            .collect()
    }

    /// Returns a copy with every sample multiplied by `gain`.
    pub fn scaled(&self, gain: f32) -> Self {
        Self {
            samples: self
                .samples
                .iter()
                .map(|c| c.iter().map(|s| s * gain).collect())
                .collect(),
            sample_rate: self.sample_rate,
        }
    }

    /// Repeats a mono clip into `channels` identical channels.
    pub fn widen(&self, channels: usize) -> Result<Self> {
        if self.channels() == channels {
            return Ok(self.clone());
        }
        if self.channels() != 1 {
            return Err(Error::invalid(format!(
                "cannot widen a {}-channel clip to {channels} channels",
                self.channels()
            )));
        }
        Self::new(vec![self.samples[0].clone(); channels], self.sample_rate)
    }
}

/// Truncates or zero-pads every channel at the end to exactly `target_len` samples.
pub fn pad_clip(clip: &AudioClip, target_len: usize) -> Result<AudioClip> {
    if target_len == 0 {
        return Err(Error::invalid("target length must be positive"));
    }
    let samples = clip
        .samples
        .iter()
        .map(|c| {
            let mut out = Vec::with_capacity(target_len);
            out.extend_from_slice(&c[..c.len().min(target_len)]);
            out.resize(target_len, 0.0);
            out
        })
        .collect();
    AudioClip::new(samples, clip.sample_rate)
}

/// Canonical conditioning: pad/clip to the clip duration at the raw rate,
/// then decimate to the pipeline rate.
pub fn condition(clip: &AudioClip) -> Result<AudioClip> {
    let target = CLIP_SECONDS * clip.sample_rate() as usize;
    let padded = pad_clip(clip, target)?;
    if clip.sample_rate() == PIPELINE_SAMPLE_RATE {
        return Ok(padded);
    }
    if clip.sample_rate() != RAW_SAMPLE_RATE {
        return Err(Error::invalid(format!(
            "expected audio at {RAW_SAMPLE_RATE} Hz or {PIPELINE_SAMPLE_RATE} Hz, got {} Hz",
            clip.sample_rate()
        )));
    }
    resample_down(&padded, DECIMATION)
}
