use super::AudioClip;
use crate::error::{Error, Result};

/// Per-frame peak absolute amplitude, `channels × n_frames`, frame-major inside a channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub channels: usize,
    pub n_frames: usize,
    pub frame_len: usize,
    pub values: Vec<f64>,
}

impl Envelope {
    pub fn new(channels: usize, values: Vec<f64>, frame_len: usize) -> Result<Self> {
        if channels == 0 || !values.len().is_multiple_of(channels) {
            return Err(Error::shape(
                "Envelope::new",
                format!("{} values do not split into {channels} channels", values.len()),
            ));
        }
        Ok(Self {
            channels,
            n_frames: values.len() / channels,
            frame_len,
            values,
        })
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.values[c * self.n_frames..(c + 1) * self.n_frames]
    }

    pub fn get(&self, c: usize, t: usize) -> f64 {
        self.values[c * self.n_frames + t]
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v * k).collect(),
            ..self.clone()
        }
    }
}

/// Maximum of `|s|` over each non-overlapping frame; a trailing partial frame is dropped.
pub fn amplitude_envelope(clip: &AudioClip, frame_len: usize) -> Result<Envelope> {
    if frame_len == 0 {
        return Err(Error::invalid("envelope frame length must be at least 1"));
    }
    if frame_len > clip.len() {
        return Err(Error::invalid(format!(
            "frame of {frame_len} samples exceeds clip length {}",
            clip.len()
        )));
    }
    let n_frames = clip.len() / frame_len;
    let mut values = Vec::with_capacity(n_frames * clip.channels());
    for ch in clip.samples() {
        values.extend(
            ch.chunks_exact(frame_len)
                .map(|f| f.iter().fold(0.0f64, |m, &s| m.max((s as f64).abs()))),
        );
    }
    Envelope::new(clip.channels(), values, frame_len)
}
