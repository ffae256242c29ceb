use crate::dsp::MelSpectrogram;
use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Equally shaped spectrograms packed contiguously, tagged with the behavior
/// and repeat they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct SpecSet {
    pub channels: usize,
    pub n_mels: usize,
    pub n_frames: usize,
    data: Vec<f32>,
    /// Behavior key; repeats of one behavior share it.
    pub groups: Vec<u64>,
    pub repeats: Vec<u32>,
}

impl SpecSet {
    pub fn new(channels: usize, n_mels: usize, n_frames: usize) -> Self {
        Self {
            channels,
            n_mels,
            n_frames,
            data: Vec::new(),
            groups: Vec::new(),
            repeats: Vec::new(),
        }
    }

    pub fn item_len(&self) -> usize {
        self.channels * self.n_mels * self.n_frames
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn push_values(&mut self, values: &[f32], group: u64, repeat: u32) -> Result<()> {
        if values.len() != self.item_len() {
            return Err(Error::shape(
                "SpecSet::push",
                format!(
                    "item has {} values, set expects {}×{}×{}",
                    values.len(),
                    self.channels,
                    self.n_mels,
                    self.n_frames
                ),
            ));
        }
        self.data.extend_from_slice(values);
        self.groups.push(group);
        self.repeats.push(repeat);
        Ok(())
    }

    pub fn push(&mut self, spec: &MelSpectrogram, group: u64, repeat: u32) -> Result<()> {
        if spec.shape() != (self.channels, self.n_mels, self.n_frames) {
            return Err(Error::shape(
                "SpecSet::push",
                format!(
                    "spectrogram {:?} vs set {:?}",
                    spec.shape(),
                    (self.channels, self.n_mels, self.n_frames)
                ),
            ));
        }
        self.push_values(&spec.values, group, repeat)
    }

    pub fn item(&self, i: usize) -> &[f32] {
        let n = self.item_len();
        &self.data[i * n..(i + 1) * n]
    }

    /// Items at `indices` as a `[B, C, mels, frames]` tensor.
    pub fn gather(&self, indices: &[usize]) -> Tensor<f32> {
        let mut data = Vec::with_capacity(indices.len() * self.item_len());
        for &i in indices {
            data.extend_from_slice(self.item(i));
        }
        Tensor::new(vec![indices.len(), self.channels, self.n_mels, self.n_frames], data).unwrap()
    }

    pub fn all(&self) -> Tensor<f32> {
        Tensor::new(
            vec![self.len(), self.channels, self.n_mels, self.n_frames],
            self.data.clone(),
        )
        .unwrap()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut out = Self::new(self.channels, self.n_mels, self.n_frames);
        for &i in indices {
            out.push_values(self.item(i), self.groups[i], self.repeats[i]).unwrap();
        }
        out
    }

    /// Mono sets become `channels` identical channels.
    pub fn widen(&self, channels: usize) -> Result<Self> {
        if channels == self.channels {
            return Ok(self.clone());
        }
        if self.channels != 1 {
            return Err(Error::invalid(format!(
                "cannot widen a {}-channel set to {channels}",
                self.channels
            )));
        }
        let mut out = Self::new(channels, self.n_mels, self.n_frames);
        for i in 0..self.len() {
            out.push_values(&self.item(i).repeat(channels), self.groups[i], self.repeats[i])?;
        }
        Ok(out)
    }

    pub fn extend(&mut self, other: &SpecSet) -> Result<()> {
        if (other.channels, other.n_mels, other.n_frames) != (self.channels, self.n_mels, self.n_frames) {
            return Err(Error::shape("SpecSet::extend", "item shapes differ"));
        }
        self.data.extend_from_slice(&other.data);
        self.groups.extend_from_slice(&other.groups);
        self.repeats.extend_from_slice(&other.repeats);
        Ok(())
    }
}
