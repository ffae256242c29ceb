use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{AudioClip, N_MELS, STFT_HOP, STFT_WINDOW};
use crate::error::{Error, Result};

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Power spectrogram stored bin-major: `data[bin * frames + frame]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerSpectrogram {
    pub bins: usize,
    pub frames: usize,
    pub data: Vec<f64>,
}

impl PowerSpectrogram {
    pub fn get(&self, bin: usize, frame: usize) -> f64 {
        self.data[bin * self.frames + frame]
    }
}

/// Periodic Hann window.
fn hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
        .collect()
}

struct Stft {
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    hop: usize,
}

impl Stft {
    fn new(window_len: usize, hop: usize) -> Self {
        Self {
            window: hann(window_len),
            fft: FftPlanner::new().plan_fft_forward(window_len),
            hop,
        }
    }

    fn run(&self, signal: &[f32]) -> Result<PowerSpectrogram> {
        let win = self.window.len();
        if signal.len() < win {
            return Err(Error::invalid(format!(
                "signal of {} samples is shorter than the {win}-sample window",
                signal.len()
            )));
        }
        let frames = 1 + (signal.len() - win) / self.hop;
        let bins = win / 2 + 1;
        let mut data = vec![0.0; bins * frames];
        let mut buf = vec![Complex::new(0.0, 0.0); win];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        for f in 0..frames {
            let start = f * self.hop;
            for (i, b) in buf.iter_mut().enumerate() {
                *b = Complex::new(signal[start + i] as f64 * self.window[i], 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (k, c) in buf.iter().take(bins).enumerate() {
                data[k * frames + f] = c.norm_sqr();
            }
        }
        Ok(PowerSpectrogram { bins, frames, data })
    }
}

/// Hann-windowed power STFT without centre padding.
pub fn stft_power(channel: &[f32], window_len: usize, hop: usize) -> Result<PowerSpectrogram> {
    if window_len == 0 || hop == 0 {
        return Err(Error::invalid("window length and hop must be positive"));
    }
    Stft::new(window_len, hop).run(channel)
}

/// Triangular mel filters, row-major `n_mels × n_bins`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    pub n_mels: usize,
    pub n_bins: usize,
    pub weights: Vec<f64>,
    /// Filter centre frequencies in Hz.
    pub centers_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn row(&self, m: usize) -> &[f64] {
        &self.weights[m * self.n_bins..(m + 1) * self.n_bins]
    }

    fn apply(&self, spec: &PowerSpectrogram, out: &mut [f32]) {
        debug_assert_eq!(spec.bins, self.n_bins);
        let frames = spec.frames;
        let mut acc = vec![0.0f64; frames];
        for m in 0..self.n_mels {
            acc.iter_mut().for_each(|a| *a = 0.0);
            for (k, &w) in self.row(m).iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                let src = &spec.data[k * frames..(k + 1) * frames];
                for (a, &p) in acc.iter_mut().zip(src) {
                    *a += w * p;
                }
            }
            for (o, a) in out[m * frames..(m + 1) * frames].iter_mut().zip(&acc) {
                *o = *a as f32;
            }
        }
    }
}

/// Builds unnormalised (peak 1) triangular filters with centres equally
/// spaced on the `2595·log10(1 + f/700)` mel scale between 0 and Nyquist.
pub fn mel_filterbank(n_mels: usize, n_fft_bins: usize, sample_rate: u32) -> Result<MelFilterbank> {
    if n_mels == 0 {
        return Err(Error::invalid("n_mels must be at least 1"));
    }
    if sample_rate == 0 || n_fft_bins < 2 {
        return Err(Error::invalid("sample rate and bin count must be positive"));
    }
    let n_fft = 2 * (n_fft_bins - 1);
    let nyquist = sample_rate as f64 / 2.0;
    let top = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz: Vec<f64> = (0..n_fft_bins)
        .map(|k| k as f64 * sample_rate as f64 / n_fft as f64)
        .collect();
    let mut weights = vec![0.0; n_mels * n_fft_bins];
    for m in 0..n_mels {
        let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        let row = &mut weights[m * n_fft_bins..(m + 1) * n_fft_bins];
        for (w, &f) in row.iter_mut().zip(&bin_hz) {
            let rising = (f - lo) / (mid - lo);
            let falling = (hi - f) / (hi - mid);
            *w = rising.min(falling).max(0.0);
        }
        if row.iter().all(|&w| w == 0.0) {
            return Err(Error::invalid(format!(
                "mel filter {m} ({lo:.1}-{hi:.1} Hz) covers no FFT bin; \
                 {n_mels} mels is too many for {n_fft_bins} bins"
            )));
        }
    }
    Ok(MelFilterbank {
        n_mels,
        n_bins: n_fft_bins,
        weights,
        centers_hz: edges[1..=n_mels].to_vec(),
    })
}

/// Mel-spectrogram front-end settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MelConfig {
    pub window: usize,
    pub hop: usize,
    pub n_mels: usize,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            window: STFT_WINDOW,
            hop: STFT_HOP,
            n_mels: N_MELS,
        }
    }
}

/// Channels × mels × frames power values, stored contiguously in that order.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub channels: usize,
    pub n_mels: usize,
    pub n_frames: usize,
    pub frame_hop: usize,
    pub source_rate: u32,
    pub values: Vec<f32>,
}

impl MelSpectrogram {
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.n_mels, self.n_frames)
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let plane = self.n_mels * self.n_frames;
        &self.values[c * plane..(c + 1) * plane]
    }

    pub fn get(&self, c: usize, m: usize, t: usize) -> f32 {
        self.values[(c * self.n_mels + m) * self.n_frames + t]
    }

    /// Same metadata, new values. Panics when the length differs.
    pub fn with_values(&self, values: Vec<f32>) -> Self {
        assert_eq!(values.len(), self.values.len());
        Self {
            values,
            ..self.clone()
        }
    }

    /// Copies a mono spectrogram into `channels` identical channels.
    pub fn widen(&self, channels: usize) -> Result<Self> {
        if channels == self.channels {
            return Ok(self.clone());
        }
        if self.channels != 1 {
            return Err(Error::invalid(format!(
                "cannot widen a {}-channel spectrogram to {channels}",
                self.channels
            )));
        }
        Ok(Self {
            channels,
            values: self.values.repeat(channels),
            ..self.clone()
        })
    }
}

/// Mel spectrogram with the default front-end (Hann 400 / hop 160 / 16 mels).
pub fn mel_spectrogram(clip: &AudioClip) -> Result<MelSpectrogram> {
    mel_spectrogram_with(clip, MelConfig::default())
}

pub fn mel_spectrogram_with(clip: &AudioClip, cfg: MelConfig) -> Result<MelSpectrogram> {
    let bank = mel_filterbank(cfg.n_mels, cfg.window / 2 + 1, clip.sample_rate())?;
    let stft = Stft::new(cfg.window, cfg.hop);
    let mut values = Vec::new();
    let mut n_frames = 0;
    for ch in clip.samples() {
        let power = stft.run(ch)?;
        n_frames = power.frames;
        let start = values.len();
        values.resize(start + cfg.n_mels * n_frames, 0.0);
        bank.apply(&power, &mut values[start..]);
    }
    Ok(MelSpectrogram {
        channels: clip.channels(),
        n_mels: cfg.n_mels,
        n_frames,
        frame_hop: cfg.hop,
        source_rate: clip.sample_rate(),
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::PIPELINE_SAMPLE_RATE;

    #[test]
    fn frame_count_formula() {
        let s = stft_power(&vec![0.0; 44_100], 400, 160).unwrap();
        assert_eq!(s.frames, 274);
        assert_eq!(s.bins, 201);
    }

    #[test]
    fn zero_signal_zero_power() {
        let s = stft_power(&vec![0.0; 1000], 400, 160).unwrap();
        assert!(s.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dc_energy_in_bin_zero() {
        let s = stft_power(&vec![1.0; 800], 400, 160).unwrap();
        let sum_w: f64 = hann(400).iter().sum();
        for f in 0..s.frames {
            assert!((s.get(0, f) - sum_w * sum_w).abs() < 1e-6 * sum_w * sum_w);
            // Periodic Hann leaks only into the first neighbour bin.
            for k in 2..s.bins {
                assert!(s.get(k, f) < 1e-12 * sum_w * sum_w);
            }
        }
    }

    #[test]
    fn short_signal_rejected() {
        assert!(stft_power(&[0.0; 399], 400, 160).is_err());
    }

    #[test]
    fn filterbank_shape_and_triangles() {
        let bank = mel_filterbank(16, 201, PIPELINE_SAMPLE_RATE).unwrap();
        assert_eq!((bank.n_mels, bank.n_bins), (16, 201));
        for m in 0..16 {
            let row = bank.row(m);
            assert!(row.iter().all(|&w| (0.0..=1.0).contains(&w)));
            let peak = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert!(row[..=peak].windows(2).all(|w| w[0] <= w[1]));
            assert!(row[peak..].windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn filter_centres_match_inverted_mel_grid() {
        let bank = mel_filterbank(16, 201, PIPELINE_SAMPLE_RATE).unwrap();
        // 18 equally spaced mel points from 0 to mel(5512.5); centres are the inner 16.
        let top = 2595.0 * (1.0f64 + 5512.5 / 700.0).log10();
        for (i, &c) in bank.centers_hz.iter().enumerate() {
            let mel = top * (i + 1) as f64 / 17.0;
            let hz = 700.0 * (10f64.powf(mel / 2595.0) - 1.0);
            assert!((c - hz).abs() < 1e-9);
        }
        assert!(bank.centers_hz.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn too_many_mels_rejected() {
        assert!(mel_filterbank(200, 201, PIPELINE_SAMPLE_RATE).is_err());
    }

    #[test]
    fn two_channel_default_shape() {
        let clip = AudioClip::zeros(2, 44_100, PIPELINE_SAMPLE_RATE).unwrap();
        let mel = mel_spectrogram(&clip).unwrap();
        assert_eq!(mel.shape(), (2, 16, 274));
        assert!(mel.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn power_scales_quadratically() {
        let s: Vec<f32> = (0..4000).map(|i| ((i * 7919) % 97) as f32 / 97.0 - 0.5).collect();
        let clip = AudioClip::new(vec![s], PIPELINE_SAMPLE_RATE).unwrap();
        let a = mel_spectrogram(&clip).unwrap();
        let b = mel_spectrogram(&clip.scaled(2.0)).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((y - 4.0 * x).abs() <= 1e-5 * (4.0 * x).abs().max(1e-12));
        }
    }
}
