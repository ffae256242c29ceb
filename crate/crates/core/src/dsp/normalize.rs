use serde::{Deserialize, Serialize};

use super::MelSpectrogram;
use crate::error::{Error, Result};

const STD_FLOOR: f64 = 1e-6;

/// Per-channel mean and standard deviation of mel power, fit on a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    pub fn channels(&self) -> usize {
        self.mean.len()
    }
}

pub fn fit_channel_stats<'a, I>(specs: I) -> Result<ChannelStats>
where
    I: IntoIterator<Item = &'a MelSpectrogram>,
{
    let mut sum: Vec<f64> = Vec::new();
    let mut sum_sq: Vec<f64> = Vec::new();
    let mut count = 0usize;
    for spec in specs {
        if sum.is_empty() {
            sum = vec![0.0; spec.channels];
            sum_sq = vec![0.0; spec.channels];
        } else if spec.channels != sum.len() {
            return Err(Error::shape(
                "fit_channel_stats",
                format!("expected {} channels, got {}", sum.len(), spec.channels),
            ));
        }
        for c in 0..spec.channels {
            for &v in spec.channel(c) {
                sum[c] += v as f64;
                sum_sq[c] += (v as f64) * (v as f64);
            }
        }
        count += spec.n_mels * spec.n_frames;
    }
    if sum.is_empty() || count == 0 {
        return Err(Error::invalid("cannot fit channel statistics on an empty collection"));
    }
    let n = count as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let std = sum_sq
        .iter()
        .zip(&mean)
        .enumerate()
        .map(|(c, (sq, m))| {
            let var = (sq / n - m * m).max(0.0);
            let sd = var.sqrt();
            if sd < STD_FLOOR {
                log::warn!("channel {c} has near-zero variance; std floored at {STD_FLOOR}");
                STD_FLOOR
            } else {
                sd
            }
        })
        .collect();
    Ok(ChannelStats { mean, std })
}

fn map_channels(
    spec: &MelSpectrogram,
    stats: &ChannelStats,
    f: impl Fn(f64, f64, f64) -> f64,
) -> Result<MelSpectrogram> {
    if stats.channels() != spec.channels {
        return Err(Error::shape(
            "normalization",
            format!(
                "stats have {} channels, spectrogram has {}",
                stats.channels(),
                spec.channels
            ),
        ));
    }
    let plane = spec.n_mels * spec.n_frames;
    let values = spec
        .values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let c = i / plane;
            f(v as f64, stats.mean[c], stats.std[c]) as f32
        })
        .collect();
    Ok(spec.with_values(values))
}

pub fn apply_normalization(spec: &MelSpectrogram, stats: &ChannelStats) -> Result<MelSpectrogram> {
    map_channels(spec, stats, |v, m, s| (v - m) / s)
}

pub fn invert_normalization(spec: &MelSpectrogram, stats: &ChannelStats) -> Result<MelSpectrogram> {
    map_channels(spec, stats, |v, m, s| v * s + m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(channels: usize, values: Vec<f32>) -> MelSpectrogram {
        let n_frames = values.len() / channels;
        MelSpectrogram {
            channels,
            n_mels: 1,
            n_frames,
            frame_hop: 160,
            source_rate: 11_025,
            values,
        }
    }

    fn channel_mean(s: &MelSpectrogram, c: usize) -> f64 {
        let ch = s.channel(c);
        ch.iter().map(|&v| v as f64).sum::<f64>() / ch.len() as f64
    }

    #[test]
    fn self_fit_centres_channels() {
        let x = spec(2, vec![1.0, 2.0, 6.0, 10.0, 20.0, 60.0]);
        let stats = fit_channel_stats([&x]).unwrap();
        let y = apply_normalization(&x, &stats).unwrap();
        for c in 0..2 {
            assert!(channel_mean(&y, c).abs() < 1e-6);
            let var = y.channel(c).iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / 3.0;
            assert!((var - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn constant_spectrogram_hits_floor() {
        let x = spec(1, vec![3.0; 8]);
        let stats = fit_channel_stats([&x]).unwrap();
        assert_eq!(stats.std[0], STD_FLOOR);
        let y = apply_normalization(&x, &stats).unwrap();
        assert!(y.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pooled_mean_over_collection() {
        let a = spec(1, vec![1.0; 4]);
        let b = spec(1, vec![3.0; 4]);
        let stats = fit_channel_stats([&a, &b]).unwrap();
        assert!((stats.mean[0] - 2.0).abs() < 1e-12);
        assert!((stats.std[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_collection_rejected() {
        assert!(fit_channel_stats(std::iter::empty()).is_err());
    }

    proptest::proptest! {
        #[test]
        fn inverse_recovers_input(v in proptest::collection::vec(0.0f32..100.0, 4..40)) {
            let x = spec(1, v);
            let stats = fit_channel_stats([&x]).unwrap();
            let back = invert_normalization(&apply_normalization(&x, &stats).unwrap(), &stats).unwrap();
            for (a, b) in x.values.iter().zip(&back.values) {
                let scale = a.abs().max(stats.std[0] as f32);
                proptest::prop_assert!((a - b).abs() <= 1e-6 * scale.max(1.0) * 4.0);
            }
        }
    }
}
