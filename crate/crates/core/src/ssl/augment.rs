use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::MelSpectrogram;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationConfig {
    pub crop_scale_time: (f64, f64),
    pub crop_scale_mel: (f64, f64),
    /// Ablation only: blend each view with another clip.
    pub use_mixup: bool,
    pub mixup_alpha_range: (f64, f64),
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            crop_scale_time: (0.6, 1.0),
            crop_scale_mel: (0.6, 1.0),
            use_mixup: false,
            mixup_alpha_range: (0.5, 1.0),
        }
    }
}

impl AugmentationConfig {
    /// Crop ranges `[1, 1]`: views equal their input.
    pub fn identity() -> Self {
        Self {
            crop_scale_time: (1.0, 1.0),
            crop_scale_mel: (1.0, 1.0),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [
            ("crop_scale_time", self.crop_scale_time),
            ("crop_scale_mel", self.crop_scale_mel),
            ("mixup_alpha_range", self.mixup_alpha_range),
        ] {
            if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
                return Err(Error::Config(format!("{name} must satisfy 0 < lo ≤ hi ≤ 1, got [{lo}, {hi}]")));
            }
        }
        Ok(())
    }
}

/// Crop fractions and position of one random-resize-crop draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropParams {
    pub scale_time: f64,
    pub scale_mel: f64,
    /// Crop origin as a fraction of the free room, in [0, 1].
    pub pos_time: f64,
    pub pos_mel: f64,
}

impl CropParams {
    pub fn sample<R: Rng>(cfg: &AugmentationConfig, rng: &mut R) -> Self {
        let draw = |rng: &mut R, (lo, hi): (f64, f64)| if lo < hi { rng.gen_range(lo..=hi) } else { lo };
        Self {
            scale_time: draw(rng, cfg.crop_scale_time),
            scale_mel: draw(rng, cfg.crop_scale_mel),
            pos_time: rng.gen::<f64>(),
            pos_mel: rng.gen::<f64>(),
        }
    }
}

/// Source coordinate and blend weight for each output index along one axis.
fn axis_map(len: usize, scale: f64, pos: f64) -> Vec<(usize, usize, f32)> {
    let crop = scale * len as f64;
    let origin = pos * (len as f64 - crop);
    let step = crop / len as f64;
    (0..len)
        .map(|i| {
            let src = (origin + (i as f64 + 0.5) * step - 0.5).clamp(0.0, (len - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(len - 1);
            (lo, hi, (src - lo as f64) as f32)
        })
        .collect()
}

/// Bilinear crop-and-resize of every `[h, w]` plane of `src` into `dst`;
/// all planes share the crop.
pub fn resize_crop_into(src: &[f32], planes: usize, h: usize, w: usize, p: CropParams, dst: &mut [f32]) {
    let ys = axis_map(h, p.scale_mel, p.pos_mel);
    let xs = axis_map(w, p.scale_time, p.pos_time);
    for c in 0..planes {
        let s = &src[c * h * w..(c + 1) * h * w];
        let d = &mut dst[c * h * w..(c + 1) * h * w];
        for (i, &(y0, y1, fy)) in ys.iter().enumerate() {
            let (r0, r1) = (&s[y0 * w..(y0 + 1) * w], &s[y1 * w..(y1 + 1) * w]);
            for (j, &(x0, x1, fx)) in xs.iter().enumerate() {
                let top = r0[x0] + fx * (r0[x1] - r0[x0]);
                let bot = r1[x0] + fx * (r1[x1] - r1[x0]);
                d[i * w + j] = top + fy * (bot - top);
            }
        }
    }
}

/// Random crop of the mel/time plane, resized back to the original shape.
pub fn random_resize_crop<R: Rng>(spec: &MelSpectrogram, cfg: &AugmentationConfig, rng: &mut R) -> MelSpectrogram {
    let p = CropParams::sample(cfg, rng);
    let mut out = vec![0.0; spec.values.len()];
    resize_crop_into(&spec.values, spec.channels, spec.n_mels, spec.n_frames, p, &mut out);
    spec.with_values(out)
}

/// `α·a + (1 − α)·b`.
pub fn mixup_with(a: &MelSpectrogram, b: &MelSpectrogram, alpha: f64) -> Result<MelSpectrogram> {
    if a.shape() != b.shape() {
        return Err(Error::shape("mixup", format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let mut out = a.values.clone();
    mix_into(&mut out, &b.values, alpha);
    Ok(a.with_values(out))
}

/// Mixup with α drawn uniformly from the configured range.
pub fn mixup<R: Rng>(a: &MelSpectrogram, b: &MelSpectrogram, cfg: &AugmentationConfig, rng: &mut R) -> Result<MelSpectrogram> {
    let (lo, hi) = cfg.mixup_alpha_range;
    let alpha = if lo < hi { rng.gen_range(lo..=hi) } else { lo };
    mixup_with(a, b, alpha)
}

pub(crate) fn mix_into(a: &mut [f32], b: &[f32], alpha: f64) {
    // a + (1 − α)(b − a): exact when α = 1 or a = b.
    let wb = (1.0 - alpha) as f32;
    for (x, &y) in a.iter_mut().zip(b) {
        *x += wb * (y - *x);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(values: Vec<f32>, c: usize, m: usize, t: usize) -> MelSpectrogram {
        MelSpectrogram {
            channels: c,
            n_mels: m,
            n_frames: t,
            frame_hop: 160,
            source_rate: 11_025,
            values,
        }
    }

    fn ramp() -> MelSpectrogram {
        spec((0..2 * 16 * 274).map(|i| ((i * 37) % 101) as f32 * 0.1 - 3.0).collect(), 2, 16, 274)
    }

    #[test]
    fn unit_scale_is_identity() {
        let s = ramp();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5 {
            let out = random_resize_crop(&s, &AugmentationConfig::identity(), &mut rng);
            for (a, b) in out.values.iter().zip(&s.values) {
                assert!((a - b).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn shape_kept_and_constants_preserved() {
        let s = spec(vec![2.5; 16 * 274], 1, 16, 274);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let out = random_resize_crop(&s, &AugmentationConfig::default(), &mut rng);
            assert_eq!(out.shape(), s.shape());
            assert!(out.values.iter().all(|&v| (v - 2.5).abs() < 1e-6));
        }
    }

    #[test]
    fn channels_share_the_crop() {
        let mono: Vec<f32> = (0..16 * 274).map(|i| (i % 13) as f32).collect();
        let s = spec(mono.repeat(2), 2, 16, 274);
        let out = random_resize_crop(&s, &AugmentationConfig::default(), &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(out.channel(0), out.channel(1));
    }

    #[test]
    fn half_crop_interpolates_within_range() {
        let s = spec((0..8).map(|i| i as f32).collect(), 1, 1, 8);
        let p = CropParams {
            scale_time: 0.5,
            scale_mel: 1.0,
            pos_time: 0.0,
            pos_mel: 0.0,
        };
        let mut out = vec![0.0; 8];
        resize_crop_into(&s.values, 1, 1, 8, p, &mut out);
        // output i samples source (i + 0.5)/2 − 0.5, clamped at 0
        let want = [0.0, 0.25, 0.75, 1.25, 1.75, 2.25, 2.75, 3.25];
        for (a, b) in out.iter().zip(want) {
            assert!((a - b).abs() < 1e-6, "{out:?}");
        }
    }

    #[test]
    fn mixup_examples() {
        let a = spec(vec![1.0, 2.0, 3.0, 4.0], 1, 2, 2);
        let b = spec(vec![3.0, 0.0, -1.0, 8.0], 1, 2, 2);
        assert_eq!(mixup_with(&a, &b, 1.0).unwrap().values, a.values);
        assert_eq!(mixup_with(&a, &a, 0.63).unwrap().values, a.values);
        assert_eq!(mixup_with(&a, &b, 0.5).unwrap().values, vec![2.0, 1.0, 1.0, 6.0]);
        let c = spec(vec![0.0; 2], 1, 1, 2);
        assert!(mixup_with(&a, &c, 0.5).is_err());
    }

    #[test]
    fn invalid_ranges_rejected() {
        let mut cfg = AugmentationConfig::default();
        cfg.crop_scale_time = (0.0, 1.0);
        assert!(cfg.validate().is_err());
        cfg.crop_scale_time = (0.8, 0.6);
        assert!(cfg.validate().is_err());
        assert!(AugmentationConfig::default().validate().is_ok());
    }
}
