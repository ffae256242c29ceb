use std::f64::consts::PI;

use super::AudioClip;
use crate::error::{Error, Result};

/// Length of the anti-alias FIR.
pub const ANTI_ALIAS_TAPS: usize = 127;
/// Cutoff as a fraction of the output sample rate (0.9 of the output Nyquist).
const CUTOFF_OF_OUTPUT_RATE: f64 = 0.45;

/// Hamming-windowed sinc low-pass with unit DC gain.
///
/// `cutoff` is in cycles per input sample, in (0, 0.5).
pub fn design_lowpass(taps: usize, cutoff: f64) -> Vec<f64> {
    assert!(taps % 2 == 1, "linear-phase design needs an odd tap count");
    let mid = (taps / 2) as f64;
    let mut h: Vec<f64> = (0..taps)
        .map(|n| {
            let t = n as f64 - mid;
            let sinc = if t == 0.0 {
                2.0 * cutoff
            } else {
                (2.0 * PI * cutoff * t).sin() / (PI * t)
            };
            let window = 0.54 - 0.46 * (2.0 * PI * n as f64 / (taps - 1) as f64).cos();
            sinc * window
        })
        .collect();
    for n in 0..taps / 2 {
        h[taps - 1 - n] = h[n];
    }
    let dc: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= dc);
    h
}

/// Low-pass filters then keeps every `factor`-th sample.
///
/// The filter is applied zero-phase (centred taps, zero outside the clip), so
/// events keep their timing. Only the retained output samples are computed.
/// A trailing remainder shorter than `factor` is dropped.
pub fn resample_down(clip: &AudioClip, factor: usize) -> Result<AudioClip> {
    if factor == 0 {
        return Err(Error::invalid("decimation factor must be at least 1"));
    }
    if !clip.sample_rate().is_multiple_of(factor as u32) {
        return Err(Error::invalid(format!(
            "sample rate {} is not divisible by factor {factor}",
            clip.sample_rate()
        )));
    }
    if factor == 1 {
        return Ok(clip.clone());
    }
    let h = design_lowpass(ANTI_ALIAS_TAPS, CUTOFF_OF_OUTPUT_RATE / factor as f64);
    let half = (ANTI_ALIAS_TAPS / 2) as isize;
    let out_len = clip.len() / factor;
    // Taps are symmetric, so output m is the dot product of h with the input
    // window starting at m·factor − half.
    let samples = clip
        .samples()
        .iter()
        .map(|x| {
            let n = x.len() as isize;
            (0..out_len)
                .map(|m| {
                    let start = (m * factor) as isize - half;
                    let lo = start.max(0);
                    let hi = (start + ANTI_ALIAS_TAPS as isize).min(n);
                    let taps = &h[(lo - start) as usize..(hi - start) as usize];
                    dot(taps, &x[lo as usize..hi as usize]) as f32
                })
                .collect()
        })
        .collect();
    AudioClip::new(samples, clip.sample_rate() / factor as u32)
}

fn dot(h: &[f64], x: &[f32]) -> f64 {
    let mut acc = [0.0f64; 4];
    let (hc, xc) = (h.chunks_exact(4), x.chunks_exact(4));
    let (hr, xr) = (hc.remainder(), xc.remainder());
    for (a, b) in hc.zip(xc) {
        for l in 0..4 {
            acc[l] += a[l] * b[l] as f64;
        }
    }
    let tail: f64 = hr.iter().zip(xr).map(|(a, b)| a * *b as f64).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, rate: u32, len: usize) -> AudioClip {
        let s = (0..len)
            .map(|n| (2.0 * PI * freq * n as f64 / rate as f64).sin() as f32)
            .collect();
        AudioClip::new(vec![s], rate).unwrap()
    }

    /// RMS over the interior, away from the filter's edge transients.
    fn interior_rms(x: &[f32]) -> f64 {
        let inner = &x[200..x.len() - 200];
        (inner.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / inner.len() as f64).sqrt()
    }

    #[test]
    fn factor_one_is_identity() {
        let clip = sine(440.0, 44_100, 4000);
        assert_eq!(resample_down(&clip, 1).unwrap(), clip);
    }

    #[test]
    fn factor_zero_rejected() {
        assert!(resample_down(&sine(1.0, 100, 10), 0).is_err());
    }

    #[test]
    fn passband_tone_keeps_amplitude() {
        let out = resample_down(&sine(1000.0, 44_100, 44_100), 4).unwrap();
        assert_eq!(out.sample_rate(), 11_025);
        assert_eq!(out.len(), 11_025);
        let rms = interior_rms(out.channel(0));
        let expected = 1.0 / 2f64.sqrt();
        assert!((rms / expected - 1.0).abs() < 0.01, "rms {rms}");
        // Compare against the analytic 1 kHz sine at the new rate.
        let x = out.channel(0);
        let max_err = (200..x.len() - 200)
            .map(|m| (x[m] as f64 - (2.0 * PI * 1000.0 * m as f64 / 11_025.0).sin()).abs())
            .fold(0.0, f64::max);
        assert!(max_err < 0.01, "max deviation {max_err}");
    }

    #[test]
    fn stopband_tone_attenuated_40db() {
        let out = resample_down(&sine(6000.0, 44_100, 44_100), 4).unwrap();
        let ratio = interior_rms(out.channel(0)) / (1.0 / 2f64.sqrt());
        let db = 20.0 * ratio.log10();
        assert!(db < -40.0, "attenuation only {db} dB");
    }

    #[test]
    fn remainder_dropped() {
        let out = resample_down(&sine(100.0, 44_100, 4003), 4).unwrap();
        assert_eq!(out.len(), 1000);
    }

    #[test]
    fn filter_has_unit_dc_gain_and_symmetry() {
        let h = design_lowpass(ANTI_ALIAS_TAPS, 0.45 / 4.0);
        assert!((h.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for i in 0..h.len() {
            assert_eq!(h[i], h[h.len() - 1 - i]);
        }
    }
}
