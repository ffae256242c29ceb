//! Dynamic time warping between amplitude envelopes and the repeat-normalized
//! similarity score built on top of it.

use serde::{Deserialize, Serialize};

use crate::dsp::Envelope;
use crate::error::{Error, Result};

const SIGMA_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DtwResult {
    /// Accumulated cost along the optimal path, not divided by its length.
    pub distance: f64,
    pub path_len: usize,
}

/// Euclidean distance between frame `i` of `a` and frame `j` of `b` across channels.
fn frame_cost(a: &Envelope, i: usize, b: &Envelope, j: usize) -> f64 {
    (0..a.channels)
        .map(|c| {
            let d = a.get(c, i) - b.get(c, j);
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Full-matrix DTW with steps (1,0), (0,1), (1,1) and no window constraint.
pub fn dtw_distance(a: &Envelope, b: &Envelope) -> Result<DtwResult> {
    if a.channels != b.channels {
        return Err(Error::shape(
            "dtw_distance",
            format!("{} vs {} channels", a.channels, b.channels),
        ));
    }
    let (n, m) = (a.n_frames, b.n_frames);
    if n == 0 || m == 0 {
        return Err(Error::invalid("DTW needs non-empty envelopes"));
    }
    // cost[i][j] accumulates D(i, j); steps[i][j] the length of the chosen path.
    let mut acc = vec![0.0f64; n * m];
    let mut steps = vec![0usize; n * m];
    for i in 0..n {
        for j in 0..m {
            let c = frame_cost(a, i, b, j);
            let idx = i * m + j;
            if i == 0 && j == 0 {
                acc[idx] = c;
                steps[idx] = 1;
                continue;
            }
            // Diagonal first so ties prefer the shorter path.
            let mut best = (f64::INFINITY, 0usize);
            if i > 0 && j > 0 {
                best = (acc[idx - m - 1], steps[idx - m - 1]);
            }
            if i > 0 && acc[idx - m] < best.0 {
                best = (acc[idx - m], steps[idx - m]);
            }
            if j > 0 && acc[idx - 1] < best.0 {
                best = (acc[idx - 1], steps[idx - 1]);
            }
            acc[idx] = c + best.0;
            steps[idx] = best.1 + 1;
        }
    }
    Ok(DtwResult {
        distance: acc[n * m - 1],
        path_len: steps[n * m - 1],
    })
}

/// Mean and spread of raw DTW distances between repeats of the same action.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mu: f64,
    pub sigma: f64,
    pub n_pairs: usize,
}

/// Population mean and standard deviation, sigma floored at 1e-9.
pub fn fit_normalization(repeat_distances: &[f64]) -> Result<NormalizationStats> {
    if repeat_distances.len() < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 repeat distances, got {}",
            repeat_distances.len()
        )));
    }
    if let Some(d) = repeat_distances.iter().find(|d| !d.is_finite() || **d < 0.0) {
        return Err(Error::invalid(format!("invalid repeat distance {d}")));
    }
    let n = repeat_distances.len() as f64;
    let mu = repeat_distances.iter().sum::<f64>() / n;
    let var = repeat_distances.iter().map(|d| (d - mu).powi(2)).sum::<f64>() / n;
    Ok(NormalizationStats {
        mu,
        sigma: var.sqrt().max(SIGMA_FLOOR),
        n_pairs: repeat_distances.len(),
    })
}

/// `(x - mu) / sigma`; negative values beat same-action repeat noise.
pub fn normalized_score(x: f64, stats: &NormalizationStats) -> f64 {
    (x - stats.mu) / stats.sigma
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(v: &[f64]) -> Envelope {
        Envelope::new(1, v.to_vec(), 1).unwrap()
    }

    #[test]
    fn identical_is_zero() {
        let a = env(&[0.1, 0.5, 0.3, 0.0]);
        let r = dtw_distance(&a, &a).unwrap();
        assert_eq!(r.distance, 0.0);
        assert_eq!(r.path_len, 4);
    }

    #[test]
    fn warping_absorbs_repeat() {
        let r = dtw_distance(&env(&[1., 2., 3.]), &env(&[1., 2., 2., 3.])).unwrap();
        assert_eq!(r.distance, 0.0);
        assert_eq!(r.path_len, 4);
    }

    #[test]
    fn single_cell() {
        assert_eq!(dtw_distance(&env(&[0.]), &env(&[1.])).unwrap().distance, 1.0);
    }

    #[test]
    fn multichannel_uses_euclidean_frame_cost() {
        let a = Envelope::new(2, vec![0.0, 0.0], 1).unwrap();
        let b = Envelope::new(2, vec![3.0, 4.0], 1).unwrap();
        assert!((dtw_distance(&a, &b).unwrap().distance - 5.0).abs() < 1e-12);
    }

    #[test]
    fn channel_mismatch_and_empty_rejected() {
        let a = Envelope::new(2, vec![0.0, 0.0], 1).unwrap();
        assert!(dtw_distance(&a, &env(&[0.0])).is_err());
        let empty = Envelope {
            channels: 1,
            n_frames: 0,
            frame_len: 1,
            values: vec![],
        };
        assert!(dtw_distance(&empty, &env(&[0.0])).is_err());
    }

    #[test]
    fn normalization_stats() {
        let s = fit_normalization(&[2.0, 4.0]).unwrap();
        assert_eq!((s.mu, s.sigma, s.n_pairs), (3.0, 1.0, 2));
        let flat = fit_normalization(&[5.0, 5.0, 5.0]).unwrap();
        assert_eq!(flat.sigma, SIGMA_FLOOR);
        assert!(fit_normalization(&[0.0]).is_err());
    }

    #[test]
    fn score_arithmetic() {
        let s = NormalizationStats {
            mu: 3.0,
            sigma: 1.0,
            n_pairs: 2,
        };
        assert_eq!(normalized_score(3.0, &s), 0.0);
        assert_eq!(normalized_score(4.0, &s), 1.0);
        assert!((normalized_score(2.35, &s) + 0.65).abs() < 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn symmetric_and_scale_covariant(
            a in proptest::collection::vec(0.0f64..1.0, 1..12),
            b in proptest::collection::vec(0.0f64..1.0, 1..12),
            k in 0.0f64..5.0,
        ) {
            let (ea, eb) = (env(&a), env(&b));
            let ab = dtw_distance(&ea, &eb).unwrap().distance;
            let ba = dtw_distance(&eb, &ea).unwrap().distance;
            proptest::prop_assert!(ab >= 0.0);
            proptest::prop_assert!((ab - ba).abs() < 1e-12);
            let scaled = dtw_distance(&ea.scaled(k), &eb.scaled(k)).unwrap().distance;
            proptest::prop_assert!((scaled - k * ab).abs() < 1e-9 * (1.0 + k * ab));
        }
    }
}
