//! Task sound models.
//!
//! Every task is a handful of timed events rendered at 44.1 kHz:
//!
//! * rattle `(v, a, c)`: `2c` direction reversals at `j·T`, `T = 0.05·v/a + 0.15/v`,
//!   each a white-noise click with energy `0.04·v²`, decay 120 s⁻¹.
//! * tambourine: rattle timing; each reversal rings four decaying sinusoids at
//!   fixed frequencies in 2.0–4.5 kHz with random phases, energy `0.02·v²`.
//! * swatter `(v_b, v_s, a)`: one impact at `0.2 + 0.4·v_b/a + 0.4/v_b`,
//!   energy `0.03·v_s²·(0.8 + 0.2x)` split `(1-x, x)` across the two board
//!   microphones, `x = (v_b - lo)/(hi - lo)` the strike position.
//! * strike_h `(v_s, v_e, v_w, a, d_s, d_e, d_w)`: impact at `0.3 + 1/a`, energy
//!   `0.03·(0.5v_s + 0.3v_e + 0.2v_w)²` mixed 0.6/0.4, preceded by drag noise of
//!   `0.05·|d_s - d_e|` s at amplitude 0.02 mixed 0.4/0.6.
//! * strike_v `(v_s, v_e, v_w, a)`: as strike_h without drag, impact at `0.5 + 1/a`.
//!
//! Each event draws its noise from its own ChaCha stream of the record seed and
//! background noise uses stream 0, so changing one parameter never reshuffles the
//! random content of unrelated events. Output is soft-clipped into (-0.99, 0.99).

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{ActionParams, TaskId};
use crate::dsp::{AudioClip, Envelope, CLIP_SECONDS, RAW_SAMPLE_RATE};
use crate::error::Result;

pub const DEFAULT_NOISE_LEVEL: f64 = 0.01;

const CLICK_DECAY: f64 = 120.0;
const STRIKE_DECAY: f64 = 60.0;
const RATTLE_GAIN: f64 = 0.04;
const TAMBOURINE_GAIN: f64 = 0.02;
const STRIKE_GAIN: f64 = 0.03;
const DRAG_AMPLITUDE: f64 = 0.02;
/// Bursts are truncated once the decay falls below this factor.
const TAIL: f64 = 1e-4;
const SOFT_KNEE: f64 = 0.9;
const SOFT_LIMIT: f64 = 0.99;
const TAMBOURINE_JINGLES: usize = 4;
const TAMBOURINE_FREQ_SEED: u64 = 0x7A3B_0001;

struct Canvas {
    rate: f64,
    channels: Vec<Vec<f64>>,
    seed: u64,
    next_stream: u64,
}

impl Canvas {
    fn new(channels: usize, seed: u64) -> Self {
        let len = CLIP_SECONDS * RAW_SAMPLE_RATE as usize;
        Self {
            rate: RAW_SAMPLE_RATE as f64,
            channels: vec![vec![0.0; len]; channels],
            seed,
            next_stream: 1,
        }
    }

    fn event_rng(&mut self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.next_stream);
        self.next_stream += 1;
        rng
    }

    /// Adds `source` starting at `t0` seconds to every channel with the given
    /// energy shares (amplitude gain √share).
    fn mix(&mut self, t0: f64, source: &[f64], shares: &[f64]) {
        let start = (t0 * self.rate).round().max(0.0) as usize;
        for (ch, &share) in self.channels.iter_mut().zip(shares) {
            let g = share.sqrt();
            if g == 0.0 || start >= ch.len() {
                continue;
            }
            for (dst, s) in ch[start..].iter_mut().zip(source) {
                *dst += g * s;
            }
        }
    }

    fn decay_len(&self, decay: f64) -> usize {
        ((1.0 / TAIL).ln() / decay * self.rate).ceil() as usize
    }

    /// √E · e^{-λt} · w(t), w white Gaussian.
    fn noise_burst(&mut self, t0: f64, energy: f64, decay: f64, shares: &[f64]) {
        let len = self.decay_len(decay);
        let mut rng = self.event_rng();
        let amp = energy.sqrt();
        let src: Vec<f64> = (0..len)
            .map(|n| {
                let w: f64 = rng.sample(StandardNormal);
                amp * (-decay * n as f64 / self.rate).exp() * w
            })
            .collect();
        self.mix(t0, &src, shares);
    }

    /// Sum of decaying sinusoids with random phases, RMS √E at onset.
    fn ring_burst(&mut self, t0: f64, energy: f64, decay: f64, freqs: &[f64], shares: &[f64]) {
        let len = self.decay_len(decay);
        let mut rng = self.event_rng();
        let phases: Vec<f64> = freqs.iter().map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
        let amp = (2.0 * energy / freqs.len() as f64).sqrt();
        let src: Vec<f64> = (0..len)
            .map(|n| {
                let t = n as f64 / self.rate;
                let tone: f64 = freqs
                    .iter()
                    .zip(&phases)
                    .map(|(f, p)| (2.0 * PI * f * t + p).sin())
                    .sum();
                amp * (-decay * t).exp() * tone
            })
            .collect();
        self.mix(t0, &src, shares);
    }

    /// Flat white noise of the given standard deviation over `[t0, t0 + dur)`.
    fn flat_noise(&mut self, t0: f64, dur: f64, std: f64, shares: &[f64]) {
        let len = (dur * self.rate).round() as usize;
        let mut rng = self.event_rng();
        let src: Vec<f64> = (0..len)
            .map(|_| std * rng.sample::<f64, _>(StandardNormal))
            .collect();
        self.mix(t0, &src, shares);
    }

    fn finish(mut self, noise_level: f64) -> Result<AudioClip> {
        if noise_level > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            rng.set_stream(0);
            for ch in &mut self.channels {
                for s in ch.iter_mut() {
                    *s += noise_level * rng.sample::<f64, _>(StandardNormal);
                }
            }
        }
        let samples = self
            .channels
            .into_iter()
            .map(|ch| ch.into_iter().map(|s| soft_clip(s) as f32).collect())
            .collect();
        AudioClip::new(samples, RAW_SAMPLE_RATE)
    }
}

/// Identity below the knee, tanh compression into (-0.99, 0.99) above it.
fn soft_clip(x: f64) -> f64 {
    let a = x.abs();
    if a <= SOFT_KNEE {
        x
    } else {
        let room = SOFT_LIMIT - SOFT_KNEE;
        x.signum() * (SOFT_KNEE + room * ((a - SOFT_KNEE) / room).tanh())
    }
}

fn tambourine_freqs() -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(TAMBOURINE_FREQ_SEED);
    let mut f: Vec<f64> = (0..TAMBOURINE_JINGLES)
        .map(|_| rng.gen_range(2000.0..4500.0))
        .collect();
    f.sort_by(|a, b| a.partial_cmp(b).unwrap());
    f
}

/// Half-period of a shaking oscillation.
fn shake_half_period(v: f64, a: f64) -> f64 {
    0.05 * v / a + 0.15 / v
}

/// Renders one recording of `action` for `task`.
///
/// Deterministic in `(task, action, seed, noise_level)`; emits 4 s at 44.1 kHz.
pub fn simulate(task: TaskId, action: &ActionParams, seed: u64, noise_level: f64) -> Result<AudioClip> {
    let spec = task.action_spec();
    spec.check(action)?;
    if !(noise_level >= 0.0) {
        return Err(crate::Error::invalid(format!("noise level {noise_level} must be >= 0")));
    }
    let x = &action.values;
    let mut canvas = Canvas::new(task.channels(), seed);
    match task {
        TaskId::Rattle | TaskId::Tambourine => {
            let (v, a, c) = (x[0], x[1], x[2] as usize);
            let period = shake_half_period(v, a);
            let freqs = tambourine_freqs();
            for j in 1..=2 * c {
                let t = j as f64 * period;
                if task == TaskId::Rattle {
                    canvas.noise_burst(t, RATTLE_GAIN * v * v, CLICK_DECAY, &[1.0]);
                } else {
                    canvas.ring_burst(t, TAMBOURINE_GAIN * v * v, CLICK_DECAY, &freqs, &[1.0]);
                }
            }
        }
        TaskId::Swatter => {
            let (vb, vs, a) = (x[0], x[1], x[2]);
            let (lo, hi) = spec.bounds[0];
            let pos = (vb - lo) / (hi - lo);
            let t = 0.2 + 0.4 * vb / a + 0.4 / vb;
            let energy = STRIKE_GAIN * vs * vs * (0.8 + 0.2 * pos);
            canvas.noise_burst(t, energy, STRIKE_DECAY, &[1.0 - pos, pos]);
        }
        TaskId::StrikeH => {
            let t = 0.3 + 1.0 / x[3];
            let energy = strike_energy(x);
            canvas.noise_burst(t, energy, STRIKE_DECAY, &[0.6, 0.4]);
            let drag = 0.05 * (x[4] - x[5]).abs();
            if drag > 0.0 {
                canvas.flat_noise(t - drag, drag, DRAG_AMPLITUDE, &[0.4, 0.6]);
            }
        }
        TaskId::StrikeV => {
            let t = 0.5 + 1.0 / x[3];
            canvas.noise_burst(t, strike_energy(x), STRIKE_DECAY, &[0.6, 0.4]);
        }
    }
    canvas.finish(noise_level)
}

fn strike_energy(x: &[f64]) -> f64 {
    let swing = 0.5 * x[0] + 0.3 * x[1] + 0.2 * x[2];
    STRIKE_GAIN * swing * swing
}

/// Counts maximal runs of envelope frames above `threshold` on any channel.
pub fn count_bursts(env: &Envelope, threshold: f64) -> usize {
    let mut count = 0;
    let mut inside = false;
    for t in 0..env.n_frames {
        let above = (0..env.channels).any(|c| env.get(c, t) > threshold);
        if above && !inside {
            count += 1;
        }
        inside = above;
    }
    count
}
