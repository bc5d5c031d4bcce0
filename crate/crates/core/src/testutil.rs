//! Signal generators shared by unit tests.

use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::signal::{Channel, TimeSeries};

/// Beat onsets at `bpm`, each interval scaled by a uniform factor in
/// `[1 - jitter, 1 + jitter]`.
pub fn beats(bpm: f64, seconds: f64, jitter: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut t = 0.1;
    while t < seconds {
        out.push(t);
        let f = if jitter > 0.0 {
            rng.gen_range(1.0 - jitter..=1.0 + jitter)
        } else {
            1.0
        };
        t += 60.0 / bpm * f;
    }
    out
}

/// PPG-like waveform, one `sin + 0.25 sin(2x)` cycle per beat interval,
/// riding on a DC offset.
pub fn ppg(beats: &[f64], seconds: f64, fs: f64) -> TimeSeries {
    let n = libm::round(seconds * fs) as usize;
    let mut k = 0;
    let x = (0..n)
        .map(|i| {
            let t = i as f64 / fs;
            while k + 1 < beats.len() && t >= beats[k + 1] {
                k += 1;
            }
            let period = if k + 1 < beats.len() {
                beats[k + 1] - beats[k]
            } else {
                beats[k] - beats[k - 1]
            };
            let theta = 2.0 * PI * (t - beats[k]) / period;
            100.0 + libm::sin(theta) + 0.25 * libm::sin(2.0 * theta)
        })
        .collect();
    TimeSeries::new(x, fs, 0.0, Channel::Ppg).unwrap()
}

/// Time of each beat's systolic maximum, given onsets.
pub fn systolic_times(beats: &[f64]) -> Vec<f64> {
    let phase = libm::acos((libm::sqrt(3.0) - 1.0) / 2.0) / (2.0 * PI);
    beats
        .windows(2)
        .map(|w| w[0] + phase * (w[1] - w[0]))
        .collect()
}

pub fn white_noise(n: usize, sd: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sd).unwrap();
    (0..n).map(|_| normal.sample(&mut rng)).collect()
}

/// ECG-like trace: a narrow R spike at each beat with small Q and S dips
/// and a broad T wave, plus baseline wander and white noise.
pub fn ecg(beats: &[f64], seconds: f64, fs: f64, noise_sd: f64, seed: u64) -> TimeSeries {
    let n = libm::round(seconds * fs) as usize;
    let mut x = white_noise(n, noise_sd, seed ^ 0x5eed);
    let waves = [
        (-0.03, -0.15, 0.008),
        (0.0, 1.0, 0.01),
        (0.03, -0.2, 0.008),
        (0.25, 0.3, 0.04),
    ];
    for (i, v) in x.iter_mut().enumerate() {
        let t = i as f64 / fs;
        *v += 0.1 * libm::sin(2.0 * PI * 0.3 * t);
        let k = beats.partition_point(|b| *b < t - 0.5);
        for b in &beats[k..] {
            if *b > t + 0.1 {
                break;
            }
            for (offset, amp, width) in waves {
                let d = (t - b - offset) / width;
                *v += amp * libm::exp(-0.5 * d * d);
            }
        }
    }
    TimeSeries::new(x, fs, 0.0, Channel::EcgLeadII).unwrap()
}
