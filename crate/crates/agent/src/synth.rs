//! Deterministic synthetic PPG/ECG recordings with known beat times.
//!
//! Beats come from a slowly drifting heart-rate trajectory with
//! beat-to-beat jitter. The PPG pulse follows each R-peak after a fixed
//! transit time; noise bursts corrupt chosen stretches of the PPG only.

use std::f64::consts::PI;

use pulse_core::{Channel, TimeSeries};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Smooth heart-rate trajectory clipped to `[lo_bpm, hi_bpm]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HrTrajectory {
    pub lo_bpm: f64,
    pub hi_bpm: f64,
    pub center_bpm: f64,
    /// (amplitude in BPM, period in s, phase in rad)
    pub components: Vec<(f64, f64, f64)>,
}

impl HrTrajectory {
    pub fn constant(bpm: f64) -> Self {
        Self {
            lo_bpm: bpm,
            hi_bpm: bpm,
            center_bpm: bpm,
            components: Vec::new(),
        }
    }

    /// Random drift spanning most of `[lo, hi]` over a recording.
    pub fn drifting(lo_bpm: f64, hi_bpm: f64, rng: &mut impl Rng) -> Self {
        let span = hi_bpm - lo_bpm;
        let center_bpm = lo_bpm + span * rng.gen_range(0.3..0.7);
        let components = vec![
            (
                span * rng.gen_range(0.25..0.4),
                rng.gen_range(400.0..1200.0),
                rng.gen_range(0.0..2.0 * PI),
            ),
            (
                span * rng.gen_range(0.02..0.06),
                rng.gen_range(120.0..300.0),
                rng.gen_range(0.0..2.0 * PI),
            ),
        ];
        Self {
            lo_bpm,
            hi_bpm,
            center_bpm,
            components,
        }
    }

    pub fn bpm_at(&self, t: f64) -> f64 {
        let v = self.center_bpm
            + self
                .components
                .iter()
                .map(|(a, period, phase)| a * (2.0 * PI * t / period + phase).sin())
                .sum::<f64>();
        v.clamp(self.lo_bpm, self.hi_bpm)
    }
}

/// R-peak times in `[0, duration_s)`; each interval is the trajectory's
/// interval scaled by a uniform factor in `[1 - jitter, 1 + jitter]`.
pub fn beat_times(
    duration_s: f64,
    trajectory: &HrTrajectory,
    jitter: f64,
    first_beat_s: f64,
    rng: &mut impl Rng,
) -> Vec<f64> {
    let mut beats = Vec::new();
    let mut t = first_beat_s;
    while t < duration_s {
        beats.push(t);
        let ibi = 60.0 / trajectory.bpm_at(t);
        let factor = if jitter > 0.0 {
            rng.gen_range(1.0 - jitter..=1.0 + jitter)
        } else {
            1.0
        };
        t += ibi * factor;
    }
    beats
}

/// Mean-IBI heart rate of the beats inside `[start, end)`, NaN with fewer
/// than two beats.
pub fn true_window_bpm(beats: &[f64], start: f64, end: f64) -> f64 {
    let inside: Vec<f64> = beats
        .iter()
        .copied()
        .filter(|b| *b >= start && *b < end)
        .collect();
    if inside.len() < 2 {
        return f64::NAN;
    }
    let mean_ibi = (inside[inside.len() - 1] - inside[0]) / (inside.len() - 1) as f64;
    60.0 / mean_ibi
}

#[derive(Debug, Clone, PartialEq)]
pub struct PpgModel {
    /// Delay from R-peak to pulse onset.
    pub transit_s: f64,
    pub amplitude: f64,
    pub dc: f64,
    /// Baseline wander amplitude (two slow sinusoids).
    pub wander: f64,
    /// Fractional respiratory amplitude modulation.
    pub resp_modulation: f64,
    pub sensor_noise_sd: f64,
}

impl Default for PpgModel {
    fn default() -> Self {
        Self {
            transit_s: 0.25,
            amplitude: 40.0,
            dc: 2_000.0,
            wander: 20.0,
            resp_modulation: 0.1,
            sensor_noise_sd: 0.5,
        }
    }
}

/// Pulse shape over one beat, `theta` in radians from onset.
///
/// `sin(theta) + 0.25 sin(2 theta)` has exactly one maximum per cycle, at
/// `cos(theta) = (sqrt(3) - 1) / 2`.
fn pulse_shape(theta: f64) -> f64 {
    theta.sin() + 0.25 * (2.0 * theta).sin()
}

/// Phase fraction of the systolic maximum within a beat.
pub fn systolic_phase() -> f64 {
    ((3f64.sqrt() - 1.0) / 2.0).acos() / (2.0 * PI)
}

/// PPG samples driven by `beats`; returns the samples and the systolic
/// peak times.
pub fn ppg_from_beats(
    beats: &[f64],
    duration_s: f64,
    fs: f64,
    model: &PpgModel,
    rng: &mut impl Rng,
) -> (Vec<f64>, Vec<f64>) {
    let n = (duration_s * fs).round() as usize;
    let onsets: Vec<f64> = beats.iter().map(|b| b + model.transit_s).collect();
    let noise = Normal::new(0.0, model.sensor_noise_sd.max(1e-12)).unwrap();
    let wander_phase: (f64, f64) = (rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.0..2.0 * PI));
    let resp_rate = rng.gen_range(0.2..0.3);
    let mut k = 0usize;
    let mut x = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / fs;
        while k + 1 < onsets.len() && t >= onsets[k + 1] {
            k += 1;
        }
        let pulse = if onsets.len() >= 2 {
            let (t0, t1) = if t < onsets[0] {
                (onsets[0] - (onsets[1] - onsets[0]), onsets[0])
            } else if k + 1 < onsets.len() {
                (onsets[k], onsets[k + 1])
            } else {
                let last = onsets[k] - onsets[k - 1];
                (onsets[k], onsets[k] + last)
            };
            let mut phase = (t - t0) / (t1 - t0);
            if !(0.0..1.0).contains(&phase) {
                phase = phase.rem_euclid(1.0);
            }
            pulse_shape(2.0 * PI * phase)
        } else {
            0.0
        };
        let am = 1.0 + model.resp_modulation * (2.0 * PI * resp_rate * t).sin();
        let wander = model.wander
            * (0.6 * (2.0 * PI * 0.05 * t + wander_phase.0).sin()
                + 0.4 * (2.0 * PI * 0.13 * t + wander_phase.1).sin());
        x.push(model.dc + wander + model.amplitude * am * pulse + noise.sample(rng));
    }
    let peaks = onsets
        .windows(2)
        .map(|w| w[0] + systolic_phase() * (w[1] - w[0]))
        .filter(|t| *t < duration_s)
        .collect();
    (x, peaks)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EcgModel {
    pub r_amplitude: f64,
    pub r_width_s: f64,
    pub noise_sd: f64,
    pub wander: f64,
}

impl Default for EcgModel {
    fn default() -> Self {
        Self {
            r_amplitude: 1.0,
            r_width_s: 0.01,
            noise_sd: 0.01,
            wander: 0.1,
        }
    }
}

/// Lead-II-like ECG: P, Q, R, S and T Gaussians per beat plus wander and
/// white noise.
pub fn ecg_from_beats(
    beats: &[f64],
    duration_s: f64,
    fs: f64,
    model: &EcgModel,
    rng: &mut impl Rng,
) -> Vec<f64> {
    let n = (duration_s * fs).round() as usize;
    let noise = Normal::new(0.0, model.noise_sd.max(1e-12)).unwrap();
    let wander_phase = rng.gen_range(0.0..2.0 * PI);
    let mut x: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / fs;
            model.wander * (2.0 * PI * 0.2 * t + wander_phase).sin() + noise.sample(rng)
        })
        .collect();
    let a = model.r_amplitude;
    for (j, &b) in beats.iter().enumerate() {
        let ibi = beats
            .get(j + 1)
            .map(|n| n - b)
            .or_else(|| j.checked_sub(1).map(|p| b - beats[p]))
            .unwrap_or(1.0);
        // (offset s, width s, amplitude)
        let waves = [
            (-0.16 * ibi.min(1.0), 0.025, 0.12 * a),
            (-0.03, 0.008, -0.08 * a),
            (0.0, model.r_width_s, a),
            (0.03, 0.008, -0.08 * a),
            (0.3 * ibi.min(1.0), 0.05, 0.25 * a),
        ];
        for (offset, width, amp) in waves {
            let center = b + offset;
            let lo = (((center - 5.0 * width) * fs).floor().max(0.0)) as usize;
            let hi = (((center + 5.0 * width) * fs).ceil().max(0.0) as usize).min(n);
            for (i, v) in x.iter_mut().enumerate().take(hi).skip(lo) {
                let d = (i as f64 / fs - center) / width;
                *v += amp * (-0.5 * d * d).exp();
            }
        }
    }
    x
}

/// One corrupted stretch of a PPG recording.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseBurst {
    pub start_s: f64,
    pub duration_s: f64,
}

impl NoiseBurst {
    pub fn end_s(&self) -> f64 {
        self.start_s + self.duration_s
    }
}

/// Adds Gaussian noise of standard deviation `sd` over each burst.
pub fn corrupt(samples: &mut [f64], fs: f64, bursts: &[NoiseBurst], sd: f64, rng: &mut impl Rng) {
    let noise = Normal::new(0.0, sd).unwrap();
    for b in bursts {
        let lo = (b.start_s * fs).round() as usize;
        let hi = ((b.end_s() * fs).round() as usize).min(samples.len());
        for v in &mut samples[lo.min(hi)..hi] {
            *v += noise.sample(rng);
        }
    }
}

/// Non-overlapping bursts covering `fraction` of the recording, alternating
/// short (at most `short_max_s`) and long (longer than `short_max_s`) ones,
/// separated by at least `min_spacing_s` of clean signal.
pub fn plan_bursts(
    duration_s: f64,
    fraction: f64,
    short_max_s: f64,
    min_spacing_s: f64,
    rng: &mut impl Rng,
) -> Vec<NoiseBurst> {
    let budget = duration_s * fraction;
    let mut lengths = Vec::new();
    let mut total = 0.0;
    let mut short = true;
    while total < budget - 1e-9 {
        let want = if short {
            rng.gen_range(4.0..=short_max_s)
        } else {
            rng.gen_range(short_max_s + 3.0..=2.5 * short_max_s)
        };
        let len = want.min(budget - total);
        lengths.push(len);
        total += len;
        short = !short;
    }
    // spread the free time over the gaps, random proportions
    let free = duration_s - total - min_spacing_s * (lengths.len() + 1) as f64;
    assert!(free > 0.0, "bursts do not fit");
    let weights: Vec<f64> = (0..=lengths.len())
        .map(|_| rng.gen_range(0.2..1.0))
        .collect();
    let wsum: f64 = weights.iter().sum();
    let mut t = 0.0;
    let mut out = Vec::with_capacity(lengths.len());
    for (len, w) in lengths.iter().zip(&weights) {
        t += min_spacing_s + free * w / wsum;
        out.push(NoiseBurst {
            start_s: t,
            duration_s: *len,
        });
        t += len;
    }
    out
}

/// Parameters of a paired PPG/ECG corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSpec {
    pub recordings: usize,
    pub duration_s: f64,
    pub ppg_rate_hz: f64,
    pub ecg_rate_hz: f64,
    pub hr_lo_bpm: f64,
    pub hr_hi_bpm: f64,
    pub ibi_jitter: f64,
    pub corrupted_fraction: f64,
    pub burst_sd: f64,
    pub start_epoch_s: f64,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            recordings: 50,
            duration_s: 900.0,
            ppg_rate_hz: 20.0,
            ecg_rate_hz: 512.0,
            hr_lo_bpm: 55.0,
            hr_hi_bpm: 110.0,
            ibi_jitter: 0.02,
            corrupted_fraction: 0.2,
            burst_sd: 120.0,
            // 2019-07-25T06:00:00Z
            start_epoch_s: 1_564_034_400.0,
            seed: 7,
        }
    }
}

/// One generated PPG/ECG pair with its ground truth.
#[derive(Debug, Clone)]
pub struct PairedRecording {
    pub user_id: String,
    pub ppg: TimeSeries,
    pub ecg: TimeSeries,
    /// R-peak times relative to the recording start.
    pub beats: Vec<f64>,
    pub bursts: Vec<NoiseBurst>,
}

/// Generates one recording with its own RNG stream.
pub fn paired_recording(spec: &CorpusSpec, index: usize) -> PairedRecording {
    let mut rng =
        ChaCha8Rng::seed_from_u64(spec.seed.wrapping_mul(1_000_003).wrapping_add(index as u64));
    let trajectory = HrTrajectory::drifting(spec.hr_lo_bpm, spec.hr_hi_bpm, &mut rng);
    let first = rng.gen_range(0.0..0.5);
    let beats = beat_times(
        spec.duration_s,
        &trajectory,
        spec.ibi_jitter,
        first,
        &mut rng,
    );
    let (mut ppg, _) = ppg_from_beats(
        &beats,
        spec.duration_s,
        spec.ppg_rate_hz,
        &PpgModel::default(),
        &mut rng,
    );
    let bursts = if spec.corrupted_fraction > 0.0 {
        plan_bursts(
            spec.duration_s,
            spec.corrupted_fraction,
            15.0,
            8.0,
            &mut rng,
        )
    } else {
        Vec::new()
    };
    corrupt(&mut ppg, spec.ppg_rate_hz, &bursts, spec.burst_sd, &mut rng);
    let ecg = ecg_from_beats(
        &beats,
        spec.duration_s,
        spec.ecg_rate_hz,
        &EcgModel::default(),
        &mut rng,
    );
    // users p01..p05, recordings spread over the day in half-hour slots
    let user = index % 5;
    let slot = index / 5;
    let start = spec.start_epoch_s + slot as f64 * 1_800.0;
    PairedRecording {
        user_id: format!("p{:02}", user + 1),
        ppg: TimeSeries::new(ppg, spec.ppg_rate_hz, start, Channel::Ppg)
            .expect("finite synthetic PPG"),
        ecg: TimeSeries::new(ecg, spec.ecg_rate_hz, start, Channel::EcgLeadII)
            .expect("finite synthetic ECG"),
        beats,
        bursts,
    }
}

pub fn generate_corpus(spec: &CorpusSpec) -> Vec<PairedRecording> {
    (0..spec.recordings)
        .map(|i| paired_recording(spec, i))
        .collect()
}

/// Writes every recording of `spec` into `store`, PPG then ECG per pair.
pub fn seed_store(
    store: &crate::datastore::Store,
    spec: &CorpusSpec,
) -> Result<Vec<crate::datastore::RecordingMeta>, crate::datastore::StoreError> {
    let mut written = Vec::with_capacity(2 * spec.recordings);
    for i in 0..spec.recordings {
        let r = paired_recording(spec, i);
        for series in [&r.ppg, &r.ecg] {
            let request = crate::datastore::IngestRequest {
                user_id: r.user_id.clone(),
                modality: series.channel(),
                start_epoch_s: series.start_epoch_s(),
                sample_rate_hz: series.sample_rate_hz(),
            };
            written.push(store.insert(&request, series.samples())?);
        }
    }
    Ok(written)
}
