//! Template-based repair of short corrupted runs in quasi-periodic PPG.
//!
//! For every NOISY run flanked by enough CLEAN signal on both sides:
//!
//! 1. The corrupted extent is located to the sample by comparing the
//!    signal's slope with the slope a local period earlier (later, from the
//!    right), against a threshold learned on the flank. Segment labels alone
//!    only resolve the extent to a whole segment.
//! 2. If the extent is at most `max_gap_s`, mean beat templates are built
//!    from the flanks (aligned on detected peaks), beats are tiled between
//!    the last left peak and the first right peak with linearly
//!    interpolated periods, and the result is spliced in with linear
//!    crossfades.
//! 3. The run is relabelled CLEAN. A run where no corruption is found is
//!    relabelled without modification.
//!
//! Samples outside NOISY runs are never modified.

use alloc::vec::Vec;
use core::ops::Range;

use crate::peaks::{peaks_in, PeakConfig};
use crate::quality::{Label, QualityMask};
use crate::signal::TimeSeries;
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct ReconstructConfig {
    pub max_gap_s: f64,
    /// Allowance on the located extent when comparing it with `max_gap_s`,
    /// covering the detector's edge uncertainty.
    pub extent_tolerance_s: f64,
    /// CLEAN signal required on each side of a run.
    pub min_flank_s: f64,
    pub crossfade_s: f64,
    /// Signal replaced outright on each side of the located extent.
    pub splice_margin_s: f64,
    /// Resolution of the mean beat template.
    pub template_points: usize,
    /// Edge detector threshold in robust standard deviations of the flank's
    /// period-lagged slope differences.
    pub edge_threshold_sigmas: f64,
    /// Floor of the edge threshold as a fraction of the flank's
    /// peak-to-peak slope.
    pub edge_threshold_floor: f64,
    /// Largest ratio between the two flanks' edge thresholds; beyond it a
    /// flank is taken to be contaminated and the run is left alone.
    pub max_flank_mismatch: f64,
}

impl Default for ReconstructConfig {
    fn default() -> Self {
        Self {
            max_gap_s: 15.0,
            extent_tolerance_s: 0.25,
            min_flank_s: 5.0,
            crossfade_s: 0.25,
            splice_margin_s: 0.5,
            template_points: 64,
            edge_threshold_sigmas: 4.0,
            edge_threshold_floor: 0.3,
            max_flank_mismatch: 2.5,
        }
    }
}

/// A repaired stretch, in samples.
#[derive(Debug, Clone, PartialEq)]
pub struct RepairedGap {
    /// Samples judged corrupted.
    pub corrupted: Range<usize>,
    /// Samples rewritten, including crossfades.
    pub replaced: Range<usize>,
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub series: TimeSeries,
    pub mask: QualityMask,
    pub repaired: Vec<RepairedGap>,
}

struct Flank {
    peaks: Vec<usize>,
    period: f64,
    template: Vec<f64>,
}

fn build_flank(
    x: &[f64],
    range: Range<usize>,
    fs: f64,
    peaks: &PeakConfig,
    points: usize,
) -> Option<Flank> {
    let p = peaks_in(x, range, fs, peaks);
    if p.len() < 2 {
        return None;
    }
    let period = (p[p.len() - 1] - p[0]) as f64 / (p.len() - 1) as f64;
    let mut template = alloc::vec![0.0; points];
    for w in p.windows(2) {
        let (a, b) = (w[0] as f64, w[1] as f64);
        for (m, slot) in template.iter_mut().enumerate() {
            *slot += interp(x, a + (b - a) * m as f64 / points as f64);
        }
    }
    let beats = (p.len() - 1) as f64;
    template.iter_mut().for_each(|v| *v /= beats);
    Some(Flank {
        peaks: p,
        period,
        template,
    })
}

/// Linear interpolation of `x` at fractional index `t`.
fn interp(x: &[f64], t: f64) -> f64 {
    let i = libm::floor(t) as usize;
    if i + 1 >= x.len() {
        return x[x.len() - 1];
    }
    let frac = t - i as f64;
    x[i] * (1.0 - frac) + x[i + 1] * frac
}

/// Template value at `phase` in `[0, 1]`, wrapping so phase 1 meets phase 0.
fn template_at(t: &[f64], phase: f64) -> f64 {
    let m = t.len();
    let pos = phase.clamp(0.0, 1.0) * m as f64;
    let i = (libm::floor(pos) as usize).min(m - 1);
    let frac = pos - i as f64;
    t[i] * (1.0 - frac) + t[(i + 1) % m] * frac
}

/// Threshold for period-lagged differences over `range` (which must start
/// at least `lag` samples into the data when `backward`).
fn edge_threshold(
    d: &[f64],
    range: Range<usize>,
    lag: usize,
    backward: bool,
    config: &ReconstructConfig,
) -> f64 {
    let mut diffs: Vec<f64> = range
        .clone()
        .filter_map(|j| {
            if backward {
                j.checked_sub(lag).map(|k| d[j] - d[k])
            } else {
                d.get(j + lag).map(|v| d[j] - v)
            }
        })
        .collect();
    let med = stats::median_in_place(&mut diffs);
    diffs.iter_mut().for_each(|v| *v = (*v - med).abs());
    let sigma = 1.4826 * stats::median_in_place(&mut diffs);
    let flank = &d[range];
    let p2p = flank.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        - flank.iter().copied().fold(f64::INFINITY, f64::min);
    (config.edge_threshold_sigmas * sigma).max(config.edge_threshold_floor * p2p)
}

/// Smallest `|d[i] - d[i -+ k]|` over `k` within one sample of `lag`, which
/// absorbs beat-to-beat timing jitter.
fn lagged_deviation(d: &[f64], i: usize, lag: usize, backward: bool) -> f64 {
    (lag.saturating_sub(1).max(1)..=lag + 1)
        .filter_map(|k| {
            if backward {
                i.checked_sub(k).map(|j| d[j])
            } else {
                d.get(i + k).copied()
            }
        })
        .map(|v| (d[i] - v).abs())
        .fold(f64::INFINITY, f64::min)
}

/// Onset of a sustained departure: the first window of `w` deviations whose
/// mean exceeds `tau / 2`, refined to the window's first deviation above
/// `tau`.
fn first_onset(devs: &[f64], w: usize, tau: f64) -> Option<usize> {
    let w = w.max(1);
    let i = (0..devs.len()).find(|&i| {
        let win = &devs[i..(i + w).min(devs.len())];
        win.iter().sum::<f64>() / win.len() as f64 > 0.5 * tau
    })?;
    let end = (i + w).min(devs.len());
    Some((i..end).find(|&j| devs[j] > tau).unwrap_or(i))
}

enum Located {
    Corrupted(Range<usize>),
    Nothing,
    FlankMismatch,
}

/// Sample extent `[start, end)` of the corruption inside `run`, working on
/// the first difference `d` of the signal, which suppresses the slow
/// filter transients that leak out of an artifact.
fn locate_corruption(
    d: &[f64],
    run: Range<usize>,
    left: &Flank,
    right: &Flank,
    flank: usize,
    config: &ReconstructConfig,
) -> Located {
    let lag_l = (libm::round(left.period) as usize).max(1);
    let lag_r = (libm::round(right.period) as usize).max(1);
    let tau_l = edge_threshold(d, run.start - flank + lag_l..run.start, lag_l, true, config);
    // d[run.end] still reaches into the run
    let tau_r = edge_threshold(
        d,
        run.end + 1..run.end + flank - lag_r,
        lag_r,
        false,
        config,
    );
    if tau_l.max(tau_r) > config.max_flank_mismatch * tau_l.min(tau_r) {
        return Located::FlankMismatch;
    }

    let fwd: Vec<f64> = run
        .clone()
        .map(|i| lagged_deviation(d, i, lag_l, true))
        .collect();
    let start = first_onset(&fwd, lag_l, tau_l).map(|k| run.start + k);
    let bwd: Vec<f64> = run
        .clone()
        .rev()
        .map(|i| lagged_deviation(d, i, lag_r, false))
        .collect();
    let end = first_onset(&bwd, lag_r, tau_r).map(|k| run.end - k);

    match (start, end) {
        (None, None) => Located::Nothing,
        (Some(s), Some(e)) if s < e => Located::Corrupted(s..e),
        (Some(s), None) => Located::Corrupted(s..run.end),
        (None, Some(e)) => Located::Corrupted(run.start..e),
        _ => Located::Corrupted(run),
    }
}

enum Outcome {
    Repaired(RepairedGap),
    /// Nothing in the run differs from the flanks' rhythm.
    NothingToRepair,
}

#[allow(clippy::needless_range_loop)]
fn repair(
    x: &mut [f64],
    run: Range<usize>,
    fs: f64,
    peaks: &PeakConfig,
    config: &ReconstructConfig,
) -> Option<Outcome> {
    let n = x.len();
    let flank = libm::round(config.min_flank_s * fs) as usize;
    let points = config.template_points.max(4);
    if run.start < flank || run.end + flank > n {
        return None;
    }
    let left = build_flank(x, run.start - flank..run.start, fs, peaks, points)?;
    let right = build_flank(x, run.end..run.end + flank, fs, peaks, points)?;

    let dx: Vec<f64> = core::iter::once(0.0)
        .chain(x.windows(2).map(|w| w[1] - w[0]))
        .collect();
    let corrupted = match locate_corruption(&dx, run.clone(), &left, &right, flank, config) {
        Located::Corrupted(r) => r,
        Located::Nothing => return Some(Outcome::NothingToRepair),
        Located::FlankMismatch => return None,
    };
    if corrupted.len() as f64 / fs > config.max_gap_s + config.extent_tolerance_s + 1e-9 {
        return None;
    }
    let margin = libm::round(config.splice_margin_s * fs) as usize;
    let g0 = corrupted.start.saturating_sub(margin).max(run.start);
    let g1 = (corrupted.end + margin).min(run.end);
    let cf = libm::round(config.crossfade_s * fs) as usize;
    let a = g0.saturating_sub(cf).max(run.start);
    let b = (g1 + cf).min(run.end);

    // anchors: last real peak before the splice, first one after it
    let lead = peaks_in(x, run.start - flank..a, fs, peaks);
    let trail = peaks_in(x, b..run.end + flank, fs, peaks);
    let l = *lead.last().or(left.peaks.last())?;
    let r = *trail.first().or(right.peaks.first())?;
    if r <= l {
        return None;
    }
    let (l, r) = (l as f64, r as f64);
    let mean_period = 0.5 * (left.period + right.period);
    let beats = (libm::round((r - l) / mean_period) as usize).max(1);
    let weights: Vec<f64> = (0..beats)
        .map(|k| left.period + (right.period - left.period) * (k as f64 + 0.5) / beats as f64)
        .collect();
    let scale = (r - l) / weights.iter().sum::<f64>();
    let mut bounds = Vec::with_capacity(beats + 1);
    let mut t = l;
    bounds.push(t);
    for w in &weights {
        t += w * scale;
        bounds.push(t);
    }

    let synth = |i: usize, k: &mut usize| -> f64 {
        let ti = i as f64;
        while *k + 1 < beats && ti >= bounds[*k + 1] {
            *k += 1;
        }
        let (t0, t1) = (bounds[*k], bounds[*k + 1]);
        let phase = (ti - t0) / (t1 - t0);
        let mix = ((ti - l) / (r - l)).clamp(0.0, 1.0);
        (1.0 - mix) * template_at(&left.template, phase) + mix * template_at(&right.template, phase)
    };

    // level offsets that make the synthesis meet the untouched neighbours
    let mut k = 0;
    let d_l = x[a - 1] - synth(a - 1, &mut k);
    let d_r = x[b] - synth(b, &mut 0);
    let span = (b - a + 1) as f64;
    for i in a..b {
        let u = (i - a + 1) as f64 / span;
        let s = synth(i, &mut k) + d_l * (1.0 - u) + d_r * u;
        let alpha = if i < g0 {
            (i - a + 1) as f64 / (g0 - a + 1) as f64
        } else if i >= g1 {
            (b - i) as f64 / (b - g1 + 1) as f64
        } else {
            1.0
        };
        x[i] = (1.0 - alpha) * x[i] + alpha * s;
    }
    Some(Outcome::Repaired(RepairedGap {
        corrupted,
        replaced: a..b,
    }))
}

/// Repairs reconstructable NOISY runs; flank eligibility is judged on the
/// input mask, so repaired runs never serve as flanks for each other.
pub fn reconstruct_with(
    series: &TimeSeries,
    mask: &QualityMask,
    config: &ReconstructConfig,
    peaks: &PeakConfig,
) -> Reconstruction {
    let fs = series.sample_rate_hz();
    let flank_samples = libm::round(config.min_flank_s * fs) as usize;
    let mut x = series.samples().to_vec();
    let mut out_mask = mask.clone();
    let mut repaired = Vec::new();

    for run in mask.noisy_runs() {
        let start = mask.segment_range(run.start).start;
        let end = mask.segment_range(run.end - 1).end;
        let clean_before = mask.clean_samples_in(start.saturating_sub(flank_samples)..start);
        let clean_after = mask.clean_samples_in(end..end + flank_samples);
        if clean_before < flank_samples || clean_after < flank_samples {
            continue;
        }
        let Some(outcome) = repair(&mut x, start..end, fs, peaks, config) else {
            continue;
        };
        for seg in run {
            out_mask.set(seg, Label::Clean);
        }
        if let Outcome::Repaired(gap) = outcome {
            repaired.push(gap);
        }
    }

    let series = if repaired.is_empty() {
        series.clone()
    } else {
        series
            .with_samples(x)
            .expect("template splice keeps samples finite")
    };
    Reconstruction {
        series,
        mask: out_mask,
        repaired,
    }
}

/// [`reconstruct_with`] with default settings and the given gap bound.
pub fn reconstruct(
    series: &TimeSeries,
    mask: &QualityMask,
    max_gap_s: f64,
) -> (TimeSeries, QualityMask) {
    let config = ReconstructConfig {
        max_gap_s,
        ..ReconstructConfig::default()
    };
    let r = reconstruct_with(series, mask, &config, &PeakConfig::default());
    (r.series, r.mask)
}
