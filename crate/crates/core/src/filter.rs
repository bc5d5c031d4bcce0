//! Butterworth IIR design (bilinear transform with pre-warping) realised as
//! second-order sections, plus zero-phase forward-backward filtering.

use alloc::vec::Vec;
use core::f64::consts::PI;
use core::ops::{Add, Div, Mul, Neg, Sub};

use crate::error::{Error, Result};
use crate::signal::{Channel, TimeSeries};

/// Default PPG high-pass cutoff.
pub const PPG_HIGHPASS_HZ: f64 = 0.5;
/// Order of the PPG high-pass.
pub const PPG_HIGHPASS_ORDER: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Complex {
    re: f64,
    im: f64,
}

impl Complex {
    const fn new(re: f64, im: f64) -> Self {
        Self { re, im }
    }

    fn real(re: f64) -> Self {
        Self::new(re, 0.0)
    }

    fn expi(theta: f64) -> Self {
        Self::new(libm::cos(theta), libm::sin(theta))
    }

    fn norm_sqr(self) -> f64 {
        self.re * self.re + self.im * self.im
    }

    fn abs(self) -> f64 {
        libm::hypot(self.re, self.im)
    }

    fn sqrt(self) -> Self {
        let r = self.abs();
        let re = libm::sqrt(0.5 * (r + self.re));
        let im = libm::sqrt(0.5 * (r - self.re));
        Self::new(re, if self.im < 0.0 { -im } else { im })
    }
}

impl Add for Complex {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.re + o.re, self.im + o.im)
    }
}

impl Sub for Complex {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.re - o.re, self.im - o.im)
    }
}

impl Mul for Complex {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Self::new(
            self.re * o.re - self.im * o.im,
            self.re * o.im + self.im * o.re,
        )
    }
}

impl Div for Complex {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let d = o.norm_sqr();
        Self::new(
            (self.re * o.re + self.im * o.im) / d,
            (self.im * o.re - self.re * o.im) / d,
        )
    }
}

impl Neg for Complex {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.re, -self.im)
    }
}

impl Mul<f64> for Complex {
    type Output = Self;
    fn mul(self, k: f64) -> Self {
        Self::new(self.re * k, self.im * k)
    }
}

/// One second-order section, `a[0]` normalised to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    fn response(&self, z_inv: Complex) -> Complex {
        let z2 = z_inv * z_inv;
        let num = Complex::real(self.b[0]) + z_inv * self.b[1] + z2 * self.b[2];
        let den = Complex::real(self.a[0]) + z_inv * self.a[1] + z2 * self.a[2];
        num / den
    }

    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (self.a[0] + self.a[1] + self.a[2])
    }

    /// Transposed direct-form II state that yields a steady output for a
    /// constant unit input.
    fn step_state(&self) -> [f64; 2] {
        let g = self.dc_gain();
        let z2 = self.b[2] - self.a[2] * g;
        let z1 = self.b[1] - self.a[1] * g + z2;
        [z1, z2]
    }

    fn run(&self, x: &mut [f64], mut state: [f64; 2]) {
        let [b0, b1, b2] = self.b;
        let [_, a1, a2] = self.a;
        for v in x.iter_mut() {
            let input = *v;
            let y = b0 * input + state[0];
            state[0] = b1 * input - a1 * y + state[1];
            state[1] = b2 * input - a2 * y;
            *v = y;
        }
    }
}

/// Cascade of second-order sections.
#[derive(Debug, Clone, PartialEq)]
pub struct Sos {
    sections: Vec<Biquad>,
    order: usize,
    edge_pad: usize,
}

fn prewarp(f_hz: f64, fs: f64) -> f64 {
    2.0 * fs * libm::tan(PI * f_hz / fs)
}

fn bilinear(s: Complex, fs: f64) -> Complex {
    let k = Complex::real(2.0 * fs);
    (k + s) / (k - s)
}

fn prototype_poles(order: usize) -> Vec<Complex> {
    (0..order)
        .map(|k| {
            let theta = PI * (2 * k + order + 1) as f64 / (2 * order) as f64;
            Complex::expi(theta)
        })
        .collect()
}

/// Three periods of the lowest corner frequency, in samples.
fn settle_samples(corner_hz: f64, fs: f64) -> usize {
    libm::ceil(3.0 * fs / corner_hz) as usize
}

fn check_cutoff(f_hz: f64, fs: f64) -> Result<()> {
    let nyquist_hz = fs / 2.0;
    if !(f_hz.is_finite() && f_hz > 0.0 && f_hz < nyquist_hz) {
        return Err(Error::InvalidCutoff {
            cutoff_hz: f_hz,
            nyquist_hz,
        });
    }
    Ok(())
}

/// Groups digital poles into conjugate pairs (or pairs of reals) and builds
/// sections with the given zero pair per section.
fn assemble(poles: Vec<Complex>, zeros_per_section: &[[f64; 2]], order: usize) -> Sos {
    const EPS: f64 = 1e-12;
    let mut complex: Vec<Complex> = poles.iter().copied().filter(|p| p.im > EPS).collect();
    let mut real: Vec<f64> = poles
        .iter()
        .filter(|p| p.im.abs() <= EPS)
        .map(|p| p.re)
        .collect();
    // poles nearest the unit circle last, as in the usual SOS ordering
    complex.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
    real.sort_by(|a, b| a.abs().total_cmp(&b.abs()));

    // (denominator, is first order)
    let mut dens: Vec<([f64; 3], bool)> = Vec::new();
    for r in real.chunks(2) {
        dens.push(match *r {
            [p] => ([1.0, -p, 0.0], true),
            [p, q] => ([1.0, -(p + q), p * q], false),
            _ => unreachable!(),
        });
    }
    for p in complex {
        dens.push(([1.0, -2.0 * p.re, p.norm_sqr()], false));
    }
    let sections = dens
        .into_iter()
        .zip(zeros_per_section.iter().cycle())
        .map(|((a, first_order), z)| {
            let b = if first_order {
                [1.0, -z[0], 0.0]
            } else {
                [1.0, -(z[0] + z[1]), z[0] * z[1]]
            };
            Biquad { b, a }
        })
        .collect();
    Sos {
        sections,
        order,
        edge_pad: 3 * order,
    }
}

impl Sos {
    /// Butterworth high-pass of the given order.
    pub fn butter_highpass(order: usize, cutoff_hz: f64, fs: f64) -> Result<Self> {
        check_cutoff(cutoff_hz, fs)?;
        if order == 0 {
            return Err(Error::InvalidCutoff {
                cutoff_hz,
                nyquist_hz: fs / 2.0,
            });
        }
        let wc = prewarp(cutoff_hz, fs);
        let poles = prototype_poles(order)
            .into_iter()
            .map(|p| bilinear(Complex::real(wc) / p, fs))
            .collect();
        let mut sos = assemble(poles, &[[1.0, 1.0]], order);
        sos.edge_pad = sos.edge_pad.max(settle_samples(cutoff_hz, fs));
        // unit gain at Nyquist
        sos.normalise(Complex::real(-1.0));
        Ok(sos)
    }

    /// Butterworth band-pass; `order` is the prototype order, so the
    /// resulting filter has `2 * order` poles.
    pub fn butter_bandpass(order: usize, low_hz: f64, high_hz: f64, fs: f64) -> Result<Self> {
        check_cutoff(low_hz, fs)?;
        check_cutoff(high_hz, fs)?;
        if order == 0 || low_hz >= high_hz {
            return Err(Error::InvalidCutoff {
                cutoff_hz: low_hz,
                nyquist_hz: fs / 2.0,
            });
        }
        let wl = prewarp(low_hz, fs);
        let wh = prewarp(high_hz, fs);
        let w0_sq = wl * wh;
        let bw = wh - wl;
        let mut poles = Vec::with_capacity(2 * order);
        for p in prototype_poles(order) {
            let pb = p * bw;
            let disc = (pb * pb - Complex::real(4.0 * w0_sq)).sqrt();
            poles.push(bilinear((pb + disc) * 0.5, fs));
            poles.push(bilinear((pb - disc) * 0.5, fs));
        }
        let mut sos = assemble(poles, &[[1.0, -1.0]], 2 * order);
        sos.edge_pad = sos.edge_pad.max(settle_samples(low_hz, fs));
        let w0_digital = 2.0 * libm::atan(libm::sqrt(w0_sq) / (2.0 * fs));
        sos.normalise(Complex::expi(w0_digital));
        Ok(sos)
    }

    fn normalise(&mut self, z: Complex) {
        let gain = self.response_at_z(z).abs();
        if let Some(first) = self.sections.first_mut() {
            for b in first.b.iter_mut() {
                *b /= gain;
            }
        }
    }

    fn response_at_z(&self, z: Complex) -> Complex {
        let z_inv = Complex::real(1.0) / z;
        self.sections
            .iter()
            .fold(Complex::real(1.0), |acc, s| acc * s.response(z_inv))
    }

    pub fn sections(&self) -> &[Biquad] {
        &self.sections
    }

    /// Number of poles.
    pub fn order(&self) -> usize {
        self.order
    }

    /// Single-pass magnitude response at `f_hz`.
    pub fn magnitude_at(&self, f_hz: f64, fs: f64) -> f64 {
        self.response_at_z(Complex::expi(2.0 * PI * f_hz / fs))
            .abs()
    }

    /// Causal filtering, started in the steady state of the first sample.
    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        self.filter_in_place(&mut y);
        y
    }

    fn filter_in_place(&self, y: &mut [f64]) {
        let Some(&x0) = y.first() else {
            return;
        };
        let mut level = x0;
        for s in &self.sections {
            let [z1, z2] = s.step_state();
            s.run(y, [z1 * level, z2 * level]);
            level *= s.dc_gain();
        }
    }

    /// Mirror padding applied at each edge by [`Sos::filtfilt`]:
    /// the larger of `3 * order` samples and three periods of the lowest
    /// corner frequency.
    pub fn edge_pad(&self) -> usize {
        self.edge_pad
    }

    /// Zero-phase forward-backward filtering with mirror (even) padding
    /// and steady-state initial conditions.
    ///
    /// Even padding keeps a high-pass from pulling the end samples to zero,
    /// which odd padding does by construction.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n == 0 {
            return Vec::new();
        }
        let pad = self.edge_pad.min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| x[n - 1 - i]));

        self.filter_in_place(&mut ext);
        ext.reverse();
        self.filter_in_place(&mut ext);
        ext.reverse();
        ext.drain(..pad);
        ext.truncate(n);
        ext
    }
}

/// Zero-phase Butterworth high-pass of a PPG series.
pub fn highpass_filter(series: &TimeSeries, cutoff_hz: f64) -> Result<TimeSeries> {
    if series.channel() != Channel::Ppg {
        return Err(Error::WrongChannel);
    }
    let sos = Sos::butter_highpass(PPG_HIGHPASS_ORDER, cutoff_hz, series.sample_rate_hz())?;
    series.with_samples(sos.filtfilt(series.samples()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    /// Analytic magnitude of a bilinear-transformed Butterworth high-pass.
    fn analytic_hp(order: usize, fc: f64, f: f64, fs: f64) -> f64 {
        let ratio = libm::tan(PI * fc / fs) / libm::tan(PI * f / fs);
        1.0 / libm::sqrt(1.0 + libm::pow(ratio, 2.0 * order as f64))
    }

    /// Analytic magnitude of the bilinear band-pass: the analogue
    /// prototype evaluated at the band-pass frequency mapping.
    fn analytic_bp(order: usize, lo: f64, hi: f64, f: f64, fs: f64) -> f64 {
        let w = 2.0 * fs * libm::tan(PI * f / fs);
        let wl = 2.0 * fs * libm::tan(PI * lo / fs);
        let wh = 2.0 * fs * libm::tan(PI * hi / fs);
        let omega = (w * w - wl * wh) / (w * (wh - wl));
        1.0 / libm::sqrt(1.0 + libm::pow(omega.abs(), 2.0 * order as f64))
    }

    #[test]
    fn highpass_matches_analytic_response() {
        for order in 1..=6 {
            let sos = Sos::butter_highpass(order, 0.5, 20.0).unwrap();
            for f in [0.05, 0.1, 0.3, 0.5, 0.8, 1.5, 3.0, 9.0] {
                let got = sos.magnitude_at(f, 20.0);
                let want = analytic_hp(order, 0.5, f, 20.0);
                assert!(
                    (got - want).abs() < 1e-9,
                    "order {order} f {f}: {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn bandpass_matches_analytic_response() {
        let sos = Sos::butter_bandpass(3, 8.0, 20.0, 512.0).unwrap();
        assert_eq!(sos.sections().len(), 3);
        for f in [1.0, 5.0, 8.0, 12.0, 20.0, 40.0, 100.0] {
            let got = sos.magnitude_at(f, 512.0);
            let want = analytic_bp(3, 8.0, 20.0, f, 512.0);
            assert!((got - want).abs() < 1e-9, "f {f}: {got} vs {want}");
        }
    }

    #[test]
    fn rejects_cutoff_at_nyquist() {
        assert!(matches!(
            Sos::butter_highpass(4, 10.0, 20.0),
            Err(Error::InvalidCutoff { .. })
        ));
        let s = TimeSeries::new(vec![1.0; 100], 20.0, 0.0, Channel::Ppg).unwrap();
        assert!(highpass_filter(&s, 12.0).is_err());
        assert!(highpass_filter(&s, 0.0).is_err());
    }

    #[test]
    fn constant_input_is_rejected_exactly() {
        let s = TimeSeries::new(vec![5.0; 400], 20.0, 0.0, Channel::Ppg).unwrap();
        let y = highpass_filter(&s, 0.5).unwrap();
        let peak = y.samples().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(peak < 1e-6, "{peak}");
    }

    #[test]
    fn ecg_channel_is_rejected() {
        let s = TimeSeries::new(vec![1.0; 100], 512.0, 0.0, Channel::EcgLeadII).unwrap();
        assert_eq!(highpass_filter(&s, 0.5), Err(Error::WrongChannel));
    }

    #[test]
    fn short_inputs_do_not_panic() {
        let sos = Sos::butter_highpass(4, 0.5, 20.0).unwrap();
        assert!(sos.filtfilt(&[]).is_empty());
        assert_eq!(sos.filtfilt(&[3.0]).len(), 1);
        assert_eq!(sos.filtfilt(&[3.0, 1.0, 2.0]).len(), 3);
    }
}
