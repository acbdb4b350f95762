//! IIR design and application as cascaded second-order sections.
//!
//! Sections use transposed direct form II with coefficients
//! `[b0, b1, b2, a1, a2]` (`a0 = 1`). First-order sections are stored with
//! `b2 = a2 = 0`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    Lowpass,
    Highpass,
}

/// Decay below which a padding transient is considered gone.
const TRANSIENT_DECAY: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct Sos {
    sections: Vec<[f64; 5]>,
}

impl Sos {
    pub fn sections(&self) -> &[[f64; 5]] {
        &self.sections
    }

    /// Butterworth filter of the given order via the bilinear transform with
    /// cutoff prewarping, so `|H(cutoff)|² = 1/2` exactly.
    pub fn butterworth(kind: FilterKind, cutoff: f64, order: usize, sample_rate: f64) -> Result<Sos> {
        let nyquist = sample_rate / 2.0;
        if !(cutoff > 0.0 && cutoff < nyquist) {
            return Err(Error::InvalidInput(format!(
                "cutoff {cutoff} Hz must lie in (0, {nyquist}) Hz"
            )));
        }
        if order == 0 {
            return Err(Error::InvalidInput("filter order must be at least 1".into()));
        }
        let fs2 = 2.0 * sample_rate;
        let warped = fs2 * (PI * cutoff / sample_rate).tan();
        let bilinear = |s: Complex64| (fs2 + s) / (fs2 - s);
        let analog = |k: usize| {
            let theta = PI * (2 * k + order + 1) as f64 / (2 * order) as f64;
            let p = Complex64::from_polar(1.0, theta);
            match kind {
                FilterKind::Lowpass => p * warped,
                FilterKind::Highpass => warped / p,
            }
        };
        // zeros at z = -1 (lowpass) or z = 1 (highpass)
        let zero = match kind {
            FilterKind::Lowpass => -1.0,
            FilterKind::Highpass => 1.0,
        };
        // unit gain at DC (lowpass) or Nyquist (highpass)
        let z_ref = -zero;
        let mut sections = Vec::with_capacity(order.div_ceil(2));
        for k in 0..order / 2 {
            let p = bilinear(analog(k));
            let a1 = -2.0 * p.re;
            let a2 = p.norm_sqr();
            let b = [1.0, -2.0 * zero, 1.0];
            let gain = section_response(&[b[0], b[1], b[2], a1, a2], z_ref).norm();
            sections.push([b[0] / gain, b[1] / gain, b[2] / gain, a1, a2]);
        }
        if order % 2 == 1 {
            let p = bilinear(analog(order / 2)).re;
            let s = [1.0, -zero, 0.0, -p, 0.0];
            let gain = section_response(&s, z_ref).norm();
            sections.push([s[0] / gain, s[1] / gain, 0.0, -p, 0.0]);
        }
        let sos = Sos { sections };
        sos.check_stable()?;
        Ok(sos)
    }

    /// Cascade of second-order notches at `f0, 2·f0, …, (harmonics+1)·f0`,
    /// each with -3 dB bandwidth `bandwidth` Hz.
    pub fn comb(f0: f64, harmonics: usize, bandwidth: f64, sample_rate: f64) -> Result<Sos> {
        let nyquist = sample_rate / 2.0;
        let top = f0 * (harmonics + 1) as f64;
        if !(f0 > 0.0 && top < nyquist) {
            return Err(Error::InvalidInput(format!(
                "comb tone {top} Hz is not below the Nyquist frequency {nyquist} Hz"
            )));
        }
        if !(bandwidth > 0.0) {
            return Err(Error::InvalidInput("notch bandwidth must be positive".into()));
        }
        let sections = (1..=harmonics + 1)
            .map(|h| {
                let w0 = 2.0 * PI * f0 * h as f64 / sample_rate;
                let q = f0 * h as f64 / bandwidth;
                let alpha = w0.sin() / (2.0 * q);
                let a0 = 1.0 + alpha;
                let c = -2.0 * w0.cos();
                [1.0 / a0, c / a0, 1.0 / a0, c / a0, (1.0 - alpha) / a0]
            })
            .collect();
        let sos = Sos { sections };
        sos.check_stable()?;
        Ok(sos)
    }

    fn check_stable(&self) -> Result<()> {
        for (i, s) in self.sections.iter().enumerate() {
            let r = self.pole_radius(s);
            if !(r < 1.0) {
                return Err(Error::Numerical(format!("unstable filter section {i}: pole radius {r}")));
            }
        }
        Ok(())
    }

    fn pole_radius(&self, s: &[f64; 5]) -> f64 {
        let (a1, a2) = (s[3], s[4]);
        let disc = a1 * a1 - 4.0 * a2;
        if disc < 0.0 {
            a2.sqrt()
        } else {
            let r = disc.sqrt();
            ((-a1 + r) / 2.0).abs().max(((-a1 - r) / 2.0).abs())
        }
    }

    /// Complex frequency response at `freq` Hz.
    pub fn response(&self, freq: f64, sample_rate: f64) -> Complex64 {
        let z = Complex64::from_polar(1.0, 2.0 * PI * freq / sample_rate);
        self.sections.iter().map(|s| section_response(s, z)).product()
    }

    /// Samples after which the slowest pole has decayed by `TRANSIENT_DECAY`.
    fn settle_len(&self) -> usize {
        let r = self
            .sections
            .iter()
            .map(|s| self.pole_radius(s))
            .fold(0.0, f64::max);
        if r <= 0.0 {
            return 1;
        }
        (TRANSIENT_DECAY.ln() / r.ln()).ceil() as usize
    }

    /// Single causal pass with steady-state initial conditions for the first
    /// sample held constant.
    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        let Some(&x0) = x.first() else { return y };
        let mut level = x0;
        for s in &self.sections {
            let dc = (s[0] + s[1] + s[2]) / (1.0 + s[3] + s[4]);
            let mut z1 = level * (dc - s[0]);
            let mut z2 = level * (s[2] - s[4] * dc);
            for v in y.iter_mut() {
                let xin = *v;
                let out = s[0] * xin + z1;
                z1 = s[1] * xin - s[3] * out + z2;
                z2 = s[2] * xin - s[4] * out;
                *v = out;
            }
            level *= dc;
        }
        y
    }

    /// Forward-backward (zero-phase) filtering. The signal is extended at
    /// both ends by point reflection over a length long enough for the
    /// slowest pole to settle (capped at `len - 1`).
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        self.filtfilt_with(x, &[], 0.0)
    }

    /// As [`Sos::filtfilt`], but components at the frequencies `tones` (Hz)
    /// are least-squares fitted near each edge and continued exactly into the
    /// padding, and only the remainder is reflected. A narrow notch otherwise
    /// rings for several time constants after the phase break a reflection
    /// introduces into a stationary tone. The extension stays linear in `x`.
    pub fn filtfilt_with(&self, x: &[f64], tones: &[f64], sample_rate: f64) -> Vec<f64> {
        let n = x.len();
        if n < 2 {
            return x.to_vec();
        }
        let pad = self.settle_len().min(n - 1);
        let omegas: Vec<f64> = tones.iter().map(|f| 2.0 * PI * f / sample_rate).collect();
        let head = edge_extension(x, pad, &omegas);
        let rev: Vec<f64> = x.iter().rev().copied().collect();
        let tail = edge_extension(&rev, pad, &omegas);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend(head.iter().rev());
        ext.extend_from_slice(x);
        ext.extend(tail.iter());
        let mut y = self.filter(&ext);
        y.reverse();
        let mut y = self.filter(&y);
        y.reverse();
        y[pad..pad + n].to_vec()
    }

    pub fn apply(&self, x: &[f64], zero_phase: bool) -> Vec<f64> {
        if zero_phase {
            self.filtfilt(x)
        } else {
            self.filter(x)
        }
    }
}

/// Values at times `-1, -2, …, -pad` before `x[0]`: fitted tones continued,
/// remainder reflected through `x[0]`.
fn edge_extension(x: &[f64], pad: usize, omegas: &[f64]) -> Vec<f64> {
    let fit = fit_tones(&x[..=pad], omegas);
    let resid = |k: usize| x[k] - fit(k as f64);
    (1..=pad)
        .map(|j| fit(-(j as f64)) + 2.0 * resid(0) - resid(j))
        .collect()
}

/// Least-squares fit of `Σ aₖ cos(ωₖ t) + bₖ sin(ωₖ t)` to `x[t]`, returned
/// as a callable model.
fn fit_tones(x: &[f64], omegas: &[f64]) -> impl Fn(f64) -> f64 + use<> {
    let omegas = omegas.to_vec();
    let cols = 2 * omegas.len();
    let basis = move |t: f64| -> Vec<f64> {
        omegas
            .iter()
            .flat_map(|&w| [(w * t).cos(), (w * t).sin()])
            .collect()
    };
    let coef = if cols == 0 || x.len() < cols {
        vec![0.0; cols]
    } else {
        let mut a = DMatrix::zeros(x.len(), cols);
        for t in 0..x.len() {
            for (c, v) in basis(t as f64).into_iter().enumerate() {
                a[(t, c)] = v;
            }
        }
        let b = DVector::from_column_slice(x);
        a.svd(true, true)
            .solve(&b, 1e-12)
            .map(|v| v.iter().copied().collect())
            .unwrap_or_else(|_| vec![0.0; cols])
    };
    move |t: f64| basis(t).iter().zip(&coef).map(|(u, c)| u * c).sum()
}

fn section_response<Z: Into<Complex64>>(s: &[f64; 5], z: Z) -> Complex64 {
    let zi = z.into().inv();
    let num = s[0] + zi * (s[1] + zi * s[2]);
    let den = 1.0 + zi * (s[3] + zi * s[4]);
    num / den
}
