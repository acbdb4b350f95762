//! Body-surface signal preprocessing and simulated-noise injection.
//!
//! The default chain is: excluded electrodes zeroed, powerline comb notch,
//! Butterworth low-pass, Butterworth high-pass, common average reference.
//! All filters run forward-backward unless `zero_phase` is off.

mod filter;

use nalgebra::DMatrix;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use filter::{FilterKind, Sos};

use crate::{Error, Result};

/// Electrodes × samples matrix of potentials (mV).
#[derive(Debug, Clone, PartialEq)]
pub struct SignalBlock {
    pub samples: DMatrix<f64>,
    pub sample_rate: f64,
    pub electrode_ids: Vec<String>,
    pub excluded: Vec<bool>,
    /// Time of the first sample, seconds.
    pub time_zero: f64,
}

impl SignalBlock {
    pub fn new(samples: DMatrix<f64>, sample_rate: f64, electrode_ids: Vec<String>) -> Result<Self> {
        let n = samples.nrows();
        let block = SignalBlock {
            samples,
            sample_rate,
            electrode_ids,
            excluded: vec![false; n],
            time_zero: 0.0,
        };
        block.validate()?;
        Ok(block)
    }

    /// Block with ids `"0"`, `"1"`, ….
    pub fn with_index_ids(samples: DMatrix<f64>, sample_rate: f64) -> Result<Self> {
        let ids = (0..samples.nrows()).map(|i| i.to_string()).collect();
        Self::new(samples, sample_rate, ids)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.samples.nrows();
        if self.electrode_ids.len() != m {
            return Err(Error::Dimension {
                context: "signal electrode ids",
                expected: m,
                found: self.electrode_ids.len(),
            });
        }
        if self.excluded.len() != m {
            return Err(Error::Dimension {
                context: "signal exclusion mask",
                expected: m,
                found: self.excluded.len(),
            });
        }
        if !(self.sample_rate > 0.0 && self.sample_rate.is_finite()) {
            return Err(Error::InvalidInput(format!("sample rate must be positive, got {}", self.sample_rate)));
        }
        Ok(())
    }

    pub fn n_electrodes(&self) -> usize {
        self.samples.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.samples.ncols()
    }

    pub fn time(&self, k: usize) -> f64 {
        self.time_zero + k as f64 / self.sample_rate
    }

    pub fn included(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_electrodes()).filter(|&i| !self.excluded[i])
    }

    fn with_samples(&self, samples: DMatrix<f64>) -> SignalBlock {
        SignalBlock {
            samples,
            ..self.clone()
        }
    }

    /// Applies `f` to every included row; excluded rows are left untouched.
    fn map_rows(&self, f: impl Fn(&[f64]) -> Vec<f64> + Sync) -> SignalBlock {
        let rows: Vec<Vec<f64>> = (0..self.n_electrodes())
            .into_par_iter()
            .map(|i| {
                let row: Vec<f64> = self.samples.row(i).iter().copied().collect();
                if self.excluded[i] {
                    row
                } else {
                    f(&row)
                }
            })
            .collect();
        let mut out = self.samples.clone();
        for (i, row) in rows.iter().enumerate() {
            for (k, &v) in row.iter().enumerate() {
                out[(i, k)] = v;
            }
        }
        self.with_samples(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSpec {
    pub comb_f0: f64,
    /// Harmonics notched in addition to the fundamental.
    pub comb_harmonics: usize,
    pub comb_bandwidth: f64,
    pub lp_cutoff: f64,
    pub lp_order: usize,
    pub hp_cutoff: f64,
    pub hp_order: usize,
    pub zero_phase: bool,
}

impl Default for FilterSpec {
    fn default() -> Self {
        FilterSpec {
            comb_f0: 50.0,
            comb_harmonics: 3,
            comb_bandwidth: 1.0,
            lp_cutoff: 40.0,
            lp_order: 10,
            hp_cutoff: 0.67,
            hp_order: 3,
            zero_phase: true,
        }
    }
}

pub fn comb_notch(s: &SignalBlock, spec: &FilterSpec) -> Result<SignalBlock> {
    let sos = Sos::comb(spec.comb_f0, spec.comb_harmonics, spec.comb_bandwidth, s.sample_rate)?;
    let tones: Vec<f64> = (1..=spec.comb_harmonics + 1).map(|h| spec.comb_f0 * h as f64).collect();
    Ok(s.map_rows(|x| {
        if spec.zero_phase {
            sos.filtfilt_with(x, &tones, s.sample_rate)
        } else {
            sos.filter(x)
        }
    }))
}

pub fn butterworth(s: &SignalBlock, kind: FilterKind, cutoff: f64, order: usize, zero_phase: bool) -> Result<SignalBlock> {
    let sos = Sos::butterworth(kind, cutoff, order, s.sample_rate)?;
    Ok(s.map_rows(|x| sos.apply(x, zero_phase)))
}

/// Adds i.i.d. Gaussian noise to the included rows at the requested SNR.
/// `snr_db = +∞` returns the block unchanged.
pub fn add_gaussian_noise(s: &SignalBlock, snr_db: f64, seed: u64) -> Result<SignalBlock> {
    if snr_db == f64::INFINITY {
        return Ok(s.clone());
    }
    if snr_db.is_nan() {
        return Err(Error::InvalidInput("snr_db is NaN".into()));
    }
    let rows: Vec<usize> = s.included().collect();
    let count = rows.len() * s.n_samples();
    let power = rows
        .iter()
        .map(|&i| s.samples.row(i).iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        / count.max(1) as f64;
    if !(power > 0.0) {
        return Err(Error::InvalidInput("cannot set an SNR on a zero-power signal".into()));
    }
    let std = (power * 10f64.powf(-snr_db / 10.0)).sqrt();
    let mut gauss = GaussianStream::new(seed);
    let mut out = s.samples.clone();
    // row-major draw order, independent of storage layout
    for &i in &rows {
        for k in 0..s.n_samples() {
            out[(i, k)] += std * gauss.next();
        }
    }
    Ok(s.with_samples(out))
}

/// Standard normal deviates from ChaCha8 via the Box–Muller transform.
pub struct GaussianStream {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl GaussianStream {
    pub fn new(seed: u64) -> Self {
        GaussianStream {
            rng: ChaCha8Rng::seed_from_u64(seed),
            spare: None,
        }
    }

    /// Uniform in (0, 1].
    fn uniform(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn next(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let r = (-2.0 * self.uniform().ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * self.uniform();
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }
}

/// Subtracts the per-sample mean of the included electrodes; excluded rows
/// are zeroed. A mean within the rounding error of its own sum is taken as
/// zero, which makes the operation exactly idempotent.
pub fn common_reference(s: &SignalBlock) -> Result<SignalBlock> {
    let rows: Vec<usize> = s.included().collect();
    if rows.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "common reference needs at least 2 included electrodes, found {}",
            rows.len()
        )));
    }
    let mut out = s.samples.clone();
    for k in 0..s.n_samples() {
        let n = rows.len() as f64;
        let mut mean = rows.iter().map(|&i| s.samples[(i, k)]).sum::<f64>() / n;
        let scale = rows.iter().map(|&i| s.samples[(i, k)].abs()).sum::<f64>() / n;
        if mean.abs() <= 2.0 * n * f64::EPSILON * scale {
            mean = 0.0;
        }
        for i in 0..s.n_electrodes() {
            out[(i, k)] = if s.excluded[i] { 0.0 } else { s.samples[(i, k)] - mean };
        }
    }
    Ok(s.with_samples(out))
}

/// Full chain: exclusion, comb, low-pass, high-pass, common reference.
pub fn preprocess(s: &SignalBlock, spec: &FilterSpec) -> Result<SignalBlock> {
    s.validate()?;
    let mut x = s.clone();
    for i in 0..x.n_electrodes() {
        if x.excluded[i] {
            x.samples.row_mut(i).fill(0.0);
        } else if x.samples.row(i).iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "electrode {} has non-finite samples; exclude it",
                x.electrode_ids[i]
            )));
        }
    }
    let x = comb_notch(&x, spec)?;
    let x = butterworth(&x, FilterKind::Lowpass, spec.lp_cutoff, spec.lp_order, spec.zero_phase)?;
    let x = butterworth(&x, FilterKind::Highpass, spec.hp_cutoff, spec.hp_order, spec.zero_phase)?;
    common_reference(&x)
}
