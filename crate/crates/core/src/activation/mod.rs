//! Local activation times, earliest-activation localization and total
//! activation time.
//!
//! A node's LAT is the peak of a trace built by placing a raised-cosine
//! wavelet at every sample whose slope has the configured sign, scaled by
//! the slope magnitude. Sources peak in positive slope at depolarization.

mod infarct;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use infarct::{
    dice, infarct_metrics, jaccard, ContextCase, InfarctReference, InfarctReport, OverlapFormula,
    PHYSIONET_CONTEXT,
};

use crate::field::{Domain, SourceField};
use crate::sigproc::{FilterKind, Sos};
use crate::{Error, Result, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlopeSign {
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatParams {
    pub slope_sign: SlopeSign,
    /// Full width of the raised-cosine wavelet.
    pub width_ms: f64,
    /// Zero-phase low-pass applied before differentiation; 0 disables it.
    pub lp_cutoff_hz: f64,
    pub lp_order: usize,
}

impl Default for LatParams {
    fn default() -> Self {
        LatParams {
            slope_sign: SlopeSign::Positive,
            width_ms: 10.0,
            lp_cutoff_hz: 40.0,
            lp_order: 4,
        }
    }
}

/// Fraction of masked nodes above which a map is rejected.
pub const MAX_MASKED_FRACTION: f64 = 0.5;

/// Per-node activation times (ms from the first sample).
#[derive(Debug, Clone, PartialEq)]
pub struct LatMap {
    /// NaN where masked.
    pub lat_ms: Vec<f64>,
    pub valid: Vec<bool>,
    pub nodes: Vec<usize>,
    pub domain: Domain,
}

impl LatMap {
    /// Builds a map from known LATs (all valid).
    pub fn from_values(lat_ms: Vec<f64>, nodes: Vec<usize>, domain: Domain) -> Result<Self> {
        if lat_ms.len() != nodes.len() {
            return Err(Error::Dimension {
                context: "LAT values vs nodes",
                expected: nodes.len(),
                found: lat_ms.len(),
            });
        }
        let valid = lat_ms.iter().map(|v| v.is_finite()).collect();
        Ok(LatMap {
            lat_ms,
            valid,
            nodes,
            domain,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn n_valid(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// `(row, node, lat)` of valid entries.
    pub fn valid_entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.len())
            .filter(|&i| self.valid[i])
            .map(|i| (i, self.nodes[i], self.lat_ms[i]))
    }

    /// Per-vertex array for a mesh with `n_vertices` vertices; −1 where no
    /// valid LAT exists.
    pub fn point_data(&self, n_vertices: usize) -> Result<Vec<f64>> {
        let mut out = vec![-1.0; n_vertices];
        for (_, node, lat) in self.valid_entries() {
            if node >= n_vertices {
                return Err(Error::InvalidInput(format!("LAT node {node} outside mesh of {n_vertices} vertices")));
            }
            out[node] = lat;
        }
        Ok(out)
    }
}

/// LAT of one signal in ms from its first sample; `None` for flat signals.
pub fn lat_wavelet(signal: &[f64], sample_rate: f64, params: &LatParams) -> Result<Option<f64>> {
    let n = signal.len();
    if n < 3 {
        return Err(Error::InvalidInput(format!("LAT needs at least 3 samples, got {n}")));
    }
    let dt_ms = 1000.0 / sample_rate;
    if !(params.width_ms >= 2.0 * dt_ms) {
        return Err(Error::InvalidInput(format!(
            "wavelet width {} ms is below two sample periods ({} ms)",
            params.width_ms,
            2.0 * dt_ms
        )));
    }
    let x = if params.lp_cutoff_hz > 0.0 && params.lp_cutoff_hz < 0.5 * sample_rate {
        Sos::butterworth(FilterKind::Lowpass, params.lp_cutoff_hz, params.lp_order, sample_rate)?.filtfilt(signal)
    } else {
        signal.to_vec()
    };
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let slope: Vec<f64> = (0..n)
        .map(|k| match k {
            0 => x[1] - x[0],
            k if k == n - 1 => x[n - 1] - x[n - 2],
            k => 0.5 * (x[k + 1] - x[k - 1]),
        })
        .collect();
    let floor = 1e-12 * peak;
    if peak == 0.0 || slope.iter().all(|s| s.abs() <= floor) {
        return Ok(None);
    }
    let sign = match params.slope_sign {
        SlopeSign::Positive => 1.0,
        SlopeSign::Negative => -1.0,
    };
    let half = (0.5 * params.width_ms / dt_ms).floor() as usize;
    let kernel: Vec<f64> = (0..=half)
        .map(|d| 0.5 * (1.0 + (2.0 * std::f64::consts::PI * d as f64 * dt_ms / params.width_ms).cos()))
        .collect();
    let mut trace = vec![0.0; n];
    let mut any = false;
    for (k, &s) in slope.iter().enumerate() {
        let s = s * sign;
        if s <= floor {
            continue;
        }
        any = true;
        for (d, w) in kernel.iter().enumerate() {
            if k + d < n {
                trace[k + d] += s * w;
            }
            if d > 0 && k >= d {
                trace[k - d] += s * w;
            }
        }
    }
    if !any {
        return Ok(None);
    }
    let mut best = 0;
    for k in 1..n {
        if trace[k] > trace[best] {
            best = k;
        }
    }
    Ok(Some(best as f64 * dt_ms))
}

/// LAT of every node of a source field.
pub fn lat_map(f: &SourceField, params: &LatParams) -> Result<LatMap> {
    let lats: Vec<Option<f64>> = (0..f.n_nodes())
        .into_par_iter()
        .map(|i| lat_wavelet(&f.row(i), f.sample_rate, params))
        .collect::<Result<_>>()?;
    let masked = lats.iter().filter(|l| l.is_none()).count();
    if masked as f64 > MAX_MASKED_FRACTION * lats.len() as f64 {
        return Err(Error::Numerical(format!("{masked} of {} nodes have flat signals", lats.len())));
    }
    Ok(LatMap {
        valid: lats.iter().map(|l| l.is_some()).collect(),
        lat_ms: lats.into_iter().map(|l| l.unwrap_or(f64::NAN)).collect(),
        nodes: f.nodes.clone(),
        domain: f.domain,
    })
}

/// Minimum number of valid nodes for [`earliest_site`].
pub const MIN_SITE_NODES: usize = 10;

/// Unweighted centroid of the valid nodes whose LAT is at most the
/// nearest-rank `percentile` (value at rank ⌈p·n⌉). `vertices` is indexed
/// by node id.
pub fn earliest_site(lats: &LatMap, vertices: &[Vec3], percentile: f64) -> Result<Vec3> {
    if !(percentile > 0.0 && percentile <= 100.0) {
        return Err(Error::InvalidInput(format!("percentile must be in (0, 100], got {percentile}")));
    }
    let mut valid: Vec<(usize, f64)> = lats.valid_entries().map(|(_, node, lat)| (node, lat)).collect();
    if valid.len() < MIN_SITE_NODES {
        return Err(Error::InvalidInput(format!(
            "earliest site needs at least {MIN_SITE_NODES} valid nodes, got {}",
            valid.len()
        )));
    }
    if let Some(&(node, _)) = valid.iter().find(|(node, _)| *node >= vertices.len()) {
        return Err(Error::InvalidInput(format!("LAT node {node} has no coordinates")));
    }
    let mut sorted: Vec<f64> = valid.iter().map(|v| v.1).collect();
    sorted.sort_by(f64::total_cmp);
    let rank = ((percentile / 100.0 * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    let threshold = sorted[rank - 1];
    valid.retain(|v| v.1 <= threshold);
    let sum = valid.iter().fold(Vec3::zeros(), |acc, (node, _)| acc + vertices[*node]);
    Ok(sum / valid.len() as f64)
}

/// Latest minus earliest valid LAT over the nodes in `region` (node ids).
pub fn total_activation_time(lats: &LatMap, region: &[usize]) -> Result<f64> {
    let index: BTreeMap<usize, usize> = lats.nodes.iter().enumerate().map(|(i, &n)| (n, i)).collect();
    let values: Vec<f64> = region
        .iter()
        .filter_map(|n| index.get(n))
        .filter(|&&i| lats.valid[i])
        .map(|&i| lats.lat_ms[i])
        .collect();
    if values.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "region has {} valid nodes; TAT needs at least 2",
            values.len()
        )));
    }
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(hi - lo)
}
