//! Segment-level infarct metrics from activation maps.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::LatMap;
use crate::geom::SegmentModel;
use crate::{Error, Result, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OverlapFormula {
    /// |E ∩ R| / |E ∪ R|
    Jaccard,
    /// 2|E ∩ R| / (|E| + |R|)
    Dice,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InfarctReference {
    pub segments: BTreeSet<u8>,
    /// Volume fraction in [0, 1], when known.
    pub extent: Option<f64>,
    pub centre: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InfarctReport {
    pub formula: OverlapFormula,
    pub tat_threshold_ms: f64,
    pub estimated: Vec<u8>,
    /// Absent when no segment was labelled.
    pub centre: Option<u8>,
    pub extent: f64,
    /// Overlap by `formula`.
    pub overlap: f64,
    pub jaccard: f64,
    pub dice: f64,
    pub reference: InfarctReference,
    /// Intra-segment TAT keyed by segment id.
    pub segment_tat_ms: BTreeMap<String, f64>,
}

/// Published two-case reference frame (2007 PhysioNet challenge data),
/// carried as context rows in reports.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContextCase {
    pub label: &'static str,
    pub reference: &'static [u8],
    pub estimate: &'static [u8],
    pub centre: u8,
    pub extent: f64,
    pub reported_overlap: f64,
}

pub const PHYSIONET_CONTEXT: [ContextCase; 2] = [
    ContextCase {
        label: "physionet case 3",
        reference: &[3, 4, 5, 9, 10, 11, 12, 15, 16],
        estimate: &[4, 5, 6, 7, 9, 10, 11, 12, 13, 14, 16],
        centre: 11,
        extent: 0.643,
        reported_overlap: 0.65,
    },
    ContextCase {
        label: "physionet case 4",
        reference: &[1, 9, 10, 11, 15, 17],
        estimate: &[1, 3, 4, 6, 9, 10, 11, 12, 13, 14],
        centre: 9,
        extent: 0.245,
        reported_overlap: 0.49,
    },
];

pub fn jaccard(a: &BTreeSet<u8>, b: &BTreeSet<u8>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

pub fn dice(a: &BTreeSet<u8>, b: &BTreeSet<u8>) -> f64 {
    let total = a.len() + b.len();
    if total == 0 {
        return 1.0;
    }
    2.0 * a.intersection(b).count() as f64 / total as f64
}

/// Labels a segment fibrotic when its intra-segment TAT exceeds the
/// threshold. `vertices` is indexed by node id and `volumes` by LAT row.
pub fn infarct_metrics(
    lats: &LatMap,
    segments: &SegmentModel,
    vertices: &[Vec3],
    volumes: &[f64],
    reference: &InfarctReference,
    tat_threshold_ms: f64,
    formula: OverlapFormula,
) -> Result<InfarctReport> {
    if volumes.len() != lats.len() {
        return Err(Error::Dimension {
            context: "node volumes vs LAT rows",
            expected: lats.len(),
            found: volumes.len(),
        });
    }
    if let Some(&n) = lats.nodes.iter().find(|&&n| n >= vertices.len()) {
        return Err(Error::InvalidInput(format!("LAT node {n} has no coordinates")));
    }
    if reference.segments.iter().any(|s| !(1..=17).contains(s)) {
        return Err(Error::InvalidInput("reference segments must be in 1..=17".into()));
    }
    let seg_of: Vec<u8> = lats.nodes.iter().map(|&n| segments.classify(&vertices[n])).collect();

    let mut span: BTreeMap<u8, (f64, f64, usize)> = BTreeMap::new();
    for (row, _, lat) in lats.valid_entries() {
        let e = span.entry(seg_of[row]).or_insert((f64::INFINITY, f64::NEG_INFINITY, 0));
        e.0 = e.0.min(lat);
        e.1 = e.1.max(lat);
        e.2 += 1;
    }
    let segment_tat: BTreeMap<u8, f64> = span
        .iter()
        .filter(|(_, (_, _, n))| *n >= 2)
        .map(|(&s, (lo, hi, _))| (s, hi - lo))
        .collect();
    let estimated: BTreeSet<u8> = segment_tat
        .iter()
        .filter(|(_, &t)| t > tat_threshold_ms)
        .map(|(&s, _)| s)
        .collect();

    let total: f64 = volumes.iter().sum();
    let mut fib_volume = 0.0;
    let mut weighted = Vec3::zeros();
    let mut seg_sum: BTreeMap<u8, (Vec3, usize)> = BTreeMap::new();
    for (row, &node) in lats.nodes.iter().enumerate() {
        if estimated.contains(&seg_of[row]) {
            fib_volume += volumes[row];
            weighted += vertices[node] * volumes[row];
            let e = seg_sum.entry(seg_of[row]).or_insert((Vec3::zeros(), 0));
            e.0 += vertices[node];
            e.1 += 1;
        }
    }
    let centre = if estimated.is_empty() || fib_volume <= 0.0 {
        None
    } else {
        let c = weighted / fib_volume;
        let s = segments.classify(&c);
        if estimated.contains(&s) {
            Some(s)
        } else {
            // centroid fell outside the labelled set (e.g. in the cavity):
            // take the labelled segment whose node centroid is nearest
            seg_sum
                .iter()
                .map(|(&seg, (sum, n))| (seg, (sum / *n as f64 - c).norm()))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(seg, _)| seg)
        }
    };
    let extent = if total > 0.0 { fib_volume / total } else { 0.0 };
    let (jac, dic) = if estimated.is_empty() {
        (0.0, 0.0)
    } else {
        (jaccard(&estimated, &reference.segments), dice(&estimated, &reference.segments))
    };
    Ok(InfarctReport {
        formula,
        tat_threshold_ms,
        estimated: estimated.into_iter().collect(),
        centre,
        extent,
        overlap: match formula {
            OverlapFormula::Jaccard => jac,
            OverlapFormula::Dice => dic,
        },
        jaccard: jac,
        dice: dic,
        reference: reference.clone(),
        segment_tat_ms: segment_tat.into_iter().map(|(s, t)| (s.to_string(), t)).collect(),
    })
}

impl InfarctReport {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("cannot serialize infarct report: {e}")))
    }

    /// Fixed-width table with the estimate, the reference and the context rows.
    pub fn table(&self) -> String {
        let fmt_set = |s: &[u8]| s.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",");
        let centre = |c: Option<u8>| c.map_or("-".to_string(), |c| c.to_string());
        let mut out = String::new();
        let _ = writeln!(out, "overlap formula: {:?}; TAT threshold {} ms", self.formula, self.tat_threshold_ms);
        let _ = writeln!(
            out,
            "{:<18} {:<34} {:>6} {:>8} {:>8} {:>8}",
            "row", "segments", "centre", "extent", "jaccard", "dice"
        );
        let _ = writeln!(
            out,
            "{:<18} {:<34} {:>6} {:>7.1}% {:>8.3} {:>8.3}",
            "estimate",
            fmt_set(&self.estimated),
            centre(self.centre),
            100.0 * self.extent,
            self.jaccard,
            self.dice
        );
        let reference: Vec<u8> = self.reference.segments.iter().copied().collect();
        let _ = writeln!(
            out,
            "{:<18} {:<34} {:>6} {:>8} {:>8} {:>8}",
            "reference",
            fmt_set(&reference),
            centre(self.reference.centre),
            self.reference.extent.map_or("-".into(), |e| format!("{:.1}%", 100.0 * e)),
            "",
            ""
        );
        for c in PHYSIONET_CONTEXT {
            let (r, e): (BTreeSet<u8>, BTreeSet<u8>) =
                (c.reference.iter().copied().collect(), c.estimate.iter().copied().collect());
            let _ = writeln!(
                out,
                "{:<18} {:<34} {:>6} {:>7.1}% {:>8.3} {:>8.3}  (reported overlap {:.2})",
                c.label,
                fmt_set(c.estimate),
                c.centre,
                100.0 * c.extent,
                jaccard(&e, &r),
                dice(&e, &r),
                c.reported_overlap
            );
        }
        out
    }
}
