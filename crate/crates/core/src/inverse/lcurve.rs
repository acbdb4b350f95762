//! L-curve corner selection.

use std::io::Write;
use std::path::Path;

use log::warn;

use crate::{Error, Result};

/// One grid point of the L-curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub lambda: f64,
    /// Residual norm ‖A x − g‖ (Frobenius over samples).
    pub rho: f64,
    /// Solution norm ‖x‖.
    pub eta: f64,
    /// Signed curvature of `(log ρ, log η)`; NaN at the grid ends.
    pub curvature: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CornerChoice {
    pub index: usize,
    pub lambda: f64,
    /// The maximum sits next to a grid end.
    pub at_boundary: bool,
    /// The curve was a straight line in log-log; mid-grid λ was returned.
    pub degenerate: bool,
    pub points: Vec<CurvePoint>,
}

/// Minimum number of grid points for L-curve selection.
pub const MIN_POINTS: usize = 10;

/// Picks the λ of maximum log-log curvature. Curvature is computed with
/// three-point differences in `log λ`; uniform log grids use the index as
/// parameter, which is the same curvature without rounding asymmetry. Ties
/// go to the smallest λ.
pub fn lcurve_select(lambdas: &[f64], rho: &[f64], eta: &[f64]) -> Result<CornerChoice> {
    let n = lambdas.len();
    if rho.len() != n || eta.len() != n {
        return Err(Error::Dimension {
            context: "L-curve samples",
            expected: n,
            found: rho.len().min(eta.len()),
        });
    }
    if n < MIN_POINTS {
        return Err(Error::InvalidInput(format!("L-curve needs at least {MIN_POINTS} points, got {n}")));
    }
    if lambdas.iter().chain(rho).chain(eta).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidInput("L-curve values must be positive and finite".into()));
    }
    let x: Vec<f64> = rho.iter().map(|v| v.ln()).collect();
    let y: Vec<f64> = eta.iter().map(|v| v.ln()).collect();
    let t = parameter(lambdas);

    let mut points: Vec<CurvePoint> = (0..n)
        .map(|i| CurvePoint {
            lambda: lambdas[i],
            rho: rho[i],
            eta: eta[i],
            curvature: f64::NAN,
        })
        .collect();

    if collinear(&x, &y) {
        let index = n / 2;
        warn!("L-curve is a straight line in log-log; using mid-grid λ = {:.3e}", lambdas[index]);
        return Ok(CornerChoice {
            index,
            lambda: lambdas[index],
            at_boundary: false,
            degenerate: true,
            points,
        });
    }

    let mut best: Option<usize> = None;
    for i in 1..n - 1 {
        let (h0, h1) = (t[i] - t[i - 1], t[i + 1] - t[i]);
        let span = t[i + 1] - t[i - 1];
        let dx = (x[i + 1] - x[i - 1]) / span;
        let dy = (y[i + 1] - y[i - 1]) / span;
        let ddx = 2.0 * ((x[i + 1] - x[i]) / h1 - (x[i] - x[i - 1]) / h0) / span;
        let ddy = 2.0 * ((y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0) / span;
        let speed = dx * dx + dy * dy;
        let k = if speed > 0.0 { (dx * ddy - dy * ddx) / speed.powf(1.5) } else { 0.0 };
        points[i].curvature = k;
        best = match best {
            None => Some(i),
            Some(b) => {
                let kb = points[b].curvature;
                if k > kb || (k == kb && lambdas[i] < lambdas[b]) {
                    Some(i)
                } else {
                    Some(b)
                }
            }
        };
    }
    let index = best.expect("at least one interior point");
    let at_boundary = index == 1 || index == n - 2;
    if at_boundary {
        warn!("L-curve corner at the grid boundary (λ = {:.3e})", lambdas[index]);
    }
    Ok(CornerChoice {
        index,
        lambda: lambdas[index],
        at_boundary,
        degenerate: false,
        points,
    })
}

fn parameter(lambdas: &[f64]) -> Vec<f64> {
    let t: Vec<f64> = lambdas.iter().map(|l| l.ln()).collect();
    let n = t.len();
    let step = (t[n - 1] - t[0]) / (n - 1) as f64;
    let uniform = (1..n).all(|i| ((t[i] - t[i - 1]) - step).abs() <= 1e-9 * step.abs());
    if uniform && step != 0.0 {
        (0..n).map(|i| i as f64 * step.signum()).collect()
    } else {
        t
    }
}

fn collinear(x: &[f64], y: &[f64]) -> bool {
    let n = x.len();
    let (ex, ey) = (x[n - 1] - x[0], y[n - 1] - y[0]);
    let len = (ex * ex + ey * ey).sqrt();
    if len == 0.0 {
        return true;
    }
    let scale = x.iter().chain(y).fold(len, |m, v| m.max(v.abs()));
    (0..n).all(|i| ((x[i] - x[0]) * ey - (y[i] - y[0]) * ex).abs() / len <= 1e-12 * scale)
}

/// Writes `lambda,rho,eta,curvature` rows; undefined curvature is left empty.
pub fn write_lcurve_csv(path: &Path, points: &[CurvePoint]) -> Result<()> {
    let mut out = String::from("lambda,rho,eta,curvature\n");
    for p in points {
        let k = if p.curvature.is_nan() { String::new() } else { format!("{:e}", p.curvature) };
        out.push_str(&format!("{:e},{:e},{:e},{}\n", p.lambda, p.rho, p.eta, k));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}
