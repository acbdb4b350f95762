//! Zero-order Tikhonov inversion through SVD filter factors, its
//! equality-constrained variant, and L-curve selection of λ.
//!
//! The objective is `‖A x − g‖² + λ²‖x‖²`, so sensible λ lie between the
//! smallest and largest singular values. One decomposition serves every λ
//! and every time sample.

mod lcurve;

use log::{info, warn};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use lcurve::{lcurve_select, write_lcurve_csv, CornerChoice, CurvePoint, MIN_POINTS};

use crate::field::{Domain, SourceField};
use crate::fwd_epi::EpicardialOperator;
use crate::fwd_vol::VolumetricOperator;
use crate::sigproc::SignalBlock;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selection {
    Fixed,
    Lcurve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegularizationParams {
    pub selection: Selection,
    /// λ for fixed selection.
    pub lambda: f64,
    /// Explicit strictly decreasing grid; empty means the automatic grid.
    pub lambda_grid: Vec<f64>,
    /// Points of the automatic grid.
    pub grid_points: usize,
    /// Lower end of the automatic grid relative to σ_max.
    pub grid_floor: f64,
    /// Select λ per time sample instead of once for the whole beat.
    pub per_sample: bool,
}

impl Default for RegularizationParams {
    fn default() -> Self {
        RegularizationParams {
            selection: Selection::Lcurve,
            lambda: 0.0,
            lambda_grid: Vec::new(),
            grid_points: 60,
            grid_floor: 1e-8,
            per_sample: false,
        }
    }
}

impl RegularizationParams {
    pub fn fixed(lambda: f64) -> Self {
        RegularizationParams {
            selection: Selection::Fixed,
            lambda,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidInput(format!("λ must be ≥ 0, got {}", self.lambda)));
        }
        if self.lambda_grid.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(Error::InvalidInput("λ grid values must be positive".into()));
        }
        if self.lambda_grid.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidInput("λ grid must be strictly decreasing".into()));
        }
        if self.selection == Selection::Lcurve {
            let n = if self.lambda_grid.is_empty() { self.grid_points } else { self.lambda_grid.len() };
            if n < MIN_POINTS {
                return Err(Error::InvalidInput(format!("L-curve grid needs ≥ {MIN_POINTS} points, got {n}")));
            }
        }
        if !(self.grid_floor > 0.0 && self.grid_floor < 1.0) {
            return Err(Error::InvalidInput(format!("grid floor must be in (0, 1), got {}", self.grid_floor)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InverseSolution {
    pub field: SourceField,
    pub lambda: f64,
    pub residual_norm: f64,
    pub solution_norm: f64,
    /// L-curve over the grid (empty for fixed λ).
    pub curve: Vec<CurvePoint>,
    pub corner_at_boundary: bool,
    pub degenerate_curve: bool,
    /// λ per sample when per-sample selection is on.
    pub sample_lambdas: Option<Vec<f64>>,
}

/// SVD of an operator (optionally composed with the projection onto
/// `mᵀx = 0`) plus everything needed to apply filter factors.
#[derive(Debug, Clone)]
pub struct SvdFilter {
    u: DMatrix<f64>,
    sigma: DVector<f64>,
    v: DMatrix<f64>,
    /// Unit constraint direction.
    constraint: Option<DVector<f64>>,
    /// Singular values at or below this are treated as zero.
    rank_tol: f64,
}

impl SvdFilter {
    pub fn new(a: &DMatrix<f64>) -> Result<Self> {
        Self::build(a.clone(), None)
    }

    /// Decomposes `A P` with `P = I − m mᵀ/‖m‖²`.
    pub fn with_constraint(a: &DMatrix<f64>, m: &DVector<f64>) -> Result<Self> {
        if m.len() != a.ncols() {
            return Err(Error::Dimension {
                context: "constraint row vs operator columns",
                expected: a.ncols(),
                found: m.len(),
            });
        }
        let norm = m.norm();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::InvalidInput("constraint row is zero".into()));
        }
        let unit = m / norm;
        let am = a * &unit;
        let projected = a - am * unit.transpose();
        Self::build(projected, Some(unit))
    }

    fn build(a: DMatrix<f64>, constraint: Option<DVector<f64>>) -> Result<Self> {
        if a.nrows() == 0 || a.ncols() == 0 {
            return Err(Error::InvalidInput("empty operator".into()));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("operator has non-finite entries".into()));
        }
        let (rows, cols) = a.shape();
        let svd = a
            .try_svd(true, true, f64::EPSILON, 0)
            .ok_or_else(|| Error::Numerical("SVD did not converge".into()))?;
        let u = svd.u.ok_or_else(|| Error::Numerical("SVD returned no U".into()))?;
        let v_t = svd.v_t.ok_or_else(|| Error::Numerical("SVD returned no Vᵀ".into()))?;
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
        let sigma = DVector::from_iterator(order.len(), order.iter().map(|&k| svd.singular_values[k]));
        let u = DMatrix::from_fn(rows, order.len(), |i, k| u[(i, order[k])]);
        let v = DMatrix::from_fn(cols, order.len(), |j, k| v_t[(order[k], j)]);
        let rank_tol = rows.max(cols) as f64 * f64::EPSILON * sigma[0];
        Ok(SvdFilter {
            u,
            sigma,
            v,
            constraint,
            rank_tol,
        })
    }

    pub fn singular_values(&self) -> &DVector<f64> {
        &self.sigma
    }

    pub fn n_rows(&self) -> usize {
        self.u.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.v.nrows()
    }

    /// Numerical rank.
    pub fn rank(&self) -> usize {
        self.sigma.iter().filter(|&&s| s > self.rank_tol).count()
    }

    /// `points` log-spaced values from σ_max down to
    /// max(smallest nonzero σ, floor·σ_max).
    pub fn default_grid(&self, points: usize, floor: f64) -> Vec<f64> {
        let hi = self.sigma[0];
        let smallest = self.sigma.iter().rev().find(|&&s| s > self.rank_tol).copied().unwrap_or(hi);
        let lo = smallest.max(floor * hi);
        log_grid(hi, lo, points)
    }

    fn coefficients(&self, g: &DMatrix<f64>) -> DMatrix<f64> {
        self.u.transpose() * g
    }

    /// Squared Frobenius norm of the part of `g` outside the numerical range.
    fn perp_sq(&self, g: &DMatrix<f64>, beta: &DMatrix<f64>) -> f64 {
        let r = self.rank();
        let inside = self.u.columns(0, r) * beta.rows(0, r);
        (g - inside).norm_squared()
    }

    /// Residual and solution norm at one λ over all samples.
    /// Both are computed from monotone filter-factor expressions, so ρ is
    /// non-decreasing and η non-increasing in λ even in floating point.
    fn norms(&self, beta: &DMatrix<f64>, perp_sq: f64, lambda: f64) -> (f64, f64) {
        let mut rho_sq = perp_sq;
        let mut eta_sq = 0.0;
        for k in 0..self.rank() {
            let s = self.sigma[k];
            let (res, sol) = filter_factors(s, lambda);
            for b in beta.row(k).iter() {
                let rb = res * b;
                let sb = sol * b;
                rho_sq += rb * rb;
                eta_sq += sb * sb;
            }
        }
        (rho_sq.sqrt(), eta_sq.sqrt())
    }

    /// `x_λ` for every column of `g`.
    pub fn solve(&self, g: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
        self.check_rows(g)?;
        let beta = self.coefficients(g);
        Ok(self.apply_filter(&beta, &vec![lambda; g.ncols()]))
    }

    fn apply_filter(&self, beta: &DMatrix<f64>, lambdas: &[f64]) -> DMatrix<f64> {
        let r = self.rank();
        let mut scaled = DMatrix::zeros(r, beta.ncols());
        for t in 0..beta.ncols() {
            for k in 0..r {
                scaled[(k, t)] = filter_factors(self.sigma[k], lambdas[t]).1 * beta[(k, t)];
            }
        }
        let mut x = self.v.columns(0, r) * scaled;
        if let Some(m) = &self.constraint {
            project_feasible(&mut x, m);
        }
        x
    }

    fn check_rows(&self, g: &DMatrix<f64>) -> Result<()> {
        if g.nrows() != self.n_rows() {
            return Err(Error::Dimension {
                context: "operator rows vs signal electrodes",
                expected: self.n_rows(),
                found: g.nrows(),
            });
        }
        Ok(())
    }

    /// L-curve samples `(λ, ρ, η)` over a grid for the whole block.
    pub fn curve(&self, g: &DMatrix<f64>, grid: &[f64]) -> Result<Vec<(f64, f64, f64)>> {
        self.check_rows(g)?;
        let beta = self.coefficients(g);
        let perp = self.perp_sq(g, &beta);
        Ok(grid
            .iter()
            .map(|&l| {
                let (rho, eta) = self.norms(&beta, perp, l);
                (l, rho, eta)
            })
            .collect())
    }

    /// Regularized solution of `A x = g` with λ chosen per `params`.
    pub fn invert(&self, g: &DMatrix<f64>, params: &RegularizationParams) -> Result<FilteredSolution> {
        params.validate()?;
        self.check_rows(g)?;
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("signals contain non-finite values".into()));
        }
        let beta = self.coefficients(g);
        let t_count = g.ncols();
        let grid = if params.lambda_grid.is_empty() {
            self.default_grid(params.grid_points, params.grid_floor)
        } else {
            params.lambda_grid.clone()
        };

        let mut out = FilteredSolution {
            x: DMatrix::zeros(0, 0),
            lambda: params.lambda,
            residual_norm: 0.0,
            solution_norm: 0.0,
            curve: Vec::new(),
            corner_at_boundary: false,
            degenerate_curve: false,
            sample_lambdas: None,
        };
        let lambdas = match params.selection {
            Selection::Fixed => vec![params.lambda; t_count],
            Selection::Lcurve if params.per_sample => {
                let mut chosen = Vec::with_capacity(t_count);
                for t in 0..t_count {
                    let col = beta.columns(t, 1).into_owned();
                    let perp = self.perp_sq(&g.columns(t, 1).into_owned(), &col);
                    let choice = self.select(&col, perp, &grid);
                    chosen.push(choice.map(|c| c.lambda).unwrap_or(grid[grid.len() / 2]));
                }
                out.sample_lambdas = Some(chosen.clone());
                chosen
            }
            Selection::Lcurve => {
                let perp = self.perp_sq(g, &beta);
                match self.select(&beta, perp, &grid) {
                    Some(choice) => {
                        out.lambda = choice.lambda;
                        out.corner_at_boundary = choice.at_boundary;
                        out.degenerate_curve = choice.degenerate;
                        out.curve = choice.points;
                    }
                    None => {
                        // g has no component in the range: any λ gives x = 0
                        out.lambda = grid[grid.len() / 2];
                        out.degenerate_curve = true;
                    }
                }
                vec![out.lambda; t_count]
            }
        };
        out.x = self.apply_filter(&beta, &lambdas);
        let perp = self.perp_sq(g, &beta);
        if out.sample_lambdas.is_none() {
            let (rho, eta) = self.norms(&beta, perp, out.lambda);
            out.residual_norm = rho;
            out.solution_norm = eta;
        } else {
            out.lambda = median(&lambdas);
            out.residual_norm = (g - self.range_image(&out.x)).norm();
            out.solution_norm = out.x.norm();
        }
        info!("Tikhonov λ = {:.4e}, ρ = {:.4e}, η = {:.4e}", out.lambda, out.residual_norm, out.solution_norm);
        Ok(out)
    }

    /// `A x` reconstructed from the decomposition.
    fn range_image(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let r = self.rank();
        let coeff = self.v.columns(0, r).transpose() * x;
        let mut scaled = coeff;
        for k in 0..r {
            scaled.row_mut(k).scale_mut(self.sigma[k]);
        }
        self.u.columns(0, r) * scaled
    }

    fn select(&self, beta: &DMatrix<f64>, perp_sq: f64, grid: &[f64]) -> Option<CornerChoice> {
        let samples: Vec<(f64, f64)> = grid.iter().map(|&l| self.norms(beta, perp_sq, l)).collect();
        let rho: Vec<f64> = samples.iter().map(|s| s.0).collect();
        let eta: Vec<f64> = samples.iter().map(|s| s.1).collect();
        if rho.iter().chain(&eta).any(|v| !(*v > 0.0)) {
            warn!("L-curve has zero residual or solution norm; falling back to mid-grid λ");
            return None;
        }
        lcurve_select(grid, &rho, &eta).ok()
    }
}

/// Raw result of [`SvdFilter::invert`].
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredSolution {
    /// Unknowns × samples.
    pub x: DMatrix<f64>,
    pub lambda: f64,
    pub residual_norm: f64,
    pub solution_norm: f64,
    pub curve: Vec<CurvePoint>,
    pub corner_at_boundary: bool,
    pub degenerate_curve: bool,
    pub sample_lambdas: Option<Vec<f64>>,
}

impl FilteredSolution {
    fn into_solution(self, nodes: Vec<usize>, domain: Domain, g: &SignalBlock) -> Result<InverseSolution> {
        let mut field = SourceField::new(self.x, nodes, domain, g.sample_rate)?;
        field.time_zero = g.time_zero;
        Ok(InverseSolution {
            field,
            lambda: self.lambda,
            residual_norm: self.residual_norm,
            solution_norm: self.solution_norm,
            curve: self.curve,
            corner_at_boundary: self.corner_at_boundary,
            degenerate_curve: self.degenerate_curve,
            sample_lambdas: self.sample_lambdas,
        })
    }
}

/// Residual and solution filter factors `λ²/(σ²+λ²)` and `σ/(σ²+λ²)`,
/// written as compositions of monotone floating-point operations.
fn filter_factors(sigma: f64, lambda: f64) -> (f64, f64) {
    if lambda == 0.0 {
        return (0.0, 1.0 / sigma);
    }
    let q = sigma / lambda;
    let res = 1.0 / (1.0 + q * q);
    let sol = 1.0 / (sigma + lambda * (lambda / sigma));
    (res, sol)
}

/// Projects every column onto `mᵀx = 0`.
pub fn project_feasible(x: &mut DMatrix<f64>, m: &DVector<f64>) {
    let unit = m / m.norm();
    let along = unit.transpose() * &*x;
    *x -= unit * along;
}

pub fn log_grid(hi: f64, lo: f64, points: usize) -> Vec<f64> {
    if points < 2 || hi <= lo {
        return vec![hi; points.max(1)];
    }
    let (a, b) = (hi.ln(), lo.ln());
    (0..points)
        .map(|i| {
            if i == 0 {
                hi
            } else if i == points - 1 {
                lo
            } else {
                (a + (b - a) * i as f64 / (points - 1) as f64).exp()
            }
        })
        .collect()
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Rows of `g` and of an operator restricted to included electrodes.
fn included_system(matrix: &DMatrix<f64>, g: &SignalBlock) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if matrix.nrows() != g.n_electrodes() {
        return Err(Error::Dimension {
            context: "operator rows vs signal electrodes",
            expected: matrix.nrows(),
            found: g.n_electrodes(),
        });
    }
    let rows: Vec<usize> = g.included().collect();
    if rows.len() < 2 {
        return Err(Error::InvalidInput("fewer than 2 included electrodes".into()));
    }
    Ok((matrix.select_rows(&rows), g.samples.select_rows(&rows)))
}

fn all_included(g: &SignalBlock) -> bool {
    g.excluded.iter().all(|e| !e)
}

/// Zero-order Tikhonov on the epicardial operator.
pub fn tikhonov(op: &EpicardialOperator, g: &SignalBlock, params: &RegularizationParams) -> Result<InverseSolution> {
    invert_matrix(&op.matrix, None, op.heart_nodes.clone(), Domain::HeartSurface, g, params)
}

/// Tikhonov on a bare transfer matrix (e.g. one read from an operator
/// cache), constrained to `mᵀx = 0` when `constraint` is given. `nodes`
/// labels the columns.
pub fn invert_matrix(
    matrix: &DMatrix<f64>,
    constraint: Option<&DVector<f64>>,
    nodes: Vec<usize>,
    domain: Domain,
    g: &SignalBlock,
    params: &RegularizationParams,
) -> Result<InverseSolution> {
    if nodes.len() != matrix.ncols() {
        return Err(Error::Dimension {
            context: "operator columns vs node labels",
            expected: matrix.ncols(),
            found: nodes.len(),
        });
    }
    let (a, data) = included_system(matrix, g)?;
    let filter = match constraint {
        Some(m) => SvdFilter::with_constraint(&a, m)?,
        None => SvdFilter::new(&a)?,
    };
    filter.invert(&data, params)?.into_solution(nodes, domain, g)
}

/// Same as [`tikhonov`] with a precomputed decomposition of `op.matrix`.
pub fn tikhonov_with(
    filter: &SvdFilter,
    op: &EpicardialOperator,
    g: &SignalBlock,
    params: &RegularizationParams,
) -> Result<InverseSolution> {
    if !all_included(g) {
        return tikhonov(op, g, params);
    }
    let (_, data) = included_system(&op.matrix, g)?;
    filter
        .invert(&data, params)?
        .into_solution(op.heart_nodes.clone(), Domain::HeartSurface, g)
}

/// Tikhonov restricted to `mᵀf = 0` on the volumetric operator.
pub fn constrained_tikhonov(
    op: &VolumetricOperator,
    g: &SignalBlock,
    params: &RegularizationParams,
) -> Result<InverseSolution> {
    invert_matrix(
        &op.matrix,
        Some(&op.constraint),
        op.heart_nodes.clone(),
        Domain::HeartVolume,
        g,
        params,
    )
}

/// Same as [`constrained_tikhonov`] with a precomputed decomposition.
pub fn constrained_tikhonov_with(
    filter: &SvdFilter,
    op: &VolumetricOperator,
    g: &SignalBlock,
    params: &RegularizationParams,
) -> Result<InverseSolution> {
    if !all_included(g) {
        return constrained_tikhonov(op, g, params);
    }
    let (_, data) = included_system(&op.matrix, g)?;
    filter
        .invert(&data, params)?
        .into_solution(op.heart_nodes.clone(), Domain::HeartVolume, g)
}
