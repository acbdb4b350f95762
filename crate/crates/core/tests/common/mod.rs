#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use volecgi::sigproc::{add_gaussian_noise, GaussianStream, SignalBlock};

pub fn gaussian_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut g = GaussianStream::new(seed);
    DMatrix::from_fn(rows, cols, |_, _| g.next())
}

/// Matrix with orthonormal columns.
pub fn orthonormal(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    gaussian_matrix(rows, cols, seed).qr().q().columns(0, cols).into_owned()
}

/// Ill-posed constrained test problem with a smooth true solution.
pub struct SyntheticProblem {
    pub b: DMatrix<f64>,
    pub m: DVector<f64>,
    pub f_true: DMatrix<f64>,
    pub g_clean: DMatrix<f64>,
    pub g_noisy: DMatrix<f64>,
}

pub fn synthetic_problem(seed: u64) -> SyntheticProblem {
    let (rows, cols, samples) = (60, 120, 20);
    let sigma: Vec<f64> = (0..rows).map(|k| 10f64.powf(-4.0 * k as f64 / (rows - 1) as f64)).collect();
    let u = orthonormal(rows, rows, seed);
    let v = orthonormal(cols, rows, seed + 1);
    let b = &u * DMatrix::from_diagonal(&DVector::from_vec(sigma.clone())) * v.transpose();
    let mut gm = GaussianStream::new(seed + 2);
    let m = DVector::from_fn(cols, |_, _| 1.0 + 0.5 * gm.next().abs());
    let z = gaussian_matrix(rows, samples, seed + 3);
    let coeff = DMatrix::from_fn(rows, samples, |k, t| sigma[k].sqrt() * z[(k, t)]);
    let mut f_true = &v * coeff;
    volecgi::inverse::project_feasible(&mut f_true, &m);
    let g_clean = &b * &f_true;
    let block = SignalBlock::with_index_ids(g_clean.clone(), 1000.0).unwrap();
    let g_noisy = add_gaussian_noise(&block, 20.0, seed + 4).unwrap().samples;
    SyntheticProblem {
        b,
        m,
        f_true,
        g_clean,
        g_noisy,
    }
}
