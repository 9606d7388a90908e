//! Euler solvers for `dX = b(t, X) dt + sigma dW_{ell_t}` and its derivative
//! flow `d(grad_h X) = grad b(t, X) grad_h X dt`.
//!
//! The noise enters additively with a constant `sigma`, so the scheme needs
//! the driver only at grid times, and those values are exact in law.

use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::error::{check_len, invalid, Error, Result};
use crate::path::VectorPath;
use crate::stable::{sample_brownian_at_times, uniform_grid, RandomStream};
use crate::timechange::{invert, smooth, CadlagIncreasingPath, InversePath};

/// Drift `b(t, x)` with its Jacobian and a bound on `sup |grad b|`.
#[derive(Debug, Clone, PartialEq)]
pub enum DriftModel {
    Zero { dim: usize },
    /// `b(x) = A x` with `A` row-major.
    Linear { dim: usize, matrix: Vec<f64>, op_norm: f64 },
    /// `b(x) = -kappa x`.
    Ou { dim: usize, kappa: f64 },
    /// Rotation with angular speed `omega` in the coordinate pairs
    /// `(x_0, x_1), (x_2, x_3), ...`; an odd last coordinate is left at rest.
    Rotating { dim: usize, omega: f64 },
    /// `b_i(x) = -theta * atan(x_i) + shift`; bounded, with `|grad b| <= |theta|`.
    Arctan { dim: usize, theta: f64, shift: f64 },
}

fn check_dim(dim: usize) -> Result<()> {
    if dim == 0 {
        Err(invalid("dim", "dimension must be at least 1"))
    } else {
        Ok(())
    }
}

impl DriftModel {
    pub fn zero(dim: usize) -> Result<Self> {
        check_dim(dim)?;
        Ok(Self::Zero { dim })
    }

    pub fn linear(dim: usize, matrix: Vec<f64>) -> Result<Self> {
        check_dim(dim)?;
        check_len("drift matrix", dim * dim, matrix.len())?;
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(invalid("drift.matrix", "entries must be finite"));
        }
        let op_norm = operator_norm(&DMatrix::from_row_slice(dim, dim, &matrix));
        Ok(Self::Linear {
            dim,
            matrix,
            op_norm,
        })
    }

    pub fn ou(dim: usize, kappa: f64) -> Result<Self> {
        check_dim(dim)?;
        if !kappa.is_finite() {
            return Err(invalid("drift.kappa", "must be finite"));
        }
        Ok(Self::Ou { dim, kappa })
    }

    pub fn rotating(dim: usize, omega: f64) -> Result<Self> {
        check_dim(dim)?;
        if !omega.is_finite() {
            return Err(invalid("drift.omega", "must be finite"));
        }
        Ok(Self::Rotating { dim, omega })
    }

    pub fn arctan(dim: usize, theta: f64, shift: f64) -> Result<Self> {
        check_dim(dim)?;
        if !theta.is_finite() || !shift.is_finite() {
            return Err(invalid("drift.theta", "theta and shift must be finite"));
        }
        Ok(Self::Arctan { dim, theta, shift })
    }

    pub fn dim(&self) -> usize {
        match *self {
            Self::Zero { dim }
            | Self::Linear { dim, .. }
            | Self::Ou { dim, .. }
            | Self::Rotating { dim, .. }
            | Self::Arctan { dim, .. } => dim,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Zero { .. } => "zero",
            Self::Linear { .. } => "linear",
            Self::Ou { .. } => "ou",
            Self::Rotating { .. } => "rotating",
            Self::Arctan { .. } => "arctan",
        }
    }

    /// `sup_{t,x} ||grad b(t, x)||` in operator norm.
    pub fn grad_bound(&self) -> f64 {
        match *self {
            Self::Zero { .. } => 0.0,
            Self::Linear { op_norm, .. } => op_norm,
            Self::Ou { kappa, .. } => kappa.abs(),
            Self::Rotating { dim, omega } => {
                if dim >= 2 {
                    omega.abs()
                } else {
                    0.0
                }
            }
            Self::Arctan { theta, .. } => theta.abs(),
        }
    }

    pub fn eval(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        match self {
            Self::Zero { .. } => out.fill(0.0),
            Self::Linear { dim, matrix, .. } => mat_vec(*dim, matrix, x, out),
            Self::Ou { kappa, .. } => {
                for (o, xi) in out.iter_mut().zip(x) {
                    *o = -kappa * xi;
                }
            }
            Self::Rotating { dim, omega } => rotate(*dim, *omega, x, out),
            Self::Arctan { theta, shift, .. } => {
                for (o, xi) in out.iter_mut().zip(x) {
                    *o = -theta * xi.atan() + shift;
                }
            }
        }
    }

    /// `out = grad b(t, x) v`.
    pub fn jacobian_apply(&self, _t: f64, x: &[f64], v: &[f64], out: &mut [f64]) {
        match self {
            Self::Zero { .. } => out.fill(0.0),
            Self::Linear { dim, matrix, .. } => mat_vec(*dim, matrix, v, out),
            Self::Ou { kappa, .. } => {
                for (o, vi) in out.iter_mut().zip(v) {
                    *o = -kappa * vi;
                }
            }
            Self::Rotating { dim, omega } => rotate(*dim, *omega, v, out),
            Self::Arctan { theta, .. } => {
                for ((o, vi), xi) in out.iter_mut().zip(v).zip(x) {
                    *o = -theta * vi / (1.0 + xi * xi);
                }
            }
        }
    }

    /// Full Jacobian, row-major.
    pub fn jacobian(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let mut jac = vec![0.0; d * d];
        let mut e = vec![0.0; d];
        let mut col = vec![0.0; d];
        for j in 0..d {
            e.fill(0.0);
            e[j] = 1.0;
            self.jacobian_apply(t, x, &e, &mut col);
            for i in 0..d {
                jac[i * d + j] = col[i];
            }
        }
        jac
    }
}

fn mat_vec(dim: usize, m: &[f64], v: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate().take(dim) {
        *o = m[i * dim..(i + 1) * dim].iter().zip(v).map(|(a, b)| a * b).sum();
    }
}

fn rotate(dim: usize, omega: f64, v: &[f64], out: &mut [f64]) {
    let pairs = dim / 2;
    for p in 0..pairs {
        out[2 * p] = omega * v[2 * p + 1];
        out[2 * p + 1] = -omega * v[2 * p];
    }
    if dim % 2 == 1 {
        out[dim - 1] = 0.0;
    }
}

fn operator_norm(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .fold(0.0f64, |a, b| a.max(*b))
}

/// Constant invertible diffusion matrix with its inverse and `||sigma^{-1}||`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionMatrix {
    dim: usize,
    sigma: Vec<f64>,
    sigma_inv: Vec<f64>,
    inv_norm: f64,
}

impl DiffusionMatrix {
    pub fn from_row_major(dim: usize, sigma: Vec<f64>) -> Result<Self> {
        check_dim(dim)?;
        check_len("sigma", dim * dim, sigma.len())?;
        if sigma.iter().any(|v| !v.is_finite()) {
            return Err(invalid("sigma", "entries must be finite"));
        }
        let m = DMatrix::from_row_slice(dim, dim, &sigma);
        let inv = m
            .clone()
            .try_inverse()
            .filter(|inv| inv.iter().all(|v| v.is_finite()))
            .ok_or_else(|| invalid("sigma", "matrix is singular"))?;
        let inv_norm = operator_norm(&inv);
        let sigma_inv = inv.transpose().as_slice().to_vec();
        Ok(Self {
            dim,
            sigma,
            sigma_inv,
            inv_norm,
        })
    }

    pub fn identity(dim: usize) -> Result<Self> {
        check_dim(dim)?;
        let mut m = vec![0.0; dim * dim];
        for i in 0..dim {
            m[i * dim + i] = 1.0;
        }
        Self::from_row_major(dim, m)
    }

    pub fn diagonal(diag: &[f64]) -> Result<Self> {
        let dim = diag.len();
        check_dim(dim)?;
        let mut m = vec![0.0; dim * dim];
        for (i, v) in diag.iter().enumerate() {
            m[i * dim + i] = *v;
        }
        Self::from_row_major(dim, m)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn sigma_inv(&self) -> &[f64] {
        &self.sigma_inv
    }

    /// `||sigma^{-1}|| = sup_{|x|=1} |sigma^{-1} x|`.
    pub fn inv_norm(&self) -> f64 {
        self.inv_norm
    }

    pub fn apply(&self, v: &[f64], out: &mut [f64]) {
        mat_vec(self.dim, &self.sigma, v, out)
    }

    pub fn apply_inv(&self, v: &[f64], out: &mut [f64]) {
        mat_vec(self.dim, &self.sigma_inv, v, out)
    }
}

/// Solution path `X` on a grid, optionally with the derivative flow
/// `grad_h X` for the direction `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    pub grid: Vec<f64>,
    pub x: VectorPath,
    pub dx: Option<VectorPath>,
    pub h: Option<Vec<f64>>,
}

impl FlowState {
    pub fn dim(&self) -> usize {
        self.x.dim()
    }

    /// Columns `t, X_1..X_d` and, when the flow is present, `DX_1..DX_d`.
    pub fn to_csv(&self) -> String {
        let d = self.dim();
        let mut header = vec!["t".to_string()];
        header.extend((1..=d).map(|i| format!("X_{i}")));
        if self.dx.is_some() {
            header.extend((1..=d).map(|i| format!("DX_{i}")));
        }
        let mut s = header.join(",");
        s.push('\n');
        for (i, t) in self.grid.iter().enumerate() {
            let _ = write!(s, "{t}");
            for v in self.x.at(i) {
                let _ = write!(s, ",{v}");
            }
            if let Some(dx) = &self.dx {
                for v in dx.at(i) {
                    let _ = write!(s, ",{v}");
                }
            }
            s.push('\n');
        }
        s
    }
}

fn check_compatible(drift: &DriftModel, diff: &DiffusionMatrix, x0: &[f64]) -> Result<()> {
    check_len("diffusion dimension", drift.dim(), diff.dim())?;
    check_len("initial point dimension", drift.dim(), x0.len())
}

/// Explicit Euler path `X_{i+1} = X_i + b(t_i, X_i) dt + sigma (W_{i+1} - W_i)`.
pub fn euler_path(
    drift: &DriftModel,
    diff: &DiffusionMatrix,
    x0: &[f64],
    grid: &[f64],
    noise: &VectorPath,
) -> Result<VectorPath> {
    check_compatible(drift, diff, x0)?;
    check_len("noise length vs grid", grid.len(), noise.len())?;
    check_len("noise dimension", drift.dim(), noise.dim())?;
    let d = drift.dim();
    let mut out = VectorPath::with_capacity(d, grid.len());
    let mut x = x0.to_vec();
    let mut b = vec![0.0; d];
    let mut dw = vec![0.0; d];
    let mut sdw = vec![0.0; d];
    out.push(&x);
    for i in 0..grid.len().saturating_sub(1) {
        let dt = grid[i + 1] - grid[i];
        drift.eval(grid[i], &x, &mut b);
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                what: "drift evaluation",
                time: grid[i],
            });
        }
        for ((o, a), c) in dw.iter_mut().zip(noise.at(i + 1)).zip(noise.at(i)) {
            *o = a - c;
        }
        diff.apply(&dw, &mut sdw);
        for k in 0..d {
            x[k] += b[k] * dt + sdw[k];
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                what: "solution",
                time: grid[i + 1],
            });
        }
        out.push(&x);
    }
    Ok(out)
}

pub fn solve_sde_euler(
    drift: &DriftModel,
    diff: &DiffusionMatrix,
    x0: &[f64],
    grid: &[f64],
    noise: &VectorPath,
) -> Result<FlowState> {
    crate::stable::validate_grid(grid)?;
    let x = euler_path(drift, diff, x0, grid, noise)?;
    Ok(FlowState {
        grid: grid.to_vec(),
        x,
        dx: None,
        h: None,
    })
}

/// Euler steps for the derivative flow along a given solution path:
/// `DX_{i+1} = DX_i + grad b(t_i, X_i) DX_i dt`, `DX_0 = h`.
pub fn variational_path(drift: &DriftModel, grid: &[f64], x: &VectorPath, h: &[f64]) -> Result<VectorPath> {
    check_len("solution path vs grid", grid.len(), x.len())?;
    check_len("direction dimension", drift.dim(), h.len())?;
    check_len("solution dimension", drift.dim(), x.dim())?;
    let d = drift.dim();
    let mut out = VectorPath::with_capacity(d, grid.len());
    let mut v = h.to_vec();
    let mut jv = vec![0.0; d];
    out.push(&v);
    for i in 0..grid.len().saturating_sub(1) {
        let dt = grid[i + 1] - grid[i];
        drift.jacobian_apply(grid[i], x.at(i), &v, &mut jv);
        for k in 0..d {
            v[k] += jv[k] * dt;
        }
        out.push(&v);
    }
    Ok(out)
}

pub fn solve_variational(drift: &DriftModel, flow: &FlowState, h: &[f64]) -> Result<FlowState> {
    let dx = variational_path(drift, &flow.grid, &flow.x, h)?;
    Ok(FlowState {
        dx: Some(dx),
        h: Some(h.to_vec()),
        ..flow.clone()
    })
}

/// Euler solution of the time-changed equation on the `ell^eps` scale,
/// `Y_s = x + int_{ell^eps_0}^s b(gamma_r, Y_r) gamma'_r dr + sigma (W_s - W_{ell^eps_0})`,
/// so that `Y_{ell^eps_t} = X^{ell^eps}_t`.
pub fn solve_time_changed(
    drift: &DriftModel,
    diff: &DiffusionMatrix,
    gamma: &InversePath,
    w: &VectorPath,
    s_grid: &[f64],
    x0: &[f64],
) -> Result<VectorPath> {
    check_compatible(drift, diff, x0)?;
    check_len("noise length vs s-grid", s_grid.len(), w.len())?;
    check_len("noise dimension", drift.dim(), w.dim())?;
    let start = gamma.domain_start();
    match s_grid.first() {
        None => return Err(Error::InvalidGrid("s-grid is empty".into())),
        Some(&s0) if s0 < start - 1e-12 * (1.0 + start.abs()) => {
            return Err(Error::OutOfDomain(format!("s-grid starts at {s0}, below ell^eps_0 = {start}")))
        }
        _ => {}
    }
    if s_grid.windows(2).any(|p| !(p[1] > p[0])) {
        return Err(Error::InvalidGrid("s-grid is not strictly increasing".into()));
    }
    let d = drift.dim();
    let mut out = VectorPath::with_capacity(d, s_grid.len());
    let mut y = x0.to_vec();
    let mut b = vec![0.0; d];
    let mut dw = vec![0.0; d];
    let mut sdw = vec![0.0; d];
    out.push(&y);
    for j in 0..s_grid.len() - 1 {
        let ds = s_grid[j + 1] - s_grid[j];
        let s = s_grid[j].max(start);
        let t = gamma.value(s)?;
        let rate = gamma.derivative(s)?;
        drift.eval(t, &y, &mut b);
        for ((o, a), c) in dw.iter_mut().zip(w.at(j + 1)).zip(w.at(j)) {
            *o = a - c;
        }
        diff.apply(&dw, &mut sdw);
        for k in 0..d {
            y[k] += b[k] * rate * ds + sdw[k];
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                what: "time-changed solution",
                time: s_grid[j + 1],
            });
        }
        out.push(&y);
    }
    Ok(out)
}

/// Sup over a `t`-grid of `|Y_{ell^eps_t} - X^{ell^eps}_t|`, where `X^{ell^eps}`
/// solves the equation driven by `W_{ell^eps}` on the `t`-grid and `Y` solves
/// the time-changed equation on the matching `s`-grid, both on one Brownian
/// realisation read at `s_i = ell^eps_{t_i}`.
pub fn time_change_gap(
    drift: &DriftModel,
    diff: &DiffusionMatrix,
    x0: &[f64],
    ell: &CadlagIncreasingPath,
    epsilon: f64,
    steps: usize,
    stream: RandomStream,
) -> Result<f64> {
    check_compatible(drift, diff, x0)?;
    if steps < 1 {
        return Err(invalid("steps", "need at least one step"));
    }
    let smoothed = smooth(ell, epsilon)?;
    let gamma = invert(&smoothed);
    let grid = uniform_grid(ell.horizon(), steps);
    let s: Vec<f64> = grid.iter().map(|t| smoothed.value(*t)).collect();
    let w = sample_brownian_at_times(&s, drift.dim(), stream)?;
    let w0 = w.at(0).to_vec();
    let mut shifted = VectorPath::with_capacity(w.dim(), w.len());
    let mut buf = vec![0.0; w.dim()];
    for row in w.rows() {
        for (b, (a, c)) in buf.iter_mut().zip(row.iter().zip(&w0)) {
            *b = a - c;
        }
        shifted.push(&buf);
    }
    let x = euler_path(drift, diff, x0, &grid, &shifted)?;
    let y = solve_time_changed(drift, diff, &gamma, &shifted, &s, x0)?;
    Ok(x
        .rows()
        .zip(y.rows())
        .map(|(a, b)| a.iter().zip(b).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max))
        .fold(0.0, f64::max))
}
