//! Spectral Galerkin simulation of the stochastic heat equation
//! `dX = (A X + F(X)) dt + dL_t` on `(0, 1)` with Dirichlet boundary,
//! where `L_t = sum_k beta_k W^k_{S_t} e_k` is cylindrical Brownian motion
//! run on a subordinator clock.
//!
//! Everything is in coefficient space: `A e_k = -lambda_k e_k` with
//! `lambda_k = pi^2 k^2`, `e_k(z) = sqrt(2) sin(pi k z)`.
//!
//! Noise streams: sample `j` draws its clock from stream `j * MAX_MODES`
//! and mode `k` (1-based) from stream `j * MAX_MODES + k`, so every
//! truncation level sees the same noise on the modes it shares.

use std::f64::consts::{PI, SQRT_2};

use statrs::function::gamma::gamma;

use crate::bel::TestFunction;
use crate::error::{check_len, invalid, Error, Result};
use crate::parallel::try_map_indexed;
use crate::path::{norm, VectorPath};
use crate::stable::{
    sample_brownian_at_subordinated_times, uniform_grid, validate_grid, Clock, RandomStream,
    SubordinatorPath,
};
use crate::stats::{median, ols, SampleStats};

/// Stream-id stride between samples; also the largest supported truncation.
pub const MAX_MODES: u64 = 1 << 16;

/// Coefficients beyond this magnitude count as a blow-up.
pub const OVERFLOW_GUARD: f64 = 1e150;

pub fn heat_eigenvalue(k: usize) -> f64 {
    PI * PI * (k * k) as f64
}

/// `lambda_1, ..., lambda_n`.
pub fn heat_eigenvalues(n: usize) -> Result<Vec<f64>> {
    if n < 1 {
        return Err(invalid("n", "need at least one mode"));
    }
    Ok((1..=n).map(heat_eigenvalue).collect())
}

/// `e_k(z)` for `k >= 1`.
pub fn heat_eigenfunction(k: usize, z: f64) -> f64 {
    SQRT_2 * (PI * k as f64 * z).sin()
}

/// `u(z) = sum_k c_k e_k(z)` at each point of `zs`.
pub fn render(coeffs: &[f64], zs: &[f64]) -> Vec<f64> {
    zs.iter()
        .map(|z| {
            coeffs
                .iter()
                .enumerate()
                .map(|(i, c)| c * heat_eigenfunction(i + 1, *z))
                .sum()
        })
        .collect()
}

/// How a noise increment over `[t_i, t_{i+1}]` enters the recursion
/// `Z_{i+1} = e^{-lambda dt} Z_i + g beta dW_i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConvolutionScheme {
    /// Kernel read at the left end: `g = e^{-lambda dt}`.
    LeftPoint,
    /// Increment added undamped: `g = 1`.
    RightPoint,
    /// `g = sqrt((1 - e^{-2 lambda dt}) / (2 lambda dt))`, the root-mean-square
    /// of the kernel over the step. Exact conditional variance for the
    /// Brownian clock at any step size, and stable for stiff modes.
    #[default]
    ExponentialMatched,
}

impl ConvolutionScheme {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::LeftPoint => "left-point",
            Self::RightPoint => "right-point",
            Self::ExponentialMatched => "exponential-matched",
        }
    }

    /// `(decay, gain)` for one step.
    pub fn factors(&self, lambda: f64, dt: f64) -> (f64, f64) {
        let z = lambda * dt;
        let d = (-z).exp();
        let g = match self {
            Self::LeftPoint => d,
            Self::RightPoint => 1.0,
            Self::ExponentialMatched => {
                if z < 1e-8 {
                    1.0 - 0.5 * z
                } else {
                    (-(-2.0 * z).exp_m1() / (2.0 * z)).sqrt()
                }
            }
        };
        (d, g)
    }
}

impl std::str::FromStr for ConvolutionScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "left-point" => Ok(Self::LeftPoint),
            "right-point" => Ok(Self::RightPoint),
            "exponential-matched" => Ok(Self::ExponentialMatched),
            other => Err(Error::Parse(format!("unknown convolution scheme `{other}`"))),
        }
    }
}

/// `phi_1(z) = (1 - e^{-z}) / z`, with `phi_1(0) = 1`.
pub fn phi1(z: f64) -> f64 {
    if z.abs() < 1e-12 {
        1.0 - 0.5 * z
    } else {
        -(-z).exp_m1() / z
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralModel {
    lambdas: Vec<f64>,
    betas: Vec<f64>,
    delta: f64,
    pub clock: Clock,
    pub scheme: ConvolutionScheme,
}

impl SpectralModel {
    /// Noise intensities may be zero (then `delta = 0` and the gradient
    /// bounds degenerate, but the dynamics are well defined).
    pub fn new(lambdas: Vec<f64>, betas: Vec<f64>, clock: Clock) -> Result<Self> {
        if lambdas.is_empty() {
            return Err(invalid("lambdas", "need at least one mode"));
        }
        check_len("betas", lambdas.len(), betas.len())?;
        if lambdas.len() as u64 >= MAX_MODES {
            return Err(invalid("n", format!("at most {} modes are supported", MAX_MODES - 1)));
        }
        if lambdas.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(invalid("lambdas", "eigenvalues must be positive and finite"));
        }
        if lambdas.windows(2).any(|w| w[1] < w[0]) {
            return Err(invalid("lambdas", "eigenvalues must be nondecreasing"));
        }
        if betas.iter().any(|b| !(*b >= 0.0 && b.is_finite())) {
            return Err(invalid("betas", "noise intensities must be finite and nonnegative"));
        }
        let delta = betas.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(Self {
            lambdas,
            betas,
            delta,
            clock,
            scheme: ConvolutionScheme::default(),
        })
    }

    /// Heat spectrum with `n` modes and the same intensity on every mode.
    pub fn heat(n: usize, beta: f64, clock: Clock) -> Result<Self> {
        Self::new(heat_eigenvalues(n)?, vec![beta; n], clock)
    }

    pub fn with_scheme(mut self, scheme: ConvolutionScheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn n(&self) -> usize {
        self.lambdas.len()
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// `sum_k beta_k^2 / lambda_k`.
    pub fn trace_ratio(&self) -> f64 {
        self.betas.iter().zip(&self.lambdas).map(|(b, l)| b * b / l).sum()
    }

    /// The first `n` modes.
    pub fn truncate(&self, n: usize) -> Result<Self> {
        if n < 1 || n > self.n() {
            return Err(invalid("n", format!("truncation {n} outside 1..={}", self.n())));
        }
        let mut m = Self::new(self.lambdas[..n].to_vec(), self.betas[..n].to_vec(), self.clock)?;
        m.scheme = self.scheme;
        Ok(m)
    }

    /// Same model with every `beta_k` multiplied by `factor`.
    pub fn scale_betas(&self, factor: f64) -> Result<Self> {
        let mut m = Self::new(
            self.lambdas.clone(),
            self.betas.iter().map(|b| b * factor).collect(),
            self.clock,
        )?;
        m.scheme = self.scheme;
        Ok(m)
    }
}

/// Nonlinearity `F` acting on coefficient vectors.
#[derive(Debug, Clone, PartialEq)]
pub enum NonlinearityF {
    Zero,
    /// Constant forcing; coordinates beyond the vector are zero.
    Constant(Vec<f64>),
    /// `F_k(x) = scale * atan(x_k)` for `k < modes`, zero above.
    ScaledArctan { scale: f64, modes: usize },
}

impl NonlinearityF {
    pub fn scaled_arctan(scale: f64) -> Self {
        Self::ScaledArctan {
            scale,
            modes: usize::MAX,
        }
    }

    pub fn eval(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Self::Zero => out.fill(0.0),
            Self::Constant(c) => {
                for (i, o) in out.iter_mut().enumerate() {
                    *o = c.get(i).copied().unwrap_or(0.0);
                }
            }
            Self::ScaledArctan { scale, modes } => {
                for (i, (o, v)) in out.iter_mut().zip(x).enumerate() {
                    *o = if i < *modes { scale * v.atan() } else { 0.0 };
                }
            }
        }
    }

    pub fn lip_bound(&self) -> f64 {
        match self {
            Self::Zero | Self::Constant(_) => 0.0,
            Self::ScaledArctan { scale, .. } => scale.abs(),
        }
    }

    /// `sup |F(x)|` over coefficient vectors of length `n`.
    pub fn sup_bound(&self, n: usize) -> f64 {
        match self {
            Self::Zero => 0.0,
            Self::Constant(c) => norm(&c[..c.len().min(n)]),
            Self::ScaledArctan { scale, modes } => {
                scale.abs() * std::f64::consts::FRAC_PI_2 * (n.min(*modes) as f64).sqrt()
            }
        }
    }

    fn is_zero(&self) -> bool {
        match self {
            Self::Zero => true,
            Self::Constant(c) => c.iter().all(|v| *v == 0.0),
            Self::ScaledArctan { scale, modes } => *scale == 0.0 || *modes == 0,
        }
    }
}

/// Clock increments and per-mode Brownian increments on a time grid.
/// `dw.at(i)` holds `W^k_{S_{t_{i+1}}} - W^k_{S_{t_i}}` for every mode.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeIncrements {
    pub grid: Vec<f64>,
    pub ds: Vec<f64>,
    pub dw: VectorPath,
}

impl ModeIncrements {
    pub fn n_modes(&self) -> usize {
        self.dw.dim()
    }

    pub fn steps(&self) -> usize {
        self.ds.len()
    }

    /// All-zero noise, for deterministic runs.
    pub fn zero(grid: &[f64], n_modes: usize) -> Result<Self> {
        validate_grid(grid)?;
        let steps = grid.len() - 1;
        Ok(Self {
            grid: grid.to_vec(),
            ds: vec![0.0; steps],
            dw: VectorPath::zeros(n_modes, steps),
        })
    }

    /// Built from a clock path and Brownian values read on it, one column per mode.
    pub fn from_paths(clock: &SubordinatorPath, w: &VectorPath) -> Result<Self> {
        check_len("noise vs clock", clock.len(), w.len())?;
        let n = w.dim();
        let mut dw = VectorPath::with_capacity(n, clock.len().saturating_sub(1));
        let mut buf = vec![0.0; n];
        for i in 0..clock.len().saturating_sub(1) {
            for (k, b) in buf.iter_mut().enumerate() {
                *b = w.at(i + 1)[k] - w.at(i)[k];
            }
            dw.push(&buf);
        }
        Ok(Self {
            grid: clock.grid().to_vec(),
            ds: clock.increments().collect(),
            dw,
        })
    }
}

pub fn mode_stream(seed: u64, sample: usize, k: usize) -> RandomStream {
    RandomStream::new(seed, sample as u64 * MAX_MODES + k as u64)
}

/// Noise for sample `sample` on the first `n_modes` modes.
pub fn sample_mode_increments(
    clock: Clock,
    grid: &[f64],
    n_modes: usize,
    seed: u64,
    sample: usize,
) -> Result<ModeIncrements> {
    if n_modes < 1 || n_modes as u64 >= MAX_MODES {
        return Err(invalid("n", format!("{n_modes} modes outside 1..{MAX_MODES}")));
    }
    let path = clock.sample_path(grid, mode_stream(seed, sample, 0))?;
    let steps = grid.len() - 1;
    let mut flat = vec![0.0; steps * n_modes];
    for k in 0..n_modes {
        let w = sample_brownian_at_subordinated_times(&path, 1, mode_stream(seed, sample, k + 1))?;
        let w = w.as_flat();
        for i in 0..steps {
            flat[i * n_modes + k] = w[i + 1] - w[i];
        }
    }
    Ok(ModeIncrements {
        grid: grid.to_vec(),
        ds: path.increments().collect(),
        dw: VectorPath::from_flat(n_modes, flat),
    })
}

/// Per-step `(decay, gain)` factors, recomputed only when the step size moves.
struct StepFactors {
    dt: f64,
    decay: Vec<f64>,
    gain: Vec<f64>,
    phi_dt: Vec<f64>,
}

impl StepFactors {
    fn new(n: usize) -> Self {
        Self {
            dt: f64::NAN,
            decay: vec![0.0; n],
            gain: vec![0.0; n],
            phi_dt: vec![0.0; n],
        }
    }

    fn update(&mut self, model: &SpectralModel, dt: f64) {
        if (dt - self.dt).abs() <= 1e-12 * dt {
            return;
        }
        self.dt = dt;
        for k in 0..self.decay.len() {
            let (d, g) = model.scheme.factors(model.lambdas[k], dt);
            self.decay[k] = d;
            self.gain[k] = g * model.betas[k];
            self.phi_dt[k] = phi1(model.lambdas[k] * dt) * dt;
        }
    }
}

fn check_noise(model: &SpectralModel, noise: &ModeIncrements) -> Result<()> {
    if noise.n_modes() < model.n() {
        return Err(invalid(
            "noise",
            format!("{} noise modes for a {}-mode model", noise.n_modes(), model.n()),
        ));
    }
    check_len("noise steps vs grid", noise.grid.len().saturating_sub(1), noise.steps())?;
    check_len("clock steps vs noise", noise.ds.len(), noise.dw.len())?;
    validate_grid(&noise.grid)
}

/// `Z^A` on the whole grid; uses the first `model.n()` noise modes.
pub fn convolution_path(model: &SpectralModel, noise: &ModeIncrements) -> Result<VectorPath> {
    check_noise(model, noise)?;
    let n = model.n();
    let mut f = StepFactors::new(n);
    let mut z = vec![0.0; n];
    let mut out = VectorPath::with_capacity(n, noise.grid.len());
    out.push(&z);
    for i in 0..noise.steps() {
        f.update(model, noise.grid[i + 1] - noise.grid[i]);
        let dw = noise.dw.at(i);
        for k in 0..n {
            z[k] = f.decay[k] * z[k] + f.gain[k] * dw[k];
        }
        out.push(&z);
    }
    Ok(out)
}

/// `Z^A_t` at the last grid point.
pub fn sample_stochastic_convolution(model: &SpectralModel, noise: &ModeIncrements) -> Result<Vec<f64>> {
    Ok(convolution_path(model, noise)?
        .last()
        .expect("grid has at least one point")
        .to_vec())
}

/// Variance of each coordinate of `Z^A_t` given the clock, for the same scheme.
pub fn conditional_variance(model: &SpectralModel, noise: &ModeIncrements) -> Result<Vec<f64>> {
    check_noise(model, noise)?;
    let n = model.n();
    let mut f = StepFactors::new(n);
    let mut v = vec![0.0; n];
    for i in 0..noise.steps() {
        f.update(model, noise.grid[i + 1] - noise.grid[i]);
        let ds = noise.ds[i];
        for k in 0..n {
            v[k] = f.decay[k] * f.decay[k] * v[k] + f.gain[k] * f.gain[k] * ds;
        }
    }
    Ok(v)
}

/// `A_p = E |xi|^p = 2^{p/2} Gamma((p + 1) / 2) / sqrt(pi)` for standard normal `xi`.
pub fn gaussian_pth_moment(p: f64) -> Result<f64> {
    if !(p > 0.0 && p.is_finite()) {
        return Err(invalid("p", format!("{p} must be positive")));
    }
    let a = (p + 1.0) / 2.0;
    let twice = 2.0 * a;
    // for integer or half-integer arguments use the recurrence, so the
    // sqrt(pi) cancels exactly (A_2 = 1, A_1 = sqrt(2 / pi))
    if twice.fract() == 0.0 && a <= 100.0 {
        let mut prod = 1.0;
        let mut x = if a.fract() == 0.0 { 1.0 } else { 0.5 };
        while x < a {
            prod *= x;
            x += 1.0;
        }
        let root_pi = if a.fract() == 0.0 { PI.sqrt() } else { 1.0 };
        return Ok(2f64.powf(p / 2.0) * prod / root_pi);
    }
    Ok(2f64.powf(p / 2.0) * gamma(a) / PI.sqrt())
}

/// Monte Carlo `E |sum_k c_k xi_k|^p` with independent standard normals.
pub fn gaussian_moment_mc(coeffs: &[f64], p: f64, n: usize, seed: u64) -> Result<SampleStats> {
    use rand::Rng;
    use rand_distr::StandardNormal;
    gaussian_pth_moment(p)?;
    if n < 2 {
        return Err(invalid("n", "need at least two samples"));
    }
    const CHUNK: usize = 1 << 14;
    let chunks = n.div_ceil(CHUNK);
    let parts = try_map_indexed(chunks, |c| -> Result<Vec<f64>> {
        let mut rng = RandomStream::new(seed, c as u64).rng();
        let len = CHUNK.min(n - c * CHUNK);
        Ok((0..len)
            .map(|_| {
                let s: f64 = coeffs
                    .iter()
                    .map(|c| c * rng.sample::<f64, _>(StandardNormal))
                    .sum();
                s.abs().powf(p)
            })
            .collect())
    })?;
    Ok(SampleStats::from_slice(&parts.concat()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentPoint {
    pub t: f64,
    pub mean: f64,
    pub std_err: f64,
    /// `C (sum beta^2 / lambda)^{alpha/2} t^{1 - alpha/2}` with the fitted `C`.
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentReport {
    pub p: f64,
    pub alpha: f64,
    pub trace_ratio: f64,
    pub points: Vec<MomentPoint>,
    /// `C` fitted so the bound is tight at the smallest `t`.
    pub fitted_c: f64,
    pub slack: f64,
    /// Log-log slope of the moment against `t`.
    pub slope: f64,
    /// Whether `mean <= slack * bound` at every `t`.
    pub bound_holds: bool,
}

/// Grid index closest to `t` on a uniform grid of step `dt`.
fn nearest_index(t: f64, dt: f64, steps: usize) -> usize {
    ((t / dt).round() as usize).min(steps)
}

/// Monte Carlo `E ||Z^A_t||^p` on `t_grid`, checked against the power-law
/// envelope with `C` fitted at the smallest `t`. All horizons are read off one
/// simulation per sample on a uniform grid of step about `dt`.
pub fn convolution_moment_check(
    model: &SpectralModel,
    p: f64,
    t_grid: &[f64],
    n_samples: usize,
    dt: f64,
    seed: u64,
    slack: f64,
) -> Result<MomentReport> {
    let alpha = model.clock.alpha();
    if !(p > 0.0 && p < alpha) {
        return Err(invalid("p", format!("{p} must lie in (0, alpha = {alpha})")));
    }
    if t_grid.is_empty() || t_grid.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
        return Err(invalid("t_grid", "need positive horizons"));
    }
    if n_samples < 2 {
        return Err(invalid("n_samples", "need at least two samples"));
    }
    if !(dt > 0.0) {
        return Err(invalid("dt", "step must be positive"));
    }
    let mut ts = t_grid.to_vec();
    ts.sort_by(f64::total_cmp);
    let t_max = *ts.last().expect("non-empty");
    let steps = (t_max / dt).ceil().max(1.0) as usize;
    let grid = uniform_grid(t_max, steps);
    let h = t_max / steps as f64;
    let idx: Vec<usize> = ts.iter().map(|t| nearest_index(*t, h, steps).max(1)).collect();
    let norms = try_map_indexed(n_samples, |j| -> Result<Vec<f64>> {
        let noise = sample_mode_increments(model.clock, &grid, model.n(), seed, j)?;
        let z = convolution_path(model, &noise)?;
        Ok(idx.iter().map(|&i| norm(z.at(i)).powf(p)).collect())
    })?;
    let trace = model.trace_ratio();
    let shape = |t: f64| trace.powf(alpha / 2.0) * t.powf(1.0 - alpha / 2.0);
    let mut points = Vec::with_capacity(idx.len());
    for (col, &i) in idx.iter().enumerate() {
        let xs: Vec<f64> = norms.iter().map(|r| r[col]).collect();
        let st = SampleStats::from_slice(&xs);
        points.push(MomentPoint {
            t: grid[i],
            mean: st.mean,
            std_err: st.std_err,
            bound: 0.0,
        });
    }
    let fitted_c = points[0].mean / shape(points[0].t);
    for pt in &mut points {
        pt.bound = fitted_c * shape(pt.t);
    }
    let bound_holds = points.iter().all(|pt| pt.mean <= slack * pt.bound);
    let slope = if points.len() >= 2 && points.iter().all(|p| p.mean > 0.0) {
        let x: Vec<f64> = points.iter().map(|p| p.t.ln()).collect();
        let y: Vec<f64> = points.iter().map(|p| p.mean.ln()).collect();
        ols(&x, &y)?.slope
    } else {
        f64::NAN
    };
    Ok(MomentReport {
        p,
        alpha,
        trace_ratio: trace,
        points,
        fitted_c,
        slack,
        slope,
        bound_holds,
    })
}

/// Path of the Galerkin mild solution, split as `X = Y + Z` where `Z` is the
/// stochastic convolution and `Y` carries the initial datum and `F`.
#[derive(Debug, Clone, PartialEq)]
pub struct GalerkinState {
    pub grid: Vec<f64>,
    pub coeffs: VectorPath,
    pub drift_part: VectorPath,
    pub noise_part: VectorPath,
}

impl GalerkinState {
    pub fn terminal(&self) -> &[f64] {
        self.coeffs.last().expect("non-empty state")
    }
}

fn check_start(model: &SpectralModel, x: &[f64]) -> Result<()> {
    check_len("initial coefficients", model.n(), x.len())?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(invalid("x", "initial coefficients must be finite"));
    }
    Ok(())
}

/// Exponential Euler for the truncated mild equation:
/// `Y_{i+1} = e^{-lambda dt} Y_i + phi_1(lambda dt) dt F(Y_i + Z_i)` and
/// `Z_{i+1} = e^{-lambda dt} Z_i + g beta dW_i`.
pub fn solve_mild_galerkin(
    model: &SpectralModel,
    f: &NonlinearityF,
    x: &[f64],
    noise: &ModeIncrements,
) -> Result<GalerkinState> {
    check_start(model, x)?;
    let z_path = convolution_path(model, noise)?;
    let n = model.n();
    let mut fac = StepFactors::new(n);
    let mut y = x.to_vec();
    let mut state = vec![0.0; n];
    let mut fx = vec![0.0; n];
    let zero_f = f.is_zero();
    let mut drift_part = VectorPath::with_capacity(n, noise.grid.len());
    let mut coeffs = VectorPath::with_capacity(n, noise.grid.len());
    drift_part.push(&y);
    for (s, (a, b)) in state.iter_mut().zip(y.iter().zip(z_path.at(0))) {
        *s = a + b;
    }
    coeffs.push(&state);
    for i in 0..noise.steps() {
        fac.update(model, noise.grid[i + 1] - noise.grid[i]);
        if !zero_f {
            f.eval(&state, &mut fx);
        }
        for k in 0..n {
            y[k] = fac.decay[k] * y[k] + if zero_f { 0.0 } else { fac.phi_dt[k] * fx[k] };
        }
        let z = z_path.at(i + 1);
        for k in 0..n {
            state[k] = y[k] + z[k];
        }
        if state.iter().any(|v| !(v.abs() <= OVERFLOW_GUARD)) {
            return Err(Error::Divergence {
                what: "Galerkin coefficients",
                time: noise.grid[i + 1],
            });
        }
        drift_part.push(&y);
        coeffs.push(&state);
    }
    Ok(GalerkinState {
        grid: noise.grid.clone(),
        coeffs,
        drift_part,
        noise_part: z_path,
    })
}

/// Terminal coefficients only; same arithmetic as [`solve_mild_galerkin`].
pub fn solve_mild_terminal(
    model: &SpectralModel,
    f: &NonlinearityF,
    x: &[f64],
    noise: &ModeIncrements,
) -> Result<Vec<f64>> {
    check_start(model, x)?;
    check_noise(model, noise)?;
    let n = model.n();
    let mut fac = StepFactors::new(n);
    let mut y = x.to_vec();
    let mut z = vec![0.0; n];
    let mut state = x.to_vec();
    let mut fx = vec![0.0; n];
    let zero_f = f.is_zero();
    for i in 0..noise.steps() {
        fac.update(model, noise.grid[i + 1] - noise.grid[i]);
        if !zero_f {
            f.eval(&state, &mut fx);
        }
        let dw = noise.dw.at(i);
        for k in 0..n {
            y[k] = fac.decay[k] * y[k] + if zero_f { 0.0 } else { fac.phi_dt[k] * fx[k] };
            z[k] = fac.decay[k] * z[k] + fac.gain[k] * dw[k];
            state[k] = y[k] + z[k];
        }
        if state.iter().any(|v| !(v.abs() <= OVERFLOW_GUARD)) {
            return Err(Error::Divergence {
                what: "Galerkin coefficients",
                time: noise.grid[i + 1],
            });
        }
    }
    Ok(state)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapReport {
    pub t: f64,
    pub distance: f64,
    /// `|E f(X_t(x)) - E f(X_t(y))|` under common noise.
    pub gap: f64,
    pub std_err: f64,
    /// `gap / (e^{Lip(F) t} t^{-1/alpha} ||f||_inf ||x - y||)`.
    pub effective_constant: f64,
}

pub fn strong_feller_gap(
    model: &SpectralModel,
    nonlin: &NonlinearityF,
    f: &TestFunction,
    x: &[f64],
    y: &[f64],
    t: f64,
    steps: usize,
    n_samples: usize,
    seed: u64,
) -> Result<GapReport> {
    let sup = f
        .sup_bound()
        .ok_or_else(|| invalid("f", format!("{} has no finite sup bound", f.name())))?;
    check_start(model, x)?;
    check_start(model, y)?;
    if !(t > 0.0 && t.is_finite()) {
        return Err(invalid("t", format!("{t} must be positive")));
    }
    if steps < 1 || n_samples < 1 {
        return Err(invalid("n_samples", "need at least one step and one sample"));
    }
    let grid = uniform_grid(t, steps);
    let diffs = try_map_indexed(n_samples, |j| -> Result<f64> {
        let noise = sample_mode_increments(model.clock, &grid, model.n(), seed, j)?;
        let xt = solve_mild_terminal(model, nonlin, x, &noise)?;
        let yt = solve_mild_terminal(model, nonlin, y, &noise)?;
        Ok(f.eval(&xt) - f.eval(&yt))
    })?;
    let st = SampleStats::from_slice(&diffs);
    let distance = norm(&x.iter().zip(y).map(|(a, b)| a - b).collect::<Vec<_>>());
    let scale = (nonlin.lip_bound() * t).exp() * t.powf(-1.0 / model.clock.alpha()) * sup * distance;
    let gap = st.mean.abs();
    let effective_constant = if scale > 0.0 { gap / scale } else { 0.0 };
    Ok(GapReport {
        t,
        distance,
        gap,
        std_err: st.std_err,
        effective_constant,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GalerkinReport {
    pub levels: Vec<usize>,
    /// `deviations[j][s] = ||X^{n_{j+1}}_t - X^{n_j}_t||` for sample `s`.
    pub deviations: Vec<Vec<f64>>,
    pub medians: Vec<f64>,
    /// Medians strictly decrease from one level pair to the next.
    pub monotone: bool,
    /// `C` fitted so that `median_j <= C (sum_{k > n_j} beta_k^2 / lambda_k)^{1/2}`.
    pub envelope_c: f64,
}

/// Cauchy deviations between successive truncations on shared noise. The
/// initial datum `x` is given in the largest truncation and projected.
pub fn galerkin_convergence_check(
    model: &SpectralModel,
    levels: &[usize],
    nonlin: &NonlinearityF,
    x: &[f64],
    t: f64,
    steps: usize,
    n_samples: usize,
    seed: u64,
) -> Result<GalerkinReport> {
    if levels.len() < 2 {
        return Err(Error::InsufficientData("need at least two truncation levels".into()));
    }
    if levels.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("levels", "truncation levels must increase"));
    }
    let n_max = *levels.last().expect("non-empty");
    let full = model.truncate(n_max)?;
    check_start(&full, x)?;
    if !(t > 0.0 && t.is_finite()) || steps < 1 || n_samples < 1 {
        return Err(invalid("t", "need a positive horizon, steps and samples"));
    }
    let models = levels.iter().map(|&n| full.truncate(n)).collect::<Result<Vec<_>>>()?;
    let grid = uniform_grid(t, steps);
    let per_sample = try_map_indexed(n_samples, |j| -> Result<Vec<f64>> {
        let noise = sample_mode_increments(full.clock, &grid, n_max, seed, j)?;
        let terminals = models
            .iter()
            .map(|m| solve_mild_terminal(m, nonlin, &x[..m.n()], &noise))
            .collect::<Result<Vec<_>>>()?;
        Ok(terminals
            .windows(2)
            .map(|w| {
                let (lo, hi) = (&w[0], &w[1]);
                hi.iter()
                    .enumerate()
                    .map(|(k, v)| (v - lo.get(k).copied().unwrap_or(0.0)).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect())
    })?;
    let pairs = levels.len() - 1;
    let deviations: Vec<Vec<f64>> = (0..pairs)
        .map(|p| per_sample.iter().map(|r| r[p]).collect())
        .collect();
    let medians: Vec<f64> = deviations.iter().map(|d| median(d)).collect();
    let monotone = medians.windows(2).all(|w| w[1] < w[0]);
    let tails: Vec<f64> = levels[..pairs]
        .iter()
        .map(|&n| {
            full.betas()[n..]
                .iter()
                .zip(&full.lambdas()[n..])
                .map(|(b, l)| b * b / l)
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let envelope_c = medians
        .iter()
        .zip(&tails)
        .filter(|(_, t)| **t > 0.0)
        .map(|(m, t)| m / t)
        .fold(0.0, f64::max);
    Ok(GalerkinReport {
        levels: levels.to_vec(),
        deviations,
        medians,
        monotone,
        envelope_c,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stable::StableParams;
    use statrs::distribution::{ContinuousCDF, Normal};

    fn stable(alpha: f64) -> Clock {
        Clock::Stable(StableParams::new(alpha).unwrap())
    }

    #[test]
    fn heat_spectrum_values() {
        assert!((heat_eigenvalues(1).unwrap()[0] - 9.869604401089358).abs() < 1e-12);
        assert!((heat_eigenfunction(1, 0.5) - SQRT_2).abs() < 1e-15);
        assert!(heat_eigenvalues(0).is_err());
    }

    #[test]
    fn eigenfunctions_are_orthonormal() {
        let n = 6;
        let m = 10 * n * 4;
        let h = 1.0 / m as f64;
        for k in 1..=n {
            for j in 1..=n {
                let s: f64 = (0..m)
                    .map(|i| {
                        let z = (i as f64 + 0.5) * h;
                        heat_eigenfunction(k, z) * heat_eigenfunction(j, z)
                    })
                    .sum::<f64>()
                    * h;
                let want = if k == j { 1.0 } else { 0.0 };
                assert!((s - want).abs() < 1e-8, "({k},{j}) -> {s}");
            }
        }
    }

    #[test]
    fn render_single_mode() {
        let u = render(&[2.0], &[0.25, 0.5]);
        assert!((u[1] - 2.0 * SQRT_2).abs() < 1e-14);
    }

    #[test]
    fn zero_intensity_gives_zero_convolution() {
        let m = SpectralModel::heat(5, 0.0, stable(1.5)).unwrap();
        let grid = uniform_grid(1.0, 100);
        let noise = sample_mode_increments(m.clock, &grid, 5, 1, 0).unwrap();
        assert!(sample_stochastic_convolution(&m, &noise).unwrap().iter().all(|v| *v == 0.0));
        assert_eq!(m.delta(), 0.0);
    }

    #[test]
    fn brownian_coordinate_variance() {
        let m = SpectralModel::new(vec![PI * PI], vec![1.0], Clock::Identity).unwrap();
        let grid = uniform_grid(1.0, 100);
        let xs = try_map_indexed(100_000, |j| -> Result<f64> {
            let noise = sample_mode_increments(m.clock, &grid, 1, 5, j)?;
            Ok(sample_stochastic_convolution(&m, &noise)?[0].powi(2))
        })
        .unwrap();
        let st = SampleStats::from_slice(&xs);
        let want = -(-2.0 * PI * PI).exp_m1() / (2.0 * PI * PI);
        assert!((want - 0.050660).abs() < 1e-6);
        assert!(st.z_against(want).abs() < 3.0, "{st:?} vs {want}");
    }

    #[test]
    fn matched_scheme_variance_is_exact_for_brownian_clock() {
        let m = SpectralModel::new(vec![50.0], vec![2.0], Clock::Identity).unwrap();
        let grid = uniform_grid(1.0, 7);
        let noise = ModeIncrements::from_paths(
            &SubordinatorPath::identity(grid.clone()).unwrap(),
            &VectorPath::zeros(1, grid.len()),
        )
        .unwrap();
        let v = conditional_variance(&m, &noise).unwrap()[0];
        let want = 4.0 * -(-100.0f64).exp_m1() / 100.0;
        assert!((v - want).abs() < 1e-14 * want);
    }

    fn anderson_darling(mut z: Vec<f64>) -> f64 {
        let nd = Normal::standard();
        z.sort_by(f64::total_cmp);
        let n = z.len();
        let s: f64 = (0..n)
            .map(|i| {
                let a = nd.cdf(z[i]).max(1e-300).ln();
                let b = (1.0 - nd.cdf(z[n - 1 - i])).max(1e-300).ln();
                (2 * i + 1) as f64 * (a + b)
            })
            .sum();
        -(n as f64) - s / n as f64
    }

    #[test]
    fn conditional_gaussianity_given_the_clock() {
        let m = SpectralModel::heat(3, 1.0, stable(1.2)).unwrap();
        let grid = uniform_grid(0.5, 50);
        let rows = try_map_indexed(10_000, |j| -> Result<(Vec<f64>, Vec<f64>)> {
            let noise = sample_mode_increments(m.clock, &grid, 3, 9, j)?;
            Ok((
                sample_stochastic_convolution(&m, &noise)?,
                conditional_variance(&m, &noise)?,
            ))
        })
        .unwrap();
        for k in 0..3 {
            let z: Vec<f64> = rows.iter().map(|(x, v)| x[k] / v[k].sqrt()).collect();
            // 1% critical value for a fully specified normal
            assert!(anderson_darling(z) < 3.857, "mode {k}");
        }
    }

    #[test]
    fn conditional_variance_within_clock_bins() {
        let m = SpectralModel::new(vec![PI * PI], vec![1.0], stable(1.5)).unwrap();
        let grid = uniform_grid(1.0, 40);
        let rows = try_map_indexed(40_000, |j| -> Result<(f64, f64)> {
            let noise = sample_mode_increments(m.clock, &grid, 1, 21, j)?;
            Ok((sample_stochastic_convolution(&m, &noise)?[0], conditional_variance(&m, &noise)?[0]))
        })
        .unwrap();
        let mut vs: Vec<f64> = rows.iter().map(|r| r.1).collect();
        vs.sort_by(f64::total_cmp);
        let edges = [0.0, vs[10_000], vs[20_000], vs[30_000], f64::INFINITY];
        for b in 0..4 {
            let bin: Vec<&(f64, f64)> = rows.iter().filter(|r| r.1 >= edges[b] && r.1 < edges[b + 1]).collect();
            // E[Z^2 - v | clock] = 0; compare on the standardized scale
            let ratio: Vec<f64> = bin.iter().map(|r| r.0 * r.0 / r.1).collect();
            let st = SampleStats::from_slice(&ratio);
            assert!(st.z_against(1.0).abs() < 3.0, "bin {b}: {st:?}");
        }
    }

    #[test]
    fn gaussian_moment_values() {
        assert_eq!(gaussian_pth_moment(2.0).unwrap(), 1.0);
        assert!((gaussian_pth_moment(4.0).unwrap() - 3.0).abs() < 1e-14);
        let general = gaussian_pth_moment(1.3).unwrap();
        let oracle = 2f64.powf(0.65) * gamma(1.15) / PI.sqrt();
        assert!((general - oracle).abs() < 1e-14);
        assert!((gaussian_pth_moment(1.0).unwrap() - (2.0 / PI).sqrt()).abs() < 1e-14);
        assert!(gaussian_pth_moment(0.0).is_err());
        let st = gaussian_moment_mc(&[3.0, 4.0], 1.0, 200_000, 3).unwrap();
        assert!(st.z_against(5.0 * (2.0 / PI).sqrt()).abs() < 3.0);
    }

    #[test]
    fn semigroup_only() {
        let m = SpectralModel::heat(3, 1.0, Clock::Identity).unwrap();
        let grid = uniform_grid(0.3, 30);
        let noise = ModeIncrements::zero(&grid, 3).unwrap();
        let x = [1.0, -2.0, 0.5];
        let s = solve_mild_galerkin(&m, &NonlinearityF::Zero, &x, &noise).unwrap();
        for k in 0..3 {
            let want = (-m.lambdas()[k] * 0.3).exp() * x[k];
            assert!((s.terminal()[k] - want).abs() < 1e-12 * (1.0 + want.abs()));
        }
    }

    #[test]
    fn constant_forcing_matches_linear_ode() {
        let lam = PI * PI;
        let m = SpectralModel::new(vec![lam], vec![1.0], Clock::Identity).unwrap();
        let grid = uniform_grid(1.0, 10_000);
        let noise = ModeIncrements::zero(&grid, 1).unwrap();
        let c = 3.0;
        let x = 0.7;
        let s = solve_mild_terminal(&m, &NonlinearityF::Constant(vec![c]), &[x], &noise).unwrap();
        let e = (-lam).exp();
        let want = (1.0 - e) * c / lam + e * x;
        assert!((s[0] - want).abs() < 1e-6);
    }

    #[test]
    fn zero_nonlinearity_reproduces_convolution_bitwise() {
        let m = SpectralModel::heat(4, 0.7, stable(1.3)).unwrap();
        let grid = uniform_grid(1.0, 200);
        let noise = sample_mode_increments(m.clock, &grid, 4, 2, 3).unwrap();
        let x = [0.1, 0.2, 0.3, 0.4];
        let s = solve_mild_galerkin(&m, &NonlinearityF::Zero, &x, &noise).unwrap();
        let z = convolution_path(&m, &noise).unwrap();
        assert_eq!(s.noise_part, z);
        let t = solve_mild_terminal(&m, &NonlinearityF::Zero, &x, &noise).unwrap();
        assert_eq!(t.as_slice(), s.terminal());
        // with a zero start the solution is the convolution itself
        let s0 = solve_mild_galerkin(&m, &NonlinearityF::Zero, &[0.0; 4], &noise).unwrap();
        assert_eq!(s0.coeffs, z);
    }

    #[test]
    fn full_and_terminal_solvers_agree_with_nonlinearity() {
        let m = SpectralModel::heat(5, 1.0, stable(1.5)).unwrap();
        let grid = uniform_grid(0.5, 100);
        let noise = sample_mode_increments(m.clock, &grid, 5, 2, 0).unwrap();
        let f = NonlinearityF::scaled_arctan(0.5);
        let x = [1.0, 0.0, -1.0, 0.0, 0.5];
        let a = solve_mild_galerkin(&m, &f, &x, &noise).unwrap();
        let b = solve_mild_terminal(&m, &f, &x, &noise).unwrap();
        assert_eq!(a.terminal(), b.as_slice());
    }

    #[test]
    fn nonlinearity_lipschitz_bound_holds_on_samples() {
        use rand::Rng;
        let f = NonlinearityF::scaled_arctan(0.5);
        let mut rng = RandomStream::new(4, 0).rng();
        let mut fx = vec![0.0; 4];
        let mut fy = vec![0.0; 4];
        for _ in 0..1000 {
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-5.0..5.0)).collect();
            let y: Vec<f64> = (0..4).map(|_| rng.random_range(-5.0..5.0)).collect();
            f.eval(&x, &mut fx);
            f.eval(&y, &mut fy);
            let lhs = norm(&fx.iter().zip(&fy).map(|(a, b)| a - b).collect::<Vec<_>>());
            let rhs = norm(&x.iter().zip(&y).map(|(a, b)| a - b).collect::<Vec<_>>());
            assert!(lhs <= f.lip_bound() * rhs * (1.0 + 1e-6));
        }
    }

    #[test]
    fn divergence_is_reported() {
        let m = SpectralModel::new(vec![1.0], vec![0.0], Clock::Identity).unwrap();
        let grid = uniform_grid(1.0, 10);
        let noise = ModeIncrements::zero(&grid, 1).unwrap();
        let r = solve_mild_terminal(&m, &NonlinearityF::Constant(vec![1e300]), &[0.0], &noise);
        assert!(matches!(r, Err(Error::Divergence { .. })));
    }

    #[test]
    fn gap_degenerate_cases_are_exact() {
        let m = SpectralModel::heat(4, 1.0, stable(1.5)).unwrap();
        let nl = NonlinearityF::scaled_arctan(0.5);
        let x = [0.1, 0.0, 0.0, 0.0];
        let y = [0.2, 0.0, 0.0, 0.0];
        let g = strong_feller_gap(&m, &nl, &TestFunction::Constant(3.0), &x, &y, 0.5, 50, 100, 1).unwrap();
        assert_eq!(g.gap, 0.0);
        let g = strong_feller_gap(&m, &nl, &TestFunction::Arctan(vec![1.0]), &x, &x, 0.5, 50, 100, 1).unwrap();
        assert_eq!(g.gap, 0.0);
        assert!(strong_feller_gap(&m, &nl, &TestFunction::Linear(vec![1.0]), &x, &y, 0.5, 50, 10, 1).is_err());
    }

    #[test]
    fn inactive_high_modes_give_zero_deviation() {
        let mut betas = vec![1.0; 4];
        betas.extend(vec![0.0; 12]);
        let m = SpectralModel::new(heat_eigenvalues(16).unwrap(), betas, stable(1.5)).unwrap();
        let nl = NonlinearityF::ScaledArctan { scale: 0.5, modes: 4 };
        let r = galerkin_convergence_check(&m, &[4, 8, 16], &nl, &[0.0; 16], 0.5, 50, 50, 3).unwrap();
        assert!(r.deviations.iter().flatten().all(|d| *d == 0.0));
        assert!(galerkin_convergence_check(&m, &[4], &nl, &[0.0; 16], 0.5, 50, 5, 3).is_err());
    }

    #[test]
    fn moment_check_rejects_p_at_alpha() {
        let m = SpectralModel::heat(4, 1.0, stable(1.5)).unwrap();
        assert!(convolution_moment_check(&m, 1.5, &[0.1, 1.0], 10, 0.01, 1, 1.5).is_err());
    }

    #[test]
    fn moment_decreases_toward_zero_time() {
        let m = SpectralModel::heat(10, 1.0, stable(1.5)).unwrap();
        let r = convolution_moment_check(&m, 1.0, &[0.001, 0.01, 0.1], 2000, 0.001, 4, 1.5).unwrap();
        assert!(r.points.windows(2).all(|w| w[0].mean < w[1].mean), "{r:?}");
    }

    #[test]
    fn scheme_names_round_trip() {
        for s in [ConvolutionScheme::LeftPoint, ConvolutionScheme::RightPoint, ConvolutionScheme::ExponentialMatched] {
            assert_eq!(s.as_str().parse::<ConvolutionScheme>().unwrap(), s);
        }
    }
}
