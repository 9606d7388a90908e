//! Monte Carlo estimators of `grad_h E f(X_t(x))`.
//!
//! The stable estimator weights `f(X_t)` by
//! `(1 / S_t) int_0^t sigma^{-1} grad_h X_s dW_{S_s}`; the two Brownian
//! baselines use the clock `ell_t = t` with the derivative-flow weight and
//! with the weight `(1/t) int sigma^{-1} [h + (t - s) grad_h b(X_s)] dW_s`.
//! A central finite difference on common random numbers serves as the
//! independent oracle.
//!
//! Each path samples its clock first and then the Brownian values on that
//! clock. Path `i` draws the clock from stream `2i` and the Brownian motion
//! from stream `2i + 1` of the configured seed, so every estimator sees the
//! same noise for the same `(seed, i)`.

use crate::error::{check_len, invalid, Error, Result};
use crate::parallel::try_map_indexed;
use crate::path::{dot, norm, VectorPath};
use crate::sde::{euler_path, variational_path, DiffusionMatrix, DriftModel, FlowState};
use crate::stable::{
    sample_brownian_at_subordinated_times, uniform_grid, Clock, RandomStream, StableParams,
    SubordinatorPath,
};
use crate::stats::{log_space, ols, quantile_sorted, sorted, top_mass_share, SampleStats};
use crate::timechange::{ito_integral_time_changed, CadlagIncreasingPath};

/// Steps per unit horizon used when a run does not say otherwise.
pub const DEFAULT_STEPS: usize = 2048;
/// Relative shift used by the finite-difference oracle by default.
pub const DEFAULT_FD_STEP: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub enum TestFunction {
    Constant(f64),
    /// `f(x) = <a, x>`; coordinates beyond `a` have zero weight.
    Linear(Vec<f64>),
    /// `f(x) = sum_i w_i atan(x_i)`.
    Arctan(Vec<f64>),
    /// `f(x) = exp(-|x - c|^2 / (2 width^2))`.
    GaussianBump { center: Vec<f64>, width: f64 },
    /// Indicator `x_coord > threshold`. Bounded but not differentiable.
    Step { coord: usize, threshold: f64 },
}

impl TestFunction {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Constant(_) => "constant",
            Self::Linear(_) => "linear",
            Self::Arctan(_) => "arctan",
            Self::GaussianBump { .. } => "gaussian-bump",
            Self::Step { .. } => "step",
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Self::Constant(c) => *c,
            Self::Linear(a) => a.iter().zip(x).map(|(a, x)| a * x).sum(),
            Self::Arctan(w) => w.iter().zip(x).map(|(w, x)| w * x.atan()).sum(),
            Self::GaussianBump { center, width } => {
                let r2: f64 = x
                    .iter()
                    .enumerate()
                    .map(|(i, v)| (v - center.get(i).copied().unwrap_or(0.0)).powi(2))
                    .sum();
                (-r2 / (2.0 * width * width)).exp()
            }
            Self::Step { coord, threshold } => {
                if x.get(*coord).is_some_and(|v| *v > *threshold) {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// `grad f(x)`, or `None` for the step function.
    pub fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        let d = x.len();
        let weight = |w: &[f64], i: usize| w.get(i).copied().unwrap_or(0.0);
        match self {
            Self::Constant(_) => Some(vec![0.0; d]),
            Self::Linear(a) => Some((0..d).map(|i| weight(a, i)).collect()),
            Self::Arctan(w) => Some((0..d).map(|i| weight(w, i) / (1.0 + x[i] * x[i])).collect()),
            Self::GaussianBump { center, width } => {
                let f = self.eval(x);
                Some(
                    (0..d)
                        .map(|i| -f * (x[i] - weight(center, i)) / (width * width))
                        .collect(),
                )
            }
            Self::Step { .. } => None,
        }
    }

    /// `||f||_inf` when finite.
    pub fn sup_bound(&self) -> Option<f64> {
        match self {
            Self::Constant(c) => Some(c.abs()),
            Self::Linear(a) => a.iter().all(|v| *v == 0.0).then_some(0.0),
            Self::Arctan(w) => Some(std::f64::consts::FRAC_PI_2 * w.iter().map(|v| v.abs()).sum::<f64>()),
            Self::GaussianBump { .. } | Self::Step { .. } => Some(1.0),
        }
    }

    pub fn lip_bound(&self) -> Option<f64> {
        match self {
            Self::Constant(_) => Some(0.0),
            Self::Linear(a) => Some(norm(a)),
            Self::Arctan(w) => Some(norm(w)),
            // max of |r| exp(-r^2 / 2w^2) / w^2 is at r = w
            Self::GaussianBump { width, .. } => Some((-0.5f64).exp() / width),
            Self::Step { .. } => None,
        }
    }

    /// Whether the function is `C^1_b`-style smooth (the step function is not).
    pub fn is_smooth(&self) -> bool {
        !matches!(self, Self::Step { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorTag {
    BelStable,
    BelBrownianFor2,
    BismutFor1,
    FiniteDifference,
}

impl EstimatorTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::BelStable => "BEL-stable",
            Self::BelBrownianFor2 => "BEL-brownian-For2",
            Self::BismutFor1 => "Bismut-For1",
            Self::FiniteDifference => "FD",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub tag: EstimatorTag,
    pub value: f64,
    pub std_err: f64,
    /// Paths that entered the mean.
    pub n: usize,
    /// Paths dropped because the clock did not move (`S_t = 0`).
    pub rejected: usize,
    /// Set when the largest 0.1% of `|weight|` carry over 20% of the total,
    /// in which case the standard error is not trustworthy.
    pub heavy_tail: bool,
}

impl GradientEstimate {
    pub fn z_against(&self, target: f64) -> f64 {
        crate::stats::z_score(self.value - target, self.std_err)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig {
    pub drift: DriftModel,
    pub diff: DiffusionMatrix,
    pub x0: Vec<f64>,
    pub h: Vec<f64>,
    /// Horizon `t`.
    pub t: f64,
    pub params: StableParams,
    /// Number of uniform time steps on `[0, t]`.
    pub steps: usize,
    pub n_paths: usize,
    pub seed: u64,
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        let d = self.drift.dim();
        check_len("diffusion dimension", d, self.diff.dim())?;
        check_len("x0 dimension", d, self.x0.len())?;
        check_len("h dimension", d, self.h.len())?;
        if !(self.t > 0.0 && self.t.is_finite()) {
            return Err(invalid("t", format!("{} must be positive", self.t)));
        }
        if self.steps < 1 {
            return Err(invalid("grid_size", "need at least one step"));
        }
        if self.n_paths < 1 {
            return Err(invalid("n_paths", "need at least one path"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.drift.dim()
    }

    pub fn grid(&self) -> Vec<f64> {
        uniform_grid(self.t, self.steps)
    }

    pub fn with_h(&self, h: Vec<f64>) -> Self {
        Self { h, ..self.clone() }
    }

    pub fn with_t(&self, t: f64) -> Self {
        Self { t, ..self.clone() }
    }
}

/// The clock and the Brownian values read off it for path `index`.
#[derive(Debug, Clone)]
pub struct PathNoise {
    pub clock: SubordinatorPath,
    pub w: VectorPath,
}

pub fn path_streams(seed: u64, index: usize) -> (RandomStream, RandomStream) {
    let i = index as u64;
    (RandomStream::new(seed, 2 * i), RandomStream::new(seed, 2 * i + 1))
}

pub fn sample_path_noise(clock: Clock, grid: &[f64], dim: usize, seed: u64, index: usize) -> Result<PathNoise> {
    let (cs, ws) = path_streams(seed, index);
    let clock = clock.sample_path(grid, cs)?;
    let w = sample_brownian_at_subordinated_times(&clock, dim, ws)?;
    Ok(PathNoise { clock, w })
}

fn sigma_inv_rows(diff: &DiffusionMatrix, rows: &VectorPath) -> VectorPath {
    let d = rows.dim();
    let mut out = VectorPath::with_capacity(d, rows.len());
    let mut buf = vec![0.0; d];
    for r in rows.rows() {
        diff.apply_inv(r, &mut buf);
        out.push(&buf);
    }
    out
}

/// `(1 / S_t) sum_i <sigma^{-1} DX_i, W_{S_{t_{i+1}}} - W_{S_{t_i}}>`.
pub fn pathwise_weight(
    flow: &FlowState,
    diff: &DiffusionMatrix,
    clock: &SubordinatorPath,
    w: &VectorPath,
) -> Result<f64> {
    let dx = flow
        .dx
        .as_ref()
        .ok_or_else(|| invalid("flow", "derivative flow has not been solved"))?;
    check_len("flow vs clock", flow.grid.len(), clock.len())?;
    let s_t = clock.terminal();
    if !(s_t > 0.0) {
        return Err(Error::DegeneratePath(format!("clock value at the horizon is {s_t}")));
    }
    let integrand = sigma_inv_rows(diff, dx);
    Ok(ito_integral_time_changed(&integrand, clock.values(), w)? / s_t)
}

/// The same weight computed by fixing a deterministic clock `ell`, reading
/// it on the flow grid, integrating against `W_ell` and dividing by `ell_t`.
/// Passing `ell = S` reproduces [`pathwise_weight`] exactly.
pub fn weight_on_fixed_clock(
    flow: &FlowState,
    diff: &DiffusionMatrix,
    ell: &CadlagIncreasingPath,
    w_at_ell: &VectorPath,
) -> Result<f64> {
    let dx = flow
        .dx
        .as_ref()
        .ok_or_else(|| invalid("flow", "derivative flow has not been solved"))?;
    let ell_on_grid: Vec<f64> = flow.grid.iter().map(|t| ell.value(*t)).collect();
    let ell_t = *ell_on_grid.last().expect("non-empty grid");
    if !(ell_t > 0.0) {
        return Err(Error::DegeneratePath(format!("clock value at the horizon is {ell_t}")));
    }
    let integrand = sigma_inv_rows(diff, dx);
    Ok(ito_integral_time_changed(&integrand, &ell_on_grid, w_at_ell)? / ell_t)
}

/// Weight of the `h + (t - s) grad_h b` form, Brownian clock.
fn bismut_weight(cfg: &EstimatorConfig, grid: &[f64], x: &VectorPath, w: &VectorPath) -> Result<f64> {
    let d = cfg.dim();
    let t = cfg.t;
    let mut rows = VectorPath::with_capacity(d, grid.len());
    let mut jh = vec![0.0; d];
    let mut v = vec![0.0; d];
    for (i, ti) in grid.iter().enumerate() {
        cfg.drift.jacobian_apply(*ti, x.at(i), &cfg.h, &mut jh);
        for k in 0..d {
            v[k] = cfg.h[k] + (t - ti) * jh[k];
        }
        rows.push(&v);
    }
    let integrand = sigma_inv_rows(&cfg.diff, &rows);
    Ok(ito_integral_time_changed(&integrand, grid, w)? / t)
}

fn stable_or_identity(tag: EstimatorTag, params: StableParams) -> Clock {
    match tag {
        EstimatorTag::BelStable => Clock::Stable(params),
        _ => Clock::Identity,
    }
}

/// Weight and terminal state of path `index`; `None` when the clock did not move.
fn path_sample(
    cfg: &EstimatorConfig,
    tag: EstimatorTag,
    grid: &[f64],
    index: usize,
) -> Result<Option<(f64, Vec<f64>)>> {
    let noise = sample_path_noise(stable_or_identity(tag, cfg.params), grid, cfg.dim(), cfg.seed, index)?;
    let s_t = noise.clock.terminal();
    if !(s_t > 0.0) {
        return Ok(None);
    }
    let x = euler_path(&cfg.drift, &cfg.diff, &cfg.x0, grid, &noise.w)?;
    let weight = match tag {
        EstimatorTag::BismutFor1 => bismut_weight(cfg, grid, &x, &noise.w)?,
        _ => {
            let dx = variational_path(&cfg.drift, grid, &x, &cfg.h)?;
            let integrand = sigma_inv_rows(&cfg.diff, &dx);
            ito_integral_time_changed(&integrand, noise.clock.values(), &noise.w)? / s_t
        }
    };
    Ok(Some((weight, x.last().expect("non-empty path").to_vec())))
}

fn weighted_estimate(cfg: &EstimatorConfig, f: &TestFunction, tag: EstimatorTag) -> Result<GradientEstimate> {
    cfg.validate()?;
    let grid = cfg.grid();
    let per_path = try_map_indexed(cfg.n_paths, |i| -> Result<Option<(f64, f64)>> {
        Ok(path_sample(cfg, tag, &grid, i)?.map(|(w, x)| (f.eval(&x) * w, w)))
    })?;
    let rejected = per_path.iter().filter(|p| p.is_none()).count();
    let (contrib, weights): (Vec<f64>, Vec<f64>) = per_path.into_iter().flatten().unzip();
    if contrib.is_empty() {
        return Err(Error::DegeneratePath("every path was rejected".into()));
    }
    let st = SampleStats::from_slice(&contrib);
    Ok(GradientEstimate {
        tag,
        value: st.mean,
        std_err: st.std_err,
        n: st.n,
        rejected,
        heavy_tail: top_mass_share(&weights, 1e-3) > 0.2,
    })
}

/// Stable-driver estimator `E[f(X_t) (1/S_t) int sigma^{-1} grad_h X dW_S]`.
pub fn estimate_gradient_bel(cfg: &EstimatorConfig, f: &TestFunction) -> Result<GradientEstimate> {
    weighted_estimate(cfg, f, EstimatorTag::BelStable)
}

/// Brownian baseline with the derivative-flow weight (`S_t` replaced by `t`).
pub fn estimate_gradient_brownian_for2(cfg: &EstimatorConfig, f: &TestFunction) -> Result<GradientEstimate> {
    weighted_estimate(cfg, f, EstimatorTag::BelBrownianFor2)
}

/// Brownian baseline with the `h + (t - s) grad_h b` weight.
pub fn estimate_gradient_bismut_for1(cfg: &EstimatorConfig, f: &TestFunction) -> Result<GradientEstimate> {
    weighted_estimate(cfg, f, EstimatorTag::BismutFor1)
}

/// Central difference `(E f(X_t(x + dh)) - E f(X_t(x - dh))) / 2d` with both
/// shifted systems driven by the identical stable noise.
pub fn fd_oracle(cfg: &EstimatorConfig, f: &TestFunction, fd_step: f64) -> Result<GradientEstimate> {
    cfg.validate()?;
    if !(fd_step > 0.0 && fd_step.is_finite()) {
        return Err(invalid("fd_step", format!("{fd_step} must be positive")));
    }
    let grid = cfg.grid();
    let plus: Vec<f64> = cfg.x0.iter().zip(&cfg.h).map(|(x, h)| x + fd_step * h).collect();
    let minus: Vec<f64> = cfg.x0.iter().zip(&cfg.h).map(|(x, h)| x - fd_step * h).collect();
    let diffs = try_map_indexed(cfg.n_paths, |i| -> Result<f64> {
        let noise = sample_path_noise(Clock::Stable(cfg.params), &grid, cfg.dim(), cfg.seed, i)?;
        let xp = euler_path(&cfg.drift, &cfg.diff, &plus, &grid, &noise.w)?;
        let xm = euler_path(&cfg.drift, &cfg.diff, &minus, &grid, &noise.w)?;
        let fp = f.eval(xp.last().expect("non-empty"));
        let fm = f.eval(xm.last().expect("non-empty"));
        Ok((fp - fm) / (2.0 * fd_step))
    })?;
    let st = SampleStats::from_slice(&diffs);
    Ok(GradientEstimate {
        tag: EstimatorTag::FiniteDifference,
        value: st.mean,
        std_err: st.std_err,
        n: st.n,
        rejected: 0,
        heavy_tail: false,
    })
}

pub fn estimate(cfg: &EstimatorConfig, f: &TestFunction, tag: EstimatorTag) -> Result<GradientEstimate> {
    match tag {
        EstimatorTag::FiniteDifference => fd_oracle(cfg, f, DEFAULT_FD_STEP),
        _ => weighted_estimate(cfg, f, tag),
    }
}

/// One estimate per coordinate direction `e_1, ..., e_d` (the full gradient).
pub fn estimate_gradient_vector(
    cfg: &EstimatorConfig,
    f: &TestFunction,
    tag: EstimatorTag,
) -> Result<Vec<GradientEstimate>> {
    let d = cfg.dim();
    (0..d)
        .map(|k| {
            let mut e = vec![0.0; d];
            e[k] = 1.0;
            estimate(&cfg.with_h(e), f, tag)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingPoint {
    pub t: f64,
    /// `(E |weight|^q)^{1/q}`
    pub moment_norm: f64,
    /// Standard error of `ln moment_norm` (delta method).
    pub log_se: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingFit {
    pub q: f64,
    pub points: Vec<ScalingPoint>,
    /// Least-squares slope of `ln m(t)` against `ln t`.
    pub slope: f64,
    /// Standard error of the slope propagated from the per-point errors.
    pub slope_se: f64,
}

/// Fits the power of `t` in `(E |weight_t|^q)^{1/q}`. Each horizon uses its
/// own seed, derived from the configured one, so the points are independent.
pub fn weight_moment_scaling(cfg: &EstimatorConfig, q: f64, t_grid: &[f64]) -> Result<ScalingFit> {
    if t_grid.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "need at least 3 horizons, got {}",
            t_grid.len()
        )));
    }
    if !(q >= 1.0) {
        return Err(invalid("q", format!("{q} must be at least 1")));
    }
    let mut points = Vec::with_capacity(t_grid.len());
    for (j, &t) in t_grid.iter().enumerate() {
        let mut c = cfg.with_t(t);
        c.seed = cfg.seed.wrapping_add((j as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        c.validate()?;
        let grid = c.grid();
        let vals = try_map_indexed(c.n_paths, |i| -> Result<Option<f64>> {
            Ok(path_sample(&c, EstimatorTag::BelStable, &grid, i)?.map(|(w, _)| w.abs().powf(q)))
        })?;
        let vals: Vec<f64> = vals.into_iter().flatten().collect();
        let st = SampleStats::from_slice(&vals);
        points.push(ScalingPoint {
            t,
            moment_norm: st.mean.powf(1.0 / q),
            log_se: st.std_err / (q * st.mean),
        });
    }
    let x: Vec<f64> = points.iter().map(|p| p.t.ln()).collect();
    let y: Vec<f64> = points.iter().map(|p| p.moment_norm.ln()).collect();
    let fit = ols(&x, &y)?;
    let mx = x.iter().sum::<f64>() / x.len() as f64;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let slope_var: f64 = x
        .iter()
        .zip(&points)
        .map(|(xi, p)| ((xi - mx) / sxx).powi(2) * p.log_se.powi(2))
        .sum();
    Ok(ScalingFit {
        q,
        points,
        slope: fit.slope,
        slope_se: slope_var.sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TailFit {
    pub lambdas: Vec<f64>,
    /// Empirical `P(sup_t |int h dW_S| >= lambda)`.
    pub probs: Vec<f64>,
    pub exceedances: Vec<usize>,
    /// Fitted slope of `ln P` against `ln lambda`; about `-alpha` in theory.
    pub exponent: f64,
    pub exponent_se: f64,
}

/// Minimum number of exceedances required at the largest level.
pub const MIN_TAIL_EXCEEDANCES: usize = 100;

/// Running maxima `sup_{t_i <= T} |<h, W_{S_{t_i}}>|` for every path, in path order.
pub fn running_sup_samples(cfg: &EstimatorConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let grid = cfg.grid();
    try_map_indexed(cfg.n_paths, |i| -> Result<f64> {
        let noise = sample_path_noise(Clock::Stable(cfg.params), &grid, cfg.dim(), cfg.seed, i)?;
        Ok(noise.w.rows().map(|w| dot(&cfg.h, w).abs()).fold(0.0, f64::max))
    })
}

/// Log-log regression of the tail of `sup_{t <= T} |int_0^t h dW_{S_s}|`
/// with `T = cfg.t`. Without explicit levels, 12 log-spaced levels between
/// the empirical 90% and 99.9% quantiles are used.
pub fn gine_marcus_tail_check(cfg: &EstimatorConfig, lambdas: Option<&[f64]>) -> Result<TailFit> {
    let sups = sorted(&running_sup_samples(cfg)?);
    let n = sups.len();
    let lambdas = match lambdas {
        Some(l) => {
            if l.len() < 2 || l.iter().any(|v| !(*v > 0.0)) {
                return Err(invalid("lambdas", "need at least two positive levels"));
            }
            l.to_vec()
        }
        None => log_space(quantile_sorted(&sups, 0.9), quantile_sorted(&sups, 0.999), 12),
    };
    let exceedances: Vec<usize> = lambdas
        .iter()
        .map(|l| n - sups.partition_point(|s| s < l))
        .collect();
    let at_max = lambdas
        .iter()
        .zip(&exceedances)
        .max_by(|a, b| a.0.total_cmp(b.0))
        .map(|(_, e)| *e)
        .unwrap_or(0);
    if at_max < MIN_TAIL_EXCEEDANCES {
        return Err(Error::InsufficientData(format!(
            "only {at_max} exceedances at the largest level; widen the range or add paths"
        )));
    }
    let probs: Vec<f64> = exceedances.iter().map(|e| *e as f64 / n as f64).collect();
    let x: Vec<f64> = lambdas.iter().map(|l| l.ln()).collect();
    let y: Vec<f64> = probs.iter().map(|p| p.ln()).collect();
    let fit = ols(&x, &y)?;
    Ok(TailFit {
        lambdas,
        probs,
        exceedances,
        exponent: fit.slope,
        exponent_se: fit.slope_se,
    })
}
