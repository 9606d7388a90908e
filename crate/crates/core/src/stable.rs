//! Positive stable subordinators and Brownian motion run on their clock.
//!
//! The subordinator `S` with index `beta = alpha / 2` is normalised by
//! `E exp(-lambda S_t) = exp(-t lambda^beta)`. Single draws of `S_1` use
//! Kanter's representation; path increments use self-similarity,
//! `S_{t+dt} - S_t ~ dt^{1/beta} S_1`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use statrs::function::gamma::ln_gamma;

use crate::error::{invalid, Error, Result};
use crate::path::VectorPath;
use crate::stats::SampleStats;

/// Increments of clock time (or grid time) below this are treated as zero.
pub const MIN_INCREMENT: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StableParams {
    alpha: f64,
    beta: f64,
}

impl StableParams {
    /// Stability index `alpha` of the driving process, in `(0, 2)`.
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 2.0) {
            return Err(invalid("alpha", format!("{alpha} is outside (0, 2)")));
        }
        Ok(Self {
            alpha,
            beta: alpha / 2.0,
        })
    }

    /// Build from the subordinator index `beta`, in `(0, 1)`.
    pub fn from_beta(beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta < 1.0) {
            return Err(invalid("beta", format!("{beta} is outside (0, 1)")));
        }
        Ok(Self {
            alpha: 2.0 * beta,
            beta,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
}

/// Identifies one reproducible random sequence.
///
/// Backed by ChaCha8 keyed by `seed` with `stream_id` selecting the 64-bit
/// stream, so distinct pairs give independent sequences and equal pairs
/// reproduce bit-identical ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RandomStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RandomStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// One draw of the standard positive `beta`-stable variable `S_1`.
pub fn positive_stable_draw<R: Rng + ?Sized>(beta: f64, rng: &mut R) -> f64 {
    // U uniform on (0, pi); E unit exponential
    let u = loop {
        let v: f64 = rng.random();
        if v > 0.0 {
            break v * std::f64::consts::PI;
        }
    };
    let e: f64 = rng.sample(Exp1);
    let one_m = 1.0 - beta;
    let ln_a = ((one_m * u).sin()).ln() + (beta / one_m) * (beta * u).sin().ln()
        - u.sin().ln() / one_m;
    ((one_m / beta) * (ln_a - e.ln())).exp()
}

pub fn sample_positive_stable(params: StableParams, stream: RandomStream) -> f64 {
    positive_stable_draw(params.beta(), &mut stream.rng())
}

/// `n` independent draws of `S_1` from a single stream.
pub fn sample_positive_stable_n(params: StableParams, n: usize, stream: RandomStream) -> Vec<f64> {
    let mut rng = stream.rng();
    (0..n)
        .map(|_| positive_stable_draw(params.beta(), &mut rng))
        .collect()
}

/// Checks a time grid: non-empty, starts at 0, strictly increasing, finite.
pub fn validate_grid(grid: &[f64]) -> Result<()> {
    match grid.first() {
        None => return Err(Error::InvalidGrid("grid is empty".into())),
        Some(&g) if g != 0.0 => {
            return Err(Error::InvalidGrid(format!("grid starts at {g}, not 0")))
        }
        _ => {}
    }
    if let Some(w) = grid.windows(2).find(|w| !(w[1] > w[0]) || !w[1].is_finite()) {
        return Err(Error::InvalidGrid(format!(
            "grid is not strictly increasing ({} then {})",
            w[0], w[1]
        )));
    }
    Ok(())
}

/// `steps + 1` equally spaced points on `[0, t]`, with the last point exactly `t`.
pub fn uniform_grid(t: f64, steps: usize) -> Vec<f64> {
    let mut g: Vec<f64> = (0..=steps).map(|i| t * i as f64 / steps as f64).collect();
    if let Some(last) = g.last_mut() {
        *last = t;
    }
    g
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubordinatorPath {
    grid: Vec<f64>,
    values: Vec<f64>,
}

impl SubordinatorPath {
    pub fn new(grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        validate_grid(&grid)?;
        crate::error::check_len("subordinator path values", grid.len(), values.len())?;
        if values[0] != 0.0 {
            return Err(Error::DegeneratePath(format!(
                "path starts at {}, not 0",
                values[0]
            )));
        }
        if values.windows(2).any(|w| !(w[1] >= w[0])) {
            return Err(Error::DegeneratePath("path is not nondecreasing".into()));
        }
        Ok(Self { grid, values })
    }

    /// The identity clock `ell_t = t` on `grid` (the Brownian case).
    pub fn identity(grid: Vec<f64>) -> Result<Self> {
        let values = grid.clone();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn terminal(&self) -> f64 {
        *self.values.last().expect("paths are non-empty")
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn increments(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.windows(2).map(|w| w[1] - w[0])
    }
}

pub fn sample_subordinator_path(
    params: StableParams,
    grid: &[f64],
    stream: RandomStream,
) -> Result<SubordinatorPath> {
    validate_grid(grid)?;
    let mut rng = stream.rng();
    let inv_beta = 1.0 / params.beta();
    let mut values = Vec::with_capacity(grid.len());
    values.push(0.0);
    let mut s = 0.0;
    for w in grid.windows(2) {
        let dt = w[1] - w[0];
        if dt >= MIN_INCREMENT {
            s += dt.powf(inv_beta) * positive_stable_draw(params.beta(), &mut rng);
        }
        values.push(s);
    }
    Ok(SubordinatorPath {
        grid: grid.to_vec(),
        values,
    })
}

/// Source of the random clock driving the noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Clock {
    /// `alpha/2`-stable subordinator; the driver `W_S` is `alpha`-stable.
    Stable(StableParams),
    /// `ell_t = t`; the driver is standard Brownian motion.
    Identity,
}

impl Clock {
    pub fn sample_path(&self, grid: &[f64], stream: RandomStream) -> Result<SubordinatorPath> {
        match self {
            Clock::Stable(p) => sample_subordinator_path(*p, grid, stream),
            Clock::Identity => SubordinatorPath::identity(grid.to_vec()),
        }
    }

    /// `alpha`, with the Brownian case reported as 2.
    pub fn alpha(&self) -> f64 {
        match self {
            Clock::Stable(p) => p.alpha(),
            Clock::Identity => 2.0,
        }
    }
}

/// `W_{S_{t_0}}, ..., W_{S_{t_m}}` for a `d`-dimensional Brownian motion `W`
/// independent of the clock path.
pub fn sample_brownian_at_subordinated_times(
    path: &SubordinatorPath,
    d: usize,
    stream: RandomStream,
) -> Result<VectorPath> {
    if d < 1 {
        return Err(invalid("d", "dimension must be at least 1"));
    }
    let mut rng = stream.rng();
    let mut out = VectorPath::with_capacity(d, path.len());
    let mut cur = vec![0.0; d];
    out.push(&cur);
    for ds in path.increments() {
        if ds >= MIN_INCREMENT {
            let sd = ds.sqrt();
            for c in cur.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *c += sd * z;
            }
        }
        out.push(&cur);
    }
    Ok(out)
}

/// Brownian motion evaluated at arbitrary nonnegative times (in any order,
/// repeats allowed). Values are returned in the order of `times`.
pub fn sample_brownian_at_times(times: &[f64], d: usize, stream: RandomStream) -> Result<VectorPath> {
    if d < 1 {
        return Err(invalid("d", "dimension must be at least 1"));
    }
    if let Some(t) = times.iter().find(|t| !(**t >= 0.0) || !t.is_finite()) {
        return Err(invalid("times", format!("{t} is not a finite nonnegative time")));
    }
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    let mut rng = stream.rng();
    let mut out = VectorPath::zeros(d, times.len());
    let mut cur = vec![0.0; d];
    let mut last_t = 0.0;
    for &i in &order {
        let dt = times[i] - last_t;
        if dt >= MIN_INCREMENT {
            let sd = dt.sqrt();
            for c in cur.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *c += sd * z;
            }
            last_t = times[i];
        }
        out.at_mut(i).copy_from_slice(&cur);
    }
    Ok(out)
}

/// Exact `E S_t^{-r} = Gamma(r/beta) / (beta Gamma(r)) * t^{-r/beta}`.
pub fn negative_moment_oracle(params: StableParams, r: f64, t: f64) -> Result<f64> {
    if !(r > 0.0) {
        return Err(invalid("r", format!("{r} must be positive")));
    }
    if !(t > 0.0) {
        return Err(invalid("t", format!("{t} must be positive")));
    }
    let b = params.beta();
    Ok((ln_gamma(r / b) - b.ln() - ln_gamma(r) - (r / b) * t.ln()).exp())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaplaceRow {
    pub lambda: f64,
    pub empirical: f64,
    pub exact: f64,
    pub std_err: f64,
    pub z: f64,
}

/// Compares the sample mean of `exp(-lambda S_1)` with `exp(-lambda^beta)`.
pub fn empirical_laplace_check(
    params: StableParams,
    lambdas: &[f64],
    n: usize,
    stream: RandomStream,
) -> Result<Vec<LaplaceRow>> {
    if n < 1000 {
        return Err(invalid("n", format!("{n} samples is below the minimum of 1000")));
    }
    if let Some(l) = lambdas.iter().find(|l| !(**l >= 0.0)) {
        return Err(invalid("lambdas", format!("{l} is negative")));
    }
    let draws = sample_positive_stable_n(params, n, stream);
    Ok(lambdas
        .iter()
        .map(|&lambda| {
            let vals: Vec<f64> = draws.iter().map(|s| (-lambda * s).exp()).collect();
            let st = SampleStats::from_slice(&vals);
            let exact = (-lambda.powf(params.beta())).exp();
            LaplaceRow {
                lambda,
                empirical: st.mean,
                exact,
                std_err: st.std_err,
                z: st.z_against(exact),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{ks_distance, median};

    fn p(alpha: f64) -> StableParams {
        StableParams::new(alpha).unwrap()
    }

    #[test]
    fn params_reject_out_of_range() {
        assert!(StableParams::new(0.0).is_err());
        assert!(StableParams::new(2.0).is_err());
        assert!(StableParams::from_beta(1.0).is_err());
        assert!(StableParams::from_beta(-0.1).is_err());
        assert_eq!(StableParams::new(1.5).unwrap().beta(), 0.75);
    }

    #[test]
    fn draws_are_deterministic_per_stream() {
        let s = RandomStream::new(7, 3);
        for a in [0.5, 1.0, 1.9] {
            assert_eq!(
                sample_positive_stable(p(a), s).to_bits(),
                sample_positive_stable(p(a), s).to_bits()
            );
        }
        assert_ne!(
            sample_positive_stable(p(1.0), s),
            sample_positive_stable(p(1.0), RandomStream::new(7, 4))
        );
    }

    /// 0.5-quantile of the density `(1/(2 sqrt(pi))) s^{-3/2} exp(-1/(4s))`,
    /// found by composite Simpson integration of the CDF in `u = 1/s` and
    /// bisection.
    fn levy_half_median_by_quadrature() -> f64 {
        // P(S > m) = int_0^{1/m} (1/(2 sqrt(pi))) u^{-1/2} e^{-u/4} du; substitute u = v^2
        let tail = |m: f64| {
            let hi = (1.0 / m).sqrt();
            let n = 20_000;
            let h = hi / n as f64;
            let g = |v: f64| (-v * v / 4.0).exp() / std::f64::consts::PI.sqrt();
            let mut acc = g(0.0) + g(hi);
            for i in 1..n {
                acc += if i % 2 == 1 { 4.0 } else { 2.0 } * g(i as f64 * h);
            }
            acc * h / 3.0
        };
        let (mut lo, mut hi) = (0.1, 10.0);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if tail(mid) > 0.5 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn half_stable_median_matches_levy_quadrature() {
        let m = levy_half_median_by_quadrature();
        assert!((m - 1.0990).abs() < 5e-4, "quadrature median {m}");
        let draws = sample_positive_stable_n(StableParams::from_beta(0.5).unwrap(), 200_000, RandomStream::new(1, 0));
        let emp = median(&draws);
        // sd of the sample median ~ 1/(2 f(m) sqrt(n)) ~ 0.0035 here
        assert!((emp - m).abs() < 0.015, "empirical median {emp} vs {m}");
    }

    #[test]
    fn laplace_degenerate_lambda_zero() {
        let rows = empirical_laplace_check(p(1.0), &[0.0], 1000, RandomStream::new(0, 0)).unwrap();
        assert_eq!(rows[0].empirical, 1.0);
        assert_eq!(rows[0].exact, 1.0);
        assert_eq!(rows[0].z, 0.0);
    }

    #[test]
    fn laplace_rejects_small_n() {
        assert!(empirical_laplace_check(p(1.0), &[1.0], 999, RandomStream::new(0, 0)).is_err());
    }

    #[test]
    fn laplace_beta_half_unit_lambda() {
        let rows = empirical_laplace_check(
            StableParams::from_beta(0.5).unwrap(),
            &[1.0],
            1_000_000,
            RandomStream::new(11, 0),
        )
        .unwrap();
        assert!((rows[0].exact - (-1.0f64).exp()).abs() < 1e-15);
        assert!(rows[0].z.abs() < 3.0, "z = {}", rows[0].z);
    }

    #[test]
    fn laplace_beta_09_lambda_4() {
        let rows = empirical_laplace_check(
            StableParams::from_beta(0.9).unwrap(),
            &[4.0],
            1_000_000,
            RandomStream::new(12, 0),
        )
        .unwrap();
        assert!(rows[0].z.abs() < 3.0, "z = {}", rows[0].z);
    }

    #[test]
    fn grid_validation() {
        assert!(sample_subordinator_path(p(1.0), &[], RandomStream::new(0, 0)).is_err());
        assert!(sample_subordinator_path(p(1.0), &[0.0, 1.0, 1.0], RandomStream::new(0, 0)).is_err());
        assert!(sample_subordinator_path(p(1.0), &[0.5, 1.0], RandomStream::new(0, 0)).is_err());
        let single = sample_subordinator_path(p(1.0), &[0.0], RandomStream::new(0, 0)).unwrap();
        assert_eq!(single.values(), &[0.0]);
    }

    #[test]
    fn path_laplace_at_unit_time() {
        let params = StableParams::from_beta(0.5).unwrap();
        let vals: Vec<f64> = (0..100_000)
            .map(|i| {
                let path = sample_subordinator_path(params, &[0.0, 1.0], RandomStream::new(5, i)).unwrap();
                (-path.terminal()).exp()
            })
            .collect();
        let st = SampleStats::from_slice(&vals);
        assert!(st.z_against((-1.0f64).exp()).abs() < 3.0);
    }

    #[test]
    fn self_similarity_two_steps() {
        let params = StableParams::from_beta(0.75).unwrap();
        let n = 10_000;
        let s2: Vec<f64> = (0..n)
            .map(|i| {
                sample_subordinator_path(params, &[0.0, 1.0, 2.0], RandomStream::new(8, i))
                    .unwrap()
                    .terminal()
            })
            .collect();
        let scale = 2f64.powf(1.0 / 0.75);
        let s1: Vec<f64> = sample_positive_stable_n(params, n as usize, RandomStream::new(9, 0))
            .into_iter()
            .map(|s| scale * s)
            .collect();
        assert!(ks_distance(&s1, &s2) < 0.02);
    }

    #[test]
    fn brownian_on_flat_clock_is_zero() {
        let path = SubordinatorPath::new(vec![0.0, 1.0, 2.0], vec![0.0; 3]).unwrap();
        let w = sample_brownian_at_subordinated_times(&path, 3, RandomStream::new(0, 0)).unwrap();
        assert!(w.as_flat().iter().all(|v| *v == 0.0));
        assert!(sample_brownian_at_subordinated_times(&path, 0, RandomStream::new(0, 0)).is_err());
    }

    #[test]
    fn brownian_variance_equals_clock_time() {
        let path = SubordinatorPath::new(vec![0.0, 1.0], vec![0.0, 4.0]).unwrap();
        let sq: Vec<f64> = (0..100_000)
            .map(|i| {
                let w = sample_brownian_at_subordinated_times(&path, 1, RandomStream::new(3, i)).unwrap();
                w.at(1)[0].powi(2)
            })
            .collect();
        assert!(SampleStats::from_slice(&sq).z_against(4.0).abs() < 3.0);
    }

    #[test]
    fn brownian_components_uncorrelated() {
        let grid = uniform_grid(1.0, 4);
        let (mut xs, mut ys) = (vec![], vec![]);
        for i in 0..10_000 {
            let s = sample_subordinator_path(p(1.2), &grid, RandomStream::new(4, 2 * i)).unwrap();
            let w = sample_brownian_at_subordinated_times(&s, 2, RandomStream::new(4, 2 * i + 1)).unwrap();
            let last = w.last().unwrap();
            // normalise by the clock so the pair is standard Gaussian
            let sd = s.terminal().sqrt();
            xs.push(last[0] / sd);
            ys.push(last[1] / sd);
        }
        let n = xs.len() as f64;
        let corr = xs.iter().zip(&ys).map(|(a, b)| a * b).sum::<f64>() / n;
        assert!(corr.abs() < 0.02, "corr {corr}");
    }

    #[test]
    fn brownian_at_arbitrary_times_is_consistent() {
        let times = [2.0, 0.5, 2.0, 0.0];
        let w = sample_brownian_at_times(&times, 2, RandomStream::new(1, 1)).unwrap();
        assert_eq!(w.at(0), w.at(2));
        assert_eq!(w.at(3), &[0.0, 0.0]);
    }

    #[test]
    fn negative_moment_closed_form_values() {
        let half = StableParams::from_beta(0.5).unwrap();
        let two_over_sqrt_pi = 2.0 / std::f64::consts::PI.sqrt();
        assert!((negative_moment_oracle(half, 0.5, 1.0).unwrap() - two_over_sqrt_pi).abs() < 1e-12);
        assert!((negative_moment_oracle(half, 0.5, 2.0).unwrap() - two_over_sqrt_pi / 2.0).abs() < 1e-12);
        assert!(negative_moment_oracle(half, 0.0, 1.0).is_err());
        assert!(negative_moment_oracle(half, 1.0, -1.0).is_err());
    }

    /// Quadrature of `Gamma(r)^{-1} int_0^inf lambda^{r-1} e^{-t lambda^beta} d lambda`,
    /// independent of the Gamma-function closed form.
    fn negative_moment_by_quadrature(beta: f64, r: f64, t: f64) -> f64 {
        // substitute lambda = e^x and integrate over x with the trapezoid rule
        let lo = -60.0;
        let mut hi = 0.0;
        while t * (beta * hi).exp() - r * hi < 60.0 {
            hi += 0.5;
        }
        let n = 400_000;
        let h = (hi - lo) / n as f64;
        let g = |x: f64| (r * x - t * (beta * x).exp()).exp();
        let mut acc = 0.5 * (g(lo) + g(hi));
        for i in 1..n {
            acc += g(lo + i as f64 * h);
        }
        acc * h / statrs::function::gamma::gamma(r)
    }

    #[test]
    fn negative_moment_matches_quadrature() {
        for &beta in &[0.35, 0.5, 0.75, 0.95] {
            let params = StableParams::from_beta(beta).unwrap();
            for &r in &[0.5, 1.0, 2.0] {
                for &t in &[0.25, 1.0, 4.0] {
                    let exact = negative_moment_oracle(params, r, t).unwrap();
                    let quad = negative_moment_by_quadrature(beta, r, t);
                    assert!(((exact - quad) / quad).abs() < 1e-8, "beta {beta} r {r} t {t}: {exact} vs {quad}");
                }
            }
        }
    }

    #[test]
    fn negative_moment_monte_carlo() {
        let params = p(1.0);
        let draws = sample_positive_stable_n(params, 1_000_000, RandomStream::new(21, 0));
        for r in [0.5, 1.0, 2.0] {
            let vals: Vec<f64> = draws.iter().map(|s| s.powf(-r)).collect();
            let st = SampleStats::from_slice(&vals);
            let exact = negative_moment_oracle(params, r, 1.0).unwrap();
            assert!(st.z_against(exact).abs() < 3.0, "r {r}: {} vs {exact}", st.mean);
        }
    }
}
