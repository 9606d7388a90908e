//! Deterministic increasing clocks `ell`, their smoothing
//! `ell^eps_t = eps^{-1} int_t^{t+eps} ell_s ds + eps t`, the inverse clock
//! `gamma^eps`, and left-point stochastic integrals against `W_ell`.
//!
//! Paths are extended constantly past their last knot, so the smoothing is
//! defined for every `t >= 0`.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{check_len, invalid, Error, Result};
use crate::path::VectorPath;
use crate::stable::SubordinatorPath;
use crate::stats::median;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KnotRule {
    /// Right-continuous step function holding each knot value until the next knot.
    PiecewiseConstant,
    /// Linear interpolation between knots.
    PiecewiseLinear,
}

impl KnotRule {
    pub fn as_str(&self) -> &'static str {
        match self {
            KnotRule::PiecewiseConstant => "piecewise-constant",
            KnotRule::PiecewiseLinear => "piecewise-linear",
        }
    }
}

impl FromStr for KnotRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "piecewise-constant" => Ok(KnotRule::PiecewiseConstant),
            "piecewise-linear" => Ok(KnotRule::PiecewiseLinear),
            other => Err(Error::Parse(format!("unknown knot rule `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CadlagIncreasingPath {
    times: Vec<f64>,
    values: Vec<f64>,
    rule: KnotRule,
    horizon: f64,
    /// `int_0^{times[j]} ell_s ds`
    cumulative: Vec<f64>,
}

impl CadlagIncreasingPath {
    pub fn new(times: Vec<f64>, values: Vec<f64>, rule: KnotRule, horizon: f64) -> Result<Self> {
        crate::stable::validate_grid(&times)?;
        check_len("knot values", times.len(), values.len())?;
        if values.iter().any(|v| !v.is_finite()) || values.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::DegeneratePath("knot values must be finite and nondecreasing".into()));
        }
        let last = *times.last().expect("validated non-empty");
        if !(horizon >= last) || !horizon.is_finite() {
            return Err(invalid("horizon", format!("{horizon} is before the last knot {last}")));
        }
        let mut cumulative = Vec::with_capacity(times.len());
        cumulative.push(0.0);
        for j in 0..times.len() - 1 {
            let dt = times[j + 1] - times[j];
            let piece = match rule {
                KnotRule::PiecewiseConstant => values[j] * dt,
                KnotRule::PiecewiseLinear => 0.5 * (values[j] + values[j + 1]) * dt,
            };
            cumulative.push(cumulative[j] + piece);
        }
        Ok(Self {
            times,
            values,
            rule,
            horizon,
            cumulative,
        })
    }

    /// A subordinator path read as a right-continuous step clock.
    pub fn from_subordinator(path: &SubordinatorPath) -> Result<Self> {
        let horizon = *path.grid().last().expect("paths are non-empty");
        Self::new(
            path.grid().to_vec(),
            path.values().to_vec(),
            KnotRule::PiecewiseConstant,
            horizon,
        )
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn rule(&self) -> KnotRule {
        self.rule
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    fn last_knot(&self) -> (f64, f64) {
        let j = self.times.len() - 1;
        (self.times[j], self.values[j])
    }

    /// Index of the segment `[times[j], times[j+1])` containing `t >= 0`.
    fn segment(&self, t: f64) -> usize {
        self.times.partition_point(|&s| s <= t).max(1) - 1
    }

    fn value_in_segment(&self, j: usize, t: f64) -> f64 {
        match self.rule {
            KnotRule::PiecewiseConstant => self.values[j],
            KnotRule::PiecewiseLinear => {
                if j + 1 < self.times.len() {
                    let (t0, t1) = (self.times[j], self.times[j + 1]);
                    let w = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
                    self.values[j] + w * (self.values[j + 1] - self.values[j])
                } else {
                    self.values[j]
                }
            }
        }
    }

    /// `ell_t`; negative times read as `t = 0`.
    pub fn value(&self, t: f64) -> f64 {
        let t = t.max(0.0);
        self.value_in_segment(self.segment(t), t)
    }

    /// `int_0^u ell_s ds`.
    pub fn integral_to(&self, u: f64) -> f64 {
        if u <= 0.0 {
            return 0.0;
        }
        let j = self.segment(u);
        self.cumulative[j] + self.piece_integral(j, self.times[j], u)
    }

    fn piece_integral(&self, j: usize, a: f64, b: f64) -> f64 {
        match self.rule {
            KnotRule::PiecewiseConstant => self.values[j] * (b - a),
            KnotRule::PiecewiseLinear => {
                0.5 * (self.value_in_segment(j, a) + self.value_in_segment(j, b)) * (b - a)
            }
        }
    }

    /// `int_a^b ell_s ds` for `0 <= a <= b`, summed piece by piece when the
    /// window is short so small windows do not lose digits to cancellation.
    pub fn integral_between(&self, a: f64, b: f64) -> f64 {
        let a = a.max(0.0);
        if b <= a {
            return 0.0;
        }
        let ja = self.segment(a);
        let jb = self.segment(b);
        if jb - ja > 16 {
            return self.integral_to(b) - self.integral_to(a);
        }
        let mut acc = 0.0;
        let mut x = a;
        for j in ja..=jb {
            let end = if j + 1 < self.times.len() {
                self.times[j + 1].min(b)
            } else {
                b
            };
            if end > x {
                acc += self.piece_integral(j, x, end);
                x = end;
            }
        }
        acc
    }

    /// Two-column CSV preceded by a comment line naming the knot rule.
    pub fn to_csv(&self) -> String {
        let mut s = format!("# rule={} horizon={}\ntime,value\n", self.rule.as_str(), self.horizon);
        for (t, v) in self.times.iter().zip(&self.values) {
            let _ = writeln!(s, "{t},{v}");
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rule = None;
        let mut horizon = None;
        let (mut times, mut values) = (vec![], vec![]);
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            if let Some(comment) = line.strip_prefix('#') {
                for tok in comment.split_whitespace() {
                    if let Some(r) = tok.strip_prefix("rule=") {
                        rule = Some(r.parse::<KnotRule>()?);
                    } else if let Some(h) = tok.strip_prefix("horizon=") {
                        horizon = Some(parse_f64(h)?);
                    }
                }
                continue;
            }
            if line == "time,value" {
                continue;
            }
            let (t, v) = line
                .split_once(',')
                .ok_or_else(|| Error::Parse(format!("expected `time,value`, got `{line}`")))?;
            times.push(parse_f64(t)?);
            values.push(parse_f64(v)?);
        }
        let rule = rule.ok_or_else(|| Error::Parse("missing `# rule=...` header".into()))?;
        let horizon = horizon.or_else(|| times.last().copied()).unwrap_or(0.0);
        Self::new(times, values, rule, horizon)
    }
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|e| Error::Parse(format!("`{s}`: {e}")))
}

/// The clock `ell^eps`, strictly increasing and absolutely continuous.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedPath {
    base: CadlagIncreasingPath,
    epsilon: f64,
}

impl SmoothedPath {
    pub fn base(&self) -> &CadlagIncreasingPath {
        &self.base
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// `ell^eps_t` for `t >= 0`.
    pub fn value(&self, t: f64) -> f64 {
        self.window_average(t) + self.epsilon * t
    }

    /// The averaging part `eps^{-1} int_t^{t+eps} ell_s ds` alone.
    pub fn window_average(&self, t: f64) -> f64 {
        self.base.integral_between(t, t + self.epsilon) / self.epsilon
    }

    /// Right derivative `(ell_{t+eps} - ell_t) / eps + eps`.
    pub fn derivative(&self, t: f64) -> f64 {
        (self.base.value(t + self.epsilon) - self.base.value(t)) / self.epsilon + self.epsilon
    }
}

pub fn smooth(path: &CadlagIncreasingPath, epsilon: f64) -> Result<SmoothedPath> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(invalid("epsilon", format!("{epsilon} is outside (0, 1)")));
    }
    Ok(SmoothedPath {
        base: path.clone(),
        epsilon,
    })
}

/// `gamma^eps`, the inverse of `ell^eps` on `[ell^eps_0, inf)`.
#[derive(Debug, Clone, PartialEq)]
pub struct InversePath {
    source: SmoothedPath,
    start: f64,
}

pub fn invert(source: &SmoothedPath) -> InversePath {
    InversePath {
        start: source.value(0.0),
        source: source.clone(),
    }
}

impl InversePath {
    pub fn source(&self) -> &SmoothedPath {
        &self.source
    }

    /// `ell^eps_0`, the left end of the domain.
    pub fn domain_start(&self) -> f64 {
        self.start
    }

    pub fn value(&self, s: f64) -> Result<f64> {
        let tol = 1e-12 * (1.0 + self.start.abs());
        if !(s >= self.start - tol) {
            return Err(Error::OutOfDomain(format!(
                "{s} is below ell^eps_0 = {}",
                self.start
            )));
        }
        if s <= self.start {
            return Ok(0.0);
        }
        let eps = self.source.epsilon;
        let (t_last, v_last) = self.source.base.last_knot();
        // past the last knot the clock is affine: ell^eps_t = v_last + eps t
        if s >= self.source.value(t_last) {
            return Ok(((s - v_last) / eps).max(t_last));
        }
        let (mut lo, mut hi) = (0.0, t_last);
        loop {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.source.value(mid) < s {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let (el, eh) = (
            (self.source.value(lo) - s).abs(),
            (self.source.value(hi) - s).abs(),
        );
        Ok(if el <= eh { lo } else { hi })
    }

    /// `d gamma^eps / ds = 1 / (d ell^eps / dt)` at `t = gamma^eps_s`.
    pub fn derivative(&self, s: f64) -> Result<f64> {
        Ok(1.0 / self.source.derivative(self.value(s)?))
    }
}

/// Left-point sum `sum_i <xi_{t_i}, W_{ell_{t_{i+1}}} - W_{ell_{t_i}}>`.
///
/// This is the only stochastic-integral routine in the crate: integrating
/// against `W_S` and integrating against `W_ell` for a fixed clock and then
/// setting `ell = S` run through this same code, so the two agree exactly.
pub fn ito_integral_time_changed(
    integrand: &VectorPath,
    ell: &[f64],
    w_at_ell: &VectorPath,
) -> Result<f64> {
    check_len("integrand vs clock", ell.len(), integrand.len())?;
    check_len("noise vs clock", ell.len(), w_at_ell.len())?;
    check_len("integrand dimension", w_at_ell.dim(), integrand.dim())?;
    if ell.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::DegeneratePath("clock values decrease".into()));
    }
    let mut acc = 0.0;
    for i in 0..ell.len().saturating_sub(1) {
        let (w0, w1) = (w_at_ell.at(i), w_at_ell.at(i + 1));
        acc += integrand
            .at(i)
            .iter()
            .zip(w0.iter().zip(w1))
            .map(|(x, (a, b))| x * (b - a))
            .sum::<f64>();
    }
    Ok(acc)
}

/// Discrete quadratic variation of `W_ell` on a grid:
/// `ell_T - sum_jumps d ell + sum_jumps |d W|^2`.
///
/// A grid increment counts as a jump when it exceeds
/// `max(10 * median(d ell), abs_threshold)`.
pub fn discrete_bracket(ell: &[f64], w_at_ell: &VectorPath, abs_threshold: f64) -> Result<f64> {
    check_len("noise vs clock", ell.len(), w_at_ell.len())?;
    if ell.is_empty() {
        return Err(Error::InsufficientData("empty clock".into()));
    }
    if !(abs_threshold >= 0.0) {
        return Err(invalid("abs_threshold", "must be nonnegative"));
    }
    let dl: Vec<f64> = ell.windows(2).map(|w| w[1] - w[0]).collect();
    if dl.iter().any(|d| *d < 0.0) {
        return Err(Error::DegeneratePath("clock values decrease".into()));
    }
    let threshold = if dl.is_empty() {
        abs_threshold
    } else {
        (10.0 * median(&dl)).max(abs_threshold)
    };
    let mut bracket = *ell.last().expect("non-empty");
    for (i, d) in dl.iter().enumerate() {
        if *d > threshold {
            let (w0, w1) = (w_at_ell.at(i), w_at_ell.at(i + 1));
            let sq: f64 = w0.iter().zip(w1).map(|(a, b)| (b - a) * (b - a)).sum();
            bracket += sq - d;
        }
    }
    Ok(bracket)
}
