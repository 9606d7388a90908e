//! Building library objects from a [`Config`].

use belstable_core::bel::{EstimatorConfig, DEFAULT_STEPS};
use belstable_core::spde::ConvolutionScheme;
use belstable_core::{
    Clock, DiffusionMatrix, DriftModel, NonlinearityF, SpectralModel, StableParams, TestFunction,
};

use crate::config::Config;
use crate::error::{CliError, CliResult};

pub fn params(cfg: &Config) -> CliResult<StableParams> {
    Ok(StableParams::new(cfg.get("alpha")?)?)
}

pub fn dim(cfg: &Config) -> CliResult<usize> {
    let d: usize = cfg.get("dim")?;
    if d < 1 {
        return Err(CliError::field("dim", "must be at least 1"));
    }
    Ok(d)
}

pub fn seed(cfg: &Config) -> CliResult<u64> {
    cfg.get_or("seed", 0)
}

fn sized(cfg: &Config, key: &str, d: usize) -> CliResult<Vec<f64>> {
    let v = cfg.list(key)?;
    if v.len() != d {
        return Err(CliError::field(key, format!("expected {d} entries, found {}", v.len())));
    }
    Ok(v)
}

pub fn drift(cfg: &Config, d: usize) -> CliResult<DriftModel> {
    let kind = cfg.str_or("drift", "zero");
    Ok(match kind {
        "zero" => DriftModel::zero(d)?,
        "linear" => DriftModel::linear(d, sized(cfg, "drift.matrix", d * d)?)?,
        "ou" => DriftModel::ou(d, cfg.get("drift.kappa")?)?,
        "rotating" => DriftModel::rotating(d, cfg.get("drift.omega")?)?,
        "arctan" => DriftModel::arctan(d, cfg.get("drift.theta")?, cfg.get_or("drift.shift", 0.0)?)?,
        other => return Err(CliError::field("drift", format!("unknown drift `{other}`"))),
    })
}

pub fn diffusion(cfg: &Config, d: usize) -> CliResult<DiffusionMatrix> {
    Ok(match cfg.str_or("sigma", "identity") {
        "identity" => DiffusionMatrix::identity(d)?,
        "diag" => DiffusionMatrix::diagonal(&sized(cfg, "sigma.diag", d)?)?,
        "matrix" => DiffusionMatrix::from_row_major(d, sized(cfg, "sigma.matrix", d * d)?)?,
        other => return Err(CliError::field("sigma", format!("unknown sigma `{other}`"))),
    })
}

pub fn test_function(cfg: &Config) -> CliResult<TestFunction> {
    let kind = cfg.str("f")?;
    Ok(match kind {
        "constant" => TestFunction::Constant(cfg.get_or("f.value", 1.0)?),
        "linear" => TestFunction::Linear(cfg.list("f.weights")?),
        "arctan" => TestFunction::Arctan(cfg.list("f.weights")?),
        "gaussian-bump" => TestFunction::GaussianBump {
            center: cfg.list("f.center")?,
            width: cfg.get("f.width")?,
        },
        "step" => TestFunction::Step {
            coord: cfg.get_or("f.coord", 0)?,
            threshold: cfg.get_or("f.threshold", 0.0)?,
        },
        other => return Err(CliError::field("f", format!("unknown test function `{other}`"))),
    })
}

fn unit(d: usize) -> Vec<f64> {
    let mut e = vec![0.0; d];
    e[0] = 1.0;
    e
}

pub fn estimator(cfg: &Config) -> CliResult<EstimatorConfig> {
    let d = dim(cfg)?;
    let n_paths: usize = cfg.get("n_paths")?;
    if n_paths < 1 {
        return Err(CliError::field("n_paths", "must be at least 1"));
    }
    let steps: usize = cfg.get_or("grid_size", DEFAULT_STEPS)?;
    if steps < 1 {
        return Err(CliError::field("grid_size", "must be at least 1"));
    }
    let t: f64 = cfg.get_or("t", 1.0)?;
    if !(t > 0.0 && t.is_finite()) {
        return Err(CliError::field("t", "must be positive"));
    }
    let e = EstimatorConfig {
        drift: drift(cfg, d)?,
        diff: diffusion(cfg, d)?,
        x0: if cfg.contains("x0") { sized(cfg, "x0", d)? } else { vec![0.0; d] },
        h: if cfg.contains("h") { sized(cfg, "h", d)? } else { unit(d) },
        t,
        params: params(cfg)?,
        steps,
        n_paths,
        seed: seed(cfg)?,
    };
    e.validate()?;
    Ok(e)
}

pub fn t_grid(cfg: &Config) -> CliResult<Vec<f64>> {
    let v = cfg.list("t_grid")?;
    if v.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
        return Err(CliError::field("t_grid", "horizons must be positive"));
    }
    Ok(v)
}

/// Spectral model under `spde.*`; the clock is stable unless `spde.clock = brownian`.
pub fn spectral(cfg: &Config) -> CliResult<SpectralModel> {
    let n: usize = cfg.get("spde.n")?;
    let clock = match cfg.str_or("spde.clock", "stable") {
        "stable" => Clock::Stable(params(cfg)?),
        "brownian" => Clock::Identity,
        other => return Err(CliError::field("spde.clock", format!("unknown clock `{other}`"))),
    };
    let model = match cfg.list_opt("spde.betas")? {
        Some(b) => {
            if b.len() != n {
                return Err(CliError::field("spde.betas", format!("expected {n} entries")));
            }
            SpectralModel::new(belstable_core::spde::heat_eigenvalues(n)?, b, clock)?
        }
        None => SpectralModel::heat(n, cfg.get_or("spde.beta", 1.0)?, clock)?,
    };
    let scheme: ConvolutionScheme = cfg.str_or("spde.scheme", "exponential-matched").parse()?;
    Ok(model.with_scheme(scheme))
}

pub fn nonlinearity(cfg: &Config) -> CliResult<NonlinearityF> {
    Ok(match cfg.str_or("spde.f", "zero") {
        "zero" => NonlinearityF::Zero,
        "constant" => NonlinearityF::Constant(cfg.list("spde.f.values")?),
        "arctan" => NonlinearityF::scaled_arctan(cfg.get_or("spde.f.scale", 0.5)?),
        other => return Err(CliError::field("spde.f", format!("unknown nonlinearity `{other}`"))),
    })
}

/// Coefficient vector under `key`, zero-padded or checked to length `n`.
pub fn coeffs(cfg: &Config, key: &str, n: usize) -> CliResult<Vec<f64>> {
    match cfg.list_opt(key)? {
        None => Ok(vec![0.0; n]),
        Some(v) if v.len() <= n => {
            let mut out = v;
            out.resize(n, 0.0);
            Ok(out)
        }
        Some(v) => Err(CliError::field(key, format!("{} entries for {n} modes", v.len()))),
    }
}
