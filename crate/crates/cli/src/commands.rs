//! One function per subcommand. Each returns the tables to write, keyed by
//! file name, and never touches the file system itself.

use belstable_core::bel::{
    estimate, fd_oracle, gine_marcus_tail_check, sample_path_noise,
    weight_moment_scaling, EstimatorTag, DEFAULT_FD_STEP,
};
use belstable_core::sde::{solve_sde_euler, solve_variational};
use belstable_core::spde::{
    convolution_moment_check, galerkin_convergence_check, render, sample_mode_increments,
    solve_mild_galerkin, strong_feller_gap,
};
use belstable_core::stable::{empirical_laplace_check, sample_subordinator_path, uniform_grid};
use belstable_core::timechange::{invert, smooth};
use belstable_core::{CadlagIncreasingPath, Clock, KnotRule, RandomStream};

use crate::config::Config;
use crate::error::{CliError, CliResult};
use crate::models;
use crate::output::{num, Table};

pub type Artifacts = Vec<(String, Table)>;

fn single(cfg: &Config, default_name: &str, table: Table) -> Artifacts {
    let name = cfg.str_or("output", default_name).to_string();
    vec![(name, table)]
}

fn positive_count(cfg: &Config, key: &str, default: usize) -> CliResult<usize> {
    let n: usize = cfg.get_or(key, default)?;
    if n < 1 {
        return Err(CliError::field(key, "must be at least 1"));
    }
    Ok(n)
}

pub fn sample_subordinator(cfg: &Config) -> CliResult<Artifacts> {
    let p = models::params(cfg)?;
    let t: f64 = cfg.get_or("t", 1.0)?;
    let grid = uniform_grid(t, positive_count(cfg, "grid_size", 100)?);
    let n = positive_count(cfg, "n_paths", 1)?;
    let seed = models::seed(cfg)?;
    let mut table = Table::new(&["path", "t", "S"]);
    for i in 0..n {
        let path = sample_subordinator_path(p, &grid, RandomStream::new(seed, i as u64))?;
        for (t, s) in path.grid().iter().zip(path.values()) {
            table.push(vec![i.to_string(), num(*t), num(*s)]);
        }
    }
    Ok(single(cfg, "sample-subordinator.csv", table))
}

pub fn laplace_check(cfg: &Config) -> CliResult<Artifacts> {
    let p = models::params(cfg)?;
    let lambdas = cfg.list_opt("lambdas")?.unwrap_or_else(|| vec![0.25, 1.0, 4.0]);
    let n: usize = cfg.get_or("n_paths", 1_000_000)?;
    let rows = empirical_laplace_check(p, &lambdas, n, RandomStream::new(models::seed(cfg)?, 0))?;
    let mut table = Table::new(&["lambda", "empirical", "exact", "std_err", "z"]);
    for r in rows {
        table.push(vec![num(r.lambda), num(r.empirical), num(r.exact), num(r.std_err), num(r.z)]);
    }
    Ok(single(cfg, "laplace-check.csv", table))
}

pub fn simulate_sde(cfg: &Config) -> CliResult<Artifacts> {
    let e = models::estimator(cfg)?;
    let index: usize = cfg.get_or("path", 0)?;
    let grid = e.grid();
    let noise = sample_path_noise(Clock::Stable(e.params), &grid, e.dim(), e.seed, index)?;
    let flow = solve_sde_euler(&e.drift, &e.diff, &e.x0, &grid, &noise.w)?;
    let flow = solve_variational(&e.drift, &flow, &e.h)?;
    let csv = flow.to_csv();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
    let mut table = Table::new(&header);
    for l in lines {
        table.push(l.split(',').map(str::to_string).collect());
    }
    Ok(single(cfg, "simulate-sde.csv", table))
}

fn estimator_tag(cfg: &Config) -> CliResult<EstimatorTag> {
    Ok(match cfg.str_or("estimator", "bel") {
        "bel" | "BEL-stable" => EstimatorTag::BelStable,
        "for2" | "BEL-brownian-For2" => EstimatorTag::BelBrownianFor2,
        "for1" | "Bismut-For1" => EstimatorTag::BismutFor1,
        "fd" | "FD" => EstimatorTag::FiniteDifference,
        other => return Err(CliError::field("estimator", format!("unknown estimator `{other}`"))),
    })
}

const GRADIENT_HEADER: [&str; 7] = ["estimator", "direction", "value", "std_err", "n", "rejected", "heavy_tail"];

fn gradient_table(cfg: &Config, tag: EstimatorTag, default_name: &str) -> CliResult<Artifacts> {
    let e = models::estimator(cfg)?;
    let f = models::test_function(cfg)?;
    let fd_step: f64 = cfg.get_or("fd.step", DEFAULT_FD_STEP)?;
    let run = |c: &belstable_core::EstimatorConfig| match tag {
        EstimatorTag::FiniteDifference => fd_oracle(c, &f, fd_step),
        _ => estimate(c, &f, tag),
    };
    let results = if cfg.contains("h") {
        vec![("h".to_string(), run(&e)?)]
    } else {
        (0..e.dim())
            .map(|k| {
                let mut h = vec![0.0; e.dim()];
                h[k] = 1.0;
                Ok((format!("e{}", k + 1), run(&e.with_h(h))?))
            })
            .collect::<CliResult<Vec<_>>>()?
    };
    let mut table = Table::new(&GRADIENT_HEADER);
    for (dir, g) in results {
        table.push(vec![
            g.tag.as_str().to_string(),
            dir,
            num(g.value),
            num(g.std_err),
            g.n.to_string(),
            g.rejected.to_string(),
            u8::from(g.heavy_tail).to_string(),
        ]);
    }
    Ok(single(cfg, default_name, table))
}

pub fn estimate_gradient(cfg: &Config) -> CliResult<Artifacts> {
    gradient_table(cfg, estimator_tag(cfg)?, "estimate-gradient.csv")
}

pub fn fd_oracle_cmd(cfg: &Config) -> CliResult<Artifacts> {
    gradient_table(cfg, EstimatorTag::FiniteDifference, "fd-oracle.csv")
}

const REPORT_HEADER: [&str; 5] = ["t", "n", "quantity", "value", "std_err"];

fn report_row(t: Option<f64>, n: usize, quantity: &str, value: f64, se: f64) -> Vec<String> {
    vec![
        t.map(num).unwrap_or_default(),
        n.to_string(),
        quantity.to_string(),
        num(value),
        num(se),
    ]
}

pub fn gradient_scaling(cfg: &Config) -> CliResult<Artifacts> {
    let e = models::estimator(cfg)?;
    let q: f64 = cfg.get_or("q", 1.0)?;
    let fit = weight_moment_scaling(&e, q, &models::t_grid(cfg)?)?;
    let mut table = Table::new(&REPORT_HEADER);
    for p in &fit.points {
        table.push(report_row(Some(p.t), e.n_paths, "moment_norm", p.moment_norm, p.moment_norm * p.log_se));
    }
    table.push(report_row(None, e.n_paths, "slope", fit.slope, fit.slope_se));
    table.push(report_row(None, e.n_paths, "target_slope", -1.0 / e.params.alpha(), 0.0));
    Ok(single(cfg, "gradient-scaling.csv", table))
}

pub fn tail_check(cfg: &Config) -> CliResult<Artifacts> {
    let e = models::estimator(cfg)?;
    let lambdas = cfg.list_opt("tail.lambdas")?;
    let fit = gine_marcus_tail_check(&e, lambdas.as_deref())?;
    let n = e.n_paths;
    let mut table = Table::new(&["lambda", "n", "quantity", "value", "std_err"]);
    for (l, p) in fit.lambdas.iter().zip(&fit.probs) {
        table.push(vec![num(*l), n.to_string(), "tail_prob".into(), num(*p), num((p * (1.0 - p) / n as f64).sqrt())]);
    }
    table.push(vec![String::new(), n.to_string(), "exponent".into(), num(fit.exponent), num(fit.exponent_se)]);
    table.push(vec![String::new(), n.to_string(), "target_exponent".into(), num(-e.params.alpha()), num(0.0)]);
    Ok(single(cfg, "tail-check.csv", table))
}

pub fn spde_convolution(cfg: &Config) -> CliResult<Artifacts> {
    let model = models::spectral(cfg)?;
    let p: f64 = cfg.get_or("spde.p", 1.0)?;
    let dt: f64 = cfg.get_or("spde.dt", 1e-3)?;
    let slack: f64 = cfg.get_or("spde.slack", 1.5)?;
    let n = positive_count(cfg, "n_paths", 1000)?;
    let r = convolution_moment_check(&model, p, &models::t_grid(cfg)?, n, dt, models::seed(cfg)?, slack)?;
    let modes = model.n();
    let mut table = Table::new(&REPORT_HEADER);
    for pt in &r.points {
        table.push(report_row(Some(pt.t), modes, "moment", pt.mean, pt.std_err));
        table.push(report_row(Some(pt.t), modes, "bound", pt.bound, 0.0));
    }
    table.push(report_row(None, modes, "fitted_c", r.fitted_c, 0.0));
    table.push(report_row(None, modes, "slope", r.slope, 0.0));
    table.push(report_row(None, modes, "bound_holds", f64::from(u8::from(r.bound_holds)), 0.0));
    Ok(single(cfg, "spde-convolution.csv", table))
}

pub fn spde_solve(cfg: &Config) -> CliResult<Artifacts> {
    let model = models::spectral(cfg)?;
    let f = models::nonlinearity(cfg)?;
    let t: f64 = cfg.get_or("t", 1.0)?;
    let grid = uniform_grid(t, positive_count(cfg, "grid_size", 1000)?);
    let x = models::coeffs(cfg, "spde.x", model.n())?;
    let index: usize = cfg.get_or("path", 0)?;
    let noise = sample_mode_increments(model.clock, &grid, model.n(), models::seed(cfg)?, index)?;
    let state = solve_mild_galerkin(&model, &f, &x, &noise)?;
    let mut table = Table::new(&REPORT_HEADER);
    for (k, c) in state.terminal().iter().enumerate() {
        table.push(report_row(Some(t), model.n(), &format!("coeff_{}", k + 1), *c, 0.0));
    }
    let mut out = single(cfg, "spde-solve.csv", table);
    let points: usize = cfg.get_or("spde.render_points", 0)?;
    if points > 0 {
        let zs: Vec<f64> = (0..=points).map(|i| i as f64 / points as f64).collect();
        let mut r = Table::new(&["z", "u"]);
        for (z, u) in zs.iter().zip(render(state.terminal(), &zs)) {
            r.push(vec![num(*z), num(u)]);
        }
        out.push(("spde-solve-render.csv".to_string(), r));
    }
    Ok(out)
}

pub fn spde_gap(cfg: &Config) -> CliResult<Artifacts> {
    let model = models::spectral(cfg)?;
    let nl = models::nonlinearity(cfg)?;
    let f = models::test_function(cfg)?;
    let x = models::coeffs(cfg, "spde.x", model.n())?;
    let y = models::coeffs(cfg, "spde.y", model.n())?;
    let ts = match cfg.list_opt("t_grid")? {
        Some(_) => models::t_grid(cfg)?,
        None => vec![cfg.get_or("t", 1.0)?],
    };
    let dt: f64 = cfg.get_or("spde.dt", 1e-3)?;
    let n = positive_count(cfg, "n_paths", 1000)?;
    let seed = models::seed(cfg)?;
    let mut table = Table::new(&REPORT_HEADER);
    for t in ts {
        let steps = (t / dt).ceil().max(1.0) as usize;
        let g = strong_feller_gap(&model, &nl, &f, &x, &y, t, steps, n, seed)?;
        table.push(report_row(Some(t), model.n(), "gap", g.gap, g.std_err));
        table.push(report_row(Some(t), model.n(), "effective_constant", g.effective_constant, 0.0));
    }
    Ok(single(cfg, "spde-gap.csv", table))
}

pub fn galerkin_cauchy(cfg: &Config) -> CliResult<Artifacts> {
    let levels = cfg.usize_list("spde.levels")?;
    let n_max = *levels.iter().max().ok_or_else(|| CliError::field("spde.levels", "empty"))?;
    let mut c = cfg.clone();
    if !c.contains("spde.n") {
        c.set("spde.n", n_max.to_string());
    }
    let model = models::spectral(&c)?;
    let nl = models::nonlinearity(cfg)?;
    let x = models::coeffs(cfg, "spde.x", n_max)?;
    let t: f64 = cfg.get_or("t", 1.0)?;
    let steps = positive_count(cfg, "grid_size", 1000)?;
    let n = positive_count(cfg, "n_paths", 500)?;
    let r = galerkin_convergence_check(&model, &levels, &nl, &x, t, steps, n, models::seed(cfg)?)?;
    let mut table = Table::new(&REPORT_HEADER);
    for (lvl, m) in r.levels.iter().zip(&r.medians) {
        table.push(report_row(Some(t), *lvl, "median_deviation", *m, 0.0));
    }
    table.push(report_row(None, n_max, "monotone", f64::from(u8::from(r.monotone)), 0.0));
    table.push(report_row(None, n_max, "envelope_c", r.envelope_c, 0.0));
    Ok(single(cfg, "galerkin-cauchy.csv", table))
}

pub fn timechange_demo(cfg: &Config) -> CliResult<Artifacts> {
    let times = cfg.list("tc.times")?;
    let values = cfg.list("tc.values")?;
    let rule: KnotRule = cfg.str_or("tc.rule", "piecewise-constant").parse()?;
    let horizon: f64 = cfg.get_or("tc.horizon", times.last().copied().unwrap_or(1.0))?;
    let ell = CadlagIncreasingPath::new(times, values, rule, horizon)?;
    let s = smooth(&ell, cfg.get("tc.epsilon")?)?;
    let inv = invert(&s);
    let steps = positive_count(cfg, "tc.steps", 100)?;
    let mut table = Table::new(&["t", "ell", "ell_eps", "derivative", "round_trip_error"]);
    for t in uniform_grid(horizon, steps) {
        let v = s.value(t);
        let back = inv.value(v)?;
        table.push(vec![num(t), num(ell.value(t)), num(v), num(s.derivative(t)), num((back - t).abs())]);
    }
    Ok(single(cfg, "timechange-demo.csv", table))
}
