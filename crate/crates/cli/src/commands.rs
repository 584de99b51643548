use std::path::{Path, PathBuf};

use serde::Serialize;

use scoredrive::conjugate::{default_init, run_conjugate_filter, ConjugateState};
use scoredrive::local::expansion_order_study;
use scoredrive::recursion::{fit_params, garch_map, run_recursion, FitBounds};
use scoredrive::simulate::simulate;
use scoredrive::verify::run_suite;
use scoredrive::{
    Dgp, EdmSpec, Family, GarchCoefficients, Link, QuadratureConfig, RecursionParams, Scheme,
    SimConfig, Suite,
};

use crate::args::{
    resolve, DgpKind, ExpansionArgs, FilterArgs, FitArgs, Mode, SimulateArgs, VerifyArgs, NODES_ENV,
};
use crate::table::{emit, num, read_series, Table};
use crate::CliError;

pub const DEFAULT_DELTA: f64 = 0.9;
pub const DEFAULT_PGRID: [f64; 5] = [1e-1, 3e-2, 1e-2, 3e-3, 1e-3];
pub const DEFAULT_LENGTH: usize = 1000;

fn required<T>(value: Option<T>, flag: &str) -> Result<T, CliError> {
    value.ok_or_else(|| CliError::Invalid(format!("--{flag} is required")))
}

fn spec_from(family: Option<&str>, dispersion: Option<f64>) -> Result<EdmSpec, CliError> {
    let family: Family = required(family, "family")?.parse()?;
    Ok(EdmSpec::for_family(family, dispersion.unwrap_or(1.0))?)
}

fn input_path(input: Option<PathBuf>) -> Result<PathBuf, CliError> {
    required(input, "input")
}

fn quadrature(
    nodes: Option<usize>,
    scheme: Option<&str>,
    fd_step: Option<f64>,
) -> Result<QuadratureConfig, CliError> {
    let nodes = match nodes {
        Some(n) => Some(n),
        None => match std::env::var(NODES_ENV) {
            Ok(v) => Some(v.trim().parse().map_err(|_| {
                CliError::Invalid(format!("{NODES_ENV} must be an integer, got '{v}'"))
            })?),
            Err(_) => None,
        },
    };
    let mut cfg = QuadratureConfig::default();
    if let Some(s) = scheme {
        cfg.scheme = s.parse::<Scheme>()?;
    }
    cfg.node_count = nodes;
    if let Some(h) = fd_step {
        cfg.fd_step = h;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn output(path: &Option<PathBuf>) -> Option<&Path> {
    path.as_deref()
}

pub fn filter(flags: FilterArgs) -> Result<(), CliError> {
    let a = resolve(flags.clone(), &flags.common)?;
    let spec = spec_from(a.family.as_deref(), a.dispersion)?;
    let ys = read_series(&input_path(a.input)?)?;
    let delta = a.delta.unwrap_or(DEFAULT_DELTA);
    let mut table;
    match a.mode.unwrap_or(Mode::Conjugate) {
        Mode::Conjugate => {
            let mut init = default_init(&spec, &ys, delta, a.mu0)?;
            if let Some(n0) = a.n0 {
                init = ConjugateState::from_mean(init.mean(), n0)?;
            }
            let trace = run_conjugate_filter(&spec, &ys, delta, init)?;
            table = Table::new(&[
                "t",
                "y",
                "mu_pred",
                "mu_filt",
                "tau",
                "n",
                "score",
                "innovation",
            ]);
            for s in &trace.steps {
                table.row(&[
                    s.t.to_string(),
                    num(s.y),
                    num(s.mu_pred),
                    num(s.mu_filt),
                    num(s.tau),
                    num(s.n),
                    num(s.score),
                    num(s.innovation),
                ]);
            }
        }
        Mode::Score => {
            let params = match (a.omega, a.beta, a.alpha) {
                (Some(omega), Some(beta), Some(alpha)) => RecursionParams::new(omega, beta, alpha),
                // the discounted filter in score form
                (None, None, None) => RecursionParams::new(0.0, 1.0, 1.0 - delta),
                _ => {
                    return Err(CliError::Invalid(
                        "--omega, --beta and --alpha must be given together".to_string(),
                    ))
                }
            };
            let mut params = params
                .with_d(a.d.unwrap_or(1.0))
                .with_link(a.link.as_deref().unwrap_or("identity").parse::<Link>()?);
            if let Some(t) = a.theta1.or(a.mu0) {
                params = params.with_theta1(t);
            }
            let trace = run_recursion(&spec, &params, &ys)?;
            table = Table::new(&[
                "t",
                "y",
                "theta",
                "mu",
                "score",
                "scaling",
                "innovation",
                "loglik",
                "theta_next",
            ]);
            for s in &trace.steps {
                table.row(&[
                    s.t.to_string(),
                    num(s.y),
                    num(s.theta),
                    num(s.mu),
                    num(s.score),
                    num(s.scaling),
                    num(s.innovation),
                    num(s.loglik),
                    num(s.theta_next),
                ]);
            }
            if trace.floored_steps() > 0 {
                eprintln!(
                    "warning: {} steps floored at the positivity bound",
                    trace.floored_steps()
                );
            }
        }
    }
    emit(output(&a.common.output), &table.into_string())
}

pub fn verify(flags: VerifyArgs) -> Result<bool, CliError> {
    let a = resolve(flags.clone(), &flags.common)?;
    let suite: Suite = a.suite.as_deref().unwrap_or("all").parse()?;
    let cfg = quadrature(a.nodes, a.scheme.as_deref(), a.fd_step)?;
    let reports = run_suite(suite, &cfg)?;
    let mut text = serde_json::to_string_pretty(&reports)
        .map_err(|e| CliError::Invalid(format!("serializing reports: {e}")))?;
    text.push('\n');
    emit(output(&a.common.output), &text)?;
    let failed = reports.iter().filter(|r| !r.pass).count();
    if failed > 0 {
        eprintln!("{failed} of {} identity checks failed", reports.len());
    }
    Ok(failed == 0)
}

pub fn expansion(flags: ExpansionArgs) -> Result<(), CliError> {
    let a = resolve(flags.clone(), &flags.common)?;
    let spec = spec_from(a.family.as_deref(), a.dispersion)?;
    let mean = required(a.a, "a")?;
    let y = required(a.y, "y")?;
    let grid = a.pgrid.unwrap_or_else(|| DEFAULT_PGRID.to_vec());
    let cfg = quadrature(a.nodes, a.scheme.as_deref(), a.fd_step)?;
    let study = expansion_order_study(&spec, mean, y, &grid, &cfg)?;
    let mut table = Table::new(&["P", "error"]);
    for (p, e) in study.p_grid.iter().zip(&study.errors) {
        table.row(&[num(*p), num(*e)]);
    }
    table.line(&format!("slope={}", num(study.fitted_slope)));
    if !study.dropped.is_empty() {
        eprintln!(
            "note: {} grid points below the error floor were dropped",
            study.dropped.len()
        );
    }
    emit(output(&a.common.output), &table.into_string())
}

fn dgp_from(a: &SimulateArgs) -> Result<Dgp, CliError> {
    let family = |a: &SimulateArgs| -> Result<Family, CliError> {
        Ok(required(a.family.as_deref(), "family")?.parse()?)
    };
    Ok(match required(a.dgp, "dgp")? {
        DgpKind::Garch11 => Dgp::Garch11 {
            omega: required(a.omega, "omega")?,
            alpha: required(a.alpha, "alpha")?,
            beta: required(a.beta, "beta")?,
        },
        DgpKind::NefConstant => Dgp::NefConstant {
            family: family(a)?,
            mu: required(a.mu, "mu")?,
            dispersion: a.dispersion.unwrap_or(1.0),
        },
        DgpKind::NefRandomWalkMean => Dgp::NefRandomWalkMean {
            family: family(a)?,
            step_sd: required(a.step_sd, "step-sd")?,
            mu0: required(a.mu0, "mu0")?,
            dispersion: a.dispersion.unwrap_or(1.0),
        },
        DgpKind::GaussianLocalLevel => Dgp::GaussianLocalLevel {
            state_var: required(a.state_var, "state-var")?,
            obs_var: required(a.obs_var, "obs-var")?,
        },
    })
}

pub fn simulate_cmd(flags: SimulateArgs) -> Result<(), CliError> {
    let a = resolve(flags.clone(), &flags.common)?;
    let mut cfg = SimConfig::new(
        dgp_from(&a)?,
        a.length.unwrap_or(DEFAULT_LENGTH),
        a.seed.unwrap_or(0),
    );
    if let Some(b) = a.burn_in {
        cfg = cfg.with_burn_in(b);
    }
    let out = simulate(&cfg)?;
    let mut table = match out.latent {
        Some(_) => Table::new(&["t", "y", "latent"]),
        None => Table::new(&["t", "y"]),
    };
    for (i, y) in out.y.iter().enumerate() {
        let mut cells = vec![(i + 1).to_string(), num(*y)];
        if let Some(latent) = &out.latent {
            cells.push(num(latent[i]));
        }
        table.row(&cells);
    }
    emit(output(&a.common.output), &table.into_string())
}

#[derive(Serialize)]
struct FitReport {
    family: Family,
    link: Link,
    d: f64,
    omega: f64,
    beta: f64,
    alpha: f64,
    loglik: f64,
    converged: bool,
    evaluations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    garch: Option<GarchCoefficients>,
}

pub fn fit(flags: FitArgs) -> Result<(), CliError> {
    let a = resolve(flags.clone(), &flags.common)?;
    let spec = spec_from(a.family.as_deref(), a.dispersion)?;
    let ys = read_series(&input_path(a.input)?)?;
    let link: Link = a.link.as_deref().unwrap_or("identity").parse()?;
    let d = a.d.unwrap_or(1.0);
    let bounds = FitBounds::default_for(&spec, link, &ys);
    let level = ys.iter().map(|y| spec.statistic(*y)).sum::<f64>() / ys.len() as f64;
    let level = match link {
        Link::Identity => level,
        Link::Log => level.max(1e-8).ln(),
    };
    let beta = a.beta.unwrap_or(0.9);
    let mut init = RecursionParams::new(
        a.omega.unwrap_or(level * (1.0 - beta)),
        beta,
        a.alpha.unwrap_or(0.05),
    )
    .with_d(d)
    .with_link(link);
    if let Some(t) = a.theta1 {
        init = init.with_theta1(t);
    }
    let res = fit_params(&spec, &ys, link, d, &init, &bounds)?;
    let p = res.params;
    let garch = (spec.family() == Family::GaussianVariance && link == Link::Identity && d == 1.0)
        .then(|| garch_map(p.omega, p.beta, p.alpha));
    let report = FitReport {
        family: spec.family(),
        link,
        d,
        omega: p.omega,
        beta: p.beta,
        alpha: p.alpha,
        loglik: res.loglik,
        converged: res.converged,
        evaluations: res.evaluations,
        garch,
    };
    if !res.converged {
        eprintln!("warning: optimizer stopped at its evaluation limit");
    }
    let mut text = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::Invalid(format!("serializing fit: {e}")))?;
    text.push('\n');
    emit(output(&a.common.output), &text)
}
