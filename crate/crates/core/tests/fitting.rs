use scoredrive::recursion::{fit_params, run_recursion, scaling, FitBounds};
use scoredrive::simulate::simulate;
use scoredrive::{Dgp, EdmSpec, Family, Link, RecursionParams, SimConfig};

fn garch_sample(seed: u64, length: usize) -> Vec<f64> {
    let cfg = SimConfig::new(
        Dgp::Garch11 {
            omega: 0.1,
            alpha: 0.05,
            beta: 0.9,
        },
        length,
        seed,
    );
    simulate(&cfg).unwrap().y
}

#[test]
fn variance_fit_recovers_simulated_parameters() {
    let spec = EdmSpec::gaussian_variance();
    let ys = garch_sample(1, 2000);
    let init = RecursionParams::new(0.2, 0.9, 0.1);
    let bounds = FitBounds::default_for(&spec, Link::Identity, &ys);
    let fit = fit_params(
        &spec,
        &ys,
        Link::Identity,
        scaling::INVERSE_FISHER,
        &init,
        &bounds,
    )
    .unwrap();
    let p = fit.params;
    assert!((p.beta - 0.95).abs() < 0.03, "{p:?}");
    assert!((p.alpha - 0.05).abs() < 0.03, "{p:?}");
    assert!(p.omega > 0.0 && p.omega < 0.3, "{p:?}");

    let truth = RecursionParams::new(0.1, 0.95, 0.05);
    let at_truth = run_recursion(&spec, &truth, &ys).unwrap().loglik;
    assert!(fit.loglik >= at_truth, "{} < {at_truth}", fit.loglik);
}

#[test]
fn fit_is_deterministic() {
    let spec = EdmSpec::gaussian_variance();
    let ys = garch_sample(7, 300);
    let init = RecursionParams::new(0.2, 0.9, 0.1);
    let bounds = FitBounds::default_for(&spec, Link::Identity, &ys);
    let a = fit_params(&spec, &ys, Link::Identity, 1.0, &init, &bounds).unwrap();
    let b = fit_params(&spec, &ys, Link::Identity, 1.0, &init, &bounds).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.loglik.to_bits(), b.loglik.to_bits());
}

#[test]
fn constant_counts_fit_their_level() {
    let spec = EdmSpec::poisson();
    let ys = vec![3.0; 200];
    let init = RecursionParams::new(0.5, 0.5, 0.1);
    let bounds = FitBounds::default_for(&spec, Link::Identity, &ys);
    let fit = fit_params(&spec, &ys, Link::Identity, 1.0, &init, &bounds).unwrap();
    let level = fit.params.omega / (1.0 - fit.params.beta);
    assert!((level - 3.0).abs() < 1e-3, "{:?}", fit.params);
}

#[test]
fn log_link_count_fit_runs() {
    let spec = EdmSpec::poisson();
    let cfg = SimConfig::new(
        Dgp::NefConstant {
            family: Family::Poisson,
            mu: 4.0,
            dispersion: 1.0,
        },
        400,
        3,
    );
    let ys = simulate(&cfg).unwrap().y;
    let init = RecursionParams::new(0.5, 0.5, 0.1).with_link(Link::Log);
    let bounds = FitBounds::default_for(&spec, Link::Log, &ys);
    let fit = fit_params(&spec, &ys, Link::Log, 1.0, &init, &bounds).unwrap();
    let level = (fit.params.omega / (1.0 - fit.params.beta)).exp();
    assert!((level - 4.0).abs() < 0.4, "{:?}", fit.params);
}

#[test]
fn too_short_series_is_rejected() {
    let spec = EdmSpec::poisson();
    let ys = vec![1.0; 5];
    let init = RecursionParams::new(0.5, 0.5, 0.1);
    let bounds = FitBounds::default_for(&spec, Link::Identity, &ys);
    assert!(fit_params(&spec, &ys, Link::Identity, 1.0, &init, &bounds).is_err());
}
