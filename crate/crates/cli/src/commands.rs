use archgrad_core::checks::{gradcheck_suite, GradcheckResult};
use archgrad_core::estimators::{BilevelState, EstimatorKind};
use archgrad_core::oracle::{
    dense_amended_g2, exact_g2, extract_curvature, oracle_check, OracleCheckConfig, OracleSettings,
};
use archgrad_core::problem::ScalarToy;
use archgrad_core::search::{bilevel_search, generate_dataset, retrain, toy_trace, SearchConfig, ToyConfig};
use log::info;
use serde_json::{json, Value};

use crate::output::{Failure, OutDir};
use crate::{EstimatorArg, EstimatorArgs, GradcheckArgs, OracleArgs, SearchArgs, ToyArgs};

const DEFAULT_XI: f64 = 0.05;
const DEFAULT_DELTA: f64 = 1e-3;

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("config serialises")
}

/// Applies `--estimator/--eta/--xi/--delta` on top of `base`. A parameter
/// flag that does not belong to the resulting estimator is a usage error.
fn resolve_estimator(args: &EstimatorArgs, base: EstimatorKind, default_eta: f64) -> Result<EstimatorKind, Failure> {
    let kind = match args.estimator {
        None => base,
        Some(EstimatorArg::FirstOrder) => EstimatorKind::FirstOrder,
        Some(EstimatorArg::Exact) => EstimatorKind::ExactImplicit,
        Some(EstimatorArg::Amended) => EstimatorKind::Amended {
            eta: match base {
                EstimatorKind::Amended { eta } => eta,
                _ => default_eta,
            },
        },
        Some(EstimatorArg::SecondOrderDarts) => EstimatorKind::SecondOrderDarts {
            xi: match base {
                EstimatorKind::SecondOrderDarts { xi } => xi,
                _ => DEFAULT_XI,
            },
        },
        Some(EstimatorArg::BruteForce) => EstimatorKind::BruteForce {
            delta: match base {
                EstimatorKind::BruteForce { delta } => delta,
                _ => DEFAULT_DELTA,
            },
        },
    };
    let stray = |flag: &str| Failure::Usage(format!("--{flag} does not apply to the {} estimator", kind.label()));
    let kind = match kind {
        EstimatorKind::Amended { eta } => EstimatorKind::Amended {
            eta: args.eta.unwrap_or(eta),
        },
        EstimatorKind::SecondOrderDarts { xi } => EstimatorKind::SecondOrderDarts {
            xi: args.xi.unwrap_or(xi),
        },
        EstimatorKind::BruteForce { delta } => EstimatorKind::BruteForce {
            delta: args.delta.unwrap_or(delta),
        },
        k => k,
    };
    if args.eta.is_some() && !matches!(kind, EstimatorKind::Amended { .. }) {
        return Err(stray("eta"));
    }
    if args.xi.is_some() && !matches!(kind, EstimatorKind::SecondOrderDarts { .. }) {
        return Err(stray("xi"));
    }
    if args.delta.is_some() && !matches!(kind, EstimatorKind::BruteForce { .. }) {
        return Err(stray("delta"));
    }
    kind.validate()?;
    Ok(kind)
}

pub fn run_toy(args: &ToyArgs, out: &OutDir) -> Result<(), Failure> {
    let base = ToyConfig::default();
    let cfg = ToyConfig {
        estimator: resolve_estimator(&args.estimator, base.estimator, 0.5)?,
        steps: args.steps,
        alpha_lr: args.lr,
        init_alpha: args.init,
    };
    let trace = toy_trace(&cfg)?;
    let converged = trace.converged();
    println!(
        "{}: {} after {} steps, final alpha {:e}",
        cfg.estimator.label(),
        match (converged, trace.diverged_at) {
            (true, _) => "converged".to_string(),
            (false, Some(s)) => format!("diverged at step {s}"),
            (false, None) => "not converged".to_string(),
        },
        trace.steps.len() - 1,
        trace.final_alpha()
    );
    out.write("trajectory.csv", &trace.to_csv())?;
    out.write_json(
        "summary.json",
        &json!({
            "estimator": cfg.estimator,
            "converged": converged,
            "final_alpha": trace.final_alpha(),
            "diverged_at": trace.diverged_at,
        }),
    )?;
    out.finish("toy", to_value(&cfg), None)?;
    if args.expect_converge && !converged {
        return Err(Failure::Numerical(format!("{} did not converge", cfg.estimator.label())));
    }
    Ok(())
}

/// Reads and validates the config with overrides applied. Nothing is
/// written before this succeeds.
pub fn load_search_config(args: &SearchArgs) -> Result<SearchConfig, Failure> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", args.config.display())))?;
    let mut cfg: SearchConfig =
        toml::from_str(&text).map_err(|e| Failure::Usage(format!("invalid config {}: {e}", args.config.display())))?;
    cfg.estimator = resolve_estimator(&args.estimator, cfg.estimator, 0.1)?;
    if let Some(e) = args.epochs {
        cfg.epochs = e;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
        cfg.dataset.seed = s;
    }
    if let Some(lr) = args.alpha_lr {
        cfg.alpha_lr = lr;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run_search(args: &SearchArgs, out: &OutDir) -> Result<(), Failure> {
    let cfg = load_search_config(args)?;
    info!("searching with {} for {} epochs", cfg.estimator.label(), cfg.epochs);
    let result = bilevel_search(&cfg)?;
    let last = result.trajectory.last();
    let mut summary = json!({
        "estimator": cfg.estimator,
        "epochs": cfg.epochs,
        "seed": cfg.seed,
        "final": last,
        "genotype_skip_ratio": result.genotype.skip_ratio(),
        "edge_selection": result.edge_selection,
    });
    if args.retrain {
        let data = generate_dataset(&cfg.dataset)?;
        info!("re-training the discovered genotype");
        let r = retrain(&result.genotype, cfg.retrain_config(), &data, cfg.seed)?;
        summary["retrain"] = json!({
            "val_accuracy": r.val_accuracy,
            "final_loss": r.loss_curve.last(),
        });
        println!("retrain accuracy {:.4}", r.val_accuracy);
    }
    if let Some(row) = last {
        println!(
            "{}: epoch {} none weight {:.4} skip ratio {:.2} val acc {:.4}",
            cfg.estimator.label(),
            row.epoch,
            row.none_weight,
            row.skip_ratio,
            row.val_acc
        );
    }
    out.write("trajectory.csv", &result.trajectory.to_csv())?;
    if let Some(t) = &result.edge_trajectory {
        out.write("edge_trajectory.csv", &t.to_csv())?;
    }
    out.write_json("genotype.json", &result.genotype.to_json())?;
    out.write_json("config.json", &cfg)?;
    out.write_json("training_search.json", &cfg.training)?;
    out.write_json("training_retrain.json", cfg.retrain_config())?;
    out.write_json("summary.json", &summary)?;
    out.finish("search", to_value(&cfg), Some(cfg.seed))
}

/// Scalar toy curvature at `alpha`: `g2 = 4a`, `g2' = 16 eta a`.
fn toy_line(alpha: f64, eta: f64) -> Result<String, Failure> {
    let toy = ScalarToy::default();
    let state = BilevelState::new(vec![alpha], vec![alpha]);
    let bundle = extract_curvature(&toy, &state.omega, &state.alpha, &OracleSettings::default())?;
    let g2 = exact_g2(&bundle)?[0];
    let g2a = dense_amended_g2(&bundle, eta)[0];
    Ok(format!(
        "toy a={alpha}: g2 = {g2:.6} (4a = {:.6}), g2' = {g2a:.6} (16*eta*a = {:.6})",
        4.0 * alpha,
        16.0 * eta * alpha
    ))
}

pub fn run_oracle_check(args: &OracleArgs, out: &OutDir) -> Result<(), Failure> {
    let cfg = OracleCheckConfig {
        seeds: args.seeds,
        dim_omega: args.dim_omega,
        dim_alpha: args.dim_alpha,
        eta: args.eta,
    };
    let report = oracle_check(&cfg)?;
    for r in &report.instances {
        println!(
            "{:?} seed {:3}: cond {:7.2} cross {:.2e} amended {:.2e} linearity {:.2e} <g2',g2> {:+.4e}{}",
            r.kind,
            r.seed,
            r.condition_number,
            r.cross_error,
            r.amended_error,
            r.linearity_error,
            r.inner_product,
            if r.passed() { "" } else { "  FAIL" }
        );
    }
    if report.skipped > 0 {
        log::warn!("skipped {} instances with a singular Hessian", report.skipped);
        println!("skipped {} singular instances", report.skipped);
    }
    println!("{}", toy_line(1.0, cfg.eta)?);
    println!(
        "max cross error {:.3e}, max amended error {:.3e}, min constrained inner product {:.4e}",
        report.max_cross_error(),
        report.max_amended_error(),
        report.min_constrained_inner_product()
    );
    println!(
        "nonnegative <g2',g2> on random instances: {:.3}",
        report.random_nonnegative_fraction()
    );
    out.write_json("oracle_check.json", &report)?;
    out.finish("oracle-check", to_value(&cfg), None)?;
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Numerical("oracle identities failed".into()))
    }
}

/// Exit status of a finished gradcheck suite.
pub fn gradcheck_exit(results: &[GradcheckResult]) -> Result<(), Failure> {
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed()).map(|r| r.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Numerical(format!("gradcheck failed: {}", failed.join(", "))))
    }
}

pub fn run_gradcheck(args: &GradcheckArgs, out: &OutDir) -> Result<(), Failure> {
    if let Some(t) = args.tolerance {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Failure::Usage(format!("--tolerance must be positive, got {t}")));
        }
    }
    if args.seeds == 0 {
        return Err(Failure::Usage("--seeds must be at least 1".into()));
    }
    let mut results = gradcheck_suite(args.seeds);
    if let Some(t) = args.tolerance {
        results.iter_mut().for_each(|r| r.tolerance = t);
    }
    for r in &results {
        println!(
            "{:24} max error {:.3e} (tolerance {:.0e}) {}",
            r.name,
            r.max_error,
            r.tolerance,
            if r.passed() { "ok" } else { "FAIL" }
        );
    }
    out.write_json("gradcheck.json", &results)?;
    out.finish("gradcheck", json!({ "seeds": args.seeds, "tolerance": args.tolerance }), None)?;
    gradcheck_exit(&results)
}
