//! The scalar toy problem driven by each estimator.
//!
//! Every step sets `w` to the closed-form inner optimum `w*(a) = a`, then
//! takes one gradient step on `a` with the chosen estimate. The true
//! hypergradient is `2a`, so descent on it contracts `a` by `1 - 2 lr` per
//! step. The amended total is `(16 eta - 2) a`, which has the right sign
//! only for `eta > 0.125`.

use serde::{Deserialize, Serialize};

use crate::estimators::{estimate_arch_gradient, BilevelState, EstimatorKind};
use crate::problem::{BilevelProblem, ScalarToy, Split};
use crate::{Error, Result};

/// `|a|` beyond which a run counts as diverged.
pub const DIVERGENCE_BOUND: f64 = 1e12;

/// `|a|` below which a finished run counts as converged.
pub const CONVERGENCE_BOUND: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub estimator: EstimatorKind,
    pub steps: usize,
    pub alpha_lr: f64,
    pub init_alpha: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            estimator: EstimatorKind::Amended { eta: 0.5 },
            steps: 400,
            alpha_lr: 0.05,
            init_alpha: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyStep {
    pub step: usize,
    pub omega: f64,
    pub alpha: f64,
    pub val_loss: f64,
}

/// Toy run recorded up to the end or the first diverged step.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyTrace {
    /// Step 0 is the initial point.
    pub steps: Vec<ToyStep>,
    pub diverged_at: Option<usize>,
}

impl ToyTrace {
    pub fn final_alpha(&self) -> f64 {
        self.steps.last().map_or(f64::NAN, |s| s.alpha)
    }

    pub fn converged(&self) -> bool {
        self.diverged_at.is_none() && self.final_alpha().abs() < CONVERGENCE_BOUND
    }

    pub fn to_csv(&self) -> String {
        let mut csv = String::from("step,omega,alpha,val_loss\n");
        for s in &self.steps {
            csv.push_str(&format!(
                "{},{},{},{}\n",
                s.step,
                crate::io::format_float(s.omega),
                crate::io::format_float(s.alpha),
                crate::io::format_float(s.val_loss)
            ));
        }
        csv
    }
}

fn validate(cfg: &ToyConfig) -> Result<()> {
    cfg.estimator.validate()?;
    if cfg.steps == 0 {
        return Err(Error::config("steps must be at least 1"));
    }
    if !(cfg.alpha_lr > 0.0 && cfg.alpha_lr.is_finite()) {
        return Err(Error::config(format!("alpha_lr must be positive, got {}", cfg.alpha_lr)));
    }
    if !cfg.init_alpha.is_finite() {
        return Err(Error::config("init_alpha must be finite"));
    }
    Ok(())
}

pub fn toy_trace(cfg: &ToyConfig) -> Result<ToyTrace> {
    validate(cfg)?;
    let toy = ScalarToy::default();
    let record = |step: usize, a: f64| -> Result<ToyStep> {
        let w = toy.inner_solution(&[a]).expect("toy has a closed form")[0];
        Ok(ToyStep {
            step,
            omega: w,
            alpha: a,
            val_loss: toy.loss(Split::Val, &[w], &[a])?,
        })
    };
    let mut alpha = cfg.init_alpha;
    let mut steps = vec![record(0, alpha)?];
    for t in 1..=cfg.steps {
        let omega = toy.inner_solution(&[alpha]).expect("toy has a closed form");
        let state = BilevelState::new(omega, vec![alpha]);
        let g = estimate_arch_gradient(cfg.estimator, &toy, &state)?;
        alpha -= cfg.alpha_lr * g.total[0];
        if !alpha.is_finite() || alpha.abs() > DIVERGENCE_BOUND {
            return Ok(ToyTrace {
                steps,
                diverged_at: Some(t),
            });
        }
        steps.push(record(t, alpha)?);
    }
    Ok(ToyTrace {
        steps,
        diverged_at: None,
    })
}

/// Like [`toy_trace`], but divergence is an error.
pub fn toy_run(cfg: &ToyConfig) -> Result<Vec<ToyStep>> {
    let trace = toy_trace(cfg)?;
    match trace.diverged_at {
        Some(step) => Err(Error::Diverged { step }),
        None => Ok(trace.steps),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(estimator: EstimatorKind) -> ToyConfig {
        ToyConfig {
            estimator,
            ..ToyConfig::default()
        }
    }

    #[test]
    fn first_order_grows_then_diverges() {
        let trace = toy_trace(&cfg(EstimatorKind::FirstOrder)).unwrap();
        for w in trace.steps.windows(2) {
            assert!((w[1].alpha / w[0].alpha - 1.1).abs() < 1e-12);
        }
        assert!(matches!(toy_run(&cfg(EstimatorKind::FirstOrder)), Err(Error::Diverged { .. })));
    }

    #[test]
    fn exact_contracts_geometrically() {
        let trace = toy_trace(&cfg(EstimatorKind::ExactImplicit)).unwrap();
        assert!(trace.converged());
        for w in trace.steps.windows(2).take(50) {
            assert!((w[1].alpha / w[0].alpha - 0.9).abs() < 1e-6);
        }
    }

    #[test]
    fn amended_threshold() {
        assert!(toy_trace(&cfg(EstimatorKind::Amended { eta: 0.5 })).unwrap().converged());
        let small = toy_trace(&cfg(EstimatorKind::Amended { eta: 0.01 })).unwrap();
        assert!(small.diverged_at.is_some());
    }

    #[test]
    fn csv_layout() {
        let trace = toy_trace(&ToyConfig {
            steps: 2,
            ..ToyConfig::default()
        })
        .unwrap();
        let csv = trace.to_csv();
        assert!(csv.starts_with("step,omega,alpha,val_loss\n0,5.0000000000000000e-1,"));
        assert_eq!(csv.lines().count(), 4);
    }
}
