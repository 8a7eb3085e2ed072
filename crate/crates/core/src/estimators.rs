//! Architectural-gradient estimators.
//!
//! The hypergradient of the validation loss splits into a direct term
//! `g1 = grad_alpha L_val(w, a)` and an implicit term
//! `g2 = -J H^{-1} v`, where `H` is the omega-Hessian of the training loss,
//! `J` its mixed alpha/omega derivative and `v = grad_omega L_val`.
//! The practical estimators differ only in how they treat `g2`:
//!
//! * first-order drops it,
//! * second-order DARTS replaces `H^{-1}` by `xi * I`,
//! * the amended estimator replaces `H^{-1}` by `eta * H`.
//!
//! Both second-order style terms are computed from first-order gradients
//! and central differences along `v`.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::oracle::{self, OracleSettings};
use crate::problem::{BilevelProblem, Split};
use crate::{Error, Result};

/// Numerator of the finite-difference radius, `eps = 0.01 / |v|`.
pub const FD_RADIUS: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EstimatorKind {
    FirstOrder,
    SecondOrderDarts { xi: f64 },
    /// `eta = 0` is accepted and reduces to [`EstimatorKind::FirstOrder`].
    Amended { eta: f64 },
    ExactImplicit,
    BruteForce { delta: f64 },
}

impl EstimatorKind {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| Error::config(format!("{what} must be positive, got {v}"));
        match *self {
            EstimatorKind::SecondOrderDarts { xi } if !(xi > 0.0 && xi.is_finite()) => Err(bad("xi", xi)),
            EstimatorKind::Amended { eta } if !(eta >= 0.0 && eta.is_finite()) => Err(bad("eta", eta)),
            EstimatorKind::BruteForce { delta } if !(delta > 0.0 && delta.is_finite()) => {
                Err(bad("delta", delta))
            }
            _ => Ok(()),
        }
    }

    pub fn label(&self) -> String {
        match self {
            EstimatorKind::FirstOrder => "first-order".into(),
            EstimatorKind::SecondOrderDarts { xi } => format!("second-order-darts(xi={xi})"),
            EstimatorKind::Amended { eta } => format!("amended(eta={eta})"),
            EstimatorKind::ExactImplicit => "exact-implicit".into(),
            EstimatorKind::BruteForce { delta } => format!("brute-force(delta={delta})"),
        }
    }
}

/// Current point of the bi-level iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct BilevelState {
    pub omega: Vec<f64>,
    pub alpha: Vec<f64>,
}

impl BilevelState {
    pub fn new(omega: Vec<f64>, alpha: Vec<f64>) -> Self {
        Self { omega, alpha }
    }

    fn check<P: BilevelProblem + ?Sized>(&self, problem: &P) -> Result<()> {
        crate::problem::check_len("omega", problem.dim_omega(), self.omega.len())?;
        crate::problem::check_len("alpha", problem.dim_alpha(), self.alpha.len())
    }
}

/// An architectural gradient split into its direct and implicit parts.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchGradient {
    pub direct: Vec<f64>,
    pub correction: Vec<f64>,
    pub total: Vec<f64>,
}

impl ArchGradient {
    fn from_parts(direct: Vec<f64>, correction: Vec<f64>) -> Self {
        let total = direct.iter().zip(&correction).map(|(a, b)| a + b).collect();
        Self {
            direct,
            correction,
            total,
        }
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn axpy(x: &[f64], a: f64, d: &[f64]) -> Vec<f64> {
    x.iter().zip(d).map(|(x, d)| x + a * d).collect()
}

fn scaled_difference(a: &[f64], b: &[f64], scale: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(a, b)| scale * (a - b)).collect()
}

/// Direct term: `grad_alpha L_val(w, a)`.
pub fn g1<P: BilevelProblem + ?Sized>(problem: &P, state: &BilevelState) -> Result<Vec<f64>> {
    state.check(problem)?;
    problem.grad_alpha(Split::Val, &state.omega, &state.alpha)
}

/// Finite-difference radius `0.01 / |grad|`.
pub fn epsilon_scale(val_omega_grad: &[f64]) -> Result<f64> {
    let n = norm(val_omega_grad);
    if n > 0.0 && n.is_finite() {
        Ok(FD_RADIUS / n)
    } else {
        Err(Error::DegenerateDirection)
    }
}

/// Amended implicit term `-eta * J H v`, estimated with two nested central
/// differences.
///
/// With `v = grad_omega L_val` and `eps = 0.01 / |v|`:
/// the difference `d` of `grad_omega L_train` at `w +- eps v` approximates
/// `2 eps H v`; the difference of `grad_alpha L_train` at `w +- d / 2`
/// divided by `2 eps` then approximates `J H v`. The same `eps` is used in
/// both layers. Both training gradients of a layer use the same batch.
pub fn amended_g2<P: BilevelProblem + ?Sized>(problem: &P, state: &BilevelState, eta: f64) -> Result<Vec<f64>> {
    EstimatorKind::Amended { eta }.validate()?;
    state.check(problem)?;
    let (w, a) = (&state.omega, &state.alpha);
    let v = problem.grad_omega(Split::Val, w, a)?;
    let eps = match epsilon_scale(&v) {
        Ok(eps) => eps,
        Err(Error::DegenerateDirection) => {
            warn!("amended estimator: zero validation gradient in omega, implicit term set to zero");
            return Ok(vec![0.0; a.len()]);
        }
        Err(e) => return Err(e),
    };
    let grad_plus = problem.grad_omega(Split::Train, &axpy(w, eps, &v), a)?;
    let grad_minus = problem.grad_omega(Split::Train, &axpy(w, -eps, &v), a)?;
    let d = scaled_difference(&grad_plus, &grad_minus, 1.0);
    let alpha_plus = problem.grad_alpha(Split::Train, &axpy(w, 0.5, &d), a)?;
    let alpha_minus = problem.grad_alpha(Split::Train, &axpy(w, -0.5, &d), a)?;
    Ok(scaled_difference(&alpha_plus, &alpha_minus, -eta / (2.0 * eps)))
}

/// DARTS second-order implicit term `-xi * J v` from one central
/// difference of `grad_alpha L_train` along `v`.
pub fn second_order_darts_g2<P: BilevelProblem + ?Sized>(
    problem: &P,
    state: &BilevelState,
    xi: f64,
) -> Result<Vec<f64>> {
    EstimatorKind::SecondOrderDarts { xi }.validate()?;
    state.check(problem)?;
    let (w, a) = (&state.omega, &state.alpha);
    let v = problem.grad_omega(Split::Val, w, a)?;
    let eps = match epsilon_scale(&v) {
        Ok(eps) => eps,
        Err(Error::DegenerateDirection) => {
            warn!("second-order estimator: zero validation gradient in omega, implicit term set to zero");
            return Ok(vec![0.0; a.len()]);
        }
        Err(e) => return Err(e),
    };
    let plus = problem.grad_alpha(Split::Train, &axpy(w, eps, &v), a)?;
    let minus = problem.grad_alpha(Split::Train, &axpy(w, -eps, &v), a)?;
    Ok(scaled_difference(&plus, &minus, -xi / (2.0 * eps)))
}

/// Architectural gradient for `kind` with default oracle settings.
pub fn estimate_arch_gradient<P: BilevelProblem + ?Sized>(
    kind: EstimatorKind,
    problem: &P,
    state: &BilevelState,
) -> Result<ArchGradient> {
    estimate_arch_gradient_with(kind, problem, state, &OracleSettings::default())
}

/// As [`estimate_arch_gradient`]; `settings` configures the exact and
/// brute-force oracles.
pub fn estimate_arch_gradient_with<P: BilevelProblem + ?Sized>(
    kind: EstimatorKind,
    problem: &P,
    state: &BilevelState,
    settings: &OracleSettings,
) -> Result<ArchGradient> {
    kind.validate()?;
    state.check(problem)?;
    match kind {
        EstimatorKind::FirstOrder | EstimatorKind::Amended { eta: 0.0 } => {
            let direct = g1(problem, state)?;
            let correction = vec![0.0; direct.len()];
            Ok(ArchGradient {
                total: direct.clone(),
                direct,
                correction,
            })
        }
        EstimatorKind::Amended { eta } => Ok(ArchGradient::from_parts(
            g1(problem, state)?,
            amended_g2(problem, state, eta)?,
        )),
        EstimatorKind::SecondOrderDarts { xi } => Ok(ArchGradient::from_parts(
            g1(problem, state)?,
            second_order_darts_g2(problem, state, xi)?,
        )),
        EstimatorKind::ExactImplicit => {
            let omega_star = oracle::solve_inner(problem, &state.alpha, &state.omega, settings)?;
            let at_optimum = BilevelState::new(omega_star, state.alpha.clone());
            let bundle = oracle::extract_curvature(problem, &at_optimum.omega, &at_optimum.alpha, settings)?;
            Ok(ArchGradient::from_parts(
                g1(problem, &at_optimum)?,
                oracle::exact_g2(&bundle)?,
            ))
        }
        EstimatorKind::BruteForce { delta } => {
            let total = oracle::brute_force_hypergradient(problem, &state.alpha, &state.omega, delta, settings)?;
            let direct = g1(problem, state)?;
            let correction = total.iter().zip(&direct).map(|(t, d)| t - d).collect();
            Ok(ArchGradient {
                direct,
                correction,
                total,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{LossGrad, ScalarToy, Wrt};

    fn toy_at(alpha: f64) -> (ScalarToy, BilevelState) {
        (ScalarToy::default(), BilevelState::new(vec![alpha], vec![alpha]))
    }

    #[test]
    fn g1_on_toy_is_minus_two_alpha() {
        for a in [-1.5, 0.3, 1.0, 2.0] {
            let (toy, s) = toy_at(a);
            let g = g1(&toy, &s).unwrap();
            assert!((g[0] + 2.0 * a).abs() < 1e-14);
        }
    }

    /// Validation loss with no direct alpha dependence.
    struct AlphaFreeVal;

    impl BilevelProblem for AlphaFreeVal {
        fn dim_omega(&self) -> usize {
            2
        }
        fn dim_alpha(&self) -> usize {
            2
        }
        fn evaluate(&self, split: Split, w: &[f64], a: &[f64], _wrt: Wrt) -> Result<LossGrad> {
            // Train: separable sum(w^2) + sum(a^2); val: sum((w - 1)^2).
            Ok(match split {
                Split::Train => LossGrad {
                    loss: w.iter().chain(a).map(|x| x * x).sum(),
                    omega: Some(w.iter().map(|x| 2.0 * x).collect()),
                    alpha: Some(a.iter().map(|x| 2.0 * x).collect()),
                },
                Split::Val => LossGrad {
                    loss: w.iter().map(|x| (x - 1.0).powi(2)).sum(),
                    omega: Some(w.iter().map(|x| 2.0 * (x - 1.0)).collect()),
                    alpha: Some(vec![0.0; 2]),
                },
            })
        }
    }

    #[test]
    fn alpha_free_val_gives_zero_g1() {
        let s = BilevelState::new(vec![0.3, -0.2], vec![1.0, 2.0]);
        assert_eq!(g1(&AlphaFreeVal, &s).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn separable_losses_have_no_implicit_term() {
        let s = BilevelState::new(vec![0.3, -0.2], vec![1.0, 2.0]);
        for g in [
            amended_g2(&AlphaFreeVal, &s, 0.7).unwrap(),
            second_order_darts_g2(&AlphaFreeVal, &s, 0.7).unwrap(),
        ] {
            assert!(g.iter().all(|x| x.abs() < 1e-7), "{g:?}");
        }
    }

    #[test]
    fn epsilon_scale_values() {
        assert!((epsilon_scale(&[0.01]).unwrap() - 1.0).abs() < 1e-15);
        assert!((epsilon_scale(&[0.0, 2.0]).unwrap() - 0.005).abs() < 1e-18);
        assert_eq!(epsilon_scale(&[0.0, 0.0]), Err(Error::DegenerateDirection));
    }

    #[test]
    fn amended_on_toy_matches_analytic() {
        // J = -2, H = 2, v = 4a at w = a, so -eta J H v = 16 eta a.
        let (toy, s) = toy_at(1.0);
        let g = amended_g2(&toy, &s, 0.1).unwrap();
        assert!((g[0] - 1.6).abs() < 1e-9, "{g:?}");
        let g2 = amended_g2(&toy, &s, 0.2).unwrap();
        assert!((g2[0] - 2.0 * g[0]).abs() < 1e-9);
    }

    #[test]
    fn darts_second_order_on_toy() {
        let (toy, s) = toy_at(1.0);
        let g = second_order_darts_g2(&toy, &s, 1.0).unwrap();
        assert!((g[0] - 8.0).abs() < 1e-9, "{g:?}");
        let half = second_order_darts_g2(&toy, &s, 0.5).unwrap();
        assert!((2.0 * half[0] - g[0]).abs() < 1e-9);
    }

    #[test]
    fn degenerate_direction_falls_back_to_zero() {
        // At a = 0 the validation gradient in omega vanishes.
        let (toy, s) = toy_at(0.0);
        assert_eq!(amended_g2(&toy, &s, 0.1).unwrap(), vec![0.0]);
        assert_eq!(second_order_darts_g2(&toy, &s, 0.1).unwrap(), vec![0.0]);
    }

    #[test]
    fn dispatcher_on_toy() {
        let (toy, s) = toy_at(1.0);
        let fo = estimate_arch_gradient(EstimatorKind::FirstOrder, &toy, &s).unwrap();
        assert!((fo.total[0] + 2.0).abs() < 1e-14);
        let am = estimate_arch_gradient(EstimatorKind::Amended { eta: 0.1 }, &toy, &s).unwrap();
        assert!((am.total[0] + 0.4).abs() < 1e-9);
        let zero = estimate_arch_gradient(EstimatorKind::Amended { eta: 0.0 }, &toy, &s).unwrap();
        assert_eq!(zero.total[0].to_bits(), fo.total[0].to_bits());
        let exact = estimate_arch_gradient(EstimatorKind::ExactImplicit, &toy, &s).unwrap();
        assert!((exact.total[0] - 2.0).abs() < 1e-8);
        let brute = estimate_arch_gradient(EstimatorKind::BruteForce { delta: 1e-3 }, &toy, &s).unwrap();
        assert!((brute.total[0] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn invalid_coefficients_rejected() {
        let (toy, s) = toy_at(1.0);
        assert!(amended_g2(&toy, &s, -0.1).is_err());
        assert!(second_order_darts_g2(&toy, &s, 0.0).is_err());
        assert!(EstimatorKind::BruteForce { delta: 0.0 }.validate().is_err());
        assert!(EstimatorKind::Amended { eta: f64::NAN }.validate().is_err());
    }

    #[test]
    fn sign_property_on_toy() {
        for a in [-2.0, -0.5, 0.25, 1.7] {
            let (toy, s) = toy_at(a);
            let truth = 2.0 * a;
            let total = |kind| estimate_arch_gradient(kind, &toy, &s).unwrap().total[0];
            assert!(total(EstimatorKind::FirstOrder) * truth < 0.0);
            // The amended total is (16 eta - 2) a: the sign flips at eta = 0.125.
            assert!(total(EstimatorKind::Amended { eta: 0.5 }) * truth > 0.0);
            assert!(total(EstimatorKind::Amended { eta: 0.13 }) * truth > 0.0);
            assert!(total(EstimatorKind::Amended { eta: 0.1 }) * truth < 0.0);
        }
    }
}
