//! Bi-level problem interface shared by the estimators, the oracles and the
//! search loop, plus the scalar toy instance.

use crate::diffcore::{Tape, Tensor, ALPHA, OMEGA};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

/// Which gradients an evaluation must return.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Wrt {
    Omega,
    Alpha,
    Both,
}

impl Wrt {
    fn groups(self) -> &'static [&'static str] {
        match self {
            Wrt::Omega => &[OMEGA],
            Wrt::Alpha => &[ALPHA],
            Wrt::Both => &[OMEGA, ALPHA],
        }
    }
}

/// Loss value with the requested gradients; unrequested ones are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub omega: Option<Vec<f64>>,
    pub alpha: Option<Vec<f64>>,
}

/// A bi-level objective: network weights `omega` are the inner variables,
/// architectural parameters `alpha` the outer ones.
pub trait BilevelProblem {
    fn dim_omega(&self) -> usize;
    fn dim_alpha(&self) -> usize;

    fn evaluate(&self, split: Split, omega: &[f64], alpha: &[f64], wrt: Wrt) -> Result<LossGrad>;

    /// Closed-form minimiser of the training loss in omega, when known.
    fn inner_solution(&self, _alpha: &[f64]) -> Option<Vec<f64>> {
        None
    }

    fn loss(&self, split: Split, omega: &[f64], alpha: &[f64]) -> Result<f64> {
        // An omega-only backward is the cheapest way to get the value.
        Ok(self.evaluate(split, omega, alpha, Wrt::Omega)?.loss)
    }

    fn grad_omega(&self, split: Split, omega: &[f64], alpha: &[f64]) -> Result<Vec<f64>> {
        let lg = self.evaluate(split, omega, alpha, Wrt::Omega)?;
        finite_grad(lg.omega, "omega gradient")
    }

    fn grad_alpha(&self, split: Split, omega: &[f64], alpha: &[f64]) -> Result<Vec<f64>> {
        let lg = self.evaluate(split, omega, alpha, Wrt::Alpha)?;
        finite_grad(lg.alpha, "alpha gradient")
    }
}

fn finite_grad(g: Option<Vec<f64>>, what: &'static str) -> Result<Vec<f64>> {
    let g = g.ok_or(Error::NonFinite(what))?;
    if g.iter().all(|v| v.is_finite()) {
        Ok(g)
    } else {
        Err(Error::NonFinite(what))
    }
}

/// Runs a tape-built loss and extracts the requested gradients.
pub(crate) fn tape_loss_grad(tape: &Tape, loss: crate::diffcore::Var, wrt: Wrt) -> Result<LossGrad> {
    let value = tape.value(loss).item().ok_or(Error::NonFinite("loss"))?;
    if !value.is_finite() {
        return Err(Error::NonFinite("loss"));
    }
    let grads = tape.backward(loss, wrt.groups())?;
    Ok(LossGrad {
        loss: value,
        omega: grads.flat(OMEGA),
        alpha: grads.flat(ALPHA),
    })
}

/// Scalar bi-level instance `L(w, a; x) = (w * x - a)^2` with one training
/// sample and one validation sample.
///
/// With the default samples `x_train = 1`, `x_val = 2` the inner optimum is
/// `w*(a) = a` and the true hypergradient is `2a`, while the direct term
/// alone is `-2a`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarToy {
    pub x_train: f64,
    pub x_val: f64,
}

impl Default for ScalarToy {
    fn default() -> Self {
        Self {
            x_train: 1.0,
            x_val: 2.0,
        }
    }
}

impl BilevelProblem for ScalarToy {
    fn dim_omega(&self) -> usize {
        1
    }

    fn dim_alpha(&self) -> usize {
        1
    }

    fn evaluate(&self, split: Split, omega: &[f64], alpha: &[f64], wrt: Wrt) -> Result<LossGrad> {
        check_len("omega", 1, omega.len())?;
        check_len("alpha", 1, alpha.len())?;
        let x = match split {
            Split::Train => self.x_train,
            Split::Val => self.x_val,
        };
        let mut tape = Tape::new();
        let w = tape.param(OMEGA, Tensor::vector(omega.to_vec()));
        let a = tape.param(ALPHA, Tensor::vector(alpha.to_vec()));
        let wx = tape.scale(w, x)?;
        let loss = tape.squared_error(wx, a)?;
        tape_loss_grad(&tape, loss, wrt)
    }

    fn inner_solution(&self, alpha: &[f64]) -> Option<Vec<f64>> {
        (self.x_train != 0.0).then(|| alpha.iter().map(|a| a / self.x_train).collect())
    }
}

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::LengthMismatch { what, expected, got })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::gradcheck;

    #[test]
    fn toy_gradients_are_analytic() {
        let toy = ScalarToy::default();
        let lg = toy.evaluate(Split::Train, &[0.5], &[0.2], Wrt::Both).unwrap();
        assert!((lg.loss - 0.09).abs() < 1e-15);
        assert!((lg.omega.unwrap()[0] - 0.6).abs() < 1e-15);
        assert!((lg.alpha.unwrap()[0] + 0.6).abs() < 1e-15);
    }

    #[test]
    fn toy_gradcheck_at_reference_point() {
        let toy = ScalarToy::default();
        let f = |p: &[f64]| -> Result<(f64, Vec<f64>)> {
            let lg = toy.evaluate(Split::Train, &p[..1], &p[1..], Wrt::Both)?;
            let mut g = lg.omega.unwrap();
            g.extend(lg.alpha.unwrap());
            Ok((lg.loss, g))
        };
        assert!(gradcheck(f, &[0.5, 0.2], 1e-5) < 1e-8);
    }

    #[test]
    fn toy_inner_solution() {
        let toy = ScalarToy::default();
        assert_eq!(toy.inner_solution(&[0.7]), Some(vec![0.7]));
        assert_eq!(toy.inner_solution(&[0.0]), Some(vec![0.0]));
    }

    #[test]
    fn length_mismatch_is_reported() {
        let toy = ScalarToy::default();
        assert!(matches!(
            toy.evaluate(Split::Val, &[1.0, 2.0], &[1.0], Wrt::Both),
            Err(Error::LengthMismatch { what: "omega", .. })
        ));
    }
}
