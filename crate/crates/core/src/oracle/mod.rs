//! Ground-truth hypergradients on small instances.
//!
//! * [`solve_inner`] drives omega to the training optimum.
//! * [`extract_curvature`] builds dense `H`, `J` and `v` by central
//!   differences of first-order gradients.
//! * [`exact_g2`] applies the implicit function theorem, `g2 = -J H^{-1} v`.
//! * [`brute_force_hypergradient`] differentiates `a -> L_val(w*(a), a)` by
//!   re-solving the inner problem at perturbed `a`.
//!
//! The last two are independent routes to the same quantity and are
//! cross-checked against each other.

mod check;
mod instances;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::estimators::norm;
use crate::problem::{BilevelProblem, Split};
use crate::{Error, Result};

pub use check::{
    oracle_check, InstanceReport, OracleCheckConfig, OracleCheckReport, AMENDED_TOLERANCE, CROSS_TOLERANCE,
    INNER_PRODUCT_FLOOR,
};
pub use instances::{InstanceKind, QuadraticInstance};

/// Largest omega dimension the dense oracles accept.
pub const MAX_DIM_OMEGA: usize = 64;

/// Smallest Hessian eigenvalue treated as invertible.
pub const EIGENVALUE_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleSettings {
    /// Central-difference step for `H` and `J`.
    pub fd_step: f64,
    /// Perturbation of alpha for the brute-force hypergradient.
    pub delta: f64,
    /// Gradient-norm tolerance of the inner solve.
    pub inner_tol: f64,
    pub max_iters: usize,
}

impl Default for OracleSettings {
    fn default() -> Self {
        Self {
            fd_step: 1e-4,
            delta: 1e-3,
            inner_tol: 1e-10,
            max_iters: 200_000,
        }
    }
}

/// Dense curvature at an inner optimum.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureBundle {
    /// Symmetrised omega-Hessian of the training loss.
    pub h: DMatrix<f64>,
    /// Mixed derivative `grad_alpha grad_omega L_train`, `dim_alpha x dim_omega`.
    pub j: DMatrix<f64>,
    /// `grad_omega L_val`.
    pub v: DVector<f64>,
    /// `max |H - H^T|` before symmetrisation.
    pub asymmetry: f64,
}

impl CurvatureBundle {
    /// Bundle from exact matrices; `h` is symmetrised.
    pub fn new(h: DMatrix<f64>, j: DMatrix<f64>, v: DVector<f64>) -> Result<Self> {
        let n = v.len();
        if h.nrows() != n || h.ncols() != n || j.ncols() != n {
            return Err(Error::LengthMismatch {
                what: "curvature bundle",
                expected: n,
                got: h.nrows(),
            });
        }
        let asymmetry = (&h - h.transpose()).amax();
        let h = (&h + h.transpose()) * 0.5;
        let bundle = Self { h, j, v, asymmetry };
        if bundle.h.iter().chain(bundle.j.iter()).chain(bundle.v.iter()).all(|x| x.is_finite()) {
            Ok(bundle)
        } else {
            Err(Error::NonFinite("curvature bundle"))
        }
    }

    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.h.clone())
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// Solves `H u = v`, failing when `H` is not safely positive definite.
    fn solve_h(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        let min_eigenvalue = self.min_eigenvalue();
        if !(min_eigenvalue > EIGENVALUE_FLOOR) {
            return Err(Error::SingularHessian { min_eigenvalue });
        }
        let chol = self
            .h
            .clone()
            .cholesky()
            .ok_or(Error::SingularHessian { min_eigenvalue })?;
        Ok(chol.solve(rhs))
    }
}

fn gradient_residual<P: BilevelProblem + ?Sized>(problem: &P, omega: &[f64], alpha: &[f64]) -> Result<(Vec<f64>, f64)> {
    let g = problem.grad_omega(Split::Train, omega, alpha)?;
    let r = norm(&g);
    Ok((g, r))
}

/// Minimises the training loss in omega until `|grad| <= inner_tol`.
///
/// Uses the problem's closed form when it has one. Otherwise runs gradient
/// descent from `start` with a backtracking line search. The sufficient
/// decrease test uses the trapezoidal estimate of the loss change,
/// `-s <g, (g + g_new)/2>`, which stays meaningful once function values
/// differ by less than rounding.
pub fn solve_inner<P: BilevelProblem + ?Sized>(
    problem: &P,
    alpha: &[f64],
    start: &[f64],
    settings: &OracleSettings,
) -> Result<Vec<f64>> {
    crate::problem::check_len("omega", problem.dim_omega(), start.len())?;
    crate::problem::check_len("alpha", problem.dim_alpha(), alpha.len())?;
    let tol = settings.inner_tol;
    if !(tol > 0.0) {
        return Err(Error::config("inner tolerance must be positive"));
    }
    if let Some(closed) = problem.inner_solution(alpha) {
        if gradient_residual(problem, &closed, alpha)?.1 <= tol {
            return Ok(closed);
        }
    }

    const ARMIJO: f64 = 1e-4;
    let mut omega = start.to_vec();
    let (mut g, mut residual) = gradient_residual(problem, &omega, alpha)?;
    let mut step = 1.0;
    for _ in 0..settings.max_iters {
        if residual <= tol {
            return Ok(omega);
        }
        let gg = residual * residual;
        step *= 2.0;
        let mut accepted = None;
        for _ in 0..80 {
            let candidate: Vec<f64> = omega.iter().zip(&g).map(|(w, g)| w - step * g).collect();
            let (g_new, r_new) = gradient_residual(problem, &candidate, alpha)?;
            let g_dot: f64 = g.iter().zip(&g_new).map(|(a, b)| a * b).sum();
            let decrease = step * 0.5 * (gg + g_dot);
            if r_new.is_finite() && decrease >= ARMIJO * step * gg {
                accepted = Some((candidate, g_new, r_new));
                break;
            }
            step *= 0.5;
        }
        let Some((candidate, g_new, r_new)) = accepted else {
            break;
        };
        omega = candidate;
        g = g_new;
        residual = r_new;
    }
    if residual <= tol {
        Ok(omega)
    } else {
        Err(Error::NonConvergence {
            iterations: settings.max_iters,
            residual,
        })
    }
}

/// Dense `H`, `J` and exact `v` at `(omega_star, alpha)`.
pub fn extract_curvature<P: BilevelProblem + ?Sized>(
    problem: &P,
    omega_star: &[f64],
    alpha: &[f64],
    settings: &OracleSettings,
) -> Result<CurvatureBundle> {
    let (m, k) = (problem.dim_omega(), problem.dim_alpha());
    if m > MAX_DIM_OMEGA {
        return Err(Error::DimensionCap {
            what: "omega",
            dim: m,
            cap: MAX_DIM_OMEGA,
        });
    }
    crate::problem::check_len("omega", m, omega_star.len())?;
    crate::problem::check_len("alpha", k, alpha.len())?;
    let h_step = settings.fd_step;
    if !(h_step > 0.0) {
        return Err(Error::config("fd step must be positive"));
    }

    let mut h = DMatrix::zeros(m, m);
    let mut w = omega_star.to_vec();
    for c in 0..m {
        w[c] = omega_star[c] + h_step;
        let plus = problem.grad_omega(Split::Train, &w, alpha)?;
        w[c] = omega_star[c] - h_step;
        let minus = problem.grad_omega(Split::Train, &w, alpha)?;
        w[c] = omega_star[c];
        for r in 0..m {
            h[(r, c)] = (plus[r] - minus[r]) / (2.0 * h_step);
        }
    }

    let mut j = DMatrix::zeros(k, m);
    let mut a = alpha.to_vec();
    for i in 0..k {
        a[i] = alpha[i] + h_step;
        let plus = problem.grad_omega(Split::Train, omega_star, &a)?;
        a[i] = alpha[i] - h_step;
        let minus = problem.grad_omega(Split::Train, omega_star, &a)?;
        a[i] = alpha[i];
        for c in 0..m {
            j[(i, c)] = (plus[c] - minus[c]) / (2.0 * h_step);
        }
    }

    let v = DVector::from_vec(problem.grad_omega(Split::Val, omega_star, alpha)?);
    CurvatureBundle::new(h, j, v)
}

/// Implicit term `g2 = -J H^{-1} v`.
pub fn exact_g2(bundle: &CurvatureBundle) -> Result<Vec<f64>> {
    let u = bundle.solve_h(&bundle.v)?;
    Ok((-(&bundle.j * u)).iter().copied().collect())
}

/// Amended implicit term `-eta J H v` in dense algebra.
pub fn dense_amended_g2(bundle: &CurvatureBundle, eta: f64) -> Vec<f64> {
    (-(&bundle.j * (&bundle.h * &bundle.v)) * eta).iter().copied().collect()
}

/// Central differences of `a -> L_val(w*(a), a)`, re-solving the inner
/// problem (warm-started from `start`) at every perturbed point.
pub fn brute_force_hypergradient<P: BilevelProblem + ?Sized>(
    problem: &P,
    alpha: &[f64],
    start: &[f64],
    delta: f64,
    settings: &OracleSettings,
) -> Result<Vec<f64>> {
    if !(delta > 0.0) {
        return Err(Error::config("delta must be positive"));
    }
    let inner = OracleSettings {
        inner_tol: settings.inner_tol.min(delta * delta * 1e-2),
        ..*settings
    };
    let center = solve_inner(problem, alpha, start, &inner)?;
    let mut a = alpha.to_vec();
    let mut grad = Vec::with_capacity(alpha.len());
    let value_at = |a: &[f64]| -> Result<f64> {
        let w = solve_inner(problem, a, &center, &inner)?;
        problem.loss(Split::Val, &w, a)
    };
    for i in 0..alpha.len() {
        a[i] = alpha[i] + delta;
        let plus = value_at(&a)?;
        a[i] = alpha[i] - delta;
        let minus = value_at(&a)?;
        a[i] = alpha[i];
        grad.push((plus - minus) / (2.0 * delta));
    }
    Ok(grad)
}

/// Exact and amended implicit terms with their inner product.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerProductCheck {
    pub ip: f64,
    pub g2: Vec<f64>,
    pub g2_amended: Vec<f64>,
}

pub fn inner_product_check(bundle: &CurvatureBundle, eta: f64) -> Result<InnerProductCheck> {
    if !(eta > 0.0) {
        return Err(Error::config(format!("eta must be positive, got {eta}")));
    }
    let g2 = exact_g2(bundle)?;
    let g2_amended = dense_amended_g2(bundle, eta);
    let ip = g2.iter().zip(&g2_amended).map(|(a, b)| a * b).sum();
    Ok(InnerProductCheck { ip, g2, g2_amended })
}

/// Relative error `|a - b| / max(|b|, 1e-12)` in the Euclidean norm.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(b).max(1e-12)
}
