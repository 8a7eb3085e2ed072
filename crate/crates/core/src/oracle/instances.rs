//! Seeded quadratic bi-level instances.
//!
//! `L_train = ½ wᵀP w − wᵀQ a` and `L_val = ½|A w + B a − c|²`, so the inner
//! optimum is `w* = P⁻¹Q a`, `H = P` and `J = −Qᵀ`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::CurvatureBundle;
use crate::diffcore::{Tape, Tensor, ALPHA, OMEGA};
use crate::problem::{check_len, tape_loss_grad, BilevelProblem, LossGrad, Split, Wrt};
use crate::rng::Rng64;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InstanceKind {
    /// Random SPD `P` with eigenvalues in `[0.5, 5]`, Gaussian `Q`.
    Random,
    /// `H` and `JᵀJ` share an eigenbasis.
    Commuting,
    /// `H = cI`.
    Isotropic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticInstance {
    pub kind: InstanceKind,
    pub seed: u64,
    pub p: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DVector<f64>,
}

#[derive(Serialize)]
struct InstanceJson<'a> {
    kind: InstanceKind,
    seed: u64,
    dim_omega: usize,
    dim_alpha: usize,
    p: Vec<Vec<f64>>,
    q: Vec<Vec<f64>>,
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    c: &'a [f64],
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn gaussian(rng: &mut Rng64, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    // Filled row by row so the stream order does not depend on storage order.
    let data = rng.normal_vec(r * c, scale);
    DMatrix::from_row_slice(r, c, &data)
}

fn orthogonal(rng: &mut Rng64, n: usize) -> DMatrix<f64> {
    gaussian(rng, n, n, 1.0).qr().q()
}

impl QuadraticInstance {
    pub fn generate(kind: InstanceKind, seed: u64, dim_omega: usize, dim_alpha: usize) -> Result<Self> {
        if dim_omega == 0 || dim_alpha == 0 {
            return Err(Error::config("instance dimensions must be positive"));
        }
        if dim_omega > super::MAX_DIM_OMEGA {
            return Err(Error::DimensionCap {
                what: "omega",
                dim: dim_omega,
                cap: super::MAX_DIM_OMEGA,
            });
        }
        let (m, k) = (dim_omega, dim_alpha);
        let mut rng = Rng64::new(seed);
        let (p, q) = match kind {
            InstanceKind::Random => {
                let u = orthogonal(&mut rng, m);
                let lambda = DVector::from_vec(rng.uniform_vec(m, 0.5, 5.0));
                let p = &u * DMatrix::from_diagonal(&lambda) * u.transpose();
                (p, gaussian(&mut rng, m, k, 1.0))
            }
            InstanceKind::Commuting => {
                let u = orthogonal(&mut rng, m);
                let lambda = DVector::from_vec(rng.uniform_vec(m, 0.5, 5.0));
                let p = &u * DMatrix::from_diagonal(&lambda) * u.transpose();
                let v = orthogonal(&mut rng, k);
                let mut sigma = DMatrix::zeros(k, m);
                for i in 0..k.min(m) {
                    sigma[(i, i)] = rng.uniform_range(0.2, 2.0);
                }
                let j = v * sigma * u.transpose();
                (p, -j.transpose())
            }
            InstanceKind::Isotropic => {
                let c = rng.uniform_range(0.5, 5.0);
                (DMatrix::identity(m, m) * c, gaussian(&mut rng, m, k, 1.0))
            }
        };
        // Symmetrise exactly; the product above is symmetric only up to rounding.
        let p = (&p + p.transpose()) * 0.5;
        let a = gaussian(&mut rng, m, m, 1.0);
        let b = gaussian(&mut rng, m, k, 1.0);
        let c = DVector::from_vec(rng.normal_vec(m, 1.0));
        Ok(Self { kind, seed, p, q, a, b, c })
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(InstanceJson {
            kind: self.kind,
            seed: self.seed,
            dim_omega: self.p.nrows(),
            dim_alpha: self.q.ncols(),
            p: rows(&self.p),
            q: rows(&self.q),
            a: rows(&self.a),
            b: rows(&self.b),
            c: self.c.as_slice(),
        })
        .expect("instance serialises")
    }

    pub fn condition_number(&self) -> f64 {
        let e = self.p.clone().symmetric_eigenvalues();
        e.max() / e.min()
    }

    /// Deterministic random alpha for this instance.
    pub fn sample_alpha(&self, rng: &mut Rng64) -> Vec<f64> {
        rng.normal_vec(self.q.ncols(), 1.0)
    }

    /// Curvature from the defining matrices, with `v` at the closed-form optimum.
    pub fn exact_bundle(&self, alpha: &[f64]) -> Result<CurvatureBundle> {
        check_len("alpha", self.q.ncols(), alpha.len())?;
        let w = self.inner_solution(alpha).ok_or(Error::SingularHessian {
            min_eigenvalue: self.p.clone().symmetric_eigenvalues().min(),
        })?;
        let w = DVector::from_vec(w);
        let a = DVector::from_column_slice(alpha);
        let r = &self.a * &w + &self.b * &a - &self.c;
        let v = self.a.transpose() * r;
        CurvatureBundle::new(self.p.clone(), -self.q.transpose(), v)
    }

    fn constant_matrix(tape: &mut Tape, m: &DMatrix<f64>) -> crate::diffcore::Var {
        let data: Vec<f64> = m.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()).collect();
        tape.constant(Tensor::matrix(m.nrows(), m.ncols(), data).expect("matrix shape"))
    }
}

impl BilevelProblem for QuadraticInstance {
    fn dim_omega(&self) -> usize {
        self.p.nrows()
    }

    fn dim_alpha(&self) -> usize {
        self.q.ncols()
    }

    fn evaluate(&self, split: Split, omega: &[f64], alpha: &[f64], wrt: Wrt) -> Result<LossGrad> {
        let (m, k) = (self.dim_omega(), self.dim_alpha());
        check_len("omega", m, omega.len())?;
        check_len("alpha", k, alpha.len())?;
        let mut tape = Tape::new();
        let w = tape.param(OMEGA, Tensor::matrix(1, m, omega.to_vec())?);
        let a = tape.param(ALPHA, Tensor::matrix(1, k, alpha.to_vec())?);
        let loss = match split {
            Split::Train => {
                let p = Self::constant_matrix(&mut tape, &self.p);
                let q = Self::constant_matrix(&mut tape, &self.q);
                let wp = tape.matmul(w, p)?;
                let wpw = tape.mul(wp, w)?;
                let quad = tape.sum(wpw)?;
                let quad = tape.scale(quad, 0.5)?;
                let wq = tape.matmul(w, q)?;
                let wqa = tape.mul(wq, a)?;
                let lin = tape.sum(wqa)?;
                tape.sub(quad, lin)?
            }
            Split::Val => {
                let at = Self::constant_matrix(&mut tape, &self.a.transpose());
                let bt = Self::constant_matrix(&mut tape, &self.b.transpose());
                let c = tape.constant(Tensor::matrix(1, m, self.c.iter().copied().collect())?);
                let wa = tape.matmul(w, at)?;
                let ab = tape.matmul(a, bt)?;
                let pred = tape.add(wa, ab)?;
                let se = tape.squared_error(pred, c)?;
                tape.scale(se, 0.5)?
            }
        };
        tape_loss_grad(&tape, loss, wrt)
    }

    fn inner_solution(&self, alpha: &[f64]) -> Option<Vec<f64>> {
        let rhs = &self.q * DVector::from_column_slice(alpha);
        let chol = self.p.clone().cholesky()?;
        Some(chol.solve(&rhs).iter().copied().collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::gradcheck;
    use crate::oracle::{extract_curvature, OracleSettings};

    #[test]
    fn tape_gradients_match_closed_form() {
        let inst = QuadraticInstance::generate(InstanceKind::Random, 11, 5, 3).unwrap();
        let mut rng = Rng64::new(1);
        let w = rng.normal_vec(5, 1.0);
        let a = rng.normal_vec(3, 1.0);
        let g = inst.grad_omega(Split::Train, &w, &a).unwrap();
        let expected = &inst.p * DVector::from_column_slice(&w) - &inst.q * DVector::from_column_slice(&a);
        for (x, y) in g.iter().zip(expected.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
        for split in [Split::Train, Split::Val] {
            let f = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
                let lg = inst.evaluate(split, &x[..5], &x[5..], Wrt::Both)?;
                let mut g = lg.omega.unwrap();
                g.extend(lg.alpha.unwrap());
                Ok((lg.loss, g))
            };
            let point: Vec<f64> = w.iter().chain(&a).copied().collect();
            assert!(gradcheck(f, &point, 1e-5) < 1e-8);
        }
    }

    #[test]
    fn curvature_recovers_definition() {
        for kind in [InstanceKind::Random, InstanceKind::Commuting, InstanceKind::Isotropic] {
            let inst = QuadraticInstance::generate(kind, 5, 6, 4).unwrap();
            let alpha = inst.sample_alpha(&mut Rng64::new(9));
            let w = inst.inner_solution(&alpha).unwrap();
            let fd = extract_curvature(&inst, &w, &alpha, &OracleSettings::default()).unwrap();
            let exact = inst.exact_bundle(&alpha).unwrap();
            assert!((&fd.h - &inst.p).amax() < 1e-7);
            assert!((&fd.j - &exact.j).amax() < 1e-7);
            assert!((&fd.v - &exact.v).amax() < 1e-9);
            assert!(fd.asymmetry < 1e-5);
        }
    }

    #[test]
    fn commuting_construction_commutes() {
        let inst = QuadraticInstance::generate(InstanceKind::Commuting, 3, 7, 3).unwrap();
        let j = -inst.q.transpose();
        let jtj = j.transpose() * &j;
        assert!((&inst.p * &jtj - &jtj * &inst.p).amax() < 1e-10);
    }

    #[test]
    fn generation_is_seeded() {
        let a = QuadraticInstance::generate(InstanceKind::Random, 4, 3, 2).unwrap();
        let b = QuadraticInstance::generate(InstanceKind::Random, 4, 3, 2).unwrap();
        let c = QuadraticInstance::generate(InstanceKind::Random, 5, 3, 2).unwrap();
        assert_eq!(a.to_json().to_string(), b.to_json().to_string());
        assert_ne!(a, c);
        assert!(a.condition_number() <= 10.0 + 1e-9);
        let json = a.to_json();
        assert_eq!(json["dim_omega"], 3);
        assert_eq!(json["kind"], "random");
    }

    #[test]
    fn dimension_cap() {
        assert!(matches!(
            QuadraticInstance::generate(InstanceKind::Random, 0, 128, 2),
            Err(Error::DimensionCap { .. })
        ));
    }
}
