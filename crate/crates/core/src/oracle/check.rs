//! Batch cross-check of the oracles and the amended estimator on seeded
//! quadratic instances.

use serde::{Deserialize, Serialize};

use super::{
    brute_force_hypergradient, dense_amended_g2, exact_g2, extract_curvature, inner_product_check, relative_error,
    solve_inner, InstanceKind, OracleSettings, QuadraticInstance, MAX_DIM_OMEGA,
};
use crate::estimators::{amended_g2, g1, BilevelState};
use crate::rng::Rng64;
use crate::{Error, Result};

/// `g1 + exact_g2` against the brute-force hypergradient.
pub const CROSS_TOLERANCE: f64 = 1e-3;
/// Finite-difference amended term against dense `-eta J H v`, and its
/// linearity in `eta`.
pub const AMENDED_TOLERANCE: f64 = 1e-9;
/// Smallest admissible `<g2', g2>` on commuting and isotropic instances.
pub const INNER_PRODUCT_FLOOR: f64 = -1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleCheckConfig {
    /// Instances per kind; seeds are `0..seeds`.
    pub seeds: u64,
    pub dim_omega: usize,
    pub dim_alpha: usize,
    pub eta: f64,
}

impl Default for OracleCheckConfig {
    fn default() -> Self {
        Self {
            seeds: 50,
            dim_omega: 8,
            dim_alpha: 4,
            eta: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstanceReport {
    pub kind: InstanceKind,
    pub seed: u64,
    pub condition_number: f64,
    pub cross_error: f64,
    pub amended_error: f64,
    pub linearity_error: f64,
    pub inner_product: f64,
}

impl InstanceReport {
    /// Whether the inner product is asserted for this kind.
    pub fn constrained(&self) -> bool {
        self.kind != InstanceKind::Random
    }

    pub fn passed(&self) -> bool {
        self.cross_error < CROSS_TOLERANCE
            && self.amended_error < AMENDED_TOLERANCE
            && self.linearity_error < AMENDED_TOLERANCE
            && (!self.constrained() || self.inner_product >= INNER_PRODUCT_FLOOR)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleCheckReport {
    pub config: OracleCheckConfig,
    pub instances: Vec<InstanceReport>,
    /// Instances dropped because their Hessian was not invertible.
    pub skipped: usize,
}

impl OracleCheckReport {
    pub fn passed(&self) -> bool {
        self.instances.iter().all(InstanceReport::passed)
    }

    /// Share of general random instances with `<g2', g2> >= 0`.
    pub fn random_nonnegative_fraction(&self) -> f64 {
        let random: Vec<_> = self.instances.iter().filter(|r| !r.constrained()).collect();
        if random.is_empty() {
            return f64::NAN;
        }
        random.iter().filter(|r| r.inner_product >= 0.0).count() as f64 / random.len() as f64
    }

    pub fn max_cross_error(&self) -> f64 {
        self.instances.iter().map(|r| r.cross_error).fold(0.0, f64::max)
    }

    pub fn max_amended_error(&self) -> f64 {
        self.instances
            .iter()
            .map(|r| r.amended_error.max(r.linearity_error))
            .fold(0.0, f64::max)
    }

    pub fn min_constrained_inner_product(&self) -> f64 {
        self.instances
            .iter()
            .filter(|r| r.constrained())
            .map(|r| r.inner_product)
            .fold(f64::INFINITY, f64::min)
    }
}

fn check_instance(inst: &QuadraticInstance, eta: f64, settings: &OracleSettings) -> Result<InstanceReport> {
    let mut rng = Rng64::fork(inst.seed, 0x6f63);
    let alpha = inst.sample_alpha(&mut rng);
    let start = vec![0.0; inst.p.nrows()];
    let omega = solve_inner(inst, &alpha, &start, settings)?;
    let state = BilevelState::new(omega.clone(), alpha.clone());

    let direct = g1(inst, &state)?;
    let bundle = extract_curvature(inst, &omega, &alpha, settings)?;
    let total: Vec<f64> = direct.iter().zip(exact_g2(&bundle)?).map(|(a, b)| a + b).collect();
    let brute = brute_force_hypergradient(inst, &alpha, &omega, settings.delta, settings)?;

    let exact = inst.exact_bundle(&alpha)?;
    let fd = amended_g2(inst, &state, eta)?;
    let fd_double = amended_g2(inst, &state, 2.0 * eta)?;
    let doubled: Vec<f64> = fd.iter().map(|x| 2.0 * x).collect();

    Ok(InstanceReport {
        kind: inst.kind,
        seed: inst.seed,
        condition_number: inst.condition_number(),
        cross_error: relative_error(&total, &brute),
        amended_error: relative_error(&fd, &dense_amended_g2(&exact, eta)),
        linearity_error: relative_error(&fd_double, &doubled),
        inner_product: inner_product_check(&exact, eta)?.ip,
    })
}

pub fn oracle_check(config: &OracleCheckConfig) -> Result<OracleCheckReport> {
    if config.dim_omega > MAX_DIM_OMEGA {
        return Err(Error::DimensionCap {
            what: "dim_omega",
            dim: config.dim_omega,
            cap: MAX_DIM_OMEGA,
        });
    }
    if !(config.eta > 0.0 && config.eta.is_finite()) {
        return Err(Error::config(format!("eta must be positive, got {}", config.eta)));
    }
    let settings = OracleSettings::default();
    let mut instances = Vec::new();
    let mut skipped = 0;
    for kind in [InstanceKind::Random, InstanceKind::Commuting, InstanceKind::Isotropic] {
        for seed in 0..config.seeds {
            let inst = QuadraticInstance::generate(kind, seed, config.dim_omega, config.dim_alpha)?;
            match check_instance(&inst, config.eta, &settings) {
                Ok(r) => instances.push(r),
                Err(Error::SingularHessian { .. }) => skipped += 1,
                Err(e) => return Err(e),
            }
        }
    }
    Ok(OracleCheckReport {
        config: *config,
        instances,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_batch_passes() {
        let report = oracle_check(&OracleCheckConfig {
            seeds: 4,
            dim_omega: 5,
            dim_alpha: 3,
            eta: 0.1,
        })
        .unwrap();
        assert_eq!(report.instances.len(), 12);
        assert!(report.passed(), "{report:#?}");
        assert!((0.0..=1.0).contains(&report.random_nonnegative_fraction()));
    }

    #[test]
    fn cap_and_eta_are_enforced() {
        let too_big = OracleCheckConfig {
            dim_omega: 128,
            ..OracleCheckConfig::default()
        };
        assert!(matches!(oracle_check(&too_big), Err(Error::DimensionCap { .. })));
        let zero = OracleCheckConfig {
            eta: 0.0,
            ..OracleCheckConfig::default()
        };
        assert!(matches!(oracle_check(&zero), Err(Error::InvalidConfig(_))));
    }
}
