//! Alternating bi-level search over the super-network, two-stage edge
//! search, re-training of discrete genotypes, and the scalar toy runs.

mod dataset;
mod toy;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::estimators::{estimate_arch_gradient_with, norm, BilevelState, EstimatorKind};
use crate::io::format_float;
use crate::oracle::OracleSettings;
use crate::problem::{BilevelProblem, Split};
use crate::rng::Rng64;
use crate::supernet::{
    degeneration_metrics, discretize, ArchParams, ArchTrainable, Batch, EdgeSpec, Genotype, OperatorKind, StemKind, SuperNet, SuperNetConfig,
    SupernetObjective,
};
use crate::{Error, Result};

pub use dataset::{generate_dataset, DatasetSpec, Generator, SyntheticDataset};
pub use toy::{toy_run, toy_trace, ToyConfig, ToyStep, ToyTrace, CONVERGENCE_BOUND, DIVERGENCE_BOUND};

/// Losses above this (or non-finite) abort a run as diverged.
pub const LOSS_BOUND: f64 = 1e12;

/// RNG streams derived from the run seed.
const STREAM_EDGE_STAGE: u64 = 1;
const STREAM_SEARCH: u64 = 2;
const STREAM_RETRAIN: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AlphaOptimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, weight_decay: f64 },
}

impl Default for AlphaOptimizer {
    fn default() -> Self {
        AlphaOptimizer::Adam {
            beta1: 0.5,
            beta2: 0.999,
            weight_decay: 1e-3,
        }
    }
}

/// Network shape and weight training, shared by search and re-training when
/// `consistency` is on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub supernet: SuperNetConfig,
    pub omega_lr: f64,
    pub omega_momentum: f64,
    pub omega_weight_decay: f64,
    pub retrain_epochs: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            supernet: SuperNetConfig::default(),
            omega_lr: 0.1,
            omega_momentum: 0.9,
            omega_weight_decay: 3e-4,
            retrain_epochs: 200,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        self.supernet.validate()?;
        if !(self.omega_lr > 0.0 && self.omega_lr.is_finite()) {
            return Err(Error::config(format!("omega_lr must be positive, got {}", self.omega_lr)));
        }
        if !(0.0..1.0).contains(&self.omega_momentum) {
            return Err(Error::config("omega_momentum must lie in [0, 1)"));
        }
        if !(self.omega_weight_decay >= 0.0) {
            return Err(Error::config("omega_weight_decay must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub estimator: EstimatorKind,
    pub epochs: usize,
    /// Omega steps before each alpha update.
    pub inner_steps: usize,
    pub alpha_lr: f64,
    pub alpha_optimizer: AlphaOptimizer,
    pub seed: u64,
    pub dataset: DatasetSpec,
    /// Re-train with the search `training` config itself.
    pub consistency: bool,
    /// Edge search first, then operator search on the selected edges.
    pub two_stage: bool,
    pub log_every: usize,
    pub training: TrainingConfig,
    /// Re-training config when `consistency` is off; defaults to `training`.
    pub retrain: Option<TrainingConfig>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            estimator: EstimatorKind::Amended { eta: 0.1 },
            epochs: 50,
            inner_steps: 1,
            alpha_lr: 3e-4,
            alpha_optimizer: AlphaOptimizer::default(),
            seed: 0,
            dataset: DatasetSpec::default(),
            consistency: true,
            two_stage: false,
            log_every: 10,
            training: TrainingConfig::default(),
            retrain: None,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        self.estimator.validate()?;
        self.dataset.validate()?;
        self.training.validate()?;
        if self.inner_steps == 0 || self.log_every == 0 {
            return Err(Error::config("inner_steps and log_every must be positive"));
        }
        if !(self.alpha_lr > 0.0 && self.alpha_lr.is_finite()) {
            return Err(Error::config(format!("alpha_lr must be positive, got {}", self.alpha_lr)));
        }
        if let AlphaOptimizer::Adam { beta1, beta2, weight_decay } = self.alpha_optimizer {
            if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && weight_decay >= 0.0) {
                return Err(Error::config("adam needs betas in [0, 1) and a non-negative weight decay"));
            }
        }
        if self.dataset.dim() != self.training.supernet.input_dim {
            return Err(Error::config(format!(
                "dataset has {} features, supernet input_dim is {}",
                self.dataset.dim(),
                self.training.supernet.input_dim
            )));
        }
        if self.consistency && self.retrain.is_some() {
            return Err(Error::config("consistency = true forbids a separate retrain config"));
        }
        if let Some(r) = &self.retrain {
            r.validate()?;
        }
        Ok(())
    }

    /// Degeneration-prone task: rings padded with four pure-noise views and
    /// only 16 training points, so the parametric operator overfits and the
    /// validation loss pushes the mixture towards `None`/`SkipConnect`.
    /// Operators are `{None, SkipConnect, NonLinear}` and `alpha_lr` is large.
    pub fn degeneration_task(estimator: EstimatorKind, seed: u64) -> Self {
        let dataset = DatasetSpec {
            generator: Generator::ConcentricRings,
            size: 32,
            seed,
            signal_views: 1,
            noise_views: 4,
            ..DatasetSpec::default()
        };
        Self {
            estimator,
            epochs: 400,
            alpha_lr: 0.05,
            seed,
            log_every: 50,
            training: TrainingConfig {
                supernet: SuperNetConfig {
                    operators: vec![OperatorKind::None, OperatorKind::SkipConnect, OperatorKind::NonLinear],
                    input_dim: dataset.dim(),
                    ..SuperNetConfig::default()
                },
                omega_lr: 0.05,
                ..TrainingConfig::default()
            },
            dataset,
            ..Self::default()
        }
    }

    /// Two-stage task on a cell with three input nodes and one searched
    /// node. The raw input is split so input node 0 sees the x coordinate of
    /// a ring sample, node 1 the y coordinate and node 2 pure noise. The
    /// radius, and so the label, needs both coordinates, which makes the
    /// pair `(0, 1)` strictly dominant.
    ///
    /// At a trained omega the direct term alone often ranks the pairs wrong;
    /// the implicit term fixes that, so the stage runs the amended estimator
    /// with omega close to convergence between logit updates.
    pub fn edge_dominance_task(seed: u64) -> Self {
        let dataset = DatasetSpec {
            generator: Generator::ConcentricRings,
            size: 64,
            seed,
            signal_views: 2,
            noise_views: 1,
            split_signal: true,
        };
        Self {
            estimator: EstimatorKind::Amended { eta: 1.0 },
            epochs: 100,
            inner_steps: 50,
            alpha_lr: 0.01,
            seed,
            two_stage: true,
            log_every: 25,
            training: TrainingConfig {
                supernet: SuperNetConfig {
                    input_nodes: 3,
                    nodes_per_cell: 1,
                    feature_dim: 2,
                    input_dim: dataset.dim(),
                    stem: StemKind::Split,
                    ..SuperNetConfig::default()
                },
                omega_lr: 0.05,
                ..TrainingConfig::default()
            },
            dataset,
            ..Self::default()
        }
    }

    /// The config used for re-training. With `consistency` on this is the
    /// search config itself.
    pub fn retrain_config(&self) -> &TrainingConfig {
        match (&self.retrain, self.consistency) {
            (Some(r), false) => r,
            _ => &self.training,
        }
    }
}

/// One logged epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub epoch: usize,
    pub none_weight: f64,
    pub skip_ratio: f64,
    pub val_acc: f64,
    pub g1_norm: f64,
    pub g2_norm: f64,
    /// First 16 hex digits of the SHA-256 of the logits' bit patterns.
    pub alpha_hash: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub rows: Vec<TrajectoryRow>,
}

impl Trajectory {
    pub const CSV_HEADER: &'static str = "epoch,none_weight,skip_ratio,val_acc,g1_norm,g2_norm";

    pub fn to_csv(&self) -> String {
        let mut csv = format!("{}\n", Self::CSV_HEADER);
        for r in &self.rows {
            csv.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.epoch,
                format_float(r.none_weight),
                format_float(r.skip_ratio),
                format_float(r.val_acc),
                format_float(r.g1_norm),
                format_float(r.g2_norm)
            ));
        }
        csv
    }

    pub fn first(&self) -> Option<&TrajectoryRow> {
        self.rows.first()
    }

    pub fn last(&self) -> Option<&TrajectoryRow> {
        self.rows.last()
    }
}

pub fn alpha_hash(arch: &ArchParams) -> String {
    let mut h = Sha256::new();
    for v in arch.alpha.iter().chain(&arch.beta).flatten().flatten() {
        h.update(v.to_bits().to_le_bytes());
    }
    h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Preserved input pair per group and intermediate node.
pub type EdgeSelection = Vec<Vec<(usize, usize)>>;

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub arch: ArchParams,
    pub omega: Vec<f64>,
    pub genotype: Genotype,
    pub trajectory: Trajectory,
    /// Stage-1 result when the search ran in two stages.
    pub edge_selection: Option<EdgeSelection>,
    pub edge_trajectory: Option<Trajectory>,
}

struct LoopOutcome {
    arch: ArchParams,
    omega: Vec<f64>,
    trajectory: Trajectory,
}

enum AlphaState {
    Sgd,
    Adam { m: Vec<f64>, v: Vec<f64>, t: i32 },
}

impl AlphaState {
    fn new(opt: AlphaOptimizer, n: usize) -> Self {
        match opt {
            AlphaOptimizer::Sgd => AlphaState::Sgd,
            AlphaOptimizer::Adam { .. } => AlphaState::Adam {
                m: vec![0.0; n],
                v: vec![0.0; n],
                t: 0,
            },
        }
    }

    fn step(&mut self, opt: AlphaOptimizer, lr: f64, x: &mut [f64], g: &[f64]) {
        match (self, opt) {
            (
                AlphaState::Adam { m, v, t },
                AlphaOptimizer::Adam {
                    beta1,
                    beta2,
                    weight_decay,
                },
            ) => {
                *t += 1;
                let c1 = 1.0 - beta1.powi(*t);
                let c2 = 1.0 - beta2.powi(*t);
                for i in 0..x.len() {
                    let gi = g[i] + weight_decay * x[i];
                    m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                    v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                    x[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + 1e-8);
                }
            }
            _ => x.iter_mut().zip(g).for_each(|(x, g)| *x -= lr * g),
        }
    }
}

fn check_loss(loss: f64, step: usize) -> Result<()> {
    if loss.is_finite() && loss.abs() <= LOSS_BOUND {
        Ok(())
    } else {
        Err(Error::Diverged { step })
    }
}

/// Momentum SGD on omega, full batch. Weight decay lives in the training
/// objective, so the gradient already includes it.
struct OmegaSgd {
    velocity: Vec<f64>,
}

impl OmegaSgd {
    fn step(&mut self, cfg: &TrainingConfig, omega: &mut [f64], grad: &[f64]) {
        for i in 0..omega.len() {
            self.velocity[i] = cfg.omega_momentum * self.velocity[i] + grad[i];
            omega[i] -= cfg.omega_lr * self.velocity[i];
        }
    }
}

fn run_loop(
    cfg: &SearchConfig,
    net: &SuperNet,
    trainable: ArchTrainable,
    train: &Batch,
    val: &Batch,
    rng: &mut Rng64,
) -> Result<LoopOutcome> {
    let base = net.init_arch();
    let mut omega = net.init_omega(rng);
    let objective = SupernetObjective {
        net,
        base: base.clone(),
        trainable,
        train,
        val,
        weight_decay: cfg.training.omega_weight_decay,
    };
    let mut alpha = base.flatten(trainable);
    let mut sgd = OmegaSgd {
        velocity: vec![0.0; omega.len()],
    };
    let mut adam = AlphaState::new(cfg.alpha_optimizer, alpha.len());
    let settings = OracleSettings::default();
    let mut trajectory = Trajectory::default();

    for epoch in 1..=cfg.epochs {
        for _ in 0..cfg.inner_steps {
            let lg = objective.evaluate(Split::Train, &omega, &alpha, crate::problem::Wrt::Omega)?;
            check_loss(lg.loss, epoch)?;
            let grad = lg.omega.ok_or(Error::NonFinite("omega gradient"))?;
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged { step: epoch });
            }
            sgd.step(&cfg.training, &mut omega, &grad);
        }
        check_loss(objective.loss(Split::Val, &omega, &alpha)?, epoch)?;
        let state = BilevelState::new(omega.clone(), alpha.clone());
        let g = match estimate_arch_gradient_with(cfg.estimator, &objective, &state, &settings) {
            Ok(g) => g,
            Err(Error::NonFinite(_)) => return Err(Error::Diverged { step: epoch }),
            Err(e) => return Err(e),
        };
        if g.total.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { step: epoch });
        }
        adam.step(cfg.alpha_optimizer, cfg.alpha_lr, &mut alpha, &g.total);
        if alpha.iter().any(|a| !a.is_finite() || a.abs() > LOSS_BOUND) {
            return Err(Error::Diverged { step: epoch });
        }

        if epoch == 1 || epoch % cfg.log_every == 0 || epoch == cfg.epochs {
            let arch = objective.arch(&alpha)?;
            let metrics = degeneration_metrics(net, &arch);
            trajectory.rows.push(TrajectoryRow {
                epoch,
                none_weight: metrics.mean_none_weight,
                skip_ratio: metrics.skip_ratio,
                val_acc: net.accuracy(&arch, &omega, val)?,
                g1_norm: norm(&g.direct),
                g2_norm: norm(&g.correction),
                alpha_hash: alpha_hash(&arch),
            });
        }
    }
    let arch = objective.arch(&alpha)?;
    Ok(LoopOutcome {
        arch,
        omega,
        trajectory,
    })
}

fn data(cfg: &SearchConfig) -> Result<(Batch, Batch)> {
    Ok(generate_dataset(&cfg.dataset)?.split_halves())
}

/// Stage 1 of the two-stage search: operators stay an equal-weight mixture
/// while the input-pair logits `beta` are optimized. Returns the argmax pair
/// per node (lowest pair on ties) and the stage trajectory.
pub fn edge_search_stage(cfg: &SearchConfig) -> Result<(EdgeSelection, Trajectory)> {
    cfg.validate()?;
    let net_cfg = SuperNetConfig {
        edge_search: true,
        ..cfg.training.supernet.clone()
    };
    let net = SuperNet::new(net_cfg)?;
    let groups = net.config().num_groups();
    let trivial = (0..groups).all(|g| net.combinations(g).iter().all(|c| c.len() == 1));
    let (arch, trajectory) = if trivial {
        (net.init_arch(), Trajectory::default())
    } else {
        let (train, val) = data(cfg)?;
        let mut rng = Rng64::fork(cfg.seed, STREAM_EDGE_STAGE);
        let out = run_loop(cfg, &net, ArchTrainable::Edges, &train, &val, &mut rng)?;
        (out.arch, out.trajectory)
    };
    let selection = (0..groups)
        .map(|g| {
            net.combinations(g)
                .iter()
                .zip(&arch.beta[g])
                .map(|(combos, beta)| combos[crate::supernet::argmax(beta)])
                .collect()
        })
        .collect();
    Ok((selection, trajectory))
}

/// Alternating search: `inner_steps` omega steps on the training half, then
/// one architecture step on the validation half, per epoch.
pub fn bilevel_search(cfg: &SearchConfig) -> Result<SearchOutcome> {
    cfg.validate()?;
    let (train, val) = data(cfg)?;
    let (net_cfg, edge_selection, edge_trajectory) = if cfg.two_stage {
        let (selection, traj) = edge_search_stage(cfg)?;
        let k = cfg.training.supernet.input_nodes;
        let edges = selection
            .iter()
            .map(|pairs| {
                pairs
                    .iter()
                    .enumerate()
                    .flat_map(|(n, &(i1, i2))| [(i1, k + n), (i2, k + n)])
                    .collect()
            })
            .collect();
        let net_cfg = SuperNetConfig {
            edges: EdgeSpec::PerGroup(edges),
            edge_search: false,
            ..cfg.training.supernet.clone()
        };
        (net_cfg, Some(selection), Some(traj))
    } else {
        (cfg.training.supernet.clone(), None, None)
    };
    let net = SuperNet::new(net_cfg)?;
    let trainable = if net.config().edge_search {
        ArchTrainable::Both
    } else {
        ArchTrainable::Operators
    };
    let mut rng = Rng64::fork(cfg.seed, STREAM_SEARCH);
    let out = run_loop(cfg, &net, trainable, &train, &val, &mut rng)?;
    Ok(SearchOutcome {
        genotype: discretize(&net, &out.arch),
        arch: out.arch,
        omega: out.omega,
        trajectory: out.trajectory,
        edge_selection,
        edge_trajectory,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrainOutcome {
    pub val_accuracy: f64,
    /// Training loss before each epoch's update.
    pub loss_curve: Vec<f64>,
}

/// Trains the discrete sub-network of `genotype` from a fresh initialization
/// on the training half and reports accuracy on the held-out half.
pub fn retrain(genotype: &Genotype, training: &TrainingConfig, dataset: &SyntheticDataset, seed: u64) -> Result<RetrainOutcome> {
    training.validate()?;
    let net = SuperNet::discrete(&training.supernet, genotype)?;
    let (train, val) = dataset.split_halves();
    let arch = net.init_arch();
    let objective = SupernetObjective {
        net: &net,
        base: arch.clone(),
        trainable: ArchTrainable::Operators,
        train: &train,
        val: &val,
        weight_decay: training.omega_weight_decay,
    };
    let mut rng = Rng64::fork(seed, STREAM_RETRAIN);
    let mut omega = net.init_omega(&mut rng);
    let mut sgd = OmegaSgd {
        velocity: vec![0.0; omega.len()],
    };
    let mut loss_curve = Vec::with_capacity(training.retrain_epochs);
    for epoch in 1..=training.retrain_epochs {
        let lg = objective.evaluate(Split::Train, &omega, &[], crate::problem::Wrt::Omega)?;
        check_loss(lg.loss, epoch)?;
        loss_curve.push(lg.loss);
        let grad = lg.omega.ok_or(Error::NonFinite("omega gradient"))?;
        sgd.step(training, &mut omega, &grad);
    }
    Ok(RetrainOutcome {
        val_accuracy: net.accuracy(&arch, &omega, &val)?,
        loss_curve,
    })
}

#[cfg(test)]
mod tests;
