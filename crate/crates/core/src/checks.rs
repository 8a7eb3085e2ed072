//! Gradient-check suite: every tape operation and the super-network loss
//! against central differences over many random seeds.

use serde::Serialize;

use crate::diffcore::{gradcheck, OpKind, Tape, Tensor, Var};
use crate::problem::Wrt;
use crate::rng::Rng64;
use crate::supernet::{ArchTrainable, Batch, StemKind, SuperNet, SuperNetConfig};
use crate::Result;

/// Tolerance for polynomial compositions, where central differences are
/// exact up to rounding.
pub const POLYNOMIAL_TOLERANCE: f64 = 1e-8;
/// Tolerance for everything else.
pub const SMOOTH_TOLERANCE: f64 = 1e-5;
/// Finite-difference step used by the suite.
pub const STEP: f64 = 1e-5;

const GROUP: &str = "x";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckResult {
    pub name: String,
    pub seeds: u64,
    pub max_error: f64,
    pub tolerance: f64,
}

impl GradcheckResult {
    pub fn passed(&self) -> bool {
        self.max_error < self.tolerance
    }
}

/// One instance of every operation kind.
pub fn op_kinds() -> Vec<OpKind> {
    vec![
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::MatMul,
        OpKind::ScalarScale,
        OpKind::Tanh,
        OpKind::Relu,
        OpKind::Softmax,
        OpKind::Log,
        OpKind::Sum,
        OpKind::Mean,
        OpKind::SquaredError,
        OpKind::SoftmaxCrossEntropy { labels: Vec::new() },
        OpKind::Concat,
        OpKind::Affine,
        OpKind::Select { index: 0 },
    ]
}

fn is_polynomial(kind: &OpKind) -> bool {
    !matches!(
        kind,
        OpKind::Tanh | OpKind::Relu | OpKind::Softmax | OpKind::Log | OpKind::SoftmaxCrossEntropy { .. }
    )
}

/// Max error of `case(seed)` over seeds `0..seeds`.
pub fn check_with<F>(name: &str, tolerance: f64, seeds: u64, mut case: F) -> GradcheckResult
where
    F: FnMut(u64) -> f64,
{
    let max_error = (0..seeds).map(&mut case).fold(0.0, f64::max);
    GradcheckResult {
        name: name.to_string(),
        seeds,
        max_error,
        tolerance,
    }
}

/// Random operands for one op, plus whatever extra the op needs.
struct OpCase {
    shapes: Vec<Vec<usize>>,
    point: Vec<f64>,
    kind: OpKind,
    weights: Vec<f64>,
}

fn dim(rng: &mut Rng64) -> usize {
    1 + (rng.next_u64() % 4) as usize
}

fn op_case(kind: &OpKind, rng: &mut Rng64) -> OpCase {
    let (n, k, o) = (dim(rng), dim(rng), dim(rng));
    let mut kind = kind.clone();
    let shapes: Vec<Vec<usize>> = match &mut kind {
        OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::SquaredError => vec![vec![n, k], vec![n, k]],
        OpKind::MatMul => vec![vec![n, k], vec![k, o]],
        OpKind::ScalarScale => vec![vec![1], vec![n, k]],
        OpKind::Affine => vec![vec![n, k], vec![k, o], vec![o]],
        OpKind::Concat => vec![vec![n, k], vec![n, o], vec![n, 1]],
        OpKind::SoftmaxCrossEntropy { labels } => {
            let classes = k + 1;
            *labels = (0..n).map(|_| (rng.next_u64() % classes as u64) as usize).collect();
            vec![vec![n, classes]]
        }
        OpKind::Select { index } => {
            *index = (rng.next_u64() % (n * k) as u64) as usize;
            vec![vec![n, k]]
        }
        _ => vec![vec![n, k]],
    };
    let total: usize = shapes.iter().map(|s| s.iter().product::<usize>()).sum();
    let point = match kind {
        OpKind::Log => rng.uniform_vec(total, 0.5, 2.0),
        // Keep every coordinate at least 1e-3 from the kink.
        OpKind::Relu => (0..total)
            .map(|_| {
                let v = rng.uniform_range(1e-3, 2.0);
                if rng.uniform() < 0.5 {
                    -v
                } else {
                    v
                }
            })
            .collect(),
        _ => rng.normal_vec(total, 1.0),
    };
    let out_len = match kind {
        OpKind::MatMul | OpKind::Affine => n * o,
        OpKind::Concat => n * (k + o + 1),
        _ => n * k,
    };
    OpCase {
        shapes,
        point,
        kind,
        weights: rng.normal_vec(out_len, 1.0),
    }
}

/// Value and gradient of `sum(weights * op(inputs))`, or of the op itself
/// when it already returns a scalar.
fn eval_op(case: &OpCase, point: &[f64]) -> Result<(f64, Vec<f64>)> {
    let mut tape = Tape::new();
    let mut offset = 0;
    let mut inputs: Vec<Var> = Vec::new();
    for shape in &case.shapes {
        let len: usize = shape.iter().product();
        let value = Tensor::new(shape.clone(), point[offset..offset + len].to_vec())?;
        inputs.push(tape.param(GROUP, value));
        offset += len;
    }
    let out = tape.record(case.kind.clone(), &inputs)?;
    let out = if tape.value(out).numel() == 1 && tape.value(out).rank() == 0 {
        out
    } else {
        let shape = tape.value(out).shape().to_vec();
        let w = tape.constant(Tensor::new(shape, case.weights[..tape.value(out).numel()].to_vec())?);
        let weighted = tape.mul(out, w)?;
        tape.sum(weighted)?
    };
    let grads = tape.backward(out, &[GROUP])?;
    let value = tape.value(out).item().unwrap_or(f64::NAN);
    Ok((value, grads.flat(GROUP).unwrap_or_default()))
}

pub fn check_op(kind: &OpKind, seeds: u64) -> GradcheckResult {
    let tolerance = if is_polynomial(kind) {
        POLYNOMIAL_TOLERANCE
    } else {
        SMOOTH_TOLERANCE
    };
    check_with(kind.name(), tolerance, seeds, |seed| {
        let mut rng = Rng64::fork(seed, 0x6f70);
        let case = op_case(kind, &mut rng);
        gradcheck(|p| eval_op(&case, p), &case.point, STEP)
    })
}

/// Super-network variants cycled through by seed.
fn supernet_variant(seed: u64) -> (SuperNetConfig, ArchTrainable) {
    let base = SuperNetConfig {
        num_cells: 2,
        feature_dim: 3,
        ..SuperNetConfig::default()
    };
    match seed % 4 {
        0 => (base, ArchTrainable::Operators),
        1 => (
            SuperNetConfig {
                share_cell_params: false,
                ..base
            },
            ArchTrainable::Operators,
        ),
        2 => (
            SuperNetConfig {
                nodes_per_cell: 3,
                edge_search: true,
                ..base
            },
            ArchTrainable::Both,
        ),
        _ => (
            SuperNetConfig {
                num_cells: 1,
                stem: StemKind::Split,
                input_dim: 6,
                ..base
            },
            ArchTrainable::Operators,
        ),
    }
}

/// Loss of a random batch with respect to both weights and logits.
pub fn supernet_case(seed: u64) -> Result<f64> {
    let (config, trainable) = supernet_variant(seed);
    let net = SuperNet::new(config)?;
    let mut rng = Rng64::fork(seed, 0x736e);
    let omega = net.init_omega(&mut rng);
    let base = net.init_arch();
    let alpha = rng.normal_vec(base.flat_len(trainable), 1.0);
    let rows = 4;
    let cols = net.config().input_dim;
    let batch = Batch {
        x: Tensor::matrix(rows, cols, rng.normal_vec(rows * cols, 1.0))?,
        labels: (0..rows).map(|i| i % net.config().num_classes).collect(),
    };
    let m = omega.len();
    let f = |p: &[f64]| -> Result<(f64, Vec<f64>)> {
        let arch = base.with_flat(trainable, &p[m..])?;
        let lg = net.evaluate(&arch, trainable, &p[..m], &batch, Wrt::Both)?;
        let mut g = lg.omega.unwrap_or_default();
        g.extend(lg.alpha.unwrap_or_default());
        Ok((lg.loss, g))
    };
    let mut point = omega;
    point.extend(alpha);
    Ok(gradcheck(f, &point, STEP))
}

pub fn check_supernet(seeds: u64) -> GradcheckResult {
    check_with("supernet-loss", SMOOTH_TOLERANCE, seeds, |seed| {
        supernet_case(seed).unwrap_or(f64::INFINITY)
    })
}

/// Every op kind, then the super-network loss.
pub fn gradcheck_suite(seeds: u64) -> Vec<GradcheckResult> {
    let mut out: Vec<GradcheckResult> = op_kinds().iter().map(|k| check_op(k, seeds)).collect();
    out.push(check_supernet(seeds));
    out
}
