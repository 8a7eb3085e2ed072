use std::collections::BTreeMap;

use super::{DiffError, Tensor};

/// Parameter group holding the network weights.
pub const OMEGA: &str = "omega";
/// Parameter group holding the architectural logits.
pub const ALPHA: &str = "alpha";

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Primitive operations the tape knows how to differentiate.
#[derive(Debug, Clone, PartialEq)]
pub enum OpKind {
    Add,
    Sub,
    /// Elementwise product.
    Mul,
    /// `(m, k) x (k, n) -> (m, n)`.
    MatMul,
    /// Inputs `[s, x]` with `s` a one-element tensor; returns `s * x`.
    ScalarScale,
    Tanh,
    /// Subgradient at zero is zero.
    Relu,
    /// Softmax over the last axis.
    Softmax,
    Log,
    Sum,
    Mean,
    /// `sum((a - b)^2)` as a scalar.
    SquaredError,
    /// Mean negative log-likelihood of integer labels under row-wise softmax
    /// of `(batch, classes)` logits.
    SoftmaxCrossEntropy { labels: Vec<usize> },
    /// Concatenation along the last axis; all leading axes must agree.
    Concat,
    /// Inputs `[x, w, b]`: `x (n, i) x w (i, o) + b (o)`, with `b` added to every row.
    Affine,
    /// Extracts one element (flat index) as a scalar.
    Select { index: usize },
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::Add => "add",
            OpKind::Sub => "subtract",
            OpKind::Mul => "elementwise-multiply",
            OpKind::MatMul => "matrix-multiply",
            OpKind::ScalarScale => "scalar-scale",
            OpKind::Tanh => "tanh",
            OpKind::Relu => "relu",
            OpKind::Softmax => "softmax",
            OpKind::Log => "log",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::SquaredError => "squared-error",
            OpKind::SoftmaxCrossEntropy { .. } => "softmax-cross-entropy",
            OpKind::Concat => "concatenate",
            OpKind::Affine => "affine",
            OpKind::Select { .. } => "select",
        }
    }

    /// Number of inputs, `None` for variadic ops.
    fn arity(&self) -> Option<usize> {
        match self {
            OpKind::Add
            | OpKind::Sub
            | OpKind::Mul
            | OpKind::MatMul
            | OpKind::ScalarScale
            | OpKind::SquaredError => Some(2),
            OpKind::Affine => Some(3),
            OpKind::Concat => None,
            _ => Some(1),
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Option<OpKind>,
    inputs: Vec<Var>,
    group: Option<usize>,
}

/// Define-by-run record of a computation.
///
/// Leaves are either constants or parameters; every parameter belongs to
/// exactly one named group. Nodes only reference earlier nodes, so the
/// recording order is a topological order.
#[derive(Debug, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
    group_names: Vec<String>,
    group_leaves: Vec<Vec<Var>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    /// Empty tape with the `omega` and `alpha` groups declared.
    pub fn new() -> Self {
        let mut tape = Self {
            nodes: Vec::new(),
            group_names: Vec::new(),
            group_leaves: Vec::new(),
        };
        tape.declare_group(OMEGA);
        tape.declare_group(ALPHA);
        tape
    }

    pub fn declare_group(&mut self, name: &str) -> usize {
        if let Some(i) = self.group_index(name) {
            return i;
        }
        self.group_names.push(name.to_string());
        self.group_leaves.push(Vec::new());
        self.group_names.len() - 1
    }

    fn group_index(&self, name: &str) -> Option<usize> {
        self.group_names.iter().position(|g| g == name)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a trainable leaf in `group`.
    pub fn param(&mut self, group: &str, value: Tensor) -> Var {
        let gid = self.declare_group(group);
        let var = self.push(Node {
            value,
            op: None,
            inputs: Vec::new(),
            group: Some(gid),
        });
        self.group_leaves[gid].push(var);
        var
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Node {
            value,
            op: None,
            inputs: Vec::new(),
            group: None,
        })
    }

    fn push(&mut self, node: Node) -> Var {
        self.nodes.push(node);
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    /// Leaves of a group in registration order.
    pub fn group(&self, name: &str) -> Option<&[Var]> {
        self.group_index(name).map(|g| self.group_leaves[g].as_slice())
    }

    /// Evaluates `op` on `inputs` and appends the result.
    pub fn record(&mut self, op: OpKind, inputs: &[Var]) -> Result<Var, DiffError> {
        if let Some(n) = op.arity() {
            if inputs.len() != n {
                return Err(DiffError::Arity {
                    op: op.name(),
                    expected: n,
                    got: inputs.len(),
                });
            }
        }
        for v in inputs {
            if v.0 >= self.nodes.len() {
                return Err(DiffError::UnknownVar(v.0));
            }
        }
        let values: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
        let value = forward(&op, &values)?;
        Ok(self.push(Node {
            value,
            op: Some(op),
            inputs: inputs.to_vec(),
            group: None,
        }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.record(OpKind::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.record(OpKind::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.record(OpKind::Mul, &[a, b])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.record(OpKind::MatMul, &[a, b])
    }

    pub fn scalar_scale(&mut self, s: Var, x: Var) -> Result<Var, DiffError> {
        self.record(OpKind::ScalarScale, &[s, x])
    }

    /// Multiplies by a constant.
    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var, DiffError> {
        let s = self.constant(Tensor::scalar(c));
        self.scalar_scale(s, x)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, DiffError> {
        self.record(OpKind::Tanh, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, DiffError> {
        self.record(OpKind::Relu, &[x])
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var, DiffError> {
        self.record(OpKind::Softmax, &[x])
    }

    pub fn log(&mut self, x: Var) -> Result<Var, DiffError> {
        self.record(OpKind::Log, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, DiffError> {
        self.record(OpKind::Sum, &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, DiffError> {
        self.record(OpKind::Mean, &[x])
    }

    pub fn squared_error(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.record(OpKind::SquaredError, &[a, b])
    }

    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var, DiffError> {
        self.record(
            OpKind::SoftmaxCrossEntropy {
                labels: labels.to_vec(),
            },
            &[logits],
        )
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, DiffError> {
        self.record(OpKind::Concat, parts)
    }

    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var, DiffError> {
        self.record(OpKind::Affine, &[x, w, b])
    }

    pub fn select(&mut self, x: Var, index: usize) -> Result<Var, DiffError> {
        self.record(OpKind::Select { index }, &[x])
    }

    /// Reverse-mode gradients of a scalar `output` for every leaf in `groups`.
    ///
    /// Leaves outside the requested groups are not visited; leaves recorded
    /// after `output` get zero gradients.
    pub fn backward(&self, output: Var, groups: &[&str]) -> Result<GradientBundle, DiffError> {
        if output.0 >= self.nodes.len() {
            return Err(DiffError::UnknownVar(output.0));
        }
        let out_value = &self.nodes[output.0].value;
        if out_value.numel() != 1 {
            return Err(DiffError::NonScalarOutput {
                shape: out_value.shape().to_vec(),
            });
        }
        let gids = groups
            .iter()
            .map(|g| {
                self.group_index(g)
                    .ok_or_else(|| DiffError::UnknownGroup((*g).to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;

        let n = output.0 + 1;
        let mut needs = vec![false; n];
        for (i, node) in self.nodes[..n].iter().enumerate() {
            needs[i] = match node.group {
                Some(g) => gids.contains(&g),
                None => node.inputs.iter().any(|v| needs[v.0]),
            };
        }

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        if needs[output.0] {
            grads[output.0] = Some(vec![1.0]);
        }
        for i in (0..n).rev() {
            let Some(op) = &self.nodes[i].op else {
                continue;
            };
            let Some(g) = grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            let input_needs: Vec<bool> = node.inputs.iter().map(|v| needs[v.0]).collect();
            let values: Vec<&Tensor> = node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            let contributions = vjp(op, &values, &node.value, &g, &input_needs);
            for (v, c) in node.inputs.iter().zip(contributions) {
                let Some(c) = c else { continue };
                match &mut grads[v.0] {
                    Some(acc) => acc.iter_mut().zip(&c).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(c),
                }
            }
        }

        let mut bundle = GradientBundle::default();
        for (&gid, name) in gids.iter().zip(groups) {
            let entries = self.group_leaves[gid]
                .iter()
                .map(|&leaf| {
                    let shape = self.nodes[leaf.0].value.shape().to_vec();
                    let grad = match grads.get_mut(leaf.0).and_then(Option::take) {
                        Some(data) => Tensor::new(shape, data).expect("gradient shape"),
                        None => Tensor::zeros(shape),
                    };
                    (leaf, grad)
                })
                .collect();
            bundle.groups.insert((*name).to_string(), entries);
        }
        Ok(bundle)
    }
}

/// Gradients per parameter group, leaves kept in registration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradientBundle {
    groups: BTreeMap<String, Vec<(Var, Tensor)>>,
}

impl GradientBundle {
    pub fn group(&self, name: &str) -> Option<&[(Var, Tensor)]> {
        self.groups.get(name).map(Vec::as_slice)
    }

    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.groups
            .values()
            .flat_map(|entries| entries.iter())
            .find(|(v, _)| *v == var)
            .map(|(_, t)| t)
    }

    /// Concatenation of a group's gradients in registration order.
    pub fn flat(&self, name: &str) -> Option<Vec<f64>> {
        self.groups
            .get(name)
            .map(|entries| entries.iter().flat_map(|(_, t)| t.data().iter().copied()).collect())
    }

    pub fn group_names(&self) -> impl Iterator<Item = &str> {
        self.groups.keys().map(String::as_str)
    }
}

fn mismatch(op: &OpKind, inputs: &[&Tensor]) -> DiffError {
    DiffError::ShapeMismatch {
        op: op.name(),
        shapes: inputs.iter().map(|t| t.shape().to_vec()).collect(),
    }
}

fn map_unary(x: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| f(v)).collect()).expect("same shape")
}

fn zip_binary(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

fn as_matrix(t: &Tensor) -> Option<(usize, usize)> {
    match t.shape() {
        [r, c] => Some((*r, *c)),
        _ => None,
    }
}

fn softmax_rows(data: &[f64], width: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(data.len());
    for row in data.chunks(width) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&z| libm::exp(z - max)).collect();
        let total: f64 = exps.iter().sum();
        out.extend(exps.into_iter().map(|e| e / total));
    }
    out
}

fn forward(op: &OpKind, x: &[&Tensor]) -> Result<Tensor, DiffError> {
    match op {
        OpKind::Add | OpKind::Sub | OpKind::Mul => {
            if x[0].shape() != x[1].shape() {
                return Err(mismatch(op, x));
            }
            Ok(match op {
                OpKind::Add => zip_binary(x[0], x[1], |a, b| a + b),
                OpKind::Sub => zip_binary(x[0], x[1], |a, b| a - b),
                _ => zip_binary(x[0], x[1], |a, b| a * b),
            })
        }
        OpKind::MatMul => {
            let ((m, k), (k2, n)) = match (as_matrix(x[0]), as_matrix(x[1])) {
                (Some(a), Some(b)) if a.1 == b.0 => (a, b),
                _ => return Err(mismatch(op, x)),
            };
            debug_assert_eq!(k, k2);
            Tensor::matrix(m, n, matmul(x[0].data(), x[1].data(), m, k, n))
        }
        OpKind::ScalarScale => {
            let s = x[0].item().ok_or_else(|| mismatch(op, x))?;
            Ok(map_unary(x[1], |v| s * v))
        }
        OpKind::Tanh => Ok(map_unary(x[0], libm::tanh)),
        OpKind::Relu => Ok(map_unary(x[0], |v| if v > 0.0 { v } else { 0.0 })),
        OpKind::Softmax => {
            if x[0].rank() == 0 || x[0].last_dim() == 0 {
                return Err(mismatch(op, x));
            }
            Tensor::new(x[0].shape().to_vec(), softmax_rows(x[0].data(), x[0].last_dim()))
        }
        OpKind::Log => {
            if let Some(bad) = x[0].data().iter().find(|&&v| v <= 0.0 || v.is_nan()) {
                return Err(DiffError::Domain {
                    op: op.name(),
                    detail: format!("non-positive input {bad}"),
                });
            }
            Ok(map_unary(x[0], libm::log))
        }
        OpKind::Sum => Ok(Tensor::scalar(x[0].data().iter().sum())),
        OpKind::Mean => {
            if x[0].numel() == 0 {
                return Err(mismatch(op, x));
            }
            Ok(Tensor::scalar(x[0].data().iter().sum::<f64>() / x[0].numel() as f64))
        }
        OpKind::SquaredError => {
            if x[0].shape() != x[1].shape() {
                return Err(mismatch(op, x));
            }
            let total = x[0]
                .data()
                .iter()
                .zip(x[1].data())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            Ok(Tensor::scalar(total))
        }
        OpKind::SoftmaxCrossEntropy { labels } => {
            let (rows, classes) = as_matrix(x[0]).ok_or_else(|| mismatch(op, x))?;
            if rows == 0 || labels.len() != rows {
                return Err(mismatch(op, x));
            }
            if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
                return Err(DiffError::InvalidLabel { label, classes });
            }
            let mut total = 0.0;
            for (row, &label) in x[0].data().chunks(classes).zip(labels) {
                total += log_sum_exp(row) - row[label];
            }
            Ok(Tensor::scalar(total / rows as f64))
        }
        OpKind::Concat => {
            let first = x.first().ok_or(DiffError::Arity {
                op: op.name(),
                expected: 1,
                got: 0,
            })?;
            let rank = first.rank();
            let lead = &first.shape()[..rank.saturating_sub(1)];
            if rank == 0 || x.iter().any(|t| t.rank() != rank || &t.shape()[..rank - 1] != lead) {
                return Err(mismatch(op, x));
            }
            let outer: usize = lead.iter().product();
            let width: usize = x.iter().map(|t| t.last_dim()).sum();
            let mut data = Vec::with_capacity(outer * width);
            for r in 0..outer {
                for t in x {
                    let w = t.last_dim();
                    data.extend_from_slice(&t.data()[r * w..(r + 1) * w]);
                }
            }
            let mut shape = lead.to_vec();
            shape.push(width);
            Tensor::new(shape, data)
        }
        OpKind::Affine => {
            let (rows, inner, out) = match (as_matrix(x[0]), as_matrix(x[1]), x[2].shape()) {
                (Some((r, i)), Some((i2, o)), [o2]) if i == i2 && o == *o2 => (r, i, o),
                _ => return Err(mismatch(op, x)),
            };
            let mut data = matmul(x[0].data(), x[1].data(), rows, inner, out);
            for row in data.chunks_mut(out) {
                row.iter_mut().zip(x[2].data()).for_each(|(v, b)| *v += b);
            }
            Tensor::matrix(rows, out, data)
        }
        OpKind::Select { index } => x[0]
            .data()
            .get(*index)
            .map(|&v| Tensor::scalar(v))
            .ok_or_else(|| mismatch(op, x)),
    }
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + libm::log(row.iter().map(|&z| libm::exp(z - max)).sum::<f64>())
}

fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            crow.iter_mut().zip(brow).for_each(|(c, b)| *c += aip * b);
        }
    }
    c
}

/// `g (m, n) x b^T` where `b` is `(k, n)`.
fn matmul_rhs_t(g: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            out[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `a^T x g` where `a` is `(m, k)` and `g` is `(m, n)`.
fn matmul_lhs_t(a: &[f64], g: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            let orow = &mut out[p * n..(p + 1) * n];
            orow.iter_mut().zip(grow).for_each(|(o, g)| *o += aip * g);
        }
    }
    out
}

/// Vector-Jacobian products for each input that needs a gradient.
fn vjp(op: &OpKind, x: &[&Tensor], y: &Tensor, g: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
    let want = |i: usize| needs.get(i).copied().unwrap_or(false);
    let scalar_g = g[0];
    match op {
        OpKind::Add => vec![
            want(0).then(|| g.to_vec()),
            want(1).then(|| g.to_vec()),
        ],
        OpKind::Sub => vec![
            want(0).then(|| g.to_vec()),
            want(1).then(|| g.iter().map(|v| -v).collect()),
        ],
        OpKind::Mul => vec![
            want(0).then(|| g.iter().zip(x[1].data()).map(|(g, b)| g * b).collect()),
            want(1).then(|| g.iter().zip(x[0].data()).map(|(g, a)| g * a).collect()),
        ],
        OpKind::MatMul => {
            let (m, k) = as_matrix(x[0]).expect("checked in forward");
            let n = x[1].shape()[1];
            vec![
                want(0).then(|| matmul_rhs_t(g, x[1].data(), m, k, n)),
                want(1).then(|| matmul_lhs_t(x[0].data(), g, m, k, n)),
            ]
        }
        OpKind::ScalarScale => {
            let s = x[0].data()[0];
            vec![
                want(0).then(|| vec![g.iter().zip(x[1].data()).map(|(g, v)| g * v).sum()]),
                want(1).then(|| g.iter().map(|g| s * g).collect()),
            ]
        }
        OpKind::Tanh => vec![want(0).then(|| {
            g.iter()
                .zip(y.data())
                .map(|(g, t)| g * (1.0 - t * t))
                .collect()
        })],
        OpKind::Relu => vec![want(0).then(|| {
            g.iter()
                .zip(x[0].data())
                .map(|(g, v)| if *v > 0.0 { *g } else { 0.0 })
                .collect()
        })],
        OpKind::Softmax => vec![want(0).then(|| {
            let w = y.last_dim();
            let mut out = Vec::with_capacity(g.len());
            for (grow, yrow) in g.chunks(w).zip(y.data().chunks(w)) {
                let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                out.extend(grow.iter().zip(yrow).map(|(gj, yj)| yj * (gj - dot)));
            }
            out
        })],
        OpKind::Log => vec![want(0).then(|| g.iter().zip(x[0].data()).map(|(g, v)| g / v).collect())],
        OpKind::Sum => vec![want(0).then(|| vec![scalar_g; x[0].numel()])],
        OpKind::Mean => {
            let n = x[0].numel() as f64;
            vec![want(0).then(|| vec![scalar_g / n; x[0].numel()])]
        }
        OpKind::SquaredError => {
            let ga: Vec<f64> = x[0]
                .data()
                .iter()
                .zip(x[1].data())
                .map(|(a, b)| 2.0 * scalar_g * (a - b))
                .collect();
            let gb = want(1).then(|| ga.iter().map(|v| -v).collect());
            vec![want(0).then_some(ga), gb]
        }
        OpKind::SoftmaxCrossEntropy { labels } => vec![want(0).then(|| {
            let classes = x[0].last_dim();
            let rows = labels.len() as f64;
            let mut out = softmax_rows(x[0].data(), classes);
            for (row, &label) in out.chunks_mut(classes).zip(labels) {
                row[label] -= 1.0;
                row.iter_mut().for_each(|v| *v *= scalar_g / rows);
            }
            out
        })],
        OpKind::Concat => {
            let width = y.last_dim();
            let outer = y.numel() / width.max(1);
            let mut offset = 0;
            x.iter()
                .enumerate()
                .map(|(i, t)| {
                    let w = t.last_dim();
                    let part = want(i).then(|| {
                        let mut out = Vec::with_capacity(t.numel());
                        for r in 0..outer {
                            out.extend_from_slice(&g[r * width + offset..r * width + offset + w]);
                        }
                        out
                    });
                    offset += w;
                    part
                })
                .collect()
        }
        OpKind::Affine => {
            let (m, k) = as_matrix(x[0]).expect("checked in forward");
            let n = x[2].numel();
            let gbias = want(2).then(|| {
                let mut out = vec![0.0; n];
                for row in g.chunks(n) {
                    out.iter_mut().zip(row).for_each(|(o, v)| *o += v);
                }
                out
            });
            vec![
                want(0).then(|| matmul_rhs_t(g, x[1].data(), m, k, n)),
                want(1).then(|| matmul_lhs_t(x[0].data(), g, m, k, n)),
                gbias,
            ]
        }
        OpKind::Select { index } => vec![want(0).then(|| {
            let mut out = vec![0.0; x[0].numel()];
            out[*index] = scalar_g;
            out
        })],
    }
}
