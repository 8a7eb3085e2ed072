use super::{ArchParams, ArchTrainable, Genotype, OperatorKind, StemKind, SuperNetConfig};
use crate::diffcore::{Tape, Tensor, Var, ALPHA, OMEGA};
use crate::problem::{check_len, tape_loss_grad, BilevelProblem, LossGrad, Split, Wrt};
use crate::rng::Rng64;
use crate::{Error, Result};

/// Points of shape `(n, input_dim)` with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub x: Tensor,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Slot {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    /// Fan-in for weight matrices, `None` for biases.
    fan_in: Option<usize>,
}

impl Slot {
    fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

type Affine = (usize, usize);

#[derive(Debug, Clone, PartialEq)]
struct CellSlots {
    /// Per edge, per operator of that edge.
    edge_params: Vec<Vec<Option<Affine>>>,
    proj: Affine,
}

/// A validated super-network with its omega layout.
///
/// Built by [`SuperNet::new`] for the continuous relaxation or by
/// [`SuperNet::discrete`] for a fixed sub-network, where every edge runs
/// exactly one operator and no architectural logits exist.
#[derive(Debug, Clone, PartialEq)]
pub struct SuperNet {
    config: SuperNetConfig,
    ops: Vec<OperatorKind>,
    edges: Vec<Vec<(usize, usize)>>,
    combos: Vec<Vec<Vec<(usize, usize)>>>,
    fixed_ops: Option<Vec<Vec<OperatorKind>>>,
    slots: Vec<Slot>,
    stem: Option<Affine>,
    cells: Vec<CellSlots>,
    head: Affine,
}

struct Layout {
    slots: Vec<Slot>,
    offset: usize,
}

impl Layout {
    fn affine(&mut self, name: String, fan_in: usize, fan_out: usize) -> Affine {
        let w = self.push(format!("{name}.w"), vec![fan_in, fan_out], Some(fan_in));
        let b = self.push(format!("{name}.b"), vec![fan_out], None);
        (w, b)
    }

    fn push(&mut self, name: String, shape: Vec<usize>, fan_in: Option<usize>) -> usize {
        let slot = Slot {
            name,
            shape,
            offset: self.offset,
            fan_in,
        };
        self.offset += slot.numel();
        self.slots.push(slot);
        self.slots.len() - 1
    }
}

impl SuperNet {
    pub fn new(config: SuperNetConfig) -> Result<Self> {
        config.validate()?;
        let edges = config.group_edges()?;
        Self::build(config, edges, None)
    }

    /// Sub-network that runs the genotype's operators on its preserved edges.
    pub fn discrete(config: &SuperNetConfig, genotype: &Genotype) -> Result<Self> {
        let mut config = config.clone();
        config.edge_search = false;
        config.validate()?;
        if genotype.groups.len() != config.num_groups() {
            return Err(Error::config(format!(
                "genotype has {} groups, config has {}",
                genotype.groups.len(),
                config.num_groups()
            )));
        }
        let mut edges = Vec::new();
        let mut ops = Vec::new();
        for cell in &genotype.groups {
            let mut pairs: Vec<((usize, usize), OperatorKind)> = cell
                .nodes
                .iter()
                .flat_map(|n| n.inputs.iter().map(move |e| ((e.from, n.node), e.op)))
                .collect();
            pairs.sort_by_key(|&((i, j), _)| (j, i));
            if pairs.iter().any(|&(_, op)| op == OperatorKind::None) {
                return Err(Error::config("genotype contains the none operator"));
            }
            edges.push(pairs.iter().map(|p| p.0).collect::<Vec<_>>());
            ops.push(pairs.iter().map(|p| p.1).collect::<Vec<_>>());
        }
        config.edges = super::EdgeSpec::PerGroup(edges);
        let edges = config.group_edges()?;
        Self::build(config, edges, Some(ops))
    }

    fn build(
        config: SuperNetConfig,
        edges: Vec<Vec<(usize, usize)>>,
        fixed_ops: Option<Vec<Vec<OperatorKind>>>,
    ) -> Result<Self> {
        let ops = config.canonical_operators();
        let d = config.feature_dim;
        let first = config.input_nodes;
        let combos: Vec<Vec<Vec<(usize, usize)>>> = edges
            .iter()
            .map(|e| (first..config.num_nodes()).map(|j| SuperNetConfig::combinations(e, j)).collect())
            .collect();
        if config.edge_search {
            for (node, c) in combos.iter().flatten().enumerate() {
                if c.is_empty() {
                    return Err(Error::config(format!(
                        "edge search: intermediate node {} has fewer than two inputs",
                        first + node % config.nodes_per_cell
                    )));
                }
            }
        }

        let mut layout = Layout {
            slots: Vec::new(),
            offset: 0,
        };
        let stem = match config.stem {
            StemKind::Shared => Some(layout.affine("stem".into(), config.input_dim, d)),
            StemKind::Split => None,
        };
        let mut cells = Vec::new();
        for c in 0..config.num_cells {
            let g = config.group_of_cell(c);
            let mut edge_params = Vec::new();
            for (e, &(i, j)) in edges[g].iter().enumerate() {
                let edge_ops = match &fixed_ops {
                    Some(f) => vec![f[g][e]],
                    None => ops.clone(),
                };
                let params = edge_ops
                    .iter()
                    .map(|op| op.is_parametric().then(|| layout.affine(format!("cell{c}.edge{i}-{j}.{}", op.name()), d, d)))
                    .collect();
                edge_params.push(params);
            }
            let proj = layout.affine(format!("cell{c}.proj"), config.nodes_per_cell * d, d);
            cells.push(CellSlots { edge_params, proj });
        }
        let head = layout.affine("head".into(), d, config.num_classes);
        Ok(Self {
            config,
            ops,
            edges,
            combos,
            fixed_ops,
            slots: layout.slots,
            stem,
            cells,
            head,
        })
    }

    pub fn config(&self) -> &SuperNetConfig {
        &self.config
    }

    pub fn operators(&self) -> &[OperatorKind] {
        &self.ops
    }

    pub fn edges(&self, group: usize) -> &[(usize, usize)] {
        &self.edges[group]
    }

    pub fn combinations(&self, group: usize) -> &[Vec<(usize, usize)>] {
        &self.combos[group]
    }

    pub(super) fn fixed_ops(&self) -> Option<&[Vec<OperatorKind>]> {
        self.fixed_ops.as_deref()
    }

    pub fn is_discrete(&self) -> bool {
        self.fixed_ops.is_some()
    }

    pub fn dim_omega(&self) -> usize {
        self.slots.last().map_or(0, |s| s.offset + s.numel())
    }

    /// Omega entries outside the stem and head.
    pub fn cell_param_count(&self) -> usize {
        self.slots
            .iter()
            .filter(|s| s.name.starts_with("cell"))
            .map(Slot::numel)
            .sum()
    }

    /// Names and shapes of the omega blocks in layout order.
    pub fn omega_layout(&self) -> Vec<(String, Vec<usize>)> {
        self.slots.iter().map(|s| (s.name.clone(), s.shape.clone())).collect()
    }

    /// All-zero logits, the uniform mixture.
    pub fn init_arch(&self) -> ArchParams {
        let groups = self.config.num_groups();
        if self.is_discrete() {
            return ArchParams {
                alpha: vec![Vec::new(); groups],
                beta: Vec::new(),
            };
        }
        let alpha = (0..groups).map(|g| vec![vec![0.0; self.ops.len()]; self.edges[g].len()]).collect();
        let beta = if self.config.edge_search {
            (0..groups)
                .map(|g| self.combos[g].iter().map(|c| vec![0.0; c.len()]).collect())
                .collect()
        } else {
            Vec::new()
        };
        ArchParams { alpha, beta }
    }

    /// Gaussian weights scaled by `1/sqrt(fan_in)`, zero biases.
    pub fn init_omega(&self, rng: &mut Rng64) -> Vec<f64> {
        let mut omega = Vec::with_capacity(self.dim_omega());
        for slot in &self.slots {
            match slot.fan_in {
                Some(fan_in) => omega.extend(rng.normal_vec(slot.numel(), 1.0 / (fan_in as f64).sqrt())),
                None => omega.extend(std::iter::repeat(0.0).take(slot.numel())),
            }
        }
        omega
    }

    pub fn check_arch(&self, arch: &ArchParams) -> Result<()> {
        let shape_ok = arch.alpha.len() == self.config.num_groups()
            && arch.alpha.iter().enumerate().all(|(g, a)| {
                if self.is_discrete() {
                    a.is_empty()
                } else {
                    a.len() == self.edges[g].len() && a.iter().all(|e| e.len() == self.ops.len())
                }
            })
            && if self.config.edge_search && !self.is_discrete() {
                arch.beta.len() == self.config.num_groups()
                    && arch.beta.iter().enumerate().all(|(g, b)| {
                        b.len() == self.combos[g].len() && b.iter().zip(&self.combos[g]).all(|(l, c)| l.len() == c.len())
                    })
            } else {
                arch.beta.is_empty()
            };
        if !shape_ok {
            return Err(Error::config("architecture parameters do not match the network"));
        }
        if !arch.is_finite() {
            return Err(Error::NonFinite("architecture logits"));
        }
        Ok(())
    }

    /// Records the network on `tape` and returns the logits.
    pub fn logits(
        &self,
        tape: &mut Tape,
        arch: &ArchParams,
        trainable: ArchTrainable,
        omega: &[f64],
        x: &Tensor,
    ) -> Result<Var> {
        check_len("omega", self.dim_omega(), omega.len())?;
        self.check_arch(arch)?;
        let (n, cols) = match x.shape() {
            &[n, c] => (n, c),
            s => {
                return Err(Error::config(format!("batch must be a matrix, got shape {s:?}")));
            }
        };
        check_len("input features", self.config.input_dim, cols)?;

        let w: Vec<Var> = self
            .slots
            .iter()
            .map(|s| {
                let data = omega[s.offset..s.offset + s.numel()].to_vec();
                Tensor::new(s.shape.clone(), data).map(|t| tape.param(OMEGA, t))
            })
            .collect::<std::result::Result<_, _>>()?;
        let aff = |p: Affine| (w[p.0], w[p.1]);

        let leaf = |tape: &mut Tape, on: bool, t: Tensor| if on { tape.param(ALPHA, t) } else { tape.constant(t) };
        let alpha: Vec<Vec<Var>> = arch
            .alpha
            .iter()
            .map(|g| g.iter().map(|e| leaf(tape, trainable.operators(), Tensor::vector(e.clone()))).collect())
            .collect();
        let beta: Vec<Vec<Var>> = arch
            .beta
            .iter()
            .map(|g| g.iter().map(|b| leaf(tape, trainable.edges(), Tensor::vector(b.clone()))).collect())
            .collect();

        let d = self.config.feature_dim;
        let k = self.config.input_nodes;
        let mut states: Vec<Var> = match self.stem {
            Some(p) => {
                let input = tape.constant(x.clone());
                let (sw, sb) = aff(p);
                let s = tape.affine(input, sw, sb)?;
                vec![s; k]
            }
            None => (0..k)
                .map(|b| {
                    let block: Vec<f64> = x.data().chunks(cols).flat_map(|row| row[b * d..(b + 1) * d].iter().copied()).collect();
                    Ok(tape.constant(Tensor::matrix(n, d, block)?))
                })
                .collect::<Result<_>>()?,
        };

        for (c, cell) in self.cells.iter().enumerate() {
            let g = self.config.group_of_cell(c);
            let mut nodes: Vec<Var> = states[states.len() - k..].to_vec();
            for j in k..self.config.num_nodes() {
                let mut incoming: Vec<(usize, Var)> = Vec::new();
                for (e, &(i, _)) in self.edges[g].iter().enumerate().filter(|(_, e)| e.1 == j) {
                    let params: Vec<Option<(Var, Var)>> = cell.edge_params[e].iter().map(|p| p.map(aff)).collect();
                    let y = match &self.fixed_ops {
                        Some(f) => apply_op(tape, f[g][e], nodes[i], params[0])?
                            .expect("discrete networks never hold the none operator"),
                        None => mixed_edge_output(tape, nodes[i], alpha[g][e], &self.ops, &params)?,
                    };
                    incoming.push((i, y));
                }
                let node = if self.config.edge_search && !self.is_discrete() {
                    node_output_edge_search(tape, &incoming, &self.combos[g][j - k], beta[g][j - k])?
                } else {
                    let mut acc = incoming[0].1;
                    for &(_, y) in &incoming[1..] {
                        acc = tape.add(acc, y)?;
                    }
                    acc
                };
                nodes.push(node);
            }
            let cat = tape.concat(&nodes[k..])?;
            let (pw, pb) = aff(cell.proj);
            states.push(tape.affine(cat, pw, pb)?);
        }
        let (hw, hb) = aff(self.head);
        Ok(tape.affine(*states.last().expect("at least one state"), hw, hb)?)
    }

    /// Mean softmax cross-entropy over the batch.
    pub fn loss(
        &self,
        tape: &mut Tape,
        arch: &ArchParams,
        trainable: ArchTrainable,
        omega: &[f64],
        batch: &Batch,
    ) -> Result<Var> {
        let logits = self.logits(tape, arch, trainable, omega, &batch.x)?;
        Ok(tape.softmax_cross_entropy(logits, &batch.labels)?)
    }

    /// Loss and gradients; alpha gradients follow [`ArchParams::flatten`].
    pub fn evaluate(
        &self,
        arch: &ArchParams,
        trainable: ArchTrainable,
        omega: &[f64],
        batch: &Batch,
        wrt: Wrt,
    ) -> Result<LossGrad> {
        let mut tape = Tape::new();
        let loss = self.loss(&mut tape, arch, trainable, omega, batch)?;
        tape_loss_grad(&tape, loss, wrt)
    }

    /// Fraction of correctly classified points; ties go to the lower class.
    pub fn accuracy(&self, arch: &ArchParams, omega: &[f64], batch: &Batch) -> Result<f64> {
        if batch.is_empty() {
            return Ok(0.0);
        }
        let mut tape = Tape::new();
        let logits = self.logits(&mut tape, arch, ArchTrainable::Operators, omega, &batch.x)?;
        let classes = self.config.num_classes;
        let correct = tape
            .value(logits)
            .data()
            .chunks(classes)
            .zip(&batch.labels)
            .filter(|(row, &label)| argmax(row) == label)
            .count();
        Ok(correct as f64 / batch.len() as f64)
    }
}

/// Index of the largest entry, the first one on ties.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn apply_op(tape: &mut Tape, op: OperatorKind, x: Var, params: Option<(Var, Var)>) -> Result<Option<Var>> {
    Ok(match (op, params) {
        (OperatorKind::None, _) => None,
        (OperatorKind::SkipConnect, _) => Some(x),
        (OperatorKind::Linear, Some((w, b))) => Some(tape.affine(x, w, b)?),
        (OperatorKind::NonLinear, Some((w, b))) => {
            let h = tape.affine(x, w, b)?;
            Some(tape.tanh(h)?)
        }
        (op, None) => return Err(Error::config(format!("operator {} needs parameters", op.name()))),
    })
}

/// Softmax mixture of the candidate operators applied to `x`.
///
/// `logits` has one entry per operator in `ops`; `params` holds the
/// `(weight, bias)` pair of each parametric operator.
pub fn mixed_edge_output(
    tape: &mut Tape,
    x: Var,
    logits: Var,
    ops: &[OperatorKind],
    params: &[Option<(Var, Var)>],
) -> Result<Var> {
    check_len("edge operators", ops.len(), params.len())?;
    check_len("edge logits", ops.len(), tape.value(logits).numel())?;
    let weights = tape.softmax(logits)?;
    let mut acc: Option<Var> = None;
    for (k, (&op, &p)) in ops.iter().zip(params).enumerate() {
        let Some(out) = apply_op(tape, op, x, p)? else {
            continue;
        };
        let wk = tape.select(weights, k)?;
        let term = tape.scalar_scale(wk, out)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, term)?,
            None => term,
        });
    }
    match acc {
        Some(a) => Ok(a),
        None => Ok(tape.scale(x, 0.0)?),
    }
}

/// `sum_c softmax(beta)_c * (y_i1 + y_i2)` over the input pairs `combos`.
///
/// `inputs` maps a source node to its edge output.
pub fn node_output_edge_search(
    tape: &mut Tape,
    inputs: &[(usize, Var)],
    combos: &[(usize, usize)],
    beta: Var,
) -> Result<Var> {
    if combos.is_empty() {
        return Err(Error::config("node has no input combinations"));
    }
    check_len("combination logits", combos.len(), tape.value(beta).numel())?;
    let find = |i: usize| {
        inputs
            .iter()
            .find(|(n, _)| *n == i)
            .map(|(_, v)| *v)
            .ok_or_else(|| Error::config(format!("combination references missing input {i}")))
    };
    let weights = tape.softmax(beta)?;
    let mut acc: Option<Var> = None;
    for (k, &(i1, i2)) in combos.iter().enumerate() {
        let (a, b) = (find(i1)?, find(i2)?);
        let pair = tape.add(a, b)?;
        let wk = tape.select(weights, k)?;
        let term = tape.scalar_scale(wk, pair)?;
        acc = Some(match acc {
            Some(s) => tape.add(s, term)?,
            None => term,
        });
    }
    Ok(acc.expect("combos is non-empty"))
}

/// Search objective over a super-network with fixed train/val batches.
///
/// The outer variable is the trainable part of the architecture (see
/// [`ArchTrainable`]); the rest stays at the values in `base`. The training
/// loss carries the L2 penalty `weight_decay / 2 * |w|^2`.
#[derive(Debug, Clone)]
pub struct SupernetObjective<'a> {
    pub net: &'a SuperNet,
    pub base: ArchParams,
    pub trainable: ArchTrainable,
    pub train: &'a Batch,
    pub val: &'a Batch,
    pub weight_decay: f64,
}

impl SupernetObjective<'_> {
    pub fn arch(&self, flat: &[f64]) -> Result<ArchParams> {
        self.base.with_flat(self.trainable, flat)
    }
}

impl BilevelProblem for SupernetObjective<'_> {
    fn dim_omega(&self) -> usize {
        self.net.dim_omega()
    }

    fn dim_alpha(&self) -> usize {
        self.base.flat_len(self.trainable)
    }

    fn evaluate(&self, split: Split, omega: &[f64], alpha: &[f64], wrt: Wrt) -> Result<LossGrad> {
        let arch = self.arch(alpha)?;
        let batch = match split {
            Split::Train => self.train,
            Split::Val => self.val,
        };
        let mut lg = self.net.evaluate(&arch, self.trainable, omega, batch, wrt)?;
        if split == Split::Train && self.weight_decay != 0.0 {
            let lambda = self.weight_decay;
            lg.loss += 0.5 * lambda * omega.iter().map(|w| w * w).sum::<f64>();
            if let Some(g) = lg.omega.as_mut() {
                g.iter_mut().zip(omega).for_each(|(g, w)| *g += lambda * w);
            }
        }
        Ok(lg)
    }
}

#[cfg(test)]
mod tests {
    use super::super::{discretize, EdgeSpec};
    use super::*;
    use crate::diffcore::gradcheck;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    fn random_batch(rng: &mut Rng64, n: usize, dim: usize) -> Batch {
        Batch {
            x: Tensor::matrix(n, dim, rng.normal_vec(n * dim, 1.0)).unwrap(),
            labels: (0..n).map(|i| i % 2).collect(),
        }
    }

    fn edge(ops: &[OperatorKind], logits: Vec<f64>, x: Vec<f64>, lin: Option<(Vec<f64>, Vec<f64>)>) -> Vec<f64> {
        let mut t = Tape::new();
        let xv = t.constant(Tensor::matrix(1, x.len(), x).unwrap());
        let l = t.constant(Tensor::vector(logits));
        let params: Vec<Option<(Var, Var)>> = ops
            .iter()
            .map(|op| {
                op.is_parametric().then(|| {
                    let (w, b) = lin.clone().unwrap();
                    let d = b.len();
                    (
                        t.constant(Tensor::matrix(d, d, w).unwrap()),
                        t.constant(Tensor::vector(b)),
                    )
                })
            })
            .collect();
        let y = mixed_edge_output(&mut t, xv, l, ops, &params).unwrap();
        t.value(y).data().to_vec()
    }

    #[test]
    fn mixed_edge_examples() {
        use OperatorKind::*;
        assert_eq!(edge(&[None, SkipConnect], vec![0.0, 0.0], vec![1.0, -3.0], Option::None), vec![0.5, -1.5]);
        let y = edge(&[None, SkipConnect, Linear], vec![-100.0, 100.0, -100.0], vec![1.0, 2.0], Some((vec![0.0; 4], vec![0.0; 2])));
        assert!(close(&y, &[1.0, 2.0], 1e-10));
        let y = edge(
            &[SkipConnect, Linear],
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            Some((vec![2.0, 0.0, 0.0, 2.0], vec![0.0, 0.0])),
        );
        assert!(close(&y, &[1.5, 0.0], 1e-15));
    }

    #[test]
    fn mixed_edge_shift_invariance() {
        use OperatorKind::*;
        let lin = Some((vec![0.3, -0.2, 0.7, 1.1], vec![0.1, -0.4]));
        let ops = [None, SkipConnect, Linear, NonLinear];
        let a = edge(&ops, vec![0.2, -1.0, 0.5, 0.9], vec![0.4, -0.6], lin.clone());
        let b = edge(&ops, vec![7.2, 6.0, 7.5, 7.9], vec![0.4, -0.6], lin);
        assert!(close(&a, &b, 1e-12));
    }

    fn edge_search(inputs: &[Vec<f64>], combos: &[(usize, usize)], beta: Vec<f64>) -> Vec<f64> {
        let mut t = Tape::new();
        let ys: Vec<(usize, Var)> = inputs
            .iter()
            .enumerate()
            .map(|(i, v)| (i, t.constant(Tensor::vector(v.clone()))))
            .collect();
        let b = t.constant(Tensor::vector(beta));
        let y = node_output_edge_search(&mut t, &ys, combos, b).unwrap();
        t.value(y).data().to_vec()
    }

    #[test]
    fn edge_search_examples() {
        let (a, b, c) = (vec![1.0, 0.0], vec![0.0, 2.0], vec![4.0, 4.0]);
        let inputs = vec![a, b, c];
        assert_eq!(edge_search(&inputs, &[(0, 2)], vec![3.0]), vec![5.0, 4.0]);
        let y = edge_search(&inputs, &[(0, 1), (1, 2)], vec![0.0, 0.0]);
        assert!(close(&y, &[2.5, 4.0], 1e-15));
        let y = edge_search(&inputs, &[(0, 1), (1, 2)], vec![100.0, -100.0]);
        assert!(close(&y, &[1.0, 2.0], 1e-10));
        let mut t = Tape::new();
        let b = t.constant(Tensor::vector(vec![]));
        assert!(node_output_edge_search(&mut t, &[], &[], b).is_err());
    }

    #[test]
    fn skip_only_cell_matches_closed_form_cross_entropy() {
        let cfg = SuperNetConfig {
            nodes_per_cell: 1,
            feature_dim: 2,
            operators: vec![OperatorKind::SkipConnect],
            ..SuperNetConfig::default()
        };
        let net = SuperNet::new(cfg).unwrap();
        let mut rng = Rng64::new(4);
        let omega = net.init_omega(&mut rng);
        let batch = random_batch(&mut rng, 6, 2);
        let lg = net.evaluate(&net.init_arch(), ArchTrainable::Operators, &omega, &batch, Wrt::Omega).unwrap();

        // stem -> node = s + s -> proj -> head, all with row-vector inputs.
        let affine = |x: &[f64], w: &[f64], b: &[f64], out: usize| -> Vec<f64> {
            let inp = x.len();
            (0..out).map(|o| b[o] + (0..inp).map(|i| x[i] * w[i * out + o]).sum::<f64>()).collect()
        };
        let slots = net.omega_layout();
        let mut off = 0;
        let mut blocks = Vec::new();
        for (_, shape) in &slots {
            let n: usize = shape.iter().product();
            blocks.push(&omega[off..off + n]);
            off += n;
        }
        let mut total = 0.0;
        for (row, &label) in batch.x.data().chunks(2).zip(&batch.labels) {
            let s = affine(row, blocks[0], blocks[1], 2);
            let node: Vec<f64> = s.iter().map(|v| 2.0 * v).collect();
            let c = affine(&node, blocks[2], blocks[3], 2);
            let z = affine(&c, blocks[4], blocks[5], 2);
            let m = z[0].max(z[1]);
            let lse = m + ((z[0] - m).exp() + (z[1] - m).exp()).ln();
            total += lse - z[label];
        }
        assert!((lg.loss - total / 6.0).abs() < 1e-12);
    }

    #[test]
    fn random_init_is_near_chance() {
        let net = SuperNet::new(SuperNetConfig::default()).unwrap();
        for seed in 0..5 {
            let mut rng = Rng64::new(seed);
            let omega = net.init_omega(&mut rng);
            let batch = random_batch(&mut rng, 64, 2);
            let lg = net.evaluate(&net.init_arch(), ArchTrainable::Operators, &omega, &batch, Wrt::Omega).unwrap();
            assert!((lg.loss - 2f64.ln()).abs() < 0.5, "seed {seed}: {}", lg.loss);
        }
    }

    fn gradcheck_net(net: &SuperNet, trainable: ArchTrainable, seed: u64) -> f64 {
        let mut rng = Rng64::new(seed);
        let omega = net.init_omega(&mut rng);
        let base = net.init_arch();
        let alpha0 = rng.normal_vec(base.flat_len(trainable), 1.0);
        let batch = random_batch(&mut rng, 5, net.config().input_dim);
        let m = omega.len();
        let f = |p: &[f64]| -> Result<(f64, Vec<f64>)> {
            let arch = base.with_flat(trainable, &p[m..])?;
            let lg = net.evaluate(&arch, trainable, &p[..m], &batch, Wrt::Both)?;
            let mut g = lg.omega.unwrap();
            g.extend(lg.alpha.unwrap());
            Ok((lg.loss, g))
        };
        let point: Vec<f64> = omega.iter().chain(&alpha0).copied().collect();
        gradcheck(f, &point, 1e-5)
    }

    #[test]
    fn two_cell_gradcheck() {
        for share in [true, false] {
            let net = SuperNet::new(SuperNetConfig {
                num_cells: 2,
                feature_dim: 3,
                share_cell_params: share,
                ..SuperNetConfig::default()
            })
            .unwrap();
            assert!(gradcheck_net(&net, ArchTrainable::Operators, 1) < 1e-5);
        }
        let net = SuperNet::new(SuperNetConfig {
            nodes_per_cell: 2,
            feature_dim: 2,
            edge_search: true,
            ..SuperNetConfig::default()
        })
        .unwrap();
        assert!(gradcheck_net(&net, ArchTrainable::Both, 2) < 1e-5);
    }

    #[test]
    fn shared_alpha_gradient_is_sum_over_cells() {
        let cfg = SuperNetConfig {
            num_cells: 2,
            feature_dim: 3,
            ..SuperNetConfig::default()
        };
        let shared = SuperNet::new(cfg.clone()).unwrap();
        let split = SuperNet::new(SuperNetConfig {
            share_cell_params: false,
            ..cfg
        })
        .unwrap();
        assert_eq!(shared.dim_omega(), split.dim_omega());
        let mut rng = Rng64::new(8);
        let omega = shared.init_omega(&mut rng);
        let batch = random_batch(&mut rng, 7, 2);
        let base = shared.init_arch();
        let a = rng.normal_vec(base.flat_len(ArchTrainable::Operators), 1.0);
        let arch = base.with_flat(ArchTrainable::Operators, &a).unwrap();
        let arch2 = ArchParams {
            alpha: vec![arch.alpha[0].clone(), arch.alpha[0].clone()],
            beta: Vec::new(),
        };
        let g1 = shared.evaluate(&arch, ArchTrainable::Operators, &omega, &batch, Wrt::Alpha).unwrap().alpha.unwrap();
        let g2 = split.evaluate(&arch2, ArchTrainable::Operators, &omega, &batch, Wrt::Alpha).unwrap().alpha.unwrap();
        let n = g1.len();
        let summed: Vec<f64> = (0..n).map(|i| g2[i] + g2[n + i]).collect();
        assert!(close(&g1, &summed, 1e-10));
    }

    #[test]
    fn discrete_net_runs_exact_operators() {
        let cfg = SuperNetConfig {
            feature_dim: 2,
            ..SuperNetConfig::default()
        };
        let net = SuperNet::new(cfg.clone()).unwrap();
        let mut arch = net.init_arch();
        // Make SkipConnect win everywhere.
        arch.alpha[0].iter_mut().for_each(|e| e[1] = 1.0);
        let genotype = discretize(&net, &arch);
        let sub = SuperNet::discrete(&cfg, &genotype).unwrap();
        assert!(sub.is_discrete());
        assert_eq!(sub.cell_param_count(), 2 * 2 * 2 + 2);
        let mut rng = Rng64::new(1);
        let omega = sub.init_omega(&mut rng);
        let batch = random_batch(&mut rng, 4, 2);
        let acc = sub.accuracy(&sub.init_arch(), &omega, &batch).unwrap();
        assert!((0.0..=1.0).contains(&acc));
        assert_eq!(sub.edges(0).len(), 4);
        assert!(matches!(cfg.edges, EdgeSpec::Full));
    }

    #[test]
    fn split_stem_feeds_blocks() {
        let cfg = SuperNetConfig {
            input_nodes: 3,
            nodes_per_cell: 1,
            feature_dim: 2,
            input_dim: 6,
            stem: StemKind::Split,
            edge_search: true,
            ..SuperNetConfig::default()
        };
        let net = SuperNet::new(cfg).unwrap();
        assert_eq!(net.combinations(0), &[vec![(0, 1), (0, 2), (1, 2)]]);
        assert!(gradcheck_net(&net, ArchTrainable::Edges, 3) < 1e-5);
    }
}
