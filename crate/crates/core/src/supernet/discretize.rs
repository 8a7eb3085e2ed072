use serde::{Deserialize, Serialize};

use super::network::argmax;
use super::{ArchParams, OperatorKind, SuperNet};

/// Discrete architecture: per parameter group, per intermediate node, the
/// preserved input edges and their operators.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Genotype {
    pub groups: Vec<CellGene>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellGene {
    pub nodes: Vec<NodeGene>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeGene {
    pub node: usize,
    pub inputs: Vec<EdgeGene>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeGene {
    pub from: usize,
    pub op: OperatorKind,
}

impl Genotype {
    pub fn edges(&self) -> impl Iterator<Item = &EdgeGene> {
        self.groups.iter().flat_map(|g| g.nodes.iter()).flat_map(|n| n.inputs.iter())
    }

    /// Fraction of preserved edges running SkipConnect.
    pub fn skip_ratio(&self) -> f64 {
        let (mut total, mut skip) = (0usize, 0usize);
        for e in self.edges() {
            total += 1;
            skip += usize::from(e.op == OperatorKind::SkipConnect);
        }
        if total == 0 {
            0.0
        } else {
            skip as f64 / total as f64
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("genotype serialises")
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&l| libm::exp(l - m)).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Strongest non-None operator of an edge and its mixture weight.
fn top_operator(ops: &[OperatorKind], logits: &[f64]) -> (OperatorKind, f64) {
    let w = softmax(logits);
    let mut best: Option<usize> = None;
    for (k, &op) in ops.iter().enumerate() {
        if op == OperatorKind::None {
            continue;
        }
        if best.map_or(true, |b| logits[k] > logits[b]) {
            best = Some(k);
        }
    }
    let b = best.expect("validated operator sets hold a non-None operator");
    (ops[b], w[b])
}

/// Argmax discretization.
///
/// Each preserved edge keeps its strongest operator other than None. With
/// edge search the strongest input pair of each node is preserved; otherwise,
/// when pruning, the `inputs_per_node` edges with the largest top-operator
/// weight. Ties go to the lower operator, edge or pair index.
pub fn discretize(net: &SuperNet, arch: &ArchParams) -> Genotype {
    let cfg = net.config();
    let k = cfg.input_nodes;
    let mut groups = Vec::new();
    for g in 0..cfg.num_groups() {
        let edges = net.edges(g);
        let chosen: Vec<(OperatorKind, f64)> = match net.fixed_ops() {
            Some(f) => f[g].iter().map(|&op| (op, 1.0)).collect(),
            None => arch.alpha[g].iter().map(|l| top_operator(net.operators(), l)).collect(),
        };
        let mut nodes = Vec::new();
        for j in k..cfg.num_nodes() {
            let candidates: Vec<usize> = (0..edges.len()).filter(|&e| edges[e].1 == j).collect();
            let mut keep: Vec<usize> = if cfg.edge_search && !net.is_discrete() {
                let (i1, i2) = net.combinations(g)[j - k][argmax(&arch.beta[g][j - k])];
                candidates
                    .iter()
                    .copied()
                    .filter(|&e| edges[e].0 == i1 || edges[e].0 == i2)
                    .collect()
            } else if cfg.prune && !net.is_discrete() {
                let mut ranked = candidates.clone();
                // Stable sort keeps the lower edge index first on ties.
                ranked.sort_by(|&a, &b| chosen[b].1.total_cmp(&chosen[a].1));
                ranked.truncate(cfg.inputs_per_node);
                ranked
            } else {
                candidates
            };
            keep.sort_by_key(|&e| edges[e].0);
            nodes.push(NodeGene {
                node: j,
                inputs: keep
                    .into_iter()
                    .map(|e| EdgeGene {
                        from: edges[e].0,
                        op: chosen[e].0,
                    })
                    .collect(),
            });
        }
        groups.push(CellGene { nodes });
    }
    Genotype { groups }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegenerationMetrics {
    /// Mean softmax weight of None over all edges.
    pub mean_none_weight: f64,
    /// Fraction of preserved edges that keep SkipConnect.
    pub skip_ratio: f64,
}

pub fn degeneration_metrics(net: &SuperNet, arch: &ArchParams) -> DegenerationMetrics {
    let none = net.operators().iter().position(|&o| o == OperatorKind::None);
    let (mut sum, mut count) = (0.0, 0usize);
    for logits in arch.alpha.iter().flatten() {
        count += 1;
        if let Some(k) = none {
            sum += softmax(logits)[k];
        }
    }
    DegenerationMetrics {
        mean_none_weight: if count == 0 { 0.0 } else { sum / count as f64 },
        skip_ratio: discretize(net, arch).skip_ratio(),
    }
}

#[cfg(test)]
mod tests {
    use super::super::SuperNetConfig;
    use super::*;
    use OperatorKind::*;

    fn three_op_net() -> SuperNet {
        SuperNet::new(SuperNetConfig {
            nodes_per_cell: 1,
            operators: vec![None, SkipConnect, Linear],
            ..SuperNetConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn none_is_never_chosen() {
        let net = three_op_net();
        let mut arch = net.init_arch();
        arch.alpha[0][0] = vec![5.0, 1.0, 0.0];
        arch.alpha[0][1] = vec![0.0, 0.0, 0.0];
        let g = discretize(&net, &arch);
        assert_eq!(g.groups[0].nodes[0].inputs[0].op, SkipConnect);
        // Exact tie SkipConnect == Linear goes to SkipConnect.
        assert_eq!(g.groups[0].nodes[0].inputs[1].op, SkipConnect);
    }

    #[test]
    fn equal_logits_give_fixed_genotype() {
        let net = SuperNet::new(SuperNetConfig {
            nodes_per_cell: 3,
            ..SuperNetConfig::default()
        })
        .unwrap();
        let g = discretize(&net, &net.init_arch());
        for node in &g.groups[0].nodes {
            let from: Vec<usize> = node.inputs.iter().map(|e| e.from).collect();
            assert_eq!(from, vec![0, 1]);
            assert!(node.inputs.iter().all(|e| e.op == SkipConnect));
        }
        assert_eq!(
            g.to_json().to_string(),
            discretize(&net, &net.init_arch()).to_json().to_string()
        );
    }

    #[test]
    fn pruning_keeps_strongest_edges() {
        let net = SuperNet::new(SuperNetConfig {
            nodes_per_cell: 2,
            ..SuperNetConfig::default()
        })
        .unwrap();
        let mut arch = net.init_arch();
        // Node 3 has edges 2: (0,3), 3: (1,3), 4: (2,3).
        arch.alpha[0][4] = vec![0.0, 0.0, 0.0, 3.0];
        arch.alpha[0][3] = vec![0.0, 0.0, 2.0, 0.0];
        let g = discretize(&net, &arch);
        let node3 = &g.groups[0].nodes[1];
        assert_eq!(node3.inputs, vec![EdgeGene { from: 1, op: Linear }, EdgeGene { from: 2, op: NonLinear }]);
    }

    #[test]
    fn shift_invariance_of_discretization() {
        let net = SuperNet::new(SuperNetConfig::default()).unwrap();
        let mut rng = crate::rng::Rng64::new(5);
        let base = net.init_arch();
        let flat = rng.normal_vec(base.flat_len(super::super::ArchTrainable::Operators), 1.0);
        let a = base.with_flat(super::super::ArchTrainable::Operators, &flat).unwrap();
        let mut b = a.clone();
        b.alpha[0][2].iter_mut().for_each(|v| *v += 11.0);
        assert_eq!(discretize(&net, &a), discretize(&net, &b));
    }

    #[test]
    fn metrics_examples() {
        let net = SuperNet::new(SuperNetConfig::default()).unwrap();
        let mut arch = net.init_arch();
        let m = degeneration_metrics(&net, &arch);
        assert!((m.mean_none_weight - 0.25).abs() < 1e-15);
        assert_eq!(m.skip_ratio, 1.0);
        // log(0.95 / (0.05 / 3)) puts 0.95 on None.
        let l = (0.95f64 / (0.05 / 3.0)).ln();
        arch.alpha[0].iter_mut().for_each(|e| *e = vec![l, 0.0, 0.0, 0.0]);
        let m = degeneration_metrics(&net, &arch);
        assert!((m.mean_none_weight - 0.95).abs() < 1e-12);
    }

    #[test]
    fn edge_search_keeps_argmax_pair() {
        let net = SuperNet::new(SuperNetConfig {
            nodes_per_cell: 2,
            edge_search: true,
            ..SuperNetConfig::default()
        })
        .unwrap();
        let mut arch = net.init_arch();
        // Node 3 pairs: (0,1), (0,2), (1,2).
        arch.beta[0][1] = vec![0.0, 0.0, 1.0];
        let g = discretize(&net, &arch);
        let from: Vec<usize> = g.groups[0].nodes[1].inputs.iter().map(|e| e.from).collect();
        assert_eq!(from, vec![1, 2]);
        // Ties go to the lexicographically lowest pair.
        arch.beta[0][1] = vec![0.5, 0.5, 0.5];
        let g = discretize(&net, &arch);
        let from: Vec<usize> = g.groups[0].nodes[1].inputs.iter().map(|e| e.from).collect();
        assert_eq!(from, vec![0, 1]);
    }
}
