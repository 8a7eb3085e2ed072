//! Toy DARTS-style super-network.
//!
//! A cell has `input_nodes` input nodes followed by `nodes_per_cell`
//! intermediate nodes. Every edge `(i, j)` with `i < j` carries a softmax
//! mixture of candidate operators. An intermediate node sums its incoming
//! edges, or mixes input pairs through `beta` when edge search is on. The
//! cell output is an affine projection of the concatenated intermediate
//! nodes. Each cell reads the last `input_nodes` states of the network, so
//! the first cell sees the stem outputs and later cells see earlier cells.

mod discretize;
mod network;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use discretize::{degeneration_metrics, discretize, CellGene, DegenerationMetrics, EdgeGene, Genotype, NodeGene};
pub(crate) use network::argmax;
pub use network::{mixed_edge_output, node_output_edge_search, Batch, SuperNet, SupernetObjective};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OperatorKind {
    None,
    SkipConnect,
    /// Affine map `d -> d`.
    Linear,
    /// `tanh` of an affine map.
    NonLinear,
}

impl OperatorKind {
    pub const ALL: [OperatorKind; 4] = [
        OperatorKind::None,
        OperatorKind::SkipConnect,
        OperatorKind::Linear,
        OperatorKind::NonLinear,
    ];

    pub fn is_parametric(self) -> bool {
        matches!(self, OperatorKind::Linear | OperatorKind::NonLinear)
    }

    pub fn name(self) -> &'static str {
        match self {
            OperatorKind::None => "none",
            OperatorKind::SkipConnect => "skip-connect",
            OperatorKind::Linear => "linear",
            OperatorKind::NonLinear => "non-linear",
        }
    }
}

/// How the input nodes of the first cell are fed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StemKind {
    /// One affine stem `input_dim -> feature_dim`, copied to every input node.
    Shared,
    /// The raw input is `input_nodes` blocks of width `feature_dim`, one per
    /// input node.
    Split,
}

/// Candidate edges of a cell. Node indices count the input nodes first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdgeSpec {
    /// Every `(i, j)` with `i < j`.
    Full,
    /// Each intermediate node reads only its predecessor.
    Chain,
    List(Vec<(usize, usize)>),
    /// One edge list per parameter group.
    PerGroup(Vec<Vec<(usize, usize)>>),
}

/// Which architectural logits form the outer variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArchTrainable {
    Operators,
    Edges,
    Both,
}

impl ArchTrainable {
    pub fn operators(self) -> bool {
        matches!(self, ArchTrainable::Operators | ArchTrainable::Both)
    }

    pub fn edges(self) -> bool {
        matches!(self, ArchTrainable::Edges | ArchTrainable::Both)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuperNetConfig {
    pub num_cells: usize,
    pub nodes_per_cell: usize,
    pub input_nodes: usize,
    pub feature_dim: usize,
    pub input_dim: usize,
    pub num_classes: usize,
    pub edges: EdgeSpec,
    /// One set of logits for all cells instead of one per cell.
    pub share_cell_params: bool,
    pub operators: Vec<OperatorKind>,
    pub inputs_per_node: usize,
    /// Keep only the `inputs_per_node` strongest edges per node when
    /// discretizing.
    pub prune: bool,
    pub stem: StemKind,
    /// Mix input pairs per node through `beta`.
    pub edge_search: bool,
}

impl Default for SuperNetConfig {
    fn default() -> Self {
        Self {
            num_cells: 1,
            nodes_per_cell: 2,
            input_nodes: 2,
            feature_dim: 4,
            input_dim: 2,
            num_classes: 2,
            edges: EdgeSpec::Full,
            share_cell_params: true,
            operators: OperatorKind::ALL.to_vec(),
            inputs_per_node: 2,
            prune: true,
            stem: StemKind::Shared,
            edge_search: false,
        }
    }
}

impl SuperNetConfig {
    pub fn num_groups(&self) -> usize {
        if self.share_cell_params {
            1
        } else {
            self.num_cells
        }
    }

    pub fn group_of_cell(&self, cell: usize) -> usize {
        if self.share_cell_params {
            0
        } else {
            cell
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.input_nodes + self.nodes_per_cell
    }

    /// Operator set in canonical order without duplicates.
    pub fn canonical_operators(&self) -> Vec<OperatorKind> {
        let mut ops = self.operators.clone();
        ops.sort();
        ops.dedup();
        ops
    }

    /// Edge list of every group, sorted by `(j, i)`.
    pub fn group_edges(&self) -> Result<Vec<Vec<(usize, usize)>>> {
        let n = self.num_nodes();
        let first = self.input_nodes;
        let single = |list: Vec<(usize, usize)>| vec![list; self.num_groups()];
        let mut groups = match &self.edges {
            EdgeSpec::Full => single((first..n).flat_map(|j| (0..j).map(move |i| (i, j))).collect()),
            EdgeSpec::Chain => single((first..n).map(|j| (j - 1, j)).collect()),
            EdgeSpec::List(list) => single(list.clone()),
            EdgeSpec::PerGroup(lists) => {
                if lists.len() != self.num_groups() {
                    return Err(Error::config(format!(
                        "per-group edges list {} groups, config has {}",
                        lists.len(),
                        self.num_groups()
                    )));
                }
                lists.clone()
            }
        };
        for edges in &mut groups {
            edges.sort_by_key(|&(i, j)| (j, i));
            if edges.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::config("duplicate edge"));
            }
            for &(i, j) in edges.iter() {
                if i >= j || j < first || j >= n {
                    return Err(Error::config(format!("invalid edge ({i}, {j})")));
                }
            }
            for j in first..n {
                if !edges.iter().any(|e| e.1 == j) {
                    return Err(Error::config(format!("node {j} has no incoming edge")));
                }
            }
        }
        Ok(groups)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_cells", self.num_cells),
            ("nodes_per_cell", self.nodes_per_cell),
            ("input_nodes", self.input_nodes),
            ("feature_dim", self.feature_dim),
            ("input_dim", self.input_dim),
            ("inputs_per_node", self.inputs_per_node),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if self.num_classes < 2 {
            return Err(Error::config("num_classes must be at least 2"));
        }
        let ops = self.canonical_operators();
        if !ops.iter().any(|&o| o != OperatorKind::None) {
            return Err(Error::config("operator set needs an operator other than none"));
        }
        if self.stem == StemKind::Split && self.input_dim != self.input_nodes * self.feature_dim {
            return Err(Error::config(format!(
                "split stem needs input_dim = input_nodes * feature_dim = {}",
                self.input_nodes * self.feature_dim
            )));
        }
        if self.edge_search && self.inputs_per_node != 2 {
            return Err(Error::config("edge search selects pairs; inputs_per_node must be 2"));
        }
        self.group_edges()?;
        Ok(())
    }

    /// Input pairs `(i1, i2)`, `i1 < i2`, whose edges both reach `node`.
    pub fn combinations(edges: &[(usize, usize)], node: usize) -> Vec<(usize, usize)> {
        let inputs: Vec<usize> = edges.iter().filter(|e| e.1 == node).map(|e| e.0).collect();
        let mut combos = Vec::new();
        for (a, &i1) in inputs.iter().enumerate() {
            for &i2 in &inputs[a + 1..] {
                combos.push((i1.min(i2), i1.max(i2)));
            }
        }
        combos.sort();
        combos
    }
}

/// Architectural logits: `alpha[group][edge][operator]` and
/// `beta[group][node][combination]`. `beta` is empty without edge search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchParams {
    pub alpha: Vec<Vec<Vec<f64>>>,
    pub beta: Vec<Vec<Vec<f64>>>,
}

impl ArchParams {
    /// Flat view of the trainable logits, alpha before beta.
    pub fn flatten(&self, trainable: ArchTrainable) -> Vec<f64> {
        let mut out = Vec::new();
        if trainable.operators() {
            out.extend(self.alpha.iter().flatten().flatten());
        }
        if trainable.edges() {
            out.extend(self.beta.iter().flatten().flatten());
        }
        out
    }

    pub fn flat_len(&self, trainable: ArchTrainable) -> usize {
        let count = |v: &Vec<Vec<Vec<f64>>>| v.iter().flatten().map(Vec::len).sum::<usize>();
        let mut n = 0;
        if trainable.operators() {
            n += count(&self.alpha);
        }
        if trainable.edges() {
            n += count(&self.beta);
        }
        n
    }

    /// Copy with the trainable logits replaced by `flat`.
    pub fn with_flat(&self, trainable: ArchTrainable, flat: &[f64]) -> Result<Self> {
        crate::problem::check_len("architecture", self.flat_len(trainable), flat.len())?;
        let mut out = self.clone();
        let mut it = flat.iter().copied();
        if trainable.operators() {
            out.alpha.iter_mut().flatten().flatten().for_each(|v| *v = it.next().unwrap());
        }
        if trainable.edges() {
            out.beta.iter_mut().flatten().flatten().for_each(|v| *v = it.next().unwrap());
        }
        Ok(out)
    }

    pub fn is_finite(&self) -> bool {
        self.alpha.iter().chain(&self.beta).flatten().flatten().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_edges_are_ordered_by_target() {
        let cfg = SuperNetConfig {
            nodes_per_cell: 2,
            ..SuperNetConfig::default()
        };
        let edges = cfg.group_edges().unwrap();
        assert_eq!(edges[0], vec![(0, 2), (1, 2), (0, 3), (1, 3), (2, 3)]);
        assert_eq!(SuperNetConfig::combinations(&edges[0], 3), vec![(0, 1), (0, 2), (1, 2)]);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad_edge = SuperNetConfig {
            edges: EdgeSpec::List(vec![(2, 2), (0, 3)]),
            ..SuperNetConfig::default()
        };
        assert!(bad_edge.validate().is_err());
        let only_none = SuperNetConfig {
            operators: vec![OperatorKind::None],
            ..SuperNetConfig::default()
        };
        assert!(only_none.validate().is_err());
        let split = SuperNetConfig {
            stem: StemKind::Split,
            ..SuperNetConfig::default()
        };
        assert!(split.validate().is_err());
        let orphan = SuperNetConfig {
            edges: EdgeSpec::List(vec![(0, 2)]),
            ..SuperNetConfig::default()
        };
        assert!(orphan.validate().is_err());
    }

    #[test]
    fn flat_round_trip() {
        let arch = ArchParams {
            alpha: vec![vec![vec![1.0, 2.0], vec![3.0, 4.0]]],
            beta: vec![vec![vec![5.0], vec![6.0, 7.0]]],
        };
        assert_eq!(arch.flatten(ArchTrainable::Both), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
        assert_eq!(arch.flatten(ArchTrainable::Edges), vec![5.0, 6.0, 7.0]);
        let b = arch.with_flat(ArchTrainable::Operators, &[0.0, 0.0, 0.0, 9.0]).unwrap();
        assert_eq!(b.alpha[0][1], vec![0.0, 9.0]);
        assert_eq!(b.beta, arch.beta);
        assert!(arch.with_flat(ArchTrainable::Operators, &[0.0]).is_err());
    }

    #[test]
    fn config_parses_from_toml() {
        let cfg: SuperNetConfig = toml::from_str(
            r#"
            num_cells = 2
            operators = ["none", "skip-connect"]
            edges = { list = [[0, 2], [1, 2], [2, 3], [0, 3]] }
            "#,
        )
        .unwrap();
        assert_eq!(cfg.num_cells, 2);
        assert_eq!(cfg.edges, EdgeSpec::List(vec![(0, 2), (1, 2), (2, 3), (0, 3)]));
        cfg.validate().unwrap();
    }
}
