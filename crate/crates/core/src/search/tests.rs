use super::*;

fn small() -> SearchConfig {
    SearchConfig {
        epochs: 20,
        log_every: 5,
        dataset: DatasetSpec {
            size: 64,
            ..DatasetSpec::default()
        },
        ..SearchConfig::default()
    }
}

#[test]
fn zero_epochs_discretize_the_initialization() {
    let cfg = SearchConfig { epochs: 0, ..small() };
    let out = bilevel_search(&cfg).unwrap();
    let net = SuperNet::new(cfg.training.supernet.clone()).unwrap();
    assert_eq!(out.genotype, discretize(&net, &net.init_arch()));
    assert!(out.trajectory.rows.is_empty());
}

#[test]
fn search_is_deterministic() {
    let a = bilevel_search(&small()).unwrap();
    let b = bilevel_search(&small()).unwrap();
    assert_eq!(a.trajectory.to_csv(), b.trajectory.to_csv());
    assert_eq!(a.genotype, b.genotype);
    let epochs: Vec<usize> = a.trajectory.rows.iter().map(|r| r.epoch).collect();
    assert_eq!(epochs, vec![1, 5, 10, 15, 20]);
    assert!(a.trajectory.to_csv().starts_with("epoch,none_weight,skip_ratio,val_acc,g1_norm,g2_norm\n1,"));
}


#[test]
fn amended_default_survives_long_run() {
    let cfg = SearchConfig {
        epochs: 200,
        seed: 3,
        log_every: 50,
        ..SearchConfig::default()
    };
    let out = bilevel_search(&cfg).unwrap();
    let last = out.trajectory.last().unwrap();
    assert_eq!(last.epoch, 200);
    assert!(last.skip_ratio < 1.0, "skip ratio {}", last.skip_ratio);
}

#[test]
fn metrics_stay_in_unit_interval() {
    let out = bilevel_search(&SearchConfig {
        estimator: EstimatorKind::SecondOrderDarts { xi: 0.05 },
        ..small()
    })
    .unwrap();
    for r in &out.trajectory.rows {
        for v in [r.none_weight, r.skip_ratio, r.val_acc] {
            assert!((0.0..=1.0).contains(&v));
        }
        assert!(r.g1_norm >= 0.0 && r.g2_norm >= 0.0);
    }
}

#[test]
fn first_order_logs_zero_correction() {
    let out = bilevel_search(&SearchConfig {
        estimator: EstimatorKind::FirstOrder,
        ..small()
    })
    .unwrap();
    assert!(out.trajectory.rows.iter().all(|r| r.g2_norm == 0.0));
}

#[test]
fn consistency_reuses_search_training() {
    let cfg = small();
    assert_eq!(cfg.retrain_config(), &cfg.training);
    let other = TrainingConfig {
        omega_lr: 0.01,
        ..TrainingConfig::default()
    };
    let bad = SearchConfig {
        retrain: Some(other.clone()),
        ..small()
    };
    assert!(matches!(bad.validate(), Err(Error::InvalidConfig(_))));
    let split = SearchConfig {
        consistency: false,
        retrain: Some(other.clone()),
        ..small()
    };
    assert_eq!(split.retrain_config(), &other);
}

#[test]
fn mismatched_input_dim_is_rejected() {
    let cfg = SearchConfig {
        dataset: DatasetSpec {
            noise_views: 1,
            ..DatasetSpec::default()
        },
        ..small()
    };
    assert!(matches!(bilevel_search(&cfg), Err(Error::InvalidConfig(_))));
}

#[test]
fn edge_stage_single_combination_is_a_no_op() {
    // Two input nodes and one searched node leave only the pair (0, 1).
    let mut cfg = small();
    cfg.training.supernet.nodes_per_cell = 1;
    cfg.two_stage = true;
    let (sel, traj) = edge_search_stage(&cfg).unwrap();
    assert_eq!(sel, vec![vec![(0, 1)]]);
    assert!(traj.rows.is_empty());
}

#[test]
fn edge_stage_is_deterministic_on_three_nodes() {
    let mut cfg = small();
    cfg.seed = 7;
    cfg.two_stage = true;
    cfg.training.supernet.nodes_per_cell = 3;
    let (a, ta) = edge_search_stage(&cfg).unwrap();
    let (b, tb) = edge_search_stage(&cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(ta.to_csv(), tb.to_csv());
    assert_eq!(a[0].len(), 3);
}

#[test]
fn two_stage_search_runs_on_selected_edges() {
    let out = bilevel_search(&SearchConfig {
        two_stage: true,
        ..small()
    })
    .unwrap();
    let sel = out.edge_selection.unwrap();
    for (n, node) in out.genotype.groups[0].nodes.iter().enumerate() {
        let (i1, i2) = sel[0][n];
        let from: Vec<usize> = node.inputs.iter().map(|e| e.from).collect();
        assert_eq!(from, vec![i1, i2]);
    }
}

#[test]
fn dominant_pair_is_selected() {
    let (sel, _) = edge_search_stage(&SearchConfig::edge_dominance_task(0)).unwrap();
    assert_eq!(sel, vec![vec![(0, 1)]]);
}

#[test]
fn degeneration_task_is_well_formed() {
    let cfg = SearchConfig::degeneration_task(EstimatorKind::FirstOrder, 2);
    cfg.validate().unwrap();
    assert_eq!(cfg.training.supernet.input_dim, 10);
}

fn genotype_all(op: OperatorKind, nodes: usize) -> Genotype {
    use crate::supernet::{CellGene, EdgeGene, NodeGene};
    Genotype {
        groups: vec![CellGene {
            nodes: (0..nodes)
                .map(|n| NodeGene {
                    node: 2 + n,
                    inputs: vec![EdgeGene { from: n, op }, EdgeGene { from: n + 1, op }],
                })
                .collect(),
        }],
    }
}

fn rings() -> SyntheticDataset {
    generate_dataset(&DatasetSpec {
        generator: Generator::ConcentricRings,
        size: 128,
        ..DatasetSpec::default()
    })
    .unwrap()
}

#[test]
fn retrain_is_deterministic_and_decreasing() {
    let training = TrainingConfig {
        retrain_epochs: 50,
        ..TrainingConfig::default()
    };
    let g = genotype_all(OperatorKind::NonLinear, 2);
    let a = retrain(&g, &training, &rings(), 1).unwrap();
    let b = retrain(&g, &training, &rings(), 1).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.loss_curve.len(), 50);
    assert!(a.loss_curve.last().unwrap() < &a.loss_curve[0]);
}

#[test]
fn parametric_genotype_beats_all_skip_on_rings() {
    let training = TrainingConfig::default();
    let data = rings();
    let nonlinear = retrain(&genotype_all(OperatorKind::NonLinear, 2), &training, &data, 0).unwrap();
    let skip = retrain(&genotype_all(OperatorKind::SkipConnect, 2), &training, &data, 0).unwrap();
    assert!(
        nonlinear.val_accuracy >= skip.val_accuracy + 0.05,
        "nonlinear {} skip {}",
        nonlinear.val_accuracy,
        skip.val_accuracy
    );
}
