use stabkit::experiments::{DatasetRef, ExperimentKind, ExperimentSpec, MemberData};
use stabkit::{run_experiment, run_experiment_on, FeatureDataset, TrainingConfig};

fn small(kind: ExperimentKind) -> ExperimentSpec {
    ExperimentSpec {
        dataset: DatasetRef::Synthetic {
            n_train: 600,
            n_test: 200,
            feature_dim: 8,
            n_classes: 3,
            class_separation: 3.0,
            seed: 5,
        },
        ensemble_size: 4,
        training: TrainingConfig {
            epochs: 30,
            record_every: 10,
            ..ExperimentSpec::preset(kind).training
        },
        ..ExperimentSpec::preset(kind)
    }
}

#[test]
fn reruns_are_bit_identical_for_any_worker_count() {
    let spec = ExperimentSpec {
        sweep: vec![200.0, 400.0],
        ..small(ExperimentKind::SubsetDivergence)
    };
    let a = run_experiment(&spec, 1).unwrap();
    let b = run_experiment(&spec, 4).unwrap();
    assert_eq!(
        serde_json::to_string(&a).unwrap(),
        serde_json::to_string(&b).unwrap()
    );
    for (x, y) in a.cells.iter().zip(&b.cells) {
        assert_eq!(x.final_models, y.final_models);
    }
}

#[test]
fn seed_isolation() {
    let spec = ExperimentSpec {
        sweep: vec![300.0],
        member_data: MemberData::RandomSubset { size: 300 },
        ..small(ExperimentKind::SubsetDivergence)
    };
    let grown = ExperimentSpec {
        ensemble_size: 5,
        ..spec.clone()
    };
    let a = run_experiment(&spec, 1).unwrap();
    let b = run_experiment(&grown, 1).unwrap();
    assert_eq!(a.cells[0].member_seeds[..], b.cells[0].member_seeds[..4]);
    assert_eq!(a.cells[0].final_models[..], b.cells[0].final_models[..4]);

    let reseeded = ExperimentSpec {
        master_seed: 99,
        ..spec.clone()
    };
    let c = run_experiment(&reseeded, 1).unwrap();
    assert_ne!(a.cells[0].member_seeds, c.cells[0].member_seeds);
    assert_eq!(
        spec.dataset.materialize().unwrap(),
        reseeded.dataset.materialize().unwrap()
    );
}

#[test]
fn removal_deviation_is_monotone_on_most_seeds() {
    let spec = ExperimentSpec {
        sweep: vec![1.0, 10.0, 100.0],
        ..small(ExperimentKind::PointRemovalSweep)
    };
    let (train, test): (FeatureDataset, _) = spec.dataset.materialize().unwrap();
    let mut good = 0;
    for seed in 0..10 {
        let s = ExperimentSpec {
            master_seed: seed,
            ..spec.clone()
        };
        let r = run_experiment_on(&s, &train, test.as_ref(), 1, |_| Ok(())).unwrap();
        let devs: Vec<f64> = r.cells.iter().map(|c| c.report.deviation_l2).collect();
        if devs.windows(2).all(|w| w[0] <= w[1]) {
            good += 1;
        }
    }
    assert!(good >= 9, "monotone on {good}/10 seeds");
}
