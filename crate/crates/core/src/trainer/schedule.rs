use serde::{Deserialize, Serialize};

use super::{train_ensemble, ensemble_series, TrainingConfig};
use crate::dataset::{resolve_subset, FeatureDataset, SubsetSpec};
use crate::error::{Error, Result};
use crate::model::{LossKind, ParamVector};
use crate::rng::hash64;
use crate::stability::{deviation_report, DeviationReport, SeriesPoint};

/// One segment of a dynamic-baseline run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    /// Deviation of the ensemble when the round starts (always 0: every
    /// member starts from the same parameters).
    pub start_deviation_l2: f64,
    /// Deviation after `epochs_per_round` epochs.
    pub report: DeviationReport,
    /// Per-recorded-epoch deviation, epochs counted globally across rounds.
    pub series: Vec<SeriesPoint>,
    pub subset_seeds: Vec<u64>,
    #[serde(skip)]
    pub start_params: Option<ParamVector>,
}

#[derive(Debug, Clone)]
pub struct DynamicBaselineRun {
    pub models: Vec<ParamVector>,
    pub rounds: Vec<RoundReport>,
}

/// Subset seed for `member` in `round`.
pub fn round_subset_seed(template_seed: u64, round: usize, member: usize) -> u64 {
    hash64(&[template_seed, round as u64, member as u64])
}

/// Trains the ensemble in `rounds` segments. Each round every member trains
/// `epochs_per_round` epochs on a freshly drawn subset of `source`, the
/// round is reported, and then every member (and its momentum) is reset to
/// member 0.
#[allow(clippy::too_many_arguments)]
pub fn dynamic_baseline_train(
    models: &[ParamVector],
    source: &FeatureDataset,
    test_set: Option<&FeatureDataset>,
    rounds: usize,
    epochs_per_round: usize,
    subset: &SubsetSpec,
    kind: LossKind,
    cfg: &TrainingConfig,
    workers: usize,
) -> Result<DynamicBaselineRun> {
    if rounds == 0 {
        return Err(Error::invalid("rounds must be at least 1"));
    }
    if models.len() < 2 {
        return Err(Error::TooFewModels(models.len()));
    }
    if models.iter().any(|m| m != &models[0]) {
        return Err(Error::invalid("dynamic baseline needs identical starting models"));
    }
    let cfg = TrainingConfig {
        epochs: epochs_per_round,
        ..cfg.clone()
    };
    let n_models = models.len();
    let mut start = models[0].clone();
    let mut reports = Vec::with_capacity(rounds);
    let mut finals = Vec::new();
    for round in 0..rounds {
        let seeds: Vec<u64> = (0..n_models)
            .map(|i| round_subset_seed(subset.seed, round, i))
            .collect();
        let sets = seeds
            .iter()
            .map(|&s| resolve_subset(source, &subset.with_seed(s)))
            .collect::<Result<Vec<_>>>()?;
        let starting: Vec<ParamVector> = vec![start.clone(); n_models];
        let start_deviation_l2 = deviation_report(&starting)?.deviation_l2;
        let members = train_ensemble(&start, &sets, test_set, kind, &cfg, workers)?;
        let mut series = ensemble_series(&members)?;
        for point in &mut series {
            point.epoch += round * epochs_per_round;
        }
        finals = members.into_iter().map(|m| m.params).collect::<Vec<_>>();
        let report = deviation_report(&finals)?;
        reports.push(RoundReport {
            round,
            start_deviation_l2,
            report,
            series,
            subset_seeds: seeds,
            start_params: Some(start.clone()),
        });
        start = finals[0].clone();
    }
    Ok(DynamicBaselineRun {
        models: finals,
        rounds: reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synthesize_dataset;
    use crate::trainer::train;

    #[test]
    fn rounds_restart_from_member_zero() {
        let source = synthesize_dataset(200, 3, 3, 2.0, 1).unwrap();
        let models = vec![ParamVector::zeros(3, 3); 4];
        let cfg = TrainingConfig {
            record_every: 2,
            ..Default::default()
        };
        let subset = SubsetSpec::random_subset(50, 9);
        let run = dynamic_baseline_train(
            &models,
            &source,
            None,
            3,
            6,
            &subset,
            LossKind::SoftmaxCrossEntropy,
            &cfg,
            1,
        )
        .unwrap();
        assert_eq!(run.rounds.len(), 3);
        for r in &run.rounds {
            assert_eq!(r.start_deviation_l2, 0.0);
            assert_eq!(r.series[0].deviation_l2, 0.0);
            assert_eq!(r.series[0].epoch, r.round * 6);
            assert!(r.report.deviation_l2 > 0.0);
        }
        // Round r starts from round r-1's member 0.
        for r in 1..3 {
            let prev_seed = run.rounds[r - 1].subset_seeds[0];
            let prev_start = run.rounds[r - 1].start_params.clone().unwrap();
            let set = resolve_subset(&source, &subset.with_seed(prev_seed)).unwrap();
            let c = TrainingConfig { epochs: 6, ..cfg.clone() };
            let (expected, _) =
                train(&prev_start, &set, None, LossKind::SoftmaxCrossEntropy, &c).unwrap();
            assert_eq!(run.rounds[r].start_params.as_ref().unwrap(), &expected);
        }
    }

    #[test]
    fn single_round_matches_plain_ensemble() {
        let source = synthesize_dataset(120, 2, 2, 1.0, 3).unwrap();
        let models = vec![ParamVector::zeros(2, 2); 3];
        let cfg = TrainingConfig { epochs: 5, ..Default::default() };
        let subset = SubsetSpec::point_removal(10, 4);
        let kind = LossKind::SoftmaxCrossEntropy;
        let run =
            dynamic_baseline_train(&models, &source, None, 1, 5, &subset, kind, &cfg, 2).unwrap();
        let sets: Vec<FeatureDataset> = (0..3)
            .map(|i| resolve_subset(&source, &subset.with_seed(round_subset_seed(4, 0, i))).unwrap())
            .collect();
        let plain = train_ensemble(&models[0], &sets, None, kind, &cfg, 1).unwrap();
        for (a, b) in run.models.iter().zip(&plain) {
            assert_eq!(a, &b.params);
        }
        assert_eq!(run.rounds.len(), 1);
    }

    #[test]
    fn rejects_unequal_models_and_zero_rounds() {
        let source = synthesize_dataset(20, 2, 2, 1.0, 3).unwrap();
        let a = ParamVector::zeros(2, 2);
        let b = ParamVector::gaussian(2, 2, 1.0, 1).unwrap();
        let subset = SubsetSpec::random_subset(10, 1);
        let cfg = TrainingConfig::default();
        let kind = LossKind::SoftmaxCrossEntropy;
        assert!(dynamic_baseline_train(&[a.clone(), b], &source, None, 1, 1, &subset, kind, &cfg, 1).is_err());
        assert!(dynamic_baseline_train(&[a.clone(), a], &source, None, 0, 1, &subset, kind, &cfg, 1).is_err());
    }
}
