//! Reproducible experiment recipes.
//!
//! Every experiment trains an ensemble from one shared initialization for
//! each sweep value. Member `i` in sweep cell `s` draws its data with seed
//! `hash64([master_seed, fnv1a64(name), s, i])`, so enlarging the ensemble
//! leaves existing members untouched and reruns are bit-identical.

mod output;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use output::{run_experiment_to_dir, write_cell};

use crate::dataset::{
    load_dataset, resolve_subset, synthesize_dataset, DatasetFormat, FeatureDataset, SubsetSpec,
};
use crate::error::{Error, Result};
use crate::model::{accuracy, LossKind, ParamVector};
use crate::noise::{privatize, NoiseMode, NoiseSpec, NoiseWarning};
use crate::rng::{fnv1a64, hash64};
use crate::stability::{deviation_report, DeviationReport, SeriesPoint};
use crate::trainer::{
    dynamic_baseline_train, ensemble_series, train_ensemble, ClippingPolicy, MemberRun,
    PruneConfig, PruneWhen, RoundReport, TrainingConfig,
};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// Sweep: points removed from the base set per member.
    PointRemovalSweep,
    /// Sweep: random subset size per member.
    #[default]
    SubsetDivergence,
    /// Sweep: whole-batch clip threshold.
    ClippingSweep,
    /// Sweep: weight decay.
    RegularizationSweep,
    /// Sweep: group size for group-sample clipping.
    GroupClipSweep,
    /// Sweep: epochs per round of the reset schedule.
    DynamicBaseline,
    /// Sweep: noise scale applied to member 0 of a single combined-recipe
    /// ensemble.
    Combination,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        ExperimentKind::PointRemovalSweep,
        ExperimentKind::SubsetDivergence,
        ExperimentKind::ClippingSweep,
        ExperimentKind::RegularizationSweep,
        ExperimentKind::GroupClipSweep,
        ExperimentKind::DynamicBaseline,
        ExperimentKind::Combination,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::PointRemovalSweep => "point_removal_sweep",
            ExperimentKind::SubsetDivergence => "subset_divergence",
            ExperimentKind::ClippingSweep => "clipping_sweep",
            ExperimentKind::RegularizationSweep => "regularization_sweep",
            ExperimentKind::GroupClipSweep => "group_clip_sweep",
            ExperimentKind::DynamicBaseline => "dynamic_baseline",
            ExperimentKind::Combination => "combination",
        }
    }
}

/// Where the training (and optional test) data come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DatasetRef {
    Files {
        train: PathBuf,
        #[serde(default)]
        test: Option<PathBuf>,
        #[serde(default)]
        n_classes: Option<usize>,
    },
    /// One synthetic draw of `n_train + n_test` rows split in order.
    Synthetic {
        n_train: usize,
        n_test: usize,
        feature_dim: usize,
        n_classes: usize,
        class_separation: f64,
        seed: u64,
    },
}

impl Default for DatasetRef {
    fn default() -> Self {
        DatasetRef::Synthetic {
            n_train: 4000,
            n_test: 1000,
            feature_dim: 32,
            n_classes: 4,
            class_separation: 3.0,
            seed: 0,
        }
    }
}

impl DatasetRef {
    pub fn materialize(&self) -> Result<(FeatureDataset, Option<FeatureDataset>)> {
        match self {
            DatasetRef::Files {
                train,
                test,
                n_classes,
            } => {
                let tr = load_dataset(train, DatasetFormat::from_path(train), *n_classes)?;
                let te = test
                    .as_ref()
                    .map(|t| load_dataset(t, DatasetFormat::from_path(t), Some(tr.n_classes())))
                    .transpose()?;
                Ok((tr, te))
            }
            DatasetRef::Synthetic {
                n_train,
                n_test,
                feature_dim,
                n_classes,
                class_separation,
                seed,
            } => {
                let all = synthesize_dataset(
                    n_train + n_test,
                    *feature_dim,
                    *n_classes,
                    *class_separation,
                    *seed,
                )?;
                let train = all.slice(0, *n_train)?;
                let test = (*n_test > 0)
                    .then(|| all.slice(*n_train, n_train + n_test))
                    .transpose()?;
                Ok((train, test))
            }
        }
    }
}

/// How each member's training set is derived from the base set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum MemberData {
    Full,
    RandomSubset { size: usize },
    PointRemoval { removals: usize },
}

impl MemberData {
    fn subset_spec(&self, seed: u64) -> Option<SubsetSpec> {
        match *self {
            MemberData::Full => None,
            MemberData::RandomSubset { size } => Some(SubsetSpec::random_subset(size, seed)),
            MemberData::PointRemoval { removals } => Some(SubsetSpec::point_removal(removals, seed)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSpec {
    pub name: ExperimentKind,
    pub dataset: DatasetRef,
    pub ensemble_size: usize,
    pub sweep: Vec<f64>,
    pub training: TrainingConfig,
    pub loss: LossKind,
    pub master_seed: u64,
    pub member_data: MemberData,
    /// Fixes the base set to a random subset of this many training rows.
    pub base_size: Option<usize>,
    pub base_seed: u64,
    /// Standard deviation of the shared Gaussian initialization (0 = zeros).
    pub init_scale: f64,
    /// Threshold used by `group_clip_sweep`.
    pub group_clip_threshold: f64,
    /// Rounds of the `dynamic_baseline` schedule.
    pub rounds: usize,
    /// Noise mode of the `combination` recipe.
    pub noise_mode: NoiseMode,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            name: ExperimentKind::SubsetDivergence,
            dataset: DatasetRef::default(),
            ensemble_size: 8,
            sweep: vec![1000.0, 2000.0],
            training: TrainingConfig::default(),
            loss: LossKind::SoftmaxCrossEntropy,
            master_seed: 0,
            member_data: MemberData::RandomSubset { size: 1000 },
            base_size: None,
            base_seed: 0,
            init_scale: 0.01,
            group_clip_threshold: 1.0,
            rounds: 8,
            noise_mode: NoiseMode::Anisotropic,
        }
    }
}

/// Weight-decay sweep used by the regularization recipe.
pub fn regularization_sweep_defaults() -> Vec<f64> {
    vec![0.0, 1e-3, 1e-2, 1e-1]
}

/// Whole-batch clip thresholds used by the clipping recipe.
pub fn clipping_sweep_defaults() -> Vec<f64> {
    vec![0.5, 0.25, 0.05]
}

impl ExperimentSpec {
    /// Recipe defaults for `kind`; the dataset is the default synthetic
    /// benchmark and should normally be replaced.
    pub fn preset(kind: ExperimentKind) -> Self {
        let base = ExperimentSpec {
            name: kind,
            ..Default::default()
        };
        let training = TrainingConfig {
            learning_rate: 0.1,
            epochs: 75,
            ..Default::default()
        };
        match kind {
            ExperimentKind::PointRemovalSweep => ExperimentSpec {
                sweep: vec![1.0, 10.0, 100.0, 1000.0],
                member_data: MemberData::Full,
                training: TrainingConfig { epochs: 100, ..training },
                ..base
            },
            ExperimentKind::SubsetDivergence => ExperimentSpec {
                sweep: vec![1000.0, 2000.0, 4000.0],
                training,
                ..base
            },
            ExperimentKind::ClippingSweep => ExperimentSpec {
                sweep: clipping_sweep_defaults(),
                member_data: MemberData::PointRemoval { removals: 1 },
                training: TrainingConfig { epochs: 100, ..training },
                ..base
            },
            ExperimentKind::RegularizationSweep => ExperimentSpec {
                sweep: regularization_sweep_defaults(),
                member_data: MemberData::RandomSubset { size: 2000 },
                training,
                ..base
            },
            ExperimentKind::GroupClipSweep => ExperimentSpec {
                sweep: vec![10.0, 25.0, 100.0, 400.0],
                member_data: MemberData::RandomSubset { size: 2000 },
                group_clip_threshold: 1.0,
                training: TrainingConfig {
                    momentum: 0.0,
                    nesterov: false,
                    ..training
                },
                ..base
            },
            ExperimentKind::DynamicBaseline => ExperimentSpec {
                ensemble_size: 16,
                sweep: vec![16.0],
                rounds: 8,
                member_data: MemberData::RandomSubset { size: 1000 },
                training: TrainingConfig {
                    epochs: 16,
                    ..training
                },
                ..base
            },
            ExperimentKind::Combination => ExperimentSpec {
                sweep: vec![1.0],
                member_data: MemberData::RandomSubset { size: 2000 },
                training: TrainingConfig {
                    epochs: 50,
                    weight_decay: 1e-2,
                    clipping: ClippingPolicy::WholeBatch { threshold: 0.5 },
                    prune: Some(PruneConfig {
                        fraction: 0.3,
                        when: PruneWhen::BeforeTraining,
                    }),
                    ..training
                },
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ensemble_size < 2 {
            return Err(Error::invalid("ensemble_size must be at least 2"));
        }
        if self.sweep.is_empty() {
            return Err(Error::invalid("sweep must not be empty"));
        }
        let counts = matches!(
            self.name,
            ExperimentKind::PointRemovalSweep
                | ExperimentKind::SubsetDivergence
                | ExperimentKind::GroupClipSweep
                | ExperimentKind::DynamicBaseline
        );
        for &v in &self.sweep {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid(format!("sweep value {v} must be finite and >= 0")));
            }
            if counts && v.fract() != 0.0 {
                return Err(Error::invalid(format!(
                    "{} sweeps over counts, got {v}",
                    self.name.as_str()
                )));
            }
        }
        if self.name == ExperimentKind::DynamicBaseline {
            if self.rounds == 0 {
                return Err(Error::invalid("rounds must be at least 1"));
            }
            if self.member_data == MemberData::Full {
                return Err(Error::invalid("dynamic_baseline needs subset member_data"));
            }
        }
        if self.init_scale.is_nan() || self.init_scale < 0.0 {
            return Err(Error::invalid("init_scale must be >= 0"));
        }
        Ok(())
    }

    /// Seed for member `member` of sweep cell `cell`.
    pub fn member_seed(&self, cell: usize, member: usize) -> u64 {
        hash64(&[
            self.master_seed,
            fnv1a64(self.name.as_str()),
            cell as u64,
            member as u64,
        ])
    }

    /// Shared starting parameters for every member of every cell.
    pub fn initial_params(&self, feature_dim: usize, n_classes: usize) -> Result<ParamVector> {
        if self.init_scale == 0.0 {
            return Ok(ParamVector::zeros(feature_dim, n_classes));
        }
        let seed = hash64(&[self.master_seed, fnv1a64("init")]);
        ParamVector::gaussian(feature_dim, n_classes, self.init_scale, seed)
    }

    /// Training config and member data for one sweep value.
    fn cell_setup(&self, value: f64) -> (TrainingConfig, MemberData) {
        let mut cfg = self.training.clone();
        let mut data = self.member_data;
        match self.name {
            ExperimentKind::PointRemovalSweep => {
                data = MemberData::PointRemoval {
                    removals: value as usize,
                }
            }
            ExperimentKind::SubsetDivergence => {
                data = MemberData::RandomSubset {
                    size: value as usize,
                }
            }
            ExperimentKind::ClippingSweep => {
                cfg.clipping = ClippingPolicy::WholeBatch { threshold: value }
            }
            ExperimentKind::RegularizationSweep => cfg.weight_decay = value,
            ExperimentKind::GroupClipSweep => {
                cfg.clipping = ClippingPolicy::GroupSample {
                    threshold: self.group_clip_threshold,
                    group_size: value as usize,
                }
            }
            ExperimentKind::DynamicBaseline => cfg.epochs = value as usize,
            ExperimentKind::Combination => {}
        }
        (cfg, data)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyPoint {
    pub epoch: usize,
    pub mean_test_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseOutcome {
    pub mode: NoiseMode,
    pub scale: f64,
    pub seed: u64,
    pub accuracy_before: f64,
    pub accuracy_after: f64,
    pub warning: Option<NoiseWarning>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellReport {
    pub sweep_index: usize,
    pub sweep_value: f64,
    pub member_seeds: Vec<u64>,
    pub report: DeviationReport,
    pub series: Vec<SeriesPoint>,
    pub accuracy_series: Vec<AccuracyPoint>,
    pub final_accuracies: Vec<f64>,
    pub mean_final_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub rounds: Vec<RoundReport>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub noise: Option<NoiseOutcome>,
    #[serde(skip)]
    pub members: Vec<MemberRun>,
    #[serde(skip)]
    pub final_models: Vec<ParamVector>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: ExperimentKind,
    pub master_seed: u64,
    pub ensemble_size: usize,
    pub cells: Vec<CellReport>,
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

fn accuracy_series(members: &[MemberRun]) -> Vec<AccuracyPoint> {
    let Some(first) = members.first() else {
        return Vec::new();
    };
    first
        .trace
        .entries
        .iter()
        .enumerate()
        .filter_map(|(k, e)| {
            let accs: Option<Vec<f64>> = members
                .iter()
                .map(|m| m.trace.entries.get(k).and_then(|x| x.test_accuracy))
                .collect();
            accs.and_then(|a| mean(&a)).map(|mean_test_accuracy| AccuracyPoint {
                epoch: e.epoch,
                mean_test_accuracy,
            })
        })
        .collect()
}

/// Loads the spec's dataset and runs it.
pub fn run_experiment(spec: &ExperimentSpec, workers: usize) -> Result<ExperimentReport> {
    let (train, test) = spec.dataset.materialize()?;
    run_experiment_on(spec, &train, test.as_ref(), workers, |_| Ok(()))
}

/// Runs `spec` on the given data, calling `on_cell` after each sweep cell.
pub fn run_experiment_on(
    spec: &ExperimentSpec,
    train: &FeatureDataset,
    test: Option<&FeatureDataset>,
    workers: usize,
    mut on_cell: impl FnMut(&CellReport) -> Result<()>,
) -> Result<ExperimentReport> {
    spec.validate()?;
    let base = match spec.base_size {
        Some(size) => resolve_subset(train, &SubsetSpec::random_subset(size, spec.base_seed))?,
        None => train.clone(),
    };
    let p0 = spec.initial_params(base.feature_dim(), base.n_classes())?;
    let mut cells = Vec::with_capacity(spec.sweep.len());
    let mut shared: Option<Vec<MemberRun>> = None;

    for (cell, &value) in spec.sweep.iter().enumerate() {
        let (cfg, data) = spec.cell_setup(value);
        let seeds: Vec<u64> = (0..spec.ensemble_size)
            .map(|i| spec.member_seed(cell, i))
            .collect();

        let report = if spec.name == ExperimentKind::DynamicBaseline {
            let template = data
                .subset_spec(spec.member_seed(cell, 0))
                .expect("validated subset member data");
            let models = vec![p0.clone(); spec.ensemble_size];
            let run = dynamic_baseline_train(
                &models,
                &base,
                test,
                spec.rounds,
                cfg.epochs,
                &template,
                spec.loss,
                &cfg,
                workers,
            )?;
            let final_accuracies = match test {
                Some(t) => run
                    .models
                    .iter()
                    .map(|p| accuracy(p, t))
                    .collect::<Result<Vec<_>>>()?,
                None => Vec::new(),
            };
            CellReport {
                sweep_index: cell,
                sweep_value: value,
                member_seeds: vec![template.seed],
                report: deviation_report(&run.models)?,
                series: run.rounds.iter().flat_map(|r| r.series.clone()).collect(),
                accuracy_series: Vec::new(),
                mean_final_accuracy: mean(&final_accuracies),
                final_accuracies,
                rounds: run.rounds,
                noise: None,
                members: Vec::new(),
                final_models: run.models,
            }
        } else {
            let members = match (&shared, spec.name) {
                (Some(m), ExperimentKind::Combination) => m.clone(),
                _ => {
                    let sets = seeds
                        .iter()
                        .map(|&s| match data.subset_spec(s) {
                            Some(sub) => resolve_subset(&base, &sub),
                            None => Ok(base.clone()),
                        })
                        .collect::<Result<Vec<_>>>()?;
                    train_ensemble(&p0, &sets, test, spec.loss, &cfg, workers)?
                }
            };
            if spec.name == ExperimentKind::Combination {
                shared = Some(members.clone());
            }
            let final_models: Vec<ParamVector> = members.iter().map(|m| m.params.clone()).collect();
            let report = deviation_report(&final_models)?;
            let final_accuracies: Vec<f64> = members
                .iter()
                .filter_map(|m| m.trace.final_entry().and_then(|e| e.test_accuracy))
                .collect();
            let noise = if spec.name == ExperimentKind::Combination {
                let eval = test.unwrap_or(&base);
                let noise_spec = NoiseSpec {
                    mode: spec.noise_mode,
                    scale: value,
                    seed: hash64(&[spec.master_seed, fnv1a64("noise"), cell as u64]),
                };
                let private = privatize(&final_models[0], &report, &noise_spec)?;
                Some(NoiseOutcome {
                    mode: noise_spec.mode,
                    scale: value,
                    seed: noise_spec.seed,
                    accuracy_before: accuracy(&final_models[0], eval)?,
                    accuracy_after: accuracy(&private.params, eval)?,
                    warning: private.warning,
                })
            } else {
                None
            };
            CellReport {
                sweep_index: cell,
                sweep_value: value,
                member_seeds: seeds,
                series: ensemble_series(&members)?,
                accuracy_series: accuracy_series(&members),
                mean_final_accuracy: mean(&final_accuracies),
                final_accuracies,
                report,
                rounds: Vec::new(),
                noise,
                members,
                final_models,
            }
        };
        on_cell(&report)?;
        cells.push(report);
    }
    Ok(ExperimentReport {
        name: spec.name,
        master_seed: spec.master_seed,
        ensemble_size: spec.ensemble_size,
        cells,
    })
}
