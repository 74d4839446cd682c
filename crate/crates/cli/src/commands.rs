use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::json;
use stabkit::experiments::{ExperimentKind, ExperimentSpec, MemberData};
use stabkit::rng::{fnv1a64, hash64};
use stabkit::stability::series_csv;
use stabkit::{
    deviation_report, load_dataset, privatize, resolve_subset, run_experiment_to_dir,
    save_dataset, synthesize_dataset, train, train_ensemble, train_tree, tree_accuracy,
    DatasetFormat, FeatureDataset, LossKind, NoiseSpec, ParamVector, Skeleton, SubsetSpec,
    TrainingConfig, TreeNet,
};

use crate::config::{read_table, render, resolve};
use crate::{Command, ConfigArgs, DataArgs};

/// Settings shared by `train`, `ensemble` and `tree`. Training keys sit at
/// the top level next to the run keys.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct RunConfig {
    loss: LossKind,
    /// Standard deviation of the shared Gaussian initialization; 0 = zeros.
    init_scale: f64,
    seed: u64,
    models: usize,
    member_data: MemberData,
    /// Used by `tree` only.
    skeleton: String,
    #[serde(flatten)]
    training: TrainingConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::SoftmaxCrossEntropy,
            init_scale: 0.01,
            seed: 0,
            models: 8,
            member_data: MemberData::Full,
            skeleton: "balanced".into(),
            training: TrainingConfig::default(),
        }
    }
}

impl RunConfig {
    fn initial_params(&self, d: usize, c: usize) -> Result<ParamVector> {
        if self.init_scale == 0.0 {
            return Ok(ParamVector::zeros(d, c));
        }
        Ok(ParamVector::gaussian(d, c, self.init_scale, hash64(&[self.seed, fnv1a64("init")]))?)
    }

    fn member_set(&self, base: &FeatureDataset, member: usize) -> Result<FeatureDataset> {
        let seed = hash64(&[self.seed, member as u64]);
        let spec = match self.member_data {
            MemberData::Full => return Ok(base.clone()),
            MemberData::RandomSubset { size } => SubsetSpec::random_subset(size, seed),
            MemberData::PointRemoval { removals } => SubsetSpec::point_removal(removals, seed),
        };
        Ok(resolve_subset(base, &spec)?)
    }
}

fn require_file(path: &Path) -> Result<()> {
    ensure!(path.is_file(), "input file {} does not exist", path.display());
    Ok(())
}

fn load(path: &Path, classes: Option<usize>) -> Result<FeatureDataset> {
    load_dataset(path, DatasetFormat::from_path(path), classes)
        .with_context(|| format!("loading {}", path.display()))
}

fn load_data(data: &DataArgs) -> Result<(FeatureDataset, Option<FeatureDataset>)> {
    require_file(&data.train)?;
    if let Some(t) = &data.test {
        require_file(t)?;
    }
    let train = load(&data.train, data.classes)?;
    let test = data
        .test
        .as_ref()
        .map(|t| load(t, Some(train.n_classes())))
        .transpose()?;
    Ok((train, test))
}

fn run_config(args: &ConfigArgs, defaults: RunConfig, seed: Option<u64>) -> Result<RunConfig> {
    if let Some(c) = &args.config {
        require_file(c)?;
    }
    let file = args.config.as_deref().map(read_table).transpose()?;
    let mut cfg: RunConfig = resolve(&defaults, file, &args.sets)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

/// Prints the resolved config on stderr and stores it next to the outputs.
fn announce<T: Serialize>(cfg: &T, out: &Path) -> Result<()> {
    let text = render(cfg)?;
    eprintln!("# resolved config\n{text}");
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("config.toml"), text)?;
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

fn load_models(paths: &[PathBuf]) -> Result<Vec<ParamVector>> {
    paths.iter().try_for_each(|p| require_file(p))?;
    paths
        .iter()
        .map(|p| ParamVector::load(p).with_context(|| format!("loading {}", p.display())))
        .collect()
}

pub fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Synth {
            n,
            d,
            classes,
            sep,
            seed,
            out,
        } => {
            let ds = synthesize_dataset(n, d, classes, sep, seed)?;
            save_dataset(&ds, &out, DatasetFormat::from_path(&out))?;
            println!("{}", json!({ "n_samples": n, "feature_dim": d, "n_classes": classes }));
        }
        Command::Convert {
            input,
            output,
            classes,
        } => {
            require_file(&input)?;
            let ds = load(&input, classes)?;
            save_dataset(&ds, &output, DatasetFormat::from_path(&output))?;
            println!(
                "{}",
                json!({ "n_samples": ds.n_samples(), "feature_dim": ds.feature_dim(), "n_classes": ds.n_classes() })
            );
        }
        Command::Train {
            data,
            config,
            seed,
            out,
        } => {
            let cfg = run_config(&config, RunConfig::default(), seed)?;
            let (train_set, test) = load_data(&data)?;
            announce(&cfg, &out)?;
            let p0 = cfg.initial_params(train_set.feature_dim(), train_set.n_classes())?;
            let set = cfg.member_set(&train_set, 0)?;
            let (p, trace) = train(&p0, &set, test.as_ref(), cfg.loss, &cfg.training)?;
            p.save(&out.join("model.pvc"))?;
            fs::write(out.join("trace.csv"), trace.to_csv())?;
            let last = trace.final_entry().expect("trace records the last epoch");
            println!(
                "{}",
                json!({ "final_loss": last.loss, "test_accuracy": last.test_accuracy })
            );
        }
        Command::Ensemble {
            data,
            config,
            seed,
            models,
            workers,
            out,
        } => {
            // Members differ by one removed point unless configured otherwise.
            let defaults = RunConfig {
                member_data: MemberData::PointRemoval { removals: 1 },
                ..Default::default()
            };
            let mut cfg = run_config(&config, defaults, seed)?;
            if let Some(m) = models {
                cfg.models = m;
            }
            ensure!(cfg.models >= 2, "an ensemble needs at least 2 models");
            let (train_set, test) = load_data(&data)?;
            announce(&cfg, &out)?;
            let p0 = cfg.initial_params(train_set.feature_dim(), train_set.n_classes())?;
            let sets = (0..cfg.models)
                .map(|i| cfg.member_set(&train_set, i))
                .collect::<Result<Vec<_>>>()?;
            let members =
                train_ensemble(&p0, &sets, test.as_ref(), cfg.loss, &cfg.training, workers)?;
            fs::create_dir_all(out.join("models"))?;
            for (i, m) in members.iter().enumerate() {
                m.params.save(&out.join("models").join(format!("member_{i}.pvc")))?;
                fs::write(out.join(format!("series_{i}.csv")), m.trace.to_csv())?;
            }
            let finals: Vec<ParamVector> = members.iter().map(|m| m.params.clone()).collect();
            let report = deviation_report(&finals)?;
            let series = stabkit::trainer::ensemble_series(&members)?;
            fs::write(out.join("deviation.csv"), series_csv(&series))?;
            write_json(&out.join("report.json"), &report)?;
            println!(
                "{}",
                json!({ "deviation_l2": report.deviation_l2, "percent_deviation": report.percent_deviation })
            );
        }
        Command::Stability { models, out } => {
            let models = load_models(&models)?;
            let report = deviation_report(&models)?;
            let text = serde_json::to_string_pretty(&report)?;
            println!("{text}");
            if let Some(out) = out {
                fs::write(out, text + "\n")?;
            }
        }
        Command::Privatize {
            model,
            ensemble,
            noise_mode,
            noise_scale,
            noise_seed,
            out,
        } => {
            let target = load_models(&[model])?.remove(0);
            let members = load_models(&ensemble)?;
            ensure!(
                members.iter().all(|m| m.same_shape(&target)),
                "ensemble models and the target model differ in shape"
            );
            let report = deviation_report(&members)?;
            let spec = NoiseSpec {
                mode: noise_mode.into(),
                scale: noise_scale,
                seed: noise_seed,
            };
            let private = privatize(&target, &report, &spec)?;
            if let Some(w) = private.warning {
                eprintln!("warning: {w:?}; model written unchanged");
            }
            private.params.save(&out)?;
            let noise_l2 = private
                .params
                .as_slice()
                .iter()
                .zip(target.as_slice())
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            println!(
                "{}",
                json!({
                    "deviation_l2": report.deviation_l2,
                    "noise_l2": noise_l2,
                    "warning": private.warning,
                })
            );
        }
        Command::Tree {
            data,
            config,
            skeleton,
            workers,
            out,
        } => {
            let mut cfg = run_config(&config, RunConfig::default(), None)?;
            if let Some(s) = skeleton {
                cfg.skeleton = s;
            }
            let (train_set, test) = load_data(&data)?;
            let c = train_set.n_classes();
            let shape = match cfg.skeleton.as_str() {
                "balanced" => Skeleton::balanced(&(0..c).collect::<Vec<_>>()),
                "vehicles_animals" => Skeleton::vehicles_animals(),
                text => Skeleton::parse(text)?,
            };
            let blank = TreeNet::from_skeleton(&shape, c)?;
            announce(&cfg, &out)?;
            let tree = train_tree(&blank, &train_set, cfg.loss, &cfg.training, workers)?;
            tree.save(&out)?;
            let acc = test.as_ref().map(|t| tree_accuracy(&tree, t)).transpose()?;
            println!(
                "{}",
                json!({ "trained_nodes": tree.trained_count(), "depth": tree.depth(), "test_accuracy": acc })
            );
        }
        Command::Experiment {
            spec,
            preset,
            sets,
            seed,
            workers,
            out,
        } => {
            let (kind, file) = match (spec, preset) {
                (Some(path), _) => {
                    require_file(&path)?;
                    let table = read_table(&path)?;
                    let kind: ExperimentKind = match table.get("name") {
                        Some(v) => v.clone().try_into().context("unknown experiment name")?,
                        None => bail!("{} has no `name` key", path.display()),
                    };
                    (kind, Some(table))
                }
                (None, Some(name)) => {
                    let kind: ExperimentKind = toml::Value::String(name.clone())
                        .try_into()
                        .with_context(|| format!("unknown experiment name {name:?}"))?;
                    (kind, None)
                }
                (None, None) => bail!("pass --spec or --preset"),
            };
            let mut spec: ExperimentSpec = resolve(&ExperimentSpec::preset(kind), file, &sets)?;
            if let Some(s) = seed {
                spec.master_seed = s;
            }
            spec.validate()?;
            if let stabkit::experiments::DatasetRef::Files { train, test, .. } = &spec.dataset {
                require_file(train)?;
                if let Some(t) = test {
                    require_file(t)?;
                }
            }
            let (train_set, test) = spec.dataset.materialize()?;
            announce(&spec, &out)?;
            let report = run_experiment_to_dir(&spec, &train_set, test.as_ref(), workers, &out)?;
            let summary: Vec<_> = report
                .cells
                .iter()
                .map(|c| {
                    json!({
                        "sweep_value": c.sweep_value,
                        "deviation_l2": c.report.deviation_l2,
                        "percent_deviation": c.report.percent_deviation,
                        "mean_final_accuracy": c.mean_final_accuracy,
                    })
                })
                .collect();
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
    }
    Ok(())
}
