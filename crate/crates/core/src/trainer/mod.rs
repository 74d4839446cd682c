//! Deterministic full-batch gradient descent.
//!
//! One step, with `g_data` the (possibly group/per-sample clipped) data
//! gradient and frozen coordinates zeroed:
//!
//! ```text
//! g = g_data + λ p                      (None, GroupSample, PerSample)
//! g = clip(g_data + λ p, c)             (WholeBatch)
//! v = μ v + g
//! p = p - lr (g + μ v)                  (Nesterov)
//! p = p - lr v                          (heavy ball)
//! ```

mod clipping;
mod schedule;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use clipping::{batch_gradient, clip_vector, clipped_units, ClippingPolicy};
pub use schedule::{dynamic_baseline_train, DynamicBaselineRun, RoundReport};

use crate::dataset::FeatureDataset;
use crate::error::{Error, Result};
use crate::model::{self, LossKind, ParamVector};
use crate::stability::{percent_series, SeriesPoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneWhen {
    BeforeTraining,
    AfterTraining,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PruneConfig {
    pub fraction: f64,
    pub when: PruneWhen,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub momentum: f64,
    pub nesterov: bool,
    pub weight_decay: f64,
    pub clipping: ClippingPolicy,
    /// `true` marks a frozen coordinate.
    pub freeze_mask: Option<Vec<bool>>,
    pub prune: Option<PruneConfig>,
    pub record_every: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 75,
            momentum: 0.9,
            nesterov: true,
            weight_decay: 0.0,
            clipping: ClippingPolicy::None,
            freeze_mask: None,
            prune: None,
            record_every: 1,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self, n_params: usize) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::invalid("learning_rate must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must lie in [0, 1)"));
        }
        if !self.weight_decay.is_finite() || self.weight_decay < 0.0 {
            return Err(Error::invalid("weight_decay must be finite and >= 0"));
        }
        if self.record_every == 0 {
            return Err(Error::invalid("record_every must be at least 1"));
        }
        self.clipping.validate()?;
        if let Some(mask) = &self.freeze_mask {
            if mask.len() != n_params {
                return Err(Error::DimensionMismatch {
                    location: "freeze_mask".into(),
                    expected: n_params,
                    found: mask.len(),
                });
            }
        }
        if let Some(prune) = &self.prune {
            if !(0.0..1.0).contains(&prune.fraction) {
                return Err(Error::invalid("prune fraction must lie in [0, 1)"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub epoch: usize,
    pub loss: f64,
    pub test_accuracy: Option<f64>,
    /// Index into [`TrainTrace::snapshots`].
    pub snapshot: usize,
}

/// Recorded epochs: epoch 0, every `record_every`-th epoch and the last.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainTrace {
    pub entries: Vec<TraceEntry>,
    pub snapshots: Vec<ParamVector>,
}

impl TrainTrace {
    fn record(
        &mut self,
        epoch: usize,
        p: &ParamVector,
        train_set: &FeatureDataset,
        test_set: Option<&FeatureDataset>,
        kind: LossKind,
    ) -> Result<()> {
        let loss = model::loss(p, train_set, kind)?;
        let test_accuracy = test_set.map(|t| model::accuracy(p, t)).transpose()?;
        self.entries.push(TraceEntry {
            epoch,
            loss,
            test_accuracy,
            snapshot: self.snapshots.len(),
        });
        self.snapshots.push(p.clone());
        Ok(())
    }

    pub fn epochs(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.epoch).collect()
    }

    pub fn final_entry(&self) -> Option<&TraceEntry> {
        self.entries.last()
    }

    /// `epoch,loss,test_accuracy`; accuracy is empty without a test set.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,test_accuracy\n");
        for e in &self.entries {
            match e.test_accuracy {
                Some(a) => out.push_str(&format!("{},{},{}\n", e.epoch, e.loss, a)),
                None => out.push_str(&format!("{},{},\n", e.epoch, e.loss)),
            }
        }
        out
    }
}

/// Zeroes the `floor(fraction * m)` smallest-magnitude coordinates (lower
/// index first among ties) and returns their indices.
pub(crate) fn prune_indices(p: &mut ParamVector, fraction: f64) -> Vec<usize> {
    let m = p.len();
    // The epsilon absorbs representation error such as 0.3 * 10 = 3.0000000000000004
    // or 0.29 * 100 = 28.999999999999996.
    let k = ((fraction * m as f64) + 1e-9).floor() as usize;
    let k = k.min(m);
    let values = p.as_slice();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| values[a].abs().total_cmp(&values[b].abs()).then(a.cmp(&b)));
    order.truncate(k);
    let slice = p.as_mut_slice();
    for &i in &order {
        slice[i] = 0.0;
    }
    order.sort_unstable();
    order
}

pub fn prune_l1(p: &ParamVector, fraction: f64) -> Result<ParamVector> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::invalid("prune fraction must lie in [0, 1)"));
    }
    let mut out = p.clone();
    prune_indices(&mut out, fraction);
    Ok(out)
}

/// Runs `cfg.epochs` full-batch steps from `p0`.
pub fn train(
    p0: &ParamVector,
    train_set: &FeatureDataset,
    test_set: Option<&FeatureDataset>,
    kind: LossKind,
    cfg: &TrainingConfig,
) -> Result<(ParamVector, TrainTrace)> {
    let m = p0.len();
    cfg.validate(m)?;
    if !p0.all_finite() {
        return Err(Error::invalid("initial parameters must be finite"));
    }
    if train_set.feature_dim() != p0.feature_dim() || train_set.n_classes() != p0.n_classes() {
        return Err(Error::DimensionMismatch {
            location: "training set vs parameters".into(),
            expected: p0.len(),
            found: model::ParamVector::len_for(train_set.feature_dim(), train_set.n_classes()),
        });
    }

    let mut frozen = cfg.freeze_mask.clone().unwrap_or_else(|| vec![false; m]);
    let mut p = p0.clone();
    if let Some(PruneConfig {
        fraction,
        when: PruneWhen::BeforeTraining,
    }) = cfg.prune
    {
        for i in prune_indices(&mut p, fraction) {
            frozen[i] = true;
        }
    }
    let any_frozen = frozen.iter().any(|&f| f);
    let mask = any_frozen.then_some(frozen.as_slice());

    let mut trace = TrainTrace::default();
    trace.record(0, &p, train_set, test_set, kind)?;

    let lr = cfg.learning_rate;
    let mu = cfg.momentum;
    let decay = cfg.weight_decay;
    let mut velocity = vec![0.0; m];
    for epoch in 1..=cfg.epochs {
        let mut g = clipping::data_gradient(&p, train_set, kind, &cfg.clipping, mask, |_| {})?;
        if decay != 0.0 {
            for ((gi, &pi), &f) in g.iter_mut().zip(p.as_slice()).zip(&frozen) {
                if !f {
                    *gi += decay * pi;
                }
            }
        }
        if let ClippingPolicy::WholeBatch { threshold } = cfg.clipping {
            clipping::clip_in_place(&mut g, threshold);
        }
        let params = p.as_mut_slice();
        for k in 0..m {
            if frozen[k] {
                continue;
            }
            velocity[k] = mu * velocity[k] + g[k];
            let step = if cfg.nesterov {
                g[k] + mu * velocity[k]
            } else {
                velocity[k]
            };
            params[k] -= lr * step;
        }
        if !p.all_finite() {
            return Err(Error::Diverged { epoch });
        }
        if epoch % cfg.record_every == 0 || epoch == cfg.epochs {
            trace.record(epoch, &p, train_set, test_set, kind)?;
        }
    }

    if let Some(PruneConfig {
        fraction,
        when: PruneWhen::AfterTraining,
    }) = cfg.prune
    {
        prune_indices(&mut p, fraction);
        // The last entry describes the returned parameters.
        trace.entries.pop();
        trace.snapshots.pop();
        trace.record(cfg.epochs, &p, train_set, test_set, kind)?;
    }
    Ok((p, trace))
}

/// Runs `f(i)` for `i in 0..count` on `workers` threads (serially when 1),
/// returning results in index order.
pub fn run_indexed<T, F>(count: usize, workers: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    if workers <= 1 {
        return (0..count).map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    pool.install(|| (0..count).into_par_iter().map(f).collect())
}

/// One trained ensemble member.
#[derive(Debug, Clone)]
pub struct MemberRun {
    pub params: ParamVector,
    pub trace: TrainTrace,
}

/// Trains one member per training set, all from `p0`.
pub fn train_ensemble(
    p0: &ParamVector,
    member_sets: &[FeatureDataset],
    test_set: Option<&FeatureDataset>,
    kind: LossKind,
    cfg: &TrainingConfig,
    workers: usize,
) -> Result<Vec<MemberRun>> {
    run_indexed(member_sets.len(), workers, |i| {
        let (params, trace) = train(p0, &member_sets[i], test_set, kind, cfg)?;
        Ok(MemberRun { params, trace })
    })
}

/// Deviation series across members, using the first member's recorded
/// epochs.
pub fn ensemble_series(members: &[MemberRun]) -> Result<Vec<SeriesPoint>> {
    let epochs = members
        .first()
        .map(|m| m.trace.epochs())
        .unwrap_or_default();
    let snapshots: Vec<Vec<ParamVector>> =
        members.iter().map(|m| m.trace.snapshots.clone()).collect();
    percent_series(&epochs, &snapshots)
}
