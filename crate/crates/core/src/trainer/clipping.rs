use serde::{Deserialize, Serialize};

use crate::dataset::FeatureDataset;
use crate::error::{Error, Result};
use crate::model::{accumulate_gradient, l2_norm, LossKind, ParamVector};

/// Which gradient units are L2-clipped before the update.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClippingPolicy {
    #[default]
    None,
    /// Clip the full-batch mean gradient.
    WholeBatch { threshold: f64 },
    /// Split the batch into contiguous groups of `group_size` rows (the last
    /// group may be short), clip each group's mean gradient, then average.
    GroupSample { threshold: f64, group_size: usize },
    /// Clip every per-sample gradient, then average.
    PerSample { threshold: f64 },
}

impl ClippingPolicy {
    pub fn validate(&self) -> Result<()> {
        let check = |c: f64| {
            if c > 0.0 && !c.is_nan() {
                Ok(())
            } else {
                Err(Error::invalid(format!("clip threshold must be > 0, got {c}")))
            }
        };
        match *self {
            ClippingPolicy::None => Ok(()),
            ClippingPolicy::WholeBatch { threshold } | ClippingPolicy::PerSample { threshold } => {
                check(threshold)
            }
            ClippingPolicy::GroupSample {
                threshold,
                group_size,
            } => {
                if group_size == 0 {
                    return Err(Error::invalid("group_size must be at least 1"));
                }
                check(threshold)
            }
        }
    }

    pub fn threshold(&self) -> Option<f64> {
        match *self {
            ClippingPolicy::None => None,
            ClippingPolicy::WholeBatch { threshold }
            | ClippingPolicy::PerSample { threshold }
            | ClippingPolicy::GroupSample { threshold, .. } => Some(threshold),
        }
    }

    /// Group size for policies clipped below the batch level.
    fn unit_size(&self) -> Option<usize> {
        match *self {
            ClippingPolicy::GroupSample { group_size, .. } => Some(group_size),
            ClippingPolicy::PerSample { .. } => Some(1),
            _ => None,
        }
    }
}

pub(crate) fn clip_in_place(v: &mut [f64], threshold: f64) {
    let norm = l2_norm(v);
    if norm > threshold {
        let scale = threshold / norm;
        v.iter_mut().for_each(|x| *x *= scale);
    }
}

/// Rescales `g` onto the L2 ball of radius `threshold`; vectors already
/// inside are returned bit-identical.
pub fn clip_vector(g: &ParamVector, threshold: f64) -> ParamVector {
    let mut out = g.clone();
    clip_in_place(out.as_mut_slice(), threshold);
    out
}

fn apply_mask(v: &mut [f64], frozen: Option<&[bool]>) {
    if let Some(mask) = frozen {
        for (x, &f) in v.iter_mut().zip(mask) {
            if f {
                *x = 0.0;
            }
        }
    }
}

/// Shared gradient kernel.
///
/// Returns the data gradient with frozen entries zeroed. Group and
/// per-sample policies come back already clipped and averaged. For `None`
/// and `WholeBatch` the plain mean is returned: whole-batch clipping is
/// left to the caller so weight decay can be added first.
pub(crate) fn data_gradient(
    p: &ParamVector,
    batch: &FeatureDataset,
    kind: LossKind,
    policy: &ClippingPolicy,
    frozen: Option<&[bool]>,
    mut on_unit: impl FnMut(&[f64]),
) -> Result<Vec<f64>> {
    let n = batch.n_samples();
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    let m = p.len();
    let mut scratch = vec![0.0; p.n_classes()];
    let Some(unit) = policy.unit_size() else {
        let mut grad = vec![0.0; m];
        accumulate_gradient(p, batch, 0..n, kind, &mut grad, &mut scratch)?;
        let count = n as f64;
        grad.iter_mut().for_each(|g| *g /= count);
        apply_mask(&mut grad, frozen);
        return Ok(grad);
    };
    let threshold = policy.threshold().expect("clipped policy has a threshold");
    let mut total: Option<Vec<f64>> = None;
    let mut group = vec![0.0; m];
    let mut n_groups = 0usize;
    let mut start = 0;
    while start < n {
        let end = (start + unit).min(n);
        group.iter_mut().for_each(|g| *g = 0.0);
        accumulate_gradient(p, batch, start..end, kind, &mut group, &mut scratch)?;
        let count = (end - start) as f64;
        group.iter_mut().for_each(|g| *g /= count);
        apply_mask(&mut group, frozen);
        clip_in_place(&mut group, threshold);
        on_unit(&group);
        match total.as_mut() {
            None => total = Some(group.clone()),
            Some(t) => t.iter_mut().zip(&group).for_each(|(a, b)| *a += b),
        }
        n_groups += 1;
        start = end;
    }
    let mut total = total.expect("non-empty batch has a group");
    let count = n_groups as f64;
    total.iter_mut().for_each(|g| *g /= count);
    Ok(total)
}

/// Batch gradient under `policy`, without weight decay.
pub fn batch_gradient(
    p: &ParamVector,
    batch: &FeatureDataset,
    kind: LossKind,
    policy: &ClippingPolicy,
) -> Result<ParamVector> {
    policy.validate()?;
    let mut g = data_gradient(p, batch, kind, policy, None, |_| {})?;
    if let ClippingPolicy::WholeBatch { threshold } = *policy {
        clip_in_place(&mut g, threshold);
    }
    p.with_values(g)
}

/// Every clipped unit `policy` produces for this batch, in batch order: the
/// whole mean gradient, each group mean, or each sample gradient. With
/// `None` the single unclipped mean gradient is returned.
pub fn clipped_units(
    p: &ParamVector,
    batch: &FeatureDataset,
    kind: LossKind,
    policy: &ClippingPolicy,
) -> Result<Vec<ParamVector>> {
    policy.validate()?;
    let mut units = Vec::new();
    let mean = data_gradient(p, batch, kind, policy, None, |u| units.push(u.to_vec()))?;
    if units.is_empty() {
        let mut g = mean;
        if let ClippingPolicy::WholeBatch { threshold } = *policy {
            clip_in_place(&mut g, threshold);
        }
        units.push(g);
    }
    units.into_iter().map(|u| p.with_values(u)).collect()
}
