//! Gaussian privatization noise calibrated from an ensemble's spread.
//!
//! `scale` is a dimensionless multiplier on the measured magnitudes. It is
//! not a privacy budget: mapping a target PAC-privacy level to `scale`
//! requires an external PAC-privacy analysis of the mechanism.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::FeatureDataset;
use crate::error::{Error, Result};
use crate::model::ParamVector;
use crate::rng;
use crate::stability::DeviationReport;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// `z * scale * deviation_l2 / sqrt(m)` with `z ~ N(0, I_m)`.
    Isotropic,
    /// `scale * Σ sqrt(λ_i) g_i u_i` over the retained eigen-directions.
    #[default]
    Anisotropic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub mode: NoiseMode,
    pub scale: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseWarning {
    /// The spectrum has no nonzero eigenvalue, so no noise was added.
    DegenerateSpectrum,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Privatized {
    pub params: ParamVector,
    pub warning: Option<NoiseWarning>,
}

/// The noise vector `privatize` would add to a model of length `m`.
pub fn noise_vector(m: usize, report: &DeviationReport, spec: &NoiseSpec) -> Result<(Vec<f64>, Option<NoiseWarning>)> {
    if !spec.scale.is_finite() || spec.scale < 0.0 {
        return Err(Error::invalid("noise scale must be finite and >= 0"));
    }
    let mut gen = rng::stream(spec.seed);
    match spec.mode {
        NoiseMode::Isotropic => {
            let sigma = spec.scale * report.deviation_l2 / (m as f64).sqrt();
            let noise = (0..m)
                .map(|_| sigma * Distribution::<f64>::sample(&StandardNormal, &mut gen))
                .collect();
            Ok((noise, None))
        }
        NoiseMode::Anisotropic => {
            let spectrum = &report.spectrum;
            if spectrum.directions.is_empty() {
                return Ok((vec![0.0; m], Some(NoiseWarning::DegenerateSpectrum)));
            }
            let mut noise = vec![0.0; m];
            for (lambda, u) in spectrum.eigenvalues.iter().zip(&spectrum.directions) {
                if u.len() != m {
                    return Err(Error::DimensionMismatch {
                        location: "noise direction vs model".into(),
                        expected: m,
                        found: u.len(),
                    });
                }
                let g: f64 = StandardNormal.sample(&mut gen);
                let coef = spec.scale * lambda.sqrt() * g;
                noise.iter_mut().zip(u).for_each(|(n, &ui)| *n += coef * ui);
            }
            Ok((noise, None))
        }
    }
}

pub fn privatize(p: &ParamVector, report: &DeviationReport, spec: &NoiseSpec) -> Result<Privatized> {
    let (noise, warning) = noise_vector(p.len(), report, spec)?;
    if spec.scale == 0.0 || warning.is_some() {
        return Ok(Privatized {
            params: p.clone(),
            warning,
        });
    }
    let values = p.as_slice().iter().zip(&noise).map(|(a, b)| a + b).collect();
    Ok(Privatized {
        params: p.with_values(values)?,
        warning,
    })
}

/// Adds i.i.d. `N(0, sigma^2)` noise to every feature (computed in f64,
/// stored as f32). Labels are untouched.
pub fn perturb_inputs(ds: &FeatureDataset, sigma: f64, seed: u64) -> Result<FeatureDataset> {
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(Error::invalid("sigma must be finite and >= 0"));
    }
    if sigma == 0.0 {
        return Ok(ds.clone());
    }
    let mut gen = rng::stream(seed);
    let features = ds
        .features()
        .iter()
        .map(|&v| {
            let z: f64 = StandardNormal.sample(&mut gen);
            (f64::from(v) + sigma * z) as f32
        })
        .collect();
    FeatureDataset::new(ds.feature_dim(), ds.n_classes(), features, ds.labels().to_vec())
}
