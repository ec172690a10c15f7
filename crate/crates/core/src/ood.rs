//! Energy-based out-of-distribution detection.
//!
//! The energy of a logit vector is `E(z; T) = -T · log Σ_k exp(z_k / T)`.
//! Confident in-distribution inputs have low energy; an input is flagged as
//! OOD when `E ≥ τ`. The threshold `τ` is chosen by a complete sweep over
//! midpoints of the pooled energies, cross-validated over seeded folds.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::prob::logsumexp;
use crate::{Error, Result};

pub const ENERGY_CONFIG_VERSION: u32 = 1;
pub const DEFAULT_FOLDS: usize = 5;

pub fn energy(logits: &[f64], temperature: f64) -> Result<f64> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "temperature {temperature} must be positive"
        )));
    }
    let scaled: Vec<f64> = logits.iter().map(|z| z / temperature).collect();
    let lse = logsumexp(&scaled).map_err(|_| {
        Error::InvalidInput("energy needs a non-empty vector of finite logits".into())
    })?;
    Ok(-temperature * lse)
}

/// What the threshold sweep maximizes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Mean of the ID-kept rate and the OOD-flagged rate.
    #[default]
    Balanced,
    /// Fraction of all samples classified correctly.
    Plain,
}

impl std::str::FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "balanced" => Ok(Objective::Balanced),
            "plain" => Ok(Objective::Plain),
            other => Err(Error::InvalidArgument(format!("unknown objective {other:?}"))),
        }
    }
}

/// Accuracy of the rule `energy ≥ threshold ⇒ OOD` on labeled energies.
pub fn detection_accuracy(id: &[f64], ood: &[f64], threshold: f64, objective: Objective) -> f64 {
    let kept = id.iter().filter(|e| **e < threshold).count();
    let flagged = ood.iter().filter(|e| **e >= threshold).count();
    score(kept, id.len(), flagged, ood.len(), objective)
}

fn score(kept: usize, n_id: usize, flagged: usize, n_ood: usize, objective: Objective) -> f64 {
    match objective {
        Objective::Balanced => 0.5 * (kept as f64 / n_id as f64 + flagged as f64 / n_ood as f64),
        Objective::Plain => (kept + flagged) as f64 / (n_id + n_ood) as f64,
    }
}

/// Best threshold on one sample, with its in-sample accuracy.
///
/// Candidates are the smallest pooled value (everything flagged), every
/// midpoint between adjacent distinct values, and one past the largest
/// value (nothing flagged). Ties resolve to the smallest candidate.
pub fn sweep_threshold(id: &[f64], ood: &[f64], objective: Objective) -> (f64, f64) {
    let mut pooled: Vec<(f64, bool)> = id
        .iter()
        .map(|&e| (e, false))
        .chain(ood.iter().map(|&e| (e, true)))
        .collect();
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));

    let (n_id, n_ood) = (id.len(), ood.len());
    // threshold at the minimum: every sample is flagged
    let mut best = (pooled[0].0, score(0, n_id, n_ood, n_ood, objective));
    let mut id_below = 0usize;
    let mut ood_below = 0usize;
    let mut i = 0;
    while i < pooled.len() {
        let v = pooled[i].0;
        while i < pooled.len() && pooled[i].0 == v {
            if pooled[i].1 {
                ood_below += 1;
            } else {
                id_below += 1;
            }
            i += 1;
        }
        let candidate = match pooled.get(i) {
            Some(&(next, _)) => v + (next - v) / 2.0,
            None => v + 1.0,
        };
        let acc = score(id_below, n_id, n_ood - ood_below, n_ood, objective);
        if acc > best.1 {
            best = (candidate, acc);
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdFit {
    pub threshold: f64,
    pub detection_accuracy: f64,
    pub fold_thresholds: Vec<f64>,
    pub fold_accuracies: Vec<f64>,
}

pub fn calibrate_threshold(id: &[f64], ood: &[f64], folds: usize, seed: u64) -> Result<ThresholdFit> {
    calibrate_threshold_with(id, ood, folds, seed, Objective::Balanced)
}

/// Fold-averaged threshold calibration.
///
/// ID and OOD energies are shuffled with the seed and each dealt into
/// `folds` parts. For every fold the threshold is swept on the remaining
/// folds and scored on the held-out one; the reported threshold and
/// accuracy are the means over folds.
pub fn calibrate_threshold_with(
    id: &[f64],
    ood: &[f64],
    folds: usize,
    seed: u64,
    objective: Objective,
) -> Result<ThresholdFit> {
    if id.is_empty() || ood.is_empty() {
        return Err(Error::InsufficientData(
            "threshold calibration needs both ID and OOD energies".into(),
        ));
    }
    if let Some(e) = id.iter().chain(ood).find(|e| !e.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite energy {e}")));
    }
    if folds < 2 {
        return Err(Error::InvalidArgument(format!("folds = {folds} must be at least 2")));
    }
    let smallest = id.len().min(ood.len());
    if folds > smallest {
        return Err(Error::InvalidArgument(format!(
            "folds = {folds} exceeds the smaller sample size {smallest}"
        )));
    }

    let mut rng = crate::seeded_rng(seed);
    let mut id_idx: Vec<usize> = (0..id.len()).collect();
    let mut ood_idx: Vec<usize> = (0..ood.len()).collect();
    id_idx.shuffle(&mut rng);
    ood_idx.shuffle(&mut rng);

    let mut fold_thresholds = Vec::with_capacity(folds);
    let mut fold_accuracies = Vec::with_capacity(folds);
    for f in 0..folds {
        let (id_train, id_test) = deal(id, &id_idx, folds, f);
        let (ood_train, ood_test) = deal(ood, &ood_idx, folds, f);
        let (t, _) = sweep_threshold(&id_train, &ood_train, objective);
        fold_thresholds.push(t);
        fold_accuracies.push(detection_accuracy(&id_test, &ood_test, t, objective));
    }
    Ok(ThresholdFit {
        threshold: mean(&fold_thresholds),
        detection_accuracy: mean(&fold_accuracies),
        fold_thresholds,
        fold_accuracies,
    })
}

/// Split `values` (in shuffled order `order`) into everything outside fold
/// `f` and fold `f` itself; position `i` belongs to fold `i % folds`.
fn deal(values: &[f64], order: &[usize], folds: usize, f: usize) -> (Vec<f64>, Vec<f64>) {
    let mut train = Vec::with_capacity(values.len());
    let mut test = Vec::with_capacity(values.len() / folds + 1);
    for (pos, &i) in order.iter().enumerate() {
        if pos % folds == f {
            test.push(values[i]);
        } else {
            train.push(values[i]);
        }
    }
    (train, test)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Energy model parameters. `threshold` is `None` until fitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyConfig {
    pub version: u32,
    pub temperature: f64,
    pub threshold: Option<f64>,
    pub folds: usize,
    pub seed: u64,
    pub objective: Objective,
    pub id_sample_count: usize,
    pub ood_sample_count: usize,
    /// Fold-averaged held-out detection accuracy at fit time.
    pub detection_accuracy: Option<f64>,
}

impl EnergyConfig {
    pub fn unfitted(temperature: f64) -> Self {
        EnergyConfig {
            version: ENERGY_CONFIG_VERSION,
            temperature,
            threshold: None,
            folds: DEFAULT_FOLDS,
            seed: 0,
            objective: Objective::Balanced,
            id_sample_count: 0,
            ood_sample_count: 0,
            detection_accuracy: None,
        }
    }

    /// A config with a known threshold, e.g. one carried over from elsewhere.
    pub fn with_threshold(temperature: f64, threshold: f64) -> Self {
        EnergyConfig {
            threshold: Some(threshold),
            ..Self::unfitted(temperature)
        }
    }

    /// Fit the threshold from ID and OOD logit rows.
    pub fn fit<'a>(
        temperature: f64,
        id_logits: impl IntoIterator<Item = &'a [f64]>,
        ood_logits: impl IntoIterator<Item = &'a [f64]>,
        folds: usize,
        seed: u64,
        objective: Objective,
    ) -> Result<(Self, ThresholdFit)> {
        let id: Vec<f64> = id_logits
            .into_iter()
            .map(|z| energy(z, temperature))
            .collect::<Result<_>>()?;
        let ood: Vec<f64> = ood_logits
            .into_iter()
            .map(|z| energy(z, temperature))
            .collect::<Result<_>>()?;
        let fit = calibrate_threshold_with(&id, &ood, folds, seed, objective)?;
        let config = EnergyConfig {
            version: ENERGY_CONFIG_VERSION,
            temperature,
            threshold: Some(fit.threshold),
            folds,
            seed,
            objective,
            id_sample_count: id.len(),
            ood_sample_count: ood.len(),
            detection_accuracy: Some(fit.detection_accuracy),
        };
        Ok((config, fit))
    }

    pub fn detect(&self, logits: &[f64]) -> Result<OodVerdict> {
        detect(logits, self)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: EnergyConfig = serde_json::from_str(text)?;
        if c.version != ENERGY_CONFIG_VERSION {
            return Err(Error::Version {
                found: c.version,
                expected: ENERGY_CONFIG_VERSION,
            });
        }
        if !(c.temperature > 0.0 && c.temperature.is_finite()) {
            return Err(Error::InvalidInput("temperature must be positive".into()));
        }
        Ok(c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OodVerdict {
    pub energy: f64,
    pub is_ood: bool,
    pub threshold_used: f64,
}

pub fn detect(logits: &[f64], config: &EnergyConfig) -> Result<OodVerdict> {
    let threshold = config
        .threshold
        .ok_or_else(|| Error::NotCalibrated("energy threshold has not been fitted".into()))?;
    let e = energy(logits, config.temperature)?;
    Ok(OodVerdict {
        energy: e,
        is_ood: e >= threshold,
        threshold_used: threshold,
    })
}
