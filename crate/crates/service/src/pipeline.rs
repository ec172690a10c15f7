//! OOD check, then top-1 with names, then the conformal set.

use serde::Serialize;
use trustgate_core::ood::OodVerdict;
use trustgate_core::softmax;

use crate::bundle::{Bundle, ModelMetadata};
use crate::{ServiceError, ServiceResult};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaxonPrediction {
    pub class_index: usize,
    pub taxon_id: i64,
    pub scientific_name: String,
    pub common_name: Option<String>,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictionReport {
    pub top1: TaxonPrediction,
    /// Ordered by descending probability, ties by class index.
    pub conformal_set: Vec<TaxonPrediction>,
    pub ood: OodVerdict,
    pub warning: Option<String>,
    pub model_metadata: ModelMetadata,
}

impl PredictionReport {
    /// The exact text served over HTTP and printed by the CLI.
    pub fn render(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

pub const OOD_WARNING: &str =
    "input looks unlike the training data; the prediction may be unreliable and should be checked by a person";

fn named(bundle: &Bundle, class: usize, probability: f64) -> ServiceResult<TaxonPrediction> {
    let taxon_id = bundle
        .class_map()
        .taxon(class)
        .ok_or(ServiceError::Taxonomy(format!("class {class} has no taxon")))?;
    let rec = bundle
        .taxa()
        .get(taxon_id)
        .ok_or(ServiceError::Taxonomy(format!("taxon {taxon_id} is not in the taxonomy")))?;
    Ok(TaxonPrediction {
        class_index: class,
        taxon_id,
        scientific_name: rec.scientific_name.clone(),
        common_name: rec.common_name.clone(),
        probability,
    })
}

/// Runs the full prediction workflow on one logit row. A prediction is
/// returned even when the input is flagged out of distribution.
pub fn predict_pipeline(logits: &[f64], bundle: &Bundle) -> ServiceResult<PredictionReport> {
    let k = bundle.class_count();
    if logits.len() != k {
        return Err(ServiceError::Dimension {
            what: "logits",
            expected: k,
            got: logits.len(),
        });
    }
    let ood = bundle.energy().detect(logits).map_err(ServiceError::Input)?;

    let probs = softmax(logits).map_err(ServiceError::Input)?;
    let p = probs.as_slice();
    let top = probs.argmax();
    let top1 = named(bundle, top, p[top])?;

    let mut members = bundle.calibration().predict_set(&probs);
    members.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
    let conformal_set = members
        .into_iter()
        .map(|c| named(bundle, c, p[c]))
        .collect::<ServiceResult<Vec<_>>>()?;

    Ok(PredictionReport {
        top1,
        conformal_set,
        warning: ood.is_ood.then(|| OOD_WARNING.to_string()),
        ood,
        model_metadata: bundle.metadata(),
    })
}

/// Pushes a feature vector through the bundle's head first.
pub fn predict_features(features: &[f64], bundle: &Bundle) -> ServiceResult<PredictionReport> {
    let head = bundle.head().ok_or(ServiceError::NoHead)?;
    if features.len() != head.dim() {
        return Err(ServiceError::Dimension {
            what: "features",
            expected: head.dim(),
            got: features.len(),
        });
    }
    let logits = head.logits(features).map_err(ServiceError::Input)?;
    predict_pipeline(&logits, bundle)
}
