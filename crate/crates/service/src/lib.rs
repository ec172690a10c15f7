//! Prediction workflow over a bundle of fitted artifacts, plus its HTTP
//! service: OOD check first, then the named top-1, then the conformal set.

pub mod bundle;
mod error;
pub mod http;
pub mod pipeline;

pub use bundle::{Bundle, ModelMetadata};
pub use error::{ErrorBody, ServiceError, ServiceResult};
pub use http::{router, serve, ServiceConfig};
pub use pipeline::{predict_features, predict_pipeline, PredictionReport, TaxonPrediction, OOD_WARNING};
