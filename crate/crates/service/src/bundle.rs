//! The deployable unit: calibration, energy config, class map, taxonomy and
//! an optional head, all sharing one class count.

use std::fs::{self, File};
use std::path::Path;

use serde::Serialize;
use trustgate_core::backend::{formats, load_head, write_head};
use trustgate_core::conformal::ConformalCalibration;
use trustgate_core::ood::EnergyConfig;
use trustgate_core::{ClassIndexMap, ClassifierHead, Taxonomy};

use crate::{ServiceError, ServiceResult};

pub const CALIBRATION_FILE: &str = "calibration.json";
pub const ENERGY_FILE: &str = "energy.json";
pub const HEAD_FILE: &str = "head.tghd";
pub const CLASS_MAP_FILE: &str = "classmap.csv";
pub const TAXA_FILE: &str = "taxa.csv";

#[derive(Debug, Clone)]
pub struct Bundle {
    calibration: ConformalCalibration,
    energy: EnergyConfig,
    head: Option<ClassifierHead>,
    class_map: ClassIndexMap,
    taxa: Taxonomy,
}

/// Identifies the artifacts a prediction was made with.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelMetadata {
    pub alpha: f64,
    pub qhat: f64,
    pub calibration_n: usize,
    pub temperature: f64,
    pub threshold: f64,
    pub class_count: usize,
    pub feature_dim: Option<usize>,
    pub class_map_digest: String,
}

impl Bundle {
    pub fn new(
        calibration: ConformalCalibration,
        energy: EnergyConfig,
        head: Option<ClassifierHead>,
        class_map: ClassIndexMap,
        taxa: Taxonomy,
    ) -> ServiceResult<Self> {
        let k = class_map.len();
        let bad = |m: String| Err(ServiceError::Config(m));
        if k == 0 {
            return bad("class map is empty".into());
        }
        if energy.threshold.is_none() {
            return bad("energy config has no fitted threshold".into());
        }
        if let Some(h) = &head {
            if h.class_count() != k {
                return bad(format!("head has {} classes, class map has {k}", h.class_count()));
            }
        }
        if let Some(t) = class_map.taxa().iter().find(|t| taxa.get(**t).is_none()) {
            return bad(format!("class map references taxon {t}, absent from the taxonomy"));
        }
        Ok(Bundle {
            calibration,
            energy,
            head,
            class_map,
            taxa,
        })
    }

    pub fn load(dir: impl AsRef<Path>) -> ServiceResult<Self> {
        let dir = dir.as_ref();
        let read = |name: &str| {
            fs::read_to_string(dir.join(name)).map_err(|e| ServiceError::Config(format!("{name}: {e}")))
        };
        let open = |name: &str| File::open(dir.join(name)).map_err(|e| ServiceError::Config(format!("{name}: {e}")));
        let ctx = |name: &'static str| move |e: trustgate_core::Error| ServiceError::Config(format!("{name}: {e}"));

        let calibration = ConformalCalibration::from_json(&read(CALIBRATION_FILE)?).map_err(ctx(CALIBRATION_FILE))?;
        let energy = EnergyConfig::from_json(&read(ENERGY_FILE)?).map_err(ctx(ENERGY_FILE))?;
        let head = if dir.join(HEAD_FILE).exists() {
            Some(load_head(dir.join(HEAD_FILE)).map_err(ctx(HEAD_FILE))?)
        } else {
            None
        };
        let class_map = formats::read_class_map(open(CLASS_MAP_FILE)?).map_err(ctx(CLASS_MAP_FILE))?;
        let taxa = Taxonomy::read_csv(open(TAXA_FILE)?).map_err(ctx(TAXA_FILE))?;
        Self::new(calibration, energy, head, class_map, taxa)
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> ServiceResult<()> {
        let dir = dir.as_ref();
        let io = |e: std::io::Error| ServiceError::Config(e.to_string());
        let core = |e: trustgate_core::Error| ServiceError::Config(e.to_string());
        fs::create_dir_all(dir).map_err(io)?;
        fs::write(dir.join(CALIBRATION_FILE), self.calibration.to_json().map_err(core)?).map_err(io)?;
        fs::write(dir.join(ENERGY_FILE), self.energy.to_json().map_err(core)?).map_err(io)?;
        if let Some(h) = &self.head {
            write_head(dir.join(HEAD_FILE), h).map_err(core)?;
        }
        formats::write_class_map(File::create(dir.join(CLASS_MAP_FILE)).map_err(io)?, &self.class_map).map_err(core)?;
        self.taxa
            .write_csv(File::create(dir.join(TAXA_FILE)).map_err(io)?)
            .map_err(core)
    }

    pub fn class_count(&self) -> usize {
        self.class_map.len()
    }

    pub fn calibration(&self) -> &ConformalCalibration {
        &self.calibration
    }

    pub fn energy(&self) -> &EnergyConfig {
        &self.energy
    }

    pub fn head(&self) -> Option<&ClassifierHead> {
        self.head.as_ref()
    }

    pub fn class_map(&self) -> &ClassIndexMap {
        &self.class_map
    }

    pub fn taxa(&self) -> &Taxonomy {
        &self.taxa
    }

    pub fn metadata(&self) -> ModelMetadata {
        ModelMetadata {
            alpha: self.calibration.alpha,
            qhat: self.calibration.qhat,
            calibration_n: self.calibration.n,
            temperature: self.energy.temperature,
            threshold: self.energy.threshold.expect("checked in Bundle::new"),
            class_count: self.class_count(),
            feature_dim: self.head.as_ref().map(|h| h.dim()),
            class_map_digest: self.class_map.digest(),
        }
    }
}
