//! Layered pipeline configuration.
//!
//! Values come from built-in defaults, then an optional TOML file, then
//! command-line overrides; later layers win. Every leaf value remembers which
//! layer set it.
//!
//! ```toml
//! [segmentation]
//! min_points = 2500
//! max_points = 50000
//!
//! [matching]
//! rf_threshold = 0.69
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::GestaltParams;
use crate::forest::RfParams;
use crate::ground::PmfParams;
use crate::matching::MatchParams;
use crate::registration::RegistrationParams;
use crate::segmentation::SegmentationParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessParams {
    /// Remove ground before segmenting clouds that become target maps.
    pub filter_ground_target: bool,
    /// Remove ground before segmenting source clouds.
    pub filter_ground_source: bool,
    /// Keep segment points in built maps.
    pub store_points: bool,
}

impl Default for PreprocessParams {
    fn default() -> Self {
        Self {
            filter_ground_target: true,
            filter_ground_source: true,
            store_points: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub preprocess: PreprocessParams,
    pub pmf: PmfParams,
    pub segmentation: SegmentationParams,
    pub gestalt: GestaltParams,
    pub rf: RfParams,
    pub matching: MatchParams,
    pub registration: RegistrationParams,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.pmf.validate()?;
        self.segmentation.validate()?;
        self.gestalt.validate()?;
        self.rf.validate()?;
        self.matching.validate()?;
        self.registration.validate()
    }

    /// Fingerprint of everything that shapes a segment map's contents.
    pub fn map_fingerprint(&self) -> String {
        fingerprint_of(&(
            self.preprocess.filter_ground_target,
            &self.pmf,
            &self.segmentation,
            &self.gestalt,
        ))
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut loader = ConfigLoader::new();
        loader.merge_str(text, Provenance::File)?;
        Ok(loader.resolve()?.config)
    }
}

/// Short hex SHA-256 of a value's JSON encoding.
pub fn fingerprint_of<T: Serialize + ?Sized>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("fingerprinted values serialise");
    let digest = Sha256::digest(&bytes);
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Default,
    File,
    Flag,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolvedConfig {
    pub config: PipelineConfig,
    /// `section.key` → layer that set it.
    pub provenance: BTreeMap<String, Provenance>,
}

impl ResolvedConfig {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serialises")
    }
}

#[derive(Debug, Clone)]
pub struct ConfigLoader {
    table: toml::Table,
    provenance: BTreeMap<String, Provenance>,
}

impl Default for ConfigLoader {
    fn default() -> Self {
        Self::new()
    }
}

impl ConfigLoader {
    pub fn new() -> Self {
        let table = toml::Table::try_from(PipelineConfig::default()).expect("defaults serialise");
        let mut provenance = BTreeMap::new();
        for (section, v) in &table {
            if let Some(t) = v.as_table() {
                for key in t.keys() {
                    provenance.insert(format!("{section}.{key}"), Provenance::Default);
                }
            }
        }
        Self { table, provenance }
    }

    pub fn merge_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.merge_str(&text, Provenance::File)
            .map_err(|e| match e {
                Error::InvalidParams(m) => Error::InvalidParams(format!("{}: {m}", path.display())),
                other => other,
            })
    }

    pub fn merge_str(&mut self, text: &str, layer: Provenance) -> Result<()> {
        let parsed: toml::Table = text
            .parse()
            .map_err(|e| Error::InvalidParams(format!("config: {e}")))?;
        for (section, v) in parsed {
            let Some(values) = v.as_table() else {
                return Err(Error::InvalidParams(format!(
                    "config: top-level key {section:?} must be a [section]"
                )));
            };
            for (key, value) in values {
                self.set_with(&format!("{section}.{key}"), value.clone(), layer)?;
            }
        }
        Ok(())
    }

    /// Overrides one `section.key` from a command-line flag.
    pub fn set(&mut self, dotted: &str, value: toml::Value) -> Result<()> {
        self.set_with(dotted, value, Provenance::Flag)
    }

    fn set_with(&mut self, dotted: &str, value: toml::Value, layer: Provenance) -> Result<()> {
        let (section, key) = dotted.split_once('.').ok_or_else(|| {
            Error::InvalidParams(format!("config key {dotted:?} needs a section"))
        })?;
        let slot = self
            .table
            .get_mut(section)
            .and_then(|s| s.as_table_mut())
            .and_then(|t| t.get_mut(key))
            .ok_or_else(|| Error::InvalidParams(format!("unknown config key {dotted:?}")))?;
        // integers are accepted where floats are expected
        let value = match (&*slot, value) {
            (toml::Value::Float(_), toml::Value::Integer(i)) => toml::Value::Float(i as f64),
            (_, v) => v,
        };
        let prev = self.provenance.insert(dotted.to_string(), layer);
        if layer == Provenance::Flag && prev == Some(Provenance::File) {
            log::info!("flag overrides config file value for {dotted}");
        }
        *slot = value;
        Ok(())
    }

    pub fn resolve(self) -> Result<ResolvedConfig> {
        let config: PipelineConfig = toml::Value::Table(self.table)
            .try_into()
            .map_err(|e| Error::InvalidParams(format!("config: {e}")))?;
        config.validate()?;
        Ok(ResolvedConfig {
            config,
            provenance: self.provenance,
        })
    }
}
