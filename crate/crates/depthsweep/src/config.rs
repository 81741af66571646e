//! Application configuration: one TOML file covering every stage
//! (synthesis, rig, sweep, networks, training, fusion), with built-in
//! defaults for every key, dotted-path overrides, and a content hash
//! that output files embed so artifacts trace back to the exact
//! configuration that produced them.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::depthnets::{JointNetConfig, PersonNetConfig};
use crate::geometry::{CameraParams, Point3D};
use crate::pipeline::{PipelineError, RunConfig, TrainConfig};
use crate::sweep::SweepConfig;
use crate::synth::{ring_rig, SynthConfig, SynthError};

/// Environment variable consulted for the config path when no explicit
/// path is given.
pub const CONFIG_ENV_VAR: &str = "DEPTHSWEEP_CONFIG";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse: {0}")]
    Parse(String),
    #[error("override '{key}': {message}")]
    Override { key: String, message: String },
    #[error("config invalid: {0}")]
    Invalid(String),
}

impl From<PipelineError> for ConfigError {
    fn from(e: PipelineError) -> Self {
        ConfigError::Invalid(e.to_string())
    }
}

impl From<SynthError> for ConfigError {
    fn from(e: SynthError) -> Self {
        ConfigError::Invalid(e.to_string())
    }
}

/// Camera-ring layout for dataset generation and matched-rig inference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RigConfig {
    pub cameras: usize,
    /// Ring radius around the target point, mm.
    pub radius: f64,
    /// Camera height, mm.
    pub height: f64,
    /// Aim point (x, y, z), mm.
    pub target: (f64, f64, f64),
    /// Focal length, px.
    pub focal: f64,
    pub image_width: u32,
    pub image_height: u32,
    /// When true, each generated frame gets its own randomized rig
    /// instead of the fixed ring.
    pub randomize_per_frame: bool,
}

impl Default for RigConfig {
    fn default() -> Self {
        Self {
            cameras: 5,
            radius: 5500.0,
            height: 2200.0,
            target: (0.0, 0.0, 1000.0),
            focal: 1100.0,
            image_width: 1920,
            image_height: 1080,
            randomize_per_frame: false,
        }
    }
}

impl RigConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.cameras < 2 {
            return Err(ConfigError::Invalid(format!(
                "rig needs at least 2 cameras, got {}",
                self.cameras
            )));
        }
        for (name, v) in [("radius", self.radius), ("height", self.height), ("focal", self.focal)]
        {
            if !v.is_finite() || v <= 0.0 {
                return Err(ConfigError::Invalid(format!("rig {name} {v} must be positive")));
            }
        }
        if self.image_width == 0 || self.image_height == 0 {
            return Err(ConfigError::Invalid("rig image dimensions must be positive".into()));
        }
        let (x, y, z) = self.target;
        if !(x.is_finite() && y.is_finite() && z.is_finite()) {
            return Err(ConfigError::Invalid("rig target must be finite".into()));
        }
        Ok(())
    }

    /// Builds the fixed ring of cameras this config describes.
    pub fn build(&self) -> Result<Vec<CameraParams>, ConfigError> {
        self.validate()?;
        let (x, y, z) = self.target;
        Ok(ring_rig(
            self.cameras,
            self.radius,
            self.height,
            Point3D::new(x, y, z),
            self.focal,
            self.image_width,
            self.image_height,
        )?)
    }
}

/// Cross-view fusion parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    /// Hip-to-hip merge distance, mm.
    pub threshold_mm: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self { threshold_mm: 500.0 }
    }
}

/// The complete application configuration. Every section and key is
/// optional in the TOML file; omitted keys take these defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub synth: SynthConfig,
    pub rig: RigConfig,
    pub sweep: SweepConfig,
    pub person_net: PersonNetConfig,
    pub joint_net: JointNetConfig,
    pub train: TrainConfig,
    pub fusion: FusionConfig,
}

impl AppConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.synth.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.rig.validate()?;
        self.run_config().validate()?;
        Ok(())
    }

    /// The pipeline-facing slice of this configuration.
    pub fn run_config(&self) -> RunConfig {
        RunConfig {
            sweep: self.sweep.clone(),
            person_net: self.person_net.clone(),
            joint_net: self.joint_net.clone(),
            train: self.train.clone(),
            fusion_threshold_mm: self.fusion.threshold_mm,
        }
    }

    /// Hex SHA-256 of the canonical JSON serialization. Two configs
    /// hash equal iff every resolved value matches, regardless of which
    /// keys were spelled out in the file.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        let mut hex = String::with_capacity(64);
        for byte in digest {
            hex.push_str(&format!("{byte:02x}"));
        }
        hex
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: AppConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to TOML")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    /// Applies `key=value` overrides with dotted key paths, e.g.
    /// `train.learning_rate=5e-4` or `sweep.planes=32`. Values parse as
    /// TOML (so strings need no quotes unless they contain specials).
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self, ConfigError> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut value = toml::Value::try_from(self).map_err(|e| ConfigError::Parse(e.to_string()))?;
        for entry in overrides {
            let (key, raw) = entry.split_once('=').ok_or_else(|| ConfigError::Override {
                key: entry.clone(),
                message: "expected key=value".into(),
            })?;
            let parsed = parse_scalar(raw);
            set_path(&mut value, key, parsed).map_err(|message| ConfigError::Override {
                key: key.to_string(),
                message,
            })?;
        }
        value.try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))
    }
}

/// Parses an override value as TOML (bool, int, float, array, ...),
/// falling back to a plain string.
fn parse_scalar(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Value>() {
        Ok(toml::Value::Table(mut t)) if t.contains_key("v") => t.remove("v").unwrap(),
        _ => toml::Value::String(raw.to_string()),
    }
}

/// Sets a dotted path inside a TOML tree. Keys absent from the tree are
/// inserted (optional fields serialize to nothing), and typos surface
/// when the strict deserialization afterwards rejects the unknown field.
fn set_path(root: &mut toml::Value, path: &str, new: toml::Value) -> Result<(), String> {
    let mut node = root;
    let parts: Vec<&str> = path.split('.').collect();
    let (last, walk) = parts.split_last().ok_or("empty key")?;
    for part in walk {
        node = node
            .get_mut(part)
            .ok_or_else(|| format!("unknown section '{part}'"))?;
    }
    let table = node.as_table_mut().ok_or("path does not end in a section")?;
    table.insert((*last).to_string(), new);
    Ok(())
}

/// Resolves the configuration source: an explicit path wins, then the
/// `DEPTHSWEEP_CONFIG` environment variable, then built-in defaults. An
/// explicit or environment-supplied path must exist and parse.
pub fn resolve(explicit: Option<&Path>) -> Result<AppConfig, ConfigError> {
    if let Some(path) = explicit {
        return AppConfig::load(path);
    }
    if let Ok(path) = std::env::var(CONFIG_ENV_VAR) {
        if !path.is_empty() {
            return AppConfig::load(path);
        }
    }
    Ok(AppConfig::default())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_build_a_rig() {
        let config = AppConfig::default();
        config.validate().unwrap();
        let rig = config.rig.build().unwrap();
        assert_eq!(rig.len(), 5);
    }

    #[test]
    fn empty_toml_equals_defaults_and_partial_files_fill_in() {
        let empty = AppConfig::from_toml("").unwrap();
        assert_eq!(empty, AppConfig::default());
        let partial = AppConfig::from_toml("[sweep]\nplanes = 32\n").unwrap();
        assert_eq!(partial.sweep.planes, 32);
        assert_eq!(partial.sweep.rel_planes, AppConfig::default().sweep.rel_planes);
        assert_eq!(partial.train, TrainConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(AppConfig::from_toml("[sweep]\nplane_count = 32\n").is_err());
        assert!(AppConfig::from_toml("[mystery]\nx = 1\n").is_err());
    }

    #[test]
    fn toml_roundtrip_preserves_the_config() {
        let mut config = AppConfig::default();
        config.sweep.planes = 48;
        config.train.learning_rate = 5e-4;
        config.rig.randomize_per_frame = true;
        let text = config.to_toml();
        assert_eq!(AppConfig::from_toml(&text).unwrap(), config);
    }

    #[test]
    fn hash_tracks_resolved_values_not_spelling() {
        let defaults = AppConfig::default();
        let spelled = AppConfig::from_toml("[train]\nbatch_size = 16\n").unwrap();
        assert_eq!(defaults.hash(), spelled.hash());
        let changed = AppConfig::from_toml("[train]\nbatch_size = 8\n").unwrap();
        assert_ne!(defaults.hash(), changed.hash());
        assert_eq!(defaults.hash().len(), 64);
    }

    #[test]
    fn overrides_set_nested_keys_and_reject_typos() {
        let base = AppConfig::default();
        let out = base
            .with_overrides(&[
                "train.learning_rate=5e-4".into(),
                "sweep.planes=32".into(),
                "rig.randomize_per_frame=true".into(),
                "synth.persons_max=3".into(),
                "synth.space.x_min=-2000.0".into(),
            ])
            .unwrap();
        assert_eq!(out.train.learning_rate, 5e-4);
        assert_eq!(out.sweep.planes, 32);
        assert!(out.rig.randomize_per_frame);
        assert_eq!(out.synth.persons_max, 3);
        assert_eq!(out.synth.space.x_min, -2000.0);

        assert!(base.with_overrides(&["sweep.plane_count=32".into()]).is_err());
        assert!(base.with_overrides(&["nosuch.key=1".into()]).is_err());
        assert!(base.with_overrides(&["justakey".into()]).is_err());
        // Wrong value type fails at deserialization.
        assert!(base.with_overrides(&["sweep.planes=fast".into()]).is_err());
    }

    #[test]
    fn resolve_prefers_explicit_then_env_then_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let explicit = dir.path().join("explicit.toml");
        std::fs::write(&explicit, "[sweep]\nplanes = 24\n").unwrap();
        let from_env = dir.path().join("env.toml");
        std::fs::write(&from_env, "[sweep]\nplanes = 48\n").unwrap();

        // Env vars are process-global: serialize the three scenarios.
        std::env::set_var(CONFIG_ENV_VAR, &from_env);
        assert_eq!(resolve(Some(&explicit)).unwrap().sweep.planes, 24);
        assert_eq!(resolve(None).unwrap().sweep.planes, 48);
        std::env::remove_var(CONFIG_ENV_VAR);
        assert_eq!(resolve(None).unwrap(), AppConfig::default());
        assert!(resolve(Some(Path::new("/nonexistent/config.toml"))).is_err());
    }

    #[test]
    fn validation_flags_each_section() {
        let mut config = AppConfig::default();
        config.rig.cameras = 1;
        assert!(config.validate().is_err());
        let mut config = AppConfig::default();
        config.synth.persons_min = 0;
        assert!(config.validate().is_err());
        let mut config = AppConfig::default();
        config.fusion.threshold_mm = -1.0;
        assert!(config.validate().is_err());
        let mut config = AppConfig::default();
        config.sweep.d_min = -5.0;
        assert!(config.validate().is_err());
    }
}
