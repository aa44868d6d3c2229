//! Run configuration: a declarative TOML document with dotted-key overrides.
//!
//! Precedence is overrides > file > built-in defaults. Unknown keys are
//! rejected at every level.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backends::mock::MockConfig;
use crate::backends::{SegmenterVariant, SemanticModel};
use crate::error::{Error, Result};
use crate::matching::MaskInterp;
use crate::superpixel::SuperpixelParams;

/// Environment variable naming the directory relative weight paths resolve
/// against.
pub const WEIGHTS_DIR_ENV: &str = "TFCOUNT_WEIGHTS_DIR";

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub segmenter: SegmenterConfig,
    pub semantic: SemanticConfig,
    pub superpixel: SuperpixelParams,
    pub prompts: PromptConfig,
    pub multiscale: MultiscaleConfig,
    pub dedup: DedupConfig,
    pub matching: MatchingConfig,
    pub mock: MockConfig,
    pub run: RunSettings,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmenterKind {
    #[default]
    Onnx,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmenterConfig {
    pub backend: SegmenterKind,
    pub variant: SegmenterVariant,
    /// Directory holding `encoder.onnx` and `decoder.onnx`.
    pub weights_path: Option<PathBuf>,
    /// Candidate masks with a lower predicted IoU are dropped.
    pub pred_iou_thresh: f32,
    pub stability_score_thresh: f32,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        Self {
            backend: SegmenterKind::Onnx,
            variant: SegmenterVariant::VitH,
            weights_path: None,
            pred_iou_thresh: 0.88,
            stability_score_thresh: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SemanticConfig {
    pub model: SemanticModel,
    pub weights_path: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptMode {
    #[default]
    Superpixel,
    Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PromptConfig {
    pub mode: PromptMode,
    /// Points per side in grid mode.
    pub grid_side: usize,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self { mode: PromptMode::Superpixel, grid_side: 32 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MultiscaleConfig {
    pub enabled: bool,
    pub n_p: usize,
}

impl Default for MultiscaleConfig {
    fn default() -> Self {
        Self { enabled: true, n_p: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DedupConfig {
    pub iou_threshold: f64,
}

impl Default for DedupConfig {
    fn default() -> Self {
        Self { iou_threshold: 0.8 }
    }
}

/// Which feature grid proposals are matched on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSource {
    #[default]
    Semantic,
    Segmenter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatchingConfig {
    pub theta: f64,
    pub delta: f64,
    pub tpu_rounds: u32,
    pub mask_interp: MaskInterp,
    pub features: FeatureSource,
}

impl Default for MatchingConfig {
    fn default() -> Self {
        Self { theta: 0.4, delta: 0.5, tpu_rounds: 1, mask_interp: MaskInterp::Soft, features: FeatureSource::Semantic }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSettings {
    pub workers: usize,
    pub seed: u64,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self { workers: 1, seed: 0 }
    }
}

/// The four method components that can be toggled for ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Components {
    pub superpixel: bool,
    pub semantic: bool,
    pub tpu: bool,
    pub multiscale: bool,
}

impl Components {
    pub const ALL: Components = Components { superpixel: true, semantic: true, tpu: true, multiscale: true };
    pub const NONE: Components = Components { superpixel: false, semantic: false, tpu: false, multiscale: false };

    /// All sixteen on/off combinations, `NONE` first and `ALL` last.
    pub fn all_combinations() -> Vec<Components> {
        (0..16u8)
            .map(|bits| Components {
                superpixel: bits & 1 != 0,
                semantic: bits & 2 != 0,
                tpu: bits & 4 != 0,
                multiscale: bits & 8 != 0,
            })
            .collect()
    }

    pub fn apply(&self, cfg: &mut Config) {
        cfg.prompts.mode = if self.superpixel { PromptMode::Superpixel } else { PromptMode::Grid };
        cfg.matching.features = if self.semantic { FeatureSource::Semantic } else { FeatureSource::Segmenter };
        if !self.tpu {
            cfg.matching.tpu_rounds = 0;
        } else if cfg.matching.tpu_rounds == 0 {
            cfg.matching.tpu_rounds = 1;
        }
        cfg.multiscale.enabled = self.multiscale;
    }

    pub fn of(cfg: &Config) -> Self {
        Self {
            superpixel: cfg.prompts.mode == PromptMode::Superpixel,
            semantic: cfg.matching.features == FeatureSource::Semantic,
            tpu: cfg.matching.tpu_rounds > 0,
            multiscale: cfg.multiscale.enabled && cfg.multiscale.n_p > 1,
        }
    }
}

impl std::fmt::Display for Components {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<&str> = [(self.superpixel, "sp"), (self.semantic, "sem"), (self.tpu, "tpu"), (self.multiscale, "ms")]
            .into_iter()
            .filter_map(|(on, name)| on.then_some(name))
            .collect();
        if parts.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&parts.join("+"))
        }
    }
}

impl std::str::FromStr for Components {
    type Err = Error;

    /// Parses `none`, `all`, or a `+`-separated subset of `sp`, `sem`, `tpu`, `ms`.
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" | "" => return Ok(Self::NONE),
            "all" => return Ok(Self::ALL),
            _ => {}
        }
        let mut c = Self::NONE;
        for part in s.split('+') {
            match part.trim().to_ascii_lowercase().as_str() {
                "sp" | "superpixel" => c.superpixel = true,
                "sem" | "semantic" => c.semantic = true,
                "tpu" => c.tpu = true,
                "ms" | "multiscale" => c.multiscale = true,
                other => return Err(Error::Config(format!("unknown component `{other}`"))),
            }
        }
        Ok(c)
    }
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_table(parse_table(text)?)
    }

    /// Loads an optional config file and applies `key.path=value` overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
                parse_table(&text)?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        Self::from_table(table)
    }

    fn from_table(table: toml::Table) -> Result<Self> {
        let cfg: Config = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.matching;
        for (name, v) in [("matching.theta", m.theta), ("matching.delta", m.delta)] {
            if !(v > -1.0 && v < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (-1, 1), got {v}")));
            }
        }
        if !(self.dedup.iou_threshold > 0.0 && self.dedup.iou_threshold <= 1.0) {
            return Err(Error::Config("dedup.iou_threshold must lie in (0, 1]".into()));
        }
        if self.multiscale.n_p == 0 {
            return Err(Error::Config("multiscale.n_p must be at least 1".into()));
        }
        if self.prompts.grid_side == 0 {
            return Err(Error::Config("prompts.grid_side must be at least 1".into()));
        }
        if self.superpixel.cluster_count == 0 || self.superpixel.compactness.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) || self.superpixel.max_iterations == 0 {
            return Err(Error::Config("superpixel parameters must be positive".into()));
        }
        if self.run.workers == 0 {
            return Err(Error::Config("run.workers must be at least 1".into()));
        }
        Ok(())
    }

    /// Resolves a configured weight path against the weights directory
    /// environment variable when it is relative.
    pub fn resolve_weights(path: &Path) -> PathBuf {
        match std::env::var_os(WEIGHTS_DIR_ENV) {
            Some(dir) if path.is_relative() => Path::new(&dir).join(path),
            _ => path.to_path_buf(),
        }
    }
}

fn parse_table(text: &str) -> Result<toml::Table> {
    text.parse::<toml::Table>().map_err(|e| Error::Config(e.to_string()))
}

fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not of the form key=value")))?;
    let value = match format!("v = {}", raw.trim()).parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.trim().to_string()),
    };
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, parents) = parts.split_last().expect("split yields at least one part");
    let mut cur = table;
    for p in parents {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{p}` in `{key}` is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_method_settings() {
        let c = Config::default();
        assert_eq!((c.matching.theta, c.matching.delta, c.matching.tpu_rounds), (0.4, 0.5, 1));
        assert_eq!((c.multiscale.enabled, c.multiscale.n_p), (true, 2));
        assert_eq!(c.dedup.iou_threshold, 0.8);
        assert_eq!(c.superpixel.cluster_count, 1024);
        assert_eq!(Components::of(&c), Components::ALL);
    }

    #[test]
    fn overrides_beat_file_values() {
        let dir = std::env::temp_dir().join(format!("tfcount-cfg-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("c.toml");
        std::fs::write(&path, "[matching]\ntheta = 0.3\ndelta = 0.6\n").unwrap();
        let c = Config::load(Some(&path), &["matching.theta=0.45".into(), "prompts.mode=grid".into()]).unwrap();
        assert_eq!((c.matching.theta, c.matching.delta), (0.45, 0.6));
        assert_eq!(c.prompts.mode, PromptMode::Grid);
        std::fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(Config::from_toml_str("[matching]\ntheata = 0.3\n"), Err(Error::Config(_))));
        assert!(Config::from_toml_str("[nope]\nx = 1\n").is_err());
        assert!(Config::load(None, &["matching.theta=1.5".into()]).is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let mut c = Config::default();
        c.semantic.model = SemanticModel::Mock;
        c.segmenter.weights_path = Some("sam".into());
        assert_eq!(Config::from_toml_str(&c.to_toml_string()).unwrap(), c);
    }

    #[test]
    fn component_parsing() {
        assert_eq!("none".parse::<Components>().unwrap(), Components::NONE);
        assert_eq!("sp+sem+tpu+ms".parse::<Components>().unwrap(), Components::ALL);
        let c: Components = "sem+ms".parse().unwrap();
        assert_eq!(c.to_string(), "sem+ms");
        assert!("sp+foo".parse::<Components>().is_err());
        let all = Components::all_combinations();
        assert_eq!(all.len(), 16);
        assert_eq!((all[0], all[15]), (Components::NONE, Components::ALL));
        let mut cfg = Config::default();
        for c in all {
            c.apply(&mut cfg);
            assert_eq!(Components::of(&cfg), c);
        }
    }
}
