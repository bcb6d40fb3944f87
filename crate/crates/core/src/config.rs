//! Pipeline configuration: one TOML file, every field defaulted.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::anchors::MatchThresholds;
use crate::augmentation::AugmentationPolicy;
use crate::dataset::AssignRule;
use crate::error::{ConfigError, Error};
use crate::scorer::OracleConfig;

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "MITODET_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train: 105,
            validation: 15,
            test: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnchorConfig {
    pub strides: Vec<u32>,
    pub scale: f64,
    pub positive_fraction: f64,
    pub batch_size: usize,
    pub positive_iou: f64,
    pub negative_iou: f64,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        let t = MatchThresholds::default();
        Self {
            strides: vec![4, 8, 16, 32],
            scale: 50.0,
            positive_fraction: 0.25,
            batch_size: 256,
            positive_iou: t.positive_iou,
            negative_iou: t.negative_iou,
        }
    }
}

impl AnchorConfig {
    pub fn thresholds(&self) -> MatchThresholds {
        MatchThresholds {
            positive_iou: self.positive_iou,
            negative_iou: self.negative_iou,
        }
    }
}

/// Synthetic data generated by the `demo` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoConfig {
    pub slides_per_scanner: usize,
    pub scanners: Vec<String>,
    pub min_side: u32,
    pub max_side: u32,
    pub mitotic_per_slide: usize,
    pub non_mitotic_per_slide: usize,
    /// Random split sizes for the demo slide set.
    pub split: SplitConfig,
    /// Render and augment pixels for this many training tiles.
    pub pixel_tiles: usize,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            slides_per_scanner: 2,
            scanners: vec!["scanner_a".into(), "scanner_b".into(), "scanner_c".into()],
            min_side: 5000,
            max_side: 7000,
            mitotic_per_slide: 8,
            non_mitotic_per_slide: 8,
            split: SplitConfig {
                train: 4,
                validation: 0,
                test: 2,
            },
            pixel_tiles: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub tile_size: u32,
    pub box_size: f64,
    pub assign_rule: AssignRule,
    pub drop_prob: f64,
    pub epoch: u64,
    pub split: SplitConfig,
    pub augmentation: AugmentationPolicy,
    pub anchors: AnchorConfig,
    pub nms_iou: f64,
    pub eval_iou: f64,
    /// Confidence threshold for `postprocess` and `evaluate`.
    pub score_threshold: f64,
    pub oracle: OracleConfig,
    pub demo: DemoConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            tile_size: 1024,
            box_size: 50.0,
            assign_rule: AssignRule::Center,
            drop_prob: 0.8,
            epoch: 0,
            split: SplitConfig::default(),
            augmentation: AugmentationPolicy::default(),
            anchors: AnchorConfig::default(),
            nms_iou: 0.1,
            eval_iou: 0.1,
            score_threshold: 0.0,
            oracle: OracleConfig::default(),
            demo: DemoConfig::default(),
        }
    }
}

fn unit(field: &str, v: f64) -> Result<(), ConfigError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(ConfigError::invalid(
            field,
            format!("{v} is outside [0, 1]"),
        ))
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.tile_size == 0 {
            return Err(ConfigError::invalid("tile_size", "must be at least 1"));
        }
        if !(self.box_size > 0.0 && self.box_size.is_finite()) {
            return Err(ConfigError::invalid("box_size", "must be positive"));
        }
        unit("drop_prob", self.drop_prob)?;
        unit("nms_iou", self.nms_iou)?;
        unit("eval_iou", self.eval_iou)?;
        unit("score_threshold", self.score_threshold)?;
        self.augmentation.validate()?;
        let a = &self.anchors;
        if a.strides.is_empty() || a.strides.contains(&0) {
            return Err(ConfigError::invalid(
                "anchors.strides",
                "need at least one stride, all >= 1",
            ));
        }
        if let Some(s) = a.strides.iter().find(|&&s| s > self.tile_size) {
            return Err(ConfigError::invalid(
                "anchors.strides",
                format!("stride {s} exceeds tile size {}", self.tile_size),
            ));
        }
        if !(a.scale >= 1.0 && a.scale.is_finite()) {
            return Err(ConfigError::invalid("anchors.scale", "must be at least 1"));
        }
        if !(a.positive_fraction > 0.0 && a.positive_fraction <= 1.0) {
            return Err(ConfigError::invalid(
                "anchors.positive_fraction",
                format!("{} is outside (0, 1]", a.positive_fraction),
            ));
        }
        unit("anchors.positive_iou", a.positive_iou)?;
        unit("anchors.negative_iou", a.negative_iou)?;
        if a.positive_iou.partial_cmp(&a.negative_iou) != Some(std::cmp::Ordering::Greater) {
            return Err(ConfigError::invalid(
                "anchors.positive_iou",
                "must exceed anchors.negative_iou",
            ));
        }
        self.oracle.validate()?;
        let d = &self.demo;
        if d.scanners.is_empty() || d.slides_per_scanner == 0 {
            return Err(ConfigError::invalid(
                "demo",
                "needs at least one scanner and slide",
            ));
        }
        if d.min_side == 0 || d.min_side > d.max_side {
            return Err(ConfigError::invalid(
                "demo.min_side",
                format!("[{}, {}] is not a valid range", d.min_side, d.max_side),
            ));
        }
        let n = d.scanners.len() * d.slides_per_scanner;
        if d.split.train + d.split.validation + d.split.test != n {
            return Err(ConfigError::invalid(
                "demo.split",
                format!("sizes must sum to the {n} demo slides"),
            ));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: PipelineConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::from_toml(&text)?)
    }
}
