//! TOML run configuration. Every section and key is optional; unknown keys
//! are rejected.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rmk_core::detect::DecodeConfig;
use rmk_core::eaem::{Omega, MAX_OMEGA};
use rmk_core::experiment::RegressionConfig;
use rmk_core::geometry::SceneSpec;
use rmk_core::msk::{ParamConfig, MSK_KERNEL_SIZES};
use rmk_core::{NetworkConfig, Scalar};
use serde::Deserialize;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub network: NetworkSection,
    pub params: ParamsSection,
    pub data: DataSection,
    pub eval: EvalSection,
    pub experiment: ExperimentSection,
    pub paths: PathsSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSection {
    pub in_channels: usize,
    pub stem_channels: usize,
    pub backbone_channels: [usize; 3],
    pub msk_mid_channels: usize,
    pub branch_out: usize,
    /// MDCAA strip length.
    pub strip: usize,
    pub pool_window: usize,
    pub head_channels: usize,
    pub anchors: usize,
    pub anchor_scale: f64,
    pub classes: usize,
    pub omega: f64,
}

impl Default for NetworkSection {
    fn default() -> Self {
        let n = NetworkConfig::default();
        Self {
            in_channels: 1,
            stem_channels: n.stem_channels,
            backbone_channels: n.backbone_channels,
            msk_mid_channels: n.msk_mid_channels,
            branch_out: n.branch_out,
            strip: n.strip,
            pool_window: n.pool_window,
            head_channels: n.head_channels,
            anchors: n.anchors,
            anchor_scale: 4.0,
            classes: n.classes,
            omega: 1.0,
        }
    }
}

/// Channel count for the standalone parameter audit.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParamsSection {
    pub channels: u64,
    pub kernel_sizes: Vec<u64>,
}

impl Default for ParamsSection {
    fn default() -> Self {
        Self {
            channels: 64,
            kernel_sizes: MSK_KERNEL_SIZES.iter().map(|&m| m as u64).collect(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub seed: u64,
    pub images: usize,
    pub height: usize,
    pub width: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub min_size: f64,
    pub max_size: f64,
    pub axis_aligned: bool,
    pub noise: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        let s = SceneSpec::default();
        Self {
            seed: 7,
            images: 4,
            height: 128,
            width: 128,
            min_objects: s.min_objects,
            max_objects: s.max_objects,
            min_size: s.min_size,
            max_size: s.max_size,
            axis_aligned: s.axis_aligned,
            noise: s.noise,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    /// Predictions from the seeded network.
    Network,
    /// Predictions are the ground truth.
    Oracle,
    /// No predictions at all.
    Empty,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub mode: EvalMode,
    pub iou_threshold: f64,
    pub nms_threshold: f64,
    pub score_threshold: f64,
    pub max_detections: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            mode: EvalMode::Network,
            iou_threshold: 0.5,
            nms_threshold: 0.5,
            score_threshold: 0.05,
            max_detections: 100,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub steps: usize,
    pub lr: f64,
    pub targets: usize,
    pub band: f64,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        let r = RegressionConfig::default();
        Self {
            steps: r.steps,
            lr: r.lr,
            targets: r.targets,
            band: r.band,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    pub out: Option<PathBuf>,
    /// Directory written by `save_weights`; replaces the seeded weights.
    pub weights: Option<PathBuf>,
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let cfg = match path {
            None => Config::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                Self::parse(&text).with_context(|| format!("in config {}", p.display()))?
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn validate(&self) -> Result<()> {
        let n = &self.network;
        if !(n.omega > 0.0 && n.omega <= MAX_OMEGA) {
            bail!("network.omega must lie in (0, {MAX_OMEGA}], got {}", n.omega);
        }
        if n.strip < 3 || n.strip.is_multiple_of(2) {
            bail!("network.strip must be odd and >= 3, got {}", n.strip);
        }
        if !(n.anchor_scale > 0.0) {
            bail!("network.anchor_scale must be positive");
        }
        self.network_config().validate()?;
        if self.params.channels == 0 {
            bail!("params.channels must be positive");
        }
        if let Some(&m) = self.params.kernel_sizes.iter().find(|&&m| m < 3 || m % 2 == 0) {
            bail!("params.kernel_sizes entries must be odd and >= 3, got {m}");
        }
        for (key, v) in [
            ("iou_threshold", self.eval.iou_threshold),
            ("nms_threshold", self.eval.nms_threshold),
            ("score_threshold", self.eval.score_threshold),
        ] {
            if !(0.0..=1.0).contains(&v) {
                bail!("eval.{key} must lie in [0, 1], got {v}");
            }
        }
        if self.data.images == 0 {
            bail!("data.images must be positive");
        }
        self.scene_spec().validate()?;
        self.regression_config().validate()?;
        Ok(())
    }

    pub fn network_config(&self) -> NetworkConfig {
        let n = &self.network;
        NetworkConfig {
            in_channels: n.in_channels,
            stem_channels: n.stem_channels,
            backbone_channels: n.backbone_channels,
            msk_mid_channels: n.msk_mid_channels,
            branch_out: n.branch_out,
            strip: n.strip,
            pool_window: n.pool_window,
            head_channels: n.head_channels,
            anchors: n.anchors,
            classes: n.classes,
        }
    }

    pub fn param_config(&self) -> ParamConfig {
        ParamConfig {
            kernel_sizes: self.params.kernel_sizes.clone(),
            ..ParamConfig::uniform(self.params.channels)
        }
    }

    pub fn scene_spec(&self) -> SceneSpec {
        let d = &self.data;
        SceneSpec {
            min_objects: d.min_objects,
            max_objects: d.max_objects,
            min_size: d.min_size,
            max_size: d.max_size,
            classes: self.network.classes,
            axis_aligned: d.axis_aligned,
            noise: d.noise,
            ..SceneSpec::default()
        }
    }

    pub fn regression_config(&self) -> RegressionConfig {
        let e = &self.experiment;
        RegressionConfig {
            steps: e.steps,
            lr: e.lr,
            seed: self.data.seed,
            omega: self.network.omega,
            targets: e.targets,
            band: e.band,
        }
    }

    pub fn omega<T: Scalar>(&self) -> Result<Omega<T>> {
        Ok(Omega::new(T::lit(self.network.omega))?)
    }

    pub fn decode_config<T: Scalar>(&self) -> Result<DecodeConfig<T>> {
        Ok(DecodeConfig {
            omega: self.omega()?,
            anchors: self.network.anchors,
            anchor_scale: T::lit(self.network.anchor_scale),
            score_threshold: T::lit(self.eval.score_threshold),
            nms_threshold: T::lit(self.eval.nms_threshold),
            max_detections: self.eval.max_detections,
        })
    }

    /// Seed of scene `index` in a dataset.
    pub fn scene_seed(&self, index: usize) -> u64 {
        self.data.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(index as u64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_is_the_default() {
        let c = Config::parse("").unwrap();
        c.validate().unwrap();
        assert_eq!(c.network.omega, 1.0);
        assert_eq!(c.params.channels, 64);
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = Config::parse("[network]\nstrips = 5\n").unwrap_err();
        assert!(format!("{err:#}").contains("strips"));
        let err = Config::parse("[bogus]\n").unwrap_err();
        assert!(format!("{err:#}").contains("bogus"));
    }

    #[test]
    fn range_checks() {
        for text in [
            "[network]\nomega = 2.5",
            "[network]\nomega = 0.0",
            "[network]\nstrip = 4",
            "[network]\nstrip = 1",
            "[eval]\niou_threshold = 1.5",
            "[params]\nkernel_sizes = [5, 6]",
        ] {
            assert!(Config::parse(text).unwrap().validate().is_err(), "{text}");
        }
        let ok = Config::parse("[network]\nomega = 2.0\nstrip = 9\n[eval]\nmode = \"oracle\"").unwrap();
        ok.validate().unwrap();
        assert_eq!(ok.eval.mode, EvalMode::Oracle);
    }
}
