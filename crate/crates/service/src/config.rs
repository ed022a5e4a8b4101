//! Service configuration, read from TOML.
//!
//! Every section is optional and falls back to the library defaults, so an
//! empty file is a valid configuration.

use std::path::{Path, PathBuf};

use burnscope::camera::CameraIntrinsics;
use burnscope::clinical::Ruleset;
use burnscope::features::SiftParams;
use burnscope::longitudinal::IcpParams;
use burnscope::mapping::FusionParams;
use burnscope::metrics::MetricsOptions;
use burnscope::quality::{ConfidenceWeights, QcPolicy};
use burnscope::reconstruction::SfmOptions;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid configuration: {0}")]
    Parse(String),
    #[error("invalid configuration value: {0}")]
    Value(String),
    #[error("ruleset {path}: {message}")]
    Ruleset { path: PathBuf, message: String },
}

/// Pinhole intrinsics given directly in a config file or request body.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntrinsicsConfig {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl IntrinsicsConfig {
    pub fn to_intrinsics(self) -> Result<CameraIntrinsics, ConfigError> {
        CameraIntrinsics::new(self.fx, self.fy, self.cx, self.cy).map_err(|e| ConfigError::Value(e.to_string()))
    }
}

/// Intrinsics assumed for an uncalibrated image: focal length of
/// `focal_factor` x the longer side, principal point at the centre.
pub fn fallback_intrinsics(width: usize, height: usize, focal_factor: f64) -> CameraIntrinsics {
    let f = focal_factor * width.max(height) as f64;
    CameraIntrinsics::new(f, f, (width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0)
        .expect("image dimensions are positive")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    /// Seeds every stochastic stage. Overrides `sfm.ransac.seed`.
    pub seed: u64,
    pub listen: String,
    /// Analysis jobs that may wait for the worker before submits are refused.
    pub queue_capacity: usize,
    /// Largest accepted request body.
    pub max_upload_mb: usize,
    /// TOML ruleset; the bundled starter ruleset when unset.
    pub ruleset: Option<PathBuf>,
    /// Camera used for every image unless a request or mesh-direct camera
    /// set says otherwise.
    pub intrinsics: Option<IntrinsicsConfig>,
    pub fallback_focal_factor: f64,
    pub qc: QcPolicy,
    pub sift: SiftParams,
    pub sfm: SfmOptions,
    pub fusion: FusionParams,
    pub metrics: MetricsOptions,
    pub icp: IcpParams,
    pub confidence: ConfidenceWeights,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            listen: "127.0.0.1:8080".to_string(),
            queue_capacity: 16,
            max_upload_mb: 512,
            ruleset: None,
            intrinsics: None,
            fallback_focal_factor: 1.2,
            qc: QcPolicy::default(),
            sift: SiftParams {
                max_keypoints: Some(2500),
                ..SiftParams::default()
            },
            sfm: SfmOptions::default(),
            fusion: FusionParams::default(),
            metrics: MetricsOptions::default(),
            icp: IcpParams::default(),
            confidence: ConfidenceWeights::default(),
        }
    }
}

pub fn parse_config(text: &str) -> Result<ServiceConfig, ConfigError> {
    let config: ServiceConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

impl ServiceConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        parse_config(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |what: &str| Err(ConfigError::Value(what.to_string()));
        if self.queue_capacity == 0 {
            return bad("queue_capacity must be at least 1");
        }
        if self.max_upload_mb == 0 {
            return bad("max_upload_mb must be at least 1");
        }
        if !(self.fallback_focal_factor > 0.0 && self.fallback_focal_factor.is_finite()) {
            return bad("fallback_focal_factor must be positive");
        }
        if self.qc.min_images < 2 {
            return bad("qc.min_images must be at least 2");
        }
        if self.qc.max_frames < self.qc.min_images {
            return bad("qc.max_frames must not be below qc.min_images");
        }
        if !(0.0..=1.0).contains(&self.fusion.label_threshold) {
            return bad("fusion.label_threshold must lie in [0, 1]");
        }
        if let Some(k) = self.intrinsics {
            k.to_intrinsics()?;
        }
        Ok(())
    }

    /// SfM options with the global seed applied.
    pub fn sfm_options(&self) -> SfmOptions {
        let mut o = self.sfm.clone();
        o.ransac.seed = self.seed;
        o
    }

    pub fn load_ruleset(&self) -> Result<Ruleset, ConfigError> {
        let Some(path) = &self.ruleset else {
            return Ok(Ruleset::default_rules());
        };
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.clone(),
            source,
        })?;
        Ruleset::parse(&text).map_err(|e| ConfigError::Ruleset {
            path: path.clone(),
            message: e.to_string(),
        })
    }
}
