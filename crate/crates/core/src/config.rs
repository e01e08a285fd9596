//! Tunables for preprocessing and query execution, loadable from TOML.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub version: u32,
    pub preprocess: PreprocessConfig,
    pub query: QueryConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            version: CONFIG_VERSION,
            preprocess: PreprocessConfig::default(),
            query: QueryConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub chunk_seconds: f64,
    pub background: BackgroundConfig,
    pub blobs: BlobConfig,
    pub keypoints: KeypointConfig,
    pub trajectories: TrajectoryConfig,
    pub clustering: ClusterConfig,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            chunk_seconds: 60.0,
            background: BackgroundConfig::default(),
            blobs: BlobConfig::default(),
            keypoints: KeypointConfig::default(),
            trajectories: TrajectoryConfig::default(),
            clustering: ClusterConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackgroundConfig {
    /// Minimum share of the window a histogram peak must hold.
    pub peak_fraction: f64,
    /// Allowed drop in a peak's share when a window is extended before the
    /// peak counts as falling. Absorbs sampling noise.
    pub rise_slack: f64,
    pub region_size: u32,
    /// Frames borrowed from each neighbor chunk; 0 means the whole chunk.
    pub extension_frames: usize,
}

impl Default for BackgroundConfig {
    fn default() -> Self {
        BackgroundConfig {
            peak_fraction: 0.25,
            rise_slack: 0.05,
            region_size: 1,
            extension_frames: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlobConfig {
    pub tolerance: f64,
    pub open_radius: u32,
    pub close_radius: u32,
    pub min_blob_area: u32,
}

impl Default for BlobConfig {
    fn default() -> Self {
        BlobConfig {
            tolerance: 0.05,
            open_radius: 1,
            close_radius: 2,
            min_blob_area: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KeypointConfig {
    /// Start the pyramid from a 2× upsampled image.
    pub upsample: bool,
    pub octaves: u32,
    pub scales_per_octave: u32,
    pub sigma: f64,
    /// DoG contrast threshold on a [0, 1] intensity scale, before division
    /// by `scales_per_octave`.
    pub contrast_threshold: f64,
    pub edge_threshold: f64,
    /// Pixels of context kept around blobs when building the scale space.
    pub margin: u32,
    pub ratio: f64,
}

impl Default for KeypointConfig {
    fn default() -> Self {
        KeypointConfig {
            upsample: true,
            octaves: 3,
            scales_per_octave: 3,
            sigma: 1.6,
            contrast_threshold: 0.04,
            edge_threshold: 10.0,
            margin: 24,
            ratio: 0.75,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectoryConfig {
    pub min_support: u32,
    pub max_passes: u32,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        TrajectoryConfig {
            min_support: 3,
            max_passes: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    pub coverage: f64,
    pub seed: u64,
    pub max_iterations: u32,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            coverage: 0.02,
            seed: 17,
            max_iterations: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QueryConfig {
    /// Candidate max_distance values in frames, evaluated largest first.
    pub max_distance_grid: Vec<usize>,
    pub iou_threshold: f64,
    pub min_anchor_keypoints: usize,
    pub optimizer_iterations: usize,
    pub optimizer_tolerance: f64,
}

impl Default for QueryConfig {
    fn default() -> Self {
        QueryConfig {
            max_distance_grid: vec![0, 1, 2, 4, 8, 15, 30, 60, 120, 240, 450, 900],
            iou_threshold: 0.5,
            min_anchor_keypoints: 2,
            optimizer_iterations: 200,
            optimizer_tolerance: 1e-8,
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.preprocess;
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.version != CONFIG_VERSION {
            return bad("unsupported config version");
        }
        if !(p.chunk_seconds > 0.0) {
            return bad("chunk_seconds must be positive");
        }
        if !(p.background.peak_fraction > 0.0 && p.background.peak_fraction <= 1.0) {
            return bad("peak_fraction must be in (0, 1]");
        }
        if p.background.region_size == 0 {
            return bad("region_size must be at least 1");
        }
        if !(p.blobs.tolerance >= 0.0) {
            return bad("tolerance must be nonnegative");
        }
        if !(p.keypoints.ratio > 0.0 && p.keypoints.ratio <= 1.0) {
            return bad("ratio must be in (0, 1]");
        }
        if p.keypoints.octaves == 0 || p.keypoints.scales_per_octave == 0 {
            return bad("octaves and scales_per_octave must be positive");
        }
        if !(p.clustering.coverage > 0.0 && p.clustering.coverage <= 1.0) {
            return bad("coverage must be in (0, 1]");
        }
        if self.query.max_distance_grid.is_empty() {
            return bad("max_distance_grid must not be empty");
        }
        if !(self.query.iou_threshold > 0.0 && self.query.iou_threshold < 1.0) {
            return bad("iou_threshold must be in (0, 1)");
        }
        Ok(())
    }

    /// Hash of every preprocessing parameter. Changes iff any of them changes.
    pub fn fingerprint(&self) -> String {
        let canonical = toml::to_string(&self.preprocess).expect("config serializes");
        hex::encode(&Sha256::digest(canonical.as_bytes())[..16])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_toml() {
        let cfg = Config::default();
        assert_eq!(Config::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn partial_file_uses_defaults() {
        let cfg = Config::from_toml("[preprocess.blobs]\nmin_blob_area = 30\n").unwrap();
        assert_eq!(cfg.preprocess.blobs.min_blob_area, 30);
        assert_eq!(cfg.preprocess.blobs.tolerance, 0.05);
    }

    #[test]
    fn fingerprint_tracks_preprocess_parameters_only() {
        let base = Config::default();
        let mut other = base.clone();
        other.preprocess.blobs.open_radius = 2;
        assert_ne!(base.fingerprint(), other.fingerprint());
        let mut q = base.clone();
        q.query.iou_threshold = 0.6;
        assert_eq!(base.fingerprint(), q.fingerprint());
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(Config::from_toml("[preprocess]\nbogus = 1\n").is_err());
        assert!(Config::from_toml("[preprocess.clustering]\ncoverage = 0.0\n").is_err());
    }
}
