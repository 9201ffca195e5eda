//! Pipeline configuration: one TOML file drives every stage.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::array::EncodingConfig;
use crate::eliminate::EliminationConfig;
use crate::error::{Error, Result};
use crate::extract::ExtractConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    /// Annotated dataset to extract events from (audio + csv pairs).
    pub dataset_root: PathBuf,
    /// Enhanced mono source bank directory.
    pub source_bank: PathBuf,
    /// Simulated RIR bank directory.
    pub rir_bank: PathBuf,
    /// Generated fold output directory.
    pub output: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            dataset_root: PathBuf::from("dataset"),
            source_bank: PathBuf::from("banks/sources"),
            rir_bank: PathBuf::from("banks/rirs"),
            output: PathBuf::from("generated"),
        }
    }
}

/// Random room sampling ranges for RIR bank construction.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RoomSampling {
    pub rt60_range: [f64; 2],
    pub dim_x_range: [f64; 2],
    pub dim_y_range: [f64; 2],
    pub dim_z_range: [f64; 2],
    /// Rooms to simulate.
    pub room_count: usize,
    /// Source placements per room.
    pub sources_per_room: usize,
}

impl Default for RoomSampling {
    fn default() -> Self {
        RoomSampling {
            rt60_range: [0.1, 0.5],
            dim_x_range: [4.0, 10.0],
            dim_y_range: [4.0, 8.0],
            dim_z_range: [2.5, 4.0],
            room_count: 8,
            sources_per_room: 16,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    pub enabled: bool,
    /// Per-clip SNR draw range, dB.
    pub snr_range_db: [f64; 2],
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            enabled: true,
            snr_range_db: [6.0, 30.0],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FoldConfig {
    pub fold_count: usize,
    pub clips_per_fold: usize,
    pub clip_duration_secs: f64,
    /// Mean events placed per minute of clip.
    pub events_per_minute: f64,
    /// At no instant may more simultaneous events sound.
    pub polyphony_cap: usize,
    /// Per-event gain draw range, dB.
    pub gain_range_db: [f64; 2],
    pub noise: NoiseConfig,
}

impl Default for FoldConfig {
    fn default() -> Self {
        FoldConfig {
            fold_count: 2,
            clips_per_fold: 100,
            clip_duration_secs: 60.0,
            events_per_minute: 14.0,
            polyphony_cap: 2,
            gain_range_db: [-6.0, 6.0],
            noise: NoiseConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub paths: Paths,
    /// Optional mic geometry file; the bundled 32-mic sphere when absent.
    pub geometry_file: Option<PathBuf>,
    pub sample_rate: u32,
    pub master_seed: u64,
    pub encoding: EncodingConfig,
    pub extraction: ExtractConfig,
    pub elimination: EliminationConfig,
    pub rooms: RoomSampling,
    pub folds: FoldConfig,
    /// CGMM EM iterations for enhancement.
    pub cgmm_iters: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            paths: Paths::default(),
            geometry_file: None,
            sample_rate: 24000,
            master_seed: 0,
            encoding: EncodingConfig::default(),
            extraction: ExtractConfig::default(),
            elimination: EliminationConfig::default(),
            rooms: RoomSampling::default(),
            folds: FoldConfig::default(),
            cgmm_iters: 10,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let cfg: PipelineConfig = toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.span().map_or(0, |s| text[..s.start].lines().count()),
            msg: e.message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text =
            toml::to_string_pretty(self).map_err(|e| Error::config(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.rooms.rt60_range;
        if !(0.05..=2.0).contains(&lo) || !(0.05..=2.0).contains(&hi) || lo > hi {
            return Err(Error::config(format!(
                "rt60 range [{lo}, {hi}] outside [0.05, 2.0] or inverted"
            )));
        }
        for (name, r) in [
            ("dim_x", self.rooms.dim_x_range),
            ("dim_y", self.rooms.dim_y_range),
            ("dim_z", self.rooms.dim_z_range),
        ] {
            if r[0] <= 0.0 || r[0] > r[1] {
                return Err(Error::config(format!("bad {name} range {r:?}")));
            }
        }
        if self.rooms.room_count == 0 || self.rooms.sources_per_room == 0 {
            return Err(Error::config("room sampling counts must be positive"));
        }
        if self.folds.fold_count == 0
            || self.folds.clips_per_fold == 0
            || self.folds.clip_duration_secs <= 0.0
        {
            return Err(Error::config("fold settings must be positive"));
        }
        if self.folds.polyphony_cap == 0 {
            return Err(Error::config("polyphony cap must be at least 1"));
        }
        let [g_lo, g_hi] = self.folds.gain_range_db;
        if g_lo > g_hi {
            return Err(Error::config("gain range inverted"));
        }
        let [s_lo, s_hi] = self.folds.noise.snr_range_db;
        if s_lo > s_hi {
            return Err(Error::config("snr range inverted"));
        }
        if self.cgmm_iters == 0 {
            return Err(Error::config("cgmm_iters must be at least 1"));
        }
        self.elimination.validate(self.sample_rate)?;
        if let Some(path) = &self.geometry_file {
            if !path.exists() {
                return Err(Error::config(format!(
                    "geometry file {} does not exist",
                    path.display()
                )));
            }
        }
        Ok(())
    }
}
