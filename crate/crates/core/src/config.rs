//! Run-wide configuration and deterministic seed forking.
//!
//! One global seed drives the whole pipeline; every stage derives its own
//! seed as `fork_seed(global, STREAM)` with a fixed per-stage stream id, so
//! stages can rerun independently and still reproduce byte-identical
//! numbers.

use crate::bcd::BcdConfig;
use crate::channel::{ChannelParams, LinkBudget};
use crate::ckm::{CkmDims, CkmTrainConfig};
use crate::error::Result;
use crate::geometry::EnvGenConfig;
use crate::mdp::{EpisodeConfig, RewardWeights};
use crate::ppo::PpoConfig;
use crate::wgan::WganConfig;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Stream ids, one per pipeline stage (plus a few sub-streams).
pub mod streams {
    pub const GEN_ENV: u64 = 1;
    pub const GEN_DATA: u64 = 2;
    pub const SPLIT: u64 = 3;
    pub const WGAN: u64 = 4;
    pub const SYNTH: u64 = 5;
    pub const CKM: u64 = 6;
    pub const PPO: u64 = 7;
    pub const BCD: u64 = 8;
    pub const EVAL: u64 = 9;
}

/// SplitMix64 over (seed, stream): cheap, stable, and well mixed.
pub fn fork_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Dataset sizing shared by the generation and augmentation stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    /// Rows of simulated "real" data.
    pub real_rows: usize,
    /// Train fraction of the train/validation split.
    pub train_fraction: f64,
    /// Synthetic rows requested from the generator, as a multiple of the
    /// real training rows.
    pub synth_multiple: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            real_rows: 5000,
            train_fraction: 0.7,
            synth_multiple: 3.0,
        }
    }
}

/// Everything one pipeline run needs, JSON-serializable with defaults for
/// every omitted block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub env: EnvGenConfig,
    pub channel: ChannelParams,
    pub budget: LinkBudget,
    pub grid_width_cells: usize,
    pub grid_depth_cells: usize,
    pub data: DataConfig,
    pub wgan: WganConfig,
    pub ckm_dims: CkmDims,
    pub ckm_train: CkmTrainConfig,
    pub episode: EpisodeConfig,
    pub reward_weights: RewardWeights,
    pub ppo: PpoConfig,
    pub bcd: BcdConfig,
}

impl RunConfig {
    pub fn with_defaults() -> Self {
        Self {
            grid_width_cells: 20,
            grid_depth_cells: 20,
            ..Self::default()
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg: RunConfig = serde_json::from_str(&text)?;
        cfg.normalize_grid();
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    fn normalize_grid(&mut self) {
        if self.grid_width_cells == 0 {
            self.grid_width_cells = 20;
        }
        if self.grid_depth_cells == 0 {
            self.grid_depth_cells = 20;
        }
    }

    /// The derived seed of a pipeline stage.
    pub fn stage_seed(&self, stream: u64) -> u64 {
        fork_seed(self.seed, stream)
    }
}
