//! Procedural climbing world: walls, routes, the oracle climber, the frozen
//! patch featurizer and dataset persistence.

mod dataset;
mod featurize;
mod planner;
mod video;
mod wall;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SabrError};

pub use dataset::{
    gen_dataset, gen_record, read_dataset, read_record, record_path, write_dataset, write_record,
    Dataset, DatasetRecord, Manifest, RecordEntry, Split, DATASET_VERSION, RECORD_MAGIC,
};
pub use featurize::{featurize, ConditioningTokens, Featurizer, FEATURIZER_SEED};
pub use planner::{oracle_motion, plan_moves, OracleMotion, EFFECTORS};
pub use video::{descriptor_len, ContextMask, ToyVideo};
pub use wall::{
    gen_route, gen_wall, validate_route, Hold, Route, Wall, APPEARANCE_CLASSES, SIZE_CLASSES,
    TEXTURES,
};

/// Generator settings for walls, routes, climbs and videos.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    pub cols: usize,
    pub rows: usize,
    pub cell_px: f64,
    pub hold_density: f64,
    pub reach_cells: f64,
    pub min_row_step: usize,
    pub max_row_step: usize,
    pub min_route_len: usize,
    pub move_frames: usize,
    pub rest_frames: usize,
    pub max_frames: usize,
    pub depth: f64,
    pub depth_jitter: f64,
    pub box_margin: f64,
    pub patch_cells: usize,
    pub ctx_frames: usize,
    pub cond_width: usize,
    pub fps: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            cols: 12,
            rows: 20,
            cell_px: 20.0,
            hold_density: 0.35,
            reach_cells: 3.0,
            min_row_step: 2,
            max_row_step: 3,
            min_route_len: 4,
            move_frames: 8,
            rest_frames: 4,
            max_frames: 120,
            depth: 4.0,
            depth_jitter: 0.2,
            box_margin: 0.05,
            patch_cells: 2,
            ctx_frames: 2,
            cond_width: 32,
            fps: 24.0,
        }
    }
}

impl WorldConfig {
    /// Compact world used by the desk-scale experiments: an 8×12 wall
    /// (24 patches per frame) and six-frame moves, giving 26 to 38 frames.
    pub fn desk() -> Self {
        WorldConfig {
            cols: 8,
            rows: 12,
            move_frames: 6,
            ..Self::default()
        }
    }

    pub fn patch_grid(&self) -> (usize, usize) {
        (self.cols / self.patch_cells, self.rows / self.patch_cells)
    }

    pub fn patches(&self) -> usize {
        let (c, r) = self.patch_grid();
        c * r
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SabrError::Config(format!("world: {m}")));
        if self.cols < 2 || self.rows < 4 {
            return bad("wall must be at least 2×4 cells");
        }
        if self.patch_cells == 0
            || !self.cols.is_multiple_of(self.patch_cells)
            || !self.rows.is_multiple_of(self.patch_cells)
        {
            return bad("patch_cells must divide cols and rows");
        }
        if !(self.cell_px > 0.0)
            || !(0.0..=1.0).contains(&self.hold_density)
            || !(self.reach_cells > 0.0)
        {
            return bad("cell_px, hold_density or reach_cells out of range");
        }
        if self.min_row_step == 0 || self.min_row_step > self.max_row_step || self.min_route_len < 4
        {
            return bad("row steps or min_route_len out of range");
        }
        if self.move_frames == 0 || self.max_frames == 0 {
            return bad("move_frames and max_frames must be positive");
        }
        if !(self.depth > self.depth_jitter.abs()) || !(0.0..0.5).contains(&self.box_margin) {
            return bad("depth or box_margin out of range");
        }
        if self.cond_width == 0 || !self.cond_width.is_multiple_of(4) {
            return bad("cond_width must be a positive multiple of 4");
        }
        if !(self.fps > 0.0) {
            return bad("fps must be positive");
        }
        Ok(())
    }
}
