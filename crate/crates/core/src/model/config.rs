use serde::{Deserialize, Serialize};

use crate::error::{Result, SabrError};

/// Transformer hyper-parameters. `group_dims` lists the per-frame token
/// groups (pose, shape, camera, box) and sums to the motion width D.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub width: usize,
    pub heads: usize,
    pub blocks: usize,
    pub group_dims: Vec<usize>,
    pub cond_width: usize,
    pub max_frames: usize,
    pub mlp_ratio: usize,
    #[serde(default = "yes")]
    pub temporal_embedding: bool,
    #[serde(default = "yes")]
    pub group_embedding: bool,
}

fn yes() -> bool {
    true
}

/// Group widths for a body with `n_joints` joints and `shape_dim` shape
/// coefficients.
pub fn motion_groups(n_joints: usize, shape_dim: usize) -> Vec<usize> {
    vec![9 * n_joints, shape_dim, 3, 4]
}

impl ModelConfig {
    /// Named size presets. `desk` is an alias of `desk-base`.
    pub fn preset(name: &str, group_dims: Vec<usize>, cond_width: usize) -> Result<Self> {
        let (width, heads, blocks) = match name {
            "small" => (384, 6, 12),
            "base" => (768, 12, 12),
            "large" => (1024, 16, 24),
            "desk" | "desk-base" => (64, 4, 4),
            "desk-small" => (32, 2, 2),
            other => return Err(SabrError::Config(format!("unknown model preset '{other}'"))),
        };
        let cfg = ModelConfig {
            width,
            heads,
            blocks,
            group_dims,
            cond_width,
            max_frames: 120,
            mlp_ratio: 4,
            temporal_embedding: true,
            group_embedding: true,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.heads == 0 || !self.width.is_multiple_of(self.heads) {
            return Err(SabrError::Config(format!(
                "width {} must be a positive multiple of heads {}",
                self.width, self.heads
            )));
        }
        if !self.width.is_multiple_of(2) {
            return Err(SabrError::Config(format!(
                "width {} must be even",
                self.width
            )));
        }
        if self.blocks == 0 || !self.blocks.is_multiple_of(2) {
            return Err(SabrError::Config(format!(
                "block count {} must be even and positive",
                self.blocks
            )));
        }
        if self.group_dims.is_empty() || self.group_dims.contains(&0) {
            return Err(SabrError::Config(format!(
                "invalid group dims {:?}",
                self.group_dims
            )));
        }
        if self.cond_width == 0 || self.max_frames == 0 || self.mlp_ratio == 0 {
            return Err(SabrError::Config(
                "cond_width, max_frames and mlp_ratio must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn motion_dim(&self) -> usize {
        self.group_dims.iter().sum()
    }

    pub fn groups(&self) -> usize {
        self.group_dims.len()
    }

    /// Closed-form parameter count.
    pub fn param_count(&self) -> usize {
        let d = self.width;
        let dc = self.cond_width;
        let dm = self.motion_dim();
        let g = self.groups();
        let hidden = self.mlp_ratio * d;
        let lin = |i: usize, o: usize| i * o + o;
        let embed = dm * d + g * d + g * d;
        let time = lin(d, d) + lin(d, d);
        let cond_norm = 2 * dc;
        let block = lin(d, 9 * d)
            + 4 * lin(d, d)
            + 2 * lin(d, d)
            + 2 * lin(dc, d)
            + lin(d, hidden)
            + lin(hidden, d);
        let final_layer = lin(d, 2 * d) + d * dm + dm;
        embed + time + cond_norm + self.blocks * block + final_layer
    }
}
