use serde::{Deserialize, Serialize};

use super::wall::{Route, Wall, APPEARANCE_CLASSES, SIZE_CLASSES, TEXTURES};
use super::WorldConfig;
use crate::error::{Result, SabrError};
use crate::geometry::CameraIntrinsics;
use crate::tensor::RngStream;

/// Per-cell channels: presence, size, appearance, offset x, offset y.
const CELL_CHANNELS: usize = 5;

/// Raw patch descriptor length for `patch_cells`² cells plus the texture id.
pub fn descriptor_len(patch_cells: usize) -> usize {
    CELL_CHANNELS * patch_cells * patch_cells + 1
}

/// Environment and context frames as raw patch descriptors. The camera and
/// wall are static, so one environment frame is stored and repeated
/// `env_frames` times.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyVideo {
    pub env: Vec<Vec<f64>>,
    pub ctx: Vec<Vec<Vec<f64>>>,
    pub env_frames: usize,
    pub grid: (usize, usize),
    pub fps: f64,
    pub resolution: (f64, f64),
}

/// Which route holds context frames show: a seeded ordering of the route,
/// of which the first `ceil(fraction·n)` (at least one) are visible.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextMask {
    pub seed: u64,
    pub fraction: f64,
}

impl ToyVideo {
    pub fn build(
        wall: &Wall,
        route: &Route,
        cfg: &WorldConfig,
        k: &CameraIntrinsics,
        env_frames: usize,
        mask: ContextMask,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&mask.fraction) {
            return Err(SabrError::Config(format!(
                "context fraction {} outside [0, 1]",
                mask.fraction
            )));
        }
        let mut order = route.holds.clone();
        RngStream::new(mask.seed).shuffle(&mut order);
        let shown = ((mask.fraction * order.len() as f64).ceil() as usize).clamp(1, order.len());
        let visible = &order[..shown];
        let env = frame(wall, cfg, |_| true);
        let ctx_frame = frame(wall, cfg, |id| visible.contains(&id));
        Ok(ToyVideo {
            env,
            ctx: vec![ctx_frame; cfg.ctx_frames],
            env_frames,
            grid: cfg.patch_grid(),
            fps: cfg.fps,
            resolution: (k.width, k.height),
        })
    }

    pub fn patches(&self) -> usize {
        self.grid.0 * self.grid.1
    }

    pub fn descriptor_len(&self) -> usize {
        self.env.first().map_or(0, Vec::len)
    }
}

/// Patch descriptors of one frame, patches row-major from the top-left,
/// showing only the holds accepted by `keep`. Values are kept
/// representable in f32 so stored videos read back exactly.
fn frame(wall: &Wall, cfg: &WorldConfig, keep: impl Fn(usize) -> bool) -> Vec<Vec<f64>> {
    let pc = cfg.patch_cells;
    let (gc, gr) = cfg.patch_grid();
    let mut out = Vec::with_capacity(gc * gr);
    for pr in 0..gr {
        for pcol in 0..gc {
            let mut d = Vec::with_capacity(descriptor_len(pc));
            for cr in 0..pc {
                for cc in 0..pc {
                    let col = pcol * pc + cc;
                    let row = wall.rows - 1 - (pr * pc + cr);
                    match wall.hold_at(col, row).filter(|h| keep(h.id)) {
                        Some(h) => d.extend([
                            1.0,
                            (h.size + 1) as f64 / SIZE_CLASSES as f64,
                            (h.appearance + 1) as f64 / APPEARANCE_CLASSES as f64,
                            h.offset.0,
                            h.offset.1,
                        ]),
                        None => d.extend([0.0; CELL_CHANNELS]),
                    }
                }
            }
            d.push((wall.texture + 1) as f64 / TEXTURES as f64);
            out.push(d.into_iter().map(|v| v as f32 as f64).collect());
        }
    }
    out
}
