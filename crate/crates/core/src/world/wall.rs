use serde::{Deserialize, Serialize};

use super::WorldConfig;
use crate::error::{Result, SabrError};
use crate::geometry::CameraIntrinsics;
use crate::tensor::RngStream;

pub const SIZE_CLASSES: u8 = 3;
pub const APPEARANCE_CLASSES: u8 = 4;
pub const TEXTURES: u8 = 5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hold {
    pub id: usize,
    pub col: usize,
    /// Counted from the bottom row.
    pub row: usize,
    /// Position inside the cell, each coordinate in [0, 1].
    pub offset: (f64, f64),
    pub size: u8,
    pub appearance: u8,
}

/// A grid of cells with at most one hold per cell, laid out in pixel space
/// and centered in the image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Wall {
    pub cols: usize,
    pub rows: usize,
    pub cell_px: f64,
    pub texture: u8,
    pub holds: Vec<Hold>,
}

/// Ordered hold ids, bottom to top.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Route {
    pub holds: Vec<usize>,
}

impl Wall {
    pub fn hold(&self, id: usize) -> Result<&Hold> {
        self.holds
            .get(id)
            .ok_or_else(|| SabrError::Index(format!("hold {id} not on the wall")))
    }

    /// Hold position in cell units (x right, y up from the wall's bottom).
    pub fn cell_position(&self, h: &Hold) -> (f64, f64) {
        (h.col as f64 + h.offset.0, h.row as f64 + h.offset.1)
    }

    /// Hold center in pixels (y down).
    pub fn pixel(&self, h: &Hold, k: &CameraIntrinsics) -> (f64, f64) {
        let x0 = 0.5 * (k.width - self.cols as f64 * self.cell_px);
        let y_bottom = 0.5 * (k.height + self.rows as f64 * self.cell_px);
        let (cx, cy) = self.cell_position(h);
        (x0 + cx * self.cell_px, y_bottom - cy * self.cell_px)
    }

    pub fn hold_at(&self, col: usize, row: usize) -> Option<&Hold> {
        self.holds.iter().find(|h| h.col == col && h.row == row)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for (i, h) in self.holds.iter().enumerate() {
            if h.id != i || h.col >= self.cols || h.row >= self.rows || !seen.insert((h.col, h.row))
            {
                return Err(SabrError::Generation(format!("malformed hold {h:?}")));
            }
        }
        if !self.holds.iter().any(|h| h.row == 0)
            || !self.holds.iter().any(|h| h.row + 1 == self.rows)
        {
            return Err(SabrError::Generation(
                "wall needs holds in its bottom and top rows".into(),
            ));
        }
        Ok(())
    }
}

fn random_hold(id: usize, col: usize, row: usize, rng: &mut RngStream) -> Hold {
    Hold {
        id,
        col,
        row,
        offset: (rng.uniform_range(0.25, 0.75), rng.uniform_range(0.25, 0.75)),
        size: rng.int_inclusive(0, SIZE_CLASSES as usize - 1) as u8,
        appearance: rng.int_inclusive(0, APPEARANCE_CLASSES as usize - 1) as u8,
    }
}

/// Places a hold in each cell with probability `hold_density`, forcing at
/// least one hold into the bottom and top rows.
pub fn gen_wall(cfg: &WorldConfig, rng: &mut RngStream) -> Wall {
    let mut holds = Vec::new();
    for row in 0..cfg.rows {
        let mut any = false;
        let forced = if row == 0 || row + 1 == cfg.rows {
            Some(rng.int_inclusive(0, cfg.cols - 1))
        } else {
            None
        };
        for col in 0..cfg.cols {
            let place = rng.uniform() < cfg.hold_density;
            let last_chance = forced == Some(col) && !any;
            if place || last_chance {
                any = true;
                holds.push(random_hold(holds.len(), col, row, rng));
            }
        }
    }
    Wall {
        cols: cfg.cols,
        rows: cfg.rows,
        cell_px: cfg.cell_px,
        texture: rng.int_inclusive(0, TEXTURES as usize - 1) as u8,
        holds,
    }
}

fn dist(w: &Wall, a: &Hold, b: &Hold) -> f64 {
    let (ax, ay) = w.cell_position(a);
    let (bx, by) = w.cell_position(b);
    (ax - bx).hypot(ay - by)
}

/// Randomized upward chaining with backtracking: starts in the bottom two
/// rows, climbs `min_row_step..=max_row_step` rows per hold within
/// `reach_cells`, and ends in the top row.
pub fn gen_route(wall: &Wall, cfg: &WorldConfig, rng: &mut RngStream) -> Result<Route> {
    const RESTARTS: usize = 100;
    let top = wall.rows - 1;
    let mut starts: Vec<usize> = wall
        .holds
        .iter()
        .filter(|h| h.row <= 1)
        .map(|h| h.id)
        .collect();
    if starts.is_empty() {
        return Err(SabrError::Generation("no start holds".into()));
    }
    for _ in 0..RESTARTS {
        rng.shuffle(&mut starts);
        let mut budget = 10_000usize;
        let mut path = vec![starts[0]];
        if extend(wall, cfg, top, &mut path, rng, &mut budget) {
            return Ok(Route { holds: path });
        }
    }
    Err(SabrError::Generation(
        "no feasible route on this wall".into(),
    ))
}

fn extend(
    wall: &Wall,
    cfg: &WorldConfig,
    top: usize,
    path: &mut Vec<usize>,
    rng: &mut RngStream,
    budget: &mut usize,
) -> bool {
    if *budget == 0 {
        return false;
    }
    *budget -= 1;
    let cur = wall.holds[*path.last().unwrap()];
    if cur.row == top {
        return path.len() >= cfg.min_route_len;
    }
    let mut next: Vec<usize> = wall
        .holds
        .iter()
        .filter(|h| {
            let step = h.row as isize - cur.row as isize;
            step >= cfg.min_row_step as isize
                && step <= cfg.max_row_step as isize
                && dist(wall, &cur, h) <= cfg.reach_cells
        })
        .map(|h| h.id)
        .collect();
    rng.shuffle(&mut next);
    for n in next {
        path.push(n);
        if extend(wall, cfg, top, path, rng, budget) {
            return true;
        }
        path.pop();
    }
    false
}

/// Checks the route invariants against its wall.
pub fn validate_route(wall: &Wall, route: &Route, cfg: &WorldConfig) -> Result<()> {
    let hs: Vec<&Hold> = route
        .holds
        .iter()
        .map(|&id| wall.hold(id))
        .collect::<Result<_>>()?;
    if hs.len() < cfg.min_route_len {
        return Err(SabrError::Generation(format!(
            "route of {} holds is too short",
            hs.len()
        )));
    }
    if hs[0].row > 1 || hs.last().unwrap().row + 1 != wall.rows {
        return Err(SabrError::Generation(
            "route must start in the bottom two rows and end in the top row".into(),
        ));
    }
    for w in hs.windows(2) {
        if dist(wall, w[0], w[1]) > cfg.reach_cells + 1e-12 {
            return Err(SabrError::Generation(format!(
                "holds {} and {} are out of reach",
                w[0].id, w[1].id
            )));
        }
    }
    Ok(())
}
