use nalgebra::{Matrix2xX, Matrix3, Matrix3xX, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SabrError};

/// Pinhole intrinsics in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        CameraIntrinsics {
            focal: 700.0,
            cx: 184.0,
            cy: 320.0,
            width: 368.0,
            height: 640.0,
        }
    }
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<()> {
        if !(self.focal > 0.0)
            || !(0.0..=self.width).contains(&self.cx)
            || !(0.0..=self.height).contains(&self.cy)
        {
            return Err(SabrError::Config(format!("invalid intrinsics {self:?}")));
        }
        Ok(())
    }

    /// Scene point at `depth` that projects to pixel `(u, v)`.
    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> Vector3<f64> {
        Vector3::new(
            (u - self.cx) * depth / self.focal,
            (v - self.cy) * depth / self.focal,
            depth,
        )
    }
}

/// Extrinsics; the climbing world always uses `R = I`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraPose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl CameraPose {
    pub fn from_translation(t: Vector3<f64>) -> Self {
        CameraPose {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }
}

/// Normalized image box `[x, y, w, h]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn validate(&self) -> Result<()> {
        let ok = self.x >= 0.0
            && self.y >= 0.0
            && self.w > 0.0
            && self.h > 0.0
            && self.x + self.w <= 1.0 + 1e-6
            && self.y + self.h <= 1.0 + 1e-6;
        if !ok {
            return Err(SabrError::Geometry(format!(
                "invalid bounding box {self:?}"
            )));
        }
        Ok(())
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + 0.5 * self.w, self.y + 0.5 * self.h)
    }

    /// Tight box around pixel points, grown by `margin` times its extent on
    /// every side, in normalized coordinates (not clamped).
    pub fn around(points: &Matrix2xX<f64>, k: &CameraIntrinsics, margin: f64) -> Self {
        let (x0, x1) = (points.row(0).min(), points.row(0).max());
        let (y0, y1) = (points.row(1).min(), points.row(1).max());
        let (mx, my) = (margin * (x1 - x0), margin * (y1 - y0));
        BoundingBox {
            x: (x0 - mx) / k.width,
            y: (y0 - my) / k.height,
            w: (x1 - x0 + 2.0 * mx) / k.width,
            h: (y1 - y0 + 2.0 * my) / k.height,
        }
    }

    /// Clamp into the unit square, keeping a minimal positive extent.
    pub fn clamped(&self) -> Self {
        const MIN_EXTENT: f64 = 1e-3;
        let x = self.x.clamp(0.0, 1.0 - MIN_EXTENT);
        let y = self.y.clamp(0.0, 1.0 - MIN_EXTENT);
        let w = self.w.clamp(MIN_EXTENT, 1.0 - x);
        let h = self.h.clamp(MIN_EXTENT, 1.0 - y);
        BoundingBox { x, y, w, h }
    }

    /// Whether a pixel lies inside the box.
    pub fn contains_pixel(&self, p: Vector2<f64>, k: &CameraIntrinsics) -> bool {
        let (u, v) = (p.x / k.width, p.y / k.height);
        u >= self.x - 1e-9
            && u <= self.x + self.w + 1e-9
            && v >= self.y - 1e-9
            && v <= self.y + self.h + 1e-9
    }
}

/// `x = Π(K(RX + t))`.
pub fn project(
    points: &Matrix3xX<f64>,
    k: &CameraIntrinsics,
    pose: &CameraPose,
) -> Result<Matrix2xX<f64>> {
    let mut out = Matrix2xX::zeros(points.ncols());
    for (i, p) in points.column_iter().enumerate() {
        let c = pose.rotation * p + pose.translation;
        if !(c.z > 1e-6) {
            return Err(SabrError::BehindCamera {
                index: i,
                depth: c.z,
            });
        }
        out[(0, i)] = k.focal * c.x / c.z + k.cx;
        out[(1, i)] = k.focal * c.y / c.z + k.cy;
    }
    Ok(out)
}

/// Lifts a local camera offset `π` and a box into a full translation: depth
/// from box height, lateral offsets relative to the box center.
pub fn cam_from_box(
    pi: &Vector3<f64>,
    b: &BoundingBox,
    k: &CameraIntrinsics,
) -> Result<CameraPose> {
    if !(b.h > 0.0) {
        return Err(SabrError::DegenerateBox(b.h));
    }
    if !(pi.z > 0.0) {
        return Err(SabrError::Geometry(format!(
            "camera depth parameter {} must be positive",
            pi.z
        )));
    }
    let z = pi.z / b.h;
    let (bx, by) = b.center();
    let tx = pi.x + (bx - k.cx / k.width) * z * k.width / k.focal;
    let ty = pi.y + (by - k.cy / k.height) * z * k.height / k.focal;
    Ok(CameraPose::from_translation(Vector3::new(tx, ty, z)))
}

/// Inverse of [`cam_from_box`]: the `π` that reproduces translation `t`.
pub fn box_to_pi(t: &Vector3<f64>, b: &BoundingBox, k: &CameraIntrinsics) -> Vector3<f64> {
    let z = t.z;
    let (bx, by) = b.center();
    Vector3::new(
        t.x - (bx - k.cx / k.width) * z * k.width / k.focal,
        t.y - (by - k.cy / k.height) * z * k.height / k.focal,
        z * b.h,
    )
}
