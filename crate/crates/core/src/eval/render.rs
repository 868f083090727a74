use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Matrix3xX;

use crate::error::{Result, SabrError};
use crate::geometry::{
    body_keypoints, cam_from_box, project, BodySpec, CameraIntrinsics, ShapeParams,
};
use crate::model::{MotionFrame, NormStats};
use crate::world::{Route, Wall};

/// Files written by [`render_svg`] and the keypoints left out of each frame.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderReport {
    pub files: Vec<PathBuf>,
    /// (frame, keypoint) pairs that could not be projected.
    pub omitted: Vec<(usize, usize)>,
}

pub fn frame_file(i: usize) -> String {
    format!("frame_{i:05}.svg")
}

/// Mean shape coefficients of the normalization statistics.
pub fn mean_shape(stats: &NormStats, spec: &BodySpec) -> Result<ShapeParams> {
    let s = 9 * spec.n_joints;
    let v = stats.mean.get(s..s + spec.shape_dim).ok_or_else(|| {
        SabrError::Dimension(format!(
            "statistics of width {} hold no shape block",
            stats.dim()
        ))
    })?;
    Ok(ShapeParams(v.to_vec()))
}

/// Projected keypoints of one frame drawn with `beta`; `None` for keypoints
/// behind the camera.
pub fn frame_keypoints(
    frame: &MotionFrame,
    spec: &BodySpec,
    beta: &ShapeParams,
    k: &CameraIntrinsics,
) -> Result<Vec<Option<(f64, f64)>>> {
    let kp = body_keypoints(spec, &frame.pose, beta)?;
    let cam = cam_from_box(&frame.cam, &frame.bbox, k)?;
    Ok(kp
        .column_iter()
        .map(|c| {
            let p = project(&Matrix3xX::from_columns(&[c.into_owned()]), k, &cam).ok()?;
            Some((p[(0, 0)], p[(1, 0)]))
        })
        .collect())
}

/// One SVG document: wall grid, holds with the route highlighted, the
/// predicted box and the skeleton.
pub fn render_frame(
    frame: &MotionFrame,
    wall: &Wall,
    route: &Route,
    spec: &BodySpec,
    beta: &ShapeParams,
    k: &CameraIntrinsics,
) -> Result<(String, Vec<usize>)> {
    let (w, h) = (k.width, k.height);
    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(
        s,
        r##"<rect x="0" y="0" width="{w}" height="{h}" fill="#f3eee4"/>"##
    );

    let x0 = 0.5 * (w - wall.cols as f64 * wall.cell_px);
    let y0 = 0.5 * (h - wall.rows as f64 * wall.cell_px);
    let (x1, y1) = (
        x0 + wall.cols as f64 * wall.cell_px,
        y0 + wall.rows as f64 * wall.cell_px,
    );
    let _ = writeln!(s, r##"<g stroke="#cfc6b8" stroke-width="0.5">"##);
    for c in 0..=wall.cols {
        let x = x0 + c as f64 * wall.cell_px;
        let _ = writeln!(
            s,
            r#"<line x1="{x:.2}" y1="{y0:.2}" x2="{x:.2}" y2="{y1:.2}"/>"#
        );
    }
    for r in 0..=wall.rows {
        let y = y0 + r as f64 * wall.cell_px;
        let _ = writeln!(
            s,
            r#"<line x1="{x0:.2}" y1="{y:.2}" x2="{x1:.2}" y2="{y:.2}"/>"#
        );
    }
    let _ = writeln!(s, "</g>");

    let _ = writeln!(s, "<g>");
    for hold in &wall.holds {
        let (hx, hy) = wall.pixel(hold, k);
        let r = 0.15 * wall.cell_px * (1.0 + hold.size as f64 * 0.5);
        let fill = if route.holds.contains(&hold.id) {
            "#d62728"
        } else {
            "#8c8c8c"
        };
        let _ = writeln!(
            s,
            r#"<circle cx="{hx:.2}" cy="{hy:.2}" r="{r:.2}" fill="{fill}"/>"#
        );
    }
    let _ = writeln!(s, "</g>");

    let b = frame.bbox;
    let _ = writeln!(
        s,
        r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#1f77b4" stroke-width="1"/>"##,
        b.x * w,
        b.y * h,
        b.w * w,
        b.h * h
    );

    let pts = frame_keypoints(frame, spec, beta, k)?;
    let omitted: Vec<usize> = pts
        .iter()
        .enumerate()
        .filter(|(_, p)| p.is_none())
        .map(|(i, _)| i)
        .collect();
    let _ = writeln!(
        s,
        r##"<g stroke="#222222" stroke-width="2" fill="none" stroke-linecap="round">"##
    );
    for &(a, c) in &spec.skeleton {
        if let (Some(Some(p)), Some(Some(q))) = (pts.get(a), pts.get(c)) {
            let _ = writeln!(
                s,
                r#"<polyline points="{:.2},{:.2} {:.2},{:.2}"/>"#,
                p.0, p.1, q.0, q.1
            );
        }
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r##"<g fill="#222222">"##);
    for p in pts.iter().flatten() {
        let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="2.5"/>"#, p.0, p.1);
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, "</svg>");
    Ok((s, omitted))
}

/// Writes `frame_{i:05}.svg` for every frame into `dir`.
pub fn render_svg(
    frames: &[MotionFrame],
    wall: &Wall,
    route: &Route,
    spec: &BodySpec,
    beta: &ShapeParams,
    k: &CameraIntrinsics,
    dir: &Path,
) -> Result<RenderReport> {
    fs::create_dir_all(dir).map_err(|e| SabrError::io(dir, e))?;
    let mut files = Vec::with_capacity(frames.len());
    let mut omitted = Vec::new();
    for (i, f) in frames.iter().enumerate() {
        let (svg, missing) = render_frame(f, wall, route, spec, beta, k)?;
        let path = dir.join(frame_file(i));
        fs::write(&path, svg).map_err(|e| SabrError::io(&path, e))?;
        omitted.extend(missing.into_iter().map(|j| (i, j)));
        files.push(path);
    }
    Ok(RenderReport { files, omitted })
}
