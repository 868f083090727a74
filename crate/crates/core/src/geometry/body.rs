//! Reduced parametric body: linear shape blendshapes, a kinematic tree with
//! single-joint rigid skinning and a fixed linear keypoint regressor.

use nalgebra::{DMatrix, Matrix3, Matrix3xX, Vector3};
use serde::{Deserialize, Serialize};

use super::rotation::is_rotation;
use crate::error::{Result, SabrError};

pub const SHAPE_DIM: usize = 10;
pub const SHAPE_CLAMP: f64 = 5.0;

/// One two-segment limb: upper joint, lower joint, end-effector keypoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Limb {
    pub upper: usize,
    pub lower: usize,
    pub tip: usize,
}

/// Body template, stored as plain row-major arrays so it can live inside a
/// JSON manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BodySpec {
    pub n_vertices: usize,
    pub n_joints: usize,
    pub n_keypoints: usize,
    pub shape_dim: usize,
    /// 3×N, row-major.
    pub template: Vec<f64>,
    /// S×3×N: blendshape `s` occupies `[s*3*N, (s+1)*3*N)`.
    pub shape_basis: Vec<f64>,
    /// N×k, row-major. Columns are convex weights.
    pub joint_regressor: Vec<f64>,
    /// Parent of each joint; the root is its own parent.
    pub parents: Vec<usize>,
    /// N×J one-hot rows (single-joint binding).
    pub bind_weights: Vec<f64>,
    /// Keypoint whose rest position is each joint's pivot.
    pub joint_pivot: Vec<usize>,
    pub limbs: Vec<Limb>,
    /// Keypoint pairs drawn as the skeleton polyline.
    pub skeleton: Vec<(usize, usize)>,
}

/// Shape coefficients β.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeParams(pub Vec<f64>);

impl ShapeParams {
    pub fn zeros(dim: usize) -> Self {
        ShapeParams(vec![0.0; dim])
    }

    pub fn clamped(&self) -> Self {
        ShapeParams(
            self.0
                .iter()
                .map(|b| b.clamp(-SHAPE_CLAMP, SHAPE_CLAMP))
                .collect(),
        )
    }
}

/// Joint rotations θ; index 0 is the global orientation.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseParams {
    pub rotations: Vec<Matrix3<f64>>,
}

impl PoseParams {
    pub fn identity(n_joints: usize) -> Self {
        PoseParams {
            rotations: vec![Matrix3::identity(); n_joints],
        }
    }

    pub fn global(&self) -> &Matrix3<f64> {
        &self.rotations[0]
    }

    pub fn body(&self) -> &[Matrix3<f64>] {
        &self.rotations[1..]
    }
}

// Rest layout of the default climber (meters; x right, y down, planar).
const TORSO: [(f64, f64); 8] = [
    (-0.10, 0.00),
    (0.10, 0.00),
    (-0.14, -0.25),
    (0.14, -0.25),
    (-0.18, -0.50),
    (0.18, -0.50),
    (0.00, -0.55),
    (0.00, -0.75),
];
const HEAD_VERTEX: usize = 7;

impl BodySpec {
    /// The default 32-vertex, 9-joint, 14-keypoint climber.
    pub fn climber() -> Self {
        let mut verts: Vec<(f64, f64, usize)> = TORSO.iter().map(|&(x, y)| (x, y, 0)).collect();
        // (x, y_start, y_end, joint) for each limb segment, 3 vertices each
        let segments = [
            (-0.18, -0.50, -0.20, 1),
            (-0.18, -0.20, 0.10, 2),
            (0.18, -0.50, -0.20, 3),
            (0.18, -0.20, 0.10, 4),
            (-0.10, 0.00, 0.42, 5),
            (-0.10, 0.42, 0.84, 6),
            (0.10, 0.00, 0.42, 7),
            (0.10, 0.42, 0.84, 8),
        ];
        for &(x, y0, y1, j) in &segments {
            for s in 0..3 {
                verts.push((x, y0 + (y1 - y0) * s as f64 / 2.0, j));
            }
        }
        let n = verts.len();
        let n_joints = 9;

        let mut template = vec![0.0; 3 * n];
        for (i, &(x, y, _)) in verts.iter().enumerate() {
            template[i] = x;
            template[n + i] = y;
        }

        let mut bind_weights = vec![0.0; n * n_joints];
        for (i, &(_, _, j)) in verts.iter().enumerate() {
            bind_weights[i * n_joints + j] = 1.0;
        }

        // keypoints as averages of coincident vertices
        let keypoint_vertices: [&[usize]; 14] = [
            &[0, 1],   // pelvis
            &[4, 8],   // left shoulder
            &[10, 11], // left elbow
            &[13],     // left hand
            &[5, 14],  // right shoulder
            &[16, 17], // right elbow
            &[19],     // right hand
            &[0, 20],  // left hip
            &[22, 23], // left knee
            &[25],     // left foot
            &[1, 26],  // right hip
            &[28, 29], // right knee
            &[31],     // right foot
            &[HEAD_VERTEX],
        ];
        let k = keypoint_vertices.len();
        let mut joint_regressor = vec![0.0; n * k];
        for (c, vs) in keypoint_vertices.iter().enumerate() {
            for &v in vs.iter() {
                joint_regressor[v * k + c] = 1.0 / vs.len() as f64;
            }
        }

        // blendshapes as functions of rest position and bound joint, so
        // coincident vertices always move together
        let mut shape_basis = vec![0.0; SHAPE_DIM * 3 * n];
        for (i, &(x, y, j)) in verts.iter().enumerate() {
            let arm = (1..=4).contains(&j);
            let leg = (5..=8).contains(&j);
            let sx = if x.abs() > 0.05 { x.signum() } else { 0.0 };
            let disp: [(f64, f64); SHAPE_DIM] = [
                (0.05 * x, 0.05 * y),
                (0.0, if arm { 0.05 * (y + 0.5) } else { 0.0 }),
                (0.0, if leg { 0.05 * y } else { 0.0 }),
                (
                    if arm || (j == 0 && y <= -0.4) {
                        0.03 * sx
                    } else {
                        0.0
                    },
                    0.0,
                ),
                (
                    if leg || (j == 0 && y >= -0.05) {
                        0.02 * sx
                    } else {
                        0.0
                    },
                    0.0,
                ),
                (
                    0.0,
                    if arm || (j == 0 && y < -0.1) {
                        -0.04
                    } else {
                        0.0
                    },
                ),
                (0.0, if i == HEAD_VERTEX { -0.03 } else { 0.0 }),
                (0.01 * y, 0.0),
                (0.0, 0.02 * x * x),
                (0.01 * x, -0.01 * y),
            ];
            for (s, &(dx, dy)) in disp.iter().enumerate() {
                shape_basis[s * 3 * n + i] = dx;
                shape_basis[s * 3 * n + n + i] = dy;
            }
        }

        BodySpec {
            n_vertices: n,
            n_joints,
            n_keypoints: k,
            shape_dim: SHAPE_DIM,
            template,
            shape_basis,
            joint_regressor,
            parents: vec![0, 0, 1, 0, 3, 0, 5, 0, 7],
            bind_weights,
            joint_pivot: vec![0, 1, 2, 4, 5, 7, 8, 10, 11],
            limbs: vec![
                Limb {
                    upper: 1,
                    lower: 2,
                    tip: 3,
                },
                Limb {
                    upper: 3,
                    lower: 4,
                    tip: 6,
                },
                Limb {
                    upper: 5,
                    lower: 6,
                    tip: 9,
                },
                Limb {
                    upper: 7,
                    lower: 8,
                    tip: 12,
                },
            ],
            skeleton: vec![
                (1, 4),
                (7, 10),
                (1, 7),
                (4, 10),
                (1, 2),
                (2, 3),
                (4, 5),
                (5, 6),
                (7, 8),
                (8, 9),
                (10, 11),
                (11, 12),
                (1, 13),
                (4, 13),
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (n, j, k, s) = (
            self.n_vertices,
            self.n_joints,
            self.n_keypoints,
            self.shape_dim,
        );
        let dims_ok = self.template.len() == 3 * n
            && self.shape_basis.len() == s * 3 * n
            && self.joint_regressor.len() == n * k
            && self.parents.len() == j
            && self.bind_weights.len() == n * j
            && self.joint_pivot.len() == j;
        if !dims_ok {
            return Err(SabrError::Dimension(
                "body spec arrays disagree with declared sizes".into(),
            ));
        }
        for c in 0..k {
            let col: Vec<f64> = (0..n).map(|v| self.joint_regressor[v * k + c]).collect();
            if col.iter().any(|&w| w < 0.0) || (col.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(SabrError::Geometry(format!(
                    "regressor column {c} is not convex"
                )));
            }
        }
        if self.parents[0] != 0 || (1..j).any(|i| self.parents[i] >= i) {
            return Err(SabrError::Geometry(
                "parents must form a tree rooted at joint 0".into(),
            ));
        }
        for v in 0..n {
            let row = &self.bind_weights[v * j..(v + 1) * j];
            if (row.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(SabrError::Geometry(format!(
                    "bind weights of vertex {v} do not sum to 1"
                )));
            }
        }
        if self.joint_pivot.iter().any(|&p| p >= k) {
            return Err(SabrError::Geometry(
                "joint pivot refers to a missing keypoint".into(),
            ));
        }
        Ok(())
    }

    pub fn template_mesh(&self) -> Matrix3xX<f64> {
        Matrix3xX::from_row_slice(&self.template)
    }

    pub fn basis(&self, s: usize) -> Matrix3xX<f64> {
        let n = self.n_vertices;
        Matrix3xX::from_row_slice(&self.shape_basis[s * 3 * n..(s + 1) * 3 * n])
    }

    pub fn regressor(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n_vertices, self.n_keypoints, &self.joint_regressor)
    }

    /// Joint each vertex is rigidly bound to.
    pub fn vertex_joint(&self, v: usize) -> usize {
        let row = &self.bind_weights[v * self.n_joints..(v + 1) * self.n_joints];
        row.iter()
            .enumerate()
            .fold(
                (0, f64::MIN),
                |best, (j, &w)| if w > best.1 { (j, w) } else { best },
            )
            .0
    }
}

/// Template plus linear blendshape sum.
pub fn shape_mesh(spec: &BodySpec, beta: &ShapeParams) -> Result<Matrix3xX<f64>> {
    if beta.0.len() != spec.shape_dim {
        return Err(SabrError::Dimension(format!(
            "shape has {} coefficients, body expects {}",
            beta.0.len(),
            spec.shape_dim
        )));
    }
    let n = spec.n_vertices;
    let mut m = spec.template.clone();
    for (s, &b) in beta.0.iter().enumerate() {
        if b == 0.0 {
            continue;
        }
        let basis = &spec.shape_basis[s * 3 * n..(s + 1) * 3 * n];
        m.iter_mut().zip(basis).for_each(|(v, &d)| *v += b * d);
    }
    Ok(Matrix3xX::from_row_slice(&m))
}

/// `X = M·W`.
pub fn regress_joints(mesh: &Matrix3xX<f64>, w: &DMatrix<f64>) -> Result<Matrix3xX<f64>> {
    if mesh.ncols() != w.nrows() {
        return Err(SabrError::Dimension(format!(
            "mesh has {} vertices, regressor has {} rows",
            mesh.ncols(),
            w.nrows()
        )));
    }
    let x = mesh * w;
    Ok(Matrix3xX::from_column_slice(x.as_slice()))
}

/// World transform (rotation, translation) of every joint.
pub fn joint_transforms(
    spec: &BodySpec,
    pose: &PoseParams,
    rest: &Matrix3xX<f64>,
) -> Result<Vec<(Matrix3<f64>, Vector3<f64>)>> {
    if pose.rotations.len() != spec.n_joints {
        return Err(SabrError::Dimension(format!(
            "pose has {} rotations, body has {} joints",
            pose.rotations.len(),
            spec.n_joints
        )));
    }
    for (j, r) in pose.rotations.iter().enumerate() {
        if !is_rotation(r, 1e-5) {
            return Err(SabrError::Geometry(format!(
                "joint {j} block is not a rotation"
            )));
        }
    }
    let keypoints = regress_joints(rest, &spec.regressor())?;
    let mut out: Vec<(Matrix3<f64>, Vector3<f64>)> = Vec::with_capacity(spec.n_joints);
    // the root rotates about the body origin
    out.push((pose.rotations[0], Vector3::zeros()));
    for j in 1..spec.n_joints {
        let (rp, tp) = out[spec.parents[j]];
        let r = pose.rotations[j];
        let p: Vector3<f64> = keypoints.column(spec.joint_pivot[j]).into();
        out.push((rp * r, rp * (p - r * p) + tp));
    }
    Ok(out)
}

/// Forward kinematics with single-joint rigid skinning.
pub fn pose_mesh(
    spec: &BodySpec,
    pose: &PoseParams,
    rest: &Matrix3xX<f64>,
) -> Result<Matrix3xX<f64>> {
    let transforms = joint_transforms(spec, pose, rest)?;
    let mut out = rest.clone();
    for v in 0..spec.n_vertices {
        let (r, t) = transforms[spec.vertex_joint(v)];
        let p: Vector3<f64> = rest.column(v).into();
        out.set_column(v, &(r * p + t));
    }
    Ok(out)
}

/// Keypoints of the posed, shaped body in its local frame.
pub fn body_keypoints(
    spec: &BodySpec,
    pose: &PoseParams,
    beta: &ShapeParams,
) -> Result<Matrix3xX<f64>> {
    let rest = shape_mesh(spec, beta)?;
    let posed = pose_mesh(spec, pose, &rest)?;
    regress_joints(&posed, &spec.regressor())
}
