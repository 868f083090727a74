use nalgebra::{Matrix2xX, Matrix3xX, Vector2, Vector3};

use super::wall::{Route, Wall};
use super::WorldConfig;
use crate::error::{Result, SabrError};
use crate::geometry::{
    body_keypoints, box_to_pi, project, regress_joints, rot_z, shape_mesh, BodySpec, BoundingBox,
    CameraIntrinsics, CameraPose, PoseParams, ShapeParams,
};
use crate::model::MotionFrame;

/// End effectors in limb order: left hand, right hand, left foot, right foot.
pub const EFFECTORS: usize = 4;

const LEAN_LIMIT: f64 = 0.3;
const MAX_REACH: f64 = 0.97;
const MIN_REACH: f64 = 0.2;
// knees and elbows bend outward: sign of the cross product chord × upper
const BEND: [f64; EFFECTORS] = [-1.0, 1.0, 1.0, -1.0];

/// Ground-truth motion plus, for each frame, the hold each effector rests
/// on (`None` while it travels).
#[derive(Clone, Debug)]
pub struct OracleMotion {
    pub frames: Vec<MotionFrame>,
    pub contacts: Vec<[Option<usize>; EFFECTORS]>,
    pub moves: usize,
}

/// Shaped rest geometry of the four limbs in the body frame.
struct Rig {
    anchor: [Vector2<f64>; EFFECTORS],
    upper_len: [f64; EFFECTORS],
    lower_len: [f64; EFFECTORS],
    upper_angle: [f64; EFFECTORS],
    lower_angle: [f64; EFFECTORS],
    joints: [(usize, usize); EFFECTORS],
}

fn xy(m: &Matrix3xX<f64>, c: usize) -> Vector2<f64> {
    Vector2::new(m[(0, c)], m[(1, c)])
}

fn angle(v: Vector2<f64>) -> f64 {
    v.y.atan2(v.x)
}

fn rot2(a: f64) -> nalgebra::Matrix2<f64> {
    let (s, c) = a.sin_cos();
    nalgebra::Matrix2::new(c, -s, s, c)
}

impl Rig {
    fn new(spec: &BodySpec, beta: &ShapeParams) -> Result<Self> {
        if spec.limbs.len() != EFFECTORS {
            return Err(SabrError::Geometry(format!(
                "planner needs 4 limbs, body has {}",
                spec.limbs.len()
            )));
        }
        let rest = regress_joints(&shape_mesh(spec, beta)?, &spec.regressor())?;
        let mut rig = Rig {
            anchor: [Vector2::zeros(); EFFECTORS],
            upper_len: [0.0; EFFECTORS],
            lower_len: [0.0; EFFECTORS],
            upper_angle: [0.0; EFFECTORS],
            lower_angle: [0.0; EFFECTORS],
            joints: [(0, 0); EFFECTORS],
        };
        for (i, limb) in spec.limbs.iter().enumerate() {
            let a = xy(&rest, spec.joint_pivot[limb.upper]);
            let b = xy(&rest, spec.joint_pivot[limb.lower]);
            let c = xy(&rest, limb.tip);
            rig.anchor[i] = a;
            rig.upper_len[i] = (b - a).norm();
            rig.lower_len[i] = (c - b).norm();
            rig.upper_angle[i] = angle(b - a);
            rig.lower_angle[i] = angle(c - b);
            rig.joints[i] = (limb.upper, limb.lower);
        }
        Ok(rig)
    }

    fn reach(&self, i: usize) -> f64 {
        self.upper_len[i] + self.lower_len[i]
    }

    /// Body origin and lean that keep every target within reach, by cyclic
    /// projection onto the reach annuli.
    fn solve_root(&self, targets: &[Vector2<f64>; EFFECTORS]) -> Result<(Vector2<f64>, f64)> {
        let hands = 0.5 * (targets[0] + targets[1]);
        let feet = 0.5 * (targets[2] + targets[3]);
        let d = hands - feet;
        let lean = (0.5 * d.x.atan2(-d.y)).clamp(-LEAN_LIMIT, LEAN_LIMIT);
        let r = rot2(lean);
        let mut p = feet + 0.43 * d;
        for _ in 0..500 {
            let mut moved = false;
            for i in 0..EFFECTORS {
                let v = targets[i] - (p + r * self.anchor[i]);
                let dist = v.norm().max(1e-12);
                let (lo, hi) = (MIN_REACH * self.reach(i), MAX_REACH * self.reach(i));
                if dist > hi + 1e-12 {
                    p += v * ((dist - hi) / dist);
                    moved = true;
                } else if dist < lo - 1e-12 {
                    p -= v * ((lo - dist) / dist);
                    moved = true;
                }
            }
            if !moved {
                return Ok((p, lean));
            }
        }
        Err(SabrError::Generation(
            "targets cannot all be reached from one body position".into(),
        ))
    }

    fn pose(
        &self,
        n_joints: usize,
        root: Vector2<f64>,
        lean: f64,
        targets: &[Vector2<f64>; EFFECTORS],
    ) -> PoseParams {
        let mut pose = PoseParams::identity(n_joints);
        pose.rotations[0] = rot_z(lean);
        let r = rot2(lean);
        for i in 0..EFFECTORS {
            let (l1, l2) = (self.upper_len[i], self.lower_len[i]);
            let a = root + r * self.anchor[i];
            let v = targets[i] - a;
            let d = v.norm().clamp((l1 - l2).abs() + 1e-9, l1 + l2 - 1e-9);
            let off = ((l1 * l1 + d * d - l2 * l2) / (2.0 * l1 * d))
                .clamp(-1.0, 1.0)
                .acos();
            let phi1 = angle(v) + BEND[i] * off;
            let elbow = a + l1 * Vector2::new(phi1.cos(), phi1.sin());
            let phi2 = angle(targets[i] - elbow);
            let upper_world = phi1 - self.upper_angle[i];
            let lower_world = phi2 - self.lower_angle[i];
            let (ju, jl) = self.joints[i];
            pose.rotations[ju] = rot_z(upper_world - lean);
            pose.rotations[jl] = rot_z(lower_world - upper_world);
        }
        pose
    }
}

fn smoothstep(s: f64) -> f64 {
    s * s * (3.0 - 2.0 * s)
}

/// Sequence of (effector, destination route index) moves of the ladder
/// gait, with the starting stance (route index per effector).
pub fn plan_moves(wall: &Wall, route: &Route) -> Result<([usize; EFFECTORS], Vec<(usize, usize)>)> {
    let n = route.holds.len();
    if n < 4 {
        return Err(SabrError::Generation(format!(
            "route of {n} holds is too short for the planner"
        )));
    }
    let x = |ri: usize| -> Result<f64> { Ok(wall.cell_position(wall.hold(route.holds[ri])?).0) };
    let pair = |a: usize, b: usize| -> Result<(usize, usize)> {
        Ok(if x(a)? <= x(b)? { (a, b) } else { (b, a) })
    };
    let (lf, rf) = pair(0, 1)?;
    let (lh, rh) = pair(2, 3)?;
    let mut stance = [lh, rh, lf, rf];
    let start = stance;
    let mut moves = Vec::new();
    for next in 4..n {
        let hand = if stance[0] < stance[1] { 0 } else { 1 };
        let vacated = stance[hand];
        stance[hand] = next;
        moves.push((hand, next));
        let foot = if stance[2] < stance[3] { 2 } else { 3 };
        stance[foot] = vacated;
        moves.push((foot, vacated));
    }
    let hand = if stance[0] < stance[1] { 0 } else { 1 };
    moves.push((hand, n - 1));
    Ok((start, moves))
}

/// Stick-figure ladder climb over `route`: feet start on the first two
/// holds and hands on the next two; each move lasts `move_frames` frames
/// with smoothstep easing; rest frames pad both ends.
pub fn oracle_motion(
    wall: &Wall,
    route: &Route,
    spec: &BodySpec,
    k: &CameraIntrinsics,
    beta: &ShapeParams,
    depth: f64,
    cfg: &WorldConfig,
) -> Result<OracleMotion> {
    let (start, moves) = plan_moves(wall, route)?;
    let frames_needed = 2 * cfg.rest_frames + moves.len() * cfg.move_frames;
    if frames_needed > cfg.max_frames {
        return Err(SabrError::Generation(format!(
            "route needs {frames_needed} frames, limit is {}",
            cfg.max_frames
        )));
    }
    let rig = Rig::new(spec, beta)?;
    let hold_xy = |ri: usize| -> Result<Vector2<f64>> {
        let (u, v) = wall.pixel(wall.hold(route.holds[ri])?, k);
        let p = k.unproject(u, v, depth);
        Ok(Vector2::new(p.x, p.y))
    };

    let mut out = OracleMotion {
        frames: Vec::with_capacity(frames_needed),
        contacts: Vec::new(),
        moves: moves.len(),
    };
    let mut stance = start;
    let mut emit =
        |targets: [Vector2<f64>; EFFECTORS], contact: [Option<usize>; EFFECTORS]| -> Result<()> {
            let (root, lean) = rig.solve_root(&targets)?;
            let pose = rig.pose(spec.n_joints, root, lean, &targets);
            let t = Vector3::new(root.x, root.y, depth);
            let kp = body_keypoints(spec, &pose, beta)?;
            let px: Matrix2xX<f64> = project(&kp, k, &CameraPose::from_translation(t))?;
            let bbox = BoundingBox::around(&px, k, cfg.box_margin);
            if bbox.validate().is_err() {
                return Err(SabrError::Generation(format!(
                    "climber leaves the image: {bbox:?}"
                )));
            }
            out.frames.push(MotionFrame {
                pose,
                shape: beta.clone(),
                cam: box_to_pi(&t, &bbox, k),
                bbox,
            });
            out.contacts
                .push(contact.map(|ri| ri.map(|r| route.holds[r])));
            Ok(())
        };
    let place = |stance: &[usize; EFFECTORS]| -> Result<[Vector2<f64>; EFFECTORS]> {
        Ok([
            hold_xy(stance[0])?,
            hold_xy(stance[1])?,
            hold_xy(stance[2])?,
            hold_xy(stance[3])?,
        ])
    };

    for _ in 0..cfg.rest_frames {
        emit(place(&stance)?, stance.map(Some))?;
    }
    for &(eff, dest) in &moves {
        let from = hold_xy(stance[eff])?;
        let to = hold_xy(dest)?;
        for f in 1..=cfg.move_frames {
            let s = smoothstep(f as f64 / cfg.move_frames as f64);
            let mut targets = place(&stance)?;
            targets[eff] = from + (to - from) * s;
            let mut contact = stance.map(Some);
            contact[eff] = if f == cfg.move_frames {
                Some(dest)
            } else {
                None
            };
            emit(targets, contact)?;
        }
        stance[eff] = dest;
    }
    for _ in 0..cfg.rest_frames {
        emit(place(&stance)?, stance.map(Some))?;
    }
    Ok(out)
}
