//! Avatar body model and camera.

pub mod body;
pub mod camera;
pub mod rotation;

pub use body::{
    body_keypoints, joint_transforms, pose_mesh, regress_joints, shape_mesh, BodySpec, Limb,
    PoseParams, ShapeParams, SHAPE_DIM,
};
pub use camera::{box_to_pi, cam_from_box, project, BoundingBox, CameraIntrinsics, CameraPose};
pub use rotation::{is_rotation, orthonormalize, rot_z, rotation_defect};
