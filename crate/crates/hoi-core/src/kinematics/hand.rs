//! Simplified parametric hand: a 16-joint kinematic tree (wrist root, three
//! joints per finger) with a sphere-swept surface sampled at fixed template
//! points. Stands in for a full statistical hand model; only joint positions
//! and surface vertices are needed downstream.

use nalgebra::{Matrix3, Vector3};

use super::{HandPose, Handedness, KinematicsError};

pub const JOINT_COUNT: usize = 16;
pub const BONE_COUNT: usize = 15;

/// Kinematic tree, bone geometry, and the surface sample template.
///
/// The model is built right-handed; forward kinematics mirrors the x axis
/// for left hands. Template points are expressed in the frame of the joint
/// they are rigidly attached to.
#[derive(Debug, Clone)]
pub struct HandModel {
    /// Parent joint per joint; the wrist (index 0) is its own parent.
    pub parents: [usize; JOINT_COUNT],
    /// Bone i connects `parents[i+1]` to joint `i+1`, in meters.
    pub bone_lengths: [f64; BONE_COUNT],
    /// Unit rest direction of bone i in its parent frame (right hand).
    pub rest_dirs: [Vector3<f64>; BONE_COUNT],
    /// Swept-sphere radius per bone.
    pub sphere_radii: [f64; BONE_COUNT],
    /// Surface samples: (joint frame index, offset in that frame).
    pub template: Vec<(usize, Vector3<f64>)>,
}

impl HandModel {
    /// The default desk-scale hand: palm spanning ~9 cm, fingers 6-11 cm.
    pub fn standard() -> Self {
        // Finger order: thumb, index, middle, ring, pinky.
        let splay: [[f64; 3]; 5] = [
            [0.55, 0.75, -0.15],
            [0.18, 0.98, 0.0],
            [0.0, 1.0, 0.0],
            [-0.18, 0.98, 0.0],
            [-0.36, 0.93, 0.0],
        ];
        let lengths: [[f64; 3]; 5] = [
            [0.048, 0.034, 0.028],
            [0.075, 0.032, 0.024],
            [0.080, 0.036, 0.026],
            [0.074, 0.033, 0.024],
            [0.064, 0.026, 0.020],
        ];
        let radii: [[f64; 3]; 5] = [
            [0.014, 0.011, 0.009],
            [0.012, 0.009, 0.008],
            [0.012, 0.009, 0.008],
            [0.011, 0.009, 0.008],
            [0.010, 0.008, 0.007],
        ];

        let mut parents = [0usize; JOINT_COUNT];
        let mut bone_lengths = [0.0; BONE_COUNT];
        let mut rest_dirs = [Vector3::zeros(); BONE_COUNT];
        let mut sphere_radii = [0.0; BONE_COUNT];
        for f in 0..5 {
            let dir = Vector3::new(splay[f][0], splay[f][1], splay[f][2]).normalize();
            for seg in 0..3 {
                let j = 1 + 3 * f + seg;
                parents[j] = if seg == 0 { 0 } else { j - 1 };
                bone_lengths[j - 1] = lengths[f][seg];
                // All segments of a finger share its canonical axis at rest,
                // so identity rotations leave the chain collinear.
                rest_dirs[j - 1] = dir;
                sphere_radii[j - 1] = radii[f][seg];
            }
        }

        let mut template = Vec::new();
        // Palm pad: a coarse grid attached to the wrist frame, on both the
        // palm (-z) and back (+z) side.
        for &x in &[-0.030f64, 0.0, 0.030] {
            for &y in &[0.020f64, 0.055] {
                for &z in &[-0.014f64, 0.012] {
                    template.push((0, Vector3::new(x, y, z)));
                }
            }
        }
        // Each bone: stations along the parent-frame segment with radial
        // offsets on the palm and back sides, plus a fingertip cap on the
        // distal bone.
        for i in 0..BONE_COUNT {
            let j = i + 1;
            let parent = parents[j];
            let dir = rest_dirs[i];
            let r = sphere_radii[i];
            let len = bone_lengths[i];
            for &t in &[0.35f64, 0.8] {
                for n in [Vector3::z(), -Vector3::z()] {
                    template.push((parent, dir * (t * len) + n * r));
                }
            }
            let distal = j % 3 == 0;
            if distal {
                // Fingertip pad attached to the distal joint's own frame.
                template.push((j, dir * (0.6 * len) - Vector3::z() * (0.8 * r)));
                template.push((j, dir * (0.8 * len)));
            }
        }

        HandModel {
            parents,
            bone_lengths,
            rest_dirs,
            sphere_radii,
            template,
        }
    }

    pub fn surface_point_count(&self) -> usize {
        self.template.len()
    }
}

/// Joint positions and surface vertices in world coordinates.
#[derive(Debug, Clone)]
pub struct HandFk {
    pub joints: [Vector3<f64>; JOINT_COUNT],
    pub vertices: Vec<Vector3<f64>>,
}

/// Compose the kinematic chain: joint j sits at its parent's position
/// displaced along the parent's cumulative rotation; joint rotations apply
/// to everything distal of the joint.
pub fn hand_forward_kinematics(
    pose: &HandPose,
    model: &HandModel,
) -> Result<HandFk, KinematicsError> {
    let mirror = pose.handedness == Handedness::Left;
    let mx = |v: &Vector3<f64>| -> Vector3<f64> {
        if mirror {
            Vector3::new(-v.x, v.y, v.z)
        } else {
            *v
        }
    };

    let mut rot = [Matrix3::identity(); JOINT_COUNT];
    let mut pos = [Vector3::zeros(); JOINT_COUNT];
    rot[0] = pose.wrist.to_matrix()?;
    pos[0] = pose.translation;
    for j in 1..JOINT_COUNT {
        let p = model.parents[j];
        let offset = mx(&model.rest_dirs[j - 1]) * model.bone_lengths[j - 1];
        pos[j] = pos[p] + rot[p] * offset;
        rot[j] = rot[p] * pose.joints[j - 1].to_matrix()?;
    }

    let vertices = model
        .template
        .iter()
        .map(|(frame, local)| pos[*frame] + rot[*frame] * mx(local))
        .collect();

    Ok(HandFk {
        joints: pos,
        vertices,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::Rotation6d;

    #[test]
    fn zero_pose_puts_joints_on_rest_axes() {
        let model = HandModel::standard();
        let pose = HandPose::rest(Handedness::Right);
        let fk = hand_forward_kinematics(&pose, &model).unwrap();
        assert_eq!(fk.joints[0], Vector3::zeros());
        // Finger chains accumulate bone vectors along canonical directions.
        for f in 0..5 {
            let mut expect = Vector3::zeros();
            for seg in 0..3 {
                let j = 1 + 3 * f + seg;
                expect += model.rest_dirs[j - 1] * model.bone_lengths[j - 1];
                assert!((fk.joints[j] - expect).norm() < 1e-12, "joint {j}");
            }
        }
    }

    #[test]
    fn translation_equivariance() {
        let model = HandModel::standard();
        let mut pose = HandPose::rest(Handedness::Right);
        let base = hand_forward_kinematics(&pose, &model).unwrap();
        let t = Vector3::new(1.0, 0.0, 0.0);
        pose.translation = t;
        let moved = hand_forward_kinematics(&pose, &model).unwrap();
        for j in 0..JOINT_COUNT {
            assert!((moved.joints[j] - base.joints[j] - t).norm() < 1e-12);
        }
        for (a, b) in moved.vertices.iter().zip(&base.vertices) {
            assert!((a - b - t).norm() < 1e-12);
        }
    }

    #[test]
    fn wrist_rotation_rotates_every_joint_about_the_wrist() {
        let model = HandModel::standard();
        let mut pose = HandPose::rest(Handedness::Right);
        let base = hand_forward_kinematics(&pose, &model).unwrap();
        // 90 degrees about z
        let rot = Rotation6d([0.0, 1.0, 0.0, -1.0, 0.0, 0.0]);
        pose.wrist = rot;
        let m = rot.to_matrix().unwrap();
        let turned = hand_forward_kinematics(&pose, &model).unwrap();
        for j in 0..JOINT_COUNT {
            let expect = m * base.joints[j];
            assert!((turned.joints[j] - expect).norm() < 1e-12, "joint {j}");
        }
    }

    #[test]
    fn left_hand_is_mirror_of_right_at_rest() {
        let model = HandModel::standard();
        let right = hand_forward_kinematics(&HandPose::rest(Handedness::Right), &model).unwrap();
        let left = hand_forward_kinematics(&HandPose::rest(Handedness::Left), &model).unwrap();
        for j in 0..JOINT_COUNT {
            assert!((left.joints[j].x + right.joints[j].x).abs() < 1e-12);
            assert!((left.joints[j].y - right.joints[j].y).abs() < 1e-12);
            assert!((left.joints[j].z - right.joints[j].z).abs() < 1e-12);
        }
    }
}
