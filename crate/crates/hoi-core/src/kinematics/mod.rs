//! Parametric hand and object models, 6D rotation math, forward kinematics,
//! the flat per-frame feature layout, and the synthetic dataset generator.
//!
//! Per-frame features are laid out as `[object 10 | left hand 99 | right
//! hand 99]`, 208 values total. The object block is `[tau(3) | phi(6) |
//! alpha(1)]`; each hand block is `[tau(3) | wrist(6) | 15 joint rotations
//! of 6]`.

mod hand;
mod hoiseq;
mod object;
mod rot6d;
mod synth;

pub use hand::{hand_forward_kinematics, HandFk, HandModel};
pub use hoiseq::{read_hoiseq, write_hoiseq};
pub use object::{
    apply_object_pose, box_mesh, capsule_mesh, cylinder_mesh, point_triangle_distance_sq,
    read_object_model, sphere_mesh, write_object_model, Hinge, ObjectModel, PosedObject,
};
pub use rot6d::Rotation6d;
pub use synth::{
    contact_frames, generate_synthetic_dataset, object_for_name, GeneratedDataset,
    GeneratorConfig, ScriptKind,
};

use nalgebra::Vector3;

/// Width of the flat per-frame feature vector.
pub const FRAME_DIM: usize = 208;
/// Width of the object pose block.
pub const OBJ_POSE_DIM: usize = 10;
/// Width of one hand pose block.
pub const HAND_POSE_DIM: usize = 99;

#[derive(Debug, thiserror::Error)]
pub enum KinematicsError {
    #[error("degenerate rotation: {0}")]
    DegenerateRotation(String),
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("articulation angle {alpha} outside [0, {alpha_max}]")]
    ArticulationOutOfRange { alpha: f64, alpha_max: f64 },
    #[error("object model is invalid: {0}")]
    InvalidModel(String),
    #[error("infeasible script: {0}")]
    InfeasibleScript(String),
    #[error("bad sequence file: {0}")]
    BadSequenceFile(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Handedness {
    Left,
    Right,
}

/// Object pose: global translation (meters), 6D rotation, articulation
/// angle (radians).
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectPose {
    pub translation: Vector3<f64>,
    pub rotation: Rotation6d,
    pub articulation: f64,
}

impl ObjectPose {
    pub fn identity() -> Self {
        ObjectPose {
            translation: Vector3::zeros(),
            rotation: Rotation6d::identity(),
            articulation: 0.0,
        }
    }

    pub fn to_flat(&self) -> [f64; OBJ_POSE_DIM] {
        let mut out = [0.0; OBJ_POSE_DIM];
        out[..3].copy_from_slice(self.translation.as_slice());
        out[3..9].copy_from_slice(&self.rotation.0);
        out[9] = self.articulation;
        out
    }

    pub fn from_flat(v: &[f64]) -> Result<Self, KinematicsError> {
        if v.len() != OBJ_POSE_DIM {
            return Err(KinematicsError::LengthMismatch {
                expected: OBJ_POSE_DIM,
                got: v.len(),
            });
        }
        Ok(ObjectPose {
            translation: Vector3::new(v[0], v[1], v[2]),
            rotation: Rotation6d([v[3], v[4], v[5], v[6], v[7], v[8]]),
            articulation: v[9],
        })
    }
}

/// Hand pose: global translation, wrist rotation, and 15 per-joint
/// rotations (3 joints per finger, 5 fingers).
#[derive(Debug, Clone, PartialEq)]
pub struct HandPose {
    pub translation: Vector3<f64>,
    pub wrist: Rotation6d,
    pub joints: [Rotation6d; 15],
    pub handedness: Handedness,
}

impl HandPose {
    pub fn rest(handedness: Handedness) -> Self {
        HandPose {
            translation: Vector3::zeros(),
            wrist: Rotation6d::identity(),
            joints: std::array::from_fn(|_| Rotation6d::identity()),
            handedness,
        }
    }

    pub fn to_flat(&self) -> [f64; HAND_POSE_DIM] {
        let mut out = [0.0; HAND_POSE_DIM];
        out[..3].copy_from_slice(self.translation.as_slice());
        out[3..9].copy_from_slice(&self.wrist.0);
        for (i, j) in self.joints.iter().enumerate() {
            out[9 + 6 * i..15 + 6 * i].copy_from_slice(&j.0);
        }
        out
    }

    pub fn from_flat(v: &[f64], handedness: Handedness) -> Result<Self, KinematicsError> {
        if v.len() != HAND_POSE_DIM {
            return Err(KinematicsError::LengthMismatch {
                expected: HAND_POSE_DIM,
                got: v.len(),
            });
        }
        Ok(HandPose {
            translation: Vector3::new(v[0], v[1], v[2]),
            wrist: Rotation6d([v[3], v[4], v[5], v[6], v[7], v[8]]),
            joints: std::array::from_fn(|i| {
                let o = 9 + 6 * i;
                Rotation6d([v[o], v[o + 1], v[o + 2], v[o + 3], v[o + 4], v[o + 5]])
            }),
            handedness,
        })
    }

    /// Re-orthonormalize every rotation through the 6D round trip.
    pub fn canonicalize(&self) -> Result<HandPose, KinematicsError> {
        let mut out = self.clone();
        out.wrist = self.wrist.canonicalize()?;
        for (i, j) in self.joints.iter().enumerate() {
            out.joints[i] = j.canonicalize()?;
        }
        Ok(out)
    }
}

/// One frame of coupled object and two-hand motion.
#[derive(Debug, Clone, PartialEq)]
pub struct HoiFrame {
    pub object: ObjectPose,
    pub left: HandPose,
    pub right: HandPose,
}

impl HoiFrame {
    pub fn rest() -> Self {
        HoiFrame {
            object: ObjectPose::identity(),
            left: HandPose::rest(Handedness::Left),
            right: HandPose::rest(Handedness::Right),
        }
    }
}

/// Flatten a frame into the 208-wide layout.
pub fn flatten_frame(frame: &HoiFrame) -> [f64; FRAME_DIM] {
    let mut out = [0.0; FRAME_DIM];
    out[..OBJ_POSE_DIM].copy_from_slice(&frame.object.to_flat());
    out[OBJ_POSE_DIM..OBJ_POSE_DIM + HAND_POSE_DIM].copy_from_slice(&frame.left.to_flat());
    out[OBJ_POSE_DIM + HAND_POSE_DIM..].copy_from_slice(&frame.right.to_flat());
    out
}

/// Exact inverse of [`flatten_frame`].
pub fn unflatten_frame(v: &[f64]) -> Result<HoiFrame, KinematicsError> {
    if v.len() != FRAME_DIM {
        return Err(KinematicsError::LengthMismatch {
            expected: FRAME_DIM,
            got: v.len(),
        });
    }
    Ok(HoiFrame {
        object: ObjectPose::from_flat(&v[..OBJ_POSE_DIM])?,
        left: HandPose::from_flat(
            &v[OBJ_POSE_DIM..OBJ_POSE_DIM + HAND_POSE_DIM],
            Handedness::Left,
        )?,
        right: HandPose::from_flat(&v[OBJ_POSE_DIM + HAND_POSE_DIM..], Handedness::Right)?,
    })
}

/// An ordered frame sequence at fixed rate with its object id and caption.
#[derive(Debug, Clone, PartialEq)]
pub struct HoiSequence {
    pub frames: Vec<HoiFrame>,
    pub fps: f64,
    pub object_id: String,
    pub caption: String,
    pub seed: u64,
}

impl HoiSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Flat `T x 208` feature matrix, frame-major.
    pub fn features(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.frames.len() * FRAME_DIM);
        for f in &self.frames {
            out.extend_from_slice(&flatten_frame(f));
        }
        out
    }

    pub fn from_features(
        feats: &[f64],
        fps: f64,
        object_id: &str,
        caption: &str,
        seed: u64,
    ) -> Result<Self, KinematicsError> {
        if feats.len() % FRAME_DIM != 0 {
            return Err(KinematicsError::LengthMismatch {
                expected: FRAME_DIM * (feats.len() / FRAME_DIM + 1),
                got: feats.len(),
            });
        }
        let frames = feats
            .chunks(FRAME_DIM)
            .map(unflatten_frame)
            .collect::<Result<Vec<_>, _>>()?;
        Ok(HoiSequence {
            frames,
            fps,
            object_id: object_id.to_string(),
            caption: caption.to_string(),
            seed,
        })
    }
}
