//! Synthetic HOI dataset generator.
//!
//! Sequences follow fixed action scripts (approach, grasp, lift, rotate,
//! pass, open-lid) against convex primitive objects. Grasp poses are solved
//! by bisecting the hand's standoff distance along an approach ray until the
//! closest hand-surface sample sits at a small positive clearance from the
//! object surface, so grasp-phase frames are penetration-free and within the
//! contact threshold by construction. While attached, the hand is rigid in
//! the object (or lid) frame, which preserves both properties exactly.

use nalgebra::{Matrix3, Rotation3, Unit, UnitQuaternion, Vector3};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::hand::{hand_forward_kinematics, HandModel};
use super::object::{
    apply_object_pose, box_mesh, capsule_mesh, cylinder_mesh, sphere_mesh, Hinge, ObjectModel,
};
use super::{
    HandPose, Handedness, HoiFrame, HoiSequence, KinematicsError, ObjectPose, Rotation6d,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScriptKind {
    Approach,
    Grasp,
    Lift,
    Rotate,
    Pass,
    OpenLid,
}

impl ScriptKind {
    pub fn verb(&self) -> &'static str {
        match self {
            ScriptKind::Approach => "approach",
            ScriptKind::Grasp => "grasp",
            ScriptKind::Lift => "lift",
            ScriptKind::Rotate => "rotate",
            ScriptKind::Pass => "pass",
            ScriptKind::OpenLid => "open",
        }
    }

    pub fn all() -> Vec<ScriptKind> {
        vec![
            ScriptKind::Approach,
            ScriptKind::Grasp,
            ScriptKind::Lift,
            ScriptKind::Rotate,
            ScriptKind::Pass,
            ScriptKind::OpenLid,
        ]
    }
}

#[derive(Debug, Clone)]
pub struct GeneratorConfig {
    pub objects: Vec<String>,
    pub scripts: Vec<ScriptKind>,
    pub sequences: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    /// Hand jitter amplitude in meters, damped to zero near and during
    /// contact so grasp guarantees are untouched.
    pub noise: f64,
    pub fps: f64,
    pub point_cloud_size: usize,
    pub min_surface_samples: usize,
    /// Target hand-to-surface clearance at the solved grasp, meters.
    pub contact_clearance: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            objects: vec![
                "cube".into(),
                "sphere".into(),
                "cylinder".into(),
                "capsule".into(),
                "hinged_box".into(),
            ],
            scripts: ScriptKind::all(),
            sequences: 60,
            min_frames: 24,
            max_frames: 56,
            noise: 0.004,
            fps: 30.0,
            point_cloud_size: 256,
            min_surface_samples: 1000,
            contact_clearance: 0.0015,
        }
    }
}

/// Build one of the named primitive objects.
pub fn object_for_name(
    name: &str,
    point_cloud_size: usize,
    min_surface_samples: usize,
) -> Result<ObjectModel, KinematicsError> {
    let (vertices, faces, parts, hinge) = match name {
        "cube" => {
            let (v, f) = box_mesh(Vector3::zeros(), Vector3::new(0.035, 0.035, 0.035));
            let n = f.len();
            (v, f, vec![0u8; n], None)
        }
        "sphere" => {
            let (v, f) = sphere_mesh(0.04, 1);
            let n = f.len();
            (v, f, vec![0u8; n], None)
        }
        "cylinder" => {
            let (v, f) = cylinder_mesh(0.03, 0.05, 12);
            let n = f.len();
            (v, f, vec![0u8; n], None)
        }
        "capsule" => {
            let (v, f) = capsule_mesh(0.025, 0.03, 10, 3);
            let n = f.len();
            (v, f, vec![0u8; n], None)
        }
        "hinged_box" => {
            let (bv, bf) = box_mesh(Vector3::zeros(), Vector3::new(0.05, 0.04, 0.02));
            let (lv, lf) = box_mesh(Vector3::new(0.0, 0.0, 0.024), Vector3::new(0.05, 0.04, 0.004));
            let mut vertices = bv;
            let offset = vertices.len();
            vertices.extend(lv);
            let mut faces = bf;
            let mut parts = vec![0u8; faces.len()];
            for f in lf {
                faces.push([f[0] + offset, f[1] + offset, f[2] + offset]);
                parts.push(1);
            }
            let hinge = Hinge {
                axis: Unit::new_normalize(Vector3::new(0.0, -1.0, 0.0)),
                origin: Vector3::new(-0.05, 0.0, 0.02),
                alpha_max: std::f64::consts::FRAC_PI_2,
            };
            (vertices, faces, parts, Some(hinge))
        }
        other => {
            return Err(KinematicsError::InvalidModel(format!(
                "unknown object '{other}'"
            )))
        }
    };
    ObjectModel::build(
        name,
        vertices,
        faces,
        parts,
        hinge,
        point_cloud_size,
        min_surface_samples,
    )
}

fn caption_noun(name: &str) -> &str {
    match name {
        "hinged_box" => "box",
        other => other,
    }
}

/// Generator output: sequences plus the per-sequence script and the unique
/// object models, all in deterministic order.
#[derive(Debug, Clone)]
pub struct GeneratedDataset {
    pub sequences: Vec<HoiSequence>,
    pub scripts: Vec<ScriptKind>,
    /// Acting hand per sequence (right for pass, which uses both).
    pub acting: Vec<Handedness>,
    pub models: Vec<ObjectModel>,
    pub skipped: usize,
}

impl GeneratedDataset {
    pub fn model_for(&self, seq: &HoiSequence) -> &ObjectModel {
        self.models
            .iter()
            .find(|m| m.name == seq.object_id)
            .expect("model for sequence object")
    }
}

/// Frame ranges during which each hand is rigidly attached to the object.
/// `acting` is the scripted hand for single-hand scripts (ignored for pass,
/// which always moves right to left).
pub fn contact_frames(
    script: ScriptKind,
    acting: Handedness,
    total: usize,
) -> Vec<(Handedness, std::ops::Range<usize>)> {
    let at = |f: f64| ((f * (total - 1) as f64).ceil() as usize).min(total - 1);
    match script {
        ScriptKind::Approach => vec![],
        ScriptKind::Grasp => vec![(acting, at(0.6)..total)],
        ScriptKind::Lift | ScriptKind::Rotate | ScriptKind::OpenLid => {
            vec![(acting, at(0.5)..total)]
        }
        ScriptKind::Pass => vec![
            (Handedness::Right, at(0.25)..at(0.6)),
            (Handedness::Left, at(0.62)..total),
        ],
    }
}

pub fn generate_synthetic_dataset(
    cfg: &GeneratorConfig,
    seed: u64,
) -> Result<GeneratedDataset, KinematicsError> {
    let mut models = Vec::new();
    for name in &cfg.objects {
        models.push(object_for_name(
            name,
            cfg.point_cloud_size,
            cfg.min_surface_samples,
        )?);
    }
    let hand_model = HandModel::standard();

    // Each sequence derives its own stream from (seed, index); shards can
    // run in parallel and are merged in index order.
    let results: Vec<Result<Generated, KinematicsError>> = (0..cfg.sequences)
        .into_par_iter()
        .map(|idx| generate_one(cfg, &models, &hand_model, seed, idx))
        .collect();

    let mut sequences = Vec::new();
    let mut scripts = Vec::new();
    let mut acting = Vec::new();
    let mut skipped = 0;
    for r in results {
        match r {
            Ok(g) => {
                sequences.push(g.seq);
                scripts.push(g.script);
                acting.push(g.acting);
            }
            Err(KinematicsError::InfeasibleScript(_)) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(GeneratedDataset {
        sequences,
        scripts,
        acting,
        models,
        skipped,
    })
}

struct Generated {
    seq: HoiSequence,
    script: ScriptKind,
    acting: Handedness,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

// Phase edges per script, in sequence fraction.
struct Phases {
    reach_end: f64,
    slide_end: f64,
}

fn phases(script: ScriptKind) -> Phases {
    match script {
        ScriptKind::Approach => Phases { reach_end: 0.5, slide_end: 1.0 },
        ScriptKind::Grasp => Phases { reach_end: 0.35, slide_end: 0.6 },
        _ => Phases { reach_end: 0.3, slide_end: 0.5 },
    }
}

fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn span(t: f64, a: f64, b: f64) -> f64 {
    if b <= a {
        return if t >= b { 1.0 } else { 0.0 };
    }
    ((t - a) / (b - a)).clamp(0.0, 1.0)
}

// Grip joint curl angles (radians) per finger segment, scaled by `curl`.
fn grip_joints(curl: f64) -> [Rotation6d; 15] {
    let base: [[f64; 3]; 5] = [
        [0.35, 0.45, 0.25],
        [0.62, 0.78, 0.45],
        [0.62, 0.78, 0.45],
        [0.62, 0.78, 0.45],
        [0.62, 0.78, 0.45],
    ];
    std::array::from_fn(|i| {
        let finger = i / 3;
        let seg = i % 3;
        let theta = -base[finger][seg] * curl;
        // rotation about local x: maps y toward the palm side (-z)
        Rotation6d([1.0, 0.0, 0.0, 0.0, theta.cos(), theta.sin()])
    })
}

#[derive(Clone, Copy)]
enum ApproachKind {
    SideX,
    AboveLid,
}

/// Grasp attachment relative to the object (or lid) frame.
struct Attach {
    ray_dir: Vector3<f64>,
    contact_dist: f64,
    rot: UnitQuaternion<f64>,
    lid: bool,
}

impl Attach {
    fn wrist_at(&self, extra: f64) -> Vector3<f64> {
        self.ray_origin() + self.ray_dir * (self.contact_dist + extra)
    }

    fn ray_origin(&self) -> Vector3<f64> {
        if self.lid {
            Vector3::new(0.0, 0.0, 0.024)
        } else {
            Vector3::zeros()
        }
    }
}

/// Bisect the standoff distance along the approach ray until the closest
/// hand surface point sits at `clearance` above the object surface.
fn solve_grasp(
    model: &ObjectModel,
    hand_model: &HandModel,
    handedness: Handedness,
    kind: ApproachKind,
    clearance: f64,
) -> Result<Attach, KinematicsError> {
    let (ray_dir, rot, lid) = match (kind, handedness) {
        (ApproachKind::SideX, Handedness::Right) => (
            Vector3::x(),
            // columns: (-z, y, x) — palm faces the object from +x
            UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(Matrix3::new(
                0.0, 0.0, 1.0, //
                0.0, 1.0, 0.0, //
                -1.0, 0.0, 0.0,
            ))),
            false,
        ),
        (ApproachKind::SideX, Handedness::Left) => (
            -Vector3::x(),
            UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(Matrix3::new(
                0.0, 0.0, -1.0, //
                0.0, 1.0, 0.0, //
                1.0, 0.0, 0.0,
            ))),
            false,
        ),
        (ApproachKind::AboveLid, _) => (Vector3::z(), UnitQuaternion::identity(), true),
    };

    // Hand surface in grasp-local coordinates (wrist at origin).
    let grip = HandPose {
        translation: Vector3::zeros(),
        wrist: Rotation6d::identity(),
        joints: grip_joints(1.0),
        handedness,
    };
    let fk = hand_forward_kinematics(&grip, hand_model)?;
    let rotm = rot.to_rotation_matrix();
    let local_verts: Vec<Vector3<f64>> = fk.vertices.iter().map(|v| rotm * v).collect();

    let posed = apply_object_pose(model, &ObjectPose::identity())?;
    let origin = if lid {
        Vector3::new(0.0, 0.0, 0.024)
    } else {
        Vector3::zeros()
    };
    // Exact mesh distance: continuous through contact, so the bisection
    // always finds the target clearance crossing.
    let signed_clearance = |d: f64| -> f64 {
        let wrist = origin + ray_dir * d;
        let mut best = f64::INFINITY;
        for v in &local_verts {
            best = best.min(posed.signed_surface_distance(&(wrist + v)));
        }
        best
    };

    let (mut lo, mut hi) = (0.0, 0.5);
    if signed_clearance(hi) <= clearance {
        return Err(KinematicsError::InfeasibleScript(format!(
            "no clearance crossing for {} grasp of {}",
            match handedness {
                Handedness::Left => "left",
                Handedness::Right => "right",
            },
            model.name
        )));
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if signed_clearance(mid) < clearance {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let contact_dist = hi;
    let c = signed_clearance(contact_dist);
    if !(0.0 < c && c < 0.005) {
        return Err(KinematicsError::InfeasibleScript(format!(
            "grasp solve for {} ended at clearance {c:.4}",
            model.name
        )));
    }
    Ok(Attach {
        ray_dir,
        contact_dist,
        rot,
        lid,
    })
}

// Per-frame object trajectory.
struct ObjPath {
    lift: f64,
    yaw: f64,
    pass_shift: f64,
    script: ScriptKind,
    alpha_max: f64,
}

impl ObjPath {
    fn pose_at(&self, t: f64) -> (Vector3<f64>, UnitQuaternion<f64>, f64) {
        let mut pos = Vector3::zeros();
        let mut rot = UnitQuaternion::identity();
        let mut alpha = 0.0;
        match self.script {
            ScriptKind::Lift => {
                pos.z = self.lift * smoothstep(span(t, 0.55, 0.9));
            }
            ScriptKind::Rotate => {
                pos.z = 0.02 * smoothstep(span(t, 0.55, 0.9));
                rot = UnitQuaternion::from_axis_angle(
                    &Vector3::z_axis(),
                    self.yaw * smoothstep(span(t, 0.55, 0.9)),
                );
            }
            ScriptKind::Pass => {
                let s1 = smoothstep(span(t, 0.3, 0.55));
                let s2 = smoothstep(span(t, 0.7, 0.95));
                pos.x = -self.pass_shift * (s1 + s2);
                pos.z = 0.03 * smoothstep(span(t, 0.3, 0.5))
                    - 0.03 * smoothstep(span(t, 0.75, 0.95));
            }
            ScriptKind::OpenLid => {
                alpha = 0.9 * self.alpha_max * smoothstep(span(t, 0.55, 0.95));
            }
            _ => {}
        }
        (pos, rot, alpha)
    }
}

struct HandScript {
    handedness: Handedness,
    attach: Option<Attach>,
    // (reach_start, reach_end, slide_end, release_start, release_end)
    timing: (f64, f64, f64, f64, f64),
    /// Final slide clearance above contact; zero means attach at contact.
    slide_end_extra: f64,
    rest: Vector3<f64>,
    noise_seeds: [f64; 6],
}

fn rest_pos(h: Handedness) -> Vector3<f64> {
    match h {
        Handedness::Left => Vector3::new(-0.30, -0.10, 0.02),
        Handedness::Right => Vector3::new(0.30, -0.10, 0.02),
    }
}

const STANDOFF: f64 = 0.10;

impl HandScript {
    fn idle(h: Handedness, rng: &mut ChaCha8Rng) -> Self {
        HandScript {
            handedness: h,
            attach: None,
            timing: (0.0, 0.0, 0.0, 2.0, 2.0),
            slide_end_extra: 0.0,
            rest: rest_pos(h),
            noise_seeds: std::array::from_fn(|_| rng.gen_range(0.0..std::f64::consts::TAU)),
        }
    }

    /// Pose of this hand at sequence fraction `t` given the object's pose.
    fn pose_at(
        &self,
        t: f64,
        obj_pos: &Vector3<f64>,
        obj_rot: &UnitQuaternion<f64>,
        alpha: f64,
        hinge: Option<&Hinge>,
        noise: f64,
    ) -> HandPose {
        let wobble = |phase: f64, k: f64| -> Vector3<f64> {
            Vector3::new(
                (2.1 * std::f64::consts::TAU * t + self.noise_seeds[0] + phase).sin(),
                (1.4 * std::f64::consts::TAU * t + self.noise_seeds[1] + phase).sin(),
                (1.7 * std::f64::consts::TAU * t + self.noise_seeds[2] + phase).sin(),
            ) * (noise * k)
        };

        let Some(attach) = &self.attach else {
            return HandPose {
                translation: self.rest + wobble(0.0, 1.0),
                wrist: Rotation6d::identity(),
                joints: grip_joints(0.15),
                handedness: self.handedness,
            };
        };

        let (t_reach0, t_reach1, t_slide1, t_rel0, t_rel1) = self.timing;

        // Attachment frame: the lid for lid grasps, otherwise the object.
        let (frame_rot, frame_pos) = match (attach.lid, hinge) {
            (true, Some(h)) => {
                let hr = UnitQuaternion::from_axis_angle(&h.axis, alpha);
                let rot = obj_rot * hr;
                let pos = obj_pos + obj_rot * (h.origin - hr * h.origin);
                (rot, pos)
            }
            _ => (*obj_rot, *obj_pos),
        };
        let world_of = |local: &Vector3<f64>| frame_pos + frame_rot * local;
        let grasp_rot_world = frame_rot * attach.rot;

        if t < t_reach1 {
            // Reach: rest toward the standoff point, orientation and curl
            // blending in; jitter fades as the standoff is reached.
            let s = smoothstep(span(t, t_reach0, t_reach1));
            let target = world_of(&attach.wrist_at(STANDOFF));
            let pos = self.rest.lerp(&target, s) + wobble(1.0, 1.0 - s);
            let rot = UnitQuaternion::identity().slerp(&grasp_rot_world, s);
            HandPose {
                translation: pos,
                wrist: Rotation6d::from_matrix(&rot.to_rotation_matrix().into_inner()),
                joints: grip_joints(0.15 + 0.85 * s),
                handedness: self.handedness,
            }
        } else if t < t_slide1 || t < t_rel0 {
            // Slide-in along the approach ray in the attachment frame, then
            // hold rigidly. Holding is the slide's end state, so contact
            // clearance is exactly the solved one.
            let s = smoothstep(span(t, t_reach1, t_slide1));
            let extra = (STANDOFF - (STANDOFF - self.slide_end_extra) * s).max(self.slide_end_extra);
            let pos = world_of(&attach.wrist_at(extra));
            HandPose {
                translation: pos,
                wrist: Rotation6d::from_matrix(&grasp_rot_world.to_rotation_matrix().into_inner()),
                joints: grip_joints(1.0),
                handedness: self.handedness,
            }
        } else {
            // Release: slide back out, then return to rest.
            let s_out = smoothstep(span(t, t_rel0, t_rel1));
            let from = world_of(&attach.wrist_at(self.slide_end_extra + STANDOFF * s_out));
            let s_home = smoothstep(span(t, t_rel1, (t_rel1 + 0.25).min(1.0)));
            let pos = from.lerp(&(self.rest + wobble(2.0, 1.0)), s_home);
            let rot = grasp_rot_world.slerp(&UnitQuaternion::identity(), s_home);
            HandPose {
                translation: pos,
                wrist: Rotation6d::from_matrix(&rot.to_rotation_matrix().into_inner()),
                joints: grip_joints(1.0 - 0.85 * s_home),
                handedness: self.handedness,
            }
        }
    }
}

fn generate_one(
    cfg: &GeneratorConfig,
    models: &[ObjectModel],
    hand_model: &HandModel,
    seed: u64,
    index: usize,
) -> Result<Generated, KinematicsError> {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed ^ (index as u64).wrapping_mul(0xA24B_AED4_963E_E407)));

    let script = cfg.scripts[rng.gen_range(0..cfg.scripts.len())];
    let model = if script == ScriptKind::OpenLid {
        models
            .iter()
            .find(|m| m.hinge.is_some())
            .ok_or_else(|| KinematicsError::InfeasibleScript("open-lid needs a hinged object".into()))?
    } else {
        &models[rng.gen_range(0..models.len())]
    };
    let total = rng.gen_range(cfg.min_frames..=cfg.max_frames);
    let ph = phases(script);

    let single_hand = if script == ScriptKind::OpenLid {
        Handedness::Right
    } else if rng.gen_bool(0.5) {
        Handedness::Right
    } else {
        Handedness::Left
    };

    let path = ObjPath {
        lift: rng.gen_range(0.08..0.15),
        yaw: rng.gen_range(1.0..2.1),
        pass_shift: rng.gen_range(0.04..0.07),
        script,
        alpha_max: model.alpha_max(),
    };

    let mut left = HandScript::idle(Handedness::Left, &mut rng);
    let mut right = HandScript::idle(Handedness::Right, &mut rng);
    match script {
        ScriptKind::Approach | ScriptKind::Grasp | ScriptKind::Lift | ScriptKind::Rotate
        | ScriptKind::OpenLid => {
            let kind = if script == ScriptKind::OpenLid {
                ApproachKind::AboveLid
            } else {
                ApproachKind::SideX
            };
            let attach = solve_grasp(model, hand_model, single_hand, kind, cfg.contact_clearance)?;
            let hs = HandScript {
                handedness: single_hand,
                attach: Some(attach),
                timing: (0.0, ph.reach_end, ph.slide_end, 2.0, 2.0),
                slide_end_extra: if script == ScriptKind::Approach { 0.004 } else { 0.0 },
                rest: rest_pos(single_hand),
                noise_seeds: std::array::from_fn(|_| rng.gen_range(0.0..std::f64::consts::TAU)),
            };
            match single_hand {
                Handedness::Left => left = hs,
                Handedness::Right => right = hs,
            }
        }
        ScriptKind::Pass => {
            let ra = solve_grasp(model, hand_model, Handedness::Right, ApproachKind::SideX, cfg.contact_clearance)?;
            let la = solve_grasp(model, hand_model, Handedness::Left, ApproachKind::SideX, cfg.contact_clearance)?;
            right = HandScript {
                handedness: Handedness::Right,
                attach: Some(ra),
                timing: (0.0, 0.15, 0.25, 0.6, 0.7),
                slide_end_extra: 0.0,
                rest: rest_pos(Handedness::Right),
                noise_seeds: std::array::from_fn(|_| rng.gen_range(0.0..std::f64::consts::TAU)),
            };
            left = HandScript {
                handedness: Handedness::Left,
                attach: Some(la),
                timing: (0.3, 0.5, 0.6, 2.0, 2.0),
                slide_end_extra: 0.0,
                rest: rest_pos(Handedness::Left),
                noise_seeds: std::array::from_fn(|_| rng.gen_range(0.0..std::f64::consts::TAU)),
            };
        }
    }

    let mut frames = Vec::with_capacity(total);
    for i in 0..total {
        let t = i as f64 / (total - 1).max(1) as f64;
        let (obj_pos, obj_rot, alpha) = path.pose_at(t);
        let object = ObjectPose {
            translation: obj_pos,
            rotation: Rotation6d::from_matrix(&obj_rot.to_rotation_matrix().into_inner()),
            articulation: alpha,
        };
        let lp = left.pose_at(t, &obj_pos, &obj_rot, alpha, model.hinge.as_ref(), cfg.noise);
        let rp = right.pose_at(t, &obj_pos, &obj_rot, alpha, model.hinge.as_ref(), cfg.noise);
        frames.push(HoiFrame {
            object,
            left: lp,
            right: rp,
        });
    }

    let hands_word = match script {
        ScriptKind::Pass => "both hands",
        _ => match single_hand {
            Handedness::Left => "the left hand",
            Handedness::Right => "the right hand",
        },
    };
    let caption = format!(
        "{} the {} with {}",
        script.verb(),
        caption_noun(&model.name),
        hands_word
    );

    Ok(Generated {
        seq: HoiSequence {
            frames,
            fps: cfg.fps,
            object_id: model.name.clone(),
            caption,
            seed,
        },
        script,
        acting: single_hand,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> GeneratorConfig {
        GeneratorConfig {
            sequences: 8,
            min_frames: 16,
            max_frames: 24,
            ..Default::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = small_cfg();
        let a = generate_synthetic_dataset(&cfg, 7).unwrap();
        let b = generate_synthetic_dataset(&cfg, 7).unwrap();
        assert_eq!(a.sequences.len(), b.sequences.len());
        for (x, y) in a.sequences.iter().zip(&b.sequences) {
            assert_eq!(x, y);
        }
        let c = generate_synthetic_dataset(&cfg, 8).unwrap();
        assert_ne!(a.sequences[0], c.sequences[0]);
    }

    #[test]
    fn single_hand_scripts_leave_other_hand_near_rest() {
        let cfg = GeneratorConfig {
            scripts: vec![ScriptKind::Lift],
            sequences: 4,
            noise: 0.0,
            ..small_cfg()
        };
        let ds = generate_synthetic_dataset(&cfg, 3).unwrap();
        for seq in &ds.sequences {
            let acting_right = seq.caption.contains("right");
            for f in &seq.frames {
                let idle = if acting_right { &f.left } else { &f.right };
                let rest = rest_pos(idle.handedness);
                assert!((idle.translation - rest).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn grasp_phases_touch_without_penetrating() {
        let cfg = GeneratorConfig {
            scripts: vec![ScriptKind::Grasp, ScriptKind::Lift, ScriptKind::OpenLid, ScriptKind::Pass],
            sequences: 10,
            ..small_cfg()
        };
        let ds = generate_synthetic_dataset(&cfg, 11).unwrap();
        assert_eq!(ds.skipped, 0);
        let hand_model = HandModel::standard();
        for ((seq, script), acting) in ds.sequences.iter().zip(&ds.scripts).zip(&ds.acting) {
            let model = ds.model_for(seq);
            for (hand, range) in contact_frames(*script, *acting, seq.len()) {
                for i in range {
                    let frame = &seq.frames[i];
                    let pose = match hand {
                        Handedness::Left => &frame.left,
                        Handedness::Right => &frame.right,
                    };
                    let fk = hand_forward_kinematics(pose, &hand_model).unwrap();
                    let posed = apply_object_pose(model, &frame.object).unwrap();
                    let mut min_d = f64::INFINITY;
                    for v in &fk.vertices {
                        assert!(
                            posed.inside_any(v).is_none(),
                            "{}: penetration at frame {i}",
                            seq.caption
                        );
                        for s in &posed.samples {
                            min_d = min_d.min((v - s).norm());
                        }
                    }
                    assert!(
                        min_d < 0.005,
                        "{}: contact distance {min_d:.4} at frame {i}",
                        seq.caption
                    );
                }
            }
        }
    }
}
