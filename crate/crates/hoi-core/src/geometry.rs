//! Geometric plausibility losses (penetration, contact-grasp, contact-region),
//! their weighted sum, and the interpenetration metric.
//!
//! All distances are squared and thresholds are applied squared. The object
//! "surface" is its sample set (mesh vertices plus face centers plus
//! area-weighted fill samples); inside/outside tests run against the convex
//! part planes.

use nalgebra::Vector3;

use crate::kinematics::{
    apply_object_pose, hand_forward_kinematics, HandModel, HoiFrame, KinematicsError, ObjectModel,
    PosedObject,
};

#[derive(Debug, thiserror::Error)]
pub enum GeometryError {
    #[error("empty vertex set")]
    EmptyVertexSet,
    #[error("length mismatch: {0} ground-truth vs {1} reconstructed items")]
    LengthMismatch(usize, usize),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
}

/// Contact radii in meters. `phi_approach` is the contact-grasp radius,
/// `tau_contact` the contact-region radius.
#[derive(Debug, Clone, Copy)]
pub struct ContactThresholds {
    pub phi_approach: f64,
    pub tau_contact: f64,
}

impl Default for ContactThresholds {
    fn default() -> Self {
        ContactThresholds {
            phi_approach: 0.02,
            tau_contact: 0.005,
        }
    }
}

/// Weights of the three loss terms.
#[derive(Debug, Clone, Copy)]
pub struct GeoWeights {
    pub lambda_pen: f64,
    pub beta_c: f64,
    pub gamma_r: f64,
}

impl Default for GeoWeights {
    fn default() -> Self {
        GeoWeights {
            lambda_pen: 0.2,
            beta_c: 0.5,
            gamma_r: 1.0,
        }
    }
}

impl GeoWeights {
    pub fn zero() -> Self {
        GeoWeights {
            lambda_pen: 0.0,
            beta_c: 0.0,
            gamma_r: 0.0,
        }
    }
}

/// Per-sequence geometry report.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GeoReport {
    pub l_pen: f64,
    pub l_c: f64,
    pub l_r: f64,
    pub l_geo: f64,
    pub penetrating_vertex_count: usize,
    pub max_depth: f64,
}

impl GeoReport {
    pub fn csv_header() -> &'static str {
        "seq_id,l_pen,l_c,l_r,l_geo,iv_count,iv_max_depth"
    }

    pub fn csv_row(&self, seq_id: &str) -> String {
        format!(
            "{seq_id},{:.9},{:.9},{:.9},{:.9},{},{:.9}",
            self.l_pen,
            self.l_c,
            self.l_r,
            self.l_geo,
            self.penetrating_vertex_count,
            self.max_depth
        )
    }
}

/// Exact minimum squared distance from `point` to the vertex set, with the
/// argmin index; ties break to the lowest index.
pub fn min_sq_dist_to_vertices(
    point: &Vector3<f64>,
    verts: &[Vector3<f64>],
) -> Result<(f64, usize), GeometryError> {
    if verts.is_empty() {
        return Err(GeometryError::EmptyVertexSet);
    }
    let mut best = (f64::INFINITY, 0usize);
    for (i, v) in verts.iter().enumerate() {
        let d = (point - v).norm_squared();
        if d < best.0 {
            best = (d, i);
        }
    }
    Ok(best)
}

/// Convex inside test: `Some(depth)` when the point is inside the part
/// (boundary points count as inside with depth 0).
pub fn is_inside_convex(posed: &PosedObject, point: &Vector3<f64>, part: usize) -> Option<f64> {
    posed.inside_part(point, part)
}

/// Hand vertices penetrating any part, with their depth and nearest object
/// sample: `(vertex index, depth, sample index, squared distance)`.
pub fn penetration_terms(
    hand_vertices: &[Vector3<f64>],
    posed: &PosedObject,
) -> Vec<(usize, f64, usize, f64)> {
    let mut out = Vec::new();
    for (i, v) in hand_vertices.iter().enumerate() {
        if let Some(depth) = posed.inside_any(v) {
            let (d, j) = min_sq_dist_to_vertices(v, &posed.samples).expect("posed samples");
            out.push((i, depth, j, d));
        }
    }
    out
}

/// Mean squared distance from penetrating hand vertices to their nearest
/// object sample; zero when nothing penetrates.
pub fn penetration_loss(hand_vertices: &[Vector3<f64>], posed: &PosedObject) -> f64 {
    let terms = penetration_terms(hand_vertices, posed);
    if terms.is_empty() {
        return 0.0;
    }
    terms.iter().map(|(_, _, _, d)| d).sum::<f64>() / terms.len() as f64
}

/// Joints within the approach radius and their nearest sample:
/// `(joint index, sample index, squared distance)`.
pub fn contact_terms(
    joints: &[Vector3<f64>],
    posed: &PosedObject,
    thresholds: &ContactThresholds,
) -> Vec<(usize, usize, f64)> {
    let phi_sq = thresholds.phi_approach * thresholds.phi_approach;
    let mut out = Vec::new();
    for (i, j) in joints.iter().enumerate() {
        let (d, s) = min_sq_dist_to_vertices(j, &posed.samples).expect("posed samples");
        if d <= phi_sq {
            out.push((i, s, d));
        }
    }
    out
}

/// Sum of squared distances for joints within the approach radius.
pub fn contact_grasp_loss(
    joints: &[Vector3<f64>],
    posed: &PosedObject,
    thresholds: &ContactThresholds,
) -> f64 {
    contact_terms(joints, posed, thresholds)
        .iter()
        .map(|(_, _, d)| d)
        .sum()
}

/// Ground-truth contact vertices and their reconstruction terms:
/// `(vertex index, indicator mismatch 0/1, recon nearest sample, recon
/// squared distance)`.
pub fn region_terms(
    gt_vertices: &[Vector3<f64>],
    recon_vertices: &[Vector3<f64>],
    gt_posed: &PosedObject,
    recon_posed: &PosedObject,
    thresholds: &ContactThresholds,
) -> Result<Vec<(usize, f64, usize, f64)>, GeometryError> {
    if gt_vertices.len() != recon_vertices.len() {
        return Err(GeometryError::LengthMismatch(
            gt_vertices.len(),
            recon_vertices.len(),
        ));
    }
    let tau_sq = thresholds.tau_contact * thresholds.tau_contact;
    let mut out = Vec::new();
    for (i, gt) in gt_vertices.iter().enumerate() {
        let (d_gt, _) = min_sq_dist_to_vertices(gt, &gt_posed.samples)?;
        if d_gt >= tau_sq {
            continue;
        }
        let (d_rec, s) = min_sq_dist_to_vertices(&recon_vertices[i], &recon_posed.samples)?;
        let phi_rec = if d_rec < tau_sq { 1.0 } else { 0.0 };
        // The ground-truth indicator is 1 by selection.
        out.push((i, 1.0 - phi_rec, s, d_rec));
    }
    Ok(out)
}

/// Contact-region loss: indicator mismatch plus the reconstruction's
/// distance to the surface, summed over ground-truth contact vertices.
pub fn contact_region_loss(
    gt_vertices: &[Vector3<f64>],
    recon_vertices: &[Vector3<f64>],
    gt_posed: &PosedObject,
    recon_posed: &PosedObject,
    thresholds: &ContactThresholds,
) -> Result<f64, GeometryError> {
    Ok(region_terms(
        gt_vertices,
        recon_vertices,
        gt_posed,
        recon_posed,
        thresholds,
    )?
    .iter()
    .map(|(_, mismatch, _, d)| mismatch + d)
    .sum())
}

/// Hand surface vertices and joints of both hands for one frame.
pub fn frame_hand_geometry(
    frame: &HoiFrame,
    hand_model: &HandModel,
) -> Result<(Vec<Vector3<f64>>, Vec<Vector3<f64>>), GeometryError> {
    let left = hand_forward_kinematics(&frame.left, hand_model)?;
    let right = hand_forward_kinematics(&frame.right, hand_model)?;
    let mut verts = left.vertices;
    verts.extend(right.vertices);
    let mut joints = left.joints.to_vec();
    joints.extend(right.joints.iter());
    Ok((verts, joints))
}

/// Reconstructed articulation may fall slightly outside the hinge range;
/// clamp before posing so geometry stays evaluable.
pub fn pose_clamped(model: &ObjectModel, frame: &HoiFrame) -> Result<PosedObject, GeometryError> {
    let mut pose = frame.object.clone();
    pose.articulation = pose.articulation.clamp(0.0, model.alpha_max());
    Ok(apply_object_pose(model, &pose)?)
}

/// Weighted per-sequence geometry loss, averaged over frames. Penetration
/// and contact terms are evaluated on the reconstruction; region terms
/// compare against ground-truth contacts.
pub fn geo_loss(
    gt_frames: &[HoiFrame],
    recon_frames: &[HoiFrame],
    model: &ObjectModel,
    hand_model: &HandModel,
    weights: &GeoWeights,
    thresholds: &ContactThresholds,
) -> Result<GeoReport, GeometryError> {
    if gt_frames.len() != recon_frames.len() {
        return Err(GeometryError::LengthMismatch(
            gt_frames.len(),
            recon_frames.len(),
        ));
    }
    let mut pen_sum = 0.0;
    let mut c_sum = 0.0;
    let mut r_sum = 0.0;
    let mut count = 0usize;
    let mut max_depth = 0.0f64;
    for (gt, recon) in gt_frames.iter().zip(recon_frames) {
        let gt_posed = apply_object_pose(model, &gt.object)?;
        let recon_posed = pose_clamped(model, recon)?;
        let (gt_verts, _) = frame_hand_geometry(gt, hand_model)?;
        let (rec_verts, rec_joints) = frame_hand_geometry(recon, hand_model)?;

        let terms = penetration_terms(&rec_verts, &recon_posed);
        count += terms.len();
        for (_, depth, _, _) in &terms {
            max_depth = max_depth.max(*depth);
        }
        if !terms.is_empty() {
            pen_sum += terms.iter().map(|(_, _, _, d)| d).sum::<f64>() / terms.len() as f64;
        }
        c_sum += contact_grasp_loss(&rec_joints, &recon_posed, thresholds);
        r_sum += contact_region_loss(&gt_verts, &rec_verts, &gt_posed, &recon_posed, thresholds)?;
    }
    let n = gt_frames.len().max(1) as f64;
    let l_pen = pen_sum / n;
    let l_c = c_sum / n;
    let l_r = r_sum / n;
    Ok(GeoReport {
        l_pen,
        l_c,
        l_r,
        l_geo: weights.lambda_pen * l_pen + weights.beta_c * l_c + weights.gamma_r * l_r,
        penetrating_vertex_count: count,
        max_depth,
    })
}

/// Interpenetration metric over a sequence: total penetrating hand vertices
/// and the maximum depth.
pub fn iv_metric(
    frames: &[HoiFrame],
    model: &ObjectModel,
    hand_model: &HandModel,
) -> Result<(usize, f64), GeometryError> {
    let mut count = 0usize;
    let mut max_depth = 0.0f64;
    for frame in frames {
        let posed = pose_clamped(model, frame)?;
        let (verts, _) = frame_hand_geometry(frame, hand_model)?;
        for v in &verts {
            if let Some(depth) = posed.inside_any(v) {
                count += 1;
                max_depth = max_depth.max(depth);
            }
        }
    }
    Ok((count, max_depth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{
        box_mesh, generate_synthetic_dataset, object_for_name, GeneratorConfig, ObjectPose,
        Rotation6d, ScriptKind,
    };
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cube() -> ObjectModel {
        // Unit cube centered at the origin (half extent 0.5).
        let (v, f) = box_mesh(Vector3::zeros(), Vector3::new(0.5, 0.5, 0.5));
        ObjectModel::build("unitcube", v, f, vec![0; 12], None, 64, 0).unwrap()
    }

    #[test]
    fn min_sq_dist_exact_corner_case() {
        let cube = cube();
        let posed = apply_object_pose(&cube, &ObjectPose::identity()).unwrap();
        // Point at (2,0,0): nearest cube vertex is a (0.5, +-0.5, +-0.5)
        // corner at squared distance 1.5^2 + 0.5^2 + 0.5^2 = 2.75.
        let (d, _) =
            min_sq_dist_to_vertices(&Vector3::new(2.0, 0.0, 0.0), &posed.vertices).unwrap();
        assert!((d - 2.75).abs() < 1e-12);
        // A vertex of the set maps to itself at distance 0.
        let (d, i) = min_sq_dist_to_vertices(&posed.vertices[3], &posed.vertices).unwrap();
        assert_eq!(d, 0.0);
        assert_eq!(i, 3);
    }

    #[test]
    fn min_sq_dist_matches_brute_force_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let verts: Vec<Vector3<f64>> = (0..10_000)
            .map(|_| {
                Vector3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                )
            })
            .collect();
        for _ in 0..50 {
            let p = Vector3::new(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            );
            let (d, i) = min_sq_dist_to_vertices(&p, &verts).unwrap();
            // Independent oracle: fold over indices tracking the minimum.
            let (oi, od) =
                verts
                    .iter()
                    .enumerate()
                    .fold((0usize, f64::INFINITY), |(bi, bd), (j, v)| {
                        let dj = (p - v).norm_squared();
                        if dj < bd {
                            (j, dj)
                        } else {
                            (bi, bd)
                        }
                    });
            assert_eq!(i, oi);
            assert_eq!(d, od);
        }
    }

    #[test]
    fn empty_vertex_set_rejected() {
        assert!(matches!(
            min_sq_dist_to_vertices(&Vector3::zeros(), &[]),
            Err(GeometryError::EmptyVertexSet)
        ));
    }

    #[test]
    fn inside_test_agrees_with_voxel_oracle() {
        let cube = cube();
        let posed = apply_object_pose(&cube, &ObjectPose::identity()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..1000 {
            let p = Vector3::new(
                rng.gen_range(-0.8..0.8),
                rng.gen_range(-0.8..0.8),
                rng.gen_range(-0.8f64..0.8),
            );
            // Axis-aligned oracle for the unit cube.
            let oracle_inside =
                p.x.abs() <= 0.5 && p.y.abs() <= 0.5 && p.z.abs() <= 0.5;
            assert_eq!(
                is_inside_convex(&posed, &p, 0).is_some(),
                oracle_inside,
                "{p:?}"
            );
        }
    }

    #[test]
    fn penetration_of_cube_center_is_quarter() {
        let cube = cube();
        let posed = apply_object_pose(&cube, &ObjectPose::identity()).unwrap();
        // The sample set includes face centers; the nearest sample to the
        // center is a face center at squared distance 0.25.
        let loss = penetration_loss(&[Vector3::zeros()], &posed);
        assert!((loss - 0.25).abs() < 1e-9, "loss {loss}");
        // Hand entirely outside: zero.
        let loss = penetration_loss(&[Vector3::new(2.0, 2.0, 2.0)], &posed);
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn penetration_matches_pairwise_oracle() {
        let cube = cube();
        let posed = apply_object_pose(&cube, &ObjectPose::identity()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let verts: Vec<Vector3<f64>> = (0..200)
            .map(|_| {
                Vector3::new(
                    rng.gen_range(-0.7..0.7),
                    rng.gen_range(-0.7..0.7),
                    rng.gen_range(-0.7..0.7),
                )
            })
            .collect();
        let loss = penetration_loss(&verts, &posed);
        // O(n*m) oracle re-implementation.
        let mut acc = 0.0;
        let mut n = 0;
        for v in &verts {
            if v.x.abs() <= 0.5 && v.y.abs() <= 0.5 && v.z.abs() <= 0.5 {
                let d = posed
                    .samples
                    .iter()
                    .map(|s| (v - s).norm_squared())
                    .fold(f64::INFINITY, f64::min);
                acc += d;
                n += 1;
            }
        }
        let oracle = if n == 0 { 0.0 } else { acc / n as f64 };
        assert!((loss - oracle).abs() < 1e-12);
    }

    #[test]
    fn contact_grasp_thresholded_terms() {
        let sphere = object_for_name("sphere", 64, 1000).unwrap();
        let posed = apply_object_pose(&sphere, &ObjectPose::identity()).unwrap();
        let th = ContactThresholds::default();
        // Far joints contribute nothing.
        assert_eq!(
            contact_grasp_loss(&[Vector3::new(1.0, 0.0, 0.0)], &posed, &th),
            0.0
        );
        // A joint exactly on a sample contributes zero.
        let on_surface = posed.samples[0];
        assert_eq!(contact_grasp_loss(&[on_surface], &posed, &th), 0.0);
        // A joint just inside the radius contributes its squared distance to
        // the nearest sample, verified by direct computation.
        let dir = posed.samples[10].normalize();
        let j = posed.samples[10] + dir * 0.01;
        let expect = posed
            .samples
            .iter()
            .map(|s| (j - s).norm_squared())
            .fold(f64::INFINITY, f64::min);
        assert!(expect < th.phi_approach * th.phi_approach);
        let loss = contact_grasp_loss(&[j], &posed, &th);
        assert!((loss - expect).abs() < 1e-12);
    }

    #[test]
    fn contact_region_matches_formula() {
        let cube = cube();
        let posed = apply_object_pose(&cube, &ObjectPose::identity()).unwrap();
        let th = ContactThresholds::default();
        // gt vertex exactly on a sample: in contact. recon far away.
        let gt = vec![posed.samples[2]];
        let far = vec![Vector3::new(0.6, 0.0, 0.0)];
        let d_far = posed
            .samples
            .iter()
            .map(|s| (far[0] - s).norm_squared())
            .fold(f64::INFINITY, f64::min);
        let loss = contact_region_loss(&gt, &far, &posed, &posed, &th).unwrap();
        assert!(
            (loss - (1.0 + d_far)).abs() < 1e-12,
            "indicator mismatch plus distance"
        );
        // recon equals gt on surface: zero.
        let loss = contact_region_loss(&gt, &gt, &posed, &posed, &th).unwrap();
        assert_eq!(loss, 0.0);
        // mismatched lengths rejected
        assert!(contact_region_loss(&gt, &[], &posed, &posed, &th).is_err());
    }

    #[test]
    fn geo_loss_is_linear_in_weights_and_sums_components() {
        let ds = generate_synthetic_dataset(
            &GeneratorConfig {
                scripts: vec![ScriptKind::Grasp],
                sequences: 1,
                min_frames: 12,
                max_frames: 12,
                ..Default::default()
            },
            3,
        )
        .unwrap();
        let seq = &ds.sequences[0];
        let model = ds.model_for(seq);
        let hand_model = HandModel::standard();
        // Perturbed "reconstruction".
        let mut recon = seq.frames.clone();
        for f in &mut recon {
            f.left.translation.x += 0.003;
            f.right.translation.z -= 0.004;
        }
        let th = ContactThresholds::default();
        let w = GeoWeights::default();
        let report = geo_loss(&seq.frames, &recon, model, &hand_model, &w, &th).unwrap();
        let expect = w.lambda_pen * report.l_pen + w.beta_c * report.l_c + w.gamma_r * report.l_r;
        assert!((report.l_geo - expect).abs() < 1e-12);
        assert!(report.l_c > 0.0, "grasp frames must engage contact terms");

        let w2 = GeoWeights {
            lambda_pen: 2.0 * w.lambda_pen,
            beta_c: 2.0 * w.beta_c,
            gamma_r: 2.0 * w.gamma_r,
        };
        let report2 = geo_loss(&seq.frames, &recon, model, &hand_model, &w2, &th).unwrap();
        assert!((report2.l_geo - 2.0 * report.l_geo).abs() < 1e-12);

        let z = geo_loss(
            &seq.frames,
            &recon,
            model,
            &hand_model,
            &GeoWeights::zero(),
            &th,
        )
        .unwrap();
        assert_eq!(z.l_geo, 0.0);
    }

    #[test]
    fn iv_counts_and_depth() {
        let cube = cube();
        let hand_model = HandModel::standard();
        let posed = apply_object_pose(&cube, &ObjectPose::identity()).unwrap();
        // Center of the unit cube: inside at depth one half.
        assert_eq!(posed.inside_any(&Vector3::zeros()).unwrap(), 0.5);

        // No-contact frames give (0, 0).
        let frame = HoiFrame::rest();
        let mut away = frame.clone();
        away.left.translation = Vector3::new(-2.0, 0.0, 0.0);
        away.right.translation = Vector3::new(2.0, 0.0, 0.0);
        let (count, depth) = iv_metric(&[away], &cube, &hand_model).unwrap();
        assert_eq!((count, depth), (0, 0.0));
    }

    #[test]
    fn iv_invariant_under_joint_rigid_transform() {
        let ds = generate_synthetic_dataset(
            &GeneratorConfig {
                scripts: vec![ScriptKind::Lift],
                sequences: 1,
                min_frames: 10,
                max_frames: 10,
                ..Default::default()
            },
            5,
        )
        .unwrap();
        let seq = &ds.sequences[0];
        let model = ds.model_for(seq);
        let hand_model = HandModel::standard();
        let (c0, d0) = iv_metric(&seq.frames, model, &hand_model).unwrap();

        // One rigid transform applied jointly to object and both hands.
        let rot = Rotation6d([0.0, 1.0, 0.0, -1.0, 0.0, 0.0]);
        let rm = rot.to_matrix().unwrap();
        let shift = Vector3::new(0.3, -0.2, 0.1);
        let moved: Vec<HoiFrame> = seq
            .frames
            .iter()
            .map(|f| {
                let mut g = f.clone();
                g.object.translation = rm * f.object.translation + shift;
                g.object.rotation =
                    Rotation6d::from_matrix(&(rm * f.object.rotation.to_matrix().unwrap()));
                for hp in [&mut g.left, &mut g.right] {
                    hp.translation = rm * hp.translation + shift;
                    hp.wrist = Rotation6d::from_matrix(&(rm * hp.wrist.to_matrix().unwrap()));
                }
                g
            })
            .collect();
        let (c1, d1) = iv_metric(&moved, model, &hand_model).unwrap();
        assert_eq!(c0, c1);
        assert!((d0 - d1).abs() < 1e-9);
    }
}
