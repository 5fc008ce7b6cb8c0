//! Property tests for rotation round trips, flatten bijectivity, and
//! forward-kinematics equivariances.

use hoi_core::kinematics::{
    flatten_frame, hand_forward_kinematics, unflatten_frame, HandModel, HandPose, Handedness,
    HoiFrame, ObjectPose, Rotation6d,
};
use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn random_rotation(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
    let axis = Vector3::new(
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0f64..1.0),
    );
    let axis = if axis.norm() < 1e-6 { Vector3::x() } else { axis };
    let angle = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
    UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle)
        .to_rotation_matrix()
        .into_inner()
}

#[test]
fn rotation6d_round_trip_1000_random_matrices() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..1000 {
        let m = random_rotation(&mut rng);
        let r = Rotation6d::from_matrix(&m);
        let back = r.to_matrix().unwrap();
        let err = (back - m).abs().max();
        assert!(err < 1e-6, "round trip error {err}");
    }
}

fn arb_rotation6d() -> impl Strategy<Value = Rotation6d> {
    (any::<u64>()).prop_map(|seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Rotation6d::from_matrix(&random_rotation(&mut rng))
    })
}

fn arb_hand_pose(handedness: Handedness) -> impl Strategy<Value = HandPose> {
    (
        prop::array::uniform3(-0.5f64..0.5),
        arb_rotation6d(),
        prop::collection::vec(arb_rotation6d(), 15),
    )
        .prop_map(move |(t, wrist, joints)| HandPose {
            translation: Vector3::new(t[0], t[1], t[2]),
            wrist,
            joints: std::array::from_fn(|i| joints[i]),
            handedness,
        })
}

fn arb_frame() -> impl Strategy<Value = HoiFrame> {
    (
        prop::array::uniform3(-0.5f64..0.5),
        arb_rotation6d(),
        0.0f64..1.5,
        arb_hand_pose(Handedness::Left),
        arb_hand_pose(Handedness::Right),
    )
        .prop_map(|(t, rot, alpha, left, right)| HoiFrame {
            object: ObjectPose {
                translation: Vector3::new(t[0], t[1], t[2]),
                rotation: rot,
                articulation: alpha,
            },
            left,
            right,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn flatten_unflatten_is_identity(frame in arb_frame()) {
        let v = flatten_frame(&frame);
        let back = unflatten_frame(&v).unwrap();
        // Bitwise round trip for every stored real.
        prop_assert_eq!(flatten_frame(&back).to_vec(), v.to_vec());
        prop_assert_eq!(back, frame);
    }

    #[test]
    fn fk_translation_equivariance(pose in arb_hand_pose(Handedness::Right),
                                   t in prop::array::uniform3(-1.0f64..1.0)) {
        let model = HandModel::standard();
        let shift = Vector3::new(t[0], t[1], t[2]);
        let base = hand_forward_kinematics(&pose, &model).unwrap();
        let mut moved_pose = pose.clone();
        moved_pose.translation += shift;
        let moved = hand_forward_kinematics(&moved_pose, &model).unwrap();
        for (a, b) in moved.joints.iter().zip(&base.joints) {
            prop_assert!((a - b - shift).norm() < 1e-9);
        }
        for (a, b) in moved.vertices.iter().zip(&base.vertices) {
            prop_assert!((a - b - shift).norm() < 1e-9);
        }
    }

    #[test]
    fn fk_wrist_rotation_equivariance(pose in arb_hand_pose(Handedness::Left),
                                      extra in arb_rotation6d()) {
        // Rotating the wrist by R maps every point p to R p (at zero
        // translation), for any finger configuration.
        let model = HandModel::standard();
        let mut zeroed = pose.clone();
        zeroed.translation = Vector3::zeros();
        zeroed.wrist = Rotation6d::identity();
        let base = hand_forward_kinematics(&zeroed, &model).unwrap();
        let mut rotated = zeroed.clone();
        rotated.wrist = extra;
        let m = extra.to_matrix().unwrap();
        let turned = hand_forward_kinematics(&rotated, &model).unwrap();
        for (a, b) in turned.joints.iter().zip(&base.joints) {
            prop_assert!((a - m * b).norm() < 1e-9);
        }
    }
}
