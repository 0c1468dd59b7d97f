use clusterpose::{project, reprojection_error, CameraIntrinsics, Correspondence, Pose, Vec2, Vec3};
use proptest::prelude::*;

fn pose_strategy() -> impl Strategy<Value = Pose> {
    (
        prop::array::uniform3(-3.0f64..3.0),
        prop::array::uniform3(-1.0f64..1.0),
    )
        .prop_map(|(r, t)| Pose::from_axis_angle(Vec3::from(r), Vec3::from(t)))
}

proptest! {
    #[test]
    fn compose_matches_matrix_product(a in pose_strategy(), b in pose_strategy()) {
        let lhs = a.compose(&b).to_homogeneous();
        let rhs = a.to_homogeneous() * b.to_homogeneous();
        prop_assert!((lhs - rhs).abs().max() < 1e-12);
    }

    #[test]
    fn inverse_composes_to_identity(a in pose_strategy(), p in prop::array::uniform3(-1.0f64..1.0)) {
        let id = a.compose(&a.inverse());
        prop_assert!(id.rotation_angle_to(&Pose::identity()) < 1e-12);
        prop_assert!(id.translation().norm() < 1e-12);
        let x = Vec3::from(p);
        prop_assert!((a.inverse().transform(&a.transform(&x)) - x).norm() < 1e-12);
    }

    #[test]
    fn projection_round_trips(x in -1.0f64..1.0, y in -1.0f64..1.0, z in 0.1f64..10.0) {
        let cam = CameraIntrinsics::default();
        let p = Vec3::new(x, y, z);
        let uv = project(&cam, &Pose::identity(), &p).unwrap();
        prop_assert!((cam.back_project(&uv, z) - p).norm() < 1e-12 * z.max(1.0));
    }

    #[test]
    fn reprojection_error_matches_direct_rms(
        offsets in prop::collection::vec(prop::array::uniform2(-5.0f64..5.0), 10),
        weights in prop::collection::vec(0.05f64..1.0, 10),
        scale in 0.01f64..100.0,
    ) {
        let cam = CameraIntrinsics::default();
        let pose = Pose::from_axis_angle(Vec3::new(0.1, 0.2, -0.3), Vec3::new(0.0, 0.0, 1.0));
        let corr: Vec<Correspondence> = offsets
            .iter()
            .zip(&weights)
            .enumerate()
            .map(|(i, (o, &w))| {
                let p = Vec3::new(0.01 * i as f64, -0.02 * i as f64, 0.005 * i as f64);
                let uv = project(&cam, &pose, &p).unwrap() + Vec2::new(o[0], o[1]);
                Correspondence::new(i as u32, p, uv, w)
            })
            .collect();
        let num: f64 = offsets.iter().zip(&weights).map(|(o, w)| w * (o[0] * o[0] + o[1] * o[1])).sum();
        let den: f64 = weights.iter().sum();
        let e = reprojection_error(&cam, &pose, &corr).unwrap();
        prop_assert!((e - (num / den).sqrt()).abs() < 1e-9);
        let scaled: Vec<Correspondence> = corr.iter().map(|c| Correspondence { weight: c.weight * scale, ..*c }).collect();
        prop_assert!((reprojection_error(&cam, &pose, &scaled).unwrap() - e).abs() < 1e-9);
    }
}
