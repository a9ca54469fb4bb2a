use std::f64::consts::FRAC_PI_2;

use nalgebra::Vector3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nsm_core::features::{eigen_features, extract_keypose, gestalt_descriptor, GestaltParams};
use nsm_core::{Point, RigidTransform};

/// A lopsided, elongated blob: heavier towards +x, stretched along x.
fn segment(seed: u64, n: usize) -> Vec<Point> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (a, b) = (rng.random_range(0.8..1.8), rng.random_range(0.2..0.6));
    (0..n)
        .map(|_| {
            let t: f64 = rng.random();
            Point::new(
                a * (t * t * 2.0 - 0.5),
                rng.random_range(-b..b),
                rng.random_range(0.0..2.0) * t,
            )
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn position_follows_translation_and_quarter_turns(seed in any::<u64>(), n in 3usize..800, quarter in 0i32..4, t in prop::array::uniform3(-100.0f64..100.0)) {
        let pts = segment(seed, n);
        let g = RigidTransform::from_yaw(quarter as f64 * FRAC_PI_2, Vector3::from(t));
        let moved: Vec<Point> = pts.iter().map(|p| g.apply(p)).collect();
        let a = extract_keypose(&pts).unwrap();
        let b = extract_keypose(&moved).unwrap();
        prop_assert!((g.apply(&a.position()) - b.position()).norm() < 1e-9);
    }

    #[test]
    fn height_of_position_is_yaw_invariant(seed in any::<u64>(), n in 3usize..800, yaw in -3.2f64..3.2) {
        let pts = segment(seed, n);
        let g = RigidTransform::from_yaw(yaw, Vector3::zeros());
        let moved: Vec<Point> = pts.iter().map(|p| g.apply(p)).collect();
        let (a, b) = (extract_keypose(&pts).unwrap(), extract_keypose(&moved).unwrap());
        prop_assert!((a.position().z - b.position().z).abs() < 1e-12);
    }

    #[test]
    fn heading_follows_yaw(seed in any::<u64>(), n in 200usize..800, yaw in -3.2f64..3.2) {
        let pts = segment(seed, n);
        let a = extract_keypose(&pts).unwrap();
        prop_assume!(!a.isotropic);
        let g = RigidTransform::from_yaw(yaw, Vector3::new(3.0, 1.0, 0.0));
        let moved: Vec<Point> = pts.iter().map(|p| g.apply(p)).collect();
        let b = extract_keypose(&moved).unwrap();
        prop_assert!((g.apply_vector(&a.x_axis()) - b.x_axis()).norm() < 1e-6);
    }

    #[test]
    fn descriptor_invariant_under_joint_motion(seed in any::<u64>(), n in 3usize..800, e in prop::array::uniform3(-3.2f64..3.2)) {
        let pts = segment(seed, n);
        let params = GestaltParams::default();
        let kp = extract_keypose(&pts).unwrap();
        let d = gestalt_descriptor(&pts, &kp, &params).unwrap();
        let g = RigidTransform::from_euler(e[0], e[1], e[2], Vector3::new(-20.0, 5.0, 1.0));
        let moved: Vec<Point> = pts.iter().map(|p| g.apply(p)).collect();
        let d2 = gestalt_descriptor(&moved, &kp.transformed(&g), &params).unwrap();
        prop_assert!(d.l2_distance(&d2) <= 1e-9);
    }

    #[test]
    fn descriptor_ignores_point_order(seed in any::<u64>(), n in 3usize..800) {
        let pts = segment(seed, n);
        let mut shuffled = pts.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(!seed);
        for i in (1..n).rev() {
            shuffled.swap(i, rng.random_range(0..=i));
        }
        let params = GestaltParams::default();
        let a = gestalt_descriptor(&pts, &extract_keypose(&pts).unwrap(), &params).unwrap();
        let b = gestalt_descriptor(&shuffled, &extract_keypose(&shuffled).unwrap(), &params).unwrap();
        prop_assert!(a.l2_distance(&b) <= 1e-9);
    }

    #[test]
    fn eigen_features_and_variances_in_range(seed in any::<u64>(), n in 3usize..500, flat in any::<bool>()) {
        let mut pts = segment(seed, n);
        if flat {
            for p in &mut pts {
                p.z = 0.0;
            }
        }
        let e = eigen_features(&pts).unwrap();
        prop_assert!(e.planarity >= 0.0 && e.cylindricality >= 0.0);
        prop_assert!(e.planarity + e.cylindricality <= 1.0 + 1e-12);
        let d = gestalt_descriptor(&pts, &extract_keypose(&pts).unwrap(), &GestaltParams::default()).unwrap();
        for b in 0..32 {
            prop_assert!(d.bin(b).1 >= 0.0);
        }
    }
}

#[test]
fn identical_points_have_zero_features() {
    let pts = vec![Point::new(1.0, 2.0, 3.0); 10];
    let e = eigen_features(&pts).unwrap();
    assert_eq!((e.planarity, e.cylindricality), (0.0, 0.0));
}
