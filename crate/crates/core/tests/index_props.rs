use nalgebra::Vector3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nsm_core::geometry::check_rotation;
use nsm_core::index::SpatialIndex;
use nsm_core::RigidTransform;

fn brute(data: &[Vec<f64>], q: &[f64]) -> Vec<(f64, usize)> {
    let mut d: Vec<(f64, usize)> = data
        .iter()
        .enumerate()
        .map(|(i, p)| (p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum(), i))
        .collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    d
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(120))]

    #[test]
    fn queries_match_brute_force(seed in any::<u64>(), n in 1usize..=1000, wide in any::<bool>(), k in 1usize..40, r in 0.0f64..3.0) {
        let dim = if wide { 66 } else { 3 };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..dim).map(|_| rng.random_range(0..12) as f64 * 0.5).collect())
            .collect();
        let q: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..7.0)).collect();
        let index = SpatialIndex::from_rows(&data).unwrap();
        let want = brute(&data, &q);

        let k = k.min(n);
        let got = index.knn(&q, k).unwrap();
        prop_assert_eq!(got.len(), k);
        for (g, w) in got.iter().zip(&want) {
            prop_assert_eq!(g.id, w.1);
            prop_assert!((g.distance - w.0.sqrt()).abs() <= 1e-9);
        }

        let r = if wide { r * 6.0 } else { r };
        let mut within: Vec<usize> = want.iter().filter(|w| w.0 <= r * r).map(|w| w.1).collect();
        within.sort_unstable();
        prop_assert_eq!(index.radius_neighbors(&q, r), within);
    }

    #[test]
    fn composition_stays_rigid(seed in any::<u64>(), steps in 1usize..60) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = RigidTransform::identity();
        for _ in 0..steps {
            let step = RigidTransform::from_euler(
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
                Vector3::new(rng.random(), rng.random(), rng.random()),
            );
            t = t.compose(&step);
        }
        prop_assert!(check_rotation(t.rotation()).is_ok());
        prop_assert!(check_rotation(t.inverse().rotation()).is_ok());
    }
}

#[test]
fn knn_rejects_bad_queries() {
    let index = SpatialIndex::from_rows(&[vec![0.0, 0.0, 0.0]]).unwrap();
    assert!(index.knn(&[0.0, 0.0], 1).is_err());
    assert!(index.knn(&[0.0, 0.0, 0.0], 0).is_err());
    let empty = SpatialIndex::from_rows::<Vec<f64>>(&[]);
    assert!(empty.is_err() || empty.unwrap().knn(&[0.0; 3], 1).is_err());
}
