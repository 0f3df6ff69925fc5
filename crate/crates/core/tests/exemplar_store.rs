mod common;

use nalgebra::{Vector2, Vector3};
use proptest::prelude::*;

use common::{mesh, random_rotation, rng, small_set, Z_BAR};
use pfa_core::exemplar::{
    fit_exemplar_intrinsics, generate_exemplar_set, load_set, mean_nearest_distance, save_set,
    ExemplarError, ExemplarSet,
};
use pfa_core::geom::{geodesic_distance, project, sample_rotations};
use pfa_core::RigidPose;

#[test]
fn exemplars_share_translation_and_intrinsics() {
    let set = small_set();
    assert_eq!(set.len(), 200);
    for (i, e) in set.exemplars().iter().enumerate() {
        assert_eq!(e.id() as usize, i);
        assert_eq!(*e.pose().translation(), Vector3::new(0.0, 0.0, Z_BAR));
        assert_eq!(e.k_r(), set.k_r());
        assert_eq!(e.mesh_hash(), mesh().hash());
    }
}

#[test]
fn loaded_exemplars_keep_reprojection_invariant() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("set.pfax");
    let set = small_set().prefix(10);
    save_set(&set, &path).unwrap();
    let loaded = load_set(&path).unwrap();
    assert_eq!(loaded, set);
    for e in loaded.exemplars() {
        let map = e.coord_map();
        assert!(map.mask_count() > 0);
        for (x, y, s) in map.masked_pixels() {
            let u = project(e.k_r(), e.pose(), &s.point).unwrap();
            let center = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
            assert!(
                (u - center).norm() < 0.71,
                "exemplar {} pixel ({x}, {y})",
                e.id()
            );
        }
    }
}

#[test]
fn same_seed_gives_identical_files() {
    let k_r = fit_exemplar_intrinsics(mesh(), Z_BAR, 48.0).unwrap();
    let a = generate_exemplar_set(mesh(), 5, Z_BAR, &k_r, 77).unwrap();
    let b = generate_exemplar_set(mesh(), 5, Z_BAR, &k_r, 77).unwrap();
    assert_eq!(a.mesh_hash(), b.mesh_hash());
    assert_eq!(a.to_bytes(), b.to_bytes());
}

#[test]
fn file_size_grows_linearly_with_count() {
    let set = small_set();
    let sizes: Vec<usize> = [10, 20, 40]
        .iter()
        .map(|&n| set.prefix(n).to_bytes().len())
        .collect();
    // equal per-exemplar payload up to coverage variation, and a fixed header
    let per = (sizes[2] - sizes[1]) as f64 / 20.0;
    let first = (sizes[1] - sizes[0]) as f64 / 10.0;
    assert!((per - first).abs() < 0.5 * first, "{sizes:?}");
    assert!(sizes[0] as f64 > 10.0 * 0.5 * per);
}

#[test]
fn corrupted_and_future_files_are_rejected() {
    let mut bytes = small_set().prefix(10).to_bytes();
    let mut bad_magic = bytes.clone();
    bad_magic[0] ^= 0xff;
    assert!(matches!(
        ExemplarSet::from_bytes(&bad_magic),
        Err(ExemplarError::BadMagic { .. })
    ));
    // version field follows the 4-byte magic
    let v = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    bytes[4..8].copy_from_slice(&(v + 1).to_le_bytes());
    let err = ExemplarSet::from_bytes(&bytes).unwrap_err();
    assert!(matches!(err, ExemplarError::VersionMismatch { .. }));
    let msg = err.to_string();
    assert!(
        msg.contains(&(v + 1).to_string()) && msg.contains(&v.to_string()),
        "{msg}"
    );
}

#[test]
fn query_equals_brute_force_sort() {
    let set = small_set();
    let mut r = rng(21);
    for _ in 0..20 {
        let q = RigidPose::new(random_rotation(&mut r), Vector3::new(0.0, 0.0, Z_BAR)).unwrap();
        let mut brute: Vec<(f64, u32)> = set
            .exemplars()
            .iter()
            .map(|e| (geodesic_distance(q.rotation(), e.pose().rotation()), e.id()))
            .collect();
        brute.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for n in [1, 4, 17, 200, 500] {
            let got: Vec<u32> = set
                .query_nearest(&q, n)
                .unwrap()
                .iter()
                .map(|r| r.exemplar.id())
                .collect();
            let want: Vec<u32> = brute.iter().take(n).map(|b| b.1).collect();
            assert_eq!(got, want);
        }
    }
}

#[test]
fn query_of_an_exemplar_pose_returns_it() {
    let set = small_set();
    let e = &set.exemplars()[37];
    let hit = set.query_nearest(e.pose(), 1).unwrap();
    assert_eq!(hit[0].exemplar.id(), 37);
    assert!(hit[0].distance < 1e-6);
}

#[test]
fn four_nearest_are_distinct_and_sorted() {
    let set = small_set();
    let q = RigidPose::new(random_rotation(&mut rng(5)), Vector3::new(0.0, 0.0, Z_BAR)).unwrap();
    let hits = set.query_nearest(&q, 4).unwrap();
    let mut ids: Vec<u32> = hits.iter().map(|h| h.exemplar.id()).collect();
    ids.dedup();
    assert_eq!(ids.len(), 4);
    assert!(hits.windows(2).all(|w| w[0].distance <= w[1].distance));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn nested_prefixes_never_increase_distance(seed in any::<u64>(), a in 1usize..100, b in 1usize..100) {
        let rotations = sample_rotations(200, seed);
        let queries = sample_rotations(50, seed ^ 1);
        let (small, large) = if a <= b { (a, b) } else { (b, a) };
        let ds = mean_nearest_distance(&rotations[..small], &queries);
        let dl = mean_nearest_distance(&rotations[..large], &queries);
        prop_assert!(dl <= ds);
    }

    #[test]
    fn query_distance_is_deterministic(seed in any::<u64>()) {
        let set = small_set();
        prop_assert_eq!(set.mean_query_distance(20, seed).unwrap(), set.mean_query_distance(20, seed).unwrap());
    }
}

#[test]
fn set_containing_query_contributes_zero() {
    let rs = sample_rotations(10, 1);
    assert_eq!(mean_nearest_distance(&rs, &rs[3..4]), 0.0);
}
