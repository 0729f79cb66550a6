mod common;

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use asmseq::features::{
    attribute_feature, frame_score, pair_agreement, pose_feature, FeatureConfig, MissingPosePolicy, ATTRIBUTE, POSE,
};
use asmseq::kinematics::{component_layout, predicted_relative_translations, KinematicsError};
use asmseq::{mean_pose, Assembly, FrameObservation, Joint, PartInstance, Pose, Scene};
use common::*;
use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_rotation(rng: &mut ChaCha8Rng, spread: f64) -> UnitQuaternion<f64> {
    let axis = Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    );
    let axis = nalgebra::Unit::new_normalize(axis + Vector3::new(1e-3, 0.0, 0.0));
    UnitQuaternion::from_axis_angle(&axis, rng.random_range(-spread..spread))
}

fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
    let t = Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    );
    Pose::new(t, random_rotation(rng, PI))
}

/// A frame placing every component of `s` at an independent random pose.
fn observe(rng: &mut ChaCha8Rng, s: &Assembly) -> FrameObservation {
    let layout = component_layout(s).unwrap();
    let globals: Vec<Pose> = s.connected_components().iter().map(|_| random_pose(rng)).collect();
    let mut obs = FrameObservation::new(0);
    for (i, p) in &layout.poses {
        obs.part_poses.insert(*i, globals[layout.component[i]].compose(p));
    }
    obs
}

fn three_part_scene() -> Arc<Scene> {
    let parts = ["square", "rod", "hub"]
        .iter()
        .enumerate()
        .map(|(n, t)| PartInstance {
            instance_id: n as u32,
            part_type: t.to_string(),
        })
        .collect();
    Arc::new(Scene::new(shapes_catalog(), parts).unwrap())
}

/// Every valid assembly of `k` joints on the scene.
fn assemblies_with(scene: &Arc<Scene>, k: usize) -> Vec<Assembly> {
    let ids: Vec<u32> = scene.instance_ids().collect();
    let mut joints = Vec::new();
    for (n, &i) in ids.iter().enumerate() {
        for &j in &ids[n + 1..] {
            for ci in contacts(scene, i) {
                for cj in contacts(scene, j) {
                    joints.push(Joint::new(i, ci, j, cj));
                }
            }
        }
    }
    let mut out = Vec::new();
    let mut pick = |subset: Vec<Joint>| {
        if let Ok(a) = Assembly::new(scene.clone(), subset) {
            if component_layout(&a).is_ok() {
                out.push(a);
            }
        }
    };
    match k {
        1 => joints.iter().for_each(|j| pick(vec![*j])),
        2 => {
            for (n, a) in joints.iter().enumerate() {
                for b in &joints[n + 1..] {
                    pick(vec![*a, *b]);
                }
            }
        }
        _ => unreachable!(),
    }
    out
}

#[test]
fn true_hypothesis_maximizes_the_pose_feature() {
    let scene = three_part_scene();
    let cfg = FeatureConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for k in [1, 2] {
        let hypotheses = assemblies_with(&scene, k);
        assert!(hypotheses.len() > 10);
        for _ in 0..10 {
            let truth = &hypotheses[rng.random_range(0..hypotheses.len())];
            let obs = observe(&mut rng, truth);
            let best = pose_feature(&obs, truth, &cfg).unwrap();
            // Zero residual; a single joint leaves two open pairs at alpha = 1.
            let want = if k == 1 { -2.0 } else { 0.0 };
            assert!((best - want).abs() < 1e-9, "true hypothesis scores {best}");
            for h in &hypotheses {
                let v = pose_feature(&obs, h, &cfg).unwrap();
                assert!(v <= best + 1e-12, "{h:?} scores {v} above truth {truth:?} at {best}");
            }
        }
    }
}

#[test]
fn unobserved_parts_follow_the_missing_pose_policy() {
    let scene = three_part_scene();
    let a = Assembly::new(scene.clone(), [Joint::new(0, 0, 1, 0)]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut obs = observe(&mut rng, &a);
    obs.part_poses.remove(&2);
    let skip = FeatureConfig::default();
    let zero = FeatureConfig {
        missing_pose_policy: MissingPosePolicy::ZeroScore,
        ..FeatureConfig::default()
    };
    // The connected pair matches exactly; both open pairs involve part 2.
    assert!(pose_feature(&obs, &a, &skip).unwrap().abs() < 1e-12);
    assert!((pose_feature(&obs, &a, &zero).unwrap() + 2.0).abs() < 1e-12);
}

#[test]
fn rank_deficient_mean_is_an_error() {
    let rz = |t: f64| Pose::new(Vector3::zeros(), UnitQuaternion::from_axis_angle(&Vector3::z_axis(), t));
    assert!(matches!(mean_pose(&[rz(0.0), rz(PI)]), Err(KinematicsError::DegenerateMean(_))));
    assert_eq!(mean_pose(&[]), Err(KinematicsError::EmptyInput));
}

#[test]
fn feature_weights_are_linear() {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let scene = random_scene(&mut rng, u128::MAX);
    for _ in 0..50 {
        let truth = random_assembly(&mut rng, &scene, 4);
        let hyp = random_assembly(&mut rng, &scene, 4);
        let mut obs = observe(&mut rng, &truth);
        let ids: Vec<u32> = scene.instance_ids().collect();
        for (n, &i) in ids.iter().enumerate() {
            for &j in &ids[n + 1..] {
                obs.set_pair(i, j, rng.random()).unwrap();
            }
        }
        let cfg = |w: &[(&str, f64)]| FeatureConfig {
            lambda: 3.0,
            alpha: 0.5,
            weights: w.iter().map(|(k, v)| (k.to_string(), *v)).collect::<BTreeMap<_, _>>(),
            missing_pose_policy: MissingPosePolicy::SkipPair,
        };
        let f = |w: &[(&str, f64)]| frame_score(&obs, None, &hyp, None, &cfg(w)).unwrap();
        let (a, b) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        // Disjoint supports add exactly.
        assert_eq!(f(&[(POSE, a), (ATTRIBUTE, b)]), f(&[(POSE, a)]) + f(&[(ATTRIBUTE, b)]));
        let sum = f(&[(POSE, a + b), (ATTRIBUTE, 1.0)]);
        let parts = f(&[(POSE, a)]) + f(&[(POSE, b), (ATTRIBUTE, 1.0)]);
        assert!((sum - parts).abs() <= 1e-12 * (1.0 + sum.abs()), "{sum} vs {parts}");
        assert_eq!(
            f(&[(POSE, a), (ATTRIBUTE, b)]).to_bits(),
            f(&[(POSE, a), (ATTRIBUTE, b)]).to_bits()
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn pair_agreement_is_bounded_and_monotone(p in 0.0f64..=1.0, q in 0.0f64..=1.0) {
        for same in [true, false] {
            let v = pair_agreement(p, same);
            prop_assert!((-2.0..=2.0).contains(&v));
            let (lo, hi) = if p <= q { (p, q) } else { (q, p) };
            // Larger p moves toward the connected one-hot direction.
            if same {
                prop_assert!(pair_agreement(lo, true) <= pair_agreement(hi, true));
            } else {
                prop_assert!(pair_agreement(lo, false) >= pair_agreement(hi, false));
            }
        }
    }

    #[test]
    fn attribute_feature_sums_pair_agreements(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scene = random_scene(&mut rng, u128::MAX);
        let a = random_assembly(&mut rng, &scene, 5);
        let mut obs = FrameObservation::new(0);
        let ids: Vec<u32> = scene.instance_ids().collect();
        let mut want = 0.0;
        for (n, &i) in ids.iter().enumerate() {
            for &j in &ids[n + 1..] {
                if rng.random_bool(0.8) {
                    let p: f64 = rng.random();
                    obs.set_pair(j, i, p).unwrap();
                    let same = a.same_body(i, j).unwrap();
                    want += if same { 2.0 * p - 1.0 } else { 1.0 - 2.0 * p } * 2.0;
                }
            }
        }
        prop_assert!((attribute_feature(&obs, &a) - want).abs() <= 1e-9);
    }

    #[test]
    fn mean_of_one_pose_is_that_pose(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_pose(&mut rng);
        let m = mean_pose(&[p]).unwrap();
        prop_assert_eq!(m.translation, p.translation);
        prop_assert!(m.rotation.angle_to(&p.rotation) <= 1e-9);
    }

    #[test]
    fn mean_rotation_matches_the_polar_factor(seed in any::<u64>(), n in 2usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let center = random_rotation(&mut rng, PI);
        let poses: Vec<Pose> = (0..n)
            .map(|_| Pose::new(Vector3::zeros(), center * random_rotation(&mut rng, 1.0)))
            .collect();
        let m = mean_pose(&poses).unwrap();
        let r = m.rotation_matrix();
        prop_assert!((r.transpose() * r - Matrix3::identity()).norm() <= 1e-9);
        prop_assert!((r.determinant() - 1.0).abs() <= 1e-9);
        let avg = poses.iter().map(|p| p.rotation_matrix()).sum::<Matrix3<f64>>() / n as f64;
        prop_assert!((r - polar_rotation(&avg)).norm() <= 1e-9);

        // Left invariance: rotating every input rotates the mean.
        let g = random_rotation(&mut rng, PI);
        let moved: Vec<Pose> = poses.iter().map(|p| Pose::new(p.translation, g * p.rotation)).collect();
        let mm = mean_pose(&moved).unwrap();
        prop_assert!(mm.rotation.angle_to(&(g * m.rotation)) <= 1e-9);
    }

    #[test]
    fn relative_translations_are_antisymmetric(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scene = random_scene(&mut rng, u128::MAX);
        let a = random_assembly(&mut rng, &scene, 5);
        let layout = component_layout(&a).unwrap();
        for rt in predicted_relative_translations(&a).unwrap() {
            let (i, j) = rt.pair;
            prop_assert!(i < j);
            prop_assert_eq!(layout.delta(i, j).unwrap(), rt.delta);
            prop_assert_eq!(layout.delta(j, i).unwrap(), rt.reversed());
            prop_assert!(a.same_body(i, j).unwrap());
        }
        for j in a.joints() {
            // Joined contact frames coincide.
            let pa = layout.poses[&j.part_a].compose(&scene.catalog().contact_pose(scene.part_type_of(j.part_a).unwrap(), j.contact_a).unwrap());
            let pb = layout.poses[&j.part_b].compose(&scene.catalog().contact_pose(scene.part_type_of(j.part_b).unwrap(), j.contact_b).unwrap());
            prop_assert!((pa.translation - pb.translation).norm() <= 1e-9);
        }
    }
}
