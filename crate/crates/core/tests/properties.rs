//! Randomized invariants over the data pipeline, metrics and the tensor
//! kernel.

use proptest::prelude::*;

use crowdcast::data::{
    derive_kinematics, extract_windows, rotate_augment, NormalizationSpec, Scene,
    TrajectorySample,
};
use crowdcast::eval::mad;
use crowdcast::synth::scene_to_text;
use crowdcast::tensor::{Tape, Tensor};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Window extraction finds exactly the runs of H+P consecutive frames.
    #[test]
    fn windowing_matches_brute_force(mask in prop::collection::vec(any::<bool>(), 7..20)) {
        let mut scene = Scene::new("p", 0.5);
        for (f, &present) in mask.iter().enumerate() {
            if present {
                scene.insert(f as i64, 1, [f as f64, 0.0]).unwrap();
            }
        }
        let (h, p) = (4usize, 3usize);
        let windows = extract_windows(&scene, h, p);
        let brute: usize = (0..mask.len().saturating_sub(h + p - 1))
            .filter(|&start| mask[start..start + h + p].iter().all(|&b| b))
            .count();
        prop_assert_eq!(windows.len(), brute);
    }

    /// Rotation is an isometry: norms and pairwise distances survive.
    #[test]
    fn rotation_preserves_distances(
        points in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 2..8),
        angle in 0.0f64..360.0,
    ) {
        let future: Vec<[f64; 2]> = points.iter().map(|&(x, y)| [x, y]).collect();
        let sample = TrajectorySample {
            ped_id: 1,
            t_last: 0,
            obs: vec![],
            future: future.clone(),
            anchor: [0.0, 0.0],
        };
        let turned = rotate_augment(&sample, angle);
        for (a, b) in future.iter().zip(turned.future.iter()) {
            let (na, nb) = (a[0].hypot(a[1]), b[0].hypot(b[1]));
            prop_assert!((na - nb).abs() < 1e-9);
        }
        for i in 0..future.len() {
            for j in i + 1..future.len() {
                let d = |p: &[[f64; 2]]| (p[i][0] - p[j][0]).hypot(p[i][1] - p[j][1]);
                prop_assert!((d(&future) - d(&turned.future)).abs() < 1e-9);
            }
        }
    }

    /// Softmax rows are probability distributions for any finite input.
    #[test]
    fn softmax_rows_are_simplex(vals in prop::collection::vec(-100.0f64..100.0, 12)) {
        let t = Tape::new();
        let x = t.leaf(Tensor::new(vec![3, 4], vals));
        let s = t.value(t.softmax(x, 1).unwrap());
        for r in 0..3 {
            let row: f64 = (0..4).map(|c| s.at(r, c)).sum();
            prop_assert!((row - 1.0).abs() < 1e-9);
            prop_assert!((0..4).all(|c| s.at(r, c) >= 0.0));
        }
    }

    /// Kinematics invert: cumulative integration of backward differences
    /// recovers the positions.
    #[test]
    fn kinematics_integrate_back(
        start in (-10.0f64..10.0, -10.0f64..10.0),
        steps in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 2..8),
        dt in 0.1f64..1.0,
    ) {
        let mut positions = vec![[start.0, start.1]];
        for (dx, dy) in &steps {
            let last = positions.last().unwrap();
            positions.push([last[0] + dx, last[1] + dy]);
        }
        let states = derive_kinematics(&positions, dt).unwrap();
        for t in 1..positions.len() {
            let integrated = [
                positions[t - 1][0] + states[t].vel[0] * dt,
                positions[t - 1][1] + states[t].vel[1] * dt,
            ];
            prop_assert!((integrated[0] - positions[t][0]).abs() < 1e-9);
            prop_assert!((integrated[1] - positions[t][1]).abs() < 1e-9);
        }
    }

    /// MAD is symmetric, non-negative, and zero only on equal inputs.
    #[test]
    fn mad_is_a_premetric(pairs in prop::collection::vec(((-5.0f64..5.0, -5.0f64..5.0), (-5.0f64..5.0, -5.0f64..5.0)), 1..6)) {
        let a: Vec<[f64; 2]> = pairs.iter().map(|&((x, y), _)| [x, y]).collect();
        let b: Vec<[f64; 2]> = pairs.iter().map(|&(_, (x, y))| [x, y]).collect();
        let ab = mad(&a, &b).unwrap();
        let ba = mad(&b, &a).unwrap();
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(mad(&a, &a).unwrap(), 0.0);
    }

    /// Scene text serialization round-trips through the parser.
    #[test]
    fn scene_text_round_trips(records in prop::collection::btree_map(
        (0i64..50, 1i64..10),
        (-100.0f64..100.0, -100.0f64..100.0),
        1..30,
    )) {
        let mut scene = Scene::new("rt", 0.5);
        for (&(f, p), &(x, y)) in &records {
            scene.insert(f, p, [x, y]).unwrap();
        }
        let parsed =
            crowdcast::data::parse_trajectory_file(&scene_to_text(&scene), "rt", 0.5).unwrap();
        prop_assert_eq!(parsed.records, scene.records);
    }

    /// Normalization then denormalization is the identity.
    #[test]
    fn normalization_round_trip(
        points in prop::collection::vec((-20.0f64..20.0, -20.0f64..20.0), 1..6),
        anchor in (-20.0f64..20.0, -20.0f64..20.0),
        scale in 0.5f64..20.0,
    ) {
        let spec = NormalizationSpec { anchor: [anchor.0, anchor.1], scale };
        let future: Vec<[f64; 2]> = points.iter().map(|&(x, y)| [x, y]).collect();
        let sample = TrajectorySample {
            ped_id: 1,
            t_last: 0,
            obs: vec![],
            future: future.clone(),
            anchor: spec.anchor,
        };
        let normed = crowdcast::data::normalize_sample(&sample, &spec);
        let back = crowdcast::data::denormalize_prediction(&normed.future, &spec);
        for (orig, b) in future.iter().zip(back.iter()) {
            prop_assert!((orig[0] - b[0]).abs() < 1e-9);
            prop_assert!((orig[1] - b[1]).abs() < 1e-9);
        }
    }
}
