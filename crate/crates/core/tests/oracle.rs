mod common;

use grasp_afford::affordance::{AffordanceDb, UnknownPolicy};
use grasp_afford::sim::{
    check_eq1, cue_posterior, exact_posterior, expected_accuracy, generate_world, random_shape,
    sample_dataset, sim_taxonomy, Cue, Rule, World, WorldShape,
};
use grasp_afford::taxonomy::normalize;

use common::joint_table;

/// Prior [1/2, 3/10, 1/5]; emission rows are small rationals.
fn rational_world() -> World {
    let t = sim_taxonomy(3).unwrap();
    World::new(
        normalize(&[0.5, 0.3, 0.2], &t).unwrap(),
        vec![
            vec![0.5, 0.25, 0.25],
            vec![0.1, 0.6, 0.3],
            vec![0.2, 0.2, 0.6],
        ],
        vec![
            vec![0.6, 0.2, 0.2],
            vec![0.25, 0.5, 0.25],
            vec![0.1, 0.1, 0.8],
        ],
    )
    .unwrap()
}

// Frozen from exact rational enumeration.
const POSTERIOR: [[[f64; 3]; 3]; 3] = [
    [
        [0.9287925696594427, 0.04643962848297214, 0.02476780185758514],
        [
            0.7246376811594203,
            0.21739130434782608,
            0.057971014492753624,
        ],
        [0.5586592178770949, 0.08379888268156424, 0.3575418994413408],
    ],
    [
        [0.6048387096774194, 0.3629032258064516, 0.03225806451612903],
        [0.21008403361344538, 0.7563025210084033, 0.03361344537815126],
        [0.24509803921568626, 0.4411764705882353, 0.3137254901960784],
    ],
    [
        [0.684931506849315, 0.2054794520547945, 0.1095890410958904],
        [0.3048780487804878, 0.5487804878048781, 0.14634146341463414],
        [0.17421602787456447, 0.156794425087108, 0.6689895470383276],
    ],
];
const CUE_IMAGE: [[f64; 3]; 3] = [
    [0.78125, 0.09375, 0.125],
    [0.36231884057971014, 0.5217391304347826, 0.11594202898550725],
    [0.373134328358209, 0.26865671641791045, 0.3582089552238806],
];
const CUE_OBJECT: [[f64; 3]; 3] = [
    [0.759493670886076, 0.189873417721519, 0.05063291139240506],
    [0.37037037037037035, 0.5555555555555556, 0.07407407407407407],
    [
        0.29850746268656714,
        0.22388059701492538,
        0.47761194029850745,
    ],
];

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[test]
fn rational_world_matches_frozen_enumeration() {
    let w = rational_world();
    for i in 0..3 {
        for (o, want) in POSTERIOR[i].iter().enumerate() {
            let p = exact_posterior(&w, i, o).unwrap();
            assert!(max_diff(p.probs(), want) <= 1e-12, "({i},{o})");
        }
        let ci = cue_posterior(&w, Cue::Image, i).unwrap();
        assert!(max_diff(ci.probs(), &CUE_IMAGE[i]) <= 1e-12);
        let co = cue_posterior(&w, Cue::Object, i).unwrap();
        assert!(max_diff(co.probs(), &CUE_OBJECT[i]) <= 1e-12);
    }
    assert!((expected_accuracy(&w, Rule::Cnn) - 111.0 / 200.0).abs() <= 1e-12);
    assert!((expected_accuracy(&w, Rule::Affordance) - 61.0 / 100.0).abs() <= 1e-12);
    assert!((expected_accuracy(&w, Rule::Fused) - 169.0 / 250.0).abs() <= 1e-12);
    assert!(check_eq1(&w) <= 1e-15);
}

#[test]
fn seeded_worlds_match_brute_force() {
    for seed in 0..300u64 {
        let w = generate_world(seed, random_shape(seed), 0.8).unwrap();
        let j = joint_table(&w);
        for i in 0..j.i {
            if let Some(p) = j.image_posterior(i) {
                let c = cue_posterior(&w, Cue::Image, i).unwrap();
                assert!(max_diff(c.probs(), &p) <= 1e-12, "seed {seed} image {i}");
            }
            for o in 0..j.o {
                if let Some(p) = j.posterior(i, o) {
                    let e = exact_posterior(&w, i, o).unwrap();
                    assert!(max_diff(e.probs(), &p) <= 1e-12, "seed {seed} ({i},{o})");
                }
            }
        }
        for o in 0..j.o {
            if let Some(p) = j.object_posterior(o) {
                let c = cue_posterior(&w, Cue::Object, o).unwrap();
                assert!(max_diff(c.probs(), &p) <= 1e-12);
            }
        }
        assert!((expected_accuracy(&w, Rule::Cnn) - j.cnn_accuracy()).abs() <= 1e-12);
        assert!((expected_accuracy(&w, Rule::Affordance) - j.affordance_accuracy()).abs() <= 1e-12);
        assert!((expected_accuracy(&w, Rule::Fused) - j.bayes_accuracy()).abs() <= 1e-12);
    }
}

#[test]
fn accuracy_never_below_base_rate() {
    for seed in 0..300u64 {
        let w = generate_world(seed, random_shape(seed), 0.5).unwrap();
        let floor = w.prior.probs().iter().cloned().fold(0.0, f64::max);
        for rule in [Rule::Cnn, Rule::Affordance, Rule::Fused] {
            assert!(
                expected_accuracy(&w, rule) >= floor - 1e-12,
                "seed {seed} {rule:?}"
            );
        }
    }
}

#[test]
fn sampled_affordances_converge_to_world_conditionals() {
    let shape = WorldShape::new(4, 3, 3).unwrap();
    let w = generate_world(2024, shape, 2.0).unwrap();
    let data = sample_dataset(&w, 100_000, 99).unwrap();
    let db = AffordanceDb::build(&data.records, &w.taxonomy, 0.0).unwrap();
    let j = joint_table(&w);
    let mut checked = 0;
    for o in 0..j.o {
        let name = grasp_afford::sim::object_name(o);
        let Some(entry) = db.get(&name) else { continue };
        if entry.counts.iter().sum::<u64>() < 1000 {
            continue;
        }
        let est = db.lookup(&name, &w.taxonomy, UnknownPolicy::Error).unwrap();
        let truth = j.object_posterior(o).unwrap();
        let l1: f64 = est
            .dist
            .probs()
            .iter()
            .zip(&truth)
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(l1 <= 0.05, "object {o}: L1 {l1}");
        checked += 1;
    }
    assert!(checked >= 2);
}
