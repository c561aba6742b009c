use grasp_afford::affordance::{AffordanceDb, AffordanceRecord, UnknownPolicy};
use grasp_afford::eval::{evaluate, run_pipeline, PipelineConfig, PipelineMode};
use grasp_afford::par::Execution;
use grasp_afford::scores::{from_logits, ParseMode, ScoreFile, ScoreRecord};
use grasp_afford::sim::{
    check_eq1, expected_accuracy, generate_world, random_shape, Rule, EQ1_TOL,
};
use grasp_afford::taxonomy::{
    argmax_grasp, fuse, fuse_linear, normalize, restrict, GraspDistribution, GraspTaxonomy,
};
use num_rational::Ratio;
use proptest::prelude::*;
use proptest::sample::subsequence;

fn focus() -> GraspTaxonomy {
    GraspTaxonomy::focus()
}

fn weights(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..10.0, n)
        .prop_filter("positive mass", |w| w.iter().sum::<f64>() > 1e-6)
}

fn positive_weights(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(1e-3f64..10.0, n)
}

fn dist(w: &[f64]) -> GraspDistribution {
    normalize(w, &focus()).unwrap()
}

fn records() -> impl Strategy<Value = Vec<AffordanceRecord>> {
    let objects = prop::sample::select(vec!["mug", "Rod", "small tool", "towel", "wrench"]);
    let grasps = prop::sample::select(grasp_afford::taxonomy::FOCUS_LABELS.to_vec());
    prop::collection::vec((objects, grasps), 1..40).prop_map(|v| {
        v.into_iter()
            .map(|(o, g)| AffordanceRecord::new(o, g))
            .collect()
    })
}

proptest! {
    #[test]
    fn fuse_with_uniform_cue_and_prior_is_identity(w in weights(4)) {
        let p = dist(&w);
        let u = focus().uniform();
        let fused = fuse(&p, &u, &u).unwrap();
        prop_assert!(fused.max_abs_diff(&p) <= 1e-12);
    }

    #[test]
    fn fuse_is_symmetric_in_cues(a in positive_weights(4), b in weights(4), prior in positive_weights(4)) {
        let (a, b, prior) = (dist(&a), dist(&b), dist(&prior));
        prop_assert_eq!(fuse(&a, &b, &prior).unwrap(), fuse(&b, &a, &prior).unwrap());
    }

    #[test]
    fn positive_scaling_leaves_fusion_unchanged(
        a in positive_weights(4),
        b in positive_weights(4),
        scale in 1e-6f64..1e6,
    ) {
        let prior = focus().uniform();
        let base = fuse(&dist(&a), &dist(&b), &prior).unwrap();
        let scaled: Vec<f64> = a.iter().map(|x| x * scale).collect();
        let other = fuse(&dist(&scaled), &dist(&b), &prior).unwrap();
        prop_assert!(base.max_abs_diff(&other) <= 1e-12);
        prop_assert_eq!(argmax_grasp(&base), argmax_grasp(&other));
    }

    #[test]
    fn log_and_linear_fusion_agree(
        a in prop::collection::vec(1e-30f64..1.0, 4),
        b in prop::collection::vec(1e-30f64..1.0, 4),
        prior in prop::collection::vec(1e-30f64..1.0, 4),
    ) {
        let (a, b, prior) = (dist(&a), dist(&b), dist(&prior));
        let log = fuse(&a, &b, &prior).unwrap();
        let lin = fuse_linear(&a, &b, &prior).unwrap();
        prop_assert!(log.max_abs_diff(&lin) <= 1e-12);
    }

    #[test]
    fn fused_result_is_a_distribution(a in weights(4), b in weights(4), prior in positive_weights(4)) {
        if let Ok(f) = fuse(&dist(&a), &dist(&b), &dist(&prior)) {
            prop_assert!((f.probs().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(f.probs().iter().all(|x| *x >= 0.0));
        }
    }

    #[test]
    fn restrict_is_idempotent(w in positive_weights(6), picks in subsequence(vec![0usize, 1, 2, 3, 4, 5], 1..=6)) {
        let t = GraspTaxonomy::new(["a", "b", "c", "d", "e", "f"]).unwrap();
        let d = normalize(&w, &t).unwrap();
        let sub = GraspTaxonomy::new(picks.iter().map(|&k| t.label(k).to_string())).unwrap();
        let once = restrict(&d, &sub).unwrap();
        let twice = restrict(&once, &sub).unwrap();
        prop_assert!(once.max_abs_diff(&twice) <= 1e-15);
    }

    #[test]
    fn argmax_is_deterministic(w in weights(4)) {
        let d = dist(&w);
        let first = argmax_grasp(&d).to_string();
        for _ in 0..3 {
            let again = d.clone();
            prop_assert_eq!(argmax_grasp(&again), first.as_str());
        }
    }

    #[test]
    fn build_is_permutation_invariant(recs in records(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut shuffled = recs.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let a = AffordanceDb::build(&recs, &focus(), 0.5).unwrap();
        let b = AffordanceDb::build(&shuffled, &focus(), 0.5).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn db_invariants_hold(recs in records(), alpha in 0.0f64..3.0) {
        let db = AffordanceDb::build(&recs, &focus(), alpha).unwrap();
        let mut total = [0u64; 4];
        for (_, e) in db.entries() {
            let w: Vec<f64> = e.counts.iter().map(|&c| c as f64 + alpha).collect();
            prop_assert!(e.prob.max_abs_diff(&dist(&w)) <= 1e-9);
            prop_assert!((e.prob.probs().iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            for (t, c) in total.iter_mut().zip(&e.counts) {
                *t += c;
            }
        }
        let w: Vec<f64> = total.iter().map(|&c| c as f64 + alpha).collect();
        prop_assert!(db.marginal().max_abs_diff(&dist(&w)) <= 1e-9);

        // marginal == histogram of every record treated as one object
        let pooled: Vec<_> = recs.iter().map(|r| AffordanceRecord::new("all", r.grasp_label.clone())).collect();
        let one = AffordanceDb::build(&pooled, &focus(), alpha).unwrap();
        prop_assert_eq!(&one.get("all").unwrap().prob, db.marginal());
    }

    #[test]
    fn unsmoothed_probs_are_exact_ratios(recs in records()) {
        let db = AffordanceDb::build(&recs, &focus(), 0.0).unwrap();
        for (_, e) in db.entries() {
            let total: u64 = e.counts.iter().sum();
            for (c, p) in e.counts.iter().zip(e.prob.probs()) {
                let exact = Ratio::new(*c, total);
                let as_f64 = *exact.numer() as f64 / *exact.denom() as f64;
                prop_assert_eq!(*p, as_f64);
                prop_assert_eq!(Ratio::new(*c, total), exact);
            }
        }
    }

    #[test]
    fn db_json_round_trips(recs in records(), alpha in 0.0f64..3.0) {
        let db = AffordanceDb::build(&recs, &focus(), alpha).unwrap();
        prop_assert_eq!(AffordanceDb::from_json(&db.to_json()).unwrap(), db);
    }

    #[test]
    fn logits_shift_invariant(logits in prop::collection::vec(-50.0f64..50.0, 4), shift in -100.0f64..100.0, t in 0.1f64..10.0) {
        let shifted: Vec<f64> = logits.iter().map(|l| l + shift).collect();
        let a = from_logits(&logits, t, &focus()).unwrap();
        let b = from_logits(&shifted, t, &focus()).unwrap();
        prop_assert!(a.max_abs_diff(&b) <= 1e-12);
    }

    #[test]
    fn strict_parser_round_trips(rows in prop::collection::vec((weights(4), any::<bool>()), 1..20)) {
        let t = focus();
        let mut file = ScoreFile::new(t.clone());
        for (k, (w, labelled)) in rows.iter().enumerate() {
            file.records.push(ScoreRecord {
                image_id: format!("img{k}"),
                object_name: format!("object {}", k % 3),
                true_grasp: labelled.then(|| t.label(k % 4).to_string()),
                scores: dist(w),
            });
        }
        let text = file.to_jsonl();
        let parsed = ScoreFile::parse_str(&text, ParseMode::Strict).unwrap();
        prop_assert_eq!(parsed.renormalized, 0);
        for (a, b) in parsed.file.records.iter().zip(&file.records) {
            prop_assert!(a.scores.max_abs_diff(&b.scores) <= 1e-12);
        }
        prop_assert_eq!(parsed.file, file);
    }

    #[test]
    fn lenient_renormalization_keeps_argmax(w in weights(4), scale in 0.01f64..100.0) {
        prop_assume!((w.iter().sum::<f64>() * scale - 1.0).abs() > 1e-6);
        let scaled: Vec<f64> = w.iter().map(|x| x * scale).collect();
        let line = serde_json::json!({"image_id": "x", "object": "rod", "scores": scaled});
        let text = format!("{{\"format\":\"afford-scores/1\",\"taxonomy\":{}}}\n{line}\n",
            serde_json::to_string(focus().labels()).unwrap());
        let parsed = ScoreFile::parse_str(&text, ParseMode::Lenient).unwrap();
        prop_assert_eq!(parsed.renormalized, 1);
        let best = grasp_afford::taxonomy::argmax_index(&scaled);
        let t = focus();
        prop_assert_eq!(argmax_grasp(&parsed.file.records[0].scores), t.label(best));
    }

    #[test]
    fn evaluate_is_permutation_invariant(rows in prop::collection::vec((weights(4), 0usize..4), 1..30), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let t = focus();
        let recs: Vec<ScoreRecord> = rows.iter().enumerate().map(|(k, (w, truth))| ScoreRecord {
            image_id: format!("i{k}"),
            object_name: "rod".into(),
            true_grasp: Some(t.label(*truth).to_string()),
            scores: dist(w),
        }).collect();
        let mut shuffled = recs.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let db = AffordanceDb::build(&[AffordanceRecord::new("rod", "medium_wrap")], &t, 1.0).unwrap();
        let a_file = ScoreFile { taxonomy: t.clone(), records: recs };
        let b_file = ScoreFile { taxonomy: t.clone(), records: shuffled };
        for mode in PipelineMode::ALL {
            let cfg = PipelineConfig::new(mode);
            let pa = run_pipeline(&a_file, &db, cfg, Execution::Parallel).unwrap();
            let pb = run_pipeline(&b_file, &db, cfg, Execution::Sequential).unwrap();
            prop_assert_eq!(evaluate(&pa, &a_file).unwrap(), evaluate(&pb, &b_file).unwrap());
        }
    }

    #[test]
    fn uniform_db_fusion_equals_cnn(rows in prop::collection::vec(positive_weights(4), 1..30)) {
        let t = focus();
        let recs: Vec<_> = t.labels().iter().map(|g| AffordanceRecord::new("thing", g.clone())).collect();
        let db = AffordanceDb::build(&recs, &t, 0.0).unwrap();
        let file = ScoreFile {
            taxonomy: t.clone(),
            records: rows.iter().enumerate().map(|(k, w)| ScoreRecord {
                image_id: format!("i{k}"),
                object_name: "thing".into(),
                true_grasp: None,
                scores: dist(w),
            }).collect(),
        };
        let cnn = run_pipeline(&file, &db, PipelineConfig::new(PipelineMode::Cnn), Execution::Parallel).unwrap();
        let fused = run_pipeline(&file, &db, PipelineConfig::new(PipelineMode::Fused), Execution::Parallel).unwrap();
        for (c, f) in cnn.iter().zip(&fused) {
            prop_assert_eq!(&c.predicted, &f.predicted);
        }
    }

    #[test]
    fn one_hot_affordance_wins_when_cnn_allows_it(rows in prop::collection::vec((weights(4), 0usize..4), 1..30)) {
        let t = focus();
        let recs: Vec<_> = (0..4).map(|k| AffordanceRecord::new(format!("obj{k}"), t.label(k))).collect();
        let db = AffordanceDb::build(&recs, &t, 0.0).unwrap();
        let file = ScoreFile {
            taxonomy: t.clone(),
            records: rows.iter().enumerate().map(|(k, (w, obj))| ScoreRecord {
                image_id: format!("i{k}"),
                object_name: format!("obj{obj}"),
                true_grasp: None,
                scores: dist(w),
            }).collect(),
        };
        let aff = run_pipeline(&file, &db, PipelineConfig::new(PipelineMode::Affordance), Execution::Sequential).unwrap();
        let mut cfg = PipelineConfig::new(PipelineMode::Fused);
        cfg.unknown = UnknownPolicy::Error;
        let fused = run_pipeline(&file, &db, cfg, Execution::Sequential);
        for (k, (_, obj)) in rows.iter().enumerate() {
            if file.records[k].scores.probs()[*obj] > 0.0 {
                if let Ok(f) = &fused {
                    prop_assert_eq!(&f[k].predicted, &aff[k].predicted);
                }
            }
        }
        if let Ok(f) = &fused {
            prop_assert_eq!(f.len(), aff.len());
        }
    }

    #[test]
    fn eq1_and_dominance_hold(seed in any::<u64>(), conc in 0.05f64..20.0) {
        let w = generate_world(seed, random_shape(seed), conc).unwrap();
        prop_assert!(check_eq1(&w) <= EQ1_TOL);
        let fused = expected_accuracy(&w, Rule::Fused);
        prop_assert!(fused >= expected_accuracy(&w, Rule::Cnn) - 1e-12);
        prop_assert!(fused >= expected_accuracy(&w, Rule::Affordance) - 1e-12);
    }
}

#[test]
fn balanced_micro_accuracy_is_mean_recall() {
    use grasp_afford::eval::EvalReport;
    let r = EvalReport {
        mode: PipelineMode::Fused,
        taxonomy: focus(),
        confusion: vec![
            vec![4, 0, 0, 1],
            vec![2, 2, 0, 1],
            vec![0, 0, 5, 0],
            vec![2, 0, 0, 3],
        ],
        n: 20,
    };
    let mean_recall: f64 = (0..4).map(|c| r.recall(c)).sum::<f64>() / 4.0;
    assert!((r.accuracy() - mean_recall).abs() < 1e-15);
}
