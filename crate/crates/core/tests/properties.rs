mod common;

use std::collections::{BTreeMap, BTreeSet};

use activepool::datapool::{self, Label, Role, SampleId, SampleSet, Split};
use activepool::metrics::{apportion, compute_eer};
use activepool::scoring::{negative_energy, CertaintyScore};
use activepool::selection::{apply_selection, select_lowest};
use proptest::prelude::*;

use common::brute_force_eer;

/// Scores on a coarse grid so that ties between and within classes are
/// common.
fn scores(max: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((0i32..40).prop_map(|v| v as f64 / 8.0), 1..=max)
}

fn continuous_scores(max: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0f64..5.0, 1..=max)
}

proptest! {
    #[test]
    fn eer_matches_brute_force(real in scores(60), fake in scores(60)) {
        let r = compute_eer(&real, &fake).unwrap();
        let (eer, theta, far, frr) = brute_force_eer(&real, &fake);
        prop_assert_eq!((r.eer, r.threshold, r.far, r.frr), (eer, theta, far, frr));
    }

    #[test]
    fn eer_matches_brute_force_continuous(real in continuous_scores(80), fake in continuous_scores(80)) {
        let r = compute_eer(&real, &fake).unwrap();
        let (eer, theta, ..) = brute_force_eer(&real, &fake);
        prop_assert_eq!((r.eer, r.threshold), (eer, theta));
    }

    #[test]
    fn eer_is_bounded(real in scores(40), fake in scores(40)) {
        let r = compute_eer(&real, &fake).unwrap();
        prop_assert!((0.0..=1.0).contains(&r.eer));
        prop_assert_eq!((r.n_real, r.n_fake), (real.len(), fake.len()));
    }

    #[test]
    fn eer_invariant_under_increasing_maps(real in scores(40), fake in scores(40), a in 0.1f64..10.0, b in -3.0f64..3.0) {
        let base = compute_eer(&real, &fake).unwrap().eer;
        let affine = |v: &Vec<f64>| v.iter().map(|x| a * x + b).collect::<Vec<_>>();
        let cubic = |v: &Vec<f64>| v.iter().map(|x| x * x * x + x).collect::<Vec<_>>();
        let exp = |v: &Vec<f64>| v.iter().map(|x| x.exp()).collect::<Vec<_>>();
        prop_assert_eq!(compute_eer(&affine(&real), &affine(&fake)).unwrap().eer, base);
        prop_assert_eq!(compute_eer(&cubic(&real), &cubic(&fake)).unwrap().eer, base);
        prop_assert_eq!(compute_eer(&exp(&real), &exp(&fake)).unwrap().eer, base);
    }

    // Holds exactly for equal class sizes without tied scores: the count
    // difference then crosses zero at a single operating point. With ties or
    // unequal sizes the tie rule can pick different points after the swap.
    #[test]
    fn swapping_classes_complements_eer(pairs in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..60)) {
        let (real, fake): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let r = compute_eer(&real, &fake).unwrap();
        let s = compute_eer(&fake, &real).unwrap();
        prop_assert!((r.eer + s.eer - 1.0).abs() < 1e-12, "{} + {}", r.eer, s.eer);
    }

    #[test]
    fn energy_shift_equivariance(a in -50.0f64..50.0, b in -50.0f64..50.0, shift in -100.0f64..100.0, t in 0.05f64..10.0) {
        let base = negative_energy(&[a, b], t).unwrap();
        let shifted = negative_energy(&[a + shift, b + shift], t).unwrap();
        prop_assert!((shifted - (base - shift)).abs() <= 1e-9);
    }

    #[test]
    fn energy_bounds(a in -50.0f64..50.0, b in -50.0f64..50.0, t in 0.05f64..10.0) {
        let c = negative_energy(&[a, b], t).unwrap();
        let max = a.max(b);
        prop_assert!(c <= -max + 1e-12);
        prop_assert!(c >= -max - t * 2f64.ln() - 1e-12);
    }

    #[test]
    fn selection_is_optimal(values in prop::collection::vec(0i32..20, 0..80), budget in 0usize..100) {
        let scores: Vec<CertaintyScore> = values
            .iter()
            .enumerate()
            .map(|(i, &v)| CertaintyScore { sample_id: i as SampleId * 3 + 1, value: v as f64 / 4.0 })
            .collect();
        let picked = select_lowest(&scores, budget);
        prop_assert_eq!(picked.len(), budget.min(scores.len()));
        let chosen: BTreeSet<SampleId> = picked.iter().copied().collect();
        prop_assert_eq!(chosen.len(), picked.len());
        let key = |s: &CertaintyScore| (s.value, s.sample_id);
        for s in scores.iter().filter(|s| chosen.contains(&s.sample_id)) {
            for u in scores.iter().filter(|u| !chosen.contains(&u.sample_id)) {
                prop_assert!(s.value <= u.value);
                prop_assert!(key(s) < key(u));
            }
        }
    }

    #[test]
    fn selection_ignores_score_order(values in prop::collection::vec(0i32..10, 0..60), budget in 0usize..70, seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let scores: Vec<CertaintyScore> = values
            .iter()
            .enumerate()
            .map(|(i, &v)| CertaintyScore { sample_id: i as SampleId, value: v as f64 })
            .collect();
        let mut shuffled = scores.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let a: BTreeSet<_> = select_lowest(&scores, budget).into_iter().collect();
        let b: BTreeSet<_> = select_lowest(&shuffled, budget).into_iter().collect();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn repeated_selection_conserves_sets(n in 1usize..80, budgets in prop::collection::vec(0usize..15, 1..8), seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let universe: BTreeSet<SampleId> = (0..n as SampleId + 5).collect();
        let store = common::store(1, universe.iter().map(|&id| common::sample(id, vec![0.0], Label::Real, "s", Split::Pool)).collect());
        let mut pool = SampleSet::new(Role::Pool, (5..n as SampleId + 5).collect(), &store).unwrap();
        let mut train = SampleSet::new(Role::Train, (0..5).collect(), &store).unwrap();
        let mut ever = BTreeSet::new();
        for budget in budgets {
            let scores: Vec<CertaintyScore> = pool
                .ids()
                .iter()
                .map(|&sample_id| CertaintyScore { sample_id, value: rng.random::<f64>() })
                .collect();
            let picked = select_lowest(&scores, budget);
            for id in &picked {
                prop_assert!(ever.insert(*id), "id {} selected twice", id);
            }
            let (p, t) = apply_selection(&pool, &train, &picked).unwrap();
            pool = p;
            train = t;
            let ps: BTreeSet<_> = pool.ids().iter().copied().collect();
            let ts: BTreeSet<_> = train.ids().iter().copied().collect();
            prop_assert!(ps.is_disjoint(&ts));
            prop_assert_eq!(ps.union(&ts).copied().collect::<BTreeSet<_>>(), universe.clone());
        }
    }

    #[test]
    fn apportioned_percentages_close(counts in prop::collection::vec(0usize..500, 1..12)) {
        let map: BTreeMap<String, usize> = counts.iter().enumerate().map(|(i, &c)| (format!("s{i}"), c)).collect();
        let shares = apportion(&map);
        if counts.iter().sum::<usize>() == 0 {
            prop_assert!(shares.is_empty());
        } else {
            let total: u32 = shares.values().map(|s| s.basis_points).sum();
            prop_assert_eq!(total, 10_000);
            let pct: f64 = shares.values().map(|s| s.percent()).sum();
            prop_assert!((pct - 100.0).abs() <= 0.01);
        }
    }

    #[test]
    fn equalize_is_idempotent(sources in prop::collection::vec(0u8..5, 0..60), cap in 1usize..15) {
        let samples = sources
            .iter()
            .enumerate()
            .map(|(i, s)| common::sample(i as SampleId * 2, vec![0.0], Label::Fake, &format!("m{s}"), Split::Pool))
            .collect();
        let store = common::store(1, samples);
        let pool = SampleSet::new(Role::Pool, store.samples().iter().rev().map(|s| s.id).collect(), &store).unwrap();
        let once = datapool::equalize_pool(&pool, &store, cap).unwrap();
        let twice = datapool::equalize_pool(&once, &store, cap).unwrap();
        prop_assert_eq!(&once, &twice);
        for count in once.source_counts(&store).unwrap().values() {
            prop_assert!(*count <= cap);
        }
    }

    #[test]
    fn manifest_round_trip(rows in prop::collection::vec((prop::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), 3), 0u8..4, any::<bool>()), 1..40)) {
        let samples = rows
            .iter()
            .enumerate()
            .map(|(i, (f, split, fake))| {
                let split = [Split::Seed, Split::Pool, Split::Val, Split::Test][*split as usize];
                let label = if *fake { Label::Fake } else { Label::Real };
                common::sample(i as SampleId * 7 + 3, f.clone(), label, &format!("src-{}", i % 3), split)
            })
            .collect();
        let data = datapool::Dataset::from_store(common::store(3, samples));
        let mut text = Vec::new();
        datapool::write_manifest(&data, &mut text).unwrap();
        let back = datapool::parse_manifest(std::str::from_utf8(&text).unwrap(), std::path::Path::new("mem")).unwrap();
        prop_assert_eq!(back, data);
    }
}
