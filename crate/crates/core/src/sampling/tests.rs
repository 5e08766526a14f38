use std::collections::BTreeMap;

use proptest::prelude::*;

use super::*;
use crate::dataset::{extract_observations, generate_synthetic, ExtractConfig, Observation, SynthConfig};
use crate::geometry::bucket_index;

fn obs(id: &str, object: Option<&str>, predicted: &str, n: usize) -> Observation {
    Observation {
        observation_id: id.into(),
        object_id: object.map(Into::into),
        class: object.map(|_| predicted.to_string()),
        predicted_class: predicted.into(),
        frame: 0,
        points: vec![[0.0; 3]; n],
        detector_score: 0.5,
    }
}

fn dataset(observations: Vec<Observation>) -> ReidDataset {
    ReidDataset::from_observations(observations).unwrap()
}

fn histogram(buckets: impl Iterator<Item = u32>) -> BTreeMap<u32, f64> {
    let mut h = BTreeMap::new();
    let mut total = 0.0;
    for b in buckets {
        *h.entry(b).or_insert(0.0) += 1.0;
        total += 1.0;
    }
    h.values_mut().for_each(|v| *v /= total);
    h
}

fn tv(p: &BTreeMap<u32, f64>, q: &BTreeMap<u32, f64>) -> f64 {
    let keys: std::collections::BTreeSet<_> = p.keys().chain(q.keys()).collect();
    0.5 * keys
        .into_iter()
        .map(|k| (p.get(k).unwrap_or(&0.0) - q.get(k).unwrap_or(&0.0)).abs())
        .sum::<f64>()
}

fn check_pair_identity(p: &PairSample, ds: &ReidDataset) {
    let a = ds.by_id(&p.obs_a).unwrap();
    let b = ds.by_id(&p.obs_b).unwrap();
    match p.label {
        Label::Match => {
            assert!(a.object_id.is_some());
            assert_eq!(a.object_id, b.object_id);
        }
        Label::NonMatch => assert!(a.object_id != b.object_id || b.object_id.is_none()),
    }
}

fn synthetic(seed: u64) -> ReidDataset {
    let cfg = SynthConfig {
        objects: BTreeMap::from([("car".into(), 12), ("pedestrian".into(), 8)]),
        frames_per_object: 6,
        ..SynthConfig::default()
    };
    let scene = generate_synthetic(&cfg, seed).unwrap();
    extract_observations(&scene.detections, &scene.gt, &scene.frame_points, &ExtractConfig::default())
        .unwrap()
        .0
}

#[test]
fn even_negatives_follow_own_bucket_histogram() {
    // anchor "a" sits half in bucket 3, half in bucket 4
    let ds = dataset(vec![
        obs("a1", Some("a"), "car", 8),
        obs("a2", Some("a"), "car", 16),
        obs("b1", Some("b"), "car", 9),
        obs("b2", Some("b"), "car", 20),
        obs("b3", Some("b"), "car", 40),
        obs("f1", None, "car", 12),
        obs("f2", None, "car", 31),
        obs("f3", None, "car", 2),
    ]);
    assert_eq!(bucket_index(8).unwrap(), 3);
    assert_eq!(bucket_index(16).unwrap(), 4);
    let mut buckets = Vec::new();
    let mut epoch = 0;
    while buckets.len() < 20_000 {
        let s = even_epoch(&ds, 11, epoch);
        epoch += 1;
        for p in s.pairs.iter().filter(|p| p.label == Label::NonMatch && p.obs_a.starts_with('a')) {
            buckets.push(ds.by_id(&p.obs_b).unwrap().bucket());
        }
    }
    let h = histogram(buckets.into_iter());
    assert_eq!(h.len(), 2, "{h:?}");
    assert!((h[&3] - 0.5).abs() <= 0.02, "{h:?}");
    assert!((h[&4] - 0.5).abs() <= 0.02, "{h:?}");
}

#[test]
fn single_observation_object_pairs_with_itself() {
    let ds = dataset(vec![obs("a1", Some("a"), "car", 8), obs("b1", Some("b"), "car", 8)]);
    let mut seen = 0;
    for epoch in 0..64 {
        let s = even_epoch(&ds, 0, epoch);
        let self_pairs = s.pairs.iter().filter(|p| p.obs_a == p.obs_b).count();
        assert_eq!(self_pairs, s.fallbacks.single_observation);
        for p in &s.pairs {
            check_pair_identity(p, &ds);
        }
        seen += self_pairs;
    }
    assert!(seen > 0);
}

#[test]
fn nearest_bucket_ties_go_lower() {
    let buckets = BTreeMap::from([(2, vec![0]), (6, vec![1]), (9, vec![])]);
    assert_eq!(nearest_bucket(&buckets, 4, |v| !v.is_empty()), Some(2));
    assert_eq!(nearest_bucket(&buckets, 5, |v| !v.is_empty()), Some(6));
    assert_eq!(nearest_bucket(&buckets, 10, |v| !v.is_empty()), Some(6));
    assert_eq!(nearest_bucket(&BTreeMap::new(), 1, |v| !v.is_empty()), None);
}

#[test]
fn fallbacks_are_counted() {
    // no FP of the class, and the only other object lives in bucket 6
    let ds = dataset(vec![
        obs("a1", Some("a"), "car", 8),
        obs("a2", Some("a"), "car", 8),
        obs("b1", Some("b"), "car", 64),
    ]);
    let mut totals = FallbackCounts::default();
    let mut negatives = 0;
    for epoch in 0..200 {
        let s = even_epoch(&ds, 3, epoch);
        negatives += s.pairs.iter().filter(|p| p.label == Label::NonMatch).count();
        assert!(s.pairs.iter().all(|p| !p.is_fp_pair));
        totals = FallbackCounts {
            nearest_bucket: totals.nearest_bucket + s.fallbacks.nearest_bucket,
            no_fp_class: totals.no_fp_class + s.fallbacks.no_fp_class,
            ..totals
        };
    }
    assert!(negatives > 0);
    // b's own negatives sit in bucket 6 with no same-bucket partner either
    assert_eq!(totals.no_fp_class, negatives);
    assert_eq!(totals.nearest_bucket, negatives);

    // no negative candidate at all
    let lonely = dataset(vec![obs("a1", Some("a"), "car", 8), obs("a2", Some("a"), "car", 8)]);
    let s = (0..20).map(|e| even_epoch(&lonely, 0, e)).find(|s| s.fallbacks.no_negative > 0).unwrap();
    assert_eq!(s.pairs[0].label, Label::Match);
}

#[test]
fn uniform_coin_structure() {
    let ds = dataset(vec![
        obs("a1", Some("a"), "car", 8),
        obs("a2", Some("a"), "car", 30),
        obs("f1", None, "car", 4),
    ]);
    let trials = 8000;
    let positives = (0..trials)
        .filter(|&e| uniform_epoch(&ds, 5, e).pairs[0].label == Label::Match)
        .count();
    assert!((positives as f64 / trials as f64 - 0.5).abs() < 0.02, "{positives}");
}

#[test]
fn uniform_negatives_follow_pooled_class_marginal() {
    let ds = synthetic(4);
    // oracle: mixture of the class's other-object TPs and its FPs, 50/50
    // where both exist; anchors are weighted by how often they draw negatives
    let mut draws: Vec<u32> = Vec::new();
    let mut oracle: BTreeMap<u32, f64> = BTreeMap::new();
    let mut epoch = 0;
    while draws.len() < 20_000 {
        let s = uniform_epoch(&ds, 9, epoch);
        epoch += 1;
        for p in s.pairs.iter().filter(|p| p.label == Label::NonMatch) {
            draws.push(ds.by_id(&p.obs_b).unwrap().bucket());
            let anchor = ds.by_id(&p.obs_a).unwrap().object_id.clone();
            let class_of = |o: &Observation| o.predicted_class == p.class;
            let tps: Vec<u32> = ds
                .observations()
                .iter()
                .filter(|o| class_of(o) && !o.is_fp() && o.object_id != anchor)
                .map(|o| o.bucket())
                .collect();
            let fps: Vec<u32> = ds.observations().iter().filter(|o| class_of(o) && o.is_fp()).map(|o| o.bucket()).collect();
            let w = match (tps.is_empty(), fps.is_empty()) {
                (false, false) => 0.5,
                _ => 1.0,
            };
            for (pool, weight) in [(&tps, w), (&fps, w)] {
                for b in pool.iter() {
                    *oracle.entry(*b).or_insert(0.0) += weight / pool.len() as f64;
                }
            }
        }
    }
    let total: f64 = oracle.values().sum();
    oracle.values_mut().for_each(|v| *v /= total);
    let empirical = histogram(draws.into_iter());
    let d = tv(&empirical, &oracle);
    assert!(d <= 0.05, "tv {d}");
}

#[test]
fn samplers_are_deterministic_and_canonical() {
    let ds = synthetic(1);
    for f in [even_epoch, uniform_epoch] {
        let a = f(&ds, 42, 3);
        assert_eq!(a, f(&ds, 42, 3));
        assert_ne!(a.pairs, f(&ds, 42, 4).pairs);
        assert_eq!(a.pairs.len(), ds.n_objects());
        let anchors: Vec<String> = a
            .pairs
            .iter()
            .map(|p| ds.by_id(&p.obs_a).unwrap().object_id.clone().unwrap())
            .collect();
        let sorted: Vec<String> = ds.index().keys().cloned().collect();
        assert_eq!(anchors, sorted);
        for p in &a.pairs {
            check_pair_identity(p, &ds);
        }
    }
}

#[test]
fn even_sampling_is_thread_count_independent() {
    let ds = synthetic(2);
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let multi = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let a = single.install(|| even_epoch(&ds, 1, 0));
    let b = multi.install(|| even_epoch(&ds, 1, 0));
    assert_eq!(a, b);
}

#[test]
fn eval_set_positive_caps() {
    let mut observations: Vec<Observation> = (0..30).map(|i| obs(&format!("a{i}"), Some("a"), "car", 8 + i)).collect();
    observations.push(obs("b0", Some("b"), "car", 8));
    observations.push(obs("b1", Some("b"), "car", 9));
    observations.push(obs("c0", Some("c"), "car", 1));
    observations.push(obs("c1", Some("c"), "car", 20));
    for (i, n) in [4usize, 8, 16, 32, 64].into_iter().enumerate() {
        observations.push(obs(&format!("f{i}"), None, "car", n));
        observations.push(obs(&format!("g{i}"), None, "car", n + 1));
    }
    let ds = dataset(observations);
    let (set, stats) = build_eval_set(&ds, 10, 2, 0);
    let positives_of = |o: &str| {
        set.pairs
            .iter()
            .filter(|p| p.label == Label::Match && ds.by_id(&p.obs_a).unwrap().object_id.as_deref() == Some(o))
            .count()
    };
    assert_eq!(positives_of("a"), 10);
    assert_eq!(positives_of("b"), 1);
    // "c" has one eligible observation after the 2-point filter
    assert_eq!(positives_of("c"), 0);
    assert_eq!(stats.filtered_observations, 1);
    assert_eq!(stats.dropped_positives, 0);

    let mut distinct = std::collections::HashSet::new();
    for p in set.pairs.iter().filter(|p| p.label == Label::Match) {
        let key = if p.obs_a < p.obs_b { (&p.obs_a, &p.obs_b) } else { (&p.obs_b, &p.obs_a) };
        assert!(distinct.insert(key));
    }
}

#[test]
fn eval_set_negatives_match_bucket_and_round_trip() {
    let ds = synthetic(5);
    let (set, stats) = build_eval_set(&ds, 10, 2, 17);
    assert_eq!(set, build_eval_set(&ds, 10, 2, 17).0);
    assert!(!set.pairs.is_empty());
    assert_eq!(stats.positives, stats.negatives);
    for chunk in set.pairs.chunks(2) {
        let (pos, neg) = (&chunk[0], &chunk[1]);
        assert_eq!(pos.label, Label::Match);
        assert_eq!(neg.label, Label::NonMatch);
        assert_eq!(pos.obs_a, neg.obs_a);
        assert_eq!(
            ds.by_id(&pos.obs_b).unwrap().bucket(),
            ds.by_id(&neg.obs_b).unwrap().bucket()
        );
        assert_eq!(neg.is_fp_pair, ds.by_id(&neg.obs_b).unwrap().is_fp());
        check_pair_identity(pos, &ds);
        check_pair_identity(neg, &ds);
    }
    for (p, &(n_a, n_b)) in set.pairs.iter().zip(&set.densities) {
        assert!(n_a >= 2 && n_b >= 2);
        assert_eq!(ds.by_id(&p.obs_a).unwrap().n_points(), n_a);
        assert_eq!(ds.by_id(&p.obs_b).unwrap().n_points(), n_b);
    }

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pairs.jsonl");
    write_eval_set(&set, &path).unwrap();
    assert_eq!(read_eval_set(&path, &ds).unwrap(), set);
    let first = std::fs::read_to_string(&path).unwrap().lines().next().unwrap().to_string();
    assert!(first.contains("\"label\":\"match\""), "{first}");

    let other = dataset(vec![obs("zz", Some("z"), "car", 4)]);
    assert!(matches!(read_eval_set(&path, &other), Err(crate::Error::Input(_))));
}

#[test]
fn density_tv_matches_hand_count() {
    let ds = dataset(vec![
        obs("a1", Some("a"), "car", 2),
        obs("a2", Some("a"), "car", 4),
        obs("b1", Some("b"), "car", 8),
    ]);
    let pair = |a: &str, b: &str, label| PairSample {
        obs_a: a.into(),
        obs_b: b.into(),
        label,
        class: "car".into(),
        is_fp_pair: false,
    };
    // positives: bucket 1; negatives: buckets 2 and 1
    let pairs = vec![
        pair("a1", "a2", Label::Match),
        pair("a2", "b1", Label::NonMatch),
        pair("a1", "b1", Label::NonMatch),
    ];
    assert!((density_tv(&pairs, &ds) - 0.5).abs() < 1e-12);
}

fn arb_dataset() -> impl Strategy<Value = ReidDataset> {
    prop::collection::vec((prop::option::of(0u8..5), 0u8..2, 1usize..200), 1..40).prop_filter_map(
        "needs an object",
        |raw| {
            let classes = ["car", "bus"];
            let observations: Vec<Observation> = raw
                .iter()
                .enumerate()
                .map(|(i, (o, c, n))| {
                    let object = o.map(|o| format!("obj{o}"));
                    // keep each object's class consistent
                    let class = o.map_or(classes[*c as usize], |o| classes[o as usize % 2]);
                    obs(&format!("{i}:0"), object.as_deref(), class, *n)
                })
                .collect();
            let ds = ReidDataset::from_observations(observations).ok()?;
            (ds.n_objects() > 0).then_some(ds)
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]
    #[test]
    fn sampler_invariants(ds in arb_dataset(), seed in any::<u64>()) {
        for f in [even_epoch, uniform_epoch] {
            let s = f(&ds, seed, 0);
            prop_assert_eq!(s.pairs.len(), ds.n_objects());
            for p in &s.pairs {
                check_pair_identity(p, &ds);
            }
        }
        let (set, stats) = build_eval_set(&ds, 10, 2, seed);
        prop_assert!(stats.positives.abs_diff(stats.negatives) <= stats.objects);
        let mut per_object: BTreeMap<String, usize> = BTreeMap::new();
        for p in &set.pairs {
            check_pair_identity(p, &ds);
            if p.label == Label::Match {
                *per_object.entry(ds.by_id(&p.obs_a).unwrap().object_id.clone().unwrap()).or_default() += 1;
            }
        }
        prop_assert!(per_object.values().all(|&n| n <= 10));
    }
}
