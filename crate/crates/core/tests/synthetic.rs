use std::collections::HashMap;

use lens_core::schema::{argmax, Corpus, EncodingMap, OovPolicy};
use lens_core::synthetic::{
    generate_labeled, generate_ledger, inject_global_anomalies, inject_local_anomalies, normal_labels,
    GeneratorConfig, LabelKind,
};
use proptest::prelude::*;

fn small_config(seed: u64) -> GeneratorConfig {
    GeneratorConfig {
        entry_count: 1500,
        seed,
        global_anomalies: 10,
        local_anomalies: 12,
        ..GeneratorConfig::default()
    }
}

fn column<'a>(corpus: &'a Corpus, name: &str) -> Vec<&'a str> {
    let p = corpus.schema.position(name).unwrap();
    corpus.entries.iter().map(|e| e.categorical(p).unwrap()).collect()
}

fn counts<'a, K: std::hash::Hash + Eq + Copy>(values: impl Iterator<Item = K>) -> HashMap<K, usize> {
    let mut m = HashMap::new();
    for v in values {
        *m.entry(v).or_insert(0) += 1;
    }
    m
}

fn median(m: &HashMap<&str, usize>) -> f64 {
    let mut c: Vec<usize> = m.values().copied().collect();
    c.sort_unstable();
    let n = c.len();
    if n % 2 == 1 {
        c[n / 2] as f64
    } else {
        (c[n / 2 - 1] + c[n / 2]) as f64 / 2.0
    }
}

/// Nearest-rank 1st percentile.
fn p1(values: &mut [usize]) -> usize {
    values.sort_unstable();
    let rank = (0.01 * values.len() as f64).ceil().max(1.0) as usize;
    values[rank - 1]
}

#[test]
fn local_anomalies_satisfy_the_contingency_definition() {
    for seed in [1, 2, 3] {
        let cfg = small_config(seed);
        let clean = generate_ledger(&cfg).unwrap();
        let (before, labels) =
            inject_global_anomalies(&clean, &normal_labels(&clean), cfg.global_anomalies, cfg.max_fresh_attributes, seed)
                .unwrap();
        let (after, out_labels) =
            inject_local_anomalies(&before, &labels, &cfg.strong_pairs(), cfg.local_anomalies, seed).unwrap();
        let locals: Vec<usize> = (0..out_labels.len()).filter(|&i| out_labels[i].label == LabelKind::Local).collect();
        assert_eq!(locals.len(), cfg.local_anomalies);

        for i in &locals {
            // Exactly one pair explains the anomaly.
            let mut explained = false;
            for (s, t) in cfg.strong_pairs() {
                let (src_b, tgt_b) = (column(&before, &s), column(&before, &t));
                let tgt_a = column(&after, &t);
                let (v, w) = (src_b[*i], tgt_a[*i]);
                if tgt_b[*i] == w {
                    continue;
                }
                let sc = counts(src_b.iter().copied());
                let tc = counts(tgt_b.iter().copied());
                assert!(sc[v] as f64 > median(&sc), "source value {v} is not common");
                assert!(tc[w] as f64 > median(&tc), "target value {w} is not common");
                let joint_before = counts(src_b.iter().copied().zip(tgt_b.iter().copied()));
                assert!(!joint_before.contains_key(&(v, w)), "combination already present");
                let src_a = column(&after, &s);
                let joint_after = counts(src_a.iter().copied().zip(tgt_a.iter().copied()));
                let mut per_entry: Vec<usize> =
                    src_a.iter().zip(&tgt_a).map(|(a, b)| joint_after[&(*a, *b)]).collect();
                assert!(joint_after[&(v, w)] <= p1(&mut per_entry));
                explained = true;
            }
            assert!(explained, "entry {i} changed no coupled target");
        }
        // Nothing else moved.
        for (i, (b, a)) in before.entries.iter().zip(&after.entries).enumerate() {
            if !locals.contains(&i) {
                assert_eq!(b, a);
            }
        }
    }
}

#[test]
fn global_anomalies_carry_unseen_values() {
    let cfg = small_config(4);
    let (corpus, labels) = generate_labeled(&cfg).unwrap();
    let all_values = counts(corpus.entries.iter().flat_map(|e| e.categorical_key()));
    let clean = generate_ledger(&cfg).unwrap();
    let clean_values = counts(clean.entries.iter().flat_map(|e| e.categorical_key()));
    let mut globals = 0;
    for (e, l) in corpus.entries.iter().zip(&labels) {
        if l.label == LabelKind::Global {
            globals += 1;
            let fresh: Vec<&str> = e.categorical_key().into_iter().filter(|v| !clean_values.contains_key(v)).collect();
            assert!(!fresh.is_empty() && fresh.len() <= cfg.max_fresh_attributes);
            assert!(fresh.iter().all(|v| all_values[v] == 1));
        }
    }
    assert_eq!(globals, cfg.global_anomalies);
}

#[test]
fn labels_are_seed_deterministic() {
    let a = generate_labeled(&small_config(9)).unwrap();
    let b = generate_labeled(&small_config(9)).unwrap();
    assert_eq!(a, b);
    let c = generate_labeled(&small_config(10)).unwrap();
    assert_ne!(a.0, c.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn encoding_round_trips_categorical_values(seed in 0u64..1000, n in 20usize..200) {
        let cfg = GeneratorConfig { entry_count: n, seed, global_anomalies: 0, local_anomalies: 0, ..GeneratorConfig::default() };
        let corpus = generate_ledger(&cfg).unwrap();
        let map = EncodingMap::build(&corpus.entries, &corpus.schema).unwrap();
        let layout = map.layout();
        let vocab: usize = layout.blocks.iter().map(|b| b.len()).sum();
        prop_assert_eq!(map.dimension(), vocab + corpus.schema.numeric_count());
        for e in &corpus.entries {
            let x = map.encode(e, &corpus.schema, OovPolicy::Strict).unwrap();
            prop_assert_eq!(x.0.len(), map.dimension());
            let decoded = map.decode_categorical(&x.0);
            let original: Vec<String> = e.categorical_key().iter().map(|s| s.to_string()).collect();
            prop_assert_eq!(decoded, original);
            for b in &layout.blocks {
                prop_assert_eq!(x.0[b.clone()].iter().filter(|v| **v == 1.0).count(), 1);
                prop_assert_eq!(x.0[b.start + argmax(&x.0[b.clone()])], 1.0);
            }
            prop_assert!(x.0[layout.numeric.clone()].iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
