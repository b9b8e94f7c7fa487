//! Fixtures shared by the criterion benches.

use lens_core::augment::{AugmentationConfig, AugmentedQuery};
use lens_core::rng::rng_from_seed;
use lens_core::schema::{BlockLayout, EncodingMap, OovPolicy};
use lens_core::synthetic::{generate_ledger, GeneratorConfig};

/// Encoded synthetic ledger of `n` entries.
pub fn encoded_ledger(n: usize) -> (Vec<Vec<f64>>, BlockLayout) {
    let cfg = GeneratorConfig {
        entry_count: n,
        global_anomalies: 0,
        local_anomalies: 0,
        ..GeneratorConfig::default()
    };
    let corpus = generate_ledger(&cfg).expect("generator config is valid");
    let map = EncodingMap::build(&corpus.entries, &corpus.schema).expect("corpus encodes");
    let rows = corpus
        .entries
        .iter()
        .map(|e| map.encode(e, &corpus.schema, OovPolicy::Strict).expect("entry encodes").0)
        .collect();
    (rows, map.layout())
}

pub fn augmented_queries(rows: &[Vec<f64>], layout: &BlockLayout, negatives: usize) -> Vec<AugmentedQuery> {
    let cfg = AugmentationConfig {
        negatives,
        ..AugmentationConfig::default()
    };
    let mut rng = rng_from_seed(1);
    rows.iter()
        .map(|x| AugmentedQuery::build(x, layout, &cfg, &mut rng).expect("augmentable entry"))
        .collect()
}
