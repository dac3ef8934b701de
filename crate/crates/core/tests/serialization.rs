//! Every artifact one command writes and another reads must survive
//! write → read → write byte for byte.

mod common;

use std::path::Path;

use attrsv_core::attrnet::{AttrClassifier, TdnnConfig};
use attrsv_core::config::{Preset, RunConfig};
use attrsv_core::corpus::{AttributeSchema, EmbeddingTable, TrialPair, TrialSet};
use attrsv_core::dsp::{read_feature_cache, write_feature_cache, MfccConfig, MfccMatrix};
use attrsv_core::similarity::{
    read_similarity_dump, similarity, write_similarity_dump, SimilarityMode, SimilarityRecord,
};
use attrsv_core::verifier::{read_score_dump, write_score_dump, TrialScore};
use common::random_outputs;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn bytes(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

fn clip_id(rng: &mut impl Rng) -> String {
    format!("spk{:03}-{:02}", rng.random_range(0..500), rng.random_range(0..40))
}

fn trials(rng: &mut impl Rng, n: usize) -> Vec<TrialPair> {
    (0..n)
        .map(|_| TrialPair {
            clip_a: clip_id(rng),
            clip_b: clip_id(rng),
            target: rng.random_bool(0.5),
        })
        .collect()
}

/// Doubles across many magnitudes, including subnormal-adjacent and negative zero.
fn awkward_f64(rng: &mut impl Rng) -> f64 {
    match rng.random_range(0..5) {
        0 => -0.0,
        1 => rng.random::<f64>() * 1e-300,
        2 => rng.random_range(-1e6..1e6),
        _ => rng.random::<f64>(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn trial_lists(seed in any::<u64>(), n in 0usize..50, replaced in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let set = TrialSet { trials: trials(&mut rng, n), with_replacement: replaced };
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.txt"), dir.path().join("b.txt"));
        set.write(&a).unwrap();
        let back = TrialSet::read(&a).unwrap();
        prop_assert_eq!(&back, &set);
        back.write(&b).unwrap();
        prop_assert_eq!(bytes(&a), bytes(&b));
    }

    #[test]
    fn embedding_tables(seed in any::<u64>(), n in 1usize..20, dim in 1usize..16) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut table = EmbeddingTable { source_tag: "xvector".into(), dim, vectors: Default::default() };
        for _ in 0..n {
            table.insert(clip_id(&mut rng), (0..dim).map(|_| awkward_f64(&mut rng)).collect()).unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
        table.write(&a).unwrap();
        let back = EmbeddingTable::read(&a, "xvector").unwrap();
        for (k, v) in &table.vectors {
            let w = &back.vectors[k];
            prop_assert!(v.iter().zip(w).all(|(x, y)| x.to_bits() == y.to_bits() || (*x == 0.0 && *y == 0.0)));
        }
        back.write(&b).unwrap();
        prop_assert_eq!(bytes(&a), bytes(&b));
    }

    #[test]
    fn feature_caches(seed in any::<u64>(), frames in 1usize..30, coeffs in 1usize..21) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..frames * coeffs).map(|_| rng.random_range(-50.0..50.0)).collect();
        let m = MfccMatrix::new(frames, coeffs, values, 25.0, 10.0).unwrap().to_f32_precision();
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.atsv"), dir.path().join("b.atsv"));
        write_feature_cache(&a, &m).unwrap();
        let back = read_feature_cache(&a, &MfccConfig::default()).unwrap();
        prop_assert_eq!(&back, &m);
        write_feature_cache(&b, &back).unwrap();
        prop_assert_eq!(bytes(&a), bytes(&b));
    }

    #[test]
    fn similarity_dumps(seed in any::<u64>(), n in 1usize..30, soft in any::<bool>()) {
        let schema = AttributeSchema::with_counts([2, 5, 4, 12]).unwrap();
        let mode = if soft { SimilarityMode::Softmax } else { SimilarityMode::Hard };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let records: Vec<SimilarityRecord> = trials(&mut rng, n)
            .iter()
            .map(|t| {
                let a = random_outputs(&mut rng, &schema);
                let b = random_outputs(&mut rng, &schema);
                SimilarityRecord::new(t, &similarity(mode, &a, &b).unwrap())
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
        write_similarity_dump(&a, &records).unwrap();
        let back = read_similarity_dump(&a, &schema.hash()).unwrap();
        prop_assert_eq!(&back, &records);
        write_similarity_dump(&b, &back).unwrap();
        prop_assert_eq!(bytes(&a), bytes(&b));
        prop_assert!(read_similarity_dump(&a, "0000").is_err());
    }

    #[test]
    fn score_dumps(seed in any::<u64>(), n in 0usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scores: Vec<TrialScore> = trials(&mut rng, n)
            .into_iter()
            .map(|trial| TrialScore { trial, score: rng.random() })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
        write_score_dump(&a, &scores).unwrap();
        let back = read_score_dump(&a).unwrap();
        prop_assert_eq!(&back, &scores);
        write_score_dump(&b, &back).unwrap();
        prop_assert_eq!(bytes(&a), bytes(&b));
    }

    #[test]
    fn configs(seed in 0..=i64::MAX as u64, lr in 1e-4f64..1.0, trees in 1usize..500) {
        let mut c = RunConfig::preset(Preset::Quick);
        c.seed = seed;
        c.stage1.ac.train.learning_rate = lr;
        c.stage2.forest.n_trees = trees;
        let text = c.to_toml().unwrap();
        let back = RunConfig::from_toml(&text).unwrap();
        prop_assert_eq!(&back, &c);
        prop_assert_eq!(back.to_toml().unwrap(), text);
        prop_assert_eq!(back.fingerprint(), c.fingerprint());
    }
}

#[test]
fn attribute_classifiers() {
    let dir = tempfile::tempdir().unwrap();
    let models = [
        AttrClassifier::build_embedding_mlp("gender", 6, 2, &[5, 4], 3).unwrap(),
        AttrClassifier::build_mfcc_tdnn("age", 20, 4, &TdnnConfig::with_channels(4, 6), 3).unwrap(),
    ];
    for (i, m) in models.iter().enumerate() {
        let (a, b) = (dir.path().join(format!("{i}a.json")), dir.path().join(format!("{i}b.json")));
        m.save(&a).unwrap();
        let back = AttrClassifier::load(&a).unwrap();
        back.save(&b).unwrap();
        assert_eq!(bytes(&a), bytes(&b));
        assert_eq!(back.params, m.params);
    }
}

#[test]
fn seeds_beyond_toml_range_are_rejected() {
    let mut c = RunConfig::preset(Preset::Quick);
    c.seed = u64::MAX;
    assert_eq!(c.validate().unwrap_err().category(), attrsv_core::ErrorCategory::Config);
    c.seed = i64::MAX as u64;
    c.validate().unwrap();
}

#[test]
fn every_preset_survives_toml() {
    for p in [Preset::Desk, Preset::Quick, Preset::Full] {
        let c = RunConfig::preset(p);
        assert_eq!(RunConfig::from_toml(&c.to_toml().unwrap()).unwrap(), c);
    }
}
