mod common;

use attrsv_core::corpus::{AttributeSchema, SpeakerRecord};
use attrsv_core::prob::ProbabilityVector;
use attrsv_core::similarity::{
    cosine, groundtruth_similarity, hard_similarity, random_similarity, softmax_similarity, AttributeOutputs,
};
use common::random_outputs;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn schema() -> AttributeSchema {
    AttributeSchema::with_counts([2, 4, 3, 10]).unwrap()
}

proptest! {
    #[test]
    fn both_modes_are_symmetric_and_bounded(seed in any::<u64>()) {
        let s = schema();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_outputs(&mut rng, &s);
        let b = random_outputs(&mut rng, &s);
        for f in [hard_similarity, softmax_similarity] {
            let ab = f(&a, &b).unwrap();
            let ba = f(&b, &a).unwrap();
            prop_assert_eq!(&ab.values, &ba.values);
            prop_assert!(ab.values.iter().all(|v| (0.0..=1.0).contains(v)));
            let aa = f(&a, &a).unwrap();
            prop_assert!(aa.values.iter().all(|v| (v - 1.0).abs() < 1e-12));
        }
    }

    #[test]
    fn one_hot_softmax_equals_hard(labels in (0usize..2, 0usize..4, 0usize..3, 0usize..10),
                                   other in (0usize..2, 0usize..4, 0usize..3, 0usize..10)) {
        let s = schema();
        let a = AttributeOutputs::from_labels(&s, &[labels.0, labels.1, labels.2, labels.3]).unwrap();
        let b = AttributeOutputs::from_labels(&s, &[other.0, other.1, other.2, other.3]).unwrap();
        prop_assert_eq!(softmax_similarity(&a, &b).unwrap().values, hard_similarity(&a, &b).unwrap().values);
    }

    #[test]
    fn cosine_ignores_common_rescaling(p in prop::collection::vec(0.01f64..1.0, 5),
                                       q in prop::collection::vec(0.01f64..1.0, 5),
                                       c in 0.001f64..1000.0) {
        let scaled = |v: &[f64]| v.iter().map(|x| x * c).collect::<Vec<_>>();
        prop_assert!((cosine(&p, &q) - cosine(&scaled(&p), &scaled(&q))).abs() < 1e-12);
    }
}

#[test]
fn hand_cases() {
    let s = schema();
    let a = AttributeOutputs::from_labels(&s, &[0, 1, 2, 3]).unwrap();
    let b = AttributeOutputs::from_labels(&s, &[0, 3, 2, 7]).unwrap();
    assert_eq!(hard_similarity(&a, &b).unwrap().values, vec![1.0, 0.0, 1.0, 0.0]);

    let p = ProbabilityVector::new(vec![0.6, 0.4]).unwrap();
    let q = ProbabilityVector::new(vec![0.4, 0.6]).unwrap();
    // 0.48 / 0.52
    assert!((cosine(p.as_slice(), q.as_slice()) - 0.48 / 0.52).abs() < 1e-12);
    assert!((cosine(p.as_slice(), q.as_slice()) - 0.9231).abs() < 1e-4);
    assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
}

#[test]
fn groundtruth_follows_the_labels() {
    let s = schema();
    let rec = |labels: Vec<usize>| SpeakerRecord {
        speaker_id: "s".into(),
        labels,
        clips: vec![],
    };
    let a = rec(vec![1, 2, 0, 5]);
    assert_eq!(groundtruth_similarity(&s, &a, &a).unwrap().values, vec![1.0; 4]);
    let b = rec(vec![1, 2, 0, 6]);
    assert_eq!(groundtruth_similarity(&s, &a, &b).unwrap().values, vec![1.0, 1.0, 1.0, 0.0]);
    assert!(groundtruth_similarity(&s, &a, &rec(vec![1, 2])).is_err());
}

#[test]
fn random_collisions_follow_sum_of_squares() {
    let s = schema();
    let d = vec![
        ProbabilityVector::new(vec![0.5, 0.5]).unwrap(),
        ProbabilityVector::one_hot(4, 2),
        ProbabilityVector::new(vec![0.7, 0.2, 0.1]).unwrap(),
        ProbabilityVector::from_weights(&[1.0; 10]).unwrap(),
    ];
    let n = 10_000;
    let mut hits = [0.0; 4];
    for seed in 0..n {
        let v = random_similarity(&s, &d, seed).unwrap();
        for (h, x) in hits.iter_mut().zip(&v.values) {
            *h += x;
        }
    }
    let expect = [0.5, 1.0, 0.49 + 0.04 + 0.01, 0.1];
    for (h, e) in hits.iter().zip(expect) {
        assert!((h / n as f64 - e).abs() < 0.02, "{} vs {e}", h / n as f64);
    }
    assert_eq!(hits[1], n as f64);
    assert!(random_similarity(&s, &d[..3], 0).is_err());
}
