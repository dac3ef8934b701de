use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::manifest::SpeakerRecord;
use crate::error::{Error, Result};

/// A labelled utterance pair; `target` is true for same-speaker pairs.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TrialPair {
    pub clip_a: String,
    pub clip_b: String,
    pub target: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TrialSet {
    pub trials: Vec<TrialPair>,
    /// Set when a request exceeded the pool of distinct pairs.
    pub with_replacement: bool,
}

impl TrialSet {
    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.trials.iter().filter(|t| t.target).count()
    }

    /// `<0|1> <clip_a> <clip_b>` per line; a `#` header records replacement sampling.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if self.with_replacement {
            out.push_str("# sampled-with-replacement\n");
        }
        for t in &self.trials {
            let _ = writeln!(out, "{} {} {}", u8::from(t.target), t.clip_a, t.clip_b);
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut set = TrialSet::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                if comment.trim() == "sampled-with-replacement" {
                    set.with_replacement = true;
                }
                continue;
            }
            let bad = |reason: &str| Error::format("trial list", format!("line {}: {reason}", i + 1));
            let mut parts = line.split_whitespace();
            let target = match parts.next() {
                Some("1") => true,
                Some("0") => false,
                _ => return Err(bad("label must be 0 or 1")),
            };
            let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(bad("expected `<label> <clip_a> <clip_b>`"));
            };
            set.trials.push(TrialPair {
                clip_a: a.to_string(),
                clip_b: b.to_string(),
                target,
            });
        }
        Ok(set)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

struct ClipIndex<'a> {
    ids: Vec<&'a str>,
    owner: Vec<usize>,
    /// per speaker: (first clip index, clip count, first positive-pair index)
    spans: Vec<(usize, usize, u64)>,
    positive_pool: u64,
}

impl<'a> ClipIndex<'a> {
    fn new(records: &'a [SpeakerRecord]) -> Self {
        let mut ids = Vec::new();
        let mut owner = Vec::new();
        let mut spans = Vec::new();
        let mut pos = 0u64;
        for (s, rec) in records.iter().enumerate() {
            let n = rec.clips.len();
            spans.push((ids.len(), n, pos));
            pos += (n * n.saturating_sub(1) / 2) as u64;
            for c in &rec.clips {
                ids.push(c.id.as_str());
                owner.push(s);
            }
        }
        Self {
            ids,
            owner,
            spans,
            positive_pool: pos,
        }
    }

    fn total_pairs(&self) -> u64 {
        let n = self.ids.len() as u64;
        n * n.saturating_sub(1) / 2
    }

    /// Decode the k-th same-speaker pair.
    fn positive(&self, k: u64) -> (usize, usize) {
        let s = self.spans.partition_point(|&(_, _, start)| start <= k) - 1;
        let (first, n, start) = self.spans[s];
        let (i, j) = triangle_pair(k - start, n);
        (first + i, first + j)
    }
}

/// k-th pair (i < j) of `n` items in row-major upper-triangle order.
fn triangle_pair(mut k: u64, n: usize) -> (usize, usize) {
    for i in 0..n {
        let row = (n - i - 1) as u64;
        if k < row {
            return (i, i + 1 + k as usize);
        }
        k -= row;
    }
    unreachable!("pair index out of range")
}

/// Sample `n_pos` same-speaker and `n_neg` different-speaker pairs.
///
/// Pairs are drawn uniformly without replacement; when a request exceeds the
/// pool of distinct pairs it is drawn with replacement and the set is flagged.
/// The returned list is shuffled.
pub fn generate_trials(
    records: &[SpeakerRecord],
    n_pos: usize,
    n_neg: usize,
    seed: u64,
) -> Result<TrialSet> {
    let index = ClipIndex::new(records);
    let negative_pool = index.total_pairs() - index.positive_pool;
    if n_pos > 0 && index.positive_pool == 0 {
        return Err(Error::Data(
            "positive trials requested but no speaker has two clips".into(),
        ));
    }
    if n_neg > 0 && negative_pool == 0 {
        return Err(Error::Data(
            "negative trials requested but fewer than two speakers have clips".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut with_replacement = false;
    let mut pairs: Vec<(usize, usize, bool)> = Vec::with_capacity(n_pos + n_neg);

    if (n_pos as u64) <= index.positive_pool {
        let picks = rand::seq::index::sample(&mut rng, index.positive_pool as usize, n_pos);
        let mut picks = picks.into_vec();
        picks.sort_unstable();
        pairs.extend(picks.into_iter().map(|k| {
            let (a, b) = index.positive(k as u64);
            (a, b, true)
        }));
    } else {
        with_replacement = true;
        for _ in 0..n_pos {
            let (a, b) = index.positive(rng.random_range(0..index.positive_pool));
            pairs.push((a, b, true));
        }
    }

    let n_clips = index.ids.len();
    let draw_negative = |rng: &mut ChaCha8Rng| loop {
        let a = rng.random_range(0..n_clips);
        let b = rng.random_range(0..n_clips);
        if index.owner[a] != index.owner[b] {
            return (a.min(b), a.max(b));
        }
    };
    if (n_neg as u64) > negative_pool {
        with_replacement = true;
        for _ in 0..n_neg {
            let (a, b) = draw_negative(&mut rng);
            pairs.push((a, b, false));
        }
    } else if (n_neg as u64) * 2 > negative_pool {
        let all: Vec<(usize, usize)> = (0..n_clips)
            .flat_map(|a| (a + 1..n_clips).map(move |b| (a, b)))
            .filter(|&(a, b)| index.owner[a] != index.owner[b])
            .collect();
        let mut picks = rand::seq::index::sample(&mut rng, all.len(), n_neg).into_vec();
        picks.sort_unstable();
        pairs.extend(picks.into_iter().map(|k| (all[k].0, all[k].1, false)));
    } else {
        let mut seen = HashSet::with_capacity(n_neg);
        while seen.len() < n_neg {
            let pair = draw_negative(&mut rng);
            if seen.insert(pair) {
                pairs.push((pair.0, pair.1, false));
            }
        }
    }

    pairs.shuffle(&mut rng);
    let trials = pairs
        .into_iter()
        .map(|(a, b, target)| TrialPair {
            clip_a: index.ids[a].to_string(),
            clip_b: index.ids[b].to_string(),
            target,
        })
        .collect();
    Ok(TrialSet {
        trials,
        with_replacement,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::manifest::ClipRef;

    fn records(speakers: usize, clips: usize) -> Vec<SpeakerRecord> {
        (0..speakers)
            .map(|s| SpeakerRecord {
                speaker_id: format!("s{s}"),
                labels: vec![0],
                clips: (0..clips)
                    .map(|c| ClipRef {
                        id: format!("s{s}-c{c}"),
                        path: format!("s{s}/{c}.wav").into(),
                    })
                    .collect(),
            })
            .collect()
    }

    fn owner(recs: &[SpeakerRecord], clip: &str) -> String {
        recs.iter()
            .find(|r| r.clips.iter().any(|c| c.id == clip))
            .unwrap()
            .speaker_id
            .clone()
    }

    #[test]
    fn triangle_decoding_enumerates_all_pairs() {
        let n = 6;
        let got: Vec<_> = (0..15).map(|k| triangle_pair(k, n)).collect();
        let want: Vec<_> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn small_corpus_targets_match_brute_force() {
        let recs = records(2, 2);
        let set = generate_trials(&recs, 2, 4, 99).unwrap();
        assert_eq!(set.len(), 6);
        assert_eq!(set.positives(), 2);
        assert!(!set.with_replacement);
        // exhaustive: the two positive pairs and four cross pairs are all used
        let mut seen = HashSet::new();
        for t in &set.trials {
            assert_ne!(t.clip_a, t.clip_b);
            assert_eq!(t.target, owner(&recs, &t.clip_a) == owner(&recs, &t.clip_b));
            assert!(seen.insert((t.clip_a.clone(), t.clip_b.clone())));
        }
    }

    #[test]
    fn negative_only_request() {
        let set = generate_trials(&records(3, 1), 0, 3, 1).unwrap();
        assert_eq!(set.len(), 3);
        assert!(set.trials.iter().all(|t| !t.target));
    }

    #[test]
    fn impossible_requests_fail() {
        assert!(generate_trials(&records(3, 1), 1, 0, 1).is_err());
        assert!(generate_trials(&records(1, 4), 0, 1, 1).is_err());
    }

    #[test]
    fn exhausted_pool_is_flagged() {
        let set = generate_trials(&records(2, 2), 5, 1, 3).unwrap();
        assert!(set.with_replacement);
        assert_eq!(set.positives(), 5);
        let parsed = TrialSet::parse(&set.to_text()).unwrap();
        assert_eq!(parsed, set);
    }

    #[test]
    fn deterministic_per_seed() {
        let recs = records(10, 5);
        let a = generate_trials(&recs, 40, 60, 5).unwrap();
        let b = generate_trials(&recs, 40, 60, 5).unwrap();
        let c = generate_trials(&recs, 40, 60, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn full_scale_counts() {
        let recs = records(160, 10);
        let set = generate_trials(&recs, 80_000, 80_000, 0).unwrap();
        assert_eq!(set.len(), 160_000);
        assert_eq!(set.positives(), 80_000);
        // 160 speakers x 45 pairs cannot supply 80k distinct positives
        assert!(set.with_replacement);
    }

    #[test]
    fn parse_rejects_garbage() {
        assert!(TrialSet::parse("2 a b\n").is_err());
        assert!(TrialSet::parse("1 a\n").is_err());
        assert!(TrialSet::parse("1 a b c\n").is_err());
    }
}
