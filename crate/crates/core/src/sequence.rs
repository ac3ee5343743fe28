//! Per-user behavior sequences, leave-one-out splitting, history truncation,
//! and candidate-set sampling.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::index;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::normalize_title;
use crate::ingest::{Catalog, InteractionEvent};

pub const DEFAULT_MAX_HISTORY: usize = 20;
pub const DEFAULT_N_NEG: usize = 9;

/// One action in a user's chronological sequence, resolved against the item
/// catalog.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceStep {
    pub item_id: u32,
    pub title: String,
    pub categories: Vec<String>,
    pub rating: u8,
}

/// A user's full action sequence, sorted by (timestamp, item_id) ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BehaviorSequence {
    pub user_id: u32,
    pub steps: Vec<SequenceStep>,
}

/// Leave-one-out split: the most recent action is the test label, the second
/// most recent is the train label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitOutcome {
    pub train_history: Vec<SequenceStep>,
    pub train_label: SequenceStep,
    pub test_history: Vec<SequenceStep>,
    pub test_label: SequenceStep,
}

/// A candidate item carried by title (candidates have no extra keys).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateRef {
    pub item_id: u32,
    pub title: String,
}

/// One positive plus sampled negatives, in randomized presentation order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub members: Vec<CandidateRef>,
    pub positive: CandidateRef,
}

/// Build one sequence per user appearing in `events`, ordered by user_id.
/// Ties on timestamp break by item_id so builds are reproducible.
pub fn build_sequences(events: &[InteractionEvent], catalog: &Catalog) -> Result<Vec<BehaviorSequence>> {
    let mut per_user: BTreeMap<u32, Vec<&InteractionEvent>> = BTreeMap::new();
    for e in events {
        per_user.entry(e.user_id).or_default().push(e);
    }
    let mut sequences = Vec::with_capacity(per_user.len());
    for (user_id, mut user_events) in per_user {
        user_events.sort_by_key(|e| (e.timestamp, e.item_id));
        let mut steps = Vec::with_capacity(user_events.len());
        for e in user_events {
            let item = catalog.item(e.item_id).ok_or_else(|| {
                Error::Integrity(format!(
                    "event for user {} references unknown item {}",
                    e.user_id, e.item_id
                ))
            })?;
            steps.push(SequenceStep {
                item_id: item.item_id,
                title: item.title.clone(),
                categories: item.categories.clone(),
                rating: e.rating,
            });
        }
        sequences.push(BehaviorSequence { user_id, steps });
    }
    Ok(sequences)
}

/// Split a sequence into train/test parts. Requires at least 3 steps: one
/// history step, the train label, and the test label.
pub fn split_leave_one_out(seq: &BehaviorSequence) -> Result<SplitOutcome> {
    let n = seq.steps.len();
    if n < 3 {
        return Err(Error::ShortSequence {
            user_id: seq.user_id,
            len: n,
        });
    }
    Ok(SplitOutcome {
        train_history: seq.steps[..n - 2].to_vec(),
        train_label: seq.steps[n - 2].clone(),
        test_history: seq.steps[..n - 1].to_vec(),
        test_label: seq.steps[n - 1].clone(),
    })
}

/// Keep the most recent `max_len` steps, preserving order.
pub fn truncate_history(history: &[SequenceStep], max_len: usize) -> &[SequenceStep] {
    &history[history.len().saturating_sub(max_len)..]
}

/// Catalog view for negative sampling with normalized titles precomputed.
/// Items whose normalized title duplicates another item's are represented by
/// their lowest item_id, so a candidate set never contains two members that
/// normalize to the same title.
pub struct CandidatePool {
    entries: Vec<(CandidateRef, String)>,
}

impl CandidatePool {
    pub fn new(catalog: &Catalog) -> CandidatePool {
        let mut seen: HashSet<String> = HashSet::with_capacity(catalog.items.len());
        let mut entries = Vec::with_capacity(catalog.items.len());
        for item in &catalog.items {
            let norm = normalize_title(&item.title);
            if seen.insert(norm.clone()) {
                entries.push((
                    CandidateRef {
                        item_id: item.item_id,
                        title: item.title.clone(),
                    },
                    norm,
                ));
            }
        }
        CandidatePool { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Sample `n_neg` negatives uniformly without replacement from items the
/// user never interacted with, then present the full set in a uniform random
/// order. Exclusion is by normalized title against the user's entire
/// sequence, so neither the label nor any history item can reappear.
pub fn sample_candidates_from_pool<R: Rng>(
    label: &CandidateRef,
    full_user_sequence: &BehaviorSequence,
    pool: &CandidatePool,
    n_neg: usize,
    rng: &mut R,
) -> Result<CandidateSet> {
    let user_titles: HashSet<String> = full_user_sequence
        .steps
        .iter()
        .map(|s| normalize_title(&s.title))
        .collect();

    let eligible: Vec<&CandidateRef> = pool
        .entries
        .iter()
        .filter(|(_, norm)| !user_titles.contains(norm))
        .map(|(item, _)| item)
        .collect();

    if eligible.len() < n_neg {
        return Err(Error::Sampling(format!(
            "user {}: need {} negatives but only {} eligible items",
            full_user_sequence.user_id,
            n_neg,
            eligible.len()
        )));
    }

    let mut members: Vec<CandidateRef> = Vec::with_capacity(n_neg + 1);
    members.push(label.clone());
    for idx in index::sample(rng, eligible.len(), n_neg).iter() {
        members.push(eligible[idx].clone());
    }
    members.shuffle(rng);
    Ok(CandidateSet {
        members,
        positive: label.clone(),
    })
}

/// [`sample_candidates_from_pool`] with the pool built on the fly.
pub fn sample_candidates<R: Rng>(
    label: &CandidateRef,
    full_user_sequence: &BehaviorSequence,
    catalog: &Catalog,
    n_neg: usize,
    rng: &mut R,
) -> Result<CandidateSet> {
    sample_candidates_from_pool(
        label,
        full_user_sequence,
        &CandidatePool::new(catalog),
        n_neg,
        rng,
    )
}

/// Train/test material for one user, histories already truncated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserSplit {
    pub train_history: Vec<SequenceStep>,
    pub train_label: SequenceStep,
    pub train_candidates: CandidateSet,
    pub test_history: Vec<SequenceStep>,
    pub test_label: SequenceStep,
    pub test_candidates: CandidateSet,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedUser {
    pub user_id: u32,
    pub reason: String,
}

/// The splits document emitted by the build stage, keyed by user_id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub global_seed: u64,
    pub max_history: usize,
    pub n_neg: usize,
    pub users: BTreeMap<u32, UserSplit>,
    pub dropped: Vec<DroppedUser>,
}

impl Splits {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let text = serde_json::to_string_pretty(self).expect("splits serialize");
        f.write_all(text.as_bytes())
            .and_then(|_| f.write_all(b"\n"))
            .map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn read_json(path: &Path) -> Result<Splits> {
        let data = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        serde_json::from_slice(&data).map_err(|e| Error::json(path.display().to_string(), e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{parse_movies, parse_ratings, parse_users, Catalog};
    use crate::rng;

    fn tiny_catalog() -> Catalog {
        let users = parse_users(b"1::F::1::10::48067\n2::M::25::2::10001\n").unwrap();
        let mut movie_lines = String::new();
        for i in 1..=10 {
            movie_lines.push_str(&format!("{i}::Movie {i:02} (199{})::Drama\n", i % 10));
        }
        let items = parse_movies(movie_lines.as_bytes()).unwrap();
        let events = parse_ratings(b"1::3::4::100\n1::7::5::50\n2::1::3::10\n").unwrap();
        Catalog::build(users, items, events, 1, false).unwrap()
    }

    fn step(item_id: u32) -> SequenceStep {
        SequenceStep {
            item_id,
            title: format!("Movie {item_id:02} (199{})", item_id % 10),
            categories: vec!["Drama".into()],
            rating: 3,
        }
    }

    fn seq(user_id: u32, items: &[u32]) -> BehaviorSequence {
        BehaviorSequence {
            user_id,
            steps: items.iter().copied().map(step).collect(),
        }
    }

    #[test]
    fn sequences_sort_by_timestamp() {
        let catalog = tiny_catalog();
        let seqs = build_sequences(&catalog.events, &catalog).unwrap();
        let user1 = &seqs[0];
        assert_eq!(user1.user_id, 1);
        assert_eq!(
            user1.steps.iter().map(|s| s.item_id).collect::<Vec<_>>(),
            vec![7, 3],
            "t=50 comes before t=100"
        );
    }

    #[test]
    fn equal_timestamps_break_ties_by_item_id() {
        let catalog = {
            let users = parse_users(b"1::F::1::10::48067\n").unwrap();
            let items =
                parse_movies(b"3::Movie 03 (1993)::Drama\n7::Movie 07 (1997)::Drama\n").unwrap();
            let events = parse_ratings(b"1::7::4::100\n1::3::4::100\n").unwrap();
            Catalog::build(users, items, events, 1, false).unwrap()
        };
        let seqs = build_sequences(&catalog.events, &catalog).unwrap();
        assert_eq!(
            seqs[0].steps.iter().map(|s| s.item_id).collect::<Vec<_>>(),
            vec![3, 7]
        );
    }

    #[test]
    fn first_step_is_minimum_timestamp() {
        let catalog = tiny_catalog();
        let seqs = build_sequences(&catalog.events, &catalog).unwrap();
        // Brute-force oracle: scan user 1's raw events for the minimum.
        let min_ts_item = catalog
            .events
            .iter()
            .filter(|e| e.user_id == 1)
            .min_by_key(|e| (e.timestamp, e.item_id))
            .unwrap()
            .item_id;
        assert_eq!(seqs[0].steps[0].item_id, min_ts_item);
    }

    #[test]
    fn split_four_steps() {
        let s = seq(1, &[10, 20, 30, 40]);
        let out = split_leave_one_out(&s).unwrap();
        assert_eq!(out.train_history, vec![step(10), step(20)]);
        assert_eq!(out.train_label, step(30));
        assert_eq!(out.test_history, vec![step(10), step(20), step(30)]);
        assert_eq!(out.test_label, step(40));
        // The train label is always the last element of the test history.
        assert_eq!(out.train_label, *out.test_history.last().unwrap());
    }

    #[test]
    fn split_three_steps_is_minimal() {
        let s = seq(1, &[10, 20, 30]);
        let out = split_leave_one_out(&s).unwrap();
        assert_eq!(out.train_history, vec![step(10)]);
        assert_eq!(out.train_label, step(20));
        assert_eq!(out.test_label, step(30));
    }

    #[test]
    fn split_two_steps_fails() {
        let s = seq(9, &[10, 20]);
        let err = split_leave_one_out(&s).unwrap_err();
        assert!(matches!(err, Error::ShortSequence { user_id: 9, len: 2 }));
    }

    #[test]
    fn truncate_keeps_most_recent() {
        let items: Vec<u32> = (1..=25).collect();
        let s = seq(1, &items);
        let t = truncate_history(&s.steps, 20);
        assert_eq!(t.len(), 20);
        assert_eq!(t[0].item_id, 6);
        assert_eq!(t[19].item_id, 25);

        let short = seq(1, &[1, 2, 3, 4, 5]);
        assert_eq!(truncate_history(&short.steps, 20), &short.steps[..]);

        assert_eq!(truncate_history(&s.steps, 1), &s.steps[24..]);
    }

    #[test]
    fn candidates_degenerate_n_neg_zero() {
        let catalog = tiny_catalog();
        let label = CandidateRef {
            item_id: 3,
            title: "Movie 03 (1993)".into(),
        };
        let s = seq(1, &[7, 3]);
        let mut r = rng::for_user(1, "candidates/test", 1);
        let cs = sample_candidates(&label, &s, &catalog, 0, &mut r).unwrap();
        assert_eq!(cs.members, vec![label.clone()]);
        assert_eq!(cs.positive, label);
    }

    #[test]
    fn candidates_exhaust_small_catalog() {
        // 10 items, user interacted with exactly 1: the 9 negatives must be
        // the other 9 items (brute-force set difference oracle).
        let catalog = tiny_catalog();
        let s = seq(2, &[1]);
        let label = CandidateRef {
            item_id: 1,
            title: "Movie 01 (1991)".into(),
        };
        let mut r = rng::for_user(7, "candidates/train", 2);
        let cs = sample_candidates(&label, &s, &catalog, 9, &mut r).unwrap();
        assert_eq!(cs.members.len(), 10);
        let mut ids: Vec<u32> = cs.members.iter().map(|m| m.item_id).collect();
        ids.sort_unstable();
        assert_eq!(ids, (1..=10).collect::<Vec<_>>());
        let mut r2 = rng::for_user(8, "candidates/train", 2);
        let err = sample_candidates(&label, &s, &catalog, 10, &mut r2).unwrap_err();
        assert!(matches!(err, Error::Sampling(_)));
    }

    #[test]
    fn candidates_are_deterministic_per_seed() {
        let catalog = tiny_catalog();
        let s = seq(1, &[7, 3]);
        let label = CandidateRef {
            item_id: 3,
            title: "Movie 03 (1993)".into(),
        };
        let a = sample_candidates(&label, &s, &catalog, 5, &mut rng::for_user(42, "c", 1)).unwrap();
        let b = sample_candidates(&label, &s, &catalog, 5, &mut rng::for_user(42, "c", 1)).unwrap();
        assert_eq!(a, b);
        let c = sample_candidates(&label, &s, &catalog, 5, &mut rng::for_user(43, "c", 1)).unwrap();
        assert_ne!(a, c, "different seed should move the sample");
    }

    #[test]
    fn negatives_never_come_from_the_users_sequence() {
        let catalog = tiny_catalog();
        let s = seq(1, &[7, 3]);
        let label = CandidateRef {
            item_id: 3,
            title: "Movie 03 (1993)".into(),
        };
        for seed in 0..50 {
            let cs =
                sample_candidates(&label, &s, &catalog, 6, &mut rng::for_user(seed, "c", 1)).unwrap();
            assert_eq!(cs.members.iter().filter(|m| **m == label).count(), 1);
            for m in &cs.members {
                if *m == label {
                    continue;
                }
                assert!(m.item_id != 7 && m.item_id != 3, "leaked item {}", m.item_id);
            }
        }
    }

    #[test]
    fn negative_selection_is_roughly_uniform() {
        // Chi-square sanity check over the eligible pool, frozen base seed.
        let catalog = tiny_catalog();
        let s = seq(2, &[1]);
        let label = CandidateRef {
            item_id: 1,
            title: "Movie 01 (1991)".into(),
        };
        let n_runs = 2000u32;
        let n_neg = 4usize;
        let mut counts: BTreeMap<u32, u32> = BTreeMap::new();
        for seed in 0..n_runs {
            let cs = sample_candidates(
                &label,
                &s,
                &catalog,
                n_neg,
                &mut rng::for_user(seed as u64, "uniformity", 2),
            )
            .unwrap();
            for m in &cs.members {
                if m.item_id != 1 {
                    *counts.entry(m.item_id).or_default() += 1;
                }
            }
        }
        let eligible = 9.0;
        let expected = n_runs as f64 * n_neg as f64 / eligible;
        let chi2: f64 = counts
            .values()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        // 99.9% critical value for chi-square with 8 degrees of freedom.
        assert!(chi2 < 26.13, "chi2 = {chi2}, counts = {counts:?}");
        assert_eq!(counts.len(), 9, "every eligible negative should appear");
    }
}
