//! Shuffle and mask augmentation strategies.
//!
//! Every strategy changes presentation only: the positive candidate, and
//! therefore which answer is correct, is preserved. Enhanced datasets keep
//! all originals and append `copies_per_sample` augmented variants per
//! original (default 4, the 1:4 ratio).

use rand::seq::index;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::template::{InstructionSample, KeyRegistry, Lineage};

pub const DEFAULT_COPIES_PER_SAMPLE: u32 = 4;

/// One augmentation strategy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "kebab-case")]
pub enum Strategy {
    /// Permute the candidate list presented in the Input.
    ShuffleCandidates,
    /// Permute the Output list. By default only the negative tail moves and
    /// the positive stays first; `full` shuffles the whole list (ablation).
    ShuffleOutput {
        #[serde(default)]
        full: bool,
    },
    /// Permute the order of the key-value entries in the Input.
    ShuffleKv,
    /// Remove exactly `k` maskable key-value entries.
    Mask { k: u32 },
    /// Remove `k` keys with `k` cycling over `ks`, copies split evenly.
    MaskMulti { ks: Vec<u32> },
}

impl Strategy {
    /// Short label recorded in lineage metadata.
    pub fn label(&self) -> String {
        match self {
            Strategy::ShuffleCandidates => "shuffle-candidates".into(),
            Strategy::ShuffleOutput { full: false } => "shuffle-output".into(),
            Strategy::ShuffleOutput { full: true } => "shuffle-output-full".into(),
            Strategy::ShuffleKv => "shuffle-kv".into(),
            Strategy::Mask { k } => format!("mask-{k}"),
            Strategy::MaskMulti { ks } => format!(
                "mask-multi-{}",
                ks.iter().map(|k| k.to_string()).collect::<Vec<_>>().join("-")
            ),
        }
    }
}

/// A validated augmentation request: which strategies, how many copies per
/// original, and the seed the per-sample RNG streams derive from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentationSpec {
    /// Usually exactly one; combinations must be explicitly enabled.
    pub strategies: Vec<Strategy>,
    pub copies_per_sample: u32,
    pub seed: u64,
    /// Display names of keys allowed to be masked; defaults to the
    /// registry's own flags.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub maskable_keys: Option<Vec<String>>,
    /// Combined strategies are untested territory and ship disabled.
    #[serde(default)]
    pub allow_combinations: bool,
}

impl AugmentationSpec {
    pub fn single(strategy: Strategy, copies_per_sample: u32, seed: u64) -> AugmentationSpec {
        AugmentationSpec {
            strategies: vec![strategy],
            copies_per_sample,
            seed,
            maskable_keys: None,
            allow_combinations: false,
        }
    }

    /// Resolve the effective registry, applying the maskable override.
    pub fn registry(&self) -> Result<KeyRegistry> {
        match &self.maskable_keys {
            None => Ok(KeyRegistry::standard()),
            Some(names) => {
                let mut keys = Vec::with_capacity(names.len());
                for name in names {
                    let key = crate::template::ContentKey::from_display(name).ok_or_else(|| {
                        Error::Config(format!("unknown key '{name}' in maskable_keys"))
                    })?;
                    keys.push(key);
                }
                KeyRegistry::with_maskable(&keys)
            }
        }
    }

    pub fn validate(&self, registry: &KeyRegistry) -> Result<()> {
        if self.copies_per_sample < 1 {
            return Err(Error::Config("copies_per_sample must be at least 1".into()));
        }
        if self.strategies.is_empty() {
            return Err(Error::Config("no augmentation strategy given".into()));
        }
        if self.strategies.len() > 1 {
            if !self.allow_combinations {
                return Err(Error::Config(
                    "combined strategies are disabled by default; pass allow_combinations to \
                     experiment with them"
                        .into(),
                ));
            }
            if self
                .strategies
                .iter()
                .any(|s| matches!(s, Strategy::MaskMulti { .. }))
            {
                return Err(Error::Config(
                    "mask-multi cannot be part of a combined pipeline".into(),
                ));
            }
        }
        let maskable = registry.maskable_count() as u32;
        for strategy in &self.strategies {
            match strategy {
                Strategy::Mask { k } => {
                    if *k < 1 || *k > maskable {
                        return Err(Error::Config(format!(
                            "mask k={k} outside 1..={maskable} maskable keys"
                        )));
                    }
                }
                Strategy::MaskMulti { ks } => {
                    if ks.is_empty() {
                        return Err(Error::Config("mask-multi needs at least one k".into()));
                    }
                    for k in ks {
                        if *k < 1 || *k > maskable {
                            return Err(Error::Config(format!(
                                "mask k={k} outside 1..={maskable} maskable keys"
                            )));
                        }
                    }
                    if self.copies_per_sample as usize % ks.len() != 0 {
                        return Err(Error::Config(format!(
                            "copies_per_sample={} not divisible by {} mask degrees",
                            self.copies_per_sample,
                            ks.len()
                        )));
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Uniformly permute the candidate list; output, positive, and key-value
/// entries are untouched. Singleton lists come back unchanged.
pub fn shuffle_candidates<R: Rng>(sample: &InstructionSample, rng: &mut R) -> InstructionSample {
    let mut out = sample.clone();
    if out.candidates.len() >= 2 {
        out.candidates.shuffle(rng);
    }
    out
}

/// Permute the Output list. With `full = false` (the default) the positive
/// stays at position 1 and only the negative tail is permuted, so the
/// ranking label survives; `full = true` shuffles everything.
pub fn shuffle_output<R: Rng>(
    sample: &InstructionSample,
    full: bool,
    rng: &mut R,
) -> InstructionSample {
    let mut out = sample.clone();
    if full {
        if out.output.len() >= 2 {
            out.output.shuffle(rng);
        }
    } else if out.output.len() >= 3 {
        out.output[1..].shuffle(rng);
    }
    out
}

/// Uniformly permute the key-value entry order. Entries move as units, so
/// the index alignment of the three history lists is untouched.
pub fn shuffle_kv<R: Rng>(sample: &InstructionSample, rng: &mut R) -> InstructionSample {
    let mut out = sample.clone();
    if out.input_kv.entries.len() >= 2 {
        out.input_kv.entries.shuffle(rng);
    }
    out
}

/// Remove exactly `k` maskable entries, chosen uniformly without
/// replacement; survivors keep their relative order and the history-titles
/// entry always survives.
pub fn mask_keys<R: Rng>(
    sample: &InstructionSample,
    k: u32,
    registry: &KeyRegistry,
    rng: &mut R,
) -> Result<InstructionSample> {
    let maskable_idx: Vec<usize> = sample
        .input_kv
        .entries
        .iter()
        .enumerate()
        .filter(|(_, e)| registry.is_maskable(&e.key))
        .map(|(i, _)| i)
        .collect();
    if k as usize > maskable_idx.len() {
        return Err(Error::Config(format!(
            "mask k={k} exceeds the {} maskable keys present in sample {}",
            maskable_idx.len(),
            sample.id
        )));
    }
    let mut removed: Vec<usize> = index::sample(rng, maskable_idx.len(), k as usize)
        .iter()
        .map(|i| maskable_idx[i])
        .collect();
    removed.sort_unstable();
    let mut out = sample.clone();
    for idx in removed.into_iter().rev() {
        out.input_kv.entries.remove(idx);
    }
    Ok(out)
}

fn apply_strategy<R: Rng>(
    sample: &InstructionSample,
    strategy: &Strategy,
    registry: &KeyRegistry,
    rng: &mut R,
) -> Result<InstructionSample> {
    match strategy {
        Strategy::ShuffleCandidates => Ok(shuffle_candidates(sample, rng)),
        Strategy::ShuffleOutput { full } => Ok(shuffle_output(sample, *full, rng)),
        Strategy::ShuffleKv => Ok(shuffle_kv(sample, rng)),
        Strategy::Mask { k } => mask_keys(sample, *k, registry, rng),
        Strategy::MaskMulti { .. } => unreachable!("resolved to Mask before application"),
    }
}

/// The strategy a given copy index uses: mask-multi splits copies into
/// contiguous equal blocks per k, everything else is uniform.
fn copy_strategy(spec: &AugmentationSpec, strategy: &Strategy, copy_index: u32) -> Strategy {
    match strategy {
        Strategy::MaskMulti { ks } => {
            let block = spec.copies_per_sample as usize / ks.len();
            let which = ((copy_index - 1) as usize) / block;
            Strategy::Mask { k: ks[which] }
        }
        other => other.clone(),
    }
}

/// Assemble the enhanced dataset: all originals in order, each immediately
/// followed by its augmented copies. Pure function of (samples, spec).
pub fn augment_dataset(
    samples: &[InstructionSample],
    spec: &AugmentationSpec,
) -> Result<Vec<InstructionSample>> {
    let registry = spec.registry()?;
    spec.validate(&registry)?;

    let groups: Vec<Vec<InstructionSample>> = samples
        .par_iter()
        .map(|sample| -> Result<Vec<InstructionSample>> {
            let mut group = Vec::with_capacity(spec.copies_per_sample as usize + 1);
            group.push(sample.clone());
            for copy_index in 1..=spec.copies_per_sample {
                let mut rng = rng::for_sample(spec.seed, "augment", &sample.id, copy_index);
                let mut augmented = sample.clone();
                let mut labels = Vec::with_capacity(spec.strategies.len());
                for strategy in &spec.strategies {
                    let resolved = copy_strategy(spec, strategy, copy_index);
                    augmented = apply_strategy(&augmented, &resolved, &registry, &mut rng)?;
                    labels.push(resolved.label());
                }
                augmented.id = format!("{}-aug{}", sample.id, copy_index);
                augmented.lineage = Some(Lineage {
                    parent_id: sample.id.clone(),
                    strategy: labels.join("+"),
                    copy_index,
                    seed: spec.seed,
                });
                group.push(augmented);
            }
            Ok(group)
        })
        .collect::<Result<_>>()?;

    Ok(groups.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{Gender, UserRecord};
    use crate::sequence::{CandidateRef, CandidateSet, SequenceStep};
    use crate::template::{render_sample, ContentKey};
    use std::collections::BTreeMap;
    use std::collections::BTreeSet;

    fn sample_with(n_candidates: usize) -> InstructionSample {
        let user = UserRecord {
            user_id: 1,
            gender: Gender::F,
            age: "25-34".into(),
            occupation: "artist".into(),
        };
        let history: Vec<SequenceStep> = (0..3)
            .map(|i| SequenceStep {
                item_id: i + 1,
                title: format!("History {i} (199{i})"),
                categories: vec!["Drama".into()],
                rating: 3,
            })
            .collect();
        let members: Vec<CandidateRef> = (0..n_candidates)
            .map(|i| CandidateRef {
                item_id: 100 + i as u32,
                title: format!("Candidate {i} (200{i})"),
            })
            .collect();
        let positive = members[0].clone();
        let cs = CandidateSet { members, positive };
        render_sample("u1-train".into(), &user, &history, &cs).unwrap()
    }

    fn sorted(v: &[String]) -> Vec<String> {
        let mut v = v.to_vec();
        v.sort();
        v
    }

    #[test]
    fn shuffle_candidates_preserves_multiset_and_output() {
        let sample = sample_with(5);
        let mut rng = rng::for_sample(1, "t", "u1-train", 1);
        let shuffled = shuffle_candidates(&sample, &mut rng);
        assert_eq!(sorted(&shuffled.candidates), sorted(&sample.candidates));
        assert_eq!(shuffled.output, sample.output);
        assert_eq!(shuffled.input_kv, sample.input_kv);
        assert_eq!(shuffled.positive_title, sample.positive_title);
    }

    #[test]
    fn shuffle_is_deterministic_for_a_fixed_seed() {
        let sample = sample_with(6);
        let a = shuffle_candidates(&sample, &mut rng::for_sample(9, "t", "u1-train", 1));
        let b = shuffle_candidates(&sample, &mut rng::for_sample(9, "t", "u1-train", 1));
        assert_eq!(a, b);
    }

    #[test]
    fn shuffle_output_keeps_positive_first() {
        let sample = sample_with(4);
        for seed in 0..30 {
            let mut rng = rng::for_sample(seed, "t", "u1-train", 1);
            let shuffled = shuffle_output(&sample, false, &mut rng);
            assert_eq!(shuffled.output[0], sample.positive_title);
            assert_eq!(sorted(&shuffled.output), sorted(&sample.output));
            assert_eq!(shuffled.candidates, sample.candidates);
        }
    }

    #[test]
    fn shuffle_output_covers_all_tail_permutations() {
        // 3 negatives -> 6 permutations of the tail; over many seeds every
        // one of them must appear roughly uniformly.
        let sample = sample_with(4);
        let mut counts: BTreeMap<Vec<String>, u32> = BTreeMap::new();
        let n_runs = 1200u64;
        for seed in 0..n_runs {
            let mut rng = rng::for_sample(seed, "cover", "u1-train", 1);
            let shuffled = shuffle_output(&sample, false, &mut rng);
            *counts.entry(shuffled.output[1..].to_vec()).or_default() += 1;
        }
        assert_eq!(counts.len(), 6, "all 6 tail permutations should occur");
        let expected = n_runs as f64 / 6.0;
        let chi2: f64 = counts
            .values()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        // 99.9% critical value for 5 degrees of freedom.
        assert!(chi2 < 20.52, "chi2 = {chi2}, counts = {counts:?}");
    }

    #[test]
    fn shuffle_output_with_single_negative_is_identity() {
        let sample = sample_with(2);
        let mut rng = rng::for_sample(3, "t", "u1-train", 1);
        let shuffled = shuffle_output(&sample, false, &mut rng);
        assert_eq!(shuffled.output, sample.output);
    }

    #[test]
    fn full_output_shuffle_can_move_the_positive() {
        let sample = sample_with(4);
        let moved = (0..50).any(|seed| {
            let mut rng = rng::for_sample(seed, "t", "u1-train", 1);
            shuffle_output(&sample, true, &mut rng).output[0] != sample.positive_title
        });
        assert!(moved, "full shuffle should displace the positive sometimes");
    }

    #[test]
    fn shuffle_kv_preserves_pairs_and_alignment() {
        let sample = sample_with(3);
        let mut rng = rng::for_sample(5, "t", "u1-train", 1);
        let shuffled = shuffle_kv(&sample, &mut rng);
        let as_set = |s: &InstructionSample| -> BTreeSet<(String, String)> {
            s.input_kv
                .entries
                .iter()
                .map(|e| (e.key.clone(), e.value.clone()))
                .collect()
        };
        assert_eq!(as_set(&shuffled), as_set(&sample));
        assert_eq!(shuffled.candidates, sample.candidates);
        assert_eq!(shuffled.output, sample.output);
        // Values moved as whole entries: alignment between the history lists
        // is untouched.
        for key in [ContentKey::HistoryTitles, ContentKey::HistoryRatings] {
            assert_eq!(
                shuffled.input_kv.get(key.display()),
                sample.input_kv.get(key.display())
            );
        }
    }

    #[test]
    fn mask_keeps_exact_survivor_count_and_history_titles() {
        let sample = sample_with(3);
        let registry = KeyRegistry::standard();
        for k in 1..=5u32 {
            let mut rng = rng::for_sample(k as u64, "t", "u1-train", 1);
            let masked = mask_keys(&sample, k, &registry, &mut rng).unwrap();
            assert_eq!(masked.input_kv.entries.len(), 6 - k as usize);
            assert!(masked
                .input_kv
                .get(ContentKey::HistoryTitles.display())
                .is_some());
            assert_eq!(masked.candidates, sample.candidates);
            assert_eq!(masked.output, sample.output);
        }
    }

    #[test]
    fn mask_at_maximum_leaves_only_history_titles() {
        let sample = sample_with(3);
        let registry = KeyRegistry::standard();
        let mut rng = rng::for_sample(1, "t", "u1-train", 1);
        let masked = mask_keys(&sample, 5, &registry, &mut rng).unwrap();
        assert_eq!(masked.input_kv.entries.len(), 1);
        assert_eq!(
            masked.input_kv.entries[0].key,
            ContentKey::HistoryTitles.display()
        );
    }

    #[test]
    fn mask_beyond_maskable_count_is_a_config_error() {
        let sample = sample_with(3);
        let registry = KeyRegistry::standard();
        let mut rng = rng::for_sample(1, "t", "u1-train", 1);
        let err = mask_keys(&sample, 6, &registry, &mut rng).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn mask_preserves_survivor_order() {
        let sample = sample_with(3);
        let registry = KeyRegistry::standard();
        for seed in 0..40 {
            let mut rng = rng::for_sample(seed, "t", "u1-train", 1);
            let masked = mask_keys(&sample, 3, &registry, &mut rng).unwrap();
            let original_keys: Vec<&String> =
                sample.input_kv.entries.iter().map(|e| &e.key).collect();
            let mut cursor = 0usize;
            for entry in &masked.input_kv.entries {
                let pos = original_keys[cursor..]
                    .iter()
                    .position(|k| **k == entry.key)
                    .expect("survivor must be a subsequence");
                cursor += pos + 1;
            }
        }
    }

    #[test]
    fn augment_ratio_is_one_to_four() {
        let samples: Vec<InstructionSample> = (0..10)
            .map(|i| {
                let mut s = sample_with(4);
                s.id = format!("u{i}-train");
                s
            })
            .collect();
        let spec = AugmentationSpec::single(Strategy::ShuffleCandidates, 4, 42);
        let out = augment_dataset(&samples, &spec).unwrap();
        assert_eq!(out.len(), 50);
        let originals = out.iter().filter(|s| s.lineage.is_none()).count();
        assert_eq!(originals, 10);
    }

    #[test]
    fn mask_multi_splits_copies_evenly() {
        let samples: Vec<InstructionSample> = (0..10)
            .map(|i| {
                let mut s = sample_with(4);
                s.id = format!("u{i}-train");
                s
            })
            .collect();
        let spec = AugmentationSpec::single(Strategy::MaskMulti { ks: vec![3, 4] }, 4, 42);
        let out = augment_dataset(&samples, &spec).unwrap();
        assert_eq!(out.len(), 50, "10 originals + 20 (k=3) + 20 (k=4)");
        let by_label = |label: &str| {
            out.iter()
                .filter(|s| s.lineage.as_ref().is_some_and(|l| l.strategy == label))
                .count()
        };
        assert_eq!(by_label("mask-3"), 20);
        assert_eq!(by_label("mask-4"), 20);
    }

    #[test]
    fn zero_copies_is_a_config_error() {
        let samples = vec![sample_with(3)];
        let spec = AugmentationSpec::single(Strategy::ShuffleKv, 0, 1);
        assert!(matches!(
            augment_dataset(&samples, &spec).unwrap_err(),
            Error::Config(_)
        ));
    }

    #[test]
    fn combinations_are_disabled_by_default() {
        let samples = vec![sample_with(3)];
        let mut spec = AugmentationSpec::single(Strategy::ShuffleKv, 2, 1);
        spec.strategies.push(Strategy::ShuffleCandidates);
        assert!(matches!(
            augment_dataset(&samples, &spec).unwrap_err(),
            Error::Config(_)
        ));
        spec.allow_combinations = true;
        let out = augment_dataset(&samples, &spec).unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(
            out[1].lineage.as_ref().unwrap().strategy,
            "shuffle-kv+shuffle-candidates"
        );
    }

    #[test]
    fn lineage_and_label_are_preserved() {
        let samples = vec![sample_with(5)];
        let spec = AugmentationSpec::single(Strategy::ShuffleOutput { full: false }, 4, 77);
        let out = augment_dataset(&samples, &spec).unwrap();
        assert!(out[0].lineage.is_none());
        for (i, copy) in out[1..].iter().enumerate() {
            let lineage = copy.lineage.as_ref().unwrap();
            assert_eq!(lineage.parent_id, "u1-train");
            assert_eq!(lineage.copy_index as usize, i + 1);
            assert_eq!(lineage.seed, 77);
            assert_eq!(copy.positive_title, out[0].positive_title);
            assert!(copy.candidates.contains(&copy.positive_title));
            assert_eq!(copy.id, format!("u1-train-aug{}", i + 1));
        }
    }

    #[test]
    fn augmentation_is_a_pure_function_of_samples_and_seed() {
        let samples: Vec<InstructionSample> = (0..5)
            .map(|i| {
                let mut s = sample_with(4);
                s.id = format!("u{i}-train");
                s
            })
            .collect();
        let spec = AugmentationSpec::single(Strategy::ShuffleKv, 4, 13);
        let a = augment_dataset(&samples, &spec).unwrap();
        let b = augment_dataset(&samples, &spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn spec_json_round_trips() {
        let spec = AugmentationSpec::single(Strategy::MaskMulti { ks: vec![3, 4] }, 4, 7);
        let text = serde_json::to_string(&spec).unwrap();
        let parsed: AugmentationSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(parsed, spec);
    }
}
