//! Orchestration of the build stage: sequences -> leave-one-out split ->
//! truncation -> candidate sampling -> rendered train/test datasets.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::Catalog;
use crate::rng;
use crate::sequence::{
    build_sequences, sample_candidates_from_pool, split_leave_one_out, truncate_history,
    BehaviorSequence, CandidatePool, CandidateRef, DroppedUser, Splits, UserSplit,
    DEFAULT_MAX_HISTORY, DEFAULT_N_NEG,
};
use crate::template::{render_sample, InstructionSample};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildConfig {
    pub global_seed: u64,
    pub max_history: usize,
    pub n_neg: usize,
}

impl Default for BuildConfig {
    fn default() -> Self {
        BuildConfig {
            global_seed: 42,
            max_history: DEFAULT_MAX_HISTORY,
            n_neg: DEFAULT_N_NEG,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuildOutput {
    pub splits: Splits,
    pub train: Vec<InstructionSample>,
    pub test: Vec<InstructionSample>,
}

fn label_of(step: &crate::sequence::SequenceStep) -> CandidateRef {
    CandidateRef {
        item_id: step.item_id,
        title: step.title.clone(),
    }
}

fn build_user(
    seq: &BehaviorSequence,
    catalog: &Catalog,
    pool: &CandidatePool,
    cfg: &BuildConfig,
) -> Result<(UserSplit, InstructionSample, InstructionSample)> {
    let split = split_leave_one_out(seq)?;
    let train_history = truncate_history(&split.train_history, cfg.max_history).to_vec();
    let test_history = truncate_history(&split.test_history, cfg.max_history).to_vec();

    // Negatives are excluded against the user's entire sequence, not the
    // truncated window, so no label or history item can leak back in.
    let mut train_rng = rng::for_user(cfg.global_seed, "candidates/train", seq.user_id);
    let train_candidates = sample_candidates_from_pool(
        &label_of(&split.train_label),
        seq,
        pool,
        cfg.n_neg,
        &mut train_rng,
    )?;
    let mut test_rng = rng::for_user(cfg.global_seed, "candidates/test", seq.user_id);
    let test_candidates = sample_candidates_from_pool(
        &label_of(&split.test_label),
        seq,
        pool,
        cfg.n_neg,
        &mut test_rng,
    )?;

    let user = catalog
        .user(seq.user_id)
        .ok_or_else(|| Error::Integrity(format!("no user record for user {}", seq.user_id)))?;
    let train_sample = render_sample(
        format!("u{}-train", seq.user_id),
        user,
        &train_history,
        &train_candidates,
    )?;
    let test_sample = render_sample(
        format!("u{}-test", seq.user_id),
        user,
        &test_history,
        &test_candidates,
    )?;

    let user_split = UserSplit {
        train_history,
        train_label: split.train_label,
        train_candidates,
        test_history,
        test_label: split.test_label,
        test_candidates,
    };
    Ok((user_split, train_sample, test_sample))
}

/// Build the splits document and the rendered train/test datasets. One train
/// and one test sample per surviving user; users with fewer than 3 steps are
/// dropped with a reason. Deterministic in (catalog, config) regardless of
/// thread count.
pub fn build_datasets(catalog: &Catalog, cfg: &BuildConfig) -> Result<BuildOutput> {
    if cfg.max_history < 1 {
        return Err(Error::Config("max_history must be at least 1".into()));
    }
    let sequences = build_sequences(&catalog.events, catalog)?;
    let pool = CandidatePool::new(catalog);

    let results: Vec<(u32, Result<(UserSplit, InstructionSample, InstructionSample)>)> = sequences
        .par_iter()
        .map(|seq| (seq.user_id, build_user(seq, catalog, &pool, cfg)))
        .collect();

    let mut splits = Splits {
        global_seed: cfg.global_seed,
        max_history: cfg.max_history,
        n_neg: cfg.n_neg,
        users: Default::default(),
        dropped: Vec::new(),
    };
    let mut train = Vec::with_capacity(results.len());
    let mut test = Vec::with_capacity(results.len());
    for (user_id, result) in results {
        match result {
            Ok((user_split, train_sample, test_sample)) => {
                splits.users.insert(user_id, user_split);
                train.push(train_sample);
                test.push(test_sample);
            }
            Err(Error::ShortSequence { user_id, len }) => splits.dropped.push(DroppedUser {
                user_id,
                reason: format!("sequence has {len} steps, need at least 3"),
            }),
            Err(other) => return Err(other),
        }
    }
    Ok(BuildOutput {
        splits,
        train,
        test,
    })
}
