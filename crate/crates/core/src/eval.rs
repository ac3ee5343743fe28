//! Parsing generative ranked-list output and scoring it with HR@K, NDCG@K,
//! and Error Rate.
//!
//! Matching is exact-after-normalization against the closed candidate set;
//! hallucinated titles, duplicates, and unparseable output are flagged
//! invalid. Rank is computed over valid titles only, so non-candidates never
//! occupy a rank.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::{BufRead, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, ParseError, Result};
use crate::rng;
use crate::template::InstructionSample;

/// Case-fold, collapse whitespace, and strip list markers, wrapping quotes,
/// and trailing separators. Pure and idempotent.
pub fn normalize_title(raw: &str) -> String {
    let mut s = raw.trim();
    loop {
        let before = s;
        s = strip_list_marker(s);
        s = strip_wrapping_quotes(s);
        s = s.trim_end_matches([',', ';']);
        s = s.trim();
        if s == before {
            break;
        }
    }
    let collapsed: Vec<&str> = s.split_whitespace().collect();
    collapsed.join(" ").to_lowercase()
}

/// Strip one leading `1.` / `12)` / `-` / `*` / `•` list marker, which must
/// be followed by whitespace so titles that merely start with digits
/// ("101 Dalmatians (1996)") survive.
fn strip_list_marker(s: &str) -> &str {
    let bytes = s.as_bytes();
    let mut digits = 0;
    while digits < bytes.len() && digits < 3 && bytes[digits].is_ascii_digit() {
        digits += 1;
    }
    if digits > 0 && digits < bytes.len() && (bytes[digits] == b'.' || bytes[digits] == b')') {
        let rest = &s[digits + 1..];
        if rest.starts_with(char::is_whitespace) {
            return rest.trim_start();
        }
    }
    for bullet in ["-", "*", "\u{2022}"] {
        if let Some(rest) = s.strip_prefix(bullet) {
            if rest.starts_with(char::is_whitespace) {
                return rest.trim_start();
            }
        }
    }
    s
}

fn strip_wrapping_quotes(s: &str) -> &str {
    const PAIRS: &[(char, char)] = &[
        ('"', '"'),
        ('\'', '\''),
        ('\u{201c}', '\u{201d}'),
        ('\u{2018}', '\u{2019}'),
    ];
    let mut chars = s.chars();
    let (Some(first), Some(last)) = (chars.next(), s.chars().next_back()) else {
        return s;
    };
    if s.chars().nth(1).is_none() {
        return s;
    }
    for (open, close) in PAIRS {
        if first == *open && last == *close {
            return &s[open.len_utf8()..s.len() - close.len_utf8()];
        }
    }
    s
}

/// One parsed entry of a generated ranking; `matched` is the index of the
/// candidate it matched, or `None` for hallucinated/duplicate entries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedTitle {
    pub text: String,
    pub matched: Option<usize>,
}

/// A model's output for one sample, parsed against its candidate set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub sample_id: String,
    pub raw_text: String,
    pub titles: Vec<ParsedTitle>,
}

impl PredictionRecord {
    pub fn valid_count(&self) -> usize {
        self.titles.iter().filter(|t| t.matched.is_some()).count()
    }

    pub fn invalid_count(&self) -> usize {
        self.titles.iter().filter(|t| t.matched.is_none()).count()
    }

    /// A sample is erroneous when its output contains any invalid entry or
    /// nothing parseable at all.
    pub fn is_erroneous(&self) -> bool {
        self.invalid_count() > 0 || self.valid_count() == 0
    }

    /// 1-based rank of the given candidate among valid titles.
    pub fn rank_of(&self, candidate_index: usize) -> Option<usize> {
        self.titles
            .iter()
            .filter_map(|t| t.matched)
            .position(|m| m == candidate_index)
            .map(|p| p + 1)
    }
}

/// Split generated text into entries (lines when any newline is present,
/// comma-separated otherwise), normalize each, and match exactly against the
/// normalized candidates. Duplicates after the first match are invalid.
pub fn parse_prediction(
    sample_id: &str,
    raw_text: &str,
    candidate_titles: &[String],
) -> PredictionRecord {
    let normalized: Vec<String> = candidate_titles.iter().map(|t| normalize_title(t)).collect();
    let entries: Vec<&str> = if raw_text.contains('\n') {
        raw_text.split('\n').collect()
    } else {
        raw_text.split(',').collect()
    };
    let mut titles = Vec::new();
    let mut used: HashSet<usize> = HashSet::new();
    for entry in entries {
        let norm = normalize_title(entry);
        if norm.is_empty() {
            continue;
        }
        let matched = match normalized.iter().position(|c| *c == norm) {
            Some(i) if used.insert(i) => Some(i),
            _ => None,
        };
        titles.push(ParsedTitle {
            text: norm,
            matched,
        });
    }
    PredictionRecord {
        sample_id: sample_id.to_string(),
        raw_text: raw_text.to_string(),
        titles,
    }
}

fn join_ranks(
    records: &[PredictionRecord],
    dataset: &[InstructionSample],
) -> Result<Vec<Option<usize>>> {
    let by_id: HashMap<&str, &InstructionSample> =
        dataset.iter().map(|s| (s.id.as_str(), s)).collect();
    let mut unjoinable = Vec::new();
    let mut ranks = Vec::with_capacity(records.len());
    for record in records {
        match by_id.get(record.sample_id.as_str()) {
            None => unjoinable.push(record.sample_id.clone()),
            Some(sample) => ranks.push(positive_rank(record, sample)),
        }
    }
    if !unjoinable.is_empty() {
        return Err(Error::Evaluation(format!(
            "records with no matching dataset sample: {}",
            unjoinable.join(", ")
        )));
    }
    Ok(ranks)
}

fn positive_rank(record: &PredictionRecord, sample: &InstructionSample) -> Option<usize> {
    let positive_norm = normalize_title(&sample.positive_title);
    let positive_idx = sample
        .candidates
        .iter()
        .position(|c| normalize_title(c) == positive_norm)?;
    record.rank_of(positive_idx)
}

fn hr_from_ranks(ranks: &[Option<usize>], k: usize) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    let hits = ranks.iter().filter(|r| matches!(r, Some(r) if *r <= k)).count();
    hits as f64 / ranks.len() as f64
}

fn ndcg_from_ranks(ranks: &[Option<usize>], k: usize) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    let sum: f64 = ranks
        .iter()
        .map(|r| match r {
            Some(rank) if *rank <= k => 1.0 / ((*rank as f64) + 1.0).log2(),
            _ => 0.0,
        })
        .sum();
    sum / ranks.len() as f64
}

/// Fraction of records whose positive appears in the first `k` valid titles.
pub fn hit_rate_at_k(
    records: &[PredictionRecord],
    dataset: &[InstructionSample],
    k: usize,
) -> Result<f64> {
    Ok(hr_from_ranks(&join_ranks(records, dataset)?, k))
}

/// Mean per-sample NDCG@k; with one relevant item this is
/// `1/log2(rank + 1)` when `rank <= k` and 0 otherwise.
pub fn ndcg_at_k(
    records: &[PredictionRecord],
    dataset: &[InstructionSample],
    k: usize,
) -> Result<f64> {
    Ok(ndcg_from_ranks(&join_ranks(records, dataset)?, k))
}

/// Fraction of records containing at least one invalid entry (hallucinated,
/// duplicate, or nothing parseable).
pub fn error_rate(records: &[PredictionRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    let bad = records.iter().filter(|r| r.is_erroneous()).count();
    bad as f64 / records.len() as f64
}

/// Aggregated metrics for one evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub hr: BTreeMap<u32, f64>,
    pub ndcg: BTreeMap<u32, f64>,
    pub er: f64,
    pub n_samples: usize,
    pub n_unparseable: usize,
}

impl MetricsReport {
    /// Human-readable table mirroring the usual HR / NDCG / ER layout.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str("  HR@1    HR@3    HR@5    NG@3    NG@5      ER\n");
        out.push_str(&format!(
            "{:.4}  {:.4}  {:.4}  {:.4}  {:.4}  {:.4}\n",
            self.hr[&1], self.hr[&3], self.hr[&5], self.ndcg[&3], self.ndcg[&5], self.er
        ));
        out.push_str(&format!(
            "samples: {} (unparseable: {})\n",
            self.n_samples, self.n_unparseable
        ));
        out
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path.display().to_string(), e))
    }
}

/// Per-sample scoring detail emitted next to the report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleDiagnostic {
    pub id: String,
    pub rank: Option<usize>,
    pub valid_titles: usize,
    pub invalid_entries: usize,
    pub erroneous: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub near_misses: Vec<NearMiss>,
}

/// Diagnostic-only fuzzy hint for an invalid entry; never affects metrics.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NearMiss {
    pub entry: String,
    pub candidate: String,
    pub distance: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct EvalOptions {
    /// Evaluate a seeded subsample of this many test ids; `None` means all.
    pub sample_size: Option<usize>,
    pub seed: u64,
    /// Report near-miss candidates within this edit distance for invalid
    /// entries (diagnostics only).
    pub levenshtein: Option<usize>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            sample_size: None,
            seed: 0,
            levenshtein: None,
        }
    }
}

fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let cost = usize::from(ca != cb);
            cur[j + 1] = (prev[j] + cost).min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Score a prediction set against a dataset.
///
/// Every evaluated id must have exactly one prediction, and every prediction
/// id must exist in the dataset. The report is a deterministic reduction in
/// sample-id order, so results are bit-stable across runs and thread counts.
pub fn evaluate(
    predictions: &[(String, String)],
    dataset: &[InstructionSample],
    opts: &EvalOptions,
) -> Result<(MetricsReport, Vec<SampleDiagnostic>)> {
    if dataset.is_empty() {
        return Err(Error::Evaluation("dataset is empty".into()));
    }
    let mut by_id: HashMap<&str, &InstructionSample> = HashMap::with_capacity(dataset.len());
    for sample in dataset {
        if by_id.insert(sample.id.as_str(), sample).is_some() {
            return Err(Error::Evaluation(format!(
                "duplicate sample id '{}' in dataset",
                sample.id
            )));
        }
    }

    let mut pred_by_id: HashMap<&str, &str> = HashMap::with_capacity(predictions.len());
    let mut mismatched = Vec::new();
    for (id, text) in predictions {
        if !by_id.contains_key(id.as_str()) {
            mismatched.push(id.clone());
            continue;
        }
        if pred_by_id.insert(id.as_str(), text.as_str()).is_some() {
            return Err(Error::Evaluation(format!("duplicate prediction id '{id}'")));
        }
    }
    if !mismatched.is_empty() {
        mismatched.sort();
        return Err(Error::Evaluation(format!(
            "prediction ids with no dataset sample: {}",
            mismatched.join(", ")
        )));
    }

    let mut scope: Vec<&InstructionSample> = dataset.iter().collect();
    scope.sort_by(|a, b| a.id.cmp(&b.id));
    if let Some(n) = opts.sample_size {
        if n == 0 {
            return Err(Error::Config("eval sample size must be positive".into()));
        }
        if n < scope.len() {
            let mut r = rng::stream(opts.seed, "eval/subsample", b"");
            let mut picked: Vec<usize> =
                rand::seq::index::sample(&mut r, scope.len(), n).iter().collect();
            picked.sort_unstable();
            scope = picked.into_iter().map(|i| scope[i]).collect();
        }
    }

    let missing: Vec<&str> = scope
        .iter()
        .filter(|s| !pred_by_id.contains_key(s.id.as_str()))
        .map(|s| s.id.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Evaluation(format!(
            "no prediction for sample ids: {}",
            missing.join(", ")
        )));
    }

    let diagnostics: Vec<(SampleDiagnostic, Option<usize>)> = scope
        .par_iter()
        .map(|sample| {
            let record =
                parse_prediction(&sample.id, pred_by_id[sample.id.as_str()], &sample.candidates);
            let rank = positive_rank(&record, sample);
            let near_misses = match opts.levenshtein {
                None => Vec::new(),
                Some(max_d) => record
                    .titles
                    .iter()
                    .filter(|t| t.matched.is_none())
                    .filter_map(|t| {
                        sample
                            .candidates
                            .iter()
                            .map(|c| (levenshtein(&t.text, &normalize_title(c)), c))
                            .min()
                            .filter(|(d, _)| *d <= max_d)
                            .map(|(d, c)| NearMiss {
                                entry: t.text.clone(),
                                candidate: c.clone(),
                                distance: d,
                            })
                    })
                    .collect(),
            };
            let diag = SampleDiagnostic {
                id: sample.id.clone(),
                rank,
                valid_titles: record.valid_count(),
                invalid_entries: record.invalid_count(),
                erroneous: record.is_erroneous(),
                near_misses,
            };
            (diag, rank)
        })
        .collect();

    let n = diagnostics.len();
    let ranks: Vec<Option<usize>> = diagnostics.iter().map(|(_, r)| *r).collect();
    let mut hr = BTreeMap::new();
    for k in [1usize, 3, 5] {
        hr.insert(k as u32, hr_from_ranks(&ranks, k));
    }
    let mut ndcg = BTreeMap::new();
    for k in [3usize, 5] {
        ndcg.insert(k as u32, ndcg_from_ranks(&ranks, k));
    }
    let er = {
        let bad = diagnostics.iter().filter(|(d, _)| d.erroneous).count();
        if n == 0 {
            0.0
        } else {
            bad as f64 / n as f64
        }
    };
    let n_unparseable = diagnostics.iter().filter(|(d, _)| d.valid_titles == 0).count();

    // HR@1 equals NDCG@1 by construction; both reduce to the same indicator.
    let ndcg1 = ndcg_from_ranks(&ranks, 1);
    assert_eq!(hr[&1], ndcg1, "HR@1 must equal NDCG@1");
    assert!(hr[&1] <= hr[&3] && hr[&3] <= hr[&5], "HR@K must be non-decreasing in K");
    assert!(ndcg[&3] <= ndcg[&5], "NDCG@K must be non-decreasing in K");
    for v in hr.values().chain(ndcg.values()).chain(std::iter::once(&er)) {
        assert!((0.0..=1.0).contains(v), "metric out of range: {v}");
    }

    let report = MetricsReport {
        hr,
        ndcg,
        er,
        n_samples: n,
        n_unparseable,
    };
    Ok((report, diagnostics.into_iter().map(|(d, _)| d).collect()))
}

#[derive(Debug, Serialize, Deserialize)]
struct PredictionLine {
    id: String,
    output_text: String,
}

/// Write predictions as line-delimited JSON `{id, output_text}`.
pub fn write_predictions(predictions: &[(String, String)], path: &Path) -> Result<usize> {
    let file = fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = std::io::BufWriter::new(file);
    for (id, output_text) in predictions {
        let line = serde_json::to_string(&PredictionLine {
            id: id.clone(),
            output_text: output_text.clone(),
        })
        .expect("prediction serializes");
        w.write_all(line.as_bytes())
            .and_then(|_| w.write_all(b"\n"))
            .map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(predictions.len())
}

pub fn read_predictions(path: &Path) -> Result<Vec<(String, String)>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let reader = std::io::BufReader::new(file);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: PredictionLine = serde_json::from_str(&line).map_err(|e| {
            Error::parse(
                path.display().to_string(),
                ParseError::Record {
                    line: idx + 1,
                    message: e.to_string(),
                },
            )
        })?;
        out.push((parsed.id, parsed.output_text));
    }
    Ok(out)
}

/// Write per-sample diagnostics as line-delimited JSON.
pub fn write_diagnostics(diags: &[SampleDiagnostic], path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = std::io::BufWriter::new(file);
    for d in diags {
        let line = serde_json::to_string(d).expect("diagnostic serializes");
        w.write_all(line.as_bytes())
            .and_then(|_| w.write_all(b"\n"))
            .map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))
}
