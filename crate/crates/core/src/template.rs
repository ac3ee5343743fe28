//! Rendering split outcomes into Instruction/Input/Output text samples, and
//! the line-delimited JSON dataset format.
//!
//! The canonical wording below is fixed and versioned: evaluation depends
//! only on the structure (which keys appear, their order, the candidate
//! list, positive-first output), so the exact phrasing is an artifact
//! constant, documented in the README.

use std::collections::HashSet;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, ParseError, Result};
use crate::ingest::UserRecord;
use crate::sequence::{CandidateSet, SequenceStep};

/// Bump when the canonical wording or grammar changes.
pub const TEMPLATE_VERSION: &str = "v1";

/// The one fixed instruction sentence shared by every sample.
pub const INSTRUCTION_TEXT: &str = "Given the user's profile and the movies they watched in \
chronological order, rank all titles in the candidate set from the most likely to the least \
likely next watch. Respond with every candidate title, one per line, best guess first.";

/// Display name of the candidate list line in the Input section.
pub const CANDIDATE_KEY: &str = "candidate set";

/// Separator between elements of a list-valued line.
pub const LIST_SEP: &str = " | ";

/// Separator between categories of a single history item.
pub const INNER_SEP: &str = ", ";

/// The six canonical content keys, in registry order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ContentKey {
    Gender,
    Age,
    Occupation,
    HistoryTitles,
    HistoryRatings,
    HistoryCategories,
}

impl ContentKey {
    pub const ALL: [ContentKey; 6] = [
        ContentKey::Gender,
        ContentKey::Age,
        ContentKey::Occupation,
        ContentKey::HistoryTitles,
        ContentKey::HistoryRatings,
        ContentKey::HistoryCategories,
    ];

    pub fn display(self) -> &'static str {
        match self {
            ContentKey::Gender => "gender",
            ContentKey::Age => "age",
            ContentKey::Occupation => "occupation",
            ContentKey::HistoryTitles => "history watched movie title",
            ContentKey::HistoryRatings => "corresponding rating of these movies",
            ContentKey::HistoryCategories => "corresponding category of these movies",
        }
    }

    pub fn from_display(name: &str) -> Option<ContentKey> {
        ContentKey::ALL.into_iter().find(|k| k.display() == name)
    }
}

/// One key with its maskability flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeySpec {
    pub key: ContentKey,
    pub maskable: bool,
}

/// The ordered set of content keys rendered into the Input. History titles
/// are never maskable: historical interactions are always maintained.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyRegistry {
    keys: Vec<KeySpec>,
}

impl KeyRegistry {
    /// The default six-key registry; everything but history titles is
    /// maskable.
    pub fn standard() -> KeyRegistry {
        KeyRegistry {
            keys: ContentKey::ALL
                .into_iter()
                .map(|key| KeySpec {
                    key,
                    maskable: key != ContentKey::HistoryTitles,
                })
                .collect(),
        }
    }

    /// Build a registry with explicit keys and flags.
    pub fn new(keys: Vec<KeySpec>) -> Result<KeyRegistry> {
        if keys.is_empty() {
            return Err(Error::Config("key registry must not be empty".into()));
        }
        let mut seen = HashSet::new();
        for spec in &keys {
            if !seen.insert(spec.key) {
                return Err(Error::Config(format!(
                    "duplicate key '{}' in registry",
                    spec.key.display()
                )));
            }
            if spec.key == ContentKey::HistoryTitles && spec.maskable {
                return Err(Error::Config(
                    "history titles are never maskable".into(),
                ));
            }
        }
        if !seen.contains(&ContentKey::HistoryTitles) {
            return Err(Error::Config(
                "registry must contain the history titles key".into(),
            ));
        }
        Ok(KeyRegistry { keys })
    }

    /// Standard keys with a custom maskable subset (history titles refused).
    pub fn with_maskable(maskable: &[ContentKey]) -> Result<KeyRegistry> {
        if maskable.contains(&ContentKey::HistoryTitles) {
            return Err(Error::Config("history titles are never maskable".into()));
        }
        KeyRegistry::new(
            ContentKey::ALL
                .into_iter()
                .map(|key| KeySpec {
                    key,
                    maskable: maskable.contains(&key),
                })
                .collect(),
        )
    }

    pub fn keys(&self) -> &[KeySpec] {
        &self.keys
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn maskable_count(&self) -> usize {
        self.keys.iter().filter(|k| k.maskable).count()
    }

    pub fn is_maskable(&self, name: &str) -> bool {
        ContentKey::from_display(name)
            .map(|key| {
                self.keys
                    .iter()
                    .any(|spec| spec.key == key && spec.maskable)
            })
            .unwrap_or(false)
    }
}

/// An ordered key/value entry of the Input section.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KvEntry {
    pub key: String,
    pub value: String,
}

/// The ordered key-value block of one sample's Input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyValueBlock {
    pub entries: Vec<KvEntry>,
}

impl KeyValueBlock {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|e| e.key == key)
            .map(|e| e.value.as_str())
    }
}

/// Provenance of an augmented copy; originals carry none.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lineage {
    pub parent_id: String,
    pub strategy: String,
    pub copy_index: u32,
    pub seed: u64,
}

/// One instruction-tuning unit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstructionSample {
    pub id: String,
    pub instruction: String,
    pub input_kv: KeyValueBlock,
    /// Candidate titles in presentation order.
    pub candidates: Vec<String>,
    /// Ranked output titles; for un-augmented samples the positive is first.
    pub output: Vec<String>,
    pub positive_title: String,
    pub lineage: Option<Lineage>,
}

fn check_list_text(what: &str, text: &str) -> Result<()> {
    if text.contains('\n') {
        return Err(Error::Render(format!("{what} contains a newline: {text:?}")));
    }
    if text.contains(LIST_SEP) {
        return Err(Error::Render(format!(
            "{what} contains the list separator {LIST_SEP:?}: {text:?}"
        )));
    }
    Ok(())
}

/// Render one sample from a user profile, a (truncated) history, and a
/// candidate set. Pure: identical inputs produce byte-identical text.
pub fn render_sample(
    id: String,
    user: &UserRecord,
    history: &[SequenceStep],
    candidates: &CandidateSet,
) -> Result<InstructionSample> {
    if history.is_empty() {
        return Err(Error::Render(format!(
            "sample {id}: history must contain at least one step"
        )));
    }
    let positive = &candidates.positive;
    let occurrences = candidates
        .members
        .iter()
        .filter(|m| *m == positive)
        .count();
    if occurrences != 1 {
        return Err(Error::Integrity(format!(
            "sample {id}: positive '{}' appears {occurrences} times in the candidate set",
            positive.title
        )));
    }

    let mut titles = Vec::with_capacity(history.len());
    let mut ratings = Vec::with_capacity(history.len());
    let mut categories = Vec::with_capacity(history.len());
    for step in history {
        check_list_text("history title", &step.title)?;
        let cats = step.categories.join(INNER_SEP);
        check_list_text("history categories", &cats)?;
        titles.push(step.title.clone());
        ratings.push(step.rating.to_string());
        categories.push(cats);
    }
    for member in &candidates.members {
        check_list_text("candidate title", &member.title)?;
    }

    let entries = vec![
        KvEntry {
            key: ContentKey::Gender.display().into(),
            value: user.gender.to_string(),
        },
        KvEntry {
            key: ContentKey::Age.display().into(),
            value: user.age.clone(),
        },
        KvEntry {
            key: ContentKey::Occupation.display().into(),
            value: user.occupation.clone(),
        },
        KvEntry {
            key: ContentKey::HistoryTitles.display().into(),
            value: titles.join(LIST_SEP),
        },
        KvEntry {
            key: ContentKey::HistoryRatings.display().into(),
            value: ratings.join(LIST_SEP),
        },
        KvEntry {
            key: ContentKey::HistoryCategories.display().into(),
            value: categories.join(LIST_SEP),
        },
    ];
    for e in &entries {
        if e.value.is_empty() {
            return Err(Error::Render(format!("sample {id}: empty value for '{}'", e.key)));
        }
    }

    let candidate_titles: Vec<String> =
        candidates.members.iter().map(|m| m.title.clone()).collect();
    let mut output = Vec::with_capacity(candidate_titles.len());
    output.push(positive.title.clone());
    output.extend(
        candidates
            .members
            .iter()
            .filter(|m| *m != positive)
            .map(|m| m.title.clone()),
    );

    Ok(InstructionSample {
        id,
        instruction: INSTRUCTION_TEXT.to_string(),
        input_kv: KeyValueBlock { entries },
        candidates: candidate_titles,
        output,
        positive_title: positive.title.clone(),
        lineage: None,
    })
}

impl InstructionSample {
    /// The Input section: key-value lines in block order, then the candidate
    /// list.
    pub fn render_input(&self) -> String {
        let mut out = String::new();
        for e in &self.input_kv.entries {
            out.push_str(&e.key);
            out.push_str(": ");
            out.push_str(&e.value);
            out.push('\n');
        }
        out.push_str(CANDIDATE_KEY);
        out.push_str(": ");
        out.push_str(&self.candidates.join(LIST_SEP));
        out
    }

    /// The Output section: ranked titles, one per line.
    pub fn render_output(&self) -> String {
        self.output.join("\n")
    }
}

/// Parse an Input section back into its key-value block and candidate list.
/// This is the inverse of [`InstructionSample::render_input`].
pub fn parse_input_text(text: &str) -> Result<(KeyValueBlock, Vec<String>)> {
    let mut entries = Vec::new();
    let mut candidates: Option<Vec<String>> = None;
    for line in text.lines() {
        let (key, value) = line.split_once(": ").ok_or_else(|| {
            Error::Render(format!("input line without a key: {line:?}"))
        })?;
        if key == CANDIDATE_KEY {
            if candidates.is_some() {
                return Err(Error::Render("duplicate candidate set line".into()));
            }
            candidates = Some(value.split(LIST_SEP).map(str::to_string).collect());
        } else {
            if candidates.is_some() {
                return Err(Error::Render(
                    "key-value line after the candidate set line".into(),
                ));
            }
            entries.push(KvEntry {
                key: key.to_string(),
                value: value.to_string(),
            });
        }
    }
    let candidates =
        candidates.ok_or_else(|| Error::Render("input has no candidate set line".into()))?;
    Ok((KeyValueBlock { entries }, candidates))
}

#[derive(Debug, Serialize, Deserialize)]
struct MetaRecord {
    positive_title: String,
    candidates: Vec<String>,
    lineage: Option<Lineage>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetRecord {
    id: String,
    instruction: String,
    input: String,
    output: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    meta: Option<MetaRecord>,
}

#[derive(Debug, Serialize)]
struct StrippedRecord<'a> {
    instruction: &'a str,
    input: String,
    output: String,
}

/// Serialize samples as line-delimited JSON. With `strip_meta` only the
/// three instruction-tuning fields are written. Returns the record count.
pub fn serialize_dataset<W: Write>(
    samples: &[InstructionSample],
    writer: &mut W,
    strip_meta: bool,
) -> Result<usize> {
    let io_err = |e: std::io::Error| Error::io("<dataset writer>", e);
    for sample in samples {
        let line = if strip_meta {
            serde_json::to_string(&StrippedRecord {
                instruction: &sample.instruction,
                input: sample.render_input(),
                output: sample.render_output(),
            })
        } else {
            serde_json::to_string(&DatasetRecord {
                id: sample.id.clone(),
                instruction: sample.instruction.clone(),
                input: sample.render_input(),
                output: sample.render_output(),
                meta: Some(MetaRecord {
                    positive_title: sample.positive_title.clone(),
                    candidates: sample.candidates.clone(),
                    lineage: sample.lineage.clone(),
                }),
            })
        }
        .expect("sample serializes");
        writer.write_all(line.as_bytes()).map_err(io_err)?;
        writer.write_all(b"\n").map_err(io_err)?;
    }
    Ok(samples.len())
}

/// Write a dataset file to disk; see [`serialize_dataset`].
pub fn write_dataset(
    samples: &[InstructionSample],
    path: &std::path::Path,
    strip_meta: bool,
) -> Result<usize> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = std::io::BufWriter::new(file);
    let n = serialize_dataset(samples, &mut w, strip_meta)?;
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(n)
}

/// Read a dataset back from line-delimited JSON. Records must carry meta;
/// stripped files cannot be re-loaded for augmentation or evaluation.
pub fn read_dataset<R: BufRead>(reader: R) -> Result<Vec<InstructionSample>> {
    let mut samples = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io("<dataset reader>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: DatasetRecord = serde_json::from_str(&line).map_err(|e| {
            Error::Parse {
                path: "<dataset>".into(),
                source: ParseError::Record {
                    line: line_no,
                    message: e.to_string(),
                },
            }
        })?;
        let meta = record.meta.ok_or_else(|| {
            Error::Config(format!(
                "dataset record {} (line {line_no}) has no meta; was the file written with --strip-meta?",
                record.id
            ))
        })?;
        let (input_kv, candidates) = parse_input_text(&record.input)?;
        if candidates != meta.candidates {
            return Err(Error::Integrity(format!(
                "record {}: candidate list in input text disagrees with meta",
                record.id
            )));
        }
        let output: Vec<String> = record.output.lines().map(str::to_string).collect();
        samples.push(InstructionSample {
            id: record.id,
            instruction: record.instruction,
            input_kv,
            candidates,
            output,
            positive_title: meta.positive_title,
            lineage: meta.lineage,
        });
    }
    Ok(samples)
}

/// Read a dataset file from disk; see [`read_dataset`].
pub fn read_dataset_file(path: &std::path::Path) -> Result<Vec<InstructionSample>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    read_dataset(std::io::BufReader::new(file)).map_err(|e| match e {
        Error::Parse { source, .. } => Error::parse(path.display().to_string(), source),
        other => other,
    })
}
