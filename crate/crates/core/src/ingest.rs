//! Parsing of raw `::`-delimited interaction files into typed records.
//!
//! Three files make up a raw directory: `users.dat` and `ratings.dat` are
//! ASCII, `movies.dat` is Latin-1 (titles contain non-ASCII bytes). Coded
//! user attributes are decoded into text at parse time; the zip-code field is
//! consumed for validation and dropped. The parsed catalog is persisted as a
//! single JSON document so downstream stages never re-read the raw files.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{DecodeError, Error, ParseError, Result};

pub const USERS_FILE: &str = "users.dat";
pub const MOVIES_FILE: &str = "movies.dat";
pub const RATINGS_FILE: &str = "ratings.dat";

/// Default minimum action count; users and items below it are discarded.
pub const DEFAULT_MIN_ACTIONS: u32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Gender {
    M,
    F,
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Gender::M => "M",
            Gender::F => "F",
        })
    }
}

/// One user with coded attributes already decoded to text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserRecord {
    pub user_id: u32,
    pub gender: Gender,
    pub age: String,
    pub occupation: String,
}

/// One item as distributed: title keeps its year suffix, categories keep
/// their file order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub item_id: u32,
    pub title: String,
    pub categories: Vec<String>,
}

/// One rating action.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionEvent {
    pub user_id: u32,
    pub item_id: u32,
    pub rating: u8,
    pub timestamp: i64,
}

const AGE_TABLE: &[(u32, &str)] = &[
    (1, "under 18"),
    (18, "18-24"),
    (25, "25-34"),
    (35, "35-44"),
    (45, "45-49"),
    (50, "50-55"),
    (56, "56+"),
];

const OCCUPATION_TABLE: &[&str] = &[
    "other or not specified",
    "academic/educator",
    "artist",
    "clerical/admin",
    "college/grad student",
    "customer service",
    "doctor/health care",
    "executive/managerial",
    "farmer",
    "homemaker",
    "K-12 student",
    "lawyer",
    "programmer",
    "retired",
    "sales/marketing",
    "scientist",
    "self-employed",
    "technician/engineer",
    "tradesman/craftsman",
    "unemployed",
    "writer",
];

/// Decode an age-group code into its human-readable range string.
pub fn decode_age(code: u32) -> std::result::Result<&'static str, DecodeError> {
    AGE_TABLE
        .iter()
        .find(|(c, _)| *c == code)
        .map(|(_, text)| *text)
        .ok_or(DecodeError::UnknownAgeCode(code as i64))
}

/// Decode an occupation code into its occupation name.
pub fn decode_occupation(code: u32) -> std::result::Result<&'static str, DecodeError> {
    OCCUPATION_TABLE
        .get(code as usize)
        .copied()
        .ok_or(DecodeError::UnknownOccupationCode(code as i64))
}

/// Reverse lookup for [`decode_age`]; used for line round-trips.
pub fn encode_age(text: &str) -> Option<u32> {
    AGE_TABLE.iter().find(|(_, t)| *t == text).map(|(c, _)| *c)
}

/// Reverse lookup for [`decode_occupation`].
pub fn encode_occupation(text: &str) -> Option<u32> {
    OCCUPATION_TABLE
        .iter()
        .position(|t| *t == text)
        .map(|p| p as u32)
}

/// Split a byte buffer into (1-based line number, line) pairs, tolerating a
/// trailing newline and CRLF endings.
fn byte_lines(data: &[u8]) -> impl Iterator<Item = (usize, &[u8])> {
    data.split(|&b| b == b'\n')
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| (i + 1, l.strip_suffix(b"\r").unwrap_or(l)))
}

fn ascii_line(line_no: usize, raw: &[u8]) -> std::result::Result<&str, ParseError> {
    if !raw.is_ascii() {
        return Err(ParseError::NonAscii { line: line_no });
    }
    // ASCII is always valid UTF-8.
    Ok(std::str::from_utf8(raw).expect("ascii"))
}

fn latin1_line(raw: &[u8]) -> String {
    raw.iter().map(|&b| b as char).collect()
}

fn split_fields<'a>(
    line_no: usize,
    line: &'a str,
    expected: usize,
) -> std::result::Result<Vec<&'a str>, ParseError> {
    let fields: Vec<&str> = line.split("::").collect();
    if fields.len() != expected {
        return Err(ParseError::FieldCount {
            line: line_no,
            expected,
            found: fields.len(),
        });
    }
    Ok(fields)
}

fn parse_int(
    line_no: usize,
    field: &'static str,
    value: &str,
) -> std::result::Result<i64, ParseError> {
    value.trim().parse::<i64>().map_err(|_| ParseError::InvalidInteger {
        line: line_no,
        field,
        value: value.to_string(),
    })
}

fn parse_id(
    line_no: usize,
    field: &'static str,
    value: &str,
) -> std::result::Result<u32, ParseError> {
    let n = parse_int(line_no, field, value)?;
    if n < 1 || n > u32::MAX as i64 {
        return Err(ParseError::NonPositiveId {
            line: line_no,
            field,
        });
    }
    Ok(n as u32)
}

/// Parse a `users.dat` stream: `UserID::Gender::Age::Occupation::Zip-code`.
///
/// The zip-code field is consumed and dropped; age and occupation codes are
/// decoded into their text values.
pub fn parse_users(data: &[u8]) -> std::result::Result<Vec<UserRecord>, ParseError> {
    let mut users = Vec::new();
    for (line_no, raw) in byte_lines(data) {
        let line = ascii_line(line_no, raw)?;
        let fields = split_fields(line_no, line, 5)?;
        let user_id = parse_id(line_no, "UserID", fields[0])?;
        let gender = match fields[1] {
            "M" => Gender::M,
            "F" => Gender::F,
            other => {
                return Err(ParseError::InvalidGender {
                    line: line_no,
                    value: other.to_string(),
                })
            }
        };
        let age_code = parse_int(line_no, "Age", fields[2])?;
        let occ_code = parse_int(line_no, "Occupation", fields[3])?;
        let decode = |r: std::result::Result<&'static str, DecodeError>| {
            r.map_err(|source| ParseError::Decode {
                line: line_no,
                source,
            })
        };
        let age = decode(u32::try_from(age_code).map_err(|_| DecodeError::UnknownAgeCode(age_code)).and_then(decode_age))?;
        let occupation = decode(
            u32::try_from(occ_code)
                .map_err(|_| DecodeError::UnknownOccupationCode(occ_code))
                .and_then(decode_occupation),
        )?;
        // fields[4] is the zip code: consumed, validated as present, dropped.
        users.push(UserRecord {
            user_id,
            gender,
            age: age.to_string(),
            occupation: occupation.to_string(),
        });
    }
    Ok(users)
}

/// Parse a `movies.dat` stream: `MovieID::Title::Genres` with `|`-separated
/// genres. The stream is decoded as Latin-1.
pub fn parse_movies(data: &[u8]) -> std::result::Result<Vec<ItemRecord>, ParseError> {
    let mut items = Vec::new();
    for (line_no, raw) in byte_lines(data) {
        let line = latin1_line(raw);
        let fields = split_fields(line_no, &line, 3)?;
        let item_id = parse_id(line_no, "MovieID", fields[0])?;
        if fields[1].is_empty() {
            return Err(ParseError::EmptyField {
                line: line_no,
                field: "Title",
            });
        }
        if fields[2].is_empty() {
            return Err(ParseError::EmptyGenres { line: line_no });
        }
        let categories: Vec<String> = fields[2].split('|').map(str::to_string).collect();
        if categories.iter().any(|c| c.is_empty()) {
            return Err(ParseError::EmptyGenres { line: line_no });
        }
        items.push(ItemRecord {
            item_id,
            title: fields[1].to_string(),
            categories,
        });
    }
    Ok(items)
}

/// Parse a `ratings.dat` stream: `UserID::MovieID::Rating::Timestamp`.
/// Events come back in file order; sorting happens downstream.
pub fn parse_ratings(data: &[u8]) -> std::result::Result<Vec<InteractionEvent>, ParseError> {
    let mut events = Vec::new();
    for (line_no, raw) in byte_lines(data) {
        let line = ascii_line(line_no, raw)?;
        let fields = split_fields(line_no, line, 4)?;
        let user_id = parse_id(line_no, "UserID", fields[0])?;
        let item_id = parse_id(line_no, "MovieID", fields[1])?;
        let rating = parse_int(line_no, "Rating", fields[2])?;
        if !(1..=5).contains(&rating) {
            return Err(ParseError::RatingOutOfRange {
                line: line_no,
                value: rating,
            });
        }
        let timestamp = parse_int(line_no, "Timestamp", fields[3])?;
        events.push(InteractionEvent {
            user_id,
            item_id,
            rating: rating as u8,
            timestamp,
        });
    }
    Ok(events)
}

impl UserRecord {
    /// Inverse of [`parse_users`] modulo the dropped zip code (a placeholder
    /// is emitted so the line shape is preserved).
    pub fn to_line(&self) -> String {
        let age = encode_age(&self.age).expect("age text came from the decode table");
        let occ =
            encode_occupation(&self.occupation).expect("occupation text came from the decode table");
        format!("{}::{}::{}::{}::00000", self.user_id, self.gender, age, occ)
    }
}

impl ItemRecord {
    pub fn to_line(&self) -> String {
        format!("{}::{}::{}", self.item_id, self.title, self.categories.join("|"))
    }
}

impl InteractionEvent {
    pub fn to_line(&self) -> String {
        format!(
            "{}::{}::{}::{}",
            self.user_id, self.item_id, self.rating, self.timestamp
        )
    }
}

fn count_actions(events: &[InteractionEvent]) -> (HashMap<u32, u32>, HashMap<u32, u32>) {
    let mut users: HashMap<u32, u32> = HashMap::new();
    let mut items: HashMap<u32, u32> = HashMap::new();
    for e in events {
        *users.entry(e.user_id).or_default() += 1;
        *items.entry(e.item_id).or_default() += 1;
    }
    (users, items)
}

/// Discard events of users and items with fewer than `min_count` actions, in
/// a single simultaneous pass over the original counts. Both conditions are
/// evaluated against the input, not against intermediate survivors.
pub fn filter_min_actions(events: &[InteractionEvent], min_count: u32) -> Vec<InteractionEvent> {
    let (users, items) = count_actions(events);
    events
        .iter()
        .filter(|e| users[&e.user_id] >= min_count && items[&e.item_id] >= min_count)
        .cloned()
        .collect()
}

/// Iterated variant of [`filter_min_actions`]: re-applies the one-pass filter
/// until a fixpoint is reached.
pub fn filter_min_actions_fixpoint(
    events: &[InteractionEvent],
    min_count: u32,
) -> Vec<InteractionEvent> {
    let mut current = filter_min_actions(events, min_count);
    loop {
        let next = filter_min_actions(&current, min_count);
        if next.len() == current.len() {
            return next;
        }
        current = next;
    }
}

/// What the activity filter did, kept alongside the catalog for audits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterSummary {
    pub min_actions: u32,
    pub fixpoint: bool,
    pub events_before: usize,
    pub events_after: usize,
}

/// The parsed, decoded, filtered dataset as one self-contained document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    pub users: Vec<UserRecord>,
    pub items: Vec<ItemRecord>,
    /// Events surviving the activity filter, in original file order.
    pub events: Vec<InteractionEvent>,
    pub filter: FilterSummary,
}

impl Catalog {
    /// Assemble a catalog from parsed records, validating referential
    /// integrity and applying the activity filter.
    pub fn build(
        users: Vec<UserRecord>,
        items: Vec<ItemRecord>,
        events: Vec<InteractionEvent>,
        min_actions: u32,
        fixpoint: bool,
    ) -> Result<Catalog> {
        if min_actions < 1 {
            return Err(Error::Config("min_actions must be at least 1".into()));
        }
        let mut users = users;
        let mut items = items;
        users.sort_by_key(|u| u.user_id);
        items.sort_by_key(|i| i.item_id);

        let user_ids: HashSet<u32> = users.iter().map(|u| u.user_id).collect();
        if user_ids.len() != users.len() {
            return Err(Error::Integrity("duplicate user_id in catalog".into()));
        }
        let item_ids: HashSet<u32> = items.iter().map(|i| i.item_id).collect();
        if item_ids.len() != items.len() {
            return Err(Error::Integrity("duplicate item_id in catalog".into()));
        }
        let mut seen_pairs: HashSet<(u32, u32)> = HashSet::with_capacity(events.len());
        for e in &events {
            if !user_ids.contains(&e.user_id) {
                return Err(Error::Integrity(format!(
                    "event references unknown user {}",
                    e.user_id
                )));
            }
            if !item_ids.contains(&e.item_id) {
                return Err(Error::Integrity(format!(
                    "event references unknown item {}",
                    e.item_id
                )));
            }
            if !seen_pairs.insert((e.user_id, e.item_id)) {
                return Err(Error::Integrity(format!(
                    "duplicate (user {}, item {}) event",
                    e.user_id, e.item_id
                )));
            }
        }

        let events_before = events.len();
        let filtered = if fixpoint {
            filter_min_actions_fixpoint(&events, min_actions)
        } else {
            filter_min_actions(&events, min_actions)
        };
        let events_after = filtered.len();
        Ok(Catalog {
            users,
            items,
            events: filtered,
            filter: FilterSummary {
                min_actions,
                fixpoint,
                events_before,
                events_after,
            },
        })
    }

    pub fn user(&self, user_id: u32) -> Option<&UserRecord> {
        self.users
            .binary_search_by_key(&user_id, |u| u.user_id)
            .ok()
            .map(|i| &self.users[i])
    }

    pub fn item(&self, item_id: u32) -> Option<&ItemRecord> {
        self.items
            .binary_search_by_key(&item_id, |i| i.item_id)
            .ok()
            .map(|i| &self.items[i])
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("catalog serializes")
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let text = self.to_json_pretty();
        f.write_all(text.as_bytes())
            .and_then(|_| f.write_all(b"\n"))
            .map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn read_json(path: &Path) -> Result<Catalog> {
        let data = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        serde_json::from_slice(&data).map_err(|e| Error::json(path.display().to_string(), e))
    }
}

/// Parse `users.dat`, `movies.dat`, and `ratings.dat` from a directory and
/// assemble the filtered catalog.
pub fn ingest_dir(raw_dir: &Path, min_actions: u32, fixpoint: bool) -> Result<Catalog> {
    let read = |name: &str| -> Result<Vec<u8>> {
        let path = raw_dir.join(name);
        fs::read(&path).map_err(|e| Error::io(path.display().to_string(), e))
    };
    let users_raw = read(USERS_FILE)?;
    let movies_raw = read(MOVIES_FILE)?;
    let ratings_raw = read(RATINGS_FILE)?;

    let users = parse_users(&users_raw)
        .map_err(|e| Error::parse(raw_dir.join(USERS_FILE).display().to_string(), e))?;
    let items = parse_movies(&movies_raw)
        .map_err(|e| Error::parse(raw_dir.join(MOVIES_FILE).display().to_string(), e))?;
    let events = parse_ratings(&ratings_raw)
        .map_err(|e| Error::parse(raw_dir.join(RATINGS_FILE).display().to_string(), e))?;
    Catalog::build(users, items, events, min_actions, fixpoint)
}
