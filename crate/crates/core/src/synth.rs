//! Deterministic synthetic raw-data generator.
//!
//! Produces a `users.dat` / `movies.dat` / `ratings.dat` directory with the
//! same shape guarantees as the real distribution: every user has at least
//! `min_events` ratings, items follow a popularity skew, a few rare items
//! fall under the activity filter, some titles carry Latin-1 bytes and
//! commas, and occasional timestamp ties exercise the ordering tie-break.
//! Output is a pure function of the spec, so regenerated directories are
//! byte-identical.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;

const GENRES: &[&str] = &[
    "Action",
    "Adventure",
    "Animation",
    "Children's",
    "Comedy",
    "Crime",
    "Documentary",
    "Drama",
    "Fantasy",
    "Film-Noir",
    "Horror",
    "Musical",
    "Mystery",
    "Romance",
    "Sci-Fi",
    "Thriller",
    "War",
    "Western",
];

const AGE_CODES: &[u32] = &[1, 18, 25, 35, 45, 50, 56];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthSpec {
    pub n_users: u32,
    pub n_items: u32,
    pub seed: u64,
    pub min_events: u32,
    pub max_events: u32,
    /// Trailing item ids that receive exactly 4 ratings each, so the
    /// 5-action filter has something to discard.
    pub rare_items: u32,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_users: 6040,
            n_items: 1200,
            seed: 20260810,
            min_events: 20,
            max_events: 28,
            rare_items: 4,
        }
    }
}

impl SynthSpec {
    /// A small corpus for tests and smoke scripts.
    pub fn small(n_users: u32, n_items: u32, seed: u64) -> SynthSpec {
        SynthSpec {
            n_users,
            n_items,
            seed,
            min_events: 4,
            max_events: 9,
            rare_items: 0,
        }
    }
}

fn title_for(item_id: u32) -> String {
    let year = 1930 + item_id % 70;
    match item_id {
        i if i % 97 == 0 => format!("Académie {i:04} ({year})"),
        i if i % 101 == 0 => format!("Chronicle {i:04}, The ({year})"),
        i if i % 89 == 0 => format!("{i:04}: Deep Field ({year})"),
        i => format!("Feature Film {i:04} ({year})"),
    }
}

fn latin1_bytes(text: &str) -> Result<Vec<u8>> {
    text.chars()
        .map(|c| {
            let code = c as u32;
            if code <= 0xFF {
                Ok(code as u8)
            } else {
                Err(Error::Render(format!(
                    "character {c:?} is not representable in Latin-1"
                )))
            }
        })
        .collect()
}

/// Write the three raw files into `dir` (created if missing).
pub fn write_synthetic_dir(dir: &Path, spec: &SynthSpec) -> Result<()> {
    if spec.n_users < 1 || spec.n_items < 2 {
        return Err(Error::Config("synthetic corpus needs users and items".into()));
    }
    if spec.min_events < 1 || spec.max_events < spec.min_events {
        return Err(Error::Config("invalid events-per-user range".into()));
    }
    if spec.rare_items >= spec.n_items {
        return Err(Error::Config("rare_items must leave a popular pool".into()));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;

    let write_file = |name: &str, bytes: &[u8]| -> Result<()> {
        let path = dir.join(name);
        let mut f = fs::File::create(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
        f.write_all(bytes)
            .map_err(|e| Error::io(path.display().to_string(), e))
    };

    // users.dat
    let mut users = String::new();
    for user_id in 1..=spec.n_users {
        let mut r = rng::for_user(spec.seed, "synth/user", user_id);
        let gender = if r.random_range(0..2u8) == 0 { "M" } else { "F" };
        let age = AGE_CODES[r.random_range(0..AGE_CODES.len())];
        let occupation = r.random_range(0..=20u32);
        let zip = 10000 + r.random_range(0..89999u32);
        users.push_str(&format!("{user_id}::{gender}::{age}::{occupation}::{zip}\n"));
    }
    write_file(crate::ingest::USERS_FILE, users.as_bytes())?;

    // movies.dat (Latin-1)
    let mut movies: Vec<u8> = Vec::new();
    for item_id in 1..=spec.n_items {
        let mut r = rng::for_user(spec.seed, "synth/item", item_id);
        let n_genres = r.random_range(1..=3usize);
        let mut genres: Vec<&str> = Vec::with_capacity(n_genres);
        let mut cursor = r.random_range(0..GENRES.len());
        for _ in 0..n_genres {
            genres.push(GENRES[cursor]);
            cursor = (cursor + 1 + r.random_range(0..4usize)) % GENRES.len();
        }
        genres.dedup();
        let line = format!("{item_id}::{}::{}\n", title_for(item_id), genres.join("|"));
        movies.extend(latin1_bytes(&line)?);
    }
    write_file(crate::ingest::MOVIES_FILE, &movies)?;

    // ratings.dat: popularity-skewed sampling over the popular pool, plus
    // exactly 4 ratings for each rare item.
    let pool = spec.n_items - spec.rare_items;
    let weights: Vec<u64> = (0..pool).map(|i| (pool - i) as u64 + 50).collect();
    let mut cumulative: Vec<u64> = Vec::with_capacity(weights.len());
    let mut acc = 0u64;
    for w in &weights {
        acc += w;
        cumulative.push(acc);
    }
    let total_weight = acc;

    let mut ratings = String::new();
    for user_id in 1..=spec.n_users {
        let mut r = rng::for_user(spec.seed, "synth/ratings", user_id);
        let k = r.random_range(spec.min_events..=spec.max_events);
        let mut chosen: Vec<u32> = Vec::with_capacity(k as usize);
        while (chosen.len() as u32) < k {
            let ticket = r.random_range(0..total_weight);
            let idx = cumulative.partition_point(|&c| c <= ticket);
            let item_id = idx as u32 + 1;
            if !chosen.contains(&item_id) {
                chosen.push(item_id);
            }
        }
        let base_ts = 978_000_000i64 + user_id as i64 * 1000;
        let mut ts = base_ts;
        for (e, item_id) in chosen.iter().enumerate() {
            // Every ninth step repeats the previous timestamp to exercise
            // the (timestamp, item_id) tie-break.
            if e % 9 != 3 {
                ts += 7;
            }
            let rating = r.random_range(1..=5u8);
            ratings.push_str(&format!("{user_id}::{item_id}::{rating}::{ts}\n"));
        }
    }
    for rare in 0..spec.rare_items {
        let item_id = spec.n_items - rare;
        for copy in 0..4u32 {
            let user_id = 1 + (rare * 1009 + copy * 2003 + 17) % spec.n_users;
            let ts = 977_000_000i64 + (rare * 10 + copy) as i64;
            ratings.push_str(&format!("{user_id}::{item_id}::3::{ts}\n"));
        }
    }
    write_file(crate::ingest::RATINGS_FILE, ratings.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::ingest_dir;

    #[test]
    fn generated_dir_parses_and_is_reproducible() {
        let tmp = tempfile::tempdir().unwrap();
        let a_dir = tmp.path().join("a");
        let b_dir = tmp.path().join("b");
        let spec = SynthSpec::small(30, 25, 7);
        write_synthetic_dir(&a_dir, &spec).unwrap();
        write_synthetic_dir(&b_dir, &spec).unwrap();
        for name in ["users.dat", "movies.dat", "ratings.dat"] {
            let a = fs::read(a_dir.join(name)).unwrap();
            let b = fs::read(b_dir.join(name)).unwrap();
            assert_eq!(a, b, "{name} must be byte-identical across runs");
        }
        let catalog = ingest_dir(&a_dir, 1, false).unwrap();
        assert_eq!(catalog.users.len(), 30);
        assert_eq!(catalog.items.len(), 25);
        assert!(catalog.events.len() >= 30 * 4);
    }

    #[test]
    fn latin1_titles_survive_the_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let spec = SynthSpec::small(5, 120, 9);
        write_synthetic_dir(tmp.path(), &spec).unwrap();
        let catalog = ingest_dir(tmp.path(), 1, false).unwrap();
        let title = &catalog.item(97).unwrap().title;
        assert!(title.contains('é'), "item 97 should carry a Latin-1 byte: {title}");
        assert!(catalog.item(101).unwrap().title.contains(", The"));
    }

    #[test]
    fn rare_items_fall_under_the_activity_filter() {
        let tmp = tempfile::tempdir().unwrap();
        let spec = SynthSpec {
            n_users: 60,
            n_items: 50,
            seed: 3,
            min_events: 8,
            max_events: 12,
            rare_items: 2,
        };
        write_synthetic_dir(tmp.path(), &spec).unwrap();
        let catalog = ingest_dir(tmp.path(), 5, false).unwrap();
        assert!(catalog.events.iter().all(|e| e.item_id < 49));
        assert!(catalog.filter.events_after < catalog.filter.events_before);
    }
}
