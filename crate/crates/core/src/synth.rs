//! Deterministic synthetic corpora in the upstream release formats.
//!
//! The real daily-activity script corpus and how-to corpus are not
//! redistributable with this repository, so offline runs and the acceptance
//! suite use generated stand-ins whose summary statistics (scenario count,
//! mean/max events, mean gold edges, share of non-linear graphs) match the
//! published per-dataset statistics of the originals. The generators are
//! seeded and byte-reproducible.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use std::io::Write;
use std::path::Path;

/// Script corpus totals: 2,077 scenarios, mean 7.46 events (max 9), mean
/// 6.95 gold edges, 39% non-linear.
const PROSCRIPT_SIZES: [(usize, usize); 5] =
    [(5, 100), (6, 300), (7, 649), (8, 601), (9, 427)];
const PROSCRIPT_ONE_EXTRA: usize = 602;
const PROSCRIPT_TWO_EXTRA: usize = 208;

/// How-to corpus totals: 2,991 kept articles, mean 8.37 steps, max 20,
/// all linear, plus records the converter must filter out.
const WIKIHOW_KEPT: usize = 2991;
const WIKIHOW_TOTAL_STEPS: usize = 25035;
const WIKIHOW_NON_ENGLISH: usize = 180;
const WIKIHOW_UNORDERED: usize = 140;
const WIKIHOW_OVERLONG: usize = 80;

const VERBS: [&str; 36] = [
    "wash", "clean", "prepare", "gather", "slice", "carry", "pack", "check", "measure", "fold",
    "stack", "label", "arrange", "collect", "inspect", "dry", "fill", "empty", "cut", "peel",
    "stir", "pour", "heat", "cool", "wipe", "sweep", "polish", "trim", "water", "plant",
    "store", "open", "close", "sort", "hang", "rinse",
];

const NOUNS: [&str; 40] = [
    "dishes", "table", "garden", "tools", "vegetables", "blanket", "suitcase", "mailbox",
    "window", "groceries", "laundry", "bookshelf", "kitchen", "driveway", "fence", "basket",
    "bottles", "drawer", "carpet", "mirror", "plants", "firewood", "cabinet", "counter",
    "boxes", "papers", "photos", "shoes", "jacket", "curtains", "lamp", "pantry", "letters",
    "towels", "cushions", "bicycle", "ladder", "toolbox", "garage", "porch",
];

const MODIFIERS: [&str; 18] = [
    "carefully", "one by one", "before lunch", "in the morning", "with care", "by hand",
    "for later", "at home", "in order", "thoroughly", "right away", "as needed", "outside",
    "in the sink", "on the shelf", "near the door", "for the trip", "after breakfast",
];

const TITLE_VERBS: [&str; 16] = [
    "organize", "prepare", "clean", "repair", "decorate", "plan", "build", "host",
    "paint", "assemble", "tidy", "update", "arrange", "set up", "restock", "refresh",
];

const TITLE_NOUNS: [&str; 24] = [
    "the garage", "a picnic", "the bookshelf", "a birthday party", "the backyard",
    "a garden bed", "the kitchen", "a weekend trip", "the home office", "a yard sale",
    "the living room", "a family dinner", "the toolshed", "a movie night", "the pantry",
    "a camping trip", "the attic", "a bake sale", "the balcony", "a board game night",
    "the hallway closet", "a fishing trip", "the guest room", "a study corner",
];

fn seeded(seed: u64, stream: &str, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(crate::client::hash_seed(&[
        "synth",
        stream,
        &seed.to_string(),
        &index.to_string(),
    ]))
}

fn pick<'a>(rng: &mut ChaCha8Rng, items: &'a [&'a str]) -> &'a str {
    items[rng.random_range(0..items.len())]
}

fn event_description(rng: &mut ChaCha8Rng, used: &mut Vec<String>) -> String {
    loop {
        let text = format!(
            "{} the {} {}",
            pick(rng, &VERBS),
            pick(rng, &NOUNS),
            pick(rng, &MODIFIERS)
        );
        if !used.contains(&text) {
            used.push(text.clone());
            return text;
        }
    }
}

/// One generated script record: a chain over a hidden order plus optional
/// forward skip edges (each skip adds a branch, making the graph
/// non-linear). Events are listed in a random order relative to the chain.
fn proscript_record(seed: u64, index: usize, n: usize, extras: usize) -> serde_json::Value {
    let mut rng = seeded(seed, "proscript", index);
    let title = format!("{} {}", pick(&mut rng, &TITLE_VERBS), pick(&mut rng, &TITLE_NOUNS));
    let mut used = Vec::new();
    let events: Vec<(String, String)> = (0..n)
        .map(|i| (format!("e{i}"), event_description(&mut rng, &mut used)))
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut edges: Vec<(usize, usize)> = order.windows(2).map(|w| (w[0], w[1])).collect();
    let mut skips_available: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| ((i + 2)..n).map(move |j| (i, j)))
        .collect();
    skips_available.shuffle(&mut rng);
    for &(i, j) in skips_available.iter().take(extras) {
        edges.push((order[i], order[j]));
    }
    let flow = edges
        .iter()
        .map(|(s, d)| format!("e{s} -> e{d}"))
        .collect::<Vec<_>>()
        .join("; ");
    let split = if index.is_multiple_of(4) { "eval" } else { "train" };
    json!({
        "id": format!("ps_{index:05}"),
        "scenario": title,
        "split": split,
        "events": events,
        "flow": flow,
    })
}

/// Writes the script corpus fixture. Statistics are exact by construction:
/// the size and extra-edge multisets are fixed, only their pairing and the
/// per-record content vary with the seed.
pub fn write_proscript(path: &Path, seed: u64) -> std::io::Result<()> {
    let mut sizes: Vec<usize> = PROSCRIPT_SIZES
        .iter()
        .flat_map(|&(n, count)| std::iter::repeat_n(n, count))
        .collect();
    let total = sizes.len();
    let mut extras: Vec<usize> = std::iter::repeat_n(1usize, PROSCRIPT_ONE_EXTRA)
        .chain(std::iter::repeat_n(2usize, PROSCRIPT_TWO_EXTRA))
        .chain(std::iter::repeat_n(
            0usize,
            total - PROSCRIPT_ONE_EXTRA - PROSCRIPT_TWO_EXTRA,
        ))
        .collect();
    let mut rng = seeded(seed, "proscript-layout", 0);
    sizes.shuffle(&mut rng);
    extras.shuffle(&mut rng);

    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (index, (&n, &extra)) in sizes.iter().zip(extras.iter()).enumerate() {
        writeln!(out, "{}", proscript_record(seed, index, n, extra))?;
    }
    out.flush()
}

fn wikihow_step(rng: &mut ChaCha8Rng, used: &mut Vec<String>) -> String {
    loop {
        let text = format!(
            "{} the {} {} and {} the {}",
            pick(rng, &VERBS),
            pick(rng, &NOUNS),
            pick(rng, &MODIFIERS),
            pick(rng, &VERBS),
            pick(rng, &NOUNS)
        );
        if !used.contains(&text) {
            used.push(text.clone());
            return text;
        }
    }
}

/// Step counts for the kept articles: seeded draws in 3..=20 with at least
/// one article at the 20-step cap, then nudged until the total is exact.
fn wikihow_sizes(seed: u64) -> Vec<usize> {
    let mut rng = seeded(seed, "wikihow-sizes", 0);
    let mut sizes: Vec<usize> = (0..WIKIHOW_KEPT)
        .map(|_| rng.random_range(4..=13))
        .collect();
    sizes[0] = 20;
    let mut total: isize = sizes.iter().sum::<usize>() as isize;
    let target = WIKIHOW_TOTAL_STEPS as isize;
    let mut cursor = 1usize;
    while total != target {
        let grow = total < target;
        let size = &mut sizes[cursor];
        if grow && *size < 20 {
            *size += 1;
            total += 1;
        } else if !grow && *size > 3 {
            *size -= 1;
            total -= 1;
        }
        cursor = (cursor + 1) % sizes.len();
        if cursor == 0 {
            cursor = 1;
        }
    }
    sizes
}

fn wikihow_record(
    seed: u64,
    index: usize,
    steps: usize,
    lang: &str,
    ordered: bool,
) -> serde_json::Value {
    let mut rng = seeded(seed, "wikihow", index);
    let title = format!(
        "How to {} {}",
        pick(&mut rng, &TITLE_VERBS),
        pick(&mut rng, &TITLE_NOUNS)
    );
    let mut used = Vec::new();
    let steps: Vec<String> = (0..steps).map(|_| wikihow_step(&mut rng, &mut used)).collect();
    json!({
        "id": format!("wh_{index:05}"),
        "title": title,
        "lang": lang,
        "ordered": ordered,
        "steps": steps,
    })
}

/// Writes the how-to corpus fixture: the kept English ordered articles plus
/// interleaved records every filter must drop.
pub fn write_wikihow(path: &Path, seed: u64) -> std::io::Result<()> {
    let kept_sizes = wikihow_sizes(seed);
    let mut specs: Vec<(usize, &str, bool)> = kept_sizes
        .iter()
        .map(|&n| (n, "en", true))
        .collect();
    let mut rng = seeded(seed, "wikihow-layout", 0);
    for i in 0..WIKIHOW_NON_ENGLISH {
        let lang = ["de", "es", "fr", "zh"][i % 4];
        specs.push((rng.random_range(3..=18), lang, true));
    }
    for _ in 0..WIKIHOW_UNORDERED {
        specs.push((rng.random_range(3..=18), "en", false));
    }
    for _ in 0..WIKIHOW_OVERLONG {
        specs.push((rng.random_range(21..=24), "en", true));
    }
    specs.shuffle(&mut rng);

    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (index, &(steps, lang, ordered)) in specs.iter().enumerate() {
        writeln!(out, "{}", wikihow_record(seed, index, steps, lang, ordered))?;
    }
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{load_proscript, load_wikihow};

    #[test]
    fn proscript_fixture_matches_published_statistics() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("proscript.jsonl");
        write_proscript(&path, 17).unwrap();
        let loaded = load_proscript(&path).unwrap();
        assert!(loaded.rejected.is_empty());
        let m = &loaded.manifest;
        assert_eq!(m.scenario_count, 2077);
        assert!((m.mean_events - 7.46).abs() < 0.01, "mean events {}", m.mean_events);
        assert!((m.mean_gold_edges - 6.95).abs() < 0.01, "mean edges {}", m.mean_gold_edges);
        assert_eq!(m.max_events, 9);
        assert_eq!(m.percent_non_linear.round() as i64, 39);
        // All gold graphs are weakly connected chains plus skips.
        for s in loaded.scenarios.iter().take(50) {
            assert_eq!(crate::graph::weak_components(&s.gold_graph()), 1);
        }
    }

    #[test]
    fn proscript_fixture_is_byte_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.jsonl");
        let b = dir.path().join("b.jsonl");
        write_proscript(&a, 17).unwrap();
        write_proscript(&b, 17).unwrap();
        assert_eq!(
            std::fs::read_to_string(&a).unwrap(),
            std::fs::read_to_string(&b).unwrap()
        );
    }

    #[test]
    fn wikihow_fixture_matches_published_statistics() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("wikihow.jsonl");
        write_wikihow(&path, 17).unwrap();
        let loaded = load_wikihow(&path).unwrap();
        let m = &loaded.manifest;
        assert_eq!(m.scenario_count, 2991);
        assert!((m.mean_events - 8.37).abs() < 0.01, "mean events {}", m.mean_events);
        assert_eq!(m.max_events, 20);
        assert_eq!(m.percent_non_linear, 0.0);
        assert_eq!(loaded.filtered["non_english"], 180);
        assert_eq!(loaded.filtered["unordered"], 140);
        assert_eq!(loaded.filtered["over_20_steps"], 80);
    }
}
