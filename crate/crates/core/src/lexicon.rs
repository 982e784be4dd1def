//! Attribute and relationship dictionaries keyed by object name, built from
//! scene-graph style annotation dumps and sampled to ground prompting.
//!
//! Input records are tab-separated lines:
//!
//! ```text
//! window	attr	white
//! man	rel	sitting on
//! ```
//!
//! Blank lines and lines starting with `#` are ignored.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_from_seed;

pub const SNAPSHOT_MAGIC: &str = "SKETCHPLAN-LEXICON";
pub const SNAPSHOT_VERSION: u32 = 1;
pub const DEFAULT_SAMPLE_K: usize = 10;

const SAMPLE_TSV: &str = include_str!("../assets/lexicon_sample.tsv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhraseKind {
    Attribute,
    Relationship,
}

impl PhraseKind {
    fn parse(tag: &str) -> Option<Self> {
        match tag.trim().to_ascii_lowercase().as_str() {
            "attr" | "attribute" => Some(PhraseKind::Attribute),
            "rel" | "relationship" => Some(PhraseKind::Relationship),
            _ => None,
        }
    }

    fn tag(&self) -> &'static str {
        match self {
            PhraseKind::Attribute => "attr",
            PhraseKind::Relationship => "rel",
        }
    }
}

type PhraseCounts = BTreeMap<String, BTreeMap<String, u64>>;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Lexicon {
    attributes: PhraseCounts,
    relationships: PhraseCounts,
}

fn normalize(text: &str) -> String {
    text.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

impl Lexicon {
    pub fn new() -> Self {
        Self::default()
    }

    /// Small built-in dictionary for offline runs and demos.
    pub fn bundled_sample() -> Self {
        Self::ingest(SAMPLE_TSV.as_bytes()).expect("bundled lexicon parses")
    }

    fn table(&self, kind: PhraseKind) -> &PhraseCounts {
        match kind {
            PhraseKind::Attribute => &self.attributes,
            PhraseKind::Relationship => &self.relationships,
        }
    }

    fn table_mut(&mut self, kind: PhraseKind) -> &mut PhraseCounts {
        match kind {
            PhraseKind::Attribute => &mut self.attributes,
            PhraseKind::Relationship => &mut self.relationships,
        }
    }

    /// Record `count` occurrences of `phrase` for `name`.
    pub fn add(&mut self, kind: PhraseKind, name: &str, phrase: &str, count: u64) -> Result<()> {
        let (name, phrase) = (normalize(name), normalize(phrase));
        if name.is_empty() || phrase.is_empty() {
            return Err(Error::invalid("lexicon name and phrase must be nonempty"));
        }
        if count == 0 {
            return Err(Error::invalid("lexicon counts must be at least 1"));
        }
        *self
            .table_mut(kind)
            .entry(name)
            .or_default()
            .entry(phrase)
            .or_default() += count;
        Ok(())
    }

    /// Aggregate a record stream into a lexicon.
    pub fn ingest(source: impl Read) -> Result<Self> {
        let mut lex = Lexicon::new();
        for (i, line) in BufReader::new(source).lines().enumerate() {
            let line_no = i + 1;
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.trim_end_matches(['\r', '\n']).split('\t').collect();
            let parse_err = |message: String| Error::Parse {
                line: line_no,
                message,
            };
            let [name, kind, phrase] = fields[..] else {
                return Err(parse_err(format!(
                    "expected 3 tab-separated fields, found {}",
                    fields.len()
                )));
            };
            let kind = PhraseKind::parse(kind)
                .ok_or_else(|| parse_err(format!("unknown record kind {kind:?}, expected attr or rel")))?;
            if normalize(name).is_empty() || normalize(phrase).is_empty() {
                return Err(parse_err("empty name or phrase".into()));
            }
            lex.add(kind, name, phrase, 1)?;
        }
        Ok(lex)
    }

    pub fn ingest_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::ingest(fs::File::open(path)?)
    }

    /// `(phrase, count)` pairs for a name, sorted by phrase.
    pub fn phrases(&self, kind: PhraseKind, name: &str) -> Vec<(&str, u64)> {
        self.table(kind)
            .get(&normalize(name))
            .map(|m| m.iter().map(|(p, c)| (p.as_str(), *c)).collect())
            .unwrap_or_default()
    }

    pub fn attributes(&self, name: &str) -> Vec<(&str, u64)> {
        self.phrases(PhraseKind::Attribute, name)
    }

    pub fn relationships(&self, name: &str) -> Vec<(&str, u64)> {
        self.phrases(PhraseKind::Relationship, name)
    }

    pub fn names(&self, kind: PhraseKind) -> impl Iterator<Item = &str> {
        self.table(kind).keys().map(String::as_str)
    }

    pub fn key_count(&self) -> usize {
        self.attributes.keys().chain(self.relationships.keys()).collect::<BTreeSet<_>>().len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty() && self.relationships.is_empty()
    }

    /// Total records for a name across both kinds.
    pub fn total_count(&self, name: &str) -> u64 {
        let name = normalize(name);
        [&self.attributes, &self.relationships]
            .iter()
            .filter_map(|t| t.get(&name))
            .flat_map(|m| m.values())
            .sum()
    }

    /// Versioned text snapshot: a magic header line followed by
    /// `kind<TAB>name<TAB>phrase<TAB>count` rows.
    pub fn to_snapshot(&self) -> String {
        let mut out = format!("{SNAPSHOT_MAGIC} v{SNAPSHOT_VERSION}\n");
        for kind in [PhraseKind::Attribute, PhraseKind::Relationship] {
            for (name, phrases) in self.table(kind) {
                for (phrase, count) in phrases {
                    out.push_str(&format!("{}\t{name}\t{phrase}\t{count}\n", kind.tag()));
                }
            }
        }
        out
    }

    pub fn from_snapshot(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        let expected = format!("{SNAPSHOT_MAGIC} v{SNAPSHOT_VERSION}");
        if header.trim() != expected {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected snapshot header {expected:?}, found {header:?}"),
            });
        }
        let mut lex = Lexicon::new();
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                line: i + 2,
                message,
            };
            let fields: Vec<&str> = line.split('\t').collect();
            let [kind, name, phrase, count] = fields[..] else {
                return Err(parse_err("expected 4 tab-separated fields".into()));
            };
            let kind = PhraseKind::parse(kind).ok_or_else(|| parse_err(format!("unknown kind {kind:?}")))?;
            let count: u64 = count
                .trim()
                .parse()
                .map_err(|e| parse_err(format!("bad count {count:?}: {e}")))?;
            lex.add(kind, name, phrase, count)
                .map_err(|e| parse_err(e.to_string()))?;
        }
        Ok(lex)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_snapshot())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_snapshot(&fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    /// Every distinct phrase equally likely.
    #[default]
    Uniform,
    /// Phrases weighted by their recorded frequency.
    FrequencyWeighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleConfig {
    pub k: usize,
    pub rng_seed: u64,
    #[serde(default)]
    pub mode: SampleMode,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig {
            k: DEFAULT_SAMPLE_K,
            rng_seed: 0,
            mode: SampleMode::Uniform,
        }
    }
}

impl SampleConfig {
    pub fn with_seed(rng_seed: u64) -> Self {
        SampleConfig {
            rng_seed,
            ..Self::default()
        }
    }
}

/// Draw `min(k, pool)` distinct phrases. Pools no larger than `k` are returned
/// whole in sorted order.
fn draw(pool: Vec<(String, u64)>, cfg: &SampleConfig) -> Vec<String> {
    let k = cfg.k.max(1);
    if pool.len() <= k {
        return pool.into_iter().map(|(p, _)| p).collect();
    }
    let mut rng = rng_from_seed(cfg.rng_seed);
    let picks: Vec<usize> = match cfg.mode {
        SampleMode::Uniform => index::sample(&mut rng, pool.len(), k).into_vec(),
        SampleMode::FrequencyWeighted => index::sample_weighted(&mut rng, pool.len(), |i| pool[i].1 as f64, k)
            .expect("counts are positive and finite")
            .into_vec(),
    };
    picks.into_iter().map(|i| pool[i].0.clone()).collect()
}

pub fn sample_attributes(lex: &Lexicon, name: &str, cfg: &SampleConfig) -> Vec<String> {
    let pool = lex
        .attributes(name)
        .into_iter()
        .map(|(p, c)| (p.to_string(), c))
        .collect();
    draw(pool, cfg)
}

/// Sample from the union of relationship phrases recorded for any of `names`.
pub fn sample_relationships(lex: &Lexicon, names: &[&str], cfg: &SampleConfig) -> Vec<String> {
    let mut pool: BTreeMap<String, u64> = BTreeMap::new();
    for name in names {
        for (phrase, count) in lex.relationships(name) {
            *pool.entry(phrase.to_string()).or_default() += count;
        }
    }
    draw(pool.into_iter().collect(), cfg)
}
