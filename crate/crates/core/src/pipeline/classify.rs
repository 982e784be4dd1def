use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::backends::{cosine, EmbeddingBackend};
use crate::error::{Error, Result};

const THINGS: &str = include_str!("../../assets/things.txt");
const STUFF: &str = include_str!("../../assets/stuff.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectKind {
    /// Countable object with a definite shape; gets candidates and an anchor.
    Thing,
    /// Amorphous matter such as sky or grass; masked prompt only.
    Stuff,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryList {
    things: Vec<String>,
    stuff: Vec<String>,
}

fn normalize(noun: &str) -> String {
    let lower = noun.trim().to_lowercase();
    let base = lower
        .strip_suffix("-other")
        .or_else(|| lower.strip_suffix("-stuff"))
        .unwrap_or(&lower);
    base.replace('-', " ").split_whitespace().collect::<Vec<_>>().join(" ")
}

fn parse_list(text: &str) -> Vec<String> {
    let mut seen = BTreeSet::new();
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(normalize)
        .filter(|n| seen.insert(n.clone()))
        .collect()
}

impl Default for CategoryList {
    fn default() -> Self {
        CategoryList::new(parse_list(THINGS), parse_list(STUFF)).expect("bundled categories are disjoint")
    }
}

impl CategoryList {
    pub fn new(things: Vec<String>, stuff: Vec<String>) -> Result<Self> {
        let things: Vec<String> = things.iter().map(|t| normalize(t)).collect();
        let stuff: Vec<String> = stuff.iter().map(|s| normalize(s)).collect();
        let thing_set: BTreeSet<&String> = things.iter().collect();
        if let Some(both) = stuff.iter().find(|s| thing_set.contains(s)) {
            return Err(Error::invalid(format!("{both:?} is listed as both thing and stuff")));
        }
        if things.iter().chain(&stuff).any(String::is_empty) {
            return Err(Error::invalid("category nouns must be nonempty"));
        }
        Ok(CategoryList { things, stuff })
    }

    pub fn things(&self) -> &[String] {
        &self.things
    }

    pub fn stuff(&self) -> &[String] {
        &self.stuff
    }

    pub fn lookup(&self, noun: &str) -> Option<ObjectKind> {
        let n = normalize(noun);
        if self.things.contains(&n) {
            Some(ObjectKind::Thing)
        } else if self.stuff.contains(&n) {
            Some(ObjectKind::Stuff)
        } else {
            None
        }
    }

    fn all(&self) -> impl Iterator<Item = (&str, ObjectKind)> {
        self.things
            .iter()
            .map(|t| (t.as_str(), ObjectKind::Thing))
            .chain(self.stuff.iter().map(|s| (s.as_str(), ObjectKind::Stuff)))
    }
}

/// Thing or stuff: exact (case-insensitive) match first, otherwise the kind
/// of the most similar category noun. Ties go to the earlier noun, things
/// before stuff; with no positive similarity at all the noun is a thing.
pub fn classify(noun: &str, cats: &CategoryList, embed: &dyn EmbeddingBackend) -> Result<ObjectKind> {
    if noun.trim().is_empty() {
        return Err(Error::invalid("cannot classify an empty noun"));
    }
    if let Some(kind) = cats.lookup(noun) {
        return Ok(kind);
    }
    let query = embed.embed(&normalize(noun))?;
    let mut best: Option<(f64, ObjectKind)> = None;
    for (name, kind) in cats.all() {
        let sim = cosine(&query, &embed.embed(name)?);
        if best.is_none_or(|(b, _)| sim > b) {
            best = Some((sim, kind));
        }
    }
    Ok(match best {
        Some((sim, kind)) if sim > 0.0 => kind,
        _ => ObjectKind::Thing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::MockEmbedding;
    use std::collections::BTreeMap;

    /// Hand-placed vectors: "corgi" sits next to "dog".
    struct Table(BTreeMap<&'static str, Vec<f32>>);

    impl EmbeddingBackend for Table {
        fn embed(&self, text: &str) -> Result<Vec<f32>> {
            Ok(self.0.get(text).cloned().unwrap_or_else(|| vec![0.0, 0.0, 1.0]))
        }

        fn clip_score(&self, _: &[u8], _: &str) -> Result<f64> {
            Ok(0.0)
        }
    }

    #[test]
    fn bundled_lists_are_disjoint_and_normalized() {
        let cats = CategoryList::default();
        assert_eq!(cats.things().len(), 87);
        assert!(cats.stuff().contains(&"sky".to_string()));
        assert!(cats.stuff().contains(&"wall brick".to_string()));
        assert!(cats.stuff().iter().all(|s| s == &s.to_lowercase() && !s.ends_with("other")));
    }

    #[test]
    fn exact_matches() {
        let cats = CategoryList::default();
        let e = MockEmbedding;
        assert_eq!(classify("dog", &cats, &e).unwrap(), ObjectKind::Thing);
        assert_eq!(classify("Ocean", &cats, &e).unwrap(), ObjectKind::Stuff);
        assert_eq!(classify("grass", &cats, &e).unwrap(), ObjectKind::Stuff);
        assert_eq!(classify("girl", &cats, &e).unwrap(), ObjectKind::Thing);
        assert!(classify(" ", &cats, &e).is_err());
    }

    #[test]
    fn nearest_neighbor_for_unknown_nouns() {
        let cats = CategoryList::new(vec!["dog".into()], vec!["ocean".into()]).unwrap();
        let table = Table(BTreeMap::from([
            ("dog", vec![1.0, 0.0, 0.0]),
            ("ocean", vec![0.0, 1.0, 0.0]),
            ("corgi", vec![0.9, 0.1, 0.0]),
            ("lagoon", vec![0.2, 0.8, 0.0]),
        ]));
        assert_eq!(classify("corgi", &cats, &table).unwrap(), ObjectKind::Thing);
        assert_eq!(classify("lagoon", &cats, &table).unwrap(), ObjectKind::Stuff);
        // Orthogonal to everything: falls back to thing.
        assert_eq!(classify("quasar", &cats, &table).unwrap(), ObjectKind::Thing);
    }

    #[test]
    fn trigram_neighbors_with_mock_embedding() {
        let cats = CategoryList::default();
        assert_eq!(classify("dogs", &cats, &MockEmbedding).unwrap(), ObjectKind::Thing);
        assert_eq!(classify("snowfield", &cats, &MockEmbedding).unwrap(), ObjectKind::Stuff);
    }

    #[test]
    fn overlapping_lists_are_rejected() {
        assert!(CategoryList::new(vec!["Tree".into()], vec!["tree".into()]).is_err());
    }
}
