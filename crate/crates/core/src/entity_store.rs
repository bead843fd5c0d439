//! The entity catalog: surfaces, cached pronunciations and descriptions.

use std::collections::{BTreeMap, HashMap};
use std::io::BufRead;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{NecError, Result};
use crate::phonetics::{phoneticize, similarity, PhoneticSequence, PronunciationLexicon};

/// Default description length in words.
pub const DESCRIPTION_WORD_LIMIT: usize = 100;

pub type EntityId = u32;

#[derive(Debug, Clone, PartialEq)]
pub struct Entity {
    pub id: EntityId,
    pub surface: String,
    pub phonetic: PhoneticSequence,
}

/// Catalog of named entities with optional descriptions. Built once, then
/// shared read-only.
#[derive(Debug, Clone)]
pub struct EntityCatalog {
    entities: Vec<Entity>,
    by_surface: HashMap<String, EntityId>,
    descriptions: BTreeMap<EntityId, String>,
    lexicon: Arc<PronunciationLexicon>,
    duplicates_dropped: usize,
}

impl EntityCatalog {
    pub fn new(lexicon: Arc<PronunciationLexicon>) -> Self {
        Self {
            entities: Vec::new(),
            by_surface: HashMap::new(),
            descriptions: BTreeMap::new(),
            lexicon,
            duplicates_dropped: 0,
        }
    }

    /// Builds a catalog from surfaces in order. Duplicates and blank
    /// surfaces are skipped; duplicates are counted.
    pub fn from_surfaces<I, S>(surfaces: I, lexicon: Arc<PronunciationLexicon>) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut catalog = Self::new(lexicon);
        for s in surfaces {
            catalog.push(s.as_ref());
        }
        catalog
    }

    /// Adds a surface. Returns the new id, or `None` for a blank or
    /// duplicate surface.
    pub fn push(&mut self, surface: &str) -> Option<EntityId> {
        let surface = surface.trim();
        if surface.is_empty() {
            return None;
        }
        if self.by_surface.contains_key(surface) {
            self.duplicates_dropped += 1;
            return None;
        }
        let id = self.entities.len() as EntityId;
        self.entities.push(Entity {
            id,
            surface: surface.to_string(),
            phonetic: phoneticize(surface, &self.lexicon),
        });
        self.by_surface.insert(surface.to_string(), id);
        Some(id)
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn entities(&self) -> &[Entity] {
        &self.entities
    }

    pub fn get(&self, id: EntityId) -> Option<&Entity> {
        self.entities.get(id as usize)
    }

    pub fn id_of(&self, surface: &str) -> Option<EntityId> {
        self.by_surface.get(surface).copied()
    }

    pub fn lexicon(&self) -> &Arc<PronunciationLexicon> {
        &self.lexicon
    }

    pub fn duplicates_dropped(&self) -> usize {
        self.duplicates_dropped
    }

    pub fn description(&self, id: EntityId) -> Option<&str> {
        self.descriptions.get(&id).map(String::as_str)
    }

    pub fn described_count(&self) -> usize {
        self.descriptions.len()
    }

    /// Stores a cleaned, truncated description, replacing any earlier one.
    pub fn attach_description(&mut self, surface: &str, raw_text: &str) -> Result<EntityId> {
        let id = self
            .id_of(surface)
            .ok_or_else(|| NecError::NotFound(format!("entity {surface:?}")))?;
        let cleaned = strip_control_tokens(raw_text);
        self.descriptions
            .insert(id, truncate_description(&cleaned, DESCRIPTION_WORD_LIMIT));
        Ok(id)
    }

    /// Keeps only entities that carry a description. Ids are reassigned in
    /// catalog order.
    pub fn retain_described(&self) -> EntityCatalog {
        self.subset(|e| self.descriptions.contains_key(&e.id))
    }

    /// New catalog of the entities accepted by `keep`, preserving order and
    /// descriptions. Ids are reassigned densely.
    pub fn subset<F: Fn(&Entity) -> bool>(&self, keep: F) -> EntityCatalog {
        let mut out = EntityCatalog::new(Arc::clone(&self.lexicon));
        for e in self.entities.iter().filter(|e| keep(e)) {
            let new_id = out.push(&e.surface).expect("surfaces are unique");
            if let Some(d) = self.descriptions.get(&e.id) {
                out.descriptions.insert(new_id, d.clone());
            }
        }
        out
    }
}

/// Reads one entity surface per line.
pub fn ingest_entities<R: BufRead>(
    lines: R,
    lexicon: Arc<PronunciationLexicon>,
) -> Result<EntityCatalog> {
    let mut catalog = EntityCatalog::new(lexicon);
    for line in lines.lines() {
        catalog.push(&line?);
    }
    Ok(catalog)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DescriptionRecord {
    pub entity: String,
    pub description: String,
}

/// Reads `{"entity": ..., "description": ...}` JSON lines into the catalog.
pub fn load_descriptions<R: BufRead>(catalog: &mut EntityCatalog, source: R) -> Result<usize> {
    let mut attached = 0;
    for (idx, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DescriptionRecord = serde_json::from_str(&line).map_err(|e| NecError::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        catalog
            .attach_description(&rec.entity, &rec.description)
            .map_err(|e| NecError::Parse {
                line: idx + 1,
                message: e.to_string(),
            })?;
        attached += 1;
    }
    Ok(attached)
}

fn strip_control_tokens(text: &str) -> String {
    text.replace("[SEP]", "").replace("[CLS]", "")
}

/// Keeps the first `limit` words. Text containing whitespace is split on
/// whitespace; unspaced text counts one word per character.
pub fn truncate_description(raw_text: &str, limit: usize) -> String {
    let text = raw_text.trim();
    if text.chars().any(char::is_whitespace) {
        text.split_whitespace()
            .take(limit)
            .collect::<Vec<_>>()
            .join(" ")
    } else {
        text.chars().take(limit).collect()
    }
}

/// All unordered pairs `(i, j)`, `i < j`, of distinct entities with
/// identical pronunciations.
pub fn homophone_pairs(catalog: &EntityCatalog) -> Vec<(EntityId, EntityId)> {
    // identical sequences share length and syllable multiset
    let mut buckets: HashMap<Vec<&str>, Vec<&Entity>> = HashMap::new();
    for e in catalog.entities() {
        let mut key: Vec<&str> = e.phonetic.syllables().iter().map(String::as_str).collect();
        key.sort_unstable();
        buckets.entry(key).or_default().push(e);
    }
    let mut pairs = Vec::new();
    for members in buckets.values() {
        for (a_idx, a) in members.iter().enumerate() {
            for b in &members[a_idx + 1..] {
                if a.surface != b.surface && similarity(&a.phonetic, &b.phonetic) == 1.0 {
                    pairs.push((a.id.min(b.id), a.id.max(b.id)));
                }
            }
        }
    }
    pairs.sort_unstable();
    pairs
}

/// A training utterance with its gold entity spans, as character ranges.
#[derive(Debug, Clone)]
pub struct AnnotatedText {
    pub text: String,
    pub ne_spans: Vec<(usize, usize)>,
}

/// Number of gold spans whose surface equals each entity. Every catalog id
/// is present in the result.
pub fn occurrence_counts(
    utterances: &[AnnotatedText],
    catalog: &EntityCatalog,
) -> BTreeMap<EntityId, usize> {
    let mut counts: BTreeMap<EntityId, usize> =
        catalog.entities().iter().map(|e| (e.id, 0)).collect();
    for utt in utterances {
        let chars: Vec<char> = utt.text.chars().collect();
        for &(start, end) in &utt.ne_spans {
            if start >= end || end > chars.len() {
                continue;
            }
            let surface: String = chars[start..end].iter().collect();
            if let Some(id) = catalog.id_of(&surface) {
                *counts.entry(id).or_default() += 1;
            }
        }
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phonetics::{load_lexicon, ToneMode};

    fn lexicon() -> Arc<PronunciationLexicon> {
        let src =
            "朴\tpiao2\n泰\ttai4\n桓\thuan2\n環\thuan2\n环\thuan2\n而\ter2\n在\tzai4\n王\twang2\n";
        Arc::new(load_lexicon(src.as_bytes(), ToneMode::WithTone).unwrap())
    }

    #[test]
    fn ingest_assigns_ids_and_drops_duplicates() {
        let c = ingest_entities("朴泰桓\n而在\n王".as_bytes(), lexicon()).unwrap();
        assert_eq!(c.len(), 3);
        let c = ingest_entities("朴泰桓\n而在\n朴泰桓".as_bytes(), lexicon()).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.duplicates_dropped(), 1);
        assert_eq!(c.id_of("而在"), Some(1));
        let c = ingest_entities("".as_bytes(), lexicon()).unwrap();
        assert!(c.is_empty());
    }

    #[test]
    fn attach_overwrites_and_rejects_unknown() {
        let mut c = ingest_entities("朴泰桓".as_bytes(), lexicon()).unwrap();
        c.attach_description("朴泰桓", "first").unwrap();
        c.attach_description("朴泰桓", "second [SEP] text").unwrap();
        assert_eq!(c.description(0), Some("second text"));
        assert!(matches!(
            c.attach_description("王", "x"),
            Err(NecError::NotFound(_))
        ));
    }

    #[test]
    fn truncation_rules() {
        let long: Vec<String> = (0..250).map(|i| format!("w{i}")).collect();
        let out = truncate_description(&long.join(" "), 100);
        assert_eq!(out.split_whitespace().count(), 100);
        assert!(out.ends_with("w99"));

        let short: Vec<String> = (0..40).map(|i| format!("w{i}")).collect();
        assert_eq!(truncate_description(&short.join(" "), 100), short.join(" "));

        let cjk: String = "韓國男子游泳選手".repeat(40);
        assert_eq!(cjk.chars().count(), 320);
        let out = truncate_description(&cjk, 100);
        assert_eq!(out.chars().count(), 100);
        assert!(cjk.starts_with(&out));

        assert_eq!(truncate_description("  padded  ", 100), "padded");
        let again = truncate_description(&out, 100);
        assert_eq!(again, out);
    }

    #[test]
    fn homophones_found() {
        let c = ingest_entities("朴泰桓\n朴泰環\n王".as_bytes(), lexicon()).unwrap();
        assert_eq!(homophone_pairs(&c), vec![(0, 1)]);
        let c = ingest_entities("朴泰桓\n而在\n王".as_bytes(), lexicon()).unwrap();
        assert!(homophone_pairs(&c).is_empty());
        let c = ingest_entities("朴泰桓\n朴泰環\n朴泰环\n王".as_bytes(), lexicon()).unwrap();
        assert_eq!(homophone_pairs(&c), vec![(0, 1), (0, 2), (1, 2)]);
    }

    #[test]
    fn occurrences() {
        let c = ingest_entities("朴泰桓\n王\n而在".as_bytes(), lexicon()).unwrap();
        let utts = vec![
            AnnotatedText {
                text: "朴泰桓王".into(),
                ne_spans: vec![(0, 3), (3, 4)],
            },
            AnnotatedText {
                text: "xx王".into(),
                ne_spans: vec![(2, 3)],
            },
        ];
        let counts = occurrence_counts(&utts, &c);
        assert_eq!(counts[&0], 1);
        assert_eq!(counts[&1], 2);
        assert_eq!(counts[&2], 0);
    }
}
