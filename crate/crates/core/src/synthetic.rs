//! Seeded synthetic corpora for tests, fixtures and the analysis harnesses.
//!
//! Characters are drawn from the CJK block and given pinyin-like syllables.
//! Entities come in homophone groups (same syllables, different
//! characters). Every entity owns a handful of topic characters that appear
//! both in its description and in the contexts it is spoken in, so a
//! lexical-overlap embedder can tell homophones apart. Hypotheses replace
//! the entity with a non-entity homophone, a near miss, or leave it intact;
//! detections include spurious spans over ordinary words.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::entity_store::{DescriptionRecord, EntityCatalog};
use crate::phonetics::{PronunciationLexicon, ToneMode};
use crate::records::{Hypothesis, NBestRecord};

const INITIALS: &[&str] = &[
    "b", "p", "m", "f", "d", "t", "n", "l", "g", "k", "h", "j", "q", "x", "zh", "ch", "sh", "r",
    "z", "c", "s",
];
const FINALS: &[&str] = &[
    "a", "o", "e", "i", "u", "ai", "ei", "ao", "ou", "an", "en", "ang", "eng", "ong",
];

#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub utterances: usize,
    /// Groups of mutually homophonous catalog entities.
    pub homophone_groups: usize,
    pub group_size: usize,
    /// Catalog entities without a homophone.
    pub singletons: usize,
    /// Extra homophones per entity syllable sequence, outside the catalog.
    pub homophone_padding: usize,
    /// Extra unrelated entities outside the catalog.
    pub random_padding: usize,
    pub nbest: usize,
    /// Probability of one spurious detected span per utterance.
    pub spurious_rate: f64,
    /// Probability that the top-1 keeps the entity intact.
    pub intact_rate: f64,
    /// Probability that the top-1 misses one syllable of the entity.
    pub near_miss_rate: f64,
    /// Share of utterances about entities from homophone groups.
    pub homophone_share: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            seed: 2024,
            utterances: 200,
            homophone_groups: 24,
            group_size: 3,
            singletons: 24,
            homophone_padding: 0,
            random_padding: 0,
            nbest: 10,
            spurious_rate: 0.3,
            intact_rate: 0.15,
            near_miss_rate: 0.15,
            homophone_share: 0.8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub lexicon: Arc<PronunciationLexicon>,
    /// Lexicon in the tab-separated file format.
    pub lexicon_tsv: String,
    /// Catalog surfaces, in catalog order.
    pub entities: Vec<String>,
    /// Pool-only surfaces used to grow catalogs.
    pub padding: Vec<String>,
    /// Descriptions for catalog and padding entities.
    pub descriptions: Vec<DescriptionRecord>,
    pub records: Vec<NBestRecord>,
}

impl SyntheticCorpus {
    pub fn catalog(&self) -> EntityCatalog {
        self.catalog_of(&self.entities)
    }

    /// Catalog entities plus padding, in a seeded interleaved order.
    pub fn pool_catalog(&self, seed: u64) -> EntityCatalog {
        let mut all: Vec<String> = self.entities.iter().chain(&self.padding).cloned().collect();
        all.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        self.catalog_of(&all)
    }

    fn catalog_of(&self, surfaces: &[String]) -> EntityCatalog {
        let mut c = EntityCatalog::from_surfaces(surfaces, Arc::clone(&self.lexicon));
        for d in &self.descriptions {
            if c.id_of(&d.entity).is_some() {
                c.attach_description(&d.entity, &d.description)
                    .expect("surface present");
            }
        }
        c
    }

    pub fn descriptions_jsonl(&self) -> String {
        let mut s = String::new();
        for d in &self.descriptions {
            s.push_str(&serde_json::to_string(d).expect("serialisable"));
            s.push('\n');
        }
        s
    }

    pub fn nbest_jsonl(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&serde_json::to_string(r).expect("serialisable"));
            s.push('\n');
        }
        s
    }
}

struct Builder {
    rng: ChaCha8Rng,
    next_code: u32,
    lexicon: PronunciationLexicon,
    lexicon_tsv: String,
    syllables: Vec<String>,
}

impl Builder {
    fn new(seed: u64) -> Self {
        let mut syllables = Vec::new();
        for i in INITIALS {
            for f in FINALS {
                for tone in 1..=4 {
                    syllables.push(format!("{i}{f}{tone}"));
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        syllables.shuffle(&mut rng);
        Self {
            rng,
            next_code: 0x4E00,
            lexicon: PronunciationLexicon::new(ToneMode::WithTone),
            lexicon_tsv: String::new(),
            syllables,
        }
    }

    fn fresh_char(&mut self, syllable: &str) -> char {
        let c = char::from_u32(self.next_code).expect("CJK code point");
        self.next_code += 1;
        self.lexicon.insert(c, [syllable]).expect("valid syllable");
        writeln!(self.lexicon_tsv, "{c}\t{syllable}").expect("write to string");
        c
    }

    fn take_syllables(&mut self, n: usize) -> Vec<String> {
        assert!(self.syllables.len() >= n, "syllable inventory exhausted");
        self.syllables.split_off(self.syllables.len() - n)
    }
}

/// Characters sharing one syllable.
struct SyllableChars {
    chars: Vec<char>,
}

struct EntitySeq {
    /// Index into the name-syllable table per position.
    positions: Vec<usize>,
}

fn realize(seq: &EntitySeq, choice: &[usize], table: &[SyllableChars]) -> String {
    seq.positions
        .iter()
        .zip(choice)
        .map(|(&p, &c)| table[p].chars[c])
        .collect()
}

pub fn generate(cfg: &SyntheticConfig) -> SyntheticCorpus {
    let mut b = Builder::new(cfg.seed);
    const CHARS_PER_SYLLABLE: usize = 6;

    let name_syllables = b.take_syllables(150);
    let name_table: Vec<SyllableChars> = name_syllables
        .iter()
        .map(|s| SyllableChars {
            chars: (0..CHARS_PER_SYLLABLE).map(|_| b.fresh_char(s)).collect(),
        })
        .collect();
    let topic_syllables = b.take_syllables(200);
    let filler_syllables = b.take_syllables(60);
    let context_fillers: Vec<char> = filler_syllables[..30]
        .to_vec()
        .iter()
        .map(|s| b.fresh_char(s))
        .collect();
    let description_fillers: Vec<char> = filler_syllables[30..]
        .to_vec()
        .iter()
        .map(|s| b.fresh_char(s))
        .collect();

    // distinct syllable sequences
    let mut used_seqs: HashSet<Vec<usize>> = HashSet::new();
    let mut new_seq = |rng: &mut ChaCha8Rng| loop {
        let len = rng.gen_range(2..=3);
        let positions: Vec<usize> = (0..len)
            .map(|_| rng.gen_range(0..name_table.len()))
            .collect();
        if used_seqs.insert(positions.clone()) {
            return EntitySeq { positions };
        }
    };

    let mut taken: HashSet<String> = HashSet::new();
    let fresh_realization = |seq: &EntitySeq, rng: &mut ChaCha8Rng, taken: &mut HashSet<String>| loop {
        let choice: Vec<usize> = seq
            .positions
            .iter()
            .map(|_| rng.gen_range(0..CHARS_PER_SYLLABLE))
            .collect();
        let s = realize(seq, &choice, &name_table);
        if taken.insert(s.clone()) {
            return s;
        }
    };

    // catalog entities: (surface, sequence index, in homophone group)
    let mut seqs: Vec<EntitySeq> = Vec::new();
    let mut entities: Vec<(String, usize, bool)> = Vec::new();
    for _ in 0..cfg.homophone_groups {
        let seq = new_seq(&mut b.rng);
        for _ in 0..cfg.group_size {
            let s = fresh_realization(&seq, &mut b.rng, &mut taken);
            entities.push((s, seqs.len(), true));
        }
        seqs.push(seq);
    }
    for _ in 0..cfg.singletons {
        let seq = new_seq(&mut b.rng);
        let s = fresh_realization(&seq, &mut b.rng, &mut taken);
        entities.push((s, seqs.len(), false));
        seqs.push(seq);
    }
    let mut padding: Vec<String> = Vec::new();
    for seq in &seqs {
        for _ in 0..cfg.homophone_padding {
            padding.push(fresh_realization(seq, &mut b.rng, &mut taken));
        }
    }
    for _ in 0..cfg.random_padding {
        let seq = new_seq(&mut b.rng);
        padding.push(fresh_realization(&seq, &mut b.rng, &mut taken));
    }

    // topic characters and descriptions
    let all_surfaces: Vec<String> = entities
        .iter()
        .map(|e| e.0.clone())
        .chain(padding.iter().cloned())
        .collect();
    let mut topics: Vec<Vec<char>> = Vec::with_capacity(all_surfaces.len());
    let mut descriptions = Vec::with_capacity(all_surfaces.len());
    for surface in &all_surfaces {
        let topic: Vec<char> = (0..6)
            .map(|_| {
                let s = topic_syllables[b.rng.gen_range(0..topic_syllables.len())].clone();
                b.fresh_char(&s)
            })
            .collect();
        let mut desc = String::new();
        desc.push_str(surface);
        for (i, t) in topic.iter().enumerate() {
            if i % 2 == 0 {
                desc.push(*description_fillers.choose(&mut b.rng).expect("non-empty"));
            }
            desc.push(*t);
        }
        desc.push(*description_fillers.choose(&mut b.rng).expect("non-empty"));
        descriptions.push(DescriptionRecord {
            entity: surface.clone(),
            description: desc,
        });
        topics.push(topic);
    }

    let group_members: Vec<usize> = (0..entities.len()).filter(|&i| entities[i].2).collect();
    let singles: Vec<usize> = (0..entities.len()).filter(|&i| !entities[i].2).collect();

    let mut records = Vec::with_capacity(cfg.utterances);
    for u in 0..cfg.utterances {
        let rng = &mut b.rng;
        let pick_group =
            singles.is_empty() || (!group_members.is_empty() && rng.gen_bool(cfg.homophone_share));
        let ent = if pick_group {
            *group_members.choose(rng).expect("non-empty")
        } else {
            *singles.choose(rng).expect("non-empty")
        };
        let (surface, seq_idx, _) = &entities[ent];
        let seq = &seqs[*seq_idx];
        let topic = &topics[ent];

        let filler = |rng: &mut ChaCha8Rng| *context_fillers.choose(rng).expect("non-empty");
        let mut prefix: Vec<char> = Vec::new();
        for _ in 0..rng.gen_range(2..=3) {
            prefix.push(filler(rng));
        }
        prefix.extend(topic.choose_multiple(rng, 2));
        prefix.push(filler(rng));
        let mut suffix: Vec<char> = vec![filler(rng)];
        suffix.extend(topic.choose_multiple(rng, 2));
        for _ in 0..rng.gen_range(2..=3) {
            suffix.push(filler(rng));
        }
        let ent_len = seq.positions.len();
        let start = prefix.len();
        let reference: String = prefix
            .iter()
            .chain(surface.chars().collect::<Vec<_>>().iter())
            .chain(&suffix)
            .collect();

        // a non-entity homophone of the entity
        let homophone = |rng: &mut ChaCha8Rng| loop {
            let choice: Vec<usize> = seq
                .positions
                .iter()
                .map(|_| rng.gen_range(0..CHARS_PER_SYLLABLE))
                .collect();
            let s = realize(seq, &choice, &name_table);
            if !taken.contains(&s) {
                return s;
            }
        };
        let roll: f64 = rng.gen();
        let (top_region, intact) = if roll < cfg.intact_rate {
            (surface.clone(), true)
        } else if roll < cfg.intact_rate + cfg.near_miss_rate {
            let mut chars: Vec<char> = homophone(rng).chars().collect();
            let pos = rng.gen_range(0..ent_len);
            let other = loop {
                let p = rng.gen_range(0..name_table.len());
                if p != seq.positions[pos] {
                    break p;
                }
            };
            chars[pos] = *name_table[other].chars.choose(rng).expect("non-empty");
            (chars.into_iter().collect(), false)
        } else {
            (homophone(rng), false)
        };

        let mut hyps: Vec<Hypothesis> = Vec::with_capacity(cfg.nbest);
        for n in 0..cfg.nbest.max(1) {
            let region = if n == 0 {
                top_region.clone()
            } else {
                match rng.gen_range(0..10) {
                    0..=2 => surface.clone(),
                    3..=4 => top_region.clone(),
                    _ => homophone(rng),
                }
            };
            let mut pre = prefix.clone();
            let mut suf = suffix.clone();
            // an ordinary-word error outside the entity
            if rng.gen_bool(if n == 0 { 0.2 } else { 0.3 }) {
                if rng.gen_bool(0.5) {
                    let i = rng.gen_range(0..pre.len());
                    pre[i] = filler(rng);
                } else {
                    let i = rng.gen_range(0..suf.len());
                    suf[i] = filler(rng);
                }
            }
            let text: String = pre
                .iter()
                .chain(region.chars().collect::<Vec<_>>().iter())
                .chain(&suf)
                .collect();
            let score = -0.35 * n as f64 - 0.1 * rng.gen::<f64>();
            hyps.push(Hypothesis { text, score });
        }

        let mut ced = Vec::new();
        if !intact || rng.gen_bool(0.5) {
            ced.push((start, start + ent_len));
        }
        if rng.gen_bool(cfg.spurious_rate) {
            let top_len = hyps[0].text.chars().count();
            let mut options: Vec<usize> = (0..start.saturating_sub(2)).collect();
            options.extend(start + ent_len + 1..top_len.saturating_sub(1));
            if let Some(&s) = options.choose(rng) {
                ced.push((s, s + 2));
            }
        }
        ced.sort_unstable();

        records.push(NBestRecord {
            utt_id: format!("syn{u:04}"),
            nbest: hyps,
            reference: Some(reference),
            ne_spans: Some(vec![(start, start + ent_len)]),
            ced_spans: Some(ced),
        });
    }

    SyntheticCorpus {
        lexicon: Arc::new(b.lexicon),
        lexicon_tsv: b.lexicon_tsv,
        entities: entities.into_iter().map(|e| e.0).collect(),
        padding,
        descriptions,
        records,
    }
}
