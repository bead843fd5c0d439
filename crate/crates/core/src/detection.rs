//! Corrupted entity detection: BIO tag codecs, alignment-based labelling of
//! hypotheses against references, a lexicon-driven baseline detector, and
//! span-exact detector scoring.

use std::cmp::Ordering;
use std::fmt;
use std::ops::Range;

use crate::align::{align_chars, project_span};
use crate::entity_store::EntityCatalog;
use crate::error::{NecError, Result};
use crate::phonetics::{phoneticize, similarity};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BioTag {
    B,
    I,
    O,
}

impl fmt::Display for BioTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            BioTag::B => "B",
            BioTag::I => "I",
            BioTag::O => "O",
        };
        f.write_str(s)
    }
}

/// Per-character tags for one hypothesis.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BioTags(pub Vec<BioTag>);

impl BioTags {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn parse(s: &str) -> Result<Self> {
        s.split_whitespace()
            .map(|t| match t {
                "B" => Ok(BioTag::B),
                "I" => Ok(BioTag::I),
                "O" => Ok(BioTag::O),
                other => Err(NecError::Invalid(format!("unknown BIO tag {other:?}"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(BioTags)
    }
}

impl fmt::Display for BioTags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(ToString::to_string).collect();
        f.write_str(&parts.join(" "))
    }
}

/// A detected span `[start, end)` in character offsets.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CorruptedSpan {
    pub start: usize,
    pub end: usize,
    pub surface: String,
}

impl CorruptedSpan {
    /// Validates offsets against `text` and captures the surface.
    pub fn new(text: &str, start: usize, end: usize) -> Result<Self> {
        let len = text.chars().count();
        if start >= end || end > len {
            return Err(NecError::InvalidSpan {
                start,
                end,
                len,
                reason: "expected 0 <= start < end <= len".into(),
            });
        }
        let surface = text.chars().skip(start).take(end - start).collect();
        Ok(Self {
            start,
            end,
            surface,
        })
    }

    pub fn range(&self) -> Range<usize> {
        self.start..self.end
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

/// Builds validated spans from raw `(start, end)` pairs, rejecting any
/// overlap. Output is sorted by start.
pub fn spans_from_offsets(text: &str, offsets: &[(usize, usize)]) -> Result<Vec<CorruptedSpan>> {
    let mut spans = offsets
        .iter()
        .map(|&(s, e)| CorruptedSpan::new(text, s, e))
        .collect::<Result<Vec<_>>>()?;
    spans.sort();
    for pair in spans.windows(2) {
        if pair[1].start < pair[0].end {
            return Err(NecError::InvalidSpan {
                start: pair[1].start,
                end: pair[1].end,
                len: text.chars().count(),
                reason: format!("overlaps [{}, {})", pair[0].start, pair[0].end),
            });
        }
    }
    Ok(spans)
}

/// Decoded spans plus the number of orphan `I` tags promoted to `B`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decoded {
    pub spans: Vec<CorruptedSpan>,
    pub repaired: usize,
}

pub fn bio_decode(tags: &BioTags, text: &str) -> Result<Decoded> {
    let chars: Vec<char> = text.chars().collect();
    if tags.len() != chars.len() {
        return Err(NecError::Dimension {
            expected: chars.len(),
            got: tags.len(),
        });
    }
    let mut spans = Vec::new();
    let mut repaired = 0;
    let mut open: Option<usize> = None;
    let close = |start: usize, end: usize, spans: &mut Vec<CorruptedSpan>| {
        spans.push(CorruptedSpan {
            start,
            end,
            surface: chars[start..end].iter().collect(),
        });
    };
    for (i, tag) in tags.0.iter().enumerate() {
        match tag {
            BioTag::B => {
                if let Some(s) = open.take() {
                    close(s, i, &mut spans);
                }
                open = Some(i);
            }
            BioTag::I => {
                if open.is_none() {
                    repaired += 1;
                    open = Some(i);
                }
            }
            BioTag::O => {
                if let Some(s) = open.take() {
                    close(s, i, &mut spans);
                }
            }
        }
    }
    if let Some(s) = open {
        close(s, chars.len(), &mut spans);
    }
    Ok(Decoded { spans, repaired })
}

pub fn bio_encode(spans: &[CorruptedSpan], length: usize) -> Result<BioTags> {
    let mut tags = vec![BioTag::O; length];
    for span in spans {
        if span.start >= span.end || span.end > length {
            return Err(NecError::InvalidSpan {
                start: span.start,
                end: span.end,
                len: length,
                reason: "span outside text".into(),
            });
        }
        if tags[span.start..span.end].iter().any(|t| *t != BioTag::O) {
            return Err(NecError::InvalidSpan {
                start: span.start,
                end: span.end,
                len: length,
                reason: "overlapping spans".into(),
            });
        }
        tags[span.start] = BioTag::B;
        for t in &mut tags[span.start + 1..span.end] {
            *t = BioTag::I;
        }
    }
    Ok(BioTags(tags))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LabelMode {
    /// Tag every hypothesis region aligned to a reference entity.
    #[default]
    Lenient,
    /// Tag only regions whose alignment contains at least one edit.
    Strict,
}

/// Tags the hypothesis characters that align into reference entity spans.
pub fn label_bio_by_alignment(
    hypothesis: &str,
    reference: &str,
    reference_ne_spans: &[(usize, usize)],
    mode: LabelMode,
) -> Result<BioTags> {
    let ref_len = reference.chars().count();
    for &(s, e) in reference_ne_spans {
        if s >= e || e > ref_len {
            return Err(NecError::InvalidSpan {
                start: s,
                end: e,
                len: ref_len,
                reason: "reference entity span out of range".into(),
            });
        }
    }
    let hyp_len = hypothesis.chars().count();
    let ops = align_chars(reference, hypothesis);
    let mut tags = vec![BioTag::O; hyp_len];
    for &(s, e) in reference_ne_spans {
        let proj = project_span(&ops, s..e);
        if proj.target.is_empty() || (mode == LabelMode::Strict && !proj.edited) {
            continue;
        }
        tags[proj.target.start] = BioTag::B;
        for t in &mut tags[proj.target.start + 1..proj.target.end] {
            *t = BioTag::I;
        }
    }
    Ok(BioTags(tags))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineDetectorConfig {
    pub min_sim: f64,
    pub window_slack: usize,
}

impl Default for BaselineDetectorConfig {
    fn default() -> Self {
        Self {
            min_sim: 0.6,
            window_slack: 1,
        }
    }
}

/// Sliding-window phonetic matcher against the catalog. Windows whose best
/// similarity reaches `min_sim` are chosen greedily by similarity, then
/// leftmost start, then width, skipping overlaps.
pub fn detect_baseline(
    hypothesis: &str,
    catalog: &EntityCatalog,
    cfg: &BaselineDetectorConfig,
) -> Vec<CorruptedSpan> {
    let chars: Vec<char> = hypothesis.chars().collect();
    let phon = phoneticize(hypothesis, catalog.lexicon());
    let n = chars.len();

    let mut widths: Vec<usize> = Vec::new();
    for e in catalog.entities() {
        let len = e.phonetic.len();
        for w in len.saturating_sub(cfg.window_slack).max(1)..=len + cfg.window_slack {
            widths.push(w);
        }
    }
    widths.sort_unstable();
    widths.dedup();

    let mut hits: Vec<(f64, usize, usize)> = Vec::new();
    for &w in &widths {
        if w > n {
            continue;
        }
        for start in 0..=n - w {
            let window = crate::phonetics::PhoneticSequence::new(
                phon.syllables()[start..start + w].to_vec(),
            );
            let best = catalog
                .entities()
                .iter()
                .filter(|e| e.phonetic.len().abs_diff(w) <= cfg.window_slack)
                .map(|e| similarity(&window, &e.phonetic))
                .fold(f64::NEG_INFINITY, f64::max);
            if best >= cfg.min_sim {
                hits.push((best, start, w));
            }
        }
    }
    hits.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(Ordering::Equal)
            .then(a.1.cmp(&b.1))
            .then(b.2.cmp(&a.2))
    });

    let mut taken = vec![false; n];
    let mut spans = Vec::new();
    for (_, start, w) in hits {
        if taken[start..start + w].iter().any(|t| *t) {
            continue;
        }
        taken[start..start + w].iter_mut().for_each(|t| *t = true);
        spans.push(CorruptedSpan {
            start,
            end: start + w,
            surface: chars[start..start + w].iter().collect(),
        });
    }
    spans.sort();
    spans
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DetectionScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Span-exact counts accumulated over a corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DetectionCounts {
    pub true_positive: usize,
    pub predicted: usize,
    pub gold: usize,
}

impl DetectionCounts {
    pub fn add(&mut self, predicted: &[(usize, usize)], gold: &[(usize, usize)]) {
        self.predicted += predicted.len();
        self.gold += gold.len();
        self.true_positive += predicted.iter().filter(|p| gold.contains(p)).count();
    }

    /// Ratios with `0/0` read as 1.
    pub fn score(&self) -> DetectionScore {
        let ratio = |num: usize, den: usize| {
            if den == 0 {
                1.0
            } else {
                num as f64 / den as f64
            }
        };
        let precision = ratio(self.true_positive, self.predicted);
        let recall = ratio(self.true_positive, self.gold);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        DetectionScore {
            precision,
            recall,
            f1,
        }
    }
}

pub fn eval_detector(predicted: &[(usize, usize)], gold: &[(usize, usize)]) -> DetectionScore {
    let mut counts = DetectionCounts::default();
    counts.add(predicted, gold);
    counts.score()
}
