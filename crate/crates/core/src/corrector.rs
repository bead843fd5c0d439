//! The correction pipeline: detect spans on the top-1 hypothesis, retrieve
//! phonetically similar entities, re-rank them with semantic scores, gate
//! each replacement against the n-best list, and splice accepted entities
//! into the text.

use std::cmp::Ordering;
use std::ops::Range;

use crate::align::{align_chars, project_span};
use crate::detection::{
    bio_decode, detect_baseline, label_bio_by_alignment, spans_from_offsets,
    BaselineDetectorConfig, CorruptedSpan, LabelMode,
};
use crate::entity_store::{EntityCatalog, EntityId};
use crate::error::{NecError, Result};
use crate::phonetics::{normalized_distance, phoneticize, similarity, PronunciationLexicon};
use crate::records::{CorrectionEntry, CorrectionOutput, NBestRecord};
use crate::semantic::{
    insert_markers, mask_span, reference_embed, semantic_distribution, softmax, ContextVectors,
    EmbeddingMemory, EmbeddingVector,
};

pub const DEFAULT_ALPHA: f64 = 0.6;
pub const DEFAULT_TOP_K: usize = 10;
pub const DEFAULT_NBEST: usize = 10;

/// Floor applied to probabilities before taking logs.
pub const LOG_FLOOR: f64 = 1e-12;

/// Where corrupted spans come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DetectorKind {
    /// `ced_spans` carried by the input record.
    External,
    Baseline(BaselineDetectorConfig),
    /// Reference entity spans projected onto the top-1 hypothesis.
    Gold,
}

/// How beam scores become rejection weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BeamWeighting {
    /// Scores are log-probabilities, softmax-normalised over the list.
    #[default]
    Softmax,
    /// Scores are used as weights unchanged.
    Raw,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrectorConfig {
    pub alpha: f64,
    pub top_k: usize,
    pub nbest_size: usize,
    pub detector: DetectorKind,
    pub rejection: bool,
    pub beam_weighting: BeamWeighting,
}

impl Default for CorrectorConfig {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            top_k: DEFAULT_TOP_K,
            nbest_size: DEFAULT_NBEST,
            detector: DetectorKind::External,
            rejection: true,
            beam_weighting: BeamWeighting::Softmax,
        }
    }
}

impl CorrectorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(NecError::Config(format!(
                "alpha must be in [0, 1], got {}",
                self.alpha
            )));
        }
        if self.top_k < 1 {
            return Err(NecError::Config("top-k must be at least 1".into()));
        }
        if self.nbest_size < 1 {
            return Err(NecError::Config("n-best size must be at least 1".into()));
        }
        if let DetectorKind::Baseline(b) = &self.detector {
            if !(0.0..=1.0).contains(&b.min_sim) {
                return Err(NecError::Config(format!(
                    "min-sim must be in [0, 1], got {}",
                    b.min_sim
                )));
            }
        }
        Ok(())
    }
}

/// Source of context embeddings for masked spans.
#[derive(Debug, Clone)]
pub enum ContextEncoder {
    Reference {
        dim: usize,
        seed: u64,
    },
    /// Vectors keyed by `(utt_id, span_index)`.
    Precomputed(ContextVectors),
}

impl ContextEncoder {
    fn encode(
        &self,
        hypothesis: &str,
        span: &CorruptedSpan,
        origin: (String, usize),
    ) -> Result<EmbeddingVector> {
        match self {
            ContextEncoder::Reference { dim, seed } => {
                let marked = insert_markers(mask_span(hypothesis, span, origin)?)?;
                Ok(reference_embed(&marked.tokens, *dim, *seed))
            }
            ContextEncoder::Precomputed(map) => map.get(&origin).cloned().ok_or_else(|| {
                NecError::NotFound(format!("context vector for {}#{}", origin.0, origin.1))
            }),
        }
    }
}

/// Entity-side embeddings and how context vectors are produced.
#[derive(Debug, Clone, Copy)]
pub struct SemanticModel<'a> {
    pub memory: &'a EmbeddingMemory,
    pub encoder: &'a ContextEncoder,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub id: EntityId,
    pub surface: String,
    pub phonetic_score: f64,
    pub semantic_score: f64,
    pub fused_score: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CandidateSet(pub Vec<Candidate>);

impl CandidateSet {
    pub fn best(&self) -> Option<&Candidate> {
        self.0.first()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Normalised phonetic similarity of `surface` against every catalog
/// entity, in catalog order. Falls back to uniform when nothing is similar.
pub fn phonetic_distribution(surface: &str, catalog: &EntityCatalog) -> Result<Vec<f64>> {
    if catalog.is_empty() {
        return Err(NecError::EmptyCatalog);
    }
    let query = phoneticize(surface, catalog.lexicon());
    let sims: Vec<f64> = catalog
        .entities()
        .iter()
        .map(|e| similarity(&e.phonetic, &query))
        .collect();
    let total: f64 = sims.iter().sum();
    if total == 0.0 {
        let u = 1.0 / sims.len() as f64;
        return Ok(vec![u; sims.len()]);
    }
    Ok(sims.into_iter().map(|s| s / total).collect())
}

/// Top-`k` entities by phonetic probability, ties by lower id. Semantic and
/// fused scores are left at zero.
pub fn phonetic_retrieve(surface: &str, catalog: &EntityCatalog, k: usize) -> Result<CandidateSet> {
    let probs = phonetic_distribution(surface, catalog)?;
    let mut ranked: Vec<(EntityId, f64)> =
        catalog.entities().iter().map(|e| e.id).zip(probs).collect();
    ranked.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(Ordering::Equal)
            .then(a.0.cmp(&b.0))
    });
    ranked.truncate(k);
    Ok(CandidateSet(
        ranked
            .into_iter()
            .map(|(id, p)| Candidate {
                id,
                surface: catalog.get(id).expect("id from catalog").surface.clone(),
                phonetic_score: p,
                semantic_score: 0.0,
                fused_score: 0.0,
            })
            .collect(),
    ))
}

/// Semantic probabilities for the candidates. Candidates without a memory
/// row each receive `1/k`; the rest share the remaining mass by softmax.
pub fn semantic_scores(
    context: &EmbeddingVector,
    candidates: &CandidateSet,
    memory: Option<&EmbeddingMemory>,
) -> Result<Vec<f64>> {
    let k = candidates.len();
    if k == 0 {
        return Err(NecError::EmptyCandidates);
    }
    let uniform = 1.0 / k as f64;
    let vectors: Vec<Option<EmbeddingVector>> = candidates
        .0
        .iter()
        .map(|c| memory.and_then(|m| m.vector(c.id)))
        .collect();
    let present: Vec<(EntityId, &EmbeddingVector)> = candidates
        .0
        .iter()
        .zip(&vectors)
        .filter_map(|(c, v)| v.as_ref().map(|v| (c.id, v)))
        .collect();
    if present.is_empty() {
        return Ok(vec![uniform; k]);
    }
    let share = present.len() as f64 / k as f64;
    let dist = semantic_distribution(context, &present)?;
    let mut dist = dist.into_iter().map(|(_, p)| p);
    Ok(vectors
        .iter()
        .map(|v| match v {
            Some(_) => share * dist.next().expect("one probability per present vector"),
            None => uniform,
        })
        .collect())
}

/// Sets fused scores `alpha * ln P_phon + (1 - alpha) * ln P_sem` and
/// re-ranks, ties by lower id.
pub fn fuse_scores(candidates: &mut CandidateSet, alpha: f64) {
    for c in &mut candidates.0 {
        c.fused_score = alpha * c.phonetic_score.max(LOG_FLOOR).ln()
            + (1.0 - alpha) * c.semantic_score.max(LOG_FLOOR).ln();
    }
    candidates.0.sort_by(|a, b| {
        b.fused_score
            .partial_cmp(&a.fused_score)
            .unwrap_or(Ordering::Equal)
            .then(a.id.cmp(&b.id))
    });
}

/// Validated n-best list.
#[derive(Debug, Clone, PartialEq)]
pub struct NBestList {
    hypotheses: Vec<(String, f64)>,
}

impl NBestList {
    pub fn new(hypotheses: Vec<(String, f64)>) -> Result<Self> {
        if hypotheses.is_empty() {
            return Err(NecError::Invalid(
                "n-best list must hold at least one hypothesis".into(),
            ));
        }
        if hypotheses.iter().any(|(_, s)| !s.is_finite()) {
            return Err(NecError::Invalid("beam scores must be finite".into()));
        }
        Ok(Self { hypotheses })
    }

    pub fn from_record(rec: &NBestRecord) -> Result<Self> {
        Self::new(
            rec.nbest
                .iter()
                .map(|h| (h.text.clone(), h.score))
                .collect(),
        )
    }

    pub fn top1(&self) -> &str {
        &self.hypotheses[0].0
    }

    pub fn len(&self) -> usize {
        self.hypotheses.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.hypotheses.iter().map(|(t, _)| t.as_str())
    }

    pub fn truncated(&self, n: usize) -> NBestList {
        NBestList {
            hypotheses: self.hypotheses[..n.clamp(1, self.len())].to_vec(),
        }
    }

    pub fn weights(&self, mode: BeamWeighting) -> Vec<f64> {
        let scores: Vec<f64> = self.hypotheses.iter().map(|(_, s)| *s).collect();
        beam_weights(&scores, mode)
    }
}

pub fn beam_weights(scores: &[f64], mode: BeamWeighting) -> Vec<f64> {
    match mode {
        BeamWeighting::Softmax => softmax(scores),
        BeamWeighting::Raw => scores.to_vec(),
    }
}

/// Text each hypothesis holds at the top-1 span, found by aligning the
/// hypothesis against the top-1. Entry 0 is the top-1 span itself.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedSpan {
    pub range: Range<usize>,
    pub surface: String,
}

pub fn align_spans_across_nbest(top1_span: &CorruptedSpan, nbest: &NBestList) -> Vec<AlignedSpan> {
    let top1 = nbest.top1();
    nbest
        .texts()
        .map(|hyp| {
            let ops = align_chars(top1, hyp);
            let range = project_span(&ops, top1_span.range()).target;
            let surface = hyp.chars().skip(range.start).take(range.len()).collect();
            AlignedSpan { range, surface }
        })
        .collect()
}

/// Beam-weighted phonetic distance between a candidate and the aligned
/// spans. An empty aligned span is at distance 1 from any non-empty
/// candidate.
pub fn rejection_score(
    candidate_surface: &str,
    aligned: &[AlignedSpan],
    weights: &[f64],
    lex: &PronunciationLexicon,
) -> f64 {
    let cand = phoneticize(candidate_surface, lex);
    aligned
        .iter()
        .zip(weights)
        .map(|(a, w)| w * normalized_distance(&phoneticize(&a.surface, lex), &cand))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Accept,
    Reject,
}

/// Rejects only when the candidate is strictly farther from the n-best
/// evidence than the original span.
pub fn decide(reject_candidate: f64, reject_original: f64) -> Decision {
    if reject_candidate > reject_original {
        Decision::Reject
    } else {
        Decision::Accept
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionResult {
    pub span: CorruptedSpan,
    pub candidates: CandidateSet,
    pub chosen: Option<EntityId>,
    pub rejected: bool,
    pub reject_score_candidate: f64,
    pub reject_score_original: f64,
    /// Text occupying the span after the decision.
    pub corrected_text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceCorrection {
    pub utt_id: String,
    pub hypothesis: String,
    pub corrected: String,
    pub results: Vec<CorrectionResult>,
}

impl UtteranceCorrection {
    pub fn to_output(&self, catalog: &EntityCatalog) -> CorrectionOutput {
        CorrectionOutput {
            utt_id: self.utt_id.clone(),
            hypothesis: self.hypothesis.clone(),
            corrected: self.corrected.clone(),
            corrections: self
                .results
                .iter()
                .map(|r| CorrectionEntry {
                    start: r.span.start,
                    end: r.span.end,
                    original: r.span.surface.clone(),
                    chosen: r
                        .chosen
                        .and_then(|id| catalog.get(id))
                        .map(|e| e.surface.clone()),
                    accepted: !r.rejected,
                    reject_candidate: r.reject_score_candidate,
                    reject_original: r.reject_score_original,
                })
                .collect(),
        }
    }
}

/// Spans on the top-1 hypothesis for the configured detector.
pub fn detect_spans(
    rec: &NBestRecord,
    catalog: &EntityCatalog,
    detector: &DetectorKind,
) -> Result<Vec<CorruptedSpan>> {
    let top1 = rec.top1();
    match detector {
        DetectorKind::External => {
            spans_from_offsets(top1, rec.ced_spans.as_deref().unwrap_or_default())
        }
        DetectorKind::Baseline(cfg) => Ok(detect_baseline(top1, catalog, cfg)),
        DetectorKind::Gold => {
            let (Some(reference), Some(ne)) = (rec.reference.as_deref(), rec.ne_spans.as_deref())
            else {
                return Err(NecError::Invalid(format!(
                    "utterance {:?}: gold detection needs ref and ne_spans",
                    rec.utt_id
                )));
            };
            let tags = label_bio_by_alignment(top1, reference, ne, LabelMode::Lenient)?;
            Ok(bio_decode(&tags, top1)?.spans)
        }
    }
}

/// Replaces the given spans (sorted, disjoint) in `text`.
pub fn splice(text: &str, replacements: &[(Range<usize>, String)]) -> String {
    let mut chars: Vec<char> = text.chars().collect();
    let mut shift: isize = 0;
    for (range, new) in replacements {
        let start = (range.start as isize + shift) as usize;
        let end = (range.end as isize + shift) as usize;
        let new_chars: Vec<char> = new.chars().collect();
        shift += new_chars.len() as isize - range.len() as isize;
        chars.splice(start..end, new_chars);
    }
    chars.into_iter().collect()
}

/// Runs the full pipeline on one utterance. With an empty catalog the
/// top-1 hypothesis is returned untouched.
pub fn correct_utterance(
    rec: &NBestRecord,
    catalog: &EntityCatalog,
    semantic: Option<SemanticModel<'_>>,
    config: &CorrectorConfig,
) -> Result<UtteranceCorrection> {
    config.validate()?;
    let nbest = NBestList::from_record(rec)?.truncated(config.nbest_size);
    let top1 = nbest.top1().to_string();
    let mut out = UtteranceCorrection {
        utt_id: rec.utt_id.clone(),
        hypothesis: top1.clone(),
        corrected: top1.clone(),
        results: Vec::new(),
    };
    if catalog.is_empty() {
        return Ok(out);
    }
    let spans = detect_spans(rec, catalog, &config.detector)?;
    let weights = nbest.weights(config.beam_weighting);
    let lex = catalog.lexicon();
    let mut replacements = Vec::new();

    for (index, span) in spans.into_iter().enumerate() {
        let mut candidates = phonetic_retrieve(&span.surface, catalog, config.top_k)?;
        let sem = match semantic {
            Some(model) => {
                let ctx = model
                    .encoder
                    .encode(&top1, &span, (rec.utt_id.clone(), index))?;
                if ctx.dim() != model.memory.dim() {
                    return Err(NecError::Dimension {
                        expected: model.memory.dim(),
                        got: ctx.dim(),
                    });
                }
                semantic_scores(&ctx, &candidates, Some(model.memory))?
            }
            None => semantic_scores(&EmbeddingVector::default(), &candidates, None)?,
        };
        for (c, s) in candidates.0.iter_mut().zip(sem) {
            c.semantic_score = s;
        }
        fuse_scores(&mut candidates, config.alpha);
        let best = candidates.best().expect("catalog is non-empty").clone();

        let aligned = align_spans_across_nbest(&span, &nbest);
        let reject_candidate = rejection_score(&best.surface, &aligned, &weights, lex);
        let reject_original = rejection_score(&span.surface, &aligned, &weights, lex);
        let rejected =
            config.rejection && decide(reject_candidate, reject_original) == Decision::Reject;
        let corrected_text = if rejected {
            span.surface.clone()
        } else {
            best.surface.clone()
        };
        if !rejected {
            replacements.push((span.range(), best.surface.clone()));
        }
        out.results.push(CorrectionResult {
            span,
            candidates,
            chosen: Some(best.id),
            rejected,
            reject_score_candidate: reject_candidate,
            reject_score_original: reject_original,
            corrected_text,
        });
    }
    out.corrected = splice(&top1, &replacements);
    Ok(out)
}

/// Corrects a batch in parallel on the current rayon pool. Output order
/// follows input order.
pub fn correct_batch(
    records: &[NBestRecord],
    catalog: &EntityCatalog,
    semantic: Option<SemanticModel<'_>>,
    config: &CorrectorConfig,
) -> Result<Vec<UtteranceCorrection>> {
    use rayon::prelude::*;
    config.validate()?;
    records
        .par_iter()
        .map(|r| correct_utterance(r, catalog, semantic, config))
        .collect()
}

/// Phonetic-only correction: detection, most similar entity by syllable
/// edit distance, and the n-best rejection gate. No candidate list, no
/// probabilities and no semantic channel.
pub mod phonetic_only {
    use super::*;

    pub fn correct(
        rec: &NBestRecord,
        catalog: &EntityCatalog,
        config: &CorrectorConfig,
    ) -> Result<CorrectionOutput> {
        let nbest = NBestList::from_record(rec)?.truncated(config.nbest_size);
        let top1 = nbest.top1().to_string();
        let mut entries = Vec::new();
        let mut replacements = Vec::new();
        if !catalog.is_empty() {
            let weights = nbest.weights(config.beam_weighting);
            let lex = catalog.lexicon();
            for span in detect_spans(rec, catalog, &config.detector)? {
                let query = phoneticize(&span.surface, lex);
                let mut best: Option<(f64, &crate::entity_store::Entity)> = None;
                for e in catalog.entities() {
                    let s = similarity(&e.phonetic, &query);
                    if best.is_none_or(|(bs, _)| s > bs) {
                        best = Some((s, e));
                    }
                }
                let (_, entity) = best.expect("catalog is non-empty");
                let aligned = align_spans_across_nbest(&span, &nbest);
                let reject_candidate = rejection_score(&entity.surface, &aligned, &weights, lex);
                let reject_original = rejection_score(&span.surface, &aligned, &weights, lex);
                let accepted = !config.rejection || reject_candidate <= reject_original;
                if accepted {
                    replacements.push((span.range(), entity.surface.clone()));
                }
                entries.push(CorrectionEntry {
                    start: span.start,
                    end: span.end,
                    original: span.surface.clone(),
                    chosen: Some(entity.surface.clone()),
                    accepted,
                    reject_candidate,
                    reject_original,
                });
            }
        }
        Ok(CorrectionOutput {
            utt_id: rec.utt_id.clone(),
            hypothesis: top1.clone(),
            corrected: splice(&top1, &replacements),
            corrections: entries,
        })
    }
}
