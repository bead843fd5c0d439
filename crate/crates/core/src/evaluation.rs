//! Error rates, entity recall and the analysis harnesses.
//!
//! Every metric for a hypothesis/reference pair is read off one alignment
//! (see [`crate::align`]). Substitutions and deletions belong to the scope
//! of their reference character; an insertion belongs to the scope of the
//! reference character it precedes, or to the non-entity scope at the end
//! of the string.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub use crate::align::align_chars as char_align;
use crate::align::{align_chars, project_span, EditOp};
use crate::corrector::{correct_batch, ContextEncoder, CorrectorConfig, SemanticModel};
use crate::entity_store::{homophone_pairs, EntityCatalog, EntityId};
use crate::error::{NecError, Result};
use crate::records::NBestRecord;
use crate::semantic::EmbeddingMemory;

/// A reference with gold entity spans and the hypothesis being scored.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredUtterance {
    pub utt_id: String,
    pub reference: String,
    pub ne_spans: Vec<(usize, usize)>,
    pub hypothesis: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    Inside,
    Outside,
}

/// Integer tallies behind every metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct EditTally {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub inside_edits: usize,
    pub outside_edits: usize,
    pub ref_chars: usize,
    pub inside_chars: usize,
    pub outside_chars: usize,
    pub entities: usize,
    pub entities_recalled: usize,
}

impl EditTally {
    pub fn edits(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    pub fn merge(&mut self, o: &EditTally) {
        self.substitutions += o.substitutions;
        self.deletions += o.deletions;
        self.insertions += o.insertions;
        self.inside_edits += o.inside_edits;
        self.outside_edits += o.outside_edits;
        self.ref_chars += o.ref_chars;
        self.inside_chars += o.inside_chars;
        self.outside_chars += o.outside_chars;
        self.entities += o.entities;
        self.entities_recalled += o.entities_recalled;
    }

    pub fn report(&self) -> MetricReport {
        MetricReport {
            cer: rate(self.edits(), self.ref_chars),
            nne_cer: rate(self.outside_edits, self.outside_chars),
            ne_cer: rate(self.inside_edits, self.inside_chars),
            ne_recall: if self.entities == 0 {
                1.0
            } else {
                self.entities_recalled as f64 / self.entities as f64
            },
            tally: *self,
        }
    }
}

/// Error count over reference length. With nothing in scope the edit count
/// itself is returned (0 when there are no edits).
pub fn rate(edits: usize, denominator: usize) -> f64 {
    edits as f64 / denominator.max(1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricReport {
    pub cer: f64,
    pub nne_cer: f64,
    pub ne_cer: f64,
    pub ne_recall: f64,
    #[serde(flatten)]
    pub tally: EditTally,
}

fn inside_mask(len: usize, spans: &[(usize, usize)]) -> Result<Vec<bool>> {
    let mut mask = vec![false; len];
    for &(s, e) in spans {
        if s >= e || e > len {
            return Err(NecError::InvalidSpan {
                start: s,
                end: e,
                len,
                reason: "entity span out of range".into(),
            });
        }
        if mask[s..e].iter().any(|m| *m) {
            return Err(NecError::InvalidSpan {
                start: s,
                end: e,
                len,
                reason: "overlapping entity spans".into(),
            });
        }
        mask[s..e].iter_mut().for_each(|m| *m = true);
    }
    Ok(mask)
}

/// Tallies for one pair, plus which entities were recalled (span order).
pub fn tally(
    hyp: &str,
    reference: &str,
    ne_spans: &[(usize, usize)],
) -> Result<(EditTally, Vec<bool>)> {
    let ref_len = reference.chars().count();
    let mask = inside_mask(ref_len, ne_spans)?;
    let ops = align_chars(reference, hyp);
    let mut t = EditTally {
        ref_chars: ref_len,
        inside_chars: mask.iter().filter(|m| **m).count(),
        ..Default::default()
    };
    t.outside_chars = ref_len - t.inside_chars;
    let in_scope = |pos: usize| pos < ref_len && mask[pos];
    for op in &ops {
        let pos = match *op {
            EditOp::Match { .. } => continue,
            EditOp::Substitute { src, .. } => {
                t.substitutions += 1;
                src
            }
            EditOp::Delete { src } => {
                t.deletions += 1;
                src
            }
            EditOp::Insert { before, .. } => {
                t.insertions += 1;
                before
            }
        };
        if in_scope(pos) {
            t.inside_edits += 1;
        } else {
            t.outside_edits += 1;
        }
    }
    let mut sorted = ne_spans.to_vec();
    sorted.sort_unstable();
    let recalled: Vec<bool> = sorted
        .iter()
        .map(|&(s, e)| !project_span(&ops, s..e).edited)
        .collect();
    t.entities = recalled.len();
    t.entities_recalled = recalled.iter().filter(|r| **r).count();
    Ok((t, recalled))
}

pub fn cer(hyp: &str, reference: &str) -> f64 {
    let (t, _) = tally(hyp, reference, &[]).expect("no spans to validate");
    rate(t.edits(), t.ref_chars)
}

pub fn span_scoped_cer(
    hyp: &str,
    reference: &str,
    ne_spans: &[(usize, usize)],
    scope: Scope,
) -> Result<f64> {
    let (t, _) = tally(hyp, reference, ne_spans)?;
    Ok(match scope {
        Scope::Inside => rate(t.inside_edits, t.inside_chars),
        Scope::Outside => rate(t.outside_edits, t.outside_chars),
    })
}

/// Fraction of reference entities reproduced exactly at their aligned
/// position. An utterance without entities scores 1.
pub fn ne_recall(hyp: &str, reference: &str, ne_spans: &[(usize, usize)]) -> Result<f64> {
    let (t, _) = tally(hyp, reference, ne_spans)?;
    Ok(t.report().ne_recall)
}

/// Corpus-level report from per-utterance tallies.
pub fn evaluate(corpus: &[ScoredUtterance]) -> Result<MetricReport> {
    let mut total = EditTally::default();
    for u in corpus {
        let (t, _) = tally(&u.hypothesis, &u.reference, &u.ne_spans)?;
        total.merge(&t);
    }
    Ok(total.report())
}

/// Pairs each record's reference with a hypothesis (`None` keeps the
/// top-1). Records without a reference are skipped.
pub fn scored_utterances(
    records: &[NBestRecord],
    hypotheses: Option<&BTreeMap<String, String>>,
) -> Result<Vec<ScoredUtterance>> {
    let mut out = Vec::new();
    for r in records {
        let Some(reference) = &r.reference else {
            continue;
        };
        let hypothesis = match hypotheses {
            Some(map) => map.get(&r.utt_id).cloned().ok_or_else(|| {
                NecError::NotFound(format!("hypothesis for utterance {:?}", r.utt_id))
            })?,
            None => r.top1().to_string(),
        };
        out.push(ScoredUtterance {
            utt_id: r.utt_id.clone(),
            reference: reference.clone(),
            ne_spans: r.ne_spans.clone().unwrap_or_default(),
            hypothesis,
        });
    }
    Ok(out)
}

fn gold_surfaces(u: &ScoredUtterance) -> impl Iterator<Item = String> + '_ {
    let chars: Vec<char> = u.reference.chars().collect();
    u.ne_spans
        .iter()
        .filter(|&&(s, e)| s < e)
        .filter_map(move |&(s, e)| chars.get(s..e).map(|c| c.iter().collect()))
}

/// Utterances whose gold entities include a member of any homophone pair
/// in the catalog, in corpus order.
pub fn build_homophone_set<'a>(
    corpus: &'a [ScoredUtterance],
    catalog: &EntityCatalog,
) -> Vec<&'a ScoredUtterance> {
    let confusable: BTreeSet<EntityId> = homophone_pairs(catalog)
        .into_iter()
        .flat_map(|(a, b)| [a, b])
        .collect();
    corpus
        .iter()
        .filter(|u| {
            gold_surfaces(u).any(|s| catalog.id_of(&s).is_some_and(|id| confusable.contains(&id)))
        })
        .collect()
}

/// Recall per cumulative training-count bucket.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FewShotBucket {
    pub max_shots: usize,
    pub total: usize,
    pub recalled: usize,
    pub recall: f64,
}

/// Buckets gold entity occurrences by their training count. Bucket `t`
/// holds every occurrence seen at most `t` times in training, so buckets
/// nest. Occurrences of surfaces missing from the catalog are skipped.
pub fn fewshot_report(
    outcomes: &[(String, bool)],
    counts: &BTreeMap<EntityId, usize>,
    catalog: &EntityCatalog,
    thresholds: &[usize],
) -> Vec<FewShotBucket> {
    let mut thresholds = thresholds.to_vec();
    thresholds.sort_unstable();
    thresholds
        .iter()
        .map(|&t| {
            let (mut total, mut recalled) = (0, 0);
            for (surface, ok) in outcomes {
                let Some(id) = catalog.id_of(surface) else {
                    continue;
                };
                if counts.get(&id).copied().unwrap_or(0) <= t {
                    total += 1;
                    recalled += usize::from(*ok);
                }
            }
            FewShotBucket {
                max_shots: t,
                total,
                recalled,
                recall: if total == 0 {
                    0.0
                } else {
                    recalled as f64 / total as f64
                },
            }
        })
        .collect()
}

/// `(surface, recalled)` for every gold entity occurrence in the corpus.
pub fn entity_outcomes(corpus: &[ScoredUtterance]) -> Result<Vec<(String, bool)>> {
    let mut out = Vec::new();
    for u in corpus {
        let (_, recalled) = tally(&u.hypothesis, &u.reference, &u.ne_spans)?;
        let mut spans = u.ne_spans.clone();
        spans.sort_unstable();
        let chars: Vec<char> = u.reference.chars().collect();
        for (&(s, e), ok) in spans.iter().zip(recalled) {
            out.push((chars[s..e].iter().collect(), ok));
        }
    }
    Ok(out)
}

/// Runs the corrector over `records` and scores the corrected text.
pub fn correct_and_evaluate(
    records: &[NBestRecord],
    catalog: &EntityCatalog,
    semantic: Option<SemanticModel<'_>>,
    config: &CorrectorConfig,
) -> Result<(MetricReport, Vec<ScoredUtterance>)> {
    let corrected = correct_batch(records, catalog, semantic, config)?;
    let hyps: BTreeMap<String, String> = corrected
        .into_iter()
        .map(|c| (c.utt_id, c.corrected))
        .collect();
    let scored = scored_utterances(records, Some(&hyps))?;
    Ok((evaluate(&scored)?, scored))
}

/// A named corrector setting compared in the harnesses.
#[derive(Debug, Clone)]
pub struct Method {
    pub label: String,
    pub config: CorrectorConfig,
    /// Whether the semantic channel is wired in.
    pub semantic: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingPoint {
    pub size: usize,
    pub method: String,
    pub ne_recall: f64,
}

/// Catalogs of increasing size built from `pool`. Entities that occur as
/// gold spans in the corpus are always kept; the rest of each catalog is a
/// prefix of a seeded shuffle of the remaining pool, so larger catalogs
/// contain smaller ones. Pool order fixes entity ids.
pub fn scaled_catalogs(
    corpus: &[NBestRecord],
    pool: &EntityCatalog,
    sizes: &[usize],
    seed: u64,
) -> Result<Vec<EntityCatalog>> {
    let scored = scored_utterances(corpus, None)?;
    let gold: BTreeSet<EntityId> = scored
        .iter()
        .flat_map(gold_surfaces)
        .filter_map(|s| pool.id_of(&s))
        .collect();
    let mut padding: Vec<EntityId> = pool
        .entities()
        .iter()
        .map(|e| e.id)
        .filter(|id| !gold.contains(id))
        .collect();
    padding.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(sizes
        .iter()
        .map(|&size| {
            let extra = size.saturating_sub(gold.len()).min(padding.len());
            let keep: BTreeSet<EntityId> = gold
                .iter()
                .copied()
                .chain(padding[..extra].iter().copied())
                .collect();
            pool.subset(|e| keep.contains(&e.id))
        })
        .collect())
}

/// NE-Recall of each method on catalogs of each size.
pub fn scaling_curve(
    corpus: &[NBestRecord],
    pool: &EntityCatalog,
    pool_memory: Option<&EmbeddingMemory>,
    encoder: &ContextEncoder,
    sizes: &[usize],
    methods: &[Method],
    seed: u64,
) -> Result<Vec<ScalingPoint>> {
    let mut out = Vec::new();
    for catalog in scaled_catalogs(corpus, pool, sizes, seed)? {
        let memory = pool_memory.map(|m| m.bind(&catalog).0);
        for method in methods {
            let semantic = match (&memory, method.semantic) {
                (Some(m), true) => Some(SemanticModel { memory: m, encoder }),
                _ => None,
            };
            let (report, _) = correct_and_evaluate(corpus, &catalog, semantic, &method.config)?;
            out.push(ScalingPoint {
                size: catalog.len(),
                method: method.label.clone(),
                ne_recall: report.ne_recall,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub k: usize,
    pub cer: f64,
}

/// Corpus CER for every `(alpha, k)` pair, alpha-major.
pub fn sweep(
    corpus: &[NBestRecord],
    catalog: &EntityCatalog,
    semantic: Option<SemanticModel<'_>>,
    base: &CorrectorConfig,
    alphas: &[f64],
    ks: &[usize],
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(alphas.len() * ks.len());
    for &alpha in alphas {
        for &k in ks {
            let cfg = CorrectorConfig {
                alpha,
                top_k: k,
                ..base.clone()
            };
            let (report, _) = correct_and_evaluate(corpus, catalog, semantic, &cfg)?;
            rows.push(SweepRow {
                alpha,
                k,
                cer: report.cer,
            });
        }
    }
    Ok(rows)
}

pub fn write_sweep_csv<W: Write>(mut out: W, rows: &[SweepRow]) -> Result<()> {
    writeln!(out, "alpha,k,cer")?;
    for r in rows {
        writeln!(out, "{},{},{}", r.alpha, r.k, r.cer)?;
    }
    Ok(())
}

pub fn write_scaling_csv<W: Write>(mut out: W, points: &[ScalingPoint]) -> Result<()> {
    writeln!(out, "size,method,ne_recall")?;
    for p in points {
        writeln!(out, "{},{},{}", p.size, p.method, p.ne_recall)?;
    }
    Ok(())
}

pub fn write_report_csv<W: Write>(mut out: W, rows: &[(String, MetricReport)]) -> Result<()> {
    writeln!(
        out,
        "system,cer,nne_cer,ne_cer,ne_recall,substitutions,deletions,insertions,ref_chars,entities,entities_recalled"
    )?;
    for (name, r) in rows {
        let t = &r.tally;
        writeln!(
            out,
            "{name},{},{},{},{},{},{},{},{},{},{}",
            r.cer,
            r.nne_cer,
            r.ne_cer,
            r.ne_recall,
            t.substitutions,
            t.deletions,
            t.insertions,
            t.ref_chars,
            t.entities,
            t.entities_recalled
        )?;
    }
    Ok(())
}

pub fn write_fewshot_csv<W: Write>(
    mut out: W,
    rows: &[(String, Vec<FewShotBucket>)],
) -> Result<()> {
    writeln!(out, "system,max_shots,total,recalled,recall")?;
    for (name, buckets) in rows {
        for b in buckets {
            writeln!(
                out,
                "{name},{},{},{},{}",
                b.max_shots, b.total, b.recalled, b.recall
            )?;
        }
    }
    Ok(())
}
