//! Description-augmented semantic scoring.
//!
//! Text transforms that build the masked context and entity inputs, the
//! span encoder, the candidate softmax, the in-batch contrastive loss, the
//! entity embedding memory with exact inner-product search, and a hashed
//! n-gram embedder that stands in for trained encoders.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use crate::detection::CorruptedSpan;
use crate::entity_store::{EntityCatalog, EntityId};
use crate::error::{NecError, Result};

pub const MASK: &str = "[MASK]";
pub const ENTITY_START: &str = "[ES]";
pub const ENTITY_END: &str = "[EE]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";

/// A character or one of the reserved control tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Token {
    Char(char),
    Mask,
    EntityStart,
    EntityEnd,
    Cls,
    Sep,
}

impl Token {
    pub fn is_special(&self) -> bool {
        !matches!(self, Token::Char(_))
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Char(c) => write!(f, "{c}"),
            Token::Mask => f.write_str(MASK),
            Token::EntityStart => f.write_str(ENTITY_START),
            Token::EntityEnd => f.write_str(ENTITY_END),
            Token::Cls => f.write_str(CLS),
            Token::Sep => f.write_str(SEP),
        }
    }
}

pub fn render(tokens: &[Token]) -> String {
    tokens.iter().map(ToString::to_string).collect()
}

/// A hypothesis with one span replaced by mask tokens, optionally wrapped
/// in entity markers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedContext {
    pub tokens: Vec<Token>,
    pub span_len: usize,
    pub origin: (String, usize),
}

impl MaskedContext {
    pub fn has_markers(&self) -> bool {
        self.tokens.contains(&Token::EntityStart) || self.tokens.contains(&Token::EntityEnd)
    }
}

impl fmt::Display for MaskedContext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render(&self.tokens))
    }
}

pub fn mask_span(
    hypothesis: &str,
    span: &CorruptedSpan,
    origin: (String, usize),
) -> Result<MaskedContext> {
    let chars: Vec<char> = hypothesis.chars().collect();
    if span.start >= span.end || span.end > chars.len() {
        return Err(NecError::InvalidSpan {
            start: span.start,
            end: span.end,
            len: chars.len(),
            reason: "cannot mask an empty or out-of-range span".into(),
        });
    }
    let mut tokens = Vec::with_capacity(chars.len());
    tokens.extend(chars[..span.start].iter().map(|&c| Token::Char(c)));
    tokens.extend(std::iter::repeat_n(Token::Mask, span.len()));
    tokens.extend(chars[span.end..].iter().map(|&c| Token::Char(c)));
    Ok(MaskedContext {
        tokens,
        span_len: span.len(),
        origin,
    })
}

/// Wraps the mask run in `[ES]` / `[EE]`.
pub fn insert_markers(masked: MaskedContext) -> Result<MaskedContext> {
    if masked.has_markers() {
        return Err(NecError::Invalid(
            "context already carries entity markers".into(),
        ));
    }
    let first = masked.tokens.iter().position(|t| *t == Token::Mask);
    let last = masked.tokens.iter().rposition(|t| *t == Token::Mask);
    let (first, last) = match (first, last) {
        (Some(f), Some(l)) if l + 1 - f == masked.span_len => (f, l),
        _ => {
            return Err(NecError::Invalid(
                "mask run does not match span length".into(),
            ))
        }
    };
    let mut tokens = Vec::with_capacity(masked.tokens.len() + 2);
    tokens.extend_from_slice(&masked.tokens[..first]);
    tokens.push(Token::EntityStart);
    tokens.extend_from_slice(&masked.tokens[first..=last]);
    tokens.push(Token::EntityEnd);
    tokens.extend_from_slice(&masked.tokens[last + 1..]);
    Ok(MaskedContext { tokens, ..masked })
}

/// `[CLS] surface [SEP] description [SEP]`. Literal control-token text in
/// the description is dropped.
pub fn entity_input(surface: &str, description: &str) -> Vec<Token> {
    let description = description.replace(SEP, "").replace(CLS, "");
    let mut tokens = Vec::with_capacity(surface.len() + description.len() + 3);
    tokens.push(Token::Cls);
    tokens.extend(surface.chars().map(Token::Char));
    tokens.push(Token::Sep);
    tokens.extend(description.chars().map(Token::Char));
    tokens.push(Token::Sep);
    tokens
}

/// Dense embedding in double precision.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(NecError::Invalid(
                "embedding has non-finite components".into(),
            ));
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dot(&self, other: &EmbeddingVector) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(NecError::Dimension {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        Ok(dot(&self.0, &other.0))
    }

    pub fn norm(&self) -> f64 {
        dot(&self.0, &self.0).sqrt()
    }

    /// Scales to unit length; the zero vector is returned unchanged.
    pub fn normalized(&self) -> Self {
        let n = self.norm();
        if n == 0.0 {
            self.clone()
        } else {
            Self(self.0.iter().map(|v| v / n).collect())
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Linear map from the concatenated marker states `[h_s; h_e]` (length
/// `2d`) to `d` dimensions. Stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanEncoderWeights {
    dim: usize,
    weights: Vec<f64>,
}

impl SpanEncoderWeights {
    pub fn new(dim: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != dim * 2 * dim {
            return Err(NecError::Dimension {
                expected: dim * 2 * dim,
                got: weights.len(),
            });
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(NecError::Invalid(
                "span encoder weights must be finite".into(),
            ));
        }
        Ok(Self { dim, weights })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.weights[r * 2 * self.dim..(r + 1) * 2 * self.dim]
    }
}

pub fn span_encode(
    start_state: &EmbeddingVector,
    end_state: &EmbeddingVector,
    weights: &SpanEncoderWeights,
) -> Result<EmbeddingVector> {
    let d = weights.dim();
    for v in [start_state, end_state] {
        if v.dim() != d {
            return Err(NecError::Dimension {
                expected: d,
                got: v.dim(),
            });
        }
    }
    let out = (0..d)
        .map(|r| {
            let row = weights.row(r);
            dot(&row[..d], start_state.values()) + dot(&row[d..], end_state.values())
        })
        .collect();
    Ok(EmbeddingVector(out))
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
}

/// Softmax of context-entity dot products over the candidate subset.
pub fn semantic_distribution(
    context: &EmbeddingVector,
    candidates: &[(EntityId, &EmbeddingVector)],
) -> Result<Vec<(EntityId, f64)>> {
    if candidates.is_empty() {
        return Err(NecError::EmptyCandidates);
    }
    let logits = candidates
        .iter()
        .map(|(_, v)| context.dot(v))
        .collect::<Result<Vec<_>>>()?;
    Ok(candidates
        .iter()
        .map(|(id, _)| *id)
        .zip(softmax(&logits))
        .collect())
}

fn check_batches(contexts: &[EmbeddingVector], entities: &[EmbeddingVector]) -> Result<usize> {
    if contexts.is_empty() {
        return Err(NecError::Invalid("empty batch".into()));
    }
    if contexts.len() != entities.len() {
        return Err(NecError::Dimension {
            expected: contexts.len(),
            got: entities.len(),
        });
    }
    let d = contexts[0].dim();
    for v in contexts.iter().chain(entities) {
        if v.dim() != d {
            return Err(NecError::Dimension {
                expected: d,
                got: v.dim(),
            });
        }
    }
    Ok(d)
}

/// In-batch contrastive loss: row `i` of `contexts` is paired with row `i`
/// of `entities`, every other row serves as a negative.
pub fn infonce_loss(contexts: &[EmbeddingVector], entities: &[EmbeddingVector]) -> Result<f64> {
    check_batches(contexts, entities)?;
    let b = contexts.len();
    let mut total = 0.0;
    for (i, ctx) in contexts.iter().enumerate() {
        let logits: Vec<f64> = entities
            .iter()
            .map(|e| dot(ctx.values(), e.values()))
            .collect();
        total += log_sum_exp(&logits) - logits[i];
    }
    Ok(total / b as f64)
}

#[derive(Debug, Clone)]
pub struct InfoNceGradient {
    pub loss: f64,
    pub contexts: Vec<Vec<f64>>,
    pub entities: Vec<Vec<f64>>,
}

/// Loss and its analytic gradient with respect to both batches.
pub fn infonce_loss_with_grad(
    contexts: &[EmbeddingVector],
    entities: &[EmbeddingVector],
) -> Result<InfoNceGradient> {
    let d = check_batches(contexts, entities)?;
    let b = contexts.len();
    let scale = 1.0 / b as f64;
    let mut grad_ctx = vec![vec![0.0; d]; b];
    let mut grad_ent = vec![vec![0.0; d]; b];
    let mut total = 0.0;
    for (i, ctx) in contexts.iter().enumerate() {
        let logits: Vec<f64> = entities
            .iter()
            .map(|e| dot(ctx.values(), e.values()))
            .collect();
        total += log_sum_exp(&logits) - logits[i];
        let probs = softmax(&logits);
        for (j, ent) in entities.iter().enumerate() {
            // d loss_i / d logit_ij = p_ij - [i == j]
            let coeff = scale * (probs[j] - f64::from(u8::from(i == j)));
            for k in 0..d {
                grad_ctx[i][k] += coeff * ent.values()[k];
                grad_ent[j][k] += coeff * ctx.values()[k];
            }
        }
    }
    Ok(InfoNceGradient {
        loss: total * scale,
        contexts: grad_ctx,
        entities: grad_ent,
    })
}

const MEMORY_MAGIC: &[u8; 4] = b"EDAM";
const MEMORY_VERSION: u32 = 1;

/// Immutable table of entity-description embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMemory {
    dim: usize,
    ids: Vec<EntityId>,
    surfaces: Vec<String>,
    data: Vec<f32>,
    row_of: HashMap<EntityId, usize>,
}

/// One row handed to [`build_memory`].
#[derive(Debug, Clone)]
pub struct MemoryRow {
    pub id: EntityId,
    pub surface: String,
    pub vector: Vec<f32>,
}

pub fn build_memory(dim: usize, rows: Vec<MemoryRow>) -> Result<EmbeddingMemory> {
    let mut memory = EmbeddingMemory {
        dim,
        ids: Vec::with_capacity(rows.len()),
        surfaces: Vec::with_capacity(rows.len()),
        data: Vec::with_capacity(rows.len() * dim),
        row_of: HashMap::with_capacity(rows.len()),
    };
    for row in rows {
        if row.vector.len() != dim {
            return Err(NecError::Invalid(format!(
                "memory row {:?}: expected {dim} components, got {}",
                row.surface,
                row.vector.len()
            )));
        }
        if row.vector.iter().any(|v| !v.is_finite()) {
            return Err(NecError::Invalid(format!(
                "memory row {:?} is not finite",
                row.surface
            )));
        }
        if row.surface.len() > u16::MAX as usize {
            return Err(NecError::Invalid(format!(
                "surface too long: {:?}",
                row.surface
            )));
        }
        if memory.row_of.insert(row.id, memory.ids.len()).is_some() {
            return Err(NecError::Invalid(format!("duplicate entity id {}", row.id)));
        }
        memory.ids.push(row.id);
        memory.surfaces.push(row.surface);
        memory.data.extend_from_slice(&row.vector);
    }
    Ok(memory)
}

impl EmbeddingMemory {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[EntityId] {
        &self.ids
    }

    pub fn surfaces(&self) -> &[String] {
        &self.surfaces
    }

    pub fn row(&self, index: usize) -> &[f32] {
        &self.data[index * self.dim..(index + 1) * self.dim]
    }

    /// Row for an entity id, widened to f64.
    pub fn vector(&self, id: EntityId) -> Option<EmbeddingVector> {
        self.row_of
            .get(&id)
            .map(|&r| EmbeddingVector(self.row(r).iter().map(|&v| f64::from(v)).collect()))
    }

    /// Re-keys rows by surface against `catalog`. Rows whose surface is not
    /// in the catalog are dropped; their surfaces are returned.
    pub fn bind(&self, catalog: &EntityCatalog) -> (EmbeddingMemory, Vec<String>) {
        let mut rows = Vec::with_capacity(self.len());
        let mut unknown = Vec::new();
        for (r, surface) in self.surfaces.iter().enumerate() {
            match catalog.id_of(surface) {
                Some(id) => rows.push(MemoryRow {
                    id,
                    surface: surface.clone(),
                    vector: self.row(r).to_vec(),
                }),
                None => unknown.push(surface.clone()),
            }
        }
        let bound = build_memory(self.dim, rows).expect("rows were valid in the source memory");
        (bound, unknown)
    }

    /// Copy with every row scaled to unit length (zero rows unchanged).
    pub fn normalized(&self) -> EmbeddingMemory {
        let mut out = self.clone();
        for chunk in out.data.chunks_mut(self.dim.max(1)) {
            let n = chunk
                .iter()
                .map(|&v| f64::from(v) * f64::from(v))
                .sum::<f64>()
                .sqrt();
            if n > 0.0 {
                chunk
                    .iter_mut()
                    .for_each(|v| *v = (f64::from(*v) / n) as f32);
            }
        }
        out
    }
}

/// Writes the little-endian `EDAM` v1 layout.
pub fn save_memory<W: Write>(memory: &EmbeddingMemory, mut out: W) -> Result<()> {
    out.write_all(MEMORY_MAGIC)?;
    out.write_all(&MEMORY_VERSION.to_le_bytes())?;
    out.write_all(&(memory.len() as u32).to_le_bytes())?;
    out.write_all(&(memory.dim as u32).to_le_bytes())?;
    for r in 0..memory.len() {
        let surface = memory.surfaces[r].as_bytes();
        out.write_all(&(surface.len() as u16).to_le_bytes())?;
        out.write_all(surface)?;
        for v in memory.row(r) {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads an `EDAM` file. Row ids are the row indices until the memory is
/// bound to a catalog.
pub fn load_memory<R: Read>(mut input: R) -> Result<EmbeddingMemory> {
    fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != MEMORY_MAGIC {
        return Err(NecError::Format("bad magic, expected EDAM".into()));
    }
    let version = read_u32(&mut input)?;
    if version != MEMORY_VERSION {
        return Err(NecError::Format(format!("unsupported version {version}")));
    }
    let count = read_u32(&mut input)? as usize;
    let dim = read_u32(&mut input)? as usize;
    let mut rows = Vec::with_capacity(count);
    for r in 0..count {
        let mut len = [0u8; 2];
        input.read_exact(&mut len)?;
        let mut surface = vec![0u8; u16::from_le_bytes(len) as usize];
        input.read_exact(&mut surface)?;
        let surface = String::from_utf8(surface)
            .map_err(|_| NecError::Format(format!("row {r}: surface is not UTF-8")))?;
        let mut raw = vec![0u8; dim * 4];
        input.read_exact(&mut raw)?;
        let vector = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        rows.push(MemoryRow {
            id: r as EntityId,
            surface,
            vector,
        });
    }
    let mut trailing = [0u8; 1];
    if input.read(&mut trailing)? != 0 {
        return Err(NecError::Format("trailing bytes after last row".into()));
    }
    build_memory(dim, rows)
}

/// Exact top-`k` rows by inner product, ties broken by lower entity id.
pub fn topk_inner_product(
    memory: &EmbeddingMemory,
    query: &EmbeddingVector,
    k: usize,
) -> Result<Vec<(EntityId, f64)>> {
    if query.dim() != memory.dim {
        return Err(NecError::Dimension {
            expected: memory.dim,
            got: query.dim(),
        });
    }
    let mut scored: Vec<(EntityId, f64)> = (0..memory.len())
        .map(|r| {
            let s = memory
                .row(r)
                .iter()
                .zip(query.values())
                .map(|(&a, b)| f64::from(a) * b)
                .sum();
            (memory.ids[r], s)
        })
        .collect();
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(Ordering::Equal)
            .then(a.0.cmp(&b.0))
    });
    scored.truncate(k);
    Ok(scored)
}

fn fnv1a(bytes: &[u8], seed: u64) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    // splitmix64 finalizer
    h ^= h >> 30;
    h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h ^= h >> 27;
    h = h.wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

/// Bucket index of every character 1-, 2- and 3-gram. N-grams never span a
/// control token.
pub fn ngram_buckets(tokens: &[Token], dim: usize, seed: u64) -> Vec<usize> {
    let mut out = Vec::new();
    if dim == 0 {
        return out;
    }
    for run in tokens.split(Token::is_special) {
        let chars: Vec<char> = run
            .iter()
            .map(|t| match t {
                Token::Char(c) => *c,
                _ => unreachable!("split removes control tokens"),
            })
            .collect();
        for n in 1..=3 {
            for gram in chars.windows(n) {
                let s: String = gram.iter().collect();
                out.push((fnv1a(s.as_bytes(), seed) % dim as u64) as usize);
            }
        }
    }
    out
}

/// Hashed character n-gram counts folded into `dim` buckets, L2-normalised.
pub fn reference_embed(tokens: &[Token], dim: usize, seed: u64) -> EmbeddingVector {
    let mut v = vec![0.0; dim];
    for b in ngram_buckets(tokens, dim, seed) {
        v[b] += 1.0;
    }
    EmbeddingVector(v).normalized()
}

pub fn reference_embed_text(text: &str, dim: usize, seed: u64) -> EmbeddingVector {
    let tokens: Vec<Token> = text.chars().map(Token::Char).collect();
    reference_embed(&tokens, dim, seed)
}

/// Embeds every described entity of `catalog` with the reference embedder.
pub fn build_reference_memory(
    catalog: &EntityCatalog,
    dim: usize,
    seed: u64,
) -> Result<EmbeddingMemory> {
    let rows = catalog
        .entities()
        .iter()
        .filter_map(|e| {
            catalog.description(e.id).map(|d| {
                let v = reference_embed(&entity_input(&e.surface, d), dim, seed);
                MemoryRow {
                    id: e.id,
                    surface: e.surface.clone(),
                    vector: v.values().iter().map(|&x| x as f32).collect(),
                }
            })
        })
        .collect();
    build_memory(dim, rows)
}

/// Context vector record written by an external encoder.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContextVectorRecord {
    pub utt_id: String,
    pub span_index: usize,
    pub vector: Vec<f32>,
}

pub type ContextVectors = HashMap<(String, usize), EmbeddingVector>;

/// Reads context vectors, checking every record has `dim` components.
pub fn load_context_vectors<R: BufRead>(source: R, dim: usize) -> Result<ContextVectors> {
    let mut out = HashMap::new();
    for (idx, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ContextVectorRecord =
            serde_json::from_str(&line).map_err(|e| NecError::Parse {
                line: idx + 1,
                message: e.to_string(),
            })?;
        if rec.vector.len() != dim {
            return Err(NecError::Parse {
                line: idx + 1,
                message: format!(
                    "context vector for {}#{} has {} components, memory has {dim}",
                    rec.utt_id,
                    rec.span_index,
                    rec.vector.len()
                ),
            });
        }
        let v = EmbeddingVector::new(rec.vector.iter().map(|&x| f64::from(x)).collect())?;
        out.insert((rec.utt_id, rec.span_index), v);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const HYP: &str = "韓國媒體報導稱而在桓確實人在日本";

    fn span() -> CorruptedSpan {
        CorruptedSpan::new(HYP, 7, 10).unwrap()
    }

    fn origin() -> (String, usize) {
        ("u1".into(), 0)
    }

    fn ev(v: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn masking_running_example() {
        let m = mask_span(HYP, &span(), origin()).unwrap();
        assert_eq!(
            m.to_string(),
            "韓國媒體報導稱[MASK][MASK][MASK]確實人在日本"
        );
        let m = insert_markers(m).unwrap();
        assert_eq!(
            m.to_string(),
            "韓國媒體報導稱[ES][MASK][MASK][MASK][EE]確實人在日本"
        );
        assert!(insert_markers(m).is_err());
    }

    #[test]
    fn masking_whole_text() {
        let s = CorruptedSpan::new("abc", 0, 3).unwrap();
        let m = insert_markers(mask_span("abc", &s, origin()).unwrap()).unwrap();
        assert_eq!(m.to_string(), "[ES][MASK][MASK][MASK][EE]");
    }

    #[test]
    fn masking_zero_length_is_error() {
        let s = CorruptedSpan {
            start: 2,
            end: 2,
            surface: String::new(),
        };
        assert!(mask_span("abc", &s, origin()).is_err());
    }

    #[test]
    fn entity_inputs() {
        assert_eq!(
            render(&entity_input("朴泰桓", "韓國男子游泳選手")),
            "[CLS]朴泰桓[SEP]韓國男子游泳選手[SEP]"
        );
        assert_eq!(render(&entity_input("朴泰桓", "")), "[CLS]朴泰桓[SEP][SEP]");
        assert_eq!(render(&entity_input("A", "x[SEP]y")), "[CLS]A[SEP]xy[SEP]");
    }

    #[test]
    fn span_encoder_blocks() {
        let d = 3;
        let mut w = vec![0.0; d * 2 * d];
        for r in 0..d {
            w[r * 2 * d + r] = 1.0;
        }
        let w = SpanEncoderWeights::new(d, w).unwrap();
        let hs = ev(&[1.0, 2.0, 3.0]);
        let he = ev(&[4.0, 5.0, 6.0]);
        assert_eq!(span_encode(&hs, &he, &w).unwrap(), hs);
        let zero = SpanEncoderWeights::new(d, vec![0.0; 18]).unwrap();
        assert_eq!(
            span_encode(&hs, &he, &zero).unwrap(),
            EmbeddingVector::zeros(3)
        );
        assert!(span_encode(&ev(&[1.0]), &he, &w).is_err());
    }

    #[test]
    fn distribution_examples() {
        let ctx = ev(&[1.0, 0.0]);
        let a = ev(&[1.0, 0.0]);
        let b = ev(&[0.0, 1.0]);
        let p = semantic_distribution(&ctx, &[(0, &a), (1, &b)]).unwrap();
        let e = std::f64::consts::E;
        assert!((p[0].1 - e / (e + 1.0)).abs() < 1e-12);
        assert!((p[0].1 - 0.7311).abs() < 1e-4);
        assert!((p[1].1 - 0.2689).abs() < 1e-4);
        let p = semantic_distribution(&ctx, &[(3, &b), (4, &b), (5, &b)]).unwrap();
        assert!(p.iter().all(|(_, q)| (q - 1.0 / 3.0).abs() < 1e-15));
        let p = semantic_distribution(&ctx, &[(7, &a)]).unwrap();
        assert_eq!(p, vec![(7, 1.0)]);
        assert!(matches!(
            semantic_distribution(&ctx, &[]),
            Err(NecError::EmptyCandidates)
        ));
    }

    #[test]
    fn infonce_examples() {
        let zero = vec![EmbeddingVector::zeros(2); 2];
        assert!((infonce_loss(&zero, &zero).unwrap() - 2f64.ln()).abs() < 1e-9);

        // unit basis vectors scaled so diagonal dots are 2, off-diagonal 0
        let s = 2f64.sqrt();
        let basis: Vec<EmbeddingVector> = (0..3)
            .map(|i| {
                let mut v = vec![0.0; 3];
                v[i] = s;
                ev(&v)
            })
            .collect();
        let expected = (1.0 + 2.0 * (-2f64).exp()).ln();
        assert!((infonce_loss(&basis, &basis).unwrap() - expected).abs() < 1e-6);
        assert!((expected - 0.2395448).abs() < 1e-6);

        let s = 50f64.sqrt();
        let sep: Vec<EmbeddingVector> = (0..3)
            .map(|i| {
                let mut v = vec![0.0; 3];
                v[i] = s;
                ev(&v)
            })
            .collect();
        assert!(infonce_loss(&sep, &sep).unwrap() < 1e-9);
    }

    #[test]
    fn memory_round_trip_and_search() {
        let rows = vec![
            MemoryRow {
                id: 0,
                surface: "甲".into(),
                vector: vec![1.0, 0.0],
            },
            MemoryRow {
                id: 1,
                surface: "乙".into(),
                vector: vec![0.0, 1.0],
            },
            MemoryRow {
                id: 2,
                surface: "丙".into(),
                vector: vec![0.0, 0.0],
            },
        ];
        let m = build_memory(2, rows).unwrap();
        let mut bytes = Vec::new();
        save_memory(&m, &mut bytes).unwrap();
        let back = load_memory(bytes.as_slice()).unwrap();
        assert_eq!(back, m);

        let top = topk_inner_product(&m, &ev(&[0.0, 1.0]), 1).unwrap();
        assert_eq!(top[0].0, 1);
        let all = topk_inner_product(&m, &ev(&[0.0, 0.0]), 10).unwrap();
        assert_eq!(all.iter().map(|x| x.0).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert!(all.iter().all(|x| x.1 == 0.0));
    }

    #[test]
    fn load_rejects_garbage() {
        assert!(matches!(
            load_memory(&b"NOPE\x01\0\0\0"[..]),
            Err(NecError::Format(_))
        ));
        let mut bytes = Vec::new();
        save_memory(&build_memory(1, vec![]).unwrap(), &mut bytes).unwrap();
        bytes.push(0);
        assert!(load_memory(bytes.as_slice()).is_err());
    }

    #[test]
    fn build_memory_rejects_bad_rows() {
        let bad = vec![MemoryRow {
            id: 0,
            surface: "x".into(),
            vector: vec![1.0],
        }];
        assert!(build_memory(2, bad).is_err());
        let dup = vec![
            MemoryRow {
                id: 0,
                surface: "x".into(),
                vector: vec![1.0],
            },
            MemoryRow {
                id: 0,
                surface: "y".into(),
                vector: vec![1.0],
            },
        ];
        assert!(build_memory(1, dup).is_err());
    }

    #[test]
    fn reference_embedder_properties() {
        let a = reference_embed_text("韓國遊泳", 1024, 7);
        assert_eq!(a, reference_embed_text("韓國遊泳", 1024, 7));
        assert!((a.norm() - 1.0).abs() < 1e-9);
        assert_eq!(
            reference_embed(&[Token::Mask, Token::EntityStart], 64, 7).norm(),
            0.0
        );
    }

    #[test]
    fn reference_embedder_disjoint_text() {
        let left: Vec<Token> = "甲乙丙".chars().map(Token::Char).collect();
        let right: Vec<Token> = "丁戊己".chars().map(Token::Char).collect();
        let bl = ngram_buckets(&left, 1024, 7);
        let br = ngram_buckets(&right, 1024, 7);
        assert_eq!(bl.len(), 6);
        let collide = bl.iter().any(|b| br.contains(b));
        let d = reference_embed(&left, 1024, 7)
            .dot(&reference_embed(&right, 1024, 7))
            .unwrap();
        if collide {
            assert!(d > 0.0);
        } else {
            assert_eq!(d, 0.0);
        }
    }

    #[test]
    fn markers_do_not_bridge_ngrams() {
        let masked = insert_markers(mask_span(HYP, &span(), origin()).unwrap()).unwrap();
        let buckets = ngram_buckets(&masked.tokens, 1 << 20, 3);
        // 7 chars before and 6 after: (7+6+5) + (6+5+4)
        assert_eq!(buckets.len(), 33);
    }
}
