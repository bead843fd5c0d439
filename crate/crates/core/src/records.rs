//! JSON Lines exchange formats for utterances and correction output.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{NecError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub text: String,
    pub score: f64,
}

/// One utterance: its n-best list plus optional reference, gold entity
/// spans (reference offsets) and externally detected spans (top-1 offsets).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NBestRecord {
    pub utt_id: String,
    pub nbest: Vec<Hypothesis>,
    #[serde(rename = "ref", default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ne_spans: Option<Vec<(usize, usize)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ced_spans: Option<Vec<(usize, usize)>>,
}

impl NBestRecord {
    pub fn top1(&self) -> &str {
        &self.nbest[0].text
    }

    /// Structural checks: non-empty n-best, finite scores, in-range and
    /// non-overlapping spans.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| NecError::Invalid(format!("utterance {:?}: {msg}", self.utt_id));
        if self.nbest.is_empty() {
            return Err(fail("empty n-best list".into()));
        }
        if let Some(h) = self.nbest.iter().find(|h| !h.score.is_finite()) {
            return Err(fail(format!("non-finite beam score for {:?}", h.text)));
        }
        check_spans(self.top1(), self.ced_spans.as_deref())
            .map_err(|e| fail(format!("ced_spans: {e}")))?;
        if let Some(ne) = &self.ne_spans {
            let reference = self
                .reference
                .as_deref()
                .ok_or_else(|| fail("ne_spans given without ref".into()))?;
            check_spans(reference, Some(ne)).map_err(|e| fail(format!("ne_spans: {e}")))?;
        }
        Ok(())
    }
}

fn check_spans(text: &str, spans: Option<&[(usize, usize)]>) -> std::result::Result<(), String> {
    let Some(spans) = spans else { return Ok(()) };
    let len = text.chars().count();
    let mut sorted = spans.to_vec();
    sorted.sort_unstable();
    for &(s, e) in &sorted {
        if s >= e || e > len {
            return Err(format!("span [{s}, {e}) out of range for length {len}"));
        }
    }
    for w in sorted.windows(2) {
        if w[1].0 < w[0].1 {
            return Err(format!(
                "spans [{}, {}) and [{}, {}) overlap",
                w[0].0, w[0].1, w[1].0, w[1].1
            ));
        }
    }
    Ok(())
}

/// Reads and validates n-best records. Errors name the line.
pub fn read_nbest<R: BufRead>(source: R) -> Result<Vec<NBestRecord>> {
    let mut out = Vec::new();
    for (idx, line) in source.lines().enumerate() {
        let line = line.map_err(|e| NecError::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let parse = |message: String| NecError::Parse {
            line: idx + 1,
            message,
        };
        let rec: NBestRecord = serde_json::from_str(&line).map_err(|e| parse(e.to_string()))?;
        rec.validate().map_err(|e| parse(e.to_string()))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_jsonl<W: Write, T: Serialize>(mut out: W, items: &[T]) -> Result<()> {
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Per-span summary written by the correct command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionEntry {
    pub start: usize,
    pub end: usize,
    pub original: String,
    pub chosen: Option<String>,
    pub accepted: bool,
    pub reject_candidate: f64,
    pub reject_original: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionOutput {
    pub utt_id: String,
    pub hypothesis: String,
    pub corrected: String,
    pub corrections: Vec<CorrectionEntry>,
}

pub fn read_corrections<R: BufRead>(source: R) -> Result<Vec<CorrectionOutput>> {
    let mut out = Vec::new();
    for (idx, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| NecError::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}
