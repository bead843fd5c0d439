//! Minimal-cost character alignment with a fixed tie-break order.
//!
//! The alignment turns a `source` sequence (a reference transcript, or the
//! top-1 hypothesis when projecting spans across an n-best list) into a
//! `target` sequence. Backtracking from the end prefers
//! match > substitute > delete > insert, so every caller that shares this
//! module sees the same alignment for the same pair.

use std::ops::Range;

/// One step of an alignment. Indices are character positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EditOp {
    Match {
        src: usize,
        tgt: usize,
    },
    Substitute {
        src: usize,
        tgt: usize,
    },
    /// Source character with no target counterpart.
    Delete {
        src: usize,
    },
    /// Target character inserted before source position `before`.
    Insert {
        before: usize,
        tgt: usize,
    },
}

impl EditOp {
    pub fn is_edit(&self) -> bool {
        !matches!(self, EditOp::Match { .. })
    }
}

/// Aligns `source` to `target`, returning the operations in forward order.
pub fn align<T: PartialEq>(source: &[T], target: &[T]) -> Vec<EditOp> {
    let n = source.len();
    let m = target.len();
    let width = m + 1;
    let mut dp = vec![0usize; (n + 1) * width];
    for (j, cell) in dp[..width].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=n {
        dp[i * width] = i;
        for j in 1..=m {
            let sub = dp[(i - 1) * width + j - 1] + usize::from(source[i - 1] != target[j - 1]);
            let del = dp[(i - 1) * width + j] + 1;
            let ins = dp[i * width + j - 1] + 1;
            dp[i * width + j] = sub.min(del).min(ins);
        }
    }

    let mut ops = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = dp[i * width + j];
        if i > 0 && j > 0 {
            let diag = dp[(i - 1) * width + j - 1];
            if source[i - 1] == target[j - 1] && diag == here {
                ops.push(EditOp::Match {
                    src: i - 1,
                    tgt: j - 1,
                });
                i -= 1;
                j -= 1;
                continue;
            }
            if source[i - 1] != target[j - 1] && diag + 1 == here {
                ops.push(EditOp::Substitute {
                    src: i - 1,
                    tgt: j - 1,
                });
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && dp[(i - 1) * width + j] + 1 == here {
            ops.push(EditOp::Delete { src: i - 1 });
            i -= 1;
            continue;
        }
        ops.push(EditOp::Insert {
            before: i,
            tgt: j - 1,
        });
        j -= 1;
    }
    ops.reverse();
    ops
}

pub fn align_chars(source: &str, target: &str) -> Vec<EditOp> {
    let s: Vec<char> = source.chars().collect();
    let t: Vec<char> = target.chars().collect();
    align(&s, &t)
}

/// Result of carrying a source span through an alignment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Projection {
    /// Target character range. Empty when every source character in the
    /// span was deleted; `start` then marks where the span would sit.
    pub target: Range<usize>,
    /// Whether any operation inside the span is an edit.
    pub edited: bool,
}

/// Projects the source span `span` onto the target. Target characters that
/// match or substitute a source character inside the span belong to the
/// projection, as do insertions strictly between two span characters.
/// Insertions at either boundary stay outside.
pub fn project_span(ops: &[EditOp], span: Range<usize>) -> Projection {
    let mut first: Option<usize> = None;
    let mut last: Option<usize> = None;
    let mut edited = false;
    // target position reached after consuming every op before the span
    let mut anchor = 0usize;
    let mut tgt_cursor = 0usize;
    for op in ops {
        let (inside, tgt) = match *op {
            EditOp::Match { src, tgt } | EditOp::Substitute { src, tgt } => {
                (span.contains(&src), Some(tgt))
            }
            EditOp::Delete { src } => (span.contains(&src), None),
            EditOp::Insert { before, tgt } => (span.start < before && before < span.end, Some(tgt)),
        };
        let src_before_span = match *op {
            EditOp::Match { src, .. } | EditOp::Substitute { src, .. } | EditOp::Delete { src } => {
                src < span.start
            }
            EditOp::Insert { before, .. } => before <= span.start,
        };
        if let Some(t) = tgt {
            tgt_cursor = t + 1;
        }
        if src_before_span {
            anchor = tgt_cursor;
        }
        if inside {
            edited |= op.is_edit();
            if let Some(t) = tgt {
                first.get_or_insert(t);
                last = Some(t);
            }
        }
    }
    let target = match (first, last) {
        (Some(f), Some(l)) => f..l + 1,
        _ => anchor..anchor,
    };
    Projection { target, edited }
}
