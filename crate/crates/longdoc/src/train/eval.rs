//! Span-level scoring: predicted fields are lifted back to page-local
//! word ranges, matched exactly against gold, and reported per class
//! within each document-length category.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use super::TrainError;
use crate::data::bieso::{self, Tag, TagSpan};
use crate::data::document::{DocSpans, LengthCategory, Span, TokenizedDocument};
use crate::data::{Chunk, TokenStream};
use crate::model::Model;

/// Exact-match counts for one class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClassScore {
    pub tp: usize,
    pub fp: usize,
    pub missed: usize,
}

impl ClassScore {
    pub fn precision(&self) -> f64 {
        if self.tp + self.fp == 0 {
            0.0
        } else {
            self.tp as f64 / (self.tp + self.fp) as f64
        }
    }

    pub fn recall(&self) -> f64 {
        if self.tp + self.missed == 0 {
            0.0
        } else {
            self.tp as f64 / (self.tp + self.missed) as f64
        }
    }

    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.missed;
        if denom == 0 {
            0.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }
}

/// Per-class scores grouped by document length category.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalReport {
    pub per_category: BTreeMap<LengthCategory, BTreeMap<String, ClassScore>>,
}

impl EvalReport {
    /// Unweighted mean F1 over the classes observed in one category;
    /// zero when the category holds no documents.
    pub fn macro_f1(&self, category: LengthCategory) -> f64 {
        match self.per_category.get(&category) {
            Some(scores) if !scores.is_empty() => {
                scores.values().map(ClassScore::f1).sum::<f64>() / scores.len() as f64
            }
            _ => 0.0,
        }
    }

    /// Counts pooled across categories.
    pub fn overall(&self) -> BTreeMap<String, ClassScore> {
        let mut out: BTreeMap<String, ClassScore> = BTreeMap::new();
        for scores in self.per_category.values() {
            for (class, s) in scores {
                let acc = out.entry(class.clone()).or_default();
                acc.tp += s.tp;
                acc.fp += s.fp;
                acc.missed += s.missed;
            }
        }
        out
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (category, scores) in &self.per_category {
            writeln!(f, "{category}: macro-F1 {:.4}", self.macro_f1(*category))?;
            for (class, s) in scores {
                writeln!(
                    f,
                    "  {class:<16} P {:.4}  R {:.4}  F1 {:.4}  (tp {}, fp {}, missed {})",
                    s.precision(),
                    s.recall(),
                    s.f1(),
                    s.tp,
                    s.fp,
                    s.missed
                )?;
            }
        }
        Ok(())
    }
}

/// Scores predictions against gold documents by exact span match
/// (class, page, and inclusive word range all equal). The two sides
/// must cover exactly the same document ids.
pub fn evaluate_f1(
    preds: &[DocSpans],
    gold: &[TokenizedDocument],
) -> Result<EvalReport, TrainError> {
    let mut gold_by_id: HashMap<&str, &TokenizedDocument> = HashMap::new();
    for doc in gold {
        if gold_by_id.insert(doc.id.as_str(), doc).is_some() {
            return Err(TrainError::DuplicateId { id: doc.id.clone() });
        }
    }
    let mut pred_ids: HashSet<&str> = HashSet::new();
    for pred in preds {
        if !pred_ids.insert(pred.id.as_str()) {
            return Err(TrainError::DuplicateId {
                id: pred.id.clone(),
            });
        }
        if !gold_by_id.contains_key(pred.id.as_str()) {
            return Err(TrainError::IdMismatch {
                id: pred.id.clone(),
            });
        }
    }
    for doc in gold {
        if !pred_ids.contains(doc.id.as_str()) {
            return Err(TrainError::IdMismatch { id: doc.id.clone() });
        }
    }

    let mut report = EvalReport::default();
    for pred in preds {
        let doc = gold_by_id[pred.id.as_str()];
        let scores = report
            .per_category
            .entry(doc.length_category())
            .or_default();
        // Multiset matching: each gold span absorbs at most one
        // prediction.
        let mut remaining: HashMap<(&str, usize, usize, usize), usize> = HashMap::new();
        for s in &doc.spans {
            *remaining
                .entry((s.class.as_str(), s.page, s.start, s.end))
                .or_default() += 1;
        }
        for s in &pred.spans {
            let entry = scores.entry(s.class.clone()).or_default();
            match remaining.get_mut(&(s.class.as_str(), s.page, s.start, s.end)) {
                Some(n) if *n > 0 => {
                    *n -= 1;
                    entry.tp += 1;
                }
                _ => entry.fp += 1,
            }
        }
        for ((class, _, _, _), n) in remaining {
            if n > 0 {
                scores.entry(class.to_string()).or_default().missed += n;
            }
        }
    }
    Ok(report)
}

/// One predicted field before cross-chunk merging, kept in global token
/// coordinates with flags saying whether it touches its chunk's first
/// or last scored position.
struct Fragment {
    class: String,
    start_tok: usize,
    end_tok: usize,
    chunk: usize,
    at_head: bool,
    at_tail: bool,
}

/// Turns per-chunk tag sequences into page-local word spans.
///
/// Predictions live at word granularity: only the tag on each word's
/// first piece counts (continuation pieces carry no trained signal).
/// The word-level BIESO is decoded per chunk, fragments that touch a
/// shared chunk boundary are merged, and each result is mapped through
/// the stream back to a page-local word range. A fragment that crosses
/// a page break — which no well-formed field does — is clipped to the
/// page it starts on.
fn spans_from_tags(stream: &TokenStream, chunks: &[Chunk], tags: &[Vec<Tag>]) -> Vec<Span> {
    assert_eq!(chunks.len(), tags.len(), "one tag row per chunk");
    let mut order: Vec<usize> = (0..chunks.len()).collect();
    order.sort_by_key(|&i| chunks[i].offset);

    let mut fragments: Vec<Fragment> = Vec::new();
    for (ci, &idx) in order.iter().enumerate() {
        let chunk = &chunks[idx];
        let scored: Vec<usize> = (0..chunk.len()).filter(|&i| !chunk.continuation[i]).collect();
        if scored.is_empty() {
            continue;
        }
        let word_tags: Vec<Tag> = scored.iter().map(|&i| tags[idx][i].clone()).collect();
        for ws in bieso::decode(&word_tags) {
            fragments.push(Fragment {
                class: ws.class,
                start_tok: chunk.offset + scored[ws.start],
                end_tok: chunk.offset + scored[ws.end],
                chunk: ci,
                at_head: ws.start == 0,
                at_tail: ws.end == scored.len() - 1,
            });
        }
    }

    let mut merged: Vec<Fragment> = Vec::new();
    for frag in fragments {
        if let Some(prev) = merged.last_mut() {
            if prev.at_tail
                && frag.at_head
                && frag.chunk == prev.chunk + 1
                && prev.class == frag.class
            {
                prev.end_tok = frag.end_tok;
                prev.at_tail = frag.at_tail;
                prev.chunk = frag.chunk;
                continue;
            }
        }
        merged.push(frag);
    }

    merged
        .iter()
        .map(|f| {
            let page = stream.page[f.start_tok];
            let mut end_tok = f.end_tok;
            if stream.page[end_tok] != page {
                let mut e = f.start_tok;
                while e + 1 < stream.len() && stream.page[e + 1] == page {
                    e += 1;
                }
                end_tok = e;
            }
            stream.span_to_words(&TagSpan::new(f.class.clone(), f.start_tok, end_tok))
        })
        .collect()
}

/// Runs the tagging head over every chunk of one document and returns
/// the decoded, merged field predictions.
pub fn predict_spans(
    model: &Model,
    stream: &TokenStream,
    chunks: &[Chunk],
) -> Result<DocSpans, TrainError> {
    let mut tags = Vec::with_capacity(chunks.len());
    for chunk in chunks {
        let dist = model.tag(chunk)?;
        tags.push(model.argmax_tags(&dist));
    }
    Ok(DocSpans {
        id: stream.doc_id.clone(),
        spans: spans_from_tags(stream, chunks, &tags),
    })
}
