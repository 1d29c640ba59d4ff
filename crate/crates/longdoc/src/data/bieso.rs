//! BIESO span tagging: Begin, Inside, End, Single, Outside.
//!
//! Encoding is strict (overlaps rejected); decoding is lenient because
//! model predictions need not be well-formed. The repair rules: an I or E
//! with no matching open span starts one at the first tag of its run; an
//! open span is closed by the token before any incompatible tag, or by the
//! end of the sequence.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::DataError;

/// A span over an inclusive token range in whatever sequence scope the
/// caller is working in (document stream or single chunk).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TagSpan {
    pub class: String,
    pub start: usize,
    pub end: usize,
}

impl TagSpan {
    pub fn new(class: impl Into<String>, start: usize, end: usize) -> Self {
        TagSpan {
            class: class.into(),
            start,
            end,
        }
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Tag {
    O,
    B(String),
    I(String),
    E(String),
    S(String),
}

impl Tag {
    pub fn class(&self) -> Option<&str> {
        match self {
            Tag::O => None,
            Tag::B(c) | Tag::I(c) | Tag::E(c) | Tag::S(c) => Some(c),
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tag::O => f.write_str("O"),
            Tag::B(c) => write!(f, "B-{c}"),
            Tag::I(c) => write!(f, "I-{c}"),
            Tag::E(c) => write!(f, "E-{c}"),
            Tag::S(c) => write!(f, "S-{c}"),
        }
    }
}

impl FromStr for Tag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "O" {
            return Ok(Tag::O);
        }
        let (kind, class) = s
            .split_once('-')
            .ok_or_else(|| format!("malformed tag '{s}'"))?;
        if class.is_empty() {
            return Err(format!("malformed tag '{s}'"));
        }
        match kind {
            "B" => Ok(Tag::B(class.to_string())),
            "I" => Ok(Tag::I(class.to_string())),
            "E" => Ok(Tag::E(class.to_string())),
            "S" => Ok(Tag::S(class.to_string())),
            _ => Err(format!("malformed tag '{s}'")),
        }
    }
}

/// Spans to tags. Length-1 spans become S; longer ones B, I..., E; every
/// untouched position is O. Overlaps (any class — one sequence cannot
/// carry two tags on a token) are rejected.
pub fn encode(spans: &[TagSpan], len: usize) -> Result<Vec<Tag>, DataError> {
    let mut tags = vec![Tag::O; len];
    for span in spans {
        if span.start > span.end || span.end >= len {
            return Err(DataError::TagSpanOutOfBounds {
                class: span.class.clone(),
                start: span.start,
                end: span.end,
                len,
            });
        }
        for i in span.start..=span.end {
            if tags[i] != Tag::O {
                return Err(DataError::OverlappingTagSpans {
                    class: span.class.clone(),
                    position: i,
                });
            }
            tags[i] = if span.start == span.end {
                Tag::S(span.class.clone())
            } else if i == span.start {
                Tag::B(span.class.clone())
            } else if i == span.end {
                Tag::E(span.class.clone())
            } else {
                Tag::I(span.class.clone())
            };
        }
    }
    Ok(tags)
}

/// Tags to spans, repairing malformed sequences instead of failing.
/// Inverse of [`encode`] on well-formed input.
pub fn decode(tags: &[Tag]) -> Vec<TagSpan> {
    let mut spans = Vec::new();
    // (class, start index) of the currently open span, if any.
    let mut open: Option<(String, usize)> = None;
    for (i, tag) in tags.iter().enumerate() {
        match tag {
            Tag::O => {
                if let Some((class, start)) = open.take() {
                    spans.push(TagSpan::new(class, start, i - 1));
                }
            }
            Tag::B(c) => {
                if let Some((class, start)) = open.take() {
                    spans.push(TagSpan::new(class, start, i - 1));
                }
                open = Some((c.clone(), i));
            }
            Tag::I(c) => match &open {
                Some((class, _)) if class == c => {}
                _ => {
                    if let Some((class, start)) = open.take() {
                        spans.push(TagSpan::new(class, start, i - 1));
                    }
                    open = Some((c.clone(), i));
                }
            },
            Tag::E(c) => match open.take() {
                Some((class, start)) if class == *c => {
                    spans.push(TagSpan::new(class, start, i));
                }
                other => {
                    if let Some((class, start)) = other {
                        spans.push(TagSpan::new(class, start, i - 1));
                    }
                    // E with no open span of its class: a run of length 1.
                    spans.push(TagSpan::new(c.clone(), i, i));
                }
            },
            Tag::S(c) => {
                if let Some((class, start)) = open.take() {
                    spans.push(TagSpan::new(class, start, i - 1));
                }
                spans.push(TagSpan::new(c.clone(), i, i));
            }
        }
    }
    if let Some((class, start)) = open {
        spans.push(TagSpan::new(class, start, tags.len() - 1));
    }
    spans
}

/// Deterministic tag inventory for a set of classes: O first, then
/// B/I/E/S per class in sorted order. This fixes the id mapping used by
/// tagging heads and checkpoints.
pub fn tag_inventory(classes: &[String]) -> Vec<Tag> {
    let mut sorted: Vec<&String> = classes.iter().collect();
    sorted.sort();
    sorted.dedup();
    let mut tags = vec![Tag::O];
    for class in sorted {
        tags.push(Tag::B(class.clone()));
        tags.push(Tag::I(class.clone()));
        tags.push(Tag::E(class.clone()));
        tags.push(Tag::S(class.clone()));
    }
    tags
}
