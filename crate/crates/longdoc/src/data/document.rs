//! Document model, line-delimited JSON interchange, and box normalization.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write as _};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DataError;

/// One OCR word with its axis-aligned bounding box in page units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Word {
    pub text: String,
    #[serde(rename = "box")]
    pub bbox: [i64; 4],
}

impl Word {
    pub fn new(text: impl Into<String>, bbox: [i64; 4]) -> Self {
        Word {
            text: text.into(),
            bbox,
        }
    }

    /// Bounding-box center.
    pub fn center(&self) -> (f64, f64) {
        (
            (self.bbox[0] + self.bbox[2]) as f64 / 2.0,
            (self.bbox[1] + self.bbox[3]) as f64 / 2.0,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Page {
    pub width: i64,
    pub height: i64,
    pub words: Vec<Word>,
}

/// A labeled field: an inclusive range of word indices on one page.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub class: String,
    pub page: usize,
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(class: impl Into<String>, page: usize, start: usize, end: usize) -> Self {
        Span {
            class: class.into(),
            page,
            start,
            end,
        }
    }
}

/// Document length buckets by word count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LengthCategory {
    Short,
    Medium,
    Long,
}

impl LengthCategory {
    pub fn of(word_count: usize) -> Self {
        if word_count <= 512 {
            LengthCategory::Short
        } else if word_count <= 2048 {
            LengthCategory::Medium
        } else {
            LengthCategory::Long
        }
    }

    pub fn all() -> [LengthCategory; 3] {
        [
            LengthCategory::Short,
            LengthCategory::Medium,
            LengthCategory::Long,
        ]
    }
}

impl std::fmt::Display for LengthCategory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LengthCategory::Short => "short",
            LengthCategory::Medium => "medium",
            LengthCategory::Long => "long",
        })
    }
}

/// A multi-page document in OCR word order with word-level field labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizedDocument {
    pub id: String,
    pub pages: Vec<Page>,
    pub spans: Vec<Span>,
}

impl TokenizedDocument {
    pub fn word_count(&self) -> usize {
        self.pages.iter().map(|p| p.words.len()).sum()
    }

    pub fn length_category(&self) -> LengthCategory {
        LengthCategory::of(self.word_count())
    }

    /// Flat word index of the first word of each page.
    pub fn page_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.pages.len());
        let mut acc = 0;
        for page in &self.pages {
            offsets.push(acc);
            acc += page.words.len();
        }
        offsets
    }

    /// Checks box ordering, span bounds, and per-class span overlap.
    pub fn validate(&self) -> Result<(), DataError> {
        for (p, page) in self.pages.iter().enumerate() {
            if page.width <= 0 || page.height <= 0 {
                return Err(DataError::BadPageDimensions {
                    doc: self.id.clone(),
                    page: p,
                    width: page.width,
                    height: page.height,
                });
            }
            for (w, word) in page.words.iter().enumerate() {
                let [x0, y0, x1, y1] = word.bbox;
                if x0 > x1 || y0 > y1 {
                    return Err(DataError::BadBox {
                        doc: self.id.clone(),
                        page: p,
                        word: w,
                    });
                }
            }
        }
        let mut by_class: Vec<&Span> = self.spans.iter().collect();
        by_class.sort();
        for pair in by_class.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            if a.class == b.class && a.page == b.page && b.start <= a.end {
                return Err(DataError::OverlappingSpans {
                    doc: self.id.clone(),
                    class: a.class.clone(),
                    page: a.page,
                });
            }
        }
        for span in &self.spans {
            let in_bounds = span.page < self.pages.len()
                && span.start <= span.end
                && span.end < self.pages[span.page].words.len();
            if !in_bounds {
                return Err(DataError::SpanOutOfBounds {
                    doc: self.id.clone(),
                    class: span.class.clone(),
                    page: span.page,
                    start: span.start,
                    end: span.end,
                });
            }
        }
        Ok(())
    }
}

/// Scales every box onto the 0..=1000 grid (rounding half-up) and stamps
/// the pages as 1000 x 1000, which makes the operation idempotent.
pub fn normalize_boxes(doc: &TokenizedDocument) -> Result<TokenizedDocument, DataError> {
    let mut out = doc.clone();
    for (p, page) in out.pages.iter_mut().enumerate() {
        if page.width <= 0 || page.height <= 0 {
            return Err(DataError::BadPageDimensions {
                doc: doc.id.clone(),
                page: p,
                width: page.width,
                height: page.height,
            });
        }
        for word in &mut page.words {
            let [x0, y0, x1, y1] = word.bbox;
            word.bbox = [
                scale_coord(x0, page.width),
                scale_coord(y0, page.height),
                scale_coord(x1, page.width),
                scale_coord(y1, page.height),
            ];
        }
        page.width = 1000;
        page.height = 1000;
    }
    Ok(out)
}

/// `round_half_up(c * 1000 / dim)` clamped to [0, 1000]. The f64 quotient
/// is exact enough that `round` (half away from zero) agrees with true
/// rational half-up rounding for the coordinate magnitudes in play.
fn scale_coord(c: i64, dim: i64) -> i64 {
    let scaled = (c as f64 * 1000.0 / dim as f64).round() as i64;
    scaled.clamp(0, 1000)
}

pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<TokenizedDocument>, DataError> {
    let file = File::open(path.as_ref()).map_err(|e| DataError::Io {
        path: path.as_ref().display().to_string(),
        source: e,
    })?;
    let mut docs = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| DataError::Io {
            path: path.as_ref().display().to_string(),
            source: e,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: TokenizedDocument =
            serde_json::from_str(&line).map_err(|e| DataError::Parse {
                path: path.as_ref().display().to_string(),
                line: lineno + 1,
                source: e,
            })?;
        docs.push(doc);
    }
    Ok(docs)
}

pub fn write_corpus(
    path: impl AsRef<Path>,
    docs: &[TokenizedDocument],
) -> Result<(), DataError> {
    let file = File::create(path.as_ref()).map_err(|e| DataError::Io {
        path: path.as_ref().display().to_string(),
        source: e,
    })?;
    let mut w = BufWriter::new(file);
    for doc in docs {
        let line = serde_json::to_string(doc).expect("document serializes");
        writeln!(w, "{line}").map_err(|e| DataError::Io {
            path: path.as_ref().display().to_string(),
            source: e,
        })?;
    }
    Ok(())
}

/// One line of a predictions file: spans for a single document id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocSpans {
    pub id: String,
    pub spans: Vec<Span>,
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<DocSpans>, DataError> {
    let file = File::open(path.as_ref()).map_err(|e| DataError::Io {
        path: path.as_ref().display().to_string(),
        source: e,
    })?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| DataError::Io {
            path: path.as_ref().display().to_string(),
            source: e,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DocSpans = serde_json::from_str(&line).map_err(|e| DataError::Parse {
            path: path.as_ref().display().to_string(),
            line: lineno + 1,
            source: e,
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_predictions(path: impl AsRef<Path>, preds: &[DocSpans]) -> Result<(), DataError> {
    let file = File::create(path.as_ref()).map_err(|e| DataError::Io {
        path: path.as_ref().display().to_string(),
        source: e,
    })?;
    let mut w = BufWriter::new(file);
    for rec in preds {
        let line = serde_json::to_string(rec).expect("predictions serialize");
        writeln!(w, "{line}").map_err(|e| DataError::Io {
            path: path.as_ref().display().to_string(),
            source: e,
        })?;
    }
    Ok(())
}
