//! Document corpus handling: on-disk formats, box normalization, tag
//! codec, subword vocabulary, chunking, and a seeded generator.

pub mod bieso;
pub mod chunk;
pub mod document;
pub mod synth;
pub mod tokenizer;

pub use bieso::{decode, encode, tag_inventory, Tag, TagSpan};
pub use chunk::{
    chunk_fixed, chunk_split_page, merge_fragments, reassemble, tokenize_document, Chunk,
    TokenStream,
};
pub use document::{
    normalize_boxes, read_corpus, read_predictions, write_corpus, write_predictions, DocSpans,
    LengthCategory, Page, Span, TokenizedDocument, Word,
};
pub use synth::{generate_corpus, GenConfig, FIELD_CLASSES};
pub use tokenizer::{Vocab, MASK, PAD, UNK};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("document {doc}: page {page} has non-positive dimensions {width}x{height}")]
    BadPageDimensions {
        doc: String,
        page: usize,
        width: i64,
        height: i64,
    },
    #[error("document {doc}: word {word} on page {page} has an inverted or negative box")]
    BadBox { doc: String, page: usize, word: usize },
    #[error("document {doc}: overlapping spans of class {class} on page {page}")]
    OverlappingSpans {
        doc: String,
        class: String,
        page: usize,
    },
    #[error("document {doc}: span {class} [{start}, {end}] out of bounds on page {page}")]
    SpanOutOfBounds {
        doc: String,
        class: String,
        page: usize,
        start: usize,
        end: usize,
    },
    #[error("span {class} [{start}, {end}] out of bounds for sequence of length {len}")]
    TagSpanOutOfBounds {
        class: String,
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("span {class} overlaps an earlier span at position {position}")]
    OverlappingTagSpans { class: String, position: usize },
    #[error("chunk size must be positive")]
    BadChunkSize,
    #[error("document {doc}: chunk offset {got} does not continue at {expected}")]
    BrokenProvenance {
        doc: String,
        expected: usize,
        got: usize,
    },
    #[error("invalid generator config: {0}")]
    BadGenConfig(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {source}")]
    Parse {
        path: String,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}
