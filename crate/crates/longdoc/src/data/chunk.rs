//! Tokenized document streams and the two chunking strategies.
//!
//! A `TokenStream` flattens a document into model-ready arrays (piece
//! ids, boxes on the 0..=1000 grid, page indices, token-level span
//! ranges). Chunking slices the stream, re-tags cut spans so every chunk
//! carries locally valid BIESO, and keeps (doc id, token offset)
//! provenance so chunks reassemble losslessly and span fragments can be
//! merged back across chunk boundaries.

use super::bieso::{self, Tag, TagSpan};
use super::document::{normalize_boxes, TokenizedDocument};
use super::tokenizer::Vocab;
use super::DataError;

/// A whole document flattened to token granularity.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenStream {
    pub doc_id: String,
    /// Vocabulary piece ids.
    pub ids: Vec<usize>,
    /// Flat word index each piece came from.
    pub word_index: Vec<usize>,
    /// True for non-initial pieces of a word.
    pub continuation: Vec<bool>,
    pub page: Vec<usize>,
    /// Word boxes on the normalized 0..=1000 grid, repeated per piece.
    pub boxes: Vec<[i64; 4]>,
    /// Labeled fields as token-level inclusive ranges.
    pub spans: Vec<TagSpan>,
    /// Document length in words (the basis for length categories).
    pub word_count: usize,
    /// Flat word index of the first word of each page.
    page_word_offsets: Vec<usize>,
    /// Word count per page.
    page_word_counts: Vec<usize>,
}

impl TokenStream {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Converts a token-level span back to (page, page-local word range).
    pub fn span_to_words(&self, span: &TagSpan) -> crate::data::document::Span {
        let first_word = self.word_index[span.start];
        let last_word = self.word_index[span.end];
        let page = self.page[span.start];
        let offset = self.page_word_offsets[page];
        crate::data::document::Span {
            class: span.class.clone(),
            page,
            start: first_word - offset,
            end: last_word - offset,
        }
    }
}

/// Flattens, normalizes, and tokenizes a document. Spans are lifted from
/// word ranges to piece ranges (first piece of the first word through
/// last piece of the last word).
pub fn tokenize_document(doc: &TokenizedDocument, vocab: &Vocab) -> Result<TokenStream, DataError> {
    doc.validate()?;
    let norm = normalize_boxes(doc)?;
    let mut stream = TokenStream {
        doc_id: doc.id.clone(),
        ids: Vec::new(),
        word_index: Vec::new(),
        continuation: Vec::new(),
        page: Vec::new(),
        boxes: Vec::new(),
        spans: Vec::new(),
        word_count: doc.word_count(),
        page_word_offsets: doc.page_offsets(),
        page_word_counts: doc.pages.iter().map(|p| p.words.len()).collect(),
    };
    // First and last token index of every flat word.
    let mut word_token_range: Vec<(usize, usize)> = Vec::with_capacity(stream.word_count);
    for (p, page) in norm.pages.iter().enumerate() {
        for word in &page.words {
            let flat_word = word_token_range.len();
            let start = stream.ids.len();
            for (id, cont) in vocab.encode_word(&word.text) {
                stream.ids.push(id);
                stream.word_index.push(flat_word);
                stream.continuation.push(cont);
                stream.page.push(p);
                stream.boxes.push(word.bbox);
            }
            word_token_range.push((start, stream.ids.len() - 1));
        }
    }
    for span in &norm.spans {
        let offset = stream.page_word_offsets[span.page];
        let (tok_start, _) = word_token_range[offset + span.start];
        let (_, tok_end) = word_token_range[offset + span.end];
        stream
            .spans
            .push(TagSpan::new(span.class.clone(), tok_start, tok_end));
    }
    stream.spans.sort();
    Ok(stream)
}

/// One model-ready slice of a stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Chunk {
    pub doc_id: String,
    /// Token offset of this chunk in the document stream.
    pub offset: usize,
    pub ids: Vec<usize>,
    pub continuation: Vec<bool>,
    pub page: Vec<usize>,
    /// Normalized word boxes, repeated per piece.
    pub boxes: Vec<[i64; 4]>,
    /// 1D positions, restarting at 0 in every chunk.
    pub positions: Vec<usize>,
    /// Gold BIESO tags, re-encoded per chunk so cut spans stay valid.
    pub tags: Vec<Tag>,
}

impl Chunk {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Box center of token `i` on the normalized grid.
    pub fn center(&self, i: usize) -> (f64, f64) {
        let [x0, y0, x1, y1] = self.boxes[i];
        ((x0 + x1) as f64 / 2.0, (y0 + y1) as f64 / 2.0)
    }
}

fn slice_to_chunk(stream: &TokenStream, start: usize, end: usize) -> Result<Chunk, DataError> {
    let len = end - start;
    // Clip every span to this window and re-encode locally.
    let mut local_spans = Vec::new();
    for span in &stream.spans {
        if span.end < start || span.start >= end {
            continue;
        }
        local_spans.push(TagSpan::new(
            span.class.clone(),
            span.start.max(start) - start,
            span.end.min(end - 1) - start,
        ));
    }
    let tags = bieso::encode(&local_spans, len)?;
    Ok(Chunk {
        doc_id: stream.doc_id.clone(),
        offset: start,
        ids: stream.ids[start..end].to_vec(),
        continuation: stream.continuation[start..end].to_vec(),
        page: stream.page[start..end].to_vec(),
        boxes: stream.boxes[start..end].to_vec(),
        positions: (0..len).collect(),
        tags,
    })
}

/// Greedy left-to-right slices of exactly `n_max` tokens (except the
/// last).
pub fn chunk_fixed(stream: &TokenStream, n_max: usize) -> Result<Vec<Chunk>, DataError> {
    if n_max == 0 {
        return Err(DataError::BadChunkSize);
    }
    let mut chunks = Vec::new();
    let mut start = 0;
    while start < stream.len() {
        let end = (start + n_max).min(stream.len());
        chunks.push(slice_to_chunk(stream, start, end)?);
        start = end;
    }
    Ok(chunks)
}

/// A new chunk at every page boundary; pages longer than `n_max` fall
/// back to fixed slicing within the page.
pub fn chunk_split_page(stream: &TokenStream, n_max: usize) -> Result<Vec<Chunk>, DataError> {
    if n_max == 0 {
        return Err(DataError::BadChunkSize);
    }
    let mut chunks = Vec::new();
    let mut start = 0;
    while start < stream.len() {
        let page = stream.page[start];
        let mut page_end = start;
        while page_end < stream.len() && stream.page[page_end] == page {
            page_end += 1;
        }
        let mut cursor = start;
        while cursor < page_end {
            let end = (cursor + n_max).min(page_end);
            chunks.push(slice_to_chunk(stream, cursor, end)?);
            cursor = end;
        }
        start = page_end;
    }
    Ok(chunks)
}

/// Rebuilds the stream-level token ids and spans from chunks of one
/// document: checks contiguity, concatenates, decodes each chunk's tags,
/// and merges same-class fragments that touch a shared chunk boundary.
pub fn reassemble(chunks: &[Chunk]) -> Result<(Vec<usize>, Vec<TagSpan>), DataError> {
    let mut ordered: Vec<&Chunk> = chunks.iter().collect();
    ordered.sort_by_key(|c| c.offset);
    let mut ids = Vec::new();
    let mut per_chunk: Vec<(usize, Vec<TagSpan>)> = Vec::new();
    let mut expected_offset = 0;
    for chunk in &ordered {
        if chunk.offset != expected_offset {
            return Err(DataError::BrokenProvenance {
                doc: chunk.doc_id.clone(),
                expected: expected_offset,
                got: chunk.offset,
            });
        }
        expected_offset += chunk.len();
        ids.extend_from_slice(&chunk.ids);
        per_chunk.push((chunk.offset, bieso::decode(&chunk.tags)));
    }
    let mut spans = merge_fragments(&per_chunk);
    spans.sort();
    Ok((ids, spans))
}

/// Merges locally decoded spans across chunks: two same-class spans are
/// fragments of one field exactly when the earlier one ends on the last
/// token of its chunk and the later one starts on the first token of the
/// next chunk. Spans are returned in stream coordinates.
pub fn merge_fragments(per_chunk: &[(usize, Vec<TagSpan>)]) -> Vec<TagSpan> {
    let mut ordered: Vec<usize> = (0..per_chunk.len()).collect();
    ordered.sort_by_key(|&i| per_chunk[i].0);
    let mut merged: Vec<TagSpan> = Vec::new();
    for (ci, &idx) in ordered.iter().enumerate() {
        let (offset, spans) = &per_chunk[idx];
        let mut spans = spans.clone();
        spans.sort_by_key(|s| s.start);
        for span in spans {
            let global = TagSpan::new(span.class.clone(), span.start + offset, span.end + offset);
            if let Some(last) = merged.last_mut() {
                let chunk_starts_here = ci > 0 && global.start == *offset && span.start == 0;
                if chunk_starts_here
                    && last.class == global.class
                    && last.end + 1 == global.start
                {
                    last.end = global.end;
                    continue;
                }
            }
            merged.push(global);
        }
    }
    merged
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::document::{Page, Span, Word};

    /// A document with `words_per_page` single-piece words on each page.
    fn doc_with_pages(words_per_page: &[usize]) -> (TokenizedDocument, Vocab) {
        let mut pages = Vec::new();
        let mut all_words = Vec::new();
        for (p, &n) in words_per_page.iter().enumerate() {
            let words: Vec<Word> = (0..n)
                .map(|i| {
                    let x = (i % 20) as i64 * 50;
                    let y = (i / 20) as i64 * 25;
                    Word::new(format!("w{p}x{i}"), [x, y, x + 40, y + 20])
                })
                .collect();
            all_words.extend(words.iter().map(|w| w.text.clone()));
            pages.push(Page {
                width: 1000,
                height: 1000,
                words,
            });
        }
        let vocab = Vocab::build(all_words.iter().map(|s| s.as_str()), 1, 100_000);
        (
            TokenizedDocument {
                id: "doc".to_string(),
                pages,
                spans: vec![],
            },
            vocab,
        )
    }

    #[test]
    fn fixed_chunk_lengths_match_arithmetic() {
        let (doc, vocab) = doc_with_pages(&[1200]);
        let stream = tokenize_document(&doc, &vocab).unwrap();
        assert_eq!(stream.len(), 1200);
        let chunks = chunk_fixed(&stream, 512).unwrap();
        let lens: Vec<usize> = chunks.iter().map(|c| c.len()).collect();
        assert_eq!(lens, vec![512, 512, 176]);
        assert_eq!(chunks[1].offset, 512);
        assert_eq!(chunks[2].positions[0], 0);
    }

    #[test]
    fn exact_fit_is_one_chunk() {
        let (doc, vocab) = doc_with_pages(&[512]);
        let stream = tokenize_document(&doc, &vocab).unwrap();
        let chunks = chunk_fixed(&stream, 512).unwrap();
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].len(), 512);
    }

    #[test]
    fn empty_document_gives_no_chunks() {
        let (doc, vocab) = doc_with_pages(&[]);
        let stream = tokenize_document(&doc, &vocab).unwrap();
        assert!(chunk_fixed(&stream, 512).unwrap().is_empty());
        assert!(chunk_split_page(&stream, 512).unwrap().is_empty());
    }

    #[test]
    fn split_page_follows_page_boundaries() {
        let (doc, vocab) = doc_with_pages(&[300, 300, 300]);
        let stream = tokenize_document(&doc, &vocab).unwrap();
        let chunks = chunk_split_page(&stream, 512).unwrap();
        let lens: Vec<usize> = chunks.iter().map(|c| c.len()).collect();
        assert_eq!(lens, vec![300, 300, 300]);
        assert!(chunks.iter().all(|c| c.page.iter().all(|&p| p == c.page[0])));
    }

    #[test]
    fn split_page_falls_back_within_long_pages() {
        let (doc, vocab) = doc_with_pages(&[600]);
        let stream = tokenize_document(&doc, &vocab).unwrap();
        let chunks = chunk_split_page(&stream, 512).unwrap();
        let lens: Vec<usize> = chunks.iter().map(|c| c.len()).collect();
        assert_eq!(lens, vec![512, 88]);
    }

    #[test]
    fn split_page_boundaries_match_bruteforce_enumeration() {
        let (doc, vocab) = doc_with_pages(&[600, 40, 512, 513, 10]);
        let stream = tokenize_document(&doc, &vocab).unwrap();
        let n_max = 512;
        let chunks = chunk_split_page(&stream, n_max).unwrap();
        let got: Vec<usize> = chunks.iter().map(|c| c.offset).collect();
        // Brute force: walk the stream, cutting at every page change and
        // whenever the running chunk hits n_max.
        let mut want = Vec::new();
        let mut run = 0;
        for i in 0..stream.len() {
            let page_changed = i > 0 && stream.page[i] != stream.page[i - 1];
            if i == 0 || page_changed || run == n_max {
                want.push(i);
                run = 0;
            }
            run += 1;
        }
        assert_eq!(got, want);
    }

    #[test]
    fn cut_spans_are_retagged_per_chunk() {
        let (mut doc, vocab) = doc_with_pages(&[10]);
        doc.spans = vec![Span::new("total", 0, 3, 6)];
        let stream = tokenize_document(&doc, &vocab).unwrap();
        let chunks = chunk_fixed(&stream, 5).unwrap();
        // Span tokens 3..=6 cut at 5: chunk 0 gets B,E at 3,4; chunk 1
        // gets B,E at 0,1.
        let t = |s: &str| s.parse::<Tag>().unwrap();
        assert_eq!(chunks[0].tags[3], t("B-total"));
        assert_eq!(chunks[0].tags[4], t("E-total"));
        assert_eq!(chunks[1].tags[0], t("B-total"));
        assert_eq!(chunks[1].tags[1], t("E-total"));
        // Both chunks decode cleanly on their own.
        assert_eq!(
            bieso::decode(&chunks[0].tags),
            vec![TagSpan::new("total", 3, 4)]
        );
    }

    #[test]
    fn reassembly_is_lossless_for_cut_spans() {
        let (mut doc, vocab) = doc_with_pages(&[23]);
        doc.spans = vec![
            Span::new("a", 0, 2, 8),   // cut by the 5-boundary twice
            Span::new("b", 0, 10, 10), // single token
            Span::new("a", 0, 14, 16),
        ];
        let stream = tokenize_document(&doc, &vocab).unwrap();
        for chunker in [chunk_fixed, chunk_split_page] {
            let chunks = chunker(&stream, 5).unwrap();
            let (ids, spans) = reassemble(&chunks).unwrap();
            assert_eq!(ids, stream.ids);
            assert_eq!(spans, stream.spans);
        }
    }

    #[test]
    fn adjacent_same_class_spans_do_not_merge_inside_a_chunk() {
        let (mut doc, vocab) = doc_with_pages(&[10]);
        doc.spans = vec![Span::new("a", 0, 1, 2), Span::new("a", 0, 3, 4)];
        let stream = tokenize_document(&doc, &vocab).unwrap();
        let chunks = chunk_fixed(&stream, 10).unwrap();
        let (_, spans) = reassemble(&chunks).unwrap();
        assert_eq!(spans.len(), 2);
    }

    #[test]
    fn reassembly_rejects_missing_chunks() {
        let (doc, vocab) = doc_with_pages(&[20]);
        let stream = tokenize_document(&doc, &vocab).unwrap();
        let mut chunks = chunk_fixed(&stream, 5).unwrap();
        chunks.remove(1);
        assert!(matches!(
            reassemble(&chunks),
            Err(DataError::BrokenProvenance { .. })
        ));
    }

    #[test]
    fn multi_piece_words_lift_spans_to_token_ranges() {
        // Vocab built without the words, so both split into characters.
        let doc = TokenizedDocument {
            id: "d".to_string(),
            pages: vec![Page {
                width: 1000,
                height: 1000,
                words: vec![
                    Word::new("ab", [0, 0, 10, 10]),
                    Word::new("cde", [20, 0, 30, 10]),
                ],
            }],
            spans: vec![Span::new("x", 0, 1, 1)],
        };
        let vocab = Vocab::build(["ab", "cde"].iter().map(|s| {
            // Feed characters only so the whole words stay out of vocab.
            &s[0..1]
        }), 1, 100);
        let stream = tokenize_document(&doc, &vocab).unwrap();
        assert_eq!(stream.len(), 5);
        assert_eq!(stream.continuation, vec![false, true, false, true, true]);
        // Span over word 1 covers its three pieces.
        assert_eq!(stream.spans, vec![TagSpan::new("x", 2, 4)]);
        // And maps back to the word range.
        let back = stream.span_to_words(&stream.spans[0]);
        assert_eq!(back, Span::new("x", 0, 1, 1));
    }
}
