//! Seeded synthetic purchase-order documents.
//!
//! Each document carries header fields labeled exactly once
//! (document-number, date, total-amount), a line-item table whose rows
//! repeat the item-id and quantity fields in fixed columns, and unlabeled
//! filler text that stretches the document to a target length. Page
//! layout is plain: fixed line height, table columns at fixed x
//! fractions, filler flowing left to right. Every page begins with an
//! unlabeled line (column headers or filler), so no labeled span ever
//! abuts a page start.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::document::{LengthCategory, Page, Span, TokenizedDocument, Word};
use super::DataError;

/// The labeled field classes, sorted.
pub const FIELD_CLASSES: [&str; 5] = [
    "date",
    "document_number",
    "item_id",
    "quantity",
    "total_amount",
];

const PAGE_SIZES: [(i64, i64); 3] = [(612, 792), (595, 842), (1224, 1584)];
const MARGIN: i64 = 24;
const LINE_H: i64 = 13;
const WORD_H: i64 = 11;
const CHAR_W: i64 = 7;
const WORD_GAP: i64 = 10;
const MAX_PAGES: usize = 6;

const MONTHS: [&str; 12] = [
    "Jan", "Feb", "Mar", "Apr", "May", "Jun", "Jul", "Aug", "Sep", "Oct", "Nov", "Dec",
];

const LEXICON: [&str; 96] = [
    "the", "and", "for", "are", "with", "from", "this", "that", "shall", "must",
    "upon", "per", "all", "any", "not", "may", "due", "paid", "cost", "rate",
    "terms", "order", "goods", "items", "buyer", "seller", "vendor", "client", "agent", "office",
    "street", "avenue", "suite", "floor", "city", "state", "phone", "email", "contact", "billing",
    "payment", "invoice", "account", "balance", "credit", "deposit", "receipt", "summary", "notice", "record",
    "shipped", "freight", "carrier", "packing", "handling", "storage", "customs", "transit", "arrival", "pickup",
    "quality", "inspect", "approve", "confirm", "reserve", "request", "provide", "include", "exclude", "subject",
    "company", "limited", "partner", "holding", "trading", "supply", "service", "product", "general", "special",
    "within", "before", "after", "during", "between", "against", "without", "herein", "thereof", "whereas",
    "section", "clause", "annex", "policy", "notice2", "ref",
];

/// Deterministic item-code pool, shared by every corpus so codes stay in
/// any vocabulary built on generated data.
pub fn item_code_pool() -> Vec<String> {
    let mut pool = Vec::with_capacity(240);
    for prefix in ["AX", "BL", "CN", "DR", "EK"] {
        for n in 100..148 {
            pool.push(format!("{prefix}{n}"));
        }
    }
    pool
}

#[derive(Debug, Clone)]
pub struct GenConfig {
    pub seed: u64,
    pub count: usize,
    /// Fractions of (short, medium, long) documents; must sum to 1.
    pub length_mix: (f64, f64, f64),
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            seed: 0,
            count: 100,
            length_mix: (0.55, 0.40, 0.05),
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let (s, m, l) = self.length_mix;
        let ok = s >= 0.0 && m >= 0.0 && l >= 0.0 && ((s + m + l) - 1.0).abs() <= 1e-9;
        if !ok {
            return Err(DataError::BadGenConfig(format!(
                "length mix ({s}, {m}, {l}) must be non-negative and sum to 1"
            )));
        }
        Ok(())
    }
}

/// Evenly interleaved category assignment hitting the requested mix
/// exactly (largest-deficit rule per index).
fn category_sequence(count: usize, mix: (f64, f64, f64)) -> Vec<LengthCategory> {
    let targets = [mix.0, mix.1, mix.2];
    let categories = LengthCategory::all();
    let mut emitted = [0usize; 3];
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let mut best = 0;
        let mut best_deficit = f64::NEG_INFINITY;
        for k in 0..3 {
            let deficit = targets[k] * (i + 1) as f64 - emitted[k] as f64;
            if deficit > best_deficit {
                best_deficit = deficit;
                best = k;
            }
        }
        emitted[best] += 1;
        out.push(categories[best]);
    }
    out
}

pub fn generate_corpus(config: &GenConfig) -> Result<Vec<TokenizedDocument>, DataError> {
    config.validate()?;
    let categories = category_sequence(config.count, config.length_mix);
    let mut docs = Vec::with_capacity(config.count);
    for (i, &category) in categories.iter().enumerate() {
        let doc_seed = config
            .seed
            .wrapping_add((i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut rng = ChaCha8Rng::seed_from_u64(doc_seed);
        let id = format!("d{}-{i:05}", config.seed);
        let doc = generate_document(id, category, &mut rng);
        debug_assert!(doc.validate().is_ok());
        docs.push(doc);
    }
    Ok(docs)
}

struct DocBuilder {
    width: i64,
    height: i64,
    lines_per_page: i64,
    pages: Vec<Page>,
    spans: Vec<Span>,
    line: i64,
    word_count: usize,
}

impl DocBuilder {
    fn new(width: i64, height: i64) -> Self {
        DocBuilder {
            width,
            height,
            lines_per_page: (height - 2 * MARGIN) / LINE_H,
            pages: vec![Page {
                width,
                height,
                words: Vec::new(),
            }],
            spans: Vec::new(),
            line: 0,
            word_count: 0,
        }
    }

    fn page_index(&self) -> usize {
        self.pages.len() - 1
    }

    fn line_available(&self) -> bool {
        self.line < self.lines_per_page
    }

    fn can_start_page(&self) -> bool {
        self.pages.len() < MAX_PAGES
    }

    fn start_page(&mut self) {
        self.pages.push(Page {
            width: self.width,
            height: self.height,
            words: Vec::new(),
        });
        self.line = 0;
    }

    /// Places words at explicit x positions on the next line. Returns the
    /// page-local index of the first word.
    fn add_line(&mut self, words: &[(String, i64)]) -> usize {
        assert!(self.line_available(), "page overflow");
        let y = MARGIN + self.line * LINE_H;
        self.line += 1;
        let page = self.pages.last_mut().expect("at least one page");
        let first = page.words.len();
        for (text, x) in words {
            let w = CHAR_W * text.chars().count() as i64;
            page.words.push(Word::new(text.clone(), [*x, y, x + w, y + WORD_H]));
        }
        self.word_count += words.len();
        first
    }

    /// Left-to-right flow positions for a sequence of words.
    fn flow(&self, texts: &[String]) -> Vec<(String, i64)> {
        let mut x = MARGIN;
        let mut out = Vec::with_capacity(texts.len());
        for t in texts {
            out.push((t.clone(), x));
            x += CHAR_W * t.chars().count() as i64 + WORD_GAP;
        }
        out
    }

    fn label(&mut self, class: &str, page: usize, start: usize, end: usize) {
        self.spans.push(Span::new(class, page, start, end));
    }

    fn col_x(&self, frac: f64) -> i64 {
        (self.width as f64 * frac) as i64
    }
}

fn lex(rng: &mut ChaCha8Rng) -> String {
    LEXICON[rng.random_range(0..LEXICON.len())].to_string()
}

/// Filler words that fit on one line of the current page width.
fn filler_line(b: &DocBuilder, rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut texts = Vec::new();
    let mut x = MARGIN;
    while texts.len() < 14 {
        let t = lex(rng);
        let w = CHAR_W * t.chars().count() as i64 + WORD_GAP;
        if !texts.is_empty() && x + w > b.width - MARGIN {
            break;
        }
        x += w;
        texts.push(t);
    }
    texts
}

fn target_words(category: LengthCategory, rng: &mut ChaCha8Rng) -> usize {
    match category {
        LengthCategory::Short => rng.random_range(80..=460),
        LengthCategory::Medium => rng.random_range(560..=1900),
        LengthCategory::Long => rng.random_range(2100..=3200),
    }
}

fn generate_document(
    id: String,
    category: LengthCategory,
    rng: &mut ChaCha8Rng,
) -> TokenizedDocument {
    let (w, h) = PAGE_SIZES[rng.random_range(0..PAGE_SIZES.len())];
    let mut b = DocBuilder::new(w, h);
    let target = target_words(category, rng);
    let codes = item_code_pool();

    // Letterhead distractors.
    let company: Vec<String> = (0..rng.random_range(2..=3)).map(|_| lex(rng)).collect();
    let line = b.flow(&company);
    b.add_line(&line);

    // ORDER NUMBER <value>
    let docnum = format!("PO-{:06}", rng.random_range(0..1_000_000));
    let texts = vec!["ORDER".to_string(), "NUMBER".to_string(), docnum];
    let line = b.flow(&texts);
    let first = b.add_line(&line);
    let page = b.page_index();
    b.label("document_number", page, first + 2, first + 2);

    // DATE <day month year>
    let texts = vec![
        "DATE".to_string(),
        rng.random_range(1..=28).to_string(),
        MONTHS[rng.random_range(0..12)].to_string(),
        rng.random_range(2018..=2025).to_string(),
    ];
    let line = b.flow(&texts);
    let first = b.add_line(&line);
    b.label("date", page, first + 1, first + 3);

    // TOTAL <amount>
    let amount = format!(
        "{}.{:02}",
        rng.random_range(10..=99_999),
        rng.random_range(0..100)
    );
    let texts = vec!["TOTAL".to_string(), amount];
    let line = b.flow(&texts);
    let first = b.add_line(&line);
    b.label("total_amount", page, first + 1, first + 1);

    // Address-ish distractor block.
    for _ in 0..rng.random_range(1..=3) {
        let texts: Vec<String> = (0..rng.random_range(3..=6)).map(|_| lex(rng)).collect();
        let line = b.flow(&texts);
        b.add_line(&line);
    }

    // Line-item table: rows of [code, qty, price, amount] in columns,
    // with a header line at the top of the table and after page breaks.
    let budget = target.saturating_sub(b.word_count + 20);
    let n_items = rng.random_range(1..=50).min((budget / 4).max(1));
    let header = |b: &DocBuilder| -> Vec<(String, i64)> {
        [
            ("ITEM", 0.08),
            ("QTY", 0.40),
            ("PRICE", 0.58),
            ("AMOUNT", 0.78),
        ]
        .iter()
        .map(|&(t, f)| (t.to_string(), b.col_x(f)))
        .collect()
    };
    let hline = header(&b);
    b.add_line(&hline);
    for _ in 0..n_items {
        if !b.line_available() {
            if !b.can_start_page() {
                break;
            }
            b.start_page();
            let hline = header(&b);
            b.add_line(&hline);
        }
        let code = codes[rng.random_range(0..codes.len())].clone();
        let qty = rng.random_range(1..=500).to_string();
        let price = format!("{}.{:02}", rng.random_range(1..=999), rng.random_range(0..100));
        let row_total = format!(
            "{}.{:02}",
            rng.random_range(1..=99_999),
            rng.random_range(0..100)
        );
        let row = vec![
            (code, b.col_x(0.08)),
            (qty, b.col_x(0.40)),
            (price, b.col_x(0.58)),
            (row_total, b.col_x(0.78)),
        ];
        let first = b.add_line(&row);
        let page = b.page_index();
        b.label("item_id", page, first, first);
        b.label("quantity", page, first + 1, first + 1);
    }

    // Filler paragraphs up to the target length.
    while b.word_count < target {
        if !b.line_available() {
            if !b.can_start_page() {
                break;
            }
            b.start_page();
        }
        let texts = filler_line(&b, rng);
        let line = b.flow(&texts);
        b.add_line(&line);
    }

    TokenizedDocument {
        id,
        pages: b.pages,
        spans: b.spans,
    }
}
