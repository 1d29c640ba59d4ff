//! Word-level vocabulary with a character-piece fallback.
//!
//! Frequent words are single tokens; anything else is split into its
//! characters, the first kept bare and the rest prefixed with `##` so the
//! model can tell word starts from continuations. Tags live on words, so
//! continuation pieces are excluded from tagging losses downstream.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const MASK: usize = 2;

const SPECIALS: [&str; 3] = ["[PAD]", "[UNK]", "[MASK]"];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Vocab {
    id_to_token: Vec<String>,
    #[serde(skip)]
    token_to_id: HashMap<String, usize>,
}

impl PartialEq for Vocab {
    fn eq(&self, other: &Self) -> bool {
        self.id_to_token == other.id_to_token
    }
}

impl Vocab {
    /// Builds a vocabulary from word occurrences: all characters seen
    /// (bare and `##`-prefixed), then whole words with at least
    /// `min_count` occurrences, most frequent first, capped at `max_size`
    /// total entries. Ties broken alphabetically for determinism.
    pub fn build<'a>(
        words: impl Iterator<Item = &'a str>,
        min_count: usize,
        max_size: usize,
    ) -> Vocab {
        let mut word_counts: HashMap<&str, usize> = HashMap::new();
        let mut chars: Vec<char> = Vec::new();
        for w in words {
            *word_counts.entry(w).or_insert(0) += 1;
            for c in w.chars() {
                if !chars.contains(&c) {
                    chars.push(c);
                }
            }
        }
        chars.sort_unstable();

        let mut id_to_token: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        for &c in &chars {
            id_to_token.push(c.to_string());
            id_to_token.push(format!("##{c}"));
        }
        let mut ranked: Vec<(&str, usize)> = word_counts
            .into_iter()
            .filter(|&(w, n)| n >= min_count && w.chars().count() > 1)
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        for (w, _) in ranked {
            if id_to_token.len() >= max_size {
                break;
            }
            id_to_token.push(w.to_string());
        }
        Vocab::from_tokens(id_to_token)
    }

    fn from_tokens(id_to_token: Vec<String>) -> Vocab {
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocab {
            id_to_token,
            token_to_id,
        }
    }

    /// Rebuilds the lookup map after deserialization.
    pub fn rebuild_index(&mut self) {
        self.token_to_id = self
            .id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.id_to_token[id]
    }

    /// Splits one word into piece ids plus a continuation flag per piece.
    pub fn encode_word(&self, word: &str) -> Vec<(usize, bool)> {
        if let Some(id) = self.id(word) {
            return vec![(id, false)];
        }
        let mut pieces = Vec::new();
        for (i, c) in word.chars().enumerate() {
            let key = if i == 0 {
                c.to_string()
            } else {
                format!("##{c}")
            };
            pieces.push((self.id(&key).unwrap_or(UNK), i > 0));
        }
        if pieces.is_empty() {
            pieces.push((UNK, false));
        }
        pieces
    }
}
