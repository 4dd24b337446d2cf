//! Text tokenization for the transformer encoder.
//!
//! `Bpe` implements lower-cased byte-pair encoding driven by an external
//! merge list (the on-disk format is one space-separated pair per line,
//! optionally preceded by a `#version` header). `Hash` is a
//! deterministic word-hash fallback for tests and randomly initialized
//! encoders.

use std::collections::HashMap;
use std::path::Path;

use regex::Regex;

use crate::archive::fnv64;
use crate::error::{Error, Result};

pub enum Tokenizer {
    Bpe(Box<BpeTokenizer>),
    Hash { vocab_size: usize },
}

impl Tokenizer {
    /// Token ids for `text`, bracketed by start/end sentinels.
    /// `vocab_size - 2` is the start token, `vocab_size - 1` the end token.
    pub fn encode(&self, text: &str, vocab_size: usize, context: usize) -> Result<Vec<usize>> {
        let cleaned = clean_text(text);
        if cleaned.is_empty() {
            return Err(Error::invalid_argument("cannot encode an empty string"));
        }
        let body = match self {
            Tokenizer::Bpe(bpe) => bpe.encode_body(&cleaned)?,
            Tokenizer::Hash { vocab_size } => {
                let word_space = vocab_size.saturating_sub(2);
                if word_space == 0 {
                    return Err(Error::config("hash tokenizer vocab too small"));
                }
                cleaned
                    .split_whitespace()
                    .map(|w| (fnv64(w.as_bytes()) % word_space as u64) as usize)
                    .collect()
            }
        };
        let mut ids = Vec::with_capacity(body.len() + 2);
        ids.push(vocab_size - 2);
        ids.extend(body);
        ids.push(vocab_size - 1);
        if ids.len() > context {
            return Err(Error::invalid_argument(format!(
                "text needs {} tokens but the context length is {}",
                ids.len(),
                context
            )));
        }
        Ok(ids)
    }
}

/// Lowercase and collapse whitespace.
fn clean_text(text: &str) -> String {
    text.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// GPT-2 style reversible byte-to-unicode table.
fn bytes_to_unicode() -> Vec<char> {
    let mut bs: Vec<u16> = (b'!' as u16..=b'~' as u16)
        .chain(0xA1..=0xAC)
        .chain(0xAE..=0xFF)
        .collect();
    let mut cs: Vec<u32> = bs.iter().map(|&b| b as u32).collect();
    let mut n = 0u32;
    for b in 0u16..256 {
        if !bs.contains(&b) {
            bs.push(b);
            cs.push(256 + n);
            n += 1;
        }
    }
    let mut table = vec!['\0'; 256];
    for (&b, &c) in bs.iter().zip(cs.iter()) {
        table[b as usize] = char::from_u32(c).unwrap();
    }
    table
}

pub struct BpeTokenizer {
    ranks: HashMap<(String, String), usize>,
    vocab: HashMap<String, usize>,
    byte_map: Vec<char>,
    splitter: Regex,
}

impl BpeTokenizer {
    /// Loads a merge list. The resulting vocabulary is:
    /// 256 byte tokens, 256 `</w>` byte tokens, one token per merge,
    /// then the two sentinels.
    pub fn from_merges_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_merges(&text)
    }

    pub fn from_merges(text: &str) -> Result<Self> {
        let byte_map = bytes_to_unicode();
        let mut vocab: HashMap<String, usize> = HashMap::new();
        for &c in &byte_map {
            let id = vocab.len();
            vocab.insert(c.to_string(), id);
        }
        for &c in &byte_map {
            let id = vocab.len();
            vocab.insert(format!("{c}</w>"), id);
        }
        let mut ranks = HashMap::new();
        for (i, line) in text
            .lines()
            .filter(|l| !l.trim().is_empty() && !l.starts_with("#version"))
            .enumerate()
        {
            let mut parts = line.split_whitespace();
            let (a, b) = match (parts.next(), parts.next()) {
                (Some(a), Some(b)) => (a.to_string(), b.to_string()),
                _ => {
                    return Err(Error::config(format!(
                        "merge line {} is not a pair: {line:?}",
                        i + 1
                    )))
                }
            };
            let merged = format!("{a}{b}");
            let id = vocab.len();
            vocab.entry(merged).or_insert(id);
            ranks.insert((a, b), i);
        }
        let splitter = Regex::new(
            r"'s|'t|'re|'ve|'m|'ll|'d|[\p{L}]+|[\p{N}]|[^\s\p{L}\p{N}]+",
        )
        .expect("tokenizer pattern");
        Ok(BpeTokenizer {
            ranks,
            vocab,
            byte_map,
            splitter,
        })
    }

    /// Total vocabulary size including the two sentinel tokens.
    pub fn vocab_size(&self) -> usize {
        self.vocab.len() + 2
    }

    fn encode_body(&self, cleaned: &str) -> Result<Vec<usize>> {
        let mut out = Vec::new();
        for m in self.splitter.find_iter(cleaned) {
            for piece in self.bpe_word(m.as_str()) {
                let id = self.vocab.get(&piece).copied().ok_or_else(|| {
                    Error::invalid_state(format!("token `{piece}` missing from vocabulary"))
                })?;
                out.push(id);
            }
        }
        Ok(out)
    }

    fn bpe_word(&self, word: &str) -> Vec<String> {
        let mut parts: Vec<String> = word
            .bytes()
            .map(|b| self.byte_map[b as usize].to_string())
            .collect();
        if let Some(last) = parts.last_mut() {
            last.push_str("</w>");
        }
        loop {
            let mut best: Option<(usize, usize)> = None; // (rank, index)
            for i in 0..parts.len().saturating_sub(1) {
                if let Some(&rank) = self
                    .ranks
                    .get(&(parts[i].clone(), parts[i + 1].clone()))
                {
                    if best.is_none_or(|(r, _)| rank < r) {
                        best = Some((rank, i));
                    }
                }
            }
            match best {
                Some((_, i)) => {
                    let merged = format!("{}{}", parts[i], parts[i + 1]);
                    parts.splice(i..=i + 1, [merged]);
                }
                None => break,
            }
        }
        parts
    }
}
