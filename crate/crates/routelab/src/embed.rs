//! Deterministic tokenization and text-to-vector mapping.
//!
//! Two pathways exist on purpose: a fixed feature-hashed sentence vector
//! (retrieval and the guard encoder input) and a trainable token-embedding
//! table whose rows differentiable routers consume via mean pooling, which
//! is what gives token-flip attacks their gradients.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding::derive_rng;
use rand::Rng;

/// Maximum token-sequence length.
pub const MAX_TOKENS: usize = 256;

/// Default hashed sentence-vector dimension.
pub const HASH_DIM: usize = 512;

/// Default trainable token-embedding dimension.
pub const TOKEN_DIM: usize = 32;

/// Reserved index for out-of-vocabulary tokens.
pub const UNK_INDEX: usize = 0;
pub const UNK_TOKEN: &str = "<unk>";

// ── Tokenization ───────────────────────────────────────────────────────

/// Lowercase and split on whitespace and punctuation boundaries.
/// Punctuation characters become single-character tokens.
pub fn tokenize_words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            for lc in ch.to_lowercase() {
                word.push(lc);
            }
        } else {
            if !word.is_empty() {
                out.push(std::mem::take(&mut word));
            }
            if !ch.is_whitespace() {
                out.push(ch.to_string());
            }
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

/// A tokenized query: vocabulary indices, truncated to `truncated_at`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSeq {
    pub tokens: Vec<usize>,
    pub truncated_at: usize,
}

impl TokenSeq {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Vocabulary with a reserved UNK slot at index 0.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Vocab {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Build from a token list; `<unk>` is prepended, duplicates collapse
    /// to their first occurrence.
    pub fn from_tokens<I: IntoIterator<Item = String>>(tokens: I) -> Self {
        let mut v = Vocab {
            tokens: vec![UNK_TOKEN.to_string()],
            index: HashMap::new(),
        };
        v.index.insert(UNK_TOKEN.to_string(), UNK_INDEX);
        for t in tokens {
            if !v.index.contains_key(&t) {
                v.index.insert(t.clone(), v.tokens.len());
                v.tokens.push(t);
            }
        }
        v
    }

    /// Collect the sorted distinct word tokens of a text corpus.
    pub fn from_texts<'a, I: IntoIterator<Item = &'a str>>(texts: I) -> Self {
        let mut set: Vec<String> = texts
            .into_iter()
            .flat_map(|t| tokenize_words(t))
            .collect();
        set.sort_unstable();
        set.dedup();
        Self::from_tokens(set)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, idx: usize) -> Option<&str> {
        self.tokens.get(idx).map(|s| s.as_str())
    }

    pub fn lookup(&self, token: &str) -> usize {
        *self.index.get(token).unwrap_or(&UNK_INDEX)
    }

    /// Indices eligible as attack-trigger tokens (everything except UNK).
    pub fn trigger_candidates(&self) -> Vec<usize> {
        (1..self.tokens.len()).collect()
    }

    /// Map a text to vocabulary indices, truncating to [`MAX_TOKENS`].
    pub fn tokenize(&self, text: &str) -> TokenSeq {
        let mut tokens: Vec<usize> = tokenize_words(text)
            .iter()
            .map(|w| self.lookup(w))
            .collect();
        tokens.truncate(MAX_TOKENS);
        TokenSeq {
            tokens,
            truncated_at: MAX_TOKENS,
        }
    }

    /// One token per line, line number = index.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        for t in &self.tokens {
            writeln!(f, "{t}")?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        let mut tokens = Vec::new();
        for line in BufReader::new(f).lines() {
            tokens.push(line?);
        }
        if tokens.first().map(|s| s.as_str()) != Some(UNK_TOKEN) {
            return Err(Error::MalformedArtifact {
                path: path.display().to_string(),
                detail: format!("first vocabulary entry must be {UNK_TOKEN}"),
            });
        }
        let mut index = HashMap::new();
        for (i, t) in tokens.iter().enumerate() {
            index.entry(t.clone()).or_insert(i);
        }
        Ok(Vocab { tokens, index })
    }

    /// Restore the lookup table after serde deserialization.
    pub fn rebuild_index(&mut self) {
        self.index.clear();
        for (i, t) in self.tokens.iter().enumerate() {
            self.index.entry(t.clone()).or_insert(i);
        }
    }
}

// ── Feature hashing ────────────────────────────────────────────────────

fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(PRIME);
    }
    h
}

fn hash_into(v: &mut [f64], tag: &[u8], payload: &[u8]) {
    let mut buf = Vec::with_capacity(tag.len() + payload.len());
    buf.extend_from_slice(tag);
    buf.extend_from_slice(payload);
    let h = fnv1a64(&buf);
    let idx = (h % v.len() as u64) as usize;
    let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
    v[idx] += sign;
}

/// L2-normalized feature-hashed bag of word unigrams plus character
/// 3–5 grams. Identical text always maps to the identical vector; empty
/// text maps to the zero vector.
pub fn embed_hashed(text: &str, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0f64; dim.max(1)];
    if text.is_empty() {
        return v;
    }
    for w in tokenize_words(text) {
        hash_into(&mut v, b"w:", w.as_bytes());
    }
    let chars: Vec<char> = text.to_lowercase().chars().collect();
    for n in 3..=5usize {
        if chars.len() < n {
            continue;
        }
        for win in chars.windows(n) {
            let gram: String = win.iter().collect();
            hash_into(&mut v, &[b'c', b'0' + n as u8, b':'], gram.as_bytes());
        }
    }
    if v.iter().all(|&x| x == 0.0) {
        // Degenerate inputs (e.g. a lone space) still get a unit vector.
        hash_into(&mut v, b"e:", &[]);
    }
    l2_normalize(&mut v);
    v
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn l2_normalize(v: &mut [f64]) {
    let n = l2_norm(v);
    if n > 0.0 {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
}

/// Cosine similarity; errors on a zero vector.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dim(a.len(), b.len(), "cosine"));
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b.iter()) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::invalid("cosine of a zero vector"));
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

// ── Trainable token table ──────────────────────────────────────────────

/// Dense per-token rows, the differentiable half of the embedding layer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub dim: usize,
    /// Row-major `vocab_size x dim`.
    pub rows: Vec<f64>,
}

impl EmbeddingTable {
    /// Random init scaled by `1/sqrt(dim)`, seeded.
    pub fn init(vocab_size: usize, dim: usize, seed: u64) -> Self {
        let mut rng = derive_rng(seed, "embedding-table", 0);
        let scale = 1.0 / (dim as f64).sqrt();
        let rows = (0..vocab_size * dim)
            .map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * scale)
            .collect();
        EmbeddingTable { dim, rows }
    }

    pub fn vocab_size(&self) -> usize {
        self.rows.len() / self.dim
    }

    pub fn row(&self, idx: usize) -> &[f64] {
        &self.rows[idx * self.dim..(idx + 1) * self.dim]
    }

    pub fn row_mut(&mut self, idx: usize) -> &mut [f64] {
        &mut self.rows[idx * self.dim..(idx + 1) * self.dim]
    }

    /// Mean-pool the rows of a token sequence. Empty sequences pool to the
    /// zero vector.
    pub fn mean_pool(&self, tokens: &[usize]) -> Result<Vec<f64>> {
        let mut pooled = vec![0.0; self.dim];
        if tokens.is_empty() {
            return Ok(pooled);
        }
        for &t in tokens {
            if t >= self.vocab_size() {
                return Err(Error::invalid(format!(
                    "token index {t} out of range ({} rows)",
                    self.vocab_size()
                )));
            }
            let row = self.row(t);
            for (p, r) in pooled.iter_mut().zip(row) {
                *p += r;
            }
        }
        let inv = 1.0 / tokens.len() as f64;
        for p in pooled.iter_mut() {
            *p *= inv;
        }
        Ok(pooled)
    }

    /// Per-token rows plus their mean.
    pub fn embed_tokens(&self, seq: &TokenSeq) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
        let pooled = self.mean_pool(&seq.tokens)?;
        let rows = seq.tokens.iter().map(|&t| self.row(t).to_vec()).collect();
        Ok((rows, pooled))
    }

    /// Scatter a pooled-output gradient back onto row gradients:
    /// each occurrence of a token receives `g_pooled / len`.
    pub fn accumulate_pool_grad(&self, tokens: &[usize], g_pooled: &[f64], grad_rows: &mut [f64]) {
        if tokens.is_empty() {
            return;
        }
        let inv = 1.0 / tokens.len() as f64;
        for &t in tokens {
            let base = t * self.dim;
            for (j, g) in g_pooled.iter().enumerate() {
                grad_rows[base + j] += g * inv;
            }
        }
    }

    /// Text matrix with a `vocab_size dim` header line.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "{} {}", self.vocab_size(), self.dim)?;
        for i in 0..self.vocab_size() {
            let row: Vec<String> = self.row(i).iter().map(|x| format!("{x:?}")).collect();
            writeln!(f, "{}", row.join(" "))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        let mut lines = BufReader::new(f).lines();
        let header = lines.next().ok_or_else(|| Error::MalformedArtifact {
            path: path.display().to_string(),
            detail: "missing header".into(),
        })??;
        let mut parts = header.split_whitespace();
        let vocab_size: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::MalformedArtifact {
                path: path.display().to_string(),
                detail: "bad header".into(),
            })?;
        let dim: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::MalformedArtifact {
                path: path.display().to_string(),
                detail: "bad header".into(),
            })?;
        let mut rows = Vec::with_capacity(vocab_size * dim);
        for line in lines {
            let line = line?;
            for tok in line.split_whitespace() {
                rows.push(tok.parse::<f64>().map_err(|e| Error::MalformedArtifact {
                    path: path.display().to_string(),
                    detail: e.to_string(),
                })?);
            }
        }
        if rows.len() != vocab_size * dim {
            return Err(Error::MalformedArtifact {
                path: path.display().to_string(),
                detail: format!("expected {} values, got {}", vocab_size * dim, rows.len()),
            });
        }
        Ok(EmbeddingTable { dim, rows })
    }
}
