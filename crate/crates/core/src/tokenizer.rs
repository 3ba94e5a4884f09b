//! Byte-level BPE tokenizer.
//!
//! Ids `0..256` are raw bytes, `256..259` are the BOS/EOS/PAD specials and every
//! learned merge gets the next id in training order. Text is first split into
//! chunks that start at a whitespace run following non-whitespace, so merges
//! never cross those boundaries.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BYTE_TOKENS: u32 = 256;
pub const BOS: u32 = 256;
pub const EOS: u32 = 257;
pub const PAD: u32 = 258;
pub const MIN_VOCAB: usize = 259;
pub const FORMAT_TAG: &str = "softprompt-bpe/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Specials {
    pub bos: u32,
    pub eos: u32,
    pub pad: u32,
}

impl Default for Specials {
    fn default() -> Self {
        Self {
            bos: BOS,
            eos: EOS,
            pad: PAD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    merges: Vec<(u32, u32)>,
    ranks: HashMap<(u32, u32), u32>,
    tokens: Vec<Vec<u8>>,
    specials: Specials,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    format: String,
    vocab_size: usize,
    specials: Specials,
    merges: Vec<(u32, u32)>,
}

impl Vocab {
    fn from_merges(merges: Vec<(u32, u32)>) -> Result<Self> {
        let mut tokens: Vec<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
        tokens.extend([Vec::new(), Vec::new(), Vec::new()]);
        let mut ranks = HashMap::with_capacity(merges.len());
        for (rank, &(l, r)) in merges.iter().enumerate() {
            let n = tokens.len() as u32;
            if l >= n
                || r >= n
                || (BYTE_TOKENS..MIN_VOCAB as u32).contains(&l)
                || (BYTE_TOKENS..MIN_VOCAB as u32).contains(&r)
            {
                return Err(Error::Config(format!("merge {rank} references invalid id")));
            }
            let mut joined = tokens[l as usize].clone();
            joined.extend_from_slice(&tokens[r as usize]);
            tokens.push(joined);
            ranks.insert((l, r), rank as u32);
        }
        Ok(Self {
            merges,
            ranks,
            tokens,
            specials: Specials::default(),
        })
    }

    /// Identity byte vocabulary plus specials.
    pub fn bytes_only() -> Self {
        Self::from_merges(Vec::new()).expect("empty merge list is valid")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn merges(&self) -> &[(u32, u32)] {
        &self.merges
    }

    pub fn specials(&self) -> Specials {
        self.specials
    }

    pub fn token_bytes(&self, id: u32) -> Option<&[u8]> {
        self.tokens.get(id as usize).map(Vec::as_slice)
    }

    /// Id of the token whose byte string is exactly `bytes`, if any.
    pub fn id_of(&self, bytes: &[u8]) -> Option<u32> {
        self.tokens
            .iter()
            .enumerate()
            .filter(|(i, _)| !(BYTE_TOKENS as usize..MIN_VOCAB).contains(i))
            .find(|(_, t)| t.as_slice() == bytes)
            .map(|(i, _)| i as u32)
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::with_capacity(text.len() / 2);
        for chunk in chunks(text) {
            out.extend(self.encode_chunk(chunk.as_bytes()));
        }
        out
    }

    fn encode_chunk(&self, bytes: &[u8]) -> Vec<u32> {
        let mut ids: Vec<u32> = bytes.iter().map(|&b| b as u32).collect();
        loop {
            let best = ids
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0], w[1])).map(|&r| (r, (w[0], w[1]))))
                .min_by_key(|&(r, _)| r);
            let Some((rank, pair)) = best else { break };
            let new_id = MIN_VOCAB as u32 + rank;
            ids = merge_pair(&ids, pair, new_id);
        }
        ids
    }

    /// Specials decode to nothing; invalid UTF-8 is replaced lossily.
    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let mut bytes = Vec::new();
        for &id in ids {
            let tok = self.tokens.get(id as usize).ok_or(Error::UnknownToken(id))?;
            bytes.extend_from_slice(tok);
        }
        Ok(String::from_utf8(bytes).unwrap_or_else(|e| String::from_utf8_lossy(e.as_bytes()).into_owned()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&VocabFile {
            format: FORMAT_TAG.into(),
            vocab_size: self.len(),
            specials: self.specials,
            merges: self.merges.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: VocabFile = serde_json::from_str(text)?;
        if file.format != FORMAT_TAG {
            return Err(Error::Config(format!("unsupported vocab format `{}`", file.format)));
        }
        if file.specials != Specials::default() {
            return Err(Error::Config("unexpected special token ids".into()));
        }
        let vocab = Self::from_merges(file.merges)?;
        if vocab.len() != file.vocab_size {
            return Err(Error::Config(format!(
                "vocab_size {} does not match {} merges",
                file.vocab_size,
                vocab.merges.len()
            )));
        }
        Ok(vocab)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

fn merge_pair(ids: &[u32], pair: (u32, u32), new_id: u32) -> Vec<u32> {
    let mut out = Vec::with_capacity(ids.len());
    let mut i = 0;
    while i < ids.len() {
        if i + 1 < ids.len() && ids[i] == pair.0 && ids[i + 1] == pair.1 {
            out.push(new_id);
            i += 2;
        } else {
            out.push(ids[i]);
            i += 1;
        }
    }
    out
}

/// Splits text before each whitespace run that follows non-whitespace.
pub fn chunks(text: &str) -> impl Iterator<Item = &str> {
    let mut starts = Vec::new();
    let mut prev_ws = true;
    for (i, c) in text.char_indices() {
        let ws = c.is_whitespace();
        if i == 0 || (ws && !prev_ws) {
            starts.push(i);
        }
        prev_ws = ws;
    }
    let ends: Vec<usize> = starts
        .iter()
        .skip(1)
        .copied()
        .chain(std::iter::once(text.len()))
        .collect();
    starts.into_iter().zip(ends).map(move |(s, e)| &text[s..e])
}

/// Greedy BPE training.
///
/// Each round merges the most frequent adjacent pair, ties going to the
/// lexicographically smallest `(left bytes, right bytes)`. Stops at
/// `vocab_size` or when no pair occurs at least twice. The result does not
/// depend on `seed`; it is accepted so every stage of a run takes one.
pub fn train_bpe<S: AsRef<str>>(texts: &[S], vocab_size: usize, _seed: u64) -> Result<Vocab> {
    if vocab_size < MIN_VOCAB {
        return Err(Error::VocabTooSmall(vocab_size));
    }
    let mut chunk_counts: HashMap<&str, usize> = HashMap::new();
    for text in texts {
        for chunk in chunks(text.as_ref()) {
            *chunk_counts.entry(chunk).or_default() += 1;
        }
    }
    let mut words: Vec<(Vec<u32>, usize)> = chunk_counts
        .into_iter()
        .map(|(c, n)| (c.bytes().map(u32::from).collect(), n))
        .collect();
    words.sort();

    let mut vocab = Vocab::bytes_only();
    while vocab.len() < vocab_size {
        let mut pair_counts: HashMap<(u32, u32), usize> = HashMap::new();
        for (ids, n) in &words {
            for w in ids.windows(2) {
                *pair_counts.entry((w[0], w[1])).or_default() += n;
            }
        }
        let best = pair_counts.into_iter().max_by(|a, b| {
            a.1.cmp(&b.1).then_with(|| {
                let ka = (&vocab.tokens[a.0 .0 as usize], &vocab.tokens[a.0 .1 as usize]);
                let kb = (&vocab.tokens[b.0 .0 as usize], &vocab.tokens[b.0 .1 as usize]);
                kb.cmp(&ka)
            })
        });
        let Some((pair, count)) = best else { break };
        if count < 2 {
            break;
        }
        let new_id = vocab.len() as u32;
        for (ids, _) in words.iter_mut() {
            if ids.len() >= 2 {
                *ids = merge_pair(ids, pair, new_id);
            }
        }
        let mut joined = vocab.tokens[pair.0 as usize].clone();
        joined.extend_from_slice(&vocab.tokens[pair.1 as usize]);
        vocab.tokens.push(joined);
        vocab.ranks.insert(pair, vocab.merges.len() as u32);
        vocab.merges.push(pair);
    }
    Ok(vocab)
}
