use std::collections::HashMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nets::UNK_ID;

pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// id → token table; ids 0 and 1 are always `<pad>` and `<unk>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    /// Builds a vocabulary from regular tokens (specials are prepended).
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut all = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        all.extend(tokens.into_iter().map(Into::into));
        Self::from_table(all)
    }

    fn from_table(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[0] != PAD_TOKEN || tokens[1] != UNK_TOKEN {
            return Err(Error::Format {
                offset: 0,
                message: "vocabulary must start with <pad> and <unk>".into(),
            });
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, tok) in tokens.iter().enumerate() {
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err(Error::Format {
                    offset: i as u64,
                    message: format!("vocabulary line {} holds an invalid token {tok:?}", i + 1),
                });
            }
            if index.insert(tok.clone(), i as u32).is_some() {
                return Err(Error::Format {
                    offset: i as u64,
                    message: format!("duplicate vocabulary token {tok:?} on line {}", i + 1),
                });
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Integer token sequences with their vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenDataset {
    sequences: Vec<Vec<u32>>,
    vocab: Vocab,
    max_seq_len: usize,
    fingerprint: String,
}

impl TokenDataset {
    pub fn new(sequences: Vec<Vec<u32>>, vocab: Vocab, max_seq_len: usize) -> Result<Self> {
        if sequences.is_empty() {
            return Err(Error::Data("token dataset has no sequences".into()));
        }
        for (i, s) in sequences.iter().enumerate() {
            if s.is_empty() {
                return Err(Error::Data(format!("sequence {i} is empty")));
            }
            if s.len() > max_seq_len {
                return Err(Error::Data(format!(
                    "sequence {i} has {} tokens, more than max_seq_len {max_seq_len}",
                    s.len()
                )));
            }
            if let Some(pos) = s.iter().position(|&id| id as usize >= vocab.len()) {
                return Err(Error::Data(format!(
                    "token id {} at sequence {i}, position {pos} is outside the vocabulary of {}",
                    s[pos],
                    vocab.len()
                )));
            }
        }
        let fingerprint = fingerprint_tokens(&sequences, &vocab, max_seq_len);
        Ok(Self {
            sequences,
            vocab,
            max_seq_len,
            fingerprint,
        })
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn sequences(&self) -> &[Vec<u32>] {
        &self.sequences
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn max_seq_len(&self) -> usize {
        self.max_seq_len
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    /// The corpus as whitespace-joined lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for s in &self.sequences {
            let words: Vec<&str> = s
                .iter()
                .map(|&id| self.vocab.token(id).unwrap_or(UNK_TOKEN))
                .collect();
            out.push_str(&words.join(" "));
            out.push('\n');
        }
        out
    }
}

fn fingerprint_tokens(seqs: &[Vec<u32>], vocab: &Vocab, max_seq_len: usize) -> String {
    let mut h = Sha256::new();
    h.update(b"rnd-tokens");
    h.update((max_seq_len as u64).to_le_bytes());
    h.update((vocab.len() as u64).to_le_bytes());
    for t in vocab.tokens() {
        h.update((t.len() as u64).to_le_bytes());
        h.update(t.as_bytes());
    }
    h.update((seqs.len() as u64).to_le_bytes());
    for s in seqs {
        h.update((s.len() as u64).to_le_bytes());
        for id in s {
            h.update(id.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// Result of [`build_vocab`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuiltVocab {
    pub vocab: Vocab,
    pub requested: usize,
    /// The corpus had fewer distinct tokens than requested.
    pub saturated: bool,
}

/// Top-`top_k` tokens by frequency from a token stream in corpus order.
/// Ties go to the token that occurs first. `<pad>`/`<unk>` are skipped.
pub fn build_vocab_from_counts<'a, I>(tokens: I, top_k: usize) -> Result<BuiltVocab>
where
    I: IntoIterator<Item = &'a str>,
{
    if top_k == 0 {
        return Err(Error::config("top_k", "must be >= 1"));
    }
    let mut counts: HashMap<&str, (usize, usize)> = HashMap::new();
    let mut seen = 0usize;
    for tok in tokens {
        seen += 1;
        if tok == PAD_TOKEN || tok == UNK_TOKEN {
            continue;
        }
        let next = counts.len();
        counts.entry(tok).or_insert((0, next)).0 += 1;
    }
    if seen == 0 {
        return Err(Error::Data("cannot build a vocabulary from an empty corpus".into()));
    }
    let mut ranked: Vec<(&str, usize, usize)> = counts.into_iter().map(|(t, (c, f))| (t, c, f)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
    let saturated = ranked.len() < top_k;
    ranked.truncate(top_k);
    Ok(BuiltVocab {
        vocab: Vocab::from_tokens(ranked.into_iter().map(|(t, _, _)| t.to_string()))?,
        requested: top_k,
        saturated,
    })
}

/// Vocabulary of `<pad>`, `<unk>` and the `top_k` most frequent
/// whitespace-separated tokens of `corpus`.
pub fn build_vocab(corpus: &str, top_k: usize) -> Result<BuiltVocab> {
    build_vocab_from_counts(corpus.split_whitespace(), top_k)
}

/// Parses one sequence per line; unknown tokens map to `<unk>`.
/// `max_seq_len` defaults to the longest line.
pub fn parse_corpus(text: &str, vocab: &Vocab, max_seq_len: Option<usize>) -> Result<TokenDataset> {
    let mut seqs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let ids: Vec<u32> = line.split_whitespace().map(|t| vocab.id(t)).collect();
        if ids.is_empty() {
            return Err(Error::Data(format!("empty sequence on corpus line {}", i + 1)));
        }
        if let Some(limit) = max_seq_len {
            if ids.len() > limit {
                return Err(Error::Data(format!(
                    "corpus line {} has {} tokens, more than max_seq_len {limit}",
                    i + 1,
                    ids.len()
                )));
            }
        }
        seqs.push(ids);
    }
    let longest = seqs.iter().map(Vec::len).max().unwrap_or(0);
    TokenDataset::new(seqs, vocab.clone(), max_seq_len.unwrap_or(longest))
}

fn parse_vocab(text: &str) -> Result<Vocab> {
    Vocab::from_table(text.lines().map(str::to_string).collect())
}

pub fn load_token_file(
    corpus_path: impl AsRef<Path>,
    vocab_path: impl AsRef<Path>,
    max_seq_len: Option<usize>,
) -> Result<TokenDataset> {
    let vocab = parse_vocab(&fs::read_to_string(vocab_path)?)?;
    parse_corpus(&fs::read_to_string(corpus_path)?, &vocab, max_seq_len)
}

pub fn save_token_files(
    dataset: &TokenDataset,
    corpus_path: impl AsRef<Path>,
    vocab_path: impl AsRef<Path>,
) -> Result<()> {
    fs::write(corpus_path, dataset.to_text())?;
    let mut v = dataset.vocab().tokens().join("\n");
    v.push('\n');
    fs::write(vocab_path, v)?;
    Ok(())
}
