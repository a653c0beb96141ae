//! Rule-based SMILES tokenizer and bounded vocabulary.
//!
//! Vocab file format: UTF-8 text, one token per line, line number (0-based) is
//! the id. The first five lines are always `<pad> <unk> <cls> <sep> <mask>`.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use thiserror::Error;

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const CLS_ID: u32 = 2;
pub const SEP_ID: u32 = 3;
pub const MASK_ID: u32 = 4;
pub const SPECIAL_TOKENS: [&str; 5] = ["<pad>", "<unk>", "<cls>", "<sep>", "<mask>"];
pub const NUM_SPECIAL: usize = SPECIAL_TOKENS.len();

pub const MAX_VOCAB_SIZE: usize = 591;
pub const MAX_SEQ_LEN: usize = 512;

#[derive(Debug, Error)]
pub enum TokenizeError {
    #[error("unterminated '[' at offset {offset}")]
    UnterminatedBracket { offset: usize },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("invalid vocab file: {0}")]
    InvalidVocab(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Splits SMILES into tokens: a bracket atom is one token, `Cl`/`Br` are one
/// token, `%nn` is one token, everything else is a single character. The
/// concatenation of the tokens is the input.
pub fn tokenize(s: &str) -> Result<Vec<&str>, TokenizeError> {
    let bytes = s.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let len = match bytes[i] {
            b'[' => match bytes[i..].iter().position(|&b| b == b']') {
                Some(p) => p + 1,
                None => return Err(TokenizeError::UnterminatedBracket { offset: i }),
            },
            b'C' if bytes.get(i + 1) == Some(&b'l') => 2,
            b'B' if bytes.get(i + 1) == Some(&b'r') => 2,
            b'%' if bytes.len() >= i + 3
                && bytes[i + 1].is_ascii_digit()
                && bytes[i + 2].is_ascii_digit() =>
            {
                3
            }
            _ => s[i..].chars().next().map_or(1, char::len_utf8),
        };
        out.push(&s[i..i + len]);
        i += len;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Vocab {
    /// Builds a vocabulary from a corpus. Tokens are ranked by frequency, ties
    /// broken lexicographically, and the top `591 - 5` are kept after the
    /// special tokens.
    pub fn build<I, S>(corpus: I) -> Result<Vocab, TokenizeError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self::build_with_cap(corpus, MAX_VOCAB_SIZE)
    }

    pub fn build_with_cap<I, S>(corpus: I, max_size: usize) -> Result<Vocab, TokenizeError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let max_size = max_size.clamp(NUM_SPECIAL, MAX_VOCAB_SIZE);
        let mut counts: HashMap<String, u64> = HashMap::new();
        let mut lines = 0usize;
        for s in corpus {
            lines += 1;
            for t in tokenize(s.as_ref())? {
                *counts.entry(t.to_string()).or_default() += 1;
            }
        }
        if lines == 0 {
            return Err(TokenizeError::EmptyCorpus);
        }
        let mut ranked: Vec<(String, u64)> = counts
            .into_iter()
            .filter(|(t, _)| !SPECIAL_TOKENS.contains(&t.as_str()))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(max_size - NUM_SPECIAL);
        let tokens = SPECIAL_TOKENS
            .iter()
            .map(|s| s.to_string())
            .chain(ranked.into_iter().map(|(t, _)| t))
            .collect();
        Ok(Self::from_tokens(tokens))
    }

    fn from_tokens(tokens: Vec<String>) -> Vocab {
        let ids = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocab { tokens, ids }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// `<cls>` + ids + `<sep>`, keeping at most 510 content tokens. Tokens not
    /// in the vocabulary become `<unk>` and are counted.
    pub fn encode(&self, tokens: &[&str]) -> TokenSeq {
        let keep = tokens.len().min(MAX_SEQ_LEN - 2);
        let mut ids = Vec::with_capacity(keep + 2);
        ids.push(CLS_ID);
        let mut unk_count = 0;
        for t in &tokens[..keep] {
            match self.id(t) {
                Some(id) => ids.push(id),
                None => {
                    unk_count += 1;
                    ids.push(UNK_ID);
                }
            }
        }
        ids.push(SEP_ID);
        TokenSeq {
            attention_mask: vec![1; ids.len()],
            ids,
            unk_count,
            truncated: keep < tokens.len(),
        }
    }

    /// Tokenizes and encodes in one step.
    pub fn encode_smiles(&self, s: &str) -> Result<TokenSeq, TokenizeError> {
        Ok(self.encode(&tokenize(s)?))
    }

    /// Concatenates the tokens of all non-special ids.
    pub fn decode(&self, seq: &TokenSeq) -> String {
        self.decode_ids(&seq.ids)
    }

    pub fn decode_ids(&self, ids: &[u32]) -> String {
        ids.iter()
            .filter(|&&id| id as usize >= NUM_SPECIAL)
            .filter_map(|&id| self.token(id))
            .collect()
    }

    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for t in &self.tokens {
            writeln!(w, "{t}")?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> Result<Vocab, TokenizeError> {
        let tokens: Vec<String> = r.lines().collect::<Result<_, _>>()?;
        if tokens.len() < NUM_SPECIAL || tokens[..NUM_SPECIAL] != SPECIAL_TOKENS {
            return Err(TokenizeError::InvalidVocab(
                "special tokens missing from the first five lines".into(),
            ));
        }
        if tokens.len() > MAX_VOCAB_SIZE {
            return Err(TokenizeError::InvalidVocab(format!(
                "{} tokens exceeds the cap of {MAX_VOCAB_SIZE}",
                tokens.len()
            )));
        }
        let vocab = Self::from_tokens(tokens);
        if vocab.ids.len() != vocab.tokens.len() {
            return Err(TokenizeError::InvalidVocab("duplicate token".into()));
        }
        Ok(vocab)
    }

    pub fn save(&self, path: &std::path::Path) -> std::io::Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write(&mut w)?;
        w.flush()
    }

    pub fn load(path: &std::path::Path) -> Result<Vocab, TokenizeError> {
        Self::read(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// Encoded sequence: `<cls> ... <sep>` followed by optional padding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSeq {
    pub ids: Vec<u32>,
    pub attention_mask: Vec<u8>,
    pub unk_count: usize,
    pub truncated: bool,
}

impl TokenSeq {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Number of non-pad positions.
    pub fn content_len(&self) -> usize {
        self.attention_mask.iter().filter(|&&m| m == 1).count()
    }

    pub fn pad_to(&mut self, len: usize) {
        while self.ids.len() < len {
            self.ids.push(PAD_ID);
            self.attention_mask.push(0);
        }
    }
}
