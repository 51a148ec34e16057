//! Fixed vocabulary plus the per-example extended vocabulary used for copying.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::corpus::Chunk;
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const START: usize = 2;
pub const STOP: usize = 3;
pub const RESERVED: [&str; 4] = ["[PAD]", "[UNK]", "[START]", "[STOP]"];

pub const DEFAULT_MAX_SIZE: usize = 50_000;
const FILE_MAGIC: &str = "auxsumm-vocab v1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::from_tokens(Vec::<String>::new()).expect("reserved tokens are distinct")
    }
}

impl Vocabulary {
    /// Reserved tokens followed by `tokens` in the given order.
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Vocabulary {
            tokens: Vec::new(),
            ids: HashMap::new(),
        };
        for t in RESERVED.iter().map(|s| s.to_string()).chain(tokens.into_iter().map(Into::into)) {
            if vocab.ids.contains_key(&t) {
                return Err(Error::Config(format!("duplicate vocabulary token `{t}`")));
            }
            vocab.ids.insert(t.clone(), vocab.tokens.len());
            vocab.tokens.push(t);
        }
        Ok(vocab)
    }

    /// Total number of ids, reserved ones included.
    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> usize {
        self.id(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = format!("{FILE_MAGIC} {}\n", self.size());
        for t in &self.tokens {
            out.push_str(t);
            out.push('\n');
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let parse_err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            field: if line == 1 { "header" } else { "token" }.to_string(),
            message,
        };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| parse_err(1, "empty file".into()))?;
        let size: usize = header
            .strip_prefix(FILE_MAGIC)
            .map(str::trim)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse_err(1, format!("expected `{FILE_MAGIC} <size>`")))?;
        let body: Vec<&str> = lines.collect();
        if body.len() != size {
            return Err(parse_err(1, format!("header says {size} tokens, found {}", body.len())));
        }
        for (i, (got, want)) in body.iter().zip(RESERVED).enumerate() {
            if *got != want {
                return Err(parse_err(i + 2, format!("reserved id {i} must be `{want}`")));
            }
        }
        if body.len() < RESERVED.len() {
            return Err(parse_err(1, "missing reserved tokens".into()));
        }
        Vocabulary::from_tokens(body[RESERVED.len()..].iter().copied())
    }
}

/// Keep the `max_size` most frequent tokens over all source and reference
/// streams; ties go to the lexicographically smaller token.
pub fn build_vocab(chunks: &[Chunk], max_size: usize) -> Result<Vocabulary> {
    if max_size == 0 {
        return Err(Error::Config("vocabulary max_size must be positive".into()));
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for chunk in chunks {
        let refs = chunk.reference_tokens.iter().flatten();
        for t in chunk.source_tokens.iter().chain(refs) {
            if RESERVED.contains(&t.as_str()) {
                continue;
            }
            *counts.entry(t.as_str()).or_default() += 1;
        }
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    // BTreeMap order is lexicographic, and the sort is stable.
    ranked.sort_by(|a, b| b.1.cmp(&a.1));
    Vocabulary::from_tokens(ranked.into_iter().take(max_size).map(|(t, _)| t))
}

/// Source ids against the fixed vocabulary, plus ids in the extended space
/// where each distinct OOV word gets `vocab.size() + k` by first appearance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtendedEncoding {
    pub base_ids: Vec<usize>,
    pub extended_ids: Vec<usize>,
    pub oov_tokens: Vec<String>,
    pub vocab_size: usize,
}

impl ExtendedEncoding {
    pub fn len(&self) -> usize {
        self.base_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.base_ids.is_empty()
    }

    pub fn extended_size(&self) -> usize {
        self.vocab_size + self.oov_tokens.len()
    }

    /// Extended id of `token` for use as a decoder target: vocabulary id,
    /// else the source-OOV id, else UNK.
    pub fn target_id(&self, token: &str, vocab: &Vocabulary) -> usize {
        if let Some(id) = vocab.id(token) {
            return id;
        }
        self.oov_tokens
            .iter()
            .position(|t| t == token)
            .map_or(UNK, |k| self.vocab_size + k)
    }

    /// Decoder input for an extended id: OOV ids are fed as UNK.
    pub fn input_id(&self, extended_id: usize) -> usize {
        if extended_id >= self.vocab_size {
            UNK
        } else {
            extended_id
        }
    }
}

pub fn encode_extended(tokens: &[String], vocab: &Vocabulary) -> ExtendedEncoding {
    let mut oov_tokens: Vec<String> = Vec::new();
    let mut base_ids = Vec::with_capacity(tokens.len());
    let mut extended_ids = Vec::with_capacity(tokens.len());
    for t in tokens {
        match vocab.id(t) {
            Some(id) => {
                base_ids.push(id);
                extended_ids.push(id);
            }
            None => {
                let k = match oov_tokens.iter().position(|o| o == t) {
                    Some(k) => k,
                    None => {
                        oov_tokens.push(t.clone());
                        oov_tokens.len() - 1
                    }
                };
                base_ids.push(UNK);
                extended_ids.push(vocab.size() + k);
            }
        }
    }
    ExtendedEncoding {
        base_ids,
        extended_ids,
        oov_tokens,
        vocab_size: vocab.size(),
    }
}

pub fn decode_ids(ids: &[usize], vocab: &Vocabulary, oov_tokens: &[String]) -> Result<Vec<String>> {
    ids.iter()
        .map(|&id| {
            if let Some(t) = vocab.token(id) {
                Ok(t.to_string())
            } else {
                oov_tokens
                    .get(id - vocab.size())
                    .cloned()
                    .ok_or_else(|| {
                        Error::OutOfRange(format!(
                            "token id {id} outside extended vocabulary of size {}",
                            vocab.size() + oov_tokens.len()
                        ))
                    })
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chunk(src: &str) -> Chunk {
        Chunk::from_source(src.split_whitespace().map(String::from).collect())
    }

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn most_frequent_kept() {
        let v = build_vocab(&[chunk("a a b")], 1).unwrap();
        assert_eq!(v.size(), 5);
        assert_eq!(v.token(4), Some("a"));
        assert_eq!(v.id("b"), None);
    }

    #[test]
    fn ties_broken_lexicographically() {
        let v = build_vocab(&[chunk("y x y x")], 1).unwrap();
        assert_eq!(v.token(4), Some("x"));
    }

    #[test]
    fn empty_corpus_gives_reserved_only() {
        let v = build_vocab(&[], 10).unwrap();
        assert_eq!(v.tokens(), RESERVED.map(String::from).as_slice());
    }

    #[test]
    fn references_count_toward_vocabulary() {
        let c = chunk("flood").with_reference(toks("rescue rescue"));
        let v = build_vocab(&[c], 1).unwrap();
        assert_eq!(v.token(4), Some("rescue"));
    }

    #[test]
    fn extended_encoding_shares_oov_ids() {
        let v = Vocabulary::from_tokens(["flood", "b", "c", "d", "e", "f"]).unwrap();
        assert_eq!(v.size(), 10);
        let enc = encode_extended(&toks("flood zzz flood zzz"), &v);
        assert_eq!(enc.base_ids, vec![4, UNK, 4, UNK]);
        assert_eq!(enc.extended_ids, vec![4, 10, 4, 10]);
        assert_eq!(enc.oov_tokens, vec!["zzz"]);
    }

    #[test]
    fn all_oov_ids_by_first_appearance() {
        let v = Vocabulary::default();
        let enc = encode_extended(&toks("q r q s"), &v);
        assert_eq!(enc.extended_ids, vec![4, 5, 4, 6]);
        assert_eq!(enc.extended_size(), 7);
    }

    #[test]
    fn decode_out_of_range_is_error() {
        let v = Vocabulary::default();
        let oov = toks("zzz");
        assert_eq!(decode_ids(&[4], &v, &oov).unwrap(), vec!["zzz"]);
        assert!(decode_ids(&[5], &v, &oov).is_err());
    }

    #[test]
    fn vocab_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        let v = Vocabulary::from_tokens(["flood", "rescue"]).unwrap();
        v.save(&path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("auxsumm-vocab v1 6\n[PAD]\n"));
        assert_eq!(Vocabulary::load(&path).unwrap(), v);
    }
}
