//! Scored key-phrases and the key-phrase word vectors built from them.
//!
//! `gamma` spreads each phrase's score over its words in proportion to their
//! within-phrase frequency and lives on the fixed vocabulary; `gamma_bar`
//! reads it back at each source position.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Chunk, Stopwords};
use crate::error::{Error, Result};
use crate::tfidf::{term_counts, DocumentFrequencies};
use crate::vocab::{ExtendedEncoding, Vocabulary, UNK};

#[derive(Debug, Clone, PartialEq)]
pub struct KeyPhrase {
    pub tokens: Vec<String>,
    pub score: f64,
}

impl KeyPhrase {
    pub fn new(tokens: Vec<String>, score: f64) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Config("key-phrase must have at least one token".into()));
        }
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::Config(format!("key-phrase score {score} outside [0, 1]")));
        }
        Ok(KeyPhrase { tokens, score })
    }
}

/// Source of scored key-phrases for a chunk.
pub trait KeyPhraseScorer {
    fn keyphrases(&self, chunk_index: usize, chunk: &Chunk) -> Vec<KeyPhrase>;
}

/// Default scorer: every 1..=`max_ngram` window of non-stopword tokens is a
/// candidate whose score is the sum of its members' TF-IDF weights within
/// the chunk, normalised so the best candidate scores 1.
#[derive(Debug, Clone)]
pub struct TfIdfScorer {
    df: DocumentFrequencies,
    stopwords: Stopwords,
    pub max_ngram: usize,
    pub top_k: Option<usize>,
}

impl TfIdfScorer {
    /// Fit document frequencies with each chunk's source as one document.
    pub fn fit(chunks: &[Chunk]) -> Self {
        TfIdfScorer {
            df: DocumentFrequencies::fit(chunks.iter().map(|c| c.source_tokens.iter())),
            stopwords: Stopwords::empty(),
            max_ngram: 3,
            top_k: None,
        }
    }

    pub fn with_stopwords(mut self, stopwords: Stopwords) -> Self {
        self.stopwords = stopwords;
        self
    }

    pub fn with_top_k(mut self, k: Option<usize>) -> Self {
        self.top_k = k;
        self
    }

    pub fn score_tokens(&self, tokens: &[String]) -> Vec<KeyPhrase> {
        if tokens.is_empty() {
            return Vec::new();
        }
        let counts = term_counts(tokens);
        let len = tokens.len() as f64;
        let weight =
            |t: &str| counts.get(t).copied().unwrap_or(0) as f64 / len * self.df.idf(t);

        // phrase -> (score, first position)
        let mut candidates: HashMap<&[String], (f64, usize)> = HashMap::new();
        for start in 0..tokens.len() {
            for n in 1..=self.max_ngram.min(tokens.len() - start) {
                let window = &tokens[start..start + n];
                if window.iter().any(|t| self.stopwords.contains(t)) {
                    break;
                }
                candidates
                    .entry(window)
                    .or_insert_with(|| (window.iter().map(|t| weight(t)).sum(), start));
            }
        }
        let mut ranked: Vec<(&[String], f64, usize)> =
            candidates.into_iter().map(|(p, (s, pos))| (p, s, pos)).collect();
        ranked.sort_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then(a.2.cmp(&b.2))
                .then(a.0.len().cmp(&b.0.len()))
        });
        if let Some(k) = self.top_k {
            ranked.truncate(k);
        }
        let top = ranked.first().map_or(0.0, |r| r.1);
        ranked
            .into_iter()
            .map(|(p, s, _)| KeyPhrase {
                tokens: p.to_vec(),
                score: if top > 0.0 { (s / top).clamp(0.0, 1.0) } else { 0.0 },
            })
            .collect()
    }
}

impl KeyPhraseScorer for TfIdfScorer {
    fn keyphrases(&self, _chunk_index: usize, chunk: &Chunk) -> Vec<KeyPhrase> {
        self.score_tokens(&chunk.source_tokens)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct KeyPhraseRecord {
    chunk_index: usize,
    phrase: String,
    score: f64,
}

/// Precomputed key-phrases, passed through unchanged.
#[derive(Debug, Clone, Default)]
pub struct FileScorer {
    by_chunk: BTreeMap<usize, Vec<KeyPhrase>>,
}

impl FileScorer {
    pub fn new(by_chunk: BTreeMap<usize, Vec<KeyPhrase>>) -> Self {
        FileScorer { by_chunk }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut by_chunk: BTreeMap<usize, Vec<KeyPhrase>> = BTreeMap::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let err = |field: &str, message: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                field: field.into(),
                message,
            };
            let rec: KeyPhraseRecord =
                serde_json::from_str(&line).map_err(|e| err("record", e.to_string()))?;
            let tokens: Vec<String> = rec.phrase.split_whitespace().map(String::from).collect();
            let kp = KeyPhrase::new(tokens, rec.score).map_err(|e| err("phrase", e.to_string()))?;
            by_chunk.entry(rec.chunk_index).or_default().push(kp);
        }
        Ok(FileScorer { by_chunk })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for (&chunk_index, kps) in &self.by_chunk {
            for kp in kps {
                let rec = KeyPhraseRecord {
                    chunk_index,
                    phrase: kp.tokens.join(" "),
                    score: kp.score,
                };
                let line = serde_json::to_string(&rec).expect("record serializes");
                writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

impl KeyPhraseScorer for FileScorer {
    fn keyphrases(&self, chunk_index: usize, _chunk: &Chunk) -> Vec<KeyPhrase> {
        self.by_chunk.get(&chunk_index).cloned().unwrap_or_default()
    }
}

pub fn extract_keyphrases(
    chunk_index: usize,
    chunk: &Chunk,
    scorer: &dyn KeyPhraseScorer,
) -> Vec<KeyPhrase> {
    scorer.keyphrases(chunk_index, chunk)
}

/// Within-phrase relative frequency of each word.
pub fn phrase_word_probs(kp: &KeyPhrase) -> BTreeMap<String, f64> {
    let mut probs: BTreeMap<String, f64> = BTreeMap::new();
    let n = kp.tokens.len() as f64;
    for t in &kp.tokens {
        *probs.entry(t.clone()).or_default() += 1.0;
    }
    for p in probs.values_mut() {
        *p /= n;
    }
    probs
}

/// Key-phrase mass per vocabulary id.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyphraseVector {
    pub gamma: Vec<f64>,
}

/// `gamma = sum_i score_i * P(word | phrase_i)`, restricted to the
/// vocabulary. Words outside it contribute nothing.
pub fn build_keyphrase_vector(keyphrases: &[KeyPhrase], vocab: &Vocabulary) -> KeyphraseVector {
    let mut gamma = vec![0.0; vocab.size()];
    for kp in keyphrases {
        for (word, p) in phrase_word_probs(kp) {
            if let Some(id) = vocab.id(&word) {
                gamma[id] += kp.score * p;
            }
        }
    }
    KeyphraseVector { gamma }
}

/// `gamma` read at each source position; OOV positions get 0.
pub fn reduce_keyphrase_vector(gamma: &KeyphraseVector, encoding: &ExtendedEncoding) -> Vec<f64> {
    encoding
        .base_ids
        .iter()
        .map(|&id| if id == UNK { 0.0 } else { gamma.gamma.get(id).copied().unwrap_or(0.0) })
        .collect()
}

/// Convenience: key-phrases to `gamma_bar` for one encoded source.
pub fn gamma_bar_for(
    keyphrases: &[KeyPhrase],
    vocab: &Vocabulary,
    encoding: &ExtendedEncoding,
) -> Vec<f64> {
    reduce_keyphrase_vector(&build_keyphrase_vector(keyphrases, vocab), encoding)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::encode_extended;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn kp(s: &str, score: f64) -> KeyPhrase {
        KeyPhrase::new(toks(s), score).unwrap()
    }

    #[test]
    fn word_probs_are_relative_frequencies() {
        let p = phrase_word_probs(&kp("rescue team", 1.0));
        assert_eq!(p["rescue"], 0.5);
        assert_eq!(p["team"], 0.5);
        assert_eq!(phrase_word_probs(&kp("fire", 1.0))["fire"], 1.0);
        let p = phrase_word_probs(&kp("aid aid camp", 1.0));
        assert!((p["aid"] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p["camp"] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn gamma_single_phrase() {
        let v = Vocabulary::from_tokens(["rescue", "team", "now"]).unwrap();
        let g = build_keyphrase_vector(&[kp("rescue team", 0.8)], &v);
        assert_eq!(g.gamma[v.id("rescue").unwrap()], 0.4);
        assert_eq!(g.gamma[v.id("team").unwrap()], 0.4);
        assert_eq!(g.gamma.iter().filter(|&&x| x != 0.0).count(), 2);

        let enc = encode_extended(&toks("rescue team now"), &v);
        assert_eq!(reduce_keyphrase_vector(&g, &enc), vec![0.4, 0.4, 0.0]);
    }

    #[test]
    fn gamma_accumulates_shared_words() {
        let v = Vocabulary::from_tokens(["flood", "relief"]).unwrap();
        let g = build_keyphrase_vector(&[kp("flood relief", 0.5), kp("flood", 1.0)], &v);
        assert_eq!(g.gamma[v.id("flood").unwrap()], 1.25);
    }

    #[test]
    fn empty_keyphrases_give_zero_gamma() {
        let v = Vocabulary::from_tokens(["flood"]).unwrap();
        let g = build_keyphrase_vector(&[], &v);
        assert!(g.gamma.iter().all(|&x| x == 0.0));
        let enc = encode_extended(&toks("flood flood"), &v);
        assert_eq!(reduce_keyphrase_vector(&g, &enc), vec![0.0, 0.0]);
    }

    #[test]
    fn oov_source_position_is_zero() {
        let v = Vocabulary::from_tokens(["flood"]).unwrap();
        let g = build_keyphrase_vector(&[kp("flood zzz", 1.0)], &v);
        let enc = encode_extended(&toks("zzz flood"), &v);
        assert_eq!(reduce_keyphrase_vector(&g, &enc), vec![0.0, 0.5]);
    }

    #[test]
    fn tfidf_top_phrase_scores_one() {
        let chunk = Chunk::from_source(toks("rescue team"));
        let scorer = TfIdfScorer::fit(std::slice::from_ref(&chunk)).with_top_k(Some(1));
        let kps = extract_keyphrases(0, &chunk, &scorer);
        assert_eq!(kps, vec![kp("rescue team", 1.0)]);
    }

    #[test]
    fn tfidf_single_token() {
        let chunk = Chunk::from_source(toks("flood"));
        let scorer = TfIdfScorer::fit(std::slice::from_ref(&chunk));
        assert_eq!(extract_keyphrases(0, &chunk, &scorer), vec![kp("flood", 1.0)]);
    }

    #[test]
    fn tfidf_empty_source() {
        let chunk = Chunk::default();
        let scorer = TfIdfScorer::fit(&[]);
        assert!(extract_keyphrases(0, &chunk, &scorer).is_empty());
    }

    #[test]
    fn file_scorer_passthrough() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kp.jsonl");
        fs::write(
            &path,
            "{\"chunk_index\":0,\"phrase\":\"army deployed\",\"score\":0.7}\n\
             {\"chunk_index\":2,\"phrase\":\"flood\",\"score\":1.0}\n",
        )
        .unwrap();
        let scorer = FileScorer::load(&path).unwrap();
        let c = Chunk::default();
        assert_eq!(scorer.keyphrases(0, &c), vec![kp("army deployed", 0.7)]);
        assert!(scorer.keyphrases(1, &c).is_empty());
        assert_eq!(scorer.keyphrases(2, &c), vec![kp("flood", 1.0)]);
    }

    #[test]
    fn file_scorer_rejects_bad_score() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kp.jsonl");
        fs::write(&path, "{\"chunk_index\":0,\"phrase\":\"x\",\"score\":1.5}\n").unwrap();
        assert!(matches!(FileScorer::load(&path), Err(Error::Parse { line: 1, .. })));
    }
}
