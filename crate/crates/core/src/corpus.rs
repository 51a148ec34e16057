//! Tweet preprocessing, fixed-budget chunking, and the line-delimited JSON
//! dataset format.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

/// Source-side word budget of one sample.
pub const SOURCE_BUDGET: usize = 400;
/// Upper bound on reference summary length.
pub const REFERENCE_BUDGET: usize = 200;
/// Words shorter than this many characters are dropped.
pub const MIN_TOKEN_CHARS: usize = 3;

const ENGLISH_STOPWORDS: &str = include_str!("../data/stopwords_en.txt");

const EMOTICONS: &[&str] = &[
    ":)", ":-)", ":(", ":-(", ":d", ":-d", ";)", ";-)", ":p", ":-p", ":o", ":-o", ":/", ":-/",
    ":\\", ":'(", ":')", ":|", ":-|", ":*", ":-*", "<3", "</3", "xd", "xp", "=)", "=(", "=d",
    ":]", ":[", ":3", ">:(", ">:)", "^_^", "^^", "-_-", "o_o", "t_t", ";_;", "d:", "):", "(:",
];

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Stopwords(HashSet<String>);

impl Stopwords {
    pub fn english() -> Self {
        Self::parse(ENGLISH_STOPWORDS)
    }

    pub fn empty() -> Self {
        Self::default()
    }

    /// One word per line; blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Self {
        Stopwords(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(str::to_lowercase)
                .collect(),
        )
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::parse(&text))
    }

    pub fn contains(&self, word: &str) -> bool {
        self.0.contains(word)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl<S: Into<String>> FromIterator<S> for Stopwords {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        Stopwords(iter.into_iter().map(|s| s.into().to_lowercase()).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawTweet {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<i64>,
}

impl RawTweet {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        RawTweet {
            id: id.into(),
            text: text.into(),
            timestamp: None,
        }
    }
}

/// A tweet after preprocessing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TweetTokens {
    pub id: String,
    pub tokens: Vec<String>,
}

fn is_url(word: &str) -> bool {
    word.starts_with("http://") || word.starts_with("https://") || word.starts_with("www.")
}

fn is_emoticon(word: &str) -> bool {
    EMOTICONS.contains(&word)
}

fn outside_bmp(c: char) -> bool {
    (c as u32) > 0xFFFF
}

/// Lowercase, drop URLs, emoticons, hashtags, usernames, punctuation,
/// stopwords, and words shorter than three characters.
pub fn preprocess_text(text: &str, stopwords: &Stopwords) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let word = word.to_lowercase();
        if is_url(&word) || is_emoticon(&word) || word.starts_with('#') || word.starts_with('@') {
            continue;
        }
        let cleaned: String = word
            .chars()
            .filter(|c| !outside_bmp(*c))
            .map(|c| if c.is_alphanumeric() { c } else { ' ' })
            .collect();
        for piece in cleaned.split_whitespace() {
            if piece.chars().count() >= MIN_TOKEN_CHARS && !stopwords.contains(piece) {
                out.push(piece.to_string());
            }
        }
    }
    out
}

pub fn preprocess_tweet(raw: &RawTweet, stopwords: &Stopwords) -> Vec<String> {
    preprocess_text(&raw.text, stopwords)
}

pub fn preprocess_all(raws: &[RawTweet], stopwords: &Stopwords) -> Vec<TweetTokens> {
    raws.iter()
        .map(|r| TweetTokens {
            id: r.id.clone(),
            tokens: preprocess_tweet(r, stopwords),
        })
        .collect()
}

/// One training or inference sample.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct Chunk {
    pub source_tokens: Vec<String>,
    pub reference_tokens: Option<Vec<String>>,
    pub origin_ids: Vec<String>,
}

impl Chunk {
    pub fn from_source(tokens: Vec<String>) -> Self {
        Chunk {
            source_tokens: tokens,
            ..Chunk::default()
        }
    }

    pub fn with_reference(mut self, reference: Vec<String>) -> Self {
        self.reference_tokens = Some(reference);
        self
    }
}

/// Concatenate tweet token streams in order and cut them into consecutive
/// chunks of exactly `budget` tokens; the last chunk may be shorter. A tweet
/// straddling a boundary is split.
pub fn chunk_corpus(tweets: &[TweetTokens], budget: usize) -> Result<Vec<Chunk>> {
    if budget == 0 {
        return Err(Error::Config("chunk budget must be positive".into()));
    }
    let mut chunks = Vec::new();
    let mut current = Chunk::default();
    for tweet in tweets {
        let mut rest = tweet.tokens.as_slice();
        while !rest.is_empty() {
            let room = budget - current.source_tokens.len();
            let take = room.min(rest.len());
            current.source_tokens.extend_from_slice(&rest[..take]);
            if current.origin_ids.last() != Some(&tweet.id) {
                current.origin_ids.push(tweet.id.clone());
            }
            rest = &rest[take..];
            if current.source_tokens.len() == budget {
                chunks.push(std::mem::take(&mut current));
            }
        }
    }
    if !current.source_tokens.is_empty() {
        chunks.push(current);
    }
    Ok(chunks)
}

/// Read raw tweets: JSON objects `{"id", "text", "timestamp"?}` one per line,
/// or plain text lines (ids become 1-based line numbers).
pub fn read_raw_tweets(path: &Path) -> Result<Vec<RawTweet>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if trimmed.starts_with('{') {
            let tweet: RawTweet = serde_json::from_str(trimmed).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                field: "tweet".into(),
                message: e.to_string(),
            })?;
            out.push(tweet);
        } else {
            out.push(RawTweet::new((i + 1).to_string(), trimmed));
        }
    }
    Ok(out)
}

fn join(tokens: &[String]) -> String {
    tokens.join(" ")
}

fn split(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_string).collect()
}

/// Canonical single-line JSON for one chunk.
pub fn chunk_to_json(chunk: &Chunk) -> String {
    let mut map = Map::new();
    map.insert("source".into(), Value::String(join(&chunk.source_tokens)));
    if let Some(r) = &chunk.reference_tokens {
        map.insert("reference".into(), Value::String(join(r)));
    }
    map.insert(
        "origin_ids".into(),
        Value::Array(chunk.origin_ids.iter().cloned().map(Value::String).collect()),
    );
    Value::Object(map).to_string()
}

fn parse_chunk(line: &str, path: &Path, line_no: usize) -> Result<Chunk> {
    let err = |field: &str, message: String| Error::Parse {
        path: path.to_path_buf(),
        line: line_no,
        field: field.to_string(),
        message,
    };
    let value: Value = serde_json::from_str(line).map_err(|e| err("record", e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| err("record", "expected a JSON object".into()))?;
    let source = match obj.get("source") {
        Some(Value::String(s)) => split(s),
        Some(_) => return Err(err("source", "expected a string".into())),
        None => return Err(err("source", "missing".into())),
    };
    let reference = match obj.get("reference") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(split(s)),
        Some(_) => return Err(err("reference", "expected a string".into())),
    };
    let origin_ids = match obj.get("origin_ids") {
        None => Vec::new(),
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| match v {
                Value::String(s) => Ok(s.clone()),
                _ => Err(err("origin_ids", "expected an array of strings".into())),
            })
            .collect::<Result<_>>()?,
        Some(_) => return Err(err("origin_ids", "expected an array of strings".into())),
    };
    Ok(Chunk {
        source_tokens: source,
        reference_tokens: reference,
        origin_ids,
    })
}

pub fn read_dataset<R: Read>(reader: R, path: &Path) -> Result<Vec<Chunk>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_chunk(&line, path, i + 1)?);
    }
    Ok(out)
}

pub fn load_dataset(path: &Path) -> Result<Vec<Chunk>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(file, path)
}

pub fn write_dataset(chunks: &[Chunk], path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for chunk in chunks {
        writeln!(w, "{}", chunk_to_json(chunk)).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stop(words: &[&str]) -> Stopwords {
        words.iter().copied().collect()
    }

    fn tweets(lengths: &[usize]) -> Vec<TweetTokens> {
        lengths
            .iter()
            .enumerate()
            .map(|(i, &n)| TweetTokens {
                id: format!("t{i}"),
                tokens: (0..n).map(|j| format!("w{i}x{j}")).collect(),
            })
            .collect()
    }

    #[test]
    fn preprocess_removes_url_emoticon_and_stopword() {
        let raw = RawTweet::new("1", "Floods in Chennai http://t.co/x :(");
        assert_eq!(preprocess_tweet(&raw, &stop(&["in"])), vec!["floods", "chennai"]);
    }

    #[test]
    fn preprocess_empty() {
        assert!(preprocess_text("", &Stopwords::english()).is_empty());
    }

    #[test]
    fn preprocess_drops_hashtags_usernames_and_short_words() {
        assert!(preprocess_text("#help @user RT", &Stopwords::empty()).is_empty());
    }

    #[test]
    fn preprocess_strips_punctuation_and_non_bmp() {
        let got = preprocess_text("Rescue-teams, deployed!!! \u{1F600}stay safe...", &stop(&[]));
        assert_eq!(got, vec!["rescue", "teams", "deployed", "stay", "safe"]);
    }

    #[test]
    fn chunking_sizes() {
        let sizes = |lens: &[usize]| -> Vec<usize> {
            chunk_corpus(&tweets(lens), 400)
                .unwrap()
                .iter()
                .map(|c| c.source_tokens.len())
                .collect()
        };
        assert_eq!(sizes(&[300, 300, 300]), vec![400, 400, 100]);
        assert_eq!(sizes(&[400]), vec![400]);
        assert!(sizes(&[]).is_empty());
        assert!(chunk_corpus(&tweets(&[3]), 0).is_err());
    }

    #[test]
    fn chunk_origin_ids_track_split_tweets() {
        let chunks = chunk_corpus(&tweets(&[3, 4]), 5).unwrap();
        assert_eq!(chunks[0].origin_ids, vec!["t0", "t1"]);
        assert_eq!(chunks[1].origin_ids, vec!["t1"]);
    }

    #[test]
    fn dataset_missing_source_names_line_and_field() {
        let text = "{\"source\":\"flood chennai\",\"origin_ids\":[]}\n{\"origin_ids\":[\"a\"]}\n";
        let err = read_dataset(text.as_bytes(), Path::new("mem.jsonl")).unwrap_err();
        match err {
            Error::Parse { line, field, .. } => {
                assert_eq!(line, 2);
                assert_eq!(field, "source");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_dataset_file() {
        assert!(read_dataset("".as_bytes(), Path::new("x")).unwrap().is_empty());
    }
}
