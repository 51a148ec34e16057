//! Phase I: rank preprocessed tweets and keep the best-ranked prefix that
//! fits the word budget.

use std::fs;
use std::path::Path;

use crate::corpus::{Chunk, TweetTokens};
use crate::error::{Error, Result};
use crate::tfidf::{term_counts, DocumentFrequencies};

#[derive(Debug, Clone, PartialEq)]
pub struct RankedTweet {
    pub tweet: TweetTokens,
    pub score: f64,
    /// 1-based.
    pub rank: usize,
}

pub trait Ranker {
    /// One score per tweet; higher is better.
    fn scores(&self, tweets: &[TweetTokens]) -> Result<Vec<f64>>;
}

/// Sum of TF-IDF weights of each tweet's content words, with the tweet set
/// as the document collection. Content words are whatever survived
/// preprocessing.
#[derive(Debug, Clone, Copy, Default)]
pub struct ContentTfIdfRanker;

impl Ranker for ContentTfIdfRanker {
    fn scores(&self, tweets: &[TweetTokens]) -> Result<Vec<f64>> {
        let df = DocumentFrequencies::fit(tweets.iter().map(|t| t.tokens.iter()));
        Ok(tweets
            .iter()
            .map(|t| {
                let mut terms: Vec<(&str, usize)> = term_counts(&t.tokens).into_iter().collect();
                terms.sort_unstable();
                terms.iter().map(|(w, c)| *c as f64 * df.idf(w)).sum()
            })
            .collect())
    }
}

/// Externally supplied order: tweet indices (0-based), best first.
#[derive(Debug, Clone)]
pub struct FileRanker {
    order: Vec<usize>,
}

impl FileRanker {
    pub fn new(order: Vec<usize>) -> Self {
        FileRanker { order }
    }

    /// One tweet index per line.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let order = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                l.trim().parse::<usize>().map_err(|e| Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    field: "index".into(),
                    message: e.to_string(),
                })
            })
            .collect::<Result<_>>()?;
        Ok(FileRanker { order })
    }
}

impl Ranker for FileRanker {
    fn scores(&self, tweets: &[TweetTokens]) -> Result<Vec<f64>> {
        let n = tweets.len();
        let mut seen = vec![false; n];
        let mut scores = vec![0.0; n];
        for (pos, &idx) in self.order.iter().enumerate() {
            if idx >= n || seen[idx] {
                return Err(Error::OutOfRange(format!(
                    "ranking entry {idx} is out of range or repeated ({n} tweets)"
                )));
            }
            seen[idx] = true;
            scores[idx] = (n - pos) as f64;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::OutOfRange(format!(
                "ranking lists {} of {n} tweets",
                self.order.len()
            )));
        }
        Ok(scores)
    }
}

/// Stable descending sort by score; equal scores keep input order.
pub fn rank_tweets(tweets: &[TweetTokens], ranker: &dyn Ranker) -> Result<Vec<RankedTweet>> {
    let scores = ranker.scores(tweets)?;
    let mut order: Vec<usize> = (0..tweets.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    Ok(order
        .into_iter()
        .enumerate()
        .map(|(r, i)| RankedTweet {
            tweet: tweets[i].clone(),
            score: scores[i],
            rank: r + 1,
        })
        .collect())
}

/// Take tweets in rank order while the running total stays within `budget`;
/// stop at the first tweet that would overflow it.
pub fn select_until_budget(ranked: &[RankedTweet], budget: usize) -> Result<Chunk> {
    if budget == 0 {
        return Err(Error::Config("selection budget must be positive".into()));
    }
    let mut chunk = Chunk::default();
    for r in ranked {
        if chunk.source_tokens.len() + r.tweet.tokens.len() > budget {
            break;
        }
        chunk.source_tokens.extend(r.tweet.tokens.iter().cloned());
        chunk.origin_ids.push(r.tweet.id.clone());
    }
    Ok(chunk)
}
