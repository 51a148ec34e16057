//! ROUGE-1, ROUGE-2 and ROUGE-L against a single reference.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    pub fn from_pr(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        RougeScore {
            precision,
            recall,
            f1,
        }
    }

    fn from_counts(overlap: usize, candidate: usize, reference: usize) -> Self {
        if candidate == 0 || reference == 0 {
            return RougeScore::default();
        }
        Self::from_pr(
            overlap as f64 / candidate as f64,
            overlap as f64 / reference as f64,
        )
    }
}

fn fold(tokens: &[String]) -> Vec<String> {
    tokens.iter().map(|t| t.to_lowercase()).collect()
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_default() += 1;
        }
    }
    counts
}

/// Clipped n-gram overlap.
pub fn rouge_n(candidate: &[String], reference: &[String], n: usize) -> Result<RougeScore> {
    if n == 0 {
        return Err(Error::Config("ROUGE-N needs n >= 1".into()));
    }
    let (c, r) = (fold(candidate), fold(reference));
    let cand = ngram_counts(&c, n);
    let refc = ngram_counts(&r, n);
    let overlap: usize = cand
        .iter()
        .map(|(g, &k)| k.min(refc.get(g).copied().unwrap_or(0)))
        .sum();
    let total_c = c.len().saturating_sub(n - 1);
    let total_r = r.len().saturating_sub(n - 1);
    Ok(RougeScore::from_counts(overlap, total_c, total_r))
}

pub fn lcs_length(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l(candidate: &[String], reference: &[String]) -> RougeScore {
    let (c, r) = (fold(candidate), fold(reference));
    RougeScore::from_counts(lcs_length(&c, &r), c.len(), r.len())
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PairScores {
    pub rouge1: RougeScore,
    pub rouge2: RougeScore,
    pub rouge_l: RougeScore,
}

pub fn score_pair(candidate: &[String], reference: &[String]) -> PairScores {
    PairScores {
        rouge1: rouge_n(candidate, reference, 1).expect("n = 1"),
        rouge2: rouge_n(candidate, reference, 2).expect("n = 2"),
        rouge_l: rouge_l(candidate, reference),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub pairs: Vec<PairScores>,
    pub mean: PairScores,
}

fn mean_of(scores: impl Iterator<Item = RougeScore> + Clone, n: f64) -> RougeScore {
    RougeScore {
        precision: scores.clone().map(|s| s.precision).sum::<f64>() / n,
        recall: scores.clone().map(|s| s.recall).sum::<f64>() / n,
        f1: scores.map(|s| s.f1).sum::<f64>() / n,
    }
}

/// Per-pair scores and their arithmetic means.
pub fn evaluate_dataset(candidates: &[Vec<String>], references: &[Vec<String>]) -> Result<EvaluationReport> {
    if candidates.len() != references.len() {
        return Err(Error::Config(format!(
            "{} candidates but {} references",
            candidates.len(),
            references.len()
        )));
    }
    let pairs: Vec<PairScores> = candidates
        .iter()
        .zip(references)
        .map(|(c, r)| score_pair(c, r))
        .collect();
    let n = pairs.len().max(1) as f64;
    let mean = PairScores {
        rouge1: mean_of(pairs.iter().map(|p| p.rouge1), n),
        rouge2: mean_of(pairs.iter().map(|p| p.rouge2), n),
        rouge_l: mean_of(pairs.iter().map(|p| p.rouge_l), n),
    };
    Ok(EvaluationReport { pairs, mean })
}

impl EvaluationReport {
    pub fn to_csv(&self) -> String {
        fn row(out: &mut String, id: &str, p: &PairScores) {
            let cells: Vec<String> = [p.rouge1, p.rouge2, p.rouge_l]
                .iter()
                .flat_map(|s| [s.precision, s.recall, s.f1])
                .map(|v| format!("{v:.6}"))
                .collect();
            writeln!(out, "{id},{}", cells.join(",")).expect("write to string");
        }
        let mut out = String::from("pair_id,r1_p,r1_r,r1_f1,r2_p,r2_r,r2_f1,rl_p,rl_r,rl_f1\n");
        for (i, p) in self.pairs.iter().enumerate() {
            row(&mut out, &i.to_string(), p);
        }
        row(&mut out, "mean", &self.mean);
        out
    }
}
