use std::collections::{HashMap, HashSet};

/// Document frequencies over a collection, with smoothed inverse document
/// frequency `ln((1 + n) / (1 + df)) + 1`.
#[derive(Debug, Clone, Default)]
pub struct DocumentFrequencies {
    n_docs: usize,
    df: HashMap<String, usize>,
}

impl DocumentFrequencies {
    pub fn fit<'a, D, T>(docs: D) -> Self
    where
        D: IntoIterator<Item = T>,
        T: IntoIterator<Item = &'a String>,
    {
        let mut df: HashMap<String, usize> = HashMap::new();
        let mut n_docs = 0;
        for doc in docs {
            n_docs += 1;
            let distinct: HashSet<&String> = doc.into_iter().collect();
            for t in distinct {
                *df.entry(t.clone()).or_default() += 1;
            }
        }
        DocumentFrequencies { n_docs, df }
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn idf(&self, term: &str) -> f64 {
        let df = self.df.get(term).copied().unwrap_or(0) as f64;
        ((1.0 + self.n_docs as f64) / (1.0 + df)).ln() + 1.0
    }
}

/// Raw term counts of one document.
pub fn term_counts(tokens: &[String]) -> HashMap<&str, usize> {
    let mut counts = HashMap::new();
    for t in tokens {
        *counts.entry(t.as_str()).or_default() += 1;
    }
    counts
}
