//! Beam search over the extended vocabulary, and the end-to-end
//! summarization pipeline.

use serde::{Deserialize, Serialize};

use crate::corpus::{preprocess_all, Chunk, RawTweet, Stopwords};
use crate::error::{Error, Result};
use crate::extract::{rank_tweets, select_until_budget, Ranker};
use crate::keyphrase::{gamma_bar_for, KeyPhrase, KeyPhraseScorer};
use crate::model::{AttentionMode, AuxPgn, DecoderState, Encoded, KeyphraseMix};
use crate::numerics::{Eager, EagerVar, Ops};
use crate::vocab::{decode_ids, encode_extended, ExtendedEncoding, Vocabulary, START, STOP};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    pub beam_size: usize,
    /// Tokens that must be emitted before STOP is allowed.
    pub min_length: usize,
    /// Hard cap on emitted tokens, STOP excluded.
    pub max_length: usize,
    pub keyphrase_at_decode: bool,
    /// Rank finished hypotheses by mean instead of total log-probability.
    pub length_normalize: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            beam_size: 5,
            min_length: 35,
            max_length: 200,
            keyphrase_at_decode: false,
            length_normalize: false,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 {
            return Err(Error::Config("beam_size must be at least 1".into()));
        }
        if self.max_length == 0 || self.min_length > self.max_length {
            return Err(Error::Config(format!(
                "need 0 <= min_length <= max_length and max_length >= 1, got {} and {}",
                self.min_length, self.max_length
            )));
        }
        Ok(())
    }
}

/// One decoder step: the distribution over the extended vocabulary and the
/// state to continue from.
pub struct StepResult<S> {
    pub dist: Vec<f64>,
    pub p_gen: Option<f64>,
    pub state: S,
}

/// Anything beam search can drive.
pub trait StepModel {
    type State: Clone;

    fn initial(&self) -> Result<Self::State>;

    /// Advance from `state` after emitting `prev` (START at the first step).
    fn step(&self, state: &Self::State, prev: usize) -> Result<StepResult<Self::State>>;
}

#[derive(Debug, Clone)]
pub struct Hypothesis<S> {
    /// Emitted extended ids, STOP excluded.
    pub token_ids: Vec<usize>,
    /// Sum of step log-probabilities, including the STOP step if finished.
    pub log_prob: f64,
    pub decoder_state: S,
    /// Ended with STOP (as opposed to hitting `max_length`).
    pub finished: bool,
    pub p_gens: Vec<f64>,
}

impl<S> Hypothesis<S> {
    fn score(&self, normalize: bool) -> f64 {
        if normalize {
            let steps = self.token_ids.len() + usize::from(self.finished);
            self.log_prob / steps.max(1) as f64
        } else {
            self.log_prob
        }
    }
}

/// Higher score first; equal scores go to the lexicographically smaller id
/// sequence.
fn better<S>(a: &Hypothesis<S>, b: &Hypothesis<S>, normalize: bool) -> std::cmp::Ordering {
    b.score(normalize)
        .total_cmp(&a.score(normalize))
        .then_with(|| a.token_ids.cmp(&b.token_ids))
}

/// Zero STOP and renormalize.
fn mask_stop(dist: &mut [f64]) {
    if STOP < dist.len() {
        dist[STOP] = 0.0;
    }
    let total: f64 = dist.iter().sum();
    if total > 0.0 {
        for p in dist.iter_mut() {
            *p /= total;
        }
    }
}

/// The `k` most probable entries with non-zero mass, ties to the smaller id.
fn top_k(dist: &[f64], k: usize) -> Vec<(usize, f64)> {
    let mut idx: Vec<usize> = (0..dist.len()).filter(|&i| dist[i] > 0.0).collect();
    idx.sort_by(|&a, &b| dist[b].total_cmp(&dist[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx.into_iter().map(|i| (i, dist[i])).collect()
}

fn step_dist<M: StepModel>(
    model: &M,
    h: &Hypothesis<M::State>,
    config: &DecodeConfig,
) -> Result<StepResult<M::State>> {
    let prev = h.token_ids.last().copied().unwrap_or(START);
    let mut r = model.step(&h.decoder_state, prev)?;
    if h.token_ids.len() < config.min_length {
        mask_stop(&mut r.dist);
    }
    Ok(r)
}

/// Length-unnormalized beam search.
///
/// Each live hypothesis proposes its `2 * beam_size` best continuations; the
/// pool is sorted and scanned best-first, STOP continuations becoming
/// finished and the rest refilling the beam. A hypothesis that reaches
/// `max_length` tokens is complete without STOP. Search ends when
/// `beam_size` hypotheses are complete or nothing is left alive.
pub fn beam_search<M: StepModel>(model: &M, config: &DecodeConfig) -> Result<Hypothesis<M::State>> {
    config.validate()?;
    let beam = config.beam_size;
    let mut live = vec![Hypothesis {
        token_ids: Vec::new(),
        log_prob: 0.0,
        decoder_state: model.initial()?,
        finished: false,
        p_gens: Vec::new(),
    }];
    let mut complete: Vec<Hypothesis<M::State>> = Vec::new();

    while !live.is_empty() && complete.len() < beam {
        let mut pool = Vec::new();
        for h in &live {
            let r = step_dist(model, h, config)?;
            for (w, p) in top_k(&r.dist, 2 * beam) {
                let mut token_ids = h.token_ids.clone();
                let finished = w == STOP;
                if !finished {
                    token_ids.push(w);
                }
                let mut p_gens = h.p_gens.clone();
                p_gens.extend(r.p_gen);
                pool.push(Hypothesis {
                    token_ids,
                    log_prob: h.log_prob + p.ln(),
                    decoder_state: r.state.clone(),
                    finished,
                    p_gens,
                });
            }
        }
        pool.sort_by(|a, b| better(a, b, false));
        live = Vec::with_capacity(beam);
        for h in pool {
            if h.finished || h.token_ids.len() >= config.max_length {
                complete.push(h);
            } else {
                live.push(h);
            }
            if live.len() == beam || complete.len() >= beam {
                break;
            }
        }
    }

    let norm = config.length_normalize;
    let pool = if complete.is_empty() { live } else { complete };
    pool.into_iter()
        .min_by(|a, b| better(a, b, norm))
        .ok_or_else(|| Error::EmptyInput("beam search produced no hypothesis".into()))
}

/// Argmax at every step (ties to the smaller id), same masking as
/// [`beam_search`].
pub fn greedy<M: StepModel>(model: &M, config: &DecodeConfig) -> Result<Hypothesis<M::State>> {
    config.validate()?;
    let mut h = Hypothesis {
        token_ids: Vec::new(),
        log_prob: 0.0,
        decoder_state: model.initial()?,
        finished: false,
        p_gens: Vec::new(),
    };
    while h.token_ids.len() < config.max_length {
        let r = step_dist(model, &h, config)?;
        let Some(&(w, p)) = top_k(&r.dist, 1).first() else {
            return Err(Error::NonFinite { op: "greedy" });
        };
        h.log_prob += p.ln();
        h.p_gens.extend(r.p_gen);
        h.decoder_state = r.state;
        if w == STOP {
            h.finished = true;
            break;
        }
        h.token_ids.push(w);
    }
    Ok(h)
}

/// [`AuxPgn`] bound to one encoded source, with decode-mode attention.
pub struct PgnStepper<'m> {
    model: &'m AuxPgn,
    encoding: &'m ExtendedEncoding,
    enc: Encoded<EagerVar>,
    mix: Option<KeyphraseMix<EagerVar>>,
}

impl<'m> PgnStepper<'m> {
    pub fn new(
        model: &'m AuxPgn,
        encoding: &'m ExtendedEncoding,
        gamma_bar: Option<&[f64]>,
        keyphrase_at_decode: bool,
    ) -> Result<Self> {
        let mut ops = Eager::new(model.params());
        let enc = model.encode(&mut ops, &encoding.base_ids)?;
        let mode = AttentionMode::Decode {
            keyphrases: keyphrase_at_decode,
        };
        let mix = model.keyphrase_mix(&mut ops, gamma_bar, enc.len, mode)?;
        Ok(PgnStepper {
            model,
            encoding,
            enc,
            mix,
        })
    }
}

impl StepModel for PgnStepper<'_> {
    type State = DecoderState<EagerVar>;

    fn initial(&self) -> Result<Self::State> {
        Ok(self.enc.initial.clone())
    }

    fn step(&self, state: &Self::State, prev: usize) -> Result<StepResult<Self::State>> {
        let mut ops = Eager::new(self.model.params());
        let input = self.encoding.input_id(prev);
        let (vars, next) =
            self.model
                .decoder_step(&mut ops, &self.enc, state, input, self.mix.as_ref(), self.encoding)?;
        Ok(StepResult {
            dist: ops.value(&vars.p_final).data().to_vec(),
            p_gen: Some(ops.scalar_value(&vars.p_gen)),
            state: next,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Decoded {
    pub token_ids: Vec<usize>,
    pub tokens: Vec<String>,
    pub log_prob: f64,
    pub finished: bool,
    pub p_gens: Vec<f64>,
}

impl Decoded {
    /// Tokens joined by single spaces.
    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

/// Beam-decode one preprocessed source.
pub fn decode_source(
    model: &AuxPgn,
    vocab: &Vocabulary,
    source: &[String],
    keyphrases: Option<&[KeyPhrase]>,
    config: &DecodeConfig,
) -> Result<Decoded> {
    if vocab.size() != model.config().vocab_size {
        return Err(Error::Config(format!(
            "vocabulary has {} entries but the model expects {}",
            vocab.size(),
            model.config().vocab_size
        )));
    }
    let source = &source[..source.len().min(model.config().max_source_len)];
    if source.is_empty() {
        return Err(Error::EmptyInput("no input after preprocessing".into()));
    }
    let encoding = encode_extended(source, vocab);
    let gamma_bar = keyphrases.map(|k| gamma_bar_for(k, vocab, &encoding));
    let stepper = PgnStepper::new(model, &encoding, gamma_bar.as_deref(), config.keyphrase_at_decode)?;
    let h = beam_search(&stepper, config)?;
    Ok(Decoded {
        tokens: decode_ids(&h.token_ids, vocab, &encoding.oov_tokens)?,
        token_ids: h.token_ids,
        log_prob: h.log_prob,
        finished: h.finished,
        p_gens: h.p_gens,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    /// Phase-I selection fed to the network.
    pub selection: Chunk,
    pub decoded: Decoded,
}

impl Summary {
    pub fn text(&self) -> String {
        self.decoded.text()
    }
}

/// Raw tweets to summary text: preprocess, rank and select under `budget`,
/// then decode.
#[allow(clippy::too_many_arguments)]
pub fn summarize(
    model: &AuxPgn,
    vocab: &Vocabulary,
    tweets: &[RawTweet],
    stopwords: &Stopwords,
    ranker: &dyn Ranker,
    scorer: Option<&dyn KeyPhraseScorer>,
    budget: usize,
    config: &DecodeConfig,
) -> Result<Summary> {
    let pre: Vec<_> = preprocess_all(tweets, stopwords)
        .into_iter()
        .filter(|t| !t.tokens.is_empty())
        .collect();
    if pre.is_empty() {
        return Err(Error::EmptyInput("no input after preprocessing".into()));
    }
    let ranked = rank_tweets(&pre, ranker)?;
    let selection = select_until_budget(&ranked, budget)?;
    if selection.source_tokens.is_empty() {
        return Err(Error::EmptyInput(format!(
            "the best-ranked tweet alone exceeds the {budget}-token budget"
        )));
    }
    let keyphrases = match (config.keyphrase_at_decode, scorer) {
        (true, Some(s)) => Some(s.keyphrases(0, &selection)),
        _ => None,
    };
    let decoded = decode_source(model, vocab, &selection.source_tokens, keyphrases.as_deref(), config)?;
    Ok(Summary { selection, decoded })
}
