//! Pointer-generator network with key-phrase attention and coverage.
//!
//! A single-layer BiLSTM encodes the source; a single-layer LSTM decodes.
//! At step `t` the decoder state `s_t = [h_t; c_t]` scores every encoder
//! state `h_k` with
//!
//! ```text
//! e_k = v . tanh(W_h h_k + W_s s_t + w_c * coverage_k + b_att)
//! ```
//!
//! During training the attention is `w1 * softmax(e) + w2 * softmax(gamma_bar)`
//! where `gamma_bar` carries key-phrase importance per source position; at
//! decode time it is `softmax(e)` unless key-phrases are explicitly requested.
//! The context vector, vocabulary distribution, generation probability and
//! the extended-vocabulary mixture follow the usual pointer-generator
//! construction, and each step's loss adds `lambda * sum_k min(a_k, c_k)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::keyphrase::{gamma_bar_for, KeyPhrase};
use crate::numerics::{Ops, ParamId, ParamStore, Tensor};
use crate::vocab::{encode_extended, ExtendedEncoding, Vocabulary, START, STOP};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    /// Parameters and optimizer state are rounded to `f32` after every
    /// update; arithmetic still runs in `f64`.
    #[default]
    F32,
    F64,
}

impl Precision {
    pub fn round(self, x: f64) -> f64 {
        match self {
            Precision::F32 => x as f32 as f64,
            Precision::F64 => x,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub vocab_size: usize,
    /// Weight of the learned attention.
    pub w1: f64,
    /// Weight of the key-phrase distribution.
    pub w2: f64,
    pub lambda_cov: f64,
    pub max_source_len: usize,
    pub max_target_len: usize,
    /// Use plain attention for examples whose `gamma_bar` is all zero.
    pub uniform_gamma_fallback: bool,
    pub init_range: f64,
    pub precision: Precision,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden_dim: 256,
            embed_dim: 128,
            vocab_size: 50_004,
            w1: 0.5,
            w2: 0.5,
            lambda_cov: 1.0,
            max_source_len: 400,
            max_target_len: 200,
            uniform_gamma_fallback: false,
            init_range: 0.1,
            precision: Precision::F32,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.hidden_dim == 0 || self.embed_dim == 0 || self.vocab_size == 0 {
            return fail("model dimensions must be positive".into());
        }
        if self.max_source_len == 0 || self.max_target_len == 0 {
            return fail("sequence limits must be positive".into());
        }
        if (self.w1 + self.w2 - 1.0).abs() > 1e-9 {
            return fail(format!("w1 + w2 must be 1, got {} + {}", self.w1, self.w2));
        }
        let mixed = self.w1 > 0.0 && self.w1 < 1.0 && self.w2 > 0.0 && self.w2 < 1.0;
        let plain = self.w1 == 1.0 && self.w2 == 0.0;
        if !mixed && !plain {
            return fail(format!(
                "(w1, w2) must lie in (0, 1) or equal (1, 0), got ({}, {})",
                self.w1, self.w2
            ));
        }
        if !(self.lambda_cov >= 0.0 && self.lambda_cov.is_finite()) {
            return fail(format!("lambda_cov must be >= 0, got {}", self.lambda_cov));
        }
        if !(self.init_range > 0.0) {
            return fail("init_range must be positive".into());
        }
        Ok(())
    }

    pub fn attention_dim(&self) -> usize {
        2 * self.hidden_dim
    }

    pub fn state_dim(&self) -> usize {
        2 * self.hidden_dim
    }
}

#[derive(Debug, Clone, Copy)]
struct LstmIds {
    w_ih: ParamId,
    w_hh: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct ParamIds {
    embedding: ParamId,
    enc_fwd: LstmIds,
    enc_bwd: LstmIds,
    reduce_h_w: ParamId,
    reduce_h_b: ParamId,
    reduce_c_w: ParamId,
    reduce_c_b: ParamId,
    dec: LstmIds,
    att_w_h: ParamId,
    att_w_s: ParamId,
    att_w_c: ParamId,
    att_bias: ParamId,
    att_v: ParamId,
    out_w: ParamId,
    out_b: ParamId,
    ptr_context: ParamId,
    ptr_state: ParamId,
    ptr_input: ParamId,
    ptr_bias: ParamId,
}

/// Whether attention mixes in the key-phrase distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionMode {
    Train,
    Decode { keyphrases: bool },
}

/// Encoder output for one source.
#[derive(Debug, Clone)]
pub struct Encoded<V> {
    /// `[N, 2H]` concatenated forward/backward states.
    pub states: V,
    /// `[N, A]` encoder states projected by `W_h`.
    pub projected: V,
    pub len: usize,
    pub initial: DecoderState<V>,
}

#[derive(Debug, Clone)]
pub struct DecoderState<V> {
    pub h: V,
    pub c: V,
    /// Sum of all attention distributions emitted so far.
    pub coverage: V,
    pub step: usize,
}

/// Precomputed `softmax(gamma_bar)` and mixing weights.
#[derive(Debug, Clone)]
pub struct KeyphraseMix<V> {
    pub keyphrase_dist: V,
    pub w1: f64,
    pub w2: f64,
}

#[derive(Debug, Clone)]
pub struct StepVars<V> {
    pub energies: V,
    pub attention: V,
    pub context: V,
    pub p_vocab: V,
    pub p_gen: V,
    pub p_final: V,
}

/// Values recorded for one decoder step of a teacher-forced example.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDiagnostics {
    pub target: usize,
    pub nll: f64,
    pub coverage_penalty: f64,
    pub p_gen: f64,
    pub attention: Vec<f64>,
    /// Coverage entering this step.
    pub coverage: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ExampleOutput<V> {
    /// Mean per-step loss.
    pub loss: V,
    pub steps: Vec<StepDiagnostics>,
}

impl<V> ExampleOutput<V> {
    pub fn mean_nll(&self) -> f64 {
        self.steps.iter().map(|s| s.nll).sum::<f64>() / self.steps.len() as f64
    }

    pub fn mean_coverage_penalty(&self) -> f64 {
        self.steps.iter().map(|s| s.coverage_penalty).sum::<f64>() / self.steps.len() as f64
    }
}

/// One teacher-forcing sample: the encoded source, its key-phrase vector and
/// the target ids in the extended space, terminated by STOP.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub encoding: ExtendedEncoding,
    pub gamma_bar: Option<Vec<f64>>,
    pub target: Vec<usize>,
}

impl Example {
    pub fn new(
        source: &[String],
        reference: &[String],
        vocab: &Vocabulary,
        keyphrases: Option<&[KeyPhrase]>,
        config: &ModelConfig,
    ) -> Result<Self> {
        let source = &source[..source.len().min(config.max_source_len)];
        if source.is_empty() {
            return Err(Error::EmptyInput("example has an empty source".into()));
        }
        let encoding = encode_extended(source, vocab);
        let reference = &reference[..reference.len().min(config.max_target_len)];
        let mut target: Vec<usize> = reference
            .iter()
            .map(|t| encoding.target_id(t, vocab))
            .collect();
        target.push(STOP);
        let gamma_bar = keyphrases.map(|kps| gamma_bar_for(kps, vocab, &encoding));
        Ok(Example {
            encoding,
            gamma_bar,
            target,
        })
    }
}

#[derive(Debug, Clone)]
pub struct AuxPgn {
    config: ModelConfig,
    params: ParamStore,
    ids: ParamIds,
}

impl AuxPgn {
    /// Fresh model with parameters drawn uniformly from `[-init_range, init_range]`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = config.init_range;
        let mut params = ParamStore::new();
        let mut add = |name: &str, shape: &[usize]| {
            let mut t = Tensor::uniform(shape, -r, r, &mut rng);
            for v in t.data_mut() {
                *v = config.precision.round(*v);
            }
            params.register(name, t)
        };
        let (h, e, v) = (config.hidden_dim, config.embed_dim, config.vocab_size);
        let (a, s) = (config.attention_dim(), config.state_dim());
        let mut lstm = |prefix: &str, input: usize| -> Result<LstmIds> {
            Ok(LstmIds {
                w_ih: add(&format!("{prefix}.w_ih"), &[4 * h, input])?,
                w_hh: add(&format!("{prefix}.w_hh"), &[4 * h, h])?,
                bias: add(&format!("{prefix}.bias"), &[4 * h])?,
            })
        };
        let enc_fwd = lstm("encoder.fwd", e)?;
        let enc_bwd = lstm("encoder.bwd", e)?;
        let dec = lstm("decoder", e)?;
        let ids = ParamIds {
            embedding: add("embedding", &[v, e])?,
            enc_fwd,
            enc_bwd,
            reduce_h_w: add("reduce.h.weight", &[h, 2 * h])?,
            reduce_h_b: add("reduce.h.bias", &[h])?,
            reduce_c_w: add("reduce.c.weight", &[h, 2 * h])?,
            reduce_c_b: add("reduce.c.bias", &[h])?,
            dec,
            att_w_h: add("attention.w_h", &[2 * h, a])?,
            att_w_s: add("attention.w_s", &[a, s])?,
            att_w_c: add("attention.w_c", &[a])?,
            att_bias: add("attention.bias", &[a])?,
            att_v: add("attention.v", &[a])?,
            out_w: add("output.weight", &[v, s + 2 * h])?,
            out_b: add("output.bias", &[v])?,
            ptr_context: add("pointer.w_context", &[1, 2 * h])?,
            ptr_state: add("pointer.w_state", &[1, s])?,
            ptr_input: add("pointer.w_input", &[1, e])?,
            ptr_bias: add("pointer.bias", &[1])?,
        };
        Ok(AuxPgn {
            config,
            params,
            ids,
        })
    }

    /// Rebuild a model around previously saved parameters.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        let template = AuxPgn::new(config.clone(), 0)?;
        if params.len() != template.params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter tensors, found {}",
                template.params.len(),
                params.len()
            )));
        }
        let mut store = template.params.clone();
        for (name, id) in template.params.sorted() {
            let t = params
                .by_name(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
            if t.shape() != store.get(id).shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{name}` has shape {:?}, expected {:?}",
                    t.shape(),
                    store.get(id).shape()
                )));
            }
            *store.get_mut(id) = t.clone();
        }
        Ok(AuxPgn {
            config,
            params: store,
            ids: template.ids,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn lstm_cell<O: Ops>(
        &self,
        ops: &mut O,
        ids: LstmIds,
        x: &O::Var,
        h: &O::Var,
        c: &O::Var,
    ) -> Result<(O::Var, O::Var)> {
        let hd = self.config.hidden_dim;
        let w_ih = ops.param(ids.w_ih);
        let w_hh = ops.param(ids.w_hh);
        let b = ops.param(ids.bias);
        let gx = ops.matvec(&w_ih, x)?;
        let gh = ops.matvec(&w_hh, h)?;
        let gates = ops.add_n(&[&gx, &gh, &b])?;
        let i = ops.slice(&gates, 0, hd)?;
        let f = ops.slice(&gates, hd, hd)?;
        let g = ops.slice(&gates, 2 * hd, hd)?;
        let o = ops.slice(&gates, 3 * hd, hd)?;
        let i = ops.sigmoid(&i)?;
        let f = ops.sigmoid(&f)?;
        let g = ops.tanh(&g)?;
        let o = ops.sigmoid(&o)?;
        let fc = ops.mul(&f, c)?;
        let ig = ops.mul(&i, &g)?;
        let c_next = ops.add(&fc, &ig)?;
        let tc = ops.tanh(&c_next)?;
        let h_next = ops.mul(&o, &tc)?;
        Ok((h_next, c_next))
    }

    /// Run the BiLSTM over `base_ids` and derive the decoder's initial state.
    pub fn encode<O: Ops>(&self, ops: &mut O, base_ids: &[usize]) -> Result<Encoded<O::Var>> {
        let n = base_ids.len();
        if n == 0 {
            return Err(Error::EmptyInput("cannot encode an empty source".into()));
        }
        if n > self.config.max_source_len {
            return Err(Error::OutOfRange(format!(
                "source length {n} exceeds max_source_len {}",
                self.config.max_source_len
            )));
        }
        let hd = self.config.hidden_dim;
        let table = ops.param(self.ids.embedding);
        let embeds = base_ids
            .iter()
            .map(|&id| ops.embed_lookup(&table, id))
            .collect::<Result<Vec<_>>>()?;

        let zero = ops.constant(Tensor::zeros(&[hd]));
        let (mut h, mut c) = (zero.clone(), zero.clone());
        let mut fwd = Vec::with_capacity(n);
        for x in &embeds {
            (h, c) = self.lstm_cell(ops, self.ids.enc_fwd, x, &h, &c)?;
            fwd.push(h.clone());
        }
        let (fwd_h, fwd_c) = (h, c);

        let (mut h, mut c) = (zero.clone(), zero);
        let mut bwd = vec![None; n];
        for k in (0..n).rev() {
            (h, c) = self.lstm_cell(ops, self.ids.enc_bwd, &embeds[k], &h, &c)?;
            bwd[k] = Some(h.clone());
        }
        let (bwd_h, bwd_c) = (h, c);

        let rows = fwd
            .iter()
            .zip(&bwd)
            .map(|(f, b)| ops.concat(&[f, b.as_ref().expect("filled")]))
            .collect::<Result<Vec<_>>>()?;
        let row_refs: Vec<&O::Var> = rows.iter().collect();
        let states = ops.stack(&row_refs)?;
        let w_h = ops.param(self.ids.att_w_h);
        let projected = ops.matmul(&states, &w_h)?;

        let hh = ops.concat(&[&fwd_h, &bwd_h])?;
        let cc = ops.concat(&[&fwd_c, &bwd_c])?;
        let (rw, rb) = (ops.param(self.ids.reduce_h_w), ops.param(self.ids.reduce_h_b));
        let h0 = ops.affine(&rw, &hh, &rb)?;
        let (rw, rb) = (ops.param(self.ids.reduce_c_w), ops.param(self.ids.reduce_c_b));
        let c0 = ops.affine(&rw, &cc, &rb)?;
        let coverage = ops.constant(Tensor::zeros(&[n]));
        Ok(Encoded {
            states,
            projected,
            len: n,
            initial: DecoderState {
                h: h0,
                c: c0,
                coverage,
                step: 0,
            },
        })
    }

    /// The key-phrase mixture to use for this example, if any.
    pub fn keyphrase_mix<O: Ops>(
        &self,
        ops: &mut O,
        gamma_bar: Option<&[f64]>,
        len: usize,
        mode: AttentionMode,
    ) -> Result<Option<KeyphraseMix<O::Var>>> {
        let wanted = match mode {
            AttentionMode::Train => true,
            AttentionMode::Decode { keyphrases } => keyphrases,
        };
        if !wanted || self.config.w2 == 0.0 {
            return Ok(None);
        }
        let gamma = match gamma_bar {
            Some(g) if g.len() != len => {
                return Err(Error::shape("keyphrase_mix", &[&[g.len()], &[len]]));
            }
            Some(g) => g.to_vec(),
            None => vec![0.0; len],
        };
        if self.config.uniform_gamma_fallback && gamma.iter().all(|&x| x == 0.0) {
            return Ok(None);
        }
        let g = ops.constant(Tensor::vector(gamma));
        Ok(Some(KeyphraseMix {
            keyphrase_dist: ops.softmax(&g)?,
            w1: self.config.w1,
            w2: self.config.w2,
        }))
    }

    /// Attention energies and the (possibly key-phrase mixed) distribution.
    pub fn attention_step<O: Ops>(
        &self,
        ops: &mut O,
        enc: &Encoded<O::Var>,
        s_t: &O::Var,
        coverage: &O::Var,
        mix: Option<&KeyphraseMix<O::Var>>,
    ) -> Result<(O::Var, O::Var)> {
        let n = enc.len;
        let cov_len = ops.value(coverage).len();
        if cov_len != n {
            return Err(Error::shape("attention_step", &[&[n], &[cov_len]]));
        }
        let w_s = ops.param(self.ids.att_w_s);
        let b = ops.param(self.ids.att_bias);
        let w_c = ops.param(self.ids.att_w_c);
        let v = ops.param(self.ids.att_v);
        let state_term = ops.affine(&w_s, s_t, &b)?;
        let features = ops.add_row(&enc.projected, &state_term)?;
        let cov_term = ops.outer(coverage, &w_c)?;
        let features = ops.add(&features, &cov_term)?;
        let features = ops.tanh(&features)?;
        let energies = ops.matvec(&features, &v)?;
        let learned = ops.softmax(&energies)?;
        let attention = match mix {
            None => learned,
            Some(m) => {
                let a = ops.scale(&learned, m.w1)?;
                let k = ops.scale(&m.keyphrase_dist, m.w2)?;
                ops.add(&a, &k)?
            }
        };
        Ok((energies, attention))
    }

    /// Attention-weighted sum of encoder states.
    pub fn context<O: Ops>(ops: &mut O, attention: &O::Var, enc: &Encoded<O::Var>) -> Result<O::Var> {
        ops.weighted_sum(attention, &enc.states)
    }

    pub fn vocab_dist<O: Ops>(&self, ops: &mut O, s_t: &O::Var, context: &O::Var) -> Result<O::Var> {
        let u = ops.param(self.ids.out_w);
        let b = ops.param(self.ids.out_b);
        let joined = ops.concat(&[s_t, context])?;
        let logits = ops.affine(&u, &joined, &b)?;
        ops.softmax(&logits)
    }

    /// Pre-sigmoid generation gate `w_h* . h* + w_s . s_t + w_x . x_t + b_ptr`.
    pub fn gen_logit<O: Ops>(
        &self,
        ops: &mut O,
        context: &O::Var,
        s_t: &O::Var,
        x_t: &O::Var,
    ) -> Result<O::Var> {
        let wc = ops.param(self.ids.ptr_context);
        let ws = ops.param(self.ids.ptr_state);
        let wx = ops.param(self.ids.ptr_input);
        let b = ops.param(self.ids.ptr_bias);
        let a = ops.matvec(&wc, context)?;
        let s = ops.matvec(&ws, s_t)?;
        let x = ops.matvec(&wx, x_t)?;
        ops.add_n(&[&a, &s, &x, &b])
    }

    pub fn gen_prob<O: Ops>(
        &self,
        ops: &mut O,
        context: &O::Var,
        s_t: &O::Var,
        x_t: &O::Var,
    ) -> Result<O::Var> {
        let z = self.gen_logit(ops, context, s_t, x_t)?;
        ops.sigmoid(&z)
    }

    /// `p_gen * P_vocab(w) + (1 - p_gen) * sum_{i: w_i = w} a_i` over the
    /// extended vocabulary.
    pub fn final_dist<O: Ops>(
        ops: &mut O,
        p_gen: &O::Var,
        p_vocab: &O::Var,
        attention: &O::Var,
        encoding: &ExtendedEncoding,
    ) -> Result<O::Var> {
        let size = encoding.extended_size();
        let generated = ops.pad(p_vocab, size)?;
        let copied = ops.scatter_add(attention, &encoding.extended_ids, size)?;
        ops.scalar_mix(p_gen, &generated, &copied)
    }

    /// [`AuxPgn::final_dist`] from the gate's logit. The copy weight is
    /// computed as `sigmoid(-z)` rather than `1 - p_gen`, which would lose
    /// all precision once `p_gen` rounds towards 1.
    pub fn final_dist_from_logit<O: Ops>(
        ops: &mut O,
        gen_logit: &O::Var,
        p_vocab: &O::Var,
        attention: &O::Var,
        encoding: &ExtendedEncoding,
    ) -> Result<O::Var> {
        let size = encoding.extended_size();
        let generated = ops.pad(p_vocab, size)?;
        let copied = ops.scatter_add(attention, &encoding.extended_ids, size)?;
        ops.gated_mix(gen_logit, &generated, &copied)
    }

    /// `-ln P(target) + lambda * sum_k min(a_k, c_k)`; returns the total,
    /// the likelihood term and the unweighted coverage penalty.
    pub fn step_loss<O: Ops>(
        ops: &mut O,
        p_final: &O::Var,
        target: usize,
        attention: &O::Var,
        coverage: &O::Var,
        lambda: f64,
    ) -> Result<(O::Var, O::Var, O::Var)> {
        let size = ops.value(p_final).len();
        if target >= size {
            return Err(Error::OutOfRange(format!(
                "target id {target} outside extended vocabulary of size {size}"
            )));
        }
        let p = ops.pick(p_final, target)?;
        let logp = ops.log(&p)?;
        let nll = ops.scale(&logp, -1.0)?;
        let overlap = ops.elementwise_min(attention, coverage)?;
        let penalty = ops.sum(&overlap)?;
        let weighted = ops.scale(&penalty, lambda)?;
        let total = ops.add(&nll, &weighted)?;
        Ok((total, nll, penalty))
    }

    /// One decoder step from `state`, feeding the vocabulary id `input_id`.
    pub fn decoder_step<O: Ops>(
        &self,
        ops: &mut O,
        enc: &Encoded<O::Var>,
        state: &DecoderState<O::Var>,
        input_id: usize,
        mix: Option<&KeyphraseMix<O::Var>>,
        encoding: &ExtendedEncoding,
    ) -> Result<(StepVars<O::Var>, DecoderState<O::Var>)> {
        if input_id >= self.config.vocab_size {
            return Err(Error::OutOfRange(format!(
                "decoder input {input_id} is not a vocabulary id"
            )));
        }
        let table = ops.param(self.ids.embedding);
        let x_t = ops.embed_lookup(&table, input_id)?;
        let (h, c) = self.lstm_cell(ops, self.ids.dec, &x_t, &state.h, &state.c)?;
        let s_t = ops.concat(&[&h, &c])?;
        let (energies, attention) = self.attention_step(ops, enc, &s_t, &state.coverage, mix)?;
        let context = Self::context(ops, &attention, enc)?;
        let p_vocab = self.vocab_dist(ops, &s_t, &context)?;
        let gen_logit = self.gen_logit(ops, &context, &s_t, &x_t)?;
        let p_gen = ops.sigmoid(&gen_logit)?;
        let p_final = Self::final_dist_from_logit(ops, &gen_logit, &p_vocab, &attention, encoding)?;
        let coverage = ops.add(&state.coverage, &attention)?;
        Ok((
            StepVars {
                energies,
                attention,
                context,
                p_vocab,
                p_gen,
                p_final,
            },
            DecoderState {
                h,
                c,
                coverage,
                step: state.step + 1,
            },
        ))
    }

    /// Teacher-forced loss of one example: the mean of per-step losses.
    pub fn forward_example<O: Ops>(
        &self,
        ops: &mut O,
        example: &Example,
        lambda: f64,
    ) -> Result<ExampleOutput<O::Var>> {
        let target = &example.target;
        if target.last() != Some(&STOP) {
            return Err(Error::Config("target must be non-empty and end with STOP".into()));
        }
        let encoding = &example.encoding;
        let enc = self.encode(ops, &encoding.base_ids)?;
        let mix = self.keyphrase_mix(
            ops,
            example.gamma_bar.as_deref(),
            enc.len,
            AttentionMode::Train,
        )?;
        let mut state = enc.initial.clone();
        let mut input = START;
        let mut losses = Vec::with_capacity(target.len());
        let mut steps = Vec::with_capacity(target.len());
        for &gold in target {
            let coverage_in = ops.value(&state.coverage).data().to_vec();
            let (vars, next) = self.decoder_step(ops, &enc, &state, input, mix.as_ref(), encoding)?;
            let (loss, nll, penalty) =
                Self::step_loss(ops, &vars.p_final, gold, &vars.attention, &state.coverage, lambda)?;
            steps.push(StepDiagnostics {
                target: gold,
                nll: ops.scalar_value(&nll),
                coverage_penalty: ops.scalar_value(&penalty),
                p_gen: ops.scalar_value(&vars.p_gen),
                attention: ops.value(&vars.attention).data().to_vec(),
                coverage: coverage_in,
            });
            losses.push(loss);
            state = next;
            input = encoding.input_id(gold);
        }
        let refs: Vec<&O::Var> = losses.iter().collect();
        let total = ops.add_n(&refs)?;
        let loss = ops.scale(&total, 1.0 / target.len() as f64)?;
        Ok(ExampleOutput { loss, steps })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Eager, Graph};

    fn toy_config() -> ModelConfig {
        ModelConfig {
            hidden_dim: 4,
            embed_dim: 3,
            vocab_size: 12,
            precision: Precision::F64,
            ..ModelConfig::default()
        }
    }

    fn toy_encoding(vocab_size: usize) -> ExtendedEncoding {
        ExtendedEncoding {
            base_ids: vec![4, 5, 1, 6],
            extended_ids: vec![4, 5, vocab_size, 6],
            oov_tokens: vec!["zzz".into()],
            vocab_size,
        }
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::default().validate().is_ok());
        let plain = ModelConfig { w1: 1.0, w2: 0.0, ..ModelConfig::default() };
        assert!(plain.validate().is_ok());
        let bad = ModelConfig { w1: 0.7, w2: 0.7, ..ModelConfig::default() };
        assert!(bad.validate().is_err());
        let bad = ModelConfig { w1: 0.0, w2: 1.0, ..ModelConfig::default() };
        assert!(bad.validate().is_err());
        let bad = ModelConfig { lambda_cov: -1.0, ..ModelConfig::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn encode_single_token_shape() {
        let m = AuxPgn::new(toy_config(), 1).unwrap();
        let mut e = Eager::new(m.params());
        let enc = m.encode(&mut e, &[4]).unwrap();
        assert_eq!(e.value(&enc.states).shape(), &[1, 8]);
        assert!(m.encode(&mut e, &[]).is_err());
    }

    #[test]
    fn attention_with_zero_gamma_is_half_uniform() {
        let m = AuxPgn::new(toy_config(), 2).unwrap();
        let mut e = Eager::new(m.params());
        let enc = m.encode(&mut e, &[4, 5, 6]).unwrap();
        let s = e.concat(&[&enc.initial.h, &enc.initial.c]).unwrap();
        let (energies, plain) = m
            .attention_step(&mut e, &enc, &s, &enc.initial.coverage, None)
            .unwrap();
        let mix = m.keyphrase_mix(&mut e, None, 3, AttentionMode::Train).unwrap();
        let (_, mixed) = m
            .attention_step(&mut e, &enc, &s, &enc.initial.coverage, mix.as_ref())
            .unwrap();
        let soft = crate::numerics::kernels::softmax_slice(e.value(&energies).data());
        for k in 0..3 {
            assert_eq!(e.value(&plain).data()[k], soft[k]);
            let want = 0.5 * soft[k] + 0.5 / 3.0;
            assert!((e.value(&mixed).data()[k] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn decode_mode_ignores_keyphrases_by_default() {
        let m = AuxPgn::new(toy_config(), 2).unwrap();
        let mut e = Eager::new(m.params());
        let g = [1.0, 0.0];
        assert!(m
            .keyphrase_mix(&mut e, Some(&g), 2, AttentionMode::Decode { keyphrases: false })
            .unwrap()
            .is_none());
        assert!(m
            .keyphrase_mix(&mut e, Some(&g), 2, AttentionMode::Decode { keyphrases: true })
            .unwrap()
            .is_some());
        assert!(m.keyphrase_mix(&mut e, Some(&g), 3, AttentionMode::Train).is_err());
    }

    #[test]
    fn keyphrase_mix_hand_case() {
        // e = [1, 0], gamma = [2, 0], half/half -> about [0.806, 0.194].
        let m = AuxPgn::new(toy_config(), 2).unwrap();
        let mut e = Eager::new(m.params());
        let mix = m
            .keyphrase_mix(&mut e, Some(&[2.0, 0.0]), 2, AttentionMode::Train)
            .unwrap()
            .unwrap();
        let learned = crate::numerics::kernels::softmax_slice(&[1.0, 0.0]);
        let kp = e.value(&mix.keyphrase_dist).data();
        let a: Vec<f64> = (0..2).map(|k| mix.w1 * learned[k] + mix.w2 * kp[k]).collect();
        assert!((a[0] - 0.806).abs() < 1e-3, "{a:?}");
        assert!((a[1] - 0.194).abs() < 1e-3, "{a:?}");
    }

    #[test]
    fn encoder_halves_see_the_right_prefix_and_suffix() {
        let m = AuxPgn::new(toy_config(), 3).unwrap();
        let mut e = Eager::new(m.params());
        let full = m.encode(&mut e, &[4, 5, 6]).unwrap();
        let first = m.encode(&mut e, &[4]).unwrap();
        let last = m.encode(&mut e, &[6]).unwrap();
        let hd = 4;
        let states = e.value(&full.states);
        // Forward half of row 0 only saw token 0; backward half of the last row only saw the last token.
        assert_eq!(&states.row(0)[..hd], &e.value(&first.states).row(0)[..hd]);
        assert_eq!(&states.row(2)[hd..], &e.value(&last.states).row(0)[hd..]);
        assert_ne!(&states.row(0)[hd..], &e.value(&first.states).row(0)[hd..]);
    }

    #[test]
    fn context_matches_explicit_dot_products() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let store = ParamStore::new();
        for _ in 0..20 {
            let (n, a_dim) = (rng.gen_range(1..7), rng.gen_range(1..9));
            let att: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
            let h: Vec<f64> = (0..n * a_dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let mut e = Eager::new(&store);
            let enc = Encoded {
                states: e.constant(Tensor::new(vec![n, a_dim], h.clone()).unwrap()),
                projected: e.constant(Tensor::zeros(&[n, a_dim])),
                len: n,
                initial: DecoderState {
                    h: e.constant(Tensor::zeros(&[1])),
                    c: e.constant(Tensor::zeros(&[1])),
                    coverage: e.constant(Tensor::zeros(&[n])),
                    step: 0,
                },
            };
            let a = e.constant(Tensor::vector(att.clone()));
            let ctx = AuxPgn::context(&mut e, &a, &enc).unwrap();
            let ctx = e.value(&ctx).data();
            for j in 0..a_dim {
                let want: f64 = (0..n).map(|k| att[k] * h[k * a_dim + j]).sum();
                assert!((ctx[j] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn uniform_fallback_flag() {
        let cfg = ModelConfig { uniform_gamma_fallback: true, ..toy_config() };
        let m = AuxPgn::new(cfg, 2).unwrap();
        let mut e = Eager::new(m.params());
        assert!(m.keyphrase_mix(&mut e, Some(&[0.0, 0.0]), 2, AttentionMode::Train).unwrap().is_none());
        assert!(m.keyphrase_mix(&mut e, Some(&[0.0, 1.0]), 2, AttentionMode::Train).unwrap().is_some());
    }

    #[test]
    fn final_dist_hand_case() {
        // V = {a, b} at ids 0, 1; source [a, c] with c OOV -> extended id 2.
        let store = ParamStore::new();
        let mut e = Eager::new(&store);
        let enc = ExtendedEncoding {
            base_ids: vec![0, 1],
            extended_ids: vec![0, 2],
            oov_tokens: vec!["c".into()],
            vocab_size: 2,
        };
        let p_vocab = e.constant(Tensor::vector(vec![0.6, 0.4]));
        let a = e.constant(Tensor::vector(vec![0.3, 0.7]));
        let p_gen = e.constant(Tensor::scalar(0.5));
        let p = AuxPgn::final_dist(&mut e, &p_gen, &p_vocab, &a, &enc).unwrap();
        let p = e.value(&p).data();
        assert!((p[0] - 0.45).abs() < 1e-15);
        assert!((p[1] - 0.20).abs() < 1e-15);
        assert!((p[2] - 0.35).abs() < 1e-15);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);

        let one = e.constant(Tensor::scalar(1.0));
        let p = AuxPgn::final_dist(&mut e, &one, &p_vocab, &a, &enc).unwrap();
        assert_eq!(e.value(&p).data(), &[0.6, 0.4, 0.0]);
        let zero = e.constant(Tensor::scalar(0.0));
        let p = AuxPgn::final_dist(&mut e, &zero, &p_vocab, &a, &enc).unwrap();
        assert_eq!(e.value(&p).data(), &[0.3, 0.0, 0.7]);
    }

    #[test]
    fn step_loss_cases() {
        let store = ParamStore::new();
        let mut e = Eager::new(&store);
        let p = e.constant(Tensor::vector(vec![0.25, 0.75]));
        let a = e.constant(Tensor::vector(vec![0.4, 0.6]));
        let zero = e.constant(Tensor::zeros(&[2]));
        let (total, _, pen) = AuxPgn::step_loss(&mut e, &p, 1, &a, &zero, 1.0).unwrap();
        assert_eq!(e.scalar_value(&pen), 0.0);
        assert_eq!(e.scalar_value(&total), -(0.75f64.ln()));
        let (total, _, pen) = AuxPgn::step_loss(&mut e, &p, 1, &a, &a, 1.0).unwrap();
        assert_eq!(e.scalar_value(&pen), 1.0);
        assert!((e.scalar_value(&total) - (1.0 - 0.75f64.ln())).abs() < 1e-15);
        let (total, _, _) = AuxPgn::step_loss(&mut e, &p, 1, &a, &a, 0.0).unwrap();
        assert_eq!(e.scalar_value(&total), -(0.75f64.ln()));
        assert!(AuxPgn::step_loss(&mut e, &p, 2, &a, &a, 0.0).is_err());
    }

    #[test]
    fn gen_prob_zero_weights_is_half_and_monotone_in_bias() {
        let mut m = AuxPgn::new(toy_config(), 3).unwrap();
        for name in ["pointer.w_context", "pointer.w_state", "pointer.w_input", "pointer.bias"] {
            let id = m.params().id(name).unwrap();
            m.params_mut().get_mut(id).data_mut().fill(0.0);
        }
        let bias = m.params().id("pointer.bias").unwrap();
        let eval = |m: &AuxPgn| {
            let mut e = Eager::new(m.params());
            let ctx = e.constant(Tensor::filled(&[8], 0.3));
            let s = e.constant(Tensor::filled(&[8], -0.2));
            let x = e.constant(Tensor::filled(&[3], 0.1));
            let p = m.gen_prob(&mut e, &ctx, &s, &x).unwrap();
            e.scalar_value(&p)
        };
        assert_eq!(eval(&m), 0.5);
        let mut last = 0.5;
        for b in [0.1, 0.5, 2.0] {
            m.params_mut().get_mut(bias).data_mut()[0] = b;
            let p = eval(&m);
            assert!(p > last);
            last = p;
        }
    }

    #[test]
    fn vocab_dist_uniform_for_zero_output_layer() {
        let mut m = AuxPgn::new(toy_config(), 3).unwrap();
        for name in ["output.weight", "output.bias"] {
            let id = m.params().id(name).unwrap();
            m.params_mut().get_mut(id).data_mut().fill(0.0);
        }
        let mut e = Eager::new(m.params());
        let s = e.constant(Tensor::filled(&[8], 0.3));
        let ctx = e.constant(Tensor::filled(&[8], 0.1));
        let p = m.vocab_dist(&mut e, &s, &ctx).unwrap();
        assert!(e.value(&p).data().iter().all(|&x| x == 1.0 / 12.0));
    }

    #[test]
    fn forward_example_is_finite_positive_and_deterministic() {
        let cfg = toy_config();
        let example = Example {
            encoding: toy_encoding(cfg.vocab_size),
            gamma_bar: Some(vec![0.4, 0.0, 0.0, 1.0]),
            target: vec![5, cfg.vocab_size, STOP],
        };
        let run = || {
            let m = AuxPgn::new(cfg.clone(), 11).unwrap();
            let mut g = Graph::new(m.params());
            let out = m.forward_example(&mut g, &example, 1.0).unwrap();
            g.scalar_value(&out.loss)
        };
        let a = run();
        assert!(a.is_finite() && a > 0.0);
        assert_eq!(a.to_bits(), run().to_bits());
    }

    #[test]
    fn forward_example_requires_stop() {
        let cfg = toy_config();
        let m = AuxPgn::new(cfg.clone(), 1).unwrap();
        let example = Example {
            encoding: toy_encoding(cfg.vocab_size),
            gamma_bar: None,
            target: vec![5],
        };
        assert!(m.forward_example(&mut Eager::new(m.params()), &example, 1.0).is_err());
    }

    #[test]
    fn example_targets_use_extended_ids() {
        let vocab = Vocabulary::from_tokens(["flood", "army"]).unwrap();
        let cfg = ModelConfig { vocab_size: vocab.size(), ..toy_config() };
        let toks = |s: &str| s.split_whitespace().map(String::from).collect::<Vec<_>>();
        let ex = Example::new(&toks("flood zzz army"), &toks("zzz flood qqq"), &vocab, None, &cfg)
            .unwrap();
        assert_eq!(ex.target, vec![6, 4, crate::vocab::UNK, STOP]);
        assert_eq!(ex.encoding.input_id(6), crate::vocab::UNK);
    }
}
