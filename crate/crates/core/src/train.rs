//! Adagrad training loop.
//!
//! Update `i` (0-based) draws its minibatch from epoch `i / batches_per_epoch`,
//! whose order is a permutation seeded with `seed + epoch`. Batch selection is
//! therefore a pure function of the iteration counter, and resuming from a
//! checkpoint needs no RNG state.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, CheckpointMeta};
use crate::error::{Error, Result};
use crate::model::{AuxPgn, Example, StepDiagnostics};
use crate::numerics::{Gradients, Graph, Ops, ParamStore, Tensor};

pub const ADAGRAD_EPS: f64 = 1e-10;
pub const METRICS_HEADER: &str = "iteration,loss,coverage_penalty";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub initial_accumulator: f64,
    pub batch_size: usize,
    pub max_iterations: usize,
    /// `None` disables clipping.
    pub grad_clip_norm: Option<f64>,
    pub seed: u64,
    /// Write a checkpoint every this many updates; 0 writes only at exit.
    pub checkpoint_every: usize,
    /// Updates before this one train with `lambda_cov = 0`.
    pub coverage_start_iteration: usize,
    /// Worker threads for the per-example forward/backward passes. Results
    /// are reproducible for a fixed thread count.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.15,
            initial_accumulator: 0.1,
            batch_size: 16,
            max_iterations: 120_000,
            grad_clip_norm: Some(2.0),
            seed: 0,
            checkpoint_every: 5_000,
            coverage_start_iteration: 0,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |x: f64| x > 0.0 && x.is_finite();
        if !positive(self.learning_rate) || !positive(self.initial_accumulator) {
            return Err(Error::Config(
                "learning_rate and initial_accumulator must be positive".into(),
            ));
        }
        if self.batch_size == 0 || self.max_iterations == 0 || self.threads == 0 {
            return Err(Error::Config(
                "batch_size, max_iterations and threads must be at least 1".into(),
            ));
        }
        if let Some(c) = self.grad_clip_norm {
            if !positive(c) {
                return Err(Error::Config(format!("grad_clip_norm must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

/// `acc += g^2; param -= lr * g / (sqrt(acc) + eps)`, elementwise.
pub fn adagrad_update(
    param: &mut Tensor,
    grad: &Tensor,
    accumulator: &mut Tensor,
    lr: f64,
    eps: f64,
) -> Result<()> {
    if param.shape() != grad.shape() || param.shape() != accumulator.shape() {
        return Err(Error::shape(
            "adagrad_update",
            &[param.shape(), grad.shape(), accumulator.shape()],
        ));
    }
    for ((p, &g), a) in param
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .zip(accumulator.data_mut())
    {
        *a += g * g;
        *p -= lr * g / (a.sqrt() + eps);
    }
    Ok(())
}

/// Example indices used by update `iteration` (0-based).
pub fn batch_indices(n: usize, batch_size: usize, seed: u64, iteration: usize) -> Vec<usize> {
    let per_epoch = n.div_ceil(batch_size);
    let epoch = iteration / per_epoch;
    let pos = iteration % per_epoch;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed.wrapping_add(epoch as u64)));
    order[pos * batch_size..((pos + 1) * batch_size).min(n)].to_vec()
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    /// Completed updates, counting this one.
    pub iteration: usize,
    /// Batch-mean loss.
    pub loss: f64,
    /// Batch mean of per-example mean coverage penalties (unweighted).
    pub coverage_penalty: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    pub batch: Vec<usize>,
    /// Per-example step diagnostics, in batch order.
    pub diagnostics: Vec<Vec<StepDiagnostics>>,
}

impl IterationRecord {
    pub fn csv_line(&self) -> String {
        format!("{},{},{}", self.iteration, self.loss, self.coverage_penalty)
    }
}

#[derive(Debug, Clone)]
pub struct Trainer {
    model: AuxPgn,
    accumulators: ParamStore,
    config: TrainConfig,
    iteration: usize,
}

struct Partial {
    grads: Gradients,
    loss: f64,
    penalty: f64,
    diagnostics: Vec<Vec<StepDiagnostics>>,
}

impl Trainer {
    pub fn new(model: AuxPgn, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut accumulators = ParamStore::new();
        // Same registration order as the parameters, so ids line up.
        for id in model.params().ids() {
            let shape = model.params().get(id).shape();
            let init = model.config().precision.round(config.initial_accumulator);
            accumulators.register(model.params().name(id), Tensor::filled(shape, init))?;
        }
        Ok(Trainer {
            model,
            accumulators,
            config,
            iteration: 0,
        })
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        let CheckpointMeta {
            mut model,
            train,
            iteration,
            dtype,
            ..
        } = ckpt.meta;
        model.precision = dtype;
        let model = AuxPgn::from_params(model, ckpt.params)?;
        let mut t = Trainer::new(model, train)?;
        let names: Vec<(String, _)> = t
            .accumulators
            .sorted()
            .map(|(n, id)| (n.to_string(), id))
            .collect();
        if ckpt.accumulators.len() != names.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} accumulators, found {}",
                names.len(),
                ckpt.accumulators.len()
            )));
        }
        for (name, id) in names {
            let acc = ckpt
                .accumulators
                .by_name(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing accumulator `{name}`")))?;
            if acc.shape() != t.accumulators.get(id).shape() {
                return Err(Error::Checkpoint(format!("accumulator `{name}` has the wrong shape")));
            }
            *t.accumulators.get_mut(id) = acc.clone();
        }
        t.iteration = iteration;
        Ok(t)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            meta: CheckpointMeta {
                model: self.model.config().clone(),
                train: self.config.clone(),
                iteration: self.iteration,
                seed: self.config.seed,
                dtype: self.model.config().precision,
            },
            params: self.model.params().clone(),
            accumulators: self.accumulators.clone(),
        }
    }

    pub fn model(&self) -> &AuxPgn {
        &self.model
    }

    pub fn into_model(self) -> AuxPgn {
        self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Extend (or shorten) the run without touching anything else.
    pub fn set_max_iterations(&mut self, n: usize) {
        self.config.max_iterations = n;
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn accumulators(&self) -> &ParamStore {
        &self.accumulators
    }

    /// Coverage weight in effect for update `iteration` (0-based).
    pub fn lambda_at(&self, iteration: usize) -> f64 {
        if iteration < self.config.coverage_start_iteration {
            0.0
        } else {
            self.model.config().lambda_cov
        }
    }

    fn partial(&self, examples: &[&Example], lambda: f64, scale: f64) -> Result<Partial> {
        let mut p = Partial {
            grads: Gradients::empty(),
            loss: 0.0,
            penalty: 0.0,
            diagnostics: Vec::with_capacity(examples.len()),
        };
        for ex in examples {
            let mut g = Graph::new(self.model.params());
            let out = self.model.forward_example(&mut g, ex, lambda)?;
            let loss = g.scalar_value(&out.loss);
            p.grads.accumulate(&g.backward(out.loss), scale);
            p.loss += scale * loss;
            p.penalty += scale * out.mean_coverage_penalty();
            p.diagnostics.push(out.steps);
        }
        Ok(p)
    }

    /// Batch-mean loss gradient. Examples are split into contiguous runs,
    /// one per thread, and the partial sums are combined in run order.
    fn batch_gradients(&self, batch: &[&Example], lambda: f64) -> Result<Partial> {
        let scale = 1.0 / batch.len() as f64;
        let threads = self.config.threads.min(batch.len());
        if threads <= 1 {
            return self.partial(batch, lambda, scale);
        }
        let per = batch.len().div_ceil(threads);
        let partials: Vec<Result<Partial>> = std::thread::scope(|s| {
            let handles: Vec<_> = batch
                .chunks(per)
                .map(|run| s.spawn(move || self.partial(run, lambda, scale)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("training worker panicked"))
                .collect()
        });
        let mut total = Partial {
            grads: Gradients::empty(),
            loss: 0.0,
            penalty: 0.0,
            diagnostics: Vec::with_capacity(batch.len()),
        };
        for p in partials {
            let p = p?;
            total.grads.accumulate(&p.grads, 1.0);
            total.loss += p.loss;
            total.penalty += p.penalty;
            total.diagnostics.extend(p.diagnostics);
        }
        Ok(total)
    }

    /// One minibatch update.
    pub fn step(&mut self, examples: &[Example]) -> Result<IterationRecord> {
        if examples.is_empty() {
            return Err(Error::EmptyInput("training set is empty".into()));
        }
        let it = self.iteration;
        let batch = batch_indices(examples.len(), self.config.batch_size, self.config.seed, it);
        let refs: Vec<&Example> = batch.iter().map(|&i| &examples[i]).collect();
        let lambda = self.lambda_at(it);
        let fail = |msg: String| Error::Training(format!("update {}, batch {batch:?}: {msg}", it + 1));

        let Partial {
            mut grads,
            loss,
            penalty,
            diagnostics,
        } = self.batch_gradients(&refs, lambda).map_err(|e| fail(e.to_string()))?;
        if !loss.is_finite() {
            return Err(fail(format!("non-finite loss {loss}")));
        }
        let grad_norm = grads.global_norm();
        if !grad_norm.is_finite() {
            return Err(fail(format!("non-finite gradient norm {grad_norm}")));
        }
        if let Some(c) = self.config.grad_clip_norm {
            if grad_norm > c {
                grads.scale(c / grad_norm);
            }
        }

        let precision = self.model.config().precision;
        let lr = self.config.learning_rate;
        for (id, g) in grads.iter() {
            let param = self.model.params_mut().get_mut(id);
            let acc = self.accumulators.get_mut(id);
            adagrad_update(param, g, acc, lr, ADAGRAD_EPS)?;
            for v in param.data_mut() {
                *v = precision.round(*v);
            }
            for v in acc.data_mut() {
                *v = precision.round(*v);
            }
        }
        self.iteration += 1;
        Ok(IterationRecord {
            iteration: self.iteration,
            loss,
            coverage_penalty: penalty,
            grad_norm,
            batch,
            diagnostics,
        })
    }
}

/// Where [`train`] writes its artifacts.
#[derive(Debug, Clone, Default)]
pub struct TrainOutputs {
    /// CSV metrics log; appended to if it already has content.
    pub metrics: Option<PathBuf>,
    /// Checkpoints are written as `ckpt-<iteration>.bin`.
    pub checkpoint_dir: Option<PathBuf>,
}

pub fn checkpoint_path(dir: &Path, iteration: usize) -> PathBuf {
    dir.join(format!("ckpt-{iteration:08}.bin"))
}

/// Run updates until `max_iterations`, logging every one and checkpointing
/// at the configured cadence and at exit. Returns the records of this call.
pub fn train(
    trainer: &mut Trainer,
    examples: &[Example],
    outputs: &TrainOutputs,
    mut on_iteration: impl FnMut(&IterationRecord),
) -> Result<Vec<IterationRecord>> {
    if examples.is_empty() {
        return Err(Error::EmptyInput("training set is empty".into()));
    }
    let mut log = match &outputs.metrics {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| Error::io(path, e))?;
            if fresh {
                writeln!(f, "{METRICS_HEADER}").map_err(|e| Error::io(path, e))?;
            }
            Some((f, path.clone()))
        }
        None => None,
    };
    let every = trainer.config().checkpoint_every;
    let mut records = Vec::new();
    while trainer.iteration() < trainer.config().max_iterations {
        let mut rec = trainer.step(examples)?;
        if let Some((f, path)) = log.as_mut() {
            writeln!(f, "{}", rec.csv_line()).map_err(|e| Error::io(path.clone(), e))?;
        }
        on_iteration(&rec);
        if let Some(dir) = &outputs.checkpoint_dir {
            if every > 0 && rec.iteration % every == 0 {
                trainer.checkpoint().save(&checkpoint_path(dir, rec.iteration))?;
            }
        }
        rec.diagnostics.clear();
        records.push(rec);
    }
    if let Some(dir) = &outputs.checkpoint_dir {
        let path = checkpoint_path(dir, trainer.iteration());
        if !path.exists() {
            trainer.checkpoint().save(&path)?;
        }
    }
    Ok(records)
}
