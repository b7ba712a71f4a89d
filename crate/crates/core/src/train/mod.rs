//! Training loop, decoding, metrics and the experiment harnesses.

mod breakdown;
mod data;
mod decode;
pub mod experiments;
mod metrics;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapters::{AdapterError, ConvGraph};
use crate::backbone::{BackboneError, Model, TrainMode};
use crate::corpus::CorpusError;
use crate::graph::GraphReprError;
use crate::scalar::Scalar;
use crate::tensor::{Adam, AdamConfig, ParamId, Tape, Tensor, TensorError};
use crate::tokenizer::{TokenizerError, Vocabulary};

pub use breakdown::{breakdown, bucket_deltas, BucketScore, Property};
pub use data::{prepare, prepare_example, relation_table, vocab_corpus, DataConfig, Example};
pub use decode::{beam_decode, beam_search, beam_search_all, Hypothesis, ModelScorer, StepScorer};
pub use metrics::{bleu, bleu_stats, chrf, BleuStats, CHAR_ORDER, CHRF_BETA, WORD_ORDER};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Backbone(#[from] BackboneError),
    #[error(transparent)]
    Adapter(#[from] AdapterError),
    #[error(transparent)]
    Graph(#[from] GraphReprError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("metric: {0}")]
    Metric(String),
    #[error("config: {0}")]
    Config(String),
    #[error("no training data")]
    EmptyData,
    #[error("loss diverged at step {step} (loss {loss}, example {example}, lr {lr})")]
    Divergence { step: usize, loss: f64, example: usize, lr: f64 },
}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        TrainError::Backbone(e.into())
    }
}

pub const ADAPTER_LR: f64 = 1e-4;
pub const FINETUNE_LR: f64 = 3e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Peak learning rate; `None` picks the default for `mode`.
    pub lr: Option<f64>,
    pub batch: usize,
    pub beam: usize,
    pub max_steps: usize,
    /// Epochs without dev improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub mode: TrainMode,
    pub data: DataConfig,
    /// Longest generated sentence, in tokens.
    pub max_decode_len: usize,
    /// Evaluate on dev every this many epochs.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: None,
            batch: 4,
            beam: 5,
            max_steps: 20_000,
            patience: 5,
            seed: 0,
            mode: TrainMode::AdaptersOnly,
            data: DataConfig::default(),
            max_decode_len: 64,
            eval_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn learning_rate(&self) -> f64 {
        self.lr.unwrap_or(match self.mode {
            TrainMode::AdaptersOnly => ADAPTER_LR,
            _ => FINETUNE_LR,
        })
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let lr = self.learning_rate();
        let bad = |what: &str| Err(TrainError::Config(format!("{what} must be positive")));
        if !(lr > 0.0 && lr.is_finite()) {
            return bad("learning rate");
        }
        if self.batch == 0 {
            return bad("batch");
        }
        if self.beam == 0 {
            return bad("beam");
        }
        if self.max_steps == 0 {
            return bad("max_steps");
        }
        if self.patience == 0 {
            return bad("patience");
        }
        if self.max_decode_len == 0 {
            return bad("max_decode_len");
        }
        if self.eval_every == 0 {
            return bad("eval_every");
        }
        Ok(())
    }
}

/// Linear decay from `base` at step 0 to 0 at `max_steps`, no warm-up.
pub fn lr_at(base: f64, step: usize, max_steps: usize) -> f64 {
    base * (1.0 - step as f64 / max_steps as f64).max(0.0)
}

/// Patience-based early stopping on a score where higher is better.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopper {
    pub patience: usize,
    pub best: Option<f64>,
    /// 1-based epoch of the best score.
    pub best_epoch: usize,
    pub epoch: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Improved,
    Continue,
    Stop,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        EarlyStopper {
            patience,
            best: None,
            best_epoch: 0,
            epoch: 0,
        }
    }

    /// Records the score of the next epoch. Only strict improvements count.
    pub fn observe(&mut self, score: f64) -> Verdict {
        self.epoch += 1;
        if self.best.is_none_or(|b| score > b) {
            self.best = Some(score);
            self.best_epoch = self.epoch;
            Verdict::Improved
        } else if self.epoch - self.best_epoch >= self.patience {
            Verdict::Stop
        } else {
            Verdict::Continue
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochEntry {
    pub epoch: usize,
    pub step: usize,
    pub train_loss: f64,
    pub dev_bleu: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub steps: usize,
    pub log: Vec<LogEntry>,
    pub epochs: Vec<EpochEntry>,
    /// Epoch whose weights were kept, when dev data was given.
    pub best_epoch: Option<usize>,
    pub best_dev_bleu: Option<f64>,
    pub stopped_early: bool,
    pub wall_secs: f64,
}

fn graph_for<'a, T: Scalar>(model: &Model<T>, ex: &'a Example<T>) -> Option<&'a ConvGraph<T>> {
    model.needs_graph().then_some(&ex.graph)
}

type ParamGrads<T> = Vec<(ParamId, Tensor<T>)>;

/// Loss and parameter gradients of one example.
fn example_grads<T: Scalar>(model: &Model<T>, ex: &Example<T>, scale: f64) -> Result<(f64, ParamGrads<T>), TrainError> {
    let mut tape = Tape::new().with_finite_checks(false);
    let loss = model.loss(&mut tape, &ex.src, &ex.tgt, graph_for(model, ex))?;
    let value = tape.value(loss).scalar().as_f64();
    if !value.is_finite() {
        return Ok((value, Vec::new()));
    }
    let scaled = tape.scale(loss, T::lit(scale))?;
    Ok((value, tape.param_gradients(scaled)?))
}

fn snapshot<T: Scalar>(model: &Model<T>) -> Vec<(usize, Tensor<T>)> {
    model
        .store
        .iter()
        .filter(|(_, p)| p.trainable)
        .map(|(id, p)| (id.index(), p.value.clone()))
        .collect()
}

fn restore<T: Scalar>(model: &mut Model<T>, snap: Vec<(usize, Tensor<T>)>) {
    let mut it = snap.into_iter().peekable();
    for (i, p) in model.store.iter_mut().enumerate() {
        if it.peek().is_some_and(|(j, _)| *j == i) {
            p.value = it.next().expect("peeked").1;
        }
    }
}

/// Greedy decodes as text.
pub fn greedy_texts<T: Scalar>(model: &Model<T>, examples: &[Example<T>], vocab: &Vocabulary, max_len: usize) -> Result<Vec<String>, TrainError> {
    decode_texts(model, examples, vocab, 1, max_len)
}

/// Beam decodes as text, in parallel over examples.
pub fn decode_texts<T: Scalar>(
    model: &Model<T>,
    examples: &[Example<T>],
    vocab: &Vocabulary,
    beam: usize,
    max_len: usize,
) -> Result<Vec<String>, TrainError> {
    examples
        .par_iter()
        .map(|ex| {
            let ids = beam_decode(model, &ex.src, graph_for(model, ex), beam, max_len)?;
            Ok(vocab.decode(&ids)?.trim().to_string())
        })
        .collect()
}

/// Trains `model` in place. With dev data the weights of the best dev-BLEU
/// epoch (greedy decoding) are restored at the end; without, the final
/// weights are kept.
pub fn train<T: Scalar>(
    model: &mut Model<T>,
    train_set: &[Example<T>],
    dev: &[Example<T>],
    vocab: &Vocabulary,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptyData);
    }
    let start = Instant::now();
    model.set_mode(cfg.mode);
    if model.store.trainable_count() == 0 {
        return Err(TrainError::Config(format!("mode {} leaves nothing to train", cfg.mode)));
    }
    let base_lr = cfg.learning_rate();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(&model.store, AdamConfig::default());
    let mut stopper = EarlyStopper::new(cfg.patience);
    let mut best = None;
    let mut out = TrainOutcome {
        steps: 0,
        log: Vec::new(),
        epochs: Vec::new(),
        best_epoch: None,
        best_dev_bleu: None,
        stopped_early: false,
        wall_secs: 0.0,
    };
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut epoch = 0;
    'epochs: while out.steps < cfg.max_steps {
        epoch += 1;
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch) {
            if out.steps >= cfg.max_steps {
                break;
            }
            let lr = lr_at(base_lr, out.steps, cfg.max_steps);
            let scale = 1.0 / chunk.len() as f64;
            let results: Vec<_> = chunk
                .par_iter()
                .map(|&i| example_grads(model, &train_set[i], scale))
                .collect::<Result<_, _>>()?;
            model.store.zero_grad();
            let mut loss = 0.0;
            for (&i, (l, grads)) in chunk.iter().zip(results) {
                if !l.is_finite() {
                    return Err(TrainError::Divergence {
                        step: out.steps,
                        loss: l,
                        example: i,
                        lr,
                    });
                }
                loss += l * scale;
                for (id, g) in grads {
                    model.store.get_mut(id).grad.add_assign(&g);
                }
            }
            adam.step(&mut model.store, lr);
            out.steps += 1;
            out.log.push(LogEntry {
                step: out.steps,
                epoch,
                loss,
                lr,
            });
            epoch_loss += loss;
            batches += 1;
        }
        let mut entry = EpochEntry {
            epoch,
            step: out.steps,
            train_loss: epoch_loss / batches.max(1) as f64,
            dev_bleu: None,
        };
        if !dev.is_empty() && epoch % cfg.eval_every == 0 {
            let hyps = greedy_texts(model, dev, vocab, cfg.max_decode_len)?;
            let refs: Vec<&str> = dev.iter().map(|e| e.text.as_str()).collect();
            let score = bleu(&hyps, &refs)?;
            entry.dev_bleu = Some(score);
            match stopper.observe(score) {
                Verdict::Improved => best = Some((epoch, score, snapshot(model))),
                Verdict::Continue => {}
                Verdict::Stop => {
                    out.stopped_early = true;
                    out.epochs.push(entry);
                    break 'epochs;
                }
            }
        }
        out.epochs.push(entry);
    }
    if let Some((epoch, score, snap)) = best {
        restore(model, snap);
        out.best_epoch = Some(epoch);
        out.best_dev_bleu = Some(score);
    }
    out.wall_secs = start.elapsed().as_secs_f64();
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExampleScore {
    pub hypothesis: String,
    pub reference: String,
    pub bleu: f64,
    pub chrf: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub bleu: f64,
    pub chrf: f64,
    pub examples: Vec<ExampleScore>,
    pub buckets: Vec<BucketScore>,
    pub trainable: usize,
    pub total_params: usize,
    pub trainable_fraction: f64,
    pub steps: usize,
    pub wall_secs: f64,
}

/// Scores decoded hypotheses against the examples' sentences.
pub fn score<T: Scalar>(hyps: &[String], examples: &[Example<T>], model: &Model<T>) -> Result<MetricsReport, TrainError> {
    let refs: Vec<&str> = examples.iter().map(|e| e.text.as_str()).collect();
    let stats: Vec<_> = examples.iter().map(|e| e.stats).collect();
    let per = hyps
        .iter()
        .zip(&refs)
        .map(|(h, r)| {
            Ok(ExampleScore {
                hypothesis: h.clone(),
                reference: r.to_string(),
                bleu: bleu(&[h], &[r])?,
                chrf: chrf(&[h], &[r])?,
            })
        })
        .collect::<Result<Vec<_>, TrainError>>()?;
    let trainable = model.store.trainable_count();
    let total = model.store.total_count();
    Ok(MetricsReport {
        bleu: bleu(hyps, &refs)?,
        chrf: chrf(hyps, &refs)?,
        examples: per,
        buckets: breakdown(hyps, &refs, &stats)?,
        trainable,
        total_params: total,
        trainable_fraction: if total == 0 { 0.0 } else { trainable as f64 / total as f64 },
        steps: 0,
        wall_secs: 0.0,
    })
}

/// Decodes `examples` with beam search and scores them.
pub fn evaluate<T: Scalar>(
    model: &Model<T>,
    examples: &[Example<T>],
    vocab: &Vocabulary,
    beam: usize,
    max_len: usize,
) -> Result<MetricsReport, TrainError> {
    let start = Instant::now();
    let hyps = decode_texts(model, examples, vocab, beam, max_len)?;
    let mut report = score(&hyps, examples, model)?;
    report.wall_secs = start.elapsed().as_secs_f64();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patience_returns_first_best() {
        let mut s = EarlyStopper::new(5);
        let verdicts: Vec<Verdict> = [10.0, 11.0, 11.0, 11.0, 11.0, 11.0, 11.0].iter().map(|&b| s.observe(b)).collect();
        assert_eq!(verdicts[1], Verdict::Improved);
        assert_eq!(verdicts[5], Verdict::Continue);
        assert_eq!(verdicts[6], Verdict::Stop);
        assert_eq!(s.best_epoch, 2);
    }

    #[test]
    fn linear_schedule() {
        assert_eq!(lr_at(1e-4, 0, 1000), 1e-4);
        assert!((lr_at(1e-4, 500, 1000) - 5e-5).abs() < 1e-18);
        assert_eq!(lr_at(1e-4, 1000, 1000), 0.0);
    }

    #[test]
    fn defaults() {
        let c = TrainConfig::default();
        assert_eq!((c.batch, c.beam, c.patience), (4, 5, 5));
        assert_eq!(c.learning_rate(), 1e-4);
        let ft = TrainConfig {
            mode: TrainMode::FinetuneAll,
            ..c.clone()
        };
        assert_eq!(ft.learning_rate(), 3e-5);
        assert!(TrainConfig { batch: 0, ..c }.validate().is_err());
    }
}
