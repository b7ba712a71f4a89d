//! Beam search over any next-token scorer.

use crate::adapters::ConvGraph;
use crate::backbone::{BackboneError, Encoded, Model};
use crate::scalar::Scalar;
use crate::tensor::Tape;
use crate::tokenizer::{EOS, PAD};

/// Log-probabilities of the next token after a generated prefix.
pub trait StepScorer {
    fn log_probs(&mut self, prefix: &[usize]) -> Result<Vec<f64>, BackboneError>;
}

impl<F> StepScorer for F
where
    F: FnMut(&[usize]) -> Vec<f64>,
{
    fn log_probs(&mut self, prefix: &[usize]) -> Result<Vec<f64>, BackboneError> {
        Ok(self(prefix))
    }
}

/// Scores prefixes with a model; the source is encoded once.
pub struct ModelScorer<'a, T: Scalar> {
    model: &'a Model<T>,
    tape: Tape<T>,
    enc: Encoded,
    mark: usize,
}

impl<'a, T: Scalar> ModelScorer<'a, T> {
    pub fn new(model: &'a Model<T>, src: &[usize], graph: Option<&ConvGraph<T>>) -> Result<Self, BackboneError> {
        let mut tape = Tape::new().with_finite_checks(false);
        let enc = model.encode(&mut tape, src, graph)?;
        let mark = tape.len();
        Ok(ModelScorer { model, tape, enc, mark })
    }
}

impl<T: Scalar> StepScorer for ModelScorer<'_, T> {
    fn log_probs(&mut self, prefix: &[usize]) -> Result<Vec<f64>, BackboneError> {
        // decoder nodes from earlier steps are not needed again
        self.tape.truncate(self.mark);
        let mut input = Vec::with_capacity(prefix.len() + 1);
        input.push(PAD);
        input.extend_from_slice(prefix);
        self.model.next_log_probs(&mut self.tape, &self.enc, &input)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    /// Generated tokens without `</s>`.
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    /// Whether the hypothesis ended with `</s>` rather than the length limit.
    pub finished: bool,
}

impl Hypothesis {
    /// Length including the closing `</s>`.
    pub fn length(&self) -> usize {
        self.tokens.len() + usize::from(self.finished)
    }

    /// Log-probability divided by length.
    pub fn score(&self) -> f64 {
        self.log_prob / self.length().max(1) as f64
    }
}

/// All final hypotheses, best first by length-normalized score.
///
/// Each step keeps the `beam` best expansions by raw log-probability;
/// expansions ending in `</s>` leave the beam. Search stops once `beam`
/// hypotheses have finished or after `max_len` tokens, when the survivors
/// are kept unfinished.
pub fn beam_search_all<S: StepScorer>(scorer: &mut S, beam: usize, max_len: usize) -> Result<Vec<Hypothesis>, BackboneError> {
    let beam = beam.max(1);
    let mut alive = vec![(Vec::new(), 0.0)];
    let mut done: Vec<Hypothesis> = Vec::new();
    for _ in 0..max_len {
        let mut cand: Vec<(usize, usize, f64)> = Vec::new();
        for (h, (tokens, lp)) in alive.iter().enumerate() {
            let next = scorer.log_probs(tokens)?;
            for (t, &l) in next.iter().enumerate() {
                if t != PAD && l.is_finite() {
                    cand.push((h, t, lp + l));
                }
            }
        }
        // stable: ties keep hypothesis then token order
        cand.sort_by(|a, b| b.2.total_cmp(&a.2));
        let mut next_alive = Vec::new();
        for &(h, t, lp) in cand.iter().take(beam) {
            let tokens = alive[h].0.clone();
            if t == EOS {
                done.push(Hypothesis {
                    tokens,
                    log_prob: lp,
                    finished: true,
                });
            } else {
                let mut tokens = tokens;
                tokens.push(t);
                next_alive.push((tokens, lp));
            }
        }
        alive = next_alive;
        if alive.is_empty() || done.len() >= beam {
            alive.clear();
            break;
        }
    }
    done.extend(alive.into_iter().map(|(tokens, log_prob)| Hypothesis {
        tokens,
        log_prob,
        finished: false,
    }));
    done.sort_by(|a, b| b.score().total_cmp(&a.score()));
    Ok(done)
}

pub fn beam_search<S: StepScorer>(scorer: &mut S, beam: usize, max_len: usize) -> Result<Hypothesis, BackboneError> {
    Ok(beam_search_all(scorer, beam, max_len)?
        .into_iter()
        .next()
        .unwrap_or(Hypothesis {
            tokens: Vec::new(),
            log_prob: 0.0,
            finished: false,
        }))
}

/// Beam search with a model; returns the generated ids.
pub fn beam_decode<T: Scalar>(
    model: &Model<T>,
    src: &[usize],
    graph: Option<&ConvGraph<T>>,
    beam: usize,
    max_len: usize,
) -> Result<Vec<usize>, BackboneError> {
    let limit = max_len.min(model.cfg.max_len);
    if beam <= 1 {
        return model.greedy(src, graph, limit);
    }
    let mut scorer = ModelScorer::new(model, src, graph)?;
    Ok(beam_search(&mut scorer, beam, limit)?.tokens)
}
