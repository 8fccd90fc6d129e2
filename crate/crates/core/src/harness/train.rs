//! Training to interpolation and exact-match scoring.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{LabError, Result};
use crate::task_data::Sample;
use crate::transformer::{Batch, BiasProvider, BiasSet, Trainer, Transformer};
use crate::Scalar;

/// Bias sets built on demand for each live `(decoder, encoder)` length.
pub struct BiasCache<'a, T> {
    provider: Option<&'a dyn BiasProvider<T>>,
    heads: usize,
    cache: HashMap<(usize, usize), BiasSet<T>>,
}

impl<'a, T: Scalar> BiasCache<'a, T> {
    pub fn new(provider: Option<&'a dyn BiasProvider<T>>, heads: usize) -> Self {
        Self {
            provider,
            heads,
            cache: HashMap::new(),
        }
    }

    pub fn get(&mut self, dec_len: usize, enc_len: usize) -> Result<Option<&BiasSet<T>>> {
        let Some(p) = self.provider else { return Ok(None) };
        if !self.cache.contains_key(&(dec_len, enc_len)) {
            let set = p.bias_for(self.heads, dec_len, enc_len)?;
            self.cache.insert((dec_len, enc_len), set);
        }
        Ok(self.cache.get(&(dec_len, enc_len)))
    }
}

/// Groups sample indices by `(decoder length, input length)` so every batch
/// shares one bias shape.
fn by_shape(samples: &[Sample]) -> Vec<Vec<usize>> {
    let mut groups: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
    for (i, s) in samples.iter().enumerate() {
        groups
            .entry((s.decoder_len(), s.input_tokens.len()))
            .or_default()
            .push(i);
    }
    let mut out: Vec<(usize, usize, Vec<usize>)> = groups.into_iter().map(|((a, b), v)| (a, b, v)).collect();
    out.sort();
    out.into_iter().map(|(_, _, v)| v).collect()
}

/// How a decoded sample is scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scoring {
    /// Every digit and the terminating EOS must match.
    Exact,
    /// Only the digits; the output length is taken from the target.
    Digits,
}

impl fmt::Display for Scoring {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scoring::Exact => "exact",
            Scoring::Digits => "digits",
        })
    }
}

impl FromStr for Scoring {
    type Err = LabError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Scoring::Exact),
            "digits" => Ok(Scoring::Digits),
            other => Err(LabError::Config(format!("unknown scoring {other:?}"))),
        }
    }
}

/// Per-sample exact-match flags.
pub fn exact_matches<T: Scalar>(
    model: &Transformer<T>,
    samples: &[Sample],
    biases: &mut BiasCache<'_, T>,
    batch_size: usize,
) -> Result<Vec<bool>> {
    scored_matches(model, samples, biases, batch_size, Scoring::Exact)
}

pub fn scored_matches<T: Scalar>(
    model: &Transformer<T>,
    samples: &[Sample],
    biases: &mut BiasCache<'_, T>,
    batch_size: usize,
    scoring: Scoring,
) -> Result<Vec<bool>> {
    let mut flags = vec![false; samples.len()];
    for group in by_shape(samples) {
        for chunk in group.chunks(batch_size.max(1)) {
            let refs: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            let bias = biases.get(refs[0].decoder_len(), refs[0].input_tokens.len())?;
            let ok = match scoring {
                Scoring::Exact => model.exact_match_batch(&refs, bias)?,
                Scoring::Digits => model.digit_match_batch(&refs, bias)?,
            };
            for (&i, v) in chunk.iter().zip(ok) {
                flags[i] = v;
            }
        }
    }
    Ok(flags)
}

pub fn accuracy<T: Scalar>(
    model: &Transformer<T>,
    samples: &[Sample],
    biases: &mut BiasCache<'_, T>,
    batch_size: usize,
) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    scored_accuracy(model, samples, biases, batch_size, Scoring::Exact)
}

pub fn scored_accuracy<T: Scalar>(
    model: &Transformer<T>,
    samples: &[Sample],
    biases: &mut BiasCache<'_, T>,
    batch_size: usize,
    scoring: Scoring,
) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let flags = scored_matches(model, samples, biases, batch_size, scoring)?;
    Ok(flags.iter().filter(|&&f| f).count() as f64 / samples.len() as f64)
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub batch_size: usize,
    pub budget: u64,
    pub eval_every: u64,
    pub target_accuracy: f64,
    pub patience: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogEntry {
    pub step: u64,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Steps taken in this call.
    pub steps: u64,
    pub reached: bool,
    pub best_accuracy: f64,
    pub log: Vec<LogEntry>,
}

impl TrainOutcome {
    pub fn log_csv(&self) -> String {
        let mut s = String::from("step,loss,val_accuracy\n");
        for e in &self.log {
            s.push_str(&format!("{},{},{}\n", e.step, e.loss, e.accuracy));
        }
        s
    }
}

/// Trains until validation exact match stays at or above the target for
/// `patience` consecutive evaluations, or the budget runs out. The outcome
/// is returned either way; see [`require_interpolation`].
pub fn train_until<T: Scalar>(
    trainer: &mut Trainer<T>,
    train: &[Sample],
    validation: &[Sample],
    provider: Option<&dyn BiasProvider<T>>,
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(LabError::Config("empty training set".into()));
    }
    let heads = trainer.model.config.heads;
    let mut biases = BiasCache::new(provider, heads);
    let groups = by_shape(train);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut queue: Vec<Vec<usize>> = Vec::new();
    let mut outcome = TrainOutcome {
        steps: 0,
        reached: false,
        best_accuracy: 0.0,
        log: Vec::new(),
    };
    let mut streak = 0;
    let mut loss_sum = 0.0;
    let mut loss_n = 0usize;
    while outcome.steps < opts.budget {
        if queue.is_empty() {
            for g in &groups {
                let mut idx = g.clone();
                idx.shuffle(&mut rng);
                queue.extend(idx.chunks(opts.batch_size.max(1)).map(<[usize]>::to_vec));
            }
            queue.shuffle(&mut rng);
        }
        let chunk = queue.pop().expect("queue refilled above");
        let refs: Vec<&Sample> = chunk.iter().map(|&i| &train[i]).collect();
        let batch = Batch::from_samples(&refs);
        let bias = biases.get(batch.dec_len, batch.src_len)?;
        loss_sum += trainer.train_step(&batch, bias)?;
        loss_n += 1;
        outcome.steps += 1;

        if outcome.steps % opts.eval_every == 0 || outcome.steps == opts.budget {
            let acc = accuracy(&trainer.model, validation, &mut biases, 256)?;
            let loss = loss_sum / loss_n as f64;
            (loss_sum, loss_n) = (0.0, 0);
            debug!("step {} loss {loss:.4} val {acc:.4}", trainer.step);
            outcome.log.push(LogEntry {
                step: trainer.step,
                loss,
                accuracy: acc,
            });
            outcome.best_accuracy = outcome.best_accuracy.max(acc);
            streak = if acc >= opts.target_accuracy { streak + 1 } else { 0 };
            if streak >= opts.patience.max(1) {
                outcome.reached = true;
                break;
            }
        }
    }
    info!(
        "trained {} steps, reached={}, best val {:.4}",
        outcome.steps, outcome.reached, outcome.best_accuracy
    );
    Ok(outcome)
}

/// Turns an unsuccessful outcome into [`LabError::BudgetExhausted`].
pub fn require_interpolation(outcome: &TrainOutcome, budget: u64) -> Result<()> {
    if outcome.reached {
        Ok(())
    } else {
        Err(LabError::BudgetExhausted {
            budget,
            best_accuracy: outcome.best_accuracy,
        })
    }
}
