use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::bias::BiasSet;
use super::model::{Batch, RunOptions, Transformer};
use super::tape::Tape;
use crate::error::{LabError, Result};
use crate::Scalar;

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<Array2<T>>,
    pub v: Vec<Array2<T>>,
    pub t: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: f64, params: &[Array2<T>]) -> Self {
        let zeros: Vec<Array2<T>> = params.iter().map(|p| Array2::zeros(p.raw_dim())).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [Array2<T>], grads: &[Option<Array2<T>>]) {
        self.t += 1;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let step = T::of(self.lr * c2.sqrt() / c1);
        let eps = T::of(self.eps * c2.sqrt());
        for (i, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            let (m, v, p) = (&mut self.m[i], &mut self.v[i], &mut params[i]);
            ndarray::Zip::from(p)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (T::one() - b1) * g;
                    *v = b2 * *v + (T::one() - b2) * g * g;
                    *p = *p - step * *m / (v.sqrt() + eps);
                });
        }
    }
}

/// A model together with its optimizer state and step counter.
#[derive(Debug, Clone)]
pub struct Trainer<T> {
    pub model: Transformer<T>,
    pub adam: Adam<T>,
    pub step: u64,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: Transformer<T>) -> Self {
        let adam = Adam::new(model.config.learning_rate, &model.params.values);
        Self { model, adam, step: 0 }
    }

    /// Mean token cross-entropy and parameter gradients for `batch`.
    /// Dropout is drawn from `rng` when given.
    pub fn loss_and_grads(
        &self,
        batch: &Batch,
        bias: Option<&BiasSet<T>>,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(f64, Vec<Option<Array2<T>>>)> {
        let mut tape = Tape::new();
        let vars = self.model.load_params(&mut tape);
        let out = self.model.forward_tape(
            &mut tape,
            &vars,
            batch,
            bias,
            RunOptions {
                dropout_rng: rng,
                record_scores: false,
            },
        )?;
        let loss = tape.cross_entropy(out.logits, &batch.dec_out);
        let value = tape.value(loss)[[0, 0]].as_f64();
        let mut grads = tape.backward(loss);
        Ok((value, vars.iter().map(|&v| grads.take(v)).collect()))
    }

    /// One Adam step on `batch`; returns the loss before the update.
    pub fn train_step(&mut self, batch: &Batch, bias: Option<&BiasSet<T>>) -> Result<f64> {
        if batch.size == 0 {
            return Err(LabError::Config("empty batch".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(
            self.model.config.init_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ self.step,
        );
        let (loss, mut grads) = self.loss_and_grads(batch, bias, Some(&mut rng))?;
        if !loss.is_finite() {
            return Err(LabError::NonFiniteLoss { step: self.step });
        }
        let clip = self.model.config.grad_clip;
        if clip > 0.0 {
            let norm = grads
                .iter()
                .flatten()
                .flat_map(|g| g.iter())
                .map(|v| v.as_f64().powi(2))
                .sum::<f64>()
                .sqrt();
            if norm > clip {
                let factor = T::of(clip / norm);
                grads.iter_mut().flatten().for_each(|g| g.mapv_inplace(|v| v * factor));
            }
        }
        self.adam.step(&mut self.model.params.values, &grads);
        self.step += 1;
        Ok(loss)
    }
}
