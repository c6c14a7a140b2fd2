//! Mini-batch Adam training with one checkpoint per epoch.

use rand::seq::SliceRandom;

use super::checkpoint::{Checkpoint, OptimizerState};
use super::config::{EncoderConfig, TrainConfig};
use super::forward::{backward, forward, DocInputs};
use super::loss::{argmax_rows, loss_and_grad, token_loss};
use super::params::Params;
use super::targets::{make_targets, Targets};
use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::seed;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Validation loss (mean per-target cross-entropy) and token accuracy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    pub n_targets: usize,
}

/// Training state that can be stopped after any epoch and resumed.
pub struct Trainer {
    config: TrainConfig,
    params: Params<f32>,
    opt: OptimizerState,
    epoch: usize,
}

impl Trainer {
    pub fn new(config: TrainConfig, encoder: EncoderConfig) -> Result<Self> {
        config.validate()?;
        encoder.validate()?;
        let params = Params::init(&encoder, seed::derive(config.seed, "params"));
        let opt = OptimizerState::new(&params);
        Ok(Self {
            config,
            params,
            opt,
            epoch: 0,
        })
    }

    /// Continues from a saved checkpoint and the optimizer state written
    /// alongside it.
    pub fn resume(
        config: TrainConfig,
        checkpoint: Checkpoint,
        opt: OptimizerState,
    ) -> Result<Self> {
        config.validate()?;
        if checkpoint.task != config.task {
            return Err(Error::WrongTask {
                expected: config.task.name().into(),
                found: checkpoint.task.name().into(),
            });
        }
        Ok(Self {
            config,
            params: checkpoint.params,
            opt,
            epoch: checkpoint.epoch,
        })
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn params(&self) -> &Params<f32> {
        &self.params
    }

    pub fn optimizer(&self) -> &OptimizerState {
        &self.opt
    }

    /// Runs one epoch over `train_docs` and evaluates on `valid_docs`.
    pub fn run_epoch(
        &mut self,
        train_docs: &[Document],
        valid_docs: &[Document],
    ) -> Result<Checkpoint> {
        if train_docs.is_empty() || valid_docs.is_empty() {
            return Err(Error::Data(
                "training and validation sets must be non-empty".into(),
            ));
        }
        let epoch = self.epoch + 1;
        let cfg = self.config.clone();
        let mut rng = seed::rng(seed::derive_indexed(cfg.seed, "epoch", &[epoch as u64]));
        let mut order: Vec<usize> = (0..train_docs.len()).collect();
        order.shuffle(&mut rng);

        let mut grads = self.params.zeros_like();
        let mut loss_sum = 0.0f64;
        let mut loss_count = 0usize;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let prepared: Vec<(DocInputs, Targets)> = batch
                .iter()
                .map(|&i| {
                    let (inputs, targets) =
                        make_targets(&train_docs[i], cfg.task, cfg.mask_rate, &mut rng);
                    let inputs = if cfg.visual_noise_ablation {
                        let s = seed::derive_indexed(cfg.seed, "noise", &[epoch as u64, i as u64]);
                        inputs.with_visual_noise(s)
                    } else {
                        inputs
                    };
                    (inputs, targets)
                })
                .collect();
            let n_targets: usize = prepared.iter().map(|(_, t)| t.len()).sum();
            if n_targets == 0 {
                continue;
            }
            for t in &mut grads.tensors {
                t.data.fill(0.0);
            }
            let weight = 1.0 / n_targets as f32;
            let mut batch_loss = 0.0f64;
            for (inputs, targets) in &prepared {
                if targets.is_empty() {
                    continue;
                }
                let fwd = forward(&self.params, inputs, cfg.task)?;
                let (loss, dlogits) = loss_and_grad(
                    fwd.logits.view(),
                    &targets.positions,
                    &targets.labels,
                    weight,
                )?;
                batch_loss += loss as f64;
                backward(
                    &self.params,
                    inputs,
                    cfg.task,
                    &fwd,
                    dlogits.view(),
                    &mut grads,
                );
            }
            if !batch_loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite training loss at epoch {epoch}, batch {b}"
                )));
            }
            loss_sum += batch_loss * n_targets as f64;
            loss_count += n_targets;
            self.adam_step(&mut grads);
            if !self.params.all_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite parameters after epoch {epoch}, batch {b}"
                )));
            }
        }

        let eval = evaluate(&self.params, &cfg, valid_docs)?;
        if !eval.loss.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite validation loss at epoch {epoch}"
            )));
        }
        self.epoch = epoch;
        Ok(Checkpoint {
            epoch,
            task: cfg.task,
            params: self.params.clone(),
            val_loss: eval.loss,
            val_accuracy: eval.accuracy,
            train_loss: if loss_count == 0 {
                0.0
            } else {
                loss_sum / loss_count as f64
            },
        })
    }

    fn adam_step(&mut self, grads: &mut Params<f32>) {
        let clip = self.config.grad_clip;
        if clip > 0.0 {
            let norm = grads.squared_norm().sqrt();
            if norm > clip {
                grads.scale((clip / norm) as f32);
            }
        }
        self.opt.step += 1;
        let t = self.opt.step as i32;
        let lr = self.config.learning_rate;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        let (b1, b2) = (BETA1 as f32, BETA2 as f32);
        for (((p, g), m), v) in self
            .params
            .tensors
            .iter_mut()
            .zip(&grads.tensors)
            .zip(&mut self.opt.m.tensors)
            .zip(&mut self.opt.v.tensors)
        {
            for (((p, &g), m), v) in p
                .data
                .iter_mut()
                .zip(&g.data)
                .zip(&mut m.data)
                .zip(&mut v.data)
            {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let mhat = *m as f64 / c1;
                let vhat = *v as f64 / c2;
                *p -= (lr * mhat / (vhat.sqrt() + ADAM_EPS)) as f32;
            }
        }
    }
}

/// Mean target cross-entropy and token accuracy on `docs`. MLM masks are
/// drawn from a fixed stream so every epoch sees the same targets.
pub fn evaluate(
    params: &Params<f32>,
    config: &TrainConfig,
    docs: &[Document],
) -> Result<Evaluation> {
    let mut rng = seed::rng(seed::derive(config.seed, "valid"));
    let mut loss = 0.0f64;
    let mut correct = 0usize;
    let mut n = 0usize;
    for (i, doc) in docs.iter().enumerate() {
        let (inputs, targets) = make_targets(doc, config.task, config.mask_rate, &mut rng);
        if targets.is_empty() {
            continue;
        }
        let inputs = if config.visual_noise_ablation {
            inputs.with_visual_noise(seed::derive_indexed(
                config.seed,
                "valid-noise",
                &[i as u64],
            ))
        } else {
            inputs
        };
        let fwd = forward(params, &inputs, config.task)?;
        let losses = token_loss(fwd.logits.view(), &targets.positions, &targets.labels)?;
        loss += losses.iter().map(|&l| l as f64).sum::<f64>();
        let pred = argmax_rows(fwd.logits.view(), &targets.positions);
        correct += pred
            .iter()
            .zip(&targets.labels)
            .filter(|(a, b)| a == b)
            .count();
        n += targets.len();
    }
    if n == 0 {
        return Ok(Evaluation {
            loss: 0.0,
            accuracy: 0.0,
            n_targets: 0,
        });
    }
    Ok(Evaluation {
        loss: loss / n as f64,
        accuracy: correct as f64 / n as f64,
        n_targets: n,
    })
}

/// Trains for `config.epochs` epochs, handing each checkpoint (and the
/// optimizer state after it) to `on_epoch`.
pub fn train_with<F>(
    config: &TrainConfig,
    encoder: &EncoderConfig,
    train_docs: &[Document],
    valid_docs: &[Document],
    mut on_epoch: F,
) -> Result<()>
where
    F: FnMut(Checkpoint, &OptimizerState) -> Result<()>,
{
    let mut trainer = Trainer::new(config.clone(), *encoder)?;
    while trainer.epoch() < config.epochs {
        let ckpt = trainer.run_epoch(train_docs, valid_docs)?;
        log::debug!(
            "{} epoch {}: train {:.4} val {:.4} acc {:.4}",
            config.task.name(),
            ckpt.epoch,
            ckpt.train_loss,
            ckpt.val_loss,
            ckpt.val_accuracy
        );
        on_epoch(ckpt, trainer.optimizer())?;
    }
    Ok(())
}

/// Trains and returns every per-epoch checkpoint.
pub fn train(
    config: &TrainConfig,
    encoder: &EncoderConfig,
    train_docs: &[Document],
    valid_docs: &[Document],
) -> Result<Vec<Checkpoint>> {
    let mut out = Vec::with_capacity(config.epochs);
    train_with(config, encoder, train_docs, valid_docs, |c, _| {
        out.push(c);
        Ok(())
    })?;
    Ok(out)
}
