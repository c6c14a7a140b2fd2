//! Autoregressive field reconstruction against a target checkpoint.

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::{AttackConfig, LossScope};
use super::steps::{aggregate, logits_to_likelihood, loss_to_likelihood, sample_top_p, softmax};
use crate::corpus::vocab::{MASK, N_SPECIAL};
use crate::corpus::{AttackView, Field, TokenId};
use crate::error::{Error, Result};
use crate::model::targets::field_labels;
use crate::model::{forward, token_loss, Checkpoint, DocInputs, TaskKind};
use crate::seed;

/// Read-only access to a checkpoint that counts the forward work done.
pub struct ModelRunner<'a> {
    checkpoint: &'a Checkpoint,
    visual_noise: Option<u64>,
    batches: AtomicUsize,
    passes: AtomicUsize,
}

impl<'a> ModelRunner<'a> {
    pub fn new(checkpoint: &'a Checkpoint) -> Self {
        Self {
            checkpoint,
            visual_noise: None,
            batches: AtomicUsize::new(0),
            passes: AtomicUsize::new(0),
        }
    }

    /// Feeds unit Gaussian noise instead of the page image, seeded per
    /// document from `seed`.
    pub fn with_visual_noise(mut self, seed: u64) -> Self {
        self.visual_noise = Some(seed);
        self
    }

    pub fn checkpoint(&self) -> &Checkpoint {
        self.checkpoint
    }

    pub fn task(&self) -> TaskKind {
        self.checkpoint.task
    }

    /// Number of forward batches run so far.
    pub fn batches(&self) -> usize {
        self.batches.load(Ordering::Relaxed)
    }

    /// Number of single-document forward passes run so far.
    pub fn passes(&self) -> usize {
        self.passes.load(Ordering::Relaxed)
    }

    /// Model inputs for the current state of a view.
    fn inputs(&self, view: &AttackView, tokens: &[TokenId]) -> DocInputs {
        let inputs = DocInputs::new(tokens.to_vec(), view.boxes.clone(), view.image.as_ref());
        match self.visual_noise {
            Some(s) => inputs.with_visual_noise(seed::derive(s, &view.doc_id)),
            None => inputs,
        }
    }

    /// Runs one batch of documents and maps each output through `f`.
    fn run_batch<R>(
        &self,
        docs: &[DocInputs],
        mut f: impl FnMut(ndarray::ArrayView2<f32>) -> Result<R>,
    ) -> Result<Vec<R>> {
        self.batches.fetch_add(1, Ordering::Relaxed);
        self.passes.fetch_add(docs.len(), Ordering::Relaxed);
        docs.iter()
            .map(|d| {
                let out = forward(&self.checkpoint.params, d, self.checkpoint.task)?;
                f(out.logits.view())
            })
            .collect()
    }

    /// MLM logits at `pos` for the given sequence state.
    fn mlm_row(&self, view: &AttackView, tokens: &[TokenId], pos: usize) -> Result<Vec<f64>> {
        if self.task() != TaskKind::Mlm {
            return Err(Error::WrongTask {
                expected: TaskKind::Mlm.name().into(),
                found: self.task().name().into(),
            });
        }
        let inputs = self.inputs(view, tokens);
        let mut rows = self.run_batch(std::slice::from_ref(&inputs), |l| {
            Ok(l.row(pos).iter().map(|&v| v as f64).collect::<Vec<f64>>())
        })?;
        Ok(rows.pop().expect("one document in, one row out"))
    }
}

/// One reconstruction of one field with the per-token probabilities it was
/// sampled with (`p`) and the public probabilities of the same tokens (`g`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionAttempt {
    pub field_id: String,
    pub attempt: usize,
    pub tokens: Vec<TokenId>,
    pub p: Vec<f64>,
    pub g: Vec<f64>,
}

/// The `n` highest-logit non-special ids, best first (ties by lower id),
/// with their logits.
pub fn top_candidates(logits: &[f64], n: usize) -> Result<(Vec<TokenId>, Vec<f64>)> {
    let available = logits.len().saturating_sub(N_SPECIAL);
    if n > available || n == 0 {
        return Err(Error::Config(format!(
            "n_candidates = {n} but only {available} non-special tokens"
        )));
    }
    let mut ids: Vec<usize> = (N_SPECIAL..logits.len()).collect();
    ids.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    ids.truncate(n);
    let l = ids.iter().map(|&i| logits[i]).collect();
    Ok((ids.into_iter().map(|i| i as TokenId).collect(), l))
}

/// Current sequence: the view's tokens with `prefix` written into the start
/// of the field span (the rest of the span stays masked).
pub fn with_prefix(view: &AttackView, prefix: &[TokenId]) -> Vec<TokenId> {
    let mut tokens = view.tokens.clone();
    for (i, &t) in prefix.iter().enumerate() {
        tokens[view.span.start + i] = t;
    }
    for t in &mut tokens[view.span.start + prefix.len()..view.span.end] {
        *t = MASK;
    }
    tokens
}

/// One public forward pass; the `n_candidates` best ids at the next field
/// position and their logits.
pub fn select_candidates(
    public: &ModelRunner,
    view: &AttackView,
    prefix: &[TokenId],
    n_candidates: usize,
) -> Result<(Vec<TokenId>, Vec<f64>)> {
    let pos = next_position(view, prefix)?;
    let row = public.mlm_row(view, &with_prefix(view, prefix), pos)?;
    top_candidates(&row, n_candidates)
}

fn next_position(view: &AttackView, prefix: &[TokenId]) -> Result<usize> {
    if prefix.len() >= view.k() {
        return Err(Error::Data(format!(
            "{}: prefix of {} tokens fills the field",
            view.field_id(),
            prefix.len()
        )));
    }
    Ok(view.span.start + prefix.len())
}

/// Target loss of each candidate written at the next field position, summed
/// over the scope positions, batched by `batch` candidates.
pub fn score_candidates_loss(
    target: &ModelRunner,
    view: &AttackView,
    prefix: &[TokenId],
    ids: &[TokenId],
    scope: LossScope,
    batch: usize,
) -> Result<Vec<f64>> {
    let task = target.task();
    if task == TaskKind::Mlm {
        return Err(Error::WrongTask {
            expected: "EE_BIO or EE_SPADE".into(),
            found: task.name().into(),
        });
    }
    let pos = next_position(view, prefix)?;
    let positions: Vec<usize> = match scope {
        LossScope::CurrentToken => vec![pos],
        LossScope::FieldSoFar => (view.span.start..=pos).collect(),
    };
    let field = Field::new(view.span.start, view.k(), view.field_type);
    let labels = field_labels(task, &field, &positions, view.tokens.len());
    let base = with_prefix(view, prefix);
    let mut out = Vec::with_capacity(ids.len());
    for chunk in ids.chunks(batch.max(1)) {
        let docs: Vec<DocInputs> = chunk
            .iter()
            .map(|&c| {
                let mut tokens = base.clone();
                tokens[pos] = c;
                target.inputs(view, &tokens)
            })
            .collect();
        out.extend(target.run_batch(&docs, |logits| {
            let l = token_loss(logits, &positions, &labels)?;
            Ok(l.iter().map(|&v| v as f64).sum::<f64>())
        })?);
    }
    Ok(out)
}

/// Reconstructs a field left to right against an entity-extraction target.
/// With `w = 0` the target is never queried and the result is the
/// public-only baseline.
pub fn reconstruct_field<R: Rng>(
    target: &ModelRunner,
    public: &ModelRunner,
    view: &AttackView,
    config: &AttackConfig,
    attempt: usize,
    rng: &mut R,
) -> Result<ReconstructionAttempt> {
    let target = if config.mean_weight == 0.0 {
        None
    } else {
        Some(target)
    };
    reconstruct(target, public, view, config, attempt, rng)
}

/// The public-only baseline.
pub fn baseline_reconstruct<R: Rng>(
    public: &ModelRunner,
    view: &AttackView,
    config: &AttackConfig,
    attempt: usize,
    rng: &mut R,
) -> Result<ReconstructionAttempt> {
    reconstruct(None, public, view, &config.baseline(), attempt, rng)
}

fn reconstruct<R: Rng>(
    target: Option<&ModelRunner>,
    public: &ModelRunner,
    view: &AttackView,
    config: &AttackConfig,
    attempt: usize,
    rng: &mut R,
) -> Result<ReconstructionAttempt> {
    config.validate()?;
    let k = view.k();
    let mut prefix = Vec::with_capacity(k);
    let mut p = Vec::with_capacity(k);
    let mut g = Vec::with_capacity(k);
    for t in 1..=k {
        let (ids, logits) = select_candidates(public, view, &prefix, config.n_candidates)?;
        let g_hat = logits_to_likelihood(&logits, config.pub_temperature(t));
        let probs = match target {
            Some(target) => {
                let losses = score_candidates_loss(
                    target,
                    view,
                    &prefix,
                    &ids,
                    config.loss_scope,
                    config.score_batch,
                )?;
                if losses.iter().any(|l| !l.is_finite()) {
                    return Err(Error::Numerical(format!(
                        "non-finite target loss on {}",
                        view.field_id()
                    )));
                }
                let l_hat = loss_to_likelihood(&losses, config.target_temp);
                aggregate(&g_hat, &l_hat, config.mean_kind, config.mean_weight)
            }
            None => g_hat.clone(),
        };
        let (i, pi) = sample_top_p(&probs, config.top_p, rng);
        prefix.push(ids[i]);
        p.push(pi);
        g.push(g_hat[i]);
    }
    Ok(ReconstructionAttempt {
        field_id: view.field_id(),
        attempt,
        tokens: prefix,
        p,
        g,
    })
}

/// Reconstructs a field against a private MLM: candidates and sampling
/// likelihoods come from the target itself; the public model only supplies
/// the reference probabilities `g` of the same candidates.
pub fn reconstruct_field_private_mlm<R: Rng>(
    target: &ModelRunner,
    public: &ModelRunner,
    view: &AttackView,
    config: &AttackConfig,
    attempt: usize,
    rng: &mut R,
) -> Result<ReconstructionAttempt> {
    config.validate()?;
    let k = view.k();
    let mut prefix = Vec::with_capacity(k);
    let mut p = Vec::with_capacity(k);
    let mut g = Vec::with_capacity(k);
    for t in 1..=k {
        let temp = config.pub_temperature(t);
        let (ids, logits) = select_candidates(target, view, &prefix, config.n_candidates)?;
        let probs = logits_to_likelihood(&logits, temp);
        let (i, pi) = sample_top_p(&probs, config.top_p, rng);
        let pos = view.span.start + prefix.len();
        let row = public.mlm_row(view, &with_prefix(view, &prefix), pos)?;
        let pub_logits: Vec<f64> = ids.iter().map(|&c| row[c as usize]).collect();
        let g_hat = softmax(&pub_logits, temp);
        prefix.push(ids[i]);
        p.push(pi);
        g.push(g_hat[i]);
    }
    Ok(ReconstructionAttempt {
        field_id: view.field_id(),
        attempt,
        tokens: prefix,
        p,
        g,
    })
}

/// Which reconstruction a game runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Attack,
    Baseline,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Attack => "attack",
            Role::Baseline => "baseline",
        }
    }
}

/// A target, the public auxiliary MLM and the attack configuration, with
/// the variant chosen from the target task.
pub struct Attacker<'a> {
    pub target: ModelRunner<'a>,
    pub public: ModelRunner<'a>,
    pub config: AttackConfig,
}

impl<'a> Attacker<'a> {
    pub fn new(
        target: ModelRunner<'a>,
        public: ModelRunner<'a>,
        config: AttackConfig,
    ) -> Result<Self> {
        config.validate()?;
        if public.task() != TaskKind::Mlm {
            return Err(Error::WrongTask {
                expected: TaskKind::Mlm.name().into(),
                found: public.task().name().into(),
            });
        }
        Ok(Self {
            target,
            public,
            config,
        })
    }

    /// RNG seed of one attempt; attack and baseline use independent streams.
    pub fn stream(&self, role: Role, field_id: &str, attempt: usize) -> u64 {
        let s = seed::derive(self.config.seed, &format!("{}/{field_id}", role.name()));
        seed::derive_indexed(s, "attempt", &[attempt as u64])
    }

    pub fn attempt(
        &self,
        role: Role,
        view: &AttackView,
        attempt: usize,
    ) -> Result<ReconstructionAttempt> {
        let mut rng = seed::rng(self.stream(role, &view.field_id(), attempt));
        match role {
            Role::Baseline => {
                baseline_reconstruct(&self.public, view, &self.config, attempt, &mut rng)
            }
            Role::Attack if self.target.task() == TaskKind::Mlm => reconstruct_field_private_mlm(
                &self.target,
                &self.public,
                view,
                &self.config,
                attempt,
                &mut rng,
            ),
            Role::Attack => reconstruct_field(
                &self.target,
                &self.public,
                view,
                &self.config,
                attempt,
                &mut rng,
            ),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::config::MeanKind;
    use crate::corpus::{extract, generate_corpus, scrub, CorpusSpec, Document};
    use crate::model::{train, EncoderConfig, Params, TrainConfig};

    fn small() -> EncoderConfig {
        EncoderConfig {
            embed_dim: 16,
            n_layers: 1,
            n_heads: 2,
            ffn_dim: 32,
            ..EncoderConfig::default()
        }
    }

    fn random(task: TaskKind, seed: u64) -> Checkpoint {
        Checkpoint {
            epoch: 1,
            task,
            params: Params::init(&small(), seed),
            val_loss: 0.0,
            val_accuracy: 0.0,
            train_loss: 0.0,
        }
    }

    fn docs(n: usize) -> Vec<Document> {
        generate_corpus(&CorpusSpec {
            n_docs: n,
            seed: 21,
            ..CorpusSpec::default()
        })
        .unwrap()
    }

    fn view(doc: &Document) -> AttackView {
        let (i, _) = extract(doc)[0];
        scrub(doc, i).unwrap().into_parts().0
    }

    fn config() -> AttackConfig {
        AttackConfig {
            n_candidates: 16,
            score_batch: 5,
            ..AttackConfig::default()
        }
    }

    #[test]
    fn candidates_sorted_and_nested() {
        let pubm = random(TaskKind::Mlm, 1);
        let r = ModelRunner::new(&pubm);
        let v = view(&docs(1)[0]);
        let all = 512 - N_SPECIAL;
        let (ids, logits) = select_candidates(&r, &v, &[], all).unwrap();
        assert_eq!(ids.len(), all);
        assert!(ids.iter().all(|&i| i as usize >= N_SPECIAL));
        assert!(logits.windows(2).all(|w| w[0] >= w[1]));
        let (a, _) = select_candidates(&r, &v, &[], 8).unwrap();
        let (b, _) = select_candidates(&r, &v, &[], 16).unwrap();
        assert_eq!(a, b[..8]);
        assert_eq!(select_candidates(&r, &v, &[], 8).unwrap().0, a);
        assert!(select_candidates(&r, &v, &[], all + 1).is_err());
    }

    #[test]
    fn prefix_is_written_and_rest_masked() {
        let v = view(&docs(1)[0]);
        let t = with_prefix(&v, &[42]);
        assert_eq!(t[v.span.start], 42);
        assert!(t[v.span.start + 1..v.span.end].iter().all(|&x| x == MASK));
        assert_eq!(t[..v.span.start], v.tokens[..v.span.start]);
    }

    #[test]
    fn scoring_is_per_candidate() {
        let mut target = random(TaskKind::EeBio, 2);
        // Token 30 gets the embedding of token 20.
        let emb = &mut target.params.tensors[0];
        let d = emb.shape[1];
        let row: Vec<f32> = emb.data[20 * d..21 * d].to_vec();
        emb.data[30 * d..31 * d].copy_from_slice(&row);
        let r = ModelRunner::new(&target);
        let v = view(&docs(1)[0]);
        let ids = [20, 30, 40, 50, 60];
        let l = score_candidates_loss(&r, &v, &[], &ids, LossScope::FieldSoFar, 2).unwrap();
        assert_eq!(l[0], l[1]);
        let rev: Vec<TokenId> = ids.iter().rev().copied().collect();
        let lr = score_candidates_loss(&r, &v, &[], &rev, LossScope::FieldSoFar, 3).unwrap();
        let back: Vec<f64> = lr.into_iter().rev().collect();
        assert_eq!(back, l);
        let mlm = random(TaskKind::Mlm, 2);
        assert!(score_candidates_loss(
            &ModelRunner::new(&mlm),
            &v,
            &[],
            &ids,
            LossScope::FieldSoFar,
            2
        )
        .is_err());
    }

    #[test]
    fn overfit_target_prefers_truth() {
        let d = docs(1);
        let cfg = TrainConfig {
            epochs: 150,
            seed: 3,
            ..TrainConfig::for_task(TaskKind::EeBio)
        };
        let ckpt = train(&cfg, &small(), &d, &d).unwrap().pop().unwrap();
        let r = ModelRunner::new(&ckpt);
        let (i, _) = extract(&d[0])[0];
        let (v, truth) = scrub(&d[0], i).unwrap().into_parts();
        // Score the last field token with the true prefix in place, so the
        // query matches what the model saw in training.
        let prefix = &truth[..truth.len() - 1];
        let ids: Vec<TokenId> = (N_SPECIAL as TokenId..512).collect();
        let l = score_candidates_loss(&r, &v, prefix, &ids, LossScope::FieldSoFar, 64).unwrap();
        let best = (0..ids.len())
            .min_by(|&a, &b| l[a].total_cmp(&l[b]))
            .unwrap();
        assert_eq!(ids[best], *truth.last().unwrap());
    }

    #[test]
    fn forward_accounting() {
        let target = random(TaskKind::EeSpade, 4);
        let pubm = random(TaskKind::Mlm, 5);
        let (t, p) = (ModelRunner::new(&target), ModelRunner::new(&pubm));
        let v = view(&docs(1)[0]);
        let c = config();
        let mut rng = seed::rng(1);
        let a = reconstruct_field(&t, &p, &v, &c, 0, &mut rng).unwrap();
        assert_eq!(a.tokens.len(), v.k());
        assert_eq!(t.batches(), v.k() * c.n_candidates.div_ceil(c.score_batch));
        assert_eq!(t.passes(), v.k() * c.n_candidates);
        assert_eq!(p.batches(), v.k());
        assert!(a.p.iter().chain(&a.g).all(|&x| x > 0.0 && x <= 1.0));
    }

    #[test]
    fn baseline_is_w_zero_and_skips_target() {
        let target = random(TaskKind::EeBio, 4);
        let pubm = random(TaskKind::Mlm, 5);
        let (t, p) = (ModelRunner::new(&target), ModelRunner::new(&pubm));
        let v = view(&docs(2)[1]);
        let c = AttackConfig {
            top_p: 0.9,
            ..config()
        };
        let b = baseline_reconstruct(&p, &v, &c, 0, &mut seed::rng(9)).unwrap();
        assert_eq!(t.passes(), 0);
        let w0 = AttackConfig {
            mean_weight: 0.0,
            ..c.clone()
        };
        let a = reconstruct_field(&t, &p, &v, &w0, 0, &mut seed::rng(9)).unwrap();
        assert_eq!(a, b);
        assert_eq!(t.passes(), 0);
        assert_eq!(b.p, b.g);
    }

    #[test]
    fn private_mlm_on_public_equals_baseline() {
        let pubm = random(TaskKind::Mlm, 5);
        let p = ModelRunner::new(&pubm);
        let v = view(&docs(1)[0]);
        let c = AttackConfig {
            top_p: 0.8,
            ..config()
        };
        let a = reconstruct_field_private_mlm(&p, &p, &v, &c, 0, &mut seed::rng(3)).unwrap();
        let b = baseline_reconstruct(&p, &v, &c, 0, &mut seed::rng(3)).unwrap();
        assert_eq!(a.tokens, b.tokens);
        for (x, y) in a.p.iter().zip(&b.p) {
            assert!((x - y).abs() < 1e-12);
        }
        let ee = random(TaskKind::EeBio, 1);
        assert!(reconstruct_field_private_mlm(
            &ModelRunner::new(&ee),
            &p,
            &v,
            &c,
            0,
            &mut seed::rng(3)
        )
        .is_err());
    }

    #[test]
    fn single_token_argmax() {
        let target = random(TaskKind::EeBio, 6);
        let pubm = random(TaskKind::Mlm, 7);
        let (t, p) = (ModelRunner::new(&target), ModelRunner::new(&pubm));
        let mut v = view(&docs(1)[0]);
        v.span = v.span.start..v.span.start + 1;
        let c = AttackConfig {
            top_p: 1e-9,
            mean_kind: MeanKind::Arithmetic,
            ..config()
        };
        let a = reconstruct_field(&t, &p, &v, &c, 0, &mut seed::rng(0)).unwrap();
        let (ids, logits) = select_candidates(&p, &v, &[], c.n_candidates).unwrap();
        let g = logits_to_likelihood(&logits, c.pub_temperature(1));
        let l = score_candidates_loss(&t, &v, &[], &ids, c.loss_scope, 7).unwrap();
        let probs = aggregate(
            &g,
            &loss_to_likelihood(&l, c.target_temp),
            c.mean_kind,
            c.mean_weight,
        );
        let best = (0..ids.len()).fold(0, |b, i| if probs[i] > probs[b] { i } else { b });
        assert_eq!(a.tokens, vec![ids[best]]);
        assert_eq!(a.p, vec![probs[best]]);
    }

    #[test]
    fn attacker_streams_are_reproducible() {
        let target = random(TaskKind::EeSpade, 4);
        let pubm = random(TaskKind::Mlm, 5);
        let c = AttackConfig {
            top_p: 0.9,
            ..config()
        };
        let att = Attacker::new(ModelRunner::new(&target), ModelRunner::new(&pubm), c).unwrap();
        let v = view(&docs(1)[0]);
        assert_eq!(
            att.attempt(Role::Attack, &v, 2).unwrap(),
            att.attempt(Role::Attack, &v, 2).unwrap()
        );
        assert_ne!(
            att.stream(Role::Attack, "a", 0),
            att.stream(Role::Baseline, "a", 0)
        );
        assert_ne!(
            att.stream(Role::Attack, "a", 0),
            att.stream(Role::Attack, "a", 1)
        );
        assert!(Attacker::new(
            ModelRunner::new(&target),
            ModelRunner::new(&target),
            config()
        )
        .is_err());
    }
}
