//! The one-shot and multi-shot reconstruction games.
//!
//! The attacker only ever sees [`AttackView`]s. Ground truth is attached to
//! the retained reconstructions when the result is assembled, for the
//! evaluator.

pub mod mi;

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use mi::{field_likelihood_and_perplexity, mi_filter, mi_score, mi_sort, MiMetricKind, Source};

use crate::attack::{Attacker, ReconstructionAttempt, Role};
use crate::corpus::{extract, scrub, AttackView, Document, ScrubbedField, TokenId};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    OneShot,
    MultiShot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GameConfig {
    pub variant: Variant,
    pub mi_kind: MiMetricKind,
    /// Fields processed concurrently.
    pub workers: usize,
}

impl Default for GameConfig {
    fn default() -> Self {
        Self {
            variant: Variant::OneShot,
            mi_kind: MiMetricKind::default(),
            workers: 1,
        }
    }
}

/// One retained reconstruction with its evaluator-side ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameEntry {
    pub field_id: String,
    pub ground_truth: Vec<TokenId>,
    pub reconstruction: Vec<TokenId>,
    pub mi_score: f64,
    /// 1-based position in the result order.
    pub rank: usize,
}

/// Retained reconstructions in result order (MI-sorted for multi-shot,
/// field order for one-shot) and every attempt generated.
#[derive(Debug, Clone, PartialEq)]
pub struct GameResult {
    pub role: Role,
    pub entries: Vec<GameEntry>,
    pub attempts: Vec<ReconstructionAttempt>,
}

impl GameResult {
    pub fn ground_truths(&self) -> Vec<&[TokenId]> {
        self.entries
            .iter()
            .map(|e| e.ground_truth.as_slice())
            .collect()
    }

    pub fn reconstructions(&self) -> Vec<&[TokenId]> {
        self.entries
            .iter()
            .map(|e| e.reconstruction.as_slice())
            .collect()
    }
}

/// Attack and baseline results of one game.
#[derive(Debug, Clone, PartialEq)]
pub struct GameOutcome {
    pub attack: GameResult,
    pub baseline: GameResult,
}

/// Scrubs every selected field of every document, in document then span
/// order.
pub fn collect_fields(docs: &[Document]) -> Result<Vec<ScrubbedField>> {
    let mut out = Vec::new();
    for d in docs {
        for (i, _) in extract(d) {
            out.push(scrub(d, i)?);
        }
    }
    Ok(out)
}

pub fn run_one_shot(
    attacker: &Attacker,
    docs: &[Document],
    config: &GameConfig,
) -> Result<GameOutcome> {
    let fields = collect_fields(docs)?;
    play(
        attacker,
        &fields,
        &GameConfig {
            variant: Variant::OneShot,
            ..*config
        },
    )
}

pub fn run_multi_shot(
    attacker: &Attacker,
    docs: &[Document],
    config: &GameConfig,
) -> Result<GameOutcome> {
    let fields = collect_fields(docs)?;
    play(
        attacker,
        &fields,
        &GameConfig {
            variant: Variant::MultiShot,
            ..*config
        },
    )
}

/// Plays the game on already scrubbed fields, for the attack and then the
/// baseline through the same code path.
pub fn play(
    attacker: &Attacker,
    fields: &[ScrubbedField],
    config: &GameConfig,
) -> Result<GameOutcome> {
    Ok(GameOutcome {
        attack: play_role(attacker, Role::Attack, fields, config)?,
        baseline: play_role(attacker, Role::Baseline, fields, config)?,
    })
}

struct Kept {
    attempts: Vec<ReconstructionAttempt>,
    best: usize,
    score: f64,
}

fn play_field(
    attacker: &Attacker,
    role: Role,
    view: &AttackView,
    config: &GameConfig,
) -> Result<Kept> {
    let n = match config.variant {
        Variant::OneShot => 1,
        Variant::MultiShot => attacker.config.n_attempts,
    };
    let attempts = (0..n)
        .map(|a| attacker.attempt(role, view, a))
        .collect::<Result<Vec<_>>>()?;
    let scores = attempts
        .iter()
        .map(|a| mi_score(a, config.mi_kind))
        .collect::<Result<Vec<_>>>()?;
    let best = mi_filter(&scores)?;
    Ok(Kept {
        attempts,
        best,
        score: scores[best],
    })
}

pub fn play_role(
    attacker: &Attacker,
    role: Role,
    fields: &[ScrubbedField],
    config: &GameConfig,
) -> Result<GameResult> {
    let views: Vec<&AttackView> = fields.iter().map(|f| f.view()).collect();
    let kept = parallel_map(&views, config.workers, |v| {
        play_field(attacker, role, v, config)
    })?;

    let order: Vec<usize> = match config.variant {
        Variant::OneShot => (0..fields.len()).collect(),
        Variant::MultiShot => mi_sort(&kept.iter().map(|k| k.score).collect::<Vec<_>>()),
    };
    let entries = order
        .iter()
        .enumerate()
        .map(|(rank, &i)| {
            let k = &kept[i];
            GameEntry {
                field_id: fields[i].view().field_id(),
                ground_truth: fields[i].ground_truth().to_vec(),
                reconstruction: k.attempts[k.best].tokens.clone(),
                mi_score: k.score,
                rank: rank + 1,
            }
        })
        .collect();
    let attempts = kept.into_iter().flat_map(|k| k.attempts).collect();
    Ok(GameResult {
        role,
        entries,
        attempts,
    })
}

/// Maps `f` over `items` on up to `workers` scoped threads; output order
/// follows input order.
fn parallel_map<T: Sync, R: Send>(
    items: &[T],
    workers: usize,
    f: impl Fn(&T) -> Result<R> + Sync,
) -> Result<Vec<R>> {
    let workers = workers.max(1).min(items.len().max(1));
    if workers == 1 {
        return items.iter().map(&f).collect();
    }
    let mut slots: Vec<Option<Result<R>>> = (0..items.len()).map(|_| None).collect();
    std::thread::scope(|s| {
        let chunk = items.len().div_ceil(workers);
        for (items, slots) in items.chunks(chunk).zip(slots.chunks_mut(chunk)) {
            let f = &f;
            s.spawn(move || {
                for (item, slot) in items.iter().zip(slots.iter_mut()) {
                    *slot = Some(f(item));
                }
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.expect("every slot filled"))
        .collect()
}

/// Writes entries as JSON lines `{field_id, ground_truth, reconstruction,
/// mi_score, rank}`.
pub fn write_entries(path: &Path, entries: &[GameEntry]) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for e in entries {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_entries(path: &Path) -> Result<Vec<GameEntry>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::{AttackConfig, ModelRunner};
    use crate::corpus::{generate_corpus, CorpusSpec};
    use crate::model::{Checkpoint, EncoderConfig, Params, TaskKind};

    fn ckpt(task: TaskKind, seed: u64) -> Checkpoint {
        let config = EncoderConfig {
            embed_dim: 16,
            n_layers: 1,
            n_heads: 2,
            ffn_dim: 32,
            ..EncoderConfig::default()
        };
        Checkpoint {
            epoch: 1,
            task,
            params: Params::init(&config, seed),
            val_loss: 0.0,
            val_accuracy: 0.0,
            train_loss: 0.0,
        }
    }

    fn docs(n: usize) -> Vec<Document> {
        generate_corpus(&CorpusSpec {
            n_docs: n,
            seed: 8,
            ..CorpusSpec::default()
        })
        .unwrap()
    }

    fn config() -> AttackConfig {
        AttackConfig {
            n_candidates: 8,
            n_attempts: 3,
            top_p: 0.9,
            ..AttackConfig::default()
        }
    }

    #[test]
    fn one_shot_accounting() {
        let (t, p) = (ckpt(TaskKind::EeBio, 1), ckpt(TaskKind::Mlm, 2));
        let att = Attacker::new(ModelRunner::new(&t), ModelRunner::new(&p), config()).unwrap();
        let d = docs(2);
        let n_fields = collect_fields(&d).unwrap().len();
        let out = run_one_shot(&att, &d, &GameConfig::default()).unwrap();
        for r in [&out.attack, &out.baseline] {
            assert_eq!(r.entries.len(), n_fields);
            assert_eq!(r.attempts.len(), n_fields);
            assert!(r.entries.iter().enumerate().all(|(i, e)| e.rank == i + 1));
        }
        assert_eq!(out.attack.role, Role::Attack);
        assert_eq!(out.baseline.role, Role::Baseline);
        assert_eq!(run_one_shot(&att, &d, &GameConfig::default()).unwrap(), out);
        let empty = run_one_shot(&att, &[], &GameConfig::default()).unwrap();
        assert!(empty.attack.entries.is_empty() && empty.baseline.entries.is_empty());
    }

    #[test]
    fn multi_shot_accounting_and_order() {
        let (t, p) = (ckpt(TaskKind::EeSpade, 1), ckpt(TaskKind::Mlm, 2));
        let att = Attacker::new(ModelRunner::new(&t), ModelRunner::new(&p), config()).unwrap();
        let d = docs(2);
        let n_fields = collect_fields(&d).unwrap().len();
        let cfg = GameConfig {
            variant: Variant::MultiShot,
            ..GameConfig::default()
        };
        let out = run_multi_shot(&att, &d, &cfg).unwrap();
        assert_eq!(out.attack.attempts.len(), 3 * n_fields);
        assert_eq!(out.attack.entries.len(), n_fields);
        let scores: Vec<f64> = out.attack.entries.iter().map(|e| e.mi_score).collect();
        assert!(scores.windows(2).all(|w| w[0] >= w[1]));
        let mut ids: Vec<&str> = out
            .attack
            .entries
            .iter()
            .map(|e| e.field_id.as_str())
            .collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), n_fields);
        for e in &out.attack.entries {
            assert!(out
                .attack
                .attempts
                .iter()
                .any(|a| a.field_id == e.field_id && a.tokens == e.reconstruction));
        }
    }

    #[test]
    fn single_attempt_multi_shot_keeps_one_shot_fields() {
        let (t, p) = (ckpt(TaskKind::EeBio, 1), ckpt(TaskKind::Mlm, 2));
        let c = AttackConfig {
            n_attempts: 1,
            ..config()
        };
        let att = Attacker::new(ModelRunner::new(&t), ModelRunner::new(&p), c).unwrap();
        let d = docs(2);
        let one = run_one_shot(&att, &d, &GameConfig::default()).unwrap();
        let multi = run_multi_shot(&att, &d, &GameConfig::default()).unwrap();
        let key = |r: &GameResult| {
            let mut v: Vec<(String, Vec<TokenId>)> = r
                .entries
                .iter()
                .map(|e| (e.field_id.clone(), e.reconstruction.clone()))
                .collect();
            v.sort();
            v
        };
        assert_eq!(key(&one.attack), key(&multi.attack));
    }

    #[test]
    fn workers_do_not_change_results() {
        let (t, p) = (ckpt(TaskKind::EeBio, 1), ckpt(TaskKind::Mlm, 2));
        let att = Attacker::new(ModelRunner::new(&t), ModelRunner::new(&p), config()).unwrap();
        let d = docs(3);
        let serial = run_multi_shot(&att, &d, &GameConfig::default()).unwrap();
        let parallel = run_multi_shot(
            &att,
            &d,
            &GameConfig {
                workers: 3,
                ..GameConfig::default()
            },
        )
        .unwrap();
        assert_eq!(serial, parallel);
    }

    #[test]
    fn entries_round_trip() {
        let e = vec![GameEntry {
            field_id: "a#1".into(),
            ground_truth: vec![1, 2],
            reconstruction: vec![1, 3],
            mi_score: 1.5,
            rank: 1,
        }];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.jsonl");
        write_entries(&p, &e).unwrap();
        assert_eq!(read_entries(&p).unwrap(), e);
    }
}
