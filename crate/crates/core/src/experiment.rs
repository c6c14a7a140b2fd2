//! Experiment driver: a TOML experiment spec, its hash, and the generate,
//! train, attack, report and sweep stages over an output directory.
//!
//! Layout of one experiment directory:
//!
//! ```text
//! spec.toml  spec_hash
//! corpus/    corpus.jsonl images/ vocab.txt partition.json [aux.jsonl]
//! train/     {target,public,aux}/epoch_NNNN.ckpt metrics.csv optimizer-epoch_NNNN.bin
//! attack/    <run>/manifest.json {attack,baseline}_{attempts,game}.jsonl
//! report/    table.csv <run>_curves.csv <run>_curves.svg
//! ```
//!
//! Every stage writes the spec hash into its outputs and refuses to read
//! outputs carrying a different hash.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attack::{AttackConfig, Attacker, ModelRunner};
use crate::corpus::io::{read_corpus, write_corpus};
use crate::corpus::{
    generate_corpus, partition, partition_sizes, CorpusSpec, Document, Exclusion, PartitionRatios,
    ScrubbedField,
};
use crate::error::{Error, Result};
use crate::game::{
    collect_fields, play, GameConfig, GameOutcome, GameResult, MiMetricKind, Variant,
};
use crate::metrics::{
    curves, curves_svg, improvement_factor, write_curves, write_table, OneShotScores, ReportRow,
    DEFAULT_EPSILON,
};
use crate::model::{
    Checkpoint, Criterion, EncoderConfig, OptimizerState, TaskKind, TrainConfig, Trainer,
};
use crate::seed;

pub const SPEC_HASH_FILE: &str = "spec_hash";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Unimodal,
    Bimodal,
}

/// The corpus spec, inline or in a separate TOML file (relative to the
/// experiment spec).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CorpusSource {
    Path(PathBuf),
    Inline(CorpusSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    /// Defaults to 300 for MLM and 150 for the other tasks.
    #[serde(default)]
    pub epochs: Option<usize>,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_mask_rate")]
    pub mask_rate: f64,
    #[serde(default = "default_clip")]
    pub grad_clip: f64,
}

fn default_batch() -> usize {
    8
}
fn default_lr() -> f64 {
    1e-3
}
fn default_mask_rate() -> f64 {
    0.15
}
fn default_clip() -> f64 {
    1.0
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            epochs: None,
            batch_size: default_batch(),
            learning_rate: default_lr(),
            mask_rate: default_mask_rate(),
            grad_clip: default_clip(),
        }
    }
}

impl TrainSettings {
    pub fn to_config(&self, task: TaskKind, seed: u64) -> TrainConfig {
        TrainConfig {
            task,
            epochs: self.epochs.unwrap_or(TrainConfig::default_epochs(task)),
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            mask_rate: self.mask_rate,
            seed,
            visual_noise_ablation: false,
            grad_clip: self.grad_clip,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpochSweep {
    /// Attack every `stride`-th checkpoint (plus the last one).
    #[serde(default = "default_stride")]
    pub stride: usize,
    /// Fraction of the private fields attacked at each checkpoint.
    #[serde(default = "default_field_fraction")]
    pub field_fraction: f64,
}

fn default_stride() -> usize {
    5
}
fn default_field_fraction() -> f64 {
    0.4
}

impl Default for EpochSweep {
    fn default() -> Self {
        Self {
            stride: default_stride(),
            field_fraction: default_field_fraction(),
        }
    }
}

/// An auxiliary MLM trained on a differently distributed corpus, used in
/// place of the public MLM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuxShift {
    pub exclude: Vec<Exclusion>,
    /// Defaults to the size of the public training split.
    #[serde(default)]
    pub n_docs: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ablations {
    #[serde(default)]
    pub layout_off: bool,
    #[serde(default)]
    pub visual_noise: bool,
    #[serde(default)]
    pub epoch_sweep: Option<EpochSweep>,
    #[serde(default)]
    pub aux_shift: Option<AuxShift>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    /// Master seed; every stage seed is derived from it.
    pub seed: u64,
    #[serde(default = "default_backbone")]
    pub backbone: String,
    /// Free-form dataset label for the report.
    #[serde(default = "default_data")]
    pub data: String,
    pub corpus: CorpusSource,
    #[serde(default = "PartitionRatios::funsd_like")]
    pub partition: PartitionRatios,
    pub task: TaskKind,
    pub criterion: Criterion,
    pub modality: Modality,
    pub variant: Variant,
    #[serde(default)]
    pub mi_kind: MiMetricKind,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub target_train: TrainSettings,
    #[serde(default)]
    pub public_train: TrainSettings,
    #[serde(default)]
    pub attack: AttackConfig,
    #[serde(default)]
    pub ablations: Ablations,
}

fn default_backbone() -> String {
    "layout".into()
}
fn default_data() -> String {
    "synthetic".into()
}
fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

impl ExperimentSpec {
    /// Reads a spec and inlines a corpus spec given by path.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut spec = Self::from_toml(&text)?;
        if let CorpusSource::Path(p) = &spec.corpus {
            let p = path.parent().unwrap_or(Path::new(".")).join(p);
            let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            let corpus: CorpusSpec = toml::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            spec.corpus = CorpusSource::Inline(corpus);
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("experiment spec: {e}")))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("experiment spec: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        let corpus = self.corpus_spec()?;
        corpus.validate()?;
        let enc = self.target_encoder();
        if enc.vocab_size != corpus.vocab_size || enc.max_seq_len < corpus.max_seq_len {
            return Err(Error::Config(format!(
                "encoder (vocab {}, max_seq_len {}) does not fit corpus (vocab {}, max_seq_len {})",
                enc.vocab_size, enc.max_seq_len, corpus.vocab_size, corpus.max_seq_len
            )));
        }
        self.partition.validate()?;
        self.target_encoder().validate()?;
        self.target_train.to_config(self.task, 0).validate()?;
        self.public_train.to_config(TaskKind::Mlm, 0).validate()?;
        self.attack.validate()?;
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if let Some(s) = &self.ablations.epoch_sweep {
            if s.stride == 0 || !(s.field_fraction > 0.0 && s.field_fraction <= 1.0) {
                return Err(Error::Config(format!("invalid epoch sweep {s:?}")));
            }
        }
        if self.ablations.visual_noise && self.modality == Modality::Unimodal {
            return Err(Error::Config("visual_noise needs a bimodal target".into()));
        }
        Ok(())
    }

    /// Corpus spec with its seed derived from the master seed.
    pub fn corpus_spec(&self) -> Result<CorpusSpec> {
        match &self.corpus {
            CorpusSource::Inline(c) => Ok(CorpusSpec {
                seed: seed::derive(self.seed, "corpus"),
                render_images: c.render_images || self.modality == Modality::Bimodal,
                ..c.clone()
            }),
            CorpusSource::Path(p) => Err(Error::Config(format!(
                "corpus spec {} not loaded; use ExperimentSpec::load",
                p.display()
            ))),
        }
    }

    /// Corpus of the distribution-shifted auxiliary, if configured. By
    /// default it matches the public training and validation splits in size.
    pub fn aux_corpus_spec(&self, n_public: usize) -> Result<Option<CorpusSpec>> {
        let Some(aux) = &self.ablations.aux_shift else {
            return Ok(None);
        };
        let base = self.corpus_spec()?;
        Ok(Some(CorpusSpec {
            n_docs: aux.n_docs.unwrap_or(n_public),
            exclude: aux.exclude.clone(),
            duplication_rate: 0.0,
            id_prefix: format!("{}-aux", base.id_prefix),
            seed: seed::derive(self.seed, "corpus/aux"),
            ..base
        }))
    }

    /// Splits the auxiliary corpus into (validation, training). The
    /// auxiliary is validated on its own template family: the target's
    /// validation split would favour an untrained model.
    pub fn split_aux<'a>(&self, aux: &'a [Document]) -> (&'a [Document], &'a [Document]) {
        let r = &self.partition;
        let share = r.valid / (r.valid + r.train_pub);
        let n_valid = ((aux.len() as f64 * share).round() as usize)
            .max(1)
            .min(aux.len() / 2);
        aux.split_at(n_valid)
    }

    pub fn target_encoder(&self) -> EncoderConfig {
        EncoderConfig {
            layout_enabled: self.encoder.layout_enabled && !self.ablations.layout_off,
            visual_enabled: self.modality == Modality::Bimodal,
            ..self.encoder
        }
    }

    /// The public and auxiliary MLMs share the target's backbone.
    pub fn public_encoder(&self) -> EncoderConfig {
        self.target_encoder()
    }

    pub fn target_train_config(&self) -> TrainConfig {
        self.target_train
            .to_config(self.task, seed::derive(self.seed, "train/target"))
    }

    pub fn public_train_config(&self) -> TrainConfig {
        self.public_train
            .to_config(TaskKind::Mlm, seed::derive(self.seed, "train/public"))
    }

    pub fn aux_train_config(&self) -> TrainConfig {
        self.public_train
            .to_config(TaskKind::Mlm, seed::derive(self.seed, "train/aux"))
    }

    pub fn attack_config(&self) -> AttackConfig {
        AttackConfig {
            seed: seed::derive(self.seed, "attack"),
            ..self.attack.clone()
        }
    }

    /// SHA-256 (hex) of the canonical JSON form of the resolved spec.
    pub fn hash(&self) -> Result<String> {
        let mut resolved = self.clone();
        resolved.corpus = CorpusSource::Inline(self.corpus_spec()?);
        let json = serde_json::to_string(&resolved)?;
        Ok(hex::encode(Sha256::digest(json.as_bytes())))
    }
}

/// Paths inside one experiment directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn hash_file(&self) -> PathBuf {
        self.root.join(SPEC_HASH_FILE)
    }
    pub fn corpus_dir(&self) -> PathBuf {
        self.root.join("corpus")
    }
    pub fn corpus_file(&self) -> PathBuf {
        self.corpus_dir().join("corpus.jsonl")
    }
    pub fn aux_corpus_file(&self) -> PathBuf {
        self.corpus_dir().join("aux.jsonl")
    }
    pub fn vocab_file(&self) -> PathBuf {
        self.corpus_dir().join("vocab.txt")
    }
    pub fn partition_file(&self) -> PathBuf {
        self.corpus_dir().join("partition.json")
    }
    pub fn train_dir(&self, role: ModelRole) -> PathBuf {
        self.root.join("train").join(role.name())
    }
    pub fn attack_dir(&self, run: &str) -> PathBuf {
        self.root.join("attack").join(run)
    }
    pub fn report_dir(&self) -> PathBuf {
        self.root.join("report")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelRole {
    Target,
    Public,
    Aux,
}

impl ModelRole {
    pub fn name(self) -> &'static str {
        match self {
            ModelRole::Target => "target",
            ModelRole::Public => "public",
            ModelRole::Aux => "aux",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionRecord {
    pub spec_hash: String,
    pub sizes: BTreeMap<String, usize>,
    pub valid: Vec<String>,
    pub train_pub: Vec<String>,
    pub train_pri: Vec<String>,
}

fn check_hash(dir: &Path, expected: &str) -> Result<()> {
    let path = dir.join(SPEC_HASH_FILE);
    let found = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    if found.trim() != expected {
        return Err(Error::Data(format!(
            "{} was produced by spec {} but the current spec hashes to {expected}; re-run the earlier stages",
            dir.display(),
            found.trim()
        )));
    }
    Ok(())
}

fn write_hash(dir: &Path, hash: &str) -> Result<()> {
    let path = dir.join(SPEC_HASH_FILE);
    fs::write(&path, format!("{hash}\n")).map_err(|e| Error::io(&path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// JSON lines preceded by a `{"spec_hash": ...}` header line.
pub fn write_jsonl<T: Serialize>(path: &Path, spec_hash: &str, items: &[T]) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer(&mut w, &serde_json::json!({ "spec_hash": spec_hash }))?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a file written by [`write_jsonl`]; returns the header hash.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<(String, Vec<T>)> {
    #[derive(Deserialize)]
    struct Header {
        spec_hash: String,
    }
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(f).lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::Format(format!("{}: empty file", path.display())))?
        .map_err(|e| Error::io(path, e))?;
    let header: Header = serde_json::from_str(&first)
        .map_err(|e| Error::Format(format!("{}: missing spec_hash header: {e}", path.display())))?;
    let mut items = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        items.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), i + 2)))?,
        );
    }
    Ok((header.spec_hash, items))
}

/// Writes the corpus, vocabulary and partition. Refuses to overwrite an
/// existing corpus unless `force`.
pub fn cmd_generate(
    spec: &ExperimentSpec,
    layout: &Layout,
    force: bool,
) -> Result<PartitionRecord> {
    let hash = spec.hash()?;
    let dir = layout.corpus_dir();
    if dir.exists() {
        if !force {
            return Err(Error::Config(format!(
                "{} already exists; pass --force to overwrite",
                dir.display()
            )));
        }
        fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    create_dir(&dir)?;
    create_dir(&layout.root)?;
    fs::write(layout.root.join("spec.toml"), spec.to_toml()?)
        .map_err(|e| Error::io(&layout.root, e))?;
    write_hash(&layout.root, &hash)?;

    let cspec = spec.corpus_spec()?;
    let docs = generate_corpus(&cspec)?;
    write_corpus(&layout.corpus_file(), &docs)?;
    cspec.vocabulary()?.save(&layout.vocab_file())?;
    let part = partition(&docs, &spec.partition, seed::derive(spec.seed, "partition"))?;
    let ids = |d: &[Document]| d.iter().map(|d| d.id.clone()).collect::<Vec<_>>();
    let mut sizes = BTreeMap::new();
    sizes.insert("valid".to_string(), part.valid.len());
    sizes.insert("train_pub".to_string(), part.train_pub.len());
    sizes.insert("train_pri".to_string(), part.train_pri.len());
    let record = PartitionRecord {
        spec_hash: hash.clone(),
        sizes,
        valid: ids(&part.valid),
        train_pub: ids(&part.train_pub),
        train_pri: ids(&part.train_pri),
    };
    let path = layout.partition_file();
    fs::write(&path, serde_json::to_string_pretty(&record)?).map_err(|e| Error::io(&path, e))?;
    log::info!(
        "generated {} documents: valid {}, train_pub {}, train_pri {}",
        docs.len(),
        part.valid.len(),
        part.train_pub.len(),
        part.train_pri.len()
    );
    if let Some(aux) = spec.aux_corpus_spec(part.train_pub.len() + part.valid.len())? {
        let aux_docs = generate_corpus(&aux)?;
        write_corpus(&layout.aux_corpus_file(), &aux_docs)?;
        log::info!("generated {} auxiliary documents", aux_docs.len());
    }
    write_hash(&dir, &hash)?;
    Ok(record)
}

/// The partitioned corpus of an experiment directory.
pub struct LoadedCorpus {
    pub valid: Vec<Document>,
    pub train_pub: Vec<Document>,
    pub train_pri: Vec<Document>,
    pub aux: Option<Vec<Document>>,
}

pub fn load_corpus(spec: &ExperimentSpec, layout: &Layout) -> Result<LoadedCorpus> {
    let hash = spec.hash()?;
    check_hash(&layout.corpus_dir(), &hash)?;
    let docs = read_corpus(&layout.corpus_file())?;
    let path = layout.partition_file();
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let record: PartitionRecord = serde_json::from_str(&text)?;
    let by_id: BTreeMap<&str, &Document> = docs.iter().map(|d| (d.id.as_str(), d)).collect();
    let pick = |ids: &[String]| -> Result<Vec<Document>> {
        ids.iter()
            .map(|id| {
                by_id
                    .get(id.as_str())
                    .map(|d| (*d).clone())
                    .ok_or_else(|| Error::Data(format!("partition names unknown document {id}")))
            })
            .collect()
    };
    let aux = if spec.ablations.aux_shift.is_some() {
        Some(read_corpus(&layout.aux_corpus_file())?)
    } else {
        None
    };
    Ok(LoadedCorpus {
        valid: pick(&record.valid)?,
        train_pub: pick(&record.train_pub)?,
        train_pri: pick(&record.train_pri)?,
        aux,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub spec_hash: String,
}

fn checkpoint_path(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(format!("epoch_{epoch:04}.ckpt"))
}

fn optimizer_path(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(format!("optimizer-epoch_{epoch:04}.bin"))
}

fn latest_optimizer(dir: &Path) -> Result<Option<usize>> {
    if !dir.exists() {
        return Ok(None);
    }
    let mut best = None;
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let name = entry.map_err(|e| Error::io(dir, e))?.file_name();
        let name = name.to_string_lossy();
        if let Some(e) = name
            .strip_prefix("optimizer-epoch_")
            .and_then(|s| s.strip_suffix(".bin"))
            .and_then(|s| s.parse::<usize>().ok())
        {
            best = best.max(Some(e));
        }
    }
    Ok(best)
}

pub fn read_metrics(dir: &Path, spec_hash: &str) -> Result<Vec<EpochMetrics>> {
    let path = dir.join("metrics.csv");
    let mut r = csv::Reader::from_path(&path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let rows: Vec<EpochMetrics> = r
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if let Some(bad) = rows.iter().find(|m| m.spec_hash != spec_hash) {
        return Err(Error::Data(format!(
            "{} row for epoch {} carries spec hash {}",
            path.display(),
            bad.epoch,
            bad.spec_hash
        )));
    }
    Ok(rows)
}

fn write_metrics(dir: &Path, rows: &[EpochMetrics]) -> Result<()> {
    let path = dir.join("metrics.csv");
    let mut w = csv::Writer::from_path(&path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

/// Trains one model into `dir`, resuming from the latest saved optimizer
/// state when `resume` is set.
pub fn train_model(
    dir: &Path,
    hash: &str,
    config: &TrainConfig,
    encoder: &EncoderConfig,
    train_docs: &[Document],
    valid_docs: &[Document],
    resume: bool,
) -> Result<()> {
    let latest = if resume && dir.exists() {
        check_hash(dir, hash)?;
        latest_optimizer(dir)?
    } else {
        None
    };
    let (mut trainer, mut rows) = match latest {
        Some(epoch) => {
            let ckpt = Checkpoint::load(&checkpoint_path(dir, epoch))?;
            let opt = OptimizerState::load(&optimizer_path(dir, epoch), ckpt.config())?;
            let mut rows = read_metrics(dir, hash)?;
            rows.retain(|r| r.epoch <= epoch);
            log::info!("{}: resuming after epoch {epoch}", dir.display());
            (Trainer::resume(config.clone(), ckpt, opt)?, rows)
        }
        None => {
            if dir.exists() {
                fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            create_dir(dir)?;
            write_hash(dir, hash)?;
            (Trainer::new(config.clone(), *encoder)?, Vec::new())
        }
    };
    while trainer.epoch() < config.epochs {
        let ckpt = trainer.run_epoch(train_docs, valid_docs)?;
        ckpt.save(&checkpoint_path(dir, ckpt.epoch))?;
        let previous = optimizer_path(dir, ckpt.epoch - 1);
        trainer.optimizer().save(&optimizer_path(dir, ckpt.epoch))?;
        if previous.exists() {
            fs::remove_file(&previous).map_err(|e| Error::io(&previous, e))?;
        }
        log::info!(
            "{} epoch {}: train {:.4} val {:.4} acc {:.4}",
            dir.display(),
            ckpt.epoch,
            ckpt.train_loss,
            ckpt.val_loss,
            ckpt.val_accuracy
        );
        rows.push(EpochMetrics {
            epoch: ckpt.epoch,
            train_loss: ckpt.train_loss,
            val_loss: ckpt.val_loss,
            val_accuracy: ckpt.val_accuracy,
            spec_hash: hash.to_string(),
        });
        write_metrics(dir, &rows)?;
    }
    Ok(())
}

/// Trains the target on the private split, the public MLM on the public
/// split and, if configured, the shifted auxiliary MLM.
pub fn cmd_train(spec: &ExperimentSpec, layout: &Layout, resume: bool) -> Result<()> {
    let hash = spec.hash()?;
    let corpus = load_corpus(spec, layout)?;
    train_model(
        &layout.train_dir(ModelRole::Target),
        &hash,
        &spec.target_train_config(),
        &spec.target_encoder(),
        &corpus.train_pri,
        &corpus.valid,
        resume,
    )?;
    train_model(
        &layout.train_dir(ModelRole::Public),
        &hash,
        &spec.public_train_config(),
        &spec.public_encoder(),
        &corpus.train_pub,
        &corpus.valid,
        resume,
    )?;
    if let Some(aux) = &corpus.aux {
        let (aux_valid, aux_train) = spec.split_aux(aux);
        train_model(
            &layout.train_dir(ModelRole::Aux),
            &hash,
            &spec.aux_train_config(),
            &spec.public_encoder(),
            aux_train,
            aux_valid,
            resume,
        )?;
    }
    Ok(())
}

/// Epoch picked from per-epoch metrics; ties go to the earliest epoch.
pub fn select_epoch(rows: &[EpochMetrics], criterion: Criterion) -> Result<&EpochMetrics> {
    let mut best: Option<&EpochMetrics> = None;
    for r in rows {
        let better = match best {
            None => true,
            Some(b) => match criterion {
                Criterion::Precision => r.val_accuracy > b.val_accuracy,
                Criterion::Loss => r.val_loss < b.val_loss,
            },
        };
        if better {
            best = Some(r);
        }
    }
    best.ok_or_else(|| Error::Data("no training epochs recorded".into()))
}

/// Everything needed to re-run an attack bit-identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackManifest {
    pub spec_hash: String,
    pub run: String,
    pub backbone: String,
    pub data: String,
    pub task: TaskKind,
    pub criterion: Criterion,
    pub modality: Modality,
    pub variant: Variant,
    pub mi_kind: MiMetricKind,
    pub epsilon: f64,
    pub target_epoch: usize,
    pub target_val_accuracy: f64,
    pub target_val_loss: f64,
    pub public_model: String,
    pub public_epoch: usize,
    pub visual_noise: bool,
    pub n_fields: usize,
    pub attack: AttackConfig,
}

/// Deterministic subsample of `fields` (order preserved).
pub fn sample_fields(fields: Vec<ScrubbedField>, fraction: f64, seed: u64) -> Vec<ScrubbedField> {
    if fraction >= 1.0 {
        return fields;
    }
    let n =
        ((fields.len() as f64 * fraction).ceil() as usize).clamp(1.min(fields.len()), fields.len());
    let mut idx: Vec<usize> = (0..fields.len()).collect();
    idx.shuffle(&mut seed::rng(seed));
    let mut keep = idx[..n].to_vec();
    keep.sort_unstable();
    let mut fields: Vec<Option<ScrubbedField>> = fields.into_iter().map(Some).collect();
    keep.into_iter()
        .map(|i| fields[i].take().expect("distinct indices"))
        .collect()
}

fn write_run(dir: &Path, manifest: &AttackManifest, outcome: &GameOutcome) -> Result<()> {
    create_dir(dir)?;
    let h = &manifest.spec_hash;
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(manifest)?).map_err(|e| Error::io(&path, e))?;
    for r in [&outcome.attack, &outcome.baseline] {
        let role = r.role.name();
        write_jsonl(&dir.join(format!("{role}_attempts.jsonl")), h, &r.attempts)?;
        write_jsonl(&dir.join(format!("{role}_game.jsonl")), h, &r.entries)?;
    }
    Ok(())
}

/// Selects the target checkpoint by criterion, plays the configured game
/// for the attack and the baseline, and writes one result directory per
/// attacked checkpoint. Returns the run directories.
pub fn cmd_attack(spec: &ExperimentSpec, layout: &Layout, workers: usize) -> Result<Vec<PathBuf>> {
    let hash = spec.hash()?;
    let corpus = load_corpus(spec, layout)?;
    let target_dir = layout.train_dir(ModelRole::Target);
    check_hash(&target_dir, &hash)?;
    let target_rows = read_metrics(&target_dir, &hash)?;
    let public_role = if spec.ablations.aux_shift.is_some() {
        ModelRole::Aux
    } else {
        ModelRole::Public
    };
    let public_dir = layout.train_dir(public_role);
    check_hash(&public_dir, &hash)?;
    let public_rows = read_metrics(&public_dir, &hash)?;
    // The adversary picks its own auxiliary by validation loss.
    let public_epoch = select_epoch(&public_rows, Criterion::Loss)?.epoch;
    let public = Checkpoint::load(&checkpoint_path(&public_dir, public_epoch))?;

    let config = spec.attack_config();
    let game = GameConfig {
        variant: spec.variant,
        mi_kind: spec.mi_kind,
        workers,
    };
    let all_fields = collect_fields(&corpus.train_pri)?;

    let mut runs: Vec<(String, &EpochMetrics, Vec<ScrubbedField>)> = Vec::new();
    match &spec.ablations.epoch_sweep {
        None => {
            let sel = select_epoch(&target_rows, spec.criterion)?;
            runs.push(("main".into(), sel, all_fields));
        }
        Some(sweep) => {
            let fields = sample_fields(
                all_fields,
                sweep.field_fraction,
                seed::derive(spec.seed, "sweep/fields"),
            );
            let last = target_rows.len();
            for r in &target_rows {
                if (r.epoch - 1) % sweep.stride == 0 || r.epoch == last {
                    runs.push((format!("epoch_{:04}", r.epoch), r, fields.clone()));
                }
            }
        }
    }

    let mut dirs = Vec::new();
    for (run, metrics, fields) in runs {
        let target = Checkpoint::load(&checkpoint_path(&target_dir, metrics.epoch))?;
        let mut runner = ModelRunner::new(&target);
        if spec.ablations.visual_noise {
            runner = runner.with_visual_noise(seed::derive(spec.seed, "visual_noise"));
        }
        let attacker = Attacker::new(runner, ModelRunner::new(&public), config.clone())?;
        let outcome = play(&attacker, &fields, &game)?;
        let manifest = AttackManifest {
            spec_hash: hash.clone(),
            run: run.clone(),
            backbone: spec.backbone.clone(),
            data: spec.data.clone(),
            task: spec.task,
            criterion: spec.criterion,
            modality: spec.modality,
            variant: spec.variant,
            mi_kind: spec.mi_kind,
            epsilon: spec.epsilon,
            target_epoch: metrics.epoch,
            target_val_accuracy: metrics.val_accuracy,
            target_val_loss: metrics.val_loss,
            public_model: public_role.name().into(),
            public_epoch,
            visual_noise: spec.ablations.visual_noise,
            n_fields: fields.len(),
            attack: config.clone(),
        };
        let dir = layout.attack_dir(&run);
        write_run(&dir, &manifest, &outcome)?;
        log::info!(
            "{run}: attacked epoch {} on {} fields ({} target forward passes)",
            metrics.epoch,
            fields.len(),
            attacker.target.passes()
        );
        dirs.push(dir);
    }
    Ok(dirs)
}

/// Attack and baseline results read back from a run directory.
pub struct RunResults {
    pub manifest: AttackManifest,
    pub attack: Vec<crate::game::GameEntry>,
    pub baseline: Vec<crate::game::GameEntry>,
}

pub fn read_run(dir: &Path) -> Result<RunResults> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: AttackManifest = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let read = |role: &str| -> Result<Vec<crate::game::GameEntry>> {
        let path = dir.join(format!("{role}_game.jsonl"));
        if !path.exists() {
            return Err(Error::Data(format!(
                "missing {role} results {}",
                path.display()
            )));
        }
        let (h, entries) = read_jsonl(&path)?;
        if h != manifest.spec_hash {
            return Err(Error::Data(format!(
                "{} carries spec hash {h}, manifest says {}",
                path.display(),
                manifest.spec_hash
            )));
        }
        Ok(entries)
    };
    let attack = read("attack")?;
    let baseline = read("baseline")?;
    Ok(RunResults {
        manifest,
        attack,
        baseline,
    })
}

/// Report row and curves of one run.
fn view(v: &[Vec<u32>]) -> Vec<&[u32]> {
    v.iter().map(|x| x.as_slice()).collect()
}

pub fn summarize(
    run: &RunResults,
) -> Result<(
    ReportRow,
    crate::metrics::CurveReport,
    crate::metrics::CurveReport,
)> {
    let m = &run.manifest;
    let truths =
        |e: &[crate::game::GameEntry]| e.iter().map(|e| e.ground_truth.clone()).collect::<Vec<_>>();
    let recs = |e: &[crate::game::GameEntry]| {
        e.iter()
            .map(|e| e.reconstruction.clone())
            .collect::<Vec<_>>()
    };
    let (at, ar, bt, br) = (
        truths(&run.attack),
        recs(&run.attack),
        truths(&run.baseline),
        recs(&run.baseline),
    );
    let a = OneShotScores::compute(&view(&at), &view(&ar))?;
    let b = OneShotScores::compute(&view(&bt), &view(&br))?;
    let ca = curves(&view(&at), &view(&ar), None)?;
    let cb = curves(&view(&bt), &view(&br), None)?;
    let row = ReportRow {
        backbone: m.backbone.clone(),
        task: m.task.name().into(),
        data: m.data.clone(),
        criterion: match m.criterion {
            Criterion::Precision => "precision".into(),
            Criterion::Loss => "loss".into(),
        },
        modality: match m.modality {
            Modality::Unimodal => "unimodal".into(),
            Modality::Bimodal => "bimodal".into(),
        },
        val_accuracy: m.target_val_accuracy,
        ipf: improvement_factor(&a, &b, m.epsilon),
        ham_aac: ca.ham_aac,
        acc_auc: ca.acc_auc,
        acc_at_1: ca.acc_at_1,
        acc_at_5: ca.acc_at_5,
        acc_at_100: ca.acc_at_100,
        baseline_ham_aac: cb.ham_aac,
        baseline_acc_auc: cb.acc_auc,
        spec_hash: m.spec_hash.clone(),
    };
    Ok((row, ca, cb))
}

/// Aggregates run directories into `table.csv` plus per-run curve CSV and
/// SVG files in `out`. All runs must share one spec hash.
pub fn cmd_report(runs: &[PathBuf], out: &Path) -> Result<Vec<ReportRow>> {
    if runs.is_empty() {
        return Err(Error::Config(
            "report needs at least one run directory".into(),
        ));
    }
    let results = runs
        .iter()
        .map(|d| read_run(d))
        .collect::<Result<Vec<_>>>()?;
    let hash = &results[0].manifest.spec_hash;
    if let Some(bad) = results.iter().find(|r| &r.manifest.spec_hash != hash) {
        return Err(Error::Data(format!(
            "refusing to mix runs of spec {hash} and {}",
            bad.manifest.spec_hash
        )));
    }
    create_dir(out)?;
    let mut rows = Vec::new();
    for r in &results {
        let (row, ca, cb) = summarize(r)?;
        let run = &r.manifest.run;
        write_curves(&out.join(format!("{run}_curves.csv")), &ca, &cb, hash)?;
        let title = format!("{} {} {} ({})", row.task, row.modality, row.criterion, run);
        let svg = curves_svg(&title, &ca, &cb, hash);
        let path = out.join(format!("{run}_curves.svg"));
        fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
        rows.push(row);
    }
    write_table(&out.join("table.csv"), &rows)?;
    Ok(rows)
}

/// A list of experiment spec files run one after another.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Matrix {
    pub specs: Vec<PathBuf>,
}

/// Runs every stage of every spec in a matrix file; returns all report rows
/// and writes them to `sweep_table.csv` in `out_root`.
pub fn cmd_sweep(
    matrix_path: &Path,
    out_root: &Path,
    workers: usize,
    force: bool,
) -> Result<Vec<ReportRow>> {
    let text = fs::read_to_string(matrix_path).map_err(|e| Error::io(matrix_path, e))?;
    let matrix: Matrix = toml::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", matrix_path.display())))?;
    let base = matrix_path.parent().unwrap_or(Path::new("."));
    let mut rows = Vec::new();
    for p in &matrix.specs {
        let spec = ExperimentSpec::load(&base.join(p))?;
        let layout = Layout::new(out_root.join(&spec.name));
        let fresh = force || !layout.corpus_dir().exists();
        if fresh {
            cmd_generate(&spec, &layout, force)?;
        }
        cmd_train(&spec, &layout, !fresh)?;
        let runs = cmd_attack(&spec, &layout, workers)?;
        rows.extend(cmd_report(&runs, &layout.report_dir())?);
    }
    create_dir(out_root)?;
    write_table(&out_root.join("sweep_table.csv"), &rows)?;
    Ok(rows)
}

/// Convenience used by tests and the FFI: IpF of an outcome.
pub fn outcome_ipf(outcome: &GameOutcome, epsilon: f64) -> Result<f64> {
    let score = |r: &GameResult| OneShotScores::compute(&r.ground_truths(), &r.reconstructions());
    Ok(improvement_factor(
        &score(&outcome.attack)?,
        &score(&outcome.baseline)?,
        epsilon,
    ))
}

/// Checks that a partition record matches the configured ratios.
pub fn check_partition_sizes(
    record: &PartitionRecord,
    n_docs: usize,
    ratios: &PartitionRatios,
) -> Result<bool> {
    let (v, p, q) = partition_sizes(n_docs, ratios)?;
    Ok(record.valid.len() == v && record.train_pub.len() == p && record.train_pri.len() == q)
}
