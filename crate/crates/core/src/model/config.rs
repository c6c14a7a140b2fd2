use serde::{Deserialize, Serialize};

use crate::corpus::FieldType;
use crate::error::{Error, Result};

/// Number of visual features pooled per token box (4 columns x 2 rows).
pub const VISUAL_DIM: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TaskKind {
    Mlm,
    EeBio,
    EeSpade,
}

impl TaskKind {
    pub fn code(self) -> u32 {
        match self {
            TaskKind::Mlm => 0,
            TaskKind::EeBio => 1,
            TaskKind::EeSpade => 2,
        }
    }

    pub fn from_code(c: u32) -> Option<Self> {
        match c {
            0 => Some(TaskKind::Mlm),
            1 => Some(TaskKind::EeBio),
            2 => Some(TaskKind::EeSpade),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Mlm => "MLM",
            TaskKind::EeBio => "EE_BIO",
            TaskKind::EeSpade => "EE_SPADE",
        }
    }
}

/// BIO label ids: `O = 0`, `B-type = 1 + 2t`, `I-type = 2 + 2t`.
pub const BIO_LABELS: usize = 1 + 2 * FieldType::ALL.len();
pub const BIO_O: u32 = 0;

pub fn bio_begin(t: FieldType) -> u32 {
    1 + 2 * t as u32
}

pub fn bio_inside(t: FieldType) -> u32 {
    2 + 2 * t as u32
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    pub max_seq_len: usize,
    pub layout_enabled: bool,
    pub visual_enabled: bool,
    pub coord_buckets: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            vocab_size: 512,
            embed_dim: 64,
            n_layers: 2,
            n_heads: 4,
            ffn_dim: 256,
            max_seq_len: 128,
            layout_enabled: true,
            visual_enabled: true,
            coord_buckets: 32,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 || !self.embed_dim.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "embed_dim {} not divisible by n_heads {}",
                self.embed_dim, self.n_heads
            )));
        }
        if self.coord_buckets < 2 {
            return Err(Error::Config("coord_buckets must be >= 2".into()));
        }
        if self.vocab_size < 16 || self.max_seq_len == 0 || self.ffn_dim == 0 || self.n_layers == 0
        {
            return Err(Error::Config(format!("degenerate encoder config {self:?}")));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.n_heads
    }

    /// Bucket of a 0..=1000 coordinate: `floor(coord / 1000 * buckets)`,
    /// with 1000 folded into the last bucket.
    pub fn bucket(&self, coord: u16) -> usize {
        (coord as usize * self.coord_buckets / 1000).min(self.coord_buckets - 1)
    }
}

/// Rule used to pick the attacked epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    /// Best validation accuracy.
    Precision,
    /// Lowest validation loss.
    Loss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub task: TaskKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub mask_rate: f64,
    pub seed: u64,
    #[serde(default)]
    pub visual_noise_ablation: bool,
    /// Global gradient-norm clip; 0 disables clipping.
    #[serde(default = "default_clip")]
    pub grad_clip: f64,
}

fn default_clip() -> f64 {
    1.0
}

impl TrainConfig {
    /// Defaults per task: 300 epochs for MLM, 150 otherwise.
    pub fn for_task(task: TaskKind) -> Self {
        Self {
            task,
            epochs: Self::default_epochs(task),
            batch_size: 8,
            learning_rate: 1e-3,
            mask_rate: 0.15,
            seed: 0,
            visual_noise_ablation: false,
            grad_clip: default_clip(),
        }
    }

    pub fn default_epochs(task: TaskKind) -> usize {
        match task {
            TaskKind::Mlm => 300,
            TaskKind::EeBio | TaskKind::EeSpade => 150,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mask_rate > 0.0 && self.mask_rate < 1.0) {
            return Err(Error::Config(format!(
                "mask_rate must lie in (0, 1), got {}",
                self.mask_rate
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 || !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "degenerate training config {self:?}"
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epoch_defaults() {
        assert_eq!(TrainConfig::for_task(TaskKind::Mlm).epochs, 300);
        assert_eq!(TrainConfig::for_task(TaskKind::EeBio).epochs, 150);
        assert_eq!(TrainConfig::for_task(TaskKind::EeSpade).epochs, 150);
    }

    #[test]
    fn buckets() {
        let c = EncoderConfig::default();
        assert_eq!(c.bucket(0), 0);
        assert_eq!(c.bucket(31), 0);
        assert_eq!(c.bucket(32), 1);
        assert_eq!(c.bucket(999), 31);
        assert_eq!(c.bucket(1000), 31);
    }

    #[test]
    fn validation() {
        let c = EncoderConfig {
            n_heads: 5,
            ..EncoderConfig::default()
        };
        assert!(c.validate().is_err());
        let c = EncoderConfig {
            coord_buckets: 1,
            ..EncoderConfig::default()
        };
        assert!(c.validate().is_err());
        let mut t = TrainConfig::for_task(TaskKind::Mlm);
        t.mask_rate = 0.0;
        assert!(t.validate().is_err());
    }
}
