use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MeanKind {
    Arithmetic,
    Geometric,
}

/// Positions whose target loss scores a candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LossScope {
    /// Only the position being reconstructed.
    CurrentToken,
    /// Every field position from the span start up to the current one.
    FieldSoFar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    pub n_candidates: usize,
    pub pub_temp_start: f64,
    pub pub_temp_end: f64,
    pub pub_decay_steps: usize,
    pub target_temp: f64,
    pub mean_kind: MeanKind,
    pub mean_weight: f64,
    pub top_p: f64,
    pub n_attempts: usize,
    pub loss_scope: LossScope,
    pub seed: u64,
    /// Candidates scored per target forward batch.
    #[serde(default = "default_score_batch")]
    pub score_batch: usize,
}

fn default_score_batch() -> usize {
    32
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            n_candidates: 128,
            pub_temp_start: 0.6,
            pub_temp_end: 0.3,
            pub_decay_steps: 3,
            target_temp: 0.3,
            mean_kind: MeanKind::Geometric,
            mean_weight: 0.4,
            top_p: 0.10,
            n_attempts: 8,
            loss_scope: LossScope::FieldSoFar,
            seed: 0,
            score_batch: default_score_batch(),
        }
    }
}

impl AttackConfig {
    /// Checks the invariants that do not depend on the vocabulary; the
    /// candidate count is checked against the vocabulary at selection time.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n_candidates < 2 {
            return bad(format!(
                "n_candidates must be at least 2, got {}",
                self.n_candidates
            ));
        }
        for (name, t) in [
            ("pub_temp_start", self.pub_temp_start),
            ("pub_temp_end", self.pub_temp_end),
            ("target_temp", self.target_temp),
        ] {
            if !(t > 0.0 && t.is_finite()) {
                return bad(format!("{name} must be positive, got {t}"));
            }
        }
        if !(0.0..=1.0).contains(&self.mean_weight) {
            return bad(format!(
                "mean_weight must lie in [0, 1], got {}",
                self.mean_weight
            ));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return bad(format!("top_p must lie in (0, 1], got {}", self.top_p));
        }
        if self.n_attempts == 0 {
            return bad("n_attempts must be at least 1".into());
        }
        if self.score_batch == 0 {
            return bad("score_batch must be at least 1".into());
        }
        Ok(())
    }

    /// Public-model temperature at 1-based step `t`: linear decay from
    /// `pub_temp_start` to `pub_temp_end` over `pub_decay_steps` steps.
    pub fn pub_temperature(&self, t: usize) -> f64 {
        let d = self.pub_decay_steps;
        if d == 0 {
            return self.pub_temp_end;
        }
        let frac = ((d as f64 - (t as f64 - 1.0)) / d as f64).max(0.0);
        self.pub_temp_end + (self.pub_temp_start - self.pub_temp_end) * frac
    }

    /// The public-only baseline: same pipeline with `w = 0`.
    pub fn baseline(&self) -> Self {
        Self {
            mean_weight: 0.0,
            ..self.clone()
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("attack config serialises")
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        let c: Self =
            toml::from_str(s).map_err(|e| Error::Config(format!("attack manifest: {e}")))?;
        c.validate()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints() {
        let c = AttackConfig {
            pub_temp_start: 0.6,
            pub_temp_end: 0.2,
            pub_decay_steps: 3,
            ..AttackConfig::default()
        };
        assert_eq!(c.pub_temperature(1), 0.6);
        assert!((c.pub_temperature(2) - (0.2 + 0.4 * 2.0 / 3.0)).abs() < 1e-15);
        assert_eq!(c.pub_temperature(4), 0.2);
        assert_eq!(c.pub_temperature(9), 0.2);
    }

    #[test]
    fn defaults_and_validation() {
        let c = AttackConfig::default();
        c.validate().unwrap();
        assert_eq!(c.n_candidates, 128);
        assert_eq!(c.n_attempts, 8);
        assert_eq!(c.top_p, 0.10);
        assert_eq!(c.mean_kind, MeanKind::Geometric);
        assert!((0.2..=0.4).contains(&c.pub_temp_end));
        for bad in [
            AttackConfig {
                n_candidates: 1,
                ..c.clone()
            },
            AttackConfig {
                top_p: 0.0,
                ..c.clone()
            },
            AttackConfig {
                top_p: 1.5,
                ..c.clone()
            },
            AttackConfig {
                target_temp: 0.0,
                ..c.clone()
            },
            AttackConfig {
                mean_weight: 1.1,
                ..c.clone()
            },
            AttackConfig {
                n_attempts: 0,
                ..c.clone()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn manifest_round_trip() {
        let c = AttackConfig {
            seed: 17,
            mean_kind: MeanKind::Arithmetic,
            loss_scope: LossScope::CurrentToken,
            ..AttackConfig::default()
        };
        let s = c.to_toml();
        assert!(s.contains("n_candidates = 128"));
        assert!(s.contains("mean_kind = \"ARITHMETIC\""));
        assert_eq!(AttackConfig::from_toml(&s).unwrap(), c);
        assert!(AttackConfig::from_toml("bogus = 1").is_err());
    }
}
