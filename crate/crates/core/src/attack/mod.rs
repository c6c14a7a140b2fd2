//! Field reconstruction: candidate selection with a public MLM, target
//! loss scoring, aggregation and nucleus sampling, plus the private-MLM
//! variant and the public-only baseline.

pub mod config;
pub mod engine;
pub mod io;
pub mod steps;

pub use config::{AttackConfig, LossScope, MeanKind};
pub use engine::{
    baseline_reconstruct, reconstruct_field, reconstruct_field_private_mlm, score_candidates_loss,
    select_candidates, top_candidates, with_prefix, Attacker, ModelRunner, ReconstructionAttempt,
    Role,
};
pub use io::{read_attempts, write_attempts};
pub use steps::{aggregate, logits_to_likelihood, loss_to_likelihood, nucleus, sample_top_p};
