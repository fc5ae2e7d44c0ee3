//! Step 1: borderline example generation.
//!
//! Each generation call places a random subset of `t` classes in the prompt
//! and asks for utterances that mix the focus class with one other class of
//! the subset in an `alpha : 1 - alpha` proportion.

mod alpha;
mod assignment;
mod generate;
mod parse;
mod prompt;

use thiserror::Error;

use crate::backends::BackendError;

pub use alpha::{sample_alpha, twentieths_from_draw, Alpha, AlphaSampler, BETA_A, BETA_B};
pub use assignment::{plan_assignment, select_assignment, AssignmentMode, MixupAssignment};
pub use generate::{
    batch_prompt, batch_rng, collect_records, generate_classes, generate_for_class, run_batch, BatchOutcome,
    ClassGeneration, GenerationRecord, GenerationSettings,
};
pub use parse::{parse_generations, strip_list_marker};
pub use prompt::{
    build_generation_prompt, build_generation_prompt_with, generation_system_prompt,
    requested_count, requested_majority,
};

#[derive(Debug, Error)]
pub enum MixgenError {
    #[error("subset size t={t} must be at least 2")]
    SubsetTooSmall { t: usize },
    #[error("subset size t={t} exceeds the {available} available classes")]
    SubsetTooLarge { t: usize, available: usize },
    #[error("unknown class `{0}`")]
    UnknownClass(String),
    #[error("{0} must be at least 1")]
    ZeroCount(&'static str),
    #[error(transparent)]
    Backend(#[from] BackendError),
}
