//! Few-shot text classification augmentation with borderline LLM
//! generations and LLM relabeling.
//!
//! The pipeline has two steps. [`mixgen`] prompts a chat model for
//! utterances that mix a focus class with a second class in an
//! `alpha : 1 - alpha` proportion; [`relabel`] then asks the model to
//! reclassify every utterance among its nearest classes. [`pipeline`] ties
//! the steps together with checkpointing and a run manifest.

pub mod backends;
pub mod classifier;
pub mod data;
pub mod exec;
pub mod jsonl;
pub mod mixgen;
pub mod pipeline;
pub mod relabel;
pub mod template;

pub use exec::Execution;
