//! Training-free composed image retrieval.
//!
//! A reference image and a manipulation text are folded into one reflective
//! chain-of-thought prompt, a multimodal LLM answers with a four-field
//! reasoning trace, and the trace's target description is matched against a
//! gallery of image embeddings by cosine similarity.
//!
//! Modules, in pipeline order:
//!
//! - [`prompting`]: template, in-context samples, task variants, prompt assembly
//! - [`gateway`]: backend interface, retries, response parsing, two-stage baseline
//! - [`embedding`]: text/image embedding providers, normalization, on-disk stores
//! - [`index`]: exact cosine top-k over an immutable gallery
//! - [`evaluation`]: Recall@k, mAP@k, Recall_Subset@k and benchmark reports
//! - [`pipeline`]: run configuration, response cache, benchmark and one-shot runs
//!
//! The `parallel` feature (on by default) enables rayon for gallery scans,
//! query batches and trace generation. Without it every path runs
//! sequentially and produces identical results.

pub mod digest;
pub mod embedding;
pub mod evaluation;
pub mod gateway;
pub mod index;
pub mod pipeline;
pub mod prompting;

mod error;

pub use error::{CirError, ExitCode, QueryFailure};
pub use prompting::{ManipulationText, ReferenceImage};
