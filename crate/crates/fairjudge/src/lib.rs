//! FairJudge: a label-constrained, abstention-aware judging harness for
//! auditing text-to-image systems with multimodal judges.
//!
//! The crate is organized around the audit loop:
//!
//! - [`taxonomy`] — closed label vocabularies, synonym canonicalization,
//!   abstention semantics.
//! - [`prompt`] — byte-exact judge prompts (attribute, alignment,
//!   profession), ablation variants, caption perturbations, and the
//!   templated class texts used by the embedding baseline.
//! - [`gateway`] — uniform access to judge backends (live HTTP, replay
//!   store, scripted), with retries, bounded parallelism, and per-call
//!   latency/cost capture.
//! - [`verdict`] — strict-JSON verdict parsing with total, categorized
//!   failure handling and full defect logging.
//! - [`scorer`] — abstention-aware accuracy, coverage, rubric rescaling,
//!   macro means, bootstrap intervals.
//! - [`baseline`] — cosine alignment and templated zero-shot
//!   classification over externally supplied embeddings.
//! - [`corpus`] — dataset metadata construction: descriptor parsing,
//!   perceptual-hash dedup, stratified splits, counterfactual pairs,
//!   datasheets.
//! - [`cascade`] — progressive judging with escalation triggers,
//!   per-field arbitration, and exact cost accounting.
//! - [`harness`] — orchestration, persistence, reports, and byte-exact
//!   replay; the CLI in `fairjudge-cli` is a thin wrapper over this.

pub mod baseline;
pub mod cascade;
pub mod corpus;
pub mod digest;
pub mod gateway;
pub mod harness;
pub mod prompt;
pub mod scorer;
pub mod taxonomy;
pub mod verdict;

pub use digest::Digest;
pub use taxonomy::{AttributeKind, CanonResult, DatasetProfile, LabelSet, Taxonomy};
