//! Dataset metadata construction and validation: deterministic
//! prompt-to-label parsing, near-duplicate filtering, stratified splits,
//! counterfactual pairing, and datasheet emission.

mod counterfactual;
mod datasheet;
mod dedup;
mod lexicon;
mod metadata;
mod phash;
mod split;

pub use counterfactual::{counterfactual_pairs, load_prompts, CounterfactualPair, PromptSpec};
pub use datasheet::{emit_datasheet, percent_half_up, Datasheet, DatasheetRow, DatasheetTable};
pub use dedup::{dedup, DedupOutcome, RejectedDuplicate};
pub use lexicon::{parse_prompt_labels, DescriptorLexicon, RejectedPrompt};
pub use metadata::{load_metadata, save_metadata, MetadataRecord, Split};
pub use phash::{dhash_cells, phash, PerceptualHash};
pub use split::{stratified_split, LabelDeviation, SplitOutcome, SplitRatios};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("undecodable image: {0}")]
    BadImage(String),
    #[error("dedup threshold {0} outside 0..=64")]
    BadThreshold(u32),
    #[error("split ratios must be positive and sum to 1, got {0:?}")]
    BadRatios([f64; 3]),
    #[error("metadata {path}: {reason}")]
    BadMetadata { path: String, reason: String },
    #[error("metadata {path}: {source}")]
    MetadataIo {
        path: String,
        source: std::io::Error,
    },
    #[error("lexicon line {line}: {reason}")]
    BadLexicon { line: usize, reason: String },
    #[error("prompts file {path}: {reason}")]
    BadPrompts { path: String, reason: String },
    #[error("no records")]
    Empty,
}
