//! Dataset ingestion: manifests, rater screening, MOS aggregation, splits.

mod manifest;
mod screening;
mod split;

pub use manifest::{
    aggregate_mos, load_manifest, load_manifest_with, write_manifest, DocumentSample,
    ManifestOptions,
};
pub use screening::{screen_raters, screen_samples, RaterMatrix, ScreeningReport};
pub use split::{split_dataset, SplitSpec};
