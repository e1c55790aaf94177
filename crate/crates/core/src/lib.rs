//! Flow-feature tables to three-channel images.
//!
//! The crate covers everything up to (and after) the classifier:
//!
//! - [`catalog`]: the feature schema, drop lists and class taxonomy.
//! - [`ingest`]: streaming CSV cleaning into [`ingest::FlowRecord`]s.
//! - [`pixels`]: min/max statistics, pixel normalization and 180-record chunk
//!   encoding into 60x60x3 images.
//! - [`split`]: seeded train/val/test assignment and the dataset manifest.
//! - [`imageio`]: lossless PNG storage of encoded images.
//! - [`metrics`] and [`report`]: confusion matrix, precision/recall/F1 and the
//!   rendered report artifacts.
//! - [`synth`]: synthetic flow CSVs for desk-scale runs.

pub mod catalog;
pub mod error;
pub mod font;
pub mod ident;
pub mod imageio;
pub mod ingest;
pub mod metrics;
pub mod pixels;
pub mod report;
pub mod split;
pub mod synth;

pub use catalog::{ClassLabel, ColumnPlan, FeatureCatalog, LabelMap};
pub use error::{Error, Result};
pub use ingest::{FlowRecord, IngestStats, RejectReason};
pub use metrics::{ConfusionMatrix, EvalReport};
pub use pixels::{EncodedImage, NormStats};
pub use split::{DatasetManifest, Split};
