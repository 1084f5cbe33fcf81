//! Model files (versioned JSON with 17-significant-digit floats) and
//! line-delimited JSON sequence datasets.

mod dataset;
mod format;
mod model;

pub use dataset::{read_dataset, save_dataset, write_dataset, DatasetReader, LabeledSequence};
pub use model::{load_model, model_from_str, model_to_string, save_model, Model, ModelFile, ModelKind, SCHEMA_VERSION};
