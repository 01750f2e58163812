pub mod config;
pub mod experiment;
pub mod forest;
pub mod ingest;
pub mod metrics;
pub mod preprocess;
pub mod report;
pub mod seeding;
pub mod stats;
pub mod synth;

pub use ingest::{ChangeRecord, Dataset, DatasetSummary, Period, PeriodizedDataset};
pub use preprocess::{FeatureMatrix, FilterReport};
