//! Data ingestion, vocabulary-group splits, the predict-evaluate-update
//! protocol and metric aggregation.

mod protocol;
mod schema;
mod smooth;
mod split;

pub use protocol::{run_continual, run_stream, score, MetricKind, MetricsLog, StepMetric, StreamOptions};
pub use schema::{ingest_csv, ingest_reader, ColumnKind, ColumnSpec, Dataset, Normalizer, Schema, StreamRecord};
pub use smooth::smooth_gaussian;
pub use split::{batches, init_split, partition_by_items, partition_by_vocab, train_test_split, Group};
