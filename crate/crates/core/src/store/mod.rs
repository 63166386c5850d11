//! Model bundle documents and the monitoring event store.

mod bundle;
mod events;

pub use bundle::{load_bundle, save_bundle, BundleError, LoadedBundle, ModelBundle, Strictness, SCHEMA};
pub use events::{ColumnMapping, EventStore, IngestReport, MonitoringRecord, Reject, StoreError};
