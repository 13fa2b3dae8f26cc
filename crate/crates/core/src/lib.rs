//! Headless engine that grounds model answers in a page's element structure.
//!
//! The pipeline: a [`snapshot::Snapshot`] is indexed into an
//! [`index::ElementIndex`]; a query is routed by [`router`] to the
//! [`find`], [`guide`] or [`hide`] handler; every model call goes through
//! [`gateway::Gateway`], which can replay recorded transcripts so the whole
//! stack (and [`eval`]) runs deterministically offline.

pub mod dom;
pub mod eval;
pub mod find;
pub mod gateway;
pub mod guide;
pub mod hide;
pub mod index;
pub mod json_extract;
pub mod pipeline;
pub mod prompts;
pub mod router;
pub mod snapshot;

pub use dom::{Dom, NodePath};
pub use index::{build_index, ElementId, ElementIndex, IndexConfig, IndexedElement, SpanMatch};
pub use snapshot::{load_sequence, load_snapshot, save_snapshot, LayoutBox, Snapshot, SnapshotError, SnapshotRef};
