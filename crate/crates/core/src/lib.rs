//! Core of a small spatial data infrastructure: metadata records and their
//! validation, WMS capabilities parsing, the indexed catalog store and search.

pub mod capabilities;
pub mod catalog;
pub mod metadata;
pub mod search;
pub mod text;

#[cfg(feature = "test-support")]
pub mod testing;

pub use catalog::{Catalog, CatalogError, CatalogStore, SpatialRelation, StoreError, UpsertOutcome};
pub use metadata::{GeographicBoundingBox, MetadataProfile, MetadataRecord, ResourceType, Timestamp};
pub use search::{SearchQuery, Thesaurus};
