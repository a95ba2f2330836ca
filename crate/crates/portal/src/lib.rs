//! The network side of the catalog: a capabilities harvester and the HTTP portal API.

pub mod api;
pub mod harvester;

use std::sync::{Arc, RwLock};

use sdi_core::CatalogStore;

/// The catalog shared by request handlers and harvest tasks. Writers hold the
/// lock only for the duration of a store call, never across an await.
pub type SharedStore = Arc<RwLock<CatalogStore>>;

pub fn shared(store: CatalogStore) -> SharedStore {
    Arc::new(RwLock::new(store))
}
