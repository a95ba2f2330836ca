use std::collections::BTreeSet;

use rstar::{RStarInsertionStrategy, RTree, RTreeObject, RTreeParams, AABB};
use serde::{Deserialize, Serialize};

use crate::metadata::GeographicBoundingBox;

/// Node fan-out of the box tree.
pub struct Fanout16;

impl RTreeParams for Fanout16 {
    const MIN_SIZE: usize = 6;
    const MAX_SIZE: usize = 16;
    const REINSERTION_COUNT: usize = 4;
    type DefaultInsertionStrategy = RStarInsertionStrategy;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpatialRelation {
    Intersects,
    Within,
}

impl SpatialRelation {
    pub fn as_str(&self) -> &'static str {
        match self {
            SpatialRelation::Intersects => "intersects",
            SpatialRelation::Within => "within",
        }
    }
}

impl std::fmt::Display for SpatialRelation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SpatialRelation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "intersects" => Ok(SpatialRelation::Intersects),
            "within" => Ok(SpatialRelation::Within),
            other => Err(format!("unknown spatial relation {other:?} (expected intersects or within)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct IndexedBox {
    id: String,
    envelope: AABB<[f64; 2]>,
}

impl RTreeObject for IndexedBox {
    type Envelope = AABB<[f64; 2]>;

    fn envelope(&self) -> Self::Envelope {
        self.envelope
    }
}

fn aabb(b: &GeographicBoundingBox) -> AABB<[f64; 2]> {
    AABB::from_corners([b.west, b.south], [b.east, b.north])
}

/// Bounding-box tree over record extents. Queries use closed-set semantics.
pub struct SpatialIndex {
    tree: RTree<IndexedBox, Fanout16>,
}

impl Default for SpatialIndex {
    fn default() -> Self {
        SpatialIndex {
            tree: RTree::new_with_params(),
        }
    }
}

impl SpatialIndex {
    pub fn bulk_load<'a>(entries: impl IntoIterator<Item = (&'a str, &'a GeographicBoundingBox)>) -> Self {
        let items = entries
            .into_iter()
            .map(|(id, b)| IndexedBox {
                id: id.to_string(),
                envelope: aabb(b),
            })
            .collect();
        SpatialIndex {
            tree: RTree::bulk_load_with_params(items),
        }
    }

    pub fn insert(&mut self, id: &str, bbox: &GeographicBoundingBox) {
        self.tree.insert(IndexedBox {
            id: id.to_string(),
            envelope: aabb(bbox),
        });
    }

    pub fn remove(&mut self, id: &str, bbox: &GeographicBoundingBox) -> bool {
        self.tree
            .remove(&IndexedBox {
                id: id.to_string(),
                envelope: aabb(bbox),
            })
            .is_some()
    }

    pub fn query(&self, bbox: &GeographicBoundingBox, relation: SpatialRelation) -> BTreeSet<String> {
        let env = aabb(bbox);
        match relation {
            SpatialRelation::Intersects => self
                .tree
                .locate_in_envelope_intersecting(&env)
                .map(|e| e.id.clone())
                .collect(),
            SpatialRelation::Within => self.tree.locate_in_envelope(&env).map(|e| e.id.clone()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.tree.size()
    }

    pub fn is_empty(&self) -> bool {
        self.tree.size() == 0
    }

    /// All `(id, box)` entries, in no particular order.
    pub fn entries(&self) -> impl Iterator<Item = (&str, GeographicBoundingBox)> {
        self.tree.iter().map(|e| {
            let [west, south] = e.envelope.lower();
            let [east, north] = e.envelope.upper();
            (
                e.id.as_str(),
                GeographicBoundingBox {
                    west,
                    east,
                    south,
                    north,
                },
            )
        })
    }
}
