//! The metadata catalog: records keyed by id, a bounding-box tree over their
//! extents and an inverted index over their text fields.

mod persist;
mod spatial;
mod text_index;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use persist::{CatalogStore, Manifest, StoreError, FORMAT_VERSION};
pub use spatial::{SpatialIndex, SpatialRelation};
pub use text_index::{term_counts, Posting, TextField, TextIndex};

use crate::metadata::{BoxError, GeographicBoundingBox, MetadataRecord, Timestamp, Violation};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CatalogError {
    #[error("record rejected: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidRecord(Vec<Violation>),
    #[error("invalid query box: {0}")]
    InvalidBox(#[from] BoxError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpsertOutcome {
    Added,
    Updated,
}

#[derive(Default)]
pub struct Catalog {
    records: BTreeMap<String, MetadataRecord>,
    spatial: SpatialIndex,
    text: TextIndex,
    version: u64,
}

impl Catalog {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn from_parts(records: BTreeMap<String, MetadataRecord>, version: u64) -> Self {
        let mut c = Catalog {
            records,
            spatial: SpatialIndex::default(),
            text: TextIndex::default(),
            version,
        };
        c.reindex();
        c
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&MetadataRecord> {
        self.records.get(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.records.contains_key(id)
    }

    /// Records in id order.
    pub fn records(&self) -> impl Iterator<Item = &MetadataRecord> {
        self.records.values()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.records.keys().map(String::as_str)
    }

    /// Checks `record` and stamps its timestamps as they will be stored.
    pub fn prepare(&self, mut record: MetadataRecord, now: Timestamp) -> Result<MetadataRecord, CatalogError> {
        record.check_invariants().map_err(CatalogError::InvalidRecord)?;
        if record.created.is_none() {
            record.created = Some(
                self.records
                    .get(&record.id)
                    .and_then(|old| old.created)
                    .unwrap_or(now),
            );
        }
        record.modified = Some(now);
        Ok(record)
    }

    /// Inserts an already prepared record, replacing any record with the same id.
    pub(crate) fn apply(&mut self, record: MetadataRecord) -> UpsertOutcome {
        let outcome = match self.records.remove(&record.id) {
            Some(old) => {
                self.unindex(&old);
                UpsertOutcome::Updated
            }
            None => UpsertOutcome::Added,
        };
        if let Some(b) = &record.bbox {
            self.spatial.insert(&record.id, b);
        }
        self.text.insert(&record);
        self.records.insert(record.id.clone(), record);
        self.version += 1;
        outcome
    }

    pub fn upsert(&mut self, record: MetadataRecord) -> Result<UpsertOutcome, CatalogError> {
        let prepared = self.prepare(record, Timestamp::now())?;
        Ok(self.apply(prepared))
    }

    pub fn delete(&mut self, id: &str) -> bool {
        match self.records.remove(id) {
            Some(old) => {
                self.unindex(&old);
                self.version += 1;
                true
            }
            None => false,
        }
    }

    fn unindex(&mut self, record: &MetadataRecord) {
        if let Some(b) = &record.bbox {
            self.spatial.remove(&record.id, b);
        }
        self.text.remove(&record.id);
    }

    /// Rebuilds both indexes from the record map. The tree is bulk loaded.
    pub fn reindex(&mut self) {
        let spatial = SpatialIndex::bulk_load(
            self.records
                .values()
                .filter_map(|r| r.bbox.as_ref().map(|b| (r.id.as_str(), b))),
        );
        let mut text = TextIndex::default();
        for r in self.records.values() {
            text.insert(r);
        }
        self.spatial = spatial;
        self.text = text;
    }

    pub fn spatial_query(
        &self,
        bbox: &GeographicBoundingBox,
        relation: SpatialRelation,
    ) -> Result<BTreeSet<String>, CatalogError> {
        bbox.check()?;
        Ok(self.spatial.query(bbox, relation))
    }

    pub fn text_postings(&self, term: &str) -> Vec<Posting> {
        self.text.postings(term)
    }

    pub fn text_index(&self) -> &TextIndex {
        &self.text
    }

    /// Walks both indexes against the record map and reports every inconsistency.
    pub fn audit(&self) -> Result<(), Vec<String>> {
        let mut problems = Vec::new();

        let mut seen_spatial = BTreeSet::new();
        for (id, b) in self.spatial.entries() {
            match self.records.get(id) {
                None => problems.push(format!("spatial index holds unknown id {id}")),
                Some(r) if r.bbox != Some(b) => {
                    problems.push(format!("spatial entry for {id} does not match its record bbox"))
                }
                Some(_) => {}
            }
            if !seen_spatial.insert(id.to_string()) {
                problems.push(format!("spatial index holds {id} twice"));
            }
        }
        for r in self.records.values().filter(|r| r.bbox.is_some()) {
            if !seen_spatial.contains(&r.id) {
                problems.push(format!("record {} missing from spatial index", r.id));
            }
        }

        for id in self.text.indexed_ids() {
            if !self.records.contains_key(id) {
                problems.push(format!("text index holds unknown id {id}"));
            }
        }
        let mut expected: BTreeMap<(String, String, TextField), u32> = BTreeMap::new();
        for r in self.records.values() {
            if self.text.terms_of(&r.id).is_none() {
                problems.push(format!("record {} missing from text index", r.id));
            }
            for (term, fields) in term_counts(r) {
                for (field, tf) in fields {
                    expected.insert((term.clone(), r.id.clone(), field), tf);
                }
            }
        }
        let mut actual = BTreeMap::new();
        for (term, (id, field), tf) in self.text.all_postings() {
            actual.insert((term.to_string(), id.clone(), *field), *tf);
        }
        if actual != expected {
            let extra = actual.keys().filter(|k| !expected.contains_key(*k)).count();
            let missing = expected.keys().filter(|k| !actual.contains_key(*k)).count();
            problems.push(format!(
                "text postings disagree with records ({extra} extra, {missing} missing, or differing counts)"
            ));
        }

        if problems.is_empty() {
            Ok(())
        } else {
            Err(problems)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metadata::ResourceType;

    fn rec(id: &str, title: &str, bbox: Option<(f64, f64, f64, f64)>) -> MetadataRecord {
        MetadataRecord {
            id: id.into(),
            resource_type: Some(ResourceType::Dataset),
            title: title.into(),
            bbox: bbox.map(|(w, e, s, n)| GeographicBoundingBox::new(w, e, s, n).unwrap()),
            ..Default::default()
        }
    }

    #[test]
    fn read_your_write_refreshes_modified() {
        let mut c = Catalog::new();
        let r = rec("a", "Watershed Boundaries", Some((-10.0, 10.0, -5.0, 5.0)));
        assert_eq!(c.upsert(r.clone()).unwrap(), UpsertOutcome::Added);
        let got = c.get("a").unwrap();
        assert!(got.modified.is_some());
        assert!(got.created.is_some());
        let mut stripped = got.clone();
        stripped.modified = None;
        stripped.created = None;
        assert_eq!(stripped, r);
        assert_eq!(c.version(), 1);
    }

    #[test]
    fn replacement_purges_old_terms() {
        let mut c = Catalog::new();
        c.upsert(rec("a", "Watershed Boundaries", None)).unwrap();
        let created = c.get("a").unwrap().created;
        assert_eq!(c.upsert(rec("a", "Road network", None)).unwrap(), UpsertOutcome::Updated);
        assert_eq!(c.get("a").unwrap().title, "Road network");
        assert_eq!(c.get("a").unwrap().created, created);
        assert!(c.text_postings("watershed").is_empty());
        assert!(c.text_postings("boundarie").is_empty());
        assert_eq!(c.text_postings("road").len(), 1);
        c.audit().unwrap();
    }

    #[test]
    fn invalid_records_leave_store_unchanged() {
        let mut c = Catalog::new();
        c.upsert(rec("a", "x", None)).unwrap();
        let mut bad = rec("b", "y", None);
        bad.bbox = Some(GeographicBoundingBox {
            west: 10.0,
            east: -10.0,
            south: 0.0,
            north: 0.0,
        });
        assert!(matches!(c.upsert(bad), Err(CatalogError::InvalidRecord(_))));
        assert!(c.upsert(rec("", "z", None)).is_err());
        assert_eq!(c.len(), 1);
        assert_eq!(c.version(), 1);
    }

    #[test]
    fn delete_semantics() {
        let mut c = Catalog::new();
        assert!(!c.delete("absent"));
        let b = (0.0, 1.0, 0.0, 1.0);
        c.upsert(rec("a", "x", Some(b))).unwrap();
        assert!(c.delete("a"));
        assert!(c.get("a").is_none());
        let q = GeographicBoundingBox::new(0.0, 1.0, 0.0, 1.0).unwrap();
        assert!(!c.spatial_query(&q, SpatialRelation::Intersects).unwrap().contains("a"));
        assert_eq!(c.version(), 2);
        c.audit().unwrap();
    }

    #[test]
    fn postings_for_title() {
        let mut c = Catalog::new();
        c.upsert(rec("a", "Watershed Boundaries", None)).unwrap();
        assert!(c.text_postings("nothing").is_empty());
        assert_eq!(
            c.text_postings("watershed"),
            vec![Posting {
                id: "a".into(),
                field: TextField::Title,
                tf: 1
            }]
        );
    }

    #[test]
    fn universal_box_returns_every_located_record() {
        let mut c = Catalog::new();
        c.upsert(rec("a", "x", Some((-180.0, 180.0, -90.0, 90.0)))).unwrap();
        c.upsert(rec("b", "x", Some((5.0, 5.0, 5.0, 5.0)))).unwrap();
        c.upsert(rec("c", "x", None)).unwrap();
        let all = c
            .spatial_query(&GeographicBoundingBox::WORLD, SpatialRelation::Intersects)
            .unwrap();
        assert_eq!(all, BTreeSet::from(["a".to_string(), "b".to_string()]));
        let within = c
            .spatial_query(&GeographicBoundingBox::WORLD, SpatialRelation::Within)
            .unwrap();
        assert_eq!(within, all);
        let bad = GeographicBoundingBox {
            west: 1.0,
            east: 0.0,
            south: 0.0,
            north: 0.0,
        };
        assert!(c.spatial_query(&bad, SpatialRelation::Intersects).is_err());
    }
}
