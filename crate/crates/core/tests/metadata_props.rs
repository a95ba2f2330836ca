use proptest::prelude::*;
use sdi_core::metadata::{
    completeness_score, from_canonical, to_canonical, to_canonical_pretty, validate_record, MetadataProfile,
    MetadataRecord, RecordField,
};
use sdi_core::testing::arb_record;

fn clear(record: &mut MetadataRecord, field: RecordField) {
    match field {
        RecordField::Id => record.id.clear(),
        RecordField::ResourceType => record.resource_type = None,
        RecordField::Title => record.title.clear(),
        RecordField::Abstract => record.abstract_text.clear(),
        RecordField::Keywords => record.keywords.clear(),
        RecordField::TopicCategory => record.topic_category.clear(),
        RecordField::Bbox => record.bbox = None,
        RecordField::TemporalExtent => record.temporal_extent = None,
        RecordField::CrsList => record.crs_list.clear(),
        RecordField::Lineage => record.lineage.clear(),
        RecordField::Publisher => record.publisher.clear(),
        RecordField::Contact => record.contact.clear(),
        RecordField::AccessEndpoints => record.access_endpoints.clear(),
        RecordField::Created => record.created = None,
        RecordField::Modified => record.modified = None,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn canonical_round_trip(r in arb_record()) {
        let back = from_canonical(&to_canonical(&r)).unwrap();
        prop_assert_eq!(&back.record, &r);
        prop_assert!(back.warnings.is_empty());
        prop_assert_eq!(from_canonical(&to_canonical_pretty(&r)).unwrap().record, r);
    }

    #[test]
    fn validation_is_pure(r in arb_record()) {
        let p = MetadataProfile::sdi_basic();
        let a = serde_json::to_vec(&validate_record(&r, &p)).unwrap();
        let b = serde_json::to_vec(&validate_record(&r.clone(), &p)).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn validity_matches_report(r in arb_record()) {
        let rep = validate_record(&r, &MetadataProfile::sdi_basic());
        prop_assert_eq!(rep.valid, rep.missing_mandatory.is_empty() && rep.violations.is_empty());
        prop_assert!((0.0..=1.0).contains(&rep.completeness));
    }

    #[test]
    fn completeness_is_monotone(r in arb_record(), drop in prop::sample::subsequence(RecordField::ALL.to_vec(), 0..=15)) {
        let p = MetadataProfile::sdi_basic();
        let mut sparse = r.clone();
        for f in &drop {
            clear(&mut sparse, *f);
        }
        // repopulate dropped fields one at a time; the score never falls
        let mut current = sparse.clone();
        let mut last = completeness_score(&current, &p);
        for f in &drop {
            let mut next = current.clone();
            match f {
                RecordField::Id => next.id = r.id.clone(),
                RecordField::ResourceType => next.resource_type = r.resource_type,
                RecordField::Title => next.title = r.title.clone(),
                RecordField::Abstract => next.abstract_text = r.abstract_text.clone(),
                RecordField::Keywords => next.keywords = r.keywords.clone(),
                RecordField::TopicCategory => next.topic_category = r.topic_category.clone(),
                RecordField::Bbox => next.bbox = r.bbox,
                RecordField::TemporalExtent => next.temporal_extent = r.temporal_extent,
                RecordField::CrsList => next.crs_list = r.crs_list.clone(),
                RecordField::Lineage => next.lineage = r.lineage.clone(),
                RecordField::Publisher => next.publisher = r.publisher.clone(),
                RecordField::Contact => next.contact = r.contact.clone(),
                RecordField::AccessEndpoints => next.access_endpoints = r.access_endpoints.clone(),
                RecordField::Created => next.created = r.created,
                RecordField::Modified => next.modified = r.modified,
            }
            let s = completeness_score(&next, &p);
            prop_assert!(s >= last, "{s} < {last} after populating {f}");
            last = s;
            current = next;
        }
        prop_assert_eq!(last, completeness_score(&r, &p));
    }
}
