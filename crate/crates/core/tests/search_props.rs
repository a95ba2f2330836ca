use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sdi_core::catalog::{Catalog, SpatialRelation};
use sdi_core::metadata::{MetadataRecord, ResourceType};
use sdi_core::search::{
    facet_counts, ranked, search, search_envelope, FacetCount, FacetField, SearchConfig, SearchMode, SearchQuery,
    Thesaurus,
};
use sdi_core::testing::{conus, random_query, random_record, random_thesaurus, PUBLISHERS};

fn corpus(seed: u64, n: usize) -> Catalog {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c = Catalog::new();
    for i in 0..n {
        c.upsert(random_record(&mut rng, &format!("d{i:03}"))).unwrap();
    }
    c
}

fn ids(c: &Catalog, q: &SearchQuery, t: &Thesaurus) -> BTreeSet<String> {
    ranked(c, q, t, &SearchConfig::default())
        .unwrap()
        .into_iter()
        .map(|r| r.id)
        .collect()
}

fn hazards() -> Thesaurus {
    Thesaurus::parse(
        "nd\tprefLabel\tnatural disaster\n\
         nd\taltLabel\tdisaster\n\
         eq\tprefLabel\tearthquake\n\
         eq\tbroader\tnd\n\
         fl\tprefLabel\tflood\n\
         fl\tbroader\tnd\n\
         road\tprefLabel\troad\n\
         road\taltLabel\tstreet\n",
    )
    .unwrap()
}

#[test]
fn watershed_hits_are_exactly_the_records_with_the_token() {
    let c = corpus(1, 200);
    let k = c
        .records()
        .filter(|r| {
            [&r.title, &r.abstract_text, &r.topic_category, &r.lineage, &r.publisher, &r.contact]
                .iter()
                .any(|s| sdi_core::text::tokenize(s).iter().any(|t| t == "watershed"))
                || r.keywords.iter().any(|k| sdi_core::text::tokenize(k).iter().any(|t| t == "watershed"))
        })
        .count();
    let q = SearchQuery::text("watershed").with_page(0, 100);
    let out = search(&c, &q, &Thesaurus::default()).unwrap();
    assert!(k > 0);
    assert_eq!(out.total, k);
    let all = ranked(&c, &q, &Thesaurus::default(), &SearchConfig::default()).unwrap();
    assert!(all.iter().all(|r| r.matched_terms.contains("watershed")));
}

#[test]
fn road_street_repair() {
    let mut c = Catalog::new();
    c.upsert(MetadataRecord {
        id: "streets".into(),
        title: "City street centerlines".into(),
        resource_type: Some(ResourceType::Dataset),
        ..Default::default()
    })
    .unwrap();
    let t = hazards();
    let kw = search(&c, &SearchQuery::text("road"), &t).unwrap();
    let sem = search(&c, &SearchQuery::text("road").with_mode(SearchMode::Semantic), &t).unwrap();
    assert_eq!(kw.total, 0);
    assert_eq!(sem.total, 1);
    assert_eq!(sem.page[0].id, "streets");
    assert!(sem.page[0].matched_terms.contains("street"));
}

#[test]
fn natural_disasters_covers_earthquake_on_random_corpora() {
    let t = hazards();
    for seed in 0..30 {
        let c = corpus(seed, 80);
        let quake = ids(&c, &SearchQuery::text("earthquake").with_page(0, 100), &t);
        let broad = ids(
            &c,
            &SearchQuery::text("natural disasters").with_mode(SearchMode::Semantic).with_page(0, 100),
            &t,
        );
        assert!(quake.is_subset(&broad), "seed {seed}");
    }
}

#[test]
fn spatial_filter_is_set_intersection() {
    let c = corpus(4, 300);
    let t = Thesaurus::default();
    for text in ["watershed", "road flood", "river lake forest"] {
        let plain = ids(&c, &SearchQuery::text(text), &t);
        let filtered = ids(&c, &SearchQuery::text(text).with_spatial(conus(), SpatialRelation::Intersects), &t);
        let region = c.spatial_query(&conus(), SpatialRelation::Intersects).unwrap();
        assert_eq!(filtered, plain.intersection(&region).cloned().collect());
    }
}

#[test]
fn three_document_idf_ordering() {
    let mut c = Catalog::new();
    for (id, title) in [("x", "rare common"), ("y", "common"), ("z", "common")] {
        c.upsert(MetadataRecord {
            id: id.into(),
            title: title.into(),
            ..Default::default()
        })
        .unwrap();
    }
    let t = Thesaurus::default();
    let rare = search(&c, &SearchQuery::text("rare"), &t).unwrap().page[0].score;
    let common = search(&c, &SearchQuery::text("common"), &t).unwrap();
    let common_x = common.page.iter().find(|r| r.id == "x").unwrap().score;
    assert!((rare - 3.0 * (1.0f64 + 3.0 / 2.0).ln()).abs() < 1e-12);
    assert!((common_x - 3.0 * (1.0f64 + 3.0 / 4.0).ln()).abs() < 1e-12);
    assert!(rare > common_x);
}

#[test]
fn facet_example_and_recount() {
    let mut c = Catalog::new();
    for (id, rt) in [("1", ResourceType::Dataset), ("2", ResourceType::Dataset), ("3", ResourceType::Service)] {
        c.upsert(MetadataRecord {
            id: id.into(),
            resource_type: Some(rt),
            ..Default::default()
        })
        .unwrap();
    }
    let t = Thesaurus::default();
    // an empty text query with a facet filter browses; one run per value covers every record
    let mut total = BTreeMap::new();
    for rt in ["dataset", "service"] {
        let q = SearchQuery::default().with_facet(FacetField::ResourceType, rt);
        for fc in facet_counts(&c, &q, "resource_type", &t).unwrap() {
            total.insert(fc.value, fc.count);
        }
    }
    assert_eq!(total, BTreeMap::from([("dataset".into(), 2), ("service".into(), 1)]));

    let c = corpus(9, 250);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..40 {
        let q = random_query(&mut rng);
        let hits = ranked(&c, &q, &t, &SearchConfig::default()).unwrap();
        for field in FacetField::ALL {
            let mut recount: BTreeMap<String, usize> = BTreeMap::new();
            for h in &hits {
                let r = c.get(&h.id).unwrap();
                let v = match field {
                    FacetField::ResourceType => r.resource_type.map(|t| t.to_string()),
                    FacetField::Publisher => Some(r.publisher.clone()).filter(|p| !p.is_empty()),
                    FacetField::TopicCategory => Some(r.topic_category.clone()).filter(|p| !p.is_empty()),
                };
                if let Some(v) = v {
                    *recount.entry(v).or_default() += 1;
                }
            }
            let mut expected: Vec<FacetCount> =
                recount.into_iter().map(|(value, count)| FacetCount { value, count }).collect();
            expected.sort_by(|a, b| b.count.cmp(&a.count).then(a.value.cmp(&b.value)));
            assert_eq!(facet_counts(&c, &q, field.name(), &t).unwrap(), expected);
        }
    }
}

#[test]
fn facet_over_unpopulated_field_is_empty() {
    let mut c = Catalog::new();
    c.upsert(MetadataRecord {
        id: "a".into(),
        title: "lake".into(),
        ..Default::default()
    })
    .unwrap();
    let q = SearchQuery::text("lake");
    assert!(facet_counts(&c, &q, "topic_category", &Thesaurus::default()).unwrap().is_empty());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn semantic_is_superset_of_keyword(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = corpus(rng.gen(), 60);
        let t = random_thesaurus(&mut rng);
        let q = random_query(&mut rng);
        let kw = ids(&c, &q, &t);
        let sem = ids(&c, &q.clone().with_mode(SearchMode::Semantic), &t);
        prop_assert!(kw.is_subset(&sem));
    }

    #[test]
    fn spatial_and_facet_filters_commute(seed in any::<u64>(), pubi in 0usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = corpus(rng.gen(), 80);
        let t = Thesaurus::default();
        let q = random_query(&mut rng);
        let region = c.spatial_query(&conus(), SpatialRelation::Intersects).unwrap();
        let facet_only = ids(&c, &q.clone().with_facet(FacetField::Publisher, PUBLISHERS[pubi]), &t);
        let spatial_only = ids(&c, &q.clone().with_spatial(conus(), SpatialRelation::Intersects), &t);
        let both = ids(
            &c,
            &q.clone().with_spatial(conus(), SpatialRelation::Intersects).with_facet(FacetField::Publisher, PUBLISHERS[pubi]),
            &t,
        );
        let spatial_then_facet: BTreeSet<String> = spatial_only
            .iter()
            .filter(|id| c.get(id).unwrap().publisher == PUBLISHERS[pubi])
            .cloned()
            .collect();
        let facet_then_spatial: BTreeSet<String> = facet_only.intersection(&region).cloned().collect();
        if q.spatial.is_none() {
            prop_assert_eq!(&spatial_then_facet, &facet_then_spatial);
            prop_assert_eq!(&both, &facet_then_spatial);
        }
    }

    #[test]
    fn results_are_deterministic_and_sound(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = corpus(rng.gen(), 80);
        let t = random_thesaurus(&mut rng);
        let mut q = random_query(&mut rng);
        if rng.gen_bool(0.5) {
            q.mode = SearchMode::Semantic;
        }
        let cfg = SearchConfig::default();
        let a = search_envelope(&c, &q, &t, &cfg).unwrap().to_json();
        let b = search_envelope(&c, &q, &t, &cfg).unwrap().to_json();
        prop_assert_eq!(a, b);
        let hits = ranked(&c, &q, &t, &cfg).unwrap();
        for w in hits.windows(2) {
            prop_assert!(w[0].score > w[1].score || (w[0].score == w[1].score && w[0].id < w[1].id));
        }
        for h in &hits {
            prop_assert!(!h.matched_terms.is_empty());
            prop_assert!(h.score > 0.0);
            prop_assert!(h.snippet.chars().count() <= 200);
        }
    }

    #[test]
    fn pages_concatenate_to_full_list(seed in any::<u64>(), page_size in 1usize..=15) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = corpus(rng.gen(), 80);
        let t = Thesaurus::default();
        let q = random_query(&mut rng);
        let full = ranked(&c, &q, &t, &SearchConfig::default()).unwrap();
        let mut joined = Vec::new();
        let mut page = 0;
        loop {
            let out = search(&c, &q.clone().with_page(page, page_size), &t).unwrap();
            prop_assert_eq!(out.total, full.len());
            if out.page.is_empty() {
                break;
            }
            joined.extend(out.page);
            page += 1;
        }
        prop_assert_eq!(joined, full);
    }
}
