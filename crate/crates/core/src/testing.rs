//! Generators and fixtures shared by the test suites of this workspace.
//! Enabled with the `test-support` feature.

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::catalog::SpatialRelation;
use crate::metadata::{
    AccessEndpoint, GeographicBoundingBox, MetadataRecord, ResourceType, TemporalExtent, Timestamp,
};
use crate::search::{SearchMode, SearchQuery, Thesaurus};

/// The NOAA capabilities fragment, wrapped in a root element, with a synthesized layer title.
pub const FIGURE3_CAPABILITIES: &str = include_str!("../fixtures/figure3_capabilities.xml");
pub const FIGURE3_LAYER_TITLE: &str = "Weather Radar Mosaic";

/// Small closed vocabulary so that random records and queries overlap.
pub const VOCABULARY: &[&str] = &[
    "watershed", "boundary", "road", "street", "earthquake", "flood", "hydrology", "elevation",
    "landcover", "parcel", "transit", "wetland", "soil", "geology", "census", "coastline", "river",
    "lake", "forest", "wildfire", "hazard", "disaster", "natural", "imagery",
];

pub const PUBLISHERS: &[&str] = &["USGS", "NOAA", "Census Bureau", "State GIS Office"];
pub const TOPICS: &[&str] = &["inlandWaters", "transportation", "geoscientificInformation", "environment"];

/// Contiguous-US style query box.
pub fn conus() -> GeographicBoundingBox {
    GeographicBoundingBox::new(-125.0, -66.0, 24.0, 50.0).unwrap()
}

fn coord<R: Rng>(rng: &mut R, lim: f64) -> f64 {
    // a third of coordinates land on a 10-degree grid so boxes share edges
    if rng.gen_bool(1.0 / 3.0) {
        (rng.gen_range(-(lim as i32) / 10..=(lim as i32) / 10) * 10) as f64
    } else {
        rng.gen_range(-lim..=lim)
    }
}

/// A valid box: mostly small regional extents, with some points, lines and near-global boxes.
pub fn random_bbox<R: Rng>(rng: &mut R) -> GeographicBoundingBox {
    let (mut w, mut e) = (coord(rng, 180.0), coord(rng, 180.0));
    let (mut s, mut n) = (coord(rng, 90.0), coord(rng, 90.0));
    match rng.gen_range(0..10) {
        0 => {
            e = w;
            n = s;
        }
        1 => e = w,
        2 => return GeographicBoundingBox::WORLD,
        3..=6 => {
            e = (w + rng.gen_range(0.0..40.0)).min(180.0);
            n = (s + rng.gen_range(0.0..30.0)).min(90.0);
        }
        _ => {}
    }
    if w > e {
        std::mem::swap(&mut w, &mut e);
    }
    if s > n {
        std::mem::swap(&mut s, &mut n);
    }
    GeographicBoundingBox::new(w, e, s, n).unwrap()
}

fn words<R: Rng>(rng: &mut R, min: usize, max: usize) -> String {
    let n = rng.gen_range(min..=max);
    (0..n)
        .map(|_| *VOCABULARY.choose(rng).unwrap())
        .collect::<Vec<_>>()
        .join(" ")
}

fn random_instant<R: Rng>(rng: &mut R) -> Timestamp {
    Timestamp::from_unix(rng.gen_range(0..2_000_000_000)).unwrap()
}

/// A record satisfying every catalog invariant; optional fields populated at random.
pub fn random_record<R: Rng>(rng: &mut R, id: &str) -> MetadataRecord {
    let temporal_extent = rng.gen_bool(0.5).then(|| {
        let (a, b) = (random_instant(rng), random_instant(rng));
        TemporalExtent {
            start: a.min(b),
            end: a.max(b),
        }
    });
    MetadataRecord {
        id: id.to_string(),
        resource_type: rng.gen_bool(0.9).then(|| *ResourceType::ALL.choose(rng).unwrap()),
        title: words(rng, 1, 4),
        abstract_text: if rng.gen_bool(0.7) { words(rng, 0, 12) } else { String::new() },
        keywords: (0..rng.gen_range(0..4)).map(|_| words(rng, 1, 2)).collect(),
        topic_category: if rng.gen_bool(0.5) {
            TOPICS.choose(rng).unwrap().to_string()
        } else {
            String::new()
        },
        bbox: rng.gen_bool(0.85).then(|| random_bbox(rng)),
        temporal_extent,
        crs_list: if rng.gen_bool(0.5) { vec!["EPSG:4326".into()] } else { Vec::new() },
        lineage: if rng.gen_bool(0.3) { words(rng, 1, 6) } else { String::new() },
        publisher: if rng.gen_bool(0.85) {
            PUBLISHERS.choose(rng).unwrap().to_string()
        } else {
            String::new()
        },
        contact: String::new(),
        access_endpoints: if rng.gen_bool(0.5) {
            vec![AccessEndpoint {
                protocol: "WMS".into(),
                url: format!("https://maps.example.org/{id}/wms"),
            }]
        } else {
            Vec::new()
        },
        created: None,
        modified: None,
    }
}

/// A record with every profile field populated, valid under `sdi-basic`.
pub fn random_publishable_record<R: Rng>(rng: &mut R, id: &str) -> MetadataRecord {
    let mut r = random_record(rng, id);
    r.resource_type.get_or_insert(ResourceType::Dataset);
    if r.abstract_text.trim().is_empty() {
        r.abstract_text = words(rng, 3, 8);
    }
    if r.publisher.is_empty() {
        r.publisher = PUBLISHERS[0].to_string();
    }
    r.bbox.get_or_insert_with(|| random_bbox(rng));
    r
}

/// A thesaurus over [`VOCABULARY`] with random synonyms and an acyclic broader relation.
pub fn random_thesaurus<R: Rng>(rng: &mut R) -> Thesaurus {
    let mut b = Thesaurus::builder();
    let mut order: Vec<&str> = VOCABULARY.to_vec();
    order.shuffle(rng);
    for (i, word) in order.iter().enumerate() {
        let id = format!("c{i}");
        b = b.pref_label(&id, word).unwrap();
        if rng.gen_bool(0.3) {
            b = b.alt_label(&id, VOCABULARY.choose(rng).unwrap());
        }
        // broader edges only point at earlier concepts
        if i > 0 && rng.gen_bool(0.5) {
            let parent = rng.gen_range(0..i);
            b = b.broader(&id, &format!("c{parent}"));
        }
    }
    b.build().unwrap()
}

pub fn random_query<R: Rng>(rng: &mut R) -> SearchQuery {
    let mut q = SearchQuery::text(words(rng, 1, 3));
    if rng.gen_bool(0.3) {
        let rel = if rng.gen_bool(0.5) {
            SpatialRelation::Intersects
        } else {
            SpatialRelation::Within
        };
        q = q.with_spatial(random_bbox(rng), rel);
    }
    q.mode = SearchMode::Keyword;
    q.page_size = 100;
    q
}

fn arb_text() -> impl Strategy<Value = String> {
    prop_oneof![Just(String::new()), "[a-zA-Z0-9 ,.'\"\\\\/é漢-]{1,40}"]
}

prop_compose! {
    pub fn arb_bbox()(w in -180.0f64..=180.0, e in -180.0f64..=180.0, s in -90.0f64..=90.0, n in -90.0f64..=90.0)
        -> GeographicBoundingBox {
        GeographicBoundingBox { west: w.min(e), east: w.max(e), south: s.min(n), north: s.max(n) }
    }
}

fn arb_instant() -> impl Strategy<Value = Timestamp> {
    (0i64..4_000_000_000).prop_map(|s| Timestamp::from_unix(s).unwrap())
}

fn arb_resource_type() -> impl Strategy<Value = ResourceType> {
    prop::sample::select(ResourceType::ALL.to_vec())
}

prop_compose! {
    /// Any record satisfying the record invariants, including unusual text.
    pub fn arb_record()(
        id in "[a-z0-9][a-z0-9._-]{0,20}",
        resource_type in prop::option::of(arb_resource_type()),
        title in arb_text(),
        abstract_text in arb_text(),
        keywords in prop::collection::vec(arb_text(), 0..4),
        topic_category in arb_text(),
        bbox in prop::option::of(arb_bbox()),
        times in prop::option::of((arb_instant(), arb_instant())),
        crs_list in prop::collection::vec("(EPSG|CRS):[0-9]{2,6}", 0..4),
        lineage in arb_text(),
        publisher in arb_text(),
        contact in arb_text(),
        endpoints in prop::collection::vec(("[A-Z]{2,5}", "[a-z]{1,10}"), 0..3),
        created in prop::option::of(arb_instant()),
        modified in prop::option::of(arb_instant()),
    ) -> MetadataRecord {
        MetadataRecord {
            id,
            resource_type,
            title,
            abstract_text,
            keywords,
            topic_category,
            bbox,
            temporal_extent: times.map(|(a, b)| TemporalExtent { start: a.min(b), end: a.max(b) }),
            crs_list,
            lineage,
            publisher,
            contact,
            access_endpoints: endpoints
                .into_iter()
                .map(|(protocol, host)| AccessEndpoint { url: format!("https://{host}.example.org/svc"), protocol })
                .collect(),
            created,
            modified,
        }
    }
}
