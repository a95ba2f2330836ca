use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::thesaurus::{expand_query, Thesaurus};
use crate::catalog::{Catalog, SpatialRelation, TextField};
use crate::metadata::{GeographicBoundingBox, MetadataRecord, Timestamp};
use crate::text::tokenize;

pub const MAX_PAGE_SIZE: usize = 100;
pub const DEFAULT_PAGE_SIZE: usize = 10;
pub const SNIPPET_CHARS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchMode {
    #[default]
    Keyword,
    Semantic,
}

impl FromStr for SearchMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "keyword" => Ok(SearchMode::Keyword),
            "semantic" => Ok(SearchMode::Semantic),
            other => Err(format!("unknown mode {other:?} (expected keyword or semantic)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FacetField {
    ResourceType,
    Publisher,
    TopicCategory,
}

impl FacetField {
    pub const ALL: [FacetField; 3] = [FacetField::ResourceType, FacetField::Publisher, FacetField::TopicCategory];

    pub fn name(&self) -> &'static str {
        match self {
            FacetField::ResourceType => "resource_type",
            FacetField::Publisher => "publisher",
            FacetField::TopicCategory => "topic_category",
        }
    }

    /// The record's value for this facet, `None` when unpopulated.
    pub fn value<'a>(&self, record: &'a MetadataRecord) -> Option<&'a str> {
        let v = match self {
            FacetField::ResourceType => return record.resource_type.as_ref().map(|t| t.as_str()),
            FacetField::Publisher => record.publisher.as_str(),
            FacetField::TopicCategory => record.topic_category.as_str(),
        };
        (!v.trim().is_empty()).then_some(v)
    }
}

impl FromStr for FacetField {
    type Err = QueryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| QueryError::UnknownFacetField(s.to_string()))
    }
}

impl fmt::Display for FacetField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Closed time interval; an absent bound is unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TemporalFilter {
    pub start: Option<Timestamp>,
    pub end: Option<Timestamp>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchQuery {
    pub text: String,
    pub mode: SearchMode,
    pub spatial: Option<(GeographicBoundingBox, SpatialRelation)>,
    pub temporal: Option<TemporalFilter>,
    pub facet_filters: Vec<(FacetField, String)>,
    pub page: usize,
    pub page_size: usize,
}

impl Default for SearchQuery {
    fn default() -> Self {
        SearchQuery {
            text: String::new(),
            mode: SearchMode::Keyword,
            spatial: None,
            temporal: None,
            facet_filters: Vec::new(),
            page: 0,
            page_size: DEFAULT_PAGE_SIZE,
        }
    }
}

impl SearchQuery {
    pub fn text(text: impl Into<String>) -> Self {
        SearchQuery {
            text: text.into(),
            ..Default::default()
        }
    }

    pub fn with_mode(mut self, mode: SearchMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_spatial(mut self, bbox: GeographicBoundingBox, relation: SpatialRelation) -> Self {
        self.spatial = Some((bbox, relation));
        self
    }

    pub fn with_facet(mut self, field: FacetField, value: impl Into<String>) -> Self {
        self.facet_filters.push((field, value.into()));
        self
    }

    pub fn with_page(mut self, page: usize, page_size: usize) -> Self {
        self.page = page;
        self.page_size = page_size;
        self
    }

    pub fn has_text(&self) -> bool {
        !self.text.trim().is_empty()
    }

    pub fn validate(&self) -> Result<(), QueryError> {
        if !self.has_text() && self.spatial.is_none() && self.temporal.is_none() && self.facet_filters.is_empty() {
            return Err(QueryError::Empty);
        }
        if self.page_size == 0 || self.page_size > MAX_PAGE_SIZE {
            return Err(QueryError::PageSize(self.page_size));
        }
        if let Some((b, _)) = &self.spatial {
            b.check().map_err(|e| QueryError::Malformed {
                parameter: "bbox".into(),
                message: e.to_string(),
            })?;
        }
        if let Some(TemporalFilter {
            start: Some(s),
            end: Some(e),
        }) = &self.temporal
        {
            if s > e {
                return Err(QueryError::Malformed {
                    parameter: "time_start".into(),
                    message: format!("{s} is after time_end {e}"),
                });
            }
        }
        Ok(())
    }

    /// Builds a query from `/search` URL parameters.
    ///
    /// `bbox` is `west,south,east,north` in decimal degrees; `relation` defaults
    /// to `intersects`; `facet.<field>=<value>` adds a facet filter.
    pub fn from_params<'a>(params: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self, QueryError> {
        let malformed = |parameter: &str, message: String| QueryError::Malformed {
            parameter: parameter.to_string(),
            message,
        };
        let mut q = SearchQuery::default();
        let mut bbox = None;
        let mut relation = SpatialRelation::Intersects;
        let mut temporal = TemporalFilter::default();
        let mut has_time = false;
        for (key, value) in params {
            match key {
                "q" => q.text = value.to_string(),
                "mode" => q.mode = value.parse().map_err(|m| malformed("mode", m))?,
                "bbox" if value.trim().is_empty() => {}
                "bbox" => {
                    bbox = Some(GeographicBoundingBox::from_wsen(value).map_err(|e| malformed("bbox", e.to_string()))?)
                }
                "relation" => relation = value.parse().map_err(|m| malformed("relation", m))?,
                "time_start" | "time_end" if value.trim().is_empty() => {}
                "time_start" | "time_end" => {
                    let t: Timestamp = value
                        .parse()
                        .map_err(|e| malformed(key, format!("invalid ISO-8601 instant: {e}")))?;
                    if key == "time_start" {
                        temporal.start = Some(t);
                    } else {
                        temporal.end = Some(t);
                    }
                    has_time = true;
                }
                "page" => q.page = value.parse().map_err(|_| malformed("page", format!("{value:?} is not a non-negative integer")))?,
                "page_size" => {
                    q.page_size = value
                        .parse()
                        .map_err(|_| malformed("page_size", format!("{value:?} is not a positive integer")))?
                }
                k if k.starts_with("facet.") => {
                    let field: FacetField = k["facet.".len()..].parse()?;
                    q.facet_filters.push((field, value.to_string()));
                }
                _ => {}
            }
        }
        q.spatial = bbox.map(|b| (b, relation));
        if has_time {
            q.temporal = Some(temporal);
        }
        q.validate()?;
        Ok(q)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QueryError {
    #[error("query needs at least one of text, spatial, temporal or facet criteria")]
    Empty,
    #[error("page_size must be between 1 and {MAX_PAGE_SIZE}, got {0}")]
    PageSize(usize),
    #[error("invalid {parameter}: {message}")]
    Malformed { parameter: String, message: String },
    #[error("unknown facet field {0:?} (expected resource_type, publisher or topic_category)")]
    UnknownFacetField(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub id: String,
    pub score: f64,
    pub matched_terms: BTreeSet<String>,
    pub snippet: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub total: usize,
    pub page: Vec<SearchResult>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FacetCount {
    pub value: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchConfig {
    pub title_boost: f64,
    pub keywords_boost: f64,
    pub abstract_boost: f64,
    pub other_boost: f64,
    pub expansion_depth: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            title_boost: 3.0,
            keywords_boost: 2.0,
            abstract_boost: 1.0,
            other_boost: 0.5,
            expansion_depth: 2,
        }
    }
}

impl SearchConfig {
    pub fn boost(&self, field: TextField) -> f64 {
        match field {
            TextField::Title => self.title_boost,
            TextField::Keywords => self.keywords_boost,
            TextField::Abstract => self.abstract_boost,
            _ => self.other_boost,
        }
    }
}

/// `ln(1 + N / (1 + df))`.
pub fn idf(total_docs: usize, doc_freq: usize) -> f64 {
    (1.0 + total_docs as f64 / (1.0 + doc_freq as f64)).ln()
}

/// Weighted terms a query searches for.
pub fn query_terms(
    query: &SearchQuery,
    thesaurus: &Thesaurus,
    config: &SearchConfig,
) -> BTreeMap<String, f64> {
    let tokens = tokenize(&query.text);
    match query.mode {
        SearchMode::Keyword => tokens.into_iter().map(|t| (t, 1.0)).collect(),
        SearchMode::Semantic => expand_query(&tokens, thesaurus, config.expansion_depth),
    }
}

fn snippet(record: &MetadataRecord) -> String {
    let source = if record.abstract_text.trim().is_empty() {
        &record.title
    } else {
        &record.abstract_text
    };
    source.trim().chars().take(SNIPPET_CHARS).collect()
}

/// Every hit of `query`, filtered and sorted by (score desc, id asc), before paging.
pub fn ranked(
    catalog: &Catalog,
    query: &SearchQuery,
    thesaurus: &Thesaurus,
    config: &SearchConfig,
) -> Result<Vec<SearchResult>, QueryError> {
    query.validate()?;

    let mut hits: BTreeMap<&str, (f64, BTreeSet<String>)> = BTreeMap::new();
    if query.has_text() {
        let n = catalog.len();
        let index = catalog.text_index();
        for (term, weight) in query_terms(query, thesaurus, config) {
            let Some(postings) = index.raw_postings(&term) else {
                continue;
            };
            let term_idf = idf(n, index.document_frequency(&term));
            for ((id, field), tf) in postings {
                let entry = hits.entry(id.as_str()).or_default();
                entry.0 += weight * *tf as f64 * term_idf * config.boost(*field);
                entry.1.insert(term.clone());
            }
        }
    } else {
        for id in catalog.ids() {
            hits.insert(id, (0.0, BTreeSet::new()));
        }
    }

    if let Some((bbox, relation)) = &query.spatial {
        let inside = catalog
            .spatial_query(bbox, *relation)
            .map_err(|e| QueryError::Malformed {
                parameter: "bbox".into(),
                message: e.to_string(),
            })?;
        hits.retain(|id, _| inside.contains(*id));
    }

    let mut results: Vec<SearchResult> = hits
        .into_iter()
        .filter_map(|(id, (score, matched_terms))| {
            let record = catalog.get(id)?;
            if let Some(t) = &query.temporal {
                match &record.temporal_extent {
                    Some(ext) if ext.overlaps(t.start, t.end) => {}
                    _ => return None,
                }
            }
            let facets_ok = query
                .facet_filters
                .iter()
                .all(|(field, value)| field.value(record) == Some(value.as_str()));
            facets_ok.then(|| SearchResult {
                id: id.to_string(),
                score,
                matched_terms,
                snippet: snippet(record),
            })
        })
        .collect();
    results.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.id.cmp(&b.id)));
    Ok(results)
}

fn page_of(results: &[SearchResult], page: usize, page_size: usize) -> Vec<SearchResult> {
    results
        .iter()
        .skip(page.saturating_mul(page_size))
        .take(page_size)
        .cloned()
        .collect()
}

pub fn search(catalog: &Catalog, query: &SearchQuery, thesaurus: &Thesaurus) -> Result<SearchOutcome, QueryError> {
    search_with(catalog, query, thesaurus, &SearchConfig::default())
}

pub fn search_with(
    catalog: &Catalog,
    query: &SearchQuery,
    thesaurus: &Thesaurus,
    config: &SearchConfig,
) -> Result<SearchOutcome, QueryError> {
    let all = ranked(catalog, query, thesaurus, config)?;
    Ok(SearchOutcome {
        total: all.len(),
        page: page_of(&all, query.page, query.page_size),
    })
}

/// Counts of each value of `field` over the full filtered result set, sorted by
/// (count desc, value asc). Records without a value for the field are not counted.
pub fn count_facet(catalog: &Catalog, results: &[SearchResult], field: FacetField) -> Vec<FacetCount> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for r in results {
        if let Some(v) = catalog.get(&r.id).and_then(|rec| field.value(rec)) {
            *counts.entry(v).or_default() += 1;
        }
    }
    let mut out: Vec<FacetCount> = counts
        .into_iter()
        .map(|(value, count)| FacetCount {
            value: value.to_string(),
            count,
        })
        .collect();
    out.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.value.cmp(&b.value)));
    out
}

pub fn facet_counts(
    catalog: &Catalog,
    query: &SearchQuery,
    field: &str,
    thesaurus: &Thesaurus,
) -> Result<Vec<FacetCount>, QueryError> {
    let field: FacetField = field.parse()?;
    let all = ranked(catalog, query, thesaurus, &SearchConfig::default())?;
    Ok(count_facet(catalog, &all, field))
}

/// Hit as rendered in the JSON result envelope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeHit {
    pub id: String,
    pub title: String,
    pub score: f64,
    pub snippet: String,
    pub bbox: Option<GeographicBoundingBox>,
}

/// The `/search` response body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchEnvelope {
    pub total: usize,
    pub page: usize,
    pub page_size: usize,
    pub results: Vec<EnvelopeHit>,
    pub facets: BTreeMap<String, Vec<FacetCount>>,
}

/// Facets reported with every envelope.
pub const ENVELOPE_FACETS: [FacetField; 2] = [FacetField::ResourceType, FacetField::Publisher];

pub fn search_envelope(
    catalog: &Catalog,
    query: &SearchQuery,
    thesaurus: &Thesaurus,
    config: &SearchConfig,
) -> Result<SearchEnvelope, QueryError> {
    let all = ranked(catalog, query, thesaurus, config)?;
    let facets = ENVELOPE_FACETS
        .iter()
        .map(|f| (f.name().to_string(), count_facet(catalog, &all, *f)))
        .collect();
    let results = page_of(&all, query.page, query.page_size)
        .into_iter()
        .filter_map(|r| {
            let rec = catalog.get(&r.id)?;
            Some(EnvelopeHit {
                id: r.id,
                title: rec.title.clone(),
                score: r.score,
                snippet: r.snippet,
                bbox: rec.bbox,
            })
        })
        .collect();
    Ok(SearchEnvelope {
        total: all.len(),
        page: query.page,
        page_size: query.page_size,
        results,
        facets,
    })
}

impl SearchEnvelope {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("envelopes always serialize")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metadata::{ResourceType, TemporalExtent};

    fn rec(id: &str, title: &str, rt: ResourceType, publisher: &str) -> MetadataRecord {
        MetadataRecord {
            id: id.into(),
            title: title.into(),
            resource_type: Some(rt),
            publisher: publisher.into(),
            ..Default::default()
        }
    }

    fn corpus() -> Catalog {
        let mut c = Catalog::new();
        c.upsert(rec("a", "Watershed boundaries", ResourceType::Dataset, "USGS")).unwrap();
        c.upsert(rec("b", "Watershed flow service", ResourceType::Service, "NOAA")).unwrap();
        c.upsert(rec("c", "Street centerlines", ResourceType::Dataset, "")).unwrap();
        c
    }

    #[test]
    fn idf_hand_values() {
        assert!((idf(3, 1) - (2.5f64).ln()).abs() < 1e-15);
        assert!((idf(3, 3) - (1.75f64).ln()).abs() < 1e-15);
        assert!(idf(3, 1) > idf(3, 3));
    }

    #[test]
    fn rare_term_outranks_common_term() {
        let mut c = Catalog::new();
        c.upsert(rec("d1", "common rare", ResourceType::Dataset, "")).unwrap();
        c.upsert(rec("d2", "common", ResourceType::Dataset, "")).unwrap();
        c.upsert(rec("d3", "common", ResourceType::Dataset, "")).unwrap();
        let t = Thesaurus::default();
        let rare = search(&c, &SearchQuery::text("rare"), &t).unwrap();
        let common = search(&c, &SearchQuery::text("common"), &t).unwrap();
        let rare_d1 = rare.page[0].score;
        let common_d1 = common.page.iter().find(|r| r.id == "d1").unwrap().score;
        assert!((rare_d1 - 3.0 * (2.5f64).ln()).abs() < 1e-12);
        assert!((common_d1 - 3.0 * (1.75f64).ln()).abs() < 1e-12);
        assert!(rare_d1 > common_d1);
    }

    #[test]
    fn field_boosts_apply() {
        let mut c = Catalog::new();
        let mut r1 = rec("t", "lidar", ResourceType::Dataset, "");
        r1.abstract_text = "nothing".into();
        let mut r2 = rec("k", "nothing", ResourceType::Dataset, "");
        r2.keywords = vec!["lidar".into()];
        let mut r3 = rec("l", "nothing", ResourceType::Dataset, "");
        r3.lineage = "lidar".into();
        for r in [r1, r2, r3] {
            c.upsert(r).unwrap();
        }
        let out = search(&c, &SearchQuery::text("lidar"), &Thesaurus::default()).unwrap();
        let ids: Vec<_> = out.page.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["t", "k", "l"]);
        let base = idf(3, 3);
        assert!((out.page[0].score - 3.0 * base).abs() < 1e-12);
        assert!((out.page[1].score - 2.0 * base).abs() < 1e-12);
        assert!((out.page[2].score - 0.5 * base).abs() < 1e-12);
    }

    #[test]
    fn keyword_hits_carry_the_term() {
        let out = search(&corpus(), &SearchQuery::text("watershed"), &Thesaurus::default()).unwrap();
        assert_eq!(out.total, 2);
        assert!(out.page.iter().all(|r| r.matched_terms.contains("watershed") && r.score > 0.0));
    }

    #[test]
    fn empty_text_browses_with_zero_scores() {
        let q = SearchQuery::default().with_facet(FacetField::ResourceType, "dataset");
        let out = search(&corpus(), &q, &Thesaurus::default()).unwrap();
        assert_eq!(out.total, 2);
        assert!(out.page.iter().all(|r| r.score == 0.0 && r.matched_terms.is_empty()));
        let ids: Vec<_> = out.page.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["a", "c"]);
    }

    #[test]
    fn stopword_only_text_matches_nothing() {
        let out = search(&corpus(), &SearchQuery::text("the of"), &Thesaurus::default()).unwrap();
        assert_eq!(out.total, 0);
    }

    #[test]
    fn query_invariants() {
        let t = Thesaurus::default();
        assert_eq!(search(&corpus(), &SearchQuery::default(), &t).unwrap_err(), QueryError::Empty);
        let q = SearchQuery::text("x").with_page(0, 0);
        assert!(matches!(search(&corpus(), &q, &t), Err(QueryError::PageSize(0))));
        let q = SearchQuery::text("x").with_page(0, 101);
        assert!(search(&corpus(), &q, &t).is_err());
    }

    #[test]
    fn facet_counts_over_filtered_set() {
        let c = corpus();
        let t = Thesaurus::default();
        let q = SearchQuery::default().with_facet(FacetField::ResourceType, "dataset");
        let mut all = SearchQuery::text("watershed street");
        all.page_size = 1;
        assert_eq!(
            facet_counts(&c, &all, "resource_type", &t).unwrap(),
            vec![
                FacetCount { value: "dataset".into(), count: 2 },
                FacetCount { value: "service".into(), count: 1 }
            ]
        );
        assert_eq!(
            facet_counts(&c, &q, "publisher", &t).unwrap(),
            vec![FacetCount { value: "USGS".into(), count: 1 }]
        );
        assert!(facet_counts(&c, &all, "topic_category", &t).unwrap().is_empty());
        assert!(matches!(
            facet_counts(&c, &all, "title", &t),
            Err(QueryError::UnknownFacetField(_))
        ));
    }

    #[test]
    fn temporal_filter_is_closed_and_excludes_undated() {
        let mut c = Catalog::new();
        let mut r = rec("dated", "flood", ResourceType::Dataset, "");
        r.temporal_extent = Some(TemporalExtent {
            start: "2000-01-01T00:00:00Z".parse().unwrap(),
            end: "2000-12-31T00:00:00Z".parse().unwrap(),
        });
        c.upsert(r).unwrap();
        c.upsert(rec("undated", "flood", ResourceType::Dataset, "")).unwrap();
        let t = Thesaurus::default();
        let mut q = SearchQuery::text("flood");
        q.temporal = Some(TemporalFilter {
            start: Some("2000-12-31T00:00:00Z".parse().unwrap()),
            end: None,
        });
        let out = search(&c, &q, &t).unwrap();
        assert_eq!(out.page.iter().map(|r| r.id.as_str()).collect::<Vec<_>>(), ["dated"]);
        q.temporal = Some(TemporalFilter {
            start: Some("2001-01-01T00:00:00Z".parse().unwrap()),
            end: None,
        });
        assert_eq!(search(&c, &q, &t).unwrap().total, 0);
        assert_eq!(search(&c, &SearchQuery::text("flood"), &t).unwrap().total, 2);
    }

    #[test]
    fn params_parse() {
        let q = SearchQuery::from_params([
            ("q", "watershed"),
            ("mode", "semantic"),
            ("bbox", "-125,24,-66,50"),
            ("relation", "within"),
            ("facet.publisher", "USGS"),
            ("time_start", "2000-01-01T00:00:00Z"),
            ("page", "2"),
            ("page_size", "5"),
        ])
        .unwrap();
        assert_eq!(q.mode, SearchMode::Semantic);
        let (b, rel) = q.spatial.unwrap();
        assert_eq!((b.west, b.south, b.east, b.north), (-125.0, 24.0, -66.0, 50.0));
        assert_eq!(rel, SpatialRelation::Within);
        assert_eq!(q.facet_filters, vec![(FacetField::Publisher, "USGS".to_string())]);
        assert_eq!((q.page, q.page_size), (2, 5));
        assert!(q.temporal.unwrap().end.is_none());

        for bad in [
            vec![("q", "x"), ("bbox", "1,2,3")],
            vec![("q", "x"), ("page", "-1")],
            vec![("q", "x"), ("page_size", "0")],
            vec![("q", "x"), ("mode", "fuzzy")],
            vec![("q", "x"), ("facet.title", "y")],
            vec![("page", "1")],
        ] {
            assert!(SearchQuery::from_params(bad.clone()).is_err(), "{bad:?}");
        }
    }

    #[test]
    fn snippet_is_bounded() {
        let mut c = Catalog::new();
        let mut r = rec("a", "long", ResourceType::Dataset, "");
        r.abstract_text = "é".repeat(500);
        c.upsert(r).unwrap();
        let out = search(&c, &SearchQuery::text("long"), &Thesaurus::default()).unwrap();
        assert_eq!(out.page[0].snippet.chars().count(), SNIPPET_CHARS);
    }
}
