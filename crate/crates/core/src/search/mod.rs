//! The find step: keyword and thesaurus-expanded search with spatial,
//! temporal and facet filtering, tf-idf ranking and facet counts.

mod engine;
mod thesaurus;

pub use engine::{
    count_facet, facet_counts, idf, query_terms, ranked, search, search_envelope, search_with, EnvelopeHit,
    FacetCount, FacetField, QueryError, SearchConfig, SearchEnvelope, SearchMode, SearchOutcome, SearchQuery,
    SearchResult, TemporalFilter, DEFAULT_PAGE_SIZE, ENVELOPE_FACETS, MAX_PAGE_SIZE, SNIPPET_CHARS,
};
pub use thesaurus::{expand_query, Thesaurus, ThesaurusBuilder, ThesaurusError, EXPANSION_DECAY};
