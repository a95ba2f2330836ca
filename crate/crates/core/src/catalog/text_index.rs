use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::metadata::MetadataRecord;
use crate::text::tokenize;

/// Record fields that feed the text index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextField {
    Title,
    Keywords,
    Abstract,
    TopicCategory,
    Lineage,
    Publisher,
    Contact,
}

impl TextField {
    pub const ALL: [TextField; 7] = [
        TextField::Title,
        TextField::Keywords,
        TextField::Abstract,
        TextField::TopicCategory,
        TextField::Lineage,
        TextField::Publisher,
        TextField::Contact,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            TextField::Title => "title",
            TextField::Keywords => "keywords",
            TextField::Abstract => "abstract",
            TextField::TopicCategory => "topic_category",
            TextField::Lineage => "lineage",
            TextField::Publisher => "publisher",
            TextField::Contact => "contact",
        }
    }

    pub fn tokens(&self, record: &MetadataRecord) -> Vec<String> {
        match self {
            TextField::Title => tokenize(&record.title),
            TextField::Keywords => record.keywords.iter().flat_map(|k| tokenize(k)).collect(),
            TextField::Abstract => tokenize(&record.abstract_text),
            TextField::TopicCategory => tokenize(&record.topic_category),
            TextField::Lineage => tokenize(&record.lineage),
            TextField::Publisher => tokenize(&record.publisher),
            TextField::Contact => tokenize(&record.contact),
        }
    }
}

impl fmt::Display for TextField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Posting {
    pub id: String,
    pub field: TextField,
    pub tf: u32,
}

/// Term counts per `(record, field)`.
pub fn term_counts(record: &MetadataRecord) -> BTreeMap<String, BTreeMap<TextField, u32>> {
    let mut out: BTreeMap<String, BTreeMap<TextField, u32>> = BTreeMap::new();
    for field in TextField::ALL {
        for tok in field.tokens(record) {
            *out.entry(tok).or_default().entry(field).or_default() += 1;
        }
    }
    out
}

#[derive(Debug, Default, Clone)]
pub struct TextIndex {
    postings: HashMap<String, BTreeMap<(String, TextField), u32>>,
    terms_by_id: HashMap<String, BTreeSet<String>>,
}

impl TextIndex {
    pub fn insert(&mut self, record: &MetadataRecord) {
        let counts = term_counts(record);
        let terms = self.terms_by_id.entry(record.id.clone()).or_default();
        for (term, fields) in counts {
            let list = self.postings.entry(term.clone()).or_default();
            for (field, tf) in fields {
                list.insert((record.id.clone(), field), tf);
            }
            terms.insert(term);
        }
    }

    pub fn remove(&mut self, id: &str) {
        let Some(terms) = self.terms_by_id.remove(id) else {
            return;
        };
        for term in terms {
            if let Some(list) = self.postings.get_mut(&term) {
                list.retain(|(pid, _), _| pid != id);
                if list.is_empty() {
                    self.postings.remove(&term);
                }
            }
        }
    }

    /// Postings for `term`, ordered by record id then field.
    pub fn postings(&self, term: &str) -> Vec<Posting> {
        self.postings
            .get(term)
            .map(|list| {
                list.iter()
                    .map(|((id, field), tf)| Posting {
                        id: id.clone(),
                        field: *field,
                        tf: *tf,
                    })
                    .collect()
            })
            .unwrap_or_default()
    }

    pub(crate) fn raw_postings(&self, term: &str) -> Option<&BTreeMap<(String, TextField), u32>> {
        self.postings.get(term)
    }

    /// Number of distinct records containing `term` in any field.
    pub fn document_frequency(&self, term: &str) -> usize {
        let Some(list) = self.postings.get(term) else {
            return 0;
        };
        let mut n = 0;
        let mut last: Option<&str> = None;
        for (id, _) in list.keys() {
            if last != Some(id.as_str()) {
                n += 1;
                last = Some(id);
            }
        }
        n
    }

    pub fn term_count(&self) -> usize {
        self.postings.len()
    }

    pub fn indexed_ids(&self) -> impl Iterator<Item = &str> {
        self.terms_by_id.keys().map(String::as_str)
    }

    pub(crate) fn all_postings(&self) -> impl Iterator<Item = (&str, &(String, TextField), &u32)> {
        self.postings
            .iter()
            .flat_map(|(t, list)| list.iter().map(move |(k, v)| (t.as_str(), k, v)))
    }

    pub(crate) fn terms_of(&self, id: &str) -> Option<&BTreeSet<String>> {
        self.terms_by_id.get(id)
    }
}
