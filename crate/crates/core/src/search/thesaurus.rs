//! Concept thesaurus and query expansion.
//!
//! File format, one assertion per line, tab separated:
//!
//! ```text
//! concept<TAB>prefLabel<TAB>label
//! concept<TAB>altLabel<TAB>label
//! concept<TAB>broader<TAB>concept
//! ```
//!
//! Lines starting with `#` and blank lines are ignored.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::path::Path;

use thiserror::Error;

use crate::text::tokenize;

/// Weight multiplier applied per hop away from a matched concept.
pub const EXPANSION_DECAY: f64 = 0.8;

#[derive(Debug, Error)]
pub enum ThesaurusError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("broader relation has a cycle through {0:?}")]
    Cycle(Vec<String>),
    #[error("concept {0:?} has two preferred labels")]
    DuplicatePrefLabel(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Default, Clone)]
struct Concept {
    pref_label: Option<String>,
    alt_labels: BTreeSet<String>,
    broader: BTreeSet<String>,
}

#[derive(Debug, Default, Clone)]
pub struct Thesaurus {
    concepts: BTreeMap<String, Concept>,
    narrower: BTreeMap<String, BTreeSet<String>>,
    // tokenized label -> concepts carrying it
    labels: HashMap<Vec<String>, BTreeSet<String>>,
    longest_label: usize,
}

#[derive(Debug, Default)]
pub struct ThesaurusBuilder {
    concepts: BTreeMap<String, Concept>,
}

impl ThesaurusBuilder {
    fn concept(&mut self, id: &str) -> &mut Concept {
        self.concepts.entry(id.to_string()).or_default()
    }

    pub fn pref_label(mut self, concept: &str, label: &str) -> Result<Self, ThesaurusError> {
        let c = self.concept(concept);
        if c.pref_label.is_some() {
            return Err(ThesaurusError::DuplicatePrefLabel(concept.to_string()));
        }
        c.pref_label = Some(label.to_string());
        Ok(self)
    }

    pub fn alt_label(mut self, concept: &str, label: &str) -> Self {
        self.concept(concept).alt_labels.insert(label.to_string());
        self
    }

    pub fn broader(mut self, concept: &str, broader: &str) -> Self {
        self.concept(concept).broader.insert(broader.to_string());
        self.concept(broader);
        self
    }

    pub fn build(self) -> Result<Thesaurus, ThesaurusError> {
        let concepts = self.concepts;
        if let Some(cycle) = find_cycle(&concepts) {
            return Err(ThesaurusError::Cycle(cycle));
        }
        let mut narrower: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        let mut labels: HashMap<Vec<String>, BTreeSet<String>> = HashMap::new();
        let mut longest_label = 0;
        for (id, c) in &concepts {
            for b in &c.broader {
                narrower.entry(b.clone()).or_default().insert(id.clone());
            }
            for label in c.pref_label.iter().chain(&c.alt_labels) {
                let toks = tokenize(label);
                if toks.is_empty() {
                    continue;
                }
                longest_label = longest_label.max(toks.len());
                labels.entry(toks).or_default().insert(id.clone());
            }
        }
        Ok(Thesaurus {
            concepts,
            narrower,
            labels,
            longest_label,
        })
    }
}

fn find_cycle(concepts: &BTreeMap<String, Concept>) -> Option<Vec<String>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Active,
        Done,
    }
    let mut marks: HashMap<&str, Mark> = HashMap::new();
    for start in concepts.keys() {
        if marks.contains_key(start.as_str()) {
            continue;
        }
        // iterative DFS keeping the active path
        let mut path: Vec<&str> = vec![start];
        let mut iters: Vec<std::collections::btree_set::Iter<'_, String>> =
            vec![concepts[start].broader.iter()];
        marks.insert(start, Mark::Active);
        while let Some(it) = iters.last_mut() {
            match it.next() {
                Some(next) => match marks.get(next.as_str()) {
                    Some(Mark::Active) => {
                        let from = path.iter().position(|p| *p == next).unwrap_or(0);
                        let mut cycle: Vec<String> = path[from..].iter().map(|s| s.to_string()).collect();
                        cycle.push(next.clone());
                        return Some(cycle);
                    }
                    Some(Mark::Done) => {}
                    None => {
                        marks.insert(next, Mark::Active);
                        path.push(next);
                        iters.push(concepts.get(next).map(|c| c.broader.iter()).unwrap_or_default());
                    }
                },
                None => {
                    if let Some(done) = path.pop() {
                        marks.insert(done, Mark::Done);
                    }
                    iters.pop();
                }
            }
        }
    }
    None
}

impl Thesaurus {
    pub fn builder() -> ThesaurusBuilder {
        ThesaurusBuilder::default()
    }

    pub fn parse(text: &str) -> Result<Thesaurus, ThesaurusError> {
        let mut b = ThesaurusBuilder::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line.split('\t').map(str::trim).collect();
            let syntax = |message: String| ThesaurusError::Syntax { line: i + 1, message };
            let [concept, relation, object] = parts[..] else {
                return Err(syntax(format!("expected 3 tab-separated fields, found {}", parts.len())));
            };
            if concept.is_empty() || object.is_empty() {
                return Err(syntax("empty concept or label".into()));
            }
            b = match relation {
                "prefLabel" => b.pref_label(concept, object).map_err(|e| syntax(e.to_string()))?,
                "altLabel" => b.alt_label(concept, object),
                "broader" => b.broader(concept, object),
                other => return Err(syntax(format!("unknown relation {other:?}"))),
            };
        }
        b.build()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Thesaurus, ThesaurusError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ThesaurusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn concept_count(&self) -> usize {
        self.concepts.len()
    }

    pub fn pref_label(&self, concept: &str) -> Option<&str> {
        self.concepts.get(concept)?.pref_label.as_deref()
    }

    pub fn alt_labels(&self, concept: &str) -> impl Iterator<Item = &str> {
        self.concepts
            .get(concept)
            .into_iter()
            .flat_map(|c| c.alt_labels.iter().map(String::as_str))
    }

    pub fn broader(&self, concept: &str) -> impl Iterator<Item = &str> {
        self.concepts
            .get(concept)
            .into_iter()
            .flat_map(|c| c.broader.iter().map(String::as_str))
    }

    pub fn narrower(&self, concept: &str) -> impl Iterator<Item = &str> {
        self.narrower
            .get(concept)
            .into_iter()
            .flat_map(|s| s.iter().map(String::as_str))
    }

    /// Concepts carrying `label` as a preferred or alternative label,
    /// compared after tokenization (so case-insensitively).
    pub fn concepts_for_label(&self, label: &str) -> BTreeSet<&str> {
        self.labels
            .get(&tokenize(label))
            .map(|s| s.iter().map(String::as_str).collect())
            .unwrap_or_default()
    }

    /// Concepts with a label whose token sequence occurs contiguously in `tokens`.
    pub fn matching_concepts(&self, tokens: &[String]) -> BTreeSet<&str> {
        let mut out = BTreeSet::new();
        for start in 0..tokens.len() {
            let max = self.longest_label.min(tokens.len() - start);
            for len in 1..=max {
                if let Some(cs) = self.labels.get(&tokens[start..start + len]) {
                    out.extend(cs.iter().map(String::as_str));
                }
            }
        }
        out
    }

    fn label_tokens(&self, concept: &str) -> Vec<String> {
        let Some(c) = self.concepts.get(concept) else {
            return Vec::new();
        };
        c.pref_label
            .iter()
            .chain(&c.alt_labels)
            .flat_map(|l| tokenize(l))
            .collect()
    }
}

/// Expands query tokens over the thesaurus.
///
/// Query tokens keep weight 1.0. Labels of every concept named in the query
/// get [`EXPANSION_DECAY`] (a synonym counts as one hop), and labels of
/// concepts `d` narrower-links away get `EXPANSION_DECAY^d` for `d <= depth`.
/// Broader concepts are never added. Each term keeps its highest weight.
pub fn expand_query(tokens: &[String], thesaurus: &Thesaurus, depth: usize) -> BTreeMap<String, f64> {
    let mut weights: BTreeMap<String, f64> = BTreeMap::new();
    let mut bump = |term: String, w: f64| {
        let slot = weights.entry(term).or_insert(0.0);
        if w > *slot {
            *slot = w;
        }
    };
    for t in tokens {
        bump(t.clone(), 1.0);
    }
    if depth == 0 {
        return weights;
    }

    // shortest narrower-distance from any matched concept
    let mut dist: BTreeMap<&str, usize> = BTreeMap::new();
    let mut queue = VecDeque::new();
    for c in thesaurus.matching_concepts(tokens) {
        dist.insert(c, 0);
        queue.push_back(c);
    }
    while let Some(c) = queue.pop_front() {
        let d = dist[c];
        if d >= depth {
            continue;
        }
        for n in thesaurus.narrower(c) {
            if !dist.contains_key(n) {
                dist.insert(n, d + 1);
                queue.push_back(n);
            }
        }
    }
    for (concept, d) in dist {
        let w = EXPANSION_DECAY.powi(d.max(1) as i32);
        for t in thesaurus.label_tokens(concept) {
            bump(t, w);
        }
    }
    weights
}
