//! Canonical metadata records, the reduced metadata profile, validation and
//! the canonical JSON exchange format.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, SecondsFormat, Timelike, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Lat/lon extent in decimal degrees.
///
/// The fields are public so that records carrying a malformed box can still be
/// represented and reported on by [`validate_record`]. Use [`GeographicBoundingBox::new`]
/// when a checked value is wanted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeographicBoundingBox {
    pub west: f64,
    pub east: f64,
    pub south: f64,
    pub north: f64,
}

impl GeographicBoundingBox {
    pub const WORLD: GeographicBoundingBox = GeographicBoundingBox {
        west: -180.0,
        east: 180.0,
        south: -90.0,
        north: 90.0,
    };

    pub fn new(west: f64, east: f64, south: f64, north: f64) -> Result<Self, BoxError> {
        let b = GeographicBoundingBox {
            west,
            east,
            south,
            north,
        };
        b.check()?;
        Ok(b)
    }

    /// Parses the lon-first `west,south,east,north` form used by the portal API.
    pub fn from_wsen(text: &str) -> Result<Self, BoxError> {
        let parts: Vec<&str> = text.split(',').map(str::trim).collect();
        if parts.len() != 4 {
            return Err(BoxError::Format(text.to_string()));
        }
        let mut vals = [0.0f64; 4];
        for (slot, p) in vals.iter_mut().zip(&parts) {
            *slot = p
                .parse::<f64>()
                .map_err(|_| BoxError::Format(text.to_string()))?;
        }
        let [west, south, east, north] = vals;
        Self::new(west, east, south, north)
    }

    /// Checks each coordinate against its axis range, ignoring ordering.
    pub fn check_ranges(&self) -> Result<(), BoxError> {
        for (name, v, lim) in [
            ("west", self.west, 180.0),
            ("east", self.east, 180.0),
            ("south", self.south, 90.0),
            ("north", self.north, 90.0),
        ] {
            if !v.is_finite() || v < -lim || v > lim {
                return Err(BoxError::OutOfRange { field: name, value: v });
            }
        }
        Ok(())
    }

    pub fn check(&self) -> Result<(), BoxError> {
        self.check_ranges()?;
        if self.west > self.east {
            return Err(BoxError::LongitudeOrder {
                west: self.west,
                east: self.east,
            });
        }
        if self.south > self.north {
            return Err(BoxError::LatitudeOrder {
                south: self.south,
                north: self.north,
            });
        }
        Ok(())
    }

    pub fn is_valid(&self) -> bool {
        self.check().is_ok()
    }

    /// Closed-set intersection: boxes that only touch along an edge or corner intersect.
    pub fn intersects(&self, other: &GeographicBoundingBox) -> bool {
        self.west <= other.east
            && other.west <= self.east
            && self.south <= other.north
            && other.south <= self.north
    }

    /// True when `self` lies entirely inside `outer`, boundary contact allowed.
    pub fn within(&self, outer: &GeographicBoundingBox) -> bool {
        outer.west <= self.west
            && self.east <= outer.east
            && outer.south <= self.south
            && self.north <= outer.north
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BoxError {
    #[error("{field} = {value} is outside the valid range")]
    OutOfRange { field: &'static str, value: f64 },
    #[error("west ({west}) must not exceed east ({east}); antimeridian-crossing boxes are not supported")]
    LongitudeOrder { west: f64, east: f64 },
    #[error("south ({south}) must not exceed north ({north})")]
    LatitudeOrder { south: f64, north: f64 },
    #[error("expected \"west,south,east,north\" in decimal degrees, got {0:?}")]
    Format(String),
}

/// A UTC instant with whole-second precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp(DateTime<Utc>);

impl Timestamp {
    pub fn now() -> Self {
        Self::from_datetime(Utc::now())
    }

    pub fn from_datetime(dt: DateTime<Utc>) -> Self {
        Timestamp(dt.with_nanosecond(0).unwrap_or(dt))
    }

    pub fn from_unix(secs: i64) -> Option<Self> {
        DateTime::from_timestamp(secs, 0).map(Timestamp)
    }

    pub fn as_datetime(&self) -> DateTime<Utc> {
        self.0
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.to_rfc3339_opts(SecondsFormat::Secs, true))
    }
}

impl FromStr for Timestamp {
    type Err = chrono::ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let dt = DateTime::parse_from_rfc3339(s.trim())?;
        Ok(Self::from_datetime(dt.with_timezone(&Utc)))
    }
}

impl Serialize for Timestamp {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse()
            .map_err(|e| serde::de::Error::custom(format!("invalid ISO-8601 instant {s:?}: {e}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResourceType {
    Dataset,
    Service,
    Map,
    Tool,
}

impl ResourceType {
    pub const ALL: [ResourceType; 4] = [
        ResourceType::Dataset,
        ResourceType::Service,
        ResourceType::Map,
        ResourceType::Tool,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ResourceType::Dataset => "dataset",
            ResourceType::Service => "service",
            ResourceType::Map => "map",
            ResourceType::Tool => "tool",
        }
    }
}

impl fmt::Display for ResourceType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemporalExtent {
    pub start: Timestamp,
    pub end: Timestamp,
}

impl TemporalExtent {
    /// Closed-interval overlap.
    pub fn overlaps(&self, start: Option<Timestamp>, end: Option<Timestamp>) -> bool {
        end.is_none_or(|e| self.start <= e) && start.is_none_or(|s| s <= self.end)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessEndpoint {
    pub protocol: String,
    pub url: String,
}

/// Canonical description of one geospatial resource.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct MetadataRecord {
    pub id: String,
    pub resource_type: Option<ResourceType>,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    pub keywords: Vec<String>,
    pub topic_category: String,
    pub bbox: Option<GeographicBoundingBox>,
    pub temporal_extent: Option<TemporalExtent>,
    pub crs_list: Vec<String>,
    pub lineage: String,
    pub publisher: String,
    pub contact: String,
    pub access_endpoints: Vec<AccessEndpoint>,
    pub created: Option<Timestamp>,
    pub modified: Option<Timestamp>,
}

/// Names of the [`MetadataRecord`] fields, as they appear in the canonical document.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordField {
    Id,
    ResourceType,
    Title,
    Abstract,
    Keywords,
    TopicCategory,
    Bbox,
    TemporalExtent,
    CrsList,
    Lineage,
    Publisher,
    Contact,
    AccessEndpoints,
    Created,
    Modified,
}

impl RecordField {
    pub const ALL: [RecordField; 15] = [
        RecordField::Id,
        RecordField::ResourceType,
        RecordField::Title,
        RecordField::Abstract,
        RecordField::Keywords,
        RecordField::TopicCategory,
        RecordField::Bbox,
        RecordField::TemporalExtent,
        RecordField::CrsList,
        RecordField::Lineage,
        RecordField::Publisher,
        RecordField::Contact,
        RecordField::AccessEndpoints,
        RecordField::Created,
        RecordField::Modified,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            RecordField::Id => "id",
            RecordField::ResourceType => "resource_type",
            RecordField::Title => "title",
            RecordField::Abstract => "abstract",
            RecordField::Keywords => "keywords",
            RecordField::TopicCategory => "topic_category",
            RecordField::Bbox => "bbox",
            RecordField::TemporalExtent => "temporal_extent",
            RecordField::CrsList => "crs_list",
            RecordField::Lineage => "lineage",
            RecordField::Publisher => "publisher",
            RecordField::Contact => "contact",
            RecordField::AccessEndpoints => "access_endpoints",
            RecordField::Created => "created",
            RecordField::Modified => "modified",
        }
    }

    pub fn from_name(name: &str) -> Option<RecordField> {
        Self::ALL.into_iter().find(|f| f.name() == name)
    }
}

impl fmt::Display for RecordField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn has_text(s: &str) -> bool {
    !s.trim().is_empty()
}

impl MetadataRecord {
    /// Whether `field` carries a value. Blank strings and empty lists count as absent.
    pub fn is_populated(&self, field: RecordField) -> bool {
        match field {
            RecordField::Id => has_text(&self.id),
            RecordField::ResourceType => self.resource_type.is_some(),
            RecordField::Title => has_text(&self.title),
            RecordField::Abstract => has_text(&self.abstract_text),
            RecordField::Keywords => self.keywords.iter().any(|k| has_text(k)),
            RecordField::TopicCategory => has_text(&self.topic_category),
            RecordField::Bbox => self.bbox.is_some(),
            RecordField::TemporalExtent => self.temporal_extent.is_some(),
            RecordField::CrsList => self.crs_list.iter().any(|c| has_text(c)),
            RecordField::Lineage => has_text(&self.lineage),
            RecordField::Publisher => has_text(&self.publisher),
            RecordField::Contact => has_text(&self.contact),
            RecordField::AccessEndpoints => !self.access_endpoints.is_empty(),
            RecordField::Created => self.created.is_some(),
            RecordField::Modified => self.modified.is_some(),
        }
    }

    /// Structural invariants of the record itself, independent of any profile.
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if let Some(b) = &self.bbox {
            if let Err(e) = b.check() {
                out.push(Violation::new("bbox", e.to_string()));
            }
        }
        if let Some(t) = &self.temporal_extent {
            if t.start > t.end {
                out.push(Violation::new(
                    "temporal_extent",
                    format!("start ({}) is after end ({})", t.start, t.end),
                ));
            }
        }
        for (i, ep) in self.access_endpoints.iter().enumerate() {
            if let Err(e) = url::Url::parse(&ep.url) {
                out.push(Violation::new(
                    format!("access_endpoints[{i}].url"),
                    format!("{:?} is not a valid absolute URL: {e}", ep.url),
                ));
            }
        }
        out
    }

    /// Checks the invariants required before a record may enter a catalog.
    pub fn check_invariants(&self) -> Result<(), Vec<Violation>> {
        let mut v = Vec::new();
        if !has_text(&self.id) {
            v.push(Violation::new("id", "id must be non-empty"));
        }
        v.extend(self.violations());
        if v.is_empty() {
            Ok(())
        } else {
            Err(v)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl Violation {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Violation {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetadataProfile {
    name: String,
    mandatory_fields: Vec<RecordField>,
    recommended_fields: Vec<RecordField>,
}

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("field {0} is listed as both mandatory and recommended")]
    Overlap(RecordField),
    #[error("field {0} is listed twice")]
    Duplicate(RecordField),
    #[error("unknown profile {0:?}")]
    Unknown(String),
    #[error("invalid profile document: {0}")]
    Document(#[from] serde_json::Error),
}

impl MetadataProfile {
    pub const DEFAULT_NAME: &'static str = "sdi-basic";

    pub fn new(
        name: impl Into<String>,
        mandatory_fields: Vec<RecordField>,
        recommended_fields: Vec<RecordField>,
    ) -> Result<Self, ProfileError> {
        let mut seen = BTreeSet::new();
        for f in &mandatory_fields {
            if !seen.insert(*f) {
                return Err(ProfileError::Duplicate(*f));
            }
        }
        let mut seen_rec = BTreeSet::new();
        for f in &recommended_fields {
            if seen.contains(f) {
                return Err(ProfileError::Overlap(*f));
            }
            if !seen_rec.insert(*f) {
                return Err(ProfileError::Duplicate(*f));
            }
        }
        Ok(MetadataProfile {
            name: name.into(),
            mandatory_fields,
            recommended_fields,
        })
    }

    /// The default reduced profile.
    pub fn sdi_basic() -> Self {
        use RecordField::*;
        MetadataProfile {
            name: Self::DEFAULT_NAME.to_string(),
            mandatory_fields: vec![Id, Title, Abstract, ResourceType, Bbox, Publisher],
            recommended_fields: vec![
                Keywords,
                TopicCategory,
                TemporalExtent,
                CrsList,
                Lineage,
                AccessEndpoints,
                Contact,
            ],
        }
    }

    /// Looks up a built-in profile by name.
    pub fn builtin(name: &str) -> Result<Self, ProfileError> {
        match name {
            Self::DEFAULT_NAME => Ok(Self::sdi_basic()),
            other => Err(ProfileError::Unknown(other.to_string())),
        }
    }

    /// Reads a profile from its JSON form
    /// (`{"name":…, "mandatory_fields":[…], "recommended_fields":[…]}`).
    pub fn from_json(text: &str) -> Result<Self, ProfileError> {
        let raw: MetadataProfile = serde_json::from_str(text)?;
        Self::new(raw.name, raw.mandatory_fields, raw.recommended_fields)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn mandatory_fields(&self) -> &[RecordField] {
        &self.mandatory_fields
    }

    pub fn recommended_fields(&self) -> &[RecordField] {
        &self.recommended_fields
    }
}

impl Default for MetadataProfile {
    fn default() -> Self {
        Self::sdi_basic()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub valid: bool,
    pub missing_mandatory: Vec<RecordField>,
    pub missing_recommended: Vec<RecordField>,
    pub violations: Vec<Violation>,
    pub completeness: f64,
}

/// Weight of a recommended field relative to a mandatory one.
pub const RECOMMENDED_WEIGHT: f64 = 0.5;

pub fn validate_record(record: &MetadataRecord, profile: &MetadataProfile) -> ValidationReport {
    let missing = |fields: &[RecordField]| -> Vec<RecordField> {
        fields
            .iter()
            .copied()
            .filter(|f| !record.is_populated(*f))
            .collect()
    };
    let missing_mandatory = missing(profile.mandatory_fields());
    let missing_recommended = missing(profile.recommended_fields());
    let violations = record.violations();
    ValidationReport {
        valid: missing_mandatory.is_empty() && violations.is_empty(),
        missing_mandatory,
        missing_recommended,
        violations,
        completeness: completeness_score(record, profile),
    }
}

pub fn completeness_score(record: &MetadataRecord, profile: &MetadataProfile) -> f64 {
    let count = |fields: &[RecordField]| fields.iter().filter(|f| record.is_populated(**f)).count();
    let total = profile.mandatory_fields().len() as f64
        + RECOMMENDED_WEIGHT * profile.recommended_fields().len() as f64;
    if total == 0.0 {
        return 1.0;
    }
    let got = count(profile.mandatory_fields()) as f64
        + RECOMMENDED_WEIGHT * count(profile.recommended_fields()) as f64;
    got / total
}

#[derive(Debug, Error)]
pub enum CanonicalError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("schema error in field {field:?}: {message}")]
    Schema { field: String, message: String },
}

impl CanonicalError {
    fn schema(field: impl Into<String>, message: impl Into<String>) -> Self {
        CanonicalError::Schema {
            field: field.into(),
            message: message.into(),
        }
    }
}

/// A record read back from its canonical document, with any forward-compatibility warnings.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub record: MetadataRecord,
    pub warnings: Vec<String>,
}

/// Serializes a record as a single-line canonical JSON document.
pub fn to_canonical(record: &MetadataRecord) -> String {
    serde_json::to_string(record).expect("metadata records always serialize")
}

pub fn to_canonical_pretty(record: &MetadataRecord) -> String {
    serde_json::to_string_pretty(record).expect("metadata records always serialize")
}

pub fn from_canonical(document: &str) -> Result<Decoded, CanonicalError> {
    let value: serde_json::Value =
        serde_json::from_str(document).map_err(|e| CanonicalError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
    from_canonical_value(value)
}

pub fn from_canonical_value(value: serde_json::Value) -> Result<Decoded, CanonicalError> {
    let serde_json::Value::Object(mut map) = value else {
        return Err(CanonicalError::schema("", "document must be a JSON object"));
    };
    let mut warnings = Vec::new();
    let unknown: Vec<String> = map
        .keys()
        .filter(|k| RecordField::from_name(k).is_none())
        .cloned()
        .collect();
    for key in unknown {
        map.remove(&key);
        warnings.push(format!("ignoring unknown field {key:?}"));
    }
    let record: MetadataRecord =
        serde_path_to_error::deserialize(serde_json::Value::Object(map)).map_err(|e| {
            let field = e.path().to_string();
            CanonicalError::schema(field, e.into_inner().to_string())
        })?;
    if let Some(b) = &record.bbox {
        if let Err(BoxError::OutOfRange { field, value }) = b.check_ranges() {
            return Err(CanonicalError::schema(
                format!("bbox.{field}"),
                format!("{value} is outside the valid range"),
            ));
        }
    }
    Ok(Decoded { record, warnings })
}
