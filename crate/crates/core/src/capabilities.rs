//! Reader for WMS-style GetCapabilities documents.
//!
//! Only the subset needed to describe a service in the catalog is read:
//! `Capability/Request` (the operation set) and `Layer` elements with their
//! `Title`, `CRS`, `EX_GeographicBoundingBox` and `BoundingBox` children.
//! Everything else is skipped, with a warning for the elements a capabilities
//! author would most likely expect to be carried over.

use std::collections::BTreeSet;
use std::fmt;

use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use url::Url;
use xxhash_rust::xxh3::xxh3_128;

use crate::metadata::{AccessEndpoint, GeographicBoundingBox, MetadataRecord, ResourceType};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Operation {
    GetCapabilities,
    GetMap,
    GetFeatureInfo,
    GetStyles,
    /// Any other `<Request>` child, kept under its qualified name.
    Other(String),
}

impl Operation {
    fn from_qualified(name: &str) -> Operation {
        match local(name) {
            "GetCapabilities" => Operation::GetCapabilities,
            "GetMap" => Operation::GetMap,
            "GetFeatureInfo" => Operation::GetFeatureInfo,
            "GetStyles" => Operation::GetStyles,
            _ => Operation::Other(name.to_string()),
        }
    }
}

impl fmt::Display for Operation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operation::GetCapabilities => f.write_str("GetCapabilities"),
            Operation::GetMap => f.write_str("GetMap"),
            Operation::GetFeatureInfo => f.write_str("GetFeatureInfo"),
            Operation::GetStyles => f.write_str("GetStyles"),
            Operation::Other(name) => f.write_str(name),
        }
    }
}

/// A `<BoundingBox>` in the units and axis order of its CRS, kept verbatim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrsBoundingBox {
    pub crs: String,
    pub minx: f64,
    pub miny: f64,
    pub maxx: f64,
    pub maxy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDescription {
    pub title: String,
    pub crs_list: Vec<String>,
    pub geographic_bbox: Option<GeographicBoundingBox>,
    pub crs_bboxes: Vec<CrsBoundingBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceDescription {
    pub source_url: Url,
    pub operations: BTreeSet<Operation>,
    pub layers: Vec<LayerDescription>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedCapabilities {
    pub service: ServiceDescription,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CapabilitiesError {
    #[error("XML syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("structural error: {0}")]
    Structure(String),
    #[error("invalid number {text:?} in {element}")]
    Number { element: String, text: String },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExtentError {
    #[error("layer {0:?} has no geographic extent (no EX_GeographicBoundingBox, CRS:84 or EPSG:4326 box)")]
    NoExtent(String),
    #[error("layer {title:?} has an unusable extent: {reason}")]
    Invalid { title: String, reason: String },
}

fn local(name: &str) -> &str {
    name.rsplit(':').next().unwrap_or(name)
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let offset = offset.min(text.len());
    let before = &text.as_bytes()[..offset];
    let line = before.iter().filter(|b| **b == b'\n').count() + 1;
    let col = before.iter().rev().take_while(|b| **b != b'\n').count() + 1;
    (line, col)
}

fn parse_number(element: &str, text: &str) -> Result<f64, CapabilitiesError> {
    text.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| CapabilitiesError::Number {
            element: element.to_string(),
            text: text.to_string(),
        })
}

#[derive(Default)]
struct LayerBuilder {
    slot: usize,
    depth: usize,
    title: Option<String>,
    crs_list: Vec<String>,
    geo: Option<GeographicBoundingBox>,
    crs_bboxes: Vec<CrsBoundingBox>,
}

#[derive(Default)]
struct GeoBoxBuilder {
    west: Option<f64>,
    east: Option<f64>,
    south: Option<f64>,
    north: Option<f64>,
}

const LAYER_CHILDREN_KEPT: [&str; 6] = [
    "Title",
    "CRS",
    "SRS",
    "EX_GeographicBoundingBox",
    "BoundingBox",
    "Layer",
];

struct Walker {
    warnings: Vec<String>,
    warned: BTreeSet<String>,
    saw_capability: bool,
    operations: BTreeSet<Operation>,
    slots: Vec<Option<LayerDescription>>,
    layers: Vec<LayerBuilder>,
    geo: Option<GeoBoxBuilder>,
}

impl Walker {
    fn warn_once(&mut self, key: &str, message: String) {
        if self.warned.insert(key.to_string()) {
            self.warnings.push(message);
        }
    }
}

/// Parses a capabilities document retrieved from `source_url`.
pub fn parse_capabilities(xml: &str, source_url: &Url) -> Result<ParsedCapabilities, CapabilitiesError> {
    let mut reader = Reader::from_str(xml);
    reader.config_mut().trim_text(true);

    let mut walker = Walker {
        warnings: Vec::new(),
        warned: BTreeSet::new(),
        saw_capability: false,
        operations: BTreeSet::new(),
        slots: Vec::new(),
        layers: Vec::new(),
        geo: None,
    };
    // qualified names of the open elements
    let mut stack: Vec<String> = Vec::new();
    // depth at which a skipped subtree started; everything below is ignored
    let mut skip_below: Option<usize> = None;
    let mut text = String::new();

    loop {
        let pos_before = reader.buffer_position() as usize;
        let event = reader.read_event().map_err(|e| {
            let (line, column) = line_col(xml, reader.error_position() as usize);
            CapabilitiesError::Syntax {
                line,
                column,
                message: e.to_string(),
            }
        })?;
        match event {
            Event::Start(e) => {
                let name = qname(&e);
                text.clear();
                if skip_below.is_none() {
                    open_element(&mut walker, &stack, &name, &e, false, &mut skip_below)?;
                }
                stack.push(name);
            }
            Event::Empty(e) => {
                let name = qname(&e);
                if skip_below.is_none() {
                    let mut dummy = None;
                    open_element(&mut walker, &stack, &name, &e, true, &mut dummy)?;
                    stack.push(name);
                    close_element(&mut walker, &stack, "")?;
                    stack.pop();
                }
            }
            Event::Text(t) => {
                let s = t.unescape().map_err(|e| {
                    let (line, column) = line_col(xml, pos_before);
                    CapabilitiesError::Syntax {
                        line,
                        column,
                        message: e.to_string(),
                    }
                })?;
                text.push_str(&s);
            }
            Event::CData(t) => text.push_str(&String::from_utf8_lossy(&t)),
            Event::End(_) => {
                if skip_below.is_none() {
                    close_element(&mut walker, &stack, text.trim())?;
                } else if skip_below == Some(stack.len()) {
                    skip_below = None;
                }
                text.clear();
                stack.pop();
            }
            Event::Eof => {
                if let Some(open) = stack.last() {
                    let (line, column) = line_col(xml, xml.len());
                    return Err(CapabilitiesError::Syntax {
                        line,
                        column,
                        message: format!("unexpected end of document inside <{open}>"),
                    });
                }
                break;
            }
            _ => {}
        }
    }

    if !walker.saw_capability {
        return Err(CapabilitiesError::Structure("missing <Capability> element".into()));
    }
    if walker.operations.is_empty() {
        return Err(CapabilitiesError::Structure(
            "<Capability> declares no operations under <Request>".into(),
        ));
    }
    Ok(ParsedCapabilities {
        service: ServiceDescription {
            source_url: source_url.clone(),
            operations: walker.operations,
            layers: walker.slots.into_iter().flatten().collect(),
        },
        warnings: walker.warnings,
    })
}

fn qname(e: &BytesStart<'_>) -> String {
    String::from_utf8_lossy(e.name().as_ref()).into_owned()
}

fn parent_local(stack: &[String]) -> Option<&str> {
    stack.last().map(|s| local(s))
}

fn open_element(
    w: &mut Walker,
    stack: &[String],
    name: &str,
    e: &BytesStart<'_>,
    empty: bool,
    skip_below: &mut Option<usize>,
) -> Result<(), CapabilitiesError> {
    let lname = local(name);
    let parent = parent_local(stack);
    let in_capability = stack.iter().any(|s| local(s) == "Capability");

    if lname == "Capability" {
        w.saw_capability = true;
        return Ok(());
    }
    if !in_capability {
        return Ok(());
    }
    match parent {
        Some("Request") => {
            w.operations.insert(Operation::from_qualified(name));
            if !empty {
                *skip_below = Some(stack.len() + 1);
            }
            return Ok(());
        }
        Some("Capability") if lname != "Request" && lname != "Layer" => {
            w.warn_once(lname, format!("skipping <{name}> under <Capability>"));
            if !empty {
                *skip_below = Some(stack.len() + 1);
            }
            return Ok(());
        }
        _ => {}
    }

    if lname == "Layer" {
        let depth = w.layers.len() + 1;
        if depth > 2 {
            w.warn_once("nested-layer", "skipping <Layer> elements nested more than one level deep".into());
            if !empty {
                *skip_below = Some(stack.len() + 1);
            }
            return Ok(());
        }
        let slot = w.slots.len();
        w.slots.push(None);
        w.layers.push(LayerBuilder {
            slot,
            depth,
            ..Default::default()
        });
        return Ok(());
    }

    if parent == Some("Layer") && !w.layers.is_empty() {
        match lname {
            "EX_GeographicBoundingBox" => w.geo = Some(GeoBoxBuilder::default()),
            "BoundingBox" => {
                let bb = read_crs_bbox(e)?;
                w.layers.last_mut().unwrap().crs_bboxes.push(bb);
            }
            l if LAYER_CHILDREN_KEPT.contains(&l) => {}
            other => {
                w.warn_once(other, format!("skipping <{name}> in <Layer>"));
                if !empty {
                    *skip_below = Some(stack.len() + 1);
                }
            }
        }
    }
    Ok(())
}

fn read_crs_bbox(e: &BytesStart<'_>) -> Result<CrsBoundingBox, CapabilitiesError> {
    let mut crs = None;
    let mut vals: [Option<f64>; 4] = [None; 4];
    for attr in e.attributes() {
        let attr = attr.map_err(|err| CapabilitiesError::Structure(format!("bad attribute in <BoundingBox>: {err}")))?;
        let key = String::from_utf8_lossy(attr.key.as_ref()).into_owned();
        let value = attr
            .unescape_value()
            .map_err(|err| CapabilitiesError::Structure(format!("bad attribute in <BoundingBox>: {err}")))?;
        let idx = match local(&key) {
            "CRS" | "SRS" => {
                crs = Some(value.trim().to_string());
                continue;
            }
            "minx" => 0,
            "miny" => 1,
            "maxx" => 2,
            "maxy" => 3,
            _ => continue,
        };
        vals[idx] = Some(parse_number(&format!("BoundingBox@{key}"), &value)?);
    }
    let crs = crs.ok_or_else(|| CapabilitiesError::Structure("<BoundingBox> without CRS attribute".into()))?;
    let names = ["minx", "miny", "maxx", "maxy"];
    let mut out = [0.0; 4];
    for i in 0..4 {
        out[i] = vals[i].ok_or_else(|| {
            CapabilitiesError::Structure(format!("<BoundingBox CRS={crs:?}> is missing {}", names[i]))
        })?;
    }
    Ok(CrsBoundingBox {
        crs,
        minx: out[0],
        miny: out[1],
        maxx: out[2],
        maxy: out[3],
    })
}

fn close_element(w: &mut Walker, stack: &[String], text: &str) -> Result<(), CapabilitiesError> {
    let Some(name) = stack.last() else {
        return Ok(());
    };
    let lname = local(name);
    let parent = stack.len().checked_sub(2).map(|i| local(&stack[i]));

    if parent == Some("EX_GeographicBoundingBox") {
        if let Some(geo) = w.geo.as_mut() {
            let slot = match lname {
                "westBoundLongitude" => &mut geo.west,
                "eastBoundLongitude" => &mut geo.east,
                "southBoundLatitude" => &mut geo.south,
                "northBoundLatitude" => &mut geo.north,
                _ => return Ok(()),
            };
            *slot = Some(parse_number(lname, text)?);
        }
        return Ok(());
    }

    match (lname, parent) {
        ("Title", Some("Layer")) => {
            if let Some(l) = w.layers.last_mut() {
                l.title = Some(text.to_string());
            }
        }
        ("CRS" | "SRS", Some("Layer")) => {
            if let Some(l) = w.layers.last_mut() {
                if !text.is_empty() && !l.crs_list.iter().any(|c| c == text) {
                    l.crs_list.push(text.to_string());
                }
            }
        }
        ("EX_GeographicBoundingBox", Some("Layer")) => {
            let geo = w.geo.take().unwrap_or_default();
            let missing: Vec<&str> = [
                ("westBoundLongitude", geo.west),
                ("eastBoundLongitude", geo.east),
                ("southBoundLatitude", geo.south),
                ("northBoundLatitude", geo.north),
            ]
            .iter()
            .filter(|(_, v)| v.is_none())
            .map(|(n, _)| *n)
            .collect();
            if !missing.is_empty() {
                return Err(CapabilitiesError::Structure(format!(
                    "<EX_GeographicBoundingBox> is missing {}",
                    missing.join(", ")
                )));
            }
            let b = GeographicBoundingBox {
                west: geo.west.unwrap(),
                east: geo.east.unwrap(),
                south: geo.south.unwrap(),
                north: geo.north.unwrap(),
            };
            match b.check() {
                Ok(()) => {
                    if let Some(l) = w.layers.last_mut() {
                        l.geo = Some(b);
                    }
                }
                Err(e) => w.warnings.push(format!("ignoring unusable <EX_GeographicBoundingBox>: {e}")),
            }
        }
        ("Layer", _) => finish_layer(w),
        _ => {}
    }
    Ok(())
}

fn finish_layer(w: &mut Walker) {
    let Some(mut b) = w.layers.pop() else {
        return;
    };
    if b.depth > 1 {
        if let Some(parent) = w.layers.last() {
            let mut crs = parent.crs_list.clone();
            for c in b.crs_list.drain(..) {
                if !crs.contains(&c) {
                    crs.push(c);
                }
            }
            b.crs_list = crs;
            if b.geo.is_none() {
                b.geo = parent.geo;
            }
        }
    }
    let title = b.title.unwrap_or_default();
    let (kept, dropped): (Vec<_>, Vec<_>) = b
        .crs_bboxes
        .into_iter()
        .partition(|bb| b.crs_list.contains(&bb.crs));
    for bb in dropped {
        w.warnings.push(format!(
            "layer {title:?}: dropping <BoundingBox> in {} which is not among the layer's CRS list",
            bb.crs
        ));
    }
    w.slots[b.slot] = Some(LayerDescription {
        title,
        crs_list: b.crs_list,
        geographic_bbox: b.geo,
        crs_bboxes: kept,
    });
}

/// The layer's extent in lon/lat degrees.
///
/// Preference order: the `EX_GeographicBoundingBox`, then a `CRS:84` box
/// (lon-first), then an `EPSG:4326` box (lat-first, axes swapped here).
pub fn geographic_extent(layer: &LayerDescription) -> Result<GeographicBoundingBox, ExtentError> {
    if let Some(b) = layer.geographic_bbox {
        return Ok(b);
    }
    let find = |name: &str| layer.crs_bboxes.iter().find(|b| b.crs.eq_ignore_ascii_case(name));
    let candidate = if let Some(b) = find("CRS:84") {
        GeographicBoundingBox {
            west: b.minx,
            east: b.maxx,
            south: b.miny,
            north: b.maxy,
        }
    } else if let Some(b) = find("EPSG:4326") {
        GeographicBoundingBox {
            west: b.miny,
            east: b.maxy,
            south: b.minx,
            north: b.maxx,
        }
    } else {
        return Err(ExtentError::NoExtent(layer.title.clone()));
    };
    candidate.check().map_err(|e| ExtentError::Invalid {
        title: layer.title.clone(),
        reason: e.to_string(),
    })?;
    Ok(candidate)
}

/// Deterministic record id for a layer: lowercase hex of a 128-bit hash of
/// `"<source_url>|<layer title>"`.
pub fn layer_record_id(source_url: &Url, layer_title: &str) -> String {
    let key = format!("{}|{}", source_url.as_str(), layer_title);
    format!("{:032x}", xxh3_128(key.as_bytes()))
}

pub fn layer_to_record(
    service: &ServiceDescription,
    layer: &LayerDescription,
    publisher: &str,
) -> Result<MetadataRecord, ExtentError> {
    let bbox = geographic_extent(layer)?;
    let url = service.source_url.as_str();
    Ok(MetadataRecord {
        id: layer_record_id(&service.source_url, &layer.title),
        resource_type: Some(ResourceType::Service),
        title: layer.title.clone(),
        abstract_text: format!("Layer '{}' served by {}", layer.title, url),
        bbox: Some(bbox),
        crs_list: layer.crs_list.clone(),
        publisher: publisher.to_string(),
        access_endpoints: vec![AccessEndpoint {
            protocol: "WMS".into(),
            url: url.to_string(),
        }],
        ..Default::default()
    })
}
