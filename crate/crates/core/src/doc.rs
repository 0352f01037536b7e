//! In-memory document model and its JSON interchange format.
//!
//! Coordinates are page points with a top-left origin; y grows downward.
//! A block's text is the concatenation of its run texts, in run order, with
//! no separators inserted.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Slack allowed when checking that a block lies inside its page.
pub const PAGE_TOLERANCE: f64 = 0.5;

#[derive(Debug, Error)]
pub enum DocError {
    #[error("malformed document: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
}

impl DocError {
    fn invalid(path: impl Into<String>, message: impl Into<String>) -> Self {
        DocError::Invalid {
            path: path.into(),
            message: message.into(),
        }
    }
}

/// Axis-aligned box in page points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        BBox { x0, y0, x1, y1 }
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }

    pub fn union(&self, other: &BBox) -> BBox {
        BBox {
            x0: self.x0.min(other.x0),
            y0: self.y0.min(other.y0),
            x1: self.x1.max(other.x1),
            y1: self.y1.max(other.y1),
        }
    }

    pub fn translate(&self, dx: f64, dy: f64) -> BBox {
        BBox {
            x0: self.x0 + dx,
            y0: self.y0 + dy,
            x1: self.x1 + dx,
            y1: self.y1 + dy,
        }
    }

    pub fn is_valid(&self) -> bool {
        let finite = [self.x0, self.y0, self.x1, self.y1]
            .iter()
            .all(|v| v.is_finite() && *v >= 0.0);
        finite && self.x0 < self.x1 && self.y0 < self.y1
    }
}

impl Serialize for BBox {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        [self.x0, self.y0, self.x1, self.y1].serialize(s)
    }
}

impl<'de> Deserialize<'de> for BBox {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let [x0, y0, x1, y1] = <[f64; 4]>::deserialize(d)?;
        Ok(BBox { x0, y0, x1, y1 })
    }
}

/// A contiguous piece of text sharing one style.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyledRun {
    pub text: String,
    #[serde(rename = "font")]
    pub font_family: String,
    pub bold: bool,
    pub italic: bool,
    pub size: f64,
    pub color: [u8; 3],
}

impl StyledRun {
    pub fn plain(text: impl Into<String>, font_family: impl Into<String>, size: f64) -> Self {
        StyledRun {
            text: text.into(),
            font_family: font_family.into(),
            bold: false,
            italic: false,
            size,
            color: [0, 0, 0],
        }
    }

    /// Same style, different text.
    pub fn with_text(&self, text: impl Into<String>) -> Self {
        StyledRun {
            text: text.into(),
            ..self.clone()
        }
    }

    pub fn same_style(&self, other: &StyledRun) -> bool {
        self.font_family == other.font_family
            && self.bold == other.bold
            && self.italic == other.italic
            && self.size == other.size
            && self.color == other.color
    }
}

/// Layout component classes, in canonical one-hot order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BlockClass {
    Paragraph,
    Title,
    Section,
    ListItem,
    Table,
    TableCell,
    Figure,
    Caption,
    Header,
    Footer,
    Other,
}

impl BlockClass {
    pub const ALL: [BlockClass; 11] = [
        BlockClass::Paragraph,
        BlockClass::Title,
        BlockClass::Section,
        BlockClass::ListItem,
        BlockClass::Table,
        BlockClass::TableCell,
        BlockClass::Figure,
        BlockClass::Caption,
        BlockClass::Header,
        BlockClass::Footer,
        BlockClass::Other,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BlockClass::Paragraph => "paragraph",
            BlockClass::Title => "title",
            BlockClass::Section => "section",
            BlockClass::ListItem => "list_item",
            BlockClass::Table => "table",
            BlockClass::TableCell => "table_cell",
            BlockClass::Figure => "figure",
            BlockClass::Caption => "caption",
            BlockClass::Header => "header",
            BlockClass::Footer => "footer",
            BlockClass::Other => "other",
        }
    }

    /// Maps any label onto the vocabulary; unknown labels become `Other`.
    pub fn from_label(label: &str) -> BlockClass {
        label.parse().unwrap_or_else(|_| {
            log::warn!("unknown block class {label:?}, using \"other\"");
            BlockClass::Other
        })
    }
}

impl FromStr for BlockClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BlockClass::ALL
            .iter()
            .copied()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown block class {s:?}"))
    }
}

impl fmt::Display for BlockClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for BlockClass {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for BlockClass {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let label = String::deserialize(d)?;
        Ok(BlockClass::from_label(&label))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub id: String,
    pub page: usize,
    pub bbox: BBox,
    #[serde(rename = "class")]
    pub class_label: BlockClass,
    pub runs: Vec<StyledRun>,
}

impl Block {
    pub fn text(&self) -> String {
        self.runs.iter().map(|r| r.text.as_str()).collect()
    }

    pub fn char_count(&self) -> usize {
        self.runs.iter().map(|r| r.text.chars().count()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Page {
    pub w: f64,
    pub h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub pages: Vec<Page>,
    pub blocks: Vec<Block>,
}

impl Document {
    pub fn block(&self, id: &str) -> Option<&Block> {
        self.blocks.iter().find(|b| b.id == id)
    }

    pub fn page_of(&self, block: &Block) -> Page {
        self.pages[block.page]
    }

    /// Checks every structural invariant, naming the offending block and field.
    pub fn validate(&self) -> Result<(), DocError> {
        for (p, page) in self.pages.iter().enumerate() {
            if !(page.w.is_finite() && page.h.is_finite() && page.w > 0.0 && page.h > 0.0) {
                return Err(DocError::invalid(
                    format!("pages[{p}]"),
                    "page dimensions must be finite and positive",
                ));
            }
        }
        let mut seen = HashSet::new();
        for (k, block) in self.blocks.iter().enumerate() {
            let at = |field: &str| format!("blocks[{k}] (id {}).{field}", block.id);
            if !seen.insert(block.id.as_str()) {
                return Err(DocError::invalid(at("id"), format!("duplicate id {}", block.id)));
            }
            let Some(page) = self.pages.get(block.page) else {
                return Err(DocError::invalid(
                    at("page"),
                    format!("page {} out of range ({} pages)", block.page, self.pages.len()),
                ));
            };
            if !block.bbox.is_valid() {
                return Err(DocError::invalid(
                    at("bbox"),
                    format!("invalid bbox for block {}: {:?}", block.id, block.bbox),
                ));
            }
            if block.bbox.x1 > page.w + PAGE_TOLERANCE || block.bbox.y1 > page.h + PAGE_TOLERANCE {
                return Err(DocError::invalid(
                    at("bbox"),
                    format!("bbox of block {} exceeds page {}", block.id, block.page),
                ));
            }
            for (r, run) in block.runs.iter().enumerate() {
                let rp = at(&format!("runs[{r}]"));
                if run.text.is_empty() {
                    return Err(DocError::invalid(rp, "run text must be non-empty"));
                }
                if !(run.size.is_finite() && run.size > 0.0) {
                    return Err(DocError::invalid(rp, "run size must be positive"));
                }
            }
        }
        Ok(())
    }
}

/// Parses and validates a document file.
pub fn load_document(bytes: &[u8]) -> Result<Document, DocError> {
    let doc: Document = serde_json::from_slice(bytes)?;
    doc.validate()?;
    Ok(doc)
}

/// Serializes with the canonical key order of the interchange schema.
pub fn save_document(doc: &Document) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(doc).expect("document serialization is infallible");
    out.push(b'\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const SINGLE: &str = r#"{
      "pages": [{"w": 612, "h": 792}],
      "blocks": [{"id": "b1", "page": 0, "bbox": [72, 72, 540, 120], "class": "paragraph",
                  "runs": [{"text": "Hello", "font": "LiberationSans", "bold": false,
                            "italic": false, "size": 12, "color": [0, 0, 0]}]}]
    }"#;

    fn err_text(json: &str) -> String {
        load_document(json.as_bytes()).unwrap_err().to_string()
    }

    #[test]
    fn loads_single_block_fixture() {
        let doc = load_document(SINGLE.as_bytes()).unwrap();
        assert_eq!(doc.blocks.len(), 1);
        assert_eq!(doc.blocks[0].class_label, BlockClass::Paragraph);
        assert_eq!(doc.blocks[0].text(), "Hello");
    }

    #[test]
    fn inverted_bbox_names_block() {
        let bad = SINGLE.replace("[72, 72, 540, 120]", "[540, 72, 72, 120]");
        let msg = err_text(&bad);
        assert!(msg.contains("invalid bbox"), "{msg}");
        assert!(msg.contains("b1"), "{msg}");
    }

    #[test]
    fn duplicate_id_rejected() {
        let doc = load_document(SINGLE.as_bytes()).unwrap();
        let mut twice = doc.clone();
        twice.blocks.push(doc.blocks[0].clone());
        let bytes = serde_json::to_vec(&twice).unwrap();
        let msg = load_document(&bytes).unwrap_err().to_string();
        assert!(msg.contains("duplicate id b1"), "{msg}");
    }

    #[test]
    fn missing_field_is_schema_error() {
        let bad = SINGLE.replace(r#""page": 0, "#, "");
        let msg = err_text(&bad);
        assert!(msg.contains("page"), "{msg}");
    }

    #[test]
    fn out_of_range_color_rejected() {
        let bad = SINGLE.replace("[0, 0, 0]", "[0, 300, 0]");
        assert!(load_document(bad.as_bytes()).is_err());
    }

    #[test]
    fn bbox_outside_page_rejected() {
        let bad = SINGLE.replace("[72, 72, 540, 120]", "[72, 72, 640, 120]");
        assert!(err_text(&bad).contains("exceeds page"));
        // within the half-point tolerance
        let ok = SINGLE.replace("[72, 72, 540, 120]", "[72, 72, 612.4, 120]");
        assert!(load_document(ok.as_bytes()).is_ok());
    }

    #[test]
    fn round_trip_is_byte_stable() {
        let doc = load_document(SINGLE.as_bytes()).unwrap();
        let once = save_document(&doc);
        let again = save_document(&load_document(&once).unwrap());
        assert_eq!(once, again);
        assert_eq!(load_document(&once).unwrap(), doc);
    }

    #[test]
    fn empty_document_round_trips() {
        let doc = Document {
            pages: vec![Page { w: 612.0, h: 792.0 }],
            blocks: vec![],
        };
        let back = load_document(&save_document(&doc)).unwrap();
        assert!(back.blocks.is_empty());
    }

    #[test]
    fn unknown_class_falls_back_to_other() {
        let odd = SINGLE.replace("\"paragraph\"", "\"weird_label\"");
        let doc = load_document(odd.as_bytes()).unwrap();
        assert_eq!(doc.blocks[0].class_label, BlockClass::Other);
    }

    #[test]
    fn garbage_bytes_are_an_error() {
        assert!(load_document(b"\x00\x01not json").is_err());
        assert!(load_document(b"{}").is_err());
    }
}
