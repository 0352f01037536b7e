//! A restricted PDF content-stream decoder.
//!
//! Only the text operators `BT ET Tf Td rg g Tj` are understood. Each `Tj`
//! yields one [`StyledRun`] together with the text cursor at the time it was
//! shown, converted to top-left page coordinates.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::doc::{Document, StyledRun};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Number,
    Name,
    String,
    Operator,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub kind: TokenKind,
    /// Raw bytes; for strings, the unescaped content; names keep their `/`.
    pub lexeme: Vec<u8>,
    pub position: usize,
}

impl Token {
    pub fn text(&self) -> String {
        latin1(&self.lexeme)
    }

    fn number(&self) -> Option<f64> {
        match self.kind {
            TokenKind::Number => std::str::from_utf8(&self.lexeme).ok()?.parse().ok(),
            _ => None,
        }
    }
}

fn latin1(bytes: &[u8]) -> String {
    bytes.iter().map(|&b| b as char).collect()
}

pub const OPERATORS: [&str; 7] = ["BT", "ET", "Tf", "Td", "rg", "g", "Tj"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub position: usize,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "offset {}: {}", self.position, self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TokenStream {
    pub tokens: Vec<Token>,
    /// Skipped operators and other recoverable problems.
    pub diagnostics: Vec<Diagnostic>,
}

#[derive(Debug, Error, PartialEq)]
pub enum StreamError {
    #[error("offset {0}: unterminated string literal")]
    UnterminatedString(usize),
    #[error("offset {0}: Tj with no font selected")]
    NoFont(usize),
    #[error("offset {position}: unresolved font {name}")]
    UnknownFont { position: usize, name: String },
    #[error("offset {position}: bad operands for {op}")]
    Operands { position: usize, op: String },
}

fn is_whitespace(b: u8) -> bool {
    matches!(b, b' ' | b'\t' | b'\r' | b'\n' | b'\x0c' | b'\0')
}

fn is_delimiter(b: u8) -> bool {
    matches!(b, b'(' | b')' | b'<' | b'>' | b'[' | b']' | b'{' | b'}' | b'/' | b'%')
}

fn is_number_lexeme(s: &[u8]) -> bool {
    let body = s.strip_prefix(b"-").or_else(|| s.strip_prefix(b"+")).unwrap_or(s);
    let dots = body.iter().filter(|&&b| b == b'.').count();
    !body.is_empty()
        && dots <= 1
        && body.iter().any(u8::is_ascii_digit)
        && body.iter().all(|&b| b.is_ascii_digit() || b == b'.')
}

/// Splits a content stream into tokens.
///
/// Unknown operators are reported and dropped together with the operands
/// that preceded them, so a later operator never sees stray operands.
pub fn tokenize_stream(bytes: &[u8]) -> Result<TokenStream, StreamError> {
    let mut out = TokenStream::default();
    // index into out.tokens where the current operand group starts
    let mut group_start = 0;
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        if is_whitespace(b) {
            i += 1;
            continue;
        }
        if b == b'%' {
            while i < bytes.len() && bytes[i] != b'\n' && bytes[i] != b'\r' {
                i += 1;
            }
            continue;
        }
        let start = i;
        if b == b'(' {
            let mut depth = 1;
            let mut lexeme = Vec::new();
            i += 1;
            loop {
                let Some(&c) = bytes.get(i) else {
                    return Err(StreamError::UnterminatedString(start));
                };
                i += 1;
                match c {
                    b'\\' => {
                        let Some(&e) = bytes.get(i) else {
                            return Err(StreamError::UnterminatedString(start));
                        };
                        i += 1;
                        match e {
                            b'(' | b')' | b'\\' => lexeme.push(e),
                            b'n' => lexeme.push(b'\n'),
                            b'r' => lexeme.push(b'\r'),
                            b't' => lexeme.push(b'\t'),
                            other => {
                                lexeme.push(b'\\');
                                lexeme.push(other);
                            }
                        }
                    }
                    b'(' => {
                        depth += 1;
                        lexeme.push(c);
                    }
                    b')' => {
                        depth -= 1;
                        if depth == 0 {
                            break;
                        }
                        lexeme.push(c);
                    }
                    _ => lexeme.push(c),
                }
            }
            out.tokens.push(Token {
                kind: TokenKind::String,
                lexeme,
                position: start,
            });
            continue;
        }
        if b == b'/' {
            i += 1;
            while i < bytes.len() && !is_whitespace(bytes[i]) && !is_delimiter(bytes[i]) {
                i += 1;
            }
            out.tokens.push(Token {
                kind: TokenKind::Name,
                lexeme: bytes[start..i].to_vec(),
                position: start,
            });
            continue;
        }
        if is_delimiter(b) {
            out.diagnostics.push(Diagnostic {
                position: start,
                message: format!("unsupported delimiter {:?}", b as char),
            });
            i += 1;
            continue;
        }
        while i < bytes.len() && !is_whitespace(bytes[i]) && !is_delimiter(bytes[i]) {
            i += 1;
        }
        let word = &bytes[start..i];
        if is_number_lexeme(word) {
            out.tokens.push(Token {
                kind: TokenKind::Number,
                lexeme: word.to_vec(),
                position: start,
            });
        } else if OPERATORS.iter().any(|op| op.as_bytes() == word) {
            out.tokens.push(Token {
                kind: TokenKind::Operator,
                lexeme: word.to_vec(),
                position: start,
            });
            group_start = out.tokens.len();
        } else {
            out.diagnostics.push(Diagnostic {
                position: start,
                message: format!("unknown operator {}", latin1(word)),
            });
            out.tokens.truncate(group_start);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FontSpec {
    pub family: String,
    pub bold: bool,
    pub italic: bool,
}

/// Resource name (with leading `/`) to font description.
pub type FontMap = BTreeMap<String, FontSpec>;

pub fn load_font_map(json: &str) -> Result<FontMap, serde_json::Error> {
    serde_json::from_str(json)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextState {
    pub font: Option<FontSpec>,
    pub size: f64,
    pub fill_color: [u8; 3],
    /// PDF user space, bottom-left origin.
    pub cursor: (f64, f64),
}

impl Default for TextState {
    fn default() -> Self {
        TextState {
            font: None,
            size: 0.0,
            fill_color: [0, 0, 0],
            cursor: (0.0, 0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchoredRun {
    pub run: StyledRun,
    /// Top-left page coordinates.
    pub anchor: (f64, f64),
}

/// Scales a 0–1 channel to 0–255, rounding half up.
pub fn scale_channel(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

pub fn decode_stream(
    tokens: &[Token],
    fonts: &FontMap,
    page_h: f64,
) -> Result<Vec<AnchoredRun>, StreamError> {
    let mut state = TextState::default();
    let mut operands: Vec<&Token> = Vec::new();
    let mut runs = Vec::new();
    for tok in tokens {
        if tok.kind != TokenKind::Operator {
            operands.push(tok);
            continue;
        }
        let op = tok.text();
        let bad = || StreamError::Operands {
            position: tok.position,
            op: op.clone(),
        };
        let nums = |n: usize| -> Result<Vec<f64>, StreamError> {
            if operands.len() < n {
                return Err(bad());
            }
            operands[operands.len() - n..]
                .iter()
                .map(|t| t.number().filter(|v| v.is_finite()).ok_or_else(bad))
                .collect()
        };
        match op.as_str() {
            "BT" => state.cursor = (0.0, 0.0),
            "ET" => {}
            "Tf" => {
                let size = nums(1)?[0];
                let name_tok = operands
                    .len()
                    .checked_sub(2)
                    .map(|k| operands[k])
                    .filter(|t| t.kind == TokenKind::Name)
                    .ok_or_else(bad)?;
                let name = name_tok.text();
                let font = fonts.get(&name).cloned().ok_or(StreamError::UnknownFont {
                    position: name_tok.position,
                    name,
                })?;
                if size <= 0.0 {
                    return Err(bad());
                }
                state.font = Some(font);
                state.size = size;
            }
            "Td" => {
                let v = nums(2)?;
                state.cursor.0 += v[0];
                state.cursor.1 += v[1];
            }
            "rg" => {
                let v = nums(3)?;
                state.fill_color = [scale_channel(v[0]), scale_channel(v[1]), scale_channel(v[2])];
            }
            "g" => {
                let c = scale_channel(nums(1)?[0]);
                state.fill_color = [c, c, c];
            }
            "Tj" => {
                let text_tok = operands
                    .last()
                    .filter(|t| t.kind == TokenKind::String)
                    .ok_or_else(bad)?;
                let font = state.font.as_ref().ok_or(StreamError::NoFont(tok.position))?;
                let text = text_tok.text();
                if !text.is_empty() {
                    runs.push(AnchoredRun {
                        run: StyledRun {
                            text,
                            font_family: font.family.clone(),
                            bold: font.bold,
                            italic: font.italic,
                            size: state.size,
                            color: state.fill_color,
                        },
                        anchor: (state.cursor.0, page_h - state.cursor.1),
                    });
                }
            }
            _ => unreachable!("tokenizer only emits known operators"),
        }
        operands.clear();
    }
    Ok(runs)
}

/// Runs that fell outside every block on their page.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AssignReport {
    pub unassigned: Vec<AnchoredRun>,
}

/// Appends each run to the block on `page` whose box contains its anchor.
/// Ties go to the smaller box, then to the lexicographically smaller id.
pub fn assign_runs_to_blocks(
    runs: &[AnchoredRun],
    page: usize,
    doc: &Document,
) -> (Document, AssignReport) {
    let mut out = doc.clone();
    let mut report = AssignReport::default();
    for ar in runs {
        let (x, y) = ar.anchor;
        let target = out
            .blocks
            .iter()
            .enumerate()
            .filter(|(_, b)| b.page == page && b.bbox.contains_point(x, y))
            .min_by(|(_, a), (_, b)| {
                a.bbox
                    .area()
                    .total_cmp(&b.bbox.area())
                    .then_with(|| a.id.cmp(&b.id))
            })
            .map(|(k, _)| k);
        match target {
            Some(k) => out.blocks[k].runs.push(ar.run.clone()),
            None => report.unassigned.push(ar.clone()),
        }
    }
    (out, report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::doc::{BBox, Block, BlockClass, Page};

    fn fonts() -> FontMap {
        load_font_map(r#"{"/F1": {"family": "LiberationSans", "bold": true, "italic": false}}"#).unwrap()
    }

    fn decode(src: &str) -> Result<Vec<AnchoredRun>, StreamError> {
        let ts = tokenize_stream(src.as_bytes())?;
        decode_stream(&ts.tokens, &fonts(), 792.0)
    }

    #[test]
    fn tokenizes_basic_stream() {
        let ts = tokenize_stream(b"BT /F1 12 Tf 72 700 Td (Hi) Tj ET").unwrap();
        assert_eq!(ts.tokens.len(), 10);
        let last = ts.tokens.last().unwrap();
        assert_eq!(last.kind, TokenKind::Operator);
        assert_eq!(last.lexeme, b"ET");
        assert_eq!(ts.tokens[1].lexeme, b"/F1");
        assert_eq!(ts.tokens[1].kind, TokenKind::Name);
        assert_eq!(ts.tokens[7].kind, TokenKind::String);
        assert!(ts.diagnostics.is_empty());
    }

    #[test]
    fn empty_input_has_no_tokens() {
        assert!(tokenize_stream(b"").unwrap().tokens.is_empty());
    }

    #[test]
    fn string_escapes() {
        let ts = tokenize_stream(br"(a\)b)").unwrap();
        assert_eq!(ts.tokens.len(), 1);
        assert_eq!(ts.tokens[0].lexeme, b"a)b");
        let ts = tokenize_stream(br"(x\\y (nested) \(z)").unwrap();
        assert_eq!(ts.tokens[0].lexeme, b"x\\y (nested) (z");
    }

    #[test]
    fn unterminated_string() {
        assert_eq!(tokenize_stream(b"BT (abc"), Err(StreamError::UnterminatedString(3)));
    }

    #[test]
    fn unknown_operator_is_skipped_with_operands() {
        let ts = tokenize_stream(b"BT 1 0 0 1 50 50 Tm /F1 9 Tf (x) Tj ET").unwrap();
        assert_eq!(ts.diagnostics.len(), 1);
        assert_eq!(ts.diagnostics[0].position, 17);
        assert!(ts.diagnostics[0].message.contains("Tm"));
        let ops: Vec<String> = ts.tokens.iter().map(Token::text).collect();
        assert_eq!(ops, ["BT", "/F1", "9", "Tf", "x", "Tj", "ET"]);
    }

    #[test]
    fn decodes_worked_example() {
        let runs = decode("BT /F1 12 Tf 72 700 Td 1 0 0 rg (Hi) Tj ET").unwrap();
        assert_eq!(runs.len(), 1);
        let r = &runs[0];
        assert_eq!(r.run.text, "Hi");
        assert_eq!(r.run.font_family, "LiberationSans");
        assert!(r.run.bold && !r.run.italic);
        assert_eq!(r.run.size, 12.0);
        assert_eq!(r.run.color, [255, 0, 0]);
        assert_eq!(r.anchor, (72.0, 92.0));
    }

    #[test]
    fn gray_rounds_half_up() {
        let runs = decode("BT /F1 10 Tf 0.5 g (a) Tj ET").unwrap();
        assert_eq!(runs[0].run.color, [128, 128, 128]);
    }

    #[test]
    fn td_is_cumulative_and_bt_resets() {
        let runs = decode("BT /F1 10 Tf 10 700 Td (a) Tj 5 -20 Td (b) Tj ET BT 1 1 Td (c) Tj ET").unwrap();
        let anchors: Vec<_> = runs.iter().map(|r| r.anchor).collect();
        assert_eq!(anchors, [(10.0, 92.0), (15.0, 112.0), (1.0, 791.0)]);
    }

    #[test]
    fn no_tj_no_runs() {
        assert!(decode("BT /F1 10 Tf 72 72 Td ET").unwrap().is_empty());
    }

    #[test]
    fn tj_before_tf_fails() {
        assert_eq!(decode("BT (a) Tj ET"), Err(StreamError::NoFont(7)));
    }

    #[test]
    fn unresolved_font_fails() {
        assert!(matches!(decode("BT /F9 10 Tf ET"), Err(StreamError::UnknownFont { .. })));
    }

    #[test]
    fn run_count_matches_tj_count() {
        let src = "BT /F1 8 Tf (a) Tj (b) Tj 0 0 1 rg (c) Tj ET";
        assert_eq!(decode(src).unwrap().len(), 3);
        assert_eq!(decode(src).unwrap(), decode(src).unwrap());
    }

    fn doc() -> Document {
        let block = |id: &str, bbox: BBox| Block {
            id: id.into(),
            page: 0,
            bbox,
            class_label: BlockClass::Paragraph,
            runs: vec![],
        };
        Document {
            pages: vec![Page { w: 612.0, h: 792.0 }],
            blocks: vec![
                block("outer", BBox::new(50.0, 50.0, 500.0, 500.0)),
                block("inner", BBox::new(60.0, 80.0, 200.0, 120.0)),
            ],
        }
    }

    fn anchored(x: f64, y: f64) -> AnchoredRun {
        AnchoredRun {
            run: StyledRun::plain("t", "F", 10.0),
            anchor: (x, y),
        }
    }

    #[test]
    fn assignment_prefers_smaller_box() {
        let (out, report) = assign_runs_to_blocks(&[anchored(70.0, 92.0)], 0, &doc());
        assert!(report.unassigned.is_empty());
        assert_eq!(out.block("inner").unwrap().runs.len(), 1);
        assert!(out.block("outer").unwrap().runs.is_empty());
    }

    #[test]
    fn assignment_to_only_container() {
        let (out, _) = assign_runs_to_blocks(&[anchored(400.0, 400.0)], 0, &doc());
        assert_eq!(out.block("outer").unwrap().runs.len(), 1);
    }

    #[test]
    fn outside_run_is_reported() {
        let d = doc();
        let (out, report) = assign_runs_to_blocks(&[anchored(600.0, 700.0)], 0, &d);
        assert_eq!(out, d);
        assert_eq!(report.unassigned.len(), 1);
    }

    #[test]
    fn equal_area_tie_breaks_on_id() {
        let mut d = doc();
        d.blocks[0].bbox = d.blocks[1].bbox;
        d.blocks[0].id = "zz".into();
        d.blocks[1].id = "aa".into();
        let (out, _) = assign_runs_to_blocks(&[anchored(70.0, 92.0)], 0, &d);
        assert_eq!(out.block("aa").unwrap().runs.len(), 1);
    }
}
