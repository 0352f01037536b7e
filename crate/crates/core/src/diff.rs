//! Word-level redlines for matched blocks.
//!
//! Text is tokenized losslessly into alternating runs of non-whitespace and
//! whitespace, so an edit script applied to the first text reproduces the
//! second byte for byte.

use serde::{Deserialize, Serialize};

use crate::doc::Document;
use crate::matcher::MatchSet;

/// Splits text into maximal runs of whitespace and non-whitespace characters.
pub fn tokenize(text: &str) -> Vec<&str> {
    let mut tokens = Vec::new();
    let mut start = 0;
    let mut prev: Option<bool> = None;
    for (i, c) in text.char_indices() {
        let ws = c.is_whitespace();
        if prev.is_some_and(|p| p != ws) {
            tokens.push(&text[start..i]);
            start = i;
        }
        prev = Some(ws);
    }
    if start < text.len() {
        tokens.push(&text[start..]);
    }
    tokens
}

/// Whitespace-separated words.
pub fn words(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum EditOp {
    Keep { a: usize, b: usize, token: String },
    Insert { b: usize, token: String },
    Delete { a: usize, token: String },
    Substitute { a: usize, b: usize, from: String, to: String },
}

impl EditOp {
    pub fn is_keep(&self) -> bool {
        matches!(self, EditOp::Keep { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EditScript {
    pub ops: Vec<EditOp>,
}

impl EditScript {
    /// Number of non-keep operations.
    pub fn cost(&self) -> usize {
        self.ops.iter().filter(|op| !op.is_keep()).count()
    }

    /// Rebuilds the target text. Source tokens are taken from the script, so
    /// `source` only needs to agree with what the script was computed on.
    pub fn apply(&self, source: &[&str]) -> Option<String> {
        let mut out = String::new();
        let mut cursor = 0;
        for op in &self.ops {
            match op {
                EditOp::Keep { a, token, .. } => {
                    if *a != cursor || source.get(*a) != Some(&token.as_str()) {
                        return None;
                    }
                    out.push_str(token);
                    cursor += 1;
                }
                EditOp::Substitute { a, from, to, .. } => {
                    if *a != cursor || source.get(*a) != Some(&from.as_str()) {
                        return None;
                    }
                    out.push_str(to);
                    cursor += 1;
                }
                EditOp::Delete { a, token } => {
                    if *a != cursor || source.get(*a) != Some(&token.as_str()) {
                        return None;
                    }
                    cursor += 1;
                }
                EditOp::Insert { token, .. } => out.push_str(token),
            }
        }
        (cursor == source.len()).then_some(out)
    }
}

/// Unit-cost edit distance table, `(n+1)×(m+1)` row-major.
fn table<T: PartialEq>(a: &[T], b: &[T]) -> Vec<usize> {
    let m = b.len() + 1;
    let mut d = vec![0usize; (a.len() + 1) * m];
    for j in 0..m {
        d[j] = j;
    }
    for i in 1..=a.len() {
        d[i * m] = i;
        for j in 1..m {
            let sub = d[(i - 1) * m + j - 1] + usize::from(a[i - 1] != b[j - 1]);
            let del = d[(i - 1) * m + j] + 1;
            let ins = d[i * m + j - 1] + 1;
            d[i * m + j] = sub.min(del).min(ins);
        }
    }
    d
}

/// Distance only, in O(m) memory.
pub fn distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for i in 1..=a.len() {
        cur[0] = i;
        for j in 1..=b.len() {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Levenshtein distance with a backtraced script. On ties the backtrace
/// prefers keep/substitute, then insert, then delete.
pub fn levenshtein(a: &[&str], b: &[&str]) -> (usize, EditScript) {
    let d = table(a, b);
    let m = b.len() + 1;
    let mut ops = Vec::new();
    let (mut i, mut j) = (a.len(), b.len());
    while i > 0 || j > 0 {
        let here = d[i * m + j];
        if i > 0 && j > 0 && d[(i - 1) * m + j - 1] + usize::from(a[i - 1] != b[j - 1]) == here {
            ops.push(if a[i - 1] == b[j - 1] {
                EditOp::Keep { a: i - 1, b: j - 1, token: a[i - 1].to_string() }
            } else {
                EditOp::Substitute { a: i - 1, b: j - 1, from: a[i - 1].to_string(), to: b[j - 1].to_string() }
            });
            i -= 1;
            j -= 1;
        } else if j > 0 && d[i * m + j - 1] + 1 == here {
            ops.push(EditOp::Insert { b: j - 1, token: b[j - 1].to_string() });
            j -= 1;
        } else {
            ops.push(EditOp::Delete { a: i - 1, token: a[i - 1].to_string() });
            i -= 1;
        }
    }
    ops.reverse();
    (d[a.len() * m + b.len()], EditScript { ops })
}

/// Token-level distance divided by the longer token count; 0 for two empty texts.
pub fn normalized(distance: usize, len_a: usize, len_b: usize) -> f64 {
    let n = len_a.max(len_b);
    if n == 0 {
        0.0
    } else {
        distance as f64 / n as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiffKind {
    Pair,
    Split,
    Merge,
}

/// Redline for one matched group of blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockDiff {
    pub kind: DiffKind,
    pub sources: Vec<String>,
    pub targets: Vec<String>,
    pub score: f64,
    pub distance: usize,
    pub normalized_distance: f64,
    pub char_distance: usize,
    pub word_distance: usize,
    pub script: EditScript,
}

impl BlockDiff {
    pub fn compute(kind: DiffKind, sources: Vec<String>, targets: Vec<String>, score: f64, old: &str, new: &str) -> Self {
        let (ta, tb) = (tokenize(old), tokenize(new));
        let (dist, script) = levenshtein(&ta, &tb);
        let (ca, cb): (Vec<char>, Vec<char>) = (old.chars().collect(), new.chars().collect());
        BlockDiff {
            kind,
            sources,
            targets,
            score,
            distance: dist,
            normalized_distance: normalized(dist, ta.len(), tb.len()),
            char_distance: distance(&ca, &cb),
            word_distance: distance(&words(old), &words(new)),
            script,
        }
    }

    pub fn is_changed(&self) -> bool {
        self.kind != DiffKind::Pair || self.distance > 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Summary {
    pub matched: usize,
    pub unchanged: usize,
    pub changed: usize,
    pub split: usize,
    pub merged: usize,
    pub deleted: usize,
    pub inserted: usize,
}

impl Summary {
    pub fn has_differences(&self) -> bool {
        self.changed + self.split + self.merged + self.deleted + self.inserted > 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffReport {
    pub match_set: MatchSet,
    pub diffs: Vec<BlockDiff>,
    pub summary: Summary,
}

/// Joins block texts in document order with a single space.
fn joined(doc: &Document, ids: &[String]) -> (Vec<String>, String) {
    let ordered: Vec<&crate::doc::Block> = doc.blocks.iter().filter(|b| ids.contains(&b.id)).collect();
    let text = ordered.iter().map(|b| b.text()).collect::<Vec<_>>().join(" ");
    (ordered.iter().map(|b| b.id.clone()).collect(), text)
}

/// Diffs every matched group of `set`; split and merge groups are compared
/// against the concatenated text of their many side.
pub fn report(doc1: &Document, doc2: &Document, set: &MatchSet) -> DiffReport {
    let text = |doc: &Document, id: &str| doc.block(id).map(|b| b.text()).unwrap_or_default();
    let mut diffs = Vec::new();
    for p in &set.pairs {
        diffs.push(BlockDiff::compute(
            DiffKind::Pair,
            vec![p.source.clone()],
            vec![p.target.clone()],
            p.score,
            &text(doc1, &p.source),
            &text(doc2, &p.target),
        ));
    }
    for s in &set.splits {
        let (targets, new) = joined(doc2, &s.targets);
        diffs.push(BlockDiff::compute(DiffKind::Split, vec![s.source.clone()], targets, s.score, &text(doc1, &s.source), &new));
    }
    for m in &set.merges {
        let (sources, old) = joined(doc1, &m.sources);
        diffs.push(BlockDiff::compute(DiffKind::Merge, sources, vec![m.target.clone()], m.score, &old, &text(doc2, &m.target)));
    }
    let changed = diffs.iter().filter(|d| d.kind == DiffKind::Pair && d.distance > 0).count();
    let summary = Summary {
        matched: set.pairs.len(),
        unchanged: set.pairs.len() - changed,
        changed,
        split: set.splits.len(),
        merged: set.merges.len(),
        deleted: set.deleted.len(),
        inserted: set.inserted.len(),
    };
    DiffReport { match_set: set.clone(), diffs, summary }
}

impl DiffReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Human-readable rendering with `[-deleted-]{+inserted+}` markup.
    pub fn render(&self, doc1: &Document, doc2: &Document) -> String {
        let s = &self.summary;
        let mut out = format!(
            "{} matched, {} changed, {} split, {} merged, {} deleted, {} inserted\n",
            s.matched, s.changed, s.split, s.merged, s.deleted, s.inserted
        );
        for d in self.diffs.iter().filter(|d| d.is_changed()) {
            let tag = match d.kind {
                DiffKind::Pair => "~",
                DiffKind::Split => "<",
                DiffKind::Merge => ">",
            };
            out.push_str(&format!(
                "{tag} {} -> {} (score {:.3}, distance {:.3})\n  {}\n",
                d.sources.join("+"),
                d.targets.join("+"),
                d.score,
                d.normalized_distance,
                inline(&d.script)
            ));
        }
        for id in &self.match_set.deleted {
            out.push_str(&format!("- {id}: {}\n", doc1.block(id).map(|b| b.text()).unwrap_or_default()));
        }
        for id in &self.match_set.inserted {
            out.push_str(&format!("+ {id}: {}\n", doc2.block(id).map(|b| b.text()).unwrap_or_default()));
        }
        out
    }
}

fn inline(script: &EditScript) -> String {
    let mut out = String::new();
    for op in &script.ops {
        match op {
            EditOp::Keep { token, .. } => out.push_str(token),
            EditOp::Insert { token, .. } => out.push_str(&format!("{{+{token}+}}")),
            EditOp::Delete { token, .. } => out.push_str(&format!("[-{token}-]")),
            EditOp::Substitute { from, to, .. } => out.push_str(&format!("[-{from}-]{{+{to}+}}")),
        }
    }
    out
}
