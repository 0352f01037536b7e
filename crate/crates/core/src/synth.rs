//! Seeded synthetic documents and mutated versions with ground-truth
//! correspondences recorded during construction.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::doc::{BBox, Block, BlockClass, Document, Page, StyledRun};
use crate::matcher::{Merge, MatchSet, MatchedPair, Split};

pub const PAGE_W: f64 = 612.0;
pub const PAGE_H: f64 = 792.0;
pub const MIN_BLOCKS: usize = 10;
pub const MAX_BLOCKS: usize = 60;
const TOP: f64 = 60.0;
const BOTTOM: f64 = PAGE_H - 60.0;
const GAP: f64 = 8.0;

/// Ground truth uses the same categories as a [`MatchSet`], with unit scores.
pub type GroundTruth = MatchSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Legal,
    Article,
}

impl FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "legal" => Ok(Profile::Legal),
            "article" => Ok(Profile::Article),
            other => Err(format!("unknown profile {other:?} (expected legal or article)")),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Legal => "legal",
            Profile::Article => "article",
        })
    }
}

const WORDS: &[&str] = &[
    "agreement", "party", "parties", "shall", "provide", "services", "term", "notice", "written",
    "payment", "invoice", "within", "days", "receipt", "obligation", "confidential", "information",
    "disclose", "third", "consent", "prior", "breach", "remedy", "liability", "damages", "indirect",
    "warranty", "limited", "exclusive", "license", "grant", "territory", "effective", "date",
    "termination", "renewal", "period", "governing", "law", "jurisdiction", "dispute", "arbitration",
    "assignment", "successor", "force", "majeure", "event", "delay", "performance", "standard",
    "schedule", "exhibit", "amendment", "waiver", "severability", "entire", "record", "audit",
    "insurance", "coverage", "claim", "indemnify", "defend", "hold", "harmless", "employee",
    "contractor", "subcontractor", "deliverable", "acceptance", "criteria", "fee", "expense",
    "tax", "applicable", "reasonable", "material", "compliance", "data", "security", "model",
    "method", "results", "experiment", "dataset", "baseline", "accuracy", "training", "graph",
    "network", "layer", "feature", "embedding", "matching", "document", "layout", "component",
    "block", "evaluation", "analysis", "approach", "proposed", "figure", "table", "section",
    "previous", "work", "sample", "metric", "error", "rate", "improvement", "significant",
    "representation", "structure", "version", "comparison", "change", "detection", "text",
    "visual", "geometric", "relation", "node", "edge", "attention", "pooling", "iteration",
    "algorithm", "optimal", "assignment", "cost", "matrix", "score", "threshold", "parameter",
    "value", "large", "small", "robust", "efficient", "simple", "novel", "general", "specific",
];

const HEADINGS: &[&str] = &[
    "Definitions", "Services", "Fees and Payment", "Confidentiality", "Term and Termination",
    "Warranties", "Indemnification", "Limitation of Liability", "Governing Law", "Notices",
    "Introduction", "Related Work", "Method", "Experiments", "Results", "Discussion",
    "Conclusion", "Background", "Evaluation", "Analysis",
];

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn sentence(rng: &mut ChaCha8Rng) -> String {
    let n = rng.gen_range(6..=14);
    let words: Vec<&str> = (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect();
    format!("{}.", capitalize(&words.join(" ")))
}

fn sentences(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> String {
    let n = rng.gen_range(lo..=hi);
    (0..n).map(|_| sentence(rng)).collect::<Vec<_>>().join(" ")
}

fn phrase(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> String {
    let n = rng.gen_range(lo..=hi);
    (0..n)
        .map(|_| capitalize(WORDS.choose(rng).unwrap()))
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Clone)]
struct Style {
    font: &'static str,
    bold: bool,
    italic: bool,
    size: f64,
    color: [u8; 3],
}

impl Style {
    fn new(font: &'static str, size: f64) -> Self {
        Style {
            font,
            bold: false,
            italic: false,
            size,
            color: [0, 0, 0],
        }
    }

    fn bold(mut self) -> Self {
        self.bold = true;
        self
    }

    fn italic(mut self) -> Self {
        self.italic = true;
        self
    }

    fn color(mut self, c: [u8; 3]) -> Self {
        self.color = c;
        self
    }

    fn run(&self, text: impl Into<String>) -> StyledRun {
        StyledRun {
            text: text.into(),
            font_family: self.font.to_string(),
            bold: self.bold,
            italic: self.italic,
            size: self.size,
            color: self.color,
        }
    }
}

/// Height of a text box of `chars` characters set at `size` points in `width`.
fn text_height(chars: usize, size: f64, width: f64) -> f64 {
    let per_line = (width / (0.5 * size)).floor().max(1.0);
    let lines = ((chars as f64) / per_line).ceil().max(1.0);
    lines * size * 1.25 + 4.0
}

struct Builder {
    rng: ChaCha8Rng,
    columns: Vec<(f64, f64)>,
    footer: Style,
    pages: Vec<Page>,
    blocks: Vec<Block>,
    col: usize,
    y: f64,
    target: usize,
}

impl Builder {
    fn new(seed: u64, columns: Vec<(f64, f64)>, footer: Style) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let target = rng.gen_range(MIN_BLOCKS..=MAX_BLOCKS);
        let mut b = Builder {
            rng,
            columns,
            footer,
            pages: Vec::new(),
            blocks: Vec::new(),
            col: 0,
            y: TOP,
            target,
        };
        b.new_page();
        b
    }

    fn full(&self) -> bool {
        self.blocks.len() >= self.target
    }

    fn new_page(&mut self) {
        self.pages.push(Page { w: PAGE_W, h: PAGE_H });
        let page = self.pages.len() - 1;
        self.col = 0;
        self.y = TOP;
        if !self.full() {
            let run = self.footer.run(format!("Page {}", page + 1));
            self.push_at(page, BBox::new(276.0, 752.0, 336.0, 764.0), BlockClass::Footer, vec![run]);
        }
    }

    fn push_at(&mut self, page: usize, bbox: BBox, class: BlockClass, runs: Vec<StyledRun>) {
        let id = format!("b{}", self.blocks.len());
        self.blocks.push(Block {
            id,
            page,
            bbox,
            class_label: class,
            runs,
        });
    }

    /// Places a block of the given height in the current column, moving to the
    /// next column or page when it does not fit.
    fn place(&mut self, height: f64, indent: f64, class: BlockClass, runs: Vec<StyledRun>) {
        if self.full() {
            return;
        }
        let height = height.min(BOTTOM - TOP);
        if self.y + height > BOTTOM {
            if self.col + 1 < self.columns.len() {
                self.col += 1;
                self.y = TOP;
            } else {
                self.new_page();
                if self.full() {
                    return;
                }
            }
        }
        let (x0, x1) = self.columns[self.col];
        let page = self.pages.len() - 1;
        let bbox = BBox::new(x0 + indent, self.y, x1, self.y + height);
        self.y += height + GAP;
        self.push_at(page, bbox, class, runs);
    }

    fn text_block(&mut self, class: BlockClass, runs: Vec<StyledRun>, indent: f64) {
        let (x0, x1) = self.columns[self.col];
        let chars: usize = runs.iter().map(|r| r.text.chars().count()).sum();
        let size = runs.iter().map(|r| r.size).fold(0.0, f64::max);
        let h = text_height(chars, size, x1 - x0 - indent);
        self.place(h, indent, class, runs);
    }

    /// Full-width block at the top of the current page.
    fn banner(&mut self, class: BlockClass, run: StyledRun) {
        if self.full() {
            return;
        }
        let chars = run.text.chars().count();
        let h = text_height(chars, run.size, PAGE_W - 144.0);
        let page = self.pages.len() - 1;
        self.push_at(page, BBox::new(72.0, self.y, PAGE_W - 72.0, self.y + h), class, vec![run]);
        self.y += h + GAP;
    }

    fn finish(self) -> Document {
        Document {
            pages: self.pages,
            blocks: self.blocks,
        }
    }
}

fn paragraph_runs(rng: &mut ChaCha8Rng, body: &Style, lo: usize, hi: usize) -> Vec<StyledRun> {
    let text = sentences(rng, lo, hi);
    if rng.gen_bool(0.3) {
        // lead-in words set in bold
        let cut = text.match_indices(' ').nth(1).map(|(k, _)| k + 1);
        if let Some(k) = cut {
            return vec![body.clone().bold().run(&text[..k]), body.run(&text[k..])];
        }
    }
    vec![body.run(text)]
}

fn legal(seed: u64) -> Document {
    let gray = [90, 90, 90];
    let mut b = Builder::new(seed, vec![(72.0, 540.0)], Style::new("LiberationSerif", 8.0).color(gray));
    let body = Style::new("LiberationSerif", 10.0);
    let heading = Style::new("LiberationSerif", 11.0).bold();
    let header = Style::new("LiberationSans", 8.0).color(gray).run("CONFIDENTIAL");
    b.banner(BlockClass::Header, header);
    let title = format!("{} Agreement", phrase(&mut b.rng, 2, 3));
    b.banner(BlockClass::Title, Style::new("LiberationSerif", 16.0).bold().run(title));
    let mut clause = 1;
    while !b.full() {
        let name = HEADINGS[b.rng.gen_range(0..10)];
        b.text_block(BlockClass::Section, vec![heading.run(format!("{clause}. {name}"))], 0.0);
        let paras = b.rng.gen_range(1..=2);
        for _ in 0..paras {
            let runs = paragraph_runs(&mut b.rng, &body, 2, 4);
            b.text_block(BlockClass::Paragraph, runs, 0.0);
        }
        let items = if clause == 1 { 2 } else if b.rng.gen_bool(0.5) { b.rng.gen_range(2..=4) } else { 0 };
        for k in 0..items {
            let label = (b'a' + k as u8) as char;
            let text = format!("({label}) {}", sentences(&mut b.rng, 1, 2));
            b.text_block(BlockClass::ListItem, vec![body.run(text)], 18.0);
        }
        clause += 1;
    }
    b.finish()
}

fn article(seed: u64) -> Document {
    let columns = vec![(54.0, 300.0), (312.0, 558.0)];
    let mut b = Builder::new(seed, columns, Style::new("LiberationSans", 8.0));
    let body = Style::new("NimbusRoman", 9.5);
    let heading = Style::new("LiberationSans", 11.0).bold().color([0, 51, 153]);
    let caption = Style::new("NimbusRoman", 8.5).italic();
    let title = phrase(&mut b.rng, 4, 8);
    b.banner(BlockClass::Title, Style::new("LiberationSans", 18.0).bold().run(title));
    let authors = phrase(&mut b.rng, 3, 6);
    b.banner(BlockClass::Paragraph, Style::new("NimbusRoman", 10.0).italic().run(authors));
    let (mut section, mut figure, mut table) = (1, 1, 1);
    while !b.full() {
        let name = HEADINGS[b.rng.gen_range(10..HEADINGS.len())];
        b.text_block(BlockClass::Section, vec![heading.run(format!("{section} {name}"))], 0.0);
        for _ in 0..b.rng.gen_range(1..=3) {
            let runs = paragraph_runs(&mut b.rng, &body, 2, 5);
            b.text_block(BlockClass::Paragraph, runs, 0.0);
        }
        match b.rng.gen_range(0..4) {
            0 => {
                let h = b.rng.gen_range(80.0..160.0);
                b.place(h, 0.0, BlockClass::Figure, vec![]);
                let text = format!("Figure {figure}. {}", sentence(&mut b.rng));
                b.text_block(BlockClass::Caption, vec![caption.run(text)], 0.0);
                figure += 1;
            }
            1 => {
                let text = format!("Table {table}. {}", sentence(&mut b.rng));
                b.text_block(BlockClass::Caption, vec![caption.run(text)], 0.0);
                add_table(&mut b, &body);
                table += 1;
            }
            _ => {}
        }
        section += 1;
    }
    b.finish()
}

/// A 2×2 table: the table box followed by its cells, nested inside it.
fn add_table(b: &mut Builder, body: &Style) {
    let before = b.blocks.len();
    b.place(60.0, 0.0, BlockClass::Table, vec![]);
    if b.blocks.len() == before {
        return;
    }
    let (page, t) = (b.blocks[before].page, b.blocks[before].bbox);
    let (w, h) = (t.width() / 2.0, t.height() / 2.0);
    for r in 0..2 {
        for c in 0..2 {
            if b.full() {
                return;
            }
            let text = if r == 0 {
                capitalize(WORDS.choose(&mut b.rng).unwrap())
            } else {
                format!("{:.1}", b.rng.gen_range(0.0..100.0))
            };
            let x = t.x0 + c as f64 * w;
            let y = t.y0 + r as f64 * h;
            let cell = BBox::new(x + 2.0, y + 2.0, x + w - 2.0, y + h - 2.0);
            b.push_at(page, cell, BlockClass::TableCell, vec![body.run(text)]);
        }
    }
}

/// Deterministic synthetic document with 10 to 60 blocks.
pub fn gen_document(seed: u64, profile: Profile) -> Document {
    match profile {
        Profile::Legal => legal(seed),
        Profile::Article => article(seed),
    }
}

/// Per-operation mutation rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MutationConfig {
    pub char_edit_rate: f64,
    pub block_split_p: f64,
    pub block_merge_p: f64,
    pub block_delete_p: f64,
    pub block_insert_p: f64,
    /// Jitter amplitude as a fraction of the page size.
    pub shift_p: f64,
    pub class_relabel_p: f64,
    pub style_change_p: f64,
    pub seed: u64,
}

impl MutationConfig {
    pub fn none(seed: u64) -> Self {
        MutationConfig {
            char_edit_rate: 0.0,
            block_split_p: 0.0,
            block_merge_p: 0.0,
            block_delete_p: 0.0,
            block_insert_p: 0.0,
            shift_p: 0.0,
            class_relabel_p: 0.0,
            style_change_p: 0.0,
            seed,
        }
    }

    /// Maps one intensity in [0, 1] onto every rate; splits and merges only
    /// when `split_merge` is set.
    pub fn from_intensity(intensity: f64, split_merge: bool, seed: u64) -> Self {
        let x = intensity.clamp(0.0, 1.0);
        let sm = if split_merge { 0.5 * x } else { 0.0 };
        MutationConfig {
            char_edit_rate: 0.25 * x,
            block_split_p: sm,
            block_merge_p: sm,
            block_delete_p: 0.25 * x,
            block_insert_p: 0.25 * x,
            shift_p: (0.1 * x).min(0.2),
            class_relabel_p: 0.25 * x,
            style_change_p: 0.5 * x,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let rates = [
            ("char_edit_rate", self.char_edit_rate),
            ("block_split_p", self.block_split_p),
            ("block_merge_p", self.block_merge_p),
            ("block_delete_p", self.block_delete_p),
            ("block_insert_p", self.block_insert_p),
            ("class_relabel_p", self.class_relabel_p),
            ("style_change_p", self.style_change_p),
        ];
        for (name, v) in rates {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("{name} must be in [0, 1], got {v}"));
            }
        }
        if !(0.0..=0.2).contains(&self.shift_p) {
            return Err(format!("shift_p must be in [0, 0.2], got {}", self.shift_p));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Origin {
    Kept(usize),
    Child(usize),
    Merged(Vec<usize>),
    Inserted,
}

struct Item {
    block: Block,
    origin: Origin,
}

const LETTERS: &[u8] = b"abcdefghijklmnopqrstuvwxyz";

fn edit_chars(rng: &mut ChaCha8Rng, text: &str, rate: f64) -> String {
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len() + 4);
    let mut remaining = chars.len();
    for &c in &chars {
        remaining -= 1;
        if !rng.gen_bool(rate) {
            out.push(c);
            continue;
        }
        let letter = LETTERS[rng.gen_range(0..LETTERS.len())] as char;
        match rng.gen_range(0..3) {
            0 => {
                out.push(letter);
                out.push(c);
            }
            // never empty a run
            1 if !out.is_empty() || remaining > 0 => {}
            _ => out.push(if letter == c { 'x' } else { letter }),
        }
    }
    out
}

fn change_style(rng: &mut ChaCha8Rng, block: &mut Block) {
    if block.runs.is_empty() {
        return;
    }
    let k = rng.gen_range(0..block.runs.len());
    let run = &mut block.runs[k];
    match rng.gen_range(0..4) {
        0 => run.bold = !run.bold,
        1 => run.italic = !run.italic,
        2 => run.size = (run.size + [-1.0, 1.0, 2.0][rng.gen_range(0..3)]).max(6.0),
        _ => run.color = [rng.gen_range(0..=160), rng.gen_range(0..=160), rng.gen_range(0..=160)],
    }
}

/// Char index just after the sentence boundary nearest the middle of `text`.
fn split_point(text: &str) -> Option<usize> {
    let chars: Vec<char> = text.chars().collect();
    let mid = chars.len() as f64 / 2.0;
    (1..chars.len())
        .filter(|&k| chars[k - 1] == ' ' && k >= 2 && matches!(chars[k - 2], '.' | '!' | '?'))
        .min_by(|&a, &b| (a as f64 - mid).abs().total_cmp(&(b as f64 - mid).abs()).then(a.cmp(&b)))
}

/// Splits runs at char offset `k`.
fn split_runs(runs: &[StyledRun], k: usize) -> (Vec<StyledRun>, Vec<StyledRun>) {
    let (mut head, mut tail) = (Vec::new(), Vec::new());
    let mut seen = 0;
    for run in runs {
        let n = run.text.chars().count();
        if seen + n <= k {
            head.push(run.clone());
        } else if seen >= k {
            tail.push(run.clone());
        } else {
            let cut = k - seen;
            let left: String = run.text.chars().take(cut).collect();
            let right: String = run.text.chars().skip(cut).collect();
            head.push(run.with_text(left));
            tail.push(run.with_text(right));
        }
        seen += n;
    }
    (head, tail)
}

fn clamp_to_page(b: BBox, page: Page) -> BBox {
    let dx = if b.x0 < 0.0 { -b.x0 } else { (page.w - b.x1).min(0.0) };
    let dy = if b.y0 < 0.0 { -b.y0 } else { (page.h - b.y1).min(0.0) };
    let moved = b.translate(dx, dy);
    BBox::new(moved.x0.max(0.0), moved.y0.max(0.0), moved.x1.min(page.w), moved.y1.min(page.h))
}

fn overlaps_horizontally(a: &BBox, b: &BBox) -> bool {
    let inter = a.x1.min(b.x1) - a.x0.max(b.x0);
    inter > 0.5 * a.width().min(b.width())
}

/// Applies, in order: class relabels, style changes, character edits,
/// splits, merges, deletions, insertions, and geometric jitter.
pub fn mutate_document(doc: &Document, cfg: &MutationConfig) -> (Document, GroundTruth) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut items: Vec<Item> = doc
        .blocks
        .iter()
        .enumerate()
        .map(|(k, b)| Item {
            block: b.clone(),
            origin: Origin::Kept(k),
        })
        .collect();

    for it in &mut items {
        if rng.gen_bool(cfg.class_relabel_p) {
            let others: Vec<BlockClass> =
                BlockClass::ALL.iter().copied().filter(|&c| c != it.block.class_label).collect();
            it.block.class_label = *others.choose(&mut rng).unwrap();
        }
    }
    for it in &mut items {
        if rng.gen_bool(cfg.style_change_p) {
            change_style(&mut rng, &mut it.block);
        }
    }
    if cfg.char_edit_rate > 0.0 {
        for it in &mut items {
            for run in &mut it.block.runs {
                run.text = edit_chars(&mut rng, &run.text, cfg.char_edit_rate);
            }
        }
    }

    let mut split = Vec::with_capacity(items.len());
    for it in items {
        let point = split_point(&it.block.text());
        match (point, rng.gen_bool(cfg.block_split_p)) {
            (Some(k), true) => {
                let Origin::Kept(src) = it.origin else { unreachable!() };
                let total = it.block.char_count() as f64;
                let (head, tail) = split_runs(&it.block.runs, k);
                let bb = it.block.bbox;
                let cut = bb.y0 + bb.height() * k as f64 / total;
                for (n, (runs, y0, y1)) in [(head, bb.y0, cut), (tail, cut, bb.y1)].into_iter().enumerate() {
                    split.push(Item {
                        block: Block {
                            id: format!("{}-s{}", it.block.id, n + 1),
                            bbox: BBox::new(bb.x0, y0, bb.x1, y1),
                            runs,
                            ..it.block.clone()
                        },
                        origin: Origin::Child(src),
                    });
                }
            }
            _ => split.push(it),
        }
    }

    let mut merged: Vec<Item> = Vec::with_capacity(split.len());
    let mut iter = split.into_iter().peekable();
    while let Some(it) = iter.next() {
        let mergeable = |a: &Item, b: &Item| {
            matches!((&a.origin, &b.origin), (Origin::Kept(_), Origin::Kept(_)))
                && a.block.class_label == b.block.class_label
                && a.block.page == b.block.page
                && !a.block.runs.is_empty()
                && !b.block.runs.is_empty()
                && overlaps_horizontally(&a.block.bbox, &b.block.bbox)
                && (-2.0..=40.0).contains(&(b.block.bbox.y0 - a.block.bbox.y1))
        };
        let take = match iter.peek() {
            Some(next) if mergeable(&it, next) => rng.gen_bool(cfg.block_merge_p),
            _ => false,
        };
        if take {
            let next = iter.next().unwrap();
            let (Origin::Kept(a), Origin::Kept(b)) = (&it.origin, &next.origin) else { unreachable!() };
            let mut runs = it.block.runs.clone();
            runs.extend(next.block.runs.iter().cloned());
            merged.push(Item {
                block: Block {
                    id: format!("{}-m", it.block.id),
                    bbox: it.block.bbox.union(&next.block.bbox),
                    runs,
                    ..it.block.clone()
                },
                origin: Origin::Merged(vec![*a, *b]),
            });
        } else {
            merged.push(it);
        }
    }

    let mut kept: Vec<Item> = Vec::with_capacity(merged.len());
    let total = merged.len();
    for (k, it) in merged.into_iter().enumerate() {
        let last_chance = kept.is_empty() && k + 1 == total;
        let deletable = matches!(it.origin, Origin::Kept(_)) && !last_chance;
        if !(deletable && rng.gen_bool(cfg.block_delete_p)) {
            kept.push(it);
        }
    }

    let mut inserted = 0;
    let mut k = 0;
    while k < kept.len() {
        if rng.gen_bool(cfg.block_insert_p) {
            let anchor = kept[k].block.clone();
            let page = doc.pages[anchor.page];
            let style = anchor
                .runs
                .first()
                .cloned()
                .unwrap_or_else(|| StyledRun::plain("x", "LiberationSerif", 10.0));
            let text = sentences(&mut rng, 1, 2);
            let h = text_height(text.chars().count(), style.size, anchor.bbox.width());
            let bbox = BBox::new(anchor.bbox.x0, anchor.bbox.y1 + GAP, anchor.bbox.x1, anchor.bbox.y1 + GAP + h);
            for later in kept.iter_mut().skip(k + 1) {
                let b = &mut later.block;
                if b.page == anchor.page && b.bbox.y0 >= anchor.bbox.y1 && overlaps_horizontally(&b.bbox, &bbox) {
                    b.bbox = clamp_to_page(b.bbox.translate(0.0, h + GAP), page);
                }
            }
            let block = Block {
                id: format!("n{inserted}"),
                page: anchor.page,
                bbox: clamp_to_page(bbox, page),
                class_label: BlockClass::Paragraph,
                runs: vec![style.with_text(text)],
            };
            inserted += 1;
            kept.insert(
                k + 1,
                Item {
                    block,
                    origin: Origin::Inserted,
                },
            );
            k += 1;
        }
        k += 1;
    }

    if cfg.shift_p > 0.0 {
        for it in &mut kept {
            let page = doc.pages[it.block.page];
            let dx = rng.gen_range(-1.0..=1.0) * cfg.shift_p * page.w;
            let dy = rng.gen_range(-1.0..=1.0) * cfg.shift_p * page.h;
            it.block.bbox = clamp_to_page(it.block.bbox.translate(dx, dy), page);
        }
    }

    let gt = ground_truth(doc, &kept);
    let out = Document {
        pages: doc.pages.clone(),
        blocks: kept.into_iter().map(|it| it.block).collect(),
    };
    (out, gt)
}

fn ground_truth(doc: &Document, items: &[Item]) -> GroundTruth {
    let mut gt = GroundTruth::default();
    let mut present = vec![false; doc.blocks.len()];
    let mut children: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for it in items {
        let id = it.block.id.clone();
        match &it.origin {
            Origin::Kept(k) => {
                present[*k] = true;
                gt.pairs.push(MatchedPair {
                    source: doc.blocks[*k].id.clone(),
                    target: id,
                    score: 1.0,
                });
            }
            Origin::Child(k) => {
                present[*k] = true;
                children.entry(*k).or_default().push(id);
            }
            Origin::Merged(srcs) => {
                srcs.iter().for_each(|&k| present[k] = true);
                gt.merges.push(Merge {
                    sources: srcs.iter().map(|&k| doc.blocks[k].id.clone()).collect(),
                    target: id,
                    score: 1.0,
                });
            }
            Origin::Inserted => gt.inserted.push(id),
        }
    }
    for (k, targets) in children {
        gt.splits.push(Split {
            source: doc.blocks[k].id.clone(),
            targets,
            score: 1.0,
        });
    }
    gt.deleted = (0..doc.blocks.len())
        .filter(|&k| !present[k])
        .map(|k| doc.blocks[k].id.clone())
        .collect();
    gt.canonicalize();
    gt
}

/// A pair whose duplicated blocks share identical text and style, so only
/// geometry tells them apart; the duplicates' positions in the second file are
/// shuffled. Returns the pair, its ground truth, and the duplicated ids.
pub fn ambiguity_pair(seed: u64) -> (Document, Document, GroundTruth, Vec<String>) {
    let profile = if seed.is_multiple_of(2) { Profile::Legal } else { Profile::Article };
    let mut doc = gen_document(seed, profile);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_a1b1);
    let paragraphs: Vec<usize> = (0..doc.blocks.len())
        .filter(|&k| doc.blocks[k].class_label == BlockClass::Paragraph && !doc.blocks[k].runs.is_empty())
        .collect();
    let mut dups = Vec::new();
    if paragraphs.len() >= 2 {
        let size = rng.gen_range(2..=paragraphs.len().min(4));
        let group: Vec<usize> = paragraphs.choose_multiple(&mut rng, size).copied().collect();
        let runs = doc.blocks[group[0]].runs.clone();
        for &k in &group {
            doc.blocks[k].runs = runs.clone();
            dups.push(doc.blocks[k].id.clone());
        }
    }
    let cfg = MutationConfig {
        block_insert_p: 0.05,
        shift_p: 0.005,
        ..MutationConfig::none(seed ^ 0xa4b1_9017)
    };
    let (mut mutated, gt) = mutate_document(&doc, &cfg);
    let slots: Vec<usize> = (0..mutated.blocks.len())
        .filter(|&k| dups.contains(&mutated.blocks[k].id))
        .collect();
    let mut order = slots.clone();
    order.shuffle(&mut rng);
    let moved: Vec<Block> = order.iter().map(|&k| mutated.blocks[k].clone()).collect();
    for (&slot, block) in slots.iter().zip(moved) {
        mutated.blocks[slot] = block;
    }
    dups.sort();
    (doc, mutated, gt, dups)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::doc::{load_document, save_document};

    fn ids(d: &Document) -> Vec<&str> {
        d.blocks.iter().map(|b| b.id.as_str()).collect()
    }

    #[test]
    fn generation_is_deterministic_and_valid() {
        for profile in [Profile::Legal, Profile::Article] {
            let a = gen_document(1, profile);
            assert_eq!(a, gen_document(1, profile));
            a.validate().unwrap();
        }
    }

    #[test]
    fn legal_has_sections_and_items() {
        for seed in 0..20 {
            let d = gen_document(seed, Profile::Legal);
            assert!(d.blocks.iter().any(|b| b.class_label == BlockClass::ListItem));
            assert!(d.blocks.iter().any(|b| b.class_label == BlockClass::Section));
        }
    }

    #[test]
    fn block_counts_in_range() {
        for seed in 0..1000 {
            for profile in [Profile::Legal, Profile::Article] {
                let d = gen_document(seed, profile);
                assert!((MIN_BLOCKS..=MAX_BLOCKS).contains(&d.blocks.len()), "{seed} {profile}");
            }
        }
    }

    #[test]
    fn fifty_block_round_trip() {
        let d = (0..)
            .map(|s| gen_document(7 + s, Profile::Article))
            .find(|d| d.blocks.len() >= 50)
            .unwrap();
        assert_eq!(load_document(&save_document(&d)).unwrap(), d);
    }

    #[test]
    fn zero_rates_are_identity() {
        let d = gen_document(3, Profile::Article);
        let (m, gt) = mutate_document(&d, &MutationConfig::none(9));
        assert_eq!(m, d);
        assert_eq!(gt, MatchSet::identity(&ids(&d)));
    }

    #[test]
    fn split_children_partition_parent() {
        let run = StyledRun::plain("First sentence here. Second one follows.", "LiberationSerif", 10.0);
        let d = Document {
            pages: vec![Page { w: PAGE_W, h: PAGE_H }],
            blocks: vec![Block {
                id: "p".into(),
                page: 0,
                bbox: BBox::new(72.0, 100.0, 540.0, 140.0),
                class_label: BlockClass::Paragraph,
                runs: vec![run],
            }],
        };
        let cfg = MutationConfig {
            block_split_p: 1.0,
            ..MutationConfig::none(1)
        };
        let (m, gt) = mutate_document(&d, &cfg);
        assert_eq!(m.blocks.len(), 2);
        assert_eq!(m.blocks[0].text(), "First sentence here. ");
        assert_eq!(m.blocks[0].text() + &m.blocks[1].text(), d.blocks[0].text());
        assert_eq!(m.blocks[0].bbox.y1, m.blocks[1].bbox.y0);
        assert_eq!(gt.splits.len(), 1);
        assert_eq!(gt.splits[0].targets, vec!["p-s1", "p-s2"]);
    }

    #[test]
    fn mutation_is_deterministic_and_consistent() {
        for seed in 0..60 {
            let d = gen_document(seed, if seed % 2 == 0 { Profile::Legal } else { Profile::Article });
            let cfg = MutationConfig::from_intensity(0.4, true, seed + 100);
            let (m, gt) = mutate_document(&d, &cfg);
            assert_eq!((m.clone(), gt.clone()), mutate_document(&d, &cfg));
            m.validate().unwrap();
            gt.check_partition(&ids(&d), &ids(&m)).unwrap();
        }
    }

    #[test]
    fn split_and_merge_texts_concatenate() {
        let mut splits = 0;
        let mut merges = 0;
        for seed in 0..60 {
            let d = gen_document(seed, if seed % 2 == 0 { Profile::Legal } else { Profile::Article });
            let cfg = MutationConfig {
                char_edit_rate: 0.0,
                ..MutationConfig::from_intensity(0.6, true, seed)
            };
            let (m, gt) = mutate_document(&d, &cfg);
            for s in &gt.splits {
                let joined: String = s.targets.iter().map(|t| m.block(t).unwrap().text()).collect();
                assert_eq!(joined, d.block(&s.source).unwrap().text());
                splits += 1;
            }
            for mg in &gt.merges {
                let joined: String = mg.sources.iter().map(|s| d.block(s).unwrap().text()).collect();
                assert_eq!(joined, m.block(&mg.target).unwrap().text());
                merges += 1;
            }
        }
        assert!(splits > 10 && merges > 10, "{splits} {merges}");
    }

    #[test]
    fn ambiguity_pairs_have_duplicates() {
        for seed in 0..10 {
            let (a, b, gt, dups) = ambiguity_pair(seed);
            assert!(dups.len() >= 2);
            let texts: Vec<String> = dups.iter().map(|id| a.block(id).unwrap().text()).collect();
            assert!(texts.windows(2).all(|w| w[0] == w[1]));
            gt.check_partition(&ids(&a), &ids(&b)).unwrap();
            b.validate().unwrap();
        }
    }
}
