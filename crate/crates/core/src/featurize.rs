//! Per-node and per-edge numeric features of a layout graph.

use crate::doc::{BBox, Block, BlockClass, StyledRun};

pub const GEOMETRIC_DIM: usize = 5;
pub const EDGE_DIM: usize = 7;
pub const VISUAL_DIM: usize = 18;
pub const SEMANTIC_DIM: usize = 11;
pub const FONT_BUCKETS: usize = 8;
/// Width of the font-style bit vector: family buckets, then italic, then bold.
pub const STYLE_BITS: usize = FONT_BUCKETS + 2;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// `[x/w, y/h, w_i/w, h_i/h, sqrt(w_i h_i)/(w h)]` for a block on a `w`×`h` page.
pub fn geometric_feature(bbox: &BBox, page_w: f64, page_h: f64) -> [f64; GEOMETRIC_DIM] {
    let (cx, cy) = bbox.center();
    let (bw, bh) = (bbox.width(), bbox.height());
    let area_scale = (bw * bh).sqrt();
    [
        cx / page_w,
        cy / page_h,
        bw / page_w,
        bh / page_h,
        area_scale / (page_w * page_h),
    ]
}

/// Intersection over union; 0 for disjoint boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x1.min(b.x1) - a.x0.max(b.x0)).max(0.0);
    let ih = (a.y1.min(b.y1) - a.y0.max(b.y0)).max(0.0);
    let inter = iw * ih;
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Pairwise relation vector from box `a` (source) to box `b` (target):
/// `[iou, w_b/w_a, h_b/h_a, dist/diag, dx/A_a, dy/A_a, atan2(dy, dx)]`
/// with `dx = x_b - x_a` and `atan2(0, 0) = 0`.
pub fn edge_feature(a: &BBox, b: &BBox, page_w: f64, page_h: f64) -> [f64; EDGE_DIM] {
    let (xa, ya) = a.center();
    let (xb, yb) = b.center();
    let dx = xb - xa;
    let dy = yb - ya;
    let area_scale = (a.width() * a.height()).sqrt();
    let diag = (page_w * page_w + page_h * page_h).sqrt();
    let theta = if dx == 0.0 && dy == 0.0 { 0.0 } else { dy.atan2(dx) };
    [
        iou(a, b),
        b.width() / a.width(),
        b.height() / a.height(),
        (dx * dx + dy * dy).sqrt() / diag,
        dx / area_scale,
        dy / area_scale,
        theta,
    ]
}

/// Full-range BT.601 conversion, clamped to [0, 255].
pub fn rgb_to_ycbcr(rgb: [u8; 3]) -> [f64; 3] {
    let [r, g, b] = rgb.map(f64::from);
    let y = 0.299 * r + 0.587 * g + 0.114 * b;
    let cb = 128.0 - 0.168736 * r - 0.331264 * g + 0.5 * b;
    let cr = 128.0 + 0.5 * r - 0.418688 * g - 0.081312 * b;
    [y, cb, cr].map(|v| v.clamp(0.0, 255.0))
}

/// Averages Cb/Cr over adjacent pairs of a 1-D sequence; an odd tail keeps its own chroma.
pub fn chroma_subsample(seq: &[[f64; 3]]) -> Vec<[f64; 3]> {
    let mut out = seq.to_vec();
    for pair in out.chunks_mut(2) {
        if let [a, b] = pair {
            let cb = (a[1] + b[1]) / 2.0;
            let cr = (a[2] + b[2]) / 2.0;
            a[1] = cb;
            b[1] = cb;
            a[2] = cr;
            b[2] = cr;
        }
    }
    out
}

pub fn style_code(bold: bool, italic: bool) -> u8 {
    2 * bold as u8 + italic as u8
}

/// Per-character 3×N matrix: style code, size, luma.
#[derive(Debug, Clone, PartialEq)]
pub struct VisualSequence {
    pub style: Vec<f64>,
    pub size: Vec<f64>,
    pub luma: Vec<f64>,
}

impl VisualSequence {
    pub fn len(&self) -> usize {
        self.style.len()
    }

    pub fn is_empty(&self) -> bool {
        self.style.is_empty()
    }

    pub fn column(&self, i: usize) -> [f64; 3] {
        [self.style[i], self.size[i], self.luma[i]]
    }
}

fn char_runs(block: &Block) -> impl Iterator<Item = &StyledRun> {
    block
        .runs
        .iter()
        .flat_map(|run| std::iter::repeat_n(run, run.text.chars().count()))
}

pub fn visual_sequence(block: &Block) -> VisualSequence {
    let mut seq = VisualSequence {
        style: Vec::new(),
        size: Vec::new(),
        luma: Vec::new(),
    };
    for run in char_runs(block) {
        seq.style.push(style_code(run.bold, run.italic) as f64);
        seq.size.push(run.size);
        seq.luma.push(rgb_to_ycbcr(run.color)[0]);
    }
    seq
}

pub fn font_bucket(family: &str) -> usize {
    (fnv1a(family.as_bytes()) % FONT_BUCKETS as u64) as usize
}

/// Bit layout: one-hot family bucket (8 bits), then italic, then bold.
pub fn font_style_encoding(family: &str, bold: bool, italic: bool) -> [u8; STYLE_BITS] {
    let mut bits = [0u8; STYLE_BITS];
    bits[font_bucket(family)] = 1;
    bits[FONT_BUCKETS] = italic as u8;
    bits[FONT_BUCKETS + 1] = bold as u8;
    bits
}

/// Splits a PostScript-style name such as `LiberationSans-BoldItalic`
/// into `(family, bold, italic)`.
pub fn parse_font_name(name: &str) -> (String, bool, bool) {
    let name = name.trim_start_matches('/');
    match name.rsplit_once('-') {
        Some((family, style)) => {
            let lower = style.to_ascii_lowercase();
            let bold = lower.contains("bold");
            let italic = lower.contains("italic") || lower.contains("oblique");
            if bold || italic || lower == "regular" {
                (family.to_string(), bold, italic)
            } else {
                (name.to_string(), false, false)
            }
        }
        None => (name.to_string(), false, false),
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.max(0.0).sqrt())
}

/// Fixed-width summary of a block's visual sequence:
/// `[bold frac, italic frac] ++ font histogram(8) ++ [size mean, size std]/page_h
///  ++ [Y mean, Y std, Cb mean, Cb std, Cr mean, Cr std]/255`.
pub fn pool_visual(block: &Block, page_h: f64) -> [f64; VISUAL_DIM] {
    let mut out = [0.0; VISUAL_DIM];
    let runs: Vec<&StyledRun> = char_runs(block).collect();
    if runs.is_empty() {
        return out;
    }
    let n = runs.len() as f64;
    out[0] = runs.iter().filter(|r| r.bold).count() as f64 / n;
    out[1] = runs.iter().filter(|r| r.italic).count() as f64 / n;
    let mut counts = [0usize; FONT_BUCKETS];
    for run in &runs {
        counts[font_bucket(&run.font_family)] += 1;
    }
    for (slot, c) in out[2..2 + FONT_BUCKETS].iter_mut().zip(counts) {
        *slot = c as f64 / n;
    }
    let sizes: Vec<f64> = runs.iter().map(|r| r.size).collect();
    let (sm, ss) = mean_std(&sizes);
    out[10] = sm / page_h;
    out[11] = ss / page_h;

    let colors = chroma_subsample(&runs.iter().map(|r| rgb_to_ycbcr(r.color)).collect::<Vec<_>>());
    for ch in 0..3 {
        let channel: Vec<f64> = colors.iter().map(|c| c[ch]).collect();
        let (m, s) = mean_std(&channel);
        out[12 + 2 * ch] = m / 255.0;
        out[13 + 2 * ch] = s / 255.0;
    }
    out
}

pub fn semantic_onehot(class: BlockClass) -> [f64; SEMANTIC_DIM] {
    let mut v = [0.0; SEMANTIC_DIM];
    v[class.index()] = 1.0;
    v
}

/// Same as [`semantic_onehot`] for a raw label; unknown labels map to `other`.
pub fn semantic_onehot_label(label: &str) -> [f64; SEMANTIC_DIM] {
    semantic_onehot(BlockClass::from_label(label))
}
