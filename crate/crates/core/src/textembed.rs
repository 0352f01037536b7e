//! Text property vectors: a deterministic hashed character-trigram embedder,
//! plus loading of externally computed sentence vectors.

use std::collections::BTreeMap;

use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::featurize::fnv1a;

pub const TEXT_DIM: usize = 128;
const START: char = '\u{2402}';
const END: char = '\u{2403}';
/// Prefix mixed into the second (sign) hash.
const SIGN_SALT: &[u8] = b"sign:";

pub type TextEmbedding = [f64; TEXT_DIM];

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("line {line}: expected {TEXT_DIM} values for block {id:?}, found {found}")]
    Dimension { line: usize, id: String, found: usize },
    #[error("line {line}: non-finite or unparsable value for block {id:?}")]
    Value { line: usize, id: String },
    #[error("line {line}: missing tab after block id")]
    Format { line: usize },
}

fn l2_normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

/// Lowercase + NFC, pad with boundary markers, hash each character trigram
/// into one of 128 signed buckets, then L2-normalize. Empty text maps to zero.
pub fn embed_text(text: &str) -> TextEmbedding {
    let mut out = [0.0; TEXT_DIM];
    if text.is_empty() {
        return out;
    }
    let normalized: Vec<char> = std::iter::once(START)
        .chain(text.to_lowercase().nfc())
        .chain(std::iter::once(END))
        .collect();
    let mut buf = [0u8; 12];
    let mut salted = Vec::with_capacity(SIGN_SALT.len() + 12);
    for gram in normalized.windows(3) {
        let mut len = 0;
        for c in gram {
            len += c.encode_utf8(&mut buf[len..]).len();
        }
        let bytes = &buf[..len];
        let bucket = (fnv1a(bytes) % TEXT_DIM as u64) as usize;
        salted.clear();
        salted.extend_from_slice(SIGN_SALT);
        salted.extend_from_slice(bytes);
        let sign = if fnv1a(&salted) & 1 == 0 { 1.0 } else { -1.0 };
        out[bucket] += sign;
    }
    l2_normalize(&mut out);
    out
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

/// Precomputed text vectors keyed by block id; blocks without a row fall back
/// to [`embed_text`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExternalEmbeddings {
    vectors: BTreeMap<String, TextEmbedding>,
}

impl ExternalEmbeddings {
    pub fn get(&self, id: &str) -> Option<&TextEmbedding> {
        self.vectors.get(id)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn embed(&self, id: &str, text: &str) -> TextEmbedding {
        self.vectors.get(id).copied().unwrap_or_else(|| embed_text(text))
    }
}

/// Parses `block_id<TAB>f1 ... f128` records, one per line.
pub fn load_external_embeddings(contents: &str) -> Result<ExternalEmbeddings, EmbedError> {
    let mut vectors = BTreeMap::new();
    for (k, raw) in contents.lines().enumerate() {
        let line = k + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let (id, rest) = raw.split_once('\t').ok_or(EmbedError::Format { line })?;
        let values: Vec<&str> = rest.split_whitespace().collect();
        if values.len() != TEXT_DIM {
            return Err(EmbedError::Dimension {
                line,
                id: id.to_string(),
                found: values.len(),
            });
        }
        let mut v = [0.0; TEXT_DIM];
        for (slot, s) in v.iter_mut().zip(values) {
            *slot = s
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| EmbedError::Value {
                    line,
                    id: id.to_string(),
                })?;
        }
        l2_normalize(&mut v);
        vectors.insert(id.to_string(), v);
    }
    Ok(ExternalEmbeddings { vectors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn norm(v: &[f64]) -> f64 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    fn row(id: &str, values: &[f64]) -> String {
        let cols: Vec<String> = values.iter().map(|v| v.to_string()).collect();
        format!("{id}\t{}\n", cols.join(" "))
    }

    #[test]
    fn empty_is_zero_and_nonempty_is_unit() {
        assert_eq!(embed_text(""), [0.0; TEXT_DIM]);
        for s in ["a", "abc", "The quick brown fox", "ÄÖÜ ß"] {
            assert!((norm(&embed_text(s)) - 1.0).abs() < 1e-9, "{s}");
        }
    }

    #[test]
    fn case_folding_and_discrimination() {
        assert_eq!(embed_text("abc"), embed_text("ABC"));
        let c = cosine(&embed_text("abc"), &embed_text("abd"));
        assert!(c < 1.0, "{c}");
    }

    #[test]
    fn nfc_equivalent_forms_match() {
        assert_eq!(embed_text("caf\u{e9}"), embed_text("cafe\u{301}"));
    }

    #[test]
    fn edited_text_stays_closer_than_random_text() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let alphabet: Vec<char> = "abcdefghijklmnopqrstuvwxyz ".chars().collect();
        let mut wins = 0;
        for _ in 0..1000 {
            let len = rng.gen_range(20..80);
            let s: Vec<char> = (0..len).map(|_| alphabet[rng.gen_range(0..alphabet.len())]).collect();
            let mut edited = s.clone();
            let pos = rng.gen_range(0..len);
            let mut c = alphabet[rng.gen_range(0..alphabet.len())];
            while c == edited[pos] {
                c = alphabet[rng.gen_range(0..alphabet.len())];
            }
            edited[pos] = c;
            let random: String = (0..len).map(|_| alphabet[rng.gen_range(0..alphabet.len())]).collect();
            let s: String = s.into_iter().collect();
            let edited: String = edited.into_iter().collect();
            let base = embed_text(&s);
            if cosine(&base, &embed_text(&edited)) > cosine(&base, &embed_text(&random)) {
                wins += 1;
            }
        }
        assert!(wins >= 950, "only {wins}/1000");
    }

    #[test]
    fn external_rows() {
        let zeros = row("z", &[0.0; TEXT_DIM]);
        let mut unit = [0.0; TEXT_DIM];
        unit[3] = 1.0;
        let mut scaled = [0.0; TEXT_DIM];
        scaled[0] = 3.0;
        scaled[1] = 4.0;
        let text = format!("{zeros}{}{}", row("u", &unit), row("s", &scaled));
        let table = load_external_embeddings(&text).unwrap();
        assert_eq!(table.get("z").unwrap(), &[0.0; TEXT_DIM]);
        assert_eq!(table.get("u").unwrap(), &unit);
        let s = table.get("s").unwrap();
        assert!((s[0] - 0.6).abs() < 1e-15 && (s[1] - 0.8).abs() < 1e-15);
        assert_eq!(table.embed("missing", "abc"), embed_text("abc"));
    }

    #[test]
    fn external_dimension_error_names_row() {
        let text = row("short", &[0.5; TEXT_DIM - 1]);
        let err = load_external_embeddings(&text).unwrap_err();
        assert!(matches!(err, EmbedError::Dimension { line: 1, found: 127, .. }));
        assert!(err.to_string().contains("short"));
    }

    #[test]
    fn external_rejects_non_finite() {
        let mut values = vec!["0".to_string(); TEXT_DIM];
        values[5] = "NaN".into();
        let text = format!("bad\t{}\n", values.join(" "));
        assert!(matches!(load_external_embeddings(&text), Err(EmbedError::Value { .. })));
    }
}
