//! Corpus specification, training loop, evaluation metrics, and the greedy
//! text-similarity baseline.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::doc::Document;
use crate::encoder::{build_graph, LayoutGraph};
use crate::matcher::{
    MatchError, MatchForward, MatchMode, MatchOptions, MatchSet, MatchedPair,
};
use crate::nn::{perm_xent_loss, Adam, AdamConfig, Grads, HyperParams, Model, NnError, Tensor};
use crate::synth::{gen_document, mutate_document, GroundTruth, MutationConfig, Profile};
use crate::textembed::{cosine, embed_text};

/// Minimum text cosine for the greedy baseline to pair two blocks.
pub const GREEDY_THRESHOLD: f64 = 0.5;

fn default_profiles() -> Vec<Profile> {
    vec![Profile::Legal, Profile::Article]
}

fn default_held_out() -> usize {
    20
}

/// Which synthetic pairs to generate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub n_pairs: usize,
    #[serde(default = "default_profiles")]
    pub profiles: Vec<Profile>,
    pub intensity: Vec<f64>,
    pub seed: u64,
    /// Enables block splits and merges in the mutations.
    #[serde(default)]
    pub split_merge: bool,
    /// Pairs drawn from a disjoint seed stream for per-epoch evaluation.
    #[serde(default = "default_held_out")]
    pub held_out: usize,
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.profiles.is_empty() {
            return Err("corpus needs at least one profile".into());
        }
        if self.intensity.is_empty() {
            return Err("corpus needs at least one intensity".into());
        }
        if let Some(x) = self.intensity.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(format!("intensity {x} outside [0, 1]"));
        }
        Ok(())
    }

    /// Training pairs.
    pub fn pairs(&self) -> Vec<PairSample> {
        (0..self.n_pairs).map(|k| self.pair(k, 0)).collect()
    }

    /// Evaluation pairs, disjoint from [`CorpusSpec::pairs`].
    pub fn held_out_pairs(&self) -> Vec<PairSample> {
        (0..self.held_out).map(|k| self.pair(k, 1)).collect()
    }

    fn pair(&self, k: usize, stream: u64) -> PairSample {
        let doc_seed = mix(self.seed, stream, k as u64);
        let profile = self.profiles[k % self.profiles.len()];
        let intensity = self.intensity[(k / self.profiles.len()) % self.intensity.len()];
        let doc_a = gen_document(doc_seed, profile);
        let cfg = MutationConfig::from_intensity(intensity, self.split_merge, mix(doc_seed, 2, 0));
        let (doc_b, gt) = mutate_document(&doc_a, &cfg);
        PairSample {
            seed: doc_seed,
            profile,
            intensity,
            doc_a,
            doc_b,
            gt,
        }
    }
}

/// SplitMix64-style mixing of a base seed with a stream and an index.
fn mix(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0xd1b5_4a32_d192_ed03))
        .wrapping_add(index.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairSample {
    pub seed: u64,
    pub profile: Profile,
    pub intensity: f64,
    pub doc_a: Document,
    pub doc_b: Document,
    pub gt: GroundTruth,
}

/// Padded target correspondence: pairs get 1; a split into `m` children puts
/// `1/m` on each child cell and `1 - 1/m` on each child's slack-row cell;
/// merges mirror that on the slack column; deletions and insertions put 1 on
/// their slack cell.
pub fn target_matrix(gt: &GroundTruth, ids1: &[&str], ids2: &[&str]) -> Tensor {
    let (n1, n2) = (ids1.len(), ids2.len());
    let row = |id: &str| ids1.iter().position(|x| *x == id).expect("gt id in first document");
    let col = |id: &str| ids2.iter().position(|x| *x == id).expect("gt id in second document");
    let mut t = Tensor::zeros(&[n1 + 1, n2 + 1]);
    for p in &gt.pairs {
        t.set(row(&p.source), col(&p.target), 1.0);
    }
    for s in &gt.splits {
        let share = 1.0 / s.targets.len() as f64;
        let i = row(&s.source);
        for target in &s.targets {
            let j = col(target);
            t.set(i, j, share);
            t.set(n1, j, 1.0 - share);
        }
    }
    for m in &gt.merges {
        let share = 1.0 / m.sources.len() as f64;
        let j = col(&m.target);
        for source in &m.sources {
            let i = row(source);
            t.set(i, j, share);
            t.set(i, n2, 1.0 - share);
        }
    }
    for id in &gt.deleted {
        t.set(row(id), n2, 1.0);
    }
    for id in &gt.inserted {
        t.set(n1, col(id), 1.0);
    }
    t
}

/// A pair prepared for the network.
pub struct Prepared {
    pub seed: u64,
    pub g1: LayoutGraph,
    pub g2: LayoutGraph,
    pub target: Tensor,
    pub gt: GroundTruth,
}

pub fn prepare(samples: &[PairSample], include_semantic: bool) -> Vec<Prepared> {
    samples
        .iter()
        .map(|s| {
            let g1 = build_graph(&s.doc_a, include_semantic);
            let g2 = build_graph(&s.doc_b, include_semantic);
            let target = target_matrix(&s.gt, &g1.ids(), &g2.ids());
            Prepared {
                seed: s.seed,
                g1,
                g2,
                target,
                gt: s.gt.clone(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub model_seed: u64,
    pub hyper: HyperParams,
    /// Discretization used for the held-out F1 column of the log.
    pub mode: MatchMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            lr: 3e-3,
            batch: 8,
            model_seed: 1,
            hyper: HyperParams::default(),
            mode: MatchMode::OneToOne,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub f1: f64,
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss or gradient on sample with seed {seed}")]
    NonFinite { seed: u64 },
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Match(#[from] MatchError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Loss and parameter gradients for one prepared pair.
pub fn sample_gradients(
    model: &Model,
    sample: &Prepared,
    opts: &MatchOptions,
) -> Result<(f64, Grads), TrainError> {
    let fwd = MatchForward::new(&sample.g1, &sample.g2, model, opts)?;
    let (loss, dcorr) = perm_xent_loss(fwd.output().matrix(), &sample.target)
        .map_err(|_| TrainError::NonFinite { seed: sample.seed })?;
    let grads = fwd.backward(model, &dcorr)?;
    if !loss.is_finite() || !grads.is_finite() {
        return Err(TrainError::NonFinite { seed: sample.seed });
    }
    Ok((loss, grads))
}

fn mean_loss(model: &Model, samples: &[Prepared], opts: &MatchOptions) -> Result<f64, TrainError> {
    let mut total = 0.0;
    for s in samples {
        let fwd = MatchForward::new(&s.g1, &s.g2, model, opts)?;
        let (loss, _) = perm_xent_loss(fwd.output().matrix(), &s.target)
            .map_err(|_| TrainError::NonFinite { seed: s.seed })?;
        total += loss;
    }
    Ok(total / samples.len().max(1) as f64)
}

/// Adam on the padded-correspondence loss. The log has one row per epoch,
/// epoch 0 being the untrained model; `loss` is the mean training loss and
/// `f1` the held-out overall F1.
pub fn train(cfg: &TrainConfig, spec: &CorpusSpec) -> Result<(Model, Vec<EpochLog>), TrainError> {
    train_with_progress(cfg, spec, |_| {})
}

pub fn train_with_progress(
    cfg: &TrainConfig,
    spec: &CorpusSpec,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<(Model, Vec<EpochLog>), TrainError> {
    spec.validate().map_err(TrainError::Config)?;
    if cfg.batch == 0 {
        return Err(TrainError::Config("batch must be at least 1".into()));
    }
    if !(cfg.lr >= 0.0) {
        return Err(TrainError::Config(format!("learning rate must be non-negative, got {}", cfg.lr)));
    }
    let mut model = Model::new(cfg.hyper, cfg.model_seed);
    let semantic = cfg.hyper.include_semantic;
    let train_set = prepare(&spec.pairs(), semantic);
    let held_out = prepare(&spec.held_out_pairs(), semantic);
    let opts = MatchOptions::from_model(&model).with_mode(cfg.mode);
    let mut adam = Adam::new(
        &model,
        AdamConfig {
            lr: cfg.lr,
            ..Default::default()
        },
    );
    let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.model_seed, 3, 0));
    let mut log = Vec::with_capacity(cfg.epochs + 1);
    let first = EpochLog {
        epoch: 0,
        loss: mean_loss(&model, &train_set, &opts)?,
        f1: evaluate_prepared(&model, &held_out, &opts)?.overall.f1,
    };
    on_epoch(&first);
    log.push(first);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch) {
            let mut grads = Grads::for_model(&model);
            for &k in batch {
                let (loss, g) = sample_gradients(&model, &train_set[k], &opts)?;
                total += loss;
                grads.accumulate(&g);
            }
            model.set_grads(&grads, 1.0 / batch.len() as f64);
            adam.step(&mut model);
        }
        let entry = EpochLog {
            epoch,
            loss: total / train_set.len().max(1) as f64,
            f1: evaluate_prepared(&model, &held_out, &opts)?.overall.f1,
        };
        on_epoch(&entry);
        log.push(entry);
    }
    model.zero_grads();
    Ok((model, log))
}

/// CSV rendering of a training log: `epoch,loss,f1`.
pub fn log_csv(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch,loss,f1\n");
    for e in log {
        out.push_str(&format!("{},{:.6},{:.6}\n", e.epoch, e.loss, e.f1));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct CategoryScore {
    pub correct: usize,
    pub predicted: usize,
    pub expected: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl CategoryScore {
    fn from_counts(correct: usize, predicted: usize, expected: usize) -> Self {
        let precision = if predicted > 0 {
            correct as f64 / predicted as f64
        } else if expected == 0 {
            1.0
        } else {
            0.0
        };
        let recall = if expected > 0 {
            correct as f64 / expected as f64
        } else if predicted == 0 {
            1.0
        } else {
            0.0
        };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        CategoryScore {
            correct,
            predicted,
            expected,
            precision,
            recall,
            f1,
        }
    }

    fn add(self, other: CategoryScore) -> Self {
        Self::from_counts(
            self.correct + other.correct,
            self.predicted + other.predicted,
            self.expected + other.expected,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Metrics {
    pub pairs: CategoryScore,
    pub splits: CategoryScore,
    pub merges: CategoryScore,
    pub deleted: CategoryScore,
    pub inserted: CategoryScore,
    /// Micro-average over all five categories.
    pub overall: CategoryScore,
}

impl Metrics {
    /// Micro-average over the split and merge categories.
    pub fn split_merge(&self) -> CategoryScore {
        self.splits.add(self.merges)
    }
}

fn count<T: PartialEq>(pred: &[T], gt: &[T]) -> (usize, usize, usize) {
    (pred.iter().filter(|p| gt.contains(p)).count(), pred.len(), gt.len())
}

/// Per-category counts: pairs match on exact ids, splits and merges on
/// set-equal ids, deletions and insertions per id.
pub fn score_counts(pred: &MatchSet, gt: &GroundTruth) -> [(usize, usize, usize); 5] {
    let pairs = |s: &MatchSet| s.pairs.iter().map(|p| (p.source.clone(), p.target.clone())).collect::<Vec<_>>();
    let splits = |s: &MatchSet| {
        s.splits
            .iter()
            .map(|x| {
                let mut t = x.targets.clone();
                t.sort();
                (x.source.clone(), t)
            })
            .collect::<Vec<_>>()
    };
    let merges = |s: &MatchSet| {
        s.merges
            .iter()
            .map(|x| {
                let mut t = x.sources.clone();
                t.sort();
                (t, x.target.clone())
            })
            .collect::<Vec<_>>()
    };
    [
        count(&pairs(pred), &pairs(gt)),
        count(&splits(pred), &splits(gt)),
        count(&merges(pred), &merges(gt)),
        count(&pred.deleted, &gt.deleted),
        count(&pred.inserted, &gt.inserted),
    ]
}

/// Aggregates per-category counts over `(prediction, ground truth)` pairs.
pub fn metrics<'a>(results: impl IntoIterator<Item = (&'a MatchSet, &'a GroundTruth)>) -> Metrics {
    let mut totals = [(0usize, 0usize, 0usize); 5];
    for (pred, gt) in results {
        for (t, c) in totals.iter_mut().zip(score_counts(pred, gt)) {
            t.0 += c.0;
            t.1 += c.1;
            t.2 += c.2;
        }
    }
    let cat = |k: usize| CategoryScore::from_counts(totals[k].0, totals[k].1, totals[k].2);
    let all = totals
        .iter()
        .fold((0, 0, 0), |a, t| (a.0 + t.0, a.1 + t.1, a.2 + t.2));
    Metrics {
        pairs: cat(0),
        splits: cat(1),
        merges: cat(2),
        deleted: cat(3),
        inserted: cat(4),
        overall: CategoryScore::from_counts(all.0, all.1, all.2),
    }
}

pub fn predict(model: &Model, sample: &Prepared, opts: &MatchOptions) -> Result<MatchSet, MatchError> {
    crate::matcher::match_layouts(&sample.g1, &sample.g2, model, opts)
}

pub fn evaluate_prepared(
    model: &Model,
    samples: &[Prepared],
    opts: &MatchOptions,
) -> Result<Metrics, MatchError> {
    let preds = samples
        .iter()
        .map(|s| predict(model, s, opts))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(metrics(preds.iter().zip(samples.iter().map(|s| &s.gt))))
}

/// Scores the model on every pair of the corpus (training stream).
pub fn evaluate(model: &Model, spec: &CorpusSpec, opts: &MatchOptions) -> Result<Metrics, MatchError> {
    let samples = prepare(&spec.pairs(), model.hyper.include_semantic);
    evaluate_prepared(model, &samples, opts)
}

/// Pairs blocks by descending text cosine (ties by first then second index),
/// each block at most once, stopping below [`GREEDY_THRESHOLD`].
pub fn greedy_text_match(doc1: &Document, doc2: &Document) -> MatchSet {
    let e1: Vec<_> = doc1.blocks.iter().map(|b| embed_text(&b.text())).collect();
    let e2: Vec<_> = doc2.blocks.iter().map(|b| embed_text(&b.text())).collect();
    let mut cands = Vec::new();
    for (i, a) in e1.iter().enumerate() {
        for (j, b) in e2.iter().enumerate() {
            let c = cosine(a, b);
            if c >= GREEDY_THRESHOLD {
                cands.push((c, i, j));
            }
        }
    }
    cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let (mut used1, mut used2) = (vec![false; e1.len()], vec![false; e2.len()]);
    let mut set = MatchSet::default();
    for (c, i, j) in cands {
        if !used1[i] && !used2[j] {
            used1[i] = true;
            used2[j] = true;
            set.pairs.push(MatchedPair {
                source: doc1.blocks[i].id.clone(),
                target: doc2.blocks[j].id.clone(),
                score: c,
            });
        }
    }
    set.deleted = (0..e1.len()).filter(|&i| !used1[i]).map(|i| doc1.blocks[i].id.clone()).collect();
    set.inserted = (0..e2.len()).filter(|&j| !used2[j]).map(|j| doc2.blocks[j].id.clone()).collect();
    set.canonicalize();
    set
}

/// Fraction of `sources` whose predicted partner equals the ground-truth one.
pub fn pair_accuracy(pred: &MatchSet, gt: &GroundTruth, sources: &[String]) -> f64 {
    if sources.is_empty() {
        return 1.0;
    }
    let partner = |set: &MatchSet, id: &str| {
        set.pairs
            .iter()
            .find(|p| p.source == id)
            .map(|p| p.target.clone())
    };
    let hits = sources
        .iter()
        .filter(|id| {
            let want = partner(gt, id);
            want.is_some() && partner(pred, id) == want
        })
        .count();
    hits as f64 / sources.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcher::{Merge, Split};

    fn spec(n: usize, split_merge: bool) -> CorpusSpec {
        CorpusSpec {
            n_pairs: n,
            profiles: default_profiles(),
            intensity: vec![0.2],
            seed: 5,
            split_merge,
            held_out: 2,
        }
    }

    #[test]
    fn corpus_spec_json_defaults() {
        let s: CorpusSpec = serde_json::from_str(r#"{"n_pairs": 3, "intensity": [0.1], "seed": 2}"#).unwrap();
        assert_eq!(s.profiles, default_profiles());
        assert!(!s.split_merge);
        assert_eq!(s.held_out, 20);
        assert!(serde_json::from_str::<CorpusSpec>(r#"{"n_pairs": 3, "profiles": ["memo"], "intensity": [0.1], "seed": 2}"#).is_err());
    }

    #[test]
    fn held_out_is_disjoint_and_deterministic() {
        let s = spec(4, false);
        let a = s.pairs();
        assert_eq!(a, s.pairs());
        let h = s.held_out_pairs();
        assert!(h.iter().all(|x| a.iter().all(|y| y.seed != x.seed)));
    }

    #[test]
    fn targets_are_feasible() {
        for sample in spec(10, true).pairs() {
            let ids1: Vec<&str> = sample.doc_a.blocks.iter().map(|b| b.id.as_str()).collect();
            let ids2: Vec<&str> = sample.doc_b.blocks.iter().map(|b| b.id.as_str()).collect();
            let t = target_matrix(&sample.gt, &ids1, &ids2);
            for i in 0..ids1.len() {
                assert!((t.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
            for j in 0..ids2.len() {
                let s: f64 = (0..=ids1.len()).map(|i| t.at(i, j)).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
            assert_eq!(t.at(ids1.len(), ids2.len()), 0.0);
        }
    }

    #[test]
    fn perfect_and_empty_predictions() {
        let gt = MatchSet {
            pairs: vec![MatchedPair { source: "a".into(), target: "x".into(), score: 1.0 }],
            splits: vec![Split { source: "b".into(), targets: vec!["y".into(), "z".into()], score: 1.0 }],
            merges: vec![Merge { sources: vec!["c".into(), "d".into()], target: "w".into(), score: 1.0 }],
            deleted: vec!["e".into()],
            inserted: vec!["v".into()],
        };
        let m = metrics([(&gt, &gt)]);
        for c in [m.pairs, m.splits, m.merges, m.deleted, m.inserted, m.overall] {
            assert_eq!(c.f1, 1.0);
        }
        let empty = MatchSet::default();
        let m = metrics([(&empty, &gt)]);
        assert_eq!(m.overall.recall, 0.0);
        assert_eq!(m.pairs.recall, 0.0);
    }

    #[test]
    fn split_order_does_not_matter() {
        let gt = MatchSet {
            splits: vec![Split { source: "b".into(), targets: vec!["y".into(), "z".into()], score: 1.0 }],
            ..Default::default()
        };
        let pred = MatchSet {
            splits: vec![Split { source: "b".into(), targets: vec!["z".into(), "y".into()], score: 0.4 }],
            ..Default::default()
        };
        assert_eq!(metrics([(&pred, &gt)]).splits.f1, 1.0);
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let cfg = TrainConfig {
            epochs: 1,
            lr: 0.0,
            batch: 2,
            ..Default::default()
        };
        let (model, log) = train(&cfg, &spec(2, false)).unwrap();
        assert_eq!(model.to_bytes(), Model::new(cfg.hyper, cfg.model_seed).to_bytes());
        assert_eq!(log.len(), 2);
    }

    #[test]
    fn greedy_baseline_on_identical_docs() {
        let d = gen_document(4, Profile::Legal);
        let set = greedy_text_match(&d, &d);
        assert!(set.deleted.is_empty() && set.inserted.is_empty());
        assert_eq!(set.pairs.len(), d.blocks.len());
    }
}
