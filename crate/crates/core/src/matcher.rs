//! Iterative cross-graph matching and discretization of the soft
//! correspondence into match decisions.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::doc::Document;
use crate::encoder::{build_graph, intra_weights, LayoutGraph, NodeForward, RelationForward};
use crate::nn::ops::{
    gconv_cross, gconv_cross_backward, gconv_intra, gconv_intra_backward, CrossCache,
    CrossWeights, IntraCache,
};
use crate::nn::{hungarian, Adjacency, Grads, Model, NnError, SlackSinkhorn, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatchMode {
    #[serde(rename = "one2one")]
    OneToOne,
    #[serde(rename = "many2many")]
    ManyToMany,
}

impl FromStr for MatchMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "one2one" => Ok(MatchMode::OneToOne),
            "many2many" => Ok(MatchMode::ManyToMany),
            other => Err(format!("unknown match mode {other:?} (expected one2one or many2many)")),
        }
    }
}

impl fmt::Display for MatchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MatchMode::OneToOne => "one2one",
            MatchMode::ManyToMany => "many2many",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MatchOptions {
    /// Number of cross-graph iterations `K`.
    pub iterations: usize,
    pub tau: f64,
    pub sinkhorn_iters: usize,
    /// Minimum correspondence mass for any kept cell.
    pub theta: f64,
    /// Relative threshold against the row and column maxima (many2many).
    pub alpha: f64,
    pub mode: MatchMode,
}

impl Default for MatchOptions {
    fn default() -> Self {
        MatchOptions {
            iterations: 2,
            tau: 0.05,
            sinkhorn_iters: 50,
            theta: 0.1,
            alpha: 0.5,
            mode: MatchMode::OneToOne,
        }
    }
}

impl MatchOptions {
    /// Defaults with `K`, `τ`, and Sinkhorn iterations taken from the model file.
    pub fn from_model(model: &Model) -> Self {
        MatchOptions {
            iterations: model.hyper.iterations,
            tau: model.hyper.tau,
            sinkhorn_iters: model.hyper.sinkhorn_iters,
            ..Default::default()
        }
    }

    pub fn with_mode(mut self, mode: MatchMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.iterations == 0 {
            return Err("K must be at least 1".into());
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(format!("tau must be positive, got {}", self.tau));
        }
        if self.sinkhorn_iters == 0 {
            return Err("Sinkhorn iterations must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(format!("theta must lie in [0, 1], got {}", self.theta));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum MatchError {
    #[error("nothing to match: {0} graph is empty")]
    Empty(&'static str),
    #[error("invalid match options: {0}")]
    Options(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// `(n1+1)×(n2+1)` soft correspondence; the last row and column are slack.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftCorrespondence {
    matrix: Tensor,
}

impl SoftCorrespondence {
    pub fn new(matrix: Tensor) -> Self {
        assert!(matrix.rows() >= 1 && matrix.cols() >= 1, "padded correspondence");
        SoftCorrespondence { matrix }
    }

    pub fn matrix(&self) -> &Tensor {
        &self.matrix
    }

    pub fn n1(&self) -> usize {
        self.matrix.rows() - 1
    }

    pub fn n2(&self) -> usize {
        self.matrix.cols() - 1
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.matrix.at(i, j)
    }

    /// Largest deviation from 1 of any real row or column sum.
    pub fn feasibility_error(&self) -> f64 {
        let (n1, n2) = (self.n1(), self.n2());
        let rows = (0..n1).map(|i| (self.matrix.row(i).iter().sum::<f64>() - 1.0).abs());
        let cols = (0..n2).map(|j| ((0..=n1).map(|i| self.at(i, j)).sum::<f64>() - 1.0).abs());
        rows.chain(cols).fold(0.0, f64::max)
    }

    pub fn transpose(&self) -> SoftCorrespondence {
        SoftCorrespondence::new(self.matrix.transpose())
    }
}

struct Side {
    nodes: NodeForward,
    rel: RelationForward,
    adj: Adjacency,
    h1: IntraCache,
}

impl Side {
    fn new(graph: &LayoutGraph, model: &Model) -> Result<Self, NnError> {
        let nodes = NodeForward::new(graph.inputs(), graph.include_semantic, model)?;
        let rel = RelationForward::new(graph.relations(), model)?;
        let adj = graph.adjacency();
        let h1 = gconv_intra(&adj, nodes.output(), rel.output(), &intra_weights(model, "intra1"))?;
        Ok(Side { nodes, rel, adj, h1 })
    }
}

struct Step {
    s_in: Tensor,
    s_in_t: Tensor,
    cross_a: CrossCache,
    cross_b: CrossCache,
    intra_a: IntraCache,
    intra_b: IntraCache,
    sink: SlackSinkhorn,
}

fn cross_weights(model: &Model) -> CrossWeights<'_> {
    CrossWeights {
        w_self: model.get("cross.self"),
        w_cross: model.get("cross.other"),
        bias: model.get("cross.b"),
    }
}

/// Forward pass of the matcher with every intermediate kept for backward.
pub struct MatchForward {
    a: Side,
    b: Side,
    steps: Vec<Step>,
    scale: f64,
    output: SoftCorrespondence,
}

impl MatchForward {
    pub fn new(
        g1: &LayoutGraph,
        g2: &LayoutGraph,
        model: &Model,
        opts: &MatchOptions,
    ) -> Result<Self, MatchError> {
        if g1.is_empty() {
            return Err(MatchError::Empty("first"));
        }
        if g2.is_empty() {
            return Err(MatchError::Empty("second"));
        }
        opts.validate().map_err(MatchError::Options)?;
        let a = Side::new(g1, model)?;
        let b = Side::new(g2, model)?;
        let (n1, n2) = (g1.len(), g2.len());
        let scale = 1.0 / (model.hyper.dim_hidden as f64).sqrt();
        let slack = model.get("match.slack").data()[0];
        let wc = cross_weights(model);
        let w2 = intra_weights(model, "intra2");
        let mut s = Tensor::zeros(&[n1, n2]);
        let mut steps = Vec::with_capacity(opts.iterations);
        for _ in 0..opts.iterations {
            let s_t = s.transpose();
            let cross_a = gconv_cross(&s, a.h1.output(), b.h1.output(), &wc)?;
            let cross_b = gconv_cross(&s_t, b.h1.output(), a.h1.output(), &wc)?;
            let intra_a = gconv_intra(&a.adj, cross_a.output(), a.rel.output(), &w2)?;
            let intra_b = gconv_intra(&b.adj, cross_b.output(), b.rel.output(), &w2)?;
            let mut m = intra_a.output().matmul_nt(intra_b.output())?;
            m.scale(scale);
            let sink = SlackSinkhorn::forward(&m, slack, opts.tau, opts.sinkhorn_iters)?;
            let next = sink.real_part();
            steps.push(Step {
                s_in: s,
                s_in_t: s_t,
                cross_a,
                cross_b,
                intra_a,
                intra_b,
                sink,
            });
            s = next;
        }
        let output = SoftCorrespondence::new(steps.last().expect("K ≥ 1").sink.correspondence().clone());
        Ok(MatchForward {
            a,
            b,
            steps,
            scale,
            output,
        })
    }

    pub fn output(&self) -> &SoftCorrespondence {
        &self.output
    }

    /// Padded correspondence after each of the `K` iterations.
    pub fn iteration_outputs(&self) -> Vec<SoftCorrespondence> {
        self.steps
            .iter()
            .map(|s| SoftCorrespondence::new(s.sink.correspondence().clone()))
            .collect()
    }

    /// Parameter gradients given the gradient of the final padded correspondence.
    pub fn backward(&self, model: &Model, dcorr: &Tensor) -> Result<Grads, NnError> {
        let mut grads = Grads::for_model(model);
        let wc = cross_weights(model);
        let w1 = intra_weights(model, "intra1");
        let w2 = intra_weights(model, "intra2");
        let mut dh1_a = Tensor::zeros(self.a.h1.output().shape());
        let mut dh1_b = Tensor::zeros(self.b.h1.output().shape());
        let mut dr_a = Tensor::zeros(self.a.rel.output().shape());
        let mut dr_b = Tensor::zeros(self.b.rel.output().shape());
        let mut carry: Option<Tensor> = None;
        for (k, step) in self.steps.iter().enumerate().rev() {
            let (mut dm, dslack) = match carry.take() {
                None => step.sink.backward(dcorr),
                Some(ds) => step.sink.backward_real(&ds),
            };
            grads.add_scalar(model.id("match.slack"), dslack);
            dm.scale(self.scale);
            let (h3a, h3b) = (step.intra_a.output(), step.intra_b.output());
            let dh3a = dm.matmul(h3b)?;
            let dh3b = dm.matmul_tn(h3a)?;

            let ga = gconv_intra_backward(&self.a.adj, step.cross_a.output(), &w2, &step.intra_a, &dh3a)?;
            let gb = gconv_intra_backward(&self.b.adj, step.cross_b.output(), &w2, &step.intra_b, &dh3b)?;
            for g in [&ga, &gb] {
                grads.add(model.id("intra2.self"), &g.dw_self);
                grads.add(model.id("intra2.msg"), &g.dw_msg);
                grads.add(model.id("intra2.b"), &g.db);
            }
            dr_a.add_assign(&ga.dr)?;
            dr_b.add_assign(&gb.dr)?;

            let (h1a, h1b) = (self.a.h1.output(), self.b.h1.output());
            let ca = gconv_cross_backward(&step.s_in, h1a, h1b, &wc, &step.cross_a, &ga.dh)?;
            let cb = gconv_cross_backward(&step.s_in_t, h1b, h1a, &wc, &step.cross_b, &gb.dh)?;
            for g in [&ca, &cb] {
                grads.add(model.id("cross.self"), &g.dw_self);
                grads.add(model.id("cross.other"), &g.dw_cross);
                grads.add(model.id("cross.b"), &g.db);
            }
            dh1_a.add_assign(&ca.dh_self)?;
            dh1_a.add_assign(&cb.dh_other)?;
            dh1_b.add_assign(&ca.dh_other)?;
            dh1_b.add_assign(&cb.dh_self)?;
            if k > 0 {
                let mut ds = ca.ds;
                ds.add_assign(&cb.ds.transpose())?;
                carry = Some(ds);
            }
        }
        for (side, dh1, mut dr) in [(&self.a, dh1_a, dr_a), (&self.b, dh1_b, dr_b)] {
            let g = gconv_intra_backward(&side.adj, side.nodes.output(), &w1, &side.h1, &dh1)?;
            grads.add(model.id("intra1.self"), &g.dw_self);
            grads.add(model.id("intra1.msg"), &g.dw_msg);
            grads.add(model.id("intra1.b"), &g.db);
            dr.add_assign(&g.dr)?;
            side.rel.backward(model, &dr, &mut grads)?;
            side.nodes.backward(model, &g.dh, &mut grads)?;
        }
        Ok(grads)
    }
}

/// Runs the iterative cross-graph matcher and returns the final padded correspondence.
pub fn match_graphs(
    g1: &LayoutGraph,
    g2: &LayoutGraph,
    model: &Model,
    opts: &MatchOptions,
) -> Result<SoftCorrespondence, MatchError> {
    Ok(MatchForward::new(g1, g2, model, opts)?.output)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub source: String,
    pub target: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub source: String,
    pub targets: Vec<String>,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub sources: Vec<String>,
    pub target: String,
    pub score: f64,
}

/// Block-level decisions between a first and a second document.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MatchSet {
    pub pairs: Vec<MatchedPair>,
    pub splits: Vec<Split>,
    pub merges: Vec<Merge>,
    pub deleted: Vec<String>,
    pub inserted: Vec<String>,
}

impl MatchSet {
    /// Sorts every category by block id.
    pub fn canonicalize(&mut self) {
        self.pairs
            .sort_by(|a, b| (&a.source, &a.target).cmp(&(&b.source, &b.target)));
        for s in &mut self.splits {
            s.targets.sort();
        }
        self.splits.sort_by(|a, b| a.source.cmp(&b.source));
        for m in &mut self.merges {
            m.sources.sort();
        }
        self.merges.sort_by(|a, b| a.target.cmp(&b.target));
        self.deleted.sort();
        self.inserted.sort();
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
            && self.splits.is_empty()
            && self.merges.is_empty()
            && self.deleted.is_empty()
            && self.inserted.is_empty()
    }

    /// Checks that every id of both documents appears in exactly one category.
    pub fn check_partition(&self, ids1: &[&str], ids2: &[&str]) -> Result<(), String> {
        let mut first: Vec<&str> = self.pairs.iter().map(|p| p.source.as_str()).collect();
        first.extend(self.splits.iter().map(|s| s.source.as_str()));
        first.extend(self.merges.iter().flat_map(|m| m.sources.iter().map(String::as_str)));
        first.extend(self.deleted.iter().map(String::as_str));
        let mut second: Vec<&str> = self.pairs.iter().map(|p| p.target.as_str()).collect();
        second.extend(self.splits.iter().flat_map(|s| s.targets.iter().map(String::as_str)));
        second.extend(self.merges.iter().map(|m| m.target.as_str()));
        second.extend(self.inserted.iter().map(String::as_str));
        for (label, mut got, want) in [("first", first, ids1), ("second", second, ids2)] {
            let mut want = want.to_vec();
            got.sort_unstable();
            want.sort_unstable();
            if got != want {
                return Err(format!("{label} document ids are not partitioned: {got:?} vs {want:?}"));
            }
        }
        Ok(())
    }

    /// The identity decision for a document matched against itself.
    pub fn identity(ids: &[&str]) -> MatchSet {
        let mut set = MatchSet {
            pairs: ids
                .iter()
                .map(|id| MatchedPair {
                    source: id.to_string(),
                    target: id.to_string(),
                    score: 1.0,
                })
                .collect(),
            ..Default::default()
        };
        set.canonicalize();
        set
    }
}

/// Turns a soft correspondence into decisions; `ids1`/`ids2` name its real rows and columns.
pub fn discretize(
    s: &SoftCorrespondence,
    ids1: &[&str],
    ids2: &[&str],
    opts: &MatchOptions,
) -> MatchSet {
    assert_eq!((s.n1(), s.n2()), (ids1.len(), ids2.len()), "ids match correspondence");
    let mut set = match opts.mode {
        MatchMode::OneToOne => one_to_one(s, ids1, ids2, opts.theta),
        MatchMode::ManyToMany => many_to_many(s, ids1, ids2, opts.theta, opts.alpha),
    };
    set.canonicalize();
    set
}

fn one_to_one(s: &SoftCorrespondence, ids1: &[&str], ids2: &[&str], theta: f64) -> MatchSet {
    let (n1, n2) = (s.n1(), s.n2());
    let n = n1.max(n2);
    let mut cost = Tensor::zeros(&[n, n]);
    for i in 0..n1 {
        for j in 0..n2 {
            cost.set(i, j, -s.at(i, j).max(f64::MIN_POSITIVE).ln());
        }
    }
    let assignment = hungarian(&cost);
    let mut set = MatchSet::default();
    let mut used = vec![false; n2];
    for (i, &j) in assignment.iter().enumerate().take(n1) {
        let keep = j < n2 && {
            let v = s.at(i, j);
            v >= theta && v >= s.at(i, n2) && v >= s.at(n1, j)
        };
        if keep {
            used[j] = true;
            set.pairs.push(MatchedPair {
                source: ids1[i].to_string(),
                target: ids2[j].to_string(),
                score: s.at(i, j),
            });
        } else {
            set.deleted.push(ids1[i].to_string());
        }
    }
    set.inserted = (0..n2).filter(|&j| !used[j]).map(|j| ids2[j].to_string()).collect();
    set
}

fn many_to_many(
    s: &SoftCorrespondence,
    ids1: &[&str],
    ids2: &[&str],
    theta: f64,
    alpha: f64,
) -> MatchSet {
    let (n1, n2) = (s.n1(), s.n2());
    let row_max: Vec<f64> = (0..n1).map(|i| (0..=n2).map(|j| s.at(i, j)).fold(0.0, f64::max)).collect();
    let col_max: Vec<f64> = (0..n2).map(|j| (0..=n1).map(|i| s.at(i, j)).fold(0.0, f64::max)).collect();
    let mut kept: Vec<(usize, usize)> = Vec::new();
    for i in 0..n1 {
        for j in 0..n2 {
            let v = s.at(i, j);
            if v >= theta && v >= alpha * row_max[i] && v >= alpha * col_max[j] {
                kept.push((i, j));
            }
        }
    }
    // A cell shared by a multi-cell row and a multi-cell column would be both
    // a split and a merge; drop the weakest such cell until none remain.
    loop {
        let mut rc = vec![0usize; n1];
        let mut cc = vec![0usize; n2];
        for &(i, j) in &kept {
            rc[i] += 1;
            cc[j] += 1;
        }
        let weakest = kept
            .iter()
            .enumerate()
            .filter(|(_, &(i, j))| rc[i] >= 2 && cc[j] >= 2)
            .min_by(|(_, a), (_, b)| s.at(a.0, a.1).total_cmp(&s.at(b.0, b.1)))
            .map(|(k, _)| k);
        match weakest {
            Some(k) => {
                kept.remove(k);
            }
            None => break,
        }
    }
    let mut rows: Vec<Vec<usize>> = vec![Vec::new(); n1];
    let mut cols: Vec<Vec<usize>> = vec![Vec::new(); n2];
    for &(i, j) in &kept {
        rows[i].push(j);
        cols[j].push(i);
    }
    let mean = |cells: &mut dyn Iterator<Item = f64>| {
        let v: Vec<f64> = cells.collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let mut set = MatchSet::default();
    for i in 0..n1 {
        match rows[i].len() {
            0 => set.deleted.push(ids1[i].to_string()),
            1 => {
                let j = rows[i][0];
                if cols[j].len() == 1 {
                    set.pairs.push(MatchedPair {
                        source: ids1[i].to_string(),
                        target: ids2[j].to_string(),
                        score: s.at(i, j),
                    });
                }
            }
            _ => set.splits.push(Split {
                source: ids1[i].to_string(),
                targets: rows[i].iter().map(|&j| ids2[j].to_string()).collect(),
                score: mean(&mut rows[i].iter().map(|&j| s.at(i, j))),
            }),
        }
    }
    for j in 0..n2 {
        match cols[j].len() {
            0 => set.inserted.push(ids2[j].to_string()),
            1 => {}
            _ => set.merges.push(Merge {
                sources: cols[j].iter().map(|&i| ids1[i].to_string()).collect(),
                target: ids2[j].to_string(),
                score: mean(&mut cols[j].iter().map(|&i| s.at(i, j))),
            }),
        }
    }
    set
}

/// Matches two prepared graphs, handling empty sides as all-deleted or all-inserted.
pub fn match_layouts(
    g1: &LayoutGraph,
    g2: &LayoutGraph,
    model: &Model,
    opts: &MatchOptions,
) -> Result<MatchSet, MatchError> {
    opts.validate().map_err(MatchError::Options)?;
    let (ids1, ids2) = (g1.ids(), g2.ids());
    if g1.is_empty() || g2.is_empty() {
        let mut set = MatchSet {
            deleted: ids1.iter().map(|s| s.to_string()).collect(),
            inserted: ids2.iter().map(|s| s.to_string()).collect(),
            ..Default::default()
        };
        set.canonicalize();
        return Ok(set);
    }
    let s = match_graphs(g1, g2, model, opts)?;
    Ok(discretize(&s, &ids1, &ids2, opts))
}

/// Builds both layout graphs, matches them, and discretizes the result.
pub fn match_documents(
    doc1: &Document,
    doc2: &Document,
    model: &Model,
    opts: &MatchOptions,
) -> Result<MatchSet, MatchError> {
    let semantic = model.hyper.include_semantic;
    match_layouts(&build_graph(doc1, semantic), &build_graph(doc2, semantic), model, opts)
}
