//! Layout graphs built from documents, node embeddings, and the whole-layout
//! embedding.

use std::cmp::Ordering;

use serde::Serialize;

use crate::doc::{Block, Document};
use crate::featurize::{
    edge_feature, geometric_feature, pool_visual, semantic_onehot, EDGE_DIM, GEOMETRIC_DIM,
    SEMANTIC_DIM, VISUAL_DIM,
};
use crate::nn::ops::{
    attention_pool, gconv_intra, linear, linear_backward, relu, relu_backward, IntraWeights,
};
use crate::nn::{Adjacency, Grads, Model, NnError, Tensor};
use crate::textembed::{cosine, embed_text, TextEmbedding, TEXT_DIM};

/// Pages with at most this many blocks get a complete directed graph.
pub const COMPLETE_GRAPH_LIMIT: usize = 25;
/// Neighbor count on larger pages, before reading-order links are added.
pub const NEAREST_NEIGHBORS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GraphNode {
    pub id: String,
    pub page: usize,
    pub semantic: Vec<f64>,
    pub text: Vec<f64>,
    pub geometric: Vec<f64>,
    pub visual: Vec<f64>,
}

/// Directed edge; `source` receives messages from `target`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GraphEdge {
    pub source: usize,
    pub target: usize,
    pub weight: f64,
    pub relation: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayoutGraph {
    pub include_semantic: bool,
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<GraphEdge>,
}

/// Dense per-node inputs, one row per node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeInputs {
    pub semantic: Tensor,
    pub text: Tensor,
    pub visual: Tensor,
    pub geometric: Tensor,
}

impl LayoutGraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.nodes.iter().map(|n| n.id.as_str()).collect()
    }

    pub fn adjacency(&self) -> Adjacency {
        Adjacency {
            n: self.nodes.len(),
            edges: self.edges.iter().map(|e| (e.source, e.target)).collect(),
            weights: self.edges.iter().map(|e| e.weight).collect(),
        }
    }

    /// Edge relation vectors, one row per edge.
    pub fn relations(&self) -> Tensor {
        let data = self.edges.iter().flat_map(|e| e.relation.iter().copied()).collect();
        Tensor::matrix(self.edges.len(), EDGE_DIM, data)
    }

    pub fn inputs(&self) -> NodeInputs {
        let stack = |f: &dyn Fn(&GraphNode) -> &[f64], width: usize| {
            let data = self.nodes.iter().flat_map(|n| f(n).iter().copied()).collect();
            Tensor::matrix(self.nodes.len(), width, data)
        };
        NodeInputs {
            semantic: stack(&|n| &n.semantic, SEMANTIC_DIM),
            text: stack(&|n| &n.text, TEXT_DIM),
            visual: stack(&|n| &n.visual, VISUAL_DIM),
            geometric: stack(&|n| &n.geometric, GEOMETRIC_DIM),
        }
    }
}

/// Builds the layout graph using the built-in hashed text embedder.
pub fn build_graph(doc: &Document, include_semantic: bool) -> LayoutGraph {
    build_graph_with(doc, include_semantic, |b| embed_text(&b.text()))
}

/// Same as [`build_graph`] with a caller-supplied text embedding per block.
///
/// All pages are stacked vertically into one coordinate frame (width of the
/// widest page, total height) for the node geometry. Edges never cross pages.
pub fn build_graph_with(
    doc: &Document,
    include_semantic: bool,
    text: impl Fn(&Block) -> TextEmbedding,
) -> LayoutGraph {
    let total_w = doc.pages.iter().map(|p| p.w).fold(0.0, f64::max);
    let total_h: f64 = doc.pages.iter().map(|p| p.h).sum();
    let offsets: Vec<f64> = doc
        .pages
        .iter()
        .scan(0.0, |acc, p| {
            let here = *acc;
            *acc += p.h;
            Some(here)
        })
        .collect();

    let nodes = doc
        .blocks
        .iter()
        .map(|b| {
            let page = doc.page_of(b);
            let flat = b.bbox.translate(0.0, offsets[b.page]);
            GraphNode {
                id: b.id.clone(),
                page: b.page,
                semantic: semantic_onehot(b.class_label).to_vec(),
                text: text(b).to_vec(),
                geometric: geometric_feature(&flat, total_w, total_h).to_vec(),
                visual: pool_visual(b, page.h).to_vec(),
            }
        })
        .collect();

    let mut pairs = Vec::new();
    for p in 0..doc.pages.len() {
        let members: Vec<usize> = (0..doc.blocks.len()).filter(|&i| doc.blocks[i].page == p).collect();
        pairs.extend(page_edges(doc, &members));
    }
    pairs.sort_unstable();
    let mut degree = vec![0usize; doc.blocks.len()];
    for &(i, _) in &pairs {
        degree[i] += 1;
    }
    let edges = pairs
        .into_iter()
        .map(|(i, j)| {
            let (a, b) = (&doc.blocks[i], &doc.blocks[j]);
            let page = doc.page_of(a);
            GraphEdge {
                source: i,
                target: j,
                weight: 1.0 / degree[i] as f64,
                relation: edge_feature(&a.bbox, &b.bbox, page.w, page.h).to_vec(),
            }
        })
        .collect();
    LayoutGraph {
        include_semantic,
        nodes,
        edges,
    }
}

fn page_edges(doc: &Document, members: &[usize]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    if members.len() <= COMPLETE_GRAPH_LIMIT {
        for &i in members {
            for &j in members {
                if i != j {
                    out.push((i, j));
                }
            }
        }
        return out;
    }
    let center = |i: usize| doc.blocks[i].bbox.center();
    for (pos, &i) in members.iter().enumerate() {
        let (xi, yi) = center(i);
        let mut others: Vec<(f64, usize)> = members
            .iter()
            .filter(|&&j| j != i)
            .map(|&j| {
                let (xj, yj) = center(j);
                (((xj - xi).powi(2) + (yj - yi).powi(2)).sqrt(), j)
            })
            .collect();
        others.sort_by(|a, b| {
            a.0.partial_cmp(&b.0)
                .unwrap_or(Ordering::Equal)
                .then_with(|| doc.blocks[a.1].id.cmp(&doc.blocks[b.1].id))
        });
        let mut neighbors: Vec<usize> = others.iter().take(NEAREST_NEIGHBORS).map(|o| o.1).collect();
        if pos > 0 {
            neighbors.push(members[pos - 1]);
        }
        if pos + 1 < members.len() {
            neighbors.push(members[pos + 1]);
        }
        neighbors.sort_unstable();
        neighbors.dedup();
        out.extend(neighbors.into_iter().map(|j| (i, j)));
    }
    out
}

/// Forward pass of the node-embedding stack:
/// `n = E_n([ReLU(E_c([E_s(s) ‖ E_t(t) ‖ E_v(v)])) ‖ g])`.
pub struct NodeForward {
    inputs: NodeInputs,
    semantic_on: bool,
    fused_in: Tensor,
    fused: Tensor,
    node_in: Tensor,
    output: Tensor,
}

/// Gradients of the node-embedding stack with respect to its inputs.
pub struct NodeInputGrads {
    pub semantic: Tensor,
    pub text: Tensor,
    pub visual: Tensor,
    pub geometric: Tensor,
}

impl NodeForward {
    pub fn new(inputs: NodeInputs, semantic_on: bool, model: &Model) -> Result<Self, NnError> {
        let p = |name: &str| model.get(name);
        let es = if semantic_on {
            linear(&inputs.semantic, p("embed.s.w"), p("embed.s.b"))?
        } else {
            Tensor::zeros(&[inputs.semantic.rows(), model.hyper.dim_semantic])
        };
        let et = linear(&inputs.text, p("embed.t.w"), p("embed.t.b"))?;
        let ev = linear(&inputs.visual, p("embed.v.w"), p("embed.v.b"))?;
        let fused_in = Tensor::hcat(&[&es, &et, &ev])?;
        let fused = relu(&linear(&fused_in, p("embed.c.w"), p("embed.c.b"))?);
        let node_in = Tensor::hcat(&[&fused, &inputs.geometric])?;
        let output = linear(&node_in, p("embed.n.w"), p("embed.n.b"))?;
        output.ensure_finite("node embeddings")?;
        Ok(NodeForward {
            inputs,
            semantic_on,
            fused_in,
            fused,
            node_in,
            output,
        })
    }

    pub fn output(&self) -> &Tensor {
        &self.output
    }

    /// Accumulates parameter gradients into `grads` and returns input gradients.
    pub fn backward(
        &self,
        model: &Model,
        dout: &Tensor,
        grads: &mut Grads,
    ) -> Result<NodeInputGrads, NnError> {
        let h = &model.hyper;
        let n_g = linear_backward(&self.node_in, model.get("embed.n.w"), dout)?;
        grads.add(model.id("embed.n.w"), &n_g.dw);
        grads.add(model.id("embed.n.b"), &n_g.db);
        let parts = n_g.dx.split_cols(&[h.dim_fused, GEOMETRIC_DIM]);
        let dpre = relu_backward(&self.fused, &parts[0]);
        let c_g = linear_backward(&self.fused_in, model.get("embed.c.w"), &dpre)?;
        grads.add(model.id("embed.c.w"), &c_g.dw);
        grads.add(model.id("embed.c.b"), &c_g.db);
        let d = c_g.dx.split_cols(&[h.dim_semantic, h.dim_text, h.dim_visual]);
        let mut branch = |prefix: &str, x: &Tensor, dy: &Tensor| -> Result<Tensor, NnError> {
            let g = linear_backward(x, model.get(&format!("{prefix}.w")), dy)?;
            grads.add(model.id(&format!("{prefix}.w")), &g.dw);
            grads.add(model.id(&format!("{prefix}.b")), &g.db);
            Ok(g.dx)
        };
        let semantic = if self.semantic_on {
            branch("embed.s", &self.inputs.semantic, &d[0])?
        } else {
            Tensor::zeros(self.inputs.semantic.shape())
        };
        let text = branch("embed.t", &self.inputs.text, &d[1])?;
        let visual = branch("embed.v", &self.inputs.visual, &d[2])?;
        Ok(NodeInputGrads {
            semantic,
            text,
            visual,
            geometric: parts[1].clone(),
        })
    }
}

/// `ReLU(E_r(r))` over every edge relation vector.
pub struct RelationForward {
    input: Tensor,
    output: Tensor,
}

impl RelationForward {
    pub fn new(relations: Tensor, model: &Model) -> Result<Self, NnError> {
        let output = if relations.rows() == 0 || relations.is_empty() {
            Tensor::zeros(&[0, model.hyper.dim_relation])
        } else {
            relu(&linear(&relations, model.get("embed.r.w"), model.get("embed.r.b"))?)
        };
        Ok(RelationForward {
            input: relations,
            output,
        })
    }

    pub fn output(&self) -> &Tensor {
        &self.output
    }

    pub fn backward(&self, model: &Model, dout: &Tensor, grads: &mut Grads) -> Result<(), NnError> {
        if self.output.is_empty() {
            return Ok(());
        }
        let dpre = relu_backward(&self.output, dout);
        let g = linear_backward(&self.input, model.get("embed.r.w"), &dpre)?;
        grads.add(model.id("embed.r.w"), &g.dw);
        grads.add(model.id("embed.r.b"), &g.db);
        Ok(())
    }
}

fn check_dims(graph: &LayoutGraph) -> Result<(), NnError> {
    for n in &graph.nodes {
        if n.semantic.len() != SEMANTIC_DIM
            || n.text.len() != TEXT_DIM
            || n.visual.len() != VISUAL_DIM
            || n.geometric.len() != GEOMETRIC_DIM
        {
            return Err(NnError::Shape(format!("node {} has malformed features", n.id)));
        }
    }
    Ok(())
}

/// Initial node embeddings `n_i`, one row per node.
pub fn embed_nodes(graph: &LayoutGraph, model: &Model) -> Result<Tensor, NnError> {
    check_dims(graph)?;
    Ok(NodeForward::new(graph.inputs(), graph.include_semantic, model)?.output)
}

pub(crate) fn intra_weights<'a>(model: &'a Model, prefix: &str) -> IntraWeights<'a> {
    IntraWeights {
        w_self: model.get(&format!("{prefix}.self")),
        w_msg: model.get(&format!("{prefix}.msg")),
        bias: model.get(&format!("{prefix}.b")),
    }
}

/// Whole-layout embedding `f_e`: attention-pooled node features after the
/// first graph convolution, and attention-pooled relation features
/// `ReLU(g_r([n_i ‖ E_r(r_ij) ‖ n_j]))`, concatenated and projected.
pub fn encode_layout(graph: &LayoutGraph, model: &Model) -> Result<Vec<f64>, NnError> {
    let h = &model.hyper;
    if graph.is_empty() {
        return Ok(vec![0.0; h.dim_layout]);
    }
    let nodes = embed_nodes(graph, model)?;
    let rel = RelationForward::new(graph.relations(), model)?;
    let adj = graph.adjacency();
    let h1 = gconv_intra(&adj, &nodes, rel.output(), &intra_weights(model, "intra1"))?;
    let (f_n, _) = attention_pool(h1.output(), model.get("layout.att_n"))?;
    let f_r = if graph.edges.is_empty() {
        Tensor::vector(vec![0.0; h.dim_hidden])
    } else {
        let rows: Vec<f64> = graph
            .edges
            .iter()
            .enumerate()
            .flat_map(|(e, edge)| {
                let mut row = nodes.row(edge.source).to_vec();
                row.extend_from_slice(rel.output().row(e));
                row.extend_from_slice(nodes.row(edge.target));
                row
            })
            .collect();
        let triples = Tensor::matrix(graph.edges.len(), 2 * h.dim_node + h.dim_relation, rows);
        let x_r = relu(&linear(&triples, model.get("layout.rel.w"), model.get("layout.rel.b"))?);
        attention_pool(&x_r, model.get("layout.att_r"))?.0
    };
    let pooled = Tensor::hcat(&[&f_n, &f_r])?;
    let f_e = linear(&pooled, model.get("layout.e.w"), model.get("layout.e.b"))?;
    f_e.ensure_finite("layout embedding")?;
    Ok(f_e.into_data())
}

/// Cosine of two layout embeddings; 0 when either is the zero vector.
pub fn layout_similarity(a: &[f64], b: &[f64]) -> f64 {
    cosine(a, b)
}
