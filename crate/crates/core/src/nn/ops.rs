//! Layer primitives with hand-written backward passes.

use super::{NnError, Tensor};

pub struct LinearGrads {
    pub dx: Tensor,
    pub dw: Tensor,
    pub db: Tensor,
}

/// `y = x·W + b` for `x: n×i`, `W: i×o`, `b: o`.
pub fn linear(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor, NnError> {
    if b.len() != w.cols() {
        return Err(NnError::Shape(format!(
            "linear bias {:?} for weight {:?}",
            b.shape(),
            w.shape()
        )));
    }
    let mut y = x.matmul(w)?;
    let o = w.cols();
    for i in 0..y.rows() {
        y.row_mut(i).iter_mut().zip(b.data()).for_each(|(v, bv)| *v += bv);
    }
    debug_assert_eq!(y.cols(), o);
    Ok(y)
}

pub fn linear_backward(x: &Tensor, w: &Tensor, dy: &Tensor) -> Result<LinearGrads, NnError> {
    Ok(LinearGrads {
        dx: dy.matmul_nt(w)?,
        dw: x.matmul_tn(dy)?,
        db: dy.sum_rows(),
    })
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Backward through ReLU given its *output*.
pub fn relu_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    let mut dx = dy.clone();
    dx.data_mut()
        .iter_mut()
        .zip(y.data())
        .for_each(|(g, &out)| {
            if out <= 0.0 {
                *g = 0.0;
            }
        });
    dx
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Backward through softmax given its output `y`.
pub fn softmax_backward(y: &[f64], dy: &[f64]) -> Vec<f64> {
    let dot: f64 = y.iter().zip(dy).map(|(a, b)| a * b).sum();
    y.iter().zip(dy).map(|(yi, gi)| yi * (gi - dot)).collect()
}

/// Row-wise softmax of a matrix.
pub fn softmax_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for i in 0..x.rows() {
        let s = softmax(x.row(i));
        out.row_mut(i).copy_from_slice(&s);
    }
    out
}

pub fn softmax_rows_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    let mut out = dy.clone();
    for i in 0..y.rows() {
        let g = softmax_backward(y.row(i), dy.row(i));
        out.row_mut(i).copy_from_slice(&g);
    }
    out
}

/// Attention pooling over the rows of `x` (k×d) with scoring vector `w` (d):
/// `a = softmax(x·w)`, `f = Σ a_i x_i`. An empty set pools to zero.
pub fn attention_pool(x: &Tensor, w: &Tensor) -> Result<(Tensor, Vec<f64>), NnError> {
    let (k, d) = (x.rows(), w.len());
    if k == 0 || x.is_empty() {
        return Ok((Tensor::vector(vec![0.0; d]), Vec::new()));
    }
    if x.cols() != d {
        return Err(NnError::Shape(format!(
            "attention_pool x {:?} w {:?}",
            x.shape(),
            w.shape()
        )));
    }
    let scores: Vec<f64> = (0..k)
        .map(|i| x.row(i).iter().zip(w.data()).map(|(a, b)| a * b).sum())
        .collect();
    let a = softmax(&scores);
    let mut f = vec![0.0; d];
    for (i, ai) in a.iter().enumerate() {
        f.iter_mut().zip(x.row(i)).for_each(|(o, v)| *o += ai * v);
    }
    Ok((Tensor::vector(f), a))
}

/// Returns `(dx, dw)`.
pub fn attention_pool_backward(x: &Tensor, w: &Tensor, a: &[f64], df: &Tensor) -> (Tensor, Tensor) {
    let (k, d) = (a.len(), w.len());
    let mut dx = Tensor::zeros(&[k, d]);
    let mut dw = Tensor::vector(vec![0.0; d]);
    if k == 0 {
        return (dx, dw);
    }
    // df/da_i = <df, x_i>
    let da: Vec<f64> = (0..k)
        .map(|i| x.row(i).iter().zip(df.data()).map(|(p, q)| p * q).sum())
        .collect();
    let ds = softmax_backward(a, &da);
    for i in 0..k {
        let row = dx.row_mut(i);
        for c in 0..d {
            row[c] = a[i] * df.data()[c] + ds[i] * w.data()[c];
        }
        dw.data_mut()
            .iter_mut()
            .zip(x.row(i))
            .for_each(|(g, v)| *g += ds[i] * v);
    }
    (dx, dw)
}

/// Weighted directed edge list; row `i` of the dense form holds the weights of
/// edges leaving node `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Adjacency {
    pub n: usize,
    pub edges: Vec<(usize, usize)>,
    pub weights: Vec<f64>,
}

impl Adjacency {
    /// Uniform weights `1/out_degree`.
    pub fn row_normalized(n: usize, edges: Vec<(usize, usize)>) -> Self {
        let mut deg = vec![0usize; n];
        for &(i, _) in &edges {
            deg[i] += 1;
        }
        let weights = edges.iter().map(|&(i, _)| 1.0 / deg[i] as f64).collect();
        Adjacency { n, edges, weights }
    }

    pub fn from_dense(a: &Tensor) -> Self {
        let n = a.rows();
        let mut edges = Vec::new();
        let mut weights = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if a.at(i, j) != 0.0 {
                    edges.push((i, j));
                    weights.push(a.at(i, j));
                }
            }
        }
        Adjacency { n, edges, weights }
    }

    pub fn dense(&self) -> Tensor {
        let mut a = Tensor::zeros(&[self.n, self.n]);
        for (&(i, j), &w) in self.edges.iter().zip(&self.weights) {
            a.set(i, j, a.at(i, j) + w);
        }
        a
    }

    /// `A·H`
    fn aggregate(&self, h: &Tensor) -> Tensor {
        let mut out = Tensor::zeros(&[self.n, h.cols()]);
        for (&(i, j), &w) in self.edges.iter().zip(&self.weights) {
            let src = h.row(j).to_vec();
            out.row_mut(i).iter_mut().zip(src).for_each(|(o, v)| *o += w * v);
        }
        out
    }

    /// Per-node weighted sum of the features of outgoing edges.
    fn aggregate_edges(&self, r: &Tensor) -> Tensor {
        let mut out = Tensor::zeros(&[self.n, r.cols()]);
        for (e, (&(i, _), &w)) in self.edges.iter().zip(&self.weights).enumerate() {
            let src = r.row(e).to_vec();
            out.row_mut(i).iter_mut().zip(src).for_each(|(o, v)| *o += w * v);
        }
        out
    }
}

/// Weights of one intra-graph convolution:
/// `H'_i = ReLU(h_i·W_self + Σ_j A_ij [h_j ‖ r_ij]·W_msg + b)`.
pub struct IntraWeights<'a> {
    pub w_self: &'a Tensor,
    pub w_msg: &'a Tensor,
    pub bias: &'a Tensor,
}

pub struct IntraCache {
    agg: Tensor,
    out: Tensor,
}

impl IntraCache {
    pub fn output(&self) -> &Tensor {
        &self.out
    }
}

pub struct IntraGrads {
    pub dh: Tensor,
    pub dr: Tensor,
    pub dw_self: Tensor,
    pub dw_msg: Tensor,
    pub db: Tensor,
}

/// `r` holds one (already embedded) feature row per edge, in `adj.edges` order.
pub fn gconv_intra(
    adj: &Adjacency,
    h: &Tensor,
    r: &Tensor,
    w: &IntraWeights,
) -> Result<IntraCache, NnError> {
    if h.rows() != adj.n || r.rows() != adj.edges.len() && !adj.edges.is_empty() {
        return Err(NnError::Shape(format!(
            "gconv_intra: {} nodes, {} edges, h {:?}, r {:?}",
            adj.n,
            adj.edges.len(),
            h.shape(),
            r.shape()
        )));
    }
    let agg_h = adj.aggregate(h);
    let agg_r = if adj.edges.is_empty() {
        Tensor::zeros(&[adj.n, w.w_msg.rows() - h.cols()])
    } else {
        adj.aggregate_edges(r)
    };
    let agg = Tensor::hcat(&[&agg_h, &agg_r])?;
    let mut pre = linear(h, w.w_self, w.bias)?;
    pre.add_assign(&agg.matmul(w.w_msg)?)?;
    let out = relu(&pre);
    Ok(IntraCache { agg, out })
}

pub fn gconv_intra_backward(
    adj: &Adjacency,
    h: &Tensor,
    w: &IntraWeights,
    cache: &IntraCache,
    dout: &Tensor,
) -> Result<IntraGrads, NnError> {
    let dpre = relu_backward(&cache.out, dout);
    let self_g = linear_backward(h, w.w_self, &dpre)?;
    let dw_msg = cache.agg.matmul_tn(&dpre)?;
    let dagg = dpre.matmul_nt(w.w_msg)?;
    let d = h.cols();
    let parts = dagg.split_cols(&[d, dagg.cols() - d]);
    let (dagg_h, dagg_r) = (&parts[0], &parts[1]);
    let mut dh = self_g.dx;
    let mut dr = Tensor::zeros(&[adj.edges.len(), dagg_r.cols()]);
    for (e, (&(i, j), &wt)) in adj.edges.iter().zip(&adj.weights).enumerate() {
        let gh = dagg_h.row(i).to_vec();
        dh.row_mut(j).iter_mut().zip(&gh).for_each(|(o, v)| *o += wt * v);
        let gr = dagg_r.row(i).to_vec();
        dr.row_mut(e).iter_mut().zip(&gr).for_each(|(o, v)| *o += wt * v);
    }
    Ok(IntraGrads {
        dh,
        dr,
        dw_self: self_g.dw,
        dw_msg,
        db: self_g.db,
    })
}

/// Weights of the cross-graph convolution:
/// `H'_i = ReLU(h_i·W_self + (Σ_j S_ij o_j)·W_cross + b)`.
pub struct CrossWeights<'a> {
    pub w_self: &'a Tensor,
    pub w_cross: &'a Tensor,
    pub bias: &'a Tensor,
}

pub struct CrossCache {
    agg: Tensor,
    out: Tensor,
}

impl CrossCache {
    pub fn output(&self) -> &Tensor {
        &self.out
    }
}

pub struct CrossGrads {
    pub ds: Tensor,
    pub dh_self: Tensor,
    pub dh_other: Tensor,
    pub dw_self: Tensor,
    pub dw_cross: Tensor,
    pub db: Tensor,
}

pub fn gconv_cross(
    s: &Tensor,
    h_self: &Tensor,
    h_other: &Tensor,
    w: &CrossWeights,
) -> Result<CrossCache, NnError> {
    if s.rows() != h_self.rows() || s.cols() != h_other.rows() {
        return Err(NnError::Shape(format!(
            "gconv_cross: S {:?}, self {:?}, other {:?}",
            s.shape(),
            h_self.shape(),
            h_other.shape()
        )));
    }
    let agg = s.matmul(h_other)?;
    let mut pre = linear(h_self, w.w_self, w.bias)?;
    pre.add_assign(&agg.matmul(w.w_cross)?)?;
    let out = relu(&pre);
    Ok(CrossCache { agg, out })
}

pub fn gconv_cross_backward(
    s: &Tensor,
    h_self: &Tensor,
    h_other: &Tensor,
    w: &CrossWeights,
    cache: &CrossCache,
    dout: &Tensor,
) -> Result<CrossGrads, NnError> {
    let dpre = relu_backward(&cache.out, dout);
    let self_g = linear_backward(h_self, w.w_self, &dpre)?;
    let dw_cross = cache.agg.matmul_tn(&dpre)?;
    let dagg = dpre.matmul_nt(w.w_cross)?;
    Ok(CrossGrads {
        ds: dagg.matmul_nt(h_other)?,
        dh_other: s.matmul_tn(&dagg)?,
        dh_self: self_g.dx,
        dw_self: self_g.dw,
        dw_cross,
        db: self_g.db,
    })
}
