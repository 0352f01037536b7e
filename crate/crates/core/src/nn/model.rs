//! Named parameter store, hyperparameters, and the binary model file.
//!
//! File layout (all integers little-endian):
//! `"LGM1"`, `u32` version, `u32` parameter count, then per parameter
//! `u32` name length, name bytes, `u32` rank, `u64` per dimension, `f64` data;
//! then `u32` hyperparameter count and per entry `u32` name length, name
//! bytes, `f64` value.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{NnError, Tensor};
use crate::featurize::{EDGE_DIM, GEOMETRIC_DIM, SEMANTIC_DIM, VISUAL_DIM};
use crate::textembed::TEXT_DIM;

pub const MAGIC: &[u8; 4] = b"LGM1";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Architecture widths and matching defaults. All of them are written to the
/// model file.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct HyperParams {
    pub dim_semantic: usize,
    pub dim_text: usize,
    pub dim_visual: usize,
    pub dim_fused: usize,
    pub dim_node: usize,
    pub dim_relation: usize,
    pub dim_hidden: usize,
    pub dim_layout: usize,
    pub iterations: usize,
    pub sinkhorn_iters: usize,
    pub tau: f64,
    pub slack_init: f64,
    pub include_semantic: bool,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            dim_semantic: 16,
            dim_text: 64,
            dim_visual: 16,
            dim_fused: 64,
            dim_node: 64,
            dim_relation: 16,
            dim_hidden: 64,
            dim_layout: 64,
            iterations: 2,
            sinkhorn_iters: 50,
            tau: 0.05,
            slack_init: 0.0,
            include_semantic: true,
        }
    }
}

impl HyperParams {
    pub fn to_table(&self) -> Vec<(String, f64)> {
        vec![
            ("dim_semantic".into(), self.dim_semantic as f64),
            ("dim_text".into(), self.dim_text as f64),
            ("dim_visual".into(), self.dim_visual as f64),
            ("dim_fused".into(), self.dim_fused as f64),
            ("dim_node".into(), self.dim_node as f64),
            ("dim_relation".into(), self.dim_relation as f64),
            ("dim_hidden".into(), self.dim_hidden as f64),
            ("dim_layout".into(), self.dim_layout as f64),
            ("iterations".into(), self.iterations as f64),
            ("sinkhorn_iters".into(), self.sinkhorn_iters as f64),
            ("tau".into(), self.tau),
            ("slack_init".into(), self.slack_init),
            ("include_semantic".into(), if self.include_semantic { 1.0 } else { 0.0 }),
        ]
    }

    pub fn from_table(table: &[(String, f64)]) -> Result<Self, NnError> {
        let map: BTreeMap<&str, f64> = table.iter().map(|(k, v)| (k.as_str(), *v)).collect();
        let get = |k: &str| {
            map.get(k)
                .copied()
                .ok_or_else(|| NnError::Format(format!("missing hyperparameter {k}")))
        };
        let dim = |k: &str| -> Result<usize, NnError> {
            let v = get(k)?;
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(NnError::Format(format!("hyperparameter {k} must be a count, got {v}")))
            }
        };
        Ok(HyperParams {
            dim_semantic: dim("dim_semantic")?,
            dim_text: dim("dim_text")?,
            dim_visual: dim("dim_visual")?,
            dim_fused: dim("dim_fused")?,
            dim_node: dim("dim_node")?,
            dim_relation: dim("dim_relation")?,
            dim_hidden: dim("dim_hidden")?,
            dim_layout: dim("dim_layout")?,
            iterations: dim("iterations")?,
            sinkhorn_iters: dim("sinkhorn_iters")?,
            tau: get("tau")?,
            slack_init: get("slack_init")?,
            include_semantic: get("include_semantic")? != 0.0,
        })
    }

    /// `(name, shape, fan_in)` for every parameter, in file order.
    fn layout(&self) -> Vec<(&'static str, Vec<usize>, usize)> {
        let fused_in = self.dim_semantic + self.dim_text + self.dim_visual;
        let node_in = self.dim_fused + GEOMETRIC_DIM;
        let (dn, dr, dh) = (self.dim_node, self.dim_relation, self.dim_hidden);
        let lin = |name_w: &'static str, name_b: &'static str, i: usize, o: usize| {
            [(name_w, vec![i, o], i), (name_b, vec![o], i)]
        };
        let mut out = Vec::new();
        out.extend(lin("embed.s.w", "embed.s.b", SEMANTIC_DIM, self.dim_semantic));
        out.extend(lin("embed.t.w", "embed.t.b", TEXT_DIM, self.dim_text));
        out.extend(lin("embed.v.w", "embed.v.b", VISUAL_DIM, self.dim_visual));
        out.extend(lin("embed.c.w", "embed.c.b", fused_in, self.dim_fused));
        out.extend(lin("embed.n.w", "embed.n.b", node_in, dn));
        out.extend(lin("embed.r.w", "embed.r.b", EDGE_DIM, dr));
        out.push(("intra1.self", vec![dn, dh], dn));
        out.push(("intra1.msg", vec![dn + dr, dh], dn + dr));
        out.push(("intra1.b", vec![dh], dn));
        out.push(("cross.self", vec![dh, dh], dh));
        out.push(("cross.other", vec![dh, dh], dh));
        out.push(("cross.b", vec![dh], dh));
        out.push(("intra2.self", vec![dh, dh], dh));
        out.push(("intra2.msg", vec![dh + dr, dh], dh + dr));
        out.push(("intra2.b", vec![dh], dh));
        out.push(("match.slack", vec![1], 1));
        out.extend(lin("layout.rel.w", "layout.rel.b", 2 * dn + dr, dh));
        out.push(("layout.att_n", vec![dh], dh));
        out.push(("layout.att_r", vec![dh], dh));
        out.extend(lin("layout.e.w", "layout.e.b", 2 * dh, self.dim_layout));
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    params: Vec<Parameter>,
    index: BTreeMap<String, usize>,
    pub hyper: HyperParams,
}

impl Model {
    /// Seeded uniform(±1/√fan_in) initialization; the slack score starts at
    /// `hyper.slack_init`.
    pub fn new(hyper: HyperParams, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = hyper
            .layout()
            .into_iter()
            .map(|(name, shape, fan_in)| {
                let bound = 1.0 / (fan_in as f64).sqrt();
                let n: usize = shape.iter().product();
                let data = if name == "match.slack" {
                    vec![hyper.slack_init]
                } else {
                    (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
                };
                Parameter {
                    name: name.to_string(),
                    value: Tensor::from_vec(&shape, data).expect("layout shape"),
                    grad: Tensor::zeros(&shape),
                }
            })
            .collect();
        Self::from_params(params, hyper).expect("fresh model is consistent")
    }

    fn from_params(params: Vec<Parameter>, hyper: HyperParams) -> Result<Self, NnError> {
        let mut index = BTreeMap::new();
        for (k, p) in params.iter().enumerate() {
            if index.insert(p.name.clone(), k).is_some() {
                return Err(NnError::Format(format!("duplicate parameter {}", p.name)));
            }
        }
        for (name, shape, _) in hyper.layout() {
            let k = index
                .get(name)
                .ok_or_else(|| NnError::Format(format!("missing parameter {name}")))?;
            params[*k].value.check_shape(&shape, name)?;
        }
        Ok(Model { params, index, hyper })
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn id(&self, name: &str) -> ParamId {
        ParamId(*self.index.get(name).unwrap_or_else(|| panic!("no parameter {name}")))
    }

    pub fn get(&self, name: &str) -> &Tensor {
        &self.params[self.id(name).0].value
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        let k = self.id(name).0;
        &mut self.params[k].value
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Copies accumulated gradients into the parameters, scaled by `scale`.
    pub fn set_grads(&mut self, grads: &Grads, scale: f64) {
        for (p, g) in self.params.iter_mut().zip(&grads.tensors) {
            p.grad
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .for_each(|(dst, src)| *dst = src * scale);
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for p in &self.params {
            write_name(&mut out, &p.name);
            out.extend_from_slice(&(p.value.shape().len() as u32).to_le_bytes());
            for &d in p.value.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let table = self.hyper.to_table();
        out.extend_from_slice(&(table.len() as u32).to_le_bytes());
        for (k, v) in &table {
            write_name(&mut out, k);
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NnError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(NnError::Format("bad magic, not a model file".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(NnError::Format(format!("unsupported model version {version}")));
        }
        let count = r.u32()? as usize;
        let mut params = Vec::with_capacity(count);
        for _ in 0..count {
            let name = r.name()?;
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
            let value = Tensor::from_vec(&shape, data)?;
            value.ensure_finite(&name)?;
            params.push(Parameter {
                grad: Tensor::zeros(&shape),
                name,
                value,
            });
        }
        let hcount = r.u32()? as usize;
        let mut table = Vec::with_capacity(hcount);
        for _ in 0..hcount {
            let name = r.name()?;
            table.push((name, r.f64()?));
        }
        if r.pos != bytes.len() {
            return Err(NnError::Format("trailing bytes after model".into()));
        }
        Self::from_params(params, HyperParams::from_table(&table)?)
    }
}

fn write_name(out: &mut Vec<u8>, name: &str) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], NnError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| NnError::Format("truncated model file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, NnError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, NnError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn name(&mut self) -> Result<String, NnError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| NnError::Format("parameter name is not UTF-8".into()))
    }
}

/// Gradient buffers aligned with a model's parameters.
#[derive(Debug, Clone)]
pub struct Grads {
    tensors: Vec<Tensor>,
}

impl Grads {
    pub fn for_model(model: &Model) -> Self {
        Grads {
            tensors: model
                .params
                .iter()
                .map(|p| Tensor::zeros(p.value.shape()))
                .collect(),
        }
    }

    pub fn add(&mut self, id: ParamId, g: &Tensor) {
        self.tensors[id.0]
            .add_assign(g)
            .expect("gradient shape matches parameter");
    }

    pub fn add_scalar(&mut self, id: ParamId, g: f64) {
        self.tensors[id.0].data_mut()[0] += g;
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    /// Adds another buffer; used to reduce per-sample gradients in a fixed order.
    pub fn accumulate(&mut self, other: &Grads) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.add_assign(b).expect("aligned gradient buffers");
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data().iter().all(|v| v.is_finite()))
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.data().iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}
