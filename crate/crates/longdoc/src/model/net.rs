//! The encoder network: parameter store, forward trace, and the full
//! hand-derived backward pass.
//!
//! Parameters live in one flat `Vec<Matrix>` addressed by named handles,
//! so the optimizer, finite-difference checks, and the checkpoint format
//! all see the same indexed view. Attention context (dense bias matrix,
//! sliced projections, or feature expansion) is built once per chunk and
//! shared by every layer and head.

use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{
    attention_backward, attention_forward, AttentionInput, AttentionVariant, ProjectionPair,
};
use crate::bias::{
    approximate_cross_expansion, dense_bias, expand_separable, BiasPattern, BiasSpec,
    FeatureExpansion, TokenPosition,
};
use crate::data::bieso::{tag_inventory, Tag};
use crate::data::chunk::Chunk;
use crate::matrix::Matrix;

use super::layers::{
    gelu, gelu_backward, layer_norm, layer_norm_backward, linear, linear_backward, LnTrace,
};
use super::{AttentionKind, ModelConfig, ModelError};

const INIT_STD: f64 = 0.02;
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
struct EmbedHandles {
    tok: usize,
    pos: usize,
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
    w: usize,
    h: usize,
    page: usize,
}

#[derive(Debug, Clone)]
struct LayerHandles {
    w_q: usize,
    b_q: usize,
    w_k: usize,
    b_k: usize,
    w_v: usize,
    b_v: usize,
    w_o: usize,
    b_o: usize,
    g1: usize,
    be1: usize,
    w_f1: usize,
    b_f1: usize,
    w_f2: usize,
    b_f2: usize,
    g2: usize,
    be2: usize,
}

#[derive(Debug, Clone)]
struct Handles {
    embed: EmbedHandles,
    layers: Vec<LayerHandles>,
    mlm_w: usize,
    mlm_b: usize,
    tag_w: usize,
    tag_b: usize,
    proj: Option<(usize, usize)>,
}

struct Builder {
    names: Vec<String>,
    tensors: Vec<Matrix>,
    rng: ChaCha8Rng,
}

impl Builder {
    fn push(&mut self, name: String, m: Matrix) -> usize {
        self.names.push(name);
        self.tensors.push(m);
        self.tensors.len() - 1
    }

    fn normal(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> usize {
        let m = Matrix::random_normal(rows, cols, INIT_STD, &mut self.rng);
        self.push(name.into(), m)
    }

    fn zeros(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> usize {
        self.push(name.into(), Matrix::zeros(rows, cols))
    }

    fn ones(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> usize {
        self.push(name.into(), Matrix::ones(rows, cols))
    }
}

/// Which output head to differentiate through.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    Mlm,
    Tag,
}

/// Per-chunk attention context shared across layers and heads.
enum AttnContext {
    Plain,
    Dense { bias: Matrix },
    LowRank { proj: ProjectionPair },
    Kernel { expansion: Option<FeatureExpansion> },
}

impl AttnContext {
    fn variant(&self) -> AttentionVariant<'_> {
        match self {
            AttnContext::Plain => AttentionVariant::Full,
            AttnContext::Dense { bias } => AttentionVariant::Biased {
                bias,
                renormalize: true,
            },
            AttnContext::LowRank { proj } => AttentionVariant::Linformer { proj },
            AttnContext::Kernel { expansion } => AttentionVariant::Cosformer {
                expansion: expansion.as_ref(),
            },
        }
    }
}

struct LayerTrace {
    input: Matrix,
    q: Matrix,
    k: Matrix,
    v: Matrix,
    concat: Matrix,
    ln1: LnTrace,
    h1: Matrix,
    a1: Matrix,
    ln2: LnTrace,
}

/// Everything the backward pass needs from one forward run.
pub struct Trace {
    /// Final contextual representations, N x d_model.
    pub x: Matrix,
    emb: Matrix,
    ctx: AttnContext,
    layers: Vec<LayerTrace>,
}

#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    names: Vec<String>,
    tensors: Vec<Matrix>,
    h: Handles,
    tags: Vec<Tag>,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Model, ModelError> {
        config.validate()?;
        let tags = tag_inventory(&config.classes);
        let d = config.d_model;
        let mut b = Builder {
            names: Vec::new(),
            tensors: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let embed = EmbedHandles {
            tok: b.normal("embed.token", config.vocab_size, d),
            pos: b.normal("embed.pos", config.n_max, d),
            x0: b.normal("embed.x0", config.coord_vocab, d),
            y0: b.normal("embed.y0", config.coord_vocab, d),
            x1: b.normal("embed.x1", config.coord_vocab, d),
            y1: b.normal("embed.y1", config.coord_vocab, d),
            w: b.normal("embed.w", config.coord_vocab, d),
            h: b.normal("embed.h", config.coord_vocab, d),
            page: b.normal("embed.page", config.page_vocab, d),
        };
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            layers.push(LayerHandles {
                w_q: b.normal(format!("layer{l}.attn.w_q"), d, d),
                b_q: b.zeros(format!("layer{l}.attn.b_q"), 1, d),
                w_k: b.normal(format!("layer{l}.attn.w_k"), d, d),
                b_k: b.zeros(format!("layer{l}.attn.b_k"), 1, d),
                w_v: b.normal(format!("layer{l}.attn.w_v"), d, d),
                b_v: b.zeros(format!("layer{l}.attn.b_v"), 1, d),
                w_o: b.normal(format!("layer{l}.attn.w_o"), d, d),
                b_o: b.zeros(format!("layer{l}.attn.b_o"), 1, d),
                g1: b.ones(format!("layer{l}.ln1.gamma"), 1, d),
                be1: b.zeros(format!("layer{l}.ln1.beta"), 1, d),
                w_f1: b.normal(format!("layer{l}.ff.w1"), d, 4 * d),
                b_f1: b.zeros(format!("layer{l}.ff.b1"), 1, 4 * d),
                w_f2: b.normal(format!("layer{l}.ff.w2"), 4 * d, d),
                b_f2: b.zeros(format!("layer{l}.ff.b2"), 1, d),
                g2: b.ones(format!("layer{l}.ln2.gamma"), 1, d),
                be2: b.zeros(format!("layer{l}.ln2.beta"), 1, d),
            });
        }
        let mlm_w = b.normal("head.mlm.w", d, config.vocab_size);
        let mlm_b = b.zeros("head.mlm.b", 1, config.vocab_size);
        let tag_w = b.normal("head.tag.w", d, tags.len());
        let tag_b = b.zeros("head.tag.b", 1, tags.len());
        // Projections come last so full and linformer models built from
        // the same seed share every other parameter draw.
        let proj = if let AttentionKind::Linformer { k } = config.attention {
            let std = 1.0 / (config.n_max as f64).sqrt();
            let p_k = Matrix::random_normal(k, config.n_max, std, &mut b.rng);
            let p_v = Matrix::random_normal(k, config.n_max, std, &mut b.rng);
            Some((b.push("proj.p_k".into(), p_k), b.push("proj.p_v".into(), p_v)))
        } else {
            None
        };
        Ok(Model {
            config,
            names: b.names,
            tensors: b.tensors,
            h: Handles {
                embed,
                layers,
                mlm_w,
                mlm_b,
                tag_w,
                tag_b,
                proj,
            },
            tags,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// The tag set predicted by the tagging head, in logit order.
    pub fn tags(&self) -> &[Tag] {
        &self.tags
    }

    pub fn num_params(&self) -> usize {
        self.tensors.len()
    }

    pub fn param(&self, i: usize) -> &Matrix {
        &self.tensors[i]
    }

    pub fn param_mut(&mut self, i: usize) -> &mut Matrix {
        &mut self.tensors[i]
    }

    pub fn param_name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn param_by_name(&self, name: &str) -> Option<&Matrix> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
    }

    /// Zero matrices matching every parameter, in parameter order.
    pub fn zero_grads(&self) -> Vec<Matrix> {
        self.tensors
            .iter()
            .map(|t| Matrix::zeros(t.rows(), t.cols()))
            .collect()
    }

    pub fn scalar_param_count(&self) -> usize {
        self.tensors.iter().map(|t| t.rows() * t.cols()).sum()
    }

    /// Overwrites the low-rank projections with identity matrices, which
    /// collapses the projected path back to full attention.
    pub fn set_linformer_identity(&mut self) -> Result<(), ModelError> {
        let (k, _) = match self.config.attention {
            AttentionKind::Linformer { k } => (k, ()),
            _ => {
                return Err(ModelError::BadConfig(
                    "identity projections apply to the linformer variant only".into(),
                ))
            }
        };
        if k != self.config.n_max {
            return Err(ModelError::BadConfig(format!(
                "identity projections need k = n_max, got k = {k}, n_max = {}",
                self.config.n_max
            )));
        }
        let (pk, pv) = self.h.proj.expect("linformer has projections");
        self.tensors[pk] = Matrix::identity(k);
        self.tensors[pv] = Matrix::identity(k);
        Ok(())
    }

    fn check_chunk(&self, chunk: &Chunk) -> Result<(), ModelError> {
        let n = chunk.len();
        if n == 0 {
            return Err(ModelError::EmptySequence);
        }
        if n > self.config.n_max {
            return Err(ModelError::SequenceTooLong {
                n,
                n_max: self.config.n_max,
            });
        }
        for i in 0..n {
            if chunk.ids[i] >= self.config.vocab_size {
                return Err(ModelError::TokenOutOfRange {
                    id: chunk.ids[i],
                    vocab: self.config.vocab_size,
                });
            }
            if chunk.positions[i] >= self.config.n_max {
                return Err(ModelError::SequenceTooLong {
                    n: chunk.positions[i] + 1,
                    n_max: self.config.n_max,
                });
            }
            if chunk.page[i] >= self.config.page_vocab {
                return Err(ModelError::PageOutOfRange {
                    page: chunk.page[i],
                    vocab: self.config.page_vocab,
                });
            }
            let [x0, y0, x1, y1] = chunk.boxes[i];
            for v in [x0, y0, x1, y1, x1 - x0, y1 - y0] {
                if v < 0 || v as usize >= self.config.coord_vocab {
                    return Err(ModelError::CoordOutOfRange {
                        value: v,
                        vocab: self.config.coord_vocab,
                    });
                }
            }
        }
        Ok(())
    }

    /// Sum of token, 1D-position, six box-component, and page embeddings.
    pub fn embed(&self, chunk: &Chunk) -> Result<Matrix, ModelError> {
        self.check_chunk(chunk)?;
        let n = chunk.len();
        let d = self.config.d_model;
        let e = &self.h.embed;
        let mut out = Matrix::zeros(n, d);
        for i in 0..n {
            let [x0, y0, x1, y1] = chunk.boxes[i];
            let lookups = [
                (e.tok, chunk.ids[i]),
                (e.pos, chunk.positions[i]),
                (e.x0, x0 as usize),
                (e.y0, y0 as usize),
                (e.x1, x1 as usize),
                (e.y1, y1 as usize),
                (e.w, (x1 - x0) as usize),
                (e.h, (y1 - y0) as usize),
                (e.page, chunk.page[i]),
            ];
            let row = out.row_mut(i);
            for (table, idx) in lookups {
                for (o, &v) in row.iter_mut().zip(self.tensors[table].row(idx)) {
                    *o += v;
                }
            }
        }
        Ok(out)
    }

    fn embed_backward(&self, chunk: &Chunk, d_emb: &Matrix, grads: &mut [Matrix]) {
        let e = &self.h.embed;
        for i in 0..chunk.len() {
            let [x0, y0, x1, y1] = chunk.boxes[i];
            let lookups = [
                (e.tok, chunk.ids[i]),
                (e.pos, chunk.positions[i]),
                (e.x0, x0 as usize),
                (e.y0, y0 as usize),
                (e.x1, x1 as usize),
                (e.y1, y1 as usize),
                (e.w, (x1 - x0) as usize),
                (e.h, (y1 - y0) as usize),
                (e.page, chunk.page[i]),
            ];
            for (table, idx) in lookups {
                for (g, &v) in grads[table].row_mut(idx).iter_mut().zip(d_emb.row(i)) {
                    *g += v;
                }
            }
        }
    }

    fn bias_spec(&self, pattern: BiasPattern, chunk: &Chunk) -> Result<BiasSpec, ModelError> {
        let m = match pattern {
            BiasPattern::Cosine1d => self.config.n_max as f64,
            _ => 1000.0,
        };
        let positions = (0..chunk.len())
            .map(|i| {
                let (cx, cy) = chunk.center(i);
                let mut p = TokenPosition::new(chunk.positions[i] as f64, cx, cy);
                p.page = chunk.page[i];
                p
            })
            .collect();
        Ok(BiasSpec::new(pattern, m, positions)?)
    }

    fn attn_context(&self, chunk: &Chunk) -> Result<AttnContext, ModelError> {
        match (self.config.attention, self.config.bias) {
            (AttentionKind::Full, BiasPattern::None) => Ok(AttnContext::Plain),
            (AttentionKind::Full, pattern) => Ok(AttnContext::Dense {
                bias: dense_bias(&self.bias_spec(pattern, chunk)?),
            }),
            (AttentionKind::Linformer { k }, BiasPattern::None) => {
                let n = chunk.len();
                let rank = k.min(n);
                let (pk, pv) = self.h.proj.expect("linformer has projections");
                let slice = |m: &Matrix| Matrix::from_fn(rank, n, |i, j| m.get(i, j));
                let proj =
                    ProjectionPair::new(slice(&self.tensors[pk]), slice(&self.tensors[pv]))?;
                Ok(AttnContext::LowRank { proj })
            }
            (AttentionKind::Linformer { .. }, _) => Err(ModelError::BadConfig(
                "low-rank attention cannot apply a relative bias".into(),
            )),
            (AttentionKind::Cosformer, BiasPattern::None) => {
                Ok(AttnContext::Kernel { expansion: None })
            }
            (AttentionKind::Cosformer, BiasPattern::Cross) => {
                let spec = self.bias_spec(BiasPattern::Cross, chunk)?;
                Ok(AttnContext::Kernel {
                    expansion: Some(approximate_cross_expansion(&spec)?.expansion),
                })
            }
            (AttentionKind::Cosformer, pattern) => {
                let spec = self.bias_spec(pattern, chunk)?;
                Ok(AttnContext::Kernel {
                    expansion: Some(expand_separable(&spec)?),
                })
            }
        }
    }

    fn layer_forward(
        &self,
        l: usize,
        x: &Matrix,
        ctx: &AttnContext,
    ) -> Result<LayerTrace, ModelError> {
        let lh = &self.h.layers[l];
        let t = &self.tensors;
        let n = x.rows();
        let d = self.config.d_model;
        let dh = d / self.config.heads;
        let q = linear(x, &t[lh.w_q], &t[lh.b_q]);
        let k = linear(x, &t[lh.w_k], &t[lh.b_k]);
        let v = linear(x, &t[lh.w_v], &t[lh.b_v]);
        let mut concat = Matrix::zeros(n, d);
        for head in 0..self.config.heads {
            let start = head * dh;
            let input = AttentionInput::new(
                q.col_slice(start, dh),
                k.col_slice(start, dh),
                v.col_slice(start, dh),
            )?;
            let out = attention_forward(ctx.variant(), &input)?;
            for i in 0..n {
                for j in 0..dh {
                    concat.set(i, start + j, out.out.get(i, j));
                }
            }
        }
        let attn_proj = linear(&concat, &t[lh.w_o], &t[lh.b_o]);
        let mut r1 = x.clone();
        r1.add_assign(&attn_proj);
        let ln1 = layer_norm(&r1, &t[lh.g1], &t[lh.be1]);
        let h1 = linear(&ln1.out, &t[lh.w_f1], &t[lh.b_f1]);
        let a1 = gelu(&h1);
        let mut r2 = ln1.out.clone();
        r2.add_assign(&linear(&a1, &t[lh.w_f2], &t[lh.b_f2]));
        let ln2 = layer_norm(&r2, &t[lh.g2], &t[lh.be2]);
        Ok(LayerTrace {
            input: x.clone(),
            q,
            k,
            v,
            concat,
            ln1,
            h1,
            a1,
            ln2,
        })
    }

    /// Runs the full encoder and keeps every intermediate the backward
    /// pass needs.
    pub fn forward(&self, chunk: &Chunk) -> Result<Trace, ModelError> {
        let emb = self.embed(chunk)?;
        let ctx = self.attn_context(chunk)?;
        let mut x = emb.clone();
        let mut layers = Vec::with_capacity(self.config.layers);
        for l in 0..self.config.layers {
            let lt = self.layer_forward(l, &x, &ctx)?;
            x = lt.ln2.out.clone();
            layers.push(lt);
        }
        Ok(Trace {
            x,
            emb,
            ctx,
            layers,
        })
    }

    /// Contextual representations only.
    pub fn encode(&self, chunk: &Chunk) -> Result<Matrix, ModelError> {
        Ok(self.forward(chunk)?.x)
    }

    pub fn mlm_logits(&self, x: &Matrix) -> Matrix {
        linear(x, &self.tensors[self.h.mlm_w], &self.tensors[self.h.mlm_b])
    }

    pub fn tag_logits(&self, x: &Matrix) -> Matrix {
        linear(x, &self.tensors[self.h.tag_w], &self.tensors[self.h.tag_b])
    }

    /// Per-token distributions over the BIESO tag set.
    pub fn tag(&self, chunk: &Chunk) -> Result<Matrix, ModelError> {
        let mut logits = self.tag_logits(&self.encode(chunk)?);
        softmax_rows(&mut logits);
        Ok(logits)
    }

    /// Argmax row of a tag distribution/logit matrix, as Tag values.
    pub fn argmax_tags(&self, dist: &Matrix) -> Vec<Tag> {
        (0..dist.rows())
            .map(|i| {
                let row = dist.row(i);
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                self.tags[best].clone()
            })
            .collect()
    }

    fn layer_backward(
        &self,
        l: usize,
        lt: &LayerTrace,
        ctx: &AttnContext,
        d_out: &Matrix,
        grads: &mut [Matrix],
    ) -> Result<Matrix, ModelError> {
        let lh = &self.h.layers[l];
        let t = &self.tensors;
        let n = lt.input.rows();
        let d = self.config.d_model;
        let dh = d / self.config.heads;

        let (d_r2, dg2, dbe2) = layer_norm_backward(&lt.ln2, &t[lh.g2], d_out);
        grads[lh.g2].add_assign(&dg2);
        grads[lh.be2].add_assign(&dbe2);

        // r2 = ln1.out + ff(ln1.out)
        let mut d_ln1out = d_r2.clone();
        let ff2 = linear_backward(&lt.a1, &t[lh.w_f2], &d_r2);
        grads[lh.w_f2].add_assign(&ff2.dw);
        grads[lh.b_f2].add_assign(&ff2.db);
        let dh1 = gelu_backward(&lt.h1, &ff2.dx);
        let ff1 = linear_backward(&lt.ln1.out, &t[lh.w_f1], &dh1);
        grads[lh.w_f1].add_assign(&ff1.dw);
        grads[lh.b_f1].add_assign(&ff1.db);
        d_ln1out.add_assign(&ff1.dx);

        let (d_r1, dg1, dbe1) = layer_norm_backward(&lt.ln1, &t[lh.g1], &d_ln1out);
        grads[lh.g1].add_assign(&dg1);
        grads[lh.be1].add_assign(&dbe1);

        // r1 = input + attn_proj
        let mut d_input = d_r1.clone();
        let og = linear_backward(&lt.concat, &t[lh.w_o], &d_r1);
        grads[lh.w_o].add_assign(&og.dw);
        grads[lh.b_o].add_assign(&og.db);

        let mut dq = Matrix::zeros(n, d);
        let mut dk = Matrix::zeros(n, d);
        let mut dv = Matrix::zeros(n, d);
        for head in 0..self.config.heads {
            let start = head * dh;
            let input = AttentionInput::new(
                lt.q.col_slice(start, dh),
                lt.k.col_slice(start, dh),
                lt.v.col_slice(start, dh),
            )?;
            let up = og.dx.col_slice(start, dh);
            let ag = attention_backward(ctx.variant(), &input, &up)?;
            for i in 0..n {
                for j in 0..dh {
                    dq.set(i, start + j, ag.dq.get(i, j));
                    dk.set(i, start + j, ag.dk.get(i, j));
                    dv.set(i, start + j, ag.dv.get(i, j));
                }
            }
            if let (Some(dpk), Some(dpv)) = (&ag.dp_k, &ag.dp_v) {
                let (pk, pv) = self.h.proj.expect("linformer has projections");
                for (handle, dslice) in [(pk, dpk), (pv, dpv)] {
                    for i in 0..dslice.rows() {
                        for j in 0..dslice.cols() {
                            let cur = grads[handle].get(i, j);
                            grads[handle].set(i, j, cur + dslice.get(i, j));
                        }
                    }
                }
            }
        }
        for (w, b, dm) in [
            (lh.w_q, lh.b_q, &dq),
            (lh.w_k, lh.b_k, &dk),
            (lh.w_v, lh.b_v, &dv),
        ] {
            let g = linear_backward(&lt.input, &t[w], dm);
            grads[w].add_assign(&g.dw);
            grads[b].add_assign(&g.db);
            d_input.add_assign(&g.dx);
        }
        Ok(d_input)
    }

    /// Gradients of `<d_logits, head_logits>` with respect to every
    /// parameter, aligned with parameter order.
    pub fn backward(
        &self,
        chunk: &Chunk,
        trace: &Trace,
        head: HeadKind,
        d_logits: &Matrix,
    ) -> Result<Vec<Matrix>, ModelError> {
        let mut grads = self.zero_grads();
        let (w, b) = match head {
            HeadKind::Mlm => (self.h.mlm_w, self.h.mlm_b),
            HeadKind::Tag => (self.h.tag_w, self.h.tag_b),
        };
        let hg = linear_backward(&trace.x, &self.tensors[w], d_logits);
        grads[w].add_assign(&hg.dw);
        grads[b].add_assign(&hg.db);
        let mut dx = hg.dx;
        for l in (0..self.config.layers).rev() {
            dx = self.layer_backward(l, &trace.layers[l], &trace.ctx, &dx, &mut grads)?;
        }
        let _ = &trace.emb;
        self.embed_backward(chunk, &dx, &mut grads);
        Ok(grads)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let path = path.as_ref();
        let io_err = |e: std::io::Error| ModelError::Io {
            path: path.display().to_string(),
            source: e,
        };
        let file = std::fs::File::create(path).map_err(io_err)?;
        let record = CheckpointFile {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            tensors: self
                .names
                .iter()
                .zip(&self.tensors)
                .map(|(name, m)| TensorRecord {
                    name: name.clone(),
                    rows: m.rows(),
                    cols: m.cols(),
                    data: m.data().to_vec(),
                })
                .collect(),
        };
        serde_json::to_writer(BufWriter::new(file), &record).map_err(|e| {
            ModelError::BadCheckpoint {
                path: path.display().to_string(),
                reason: e.to_string(),
            }
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Model, ModelError> {
        let path = path.as_ref();
        let bad = |reason: String| ModelError::BadCheckpoint {
            path: path.display().to_string(),
            reason,
        };
        let file = std::fs::File::open(path).map_err(|e| ModelError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let record: CheckpointFile =
            serde_json::from_reader(BufReader::new(file)).map_err(|e| bad(e.to_string()))?;
        if record.version != CHECKPOINT_VERSION {
            return Err(bad(format!(
                "version {} unsupported (expected {CHECKPOINT_VERSION})",
                record.version
            )));
        }
        let mut model = Model::new(record.config, 0)?;
        if record.tensors.len() != model.tensors.len() {
            return Err(bad(format!(
                "expected {} tensors, found {}",
                model.tensors.len(),
                record.tensors.len()
            )));
        }
        for rec in record.tensors {
            let idx = model
                .names
                .iter()
                .position(|n| *n == rec.name)
                .ok_or_else(|| bad(format!("unknown tensor '{}'", rec.name)))?;
            let expected = model.tensors[idx].shape();
            if (rec.rows, rec.cols) != expected || rec.data.len() != rec.rows * rec.cols {
                return Err(bad(format!(
                    "tensor '{}' has shape {}x{}, expected {}x{}",
                    rec.name, rec.rows, rec.cols, expected.0, expected.1
                )));
            }
            model.tensors[idx] = Matrix::from_vec(rec.rows, rec.cols, rec.data);
        }
        Ok(model)
    }
}

fn softmax_rows(m: &mut Matrix) {
    for i in 0..m.rows() {
        let row = m.row_mut(i);
        let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    config: ModelConfig,
    tensors: Vec<TensorRecord>,
}

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}
