//! Two-tower diffusion concept model.
//!
//! A causal transformer encodes the (normalized) context embeddings. A
//! denoiser maps a noised next embedding, its timestep and target position
//! to a clean-embedding estimate, reading the context through
//! cross-attention. Every denoiser query also sees a learned null token, and
//! unconditional queries see only that token.

mod config;

pub use config::ModelConfig;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{Graph, KeyMask, Mat, ParamId, ParamStore, Var};

struct Attn {
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
}

struct Mlp {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

struct CtxBlock {
    ln1_g: ParamId,
    ln1_b: ParamId,
    attn: Attn,
    ln2_g: ParamId,
    ln2_b: ParamId,
    mlp: Mlp,
}

struct DenBlock {
    modulation_w: ParamId,
    modulation_b: ParamId,
    attn: Attn,
    mlp: Mlp,
}

struct Layout {
    ctx_in_w: ParamId,
    ctx_in_b: ParamId,
    ctx_pos: ParamId,
    ctx_blocks: Vec<CtxBlock>,
    den_in_w: ParamId,
    den_in_b: ParamId,
    den_pos: ParamId,
    null_token: ParamId,
    time_w1: ParamId,
    time_b1: ParamId,
    time_w2: ParamId,
    time_b2: ParamId,
    den_blocks: Vec<DenBlock>,
    final_w: ParamId,
    final_b: ParamId,
    out_w: ParamId,
    out_b: ParamId,
}

/// One denoiser evaluation inside a training batch.
#[derive(Clone, Debug, PartialEq)]
pub struct DenoiseQuery {
    /// Index of the sequence in the batch.
    pub seq: usize,
    /// Position of the target; the context is positions `0..pos`.
    pub pos: usize,
    pub t: usize,
    pub x_t: Vec<f64>,
    /// `false` for rows whose context was dropped for guidance training.
    pub conditional: bool,
}

/// Encoded context, with each denoiser block's cross-attention keys and
/// values precomputed. Row 0 of every memory is the null token.
#[derive(Clone, Debug)]
pub struct ContextState {
    hidden: Mat,
    memory: Vec<(Mat, Mat)>,
}

impl ContextState {
    pub fn len(&self) -> usize {
        self.hidden.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.hidden.rows() == 0
    }

    /// One `d_model` row per context position.
    pub fn hidden(&self) -> &Mat {
        &self.hidden
    }
}

/// Anything that can produce clean-embedding predictions for a batch of
/// denoiser queries on a graph. Implemented by [`TwoTowerModel`]; tests
/// substitute stubs.
pub trait ConceptModel {
    fn config(&self) -> &ModelConfig;
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;

    /// Predictions, one row per query. `sequences[b]` holds the normalized
    /// embeddings of sequence `b`, one per row.
    fn forward_batch<'p>(
        &'p self,
        g: &mut Graph<'p>,
        sequences: &[Mat],
        queries: &[DenoiseQuery],
    ) -> Result<Var>;
}

pub struct TwoTowerModel {
    config: ModelConfig,
    params: ParamStore,
    layout: Layout,
}

impl TwoTowerModel {
    /// Randomly initialised model.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let layout = build(&config, &mut params, &mut rng)?;
        Ok(TwoTowerModel {
            config,
            params,
            layout,
        })
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_parameters()
    }

    fn check_embeddings(&self, rows: &Mat) -> Result<()> {
        if rows.cols() != self.config.d_embedding {
            return Err(Error::DimensionMismatch {
                expected: self.config.d_embedding,
                got: rows.cols(),
            });
        }
        if rows.rows() > self.config.max_positions {
            return Err(Error::ContextOverflow {
                len: rows.rows(),
                max: self.config.max_positions,
            });
        }
        Ok(())
    }

    fn check_timestep(&self, t: usize) -> Result<()> {
        if t >= self.config.t_train {
            return Err(Error::BadTimestep {
                t,
                t_train: self.config.t_train,
            });
        }
        Ok(())
    }

    /// Causal encoding of normalized context embeddings, one per row.
    pub fn encode_context(&self, embeddings: &Mat) -> Result<ContextState> {
        if embeddings.rows() == 0 {
            return Err(Error::Shape("context needs at least one embedding".into()));
        }
        self.check_embeddings(embeddings)?;
        let mut g = Graph::inference(&self.params);
        let x = g.constant(embeddings.clone());
        let hidden = self.context_tower(&mut g, x, &[embeddings.rows()])?;
        let null = g.param(self.layout.null_token);
        let mem = g.concat_rows(&[null, hidden])?;
        let mut memory = Vec::with_capacity(self.layout.den_blocks.len());
        for block in &self.layout.den_blocks {
            let (k, v) = self.memory_kv(&mut g, &block.attn, mem)?;
            memory.push((g.value(k).clone(), g.value(v).clone()));
        }
        Ok(ContextState {
            hidden: g.value(hidden).clone(),
            memory,
        })
    }

    /// Clean-embedding estimate for `x_t` at timestep `t`, predicting
    /// position `pos`. `ctx = None` evaluates the unconditional branch.
    pub fn denoise_predict(
        &self,
        x_t: &[f64],
        t: usize,
        ctx: Option<&ContextState>,
        pos: usize,
    ) -> Result<Vec<f64>> {
        self.check_timestep(t)?;
        if x_t.len() != self.config.d_embedding {
            return Err(Error::DimensionMismatch {
                expected: self.config.d_embedding,
                got: x_t.len(),
            });
        }
        if pos > self.config.max_positions {
            return Err(Error::ContextOverflow {
                len: pos,
                max: self.config.max_positions,
            });
        }
        if let Some(c) = ctx {
            if pos > c.len() {
                return Err(Error::Shape(format!(
                    "target position {pos} beyond a context of {}",
                    c.len()
                )));
            }
        }
        let mut g = Graph::inference(&self.params);
        let x = g.constant(Mat::row_vector(x_t.to_vec()));
        let (n_keys, visible) = match ctx {
            Some(c) => (c.len() + 1, pos + 1),
            None => (1, 1),
        };
        let mask = KeyMask::new(n_keys, vec![vec![0..visible]])?;
        let mut memory = Vec::with_capacity(self.layout.den_blocks.len());
        match ctx {
            Some(c) => {
                for (k, v) in &c.memory {
                    memory.push((g.constant(k.clone()), g.constant(v.clone())));
                }
            }
            None => {
                let null = g.param(self.layout.null_token);
                for block in &self.layout.den_blocks {
                    memory.push(self.memory_kv(&mut g, &block.attn, null)?);
                }
            }
        }
        let out = self.denoiser_tower(&mut g, x, &[t], &[pos], &memory, &mask)?;
        Ok(g.value(out).row(0).to_vec())
    }

    fn context_tower(&self, g: &mut Graph, x: Var, lengths: &[usize]) -> Result<Var> {
        let l = &self.layout;
        let heads = self.config.n_heads;
        let positions: Vec<usize> = lengths.iter().flat_map(|&n| 0..n).collect();
        let (w, b, pos_table) = (g.param(l.ctx_in_w), g.param(l.ctx_in_b), g.param(l.ctx_pos));
        let proj = g.linear(x, w, Some(b))?;
        let pos = g.gather_rows(pos_table, &positions)?;
        let mut h = g.add(proj, pos)?;
        for block in &l.ctx_blocks {
            let (gamma, beta) = (g.param(block.ln1_g), g.param(block.ln1_b));
            let a = g.layer_norm(h, Some(gamma), Some(beta))?;
            let q = linear(g, a, block.attn.wq, block.attn.bq)?;
            let k = linear(g, a, block.attn.wk, block.attn.bk)?;
            let v = linear(g, a, block.attn.wv, block.attn.bv)?;
            let att = g.causal_self_attention(q, k, v, heads, lengths)?;
            let att = linear(g, att, block.attn.wo, block.attn.bo)?;
            h = g.add(h, att)?;
            let (gamma, beta) = (g.param(block.ln2_g), g.param(block.ln2_b));
            let m = g.layer_norm(h, Some(gamma), Some(beta))?;
            let m = mlp(g, m, &block.mlp)?;
            h = g.add(h, m)?;
        }
        Ok(h)
    }

    fn memory_kv(&self, g: &mut Graph, attn: &Attn, mem: Var) -> Result<(Var, Var)> {
        let k = linear(g, mem, attn.wk, attn.bk)?;
        let v = linear(g, mem, attn.wv, attn.bv)?;
        Ok((k, v))
    }

    fn timestep_features(&self, ts: &[usize]) -> Mat {
        let h = self.config.d_model;
        let half = h / 2;
        let mut out = Mat::zeros(ts.len(), h);
        for (r, &t) in ts.iter().enumerate() {
            let row = out.row_mut(r);
            for i in 0..half {
                let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
                let a = t as f64 * freq;
                row[i] = a.sin();
                row[half + i] = a.cos();
            }
        }
        out
    }

    fn denoiser_tower(
        &self,
        g: &mut Graph,
        x_t: Var,
        ts: &[usize],
        positions: &[usize],
        memory: &[(Var, Var)],
        mask: &KeyMask,
    ) -> Result<Var> {
        let l = &self.layout;
        let dm = self.config.d_model;
        let heads = self.config.n_heads;

        let feats = g.constant(self.timestep_features(ts));
        let temb = linear(g, feats, l.time_w1, l.time_b1)?;
        let temb = g.silu(temb)?;
        let temb = linear(g, temb, l.time_w2, l.time_b2)?;
        let cond = g.silu(temb)?;

        let (w, b, pos_table) = (g.param(l.den_in_w), g.param(l.den_in_b), g.param(l.den_pos));
        let proj = g.linear(x_t, w, Some(b))?;
        let pos = g.gather_rows(pos_table, positions)?;
        let mut h = g.add(proj, pos)?;

        for (block, &(k, v)) in l.den_blocks.iter().zip(memory) {
            let m = linear(g, cond, block.modulation_w, block.modulation_b)?;
            let chunk = |g: &mut Graph, i: usize| g.slice_cols(m, i * dm, dm);
            let (shift1, scale1, gate1) = (chunk(g, 0)?, chunk(g, 1)?, chunk(g, 2)?);
            let (shift2, scale2, gate2) = (chunk(g, 3)?, chunk(g, 4)?, chunk(g, 5)?);

            let a = modulated_norm(g, h, shift1, scale1)?;
            let q = linear(g, a, block.attn.wq, block.attn.bq)?;
            let att = g.cross_attention(q, k, v, heads, mask)?;
            let att = linear(g, att, block.attn.wo, block.attn.bo)?;
            let att = g.mul(gate1, att)?;
            h = g.add(h, att)?;

            let a = modulated_norm(g, h, shift2, scale2)?;
            let f = mlp(g, a, &block.mlp)?;
            let f = g.mul(gate2, f)?;
            h = g.add(h, f)?;
        }
        let m = linear(g, cond, l.final_w, l.final_b)?;
        let shift = g.slice_cols(m, 0, dm)?;
        let scale = g.slice_cols(m, dm, dm)?;
        let a = modulated_norm(g, h, shift, scale)?;
        linear(g, a, l.out_w, l.out_b)
    }
}

impl ConceptModel for TwoTowerModel {
    fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn forward_batch<'p>(
        &'p self,
        g: &mut Graph<'p>,
        sequences: &[Mat],
        queries: &[DenoiseQuery],
    ) -> Result<Var> {
        if sequences.is_empty() || queries.is_empty() {
            return Err(Error::NoPredictablePositions);
        }
        let mut offsets = Vec::with_capacity(sequences.len());
        let mut total = 0;
        for s in sequences {
            if s.rows() == 0 {
                return Err(Error::Shape("empty sequence in batch".into()));
            }
            self.check_embeddings(s)?;
            offsets.push(total);
            total += s.rows();
        }
        let mut rows = Vec::with_capacity(queries.len());
        let mut x_rows = Vec::with_capacity(queries.len());
        for q in queries {
            self.check_timestep(q.t)?;
            let n = sequences
                .get(q.seq)
                .map(Mat::rows)
                .ok_or_else(|| Error::Shape(format!("query for missing sequence {}", q.seq)))?;
            if q.pos == 0 || q.pos >= n {
                return Err(Error::Shape(format!(
                    "target position {} outside 1..{n}",
                    q.pos
                )));
            }
            if q.x_t.len() != self.config.d_embedding {
                return Err(Error::DimensionMismatch {
                    expected: self.config.d_embedding,
                    got: q.x_t.len(),
                });
            }
            // key 0 is the null token, sequence rows follow
            let mut visible = vec![0..1];
            if q.conditional {
                let start = 1 + offsets[q.seq];
                visible.push(start..start + q.pos);
            }
            rows.push(visible);
            x_rows.push(q.x_t.as_slice());
        }
        let stacked: Vec<&[f64]> = sequences
            .iter()
            .flat_map(|s| (0..s.rows()).map(move |r| s.row(r)))
            .collect();
        let x = g.constant(Mat::from_rows(&stacked)?);
        let lengths: Vec<usize> = sequences.iter().map(Mat::rows).collect();
        let hidden = self.context_tower(g, x, &lengths)?;
        let null = g.param(self.layout.null_token);
        let mem = g.concat_rows(&[null, hidden])?;
        let mut memory = Vec::with_capacity(self.layout.den_blocks.len());
        for block in &self.layout.den_blocks {
            memory.push(self.memory_kv(g, &block.attn, mem)?);
        }
        let mask = KeyMask::new(total + 1, rows)?;
        let x_t = g.constant(Mat::from_rows(&x_rows)?);
        let ts: Vec<usize> = queries.iter().map(|q| q.t).collect();
        let positions: Vec<usize> = queries.iter().map(|q| q.pos).collect();
        self.denoiser_tower(g, x_t, &ts, &positions, &memory, &mask)
    }
}

fn linear(g: &mut Graph, x: Var, w: ParamId, b: ParamId) -> Result<Var> {
    let (w, b) = (g.param(w), g.param(b));
    g.linear(x, w, Some(b))
}

fn mlp(g: &mut Graph, x: Var, p: &Mlp) -> Result<Var> {
    let h = linear(g, x, p.w1, p.b1)?;
    let h = g.gelu(h)?;
    linear(g, h, p.w2, p.b2)
}

/// `LN(x)·(1 + scale) + shift` with a non-affine norm.
fn modulated_norm(g: &mut Graph, x: Var, shift: Var, scale: Var) -> Result<Var> {
    let n = g.layer_norm(x, None, None)?;
    let s = g.add_const(scale, 1.0)?;
    let n = g.mul(n, s)?;
    g.add(n, shift)
}

/// Marks each of `n` instances as dropped (`true`) with probability `p`.
pub fn drop_context_for_cfg<R: Rng + ?Sized>(n: usize, p: f64, rng: &mut R) -> Vec<bool> {
    (0..n).map(|_| drop_one(p, rng)).collect()
}

/// A single drop decision; always consumes one draw.
pub fn drop_one<R: Rng + ?Sized>(p: f64, rng: &mut R) -> bool {
    rng.gen::<f64>() < p
}

struct Builder<'a> {
    store: &'a mut ParamStore,
    rng: &'a mut ChaCha8Rng,
    std: f64,
    h: usize,
}

impl Builder<'_> {
    fn w(&mut self, name: &str, r: usize, c: usize) -> Result<ParamId> {
        self.store.normal(name, vec![r, c], self.std, self.rng)
    }

    fn zeros(&mut self, name: &str, n: usize) -> Result<ParamId> {
        self.store.constant(name, vec![n], 0.0)
    }

    fn ones(&mut self, name: &str, n: usize) -> Result<ParamId> {
        self.store.constant(name, vec![n], 1.0)
    }

    fn attn(&mut self, p: &str) -> Result<Attn> {
        let h = self.h;
        Ok(Attn {
            wq: self.w(&format!("{p}.wq"), h, h)?,
            bq: self.zeros(&format!("{p}.bq"), h)?,
            wk: self.w(&format!("{p}.wk"), h, h)?,
            bk: self.zeros(&format!("{p}.bk"), h)?,
            wv: self.w(&format!("{p}.wv"), h, h)?,
            bv: self.zeros(&format!("{p}.bv"), h)?,
            wo: self.w(&format!("{p}.wo"), h, h)?,
            bo: self.zeros(&format!("{p}.bo"), h)?,
        })
    }

    fn mlp(&mut self, p: &str) -> Result<Mlp> {
        let h = self.h;
        Ok(Mlp {
            w1: self.w(&format!("{p}.w1"), h, 4 * h)?,
            b1: self.zeros(&format!("{p}.b1"), 4 * h)?,
            w2: self.w(&format!("{p}.w2"), 4 * h, h)?,
            b2: self.zeros(&format!("{p}.b2"), h)?,
        })
    }
}

fn build(cfg: &ModelConfig, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<Layout> {
    let (d, h) = (cfg.d_embedding, cfg.d_model);
    let mut b = Builder {
        store,
        rng,
        std: cfg.init_std,
        h,
    };
    let ctx_in_w = b.w("ctx.in.w", d, h)?;
    let ctx_in_b = b.zeros("ctx.in.b", h)?;
    let ctx_pos = b.w("ctx.pos", cfg.max_positions, h)?;
    let mut ctx_blocks = Vec::with_capacity(cfg.n_ctx_layers);
    for i in 0..cfg.n_ctx_layers {
        let p = format!("ctx.{i}");
        ctx_blocks.push(CtxBlock {
            ln1_g: b.ones(&format!("{p}.ln1.g"), h)?,
            ln1_b: b.zeros(&format!("{p}.ln1.b"), h)?,
            attn: b.attn(&format!("{p}.attn"))?,
            ln2_g: b.ones(&format!("{p}.ln2.g"), h)?,
            ln2_b: b.zeros(&format!("{p}.ln2.b"), h)?,
            mlp: b.mlp(&format!("{p}.mlp"))?,
        });
    }

    let den_in_w = b.w("den.in.w", d, h)?;
    let den_in_b = b.zeros("den.in.b", h)?;
    let den_pos = b.w("den.pos", cfg.max_positions + 1, h)?;
    let null_token = b.store.normal("den.null", vec![h], cfg.init_std, b.rng)?;
    let time_w1 = b.w("den.time.w1", h, h)?;
    let time_b1 = b.zeros("den.time.b1", h)?;
    let time_w2 = b.w("den.time.w2", h, h)?;
    let time_b2 = b.zeros("den.time.b2", h)?;
    let mut den_blocks = Vec::with_capacity(cfg.n_den_layers);
    for i in 0..cfg.n_den_layers {
        let p = format!("den.{i}");
        den_blocks.push(DenBlock {
            modulation_w: b.w(&format!("{p}.mod.w"), h, 6 * h)?,
            modulation_b: b.zeros(&format!("{p}.mod.b"), 6 * h)?,
            attn: b.attn(&format!("{p}.xattn"))?,
            mlp: b.mlp(&format!("{p}.mlp"))?,
        });
    }
    Ok(Layout {
        ctx_in_w,
        ctx_in_b,
        ctx_pos,
        ctx_blocks,
        den_in_w,
        den_in_b,
        den_pos,
        null_token,
        time_w1,
        time_b1,
        time_w2,
        time_b2,
        den_blocks,
        final_w: b.w("den.final.mod.w", h, 2 * h)?,
        final_b: b.zeros("den.final.mod.b", 2 * h)?,
        out_w: b.w("den.out.w", h, d)?,
        out_b: b.zeros("den.out.b", d)?,
    })
}
