use super::config::ModelConfig;
use crate::diffusion::timestep_embedding;
use crate::error::{Result, SabrError};
use crate::tensor::{Graph, Real, RngStream, Tensor, Var};

const LN_EPS: f64 = 1e-6;

/// Named parameter tensors in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T: Real = f32> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> ParamStore<T> {
    fn push(&mut self, name: String, t: Tensor<T>) -> usize {
        self.names.push(name);
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| t.cast()).collect(),
        }
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Lin {
    w: usize,
    b: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Attn {
    q: Lin,
    k: Lin,
    v: Lin,
    o: Lin,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Block {
    ada: Lin,
    attn: Attn,
    cross: Attn,
    fc1: Lin,
    fc2: Lin,
}

#[derive(Clone, Debug, PartialEq)]
struct Layout {
    embed: Vec<Lin>,
    group_emb: usize,
    t1: Lin,
    t2: Lin,
    cond_gain: usize,
    cond_bias: usize,
    blocks: Vec<Block>,
    final_ada: Lin,
    heads: Vec<Lin>,
}

/// Weight and bias of one affine map, bound into a graph.
#[derive(Clone, Copy, Debug)]
pub struct LinearVars {
    pub w: Var,
    pub b: Var,
}

/// Query, key, value and output maps of one attention layer.
#[derive(Clone, Copy, Debug)]
pub struct AttentionVars {
    pub q: LinearVars,
    pub k: LinearVars,
    pub v: LinearVars,
    pub o: LinearVars,
}

/// Spatio-temporal diffusion transformer `G(x^t, t, c)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SabrDit<T: Real = f32> {
    config: ModelConfig,
    params: ParamStore<T>,
    layout: Layout,
}

/// Parameters bound into one graph.
#[derive(Clone, Debug)]
pub struct Bound {
    pub vars: Vec<Var>,
}

/// Optional capture of every attention-weight tensor produced by a forward
/// pass.
#[derive(Clone, Debug, Default)]
pub struct AttentionTrace {
    pub weights: Vec<Var>,
}

enum Init {
    Xavier(usize, usize),
    Zeros,
    Ones,
    Normal(f64),
}

struct Builder<'a, T: Real> {
    store: ParamStore<T>,
    rng: &'a mut RngStream,
}

impl<T: Real> Builder<'_, T> {
    fn tensor(&mut self, name: String, shape: &[usize], init: Init) -> usize {
        let t = match init {
            Init::Xavier(fi, fo) => {
                let a = (6.0 / (fi + fo) as f64).sqrt();
                Tensor::from_fn(shape, |_| T::of(self.rng.uniform_range(-a, a)))
            }
            Init::Zeros => Tensor::zeros(shape),
            Init::Ones => Tensor::full(shape, T::one()),
            Init::Normal(s) => Tensor::from_fn(shape, |_| T::of(s * self.rng.normal())),
        };
        self.store.push(name, t)
    }

    fn linear(&mut self, name: &str, fin: usize, fout: usize, zero: bool) -> Lin {
        let init = if zero {
            Init::Zeros
        } else {
            Init::Xavier(fin, fout)
        };
        let w = self.tensor(format!("{name}.w"), &[fin, fout], init);
        let b = self.tensor(format!("{name}.b"), &[fout], Init::Zeros);
        Lin { w, b }
    }

    fn attention(&mut self, name: &str, d: usize, dkv: usize) -> Attn {
        Attn {
            q: self.linear(&format!("{name}.q"), d, d, false),
            k: self.linear(&format!("{name}.k"), dkv, d, false),
            v: self.linear(&format!("{name}.v"), dkv, d, false),
            o: self.linear(&format!("{name}.o"), d, d, false),
        }
    }
}

fn build_layout<T: Real>(cfg: &ModelConfig, rng: &mut RngStream) -> (ParamStore<T>, Layout) {
    let d = cfg.width;
    let mut b = Builder {
        store: ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
        },
        rng,
    };
    let embed = cfg
        .group_dims
        .iter()
        .enumerate()
        .map(|(i, &gd)| b.linear(&format!("embed.{i}"), gd, d, false))
        .collect();
    let group_emb = b.tensor("group_emb".into(), &[cfg.groups(), d], Init::Normal(0.02));
    let t1 = b.linear("time.0", d, d, false);
    let t2 = b.linear("time.1", d, d, false);
    let cond_gain = b.tensor("cond_norm.gain".into(), &[cfg.cond_width], Init::Ones);
    let cond_bias = b.tensor("cond_norm.bias".into(), &[cfg.cond_width], Init::Zeros);
    let blocks = (0..cfg.blocks)
        .map(|i| Block {
            ada: b.linear(&format!("blocks.{i}.ada"), d, 9 * d, true),
            attn: b.attention(&format!("blocks.{i}.attn"), d, d),
            cross: b.attention(&format!("blocks.{i}.cross"), d, cfg.cond_width),
            fc1: b.linear(&format!("blocks.{i}.mlp.0"), d, cfg.mlp_ratio * d, false),
            fc2: b.linear(&format!("blocks.{i}.mlp.1"), cfg.mlp_ratio * d, d, false),
        })
        .collect();
    let final_ada = b.linear("final.ada", d, 2 * d, true);
    let heads = cfg
        .group_dims
        .iter()
        .enumerate()
        .map(|(i, &gd)| b.linear(&format!("final.head.{i}"), d, gd, true))
        .collect();
    (
        b.store,
        Layout {
            embed,
            group_emb,
            t1,
            t2,
            cond_gain,
            cond_bias,
            blocks,
            final_ada,
            heads,
        },
    )
}

/// `x ⊙ (1 + scale) + shift`, with `shift` and `scale` broadcast over tokens.
fn modulate<T: Real>(g: &mut Graph<T>, x: Var, shift: Var, scale: Var) -> Result<Var> {
    let s1 = g.add_scalar(scale, T::one());
    let m = g.mul_broadcast(x, s1)?;
    g.add_broadcast(m, shift)
}

// [B, N, d] → [B·h, N, d/h]
fn split_heads<T: Real>(g: &mut Graph<T>, x: Var, heads: usize) -> Result<Var> {
    let s = g.shape(x).to_vec();
    let (b, n, d) = (s[0], s[1], s[2]);
    let r = g.reshape(x, &[b, n, heads, d / heads])?;
    let p = g.permute(r, &[0, 2, 1, 3])?;
    g.reshape(p, &[b * heads, n, d / heads])
}

// [B·h, N, d/h] → [B, N, d]
fn merge_heads<T: Real>(g: &mut Graph<T>, x: Var, batch: usize, heads: usize) -> Result<Var> {
    let s = g.shape(x).to_vec();
    let (n, dh) = (s[1], s[2]);
    let r = g.reshape(x, &[batch, heads, n, dh])?;
    let p = g.permute(r, &[0, 2, 1, 3])?;
    g.reshape(p, &[batch, n, heads * dh])
}

/// Multi-head scaled dot-product attention of queries from `xq` [B, N, d]
/// over keys and values from `xkv` [B, M, d_kv].
pub fn attention<T: Real>(
    g: &mut Graph<T>,
    xq: Var,
    xkv: Var,
    p: &AttentionVars,
    heads: usize,
    trace: Option<&mut AttentionTrace>,
) -> Result<Var> {
    let batch = g.shape(xq)[0];
    let q = g.linear(xq, p.q.w, Some(p.q.b))?;
    let k = g.linear(xkv, p.k.w, Some(p.k.b))?;
    let v = g.linear(xkv, p.v.w, Some(p.v.b))?;
    let d = *g.shape(q).last().unwrap();
    let (q, k, v) = (
        split_heads(g, q, heads)?,
        split_heads(g, k, heads)?,
        split_heads(g, v, heads)?,
    );
    let scores = g.batch_matmul(q, k, true)?;
    let scores = g.scale(scores, T::of(1.0 / ((d / heads) as f64).sqrt()));
    let w = g.softmax(scores)?;
    if let Some(tr) = trace {
        tr.weights.push(w);
    }
    let o = g.batch_matmul(w, v, false)?;
    let o = merge_heads(g, o, batch, heads)?;
    g.linear(o, p.o.w, Some(p.o.b))
}

impl<T: Real> SabrDit<T> {
    /// Fresh model: xavier-uniform linears, zero biases, and exactly zero
    /// adaLN modulation maps and output heads.
    pub fn new(config: ModelConfig, rng: &mut RngStream) -> Result<Self> {
        config.validate()?;
        let (params, layout) = build_layout(&config, rng);
        Ok(SabrDit {
            config,
            params,
            layout,
        })
    }

    /// Model with the given tensors, validated against the layout of
    /// `config`.
    pub fn from_params(
        config: ModelConfig,
        names: Vec<String>,
        tensors: Vec<Tensor<T>>,
    ) -> Result<Self> {
        let mut model = SabrDit::new(config, &mut RngStream::new(0))?;
        if names != model.params.names {
            return Err(SabrError::Contract(
                "parameter names do not match the model layout".into(),
            ));
        }
        for (i, (have, want)) in tensors.iter().zip(&model.params.tensors).enumerate() {
            if have.shape() != want.shape() {
                return Err(SabrError::Dimension(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    names[i],
                    have.shape(),
                    want.shape()
                )));
            }
        }
        model.params.tensors = tensors;
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn cast<U: Real>(&self) -> SabrDit<U> {
        SabrDit {
            config: self.config.clone(),
            params: self.params.cast(),
            layout: self.layout.clone(),
        }
    }

    /// Names of the tensors that gate residual branches or the output.
    pub fn zero_init_names(&self) -> Vec<&str> {
        let mut idx: Vec<usize> = self
            .layout
            .blocks
            .iter()
            .flat_map(|b| [b.ada.w, b.ada.b])
            .collect();
        idx.extend([self.layout.final_ada.w, self.layout.final_ada.b]);
        idx.extend(self.layout.heads.iter().flat_map(|h| [h.w, h.b]));
        idx.into_iter()
            .map(|i| self.params.names[i].as_str())
            .collect()
    }

    /// Adds every parameter to `g`, as gradient leaves when `trainable`.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Bound {
        let vars = self
            .params
            .tensors
            .iter()
            .map(|t| {
                if trainable {
                    g.param(t.clone())
                } else {
                    g.constant(t.clone())
                }
            })
            .collect();
        Bound { vars }
    }

    fn lin(&self, p: &Bound, l: Lin) -> LinearVars {
        LinearVars {
            w: p.vars[l.w],
            b: p.vars[l.b],
        }
    }

    fn attn(&self, p: &Bound, a: Attn) -> AttentionVars {
        AttentionVars {
            q: self.lin(p, a.q),
            k: self.lin(p, a.k),
            v: self.lin(p, a.v),
            o: self.lin(p, a.o),
        }
    }

    fn check_input(&self, x: &[usize], cond: &[usize]) -> Result<()> {
        let dm = self.config.motion_dim();
        if x.len() != 2 || x[1] != dm {
            return Err(SabrError::Dimension(format!(
                "motion input {x:?}, expected [F, {dm}]"
            )));
        }
        if x[0] > self.config.max_frames {
            return Err(SabrError::Capacity(format!(
                "{} frames exceed the model limit of {}",
                x[0], self.config.max_frames
            )));
        }
        if cond.len() != 2 || cond[1] != self.config.cond_width {
            return Err(SabrError::Dimension(format!(
                "conditioning {cond:?}, expected [M, {}]",
                self.config.cond_width
            )));
        }
        Ok(())
    }

    /// Motion tokens [F, G, d]: per-group linear embeddings plus the learned
    /// group embedding and a fixed sinusoidal frame-index embedding.
    pub fn embed_motion(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let f = g.shape(x)[0];
        if f > self.config.max_frames {
            return Err(SabrError::Capacity(format!(
                "{f} frames exceed the model limit of {}",
                self.config.max_frames
            )));
        }
        let d = self.config.width;
        let mut parts = Vec::with_capacity(self.config.groups());
        let mut off = 0;
        for (gi, &gd) in self.config.group_dims.iter().enumerate() {
            let xs = g.slice(x, 1, off, gd)?;
            let l = self.lin(p, self.layout.embed[gi]);
            let e = g.linear(xs, l.w, Some(l.b))?;
            parts.push(g.reshape(e, &[f, 1, d])?);
            off += gd;
        }
        let mut tokens = g.concat(&parts, 1)?;
        if self.config.group_embedding {
            tokens = g.add_broadcast(tokens, p.vars[self.layout.group_emb])?;
        }
        if self.config.temporal_embedding {
            let groups = self.config.groups();
            let mut data = Vec::with_capacity(f * groups * d);
            for fi in 0..f {
                let e = timestep_embedding(fi as f64, d)?;
                for _ in 0..groups {
                    data.extend(e.iter().map(|v| T::of(*v)));
                }
            }
            let pe = g.constant(Tensor::new(&[f, groups, d], data)?);
            tokens = g.add(tokens, pe)?;
        }
        Ok(tokens)
    }

    /// SiLU of the timestep embedding, shared by every modulation map.
    pub fn time_embedding(&self, g: &mut Graph<T>, p: &Bound, t: f64) -> Result<Var> {
        let d = self.config.width;
        let s: Vec<T> = timestep_embedding(t, d)?.into_iter().map(T::of).collect();
        let s = g.constant(Tensor::new(&[d], s)?);
        let (l1, l2) = (self.lin(p, self.layout.t1), self.lin(p, self.layout.t2));
        let h = g.linear(s, l1.w, Some(l1.b))?;
        let h = g.silu(h);
        let e = g.linear(h, l2.w, Some(l2.b))?;
        Ok(g.silu(e))
    }

    /// Normalized conditioning tokens [1, M, d_cond].
    pub fn cond_tokens(&self, g: &mut Graph<T>, p: &Bound, cond: Var) -> Result<Var> {
        let m = g.shape(cond)[0];
        let n = g.layer_norm(
            cond,
            Some(p.vars[self.layout.cond_gain]),
            Some(p.vars[self.layout.cond_bias]),
            T::of(LN_EPS),
        )?;
        g.reshape(n, &[1, m, self.config.cond_width])
    }

    /// One transformer block. Even indices attend within each frame
    /// (spatial), odd indices across frames within each group (temporal).
    pub fn block(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        index: usize,
        x: Var,
        temb: Var,
        cond: Var,
        mut trace: Option<&mut AttentionTrace>,
    ) -> Result<Var> {
        let blk = self.layout.blocks[index];
        let d = self.config.width;
        let heads = self.config.heads;
        let (f, groups) = (g.shape(x)[0], g.shape(x)[1]);
        let ada = self.lin(p, blk.ada);
        let mods = g.linear(temb, ada.w, Some(ada.b))?;
        let m: Vec<Var> = (0..9)
            .map(|i| g.slice(mods, 0, i * d, d))
            .collect::<Result<_>>()?;

        let h = g.layer_norm(x, None, None, T::of(LN_EPS))?;
        let h = modulate(g, h, m[0], m[1])?;
        let attn = self.attn(p, blk.attn);
        let h = if index.is_multiple_of(2) {
            attention(g, h, h, &attn, heads, trace.as_deref_mut())?
        } else {
            let ht = g.permute(h, &[1, 0, 2])?;
            let a = attention(g, ht, ht, &attn, heads, trace.as_deref_mut())?;
            g.permute(a, &[1, 0, 2])?
        };
        let h = g.mul_broadcast(h, m[2])?;
        let x = g.add(x, h)?;

        let h = g.layer_norm(x, None, None, T::of(LN_EPS))?;
        let h = modulate(g, h, m[3], m[4])?;
        let hq = g.reshape(h, &[1, f * groups, d])?;
        let cross = self.attn(p, blk.cross);
        let h = attention(g, hq, cond, &cross, heads, trace)?;
        let h = g.reshape(h, &[f, groups, d])?;
        let h = g.mul_broadcast(h, m[5])?;
        let x = g.add(x, h)?;

        let h = g.layer_norm(x, None, None, T::of(LN_EPS))?;
        let h = modulate(g, h, m[6], m[7])?;
        let (fc1, fc2) = (self.lin(p, blk.fc1), self.lin(p, blk.fc2));
        let h = g.linear(h, fc1.w, Some(fc1.b))?;
        let h = g.gelu(h);
        let h = g.linear(h, fc2.w, Some(fc2.b))?;
        let h = g.mul_broadcast(h, m[8])?;
        g.add(x, h)
    }

    /// `x̂0 = G(x^t, t, c)` for one sequence: `x` is [F, D], `cond` is
    /// [M, d_cond]. Returns a [F, D] node.
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        x: Var,
        t: f64,
        cond: Var,
        mut trace: Option<&mut AttentionTrace>,
    ) -> Result<Var> {
        self.check_input(g.shape(x), g.shape(cond))?;
        let f = g.shape(x)[0];
        let d = self.config.width;
        let mut tokens = self.embed_motion(g, p, x)?;
        let temb = self.time_embedding(g, p, t)?;
        let c = self.cond_tokens(g, p, cond)?;
        for i in 0..self.config.blocks {
            tokens = self.block(g, p, i, tokens, temb, c, trace.as_deref_mut())?;
        }
        let fa = self.lin(p, self.layout.final_ada);
        let mods = g.linear(temb, fa.w, Some(fa.b))?;
        let shift = g.slice(mods, 0, 0, d)?;
        let scale = g.slice(mods, 0, d, d)?;
        let h = g.layer_norm(tokens, None, None, T::of(LN_EPS))?;
        let h = modulate(g, h, shift, scale)?;
        let mut outs = Vec::with_capacity(self.config.groups());
        for gi in 0..self.config.groups() {
            let hg = g.slice(h, 1, gi, 1)?;
            let hg = g.reshape(hg, &[f, d])?;
            let l = self.lin(p, self.layout.heads[gi]);
            outs.push(g.linear(hg, l.w, Some(l.b))?);
        }
        g.concat(&outs, 1)
    }

    /// Gradient-free prediction on plain tensors.
    pub fn predict(&self, x: &Tensor<T>, t: f64, cond: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x.shape(), cond.shape())?;
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let cv = g.constant(cond.clone());
        let out = self.forward(&mut g, &p, xv, t, cv, None)?;
        Ok(g.value(out).clone())
    }
}
