//! Named parameter storage and per-forward graph binding.
//!
//! A model owns plain tensors in a [`ParamStore`]; every forward pass opens a
//! [`Session`] that lazily inserts parameters on a fresh graph. Gradients are
//! read back per parameter id, with zeros for parameters the loss never
//! touched.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{
    AttentionParams, LayerNormParams, MabParams, MabdParams, RffnParams,
};
use crate::error::Result;
use crate::tensor::{NodeId, Tensor, ValueGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<(String, Tensor)>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.entries.push((name.into(), tensor));
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].1
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].1
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].0
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn total_values(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }
}

/// Deterministic weight initializers driven by one rng stream.
pub(crate) struct Init<'r> {
    pub rng: &'r mut ChaCha8Rng,
}

impl Init<'_> {
    /// Uniform fan-in init for projection matrices: U(-1/sqrt(fan_in), ...).
    pub fn linear_weight(&mut self, fan_in: usize, fan_out: usize) -> Tensor {
        let bound = 1.0 / (fan_in as f64).sqrt();
        Tensor::from_fn(&[fan_in, fan_out], |_| self.rng.gen_range(-bound..bound))
    }

    /// Uniform fan-in init for conv kernels of shape (O, C, kh, kw).
    pub fn conv_weight(&mut self, c_out: usize, c_in: usize, k: usize) -> Tensor {
        let bound = 1.0 / ((c_in * k * k) as f64).sqrt();
        Tensor::from_fn(&[c_out, c_in, k, k], |_| self.rng.gen_range(-bound..bound))
    }

    /// Standard normal scaled to variance 1/d (Box-Muller).
    pub fn seed_matrix(&mut self, shape: &[usize], d: usize) -> Tensor {
        let std = 1.0 / (d as f64).sqrt();
        Tensor::from_fn(shape, |_| {
            let u1: f64 = self.rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = self.rng.gen();
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos() * std
        })
    }
}

// Layer parameter handles into the store.

#[derive(Debug, Clone, Copy)]
pub(crate) struct LinearP {
    pub w: ParamId,
    pub b: ParamId,
}

impl LinearP {
    pub fn new(store: &mut ParamStore, init: &mut Init, prefix: &str, d_in: usize, d_out: usize) -> Self {
        Self {
            w: store.add(format!("{prefix}.w"), init.linear_weight(d_in, d_out)),
            b: store.add(format!("{prefix}.b"), Tensor::zeros(&[d_out])),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct RffnP {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl RffnP {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init,
        prefix: &str,
        d_in: usize,
        hidden: usize,
        d_out: usize,
    ) -> Self {
        Self {
            w1: store.add(format!("{prefix}.w1"), init.linear_weight(d_in, hidden)),
            b1: store.add(format!("{prefix}.b1"), Tensor::zeros(&[hidden])),
            w2: store.add(format!("{prefix}.w2"), init.linear_weight(hidden, d_out)),
            b2: store.add(format!("{prefix}.b2"), Tensor::zeros(&[d_out])),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LnP {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LnP {
    pub fn new(store: &mut ParamStore, prefix: &str, d: usize) -> Self {
        Self {
            gain: store.add(format!("{prefix}.gain"), Tensor::full(&[d], 1.0)),
            bias: store.add(format!("{prefix}.bias"), Tensor::zeros(&[d])),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct AttnP {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub w_o: ParamId,
}

impl AttnP {
    pub fn new(store: &mut ParamStore, init: &mut Init, prefix: &str, d: usize) -> Self {
        Self {
            w_q: store.add(format!("{prefix}.wq"), init.linear_weight(d, d)),
            w_k: store.add(format!("{prefix}.wk"), init.linear_weight(d, d)),
            w_v: store.add(format!("{prefix}.wv"), init.linear_weight(d, d)),
            w_o: store.add(format!("{prefix}.wo"), init.linear_weight(d, d)),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct MabP {
    pub attn: AttnP,
    pub ffn: RffnP,
    pub ln1: LnP,
    pub ln2: LnP,
}

impl MabP {
    pub fn new(store: &mut ParamStore, init: &mut Init, prefix: &str, d: usize) -> Self {
        Self {
            attn: AttnP::new(store, init, &format!("{prefix}.attn"), d),
            ffn: RffnP::new(store, init, &format!("{prefix}.ffn"), d, d, d),
            ln1: LnP::new(store, &format!("{prefix}.ln1"), d),
            ln2: LnP::new(store, &format!("{prefix}.ln2"), d),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct MabdP {
    pub self_attn: AttnP,
    pub cross_attn: AttnP,
    pub ffn: RffnP,
    pub ln0: LnP,
    pub ln1: LnP,
    pub ln2: LnP,
}

impl MabdP {
    pub fn new(store: &mut ParamStore, init: &mut Init, prefix: &str, d: usize) -> Self {
        Self {
            self_attn: AttnP::new(store, init, &format!("{prefix}.self_attn"), d),
            cross_attn: AttnP::new(store, init, &format!("{prefix}.cross_attn"), d),
            ffn: RffnP::new(store, init, &format!("{prefix}.ffn"), d, d, d),
            ln0: LnP::new(store, &format!("{prefix}.ln0"), d),
            ln1: LnP::new(store, &format!("{prefix}.ln1"), d),
            ln2: LnP::new(store, &format!("{prefix}.ln2"), d),
        }
    }
}

/// One forward pass: a fresh graph plus lazy parameter bindings.
pub struct Session<'m> {
    pub g: ValueGraph,
    store: &'m ParamStore,
    bound: Vec<Option<NodeId>>,
    pub train: bool,
    pub rng: ChaCha8Rng,
}

impl<'m> Session<'m> {
    pub(crate) fn new(store: &'m ParamStore, train: bool, rng_seed: u64) -> Self {
        Self {
            g: ValueGraph::new(),
            store,
            bound: vec![None; store.len()],
            train,
            rng: ChaCha8Rng::seed_from_u64(rng_seed),
        }
    }

    /// Node for a parameter, inserting it on first use. Parameters require
    /// gradients only in training sessions.
    pub(crate) fn p(&mut self, id: ParamId) -> NodeId {
        if let Some(n) = self.bound[id.0] {
            return n;
        }
        let n = self
            .g
            .leaf(self.store.tensor(id).clone(), self.train);
        self.bound[id.0] = Some(n);
        n
    }

    /// Gradients for every parameter in store order (zeros where unused).
    pub fn parameter_gradients(&self, loss: NodeId) -> Result<Vec<Tensor>> {
        let bound_ids: Vec<NodeId> = self.bound.iter().flatten().copied().collect();
        let grads = self.g.gradients(loss, &bound_ids)?;
        let mut by_param = Vec::with_capacity(self.store.len());
        let mut cursor = 0;
        for (i, slot) in self.bound.iter().enumerate() {
            match slot {
                Some(_) => {
                    by_param.push(grads[cursor].clone());
                    cursor += 1;
                }
                None => by_param.push(Tensor::zeros(self.store.tensor(ParamId(i)).shape())),
            }
        }
        Ok(by_param)
    }

    // Bound-view constructors for the attention blocks.

    pub(crate) fn attn(&mut self, p: &AttnP, heads: usize, logit_scaling: bool) -> AttentionParams {
        AttentionParams {
            w_q: self.p(p.w_q),
            w_k: self.p(p.w_k),
            w_v: self.p(p.w_v),
            w_o: self.p(p.w_o),
            heads,
            logit_scaling,
        }
    }

    pub(crate) fn ffn(&mut self, p: &RffnP) -> RffnParams {
        RffnParams {
            w1: self.p(p.w1),
            b1: self.p(p.b1),
            w2: self.p(p.w2),
            b2: self.p(p.b2),
        }
    }

    pub(crate) fn ln(&mut self, p: &LnP) -> LayerNormParams {
        LayerNormParams {
            gain: self.p(p.gain),
            bias: self.p(p.bias),
        }
    }

    pub(crate) fn mab(&mut self, p: &MabP, heads: usize, scaling: bool, dropout: f64) -> MabParams {
        MabParams {
            attn: self.attn(&p.attn, heads, scaling),
            ffn: self.ffn(&p.ffn),
            ln1: self.ln(&p.ln1),
            ln2: self.ln(&p.ln2),
            dropout,
        }
    }

    pub(crate) fn mabd(&mut self, p: &MabdP, heads: usize, scaling: bool, dropout: f64) -> MabdParams {
        MabdParams {
            self_attn: self.attn(&p.self_attn, heads, scaling),
            cross_attn: self.attn(&p.cross_attn, heads, scaling),
            ffn: self.ffn(&p.ffn),
            ln0: self.ln(&p.ln0),
            ln1: self.ln(&p.ln1),
            ln2: self.ln(&p.ln2),
            dropout,
        }
    }
}
