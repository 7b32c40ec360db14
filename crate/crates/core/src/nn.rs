//! Layers shared by the visit encoder and the temporal aggregator.

use crate::autograd::{key_mask, Graph, Var};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// `y = x W + b` with `W` stored as `[in × out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    /// Glorot-uniform weights, zero bias.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        rng: &mut Rng,
    ) -> Self {
        let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weight = store.add(
            format!("{name}.weight"),
            Tensor::uniform(&[in_dim, out_dim], bound, rng).trainable(true),
        );
        let bias = bias.then(|| {
            store.add(format!("{name}.bias"), Tensor::zeros(&[out_dim]).trainable(true))
        });
        Self { weight, bias, in_dim, out_dim }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let y = g.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = g.param(store, b);
                g.add_row(y, b)
            }
            None => Ok(y),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, d: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[d], 1.0).trainable(true)),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[d]).trainable(true)),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        g.layer_norm(x, gamma, beta)
    }
}

/// Pre-norm transformer encoder block:
///
/// ```text
/// x1 = x  + Dropout(MHA(LN1(x)))
/// y  = x1 + Dropout(W2 · ReLU(W1 · LN2(x1)))
/// ```
///
/// with a feed-forward width of `4 · d`.
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub d: usize,
    pub n_heads: usize,
    pub ln1: LayerNorm,
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub ln2: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
}

/// Intermediate values of one block evaluation, for inspection in tests.
#[derive(Clone, Debug)]
pub struct BlockTrace {
    /// Per-head attention matrices `[n × n]`.
    pub attention: Vec<Var>,
    pub output: Var,
}

impl TransformerBlock {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, n_heads: usize, rng: &mut Rng) -> Result<Self> {
        if n_heads == 0 || !d.is_multiple_of(n_heads) {
            return Err(Error::config(format!("width {d} not divisible by {n_heads} heads")));
        }
        Ok(Self {
            d,
            n_heads,
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), d),
            wq: Linear::new(store, &format!("{name}.attn.wq"), d, d, true, rng),
            wk: Linear::new(store, &format!("{name}.attn.wk"), d, d, true, rng),
            wv: Linear::new(store, &format!("{name}.attn.wv"), d, d, true, rng),
            wo: Linear::new(store, &format!("{name}.attn.wo"), d, d, true, rng),
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), d),
            ff1: Linear::new(store, &format!("{name}.ffn.w1"), d, 4 * d, true, rng),
            ff2: Linear::new(store, &format!("{name}.ffn.w2"), 4 * d, d, true, rng),
        })
    }

    /// Runs the block over tokens `x[n × d]`. Keys with `key_keep[j] == false`
    /// receive zero attention from every query.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        key_keep: Option<&[bool]>,
        dropout: f64,
        train: bool,
        rng: &mut Rng,
    ) -> Result<Var> {
        Ok(self.trace(g, store, x, key_keep, dropout, train, rng)?.output)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn trace(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        key_keep: Option<&[bool]>,
        dropout: f64,
        train: bool,
        rng: &mut Rng,
    ) -> Result<BlockTrace> {
        let (n, d) = g.value(x).dims2()?;
        if d != self.d {
            return Err(Error::dim(format!("block width {} got tokens of width {d}", self.d)));
        }
        let mask = match key_keep {
            Some(keep) if keep.len() != n => {
                return Err(Error::dim(format!("key mask of {} for {n} tokens", keep.len())))
            }
            Some(keep) => Some(key_mask(n, keep)),
            None => None,
        };

        let a = self.ln1.forward(g, store, x)?;
        let q = self.wq.forward(g, store, a)?;
        let k = self.wk.forward(g, store, a)?;
        let v = self.wv.forward(g, store, a)?;
        let dh = d / self.n_heads;
        let inv_sqrt = 1.0 / (dh as f64).sqrt();
        let mut heads = Vec::with_capacity(self.n_heads);
        let mut attention = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let qh = g.slice_cols(q, h * dh, dh)?;
            let kh = g.slice_cols(k, h * dh, dh)?;
            let vh = g.slice_cols(v, h * dh, dh)?;
            let kt = g.transpose(kh)?;
            let scores = g.matmul(qh, kt)?;
            let scores = g.scale(scores, inv_sqrt);
            let attn = g.softmax(scores, 1, mask.as_ref())?;
            attention.push(attn);
            heads.push(g.matmul(attn, vh)?);
        }
        let cat = if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads)? };
        let o = self.wo.forward(g, store, cat)?;
        let o = g.dropout(o, dropout, train, rng)?;
        let x1 = g.add(x, o)?;

        let b = self.ln2.forward(g, store, x1)?;
        let f = self.ff1.forward(g, store, b)?;
        let f = g.relu(f);
        let f = self.ff2.forward(g, store, f)?;
        let f = g.dropout(f, dropout, train, rng)?;
        let output = g.add(x1, f)?;
        Ok(BlockTrace { attention, output })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_shapes_and_bias() {
        let mut rng = Rng::new(3);
        let mut store = ParamStore::new();
        let lin = Linear::new(&mut store, "l", 3, 2, true, &mut rng);
        store.get_mut(lin.bias.unwrap()).data_mut().copy_from_slice(&[1.0, -1.0]);
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[4, 3]));
        let y = lin.forward(&mut g, &store, x).unwrap();
        assert_eq!(g.value(y).shape(), &[4, 2]);
        assert_eq!(g.value(y).at(3, 0), 1.0);
        assert_eq!(g.value(y).at(3, 1), -1.0);
    }

    #[test]
    fn block_rejects_indivisible_heads() {
        let mut store = ParamStore::new();
        assert!(TransformerBlock::new(&mut store, "b", 6, 4, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn masked_keys_get_zero_attention() {
        let mut rng = Rng::new(8);
        let mut store = ParamStore::new();
        let block = TransformerBlock::new(&mut store, "b", 8, 2, &mut rng).unwrap();
        let mut g = Graph::new();
        let x = g.constant(Tensor::randn(&[3, 8], 1.0, &mut rng));
        let tr = block
            .trace(&mut g, &store, x, Some(&[true, false, true]), 0.0, false, &mut rng)
            .unwrap();
        for a in tr.attention {
            let a = g.value(a);
            for r in 0..3 {
                assert_eq!(a.at(r, 1), 0.0);
            }
        }
    }
}
