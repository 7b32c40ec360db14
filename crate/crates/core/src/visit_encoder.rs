//! Per-visit encoder: four images in, one visit embedding out.
//!
//! ```text
//! image ──stub──► x ──condition(slot)──► h ─┐
//!   (×4, shared)                            ├─► self-attention block ─► attention pooling ─► visit embedding
//! ```
//!
//! The stub stands in for a pretrained CNN: either a frozen random projection
//! of the preprocessed pixels or a passthrough for precomputed embeddings.
//! Each projection row is a smooth Gaussian receptive field at a random
//! position with a random amplitude per channel, so like a convolutional
//! encoder every feature sees a local neighbourhood of all three channels.
//! Conditioning is a feature-wise affine map driven by a learned embedding
//! of the (laterality, view) slot:
//!
//! ```text
//! h = (W_scale · e_slot) ⊙ x + W_shift · e_slot
//! ```
//!
//! with `⊙` the elementwise product and `W_scale`, `W_shift` shared by all slots.

use serde::{Deserialize, Serialize};

use crate::autograd::{matmul_raw, Graph, Var};
use crate::cohort::{preprocess_image, ImageConfig, Payload, Slot, VisitRecord};
use crate::error::{Error, Result};
use crate::nn::{Linear, TransformerBlock};
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const PREFIX: &str = "visit_encoder.";

/// Side of the square receptive field of each projection row.
pub const PATCH: usize = 5;
/// Standard deviation, in pixels, of each receptive field.
pub const FIELD_SIGMA: f64 = 1.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderMode {
    RandomProjection,
    Passthrough,
}

/// Frozen per-image encoder.
#[derive(Clone, Debug)]
pub struct ImageEncoderStub {
    pub mode: EncoderMode,
    /// `[d_img × 3·rows·cols]`, present in random-projection mode.
    pub projection: Option<ParamId>,
    pub d_img: usize,
    pub image: ImageConfig,
}

impl ImageEncoderStub {
    pub fn new(
        store: &mut ParamStore,
        mode: EncoderMode,
        image: ImageConfig,
        d_img: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let projection = match mode {
            EncoderMode::RandomProjection => {
                image.validate()?;
                let p = local_projection(d_img, &image, rng);
                Some(store.add(format!("{PREFIX}stub.projection"), p))
            }
            EncoderMode::Passthrough => None,
        };
        Ok(Self { mode, projection, d_img, image })
    }

    /// Gradient-free embedding of one preprocessed image (`[3 × rows × cols]`)
    /// or, in passthrough mode, of a precomputed embedding of width `d_img`.
    pub fn encode_image(&self, store: &ParamStore, input: &Tensor) -> Result<Tensor> {
        match self.mode {
            EncoderMode::Passthrough => {
                if input.len() != self.d_img {
                    return Err(Error::dim(format!(
                        "passthrough expects width {}, got {:?}",
                        self.d_img,
                        input.shape()
                    )));
                }
                Tensor::new(vec![self.d_img], input.data().to_vec())
            }
            EncoderMode::RandomProjection => {
                let want = [3, self.image.rows, self.image.cols];
                if input.shape() != want {
                    return Err(Error::dim(format!(
                        "encoder expects image {want:?}, got {:?}",
                        input.shape()
                    )));
                }
                let p = store.get(self.projection.expect("projection in this mode"));
                let n = input.len();
                let out = matmul_raw(p.data(), input.data(), self.d_img, n, 1);
                Tensor::new(vec![self.d_img], out)
            }
        }
    }

    /// In-graph version of [`encode_image`](Self::encode_image) for a
    /// flattened `[1 × n]` pixel row, used to take pixel gradients.
    pub fn encode_pixels(&self, g: &mut Graph, store: &ParamStore, pixels: Var) -> Result<Var> {
        let id = self
            .projection
            .ok_or_else(|| Error::UnsupportedMode("pixel gradients need random-projection mode".into()))?;
        let p = g.param(store, id);
        let pt = g.transpose(p)?;
        g.matmul(pixels, pt)
    }

    /// Turns one slot payload into the stub input tensor.
    pub fn prepare(&self, payload: &Payload) -> Result<Tensor> {
        match (self.mode, payload) {
            (EncoderMode::RandomProjection, Payload::Image(img)) => preprocess_image(img, &self.image),
            (EncoderMode::Passthrough, Payload::Embedding(e)) => Ok(Tensor::vector(e.clone())),
            (EncoderMode::RandomProjection, Payload::Embedding(_)) => Err(Error::UnsupportedMode(
                "random-projection encoder given a precomputed embedding".into(),
            )),
            (EncoderMode::Passthrough, Payload::Image(_)) => Err(Error::UnsupportedMode(
                "passthrough encoder given raw pixels".into(),
            )),
        }
    }
}

/// `[d × 3·rows·cols]` matrix of random smooth receptive fields. Row `j`
/// is a Gaussian bump of width [`FIELD_SIGMA`] around a uniformly drawn
/// center, truncated to a `PATCH × PATCH` window and scaled by an
/// independent normal amplitude per channel; zeros elsewhere.
fn local_projection(d: usize, image: &ImageConfig, rng: &mut Rng) -> Tensor {
    let (rows, cols) = (image.rows, image.cols);
    let plane = rows * cols;
    let half = PATCH / 2;
    let inv = 1.0 / (2.0 * FIELD_SIGMA * FIELD_SIGMA);
    let mut data = vec![0.0; d * 3 * plane];
    for j in 0..d {
        let (r0, c0) = (rng.below(rows), rng.below(cols));
        let window: Vec<(usize, f64)> = (r0.saturating_sub(half)..(r0 + half + 1).min(rows))
            .flat_map(|r| (c0.saturating_sub(half)..(c0 + half + 1).min(cols)).map(move |c| (r, c)))
            .map(|(r, c)| {
                let d2 = (r as f64 - r0 as f64).powi(2) + (c as f64 - c0 as f64).powi(2);
                (r * cols + c, (-d2 * inv).exp())
            })
            .collect();
        let norm = (3.0 * window.iter().map(|(_, w)| w * w).sum::<f64>()).sqrt();
        let row = &mut data[j * 3 * plane..(j + 1) * 3 * plane];
        for ch in 0..3 {
            let amp = rng.normal() / norm;
            for &(i, w) in &window {
                row[ch * plane + i] = amp * w;
            }
        }
    }
    Tensor::new(vec![d, 3 * plane], data).expect("projection shape")
}

/// Slot-conditioned feature-wise affine transform.
#[derive(Clone, Debug)]
pub struct ViewConditioner {
    /// `[4 × d_e]`, one row per slot in [`Slot::ALL`] order.
    pub e: ParamId,
    /// `[d_img × d_e]`
    pub w_scale: ParamId,
    /// `[d_img × d_e]`
    pub w_shift: ParamId,
    pub d_img: usize,
    pub d_e: usize,
}

impl ViewConditioner {
    pub fn new(store: &mut ParamStore, d_img: usize, d_e: usize, rng: &mut Rng) -> Self {
        let s = 1.0 / (d_e as f64).sqrt();
        Self {
            e: store.add(format!("{PREFIX}cond.e"), Tensor::randn(&[4, d_e], 1.0, rng).trainable(true)),
            w_scale: store.add(
                format!("{PREFIX}cond.w_scale"),
                Tensor::randn(&[d_img, d_e], s, rng).trainable(true),
            ),
            w_shift: store.add(
                format!("{PREFIX}cond.w_shift"),
                Tensor::randn(&[d_img, d_e], 0.1 * s, rng).trainable(true),
            ),
            d_img,
            d_e,
        }
    }

    pub fn condition(&self, g: &mut Graph, store: &ParamStore, x: Var, slot: Slot) -> Result<Var> {
        if g.value(x).len() != self.d_img {
            return Err(Error::dim(format!(
                "conditioner width {} got {:?}",
                self.d_img,
                g.value(x).shape()
            )));
        }
        let x = g.reshape(x, &[1, self.d_img])?;
        let e = g.param(store, self.e);
        let e_slot = g.select_rows(e, &[slot.index()])?;
        let ws = g.param(store, self.w_scale);
        let wt = g.transpose(ws)?;
        let scale = g.matmul(e_slot, wt)?;
        let wsh = g.param(store, self.w_shift);
        let wt = g.transpose(wsh)?;
        let shift = g.matmul(e_slot, wt)?;
        let scaled = g.mul(scale, x)?;
        g.add(scaled, shift)
    }

    /// Index-addressed variant; indices outside `0..4` are a contract error.
    pub fn condition_index(&self, g: &mut Graph, store: &ParamStore, x: Var, slot: usize) -> Result<Var> {
        self.condition(g, store, x, Slot::from_index(slot)?)
    }
}

/// Linear scorer followed by a softmax over tokens.
#[derive(Clone, Debug)]
pub struct AttentionPooler {
    pub scorer: Linear,
}

impl AttentionPooler {
    pub fn new(store: &mut ParamStore, d: usize, rng: &mut Rng) -> Self {
        Self {
            scorer: Linear::new(store, &format!("{PREFIX}pool.scorer"), d, 1, false, rng),
        }
    }

    /// Returns the pooled `[1 × d]` row and the `[n × 1]` pooling weights.
    pub fn pool(&self, g: &mut Graph, store: &ParamStore, tokens: Var) -> Result<(Var, Var)> {
        let scores = self.scorer.forward(g, store, tokens)?;
        let weights = g.softmax(scores, 0, None)?;
        let wt = g.transpose(weights)?;
        let pooled = g.matmul(wt, tokens)?;
        Ok((pooled, weights))
    }
}

#[derive(Clone, Debug)]
pub struct VisitEncoder {
    pub stub: ImageEncoderStub,
    pub conditioner: ViewConditioner,
    pub block: TransformerBlock,
    pub pooler: AttentionPooler,
}

impl VisitEncoder {
    pub fn new(
        store: &mut ParamStore,
        mode: EncoderMode,
        image: ImageConfig,
        d_img: usize,
        n_heads: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let stub = ImageEncoderStub::new(store, mode, image, d_img, rng)?;
        let conditioner = ViewConditioner::new(store, d_img, d_img, rng);
        let block = TransformerBlock::new(store, &format!("{PREFIX}block"), d_img, n_heads, rng)?;
        let pooler = AttentionPooler::new(store, d_img, rng);
        Ok(Self { stub, conditioner, block, pooler })
    }

    pub fn d_img(&self) -> usize {
        self.stub.d_img
    }

    /// Stub embeddings of the four images, in slot order.
    pub fn stub_embeddings(&self, store: &ParamStore, visit: &VisitRecord) -> Result<[Tensor; 4]> {
        let mut out = Vec::with_capacity(4);
        for p in &visit.images {
            out.push(self.stub.encode_image(store, &self.stub.prepare(p)?)?);
        }
        Ok(out.try_into().expect("four slots"))
    }

    /// Self-attention over exactly four conditioned image tokens followed by
    /// attention pooling. Returns `(visit_embedding [1 × d], weights [4 × 1])`.
    pub fn aggregate_visit(&self, g: &mut Graph, store: &ParamStore, tokens: &[Var]) -> Result<(Var, Var)> {
        if tokens.len() != 4 {
            return Err(Error::contract(format!("visit aggregation needs 4 tokens, got {}", tokens.len())));
        }
        let x = g.concat_rows(tokens)?;
        let mut no_rng = Rng::new(0);
        let y = self.block.forward(g, store, x, None, 0.0, false, &mut no_rng)?;
        self.pooler.pool(g, store, y)
    }

    /// Conditioning plus aggregation over stub embeddings already in the graph.
    pub fn fuse(&self, g: &mut Graph, store: &ParamStore, stub: [Var; 4]) -> Result<Var> {
        let mut tokens = Vec::with_capacity(4);
        for (slot, x) in Slot::ALL.into_iter().zip(stub) {
            tokens.push(self.conditioner.condition(g, store, x, slot)?);
        }
        Ok(self.aggregate_visit(g, store, &tokens)?.0)
    }

    /// Full visit embedding `[1 × d_img]` from the raw record.
    pub fn encode_visit(&self, g: &mut Graph, store: &ParamStore, visit: &VisitRecord) -> Result<Var> {
        let emb = self.stub_embeddings(store, visit)?;
        let stub = emb.map(|t| g.constant(t));
        self.fuse(g, store, stub)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::Image;

    fn image_cfg() -> ImageConfig {
        ImageConfig { rows: 8, cols: 8, mean: 0.0, std: 1.0 }
    }

    #[test]
    fn passthrough_is_identity() {
        let mut store = ParamStore::new();
        let stub = ImageEncoderStub::new(&mut store, EncoderMode::Passthrough, image_cfg(), 3, &mut Rng::new(0)).unwrap();
        let v = Tensor::vector(vec![0.5, -1.0, 2.0]);
        assert_eq!(stub.encode_image(&store, &v).unwrap().data(), v.data());
        assert!(stub.encode_image(&store, &Tensor::vector(vec![1.0])).is_err());
        assert!(store.is_empty());
    }

    #[test]
    fn zero_image_projects_to_zero() {
        let mut store = ParamStore::new();
        let stub =
            ImageEncoderStub::new(&mut store, EncoderMode::RandomProjection, image_cfg(), 6, &mut Rng::new(0)).unwrap();
        let z = stub.encode_image(&store, &Tensor::zeros(&[3, 8, 8])).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
        assert!(matches!(
            stub.encode_image(&store, &Tensor::zeros(&[3, 8, 9])),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn projection_matches_explicit_matvec() {
        let mut rng = Rng::new(12);
        let mut store = ParamStore::new();
        let stub = ImageEncoderStub::new(&mut store, EncoderMode::RandomProjection, image_cfg(), 5, &mut rng).unwrap();
        let img = Image::new(8, 8, (0..64).map(|_| rng.normal()).collect()).unwrap();
        let x = preprocess_image(&img, &image_cfg()).unwrap();
        let y = stub.encode_image(&store, &x).unwrap();
        let p = store.get(stub.projection.unwrap());
        for i in 0..5 {
            let mut acc = 0.0;
            for j in 0..x.len() {
                acc += p.at(i, j) * x.data()[j];
            }
            assert!((acc - y.data()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn projection_rows_are_local() {
        let mut store = ParamStore::new();
        let cfg = ImageConfig { rows: 12, cols: 12, mean: 0.0, std: 1.0 };
        let stub = ImageEncoderStub::new(&mut store, EncoderMode::RandomProjection, cfg, 20, &mut Rng::new(3)).unwrap();
        let p = store.get(stub.projection.unwrap());
        for j in 0..20 {
            let hits: Vec<(usize, usize)> =
                (0..144).filter(|&i| p.at(j, i) != 0.0).map(|i| (i / 12, i % 12)).collect();
            assert!(!hits.is_empty() && hits.len() <= PATCH * PATCH);
            let (rmin, rmax) = (hits.iter().map(|h| h.0).min().unwrap(), hits.iter().map(|h| h.0).max().unwrap());
            let (cmin, cmax) = (hits.iter().map(|h| h.1).min().unwrap(), hits.iter().map(|h| h.1).max().unwrap());
            assert!(rmax - rmin < PATCH && cmax - cmin < PATCH);
            // same window in every channel
            for ch in 1..3 {
                for i in 0..144 {
                    assert_eq!(p.at(j, i) != 0.0, p.at(j, ch * 144 + i) != 0.0);
                }
            }
        }
    }

    #[test]
    fn stub_is_frozen() {
        let mut store = ParamStore::new();
        let stub =
            ImageEncoderStub::new(&mut store, EncoderMode::RandomProjection, image_cfg(), 4, &mut Rng::new(1)).unwrap();
        assert!(!store.get(stub.projection.unwrap()).requires_grad);
    }

    fn conditioner(d: usize, seed: u64) -> (ParamStore, ViewConditioner) {
        let mut store = ParamStore::new();
        let c = ViewConditioner::new(&mut store, d, d, &mut Rng::new(seed));
        (store, c)
    }

    #[test]
    fn identity_affine() {
        let (mut store, c) = conditioner(3, 2);
        // e = [1,0,0] for the slot, W_scale first column ones, W_shift zero.
        store.get_mut(c.e).data_mut().copy_from_slice(&[1.0, 0.0, 0.0].repeat(4));
        store.get_mut(c.w_scale).data_mut().copy_from_slice(&[1.0, 0.0, 0.0].repeat(3));
        store.get_mut(c.w_shift).data_mut().fill(0.0);
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![0.3, -2.0, 5.0]));
        let h = c.condition(&mut g, &store, x, Slot::R_MLO).unwrap();
        assert_eq!(g.value(h).data(), &[0.3, -2.0, 5.0]);
    }

    #[test]
    fn zero_input_gives_shift() {
        let (store, c) = conditioner(4, 3);
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[4]));
        let h = c.condition(&mut g, &store, x, Slot::L_MLO).unwrap();
        let (e, ws) = (store.get(c.e), store.get(c.w_shift));
        for i in 0..4 {
            let shift: f64 = (0..4).map(|j| ws.at(i, j) * e.at(1, j)).sum();
            assert!((g.value(h).data()[i] - shift).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_scalar_loop_and_distinguishes_slots() {
        let (store, c) = conditioner(5, 4);
        let mut rng = Rng::new(40);
        let xv: Vec<f64> = (0..5).map(|_| rng.normal()).collect();
        let (e, wsc, wsh) = (store.get(c.e), store.get(c.w_scale), store.get(c.w_shift));
        let mut outs = Vec::new();
        for slot in Slot::ALL {
            let mut g = Graph::new();
            let x = g.constant(Tensor::vector(xv.clone()));
            let h = c.condition(&mut g, &store, x, slot).unwrap();
            let s = slot.index();
            for i in 0..5 {
                let mut sc = 0.0;
                let mut sh = 0.0;
                for j in 0..5 {
                    sc += wsc.at(i, j) * e.at(s, j);
                    sh += wsh.at(i, j) * e.at(s, j);
                }
                assert!((g.value(h).data()[i] - (sc * xv[i] + sh)).abs() < 1e-12);
            }
            outs.push(g.value(h).data().to_vec());
        }
        for a in 0..4 {
            for b in a + 1..4 {
                assert_ne!(outs[a], outs[b]);
            }
        }
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(xv));
        assert!(matches!(c.condition_index(&mut g, &store, x, 4), Err(Error::Contract(_))));
    }

    fn encoder(seed: u64) -> (ParamStore, VisitEncoder) {
        let mut store = ParamStore::new();
        let enc = VisitEncoder::new(&mut store, EncoderMode::Passthrough, image_cfg(), 8, 2, &mut Rng::new(seed)).unwrap();
        (store, enc)
    }

    #[test]
    fn identical_tokens_pool_uniformly() {
        let (store, enc) = encoder(5);
        let mut g = Graph::new();
        let t = g.constant(Tensor::randn(&[1, 8], 1.0, &mut Rng::new(6)));
        let (pooled, w) = enc.aggregate_visit(&mut g, &store, &[t, t, t, t]).unwrap();
        for &wi in g.value(w).data() {
            assert!((wi - 0.25).abs() < 1e-15);
        }
        // every row of the block output is the same transformed token
        let x = g.concat_rows(&[t]).unwrap();
        let y = enc.block.forward(&mut g, &store, x, None, 0.0, false, &mut Rng::new(0)).unwrap();
        for (a, b) in g.value(pooled).data().iter().zip(g.value(y).data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn pooled_output_ignores_token_order() {
        let (store, enc) = encoder(7);
        let mut rng = Rng::new(8);
        let mut g = Graph::new();
        let toks: Vec<Var> = (0..4).map(|_| g.constant(Tensor::randn(&[1, 8], 1.0, &mut rng))).collect();
        let (a, _) = enc.aggregate_visit(&mut g, &store, &toks).unwrap();
        let perm = [toks[2], toks[0], toks[3], toks[1]];
        let (b, _) = enc.aggregate_visit(&mut g, &store, &perm).unwrap();
        for (x, y) in g.value(a).data().iter().zip(g.value(b).data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn wrong_token_count_is_contract_error() {
        let (store, enc) = encoder(9);
        let mut g = Graph::new();
        let t = g.constant(Tensor::zeros(&[1, 8]));
        assert!(matches!(enc.aggregate_visit(&mut g, &store, &[t, t, t]), Err(Error::Contract(_))));
    }

    #[test]
    fn pooling_weights_are_a_distribution() {
        let (store, enc) = encoder(10);
        let mut rng = Rng::new(11);
        let mut g = Graph::new();
        let toks: Vec<Var> = (0..4).map(|_| g.constant(Tensor::randn(&[1, 8], 2.0, &mut rng))).collect();
        let (_, w) = enc.aggregate_visit(&mut g, &store, &toks).unwrap();
        let w = g.value(w).data();
        assert!(w.iter().all(|&x| x > 0.0));
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
