//! History aggregation over the five yearly slots (offsets −4..0).
//!
//! Each present visit embedding is projected to the model width, offset by a
//! fixed sinusoidal encoding of its slot, and passed through one masked
//! self-attention block. The history embedding `m` is the mean of the block
//! outputs at present slots.

use std::fmt;
use std::str::FromStr;

use crate::autograd::{Graph, Var};
use crate::cohort::HISTORY_LEN;
use crate::error::{Error, Result};
use crate::nn::{Linear, TransformerBlock};
use crate::params::ParamStore;
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const PREFIX: &str = "time_aggregator.";

/// Which of the five slots (oldest first) hold a visit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct HistoryMask {
    present: [bool; HISTORY_LEN],
}

impl HistoryMask {
    pub fn new(present: [bool; HISTORY_LEN]) -> Result<Self> {
        if !present[HISTORY_LEN - 1] {
            return Err(Error::contract("history mask must include offset 0"));
        }
        Ok(Self { present })
    }

    /// Only the now visit.
    pub fn now_only() -> Self {
        let mut present = [false; HISTORY_LEN];
        present[HISTORY_LEN - 1] = true;
        Self { present }
    }

    pub fn present(&self) -> [bool; HISTORY_LEN] {
        self.present
    }

    pub fn is_present(&self, slot: usize) -> bool {
        self.present[slot]
    }

    pub fn count(&self) -> usize {
        self.present.iter().filter(|&&p| p).count()
    }

    /// Present slot indices, ascending.
    pub fn slots(&self) -> Vec<usize> {
        (0..HISTORY_LEN).filter(|&s| self.present[s]).collect()
    }

    pub fn intersect(&self, other: &HistoryMask) -> HistoryMask {
        HistoryMask {
            present: std::array::from_fn(|s| self.present[s] && other.present[s]),
        }
    }
}

impl fmt::Display for HistoryMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in self.present {
            f.write_str(if p { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for HistoryMask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bits: Vec<char> = s.chars().collect();
        if bits.len() != HISTORY_LEN || bits.iter().any(|c| *c != '0' && *c != '1') {
            return Err(Error::config(format!("history mask {s:?} is not a 5-bit string")));
        }
        Self::new(std::array::from_fn(|i| bits[i] == '1'))
    }
}

/// Sinusoidal encoding of slot position `pos` (0 = oldest):
/// `[sin(pos/10000^(2i/d)), cos(pos/10000^(2i/d))]` interleaved.
pub fn sinusoid(pos: usize, d: usize) -> Result<Tensor> {
    if d == 0 || !d.is_multiple_of(2) {
        return Err(Error::config(format!("temporal encoding width {d} must be even")));
    }
    let mut v = vec![0.0; d];
    for i in 0..d / 2 {
        let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / d as f64);
        v[2 * i] = angle.sin();
        v[2 * i + 1] = angle.cos();
    }
    Ok(Tensor::vector(v))
}

/// Encoding for a year offset in `−4..=0`.
pub fn temporal_encoding(offset: i32, d: usize) -> Result<Tensor> {
    if !(-(HISTORY_LEN as i32 - 1)..=0).contains(&offset) {
        return Err(Error::contract(format!("history offset {offset} outside -4..0")));
    }
    sinusoid((offset + HISTORY_LEN as i32 - 1) as usize, d)
}

/// Fixed `[5 × d]` encoding table, row `s` for slot `s`.
pub fn encoding_table(d: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(HISTORY_LEN * d);
    for s in 0..HISTORY_LEN {
        data.extend_from_slice(sinusoid(s, d)?.data());
    }
    Tensor::new(vec![HISTORY_LEN, d], data)
}

#[derive(Clone, Debug)]
pub struct TimeAggregator {
    pub d_in: usize,
    pub d_visit: usize,
    pub dropout: f64,
    /// Visit embedding width → model width.
    pub input: Linear,
    pub block: TransformerBlock,
    pub encoding: Tensor,
    /// Skip the attention block (test harness only).
    pub identity_block: bool,
}

impl TimeAggregator {
    pub fn new(
        store: &mut ParamStore,
        d_in: usize,
        d_visit: usize,
        n_heads: usize,
        dropout: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::config(format!("dropout {dropout} outside [0, 1)")));
        }
        let encoding = encoding_table(d_visit)?;
        let input = Linear::new(store, &format!("{PREFIX}input"), d_in, d_visit, true, rng);
        let block = TransformerBlock::new(store, &format!("{PREFIX}block"), d_visit, n_heads, rng)?;
        Ok(Self { d_in, d_visit, dropout, input, block, encoding, identity_block: false })
    }

    /// Aggregates the visits at present slots; `visits[s]` must be `Some`
    /// exactly where `mask` is set.
    pub fn aggregate_history(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        visits: &[Option<Var>; HISTORY_LEN],
        mask: HistoryMask,
        train: bool,
        rng: &mut Rng,
    ) -> Result<Var> {
        let mut zero = None;
        let mut tokens = Vec::with_capacity(HISTORY_LEN);
        for (s, v) in visits.iter().enumerate() {
            match (v, mask.is_present(s)) {
                (Some(v), true) => tokens.push(*v),
                (None, false) => {
                    let z = *zero.get_or_insert_with(|| g.constant(Tensor::zeros(&[1, self.d_in])));
                    tokens.push(z);
                }
                _ => {
                    return Err(Error::contract(format!(
                        "slot {s}: visit presence disagrees with mask {mask}"
                    )))
                }
            }
        }
        let tokens: [Var; HISTORY_LEN] = tokens.try_into().expect("five slots");
        self.aggregate_padded(g, store, &tokens, mask, train, rng)
    }

    /// Aggregation over all five slot buffers; absent slots are excluded as
    /// attention keys and from pooling, so their contents never matter.
    pub fn aggregate_padded(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        tokens: &[Var; HISTORY_LEN],
        mask: HistoryMask,
        train: bool,
        rng: &mut Rng,
    ) -> Result<Var> {
        for &t in tokens {
            let shape = g.value(t).shape();
            if shape.last() != Some(&self.d_in) || g.value(t).len() != self.d_in {
                return Err(Error::dim(format!(
                    "visit embedding {shape:?}, expected width {}",
                    self.d_in
                )));
            }
        }
        let rows = tokens
            .iter()
            .map(|&t| g.reshape(t, &[1, self.d_in]))
            .collect::<Result<Vec<_>>>()?;
        let x = g.concat_rows(&rows)?;
        let x = self.input.forward(g, store, x)?;
        let enc = g.constant(self.encoding.clone());
        let x = g.add(x, enc)?;
        let x = g.dropout(x, self.dropout, train, rng)?;
        let y = if self.identity_block {
            x
        } else {
            let keep = mask.present();
            self.block.forward(g, store, x, Some(&keep), self.dropout, train, rng)?
        };
        let present = g.select_rows(y, &mask.slots())?;
        let m = g.mean_rows(present)?;
        g.dropout(m, self.dropout, train, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oldest_slot_is_sin0_cos0() {
        let t = temporal_encoding(-4, 6).unwrap();
        assert_eq!(t.data(), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn leading_pair_is_sin_cos_of_position() {
        for off in -4..=0 {
            let pos = f64::from(off + 4);
            let t = temporal_encoding(off, 10).unwrap();
            assert_eq!(t.data()[0], pos.sin());
            assert_eq!(t.data()[1], pos.cos());
        }
    }

    #[test]
    fn direct_formula_pos3_d8() {
        let t = temporal_encoding(-1, 8).unwrap();
        for j in 0..8 {
            let i = (j / 2) as f64;
            let a = 3.0 / 10000f64.powf(2.0 * i / 8.0);
            let want = if j % 2 == 0 { a.sin() } else { a.cos() };
            assert!((t.data()[j] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn odd_width_is_config_error() {
        assert!(matches!(temporal_encoding(0, 7), Err(Error::Config(_))));
    }

    #[test]
    fn mask_bitstrings() {
        let m: HistoryMask = "10101".parse().unwrap();
        assert_eq!(m.slots(), vec![0, 2, 4]);
        assert_eq!(m.to_string(), "10101");
        assert!("10100".parse::<HistoryMask>().is_err());
        assert!("1011".parse::<HistoryMask>().is_err());
        assert_eq!(HistoryMask::now_only().to_string(), "00001");
    }

    fn agg(seed: u64, d: usize) -> (ParamStore, TimeAggregator) {
        let mut store = ParamStore::new();
        let a = TimeAggregator::new(&mut store, d, d, 2, 0.25, &mut Rng::new(seed)).unwrap();
        (store, a)
    }

    #[test]
    fn absent_slot_contents_do_not_matter() {
        let (store, a) = agg(1, 8);
        let mut rng = Rng::new(2);
        let now = Tensor::randn(&[1, 8], 1.0, &mut rng);
        let mask = HistoryMask::now_only();
        let mut outs = Vec::new();
        for fill in [0.0, 3.0] {
            let mut g = Graph::new();
            let mut toks = [g.constant(Tensor::full(&[1, 8], fill)); 5];
            toks[4] = g.constant(now.clone());
            let m = a.aggregate_padded(&mut g, &store, &toks, mask, false, &mut rng).unwrap();
            outs.push(g.value(m).data().to_vec());
        }
        assert_eq!(outs[0], outs[1]);
    }

    #[test]
    fn offsets_are_distinguished() {
        let (store, a) = agg(3, 8);
        let mut rng = Rng::new(4);
        let v = Tensor::randn(&[1, 8], 1.0, &mut rng);
        let mut g = Graph::new();
        let x = g.constant(v);
        let single = a
            .aggregate_history(&mut g, &store, &[None, None, None, None, Some(x)], HistoryMask::now_only(), false, &mut rng)
            .unwrap();
        let pair = a
            .aggregate_history(
                &mut g,
                &store,
                &[None, None, None, Some(x), Some(x)],
                "00011".parse().unwrap(),
                false,
                &mut rng,
            )
            .unwrap();
        let diff: f64 = g
            .value(single)
            .data()
            .iter()
            .zip(g.value(pair).data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff > 1e-9);
    }

    #[test]
    fn presence_must_match_mask() {
        let (store, a) = agg(5, 8);
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 8]));
        let r = a.aggregate_history(&mut g, &store, &[Some(x), None, None, None, Some(x)], HistoryMask::now_only(), false, &mut Rng::new(0));
        assert!(matches!(r, Err(Error::Contract(_))));
        let y = g.constant(Tensor::zeros(&[1, 6]));
        let r = a.aggregate_history(&mut g, &store, &[None, None, None, None, Some(y)], HistoryMask::now_only(), false, &mut Rng::new(0));
        assert!(matches!(r, Err(Error::Dimension(_))));
    }
}
