//! Additive-hazard risk head and the reweighted masked cross-entropy.
//!
//! ```text
//! p[k] = σ( B(m) + Σ_{i ≤ k} ReLU(H_i(m)) ),   k = 1..5
//! ```
//!
//! The hazards are nonnegative, so the curve is nondecreasing in `k`.

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::cohort::{TrajectorySample, HORIZON};
use crate::error::{Error, Result};
use crate::nn::Linear;
use crate::params::ParamStore;
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const PREFIX: &str = "survival_head.";

#[derive(Clone, Debug)]
pub struct HazardHead {
    pub d: usize,
    /// `d → 1`
    pub base: Linear,
    /// `d → 5`; column `i` is the independent linear map for year `i + 1`.
    pub hazards: Linear,
}

/// `[5 × 5]` with ones on and above the diagonal: `(h U)[k] = Σ_{i ≤ k} h[i]`.
fn cumsum_matrix() -> Tensor {
    let mut data = vec![0.0; HORIZON * HORIZON];
    for i in 0..HORIZON {
        for k in i..HORIZON {
            data[i * HORIZON + k] = 1.0;
        }
    }
    Tensor::new(vec![HORIZON, HORIZON], data).expect("5x5")
}

impl HazardHead {
    pub fn new(store: &mut ParamStore, d: usize, rng: &mut Rng) -> Self {
        Self {
            d,
            base: Linear::new(store, &format!("{PREFIX}base"), d, 1, true, rng),
            hazards: Linear::new(store, &format!("{PREFIX}hazards"), d, HORIZON, true, rng),
        }
    }

    /// Cumulative logits `z[k] = B(m) + Σ_{i ≤ k} ReLU(H_i(m))`, shape `[1 × 5]`.
    pub fn logits(&self, g: &mut Graph, store: &ParamStore, m: Var) -> Result<Var> {
        if g.value(m).len() != self.d {
            return Err(Error::dim(format!(
                "hazard head width {} got {:?}",
                self.d,
                g.value(m).shape()
            )));
        }
        let m = g.reshape(m, &[1, self.d])?;
        let b = self.base.forward(g, store, m)?;
        let raw = self.hazards.forward(g, store, m)?;
        let h = g.relu(raw);
        let u = g.constant(cumsum_matrix());
        let cum = g.matmul(h, u)?;
        let ones = g.constant(Tensor::full(&[1, HORIZON], 1.0));
        let b5 = g.matmul(b, ones)?;
        g.add(b5, cum)
    }

    /// `σ(logits)`, shape `[1 × 5]`.
    pub fn risk_curve(&self, g: &mut Graph, store: &ParamStore, m: Var) -> Result<Var> {
        let z = self.logits(g, store, m)?;
        Ok(g.sigmoid(z))
    }
}

/// Cumulative risk for years 1..5 after the reference visit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RiskCurve(pub [f64; HORIZON]);

impl RiskCurve {
    pub fn from_slice(p: &[f64]) -> Result<Self> {
        let p: [f64; HORIZON] = p
            .try_into()
            .map_err(|_| Error::dim(format!("risk curve of length {}", p.len())))?;
        Ok(Self(p))
    }

    /// Risk at follow-up year `k` (1-based).
    pub fn at(&self, k: usize) -> f64 {
        self.0[k - 1]
    }

    pub fn is_monotone(&self) -> bool {
        self.0.windows(2).all(|w| w[0] <= w[1])
    }
}

/// Per-(year, label) weights `w[k][v]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w: [[f64; 2]; HORIZON],
}

impl LossWeights {
    pub fn uniform() -> Self {
        Self { w: [[1.0; 2]; HORIZON] }
    }

    pub fn get(&self, k: usize, label: bool) -> f64 {
        self.w[k][label as usize]
    }
}

/// Known-label counts per (year, label value).
pub fn label_counts(samples: &[TrajectorySample]) -> [[usize; 2]; HORIZON] {
    let mut c = [[0usize; 2]; HORIZON];
    for s in samples {
        for k in 0..HORIZON {
            if s.label_mask[k] {
                c[k][s.labels[k] as usize] += 1;
            }
        }
    }
    c
}

/// `w[k][v] = N_known(k) / (2 · max(1, count(k, v)))`.
pub fn compute_loss_weights(samples: &[TrajectorySample]) -> Result<LossWeights> {
    weights_from_counts(&label_counts(samples))
}

pub fn weights_from_counts(counts: &[[usize; 2]; HORIZON]) -> Result<LossWeights> {
    let mut w = [[0.0; 2]; HORIZON];
    for k in 0..HORIZON {
        let n = counts[k][0] + counts[k][1];
        if n == 0 {
            return Err(Error::Weighting { year: k + 1 });
        }
        for v in 0..2 {
            w[k][v] = n as f64 / (2.0 * counts[k][v].max(1) as f64);
        }
    }
    Ok(LossWeights { w })
}

/// Per-year coefficients of the loss on logits `z`:
/// `loss = Σ_k a[k]·softplus(z[k]) − Σ_k b[k]·z[k]`, with `a[k] = w/n_known`
/// at known years and 0 elsewhere, `b[k] = a[k]·y[k]`.
fn coefficients(
    labels: &[bool; HORIZON],
    mask: &[bool; HORIZON],
    weights: &LossWeights,
) -> Option<([f64; HORIZON], [f64; HORIZON])> {
    let n = mask.iter().filter(|&&m| m).count();
    if n == 0 {
        return None;
    }
    let mut a = [0.0; HORIZON];
    let mut b = [0.0; HORIZON];
    for k in 0..HORIZON {
        if mask[k] {
            a[k] = weights.get(k, labels[k]) / n as f64;
            if labels[k] {
                b[k] = a[k];
            }
        }
    }
    Some((a, b))
}

/// Weighted masked BCE on cumulative logits `z[1 × 5]`, normalized by the
/// number of known years. `None` means every year is masked and the sample
/// should be skipped.
///
/// Uses `BCE(σ(z), y) = softplus(z) − y·z`, which is exact for large `|z|`.
pub fn survival_loss(
    g: &mut Graph,
    logits: Var,
    labels: &[bool; HORIZON],
    mask: &[bool; HORIZON],
    weights: &LossWeights,
) -> Result<Option<Var>> {
    if g.value(logits).len() != HORIZON {
        return Err(Error::dim(format!("loss expects 5 logits, got {:?}", g.value(logits).shape())));
    }
    let Some((a, b)) = coefficients(labels, mask, weights) else {
        return Ok(None);
    };
    let z = g.reshape(logits, &[1, HORIZON])?;
    let sp = g.softplus(z);
    let a = g.constant(Tensor::row(a.to_vec()));
    let b = g.constant(Tensor::row(b.to_vec()));
    let pos = g.mul(sp, a)?;
    let pos = g.sum(pos);
    let neg = g.mul(z, b)?;
    let neg = g.sum(neg);
    Ok(Some(g.sub(pos, neg)?))
}

/// Value of the same loss from probabilities.
pub fn survival_loss_value(
    curve: &RiskCurve,
    labels: &[bool; HORIZON],
    mask: &[bool; HORIZON],
    weights: &LossWeights,
) -> Option<f64> {
    let n = mask.iter().filter(|&&m| m).count();
    if n == 0 {
        return None;
    }
    let mut total = 0.0;
    for k in 0..HORIZON {
        if mask[k] {
            let p = curve.0[k];
            let bce = if labels[k] { -p.ln() } else { -(1.0 - p).ln() };
            total += weights.get(k, labels[k]) * bce;
        }
    }
    Some(total / n as f64)
}

/// Counts samples whose loss was skipped because no year was known.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SkipCounter {
    pub skipped: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sigmoid(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    fn head(store: &mut ParamStore, d: usize, seed: u64) -> HazardHead {
        HazardHead::new(store, d, &mut Rng::new(seed))
    }

    fn curve(g: &mut Graph, store: &ParamStore, h: &HazardHead, m: Tensor) -> Vec<f64> {
        let m = g.constant(m);
        let p = h.risk_curve(g, store, m).unwrap();
        g.value(p).data().to_vec()
    }

    #[test]
    fn zero_head_is_one_half() {
        let mut store = ParamStore::new();
        let h = head(&mut store, 3, 0);
        for id in store.ids().collect::<Vec<_>>() {
            store.get_mut(id).data_mut().fill(0.0);
        }
        let p = curve(&mut Graph::new(), &store, &h, Tensor::vector(vec![1.0, 2.0, 3.0]));
        assert_eq!(p, vec![0.5; 5]);
    }

    #[test]
    fn hand_hazards() {
        // B(m) = −2 through the bias, hazards [0.5, 0.3, 0, −1, 0] through theirs.
        let mut store = ParamStore::new();
        let h = head(&mut store, 2, 1);
        store.get_mut(h.base.weight).data_mut().fill(0.0);
        store.get_mut(h.hazards.weight).data_mut().fill(0.0);
        store.get_mut(h.base.bias.unwrap()).data_mut()[0] = -2.0;
        store
            .get_mut(h.hazards.bias.unwrap())
            .data_mut()
            .copy_from_slice(&[0.5, 0.3, 0.0, -1.0, 0.0]);
        let p = curve(&mut Graph::new(), &store, &h, Tensor::vector(vec![0.7, -0.2]));
        let want = [-1.5, -1.2, -1.2, -1.2, -1.2].map(sigmoid);
        for k in 0..5 {
            assert!((p[k] - want[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn width_mismatch() {
        let mut store = ParamStore::new();
        let h = head(&mut store, 4, 2);
        let mut g = Graph::new();
        let m = g.constant(Tensor::zeros(&[3]));
        assert!(matches!(h.logits(&mut g, &store, m), Err(Error::Dimension(_))));
    }

    #[test]
    fn balanced_counts_give_unit_weights() {
        let w = weights_from_counts(&[[7, 7]; 5]).unwrap();
        assert_eq!(w, LossWeights::uniform());
    }

    #[test]
    fn ninety_ten() {
        let mut c = [[5, 5]; 5];
        c[2] = [90, 10];
        let w = weights_from_counts(&c).unwrap();
        assert!((w.w[2][0] - 100.0 / 180.0).abs() < 1e-15);
        assert_eq!(w.w[2][1], 5.0);
    }

    #[test]
    fn empty_cell_clamped_and_empty_year_rejected() {
        let mut c = [[5, 5]; 5];
        c[0] = [12, 0];
        let w = weights_from_counts(&c).unwrap();
        assert_eq!(w.w[0][1], 6.0);
        c[3] = [0, 0];
        assert!(matches!(weights_from_counts(&c), Err(Error::Weighting { year: 4 })));
    }

    #[test]
    fn single_known_year_at_half_is_ln2() {
        let mut g = Graph::new();
        let z = g.constant(Tensor::row(vec![0.0; 5]));
        let mask = [false, false, true, false, false];
        for y in [false, true] {
            let labels = [y; 5];
            let l = survival_loss(&mut g, z, &labels, &mask, &LossWeights::uniform()).unwrap().unwrap();
            assert!((g.value(l).data()[0] - std::f64::consts::LN_2).abs() < 1e-15);
        }
    }

    #[test]
    fn all_masked_is_skipped() {
        let mut g = Graph::new();
        let z = g.constant(Tensor::row(vec![0.0; 5]));
        assert!(survival_loss(&mut g, z, &[true; 5], &[false; 5], &LossWeights::uniform())
            .unwrap()
            .is_none());
        assert!(survival_loss_value(&RiskCurve([0.5; 5]), &[true; 5], &[false; 5], &LossWeights::uniform()).is_none());
    }

    #[test]
    fn confident_correct_prediction_has_tiny_loss() {
        let mut g = Graph::new();
        let z = g.constant(Tensor::row(vec![-40.0, -40.0, 40.0, 40.0, 40.0]));
        let labels = [false, false, true, true, true];
        let l = survival_loss(&mut g, z, &labels, &[true; 5], &LossWeights::uniform()).unwrap().unwrap();
        assert!(g.value(l).data()[0] < 1e-15);
    }

    #[test]
    fn logits_and_probability_forms_agree() {
        let mut rng = Rng::new(9);
        for _ in 0..200 {
            let zs: Vec<f64> = (0..5).map(|_| 3.0 * rng.normal()).collect();
            let labels: [bool; 5] = std::array::from_fn(|_| rng.bernoulli(0.5));
            let mut mask: [bool; 5] = std::array::from_fn(|_| rng.bernoulli(0.6));
            mask[0] = true;
            let mut w = LossWeights::uniform();
            for k in 0..5 {
                w.w[k] = [0.2 + rng.uniform(), 0.2 + 3.0 * rng.uniform()];
            }
            let mut g = Graph::new();
            let z = g.constant(Tensor::row(zs.clone()));
            let l = survival_loss(&mut g, z, &labels, &mask, &w).unwrap().unwrap();
            let p = RiskCurve::from_slice(&zs.iter().map(|&z| sigmoid(z)).collect::<Vec<_>>()).unwrap();
            let v = survival_loss_value(&p, &labels, &mask, &w).unwrap();
            assert!((g.value(l).data()[0] - v).abs() < 1e-12);
        }
    }
}
