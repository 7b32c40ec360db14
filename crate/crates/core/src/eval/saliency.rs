//! Pixel saliency `|∂p[k]/∂pixel|` for the four images of the now visit.

use crate::autograd::{Graph, Var};
use serde::{Deserialize, Serialize};

use crate::cohort::{
    expand_all, preprocess_image, LesionTruth, Payload, Slot, SubjectTimeline, TrajectorySample, HISTORY_LEN, HORIZON,
};
use crate::error::{Error, Result};
use crate::model::{RiskModel, VisitFeatures};
use crate::rng::Rng;
use crate::temporal::HistoryMask;
use crate::tensor::Tensor;
use crate::visit_encoder::EncoderMode;

/// Nonnegative map normalized so its maximum is 1 (or all zeros).
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMap {
    pub slot: Slot,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

/// Saliency of the year-`k` risk with respect to the now visit's pixels
/// (after resizing to the encoder resolution), summed over the replicated
/// channels. Earlier visits enter as fixed features.
pub fn saliency(model: &RiskModel, sample: &TrajectorySample, year: usize) -> Result<[SaliencyMap; 4]> {
    if model.cfg.encoder_mode != EncoderMode::RandomProjection {
        return Err(Error::UnsupportedMode("saliency needs the random-projection image encoder".into()));
    }
    if !(1..=HORIZON).contains(&year) {
        return Err(Error::contract(format!("follow-up year {year} outside 1..5")));
    }
    let now = sample.now_visit();
    let image_cfg = model.cfg.image;
    let (rows, cols) = (image_cfg.rows, image_cfg.cols);
    let plane = rows * cols;

    let mut g = Graph::new();
    let mut pixels = Vec::with_capacity(4);
    let mut stub = Vec::with_capacity(4);
    for slot in Slot::ALL {
        let img = match now.payload(slot) {
            Payload::Image(img) => img,
            Payload::Embedding(_) => {
                return Err(Error::UnsupportedMode("saliency needs image payloads, not embeddings".into()))
            }
        };
        let x = preprocess_image(img, &image_cfg)?;
        let x = g.input(Tensor::row(x.into_data()));
        pixels.push(x);
        stub.push(model.visit_encoder.stub.encode_pixels(&mut g, &model.store, x)?);
    }
    let now_var = model.visit_encoder.fuse(&mut g, &model.store, stub.try_into().expect("four slots"))?;

    let mut visits: [Option<Var>; HISTORY_LEN] = [None; HISTORY_LEN];
    for (s, v) in sample.history.iter().enumerate().take(HISTORY_LEN - 1) {
        if let Some(v) = v {
            let var = match model.encode_visit_features(v)? {
                VisitFeatures::Fused(t) => g.constant(t),
                VisitFeatures::Images(emb) => {
                    let stub = emb.map(|t| g.constant(t));
                    model.visit_encoder.fuse(&mut g, &model.store, stub)?
                }
            };
            visits[s] = Some(var);
        }
    }
    visits[HISTORY_LEN - 1] = Some(now_var);
    let mask = HistoryMask::new(sample.present())?;
    let z = model.logits_from_visits(&mut g, &visits, mask, false, &mut Rng::new(0))?;
    let p = g.sigmoid(z);
    let pk = g.slice_cols(p, year - 1, 1)?;
    let target = g.sum(pk);
    g.backward(target)?;

    let maps: Vec<SaliencyMap> = Slot::ALL
        .into_iter()
        .zip(&pixels)
        .map(|(slot, &x)| {
            let grad = g.grad(x).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; 3 * plane]);
            let mut data: Vec<f64> = (0..plane)
                .map(|i| (grad[i] + grad[plane + i] + grad[2 * plane + i]).abs())
                .collect();
            let max = data.iter().cloned().fold(0.0, f64::max);
            if max > 0.0 {
                data.iter_mut().for_each(|v| *v /= max);
            }
            SaliencyMap { slot, rows, cols, data }
        })
        .collect();
    Ok(maps.try_into().expect("four maps"))
}

/// Share of the saliency mass among the top `fraction` of pixels that lies
/// inside `support`. Zero for an all-zero map.
pub fn top_fraction_overlap(map: &[f64], support: &[bool], fraction: f64) -> Result<f64> {
    if map.len() != support.len() || map.is_empty() {
        return Err(Error::dim(format!("map of {} pixels, support of {}", map.len(), support.len())));
    }
    let k = ((fraction * map.len() as f64).ceil() as usize).clamp(1, map.len());
    let mut order: Vec<usize> = (0..map.len()).collect();
    // Descending by value; ties broken by index for determinism.
    order.sort_by(|&a, &b| map[b].total_cmp(&map[a]).then(a.cmp(&b)));
    let top = &order[..k];
    let total: f64 = top.iter().map(|&i| map[i]).sum();
    if total == 0.0 {
        return Ok(0.0);
    }
    Ok(top.iter().filter(|&&i| support[i]).map(|&i| map[i]).sum::<f64>() / total)
}

/// Mean [`top_fraction_overlap`] over the two views on the lesion side of the
/// now visit. The map must have the image's native resolution.
pub fn lesion_overlap(
    model: &RiskModel,
    sample: &TrajectorySample,
    truth: &LesionTruth,
    year: usize,
    fraction: f64,
) -> Result<f64> {
    let maps = saliency(model, sample, year)?;
    let mut acc = 0.0;
    for slot in Slot::ALL.into_iter().filter(|s| s.laterality == truth.laterality) {
        let Payload::Image(img) = sample.now_visit().payload(slot) else {
            return Err(Error::contract("saliency needs image payloads"));
        };
        let map = &maps[slot.index()];
        if (map.rows, map.cols) != (img.rows(), img.cols()) {
            return Err(Error::contract(format!(
                "image is {}x{} but the encoder works at {}x{}",
                img.rows(),
                img.cols(),
                map.rows,
                map.cols
            )));
        }
        acc += top_fraction_overlap(&map.data, &truth.support(slot.view, map.rows, map.cols), fraction)?;
    }
    Ok(acc / 2.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalizationRow {
    pub subject_id: String,
    pub now_year: i32,
    pub trained: f64,
    pub untrained: f64,
}

/// Paired lesion overlap of two models on the latest sample of up to `limit`
/// diagnosed subjects, in input order.
pub fn compare_localization(
    trained: &RiskModel,
    untrained: &RiskModel,
    subjects: &[SubjectTimeline],
    truth: &[LesionTruth],
    limit: usize,
    year: usize,
    fraction: f64,
) -> Result<Vec<LocalizationRow>> {
    let mut rows = Vec::new();
    for tl in subjects.iter().filter(|t| t.is_diagnosed()) {
        if rows.len() == limit {
            break;
        }
        let Some(lt) = truth.iter().find(|l| l.subject_id == tl.subject_id) else {
            return Err(Error::contract(format!("no lesion truth for {}", tl.subject_id)));
        };
        let Some(sample) = expand_all(std::slice::from_ref(tl)).pop() else { continue };
        rows.push(LocalizationRow {
            subject_id: tl.subject_id.clone(),
            now_year: sample.now_year,
            trained: lesion_overlap(trained, &sample, lt, year, fraction)?,
            untrained: lesion_overlap(untrained, &sample, lt, year, fraction)?,
        });
    }
    Ok(rows)
}
