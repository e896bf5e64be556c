use super::data::Letterbox;
use super::model::Model;
use crate::autodiff::Tape;
use crate::error::Result;
use crate::image::{GrayImage, SegMask};
use crate::tensor::Tensor;

/// Per-position argmax over the class axis of `N×C×H×W` logits; ties go to
/// the lowest class index.
pub fn argmax_classes(logits: &Tensor) -> Result<Vec<u8>> {
    let [n, c, h, w] = logits.dims4()?;
    let hw = h * w;
    let d = logits.data();
    let mut out = Vec::with_capacity(n * hw);
    for s in 0..n {
        for p in 0..hw {
            let mut best = 0;
            for k in 1..c {
                if d[(s * c + k) * hw + p] > d[(s * c + best) * hw + p] {
                    best = k;
                }
            }
            out.push(best as u8);
        }
    }
    Ok(out)
}

/// Segments each spectrogram at the model resolution and maps the labels
/// back to the image's own resolution.
pub fn predict_masks(model: &Model, images: &[&GrayImage], batch_size: usize) -> Result<Vec<SegMask>> {
    let (h, w) = model.config.input_hw;
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(batch_size.max(1)) {
        let boxes: Vec<Letterbox> = chunk
            .iter()
            .map(|im| Letterbox::new((im.rows, im.cols), (h, w)))
            .collect();
        let mut data = Vec::with_capacity(chunk.len() * h * w);
        for (im, lb) in chunk.iter().zip(&boxes) {
            data.extend(lb.image(im));
        }
        let mut tape = Tape::new();
        let input = tape.constant(Tensor::new(vec![chunk.len(), 1, h, w], data)?);
        let fwd = model.forward(&mut tape, input, false)?;
        let labels = argmax_classes(tape.value(fwd.seg_logits))?;
        for ((im, lb), l) in chunk.iter().zip(&boxes).zip(labels.chunks(h * w)) {
            out.push(SegMask::new(im.rows, im.cols, lb.restore(l))?);
        }
    }
    Ok(out)
}

pub fn predict_mask(model: &Model, image: &GrayImage) -> Result<SegMask> {
    Ok(predict_masks(model, &[image], 1)?.remove(0))
}
