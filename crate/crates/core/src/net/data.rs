use super::loss::IGNORE_INDEX;
use crate::error::{bail, Result};
use crate::image::{GrayImage, SegMask};

/// Maps 8-bit intensities onto [-1, 1].
pub fn scale_intensity(v: u8) -> f64 {
    v as f64 / 127.5 - 1.0
}

/// Nearest-neighbour index map with top-left alignment.
pub fn nearest_index(dst: usize, dst_len: usize, src_len: usize) -> usize {
    ((dst * src_len) / dst_len).min(src_len - 1)
}

pub fn resize_nearest<T: Copy>(src: &[T], (rows, cols): (usize, usize), (nr, nc): (usize, usize)) -> Vec<T> {
    let mut out = Vec::with_capacity(nr * nc);
    for r in 0..nr {
        let sr = nearest_index(r, nr, rows);
        for c in 0..nc {
            out.push(src[sr * cols + nearest_index(c, nc, cols)]);
        }
    }
    out
}

/// Aspect-preserving fit of a `src` raster into a `target` canvas.
///
/// The content is resized (nearest neighbour) by a single scale factor and
/// anchored top-left; the remaining canvas replicates the edge values and
/// is excluded from the loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Letterbox {
    pub src: (usize, usize),
    pub target: (usize, usize),
    pub content: (usize, usize),
}

impl Letterbox {
    pub fn new(src: (usize, usize), target: (usize, usize)) -> Self {
        let s = (target.0 as f64 / src.0 as f64).min(target.1 as f64 / src.1 as f64);
        let fit = |n: usize, t: usize| ((n as f64 * s).round() as usize).clamp(1, t);
        Self {
            src,
            target,
            content: (fit(src.0, target.0), fit(src.1, target.1)),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.src == self.target
    }

    fn place<T: Copy>(&self, src: &[T], pad: Option<T>) -> Vec<T> {
        let inner = resize_nearest(src, self.src, self.content);
        let (tr, tc) = self.target;
        let (cr, cc) = self.content;
        let mut out = Vec::with_capacity(tr * tc);
        for r in 0..tr {
            for c in 0..tc {
                let v = match pad {
                    Some(p) if r >= cr || c >= cc => p,
                    _ => inner[r.min(cr - 1) * cc + c.min(cc - 1)],
                };
                out.push(v);
            }
        }
        out
    }

    pub fn image(&self, img: &GrayImage) -> Vec<f64> {
        self.place(&img.pixels, None)
            .into_iter()
            .map(scale_intensity)
            .collect()
    }

    pub fn targets(&self, mask: &SegMask) -> Vec<usize> {
        let labels: Vec<usize> = mask.labels.iter().map(|&l| l as usize).collect();
        self.place(&labels, Some(IGNORE_INDEX))
    }

    /// Crops the content region of a target-sized label map and resizes it
    /// back to the source resolution.
    pub fn restore(&self, labels: &[u8]) -> Vec<u8> {
        let (cr, cc) = self.content;
        let tc = self.target.1;
        let crop: Vec<u8> = (0..cr)
            .flat_map(|r| labels[r * tc..r * tc + cc].iter().copied())
            .collect();
        resize_nearest(&crop, self.content, self.src)
    }
}

/// One network-ready training example.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Vec<f64>,
    pub targets: Vec<usize>,
    pub flow_type: usize,
}

impl Sample {
    pub fn from_case(img: &GrayImage, mask: &SegMask, flow_type: usize, input_hw: (usize, usize)) -> Result<Self> {
        if (img.rows, img.cols) != (mask.rows, mask.cols) {
            bail!(
                Dimension,
                "image {}x{} and mask {}x{} differ",
                img.rows,
                img.cols,
                mask.rows,
                mask.cols
            );
        }
        let lb = Letterbox::new((img.rows, img.cols), input_hw);
        Ok(Self {
            image: lb.image(img),
            targets: lb.targets(mask),
            flow_type,
        })
    }
}
