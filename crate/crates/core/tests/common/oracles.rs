//! Brute-force reference implementations, written independently of the
//! library kernels.

#![allow(dead_code)]

/// Direct convolution with zero padding; all buffers row-major NCHW.
#[allow(clippy::too_many_arguments)]
pub fn conv2d(
    x: &[f64],
    [n, c, h, w]: [usize; 4],
    wt: &[f64],
    [o, _, k, _]: [usize; 4],
    b: &[f64],
    stride: usize,
    pad: usize,
) -> (Vec<f64>, usize, usize) {
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (w + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; n * o * ho * wo];
    for s in 0..n {
        for oc in 0..o {
            for i in 0..ho {
                for j in 0..wo {
                    let mut acc = b[oc];
                    for ic in 0..c {
                        for di in 0..k {
                            for dj in 0..k {
                                let r = (i * stride + di) as isize - pad as isize;
                                let q = (j * stride + dj) as isize - pad as isize;
                                if r < 0 || q < 0 || r >= h as isize || q >= w as isize {
                                    continue;
                                }
                                acc += x[((s * c + ic) * h + r as usize) * w + q as usize]
                                    * wt[((oc * c + ic) * k + di) * k + dj];
                            }
                        }
                    }
                    out[((s * o + oc) * ho + i) * wo + j] = acc;
                }
            }
        }
    }
    (out, ho, wo)
}

/// Window scan keeping the first maximum in row-major order.
pub fn max_pool(x: &[f64], [n, c, h, w]: [usize; 4], window: usize, stride: usize) -> (Vec<f64>, usize, usize) {
    let ho = (h - window) / stride + 1;
    let wo = (w - window) / stride + 1;
    let mut out = Vec::new();
    for p in 0..n * c {
        for i in 0..ho {
            for j in 0..wo {
                let mut best = f64::NEG_INFINITY;
                for di in 0..window {
                    for dj in 0..window {
                        let v = x[(p * h + i * stride + di) * w + j * stride + dj];
                        if v > best {
                            best = v;
                        }
                    }
                }
                out.push(best);
            }
        }
    }
    (out, ho, wo)
}

/// Row `k-1` of Pascal's triangle, normalised.
pub fn binomial(k: usize) -> Vec<f64> {
    let mut row = vec![1.0f64];
    for _ in 1..k {
        let mut next = vec![1.0; row.len() + 1];
        for i in 1..row.len() {
            next[i] = row[i - 1] + row[i];
        }
        row = next;
    }
    let s: f64 = row.iter().sum();
    row.iter().map(|v| v / s).collect()
}

/// Mirror padding (edge pixel not repeated), depthwise binomial blur, then
/// subsampling from the first row and column.
pub fn blur_pool(x: &[f64], [n, c, h, w]: [usize; 4], k: usize, stride: usize) -> (Vec<f64>, usize, usize) {
    let p = (k - 1) / 2;
    let row = binomial(k);
    let mirror = |i: isize, len: usize| -> usize {
        if len == 1 {
            return 0;
        }
        let period = 2 * (len as isize - 1);
        let m = i.rem_euclid(period);
        (if m < len as isize { m } else { period - m }) as usize
    };
    let (hp, wp) = (h + 2 * p, w + 2 * p);
    let ho = h.div_ceil(stride);
    let wo = w.div_ceil(stride);
    let mut out = Vec::new();
    for plane in 0..n * c {
        let padded: Vec<f64> = (0..hp * wp)
            .map(|idx| {
                let r = mirror((idx / wp) as isize - p as isize, h);
                let q = mirror((idx % wp) as isize - p as isize, w);
                x[(plane * h + r) * w + q]
            })
            .collect();
        for i in 0..ho {
            for j in 0..wo {
                let mut acc = 0.0;
                for di in 0..k {
                    for dj in 0..k {
                        acc += row[di] * row[dj] * padded[(i * stride + di) * wp + j * stride + dj];
                    }
                }
                out.push(acc);
            }
        }
    }
    (out, ho, wo)
}

/// Mean of `-ln softmax(logits)[target]` over non-ignored positions.
pub fn cross_entropy(logits: &[f64], n: usize, c: usize, inner: usize, targets: &[usize], ignore: Option<usize>) -> f64 {
    let mut total = 0.0;
    let mut count = 0;
    for s in 0..n {
        for r in 0..inner {
            let t = targets[s * inner + r];
            if Some(t) == ignore {
                continue;
            }
            let z: Vec<f64> = (0..c).map(|k| logits[(s * c + k) * inner + r]).collect();
            let m = z.iter().cloned().fold(f64::MIN, f64::max);
            let denom: f64 = z.iter().map(|v| (v - m).exp()).sum();
            total += -((z[t] - m).exp() / denom).ln();
            count += 1;
        }
    }
    total / count as f64
}

pub fn upsample2x(x: &[f64], [n, c, h, w]: [usize; 4]) -> Vec<f64> {
    let mut out = vec![0.0; n * c * 4 * h * w];
    for p in 0..n * c {
        for i in 0..h {
            for j in 0..w {
                for (di, dj) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    out[(p * 2 * h + 2 * i + di) * 2 * w + 2 * j + dj] = x[(p * h + i) * w + j];
                }
            }
        }
    }
    out
}

pub fn global_avg_pool(x: &[f64], [n, c, h, w]: [usize; 4]) -> Vec<f64> {
    (0..n * c)
        .map(|p| {
            let mut s = 0.0;
            for v in &x[p * h * w..(p + 1) * h * w] {
                s += v;
            }
            s / (h * w) as f64
        })
        .collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
