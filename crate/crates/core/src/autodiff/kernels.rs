//! Slice-level forward/backward kernels behind the tape operations.
//!
//! All kernels work on `N×C×H×W` row-major buffers and fan out over the
//! batch axis through [`crate::par`].

use crate::par;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    fn col_rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn out_plane(&self) -> usize {
        self.ho * self.wo
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

/// `c = a·b + beta·c` with arbitrary strides; `a` is m×k, `b` is k×n.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    assert!(k == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    assert!(c.len() > (m - 1) * rsc + (n - 1) * csc);
    // SAFETY: the asserts above bound every index the routine touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

fn im2col(x: &[f64], g: &ConvGeom, col: &mut [f64]) {
    let (k, s, p) = (g.k, g.stride, g.pad as isize);
    let plane = g.out_plane();
    for ci in 0..g.c {
        let xc = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let dst = &mut col[row * plane..(row + 1) * plane];
                for oy in 0..g.ho {
                    let iy = (oy * s) as isize + ki as isize - p;
                    let out_row = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        out_row.fill(0.0);
                        continue;
                    }
                    let src = &xc[iy as usize * g.w..(iy as usize + 1) * g.w];
                    if s == 1 {
                        let lo = (p - kj as isize).clamp(0, g.wo as isize) as usize;
                        let hi = (g.w as isize + p - kj as isize).clamp(0, g.wo as isize) as usize;
                        out_row[..lo].fill(0.0);
                        if hi > lo {
                            let start = (lo as isize + kj as isize - p) as usize;
                            out_row[lo..hi].copy_from_slice(&src[start..start + hi - lo]);
                        }
                        out_row[hi.max(lo)..].fill(0.0);
                    } else {
                        for (ox, v) in out_row.iter_mut().enumerate() {
                            let ix = (ox * s) as isize + kj as isize - p;
                            *v = if ix < 0 || ix >= g.w as isize {
                                0.0
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }
}

fn col2im(col: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let (k, s, p) = (g.k, g.stride, g.pad as isize);
    let plane = g.out_plane();
    for ci in 0..g.c {
        let dxc = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let src = &col[row * plane..(row + 1) * plane];
                for oy in 0..g.ho {
                    let iy = (oy * s) as isize + ki as isize - p;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut dxc[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * s) as isize + kj as isize - p;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward(x: &[f64], w: &[f64], b: &[f64], g: &ConvGeom) -> Vec<f64> {
    let plane = g.out_plane();
    let in_len = g.c * g.h * g.w;
    let rows = g.col_rows();
    let mut out = vec![0.0; g.n * g.o * plane];
    par::for_each_chunk(&mut out, g.o * plane, |n, y| {
        for (oc, bias) in b.iter().enumerate() {
            y[oc * plane..(oc + 1) * plane].fill(*bias);
        }
        let xn = &x[n * in_len..(n + 1) * in_len];
        if g.is_pointwise() {
            gemm(g.o, rows, plane, w, (rows, 1), xn, (plane, 1), 1.0, y, (plane, 1));
        } else {
            let mut col = vec![0.0; rows * plane];
            im2col(xn, g, &mut col);
            gemm(g.o, rows, plane, w, (rows, 1), &col, (plane, 1), 1.0, y, (plane, 1));
        }
    });
    out
}

pub struct ConvGrads {
    pub dx: Option<Vec<f64>>,
    pub dw: Vec<f64>,
    pub db: Vec<f64>,
}

pub fn conv2d_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    g: &ConvGeom,
    need_dx: bool,
) -> ConvGrads {
    let plane = g.out_plane();
    let in_len = g.c * g.h * g.w;
    let rows = g.col_rows();
    let per_sample = par::map_indexed(g.n, |n| {
        let xn = &x[n * in_len..(n + 1) * in_len];
        let dyn_ = &dy[n * g.o * plane..(n + 1) * g.o * plane];
        let mut dw = vec![0.0; g.o * rows];
        let db: Vec<f64> = dyn_.chunks(plane).map(|c| c.iter().sum()).collect();
        let mut dx = None;
        if g.is_pointwise() {
            // dW = dY·Xᵀ
            gemm(g.o, plane, rows, dyn_, (plane, 1), xn, (1, plane), 0.0, &mut dw, (rows, 1));
            if need_dx {
                let mut d = vec![0.0; in_len];
                gemm(rows, g.o, plane, w, (1, rows), dyn_, (plane, 1), 0.0, &mut d, (plane, 1));
                dx = Some(d);
            }
        } else {
            let mut col = vec![0.0; rows * plane];
            im2col(xn, g, &mut col);
            gemm(g.o, plane, rows, dyn_, (plane, 1), &col, (1, plane), 0.0, &mut dw, (rows, 1));
            if need_dx {
                gemm(rows, g.o, plane, w, (1, rows), dyn_, (plane, 1), 0.0, &mut col, (plane, 1));
                let mut d = vec![0.0; in_len];
                col2im(&col, g, &mut d);
                dx = Some(d);
            }
        }
        (dx, dw, db)
    });
    let mut dw_parts = Vec::with_capacity(g.n);
    let mut db_parts = Vec::with_capacity(g.n);
    let mut dx_all = need_dx.then(|| Vec::with_capacity(g.n * in_len));
    for (dx, dw, db) in per_sample {
        if let (Some(all), Some(d)) = (dx_all.as_mut(), dx) {
            all.extend_from_slice(&d);
        }
        dw_parts.push(dw);
        db_parts.push(db);
    }
    ConvGrads {
        dx: dx_all,
        dw: par::ordered_sum(dw_parts, g.o * rows),
        db: par::ordered_sum(db_parts, g.o),
    }
}

/// Normalised binomial row of length `k` (e.g. `[1, 2, 1] / 4` for k = 3).
pub fn binomial_row(k: usize) -> Vec<f64> {
    let mut row = vec![1.0];
    for _ in 1..k {
        let mut next = vec![1.0; row.len() + 1];
        for i in 1..row.len() {
            next[i] = row[i - 1] + row[i];
        }
        row = next;
    }
    let total: f64 = row.iter().sum();
    row.iter().map(|v| v / total).collect()
}

/// Reflect (mirror without edge repeat) an index into `0..n`.
pub fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Precomputed gather tables for a depthwise binomial blur + subsample.
#[derive(Clone, Debug)]
pub struct BlurPlan {
    pub nc: usize,
    pub h: usize,
    pub w: usize,
    pub ho: usize,
    pub wo: usize,
    taps: Vec<f64>,
    rows: Vec<usize>,
    cols: Vec<usize>,
}

impl BlurPlan {
    pub fn new(nc: usize, h: usize, w: usize, k: usize, stride: usize) -> Self {
        let taps = binomial_row(k);
        let pad = (k / 2) as isize;
        let ho = h.div_ceil(stride);
        let wo = w.div_ceil(stride);
        let table = |out: usize, n: usize| -> Vec<usize> {
            (0..out)
                .flat_map(|i| (0..k).map(move |a| reflect((i * stride) as isize + a as isize - pad, n)))
                .collect()
        };
        Self {
            nc,
            h,
            w,
            ho,
            wo,
            rows: table(ho, h),
            cols: table(wo, w),
            taps,
        }
    }

    fn k(&self) -> usize {
        self.taps.len()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let (k, ip, op) = (self.k(), self.h * self.w, self.ho * self.wo);
        let mut out = vec![0.0; self.nc * op];
        par::for_each_chunk(&mut out, op, |c, y| {
            let xc = &x[c * ip..(c + 1) * ip];
            for i in 0..self.ho {
                let ri = &self.rows[i * k..(i + 1) * k];
                for j in 0..self.wo {
                    let cj = &self.cols[j * k..(j + 1) * k];
                    let mut acc = 0.0;
                    for (a, &r) in ri.iter().enumerate() {
                        let mut row_acc = 0.0;
                        for (b, &cc) in cj.iter().enumerate() {
                            row_acc += self.taps[b] * xc[r * self.w + cc];
                        }
                        acc += self.taps[a] * row_acc;
                    }
                    y[i * self.wo + j] = acc;
                }
            }
        });
        out
    }

    pub fn backward(&self, dy: &[f64]) -> Vec<f64> {
        let (k, ip, op) = (self.k(), self.h * self.w, self.ho * self.wo);
        let mut dx = vec![0.0; self.nc * ip];
        par::for_each_chunk(&mut dx, ip, |c, dxc| {
            let dyc = &dy[c * op..(c + 1) * op];
            for i in 0..self.ho {
                let ri = &self.rows[i * k..(i + 1) * k];
                for j in 0..self.wo {
                    let cj = &self.cols[j * k..(j + 1) * k];
                    let g = dyc[i * self.wo + j];
                    for (a, &r) in ri.iter().enumerate() {
                        let ga = g * self.taps[a];
                        for (b, &cc) in cj.iter().enumerate() {
                            dxc[r * self.w + cc] += ga * self.taps[b];
                        }
                    }
                }
            }
        });
        dx
    }
}

/// Max pool over `nc` planes; returns values and the flat argmax index of
/// each output (first maximum in row-major scan order).
pub fn max_pool_forward(
    x: &[f64],
    nc: usize,
    (h, w): (usize, usize),
    window: usize,
    stride: usize,
) -> (Vec<f64>, Vec<usize>, usize, usize) {
    let ho = (h - window) / stride + 1;
    let wo = (w - window) / stride + 1;
    let op = ho * wo;
    let per_plane = par::map_indexed(nc, |c| {
        let base = c * h * w;
        let mut vals = Vec::with_capacity(op);
        let mut idx = Vec::with_capacity(op);
        for i in 0..ho {
            for j in 0..wo {
                let mut best = f64::NEG_INFINITY;
                let mut arg = usize::MAX;
                for a in 0..window {
                    for b in 0..window {
                        let p = base + (i * stride + a) * w + j * stride + b;
                        if arg == usize::MAX || x[p] > best {
                            best = x[p];
                            arg = p;
                        }
                    }
                }
                vals.push(best);
                idx.push(arg);
            }
        }
        (vals, idx)
    });
    let mut vals = Vec::with_capacity(nc * op);
    let mut idx = Vec::with_capacity(nc * op);
    for (v, i) in per_plane {
        vals.extend(v);
        idx.extend(i);
    }
    (vals, idx, ho, wo)
}
