//! Convolution kernels built on im2col + GEMM.
//!
//! Work is split into fixed-size sample chunks. The chunk size does not
//! depend on the thread count and partial weight gradients are summed in
//! chunk order, so results are bit-identical for any degree of parallelism.

use rayon::prelude::*;

const CHUNK: usize = 8;

/// `c = a · b + beta · c` with `a: m×k`, `b: k×n`, optionally stored transposed.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: bounds asserted above; strides describe the stated layouts.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    fn patch_len(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn out_pixels(&self) -> usize {
        self.oh * self.ow
    }

    fn chunks(&self) -> usize {
        self.n.div_ceil(CHUNK)
    }

    fn chunk_range(&self, ci: usize) -> (usize, usize) {
        let s0 = ci * CHUNK;
        (s0, (s0 + CHUNK).min(self.n))
    }

    /// Unfolds samples `s0..s1` into a `[c·kh·kw, (s1−s0)·oh·ow]` matrix.
    fn im2col(&self, x: &[f64], s0: usize, s1: usize) -> Vec<f64> {
        let p = self.out_pixels();
        let cols = (s1 - s0) * p;
        let mut col = vec![0.0; self.patch_len() * cols];
        for s in s0..s1 {
            let base = (s - s0) * p;
            for ch in 0..self.c {
                let plane = &x[(s * self.c + ch) * self.h * self.w..][..self.h * self.w];
                for ki in 0..self.kh {
                    for kj in 0..self.kw {
                        let row = (ch * self.kh + ki) * self.kw + kj;
                        let dst = &mut col[row * cols + base..][..p];
                        for oy in 0..self.oh {
                            let iy = (oy * self.stride + ki) as isize - self.pad as isize;
                            if iy < 0 || iy >= self.h as isize {
                                continue;
                            }
                            let src = &plane[iy as usize * self.w..][..self.w];
                            for ox in 0..self.ow {
                                let ix = (ox * self.stride + kj) as isize - self.pad as isize;
                                if ix >= 0 && ix < self.w as isize {
                                    dst[oy * self.ow + ox] = src[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        col
    }

    /// Folds a column matrix back onto samples `s0..s1`, accumulating into `dx`.
    fn col2im(&self, col: &[f64], s0: usize, s1: usize, dx: &mut [f64]) {
        let p = self.out_pixels();
        let cols = (s1 - s0) * p;
        for s in s0..s1 {
            let base = (s - s0) * p;
            for ch in 0..self.c {
                let plane = &mut dx[((s - s0) * self.c + ch) * self.h * self.w..][..self.h * self.w];
                for ki in 0..self.kh {
                    for kj in 0..self.kw {
                        let row = (ch * self.kh + ki) * self.kw + kj;
                        let src = &col[row * cols + base..][..p];
                        for oy in 0..self.oh {
                            let iy = (oy * self.stride + ki) as isize - self.pad as isize;
                            if iy < 0 || iy >= self.h as isize {
                                continue;
                            }
                            let dst = &mut plane[iy as usize * self.w..][..self.w];
                            for ox in 0..self.ow {
                                let ix = (ox * self.stride + kj) as isize - self.pad as isize;
                                if ix >= 0 && ix < self.w as isize {
                                    dst[ix as usize] += src[oy * self.ow + ox];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Copies `[o, s·p]` chunk layout into NCHW samples or back.
    fn chunk_to_nchw(&self, chunk: &[f64], samples: usize, out: &mut [f64]) {
        let p = self.out_pixels();
        for s in 0..samples {
            for o in 0..self.o {
                out[(s * self.o + o) * p..][..p]
                    .copy_from_slice(&chunk[o * samples * p + s * p..][..p]);
            }
        }
    }

    fn nchw_to_chunk(&self, src: &[f64], samples: usize) -> Vec<f64> {
        let p = self.out_pixels();
        let mut chunk = vec![0.0; self.o * samples * p];
        for s in 0..samples {
            for o in 0..self.o {
                chunk[o * samples * p + s * p..][..p]
                    .copy_from_slice(&src[(s * self.o + o) * p..][..p]);
            }
        }
        chunk
    }
}

pub(crate) fn conv2d_forward(g: &ConvGeom, x: &[f64], w: &[f64]) -> Vec<f64> {
    let per_sample = g.o * g.out_pixels();
    let mut y = vec![0.0; g.n * per_sample];
    y.par_chunks_mut(CHUNK * per_sample)
        .enumerate()
        .for_each(|(ci, out)| {
            let (s0, s1) = g.chunk_range(ci);
            let samples = s1 - s0;
            let col = g.im2col(x, s0, s1);
            let mut prod = vec![0.0; g.o * samples * g.out_pixels()];
            gemm(
                g.o,
                g.patch_len(),
                samples * g.out_pixels(),
                w,
                false,
                &col,
                false,
                0.0,
                &mut prod,
            );
            g.chunk_to_nchw(&prod, samples, out);
        });
    y
}

/// Returns `(dx, dw)`; each is computed only when requested.
pub(crate) fn conv2d_backward(
    g: &ConvGeom,
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    need_dx: bool,
    need_dw: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let p = g.out_pixels();
    let k = g.patch_len();
    let parts: Vec<(Option<Vec<f64>>, Option<Vec<f64>>)> = (0..g.chunks())
        .into_par_iter()
        .map(|ci| {
            let (s0, s1) = g.chunk_range(ci);
            let samples = s1 - s0;
            let dy_chunk = g.nchw_to_chunk(&dy[s0 * g.o * p..s1 * g.o * p], samples);
            let dw_part = if need_dw {
                let col = g.im2col(x, s0, s1);
                let mut dw = vec![0.0; g.o * k];
                gemm(g.o, samples * p, k, &dy_chunk, false, &col, true, 0.0, &mut dw);
                Some(dw)
            } else {
                None
            };
            let dx_part = if need_dx {
                let mut dcol = vec![0.0; k * samples * p];
                gemm(k, g.o, samples * p, w, true, &dy_chunk, false, 0.0, &mut dcol);
                let mut dx = vec![0.0; samples * g.c * g.h * g.w];
                g.col2im(&dcol, s0, s1, &mut dx);
                Some(dx)
            } else {
                None
            };
            (dx_part, dw_part)
        })
        .collect();

    let mut dx = need_dx.then(|| Vec::with_capacity(x.len()));
    let mut dw = need_dw.then(|| vec![0.0; w.len()]);
    for (dx_part, dw_part) in parts {
        if let (Some(acc), Some(part)) = (dx.as_mut(), dx_part) {
            acc.extend_from_slice(&part);
        }
        if let (Some(acc), Some(part)) = (dw.as_mut(), dw_part) {
            for (a, b) in acc.iter_mut().zip(&part) {
                *a += b;
            }
        }
    }
    (dx, dw)
}
