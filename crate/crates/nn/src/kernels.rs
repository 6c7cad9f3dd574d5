//! Raw forward/backward kernels over flat slices in `[N, C, H, W]` layout.
//!
//! All reductions run in a fixed index order so results are bitwise
//! reproducible for identical inputs.

/// Geometry of one 2-D convolution (square kernel, symmetric zero padding).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.pad - self.k) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pad - self.k) / self.stride + 1
    }

    fn patch_len(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn out_plane(&self) -> usize {
        self.out_h() * self.out_w()
    }
}

/// `c = a·b (+ beta·c)` where `a` is `m×k`, `b` is `k×n`; either may be read transposed.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_t {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if b_t {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    // SAFETY: the slices are exactly m×k, k×n and m×n and the strides above
    // address only elements inside them.
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

/// Unfolds the input into a `[cin·k·k, n·out_h·out_w]` patch matrix.
fn im2col(input: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (ho, wo) = (g.out_h(), g.out_w());
    let plane = ho * wo;
    let ncols = g.n * plane;
    let mut cols = vec![0.0; g.patch_len() * ncols];
    for ci in 0..g.cin {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let row_off = row * ncols;
                for n in 0..g.n {
                    let src = &input[(n * g.cin + ci) * g.h * g.w..][..g.h * g.w];
                    let dst = &mut cols[row_off + n * plane..][..plane];
                    for oy in 0..ho {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let src_row = &src[iy as usize * g.w..][..g.w];
                        for ox in 0..wo {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                dst[oy * wo + ox] = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the input.
fn col2im(cols: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (ho, wo) = (g.out_h(), g.out_w());
    let plane = ho * wo;
    let ncols = g.n * plane;
    let mut out = vec![0.0; g.n * g.cin * g.h * g.w];
    for ci in 0..g.cin {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let row_off = row * ncols;
                for n in 0..g.n {
                    let dst = &mut out[(n * g.cin + ci) * g.h * g.w..][..g.h * g.w];
                    let src = &cols[row_off + n * plane..][..plane];
                    for oy in 0..ho {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let dst_row = &mut dst[iy as usize * g.w..][..g.w];
                        for ox in 0..wo {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                dst_row[ix as usize] += src[oy * wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Returns the `[n, cout, out_h, out_w]` output and the patch matrix kept for backward.
pub fn conv2d_forward(
    input: &[f64],
    weight: &[f64],
    bias: &[f64],
    g: &ConvGeom,
) -> (Vec<f64>, Vec<f64>) {
    let cols = im2col(input, g);
    let plane = g.out_plane();
    let ncols = g.n * plane;
    let mut mat = vec![0.0; g.cout * ncols];
    gemm(
        g.cout,
        g.patch_len(),
        ncols,
        weight,
        false,
        &cols,
        false,
        0.0,
        &mut mat,
    );
    let mut out = vec![0.0; g.n * g.cout * plane];
    for co in 0..g.cout {
        for n in 0..g.n {
            let src = &mat[co * ncols + n * plane..][..plane];
            let dst = &mut out[(n * g.cout + co) * plane..][..plane];
            for (d, s) in dst.iter_mut().zip(src) {
                *d = s + bias[co];
            }
        }
    }
    (out, cols)
}

pub struct ConvGrads {
    pub input: Option<Vec<f64>>,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

pub fn conv2d_backward(
    dout: &[f64],
    weight: &[f64],
    cols: &[f64],
    g: &ConvGeom,
    want_input: bool,
) -> ConvGrads {
    let plane = g.out_plane();
    let ncols = g.n * plane;
    let mut dmat = vec![0.0; g.cout * ncols];
    let mut bias = vec![0.0; g.cout];
    for co in 0..g.cout {
        for n in 0..g.n {
            let src = &dout[(n * g.cout + co) * plane..][..plane];
            dmat[co * ncols + n * plane..][..plane].copy_from_slice(src);
            bias[co] += src.iter().sum::<f64>();
        }
    }
    let pl = g.patch_len();
    let mut dweight = vec![0.0; g.cout * pl];
    gemm(
        g.cout,
        ncols,
        pl,
        &dmat,
        false,
        cols,
        true,
        0.0,
        &mut dweight,
    );
    let input = want_input.then(|| {
        let mut dcols = vec![0.0; pl * ncols];
        gemm(
            pl, g.cout, ncols, weight, true, &dmat, false, 0.0, &mut dcols,
        );
        col2im(&dcols, g)
    });
    ConvGrads {
        input,
        weight: dweight,
        bias,
    }
}

/// Source index pairs and blend weight for one axis of an align-corners bilinear resize.
fn axis_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    (0..dst)
        .map(|i| {
            if dst == 1 || src == 1 {
                return (0, 0, 0.0);
            }
            let pos = (i * (src - 1)) as f64 / (dst - 1) as f64;
            let i0 = (pos.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, pos - i0 as f64)
        })
        .collect()
}

/// Bilinear resize of every `h×w` plane to `oh×ow`; corner pixels map onto corner pixels.
pub fn resize_forward(
    input: &[f64],
    planes: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
) -> Vec<f64> {
    let ty = axis_taps(h, oh);
    let tx = axis_taps(w, ow);
    let mut out = vec![0.0; planes * oh * ow];
    for p in 0..planes {
        let src = &input[p * h * w..][..h * w];
        let dst = &mut out[p * oh * ow..][..oh * ow];
        for (y, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (x, &(x0, x1, fx)) in tx.iter().enumerate() {
                let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
                let bot = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
                dst[y * ow + x] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    out
}

pub fn resize_backward(
    dout: &[f64],
    planes: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
) -> Vec<f64> {
    let ty = axis_taps(h, oh);
    let tx = axis_taps(w, ow);
    let mut din = vec![0.0; planes * h * w];
    for p in 0..planes {
        let src = &dout[p * oh * ow..][..oh * ow];
        let dst = &mut din[p * h * w..][..h * w];
        for (y, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (x, &(x0, x1, fx)) in tx.iter().enumerate() {
                let d = src[y * ow + x];
                dst[y0 * w + x0] += d * (1.0 - fy) * (1.0 - fx);
                dst[y0 * w + x1] += d * (1.0 - fy) * fx;
                dst[y1 * w + x0] += d * fy * (1.0 - fx);
                dst[y1 * w + x1] += d * fy * fx;
            }
        }
    }
    din
}

/// 2×2 mean pooling with stride 2; a trailing odd row/column is dropped.
pub fn avg_pool2_forward(input: &[f64], planes: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; planes * oh * ow];
    for p in 0..planes {
        let src = &input[p * h * w..][..h * w];
        for y in 0..oh {
            for x in 0..ow {
                let s = src[2 * y * w + 2 * x]
                    + src[2 * y * w + 2 * x + 1]
                    + src[(2 * y + 1) * w + 2 * x]
                    + src[(2 * y + 1) * w + 2 * x + 1];
                out[p * oh * ow + y * ow + x] = 0.25 * s;
            }
        }
    }
    out
}

pub fn avg_pool2_backward(dout: &[f64], planes: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut din = vec![0.0; planes * h * w];
    for p in 0..planes {
        let dst = &mut din[p * h * w..][..h * w];
        for y in 0..oh {
            for x in 0..ow {
                let d = 0.25 * dout[p * oh * ow + y * ow + x];
                dst[2 * y * w + 2 * x] += d;
                dst[2 * y * w + 2 * x + 1] += d;
                dst[(2 * y + 1) * w + 2 * x] += d;
                dst[(2 * y + 1) * w + 2 * x + 1] += d;
            }
        }
    }
    din
}
