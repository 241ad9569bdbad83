//! Convolution kernels on NCHW tensors, lowered to gemm through im2col.
//!
//! The three primitives (forward, input gradient, weight gradient) are each
//! other's adjoints, which is what lets transposed convolution and the
//! critic's gradient-penalty backward pass reuse them.

use crate::{Real, Tensor};

/// Square-kernel convolution geometry. Padding may be asymmetric so that
/// even kernels can preserve spatial size.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub kernel: usize,
    pub stride: usize,
    pub pad_begin: usize,
    pub pad_end: usize,
}

impl ConvGeom {
    pub const fn new(kernel: usize, stride: usize, pad: usize) -> Self {
        Self {
            kernel,
            stride,
            pad_begin: pad,
            pad_end: pad,
        }
    }

    pub const fn asymmetric(kernel: usize, stride: usize, pad_begin: usize, pad_end: usize) -> Self {
        Self {
            kernel,
            stride,
            pad_begin,
            pad_end,
        }
    }

    /// Output length along one axis, or `None` if the kernel does not fit.
    pub fn out_len(&self, len: usize) -> Option<usize> {
        let padded = len + self.pad_begin + self.pad_end;
        if padded < self.kernel || self.stride == 0 {
            return None;
        }
        Some((padded - self.kernel) / self.stride + 1)
    }

    fn out_len_checked(&self, len: usize) -> usize {
        self.out_len(len)
            .unwrap_or_else(|| panic!("kernel {:?} does not fit input length {len}", self))
    }
}

#[inline]
fn src_index(o: usize, k: usize, g: &ConvGeom, len: usize) -> Option<usize> {
    let pos = (o * g.stride + k) as isize - g.pad_begin as isize;
    (pos >= 0 && (pos as usize) < len).then_some(pos as usize)
}

/// Unfolds one `[c, h, w]` sample into `[c*k*k, ho*wo]` columns.
fn im2col<R: Real>(x: &[R], c: usize, h: usize, w: usize, g: &ConvGeom, ho: usize, wo: usize, cols: &mut [R]) {
    let k = g.kernel;
    let plane = ho * wo;
    for ci in 0..c {
        let xs = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..ho {
                    let d = &mut dst[oy * wo..(oy + 1) * wo];
                    match src_index(oy, ky, g, h) {
                        None => d.fill(R::zero()),
                        Some(iy) => {
                            let src = &xs[iy * w..(iy + 1) * w];
                            for (ox, v) in d.iter_mut().enumerate() {
                                *v = match src_index(ox, kx, g, w) {
                                    Some(ix) => src[ix],
                                    None => R::zero(),
                                };
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Folds columns back into a `[c, h, w]` sample, accumulating overlaps.
fn col2im<R: Real>(cols: &[R], c: usize, h: usize, w: usize, g: &ConvGeom, ho: usize, wo: usize, x: &mut [R]) {
    let k = g.kernel;
    let plane = ho * wo;
    for ci in 0..c {
        let xs = &mut x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..ho {
                    let Some(iy) = src_index(oy, ky, g, h) else {
                        continue;
                    };
                    let dst = &mut xs[iy * w..(iy + 1) * w];
                    for ox in 0..wo {
                        if let Some(ix) = src_index(ox, kx, g, w) {
                            dst[ix] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `y = w * x + b` with `x: [n, ci, h, w]`, `w: [co, ci, k, k]`, `b: [co]`.
pub fn conv2d<R: Real>(x: &Tensor<R>, w: &Tensor<R>, b: Option<&Tensor<R>>, g: ConvGeom) -> Tensor<R> {
    let (n, ci, h, wd) = x.dims4();
    let (co, wci, kh, kw) = w.dims4();
    assert_eq!(ci, wci, "conv2d channel mismatch");
    assert!(kh == g.kernel && kw == g.kernel, "conv2d kernel mismatch");
    let (ho, wo) = (g.out_len_checked(h), g.out_len_checked(wd));
    let kk = ci * g.kernel * g.kernel;
    let plane = ho * wo;
    let mut cols = vec![R::zero(); kk * plane];
    let mut y = Tensor::zeros(&[n, co, ho, wo]);
    let xs = x.data();
    let ws = w.data();
    let per_in = ci * h * wd;
    let per_out = co * plane;
    for s in 0..n {
        im2col(&xs[s * per_in..(s + 1) * per_in], ci, h, wd, &g, ho, wo, &mut cols);
        let out = &mut y.data_mut()[s * per_out..(s + 1) * per_out];
        if let Some(b) = b {
            for (c, chunk) in out.chunks_mut(plane).enumerate() {
                chunk.fill(b.data()[c]);
            }
        }
        let beta = if b.is_some() { R::one() } else { R::zero() };
        R::gemm(
            co,
            kk,
            plane,
            R::one(),
            ws,
            (kk as isize, 1),
            &cols,
            (plane as isize, 1),
            beta,
            out,
            (plane as isize, 1),
        );
    }
    y
}

/// Gradient of [`conv2d`] with respect to its input, for an input of spatial size `in_hw`.
pub fn conv2d_input_grad<R: Real>(gy: &Tensor<R>, w: &Tensor<R>, g: ConvGeom, in_hw: (usize, usize)) -> Tensor<R> {
    let (n, co, ho, wo) = gy.dims4();
    let (wco, ci, _, _) = w.dims4();
    assert_eq!(co, wco, "conv2d_input_grad channel mismatch");
    let (h, wd) = in_hw;
    assert_eq!(g.out_len(h), Some(ho), "input height {h} inconsistent with output {ho}");
    assert_eq!(g.out_len(wd), Some(wo), "input width {wd} inconsistent with output {wo}");
    let kk = ci * g.kernel * g.kernel;
    let plane = ho * wo;
    let mut cols = vec![R::zero(); kk * plane];
    let mut gx = Tensor::zeros(&[n, ci, h, wd]);
    let per_in = ci * h * wd;
    let per_out = co * plane;
    for s in 0..n {
        R::gemm(
            kk,
            co,
            plane,
            R::one(),
            w.data(),
            (1, kk as isize),
            &gy.data()[s * per_out..(s + 1) * per_out],
            (plane as isize, 1),
            R::zero(),
            &mut cols,
            (plane as isize, 1),
        );
        col2im(&cols, ci, h, wd, &g, ho, wo, &mut gx.data_mut()[s * per_in..(s + 1) * per_in]);
    }
    gx
}

/// Gradient of [`conv2d`] with respect to its weight.
pub fn conv2d_weight_grad<R: Real>(x: &Tensor<R>, gy: &Tensor<R>, g: ConvGeom) -> Tensor<R> {
    let (n, ci, h, wd) = x.dims4();
    let (gn, co, ho, wo) = gy.dims4();
    assert_eq!(n, gn);
    let kk = ci * g.kernel * g.kernel;
    let plane = ho * wo;
    let mut cols = vec![R::zero(); kk * plane];
    let mut gw = Tensor::zeros(&[co, ci, g.kernel, g.kernel]);
    let per_in = ci * h * wd;
    let per_out = co * plane;
    for s in 0..n {
        im2col(&x.data()[s * per_in..(s + 1) * per_in], ci, h, wd, &g, ho, wo, &mut cols);
        R::gemm(
            co,
            plane,
            kk,
            R::one(),
            &gy.data()[s * per_out..(s + 1) * per_out],
            (plane as isize, 1),
            &cols,
            (1, plane as isize),
            R::one(),
            gw.data_mut(),
            (kk as isize, 1),
        );
    }
    gw
}

/// Per-channel sum of an NCHW gradient, i.e. the bias gradient.
pub fn channel_sum<R: Real>(gy: &Tensor<R>) -> Tensor<R> {
    let (n, c, h, w) = gy.dims4();
    let plane = h * w;
    let mut out = vec![R::zero(); c];
    for s in 0..n {
        for (ch, acc) in out.iter_mut().enumerate() {
            let off = (s * c + ch) * plane;
            *acc += gy.data()[off..off + plane].iter().copied().sum::<R>();
        }
    }
    Tensor::from_vec(&[c], out)
}

/// Transposed convolution, `w: [ci, co, k, k]`. Output spatial size is given
/// explicitly because stride makes it ambiguous.
pub fn conv_transpose2d<R: Real>(
    x: &Tensor<R>,
    w: &Tensor<R>,
    b: Option<&Tensor<R>>,
    g: ConvGeom,
    out_hw: (usize, usize),
) -> Tensor<R> {
    let mut y = conv2d_input_grad(x, w, g, out_hw);
    if let Some(b) = b {
        let (n, c, h, wd) = y.dims4();
        let plane = h * wd;
        let data = y.data_mut();
        for s in 0..n {
            for ch in 0..c {
                let off = (s * c + ch) * plane;
                for v in &mut data[off..off + plane] {
                    *v += b.data()[ch];
                }
            }
        }
    }
    y
}

/// Separable depthwise "valid" correlation with a 1-D kernel applied along
/// both spatial axes.
pub fn separable_valid<R: Real>(x: &Tensor<R>, kernel: &[R]) -> Tensor<R> {
    let (n, c, h, w) = x.dims4();
    let k = kernel.len();
    assert!(h >= k && w >= k, "separable_valid: {h}x{w} smaller than kernel {k}");
    let (ho, wo) = (h - k + 1, w - k + 1);
    let mut tmp = vec![R::zero(); h * wo];
    let mut y = Tensor::zeros(&[n, c, ho, wo]);
    for p in 0..n * c {
        let src = &x.data()[p * h * w..(p + 1) * h * w];
        for r in 0..h {
            let row = &src[r * w..(r + 1) * w];
            for o in 0..wo {
                let mut acc = R::zero();
                for (t, &kv) in kernel.iter().enumerate() {
                    acc += kv * row[o + t];
                }
                tmp[r * wo + o] = acc;
            }
        }
        let dst = &mut y.data_mut()[p * ho * wo..(p + 1) * ho * wo];
        for o in 0..ho {
            for col in 0..wo {
                let mut acc = R::zero();
                for (t, &kv) in kernel.iter().enumerate() {
                    acc += kv * tmp[(o + t) * wo + col];
                }
                dst[o * wo + col] = acc;
            }
        }
    }
    y
}

/// Adjoint of [`separable_valid`]: scatters an output gradient back to the input size.
pub fn separable_valid_adjoint<R: Real>(gy: &Tensor<R>, kernel: &[R], in_hw: (usize, usize)) -> Tensor<R> {
    let (n, c, ho, wo) = gy.dims4();
    let k = kernel.len();
    let (h, w) = in_hw;
    assert_eq!((ho + k - 1, wo + k - 1), (h, w));
    let mut tmp = vec![R::zero(); h * wo];
    let mut gx = Tensor::zeros(&[n, c, h, w]);
    for p in 0..n * c {
        let src = &gy.data()[p * ho * wo..(p + 1) * ho * wo];
        tmp.fill(R::zero());
        for o in 0..ho {
            for (t, &kv) in kernel.iter().enumerate() {
                let dst = &mut tmp[(o + t) * wo..(o + t + 1) * wo];
                for (d, &s) in dst.iter_mut().zip(&src[o * wo..(o + 1) * wo]) {
                    *d += kv * s;
                }
            }
        }
        let dst = &mut gx.data_mut()[p * h * w..(p + 1) * h * w];
        for r in 0..h {
            for o in 0..wo {
                let v = tmp[r * wo + o];
                for (t, &kv) in kernel.iter().enumerate() {
                    dst[r * w + o + t] += kv * v;
                }
            }
        }
    }
    gx
}

/// 2x2 average pooling with stride 2; odd trailing rows/columns are dropped.
pub fn avg_pool2<R: Real>(x: &Tensor<R>) -> Tensor<R> {
    let (n, c, h, w) = x.dims4();
    let (ho, wo) = (h / 2, w / 2);
    let quarter = R::lit(0.25);
    let mut y = Tensor::zeros(&[n, c, ho, wo]);
    for p in 0..n * c {
        let src = &x.data()[p * h * w..(p + 1) * h * w];
        let dst = &mut y.data_mut()[p * ho * wo..(p + 1) * ho * wo];
        for oy in 0..ho {
            for ox in 0..wo {
                let (iy, ix) = (2 * oy, 2 * ox);
                dst[oy * wo + ox] = quarter
                    * (src[iy * w + ix] + src[iy * w + ix + 1] + src[(iy + 1) * w + ix] + src[(iy + 1) * w + ix + 1]);
            }
        }
    }
    y
}

pub fn avg_pool2_adjoint<R: Real>(gy: &Tensor<R>, in_hw: (usize, usize)) -> Tensor<R> {
    let (n, c, ho, wo) = gy.dims4();
    let (h, w) = in_hw;
    let quarter = R::lit(0.25);
    let mut gx = Tensor::zeros(&[n, c, h, w]);
    for p in 0..n * c {
        let src = &gy.data()[p * ho * wo..(p + 1) * ho * wo];
        let dst = &mut gx.data_mut()[p * h * w..(p + 1) * h * w];
        for oy in 0..ho {
            for ox in 0..wo {
                let v = quarter * src[oy * wo + ox];
                let (iy, ix) = (2 * oy, 2 * ox);
                dst[iy * w + ix] += v;
                dst[iy * w + ix + 1] += v;
                dst[(iy + 1) * w + ix] += v;
                dst[(iy + 1) * w + ix + 1] += v;
            }
        }
    }
    gx
}

/// Nearest-neighbour 2x upsampling. Its adjoint is a 2x2 sum pool.
pub fn upsample_nearest2<R: Real>(x: &Tensor<R>) -> Tensor<R> {
    let (h, w) = (x.shape()[2], x.shape()[3]);
    let mut y = avg_pool2_adjoint(x, (2 * h, 2 * w));
    y.data_mut().iter_mut().for_each(|v| *v *= R::lit(4.0));
    y
}

pub fn upsample_nearest2_adjoint<R: Real>(gy: &Tensor<R>) -> Tensor<R> {
    let mut gx = avg_pool2(gy);
    gx.data_mut().iter_mut().for_each(|v| *v *= R::lit(4.0));
    gx
}

/// Per-channel `[1, 2, 1] / 4` filter along both axes with zero padding.
/// The operator is symmetric, so it is its own adjoint.
pub fn binomial_blur<R: Real>(x: &Tensor<R>) -> Tensor<R> {
    let (n, c, h, w) = x.dims4();
    let (q, hf) = (R::lit(0.25), R::lit(0.5));
    let mut tmp = vec![R::zero(); h * w];
    let mut y = Tensor::zeros(&[n, c, h, w]);
    for p in 0..n * c {
        let src = &x.data()[p * h * w..(p + 1) * h * w];
        for r in 0..h {
            let row = &src[r * w..(r + 1) * w];
            for j in 0..w {
                let l = if j > 0 { row[j - 1] } else { R::zero() };
                let rr = if j + 1 < w { row[j + 1] } else { R::zero() };
                tmp[r * w + j] = q * (l + rr) + hf * row[j];
            }
        }
        let dst = &mut y.data_mut()[p * h * w..(p + 1) * h * w];
        for r in 0..h {
            for j in 0..w {
                let u = if r > 0 { tmp[(r - 1) * w + j] } else { R::zero() };
                let d = if r + 1 < h { tmp[(r + 1) * w + j] } else { R::zero() };
                dst[r * w + j] = q * (u + d) + hf * tmp[r * w + j];
            }
        }
    }
    y
}
