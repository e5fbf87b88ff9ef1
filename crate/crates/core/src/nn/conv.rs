use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::{gemm, MatRef};
use crate::{Dims, Error, Result, Scalar, Tensor4};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding so that stride-1 output keeps the input extent.
    Same,
    /// No padding.
    Valid,
}

/// 2-D convolution with weights laid out `(kh, kw, c_in, c_out)`.
/// Input gradient (when requested), weight gradient, bias gradient.
type RawGrads<T> = (Option<Tensor4<T>>, Tensor4<T>, Vec<T>);

#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d<T> {
    pub weight: Tensor4<T>,
    pub bias: Vec<T>,
    pub stride: usize,
    pub padding: Padding,
}

#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    pub input: Tensor4<T>,
    pub weight: Tensor4<T>,
    pub bias: Vec<T>,
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    cin: usize,
    stride: usize,
    pad_top: usize,
    pad_left: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn patch_len(&self) -> usize {
        self.kh * self.kw * self.cin
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }

    /// Output positions unfolded per GEMM call; keeps the patch buffer
    /// around 4 MiB of `f32`.
    fn chunk_rows(&self) -> usize {
        ((1 << 20) / self.patch_len()).max(64).min(self.positions().max(1))
    }
}

fn same_extent(len: usize, k: usize, stride: usize) -> (usize, usize) {
    let out = len.div_ceil(stride);
    let total = ((out - 1) * stride + k).saturating_sub(len);
    (out, total / 2)
}

impl<T: Scalar> Conv2d<T> {
    /// Zero-initialised layer; use [`crate::nn::init_params`] for weights.
    pub fn zeros(k: usize, c_in: usize, c_out: usize, stride: usize, padding: Padding) -> Self {
        Self::new(Tensor4::zeros(Dims::new(k, k, c_in, c_out)), vec![T::zero(); c_out], stride, padding)
            .expect("consistent shapes")
    }

    pub fn new(weight: Tensor4<T>, bias: Vec<T>, stride: usize, padding: Padding) -> Result<Self> {
        let d = weight.dims();
        if bias.len() != d.c {
            return Err(Error::shape("Conv2d::new", format!("bias {} for {} outputs", bias.len(), d.c)));
        }
        if stride == 0 {
            return Err(Error::invalid("stride", "must be positive"));
        }
        if d.n == 0 || d.h == 0 || d.w == 0 {
            return Err(Error::shape("Conv2d::new", format!("empty kernel {d}")));
        }
        if padding == Padding::Same && stride == 1 && (d.n.is_multiple_of(2) || d.h.is_multiple_of(2)) {
            return Err(Error::invalid("kernel", format!("same-padded kernel {}x{} must be odd", d.n, d.h)));
        }
        Ok(Conv2d { weight, bias, stride, padding })
    }

    pub fn c_in(&self) -> usize {
        self.weight.dims().w
    }

    pub fn c_out(&self) -> usize {
        self.weight.dims().c
    }

    fn geometry(&self, input: Dims) -> Result<Geometry> {
        let kd = self.weight.dims();
        let (kh, kw) = (kd.n, kd.h);
        if input.c != kd.w {
            return Err(Error::shape(
                "conv2d",
                format!("input has {} channels, kernel expects {}", input.c, kd.w),
            ));
        }
        if input.h == 0 || input.w == 0 || input.n == 0 {
            return Err(Error::shape("conv2d", format!("empty input {input}")));
        }
        let s = self.stride;
        let (oh, ow, pad_top, pad_left) = match self.padding {
            Padding::Same => {
                let (oh, pt) = same_extent(input.h, kh, s);
                let (ow, pl) = same_extent(input.w, kw, s);
                (oh, ow, pt, pl)
            }
            Padding::Valid => {
                if input.h < kh || input.w < kw {
                    return Err(Error::shape("conv2d", format!("input {input} smaller than kernel {kh}x{kw}")));
                }
                ((input.h - kh) / s + 1, (input.w - kw) / s + 1, 0, 0)
            }
        };
        Ok(Geometry { h: input.h, w: input.w, kh, kw, cin: input.c, stride: s, pad_top, pad_left, oh, ow })
    }

    pub fn output_dims(&self, input: Dims) -> Result<Dims> {
        let g = self.geometry(input)?;
        Ok(Dims::new(input.n, g.oh, g.ow, self.c_out()))
    }

    pub fn forward(&self, input: &Tensor4<T>) -> Result<Tensor4<T>> {
        let g = self.geometry(input.dims())?;
        let cout = self.c_out();
        let out_dims = Dims::new(input.dims().n, g.oh, g.ow, cout);
        let mut out = Tensor4::zeros(out_dims);
        let k = g.patch_len();
        let chunk = g.chunk_rows();
        let mut cols = vec![T::zero(); chunk * k];
        for n in 0..out_dims.n {
            let x = input.item(n);
            let dst = out.item_mut(n);
            for px in dst.chunks_exact_mut(cout) {
                px.copy_from_slice(&self.bias);
            }
            for start in (0..g.positions()).step_by(chunk) {
                let rows = chunk.min(g.positions() - start);
                let cols = &mut cols[..rows * k];
                im2col(x, &g, start, cols);
                gemm(
                    MatRef::rm(cols, rows, k),
                    MatRef::rm(self.weight.data(), k, cout),
                    T::one(),
                    &mut dst[start * cout..(start + rows) * cout],
                );
            }
        }
        Ok(out)
    }

    /// Gradients with respect to input, weights and bias.
    pub fn backward(&self, input: &Tensor4<T>, grad_out: &Tensor4<T>) -> Result<ConvGrads<T>> {
        let (gi, weight, bias) = self.backward_impl(input, grad_out, true)?;
        Ok(ConvGrads { input: gi.expect("requested"), weight, bias })
    }

    /// As [`Self::backward`] but skips the input gradient (first layer).
    pub fn backward_params(&self, input: &Tensor4<T>, grad_out: &Tensor4<T>) -> Result<(Tensor4<T>, Vec<T>)> {
        let (_, w, b) = self.backward_impl(input, grad_out, false)?;
        Ok((w, b))
    }

    fn backward_impl(
        &self,
        input: &Tensor4<T>,
        grad_out: &Tensor4<T>,
        want_input: bool,
    ) -> Result<RawGrads<T>> {
        let in_dims = input.dims();
        let g = self.geometry(in_dims)?;
        let cout = self.c_out();
        grad_out.expect_dims("conv2d_backward", Dims::new(in_dims.n, g.oh, g.ow, cout))?;
        let k = g.patch_len();
        let chunk = g.chunk_rows();
        let mut cols = vec![T::zero(); chunk * k];
        let mut gw = Tensor4::zeros(self.weight.dims());
        let mut gb = vec![T::zero(); cout];
        let mut gi = want_input.then(|| Tensor4::zeros(in_dims));
        let mut dcols = if want_input { vec![T::zero(); chunk * k] } else { Vec::new() };
        let mut first = true;
        for n in 0..in_dims.n {
            let dy = grad_out.item(n);
            for px in dy.chunks_exact(cout) {
                for (acc, &v) in gb.iter_mut().zip(px) {
                    *acc += v;
                }
            }
            for start in (0..g.positions()).step_by(chunk) {
                let rows = chunk.min(g.positions() - start);
                let cols = &mut cols[..rows * k];
                let dy = &dy[start * cout..(start + rows) * cout];
                im2col(input.item(n), &g, start, cols);
                let beta = if first { T::zero() } else { T::one() };
                first = false;
                gemm(MatRef::rm_t(cols, k, rows), MatRef::rm(dy, rows, cout), beta, gw.data_mut());
                if let Some(gi) = gi.as_mut() {
                    let dcols = &mut dcols[..rows * k];
                    gemm(MatRef::rm(dy, rows, cout), MatRef::rm_t(self.weight.data(), cout, k), T::zero(), dcols);
                    col2im(dcols, &g, start, gi.item_mut(n));
                }
            }
        }
        Ok((gi, gw, gb))
    }
}

/// Unfold the receptive fields of output positions `start..` into rows
/// ordered `(ky, kx, c)`, one row per position, until `cols` is full.
fn im2col<T: Scalar>(x: &[T], g: &Geometry, start: usize, cols: &mut [T]) {
    let k = g.patch_len();
    let run = g.kw * g.cin;
    for (i, row) in cols.chunks_exact_mut(k).enumerate() {
        let (oy, ox) = ((start + i) / g.ow, (start + i) % g.ow);
        {
            let x0 = (ox * g.stride) as isize - g.pad_left as isize;
            for ky in 0..g.kh {
                let iy = (oy * g.stride + ky) as isize - g.pad_top as isize;
                let dst = &mut row[ky * run..(ky + 1) * run];
                if iy < 0 || iy as usize >= g.h {
                    dst.fill(T::zero());
                    continue;
                }
                let line = &x[iy as usize * g.w * g.cin..][..g.w * g.cin];
                if x0 >= 0 && x0 as usize + g.kw <= g.w {
                    let s = x0 as usize * g.cin;
                    dst.copy_from_slice(&line[s..s + run]);
                } else {
                    for kx in 0..g.kw {
                        let ix = x0 + kx as isize;
                        let d = &mut dst[kx * g.cin..(kx + 1) * g.cin];
                        if ix < 0 || ix as usize >= g.w {
                            d.fill(T::zero());
                        } else {
                            let s = ix as usize * g.cin;
                            d.copy_from_slice(&line[s..s + g.cin]);
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add patch rows back onto the input grid.
fn col2im<T: Scalar>(cols: &[T], g: &Geometry, start: usize, dx: &mut [T]) {
    let k = g.patch_len();
    for (i, row) in cols.chunks_exact(k).enumerate() {
        let (oy, ox) = ((start + i) / g.ow, (start + i) % g.ow);
        {
            for ky in 0..g.kh {
                let iy = (oy * g.stride + ky) as isize - g.pad_top as isize;
                if iy < 0 || iy as usize >= g.h {
                    continue;
                }
                for kx in 0..g.kw {
                    let ix = (ox * g.stride + kx) as isize - g.pad_left as isize;
                    if ix < 0 || ix as usize >= g.w {
                        continue;
                    }
                    let src = &row[(ky * g.kw + kx) * g.cin..][..g.cin];
                    let dst = &mut dx[(iy as usize * g.w + ix as usize) * g.cin..][..g.cin];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
        }
    }
}
