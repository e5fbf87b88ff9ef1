use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::{gemm, MatRef};
use crate::{Dims, Error, Result, Scalar, Tensor4};

/// Stride-2, 2x2 transposed convolution ("deconvolution").
///
/// Weights are laid out `(2, 2, c_out, c_in)`, the layout of the stride-2
/// valid [`Conv2d`](super::Conv2d) whose adjoint this layer is. Output pixel
/// `(2i + a, 2j + b)` receives `sum_ci x[i, j, ci] * w[a, b, co, ci] + bias[co]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvTranspose2x2<T> {
    pub weight: Tensor4<T>,
    pub bias: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct DeconvGrads<T> {
    pub input: Tensor4<T>,
    pub weight: Tensor4<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> ConvTranspose2x2<T> {
    pub fn zeros(c_in: usize, c_out: usize) -> Self {
        ConvTranspose2x2 { weight: Tensor4::zeros(Dims::new(2, 2, c_out, c_in)), bias: vec![T::zero(); c_out] }
    }

    pub fn new(weight: Tensor4<T>, bias: Vec<T>) -> Result<Self> {
        let d = weight.dims();
        if d.n != 2 || d.h != 2 {
            return Err(Error::shape("ConvTranspose2x2::new", format!("kernel {d} is not 2x2")));
        }
        if bias.len() != d.w {
            return Err(Error::shape("ConvTranspose2x2::new", format!("bias {} for {} outputs", bias.len(), d.w)));
        }
        Ok(ConvTranspose2x2 { weight, bias })
    }

    pub fn c_in(&self) -> usize {
        self.weight.dims().c
    }

    pub fn c_out(&self) -> usize {
        self.weight.dims().w
    }

    fn check_input(&self, d: Dims) -> Result<()> {
        if d.c != self.c_in() {
            return Err(Error::shape(
                "deconv2",
                format!("input has {} channels, kernel expects {}", d.c, self.c_in()),
            ));
        }
        Ok(())
    }

    pub fn output_dims(&self, input: Dims) -> Result<Dims> {
        self.check_input(input)?;
        Ok(Dims::new(input.n, 2 * input.h, 2 * input.w, self.c_out()))
    }

    pub fn forward(&self, input: &Tensor4<T>) -> Result<Tensor4<T>> {
        let d = input.dims();
        let od = self.output_dims(d)?;
        let (cin, cout) = (self.c_in(), self.c_out());
        let p = d.h * d.w;
        let taps = 4 * cout;
        let mut y = vec![T::zero(); p * taps];
        let mut out = Tensor4::zeros(od);
        for n in 0..d.n {
            gemm(MatRef::rm(input.item(n), p, cin), MatRef::rm_t(self.weight.data(), cin, taps), T::zero(), &mut y);
            let dst = out.item_mut(n);
            for i in 0..d.h {
                for j in 0..d.w {
                    let row = &y[(i * d.w + j) * taps..][..taps];
                    for a in 0..2 {
                        for b in 0..2 {
                            let src = &row[(a * 2 + b) * cout..][..cout];
                            let o = ((2 * i + a) * od.w + 2 * j + b) * cout;
                            for ((o, &s), &bias) in dst[o..o + cout].iter_mut().zip(src).zip(&self.bias) {
                                *o = s + bias;
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn backward(&self, input: &Tensor4<T>, grad_out: &Tensor4<T>) -> Result<DeconvGrads<T>> {
        let d = input.dims();
        let od = self.output_dims(d)?;
        grad_out.expect_dims("deconv2_backward", od)?;
        let (cin, cout) = (self.c_in(), self.c_out());
        let p = d.h * d.w;
        let taps = 4 * cout;
        let mut gathered = vec![T::zero(); p * taps];
        let mut gi = Tensor4::zeros(d);
        let mut gw = Tensor4::zeros(self.weight.dims());
        let mut gb = vec![T::zero(); cout];
        for n in 0..d.n {
            let src = grad_out.item(n);
            for px in src.chunks_exact(cout) {
                for (acc, &v) in gb.iter_mut().zip(px) {
                    *acc += v;
                }
            }
            for i in 0..d.h {
                for j in 0..d.w {
                    let row = &mut gathered[(i * d.w + j) * taps..][..taps];
                    for a in 0..2 {
                        for b in 0..2 {
                            let o = ((2 * i + a) * od.w + 2 * j + b) * cout;
                            row[(a * 2 + b) * cout..][..cout].copy_from_slice(&src[o..o + cout]);
                        }
                    }
                }
            }
            gemm(MatRef::rm(&gathered, p, taps), MatRef::rm(self.weight.data(), taps, cin), T::zero(), gi.item_mut(n));
            let beta = if n == 0 { T::zero() } else { T::one() };
            gemm(MatRef::rm_t(&gathered, taps, p), MatRef::rm(input.item(n), p, cin), beta, gw.data_mut());
        }
        Ok(DeconvGrads { input: gi, weight: gw, bias: gb })
    }
}
