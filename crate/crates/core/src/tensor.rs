use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::{Error, Result, Scalar};

/// Extents of an NHWC tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Dims {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Dims {
    pub const fn new(n: usize, h: usize, w: usize, c: usize) -> Self {
        Dims { n, h, w, c }
    }

    pub const fn len(&self) -> usize {
        self.n * self.h * self.w * self.c
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Elements in one batch item.
    pub const fn item_len(&self) -> usize {
        self.h * self.w * self.c
    }

    pub const fn as_array(&self) -> [usize; 4] {
        [self.n, self.h, self.w, self.c]
    }

    #[inline]
    pub const fn offset(&self, n: usize, y: usize, x: usize, c: usize) -> usize {
        ((n * self.h + y) * self.w + x) * self.c + c
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.h, self.w, self.c)
    }
}

/// Dense rank-4 array in row-major (n, h, w, c) order.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4<T> {
    dims: Dims,
    data: Vec<T>,
}

impl<T: Scalar> Tensor4<T> {
    pub fn zeros(dims: Dims) -> Self {
        Tensor4 { dims, data: vec![T::zero(); dims.len()] }
    }

    pub fn filled(dims: Dims, value: T) -> Self {
        Tensor4 { dims, data: vec![value; dims.len()] }
    }

    pub fn from_vec(dims: Dims, data: Vec<T>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::shape(
                "Tensor4::from_vec",
                format!("{} values for dims {dims}", data.len()),
            ));
        }
        Ok(Tensor4 { dims, data })
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(dims.len());
        for n in 0..dims.n {
            for y in 0..dims.h {
                for x in 0..dims.w {
                    for c in 0..dims.c {
                        data.push(f(n, y, x, c));
                    }
                }
            }
        }
        Tensor4 { dims, data }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn at(&self, n: usize, y: usize, x: usize, c: usize) -> T {
        self.data[self.dims.offset(n, y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, y: usize, x: usize, c: usize, v: T) {
        let i = self.dims.offset(n, y, x, c);
        self.data[i] = v;
    }

    /// Contiguous slice of batch item `n`.
    pub fn item(&self, n: usize) -> &[T] {
        let len = self.dims.item_len();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn item_mut(&mut self, n: usize) -> &mut [T] {
        let len = self.dims.item_len();
        &mut self.data[n * len..(n + 1) * len]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor4 { dims: self.dims, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.expect_dims("Tensor4::zip_map", other.dims)?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Tensor4 { dims: self.dims, data })
    }

    /// Sum of elementwise products.
    pub fn inner(&self, other: &Self) -> Result<T> {
        self.expect_dims("Tensor4::inner", other.dims)?;
        Ok(self.data.iter().zip(&other.data).map(|(&a, &b)| a * b).sum())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor4<U> {
        Tensor4 {
            dims: self.dims,
            data: self.data.iter().map(|&v| U::lit(v.as_f64())).collect(),
        }
    }

    /// Concatenate along channels: `self` channels first, then `other`.
    pub fn concat_channels(&self, other: &Self) -> Result<Self> {
        let (a, b) = (self.dims, other.dims);
        if (a.n, a.h, a.w) != (b.n, b.h, b.w) {
            return Err(Error::shape("concat_channels", format!("{a} vs {b}")));
        }
        let dims = Dims::new(a.n, a.h, a.w, a.c + b.c);
        let mut data = Vec::with_capacity(dims.len());
        for p in 0..a.n * a.h * a.w {
            data.extend_from_slice(&self.data[p * a.c..(p + 1) * a.c]);
            data.extend_from_slice(&other.data[p * b.c..(p + 1) * b.c]);
        }
        Ok(Tensor4 { dims, data })
    }

    /// Split channels at `at`: returns `(first at channels, remaining)`.
    pub fn split_channels(&self, at: usize) -> Result<(Self, Self)> {
        let d = self.dims;
        if at > d.c {
            return Err(Error::shape("split_channels", format!("split at {at} of {d}")));
        }
        let da = Dims::new(d.n, d.h, d.w, at);
        let db = Dims::new(d.n, d.h, d.w, d.c - at);
        let mut a = Vec::with_capacity(da.len());
        let mut b = Vec::with_capacity(db.len());
        if d.c > 0 {
            for px in self.data.chunks_exact(d.c) {
                a.extend_from_slice(&px[..at]);
                b.extend_from_slice(&px[at..]);
            }
        }
        Ok((Tensor4 { dims: da, data: a }, Tensor4 { dims: db, data: b }))
    }

    /// Stack single-item tensors of identical dims along the batch axis.
    pub fn stack(items: &[&Self]) -> Result<Self> {
        let first = items.first().ok_or(Error::Empty { what: "tensor stack" })?.dims;
        let mut data = Vec::with_capacity(first.len() * items.len());
        let mut n = 0;
        for t in items {
            let d = t.dims;
            if (d.h, d.w, d.c) != (first.h, first.w, first.c) {
                return Err(Error::shape("Tensor4::stack", format!("{first} vs {d}")));
            }
            data.extend_from_slice(&t.data);
            n += d.n;
        }
        Ok(Tensor4 { dims: Dims::new(n, first.h, first.w, first.c), data })
    }

    pub(crate) fn expect_dims(&self, op: &'static str, want: Dims) -> Result<()> {
        if self.dims != want {
            return Err(Error::shape(op, format!("expected {want}, got {}", self.dims)));
        }
        Ok(())
    }
}
