use alloc::format;
use alloc::vec::Vec;

use crate::{Dims, Error, Result, Scalar, Tensor4};

/// Flat input index of the maximum selected for every pooled element.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolIndexMap {
    input_dims: Dims,
    indices: Vec<usize>,
}

impl PoolIndexMap {
    pub fn input_dims(&self) -> Dims {
        self.input_dims
    }

    pub fn output_dims(&self) -> Dims {
        let d = self.input_dims;
        Dims::new(d.n, d.h / 2, d.w / 2, d.c)
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }
}

/// 2x2 max-pooling with stride 2. Ties resolve to the lowest flat index.
pub fn maxpool2_forward<T: Scalar>(input: &Tensor4<T>) -> Result<(Tensor4<T>, PoolIndexMap)> {
    let d = input.dims();
    if !d.h.is_multiple_of(2) || !d.w.is_multiple_of(2) {
        return Err(Error::shape("maxpool2", format!("odd spatial extent in {d}")));
    }
    let od = Dims::new(d.n, d.h / 2, d.w / 2, d.c);
    let src = input.data();
    let mut out = Vec::with_capacity(od.len());
    let mut indices = Vec::with_capacity(od.len());
    for n in 0..d.n {
        for oy in 0..od.h {
            for ox in 0..od.w {
                let i00 = d.offset(n, 2 * oy, 2 * ox, 0);
                // window in increasing flat-index order
                let window = [i00, i00 + d.c, i00 + d.w * d.c, i00 + d.w * d.c + d.c];
                for c in 0..d.c {
                    let mut best = window[0] + c;
                    for &base in &window[1..] {
                        if src[base + c] > src[best] {
                            best = base + c;
                        }
                    }
                    out.push(src[best]);
                    indices.push(best);
                }
            }
        }
    }
    Ok((Tensor4::from_vec(od, out)?, PoolIndexMap { input_dims: d, indices }))
}

/// Route each upstream gradient to its recorded argmax.
pub fn maxpool2_backward<T: Scalar>(grad_out: &Tensor4<T>, map: &PoolIndexMap) -> Result<Tensor4<T>> {
    let od = map.output_dims();
    grad_out.expect_dims("maxpool2_backward", od)?;
    let d = map.input_dims;
    let mut gi = Tensor4::zeros(d);
    let dst = gi.data_mut();
    for (k, (&idx, &g)) in map.indices.iter().zip(grad_out.data()).enumerate() {
        let c = k % od.c;
        let ox = (k / od.c) % od.w;
        let oy = (k / (od.c * od.w)) % od.h;
        let n = k / (od.c * od.w * od.h);
        let i00 = d.offset(n, 2 * oy, 2 * ox, c);
        let inside = [i00, i00 + d.c, i00 + d.w * d.c, i00 + d.w * d.c + d.c].contains(&idx);
        if !inside {
            return Err(Error::Internal {
                op: "maxpool2_backward",
                detail: format!("index {idx} outside window of output element {k}"),
            });
        }
        dst[idx] += g;
    }
    Ok(gi)
}
