use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::{Dims, Scalar, Tensor4};

/// Zero-mean normal draws with variance `2 / fan_in`.
pub fn he_normal<T: Scalar, R: Rng + ?Sized>(dims: Dims, fan_in: usize, rng: &mut R) -> Tensor4<T> {
    let std = crate::math::sqrt(2.0 / fan_in.max(1) as f64);
    let data: Vec<T> = (0..dims.len())
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            T::lit(z * std)
        })
        .collect();
    Tensor4::from_vec(dims, data).expect("length matches dims")
}

/// He initialization of a `(kh, kw, c_in, c_out)` kernel from a seed.
pub fn init_params<T: Scalar>(dims: Dims, seed: u64) -> Tensor4<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    he_normal(dims, dims.n * dims.h * dims.w, &mut rng)
}
