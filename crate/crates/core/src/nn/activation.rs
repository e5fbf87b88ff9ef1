use crate::{Result, Scalar, Tensor4};

pub fn relu<T: Scalar>(x: &Tensor4<T>) -> Tensor4<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient of [`relu`] given its output.
pub fn relu_backward<T: Scalar>(output: &Tensor4<T>, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
    output.zip_map(grad_out, |y, g| if y > T::zero() { g } else { T::zero() })
}

/// Logistic function. Saturated values are held at the nearest
/// representable numbers inside (0, 1).
pub fn sigmoid<T: Scalar>(x: &Tensor4<T>) -> Tensor4<T> {
    let lo = T::min_positive_value();
    let hi = T::one() - T::epsilon() / T::lit(2.0);
    x.map(|v| {
        let s = if v >= T::zero() {
            T::one() / (T::one() + (-v).exp())
        } else {
            let e = v.exp();
            e / (T::one() + e)
        };
        s.max(lo).min(hi)
    })
}

/// Gradient of [`sigmoid`] given its output.
pub fn sigmoid_backward<T: Scalar>(output: &Tensor4<T>, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
    output.zip_map(grad_out, |s, g| g * s * (T::one() - s))
}
