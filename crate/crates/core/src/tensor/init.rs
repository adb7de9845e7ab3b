//! Parameter initialization.

use ndarray::{ArrayD, IxDyn};
use rand::Rng;

use crate::scalar::Scalar;

/// He-style uniform initialization: samples from `[-b, b]` with
/// `b = sqrt(6 / fan_in)`. Values are drawn in `f64` in row-major order and
/// narrowed, so an `f32` store and an `f64` store see the same sequence.
pub fn kaiming_uniform<T: Scalar, R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize) -> ArrayD<T> {
    assert!(fan_in > 0, "fan_in must be positive");
    let bound = (6.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<T> = (0..n)
        .map(|_| T::from_f64(rng.random_range(-bound..bound)))
        .collect();
    ArrayD::from_shape_vec(IxDyn(shape), data).expect("shape matches element count")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    #[test]
    fn respects_bound_and_is_deterministic() {
        let mut rng = stream_rng(42, 0);
        let a: ArrayD<f64> = kaiming_uniform(&mut rng, &[8, 4, 3, 3], 4 * 9);
        let bound = (6.0 / 36.0f64).sqrt();
        assert!(a.iter().all(|v| v.abs() <= bound));

        let mut rng2 = stream_rng(42, 0);
        let b: ArrayD<f64> = kaiming_uniform(&mut rng2, &[8, 4, 3, 3], 4 * 9);
        assert_eq!(a, b);
    }

    #[test]
    fn f32_matches_narrowed_f64_stream() {
        let mut r1 = stream_rng(7, 3);
        let mut r2 = stream_rng(7, 3);
        let a: ArrayD<f32> = kaiming_uniform(&mut r1, &[5, 5], 5);
        let b: ArrayD<f64> = kaiming_uniform(&mut r2, &[5, 5], 5);
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(*x, *y as f32);
        }
    }
}
