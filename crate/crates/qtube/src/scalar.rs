//! Scalar abstraction: all numerics are generic over the real field.

use nalgebra::RealField;
use num_complex::Complex;
use simba::scalar::SupersetOf;

/// Real scalar type of the solver: `f32` or `f64`.
pub trait Real: RealField + SupersetOf<f64> + Copy {}

impl<T: RealField + SupersetOf<f64> + Copy> Real for T {}

/// Convert an `f64` constant into the working scalar type.
#[inline]
pub fn conv<T: Real>(x: f64) -> T {
    T::from_subset(&x)
}

/// Lossy conversion back to `f64`, for reporting.
#[inline]
pub fn as_f64<T: Real>(x: T) -> f64 {
    x.to_subset_unchecked()
}

/// Shorthand for the complex scalar over `T`.
pub type C<T> = Complex<T>;

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{ComplexField, DMatrix};

    #[test]
    fn complex_field_surface_is_available() {
        fn probe<T: Real>() -> f64 {
            let z: C<T> = Complex::new(conv(-2.0), conv(1e-14));
            let p = z.powf(conv::<T>(0.5));
            let m = DMatrix::<C<T>>::from_row_slice(
                2,
                2,
                &[
                    Complex::new(conv(2.0), conv(0.0)),
                    Complex::new(conv(0.0), conv(1.0)),
                    Complex::new(conv(0.0), conv(-1.0)),
                    Complex::new(conv(3.0), conv(0.0)),
                ],
            );
            let rhs = DMatrix::<C<T>>::identity(2, 2);
            let inv = m.clone().lu().solve(&rhs).unwrap();
            let resid = (&m * &inv - DMatrix::<C<T>>::identity(2, 2)).norm();
            as_f64(p.imaginary()) + as_f64(resid)
        }
        // sqrt(-2) on the principal branch has imaginary part sqrt(2)
        let v = probe::<f64>();
        assert!((v - 2.0_f64.sqrt()).abs() < 1e-10, "got {v}");
        let v32 = probe::<f32>();
        assert!((v32 - 2.0_f64.sqrt()).abs() < 1e-5, "got {v32}");
    }
}
