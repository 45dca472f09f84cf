//! Transverse sine basis on (0, a): dispersion relations, the
//! constant-coefficient axial operators, and regularity-norm diagnostics.
//!
//! The basis functions are plain sin(n pi v / a), n >= 1, without an
//! orthonormalization factor; inner products carry the explicit a/2.

use nalgebra::DVector;
use num_complex::Complex;

use crate::error::{Result, SolverError};
use crate::scalar::{conv, Real, C};

/// Coefficient vector of a field slice in the sine basis.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeCoefficients<T: Real> {
    pub coeffs: DVector<C<T>>,
    pub width_a: T,
}

impl<T: Real> ModeCoefficients<T> {
    pub fn new(coeffs: DVector<C<T>>, width_a: T) -> Self {
        assert!(coeffs.len() >= 1, "at least one mode");
        assert!(width_a > T::zero(), "width must be positive");
        Self { coeffs, width_a }
    }

    /// Single-mode unit vector e_n (1-based mode index).
    pub fn unit(n: usize, n_modes: usize, width_a: T) -> Self {
        assert!(n >= 1 && n <= n_modes);
        let mut c = DVector::from_element(n_modes, Complex::new(T::zero(), T::zero()));
        c[n - 1] = Complex::new(T::one(), T::zero());
        Self::new(c, width_a)
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Parameters of the constant-coefficient dispersion relation
/// alpha_n = sqrt(k^2 mu - n^2 pi^2 / a^2).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DispersionSpec<T: Real> {
    /// Energy k^2 (real; may be negative, then all modes are evanescent).
    pub k2: T,
    /// Asymptotic metric factor (1 on the left, (b/a)^2 on the right).
    pub mu_const: T,
    /// Strip width.
    pub width_a: T,
}

impl<T: Real> DispersionSpec<T> {
    pub fn new(k2: T, mu_const: T, width_a: T) -> Self {
        assert!(mu_const > T::zero());
        assert!(width_a > T::zero());
        Self {
            k2,
            mu_const,
            width_a,
        }
    }

    fn radicand(&self, n: usize) -> T {
        let npi = conv::<T>(n as f64) * T::pi() / self.width_a;
        self.k2 * self.mu_const - npi * npi
    }

    /// Mode indices (1-based) whose radicand vanishes: the energy is
    /// cutoff-degenerate for these and the splitting operator is singular.
    pub fn cutoff_modes(&self, n_max: usize) -> Vec<usize> {
        (1..=n_max)
            .filter(|&n| self.radicand(n) == T::zero())
            .collect()
    }

    /// Number of propagating modes (radicand > 0) among the first `n_max`.
    pub fn propagating_count(&self, n_max: usize) -> usize {
        (1..=n_max).filter(|&n| self.radicand(n) > T::zero()).count()
    }
}

/// Axial wavenumber alpha_n on the branch Im >= 0.
///
/// A positive radicand gives a real positive result, a negative one a
/// purely imaginary result with positive imaginary part. An exactly
/// vanishing radicand returns 0 (a cutoff-degenerate energy; callers that
/// need an invertible splitting operator must reject it, see
/// [`DispersionSpec::cutoff_modes`]).
pub fn axial_wavenumber<T: Real>(n: usize, spec: &DispersionSpec<T>) -> C<T> {
    assert!(n >= 1);
    let rad = spec.radicand(n);
    if rad > T::zero() {
        Complex::new(rad.sqrt(), T::zero())
    } else if rad < T::zero() {
        Complex::new(T::zero(), (-rad).sqrt())
    } else {
        Complex::new(T::zero(), T::zero())
    }
}

/// Diagonal of the constant-coefficient operator B (plus or minus) for the
/// first `n_modes` modes.
pub fn b_const_diagonal<T: Real>(spec: &DispersionSpec<T>, n_modes: usize) -> DVector<C<T>> {
    DVector::from_iterator(n_modes, (1..=n_modes).map(|n| axial_wavenumber(n, spec)))
}

/// Apply the constant-coefficient operator: multiply each coefficient by
/// alpha_n.
pub fn apply_b_const<T: Real>(
    f: &ModeCoefficients<T>,
    spec: &DispersionSpec<T>,
) -> ModeCoefficients<T> {
    let coeffs = DVector::from_iterator(
        f.len(),
        f.coeffs
            .iter()
            .enumerate()
            .map(|(i, &c)| c * axial_wavenumber(i + 1, spec)),
    );
    ModeCoefficients::new(coeffs, f.width_a)
}

/// Regularity norm sqrt(sum |f_n|^2 (1 + n^2)^s) over the truncated range.
///
/// Nonnegative s grades classical regularity of the cross-section trace;
/// negative s is the dual scale.
pub fn ds_norm<T: Real>(f: &ModeCoefficients<T>, s: T) -> T {
    let mut acc = T::zero();
    for (i, c) in f.coeffs.iter().enumerate() {
        let n = conv::<T>((i + 1) as f64);
        acc += c.norm_sqr() * (T::one() + n * n).powf(s);
    }
    acc.sqrt()
}

/// Discrete sine transform of samples on the equispaced interior grid
/// v_j = j a / (M + 1), j = 1..M (Dirichlet endpoints implied).
pub fn decompose<T: Real>(
    samples: &[C<T>],
    width_a: T,
    n_modes: usize,
) -> Result<ModeCoefficients<T>> {
    let m = samples.len();
    if m < n_modes {
        return Err(SolverError::InsufficientResolution {
            got: m,
            needed: n_modes,
        });
    }
    let scale = conv::<T>(2.0 / (m as f64 + 1.0));
    let step = T::pi() / conv::<T>(m as f64 + 1.0);
    let coeffs = DVector::from_iterator(
        n_modes,
        (1..=n_modes).map(|n| {
            let mut acc = Complex::new(T::zero(), T::zero());
            for (j, &s) in samples.iter().enumerate() {
                let phase = conv::<T>(n as f64) * conv::<T>((j + 1) as f64) * step;
                acc += s * Complex::new(phase.sin(), T::zero());
            }
            acc * Complex::new(scale, T::zero())
        }),
    );
    Ok(ModeCoefficients::new(coeffs, width_a))
}

/// Evaluate the sine expansion at a transverse point v.
pub fn synthesize<T: Real>(f: &ModeCoefficients<T>, v: T) -> C<T> {
    let mut acc = Complex::new(T::zero(), T::zero());
    for (i, &c) in f.coeffs.iter().enumerate() {
        let phase = conv::<T>((i + 1) as f64) * T::pi() * v / f.width_a;
        acc += c * Complex::new(phase.sin(), T::zero());
    }
    acc
}
