//! Galerkin projection of the flattened wave equation onto the sine
//! basis: the variable-coefficient operator B^2(u), the diagonal
//! splitting operator C(u) interpolating the two asymptotic dispersion
//! operators, and the four coefficient blocks of the split first-order
//! system for the one-way amplitudes.

use nalgebra::{ComplexField, DMatrix, DVector};
use num_complex::Complex;

use crate::error::{Result, SolverError};
use crate::modal_basis::{b_const_diagonal, DispersionSpec};
use crate::profile::RefractiveProfile;
use crate::scalar::{as_f64, conv, Real, C};

/// Shape of the splitting function f(u) = (1 + tanh((u - center)/width))/2.
#[derive(Debug, Clone, Copy)]
pub struct SplitterConfig<T: Real> {
    pub center: T,
    pub width: T,
}

impl<T: Real> SplitterConfig<T> {
    /// Centered on the tabulated region, transition scale half a width.
    pub fn for_profile(profile: &RefractiveProfile<T>) -> Self {
        let (lo, hi) = profile.interval();
        Self {
            center: (lo + hi) * conv(0.5),
            width: profile.width_a * conv(0.5),
        }
    }

    pub fn f(&self, u: T) -> T {
        (T::one() + ((u - self.center) / self.width).tanh()) * conv(0.5)
    }

    pub fn f_prime(&self, u: T) -> T {
        let c = ((u - self.center) / self.width).cosh();
        T::one() / (c * c * self.width * conv(2.0))
    }
}

/// Assembled coupled-mode operators for a fixed energy and truncation.
pub struct CoupledSystem<'a, T: Real> {
    pub profile: &'a RefractiveProfile<T>,
    pub k2: T,
    pub n_modes: usize,
    pub splitter: SplitterConfig<T>,
    /// Diagonals of the asymptotic operators B_- and B_+.
    pub b_minus: DVector<C<T>>,
    pub b_plus: DVector<C<T>>,
    row: Vec<T>,
}

impl<'a, T: Real> CoupledSystem<'a, T> {
    pub fn new(
        profile: &'a RefractiveProfile<T>,
        k2: T,
        n_modes: usize,
        splitter: SplitterConfig<T>,
    ) -> Result<Self> {
        if n_modes == 0 {
            return Err(SolverError::Config("mode truncation must be positive".into()));
        }
        if profile.l_max() < 2 * n_modes {
            return Err(SolverError::InsufficientCoefficients {
                requested: 2 * n_modes,
                available: profile.l_max(),
            });
        }
        let a = profile.width_a;
        let spec_m = DispersionSpec::new(k2, profile.mu_minus, a);
        let spec_p = DispersionSpec::new(k2, profile.mu_plus, a);
        // a numerically vanishing radicand makes the splitter singular at
        // its endpoints; reject the energy as cutoff-degenerate
        for mu in [profile.mu_minus, profile.mu_plus] {
            for n in 1..=n_modes {
                let npi = conv::<T>(n as f64) * T::pi() / a;
                let rad = k2 * mu - npi * npi;
                let scale = (k2 * mu).abs().max(npi * npi);
                if rad.abs() <= conv::<T>(1e-15) * scale {
                    return Err(SolverError::CutoffDegenerate { mode: n });
                }
            }
        }
        Ok(Self {
            profile,
            k2,
            n_modes,
            splitter,
            b_minus: b_const_diagonal(&spec_m, n_modes),
            b_plus: b_const_diagonal(&spec_p, n_modes),
            row: vec![T::zero(); profile.l_max() + 1],
        })
    }

    /// Real symmetric Galerkin matrix of k^2 mu(u, .) - d^2/dv^2 in the
    /// sine basis (1-based mode indices shifted to 0-based storage):
    /// B^2_nm = k^2 [mu_0 d_nm + (mu_|n-m|(1 - d_nm) - mu_(n+m))/2]
    ///          - (n pi / a)^2 d_nm.
    pub fn b2(&mut self, u: T) -> DMatrix<T> {
        let n = self.n_modes;
        let a = self.profile.width_a;
        self.profile.coeffs_at(u, &mut self.row);
        let mu = &self.row;
        let mut out = DMatrix::zeros(n, n);
        let half = conv::<T>(0.5);
        for i in 1..=n {
            for j in i..=n {
                let mut val = if i == j {
                    mu[0] - half * mu[i + j]
                } else {
                    half * (mu[j - i] - mu[i + j])
                };
                val *= self.k2;
                if i == j {
                    let npi = conv::<T>(i as f64) * T::pi() / a;
                    val -= npi * npi;
                }
                out[(i - 1, j - 1)] = val;
                out[(j - 1, i - 1)] = val;
            }
        }
        out
    }

    /// Diagonal of the splitting operator C(u).
    pub fn c_diag(&self, u: T) -> DVector<C<T>> {
        let f = self.splitter.f(u);
        DVector::from_iterator(
            self.n_modes,
            self.b_minus
                .iter()
                .zip(self.b_plus.iter())
                .map(|(&bm, &bp)| bm + (bp - bm) * Complex::new(f, T::zero())),
        )
    }

    /// Diagonal of (d C^{-1} / du) C = -f'(u) (B_+ - B_-) / C(u).
    pub fn dcinv_c_diag(&self, u: T) -> Result<DVector<C<T>>> {
        let fp = self.splitter.f_prime(u);
        let c = self.c_diag(u);
        let mut out = DVector::from_element(self.n_modes, Complex::new(T::zero(), T::zero()));
        let floor = conv::<T>(1e-7) * (T::one() + self.k2.abs().sqrt());
        for i in 0..self.n_modes {
            if c[i].modulus() < floor {
                return Err(SolverError::SingularSplitter {
                    u: as_f64(u),
                    mode: i + 1,
                });
            }
            out[i] = -(self.b_plus[i] - self.b_minus[i]) * Complex::new(fp, T::zero()) / c[i];
        }
        Ok(out)
    }

    /// The four N x N blocks (alpha, beta, gamma, delta) of the split
    /// system d/du [phi+, phi-] = [[alpha, beta], [gamma, delta]] [phi+, phi-]:
    ///   alpha = [ (dC^-1) C + i C^-1 B^2 + i C] / 2
    ///   beta  = [-(dC^-1) C + i C^-1 B^2 - i C] / 2
    ///   gamma = [-(dC^-1) C - i C^-1 B^2 + i C] / 2
    ///   delta = [ (dC^-1) C - i C^-1 B^2 - i C] / 2.
    pub fn blocks(&mut self, u: T) -> Result<[DMatrix<C<T>>; 4]> {
        let n = self.n_modes;
        let b2 = self.b2(u);
        let c = self.c_diag(u);
        let dc = self.dcinv_c_diag(u)?;
        let i_unit = Complex::new(T::zero(), T::one());
        let half = Complex::new(conv::<T>(0.5), T::zero());

        let mut alpha = DMatrix::from_element(n, n, Complex::new(T::zero(), T::zero()));
        let mut beta = alpha.clone();
        let mut gamma = alpha.clone();
        let mut delta = alpha.clone();
        for r in 0..n {
            let cinv = Complex::new(T::one(), T::zero()) / c[r];
            for s in 0..n {
                // i C^-1 B^2 (diagonal times real matrix)
                let m = i_unit * cinv * Complex::new(b2[(r, s)], T::zero());
                alpha[(r, s)] = m * half;
                beta[(r, s)] = m * half;
                gamma[(r, s)] = -m * half;
                delta[(r, s)] = -m * half;
            }
            let d = dc[r] * half;
            let ic = i_unit * c[r] * half;
            alpha[(r, r)] += d + ic;
            beta[(r, r)] += -d - ic;
            gamma[(r, r)] += -d + ic;
            delta[(r, r)] += d - ic;
        }
        Ok([alpha, beta, gamma, delta])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::RefractiveProfile;
    use crate::quad::tanh_sinh_real;
    use approx::assert_relative_eq;

    fn constant_profile(coeffs: Vec<f64>) -> RefractiveProfile<f64> {
        let grid: Vec<f64> = (0..=40).map(|i| -2.0 + 0.1 * i as f64).collect();
        let c = coeffs.clone();
        RefractiveProfile::from_coefficients(1.0, grid, move |_| c.clone(), coeffs[0], coeffs[0])
            .unwrap()
    }

    #[test]
    fn b2_matches_the_single_harmonic_example() {
        // mu = 1 + 0.1 cos(pi v / a): off-diagonal (1,2) entry is k^2/20
        let mut coeffs = vec![0.0; 17];
        coeffs[0] = 1.0;
        coeffs[1] = 0.1;
        let p = constant_profile(coeffs);
        let k2 = 30.0;
        let mut sys = CoupledSystem::new(&p, k2, 8, SplitterConfig::for_profile(&p)).unwrap();
        let b2 = sys.b2(0.0);
        assert_relative_eq!(b2[(0, 1)], k2 * 0.05, epsilon = 1e-12);
        assert_relative_eq!(b2[(1, 0)], k2 * 0.05, epsilon = 1e-12);
        let pi = std::f64::consts::PI;
        assert_relative_eq!(b2[(0, 0)], k2 - pi * pi, epsilon = 1e-12);
        // mu_2 = 0 here, so no (1,1) correction; (1,3) couples via mu_2 = 0
        assert_relative_eq!(b2[(0, 2)], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn b2_matches_direct_quadrature() {
        // richer cross-section: mu = 1 + 0.2 cos(pi v) - 0.05 cos(3 pi v)
        let mut coeffs = vec![0.0; 13];
        coeffs[0] = 1.0;
        coeffs[1] = 0.2;
        coeffs[3] = -0.05;
        let p = constant_profile(coeffs.clone());
        let k2 = 25.0;
        let mut sys = CoupledSystem::new(&p, k2, 6, SplitterConfig::for_profile(&p)).unwrap();
        let b2 = sys.b2(0.3);
        let pi = std::f64::consts::PI;
        let mu = |v: f64| 1.0 + 0.2 * (pi * v).cos() - 0.05 * (3.0 * pi * v).cos();
        for n in 1..=6usize {
            for m in 1..=6usize {
                let (quad, _) = tanh_sinh_real(
                    |da: f64, _| {
                        let v = da;
                        k2 * mu(v) * (n as f64 * pi * v).sin() * (m as f64 * pi * v).sin()
                    },
                    0.0,
                    1.0,
                    1e-13,
                );
                let mut expect = 2.0 * quad;
                if n == m {
                    expect -= (n as f64 * pi).powi(2);
                }
                assert_relative_eq!(b2[(n - 1, m - 1)], expect, epsilon = 1e-11);
            }
        }
    }

    #[test]
    fn blocks_degenerate_correctly_in_flat_regions() {
        // step-like synthetic profile: mu goes from 1 to 0.49
        let grid: Vec<f64> = (0..=100).map(|i| -5.0 + 0.1 * i as f64).collect();
        let p = RefractiveProfile::from_coefficients(
            1.0,
            grid,
            |u: f64| {
                let f = 0.5 * (1.0 + (2.0 * u).tanh());
                let mut row = vec![0.0; 9];
                row[0] = 1.0 + f * (0.49 - 1.0);
                row
            },
            1.0,
            0.49,
        )
        .unwrap();
        let mut sys = CoupledSystem::new(
            &p,
            50.0,
            4,
            SplitterConfig {
                center: 0.0,
                width: 0.5,
            },
        )
        .unwrap();
        // far left: coupling blocks vanish, alpha = i B_-, delta = -i B_-
        let [alpha, beta, gamma, delta] = sys.blocks(-40.0).unwrap();
        for r in 0..4 {
            for s in 0..4 {
                assert!(beta[(r, s)].norm() < 1e-12, "beta {:?}", beta[(r, s)]);
                assert!(gamma[(r, s)].norm() < 1e-12);
                let expect = if r == s {
                    Complex::new(0.0, 1.0) * sys.b_minus[r]
                } else {
                    Complex::new(0.0, 0.0)
                };
                assert!((alpha[(r, s)] - expect).norm() < 1e-12);
                assert!((delta[(r, s)] + expect).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn blocks_reconstruct_the_second_order_system() {
        // E M + E' = K E with E = [[I, I], [iC, -iC]], K = [[0, I], [-B^2, 0]]
        let grid: Vec<f64> = (0..=100).map(|i| -5.0 + 0.1 * i as f64).collect();
        let p = RefractiveProfile::from_coefficients(
            1.0,
            grid,
            |u: f64| {
                let f = 0.5 * (1.0 + (2.0 * u).tanh());
                let g = (-u * u).exp();
                let mut row = vec![0.0; 11];
                row[0] = 1.0 + f * (0.64 - 1.0);
                row[1] = 0.15 * g;
                row[2] = -0.07 * g;
                row
            },
            1.0,
            0.64,
        )
        .unwrap();
        let splitter = SplitterConfig {
            center: 0.2,
            width: 0.7,
        };
        let mut sys = CoupledSystem::new(&p, 47.0, 5, splitter).unwrap();
        let u = 0.37;
        let n = 5;
        let [alpha, beta, gamma, delta] = sys.blocks(u).unwrap();
        let b2 = sys.b2(u).map(|x| Complex::new(x, 0.0));
        let c = sys.c_diag(u);
        let fp = splitter.f_prime(u);
        let i_unit = Complex::new(0.0, 1.0);

        let mut m = DMatrix::from_element(2 * n, 2 * n, Complex::new(0.0, 0.0));
        let mut e = m.clone();
        let mut ep = m.clone();
        let mut k = m.clone();
        for r in 0..n {
            for s in 0..n {
                m[(r, s)] = alpha[(r, s)];
                m[(r, n + s)] = beta[(r, s)];
                m[(n + r, s)] = gamma[(r, s)];
                m[(n + r, n + s)] = delta[(r, s)];
                k[(n + r, s)] = -b2[(r, s)];
            }
            e[(r, r)] = Complex::new(1.0, 0.0);
            e[(r, n + r)] = Complex::new(1.0, 0.0);
            e[(n + r, r)] = i_unit * c[r];
            e[(n + r, n + r)] = -i_unit * c[r];
            k[(r, n + r)] = Complex::new(1.0, 0.0);
            // C' = f'(u) (B_+ - B_-)
            let cp = (sys.b_plus[r] - sys.b_minus[r]) * Complex::new(fp, 0.0);
            ep[(n + r, r)] = i_unit * cp;
            ep[(n + r, n + r)] = -i_unit * cp;
        }
        let lhs = &e * &m + ep;
        let rhs = k * e;
        let diff = (&lhs - &rhs).map(|x| x.norm()).max();
        assert!(diff < 1e-12, "reconstruction defect {diff}");
    }

    #[test]
    fn singular_splitter_is_detected() {
        // mode 2 sits a hair above cutoff on the left and a hair below on
        // the right: C_2(u) sweeps through a neighbourhood of zero
        let pi = std::f64::consts::PI;
        let k2 = 4.0 * pi * pi + 2e-13;
        let mu_plus = (4.0 * pi * pi - 2e-13) / k2;
        let grid: Vec<f64> = (0..=40).map(|i| -2.0 + 0.1 * i as f64).collect();
        let p = RefractiveProfile::from_coefficients(
            1.0,
            grid,
            move |u: f64| {
                let f = 0.5 * (1.0 + (2.0 * u).tanh());
                let mut row = vec![0.0; 9];
                row[0] = 1.0 + f * (mu_plus - 1.0);
                row
            },
            1.0,
            mu_plus,
        )
        .unwrap();
        let mut sys = CoupledSystem::new(
            &p,
            k2,
            3,
            SplitterConfig {
                center: 0.0,
                width: 0.5,
            },
        )
        .unwrap();
        assert!(matches!(
            sys.blocks(0.0),
            Err(SolverError::SingularSplitter { mode: 2, .. })
        ));
    }

    #[test]
    fn truncation_needs_enough_coefficients() {
        let p = constant_profile(vec![1.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(matches!(
            CoupledSystem::new(&p, 10.0, 4, SplitterConfig::for_profile(&p)),
            Err(SolverError::InsufficientCoefficients { .. })
        ));
    }

    #[test]
    fn exact_cutoff_is_rejected() {
        let p = constant_profile(vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let pi = std::f64::consts::PI;
        assert!(matches!(
            CoupledSystem::new(&p, pi * pi, 4, SplitterConfig::for_profile(&p)),
            Err(SolverError::CutoffDegenerate { mode: 1 })
        ));
    }
}
