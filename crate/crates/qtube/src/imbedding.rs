//! Invariant-imbedding integration of the scattering operators: the
//! reflection operator obeys a matrix Riccati equation in the left
//! endpoint of the section and the transmission operator a linear
//! companion equation. Marching toward the incoming lead is the
//! well-posed direction; the opposite march amplifies evanescent
//! components and blows up, which is detected and reported.

use nalgebra::{ComplexField, DMatrix, DVector};
use num_complex::Complex;

use crate::coupled_mode::{CoupledSystem, SplitterConfig};
use crate::error::{Result, SolverError};
use crate::ode::{integrate, OdeOptions};
use crate::profile::RefractiveProfile;
use crate::scalar::{as_f64, conv, Real, C};
use crate::scattering::ScatteringSet;

/// Controls for the operator integration.
#[derive(Debug, Clone, Copy)]
pub struct SolveOptions<T: Real> {
    pub rel_tol: T,
    pub abs_tol: T,
    /// Spectral-norm bound on the reflection operator beyond which the
    /// integration is aborted as blown up.
    pub blow_up: T,
    pub max_steps: usize,
}

impl<T: Real> Default for SolveOptions<T> {
    fn default() -> Self {
        Self {
            rel_tol: conv(1e-11),
            abs_tol: conv(1e-13),
            blow_up: conv(1e3),
            max_steps: 2_000_000,
        }
    }
}

fn pack<T: Real>(r: &DMatrix<C<T>>, t: &DMatrix<C<T>>) -> DVector<C<T>> {
    let n2 = r.len();
    let mut y = DVector::from_element(2 * n2, Complex::new(T::zero(), T::zero()));
    y.as_mut_slice()[..n2].copy_from_slice(r.as_slice());
    y.as_mut_slice()[n2..].copy_from_slice(t.as_slice());
    y
}

fn unpack<T: Real>(y: &DVector<C<T>>, n: usize) -> (DMatrix<C<T>>, DMatrix<C<T>>) {
    let n2 = n * n;
    let r = DMatrix::from_column_slice(n, n, &y.as_slice()[..n2]);
    let t = DMatrix::from_column_slice(n, n, &y.as_slice()[n2..]);
    (r, t)
}

fn frobenius<T: Real>(m: &DMatrix<C<T>>) -> T {
    let mut acc = T::zero();
    for z in m.iter() {
        acc += z.norm_sqr();
    }
    acc.sqrt()
}

/// One imbedding sweep: starting from R = 0, T = I at `from`, march the
/// left endpoint to `to` (the well-posed direction is `to < from`).
/// Returns (R, T) for waves incident from the `to` side.
pub fn riccati_sweep<T: Real>(
    sys: &mut CoupledSystem<'_, T>,
    from: T,
    to: T,
    opts: &SolveOptions<T>,
) -> Result<(DMatrix<C<T>>, DMatrix<C<T>>)> {
    let n = sys.n_modes;
    let zero = DMatrix::from_element(n, n, Complex::new(T::zero(), T::zero()));
    let eye = DMatrix::from_diagonal_element(n, n, Complex::new(T::one(), T::zero()));
    let y0 = pack(&zero, &eye);

    let ode_opts = OdeOptions {
        rel_tol: opts.rel_tol,
        abs_tol: opts.abs_tol,
        max_step: sys.profile.width_a,
        max_steps: opts.max_steps,
    };
    let mut failure: Option<SolverError> = None;
    let y = integrate(
        |u, y: &DVector<C<T>>| {
            let (r, t) = unpack(y, n);
            match sys.blocks(u) {
                Ok([alpha, beta, gamma, delta]) => {
                    // dR/du1 = gamma + delta R - R alpha - R beta R
                    // dT/du1 = -T (alpha + beta R)
                    let br = &beta * &r;
                    let dr = gamma + delta * &r - &r * (alpha.clone() + &br);
                    let dt = -(&t * (alpha + br));
                    pack(&dr, &dt)
                }
                Err(e) => {
                    failure = Some(e);
                    DVector::from_element(2 * n * n, Complex::new(T::zero(), T::zero()))
                }
            }
        },
        from,
        to,
        y0,
        &ode_opts,
        |u, y| {
            let (r, _) = unpack(y, n);
            let norm = frobenius(&r);
            if norm > opts.blow_up {
                return Err(SolverError::RiccatiBlowUp {
                    u: as_f64(u),
                    norm: as_f64(norm),
                });
            }
            Ok(())
        },
    )?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(unpack(&y, n))
}

/// Full scattering quadruple of the section [u1, u2]: a leftward sweep
/// for the right-moving operators and a sweep of the mirrored channel
/// for the left-moving ones.
pub fn integrate_scattering<T: Real>(
    profile: &RefractiveProfile<T>,
    k2: T,
    n_modes: usize,
    splitter: SplitterConfig<T>,
    u1: T,
    u2: T,
    opts: &SolveOptions<T>,
) -> Result<ScatteringSet<T>> {
    if u2 <= u1 {
        return Err(SolverError::Config(
            "section interval must have positive length".into(),
        ));
    }
    let mut sys = CoupledSystem::new(profile, k2, n_modes, splitter)?;
    let (r_plus, t_plus) = riccati_sweep(&mut sys, u2, u1, opts)?;

    let mirrored = profile.reflected();
    let msplit = SplitterConfig {
        center: -splitter.center,
        width: splitter.width,
    };
    let mut msys = CoupledSystem::new(&mirrored, k2, n_modes, msplit)?;
    let (r_minus, t_minus) = riccati_sweep(&mut msys, -u1, -u2, opts)?;

    Ok(ScatteringSet {
        k2,
        width_a: profile.width_a,
        mu_left: profile.mu_minus,
        mu_right: profile.mu_plus,
        u_left: u1,
        u_right: u2,
        t_plus,
        r_plus,
        r_minus,
        t_minus,
    })
}

/// Scattering operators of a profile over its whole tabulated extent,
/// with the default splitter.
pub fn solve_profile<T: Real>(
    profile: &RefractiveProfile<T>,
    k2: T,
    n_modes: usize,
    opts: &SolveOptions<T>,
) -> Result<ScatteringSet<T>> {
    let (u1, u2) = profile.interval();
    integrate_scattering(
        profile,
        k2,
        n_modes,
        SplitterConfig::for_profile(profile),
        u1,
        u2,
        opts,
    )
}

/// Outcome of marching the one-way equation in the forbidden direction.
#[derive(Debug, Clone, Copy)]
pub struct GrowthReport<T: Real> {
    /// Mode whose amplification is tracked (0 = none evanescent).
    pub mode: usize,
    /// Magnitude of its axial wavenumber.
    pub alpha_mag: T,
    pub length: T,
    /// Numerically measured amplification of the backward march.
    pub measured: T,
    /// Analytic amplification e^{|alpha| L}.
    pub predicted: T,
}

/// Demonstrate why one-way marching must be split: integrate
/// d psi / dx = i B psi backward over a flat duct of unit width and
/// report the amplification of the highest evanescent mode among the
/// first `n_modes`. With no evanescent mode the factor is 1.
pub fn illposedness_demo<T: Real>(n_modes: usize, k2: T, l: T) -> GrowthReport<T> {
    let spec = crate::modal_basis::DispersionSpec::new(k2, T::one(), T::one());
    let b = crate::modal_basis::b_const_diagonal(&spec, n_modes);
    let mode = (1..=n_modes).rev().find(|&n| b[n - 1].im > T::zero());
    let Some(mode) = mode else {
        return GrowthReport {
            mode: 0,
            alpha_mag: T::zero(),
            length: l,
            measured: T::one(),
            predicted: T::one(),
        };
    };
    let mut y0 = DVector::from_element(n_modes, Complex::new(T::zero(), T::zero()));
    y0[mode - 1] = Complex::new(T::one(), T::zero());
    let opts = OdeOptions {
        rel_tol: conv(1e-9),
        abs_tol: conv(1e-12),
        max_step: l,
        max_steps: 1_000_000,
    };
    // the right-moving field obeys psi' = iB psi; marching it toward
    // decreasing x integrates against the evanescent decay
    let b_rhs = b.clone();
    let y = integrate(
        |_, y: &DVector<C<T>>| {
            DVector::from_iterator(
                y.len(),
                y.iter()
                    .zip(b_rhs.iter())
                    .map(|(&v, &al)| Complex::new(T::zero(), T::one()) * al * v),
            )
        },
        l,
        T::zero(),
        y0,
        &opts,
        |_, _| Ok(()),
    )
    .expect("linear diagonal system integrates");
    let measured = ComplexField::modulus(y[mode - 1]);
    let alpha_mag = b[mode - 1].im;
    GrowthReport {
        mode,
        alpha_mag,
        length: l,
        measured,
        predicted: (alpha_mag * l).exp(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::RefractiveProfile;
    use approx::assert_relative_eq;

    fn bump_profile(amp: f64) -> RefractiveProfile<f64> {
        let grid: Vec<f64> = (0..=1600).map(|i| -8.0 + 0.01 * i as f64).collect();
        RefractiveProfile::from_coefficients(
            1.0,
            grid,
            move |u: f64| {
                let g = (-u * u).exp();
                let mut row = vec![0.0; 13];
                row[0] = 1.0;
                row[1] = amp * g;
                row
            },
            1.0,
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn uniform_section_gives_pure_phases() {
        let grid: Vec<f64> = (0..=20).map(|i| -1.0 + 0.1 * i as f64).collect();
        let p = RefractiveProfile::from_coefficients(
            1.0,
            grid,
            |_| vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            1.0,
            1.0,
        )
        .unwrap();
        let s = solve_profile(&p, 30.0, 4, &SolveOptions::default()).unwrap();
        let pi = std::f64::consts::PI;
        for n in 1..=4usize {
            let al = Complex::new(30.0 - (n as f64 * pi).powi(2), 0.0).sqrt();
            let al = if al.re < 0.0 { -al } else { al };
            let expect = (Complex::new(0.0, 1.0) * al * 2.0).exp();
            assert!(
                (s.t_plus[(n - 1, n - 1)] - expect).norm() < 1e-8,
                "mode {n}: {} vs {expect}",
                s.t_plus[(n - 1, n - 1)]
            );
        }
        let r_norm = frobenius(&s.r_plus);
        assert!(r_norm < 1e-9, "reflection {r_norm}");
    }

    #[test]
    fn smooth_bump_conserves_flux_and_is_symmetric() {
        let p = bump_profile(0.12);
        let s = solve_profile(&p, 30.0, 5, &SolveOptions::default()).unwrap();
        assert!(s.flux_residual() < 2e-9, "flux {}", s.flux_residual());
        // even profile: the two directions are related by the mirror
        // symmetry, so the quadruple is direction-symmetric
        let dt = (&s.t_plus - &s.t_minus).map(|z| z.norm()).max();
        let dr = (&s.r_plus - &s.r_minus).map(|z| z.norm()).max();
        assert!(dt < 1e-9, "transmission asymmetry {dt}");
        assert!(dr < 1e-9, "reflection asymmetry {dr}");
        // the bump actually scatters: the reflection is adiabatically
        // suppressed but sits far above the integration tolerance
        assert!(frobenius(&s.r_plus) > 1e-7);
    }

    #[test]
    fn tighter_tolerance_refines_the_answer() {
        let p = bump_profile(0.2);
        let run = |rtol: f64| {
            let opts = SolveOptions {
                rel_tol: rtol,
                abs_tol: rtol * 1e-2,
                ..Default::default()
            };
            solve_profile(&p, 33.0, 4, &opts).unwrap().t_plus
        };
        let loose = run(1e-6);
        let tight = run(1e-11);
        let drift = (&loose - &tight).map(|z| z.norm()).max();
        assert!(drift > 1e-12 && drift < 1e-3, "drift {drift}");
    }

    #[test]
    fn forbidden_march_amplifies_like_the_exponent() {
        // mode 2 at k^2 = 14: |alpha_2| = sqrt(4 pi^2 - 14) ~ 5.04
        let a2 = (4.0 * std::f64::consts::PI.powi(2) - 14.0f64).sqrt();
        let l = 5.0 / a2;
        let r = illposedness_demo(2, 14.0, l);
        assert_eq!(r.mode, 2);
        let e5 = 5.0f64.exp();
        assert!(
            (r.measured - e5).abs() / e5 < 0.1,
            "growth {} vs {e5}",
            r.measured
        );
        // doubling the length squares the factor
        let r2 = illposedness_demo(2, 14.0, 2.0 * l);
        assert_relative_eq!(r2.measured, r.measured * r.measured, max_relative = 1e-3);
        // no evanescent modes: nothing grows
        let flat = illposedness_demo(1, 30.0, 3.0);
        assert_eq!(flat.mode, 0);
        assert_eq!(flat.measured, 1.0);
    }

    #[test]
    fn wrong_direction_march_blows_up() {
        // strong scattering and several evanescent modes: the rightward
        // march of the Riccati equation is exponentially unstable
        let p = bump_profile(0.5);
        let mut sys = CoupledSystem::new(
            &p,
            12.0,
            6,
            SplitterConfig {
                center: 0.0,
                width: 0.5,
            },
        )
        .unwrap();
        let r = riccati_sweep(&mut sys, -8.0, 8.0, &SolveOptions::default());
        assert!(
            matches!(r, Err(SolverError::RiccatiBlowUp { .. }))
                || matches!(r, Err(SolverError::IntegratorFailure { .. })),
            "expected instability, got {r:?}"
        );
    }
}
