//! Adaptive embedded Runge–Kutta integration (Dormand–Prince 5(4)) for
//! complex vector states. Marching direction is the sign of `x_end - x0`.

use nalgebra::DVector;
use num_complex::Complex;

use crate::error::{Result, SolverError};
use crate::scalar::{as_f64, conv, Real, C};

/// Integrator controls.
#[derive(Debug, Clone, Copy)]
pub struct OdeOptions<T: Real> {
    pub rel_tol: T,
    pub abs_tol: T,
    pub max_step: T,
    pub max_steps: usize,
}

impl<T: Real> Default for OdeOptions<T> {
    fn default() -> Self {
        Self {
            rel_tol: conv(1e-9),
            abs_tol: conv(1e-11),
            max_step: conv(f64::INFINITY),
            max_steps: 2_000_000,
        }
    }
}

// Dormand-Prince 5(4) tableau.
const A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const C_NODES: [f64; 6] = [0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Integrate dy/dx = f(x, y) from `x0` to `x_end`.
///
/// `monitor` is called after every accepted step and may abort the
/// integration (used for blow-up detection).
pub fn integrate<T: Real>(
    mut f: impl FnMut(T, &DVector<C<T>>) -> DVector<C<T>>,
    x0: T,
    x_end: T,
    y0: DVector<C<T>>,
    opts: &OdeOptions<T>,
    mut monitor: impl FnMut(T, &DVector<C<T>>) -> Result<()>,
) -> Result<DVector<C<T>>> {
    if x_end == x0 {
        return Ok(y0);
    }
    let dir = if x_end > x0 { T::one() } else { -T::one() };
    let span = (x_end - x0).abs();
    let mut x = x0;
    let mut y = y0;
    let mut k0 = f(x, &y);

    let mut h = (span * conv(1e-3)).min(opts.max_step);
    let order_exp = conv::<T>(0.2);
    let safety = conv::<T>(0.9);

    for _ in 0..opts.max_steps {
        let remaining = (x_end - x).abs();
        if remaining == T::zero() {
            return Ok(y);
        }
        h = h.min(remaining).min(opts.max_step);
        let hs = h * dir;
        let hc = Complex::new(hs, T::zero());

        let mut k = Vec::with_capacity(7);
        k.push(k0.clone());
        for s in 0..6 {
            let mut ys = y.clone();
            for (j, kj) in k.iter().enumerate() {
                let a = A[s][j];
                if a != 0.0 {
                    ys += kj * (hc * Complex::new(conv::<T>(a), T::zero()));
                }
            }
            k.push(f(x + hs * conv(C_NODES[s]), &ys));
        }
        // 5th-order solution is row 6 of A (FSAL)
        let y_new = {
            let mut ys = y.clone();
            for (j, kj) in k.iter().take(6).enumerate() {
                let a = A[5][j];
                if a != 0.0 {
                    ys += kj * (hc * Complex::new(conv::<T>(a), T::zero()));
                }
            }
            ys
        };

        // embedded error estimate
        let mut err_sq = T::zero();
        let n = y.len();
        for i in 0..n {
            let mut e = Complex::new(T::zero(), T::zero());
            for (j, kj) in k.iter().enumerate() {
                if E[j] != 0.0 {
                    e += kj[i] * Complex::new(conv::<T>(E[j]), T::zero());
                }
            }
            e *= hc;
            let scale = opts.abs_tol
                + opts.rel_tol * norm_inf(y[i]).max(norm_inf(y_new[i]));
            let r = e.norm_sqr().sqrt() / scale;
            err_sq += r * r;
        }
        let err = (err_sq / conv(n as f64)).sqrt();

        if err <= T::one() {
            x += hs;
            y = y_new;
            k0 = k.pop().unwrap();
            monitor(x, &y)?;
        }
        let factor = if err > T::zero() {
            (safety * err.powf(-order_exp)).min(conv(5.0)).max(conv(0.2))
        } else {
            conv(5.0)
        };
        h *= factor;
        if h < conv::<T>(1e-14) * span {
            return Err(SolverError::IntegratorFailure {
                u: as_f64(x),
                reason: "step size underflow".into(),
            });
        }
    }
    Err(SolverError::IntegratorFailure {
        u: as_f64(x),
        reason: "step budget exhausted".into(),
    })
}

#[inline]
fn norm_inf<T: Real>(z: C<T>) -> T {
    z.re.abs().max(z.im.abs())
}
