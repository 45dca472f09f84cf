//! Scattering operator quadruple of a channel section, with the modal
//! flux weights and reference-plane phase transport in the flat leads.

use nalgebra::{ComplexField, DMatrix, DVector};
use num_complex::Complex;

use crate::modal_basis::{b_const_diagonal, DispersionSpec};
use crate::scalar::{conv, Real, C};

/// Which asymptotic lead of a section.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// Reflection and transmission operators in the strip sine basis.
///
/// `t_plus[(n, m)]` is the amplitude of outgoing right mode n per unit
/// incident left mode m; `r_plus` reflects left to left, `r_minus`
/// right to right, `t_minus` transmits right to left. The reference
/// planes sit at `u_left` and `u_right` in the strip variable.
#[derive(Debug, Clone)]
pub struct ScatteringSet<T: Real> {
    pub k2: T,
    pub width_a: T,
    pub mu_left: T,
    pub mu_right: T,
    pub u_left: T,
    pub u_right: T,
    pub t_plus: DMatrix<C<T>>,
    pub r_plus: DMatrix<C<T>>,
    pub r_minus: DMatrix<C<T>>,
    pub t_minus: DMatrix<C<T>>,
}

impl<T: Real> ScatteringSet<T> {
    pub fn n_modes(&self) -> usize {
        self.t_plus.nrows()
    }

    pub fn side_spec(&self, side: Side) -> DispersionSpec<T> {
        let mu = match side {
            Side::Left => self.mu_left,
            Side::Right => self.mu_right,
        };
        DispersionSpec::new(self.k2, mu, self.width_a)
    }

    /// Modal energy-flux weights Re(alpha_n) a / 2. In the strip
    /// variables this equals the physical flux weight of the lead, so
    /// the weights are directly comparable across conformally related
    /// descriptions. Evanescent modes carry weight zero.
    pub fn flux_weights(&self, side: Side) -> DVector<T> {
        let spec = self.side_spec(side);
        let b = b_const_diagonal(&spec, self.n_modes());
        let half_a = self.width_a * conv(0.5);
        DVector::from_iterator(b.len(), b.iter().map(|z| z.re * half_a))
    }

    /// Worst relative violation of energy-flux conservation over the
    /// propagating incident modes of both leads.
    pub fn flux_residual(&self) -> T {
        let wl = self.flux_weights(Side::Left);
        let wr = self.flux_weights(Side::Right);
        let mut worst = T::zero();
        let n = self.n_modes();
        for j in 0..n {
            if wl[j] > T::zero() {
                let mut out = T::zero();
                for i in 0..n {
                    out += wr[i] * self.t_plus[(i, j)].norm_sqr()
                        + wl[i] * self.r_plus[(i, j)].norm_sqr();
                }
                worst = worst.max((out - wl[j]).abs() / wl[j]);
            }
            if wr[j] > T::zero() {
                let mut out = T::zero();
                for i in 0..n {
                    out += wl[i] * self.t_minus[(i, j)].norm_sqr()
                        + wr[i] * self.r_minus[(i, j)].norm_sqr();
                }
                worst = worst.max((out - wr[j]).abs() / wr[j]);
            }
        }
        worst
    }

    /// Move the reference planes outward through the flat leads:
    /// `l_left` to the left and `l_right` to the right (negative lengths
    /// pull a plane inward). Amplitudes pick up e^{i alpha L} per
    /// traversal, so every operator is wrapped in the diagonal
    /// propagators of its leads.
    pub fn flat_propagate(&mut self, l_left: T, l_right: T) {
        let n = self.n_modes();
        let el = self.propagator(Side::Left, l_left);
        let er = self.propagator(Side::Right, l_right);
        for r in 0..n {
            for s in 0..n {
                self.t_plus[(r, s)] *= er[r] * el[s];
                self.r_plus[(r, s)] *= el[r] * el[s];
                self.r_minus[(r, s)] *= er[r] * er[s];
                self.t_minus[(r, s)] *= el[r] * er[s];
            }
        }
        self.u_left -= l_left;
        self.u_right += l_right;
    }

    fn propagator(&self, side: Side, l: T) -> DVector<C<T>> {
        let spec = self.side_spec(side);
        let b = b_const_diagonal(&spec, self.n_modes());
        DVector::from_iterator(
            b.len(),
            b.iter().map(|&al| (al * Complex::new(T::zero(), l)).exp()),
        )
    }
}
