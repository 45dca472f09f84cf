//! Conformal transplantation of a polygonal channel onto the straight
//! strip 0 < Im w < a. The derivative of the map is a product of
//! sinh/cosh factors raised to the corner exponents; corner rounding
//! replaces each factor by its average over a short prevertex interval,
//! which keeps the boundary C^1 while leaving the straight sides exact.
//! The prevertex positions are found by damped least squares on side
//! lengths, the terminal width ratio and the relative placement of the
//! two boundaries.

use nalgebra::{ComplexField, DMatrix, DVector};
use num_complex::Complex;

use crate::error::{Result, SolverError};
use crate::geometry::{Corner, DuctGeometry, Edge};
use crate::quad::{gauss_legendre, tanh_sinh_offsets};
use crate::scalar::{as_f64, conv, Real, C};

#[inline]
fn cre<T: Real>(x: T) -> C<T> {
    Complex::new(x, T::zero())
}

#[inline]
fn czero<T: Real>() -> C<T> {
    Complex::new(T::zero(), T::zero())
}

#[inline]
fn cross2<T: Real>(p: C<T>, q: C<T>) -> T {
    p.re * q.im - p.im * q.re
}

/// One factor of the map derivative, attached to a single corner.
#[derive(Debug, Clone)]
pub struct MapFactor<T: Real> {
    pub edge: Edge,
    /// Axial prevertex position on the strip boundary.
    pub prevertex: T,
    pub beta: T,
    /// Half-width of the smoothing interval in the strip variable
    /// (0 = sharp corner).
    pub delta: T,
}

/// Cached Gauss-Legendre rules shared by all factor evaluations.
#[derive(Debug, Clone)]
pub struct GlRules<T: Real> {
    n12: Vec<T>,
    w12: Vec<T>,
    n24: Vec<T>,
    w24: Vec<T>,
}

impl<T: Real> GlRules<T> {
    fn new() -> Self {
        let (n12, w12) = gauss_legendre(12);
        let (n24, w24) = gauss_legendre(24);
        Self { n12, w12, n24, w24 }
    }
}

impl<T: Real> MapFactor<T> {
    /// The sinh/cosh base evaluated at w - prevertex.
    fn base(&self, dw: C<T>, a: T) -> C<T> {
        let arg = dw * cre(T::pi() / (a + a));
        match self.edge {
            Edge::Lower => arg.sinh(),
            Edge::Upper => arg.cosh(),
        }
    }

    /// Factor value at w = prevertex + dw. Smoothed factors average the
    /// sharp factor over prevertex shifts in [-delta, delta].
    fn value(&self, dw: C<T>, a: T, gl: &GlRules<T>) -> C<T> {
        if self.delta == T::zero() {
            return self.base(dw, a).powf(self.beta);
        }
        let d = self.delta;
        // distance of the averaging segment from the factor's zero
        let vp = match self.edge {
            Edge::Lower => dw.im,
            Edge::Upper => dw.im - a,
        };
        if dw.re.abs() > conv::<T>(4.0) * d || vp.abs() > conv::<T>(4.0) * d {
            let wide = dw.re.abs() > conv::<T>(12.0) * d || vp.abs() > conv::<T>(12.0) * d;
            let (nodes, weights) = if wide {
                (&gl.n12, &gl.w12)
            } else {
                (&gl.n24, &gl.w24)
            };
            let mut acc: C<T> = czero();
            for (&x, &w) in nodes.iter().zip(weights.iter()) {
                acc += self.base(dw - cre(d * x), a).powf(self.beta) * cre(w);
            }
            return acc * cre(conv(0.5));
        }
        // near the zero: split the average at the closest shift and use
        // endpoint-singularity-safe quadrature on both halves
        let s_star = dw.re.max(-d).min(d);
        let xi0 = Complex::new(dw.re - s_star, dw.im);
        let tol = conv::<T>(1e-13);
        let mut acc: C<T> = czero();
        if s_star > -d {
            let (v, _) = tanh_sinh_offsets(
                |_, db| self.base(xi0 + cre(db), a).powf(self.beta),
                -d,
                s_star,
                tol,
            );
            acc += v;
        }
        if s_star < d {
            let (v, _) = tanh_sinh_offsets(
                |da, _| self.base(xi0 - cre(da), a).powf(self.beta),
                s_star,
                d,
                tol,
            );
            acc += v;
        }
        acc / cre(d + d)
    }
}

/// Borrowed evaluation context for a factor product.
struct MapEval<'a, T: Real> {
    factors: &'a [MapFactor<T>],
    scale: T,
    a: T,
    gl: &'a GlRules<T>,
}

impl<T: Real> MapEval<'_, T> {
    /// d zeta / d w at w = base + du + i v. `exact` names the factor whose
    /// prevertex equals `base`, so its offset `du` is used verbatim and
    /// keeps full relative accuracy next to the singularity.
    fn deriv_offset(&self, base: T, du: T, v: T, exact: Option<usize>) -> C<T> {
        let mut acc = cre(self.scale);
        for (j, f) in self.factors.iter().enumerate() {
            let re = if exact == Some(j) {
                du
            } else {
                (base - f.prevertex) + du
            };
            acc *= f.value(Complex::new(re, v), self.a, self.gl);
        }
        acc
    }

    fn deriv(&self, w: C<T>) -> C<T> {
        self.deriv_offset(w.re, T::zero(), w.im, None)
    }

    /// Arc integral of the derivative along the boundary segment
    /// [x1, x2] at height v; either endpoint may be a sharp prevertex
    /// of the flagged factor.
    fn edge_segment(&self, v: T, x1: T, x2: T, left: Option<usize>, right: Option<usize>) -> C<T> {
        let tol = conv::<T>(1e-13);
        let (val, _) = tanh_sinh_offsets(
            |da, db| {
                if right.is_none() || (left.is_some() && da <= db) {
                    self.deriv_offset(x1, da, v, left)
                } else {
                    self.deriv_offset(x2, -db, v, right)
                }
            },
            x1,
            x2,
            tol,
        );
        val
    }

    /// Straight-segment integral between interior points, in panels no
    /// longer than the strip width.
    fn line_integral(&self, w0: C<T>, w1: C<T>) -> C<T> {
        let len = (w1 - w0).modulus();
        if len == T::zero() {
            return czero();
        }
        let dir = (w1 - w0) / cre(len);
        let n = (as_f64(len / self.a).ceil() as usize).max(1);
        let step = len / conv(n as f64);
        let tol = conv::<T>(1e-12);
        let mut acc: C<T> = czero();
        for i in 0..n {
            let t0 = step * conv(i as f64);
            let (val, _) = tanh_sinh_offsets(
                |da, _| self.deriv(w0 + dir * cre(t0 + da)) * dir,
                T::zero(),
                step,
                tol,
            );
            acc += val;
        }
        acc
    }

    /// (log magnitude, phase) of the derivative limit at Re w -> +-inf,
    /// excluding the exponential factor common to the product (it cancels
    /// because the exponents sum to zero).
    fn log_deriv_asym(&self, plus: bool) -> (T, T) {
        let mut lr = self.scale.ln();
        let mut li = T::zero();
        let half_log = conv::<T>(std::f64::consts::LN_2) * -T::one();
        for f in self.factors {
            let coef = T::pi() * f.prevertex / (self.a + self.a);
            lr += f.beta * (half_log + if plus { -coef } else { coef });
            if !plus && matches!(f.edge, Edge::Lower) {
                li += T::pi() * f.beta;
            }
            if f.delta > T::zero() {
                // averaging multiplies both limits by sinh(x)/x
                let x = T::pi() * f.beta * f.delta / (self.a + self.a);
                if x.abs() > conv(1e-8) {
                    lr += (x.sinh() / x).ln();
                } else {
                    lr += x * x / conv(6.0);
                }
            }
        }
        (lr, li)
    }
}

/// Per-boundary data of the parameter problem.
struct EdgeSide<T: Real> {
    /// Factor indices in left-to-right order (empty for a straight edge).
    idx: Vec<usize>,
    positions: Vec<C<T>>,
    /// Unit side directions, one more than the corner count; the first
    /// and last are horizontal.
    dirs: Vec<C<T>>,
}

/// Boundary observations at one prevertex configuration: the leftmost
/// sample parameter and the corner positions obtained by intersecting
/// the straight-side lines, relative to the image of that sample.
struct EdgeObs<T: Real> {
    u0: T,
    virtual_corners: Vec<C<T>>,
}

struct ParamProblem<T: Real> {
    a: T,
    template: Vec<MapFactor<T>>,
    lower: EdgeSide<T>,
    upper: EdgeSide<T>,
    width_ratio: T,
    gl: GlRules<T>,
}

impl<T: Real> ParamProblem<T> {
    /// Unknowns: log gaps on the lower edge (its first prevertex is the
    /// gauge anchor), then the absolute first upper prevertex and the
    /// upper log gaps. If the lower edge is straight the upper first
    /// prevertex becomes the anchor instead.
    fn assign(&self, theta: &DVector<T>) -> Vec<T> {
        let mut p = vec![T::zero(); self.template.len()];
        let mut k = 0;
        if !self.lower.idx.is_empty() {
            let mut u = self.lower.positions[0].re;
            p[self.lower.idx[0]] = u;
            for i in 1..self.lower.idx.len() {
                u += theta[k].exp();
                p[self.lower.idx[i]] = u;
                k += 1;
            }
        }
        if !self.upper.idx.is_empty() {
            let mut u = if self.lower.idx.is_empty() {
                self.upper.positions[0].re
            } else {
                let v = theta[k];
                k += 1;
                v
            };
            p[self.upper.idx[0]] = u;
            for i in 1..self.upper.idx.len() {
                u += theta[k].exp();
                p[self.upper.idx[i]] = u;
                k += 1;
            }
        }
        p
    }

    fn theta_len(&self) -> usize {
        let ml = self.lower.idx.len();
        let mu = self.upper.idx.len();
        ml.saturating_sub(1)
            + mu.saturating_sub(1)
            + usize::from(ml > 0 && mu > 0)
    }

    fn theta_from_prevertices(&self, p: &[T]) -> DVector<T> {
        let mut theta = Vec::with_capacity(self.theta_len());
        if !self.lower.idx.is_empty() {
            for w in self.lower.idx.windows(2) {
                theta.push((p[w[1]] - p[w[0]]).ln());
            }
        }
        if !self.upper.idx.is_empty() {
            if !self.lower.idx.is_empty() {
                theta.push(p[self.upper.idx[0]]);
            }
            for w in self.upper.idx.windows(2) {
                theta.push((p[w[1]] - p[w[0]]).ln());
            }
        }
        DVector::from_vec(theta)
    }

    fn residuals(&self, theta: &DVector<T>) -> Result<DVector<T>> {
        let p = self.assign(theta);
        let mut factors = self.template.clone();
        for (f, &pi) in factors.iter_mut().zip(&p) {
            f.prevertex = pi;
        }
        // normalize the left derivative limit to 1
        let probe = MapEval {
            factors: &factors,
            scale: T::one(),
            a: self.a,
            gl: &self.gl,
        };
        let (lr_m, _) = probe.log_deriv_asym(false);
        let eval = MapEval {
            factors: &factors,
            scale: (-lr_m).exp(),
            a: self.a,
            gl: &self.gl,
        };
        let (lr_p, _) = eval.log_deriv_asym(true);

        let mut res = Vec::new();
        let mut obs_lower = None;
        let mut obs_upper = None;
        for (side, edge) in [(&self.lower, Edge::Lower), (&self.upper, Edge::Upper)] {
            if side.idx.is_empty() {
                continue;
            }
            let obs = self.edge_observe(&eval, side, edge)?;
            for i in 1..side.idx.len() {
                let d = side.dirs[i];
                let step = obs.virtual_corners[i] - obs.virtual_corners[i - 1];
                let proj = d.re * step.re + d.im * step.im;
                res.push(proj - (side.positions[i] - side.positions[i - 1]).modulus());
            }
            match edge {
                Edge::Lower => obs_lower = Some(obs),
                Edge::Upper => obs_upper = Some(obs),
            }
        }
        res.push(lr_p.exp() - self.width_ratio);
        if let (Some(lo), Some(up)) = (&obs_lower, &obs_upper) {
            let half = self.a * conv(0.5);
            let z = eval.line_integral(Complex::new(lo.u0, T::zero()), Complex::new(lo.u0, half))
                + eval.line_integral(Complex::new(lo.u0, half), Complex::new(up.u0, half))
                + eval.line_integral(Complex::new(up.u0, half), Complex::new(up.u0, self.a));
            let measured = (z + up.virtual_corners[0]) - lo.virtual_corners[0];
            let target = self.upper.positions[0] - self.lower.positions[0];
            res.push(measured.re - target.re);
            res.push(measured.im - target.im);
        }
        Ok(DVector::from_vec(res))
    }

    fn edge_observe(&self, eval: &MapEval<T>, side: &EdgeSide<T>, edge: Edge) -> Result<EdgeObs<T>> {
        let a = self.a;
        let v = match edge {
            Edge::Lower => T::zero(),
            Edge::Upper => a,
        };
        let m = side.idx.len();
        let p: Vec<T> = side.idx.iter().map(|&j| eval.factors[j].prevertex).collect();
        let dl: Vec<T> = side.idx.iter().map(|&j| eval.factors[j].delta).collect();
        // one sample per straight stretch, outside every smoothing zone,
        // where the boundary image is exactly a line in the side direction
        let mut samples = Vec::with_capacity(m + 1);
        samples.push(p[0] - (dl[0] + dl[0]).max(a * conv(0.75)));
        for i in 1..m {
            let lo = p[i - 1] + dl[i - 1];
            let hi = p[i] - dl[i];
            if hi <= lo {
                return Err(SolverError::RoundingTooLarge {
                    corner: side.idx[i],
                    radius: as_f64(dl[i]),
                    limit: as_f64((p[i] - p[i - 1]) * conv(0.5)),
                });
            }
            samples.push((lo + hi) * conv(0.5));
        }
        samples.push(p[m - 1] + (dl[m - 1] + dl[m - 1]).max(a * conv(0.75)));

        // cumulative boundary images at the samples, datum at samples[0]
        let mut z = vec![czero::<T>(); m + 1];
        let mut acc = czero::<T>();
        for i in 0..m {
            let mut pts: Vec<(T, Option<usize>)> = vec![(samples[i], None)];
            if dl[i] > T::zero() {
                pts.push((p[i] - dl[i], None));
                pts.push((p[i], None));
                pts.push((p[i] + dl[i], None));
            } else {
                pts.push((p[i], Some(side.idx[i])));
            }
            pts.push((samples[i + 1], None));
            for w in pts.windows(2) {
                acc += eval.edge_segment(v, w[0].0, w[1].0, w[0].1, w[1].1);
            }
            z[i + 1] = acc;
        }
        let mut vc = Vec::with_capacity(m);
        for k in 0..m {
            let (z1, d1) = (z[k], side.dirs[k]);
            let (z2, d2) = (z[k + 1], side.dirs[k + 1]);
            let t = cross2(z2 - z1, d2) / cross2(d1, d2);
            vc.push(z1 + d1 * cre(t));
        }
        Ok(EdgeObs {
            u0: samples[0],
            virtual_corners: vc,
        })
    }
}

/// Damped least squares (Levenberg-Marquardt) with a forward-difference
/// Jacobian. Trial points where the residual is undefined are rejected
/// like uphill steps.
fn least_squares<T: Real>(
    mut f: impl FnMut(&DVector<T>) -> Result<DVector<T>>,
    theta0: DVector<T>,
    tol: T,
    max_iter: usize,
) -> Result<(DVector<T>, T, usize)> {
    let mut theta = theta0;
    let mut r = f(&theta)?;
    if theta.is_empty() {
        return Ok((theta, r.amax(), 0));
    }
    let mut lambda = conv::<T>(1e-3);
    let mut iterations = 0;
    for _ in 0..max_iter {
        if r.amax() < tol {
            return Ok((theta, r.amax(), iterations));
        }
        iterations += 1;
        let (m, n) = (r.len(), theta.len());
        let mut jac = DMatrix::<T>::zeros(m, n);
        for c in 0..n {
            let h = conv::<T>(1e-7) * (T::one() + theta[c].abs());
            let mut tp = theta.clone();
            tp[c] += h;
            let rp = match f(&tp) {
                Ok(v) => v,
                Err(_) => {
                    tp[c] = theta[c] - h;
                    let rm = f(&tp)?;
                    for row in 0..m {
                        jac[(row, c)] = (r[row] - rm[row]) / h;
                    }
                    continue;
                }
            };
            for row in 0..m {
                jac[(row, c)] = (rp[row] - r[row]) / h;
            }
        }
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &r;
        let mut accepted = false;
        for _ in 0..16 {
            let mut lhs = jtj.clone();
            for i in 0..n {
                lhs[(i, i)] += lambda * (jtj[(i, i)].abs() + conv(1e-12));
            }
            let Some(step) = lhs.lu().solve(&(-&jtr)) else {
                lambda *= conv(10.0);
                continue;
            };
            let trial = &theta + &step;
            match f(&trial) {
                Ok(rt) if rt.norm() < r.norm() => {
                    theta = trial;
                    r = rt;
                    lambda = (lambda * conv(0.3)).max(conv(1e-14));
                    accepted = true;
                    break;
                }
                _ => lambda *= conv(10.0),
            }
        }
        if !accepted {
            break;
        }
    }
    if r.amax() < tol {
        Ok((theta, r.amax(), iterations))
    } else {
        Err(SolverError::ParameterProblem {
            residual: as_f64(r.amax()),
            iterations,
            tolerance: as_f64(tol),
        })
    }
}

/// A solved conformal map from the strip 0 < Im w < width_a onto the
/// physical channel. `scale` normalizes the left derivative limit to 1,
/// so the strip index field satisfies mu -> 1 on the left and
/// mu -> mu_plus = (width_right / width_a)^2 on the right.
#[derive(Debug, Clone)]
pub struct StripMap<T: Real> {
    pub width_a: T,
    pub factors: Vec<MapFactor<T>>,
    pub scale: T,
    pub mu_minus: T,
    pub mu_plus: T,
    /// Final parameter-problem residual (max norm).
    pub residual: f64,
    /// Estimated exponential decay rate of |mu - mu_(+-)| along u.
    pub decay_rate: T,
    /// zeta(w) ~ slope * w + offset as Re w -> -inf: (slope, offset).
    pub calib_left: (C<T>, C<T>),
    /// Same at Re w -> +inf.
    pub calib_right: (C<T>, C<T>),
    anchor_w: C<T>,
    anchor_zeta: C<T>,
    gl: GlRules<T>,
}

impl<T: Real> StripMap<T> {
    fn eval(&self) -> MapEval<'_, T> {
        MapEval {
            factors: &self.factors,
            scale: self.scale,
            a: self.width_a,
            gl: &self.gl,
        }
    }

    /// d zeta / d w at a point of the closed strip.
    pub fn map_derivative(&self, w: C<T>) -> Result<C<T>> {
        let z = self.eval().deriv(w);
        if !as_f64(z.re).is_finite() || !as_f64(z.im).is_finite() {
            return Err(SolverError::SingularPoint { u: as_f64(w.re) });
        }
        Ok(z)
    }

    /// Induced index field mu(u, v) = |d zeta / d w|^2.
    pub fn mu(&self, u: T, v: T) -> Result<T> {
        Ok(self.map_derivative(Complex::new(u, v))?.norm_sqr())
    }

    /// Physical image of a strip point, by path integration from a
    /// calibrated anchor through the mid-strip line.
    pub fn map_point(&self, w: C<T>) -> Result<C<T>> {
        let ev = self.eval();
        let half = self.width_a * conv(0.5);
        let m1 = Complex::new(self.anchor_w.re, half);
        let m2 = Complex::new(w.re, half);
        let z = self.anchor_zeta
            + ev.line_integral(self.anchor_w, m1)
            + ev.line_integral(m1, m2)
            + ev.line_integral(m2, w);
        if !as_f64(z.re).is_finite() || !as_f64(z.im).is_finite() {
            return Err(SolverError::SingularPoint { u: as_f64(w.re) });
        }
        Ok(z)
    }

    /// Prevertex range along the strip (min, max); (0, 0) for a trivial map.
    pub fn prevertex_range(&self) -> (T, T) {
        let mut lo = T::zero();
        let mut hi = T::zero();
        for (i, f) in self.factors.iter().enumerate() {
            if i == 0 {
                lo = f.prevertex;
                hi = f.prevertex;
            } else {
                lo = lo.min(f.prevertex);
                hi = hi.max(f.prevertex);
            }
        }
        (lo, hi)
    }
}

/// Solve the mapping parameter problem with default controls.
pub fn solve_strip_map<T: Real>(geom: &DuctGeometry<T>) -> Result<StripMap<T>> {
    solve_strip_map_with(geom, conv(1e-10), 80)
}

/// Solve the mapping parameter problem to the requested max-norm
/// residual. Rounded corners are calibrated against a sharp pre-solve:
/// the smoothing half-width is chosen so the boundary leaves the polygon
/// by approximately the requested physical radius.
pub fn solve_strip_map_with<T: Real>(
    geom: &DuctGeometry<T>,
    tol: T,
    max_iter: usize,
) -> Result<StripMap<T>> {
    let a = geom.width_left;
    let corners = geom.corners();
    let gl = GlRules::new();
    if corners.is_empty() {
        let anchor_w = Complex::new(geom.lower[0].re, T::zero());
        let anchor_zeta = geom.lower[0];
        let off = anchor_zeta - anchor_w;
        return Ok(StripMap {
            width_a: a,
            factors: Vec::new(),
            scale: T::one(),
            mu_minus: T::one(),
            mu_plus: T::one(),
            residual: 0.0,
            decay_rate: T::pi() / a,
            calib_left: (cre(T::one()), off),
            calib_right: (cre(T::one()), off),
            anchor_w,
            anchor_zeta,
            gl,
        });
    }

    let template: Vec<MapFactor<T>> = corners
        .iter()
        .map(|c| MapFactor {
            edge: c.edge,
            prevertex: c.position.re,
            beta: c.beta,
            delta: T::zero(),
        })
        .collect();
    let side_of = |edge: Edge| -> EdgeSide<T> {
        let idx: Vec<usize> = corners
            .iter()
            .enumerate()
            .filter(|(_, c)| c.edge == edge)
            .map(|(i, _)| i)
            .collect();
        let positions: Vec<C<T>> = idx.iter().map(|&i| corners[i].position).collect();
        let mut dirs = vec![cre(T::one())];
        for w in positions.windows(2) {
            let d = w[1] - w[0];
            dirs.push(d / cre(d.modulus()));
        }
        dirs.push(cre(T::one()));
        EdgeSide {
            idx,
            positions,
            dirs,
        }
    };
    let mut problem = ParamProblem {
        a,
        template,
        lower: side_of(Edge::Lower),
        upper: side_of(Edge::Upper),
        width_ratio: geom.width_right / a,
        gl,
    };

    // initial guess: gaps from the physical side lengths
    let mut p0 = vec![T::zero(); problem.template.len()];
    for side in [&problem.lower, &problem.upper] {
        if side.idx.is_empty() {
            continue;
        }
        let mut u = side.positions[0].re;
        p0[side.idx[0]] = u;
        for i in 1..side.idx.len() {
            u += (side.positions[i] - side.positions[i - 1])
                .modulus()
                .max(a * conv(0.3));
            p0[side.idx[i]] = u;
        }
    }
    let theta0 = problem.theta_from_prevertices(&p0);

    // stage 1: sharp corners
    let (mut theta, mut resid, _) = least_squares(|t| problem.residuals(t), theta0, tol, max_iter)?;

    // stage 2: corner smoothing calibrated on the sharp solution
    if corners.iter().any(|c| c.rounding > T::zero()) {
        let p = problem.assign(&theta);
        let mut sharp = problem.template.clone();
        for (f, &pi) in sharp.iter_mut().zip(&p) {
            f.prevertex = pi;
        }
        let probe = MapEval {
            factors: &sharp,
            scale: T::one(),
            a,
            gl: &problem.gl,
        };
        let (lr_m, _) = probe.log_deriv_asym(false);
        let eval = MapEval {
            factors: &sharp,
            scale: (-lr_m).exp(),
            a,
            gl: &problem.gl,
        };
        let deltas = smoothing_widths(&eval, &corners, &p, a)?;
        for (f, d) in problem.template.iter_mut().zip(&deltas) {
            f.delta = *d;
        }
        let (t2, r2, _) = least_squares(|t| problem.residuals(t), theta, tol, max_iter)?;
        theta = t2;
        resid = r2;
    }

    finalize(problem, theta, resid, geom)
}

/// Strip-side smoothing half-widths reproducing the requested physical
/// rounding radii: near a sharp corner |zeta(p + s) - corner| grows like
/// |G| (pi/2a)^beta s^(1+beta) / (1+beta) with G the product of the
/// remaining factors.
fn smoothing_widths<T: Real>(
    eval: &MapEval<T>,
    corners: &[Corner<T>],
    p: &[T],
    a: T,
) -> Result<Vec<T>> {
    let mut out = Vec::with_capacity(corners.len());
    for (k, c) in corners.iter().enumerate() {
        if c.rounding <= T::zero() {
            out.push(T::zero());
            continue;
        }
        let v = match c.edge {
            Edge::Upper => a,
            Edge::Lower => T::zero(),
        };
        let mut g = eval.scale;
        for (j, f) in eval.factors.iter().enumerate() {
            if j == k {
                continue;
            }
            g *= f
                .value(Complex::new(p[k] - f.prevertex, v), a, eval.gl)
                .modulus();
        }
        let beta = c.beta;
        let stretch = (T::pi() / (a + a)).powf(beta) / (T::one() + beta);
        let delta = (c.rounding / (g * stretch)).powf(T::one() / (T::one() + beta));
        if delta > a {
            return Err(SolverError::RoundingTooLarge {
                corner: k,
                radius: as_f64(c.rounding),
                limit: as_f64(c.rounding * a / delta),
            });
        }
        out.push(delta);
    }
    // adjacent smoothing zones on the same edge must not overlap
    for (k, c) in corners.iter().enumerate() {
        for (j, d) in corners.iter().enumerate().skip(k + 1) {
            if d.edge != c.edge {
                continue;
            }
            let gap = (p[j] - p[k]).abs();
            if out[k] + out[j] > gap * conv(0.85) {
                let shrink = gap * conv(0.85) / (out[k] + out[j]);
                return Err(SolverError::RoundingTooLarge {
                    corner: j,
                    radius: as_f64(d.rounding),
                    limit: as_f64(d.rounding * shrink),
                });
            }
        }
    }
    Ok(out)
}

fn finalize<T: Real>(
    problem: ParamProblem<T>,
    theta: DVector<T>,
    resid: T,
    geom: &DuctGeometry<T>,
) -> Result<StripMap<T>> {
    let a = problem.a;
    let p = problem.assign(&theta);
    let mut factors = problem.template.clone();
    for (f, &pi) in factors.iter_mut().zip(&p) {
        f.prevertex = pi;
    }
    let probe = MapEval {
        factors: &factors,
        scale: T::one(),
        a,
        gl: &problem.gl,
    };
    let (lr_m, _) = probe.log_deriv_asym(false);
    let scale = (-lr_m).exp();
    let eval = MapEval {
        factors: &factors,
        scale,
        a,
        gl: &problem.gl,
    };
    let (lr_p, _) = eval.log_deriv_asym(true);
    let mu_plus = (lr_p + lr_p).exp();

    // anchor the physical position on a boundary with corners
    let (side, edge) = if problem.lower.idx.is_empty() {
        (&problem.upper, Edge::Upper)
    } else {
        (&problem.lower, Edge::Lower)
    };
    let obs = problem.edge_observe(&eval, side, edge)?;
    let v_edge = match edge {
        Edge::Upper => a,
        Edge::Lower => T::zero(),
    };
    let anchor_w = Complex::new(obs.u0, v_edge);
    let anchor_zeta = side.positions[0] - obs.virtual_corners[0];

    let mut sm = StripMap {
        width_a: a,
        factors,
        scale,
        mu_minus: T::one(),
        mu_plus,
        residual: as_f64(resid),
        decay_rate: T::pi() / a,
        calib_left: (cre(T::one()), czero()),
        calib_right: (cre(mu_plus.sqrt()), czero()),
        anchor_w,
        anchor_zeta,
        gl: problem.gl,
    };

    // axial calibration: zeta(w) - slope * w settles exponentially
    let (p_min, p_max) = sm.prevertex_range();
    let half = a * conv(0.5);
    let w_left = Complex::new(p_min - conv::<T>(12.0) * a, half);
    let w_right = Complex::new(p_max + conv::<T>(12.0) * a, half);
    let z_left = sm.map_point(w_left)?;
    let z_right = sm.map_point(w_right)?;
    sm.calib_left = (cre(T::one()), z_left - w_left);
    sm.calib_right = (cre(mu_plus.sqrt()), z_right - w_right * cre(mu_plus.sqrt()));

    // measured decay rate of the index-field deviation
    let stations = |u: T, asym: T| -> T {
        let mut worst = T::zero();
        for i in 1..6 {
            let v = a * conv(i as f64 / 6.0);
            let d = (sm.eval().deriv(Complex::new(u, v)).norm_sqr() - asym).abs();
            worst = worst.max(d);
        }
        worst
    };
    let mut rate = T::pi() / a;
    let spacing = a;
    let r1 = stations(p_max + a + a, mu_plus).max(stations(p_min - a - a, T::one()));
    let r2 = stations(p_max + a + a + spacing, mu_plus).max(stations(p_min - a - a - spacing, T::one()));
    if r2 > conv(1e-13) && r1 > r2 {
        rate = (r1 / r2).ln() / spacing;
    }
    sm.decay_rate = rate.max(conv::<T>(0.2) * T::pi() / a).min(conv::<T>(2.0) * T::pi() / a);

    // consistency with the declared geometry
    let wr = geom.width_right / a;
    if (mu_plus.sqrt() - wr).abs() > conv::<T>(1e-7) * (T::one() + wr) {
        return Err(SolverError::ParameterProblem {
            residual: as_f64((mu_plus.sqrt() - wr).abs()),
            iterations: 0,
            tolerance: 1e-7,
        });
    }
    Ok(sm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::DuctGeometry;
    use approx::assert_relative_eq;

    #[test]
    fn uniform_duct_gives_identity_map() {
        let g = DuctGeometry::<f64>::uniform(1.0);
        let m = solve_strip_map(&g).unwrap();
        assert_eq!(m.mu(0.3, 0.7).unwrap(), 1.0);
        assert_eq!(m.mu_plus, 1.0);
        let w = Complex::new(0.4, 0.25);
        let z = m.map_point(w).unwrap();
        assert!((z - w).norm() < 1e-12);
    }

    #[test]
    fn sharp_step_matches_analytic_prevertex_gap() {
        // for the abrupt width step the prevertex gap is fixed by the
        // width ratio alone: gap = (2 a / pi) ln(a / b)
        let g = DuctGeometry::<f64>::step(1.0, 0.6).unwrap();
        let m = solve_strip_map(&g).unwrap();
        assert!(m.residual < 1e-10, "residual {}", m.residual);
        let gap = (m.factors[1].prevertex - m.factors[0].prevertex).abs();
        let exact = (2.0 / std::f64::consts::PI) * (1.0f64 / 0.6).ln();
        assert_relative_eq!(gap, exact, epsilon = 1e-8);
        assert_relative_eq!(m.mu_plus, 0.36, epsilon = 1e-10);
        assert_relative_eq!(m.mu(-8.0, 0.5).unwrap(), 1.0, epsilon = 1e-9);
        assert_relative_eq!(m.mu(8.0, 0.5).unwrap(), 0.36, epsilon = 1e-9);
    }

    #[test]
    fn step_boundary_images_lie_on_the_polygon() {
        let g = DuctGeometry::<f64>::step(1.0, 0.6).unwrap();
        let m = solve_strip_map(&g).unwrap();
        // lower boundary is the line y = 0
        for u in [-2.0, 0.1, 3.0] {
            let z = m.map_point(Complex::new(u, 0.0)).unwrap();
            assert!(z.im.abs() < 1e-9, "lower image {z}");
        }
        // far side of the upper boundary approaches y = 0.6
        let (_, p_max) = m.prevertex_range();
        let z = m.map_point(Complex::new(p_max + 4.0, 1.0)).unwrap();
        assert!((z.im - 0.6).abs() < 1e-6, "upper image {z}");
        // left side of the upper boundary sits at y = 1
        let (p_min, _) = m.prevertex_range();
        let z = m.map_point(Complex::new(p_min - 4.0, 1.0)).unwrap();
        assert!((z.im - 1.0).abs() < 1e-6, "upper-left image {z}");
    }

    #[test]
    fn map_point_derivative_consistency() {
        // finite differences of the integrated map against the factor
        // product (Cauchy-Riemann consistency of the implementation)
        let g = DuctGeometry::<f64>::step(1.0, 0.6).unwrap();
        let m = solve_strip_map(&g).unwrap();
        let h = 1e-4;
        for w in [Complex::new(0.1, 0.4), Complex::new(-0.7, 0.8)] {
            let fd_u = (m.map_point(w + Complex::new(h, 0.0)).unwrap()
                - m.map_point(w - Complex::new(h, 0.0)).unwrap())
                / (2.0 * h);
            let fd_v = (m.map_point(w + Complex::new(0.0, h)).unwrap()
                - m.map_point(w - Complex::new(0.0, h)).unwrap())
                / Complex::new(0.0, 2.0 * h);
            let d = m.map_derivative(w).unwrap();
            assert!((fd_u - d).norm() < 1e-7, "du {} vs {}", fd_u, d);
            assert!((fd_v - d).norm() < 1e-7, "dv {} vs {}", fd_v, d);
        }
    }

    #[test]
    fn rounded_step_has_bounded_derivative() {
        let g = DuctGeometry::<f64>::step(1.0, 0.6)
            .unwrap()
            .round_corners(0.02)
            .unwrap();
        let m = solve_strip_map(&g).unwrap();
        assert!(m.residual < 1e-10);
        assert_relative_eq!(m.mu_plus, 0.36, epsilon = 1e-8);
        // the sharp map is singular at the outward corner prevertex;
        // the smoothed one stays finite and positive along the boundary
        let p0 = m.factors[0].prevertex;
        let mut max_mu: f64 = 0.0;
        let mut min_mu = f64::INFINITY;
        for i in -40..=40 {
            let u = p0 + 0.005 * f64::from(i);
            let mu = m.mu(u, 1.0).unwrap();
            max_mu = max_mu.max(mu);
            min_mu = min_mu.min(mu);
        }
        assert!(max_mu.is_finite() && max_mu < 1e3, "max {max_mu}");
        assert!(min_mu > 0.0, "min {min_mu}");
        // boundary stays near the corner at the requested scale
        let corner = Complex::new(0.0, 1.0);
        let z = m.map_point(Complex::new(p0, 1.0)).unwrap();
        let d = (z - corner).norm();
        assert!(d > 0.002 && d < 0.06, "corner standoff {d}");
    }

    #[test]
    fn smaller_rounding_tracks_the_corner_closer() {
        let dist = |eps: f64| {
            let g = DuctGeometry::<f64>::step(1.0, 0.6)
                .unwrap()
                .round_corners(eps)
                .unwrap();
            let m = solve_strip_map(&g).unwrap();
            let p0 = m.factors[0].prevertex;
            (m.map_point(Complex::new(p0, 1.0)).unwrap() - Complex::new(0.0, 1.0)).norm()
        };
        let d1 = dist(0.04);
        let d2 = dist(0.01);
        assert!(d2 < d1, "{d2} !< {d1}");
    }

    #[test]
    fn s_bend_map_solves_and_preserves_width() {
        let g = DuctGeometry::<f64>::s_bend(1.0, 0.5, 1.0, 2.0).unwrap();
        let m = solve_strip_map(&g).unwrap();
        assert!(m.residual < 1e-10, "residual {}", m.residual);
        assert_relative_eq!(m.mu_plus, 1.0, epsilon = 1e-9);
        // image of the far-right lower boundary returns to y = 0
        let (_, p_max) = m.prevertex_range();
        let z = m.map_point(Complex::new(p_max + 5.0, 0.0)).unwrap();
        assert!(z.im.abs() < 1e-6, "{z}");
        // image of the mid-plateau region sits at the offset height
        let mid = m
            .map_point(Complex::new(
                0.5 * (m.factors.iter().map(|f| f.prevertex).sum::<f64>() / 8.0) * 2.0,
                0.0,
            ))
            .unwrap();
        assert!((mid.im - 0.5).abs() < 0.2, "plateau image {mid}");
    }

    #[test]
    fn taper_map_matches_width_ratio() {
        let g = DuctGeometry::<f64>::new(
            vec![Complex::new(0.0, 1.0), Complex::new(1.0, 2.0)],
            vec![Complex::new(0.0, 0.0)],
        )
        .unwrap();
        let m = solve_strip_map(&g).unwrap();
        assert!(m.residual < 1e-10);
        assert_relative_eq!(m.mu_plus, 4.0, epsilon = 1e-8);
    }

    #[test]
    fn axial_calibration_tracks_the_map() {
        let g = DuctGeometry::<f64>::step(1.0, 0.6).unwrap();
        let m = solve_strip_map(&g).unwrap();
        let (p_min, p_max) = m.prevertex_range();
        let w = Complex::new(p_min - 9.0, 0.5);
        let z = m.map_point(w).unwrap();
        let pred = m.calib_left.0 * w + m.calib_left.1;
        assert!((z - pred).norm() < 1e-8, "left {} vs {}", z, pred);
        let w = Complex::new(p_max + 9.0, 0.5);
        let z = m.map_point(w).unwrap();
        let pred = m.calib_right.0 * w + m.calib_right.1;
        assert!((z - pred).norm() < 1e-8, "right {} vs {}", z, pred);
    }
}
