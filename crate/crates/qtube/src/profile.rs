//! Tabulated index field of a flattened channel: cosine coefficients
//! mu_l(u) of mu(u, v) on the strip cross-section, sampled on an axial
//! grid and interpolated with natural cubic splines. Outside the grid
//! the field is flat to within the build threshold.

use num_complex::Complex;

use crate::conformal::StripMap;
use crate::error::{Result, SolverError};
use crate::quad::{gauss_legendre, tanh_sinh_rule};
use crate::scalar::{as_f64, conv, Real};

/// Controls for [`build_profile`] and [`auto_grid`].
#[derive(Debug, Clone, Copy)]
pub struct ProfileOptions<T: Real> {
    /// Core axial spacing as a fraction of the strip width.
    pub core_step: T,
    /// Deviation from the asymptotic plateaus below which the field is
    /// treated as flat and the grid is terminated.
    pub flat_threshold: T,
    /// Growth factor of the axial spacing in the flat tails.
    pub tail_growth: T,
}

impl<T: Real> Default for ProfileOptions<T> {
    fn default() -> Self {
        Self {
            core_step: conv(1.0 / 128.0),
            flat_threshold: conv(1e-10),
            tail_growth: conv(1.25),
        }
    }
}

/// Cross-section cosine expansion of the index field,
/// mu(u, v) = sum_l mu_l(u) cos(l pi v / a).
#[derive(Debug, Clone)]
pub struct RefractiveProfile<T: Real> {
    pub width_a: T,
    pub u_grid: Vec<T>,
    /// rows[i][l] = mu_l at u_grid[i].
    pub rows: Vec<Vec<T>>,
    pub mu_minus: T,
    pub mu_plus: T,
    /// Spline second derivatives, same shape as `rows`.
    moments: Vec<Vec<T>>,
}

impl<T: Real> RefractiveProfile<T> {
    /// Assemble a profile from precomputed coefficient rows.
    pub fn new(
        width_a: T,
        u_grid: Vec<T>,
        rows: Vec<Vec<T>>,
        mu_minus: T,
        mu_plus: T,
    ) -> Result<Self> {
        if u_grid.len() < 2 || u_grid.len() != rows.len() {
            return Err(SolverError::InsufficientCoefficients {
                requested: u_grid.len(),
                available: rows.len(),
            });
        }
        let l_len = rows[0].len();
        if l_len == 0 || rows.iter().any(|r| r.len() != l_len) {
            return Err(SolverError::InsufficientCoefficients {
                requested: l_len,
                available: rows.iter().map(|r| r.len()).min().unwrap_or(0),
            });
        }
        for w in u_grid.windows(2) {
            if w[1] <= w[0] {
                return Err(SolverError::Config("profile grid must be increasing".into()));
            }
        }
        let moments = spline_moments(&u_grid, &rows);
        let p = Self {
            width_a,
            u_grid,
            rows,
            mu_minus,
            mu_plus,
            moments,
        };
        // only the mean coefficient is checked for sign: the Galerkin
        // matrices consume the coefficient rows, not pointwise values,
        // and near rounded corners the metric spikes at the wall so the
        // truncated cosine reconstruction legitimately undershoots zero
        // even when the underlying field is positive
        for (i, &u) in p.u_grid.iter().enumerate() {
            if p.rows[i][0] <= T::zero() {
                return Err(SolverError::Config(format!(
                    "index field not positive at u = {}",
                    as_f64(u)
                )));
            }
        }
        Ok(p)
    }

    /// Synthetic profile from a coefficient-row function (test helper
    /// and manufactured-solution input).
    pub fn from_coefficients(
        width_a: T,
        u_grid: Vec<T>,
        f: impl Fn(T) -> Vec<T>,
        mu_minus: T,
        mu_plus: T,
    ) -> Result<Self> {
        let rows = u_grid.iter().map(|&u| f(u)).collect();
        Self::new(width_a, u_grid, rows, mu_minus, mu_plus)
    }

    pub fn l_max(&self) -> usize {
        self.rows[0].len() - 1
    }

    /// Axial extent of the tabulated region.
    pub fn interval(&self) -> (T, T) {
        (self.u_grid[0], *self.u_grid.last().unwrap())
    }

    fn asymptotic_row(&self, right: bool, out: &mut [T]) {
        out[0] = if right { self.mu_plus } else { self.mu_minus };
        for x in &mut out[1..] {
            *x = T::zero();
        }
    }

    /// Cosine coefficients at axial position u (spline interpolation,
    /// asymptotic rows outside the grid).
    pub fn coeffs_at(&self, u: T, out: &mut [T]) {
        let n = self.rows[0].len();
        assert!(out.len() >= n, "coefficient buffer too short");
        if u <= self.u_grid[0] {
            self.asymptotic_row(false, &mut out[..n]);
            return;
        }
        if u >= *self.u_grid.last().unwrap() {
            self.asymptotic_row(true, &mut out[..n]);
            return;
        }
        let i = match self
            .u_grid
            .binary_search_by(|x| x.partial_cmp(&u).unwrap())
        {
            Ok(j) => {
                out[..n].copy_from_slice(&self.rows[j]);
                return;
            }
            Err(j) => j - 1,
        };
        let h = self.u_grid[i + 1] - self.u_grid[i];
        let x1 = (self.u_grid[i + 1] - u) / h;
        let x2 = (u - self.u_grid[i]) / h;
        let six = conv::<T>(6.0);
        let c1 = (x1 * x1 * x1 - x1) * h * h / six;
        let c2 = (x2 * x2 * x2 - x2) * h * h / six;
        for l in 0..n {
            out[l] = x1 * self.rows[i][l]
                + x2 * self.rows[i + 1][l]
                + c1 * self.moments[i][l]
                + c2 * self.moments[i + 1][l];
        }
    }

    /// The axially mirrored profile mu(-u, v). Solving the mirrored
    /// channel for right-moving waves yields the left-moving operators
    /// of the original one.
    pub fn reflected(&self) -> Self {
        let u_grid: Vec<T> = self.u_grid.iter().rev().map(|&u| -u).collect();
        let rows: Vec<Vec<T>> = self.rows.iter().rev().cloned().collect();
        let moments: Vec<Vec<T>> = self.moments.iter().rev().cloned().collect();
        Self {
            width_a: self.width_a,
            u_grid,
            rows,
            mu_minus: self.mu_plus,
            mu_plus: self.mu_minus,
            moments,
        }
    }

    /// Pointwise field value mu(u, v).
    pub fn value(&self, u: T, v: T) -> T {
        let n = self.rows[0].len();
        let mut row = vec![T::zero(); n];
        self.coeffs_at(u, &mut row);
        let mut acc = row[0];
        let base = T::pi() * v / self.width_a;
        for (l, &c) in row.iter().enumerate().skip(1) {
            acc += c * (base * conv(l as f64)).cos();
        }
        acc
    }
}

/// Natural cubic spline second derivatives for every coefficient column.
fn spline_moments<T: Real>(x: &[T], rows: &[Vec<T>]) -> Vec<Vec<T>> {
    let n = x.len();
    let cols = rows[0].len();
    let mut moments = vec![vec![T::zero(); cols]; n];
    if n < 3 {
        return moments;
    }
    // Thomas solve of the tridiagonal moment system, shared sweep
    // coefficients across columns
    let mut diag = vec![T::zero(); n];
    let mut sub = vec![T::zero(); n];
    let mut sup = vec![T::zero(); n];
    for i in 1..n - 1 {
        let h0 = x[i] - x[i - 1];
        let h1 = x[i + 1] - x[i];
        sub[i] = h0 / conv(6.0);
        diag[i] = (h0 + h1) / conv(3.0);
        sup[i] = h1 / conv(6.0);
    }
    for l in 0..cols {
        let mut c = vec![T::zero(); n];
        let mut d = vec![T::zero(); n];
        let mut beta = diag[1];
        d[1] = rhs(x, rows, 1, l) / beta;
        for i in 2..n - 1 {
            c[i] = sup[i - 1] / beta;
            beta = diag[i] - sub[i] * c[i];
            d[i] = (rhs(x, rows, i, l) - sub[i] * d[i - 1]) / beta;
        }
        let mut prev = T::zero();
        for i in (1..n - 1).rev() {
            let m = d[i] - c[i + 1] * prev;
            moments[i][l] = m;
            prev = m;
        }
    }
    moments
}

fn rhs<T: Real>(x: &[T], rows: &[Vec<T>], i: usize, l: usize) -> T {
    let h0 = x[i] - x[i - 1];
    let h1 = x[i + 1] - x[i];
    (rows[i + 1][l] - rows[i][l]) / h1 - (rows[i][l] - rows[i - 1][l]) / h0
}

/// Cross-section quadrature: graded panels toward both walls so corner
/// features are resolved, with fixed double-exponential rules on the two
/// wall panels (the field can have an integrable wall singularity at a
/// sharp corner station).
struct CrossRule<T: Real> {
    nodes: Vec<T>,
    weights: Vec<T>,
}

impl<T: Real> CrossRule<T> {
    fn build(a: T, finest: T, gl_n: usize, de_level: u32) -> Self {
        let (gx, gw) = gauss_legendre::<T>(gl_n);
        let de = tanh_sinh_rule::<T>(de_level);
        let half = a * conv(0.5);
        let mut cuts = vec![T::zero()];
        let mut g = finest.min(half * conv(0.5));
        while g < half {
            cuts.push(g);
            g += g;
        }
        cuts.push(half);
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        let mut add_panel = |lo: T, hi: T, wall: Option<bool>| {
            let len = hi - lo;
            match wall {
                // wall panels: DE rule with the singular end at the wall
                Some(lower_wall) => {
                    for &(da, db, w) in &de {
                        let v = if lower_wall { lo + len * da } else { hi - len * da };
                        let _ = db;
                        nodes.push(v);
                        weights.push(w * len);
                    }
                }
                None => {
                    for (&x, &w) in gx.iter().zip(&gw) {
                        nodes.push(lo + len * (x + T::one()) * conv(0.5));
                        weights.push(w * len * conv(0.5));
                    }
                }
            }
        };
        for (k, w) in cuts.windows(2).enumerate() {
            add_panel(w[0], w[1], if k == 0 { Some(true) } else { None });
        }
        for (k, w) in cuts.windows(2).enumerate() {
            let (lo, hi) = (a - w[1], a - w[0]);
            add_panel(lo, hi, if k == 0 { Some(false) } else { None });
        }
        Self { nodes, weights }
    }
}

/// Cosine coefficient rows of mu = |map derivative|^2 on the given grid.
pub fn build_profile<T: Real>(
    map: &StripMap<T>,
    u_grid: &[T],
    l_max: usize,
) -> Result<RefractiveProfile<T>> {
    let a = map.width_a;
    let finest = finest_wall_scale(map);
    let rule = CrossRule::build(a, finest, 16, 4);
    let fine_rule = CrossRule::build(a, finest * conv(0.5), 24, 5);
    let (p_min, p_max) = map.prevertex_range();

    let mut rows = Vec::with_capacity(u_grid.len());
    for &u in u_grid {
        let row = coefficient_row(map, u, l_max, &rule)?;
        // convergence guard near the corner prevertices
        if !map.factors.is_empty() && u >= p_min - a * conv(0.1) && u <= p_max + a * conv(0.1) {
            let near = map
                .factors
                .iter()
                .any(|f| (u - f.prevertex).abs() < a * conv(0.05));
            if near {
                let refined = coefficient_row(map, u, l_max, &fine_rule)?;
                let mut worst = T::zero();
                for (x, y) in row.iter().zip(&refined) {
                    worst = worst.max((*x - *y).abs());
                }
                if worst > conv(1e-7) {
                    return Err(SolverError::InsufficientResolution {
                        got: l_max,
                        needed: l_max + 1,
                    });
                }
            }
        }
        rows.push(row);
    }
    RefractiveProfile::new(a, u_grid.to_vec(), rows, map.mu_minus, map.mu_plus)
}

/// Smallest cross-section feature scale near a wall: the smoothing
/// half-widths of the rounded corners, or a fixed fraction of the width.
fn finest_wall_scale<T: Real>(map: &StripMap<T>) -> T {
    let mut s = map.width_a * conv(1.0 / 256.0);
    for f in &map.factors {
        if f.delta > T::zero() {
            s = s.min(f.delta * conv(0.5));
        }
    }
    s
}

fn coefficient_row<T: Real>(
    map: &StripMap<T>,
    u: T,
    l_max: usize,
    rule: &CrossRule<T>,
) -> Result<Vec<T>> {
    let a = map.width_a;
    let mut row = vec![T::zero(); l_max + 1];
    for (&v, &w) in rule.nodes.iter().zip(&rule.weights) {
        let mu = map.map_derivative(Complex::new(u, v))?.norm_sqr();
        if !as_f64(mu).is_finite() {
            return Err(SolverError::SingularPoint { u: as_f64(u) });
        }
        let base = T::pi() * v / a;
        row[0] += w * mu;
        for (l, slot) in row.iter_mut().enumerate().skip(1) {
            *slot += w * mu * (base * conv(l as f64)).cos();
        }
    }
    let inv_a = T::one() / a;
    row[0] *= inv_a;
    for slot in &mut row[1..] {
        *slot *= inv_a + inv_a;
    }
    Ok(row)
}

/// Automatic axial grid: uniform core spacing across the corner span,
/// extra refinement inside the smoothing zones, geometric coarsening in
/// the tails until the field is flat to the threshold.
pub fn auto_grid<T: Real>(map: &StripMap<T>, opts: &ProfileOptions<T>) -> Vec<T> {
    let a = map.width_a;
    let h = a * opts.core_step;
    let (p_min, p_max) = map.prevertex_range();
    let lo = p_min - a - a;
    let hi = p_max + a + a;

    // refinement targets around each prevertex
    let local_step = |u: T| -> T {
        let mut s = h;
        for f in &map.factors {
            let d = (u - f.prevertex).abs();
            let feature = if f.delta > T::zero() {
                f.delta
            } else {
                a * conv(1.0 / 64.0)
            };
            if d < conv::<T>(8.0) * feature {
                s = s.min((feature * conv(0.25)).max(a * conv(1e-4)));
            }
        }
        s
    };

    let mut grid = vec![lo];
    let mut u = lo;
    while u < hi {
        u += local_step(u);
        grid.push(u);
    }

    // deviation probe at a few heights
    let dev = |u: T, asym: T| -> T {
        let mut worst = T::zero();
        for j in 1..6 {
            let v = a * conv(j as f64 / 6.0);
            if let Ok(mu) = map.mu(u, v) {
                worst = worst.max((mu - asym).abs());
            }
        }
        worst
    };

    // grow tails geometrically until flat
    let mut step = h;
    let mut u = hi;
    let max_span = conv::<T>(40.0) * a;
    while dev(u, map.mu_plus) > opts.flat_threshold && u - hi < max_span {
        step *= opts.tail_growth;
        u += step.min(a);
        grid.push(u);
    }
    let mut step = h;
    let mut u = lo;
    let mut head = Vec::new();
    while dev(u, map.mu_minus) > opts.flat_threshold && lo - u < max_span {
        step *= opts.tail_growth;
        u -= step.min(a);
        head.push(u);
    }
    head.reverse();
    head.extend(grid);
    head
}

/// Convenience pipeline: automatic grid plus coefficient assembly.
pub fn profile_for_map<T: Real>(
    map: &StripMap<T>,
    l_max: usize,
    opts: &ProfileOptions<T>,
) -> Result<RefractiveProfile<T>> {
    let grid = auto_grid(map, opts);
    build_profile(map, &grid, l_max)
}
