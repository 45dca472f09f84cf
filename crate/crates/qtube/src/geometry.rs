//! Polygonal strip-like channel description: two piecewise-linear
//! boundaries that are straight and horizontal outside a bounded region,
//! with optional corner rounding.

use nalgebra::ComplexField;
use num_complex::Complex;
use serde::Deserialize;

use crate::error::{Result, SolverError};
use crate::scalar::{as_f64, conv, Real, C};

/// Which boundary a corner belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Edge {
    Lower,
    Upper,
}

/// A corner of the channel boundary.
#[derive(Debug, Clone, Copy)]
pub struct Corner<T: Real> {
    pub edge: Edge,
    pub position: C<T>,
    /// Exponent of the mapping factor: interior angle = pi (1 + beta),
    /// beta in (-1, 1), negative at outward corners.
    pub beta: T,
    /// Rounding radius (0 = sharp).
    pub rounding: T,
}

/// Channel geometry: vertex lists of the upper and lower boundaries,
/// ordered left to right. Each boundary continues horizontally to
/// infinity before its first and after its last vertex. A single-vertex
/// list describes a straight horizontal boundary through that point.
#[derive(Debug, Clone)]
pub struct DuctGeometry<T: Real> {
    pub upper: Vec<C<T>>,
    pub lower: Vec<C<T>>,
    pub width_left: T,
    pub width_right: T,
    /// Per-vertex rounding radii, upper vertices first, then lower.
    pub rounding: Vec<T>,
}

impl<T: Real> DuctGeometry<T> {
    pub fn new(upper: Vec<C<T>>, lower: Vec<C<T>>) -> Result<Self> {
        if upper.is_empty() || lower.is_empty() {
            return Err(SolverError::InvalidGeometry(
                "each boundary needs at least one vertex".into(),
            ));
        }
        let width_left = upper.first().unwrap().im - lower.first().unwrap().im;
        let width_right = upper.last().unwrap().im - lower.last().unwrap().im;
        let n = upper.len() + lower.len();
        let g = Self {
            upper,
            lower,
            width_left,
            width_right,
            rounding: vec![T::zero(); n],
        };
        g.validate()?;
        Ok(g)
    }

    /// Uniform straight duct of width `a` (trivial geometry).
    pub fn uniform(a: T) -> Self {
        Self::new(
            vec![Complex::new(T::zero(), a)],
            vec![Complex::new(T::zero(), T::zero())],
        )
        .expect("uniform duct is valid")
    }

    /// Abrupt width step from `a` (left) down to `b` at x = 0; the lower
    /// boundary is the line y = 0.
    pub fn step(a: T, b: T) -> Result<Self> {
        Self::new(
            vec![Complex::new(T::zero(), a), Complex::new(T::zero(), b)],
            vec![Complex::new(T::zero(), T::zero())],
        )
    }

    /// S-shaped duct of constant vertical width `a`: the centerline runs
    /// horizontally, shifts up by `offset` over an axial run `run`, stays
    /// flat for `plateau`, and shifts back down.
    pub fn s_bend(a: T, offset: T, run: T, plateau: T) -> Result<Self> {
        let mk = |y0: T| {
            vec![
                Complex::new(T::zero(), y0),
                Complex::new(run, y0 + offset),
                Complex::new(run + plateau, y0 + offset),
                Complex::new(run + plateau + run, y0),
            ]
        };
        Self::new(mk(a), mk(T::zero()))
    }

    /// Single offset bend (up by `offset` over `run`), constant width `a`.
    pub fn offset_bend(a: T, offset: T, run: T) -> Result<Self> {
        let mk = |y0: T| {
            vec![
                Complex::new(T::zero(), y0),
                Complex::new(run, y0 + offset),
            ]
        };
        Self::new(mk(a), mk(T::zero()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.width_left <= T::zero() || self.width_right <= T::zero() {
            return Err(SolverError::InvalidGeometry(
                "terminal widths must be positive".into(),
            ));
        }
        let wl = self.upper.first().unwrap().im - self.lower.first().unwrap().im;
        let wr = self.upper.last().unwrap().im - self.lower.last().unwrap().im;
        if (wl - self.width_left).abs() > conv::<T>(1e-12) * self.width_left
            || (wr - self.width_right).abs() > conv::<T>(1e-12) * self.width_right
        {
            return Err(SolverError::InvalidGeometry(
                "terminal widths inconsistent with vertex heights".into(),
            ));
        }
        for edge in [Edge::Upper, Edge::Lower] {
            for &t in &self.turning_angles(edge) {
                if t.abs() >= T::pi() - conv(1e-9) {
                    return Err(SolverError::InvalidGeometry(
                        "degenerate corner: boundary reverses direction".into(),
                    ));
                }
            }
        }
        if self.rounding.len() != self.upper.len() + self.lower.len() {
            return Err(SolverError::InvalidGeometry(
                "rounding list length must match the vertex count".into(),
            ));
        }
        self.check_rounding()?;
        self.check_no_intersections()?;
        Ok(())
    }

    fn segments(&self, edge: Edge) -> Vec<(C<T>, C<T>)> {
        // finite segments plus long horizontal stubs standing in for the rays
        let v = match edge {
            Edge::Upper => &self.upper,
            Edge::Lower => &self.lower,
        };
        let span = self.extent() + self.width_left + self.width_right;
        let first = v.first().unwrap();
        let last = v.last().unwrap();
        let mut segs = vec![(Complex::new(first.re - span, first.im), *first)];
        for w in v.windows(2) {
            segs.push((w[0], w[1]));
        }
        segs.push((*last, Complex::new(last.re + span, last.im)));
        segs
    }

    /// Horizontal extent of the vertex set.
    pub fn extent(&self) -> T {
        let xs = self.upper.iter().chain(&self.lower).map(|p| p.re);
        let min = xs.clone().fold(T::max_value().unwrap(), |a, b| a.min(b));
        let max = xs.fold(T::min_value().unwrap(), |a, b| a.max(b));
        max - min
    }

    /// Leftmost and rightmost vertex x-coordinates.
    pub fn x_range(&self) -> (T, T) {
        let xs = self.upper.iter().chain(&self.lower).map(|p| p.re);
        let min = xs.clone().fold(T::max_value().unwrap(), |a, b| a.min(b));
        let max = xs.fold(T::min_value().unwrap(), |a, b| a.max(b));
        (min, max)
    }

    /// Signed turning angle at each vertex, traversing left to right.
    /// The implied direction before the first and after the last vertex
    /// is horizontal.
    fn turning_angles(&self, edge: Edge) -> Vec<T> {
        let v = match edge {
            Edge::Upper => &self.upper,
            Edge::Lower => &self.lower,
        };
        let mut dirs = vec![Complex::new(T::one(), T::zero())];
        for w in v.windows(2) {
            dirs.push(w[1] - w[0]);
        }
        dirs.push(Complex::new(T::one(), T::zero()));
        (0..v.len())
            .map(|i| {
                let din = dirs[i];
                let dout = dirs[i + 1];
                // angle of dout relative to din
                (dout * din.conj()).argument()
            })
            .collect()
    }

    /// The corners of the channel with their mapping exponents
    /// (vertices with zero turning are skipped). Upper corners first.
    pub fn corners(&self) -> Vec<Corner<T>> {
        let mut out = Vec::new();
        let tol = conv::<T>(1e-13);
        for (edge, verts, offset) in [
            (Edge::Upper, &self.upper, 0),
            (Edge::Lower, &self.lower, self.upper.len()),
        ] {
            let turns = self.turning_angles(edge);
            for (i, (&p, &tau)) in verts.iter().zip(&turns).enumerate() {
                if tau.abs() <= tol {
                    continue;
                }
                // interior lies above the lower boundary and below the upper
                let beta = match edge {
                    Edge::Lower => -tau / T::pi(),
                    Edge::Upper => tau / T::pi(),
                };
                out.push(Corner {
                    edge,
                    position: p,
                    beta,
                    rounding: self.rounding[offset + i],
                });
            }
        }
        out
    }

    fn check_rounding(&self) -> Result<()> {
        for (edge, verts, offset) in [
            (Edge::Upper, &self.upper, 0),
            (Edge::Lower, &self.lower, self.upper.len()),
        ] {
            let turns = self.turning_angles(edge);
            for (i, &tau) in turns.iter().enumerate() {
                let eps = self.rounding[offset + i];
                if eps < T::zero() {
                    return Err(SolverError::InvalidGeometry(
                        "negative rounding radius".into(),
                    ));
                }
                if eps == T::zero() || tau.abs() <= conv(1e-13) {
                    continue;
                }
                // limit: half the shortest adjacent finite side
                let mut limit = self.width_left.min(self.width_right);
                if i > 0 {
                    limit = limit.min((verts[i] - verts[i - 1]).modulus());
                }
                if i + 1 < verts.len() {
                    limit = limit.min((verts[i + 1] - verts[i]).modulus());
                }
                if eps > limit * conv(0.5) {
                    return Err(SolverError::RoundingTooLarge {
                        corner: offset + i,
                        radius: as_f64(eps),
                        limit: as_f64(limit * conv(0.5)),
                    });
                }
            }
        }
        Ok(())
    }

    fn check_no_intersections(&self) -> Result<()> {
        let upper = self.segments(Edge::Upper);
        let lower = self.segments(Edge::Lower);
        let all: Vec<_> = upper.iter().chain(lower.iter()).collect();
        for (i, s1) in all.iter().enumerate() {
            for s2 in all.iter().skip(i + 2) {
                // skip adjacent segments sharing a vertex
                if (s1.1 - s2.0).modulus() < conv(1e-14) || (s2.1 - s1.0).modulus() < conv(1e-14) {
                    continue;
                }
                if segments_intersect(s1.0, s1.1, s2.0, s2.1) {
                    return Err(SolverError::InvalidGeometry(
                        "boundary segments intersect: channel is not simple".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Replace every sharp corner's rounding radius by `eps`.
    /// Straight boundaries (no corners) are unchanged for any valid eps.
    pub fn round_corners(&self, eps: T) -> Result<Self> {
        let mut g = self.clone();
        for (edge, offset) in [(Edge::Upper, 0), (Edge::Lower, self.upper.len())] {
            let turns = g.turning_angles(edge);
            for (i, &tau) in turns.iter().enumerate() {
                if tau.abs() > conv(1e-13) {
                    g.rounding[offset + i] = eps;
                }
            }
        }
        g.validate()?;
        Ok(g)
    }

    /// True when both boundaries are locally horizontal straight lines at
    /// axial position x, at least `margin` away from any vertex.
    pub fn is_straight_at(&self, x: T, margin: T) -> bool {
        for verts in [&self.upper, &self.lower] {
            if verts.iter().any(|p| (p.re - x).abs() < margin) {
                return false;
            }
            // inside the vertex span the containing segment must be horizontal
            for w in verts.windows(2) {
                if x > w[0].re && x < w[1].re && (w[1].im - w[0].im).abs() > conv(1e-13) {
                    return false;
                }
            }
        }
        true
    }

    /// Local channel width at an axial position in a straight section.
    pub fn width_at(&self, x: T) -> T {
        let y_of = |verts: &Vec<C<T>>| -> T {
            if x <= verts.first().unwrap().re {
                verts.first().unwrap().im
            } else if x >= verts.last().unwrap().re {
                verts.last().unwrap().im
            } else {
                let mut y = verts.first().unwrap().im;
                for w in verts.windows(2) {
                    if x >= w[0].re && x <= w[1].re {
                        let t = if (w[1].re - w[0].re).abs() > T::zero() {
                            (x - w[0].re) / (w[1].re - w[0].re)
                        } else {
                            T::zero()
                        };
                        y = w[0].im + t * (w[1].im - w[0].im);
                        break;
                    }
                }
                y
            }
        };
        y_of(&self.upper) - y_of(&self.lower)
    }
}

fn segments_intersect<T: Real>(a: C<T>, b: C<T>, c: C<T>, d: C<T>) -> bool {
    let cross = |p: C<T>, q: C<T>| p.re * q.im - p.im * q.re;
    let d1 = cross(b - a, c - a);
    let d2 = cross(b - a, d - a);
    let d3 = cross(d - c, a - c);
    let d4 = cross(d - c, b - c);
    (d1 * d2 < T::zero()) && (d3 * d4 < T::zero())
}

#[derive(Debug, Deserialize)]
struct RawGeometry {
    width_left: Option<f64>,
    width_right: Option<f64>,
    upper: Vec<[f64; 2]>,
    lower: Vec<[f64; 2]>,
    #[serde(default)]
    rounding: Option<RawRounding>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawRounding {
    Uniform(f64),
    PerVertex(Vec<f64>),
}

/// Parse a geometry description in TOML form. See the repository README
/// for the schema.
pub fn parse_geometry<T: Real>(text: &str) -> Result<DuctGeometry<T>> {
    let raw: RawGeometry =
        toml::from_str(text).map_err(|e| SolverError::Config(format!("geometry file: {e}")))?;
    let cv = |p: &[f64; 2]| Complex::new(conv::<T>(p[0]), conv::<T>(p[1]));
    let upper: Vec<C<T>> = raw.upper.iter().map(cv).collect();
    let lower: Vec<C<T>> = raw.lower.iter().map(cv).collect();
    let mut geom = DuctGeometry::new(upper, lower)?;
    if let Some(w) = raw.width_left {
        if (conv::<T>(w) - geom.width_left).abs() > conv(1e-9) {
            return Err(SolverError::InvalidGeometry(
                "declared width_left does not match vertex heights".into(),
            ));
        }
    }
    if let Some(w) = raw.width_right {
        if (conv::<T>(w) - geom.width_right).abs() > conv(1e-9) {
            return Err(SolverError::InvalidGeometry(
                "declared width_right does not match vertex heights".into(),
            ));
        }
    }
    match raw.rounding {
        None => {}
        Some(RawRounding::Uniform(eps)) => {
            geom = geom.round_corners(conv(eps))?;
        }
        Some(RawRounding::PerVertex(list)) => {
            if list.len() != geom.rounding.len() {
                return Err(SolverError::InvalidGeometry(format!(
                    "rounding list has {} entries for {} vertices",
                    list.len(),
                    geom.rounding.len()
                )));
            }
            geom.rounding = list.into_iter().map(conv).collect();
            geom.validate()?;
        }
    }
    Ok(geom)
}

/// Load a geometry file from disk.
pub fn load_geometry<T: Real>(path: &std::path::Path) -> Result<DuctGeometry<T>> {
    parse_geometry(&std::fs::read_to_string(path)?)
}
