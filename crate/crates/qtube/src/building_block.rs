//! Composition of scattering sets of sub-channels joined across a flat
//! interface, and partitioning of a geometry into such sub-channels.
//!
//! Two sections sharing a straight lead compose by the star product:
//! waves bounce between the sections, and summing the geometric series
//! turns the pair of operator quadruples into the quadruple of the
//! concatenation. The composition is exact up to the modal truncation
//! provided both sets reference their amplitudes at the same physical
//! plane inside the shared straight lead.

use nalgebra::DMatrix;
use num_complex::Complex;

use crate::conformal::solve_strip_map;
use crate::error::{Result, SolverError};
use crate::geometry::DuctGeometry;
use crate::imbedding::{solve_profile, SolveOptions};
use crate::profile::{profile_for_map, ProfileOptions, RefractiveProfile};
use crate::scalar::{as_f64, conv, Real, C};
use crate::scattering::{ScatteringSet, Side};

/// Largest acceptable condition estimate of the interface system.
const CONDITION_LIMIT: f64 = 1e12;

fn check_compatible<T: Real>(a: &ScatteringSet<T>, b: &ScatteringSet<T>) -> Result<()> {
    if a.n_modes() != b.n_modes() {
        return Err(SolverError::IncompatibleInterface(format!(
            "mode counts differ: {} vs {}",
            a.n_modes(),
            b.n_modes()
        )));
    }
    if (a.k2 - b.k2).abs() > conv::<T>(1e-12) * (T::one() + a.k2.abs()) {
        return Err(SolverError::IncompatibleInterface(
            "energies differ".into(),
        ));
    }
    // physical lead width in each chart: strip width times sqrt(mu)
    let wa = a.width_a * a.mu_right.sqrt();
    let wb = b.width_a * b.mu_left.sqrt();
    if (wa - wb).abs() > conv::<T>(1e-8) * wa {
        return Err(SolverError::IncompatibleInterface(format!(
            "interface widths differ: {} vs {}",
            as_f64(wa),
            as_f64(wb)
        )));
    }
    Ok(())
}

fn frob<T: Real>(m: &DMatrix<C<T>>) -> T {
    let mut acc = T::zero();
    for z in m.iter() {
        acc += z.norm_sqr();
    }
    acc.sqrt()
}

/// Solve M X = RHS for a square complex system, reporting a cheap
/// Frobenius condition estimate alongside the solution.
fn solve_with_condition<T: Real>(
    m: &DMatrix<C<T>>,
    rhs: &DMatrix<C<T>>,
) -> Result<(DMatrix<C<T>>, T)> {
    let n = m.nrows();
    let lu = m.clone().lu();
    let x = lu.solve(rhs).ok_or(SolverError::SingularInterface {
        condition: f64::INFINITY,
    })?;
    let eye = DMatrix::from_diagonal_element(n, n, Complex::new(T::one(), T::zero()));
    let inv = lu.solve(&eye).ok_or(SolverError::SingularInterface {
        condition: f64::INFINITY,
    })?;
    // near-resonance shows up as a large inverse (diverging bounce
    // series), not necessarily as poor conditioning
    let cond = frob(&inv) * frob(m).max(T::one());
    if as_f64(cond) > CONDITION_LIMIT {
        return Err(SolverError::SingularInterface {
            condition: as_f64(cond),
        });
    }
    Ok((x, cond))
}

/// Star composition of two scattering sets, `a` on the left, with the
/// condition estimate of the interface system. Both sets must reference
/// their interface amplitudes at the same physical plane.
pub fn star_compose_detailed<T: Real>(
    a: &ScatteringSet<T>,
    b: &ScatteringSet<T>,
) -> Result<(ScatteringSet<T>, T)> {
    check_compatible(a, b)?;
    let n = a.n_modes();
    let eye = DMatrix::from_diagonal_element(n, n, Complex::new(T::one(), T::zero()));

    // right-moving: G = (I - R-_A R+_B)^{-1}
    let m_right = &eye - &a.r_minus * &b.r_plus;
    let (g_t_plus_a, cond_r) = solve_with_condition(&m_right, &a.t_plus)?;
    let t_plus = &b.t_plus * &g_t_plus_a;
    let r_plus = &a.r_plus + &a.t_minus * &b.r_plus * &g_t_plus_a;

    // left-moving: H = (I - R+_B R-_A)^{-1}
    let m_left = &eye - &b.r_plus * &a.r_minus;
    let (h_t_minus_b, cond_l) = solve_with_condition(&m_left, &b.t_minus)?;
    let t_minus = &a.t_minus * &h_t_minus_b;
    let r_minus = &b.r_minus + &b.t_plus * &a.r_minus * &h_t_minus_b;

    // the composed set keeps the left chart of a; the right lead of b is
    // re-expressed in that chart so the flux weights stay physical
    let ratio = b.width_a / a.width_a;
    let set = ScatteringSet {
        k2: a.k2,
        width_a: a.width_a,
        mu_left: a.mu_left,
        mu_right: b.mu_right * ratio * ratio,
        u_left: a.u_left,
        u_right: a.u_right + (b.u_right - b.u_left) * ratio,
        t_plus,
        r_plus,
        r_minus,
        t_minus,
    };
    Ok((set, cond_r.max(cond_l)))
}

/// Star composition of two scattering sets, `a` on the left.
pub fn star_compose<T: Real>(
    a: &ScatteringSet<T>,
    b: &ScatteringSet<T>,
) -> Result<ScatteringSet<T>> {
    star_compose_detailed(a, b).map(|(s, _)| s)
}

/// A flat junction between adjacent sub-channels.
#[derive(Debug, Clone, Copy)]
pub struct Interface<T: Real> {
    /// Axial position of the junction plane.
    pub x: T,
    /// Channel width there.
    pub width: T,
}

/// An ordered partition of a channel into sub-channels joined at flat
/// interfaces, each sub-channel extended straight to infinity.
#[derive(Debug, Clone)]
pub struct CascadePlan<T: Real> {
    pub pieces: Vec<DuctGeometry<T>>,
    pub interfaces: Vec<Interface<T>>,
}

fn boundary_height<T: Real>(verts: &[C<T>], x: T) -> T {
    if x <= verts.first().unwrap().re {
        return verts.first().unwrap().im;
    }
    if x >= verts.last().unwrap().re {
        return verts.last().unwrap().im;
    }
    for w in verts.windows(2) {
        if x >= w[0].re && x <= w[1].re {
            let run = w[1].re - w[0].re;
            let t = if run > T::zero() {
                (x - w[0].re) / run
            } else {
                T::zero()
            };
            return w[0].im + t * (w[1].im - w[0].im);
        }
    }
    verts.last().unwrap().im
}

/// Split a geometry at the given axial positions. Every cut must lie in
/// a straight horizontal stretch of both boundaries, clear of vertices
/// by half the local width; each resulting piece keeps its own vertices
/// and continues straight to infinity past the cut.
pub fn partition_geometry<T: Real>(
    geom: &DuctGeometry<T>,
    cut_points: &[T],
) -> Result<CascadePlan<T>> {
    let mut cuts = cut_points.to_vec();
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for w in cuts.windows(2) {
        if w[1] - w[0] < geom.width_at(w[0]) {
            return Err(SolverError::InvalidCutPoint { x: as_f64(w[1]) });
        }
    }

    let mut interfaces = Vec::new();
    for &x in &cuts {
        let width = geom.width_at(x);
        if !geom.is_straight_at(x, width * conv(0.5)) {
            return Err(SolverError::InvalidCutPoint { x: as_f64(x) });
        }
        interfaces.push(Interface { x, width });
    }

    let mut pieces = Vec::new();
    let mut lo: Option<T> = None;
    for i in 0..=cuts.len() {
        let hi = cuts.get(i).copied();
        pieces.push(piece_between(geom, lo, hi)?);
        lo = hi;
    }
    Ok(CascadePlan { pieces, interfaces })
}

fn piece_between<T: Real>(
    geom: &DuctGeometry<T>,
    lo: Option<T>,
    hi: Option<T>,
) -> Result<DuctGeometry<T>> {
    let keep = |x: T| lo.map_or(true, |l| x > l) && hi.map_or(true, |h| x < h);
    let slice = |verts: &[C<T>], ref_x: T| -> Vec<C<T>> {
        let kept: Vec<C<T>> = verts.iter().copied().filter(|p| keep(p.re)).collect();
        if kept.is_empty() {
            // straight boundary throughout the piece: anchor one vertex
            vec![Complex::new(ref_x, boundary_height(verts, ref_x))]
        } else {
            kept
        }
    };
    let ref_x = match (lo, hi) {
        (Some(l), Some(h)) => (l + h) * conv(0.5),
        (Some(l), None) => l,
        (None, Some(h)) => h,
        (None, None) => geom.x_range().0,
    };
    let upper = slice(&geom.upper, ref_x);
    let lower = slice(&geom.lower, ref_x);
    let mut piece = DuctGeometry::new(upper, lower)?;
    // carry the rounding radii of the kept vertices
    let mut rounding = Vec::new();
    for (verts, offset) in [(&geom.upper, 0), (&geom.lower, geom.upper.len())] {
        let kept_any = verts.iter().any(|p| keep(p.re));
        if !kept_any {
            rounding.push(T::zero());
            continue;
        }
        for (j, p) in verts.iter().enumerate() {
            if keep(p.re) {
                rounding.push(geom.rounding[offset + j]);
            }
        }
    }
    piece.rounding = rounding;
    piece.validate()?;
    Ok(piece)
}

/// Solve every piece of a plan and fold the results into the scattering
/// set of the whole channel. The outer reference planes are placed at
/// the physical positions `x_left` and `x_right`; interior planes sit at
/// the cut points. `n_modes` applies to every piece.
pub fn solve_plan<T: Real>(
    plan: &CascadePlan<T>,
    k2: T,
    n_modes: usize,
    x_left: T,
    x_right: T,
    opts: &SolveOptions<T>,
) -> Result<ScatteringSet<T>> {
    let l_max = 2 * n_modes + 4;
    let popts = ProfileOptions::default();
    let mut composed: Option<ScatteringSet<T>> = None;
    for (i, piece) in plan.pieces.iter().enumerate() {
        let map = solve_strip_map(piece)?;
        let profile = profile_for_map(&map, l_max, &popts)?;

        let xl = if i == 0 {
            x_left
        } else {
            plan.interfaces[i - 1].x
        };
        let xr = if i == plan.pieces.len() - 1 {
            x_right
        } else {
            plan.interfaces[i].x
        };
        // strip coordinates of the target planes from the axial calibration
        let ul = (xl - map.calib_left.1.re) / map.calib_left.0.re;
        let ur = (xr - map.calib_right.1.re) / map.calib_right.0.re;
        // the automatic grid chases flatness to a tight threshold, so its
        // tails can reach past an interior cut; clip the solved region at
        // the interface planes so the reference planes never land inside it
        let clip_lo = (i > 0).then_some(ul);
        let clip_hi = (i + 1 < plan.pieces.len()).then_some(ur);
        let profile = clip_profile(&profile, clip_lo, clip_hi)?;
        let mut s = solve_profile(&profile, k2, n_modes, opts)?;

        let l_left = s.u_left - ul;
        let l_right = ur - s.u_right;
        check_pull_in(&s, l_left, l_right)?;
        s.flat_propagate(l_left, l_right);

        composed = Some(match composed {
            None => s,
            Some(acc) => star_compose(&acc, &s)?,
        });
    }
    composed.ok_or_else(|| SolverError::Config("empty cascade plan".into()))
}

/// Restrict a profile to the stations inside `[lo, hi]`. Used when a
/// neighbouring cut plane falls inside the tabulated tails; the discarded
/// stations are flat to the build threshold by construction.
fn clip_profile<T: Real>(
    profile: &RefractiveProfile<T>,
    lo: Option<T>,
    hi: Option<T>,
) -> Result<RefractiveProfile<T>> {
    let keep = |u: T| lo.map_or(true, |l| u >= l) && hi.map_or(true, |h| u <= h);
    if profile.u_grid.iter().all(|&u| keep(u)) {
        return Ok(profile.clone());
    }
    let mut u_grid = Vec::new();
    let mut rows = Vec::new();
    for (i, &u) in profile.u_grid.iter().enumerate() {
        if keep(u) {
            u_grid.push(u);
            rows.push(profile.rows[i].clone());
        }
    }
    if u_grid.len() < 2 {
        return Err(SolverError::IncompatibleInterface(
            "cut planes leave no tabulated stations in a section".into(),
        ));
    }
    RefractiveProfile::new(
        profile.width_a,
        u_grid,
        rows,
        profile.mu_minus,
        profile.mu_plus,
    )
}

/// Reject reference planes pulled so far into a section that evanescent
/// entries would be amplified out of the integration noise floor.
fn check_pull_in<T: Real>(s: &ScatteringSet<T>, l_left: T, l_right: T) -> Result<()> {
    for (side, l) in [(Side::Left, l_left), (Side::Right, l_right)] {
        if l >= T::zero() {
            continue;
        }
        let spec = s.side_spec(side);
        let alpha_max = crate::modal_basis::axial_wavenumber(s.n_modes(), &spec).im;
        // amplification bound e^{2 alpha |l|} <= 1e6
        if alpha_max * (-l) * conv(2.0) > conv(13.8) {
            return Err(SolverError::IncompatibleInterface(format!(
                "reference plane pulled {} into a section; evanescent \
                 amplification would exceed tolerance",
                as_f64(-l)
            )));
        }
    }
    Ok(())
}
