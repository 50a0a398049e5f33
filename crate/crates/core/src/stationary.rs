//! Stationary side: the perturbed profile equation `u_xx = ε⁻² ∇V(u) + f`,
//! heteroclinic shooting, Gronwall comparison, zero-discrepancy companions and
//! structure extraction from a relaxed time slice.
//!
//! The equation is integrated as the first-order system `u_x = w/ε`,
//! `w_x = ∇V(u)/ε + ε f` with `w = ε u_x`. Zero-discrepancy trajectories are
//! integrated with RK4 followed by a projection of `w` onto `|w|² = 2V(u)`,
//! which keeps the method's order and removes the drift off the separatrix
//! that plain integration suffers near the wells.

use crate::diagnostics::{calibrate_monotone, Constants, Verdict};
use crate::error::{Error, Result};
use crate::evolve::Trajectory;
use crate::frontset::{finest_covering, front_set, Covering, FrontSet, Target};
use crate::grid::{energy_density, trapezoid, Field, Grid1D};
use crate::potential::{euclid, norm, off_well_floor, Potential, WellConstants};
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::io::Write;

/// Integration steps never exceed `ε / MAX_STEP_FRACTION`.
pub const MAX_STEP_FRACTION: f64 = 50.0;
/// Step used when the caller does not choose one.
pub const DEFAULT_STEP_FRACTION: f64 = 200.0;
/// Integration stops with a divergence error once `|u| > DIVERGENCE_FACTOR (R0 + 1)`.
pub const DIVERGENCE_FACTOR: f64 = 10.0;
/// Shooting succeeds when both tails come this close to their wells.
pub const TAIL_TOL: f64 = 1e-8;
/// Tail directions are read at the outermost node with `|U - σ|` at least this large.
pub const OMEGA_FLOOR: f64 = 1e-6;
/// Largest `|ξ|` accepted for a zero-discrepancy profile.
pub const ZERO_DISCREPANCY_TOL: f64 = 1e-6;
/// Relative tolerance of the discrete residual of the perturbed equation.
pub const RESIDUAL_TOL: f64 = 1e-8;
/// Confinement ratio of the structure covering.
pub const STRUCTURE_KAPPA: f64 = 0.25;

const SCAN_ANGLES: usize = 65;
const GOLDEN_ITERS: usize = 60;

/// A point `(u, w)` of the first-order system, `w = ε u_x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ODEState {
    pub u: Vec<f64>,
    pub w: Vec<f64>,
}

impl ODEState {
    pub fn new(u: Vec<f64>, w: Vec<f64>) -> Result<ODEState> {
        if u.len() != w.len() || u.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "state components have lengths {} and {}",
                u.len(),
                w.len()
            )));
        }
        if u.iter().chain(&w).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("state has non-finite entries".into()));
        }
        Ok(ODEState { u, w })
    }

    pub fn dim(&self) -> usize {
        self.u.len()
    }

    /// `ξ = (|w|²/2 - V(u)) / ε`, i.e. `ε|u_x|²/2 - V(u)/ε`.
    pub fn discrepancy(&self, p: &Potential, eps: f64) -> f64 {
        (0.5 * self.w.iter().map(|v| v * v).sum::<f64>() - p.eval(&self.u)) / eps
    }

    /// Euclidean distance in `R^{2k}`.
    pub fn distance(&self, other: &ODEState) -> f64 {
        let du: f64 = self.u.iter().zip(&other.u).map(|(a, b)| (a - b).powi(2)).sum();
        let dw: f64 = self.w.iter().zip(&other.w).map(|(a, b)| (a - b).powi(2)).sum();
        (du + dw).sqrt()
    }

    fn flat(&self) -> Vec<f64> {
        let mut y = self.u.clone();
        y.extend_from_slice(&self.w);
        y
    }

    fn from_flat(y: &[f64]) -> ODEState {
        let k = y.len() / 2;
        ODEState { u: y[..k].to_vec(), w: y[k..].to_vec() }
    }
}

/// Forcing term `f` of the perturbed equation; zero outside its samples.
pub enum Forcing<'a> {
    Zero,
    /// Node-major samples on a uniform grid, linearly interpolated.
    Sampled { grid: Grid1D, k: usize, values: &'a [f64] },
    Func(&'a dyn Fn(f64, &mut [f64])),
}

impl Forcing<'_> {
    fn eval(&self, x: f64, out: &mut [f64]) {
        match self {
            Forcing::Zero => out.iter_mut().for_each(|v| *v = 0.0),
            Forcing::Sampled { grid, k, values } => {
                let s = (x - grid.x_min) / grid.h;
                if s < -1e-9 || s > (grid.n - 1) as f64 + 1e-9 {
                    out.iter_mut().for_each(|v| *v = 0.0);
                    return;
                }
                let i = (s.floor().max(0.0) as usize).min(grid.n - 2);
                let t = (s - i as f64).clamp(0.0, 1.0);
                for (c, o) in out.iter_mut().enumerate() {
                    *o = (1.0 - t) * values[i * k + c] + t * values[(i + 1) * k + c];
                }
            }
            Forcing::Func(g) => g(x, out),
        }
    }

    /// `‖f‖₂` over `[a, b]`.
    pub fn l2_norm(&self, a: f64, b: f64, k: usize) -> f64 {
        match self {
            Forcing::Zero => 0.0,
            Forcing::Sampled { grid, k, values } => {
                let sq: Vec<f64> = values.chunks(*k).map(|c| c.iter().map(|v| v * v).sum()).collect();
                trapezoid(grid.h, &sq).sqrt()
            }
            Forcing::Func(g) => {
                let n = 8001;
                let h = (b - a) / (n - 1) as f64;
                let mut buf = vec![0.0; k];
                let sq: Vec<f64> = (0..n)
                    .map(|i| {
                        g(a + i as f64 * h, &mut buf);
                        buf.iter().map(|v| v * v).sum()
                    })
                    .collect();
                trapezoid(h, &sq).sqrt()
            }
        }
    }

    fn check_covers(&self, a: f64, b: f64) -> Result<()> {
        if let Forcing::Sampled { grid, .. } = self {
            let slack = 1e-9 * grid.h;
            if a.min(b) < grid.x_min - slack || a.max(b) > grid.x_max + slack {
                return Err(Error::InvalidArgument(format!(
                    "forcing is sampled on [{}, {}] but the integration spans [{}, {}]",
                    grid.x_min,
                    grid.x_max,
                    a.min(b),
                    a.max(b)
                )));
            }
        }
        Ok(())
    }
}

/// States of an integrated trajectory at the positions `xs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdePath {
    /// Signed step between consecutive nodes.
    pub step: f64,
    pub xs: Vec<f64>,
    pub states: Vec<ODEState>,
}

impl OdePath {
    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn sup_abs_u(&self) -> f64 {
        self.states.iter().map(|s| norm(&s.u)).fold(0.0, f64::max)
    }

    pub fn discrepancy(&self, p: &Potential, eps: f64) -> Vec<f64> {
        self.states.iter().map(|s| s.discrepancy(p, eps)).collect()
    }

    /// Index of the node at `x` (within a millionth of a step).
    pub fn index_of(&self, x: f64) -> Option<usize> {
        if self.xs.len() < 2 {
            return (self.xs.first() == Some(&x)).then_some(0);
        }
        let h = (self.xs[1] - self.xs[0]).abs();
        self.xs.iter().position(|&y| (y - x).abs() <= 1e-6 * h)
    }
}

/// Classical RK4 for the first-order system, with an optional projection onto
/// the zero-discrepancy manifold after every step.
struct Rk4<'a> {
    p: &'a Potential,
    eps: f64,
    f: &'a Forcing<'a>,
    k: usize,
    project: bool,
    limit: f64,
    s: [Vec<f64>; 5],
    fbuf: Vec<f64>,
}

impl<'a> Rk4<'a> {
    fn new(p: &'a Potential, eps: f64, f: &'a Forcing<'a>, project: bool) -> Rk4<'a> {
        let k = p.dim();
        let z = vec![0.0; 2 * k];
        Rk4 {
            p,
            eps,
            f,
            k,
            project,
            limit: DIVERGENCE_FACTOR * (p.r0() + 1.0),
            s: [z.clone(), z.clone(), z.clone(), z.clone(), z],
            fbuf: vec![0.0; k],
        }
    }

    fn rhs(&mut self, x: f64, y: &[f64], out: &mut [f64]) {
        let k = self.k;
        let inv = 1.0 / self.eps;
        for c in 0..k {
            out[c] = y[k + c] * inv;
        }
        self.p.grad_into(&y[..k], &mut out[k..]);
        self.f.eval(x, &mut self.fbuf);
        for c in 0..k {
            out[k + c] = out[k + c] * inv + self.eps * self.fbuf[c];
        }
    }

    fn step(&mut self, x: f64, h: f64, y: &mut [f64]) {
        let n = y.len();
        let [mut k1, mut k2, mut k3, mut k4, mut tmp] = std::mem::take(&mut self.s);
        self.rhs(x, y, &mut k1);
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * h * k1[i];
        }
        self.rhs(x + 0.5 * h, &tmp, &mut k2);
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * h * k2[i];
        }
        self.rhs(x + 0.5 * h, &tmp, &mut k3);
        for i in 0..n {
            tmp[i] = y[i] + h * k3[i];
        }
        self.rhs(x + h, &tmp, &mut k4);
        for i in 0..n {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        self.s = [k1, k2, k3, k4, tmp];
        if self.project {
            project_zero_discrepancy(self.p, y);
        }
    }

    /// `n` steps of signed size `h` from `(x0, y0)`; returns every visited state.
    fn run(&mut self, x0: f64, y0: &[f64], h: f64, n: usize) -> Result<Vec<Vec<f64>>> {
        let mut y = y0.to_vec();
        let mut out = Vec::with_capacity(n + 1);
        out.push(y.clone());
        for i in 0..n {
            let x = x0 + i as f64 * h;
            self.step(x, h, &mut y);
            let m = norm(&y[..self.k]);
            if !(m <= self.limit) {
                return Err(Error::Divergence { x: x + h, max_abs: m, limit: self.limit });
            }
            out.push(y.clone());
        }
        Ok(out)
    }
}

/// Rescales `w` so that `|w|² = 2 V(u)`, keeping its direction.
fn project_zero_discrepancy(p: &Potential, y: &mut [f64]) {
    let k = y.len() / 2;
    let target = (2.0 * p.eval(&y[..k])).sqrt();
    let current = norm(&y[k..]);
    if current > 0.0 {
        let s = target / current;
        y[k..].iter_mut().for_each(|v| *v *= s);
    }
}

fn check_step(step: f64, eps: f64) -> Result<()> {
    if !(step > 0.0) || step > eps / MAX_STEP_FRACTION * (1.0 + 1e-12) {
        return Err(Error::InvalidArgument(format!(
            "integration step {step} must lie in (0, ε/{MAX_STEP_FRACTION}]"
        )));
    }
    Ok(())
}

/// Fixed-step RK4 integration of the perturbed system from `span.0` to `span.1`
/// (either direction) with steps no larger than `min(max_step, ε/50)`.
pub fn integrate_ode(
    s0: &ODEState,
    span: (f64, f64),
    p: &Potential,
    eps: f64,
    f: &Forcing,
    max_step: f64,
) -> Result<OdePath> {
    if s0.dim() != p.dim() {
        return Err(Error::InvalidArgument("state dimension differs from the potential".into()));
    }
    if !(max_step > 0.0) {
        return Err(Error::InvalidArgument(format!("max_step = {max_step} must be positive")));
    }
    f.check_covers(span.0, span.1)?;
    let len = span.1 - span.0;
    let cap = max_step.min(eps / MAX_STEP_FRACTION);
    let n = ((len.abs() / cap).ceil() as usize).max(1);
    let h = len / n as f64;
    let states = Rk4::new(p, eps, f, false).run(span.0, &s0.flat(), h, n)?;
    Ok(OdePath {
        step: h,
        xs: (0..=n).map(|i| span.0 + i as f64 * h).collect(),
        states: states.iter().map(|y| ODEState::from_flat(y)).collect(),
    })
}

/// Integration from `x0` over `n_left` steps to the left and `n_right` to the
/// right; nodes are returned in increasing `x`.
#[allow(clippy::too_many_arguments)]
pub fn integrate_ode_both(
    s0: &ODEState,
    x0: f64,
    step: f64,
    n_left: usize,
    n_right: usize,
    p: &Potential,
    eps: f64,
    f: &Forcing,
) -> Result<OdePath> {
    check_step(step, eps)?;
    f.check_covers(x0 - n_left as f64 * step, x0 + n_right as f64 * step)?;
    both_ways(&s0.flat(), x0, step, n_left, n_right, p, eps, f, false)
}

#[allow(clippy::too_many_arguments)]
fn both_ways(
    y0: &[f64],
    x0: f64,
    step: f64,
    n_left: usize,
    n_right: usize,
    p: &Potential,
    eps: f64,
    f: &Forcing,
    project: bool,
) -> Result<OdePath> {
    let mut rk = Rk4::new(p, eps, f, project);
    let left = rk.run(x0, y0, -step, n_left)?;
    let right = rk.run(x0, y0, step, n_right)?;
    let mut xs = Vec::with_capacity(n_left + n_right + 1);
    let mut states = Vec::with_capacity(n_left + n_right + 1);
    for i in (1..=n_left).rev() {
        xs.push(x0 - i as f64 * step);
        states.push(ODEState::from_flat(&left[i]));
    }
    for (i, y) in right.iter().enumerate() {
        xs.push(x0 + i as f64 * step);
        states.push(ODEState::from_flat(y));
    }
    Ok(OdePath { step, xs, states })
}

/// A solution of the unforced profile equation sampled on a uniform grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryProfile {
    pub grid: Grid1D,
    /// Node-major `u`.
    pub values: Vec<f64>,
    /// Node-major `w = ε u_x`.
    pub slopes: Vec<f64>,
    pub eps: f64,
    pub discrepancy_max: f64,
    /// Wells reached at `-∞` and `+∞`, for globally defined profiles.
    pub endpoints_wells: Option<(usize, usize)>,
}

impl StationaryProfile {
    fn from_path(path: &OdePath, eps: f64, p: &Potential, endpoints_wells: Option<(usize, usize)>) -> Result<Self> {
        let n = path.len();
        let grid = Grid1D::new(path.xs[0], path.xs[n - 1], n)?;
        let values = path.states.iter().flat_map(|s| s.u.iter().copied()).collect();
        let slopes = path.states.iter().flat_map(|s| s.w.iter().copied()).collect();
        let discrepancy_max = path.discrepancy(p, eps).iter().fold(0.0, |m: f64, v| m.max(v.abs()));
        Ok(StationaryProfile { grid, values, slopes, eps, discrepancy_max, endpoints_wells })
    }

    pub fn dim(&self) -> usize {
        self.values.len() / self.grid.n
    }

    pub fn u(&self, i: usize) -> &[f64] {
        let k = self.dim();
        &self.values[i * k..(i + 1) * k]
    }

    pub fn w(&self, i: usize) -> &[f64] {
        let k = self.dim();
        &self.slopes[i * k..(i + 1) * k]
    }

    pub fn state(&self, i: usize) -> ODEState {
        ODEState { u: self.u(i).to_vec(), w: self.w(i).to_vec() }
    }

    /// `(∫ ε|u_x|²/2, ∫ V(u)/ε)` by the trapezoidal rule.
    pub fn energy_parts(&self, p: &Potential) -> (f64, f64) {
        let n = self.grid.n;
        let kin: Vec<f64> = (0..n).map(|i| 0.5 * self.w(i).iter().map(|v| v * v).sum::<f64>() / self.eps).collect();
        let pot: Vec<f64> = (0..n).map(|i| p.eval(self.u(i)) / self.eps).collect();
        (trapezoid(self.grid.h, &kin), trapezoid(self.grid.h, &pot))
    }

    pub fn energy(&self, p: &Potential) -> f64 {
        let (a, b) = self.energy_parts(p);
        a + b
    }

    /// Largest difference between a node and one plain RK4 step from its neighbour.
    pub fn ode_residual(&self, p: &Potential) -> f64 {
        let f = Forcing::Zero;
        let mut rk = Rk4::new(p, self.eps, &f, false);
        let mut worst: f64 = 0.0;
        for i in 0..self.grid.n - 1 {
            let mut y = self.state(i).flat();
            rk.step(self.grid.x(i), self.grid.h, &mut y);
            worst = worst.max(ODEState::from_flat(&y).distance(&self.state(i + 1)));
        }
        worst
    }

    /// Unit vectors `ω∓ = (U - σ)/|U - σ|` read at the outermost node of each tail
    /// where `|U - σ| >= OMEGA_FLOOR`, `σ` being the well nearest the end node.
    pub fn tail_directions(&self, p: &Potential) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
        let n = self.grid.n;
        let dir = |order: &mut dyn Iterator<Item = usize>, end: usize| {
            let sigma = &p.minimizers()[p.dist_to_wells(self.u(end)).1];
            let mut found = None;
            for i in order {
                let d: Vec<f64> = self.u(i).iter().zip(sigma).map(|(a, b)| a - b).collect();
                let m = norm(&d);
                if m >= OMEGA_FLOOR {
                    found = Some(d.iter().map(|v| v / m).collect());
                }
            }
            found
        };
        let anchor = self.anchor_index(p);
        let minus = dir(&mut (0..=anchor).rev(), 0);
        let plus = dir(&mut (anchor..n), n - 1);
        (minus, plus)
    }

    /// Node maximising `dist(u, Σ)`.
    pub fn anchor_index(&self, p: &Potential) -> usize {
        (0..self.grid.n)
            .map(|i| (p.dist_to_wells(self.u(i)).0, i))
            .fold((f64::NEG_INFINITY, 0), |b, c| if c.0 > b.0 { c } else { b })
            .1
    }

    /// Rows `x, u_1..u_k, w_1..w_k`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let k = self.dim();
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["x".to_string()];
        header.extend((1..=k).map(|c| format!("u_{c}")));
        header.extend((1..=k).map(|c| format!("w_{c}")));
        wr.write_record(&header)?;
        for i in 0..self.grid.n {
            let mut row = vec![format!("{:e}", self.grid.x(i))];
            row.extend(self.u(i).iter().map(|v| format!("{v:e}")));
            row.extend(self.w(i).iter().map(|v| format!("{v:e}")));
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Zero-discrepancy trajectory through `u0` with `w` along `dir` (not normalised),
/// `n_left` steps to the left and `n_right` to the right.
#[allow(clippy::too_many_arguments)]
fn zero_discrepancy_path(
    p: &Potential,
    eps: f64,
    u0: &[f64],
    dir: &[f64],
    x0: f64,
    step: f64,
    n_left: usize,
    n_right: usize,
) -> Result<OdePath> {
    let speed = (2.0 * p.eval(u0)).sqrt();
    let dn = norm(dir);
    if !(dn > 0.0) {
        return Err(Error::InvalidArgument("launch direction vanishes".into()));
    }
    let mut y = u0.to_vec();
    y.extend(dir.iter().map(|d| d / dn * speed));
    both_ways(&y, x0, step, n_left, n_right, p, eps, &Forcing::Zero, true)
}

/// Closest approach of `path[range]` to `target`.
fn closest_approach(path: &OdePath, range: impl Iterator<Item = usize>, target: &[f64]) -> f64 {
    range.map(|i| euclid(&path.states[i].u, target)).fold(f64::INFINITY, f64::min)
}

/// Heteroclinic from minimizer `well_from` to `well_to` on `[-L, L]`, anchored
/// so that `dist(u(0), Σ)` is maximal.
///
/// Launches from the midpoint of the two wells with `ξ = 0`. In the scalar case
/// the launch direction is fixed; otherwise the direction angle in the plane of
/// the well segment and one orthogonal axis is scanned and refined by golden
/// section on the larger tail miss. `half_width` defaults to the distance at
/// which the linearised tails fall below `1e-12`.
pub fn shoot_heteroclinic(
    p: &Potential,
    eps: f64,
    well_from: usize,
    well_to: usize,
    half_width: Option<f64>,
) -> Result<StationaryProfile> {
    let wells = p.minimizers();
    if well_from >= wells.len() || well_to >= wells.len() || well_from == well_to {
        return Err(Error::InvalidArgument(format!("invalid well pair ({well_from}, {well_to})")));
    }
    let (a, b) = (&wells[well_from], &wells[well_to]);
    let mid: Vec<f64> = a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect();
    if p.eval(&mid) <= 0.0 {
        return Err(Error::InvalidArgument("the well midpoint is itself a zero of V".into()));
    }
    let lambda = |i: usize| p.hess_eigen_range(&wells[i]).0;
    let rate = lambda(well_from).min(lambda(well_to)).sqrt();
    let half = half_width.unwrap_or(eps * (1e12f64).ln() / rate);
    let step = eps / DEFAULT_STEP_FRACTION;
    let n = (half / step).ceil() as usize;

    let e: Vec<f64> = {
        let d: Vec<f64> = b.iter().zip(a).map(|(x, y)| x - y).collect();
        let m = norm(&d);
        d.iter().map(|v| v / m).collect()
    };
    let shoot = |theta: f64, o: &[f64]| -> (f64, Option<OdePath>) {
        let dir: Vec<f64> = e.iter().zip(o).map(|(x, y)| theta.cos() * x + theta.sin() * y).collect();
        match zero_discrepancy_path(p, eps, &mid, &dir, 0.0, step, n, n) {
            Ok(path) => {
                let miss = closest_approach(&path, 0..=n, a).max(closest_approach(&path, n..=2 * n, b));
                (miss, Some(path))
            }
            Err(_) => (f64::INFINITY, None),
        }
    };

    let (miss, path) = if p.dim() == 1 {
        shoot(0.0, &[0.0])
    } else {
        let o = orthogonal_unit(&e);
        let half_pi = std::f64::consts::FRAC_PI_2;
        let grid: Vec<f64> =
            (0..SCAN_ANGLES).map(|i| -half_pi + std::f64::consts::PI * i as f64 / (SCAN_ANGLES - 1) as f64).collect();
        let scores: Vec<f64> = grid.iter().map(|&t| shoot(t, &o).0).collect();
        let best = (0..grid.len()).fold(0, |b, i| if scores[i] < scores[b] { i } else { b });
        let width = std::f64::consts::PI / (SCAN_ANGLES - 1) as f64;
        let (mut lo, mut hi) = (grid[best] - width, grid[best] + width);
        let g = 0.5 * (5f64.sqrt() - 1.0);
        let (mut c, mut d) = (hi - g * (hi - lo), lo + g * (hi - lo));
        let (mut fc, mut fd) = (shoot(c, &o).0, shoot(d, &o).0);
        for _ in 0..GOLDEN_ITERS {
            if fc <= fd {
                hi = d;
                d = c;
                fd = fc;
                c = hi - g * (hi - lo);
                fc = shoot(c, &o).0;
            } else {
                lo = c;
                c = d;
                fc = fd;
                d = lo + g * (hi - lo);
                fd = shoot(d, &o).0;
            }
        }
        let theta = if scores[best] <= fc.min(fd) { grid[best] } else if fc <= fd { c } else { d };
        shoot(theta, &o)
    };
    match path {
        Some(path) if miss <= TAIL_TOL => {
            let mut prof = StationaryProfile::from_path(&path, eps, p, Some((well_from, well_to)))?;
            let i = prof.anchor_index(p);
            let shift = prof.grid.x(i);
            prof.grid = Grid1D::new(prof.grid.x_min - shift, prof.grid.x_max - shift, prof.grid.n)?;
            Ok(prof)
        }
        _ => Err(Error::NoConvergence(format!(
            "heteroclinic shooting from well {well_from} to {well_to} missed by {miss:e}"
        ))),
    }
}

fn orthogonal_unit(e: &[f64]) -> Vec<f64> {
    let k = e.len();
    let axis = (0..k).fold(0, |b, i| if e[i].abs() < e[b].abs() { i } else { b });
    let mut o = vec![0.0; k];
    o[axis] = 1.0;
    let dot: f64 = o.iter().zip(e).map(|(a, b)| a * b).sum();
    o.iter_mut().zip(e).for_each(|(v, x)| *v -= dot * x);
    let m = norm(&o);
    o.iter_mut().for_each(|v| *v /= m);
    o
}

/// `A(‖u‖∞ + 1)`.
fn lipschitz_at(p: &Potential, sup_u: f64) -> f64 {
    p.lipschitz_bound(sup_u + 1.0)
}

/// Compares the perturbed solution `u` (a uniform path containing `x0` as a
/// node) with the unforced solution started from `s0` at `x0`.
///
/// When the hypothesis `|U(x0) - s0| + ε^{3/2}‖f‖₂/√(2A) <= exp(-A a/ε)` fails
/// the verdict is `gronwall_precondition` with `pass = false`. `f` is taken as
/// zero outside the path.
pub fn gronwall_compare(
    u: &OdePath,
    s0: &ODEState,
    x0: f64,
    a: f64,
    eps: f64,
    p: &Potential,
    f: &Forcing,
) -> Result<Verdict> {
    if u.len() < 2 {
        return Err(Error::InvalidArgument("perturbed path needs at least two nodes".into()));
    }
    let i0 = u.index_of(x0).ok_or_else(|| Error::InvalidArgument(format!("x0 = {x0} is not a path node")))?;
    if !(u.step > 0.0) {
        return Err(Error::InvalidArgument("perturbed path must be in increasing x".into()));
    }
    let step = u.step;
    check_step(step, eps)?;
    let k = p.dim();
    let big_a = lipschitz_at(p, u.sup_abs_u());
    let f_l2 = f.l2_norm(u.xs[0], u.xs[u.len() - 1], k);
    let h0 = u.states[i0].distance(s0) + eps.powf(1.5) / (2.0 * big_a).sqrt() * f_l2;
    let hyp = (-big_a * a / eps).exp();
    let params = json!({ "x0": x0, "a": a, "eps": eps, "A": big_a, "f_l2": f_l2,
                         "hypothesis_lhs": h0, "hypothesis_rhs": hyp });
    if h0 > hyp {
        return Ok(Verdict { check: "gronwall_precondition".into(), params, lhs: h0, rhs: hyp, pass: false });
    }
    let n_left = (0..i0).rev().take_while(|&i| x0 - u.xs[i] <= a * (1.0 + 1e-12)).count();
    let n_right = (i0 + 1..u.len()).take_while(|&i| u.xs[i] - x0 <= a * (1.0 + 1e-12)).count();
    let rhs = h0 * (big_a * a / eps).exp();
    let lhs = match both_ways(&s0.flat(), x0, step, n_left, n_right, p, eps, &Forcing::Zero, false) {
        Ok(u0) => (0..u0.len()).map(|j| u0.states[j].distance(&u.states[i0 - n_left + j])).fold(0.0, f64::max),
        Err(_) => f64::INFINITY,
    };
    Ok(Verdict { check: "gronwall".into(), params, lhs, rhs, pass: lhs <= rhs })
}

/// Defect `Δ_h u - ε⁻² ∇V(u)` at interior nodes (zero at the ends): the forcing
/// for which the slice solves the discrete perturbed equation exactly. For a
/// time slice of the semi-discrete flow this is `∂t v`.
pub fn slice_forcing(u: &Field, p: &Potential) -> Vec<f64> {
    let (n, k) = (u.grid.n, u.k);
    let inv_h2 = 1.0 / (u.grid.h * u.grid.h);
    let inv_e2 = 1.0 / (u.eps * u.eps);
    let mut f = vec![0.0; n * k];
    let mut g = vec![0.0; k];
    for i in 1..n - 1 {
        p.grad_into(u.node(i), &mut g);
        for c in 0..k {
            let lap = (u.values[(i - 1) * k + c] - 2.0 * u.values[i * k + c] + u.values[(i + 1) * k + c]) * inv_h2;
            f[i * k + c] = lap - inv_e2 * g[c];
        }
    }
    f
}

/// Largest interior residual of `Δ_h u = ε⁻² ∇V(u) + f`, relative to
/// `1 + |ε⁻² ∇V(u)| + |f|` at the node.
pub fn perturbed_residual(u: &Field, f: &[f64], p: &Potential) -> f64 {
    let (n, k) = (u.grid.n, u.k);
    let inv_h2 = 1.0 / (u.grid.h * u.grid.h);
    let inv_e2 = 1.0 / (u.eps * u.eps);
    let mut g = vec![0.0; k];
    let mut worst: f64 = 0.0;
    for i in 1..n - 1 {
        p.grad_into(u.node(i), &mut g);
        for c in 0..k {
            let lap = (u.values[(i - 1) * k + c] - 2.0 * u.values[i * k + c] + u.values[(i + 1) * k + c]) * inv_h2;
            let force = inv_e2 * g[c];
            let fc = f[i * k + c];
            worst = worst.max((lap - force - fc).abs() / (1.0 + force.abs() + fc.abs()));
        }
    }
    worst
}

fn forcing_l2(u: &Field, f: &[f64]) -> f64 {
    let sq: Vec<f64> = f.chunks(u.k).map(|c| c.iter().map(|v| v * v).sum()).collect();
    trapezoid(u.grid.h, &sq).sqrt()
}

/// Checks `max |ξ_ε(u)| <= √2 ε M0 ‖f‖₂ + slack`.
///
/// `slack` is the measured defect of the discrete identity `ξ' = ε f·u_x`
/// (integrated from the left end) plus `|ξ|` at the ends, where the solution is
/// truncated. The sharper bound `√(2 ε M0) ‖f‖₂ + slack` is reported alongside.
pub fn discrepancy_bound_check(u: &Field, f: &[f64], m0: f64, p: &Potential) -> Result<Verdict> {
    let (n, k) = (u.grid.n, u.k);
    if f.len() != n * k {
        return Err(Error::InvalidArgument("forcing length differs from the field".into()));
    }
    let res = perturbed_residual(u, f, p);
    if res > RESIDUAL_TOL {
        return Err(Error::Precondition(format!("field does not solve the perturbed equation (residual {res:e})")));
    }
    let dens = energy_density(u, p);
    let energy = trapezoid(u.grid.h, &dens.energy);
    if energy > m0 {
        return Err(Error::Precondition(format!("energy {energy} exceeds M0 = {m0}")));
    }
    let xi = &dens.discrepancy;
    let eps = u.eps;
    let integrand: Vec<f64> =
        (0..n).map(|i| eps * (0..k).map(|c| f[i * k + c] * u.derivative(i, c)).sum::<f64>()).collect();
    let mut cum = 0.0;
    let mut defect: f64 = 0.0;
    for i in 1..n {
        cum += 0.5 * u.grid.h * (integrand[i - 1] + integrand[i]);
        defect = defect.max((xi[i] - xi[0] - cum).abs());
    }
    let slack = defect + xi[0].abs().max(xi[n - 1].abs());
    let f_l2 = forcing_l2(u, f);
    let lhs = xi.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
    let stated = 2f64.sqrt() * eps * m0 * f_l2;
    let sharp = (2.0 * eps * m0).sqrt() * f_l2;
    Ok(Verdict {
        check: "discrepancy_bound".into(),
        params: json!({ "eps": eps, "M0": m0, "f_l2": f_l2, "energy": energy, "residual": res,
                        "slack": slack, "stated_bound": stated, "sharp_bound": sharp,
                        "sharp_pass": lhs <= sharp + slack }),
        lhs,
        rhs: stated + slack,
        pass: lhs <= stated + slack,
    })
}

/// `C0 = max(2√2 M0/c0, 2√2 M0/√c0 + 1/2)`.
pub fn companion_c0(m0: f64, c0: f64) -> f64 {
    let s = 2.0 * 2f64.sqrt() * m0;
    (s / c0).max(s / c0.sqrt() + 0.5)
}

/// `b = ε/A · ln(1/(C0 ε^{3/2} ‖f‖₂))`, with `‖f‖₂` floored at the smallest
/// positive normal number.
pub fn companion_reach(eps: f64, big_a: f64, c_big0: f64, f_l2: f64) -> f64 {
    let f = f_l2.max(f64::MIN_POSITIVE);
    eps / big_a * -(c_big0.ln() + 1.5 * eps.ln() + f.ln())
}

/// One instance of the closeness estimate on `[x0 - a, x0 + a]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClosenessCheck {
    pub a: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

/// Zero-discrepancy solution matched to a slice at a front point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Companion {
    pub x0: f64,
    pub profile: StationaryProfile,
    pub b: f64,
    pub big_a: f64,
    pub c0: f64,
    pub c_big0: f64,
    pub f_l2: f64,
    /// Profile nodes per slice node.
    pub refine: usize,
    pub closeness: Vec<ClosenessCheck>,
}

impl Companion {
    /// Profile node matching slice node `i`, if it is covered.
    fn node_for(&self, u: &Field, i: usize) -> Option<usize> {
        let i0 = u.grid.nearest(self.x0) as i64;
        let center = (self.profile.grid.n / 2) as i64;
        let j = center + (i as i64 - i0) * self.refine as i64;
        (j >= 0 && (j as usize) < self.profile.grid.n).then_some(j as usize)
    }

    /// `max |U - U⁰|` over slice nodes in `[x0 - a, x0 + a]`, `U = (u, ε u_x)`.
    pub fn state_gap(&self, u: &Field, a: f64) -> f64 {
        self.gap_by(u, a, |du, dw| (du * du + dw * dw).sqrt())
    }

    /// `max (|u - u⁰| + ε|u_x - u⁰_x|)` over slice nodes in `[x0 - a, x0 + a]`.
    pub fn sum_gap(&self, u: &Field, a: f64) -> f64 {
        self.gap_by(u, a, |du, dw| du + dw)
    }

    fn gap_by(&self, u: &Field, a: f64, combine: impl Fn(f64, f64) -> f64) -> f64 {
        let k = u.k;
        let mut worst: f64 = 0.0;
        for i in 0..u.grid.n {
            if (u.grid.x(i) - self.x0).abs() > a * (1.0 + 1e-12) {
                continue;
            }
            let Some(j) = self.node_for(u, i) else { continue };
            let du = euclid(u.node(i), self.profile.u(j));
            let dw: f64 = (0..k)
                .map(|c| (u.eps * u.derivative(i, c) - self.profile.w(j)[c]).powi(2))
                .sum::<f64>()
                .sqrt();
            worst = worst.max(combine(du, dw));
        }
        worst
    }
}

/// Builds `u⁰` with `u⁰(x0) = u(x0)`, `u⁰_x(x0)` the positive multiple of
/// `u_x(x0)` giving `ξ(u⁰) = 0`, and integrates it over `[x0 - w, x0 + w]` with
/// `w = half_width` (default `b`). `x0` is snapped to the nearest slice node.
///
/// Errors: `x0 ∉ 𝓓(u)` or `b <= 0` (precondition), `ε|u_x(x0)| < √c0`
/// (constants).
pub fn zero_discrepancy_companion(
    u: &Field,
    f: &[f64],
    x0: f64,
    m0: f64,
    p: &Potential,
    wc: &WellConstants,
    half_width: Option<f64>,
) -> Result<Companion> {
    let eps = u.eps;
    let i0 = u.grid.nearest(x0);
    let x0 = u.grid.x(i0);
    let here = u.node(i0);
    if p.dist_to_wells(here).0 < wc.mu0 {
        return Err(Error::Precondition(format!("x0 = {x0} is not in the front set")));
    }
    let c0 = off_well_floor(p, wc);
    let c_big0 = companion_c0(m0, c0);
    let big_a = lipschitz_at(p, u.max_abs());
    let f_l2 = forcing_l2(u, f);
    let b = companion_reach(eps, big_a, c_big0, f_l2);
    if !(b > 0.0) {
        return Err(Error::Precondition(format!("companion reach b = {b} is not positive")));
    }
    let grad: Vec<f64> = (0..u.k).map(|c| u.derivative(i0, c)).collect();
    if eps * norm(&grad) < c0.sqrt() {
        return Err(Error::Constants(format!(
            "ε|u_x(x0)| = {} is below √c0 = {}",
            eps * norm(&grad),
            c0.sqrt()
        )));
    }
    let refine = (u.grid.h / (eps / DEFAULT_STEP_FRACTION)).ceil().max(1.0) as usize;
    let step = u.grid.h / refine as f64;
    let reach = half_width.unwrap_or(b);
    let n = refine * (reach / u.grid.h).ceil().max(1.0) as usize;
    let path = zero_discrepancy_path(p, eps, here, &grad, x0, step, n, n)?;
    let profile = StationaryProfile::from_path(&path, eps, p, None)?;
    let mut comp = Companion { x0, profile, b, big_a, c0, c_big0, f_l2, refine, closeness: Vec::new() };
    let limit = reach.min(b);
    comp.closeness = (1..8)
        .map(|j| b * j as f64 / 8.0)
        .filter(|&a| a <= limit)
        .map(|a| {
            let lhs = comp.state_gap(u, a);
            let rhs = (-big_a * (b - a) / eps).exp();
            ClosenessCheck { a, lhs, rhs, pass: lhs <= rhs }
        })
        .collect();
    Ok(comp)
}

/// `C1 (ε^{3/2} ‖f‖₂ + (ε/r) exp(-r/(C1 ε)))`.
pub fn elliptic_bound(c1: f64, eps: f64, f_l2: f64, r: f64) -> f64 {
    c1 * (eps.powf(1.5) * f_l2 + eps / r * (-r / (c1 * eps)).exp())
}

/// Largest `ε e_ε(u)` on `[x0 - r/2, x0 + r/2]`.
pub fn elliptic_offfront_lhs(u: &Field, p: &Potential, x0: f64, r: f64) -> f64 {
    let e = energy_density(u, p).energy;
    (0..u.grid.n)
        .filter(|&i| (u.grid.x(i) - x0).abs() <= 0.5 * r)
        .map(|i| u.eps * e[i])
        .fold(0.0, f64::max)
}

/// One calibration sample for `C1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipticSample {
    pub lhs: f64,
    pub eps: f64,
    pub f_l2: f64,
    pub r: f64,
}

/// Smallest `C1` accepted by every sample, times `safety`.
pub fn calibrate_c1(samples: &[EllipticSample], safety: f64) -> Result<f64> {
    calibrate_monotone(
        |c| samples.iter().all(|s| s.lhs <= elliptic_bound(c, s.eps, s.f_l2, s.r)),
        safety,
        "C1",
    )
}

/// Sample for [`calibrate_c1`]; errors exactly when [`elliptic_offfront_check`] would.
pub fn elliptic_sample(u: &Field, f: &[f64], x0: f64, r: f64, p: &Potential, wc: &WellConstants) -> Result<EllipticSample> {
    elliptic_pre(u, x0, r, p, wc)?;
    Ok(EllipticSample { lhs: elliptic_offfront_lhs(u, p, x0, r), eps: u.eps, f_l2: forcing_l2(u, f), r })
}

fn elliptic_pre(u: &Field, x0: f64, r: f64, p: &Potential, wc: &WellConstants) -> Result<()> {
    if !(r > 0.0) {
        return Err(Error::InvalidArgument(format!("r = {r} must be positive")));
    }
    if x0 - r < u.grid.x_min || x0 + r > u.grid.x_max {
        return Err(Error::Precondition(format!("[{}, {}] leaves the domain", x0 - r, x0 + r)));
    }
    if front_set(u, p, wc).intersects(x0 - r, x0 + r) {
        return Err(Error::Precondition(format!("front set meets [{}, {}]", x0 - r, x0 + r)));
    }
    Ok(())
}

/// Off-front elliptic estimate on `[x0 - r/2, x0 + r/2]` with a calibrated `C1`.
#[allow(clippy::too_many_arguments)]
pub fn elliptic_offfront_check(
    u: &Field,
    f: &[f64],
    x0: f64,
    r: f64,
    m0: f64,
    p: &Potential,
    wc: &WellConstants,
    c1: f64,
) -> Result<Verdict> {
    let s = elliptic_sample(u, f, x0, r, p, wc)?;
    let rhs = elliptic_bound(c1, s.eps, s.f_l2, r);
    Ok(Verdict {
        check: "elliptic_offfront".into(),
        params: json!({ "x0": x0, "r": r, "M0": m0, "C1": c1, "f_l2": s.f_l2 }),
        lhs: s.lhs,
        rhs,
        pass: s.lhs <= rhs,
    })
}

/// One structure profile `U_j` with its diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureProfile {
    pub a: f64,
    pub companion: Companion,
    pub omega_minus: Option<Vec<f64>>,
    pub omega_plus: Option<Vec<f64>>,
    /// `sup (|v - U_j| + ε|∂x(v - U_j)|)` on `[a - r, a + r]`.
    pub residual: f64,
    pub max_discrepancy: f64,
}

/// Off-front closeness on one component of the complement of the balls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OffFrontPiece {
    pub lo: f64,
    pub hi: f64,
    pub well: usize,
    /// `sup (|v - σ| + ε|∂x v|)` on the piece.
    pub residual: f64,
}

/// Structure of a relaxed time slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureReport {
    /// Snapshot index and time of the slice; `None` when no snapshot qualifies.
    pub t_index: Option<usize>,
    pub t: Option<f64>,
    pub big_r: f64,
    pub k2: Option<f64>,
    pub m0: f64,
    pub eps: f64,
    /// `ln` of the dissipation-slice threshold `K0² M0 R⁻² exp(-R/(K0 ε))`.
    pub ln_dissipation_threshold: f64,
    pub dissipation_at_t: Option<f64>,
    pub r: f64,
    /// `ln` of `2^{-4M0/η0} R/K2` and `R/K2`.
    pub ln_r_bracket: Option<(f64, f64)>,
    pub covering: Option<Covering>,
    pub points: Vec<f64>,
    pub profiles: Vec<StructureProfile>,
    pub off_front: Vec<OffFrontPiece>,
    pub item6_residual: f64,
    pub item7_residual: f64,
    /// Companion reach `b` at the slice and whether `2r <= b`.
    pub b: Option<f64>,
    pub b_covers_2r: Option<bool>,
    pub verdicts: Vec<Verdict>,
}

impl StructureReport {
    pub fn all_pass(&self) -> bool {
        self.t_index.is_some() && self.verdicts.iter().all(|v| v.pass)
    }

    pub fn verdict(&self, check: &str) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.check == check)
    }
}

/// `ε ∫ |∂t v|²` at snapshot `ti`.
pub fn dissipation_slice(tr: &Trajectory, ti: usize) -> f64 {
    let r = &tr.rates[ti];
    let sq: Vec<f64> = (0..r.grid.n).map(|i| r.node(i).iter().map(|v| v * v).sum()).collect();
    tr.eps * trapezoid(r.grid.h, &sq)
}

/// Picks the first snapshot meeting the dissipation-slice threshold (and within
/// the literal horizon) and analyses it with [`extract_structure_at`].
pub fn extract_structure(
    tr: &Trajectory,
    big_r: f64,
    p: &Potential,
    wc: &WellConstants,
    c: &Constants,
) -> Result<StructureReport> {
    let eps = tr.eps;
    let ln_thr = ln_dissipation_threshold(big_r, eps, c);
    let ln_h = c.ln_horizon(big_r, eps);
    let pick = (0..tr.len()).find(|&i| {
        let t = tr.times[i] - tr.times[0];
        dissipation_slice(tr, i).ln() <= ln_thr && (t <= 0.0 || t.ln() <= ln_h)
    });
    match pick {
        Some(ti) => extract_structure_at(tr, ti, big_r, p, wc, c),
        None => Ok(StructureReport {
            t_index: None,
            t: None,
            big_r,
            k2: c.k2,
            m0: c.m0,
            eps,
            ln_dissipation_threshold: ln_thr,
            dissipation_at_t: None,
            r: f64::NAN,
            ln_r_bracket: None,
            covering: None,
            points: Vec::new(),
            profiles: Vec::new(),
            off_front: Vec::new(),
            item6_residual: f64::NAN,
            item7_residual: f64::NAN,
            b: None,
            b_covers_2r: None,
            verdicts: Vec::new(),
        }),
    }
}

/// `ln(K0² M0 R⁻² exp(-R/(K0 ε)))`.
pub fn ln_dissipation_threshold(big_r: f64, eps: f64, c: &Constants) -> f64 {
    2.0 * c.ln_k0 + c.m0.ln() - 2.0 * big_r.ln() - big_r / eps * (-c.ln_k0).exp()
}

/// Structure of snapshot `ti`.
///
/// The covering uses `κ = 1/4`, one candidate center per front-set component at
/// its `argmax dist(u, Σ)` node, and the smallest admissible scale in
/// `[δ, R/K2]` with `δ = 2^{-4M0/η0} R/K2`; without `K2` the scale is capped by
/// separation only and the `K2`-dependent items are reported as failing.
pub fn extract_structure_at(
    tr: &Trajectory,
    ti: usize,
    big_r: f64,
    p: &Potential,
    wc: &WellConstants,
    c: &Constants,
) -> Result<StructureReport> {
    let u = &tr.snapshots[ti];
    let eps = tr.eps;
    let m0 = c.m0;
    let fs = front_set(u, p, wc);
    let fs0 = front_set(&tr.snapshots[0], p, wc);
    let f = slice_forcing(u, p);

    let ln_r_bracket = c.k2.map(|k2| {
        let ln_hi = big_r.ln() - k2.ln();
        (ln_hi - 4.0 * m0 / wc.eta0 * 2f64.ln(), ln_hi)
    });
    let (delta, rho_max) = match ln_r_bracket {
        Some((lo, hi)) => (lo.exp(), hi.exp()),
        None => (0.0, f64::INFINITY),
    };
    let anchors = component_anchors(u, p, &fs);
    let covering = if fs.is_empty() {
        Some(Covering { points: Vec::new(), rho: rho_max.min(big_r), kappa: STRUCTURE_KAPPA })
    } else {
        finest_covering(&Target::Intervals(&fs.intervals), &anchors, delta, STRUCTURE_KAPPA, rho_max)?
    };
    let Some(covering) = covering else {
        return Err(Error::Constants("no κ = 1/4 covering of the front set within the scale bracket".into()));
    };
    let r = covering.rho;

    let mut profiles = Vec::new();
    for &a in &covering.points {
        let comp = zero_discrepancy_companion(u, &f, a, m0, p, wc, Some(r))?;
        let (omega_minus, omega_plus) = comp.profile.tail_directions(p);
        let residual = comp.sum_gap(u, r);
        let max_discrepancy = comp.profile.discrepancy_max;
        profiles.push(StructureProfile { a, companion: comp, omega_minus, omega_plus, residual, max_discrepancy });
    }
    let off_front = off_front_pieces(u, p, &covering.points, r);
    let item6 = profiles.iter().map(|s| s.residual).fold(0.0, f64::max);
    let item7 = off_front.iter().map(|s| s.residual).fold(0.0, f64::max);

    let f_l2 = forcing_l2(u, &f);
    let b = companion_reach(eps, lipschitz_at(p, u.max_abs()), companion_c0(m0, off_well_floor(p, wc)), f_l2);

    let mut verdicts = Vec::new();
    let count = covering.points.len() as f64;
    verdicts.push(item("item1_count", json!({}), count, m0 / wc.eta0, count <= m0 / wc.eta0));
    let worst_in = covering.points.iter().map(|&a| fs.dist(a)).fold(0.0, f64::max);
    verdicts.push(item("item2_in_front_set", json!({}), worst_in, 0.0, worst_in == 0.0));
    let worst_near = covering.points.iter().map(|&a| fs0.dist(a)).fold(0.0, f64::max);
    verdicts.push(item("item3_near_initial", json!({}), worst_near, big_r, worst_near <= big_r));
    let min_gap = covering.points.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    verdicts.push(item("item4_separation", json!({}), min_gap, 4.0 * r, min_gap > 4.0 * r));
    let xi = profiles.iter().map(|s| s.max_discrepancy).fold(0.0, f64::max);
    verdicts.push(item("item5_zero_discrepancy", json!({}), xi, ZERO_DISCREPANCY_TOL, xi <= ZERO_DISCREPANCY_TOL));
    let k2_bound = c.k2.map(|k2| k2 * (-r / (k2 * eps)).exp());
    let bound = k2_bound.unwrap_or(f64::NAN);
    verdicts.push(item("item6_profile_closeness", json!({ "K2": c.k2 }), item6, bound, item6 <= bound));
    verdicts.push(item("item7_offfront_closeness", json!({ "K2": c.k2 }), item7, bound, item7 <= bound));
    let (in_bracket, lo, hi) = match ln_r_bracket {
        Some((lo, hi)) => (r.ln() >= lo && r.ln() <= hi * (1.0 + 1e-12) + 1e-12, lo, hi),
        None => (false, f64::NAN, f64::NAN),
    };
    verdicts.push(item("r_bracket", json!({ "ln_lower": lo, "ln_upper": hi }), r, hi.exp(), in_bracket));

    Ok(StructureReport {
        t_index: Some(ti),
        t: Some(tr.times[ti]),
        big_r,
        k2: c.k2,
        m0,
        eps,
        ln_dissipation_threshold: ln_dissipation_threshold(big_r, eps, c),
        dissipation_at_t: Some(dissipation_slice(tr, ti)),
        r,
        ln_r_bracket,
        points: covering.points.clone(),
        covering: Some(covering),
        profiles,
        off_front,
        item6_residual: item6,
        item7_residual: item7,
        b: Some(b),
        b_covers_2r: Some(2.0 * r <= b),
        verdicts,
    })
}

fn item(check: &str, params: serde_json::Value, lhs: f64, rhs: f64, pass: bool) -> Verdict {
    Verdict { check: check.into(), params, lhs, rhs, pass }
}

/// Node of largest `dist(u, Σ)` inside each front-set component.
fn component_anchors(u: &Field, p: &Potential, fs: &FrontSet) -> Vec<f64> {
    fs.intervals
        .iter()
        .filter_map(|&(lo, hi)| {
            (0..u.grid.n)
                .filter(|&i| u.grid.x(i) >= lo && u.grid.x(i) <= hi)
                .map(|i| (p.dist_to_wells(u.node(i)).0, i))
                .fold(None, |b: Option<(f64, usize)>, c| match b {
                    Some(b) if b.0 >= c.0 => Some(b),
                    _ => Some(c),
                })
                .map(|(_, i)| u.grid.x(i))
        })
        .collect()
}

/// Maximal runs of nodes outside every `[a_j - r, a_j + r]`, each matched to
/// the well minimising `sup (|v - σ| + ε|v_x|)`.
fn off_front_pieces(u: &Field, p: &Potential, points: &[f64], r: f64) -> Vec<OffFrontPiece> {
    let n = u.grid.n;
    let outside = |i: usize| points.iter().all(|&a| (u.grid.x(i) - a).abs() > r);
    let mut pieces = Vec::new();
    let mut i = 0;
    while i < n {
        if !outside(i) {
            i += 1;
            continue;
        }
        let start = i;
        while i < n && outside(i) {
            i += 1;
        }
        let nodes = start..i;
        let slope = |j: usize| u.eps * (0..u.k).map(|c| u.derivative(j, c).powi(2)).sum::<f64>().sqrt();
        let (residual, well) = p
            .minimizers()
            .iter()
            .enumerate()
            .map(|(w, s)| (nodes.clone().map(|j| euclid(u.node(j), s) + slope(j)).fold(0.0, f64::max), w))
            .fold((f64::INFINITY, 0), |b, c| if c.0 < b.0 { c } else { b });
        pieces.push(OffFrontPiece { lo: u.grid.x(start), hi: u.grid.x(i - 1), well, residual });
    }
    pieces
}

/// One calibration sample for `K2`: a residual that must stay below `K2 exp(-r/(K2 ε))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StructureSample {
    pub residual: f64,
    pub r: f64,
    pub eps: f64,
}

/// Item 6 and item 7 samples of a report.
pub fn structure_samples(rep: &StructureReport) -> Vec<StructureSample> {
    [rep.item6_residual, rep.item7_residual]
        .into_iter()
        .filter(|v| v.is_finite())
        .map(|residual| StructureSample { residual, r: rep.r, eps: rep.eps })
        .collect()
}

/// Smallest `K2` with `residual <= K2 exp(-r/(K2 ε))` for every sample, times `safety`.
pub fn calibrate_k2(samples: &[StructureSample], safety: f64) -> Result<f64> {
    calibrate_monotone(
        |k| samples.iter().all(|s| s.residual <= k * (-s.r / (k * s.eps)).exp()),
        safety,
        "K2",
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::make_constants;
    use crate::evolve::{simulate, Boundary, Integrator};
    use crate::potential::{make_quartic, make_triple_well, well_constants, TripleWellParams};

    fn kink(x: f64, eps: f64) -> f64 {
        (x / (2f64.sqrt() * eps)).tanh()
    }

    #[test]
    fn wells_are_equilibria() {
        let p = make_quartic();
        let s0 = ODEState::new(vec![1.0], vec![0.0]).unwrap();
        let path = integrate_ode(&s0, (0.0, 1.0), &p, 0.1, &Forcing::Zero, 1.0).unwrap();
        assert!(path.states.iter().all(|s| s.u[0] == 1.0 && s.w[0] == 0.0));
    }

    #[test]
    fn kink_from_center_and_constant_discrepancy() {
        let p = make_quartic();
        let eps = 0.05;
        let s0 = ODEState::new(vec![0.0], vec![1.0 / 2f64.sqrt()]).unwrap();
        let path = integrate_ode_both(&s0, 0.0, eps / 400.0, 4000, 4000, &p, eps, &Forcing::Zero).unwrap();
        let err = path.xs.iter().zip(&path.states).map(|(&x, s)| (s.u[0] - kink(x, eps)).abs()).fold(0.0, f64::max);
        assert!(err < 1e-6, "sup error {err:e}");

        let s1 = ODEState::new(vec![0.3], vec![-0.2]).unwrap();
        let path = integrate_ode(&s1, (0.0, 2.0 * eps), &p, eps, &Forcing::Zero, eps / 200.0).unwrap();
        let xi = path.discrepancy(&p, eps);
        let scale = path.states.iter().map(|s| (0.5 * s.w[0] * s.w[0] + p.eval(&s.u)) / eps).fold(0.0, f64::max);
        let drift = xi.iter().map(|v| (v - xi[0]).abs()).fold(0.0, f64::max);
        assert!(drift <= 1e-8 * scale, "drift {drift:e}");
    }

    #[test]
    fn step_cap_and_divergence() {
        let p = make_quartic();
        let s0 = ODEState::new(vec![0.0], vec![1.0]).unwrap();
        let path = integrate_ode(&s0, (0.0, 0.1), &p, 0.1, &Forcing::Zero, 1.0).unwrap();
        assert!(path.xs[1] - path.xs[0] <= 0.1 / MAX_STEP_FRACTION + 1e-15);
        let fast = ODEState::new(vec![0.0], vec![3.0]).unwrap();
        let err = integrate_ode(&fast, (0.0, 10.0), &p, 0.1, &Forcing::Zero, 1.0).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }));
    }

    #[test]
    fn quartic_heteroclinic() {
        let p = make_quartic();
        let prof = shoot_heteroclinic(&p, 1.0, 0, 1, None).unwrap();
        let err = (0..prof.grid.n).map(|i| (prof.u(i)[0] - kink(prof.grid.x(i), 1.0)).abs()).fold(0.0, f64::max);
        assert!(err < 1e-6, "sup error {err:e}");
        let e = prof.energy(&p);
        assert!((e - 2.0 * 2f64.sqrt() / 3.0).abs() < 1e-6, "energy {e}");
        let (kin, pot) = prof.energy_parts(&p);
        assert!((kin - pot).abs() <= 1e-6 * kin);
        assert!(prof.ode_residual(&p) <= 1e-8);
        assert!(prof.discrepancy_max <= 1e-8);
        let (m, pl) = prof.tail_directions(&p);
        assert_eq!(m.unwrap(), vec![1.0]);
        assert_eq!(pl.unwrap(), vec![-1.0]);
        assert_eq!(prof.endpoints_wells, Some((0, 1)));
    }

    #[test]
    fn triple_well_and_vector_heteroclinics() {
        let p = make_triple_well(TripleWellParams::default()).unwrap();
        let prof = shoot_heteroclinic(&p, 1.0, 1, 2, None).unwrap();
        assert!(prof.discrepancy_max <= 1e-8);
        assert!(prof.u(0)[0].abs() < 1e-8 && (prof.u(prof.grid.n - 1)[0] - 1.0).abs() < 1e-8);

        let q = make_triple_well(TripleWellParams::Vector { c: 1.0 }).unwrap();
        let prof = shoot_heteroclinic(&q, 0.5, 0, 1, None).unwrap();
        let err = (0..prof.grid.n)
            .map(|i| (prof.u(i)[0] - kink(prof.grid.x(i), 0.5)).abs() + prof.u(i)[1].abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-6, "vector sup error {err:e}");
    }

    #[test]
    fn gronwall_examples() {
        let p = make_quartic();
        let eps = 0.1;
        let s0 = ODEState::new(vec![0.0], vec![1.0 / 2f64.sqrt()]).unwrap();
        let step = eps / 200.0;
        let u = integrate_ode_both(&s0, 0.0, step, 200, 200, &p, eps, &Forcing::Zero).unwrap();
        let v = gronwall_compare(&u, &s0, 0.0, eps, eps, &p, &Forcing::Zero).unwrap();
        assert!(v.pass && v.lhs == 0.0, "{v:?}");

        let bump = |x: f64, out: &mut [f64]| out[0] = 1e-8 * (-(x / eps).powi(2)).exp() / (eps * (std::f64::consts::PI / 2.0).sqrt()).sqrt();
        let f = Forcing::Func(&bump);
        let u = integrate_ode_both(&s0, 0.0, step, 800, 800, &p, eps, &f).unwrap();
        let v = gronwall_compare(&u, &s0, 0.0, eps, eps, &p, &f).unwrap();
        assert!(v.pass, "{v:?}");
        assert!((v.params["f_l2"].as_f64().unwrap() - 1e-8).abs() < 1e-11);

        // Saturated hypothesis: rhs equals one.
        let a = 0.5 * eps;
        let u = integrate_ode_both(&s0, 0.0, step, 200, 200, &p, eps, &Forcing::Zero).unwrap();
        let big_a = p.lipschitz_bound(u.sup_abs_u() + 1.0);
        let gap = (-big_a * a / eps).exp();
        let shifted = ODEState::new(vec![gap], vec![1.0 / 2f64.sqrt()]).unwrap();
        let v = gronwall_compare(&u, &shifted, 0.0, a, eps, &p, &Forcing::Zero).unwrap();
        assert!(v.pass && (v.rhs - 1.0).abs() < 1e-12, "{v:?}");

        let far = ODEState::new(vec![0.5], vec![0.0]).unwrap();
        let v = gronwall_compare(&u, &far, 0.0, a, eps, &p, &Forcing::Zero).unwrap();
        assert_eq!(v.check, "gronwall_precondition");
        assert!(!v.pass);
    }

    fn kink_field(eps: f64, h: f64, half: f64) -> Field {
        let g = Grid1D::with_spacing(-half, half, h).unwrap();
        Field::from_fn(g, eps, 1, |x, o| o[0] = kink(x, eps)).unwrap()
    }

    #[test]
    fn discrepancy_bound_on_forced_slices() {
        let p = make_quartic();
        let eps = 0.1;
        let u = kink_field(eps, eps / 16.0, 3.0);
        let f = slice_forcing(&u, &p);
        assert!(perturbed_residual(&u, &f, &p) <= RESIDUAL_TOL);
        let v = discrepancy_bound_check(&u, &f, 1.0, &p).unwrap();
        assert!(v.pass, "{v:?}");

        // Wrong forcing is rejected as not a solution.
        let zero = vec![0.0; f.len()];
        let g = Grid1D::with_spacing(-3.0, 3.0, eps / 16.0).unwrap();
        let w = Field::from_fn(g, eps, 1, |x, o| o[0] = kink(x, 1.3 * eps)).unwrap();
        assert!(matches!(discrepancy_bound_check(&w, &zero, 1.0, &p), Err(Error::Precondition(_))));
    }

    #[test]
    fn companion_of_exact_kink() {
        let p = make_quartic();
        let wc = well_constants(&p).unwrap();
        let eps = 0.05;
        let u = kink_field(eps, eps / 32.0, 1.5);
        let f = slice_forcing(&u, &p);
        let comp = zero_discrepancy_companion(&u, &f, 0.0, 1.0, &p, &wc, Some(10.0 * eps)).unwrap();
        assert!(comp.profile.discrepancy_max <= 1e-8);
        let gap = comp.sum_gap(&u, 10.0 * eps);
        assert!(gap < 1e-3, "gap {gap:e}");
        assert!(comp.b > 0.0);

        let err = zero_discrepancy_companion(&u, &f, 1.0, 1.0, &p, &wc, None).unwrap_err();
        assert!(matches!(err, Error::Precondition(_)));
    }

    #[test]
    fn elliptic_examples() {
        let p = make_quartic();
        let wc = well_constants(&p).unwrap();
        let eps = 0.05;
        let g = Grid1D::with_spacing(-1.0, 1.0, eps / 8.0).unwrap();
        let u = Field::constant(g, eps, &[1.0]).unwrap();
        let f = slice_forcing(&u, &p);
        let v = elliptic_offfront_check(&u, &f, 0.0, 0.5, 1.0, &p, &wc, 1.0).unwrap();
        assert!(v.pass && v.lhs == 0.0);

        let k = kink_field(eps, eps / 8.0, 1.5);
        let f = slice_forcing(&k, &p);
        assert!(matches!(elliptic_offfront_check(&k, &f, 0.0, 0.5, 1.0, &p, &wc, 1.0), Err(Error::Precondition(_))));
        let s = elliptic_sample(&k, &f, 0.9, 0.5, &p, &wc).unwrap();
        let c1 = calibrate_c1(&[s], 1.0).unwrap();
        assert!(s.lhs <= elliptic_bound(c1, s.eps, s.f_l2, s.r));
        assert!(s.lhs > elliptic_bound(0.99 * c1, s.eps, s.f_l2, s.r));
    }

    #[test]
    fn structure_of_single_kink() {
        let p = make_quartic();
        let wc = well_constants(&p).unwrap();
        let eps = 0.05;
        let u0 = kink_field(eps, eps / 32.0, 1.5);
        let it = Integrator::at_limit(&u0.grid, eps, &wc, Boundary::ClampedToMinimizer);
        let tr = simulate(&u0, &p, &it, 10.0 * it.dt, &[crate::evolve::Probe::Snapshots { every: 5.0 * it.dt }]).unwrap();
        let m0 = tr.initial_energy();
        let mut c = make_constants(m0, &wc).unwrap();
        let big_r = c.alpha0 * eps;

        let raw = extract_structure(&tr, big_r, &p, &wc, &c).unwrap();
        assert_eq!(raw.t_index, Some(0));
        assert_eq!(raw.points.len(), 1);
        assert!(raw.verdict("item6_profile_closeness").map(|v| !v.pass).unwrap());

        c.k2 = Some(calibrate_k2(&structure_samples(&raw), 2.0).unwrap());
        let rep = extract_structure(&tr, big_r, &p, &wc, &c).unwrap();
        assert!(rep.all_pass(), "{:#?}", rep.verdicts);
        assert!(rep.item6_residual < 1e-3 && rep.item7_residual < 1e-3);
        assert!(rep.profiles[0].a.abs() < 1e-12);
        assert_eq!(rep.profiles[0].omega_plus.as_deref(), Some(&[-1.0][..]));
    }

    #[test]
    fn structure_without_fronts() {
        let p = make_quartic();
        let wc = well_constants(&p).unwrap();
        let eps = 0.05;
        let g = Grid1D::with_spacing(-1.0, 1.0, eps / 8.0).unwrap();
        let u0 = Field::constant(g, eps, &[-1.0]).unwrap();
        let it = Integrator::at_limit(&u0.grid, eps, &wc, Boundary::ZeroNeumann);
        let tr = simulate(&u0, &p, &it, 4.0 * it.dt, &[crate::evolve::Probe::Snapshots { every: 2.0 * it.dt }]).unwrap();
        let mut c = make_constants(1.0, &wc).unwrap();
        c.k2 = Some(1.0);
        let rep = extract_structure(&tr, c.alpha0 * eps, &p, &wc, &c).unwrap();
        assert!(rep.profiles.is_empty());
        assert_eq!(rep.off_front.len(), 1);
        assert_eq!(rep.off_front[0].well, 0);
        assert_eq!(rep.item7_residual, 0.0);
    }

    #[test]
    fn k2_calibration_is_minimal() {
        let s = [StructureSample { residual: 1e-4, r: 0.4, eps: 0.05 }];
        let k = calibrate_k2(&s, 1.0).unwrap();
        assert!(1e-4 <= k * (-0.4 / (k * 0.05)).exp());
        assert!(1e-4 > 0.99 * k * (-0.4 / (0.99 * k * 0.05)).exp());
    }
}
