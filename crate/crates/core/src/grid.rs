//! Uniform grids, discretized fields, energy and discrepancy densities,
//! trapezoidal quadrature and smooth test functions.

use crate::error::{Error, Result};
use crate::potential::Potential;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

/// Uniform grid on `[x_min, x_max]` with `n` nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    pub x_min: f64,
    pub x_max: f64,
    pub n: usize,
    pub h: f64,
}

impl Grid1D {
    pub fn new(x_min: f64, x_max: f64, n: usize) -> Result<Grid1D> {
        if n < 3 {
            return Err(Error::InvalidArgument(format!("grid needs at least 3 nodes, got {n}")));
        }
        if !(x_max > x_min) || !x_min.is_finite() || !x_max.is_finite() {
            return Err(Error::InvalidArgument(format!("bad domain [{x_min}, {x_max}]")));
        }
        Ok(Grid1D { x_min, x_max, n, h: (x_max - x_min) / (n - 1) as f64 })
    }

    /// Grid whose spacing is the largest uniform spacing not exceeding `h_target`.
    pub fn with_spacing(x_min: f64, x_max: f64, h_target: f64) -> Result<Grid1D> {
        if !(h_target > 0.0) {
            return Err(Error::InvalidArgument(format!("spacing must be positive, got {h_target}")));
        }
        let cells = ((x_max - x_min) / h_target - 1e-9).ceil().max(2.0) as usize;
        Grid1D::new(x_min, x_max, cells + 1)
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        self.x_min + self.h * i as f64
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.x(i)).collect()
    }

    pub fn length(&self) -> f64 {
        self.x_max - self.x_min
    }

    /// Index of the node nearest to `x` (clamped to the grid).
    pub fn nearest(&self, x: f64) -> usize {
        (((x - self.x_min) / self.h).round().max(0.0) as usize).min(self.n - 1)
    }
}

/// A map `u: grid -> R^k` at one time, stored node-major (`values[i*k + c]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Field {
    pub grid: Grid1D,
    pub eps: f64,
    pub k: usize,
    pub values: Vec<f64>,
    pub time: f64,
}

impl Field {
    pub fn new(grid: Grid1D, eps: f64, k: usize, values: Vec<f64>, time: f64) -> Result<Field> {
        if !(eps > 0.0) {
            return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
        }
        if k == 0 || values.len() != grid.n * k {
            return Err(Error::InvalidArgument(format!(
                "expected {} values for {} nodes and k = {k}, got {}",
                grid.n * k,
                grid.n,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite value at index {i}")));
        }
        Ok(Field { grid, eps, k, values, time })
    }

    /// Samples `f(x, out)` at every node.
    pub fn from_fn(grid: Grid1D, eps: f64, k: usize, f: impl Fn(f64, &mut [f64])) -> Result<Field> {
        let mut values = vec![0.0; grid.n * k];
        for i in 0..grid.n {
            f(grid.x(i), &mut values[i * k..(i + 1) * k]);
        }
        Field::new(grid, eps, k, values, 0.0)
    }

    /// Constant field equal to `y` everywhere.
    pub fn constant(grid: Grid1D, eps: f64, y: &[f64]) -> Result<Field> {
        Field::from_fn(grid, eps, y.len(), |_, out| out.copy_from_slice(y))
    }

    #[inline]
    pub fn node(&self, i: usize) -> &[f64] {
        &self.values[i * self.k..(i + 1) * self.k]
    }

    pub fn max_abs(&self) -> f64 {
        (0..self.grid.n)
            .map(|i| self.node(i).iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// `du/dx` of component `c` at node `i`: central differences inside,
    /// second-order one-sided differences at the endpoints.
    #[inline]
    pub fn derivative(&self, i: usize, c: usize) -> f64 {
        derivative(&self.values, self.k, self.grid.n, self.grid.h, i, c)
    }

    /// Squared norm of `du/dx` at node `i`.
    pub fn grad_sq(&self, i: usize) -> f64 {
        (0..self.k).map(|c| self.derivative(i, c).powi(2)).sum()
    }
}

#[inline]
pub(crate) fn derivative(v: &[f64], k: usize, n: usize, h: f64, i: usize, c: usize) -> f64 {
    if i == 0 {
        (-3.0 * v[c] + 4.0 * v[k + c] - v[2 * k + c]) / (2.0 * h)
    } else if i == n - 1 {
        (3.0 * v[i * k + c] - 4.0 * v[(i - 1) * k + c] + v[(i - 2) * k + c]) / (2.0 * h)
    } else {
        (v[(i + 1) * k + c] - v[(i - 1) * k + c]) / (2.0 * h)
    }
}

/// Pointwise energy density `e` and discrepancy `ξ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityProfile {
    pub grid: Grid1D,
    pub energy: Vec<f64>,
    pub discrepancy: Vec<f64>,
}

/// `e = (ε/2)|u_x|^2 + V(u)/ε` and `ξ = (ε/2)|u_x|^2 - V(u)/ε` at every node.
pub fn energy_density(u: &Field, p: &Potential) -> DensityProfile {
    let n = u.grid.n;
    let mut energy = Vec::with_capacity(n);
    let mut discrepancy = Vec::with_capacity(n);
    for i in 0..n {
        let kin = 0.5 * u.eps * u.grad_sq(i);
        let pot = p.eval(u.node(i)) / u.eps;
        energy.push(kin + pot);
        discrepancy.push(kin - pot);
    }
    DensityProfile { grid: u.grid, energy, discrepancy }
}

/// Writes `e` and `ξ` for node-major values into caller-provided buffers.
pub(crate) fn densities_into(
    v: &[f64],
    k: usize,
    grid: &Grid1D,
    eps: f64,
    p: &Potential,
    e: &mut [f64],
    xi: &mut [f64],
) {
    let n = grid.n;
    let half_eps = 0.5 * eps;
    let inv_eps = 1.0 / eps;
    let c2 = 1.0 / (4.0 * grid.h * grid.h);
    let mut put = |i: usize, g2: f64| {
        let kin = half_eps * g2;
        let pot = p.eval(&v[i * k..(i + 1) * k]) * inv_eps;
        e[i] = kin + pot;
        xi[i] = kin - pot;
    };
    for i in [0, n - 1] {
        let g2 = (0..k).map(|c| derivative(v, k, n, grid.h, i, c).powi(2)).sum();
        put(i, g2);
    }
    if k == 1 {
        for i in 1..n - 1 {
            let d = v[i + 1] - v[i - 1];
            put(i, d * d * c2);
        }
    } else {
        for i in 1..n - 1 {
            let g2: f64 = (0..k).map(|c| (v[(i + 1) * k + c] - v[(i - 1) * k + c]).powi(2)).sum();
            put(i, g2 * c2);
        }
    }
}

/// Sign changes of component `c`, located by linear interpolation between nodes.
pub fn zero_crossings(u: &Field, c: usize) -> Vec<f64> {
    level_crossings(u, c, 0.0)
}

/// Crossings of `u_c = level`, located by linear interpolation between nodes.
pub fn level_crossings(u: &Field, c: usize, level: f64) -> Vec<f64> {
    let mut out = Vec::new();
    for i in 0..u.grid.n - 1 {
        let a = u.node(i)[c] - level;
        let b = u.node(i + 1)[c] - level;
        if a == 0.0 && (i == 0 || u.node(i - 1)[c] != level) {
            out.push(u.grid.x(i));
        } else if a * b < 0.0 {
            out.push(u.grid.x(i) + u.grid.h * a / (a - b));
        }
    }
    out
}

/// Trapezoidal rule on a uniform grid.
pub fn trapezoid(h: f64, f: &[f64]) -> f64 {
    match f.len() {
        0 | 1 => 0.0,
        n => h * (f.iter().sum::<f64>() - 0.5 * (f[0] + f[n - 1])),
    }
}

/// Integral over `[a, b]` of the piecewise-linear interpolant of nodal values.
pub fn integrate_range(grid: &Grid1D, f: &[f64], a: f64, b: f64) -> f64 {
    let a = a.max(grid.x_min);
    let b = b.min(grid.x_max);
    if !(b > a) {
        return 0.0;
    }
    let interp = |x: f64| -> (usize, f64) {
        let s = ((x - grid.x_min) / grid.h).clamp(0.0, (grid.n - 1) as f64);
        let i = (s.floor() as usize).min(grid.n - 2);
        (i, s - i as f64)
    };
    let value = |i: usize, t: f64| f[i] * (1.0 - t) + f[i + 1] * t;
    let (ia, ta) = interp(a);
    let (ib, tb) = interp(b);
    if ia == ib {
        return 0.5 * (value(ia, ta) + value(ib, tb)) * (b - a);
    }
    let mut total = 0.5 * (value(ia, ta) + f[ia + 1]) * (1.0 - ta) * grid.h;
    for j in ia + 1..ib {
        total += 0.5 * (f[j] + f[j + 1]) * grid.h;
    }
    total += 0.5 * (f[ib] + value(ib, tb)) * tb * grid.h;
    total
}

/// Total energy by the trapezoidal rule.
pub fn total_energy(u: &Field, p: &Potential) -> f64 {
    trapezoid(u.grid.h, &energy_density(u, p).energy)
}

/// `∫ χ e` by the trapezoidal rule.
pub fn localized_energy(u: &Field, p: &Potential, chi: &TestFunction) -> f64 {
    let dens = energy_density(u, p);
    let weighted: Vec<f64> = (0..u.grid.n).map(|i| chi.eval(u.grid.x(i)) * dens.energy[i]).collect();
    trapezoid(u.grid.h, &weighted)
}

/// Smooth compactly supported weights with analytic first and second derivatives.
///
/// Transitions use a C² piecewise-cubic ramp built from the quadratic B-spline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestFunction {
    Zero,
    /// Constant on the whole line.
    Constant { value: f64 },
    /// Equal to 1 on `|x - center| <= inner`, 0 on `|x - center| >= outer`.
    Plateau { center: f64, inner: f64, outer: f64 },
    /// `(x - center)` times a plateau equal to 1 on `|x - center| <= rho`
    /// and vanishing beyond `2 rho`. Satisfies `|χ| <= 2ρ` and `|χ''| <= 24/ρ`.
    AffineCore { center: f64, rho: f64 },
}

/// Ramp `s(t)` from 0 to 1 on `[0, 1]` with `s', s''` vanishing at both ends.
fn ramp(t: f64) -> (f64, f64, f64) {
    let u = 3.0 * t.clamp(0.0, 1.0);
    let (s, n, dn) = if u <= 1.0 {
        (u * u * u / 6.0, 0.5 * u * u, u)
    } else if u <= 2.0 {
        (0.5 - u * u * u / 3.0 + 1.5 * u * u - 1.5 * u, 0.5 * (-2.0 * u * u + 6.0 * u - 3.0), -2.0 * u + 3.0)
    } else {
        let w = 3.0 - u;
        (1.0 - w * w * w / 6.0, 0.5 * w * w, -w)
    };
    (s, 3.0 * n, 9.0 * dn)
}

fn plateau(x: f64, center: f64, inner: f64, outer: f64) -> (f64, f64, f64) {
    let d = (x - center).abs();
    if d <= inner {
        return (1.0, 0.0, 0.0);
    }
    if d >= outer {
        return (0.0, 0.0, 0.0);
    }
    let w = outer - inner;
    let (s, ds, dds) = ramp((d - inner) / w);
    let sign = if x >= center { 1.0 } else { -1.0 };
    (1.0 - s, -sign * ds / w, -dds / (w * w))
}

impl TestFunction {
    pub fn plateau(center: f64, inner: f64, outer: f64) -> Result<TestFunction> {
        if !(outer > inner && inner >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "plateau needs 0 <= inner < outer, got inner = {inner}, outer = {outer}"
            )));
        }
        Ok(TestFunction::Plateau { center, inner, outer })
    }

    pub fn affine_core(center: f64, rho: f64) -> Result<TestFunction> {
        if !(rho > 0.0) {
            return Err(Error::InvalidArgument(format!("rho must be positive, got {rho}")));
        }
        Ok(TestFunction::AffineCore { center, rho })
    }

    /// `(χ, χ', χ'')` at `x`.
    pub fn all(&self, x: f64) -> (f64, f64, f64) {
        match *self {
            TestFunction::Zero => (0.0, 0.0, 0.0),
            TestFunction::Constant { value } => (value, 0.0, 0.0),
            TestFunction::Plateau { center, inner, outer } => plateau(x, center, inner, outer),
            TestFunction::AffineCore { center, rho } => {
                let (p, dp, ddp) = plateau(x, center, rho, 2.0 * rho);
                let y = x - center;
                (y * p, p + y * dp, 2.0 * dp + y * ddp)
            }
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.all(x).0
    }

    pub fn d1(&self, x: f64) -> f64 {
        self.all(x).1
    }

    pub fn d2(&self, x: f64) -> f64 {
        self.all(x).2
    }

    /// Closed support interval, or `None` for the whole line (or empty for `Zero`).
    pub fn support(&self) -> Option<(f64, f64)> {
        match *self {
            TestFunction::Zero => Some((0.0, 0.0)),
            TestFunction::Constant { .. } => None,
            TestFunction::Plateau { center, outer, .. } => Some((center - outer, center + outer)),
            TestFunction::AffineCore { center, rho } => Some((center - 2.0 * rho, center + 2.0 * rho)),
        }
    }

    /// Sampled `sup |χ'|` (exact for the piecewise forms up to the sampling density).
    pub fn sup_abs_d1(&self) -> f64 {
        match self.support() {
            None => 0.0,
            Some((a, b)) if b <= a => 0.0,
            Some((a, b)) => {
                let m = 20_000;
                (0..=m)
                    .map(|j| self.d1(a + (b - a) * j as f64 / m as f64).abs())
                    .fold(0.0, f64::max)
            }
        }
    }

    /// True when the support lies inside `[lo, hi]`.
    pub fn supported_in(&self, lo: f64, hi: f64) -> bool {
        match self.support() {
            None => false,
            Some((a, b)) => a >= lo && b <= hi,
        }
    }
}

/// Writes a field as CSV with columns `x, u_1, ..., u_k`.
pub fn write_field_csv<W: Write>(u: &Field, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let mut header = vec!["x".to_string()];
    header.extend((1..=u.k).map(|c| format!("u_{c}")));
    wr.write_record(&header)?;
    for i in 0..u.grid.n {
        let mut rec = vec![format!("{:e}", u.grid.x(i))];
        rec.extend(u.node(i).iter().map(|v| format!("{v:e}")));
        wr.write_record(&rec)?;
    }
    wr.flush()?;
    Ok(())
}

/// Reads a field written by [`write_field_csv`].
pub fn read_field_csv<R: Read>(r: R, eps: f64, time: f64) -> Result<Field> {
    let mut rd = csv::Reader::from_reader(r);
    let k = rd.headers()?.len().saturating_sub(1);
    if k == 0 {
        return Err(Error::Format("field CSV needs columns x, u_1..u_k".into()));
    }
    let mut xs = Vec::new();
    let mut values = Vec::new();
    for (line, rec) in rd.records().enumerate() {
        let rec = rec?;
        if rec.len() != k + 1 {
            return Err(Error::Format(format!("row {} has {} columns, expected {}", line + 2, rec.len(), k + 1)));
        }
        let parse = |s: &str| -> Result<f64> {
            s.trim().parse::<f64>().map_err(|e| Error::Format(format!("row {}: '{s}': {e}", line + 2)))
        };
        xs.push(parse(&rec[0])?);
        for c in 0..k {
            values.push(parse(&rec[c + 1])?);
        }
    }
    if xs.len() < 3 {
        return Err(Error::Format("field CSV needs at least 3 rows".into()));
    }
    let grid = Grid1D::new(xs[0], xs[xs.len() - 1], xs.len())?;
    for (i, &x) in xs.iter().enumerate() {
        if (x - grid.x(i)).abs() > 1e-9 * (1.0 + grid.length()) {
            return Err(Error::Format(format!("row {} is not on a uniform grid", i + 2)));
        }
    }
    Field::new(grid, eps, k, values, time)
}

/// Writes a density profile as CSV with columns `x, e, xi`.
pub fn write_density_csv<W: Write>(d: &DensityProfile, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["x", "e", "xi"])?;
    for i in 0..d.grid.n {
        wr.write_record([
            format!("{:e}", d.grid.x(i)),
            format!("{:e}", d.energy[i]),
            format!("{:e}", d.discrepancy[i]),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::make_quartic;

    fn kink(eps: f64, h: f64, half: f64) -> Field {
        let g = Grid1D::with_spacing(-half, half, h).unwrap();
        Field::from_fn(g, eps, 1, |x, o| o[0] = (x / (std::f64::consts::SQRT_2 * eps)).tanh()).unwrap()
    }

    #[test]
    fn constant_fields() {
        let p = make_quartic();
        let g = Grid1D::new(-1.0, 1.0, 11).unwrap();
        let d = energy_density(&Field::constant(g, 0.3, &[1.0]).unwrap(), &p);
        assert!(d.energy.iter().chain(&d.discrepancy).all(|v| *v == 0.0));
        let d = energy_density(&Field::constant(g, 1.0, &[0.0]).unwrap(), &p);
        assert!(d.energy.iter().all(|v| *v == 0.25));
        assert!(d.discrepancy.iter().all(|v| *v == -0.25));
    }

    #[test]
    fn kink_energy_and_discrepancy() {
        let p = make_quartic();
        let exact = 2.0 * std::f64::consts::SQRT_2 / 3.0;
        let u = kink(1.0, 0.01, 30.0);
        assert!((total_energy(&u, &p) - exact).abs() < 1e-4);
        let d = energy_density(&u, &p);
        let emax = d.energy.iter().cloned().fold(0.0, f64::max);
        let xmax = d.discrepancy.iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert!(xmax <= 1e-4 * emax, "{xmax} vs {emax}");
        let u = kink(0.1, 0.001, 3.0);
        assert!((total_energy(&u, &p) - exact).abs() < 1e-3);
    }

    #[test]
    fn pointwise_discrepancy_bounded_by_energy() {
        let p = make_quartic();
        let g = Grid1D::new(-2.0, 2.0, 201).unwrap();
        let u = Field::from_fn(g, 0.2, 1, |x, o| o[0] = (3.0 * x).sin() * 1.3).unwrap();
        let d = energy_density(&u, &p);
        for i in 0..g.n {
            assert!(d.energy[i] >= 0.0 && d.discrepancy[i].abs() <= d.energy[i]);
        }
    }

    #[test]
    fn localized_energy_cases() {
        let p = make_quartic();
        let u = kink(0.1, 0.002, 3.0);
        assert_eq!(localized_energy(&u, &p, &TestFunction::Zero), 0.0);
        let one = TestFunction::Constant { value: 1.0 };
        assert!((localized_energy(&u, &p, &one) - total_energy(&u, &p)).abs() < 1e-14);
        let rho = 0.5;
        let chi = TestFunction::affine_core(0.0, rho).unwrap();
        assert!(localized_energy(&u, &p, &chi).abs() <= 1e-3 * rho * total_energy(&u, &p));
    }

    #[test]
    fn test_function_derivatives_match_differences() {
        let fs = [
            TestFunction::plateau(0.3, 0.5, 1.2).unwrap(),
            TestFunction::affine_core(-0.2, 0.4).unwrap(),
        ];
        for f in &fs {
            let (a, b) = f.support().unwrap();
            for j in 1..200 {
                let x = a + (b - a) * j as f64 / 200.0 + 1e-4;
                let h = 1e-5;
                let fd1 = (f.eval(x + h) - f.eval(x - h)) / (2.0 * h);
                let fd2 = (f.d1(x + h) - f.d1(x - h)) / (2.0 * h);
                assert!((fd1 - f.d1(x)).abs() <= 1e-4 * f.d1(x).abs().max(1.0));
                assert!((fd2 - f.d2(x)).abs() <= 1e-4 * f.d2(x).abs().max(1.0));
            }
            assert_eq!(f.eval(a - 1e-9), 0.0);
            assert_eq!(f.eval(b + 1e-9), 0.0);
        }
    }

    #[test]
    fn affine_core_bounds() {
        let rho = 0.7;
        let f = TestFunction::affine_core(1.0, rho).unwrap();
        for j in 0..=4000 {
            let x = 1.0 - 2.0 * rho + 4.0 * rho * j as f64 / 4000.0;
            assert!(f.eval(x).abs() <= 2.0 * rho);
            assert!(f.d2(x).abs() <= 24.0 / rho);
        }
        approx::assert_relative_eq!(f.eval(1.0 + 0.5 * rho), 0.5 * rho, max_relative = 1e-14);
    }

    #[test]
    fn integrate_range_exact_for_linear() {
        let g = Grid1D::new(0.0, 1.0, 11).unwrap();
        let f: Vec<f64> = g.xs().iter().map(|x| 2.0 * x + 1.0).collect();
        let v = integrate_range(&g, &f, 0.13, 0.77);
        let exact = (0.77f64 * 0.77 + 0.77) - (0.13 * 0.13 + 0.13);
        assert!((v - exact).abs() < 1e-14);
        assert!((integrate_range(&g, &f, 0.31, 0.34) - ((0.34f64.powi(2) + 0.34) - (0.31f64.powi(2) + 0.31))).abs() < 1e-14);
    }

    #[test]
    fn csv_round_trip() {
        let u = kink(0.2, 0.05, 1.0);
        let mut buf = Vec::new();
        write_field_csv(&u, &mut buf).unwrap();
        let v = read_field_csv(&buf[..], 0.2, 0.0).unwrap();
        assert_eq!(u.grid.n, v.grid.n);
        for (a, b) in u.values.iter().zip(&v.values) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn zero_crossings_interpolate() {
        let g = Grid1D::new(-1.0, 1.0, 9).unwrap();
        let u = Field::from_fn(g, 1.0, 1, |x, o| o[0] = (x - 0.1) * (x + 0.6)).unwrap();
        let z = zero_crossings(&u, 0);
        assert_eq!(z.len(), 2);
        assert!((z[0] + 0.6).abs() < 0.05 && (z[1] - 0.1).abs() < 0.05);
        let lin = Field::from_fn(g, 1.0, 1, |x, o| o[0] = 2.0 * x - 0.3).unwrap();
        assert!((zero_crossings(&lin, 0)[0] - 0.15).abs() < 1e-14);
    }

    #[test]
    fn energy_second_order_in_h() {
        let p = make_quartic();
        let exact = 2.0 * std::f64::consts::SQRT_2 / 3.0;
        let e1 = (total_energy(&kink(1.0, 0.2, 20.0), &p) - exact).abs();
        let e2 = (total_energy(&kink(1.0, 0.1, 20.0), &p) - exact).abs();
        let ratio = e1 / e2;
        assert!(ratio > 3.5 && ratio < 4.5, "ratio {ratio}");
    }
}
