//! Time integration of `v_t - v_xx = -ε^{-2} ∇V(v)` and bookkeeping of its
//! energy-dissipation structure.
//!
//! The scheme is IMEX: `(I - dt D_xx) u_new = u - (dt/ε²) ∇V(u)`, one
//! tridiagonal solve per component. Dissipation uses the backward difference
//! `(u_new - u_old)/dt` of the scheme's own update.

use crate::error::{Error, Result};
use crate::grid::{densities_into, energy_density, read_field_csv, trapezoid, write_field_csv, Field, Grid1D, TestFunction};
use crate::potential::{Potential, PotentialKind, WellConstants};
use crate::tridiag::TridiagFactor;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

/// `dt <= SAFETY_DIFF * h²`.
pub const SAFETY_DIFF: f64 = 10.0;
/// `dt <= SAFETY_REACT * ε² / λ_max` with `λ_max = max_i 2λ_i^+`.
pub const SAFETY_REACT: f64 = 0.1;
/// Allowed per-step energy increase, relative to the initial energy.
pub const STEP_ENERGY_TOL: f64 = 1e-8;
/// Slack of the semi-decreasing inequality, relative to `M0`.
pub const SEMIDECREASING_SLACK: f64 = 1e-6;
/// Blow-up is declared when `max |u| > BLOWUP_FACTOR * (R0 + 1)`.
pub const BLOWUP_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// Endpoint values are reset to the minimizer nearest to the current endpoint value.
    ClampedToMinimizer,
    ZeroNeumann,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Integrator {
    pub dt: f64,
    pub boundary: Boundary,
}

/// Largest time step allowed on spacing `h` at scale `eps`.
pub fn dt_limit(h: f64, eps: f64, wc: &WellConstants) -> f64 {
    let lambda_max = 2.0 * wc.max_lambda_plus();
    (SAFETY_DIFF * h * h).min(SAFETY_REACT * eps * eps / lambda_max)
}

impl Integrator {
    pub fn new(dt: f64, boundary: Boundary, grid: &Grid1D, eps: f64, wc: &WellConstants) -> Result<Integrator> {
        let cap = dt_limit(grid.h, eps, wc);
        if !(dt > 0.0) || dt > cap * (1.0 + 1e-12) {
            return Err(Error::Precondition(format!("time step {dt} outside (0, {cap}]")));
        }
        Ok(Integrator { dt, boundary })
    }

    /// Integrator at the stability cap.
    pub fn at_limit(grid: &Grid1D, eps: f64, wc: &WellConstants, boundary: Boundary) -> Integrator {
        Integrator { dt: dt_limit(grid.h, eps, wc), boundary }
    }
}

/// Reusable buffers and matrix for repeated steps at a fixed `dt`.
struct Stepper {
    n: usize,
    k: usize,
    h: f64,
    dt: f64,
    eps: f64,
    boundary: Boundary,
    limit: f64,
    lu: TridiagFactor,
    rhs: Vec<f64>,
    grad: Vec<f64>,
}

impl Stepper {
    fn new(grid: &Grid1D, k: usize, eps: f64, dt: f64, boundary: Boundary, p: &Potential) -> Stepper {
        let n = grid.n;
        let r = dt / (grid.h * grid.h);
        let mut a = vec![-r; n];
        let mut b = vec![1.0 + 2.0 * r; n];
        let mut c = vec![-r; n];
        match boundary {
            Boundary::ClampedToMinimizer => {
                b[0] = 1.0;
                c[0] = 0.0;
                a[n - 1] = 0.0;
                b[n - 1] = 1.0;
            }
            Boundary::ZeroNeumann => {
                c[0] = -2.0 * r;
                a[n - 1] = -2.0 * r;
            }
        }
        a[0] = 0.0;
        c[n - 1] = 0.0;
        Stepper {
            n,
            k,
            h: grid.h,
            dt,
            eps,
            boundary,
            limit: BLOWUP_FACTOR * (p.r0() + 1.0),
            lu: TridiagFactor::new(&a, &b, &c),
            rhs: vec![0.0; n],
            grad: vec![0.0; n * k],
        }
    }

    fn advance(&mut self, p: &Potential, cur: &[f64], next: &mut [f64], time: f64) -> Result<()> {
        let (n, k) = (self.n, self.k);
        for (y, g) in cur.chunks_exact(k).zip(self.grad.chunks_exact_mut(k)) {
            p.grad_into(y, g);
        }
        let ends = match self.boundary {
            Boundary::ClampedToMinimizer => {
                let lo = p.dist_to_wells(&cur[..k]).1;
                let hi = p.dist_to_wells(&cur[(n - 1) * k..]).1;
                Some((&p.minimizers()[lo], &p.minimizers()[hi]))
            }
            Boundary::ZeroNeumann => None,
        };
        let react = self.dt / (self.eps * self.eps);
        let r = self.dt / (self.h * self.h);
        // Solved for the increment so that equilibria are reproduced bit for bit.
        for comp in 0..k {
            let rhs = &mut self.rhs;
            let grad = &self.grad;
            if k == 1 {
                for i in 1..n - 1 {
                    rhs[i] = r * (cur[i - 1] - 2.0 * cur[i] + cur[i + 1]) - react * grad[i];
                }
            } else {
                for i in 1..n - 1 {
                    let at = |j: usize| cur[j * k + comp];
                    rhs[i] = r * (at(i - 1) - 2.0 * at(i) + at(i + 1)) - react * grad[i * k + comp];
                }
            }
            let at = |j: usize| cur[j * k + comp];
            match ends {
                Some((lo, hi)) => {
                    rhs[0] = lo[comp] - at(0);
                    rhs[n - 1] = hi[comp] - at(n - 1);
                }
                None => {
                    rhs[0] = 2.0 * r * (at(1) - at(0)) - react * grad[comp];
                    rhs[n - 1] = 2.0 * r * (at(n - 2) - at(n - 1)) - react * grad[(n - 1) * k + comp];
                }
            }
            self.lu.solve_in_place(rhs);
            if k == 1 {
                for ((x, y), d) in next.iter_mut().zip(cur).zip(rhs.iter()) {
                    *x = y + d;
                }
            } else {
                for i in 0..n {
                    next[i * k + comp] = at(i) + rhs[i];
                }
            }
        }
        let max_sq = next
            .chunks_exact(k)
            .map(|y| y.iter().map(|v| v * v).sum::<f64>())
            .fold(0.0, f64::max);
        if !(max_sq <= self.limit * self.limit) {
            return Err(Error::BlowUp { time, max_abs: max_sq.sqrt(), limit: self.limit });
        }
        Ok(())
    }
}

/// One IMEX step.
pub fn step(u: &Field, p: &Potential, it: &Integrator) -> Result<Field> {
    check_dims(u, p)?;
    let mut st = Stepper::new(&u.grid, u.k, u.eps, it.dt, it.boundary, p);
    let mut next = vec![0.0; u.values.len()];
    st.advance(p, &u.values, &mut next, u.time + it.dt)?;
    Ok(Field { grid: u.grid, eps: u.eps, k: u.k, values: next, time: u.time + it.dt })
}

fn check_dims(u: &Field, p: &Potential) -> Result<()> {
    if u.k != p.dim() {
        return Err(Error::InvalidArgument(format!(
            "field has {} components but the potential has dimension {}",
            u.k,
            p.dim()
        )));
    }
    Ok(())
}

/// Observation requests for [`simulate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Probe {
    /// Store a snapshot every `every` time units (rounded to whole steps).
    Snapshots { every: f64 },
    /// Accumulate the terms of the localized energy identity for `chi`.
    Localized { chi: TestFunction },
}

/// Terms of the localized identity for one test function, sampled at snapshots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizedSeries {
    pub chi: TestFunction,
    /// `∫ χ e` at each snapshot.
    pub weighted_energy: Vec<f64>,
    /// `∫∫ ε χ |v_t|²` from 0 to each snapshot.
    pub dissipation_cum: Vec<f64>,
    /// `∫∫ ξ χ''` from 0 to each snapshot.
    pub flux_cum: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub eps: f64,
    /// Step actually used: `t_end / steps`, never above the requested step.
    pub dt: f64,
    pub boundary: Boundary,
    pub times: Vec<f64>,
    pub steps: Vec<u64>,
    pub snapshots: Vec<Field>,
    /// Backward difference `(u_n - u_{n-1})/dt` at each snapshot; forward difference at `t = 0`.
    pub rates: Vec<Field>,
    pub energy_series: Vec<f64>,
    pub dissipation_cum: Vec<f64>,
    pub localized: Vec<LocalizedSeries>,
    /// Largest `E(u_{n+1}) - E(u_n)` over all steps.
    pub max_step_energy_increase: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn initial_energy(&self) -> f64 {
        self.energy_series[0]
    }

    /// Index of the last snapshot with time `<= t`.
    pub fn index_at(&self, t: f64) -> usize {
        self.times.iter().rposition(|&s| s <= t + 1e-12).unwrap_or(0)
    }
}

struct LocalAcc {
    chi: Vec<f64>,
    chi2: Vec<f64>,
    flux_prev: f64,
    diss: f64,
    flux: f64,
    series: LocalizedSeries,
}

fn weighted(h: f64, w: &[f64], f: &[f64], buf: &mut [f64]) -> f64 {
    for i in 0..w.len() {
        buf[i] = w[i] * f[i];
    }
    trapezoid(h, buf)
}

/// Integrates from `u0.time` to `u0.time + t_end`.
pub fn simulate(u0: &Field, p: &Potential, it: &Integrator, t_end: f64, probes: &[Probe]) -> Result<Trajectory> {
    check_dims(u0, p)?;
    if !(t_end >= 0.0) || !(it.dt > 0.0) {
        return Err(Error::InvalidArgument(format!("need t_end >= 0 and dt > 0, got {t_end}, {}", it.dt)));
    }
    let grid = u0.grid;
    let (n, k, h, eps) = (grid.n, u0.k, grid.h, u0.eps);
    let nsteps = ((t_end / it.dt) - 1e-9).ceil().max(if t_end > 0.0 { 1.0 } else { 0.0 }) as u64;
    let dt = if nsteps > 0 { t_end / nsteps as f64 } else { it.dt };
    let every_steps = probes
        .iter()
        .find_map(|pr| match pr {
            Probe::Snapshots { every } if *every > 0.0 => Some(((every / dt).round() as u64).max(1)),
            _ => None,
        })
        .unwrap_or(u64::MAX);

    let mut e = vec![0.0; n];
    let mut xi = vec![0.0; n];
    let mut buf = vec![0.0; n];
    densities_into(&u0.values, k, &grid, eps, p, &mut e, &mut xi);
    let e0 = trapezoid(h, &e);
    if !e0.is_finite() {
        return Err(Error::Precondition("initial energy is not finite".into()));
    }

    let mut locals: Vec<LocalAcc> = probes
        .iter()
        .filter_map(|pr| match pr {
            Probe::Localized { chi } => Some(chi.clone()),
            _ => None,
        })
        .map(|chi| {
            let xs = grid.xs();
            let w: Vec<f64> = xs.iter().map(|&x| chi.eval(x)).collect();
            let w2: Vec<f64> = xs.iter().map(|&x| chi.d2(x)).collect();
            let we = weighted(h, &w, &e, &mut buf);
            let fl = weighted(h, &w2, &xi, &mut buf);
            LocalAcc {
                chi: w,
                chi2: w2,
                flux_prev: fl,
                diss: 0.0,
                flux: 0.0,
                series: LocalizedSeries {
                    chi,
                    weighted_energy: vec![we],
                    dissipation_cum: vec![0.0],
                    flux_cum: vec![0.0],
                },
            }
        })
        .collect();

    let mut tr = Trajectory {
        eps,
        dt,
        boundary: it.boundary,
        times: vec![u0.time],
        steps: vec![0],
        snapshots: vec![u0.clone()],
        rates: vec![Field { values: vec![0.0; n * k], ..u0.clone() }],
        energy_series: vec![e0],
        dissipation_cum: vec![0.0],
        localized: Vec::new(),
        max_step_energy_increase: f64::NEG_INFINITY,
    };

    let mut st = Stepper::new(&grid, k, eps, dt, it.boundary, p);
    let mut cur = u0.values.clone();
    let mut next = vec![0.0; cur.len()];
    let mut rate = vec![0.0; n];
    let mut energy = e0;
    let mut diss = 0.0;
    let inv_dt2 = 1.0 / (dt * dt);
    for s in 1..=nsteps {
        let t = u0.time + dt * s as f64;
        st.advance(p, &cur, &mut next, t)?;
        for ((r, a), b) in rate.iter_mut().zip(next.chunks_exact(k)).zip(cur.chunks_exact(k)) {
            *r = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() * inv_dt2;
        }
        diss += eps * trapezoid(h, &rate) * dt;
        densities_into(&next, k, &grid, eps, p, &mut e, &mut xi);
        let e_new = trapezoid(h, &e);
        tr.max_step_energy_increase = tr.max_step_energy_increase.max(e_new - energy);
        energy = e_new;
        for la in locals.iter_mut() {
            la.diss += eps * weighted(h, &la.chi, &rate, &mut buf) * dt;
            let fl = weighted(h, &la.chi2, &xi, &mut buf);
            la.flux += 0.5 * (la.flux_prev + fl) * dt;
            la.flux_prev = fl;
        }
        if s == 1 {
            tr.rates[0].values = next.iter().zip(&cur).map(|(a, b)| (a - b) / dt).collect();
        }
        if s % every_steps == 0 || s == nsteps {
            let rv: Vec<f64> = next.iter().zip(&cur).map(|(a, b)| (a - b) / dt).collect();
            tr.times.push(t);
            tr.steps.push(s);
            tr.snapshots.push(Field { grid, eps, k, values: next.clone(), time: t });
            tr.rates.push(Field { grid, eps, k, values: rv, time: t });
            tr.energy_series.push(energy);
            tr.dissipation_cum.push(diss);
            for la in locals.iter_mut() {
                la.series.weighted_energy.push(weighted(h, &la.chi, &e, &mut buf));
                la.series.dissipation_cum.push(la.diss);
                la.series.flux_cum.push(la.flux);
            }
        }
        std::mem::swap(&mut cur, &mut next);
    }
    if nsteps == 0 {
        tr.max_step_energy_increase = 0.0;
    }
    tr.localized = locals.into_iter().map(|la| la.series).collect();
    Ok(tr)
}

fn ordered(i1: usize, i2: usize) -> (usize, usize) {
    (i1.min(i2), i1.max(i2))
}

/// `|E(t2) + ∫_{t1}^{t2}∫ ε|v_t|² - E(t1)|` from the stored series.
pub fn energy_identity_residual(tr: &Trajectory, i1: usize, i2: usize) -> f64 {
    let (i1, i2) = ordered(i1, i2);
    (tr.energy_series[i2] + (tr.dissipation_cum[i2] - tr.dissipation_cum[i1]) - tr.energy_series[i1]).abs()
}

/// `|Δ∫χe + ∫∫εχ|v_t|² - ∫∫ξχ''|` between two snapshots.
///
/// `chi` must have been registered as a [`Probe::Localized`]; `TestFunction::Zero` always gives 0.
pub fn localized_identity_residual(tr: &Trajectory, chi: &TestFunction, i1: usize, i2: usize) -> Result<f64> {
    if *chi == TestFunction::Zero {
        return Ok(0.0);
    }
    let s = tr
        .localized
        .iter()
        .find(|s| s.chi == *chi)
        .ok_or_else(|| Error::InvalidArgument("test function was not recorded as a probe".into()))?;
    let (i1, i2) = ordered(i1, i2);
    Ok((s.weighted_energy[i2] - s.weighted_energy[i1] + (s.dissipation_cum[i2] - s.dissipation_cum[i1])
        - (s.flux_cum[i2] - s.flux_cum[i1]))
        .abs())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemidecreasingReport {
    pub pass: bool,
    /// Largest `lhs - rhs` over the checked snapshot pairs (negative when strict).
    pub worst_excess: f64,
    pub pairs_checked: usize,
}

/// Checks `∫eχ²(t') <= ∫eχ²(t) + 4 M0 ‖χ'‖²_∞ (t' - t) + slack` for every snapshot
/// pair `i1 <= t-index < t'-index <= i2`.
pub fn semidecreasing_check(
    tr: &Trajectory,
    p: &Potential,
    chi: &TestFunction,
    i1: usize,
    i2: usize,
    m0: f64,
) -> SemidecreasingReport {
    let (i1, i2) = ordered(i1, i2);
    let d1 = chi.sup_abs_d1();
    let vals: Vec<f64> = (i1..=i2)
        .map(|j| {
            let u = &tr.snapshots[j];
            let d = energy_density(u, p);
            let w: Vec<f64> = (0..u.grid.n).map(|i| chi.eval(u.grid.x(i)).powi(2) * d.energy[i]).collect();
            trapezoid(u.grid.h, &w)
        })
        .collect();
    let slack = SEMIDECREASING_SLACK * m0;
    let mut worst = f64::NEG_INFINITY;
    let mut pairs = 0;
    for a in 0..vals.len() {
        for b in a + 1..vals.len() {
            let dt = tr.times[i1 + b] - tr.times[i1 + a];
            let excess = vals[b] - vals[a] - 4.0 * m0 * d1 * d1 * dt - slack;
            worst = worst.max(excess);
            pairs += 1;
        }
    }
    if pairs == 0 {
        worst = -slack;
    }
    SemidecreasingReport { pass: worst <= 0.0, worst_excess: worst, pairs_checked: pairs }
}

/// JSON manifest accompanying exported snapshot CSVs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub potential: String,
    pub potential_kind: PotentialKind,
    pub minimizers: Vec<Vec<f64>>,
    pub eps: f64,
    pub dt: f64,
    pub boundary: Boundary,
    pub x_min: f64,
    pub x_max: f64,
    pub nodes: usize,
    pub components: usize,
    pub times: Vec<f64>,
    pub energies: Vec<f64>,
    pub dissipation: Vec<f64>,
    pub files: Vec<String>,
    pub config: serde_json::Value,
    /// Derived run metrics added by the caller; `null` when absent.
    #[serde(default)]
    pub metrics: serde_json::Value,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes `snapshot_NNNNN.csv` files and `manifest.json` into `dir`.
pub fn write_trajectory(tr: &Trajectory, p: &Potential, dir: &Path, config: serde_json::Value) -> Result<Manifest> {
    std::fs::create_dir_all(dir)?;
    let mut files = Vec::with_capacity(tr.len());
    for (j, u) in tr.snapshots.iter().enumerate() {
        let name = format!("snapshot_{j:05}.csv");
        write_field_csv(u, BufWriter::new(File::create(dir.join(&name))?))?;
        files.push(name);
    }
    let g = tr.snapshots[0].grid;
    let m = Manifest {
        potential: p.name().to_string(),
        potential_kind: p.kind().clone(),
        minimizers: p.minimizers().to_vec(),
        eps: tr.eps,
        dt: tr.dt,
        boundary: tr.boundary,
        x_min: g.x_min,
        x_max: g.x_max,
        nodes: g.n,
        components: tr.snapshots[0].k,
        times: tr.times.clone(),
        energies: tr.energy_series.clone(),
        dissipation: tr.dissipation_cum.clone(),
        files,
        config,
        metrics: serde_json::Value::Null,
    };
    write_manifest(dir, &m)?;
    Ok(m)
}

/// Overwrites `manifest.json` in `dir`.
pub fn write_manifest(dir: &Path, m: &Manifest) -> Result<()> {
    let mut w = BufWriter::new(File::create(dir.join(MANIFEST_FILE))?);
    serde_json::to_writer_pretty(&mut w, m)?;
    w.flush()?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let m: Manifest = serde_json::from_reader(BufReader::new(File::open(dir.join(MANIFEST_FILE))?))?;
    let s = m.files.len();
    if m.times.len() != s || m.energies.len() != s || m.dissipation.len() != s {
        return Err(Error::Format("manifest series lengths disagree with the file list".into()));
    }
    Ok(m)
}

/// Loads every snapshot listed in a manifest.
pub fn load_snapshots(dir: &Path, m: &Manifest) -> Result<Vec<Field>> {
    m.files
        .iter()
        .zip(&m.times)
        .map(|(f, &t)| {
            let u = read_field_csv(BufReader::new(File::open(dir.join(f))?), m.eps, t)?;
            if u.grid.n != m.nodes || u.k != m.components {
                return Err(Error::Format(format!("{f}: shape differs from the manifest")));
            }
            Ok(u)
        })
        .collect()
}
