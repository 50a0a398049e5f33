//! Experiment configuration, orchestration and artifact emission. This is the
//! only module that touches the filesystem.

use crate::diagnostics::{containment_violations, front_tracker, make_constants, Constants, Verdict};
use crate::error::{Error, Result};
use crate::evolve::{
    energy_identity_residual, load_snapshots, read_manifest, simulate, write_manifest, write_trajectory, Boundary,
    Integrator, Manifest, Probe, Trajectory,
};
use crate::frontset::{confine_traced, confined_cover_front_set, front_set, validate_covering, Target};
use crate::grid::{level_crossings, total_energy, write_field_csv, Field, Grid1D, TestFunction};
use crate::potential::{potential_by_name, well_constants, Potential, PotentialKind, WellConstants};
use crate::stationary::{extract_structure, shoot_heteroclinic, StationaryProfile, StructureReport};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

/// Tolerance of the energy identity relative to the initial energy.
pub const ENERGY_IDENTITY_TOL: f64 = 1e-3;
/// Relative tolerance when comparing stored energies with recomputed ones.
pub const ENERGY_CONSISTENCY_TOL: f64 = 1e-9;
/// Slack allowed for energy increases between snapshots, relative to `E(0)`.
pub const ENERGY_MONOTONE_SLACK: f64 = 1e-12;
/// Speeds below `FLOOR_ULPS · f64::EPSILON · max|x| / window` are censored.
pub const FLOOR_ULPS: f64 = 64.0;
/// Default tracker scale as a multiple of `α0 ε`.
pub const TRACKER_DELTA_FACTOR: f64 = 1.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialSpec {
    pub name: String,
    #[serde(default)]
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub x_min: f64,
    pub x_max: f64,
    /// Grid spacing; `ε/8` when absent.
    #[serde(default)]
    pub h: Option<f64>,
}

/// Named initial-datum constructors. Well indices refer to the potential's
/// minimizer list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSpec {
    Kink {
        #[serde(default)]
        center: f64,
        #[serde(default)]
        from: Option<usize>,
        #[serde(default)]
        to: Option<usize>,
    },
    KinkAntikink {
        separation: f64,
        #[serde(default)]
        center: f64,
    },
    MultiFront {
        positions: Vec<f64>,
        #[serde(default)]
        wells: Option<Vec<usize>>,
    },
    RandomSmooth {
        #[serde(default)]
        seed: Option<u64>,
        energy_cap: f64,
        #[serde(default = "default_modes")]
        modes: usize,
    },
}

fn default_modes() -> usize {
    6
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSpec {
    /// Snapshot spacing in time; `t_end/100` when absent.
    #[serde(default)]
    pub snapshot_every: Option<f64>,
    #[serde(default)]
    pub localized: Vec<TestFunction>,
}

/// Speed-sweep timing, in units of `ε²` and `ε`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSettings {
    pub relax_eps2: f64,
    pub window_eps2: f64,
    pub margin_eps: f64,
    pub snapshot_eps2: f64,
    pub containment_radius_eps: f64,
}

impl Default for SweepSettings {
    fn default() -> Self {
        SweepSettings {
            relax_eps2: 10.0,
            window_eps2: 20.0,
            margin_eps: 25.0,
            snapshot_eps2: 1.0,
            containment_radius_eps: 10.0,
        }
    }
}

/// Structure extraction settings; `R` defaults to `α0 ε`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructureSettings {
    #[serde(default)]
    pub big_r: Option<f64>,
    #[serde(default)]
    pub k2: Option<f64>,
}

fn default_boundary() -> Boundary {
    Boundary::ClampedToMinimizer
}

fn default_output() -> PathBuf {
    PathBuf::from("run")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub potential: PotentialSpec,
    pub eps: f64,
    pub domain: DomainSpec,
    pub initial: InitialSpec,
    pub t_end: f64,
    /// Time step; the stability limit when absent.
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default = "default_boundary")]
    pub boundary: Boundary,
    #[serde(default)]
    pub probes: ProbeSpec,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub sweep: SweepSettings,
    #[serde(default)]
    pub structure: Option<StructureSettings>,
}

impl ExperimentConfig {
    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("configs always serialise")
    }
}

/// Parses a JSON configuration; syntax and schema errors carry line and column.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    serde_json::from_str(text).map_err(|e| {
        let msg = e.to_string();
        let bare = msg.split(" at line ").next().unwrap_or(&msg).to_string();
        Error::Format(format!("config line {}, column {}: {bare}", e.line(), e.column()))
    })
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    parse_config(&std::fs::read_to_string(path)?)
}

/// A configuration with every default filled in and every invariant checked.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub potential: Potential,
    pub wc: WellConstants,
    pub grid: Grid1D,
    pub u0: Field,
    pub integrator: Integrator,
    pub probes: Vec<Probe>,
}

pub fn resolve(cfg: &ExperimentConfig) -> Result<Resolved> {
    if !(cfg.eps > 0.0 && cfg.eps <= 1.0) {
        return Err(Error::InvalidArgument(format!("ε = {} must lie in (0, 1]", cfg.eps)));
    }
    if !(cfg.t_end >= 0.0) {
        return Err(Error::InvalidArgument(format!("t_end = {} must be non-negative", cfg.t_end)));
    }
    let p = potential_by_name(&cfg.potential.name, &cfg.potential.params)?;
    let wc = well_constants(&p)?;
    let h = cfg.domain.h.unwrap_or(cfg.eps / 8.0);
    let grid = Grid1D::with_spacing(cfg.domain.x_min, cfg.domain.x_max, h)?;
    let u0 = initial_field(&cfg.initial, &p, cfg.eps, grid, cfg.seed)?;
    let integrator = match cfg.dt {
        Some(dt) => Integrator::new(dt, cfg.boundary, &grid, cfg.eps, &wc)?,
        None => Integrator::at_limit(&grid, cfg.eps, &wc, cfg.boundary),
    };
    let every = cfg.probes.snapshot_every.unwrap_or(cfg.t_end / 100.0);
    let mut probes = vec![Probe::Snapshots { every }];
    probes.extend(cfg.probes.localized.iter().cloned().map(|chi| Probe::Localized { chi }));
    Ok(Resolved { potential: p, wc, grid, u0, integrator, probes })
}

/// Builds the initial field of a configuration.
pub fn initial_field(spec: &InitialSpec, p: &Potential, eps: f64, grid: Grid1D, seed: u64) -> Result<Field> {
    let nw = p.minimizers().len();
    let check = |w: usize| {
        if w < nw {
            Ok(w)
        } else {
            Err(Error::InvalidArgument(format!("well index {w} out of range (potential has {nw})")))
        }
    };
    match spec {
        InitialSpec::Kink { center, from, to } => {
            let (a, b) = (check(from.unwrap_or(0))?, check(to.unwrap_or(1))?);
            front_chain(p, eps, grid, &[*center], &[a, b])
        }
        InitialSpec::KinkAntikink { separation, center } => {
            if !(*separation > 0.0) {
                return Err(Error::InvalidArgument("kink-antikink separation must be positive".into()));
            }
            let half = 0.5 * separation;
            front_chain(p, eps, grid, &[center - half, center + half], &[0, 1, 0])
        }
        InitialSpec::MultiFront { positions, wells } => {
            let wells = match wells {
                Some(w) => w.iter().map(|&i| check(i)).collect::<Result<Vec<_>>>()?,
                None => (0..=positions.len()).map(|j| j % 2).collect(),
            };
            front_chain(p, eps, grid, positions, &wells)
        }
        InitialSpec::RandomSmooth { seed: s, energy_cap, modes } => {
            random_smooth(p, eps, grid, s.unwrap_or(seed), *energy_cap, *modes)
        }
    }
}

/// Fronts at increasing `positions` separating the wells listed in `wells`.
///
/// The quartic with alternating wells uses the closed-form product of `tanh`
/// profiles; otherwise each front is a shot heteroclinic, used on the cell
/// between the midpoints to its neighbours.
pub fn front_chain(p: &Potential, eps: f64, grid: Grid1D, positions: &[f64], wells: &[usize]) -> Result<Field> {
    if wells.len() != positions.len() + 1 {
        return Err(Error::InvalidArgument(format!(
            "{} fronts need {} wells, got {}",
            positions.len(),
            positions.len() + 1,
            wells.len()
        )));
    }
    if positions.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidArgument("front positions must increase".into()));
    }
    if wells.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidArgument("consecutive wells must differ".into()));
    }
    let k = p.dim();
    let mins = p.minimizers();
    if positions.is_empty() {
        return Field::constant(grid, eps, &mins[wells[0]]);
    }
    if *p.kind() == PotentialKind::Quartic {
        let s = std::f64::consts::SQRT_2 * eps;
        let sign0 = mins[wells[0]][0];
        return Field::from_fn(grid, eps, 1, |x, o| {
            o[0] = sign0 * positions.iter().map(|&c| -((x - c) / s).tanh()).product::<f64>();
        });
    }
    let mut cache: HashMap<(usize, usize), StationaryProfile> = HashMap::new();
    for w in wells.windows(2) {
        if let std::collections::hash_map::Entry::Vacant(e) = cache.entry((w[0], w[1])) {
            e.insert(shoot_heteroclinic(p, eps, w[0], w[1], None)?);
        }
    }
    let cells: Vec<f64> = positions.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    Field::from_fn(grid, eps, k, |x, o| {
        let j = cells.iter().take_while(|&&m| x >= m).count();
        let prof = &cache[&(wells[j], wells[j + 1])];
        hermite_eval(prof, x - positions[j], o);
    })
}

/// Cubic Hermite interpolation of a profile, constant beyond its ends.
fn hermite_eval(prof: &StationaryProfile, s: f64, out: &mut [f64]) {
    let g = prof.grid;
    if s <= g.x_min {
        out.copy_from_slice(prof.u(0));
        return;
    }
    if s >= g.x_max {
        out.copy_from_slice(prof.u(g.n - 1));
        return;
    }
    let q = (s - g.x_min) / g.h;
    let i = (q.floor() as usize).min(g.n - 2);
    let t = q - i as f64;
    let (t2, t3) = (t * t, t * t * t);
    let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
    let h10 = t3 - 2.0 * t2 + t;
    let h01 = -2.0 * t3 + 3.0 * t2;
    let h11 = t3 - t2;
    let d = g.h / prof.eps;
    for (c, o) in out.iter_mut().enumerate() {
        *o = h00 * prof.u(i)[c] + h10 * d * prof.w(i)[c] + h01 * prof.u(i + 1)[c] + h11 * d * prof.w(i + 1)[c];
    }
}

/// Well 0 plus a random sine series vanishing at the ends, scaled down by
/// bisection on the amplitude until the energy is at most `energy_cap`.
pub fn random_smooth(p: &Potential, eps: f64, grid: Grid1D, seed: u64, energy_cap: f64, modes: usize) -> Result<Field> {
    if modes == 0 {
        return Err(Error::InvalidArgument("random_smooth needs at least one mode".into()));
    }
    let k = p.dim();
    let base = p.minimizers()[0].clone();
    if !(energy_cap > 0.0) {
        return Field::constant(grid, eps, &base);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spread = 2.0 * p.r0().max(1.0);
    let coef: Vec<Vec<f64>> =
        (0..k).map(|_| (1..=modes).map(|m| rng.gen_range(-1.0..=1.0) * spread / m as f64).collect()).collect();
    let len = grid.length();
    let build = |amp: f64| {
        Field::from_fn(grid, eps, k, |x, o| {
            let z = std::f64::consts::PI * (x - grid.x_min) / len;
            for c in 0..k {
                o[c] = base[c] + amp * coef[c].iter().enumerate().map(|(m, a)| a * ((m + 1) as f64 * z).sin()).sum::<f64>();
            }
        })
    };
    let full = build(1.0)?;
    if total_energy(&full, p) <= energy_cap {
        return Ok(full);
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if total_energy(&build(mid)?, p) <= energy_cap {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    build(lo)
}

/// Change in the number of front-set components between consecutive snapshots.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrontEvent {
    pub t: f64,
    pub from: usize,
    pub to: usize,
}

/// Front bookkeeping of a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontMetrics {
    /// Transitions between nearest-well labels along `x` at each snapshot.
    pub front_counts: Vec<usize>,
    /// Components of `𝓓(t)` at each snapshot.
    pub front_set_components: Vec<usize>,
    pub events: Vec<FrontEvent>,
    /// Largest displacement of a mid-level crossing from its initial position,
    /// over snapshots keeping the initial crossing count (scalar potentials).
    pub front_displacement: Option<f64>,
    pub initial_fronts: usize,
    pub final_fronts: usize,
}

/// Crossing level halfway between the first two minimizers (first component).
pub fn mid_level(p: &Potential) -> f64 {
    let m = p.minimizers();
    0.5 * (m[0][0] + m[1][0])
}

/// Number of changes of the nearest-minimizer label between adjacent nodes.
pub fn well_transitions(u: &Field, p: &Potential) -> usize {
    let mins = p.minimizers();
    let label = |i: usize| {
        let y = u.node(i);
        (0..mins.len())
            .min_by(|&a, &b| {
                let da: f64 = y.iter().zip(&mins[a]).map(|(v, m)| (v - m).powi(2)).sum();
                let db: f64 = y.iter().zip(&mins[b]).map(|(v, m)| (v - m).powi(2)).sum();
                da.total_cmp(&db)
            })
            .unwrap_or(0)
    };
    (1..u.grid.n).filter(|&i| label(i) != label(i - 1)).count()
}

pub fn front_metrics(tr: &Trajectory, p: &Potential, wc: &WellConstants) -> FrontMetrics {
    let counts: Vec<usize> = tr.snapshots.iter().map(|u| well_transitions(u, p)).collect();
    let components = tr.snapshots.iter().map(|u| front_set(u, p, wc).intervals.len()).collect();
    let events = counts
        .windows(2)
        .zip(&tr.times[1..])
        .filter(|(w, _)| w[0] != w[1])
        .map(|(w, &t)| FrontEvent { t, from: w[0], to: w[1] })
        .collect();
    let front_displacement = (p.dim() == 1).then(|| {
        let level = mid_level(p);
        let c0 = level_crossings(&tr.snapshots[0], 0, level);
        tr.snapshots
            .iter()
            .map(|u| level_crossings(u, 0, level))
            .filter(|c| c.len() == c0.len())
            .flat_map(|c| c.iter().zip(&c0).map(|(a, b)| (a - b).abs()).collect::<Vec<_>>())
            .fold(0.0, f64::max)
    });
    FrontMetrics {
        initial_fronts: counts[0],
        final_fronts: *counts.last().unwrap_or(&0),
        front_counts: counts,
        front_set_components: components,
        events,
        front_displacement,
    }
}

/// Energy identity at the last snapshot, relative to `E(0)`.
pub fn energy_identity_verdict(tr: &Trajectory) -> Verdict {
    let res = energy_identity_residual(tr, 0, tr.len() - 1);
    let rhs = ENERGY_IDENTITY_TOL * tr.initial_energy();
    Verdict {
        check: "energy_identity".into(),
        params: json!({ "t_end": tr.times[tr.len() - 1] }),
        lhs: res,
        rhs,
        pass: res <= rhs,
    }
}

fn monotone_verdict(times: &[f64], energies: &[f64]) -> Verdict {
    let worst = energies.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    let rhs = ENERGY_MONOTONE_SLACK * energies[0].abs().max(1.0);
    let at = energies.windows(2).position(|w| w[1] - w[0] == worst).map(|i| times[i + 1]);
    Verdict {
        check: "energy_monotone".into(),
        params: json!({ "worst_at": at }),
        lhs: worst.max(0.0),
        rhs,
        pass: worst <= rhs,
    }
}

/// Result of a simulation run.
#[derive(Debug, Clone)]
pub struct SimulationOutcome {
    pub resolved: Resolved,
    pub trajectory: Trajectory,
    pub metrics: FrontMetrics,
    pub verdicts: Vec<Verdict>,
}

impl SimulationOutcome {
    pub fn pass(&self) -> bool {
        self.verdicts.iter().all(|v| v.pass)
    }
}

/// Runs a configuration without writing anything.
pub fn run_simulation(cfg: &ExperimentConfig) -> Result<SimulationOutcome> {
    let resolved = resolve(cfg)?;
    let tr = simulate(&resolved.u0, &resolved.potential, &resolved.integrator, cfg.t_end, &resolved.probes)?;
    let metrics = front_metrics(&tr, &resolved.potential, &resolved.wc);
    let verdicts = vec![energy_identity_verdict(&tr), monotone_verdict(&tr.times, &tr.energy_series)];
    Ok(SimulationOutcome { resolved, trajectory: tr, metrics, verdicts })
}

/// Runs a configuration and writes snapshots, `manifest.json` (config and
/// metrics included) and `verdicts.json` into `out` (default: the config's
/// output directory).
pub fn cmd_simulate(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<SimulationOutcome> {
    let o = run_simulation(cfg)?;
    let dir = out.unwrap_or(&cfg.output_dir);
    let mut m = write_trajectory(&o.trajectory, &o.resolved.potential, dir, cfg.to_json())?;
    m.metrics = json!({
        "fronts": o.metrics,
        "h": o.resolved.grid.h,
        "max_step_energy_increase": o.trajectory.max_step_energy_increase,
    });
    write_manifest(dir, &m)?;
    write_json(&dir.join("verdicts.json"), &json!({ "pass": o.pass(), "verdicts": o.verdicts }))?;
    Ok(o)
}

pub fn write_json(path: &Path, v: &impl Serialize) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, v)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// One separation of a speed sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub d_over_eps: f64,
    pub separation: f64,
    /// Approach speed of the right front, positive when the fronts attract.
    pub speed: f64,
    pub censored: bool,
    pub containment_violations: usize,
}

/// Least-squares fit of `ln(speed)` against `d/ε`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogLinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub n_used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub eps: f64,
    pub h: f64,
    pub relax: f64,
    pub window: f64,
    pub containment_radius: f64,
    pub rows: Vec<SweepRow>,
    pub fit: Option<LogLinearFit>,
    pub config: Value,
}

pub struct SweepOutcome {
    pub report: SweepReport,
    pub trajectories: Vec<Trajectory>,
    pub potential: Potential,
    pub wc: WellConstants,
}

/// Least-squares line through `(x, y)`; `None` below two points.
pub fn fit_line(xs: &[f64], ys: &[f64]) -> Option<LogLinearFit> {
    let n = xs.len();
    if n < 2 {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs.iter().zip(ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    Some(LogLinearFit { slope, intercept, r2: 1.0 - ss_res / ss_tot, n_used: n })
}

/// Kink–antikink runs at separations `d = s ε` for each `s` in `separations_eps`.
///
/// Each run uses the domain `[-(d/2 + margin), d/2 + margin]` with the
/// configuration's potential, `ε`, `h`, `dt` and boundary. The right front is
/// the last downward crossing of the mid-level; its speed is the displacement
/// between `t = relax` and `t = relax + window` divided by the elapsed time.
pub fn run_speed_sweep(cfg: &ExperimentConfig, separations_eps: &[f64]) -> Result<SweepOutcome> {
    if separations_eps.len() < 3 {
        return Err(Error::InvalidArgument("a speed sweep needs at least 3 separations".into()));
    }
    let p = potential_by_name(&cfg.potential.name, &cfg.potential.params)?;
    if p.dim() != 1 {
        return Err(Error::InvalidArgument("speed sweeps need a scalar potential".into()));
    }
    let wc = well_constants(&p)?;
    let eps = cfg.eps;
    let s = &cfg.sweep;
    let h = cfg.domain.h.unwrap_or(eps / 8.0);
    let relax = s.relax_eps2 * eps * eps;
    let window = s.window_eps2 * eps * eps;
    let radius = s.containment_radius_eps * eps;
    let level = mid_level(&p);
    let mut rows = Vec::new();
    let mut trajectories = Vec::new();
    for &d_eps in separations_eps {
        let d = d_eps * eps;
        let half = 0.5 * d + s.margin_eps * eps;
        let grid = Grid1D::with_spacing(-half, half, h)?;
        let u0 = front_chain(&p, eps, grid, &[-0.5 * d, 0.5 * d], &[0, 1, 0])?;
        let it = match cfg.dt {
            Some(dt) => Integrator::new(dt, cfg.boundary, &grid, eps, &wc)?,
            None => Integrator::at_limit(&grid, eps, &wc, cfg.boundary),
        };
        let probes = [Probe::Snapshots { every: s.snapshot_eps2 * eps * eps }];
        let tr = simulate(&u0, &p, &it, relax + window, &probes)?;
        let (i0, i1) = (tr.index_at(relax), tr.len() - 1);
        let right = |u: &Field| {
            let m = u.node(0)[0] > level;
            level_crossings(u, 0, level)
                .into_iter()
                .filter(|&x| {
                    let i = u.grid.nearest(x).min(u.grid.n - 2);
                    (u.node(i)[0] > level) != m || (u.node(i + 1)[0] > level) == m
                })
                .last()
        };
        let elapsed = tr.times[i1] - tr.times[i0];
        let floor = FLOOR_ULPS * f64::EPSILON * half / elapsed;
        let (speed, censored) = match (right(&tr.snapshots[i0]), right(&tr.snapshots[i1])) {
            (Some(a), Some(b)) => {
                let v = (a - b) / elapsed;
                (v, !(v.abs() > floor))
            }
            _ => (f64::NAN, true),
        };
        let violations = containment_violations(&tr, &p, &wc, radius).len();
        rows.push(SweepRow { d_over_eps: d_eps, separation: d, speed, censored, containment_violations: violations });
        trajectories.push(tr);
    }
    let used: Vec<&SweepRow> = rows.iter().filter(|r| !r.censored && r.speed > 0.0).collect();
    let fit = fit_line(
        &used.iter().map(|r| r.d_over_eps).collect::<Vec<_>>(),
        &used.iter().map(|r| r.speed.ln()).collect::<Vec<_>>(),
    );
    let mut config = cfg.to_json();
    config["separations_eps"] = json!(separations_eps);
    let report = SweepReport { eps, h, relax, window, containment_radius: radius, rows, fit, config };
    Ok(SweepOutcome { report, trajectories, potential: p, wc })
}

/// Runs a sweep and writes `sweep.csv` and `sweep.json` into `out`.
pub fn cmd_speed_sweep(cfg: &ExperimentConfig, separations_eps: &[f64], out: Option<&Path>) -> Result<SweepReport> {
    let o = run_speed_sweep(cfg, separations_eps)?;
    let dir = out.unwrap_or(&cfg.output_dir);
    std::fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(dir.join("sweep.csv"))?));
    w.write_record(["d_over_eps", "separation", "speed", "censored", "containment_violations"])?;
    for r in &o.report.rows {
        w.write_record([
            format!("{:e}", r.d_over_eps),
            format!("{:e}", r.separation),
            format!("{:e}", r.speed),
            r.censored.to_string(),
            r.containment_violations.to_string(),
        ])?;
    }
    w.flush()?;
    write_json(&dir.join("sweep.json"), &o.report)?;
    Ok(o.report)
}

/// Input of the covering command.
pub enum CoveringInput {
    Points(Vec<f64>),
    Field { field: Field, potential: Potential },
}

/// Parses a points file: a JSON array or whitespace/comma separated numbers.
pub fn parse_points(text: &str) -> Result<Vec<f64>> {
    if text.trim_start().starts_with('[') {
        return serde_json::from_str(text).map_err(|e| Error::Format(format!("points file: {e}")));
    }
    text.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .enumerate()
        .map(|(i, t)| t.parse::<f64>().map_err(|_| Error::Format(format!("points file: entry {} ('{t}') is not a number", i + 1))))
        .collect()
}

/// Covering of a point set (by the merge iteration) or of a field's front set,
/// with an independent validation. Returns the JSON report and its validity.
pub fn cmd_covering(input: &CoveringInput, delta: f64, kappa: f64) -> Result<(Value, bool)> {
    match input {
        CoveringInput::Points(s) => {
            let trace = confine_traced(s, delta, kappa)?;
            let check = validate_covering(&trace.covering, &Target::Points(s));
            let rho_ok = trace.covering.rho >= delta * (1.0 - 1e-12)
                && trace.covering.rho <= delta * kappa.powi(-2 * (s.len() as i32 - 1).max(0)) * (1.0 + 1e-12);
            let valid = check.valid() && rho_ok;
            Ok((
                json!({ "input": { "points": s, "delta": delta, "kappa": kappa },
                        "covering": trace.covering, "check": check, "rho_within_bound": rho_ok,
                        "merges": trace.merges, "forced_increases": trace.forced_increases,
                        "recentered": trace.recentered, "valid": valid }),
                valid,
            ))
        }
        CoveringInput::Field { field, potential } => {
            let wc = well_constants(potential)?;
            let m0 = total_energy(field, potential).max(wc.eta0);
            let cov = confined_cover_front_set(field, potential, &wc, delta, kappa, m0)?;
            let fs = front_set(field, potential, &wc);
            let check = validate_covering(&cov, &Target::Intervals(&fs.intervals));
            Ok((
                json!({ "input": { "eps": field.eps, "delta": delta, "kappa": kappa, "potential": potential.name() },
                        "front_set": fs.intervals, "covering": cov, "check": check, "valid": check.valid() }),
                check.valid(),
            ))
        }
    }
}

/// Result of the stationary command.
pub struct StationaryOutcome {
    pub profile: StationaryProfile,
    pub summary: Value,
    pub structure: Option<StructureReport>,
}

/// Shoots the heteroclinic `from → to`; with structure settings in the config,
/// also simulates the configuration and extracts the structure of the run.
/// Writes `profile.csv`, `stationary.json` and, if requested, `structure.json`.
pub fn cmd_stationary(cfg: &ExperimentConfig, from: usize, to: usize, out: Option<&Path>) -> Result<StationaryOutcome> {
    let p = potential_by_name(&cfg.potential.name, &cfg.potential.params)?;
    let profile = shoot_heteroclinic(&p, cfg.eps, from, to, None)?;
    let (kin, pot) = profile.energy_parts(&p);
    let (om, op) = profile.tail_directions(&p);
    let summary = json!({
        "config": cfg.to_json(), "from": from, "to": to,
        "energy": kin + pot, "kinetic": kin, "potential": pot,
        "discrepancy_max": profile.discrepancy_max, "ode_residual": profile.ode_residual(&p),
        "omega_minus": om, "omega_plus": op, "nodes": profile.grid.n,
    });
    let structure = match &cfg.structure {
        Some(st) => {
            let o = run_simulation(cfg)?;
            let mut c: Constants = make_constants(o.trajectory.initial_energy(), &o.resolved.wc)?;
            c.k2 = st.k2;
            let big_r = st.big_r.unwrap_or(c.alpha0 * cfg.eps);
            Some(extract_structure(&o.trajectory, big_r, &o.resolved.potential, &o.resolved.wc, &c)?)
        }
        None => None,
    };
    let dir = out.unwrap_or(&cfg.output_dir);
    std::fs::create_dir_all(dir)?;
    profile.write_csv(BufWriter::new(File::create(dir.join("profile.csv"))?))?;
    write_json(&dir.join("stationary.json"), &summary)?;
    if let Some(rep) = &structure {
        write_json(&dir.join("structure.json"), rep)?;
    }
    Ok(StationaryOutcome { profile, summary, structure })
}

/// Names accepted by [`cmd_verify`].
pub const VERIFY_CHECKS: [&str; 5] =
    ["energy_consistency", "energy_identity", "energy_monotone", "containment", "front_tracker"];

/// Rebuilds a trajectory from exported artifacts. Rates are snapshot
/// differences, and localized series are not available.
pub fn load_trajectory(dir: &Path) -> Result<(Trajectory, Potential, Manifest)> {
    let m = read_manifest(dir)?;
    let p = Potential::register(&m.potential, m.potential_kind.clone(), m.minimizers.clone())?;
    let snaps = load_snapshots(dir, &m)?;
    if snaps.is_empty() {
        return Err(Error::Format("trajectory has no snapshots".into()));
    }
    let diff = |a: &Field, b: &Field, dt: f64| {
        let mut r = b.clone();
        r.values.iter_mut().zip(&a.values).for_each(|(v, w)| *v = (*v - w) / dt);
        r
    };
    let rates = (0..snaps.len())
        .map(|i| match (i, snaps.len()) {
            (_, 1) => diff(&snaps[0], &snaps[0], 1.0),
            (0, _) => diff(&snaps[0], &snaps[1], m.times[1] - m.times[0]),
            _ => diff(&snaps[i - 1], &snaps[i], m.times[i] - m.times[i - 1]),
        })
        .collect();
    let max_inc = m.energies.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    let tr = Trajectory {
        eps: m.eps,
        dt: m.dt,
        boundary: m.boundary,
        times: m.times.clone(),
        steps: m.times.iter().map(|t| (t / m.dt).round() as u64).collect(),
        snapshots: snaps,
        rates,
        energy_series: m.energies.clone(),
        dissipation_cum: m.dissipation.clone(),
        localized: Vec::new(),
        max_step_energy_increase: max_inc,
    };
    Ok((tr, p, m))
}

/// Runs the named checks over an exported trajectory; `radius` is the
/// containment radius (default `10 ε`). Writes `verify.json` into `dir`.
pub fn cmd_verify(dir: &Path, checks: &[String], radius: Option<f64>) -> Result<(Vec<Verdict>, bool)> {
    let names: Vec<String> =
        if checks.is_empty() { VERIFY_CHECKS.iter().map(|s| s.to_string()).collect() } else { checks.to_vec() };
    if let Some(bad) = names.iter().find(|c| !VERIFY_CHECKS.contains(&c.as_str())) {
        return Err(Error::InvalidArgument(format!("unknown check '{bad}' (known: {})", VERIFY_CHECKS.join(", "))));
    }
    let (tr, p, _m) = load_trajectory(dir)?;
    let wc = well_constants(&p)?;
    let radius = radius.unwrap_or(10.0 * tr.eps);
    let mut recomputed = tr.clone();
    recomputed.energy_series = tr.snapshots.iter().map(|u| total_energy(u, &p)).collect();
    let mut verdicts = Vec::new();
    for name in &names {
        verdicts.push(match name.as_str() {
            "energy_consistency" => {
                let worst = tr
                    .snapshots
                    .iter()
                    .zip(&tr.energy_series)
                    .map(|(u, &e)| (total_energy(u, &p) - e).abs() / e.abs().max(1.0))
                    .fold(0.0, f64::max);
                Verdict {
                    check: name.clone(),
                    params: json!({}),
                    lhs: worst,
                    rhs: ENERGY_CONSISTENCY_TOL,
                    pass: worst <= ENERGY_CONSISTENCY_TOL,
                }
            }
            "energy_identity" => {
                let e0 = tr.initial_energy();
                let worst_of = |t: &Trajectory| (0..t.len()).map(|i| energy_identity_residual(t, 0, i)).fold(0.0, f64::max);
                let (stored, fresh) = (worst_of(&tr), worst_of(&recomputed));
                let worst = stored.max(fresh);
                Verdict {
                    check: name.clone(),
                    params: json!({ "stored_energies": stored, "recomputed_energies": fresh }),
                    lhs: worst,
                    rhs: ENERGY_IDENTITY_TOL * e0,
                    pass: worst <= ENERGY_IDENTITY_TOL * e0,
                }
            }
            "energy_monotone" => {
                let a = monotone_verdict(&tr.times, &tr.energy_series);
                let b = monotone_verdict(&tr.times, &recomputed.energy_series);
                if a.pass { b } else { a }
            }
            "containment" => {
                let v = containment_violations(&tr, &p, &wc, radius);
                Verdict {
                    check: name.clone(),
                    params: json!({ "R": radius, "violations_at": v }),
                    lhs: v.len() as f64,
                    rhs: 0.0,
                    pass: v.is_empty(),
                }
            }
            _ => {
                let m0 = tr.initial_energy().max(wc.eta0);
                let c = make_constants(m0, &wc)?;
                let delta0 = TRACKER_DELTA_FACTOR * c.alpha0 * tr.eps;
                let log = front_tracker(&tr, &p, &wc, &c, delta0)?;
                let n = log.stages.len() as f64;
                let dissipation_stages = log.stages.iter().filter(|s| s.case == crate::diagnostics::StageCase::Dissipation).count();
                Verdict {
                    check: name.clone(),
                    params: json!({ "delta0": delta0, "stages": log.stages.len(),
                                    "dissipation_stages": dissipation_stages,
                                    "containment_ok": log.containment_ok, "splits": log.splits.len() }),
                    lhs: n,
                    rhs: log.stage_ceiling,
                    pass: n <= log.stage_ceiling && log.containment_ok,
                }
            }
        });
    }
    let pass = verdicts.iter().all(|v| v.pass);
    write_json(
        &dir.join("verify.json"),
        &json!({ "dir": dir, "checks": names, "radius": radius, "pass": pass, "verdicts": verdicts }),
    )?;
    Ok((verdicts, pass))
}

/// Writes a field as CSV at `path`.
pub fn write_field(path: &Path, u: &Field) -> Result<()> {
    write_field_csv(u, BufWriter::new(File::create(path)?))
}
