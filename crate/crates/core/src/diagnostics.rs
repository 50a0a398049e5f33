//! Literal constants of the slow-motion analysis, stopping times, runtime checks
//! of the off-front estimates and the stage-by-stage front tracker.
//!
//! Several constants (`β0`, `γ0`, `K0`) overflow `f64` for realistic energies,
//! so they are kept as natural logarithms. Exponentials of them saturate to
//! `+∞` or `0` and every consumer is written to cope with that.

use crate::error::{Error, Result};
use crate::evolve::Trajectory;
use crate::frontset::{front_set, n_opt_covering, Covering, FrontSet};
use crate::grid::{energy_density, integrate_range, Field};
use crate::potential::{Potential, WellConstants};
use serde::{Deserialize, Serialize};
use serde_json::json;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    pub m0: f64,
    pub eta0: f64,
    /// `32 M0/η0`.
    pub alpha0: f64,
    /// `η0/(16 M0) = 2/α0`.
    pub kappa0: f64,
    /// `ln(4 α0^{α0/16})`.
    pub ln_beta0: f64,
    /// `ln max{α0 β0, (α0³/k_V) ln(4α0² K_V), sqrt(6 K_V α0/k_V)}`.
    pub ln_gamma0: f64,
    /// `2^15 (1 + 4 max_i λ_i^+/λ_i^-)`.
    pub k_cap_v: f64,
    /// `min_i min(λ_i^-, sqrt(λ_i^-/2)/6)`.
    pub k_small_v: f64,
    /// `ln K0` with `K0 = β0^{M0/η0} α0^{α0/16} (α0/2 + 4) max{(24 K_V α0)^{1/4}, 2/k_V}`.
    pub ln_k0: f64,
    /// Calibrated pointwise-decay constant, if any.
    pub k1: Option<f64>,
    /// Calibrated structure constant, if any.
    pub k2: Option<f64>,
}

impl Constants {
    pub fn beta0(&self) -> f64 {
        self.ln_beta0.exp()
    }

    pub fn gamma0(&self) -> f64 {
        self.ln_gamma0.exp()
    }

    pub fn k0(&self) -> f64 {
        self.ln_k0.exp()
    }

    /// `ln` of the horizon `(R/K0)² exp(R/(K0 ε))`.
    pub fn ln_horizon(&self, r: f64, eps: f64) -> f64 {
        2.0 * (r.ln() - self.ln_k0) + r / eps * (-self.ln_k0).exp()
    }

    /// Largest stage count allowed by the iteration: `(M0/η0 + 1)(4 M0/η0) + 1`.
    pub fn stage_ceiling(&self) -> f64 {
        let q = self.m0 / self.eta0;
        (q + 1.0) * 4.0 * q + 1.0
    }
}

/// All constants from `M0` and the well data by their literal formulas.
pub fn make_constants(m0: f64, wc: &WellConstants) -> Result<Constants> {
    if !(m0 >= wc.eta0) {
        return Err(Error::Precondition(format!("M0 = {m0} is below η0 = {}", wc.eta0)));
    }
    let eta0 = wc.eta0;
    let alpha0 = 32.0 * m0 / eta0;
    let ratio = wc
        .lambda_plus
        .iter()
        .zip(&wc.lambda_minus)
        .map(|(p, m)| p / m)
        .fold(0.0, f64::max);
    let k_cap_v = 2f64.powi(15) * (1.0 + 4.0 * ratio);
    let k_small_v = wc
        .lambda_minus
        .iter()
        .map(|&l| l.min((l / 2.0).sqrt() / 6.0))
        .fold(f64::INFINITY, f64::min);
    let ln_beta0 = 4f64.ln() + alpha0 / 16.0 * alpha0.ln();
    let g1 = alpha0.ln() + ln_beta0;
    let g2 = (alpha0.powi(3) / k_small_v * (4.0 * alpha0 * alpha0 * k_cap_v).ln()).ln();
    let g3 = 0.5 * (6.0 * k_cap_v * alpha0 / k_small_v).ln();
    let ln_gamma0 = g1.max(g2).max(g3);
    let ln_k0 = m0 / eta0 * ln_beta0
        + alpha0 / 16.0 * alpha0.ln()
        + (alpha0 / 2.0 + 4.0).ln()
        + (0.25 * (24.0 * k_cap_v * alpha0).ln()).max((2.0 / k_small_v).ln());
    Ok(Constants {
        m0,
        eta0,
        alpha0,
        kappa0: eta0 / (16.0 * m0),
        ln_beta0,
        ln_gamma0,
        k_cap_v,
        k_small_v,
        ln_k0,
        k1: None,
        k2: None,
    })
}

/// JSON verdict record of a single check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub check: String,
    pub params: serde_json::Value,
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

/// Exit, dissipation and target times of one stage.
///
/// Exit and dissipation are detected at snapshot resolution: the event lies in
/// `(t*_prev, t*]`. Unobserved events are `+∞`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoppingState {
    pub t_start: f64,
    pub covering: Covering,
    pub t1: f64,
    pub t1_prev: f64,
    pub t2: f64,
    pub t2_prev: f64,
    pub t3: f64,
    /// Last snapshot time examined.
    pub horizon: f64,
}

/// `ln(T3 - t) = ln(ρ²/(2 sqrt(6 K_V α0))) + (k_V/2) ρ/ε`.
pub fn ln_target_delay(rho: f64, eps: f64, c: &Constants) -> f64 {
    2.0 * rho.ln() - (2.0 * (6.0 * c.k_cap_v * c.alpha0).sqrt()).ln() + 0.5 * c.k_small_v * rho / eps
}

impl StoppingState {
    pub fn new(t_start: f64, covering: Covering, eps: f64, c: &Constants) -> StoppingState {
        let t3 = t_start + ln_target_delay(covering.rho, eps, c).exp();
        StoppingState {
            t_start,
            covering,
            t1: f64::INFINITY,
            t1_prev: t_start,
            t2: f64::INFINITY,
            t2_prev: t_start,
            t3,
            horizon: t_start,
        }
    }
}

fn escapes(fs: &FrontSet, centers: &[f64], rho: f64) -> bool {
    fs.intervals
        .iter()
        .any(|&(a, b)| !centers.iter().any(|&c| c - rho <= a && b <= c + rho))
}

/// Scans snapshots after `st.t_start` for the exit and dissipation times.
pub fn watch_stopping_times(tr: &Trajectory, p: &Potential, st: &StoppingState, wc: &WellConstants) -> StoppingState {
    let mut out = st.clone();
    let start = tr.index_at(st.t_start);
    let d_start = tr.dissipation_cum[start];
    let mut prev = tr.times[start];
    for j in start..tr.len() {
        let t = tr.times[j];
        out.horizon = t;
        if out.t1.is_infinite() && escapes(&front_set(&tr.snapshots[j], p, wc), &st.covering.points, st.covering.rho) {
            out.t1 = t;
            out.t1_prev = prev;
        }
        if out.t2.is_infinite() && tr.dissipation_cum[j] - d_start >= wc.eta0 / 8.0 {
            out.t2 = t;
            out.t2_prev = prev;
        }
        prev = t;
    }
    out
}

/// Well nearest to the field at `x`, with its eigenvalue bounds.
fn well_at(u: &Field, p: &Potential, x: f64) -> usize {
    p.dist_to_wells(u.node(u.grid.nearest(x))).1
}

/// `M0 (1 + 4λ+/λ-) [exp(-λ-(s-t)/ε²) + 2^14 (s-t)/r² exp(-sqrt(λ-/2) r/(12 ε))]`.
pub fn offfront_bound(m0: f64, lminus: f64, lplus: f64, dt: f64, r: f64, eps: f64) -> f64 {
    m0 * (1.0 + 4.0 * lplus / lminus)
        * ((-lminus * dt / (eps * eps)).exp()
            + 2f64.powi(14) * dt / (r * r) * (-(lminus / 2.0).sqrt() * r / (12.0 * eps)).exp())
}

fn half_window_energy(u: &Field, p: &Potential, x: f64, r: f64) -> f64 {
    integrate_range(&u.grid, &energy_density(u, p).energy, x - 0.5 * r, x + 0.5 * r)
}

fn check_window(u: &Field, a: f64, b: f64) -> Result<()> {
    if a < u.grid.x_min || b > u.grid.x_max {
        return Err(Error::Precondition(format!(
            "window [{a}, {b}] leaves the domain [{}, {}]",
            u.grid.x_min, u.grid.x_max
        )));
    }
    Ok(())
}

/// Energy bound on `[x - r/2, x + r/2]` at snapshot `si` when the front set
/// avoids `[x - r, x + r]` at snapshot `ti`.
///
/// Requires `r >= α0 ε` and `t_s - t_t <= α0^{-3} r²`; violations are
/// `Error::Precondition`, distinct from a failing verdict.
#[allow(clippy::too_many_arguments)]
pub fn check_regularisation(
    tr: &Trajectory,
    p: &Potential,
    x: f64,
    r: f64,
    ti: usize,
    si: usize,
    wc: &WellConstants,
    c: &Constants,
) -> Result<Verdict> {
    let (ut, us) = (&tr.snapshots[ti], &tr.snapshots[si]);
    let eps = tr.eps;
    if r < c.alpha0 * eps {
        return Err(Error::Precondition(format!("r = {r} is below α0 ε = {}", c.alpha0 * eps)));
    }
    let dt = tr.times[si] - tr.times[ti];
    if dt < 0.0 || dt > r * r / c.alpha0.powi(3) {
        return Err(Error::Precondition(format!("s - t = {dt} outside [0, α0^-3 r²]")));
    }
    check_window(ut, x - r, x + r)?;
    if front_set(ut, p, wc).intersects(x - r, x + r) {
        return Err(Error::Precondition(format!("front set meets [{}, {}] at t", x - r, x + r)));
    }
    let i = well_at(ut, p, x);
    let lhs = half_window_energy(us, p, x, r);
    let rhs = offfront_bound(c.m0, wc.lambda_minus[i], wc.lambda_plus[i], dt, r, eps);
    let clear = !front_set(us, p, wc).intersects(x - 0.5 * r, x + 0.5 * r);
    Ok(Verdict {
        check: "regularisation".into(),
        params: json!({"x": x, "r": r, "t": tr.times[ti], "s": tr.times[si], "well": i, "half_window_clear": clear}),
        lhs,
        rhs,
        pass: lhs <= rhs && clear,
    })
}

/// Same bound under the hypothesis `v ∈ B(σ_i, µ0)` on `[x - 3r/4, x + 3r/4] × [t, s]`,
/// verified on every stored snapshot in the window.
#[allow(clippy::too_many_arguments)]
pub fn check_offfront(
    tr: &Trajectory,
    p: &Potential,
    x: f64,
    r: f64,
    ti: usize,
    si: usize,
    wc: &WellConstants,
    m0: f64,
) -> Result<Verdict> {
    if si < ti || !(r > 0.0) {
        return Err(Error::Precondition(format!("need t <= s and r > 0 (t index {ti}, s index {si}, r = {r})")));
    }
    let (a, b) = (x - 0.75 * r, x + 0.75 * r);
    check_window(&tr.snapshots[ti], a, b)?;
    let well = well_at(&tr.snapshots[ti], p, x);
    let sigma = &p.minimizers()[well];
    for j in ti..=si {
        let u = &tr.snapshots[j];
        for n in 0..u.grid.n {
            let xn = u.grid.x(n);
            if xn >= a && xn <= b {
                let d = u.node(n).iter().zip(sigma).map(|(v, s)| (v - s).powi(2)).sum::<f64>().sqrt();
                if d >= wc.mu0 {
                    return Err(Error::Precondition(format!(
                        "v leaves B(σ_{well}, µ0) at x = {xn}, t = {}",
                        tr.times[j]
                    )));
                }
            }
        }
    }
    let dt = tr.times[si] - tr.times[ti];
    let lhs = half_window_energy(&tr.snapshots[si], p, x, r);
    let rhs = offfront_bound(m0, wc.lambda_minus[well], wc.lambda_plus[well], dt, r, tr.eps);
    Ok(Verdict {
        check: "offfront".into(),
        params: json!({"x": x, "r": r, "t": tr.times[ti], "s": tr.times[si], "well": well}),
        lhs,
        rhs,
        pass: lhs <= rhs,
    })
}

/// `K1 M0 ε^{-1} [exp(-t/(K1 ε²)) + (t/R²) exp(-R/(K1 ε))]`.
pub fn decay_bound(k1: f64, m0: f64, eps: f64, t: f64, r: f64) -> f64 {
    k1 * m0 / eps * ((-t / (k1 * eps * eps)).exp() + t / (r * r) * (-r / (k1 * eps)).exp())
}

/// Largest value of `ε³|v_t|² + e` on `[x0 - R/2, x0 + R/2]` at snapshot `ti`.
pub fn pointwise_decay_lhs(tr: &Trajectory, p: &Potential, x0: f64, r: f64, ti: usize) -> f64 {
    let u = &tr.snapshots[ti];
    let vt = &tr.rates[ti];
    let e = energy_density(u, p).energy;
    let eps3 = tr.eps.powi(3);
    (0..u.grid.n)
        .filter(|&n| (u.grid.x(n) - x0).abs() <= 0.5 * r)
        .map(|n| eps3 * vt.node(n).iter().map(|v| v * v).sum::<f64>() + e[n])
        .fold(0.0, f64::max)
}

/// Pointwise decay on `[x0 - R/2, x0 + R/2]` at snapshot `ti` with the calibrated `K1`.
///
/// Requires `R >= α0 ε`, `t >= ε²` and `[x0 - 2R, x0 + 2R] ∩ 𝓓(0) = ∅`. The
/// literal horizon `(R/K0)² exp(R/(K0 ε))` is reported but not enforced.
pub fn check_pointwise_decay(
    tr: &Trajectory,
    p: &Potential,
    x0: f64,
    r: f64,
    ti: usize,
    wc: &WellConstants,
    c: &Constants,
) -> Result<Verdict> {
    let k1 = c.k1.ok_or_else(|| Error::Precondition("K1 has not been calibrated".into()))?;
    let eps = tr.eps;
    let t = tr.times[ti] - tr.times[0];
    if r < c.alpha0 * eps {
        return Err(Error::Precondition(format!("R = {r} is below α0 ε = {}", c.alpha0 * eps)));
    }
    if t < eps * eps {
        return Err(Error::Precondition(format!("t = {t} is below ε²")));
    }
    check_window(&tr.snapshots[0], x0 - 2.0 * r, x0 + 2.0 * r)?;
    if front_set(&tr.snapshots[0], p, wc).intersects(x0 - 2.0 * r, x0 + 2.0 * r) {
        return Err(Error::Precondition("front set meets [x0 - 2R, x0 + 2R] at t = 0".into()));
    }
    let lhs = pointwise_decay_lhs(tr, p, x0, r, ti);
    let rhs = decay_bound(k1, c.m0, eps, t, r);
    Ok(Verdict {
        check: "pointwise_decay".into(),
        params: json!({
            "x0": x0, "R": r, "t": t, "K1": k1,
            "ln_literal_horizon": c.ln_horizon(r, eps),
            "within_literal_horizon": t.ln() <= c.ln_horizon(r, eps),
        }),
        lhs,
        rhs,
        pass: lhs <= rhs,
    })
}

/// One calibration sample for `K1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecaySample {
    pub lhs: f64,
    pub m0: f64,
    pub eps: f64,
    pub t: f64,
    pub r: f64,
}

/// Smallest `K` with `lhs <= decay_bound(K, ...)` for every sample, found by
/// bisection (the bound increases with `K`), times `safety`.
pub fn calibrate_k1(samples: &[DecaySample], safety: f64) -> Result<f64> {
    calibrate_monotone(
        |k| samples.iter().all(|s| s.lhs <= decay_bound(k, s.m0, s.eps, s.t, s.r)),
        safety,
        "K1",
    )
}

/// Smallest `K > 0` accepted by `ok`, which must be monotone in `K`, times `safety`.
pub(crate) fn calibrate_monotone(ok: impl Fn(f64) -> bool, safety: f64, name: &str) -> Result<f64> {
    let mut hi = 1.0;
    while !ok(hi) {
        hi *= 2.0;
        if hi > 1e300 {
            return Err(Error::NoConvergence(format!("no finite {name} satisfies the samples")));
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi * safety)
}

/// Checks `𝓓(t) ⊂ 𝓓(0) + [-R, R]` at every snapshot; returns the failing times.
pub fn containment_violations(tr: &Trajectory, p: &Potential, wc: &WellConstants, r: f64) -> Vec<f64> {
    let base = front_set(&tr.snapshots[0], p, wc);
    tr.snapshots
        .iter()
        .zip(&tr.times)
        .filter(|(u, _)| !front_set(u, p, wc).contained_in_neighborhood(&base, r))
        .map(|(_, &t)| t)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StageCase {
    /// Target time reached before exit; iteration stops.
    Target,
    /// Dissipation time before exit; scale reset to `δ0`.
    Dissipation,
    /// Exit first; scale divided by `β0`.
    Splitting,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub t_n: f64,
    pub delta_n: f64,
    pub rho_n: f64,
    pub covering: Covering,
    pub case: StageCase,
    pub times: StoppingState,
    /// True when the stage ended because the stored trajectory ran out.
    pub censored: bool,
    /// `𝓓(s) ⊂ 𝓓(t_n) + [-2ρ_n, 2ρ_n]` for stored `s` in the stage.
    pub containment_ok: bool,
}

/// `n_opt` before and after a splitting event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub t_before: f64,
    pub t_after: f64,
    pub n_before: usize,
    /// `None` when the refined scale violates `κ0 δ > 2ε`.
    pub n_after: Option<usize>,
    pub increment_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackerLog {
    pub stages: Vec<Stage>,
    pub containment_ok: bool,
    pub n_opt_series: Vec<usize>,
    pub splits: Vec<SplitRecord>,
    pub dissipation_stages: usize,
    pub stage_ceiling: f64,
    /// `4 M0/η0`, the stated bound on dissipation stages.
    pub dissipation_ceiling_stated: f64,
    /// `8 M0/η0`, the bound implied by the `η0/8` dissipation threshold.
    pub dissipation_ceiling_implied: f64,
}

/// Replays the stage iteration on a stored trajectory starting at its first snapshot.
pub fn front_tracker(
    tr: &Trajectory,
    p: &Potential,
    wc: &WellConstants,
    c: &Constants,
    delta0: f64,
) -> Result<TrackerLog> {
    let eps = tr.eps;
    if !(c.kappa0 * delta0 > 2.0 * eps) {
        return Err(Error::Precondition(format!(
            "κ0 δ0 = {} must exceed 2ε = {}",
            c.kappa0 * delta0,
            2.0 * eps
        )));
    }
    let mut log = TrackerLog {
        stages: Vec::new(),
        containment_ok: true,
        n_opt_series: Vec::new(),
        splits: Vec::new(),
        dissipation_stages: 0,
        stage_ceiling: c.stage_ceiling(),
        dissipation_ceiling_stated: 4.0 * c.m0 / c.eta0,
        dissipation_ceiling_implied: 8.0 * c.m0 / c.eta0,
    };
    let t_end = *tr.times.last().unwrap();
    let mut idx = 0;
    let mut delta = delta0;
    loop {
        let u = &tr.snapshots[idx];
        let cov = n_opt_covering(u, p, wc, delta, c.kappa0, c.m0)?;
        log.n_opt_series.push(cov.points.len());
        let st = StoppingState::new(tr.times[idx], cov.clone(), eps, c);
        let st = watch_stopping_times(tr, p, &st, wc);
        let (case, censored, next_t) = if st.t3 <= t_end && st.t3 < st.t1 {
            (StageCase::Target, false, st.t3)
        } else if st.t2.is_finite() && st.t2 < st.t1 {
            (StageCase::Dissipation, false, st.t2)
        } else if st.t1.is_finite() {
            (StageCase::Splitting, false, st.t1 - 4.0 * c.kappa0 * delta * delta / c.alpha0.powi(3))
        } else {
            (StageCase::Target, true, t_end)
        };
        let base = front_set(u, p, wc);
        let last = tr.index_at(next_t.min(t_end));
        let containment_ok = (idx..=last.max(idx))
            .all(|j| front_set(&tr.snapshots[j], p, wc).contained_in_neighborhood(&base, 2.0 * cov.rho));
        log.containment_ok &= containment_ok;
        log.stages.push(Stage {
            t_n: tr.times[idx],
            delta_n: delta,
            rho_n: cov.rho,
            covering: cov.clone(),
            case,
            times: st.clone(),
            censored,
            containment_ok,
        });
        if log.stages.len() as f64 > log.stage_ceiling {
            return Err(Error::Constants(format!("stage count exceeds the ceiling {}", log.stage_ceiling)));
        }
        match case {
            StageCase::Target => break,
            StageCase::Dissipation => {
                log.dissipation_stages += 1;
                delta = delta0;
                let next = tr.index_at(next_t);
                if next <= idx {
                    break;
                }
                idx = next;
            }
            StageCase::Splitting => {
                let refined = delta / c.beta0();
                // Snapshot resolution: the stage restarts at the last stored time <= T1⁻.
                let next = tr.index_at(next_t.max(tr.times[idx]));
                let n_after = n_opt_covering(&tr.snapshots[next], p, wc, refined, c.kappa0, c.m0)
                    .ok()
                    .map(|cv| cv.points.len());
                log.splits.push(SplitRecord {
                    t_before: tr.times[idx],
                    t_after: tr.times[next],
                    n_before: cov.points.len(),
                    n_after,
                    increment_ok: n_after.is_some_and(|n| n > cov.points.len()),
                });
                if n_after.is_none() || next <= idx {
                    break;
                }
                delta = refined;
                idx = next;
            }
        }
    }
    Ok(log)
}
