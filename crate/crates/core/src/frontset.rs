//! Front sets `𝓓(u) = {x : dist(u(x), Σ) >= µ0}`, the clearing-out test and
//! κ-confined coverings.
//!
//! A κ-confined covering `(J, ρ)` of a set `S` satisfies
//! (i) `S ⊂ ∪_{a∈J} B(a, κρ)` with every ball meeting `S`, and
//! (ii) `|a - b| >= ρ/κ` for distinct `a, b ∈ J`. Balls are closed.

use crate::error::{Error, Result};
use crate::grid::{energy_density, integrate_range, Field};
use crate::potential::{Potential, WellConstants};
use serde::{Deserialize, Serialize};

/// Relative tolerance of the covering validators.
const VALID_TOL: f64 = 1e-12;
/// Largest number of unit-ball points accepted by the exhaustive `n_opt` search.
pub const N_OPT_MAX_POINTS: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontSet {
    /// Sorted, pairwise disjoint closed intervals.
    pub intervals: Vec<(f64, f64)>,
    /// Interval midpoints.
    pub points: Vec<f64>,
    pub mu0: f64,
}

impl FrontSet {
    pub fn empty(mu0: f64) -> FrontSet {
        FrontSet { intervals: Vec::new(), points: Vec::new(), mu0 }
    }

    pub fn from_intervals(intervals: Vec<(f64, f64)>, mu0: f64) -> FrontSet {
        let points = intervals.iter().map(|(a, b)| 0.5 * (a + b)).collect();
        FrontSet { intervals, points, mu0 }
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    /// True when some interval meets the closed interval `[a, b]`.
    pub fn intersects(&self, a: f64, b: f64) -> bool {
        self.intervals.iter().any(|&(l, r)| l <= b && r >= a)
    }

    /// Distance from `x` to the front set (infinite when empty).
    pub fn dist(&self, x: f64) -> f64 {
        self.intervals
            .iter()
            .map(|&(l, r)| if x < l { l - x } else if x > r { x - r } else { 0.0 })
            .fold(f64::INFINITY, f64::min)
    }

    /// True when `self ⊂ other + [-r, r]`.
    pub fn contained_in_neighborhood(&self, other: &FrontSet, r: f64) -> bool {
        let grown = merge_intervals(other.intervals.iter().map(|&(a, b)| (a - r, b + r)).collect());
        self.intervals
            .iter()
            .all(|&(a, b)| grown.iter().any(|&(l, h)| l <= a && b <= h))
    }
}

fn merge_intervals(mut v: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    v.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(v.len());
    for (a, b) in v {
        match out.last_mut() {
            Some(last) if a <= last.1 => last.1 = last.1.max(b),
            _ => out.push((a, b)),
        }
    }
    out
}

/// Marks nodes with `dist(u, Σ) >= µ0` and refines interval ends by linear
/// interpolation of `dist - µ0`.
pub fn front_set(u: &Field, p: &Potential, wc: &WellConstants) -> FrontSet {
    let n = u.grid.n;
    let g: Vec<f64> = (0..n).map(|i| p.dist_to_wells(u.node(i)).0 - wc.mu0).collect();
    let cross = |i: usize| u.grid.x(i) + u.grid.h * (-g[i]) / (g[i + 1] - g[i]);
    let mut intervals = Vec::new();
    let mut i = 0;
    while i < n {
        if g[i] < 0.0 {
            i += 1;
            continue;
        }
        let start = i;
        while i + 1 < n && g[i + 1] >= 0.0 {
            i += 1;
        }
        let lo = if start == 0 { u.grid.x(0) } else { cross(start - 1) };
        let hi = if i == n - 1 { u.grid.x(n - 1) } else { cross(i) };
        intervals.push((lo, hi));
        i += 1;
    }
    FrontSet::from_intervals(intervals, wc.mu0)
}

/// Returns whether `∫_I e <= η0`; when it is, the front set must avoid `I`.
///
/// A low-energy interval that still meets the front set yields `Error::Constants`.
pub fn clearing_out(u: &Field, interval: (f64, f64), wc: &WellConstants, p: &Potential) -> Result<bool> {
    let (a, b) = interval;
    if !(b - a >= u.eps * (1.0 - 1e-12)) {
        return Err(Error::InvalidArgument(format!("interval [{a}, {b}] is shorter than eps = {}", u.eps)));
    }
    let e = energy_density(u, p).energy;
    let local = integrate_range(&u.grid, &e, a, b);
    if local > wc.eta0 {
        return Ok(false);
    }
    let fs = front_set(u, p, wc);
    let node_hit = (0..u.grid.n)
        .filter(|&i| (a..=b).contains(&u.grid.x(i)))
        .any(|i| p.dist_to_wells(u.node(i)).0 >= wc.mu0);
    if node_hit || fs.intersects(a, b) {
        return Err(Error::Constants(format!(
            "∫e = {local:e} <= η0 = {:e} on [{a}, {b}] but the front set meets it",
            wc.eta0
        )));
    }
    Ok(true)
}

/// Greedy cover of the front set by intervals `[x - ε, x + ε]`, each meeting the set.
///
/// Fails with `Error::Constants` when more than `M0/η0` points are needed.
pub fn cover_by_unit_balls(fs: &FrontSet, eps: f64, m0: f64, eta0: f64) -> Result<Vec<f64>> {
    let mut pts: Vec<f64> = Vec::new();
    let mut covered_to = f64::NEG_INFINITY;
    for &(a, b) in &fs.intervals {
        if covered_to >= b {
            continue;
        }
        let mut left = a.max(covered_to);
        loop {
            let x = left + eps;
            pts.push(x);
            covered_to = x + eps;
            if covered_to >= b {
                break;
            }
            left = covered_to;
        }
    }
    let bound = m0 / eta0;
    if pts.len() as f64 > bound {
        return Err(Error::Constants(format!(
            "{} unit balls exceed the bound M0/η0 = {bound}",
            pts.len()
        )));
    }
    Ok(pts)
}

/// A candidate κ-confined covering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Covering {
    pub points: Vec<f64>,
    pub rho: f64,
    pub kappa: f64,
}

/// Set to be covered.
#[derive(Debug, Clone, PartialEq)]
pub enum Target<'a> {
    Points(&'a [f64]),
    Intervals(&'a [(f64, f64)]),
}

impl Target<'_> {
    fn dist(&self, x: f64) -> f64 {
        match self {
            Target::Points(s) => s.iter().map(|y| (x - y).abs()).fold(f64::INFINITY, f64::min),
            Target::Intervals(v) => v
                .iter()
                .map(|&(l, r)| if x < l { l - x } else if x > r { x - r } else { 0.0 })
                .fold(f64::INFINITY, f64::min),
        }
    }

    fn is_empty(&self) -> bool {
        match self {
            Target::Points(s) => s.is_empty(),
            Target::Intervals(v) => v.is_empty(),
        }
    }

    /// `sup_{x ∈ target} min_{a ∈ centers} |x - a|` for sorted `centers`.
    fn cover_radius(&self, centers: &[f64]) -> f64 {
        let near = |x: f64| centers.iter().map(|a| (x - a).abs()).fold(f64::INFINITY, f64::min);
        match self {
            Target::Points(s) => s.iter().map(|&x| near(x)).fold(0.0, f64::max),
            Target::Intervals(v) => {
                let mut worst: f64 = 0.0;
                for &(l, r) in v.iter() {
                    worst = worst.max(near(l)).max(near(r));
                    for w in centers.windows(2) {
                        let m = 0.5 * (w[0] + w[1]);
                        if m > l && m < r {
                            worst = worst.max(near(m));
                        }
                    }
                }
                worst
            }
        }
    }
}

/// Outcome of the two conditions of a κ-confined covering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoveringCheck {
    pub covers: bool,
    pub balls_meet_target: bool,
    pub separated: bool,
}

impl CoveringCheck {
    pub fn valid(&self) -> bool {
        self.covers && self.balls_meet_target && self.separated
    }
}

/// Direct check of both conditions, independent of the search routines.
pub fn validate_covering(c: &Covering, target: &Target) -> CoveringCheck {
    let r = c.kappa * c.rho * (1.0 + VALID_TOL);
    let sep = c.rho / c.kappa * (1.0 - VALID_TOL);
    let balls_meet_target = c.points.iter().all(|&a| target.dist(a) <= r);
    let mut separated = true;
    for i in 0..c.points.len() {
        for j in i + 1..c.points.len() {
            if (c.points[i] - c.points[j]).abs() < sep {
                separated = false;
            }
        }
    }
    let covers = match target {
        Target::Points(s) => s.iter().all(|&x| c.points.iter().any(|&a| (x - a).abs() <= r)),
        Target::Intervals(v) => {
            let balls = merge_intervals(c.points.iter().map(|&a| (a - r, a + r)).collect());
            v.iter().all(|&(l, h)| balls.iter().any(|&(bl, bh)| bl <= l && h <= bh))
        }
    };
    CoveringCheck { covers, balls_meet_target, separated }
}

/// Details of a [`confine`] run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfineTrace {
    pub covering: Covering,
    /// Number of points dropped by the merge iteration.
    pub merges: usize,
    /// Number of scale increases not tied to a merge.
    pub forced_increases: usize,
    /// True when clusters had to be re-centered to restore condition (i).
    pub recentered: bool,
}

struct Cluster {
    center: f64,
    members: Vec<f64>,
}

impl Cluster {
    fn radius(&self) -> f64 {
        self.members.iter().map(|m| (m - self.center).abs()).fold(0.0, f64::max)
    }
}

/// Merge iteration: starting from `J = S`, `ρ = δ`, repeatedly drops the left
/// point of the first pair closer than `ρ/κ` and sets `ρ ← ρ/κ²`.
///
/// Points absorbed through a chain of merges can end up farther than `κρ` from
/// the surviving center. In that case each cluster is re-centered on its
/// member of smallest radius and merging resumes until both conditions hold.
pub fn confine_traced(s: &[f64], delta: f64, kappa: f64) -> Result<ConfineTrace> {
    if s.is_empty() || !(delta > 0.0) || !(kappa > 0.0 && kappa < 1.0) || s.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "confine needs nonempty finite S, δ > 0, 0 < κ < 1 (got |S| = {}, δ = {delta}, κ = {kappa})",
            s.len()
        )));
    }
    let mut sorted = s.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut cl: Vec<Cluster> = sorted.iter().map(|&x| Cluster { center: x, members: vec![x] }).collect();
    let mut rho = delta;
    let mut merges = 0;
    let mut forced = 0;
    let mut recentered = false;
    loop {
        while let Some(i) = (0..cl.len().saturating_sub(1)).find(|&i| cl[i + 1].center - cl[i].center < rho / kappa) {
            let dropped = cl.remove(i);
            cl[i].members.extend(dropped.members);
            rho /= kappa * kappa;
            merges += 1;
        }
        let reach = kappa * rho * (1.0 + VALID_TOL);
        if cl.iter().all(|c| c.radius() <= reach) {
            break;
        }
        recentered = true;
        for c in cl.iter_mut() {
            let best = c
                .members
                .iter()
                .map(|&m| (c.members.iter().map(|x| (x - m).abs()).fold(0.0, f64::max), m))
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)))
                .map(|(_, m)| m)
                .unwrap_or(c.center);
            c.center = best;
        }
        cl.sort_by(|a, b| a.center.total_cmp(&b.center));
        let separated = cl.windows(2).all(|w| w[1].center - w[0].center >= rho / kappa);
        if separated && cl.iter().all(|c| c.radius() <= reach) {
            break;
        }
        if separated {
            rho /= kappa * kappa;
            forced += 1;
        }
    }
    let covering = Covering { points: cl.iter().map(|c| c.center).collect(), rho, kappa };
    Ok(ConfineTrace { covering, merges, forced_increases: forced, recentered })
}

/// κ-confined covering of the point set `s` at a scale `ρ >= δ`.
pub fn confine(s: &[f64], delta: f64, kappa: f64) -> Result<Covering> {
    Ok(confine_traced(s, delta, kappa)?.covering)
}

/// `ln((κ/2)^{-2M0/η0} δ)`, the largest admissible scale for front-set coverings.
pub fn ln_rho_max(delta: f64, kappa: f64, m0: f64, eta0: f64) -> f64 {
    delta.ln() - 2.0 * m0 / eta0 * (0.5 * kappa).ln()
}

fn check_front_cover_pre(delta: f64, kappa: f64, eps: f64) -> Result<()> {
    if !(kappa > 0.0 && kappa < 1.0) || !(kappa * delta > 2.0 * eps) {
        return Err(Error::Precondition(format!(
            "need 0 < κ < 1 and κδ > 2ε (κ = {kappa}, δ = {delta}, ε = {eps})"
        )));
    }
    Ok(())
}

/// Unit-ball cover of `𝓓(u)` confined at rate `κ/2`, then read as a κ-confined
/// covering of `𝓓(u)` itself (balls of radius `(κ/2)ρ + ε <= κρ`).
pub fn confined_cover_front_set(
    u: &Field,
    p: &Potential,
    wc: &WellConstants,
    delta: f64,
    kappa: f64,
    m0: f64,
) -> Result<Covering> {
    let eps = u.eps;
    check_front_cover_pre(delta, kappa, eps)?;
    let fs = front_set(u, p, wc);
    if fs.is_empty() {
        return Ok(Covering { points: Vec::new(), rho: delta, kappa });
    }
    let pts = cover_by_unit_balls(&fs, eps, m0, wc.eta0)?;
    let half = confine(&pts, delta, 0.5 * kappa)?;
    let cov = Covering { points: half.points, rho: half.rho, kappa };
    let check = validate_covering(&cov, &Target::Intervals(&fs.intervals));
    if !check.valid() {
        return Err(Error::Constants(format!("front-set covering fails validation: {check:?}")));
    }
    if cov.rho.ln() > ln_rho_max(delta, kappa, m0, wc.eta0) + 1e-12 {
        return Err(Error::Constants(format!("covering scale {} exceeds its ceiling", cov.rho)));
    }
    Ok(cov)
}

/// Exact admissible `[ρ_lo, ρ_hi]` for centers `j` (sorted), if nonempty.
fn rho_window(j: &[f64], target: &Target, delta: f64, kappa: f64, rho_max: f64) -> Option<(f64, f64)> {
    let meet = j.iter().map(|&a| target.dist(a)).fold(0.0, f64::max);
    let lo = delta.max(target.cover_radius(j) / kappa).max(meet / kappa);
    let gap = j.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    let hi = rho_max.min(kappa * gap);
    (lo <= hi * (1.0 + VALID_TOL)).then_some((lo, hi))
}

/// Smallest covering with centers drawn from `candidates`, scale in `[δ, ρ_max]`;
/// ties are broken by the smallest scale.
pub fn best_covering(
    target: &Target,
    candidates: &[f64],
    delta: f64,
    kappa: f64,
    rho_max: f64,
) -> Result<Option<Covering>> {
    if target.is_empty() {
        return Ok(Some(Covering { points: Vec::new(), rho: delta, kappa }));
    }
    let l = candidates.len();
    if l > N_OPT_MAX_POINTS.max(16) {
        return Err(Error::TooLarge(format!("{l} candidate points")));
    }
    let mut cand = candidates.to_vec();
    cand.sort_by(f64::total_cmp);
    let mut best: Option<Covering> = None;
    let mut subset = Vec::with_capacity(l);
    for mask in 1u32..(1u32 << l) {
        let size = mask.count_ones() as usize;
        if let Some(b) = &best {
            if size > b.points.len() {
                continue;
            }
        }
        subset.clear();
        subset.extend((0..l).filter(|i| mask & (1 << i) != 0).map(|i| cand[i]));
        if let Some((lo, _)) = rho_window(&subset, target, delta, kappa, rho_max) {
            let better = match &best {
                None => true,
                Some(b) => size < b.points.len() || (size == b.points.len() && lo < b.rho),
            };
            if better {
                best = Some(Covering { points: subset.clone(), rho: lo, kappa });
            }
        }
    }
    Ok(best)
}

/// Covering with centers drawn from `candidates` at the smallest admissible
/// scale in `[δ, ρ_max]`; ties are broken by fewer points.
pub fn finest_covering(
    target: &Target,
    candidates: &[f64],
    delta: f64,
    kappa: f64,
    rho_max: f64,
) -> Result<Option<Covering>> {
    if target.is_empty() {
        return Ok(Some(Covering { points: Vec::new(), rho: delta, kappa }));
    }
    let l = candidates.len();
    if l > N_OPT_MAX_POINTS.max(16) {
        return Err(Error::TooLarge(format!("{l} candidate points")));
    }
    let mut cand = candidates.to_vec();
    cand.sort_by(f64::total_cmp);
    let mut best: Option<Covering> = None;
    for mask in 1u32..(1u32 << l) {
        let subset: Vec<f64> = (0..l).filter(|i| mask & (1 << i) != 0).map(|i| cand[i]).collect();
        if let Some((lo, _)) = rho_window(&subset, target, delta, kappa, rho_max) {
            let better = match &best {
                None => true,
                Some(b) => lo < b.rho || (lo == b.rho && subset.len() < b.points.len()),
            };
            if better {
                best = Some(Covering { points: subset, rho: lo, kappa });
            }
        }
    }
    Ok(best)
}

/// Minimal `♯J` over κ-confined coverings of `𝓓(u)` by subsets of the unit-ball
/// points with `δ <= ρ <= (κ/2)^{-2M0/η0} δ`.
pub fn n_opt(u: &Field, p: &Potential, wc: &WellConstants, delta: f64, kappa: f64, m0: f64) -> Result<usize> {
    Ok(n_opt_covering(u, p, wc, delta, kappa, m0)?.points.len())
}

/// Covering attaining [`n_opt`].
pub fn n_opt_covering(
    u: &Field,
    p: &Potential,
    wc: &WellConstants,
    delta: f64,
    kappa: f64,
    m0: f64,
) -> Result<Covering> {
    check_front_cover_pre(delta, kappa, u.eps)?;
    let fs = front_set(u, p, wc);
    if fs.is_empty() {
        return Ok(Covering { points: Vec::new(), rho: delta, kappa });
    }
    let pts = cover_by_unit_balls(&fs, u.eps, m0, wc.eta0)?;
    if pts.len() > N_OPT_MAX_POINTS {
        return Err(Error::TooLarge(format!(
            "{} unit-ball points exceed the exhaustive limit {N_OPT_MAX_POINTS}",
            pts.len()
        )));
    }
    let rho_max = ln_rho_max(delta, kappa, m0, wc.eta0).exp();
    best_covering(&Target::Intervals(&fs.intervals), &pts, delta, kappa, rho_max)?
        .ok_or_else(|| Error::Constants("no admissible covering of the front set".into()))
}
