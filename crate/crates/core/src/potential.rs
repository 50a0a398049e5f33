//! Multi-well potentials `V: R^k -> R` with equal-depth non-degenerate wells,
//! and the structural constants derived from them.
//!
//! Every potential is registered against a user-supplied list of minimizers.
//! Registration verifies that each listed point is a zero of `V` and of its
//! gradient, that the Hessian there is positive definite, and that the analytic
//! gradient agrees with finite differences of `V`.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Tolerance for `V(σ) = 0` and `|∇V(σ)| = 0` at registered minimizers.
pub const REGISTRATION_TOL: f64 = 1e-10;
/// Relative tolerance for the gradient against central differences of `V`.
pub const GRADIENT_FD_TOL: f64 = 1e-5;

const FD_SAMPLES: usize = 100;
const BALL_SAMPLES: usize = 1000;
const MAX_HALVINGS: usize = 60;
const H3_CUTOFF: f64 = 100.0;

/// Closed-form families supported by the toolkit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PotentialKind {
    /// `V(u) = (1 - u^2)^2 / 4` on `R`.
    Quartic,
    /// `V(u) = scale * prod_i (u - m_i)^2` on `R`.
    ProductWell { roots: Vec<f64>, scale: f64 },
    /// `V(u1, u2) = ((u1^2 - 1)^2 + c u2^2) / 4` on `R^2`.
    VectorWell { c: f64 },
    /// `V(u) = s/4 * exp(-s/16)` with `s = (u^2 - 1)^2`: same wells as the quartic
    /// but bounded, so the coercivity condition fails at infinity.
    Flattened,
}

impl PotentialKind {
    fn dim(&self) -> usize {
        match self {
            PotentialKind::VectorWell { .. } => 2,
            _ => 1,
        }
    }
}

/// A registered potential. Immutable after construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Potential {
    name: String,
    kind: PotentialKind,
    dim_k: usize,
    minimizers: Vec<Vec<f64>>,
    r0: f64,
}

/// Parameters for [`make_triple_well`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum TripleWellParams {
    /// Scalar product-of-squares well with minimizers at `roots`.
    Scalar { roots: Vec<f64>, scale: f64 },
    /// Two-component well with minimizers `(±1, 0)`.
    Vector { c: f64 },
}

impl Default for TripleWellParams {
    fn default() -> Self {
        TripleWellParams::Scalar { roots: vec![-1.0, 0.0, 1.0], scale: 1.0 }
    }
}

/// The canonical scalar double well `(1 - u^2)^2 / 4` with minimizers `±1`.
pub fn make_quartic() -> Potential {
    Potential::register("quartic", PotentialKind::Quartic, vec![vec![-1.0], vec![1.0]])
        .expect("the quartic double well always registers")
}

/// Scalar product well (three or more minimizers) or the two-component well.
pub fn make_triple_well(params: TripleWellParams) -> Result<Potential> {
    match params {
        TripleWellParams::Scalar { roots, scale } => {
            if roots.len() < 3 {
                return Err(Error::Registration(format!(
                    "scalar multi-well needs at least 3 minimizers, got {}",
                    roots.len()
                )));
            }
            let mut sorted = roots.clone();
            sorted.sort_by(|a, b| a.total_cmp(b));
            let minimizers = sorted.iter().map(|&m| vec![m]).collect();
            Potential::register("triple_well", PotentialKind::ProductWell { roots: sorted, scale }, minimizers)
        }
        TripleWellParams::Vector { c } => Potential::register(
            "vector_well",
            PotentialKind::VectorWell { c },
            vec![vec![-1.0, 0.0], vec![1.0, 0.0]],
        ),
    }
}

/// Bounded potential with the quartic's wells; used to exercise the coercivity check.
pub fn make_flattened() -> Potential {
    Potential::register("flattened", PotentialKind::Flattened, vec![vec![-1.0], vec![1.0]])
        .expect("the flattened double well always registers")
}

/// Looks a potential up by configuration name.
///
/// * `quartic` (no parameters)
/// * `triple_well` (optional parameters: roots, default `-1 0 1`)
/// * `vector_well` (one parameter `c > 0`, default 1)
/// * `flattened` (no parameters)
pub fn potential_by_name(name: &str, params: &[f64]) -> Result<Potential> {
    match name {
        "quartic" => Ok(make_quartic()),
        "triple_well" => {
            let roots = if params.is_empty() { vec![-1.0, 0.0, 1.0] } else { params.to_vec() };
            make_triple_well(TripleWellParams::Scalar { roots, scale: 1.0 })
        }
        "vector_well" => {
            let c = params.first().copied().unwrap_or(1.0);
            make_triple_well(TripleWellParams::Vector { c })
        }
        "flattened" => Ok(make_flattened()),
        other => Err(Error::InvalidArgument(format!("unknown potential '{other}'"))),
    }
}

impl Potential {
    /// Registers a potential, verifying every registration invariant.
    pub fn register(name: &str, kind: PotentialKind, minimizers: Vec<Vec<f64>>) -> Result<Potential> {
        let dim_k = kind.dim();
        if minimizers.len() < 2 {
            return Err(Error::Registration("at least two minimizers are required".into()));
        }
        for m in &minimizers {
            if m.len() != dim_k {
                return Err(Error::Registration(format!(
                    "minimizer {m:?} has dimension {}, expected {dim_k}",
                    m.len()
                )));
            }
        }
        for i in 0..minimizers.len() {
            for j in i + 1..minimizers.len() {
                if euclid(&minimizers[i], &minimizers[j]) <= REGISTRATION_TOL {
                    return Err(Error::Registration(format!(
                        "minimizers {i} and {j} coincide"
                    )));
                }
            }
        }
        let rmax = minimizers.iter().map(|m| norm(m)).fold(0.0, f64::max);
        let mut p = Potential { name: name.to_string(), kind, dim_k, minimizers, r0: rmax + 1.0 };

        for (i, m) in p.minimizers.iter().enumerate() {
            let v = p.eval(m);
            let g = norm(&p.grad(m));
            if !(v.abs() <= REGISTRATION_TOL && g <= REGISTRATION_TOL) {
                return Err(Error::Registration(format!(
                    "claimed minimizer {i} at {m:?} has V = {v:e}, |grad V| = {g:e}"
                )));
            }
            let (lmin, _) = p.hess_eigen_range(m);
            if !(lmin > 0.0) {
                return Err(Error::Registration(format!(
                    "Hessian at minimizer {i} ({m:?}) is not positive definite (smallest eigenvalue {lmin:e})"
                )));
            }
        }
        p.check_gradient_consistency()?;

        let h3 = check_h3(&p);
        p.r0 = if h3.ok { h3.r_cond.max(rmax) } else { rmax + 1.0 };
        Ok(p)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> &PotentialKind {
        &self.kind
    }

    /// Target-space dimension `k`.
    pub fn dim(&self) -> usize {
        self.dim_k
    }

    pub fn minimizers(&self) -> &[Vec<f64>] {
        &self.minimizers
    }

    /// Confinement radius: the coercivity radius when available, otherwise
    /// one unit beyond the outermost minimizer.
    pub fn r0(&self) -> f64 {
        self.r0
    }

    pub fn eval(&self, y: &[f64]) -> f64 {
        match &self.kind {
            PotentialKind::Quartic => {
                let s = 1.0 - y[0] * y[0];
                0.25 * s * s
            }
            PotentialKind::ProductWell { roots, scale } => {
                let (p, _, _) = product_poly(roots, y[0]);
                scale * p * p
            }
            PotentialKind::VectorWell { c } => {
                let s = y[0] * y[0] - 1.0;
                0.25 * (s * s + c * y[1] * y[1])
            }
            PotentialKind::Flattened => {
                let s = (y[0] * y[0] - 1.0).powi(2);
                0.25 * s * (-s / 16.0).exp()
            }
        }
    }

    /// Writes `∇V(y)` into `out`.
    pub fn grad_into(&self, y: &[f64], out: &mut [f64]) {
        match &self.kind {
            PotentialKind::Quartic => out[0] = y[0] * (y[0] * y[0] - 1.0),
            PotentialKind::ProductWell { roots, scale } => {
                let (p, dp, _) = product_poly(roots, y[0]);
                out[0] = 2.0 * scale * p * dp;
            }
            PotentialKind::VectorWell { c } => {
                out[0] = y[0] * (y[0] * y[0] - 1.0);
                out[1] = 0.5 * c * y[1];
            }
            PotentialKind::Flattened => {
                let u = y[0];
                let g = u * u * u - u;
                let s = (u * u - 1.0).powi(2);
                out[0] = g * (-s / 16.0).exp() * (1.0 - s / 16.0);
            }
        }
    }

    pub fn grad(&self, y: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim_k];
        self.grad_into(y, &mut g);
        g
    }

    /// Row-major `k x k` Hessian.
    pub fn hess(&self, y: &[f64]) -> Vec<f64> {
        match &self.kind {
            PotentialKind::Quartic => vec![3.0 * y[0] * y[0] - 1.0],
            PotentialKind::ProductWell { roots, scale } => {
                let (p, dp, ddp) = product_poly(roots, y[0]);
                vec![2.0 * scale * (dp * dp + p * ddp)]
            }
            PotentialKind::VectorWell { c } => vec![3.0 * y[0] * y[0] - 1.0, 0.0, 0.0, 0.5 * c],
            PotentialKind::Flattened => {
                let u = y[0];
                let g = u * u * u - u;
                let dg = 3.0 * u * u - 1.0;
                let s = (u * u - 1.0).powi(2);
                let e = (-s / 16.0).exp();
                let h = e * (1.0 - s / 16.0);
                let dh_ds = e * (s / 256.0 - 0.125);
                vec![dg * h + 4.0 * g * g * dh_ds]
            }
        }
    }

    /// Smallest and largest eigenvalue of `∇²V(y)`.
    pub fn hess_eigen_range(&self, y: &[f64]) -> (f64, f64) {
        sym_eigen_range(&self.hess(y), self.dim_k)
    }

    /// Distance from `y` to the set of minimizers and the index of the nearest one.
    pub fn dist_to_wells(&self, y: &[f64]) -> (f64, usize) {
        let mut best = (f64::INFINITY, 0);
        for (i, m) in self.minimizers.iter().enumerate() {
            let d = euclid(y, m);
            if d < best.0 {
                best = (d, i);
            }
        }
        best
    }

    /// Lipschitz bound `A(m) = 1 + max_{|u| <= m} |∇²V(u)|` (operator norm, sampled).
    pub fn lipschitz_bound(&self, m: f64) -> f64 {
        let mut best: f64 = 0.0;
        for y in sample_ball(&vec![0.0; self.dim_k], m, 4001, 0xA11CE) {
            let (lo, hi) = self.hess_eigen_range(&y);
            best = best.max(lo.abs()).max(hi.abs());
        }
        1.0 + best
    }

    fn check_gradient_consistency(&self) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_0001);
        let radius = self.r0;
        let k = self.dim_k;
        for _ in 0..FD_SAMPLES {
            let y = random_in_ball(&mut rng, &vec![0.0; k], radius);
            let g = self.grad(&y);
            for c in 0..k {
                let step = 1e-5 * (1.0 + y[c].abs());
                let mut yp = y.clone();
                let mut ym = y.clone();
                yp[c] += step;
                ym[c] -= step;
                let fd = (self.eval(&yp) - self.eval(&ym)) / (2.0 * step);
                let err = (fd - g[c]).abs() / g[c].abs().max(1.0);
                if err > GRADIENT_FD_TOL {
                    return Err(Error::Registration(format!(
                        "gradient component {c} at {y:?} disagrees with finite differences (rel. err {err:e})"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Value, first and second derivative of `prod_i (u - m_i)`.
fn product_poly(roots: &[f64], u: f64) -> (f64, f64, f64) {
    let (mut p, mut dp, mut ddp) = (1.0, 0.0, 0.0);
    for &m in roots {
        let f = u - m;
        ddp = ddp * f + 2.0 * dp;
        dp = dp * f + p;
        p *= f;
    }
    (p, dp, ddp)
}

pub(crate) fn norm(y: &[f64]) -> f64 {
    y.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub(crate) fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Extreme eigenvalues of a symmetric row-major `k x k` matrix.
pub fn sym_eigen_range(m: &[f64], k: usize) -> (f64, f64) {
    match k {
        1 => (m[0], m[0]),
        2 => {
            let (a, b, d) = (m[0], 0.5 * (m[1] + m[2]), m[3]);
            let mean = 0.5 * (a + d);
            let rad = (0.25 * (a - d) * (a - d) + b * b).sqrt();
            (mean - rad, mean + rad)
        }
        _ => {
            let eig = SymmetricEigen::new(DMatrix::from_row_slice(k, k, m));
            let lo = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            (lo, hi)
        }
    }
}

fn random_in_ball(rng: &mut ChaCha8Rng, center: &[f64], radius: f64) -> Vec<f64> {
    let k = center.len();
    loop {
        let y: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        if norm(&y) <= 1.0 {
            return y.iter().zip(center).map(|(v, c)| c + radius * v).collect();
        }
    }
}

/// Deterministic samples of the closed ball `B(center, radius)`.
///
/// In one dimension the samples are evenly spaced including both endpoints;
/// otherwise they are seeded pseudo-random points plus points on the sphere.
pub fn sample_ball(center: &[f64], radius: f64, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let k = center.len();
    if k == 1 {
        let n = count.max(2);
        return (0..n)
            .map(|i| vec![center[0] - radius + 2.0 * radius * i as f64 / (n - 1) as f64])
            .collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    let on_sphere = count / 4;
    for _ in 0..on_sphere {
        let dir = random_in_ball(&mut rng, &vec![0.0; k], 1.0);
        let n = norm(&dir).max(1e-300);
        out.push(dir.iter().zip(center).map(|(d, c)| c + radius * d / n).collect());
    }
    while out.len() < count {
        out.push(random_in_ball(&mut rng, center, radius));
    }
    out
}

fn sphere_samples(k: usize, r: f64, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    match k {
        1 => vec![vec![-r], vec![r]],
        2 => (0..64)
            .map(|j| {
                let th = std::f64::consts::TAU * j as f64 / 64.0;
                vec![r * th.cos(), r * th.sin()]
            })
            .collect(),
        _ => (0..256)
            .map(|_| {
                let d = random_in_ball(rng, &vec![0.0; k], 1.0);
                let n = norm(&d).max(1e-300);
                d.iter().map(|v| r * v / n).collect()
            })
            .collect(),
    }
}

/// Result of the sampled coercivity check `y·∇V(y) >= α |y|^2` for `|y| >= R`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct H3Report {
    pub alpha_cond: f64,
    pub r_cond: f64,
    pub ok: bool,
}

/// Ratio `y·∇V(y) / |y|^2` at one point.
pub fn h3_ratio(p: &Potential, y: &[f64]) -> f64 {
    let g = p.grad(y);
    let dot: f64 = y.iter().zip(&g).map(|(a, b)| a * b).sum();
    dot / y.iter().map(|v| v * v).sum::<f64>()
}

/// Samples spheres of increasing radius up to a cutoff of 100.
///
/// `r_cond` is the smallest sampled radius beyond which every sample has a
/// positive ratio, and `alpha_cond` is the smallest ratio seen beyond it.
/// `ok` is false when the ratio is non-positive at the cutoff.
pub fn check_h3(p: &Potential) -> H3Report {
    let mut radii = Vec::new();
    let mut r = 0.05;
    while r <= 2.0 + 1e-12 {
        radii.push(r);
        r += 0.05;
    }
    let mut r = 2.0;
    while r < H3_CUTOFF {
        r *= 1.1;
        radii.push(r.min(H3_CUTOFF));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x4833);
    let alphas: Vec<f64> = radii
        .iter()
        .map(|&r| {
            sphere_samples(p.dim(), r, &mut rng)
                .iter()
                .map(|y| h3_ratio(p, y))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    // Walk inwards from the cutoff while the inequality keeps holding.
    let mut first = radii.len();
    while first > 0 && alphas[first - 1] > 0.0 {
        first -= 1;
    }
    if first == radii.len() {
        return H3Report { alpha_cond: alphas[radii.len() - 1], r_cond: f64::INFINITY, ok: false };
    }
    let alpha = alphas[first..].iter().cloned().fold(f64::INFINITY, f64::min);
    H3Report { alpha_cond: alpha, r_cond: radii[first], ok: true }
}

/// Per-well eigenvalue bounds, well radius and clearing-out threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WellConstants {
    pub lambda_minus: Vec<f64>,
    pub lambda_plus: Vec<f64>,
    pub mu0: f64,
    pub eta0: f64,
}

impl WellConstants {
    pub fn max_lambda_plus(&self) -> f64 {
        self.lambda_plus.iter().cloned().fold(0.0, f64::max)
    }

    pub fn min_lambda_minus(&self) -> f64 {
        self.lambda_minus.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

fn min_pairwise_minimizer_distance(p: &Potential) -> f64 {
    let m = p.minimizers();
    let mut d = f64::INFINITY;
    for i in 0..m.len() {
        for j in i + 1..m.len() {
            d = d.min(euclid(&m[i], &m[j]));
        }
    }
    d
}

/// True when every sampled Hessian in `B(σ_i, radius)` lies in `[λ_i^-/2, 2λ_i^+]`.
pub fn hessian_sandwich_holds(p: &Potential, lminus: &[f64], lplus: &[f64], radius: f64) -> bool {
    p.minimizers().iter().enumerate().all(|(i, s)| {
        sample_ball(s, radius, BALL_SAMPLES, 0xBA11 + i as u64).iter().all(|y| {
            let (lo, hi) = p.hess_eigen_range(y);
            lo >= 0.5 * lminus[i] * (1.0 - 1e-12) && hi <= 2.0 * lplus[i] * (1.0 + 1e-12)
        })
    })
}

/// Deterministic samples of the box `[-(R0+1), R0+1]^k`.
fn box_samples(p: &Potential) -> Vec<Vec<f64>> {
    let half = p.r0() + 1.0;
    match p.dim() {
        1 => {
            let n = 40_001;
            (0..n).map(|i| vec![-half + 2.0 * half * i as f64 / (n - 1) as f64]).collect()
        }
        2 => {
            let n = 401;
            let mut out = Vec::with_capacity(n * n);
            for i in 0..n {
                for j in 0..n {
                    out.push(vec![
                        -half + 2.0 * half * i as f64 / (n - 1) as f64,
                        -half + 2.0 * half * j as f64 / (n - 1) as f64,
                    ]);
                }
            }
            out
        }
        k => {
            let mut rng = ChaCha8Rng::seed_from_u64(0xB0C5);
            (0..200_000).map(|_| (0..k).map(|_| rng.gen_range(-half..=half)).collect()).collect()
        }
    }
}

/// Computes `λ±`, `µ0` and `η0` for a registered potential.
pub fn well_constants(p: &Potential) -> Result<WellConstants> {
    let mut lambda_minus = Vec::new();
    let mut lambda_plus = Vec::new();
    for s in p.minimizers() {
        let (lo, hi) = p.hess_eigen_range(s);
        lambda_minus.push(lo);
        lambda_plus.push(hi);
    }

    let mut mu0 = 0.5 * min_pairwise_minimizer_distance(p);
    let mut found = false;
    for _ in 0..MAX_HALVINGS {
        if hessian_sandwich_holds(p, &lambda_minus, &lambda_plus, mu0) {
            found = true;
            break;
        }
        mu0 *= 0.5;
    }
    if !found {
        return Err(Error::Degenerate(format!(
            "no well radius found after {MAX_HALVINGS} halvings"
        )));
    }

    let half = 0.5 * mu0;
    let s_star = box_samples(p)
        .iter()
        .filter(|y| p.dist_to_wells(y).0 > half)
        .map(|y| p.eval(y))
        .fold(f64::INFINITY, f64::min)
        * (1.0 - 1e-9);
    if !(s_star > 0.0) {
        return Err(Error::Degenerate(
            "the potential vanishes away from its registered minimizers".into(),
        ));
    }
    let eta0 = (mu0 * mu0 / 8.0).min(s_star);
    Ok(WellConstants { lambda_minus, lambda_plus, mu0, eta0 })
}

/// `c0 = min { V(y) : dist(y, Σ) >= µ0 }`, sampled on the confinement box.
pub fn off_well_floor(p: &Potential, wc: &WellConstants) -> f64 {
    box_samples(p)
        .iter()
        .filter(|y| p.dist_to_wells(y).0 >= wc.mu0)
        .map(|y| p.eval(y))
        .fold(f64::INFINITY, f64::min)
}
