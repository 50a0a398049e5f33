//! Thomas algorithm for tridiagonal systems.

/// Solves `a[i] x[i-1] + b[i] x[i] + c[i] x[i+1] = d[i]` in place of `d`.
///
/// `a[0]` and `c[n-1]` are ignored. `scratch` must have length `n`.
/// The matrix must be diagonally dominant; no pivoting is done.
pub fn thomas_solve_in_place(a: &[f64], b: &[f64], c: &[f64], d: &mut [f64], scratch: &mut [f64]) {
    let n = d.len();
    debug_assert!(a.len() == n && b.len() == n && c.len() == n && scratch.len() == n);
    if n == 0 {
        return;
    }
    scratch[0] = c[0] / b[0];
    d[0] /= b[0];
    for i in 1..n {
        let m = b[i] - a[i] * scratch[i - 1];
        scratch[i] = c[i] / m;
        d[i] = (d[i] - a[i] * d[i - 1]) / m;
    }
    for i in (0..n - 1).rev() {
        d[i] -= scratch[i] * d[i + 1];
    }
}

/// LU factorization of a fixed tridiagonal matrix, for repeated solves without divisions.
#[derive(Debug, Clone)]
pub struct TridiagFactor {
    a: Vec<f64>,
    cp: Vec<f64>,
    inv_m: Vec<f64>,
}

impl TridiagFactor {
    /// Same conventions and dominance requirement as [`thomas_solve_in_place`].
    pub fn new(a: &[f64], b: &[f64], c: &[f64]) -> TridiagFactor {
        let n = b.len();
        let mut cp = vec![0.0; n];
        let mut inv_m = vec![0.0; n];
        for i in 0..n {
            let m = if i == 0 { b[0] } else { b[i] - a[i] * cp[i - 1] };
            inv_m[i] = 1.0 / m;
            cp[i] = c[i] * inv_m[i];
        }
        TridiagFactor { a: a.to_vec(), cp, inv_m }
    }

    pub fn solve_in_place(&self, d: &mut [f64]) {
        let n = d.len();
        if n == 0 {
            return;
        }
        d[0] *= self.inv_m[0];
        for i in 1..n {
            d[i] = (d[i] - self.a[i] * d[i - 1]) * self.inv_m[i];
        }
        for i in (0..n - 1).rev() {
            d[i] -= self.cp[i] * d[i + 1];
        }
    }
}

/// Allocating convenience wrapper around [`thomas_solve_in_place`].
pub fn thomas_solve(a: &[f64], b: &[f64], c: &[f64], d: &[f64]) -> Vec<f64> {
    let mut x = d.to_vec();
    let mut scratch = vec![0.0; d.len()];
    thomas_solve_in_place(a, b, c, &mut x, &mut scratch);
    x
}
