//! Filter gain design.
//!
//! The gain vector of the order-`k` tracking filter is built from the first
//! column of the stabilizing solution `U` of the algebraic Riccati equation
//!
//! ```text
//! a U + U a' + B B' - U A' A U = 0
//! ```
//!
//! where `a` is the `(k+1)x(k+1)` upper shift matrix, `A = e_1'` selects the
//! observed coordinate and `B = e_{k+1}` injects noise into the highest
//! derivative. The resulting characteristic polynomials are the Butterworth
//! polynomials, so every gain vector produced here is Hurwitz with distinct
//! roots.

use std::sync::OnceLock;

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};

/// Largest smoothness order supported by the gain design.
pub const MAX_ORDER: usize = 8;

const NEWTON_MAX_ITER: usize = 60;
const NEWTON_STEP_TOL: f64 = 1e-12;
const TABLE_TOL: f64 = 1e-9;
const DISTINCT_REL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    pub k: usize,
    pub u_matrix: DMatrix<f64>,
    /// `U_{00}, ..., U_{0k}`.
    pub first_column: Vec<f64>,
    pub residual_norm: f64,
}

/// Closed-form first columns for `k <= 4`.
pub fn tabulated_first_column(k: usize) -> Option<Vec<f64>> {
    let s2 = 2f64.sqrt();
    let s5 = 5f64.sqrt();
    let r3 = (4.0 + 8f64.sqrt()).sqrt();
    match k {
        0 => Some(vec![1.0]),
        1 => Some(vec![s2, 1.0]),
        2 => Some(vec![2.0, 2.0, 1.0]),
        3 => Some(vec![r3, 2.0 + s2, r3, 1.0]),
        4 => Some(vec![1.0 + s5, 3.0 + s5, 3.0 + s5, 1.0 + s5, 1.0]),
        _ => None,
    }
}

fn shift_matrix(m: usize) -> DMatrix<f64> {
    DMatrix::from_fn(m, m, |i, j| if j == i + 1 { 1.0 } else { 0.0 })
}

fn noise_input(m: usize) -> DMatrix<f64> {
    let mut bb = DMatrix::zeros(m, m);
    bb[(m - 1, m - 1)] = 1.0;
    bb
}

/// Residual `a U + U a' + B B' - U A' A U` of a candidate solution.
pub fn riccati_residual(u: &DMatrix<f64>) -> DMatrix<f64> {
    let m = u.nrows();
    let a = shift_matrix(m);
    let col = u.column(0).into_owned();
    &a * u + u * a.transpose() + noise_input(m) - &col * col.transpose()
}

/// Solves `a X + X a' + q = 0` through the Kronecker-sum linear system.
fn solve_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let m = a.nrows();
    let dim = m * m;
    let mut sys = DMatrix::zeros(dim, dim);
    for j in 0..m {
        for i in 0..m {
            let row = i + j * m;
            for p in 0..m {
                sys[(row, p + j * m)] += a[(i, p)];
                sys[(row, i + p * m)] += a[(j, p)];
            }
        }
    }
    let rhs = DVector::from_iterator(dim, q.iter().map(|v| -v));
    let sol = sys.lu().solve(&rhs)?;
    let x = DMatrix::from_column_slice(m, m, sol.as_slice());
    Some((&x + x.transpose()) * 0.5)
}

/// One Kleinman step: the `U` whose closed loop is built from gain column `col`.
fn lyapunov_from_column(col: &DVector<f64>) -> Option<DMatrix<f64>> {
    let m = col.len();
    let mut a_cl = shift_matrix(m);
    for i in 0..m {
        a_cl[(i, 0)] -= col[i];
    }
    let q = noise_input(m) + col * col.transpose();
    solve_lyapunov(&a_cl, &q)
}

fn binomial(n: usize, r: usize) -> f64 {
    (0..r).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn newton(k: usize) -> std::result::Result<DMatrix<f64>, f64> {
    let m = k + 1;
    // (λ+1)^{k+1} is Hurwitz, so the iteration starts from a stabilizing gain.
    let mut col = DVector::from_fn(m, |j, _| binomial(m, j + 1));
    let mut u = DMatrix::<f64>::zeros(m, m);
    for _ in 0..NEWTON_MAX_ITER {
        let next = lyapunov_from_column(&col).ok_or(f64::INFINITY)?;
        let step = (&next - &u).norm();
        let scale = next.norm().max(1.0);
        u = next;
        col = u.column(0).into_owned();
        if !step.is_finite() {
            return Err(f64::INFINITY);
        }
        if step <= NEWTON_STEP_TOL * scale {
            return Ok(u);
        }
    }
    Err(riccati_residual(&u).norm())
}

fn residual_tolerance(u: &DMatrix<f64>) -> f64 {
    1e-10 * u.norm().max(1.0).powi(2)
}

/// Solves the filter Riccati equation for smoothness order `k`.
///
/// The solution is computed by Newton (Kleinman) iteration. For `k <= 4` it
/// is cross-checked against the closed-form table, which then supplies the
/// returned first column; if the iteration fails there, the table column is
/// used to recover `U` with a single Lyapunov solve.
pub fn solve_care(k: usize) -> Result<RiccatiSolution> {
    if k > MAX_ORDER {
        return Err(Error::arg(format!("smoothness order {k} exceeds {MAX_ORDER}")));
    }
    let table = tabulated_first_column(k);
    let u = match (newton(k), &table) {
        (Ok(u), _) if riccati_residual(&u).norm() < residual_tolerance(&u) => u,
        (_, Some(col)) => lyapunov_from_column(&DVector::from_column_slice(col))
            .ok_or(Error::SolverFailure { residual: f64::INFINITY })?,
        (Ok(u), None) => {
            return Err(Error::SolverFailure { residual: riccati_residual(&u).norm() })
        }
        (Err(residual), None) => return Err(Error::SolverFailure { residual }),
    };
    let residual_norm = riccati_residual(&u).norm();
    if residual_norm >= residual_tolerance(&u) || u.clone().cholesky().is_none() {
        return Err(Error::SolverFailure { residual: residual_norm });
    }
    let solved: Vec<f64> = u.column(0).iter().copied().collect();
    let first_column = match table {
        Some(col) => {
            let worst = col
                .iter()
                .zip(&solved)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            if worst > TABLE_TOL {
                return Err(Error::SolverFailure { residual: worst });
            }
            col
        }
        None => solved,
    };
    Ok(RiccatiSolution { k, u_matrix: u, first_column, residual_norm })
}

/// Cached `U_{0j}` coefficients for order `k`.
pub fn first_column(k: usize) -> Result<&'static [f64]> {
    static CACHE: [OnceLock<Vec<f64>>; MAX_ORDER + 1] = [const { OnceLock::new() }; MAX_ORDER + 1];
    if k > MAX_ORDER {
        return Err(Error::arg(format!("smoothness order {k} exceeds {MAX_ORDER}")));
    }
    if let Some(col) = CACHE[k].get() {
        return Ok(col);
    }
    let col = solve_care(k)?.first_column;
    Ok(CACHE[k].get_or_init(|| col))
}

/// Unscaled gains `q_j(θ) = U_{0j} θ^{(j+1)/(k+1)}`.
pub fn gain_coefficients(k: usize, theta: f64) -> Result<Vec<f64>> {
    check_theta(theta)?;
    let col = first_column(k)?;
    let denom = (k + 1) as f64;
    Ok(col
        .iter()
        .enumerate()
        .map(|(j, u)| u * theta.powf((j + 1) as f64 / denom))
        .collect())
}

fn check_theta(theta: f64) -> Result<()> {
    if !(theta.is_finite() && theta > 0.0) {
        return Err(Error::arg(format!("theta must be positive and finite, got {theta}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GainSchedule {
    pub k: usize,
    pub theta: f64,
    pub n: usize,
    pub step_gains: Vec<f64>,
}

/// Exponent of `n` in the denominator of gain `j`: `(2(k+1)-j)/(2k+3)`.
pub fn gain_exponent(k: usize, j: usize) -> f64 {
    (2 * (k + 1) - j) as f64 / (2 * k + 3) as f64
}

/// Per-equation step gains `U_{0j} θ^{(j+1)/(k+1)} / n^{(2(k+1)-j)/(2k+3)}`.
pub fn gain_schedule(k: usize, theta: f64, n: usize) -> Result<GainSchedule> {
    check_theta(theta)?;
    if n < 2 {
        return Err(Error::arg(format!("sample size must be at least 2, got {n}")));
    }
    let nf = n as f64;
    let col = first_column(k)?;
    let denom = (k + 1) as f64;
    let step_gains = col
        .iter()
        .enumerate()
        .map(|(j, u)| u * theta.powf((j + 1) as f64 / denom) / nf.powf(gain_exponent(k, j)))
        .collect();
    Ok(GainSchedule { k, theta, n, step_gains })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub roots: Vec<Complex<f64>>,
    pub all_negative_real: bool,
    pub all_distinct: bool,
    /// Smallest `|Re λ|` over the roots.
    pub min_real_gap_to_zero: f64,
    pub min_pairwise_distance: f64,
}

impl StabilityReport {
    pub fn is_stable(&self) -> bool {
        self.all_negative_real && self.all_distinct
    }
}

/// Roots of the monic polynomial `x^m + c[0] x^{m-1} + ... + c[m-1]`,
/// computed as eigenvalues of its companion matrix.
pub fn monic_roots(coeffs: &[f64]) -> Vec<Complex<f64>> {
    let m = coeffs.len();
    if m == 0 {
        return Vec::new();
    }
    let mut companion = DMatrix::zeros(m, m);
    for (j, c) in coeffs.iter().enumerate() {
        companion[(0, j)] = -c;
    }
    for i in 1..m {
        companion[(i, i - 1)] = 1.0;
    }
    companion.complex_eigenvalues().iter().copied().collect()
}

/// Root locations of `λ^{k+1} + q_0 λ^k + ... + q_k` for `q_j(θ)`.
pub fn stability_report(k: usize, theta: f64) -> Result<StabilityReport> {
    let q = gain_coefficients(k, theta)?;
    Ok(report_for_roots(monic_roots(&q)))
}

pub(crate) fn report_for_roots(roots: Vec<Complex<f64>>) -> StabilityReport {
    let all_negative_real = roots.iter().all(|r| r.re < 0.0);
    let min_real_gap_to_zero = roots.iter().map(|r| r.re.abs()).fold(f64::INFINITY, f64::min);
    let mut min_pairwise_distance = f64::INFINITY;
    for (i, a) in roots.iter().enumerate() {
        for b in &roots[i + 1..] {
            min_pairwise_distance = min_pairwise_distance.min((a - b).norm());
        }
    }
    let scale = roots.iter().map(|r| r.norm()).fold(0.0, f64::max);
    let all_distinct = min_pairwise_distance > DISTINCT_REL_TOL * scale;
    StabilityReport {
        roots,
        all_negative_real,
        all_distinct,
        min_real_gap_to_zero,
        min_pairwise_distance,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn k2_table_satisfies_residual_by_hand() {
        // Substitute U_{0.} = (2, 2, 1) and solve the remaining entries from
        // the (0,1), (0,2), (1,2) equations directly.
        // (0,0): 2 U01 - U00^2 = 0         -> 4 - 4
        // (0,1): U11 + U02 - U00 U01 = 0    -> U11 = 3
        // (0,2): U12 - U00 U02 = 0          -> U12 = 2
        // (1,1): 2 U12 - U01^2 = 0          -> 4 - 4
        // (1,2): U22 - U01 U02 = 0          -> U22 = 2
        // (2,2): 1 - U02^2 = 0
        let u = DMatrix::from_row_slice(3, 3, &[2.0, 2.0, 1.0, 2.0, 3.0, 2.0, 1.0, 2.0, 2.0]);
        assert!(riccati_residual(&u).norm() < 1e-15);
        let sol = solve_care(2).unwrap();
        assert!((&sol.u_matrix - &u).norm() < 1e-9);
    }

    #[test]
    fn solve_care_small_orders() {
        assert_eq!(solve_care(0).unwrap().first_column, vec![1.0]);
        let k1 = solve_care(1).unwrap();
        assert!(close(k1.first_column[0], 2f64.sqrt(), 1e-15));
        assert!(close(k1.first_column[1], 1.0, 1e-15));
    }

    #[test]
    fn solve_care_beyond_table_is_symmetric_and_positive() {
        for k in 5..=MAX_ORDER {
            let sol = solve_care(k).unwrap();
            assert!((&sol.u_matrix - sol.u_matrix.transpose()).norm() < 1e-12);
            assert!(sol.u_matrix.clone().cholesky().is_some());
            assert!(sol.first_column.iter().all(|&c| c > 0.0));
            assert!(close(sol.first_column[k], 1.0, 1e-9), "k={k}");
        }
    }

    #[test]
    fn rejects_large_order() {
        assert!(matches!(solve_care(MAX_ORDER + 1), Err(Error::Argument(_))));
    }

    #[test]
    fn gain_schedule_examples() {
        let g = gain_schedule(0, 1.0, 1000).unwrap();
        assert!(close(g.step_gains[0], 0.01, 1e-15));
        let g = gain_schedule(0, 4.0, 1000).unwrap();
        assert!(close(g.step_gains[0], 0.04, 1e-15));
        let n = 777usize;
        let g = gain_schedule(1, 1.0, n).unwrap();
        assert!(close(g.step_gains[0], 2f64.sqrt() / (n as f64).powf(0.8), 1e-15));
    }

    #[test]
    fn gain_schedule_argument_errors() {
        assert!(gain_schedule(0, 0.0, 100).is_err());
        assert!(gain_schedule(0, -1.0, 100).is_err());
        assert!(gain_schedule(0, f64::NAN, 100).is_err());
        assert!(gain_schedule(0, 1.0, 1).is_err());
    }

    #[test]
    fn stability_examples() {
        let r = stability_report(0, 2.0).unwrap();
        assert_eq!(r.roots.len(), 1);
        assert!(close(r.roots[0].re, -2.0, 1e-12) && close(r.roots[0].im, 0.0, 1e-12));
        assert!(r.is_stable());

        // Quadratic formula for λ² + √2 λ + 1.
        let b = 2f64.sqrt();
        let disc = (b * b - 4.0).abs().sqrt() / 2.0;
        let mut r = stability_report(1, 1.0).unwrap();
        r.roots.sort_by(|a, b| a.im.total_cmp(&b.im));
        assert!(close(r.roots[0].re, -b / 2.0, 1e-12) && close(r.roots[0].im, -disc, 1e-12));
        assert!(close(r.roots[1].re, -b / 2.0, 1e-12) && close(r.roots[1].im, disc, 1e-12));
        assert!(r.is_stable());

        // λ³ + 2λ² + 2λ + 1 = (λ + 1)(λ² + λ + 1).
        let mut r = stability_report(2, 1.0).unwrap();
        r.roots.sort_by(|a, b| a.im.total_cmp(&b.im));
        let h = 3f64.sqrt() / 2.0;
        let expect = [(-0.5, -h), (-1.0, 0.0), (-0.5, h)];
        for (root, (re, im)) in r.roots.iter().zip(expect) {
            assert!(close(root.re, re, 1e-12) && close(root.im, im, 1e-12), "{root}");
        }
        assert!(r.is_stable());
    }

    #[test]
    fn repeated_roots_are_not_distinct() {
        // (x + 1)^2
        let r = report_for_roots(monic_roots(&[2.0, 1.0]));
        assert!(r.all_negative_real);
        assert!(!r.all_distinct);
    }
}
