//! Dense direct solvers for the Hessian and KKT systems of the dynamics.
//!
//! Symmetric positive-definite systems go through a Cholesky factorization
//! that reports the index of the first bad pivot. Block KKT systems
//! `[[H, Aᵀ], [A, 0]]` are reduced to a Schur complement when `H` is positive
//! definite and fall back to LU with partial pivoting otherwise.

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Tikhonov shift applied after a failed factorization.
pub const REGULARIZATION: f64 = 1e-10;

const SYMMETRY_TOL: f64 = 1e-10;
const PIVOT_REL_TOL: f64 = 1e-14;

/// Upper Cholesky factor `U` with `M = UᵀU`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    u: Matrix,
}

impl Cholesky {
    /// Factors `m`, reading only its upper triangle.
    pub fn new(m: &Matrix) -> Result<Self> {
        let n = m.nrows();
        if m.ncols() != n {
            return Err(Error::InvalidInput(format!(
                "matrix must be square, got {}x{}",
                n,
                m.ncols()
            )));
        }
        let mut u = Matrix::zeros(n, n);
        for j in 0..n {
            for i in 0..=j {
                let (ci, cj) = (u.column(i), u.column(j));
                let dot: f64 = ci.rows(0, i).dot(&cj.rows(0, i));
                let v = m[(i, j)] - dot;
                if i == j {
                    if !(v > PIVOT_REL_TOL * m[(j, j)].abs()) || v < f64::MIN_POSITIVE {
                        return Err(Error::SingularSystem { index: j, pivot: v });
                    }
                    u[(j, j)] = v.sqrt();
                } else {
                    u[(i, j)] = v / u[(i, i)];
                }
            }
        }
        Ok(Self { u })
    }

    pub fn dim(&self) -> usize {
        self.u.nrows()
    }

    /// Solves `M w = rhs` in place.
    pub fn solve_mut(&self, w: &mut Vector) {
        let n = self.dim();
        // Uᵀ y = rhs
        for i in 0..n {
            let col = self.u.column(i);
            let s = col.rows(0, i).dot(&w.rows(0, i));
            w[i] = (w[i] - s) / self.u[(i, i)];
        }
        // U w = y
        for i in (0..n).rev() {
            let wi = w[i] / self.u[(i, i)];
            w[i] = wi;
            let col = self.u.column(i);
            for k in 0..i {
                w[k] -= col[k] * wi;
            }
        }
    }

    pub fn solve(&self, rhs: &Vector) -> Vector {
        let mut w = rhs.clone();
        self.solve_mut(&mut w);
        w
    }

    /// `log det M`.
    pub fn log_det(&self) -> f64 {
        2.0 * self.u.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }
}

/// Maximum absolute asymmetry `max |M - Mᵀ|`.
pub fn asymmetry(m: &Matrix) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in 0..j {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

fn check_symmetric(m: &Matrix) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::InvalidInput(format!(
            "matrix must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    let scale = m.amax().max(1.0);
    let asym = asymmetry(m);
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::InvalidInput(format!(
            "matrix is not symmetric (max asymmetry {asym:e})"
        )));
    }
    Ok(())
}

fn check_rhs(rhs: &Vector, n: usize) -> Result<()> {
    if rhs.len() != n {
        return Err(Error::InvalidInput(format!(
            "right-hand side has length {}, expected {n}",
            rhs.len()
        )));
    }
    if rhs.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("right-hand side has non-finite entries".into()));
    }
    Ok(())
}

/// Solves `M w = rhs` for symmetric positive-definite `M`.
///
/// ```
/// use tvipm::linalg::{solve_spd, Matrix, Vector};
/// let m = Matrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
/// let w = solve_spd(&m, &Vector::from_vec(vec![3.0, 3.0])).unwrap();
/// assert!((w[0] - 1.0).abs() < 1e-14 && (w[1] - 1.0).abs() < 1e-14);
/// ```
pub fn solve_spd(m: &Matrix, rhs: &Vector) -> Result<Vector> {
    check_symmetric(m)?;
    check_rhs(rhs, m.nrows())?;
    Ok(Cholesky::new(m)?.solve(rhs))
}

/// Factors `M`, retrying once with `M + δI` when the factorization fails.
pub fn factor_spd_regularized(m: &Matrix) -> Result<Cholesky> {
    check_symmetric(m)?;
    match Cholesky::new(m) {
        Err(Error::SingularSystem { index, pivot }) => {
            warn!("cholesky failed at pivot {index} ({pivot:e}); retrying with shift {REGULARIZATION:e}");
            let n = m.nrows();
            Cholesky::new(&(m + Matrix::identity(n, n) * REGULARIZATION))
        }
        other => other,
    }
}

/// [`solve_spd`], retrying once with `M + δI` when the factorization fails.
pub fn solve_spd_regularized(m: &Matrix, rhs: &Vector) -> Result<Vector> {
    check_rhs(rhs, m.nrows())?;
    Ok(factor_spd_regularized(m)?.solve(rhs))
}

/// Solves the block system `[[H, Aᵀ], [A, 0]] [x; ν] = rhs`.
///
/// With `q = 0` this is exactly [`solve_spd`].
pub fn solve_kkt(h: &Matrix, a: &Matrix, rhs: &Vector) -> Result<Vector> {
    let n = h.nrows();
    let q = a.nrows();
    if q == 0 {
        return solve_spd(h, rhs);
    }
    check_symmetric(h)?;
    if a.ncols() != n {
        return Err(Error::InvalidInput(format!(
            "constraint matrix is {q}x{}, expected {q}x{n}",
            a.ncols()
        )));
    }
    if q >= n {
        return Err(Error::InvalidInput(format!(
            "constraint matrix needs fewer rows than columns ({q} >= {n})"
        )));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("constraint matrix has non-finite entries".into()));
    }
    check_rhs(rhs, n + q)?;

    match Cholesky::new(h) {
        Ok(chol) => kkt_schur_refined(&chol, h, a, rhs),
        Err(Error::SingularSystem { index, pivot }) => {
            warn!("H block not positive definite (pivot {index}: {pivot:e}); using LU");
            kkt_lu(h, a, rhs)
        }
        Err(e) => Err(e),
    }
}

fn kkt_schur(chol: &Cholesky, a: &Matrix, rhs: &Vector) -> Result<Vector> {
    let n = chol.dim();
    let q = a.nrows();
    let r1 = rhs.rows(0, n).clone_owned();
    let r2 = rhs.rows(n, q).clone_owned();

    // W = H⁻¹ Aᵀ, S = A W
    let mut w = a.transpose();
    for j in 0..q {
        let mut col = w.column(j).clone_owned();
        chol.solve_mut(&mut col);
        w.set_column(j, &col);
    }
    let mut s = a * &w;
    // symmetrize against roundoff before factoring
    for j in 0..q {
        for i in 0..j {
            let v = 0.5 * (s[(i, j)] + s[(j, i)]);
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
    }
    let schur = Cholesky::new(&s).map_err(|e| match e {
        Error::SingularSystem { index, pivot } => Error::SingularSystem {
            index: n + index,
            pivot,
        },
        other => other,
    })?;
    let hinv_r1 = chol.solve(&r1);
    let nu = schur.solve(&(a * &hinv_r1 - r2));
    let x = hinv_r1 - &w * &nu;

    let mut out = Vector::zeros(n + q);
    out.rows_mut(0, n).copy_from(&x);
    out.rows_mut(n, q).copy_from(&nu);
    Ok(out)
}

fn kkt_schur_refined(chol: &Cholesky, h: &Matrix, a: &Matrix, rhs: &Vector) -> Result<Vector> {
    let n = h.nrows();
    let q = a.nrows();
    let mut sol = kkt_schur(chol, a, rhs)?;
    // iterative refinement against the assembled system
    for _ in 0..2 {
        let x = sol.rows(0, n).clone_owned();
        let nu = sol.rows(n, q).clone_owned();
        let mut r = rhs.clone();
        let top = h * &x + a.tr_mul(&nu);
        let bottom = a * &x;
        r.rows_mut(0, n).axpy(-1.0, &top, 1.0);
        r.rows_mut(n, q).axpy(-1.0, &bottom, 1.0);
        if r.norm() <= f64::EPSILON * (1.0 + rhs.norm()) {
            break;
        }
        sol += kkt_schur(chol, a, &r)?;
    }
    Ok(sol)
}

fn kkt_lu(h: &Matrix, a: &Matrix, rhs: &Vector) -> Result<Vector> {
    let k = assemble_kkt(h, a);
    let lu = k.lu();
    // locate the first vanishing pivot for the error report
    let u = lu.u();
    let scale = u.amax().max(f64::MIN_POSITIVE);
    if let Some(index) = (0..u.nrows()).find(|&i| u[(i, i)].abs() <= PIVOT_REL_TOL * scale) {
        return Err(Error::SingularSystem {
            index,
            pivot: u[(index, index)],
        });
    }
    lu.solve(rhs).ok_or(Error::SingularSystem { index: 0, pivot: 0.0 })
}

/// Assembles `[[H, Aᵀ], [A, 0]]`.
pub fn assemble_kkt(h: &Matrix, a: &Matrix) -> Matrix {
    let n = h.nrows();
    let q = a.nrows();
    let mut k = Matrix::zeros(n + q, n + q);
    k.view_mut((0, 0), (n, n)).copy_from(h);
    k.view_mut((n, 0), (q, n)).copy_from(a);
    k.view_mut((0, n), (n, q)).copy_from(&a.transpose());
    k
}

/// Spectral condition number of a symmetric matrix, `|λ|max / |λ|min`.
///
/// Returns `inf` for singular input.
pub fn condition_number(m: &Matrix) -> f64 {
    let eig = m.clone().symmetric_eigenvalues();
    let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), v| {
        (lo.min(v.abs()), hi.max(v.abs()))
    });
    if lo == 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    fn m(r: usize, c: usize, xs: &[f64]) -> Matrix {
        Matrix::from_row_slice(r, c, xs)
    }

    #[test]
    fn spd_examples() {
        assert_eq!(
            solve_spd(&Matrix::identity(2, 2), &v(&[3.0, 4.0])).unwrap(),
            v(&[3.0, 4.0])
        );
        let w = solve_spd(&m(2, 2, &[2.0, 0.0, 0.0, 4.0]), &v(&[2.0, 4.0])).unwrap();
        assert_abs_diff_eq!(w, v(&[1.0, 1.0]), epsilon = 1e-15);
        let w = solve_spd(&m(2, 2, &[2.0, 1.0, 1.0, 2.0]), &v(&[3.0, 3.0])).unwrap();
        assert_abs_diff_eq!(w, v(&[1.0, 1.0]), epsilon = 1e-14);
    }

    #[test]
    fn spd_reports_pivot_index() {
        let bad = m(3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0]);
        match solve_spd(&bad, &v(&[1.0, 1.0, 1.0])) {
            Err(Error::SingularSystem { index, .. }) => assert_eq!(index, 2),
            other => panic!("expected singular system, got {other:?}"),
        }
        let neg = m(2, 2, &[-1.0, 0.0, 0.0, 1.0]);
        assert!(matches!(
            solve_spd(&neg, &v(&[1.0, 1.0])),
            Err(Error::SingularSystem { index: 0, .. })
        ));
    }

    #[test]
    fn spd_rejects_asymmetric() {
        let a = m(2, 2, &[2.0, 1.0, 0.0, 2.0]);
        assert!(matches!(solve_spd(&a, &v(&[1.0, 1.0])), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn regularized_recovers_semidefinite() {
        let psd = m(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let rhs = v(&[1.0, 1.0]);
        assert!(solve_spd(&psd, &rhs).is_err());
        let w = solve_spd_regularized(&psd, &rhs).unwrap();
        assert!(w.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn kkt_examples() {
        let h = Matrix::identity(2, 2);
        let w = solve_kkt(&h, &m(1, 2, &[1.0, 1.0]), &v(&[0.0, 0.0, -1.0])).unwrap();
        assert_abs_diff_eq!(w, v(&[-0.5, -0.5, 0.5]), epsilon = 1e-14);
        let w = solve_kkt(&h, &m(1, 2, &[1.0, 0.0]), &v(&[1.0, 0.0, 0.0])).unwrap();
        assert_abs_diff_eq!(w, v(&[0.0, 0.0, 1.0]), epsilon = 1e-14);
    }

    #[test]
    fn kkt_without_constraints_is_spd_bitwise() {
        let h = m(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let rhs = v(&[1.0, -2.0, 0.3]);
        let a = Matrix::zeros(0, 3);
        let k = solve_kkt(&h, &a, &rhs).unwrap();
        let s = solve_spd(&h, &rhs).unwrap();
        for (x, y) in k.iter().zip(s.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn kkt_rank_deficient_fails() {
        let h = Matrix::identity(3, 3);
        let a = m(2, 3, &[1.0, 1.0, 0.0, 2.0, 2.0, 0.0]);
        assert!(matches!(
            solve_kkt(&h, &a, &v(&[0.0, 0.0, 0.0, 1.0, 2.0])),
            Err(Error::SingularSystem { .. })
        ));
    }

    #[test]
    fn kkt_indefinite_h_uses_lu() {
        // H indefinite but the KKT matrix is nonsingular
        let h = m(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let a = m(1, 2, &[0.0, 1.0]);
        let rhs = v(&[1.0, 2.0, 3.0]);
        let w = solve_kkt(&h, &a, &rhs).unwrap();
        let r = assemble_kkt(&h, &a) * &w - &rhs;
        assert!(r.norm() < 1e-12);
    }

    #[test]
    fn condition_of_diagonal() {
        assert_abs_diff_eq!(condition_number(&m(2, 2, &[2.0, 0.0, 0.0, 8.0])), 4.0, epsilon = 1e-12);
        assert!(condition_number(&m(2, 2, &[1.0, 1.0, 1.0, 1.0])) > 1e12);
    }

    #[test]
    fn log_det_matches_product() {
        let c = Cholesky::new(&m(2, 2, &[2.0, 0.0, 0.0, 8.0])).unwrap();
        assert_abs_diff_eq!(c.log_det(), 16f64.ln(), epsilon = 1e-14);
    }

    /// SPD matrix `Q diag(d) Qᵀ` with eigenvalues spread over `[1, cond]`.
    fn spd_with_condition(n: usize, seed: &[f64], cond: f64) -> Matrix {
        let g = Matrix::from_fn(n, n, |i, j| {
            seed[(i * n + j) % seed.len()] + 0.1 * (i as f64 - j as f64)
        });
        let q = g.qr().q();
        let d = Vector::from_fn(n, |i, _| {
            if n == 1 {
                1.0
            } else {
                cond.powf(i as f64 / (n - 1) as f64)
            }
        });
        let mut out = &q * Matrix::from_diagonal(&d) * q.transpose();
        for j in 0..n {
            for i in 0..j {
                let s = 0.5 * (out[(i, j)] + out[(j, i)]);
                out[(i, j)] = s;
                out[(j, i)] = s;
            }
        }
        out
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn spd_residual_bound(
            n in 1usize..8,
            seed in prop::collection::vec(-1.0f64..1.0, 64),
            rhs in prop::collection::vec(-10.0f64..10.0, 8),
            log_cond in 0.0f64..6.0,
        ) {
            let mm = spd_with_condition(n, &seed, 10f64.powf(log_cond));
            let b = Vector::from_column_slice(&rhs[..n]);
            let w = solve_spd(&mm, &b).unwrap();
            let r = (&mm * &w - &b).norm();
            prop_assert!(r <= 1e-10 * (1.0 + b.norm()), "residual {r}");
        }

        #[test]
        fn kkt_residual_bound(
            n in 2usize..8,
            q_frac in 0.0f64..1.0,
            seed in prop::collection::vec(-1.0f64..1.0, 64),
            aseed in prop::collection::vec(-1.0f64..1.0, 64),
            rhs in prop::collection::vec(-10.0f64..10.0, 16),
            log_cond in 0.0f64..6.0,
        ) {
            let q = ((n - 1) as f64 * q_frac) as usize;
            let h = spd_with_condition(n, &seed, 10f64.powf(log_cond));
            // orthonormal rows keep A well conditioned
            let g = Matrix::from_fn(n, n, |i, j| aseed[(i * n + j) % aseed.len()] + if i == j { 2.0 } else { 0.0 });
            let a = g.qr().q().rows(0, q).clone_owned();
            let b = Vector::from_column_slice(&rhs[..n + q]);
            let w = solve_kkt(&h, &a, &b).unwrap();
            let r = (assemble_kkt(&h, &a) * &w - &b).norm();
            prop_assert!(r <= 1e-9 * (1.0 + b.norm()), "residual {r}");
        }
    }
}
