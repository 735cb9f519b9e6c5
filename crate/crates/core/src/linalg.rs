//! Dense kernels shared by the solvers: Bartels–Stewart for Lyapunov
//! equations, the Newton matrix sign iteration, spectral abscissae.

use nalgebra::{DMatrix, Schur};
use num_complex::Complex64;

use crate::error::{Error, Result};

const SCHUR_MAX_ITER: usize = 10_000;

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    max_abs(&(m - m.transpose()))
}

fn one_norm(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn eigenvalues(m: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    if m.is_empty() {
        return Ok(Vec::new());
    }
    let schur = Schur::try_new(m.clone(), f64::EPSILON, SCHUR_MAX_ITER)
        .ok_or_else(|| Error::Numerical("Schur decomposition did not converge".into()))?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

/// Largest real part over the spectrum.
pub fn spectral_abscissa(m: &DMatrix<f64>) -> Result<f64> {
    Ok(eigenvalues(m)?
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Solve `A X + X Aᵀ = C` by Bartels–Stewart on the real Schur form of `A`.
///
/// Needs `λ_i + λ_j ≠ 0` for all eigenvalue pairs of `A`, which holds for
/// every Hurwitz `A`.
pub fn solve_lyapunov(a: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n || c.nrows() != n || c.ncols() != n {
        return Err(Error::Numerical("Lyapunov operands must be square and conformant".into()));
    }
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let schur = Schur::try_new(a.clone(), f64::EPSILON, SCHUR_MAX_ITER)
        .ok_or_else(|| Error::Numerical("Schur decomposition did not converge".into()))?;
    let (q, t) = schur.unpack();
    let ct = q.transpose() * c * &q;
    let blocks = diagonal_blocks(&t);
    let mut y = DMatrix::<f64>::zeros(n, n);

    // T Y + Y Tᵀ = C̃, solved block by block from the bottom-right corner.
    for bi in (0..blocks.len()).rev() {
        let (i0, p) = blocks[bi];
        for bj in (0..blocks.len()).rev() {
            let (j0, q_) = blocks[bj];
            let mut rhs = ct.view((i0, j0), (p, q_)).clone_owned();
            // Σ_{k>i} T_ik Y_kj
            let below = i0 + p;
            if below < n {
                rhs -= t.view((i0, below), (p, n - below)) * y.view((below, j0), (n - below, q_));
            }
            // Σ_{l>j} Y_il T_jlᵀ
            let right = j0 + q_;
            if right < n {
                rhs -= y.view((i0, right), (p, n - right)) * t.view((j0, right), (q_, n - right)).transpose();
            }
            let tii = t.view((i0, i0), (p, p)).clone_owned();
            let tjj = t.view((j0, j0), (q_, q_)).clone_owned();
            let block = solve_small_sylvester(&tii, &tjj, &rhs)?;
            y.view_mut((i0, j0), (p, q_)).copy_from(&block);
        }
    }
    Ok(&q * y * q.transpose())
}

/// Starting index and size (1 or 2) of every diagonal block of a real
/// quasi-triangular matrix.
fn diagonal_blocks(t: &DMatrix<f64>) -> Vec<(usize, usize)> {
    let n = t.nrows();
    let scale = max_abs(t).max(f64::MIN_POSITIVE);
    let mut out = Vec::new();
    let mut i = 0;
    while i < n {
        if i + 1 < n && t[(i + 1, i)].abs() > 1e-14 * scale {
            out.push((i, 2));
            i += 2;
        } else {
            out.push((i, 1));
            i += 1;
        }
    }
    out
}

/// `A Y + Y Bᵀ = C` for blocks of size at most 2, via the Kronecker form.
fn solve_small_sylvester(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = a.nrows();
    let q = b.nrows();
    let k = DMatrix::<f64>::identity(q, q).kronecker(a) + b.kronecker(&DMatrix::<f64>::identity(p, p));
    let rhs = DMatrix::from_column_slice(p * q, 1, c.as_slice());
    let sol = k
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("Lyapunov operator is singular (λ_i + λ_j = 0)".into()))?;
    Ok(DMatrix::from_column_slice(p, q, sol.as_slice()))
}

/// Matrix sign function by the scaled Newton iteration.
///
/// Fails when the iteration meets a singular iterate or does not converge,
/// both symptoms of eigenvalues on (or numerically at) the imaginary axis.
pub fn matrix_sign(h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = h.nrows();
    let mut z = h.clone();
    let mut scaling = true;
    let mut prev_change = f64::INFINITY;
    let max_iter = 100;
    for it in 0..max_iter {
        let lu = z.clone().lu();
        let log_det: f64 = (0..n).map(|i| lu.u()[(i, i)].abs().ln()).sum();
        let inv = lu
            .try_inverse()
            .ok_or_else(|| Error::Numerical("singular iterate in sign iteration".into()))?;
        if !log_det.is_finite() {
            return Err(Error::Numerical("singular iterate in sign iteration".into()));
        }
        let c = if scaling { (-log_det / n as f64).exp() } else { 1.0 };
        let next = (&z * c + inv / c) * 0.5;
        let change = one_norm(&(&next - &z));
        let size = one_norm(&next);
        z = next;
        if !size.is_finite() {
            break;
        }
        if change <= 1e-2 * size {
            scaling = false;
        }
        if change <= 1e-13 * size {
            return Ok(z);
        }
        // Ill-conditioned inputs stall at rounding level above the target;
        // callers polish the result anyway.
        if !scaling && change <= 1e-6 * size && change >= prev_change {
            return Ok(z);
        }
        prev_change = change;
        if it + 1 == max_iter {
            return Err(Error::NoConvergence {
                what: "matrix sign iteration",
                iterations: max_iter,
                estimate: size,
                residual: change / size,
            });
        }
    }
    Err(Error::Numerical("sign iteration overflowed".into()))
}

/// Least-squares solve of an overdetermined system.
pub fn lstsq(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    a.clone()
        .svd(true, true)
        .solve(b, 1e-14)
        .map_err(|e| Error::Numerical(format!("least squares failed: {e}")))
}
