//! Truncated Fock-space generator of the biased Lindblad dynamics.
//!
//! Independent check of the Gaussian reduction for one- and two-mode
//! networks: `θ(s)` is the real part of the eigenvalue of `W_s` with the
//! largest real part. Density matrices are vectorized by stacking columns,
//! `vec(ρ)[i + d·j] = ρ_ij`.

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::exec::{self, ExecMode};
use crate::ldf::{fmt_f64, ThetaEvaluator};
use crate::model::{resolve_counting, CountingSpec, CouplingKind, NetworkSpec};

type C64 = Complex64;

/// Largest Liouville dimension the oracle will build.
pub const MAX_LIOUVILLE_DIM: usize = 1 << 18;
/// Truncation caps used by [`auto_truncate`].
pub const SINGLE_MODE_CAP: usize = 128;
pub const PAIR_MODE_CAP: usize = 14;

const MAX_MODES: usize = 2;
const DENSE_LIMIT: usize = 400;
const KRYLOV_DIM: usize = 40;
const MAX_RESTARTS: usize = 60;
const RITZ_TOL: f64 = 1e-13;

/// `W_s` on the truncated space, stored as compressed rows.
#[derive(Debug, Clone)]
pub struct TruncatedGenerator {
    pub n_max: usize,
    pub modes: usize,
    pub s: f64,
    /// Hilbert-space dimension `(n_max + 1)^N`.
    pub hilbert_dim: usize,
    /// Liouville dimension, the square of `hilbert_dim`.
    pub dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<C64>,
}

impl TruncatedGenerator {
    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Index of `|i⟩⟨j|` in the vectorized space.
    pub fn index(&self, i: usize, j: usize) -> usize {
        i + self.hilbert_dim * j
    }

    pub fn apply(&self, x: &[C64]) -> Vec<C64> {
        assert_eq!(x.len(), self.dim);
        (0..self.dim)
            .map(|r| {
                (self.row_ptr[r]..self.row_ptr[r + 1])
                    .map(|k| self.vals[k] * x[self.cols[k]])
                    .sum()
            })
            .collect()
    }

    /// `⟨I|W_s`, the trace of `W_s` applied to each basis operator. It
    /// vanishes at `s = 0`.
    pub fn trace_row(&self) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); self.dim];
        for i in 0..self.hilbert_dim {
            let r = self.index(i, i);
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                out[self.cols[k]] += self.vals[k];
            }
        }
        out
    }

    fn entries(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        (0..self.dim).flat_map(move |r| (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |k| (r, self.cols[k], self.vals[k])))
    }

    /// Basis operators connected to the vacuum projector `|0⟩⟨0|`.
    ///
    /// The generator is block diagonal under the conserved quantities of the
    /// network; the block holding the populations carries the trace and with
    /// it the leading eigenvalue.
    fn vacuum_block(&self) -> Vec<usize> {
        let mut parent: Vec<usize> = (0..self.dim).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for (r, c, _) in self.entries() {
            let (a, b) = (find(&mut parent, r), find(&mut parent, c));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
        let root = find(&mut parent, 0);
        (0..self.dim).filter(|&k| find(&mut parent, k) == root).collect()
    }
}

/// Rough memory footprint of building and factorizing a generator of
/// Liouville dimension `dim`.
pub fn memory_estimate(dim: usize) -> usize {
    // ~16 stored entries per row at 24 bytes, an LU fill of ~10x, and the
    // Krylov basis.
    dim * (16 * 24 * 11 + 16 * (KRYLOV_DIM + 2))
}

fn check_resources(network: &NetworkSpec, n_max: usize) -> Result<()> {
    let n = network.len();
    let hilbert = (n_max + 1).checked_pow(n as u32).unwrap_or(usize::MAX);
    let dim = hilbert.saturating_mul(hilbert);
    if n > MAX_MODES {
        return Err(Error::OracleResource {
            dim,
            bytes: memory_estimate(dim),
            reason: format!("{n} oscillators; the oracle handles at most {MAX_MODES}"),
        });
    }
    if dim > MAX_LIOUVILLE_DIM {
        return Err(Error::OracleResource {
            dim,
            bytes: memory_estimate(dim),
            reason: format!("Liouville dimension above {MAX_LIOUVILLE_DIM}"),
        });
    }
    Ok(())
}

fn check_supported(network: &NetworkSpec) -> Result<()> {
    network.ensure_valid()?;
    if network.is_driven() {
        return Err(Error::Config("the Fock oracle does not support drives".into()));
    }
    if network.baths.iter().any(|b| b.lambda.norm() != 0.0) {
        return Err(Error::Config("the Fock oracle does not support squeezed baths".into()));
    }
    Ok(())
}

/// Annihilation operator of `mode` on the truncated product space, with
/// mode 0 varying fastest in the basis index.
fn annihilation(modes: usize, n_max: usize, mode: usize) -> DMatrix<C64> {
    let levels = n_max + 1;
    let d = levels.pow(modes as u32);
    let stride = levels.pow(mode as u32);
    let mut a = DMatrix::zeros(d, d);
    for idx in 0..d {
        let n = (idx / stride) % levels;
        if n > 0 {
            a[(idx - stride, idx)] = C64::new((n as f64).sqrt(), 0.0);
        }
    }
    a
}

fn nonzeros(m: &DMatrix<C64>) -> Vec<(usize, usize, C64)> {
    let mut out = Vec::new();
    for c in 0..m.ncols() {
        for r in 0..m.nrows() {
            let v = m[(r, c)];
            if v != C64::new(0.0, 0.0) {
                out.push((r, c, v));
            }
        }
    }
    out
}

fn hamiltonian(network: &NetworkSpec, ops: &[DMatrix<C64>]) -> DMatrix<C64> {
    let d = ops[0].nrows();
    let mut h = DMatrix::zeros(d, d);
    for (k, osc) in network.oscillators.iter().enumerate() {
        let a = &ops[k];
        let ad = a.adjoint();
        let aa = a * a;
        h += (&ad * a) * C64::new(osc.omega, 0.0);
        h += &aa * osc.upsilon + aa.adjoint() * osc.upsilon.conj();
    }
    for c in &network.couplings {
        let (a, b) = (&ops[c.i], &ops[c.j]);
        let g = C64::new(c.g, 0.0);
        let term = match c.kind {
            CouplingKind::Xx => (a + a.adjoint()) * (b + b.adjoint()),
            CouplingKind::Rw => a * b.adjoint() + a.adjoint() * b,
            CouplingKind::Opo => a * b + (a * b).adjoint(),
        };
        h += term * g;
    }
    h
}

/// Build `W_s` with every oscillator truncated at `n_max` quanta.
///
/// The reference bath's jump terms `2Γ a•a†` and `2Γ̄ a†•a` carry the
/// weights `e^{−s}` and `e^{s}`.
pub fn build_biased_generator(
    network: &NetworkSpec,
    counting: &CountingSpec,
    s: f64,
    n_max: usize,
) -> Result<TruncatedGenerator> {
    if n_max < 2 {
        return Err(Error::Config(format!("truncation n_max = {n_max} is below 2")));
    }
    check_supported(network)?;
    check_resources(network, n_max)?;
    let reference = resolve_counting(network, counting)?;

    let modes = network.len();
    let ops: Vec<_> = (0..modes).map(|k| annihilation(modes, n_max, k)).collect();
    let d = ops[0].nrows();
    let dim = d * d;

    // ρ ↦ Gρ + ρG† collects the Hamiltonian and the anticommutators.
    let mut g = hamiltonian(network, &ops) * C64::new(0.0, -1.0);
    let mut jumps = Vec::new();
    for (b, bath) in network.baths.iter().enumerate() {
        let a = &ops[bath.oscillator];
        let ad = a.adjoint();
        g -= (&ad * a) * C64::new(bath.gamma_down, 0.0) + (a * &ad) * C64::new(bath.gamma_up, 0.0);
        let (down, up) = if b == reference { ((-s).exp(), s.exp()) } else { (1.0, 1.0) };
        if bath.gamma_down != 0.0 {
            jumps.push((2.0 * bath.gamma_down * down, nonzeros(a)));
        }
        if bath.gamma_up != 0.0 {
            jumps.push((2.0 * bath.gamma_up * up, nonzeros(&ad)));
        }
    }

    let g_nz = nonzeros(&g);
    let mut triplets: Vec<(usize, usize, C64)> = Vec::with_capacity(dim * (2 * g_nz.len() / d + 2 * jumps.len() + 1));
    for &(i, a, v) in &g_nz {
        for j in 0..d {
            // (Gρ)_ij = Σ_a G_ia ρ_aj
            triplets.push((i + d * j, a + d * j, v));
            // (ρG†)_ji = Σ_a ρ_ja conj(G_ia)
            triplets.push((j + d * i, j + d * a, v.conj()));
        }
    }
    for (rate, l) in &jumps {
        for &(i, a, u) in l {
            for &(j, b, w) in l {
                // (LρL†)_ij = Σ L_ia ρ_ab conj(L_jb)
                triplets.push((i + d * j, a + d * b, u * w.conj() * *rate));
            }
        }
    }

    triplets.sort_unstable_by_key(|t| (t.0, t.1));
    let mut row_ptr = vec![0usize; dim + 1];
    let mut cols = Vec::with_capacity(triplets.len());
    let mut vals: Vec<C64> = Vec::with_capacity(triplets.len());
    let mut last: Option<(usize, usize)> = None;
    for (r, c, v) in triplets {
        if last == Some((r, c)) {
            *vals.last_mut().unwrap() += v;
        } else {
            cols.push(c);
            vals.push(v);
            row_ptr[r + 1] += 1;
            last = Some((r, c));
        }
    }
    for r in 0..dim {
        row_ptr[r + 1] += row_ptr[r];
    }
    Ok(TruncatedGenerator { n_max, modes, s, hilbert_dim: d, dim, row_ptr, cols, vals })
}

/// Real part of the leading eigenvalue of `W_s`.
pub fn leading_theta(generator: &TruncatedGenerator) -> Result<f64> {
    leading_theta_near(generator, None)
}

/// As [`leading_theta`], with an estimate used to place the shift when the
/// population block is too large for a dense eigensolve.
pub fn leading_theta_near(generator: &TruncatedGenerator, estimate: Option<f64>) -> Result<f64> {
    let block = generator.vacuum_block();
    let mut local = vec![usize::MAX; generator.dim];
    for (k, &g) in block.iter().enumerate() {
        local[g] = k;
    }
    let entries: Vec<(usize, usize, C64)> = generator
        .entries()
        .filter(|&(r, c, _)| local[r] != usize::MAX && local[c] != usize::MAX)
        .map(|(r, c, v)| (local[r], local[c], v))
        .collect();
    let n = block.len();
    if n <= DENSE_LIMIT {
        let mut m = faer::Mat::<C64>::zeros(n, n);
        for (r, c, v) in entries {
            m[(r, c)] += v;
        }
        let eig = m.eigenvalues().map_err(|e| Error::Numerical(format!("{e:?}")))?;
        return Ok(eig.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max));
    }
    let centre = estimate.unwrap_or(0.0);
    let sigma = centre + 1e-3 * (1.0 + centre.abs());
    shift_invert_leading(n, &entries, sigma)
}

fn dot(u: &[C64], v: &[C64]) -> C64 {
    u.iter().zip(v).map(|(a, b)| a.conj() * b).sum()
}

fn norm(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Arnoldi on `(W − σ)^{-1}` with explicit restarts on the Ritz vector
/// whose eigenvalue has the largest real part.
fn shift_invert_leading(n: usize, entries: &[(usize, usize, C64)], sigma: f64) -> Result<f64> {
    let mut triplets: Vec<Triplet<usize, usize, C64>> = entries.iter().map(|&(r, c, v)| Triplet::new(r, c, v)).collect();
    triplets.extend((0..n).map(|k| Triplet::new(k, k, C64::new(-sigma, 0.0))));
    let shifted = SparseColMat::<usize, C64>::try_new_from_triplets(n, n, &triplets)
        .map_err(|e| Error::Numerical(format!("{e:?}")))?;
    let lu = shifted.sp_lu().map_err(|e| Error::Numerical(format!("{e:?}")))?;
    let apply = |v: &[C64]| -> Vec<C64> {
        let mut b = faer::Mat::from_fn(n, 1, |i, _| v[i]);
        lu.solve_in_place(b.as_mut());
        (0..n).map(|i| b[(i, 0)]).collect()
    };

    let m = KRYLOV_DIM.min(n);
    // a positive start vector overlaps the Perron-like leading state
    let mut start = vec![C64::new(1.0, 0.0); n];
    let (mut estimate, mut residual) = (f64::NAN, f64::INFINITY);
    for _ in 0..MAX_RESTARTS {
        let s = norm(&start);
        start.iter_mut().for_each(|z| *z /= s);
        let mut basis = vec![start.clone()];
        let mut h = faer::Mat::<C64>::zeros(m + 1, m);
        let mut steps = m;
        for j in 0..m {
            let mut w = apply(&basis[j]);
            for _ in 0..2 {
                for (i, v) in basis.iter().enumerate() {
                    let c = dot(v, &w);
                    h[(i, j)] += c;
                    w.iter_mut().zip(v).for_each(|(x, y)| *x -= c * y);
                }
            }
            let beta = norm(&w);
            h[(j + 1, j)] = C64::new(beta, 0.0);
            if beta <= 1e-14 * h[(j, j)].norm().max(1e-300) {
                steps = j + 1;
                break;
            }
            w.iter_mut().for_each(|z| *z /= beta);
            basis.push(w);
        }
        let hm = h.submatrix(0, 0, steps, steps).to_owned();
        let eig = hm.eigen().map_err(|e| Error::Numerical(format!("{e:?}")))?;
        let values = eig.S().column_vector();
        let best = (0..steps)
            .filter(|&k| values[k].norm() > 0.0)
            .max_by(|&a, &b| (sigma + values[a].inv().re).total_cmp(&(sigma + values[b].inv().re)))
            .ok_or_else(|| Error::Numerical("empty Krylov spectrum".into()))?;
        let mu = values[best];
        let y = eig.U().col(best);
        let ynorm = (0..steps).map(|k| y[k].norm_sqr()).sum::<f64>().sqrt();
        estimate = sigma + mu.inv().re;
        residual = h[(steps, steps - 1)].norm() * y[steps - 1].norm() / ynorm;
        if steps < m && n > steps {
            // breakdown: the Krylov space is invariant
            residual = 0.0;
        }
        if residual <= RITZ_TOL * mu.norm() {
            return Ok(estimate);
        }
        start = vec![C64::new(0.0, 0.0); n];
        for (k, v) in basis.iter().take(steps).enumerate() {
            let c = y[k];
            start.iter_mut().zip(v).for_each(|(x, b)| *x += c * b);
        }
    }
    Err(Error::NoConvergence { what: "shift-invert Arnoldi", iterations: MAX_RESTARTS, estimate, residual })
}

/// `θ(s)` at a fixed truncation; large blocks are shifted using the value
/// from a coarse truncation.
pub fn theta_fock(network: &NetworkSpec, counting: &CountingSpec, s: f64, n_max: usize) -> Result<f64> {
    theta_fock_near(network, counting, s, n_max, None)
}

fn theta_fock_near(
    network: &NetworkSpec,
    counting: &CountingSpec,
    s: f64,
    n_max: usize,
    estimate: Option<f64>,
) -> Result<f64> {
    let generator = build_biased_generator(network, counting, s, n_max)?;
    let estimate = match estimate {
        Some(e) => Some(e),
        None if n_max > 4 && generator.dim > DENSE_LIMIT => Some(theta_fock_near(network, counting, s, 4, None)?),
        None => None,
    };
    leading_theta_near(&generator, estimate)
}

fn truncation_cap(network: &NetworkSpec) -> usize {
    if network.len() == 1 {
        SINGLE_MODE_CAP
    } else {
        PAIR_MODE_CAP
    }
}

/// Double `n_max` from 8 until successive estimates agree within `tol`.
///
/// Returns the estimate at the truncation that was confirmed by its
/// doubling, together with that truncation.
pub fn auto_truncate(network: &NetworkSpec, counting: &CountingSpec, s: f64, tol: f64) -> Result<(f64, usize)> {
    if !(tol > 0.0) {
        return Err(Error::Config(format!("tolerance {tol} must be positive")));
    }
    let cap = truncation_cap(network);
    check_resources(network, cap)?;
    let mut n = 8.min(cap);
    let mut theta = theta_fock(network, counting, s, n)?;
    loop {
        let next = (2 * n).min(cap);
        if next == n {
            return Err(Error::NoConvergence {
                what: "Fock truncation",
                iterations: n,
                estimate: theta,
                residual: f64::NAN,
            });
        }
        let refined = theta_fock_near(network, counting, s, next, Some(theta))?;
        let diff = (refined - theta).abs();
        if diff < tol {
            return Ok((theta, n));
        }
        if next == cap {
            return Err(Error::NoConvergence {
                what: "Fock truncation",
                iterations: next,
                estimate: refined,
                residual: diff,
            });
        }
        n = next;
        theta = refined;
    }
}

/// How the oracle picks its truncation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Truncation {
    Fixed(usize),
    Auto { tol: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleRow {
    pub s: f64,
    pub theta_gauss: f64,
    pub theta_fock: f64,
    pub abs_diff: f64,
    /// Truncation behind `theta_fock`; the cap tried when it did not converge.
    pub n_max: usize,
}

/// Evaluate both methods on `grid`. Points where either fails are kept with
/// NaN in the failing column; resource refusals abort.
pub fn oracle_compare(eval: &ThetaEvaluator, grid: &[f64], truncation: Truncation, mode: ExecMode) -> Result<Vec<OracleRow>> {
    let network = eval.network();
    let counting = eval.counting();
    check_supported(network)?;
    match truncation {
        Truncation::Fixed(n) => check_resources(network, n)?,
        Truncation::Auto { .. } => check_resources(network, truncation_cap(network))?,
    }
    let rows = exec::map(mode, grid, |&s| -> Result<OracleRow> {
        let theta_gauss = eval.theta(s).unwrap_or(f64::NAN);
        let (theta_fock, n_max) = match truncation {
            Truncation::Fixed(n) => match theta_fock(network, counting, s, n) {
                Ok(t) => (t, n),
                Err(Error::NoConvergence { .. }) => (f64::NAN, n),
                Err(e) => return Err(e),
            },
            Truncation::Auto { tol } => match auto_truncate(network, counting, s, tol) {
                Ok(r) => r,
                Err(Error::NoConvergence { iterations, .. }) => (f64::NAN, iterations),
                Err(e) => return Err(e),
            },
        };
        Ok(OracleRow { s, theta_gauss, theta_fock, abs_diff: (theta_gauss - theta_fock).abs(), n_max })
    });
    rows.into_iter().collect()
}

pub fn write_oracle_csv<W: std::io::Write>(mut f: W, rows: &[OracleRow]) -> Result<()> {
    writeln!(f, "s,theta_gauss,theta_fock,abs_diff,n_max")?;
    for r in rows {
        writeln!(
            f,
            "{},{},{},{},{}",
            fmt_f64(r.s),
            fmt_f64(r.theta_gauss),
            fmt_f64(r.theta_fock),
            fmt_f64(r.abs_diff),
            r.n_max
        )?;
    }
    f.flush()?;
    Ok(())
}
