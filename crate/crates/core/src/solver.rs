//! Stationary Lyapunov/Riccati solutions for the biased covariance and the
//! two time-dependent flows (covariance and first moment).
//!
//! Writing `M = A − F⁻`, `R = F⁺` and `Q = F⁺ − 2D`, the biased covariance
//! obeys
//!
//! ```text
//! Σ̇ = MΣ + ΣMᵀ + ΣRΣ + Q
//! ```
//!
//! and the physical stationary point is the one whose linearization
//! `K = M + ΣR` is Hurwitz. The first moment follows `ẋ = Kx + d(t)`.
//!
//! The stationary equation is solved for the excess over the vacuum,
//! `X = Σ − I`:
//!
//! ```text
//! (M + R)X + X(M + R)ᵀ + XRX + (A + Aᵀ − 2D) + 2(F⁺ − F⁻) = 0
//! ```
//!
//! The emission parts of `F±`, which grow like `e^{−s}`, cancel exactly in
//! this form, so the residual and `θ` stay accurate at large negative `s`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, max_abs};
use crate::phasespace::{BiasMatrices, PhaseSpaceSystem};

const NEWTON_MAX_ITER: usize = 60;
const AGREEMENT_TOL: f64 = 1e-8;

/// How an accepted covariance was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RiccatiMethod {
    /// `s = 0`: plain Lyapunov equation.
    Lyapunov,
    /// Stable invariant subspace of the Hamiltonian matrix, Newton-polished.
    InvariantSubspace,
    /// Newton iteration from a continuation seed.
    Newton,
}

/// Stationary biased covariance together with its stabilizing certificate.
#[derive(Debug, Clone)]
pub struct BiasedCovariance {
    pub s: f64,
    pub sigma: DMatrix<f64>,
    /// `Σ − I`, kept at full precision.
    pub excess: DMatrix<f64>,
    /// Largest real part of the spectrum of `A − F⁻ + ΣF⁺`.
    pub closed_loop_margin: f64,
    pub residual: f64,
    /// Forward error estimate of `θ` at this point, from the rounding floor
    /// of the residual propagated through the linearized equation.
    pub theta_error: f64,
    pub method: RiccatiMethod,
}

/// Unique solution of `AΣ + ΣAᵀ = 2D` for a stable drift.
pub fn solve_lyapunov(a: &DMatrix<f64>, d: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let margin = linalg::spectral_abscissa(a)?;
    if margin >= 0.0 {
        return Err(Error::Unstable { margin });
    }
    let mut sigma = linalg::solve_lyapunov(a, &(d * 2.0))?;
    linalg::symmetrize(&mut sigma);
    Ok(sigma)
}

/// The stationary equation in the excess variable `X = Σ − I`.
struct Operators {
    m: DMatrix<f64>,
    r: DMatrix<f64>,
    q: DMatrix<f64>,
    tol: f64,
    /// Reference block and `(f₊, absorb)`, for the error estimate of `θ`.
    block: usize,
    f_plus: f64,
    absorb: f64,
}

impl Operators {
    fn new(a: &DMatrix<f64>, d: &DMatrix<f64>, bias: &BiasMatrices) -> Self {
        let diff = bias.difference();
        Operators {
            m: a + &diff,
            r: bias.f_plus.clone(),
            q: a + a.transpose() - d * 2.0 + diff * 2.0,
            tol: 1e-10 * max_abs(d).max(1.0),
            block: 2 * bias.oscillator,
            f_plus: bias.f_plus_scalar,
            absorb: bias.absorb,
        }
    }

    /// As [`Operators::new`], with `Q` built from the exact balance
    /// `A + Aᵀ − 2D`. On the reference block `Q` is `4Γ̄_r e^s` plus the other
    /// baths' share, which the generic form only reaches by cancelling
    /// `O(Γ)` terms.
    fn for_system(system: &PhaseSpaceSystem, bias: &BiasMatrices) -> Self {
        let diff = bias.difference();
        let mut q = system.balance.clone();
        if bias.absorb != 0.0 {
            let gain = 4.0 * bias.gamma_up * bias.s.exp();
            let k = 2 * bias.oscillator;
            for r in k..k + 2 {
                q[(r, r)] = (q[(r, r)] - 4.0 * bias.gamma_up) + gain;
            }
        }
        Operators {
            m: &system.drift + &diff,
            r: bias.f_plus.clone(),
            q,
            tol: 1e-10 * max_abs(&system.noise).max(1.0),
            block: 2 * bias.oscillator,
            f_plus: bias.f_plus_scalar,
            absorb: bias.absorb,
        }
    }

    /// Bound on the error of `θ = 2·absorb + ½f₊ tr X` caused by rounding.
    ///
    /// The residual can only be evaluated to `ε_n(|M||X| + |X||M|ᵀ +
    /// |X||R||X| + |Q|)`; that floor, plus the residual itself, is pushed
    /// through `KΔ + ΔKᵀ = E`. Far from `s = 0` the factor `f₊` grows like
    /// `e^{|s|}` and this bound, not the residual, limits what is resolvable.
    fn theta_error(&self, x: &DMatrix<f64>, k: &DMatrix<f64>) -> Result<f64> {
        if self.f_plus == 0.0 {
            return Ok(0.0);
        }
        let n = x.nrows();
        let eps = f64::EPSILON * (n + 2) as f64;
        let (m, xa) = (self.m.abs(), x.abs());
        let mx = &m * &xa;
        let floor = (&mx + mx.transpose() + &xa * self.r.abs() * &xa + self.q.abs()) * eps + self.residual(x).abs();
        let delta = linalg::solve_lyapunov(k, &floor)?;
        let b = self.block;
        let tr = x[(b, b)] + x[(b + 1, b + 1)];
        let spread = 0.5 * self.f_plus.abs() * (delta[(b, b)].abs() + delta[(b + 1, b + 1)].abs());
        Ok(spread + f64::EPSILON * (2.0 * self.absorb.abs() + 0.5 * (self.f_plus * tr).abs()))
    }

    fn residual(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mx = &self.m * x;
        &mx + mx.transpose() + x * &self.r * x + &self.q
    }

    fn closed_loop(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        &self.m + x * &self.r
    }

    /// Newton steps `KΔ + ΔKᵀ = −Res(X)`, stopped once the residual stops
    /// shrinking.
    fn newton(&self, mut x: DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut res = max_abs(&self.residual(&x));
        for _ in 0..NEWTON_MAX_ITER {
            if !res.is_finite() {
                break;
            }
            if res < 1e-3 * self.tol {
                return Ok(x);
            }
            let k = self.closed_loop(&x);
            let step = linalg::solve_lyapunov(&k, &(-self.residual(&x)))?;
            let mut next = &x + step;
            linalg::symmetrize(&mut next);
            let next_res = max_abs(&self.residual(&next));
            if !(next_res < res) {
                // Stagnation at rounding level is convergence; anything else
                // is reported by the caller's residual check.
                return Ok(x);
            }
            x = next;
            res = next_res;
        }
        if res.is_finite() && res < self.tol {
            return Ok(x);
        }
        Err(Error::NoConvergence {
            what: "Newton iteration for the Riccati equation",
            iterations: NEWTON_MAX_ITER,
            estimate: max_abs(&x),
            residual: res,
        })
    }

    /// Graph basis `[I; X]` of the stable invariant subspace of
    /// `H = [[Mᵀ, R], [−Q, −M]]`, extracted from `sign(H)`.
    fn invariant_subspace(&self) -> Result<DMatrix<f64>> {
        let n = self.m.nrows();
        let mut h = DMatrix::zeros(2 * n, 2 * n);
        h.view_mut((0, 0), (n, n)).copy_from(&self.m.transpose());
        h.view_mut((0, n), (n, n)).copy_from(&self.r);
        h.view_mut((n, 0), (n, n)).copy_from(&(-&self.q));
        h.view_mut((n, n), (n, n)).copy_from(&(-&self.m));
        let mut w = linalg::matrix_sign(&h)?;
        for i in 0..2 * n {
            w[(i, i)] += 1.0;
        }
        // (sign(H) + I)[I; X] = 0
        let lhs = w.columns(n, n).clone_owned();
        let rhs = -w.columns(0, n).clone_owned();
        let mut x = linalg::lstsq(&lhs, &rhs)?;
        linalg::symmetrize(&mut x);
        Ok(x)
    }

    fn accept(&self, x: DMatrix<f64>, s: f64, method: RiccatiMethod) -> Result<BiasedCovariance> {
        let residual = max_abs(&self.residual(&x));
        if !residual.is_finite() || residual >= self.tol {
            return Err(Error::DomainBoundary {
                s,
                reason: format!("Riccati residual {residual:.3e} above tolerance"),
            });
        }
        let k = self.closed_loop(&x);
        let margin = linalg::spectral_abscissa(&k)?;
        if !(margin < 0.0) {
            return Err(Error::DomainBoundary {
                s,
                reason: format!("solution is not stabilizing (closed-loop margin {margin:.3e})"),
            });
        }
        let theta_error = self.theta_error(&x, &k)?;
        let n = x.nrows();
        Ok(BiasedCovariance {
            s,
            sigma: &x + DMatrix::identity(n, n),
            excess: x,
            closed_loop_margin: margin,
            residual,
            theta_error,
            method,
        })
    }
}

/// Riccati residual `(A−F⁻)Σ + Σ(A−F⁻)ᵀ + ΣF⁺Σ + F⁺ − 2D`, evaluated in the
/// excess form.
pub fn riccati_residual(a: &DMatrix<f64>, d: &DMatrix<f64>, bias: &BiasMatrices, sigma: &DMatrix<f64>) -> DMatrix<f64> {
    let n = sigma.nrows();
    Operators::new(a, d, bias).residual(&(sigma - DMatrix::identity(n, n)))
}

/// Stabilizing solution of the stationary biased covariance equation.
pub fn solve_riccati_stationary(a: &DMatrix<f64>, d: &DMatrix<f64>, bias: &BiasMatrices) -> Result<BiasedCovariance> {
    solve_riccati_from(a, d, bias, None)
}

/// As [`solve_riccati_stationary`], with a continuation seed (usually the
/// solution at a neighbouring bias value) for the Newton fallback.
pub fn solve_riccati_from(
    a: &DMatrix<f64>,
    d: &DMatrix<f64>,
    bias: &BiasMatrices,
    seed: Option<&DMatrix<f64>>,
) -> Result<BiasedCovariance> {
    solve_with(&Operators::new(a, d, bias), a, d, bias, seed)
}

fn solve_with(
    ops: &Operators,
    a: &DMatrix<f64>,
    d: &DMatrix<f64>,
    bias: &BiasMatrices,
    seed: Option<&DMatrix<f64>>,
) -> Result<BiasedCovariance> {
    let s = bias.s;
    if max_abs(&bias.f_plus) == 0.0 && max_abs(&bias.f_minus) == 0.0 {
        let sigma = solve_lyapunov(a, d)?;
        let n = sigma.nrows();
        return ops.accept(sigma - DMatrix::identity(n, n), s, RiccatiMethod::Lyapunov);
    }

    let primary = ops
        .invariant_subspace()
        .and_then(|x| ops.newton(x))
        .and_then(|x| ops.accept(x, s, RiccatiMethod::InvariantSubspace));
    let primary_err = match primary {
        Ok(sol) => {
            if let Some(seed) = seed {
                // Cross-check against the continuation route when it converges.
                if let Ok(alt) = newton_with(ops, bias, seed) {
                    let gap = max_abs(&(&alt.excess - &sol.excess));
                    if gap > AGREEMENT_TOL * max_abs(&sol.sigma).max(1.0) {
                        return Err(Error::Numerical(format!(
                            "invariant-subspace and Newton solutions disagree by {gap:.3e} at s = {s}"
                        )));
                    }
                }
            }
            return Ok(sol);
        }
        Err(e @ Error::DomainBoundary { .. }) => e,
        Err(e) => Error::DomainBoundary { s, reason: e.to_string() },
    };
    // The vacuum is a natural second seed: it is exact for a bath at zero
    // temperature, where the sign iteration suffers most from the size of F⁺.
    let n = a.nrows();
    let vacuum = DMatrix::identity(n, n);
    seed.into_iter()
        .chain(std::iter::once(&vacuum))
        .find_map(|seed| newton_with(ops, bias, seed).ok())
        .ok_or(primary_err)
}

/// Newton iteration alone, started from `seed`.
pub fn riccati_newton(
    a: &DMatrix<f64>,
    d: &DMatrix<f64>,
    bias: &BiasMatrices,
    seed: &DMatrix<f64>,
) -> Result<BiasedCovariance> {
    newton_with(&Operators::new(a, d, bias), bias, seed)
}

fn newton_with(ops: &Operators, bias: &BiasMatrices, seed: &DMatrix<f64>) -> Result<BiasedCovariance> {
    let n = seed.nrows();
    let x = seed - DMatrix::identity(n, n);
    let margin = linalg::spectral_abscissa(&ops.closed_loop(&x))?;
    if margin >= 0.0 {
        return Err(Error::DomainBoundary {
            s: bias.s,
            reason: "continuation seed is not stabilizing".into(),
        });
    }
    let x = ops.newton(x)?;
    ops.accept(x, bias.s, RiccatiMethod::Newton)
}

/// Solve for the system's drift and noise.
pub fn solve_biased(system: &PhaseSpaceSystem, bias: &BiasMatrices, seed: Option<&DMatrix<f64>>) -> Result<BiasedCovariance> {
    let ops = Operators::for_system(system, bias);
    solve_with(&ops, &system.drift, &system.noise, bias, seed)
}

/// Closed-loop matrix `A − F⁻ + ΣF⁺` driving the first moment.
pub fn closed_loop_matrix(system: &PhaseSpaceSystem, bias: &BiasMatrices, sigma: &DMatrix<f64>) -> DMatrix<f64> {
    let n = sigma.nrows();
    &system.drift + bias.difference() + (sigma - DMatrix::identity(n, n)) * &bias.f_plus
}

/// Symplectic eigenvalues of a covariance in `(x₁, y₁, …)` ordering; all
/// are at least 1 for a physical state.
pub fn symplectic_eigenvalues(sigma: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = sigma.nrows() / 2;
    let mut omega = DMatrix::zeros(2 * n, 2 * n);
    for k in 0..n {
        omega[(2 * k, 2 * k + 1)] = 1.0;
        omega[(2 * k + 1, 2 * k)] = -1.0;
    }
    let mut nu: Vec<f64> = linalg::eigenvalues(&(omega * sigma))?
        .iter()
        .filter(|z| z.im > 0.0)
        .map(|z| z.im)
        .collect();
    nu.sort_by(f64::total_cmp);
    Ok(nu)
}

/// Sampled solution of the covariance flow.
#[derive(Debug, Clone)]
pub struct CovariancePath {
    pub times: Vec<f64>,
    pub sigma: Vec<DMatrix<f64>>,
}

impl CovariancePath {
    pub fn last(&self) -> &DMatrix<f64> {
        self.sigma.last().expect("path holds the initial state")
    }
}

const MAX_RECORDS: usize = 1000;
const DIVERGENCE_NORM: f64 = 1e12;

/// Fixed-step RK4 for the covariance flow, re-symmetrizing after every step.
pub fn integrate_covariance(
    system: &PhaseSpaceSystem,
    bias: &BiasMatrices,
    sigma0: &DMatrix<f64>,
    t_max: f64,
    dt: f64,
) -> Result<CovariancePath> {
    if !(dt > 0.0) || !(t_max >= 0.0) {
        return Err(Error::Config(format!("need dt > 0 and t_max ≥ 0, got dt = {dt}, t_max = {t_max}")));
    }
    let ops = Operators::for_system(system, bias);
    let steps = (t_max / dt).ceil() as usize;
    let h = if steps == 0 { 0.0 } else { t_max / steps as f64 };
    let stride = steps.div_ceil(MAX_RECORDS).max(1);
    // integrated in the excess variable, like the stationary equation
    let identity = DMatrix::identity(sigma0.nrows(), sigma0.ncols());
    let mut x = sigma0 - &identity;
    let mut path = CovariancePath {
        times: vec![0.0],
        sigma: vec![sigma0.clone()],
    };
    for step in 1..=steps {
        let k1 = ops.residual(&x);
        let k2 = ops.residual(&(&x + &k1 * (h / 2.0)));
        let k3 = ops.residual(&(&x + &k2 * (h / 2.0)));
        let k4 = ops.residual(&(&x + &k3 * h));
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        linalg::symmetrize(&mut x);
        let t = step as f64 * h;
        let size = max_abs(&x);
        if !size.is_finite() || size > DIVERGENCE_NORM {
            return Err(Error::Divergence { t });
        }
        if step % stride == 0 || step == steps {
            path.times.push(t);
            path.sigma.push(&x + &identity);
        }
    }
    Ok(path)
}

/// First moment under the stationary closed-loop matrix.
#[derive(Debug, Clone)]
pub struct FirstMomentPath {
    pub times: Vec<f64>,
    pub x: Vec<DVector<f64>>,
    /// Running mean of `½ xᵀF⁺x` up to each recorded time.
    pub time_average_quadratic: Vec<f64>,
    /// Fixed point `−K⁻¹d` for a constant drive.
    pub fixed_point: Option<DVector<f64>>,
    /// Long-time average of `½ xᵀF⁺x`.
    pub average: f64,
}

/// Integrate `ẋ = (A − F⁻ + ΣF⁺)x + d(t)`.
///
/// Constant drives are handled through their fixed point; sinusoidal ones
/// are integrated over whole drive periods, with `horizon` doubled until
/// successive one-period means of `½ xᵀF⁺x` agree to 1e-8 relative.
pub fn integrate_first_moment(
    system: &PhaseSpaceSystem,
    bias: &BiasMatrices,
    sigma: &DMatrix<f64>,
    x0: &DVector<f64>,
    horizon: f64,
) -> Result<FirstMomentPath> {
    let k = closed_loop_matrix(system, bias, sigma);
    let quad = |x: &DVector<f64>| 0.5 * x.dot(&(&bias.f_plus * x));
    let drives: Vec<_> = system.drives().iter().flatten().filter(|d| d.amplitude != 0.0).collect();

    if drives.is_empty() && max_abs(&DMatrix::from_column_slice(x0.len(), 1, x0.as_slice())) == 0.0 {
        return Ok(FirstMomentPath {
            times: vec![0.0],
            x: vec![x0.clone()],
            time_average_quadratic: vec![0.0],
            fixed_point: Some(DVector::zeros(x0.len())),
            average: 0.0,
        });
    }

    let periodic: Vec<f64> = drives
        .iter()
        .filter(|d| d.frequency != 0.0 && d.kind == crate::model::DriveKind::Sinusoidal)
        .map(|d| 2.0 * std::f64::consts::PI / d.frequency.abs())
        .collect();

    if periodic.is_empty() {
        // Constant drive: the transient decays, leaving the fixed point.
        let d = system.drive(0.0);
        let x_fix = k
            .clone()
            .lu()
            .solve(&(-&d))
            .ok_or_else(|| Error::Numerical("closed-loop matrix is singular".into()))?;
        let average = quad(&x_fix);
        let path = integrate_fixed(&k, system, x0, horizon.max(0.0), 0.0, &quad)?;
        return Ok(FirstMomentPath {
            fixed_point: Some(x_fix),
            average,
            ..path
        });
    }

    let period = periodic.iter().copied().fold(0.0, f64::max);
    let scale = max_abs(&k).max(1e-12);
    let per_period = ((period * scale / 0.05).ceil() as usize).max(200);
    let h = period / per_period as f64;
    let mut windows_total = ((horizon / period).ceil() as usize).max(2);
    let mut state = x0.clone();
    let mut t = 0.0;
    let mut means: Vec<f64> = Vec::new();
    let mut path = FirstMomentPath {
        times: vec![0.0],
        x: vec![x0.clone()],
        time_average_quadratic: vec![0.0],
        fixed_point: None,
        average: 0.0,
    };
    let mut running = 0.0;
    for _doubling in 0..12 {
        while means.len() < windows_total {
            // trapezoid over one period
            let mut acc = 0.5 * quad(&state);
            for j in 0..per_period {
                state = rk4_step(&k, system, &state, t, h);
                t += h;
                let w = if j + 1 == per_period { 0.5 } else { 1.0 };
                acc += w * quad(&state);
                if !state.iter().all(|v| v.is_finite()) || state.amax() > DIVERGENCE_NORM {
                    return Err(Error::Divergence { t });
                }
            }
            let mean = acc / per_period as f64;
            running += mean;
            means.push(mean);
            path.times.push(t);
            path.x.push(state.clone());
            path.time_average_quadratic.push(running / means.len() as f64);
            if means.len() >= 2 {
                let (prev, last) = (means[means.len() - 2], means[means.len() - 1]);
                if (last - prev).abs() <= 1e-8 * last.abs().max(f64::MIN_POSITIVE) || (last == 0.0 && prev == 0.0) {
                    path.average = last;
                    return Ok(path);
                }
            }
        }
        windows_total *= 2;
    }
    Err(Error::NoConvergence {
        what: "first-moment window average",
        iterations: means.len(),
        estimate: means.last().copied().unwrap_or(0.0),
        residual: match means.as_slice() {
            [.., a, b] => (b - a).abs(),
            _ => f64::NAN,
        },
    })
}

fn rk4_step(k: &DMatrix<f64>, system: &PhaseSpaceSystem, x: &DVector<f64>, t: f64, h: f64) -> DVector<f64> {
    let f = |t: f64, x: &DVector<f64>| k * x + system.drive(t);
    let k1 = f(t, x);
    let k2 = f(t + h / 2.0, &(x + &k1 * (h / 2.0)));
    let k3 = f(t + h / 2.0, &(x + &k2 * (h / 2.0)));
    let k4 = f(t + h, &(x + &k3 * h));
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

fn integrate_fixed(
    k: &DMatrix<f64>,
    system: &PhaseSpaceSystem,
    x0: &DVector<f64>,
    horizon: f64,
    t0: f64,
    quad: &dyn Fn(&DVector<f64>) -> f64,
) -> Result<FirstMomentPath> {
    let scale = max_abs(k).max(1e-12);
    let steps = ((horizon * scale / 0.05).ceil() as usize).clamp(1, 200_000);
    let h = horizon / steps as f64;
    let stride = steps.div_ceil(MAX_RECORDS).max(1);
    let mut x = x0.clone();
    let mut integral = 0.0;
    let mut prev_q = quad(&x);
    let mut path = FirstMomentPath {
        times: vec![t0],
        x: vec![x.clone()],
        time_average_quadratic: vec![prev_q],
        fixed_point: None,
        average: 0.0,
    };
    for step in 1..=steps {
        let t = t0 + (step - 1) as f64 * h;
        x = rk4_step(k, system, &x, t, h);
        if !x.iter().all(|v| v.is_finite()) || x.amax() > DIVERGENCE_NORM {
            return Err(Error::Divergence { t: t + h });
        }
        let q = quad(&x);
        integral += 0.5 * h * (prev_q + q);
        prev_q = q;
        if step % stride == 0 || step == steps {
            let elapsed = step as f64 * h;
            path.times.push(t0 + elapsed);
            path.x.push(x.clone());
            path.time_average_quadratic.push(integral / elapsed);
        }
    }
    Ok(path)
}
