//! The large-deviation function `θ(s)`: pointwise evaluation, its domain
//! of existence, sampled curves and scaled cumulants.

use std::collections::HashMap;
use std::io::Write;
use std::sync::Mutex;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::exec::{self, ExecMode};
use crate::linalg;
use crate::model::{resolve_counting, BathSpec, CountingSpec, NetworkSpec};
use crate::phasespace::{self, assemble, assemble_bias, BiasMatrices, PhaseSpaceSystem};
use crate::solver::{self, BiasedCovariance};

/// Search parameters for the branch points of `θ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainOptions {
    /// March no further than this from `s = 0`.
    pub limit: f64,
    /// Largest step of the outward march.
    pub max_step: f64,
    /// Bisection width at which a branch point counts as resolved.
    pub tolerance: f64,
    /// Stop marching, and leave the end open, once the rounding error of
    /// `θ` exceeds `resolution·(1 + |θ|)`.
    pub resolution: f64,
}

impl Default for DomainOptions {
    fn default() -> Self {
        DomainOptions {
            limit: 40.0,
            max_step: 0.05,
            tolerance: 1e-9,
            resolution: 1e-10,
        }
    }
}

/// Interval of `s` on which the stabilizing branch exists.
///
/// An end flagged `open` was not reached: the march hit the search limit or
/// the point where `θ` stops being resolvable in double precision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Domain {
    pub lo: f64,
    pub hi: f64,
    pub lo_open: bool,
    pub hi_open: bool,
}

impl Domain {
    pub fn contains(&self, s: f64) -> bool {
        s >= self.lo && s <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// `θ(s)` for one network and one reference bath, with a cache of solved
/// points and of the domain.
pub struct ThetaEvaluator {
    network: NetworkSpec,
    counting: CountingSpec,
    bath: BathSpec,
    system: PhaseSpaceSystem,
    options: DomainOptions,
    cache: Mutex<HashMap<u64, f64>>,
    domain: Mutex<Option<Domain>>,
    /// Covariances accepted while marching, sorted by `s`; fallback seeds
    /// where the invariant-subspace method alone fails.
    anchors: Mutex<Vec<(f64, DMatrix<f64>)>>,
}

impl ThetaEvaluator {
    /// Fails on invalid networks and on drifts without a stationary state.
    pub fn new(network: &NetworkSpec, counting: &CountingSpec) -> Result<Self> {
        Self::with_options(network, counting, DomainOptions::default())
    }

    pub fn with_options(network: &NetworkSpec, counting: &CountingSpec, options: DomainOptions) -> Result<Self> {
        let idx = resolve_counting(network, counting)?;
        let system = assemble(network)?;
        let margin = system.stability_margin()?;
        if margin >= 0.0 {
            return Err(Error::Unstable { margin });
        }
        Ok(ThetaEvaluator {
            network: network.clone(),
            counting: counting.clone(),
            bath: network.baths[idx].clone(),
            system,
            options,
            cache: Mutex::new(HashMap::new()),
            domain: Mutex::new(None),
            anchors: Mutex::new(Vec::new()),
        })
    }

    pub fn network(&self) -> &NetworkSpec {
        &self.network
    }

    pub fn counting(&self) -> &CountingSpec {
        &self.counting
    }

    pub fn reference_bath(&self) -> &BathSpec {
        &self.bath
    }

    pub fn system(&self) -> &PhaseSpaceSystem {
        &self.system
    }

    pub fn bias(&self, s: f64) -> BiasMatrices {
        assemble_bias(&self.network, &self.counting, s).expect("counting bath resolved at construction")
    }

    /// Stabilizing covariance at `s`, without any domain check.
    pub fn solve(&self, s: f64, seed: Option<&DMatrix<f64>>) -> Result<BiasedCovariance> {
        solver::solve_biased(&self.system, &self.bias(s), seed)
    }

    /// Solve at a point known to lie in the domain, falling back on the
    /// nearest marching anchor as a continuation seed.
    fn solve_inside(&self, s: f64) -> Result<BiasedCovariance> {
        let bias = self.bias(s);
        solver::solve_biased(&self.system, &bias, None).or_else(|err| {
            let anchors = self.anchors.lock().unwrap();
            let nearest = anchors
                .iter()
                .min_by(|a, b| (a.0 - s).abs().total_cmp(&(b.0 - s).abs()))
                .map(|(_, sigma)| sigma.clone());
            drop(anchors);
            match nearest {
                Some(seed) => solver::solve_biased(&self.system, &bias, Some(&seed)),
                None => Err(err),
            }
        })
    }

    /// `½ Tr(F⁺Σ − F⁻)` for an already solved covariance, written as
    /// `f₊ − f₋ + ½ Tr(F⁺X)` with `X = Σ − I` to avoid cancellation.
    pub fn theta_of(&self, cov: &BiasedCovariance) -> f64 {
        let (fp, _) = phasespace::bias_functions(&self.bath, cov.s);
        let (_, absorb) = phasespace::bias_parts(&self.bath, cov.s);
        let k = 2 * self.bath.oscillator;
        2.0 * absorb + 0.5 * fp * (cov.excess[(k, k)] + cov.excess[(k + 1, k + 1)])
    }

    /// Unbiased stationary covariance.
    pub fn stationary_covariance(&self) -> Result<DMatrix<f64>> {
        solver::solve_lyapunov(&self.system.drift, &self.system.noise)
    }

    /// Stationary `θ(s)`; errors outside the domain.
    pub fn theta(&self, s: f64) -> Result<f64> {
        if let Some(v) = self.cache.lock().unwrap().get(&s.to_bits()) {
            return Ok(*v);
        }
        let domain = self.domain()?;
        if !domain.contains(s) {
            return Err(Error::DomainBoundary {
                s,
                reason: format!("outside [{:.9e}, {:.9e}]", domain.lo, domain.hi),
            });
        }
        let (value, _, _) = self.theta_point(s, None)?;
        self.cache.lock().unwrap().insert(s.to_bits(), value);
        Ok(value)
    }

    /// `θ'(s)` from the derivative of the Riccati equation,
    /// `KΣ' + Σ'Kᵀ = −(M'Σ + ΣM'ᵀ + ΣR'Σ + Q')` with `K = M + ΣR`.
    pub fn theta_derivative(&self, s: f64) -> Result<f64> {
        let domain = self.domain()?;
        if !domain.contains(s) {
            return Err(Error::DomainBoundary {
                s,
                reason: "derivative requested outside the domain".into(),
            });
        }
        let bias = self.bias(s);
        let cov = self.solve_inside(s)?;
        let (dp, dm) = phasespace::bias_function_derivatives(&self.bath, s);
        let dim = self.system.dim();
        let k0 = 2 * self.bath.oscillator;
        let mut dfp = DMatrix::zeros(dim, dim);
        let mut dfm = DMatrix::zeros(dim, dim);
        for r in k0..k0 + 2 {
            dfp[(r, r)] = dp;
            dfm[(r, r)] = dm;
        }
        // Σ = I + X; the terms of order F± cancel analytically.
        let x = &cov.excess;
        let k = solver::closed_loop_matrix(&self.system, &bias, &cov.sigma);
        let ddiff = &dfp - &dfm;
        let dx = &ddiff * x;
        let rhs = -(&ddiff * 2.0 + &dx + dx.transpose() + x * &dfp * x);
        let dsigma = linalg::solve_lyapunov(&k, &rhs)?;
        let (fp, _) = phasespace::bias_functions(&self.bath, s);
        let tr = |m: &DMatrix<f64>| m[(k0, k0)] + m[(k0 + 1, k0 + 1)];
        Ok(2.0 * self.bath.gamma_up * s.exp() + 0.5 * (dp * tr(x) + fp * tr(&dsigma)))
    }

    /// Driven `θ(s)`: the stationary part plus the long-time average of
    /// `½ xᵀF⁺x`. A `horizon` of `None` uses 50 drive periods, or
    /// `20/|margin|` for constant drives.
    pub fn theta_driven(&self, s: f64, horizon: Option<f64>) -> Result<f64> {
        let domain = self.domain()?;
        if !domain.contains(s) {
            return Err(Error::DomainBoundary {
                s,
                reason: "outside the domain".into(),
            });
        }
        let bias = self.bias(s);
        let cov = self.solve_inside(s)?;
        let stationary = self.theta_of(&cov);
        if !self.system.is_driven() {
            return Ok(stationary);
        }
        let horizon = horizon.unwrap_or_else(|| {
            let period = self
                .system
                .drives()
                .iter()
                .flatten()
                .filter(|d| d.frequency != 0.0 && d.kind == crate::model::DriveKind::Sinusoidal)
                .map(|d| std::f64::consts::TAU / d.frequency.abs())
                .fold(0.0, f64::max);
            if period > 0.0 {
                50.0 * period
            } else {
                20.0 / cov.closed_loop_margin.abs()
            }
        });
        let x0 = DVector::zeros(self.system.dim());
        match solver::integrate_first_moment(&self.system, &bias, &cov.sigma, &x0, horizon) {
            Ok(path) => Ok(stationary + path.average),
            Err(Error::NoConvergence {
                what,
                iterations,
                estimate,
                residual,
            }) => Err(Error::NoConvergence {
                what,
                iterations,
                estimate: stationary + estimate,
                residual,
            }),
            Err(e) => Err(e),
        }
    }

    /// Branch points around `s = 0`, found by marching outward and bisecting
    /// the first solvable/unsolvable transition.
    ///
    /// Marching matters: stabilizing solutions can reappear far outside the
    /// true domain, so a bracket-only search may land on a disconnected
    /// branch.
    pub fn domain(&self) -> Result<Domain> {
        if let Some(d) = *self.domain.lock().unwrap() {
            return Ok(d);
        }
        let origin = self.solve(0.0, None)?;
        let (hi, hi_open) = self.march(&origin, 1.0)?;
        let (lo, lo_open) = self.march(&origin, -1.0)?;
        let d = Domain { lo, hi, lo_open, hi_open };
        self.anchors.lock().unwrap().sort_by(|a, b| a.0.total_cmp(&b.0));
        *self.domain.lock().unwrap() = Some(d);
        Ok(d)
    }

    fn march(&self, origin: &BiasedCovariance, dir: f64) -> Result<(f64, bool)> {
        let opts = self.options;
        let mut good = 0.0;
        let mut seed = origin.sigma.clone();
        let mut h = 1e-3_f64.min(opts.max_step);
        let mut bad = loop {
            let mut next = good + dir * h;
            if next.abs() >= opts.limit {
                next = dir * opts.limit;
            }
            let found = self.probe(next, &seed).map(|sol| (next, sol)).or_else(|| {
                // The covariance has poles where f₊ vanishes while θ stays
                // analytic; step past isolated failures.
                [1e-9, 1e-7, 1e-5].iter().find_map(|&off| {
                    let s = next + dir * off * next.abs().max(1.0);
                    self.probe(s, &seed).map(|sol| (s, sol))
                })
            });
            match found {
                Some((_, sol)) if sol.theta_error > opts.resolution * (1.0 + self.theta_of(&sol).abs()) => {
                    return Ok((good, true));
                }
                Some((s, sol)) => {
                    good = s;
                    self.anchors.lock().unwrap().push((good, sol.sigma.clone()));
                    seed = sol.sigma;
                    if good.abs() >= opts.limit {
                        return Ok((good, true));
                    }
                    h = (h * 1.3).min(opts.max_step);
                }
                None => break next,
            }
        };
        let marched = good;
        while (bad - good).abs() > opts.tolerance {
            let mid = 0.5 * (good + bad);
            match self.probe(mid, &seed) {
                Some(sol) => {
                    good = mid;
                    seed = sol.sigma;
                }
                None => bad = mid,
            }
        }
        if good != marched {
            self.anchors.lock().unwrap().push((good, seed));
        }
        Ok((good, false))
    }

    fn probe(&self, s: f64, seed: &DMatrix<f64>) -> Option<BiasedCovariance> {
        self.solve(s, Some(seed)).ok()
    }

    /// `θ(s)` and the closed-loop margin at a point inside the domain.
    ///
    /// Where the covariance itself is singular (a pole of `Σ` at `f₊ = 0`)
    /// both are taken as the mean of the two neighbours at relative
    /// distance 1e-6; `θ` is analytic there, so the error is second order.
    pub fn theta_point(&self, s: f64, seed: Option<&DMatrix<f64>>) -> Result<(f64, f64, Option<DMatrix<f64>>)> {
        let first = match seed {
            Some(seed) => self.solve(s, Some(seed)).or_else(|_| self.solve_inside(s)),
            None => self.solve_inside(s),
        };
        match first {
            Ok(cov) => Ok((self.theta_of(&cov), cov.closed_loop_margin, Some(cov.sigma))),
            Err(err) => {
                let domain = self.domain()?;
                let d = 1e-6 * s.abs().max(1.0);
                if s - d < domain.lo || s + d > domain.hi {
                    return Err(err);
                }
                let below = self.solve_inside(s - d).map_err(|_| err)?;
                let above = self.solve_inside(s + d)?;
                Ok((
                    0.5 * (self.theta_of(&below) + self.theta_of(&above)),
                    0.5 * (below.closed_loop_margin + above.closed_loop_margin),
                    None,
                ))
            }
        }
    }

    /// `κ₁` from the unbiased covariance:
    /// `½(Γ_r − Γ̄_r)(σ^{xx}_{rr} + σ^{yy}_{rr}) − (Γ_r + Γ̄_r)`.
    pub fn first_cumulant_identity(&self) -> Result<f64> {
        let sigma = self.stationary_covariance()?;
        let k = 2 * self.bath.oscillator;
        let (g, gb) = (self.bath.gamma_down, self.bath.gamma_up);
        Ok(0.5 * (g - gb) * (sigma[(k, k)] + sigma[(k + 1, k + 1)]) - (g + gb))
    }
}

/// Stationary `θ(s)` of an undriven network.
pub fn theta_stationary(network: &NetworkSpec, counting: &CountingSpec, s: f64) -> Result<f64> {
    if network.is_driven() {
        return Err(Error::Config("network is driven; use theta_driven".into()));
    }
    let eval = ThetaEvaluator::new(network, counting)?;
    eval.theta(s)
}

pub fn theta_driven(network: &NetworkSpec, counting: &CountingSpec, s: f64, horizon: Option<f64>) -> Result<f64> {
    ThetaEvaluator::new(network, counting)?.theta_driven(s, horizon)
}

/// `θ` sampled on a grid.
#[derive(Debug, Clone)]
pub struct ThetaCurve {
    pub s_grid: Vec<f64>,
    /// `NaN` where the point is unsolvable.
    pub theta: Vec<f64>,
    pub solvable: Vec<bool>,
    pub closed_loop_margin: Vec<f64>,
    pub domain: Domain,
    pub reference_bath: String,
}

impl ThetaCurve {
    pub fn resolved(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.s_grid
            .iter()
            .zip(&self.theta)
            .zip(&self.solvable)
            .filter(|(_, ok)| **ok)
            .map(|((s, t), _)| (*s, *t))
    }

    /// Smallest second divided difference over consecutive resolved points.
    pub fn min_second_difference(&self) -> Option<f64> {
        let pts: Vec<_> = self.resolved().collect();
        pts.windows(3)
            .map(|w| {
                let [(s0, t0), (s1, t1), (s2, t2)] = [w[0], w[1], w[2]];
                2.0 * ((t2 - t1) / (s2 - s1) - (t1 - t0) / (s1 - s0)) / (s2 - s0)
            })
            .reduce(f64::min)
    }

    /// Resolved point with the smallest `θ`.
    pub fn argmin(&self) -> Option<(usize, f64)> {
        (0..self.s_grid.len())
            .filter(|&i| self.solvable[i])
            .map(|i| (i, self.theta[i]))
            .reduce(|a, b| if b.1 < a.1 { b } else { a })
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "s,theta,solvable,closed_loop_margin")?;
        for i in 0..self.s_grid.len() {
            writeln!(
                w,
                "{},{},{},{}",
                fmt_f64(self.s_grid[i]),
                fmt_f64(self.theta[i]),
                self.solvable[i],
                fmt_f64(self.closed_loop_margin[i])
            )?;
        }
        Ok(())
    }
}

/// Seventeen significant digits, the CSV float format.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:.16e}")
    }
}

/// Evenly spaced grid with exact end points; a single point sits at `lo`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|i| if i + 1 == n { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 })
            .collect(),
    }
}

/// Default grid of 201 points over `[−1.5, 1.5]·s_c`, clipped to `domain`.
pub fn default_grid(s_c: f64, domain: &Domain) -> Vec<f64> {
    let lo = (-1.5 * s_c.abs()).max(domain.lo);
    let hi = (1.5 * s_c.abs()).min(domain.hi);
    linspace(lo, hi, 201)
}

pub fn theta_curve(network: &NetworkSpec, counting: &CountingSpec, s_lo: f64, s_hi: f64, n_points: usize) -> Result<ThetaCurve> {
    let eval = ThetaEvaluator::new(network, counting)?;
    theta_curve_on(&eval, &linspace(s_lo, s_hi, n_points), ExecMode::best())
}

/// Evaluate `grid` in parallel chunks, seeding each solve with its
/// predecessor in the chunk.
pub fn theta_curve_on(eval: &ThetaEvaluator, grid: &[f64], mode: ExecMode) -> Result<ThetaCurve> {
    let domain = eval.domain()?;
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|&a, &b| grid[a].total_cmp(&grid[b]));
    let sorted: Vec<f64> = order.iter().map(|&i| grid[i]).collect();
    // fixed chunking keeps the continuation seeds, and so the output bytes,
    // independent of the thread count
    let chunk = 16;

    let points = exec::map_chunks(mode, &sorted, chunk, |part| {
        let mut seed: Option<DMatrix<f64>> = None;
        part.iter()
            .map(|&s| {
                if !domain.contains(s) {
                    return (f64::NAN, false, f64::NAN);
                }
                match eval.theta_point(s, seed.as_ref()) {
                    Ok((theta, margin, sigma)) => {
                        if sigma.is_some() {
                            seed = sigma;
                        }
                        (theta, true, margin)
                    }
                    Err(_) => (f64::NAN, false, f64::NAN),
                }
            })
            .collect()
    });

    let n = grid.len();
    let mut curve = ThetaCurve {
        s_grid: grid.to_vec(),
        theta: vec![f64::NAN; n],
        solvable: vec![false; n],
        closed_loop_margin: vec![f64::NAN; n],
        domain,
        reference_bath: eval.counting.bath.clone(),
    };
    for (k, &i) in order.iter().enumerate() {
        let (t, ok, m) = points[k];
        curve.theta[i] = t;
        curve.solvable[i] = ok;
        curve.closed_loop_margin[i] = m;
    }
    if n > 0 && !curve.solvable.iter().any(|&b| b) {
        return Err(Error::DomainEmpty);
    }
    Ok(curve)
}

/// Scaled cumulants `κ_n = (−1)ⁿ ∂ⁿθ(0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CumulantSet {
    pub kappa: Vec<f64>,
}

const RICHARDSON_LEVELS: usize = 3;

pub fn cumulants(network: &NetworkSpec, counting: &CountingSpec, n_max: usize, h: f64) -> Result<CumulantSet> {
    cumulants_with(&ThetaEvaluator::new(network, counting)?, n_max, h)
}

/// Central finite differences at 0 with Richardson extrapolation over step
/// halvings. Derivative order `n` starts from step `h·4ⁿ⁻¹`, shrunk when
/// the stencil would leave the domain.
pub fn cumulants_with(eval: &ThetaEvaluator, n_max: usize, h: f64) -> Result<CumulantSet> {
    if !(h > 0.0) {
        return Err(Error::Config(format!("step must be positive, got {h}")));
    }
    let domain = eval.domain()?;
    let room = 0.9 * domain.lo.abs().min(domain.hi);
    let mut kappa = Vec::with_capacity(n_max);
    for n in 1..=n_max {
        let m = n.div_ceil(2) + 1;
        let mut step = h * 4f64.powi(n as i32 - 1);
        let needed = m as f64 * step;
        if needed > room {
            step = room / m as f64;
            // Roundoff grows like ε/stepⁿ; refuse steps that small.
            if step < 1e-2 * h {
                return Err(Error::DomainTooNarrow {
                    needed,
                    lo: domain.lo,
                    hi: domain.hi,
                });
            }
        }
        let accuracy = 2 * ((2 * m + 2 - n) / 2);
        let mut table: Vec<f64> = Vec::with_capacity(RICHARDSON_LEVELS);
        for level in 0..RICHARDSON_LEVELS {
            let hl = step / 2f64.powi(level as i32);
            let nodes: Vec<f64> = (-(m as i64)..=m as i64).map(|j| j as f64 * hl).collect();
            let w = fornberg_weights(0.0, &nodes, n);
            let mut d = 0.0;
            for (x, wi) in nodes.iter().zip(&w) {
                if *wi != 0.0 {
                    d += wi * eval.theta(*x)?;
                }
            }
            table.push(d);
        }
        // Error terms h^p, h^{p+2}, … eliminated one per column.
        let mut p = accuracy as i32;
        while table.len() > 1 {
            let f = 2f64.powi(p);
            table = table.windows(2).map(|w| (f * w[1] - w[0]) / (f - 1.0)).collect();
            p += 2;
        }
        let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
        kappa.push(sign * table[0]);
    }
    Ok(CumulantSet { kappa })
}

/// Finite-difference weights for the `order`-th derivative at `x0` on
/// arbitrary `nodes` (Fornberg's recursion).
pub fn fornberg_weights(x0: f64, nodes: &[f64], order: usize) -> Vec<f64> {
    let n = nodes.len();
    let mut c = vec![vec![0.0; order + 1]; n];
    c[0][0] = 1.0;
    let mut c1 = 1.0;
    let mut c4 = nodes[0] - x0;
    for i in 1..n {
        let mn = i.min(order);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = nodes[i] - x0;
        for j in 0..i {
            let c3 = nodes[i] - nodes[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.iter().map(|row| row[order]).collect()
}
