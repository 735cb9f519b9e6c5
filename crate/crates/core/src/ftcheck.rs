//! Local fluctuation theorems: the minimum of `θ`, the symmetry criterion
//! `Sym = |θ(2s_min)/θ(s_min)|` and closed-form symmetry points for the
//! network shapes where one is known.

use std::io::Write;

use crate::error::{Error, Result};
use crate::exec::{self, ExecMode};
use crate::ldf::{fmt_f64, linspace, Domain, ThetaEvaluator};
use crate::model::{CountingSpec, CouplingKind, NetworkSpec};

pub const DEFAULT_THRESHOLD: f64 = 1e-2;

const COARSE_POINTS: usize = 81;
const GOLDEN_TOL: f64 = 1e-8;
/// Below this (relative) everywhere on the coarse grid, `θ` counts as
/// identically zero.
const FLAT_TOL: f64 = 1e-10;

/// Where the minimum of `θ` sits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Minimum {
    pub s_min: f64,
    pub theta_min: f64,
    /// The coarse minimum sat on a domain end: no interior minimum.
    pub at_boundary: bool,
    /// `θ` is numerically zero on the whole coarse grid.
    pub flat: bool,
}

/// Coarse grid over the domain, golden-section refinement to 1e-8, then a
/// root polish of `θ'` inside the golden bracket.
pub fn find_smin(eval: &ThetaEvaluator) -> Result<Minimum> {
    let domain = eval.domain()?;
    find_smin_in(eval, &domain)
}

pub fn find_smin_in(eval: &ThetaEvaluator, domain: &Domain) -> Result<Minimum> {
    // Near a branch point the covariance diverges and the residual test may
    // reject points the march accepted with a closer seed; such points are
    // dropped from the coarse grid.
    let pad = 1e-4 * domain.width();
    let (grid, values): (Vec<f64>, Vec<f64>) = linspace(domain.lo + pad, domain.hi - pad, COARSE_POINTS)
        .into_iter()
        .filter_map(|s| eval.theta(s).ok().map(|t| (s, t)))
        .unzip();
    let (i, &theta_min) = values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .ok_or(Error::DomainEmpty)?;
    // Relative to the size of the bias terms, which grow exponentially in s.
    let flat = grid.iter().zip(&values).all(|(&s, v)| {
        let (fp, fm) = crate::phasespace::bias_functions(eval.reference_bath(), s);
        v.abs() < FLAT_TOL * (1.0 + fp.abs() + fm.abs())
    });
    if flat {
        return Ok(Minimum {
            s_min: 0.0,
            theta_min: 0.0,
            at_boundary: false,
            flat: true,
        });
    }
    if i == 0 || i + 1 == grid.len() {
        return Ok(Minimum {
            s_min: grid[i],
            theta_min,
            at_boundary: true,
            flat: false,
        });
    }

    let (mut a, mut b) = (grid[i - 1], grid[i + 1]);
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (eval.theta(c)?, eval.theta(d)?);
    while b - a > GOLDEN_TOL {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = eval.theta(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = eval.theta(d)?;
        }
    }
    let golden = 0.5 * (a + b);
    let s_min = polish_minimum(eval, grid[i - 1], grid[i + 1], golden).unwrap_or(golden);
    Ok(Minimum {
        s_min,
        theta_min: eval.theta(s_min)?,
        at_boundary: false,
        flat: false,
    })
}

/// Root of `θ'` bracketed by `[lo, hi]` (regula falsi, Illinois variant).
/// Returns `None` when the bracket does not change sign.
fn polish_minimum(eval: &ThetaEvaluator, lo: f64, hi: f64, guess: f64) -> Option<f64> {
    let (mut a, mut b) = (lo, hi);
    let (mut fa, mut fb) = (eval.theta_derivative(a).ok()?, eval.theta_derivative(b).ok()?);
    if fa > 0.0 || fb < 0.0 {
        return None;
    }
    // Shrink around the golden-section estimate first.
    let h = 2.0 * GOLDEN_TOL;
    for probe in [guess - h, guess + h] {
        if probe > a && probe < b {
            let fp = eval.theta_derivative(probe).ok()?;
            if fp <= 0.0 {
                a = probe;
                fa = fp;
            } else {
                b = probe;
                fb = fp;
            }
        }
    }
    let mut side = 0i8;
    for _ in 0..100 {
        if fa == 0.0 {
            return Some(a);
        }
        if fb == 0.0 {
            return Some(b);
        }
        let c = (a * fb - b * fa) / (fb - fa);
        if !(c > a && c < b) || b - a < 1e-14 * (1.0 + c.abs()) {
            return Some(0.5 * (a + b));
        }
        let fc = eval.theta_derivative(c).ok()?;
        if fc < 0.0 {
            a = c;
            fa = fc;
            if side == -1 {
                fb *= 0.5;
            }
            side = -1;
        } else {
            b = c;
            fb = fc;
            if side == 1 {
                fa *= 0.5;
            }
            side = 1;
        }
        if fc.abs() < 1e-16 {
            return Some(c);
        }
    }
    Some(0.5 * (a + b))
}

/// `|θ(2s_min)/θ(s_min)|`.
pub fn sym_criterion(eval: &ThetaEvaluator, s_min: f64) -> Result<f64> {
    let domain = eval.domain()?;
    let candidate = 2.0 * s_min;
    if !domain.contains(candidate) {
        return Err(Error::Undefined(format!(
            "2 s_min = {candidate:.6e} lies outside the domain [{:.6e}, {:.6e}]",
            domain.lo, domain.hi
        )));
    }
    let t_min = eval.theta(s_min)?;
    if t_min.abs() < FLAT_TOL {
        return Err(Error::Undefined("θ(s_min) vanishes; the curve is flat".into()));
    }
    Ok((eval.theta(candidate)? / t_min).abs())
}

/// Closed-form symmetry point and the network shape it applies to.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticPrediction {
    pub value: f64,
    pub template: &'static str,
}

/// Closed-form symmetry point for recognized shapes:
///
/// * one oscillator with several baths: `ln[(Γ_r/Γ̄_r)(ΣΓ̄_o/ΣΓ_o)]`, sums
///   over the other baths;
/// * excitation-conserving (`rw`) networks with two baths on different
///   oscillators: `ln[(Γ_r/Γ̄_r)(Γ̄_o/Γ_o)]`;
/// * two-mode-squeezing (`opo`) chains with an even number of oscillators
///   and baths on both ends: `ln(Γ_r/Γ̄_r) + ln(Γ_o/Γ̄_o)`.
///
/// `Ok(None)` for other shapes; `Err(Undefined)` when a recognized shape
/// has a vanishing rate in the formula.
pub fn analytic_sympoint(network: &NetworkSpec, counting: &CountingSpec) -> Result<Option<AnalyticPrediction>> {
    let r = crate::model::resolve_counting(network, counting)?;
    let reference = &network.baths[r];
    let squeezed = network.oscillators.iter().any(|o| o.upsilon.norm() != 0.0)
        || network.baths.iter().any(|b| b.lambda.norm() != 0.0);
    if squeezed || network.is_driven() {
        return Ok(None);
    }
    let others: Vec<_> = network.baths.iter().enumerate().filter(|(i, _)| *i != r).map(|(_, b)| b).collect();
    let log_ratio = |down: f64, up: f64, what: &str| -> Result<f64> {
        if down > 0.0 && up > 0.0 {
            Ok((down / up).ln())
        } else {
            Err(Error::Undefined(format!("{what} has a vanishing rate; the symmetry point is not finite")))
        }
    };

    if network.len() == 1 {
        if others.is_empty() {
            return Err(Error::Undefined("no other bath to exchange with".into()));
        }
        let down: f64 = others.iter().map(|b| b.gamma_down).sum();
        let up: f64 = others.iter().map(|b| b.gamma_up).sum();
        let value = log_ratio(reference.gamma_down, reference.gamma_up, "the reference bath")? - log_ratio(down, up, "the other baths")?;
        return Ok(Some(AnalyticPrediction {
            value,
            template: "single oscillator",
        }));
    }

    if others.len() != 1 || others[0].oscillator == reference.oscillator {
        return Ok(None);
    }
    let other = others[0];
    if !connected(network) {
        return Ok(None);
    }
    if network.couplings.iter().all(|c| c.kind == CouplingKind::Rw) {
        let value = log_ratio(reference.gamma_down, reference.gamma_up, "the reference bath")?
            - log_ratio(other.gamma_down, other.gamma_up, "the other bath")?;
        return Ok(Some(AnalyticPrediction {
            value,
            template: "rw network, two baths",
        }));
    }
    if network.couplings.iter().all(|c| c.kind == CouplingKind::Opo)
        && network.len() % 2 == 0
        && is_path_between(network, reference.oscillator, other.oscillator)
    {
        let value = log_ratio(reference.gamma_down, reference.gamma_up, "the reference bath")?
            + log_ratio(other.gamma_down, other.gamma_up, "the other bath")?;
        return Ok(Some(AnalyticPrediction {
            value,
            template: "opo chain, end baths",
        }));
    }
    Ok(None)
}

fn neighbours(network: &NetworkSpec) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); network.len()];
    for c in &network.couplings {
        if c.g != 0.0 {
            adj[c.i].push(c.j);
            adj[c.j].push(c.i);
        }
    }
    adj
}

fn connected(network: &NetworkSpec) -> bool {
    let adj = neighbours(network);
    let mut seen = vec![false; network.len()];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(v) = stack.pop() {
        for &w in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                stack.push(w);
            }
        }
    }
    seen.iter().all(|&b| b)
}

/// The coupling graph is a simple path with ends `a` and `b`.
fn is_path_between(network: &NetworkSpec, a: usize, b: usize) -> bool {
    let adj = neighbours(network);
    let n = network.len();
    if network.couplings.len() != n - 1 || adj[a].len() != 1 || adj[b].len() != 1 {
        return false;
    }
    adj.iter().enumerate().all(|(v, nb)| v == a || v == b || nb.len() == 2) && connected(network)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    /// `Sym` below threshold.
    Holds,
    /// `Sym` at or above threshold.
    Broken,
    /// `θ ≡ 0`: nothing flows through the reference bath.
    Degenerate,
    /// The minimum of `θ` is not interior to the domain.
    BoundaryMinimum,
    /// `2s_min` falls outside the domain.
    Undefined,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Holds => "holds",
            Verdict::Broken => "broken",
            Verdict::Degenerate => "trivial/degenerate",
            Verdict::BoundaryMinimum => "boundary-minimum",
            Verdict::Undefined => "undefined",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FtReport {
    pub s_min: f64,
    pub theta_min: f64,
    /// `2 s_min`, the candidate affinity.
    pub s_candidate: f64,
    pub sym_value: Option<f64>,
    pub holds: bool,
    pub threshold: f64,
    pub verdict: Verdict,
    pub analytic: Option<AnalyticPrediction>,
    /// `max |θ(s) − θ(2s_min − s)|` over the part of the domain symmetric
    /// about `s_min`.
    pub symmetry_defect: Option<f64>,
    pub domain: Domain,
}

const DEFECT_POINTS: usize = 41;

pub fn ft_report(network: &NetworkSpec, counting: &CountingSpec) -> Result<FtReport> {
    ft_report_with(&ThetaEvaluator::new(network, counting)?, DEFAULT_THRESHOLD)
}

pub fn ft_report_with(eval: &ThetaEvaluator, threshold: f64) -> Result<FtReport> {
    let domain = eval.domain()?;
    let analytic = analytic_sympoint(eval.network(), eval.counting()).ok().flatten();
    let min = find_smin_in(eval, &domain)?;
    let mut report = FtReport {
        s_min: min.s_min,
        theta_min: min.theta_min,
        s_candidate: 2.0 * min.s_min,
        sym_value: None,
        holds: false,
        threshold,
        verdict: Verdict::Undefined,
        analytic,
        symmetry_defect: None,
        domain,
    };
    if min.flat {
        report.verdict = Verdict::Degenerate;
        return Ok(report);
    }
    if min.at_boundary {
        report.verdict = Verdict::BoundaryMinimum;
        return Ok(report);
    }
    match sym_criterion(eval, min.s_min) {
        Ok(sym) => {
            report.sym_value = Some(sym);
            report.holds = sym < threshold;
            report.verdict = if report.holds { Verdict::Holds } else { Verdict::Broken };
        }
        Err(Error::Undefined(_)) => return Ok(report),
        Err(e) => return Err(e),
    }
    report.symmetry_defect = symmetry_defect(eval, &domain, min.s_min)?;
    Ok(report)
}

fn symmetry_defect(eval: &ThetaEvaluator, domain: &Domain, s_min: f64) -> Result<Option<f64>> {
    let center = 2.0 * s_min;
    let pad = 1e-4 * domain.width();
    let lo = (domain.lo + pad).max(center - domain.hi + pad);
    let hi = (domain.hi - pad).min(center - domain.lo - pad);
    if !(hi > lo) {
        return Ok(None);
    }
    let mut worst: f64 = 0.0;
    for s in linspace(lo, hi, DEFECT_POINTS) {
        let mirror = (center - s).clamp(domain.lo, domain.hi);
        if let (Ok(a), Ok(b)) = (eval.theta(s), eval.theta(mirror)) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(Some(worst))
}

/// One sweep point: the swept parameter and its report (or the failure).
#[derive(Debug)]
pub struct SweepRow {
    pub param_value: f64,
    pub report: Result<FtReport>,
}

/// `ft_report` at each parameter value, in order, failures kept per row.
pub fn ft_sweep<F>(values: &[f64], mode: ExecMode, threshold: f64, build: F) -> Vec<SweepRow>
where
    F: Fn(f64) -> Result<(NetworkSpec, CountingSpec)> + Sync + Send,
{
    exec::map(mode, values, |&v| SweepRow {
        param_value: v,
        report: build(v)
            .and_then(|(net, counting)| ThetaEvaluator::new(&net, &counting))
            .and_then(|eval| ft_report_with(&eval, threshold)),
    })
}

/// CSV with columns `param_value,s_min,s_candidate,sym,holds,analytic`.
/// Failed or undefined entries are written as `nan`.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut w: W) -> Result<()> {
    writeln!(w, "param_value,s_min,s_candidate,sym,holds,analytic")?;
    for row in rows {
        match &row.report {
            Ok(r) => {
                let analytic = r.analytic.as_ref().map_or(f64::NAN, |a| a.value);
                let valid_min = !matches!(r.verdict, Verdict::Degenerate);
                let (s_min, s_cand) = if valid_min { (r.s_min, r.s_candidate) } else { (f64::NAN, f64::NAN) };
                writeln!(
                    w,
                    "{},{},{},{},{},{}",
                    fmt_f64(row.param_value),
                    fmt_f64(s_min),
                    fmt_f64(s_cand),
                    fmt_f64(r.sym_value.unwrap_or(f64::NAN)),
                    r.holds,
                    fmt_f64(analytic)
                )?;
            }
            Err(_) => writeln!(w, "{},nan,nan,nan,false,nan", fmt_f64(row.param_value))?,
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BathSpec, CouplingSpec, OscillatorSpec};
    use approx::assert_relative_eq;

    fn two_bath(t1: f64, t2: f64) -> NetworkSpec {
        NetworkSpec {
            oscillators: vec![OscillatorSpec::new(1.0)],
            couplings: vec![],
            baths: vec![
                BathSpec::thermal("1", 0, 0.1, t1, 1.0).unwrap(),
                BathSpec::thermal("2", 0, 0.1, t2, 1.0).unwrap(),
            ],
        }
    }

    fn chain(n: usize, kind: CouplingKind, t1: f64, t2: f64) -> NetworkSpec {
        NetworkSpec {
            oscillators: vec![OscillatorSpec::new(1.0); n],
            couplings: (0..n - 1).map(|i| CouplingSpec { i, j: i + 1, kind, g: 0.1 }).collect(),
            baths: vec![
                BathSpec::thermal("1", 0, 0.1, t1, 1.0).unwrap(),
                BathSpec::thermal("2", n - 1, 0.1, t2, 1.0).unwrap(),
            ],
        }
    }

    #[test]
    fn two_bath_minimum_and_symmetry() {
        let eval = ThetaEvaluator::new(&two_bath(0.5, 1.5), &CountingSpec::new("1")).unwrap();
        let min = find_smin(&eval).unwrap();
        assert_relative_eq!(min.s_min, 2.0 / 3.0, epsilon = 1e-9);
        assert!(sym_criterion(&eval, min.s_min).unwrap() < 1e-8);
    }

    #[test]
    fn equal_temperatures_minimum_at_origin() {
        let eval = ThetaEvaluator::new(&two_bath(1.0, 1.0), &CountingSpec::new("1")).unwrap();
        let min = find_smin(&eval).unwrap();
        assert!(min.s_min.abs() < 1e-9);
    }

    #[test]
    fn single_bath_is_degenerate() {
        let net = NetworkSpec {
            oscillators: vec![OscillatorSpec::new(1.0)],
            couplings: vec![],
            baths: vec![BathSpec::thermal("c", 0, 0.1, 0.0, 1.0).unwrap()],
        };
        let report = ft_report(&net, &CountingSpec::new("c")).unwrap();
        assert_eq!(report.verdict, Verdict::Degenerate);
        assert!(!report.holds);
        assert!(matches!(analytic_sympoint(&net, &CountingSpec::new("c")), Err(Error::Undefined(_))));
    }

    #[test]
    fn analytic_templates() {
        let single = analytic_sympoint(&two_bath(0.5, 1.5), &CountingSpec::new("1")).unwrap().unwrap();
        assert_relative_eq!(single.value, 4.0 / 3.0, epsilon = 1e-12);

        let rw = chain(5, CouplingKind::Rw, 1.0, 2.0);
        let p1 = analytic_sympoint(&rw, &CountingSpec::new("1")).unwrap().unwrap();
        let p2 = analytic_sympoint(&rw, &CountingSpec::new("2")).unwrap().unwrap();
        assert_relative_eq!(p1.value, 0.5, epsilon = 1e-12);
        assert_relative_eq!(p2.value, -0.5, epsilon = 1e-12);

        let opo = chain(2, CouplingKind::Opo, 1.0, 1.0);
        let p = analytic_sympoint(&opo, &CountingSpec::new("1")).unwrap().unwrap();
        assert_relative_eq!(p.value, 2.0, epsilon = 1e-12);
        assert!(analytic_sympoint(&chain(3, CouplingKind::Opo, 1.0, 1.0), &CountingSpec::new("1"))
            .unwrap()
            .is_none());
        assert!(analytic_sympoint(&chain(2, CouplingKind::Xx, 1.0, 2.0), &CountingSpec::new("1"))
            .unwrap()
            .is_none());

        let cold = two_bath(0.0, 1.0);
        assert!(analytic_sympoint(&cold, &CountingSpec::new("1")).is_err());
    }

    #[test]
    fn report_on_two_bath() {
        let report = ft_report(&two_bath(0.5, 1.5), &CountingSpec::new("1")).unwrap();
        assert_eq!(report.verdict, Verdict::Holds);
        assert_relative_eq!(report.s_candidate, report.analytic.as_ref().unwrap().value, epsilon = 1e-6);
        assert!(report.symmetry_defect.unwrap() <= 10.0 * report.threshold * report.theta_min.abs());
    }

    #[test]
    fn sweep_csv_keeps_failures() {
        let rows = ft_sweep(&[0.5, -1.0], ExecMode::Sequential, DEFAULT_THRESHOLD, |t| {
            let mut net = two_bath(1.0, 1.0);
            net.baths[0] = BathSpec::thermal("1", 0, 0.1, t, 1.0)?;
            net.baths[1] = BathSpec::thermal("2", 0, 0.1, t + 1.0, 1.0)?;
            Ok((net, CountingSpec::new("1")))
        });
        assert!(rows[0].report.is_ok());
        assert!(rows[1].report.is_err());
        let mut out = Vec::new();
        write_sweep_csv(&rows, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "param_value,s_min,s_candidate,sym,holds,analytic");
        assert!(lines[1].starts_with("5.0000000000000000e-1,"));
        assert!(lines[1].contains(",true,"));
        assert_eq!(lines[2], "-1.0000000000000000e0,nan,nan,nan,false,nan");
    }
}
