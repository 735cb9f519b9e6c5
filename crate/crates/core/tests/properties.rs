//! Invariants of the Riccati reduction on randomly drawn stable networks.

use gaussldt::fock;
use gaussldt::ldf::{self, ThetaEvaluator};
use gaussldt::linalg::max_abs;
use gaussldt::model::thermal_rates;
use gaussldt::phasespace::{self, assemble_bias};
use gaussldt::solver::{self, integrate_covariance};
use gaussldt::{BathSpec, CountingSpec, CouplingKind, CouplingSpec, ExecMode, NetworkSpec, OscillatorSpec};
use nalgebra::DMatrix;
use proptest::prelude::*;

#[derive(Debug, Clone)]
struct Case {
    network: NetworkSpec,
    counting: CountingSpec,
}

fn kind() -> impl Strategy<Value = CouplingKind> {
    prop_oneof![Just(CouplingKind::Rw), Just(CouplingKind::Xx), Just(CouplingKind::Opo)]
}

/// Open chains of 1 to 3 oscillators with thermal baths "1" on the first and
/// "2" on the last; a single oscillator carries both.
fn chain() -> impl Strategy<Value = Case> {
    (1usize..=3)
        .prop_flat_map(|n| {
            (
                prop::collection::vec(0.6f64..1.6, n),
                prop::collection::vec((kind(), 0.01f64..0.15), n - 1),
                0.05f64..0.4,
                0.05f64..0.4,
                0.2f64..4.0,
                0.2f64..4.0,
                0usize..2,
            )
        })
        .prop_map(|(omegas, couplings, g1, g2, t1, t2, counted)| {
            let n = omegas.len();
            let network = NetworkSpec {
                oscillators: omegas.iter().map(|&w| OscillatorSpec::new(w)).collect(),
                couplings: couplings
                    .iter()
                    .enumerate()
                    .map(|(i, &(kind, g))| CouplingSpec { i, j: i + 1, kind, g })
                    .collect(),
                baths: vec![
                    BathSpec::thermal("1", 0, g1, t1, omegas[0]).unwrap(),
                    BathSpec::thermal("2", n - 1, g2, t2, omegas[n - 1]).unwrap(),
                ],
            };
            Case {
                network,
                counting: CountingSpec::new(if counted == 0 { "1" } else { "2" }),
            }
        })
        .prop_filter("stable drift", |c| {
            phasespace::assemble(&c.network)
                .and_then(|s| s.stability_margin())
                .is_ok_and(|m| m < -1e-3)
        })
}

/// Evaluator and a grid over the inner 90% of the domain.
fn setup(case: &Case, points: usize) -> (ThetaEvaluator, Vec<f64>) {
    let eval = ThetaEvaluator::new(&case.network, &case.counting).unwrap();
    let d = eval.domain().unwrap();
    let pad = 0.05 * d.width();
    let grid = ldf::linspace(d.lo + pad, d.hi - pad, points);
    (eval, grid)
}

fn config() -> ProptestConfig {
    ProptestConfig {
        cases: 24,
        ..ProptestConfig::default()
    }
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn theta_vanishes_at_zero(case in chain()) {
        let eval = ThetaEvaluator::new(&case.network, &case.counting).unwrap();
        prop_assert!(eval.theta(0.0).unwrap().abs() < 1e-10);
    }

    #[test]
    fn theta_is_convex(case in chain()) {
        let (eval, grid) = setup(&case, 41);
        let curve = ldf::theta_curve_on(&eval, &grid, ExecMode::Sequential).unwrap();
        prop_assert!(curve.solvable.iter().all(|&b| b));
        prop_assert!(curve.min_second_difference().unwrap() >= -1e-8);
    }

    #[test]
    fn accepted_solutions_are_stabilizing_riccati_roots(case in chain(), frac in 0.0f64..1.0) {
        let (eval, grid) = setup(&case, 2);
        let s = grid[0] + frac * (grid[1] - grid[0]);
        let sys = eval.system();
        let bias = eval.bias(s);
        let cov = eval.solve(s, None).or_else(|_| {
            // continue from s = 0 when the direct solve needs a seed
            let mut seed = eval.solve(0.0, None).unwrap().sigma;
            for t in ldf::linspace(0.0, s, 20) {
                seed = eval.solve(t, Some(&seed)).unwrap().sigma;
            }
            eval.solve(s, Some(&seed))
        }).unwrap();
        let res = max_abs(&solver::riccati_residual(&sys.drift, &sys.noise, &bias, &cov.sigma));
        prop_assert!(res < 1e-10 * max_abs(&sys.noise).max(1.0), "residual {res:e}");
        let k = solver::closed_loop_matrix(sys, &bias, &cov.sigma);
        prop_assert!(gaussldt::linalg::spectral_abscissa(&k).unwrap() < 0.0);
        prop_assert!(cov.closed_loop_margin < 0.0);
        prop_assert!(gaussldt::linalg::asymmetry(&cov.sigma) < 1e-12);
    }

    #[test]
    fn bias_is_zero_at_zero_and_sits_on_the_reference_block(case in chain(), s in -2.0f64..2.0) {
        let zero = assemble_bias(&case.network, &case.counting, 0.0).unwrap();
        prop_assert!(zero.f_plus.iter().chain(zero.f_minus.iter()).all(|&v| v == 0.0));
        let b = assemble_bias(&case.network, &case.counting, s).unwrap();
        let osc = case.network.bath(&case.counting.bath).unwrap().oscillator;
        let dim = 2 * case.network.len();
        for r in 0..dim {
            for c in 0..dim {
                let on_block = r == c && r / 2 == osc;
                if !on_block {
                    prop_assert_eq!(b.f_plus[(r, c)], 0.0);
                    prop_assert_eq!(b.f_minus[(r, c)], 0.0);
                }
            }
        }
        prop_assert_eq!(b.f_plus[(2 * osc, 2 * osc)], b.f_plus[(2 * osc + 1, 2 * osc + 1)]);
        prop_assert_eq!(b.f_minus[(2 * osc, 2 * osc)], b.f_minus[(2 * osc + 1, 2 * osc + 1)]);
    }

    #[test]
    fn splitting_a_bath_leaves_drift_and_noise_unchanged(case in chain(), share in 0.1f64..0.9) {
        let mut split = case.network.clone();
        let idx = split.bath_index("2").unwrap();
        let b = split.baths[idx].clone();
        split.baths[idx] = BathSpec::new("2a", b.oscillator, share * b.gamma_down, share * b.gamma_up);
        split.baths.push(BathSpec::new("2b", b.oscillator, (1.0 - share) * b.gamma_down, (1.0 - share) * b.gamma_up));
        let a = phasespace::assemble(&case.network).unwrap();
        let c = phasespace::assemble(&split).unwrap();
        prop_assert!(max_abs(&(&a.drift - &c.drift)) < 1e-14);
        prop_assert!(max_abs(&(&a.noise - &c.noise)) < 1e-14);
        // θ of the untouched bath only sees the aggregate
        let one = CountingSpec::new("1");
        let s = 0.3 / case.network.baths[0].gamma_down.max(1.0);
        let lhs = ThetaEvaluator::new(&case.network, &one).unwrap().theta(s);
        let rhs = ThetaEvaluator::new(&split, &one).unwrap().theta(s);
        if let (Ok(l), Ok(r)) = (lhs, rhs) {
            prop_assert!((l - r).abs() < 1e-10 * l.abs().max(1e-3));
        }
    }

    #[test]
    fn thermal_rates_obey_detailed_balance(gamma in 1e-3f64..10.0, t in 0.05f64..20.0, omega in 0.1f64..5.0) {
        let (down, up) = thermal_rates(gamma, t, omega).unwrap();
        prop_assert!(((down / up).ln() - omega / t).abs() < 1e-9 * (omega / t).max(1.0));
        prop_assert!((down - up - gamma / 2.0).abs() < 1e-12 * down.max(1.0));
    }

    #[test]
    fn first_cumulant_matches_the_covariance_identity(case in chain()) {
        let eval = ThetaEvaluator::new(&case.network, &case.counting).unwrap();
        let identity = eval.first_cumulant_identity().unwrap();
        let kappa = -eval.theta_derivative(0.0).unwrap();
        prop_assert!((kappa - identity).abs() <= 1e-6 * identity.abs().max(1e-12), "{kappa} vs {identity}");
        let fd = ldf::cumulants_with(&eval, 1, 1e-3).unwrap().kappa[0];
        prop_assert!((fd - identity).abs() <= 1e-6 * identity.abs().max(1e-9), "{fd} vs {identity}");
    }

    #[test]
    fn continuation_matches_a_cold_solve(case in chain(), frac in 0.2f64..0.8) {
        let (eval, grid) = setup(&case, 2);
        let s = grid[0] + frac * (grid[1] - grid[0]);
        let h = 1e-2 * (grid[1] - grid[0]);
        let Ok(cold) = eval.solve(s, None) else { return Ok(()) };
        let Ok(near) = eval.solve(s - h, None) else { return Ok(()) };
        let warm = eval.solve(s, Some(&near.sigma)).unwrap();
        prop_assert!(max_abs(&(&cold.sigma - &warm.sigma)) < 1e-8 * max_abs(&cold.sigma).max(1.0));
    }
}

fn single_bath() -> impl Strategy<Value = NetworkSpec> {
    (0.5f64..2.0, 0.05f64..0.5, 0.0f64..3.0).prop_map(|(omega, gamma, t)| NetworkSpec {
        oscillators: vec![OscillatorSpec::new(omega)],
        couplings: vec![],
        baths: vec![BathSpec::thermal("b", 0, gamma, t, omega).unwrap()],
    })
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn a_single_bath_exchanges_nothing(net in single_bath()) {
        let counting = CountingSpec::new("b");
        let eval = ThetaEvaluator::new(&net, &counting).unwrap();
        let d = eval.domain().unwrap();
        // open ends mark where θ stops being resolvable
        let lo = if d.lo_open { d.lo } else { d.lo + 0.02 * d.width() };
        let hi = if d.hi_open { d.hi } else { d.hi - 0.02 * d.width() };
        for s in ldf::linspace(lo.max(-8.0), hi.min(8.0), 33) {
            let theta = eval.theta(s).unwrap();
            prop_assert!(theta.abs() < 1e-9, "θ({s}) = {theta:e}");
        }
    }

    #[test]
    fn covariance_flow_reaches_the_riccati_solution(case in chain(), frac in 0.3f64..0.7) {
        let (eval, grid) = setup(&case, 2);
        let s = grid[0] + frac * (grid[1] - grid[0]);
        let Ok(cov) = eval.solve(s, None) else { return Ok(()) };
        let bias = eval.bias(s);
        // start from the unbiased state; relax for 40 closed-loop times
        let start = eval.stationary_covariance().unwrap();
        let t_max = 40.0 / cov.closed_loop_margin.abs();
        let dt = (0.05 / max_abs(&eval.system().drift).max(1.0)).min(t_max / 200.0);
        match integrate_covariance(eval.system(), &bias, &start, t_max, dt) {
            Ok(path) => {
                let last = path.sigma.last().unwrap();
                let diff = max_abs(&(last - &cov.sigma));
                prop_assert!(diff < 1e-6 * max_abs(&cov.sigma).max(1.0), "{diff:e}");
            }
            // the flow may leave the basin of the stabilizing root; that is
            // not a disagreement
            Err(gaussldt::Error::Divergence { .. }) => {}
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        }
    }
}

fn two_bath_oscillator() -> impl Strategy<Value = NetworkSpec> {
    (0.05f64..0.3, 0.3f64..2.0, 0.5f64..3.0).prop_map(|(gamma, t1, dt)| NetworkSpec {
        oscillators: vec![OscillatorSpec::new(1.0)],
        couplings: vec![],
        baths: vec![
            BathSpec::thermal("1", 0, gamma, t1, 1.0).unwrap(),
            BathSpec::thermal("2", 0, gamma, t1 + dt, 1.0).unwrap(),
        ],
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 6, ..ProptestConfig::default() })]

    #[test]
    fn fock_oracle_agrees_with_the_riccati_reduction(net in two_bath_oscillator(), frac in 0.15f64..0.85) {
        let counting = CountingSpec::new("1");
        let eval = ThetaEvaluator::new(&net, &counting).unwrap();
        let d = eval.domain().unwrap();
        let s = d.lo + frac * d.width();
        let gauss = eval.theta(s).unwrap();
        match fock::auto_truncate(&net, &counting, s, 1e-9) {
            Ok((fock_theta, _)) => prop_assert!((gauss - fock_theta).abs() < 1e-6, "{gauss} vs {fock_theta} at {s}"),
            // heavy tails near the branch points can outgrow the cap
            Err(gaussldt::Error::NoConvergence { .. }) => {}
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        }
    }

    #[test]
    fn single_oscillator_symmetry_about_the_affinity(net in two_bath_oscillator(), frac in 0.1f64..0.9) {
        let counting = CountingSpec::new("1");
        let eval = ThetaEvaluator::new(&net, &counting).unwrap();
        let t1 = net.baths[0].gamma_down.ln() - net.baths[0].gamma_up.ln();
        let t2 = net.baths[1].gamma_down.ln() - net.baths[1].gamma_up.ln();
        // affinity 1/T₁ − 1/T₂ at ω = 1
        let affinity = t1 - t2;
        let d = eval.domain().unwrap();
        let s = d.lo + frac * d.width();
        let mirror = affinity - s;
        if d.contains(mirror) {
            let (a, b) = (eval.theta(s).unwrap(), eval.theta(mirror).unwrap());
            prop_assert!((a - b).abs() < 1e-9 * a.abs().max(1.0), "{a} vs {b}");
        }
    }
}

#[test]
fn vacuum_covariance_solves_the_zero_temperature_single_bath() {
    let net = NetworkSpec {
        oscillators: vec![OscillatorSpec::new(1.0)],
        couplings: vec![],
        baths: vec![BathSpec::thermal("b", 0, 0.2, 0.0, 1.0).unwrap()],
    };
    let counting = CountingSpec::new("b");
    let sys = phasespace::assemble(&net).unwrap();
    for s in [-20.0, -3.0, 0.0, 3.0, 20.0] {
        let bias = assemble_bias(&net, &counting, s).unwrap();
        let res = solver::riccati_residual(&sys.drift, &sys.noise, &bias, &DMatrix::identity(2, 2));
        assert!(max_abs(&res) < 1e-12, "s = {s}");
    }
}
