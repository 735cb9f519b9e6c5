//! Quadrature-space representation of the biased dynamics.
//!
//! Coordinates are ordered `(p₁, q₁, …, p_N, q_N)`, conjugate to the
//! quadratures `x̂ = a + a†` and `ŷ = i(a − a†)`, so the vacuum has unit
//! variance and a thermal mode has variance `2n + 1`.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix2};

use crate::error::Result;
use crate::linalg;
use crate::model::{resolve_counting, BathSpec, CountingSpec, CouplingKind, DriveSpec, NetworkSpec};

/// Drift, noise and drive of the unbiased quantum Fokker–Planck equation.
#[derive(Debug, Clone)]
pub struct PhaseSpaceSystem {
    pub n: usize,
    pub drift: DMatrix<f64>,
    pub noise: DMatrix<f64>,
    /// `A + Aᵀ − 2D`, formed from the rates so the damping cancels exactly.
    pub balance: DMatrix<f64>,
    omegas: Vec<f64>,
    drives: Vec<Option<DriveSpec>>,
}

impl PhaseSpaceSystem {
    pub fn dim(&self) -> usize {
        2 * self.n
    }

    /// `d(t) = (0, ω₁d₁(t), …, 0, ω_N d_N(t))`.
    pub fn drive(&self, t: f64) -> DVector<f64> {
        let mut d = DVector::zeros(2 * self.n);
        for (k, drive) in self.drives.iter().enumerate() {
            if let Some(drive) = drive {
                d[2 * k + 1] = self.omegas[k] * drive.value(t);
            }
        }
        d
    }

    pub fn drives(&self) -> &[Option<DriveSpec>] {
        &self.drives
    }

    pub fn is_driven(&self) -> bool {
        self.drives.iter().any(|d| d.is_some_and(|d| d.amplitude != 0.0))
    }

    pub fn stability_margin(&self) -> Result<f64> {
        stability_margin(&self.drift)
    }
}

/// Diagonal bias matrices `F⁺_s`, `F⁻_s`, nonzero only on the block of the
/// oscillator carrying the reference bath.
#[derive(Debug, Clone)]
pub struct BiasMatrices {
    pub s: f64,
    pub oscillator: usize,
    pub f_plus_scalar: f64,
    pub f_minus_scalar: f64,
    /// `Γ̄_r(e^{s} − 1)`, so that `f₊ − f₋ = 2·absorb` without cancellation.
    pub absorb: f64,
    /// `Γ̄_r` of the reference bath.
    pub gamma_up: f64,
    pub f_plus: DMatrix<f64>,
    pub f_minus: DMatrix<f64>,
}

impl BiasMatrices {
    pub fn zero(dim: usize) -> Self {
        BiasMatrices {
            s: 0.0,
            oscillator: 0,
            f_plus_scalar: 0.0,
            f_minus_scalar: 0.0,
            absorb: 0.0,
            gamma_up: 0.0,
            f_plus: DMatrix::zeros(dim, dim),
            f_minus: DMatrix::zeros(dim, dim),
        }
    }

    /// `F⁺ − F⁻`, formed from the absorption part alone.
    pub fn difference(&self) -> DMatrix<f64> {
        let dim = self.f_plus.nrows();
        let mut d = DMatrix::zeros(dim, dim);
        if self.absorb != 0.0 {
            let k = 2 * self.oscillator;
            d[(k, k)] = 2.0 * self.absorb;
            d[(k + 1, k + 1)] = 2.0 * self.absorb;
        }
        d
    }
}

pub fn coupling_block(kind: CouplingKind, g: f64) -> Matrix2<f64> {
    match kind {
        CouplingKind::Xx => Matrix2::new(0.0, 0.0, 2.0 * g, 0.0),
        CouplingKind::Rw => Matrix2::new(0.0, -g, g, 0.0),
        CouplingKind::Opo => Matrix2::new(0.0, g, g, 0.0),
    }
}

pub fn assemble_drift(network: &NetworkSpec) -> Result<DMatrix<f64>> {
    let report = network.ensure_valid()?;
    let n = network.len();
    let mut a = DMatrix::zeros(2 * n, 2 * n);
    for (k, (osc, agg)) in network.oscillators.iter().zip(&report.aggregates).enumerate() {
        let damp = -agg.gamma_down + agg.gamma_up;
        let (re, im) = (osc.upsilon.re, osc.upsilon.im);
        let block = Matrix2::new(
            -2.0 * im + damp,
            -osc.omega + 2.0 * re,
            osc.omega + 2.0 * re,
            2.0 * im + damp,
        );
        a.fixed_view_mut::<2, 2>(2 * k, 2 * k).copy_from(&block);
    }
    for c in &network.couplings {
        let block = coupling_block(c.kind, c.g);
        a.fixed_view_mut::<2, 2>(2 * c.i, 2 * c.j).copy_from(&block);
        a.fixed_view_mut::<2, 2>(2 * c.j, 2 * c.i).copy_from(&block);
    }
    Ok(a)
}

pub fn assemble_noise(network: &NetworkSpec) -> Result<DMatrix<f64>> {
    let report = network.ensure_valid()?;
    let n = network.len();
    let mut d = DMatrix::zeros(2 * n, 2 * n);
    for (k, agg) in report.aggregates.iter().enumerate() {
        let total = -agg.gamma_down - agg.gamma_up;
        let block = Matrix2::new(
            total + 2.0 * agg.lambda.re,
            -2.0 * agg.lambda.im,
            -2.0 * agg.lambda.im,
            total - 2.0 * agg.lambda.re,
        );
        d.fixed_view_mut::<2, 2>(2 * k, 2 * k).copy_from(&block);
    }
    Ok(d)
}

/// `A + Aᵀ − 2D`. On the diagonal blocks the damping `Γ_k` drops out
/// analytically, leaving `4Γ̄_k` plus the squeezing terms.
pub fn assemble_balance(network: &NetworkSpec) -> Result<DMatrix<f64>> {
    let report = network.ensure_valid()?;
    let a = assemble_drift(network)?;
    let mut b = &a + a.transpose() - assemble_noise(network)? * 2.0;
    for (k, (osc, agg)) in network.oscillators.iter().zip(&report.aggregates).enumerate() {
        let (im, lre) = (osc.upsilon.im, agg.lambda.re);
        b[(2 * k, 2 * k)] = 4.0 * agg.gamma_up - 4.0 * im - 4.0 * lre;
        b[(2 * k + 1, 2 * k + 1)] = 4.0 * agg.gamma_up + 4.0 * im + 4.0 * lre;
    }
    Ok(b)
}

pub fn assemble(network: &NetworkSpec) -> Result<PhaseSpaceSystem> {
    Ok(PhaseSpaceSystem {
        n: network.len(),
        drift: assemble_drift(network)?,
        noise: assemble_noise(network)?,
        balance: assemble_balance(network)?,
        omegas: network.oscillators.iter().map(|o| o.omega).collect(),
        drives: network.oscillators.iter().map(|o| o.drive).collect(),
    })
}

/// `(f₊(s), f₋(s)) = Γ_r(e^{−s} − 1) ± Γ̄_r(e^{s} − 1)` from the bath's own rates.
pub fn bias_functions(bath: &BathSpec, s: f64) -> (f64, f64) {
    let (emit, absorb) = bias_parts(bath, s);
    (emit + absorb, emit - absorb)
}

/// The two terms `(Γ_r(e^{−s} − 1), Γ̄_r(e^{s} − 1))` of the bias functions.
pub fn bias_parts(bath: &BathSpec, s: f64) -> (f64, f64) {
    (bath.gamma_down * (-s).exp_m1(), bath.gamma_up * s.exp_m1())
}

/// First derivatives of [`bias_functions`] with respect to `s`.
pub fn bias_function_derivatives(bath: &BathSpec, s: f64) -> (f64, f64) {
    let emit = -bath.gamma_down * (-s).exp();
    let absorb = bath.gamma_up * s.exp();
    (emit + absorb, emit - absorb)
}

pub fn assemble_bias(network: &NetworkSpec, counting: &CountingSpec, s: f64) -> Result<BiasMatrices> {
    let idx = resolve_counting(network, counting)?;
    let bath = &network.baths[idx];
    let dim = 2 * network.len();
    let (fp, fm) = bias_functions(bath, s);
    let mut f_plus = DMatrix::zeros(dim, dim);
    let mut f_minus = DMatrix::zeros(dim, dim);
    let k = 2 * bath.oscillator;
    for r in k..k + 2 {
        f_plus[(r, r)] = fp;
        f_minus[(r, r)] = fm;
    }
    Ok(BiasMatrices {
        s,
        oscillator: bath.oscillator,
        f_plus_scalar: fp,
        f_minus_scalar: fm,
        absorb: bias_parts(bath, s).1,
        gamma_up: bath.gamma_up,
        f_plus,
        f_minus,
    })
}

/// Largest real part of the drift spectrum; the network has a stationary
/// state iff this is negative.
pub fn stability_margin(a: &DMatrix<f64>) -> Result<f64> {
    linalg::spectral_abscissa(a)
}

/// Write drift, noise and (when given) bias matrices as Matrix Market
/// dense arrays into `dir`.
pub fn dump_matrices(dir: &Path, system: &PhaseSpaceSystem, bias: Option<&BiasMatrices>) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_matrix_market(&dir.join("drift.mtx"), &system.drift)?;
    write_matrix_market(&dir.join("noise.mtx"), &system.noise)?;
    if let Some(b) = bias {
        write_matrix_market(&dir.join("f_plus.mtx"), &b.f_plus)?;
        write_matrix_market(&dir.join("f_minus.mtx"), &b.f_minus)?;
    }
    Ok(())
}

pub fn write_matrix_market(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(f, "%%MatrixMarket matrix array real general")?;
    writeln!(f, "{} {}", m.nrows(), m.ncols())?;
    // column-major, as the array format requires
    for v in m.iter() {
        writeln!(f, "{v:.17e}")?;
    }
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CouplingSpec, OscillatorSpec};
    use approx::assert_relative_eq;
    use num_complex::Complex64;

    fn thermal_single(gamma: f64, t: f64) -> NetworkSpec {
        NetworkSpec {
            oscillators: vec![OscillatorSpec::new(1.0)],
            couplings: vec![],
            baths: vec![BathSpec::thermal("b", 0, gamma, t, 1.0).unwrap()],
        }
    }

    fn pair(kind: CouplingKind, g: f64, gamma: f64) -> NetworkSpec {
        NetworkSpec {
            oscillators: vec![OscillatorSpec::new(1.0), OscillatorSpec::new(1.0)],
            couplings: vec![CouplingSpec { i: 0, j: 1, kind, g }],
            baths: vec![
                BathSpec::thermal("1", 0, gamma, 1.0, 1.0).unwrap(),
                BathSpec::thermal("2", 1, gamma, 2.0, 1.0).unwrap(),
            ],
        }
    }

    #[test]
    fn balance_matches_the_generic_form() {
        let mut net = pair(CouplingKind::Xx, 0.3, 0.1);
        net.oscillators[0].upsilon = Complex64::new(0.02, -0.01);
        net.baths[1].lambda = Complex64::new(0.01, 0.02);
        let sys = assemble(&net).unwrap();
        let generic = &sys.drift + sys.drift.transpose() - &sys.noise * 2.0;
        assert!((&sys.balance - generic).abs().max() < 1e-15);
    }

    #[test]
    fn coupling_blocks() {
        assert_eq!(coupling_block(CouplingKind::Rw, 0.1), Matrix2::new(0.0, -0.1, 0.1, 0.0));
        assert_eq!(coupling_block(CouplingKind::Xx, 0.0), Matrix2::zeros());
        assert_eq!(coupling_block(CouplingKind::Opo, 0.1), Matrix2::new(0.0, 0.1, 0.1, 0.0));
        assert_eq!(coupling_block(CouplingKind::Xx, 0.3), Matrix2::new(0.0, 0.0, 0.6, 0.0));
    }

    #[test]
    fn single_oscillator_drift() {
        let a = assemble_drift(&thermal_single(0.1, 0.7)).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[-0.05, -1.0, 1.0, -0.05]);
        assert!(linalg::max_abs(&(a - expected)) < 1e-15);
    }

    #[test]
    fn opo_pair_drift() {
        let a = assemble_drift(&pair(CouplingKind::Opo, 0.1, 0.1)).unwrap();
        let h = -0.05;
        #[rustfmt::skip]
        let expected = DMatrix::from_row_slice(4, 4, &[
            h, -1.0, 0.0, 0.1,
            1.0, h, 0.1, 0.0,
            0.0, 0.1, h, -1.0,
            0.1, 0.0, 1.0, h,
        ]);
        assert!(linalg::max_abs(&(a - expected)) < 1e-15);
    }

    #[test]
    fn relative_distance_pair_drift() {
        // (x1 - x2)² coupling with strength g: frequency ω + g, squeezing g/2,
        // x-x coupling −g.
        let g = 0.3;
        let mut net = pair(CouplingKind::Xx, -g, 0.1);
        for o in &mut net.oscillators {
            o.omega = 1.0 + g;
            o.upsilon = Complex64::new(g / 2.0, 0.0);
        }
        let a = assemble_drift(&net).unwrap();
        let h = -0.05;
        #[rustfmt::skip]
        let expected = DMatrix::from_row_slice(4, 4, &[
            h, -1.0, 0.0, 0.0,
            1.0 + 2.0 * g, h, -2.0 * g, 0.0,
            0.0, 0.0, h, -1.0,
            -2.0 * g, 0.0, 1.0 + 2.0 * g, h,
        ]);
        assert!(linalg::max_abs(&(a - expected)) < 1e-15);
    }

    #[test]
    fn drift_blocks_are_placed_symmetrically() {
        for kind in [CouplingKind::Xx, CouplingKind::Rw, CouplingKind::Opo] {
            let a = assemble_drift(&pair(kind, 0.37, 0.1)).unwrap();
            assert_eq!(a.view((0, 2), (2, 2)), a.view((2, 0), (2, 2)));
        }
    }

    #[test]
    fn undamped_rw_drift_is_purely_oscillatory() {
        let mut net = pair(CouplingKind::Rw, 0.2, 0.1);
        net.baths.clear();
        let a = assemble_drift(&net).unwrap();
        for z in linalg::eigenvalues(&a).unwrap() {
            assert!(z.re.abs() < 1e-12, "{z}");
        }
    }

    #[test]
    fn thermal_noise() {
        let n = crate::model::bose_occupation(0.7, 1.0);
        let d = assemble_noise(&thermal_single(0.1, 0.7)).unwrap();
        let expected = -(0.1 / 2.0) * (2.0 * n + 1.0);
        assert_relative_eq!(d[(0, 0)], expected, epsilon = 1e-15);
        assert_relative_eq!(d[(1, 1)], expected, epsilon = 1e-15);
        assert_eq!(d[(0, 1)], 0.0);
    }

    #[test]
    fn noise_without_baths_is_zero() {
        let mut net = thermal_single(0.1, 1.0);
        net.baths.clear();
        assert_eq!(assemble_noise(&net).unwrap(), DMatrix::zeros(2, 2));
    }

    #[test]
    fn squeezed_bath_noise() {
        let mut bath = BathSpec::new("sq", 0, 0.06, 0.04);
        bath.lambda = Complex64::new(0.0, 0.02);
        let net = NetworkSpec {
            oscillators: vec![OscillatorSpec::new(1.0)],
            couplings: vec![],
            baths: vec![bath],
        };
        let d = assemble_noise(&net).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[-0.1, -0.04, -0.04, -0.1]);
        assert!(linalg::max_abs(&(d - expected)) < 1e-15);
    }

    #[test]
    fn bias_function_values() {
        let b = BathSpec::new("r", 0, 0.0791, 0.0291);
        assert_eq!(bias_functions(&b, 0.0), (0.0, 0.0));
        let (fp, fm) = bias_functions(&b, 0.5);
        assert_relative_eq!(fp, 0.0791 * ((-0.5f64).exp() - 1.0) + 0.0291 * (0.5f64.exp() - 1.0), epsilon = 1e-16);
        assert_relative_eq!(fp, -0.012246, epsilon = 5e-7);
        assert_relative_eq!(fm, -0.050001, epsilon = 5e-7);

        let cold = BathSpec::new("c", 0, 0.05, 0.0);
        for s in [-2.0, 0.3, 1.7] {
            let (fp, fm) = bias_functions(&cold, s);
            assert_eq!(fp, fm);
            assert_relative_eq!(fp, 0.05 * ((-s).exp() - 1.0), epsilon = 1e-16);
        }
    }

    #[test]
    fn bias_derivatives_match_finite_differences() {
        let b = BathSpec::new("r", 0, 0.0791, 0.0291);
        let h = 1e-6;
        for s in [-1.0, 0.0, 0.8] {
            let (dp, dm) = bias_function_derivatives(&b, s);
            let (p1, m1) = bias_functions(&b, s + h);
            let (p0, m0) = bias_functions(&b, s - h);
            assert_relative_eq!(dp, (p1 - p0) / (2.0 * h), epsilon = 1e-9);
            assert_relative_eq!(dm, (m1 - m0) / (2.0 * h), epsilon = 1e-9);
        }
    }

    #[test]
    fn bias_uses_bath_rates_not_aggregate() {
        let net = NetworkSpec {
            oscillators: vec![OscillatorSpec::new(1.0)],
            couplings: vec![],
            baths: vec![BathSpec::new("a", 0, 0.05, 0.0), BathSpec::new("b", 0, 0.2, 0.1)],
        };
        let bias = assemble_bias(&net, &CountingSpec::new("a"), 0.4).unwrap();
        assert_relative_eq!(bias.f_plus_scalar, 0.05 * (-0.4f64).exp_m1(), epsilon = 1e-16);
    }

    #[test]
    fn bias_block_placement() {
        let net = pair(CouplingKind::Rw, 0.1, 0.1);
        let zero = assemble_bias(&net, &CountingSpec::new("1"), 0.0).unwrap();
        assert_eq!(zero.f_plus, DMatrix::zeros(4, 4));
        assert_eq!(zero.f_minus, DMatrix::zeros(4, 4));

        let b = assemble_bias(&net, &CountingSpec::new("1"), 0.3).unwrap();
        assert!(linalg::max_abs(&(b.difference() - (&b.f_plus - &b.f_minus))) < 1e-16);
        for r in 0..4 {
            for c in 0..4 {
                let on_block = r == c && r < 2;
                assert_eq!(b.f_plus[(r, c)] != 0.0, on_block);
                assert_eq!(b.f_minus[(r, c)] != 0.0, on_block);
            }
        }
        assert!(assemble_bias(&net, &CountingSpec::new("nope"), 0.3).is_err());
    }

    #[test]
    fn margins() {
        let a = assemble_drift(&thermal_single(0.1, 1.0)).unwrap();
        assert_relative_eq!(stability_margin(&a).unwrap(), -0.05, epsilon = 1e-14);
        let mut net = thermal_single(0.1, 1.0);
        net.baths.clear();
        let a = assemble_drift(&net).unwrap();
        assert!(stability_margin(&a).unwrap().abs() < 1e-14);
    }

    #[test]
    fn drive_vector_layout() {
        let mut net = pair(CouplingKind::Rw, 0.1, 0.1);
        net.oscillators[1].omega = 2.0;
        net.oscillators[1].drive = Some(DriveSpec::constant(0.25));
        let sys = assemble(&net).unwrap();
        assert!(sys.is_driven());
        assert_eq!(sys.drive(3.0).as_slice(), &[0.0, 0.0, 0.0, 0.5]);
    }

    #[test]
    fn matrix_market_dump() {
        let dir = tempfile::tempdir().unwrap();
        let net = thermal_single(0.1, 1.0);
        let sys = assemble(&net).unwrap();
        let bias = assemble_bias(&net, &CountingSpec::new("b"), 0.2).unwrap();
        dump_matrices(dir.path(), &sys, Some(&bias)).unwrap();
        let text = std::fs::read_to_string(dir.path().join("drift.mtx")).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "%%MatrixMarket matrix array real general");
        assert_eq!(lines.next().unwrap(), "2 2");
        let values: Vec<f64> = lines.map(|l| l.parse().unwrap()).collect();
        assert_eq!(values, vec![-0.05, 1.0, -1.0, -0.05]);
        assert!(dir.path().join("f_minus.mtx").exists());
    }
}
