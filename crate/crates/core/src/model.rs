//! Declarative description of a harmonic network, its baths and the counted
//! exchange process.
//!
//! Units: ħ = k_B = 1, frequencies and rates in units of a reference
//! frequency, temperatures in units of that frequency.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;

use crate::error::{Error, Result, ValidationErrors};

/// Time dependence of a bounded force on one oscillator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DriveKind {
    Constant,
    Sinusoidal,
}

/// Force `d(t)` with `|d(t)| <= amplitude`.
///
/// Constant drives ignore `frequency` and `phase`; sinusoidal drives are
/// `amplitude * cos(frequency * t + phase)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriveSpec {
    pub kind: DriveKind,
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
}

impl DriveSpec {
    pub fn constant(amplitude: f64) -> Self {
        DriveSpec {
            kind: DriveKind::Constant,
            amplitude,
            frequency: 0.0,
            phase: 0.0,
        }
    }

    pub fn sinusoidal(amplitude: f64, frequency: f64, phase: f64) -> Self {
        DriveSpec {
            kind: DriveKind::Sinusoidal,
            amplitude,
            frequency,
            phase,
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        match self.kind {
            DriveKind::Constant => self.amplitude,
            DriveKind::Sinusoidal => self.amplitude * (self.frequency * t + self.phase).cos(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OscillatorSpec {
    pub omega: f64,
    pub drive: Option<DriveSpec>,
    /// Single-mode squeezing rate.
    pub upsilon: Complex64,
}

impl OscillatorSpec {
    pub fn new(omega: f64) -> Self {
        OscillatorSpec {
            omega,
            drive: None,
            upsilon: Complex64::new(0.0, 0.0),
        }
    }
}

/// Bilinear coupling scheme between two oscillators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CouplingKind {
    /// Position-position, `g (a_i + a_i†)(a_j + a_j†)`.
    Xx,
    /// Rotating wave, `g (a_i a_j† + a_i† a_j)`.
    Rw,
    /// Two-mode squeezing, `g (a_i† a_j† + a_i a_j)`.
    Opo,
}

impl FromStr for CouplingKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "xx" | "x-x" => Ok(CouplingKind::Xx),
            "rw" => Ok(CouplingKind::Rw),
            "opo" => Ok(CouplingKind::Opo),
            other => Err(Error::Config(format!("unknown coupling kind `{other}`"))),
        }
    }
}

impl fmt::Display for CouplingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CouplingKind::Xx => "xx",
            CouplingKind::Rw => "rw",
            CouplingKind::Opo => "opo",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingSpec {
    pub i: usize,
    pub j: usize,
    pub kind: CouplingKind,
    pub g: f64,
}

/// One reservoir attached to one oscillator.
///
/// `gamma_down` is the emission rate (system to bath), `gamma_up` the
/// absorption rate. The conjugate squeezing rate is taken as `lambda.conj()`.
#[derive(Debug, Clone, PartialEq)]
pub struct BathSpec {
    pub label: String,
    pub oscillator: usize,
    pub gamma_down: f64,
    pub gamma_up: f64,
    pub lambda: Complex64,
}

impl BathSpec {
    pub fn new(label: impl Into<String>, oscillator: usize, gamma_down: f64, gamma_up: f64) -> Self {
        BathSpec {
            label: label.into(),
            oscillator,
            gamma_down,
            gamma_up,
            lambda: Complex64::new(0.0, 0.0),
        }
    }

    /// Thermal bath with damping `gamma` at `temperature`, using the
    /// attached oscillator frequency `omega` for the Bose occupation.
    pub fn thermal(
        label: impl Into<String>,
        oscillator: usize,
        gamma: f64,
        temperature: f64,
        omega: f64,
    ) -> Result<Self> {
        let (down, up) = thermal_rates(gamma, temperature, omega)?;
        Ok(BathSpec::new(label, oscillator, down, up))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct NetworkSpec {
    pub oscillators: Vec<OscillatorSpec>,
    pub couplings: Vec<CouplingSpec>,
    pub baths: Vec<BathSpec>,
}

impl NetworkSpec {
    pub fn len(&self) -> usize {
        self.oscillators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.oscillators.is_empty()
    }

    pub fn bath_index(&self, label: &str) -> Option<usize> {
        self.baths.iter().position(|b| b.label == label)
    }

    pub fn bath(&self, label: &str) -> Result<&BathSpec> {
        self.baths
            .iter()
            .find(|b| b.label == label)
            .ok_or_else(|| Error::Config(format!("no bath labelled `{label}`")))
    }

    pub fn is_driven(&self) -> bool {
        self.oscillators
            .iter()
            .any(|o| o.drive.is_some_and(|d| d.amplitude != 0.0))
    }

    /// Sum of the rates of every bath attached to each oscillator.
    pub fn aggregate_rates(&self) -> Vec<AggregateRates> {
        let mut out = vec![AggregateRates::default(); self.oscillators.len()];
        for b in &self.baths {
            if let Some(agg) = out.get_mut(b.oscillator) {
                agg.gamma_down += b.gamma_down;
                agg.gamma_up += b.gamma_up;
                agg.lambda += b.lambda;
            }
        }
        out
    }

    /// Fail unless [`validate`] reports no violations.
    pub fn ensure_valid(&self) -> Result<ValidationReport> {
        let report = validate(self);
        if report.is_valid() {
            Ok(report)
        } else {
            Err(Error::Validation(ValidationErrors(
                report.violations.iter().map(|v| v.to_string()).collect(),
            )))
        }
    }
}

/// Label of the reference bath whose net exchange is counted.
///
/// Positive counts mean net quanta emitted into the bath.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountingSpec {
    pub bath: String,
}

impl CountingSpec {
    pub fn new(bath: impl Into<String>) -> Self {
        CountingSpec { bath: bath.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AggregateRates {
    pub gamma_down: f64,
    pub gamma_up: f64,
    pub lambda: Complex64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NoOscillators,
    NonPositiveFrequency { oscillator: usize },
    NonFiniteSqueezing { oscillator: usize },
    BadDrive { oscillator: usize },
    SelfCoupling { index: usize, oscillator: usize },
    CouplingOutOfRange { index: usize },
    DuplicateCoupling { i: usize, j: usize },
    NonFiniteCoupling { index: usize },
    BathOutOfRange { label: String },
    NegativeRate { label: String },
    NoExchange { label: String },
    DuplicateBathLabel { label: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoOscillators => write!(f, "network has no oscillators"),
            Violation::NonPositiveFrequency { oscillator } => {
                write!(f, "oscillator {oscillator}: frequency must be positive and finite")
            }
            Violation::NonFiniteSqueezing { oscillator } => {
                write!(f, "oscillator {oscillator}: squeezing rate must be finite")
            }
            Violation::BadDrive { oscillator } => write!(
                f,
                "oscillator {oscillator}: drive amplitude must be finite and non-negative"
            ),
            Violation::SelfCoupling { index, oscillator } => {
                write!(f, "coupling {index}: self-coupling on oscillator {oscillator}")
            }
            Violation::CouplingOutOfRange { index } => {
                write!(f, "coupling {index}: oscillator index out of range")
            }
            Violation::DuplicateCoupling { i, j } => {
                write!(f, "duplicate coupling between oscillators {i} and {j}")
            }
            Violation::NonFiniteCoupling { index } => {
                write!(f, "coupling {index}: strength must be finite")
            }
            Violation::BathOutOfRange { label } => {
                write!(f, "bath `{label}`: oscillator index out of range")
            }
            Violation::NegativeRate { label } => {
                write!(f, "bath `{label}`: rates must be finite and non-negative")
            }
            Violation::NoExchange { label } => {
                write!(f, "bath `{label}`: gamma_down + gamma_up must be positive")
            }
            Violation::DuplicateBathLabel { label } => write!(f, "duplicate bath label `{label}`"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub warnings: Vec<String>,
    /// Per-oscillator rates fed to the drift and noise assemblers.
    pub aggregates: Vec<AggregateRates>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Emission and absorption rates of a thermal bath: `((n+1)γ/2, nγ/2)` with
/// `n` the Bose occupation at `omega / temperature`.
pub fn thermal_rates(gamma: f64, temperature: f64, omega: f64) -> Result<(f64, f64)> {
    if !(gamma > 0.0) || !(omega > 0.0) || !(temperature >= 0.0) {
        return Err(Error::Config(format!(
            "thermal rates need gamma > 0, omega > 0, T >= 0 (got gamma={gamma}, T={temperature}, omega={omega})"
        )));
    }
    let n = bose_occupation(temperature, omega);
    Ok(((n + 1.0) * gamma / 2.0, n * gamma / 2.0))
}

pub fn bose_occupation(temperature: f64, omega: f64) -> f64 {
    if temperature == 0.0 {
        0.0
    } else {
        1.0 / (omega / temperature).exp_m1()
    }
}

pub fn validate(network: &NetworkSpec) -> ValidationReport {
    let n = network.oscillators.len();
    let mut violations = Vec::new();
    let mut warnings = Vec::new();

    if n == 0 {
        violations.push(Violation::NoOscillators);
    }
    for (k, osc) in network.oscillators.iter().enumerate() {
        if !(osc.omega > 0.0) || !osc.omega.is_finite() {
            violations.push(Violation::NonPositiveFrequency { oscillator: k });
        }
        if !osc.upsilon.re.is_finite() || !osc.upsilon.im.is_finite() {
            violations.push(Violation::NonFiniteSqueezing { oscillator: k });
        }
        if let Some(d) = osc.drive {
            if !(d.amplitude >= 0.0) || !d.amplitude.is_finite() || !d.frequency.is_finite() {
                violations.push(Violation::BadDrive { oscillator: k });
            }
        }
    }

    let mut pairs = HashSet::new();
    for (k, c) in network.couplings.iter().enumerate() {
        if c.i >= n || c.j >= n {
            violations.push(Violation::CouplingOutOfRange { index: k });
            continue;
        }
        if c.i == c.j {
            violations.push(Violation::SelfCoupling {
                index: k,
                oscillator: c.i,
            });
            continue;
        }
        if !c.g.is_finite() {
            violations.push(Violation::NonFiniteCoupling { index: k });
        }
        let key = (c.i.min(c.j), c.i.max(c.j));
        if !pairs.insert(key) {
            violations.push(Violation::DuplicateCoupling { i: key.0, j: key.1 });
        }
    }

    let mut labels = HashSet::new();
    for b in &network.baths {
        if !labels.insert(b.label.as_str()) {
            violations.push(Violation::DuplicateBathLabel {
                label: b.label.clone(),
            });
        }
        if b.oscillator >= n {
            violations.push(Violation::BathOutOfRange {
                label: b.label.clone(),
            });
        }
        let finite = b.gamma_down.is_finite() && b.gamma_up.is_finite();
        if !finite || b.gamma_down < 0.0 || b.gamma_up < 0.0 {
            violations.push(Violation::NegativeRate {
                label: b.label.clone(),
            });
        } else if b.gamma_down + b.gamma_up <= 0.0 {
            violations.push(Violation::NoExchange {
                label: b.label.clone(),
            });
        }
    }

    let aggregates = network.aggregate_rates();
    for (k, agg) in aggregates.iter().enumerate() {
        if agg.gamma_down == 0.0 && agg.gamma_up == 0.0 {
            warnings.push(format!("oscillator {k} has no bath attached"));
        }
    }

    ValidationReport {
        violations,
        warnings,
        aggregates,
    }
}

/// Check that the counted bath exists, returning its index.
pub fn resolve_counting(network: &NetworkSpec, counting: &CountingSpec) -> Result<usize> {
    network
        .bath_index(&counting.bath)
        .ok_or_else(|| Error::Config(format!("counting bath `{}` does not exist", counting.bath)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn thermal_rates_zero_temperature() {
        let (down, up) = thermal_rates(0.1, 0.0, 1.0).unwrap();
        assert_eq!(down, 0.05);
        assert_eq!(up, 0.0);
    }

    #[test]
    fn thermal_rates_unit_temperature() {
        // n = 1/(e - 1)
        let n = 1.0 / (std::f64::consts::E - 1.0);
        assert_relative_eq!(n, 0.581_976_706_869_326_4, epsilon = 1e-15);
        let (down, up) = thermal_rates(0.1, 1.0, 1.0).unwrap();
        assert_relative_eq!(down, 0.079_098_835_343_466_3, epsilon = 1e-15);
        assert_relative_eq!(up, 0.029_098_835_343_466_3, epsilon = 1e-15);
    }

    #[test]
    fn thermal_rates_hot_limit_keeps_net_damping() {
        let (down, up) = thermal_rates(0.1, 1e6, 1.0).unwrap();
        assert!(down > 1e4);
        assert_relative_eq!(down - up, 0.05, epsilon = 1e-9);
        let (down, up) = thermal_rates(0.1, f64::INFINITY, 1.0).unwrap();
        assert!(down.is_infinite() && up.is_infinite());
    }

    #[test]
    fn thermal_rates_rejects_negative_inputs() {
        assert!(thermal_rates(-0.1, 1.0, 1.0).is_err());
        assert!(thermal_rates(0.1, -1.0, 1.0).is_err());
        assert!(thermal_rates(0.1, 1.0, -1.0).is_err());
        assert!(thermal_rates(0.1, f64::NAN, 1.0).is_err());
    }

    #[test]
    fn detailed_balance() {
        for &t in &[0.1, 0.5, 1.0, 3.0, 10.0] {
            for &w in &[0.5, 1.0, 2.0] {
                let (down, up) = thermal_rates(0.3, t, w).unwrap();
                assert_relative_eq!(up / down, (-w / t).exp(), max_relative = 1e-14);
            }
        }
    }

    fn single(baths: Vec<BathSpec>) -> NetworkSpec {
        NetworkSpec {
            oscillators: vec![OscillatorSpec::new(1.0)],
            couplings: vec![],
            baths,
        }
    }

    #[test]
    fn single_thermal_bath_is_valid() {
        let bath = BathSpec::thermal("b", 0, 0.1, 1.0, 1.0).unwrap();
        let net = single(vec![bath.clone()]);
        let report = validate(&net);
        assert!(report.is_valid());
        assert_eq!(report.aggregates[0].gamma_down, bath.gamma_down);
        assert_eq!(report.aggregates[0].gamma_up, bath.gamma_up);
    }

    #[test]
    fn two_baths_aggregate() {
        let a = BathSpec::thermal("a", 0, 0.1, 0.5, 1.0).unwrap();
        let b = BathSpec::thermal("b", 0, 0.1, 1.5, 1.0).unwrap();
        let report = validate(&single(vec![a.clone(), b.clone()]));
        assert!(report.is_valid());
        assert_eq!(report.aggregates[0].gamma_down, a.gamma_down + b.gamma_down);
        assert_eq!(report.aggregates[0].gamma_up, a.gamma_up + b.gamma_up);
    }

    #[test]
    fn self_coupling_is_reported() {
        let mut net = single(vec![]);
        net.oscillators.push(OscillatorSpec::new(1.0));
        net.couplings.push(CouplingSpec {
            i: 1,
            j: 1,
            kind: CouplingKind::Rw,
            g: 0.1,
        });
        let report = validate(&net);
        assert_eq!(report.violations.len(), 1);
        assert!(report.violations[0].to_string().contains("self-coupling"));
    }

    #[test]
    fn violations_are_collected_not_short_circuited() {
        let mut net = single(vec![BathSpec::new("x", 3, -1.0, 0.0), BathSpec::new("x", 0, 0.0, 0.0)]);
        net.oscillators[0].omega = 0.0;
        net.couplings.push(CouplingSpec {
            i: 0,
            j: 5,
            kind: CouplingKind::Xx,
            g: 1.0,
        });
        let report = validate(&net);
        assert!(report.violations.len() >= 5, "{:?}", report.violations);
        assert!(net.ensure_valid().is_err());
    }

    #[test]
    fn duplicate_unordered_coupling() {
        let mut net = single(vec![]);
        net.oscillators.push(OscillatorSpec::new(1.0));
        for (i, j) in [(0, 1), (1, 0)] {
            net.couplings.push(CouplingSpec {
                i,
                j,
                kind: CouplingKind::Rw,
                g: 0.1,
            });
        }
        let report = validate(&net);
        assert_eq!(report.violations, vec![Violation::DuplicateCoupling { i: 0, j: 1 }]);
    }

    #[test]
    fn bare_oscillator_warns() {
        let report = validate(&single(vec![]));
        assert!(report.is_valid());
        assert_eq!(report.warnings.len(), 1);
    }

    #[test]
    fn counting_resolution() {
        let net = single(vec![BathSpec::new("hot", 0, 0.1, 0.05)]);
        assert_eq!(resolve_counting(&net, &CountingSpec::new("hot")).unwrap(), 0);
        assert!(resolve_counting(&net, &CountingSpec::new("cold")).is_err());
    }

    #[test]
    fn coupling_kind_parse() {
        assert_eq!("RW".parse::<CouplingKind>().unwrap(), CouplingKind::Rw);
        assert!("kerr".parse::<CouplingKind>().is_err());
    }

    #[test]
    fn drive_values() {
        let c = DriveSpec::constant(0.3);
        assert_eq!(c.value(12.0), 0.3);
        let s = DriveSpec::sinusoidal(0.2, 2.0, 0.0);
        assert_relative_eq!(s.value(std::f64::consts::PI / 2.0), -0.2, epsilon = 1e-15);
    }
}
