//! JSON network description.
//!
//! Either explicit `oscillators`/`couplings`/`baths` arrays or a `chain`
//! template, plus an optional `counting.bath`:
//!
//! ```json
//! {
//!   "oscillators": [{"omega": 1.0}, {"omega": 1.0, "upsilon": [0.05, 0.0]}],
//!   "couplings": [{"i": 0, "j": 1, "kind": "rw", "g": 0.1}],
//!   "baths": [
//!     {"label": "hot", "oscillator": 0, "gamma": 0.1, "T": 2.0},
//!     {"label": "cold", "oscillator": 1, "gamma_down": 0.05, "gamma_up": 0.01}
//!   ],
//!   "counting": {"bath": "hot"}
//! }
//! ```
//!
//! Thermal shorthand `{gamma, T}` uses the frequency of the attached
//! oscillator. Defaults: `upsilon = [0, 0]`, no drive, `lambda = [0, 0]`.
//! Unknown keys are rejected.

use std::path::Path;

use num_complex::Complex64;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::model::{BathSpec, CountingSpec, CouplingKind, CouplingSpec, DriveKind, DriveSpec, NetworkSpec, OscillatorSpec};
use crate::presets::ChainTemplate;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkFile {
    #[serde(default)]
    oscillators: Vec<OscillatorEntry>,
    #[serde(default)]
    couplings: Vec<CouplingEntry>,
    #[serde(default)]
    baths: Vec<BathEntry>,
    chain: Option<ChainTemplate>,
    counting: Option<CountingEntry>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct OscillatorEntry {
    omega: f64,
    #[serde(default)]
    upsilon: [f64; 2],
    drive: Option<DriveEntry>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "lowercase")]
enum DriveKindEntry {
    Constant,
    Sinusoidal,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct DriveEntry {
    kind: DriveKindEntry,
    amplitude: f64,
    #[serde(default)]
    frequency: f64,
    #[serde(default)]
    phase: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct CouplingEntry {
    i: usize,
    j: usize,
    kind: String,
    g: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct BathEntry {
    label: String,
    oscillator: usize,
    gamma_down: Option<f64>,
    gamma_up: Option<f64>,
    gamma: Option<f64>,
    #[serde(rename = "T", alias = "temperature")]
    temperature: Option<f64>,
    #[serde(default)]
    lambda: [f64; 2],
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct CountingEntry {
    bath: String,
}

/// A parsed configuration file.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub network: NetworkSpec,
    pub counting: Option<CountingSpec>,
    /// Set when the file used the `chain` form; parameter sweeps need it.
    pub chain: Option<ChainTemplate>,
}

impl NetworkConfig {
    /// The counted bath: `bath` when given, else the file's `counting.bath`.
    pub fn counting_or(&self, bath: Option<&str>) -> Result<CountingSpec> {
        match (bath, &self.counting) {
            (Some(b), _) => Ok(CountingSpec::new(b)),
            (None, Some(c)) => Ok(c.clone()),
            (None, None) => Err(Error::Config("no counted bath: pass --bath or set counting.bath".into())),
        }
    }
}

pub fn parse(text: &str) -> Result<NetworkConfig> {
    let file: NetworkFile = serde_json::from_str(text)?;
    let network = match file.chain {
        Some(chain) => {
            if !(file.oscillators.is_empty() && file.couplings.is_empty() && file.baths.is_empty()) {
                return Err(Error::Config("`chain` cannot be combined with explicit oscillators, couplings or baths".into()));
            }
            chain.network()?
        }
        None => explicit_network(&file)?,
    };
    Ok(NetworkConfig {
        network,
        counting: file.counting.map(|c| CountingSpec::new(c.bath)),
        chain: file.chain,
    })
}

pub fn load(path: &Path) -> Result<NetworkConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse(&text)
}

fn explicit_network(file: &NetworkFile) -> Result<NetworkSpec> {
    let oscillators: Vec<OscillatorSpec> = file
        .oscillators
        .iter()
        .map(|o| OscillatorSpec {
            omega: o.omega,
            upsilon: Complex64::new(o.upsilon[0], o.upsilon[1]),
            drive: o.drive.as_ref().map(|d| DriveSpec {
                kind: match d.kind {
                    DriveKindEntry::Constant => DriveKind::Constant,
                    DriveKindEntry::Sinusoidal => DriveKind::Sinusoidal,
                },
                amplitude: d.amplitude,
                frequency: d.frequency,
                phase: d.phase,
            }),
        })
        .collect();
    let couplings = file
        .couplings
        .iter()
        .map(|c| {
            Ok(CouplingSpec {
                i: c.i,
                j: c.j,
                kind: c.kind.parse::<CouplingKind>()?,
                g: c.g,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let baths = file
        .baths
        .iter()
        .map(|b| bath(b, &oscillators))
        .collect::<Result<Vec<_>>>()?;
    Ok(NetworkSpec { oscillators, couplings, baths })
}

fn bath(entry: &BathEntry, oscillators: &[OscillatorSpec]) -> Result<BathSpec> {
    let mut spec = match (entry.gamma_down, entry.gamma_up, entry.gamma, entry.temperature) {
        (Some(down), Some(up), None, None) => BathSpec::new(&entry.label, entry.oscillator, down, up),
        (None, None, Some(gamma), Some(t)) => {
            let omega = oscillators
                .get(entry.oscillator)
                .ok_or_else(|| Error::Config(format!("bath `{}` is attached to missing oscillator {}", entry.label, entry.oscillator)))?
                .omega;
            BathSpec::thermal(&entry.label, entry.oscillator, gamma, t, omega)?
        }
        _ => {
            return Err(Error::Config(format!(
                "bath `{}` needs either gamma_down and gamma_up, or gamma and T",
                entry.label
            )))
        }
    };
    spec.lambda = Complex64::new(entry.lambda[0], entry.lambda[1]);
    Ok(spec)
}
