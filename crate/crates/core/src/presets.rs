//! Chain-shaped networks with one bath at each end, and the named presets
//! built from them.

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::ldf::linspace;
use crate::model::{BathSpec, CountingSpec, CouplingKind, CouplingSpec, NetworkSpec, OscillatorSpec};

/// Coupling shape along a chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChainKind {
    /// Excitation-conserving hopping `g(a_i a_j† + h.c.)`.
    Rw,
    /// Two-mode squeezing `g(a_i a_j + h.c.)`.
    Opo,
    /// Relative-distance coupling `(g/2)(x_i − x_j)²`.
    ///
    /// Expanding the square shifts each oscillator to `ω + k g` and adds
    /// single-mode squeezing `k g / 2`, `k` being its number of bonds,
    /// on top of a position–position coupling `−g`.
    #[serde(alias = "x-x")]
    Xx,
}

impl std::str::FromStr for ChainKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rw" => Ok(ChainKind::Rw),
            "opo" => Ok(ChainKind::Opo),
            "xx" | "x-x" => Ok(ChainKind::Xx),
            other => Err(Error::Config(format!("unknown chain kind `{other}` (rw, opo, xx)"))),
        }
    }
}

/// `n` identical oscillators in a line, thermal baths `"1"` on the first and
/// `"2"` on the last, at temperatures `t1` and `t1 + delta_t`. A single
/// oscillator carries both baths.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainTemplate {
    pub n: usize,
    pub kind: ChainKind,
    pub g: f64,
    pub gamma: f64,
    pub t1: f64,
    #[serde(default = "one")]
    pub delta_t: f64,
    #[serde(default = "one")]
    pub omega: f64,
}

fn one() -> f64 {
    1.0
}

impl ChainTemplate {
    pub fn new(n: usize, kind: ChainKind, g: f64, gamma: f64, t1: f64) -> Self {
        ChainTemplate {
            n,
            kind,
            g,
            gamma,
            t1,
            delta_t: 1.0,
            omega: 1.0,
        }
    }

    pub fn t2(&self) -> f64 {
        self.t1 + self.delta_t
    }

    /// `1/T₁`, the scale the `s` axis is normalized by.
    pub fn s_c(&self) -> f64 {
        1.0 / self.t1
    }

    pub fn with(&self, param: SweepParam, value: f64) -> Self {
        let mut t = *self;
        match param {
            SweepParam::T1 => t.t1 = value,
            SweepParam::G => t.g = value,
            SweepParam::Gamma => t.gamma = value,
        }
        t
    }

    pub fn network(&self) -> Result<NetworkSpec> {
        if self.n == 0 {
            return Err(Error::Config("a chain needs at least one oscillator".into()));
        }
        let n = self.n;
        let mut oscillators = vec![OscillatorSpec::new(self.omega); n];
        let kind = match self.kind {
            ChainKind::Rw => CouplingKind::Rw,
            ChainKind::Opo => CouplingKind::Opo,
            ChainKind::Xx => CouplingKind::Xx,
        };
        let g = if self.kind == ChainKind::Xx { -self.g } else { self.g };
        let couplings: Vec<_> = (0..n.saturating_sub(1))
            .map(|i| CouplingSpec { i, j: i + 1, kind, g })
            .collect();
        if self.kind == ChainKind::Xx {
            for (i, o) in oscillators.iter_mut().enumerate() {
                let bonds = usize::from(i > 0) + usize::from(i + 1 < n);
                let shift = bonds as f64 * self.g;
                o.omega += shift;
                o.upsilon = num_complex::Complex64::new(shift / 2.0, 0.0);
            }
        }
        let baths = vec![
            BathSpec::thermal("1", 0, self.gamma, self.t1, self.omega)?,
            BathSpec::thermal("2", n - 1, self.gamma, self.t2(), self.omega)?,
        ];
        Ok(NetworkSpec {
            oscillators,
            couplings,
            baths,
        })
    }
}

/// Parameter varied along a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    T1,
    G,
    Gamma,
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "t1" => Ok(SweepParam::T1),
            "g" => Ok(SweepParam::G),
            "gamma" => Ok(SweepParam::Gamma),
            other => Err(Error::Config(format!("unknown sweep parameter `{other}` (T1, g, gamma)"))),
        }
    }
}

/// One data file of a preset.
#[derive(Debug, Clone, PartialEq)]
pub enum Job {
    /// `θ` over `s ∈ [lo, hi]·s_c` with `points` samples.
    Curve {
        template: ChainTemplate,
        bath: &'static str,
        lo: f64,
        hi: f64,
        points: usize,
    },
    Sweep {
        template: ChainTemplate,
        bath: &'static str,
        param: SweepParam,
        values: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PresetOutput {
    pub file: String,
    pub job: Job,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub description: &'static str,
    pub outputs: Vec<PresetOutput>,
}

pub const PRESET_NAMES: [&str; 7] = ["fig1", "fig2", "fig3", "fig4", "fig5", "fig6", "gamma-map"];

fn curve(file: String, template: ChainTemplate, bath: &'static str) -> PresetOutput {
    PresetOutput {
        file,
        job: Job::Curve {
            template,
            bath,
            lo: -1.5,
            hi: 1.5,
            points: 201,
        },
    }
}

fn sweep(file: String, template: ChainTemplate, bath: &'static str, param: SweepParam, values: Vec<f64>) -> PresetOutput {
    PresetOutput {
        file,
        job: Job::Sweep {
            template,
            bath,
            param,
            values,
        },
    }
}

/// Compact decimal label for file names: `0.5 → 0.5`, `10 → 10`.
fn tag(v: f64) -> String {
    format!("{v}")
}

pub fn preset(name: &str) -> Result<Preset> {
    let temps = linspace(0.5, 5.0, 10);
    let p = match name {
        "fig1" => Preset {
            name: "fig1",
            description: "θ₁(s) for an rw chain of 10 oscillators, T₁ ∈ {0.5, 1, 5}",
            outputs: [0.5, 1.0, 5.0]
                .iter()
                .map(|&t| curve(format!("theta_T1_{}.csv", tag(t)), ChainTemplate::new(10, ChainKind::Rw, 0.1, 0.1, t), "1"))
                .collect(),
        },
        "fig2" => Preset {
            name: "fig2",
            description: "symmetry points of both baths vs T₁ for the rw chain of 10",
            outputs: ["1", "2"]
                .iter()
                .map(|&b| {
                    sweep(
                        format!("sweep_bath{b}.csv"),
                        ChainTemplate::new(10, ChainKind::Rw, 0.1, 0.1, 0.5),
                        b,
                        SweepParam::T1,
                        temps.clone(),
                    )
                })
                .collect(),
        },
        "fig3" => {
            let base = ChainTemplate::new(2, ChainKind::Opo, 0.1, 0.1, 0.5);
            let mut outputs: Vec<_> = ["1", "2"]
                .iter()
                .map(|&b| sweep(format!("sweep_bath{b}.csv"), base, b, SweepParam::T1, temps.clone()))
                .collect();
            outputs.extend(
                [0.5, 1.0, 5.0]
                    .iter()
                    .map(|&t| curve(format!("theta_T1_{}.csv", tag(t)), base.with(SweepParam::T1, t), "1")),
            );
            Preset {
                name: "fig3",
                description: "opo pair: θ₁(s) curves and symmetry points vs T₁",
                outputs,
            }
        }
        "fig4" => Preset {
            name: "fig4",
            description: "θ₁(s) for the x-x pair at T₁ = 10, g ∈ {0.1, 1, 10, 100}",
            outputs: [0.1, 1.0, 10.0, 100.0]
                .iter()
                .map(|&g| curve(format!("theta_g_{}.csv", tag(g)), ChainTemplate::new(2, ChainKind::Xx, g, 0.1, 10.0), "1"))
                .collect(),
        },
        "fig5" => Preset {
            name: "fig5",
            description: "x-x pair symmetry point vs T₁ for g ∈ {0.1, 1, 10, 100}, with the rw reference",
            outputs: {
                let t_values = linspace(0.5, 10.0, 20);
                let mut out: Vec<_> = [0.1, 1.0, 10.0, 100.0]
                    .iter()
                    .map(|&g| {
                        sweep(
                            format!("sweep_g_{}.csv", tag(g)),
                            ChainTemplate::new(2, ChainKind::Xx, g, 0.1, 0.5),
                            "1",
                            SweepParam::T1,
                            t_values.clone(),
                        )
                    })
                    .collect();
                out.push(sweep(
                    "sweep_rw.csv".into(),
                    ChainTemplate::new(2, ChainKind::Rw, 0.1, 0.1, 0.5),
                    "1",
                    SweepParam::T1,
                    t_values,
                ));
                out
            },
        },
        "fig6" => Preset {
            name: "fig6",
            description: "x-x pair (g = 0.2) symmetry point vs T₁ for γ ∈ {0.1, 0.5, 1, 2, 10}",
            outputs: [0.1, 0.5, 1.0, 2.0, 10.0]
                .iter()
                .map(|&gamma| {
                    sweep(
                        format!("sweep_gamma_{}.csv", tag(gamma)),
                        ChainTemplate::new(2, ChainKind::Xx, 0.2, gamma, 0.5),
                        "1",
                        SweepParam::T1,
                        linspace(0.5, 10.0, 20),
                    )
                })
                .collect(),
        },
        "gamma-map" => {
            // log-spaced damping from 1e-3 to 1e2
            let gammas: Vec<f64> = (0..=50).map(|k| 10f64.powf(-3.0 + 5.0 * k as f64 / 50.0)).collect();
            let base = ChainTemplate::new(2, ChainKind::Xx, 0.2, 0.1, 10.0);
            let mut outputs = vec![sweep("sweep_gamma.csv".into(), base, "1", SweepParam::Gamma, gammas)];
            outputs.extend(
                [1e-3, 1e-2, 0.1, 1.0, 10.0, 100.0]
                    .iter()
                    .map(|&gamma| curve(format!("theta_gamma_{}.csv", tag(gamma)), base.with(SweepParam::Gamma, gamma), "1")),
            );
            Preset {
                name: "gamma-map",
                description: "x-x pair at T₁ = 10, g = 0.2: symmetry point and θ₁(s) across γ",
                outputs,
            }
        }
        other => {
            return Err(Error::Config(format!(
                "unknown preset `{other}` (available: {})",
                PRESET_NAMES.join(", ")
            )))
        }
    };
    Ok(p)
}

/// Network and counting bath for one template.
pub fn instance(template: &ChainTemplate, bath: &str) -> Result<(NetworkSpec, CountingSpec)> {
    Ok((template.network()?, CountingSpec::new(bath)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phasespace::assemble_drift;

    #[test]
    fn rw_chain_layout() {
        let net = ChainTemplate::new(4, ChainKind::Rw, 0.1, 0.1, 1.0).network().unwrap();
        assert_eq!(net.len(), 4);
        assert_eq!(net.couplings.len(), 3);
        assert_eq!(net.baths[0].oscillator, 0);
        assert_eq!(net.baths[1].oscillator, 3);
    }

    #[test]
    fn single_oscillator_carries_both_baths() {
        let net = ChainTemplate::new(1, ChainKind::Rw, 0.0, 0.1, 0.5).network().unwrap();
        assert!(net.couplings.is_empty());
        assert_eq!(net.baths.len(), 2);
        assert!(net.baths.iter().all(|b| b.oscillator == 0));
    }

    #[test]
    fn relative_distance_pair_drift() {
        let g = 10.0;
        let net = ChainTemplate::new(2, ChainKind::Xx, g, 0.1, 10.0).network().unwrap();
        let a = assemble_drift(&net).unwrap();
        assert_eq!(a[(0, 1)], -1.0);
        assert_eq!(a[(1, 0)], 1.0 + 2.0 * g);
        assert_eq!(a[(1, 2)], -2.0 * g);
        assert_eq!(a[(3, 0)], -2.0 * g);
    }

    #[test]
    fn relative_distance_chain_counts_bonds() {
        let net = ChainTemplate::new(3, ChainKind::Xx, 0.5, 0.1, 1.0).network().unwrap();
        assert_eq!(net.oscillators[0].omega, 1.5);
        assert_eq!(net.oscillators[1].omega, 2.0);
        assert_eq!(net.oscillators[1].upsilon.re, 0.5);
    }

    #[test]
    fn every_preset_builds() {
        for name in PRESET_NAMES {
            let p = preset(name).unwrap();
            assert!(!p.outputs.is_empty());
            for out in &p.outputs {
                let template = match &out.job {
                    Job::Curve { template, .. } | Job::Sweep { template, .. } => template,
                };
                template.network().unwrap();
            }
        }
        assert!(preset("fig9").is_err());
    }

    #[test]
    fn template_from_json() {
        let t: ChainTemplate = serde_json::from_str(r#"{"n": 2, "kind": "x-x", "g": 1, "gamma": 0.1, "t1": 10}"#).unwrap();
        assert_eq!(t.kind, ChainKind::Xx);
        assert_eq!(t.delta_t, 1.0);
        assert!(serde_json::from_str::<ChainTemplate>(r#"{"n": 2, "kind": "rw", "g": 1, "gamma": 0.1, "t1": 1, "x": 0}"#).is_err());
    }
}
