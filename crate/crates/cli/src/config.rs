//! Run configuration: a single TOML file validated in full before any
//! computation starts. Validation errors name the offending field path.

use causalqm::marginal_chain::{ChainVariant, Sign, SignVector};
use causalqm::velocity_solver::{GaugeSpec, WSolveMethod};
use causalqm::wavepacket::{GaussianTerm, PotentialKind, PotentialSpec, WavefunctionSpec};
use causalqm::GridSpec;
use num_complex::Complex64;
use serde::Deserialize;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridSection,
    pub wavefunction: WavefunctionSection,
    pub potential: PotentialSection,
    #[serde(default)]
    pub chain: ChainSection,
    #[serde(default)]
    pub solver: SolverSection,
    pub time: TimeSection,
    pub ensemble: EnsembleSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub tolerances: ToleranceSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub points: Vec<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WavefunctionSection {
    pub kind: String,
    pub terms: Vec<TermSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermSection {
    pub center: Vec<f64>,
    pub sigma: Vec<f64>,
    #[serde(default)]
    pub wavenumber: Option<Vec<f64>>,
    #[serde(default)]
    pub correlation: f64,
    #[serde(default = "default_coefficient")]
    pub coefficient: [f64; 2],
}

fn default_coefficient() -> [f64; 2] {
    [1.0, 0.0]
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialSection {
    pub kind: String,
    pub masses: Vec<f64>,
    #[serde(default)]
    pub omega: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSection {
    #[serde(default = "default_variant")]
    pub variant: String,
    #[serde(default)]
    pub signs: Option<Vec<i8>>,
}

impl Default for ChainSection {
    fn default() -> Self {
        Self {
            variant: default_variant(),
            signs: None,
        }
    }
}

fn default_variant() -> String {
    "forward".into()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(default = "default_gauge")]
    pub gauge: String,
    #[serde(default)]
    pub gauge_g: Option<Vec<f64>>,
    #[serde(default)]
    pub gauge_h: Option<Vec<f64>>,
    #[serde(default = "default_method")]
    pub method: String,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            gauge: default_gauge(),
            gauge_g: None,
            gauge_h: None,
            method: default_method(),
        }
    }
}

fn default_gauge() -> String {
    "zero".into()
}

fn default_method() -> String {
    "least-squares".into()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    pub dt_evolve: f64,
    pub snapshot_stride: usize,
    pub snapshots: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSection {
    pub particles: usize,
    pub seed: u64,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_out_dir")]
    pub directory: String,
}

fn default_out_dir() -> String {
    "out".into()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceSection {
    #[serde(default = "default_verify_samples")]
    pub verify_samples: usize,
}

impl Default for ToleranceSection {
    fn default() -> Self {
        Self {
            verify_samples: default_verify_samples(),
        }
    }
}

fn default_verify_samples() -> usize {
    100_000
}

/// Everything the commands need, converted to core types and validated.
pub struct Resolved {
    pub grid: GridSpec,
    pub spec: WavefunctionSpec,
    pub potential: PotentialSpec,
    pub variant: ChainVariant,
    pub signs: SignVector,
    pub gauge: GaugeSpec,
    pub method: WSolveMethod,
    pub dt_evolve: f64,
    pub stride: usize,
    pub snapshots: usize,
    pub particles: usize,
    pub seed: u64,
    pub out_dir: String,
    pub verify_samples: usize,
}

impl RunConfig {
    pub fn resolve(&self) -> Result<Resolved, String> {
        let n = self.grid.points.len();
        if n == 0 || n > 2 {
            return Err(format!("grid.points: expected 1 or 2 axes, got {n}"));
        }
        if self.grid.lo.len() != n || self.grid.hi.len() != n {
            return Err("grid.lo/grid.hi: length must match grid.points".into());
        }
        let axes = (0..n)
            .map(|a| causalqm::AxisSpec::new(self.grid.lo[a], self.grid.hi[a], self.grid.points[a]))
            .collect();
        let grid = GridSpec::new(axes).map_err(|e| e.to_string())?;

        let terms: Vec<GaussianTerm> = self
            .wavefunction
            .terms
            .iter()
            .enumerate()
            .map(|(i, t)| {
                for (a, &s) in t.sigma.iter().enumerate() {
                    if !(s > 0.0) {
                        return Err(format!(
                            "wavefunction.terms[{i}].sigma[{a}]: must be positive, got {s}"
                        ));
                    }
                }
                Ok(GaussianTerm {
                    center: t.center.clone(),
                    sigma: t.sigma.clone(),
                    wavenumber: t.wavenumber.clone().unwrap_or_else(|| vec![0.0; n]),
                    correlation: t.correlation,
                    coefficient: Complex64::new(t.coefficient[0], t.coefficient[1]),
                })
            })
            .collect::<Result<_, String>>()?;
        let spec = match self.wavefunction.kind.as_str() {
            "gaussian" => {
                if terms.len() != 1 {
                    return Err(format!(
                        "wavefunction.kind: gaussian expects exactly one term, got {}",
                        terms.len()
                    ));
                }
                WavefunctionSpec::Gaussian(terms.into_iter().next().unwrap())
            }
            "superposition" => WavefunctionSpec::Superposition(terms),
            other => {
                return Err(format!(
                    "wavefunction.kind: unknown kind {other:?} (gaussian | superposition)"
                ))
            }
        };
        spec.validate(n).map_err(|e| e.to_string())?;

        let kind = match self.potential.kind.as_str() {
            "free" => PotentialKind::Free,
            "harmonic" => {
                let omega = self
                    .potential
                    .omega
                    .clone()
                    .ok_or("potential.omega: required for the harmonic potential")?;
                PotentialKind::Harmonic { omega }
            }
            other => {
                return Err(format!(
                    "potential.kind: unknown kind {other:?} (free | harmonic)"
                ))
            }
        };
        let potential = PotentialSpec {
            kind,
            masses: self.potential.masses.clone(),
        };
        potential.validate(&grid).map_err(|e| e.to_string())?;

        let variant = ChainVariant::parse(&self.chain.variant).ok_or(format!(
            "chain.variant: unknown variant {:?} (forward | centered | reversed)",
            self.chain.variant
        ))?;
        let signs = match &self.chain.signs {
            None => SignVector::plus(n),
            Some(raw) => {
                if raw.len() != n {
                    return Err(format!(
                        "chain.signs: expected {n} entries, got {}",
                        raw.len()
                    ));
                }
                SignVector(
                    raw.iter()
                        .map(|&v| match v {
                            1 => Ok(Sign::Plus),
                            -1 => Ok(Sign::Minus),
                            other => Err(format!("chain.signs: entries must be ±1, got {other}")),
                        })
                        .collect::<Result<_, String>>()?,
                )
            }
        };

        let gauge = match self.solver.gauge.as_str() {
            "zero" => GaugeSpec::Zero,
            "tabulated" => {
                let g = self
                    .solver
                    .gauge_g
                    .clone()
                    .ok_or("solver.gauge_g: required for the tabulated gauge")?;
                let h = self
                    .solver
                    .gauge_h
                    .clone()
                    .ok_or("solver.gauge_h: required for the tabulated gauge")?;
                if g.len() != h.len() || g.is_empty() {
                    return Err("solver.gauge_g/gauge_h: must be equal-length, nonempty".into());
                }
                if g.windows(2).any(|w| w[1] <= w[0]) {
                    return Err("solver.gauge_g: must be strictly increasing".into());
                }
                GaugeSpec::Table { g, h }
            }
            other => {
                return Err(format!(
                    "solver.gauge: unknown selector {other:?} (zero | tabulated)"
                ))
            }
        };
        let method = match self.solver.method.as_str() {
            "least-squares" => WSolveMethod::LeastSquares,
            "characteristics" => WSolveMethod::Characteristics,
            other => {
                return Err(format!(
                    "solver.method: unknown method {other:?} (least-squares | characteristics)"
                ))
            }
        };

        if !(self.time.dt_evolve > 0.0) {
            return Err(format!(
                "time.dt_evolve: must be positive, got {}",
                self.time.dt_evolve
            ));
        }
        if self.time.snapshot_stride == 0 {
            return Err("time.snapshot_stride: must be at least 1".into());
        }
        if self.ensemble.particles == 0 {
            return Err("ensemble.particles: must be at least 1".into());
        }

        Ok(Resolved {
            grid,
            spec,
            potential,
            variant,
            signs,
            gauge,
            method,
            dt_evolve: self.time.dt_evolve,
            stride: self.time.snapshot_stride,
            snapshots: self.time.snapshots,
            particles: self.ensemble.particles,
            seed: self.ensemble.seed,
            out_dir: self.output.directory.clone(),
            verify_samples: self.tolerances.verify_samples,
        })
    }
}

/// FNV-1a over the raw config bytes: byte-identical configs hash equal, and
/// the hash rides along in every output file.
pub fn config_hash(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x1000_0000_01b3);
    }
    h
}
