//! TOML run configuration and its validation.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use cbfed::noise::NoiseSpec;
use cbfed::solver::{FieldSource, TimeGrid};
use cbfed::stochastic::{BoundLevel, Method, StochasticRunConfig, StochasticSolver};
use cbfed::{FourierField, Grid, GridSpec, ModelParams};
use serde::{Deserialize, Serialize};

use crate::error::LabError;

/// Experiment selected by `kind`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    /// Deterministic run.
    Simulate,
    /// Feedback steering to a target.
    Steer,
    /// Open-loop control through `B = √Q`.
    ApproxControl,
    /// Noise statistics.
    OuCheck,
    /// Stochastic paths with both integrators.
    SdeRun,
    /// Monte Carlo moment bounds.
    SdeBounds,
    /// Hitting probabilities and shadowing.
    Irreducibility,
    /// Resolvent accessibility.
    Accessibility,
    /// Property suite.
    Invariants,
}

impl ExperimentKind {
    /// Kebab-case name.
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Simulate => "simulate",
            ExperimentKind::Steer => "steer",
            ExperimentKind::ApproxControl => "approx-control",
            ExperimentKind::OuCheck => "ou-check",
            ExperimentKind::SdeRun => "sde-run",
            ExperimentKind::SdeBounds => "sde-bounds",
            ExperimentKind::Irreducibility => "irreducibility",
            ExperimentKind::Accessibility => "accessibility",
            ExperimentKind::Invariants => "invariants",
        }
    }

    fn uses_noise(&self) -> bool {
        !matches!(self, ExperimentKind::Simulate | ExperimentKind::Steer)
    }
}

/// `[grid]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// Space dimension, 2 or 3.
    pub dim: usize,
    /// Fourier modes per direction.
    pub n: usize,
    /// Box side.
    pub length: f64,
    /// Oversampling factor of the physical grid.
    pub dealias: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            dim: 2,
            n: 64,
            length: 1.0,
            dealias: 1.5,
        }
    }
}

/// `[model]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Viscosity `μ`.
    pub mu: f64,
    /// Darcy coefficient `α`.
    pub alpha: f64,
    /// Forchheimer coefficient `β`.
    pub beta: f64,
    /// Secondary coefficient `γ`.
    pub gamma: f64,
    /// Absorption exponent `r`.
    pub r: f64,
    /// Secondary exponent `q`.
    pub q: f64,
    /// Include `B(y)`.
    pub convective: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let p = ModelParams::default();
        ModelConfig {
            mu: p.mu,
            alpha: p.alpha,
            beta: p.beta,
            gamma: p.gamma,
            r: p.r,
            q: p.q,
            convective: p.convective,
        }
    }
}

/// `[time]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeConfig {
    /// Horizon `T`.
    pub horizon: f64,
    /// Step.
    pub dt: f64,
    /// Snapshot stride; only initial and final states when absent.
    pub stride: Option<usize>,
}

impl Default for TimeConfig {
    fn default() -> Self {
        TimeConfig {
            horizon: 1.0,
            dt: 1e-3,
            stride: None,
        }
    }
}

/// `[noise]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// Smoothing exponent `ε` of `Q = σ²(I + A)^{-ε}`.
    pub eps_q: f64,
    /// Amplitude `σ`.
    pub amplitude: f64,
    /// Step of the Brownian path; defaults to `time.dt`.
    pub noise_dt: Option<f64>,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            eps_q: 2.5,
            amplitude: 1.0,
            noise_dt: None,
        }
    }
}

/// A field given in the configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FieldConfig {
    /// Zero field.
    Zero,
    /// Random smooth divergence-free field.
    RandomSmooth {
        /// Seed; derived from the master seed when absent.
        seed: Option<u64>,
        /// Spectral cutoff.
        #[serde(default = "default_kmax")]
        kmax: f64,
        /// `‖y‖_H`.
        #[serde(default = "default_one")]
        amplitude: f64,
    },
    /// `(a sin(2πm x₂/L), 0)`.
    Shear {
        /// Amplitude `a`.
        amplitude: f64,
        /// Wavenumber `m`.
        wavenumber: i32,
    },
    /// Endpoint `X(T)` of the configured stochastic system started from
    /// zero, on the given noise seed and path.
    ProcessSample {
        /// Noise seed of the sample.
        seed: u64,
        /// Path index.
        #[serde(default)]
        path: u64,
    },
    /// Binary snapshot written by a previous run.
    Snapshot {
        /// File path.
        path: PathBuf,
    },
}

fn default_kmax() -> f64 {
    4.0
}

fn default_one() -> f64 {
    1.0
}

/// `[steer]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SteerSection {
    /// `ρ = margin · ρ_min` unless `rho` is given.
    pub margin: f64,
    /// Explicit gain.
    pub rho: Option<f64>,
    /// Young parameter of the shift `κ`.
    pub eps_p31: f64,
    /// Tolerances of the approximate-control runs.
    pub eps_tol: Vec<f64>,
}

impl Default for SteerSection {
    fn default() -> Self {
        SteerSection {
            margin: cbfed::steering::DEFAULT_MARGIN,
            rho: None,
            eps_p31: 1.0,
            eps_tol: vec![1e-2, 1e-4],
        }
    }
}

/// `[monte_carlo]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonteCarloSection {
    /// Number of paths.
    pub paths: usize,
    /// Splitting parameter of the `r = 3` estimate.
    pub theta: f64,
    /// Integrators of `sde-run`.
    pub method: Method,
    /// Estimates checked by `sde-bounds`.
    pub levels: Vec<BoundLevel>,
    /// Step halvings of the `sde-run` refinement study.
    pub refinements: usize,
    /// Paths per level of the refinement study.
    pub refinement_paths: usize,
}

impl Default for MonteCarloSection {
    fn default() -> Self {
        MonteCarloSection {
            paths: 200,
            theta: 0.5,
            method: Method::Both,
            levels: vec![BoundLevel::H, BoundLevel::V],
            refinements: 3,
            refinement_paths: 8,
        }
    }
}

/// `[irreducibility]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IrreducibilitySection {
    /// Radii as multiples of `‖x - x₁‖_H`.
    pub radius_factors: Vec<f64>,
    /// Absolute radii; override `radius_factors`.
    pub radii: Option<Vec<f64>>,
    /// Run the shadowing experiment too.
    pub shadowing: bool,
    /// Resolvent parameters.
    pub lambdas: Vec<f64>,
    /// Quadrature nodes of the resolvent.
    pub points: usize,
    /// Samples of the covariance-identity check.
    pub nondegeneracy_samples: usize,
}

impl Default for IrreducibilitySection {
    fn default() -> Self {
        IrreducibilitySection {
            radius_factors: vec![0.5, 1.0],
            radii: None,
            shadowing: false,
            lambdas: vec![8.0, 16.0, 32.0],
            points: 16,
            nondegeneracy_samples: 4000,
        }
    }
}

/// `[ou_check]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OuCheckSection {
    /// Modes tested for the stationary variance.
    pub modes: usize,
    /// Samples per test.
    pub samples: usize,
    /// Paths of the sup statistic.
    pub sup_paths: usize,
}

impl Default for OuCheckSection {
    fn default() -> Self {
        OuCheckSection {
            modes: 20,
            samples: 10_000,
            sup_paths: 100,
        }
    }
}

/// Whole configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Experiment.
    pub kind: ExperimentKind,
    /// Master seed; every random quantity derives from it.
    #[serde(default)]
    pub seed: u64,
    /// Output directory.
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Grid.
    #[serde(default)]
    pub grid: GridConfig,
    /// Model parameters.
    #[serde(default)]
    pub model: ModelConfig,
    /// Time grid.
    #[serde(default)]
    pub time: TimeConfig,
    /// Noise.
    #[serde(default)]
    pub noise: NoiseConfig,
    /// Initial state; random smooth by default.
    #[serde(default)]
    pub initial: Option<FieldConfig>,
    /// Target state; random smooth by default.
    #[serde(default)]
    pub target: Option<FieldConfig>,
    /// Constant-in-time forcing; zero by default.
    #[serde(default)]
    pub forcing: Option<FieldConfig>,
    /// Steering.
    #[serde(default)]
    pub steer: SteerSection,
    /// Monte Carlo.
    #[serde(default)]
    pub monte_carlo: MonteCarloSection,
    /// Irreducibility and accessibility.
    #[serde(default)]
    pub irreducibility: IrreducibilitySection,
    /// Noise statistics.
    #[serde(default)]
    pub ou_check: OuCheckSection,
}

/// Seed offsets of the derived field seeds.
pub(crate) const INITIAL_SEED_SALT: u64 = 0x1;
pub(crate) const TARGET_SEED_SALT: u64 = 0x2;
pub(crate) const FORCING_SEED_SALT: u64 = 0x3;

impl RunConfig {
    /// Parses TOML text.
    pub fn from_toml(text: &str) -> Result<Self, LabError> {
        toml::from_str(text).map_err(|e| LabError::Schema(e.to_string()))
    }

    /// Reads and parses a file.
    pub fn from_file(path: &Path) -> Result<Self, LabError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LabError::Schema(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Serializes back to TOML.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is serializable")
    }

    /// Resolves every field, checks cross-field admissibility and returns
    /// the ready-to-run setup.
    pub fn prepare(&self) -> Result<Prepared, LabError> {
        let spec = GridSpec::with_dealias(self.grid.dim, self.grid.n, self.grid.length, self.grid.dealias)
            .map_err(LabError::schema)?;
        let grid = Grid::new(spec).map_err(LabError::schema)?;
        let m = &self.model;
        let params = ModelParams::new(m.mu, m.alpha, m.beta, m.gamma, m.r, m.q)
            .map_err(LabError::schema)?
            .with_convection(m.convective);
        let mut tg = TimeGrid::new(self.time.horizon, self.time.dt).map_err(LabError::schema)?;
        if let Some(s) = self.time.stride {
            tg = tg.with_stride(s).map_err(LabError::schema)?;
        }
        let noise = NoiseSpec::new(self.noise.eps_q, self.seed)
            .map_err(LabError::schema)?
            .with_amplitude(self.noise.amplitude);
        noise.validate().map_err(LabError::schema)?;
        if self.kind.uses_noise() && !noise.trace_q_admissible(self.grid.dim) {
            return Err(LabError::Schema(format!(
                "noise.eps_q = {} must exceed d/2 = {}",
                noise.eps_q,
                self.grid.dim as f64 / 2.0
            )));
        }
        if self.kind == ExperimentKind::SdeBounds && self.monte_carlo.levels.contains(&BoundLevel::V) {
            noise.require_trace_aq(self.grid.dim).map_err(LabError::schema)?;
        }
        if !(self.monte_carlo.theta > 0.0 && self.monte_carlo.theta < 1.0) {
            return Err(LabError::Schema("monte_carlo.theta must lie in (0, 1)".into()));
        }
        if self.steer.eps_tol.iter().any(|e| !(*e > 0.0)) {
            return Err(LabError::Schema("steer.eps_tol entries must be positive".into()));
        }
        if let Some(dtn) = self.noise.noise_dt {
            if !(dtn > 0.0) {
                return Err(LabError::Schema("noise.noise_dt must be positive".into()));
            }
        }
        let mut prepared = Prepared {
            config: self.clone(),
            params,
            time_grid: tg,
            noise,
            initial: FourierField::zeros(&grid),
            target: None,
            forcing: FieldSource::Zero,
            grid,
        };
        let default_initial = FieldConfig::RandomSmooth {
            seed: None,
            kmax: default_kmax(),
            amplitude: 1.0,
        };
        prepared.initial = prepared.field(self.initial.as_ref().unwrap_or(&default_initial), INITIAL_SEED_SALT)?;
        let target_cfg = self.target.clone().unwrap_or(FieldConfig::RandomSmooth {
            seed: None,
            kmax: default_kmax(),
            amplitude: 1.0,
        });
        prepared.target = Some(prepared.field(&target_cfg, TARGET_SEED_SALT)?);
        if let Some(f) = &self.forcing {
            let f = prepared.field(f, FORCING_SEED_SALT)?;
            prepared.forcing = FieldSource::constant(&f);
        }
        Ok(prepared)
    }
}

/// Resolved configuration.
#[derive(Debug, Clone)]
pub struct Prepared {
    /// Source configuration.
    pub config: RunConfig,
    /// Grid.
    pub grid: Arc<Grid>,
    /// Validated parameters.
    pub params: ModelParams,
    /// Time grid.
    pub time_grid: TimeGrid,
    /// Noise with the master seed.
    pub noise: NoiseSpec,
    /// Initial state.
    pub initial: FourierField,
    /// Target state.
    pub target: Option<FourierField>,
    /// Forcing.
    pub forcing: FieldSource,
}

impl Prepared {
    /// Field seed derived from the master seed.
    pub fn derived_seed(&self, salt: u64) -> u64 {
        self.config
            .seed
            .wrapping_mul(0x9e37_79b9_7f4a_7c15)
            .wrapping_add(salt)
    }

    fn field(&self, cfg: &FieldConfig, salt: u64) -> Result<FourierField, LabError> {
        let g = &self.grid;
        let f = match cfg {
            FieldConfig::Zero => FourierField::zeros(g),
            FieldConfig::RandomSmooth { seed, kmax, amplitude } => {
                if !(*kmax > 0.0 && *amplitude >= 0.0) {
                    return Err(LabError::Schema("random-smooth needs kmax > 0, amplitude >= 0".into()));
                }
                let s = seed.unwrap_or_else(|| self.derived_seed(salt));
                FourierField::random_smooth(g, s, *kmax, *amplitude)
            }
            FieldConfig::Shear { amplitude, wavenumber } => {
                FourierField::shear(g, *amplitude, *wavenumber).map_err(LabError::schema)?
            }
            FieldConfig::ProcessSample { seed, path } => {
                let noise = self.noise.with_seed(*seed);
                if !noise.trace_q_admissible(g.dim()) {
                    return Err(LabError::Schema("process-sample needs eps_q > d/2".into()));
                }
                let solver = StochasticSolver::new(StochasticRunConfig {
                    x0: FourierField::zeros(g),
                    forcing: FieldSource::Zero,
                    time_grid: self.time_grid,
                    params: self.params,
                    noise,
                    noise_dt: self.config.noise.noise_dt,
                })
                .map_err(LabError::schema)?;
                solver.solve_direct(*path).map_err(LabError::Model)?.0.final_state
            }
            FieldConfig::Snapshot { path } => {
                let file = std::fs::File::open(path)
                    .map_err(|e| LabError::Schema(format!("cannot open {}: {e}", path.display())))?;
                FourierField::read_snapshot(g, std::io::BufReader::new(file)).map_err(LabError::schema)?
            }
        };
        Ok(f.leray_project())
    }

    /// Stochastic solver from the initial state.
    pub fn stochastic(&self) -> Result<StochasticSolver, LabError> {
        self.stochastic_with(self.time_grid, self.config.noise.noise_dt)
    }

    /// Stochastic solver on another time grid and Brownian step.
    pub fn stochastic_with(&self, tg: TimeGrid, noise_dt: Option<f64>) -> Result<StochasticSolver, LabError> {
        StochasticSolver::new(StochasticRunConfig {
            x0: self.initial.clone(),
            forcing: self.forcing.clone(),
            time_grid: tg,
            params: self.params,
            noise: self.noise,
            noise_dt,
        })
        .map_err(LabError::schema)
    }

    /// Target, which is always resolved.
    pub fn target(&self) -> &FourierField {
        self.target.as_ref().expect("target is resolved in prepare")
    }
}
