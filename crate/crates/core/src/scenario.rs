//! Scenario configuration: the TOML schema the CLI consumes, its defaults,
//! and the conversion into the typed specs of the library.

use std::path::Path;

use serde::Deserialize;

use crate::control::{build_controlled_system, ControlledSystem, PlantSpec};
use crate::error::Error;
use crate::expr::{Expression, Var};
use crate::manifold::{
    default_h_rows, default_projections, HRows, ManifoldSpec,
};
use crate::nlinalg::Vector;
use crate::sim::{JumpMeasureConfig, MarkDistribution, SimConfig};
use crate::synthesis::SynthesizedSystem;
use crate::verify::{Perturbation, PerturbationTarget, ResidualTolerances};

/// The bundled example scenario, also shipped as
/// `crates/core/scenarios/paper-example.toml`.
pub const PAPER_EXAMPLE_TOML: &str = include_str!("../scenarios/paper-example.toml");

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub manifold: ManifoldSection,
    pub plant: PlantSection,
    pub initial: InitialSection,
    #[serde(default)]
    pub jumps: JumpsSection,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub residuals: ResidualSection,
    #[serde(default)]
    pub perturbation: Option<PerturbationSection>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifoldSection {
    pub n: usize,
    pub m: usize,
    pub u: String,
    /// n-2 diffusion determinant functions; omit for coordinate defaults.
    #[serde(default)]
    pub f: Option<Vec<String>>,
    /// n-1 drift determinant potentials (exclusive with `h_rows`).
    #[serde(default)]
    pub h: Option<Vec<String>>,
    /// n-1 raw drift determinant rows, n+1 entries each, time entry first.
    #[serde(default)]
    pub h_rows: Option<Vec<Vec<String>>>,
    /// n-2 jump ODE functions; omit for coordinate defaults.
    #[serde(default)]
    pub phi: Option<Vec<String>>,
    /// m diffusion scales; omit for all-ones.
    #[serde(default)]
    pub q00: Option<Vec<String>>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSection {
    pub p: Vec<String>,
    pub q: Vec<Vec<String>>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    pub t0: f64,
    pub x0: Vec<f64>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JumpsSection {
    pub lambda: f64,
    pub mark: MarkSection,
}

impl Default for JumpsSection {
    fn default() -> Self {
        Self {
            lambda: 2.0,
            mark: MarkSection::Uniform { a: 0.0, b: 1.0 },
        }
    }
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(tag = "dist", rename_all = "lowercase", deny_unknown_fields)]
pub enum MarkSection {
    Uniform { a: f64, b: f64 },
    Exponential { rate: f64 },
    Degenerate { value: f64 },
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub dt: f64,
    pub horizon: f64,
    pub paths: u64,
    pub seed: u64,
    #[serde(default = "default_stride")]
    pub record_stride: u64,
}

fn default_stride() -> u64 {
    10
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            horizon: 1.0,
            paths: 256,
            seed: 42,
            record_stride: 10,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResidualSection {
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_t_range")]
    pub t_range: (f64, f64),
    /// One (lo, hi) range per state coordinate.
    #[serde(default = "default_x_box")]
    pub x_box: Vec<(f64, f64)>,
    #[serde(default = "default_gamma_grid")]
    pub gamma_grid: Vec<f64>,
    #[serde(default = "default_ode_tol")]
    pub ode_tol: f64,
    #[serde(default = "default_tol_wiener")]
    pub tol_wiener: f64,
    #[serde(default = "default_tol_drift")]
    pub tol_drift: f64,
    #[serde(default = "default_tol_jump")]
    pub tol_jump: f64,
    #[serde(default = "default_tol_generator")]
    pub tol_generator: f64,
}

fn default_samples() -> usize {
    1000
}
fn default_t_range() -> (f64, f64) {
    (0.0, 1.0)
}
fn default_x_box() -> Vec<(f64, f64)> {
    vec![(-1.0, 1.0), (0.1, 3.0)]
}
fn default_gamma_grid() -> Vec<f64> {
    (0..=10).map(|i| 0.5 * i as f64).collect()
}
fn default_ode_tol() -> f64 {
    1e-10
}
fn default_tol_wiener() -> f64 {
    1e-9
}
fn default_tol_drift() -> f64 {
    1e-5
}
fn default_tol_jump() -> f64 {
    1e-7
}
fn default_tol_generator() -> f64 {
    1e-4
}

impl Default for ResidualSection {
    fn default() -> Self {
        Self {
            samples: default_samples(),
            t_range: default_t_range(),
            x_box: default_x_box(),
            gamma_grid: default_gamma_grid(),
            ode_tol: default_ode_tol(),
            tol_wiener: default_tol_wiener(),
            tol_drift: default_tol_drift(),
            tol_jump: default_tol_jump(),
            tol_generator: default_tol_generator(),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationSection {
    /// "drift" | "diffusion" | "jump"
    pub target: String,
    /// 1-based state component.
    pub component: usize,
    /// 1-based Wiener column; required for "diffusion".
    #[serde(default)]
    pub column: Option<usize>,
    pub epsilon: f64,
}

/// Residual sampling settings resolved from the config.
#[derive(Clone, Debug)]
pub struct ResidualSettings {
    pub samples: usize,
    pub t_range: (f64, f64),
    pub x_box: Vec<(f64, f64)>,
    pub gamma_grid: Vec<f64>,
    pub ode_tol: f64,
    pub tolerances: ResidualTolerances,
}

/// A fully resolved scenario: typed specs ready for synthesis, control,
/// verification, and simulation.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub manifold: ManifoldSpec,
    pub plant: PlantSpec,
    pub t0: f64,
    pub x0: Vector,
    pub jump_measure: JumpMeasureConfig,
    pub sim: SimConfig,
    pub residuals: ResidualSettings,
    pub perturbation: Option<Perturbation>,
}

impl ScenarioConfig {
    /// The bundled example scenario.
    pub fn paper_example() -> Self {
        Self::from_toml(PAPER_EXAMPLE_TOML).expect("bundled scenario parses")
    }

    pub fn from_toml(text: &str) -> Result<Self, Error> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Resolve all sections into typed specs, applying defaults for the
    /// omitted auxiliary families.
    pub fn build(&self) -> Result<Scenario, Error> {
        let n = self.manifold.n;
        let m = self.manifold.m;
        let parse = |field: &str, src: &str| -> Result<Expression, Error> {
            Expression::parse(src, n)
                .map_err(|e| Error::Config(format!("{field} = \"{src}\": {e}")))
        };
        let parse_list = |field: &str, list: &[String]| -> Result<Vec<Expression>, Error> {
            list.iter()
                .enumerate()
                .map(|(i, src)| parse(&format!("{field}[{}]", i + 1), src))
                .collect()
        };

        let u = parse("manifold.u", &self.manifold.u)?;
        if u.references(Var::Gamma) {
            return Err(Error::Config("manifold.u may not reference gamma".into()));
        }

        if self.initial.x0.len() != n {
            return Err(Error::Config(format!(
                "initial.x0 has length {}, expected n = {n}",
                self.initial.x0.len()
            )));
        }
        let t0 = self.initial.t0;
        let x0 = self.initial.x0.clone();
        let grad_at_x0 = u
            .gradient(&crate::expr::Bindings::state(t0, &x0))
            .map_err(|e| Error::Config(format!("manifold.u at the initial point: {e}")))?
            .dx;

        let f_funcs = match &self.manifold.f {
            Some(list) => parse_list("manifold.f", list)?,
            None => default_projections(n, n - 2, &grad_at_x0)?,
        };
        let phi_funcs = match &self.manifold.phi {
            Some(list) => parse_list("manifold.phi", list)?,
            None => default_projections(n, n - 2, &grad_at_x0)?,
        };
        let h_rows = match (&self.manifold.h, &self.manifold.h_rows) {
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "give either manifold.h or manifold.h_rows, not both".into(),
                ))
            }
            (Some(list), None) => HRows::Potentials(parse_list("manifold.h", list)?),
            (None, Some(rows)) => HRows::Raw(
                rows.iter()
                    .enumerate()
                    .map(|(i, row)| parse_list(&format!("manifold.h_rows[{}]", i + 1), row))
                    .collect::<Result<_, _>>()?,
            ),
            (None, None) => default_h_rows(n, &grad_at_x0),
        };
        let q00 = match &self.manifold.q00 {
            Some(list) => parse_list("manifold.q00", list)?,
            None => (0..m).map(|_| Expression::constant(1.0, n)).collect(),
        };
        let manifold = ManifoldSpec::new(n, m, u, f_funcs, h_rows, phi_funcs, q00)?;

        let p = parse_list("plant.p", &self.plant.p)?;
        let q = self
            .plant
            .q
            .iter()
            .enumerate()
            .map(|(i, row)| parse_list(&format!("plant.q[{}]", i + 1), row))
            .collect::<Result<Vec<_>, _>>()?;
        let plant = PlantSpec::new(p, q)?;

        let jump_measure = JumpMeasureConfig {
            lambda: self.jumps.lambda,
            mark: match self.jumps.mark {
                MarkSection::Uniform { a, b } => MarkDistribution::Uniform { a, b },
                MarkSection::Exponential { rate } => MarkDistribution::Exponential { rate },
                MarkSection::Degenerate { value } => MarkDistribution::Degenerate { value },
            },
        };
        jump_measure.validate()?;

        let sim = SimConfig {
            dt: self.sim.dt,
            horizon: self.sim.horizon,
            paths: self.sim.paths,
            seed: self.sim.seed,
            record_stride: self.sim.record_stride,
        };
        sim.validate()?;

        if self.residuals.x_box.len() != n {
            return Err(Error::Config(format!(
                "residuals.x_box has {} ranges, expected n = {n}",
                self.residuals.x_box.len()
            )));
        }
        for (i, (lo, hi)) in self.residuals.x_box.iter().enumerate() {
            if !(lo < hi) {
                return Err(Error::Config(format!(
                    "residuals.x_box[{}] = [{lo}, {hi}] is empty",
                    i + 1
                )));
            }
        }
        if !(self.residuals.t_range.0 <= self.residuals.t_range.1) {
            return Err(Error::Config("residuals.t_range is empty".into()));
        }
        if self.residuals.samples == 0 {
            return Err(Error::Config("residuals.samples must be >= 1".into()));
        }
        let residuals = ResidualSettings {
            samples: self.residuals.samples,
            t_range: self.residuals.t_range,
            x_box: self.residuals.x_box.clone(),
            gamma_grid: self.residuals.gamma_grid.clone(),
            ode_tol: self.residuals.ode_tol,
            tolerances: ResidualTolerances {
                wiener: self.residuals.tol_wiener,
                drift: self.residuals.tol_drift,
                jump: self.residuals.tol_jump,
                generator: self.residuals.tol_generator,
            },
        };

        let perturbation = match &self.perturbation {
            None => None,
            Some(section) => {
                if section.component == 0 || section.component > n {
                    return Err(Error::Config(format!(
                        "perturbation.component must be in 1..={n}"
                    )));
                }
                let component = section.component - 1;
                let target = match section.target.as_str() {
                    "drift" => PerturbationTarget::Drift { component },
                    "jump" => PerturbationTarget::Jump { component },
                    "diffusion" => {
                        let column = section.column.ok_or_else(|| {
                            Error::Config(
                                "perturbation.column is required for target \"diffusion\"".into(),
                            )
                        })?;
                        if column == 0 || column > m {
                            return Err(Error::Config(format!(
                                "perturbation.column must be in 1..={m}"
                            )));
                        }
                        PerturbationTarget::Diffusion {
                            column: column - 1,
                            component,
                        }
                    }
                    other => {
                        return Err(Error::Config(format!(
                            "unknown perturbation target \"{other}\""
                        )))
                    }
                };
                Some(Perturbation {
                    target,
                    epsilon: section.epsilon,
                })
            }
        };

        Ok(Scenario {
            manifold,
            plant,
            t0,
            x0,
            jump_measure,
            sim,
            residuals,
            perturbation,
        })
    }
}

impl Scenario {
    /// The synthesized coefficient set with the configured ODE tolerance.
    pub fn synthesized(&self) -> SynthesizedSystem {
        SynthesizedSystem::new(self.manifold.clone()).with_ode_tol(self.residuals.ode_tol)
    }

    /// The controlled system rooted at the configured initial point.
    pub fn controlled(&self) -> Result<ControlledSystem, Error> {
        build_controlled_system(self.synthesized(), self.plant.clone(), self.t0, &self.x0)
    }
}
