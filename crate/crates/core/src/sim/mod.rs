//! Euler-Maruyama simulation of the controlled jump-diffusion and Monte
//! Carlo measurement of manifold adherence.
//!
//! Jumps are applied sequentially at the post-diffusion state: the jump
//! map preserves u exactly, so applying each jump at the current state
//! keeps the jump part of the scheme manifold-exact and only the
//! diffusion/drift discretization contributes deviation.

mod rng;

pub use rng::PathRng;

use rayon::prelude::*;
use serde::Serialize;

use crate::control::Controlled;
use crate::error::Error;
use crate::nlinalg::Vector;
use crate::synthesis::SdeCoefficients;

/// Jump intensity and mark distribution of the driving Poisson measure.
/// The mark distribution is free; only bounded or light-tailed choices
/// are offered.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct JumpMeasureConfig {
    pub lambda: f64,
    pub mark: MarkDistribution,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "dist", rename_all = "lowercase")]
pub enum MarkDistribution {
    Uniform { a: f64, b: f64 },
    Exponential { rate: f64 },
    Degenerate { value: f64 },
}

impl JumpMeasureConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if !(self.lambda >= 0.0) {
            return Err(Error::Config(format!(
                "jump intensity must be >= 0, got {}",
                self.lambda
            )));
        }
        match self.mark {
            MarkDistribution::Uniform { a, b } if !(a < b) => Err(Error::Config(format!(
                "uniform mark range needs a < b, got [{a}, {b})"
            ))),
            MarkDistribution::Exponential { rate } if !(rate > 0.0) => Err(Error::Config(
                format!("exponential mark rate must be > 0, got {rate}"),
            )),
            _ => Ok(()),
        }
    }

    /// No jumps at all.
    pub fn none() -> Self {
        Self {
            lambda: 0.0,
            mark: MarkDistribution::Degenerate { value: 0.0 },
        }
    }
}

impl MarkDistribution {
    pub fn sample(&self, rng: &mut PathRng) -> f64 {
        match *self {
            MarkDistribution::Uniform { a, b } => rng.uniform_in(a, b),
            MarkDistribution::Exponential { rate } => rng.exponential(rate),
            MarkDistribution::Degenerate { value } => value,
        }
    }
}

/// Discretization and ensemble settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SimConfig {
    pub dt: f64,
    /// Simulated horizon T; the run covers [t0, t0 + T].
    pub horizon: f64,
    pub paths: u64,
    pub seed: u64,
    /// Steps between recorded samples.
    pub record_stride: u64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if !(self.dt > 0.0) {
            return Err(Error::Config(format!("dt must be > 0, got {}", self.dt)));
        }
        if !(self.horizon >= 0.0) {
            return Err(Error::Config(format!(
                "horizon must be >= 0, got {}",
                self.horizon
            )));
        }
        // horizon = 0 is allowed and yields the single initial sample.
        if self.horizon > 0.0 && self.dt > self.horizon {
            return Err(Error::Config(format!(
                "dt = {} exceeds horizon = {}",
                self.dt, self.horizon
            )));
        }
        if self.paths == 0 {
            return Err(Error::Config("need at least one path".into()));
        }
        if self.record_stride == 0 {
            return Err(Error::Config("record_stride must be >= 1".into()));
        }
        Ok(())
    }

    pub fn steps(&self) -> u64 {
        if self.horizon == 0.0 {
            0
        } else {
            (self.horizon / self.dt).ceil() as u64
        }
    }
}

/// One recorded state along a path.
#[derive(Clone, Debug, Serialize)]
pub struct Sample {
    pub step: u64,
    pub t: f64,
    pub x: Vector,
    pub u: f64,
    /// Jumps since the previous recorded sample.
    pub jumps: u64,
}

/// A simulated path with its manifold deviation.
#[derive(Clone, Debug, Serialize)]
pub struct TrajectoryRecord {
    pub path: u64,
    pub samples: Vec<Sample>,
    /// max over every step (not only recorded samples) of |u(t, x) - c|.
    pub sup_deviation: f64,
    pub total_jumps: u64,
    /// Present when the path stopped early on a coefficient error.
    pub abort: Option<String>,
}

/// Sup-deviation statistics over the path ensemble.
#[derive(Clone, Debug, Serialize)]
pub struct AdherenceReport {
    pub dt: f64,
    pub horizon: f64,
    pub lambda: f64,
    pub paths: u64,
    pub seed: u64,
    pub t0: f64,
    pub level: f64,
    /// Per completed path, in path order.
    pub sup_deviations: Vec<f64>,
    pub median: f64,
    pub mean: f64,
    pub p95: f64,
    pub aborted_paths: u64,
    pub total_jumps: u64,
}

/// One Euler-Maruyama step with compound-Poisson jumps: drift and
/// diffusion from the pre-step state, then N ~ Poisson(lambda dt) jumps
/// applied sequentially to the updated state.
pub fn step<C: SdeCoefficients>(
    system: &Controlled<C>,
    jumps: &JumpMeasureConfig,
    t: f64,
    x: &[f64],
    dt: f64,
    rng: &mut PathRng,
) -> Result<(Vector, u64), Error> {
    let n = x.len();
    let drift = system.effective_drift(t, x)?;
    let mut next: Vector = (0..n).map(|i| x[i] + drift[i] * dt).collect();
    let m = system.coeffs.wiener_dim();
    if m > 0 {
        let sqrt_dt = dt.sqrt();
        for k in 0..m {
            let noise = rng.standard_normal() * sqrt_dt;
            let column = system.coeffs.diffusion_column(k, t, x)?;
            for i in 0..n {
                next[i] += column[i] * noise;
            }
        }
    }
    let count = rng.poisson(jumps.lambda * dt);
    for _ in 0..count {
        let gamma = jumps.mark.sample(rng);
        let g = system.coeffs.jump_displacement(t, &next, gamma)?;
        for i in 0..n {
            next[i] += g[i];
        }
    }
    Ok((next, count))
}

/// Simulate one path from (t0, x0). The per-path stream is derived from
/// (seed, path index), so paths are reproducible independently of
/// execution order.
pub fn simulate_path<C: SdeCoefficients>(
    system: &Controlled<C>,
    cfg: &SimConfig,
    jumps: &JumpMeasureConfig,
    path: u64,
) -> TrajectoryRecord {
    let mut rng = PathRng::for_path(cfg.seed, path);
    let c = system.level.c;
    let t0 = system.t0;
    let mut t = t0;
    let mut x = system.x0.clone();
    let steps = cfg.steps();

    let mut record = TrajectoryRecord {
        path,
        samples: vec![Sample {
            step: 0,
            t: t0,
            x: x.clone(),
            u: c,
            jumps: 0,
        }],
        sup_deviation: 0.0,
        total_jumps: 0,
        abort: None,
    };
    let mut jumps_since_record = 0u64;

    for step_index in 1..=steps {
        let t_next = if step_index == steps {
            t0 + cfg.horizon
        } else {
            t0 + step_index as f64 * cfg.dt
        };
        let h = t_next - t;
        let (next, jump_count) = match step(system, jumps, t, &x, h, &mut rng) {
            Ok(result) => result,
            Err(e) => {
                record.abort = Some(format!("step {step_index}: {e}"));
                break;
            }
        };
        t = t_next;
        x = next;
        let u = match system.manifold.u_value(t, &x) {
            Ok(u) => u,
            Err(e) => {
                record.abort = Some(format!("step {step_index}: {e}"));
                break;
            }
        };
        record.sup_deviation = record.sup_deviation.max((u - c).abs());
        record.total_jumps += jump_count;
        jumps_since_record += jump_count;
        if step_index % cfg.record_stride == 0 || step_index == steps {
            record.samples.push(Sample {
                step: step_index,
                t,
                x: x.clone(),
                u,
                jumps: jumps_since_record,
            });
            jumps_since_record = 0;
        }
    }
    record
}

/// Simulate every path (in parallel) and keep the full records.
pub fn simulate_ensemble<C: SdeCoefficients>(
    system: &Controlled<C>,
    cfg: &SimConfig,
    jumps: &JumpMeasureConfig,
) -> Result<Vec<TrajectoryRecord>, Error> {
    cfg.validate()?;
    jumps.validate()?;
    Ok((0..cfg.paths)
        .into_par_iter()
        .map(|path| simulate_path(system, cfg, jumps, path))
        .collect())
}

/// Monte Carlo adherence study: simulate the ensemble and aggregate the
/// per-path sup deviations. Deterministic for a given (cfg.seed,
/// cfg.paths) regardless of thread count.
pub fn monte_carlo<C: SdeCoefficients>(
    system: &Controlled<C>,
    cfg: &SimConfig,
    jumps: &JumpMeasureConfig,
) -> Result<AdherenceReport, Error> {
    let records = simulate_ensemble(system, cfg, jumps)?;
    Ok(aggregate(system, cfg, jumps, &records))
}

/// Build the adherence report from already-simulated records.
pub fn aggregate<C: SdeCoefficients>(
    system: &Controlled<C>,
    cfg: &SimConfig,
    jumps: &JumpMeasureConfig,
    records: &[TrajectoryRecord],
) -> AdherenceReport {
    let mut sup_deviations = Vec::with_capacity(records.len());
    let mut aborted = 0u64;
    let mut total_jumps = 0u64;
    for record in records {
        total_jumps += record.total_jumps;
        if record.abort.is_some() {
            aborted += 1;
        } else {
            sup_deviations.push(record.sup_deviation);
        }
    }
    let mut sorted = sup_deviations.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let quantile = |q: f64| -> f64 {
        if sorted.is_empty() {
            return f64::NAN;
        }
        let rank = (q * sorted.len() as f64).ceil() as usize;
        sorted[rank.clamp(1, sorted.len()) - 1]
    };
    let mean = if sup_deviations.is_empty() {
        f64::NAN
    } else {
        sup_deviations.iter().sum::<f64>() / sup_deviations.len() as f64
    };
    AdherenceReport {
        dt: cfg.dt,
        horizon: cfg.horizon,
        lambda: jumps.lambda,
        paths: cfg.paths,
        seed: cfg.seed,
        t0: system.t0,
        level: system.level.c,
        median: quantile(0.5),
        p95: quantile(0.95),
        mean,
        sup_deviations,
        aborted_paths: aborted,
        total_jumps,
    }
}

/// Uniform sample points (t, x) in a box, drawn from an auxiliary stream
/// of `seed`.
pub fn sample_box(
    t_range: (f64, f64),
    x_ranges: &[(f64, f64)],
    count: usize,
    seed: u64,
) -> Vec<(f64, Vector)> {
    let mut rng = PathRng::auxiliary(seed, 0);
    (0..count)
        .map(|_| {
            let t = rng.uniform_in(t_range.0, t_range.1);
            let x = x_ranges
                .iter()
                .map(|&(lo, hi)| rng.uniform_in(lo, hi))
                .collect();
            (t, x)
        })
        .collect()
}
