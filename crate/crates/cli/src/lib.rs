//! Command implementations behind the `manifold-sde` binary.
//!
//! Exit codes are a stable contract: 0 success, 1 verification or
//! feasibility failure, 2 configuration/parse/usage error.

// Negated comparisons (`!(x > 0.0)`) double as NaN guards.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use manifold_sde::scenario::Scenario;
use manifold_sde::sim::{aggregate, sample_box, simulate_ensemble, TrajectoryRecord};
use manifold_sde::verify::{residual_report, Perturbed, PointResiduals, ResidualTolerances};
use manifold_sde::{monte_carlo, Error, ScenarioConfig, SdeCoefficients};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFICATION: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "manifold-sde",
    version,
    about = "Synthesize, verify, and simulate jump-diffusion systems held on an integral manifold"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Scenario config (TOML); defaults to the bundled `paper-example`.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Directory for output files; stdout only when omitted (simulate
    /// defaults to the current directory).
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Override the scenario seed (simulation paths and sample points).
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the synthesized A, B, G and the control s at a point.
    Synthesize {
        #[command(flatten)]
        common: CommonArgs,
        /// Evaluation point "t,x1,...,xn"; defaults to the initial point.
        #[arg(long)]
        point: Option<String>,
    },
    /// Check the first-integral residuals on sampled points.
    Verify {
        #[command(flatten)]
        common: CommonArgs,
        /// Number of sample points (overrides the config).
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Simulate the controlled system; writes trajectories.csv and
    /// report.json.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run the adherence study across a list of step sizes.
    Convergence {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated step sizes, e.g. "4e-3,1e-3,2.5e-4";
        /// defaults to the config step size.
        #[arg(long = "dt-list")]
        dt_list: Option<String>,
    },
}

/// Run a parsed command, printing results to stdout and diagnostics to
/// stderr; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let outcome = match cli.command {
        Command::Synthesize { common, point } => cmd_synthesize(&common, point.as_deref()),
        Command::Verify { common, samples } => cmd_verify(&common, samples),
        Command::Simulate { common } => cmd_simulate(&common),
        Command::Convergence { common, dt_list } => cmd_convergence(&common, dt_list.as_deref()),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_input_error() {
                EXIT_CONFIG
            } else {
                EXIT_VERIFICATION
            }
        }
    }
}

fn load_scenario(common: &CommonArgs) -> Result<Scenario, Error> {
    let mut config = match &common.config {
        Some(path) => ScenarioConfig::load(path)?,
        None => ScenarioConfig::paper_example(),
    };
    if let Some(seed) = common.seed {
        config.sim.seed = seed;
    }
    config.build()
}

/// 17 significant digits, enough to reproduce any f64 exactly.
pub fn fmt_f64(value: f64) -> String {
    format!("{value:.16e}")
}

fn write_out_file(dir: &Path, name: &str, contents: &str) -> Result<(), Error> {
    fs::create_dir_all(dir)
        .map_err(|e| Error::Config(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    fs::write(&path, contents)
        .map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// synthesize
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct JumpSample {
    gamma: f64,
    displacement: Vec<f64>,
}

#[derive(Serialize)]
struct IndependenceSummary {
    f_rank: usize,
    h_rank: usize,
    phi_rank: usize,
    independent: bool,
}

#[derive(Serialize)]
struct SynthesizeOutput {
    t: f64,
    x: Vec<f64>,
    u: f64,
    level: f64,
    drift: Vec<f64>,
    diffusion_columns: Vec<Vec<f64>>,
    jump: Vec<JumpSample>,
    control: Vec<f64>,
    independence: IndependenceSummary,
}

fn parse_point(text: &str, n: usize) -> Result<(f64, Vec<f64>), Error> {
    let values: Result<Vec<f64>, _> = text.split(',').map(|s| s.trim().parse::<f64>()).collect();
    let values =
        values.map_err(|e| Error::Config(format!("invalid --point \"{text}\": {e}")))?;
    if values.len() != n + 1 {
        return Err(Error::Config(format!(
            "--point needs t and {n} coordinates, got {} values",
            values.len()
        )));
    }
    Ok((values[0], values[1..].to_vec()))
}

fn cmd_synthesize(common: &CommonArgs, point: Option<&str>) -> Result<i32, Error> {
    let scenario = load_scenario(common)?;
    let n = scenario.manifold.state_dim();
    let (t, x) = match point {
        Some(text) => parse_point(text, n)?,
        None => (scenario.t0, scenario.x0.clone()),
    };
    let sys = scenario.synthesized();
    let controlled = scenario.controlled()?;

    let independence = scenario
        .manifold
        .check_independence(&[(t, x.clone())])?;
    let point_report = &independence.points[0];

    let drift = sys.drift(t, &x)?;
    let mut diffusion_columns = Vec::with_capacity(scenario.manifold.wiener_dim());
    for k in 0..scenario.manifold.wiener_dim() {
        let column = sys.diffusion_column(k, t, &x)?;
        if manifold_sde::nlinalg::norm_inf(&column) < 1e-12 {
            eprintln!(
                "warning: diffusion column {} is numerically zero at the \
                 requested point (dependent f rows?)",
                k + 1
            );
        }
        diffusion_columns.push(column);
    }
    let jump = scenario
        .residuals
        .gamma_grid
        .iter()
        .map(|&gamma| {
            Ok(JumpSample {
                gamma,
                displacement: sys.jump_displacement(t, &x, gamma)?,
            })
        })
        .collect::<Result<Vec<_>, Error>>()?;
    let control = controlled.control(t, &x)?;

    let output = SynthesizeOutput {
        t,
        x: x.clone(),
        u: scenario.manifold.u_value(t, &x)?,
        level: controlled.level.c,
        drift,
        diffusion_columns,
        jump,
        control,
        independence: IndependenceSummary {
            f_rank: point_report.f_rank,
            h_rank: point_report.h_rank,
            phi_rank: point_report.phi_rank,
            independent: point_report.independent,
        },
    };
    let json = serde_json::to_string_pretty(&output).expect("serializable output");
    println!("{json}");
    if let Some(dir) = &common.out {
        write_out_file(dir, "synthesize.json", &json)?;
    }
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct Offender {
    residual: &'static str,
    t: f64,
    x: Vec<f64>,
    value: f64,
}

#[derive(Serialize)]
struct VerifyOutput {
    samples: usize,
    seed: u64,
    tolerances: ResidualTolerances,
    wiener: manifold_sde::verify::ResidualSummary,
    drift: manifold_sde::verify::ResidualSummary,
    jump: manifold_sde::verify::ResidualSummary,
    generator: manifold_sde::verify::ResidualSummary,
    pass: bool,
    offender: Option<Offender>,
    points: Vec<PointResiduals>,
}

fn cmd_verify(common: &CommonArgs, samples: Option<usize>) -> Result<i32, Error> {
    let scenario = load_scenario(common)?;
    let count = samples.unwrap_or(scenario.residuals.samples);
    if count == 0 {
        return Err(Error::Config("need at least one sample point".into()));
    }
    let points = sample_box(
        scenario.residuals.t_range,
        &scenario.residuals.x_box,
        count,
        scenario.sim.seed,
    );
    let sys = Perturbed {
        inner: scenario.synthesized(),
        perturbation: scenario.perturbation,
    };
    let report = residual_report(
        &scenario.manifold,
        &sys,
        &points,
        &scenario.residuals.gamma_grid,
    )?;
    let tolerances = scenario.residuals.tolerances;
    let pass = report.passes(&tolerances);
    let offender = report
        .first_offender(&tolerances)
        .map(|(name, p)| Offender {
            residual: name,
            t: p.t,
            x: p.x.clone(),
            value: match name {
                "wiener" => p.wiener,
                "drift" => p.drift,
                "jump" => p.jump,
                _ => p.generator,
            },
        });
    if let Some(o) = &offender {
        eprintln!(
            "verification failed: {} residual {:e} at t={}, x={:?}",
            o.residual, o.value, o.t, o.x
        );
    }
    let output = VerifyOutput {
        samples: count,
        seed: scenario.sim.seed,
        tolerances,
        wiener: report.wiener,
        drift: report.drift,
        jump: report.jump,
        generator: report.generator,
        pass,
        offender,
        points: report.points,
    };
    let json = serde_json::to_string_pretty(&output).expect("serializable output");
    println!("{json}");
    if let Some(dir) = &common.out {
        write_out_file(dir, "verify.json", &json)?;
    }
    if pass {
        Ok(EXIT_OK)
    } else {
        Ok(EXIT_VERIFICATION)
    }
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

/// CSV with columns path_id,step,t,x1..xN,u,jumps; floats carry 17
/// significant digits so reruns are byte-identical.
pub fn trajectories_csv(n: usize, records: &[TrajectoryRecord]) -> String {
    let mut out = String::new();
    out.push_str("path_id,step,t");
    for i in 1..=n {
        out.push_str(&format!(",x{i}"));
    }
    out.push_str(",u,jumps\n");
    for record in records {
        for sample in &record.samples {
            out.push_str(&format!("{},{}", record.path, sample.step));
            out.push(',');
            out.push_str(&fmt_f64(sample.t));
            for value in &sample.x {
                out.push(',');
                out.push_str(&fmt_f64(*value));
            }
            out.push(',');
            out.push_str(&fmt_f64(sample.u));
            out.push_str(&format!(",{}\n", sample.jumps));
        }
    }
    out
}

fn cmd_simulate(common: &CommonArgs) -> Result<i32, Error> {
    let scenario = load_scenario(common)?;
    let controlled = scenario.controlled()?;
    let records = simulate_ensemble(&controlled, &scenario.sim, &scenario.jump_measure)?;
    let report = aggregate(&controlled, &scenario.sim, &scenario.jump_measure, &records);

    let dir = common.out.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir)
        .map_err(|e| Error::Config(format!("cannot create {}: {e}", dir.display())))?;
    let csv_path = dir.join("trajectories.csv");
    let file = fs::File::create(&csv_path)
        .map_err(|e| Error::Config(format!("cannot write {}: {e}", csv_path.display())))?;
    let mut writer = BufWriter::new(file);
    writer
        .write_all(trajectories_csv(scenario.manifold.state_dim(), &records).as_bytes())
        .and_then(|_| writer.flush())
        .map_err(|e| Error::Config(format!("cannot write {}: {e}", csv_path.display())))?;

    let json = serde_json::to_string_pretty(&report).expect("serializable report");
    write_out_file(&dir, "report.json", &json)?;
    println!("{json}");
    if report.aborted_paths > 0 {
        eprintln!(
            "note: {} of {} paths aborted (escape before the horizon)",
            report.aborted_paths, report.paths
        );
    }
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------------------
// convergence
// ---------------------------------------------------------------------------

fn parse_dt_list(text: &str) -> Result<Vec<f64>, Error> {
    let values: Result<Vec<f64>, _> = text.split(',').map(|s| s.trim().parse::<f64>()).collect();
    let values =
        values.map_err(|e| Error::Config(format!("invalid --dt-list \"{text}\": {e}")))?;
    if values.is_empty() || values.iter().any(|&dt| !(dt > 0.0)) {
        return Err(Error::Config("--dt-list needs positive step sizes".into()));
    }
    Ok(values)
}

fn cmd_convergence(common: &CommonArgs, dt_list: Option<&str>) -> Result<i32, Error> {
    let scenario = load_scenario(common)?;
    let dts = match dt_list {
        Some(text) => parse_dt_list(text)?,
        None => vec![scenario.sim.dt],
    };
    let controlled = scenario.controlled()?;
    let mut table = String::from("dt,median_sup_deviation,p95_sup_deviation\n");
    for &dt in &dts {
        let mut cfg = scenario.sim;
        cfg.dt = dt;
        cfg.validate()?;
        let report = monte_carlo(&controlled, &cfg, &scenario.jump_measure)?;
        table.push_str(&format!(
            "{},{},{}\n",
            fmt_f64(dt),
            fmt_f64(report.median),
            fmt_f64(report.p95)
        ));
    }
    print!("{table}");
    if let Some(dir) = &common.out {
        write_out_file(dir, "convergence.csv", &table)?;
    }
    Ok(EXIT_OK)
}
