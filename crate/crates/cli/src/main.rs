//! Command-line front door: scenario files in, JSON reports and CSV
//! traces out. All outputs are deterministic for fixed inputs; thread
//! count never changes numbers.

use clap::{Parser, Subcommand, ValueEnum};
use pathorder_core::conditions::{
    check_diffusion_structure, check_drift_order, check_h2, estimate_h1, ConditionReport,
};
use pathorder_core::measures::{stochastic_leq, w2, MeasureJson};
use pathorder_core::orderlab::{
    drift_gap_probe, necessity_from_spec, psi, run_preservation_trial, DriftGapReport,
    OrderlabError, TrialReport,
};
use pathorder_core::scenario::{load_scenario, ScenarioFile, ScenarioSpec};
use pathorder_core::segments::TimeGrid;
use pathorder_core::simulate::{run, write_trajectories_csv, SimError};
use serde::Serialize;
use serde_json::json;
use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "pathorder", version, about = "Order-preservation toolkit for path-distribution dependent SDEs with memory")]
struct Cli {
    /// Overrides the scenario file's simulation seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for report and trace files; stdout if omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Report format for tabular subcommands.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Worker-pool size; defaults to the number of cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Cmd {
    /// Runs one coupled simulation and summarises the final clouds.
    Simulate { scenario: String },
    /// Runs the replicated order-preservation trial.
    OrderTest { scenario: String },
    /// Runs the perturbed-coupling drift-gap probe.
    NecessityProbe { scenario: String },
    /// Checks the sufficient conditions by randomized probing.
    CheckConditions { scenario: String },
    /// Exact Wasserstein-2 distance between two measure files.
    W2 { a: String, b: String },
    /// Stochastic dominance check between two measure files.
    Dominance { a: String, b: String },
    /// Tabulates the smoothed positive part and its derivatives.
    PsiTable {
        n: u32,
        #[arg(long, default_value_t = -1.0)]
        s_min: f64,
        #[arg(long, default_value_t = 2.0)]
        s_max: f64,
        #[arg(long, default_value_t = 101)]
        count: usize,
    },
}

#[derive(Debug)]
struct CliError {
    kind: &'static str,
    message: String,
    code: u8,
}

impl CliError {
    fn usage(message: impl std::fmt::Display) -> CliError {
        CliError { kind: "usage", message: message.to_string(), code: 1 }
    }
    fn io(message: impl std::fmt::Display) -> CliError {
        CliError { kind: "io", message: message.to_string(), code: 1 }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> CliError {
        let code = if matches!(e, SimError::BlowUp { .. }) { 3 } else { 1 };
        CliError { kind: "simulation", message: e.to_string(), code }
    }
}

impl From<OrderlabError> for CliError {
    fn from(e: OrderlabError) -> CliError {
        match e {
            OrderlabError::Sim(s) => s.into(),
            other => CliError { kind: "orderlab", message: other.to_string(), code: 1 },
        }
    }
}

/// Provenance header embedded in every scenario-driven report.
#[derive(Serialize)]
struct RunMeta<'a> {
    scenario: &'a ScenarioFile,
    grid: &'a TimeGrid,
    seed: u64,
    model_hash_b: String,
    model_hash_bbar: String,
}

impl<'a> RunMeta<'a> {
    fn of(spec: &'a ScenarioSpec) -> RunMeta<'a> {
        let (h, hb) = spec.model_hashes();
        RunMeta {
            scenario: &spec.file,
            grid: &spec.grid,
            seed: spec.sim.seed,
            model_hash_b: h,
            model_hash_bbar: hb,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(k) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
            return fail(&CliError::usage(format!("cannot size thread pool: {e}")));
        }
    }
    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => fail(&e),
    }
}

fn fail(e: &CliError) -> ExitCode {
    eprintln!("{}", json!({"error": e.message, "kind": e.kind}));
    ExitCode::from(e.code)
}

fn dispatch(cli: &Cli) -> Result<u8, CliError> {
    match &cli.cmd {
        Cmd::Simulate { scenario } => cmd_simulate(cli, scenario),
        Cmd::OrderTest { scenario } => cmd_order_test(cli, scenario),
        Cmd::NecessityProbe { scenario } => cmd_necessity(cli, scenario),
        Cmd::CheckConditions { scenario } => cmd_check(cli, scenario),
        Cmd::W2 { a, b } => cmd_w2(cli, a, b),
        Cmd::Dominance { a, b } => cmd_dominance(cli, a, b),
        Cmd::PsiTable { n, s_min, s_max, count } => cmd_psi_table(cli, *n, *s_min, *s_max, *count),
    }
}

fn load(cli: &Cli, path: &str) -> Result<ScenarioSpec, CliError> {
    let mut spec = load_scenario(path).map_err(CliError::usage)?;
    if let Some(seed) = cli.seed {
        spec.sim.seed = seed;
        spec.file.sim.seed = seed;
    }
    Ok(spec)
}

fn emit_json<T: Serialize>(cli: &Cli, name: &str, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(CliError::io)?;
    text.push('\n');
    match &cli.out {
        None => {
            print!("{text}");
            Ok(())
        }
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(CliError::io)?;
            std::fs::write(dir.join(name), text).map_err(CliError::io)
        }
    }
}

fn emit_csv(cli: &Cli, name: &str, header: &str, rows: &[Vec<f64>]) -> Result<(), CliError> {
    let mut text = String::from(header);
    text.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.17e}")).collect();
        text.push_str(&cells.join(","));
        text.push('\n');
    }
    match &cli.out {
        None => {
            print!("{text}");
            Ok(())
        }
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(CliError::io)?;
            std::fs::write(dir.join(name), text).map_err(CliError::io)
        }
    }
}

fn cmd_simulate(cli: &Cli, path: &str) -> Result<u8, CliError> {
    let spec = load(cli, path)?;
    let cloud = run(&spec.grid, (&spec.models.0, &spec.models.1), &spec.initial, &spec.sim)?;
    let last = spec.grid.total_cols() - 1;
    let mean_at = |trajs: &[pathorder_core::segments::Trajectory]| -> Vec<f64> {
        let mut m = vec![0.0; spec.dim];
        for t in trajs {
            for (i, mi) in m.iter_mut().enumerate() {
                *mi += t.value(i, last);
            }
        }
        m.iter().map(|v| v / trajs.len() as f64).collect()
    };
    #[derive(Serialize)]
    struct SimReport<'a> {
        meta: RunMeta<'a>,
        n_particles: usize,
        steps: usize,
        final_mean_x: Vec<f64>,
        final_mean_xbar: Vec<f64>,
    }
    let report = SimReport {
        meta: RunMeta::of(&spec),
        n_particles: cloud.n_particles(),
        steps: spec.grid.steps,
        final_mean_x: mean_at(&cloud.x),
        final_mean_xbar: mean_at(&cloud.x_bar),
    };
    emit_json(cli, "simulate.json", &report)?;
    if let Some(dir) = &cli.out {
        std::fs::create_dir_all(dir).map_err(CliError::io)?;
        for (name, trajs) in [("x.csv", &cloud.x), ("xbar.csv", &cloud.x_bar)] {
            let f = std::fs::File::create(dir.join(name)).map_err(CliError::io)?;
            let mut w = std::io::BufWriter::new(f);
            write_trajectories_csv(&mut w, trajs, &spec.grid).map_err(CliError::io)?;
            w.flush().map_err(CliError::io)?;
        }
    }
    Ok(0)
}

fn cmd_order_test(cli: &Cli, path: &str) -> Result<u8, CliError> {
    let spec = load(cli, path)?;
    let report = run_preservation_trial(&spec)?;
    #[derive(Serialize)]
    struct OrderReport<'a> {
        meta: RunMeta<'a>,
        report: &'a TrialReport,
    }
    emit_json(cli, "order_test.json", &OrderReport { meta: RunMeta::of(&spec), report: &report })?;
    if let (Some(_), Some(trace)) = (&cli.out, &report.psi_trace) {
        let rows: Vec<Vec<f64>> =
            trace.times.iter().zip(&trace.values).map(|(&t, &v)| vec![t, v]).collect();
        emit_csv(cli, "psi_trace.csv", "time,psi_sq_mean", &rows)?;
    }
    Ok(if report.violating_fraction > 0.0 { 2 } else { 0 })
}

fn cmd_necessity(cli: &Cli, path: &str) -> Result<u8, CliError> {
    let spec = load(cli, path)?;
    let nec = spec.necessity.clone().ok_or_else(|| {
        CliError::usage("scenario has no [necessity] section")
    })?;
    let ns = necessity_from_spec(&spec)?;
    let report = drift_gap_probe(&ns, &nec.s_steps)?;
    #[derive(Serialize)]
    struct NecReport<'a> {
        meta: RunMeta<'a>,
        report: &'a DriftGapReport,
    }
    emit_json(cli, "necessity.json", &NecReport { meta: RunMeta::of(&spec), report: &report })?;
    if cli.out.is_some() {
        let rows: Vec<Vec<f64>> = report
            .points
            .iter()
            .map(|p| vec![p.s, p.estimate, p.std_error])
            .collect();
        emit_csv(cli, "drift_gap.csv", "s,estimate,std_error", &rows)?;
    }
    Ok(0)
}

fn cmd_check(cli: &Cli, path: &str) -> Result<u8, CliError> {
    let spec = load(cli, path)?;
    let models = (&spec.models.0, &spec.models.1);
    let alpha_hat = estimate_h1(models, &spec.grid, &spec.probes).map_err(CliError::usage)?;
    let k_hat = check_h2(models, &spec.grid, &spec.probes.time_points).map_err(CliError::usage)?;
    let mut violations =
        check_drift_order(&spec.models.0.drift, &spec.models.1.drift, &spec.grid, &spec.probes)
            .map_err(CliError::usage)?;
    violations.extend(
        check_diffusion_structure(
            &spec.models.0.diffusion,
            &spec.models.1.diffusion,
            &spec.grid,
            &spec.probes,
        )
        .map_err(CliError::usage)?,
    );
    let report = ConditionReport { alpha_hat, k_hat, violations };
    #[derive(Serialize)]
    struct CheckReport<'a> {
        meta: RunMeta<'a>,
        report: &'a ConditionReport,
    }
    emit_json(cli, "conditions.json", &CheckReport { meta: RunMeta::of(&spec), report: &report })?;
    Ok(if report.violations.is_empty() { 0 } else { 2 })
}

fn load_measure(path: &str) -> Result<pathorder_core::measures::EmpiricalMeasure, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::io(format!("cannot read {path}: {e}")))?;
    let js: MeasureJson =
        serde_json::from_str(&text).map_err(|e| CliError::usage(format!("{path}: {e}")))?;
    js.to_measure().map_err(|e| CliError::usage(format!("{path}: {e}")))
}

fn cmd_w2(cli: &Cli, a: &str, b: &str) -> Result<u8, CliError> {
    let mu = load_measure(a)?;
    let nu = load_measure(b)?;
    let d = w2(&mu, &nu).map_err(CliError::usage)?;
    emit_json(cli, "w2.json", &json!({"w2": d}))?;
    Ok(0)
}

fn cmd_dominance(cli: &Cli, a: &str, b: &str) -> Result<u8, CliError> {
    let mu = load_measure(a)?;
    let nu = load_measure(b)?;
    let witness = stochastic_leq(&mu, &nu).map_err(CliError::usage)?;
    emit_json(
        cli,
        "dominance.json",
        &json!({"holds": witness.holds, "matching": witness.matching}),
    )?;
    Ok(0)
}

fn cmd_psi_table(cli: &Cli, n: u32, s_min: f64, s_max: f64, count: usize) -> Result<u8, CliError> {
    if n == 0 || count < 2 || !(s_min < s_max) {
        return Err(CliError::usage("need n >= 1, count >= 2 and s_min < s_max"));
    }
    let rows: Vec<Vec<f64>> = (0..count)
        .map(|k| {
            let s = s_min + (s_max - s_min) * k as f64 / (count - 1) as f64;
            let (v, d1, d2) = psi(n, s);
            vec![s, v, d1, d2]
        })
        .collect();
    match cli.format {
        Format::Csv => emit_csv(cli, "psi_table.csv", "s,psi,dpsi,d2psi", &rows)?,
        Format::Json => {
            let table: Vec<_> = rows
                .iter()
                .map(|r| json!({"s": r[0], "psi": r[1], "dpsi": r[2], "d2psi": r[3]}))
                .collect();
            emit_json(cli, "psi_table.json", &json!({"n": n, "rows": table}))?;
        }
    }
    Ok(0)
}
