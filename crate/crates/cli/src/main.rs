//! `futurity`: profit reports, exhaustive positivity sweeps and Monte Carlo
//! checks for two-armed Futurity slot machines played by a fixed pattern.

mod output;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use futurity::chain::{build_transition, pattern_machine, stationary};
use futurity::closed_form::{self, lemma3, lemma4, r_d_definition, theorem2, ProfitReport};
use futurity::pattern::canonical_patterns_up_to;
use futurity::sign_analysis::{
    scan, verify_q_positive, PhiPsiEntry, PositivityReport, PropertyCounts, ScanOptions,
    ScanPoint, ScanRow, ScanSummary, SignProfile,
};
use futurity::simulate::{self, Comparison, SimConfig, SimResult, Strategy};
use futurity::{Error, Grid, Pattern, RunLengthForm};
use rayon::prelude::*;
use serde::Serialize;

use crate::output::{emit, json_bytes, num, opt, Sink};

const EXIT_IO: u8 = 1;
const EXIT_INPUT: u8 = 2;
const EXIT_VERIFY: u8 = 3;
const EXIT_STATISTICAL: u8 = 4;

const THREADS_VAR: &str = "FUTURITY_THREADS";

#[derive(Parser)]
#[command(name = "futurity", version)]
#[command(about = "Casino profit analysis for Futurity slot machines played by periodic patterns")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Write the main report to this file (replaced atomically) instead of stdout
    #[arg(long, short, global = true, value_name = "PATH")]
    output: Option<PathBuf>,

    #[arg(long, value_enum, default_value_t = Format::Json, global = true)]
    format: Format,

    /// Largest tolerated gap between independent routes to the casino profit
    #[arg(long, default_value_t = 1e-9, global = true, value_parser = parse_tolerance)]
    route_tol: f64,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Casino profit per coup for one pattern, by every route plus the Markov chain oracle
    Analyze {
        #[arg(value_parser = parse_pattern)]
        pattern: Pattern,
        #[arg(value_name = "QA")]
        q_a: f64,
        #[arg(value_name = "QB")]
        q_b: f64,
        /// Write the transition matrix and stationary distribution as CSV
        #[arg(long, value_name = "PATH")]
        dump_chain: Option<PathBuf>,
    },
    /// Check Q > 0 and route agreement for every pattern up to a length over a grid
    Sweep {
        #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(2..=64))]
        max_len: u64,
        #[arg(long, default_value = "0.05:0.95:0.05", value_parser = parse_grid)]
        grid: Grid,
        /// Include the Markov chain oracle among the compared routes
        #[arg(long)]
        with_oracle: bool,
        /// Skip the lower bound on Q for patterns with two or more negative points
        #[arg(long)]
        no_bound: bool,
        /// Skip the φ/ψ property checks
        #[arg(long)]
        no_properties: bool,
        /// Also write the summary JSON here
        #[arg(long, value_name = "PATH")]
        summary: Option<PathBuf>,
    },
    /// Monte Carlo play of a pattern against the exact profit and Futurity rate
    Simulate {
        #[arg(value_parser = parse_pattern)]
        pattern: Pattern,
        #[arg(value_name = "QA")]
        q_a: f64,
        #[arg(value_name = "QB")]
        q_b: f64,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Monte Carlo play of the random mixture choosing A with probability GAMMA
    Mixture {
        gamma: f64,
        #[arg(value_name = "QA")]
        q_a: f64,
        #[arg(value_name = "QB")]
        q_b: f64,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Positivity of Q, the φ/ψ structure and the lower bound for one pattern
    Verify {
        #[arg(value_parser = parse_pattern)]
        pattern: Pattern,
        #[arg(long, default_value = "0.05:0.95:0.05", value_parser = parse_grid)]
        grid: Grid,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Coups per replication; scientific notation such as 1e7 is accepted
    #[arg(long, default_value = "1e6", value_parser = parse_count)]
    coups: u64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = simulate::DEFAULT_REPLICATIONS as u64, value_parser = parse_replications)]
    replications: u64,
    /// Deviations beyond this many standard errors fail the run
    #[arg(long, default_value_t = 4.0, value_parser = parse_tolerance)]
    se_multiple: f64,
    /// Write a coup-by-coup CSV trace of the first replication
    #[arg(long, value_name = "PATH")]
    trace: Option<PathBuf>,
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..=simulate::MAX_TRACE_COUPS))]
    trace_coups: u64,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Failure {
        Failure {
            code,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Failure {
        let code = match e {
            Error::InternalMismatch { .. } | Error::SingularSystem => EXIT_VERIFY,
            _ => EXIT_INPUT,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Failure {
        Failure::new(EXIT_IO, e.to_string())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Failure {
        Failure::new(EXIT_IO, e.to_string())
    }
}

fn parse_pattern(s: &str) -> Result<Pattern, String> {
    Pattern::parse(s).map_err(|e| e.to_string())
}

fn parse_grid(s: &str) -> Result<Grid, String> {
    s.parse::<Grid>().map_err(|e| e.to_string())
}

fn parse_tolerance(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(x) if x.is_finite() && x > 0.0 => Ok(x),
        _ => Err(format!("{s:?} is not a positive number")),
    }
}

/// Positive integer, written plainly or as `1e7`.
fn parse_count(s: &str) -> Result<u64, String> {
    let n = match s.parse::<u64>() {
        Ok(n) => n,
        Err(_) => {
            let x: f64 = s.parse().map_err(|_| format!("{s:?} is not a count"))?;
            if !(x.is_finite() && x.fract() == 0.0 && (0.0..=9.007_199_254_740_992e15).contains(&x)) {
                return Err(format!("{s:?} is not a whole number of coups"));
            }
            x as u64
        }
    };
    if n == 0 {
        return Err("at least one is required".into());
    }
    Ok(n)
}

fn parse_replications(s: &str) -> Result<u64, String> {
    let n = parse_count(s)?;
    if n < 2 {
        return Err("at least two replications are needed for a standard error".into());
    }
    Ok(n)
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(text) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n = match text.trim().parse::<usize>() {
        Ok(n) if n > 0 => n,
        _ => {
            return Err(Failure::new(
                EXIT_INPUT,
                format!("{THREADS_VAR}={text:?} is not a positive thread count"),
            ))
        }
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::new(EXIT_INPUT, e.to_string()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| run(&cli));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Analyze {
            pattern,
            q_a,
            q_b,
            dump_chain,
        } => analyze(cli, pattern, *q_a, *q_b, dump_chain.as_deref()),
        Command::Sweep {
            max_len,
            grid,
            with_oracle,
            no_bound,
            no_properties,
            summary,
        } => sweep(
            cli,
            *max_len as usize,
            grid,
            *with_oracle,
            ScanOptions {
                bound: !no_bound,
                properties: !no_properties,
            },
            summary.as_deref(),
        ),
        Command::Simulate {
            pattern,
            q_a,
            q_b,
            run,
        } => play(cli, Strategy::Pattern(pattern.clone()), *q_a, *q_b, run),
        Command::Mixture { gamma, q_a, q_b, run } => play(cli, Strategy::Mixture(*gamma), *q_a, *q_b, run),
        Command::Verify { pattern, grid } => verify(cli, pattern, grid),
    }
}

fn runs_text(a: &[usize]) -> String {
    let parts: Vec<String> = a.iter().map(|x| x.to_string()).collect();
    format!("({})", parts.join(","))
}

fn analyze(cli: &Cli, p: &Pattern, q_a: f64, q_b: f64, dump_chain: Option<&Path>) -> Result<(), Failure> {
    let report = closed_form::analyze(p, q_a, q_b)?;
    let bytes = match cli.format {
        Format::Json => json_bytes(&report),
        Format::Csv => profit_csv(&report)?,
    };
    if let Some(path) = dump_chain {
        write_chain(path, p, q_a, q_b)?;
    }
    emit(cli.output.as_deref(), &bytes)?;
    if report.max_route_discrepancy > cli.route_tol {
        return Err(Failure::new(
            EXIT_VERIFY,
            format!(
                "routes disagree by {:e}, above the tolerance {:e}",
                report.max_route_discrepancy, cli.route_tol
            ),
        ));
    }
    Ok(())
}

fn profit_csv(r: &ProfitReport) -> Result<Vec<u8>, Failure> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "pattern", "a", "r", "s", "h", "qA", "qB", "pCircD", "R_def", "R_lemma3", "R_theorem2",
        "R_lemma4", "R_oracle", "Q", "S", "maxRouteDiscrepancy", "pCircA", "pCircB", "pCircDFloor",
        "Q0", "S0", "R0", "Q1",
    ])?;
    w.write_record([
        r.pattern.clone(),
        runs_text(&r.a),
        r.r.to_string(),
        r.s.to_string(),
        r.h.to_string(),
        num(r.q_a),
        num(r.q_b),
        num(r.p_circ_d),
        num(r.r_def),
        num(r.r_lemma3),
        num(r.r_theorem2),
        opt(r.r_lemma4),
        num(r.r_oracle),
        num(r.q),
        num(r.s_factor),
        num(r.max_route_discrepancy),
        num(r.p_circ_a),
        num(r.p_circ_b),
        num(r.p_circ_d_floor),
        num(r.q0),
        num(r.s0),
        num(r.r0),
        opt(r.q1),
    ])?;
    w.into_inner().map_err(|e| Failure::new(EXIT_IO, e.to_string()))
}

/// One row per state `(i, j)`: its transition probabilities, then `π(i, j)`.
fn write_chain(path: &Path, p: &Pattern, q_a: f64, q_b: f64) -> Result<(), Failure> {
    let m = pattern_machine(p, q_a, q_b, 2)?;
    let t = build_transition(&m);
    let pi = stationary(&t)?;
    let labels: Vec<String> = (0..t.n_states())
        .map(|k| {
            let (i, j) = t.state(k);
            format!("{i},{j}")
        })
        .collect();
    let mut w = csv::Writer::from_writer(Sink::open(Some(path))?);
    let mut header = vec!["state".to_string()];
    header.extend(labels.iter().cloned());
    header.push("pi".into());
    w.write_record(&header)?;
    for (k, label) in labels.iter().enumerate() {
        let mut rec = vec![label.clone()];
        rec.extend(t.row(k).iter().map(|x| num(*x)));
        rec.push(num(pi.weights()[k]));
        w.write_record(&rec)?;
    }
    w.into_inner()
        .map_err(|e| Failure::new(EXIT_IO, e.to_string()))?
        .finish()?;
    Ok(())
}

/// Spread of the closed-form routes, and of the oracle when requested.
fn route_discrepancy(p: &Pattern, q_a: f64, q_b: f64, with_oracle: bool) -> Result<f64, Error> {
    let rl = p.canonicalize();
    let mut v = vec![
        r_d_definition(p, q_a, q_b)?,
        lemma3(p, q_a, q_b)?.r_d,
        theorem2(&rl, q_a, q_b)?.r_d,
    ];
    if rl.h() == 1 {
        v.push(lemma4(rl.r(), rl.s(), q_a, q_b)?.r_d);
    }
    if with_oracle {
        v.push(futurity::chain::oracle_rd(p, q_a, q_b)?);
    }
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(hi - lo)
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct SweepSummary<'a> {
    status: &'static str,
    critical: bool,
    max_len: usize,
    grid: Vec<f64>,
    with_oracle: bool,
    #[serde(flatten)]
    scan: &'a ScanSummary,
    route_tolerance: f64,
    max_route_discrepancy: f64,
    argmax_route_discrepancy: Option<ScanPoint>,
    route_violations: usize,
}

fn sweep(
    cli: &Cli,
    max_len: usize,
    grid: &Grid,
    with_oracle: bool,
    opts: ScanOptions,
    summary_path: Option<&Path>,
) -> Result<(), Failure> {
    let patterns: Vec<RunLengthForm> = canonical_patterns_up_to(max_len);
    let points: Vec<(f64, f64)> = grid.pairs().collect();
    let discrepancies: Vec<Vec<f64>> = patterns
        .par_iter()
        .map(|rl| {
            let p = rl.to_pattern();
            points
                .iter()
                .map(|&(a, b)| route_discrepancy(&p, a, b, with_oracle))
                .collect::<Result<Vec<f64>, Error>>()
        })
        .collect::<Result<_, _>>()?;

    let rows_to_stdout = cli.output.is_none() && cli.format == Format::Csv;
    let mut writer = if cli.output.is_some() || rows_to_stdout {
        let mut w = csv::Writer::from_writer(Sink::open(cli.output.as_deref())?);
        w.write_record([
            "pattern", "a", "delta", "qA", "qB", "Q", "bound", "margin", "routeDiscrepancy",
        ])?;
        Some(w)
    } else {
        None
    };
    let mut write_error: Option<csv::Error> = None;
    let mut index = 0usize;
    let mut max_disc = 0.0f64;
    let mut argmax: Option<ScanPoint> = None;
    let mut route_violations = 0usize;
    let summary = scan(&patterns, grid, opts, |row: &ScanRow| {
        let k = index / points.len();
        let d = discrepancies[k][index % points.len()];
        index += 1;
        if d > cli.route_tol {
            route_violations += 1;
        }
        if argmax.is_none() || d > max_disc {
            max_disc = d;
            argmax = Some(ScanPoint {
                pattern: row.pattern.clone(),
                q_a: row.q_a,
                q_b: row.q_b,
                value: d,
            });
        }
        if let (Some(w), None) = (writer.as_mut(), write_error.as_ref()) {
            let rec = [
                patterns[k].to_pattern().to_string(),
                row.pattern.clone(),
                row.delta.to_string(),
                num(row.q_a),
                num(row.q_b),
                num(row.q),
                opt(row.bound),
                opt(row.margin),
                num(d),
            ];
            if let Err(e) = w.write_record(&rec) {
                write_error = Some(e);
            }
        }
    })?;
    if let Some(e) = write_error {
        return Err(e.into());
    }
    if let Some(w) = writer {
        w.into_inner()
            .map_err(|e| Failure::new(EXIT_IO, e.to_string()))?
            .finish()?;
    }

    let critical = !summary.violations.is_empty();
    let failures = summary.total_violations() + route_violations;
    let report = SweepSummary {
        status: if failures == 0 { "pass" } else { "fail" },
        critical,
        max_len,
        grid: grid.points().to_vec(),
        with_oracle,
        scan: &summary,
        route_tolerance: cli.route_tol,
        max_route_discrepancy: max_disc,
        argmax_route_discrepancy: argmax,
        route_violations,
    };
    let bytes = json_bytes(&report);
    if let Some(path) = summary_path {
        output::write_file(path, &bytes)?;
    }
    if rows_to_stdout {
        std::io::stderr().write_all(&bytes)?;
    } else {
        emit(None, &bytes)?;
    }

    if critical {
        let first = &summary.violations[0];
        return Err(Failure::new(
            EXIT_VERIFY,
            format!(
                "CRITICAL: Q = {:e} <= 0 for {} at qA = {}, qB = {} ({} points)",
                first.value,
                first.pattern,
                first.q_a,
                first.q_b,
                summary.violations.len()
            ),
        ));
    }
    if failures > 0 {
        return Err(Failure::new(
            EXIT_VERIFY,
            format!(
                "{} bound violations, {} decomposition failures, {} property violations, {} route mismatches",
                summary.bound_violations.len(),
                summary.decomposition_failures.len(),
                summary.properties.violations(),
                route_violations
            ),
        ));
    }
    Ok(())
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct SimReport {
    status: &'static str,
    #[serde(flatten)]
    result: SimResult,
    /// Arm payouts per coup, leaving out the Futurity award.
    mean_payout_per_coup: f64,
    se_multiple: f64,
    comparison: Comparison,
}

fn play(cli: &Cli, strategy: Strategy, q_a: f64, q_b: f64, args: &RunArgs) -> Result<(), Failure> {
    let mut cfg = SimConfig::new(strategy, q_a, q_b, args.coups, args.seed);
    cfg.replications = args.replications as usize;
    cfg.validate()?;
    let trace = match &args.trace {
        Some(_) => {
            let mut tcfg = cfg.clone();
            tcfg.n_coups = args.trace_coups;
            Some(simulate::trace(&tcfg)?)
        }
        None => None,
    };

    let result = simulate::simulate(&cfg)?;
    let mut cmp = result.compare();
    let within = |dev: f64, se: Option<f64>| se.is_some_and(|s| dev.abs() <= args.se_multiple * s);
    cmp.profit_within_4se = within(cmp.profit_deviation, result.std_error);
    cmp.futurity_within_4se = within(cmp.futurity_deviation, result.futurity_std_error);
    let pass = cmp.profit_within_4se && cmp.futurity_within_4se;

    if let (Some(path), Some(rows)) = (&args.trace, trace) {
        let mut w = csv::Writer::from_writer(Sink::open(Some(path))?);
        for row in &rows {
            w.serialize(row)?;
        }
        w.into_inner()
            .map_err(|e| Failure::new(EXIT_IO, e.to_string()))?
            .finish()?;
    }

    let t = &result.tally;
    let paid = t.wins_a as f64 * closed_form::fair_payout(1.0 - q_a)?
        + t.wins_b as f64 * closed_form::fair_payout(1.0 - q_b)?;
    let report = SimReport {
        status: if pass { "pass" } else { "fail" },
        mean_payout_per_coup: paid / t.coups as f64,
        result,
        se_multiple: args.se_multiple,
        comparison: cmp,
    };
    let bytes = match cli.format {
        Format::Json => json_bytes(&report),
        Format::Csv => sim_csv(&report)?,
    };
    emit(cli.output.as_deref(), &bytes)?;
    if !pass {
        let c = &report.comparison;
        return Err(Failure::new(
            EXIT_STATISTICAL,
            format!(
                "empirical values outside {} standard errors: profit deviation {:e} (SE {}), Futurity rate deviation {:e} (SE {})",
                args.se_multiple,
                c.profit_deviation,
                opt(report.result.std_error),
                c.futurity_deviation,
                opt(report.result.futurity_std_error),
            ),
        ));
    }
    Ok(())
}

fn sim_csv(r: &SimReport) -> Result<Vec<u8>, Failure> {
    let (s, c) = (&r.result, &r.comparison);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "status", "strategy", "qA", "qB", "seed", "replications", "coupsPerReplication",
        "coupsPlayed", "casinoNet", "profitPerCoup", "stdError", "exactProfit", "profitDeviation",
        "futurityAwards", "empiricalFuturityRate", "futurityStdError", "exactFuturityRate",
        "futurityDeviation",
    ])?;
    w.write_record([
        r.status.to_string(),
        s.strategy.clone(),
        num(s.q_a),
        num(s.q_b),
        s.seed.to_string(),
        s.replications.to_string(),
        s.coups_per_replication.to_string(),
        s.coups_played.to_string(),
        num(s.casino_net),
        num(s.profit_per_coup),
        opt(s.std_error),
        num(c.exact_profit),
        num(c.profit_deviation),
        s.futurity_awards.to_string(),
        num(s.empirical_futurity_rate),
        opt(s.futurity_std_error),
        num(c.exact_futurity_rate),
        num(c.futurity_deviation),
    ])?;
    w.into_inner().map_err(|e| Failure::new(EXIT_IO, e.to_string()))
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct VerifyReport {
    status: &'static str,
    pattern: String,
    a: RunLengthForm,
    h: usize,
    delta: usize,
    signs: Vec<i8>,
    negative_points: Vec<usize>,
    positivity: PositivityReport,
    properties: PropertyCounts,
    phi_psi: Vec<PhiPsiEntry>,
}

fn verify(cli: &Cli, p: &Pattern, grid: &Grid) -> Result<(), Failure> {
    let rl = p.canonicalize();
    let profile = SignProfile::new(&rl);
    let positivity = verify_q_positive(&rl, grid)?;
    let properties = profile.check_properties();
    let failures = positivity.violations.len()
        + positivity.bound_violations.len()
        + positivity.decomposition_failures.len()
        + properties.violations();

    let bytes = match cli.format {
        Format::Json => json_bytes(&VerifyReport {
            status: if failures == 0 { "pass" } else { "fail" },
            pattern: p.to_string(),
            a: rl.clone(),
            h: profile.h(),
            delta: profile.delta(),
            signs: profile.signs(),
            negative_points: profile.negative_points().to_vec(),
            positivity: positivity.clone(),
            properties,
            phi_psi: profile.phi_psi_table(),
        }),
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["a", "delta", "qA", "qB", "Q", "bound", "margin"])?;
            let mut err = None;
            let opts = ScanOptions {
                bound: true,
                properties: false,
            };
            scan(std::slice::from_ref(&rl), grid, opts, |row| {
                let rec = [
                    row.pattern.clone(),
                    row.delta.to_string(),
                    num(row.q_a),
                    num(row.q_b),
                    num(row.q),
                    opt(row.bound),
                    opt(row.margin),
                ];
                if let Err(e) = w.write_record(&rec) {
                    err.get_or_insert(e);
                }
            })?;
            if let Some(e) = err {
                return Err(e.into());
            }
            w.into_inner().map_err(|e| Failure::new(EXIT_IO, e.to_string()))?
        }
    };
    emit(cli.output.as_deref(), &bytes)?;
    if failures > 0 {
        return Err(Failure::new(
            EXIT_VERIFY,
            format!(
                "{}: {} points with Q <= 0, {} bound violations, {} decomposition failures, {} property violations",
                rl,
                positivity.violations.len(),
                positivity.bound_violations.len(),
                positivity.decomposition_failures.len(),
                properties.violations()
            ),
        ));
    }
    Ok(())
}
