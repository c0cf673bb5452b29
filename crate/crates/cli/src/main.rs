//! `ftle-lab`: batch front-end. Exit codes: 0 pass, 1 verification failure,
//! 2 usage or configuration error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use ftle_lab::cocycle::{self, GeometricSource, Mode, OscillationReport};
use ftle_lab::geometry::{self, ClaimReport};
use ftle_lab::henon::{self, RenormParams};
use ftle_lab::modelmap::{FoldConfig, Model};
use ftle_lab::parameters::{self, DEFAULT_M_MAX};
use ftle_lab::report::{fmt17, write_csv_file, write_json_file};
use ftle_lab::sequences::{self, SequenceTable};
use ftle_lab::{Error, Params};

#[derive(Parser, Debug)]
#[command(name = "ftle-lab", version, about = "Verifies the oscillating-exponent construction on a model map")]
struct Cli {
    /// TOML or JSON run configuration (JSON when the extension is `.json`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    mode: Option<ModeArg>,
    /// Horizon `M`; overrides the config.
    #[arg(long, global = true)]
    horizon: Option<u64>,
    /// Seed for synthetic runs; repeatable, replaces the config's list.
    #[arg(long, global = true)]
    seed: Vec<u64>,
    /// Also write an `(m, fte)` series for external plotting.
    #[arg(long, global = true)]
    plot_data: bool,
    /// Run without checking the feasibility system first.
    #[arg(long, global = true)]
    skip_feasibility: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Cmd {
    /// Evaluate the feasibility system; writes feasibility.json.
    Feasibility,
    /// Dump the sequence table and the derived constants.
    Sequences,
    /// Run every rectangle, offset and coefficient check up to the horizon.
    VerifyAll,
    /// Finite-time exponents against the two limits.
    Oscillate,
    /// Strong-dissipativity scan of the limit family.
    Henon,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum ModeArg {
    Geometric,
    Synthetic,
}

#[derive(Deserialize, Debug)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    params: Params,
    #[serde(default)]
    mode: Option<Mode>,
    #[serde(rename = "M", default)]
    m: Option<u64>,
    #[serde(default)]
    seeds: Vec<u64>,
    #[serde(default)]
    output_dir: Option<PathBuf>,
    #[serde(default)]
    fold: Option<FoldConfig>,
    /// Initial tangent vector `(c^s, c^u)`.
    #[serde(default)]
    c0: Option<[f64; 2]>,
    /// Start point as fractions of the half-sides of the first rectangle.
    #[serde(default)]
    start: Option<[f64; 2]>,
    #[serde(default)]
    henon: Option<HenonConfig>,
}

#[derive(Deserialize, Serialize, Debug, Clone, Copy)]
#[serde(deny_unknown_fields)]
struct HenonConfig {
    #[serde(default = "default_mu")]
    mu: f64,
    #[serde(default)]
    nu: f64,
    #[serde(default = "default_radius")]
    radius: f64,
    #[serde(default = "default_grid")]
    grid_n: usize,
}

fn default_mu() -> f64 {
    -2.0
}
fn default_radius() -> f64 {
    0.005
}
fn default_grid() -> usize {
    41
}

impl Default for HenonConfig {
    fn default() -> Self {
        Self { mu: default_mu(), nu: 0.0, radius: default_radius(), grid_n: default_grid() }
    }
}

/// Everything a subcommand needs after flags and config are merged.
struct Run {
    params: Params,
    mode: Mode,
    horizon: Option<u64>,
    seeds: Vec<u64>,
    out: PathBuf,
    fold: FoldConfig,
    c0: [f64; 2],
    start: [f64; 2],
    henon: HenonConfig,
    plot_data: bool,
    skip_feasibility: bool,
}

enum Failure {
    /// Exit 1.
    Verification(String),
    /// Exit 2.
    Usage(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Domain(_) | Error::Config(_) | Error::Precondition(_) | Error::Io(_) | Error::OutOfRange { .. } => {
                Failure::Usage(e.to_string())
            }
            Error::Range(_)
            | Error::Infeasible(_)
            | Error::SearchExhausted { .. }
            | Error::Model(_)
            | Error::BoundViolation { .. } => Failure::Verification(e.to_string()),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Usage(format!("{e:#}"))
    }
}

type Outcome = std::result::Result<bool, Failure>;

fn load_config(path: &Path) -> anyhow::Result<RunConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    } else {
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

fn merge(cli: &Cli) -> std::result::Result<Run, Failure> {
    let cfg = match &cli.config {
        Some(p) => Some(load_config(p)?),
        None => None,
    };
    let params = cfg.as_ref().map_or_else(Params::reference, |c| c.params.clone());
    params.validate()?;
    let mode = match cli.mode {
        Some(ModeArg::Geometric) => Mode::Geometric,
        Some(ModeArg::Synthetic) => Mode::Synthetic,
        None => cfg.as_ref().and_then(|c| c.mode).unwrap_or(Mode::Geometric),
    };
    let horizon = cli.horizon.or(cfg.as_ref().and_then(|c| c.m));
    if horizon == Some(0) {
        return Err(Failure::Usage("horizon M must be at least 1".into()));
    }
    let seeds =
        if cli.seed.is_empty() { cfg.as_ref().map(|c| c.seeds.clone()).unwrap_or_default() } else { cli.seed.clone() };
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.as_ref().and_then(|c| c.output_dir.clone()))
        .unwrap_or_else(|| PathBuf::from("ftle-out"));
    Ok(Run {
        params,
        mode,
        horizon,
        seeds,
        out,
        fold: cfg.as_ref().and_then(|c| c.fold.clone()).unwrap_or_default(),
        c0: cfg.as_ref().and_then(|c| c.c0).unwrap_or([1.0, 1.0]),
        start: cfg.as_ref().and_then(|c| c.start).unwrap_or([0.5, 0.5]),
        henon: cfg.as_ref().and_then(|c| c.henon).unwrap_or_default(),
        plot_data: cli.plot_data,
        skip_feasibility: cli.skip_feasibility,
    })
}

/// Feasibility gate, then `β′`, `k0` and `ξ` where the config leaves them out.
fn derive(run: &Run, horizon: u64) -> std::result::Result<Params, Failure> {
    let p = &run.params;
    let m_max = (horizon as usize).max(DEFAULT_M_MAX);
    if !run.skip_feasibility {
        let rep = parameters::check_oe(p)?;
        if !rep.feasible {
            return Err(Failure::Verification(format!(
                "infeasible parameters, violated: {}",
                rep.violated().join(", ")
            )));
        }
        return Ok(p.with_derived(m_max)?);
    }
    if p.k0.is_some() && p.xi.is_some() {
        return Ok(p.clone());
    }
    p.with_derived(m_max).map_err(|e| {
        Failure::Usage(format!("cannot derive k0 and xi without feasibility ({e}); set them in the config"))
    })
}

fn out_dir(run: &Run) -> std::result::Result<&Path, Failure> {
    std::fs::create_dir_all(&run.out).map_err(|e| Failure::Usage(format!("creating {}: {e}", run.out.display())))?;
    Ok(&run.out)
}

fn cmd_feasibility(run: &Run) -> Outcome {
    let rep = parameters::check_oe(&run.params)?;
    let dir = out_dir(run)?;
    write_json_file(
        &dir.join("feasibility.json"),
        &json!({ "params": run.params, "feasible": rep.feasible, "per_constraint": rep }),
    )?;
    for c in &rep.per_constraint {
        println!("{:<22} {:<4} lhs_log = {}", c.id, if c.ok { "ok" } else { "FAIL" }, fmt17(c.lhs_log));
    }
    if rep.feasible {
        println!("feasible");
    } else {
        println!("infeasible: violated {}", rep.violated().join(", "));
    }
    Ok(rep.feasible)
}

fn cmd_sequences(run: &Run) -> Outcome {
    let horizon = run.horizon.unwrap_or(40);
    let p = derive(run, horizon)?;
    let (k0, xi) = p.require_k0_xi()?;
    let m_max = (horizon as usize).max(DEFAULT_M_MAX);
    let table = SequenceTable::build(&p, k0 + m_max as u64 + 2, sequences::DEFAULT_TOL_LOG)?;
    let dir = out_dir(run)?;
    let dump = SequenceTable::build(&p, k0 + horizon, sequences::DEFAULT_TOL_LOG)?;
    dump.write_csv(std::io::BufWriter::new(std::fs::File::create(dir.join("sequences.csv")).map_err(Error::from)?))?;
    let ledger = parameters::check_ledger(&p, &table, k0, xi, m_max)?;
    write_json_file(
        &dir.join("constants.json"),
        &json!({ "beta_prime": p.beta_prime, "k0": k0, "xi": fmt17(xi), "M_max": m_max, "ledger": ledger }),
    )?;
    println!("k0 = {k0}, xi = {}, n^H_k0 = {}", fmt17(xi), table.nh(k0)?);
    let failed: Vec<_> = ledger.iter().filter(|c| !c.ok).map(|c| c.id).collect();
    if !failed.is_empty() {
        println!("ledger violated: {}", failed.join(", "));
    }
    Ok(failed.is_empty())
}

fn write_claims(dir: &Path, name: &str, reps: &[ClaimReport]) -> std::result::Result<Option<String>, Failure> {
    let f = std::fs::File::create(dir.join(name)).map_err(Error::from)?;
    geometry::write_margin_csv(std::io::BufWriter::new(f), reps)?;
    let worst = reps.iter().map(|r| r.min_margin_log).fold(f64::INFINITY, f64::min);
    let bad = reps.iter().find(|r| !r.passed());
    println!(
        "{:<4} {name:<24} rows = {:<4} min_margin_log = {}",
        if bad.is_none() { "PASS" } else { "FAIL" },
        reps.len(),
        fmt17(worst)
    );
    Ok(bad.map(|r| {
        let what = r.worst_check().map_or("", |c| c.0);
        format!("{name}: {} at k = {}, m = {} ({what})", r.claim, r.k, r.m)
    }))
}

fn cmd_verify_all(run: &Run) -> Outcome {
    let big_m = run.horizon.unwrap_or(30);
    let p = derive(run, big_m)?;
    let (k0, xi) = p.require_k0_xi()?;
    let m_max = (big_m as usize).max(DEFAULT_M_MAX);
    let mut failures = Vec::new();

    let table = SequenceTable::build(&p, k0 + m_max as u64 + 2, sequences::DEFAULT_TOL_LOG)?;
    for c in parameters::check_ledger(&p, &table, k0, xi, m_max)? {
        if !c.ok {
            println!("FAIL ledger {} (margin {}, index {:?})", c.id, fmt17(c.margin), c.index);
            failures.push(format!("ledger: {}", c.id));
        }
    }

    let model = Model::assemble(&p, big_m + 1, &run.fold)?;
    let dir = out_dir(run)?;

    let eps = sequences::verify_eps_step_bound(&model.table, k0, big_m)?;
    let eps_reps: Vec<_> =
        eps.margins.iter().map(|&(m, x)| ClaimReport::from_checks("eps_step", k0, m, vec![("eps_step", x)])).collect();
    let checks: [(&str, Vec<ClaimReport>); 6] = [
        ("eps_step.csv", eps_reps),
        ("in_k.csv", geometry::verify_in_k_range(&model, k0, big_m)?),
        ("vertical_image.csv", geometry::verify_range(&model, k0, big_m, geometry::verify_vertical_image)?),
        ("horizontal_image.csv", geometry::verify_range(&model, k0, big_m, geometry::verify_horizontal_image)?),
        ("nesting.csv", geometry::verify_nesting(&model, k0, big_m)?),
        ("fold_offset.csv", geometry::verify_fold_offset_bound(&model, 9, big_m + 1)?),
    ];
    for (name, reps) in &checks {
        if let Some(f) = write_claims(dir, name, reps)? {
            failures.push(f);
        }
    }

    let mut src = GeometricSource::at_fraction(&model, run.start[0], run.start[1])?;
    match cocycle::run_product(&p, &mut src, big_m) {
        Ok(states) => {
            let f = std::fs::File::create(dir.join("coefficient_bounds.csv")).map_err(Error::from)?;
            cocycle::write_bounds_csv(std::io::BufWriter::new(f), &states)?;
            let bad = states.iter().find(|s| !cocycle::check_coefficient_bounds(s));
            println!(
                "{:<4} {:<24} rows = {}",
                if bad.is_none() { "PASS" } else { "FAIL" },
                "coefficient_bounds.csv",
                states.len()
            );
            if let Some(s) = bad {
                failures.push(format!("coefficient_bounds.csv: m = {}", s.m));
            }
        }
        Err(e @ Error::BoundViolation { .. }) => {
            println!("FAIL coefficient_bounds.csv {e}");
            failures.push(format!("coefficient_bounds.csv: {e}"));
        }
        Err(e) => return Err(e.into()),
    }

    if let Some(first) = failures.first() {
        println!("first failure: {first}");
    }
    Ok(failures.is_empty())
}

fn osc_rows(rep: &OscillationReport) -> impl Iterator<Item = Vec<String>> + '_ {
    rep.rows.iter().map(|r| {
        vec![
            r.m.to_string(),
            r.parity.to_string(),
            r.n_m.to_string(),
            fmt17(r.fte),
            fmt17(r.limit),
            fmt17(r.abs_err),
            r.sandwich_ok.to_string(),
        ]
    })
}

const OSC_HEADER: [&str; 7] = ["m", "parity", "N_m", "fte", "limit", "abs_err", "sandwich_ok"];

fn print_summary(label: &str, rep: &OscillationReport) {
    let s = &rep.summary;
    println!(
        "{label}: even {} (limit {}), odd {} (limit {}), gap {}, m* = {:?}, verdict {}",
        fmt17(s.even_terminal),
        fmt17(s.even_limit),
        fmt17(s.odd_terminal),
        fmt17(s.odd_limit),
        fmt17(s.gap),
        s.m_star,
        if s.verdict { "oscillation confirmed" } else { "not confirmed" }
    );
}

fn cmd_oscillate(run: &Run) -> Outcome {
    let big_m = run.horizon.unwrap_or(400);
    let p = derive(run, big_m)?;
    let (k0, _) = p.require_k0_xi()?;
    let dir = out_dir(run)?;
    match run.mode {
        Mode::Geometric => {
            let model = Model::assemble(&p, big_m, &run.fold)?;
            let mut src = GeometricSource::at_fraction(&model, run.start[0], run.start[1])?;
            let rep = cocycle::oscillation_report(&model.params, &mut src, run.c0, big_m)?;
            write_csv_file(&dir.join("oscillation.csv"), &OSC_HEADER, osc_rows(&rep))?;
            write_json_file(&dir.join("summary.json"), &rep.summary)?;
            if run.plot_data {
                let rows = rep.rows.iter().map(|r| vec![r.m.to_string(), fmt17(r.fte)]);
                write_csv_file(&dir.join("fte_series.csv"), &["m", "fte"], rows)?;
            }
            print_summary("geometric", &rep);
            Ok(rep.summary.verdict)
        }
        Mode::Synthetic => {
            if run.seeds.is_empty() {
                return Err(Failure::Usage("synthetic mode needs at least one seed".into()));
            }
            let table = SequenceTable::build(&p, k0 + big_m + 1, sequences::DEFAULT_TOL_LOG)?;
            let reps = cocycle::synthetic_reports(&p, &table, &run.seeds, run.c0, big_m)?;
            let mut header = vec!["seed"];
            header.extend(OSC_HEADER);
            let rows = reps.iter().flat_map(|(seed, rep)| {
                osc_rows(rep).map(move |mut r| {
                    r.insert(0, seed.to_string());
                    r
                })
            });
            write_csv_file(&dir.join("oscillation.csv"), &header, rows)?;
            if run.plot_data {
                let rows = reps.iter().flat_map(|(seed, rep)| {
                    rep.rows.iter().map(move |r| vec![seed.to_string(), r.m.to_string(), fmt17(r.fte)])
                });
                write_csv_file(&dir.join("fte_series.csv"), &["seed", "m", "fte"], rows)?;
            }
            let verdict = reps.iter().all(|(_, r)| r.summary.verdict);
            let first = &reps[0].1.summary;
            let runs: Vec<_> = reps.iter().map(|(seed, r)| json!({ "seed": seed, "summary": r.summary })).collect();
            write_json_file(
                &dir.join("summary.json"),
                &json!({
                    "even_limit": first.even_limit,
                    "odd_limit": first.odd_limit,
                    "gap": first.gap,
                    "verdict": verdict,
                    "runs": runs,
                }),
            )?;
            for (seed, rep) in &reps {
                print_summary(&format!("seed {seed}"), rep);
            }
            Ok(verdict)
        }
    }
}

fn cmd_henon(run: &Run) -> Outcome {
    let h = run.henon;
    let rep = henon::scan_dissipative_region(RenormParams::new(h.mu, h.nu), h.radius, h.grid_n)?;
    let dir = out_dir(run)?;
    let f = std::fs::File::create(dir.join("henon_region.csv")).map_err(Error::from)?;
    henon::write_region_csv(std::io::BufWriter::new(f), &rep)?;
    write_json_file(&dir.join("summary.json"), &rep)?;
    println!(
        "r* = {} of radius {}; {} of {} grid points in the center's dissipative component{}",
        fmt17(rep.r_star),
        fmt17(rep.radius),
        rep.component_size,
        rep.points.len(),
        if rep.low_resolution { " (low resolution)" } else { "" }
    );
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = merge(&cli).and_then(|run| match cli.cmd {
        Cmd::Feasibility => cmd_feasibility(&run),
        Cmd::Sequences => cmd_sequences(&run),
        Cmd::VerifyAll => cmd_verify_all(&run),
        Cmd::Oscillate => cmd_oscillate(&run),
        Cmd::Henon => cmd_henon(&run),
    });
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Verification(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
