//! Command-line driver: synthesize and re-verify adversarial regions, run
//! attacks and print the sample-complexity tables.
//!
//! Exit codes: 0 verified (or success), 1 unverified, 2 no adversarial
//! examples found, 3 I/O, parse or parameter errors.

mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use serde_json::json;
use symadex::attack::{collect_attacks_with, AttackConfig, AttackMethod};
use symadex::geometry::{sensitivity_map, LEVELS};
use symadex::region::{
    load_region, map_shape, parse_pgm, parse_sensitivity_csv, save_region, sensitivity_csv, sensitivity_pgm,
    write_atomic, QueryMeta, RegionMeta,
};
use symadex::relaxation::verify_region;
use symadex::synthesis::{synthesize, IterationLog, SynthesisConfig};
use symadex::theory::{
    delta_bound, expected_samples_progress, expected_samples_region, expected_samples_single, simulate_cut_chain,
    simulate_single_cut, TheoryInstance,
};
use symadex::{Error, LabeledQuery, Network, Polyhedron, RelaxationKind};

const REGION_FILE: &str = "region.json";
const CSV_FILE: &str = "sensitivity.csv";
const PGM_FILE: &str = "sensitivity.pgm";
const LOG_FILE: &str = "synthesis.log";
const ATTACKS_FILE: &str = "attacks.csv";

/// Monte Carlo runs are skipped when the expected draws per trial exceed this.
const MC_LIMIT: f64 = 1e6;
/// Rows of the cut-chain table.
const CHAIN_ROWS: usize = 10;

#[derive(Parser)]
#[command(name = "symadex", version, about = "Verified adversarial regions for ReLU networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a verified adversarial region around an input.
    #[command(args_override_self = true)]
    Synthesize(SynthArgs),
    /// Re-verify a saved region against a network.
    #[command(args_override_self = true)]
    Verify(VerifyArgs),
    /// Collect adversarial examples and write them as CSV.
    #[command(args_override_self = true)]
    Attack(AttackArgs),
    /// Print the sample-complexity formulas next to Monte Carlo estimates.
    #[command(args_override_self = true)]
    Theory(TheoryArgs),
    /// Read back any artifact written by this tool and summarize it.
    #[command(args_override_self = true)]
    Show(ShowArgs),
}

#[derive(Args)]
struct QueryArgs {
    /// Network in the `relu-ffn v1` text format.
    #[arg(long)]
    network: PathBuf,
    /// File with the input values, separated by whitespace or commas.
    #[arg(long, conflicts_with = "input_vec")]
    input: Option<PathBuf>,
    /// Inline input values, e.g. "0.1,0.2".
    #[arg(long, allow_hyphen_values = true)]
    input_vec: Option<String>,
    /// Target label.
    #[arg(long)]
    target: usize,
    /// Correct label; defaults to the network's prediction at the input.
    #[arg(long)]
    label: Option<usize>,
    /// L∞ radius around the input.
    #[arg(long)]
    eps: f64,
    #[arg(long, default_value_t = 400)]
    s_plus: usize,
    /// Steps per attack.
    #[arg(long, default_value_t = 40)]
    steps: usize,
    /// Attack step length; defaults to eps/10.
    #[arg(long)]
    step: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    query: QueryArgs,
    #[arg(long, default_value = "triangle")]
    relaxation: RelaxationKind,
    #[arg(long, default_value_t = 256)]
    s_minus: usize,
    #[arg(long, default_value_t = 20)]
    t_max: usize,
    #[arg(long, default_value_t = 5)]
    period: usize,
    #[arg(long, default_value_t = 5)]
    history: usize,
    /// Comma-separated artifacts to write: region, map, log.
    #[arg(long, value_delimiter = ',', default_value = "region,map,log")]
    emit: Vec<Emit>,
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum Emit {
    Region,
    Map,
    Log,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    region: PathBuf,
    #[arg(long)]
    network: PathBuf,
    /// Target label; defaults to the one stored with the region.
    #[arg(long)]
    target: Option<usize>,
    /// Relaxation; defaults to the one stored with the region.
    #[arg(long)]
    relaxation: Option<RelaxationKind>,
}

#[derive(Args)]
struct AttackArgs {
    #[command(flatten)]
    query: QueryArgs,
}

#[derive(Args)]
struct TheoryArgs {
    #[arg(long, default_value_t = 3)]
    d: usize,
    #[arg(long, default_value_t = 0.5)]
    sigma: f64,
    /// Smallest cosine between the fitted and the true cut normal.
    #[arg(long, default_value_t = 1.0)]
    omega: f64,
    /// Number of cuts.
    #[arg(long, default_value_t = 1)]
    m: usize,
    /// Volume fraction kept by a single cut.
    #[arg(long = "v", default_value_t = 0.5)]
    v: f64,
    /// Volume fraction kept by all cuts together.
    #[arg(long = "V", default_value_t = 0.9)]
    big_v: f64,
    #[arg(long, default_value_t = 10_000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ShowArgs {
    /// A region JSON, map CSV, attack CSV, graymap or synthesis log.
    file: PathBuf,
}

/// A failed command: exit code and message.
struct Failure {
    code: u8,
    msg: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if matches!(e, Error::NoAdversarialExamples) {
            2
        } else {
            3
        };
        Failure {
            code,
            msg: e.to_string(),
        }
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure {
        code: 3,
        msg: msg.into(),
    }
}

type Outcome = Result<u8, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let args = match config::expand(std::env::args().collect()) {
        Ok(a) => a,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(3);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 3 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Synthesize(a) => cmd_synthesize(&a),
        Command::Verify(a) => cmd_verify(&a),
        Command::Attack(a) => cmd_attack(&a),
        Command::Theory(a) => cmd_theory(&a),
        Command::Show(a) => cmd_show(&a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}

fn parse_values(text: &str) -> Result<Vec<f64>, Failure> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().map_err(|_| usage(format!("not a number: `{t}`"))))
        .collect()
}

fn load_query(a: &QueryArgs) -> Result<(Network, LabeledQuery), Failure> {
    let net = Network::load(&a.network)?;
    let x = match (&a.input, &a.input_vec) {
        (Some(path), None) => {
            let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            parse_values(&text)?
        }
        (None, Some(v)) => parse_values(v)?,
        _ => return Err(usage("give exactly one of --input and --input-vec")),
    };
    if x.len() != net.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: net.input_dim(),
            got: x.len(),
        }
        .into());
    }
    let label = match a.label {
        Some(l) => l,
        None => net.classify(&x)?,
    };
    let q = LabeledQuery::new(x, label, a.target, a.eps)?;
    q.validate(&net)?;
    Ok((net, q))
}

fn ensure_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| usage(format!("{}: {e}", dir.display())))
}

fn log_text(trace: &[IterationLog]) -> String {
    let mut out = String::from("t\tmethod\tmargin\tnegatives\tpositives\tprogress\n");
    for l in trace {
        let method = l.method.map_or("-", |m| m.name());
        let _ = writeln!(
            out,
            "{}\t{}\t{:.16e}\t{}\t{}\t{}",
            l.t, method, l.margin, l.negatives, l.positives, l.progress
        );
    }
    out
}

fn cmd_synthesize(a: &SynthArgs) -> Outcome {
    let (net, q) = load_query(&a.query)?;
    let cfg = SynthesisConfig {
        s_plus: a.query.s_plus,
        s_minus: a.s_minus,
        t_max: a.t_max,
        period: a.period,
        history: a.history,
        relaxation: a.relaxation,
        seed: a.query.seed,
        attack_steps: a.query.steps,
        attack_step: a.query.step,
        ..Default::default()
    };
    let rep = synthesize(&net, &q, &cfg)?;
    let out = &a.query.out;
    ensure_dir(out)?;
    let mut written = Vec::new();
    if a.emit.contains(&Emit::Region) {
        let meta = RegionMeta {
            query: Some(QueryMeta {
                x_o: q.x_o.clone(),
                y_c: q.y_c,
                y_t: q.y_t,
                epsilon: q.epsilon,
            }),
            method: a.relaxation.name().to_string(),
            verified: rep.verified,
            margin: rep.margin,
            log10_under: rep.under.as_ref().map(|b| b.log10_count),
            log10_over: rep.over.as_ref().map(|b| b.log10_count),
        };
        let path = out.join(REGION_FILE);
        save_region(&path, &rep.region, &meta)?;
        written.push(path);
    }
    if a.emit.contains(&Emit::Map) {
        if let Some(under) = &rep.under {
            let map = sensitivity_map(under, LEVELS);
            let (width, _) = map_shape(map.len());
            let csv = out.join(CSV_FILE);
            write_atomic(&csv, sensitivity_csv(&map, width).as_bytes())?;
            let pgm = out.join(PGM_FILE);
            write_atomic(&pgm, &sensitivity_pgm(&map, width))?;
            written.extend([csv, pgm]);
        }
    }
    if a.emit.contains(&Emit::Log) {
        let path = out.join(LOG_FILE);
        write_atomic(&path, log_text(&rep.trace).as_bytes())?;
        written.push(path);
    }
    info!(
        "{} after {} cuts, margin {:.6}",
        if rep.verified { "verified" } else { "not verified" },
        rep.cuts,
        rep.margin
    );
    let summary = json!({
        "command": "synthesize",
        "verified": rep.verified,
        "margin": rep.margin,
        "cuts": rep.cuts,
        "shrunk": rep.shrunk,
        "theta": rep.theta,
        "attacks": rep.attacks.len(),
        "log10_under": rep.under.as_ref().map(|b| b.log10_count),
        "log10_over": rep.over.as_ref().map(|b| b.log10_count),
        "work_units": rep.work_units,
        "files": written.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
    });
    println!("{summary}");
    Ok(if rep.verified { 0 } else { 1 })
}

fn cmd_verify(a: &VerifyArgs) -> Outcome {
    let net = Network::load(&a.network)?;
    let (region, meta): (Polyhedron, RegionMeta) = load_region(&a.region)?;
    let target = match (a.target, &meta.query) {
        (Some(t), _) => t,
        (None, Some(q)) => q.y_t,
        (None, None) => return Err(usage("region has no stored target; pass --target")),
    };
    let kind = match a.relaxation {
        Some(k) => k,
        None => meta.method.parse()?,
    };
    let v = verify_region(&net, &region, target, kind)?;
    eprintln!("margin {:.6}", v.margin);
    let summary = json!({
        "command": "verify",
        "verified": v.verified,
        "margin": v.margin,
        "target": target,
        "relaxation": kind.name(),
    });
    println!("{summary}");
    Ok(if v.verified { 0 } else { 1 })
}

fn cmd_attack(a: &AttackArgs) -> Outcome {
    let (net, q) = load_query(&a.query)?;
    let template = AttackConfig {
        steps: a.query.steps,
        step_size: a.query.step,
        ..AttackConfig::new(AttackMethod::Pgd, a.query.seed)
    };
    let points = collect_attacks_with(&net, &q, a.query.s_plus, &template)?;
    if points.is_empty() {
        return Err(Error::NoAdversarialExamples.into());
    }
    ensure_dir(&a.query.out)?;
    let mut text = String::new();
    for p in &points {
        let row: Vec<String> = p.iter().map(|v| format!("{v:.16e}")).collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    let path = a.query.out.join(ATTACKS_FILE);
    write_atomic(&path, text.as_bytes())?;
    info!("{} distinct adversarial examples", points.len());
    println!(
        "{}",
        json!({ "command": "attack", "found": points.len(), "file": path.display().to_string() })
    );
    Ok(0)
}

fn rel_err(formula: f64, empirical: f64) -> f64 {
    (empirical - formula).abs() / formula
}

/// Leading cuts of a chain from `u = 1` whose expected draws stay within
/// [`MC_LIMIT`].
fn chain_rows(sigma: f64, v: f64, max: usize) -> Result<usize, Error> {
    let mut u = 1.0;
    for k in 0..max {
        if expected_samples_progress(u, sigma, v)? > MC_LIMIT {
            return Ok(k);
        }
        u = sigma + (u - sigma) * v;
    }
    Ok(max)
}

fn cmd_theory(a: &TheoryArgs) -> Outcome {
    let inst = TheoryInstance::new(a.d, a.sigma, a.omega, a.m)?;
    let delta = delta_bound(&inst)?;
    let single = expected_samples_single(&inst, a.v)?;
    let region = expected_samples_region(&inst, a.big_v)?;
    println!(
        "d={} sigma={} omega={} m={} delta={:.6}",
        a.d, a.sigma, a.omega, a.m, delta
    );
    println!(
        "{:<28} {:>8} {:>14} {:>14} {:>9}",
        "quantity", "approx", "formula", "empirical", "rel.err"
    );
    let mut rows = Vec::new();
    let mut row = |name: String, formula: f64, empirical: Option<f64>| {
        let (emp, err) = match empirical {
            Some(e) => (format!("{e:.6e}"), format!("{:.2}%", 100.0 * rel_err(formula, e))),
            None => ("-".into(), "-".into()),
        };
        println!("{name:<28} {formula:>8.1e} {formula:>14.6e} {emp:>14} {err:>9}");
        rows.push(json!({ "quantity": name, "formula": formula, "empirical": empirical }));
    };
    let mc = |formula: f64, v: f64| -> Result<Option<f64>, Error> {
        if a.trials == 0 || formula > MC_LIMIT {
            return Ok(None);
        }
        Ok(Some(simulate_single_cut(&inst, v, a.trials, a.seed)?.mean))
    };
    row(format!("single cut, v={}", a.v), single, mc(single, a.v)?);
    let per_cut = a.big_v.powf(1.0 / a.m as f64);
    row(
        format!("per cut, V={} over m={}", a.big_v, a.m),
        region,
        mc(region, per_cut)?,
    );
    if a.sigma < 1.0 && a.trials > 0 {
        let rows = chain_rows(a.sigma, a.v, a.m.min(CHAIN_ROWS))?;
        let chain = simulate_cut_chain(1.0, a.sigma, a.v, rows, a.trials, a.seed)?;
        for s in &chain {
            row(
                format!("chain cut {}, u={:.4}", s.iteration, s.u),
                s.formula,
                Some(s.empirical.mean),
            );
        }
    }
    println!("{}", json!({ "command": "theory", "delta": delta, "rows": rows }));
    Ok(0)
}

fn cmd_show(a: &ShowArgs) -> Outcome {
    let path = &a.file;
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    let read_text = || std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())));
    let summary = match ext {
        "json" => {
            let (region, meta): (Polyhedron, RegionMeta) = load_region(path)?;
            json!({
                "kind": "region",
                "dim": region.dim(),
                "rows": region.num_rows(),
                "method": meta.method,
                "verified": meta.verified,
                "margin": meta.margin,
            })
        }
        "pgm" => {
            let bytes = std::fs::read(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            let (w, h, px) = parse_pgm(&bytes)?;
            json!({ "kind": "graymap", "width": w, "height": h, "max": px.iter().max() })
        }
        "csv" => {
            let text = read_text()?;
            let rows: Vec<Vec<f64>> = text
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(parse_values)
                .collect::<Result<_, _>>()?;
            let integral = parse_sensitivity_csv(&text).is_ok();
            json!({
                "kind": if integral { "map" } else { "points" },
                "rows": rows.len(),
                "cols": rows.first().map_or(0, Vec::len),
            })
        }
        "log" => {
            let text = read_text()?;
            let mut lines = text.lines();
            if lines.next() != Some("t\tmethod\tmargin\tnegatives\tpositives\tprogress") {
                return Err(usage(format!("{}: not a synthesis log", path.display())));
            }
            let mut last = None;
            let mut steps = 0;
            for (i, line) in lines.enumerate() {
                let fields: Vec<&str> = line.split('\t').collect();
                let margin = fields.get(2).and_then(|m| m.parse::<f64>().ok());
                if fields.len() != 6 || margin.is_none() {
                    return Err(usage(format!("{}: bad log line {}", path.display(), i + 2)));
                }
                last = margin;
                steps += 1;
            }
            json!({ "kind": "log", "steps": steps, "final_margin": last })
        }
        _ => return Err(usage(format!("{}: unknown artifact type", path.display()))),
    };
    println!("{summary}");
    Ok(0)
}
