use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use prophet_lab::analysis::audit_composite;
use prophet_lab::evaluation::{evaluate, evaluate_exact, EvalOptions};
use prophet_lab::exec::{map_items, Execution};
use prophet_lab::instances::{generate, Instance, INSTANCE_EXT};
use prophet_lab::policies::spec::{parse_call, parse_number};
use prophet_lab::policies::{
    build, eor_to_roe, measured_roe, roe_to_eor, sample_threshold, single_sample_roe_to_eor, OnlinePolicy,
    ReductionParams, POLICY_NAMES,
};
use prophet_lab::verify::{run_suite, VerifyConfig, SUITES};
use prophet_lab::{LabError, MetricReport, Mode};

const CSV_HEADER: &str = MetricReport::CSV_HEADER;

const GENERATORS: &str = "example1(eps), example2(n), example3(eps), mpower(n,M), roe_ub(eps), risk(eps), \
                          iid_k_uniform(n,k), pbmp_pairs(n,grid)";

#[derive(Parser)]
#[command(
    name = "prophet-lab",
    version,
    about = "Exact and Monte Carlo evaluation of online selection policies on discrete prophet instances",
    after_help = "Generators and policies use the mini-language name(key=value,...), \
                  e.g. --gen \"example1(eps=0.1)\" --policy \"fixed_threshold(t=1.05)\".\n\
                  Set PROPHET_LAB_THREADS to cap the worker pool."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an instance file.
    Gen(GenArgs),
    /// Evaluate one or more policies on an instance.
    Eval(EvalArgs),
    /// Run a reduction, report the measured subroutine quality and the floor.
    Reduce(ReduceArgs),
    /// Run a named verification suite.
    Verify(VerifyArgs),
    /// Sweep a generator parameter over a list of values.
    Sweep(SweepArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum, PartialEq, Eq)]
enum ModeArg {
    Exact,
    Mc,
}

#[derive(Clone, Copy, ValueEnum)]
enum Direction {
    Roe2eor,
    Eor2roe,
    SingleSample,
}

#[derive(Args)]
struct GenArgs {
    #[arg(help = format!("generator name or spec; one of: {GENERATORS}"))]
    generator: String,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long = "M")]
    m: Option<f64>,
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    /// Output path (defaults to `<label>.pli.json` in the current directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Source {
    /// Instance file.
    #[arg(long, conflicts_with = "gen")]
    instance: Option<PathBuf>,
    /// Generator spec, e.g. "example2(n=3)".
    #[arg(long)]
    gen: Option<String>,
    /// Arrival order as comma-separated element indices.
    #[arg(long, value_delimiter = ',')]
    order: Option<Vec<usize>>,
}

#[derive(Args)]
struct ModeArgs {
    #[arg(long, value_enum, default_value = "exact")]
    mode: ModeArg,
    /// Monte Carlo trials (required with --mode mc).
    #[arg(long)]
    trials: Option<u64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Monte Carlo only: fresh uniformly random arrival order per trial.
    #[arg(long)]
    random_order: bool,
}

#[derive(Args)]
struct Output {
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Write machine output here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long, required = true, help = format!("policy spec, repeatable; one of: {}", POLICY_NAMES.join(", ")))]
    policy: Vec<String>,
    #[command(flatten)]
    mode: ModeArgs,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct ReduceArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long, value_enum)]
    direction: Direction,
    /// Subroutine policy spec (defaults: optimal_roe / optimal_eor).
    #[arg(long)]
    sub: Option<String>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    k: Option<f64>,
    #[arg(long)]
    c: Option<f64>,
    /// Skip measuring the subroutine and use this value.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(default_value = "all", help = format!("suite: all, {}", SUITES.join(", ")))]
    suite: String,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Boost probability for the boost suite.
    #[arg(long, default_value_t = 0.05)]
    x: f64,
    /// Monte Carlo trials for the BLM tables.
    #[arg(long, default_value_t = 100_000)]
    trials: u64,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct SweepArgs {
    /// Generator spec holding the fixed parameters, e.g. "mpower(M=10)".
    #[arg(long)]
    gen: String,
    /// Parameter to vary.
    #[arg(long)]
    param: String,
    /// Values, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<String>,
    /// Policy spec; repeat for several policies.
    #[arg(long)]
    policy: Vec<String>,
    #[command(flatten)]
    mode: ModeArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Verify,
}

impl From<LabError> for Failure {
    fn from(e: LabError) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

type CliResult<T> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Ok(v) = std::env::var("PROPHET_LAB_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => {
                eprintln!("error: PROPHET_LAB_THREADS must be a positive integer, got {v:?}");
                return ExitCode::from(2);
            }
        }
    }
    let result = match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Reduce(a) => cmd_reduce(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Sweep(a) => cmd_sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Verify) => ExitCode::from(1),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn emit(out: &Option<PathBuf>, text: &str) -> CliResult<()> {
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn to_json<T: serde::Serialize>(v: &T) -> CliResult<String> {
    serde_json::to_string_pretty(v).map(|s| s + "\n").map_err(|e| Failure::Usage(e.to_string()))
}

/// Merges `--n`-style flags into a generator spec string.
fn gen_spec(a: &GenArgs) -> CliResult<String> {
    let call = parse_call(&a.generator)?;
    let mut args: Vec<(String, String)> = call.args.clone();
    let mut set = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            args.retain(|(key, _)| key != k);
            args.push((k.to_string(), v));
        }
    };
    set("n", a.n.map(|v| v.to_string()));
    set("eps", a.eps.map(|v| v.to_string()));
    set("M", a.m.map(|v| v.to_string()));
    set("grid", a.grid.map(|v| v.to_string()));
    set("k", a.k.map(|v| v.to_string()));
    Ok(render_call(&call.name, &args))
}

fn render_call(name: &str, args: &[(String, String)]) -> String {
    if args.is_empty() {
        return name.to_string();
    }
    let inner: Vec<String> = args.iter().map(|(k, v)| format!("{k}={v}")).collect();
    format!("{name}({})", inner.join(","))
}

fn file_stem(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect::<String>()
        .trim_matches('_')
        .to_string()
}

fn cmd_gen(a: GenArgs) -> CliResult<()> {
    let spec = gen_spec(&a)?;
    let inst = generate(&spec)?;
    let path = a.out.clone().unwrap_or_else(|| PathBuf::from(format!("{}{INSTANCE_EXT}", file_stem(inst.label()))));
    inst.save(&path)?;
    let eopt = inst.family().expected_offline_value(inst.dist(), 0);
    eprintln!("label      {}", inst.label());
    eprintln!("elements   {}", inst.ground_size());
    eprintln!("family     {}", inst.family().kind());
    eprintln!("E[f]       {}{}", num(eopt.value), if eopt.exact { "" } else { " (sampled)" });
    eprintln!("E[max]     {}", num(inst.dist().expected_max()));
    eprintln!("written    {}", path.display());
    Ok(())
}

fn num(x: f64) -> String {
    if x.abs() >= 1e9 {
        format!("{x:.6e}")
    } else {
        x.to_string()
    }
}

fn load_source(s: &Source) -> CliResult<Instance> {
    let inst = match (&s.instance, &s.gen) {
        (Some(p), None) => Instance::load(p)?,
        (None, Some(g)) => generate(g)?,
        _ => return Err(Failure::Usage("exactly one of --instance or --gen is required".into())),
    };
    match &s.order {
        Some(order) => Ok(inst.reordered(order.clone())?),
        None => Ok(inst),
    }
}

fn mode_of(m: &ModeArgs) -> CliResult<Mode> {
    match (m.mode, m.trials) {
        (ModeArg::Exact, None) => {
            if m.random_order {
                return Err(Failure::Usage("--random-order needs --mode mc".into()));
            }
            Ok(Mode::Exact)
        }
        (ModeArg::Exact, Some(_)) => Err(Failure::Usage("--trials is only valid with --mode mc".into())),
        (ModeArg::Mc, Some(0)) => Err(Failure::Usage("--trials must be positive".into())),
        (ModeArg::Mc, Some(trials)) => Ok(Mode::MonteCarlo { trials, seed: m.seed }),
        (ModeArg::Mc, None) => Err(Failure::Usage("--mode mc requires --trials".into())),
    }
}

fn eval_options(m: &ModeArgs) -> EvalOptions {
    EvalOptions { random_order: m.random_order, ..EvalOptions::default() }
}

fn print_table(reports: &[MetricReport]) {
    eprintln!("{:<32} {:>10} {:>10} {:>10} {:>10} {:>10}", "policy", "roe", "eor", "eoir", "pbm", "pbm_p");
    for r in reports {
        eprintln!(
            "{:<32} {:>10.6} {:>10.6} {:>10.4} {:>10.6} {:>10.6}",
            truncate(&r.policy, 32),
            r.roe,
            r.eor,
            r.eoir,
            r.pbm,
            r.pbm_p
        );
    }
}

fn truncate(s: &str, width: usize) -> String {
    if s.chars().count() <= width {
        s.to_string()
    } else {
        s.chars().take(width - 1).collect::<String>() + "~"
    }
}

fn cmd_eval(a: EvalArgs) -> CliResult<()> {
    let inst = load_source(&a.source)?;
    let mode = mode_of(&a.mode)?;
    let opts = eval_options(&a.mode);
    let mut reports = Vec::with_capacity(a.policy.len());
    for spec in &a.policy {
        let policy = build(spec, &inst)?;
        reports.push(evaluate(&inst, policy.as_ref(), mode, &opts)?);
    }
    eprintln!("{} [{}]", inst.label(), mode);
    print_table(&reports);
    let text = match a.output.format {
        Format::Json if reports.len() == 1 => to_json(&reports[0])?,
        Format::Json => to_json(&reports)?,
        Format::Csv => csv(&reports),
    };
    emit(&a.output.out, &text)
}

fn csv(reports: &[MetricReport]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in reports {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

fn cmd_reduce(a: ReduceArgs) -> CliResult<()> {
    let inst = load_source(&a.source)?;
    let (alpha, metric, value, floor, report, audit) = match a.direction {
        Direction::Roe2eor => {
            let sub = a.sub.as_deref().unwrap_or("optimal_roe");
            let mut params = ReductionParams::default();
            params.gamma = a.gamma.unwrap_or(params.gamma);
            params.delta = a.delta.unwrap_or(params.delta);
            params.k = a.k.unwrap_or(params.k);
            let composite = match a.alpha {
                Some(alpha) => {
                    params.alpha = alpha;
                    params.c = a.c.unwrap_or_else(|| params.min_c());
                    let sub = build(sub, &inst)?;
                    prophet_lab::policies::RoeToEor::with_subroutine(&inst, sub, params, a.seed)?
                }
                None => roe_to_eor(&inst, sub, params, a.c, a.seed)?,
            };
            let audit = audit_composite(&inst, &composite)?;
            let report = evaluate_exact(&inst, &composite)?;
            let p = composite.params();
            (p.alpha, "eor", report.eor, Some(p.alpha / 12.0), report, Some(serde_json::to_value(&audit).unwrap()))
        }
        Direction::Eor2roe => {
            let sub = a.sub.as_deref().unwrap_or("optimal_eor");
            let composite = eor_to_roe(&inst, sub, a.alpha, a.seed)?;
            let report = evaluate_exact(&inst, &composite)?;
            let meta = composite.metadata();
            (composite.alpha(), "roe", report.roe, Some(composite.guarantee()), report, Some(meta))
        }
        Direction::SingleSample => {
            let composite = single_sample_roe_to_eor(&inst)?;
            let alpha = match a.alpha {
                Some(x) => x,
                None => {
                    let sub: Arc<dyn OnlinePolicy> = Arc::new(sample_threshold(&inst));
                    measured_roe(&inst, &sub, a.seed)?
                }
            };
            let report = evaluate_exact(&inst, &composite)?;
            (alpha, "eor", report.eor, None, report, None)
        }
    };
    let holds = floor.map(|f| value >= f - 1e-9);
    eprintln!("{} {}", inst.label(), report.policy);
    eprintln!("alpha      {alpha:.6}");
    eprintln!("{metric:<10} {value:.6}");
    match floor {
        Some(f) => eprintln!("floor      {f:.6} ({})", if holds == Some(true) { "holds" } else { "VIOLATED" }),
        None => eprintln!("floor      measured only; value/alpha = {:.6}", value / alpha),
    }
    let text = match a.output.format {
        Format::Json => to_json(&json!({
            "alpha": alpha,
            "metric": metric,
            "value": value,
            "floor": floor,
            "holds": holds,
            "report": report,
            "audit": audit,
        }))?,
        Format::Csv => format!(
            "label,policy,alpha,metric,value,floor,holds\n{},{},{alpha},{metric},{value},{},{}\n",
            prophet_lab::evaluation::csv_quote(&report.label),
            prophet_lab::evaluation::csv_quote(&report.policy),
            floor.map_or(String::new(), |f| f.to_string()),
            holds.map_or(String::new(), |h| h.to_string()),
        ),
    };
    emit(&a.output.out, &text)
}

fn cmd_verify(a: VerifyArgs) -> CliResult<()> {
    let cfg = VerifyConfig { seed: a.seed, x: a.x, trials: a.trials };
    let checks = run_suite(&a.suite, &cfg)?;
    for c in &checks {
        eprintln!("{} {:<48} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    eprintln!("{} checks, {failed} failed", checks.len());
    let text = match a.output.format {
        Format::Json => to_json(&checks)?,
        Format::Csv => {
            let mut s = String::from("check,passed,detail\n");
            for c in &checks {
                s.push_str(&format!(
                    "{},{},{}\n",
                    prophet_lab::evaluation::csv_quote(&c.name),
                    c.passed,
                    prophet_lab::evaluation::csv_quote(&c.detail)
                ));
            }
            s
        }
    };
    emit(&a.output.out, &text)?;
    if failed > 0 {
        Err(Failure::Verify)
    } else {
        Ok(())
    }
}

fn cmd_sweep(a: SweepArgs) -> CliResult<()> {
    if a.policy.is_empty() {
        return Err(LabError::BadParams("sweep needs at least one --policy".into()).into());
    }
    let mode = mode_of(&a.mode)?;
    let opts = EvalOptions { exec: Execution::Sequential, ..eval_options(&a.mode) };
    let base = parse_call(&a.gen)?;
    for v in &a.values {
        parse_number(v)?;
    }
    let rows: Vec<(String, String)> =
        a.values.iter().flat_map(|v| a.policy.iter().map(move |p| (v.clone(), p.clone()))).collect();
    let results = map_items(Execution::default(), &rows, |(value, policy)| -> Result<MetricReport, LabError> {
        let mut args = base.args.clone();
        args.retain(|(k, _)| k != &a.param);
        args.push((a.param.clone(), value.clone()));
        let inst = generate(&render_call(&base.name, &args))?;
        let p = build(policy, &inst)?;
        evaluate(&inst, p.as_ref(), mode, &opts)
    });
    let mut text = format!("{},{CSV_HEADER}\n", a.param);
    let mut reports = Vec::new();
    for ((value, _), r) in rows.iter().zip(results) {
        let r = r?;
        text.push_str(&format!("{value},{}\n", r.csv_row()));
        reports.push(r);
    }
    print_table(&reports);
    emit(&a.out, &text)
}
