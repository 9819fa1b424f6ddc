//! Command-line front end: parse market instances, run the solvers and
//! checkers, and emit JSON, plain-text, or CSV reports.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use galefisher::demand;
use galefisher::equilibrium;
use galefisher::fixtures;
use galefisher::model::{validate_instance, Allocation, MarketInstance};
use galefisher::nsw;
use galefisher::property::{self, Verdict};
use galefisher::utility;
use galefisher::Error as LibError;

#[derive(Parser)]
#[command(
    name = "galefisher",
    about = "Fisher-market computations: demands, Nash welfare, equilibria, and structural checks",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Output format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    /// Seed echoed into reports for reproducibility bookkeeping.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Text,
    Csv,
}

#[derive(Args)]
struct InstanceArg {
    /// Market instance JSON.
    #[arg(long)]
    instance: PathBuf,
}

#[derive(Args)]
struct AgentScope {
    #[command(flatten)]
    instance: InstanceArg,
    /// Agent id; defaults to the only agent when unambiguous.
    #[arg(long)]
    agent: Option<String>,
    /// Budget override; defaults to the agent's budget.
    #[arg(long)]
    budget: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate an agent's utility at a bundle.
    Eval {
        #[command(flatten)]
        scope: AgentScope,
        #[arg(long, value_delimiter = ',')]
        bundle: Vec<f64>,
    },
    /// Utility-maximal affordable bundle at given prices.
    Demand {
        #[command(flatten)]
        scope: AgentScope,
        #[arg(long, value_delimiter = ',')]
        prices: Vec<f64>,
    },
    /// Gale demand: maximizer of b log u(y) - <q, y>.
    GaleDemand {
        #[command(flatten)]
        scope: AgentScope,
        #[arg(long, value_delimiter = ',')]
        prices: Vec<f64>,
    },
    /// Maximize Nash welfare over the instance.
    MaxNsw {
        #[command(flatten)]
        instance: InstanceArg,
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
        #[arg(long, default_value_t = 5000)]
        iters: usize,
    },
    /// Verify a competitive equilibrium.
    CheckCe {
        #[command(flatten)]
        instance: InstanceArg,
        #[arg(long, value_delimiter = ',')]
        prices: Vec<f64>,
        /// Allocation JSON: one row of goods quantities per agent.
        #[arg(long)]
        allocation: PathBuf,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
    },
    /// Verify a thrifty competitive equilibrium.
    CheckThrifty {
        #[command(flatten)]
        instance: InstanceArg,
        #[arg(long, value_delimiter = ',')]
        prices: Vec<f64>,
        #[arg(long)]
        allocation: PathBuf,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
    },
    /// Verify an approximate competitive equilibrium.
    CheckApprox {
        #[command(flatten)]
        instance: InstanceArg,
        #[arg(long, value_delimiter = ',')]
        prices: Vec<f64>,
        #[arg(long)]
        allocation: PathBuf,
        #[arg(long)]
        alpha: f64,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
    },
    /// Grid brute force for equilibria of tiny instances.
    BruteCe {
        #[command(flatten)]
        instance: InstanceArg,
        #[arg(long, default_value_t = 40)]
        grid: usize,
        #[arg(long)]
        thrifty: bool,
    },
    /// Gale-substitutes checks: price direction, and budget direction when
    /// a smaller budget is given.
    CheckSubstitutes {
        #[command(flatten)]
        scope: AgentScope,
        #[arg(long, value_delimiter = ',')]
        prices: Vec<f64>,
        /// Lowered price vector for the price-direction check.
        #[arg(long, value_delimiter = ',')]
        prices2: Option<Vec<f64>>,
        /// Smaller budget for the budget-direction check.
        #[arg(long)]
        budget2: Option<f64>,
    },
    /// Satiation-domination check for satiable utilities.
    CheckSigma {
        #[command(flatten)]
        scope: AgentScope,
        #[arg(long, value_delimiter = ',')]
        prices: Vec<f64>,
    },
    /// Weak-gross-substitutes check for the standard demand.
    CheckWgs {
        #[command(flatten)]
        scope: AgentScope,
        #[arg(long, value_delimiter = ',')]
        prices: Vec<f64>,
        /// Raised price vector.
        #[arg(long, value_delimiter = ',')]
        prices2: Vec<f64>,
    },
    /// Replay a named worked example ('all' runs the whole catalog).
    RunExample { name: String },
    /// Nash-welfare ratio of a given equilibrium against the maximizer.
    Poa {
        #[command(flatten)]
        instance: InstanceArg,
        #[arg(long, value_delimiter = ',')]
        prices: Vec<f64>,
        #[arg(long)]
        allocation: PathBuf,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
    },
    /// Per-agent utility ratios between the welfare maximizer and a given
    /// equilibrium allocation.
    HalfGuarantee {
        #[command(flatten)]
        instance: InstanceArg,
        #[arg(long, value_delimiter = ',')]
        prices: Vec<f64>,
        #[arg(long)]
        allocation: PathBuf,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
    },
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("GALEFISHER_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                AppError::Usage(_) => ExitCode::from(2),
                AppError::Lib(e) => match e {
                    LibError::NumericalFailure(_)
                    | LibError::IterationCap(_)
                    | LibError::UnboundedTransform(_) => ExitCode::from(3),
                    _ => ExitCode::from(2),
                },
            }
        }
    }
}

enum AppError {
    Usage(String),
    Lib(LibError),
}

impl std::fmt::Display for AppError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AppError::Usage(msg) => write!(f, "{msg}"),
            AppError::Lib(e) => write!(f, "{e}"),
        }
    }
}

impl From<LibError> for AppError {
    fn from(e: LibError) -> Self {
        AppError::Lib(e)
    }
}

fn load_instance(path: &PathBuf) -> Result<MarketInstance, AppError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| AppError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let instance = MarketInstance::from_json(&text)
        .map_err(|e| AppError::Usage(format!("bad instance JSON: {e}")))?;
    let violations = validate_instance(&instance);
    if !violations.is_empty() {
        return Err(AppError::Usage(format!(
            "invalid instance: {}",
            violations.join("; ")
        )));
    }
    Ok(instance)
}

fn load_allocation(path: &PathBuf) -> Result<Allocation, AppError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| AppError::Usage(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| AppError::Usage(format!("bad allocation JSON: {e}")))
}

fn pick_agent<'a>(
    instance: &'a MarketInstance,
    scope: &AgentScope,
) -> Result<&'a galefisher::model::Agent, AppError> {
    match &scope.agent {
        Some(id) => instance
            .agents
            .iter()
            .find(|a| &a.id == id)
            .ok_or_else(|| AppError::Usage(format!("no agent with id '{id}'"))),
        None if instance.agents.len() == 1 => Ok(&instance.agents[0]),
        None => Err(AppError::Usage(
            "instance has several agents; pass --agent".into(),
        )),
    }
}

/// Rounds to 12 significant digits for reproducible reports.
fn sig12(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.11e}").parse().unwrap_or(x)
}

fn num(x: f64) -> Value {
    if x.is_finite() {
        json!(sig12(x))
    } else {
        json!(x.to_string())
    }
}

fn nums(xs: &[f64]) -> Value {
    Value::Array(xs.iter().map(|&x| num(x)).collect())
}

struct Report {
    value: Value,
    /// Lines for the text format.
    lines: Vec<String>,
    /// Rows for the CSV format, when the command produces a table.
    csv: Option<Vec<String>>,
    failed: bool,
}

impl Report {
    fn new(value: Value, lines: Vec<String>) -> Self {
        Report {
            value,
            lines,
            csv: None,
            failed: false,
        }
    }
}

fn emit(report: &Report, format: Format, seed: Option<u64>) -> Result<ExitCode, AppError> {
    match format {
        Format::Json => {
            let mut value = report.value.clone();
            if let (Some(seed), Some(map)) = (seed, value.as_object_mut()) {
                map.insert("seed".into(), json!(seed));
            }
            println!("{}", serde_json::to_string_pretty(&value).unwrap());
        }
        Format::Text => {
            for line in &report.lines {
                println!("{line}");
            }
        }
        Format::Csv => match &report.csv {
            Some(rows) => {
                for row in rows {
                    println!("{row}");
                }
            }
            None => {
                return Err(AppError::Usage(
                    "csv output is not defined for this command".into(),
                ))
            }
        },
    }
    Ok(if report.failed {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    })
}

fn fmt12(x: f64) -> String {
    format!("{}", sig12(x))
}

fn run(cli: &Cli) -> Result<ExitCode, AppError> {
    let report = match &cli.command {
        Command::Eval { scope, bundle } => {
            let instance = load_instance(&scope.instance.instance)?;
            let agent = pick_agent(&instance, scope)?;
            let value = utility::eval(&agent.utility, bundle)?;
            Report::new(
                json!({"agent": agent.id, "bundle": nums(bundle), "value": num(value)}),
                vec![format!("u({}) = {}", agent.id, fmt12(value))],
            )
        }
        Command::Demand { scope, prices } => {
            let instance = load_instance(&scope.instance.instance)?;
            let agent = pick_agent(&instance, scope)?;
            let budget = scope.budget.unwrap_or(agent.budget);
            let d = demand::demand(&agent.utility, prices, budget)?;
            Report::new(
                json!({
                    "agent": agent.id,
                    "prices": nums(prices),
                    "budget": num(budget),
                    "bundle": nums(&d.bundle),
                    "value": num(d.value),
                    "spend": num(d.spend),
                    "budget_multiplier": num(d.lambda),
                }),
                vec![
                    format!(
                        "bundle = {:?}",
                        d.bundle.iter().map(|&v| fmt12(v)).collect::<Vec<_>>()
                    ),
                    format!("value  = {}", fmt12(d.value)),
                    format!("spend  = {}", fmt12(d.spend)),
                ],
            )
        }
        Command::GaleDemand { scope, prices } => {
            let instance = load_instance(&scope.instance.instance)?;
            let agent = pick_agent(&instance, scope)?;
            let budget = scope.budget.unwrap_or(agent.budget);
            let g = demand::gale_demand(&agent.utility, prices, budget)?;
            let kkt = demand::verify_gale_kkt(&agent.utility, prices, budget, &g.bundle)?;
            Report::new(
                json!({
                    "agent": agent.id,
                    "prices": nums(prices),
                    "budget": num(budget),
                    "bundle": nums(&g.bundle),
                    "value": num(g.value),
                    "spend": num(g.spend),
                    "objective": num(g.objective),
                    "kkt_residual": num(kkt.residual),
                }),
                vec![
                    format!(
                        "bundle    = {:?}",
                        g.bundle.iter().map(|&v| fmt12(v)).collect::<Vec<_>>()
                    ),
                    format!("value     = {}", fmt12(g.value)),
                    format!("spend     = {}", fmt12(g.spend)),
                    format!("objective = {}", fmt12(g.objective)),
                ],
            )
        }
        Command::MaxNsw { instance, tol, iters } => {
            let inst = load_instance(&instance.instance)?;
            let options = nsw::EgOptions {
                tol: *tol,
                max_iters: *iters,
                trace: cli.format == Format::Csv,
            };
            let sol = nsw::solve_eg(&inst, &options)?;
            let rows: Vec<Value> = sol.allocation.rows.iter().map(|r| nums(r)).collect();
            let mut lines = vec![
                format!("nash welfare = {}", fmt12(sol.nsw)),
                format!("duality gap  = {}", fmt12(sol.gap)),
                format!(
                    "prices       = {:?}",
                    sol.prices.iter().map(|&v| fmt12(v)).collect::<Vec<_>>()
                ),
            ];
            for (agent, row) in inst.agents.iter().zip(&sol.allocation.rows) {
                lines.push(format!(
                    "{}: {:?}",
                    agent.id,
                    row.iter().map(|&v| fmt12(v)).collect::<Vec<_>>()
                ));
            }
            let mut csv = vec![format!("iter,phi,gap,{}", inst.goods.join(","))];
            for t in &sol.trace {
                csv.push(format!(
                    "{},{},{},{}",
                    t.iter,
                    fmt12(t.phi),
                    fmt12(t.gap),
                    t.prices
                        .iter()
                        .map(|&v| fmt12(v))
                        .collect::<Vec<_>>()
                        .join(",")
                ));
            }
            let mut report = Report::new(
                json!({
                    "nsw": num(sol.nsw),
                    "log_primal": num(sol.log_primal),
                    "dual_value": num(sol.dual_value),
                    "gap": num(sol.gap),
                    "iterations": sol.iterations,
                    "prices": nums(&sol.prices),
                    "allocation": rows,
                }),
                lines,
            );
            report.csv = Some(csv);
            report
        }
        Command::CheckCe {
            instance,
            prices,
            allocation,
            tol,
        } => {
            let inst = load_instance(&instance.instance)?;
            let alloc = load_allocation(allocation)?;
            let r = equilibrium::verify_ce(&inst, &alloc, prices, *tol)?;
            ce_report(&inst, &r)
        }
        Command::CheckThrifty {
            instance,
            prices,
            allocation,
            tol,
        } => {
            let inst = load_instance(&instance.instance)?;
            let alloc = load_allocation(allocation)?;
            let r = equilibrium::verify_thrifty(&inst, &alloc, prices, *tol)?;
            let mut report = ce_report(&inst, &r);
            report.failed = r.is_thrifty != Some(true);
            report
        }
        Command::CheckApprox {
            instance,
            prices,
            allocation,
            alpha,
            tol,
        } => {
            let inst = load_instance(&instance.instance)?;
            let alloc = load_allocation(allocation)?;
            let r = equilibrium::verify_approx_ce(&inst, &alloc, prices, *alpha, *tol)?;
            ce_report(&inst, &r)
        }
        Command::BruteCe {
            instance,
            grid,
            thrifty,
        } => {
            let inst = load_instance(&instance.instance)?;
            let found = equilibrium::brute_force_ce(&inst, *grid, *thrifty)?;
            let mut lines = vec![format!("{} equilibria found", found.len())];
            let mut csv = vec![inst.goods.join(",")];
            let mut entries = Vec::new();
            for eq in &found {
                lines.push(format!(
                    "p = {:?}",
                    eq.prices.iter().map(|&v| fmt12(v)).collect::<Vec<_>>()
                ));
                csv.push(
                    eq.prices
                        .iter()
                        .map(|&v| fmt12(v))
                        .collect::<Vec<_>>()
                        .join(","),
                );
                entries.push(json!({
                    "prices": nums(&eq.prices),
                    "allocation": eq
                        .allocation
                        .rows
                        .iter()
                        .map(|r| nums(r))
                        .collect::<Vec<_>>(),
                    "thrifty": eq.report.is_thrifty,
                }));
            }
            let mut report = Report::new(json!({ "equilibria": entries }), lines);
            report.csv = Some(csv);
            report
        }
        Command::CheckSubstitutes {
            scope,
            prices,
            prices2,
            budget2,
        } => {
            let instance = load_instance(&scope.instance.instance)?;
            let agent = pick_agent(&instance, scope)?;
            let budget = scope.budget.unwrap_or(agent.budget);
            let mut witnesses = Vec::new();
            if let Some(lowered) = prices2 {
                witnesses.push(property::check_substitutes_price(
                    &agent.utility,
                    budget,
                    prices,
                    lowered,
                )?);
            }
            if let Some(b2) = budget2 {
                witnesses.push(property::check_substitutes_budget(
                    &agent.utility,
                    prices,
                    budget,
                    *b2,
                )?);
            }
            if witnesses.is_empty() {
                return Err(AppError::Usage(
                    "pass --prices2 and/or --budget2 to select a direction".into(),
                ));
            }
            witness_report(&witnesses)
        }
        Command::CheckSigma { scope, prices } => {
            let instance = load_instance(&scope.instance.instance)?;
            let agent = pick_agent(&instance, scope)?;
            let budget = scope.budget.unwrap_or(agent.budget);
            let w = property::check_sigma(&agent.utility, budget, prices)?;
            witness_report(&[w])
        }
        Command::CheckWgs {
            scope,
            prices,
            prices2,
        } => {
            let instance = load_instance(&scope.instance.instance)?;
            let agent = pick_agent(&instance, scope)?;
            let budget = scope.budget.unwrap_or(agent.budget);
            let w = property::check_wgs(&agent.utility, budget, prices, prices2)?;
            witness_report(&[w])
        }
        Command::RunExample { name } => {
            let names: Vec<&str> = if name == "all" {
                fixtures::FIXTURE_NAMES.to_vec()
            } else {
                vec![name.as_str()]
            };
            let mut reports = Vec::new();
            let mut lines = Vec::new();
            let mut failed = false;
            for n in names {
                let r = fixtures::run_fixture(n)?;
                lines.push(format!(
                    "{}: {}",
                    r.name,
                    if r.passed { "pass" } else { "FAIL" }
                ));
                for c in &r.checks {
                    lines.push(format!(
                        "  [{}] {}: observed {} expected {} (tol {})",
                        if c.passed { "ok" } else { "FAIL" },
                        c.label,
                        fmt12(c.observed),
                        fmt12(c.expected),
                        fmt12(c.tolerance),
                    ));
                }
                failed |= !r.passed;
                reports.push(r);
            }
            let mut report = Report::new(serde_json::to_value(&reports).unwrap(), lines);
            report.failed = failed;
            report
        }
        Command::Poa {
            instance,
            prices,
            allocation,
            tol,
        } => {
            let inst = load_instance(&instance.instance)?;
            let alloc = load_allocation(allocation)?;
            let ce = equilibrium::verify_ce(&inst, &alloc, prices, *tol)?;
            let sol = nsw::solve_eg(&inst, &nsw::EgOptions::default())?;
            let ratio = equilibrium::poa_check(&inst, &alloc, &sol)?;
            let mut report = Report::new(
                json!({
                    "is_ce": ce.is_ce,
                    "nsw_at_equilibrium": num(nsw::nsw_value(&inst, &alloc)?),
                    "nsw_maximum": num(sol.nsw),
                    "ratio": num(ratio),
                }),
                vec![
                    format!("equilibrium verifies: {}", ce.is_ce),
                    format!("welfare ratio = {}", fmt12(ratio)),
                ],
            );
            report.failed = !ce.is_ce;
            report
        }
        Command::HalfGuarantee {
            instance,
            prices,
            allocation,
            tol,
        } => {
            let inst = load_instance(&instance.instance)?;
            let alloc = load_allocation(allocation)?;
            let ce = equilibrium::verify_ce(&inst, &alloc, prices, *tol)?;
            let sol = nsw::solve_eg(&inst, &nsw::EgOptions::default())?;
            let ratios = equilibrium::half_guarantee_check(&inst, &alloc, &sol)?;
            let min = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
            let mut lines = vec![format!("equilibrium verifies: {}", ce.is_ce)];
            for (agent, r) in inst.agents.iter().zip(&ratios) {
                lines.push(format!("{}: ratio {}", agent.id, fmt12(*r)));
            }
            lines.push(format!("worst ratio = {}", fmt12(min)));
            let mut report = Report::new(
                json!({
                    "is_ce": ce.is_ce,
                    "ratios": nums(&ratios),
                    "worst": num(min),
                }),
                lines,
            );
            report.failed = !ce.is_ce;
            report
        }
    };
    emit(&report, cli.format, cli.seed)
}

fn ce_report(instance: &MarketInstance, r: &equilibrium::CEReport) -> Report {
    let agents: Vec<Value> = r
        .agents
        .iter()
        .map(|a| {
            json!({
                "id": a.id,
                "budget": num(a.budget),
                "spend": num(a.spend),
                "best_response": num(a.best_response),
                "achieved": num(a.achieved),
                "min_spend": a.min_spend.map(num),
            })
        })
        .collect();
    let mut lines = vec![format!(
        "competitive equilibrium: {}",
        if r.is_ce { "pass" } else { "FAIL" }
    )];
    if let Some(t) = r.is_thrifty {
        lines.push(format!("thrifty: {}", if t { "pass" } else { "FAIL" }));
    }
    for a in &r.agents {
        lines.push(format!(
            "  {}: achieved {} vs best {} (spend {} of {})",
            a.id,
            fmt12(a.achieved),
            fmt12(a.best_response),
            fmt12(a.spend),
            fmt12(a.budget),
        ));
    }
    lines.push(format!(
        "clearing residuals: {:?}",
        r.clearing_residual
            .iter()
            .map(|&v| fmt12(v))
            .collect::<Vec<_>>()
    ));
    let mut report = Report::new(
        json!({
            "is_ce": r.is_ce,
            "is_thrifty": r.is_thrifty,
            "alpha_achieved": num(r.alpha_achieved),
            "agents": agents,
            "clearing_residual": nums(&r.clearing_residual),
            "goods": instance.goods,
        }),
        lines,
    );
    report.failed = !r.is_ce;
    report
}

fn witness_report(witnesses: &[property::PropertyWitness]) -> Report {
    let mut lines = Vec::new();
    let mut failed = false;
    for w in witnesses {
        let verdict = match w.verdict {
            Verdict::Pass => "pass",
            Verdict::Violation => "VIOLATION",
            Verdict::Inconclusive => "inconclusive",
        };
        lines.push(format!("{}: {}", w.property, verdict));
        lines.push(format!(
            "  reference   = {:?}",
            w.reference.iter().map(|&v| fmt12(v)).collect::<Vec<_>>()
        ));
        lines.push(format!(
            "  counterpart = {:?}",
            w.counterpart.iter().map(|&v| fmt12(v)).collect::<Vec<_>>()
        ));
        if let Some(g) = w.violated_good {
            lines.push(format!(
                "  violated good index {} by {}",
                g,
                fmt12(w.magnitude)
            ));
        }
        failed |= w.verdict == Verdict::Violation;
    }
    let mut report = Report::new(serde_json::to_value(witnesses).unwrap(), lines);
    report.failed = failed;
    report
}
