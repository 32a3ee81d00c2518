use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use kbsa::algorithm::run_any;
use kbsa::bench::{aggregate, emit_report, summary_csv, table_text, DEFAULT_FIT_WINDOW};
use kbsa::config::{check_config, parse_config_unchecked, preset_config, run_benchmark, Prepared, RunConfig, PRESETS};
use kbsa::oracles::{brute_force_measures, builtin_truth, BruteForceOptions, GroundTruth};
use kbsa::problem::builtin_by_name;
use kbsa::schedules::Mode;
use kbsa::streams::replication_seed;
use kbsa::Error;

#[derive(Parser)]
#[command(name = "kbsa", version, about = "Kernel-based stochastic approximation for contextual measures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate measures and gradients at a fixed decision (one run).
    Estimate(RunArgs),
    /// Optimize the decision (one run).
    Optimize(RunArgs),
    /// Run replications and report errors and rates.
    Bench(RunArgs),
    /// Check a configuration and print any violated conditions.
    Validate(RunArgs),
    /// Print reference values for a built-in problem.
    Oracle(OracleArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Configuration file.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Named configuration.
    #[arg(long)]
    preset: Option<String>,
    /// Number of iterations.
    #[arg(long)]
    iters: Option<u64>,
    /// Number of replications.
    #[arg(long)]
    reps: Option<u64>,
    /// Base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated checkpoint iterations.
    #[arg(long, value_delimiter = ',')]
    checkpoints: Option<Vec<u64>>,
    /// Report directory; the table goes to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run even if schedule conditions fail.
    #[arg(long)]
    override_validation: bool,
    /// Record zero wall times so reports are reproducible byte for byte.
    #[arg(long)]
    no_timing: bool,
    /// Print the resolved configuration (canonical text) before running.
    #[arg(long)]
    print_config: bool,
    /// Print the resolved configuration as JSON and exit.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct OracleArgs {
    /// Built-in problem name.
    #[arg(long)]
    problem: String,
    /// Also run the Monte Carlo cross-check with this many samples.
    #[arg(long)]
    brute_force: Option<u64>,
    /// Strip half-width for the cross-check.
    #[arg(long)]
    band: Option<f64>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

fn load(args: &RunArgs) -> Result<RunConfig, Error> {
    let mut cfg = match (&args.config, &args.preset) {
        (Some(path), _) => parse_config_unchecked(&std::fs::read_to_string(path)?)?,
        (None, Some(name)) => preset_config(name)?,
        (None, None) => {
            return Err(Error::Config {
                line: 0,
                message: format!("pass --config or --preset (presets: {})", PRESETS.join(", ")),
            })
        }
    };
    if let Some(n) = args.iters {
        cfg.n_iters = n;
        if args.checkpoints.is_none() && cfg.checkpoints.as_ref().is_some_and(|c| c.iter().any(|&x| x > n)) {
            cfg.checkpoints = None;
        }
    }
    if let Some(r) = args.reps {
        cfg.replications = r;
    }
    if let Some(s) = args.seed {
        cfg.base_seed = s;
    }
    if let Some(c) = &args.checkpoints {
        cfg.checkpoints = Some(c.clone());
    }
    if let Some(out) = &args.out {
        cfg.output = Some(out.display().to_string());
    }
    cfg.override_validation |= args.override_validation;
    if args.no_timing {
        cfg.record_timing = false;
    }
    Ok(cfg)
}

fn print_truth(t: &GroundTruth) {
    println!("provenance: {:?}", t.provenance);
    println!("theta: {:?}", t.theta);
    for (i, v) in t.nu.iter().enumerate() {
        let se = t.nu_se.as_ref().map(|s| format!(" (se {})", s[i])).unwrap_or_default();
        println!("nu{} = {v}{se}", i + 1);
    }
    for (j, v) in t.lambda.iter().enumerate() {
        let se = t.lambda_se.as_ref().map(|s| format!(" (se {})", s[j])).unwrap_or_default();
        println!("lambda{} = {v}{se}", j + 1);
    }
    if let Some(g) = &t.grad_nu {
        for (i, col) in g.iter().enumerate() {
            println!("grad nu{} = {col:?}", i + 1);
        }
    }
    if let Some(g) = &t.grad_lambda {
        for (j, col) in g.iter().enumerate() {
            println!("grad lambda{} = {col:?}", j + 1);
        }
    }
    if let Some(s) = &t.theta_star {
        println!("theta* = {s:?}");
    }
    if let Some(c) = t.cost_star {
        println!("cost* = {c}");
    }
    if let Some(b) = &t.band {
        println!("band = {b:?}");
    }
}

fn single_run(mut cfg: RunConfig, mode: Mode) -> Result<(), Error> {
    cfg.mode = mode;
    check_config(&cfg)?;
    let prepared = Prepared::new(&cfg)?;
    let target = cfg.target()?;
    let trace = run_any(&prepared.setup(&cfg), replication_seed(cfg.base_seed, 0))?;
    let result = aggregate(vec![trace], &prepared.checkpoints, &target, mode, DEFAULT_FIT_WINDOW)?;
    match &cfg.output {
        Some(dir) => {
            let paths = emit_report(&result, &target, dir.as_ref())?;
            println!("wrote {}", paths.trace_csv.display());
        }
        None => print!("{}", summary_csv(&result)),
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Oracle(args) => {
            let truth = builtin_truth(&args.problem)?;
            print_truth(&truth);
            if let Some(samples) = args.brute_force {
                let problem = builtin_by_name(&args.problem)?;
                let mc = brute_force_measures(
                    &problem,
                    &truth.theta,
                    BruteForceOptions {
                        samples,
                        band: args.band,
                        seed: args.seed,
                        ..Default::default()
                    },
                )?;
                println!();
                print_truth(&mc);
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate(args) => {
            let cfg = load(&args)?;
            if args.print_config {
                print!("{}", cfg.serialize());
            }
            let violations = cfg.violations();
            cfg.problem()?;
            if violations.is_empty() {
                println!("ok: {}", cfg.fingerprint());
                Ok(ExitCode::SUCCESS)
            } else {
                for v in &violations {
                    println!("violated: {v}");
                }
                Ok(ExitCode::FAILURE)
            }
        }
        Command::Estimate(args) | Command::Optimize(args) | Command::Bench(args) if args.json => {
            print!("{}", load(&args)?.to_json());
            println!();
            Ok(ExitCode::SUCCESS)
        }
        Command::Estimate(args) => {
            let cfg = load(&args)?;
            if args.print_config {
                print!("{}", cfg.serialize());
            }
            single_run(cfg, Mode::Estimate).map(|_| ExitCode::SUCCESS)
        }
        Command::Optimize(args) => {
            let cfg = load(&args)?;
            if args.print_config {
                print!("{}", cfg.serialize());
            }
            single_run(cfg, Mode::Optimize).map(|_| ExitCode::SUCCESS)
        }
        Command::Bench(args) => {
            let cfg = load(&args)?;
            if args.print_config {
                print!("{}", cfg.serialize());
            }
            check_config(&cfg)?;
            let (result, target) = run_benchmark(&cfg)?;
            if let Some(dir) = &cfg.output {
                let paths = emit_report(&result, &target, dir.as_ref())?;
                let described = RunConfig {
                    output: None,
                    ..cfg.clone()
                };
                std::fs::write(PathBuf::from(dir).join("config.txt"), described.serialize())?;
                println!("wrote {}", paths.table.display());
            }
            print!("{}", table_text(&result));
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
