//! Command-line front end: instance generation, single runs, parameter
//! sweeps, and verification of stored configurations.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use wstdag_core::experiment::{self, ExperimentSpec, Family, WORKERS_ENV};
use wstdag_core::graph::{assign_roles, build_grid, build_random_connected, Instance};
use wstdag_core::sim::{self, Configuration, RunOptions, SchedulerKind, TraceMode};
use wstdag_core::verify;

#[derive(Debug, Parser)]
#[command(name = "wstdag", version, about = "Self-stabilizing minimal weakly ST-reachable DAG simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate an instance file.
    Gen(GenArgs),
    /// Run one simulation and verify its output.
    Run(RunArgs),
    /// Run a parameter sweep and write CSV tables.
    Experiment(ExperimentArgs),
    /// Verify a stored configuration against an instance.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SchedulerArg {
    Sync,
    Randfair,
    Rr,
    Adv,
}

impl SchedulerArg {
    fn kind(self, seed: u64) -> SchedulerKind {
        match self {
            SchedulerArg::Sync => SchedulerKind::Synchronous,
            SchedulerArg::Randfair => SchedulerKind::RandomFairSubset { seed },
            SchedulerArg::Rr => SchedulerKind::RoundRobinSingle,
            SchedulerArg::Adv => SchedulerKind::AdversarialGreedy { seed },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TraceArg {
    Summary,
    Full,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Side of a d x d grid.
    #[arg(long, conflicts_with = "random_n")]
    pub grid_d: Option<usize>,
    /// Node count of a random connected graph.
    #[arg(long)]
    pub random_n: Option<usize>,
    /// Edge density of the random graph.
    #[arg(long, default_value_t = 0.2)]
    pub density: f64,
    #[arg(long, default_value_t = 1)]
    pub senders: usize,
    #[arg(long, default_value_t = 1)]
    pub targets: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Permute every node's local labels at random.
    #[arg(long)]
    pub shuffle_labels: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long, conflicts_with = "grid_d")]
    pub instance: Option<PathBuf>,
    #[arg(long)]
    pub grid_d: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub senders: usize,
    #[arg(long, default_value_t = 1)]
    pub targets: usize,
    #[arg(long, value_enum, default_value_t = SchedulerArg::Sync)]
    pub scheduler: SchedulerArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Start from the legitimate configuration instead of a random one.
    #[arg(long)]
    pub from_legitimate: bool,
    /// Redraw this fraction of the nodes before running.
    #[arg(long)]
    pub perturb: Option<f64>,
    #[arg(long, value_enum, default_value_t = TraceArg::Summary)]
    pub trace: TraceArg,
    /// Track per-layer legitimacy rounds.
    #[arg(long)]
    pub legitimacy: bool,
    /// Directory for the run's output files.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// Grid sides: `86`, `6,8,10`, or `6..86:2` (inclusive, with step).
    #[arg(long, conflicts_with = "instance")]
    pub grid_d: Option<String>,
    /// Instance files whose graphs are swept instead of grids.
    #[arg(long, num_args = 1..)]
    pub instance: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "10")]
    pub senders: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "10")]
    pub targets: Vec<usize>,
    #[arg(long, value_enum, default_value_t = SchedulerArg::Sync)]
    pub scheduler: SchedulerArg,
    #[arg(long, default_value_t = 500)]
    pub iterations: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Export the enabled-node series of iteration 0 of each cell.
    #[arg(long)]
    pub series: bool,
    /// Track per-layer legitimacy rounds (slower).
    #[arg(long)]
    pub legitimacy: bool,
    /// Run the brute-force verdict on every output (slower).
    #[arg(long)]
    pub verify: bool,
    /// Worker threads; defaults to all cores.
    #[arg(long, env = WORKERS_ENV)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub instance: PathBuf,
    /// Configuration in the one-node-per-line JSON format.
    #[arg(long)]
    pub config: PathBuf,
}

/// Parses `86`, `6,8,10`, or `6..86:2`.
pub fn parse_sides(text: &str) -> Result<Vec<usize>> {
    let (range, step) = match text.split_once(':') {
        Some((range, step)) => (range, Some(step)),
        None => (text, None),
    };
    if let Some((lo, hi)) = range.split_once("..") {
        let lo: usize = lo.trim().parse().context("grid range start")?;
        let hi: usize = hi.trim().parse().context("grid range end")?;
        let step: usize = step.map(|s| s.trim().parse()).transpose().context("grid range step")?.unwrap_or(1);
        if step == 0 || lo > hi {
            bail!("empty grid range {text:?}");
        }
        return Ok((lo..=hi).step_by(step).collect());
    }
    text.split(',').map(|s| s.trim().parse::<usize>().with_context(|| format!("grid side {s:?}"))).collect()
}

/// Runs a command. `Ok(false)` means the command completed but its result
/// failed (non-convergence or a failed verdict).
pub fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Gen(args) => gen(args),
        Command::Run(args) => run(args),
        Command::Experiment(args) => run_experiment(args),
        Command::Verify(args) => verify_config(args),
    }
}

fn gen(args: GenArgs) -> Result<bool> {
    let mut topo = match (args.grid_d, args.random_n) {
        (Some(d), _) => build_grid(d)?,
        (None, Some(n)) => build_random_connected(n, args.density, args.seed)?,
        (None, None) => bail!("one of --grid-d or --random-n is required"),
    };
    if args.shuffle_labels {
        topo = topo.shuffle_labels(experiment::splitmix64(args.seed ^ 0x5eed));
    }
    let roles = assign_roles(&topo, args.senders, args.targets, args.seed)?;
    Instance::new(topo, roles)?.save(&args.out).with_context(|| format!("writing {}", args.out.display()))?;
    Ok(true)
}

fn load_instance(path: &Path) -> Result<Instance> {
    Instance::load(path).with_context(|| format!("loading instance {}", path.display()))
}

fn run(args: RunArgs) -> Result<bool> {
    let inst = match (&args.instance, args.grid_d) {
        (Some(path), _) => load_instance(path)?,
        (None, Some(d)) => {
            let topo = build_grid(d)?;
            let roles = assign_roles(&topo, args.senders, args.targets, args.seed)?;
            Instance::new(topo, roles)?
        }
        (None, None) => bail!("one of --instance or --grid-d is required"),
    };
    let (topo, roles) = (&inst.topology, &inst.roles);
    let mut initial = if args.from_legitimate {
        verify::reference_construct(topo, roles)
    } else {
        sim::random_configuration(topo, experiment::splitmix64(args.seed ^ 2))
    };
    if let Some(fraction) = args.perturb {
        initial = sim::perturb(topo, &initial, fraction, experiment::splitmix64(args.seed ^ 4));
    }
    let diameter = match &args.instance {
        None => 2 * args.grid_d.unwrap() - 2,
        Some(_) => topo.diameter(),
    };
    let mut opts = RunOptions::with_cutoff(diameter, topo.node_count());
    opts.trace = if args.trace == TraceArg::Full { TraceMode::Full } else { TraceMode::Summary };
    opts.track_legitimacy = args.legitimacy;
    let scheduler = args.scheduler.kind(experiment::splitmix64(args.seed ^ 3));
    let trace = sim::run(topo, roles, initial.clone(), scheduler, &opts)?;
    let report = verify::verdict(topo, roles, &trace.final_config);
    let oracle_match = trace.final_config == verify::reference_construct(topo, roles);

    let summary = json!({
        "nodes": topo.node_count(),
        "diameter": diameter,
        "scheduler": scheduler.name(),
        "converged": trace.converged,
        "rounds": trace.total_rounds,
        "steps": trace.total_steps,
        "running_time": trace.running_time,
        "termination_round": trace.termination_round,
        "legitimacy_round": trace.legitimacy_round,
        "oracle_match": oracle_match,
        "all_pass": report.all_pass(),
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);

    if let Some(dir) = &args.out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
        fs::write(dir.join("verdict.json"), serde_json::to_string_pretty(&report)? + "\n")?;
        fs::write(dir.join("instance.json"), inst.to_json() + "\n")?;
        initial.write_jsonl(BufWriter::new(File::create(dir.join("initial.jsonl"))?))?;
        trace.final_config.write_jsonl(BufWriter::new(File::create(dir.join("final.jsonl"))?))?;
        let mut rounds = BufWriter::new(File::create(dir.join("rounds.csv"))?);
        writeln!(rounds, "round,steps,enabled,l1_enabled,l2_enabled,l3_enabled,l4_enabled,l1_ran,l2_ran,l3_ran,l4_ran")?;
        for r in &trace.rounds {
            let [e1, e2, e3, e4] = r.enabled_by_layer;
            let ran = r.layers_executed.map(u8::from);
            writeln!(
                rounds,
                "{},{},{},{e1},{e2},{e3},{e4},{},{},{},{}",
                r.index, r.steps, r.enabled_at_start, ran[0], ran[1], ran[2], ran[3]
            )?;
        }
        rounds.flush()?;
        if args.trace == TraceArg::Full {
            let mut steps = BufWriter::new(File::create(dir.join("steps.jsonl"))?);
            for s in &trace.steps {
                serde_json::to_writer(&mut steps, s)?;
                steps.write_all(b"\n")?;
            }
            steps.flush()?;
        }
    }
    Ok(trace.converged && report.all_pass())
}

fn run_experiment(args: ExperimentArgs) -> Result<bool> {
    if let Some(workers) = args.workers {
        std::env::set_var(WORKERS_ENV, workers.to_string());
    }
    let family = match (&args.grid_d, args.instance.is_empty()) {
        (Some(sides), _) => Family::Grid(parse_sides(sides)?),
        (None, false) => Family::Instances(
            args.instance
                .iter()
                .map(|p| Ok((p.file_stem().unwrap_or_default().to_string_lossy().into_owned(), load_instance(p)?)))
                .collect::<Result<_>>()?,
        ),
        (None, true) => bail!("one of --grid-d or --instance is required"),
    };
    let scheduler = args.scheduler.kind(0);
    let spec = ExperimentSpec {
        family,
        senders: args.senders,
        targets: args.targets,
        scheduler,
        iterations: args.iterations,
        master_seed: args.seed,
        series: args.series,
        track_legitimacy: args.legitimacy,
        check_oracle: true,
        verify: args.verify,
    };
    let result = experiment::run_experiment(&spec)?;
    result.write_csv(&args.out)?;
    for cell in &result.cells {
        let rt = cell.running_time.map(|s| format!("{:.2}", s.mean));
        println!(
            "{} S={} T={} iterations={} failures={} rounds={:.2}±{:.2} running=[{}]",
            cell.cell.topology,
            cell.cell.senders,
            cell.cell.targets,
            cell.iterations,
            cell.failures,
            cell.rounds.mean,
            cell.rounds.std,
            rt.join(", ")
        );
    }
    let failures = result.failures().count();
    if failures > 0 {
        eprintln!("{failures} iteration(s) did not converge or failed a check");
    }
    Ok(failures == 0 || !scheduler.is_fair())
}

fn verify_config(args: VerifyArgs) -> Result<bool> {
    let inst = load_instance(&args.instance)?;
    let file = File::open(&args.config).with_context(|| format!("opening {}", args.config.display()))?;
    let config = Configuration::read_jsonl(BufReader::new(file), &inst.topology)
        .with_context(|| format!("reading configuration {}", args.config.display()))?;
    let report = verify::verdict(&inst.topology, &inst.roles, &config);
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(report.all_pass())
}
