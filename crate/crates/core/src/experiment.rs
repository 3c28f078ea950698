//! Parameter sweeps over grid networks or instance files.
//!
//! Every iteration draws fresh roles and a fully random initial
//! configuration. Seeds are derived from the master seed by hashing the
//! cell coordinates and the iteration number with splitmix64, so each run is
//! reproducible on its own and runs can execute in any order:
//!
//! ```text
//! run_seed   = mix(mix(mix(mix(mix(master) ^ topo) ^ senders) ^ targets) ^ iteration)
//! roles      = mix(run_seed ^ 1)
//! states     = mix(run_seed ^ 2)
//! scheduler  = mix(run_seed ^ 3)
//! ```
//!
//! where `topo` is the grid side or the instance index.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{assign_roles, build_grid, Instance, RoleAssignment, Topology};
use crate::sim::{self, RunOptions, SchedulerKind, Trace};
use crate::verify;

/// Worker count override for parallel sweeps.
pub const WORKERS_ENV: &str = "WSTDAG_WORKERS";

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, words: &[u64]) -> u64 {
    words.iter().fold(splitmix64(master), |h, &w| splitmix64(h ^ w))
}

#[derive(Clone, Debug)]
pub enum Family {
    /// `d x d` grids, one cell per side length.
    Grid(Vec<usize>),
    /// Fixed graphs; only their topology is used, roles are redrawn.
    Instances(Vec<(String, Instance)>),
}

#[derive(Clone, Debug)]
pub struct ExperimentSpec {
    pub family: Family,
    pub senders: Vec<usize>,
    pub targets: Vec<usize>,
    pub scheduler: SchedulerKind,
    pub iterations: usize,
    pub master_seed: u64,
    /// Export the per-round enabled-node counts of iteration 0 of each cell.
    pub series: bool,
    pub track_legitimacy: bool,
    /// Compare each final configuration against the reference construction.
    pub check_oracle: bool,
    /// Run the full verdict (brute-force minimality) on each final output.
    pub verify: bool,
}

impl ExperimentSpec {
    pub fn grid(sides: Vec<usize>, senders: Vec<usize>, targets: Vec<usize>, iterations: usize, master_seed: u64) -> Self {
        ExperimentSpec {
            family: Family::Grid(sides),
            senders,
            targets,
            scheduler: SchedulerKind::Synchronous,
            iterations,
            master_seed,
            series: false,
            track_legitimacy: false,
            check_oracle: true,
            verify: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct CellKey {
    pub topology: String,
    pub nodes: usize,
    pub diameter: usize,
    pub senders: usize,
    pub targets: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunRecord {
    #[serde(flatten)]
    pub cell: CellKey,
    pub iteration: usize,
    pub seed: u64,
    pub converged: bool,
    pub rounds: usize,
    pub steps: usize,
    pub l1_running: usize,
    pub l2_running: usize,
    pub l3_running: usize,
    pub l4_running: usize,
    pub l1_termination: usize,
    pub l2_termination: usize,
    pub l3_termination: usize,
    pub l4_termination: usize,
    pub l1_legitimate: Option<usize>,
    pub l2_legitimate: Option<usize>,
    pub l3_legitimate: Option<usize>,
    pub l4_legitimate: Option<usize>,
    pub oracle_match: Option<bool>,
    pub verdict_pass: Option<bool>,
}

impl RunRecord {
    pub fn running_time(&self) -> [usize; 4] {
        [self.l1_running, self.l2_running, self.l3_running, self.l4_running]
    }

    pub fn termination_round(&self) -> [usize; 4] {
        [self.l1_termination, self.l2_termination, self.l3_termination, self.l4_termination]
    }

    pub fn legitimacy_round(&self) -> [Option<usize>; 4] {
        [self.l1_legitimate, self.l2_legitimate, self.l3_legitimate, self.l4_legitimate]
    }

    /// Converged, and every requested check passed.
    pub fn ok(&self) -> bool {
        self.converged && self.oracle_match != Some(false) && self.verdict_pass != Some(false)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    /// Mean and sample standard deviation.
    pub fn of(values: impl IntoIterator<Item = f64>) -> Stat {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return Stat::default();
        }
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = if v.len() > 1 { v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64 } else { 0.0 };
        Stat { mean, std: var.sqrt() }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CellSummary {
    pub cell: CellKey,
    pub iterations: usize,
    pub failures: usize,
    pub rounds: Stat,
    pub running_time: [Stat; 4],
    pub termination_round: [Stat; 4],
    /// Over the runs where legitimacy was tracked.
    pub legitimacy_round: [Stat; 4],
}

#[derive(Clone, Debug, Serialize)]
pub struct SeriesRow {
    #[serde(flatten)]
    pub cell: CellKey,
    pub round: usize,
    pub enabled: usize,
    pub l1_enabled: usize,
    pub l2_enabled: usize,
    pub l3_enabled: usize,
    pub l4_enabled: usize,
}

#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub runs: Vec<RunRecord>,
    pub cells: Vec<CellSummary>,
    pub series: Vec<SeriesRow>,
}

impl ExperimentResult {
    pub fn failures(&self) -> impl Iterator<Item = &RunRecord> {
        self.runs.iter().filter(|r| !r.ok())
    }

    pub fn cell(&self, topology: &str, senders: usize, targets: usize) -> Option<&CellSummary> {
        self.cells
            .iter()
            .find(|c| c.cell.topology == topology && c.cell.senders == senders && c.cell.targets == targets)
    }

    pub fn write_csv(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        write_rows(dir.join("runs.csv"), &self.runs)?;
        let cells: Vec<CellRow> = self.cells.iter().map(CellRow::from).collect();
        write_rows(dir.join("cells.csv"), &cells)?;
        if !self.series.is_empty() {
            write_rows(dir.join("series.csv"), &self.series)?;
        }
        Ok(())
    }
}

/// Writes one CSV row per record. Columns follow field order, with flattened
/// structs inlined and `None` written as an empty cell.
fn write_rows<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    let mut header_written = false;
    for row in rows {
        let serde_json::Value::Object(map) = serde_json::to_value(row)? else {
            return Err(Error::Invalid("CSV rows must serialize to objects".into()));
        };
        if !header_written {
            w.write_record(map.keys())?;
            header_written = true;
        }
        w.write_record(map.values().map(|v| match v {
            serde_json::Value::Null => String::new(),
            serde_json::Value::String(s) => s.clone(),
            other => other.to_string(),
        }))?;
    }
    w.flush()?;
    Ok(())
}

/// Flat CSV form of a cell summary.
#[derive(Serialize)]
struct CellRow {
    #[serde(flatten)]
    cell: CellKey,
    iterations: usize,
    failures: usize,
    rounds_mean: f64,
    rounds_std: f64,
    l1_running_mean: f64,
    l1_running_std: f64,
    l2_running_mean: f64,
    l2_running_std: f64,
    l3_running_mean: f64,
    l3_running_std: f64,
    l4_running_mean: f64,
    l4_running_std: f64,
    l1_termination_mean: f64,
    l1_termination_std: f64,
    l2_termination_mean: f64,
    l2_termination_std: f64,
    l3_termination_mean: f64,
    l3_termination_std: f64,
    l4_termination_mean: f64,
    l4_termination_std: f64,
    l1_legitimate_mean: f64,
    l1_legitimate_std: f64,
    l2_legitimate_mean: f64,
    l2_legitimate_std: f64,
    l3_legitimate_mean: f64,
    l3_legitimate_std: f64,
    l4_legitimate_mean: f64,
    l4_legitimate_std: f64,
}

impl From<&CellSummary> for CellRow {
    fn from(c: &CellSummary) -> Self {
        let [r1, r2, r3, r4] = c.running_time;
        let [t1, t2, t3, t4] = c.termination_round;
        let [g1, g2, g3, g4] = c.legitimacy_round;
        CellRow {
            cell: c.cell.clone(),
            iterations: c.iterations,
            failures: c.failures,
            rounds_mean: c.rounds.mean,
            rounds_std: c.rounds.std,
            l1_running_mean: r1.mean,
            l1_running_std: r1.std,
            l2_running_mean: r2.mean,
            l2_running_std: r2.std,
            l3_running_mean: r3.mean,
            l3_running_std: r3.std,
            l4_running_mean: r4.mean,
            l4_running_std: r4.std,
            l1_termination_mean: t1.mean,
            l1_termination_std: t1.std,
            l2_termination_mean: t2.mean,
            l2_termination_std: t2.std,
            l3_termination_mean: t3.mean,
            l3_termination_std: t3.std,
            l4_termination_mean: t4.mean,
            l4_termination_std: t4.std,
            l1_legitimate_mean: g1.mean,
            l1_legitimate_std: g1.std,
            l2_legitimate_mean: g2.mean,
            l2_legitimate_std: g2.std,
            l3_legitimate_mean: g3.mean,
            l3_legitimate_std: g3.std,
            l4_legitimate_mean: g4.mean,
            l4_legitimate_std: g4.std,
        }
    }
}

/// Groups runs by cell, in first-appearance order.
pub fn aggregate(runs: &[RunRecord]) -> Vec<CellSummary> {
    let mut keys: Vec<&CellKey> = Vec::new();
    for r in runs {
        if !keys.contains(&&r.cell) {
            keys.push(&r.cell);
        }
    }
    keys.into_iter()
        .map(|key| {
            let group: Vec<&RunRecord> = runs.iter().filter(|r| &r.cell == key).collect();
            let per_layer = |f: &dyn Fn(&RunRecord, usize) -> Option<f64>| {
                [0, 1, 2, 3].map(|l| Stat::of(group.iter().filter_map(|r| f(r, l))))
            };
            CellSummary {
                cell: key.clone(),
                iterations: group.len(),
                failures: group.iter().filter(|r| !r.ok()).count(),
                rounds: Stat::of(group.iter().map(|r| r.rounds as f64)),
                running_time: per_layer(&|r, l| Some(r.running_time()[l] as f64)),
                termination_round: per_layer(&|r, l| Some(r.termination_round()[l] as f64)),
                legitimacy_round: per_layer(&|r, l| r.legitimacy_round()[l].map(|x| x as f64)),
            }
        })
        .collect()
}

struct Job<'a> {
    cell: CellKey,
    topo: &'a Topology,
    s: usize,
    t: usize,
    topo_word: u64,
    iteration: usize,
}

/// Outcome of one simulated iteration.
pub struct SingleRun {
    pub roles: RoleAssignment,
    pub trace: Trace,
    pub oracle_match: Option<bool>,
    pub verdict_pass: Option<bool>,
}

/// Draws roles and a random configuration from `seed` and runs to
/// convergence under the `20 (D + 1)` round cutoff.
pub fn simulate_random(topo: &Topology, diameter: usize, s: usize, t: usize, seed: u64, spec: &ExperimentSpec) -> Result<SingleRun> {
    let roles = assign_roles(topo, s, t, splitmix64(seed ^ 1))?;
    let initial = sim::random_configuration(topo, splitmix64(seed ^ 2));
    let scheduler = spec.scheduler.reseeded(splitmix64(seed ^ 3));
    let mut opts = RunOptions::with_cutoff(diameter, topo.node_count());
    opts.track_legitimacy = spec.track_legitimacy;
    let trace = sim::run(topo, &roles, initial, scheduler, &opts)?;
    let oracle_match = (spec.check_oracle && trace.converged).then(|| trace.final_config == verify::reference_construct(topo, &roles));
    let verdict_pass = (spec.verify && trace.converged).then(|| verify::verdict(topo, &roles, &trace.final_config).all_pass());
    Ok(SingleRun { roles, trace, oracle_match, verdict_pass })
}

fn worker_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = std::env::var(WORKERS_ENV).ok().and_then(|v| v.parse::<usize>().ok()) {
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| Error::InvalidParameter(format!("worker pool: {e}")))
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    if spec.iterations == 0 {
        return Err(Error::InvalidParameter("iterations must be at least 1".into()));
    }
    let topologies: Vec<(String, u64, Topology)> = match &spec.family {
        Family::Grid(sides) => sides
            .iter()
            .map(|&d| Ok((format!("grid{d}"), d as u64, build_grid(d)?)))
            .collect::<Result<_>>()?,
        Family::Instances(list) => list
            .iter()
            .enumerate()
            .map(|(i, (name, inst))| (name.clone(), i as u64, inst.topology.clone()))
            .collect(),
    };
    let diameters: Vec<usize> = topologies
        .iter()
        .map(|(_, word, topo)| match spec.family {
            Family::Grid(_) => 2 * *word as usize - 2,
            Family::Instances(_) => topo.diameter(),
        })
        .collect();

    let mut jobs = Vec::new();
    for ((name, word, topo), &diameter) in topologies.iter().zip(&diameters) {
        for &s in &spec.senders {
            for &t in &spec.targets {
                if s == 0 || t == 0 || s + t > topo.node_count() {
                    return Err(Error::InvalidParameter(format!("{name}: {s} senders and {t} targets do not fit")));
                }
                let cell = CellKey { topology: name.clone(), nodes: topo.node_count(), diameter, senders: s, targets: t };
                for iteration in 0..spec.iterations {
                    jobs.push(Job { cell: cell.clone(), topo, s, t, topo_word: *word, iteration });
                }
            }
        }
    }

    let outcomes: Vec<Result<(RunRecord, Vec<SeriesRow>)>> = worker_pool()?.install(|| {
        jobs.par_iter()
            .map(|job| {
                let seed = derive_seed(spec.master_seed, &[job.topo_word, job.s as u64, job.t as u64, job.iteration as u64]);
                let out = simulate_random(job.topo, job.cell.diameter, job.s, job.t, seed, spec)?;
                let tr = &out.trace;
                let [l1_running, l2_running, l3_running, l4_running] = tr.running_time;
                let [l1_termination, l2_termination, l3_termination, l4_termination] = tr.termination_round;
                let [l1_legitimate, l2_legitimate, l3_legitimate, l4_legitimate] = tr.legitimacy_round.unwrap_or([None; 4]);
                let record = RunRecord {
                    cell: job.cell.clone(),
                    iteration: job.iteration,
                    seed,
                    converged: tr.converged,
                    rounds: tr.total_rounds,
                    steps: tr.total_steps,
                    l1_running,
                    l2_running,
                    l3_running,
                    l4_running,
                    l1_termination,
                    l2_termination,
                    l3_termination,
                    l4_termination,
                    l1_legitimate,
                    l2_legitimate,
                    l3_legitimate,
                    l4_legitimate,
                    oracle_match: out.oracle_match,
                    verdict_pass: out.verdict_pass,
                };
                let series = if spec.series && job.iteration == 0 {
                    tr.rounds
                        .iter()
                        .map(|r| SeriesRow {
                            cell: job.cell.clone(),
                            round: r.index,
                            enabled: r.enabled_at_start,
                            l1_enabled: r.enabled_by_layer[0],
                            l2_enabled: r.enabled_by_layer[1],
                            l3_enabled: r.enabled_by_layer[2],
                            l4_enabled: r.enabled_by_layer[3],
                        })
                        .collect()
                } else {
                    Vec::new()
                };
                Ok((record, series))
            })
            .collect()
    });

    let mut runs = Vec::with_capacity(outcomes.len());
    let mut series = Vec::new();
    for outcome in outcomes {
        let (record, rows) = outcome?;
        runs.push(record);
        series.extend(rows);
    }
    let cells = aggregate(&runs);
    Ok(ExperimentResult { runs, cells, series })
}
