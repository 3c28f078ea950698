//! Configurations, schedulers, and the execution engine with round
//! accounting.

use std::fmt;
use std::io::{BufRead, Write};

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::graph::{Label, NodeId, RoleAssignment, Topology};
use crate::protocol::{ActionId, LocalView, NeighborView, NodeState, Parent};
use crate::verify;

/// The state of every node, indexed like the topology.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Configuration {
    pub states: Vec<NodeState>,
}

#[derive(Serialize, Deserialize)]
struct ConfigLine {
    node: NodeId,
    #[serde(flatten)]
    state: NodeState,
}

/// Distances live in `[0, n]`.
pub fn dist_cap(topo: &Topology) -> u32 {
    topo.node_count() as u32
}

impl Configuration {
    pub fn zeroed(topo: &Topology) -> Self {
        Configuration { states: (0..topo.node_count()).map(|v| NodeState::zeroed(topo.degree(v))).collect() }
    }

    pub fn validate(&self, topo: &Topology) -> Result<()> {
        if self.states.len() != topo.node_count() {
            return Err(Error::Config(format!(
                "{} node states for a graph with {} nodes",
                self.states.len(),
                topo.node_count()
            )));
        }
        let cap = dist_cap(topo);
        for (v, s) in self.states.iter().enumerate() {
            s.validate(topo.degree(v), cap).map_err(|e| Error::Config(format!("node {v}: {e}")))?;
        }
        Ok(())
    }

    /// One JSON object per line, in node order.
    pub fn write_jsonl(&self, mut out: impl Write) -> Result<()> {
        for (node, state) in self.states.iter().enumerate() {
            let line = ConfigLine { node, state: state.clone() };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    /// Parses the line format and validates it against `topo`. Errors name
    /// the node index at which parsing failed.
    pub fn read_jsonl(input: impl BufRead, topo: &Topology) -> Result<Self> {
        let mut states = Vec::with_capacity(topo.node_count());
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let expected = states.len();
            let parsed: ConfigLine = serde_json::from_str(&line)
                .map_err(|e| Error::Config(format!("node {expected} (line {}): {e}", lineno + 1)))?;
            if parsed.node != expected {
                return Err(Error::Config(format!(
                    "node {expected} (line {}): found state for node {}",
                    lineno + 1,
                    parsed.node
                )));
            }
            states.push(parsed.state);
        }
        if states.len() < topo.node_count() {
            return Err(Error::Config(format!("node {}: missing state (file truncated?)", states.len())));
        }
        let config = Configuration { states };
        config.validate(topo)?;
        Ok(config)
    }
}

/// Builds node `v`'s local view.
pub fn local_view<'a>(topo: &Topology, roles: &RoleAssignment, config: &'a Configuration, v: NodeId) -> LocalView<'a> {
    LocalView {
        is_sender: roles.is_sender(v),
        is_target: roles.is_target(v),
        dist_cap: dist_cap(topo),
        own: &config.states[v],
        neighbors: topo
            .neighbors(v)
            .iter()
            .zip(topo.back_labels(v))
            .map(|(&u, &back_label)| NeighborView { state: &config.states[u], back_label })
            .collect(),
    }
}

pub fn enabled_action(topo: &Topology, roles: &RoleAssignment, config: &Configuration, v: NodeId) -> Option<ActionId> {
    local_view(topo, roles, config, v).enabled_action()
}

/// Every enabled node with its action, by ascending node id.
pub fn enabled_nodes(topo: &Topology, roles: &RoleAssignment, config: &Configuration) -> Vec<(NodeId, ActionId)> {
    (0..topo.node_count()).filter_map(|v| enabled_action(topo, roles, config, v).map(|a| (v, a))).collect()
}

/// One atomic transition: every activated node executes its enabled action
/// against the pre-step configuration.
pub fn step(topo: &Topology, roles: &RoleAssignment, config: &Configuration, activated: &[NodeId]) -> Result<Configuration> {
    if activated.is_empty() {
        return Err(Error::Contract("a step needs at least one activated node".into()));
    }
    let mut updates = Vec::with_capacity(activated.len());
    for &v in activated {
        let (_, next) = local_view(topo, roles, config, v)
            .fire()
            .ok_or_else(|| Error::Contract(format!("node {v} is not enabled")))?;
        updates.push((v, next));
    }
    let mut out = config.clone();
    for (v, next) in updates {
        out.states[v] = next;
    }
    Ok(out)
}

/// Redraws every field of the listed nodes uniformly from its domain.
pub fn randomize_states(topo: &Topology, config: &Configuration, nodes: &[NodeId], seed: u64) -> Configuration {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cap = dist_cap(topo);
    let mut nodes = nodes.to_vec();
    nodes.sort_unstable();
    nodes.dedup();
    let mut out = config.clone();
    for v in nodes {
        let deg = topo.degree(v);
        let parent = |rng: &mut ChaCha8Rng| match rng.gen_range(0..=deg) {
            0 => Parent::Root,
            l => Parent::Neighbor(Label(l as u32)),
        };
        out.states[v] = NodeState {
            l1_dist: rng.gen_range(0..=cap),
            l1_parent: parent(&mut rng),
            l1_color: rng.gen(),
            l2_dist: rng.gen_range(0..=cap),
            l2_parent: parent(&mut rng),
            l2_color: rng.gen(),
            l3_arc: (0..deg).map(|_| rng.gen()).collect(),
            arc: (0..deg).map(|_| rng.gen()).collect(),
            l4_branch: rng.gen(),
        };
    }
    out
}

/// A fully random configuration.
pub fn random_configuration(topo: &Topology, seed: u64) -> Configuration {
    let all: Vec<NodeId> = (0..topo.node_count()).collect();
    randomize_states(topo, &Configuration::zeroed(topo), &all, seed)
}

/// Redraws a uniformly random `fraction` of the nodes (at least one).
pub fn perturb(topo: &Topology, config: &Configuration, fraction: f64, seed: u64) -> Configuration {
    let n = topo.node_count();
    let k = ((fraction.clamp(0.0, 1.0) * n as f64).round() as usize).clamp(1, n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = index::sample(&mut rng, n, k).into_vec();
    randomize_states(topo, config, &picked, rng.gen())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SchedulerKind {
    /// Every enabled node acts in every step.
    Synchronous,
    /// A uniformly random non-empty subset of the enabled nodes, with a
    /// starvation bound: a node left enabled for `n` consecutive steps is
    /// forced in.
    RandomFairSubset { seed: u64 },
    /// Cycles through node ids and activates the next enabled one.
    RoundRobinSingle,
    /// Exploratory: activates a single node, preferring the highest-layer
    /// action, so upper layers keep building on stale lower layers.
    AdversarialGreedy { seed: u64 },
}

impl SchedulerKind {
    pub fn is_fair(self) -> bool {
        !matches!(self, SchedulerKind::AdversarialGreedy { .. })
    }

    pub fn name(self) -> &'static str {
        match self {
            SchedulerKind::Synchronous => "sync",
            SchedulerKind::RandomFairSubset { .. } => "randfair",
            SchedulerKind::RoundRobinSingle => "rr",
            SchedulerKind::AdversarialGreedy { .. } => "adv",
        }
    }

    /// Same scheduler family with a different random stream.
    pub fn reseeded(self, seed: u64) -> Self {
        match self {
            SchedulerKind::RandomFairSubset { .. } => SchedulerKind::RandomFairSubset { seed },
            SchedulerKind::AdversarialGreedy { .. } => SchedulerKind::AdversarialGreedy { seed },
            other => other,
        }
    }
}

impl fmt::Display for SchedulerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

struct Scheduler {
    kind: SchedulerKind,
    rng: ChaCha8Rng,
    cursor: usize,
    waiting: Vec<usize>,
}

impl Scheduler {
    fn new(kind: SchedulerKind, n: usize) -> Self {
        let seed = match kind {
            SchedulerKind::RandomFairSubset { seed } | SchedulerKind::AdversarialGreedy { seed } => seed,
            _ => 0,
        };
        Scheduler { kind, rng: ChaCha8Rng::seed_from_u64(seed), cursor: 0, waiting: vec![0; n] }
    }

    /// Picks the nodes to activate; `enabled` is sorted and non-empty.
    fn select(&mut self, enabled: &[(NodeId, ActionId)]) -> Vec<NodeId> {
        let n = self.waiting.len();
        match self.kind {
            SchedulerKind::Synchronous => enabled.iter().map(|&(v, _)| v).collect(),
            SchedulerKind::RandomFairSubset { .. } => {
                let mut chosen: Vec<NodeId> = enabled
                    .iter()
                    .filter(|&&(v, _)| self.waiting[v] >= n || self.rng.gen_bool(0.5))
                    .map(|&(v, _)| v)
                    .collect();
                if chosen.is_empty() {
                    chosen.push(enabled[self.rng.gen_range(0..enabled.len())].0);
                }
                // bookkeeping for the starvation bound
                let mut c = 0;
                for &(v, _) in enabled {
                    if c < chosen.len() && chosen[c] == v {
                        self.waiting[v] = 0;
                        c += 1;
                    } else {
                        self.waiting[v] += 1;
                    }
                }
                chosen
            }
            SchedulerKind::RoundRobinSingle => {
                let pos = enabled.partition_point(|&(v, _)| v < self.cursor);
                let v = enabled.get(pos).unwrap_or(&enabled[0]).0;
                self.cursor = (v + 1) % n;
                vec![v]
            }
            SchedulerKind::AdversarialGreedy { .. } => {
                let top = enabled.iter().map(|&(_, a)| a.layer()).max().unwrap();
                let mut pool: Vec<NodeId> = enabled.iter().filter(|&&(_, a)| a.layer() == top).map(|&(v, _)| v).collect();
                pool.shuffle(&mut self.rng);
                vec![pool[0]]
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum TraceMode {
    /// Round summaries only.
    #[default]
    Summary,
    /// Also the initial configuration and every step.
    Full,
}

#[derive(Clone, Copy, Debug)]
pub struct RunOptions {
    pub step_limit: usize,
    pub round_limit: Option<usize>,
    pub trace: TraceMode,
    /// Evaluate layer legitimacy after every round.
    pub track_legitimacy: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { step_limit: 1_000_000, round_limit: None, trace: TraceMode::Summary, track_legitimacy: false }
    }
}

impl RunOptions {
    /// Round cutoff `20 (D + 1)`, and a step cutoff `20 (D + 1) n` for
    /// schedulers that may activate a single node per step.
    pub fn with_cutoff(diameter: usize, n: usize) -> Self {
        let rounds = 20 * (diameter + 1);
        RunOptions { step_limit: rounds * n.max(1), round_limit: Some(rounds), ..Default::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRecord {
    pub activated: Vec<(NodeId, ActionId)>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundSummary {
    /// 1-based.
    pub index: usize,
    pub enabled_at_start: usize,
    pub enabled_by_layer: [usize; 4],
    pub layers_executed: [bool; 4],
    /// Number of steps in the round.
    pub steps: usize,
    /// Total steps executed when the round closed.
    pub end_step: usize,
    /// False for a round cut short by a limit.
    pub complete: bool,
}

#[derive(Clone, Debug)]
pub struct Trace {
    pub initial: Option<Configuration>,
    pub steps: Vec<StepRecord>,
    pub rounds: Vec<RoundSummary>,
    pub final_config: Configuration,
    pub total_steps: usize,
    pub total_rounds: usize,
    pub converged: bool,
    pub scheduler: SchedulerKind,
    /// Rounds in which at least one node executed an action of each layer.
    pub running_time: [usize; 4],
    /// Last round in which each layer executed an action, 0 if none did.
    pub termination_round: [usize; 4],
    /// First round after which layers `1..=l` stay legitimate for the rest of
    /// the run (0 means from the start). Only with `track_legitimacy`.
    pub legitimacy_round: Option<[Option<usize>; 4]>,
}

/// Cached evaluation of one node.
type Pending = Option<(ActionId, NodeState)>;

fn fire(topo: &Topology, roles: &RoleAssignment, config: &Configuration, v: NodeId) -> Pending {
    local_view(topo, roles, config, v).fire()
}

/// Runs from `config` until no node is enabled or a limit is hit.
pub fn run(
    topo: &Topology,
    roles: &RoleAssignment,
    config: Configuration,
    scheduler: SchedulerKind,
    opts: &RunOptions,
) -> Result<Trace> {
    if opts.step_limit == 0 {
        return Err(Error::InvalidParameter("step limit must be positive".into()));
    }
    config.validate(topo)?;
    let n = topo.node_count();
    let full = opts.trace == TraceMode::Full;
    let mut sched = Scheduler::new(scheduler, n);
    let mut config = config;
    let initial = full.then(|| config.clone());

    let mut cache: Vec<Pending> = (0..n).map(|v| fire(topo, roles, &config, v)).collect();
    let mut enabled: Vec<(NodeId, ActionId)> =
        cache.iter().enumerate().filter_map(|(v, p)| p.as_ref().map(|(a, _)| (v, *a))).collect();

    let mut steps = Vec::new();
    let mut rounds: Vec<RoundSummary> = Vec::new();
    let mut pending = vec![false; n];
    let mut pending_count = 0;
    let mut current: Option<RoundSummary> = None;
    let mut dirty_mark = vec![usize::MAX; n];
    let mut dirty = Vec::new();
    let mut total_steps = 0;

    let mut legit = opts.track_legitimacy.then(|| LegitimacyTracker::new(verify::legitimate_prefix(topo, roles, &config)));

    loop {
        if current.is_none() {
            if enabled.is_empty() {
                break;
            }
            if opts.round_limit.is_some_and(|limit| rounds.len() >= limit) {
                break;
            }
            let mut by_layer = [0; 4];
            for &(v, a) in &enabled {
                pending[v] = true;
                by_layer[a.layer() - 1] += 1;
            }
            pending_count = enabled.len();
            current = Some(RoundSummary {
                index: rounds.len() + 1,
                enabled_at_start: enabled.len(),
                enabled_by_layer: by_layer,
                layers_executed: [false; 4],
                steps: 0,
                end_step: total_steps,
                complete: false,
            });
        }
        if total_steps >= opts.step_limit {
            break;
        }

        let chosen = sched.select(&enabled);
        let round = current.as_mut().unwrap();
        let mut record = Vec::with_capacity(if full { chosen.len() } else { 0 });
        let mut updates = Vec::with_capacity(chosen.len());
        for &v in &chosen {
            let (action, next) = cache[v].take().expect("scheduler picked an enabled node");
            round.layers_executed[action.layer() - 1] = true;
            if full {
                record.push((v, action));
            }
            updates.push((v, next));
        }
        for (v, next) in updates {
            config.states[v] = next;
            if pending[v] {
                pending[v] = false;
                pending_count -= 1;
            }
        }
        total_steps += 1;
        round.steps += 1;
        if full {
            steps.push(StepRecord { activated: record });
        }

        dirty.clear();
        for &v in &chosen {
            for &u in std::iter::once(&v).chain(topo.neighbors(v)) {
                if dirty_mark[u] != total_steps {
                    dirty_mark[u] = total_steps;
                    dirty.push(u);
                }
            }
        }
        for &u in &dirty {
            cache[u] = fire(topo, roles, &config, u);
            if cache[u].is_none() && pending[u] {
                pending[u] = false;
                pending_count -= 1;
            }
        }
        enabled.clear();
        enabled.extend(cache.iter().enumerate().filter_map(|(v, p)| p.as_ref().map(|(a, _)| (v, *a))));

        if pending_count == 0 {
            let mut done = current.take().unwrap();
            done.complete = true;
            done.end_step = total_steps;
            rounds.push(done);
            if let Some(tracker) = legit.as_mut() {
                tracker.observe(rounds.len(), verify::legitimate_prefix(topo, roles, &config));
            }
        }
    }

    if let Some(mut partial) = current.take() {
        partial.end_step = total_steps;
        rounds.push(partial);
    }
    let converged = enabled.is_empty();
    let mut running_time = [0; 4];
    let mut termination_round = [0; 4];
    for r in &rounds {
        for l in 0..4 {
            if r.layers_executed[l] {
                running_time[l] += 1;
                termination_round[l] = r.index;
            }
        }
    }
    Ok(Trace {
        initial,
        steps,
        total_rounds: rounds.len(),
        rounds,
        final_config: config,
        total_steps,
        converged,
        scheduler,
        running_time,
        termination_round,
        legitimacy_round: legit.filter(|_| converged).map(|t| t.rounds()),
    })
}

struct LegitimacyTracker {
    /// Last observed round in which the prefix of legitimate layers was
    /// shorter than `l + 1`.
    last_bad: [Option<usize>; 4],
}

impl LegitimacyTracker {
    fn new(prefix: usize) -> Self {
        let mut t = LegitimacyTracker { last_bad: [None; 4] };
        t.observe(0, prefix);
        t
    }

    fn observe(&mut self, round: usize, prefix: usize) {
        for l in prefix..4 {
            self.last_bad[l] = Some(round);
        }
    }

    fn rounds(&self) -> [Option<usize>; 4] {
        self.last_bad.map(|bad| Some(bad.map_or(0, |r| r + 1)))
    }
}

/// Recomputes round boundaries by replaying a full trace from its initial
/// configuration with from-scratch guard scans, and checks them against the
/// boundaries recorded during the run. Returns the end step of each round.
pub fn count_rounds(topo: &Topology, roles: &RoleAssignment, trace: &Trace) -> Result<Vec<usize>> {
    let initial = trace
        .initial
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("round recount needs a full trace".into()))?;
    let n = topo.node_count();
    let mut config = initial.clone();
    let mut enabled: Vec<bool> = vec![false; n];
    for (v, _) in enabled_nodes(topo, roles, &config) {
        enabled[v] = true;
    }
    let mut boundaries = Vec::new();
    let mut pending: Vec<bool> = Vec::new();
    let mut open = false;
    for (i, record) in trace.steps.iter().enumerate() {
        if !open {
            pending = enabled.clone();
            open = true;
        }
        for &(v, action) in &record.activated {
            let actual = enabled_action(topo, roles, &config, v);
            if actual != Some(action) {
                return Err(Error::Consistency(format!("step {i}: node {v} recorded {action} but replay has {actual:?}")));
            }
        }
        let activated: Vec<NodeId> = record.activated.iter().map(|&(v, _)| v).collect();
        config = step(topo, roles, &config, &activated)?;
        let mut after = vec![false; n];
        for (v, _) in enabled_nodes(topo, roles, &config) {
            after[v] = true;
        }
        for v in 0..n {
            if pending[v] && (activated.contains(&v) || (enabled[v] && !after[v])) {
                pending[v] = false;
            }
        }
        enabled = after;
        if !pending.iter().any(|&p| p) {
            boundaries.push(i + 1);
            open = false;
        }
    }
    if config != trace.final_config {
        return Err(Error::Consistency("replay does not reproduce the final configuration".into()));
    }
    let recorded: Vec<usize> = trace.rounds.iter().filter(|r| r.complete).map(|r| r.end_step).collect();
    if recorded != boundaries {
        return Err(Error::Consistency(format!("round boundaries differ: recorded {recorded:?}, replayed {boundaries:?}")));
    }
    Ok(boundaries)
}

/// Nodes enabled in `config`, split by the layer of their enabled action.
pub fn enabled_by_layer(topo: &Topology, roles: &RoleAssignment, config: &Configuration) -> [usize; 4] {
    let mut counts = [0; 4];
    for (_, a) in enabled_nodes(topo, roles, config) {
        counts[a.layer() - 1] += 1;
    }
    counts
}

/// Labels as a compact list, for diagnostics.
pub fn arc_labels(state: &NodeState) -> SmallVec<[Label; 8]> {
    state.arc.iter().enumerate().filter(|(_, &a)| a).map(|(i, _)| Label::from_index(i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_grid, build_random_connected, assign_roles};

    fn path3() -> (Topology, RoleAssignment) {
        let topo = Topology::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        let roles = RoleAssignment::new(3, [0], [2]).unwrap();
        (topo, roles)
    }

    #[test]
    fn synchronous_step_reads_old_snapshot() {
        let (topo, roles) = path3();
        let c0 = Configuration::zeroed(&topo);
        let enabled = enabled_nodes(&topo, &roles, &c0);
        // s is correct at layer 1 (dist 0, parent self) and red is false;
        // a and t see neighbor dist 0 and move to dist 1
        assert_eq!(enabled.iter().map(|&(v, a)| (v, a)).collect::<Vec<_>>(), vec![
            (0, ActionId::L2FixDist),
            (1, ActionId::L1FixDist),
            (2, ActionId::L1FixDist),
        ]);
        let c1 = step(&topo, &roles, &c0, &[0, 1, 2]).unwrap();
        assert_eq!(c1.states[0].l2_dist, 1);
        assert_eq!(c1.states[1].l1_dist, 1);
        // t computed from a's old dist 0, not the new 1
        assert_eq!(c1.states[2].l1_dist, 1);
        let mut expected = c0.clone();
        expected.states[0].l2_dist = 1;
        expected.states[1].l1_dist = 1;
        expected.states[2].l1_dist = 1;
        assert_eq!(c1, expected);
    }

    #[test]
    fn single_activation_matches_apply() {
        let (topo, roles) = path3();
        let c0 = random_configuration(&topo, 4);
        let (v, action) = enabled_nodes(&topo, &roles, &c0)[0];
        let next = local_view(&topo, &roles, &c0, v).apply_action(action).unwrap();
        let c1 = step(&topo, &roles, &c0, &[v]).unwrap();
        let mut expected = c0.clone();
        expected.states[v] = next;
        assert_eq!(c1, expected);
    }

    #[test]
    fn step_rejects_disabled_and_empty() {
        let (topo, roles) = path3();
        let fixpoint = verify::reference_construct(&topo, &roles);
        assert!(matches!(step(&topo, &roles, &fixpoint, &[0]), Err(Error::Contract(_))));
        assert!(matches!(step(&topo, &roles, &fixpoint, &[]), Err(Error::Contract(_))));
    }

    #[test]
    fn run_from_fixpoint_is_empty() {
        let (topo, roles) = path3();
        let fixpoint = verify::reference_construct(&topo, &roles);
        let trace = run(&topo, &roles, fixpoint.clone(), SchedulerKind::Synchronous, &RunOptions::default()).unwrap();
        assert!(trace.converged);
        assert_eq!((trace.total_steps, trace.total_rounds), (0, 0));
        assert_eq!(trace.final_config, fixpoint);
    }

    #[test]
    fn path_converges_to_chain() {
        let (topo, roles) = path3();
        let trace = run(&topo, &roles, Configuration::zeroed(&topo), SchedulerKind::Synchronous, &RunOptions::default()).unwrap();
        assert!(trace.converged);
        let arcs: Vec<_> = trace.final_config.states.iter().map(|s| s.arc.to_vec()).collect();
        assert_eq!(arcs, vec![vec![true], vec![false, true], vec![false]]);
    }

    #[test]
    fn synchronous_rounds_are_steps() {
        let topo = build_random_connected(15, 0.3, 1).unwrap();
        let roles = assign_roles(&topo, 2, 3, 1).unwrap();
        let opts = RunOptions { trace: TraceMode::Full, ..Default::default() };
        let trace = run(&topo, &roles, random_configuration(&topo, 9), SchedulerKind::Synchronous, &opts).unwrap();
        assert!(trace.converged);
        assert_eq!(trace.total_rounds, trace.total_steps);
        assert!(trace.rounds.iter().all(|r| r.steps == 1));
        let bounds = count_rounds(&topo, &roles, &trace).unwrap();
        assert_eq!(bounds, (1..=trace.total_steps).collect::<Vec<_>>());
    }

    #[test]
    fn round_robin_round_spans_independent_nodes() {
        // star with the sender in the middle: every leaf is independently
        // enabled at the start and round robin serves them one per step
        let k = 4;
        let edges: Vec<_> = (1..=k).map(|v| (0, v)).collect();
        let topo = Topology::from_edges(k + 1, &edges).unwrap();
        let roles = RoleAssignment::new(k + 1, [0], [1]).unwrap();
        let mut c0 = verify::reference_construct(&topo, &roles);
        for v in 2..=k {
            c0.states[v].l1_dist = 3;
        }
        let opts = RunOptions { trace: TraceMode::Full, ..Default::default() };
        let trace = run(&topo, &roles, c0, SchedulerKind::RoundRobinSingle, &opts).unwrap();
        assert!(trace.converged);
        assert_eq!(trace.rounds[0].enabled_at_start, k - 1);
        assert_eq!(trace.rounds[0].steps, k - 1);
        assert_eq!(count_rounds(&topo, &roles, &trace).unwrap()[0], k - 1);
    }

    #[test]
    fn count_rounds_detects_tampering() {
        let topo = build_random_connected(10, 0.4, 3).unwrap();
        let roles = assign_roles(&topo, 2, 2, 3).unwrap();
        let opts = RunOptions { trace: TraceMode::Full, ..Default::default() };
        let mut trace = run(&topo, &roles, random_configuration(&topo, 3), SchedulerKind::RandomFairSubset { seed: 5 }, &opts).unwrap();
        assert!(count_rounds(&topo, &roles, &trace).is_ok());
        trace.rounds[0].end_step += 1;
        assert!(matches!(count_rounds(&topo, &roles, &trace), Err(Error::Consistency(_))));
    }

    #[test]
    fn empty_execution_has_no_rounds() {
        let (topo, roles) = path3();
        let opts = RunOptions { trace: TraceMode::Full, ..Default::default() };
        let trace = run(&topo, &roles, verify::reference_construct(&topo, &roles), SchedulerKind::RoundRobinSingle, &opts).unwrap();
        assert!(count_rounds(&topo, &roles, &trace).unwrap().is_empty());
    }

    #[test]
    fn randomize_is_seeded_and_local() {
        let topo = build_grid(4).unwrap();
        let base = Configuration::zeroed(&topo);
        assert_eq!(randomize_states(&topo, &base, &[], 1), base);
        let all: Vec<_> = (0..16).collect();
        assert_eq!(randomize_states(&topo, &base, &all, 1), randomize_states(&topo, &base, &all, 1));
        let one = randomize_states(&topo, &base, &[5], 2);
        assert!((0..16).filter(|&v| v != 5).all(|v| one.states[v] == base.states[v]));
        assert!(random_configuration(&topo, 3).validate(&topo).is_ok());
    }

    #[test]
    fn perturbing_a_fixpoint_enables_nearby_nodes() {
        let topo = build_grid(5).unwrap();
        let roles = assign_roles(&topo, 3, 3, 8).unwrap();
        let fixpoint = verify::reference_construct(&topo, &roles);
        for seed in 0..50 {
            let v = seed as usize % 25;
            let c = randomize_states(&topo, &fixpoint, &[v], seed);
            let enabled: Vec<_> = enabled_nodes(&topo, &roles, &c).into_iter().map(|(u, _)| u).collect();
            if c == fixpoint {
                assert!(enabled.is_empty());
            } else {
                assert!(enabled.iter().any(|&u| u == v || topo.neighbors(v).contains(&u)), "seed {seed}");
            }
        }
    }

    #[test]
    fn round_limit_flags_non_convergence() {
        let topo = build_grid(6).unwrap();
        let roles = assign_roles(&topo, 1, 1, 0).unwrap();
        let opts = RunOptions { round_limit: Some(3), ..Default::default() };
        let trace = run(&topo, &roles, random_configuration(&topo, 0), SchedulerKind::Synchronous, &opts).unwrap();
        assert!(!trace.converged);
        assert_eq!(trace.total_rounds, 3);
    }

    #[test]
    fn jsonl_roundtrip_and_truncation() {
        let topo = build_grid(3).unwrap();
        let c = random_configuration(&topo, 12);
        let text = c.to_jsonl();
        assert_eq!(Configuration::read_jsonl(text.as_bytes(), &topo).unwrap(), c);

        let cut = &text[..text.len() - text.lines().last().unwrap().len() / 2 - 1];
        let err = Configuration::read_jsonl(cut.as_bytes(), &topo).unwrap_err().to_string();
        assert!(err.contains("node 8"), "{err}");

        let short: String = text.lines().take(5).map(|l| format!("{l}\n")).collect();
        let err = Configuration::read_jsonl(short.as_bytes(), &topo).unwrap_err().to_string();
        assert!(err.contains("node 5"), "{err}");
    }

    #[test]
    fn legitimacy_rounds_are_ordered() {
        let topo = build_grid(6).unwrap();
        let roles = assign_roles(&topo, 3, 4, 2).unwrap();
        let opts = RunOptions { track_legitimacy: true, ..Default::default() };
        let trace = run(&topo, &roles, random_configuration(&topo, 2), SchedulerKind::Synchronous, &opts).unwrap();
        let rounds = trace.legitimacy_round.unwrap().map(Option::unwrap);
        assert!(rounds.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(rounds[3], trace.total_rounds);
    }
}
