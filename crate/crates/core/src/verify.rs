//! Correctness predicates and the centralized reference construction.
//!
//! Everything here is computed globally from the topology and the raw node
//! states, independently of the guard evaluation in [`crate::protocol`]. The
//! only exception is the layer-4 quiescence check, which by definition asks
//! whether the protocol's own layer-4 guards are all false.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Label, NodeId, RoleAssignment, Topology};
use crate::protocol::{ActionId, NodeState, Parent};
use crate::sim::{self, Configuration};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ArcSource {
    /// The `arc` output variables.
    Output,
    /// The layer-3 `l3_arc` variables.
    Layer3,
}

/// A directed subgraph of the topology.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputDigraph {
    pub node_count: usize,
    /// Sorted `(from, to)` pairs.
    pub arcs: Vec<(NodeId, NodeId)>,
    pub source: ArcSource,
}

impl OutputDigraph {
    /// Builds a digraph from explicit arcs, rejecting any arc that does not
    /// overlay an edge of `topo`.
    pub fn from_arcs(topo: &Topology, arcs: impl IntoIterator<Item = (NodeId, NodeId)>, source: ArcSource) -> Result<Self> {
        let mut arcs: Vec<_> = arcs.into_iter().collect();
        for &(u, v) in &arcs {
            if u >= topo.node_count() || topo.label_of(u, v).is_none() {
                return Err(Error::InvalidInput(format!("arc ({u}, {v}) is not an edge of the graph")));
            }
        }
        arcs.sort_unstable();
        arcs.dedup();
        Ok(OutputDigraph { node_count: topo.node_count(), arcs, source })
    }

    fn successors(&self, skip: Option<usize>) -> Vec<Vec<NodeId>> {
        let mut out = vec![Vec::new(); self.node_count];
        for (i, &(u, v)) in self.arcs.iter().enumerate() {
            if Some(i) != skip {
                out[u].push(v);
            }
        }
        out
    }

    fn predecessors(&self, skip: Option<usize>) -> Vec<Vec<NodeId>> {
        let mut out = vec![Vec::new(); self.node_count];
        for (i, &(u, v)) in self.arcs.iter().enumerate() {
            if Some(i) != skip {
                out[v].push(u);
            }
        }
        out
    }
}

/// Reads the arcs out of a configuration.
pub fn extract_digraph(topo: &Topology, config: &Configuration, source: ArcSource) -> OutputDigraph {
    let mut arcs = Vec::new();
    for (v, state) in config.states.iter().enumerate() {
        let flags = match source {
            ArcSource::Output => &state.arc,
            ArcSource::Layer3 => &state.l3_arc,
        };
        for (i, &set) in flags.iter().enumerate() {
            if set {
                arcs.push((v, topo.neighbor(v, Label::from_index(i))));
            }
        }
    }
    arcs.sort_unstable();
    OutputDigraph { node_count: topo.node_count(), arcs, source }
}

fn reach(adj: &[Vec<NodeId>], sources: &[NodeId]) -> Vec<bool> {
    let mut seen = vec![false; adj.len()];
    let mut queue: VecDeque<NodeId> = VecDeque::new();
    for &s in sources {
        if !seen[s] {
            seen[s] = true;
            queue.push_back(s);
        }
    }
    while let Some(v) = queue.pop_front() {
        for &u in &adj[v] {
            if !seen[u] {
                seen[u] = true;
                queue.push_back(u);
            }
        }
    }
    seen
}

/// Senders that reach no target, and targets reached by no sender.
fn reachability_violations(dg: &OutputDigraph, roles: &RoleAssignment, skip: Option<usize>) -> (Vec<NodeId>, Vec<NodeId>) {
    let reaches_target = reach(&dg.predecessors(skip), roles.targets());
    let reached = reach(&dg.successors(skip), roles.senders());
    let bad_senders = roles.senders().iter().copied().filter(|&s| !reaches_target[s]).collect();
    let bad_targets = roles.targets().iter().copied().filter(|&t| !reached[t]).collect();
    (bad_senders, bad_targets)
}

/// A directed cycle, listed as its node sequence without repeating the start.
pub fn find_cycle(dg: &OutputDigraph) -> Option<Vec<NodeId>> {
    let succ = dg.successors(None);
    // 0 = unvisited, 1 = on stack, 2 = finished
    let mut mark = vec![0u8; dg.node_count];
    let mut parent = vec![usize::MAX; dg.node_count];
    for root in 0..dg.node_count {
        if mark[root] != 0 {
            continue;
        }
        let mut stack = vec![(root, 0usize)];
        mark[root] = 1;
        while let Some(&mut (v, ref mut next)) = stack.last_mut() {
            if let Some(&u) = succ[v].get(*next) {
                *next += 1;
                match mark[u] {
                    0 => {
                        mark[u] = 1;
                        parent[u] = v;
                        stack.push((u, 0));
                    }
                    1 => {
                        let mut cycle = vec![v];
                        let mut w = v;
                        while w != u {
                            w = parent[w];
                            cycle.push(w);
                        }
                        cycle.reverse();
                        return Some(cycle);
                    }
                    _ => {}
                }
            } else {
                mark[v] = 2;
                stack.pop();
            }
        }
    }
    None
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeakDagVerdict {
    pub c1: bool,
    /// Senders that cannot reach any target.
    pub c1_violations: Vec<NodeId>,
    pub c2: bool,
    /// Targets not reachable from any sender.
    pub c2_violations: Vec<NodeId>,
    pub c3: bool,
    pub cycle: Option<Vec<NodeId>>,
}

impl WeakDagVerdict {
    pub fn holds(&self) -> bool {
        self.c1 && self.c2 && self.c3
    }
}

/// Checks reachability from every sender, to every target, and acyclicity.
pub fn check_weak_st_dag(roles: &RoleAssignment, dg: &OutputDigraph) -> WeakDagVerdict {
    let (c1_violations, c2_violations) = reachability_violations(dg, roles, None);
    let cycle = find_cycle(dg);
    WeakDagVerdict {
        c1: c1_violations.is_empty(),
        c1_violations,
        c2: c2_violations.is_empty(),
        c2_violations,
        c3: cycle.is_none(),
        cycle,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinimalityVerdict {
    pub minimal: bool,
    /// An arc whose deletion keeps both reachability conditions.
    pub removable: Option<(NodeId, NodeId)>,
}

/// Brute-force minimality: delete each arc in turn and recheck reachability.
pub fn check_minimal(roles: &RoleAssignment, dg: &OutputDigraph) -> Result<MinimalityVerdict> {
    if !check_weak_st_dag(roles, dg).holds() {
        return Err(Error::InvalidInput("minimality is only defined for a weakly ST-reachable DAG".into()));
    }
    for i in 0..dg.arcs.len() {
        let (bad_s, bad_t) = reachability_violations(dg, roles, Some(i));
        if bad_s.is_empty() && bad_t.is_empty() {
            return Ok(MinimalityVerdict { minimal: false, removable: Some(dg.arcs[i]) });
        }
    }
    Ok(MinimalityVerdict { minimal: true, removable: None })
}

/// Canonical BFS forest from `roots`: true distances, and for every non-root
/// the smallest label among neighbors one hop closer.
struct Forest {
    dist: Vec<usize>,
    parent: Vec<Parent>,
    /// Nodes by non-increasing distance.
    bottom_up: Vec<NodeId>,
}

fn bfs_forest(topo: &Topology, is_root: impl Fn(NodeId) -> bool) -> Forest {
    let n = topo.node_count();
    let dist = topo.bfs_distances((0..n).filter(|&v| is_root(v)));
    let parent = (0..n)
        .map(|v| {
            if dist[v] == 0 {
                Parent::Root
            } else {
                let i = topo.neighbors(v).iter().position(|&u| dist[u] + 1 == dist[v]).expect("bfs predecessor");
                Parent::Neighbor(Label::from_index(i))
            }
        })
        .collect();
    let mut bottom_up: Vec<NodeId> = (0..n).collect();
    bottom_up.sort_by_key(|&v| std::cmp::Reverse(dist[v]));
    Forest { dist, parent, bottom_up }
}

fn parent_node(topo: &Topology, v: NodeId, p: Parent) -> Option<NodeId> {
    match p {
        Parent::Root => None,
        Parent::Neighbor(l) => Some(topo.neighbor(v, l)),
    }
}

/// For each node, whether its subtree in the forest contains a marked node.
fn subtree_contains(topo: &Topology, forest: &Forest, marked: impl Fn(NodeId) -> bool) -> Vec<bool> {
    let mut contains: Vec<bool> = (0..topo.node_count()).map(&marked).collect();
    for &v in &forest.bottom_up {
        if contains[v] {
            if let Some(p) = parent_node(topo, v, forest.parent[v]) {
                contains[p] = true;
            }
        }
    }
    contains
}

struct Layer12 {
    l1: Forest,
    red: Vec<bool>,
    l2: Forest,
    blue: Vec<bool>,
}

fn layer12(topo: &Topology, roles: &RoleAssignment) -> Layer12 {
    let l1 = bfs_forest(topo, |v| roles.is_sender(v));
    let red = subtree_contains(topo, &l1, |v| roles.is_target(v));
    let l2 = bfs_forest(topo, |v| red[v]);
    let has_sender = subtree_contains(topo, &l2, |v| roles.is_sender(v));
    let blue = (0..topo.node_count()).map(|v| !red[v] && has_sender[v]).collect();
    Layer12 { l1, red, l2, blue }
}

/// Layer-3 arcs implied by the tree and color variables of `states`.
fn l3_arcs_of(topo: &Topology, states: &[NodeState], v: NodeId) -> Vec<bool> {
    let s = &states[v];
    topo.neighbors(v)
        .iter()
        .zip(topo.back_labels(v))
        .enumerate()
        .map(|(i, (&u, &back))| {
            let red_child = states[u].l1_parent == Parent::Neighbor(back) && states[u].l1_color;
            (s.l1_color && red_child) || (s.l2_color && s.l2_parent == Parent::Neighbor(Label::from_index(i)))
        })
        .collect()
}

/// The unique final configuration, computed centrally.
pub fn reference_construct(topo: &Topology, roles: &RoleAssignment) -> Configuration {
    let n = topo.node_count();
    let Layer12 { l1, red, l2, blue } = layer12(topo, roles);
    let mut states: Vec<NodeState> = (0..n)
        .map(|v| {
            let mut s = NodeState::zeroed(topo.degree(v));
            s.l1_dist = l1.dist[v] as u32;
            s.l1_parent = l1.parent[v];
            s.l1_color = red[v];
            s.l2_dist = l2.dist[v] as u32;
            s.l2_parent = l2.parent[v];
            s.l2_color = blue[v];
            s
        })
        .collect();
    for v in 0..n {
        let arcs = l3_arcs_of(topo, &states, v);
        states[v].l3_arc = arcs.into_iter().collect();
    }

    let is_l1_child = |v: NodeId, u: NodeId| parent_node(topo, u, l1.parent[u]) == Some(v);
    let has_blue_child: Vec<bool> = (0..n)
        .map(|v| topo.neighbors(v).iter().any(|&u| blue[u] && parent_node(topo, u, l2.parent[u]) == Some(v)))
        .collect();

    // branch flags, leaves first
    let mut branch = vec![false; n];
    for &v in &l1.bottom_up {
        if !red[v] {
            continue;
        }
        let red_children: Vec<NodeId> = topo.neighbors(v).iter().copied().filter(|&u| red[u] && is_l1_child(v, u)).collect();
        let all_branch = !red_children.is_empty() && red_children.iter().all(|&u| branch[u]);
        branch[v] = has_blue_child[v] || (all_branch && !roles.is_target(v));
    }

    // output arcs, roots first so that a parent's arcs are final before
    // its children read them
    let mut top_down = l1.bottom_up.clone();
    top_down.reverse();
    for &v in &top_down {
        let children: Vec<bool> = topo.neighbors(v).iter().map(|&u| is_l1_child(v, u)).collect();
        let red_set: Vec<bool> = topo.neighbors(v).iter().zip(&children).map(|(&u, &c)| c && red[u]).collect();
        let branch_set: Vec<bool> = topo.neighbors(v).iter().zip(&children).map(|(&u, &c)| c && branch[u]).collect();
        let all_branch = red_set == branch_set;
        let min_branch = branch_set.iter().position(|&b| b);
        let cut_off = match parent_node(topo, v, l1.parent[v]) {
            None => false,
            Some(p) => {
                let back = topo.label_of(p, v).unwrap();
                !states[p].arc[back.index()] && !has_blue_child[v]
            }
        };
        let arcs: Vec<bool> = (0..topo.degree(v))
            .map(|i| {
                let rule1 = branch_set[i] && !all_branch;
                let rule2 = branch_set[i] && all_branch && min_branch != Some(i);
                let rule3 = branch_set[i] && all_branch && roles.is_target(v);
                states[v].l3_arc[i] && !(rule1 || rule2 || rule3 || cut_off)
            })
            .collect();
        states[v].arc = arcs.into_iter().collect();
        states[v].l4_branch = branch[v];
    }
    Configuration { states }
}

/// Reads the (dist, parent, color) triple of one tree layer.
type TreeVars = fn(&NodeState) -> (u32, Parent, bool);

/// Whether `layer` (1..=4) is legitimate, assuming all lower layers are.
pub fn layer_legitimate(topo: &Topology, roles: &RoleAssignment, config: &Configuration, layer: usize) -> bool {
    let states = &config.states;
    let n = topo.node_count();
    match layer {
        1 | 2 => {
            let Layer12 { l1, red, l2, blue } = layer12(topo, roles);
            let (forest, color, get): (&Forest, &[bool], TreeVars) = if layer == 1 {
                (&l1, &red, |s| (s.l1_dist, s.l1_parent, s.l1_color))
            } else {
                (&l2, &blue, |s| (s.l2_dist, s.l2_parent, s.l2_color))
            };
            (0..n).all(|v| get(&states[v]) == (forest.dist[v] as u32, forest.parent[v], color[v]))
        }
        3 => (0..n).all(|v| states[v].l3_arc.as_slice() == l3_arcs_of(topo, states, v).as_slice()),
        4 => {
            let quiet = (0..n).all(|v| {
                let raw = sim::local_view(topo, roles, config, v).raw_guards();
                let first_l4 = ActionId::L4RemoveWrongArc as usize;
                !raw[first_l4..].iter().any(|&g| g)
            });
            quiet && {
                let dg = extract_digraph(topo, config, ArcSource::Output);
                check_weak_st_dag(roles, &dg).holds() && check_minimal(roles, &dg).map(|m| m.minimal).unwrap_or(false)
            }
        }
        _ => false,
    }
}

/// Number of consecutive legitimate layers starting from layer 1.
pub fn legitimate_prefix(topo: &Topology, roles: &RoleAssignment, config: &Configuration) -> usize {
    (1..=4).take_while(|&l| layer_legitimate(topo, roles, config, l)).count()
}

/// No node has an enabled action.
pub fn is_final(topo: &Topology, roles: &RoleAssignment, config: &Configuration) -> bool {
    (0..topo.node_count()).all(|v| sim::enabled_action(topo, roles, config, v).is_none())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictReport {
    pub arcs: Vec<(NodeId, NodeId)>,
    #[serde(flatten)]
    pub dag: WeakDagVerdict,
    /// `None` when the output is not a weakly ST-reachable DAG.
    pub minimal: Option<bool>,
    pub removable_arc: Option<(NodeId, NodeId)>,
    /// Layer `l` is reported legitimate only when layers below it are too.
    pub legitimate: [bool; 4],
    pub is_final: bool,
    /// Up to 16 enabled nodes, witnessing non-finality.
    pub enabled: Vec<(NodeId, ActionId)>,
}

impl VerdictReport {
    pub fn all_pass(&self) -> bool {
        self.dag.holds() && self.minimal == Some(true) && self.legitimate.iter().all(|&l| l) && self.is_final
    }
}

/// Every predicate at once, on the output arcs of `config`.
pub fn verdict(topo: &Topology, roles: &RoleAssignment, config: &Configuration) -> VerdictReport {
    let dg = extract_digraph(topo, config, ArcSource::Output);
    let dag = check_weak_st_dag(roles, &dg);
    let (minimal, removable_arc) = match check_minimal(roles, &dg) {
        Ok(m) => (Some(m.minimal), m.removable),
        Err(_) => (None, None),
    };
    let prefix = legitimate_prefix(topo, roles, config);
    let enabled: Vec<_> = sim::enabled_nodes(topo, roles, config);
    VerdictReport {
        arcs: dg.arcs,
        dag,
        minimal,
        removable_arc,
        legitimate: [prefix >= 1, prefix >= 2, prefix >= 3, prefix >= 4],
        is_final: enabled.is_empty(),
        enabled: enabled.into_iter().take(16).collect(),
    }
}
