//! Problem instances: an anonymous undirected graph with per-node local
//! neighbor labels, plus the sender and target role sets.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Simulator-internal node index. The protocol never sees it.
pub type NodeId = usize;

/// A local neighbor label, `1..=degree`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Label(pub u32);

impl Label {
    pub fn from_index(i: usize) -> Self {
        Label(i as u32 + 1)
    }

    /// Zero-based slot of this label in per-neighbor arrays.
    pub fn index(self) -> usize {
        self.0 as usize - 1
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Undirected simple connected graph with local labels.
///
/// `neighbors[v][i]` is the neighbor that `v` calls label `i + 1`, and
/// `back_labels[v][i]` is the label that neighbor assigns to `v`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Topology {
    neighbors: Vec<Vec<NodeId>>,
    back_labels: Vec<Vec<Label>>,
    edge_count: usize,
}

impl Topology {
    /// Builds a topology with canonical labels: each node labels its
    /// neighbors by ascending node id.
    pub fn from_edges(n: usize, edges: &[(NodeId, NodeId)]) -> Result<Self> {
        let mut adj = adjacency_sets(n, edges)?;
        let neighbors: Vec<Vec<NodeId>> = adj.iter_mut().map(|s| s.iter().copied().collect()).collect();
        Self::from_neighbor_lists(neighbors)
    }

    /// Builds a topology whose label order at each node is given explicitly.
    /// `labels[v]` must list exactly the neighbors of `v` induced by `edges`.
    pub fn with_labels(n: usize, edges: &[(NodeId, NodeId)], labels: Vec<Vec<NodeId>>) -> Result<Self> {
        let adj = adjacency_sets(n, edges)?;
        if labels.len() != n {
            return Err(Error::Invalid(format!("labels: expected {n} rows, found {}", labels.len())));
        }
        for (v, row) in labels.iter().enumerate() {
            let as_set: BTreeSet<NodeId> = row.iter().copied().collect();
            if as_set.len() != row.len() || as_set != adj[v] {
                return Err(Error::Invalid(format!(
                    "labels[{v}]: must be a permutation of the node's neighbors {:?}",
                    adj[v]
                )));
            }
        }
        Self::from_neighbor_lists(labels)
    }

    fn from_neighbor_lists(neighbors: Vec<Vec<NodeId>>) -> Result<Self> {
        let n = neighbors.len();
        let mut position = vec![Vec::new(); n];
        for (v, row) in neighbors.iter().enumerate() {
            position[v] = row.iter().enumerate().map(|(i, &u)| (u, i)).collect::<Vec<_>>();
            position[v].sort_unstable();
        }
        let back_labels = neighbors
            .iter()
            .enumerate()
            .map(|(v, row)| {
                row.iter()
                    .map(|&u| {
                        let slot = position[u].binary_search_by_key(&v, |&(w, _)| w).expect("symmetric adjacency");
                        Label::from_index(position[u][slot].1)
                    })
                    .collect()
            })
            .collect();
        let edge_count = neighbors.iter().map(Vec::len).sum::<usize>() / 2;
        let topo = Topology { neighbors, back_labels, edge_count };
        if !topo.is_connected() {
            return Err(Error::Invalid("graph is not connected".into()));
        }
        Ok(topo)
    }

    pub fn node_count(&self) -> usize {
        self.neighbors.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn degree(&self, v: NodeId) -> usize {
        self.neighbors[v].len()
    }

    pub fn max_degree(&self) -> usize {
        self.neighbors.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Neighbors of `v` in label order.
    pub fn neighbors(&self, v: NodeId) -> &[NodeId] {
        &self.neighbors[v]
    }

    /// Labels that the neighbors of `v` assign to `v`, in `v`'s label order.
    pub fn back_labels(&self, v: NodeId) -> &[Label] {
        &self.back_labels[v]
    }

    pub fn neighbor(&self, v: NodeId, label: Label) -> NodeId {
        self.neighbors[v][label.index()]
    }

    pub fn label_of(&self, v: NodeId, u: NodeId) -> Option<Label> {
        self.neighbors[v].iter().position(|&w| w == u).map(Label::from_index)
    }

    /// Edge list with `u < v`, sorted.
    pub fn edges(&self) -> Vec<(NodeId, NodeId)> {
        let mut edges: Vec<_> = (0..self.node_count())
            .flat_map(|v| self.neighbors[v].iter().filter(move |&&u| v < u).map(move |&u| (v, u)))
            .collect();
        edges.sort_unstable();
        edges
    }

    pub fn has_canonical_labels(&self) -> bool {
        self.neighbors.iter().all(|row| row.windows(2).all(|w| w[0] < w[1]))
    }

    /// Hop distances from a set of sources; `usize::MAX` for unreachable.
    pub fn bfs_distances(&self, sources: impl IntoIterator<Item = NodeId>) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.node_count()];
        let mut queue = VecDeque::new();
        for s in sources {
            if dist[s] != 0 {
                dist[s] = 0;
                queue.push_back(s);
            }
        }
        while let Some(v) = queue.pop_front() {
            for &u in &self.neighbors[v] {
                if dist[u] == usize::MAX {
                    dist[u] = dist[v] + 1;
                    queue.push_back(u);
                }
            }
        }
        dist
    }

    pub fn is_connected(&self) -> bool {
        self.node_count() > 0 && self.bfs_distances([0]).iter().all(|&d| d != usize::MAX)
    }

    /// Exact diameter by a BFS from every node.
    pub fn diameter(&self) -> usize {
        (0..self.node_count())
            .map(|v| self.bfs_distances([v]).into_iter().max().unwrap_or(0))
            .max()
            .unwrap_or(0)
    }

    /// Returns a copy where every node's labels are independently permuted.
    pub fn shuffle_labels(&self, seed: u64) -> Topology {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut neighbors = self.neighbors.clone();
        for row in &mut neighbors {
            row.shuffle(&mut rng);
        }
        Self::from_neighbor_lists(neighbors).expect("relabeling preserves connectivity")
    }
}

fn adjacency_sets(n: usize, edges: &[(NodeId, NodeId)]) -> Result<Vec<BTreeSet<NodeId>>> {
    if n < 2 {
        return Err(Error::Invalid(format!("nodes: need at least 2, found {n}")));
    }
    let mut adj = vec![BTreeSet::new(); n];
    for (i, &(u, v)) in edges.iter().enumerate() {
        if u >= n || v >= n {
            return Err(Error::Invalid(format!("edges[{i}]: endpoint out of range ({u}, {v}) for {n} nodes")));
        }
        if u == v {
            return Err(Error::Invalid(format!("edges[{i}]: self-loop at node {u}")));
        }
        if !adj[u].insert(v) {
            return Err(Error::Invalid(format!("edges[{i}]: duplicate edge ({u}, {v})")));
        }
        adj[v].insert(u);
    }
    Ok(adj)
}

/// The `d x d` grid in row-major order.
pub fn build_grid(d: usize) -> Result<Topology> {
    if d < 2 {
        return Err(Error::InvalidParameter(format!("grid side must be at least 2, got {d}")));
    }
    let id = |r: usize, c: usize| r * d + c;
    let mut edges = Vec::with_capacity(2 * d * (d - 1));
    for r in 0..d {
        for c in 0..d {
            // north, south, west, east; labels are then assigned canonically
            if r + 1 < d {
                edges.push((id(r, c), id(r + 1, c)));
            }
            if c + 1 < d {
                edges.push((id(r, c), id(r, c + 1)));
            }
        }
    }
    Topology::from_edges(d * d, &edges)
}

/// Random simple connected graph: a random spanning tree plus uniformly
/// chosen extra edges until `edge_density` of all possible pairs is reached.
pub fn build_random_connected(n: usize, edge_density: f64, seed: u64) -> Result<Topology> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 nodes, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_edges = n * (n - 1) / 2;
    let density = if edge_density.is_nan() { 0.0 } else { edge_density.clamp(0.0, 1.0) };
    let wanted = ((density * max_edges as f64).round() as usize).clamp(n - 1, max_edges);

    let mut order: Vec<NodeId> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut present = vec![false; max_edges];
    let pair_index = |u: usize, v: usize| {
        let (a, b) = if u < v { (u, v) } else { (v, u) };
        a * (2 * n - a - 1) / 2 + (b - a - 1)
    };
    let mut edges = Vec::with_capacity(wanted);
    for i in 1..n {
        let u = order[i];
        let v = order[rng.gen_range(0..i)];
        present[pair_index(u, v)] = true;
        edges.push((u, v));
    }
    let mut absent: Vec<(NodeId, NodeId)> = (0..n)
        .flat_map(|u| (u + 1..n).map(move |v| (u, v)))
        .filter(|&(u, v)| !present[pair_index(u, v)])
        .collect();
    absent.shuffle(&mut rng);
    edges.extend(absent.into_iter().take(wanted - (n - 1)));
    Topology::from_edges(n, &edges)
}

/// Sender and target sets, disjoint and non-empty.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoleAssignment {
    senders: Vec<NodeId>,
    targets: Vec<NodeId>,
    is_sender: Vec<bool>,
    is_target: Vec<bool>,
}

impl RoleAssignment {
    pub fn new(n: usize, senders: impl IntoIterator<Item = NodeId>, targets: impl IntoIterator<Item = NodeId>) -> Result<Self> {
        let senders: BTreeSet<NodeId> = senders.into_iter().collect();
        let targets: BTreeSet<NodeId> = targets.into_iter().collect();
        if senders.is_empty() {
            return Err(Error::Invalid("senders: at least one sender is required".into()));
        }
        if targets.is_empty() {
            return Err(Error::Invalid("targets: at least one target is required".into()));
        }
        if let Some(&v) = senders.iter().chain(&targets).find(|&&v| v >= n) {
            return Err(Error::Invalid(format!("node {v} out of range for {n} nodes")));
        }
        if let Some(v) = senders.intersection(&targets).next() {
            return Err(Error::Invalid(format!("node {v} is both a sender and a target")));
        }
        let mut is_sender = vec![false; n];
        let mut is_target = vec![false; n];
        senders.iter().for_each(|&v| is_sender[v] = true);
        targets.iter().for_each(|&v| is_target[v] = true);
        Ok(RoleAssignment { senders: senders.into_iter().collect(), targets: targets.into_iter().collect(), is_sender, is_target })
    }

    pub fn senders(&self) -> &[NodeId] {
        &self.senders
    }

    pub fn targets(&self) -> &[NodeId] {
        &self.targets
    }

    pub fn is_sender(&self, v: NodeId) -> bool {
        self.is_sender[v]
    }

    pub fn is_target(&self, v: NodeId) -> bool {
        self.is_target[v]
    }

    pub fn node_count(&self) -> usize {
        self.is_sender.len()
    }
}

/// Draws disjoint uniformly random sender and target sets.
pub fn assign_roles(topo: &Topology, s_count: usize, t_count: usize, seed: u64) -> Result<RoleAssignment> {
    let n = topo.node_count();
    if s_count == 0 || t_count == 0 || s_count + t_count > n {
        return Err(Error::InvalidParameter(format!(
            "cannot place {s_count} senders and {t_count} targets on {n} nodes"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = index::sample(&mut rng, n, s_count + t_count).into_vec();
    RoleAssignment::new(n, picked[..s_count].iter().copied(), picked[s_count..].iter().copied())
}

/// A topology together with its roles.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Instance {
    pub topology: Topology,
    pub roles: RoleAssignment,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceFile {
    nodes: usize,
    edges: Vec<(NodeId, NodeId)>,
    senders: Vec<NodeId>,
    targets: Vec<NodeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<Vec<NodeId>>>,
}

impl Instance {
    pub fn new(topology: Topology, roles: RoleAssignment) -> Result<Self> {
        if roles.node_count() != topology.node_count() {
            return Err(Error::Invalid(format!(
                "roles cover {} nodes but the graph has {}",
                roles.node_count(),
                topology.node_count()
            )));
        }
        Ok(Instance { topology, roles })
    }

    pub fn to_json(&self) -> String {
        let topo = &self.topology;
        let file = InstanceFile {
            nodes: topo.node_count(),
            edges: topo.edges(),
            senders: self.roles.senders().to_vec(),
            targets: self.roles.targets().to_vec(),
            labels: (!topo.has_canonical_labels()).then(|| topo.neighbors.clone()),
        };
        serde_json::to_string_pretty(&file).expect("instance serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: InstanceFile = serde_json::from_str(text)?;
        let topology = match file.labels {
            Some(labels) => Topology::with_labels(file.nodes, &file.edges, labels)?,
            None => Topology::from_edges(file.nodes, &file.edges)?,
        };
        let roles = RoleAssignment::new(file.nodes, file.senders, file.targets)?;
        Instance::new(topology, roles)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}
