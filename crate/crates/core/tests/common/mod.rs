#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wstdag_core::experiment::splitmix64;
use wstdag_core::graph::{assign_roles, build_random_connected, Instance};
use wstdag_core::sim::{self, Configuration};
use wstdag_core::{ActionId, NodeId, RoleAssignment, Topology};

/// Random connected graph with `n` nodes, shuffled local labels, and
/// disjoint sender/target sets of the given sizes.
pub fn random_instance(n: usize, s: usize, t: usize, seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let density = rng.gen_range(0.05..0.5);
    let topo = build_random_connected(n, density, splitmix64(seed ^ 1)).unwrap();
    let topo = topo.shuffle_labels(splitmix64(seed ^ 2));
    let roles = assign_roles(&topo, s, t, splitmix64(seed ^ 3)).unwrap();
    Instance::new(topo, roles).unwrap()
}

/// Draws sizes as well: `n` in `n_range`, |S| and |T| in `1..=max_role`.
pub fn random_sized_instance(n_range: std::ops::RangeInclusive<usize>, max_role: usize, seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed));
    let n = rng.gen_range(n_range);
    let s = rng.gen_range(1..=max_role.min(n - 1));
    let t = rng.gen_range(1..=max_role.min(n - s));
    random_instance(n, s, t, seed)
}

/// Steps every node whose enabled action lies in a layer `<= max_layer`
/// until none is left. Lower layers act first by construction, so the
/// result is a fixpoint of layers `1..=max_layer`.
pub fn settle_layers(topo: &Topology, roles: &RoleAssignment, mut config: Configuration, max_layer: usize) -> Configuration {
    for _ in 0..100_000 {
        let active: Vec<NodeId> = sim::enabled_nodes(topo, roles, &config)
            .into_iter()
            .filter(|&(_, a): &(NodeId, ActionId)| a.layer() <= max_layer)
            .map(|(v, _)| v)
            .collect();
        if active.is_empty() {
            return config;
        }
        config = sim::step(topo, roles, &config, &active).unwrap();
    }
    panic!("layers 1..={max_layer} did not settle");
}
