//! The four-layer guarded-command protocol, evaluated purely on a node's
//! local view: its own state, its role flags, and the full state of each
//! neighbor together with the label that neighbor uses for it.
//!
//! Layers are composed hierarchically. A layer's guards are only consulted
//! when every guard of every lower layer is false, and inside a layer the
//! first true guard in declaration order wins, so at most one action is
//! enabled per node.

use std::fmt;

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::graph::Label;

/// Per-neighbor boolean array indexed by label.
pub type ArcFlags = SmallVec<[bool; 8]>;

/// Parent pointer of a tree layer. Serialized as `0` for the node itself and
/// as the neighbor label otherwise.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "u32", into = "u32")]
pub enum Parent {
    Root,
    Neighbor(Label),
}

impl From<u32> for Parent {
    fn from(raw: u32) -> Self {
        match raw {
            0 => Parent::Root,
            l => Parent::Neighbor(Label(l)),
        }
    }
}

impl From<Parent> for u32 {
    fn from(p: Parent) -> u32 {
        match p {
            Parent::Root => 0,
            Parent::Neighbor(Label(l)) => l,
        }
    }
}

/// All protocol variables of one node.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NodeState {
    pub l1_dist: u32,
    pub l1_parent: Parent,
    /// Red flag.
    pub l1_color: bool,
    pub l2_dist: u32,
    pub l2_parent: Parent,
    /// Blue flag.
    pub l2_color: bool,
    pub l3_arc: ArcFlags,
    /// Output arcs.
    pub arc: ArcFlags,
    pub l4_branch: bool,
}

impl NodeState {
    /// Every field at its zero value, parents pointing at the node itself.
    pub fn zeroed(degree: usize) -> Self {
        NodeState {
            l1_dist: 0,
            l1_parent: Parent::Root,
            l1_color: false,
            l2_dist: 0,
            l2_parent: Parent::Root,
            l2_color: false,
            l3_arc: SmallVec::from_elem(false, degree),
            arc: SmallVec::from_elem(false, degree),
            l4_branch: false,
        }
    }

    /// Checks the per-node domain constraints for a node of degree `degree`.
    pub fn validate(&self, degree: usize, dist_cap: u32) -> Result<(), String> {
        let parent_ok = |p: Parent| match p {
            Parent::Root => true,
            Parent::Neighbor(l) => l.0 >= 1 && l.index() < degree,
        };
        if !parent_ok(self.l1_parent) || !parent_ok(self.l2_parent) {
            return Err(format!("parent label out of range for degree {degree}"));
        }
        if self.l3_arc.len() != degree || self.arc.len() != degree {
            return Err(format!("arc arrays must have exactly {degree} entries"));
        }
        if self.l1_dist > dist_cap || self.l2_dist > dist_cap {
            return Err(format!("distance exceeds cap {dist_cap}"));
        }
        Ok(())
    }
}

/// The eleven guarded actions in priority order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ActionId {
    L1FixDist,
    L1FixParent,
    L1FixColor,
    L2FixDist,
    L2FixParent,
    L2FixColor,
    L3FixArc,
    L4RemoveWrongArc,
    L4FixBranch,
    L4AddArc,
    L4RemoveRedundantArc,
}

impl ActionId {
    pub const ALL: [ActionId; 11] = [
        ActionId::L1FixDist,
        ActionId::L1FixParent,
        ActionId::L1FixColor,
        ActionId::L2FixDist,
        ActionId::L2FixParent,
        ActionId::L2FixColor,
        ActionId::L3FixArc,
        ActionId::L4RemoveWrongArc,
        ActionId::L4FixBranch,
        ActionId::L4AddArc,
        ActionId::L4RemoveRedundantArc,
    ];

    /// Layer number, `1..=4`.
    pub fn layer(self) -> usize {
        use ActionId::*;
        match self {
            L1FixDist | L1FixParent | L1FixColor => 1,
            L2FixDist | L2FixParent | L2FixColor => 2,
            L3FixArc => 3,
            L4RemoveWrongArc | L4FixBranch | L4AddArc | L4RemoveRedundantArc => 4,
        }
    }

    /// Position within the layer's action list, starting at 1.
    pub fn rank(self) -> usize {
        let first = ActionId::ALL.iter().position(|a| a.layer() == self.layer()).unwrap();
        self as usize - first + 1
    }
}

impl fmt::Display for ActionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// What a node sees of one neighbor.
#[derive(Clone, Copy, Debug)]
pub struct NeighborView<'a> {
    pub state: &'a NodeState,
    /// The label this neighbor assigns to the viewing node.
    pub back_label: Label,
}

/// Everything a node may read in one atomic action.
#[derive(Clone, Debug)]
pub struct LocalView<'a> {
    pub is_sender: bool,
    pub is_target: bool,
    /// Upper bound of the distance domain; distance arithmetic saturates here.
    pub dist_cap: u32,
    pub own: &'a NodeState,
    /// Indexed by `label.index()`.
    pub neighbors: SmallVec<[NeighborView<'a>; 8]>,
}

/// Correct values of a tree layer's three variables.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerTargets {
    pub dist: u32,
    pub parent: Parent,
    pub color: bool,
}

/// Outcome of the four removal rules for one outgoing arc.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Redundancy {
    pub rule1: bool,
    pub rule2: bool,
    pub rule3: bool,
    pub rule4: bool,
    pub redundant: bool,
}

/// Aggregates over the child sets used by layer 4.
struct ChildSets {
    branch: ArcFlags,
    any_blue: bool,
    any_red: bool,
    branch_subset_red: bool,
    branch_equals_red: bool,
    min_branch: Option<usize>,
}

impl<'a> LocalView<'a> {
    pub fn degree(&self) -> usize {
        self.neighbors.len()
    }

    fn points_here(&self, i: usize, parent: Parent) -> bool {
        parent == Parent::Neighbor(self.neighbors[i].back_label)
    }

    pub fn is_l1_child(&self, label: Label) -> bool {
        let i = label.index();
        self.points_here(i, self.neighbors[i].state.l1_parent)
    }

    /// `u` is in RedChild: an L1 child whose red flag is set.
    pub fn is_red_child(&self, label: Label) -> bool {
        self.is_l1_child(label) && self.neighbors[label.index()].state.l1_color
    }

    /// `u` is in BlueChild: an L2 child whose blue flag is set.
    pub fn is_blue_child(&self, label: Label) -> bool {
        let nb = &self.neighbors[label.index()];
        self.points_here(label.index(), nb.state.l2_parent) && nb.state.l2_color
    }

    /// `u` is in BranchChild: an L1 child whose branch flag is set.
    pub fn is_branch_child(&self, label: Label) -> bool {
        self.is_l1_child(label) && self.neighbors[label.index()].state.l4_branch
    }

    fn labels(&self) -> impl Iterator<Item = Label> {
        (0..self.degree()).map(Label::from_index)
    }

    fn any_blue_child(&self) -> bool {
        self.labels().any(|l| self.is_blue_child(l))
    }

    /// Minimum neighbor value and the smallest label attaining it.
    fn nearest(&self, dist: impl Fn(&NodeState) -> u32) -> (u32, Parent) {
        let mut best: Option<(u32, usize)> = None;
        for (i, nb) in self.neighbors.iter().enumerate() {
            let d = dist(nb.state);
            if best.is_none_or(|(b, _)| d < b) {
                best = Some((d, i));
            }
        }
        let (d, i) = best.expect("connected graphs have no isolated nodes");
        (d.saturating_add(1).min(self.dist_cap), Parent::Neighbor(Label::from_index(i)))
    }

    /// Layer 1 macro values: BFS forest rooted at senders, red flag set iff
    /// the node is a target or has a red child.
    pub fn l1_targets(&self) -> LayerTargets {
        let (dist, parent) = if self.is_sender { (0, Parent::Root) } else { self.nearest(|s| s.l1_dist) };
        let color = self.is_target || self.labels().any(|l| self.is_red_child(l));
        LayerTargets { dist, parent, color }
    }

    /// Layer 2 macro values: BFS forest rooted at red nodes, blue flag set
    /// iff the node is not red and is a sender or has a blue child.
    pub fn l2_targets(&self) -> LayerTargets {
        let red = self.own.l1_color;
        let (dist, parent) = if red { (0, Parent::Root) } else { self.nearest(|s| s.l2_dist) };
        let color = !red && (self.is_sender || self.any_blue_child());
        LayerTargets { dist, parent, color }
    }

    pub fn has_l3_arc(&self, label: Label) -> bool {
        (self.own.l1_color && self.is_red_child(label))
            || (self.own.l2_color && self.own.l2_parent == Parent::Neighbor(label))
    }

    pub fn l3_target_arcs(&self) -> ArcFlags {
        self.labels().map(|l| self.has_l3_arc(l)).collect()
    }

    fn child_sets(&self) -> ChildSets {
        let red: ArcFlags = self.labels().map(|l| self.is_red_child(l)).collect();
        let branch: ArcFlags = self.labels().map(|l| self.is_branch_child(l)).collect();
        let branch_subset_red = branch.iter().zip(&red).all(|(&b, &r)| !b || r);
        let branch_equals_red = branch == red;
        ChildSets {
            any_red: red.iter().any(|&r| r),
            min_branch: branch.iter().position(|&b| b),
            any_blue: self.any_blue_child(),
            branch,
            branch_subset_red,
            branch_equals_red,
        }
    }

    fn is_branch_with(&self, sets: &ChildSets) -> bool {
        self.own.l1_color && (sets.any_blue || (sets.branch_equals_red && sets.any_red && !self.is_target))
    }

    /// Red, and either an L2 root of some blue child, or a non-target whose
    /// red L1 children are all branch nodes.
    pub fn is_branch(&self) -> bool {
        self.is_branch_with(&self.child_sets())
    }

    fn rule4(&self, sets: &ChildSets) -> bool {
        match self.own.l1_parent {
            Parent::Root => false,
            Parent::Neighbor(p) => {
                let parent = &self.neighbors[p.index()];
                let parent_arc = parent.state.arc.get(parent.back_label.index()).copied().unwrap_or(false);
                !parent_arc && !sets.any_blue
            }
        }
    }

    fn redundancy_with(&self, sets: &ChildSets, i: usize) -> Redundancy {
        let in_branch = sets.branch[i];
        let proper_subset = sets.branch_subset_red && !sets.branch_equals_red;
        let rule1 = in_branch && proper_subset;
        let rule2 = in_branch && sets.branch_equals_red && sets.min_branch != Some(i);
        let rule3 = in_branch && sets.branch_equals_red && self.is_target;
        let rule4 = self.rule4(sets);
        Redundancy { rule1, rule2, rule3, rule4, redundant: rule1 || rule2 || rule3 || rule4 }
    }

    /// Evaluates the removal rules for the arc toward `label`.
    pub fn redundancy(&self, label: Label) -> Redundancy {
        self.redundancy_with(&self.child_sets(), label.index())
    }

    /// Raw guards of all eleven actions, without priority masking.
    pub fn raw_guards(&self) -> [bool; 11] {
        let own = self.own;
        let l1 = self.l1_targets();
        let l2 = self.l2_targets();
        let sets = self.child_sets();
        let redundant: ArcFlags = (0..self.degree()).map(|i| self.redundancy_with(&sets, i).redundant).collect();
        let any = |f: &dyn Fn(usize) -> bool| (0..self.degree()).any(f);
        [
            own.l1_dist != l1.dist,
            own.l1_parent != l1.parent,
            own.l1_color != l1.color,
            own.l2_dist != l2.dist,
            own.l2_parent != l2.parent,
            own.l2_color != l2.color,
            any(&|i| own.l3_arc[i] != self.has_l3_arc(Label::from_index(i))),
            any(&|i| !own.l3_arc[i] && own.arc[i]),
            own.l4_branch != self.is_branch_with(&sets),
            any(&|i| !redundant[i] && !own.arc[i] && own.l3_arc[i]),
            any(&|i| redundant[i] && own.arc[i]),
        ]
    }

    /// Actions whose composed guard holds: raw guard true and no guard of
    /// higher priority true. Never more than one element.
    pub fn composed_enabled(&self) -> Vec<ActionId> {
        let raw = self.raw_guards();
        ActionId::ALL
            .iter()
            .enumerate()
            .filter(|&(i, _)| raw[i] && !raw[..i].iter().any(|&g| g))
            .map(|(_, &a)| a)
            .collect()
    }

    pub fn enabled_action(&self) -> Option<ActionId> {
        self.fire().map(|(a, _)| a)
    }

    /// Finds the enabled action, if any, and the state it produces.
    pub fn fire(&self) -> Option<(ActionId, NodeState)> {
        let own = self.own;
        let with = |f: &dyn Fn(&mut NodeState)| {
            let mut next = own.clone();
            f(&mut next);
            next
        };

        let l1 = self.l1_targets();
        if own.l1_dist != l1.dist {
            return Some((ActionId::L1FixDist, with(&|s| s.l1_dist = l1.dist)));
        }
        if own.l1_parent != l1.parent {
            return Some((ActionId::L1FixParent, with(&|s| s.l1_parent = l1.parent)));
        }
        if own.l1_color != l1.color {
            return Some((ActionId::L1FixColor, with(&|s| s.l1_color = l1.color)));
        }

        let l2 = self.l2_targets();
        if own.l2_dist != l2.dist {
            return Some((ActionId::L2FixDist, with(&|s| s.l2_dist = l2.dist)));
        }
        if own.l2_parent != l2.parent {
            return Some((ActionId::L2FixParent, with(&|s| s.l2_parent = l2.parent)));
        }
        if own.l2_color != l2.color {
            return Some((ActionId::L2FixColor, with(&|s| s.l2_color = l2.color)));
        }

        let l3 = self.l3_target_arcs();
        if own.l3_arc != l3 {
            return Some((ActionId::L3FixArc, with(&|s| s.l3_arc = l3.clone())));
        }

        let deg = self.degree();
        if (0..deg).any(|i| !own.l3_arc[i] && own.arc[i]) {
            return Some((
                ActionId::L4RemoveWrongArc,
                with(&|s| (0..deg).filter(|&i| !own.l3_arc[i]).for_each(|i| s.arc[i] = false)),
            ));
        }
        let sets = self.child_sets();
        let branch = self.is_branch_with(&sets);
        if own.l4_branch != branch {
            return Some((ActionId::L4FixBranch, with(&|s| s.l4_branch = branch)));
        }
        let redundant: ArcFlags = (0..deg).map(|i| self.redundancy_with(&sets, i).redundant).collect();
        let missing: SmallVec<[usize; 8]> = (0..deg).filter(|&i| !redundant[i] && !own.arc[i] && own.l3_arc[i]).collect();
        if !missing.is_empty() {
            return Some((ActionId::L4AddArc, with(&|s| missing.iter().for_each(|&i| s.arc[i] = true))));
        }
        let surplus: SmallVec<[usize; 8]> = (0..deg).filter(|&i| redundant[i] && own.arc[i]).collect();
        if !surplus.is_empty() {
            return Some((ActionId::L4RemoveRedundantArc, with(&|s| surplus.iter().for_each(|&i| s.arc[i] = false))));
        }
        None
    }

    /// Applies `action`, which must be the node's enabled action.
    pub fn apply_action(&self, action: ActionId) -> Result<NodeState> {
        match self.fire() {
            Some((enabled, next)) if enabled == action => Ok(next),
            Some((enabled, _)) => Err(Error::Contract(format!("{action} applied but {enabled} is the enabled action"))),
            None => Err(Error::Contract(format!("{action} applied to a disabled node"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use smallvec::smallvec;

    /// A neighbor state plus the label it uses for the viewing node.
    struct Nb {
        state: NodeState,
        back: u32,
    }

    fn nb(degree: usize, back: u32, f: impl FnOnce(&mut NodeState)) -> Nb {
        let mut state = NodeState::zeroed(degree);
        f(&mut state);
        Nb { state, back }
    }

    fn view<'a>(own: &'a NodeState, nbs: &'a [Nb], sender: bool, target: bool) -> LocalView<'a> {
        LocalView {
            is_sender: sender,
            is_target: target,
            dist_cap: 100,
            own,
            neighbors: nbs.iter().map(|n| NeighborView { state: &n.state, back_label: Label(n.back) }).collect(),
        }
    }

    fn child(back: u32) -> impl FnOnce(&mut NodeState) {
        move |s| s.l1_parent = Parent::Neighbor(Label(back))
    }

    #[test]
    fn action_layers_and_ranks() {
        assert_eq!(ActionId::L1FixColor.layer(), 1);
        assert_eq!(ActionId::L1FixColor.rank(), 3);
        assert_eq!(ActionId::L3FixArc.rank(), 1);
        assert_eq!(ActionId::L4AddArc.layer(), 4);
        assert_eq!(ActionId::L4AddArc.rank(), 3);
        assert!(ActionId::ALL.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn sender_is_l1_root() {
        let own = NodeState::zeroed(2);
        let nbs = [nb(1, 1, |s| s.l1_dist = 7), nb(3, 2, |s| s.l1_dist = 3)];
        let t = view(&own, &nbs, true, false).l1_targets();
        assert_eq!((t.dist, t.parent), (0, Parent::Root));
    }

    #[test]
    fn l1_on_path_target() {
        // s - a - t, viewed from t: a has dist 1 and parent s, so it is not t's child
        let own = NodeState::zeroed(1);
        let nbs = [nb(2, 2, |s| {
            s.l1_dist = 1;
            s.l1_parent = Parent::Neighbor(Label(1));
        })];
        let t = view(&own, &nbs, false, true).l1_targets();
        assert_eq!(t, LayerTargets { dist: 2, parent: Parent::Neighbor(Label(1)), color: true });
    }

    #[test]
    fn l1_tie_takes_smallest_label() {
        let own = NodeState::zeroed(3);
        let nbs = [nb(2, 1, |s| s.l1_dist = 5), nb(2, 1, |s| s.l1_dist = 5), nb(2, 1, |s| s.l1_dist = 9)];
        let t = view(&own, &nbs, false, false).l1_targets();
        assert_eq!((t.dist, t.parent), (6, Parent::Neighbor(Label(1))));
    }

    #[test]
    fn l1_dist_saturates_at_cap() {
        let own = NodeState::zeroed(1);
        let nbs = [nb(1, 1, |s| s.l1_dist = 100)];
        assert_eq!(view(&own, &nbs, false, false).l1_targets().dist, 100);
    }

    #[test]
    fn red_from_red_child() {
        let own = NodeState::zeroed(2);
        let nbs = [nb(1, 2, |s| s.l1_color = true), nb(2, 2, |s| {
            s.l1_parent = Parent::Neighbor(Label(2));
            s.l1_color = true;
        })];
        let v = view(&own, &nbs, false, false);
        assert!(!v.is_red_child(Label(1)));
        assert!(v.is_red_child(Label(2)));
        assert!(v.l1_targets().color);
    }

    #[test]
    fn red_node_is_l2_root() {
        let mut own = NodeState::zeroed(1);
        own.l1_color = true;
        let nbs = [nb(1, 1, |s| s.l2_dist = 4)];
        let t = view(&own, &nbs, false, false).l2_targets();
        assert_eq!(t, LayerTargets { dist: 0, parent: Parent::Root, color: false });
        // a red sender is never blue
        let t = view(&own, &nbs, true, false).l2_targets();
        assert!(!t.color);
    }

    #[test]
    fn blue_from_blue_child() {
        let own = NodeState::zeroed(2);
        let nbs = [
            nb(2, 1, |s| {
                s.l2_parent = Parent::Neighbor(Label(1));
                s.l2_color = true;
                s.l2_dist = 3;
            }),
            nb(1, 1, |s| s.l2_dist = 1),
        ];
        let t = view(&own, &nbs, false, false).l2_targets();
        assert_eq!(t, LayerTargets { dist: 2, parent: Parent::Neighbor(Label(2)), color: true });
    }

    #[test]
    fn l3_arcs() {
        let own = NodeState::zeroed(4);
        let nbs: Vec<Nb> = (0..4).map(|_| nb(2, 1, child(1))).collect();
        assert_eq!(view(&own, &nbs, false, false).l3_target_arcs().as_slice(), &[false; 4]);

        let mut blue = NodeState::zeroed(4);
        blue.l2_color = true;
        blue.l2_parent = Parent::Neighbor(Label(3));
        assert_eq!(view(&blue, &nbs, false, false).l3_target_arcs().as_slice(), &[false, false, true, false]);

        // red node: red L1 children at labels 1 and 4
        let mut red = NodeState::zeroed(4);
        red.l1_color = true;
        let nbs = [
            nb(2, 1, |s| {
                s.l1_parent = Parent::Neighbor(Label(1));
                s.l1_color = true;
            }),
            nb(2, 1, |s| s.l1_color = true),
            nb(2, 1, child(1)),
            nb(2, 2, |s| {
                s.l1_parent = Parent::Neighbor(Label(2));
                s.l1_color = true;
            }),
        ];
        assert_eq!(view(&red, &nbs, false, false).l3_target_arcs().as_slice(), &[true, false, false, true]);
    }

    fn red_branch_child(back: u32) -> impl FnOnce(&mut NodeState) {
        move |s| {
            s.l1_parent = Parent::Neighbor(Label(back));
            s.l1_color = true;
            s.l4_branch = true;
        }
    }

    fn red_child(back: u32) -> impl FnOnce(&mut NodeState) {
        move |s| {
            s.l1_parent = Parent::Neighbor(Label(back));
            s.l1_color = true;
        }
    }

    #[test]
    fn non_red_is_never_branch() {
        let own = NodeState::zeroed(1);
        let nbs = [nb(1, 1, |s| {
            s.l2_parent = Parent::Neighbor(Label(1));
            s.l2_color = true;
        })];
        assert!(!view(&own, &nbs, false, false).is_branch());
    }

    #[test]
    fn branch_by_blue_child_even_for_target() {
        let mut own = NodeState::zeroed(1);
        own.l1_color = true;
        let nbs = [nb(1, 1, |s| {
            s.l2_parent = Parent::Neighbor(Label(1));
            s.l2_color = true;
        })];
        assert!(view(&own, &nbs, false, true).is_branch());
    }

    #[test]
    fn branch_by_all_children_excludes_targets() {
        let mut own = NodeState::zeroed(2);
        own.l1_color = true;
        let nbs = [nb(1, 1, red_branch_child(1)), nb(2, 2, red_branch_child(2))];
        assert!(view(&own, &nbs, false, false).is_branch());
        assert!(!view(&own, &nbs, false, true).is_branch());
        // one non-branch red child breaks condition (ii)
        let nbs = [nb(1, 1, red_branch_child(1)), nb(2, 2, red_child(2))];
        assert!(!view(&own, &nbs, false, false).is_branch());
        // no red children at all
        assert!(!view(&own, &[nb(1, 1, |_| {}), nb(1, 1, |_| {})], false, false).is_branch());
    }

    #[test]
    fn rules_inactive_without_branch_children() {
        let mut own = NodeState::zeroed(3);
        own.l1_color = true;
        let nbs = [nb(1, 1, red_child(1)), nb(1, 1, red_child(1)), nb(1, 1, |_| {})];
        let v = view(&own, &nbs, true, false);
        for l in 1..=3 {
            let r = v.redundancy(Label(l));
            assert!(!r.rule1 && !r.rule2 && !r.rule3, "label {l}");
        }
    }

    #[test]
    fn rule1_removes_branch_children_when_some_are_not() {
        let mut own = NodeState::zeroed(3);
        own.l1_color = true;
        let nbs = [nb(2, 1, red_branch_child(1)), nb(2, 1, red_child(1)), nb(2, 1, red_branch_child(1))];
        let v = view(&own, &nbs, true, false);
        assert!(v.redundancy(Label(1)).rule1);
        assert!(!v.redundancy(Label(2)).redundant);
        assert!(v.redundancy(Label(3)).rule1);
        assert!(!v.redundancy(Label(1)).rule2);
    }

    #[test]
    fn rule2_keeps_minimum_label() {
        // red children = branch children = {2, 5}
        let mut own = NodeState::zeroed(5);
        own.l1_color = true;
        let nbs = [
            nb(1, 1, |_| {}),
            nb(1, 1, red_branch_child(1)),
            nb(1, 1, |_| {}),
            nb(1, 1, |_| {}),
            nb(1, 1, red_branch_child(1)),
        ];
        let v = view(&own, &nbs, true, false);
        let redundant: Vec<bool> = (1..=5).map(|l| v.redundancy(Label(l)).redundant).collect();
        assert_eq!(redundant, vec![false, false, false, false, true]);
        assert!(v.redundancy(Label(5)).rule2);
        assert!(!v.redundancy(Label(5)).rule1);
    }

    #[test]
    fn rule3_target_drops_every_branch_child() {
        let parent = nb(1, 1, |s| s.arc[0] = true);
        let nbs = [parent, nb(1, 1, red_branch_child(1)), nb(1, 1, red_branch_child(1))];
        let mut own3 = NodeState::zeroed(3);
        own3.l1_color = true;
        own3.l1_parent = Parent::Neighbor(Label(1));
        let v = view(&own3, &nbs, false, true);
        let r2 = v.redundancy(Label(2));
        let r3 = v.redundancy(Label(3));
        assert!(r2.rule3 && !r2.rule2 && !r2.rule4 && r2.redundant);
        assert!(r3.rule3 && r3.rule2);
        assert!(!v.redundancy(Label(1)).redundant);
    }

    #[test]
    fn rule4_needs_parent_arc_and_blue_child() {
        let mut own = NodeState::zeroed(2);
        own.l1_color = true;
        own.l1_parent = Parent::Neighbor(Label(1));
        let without_arc = [nb(2, 2, |_| {}), nb(1, 1, red_child(1))];
        let v = view(&own, &without_arc, false, false);
        assert!(v.redundancy(Label(2)).rule4);
        assert!(v.redundancy(Label(1)).rule4);

        let with_arc = [nb(2, 2, |s| s.arc[1] = true), nb(1, 1, red_child(1))];
        assert!(!view(&own, &with_arc, false, false).redundancy(Label(2)).rule4);

        // a blue child keeps the node's arcs alive
        let with_blue = [nb(2, 2, |_| {}), nb(1, 1, |s| {
            s.l2_parent = Parent::Neighbor(Label(1));
            s.l2_color = true;
        })];
        assert!(!view(&own, &with_blue, false, false).redundancy(Label(2)).rule4);

        let mut root = own.clone();
        root.l1_parent = Parent::Root;
        assert!(!view(&root, &without_arc, true, false).redundancy(Label(2)).rule4);
    }

    fn settled(view_own: &mut NodeState, nbs: &[Nb], sender: bool, target: bool) {
        // drive the node alone to its local fixpoint
        for _ in 0..20 {
            let next = match view(view_own, nbs, sender, target).fire() {
                Some((_, next)) => next,
                None => return,
            };
            *view_own = next;
        }
        panic!("node did not settle");
    }

    #[test]
    fn settled_node_is_disabled() {
        let mut own = NodeState::zeroed(2);
        let nbs = [nb(1, 1, |s| s.l1_dist = 0), nb(2, 1, |s| s.l1_dist = 3)];
        settled(&mut own, &nbs, false, false);
        let v = view(&own, &nbs, false, false);
        assert_eq!(v.enabled_action(), None);
        assert!(v.composed_enabled().is_empty());
        assert_eq!(v.raw_guards(), [false; 11]);
    }

    #[test]
    fn lower_layers_take_priority() {
        let mut own = NodeState::zeroed(1);
        own.l1_dist = 9;
        let nbs = [nb(1, 1, |s| {
            s.l1_dist = 0;
            s.l1_parent = Parent::Neighbor(Label(1));
            s.l1_color = true;
        })];
        // dist and color both wrong
        let v = view(&own, &nbs, false, false);
        assert!(v.raw_guards()[0] && v.raw_guards()[2]);
        assert_eq!(v.enabled_action(), Some(ActionId::L1FixDist));
        assert_eq!(v.composed_enabled(), vec![ActionId::L1FixDist]);
    }

    #[test]
    fn wrong_arc_outranks_branch_fix() {
        // leaf red target under a red parent, layers 1-3 correct
        let mut own = NodeState::zeroed(1);
        own.l1_dist = 1;
        own.l1_parent = Parent::Neighbor(Label(1));
        own.l1_color = true;
        own.l4_branch = true; // wrong: no blue child and it is a target
        own.arc[0] = true; // wrong: l3_arc is false
        let nbs = [nb(1, 1, |s| s.l1_color = true)];
        let v = view(&own, &nbs, false, true);
        let raw = v.raw_guards();
        assert!(raw[7] && raw[8]);
        assert!(!raw[..7].iter().any(|&g| g));
        assert_eq!(v.composed_enabled(), vec![ActionId::L4RemoveWrongArc]);
        let next = v.apply_action(ActionId::L4RemoveWrongArc).unwrap();
        assert_eq!(next.arc.as_slice(), &[false]);
        assert!(next.l4_branch);
    }

    #[test]
    fn fix_dist_changes_only_dist() {
        let own = NodeState::zeroed(1);
        let nbs = [nb(2, 2, |s| {
            s.l1_dist = 1;
            s.l1_parent = Parent::Neighbor(Label(1));
        })];
        let v = view(&own, &nbs, false, true);
        let next = v.apply_action(ActionId::L1FixDist).unwrap();
        let mut expected = own.clone();
        expected.l1_dist = 2;
        assert_eq!(next, expected);
        assert!(matches!(v.apply_action(ActionId::L1FixColor), Err(Error::Contract(_))));
    }

    #[test]
    fn add_arc_sets_all_missing() {
        // red sender with non-branch red children at labels 1 and 4
        let mut own = NodeState::zeroed(4);
        own.l1_color = true;
        own.l3_arc = smallvec![true, false, false, true];
        let nbs = [
            nb(1, 1, red_child(1)),
            nb(1, 1, |_| {}),
            nb(1, 1, |_| {}),
            nb(1, 1, red_child(1)),
        ];
        let v = view(&own, &nbs, true, false);
        assert_eq!(v.enabled_action(), Some(ActionId::L4AddArc));
        let next = v.apply_action(ActionId::L4AddArc).unwrap();
        assert_eq!(next.arc.as_slice(), &[true, false, false, true]);
    }

    #[test]
    fn remove_redundant_clears_flagged_arc() {
        let mut own = NodeState::zeroed(5);
        own.l1_color = true;
        own.l3_arc = smallvec![false, true, false, false, true];
        own.arc = own.l3_arc.clone();
        own.l4_branch = true;
        let nbs = [
            nb(1, 1, |_| {}),
            nb(1, 1, red_branch_child(1)),
            nb(1, 1, |_| {}),
            nb(1, 1, |_| {}),
            nb(1, 1, red_branch_child(1)),
        ];
        let v = view(&own, &nbs, true, false);
        assert_eq!(v.enabled_action(), Some(ActionId::L4RemoveRedundantArc));
        let next = v.apply_action(ActionId::L4RemoveRedundantArc).unwrap();
        assert_eq!(next.arc.as_slice(), &[false, true, false, false, false]);
    }

    #[test]
    fn parent_serializes_as_zero_for_root() {
        assert_eq!(serde_json::to_string(&Parent::Root).unwrap(), "0");
        assert_eq!(serde_json::to_string(&Parent::Neighbor(Label(3))).unwrap(), "3");
        assert_eq!(serde_json::from_str::<Parent>("2").unwrap(), Parent::Neighbor(Label(2)));
    }

    #[test]
    fn validate_catches_domain_errors() {
        let mut s = NodeState::zeroed(2);
        assert!(s.validate(2, 10).is_ok());
        s.l1_parent = Parent::Neighbor(Label(3));
        assert!(s.validate(2, 10).is_err());
        let s = NodeState::zeroed(1);
        assert!(s.validate(2, 10).is_err());
        let mut s = NodeState::zeroed(2);
        s.l2_dist = 11;
        assert!(s.validate(2, 10).is_err());
    }
}
