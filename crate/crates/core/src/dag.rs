//! Subtask graph: validation, deterministic topological order and cached
//! ancestor/descendant closures.
//!
//! Arcs are stored in *task* orientation (`u -> v` means the action of `u`
//! affects the state of `v`). Rewards flow the other way, see
//! [`DagTopology::reward_flow_neighbors`].

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, HashMap};
use std::fmt;

use thiserror::Error;

/// Dense node index in `0..node_count`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl From<usize> for NodeId {
    fn from(i: usize) -> Self {
        NodeId(i)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DagError {
    #[error("graph has no nodes")]
    EmptyGraph,
    #[error("node {0} is out of range")]
    InvalidNode(usize),
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("duplicate arc {0} -> {1}")]
    DuplicateArc(usize, usize),
    #[error("cycle detected: {0:?}")]
    CycleDetected(Vec<usize>),
    #[error("unknown node name `{0}`")]
    UnknownName(String),
    #[error("duplicate node name `{0}`")]
    DuplicateName(String),
}

/// The closures of one node. Every set contains the node itself.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeClosures {
    /// Ancestors (nodes with a path into this node).
    pub delta: Vec<NodeId>,
    /// Descendants (nodes reachable from this node).
    pub upsilon: Vec<NodeId>,
    /// Union of the two.
    pub omega: Vec<NodeId>,
}

/// An immutable, validated DAG over dense node indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DagTopology {
    node_count: usize,
    arcs: Vec<(NodeId, NodeId)>,
    names: Vec<String>,
    predecessors: Vec<Vec<NodeId>>,
    successors: Vec<Vec<NodeId>>,
    order: Vec<NodeId>,
    closures: Vec<NodeClosures>,
    sources: Vec<NodeId>,
    sinks: Vec<NodeId>,
}

/// Kahn's algorithm with a min-heap, so incomparable nodes come out in
/// ascending index order.
pub fn validate(node_count: usize, arcs: &[(usize, usize)]) -> Result<Vec<NodeId>, DagError> {
    if node_count == 0 {
        return Err(DagError::EmptyGraph);
    }
    let mut seen = BTreeSet::new();
    let mut succ = vec![Vec::new(); node_count];
    let mut indegree = vec![0usize; node_count];
    for &(u, v) in arcs {
        if u >= node_count {
            return Err(DagError::InvalidNode(u));
        }
        if v >= node_count {
            return Err(DagError::InvalidNode(v));
        }
        if u == v {
            return Err(DagError::SelfLoop(u));
        }
        if !seen.insert((u, v)) {
            return Err(DagError::DuplicateArc(u, v));
        }
        succ[u].push(v);
        indegree[v] += 1;
    }

    let mut heap: BinaryHeap<Reverse<usize>> = (0..node_count)
        .filter(|&i| indegree[i] == 0)
        .map(Reverse)
        .collect();
    let mut order = Vec::with_capacity(node_count);
    let mut remaining = indegree.clone();
    while let Some(Reverse(u)) = heap.pop() {
        order.push(NodeId(u));
        for &v in &succ[u] {
            remaining[v] -= 1;
            if remaining[v] == 0 {
                heap.push(Reverse(v));
            }
        }
    }
    if order.len() == node_count {
        Ok(order)
    } else {
        Err(DagError::CycleDetected(find_cycle(&succ, &remaining)))
    }
}

/// Every node Kahn's algorithm could not emit has a predecessor that was
/// not emitted either, so walking predecessors must eventually revisit a node.
fn find_cycle(succ: &[Vec<usize>], remaining: &[usize]) -> Vec<usize> {
    let start = match remaining.iter().position(|&d| d > 0) {
        Some(s) => s,
        None => return Vec::new(),
    };
    let n = succ.len();
    let mut pred_left = vec![Vec::new(); n];
    for (u, outs) in succ.iter().enumerate() {
        if remaining[u] == 0 {
            continue;
        }
        for &v in outs {
            if remaining[v] > 0 {
                pred_left[v].push(u);
            }
        }
    }
    let mut pos = vec![usize::MAX; n];
    let mut path = Vec::new();
    let mut cur = start;
    loop {
        if pos[cur] != usize::MAX {
            let mut cycle: Vec<usize> = path[pos[cur]..].to_vec();
            cycle.reverse();
            return cycle;
        }
        pos[cur] = path.len();
        path.push(cur);
        cur = *pred_left[cur]
            .iter()
            .min()
            .expect("leftover node always has a leftover predecessor");
    }
}

impl DagTopology {
    pub fn new(node_count: usize, arcs: &[(usize, usize)]) -> Result<Self, DagError> {
        let names = (0..node_count).map(|i| i.to_string()).collect();
        Self::build(node_count, arcs, names)
    }

    /// Build from node labels and arcs given as label pairs.
    pub fn from_names<S: AsRef<str>>(names: &[S], arcs: &[(S, S)]) -> Result<Self, DagError> {
        let mut index = HashMap::new();
        for (i, n) in names.iter().enumerate() {
            if index.insert(n.as_ref().to_string(), i).is_some() {
                return Err(DagError::DuplicateName(n.as_ref().to_string()));
            }
        }
        let lookup = |s: &S| {
            index
                .get(s.as_ref())
                .copied()
                .ok_or_else(|| DagError::UnknownName(s.as_ref().to_string()))
        };
        let arcs = arcs
            .iter()
            .map(|(u, v)| Ok((lookup(u)?, lookup(v)?)))
            .collect::<Result<Vec<_>, DagError>>()?;
        let names = names.iter().map(|s| s.as_ref().to_string()).collect();
        Self::build(index.len(), &arcs, names)
    }

    fn build(node_count: usize, arcs: &[(usize, usize)], names: Vec<String>) -> Result<Self, DagError> {
        let order = validate(node_count, arcs)?;
        let mut predecessors = vec![Vec::new(); node_count];
        let mut successors = vec![Vec::new(); node_count];
        for &(u, v) in arcs {
            successors[u].push(NodeId(v));
            predecessors[v].push(NodeId(u));
        }
        for list in predecessors.iter_mut().chain(successors.iter_mut()) {
            list.sort();
        }

        // Ancestors in topological order, descendants in reverse.
        let mut anc: Vec<BTreeSet<usize>> = (0..node_count).map(|i| BTreeSet::from([i])).collect();
        for &NodeId(v) in &order {
            let inherited: Vec<usize> = predecessors[v]
                .iter()
                .flat_map(|p| anc[p.0].iter().copied().collect::<Vec<_>>())
                .collect();
            anc[v].extend(inherited);
        }
        let mut desc: Vec<BTreeSet<usize>> = (0..node_count).map(|i| BTreeSet::from([i])).collect();
        for &NodeId(u) in order.iter().rev() {
            let inherited: Vec<usize> = successors[u]
                .iter()
                .flat_map(|s| desc[s.0].iter().copied().collect::<Vec<_>>())
                .collect();
            desc[u].extend(inherited);
        }
        let closures = (0..node_count)
            .map(|i| {
                let omega: BTreeSet<usize> = anc[i].union(&desc[i]).copied().collect();
                NodeClosures {
                    delta: anc[i].iter().map(|&j| NodeId(j)).collect(),
                    upsilon: desc[i].iter().map(|&j| NodeId(j)).collect(),
                    omega: omega.into_iter().map(NodeId).collect(),
                }
            })
            .collect();

        let sources = (0..node_count)
            .filter(|&i| predecessors[i].is_empty())
            .map(NodeId)
            .collect();
        let sinks = (0..node_count)
            .filter(|&i| successors[i].is_empty())
            .map(NodeId)
            .collect();

        Ok(Self {
            node_count,
            arcs: arcs.iter().map(|&(u, v)| (NodeId(u), NodeId(v))).collect(),
            names,
            predecessors,
            successors,
            order,
            closures,
            sources,
            sinks,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    /// Arcs in task orientation, in construction order. Arc values produced
    /// by the reward distributor are indexed by position in this list.
    pub fn arcs(&self) -> &[(NodeId, NodeId)] {
        &self.arcs
    }

    pub fn arc_count(&self) -> usize {
        self.arcs.len()
    }

    pub fn arc_index(&self, from: NodeId, to: NodeId) -> Option<usize> {
        self.arcs.iter().position(|&a| a == (from, to))
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, i: NodeId) -> &str {
        &self.names[i.0]
    }

    pub fn topological_order(&self) -> &[NodeId] {
        &self.order
    }

    pub fn sources(&self) -> &[NodeId] {
        &self.sources
    }

    pub fn sinks(&self) -> &[NodeId] {
        &self.sinks
    }

    pub fn is_sink(&self, i: NodeId) -> bool {
        self.successors.get(i.0).is_some_and(|s| s.is_empty())
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.node_count).map(NodeId)
    }

    fn check(&self, i: NodeId) -> Result<usize, DagError> {
        if i.0 < self.node_count {
            Ok(i.0)
        } else {
            Err(DagError::InvalidNode(i.0))
        }
    }

    pub fn predecessors(&self, i: NodeId) -> Result<&[NodeId], DagError> {
        Ok(&self.predecessors[self.check(i)?])
    }

    pub fn successors(&self, i: NodeId) -> Result<&[NodeId], DagError> {
        Ok(&self.successors[self.check(i)?])
    }

    pub fn closures(&self, i: NodeId) -> Result<&NodeClosures, DagError> {
        Ok(&self.closures[self.check(i)?])
    }

    /// Δ(i), including `i`.
    pub fn ancestors(&self, i: NodeId) -> Result<&[NodeId], DagError> {
        Ok(&self.closures(i)?.delta)
    }

    /// Υ(i), including `i`.
    pub fn descendants(&self, i: NodeId) -> Result<&[NodeId], DagError> {
        Ok(&self.closures(i)?.upsilon)
    }

    /// Ω(i) = Δ(i) ∪ Υ(i).
    pub fn influence(&self, i: NodeId) -> Result<&[NodeId], DagError> {
        Ok(&self.closures(i)?.omega)
    }

    /// Neighbours under reversed (reward) arcs: `(recipients, senders)`.
    ///
    /// Recipients are the task predecessors of `i` (it passes reward down to
    /// them); senders are its task successors.
    pub fn reward_flow_neighbors(&self, i: NodeId) -> Result<(&[NodeId], &[NodeId]), DagError> {
        let i = self.check(i)?;
        Ok((&self.predecessors[i], &self.successors[i]))
    }
}
