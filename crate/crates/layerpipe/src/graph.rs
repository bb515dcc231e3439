//! Training dataflow graph: construction, cutset pipelining, retiming and
//! critical-loop analysis.
//!
//! Edges carry integer counts of conceptual iteration delays; a delay is not
//! a physical register but one minibatch of lag between producer and
//! consumer. Retiming relabels the counts through per-node lags while
//! preserving every cycle's delay sum. The iteration bound (max over cycles
//! of compute time divided by delay count) is computed by Karp's
//! maximum-cycle-mean algorithm on the delay graph.
//!
//! Weight updates follow the delayed-gradient recurrence: an update consumes
//! a gradient lagged by the edge delay count, and its output takes effect
//! one iteration later. That trailing register is implicit: cycle analysis
//! and scheduling add one delay to every WEIGHT_UPDATE out-edge on top of
//! the stored counts, so the stored counts stay exactly what pipelining and
//! retiming place there.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::cost::Profile;
use crate::error::{Error, Result};
use crate::zoo::NetworkSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OpKind {
    Fwd,
    GradW,
    GradDelta,
    WeightUpdate,
}

impl OpKind {
    pub const ALL: [OpKind; 4] = [OpKind::Fwd, OpKind::GradW, OpKind::GradDelta, OpKind::WeightUpdate];

    fn rank(self) -> usize {
        match self {
            OpKind::Fwd => 0,
            OpKind::GradW => 1,
            OpKind::GradDelta => 2,
            OpKind::WeightUpdate => 3,
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            OpKind::Fwd => "FWD",
            OpKind::GradW => "GRAD_W",
            OpKind::GradDelta => "GRAD_DELTA",
            OpKind::WeightUpdate => "WEIGHT_UPDATE",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpNode {
    /// 1-based layer index.
    pub layer: usize,
    pub kind: OpKind,
    pub compute_time: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub tail: NodeId,
    pub head: NodeId,
    pub delays: u64,
}

/// Reference to an edge: internal, or one of the environment half-edges at
/// the network input (x, a^0) and output (delta^0).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EdgeRef {
    Internal(usize),
    BoundaryIn(usize),
    BoundaryOut(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dfg {
    nodes: Vec<OpNode>,
    edges: Vec<Edge>,
    /// Environment -> node half-edges (network input feeds).
    boundary_in: Vec<(NodeId, u64)>,
    /// Node -> environment half-edges (delta^0 leaving the graph).
    boundary_out: Vec<(NodeId, u64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CutsetKind {
    InputBoundary,
    OutputBoundary,
    Internal,
}

/// A set of edges whose removal bipartitions the graph, with all edges
/// crossing in the same direction.
#[derive(Debug, Clone)]
pub struct Cutset {
    pub kind: CutsetKind,
    pub edges: Vec<EdgeRef>,
    /// The cut-off node side; empty for boundary cutsets (the other side is
    /// the environment).
    pub side: Vec<NodeId>,
    /// True when the edges cross into `side`.
    pub into_side: bool,
}

/// Per-node lags; the environment is pinned at lag zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Retiming {
    pub lags: Vec<i64>,
}

impl Retiming {
    pub fn zero(n: usize) -> Self {
        Retiming { lags: vec![0; n] }
    }

    pub fn uniform(n: usize, lag: i64) -> Self {
        Retiming { lags: vec![lag; n] }
    }
}

impl Dfg {
    pub fn nodes(&self) -> &[OpNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn boundary_in(&self) -> &[(NodeId, u64)] {
        &self.boundary_in
    }

    pub fn boundary_out(&self) -> &[(NodeId, u64)] {
        &self.boundary_out
    }

    pub fn num_layers(&self) -> usize {
        self.nodes.iter().map(|n| n.layer).max().unwrap_or(0)
    }

    /// Node id for (layer, kind) in a training DFG (4 nodes per layer).
    pub fn node(&self, layer: usize, kind: OpKind) -> NodeId {
        let id = 4 * (layer - 1) + kind.rank();
        debug_assert_eq!(self.nodes[id].layer, layer);
        debug_assert_eq!(self.nodes[id].kind, kind);
        NodeId(id)
    }

    pub fn edge_between(&self, tail: NodeId, head: NodeId) -> Option<usize> {
        self.edges.iter().position(|e| e.tail == tail && e.head == head)
    }

    pub fn delays_between(&self, tail: NodeId, head: NodeId) -> Option<u64> {
        self.edge_between(tail, head).map(|i| self.edges[i].delays)
    }

    /// Stored delays plus the implicit weight-update register.
    pub fn effective_delays(&self, edge: &Edge) -> u64 {
        edge.delays + (self.nodes[edge.tail.0].kind == OpKind::WeightUpdate) as u64
    }

    /// Populate node compute times from a per-layer profile.
    pub fn with_times(&self, profile: &Profile) -> Dfg {
        let mut out = self.clone();
        for node in &mut out.nodes {
            let e = &profile.entries[node.layer - 1];
            node.compute_time = match node.kind {
                OpKind::Fwd => e.t_fp,
                OpKind::GradW => e.t_bpg,
                OpKind::GradDelta => e.t_bpdelta,
                OpKind::WeightUpdate => 0,
            };
        }
        out
    }

    fn edge_label(&self, e: &Edge) -> String {
        let t = &self.nodes[e.tail.0];
        let h = &self.nodes[e.head.0];
        format!("{}:{} -> {}:{}", t.kind, t.layer, h.kind, h.layer)
    }

    /// Apply a retiming: w'(e) = w(e) + r(head) - r(tail), environment at 0.
    pub fn retime(&self, r: &Retiming) -> Result<Dfg> {
        if r.lags.len() != self.nodes.len() {
            return Err(Error::Invalid(format!(
                "retiming has {} lags for {} nodes",
                r.lags.len(),
                self.nodes.len()
            )));
        }
        let mut out = self.clone();
        for e in &mut out.edges {
            let w = e.delays as i64 + r.lags[e.head.0] - r.lags[e.tail.0];
            if w < 0 {
                return Err(Error::IllegalRetiming {
                    edge: self.edge_label(e),
                    delays: w,
                });
            }
            e.delays = w as u64;
        }
        for (head, w0) in &mut out.boundary_in {
            let w = *w0 as i64 + r.lags[head.0];
            if w < 0 {
                let h = &self.nodes[head.0];
                return Err(Error::IllegalRetiming {
                    edge: format!("input -> {}:{}", h.kind, h.layer),
                    delays: w,
                });
            }
            *w0 = w as u64;
        }
        for (tail, w0) in &mut out.boundary_out {
            let w = *w0 as i64 - r.lags[tail.0];
            if w < 0 {
                let t = &self.nodes[tail.0];
                return Err(Error::IllegalRetiming {
                    edge: format!("{}:{} -> output", t.kind, t.layer),
                    delays: w,
                });
            }
            *w0 = w as u64;
        }
        Ok(out)
    }

    /// Cutset retiming: assign lag `k` to every node on one side of a cut.
    pub fn retime_cutset(&self, side: &[NodeId], k: i64) -> Result<Dfg> {
        let mut r = Retiming::zero(self.nodes.len());
        for id in side {
            r.lags[id.0] = k;
        }
        self.retime(&r)
    }

    /// Textual edge list, deterministically ordered for golden-file tests.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let mut ins: Vec<_> = self.boundary_in.clone();
        ins.sort_by_key(|(h, _)| (self.nodes[h.0].layer, self.nodes[h.0].kind.rank()));
        for (head, w) in ins {
            let h = &self.nodes[head.0];
            out.push_str(&format!("input -> {}:{} [delays={}]\n", h.kind, h.layer, w));
        }
        let mut order: Vec<usize> = (0..self.edges.len()).collect();
        order.sort_by_key(|&i| {
            let e = &self.edges[i];
            let t = &self.nodes[e.tail.0];
            let h = &self.nodes[e.head.0];
            (t.layer, t.kind.rank(), h.layer, h.kind.rank())
        });
        for i in order {
            let e = &self.edges[i];
            out.push_str(&format!("{} [delays={}]\n", self.edge_label(e), e.delays));
        }
        let mut outs: Vec<_> = self.boundary_out.clone();
        outs.sort_by_key(|(t, _)| (self.nodes[t.0].layer, self.nodes[t.0].kind.rank()));
        for (tail, w) in outs {
            let t = &self.nodes[tail.0];
            out.push_str(&format!("{}:{} -> output [delays={}]\n", t.kind, t.layer, w));
        }
        out
    }

    /// Test-support constructor for arbitrary graphs.
    pub fn from_parts(
        nodes: Vec<OpNode>,
        edges: Vec<Edge>,
        boundary_in: Vec<(NodeId, u64)>,
        boundary_out: Vec<(NodeId, u64)>,
    ) -> Dfg {
        Dfg {
            nodes,
            edges,
            boundary_in,
            boundary_out,
        }
    }
}

/// Build the zero-delay training DFG: four operation nodes per layer wired
/// per the backpropagation equations, loss computation folded into the last
/// forward node, network input and delta^0 modeled as environment
/// half-edges.
pub fn build_training_dfg(network: &NetworkSpec) -> Result<Dfg> {
    let n_layers = network.layers.len();
    if n_layers == 0 {
        return Err(Error::EmptyNetwork);
    }
    let mut nodes = Vec::with_capacity(4 * n_layers);
    for layer in 1..=n_layers {
        for kind in OpKind::ALL {
            nodes.push(OpNode {
                layer,
                kind,
                compute_time: 0,
            });
        }
    }
    let id = |layer: usize, kind: OpKind| NodeId(4 * (layer - 1) + kind.rank());
    let mut edges = Vec::new();
    let mut push = |tail, head| {
        edges.push(Edge {
            tail,
            head,
            delays: 0,
        })
    };
    for l in 1..=n_layers {
        let (f, g, d, w) = (
            id(l, OpKind::Fwd),
            id(l, OpKind::GradW),
            id(l, OpKind::GradDelta),
            id(l, OpKind::WeightUpdate),
        );
        push(w, f); // weight use, forward
        push(w, d); // weight use, backward
        push(g, w); // gradient into update
        if l < n_layers {
            push(f, id(l + 1, OpKind::Fwd)); // a^l forward
            push(f, id(l + 1, OpKind::GradW)); // a^l stashed for G_{l+1}
            push(id(l + 1, OpKind::GradDelta), d); // delta^l backward
            push(id(l + 1, OpKind::GradDelta), g); // delta^l into G_l
        } else {
            // Loss folded into the last forward node: it sources delta^L.
            push(f, g);
            push(f, d);
        }
    }
    Ok(Dfg {
        nodes,
        edges,
        boundary_in: vec![(id(1, OpKind::Fwd), 0), (id(1, OpKind::GradW), 0)],
        boundary_out: vec![(id(1, OpKind::GradDelta), 0)],
    })
}

/// All feedforward cutsets: the two environment cuts (when half-edges
/// exist) plus every internal unidirectional bipartition. A side touching
/// an environment half-edge cannot be unidirectional, since the half-edge
/// crosses the cut in the opposite direction of the interior edges.
/// Internal enumeration is exhaustive and capped at 16 nodes.
pub fn feedforward_cutsets(dfg: &Dfg) -> Vec<Cutset> {
    let mut cutsets = Vec::new();
    if !dfg.boundary_in.is_empty() {
        cutsets.push(Cutset {
            kind: CutsetKind::InputBoundary,
            edges: (0..dfg.boundary_in.len()).map(EdgeRef::BoundaryIn).collect(),
            side: Vec::new(),
            into_side: false,
        });
    }
    if !dfg.boundary_out.is_empty() {
        cutsets.push(Cutset {
            kind: CutsetKind::OutputBoundary,
            edges: (0..dfg.boundary_out.len()).map(EdgeRef::BoundaryOut).collect(),
            side: Vec::new(),
            into_side: true,
        });
    }

    let n = dfg.nodes.len();
    if n < 2 || n > 16 {
        return cutsets;
    }
    'mask: for mask in 1u32..(1 << (n - 1)) {
        // Node 0 stays on side A; `mask` selects side B over nodes 1..n.
        let in_b = |id: NodeId| id.0 > 0 && (mask >> (id.0 - 1)) & 1 == 1;
        let mut crossing = Vec::new();
        let mut dir: Option<bool> = None; // true = into B
        for (i, e) in dfg.edges.iter().enumerate() {
            let (tb, hb) = (in_b(e.tail), in_b(e.head));
            if tb == hb {
                continue;
            }
            let into_b = hb;
            if *dir.get_or_insert(into_b) != into_b {
                continue 'mask;
            }
            crossing.push(EdgeRef::Internal(i));
        }
        let Some(into_b) = dir else { continue };
        // Environment half-edges on either side break unidirectionality:
        // relative to the side they touch, they cross opposite to any
        // interior flow that makes the side a pipeline boundary.
        for (head, _) in &dfg.boundary_in {
            if in_b(*head) == into_b {
                continue 'mask;
            }
        }
        for (tail, _) in &dfg.boundary_out {
            if in_b(*tail) != into_b {
                continue 'mask;
            }
        }
        // Removing the crossing edges must leave exactly two weakly
        // connected components.
        if count_components_without(dfg, &crossing) != 2 {
            continue;
        }
        let side: Vec<NodeId> = (0..n).map(NodeId).filter(|&v| in_b(v)).collect();
        cutsets.push(Cutset {
            kind: CutsetKind::Internal,
            edges: crossing,
            side,
            into_side: into_b,
        });
    }
    cutsets
}

fn count_components_without(dfg: &Dfg, removed: &[EdgeRef]) -> usize {
    let n = dfg.nodes.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut Vec<usize>, x: usize) -> usize {
        let mut root = x;
        while parent[root] != root {
            root = parent[root];
        }
        let mut cur = x;
        while parent[cur] != root {
            let next = parent[cur];
            parent[cur] = root;
            cur = next;
        }
        root
    }
    for (i, e) in dfg.edges.iter().enumerate() {
        if removed.contains(&EdgeRef::Internal(i)) {
            continue;
        }
        let (a, b) = (find(&mut parent, e.tail.0), find(&mut parent, e.head.0));
        parent[a] = b;
    }
    let mut roots: Vec<usize> = (0..n).map(|v| find(&mut parent, v)).collect();
    roots.sort_unstable();
    roots.dedup();
    roots.len()
}

fn check_stage_map(stage_of_layer: &[usize], n_layers: usize, n_stages: usize) -> Result<()> {
    if n_stages < 1 {
        return Err(Error::Invalid("n_stages must be >= 1".into()));
    }
    if stage_of_layer.len() != n_layers {
        return Err(Error::Invalid(format!(
            "stage map covers {} layers, graph has {}",
            stage_of_layer.len(),
            n_layers
        )));
    }
    for (i, &s) in stage_of_layer.iter().enumerate() {
        if s < 1 || s > n_stages {
            return Err(Error::Invalid(format!(
                "layer {} mapped to stage {} of {}",
                i + 1,
                s,
                n_stages
            )));
        }
        if i > 0 && s < stage_of_layer[i - 1] {
            return Err(Error::NonMonotoneStages {
                layer: i + 1,
                stage: s,
                prev: stage_of_layer[i - 1],
            });
        }
    }
    Ok(())
}

/// Insert pipeline delays: `n_stages` on every feedforward-cutset edge and
/// 2 x (stages after the layer) on each GRAD_W -> WEIGHT_UPDATE edge.
/// Stages are 1-based and nondecreasing in layer order.
pub fn insert_pipeline_delays(dfg: &Dfg, stage_of_layer: &[usize], n_stages: usize) -> Result<Dfg> {
    check_stage_map(stage_of_layer, dfg.num_layers(), n_stages)?;
    let mut out = dfg.clone();
    for (_, w) in &mut out.boundary_in {
        *w += n_stages as u64;
    }
    for (_, w) in &mut out.boundary_out {
        *w += n_stages as u64;
    }
    for e in &mut out.edges {
        let tail = &out.nodes[e.tail.0];
        let head = &out.nodes[e.head.0];
        if tail.kind == OpKind::GradW && head.kind == OpKind::WeightUpdate && tail.layer == head.layer
        {
            e.delays += 2 * (n_stages - stage_of_layer[tail.layer - 1]) as u64;
        }
    }
    Ok(out)
}

/// Per-layer stash depths read off the pipelined DFG.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerStash {
    /// Delays on WEIGHT_UPDATE -> GRAD_DELTA: weight versions retained for
    /// the backward pass.
    pub weight_stash: u64,
    /// Delays on FWD_l -> GRAD_W_{l+1}: activations retained for the
    /// backward pass (0 for the last layer).
    pub activation_stash: u64,
    /// Delayed-gradient delays inserted on GRAD_W -> WEIGHT_UPDATE.
    pub gradient_delays_inserted: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StashReport {
    pub per_layer: Vec<LayerStash>,
}

/// Compose delay insertion with the per-layer cutset retimings that push the
/// inserted delays onto stage boundaries and stash positions. Each layer's
/// forward/weight pair and backward pair are retimed by the number of
/// stages after the layer, then one delay is drawn through the whole graph
/// from the input cut.
pub fn derive_pipelined_dfg(
    dfg: &Dfg,
    stage_of_layer: &[usize],
    n_stages: usize,
) -> Result<(Dfg, StashReport)> {
    let n_layers = dfg.num_layers();
    let inserted = insert_pipeline_delays(dfg, stage_of_layer, n_stages)?;
    let mut g = inserted;
    for l in 1..=n_layers {
        let after = (n_stages - stage_of_layer[l - 1]) as i64;
        g = g.retime_cutset(&[g.node(l, OpKind::Fwd), g.node(l, OpKind::WeightUpdate)], -after)?;
        g = g.retime_cutset(&[g.node(l, OpKind::GradDelta), g.node(l, OpKind::GradW)], after)?;
    }
    g = g.retime(&Retiming::uniform(g.nodes.len(), -1))?;

    let mut per_layer = Vec::with_capacity(n_layers);
    for l in 1..=n_layers {
        let weight_stash = g
            .delays_between(g.node(l, OpKind::WeightUpdate), g.node(l, OpKind::GradDelta))
            .unwrap_or(0);
        let activation_stash = if l < n_layers {
            g.delays_between(g.node(l, OpKind::Fwd), g.node(l + 1, OpKind::GradW))
                .unwrap_or(0)
        } else {
            0
        };
        per_layer.push(LayerStash {
            weight_stash,
            activation_stash,
            gradient_delays_inserted: 2 * (n_stages - stage_of_layer[l - 1]) as u64,
        });
    }
    Ok((g, StashReport { per_layer }))
}

/// Iteration bound and the loops attaining it.
#[derive(Debug, Clone)]
pub struct CriticalLoops {
    /// Max over cycles of (cycle compute time / cycle delay count).
    pub iteration_bound: f64,
    pub bound_num: u128,
    pub bound_den: u128,
    /// Critical cycles as node sequences. Exhaustive for graphs of at most
    /// 12 nodes, otherwise one representative found by the MCM walk.
    pub loops: Vec<Vec<NodeId>>,
}

const ENUMERATION_CAP: usize = 12;

/// Compute the iteration bound via Karp's maximum cycle mean on the delay
/// graph, plus the critical loops.
pub fn critical_loops(dfg: &Dfg) -> Result<CriticalLoops> {
    // Zero-delay subgraph must be acyclic or no schedule exists.
    let topo = zero_delay_topo(dfg)?;

    let mcm = karp_max_cycle_mean(dfg, &topo);
    let Some((num, den, karp_cycle)) = mcm else {
        return Ok(CriticalLoops {
            iteration_bound: 0.0,
            bound_num: 0,
            bound_den: 1,
            loops: Vec::new(),
        });
    };

    let loops = if dfg.nodes.len() <= ENUMERATION_CAP {
        enumerate_critical_cycles(dfg, num, den)
    } else {
        vec![karp_cycle]
    };
    Ok(CriticalLoops {
        iteration_bound: num as f64 / den as f64,
        bound_num: num,
        bound_den: den,
        loops,
    })
}

/// Topological order of the zero-effective-delay subgraph.
fn zero_delay_topo(dfg: &Dfg) -> Result<Vec<usize>> {
    let n = dfg.nodes.len();
    let mut indeg = vec![0usize; n];
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for e in &dfg.edges {
        if dfg.effective_delays(e) == 0 {
            adj[e.tail.0].push(e.head.0);
            indeg[e.head.0] += 1;
        }
    }
    let mut queue: Vec<usize> = (0..n).filter(|&v| indeg[v] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(v) = queue.pop() {
        order.push(v);
        for &w in &adj[v] {
            indeg[w] -= 1;
            if indeg[w] == 0 {
                queue.push(w);
            }
        }
    }
    if order.len() != n {
        let stuck = (0..n).find(|&v| indeg[v] > 0).unwrap();
        let node = &dfg.nodes[stuck];
        return Err(Error::DeadlockedGraph {
            node: format!("{}:{}", node.kind, node.layer),
        });
    }
    Ok(order)
}

struct DelaySlot {
    edge: usize,
    last: bool,
}

/// Karp's algorithm on the delay graph: one vertex per delay element, edge
/// weights are the longest zero-delay compute paths between them. Returns
/// the exact bound as a fraction plus one critical node cycle.
fn karp_max_cycle_mean(dfg: &Dfg, topo: &[usize]) -> Option<(u128, u128, Vec<NodeId>)> {
    let n_nodes = dfg.nodes.len();
    let mut slots: Vec<DelaySlot> = Vec::new();
    let mut first_slot: HashMap<usize, usize> = HashMap::new();
    for (i, e) in dfg.edges.iter().enumerate() {
        let d = dfg.effective_delays(e);
        if d == 0 {
            continue;
        }
        first_slot.insert(i, slots.len());
        for k in 0..d {
            slots.push(DelaySlot {
                edge: i,
                last: k == d - 1,
            });
        }
    }
    let m = slots.len();
    if m == 0 {
        return None;
    }

    // Longest zero-delay path sums (inclusive of both endpoints) from the
    // head of each delayed edge, with predecessor tracking for cycle
    // recovery.
    let mut reach: HashMap<usize, (Vec<i128>, Vec<Option<usize>>)> = HashMap::new();
    for (i, e) in dfg.edges.iter().enumerate() {
        if dfg.effective_delays(e) == 0 || reach.contains_key(&e.head.0) {
            continue;
        }
        let src = e.head.0;
        let mut dist = vec![i128::MIN; n_nodes];
        let mut pred = vec![None; n_nodes];
        dist[src] = dfg.nodes[src].compute_time as i128;
        for &v in topo {
            if dist[v] == i128::MIN {
                continue;
            }
            for edge in &dfg.edges {
                if edge.tail.0 != v || dfg.effective_delays(edge) != 0 {
                    continue;
                }
                let w = edge.head.0;
                let cand = dist[v] + dfg.nodes[w].compute_time as i128;
                if cand > dist[w] {
                    dist[w] = cand;
                    pred[w] = Some(v);
                }
            }
        }
        reach.insert(src, (dist, pred));
        let _ = i;
    }

    // Delay-graph adjacency: in-edges per slot as (source slot, weight).
    let mut dg_in: Vec<Vec<(usize, i128)>> = vec![Vec::new(); m];
    for (s, slot) in slots.iter().enumerate() {
        if !slot.last {
            dg_in[s + 1].push((s, 0));
            continue;
        }
        let head = dfg.edges[slot.edge].head.0;
        let (dist, _) = &reach[&head];
        for (j, e2) in dfg.edges.iter().enumerate() {
            if dfg.effective_delays(e2) == 0 {
                continue;
            }
            let w = dist[e2.tail.0];
            if w != i128::MIN {
                dg_in[first_slot[&j]].push((s, w));
            }
        }
    }

    // Karp with a virtual source (vertex m, zero-weight edges to all).
    let rounds = m + 1;
    let mut f = vec![vec![i128::MIN; m + 1]; rounds + 1];
    let mut pred: Vec<Vec<Option<usize>>> = vec![vec![None; m + 1]; rounds + 1];
    f[0][m] = 0;
    for k in 1..=rounds {
        for v in 0..m {
            for &(u, w) in &dg_in[v] {
                if f[k - 1][u] != i128::MIN && f[k - 1][u] + w > f[k][v] {
                    f[k][v] = f[k - 1][u] + w;
                    pred[k][v] = Some(u);
                }
            }
            if k == 1 && f[0][m] == 0 && f[k][v] < 0 {
                f[k][v] = 0;
                pred[k][v] = Some(m);
            }
        }
        // Virtual-source edges only matter at k == 1; handled above.
    }

    let mut best: Option<(i128, i128, usize)> = None; // (num, den, vertex)
    for v in 0..m {
        if f[rounds][v] == i128::MIN {
            continue;
        }
        // min over k of (F[n][v] - F[k][v]) / (n - k)
        let mut vmin: Option<(i128, i128)> = None;
        for k in 0..rounds {
            if f[k][v] == i128::MIN {
                continue;
            }
            let num = f[rounds][v] - f[k][v];
            let den = (rounds - k) as i128;
            let better = match vmin {
                None => true,
                Some((n0, d0)) => num * d0 < n0 * den,
            };
            if better {
                vmin = Some((num, den));
            }
        }
        if let Some((num, den)) = vmin {
            let better = match best {
                None => true,
                Some((n0, d0, _)) => num * d0 > n0 * den,
            };
            if better {
                best = Some((num, den, v));
            }
        }
    }
    let (num, den, v_star) = best?;
    if num <= 0 {
        // All cycles have nonpositive weight only when compute times are
        // zero; report a zero bound with the recovered cycle.
        return extract_cycle(dfg, &slots, &pred, rounds, v_star, &reach, &first_slot)
            .map(|c| (0, 1, c));
    }
    let cycle = extract_cycle(dfg, &slots, &pred, rounds, v_star, &reach, &first_slot)?;
    // Reduce the fraction.
    let g = gcd(num as u128, den as u128);
    Some((num as u128 / g, den as u128 / g, cycle))
}

fn gcd(a: u128, b: u128) -> u128 {
    if b == 0 {
        a.max(1)
    } else {
        gcd(b, a % b)
    }
}

#[allow(clippy::too_many_arguments)]
fn extract_cycle(
    dfg: &Dfg,
    slots: &[DelaySlot],
    pred: &[Vec<Option<usize>>],
    rounds: usize,
    v_star: usize,
    reach: &HashMap<usize, (Vec<i128>, Vec<Option<usize>>)>,
    _first_slot: &HashMap<usize, usize>,
) -> Option<Vec<NodeId>> {
    // Walk predecessors from F[rounds][v_star]; a slot repeats within the
    // first m+1 steps, giving a cycle of the delay graph.
    let mut path = vec![v_star];
    let mut k = rounds;
    let mut v = v_star;
    while k > 0 {
        let u = pred[k][v]?;
        if u == slots.len() {
            break;
        }
        path.push(u);
        v = u;
        k -= 1;
    }
    path.reverse();
    let mut seen: HashMap<usize, usize> = HashMap::new();
    let mut cycle_slots: Option<&[usize]> = None;
    for (i, &s) in path.iter().enumerate() {
        if let Some(&j) = seen.get(&s) {
            cycle_slots = Some(&path[j..i]);
            break;
        }
        seen.insert(s, i);
    }
    let cycle_slots = cycle_slots?;

    // Map the delay-slot cycle back to an op-node cycle by stitching the
    // zero-delay paths between consecutive delayed edges.
    let mut nodes = Vec::new();
    let len = cycle_slots.len();
    for i in 0..len {
        let s = cycle_slots[i];
        let t = cycle_slots[(i + 1) % len];
        if slots[t].edge == slots[s].edge && !slots[s].last {
            continue; // consecutive slots on one multi-delay edge
        }
        let head = dfg.edges[slots[s].edge].head.0;
        let target = dfg.edges[slots[t].edge].tail.0;
        let (_, preds) = &reach[&head];
        let mut seg = vec![target];
        let mut cur = target;
        while cur != head {
            cur = preds[cur]?;
            seg.push(cur);
        }
        seg.reverse();
        nodes.extend(seg.into_iter().map(NodeId));
    }
    if nodes.is_empty() {
        return None;
    }
    // Canonical rotation: smallest node id first.
    let min_pos = nodes
        .iter()
        .enumerate()
        .min_by_key(|(_, id)| id.0)
        .map(|(i, _)| i)
        .unwrap();
    nodes.rotate_left(min_pos);
    Some(nodes)
}

/// Exhaustive simple-cycle enumeration for small graphs, returning all
/// cycles whose time/delay ratio equals num/den.
fn enumerate_critical_cycles(dfg: &Dfg, num: u128, den: u128) -> Vec<Vec<NodeId>> {
    let n = dfg.nodes.len();
    let mut adj: Vec<Vec<(usize, u64)>> = vec![Vec::new(); n];
    for e in &dfg.edges {
        adj[e.tail.0].push((e.head.0, dfg.effective_delays(e)));
    }
    let mut found = Vec::new();
    let mut stack: Vec<usize> = Vec::new();
    let mut on_stack = vec![false; n];

    #[allow(clippy::too_many_arguments)]
    fn dfs(
        v: usize,
        start: usize,
        time: u128,
        delays: u128,
        adj: &[Vec<(usize, u64)>],
        dfg: &Dfg,
        stack: &mut Vec<usize>,
        on_stack: &mut Vec<bool>,
        num: u128,
        den: u128,
        found: &mut Vec<Vec<NodeId>>,
    ) {
        stack.push(v);
        on_stack[v] = true;
        for &(w, d) in &adj[v] {
            if w == start {
                let total_d = delays + d as u128;
                if total_d > 0 && time * den == num * total_d {
                    found.push(stack.iter().map(|&x| NodeId(x)).collect());
                }
            } else if w > start && !on_stack[w] {
                dfs(
                    w,
                    start,
                    time + dfg.nodes[w].compute_time as u128,
                    delays + d as u128,
                    adj,
                    dfg,
                    stack,
                    on_stack,
                    num,
                    den,
                    found,
                );
            }
        }
        stack.pop();
        on_stack[v] = false;
    }

    for start in 0..n {
        dfs(
            start,
            start,
            dfg.nodes[start].compute_time as u128,
            0,
            &adj,
            dfg,
            &mut stack,
            &mut on_stack,
            num,
            den,
            &mut found,
        );
    }
    found
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::{profile_network, ArrayConfig, RunConfig};
    use crate::zoo;

    fn sample_dfg() -> Dfg {
        build_training_dfg(&zoo::sample4()).unwrap()
    }

    /// Independent oracle: enumerate all simple cycles, returning
    /// (time sum, effective delay sum) per cycle.
    fn all_cycles(dfg: &Dfg) -> Vec<(Vec<usize>, u128, u128)> {
        let n = dfg.nodes.len();
        let mut out = Vec::new();
        fn rec(
            dfg: &Dfg,
            start: usize,
            v: usize,
            time: u128,
            delays: u128,
            stack: &mut Vec<usize>,
            out: &mut Vec<(Vec<usize>, u128, u128)>,
        ) {
            for e in dfg.edges() {
                if e.tail.0 != v {
                    continue;
                }
                let w = e.head.0;
                let d = dfg.effective_delays(e) as u128;
                if w == start {
                    out.push((stack.clone(), time, delays + d));
                } else if w > start && !stack.contains(&w) {
                    stack.push(w);
                    rec(
                        dfg,
                        start,
                        w,
                        time + dfg.nodes()[w].compute_time as u128,
                        delays + d,
                        stack,
                        out,
                    );
                    stack.pop();
                }
            }
        }
        for start in 0..n {
            let mut stack = vec![start];
            rec(
                dfg,
                start,
                start,
                dfg.nodes()[start].compute_time as u128,
                0,
                &mut stack,
                &mut out,
            );
        }
        out
    }

    fn oracle_bound(dfg: &Dfg) -> Option<(u128, u128)> {
        let mut best: Option<(u128, u128)> = None;
        for (_, t, d) in all_cycles(dfg) {
            assert!(d > 0, "deadlocked cycle in oracle");
            let better = match best {
                None => true,
                Some((n0, d0)) => t * d0 > n0 * d,
            };
            if better {
                best = Some((t, d));
            }
        }
        best
    }

    #[test]
    fn four_layers_build_sixteen_nodes() {
        let dfg = sample_dfg();
        assert_eq!(dfg.nodes().len(), 16);
        assert_eq!(dfg.num_layers(), 4);
        for e in dfg.edges() {
            assert_eq!(e.delays, 0);
        }
        // The critical loop of the network: forward chain to the last layer,
        // delta chain back, G_1, weight update, and around.
        let hops = [
            (dfg.node(1, OpKind::Fwd), dfg.node(2, OpKind::Fwd)),
            (dfg.node(2, OpKind::Fwd), dfg.node(3, OpKind::Fwd)),
            (dfg.node(3, OpKind::Fwd), dfg.node(4, OpKind::Fwd)),
            (dfg.node(4, OpKind::Fwd), dfg.node(4, OpKind::GradDelta)),
            (dfg.node(4, OpKind::GradDelta), dfg.node(3, OpKind::GradDelta)),
            (dfg.node(3, OpKind::GradDelta), dfg.node(2, OpKind::GradDelta)),
            (dfg.node(2, OpKind::GradDelta), dfg.node(1, OpKind::GradW)),
            (dfg.node(1, OpKind::GradW), dfg.node(1, OpKind::WeightUpdate)),
            (dfg.node(1, OpKind::WeightUpdate), dfg.node(1, OpKind::Fwd)),
        ];
        for (t, h) in hops {
            assert!(dfg.edge_between(t, h).is_some(), "missing edge");
        }
    }

    #[test]
    fn single_layer_has_one_loop() {
        let net = zoo::parse_network("input 8x8x1 batch=1\nc1 type=conv f=3x3 in=1 out=2 pad=1 stride=1\n")
            .unwrap();
        let dfg = build_training_dfg(&net).unwrap();
        assert_eq!(dfg.nodes().len(), 4);
        let cycles = all_cycles(&dfg);
        assert_eq!(cycles.len(), 1);
        assert_eq!(cycles[0].0.len(), 3); // FWD -> GRAD_W -> WEIGHT_UPDATE
    }

    #[test]
    fn two_layer_topology() {
        let net = zoo::parse_network(
            "input 8x8x1 batch=1\nc1 type=conv f=3x3 in=1 out=2 pad=1 stride=1\nc2 type=conv f=3x3 in=2 out=2 pad=1 stride=1\n",
        )
        .unwrap();
        let dfg = build_training_dfg(&net).unwrap();
        assert_eq!(dfg.nodes().len(), 8);
        let mut expect = vec![
            ("WEIGHT_UPDATE:1", "FWD:1"),
            ("WEIGHT_UPDATE:1", "GRAD_DELTA:1"),
            ("GRAD_W:1", "WEIGHT_UPDATE:1"),
            ("FWD:1", "FWD:2"),
            ("FWD:1", "GRAD_W:2"),
            ("GRAD_DELTA:2", "GRAD_DELTA:1"),
            ("GRAD_DELTA:2", "GRAD_W:1"),
            ("WEIGHT_UPDATE:2", "FWD:2"),
            ("WEIGHT_UPDATE:2", "GRAD_DELTA:2"),
            ("GRAD_W:2", "WEIGHT_UPDATE:2"),
            ("FWD:2", "GRAD_W:2"),
            ("FWD:2", "GRAD_DELTA:2"),
        ];
        expect.sort();
        let mut got: Vec<(String, String)> = dfg
            .edges()
            .iter()
            .map(|e| {
                let t = &dfg.nodes()[e.tail.0];
                let h = &dfg.nodes()[e.head.0];
                (
                    format!("{}:{}", t.kind, t.layer),
                    format!("{}:{}", h.kind, h.layer),
                )
            })
            .collect();
        got.sort();
        let got_ref: Vec<(&str, &str)> = got.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
        assert_eq!(got_ref, expect);
        assert_eq!(dfg.boundary_in().len(), 2);
        assert_eq!(dfg.boundary_out().len(), 1);
    }

    #[test]
    fn training_dfg_has_exactly_two_cutsets() {
        for layers in [1, 2, 4] {
            let net = match layers {
                1 => zoo::parse_network("input 8x8x1\nc1 type=conv f=3x3 in=1 out=2 pad=1 stride=1\n").unwrap(),
                2 => zoo::parse_network(
                    "input 8x8x1\nc1 type=conv f=3x3 in=1 out=2 pad=1 stride=1\nc2 type=conv f=3x3 in=2 out=2 pad=1 stride=1\n",
                )
                .unwrap(),
                _ => zoo::sample4(),
            };
            let dfg = build_training_dfg(&net).unwrap();
            let cuts = feedforward_cutsets(&dfg);
            assert_eq!(cuts.len(), 2, "{} layers", layers);
            assert_eq!(cuts[0].kind, CutsetKind::InputBoundary);
            assert_eq!(cuts[1].kind, CutsetKind::OutputBoundary);
        }
    }

    #[test]
    fn chain_of_five_has_four_cutsets() {
        let nodes: Vec<OpNode> = (1..=5)
            .map(|layer| OpNode {
                layer,
                kind: OpKind::Fwd,
                compute_time: 1,
            })
            .collect();
        let edges: Vec<Edge> = (0..4)
            .map(|i| Edge {
                tail: NodeId(i),
                head: NodeId(i + 1),
                delays: 0,
            })
            .collect();
        let dfg = Dfg::from_parts(nodes, edges, vec![], vec![]);
        let cuts = feedforward_cutsets(&dfg);
        assert_eq!(cuts.len(), 4);
        for c in &cuts {
            assert_eq!(c.kind, CutsetKind::Internal);
            assert_eq!(c.edges.len(), 1);
        }
    }

    #[test]
    fn self_loop_has_no_cutsets() {
        let dfg = Dfg::from_parts(
            vec![OpNode {
                layer: 1,
                kind: OpKind::Fwd,
                compute_time: 1,
            }],
            vec![Edge {
                tail: NodeId(0),
                head: NodeId(0),
                delays: 1,
            }],
            vec![],
            vec![],
        );
        assert!(feedforward_cutsets(&dfg).is_empty());
    }

    #[test]
    fn insert_delays_four_layer_three_stage() {
        let dfg = sample_dfg();
        let stages = [1, 2, 3, 3];
        let d = insert_pipeline_delays(&dfg, &stages, 3).unwrap();
        let g_to_w: Vec<u64> = (1..=4)
            .map(|l| d.delays_between(d.node(l, OpKind::GradW), d.node(l, OpKind::WeightUpdate)).unwrap())
            .collect();
        assert_eq!(g_to_w, vec![4, 2, 0, 0]);
        for (_, w) in d.boundary_in() {
            assert_eq!(*w, 3);
        }
        // Every loop carries at least one effective delay.
        for (_, _, delays) in all_cycles(&d) {
            assert!(delays >= 1);
        }
    }

    #[test]
    fn insert_delays_single_stage() {
        let dfg = sample_dfg();
        let d = insert_pipeline_delays(&dfg, &[1, 1, 1, 1], 1).unwrap();
        for l in 1..=4 {
            assert_eq!(
                d.delays_between(d.node(l, OpKind::GradW), d.node(l, OpKind::WeightUpdate)),
                Some(0)
            );
        }
    }

    #[test]
    fn insert_delays_rejects_non_monotone() {
        let dfg = sample_dfg();
        assert!(matches!(
            insert_pipeline_delays(&dfg, &[2, 1, 2, 2], 2),
            Err(Error::NonMonotoneStages { .. })
        ));
    }

    #[test]
    fn identity_retiming_is_identity() {
        let dfg = sample_dfg();
        let r = Retiming::zero(dfg.nodes().len());
        assert_eq!(dfg.retime(&r).unwrap(), dfg);
    }

    #[test]
    fn illegal_retiming_names_edge() {
        let dfg = sample_dfg();
        let mut r = Retiming::zero(dfg.nodes().len());
        r.lags[dfg.node(2, OpKind::Fwd).0] = -1; // FWD:1 -> FWD:2 goes negative
        match dfg.retime(&r) {
            Err(Error::IllegalRetiming { edge, .. }) => {
                assert!(edge.contains("FWD"), "{}", edge);
            }
            other => panic!("expected illegal retiming, got {:?}", other),
        }
    }

    #[test]
    fn retiming_preserves_cycle_delay_sums() {
        let dfg = insert_pipeline_delays(&sample_dfg(), &[1, 2, 3, 3], 3).unwrap();
        let before: Vec<u128> = all_cycles(&dfg).into_iter().map(|(_, _, d)| d).collect();
        let mut r = Retiming::zero(dfg.nodes().len());
        for l in 1..=4 {
            r.lags[dfg.node(l, OpKind::GradDelta).0] = 1;
        }
        let after_dfg = dfg.retime(&r).unwrap();
        let after: Vec<u128> = all_cycles(&after_dfg).into_iter().map(|(_, _, d)| d).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn derive_two_layer_two_stage_placement() {
        let net = zoo::parse_network(
            "input 8x8x1 batch=1\nc1 type=conv f=3x3 in=1 out=2 pad=1 stride=1\nc2 type=conv f=3x3 in=2 out=2 pad=1 stride=1\n",
        )
        .unwrap();
        let dfg = build_training_dfg(&net).unwrap();
        let (g, stash) = derive_pipelined_dfg(&dfg, &[1, 2], 2).unwrap();

        let d = |t, h| g.delays_between(t, h).unwrap();
        // One pipeline delay at the stage boundary, both directions.
        assert_eq!(d(g.node(1, OpKind::Fwd), g.node(2, OpKind::Fwd)), 1);
        assert_eq!(d(g.node(1, OpKind::Fwd), g.node(2, OpKind::GradW)), 1);
        assert_eq!(d(g.node(2, OpKind::GradDelta), g.node(1, OpKind::GradDelta)), 1);
        assert_eq!(d(g.node(2, OpKind::GradDelta), g.node(1, OpKind::GradW)), 1);
        // Weight stash ahead of the backward weight use; fresh weights for
        // the forward use.
        assert_eq!(d(g.node(1, OpKind::WeightUpdate), g.node(1, OpKind::GradDelta)), 2);
        assert_eq!(d(g.node(1, OpKind::WeightUpdate), g.node(1, OpKind::Fwd)), 0);
        assert_eq!(d(g.node(2, OpKind::WeightUpdate), g.node(2, OpKind::GradDelta)), 0);
        // Gradient edges fully drained by the retiming.
        assert_eq!(d(g.node(1, OpKind::GradW), g.node(1, OpKind::WeightUpdate)), 0);
        assert_eq!(d(g.node(2, OpKind::GradW), g.node(2, OpKind::WeightUpdate)), 0);
        // Loss-side edges stay delay-free.
        assert_eq!(d(g.node(2, OpKind::Fwd), g.node(2, OpKind::GradDelta)), 0);
        assert_eq!(d(g.node(2, OpKind::Fwd), g.node(2, OpKind::GradW)), 0);
        // Input consumed into the pipeline; stashed input for G_1.
        assert_eq!(g.boundary_in()[0].1, 0);
        assert_eq!(g.boundary_in()[1].1, 2);

        assert_eq!(stash.per_layer[0].weight_stash, 2);
        assert_eq!(stash.per_layer[1].weight_stash, 0);
        assert_eq!(stash.per_layer[0].activation_stash, 1);
        assert_eq!(stash.per_layer[0].gradient_delays_inserted, 2);
    }

    #[test]
    fn derive_single_stage_leaves_interior_unchanged() {
        let dfg = sample_dfg();
        let (g, stash) = derive_pipelined_dfg(&dfg, &[1, 1, 1, 1], 1).unwrap();
        for (e0, e1) in dfg.edges().iter().zip(g.edges()) {
            assert_eq!(e0.delays, e1.delays);
        }
        for s in &stash.per_layer {
            assert_eq!(s.weight_stash, 0);
            assert_eq!(s.activation_stash, 0);
        }
    }

    #[test]
    fn derive_stash_decreases_with_layer() {
        let dfg = sample_dfg();
        let (_, stash) = derive_pipelined_dfg(&dfg, &[1, 2, 3, 4], 4).unwrap();
        let depths: Vec<u64> = stash.per_layer.iter().map(|s| s.weight_stash).collect();
        assert_eq!(depths, vec![6, 4, 2, 0]);
    }

    #[test]
    fn derive_preserves_cycle_delay_sums() {
        let dfg = sample_dfg();
        let inserted = insert_pipeline_delays(&dfg, &[1, 2, 3, 4], 4).unwrap();
        let (g, _) = derive_pipelined_dfg(&dfg, &[1, 2, 3, 4], 4).unwrap();
        let mut a: Vec<u128> = all_cycles(&inserted).into_iter().map(|(_, _, d)| d).collect();
        let mut b: Vec<u128> = all_cycles(&g).into_iter().map(|(_, _, d)| d).collect();
        a.sort_unstable();
        b.sort_unstable();
        assert_eq!(a, b);
    }

    #[test]
    fn single_loop_bound() {
        let nodes = vec![
            OpNode {
                layer: 1,
                kind: OpKind::Fwd,
                compute_time: 30,
            },
            OpNode {
                layer: 2,
                kind: OpKind::Fwd,
                compute_time: 12,
            },
        ];
        let edges = vec![
            Edge {
                tail: NodeId(0),
                head: NodeId(1),
                delays: 2,
            },
            Edge {
                tail: NodeId(1),
                head: NodeId(0),
                delays: 1,
            },
        ];
        let dfg = Dfg::from_parts(nodes, edges, vec![], vec![]);
        let cl = critical_loops(&dfg).unwrap();
        assert_eq!((cl.bound_num, cl.bound_den), (14, 1));
        assert_eq!(cl.loops.len(), 1);
    }

    #[test]
    fn deadlock_detected() {
        let nodes = vec![
            OpNode {
                layer: 1,
                kind: OpKind::Fwd,
                compute_time: 1,
            },
            OpNode {
                layer: 2,
                kind: OpKind::Fwd,
                compute_time: 1,
            },
        ];
        let edges = vec![
            Edge {
                tail: NodeId(0),
                head: NodeId(1),
                delays: 0,
            },
            Edge {
                tail: NodeId(1),
                head: NodeId(0),
                delays: 0,
            },
        ];
        let dfg = Dfg::from_parts(nodes, edges, vec![], vec![]);
        assert!(matches!(critical_loops(&dfg), Err(Error::DeadlockedGraph { .. })));
    }

    #[test]
    fn sample_single_stage_critical_loop_runs_through_deltas() {
        let net = zoo::sample4();
        let profile = profile_network(&net, &RunConfig::default(), &ArrayConfig::square(32)).unwrap();
        let dfg = build_training_dfg(&net).unwrap().with_times(&profile);
        let (g, _) = derive_pipelined_dfg(&dfg, &[1, 1, 1, 1], 1).unwrap();
        let cl = critical_loops(&g).unwrap();
        // Oracle value: the forward chain, the delta chain back to layer 2,
        // G_1 and the (implicitly registered) weight update of layer 1.
        let expect: u128 = profile.entries.iter().map(|e| e.t_fp as u128).sum::<u128>()
            + profile.entries[1..].iter().map(|e| e.t_bpdelta as u128).sum::<u128>()
            + profile.entries[0].t_bpg as u128;
        assert_eq!((cl.bound_num, cl.bound_den), (expect, 1));
        let critical = &cl.loops[0];
        for l in 2..=4 {
            assert!(critical.contains(&g.node(l, OpKind::GradDelta)));
        }
        assert!(!critical.contains(&g.node(1, OpKind::GradDelta)));
    }

    #[test]
    fn karp_matches_enumeration_oracle() {
        // Deterministic pseudo-random graphs, compared against the
        // brute-force cycle enumeration.
        let mut state = 0x243F6A8885A308D3u64;
        let mut next = move |m: u64| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 33) % m
        };
        for _ in 0..60 {
            let n = 2 + next(7) as usize;
            let nodes: Vec<OpNode> = (0..n)
                .map(|i| OpNode {
                    layer: i + 1,
                    kind: OpKind::GradDelta,
                    compute_time: 1 + next(50),
                })
                .collect();
            let mut edges = Vec::new();
            for t in 0..n {
                for h in 0..n {
                    if t != h && next(100) < 35 {
                        edges.push(Edge {
                            tail: NodeId(t),
                            head: NodeId(h),
                            delays: 1 + next(3),
                        });
                    }
                }
            }
            let dfg = Dfg::from_parts(nodes, edges, vec![], vec![]);
            let cl = critical_loops(&dfg).unwrap();
            match oracle_bound(&dfg) {
                Some((t, d)) => {
                    assert_eq!(
                        cl.bound_num as u128 * d,
                        t * cl.bound_den as u128,
                        "karp {}/{} vs oracle {}/{}",
                        cl.bound_num,
                        cl.bound_den,
                        t,
                        d
                    );
                }
                None => assert_eq!(cl.bound_num, 0),
            }
        }
    }

    #[test]
    fn bound_scales_with_uniform_time_scaling() {
        let net = zoo::sample4();
        let profile = profile_network(&net, &RunConfig::default(), &ArrayConfig::square(32)).unwrap();
        let dfg = build_training_dfg(&net).unwrap().with_times(&profile);
        let (g, _) = derive_pipelined_dfg(&dfg, &[1, 2, 3, 3], 3).unwrap();
        let cl1 = critical_loops(&g).unwrap();
        let mut scaled = g.clone();
        let nodes: Vec<OpNode> = scaled
            .nodes()
            .iter()
            .map(|n| OpNode {
                compute_time: n.compute_time * 3,
                ..*n
            })
            .collect();
        scaled = Dfg::from_parts(
            nodes,
            scaled.edges().to_vec(),
            scaled.boundary_in().to_vec(),
            scaled.boundary_out().to_vec(),
        );
        let cl3 = critical_loops(&scaled).unwrap();
        assert_eq!(cl3.bound_num, 3 * cl1.bound_num);
        assert_eq!(cl3.bound_den, cl1.bound_den);
    }

    #[test]
    fn dump_is_deterministic_and_ordered() {
        let dfg = sample_dfg();
        let a = dfg.dump();
        let b = dfg.dump();
        assert_eq!(a, b);
        assert!(a.starts_with("input -> FWD:1 [delays=0]\n"));
        assert!(a.trim_end().ends_with("GRAD_DELTA:1 -> output [delays=0]"));
    }
}
