//! Processor allocation: balanced partitioning with operational delta
//! splitting, and the contiguous-stage baseline.
//!
//! The balanced partitioner walks the layers in reverse, filling processors
//! to a target of T_tot / N_p. A layer's movable delta time goes to the
//! processor currently being filled (the one holding the next layer); when
//! it does not fit it is split so the remainder exactly tops the processor
//! off. Fixed time advances to a fresh processor when it does not fit. If
//! the walk needs more processors than available, the target is relaxed by
//! alpha and the walk restarts.
//!
//! The baseline is the classic chains-to-processors dynamic program:
//! contiguous layer runs minimizing the maximum stage total, ties broken by
//! the sum of squared stage totals.

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::cost::{classify_movable, Profile, Thresholds};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    LayerPipe,
    PipeDream,
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Algorithm::LayerPipe => f.write_str("layerpipe"),
            Algorithm::PipeDream => f.write_str("pipedream"),
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "layerpipe" => Ok(Algorithm::LayerPipe),
            "pipedream" => Ok(Algorithm::PipeDream),
            other => Err(Error::Invalid(format!("unknown algorithm `{}`", other))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WorkKind {
    Fwd,
    GradW,
    DeltaPrime,
    DeltaDoublePrime,
}

impl std::fmt::Display for WorkKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            WorkKind::Fwd => "FWD",
            WorkKind::GradW => "GRAD_W",
            WorkKind::DeltaPrime => "DELTA_PRIME",
            WorkKind::DeltaDoublePrime => "DELTA_DOUBLE_PRIME",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkItem {
    /// 1-based layer index.
    pub layer: usize,
    pub kind: WorkKind,
    pub cycles: u64,
    /// Item sits on a different processor than its layer's fixed work.
    pub borrowed: bool,
    /// Fraction of the layer's delta time this item carries (1.0 for
    /// unsplit items and for FWD / GRAD_W).
    pub split_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessorAssignment {
    pub id: usize,
    pub items: Vec<WorkItem>,
    pub total: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub algorithm: Algorithm,
    /// Front-to-back: processor 0 holds the first layers.
    pub processors: Vec<ProcessorAssignment>,
    /// Weight-slice bytes moved to support borrowed delta work.
    pub extra_comm_bytes: u64,
    pub relaxations: u32,
    /// Final per-processor cycle target (T_p after relaxations).
    pub target_cycles: u64,
    /// 1-based pipeline stage of each layer's fixed work.
    pub stage_of_layer: Vec<usize>,
}

impl Allocation {
    pub fn bottleneck(&self) -> u64 {
        self.processors.iter().map(|p| p.total).max().unwrap_or(0)
    }

    pub fn stages_used(&self) -> usize {
        self.processors.iter().filter(|p| !p.items.is_empty()).count()
    }

    /// JSON export with the external schema.
    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "processors": self.processors.iter().map(|p| json!({
                "id": p.id,
                "items": p.items.iter().map(|it| json!({
                    "layer": it.layer,
                    "op": it.kind.to_string(),
                    "cycles": it.cycles,
                    "fraction": it.split_fraction,
                })).collect::<Vec<_>>(),
                "total": p.total,
            })).collect::<Vec<_>>(),
            "extra_comm_bytes": self.extra_comm_bytes,
            "relaxations": self.relaxations,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PartitionConfig {
    pub alpha: f64,
    pub thresholds: Thresholds,
    /// Round delta splits down to whole input channels.
    pub granular_split: bool,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        PartitionConfig {
            alpha: 1.05,
            thresholds: Thresholds::default(),
            granular_split: false,
        }
    }
}

/// Split a layer's movable delta time so the borrowed part fills exactly
/// `t_idle` cycles. Returns (delta_prime, delta_double_prime, fraction).
/// In channel-granular mode the fraction is rounded down to a whole number
/// of channels; a split of zero channels is an error.
pub fn op_split(t_idle: u64, t_flex: u64, channels: Option<u32>) -> Result<(u64, u64, f64)> {
    if t_idle == 0 || t_idle >= t_flex {
        return Err(Error::NoFeasibleSplit { t_idle, t_flex });
    }
    match channels {
        None => Ok((t_flex - t_idle, t_idle, t_idle as f64 / t_flex as f64)),
        Some(c) => {
            let c = c as u128;
            let k = (t_idle as u128 * c) / t_flex as u128;
            if k == 0 {
                return Err(Error::NoFeasibleSplit { t_idle, t_flex });
            }
            let dpp = (t_flex as u128 * k / c) as u64;
            Ok((t_flex - dpp, dpp, k as f64 / c as f64))
        }
    }
}

// Allocation-order scratch: processor 0 holds the last layers.
struct ProcScratch {
    items: Vec<(usize, WorkKind, u64, f64)>, // layer, kind, cycles, fraction
    total: u64,
}

fn balanced_pass(
    flex: &[u64],
    fix: &[u64],
    channels: &[u32],
    t_p: u64,
    granular: bool,
) -> (Vec<ProcScratch>, bool) {
    let n_layers = flex.len();
    let mut procs: Vec<ProcScratch> = vec![ProcScratch {
        items: Vec::new(),
        total: 0,
    }];
    let mut idle: i128 = t_p as i128;
    let mut overfull = false;

    let mut alloc = |procs: &mut Vec<ProcScratch>, layer: usize, kind, cycles: u64, frac: f64| {
        let p = procs.last_mut().unwrap();
        p.items.push((layer, kind, cycles, frac));
        p.total += cycles;
    };
    let advance = |procs: &mut Vec<ProcScratch>| {
        procs.push(ProcScratch {
            items: Vec::new(),
            total: 0,
        });
    };

    for l in (0..n_layers).rev() {
        let layer = l + 1;
        if flex[l] > 0 {
            if (flex[l] as i128) <= idle {
                alloc(&mut procs, layer, WorkKind::DeltaPrime, flex[l], 1.0);
                idle -= flex[l] as i128;
            } else {
                let gran = if granular { Some(channels[l]) } else { None };
                match op_split(idle.max(0) as u64, flex[l], gran) {
                    Ok((dp, dpp, frac)) => {
                        alloc(&mut procs, layer, WorkKind::DeltaDoublePrime, dpp, frac);
                        advance(&mut procs);
                        alloc(&mut procs, layer, WorkKind::DeltaPrime, dp, 1.0 - frac);
                        idle = t_p as i128 - dp as i128;
                    }
                    Err(_) => {
                        // No feasible split: the whole delta moves on.
                        advance(&mut procs);
                        alloc(&mut procs, layer, WorkKind::DeltaPrime, flex[l], 1.0);
                        idle = t_p as i128 - flex[l] as i128;
                    }
                }
            }
        }
        if fix[l] as i128 > idle {
            advance(&mut procs);
            idle = t_p as i128;
        }
        alloc(&mut procs, layer, WorkKind::GradW, fix[l], 1.0);
        idle -= fix[l] as i128;
    }
    for p in &procs {
        if p.total > t_p {
            overfull = true;
        }
    }
    (procs, overfull)
}

/// Balanced partitioning with delta borrowing (the partitioning algorithm),
/// with a contiguous fallback preserving dominance over the baseline.
pub fn layerpipe_partition(
    profile: &Profile,
    n_proc: usize,
    cfg: &PartitionConfig,
) -> Result<Allocation> {
    if cfg.alpha <= 1.0 {
        return Err(Error::BadAlpha(cfg.alpha));
    }
    if n_proc < 1 {
        return Err(Error::Invalid("n_proc must be >= 1".into()));
    }
    let splits = classify_movable(profile, &cfg.thresholds);
    let flex: Vec<u64> = splits.iter().map(|s| s.t_flex).collect();
    let fix: Vec<u64> = splits.iter().map(|s| s.t_fix).collect();
    let channels: Vec<u32> = profile.entries.iter().map(|e| e.in_channels).collect();

    let mut t_p = profile.t_tot.div_ceil(n_proc as u64);
    let mut relaxations = 0u32;
    let (procs, final_tp) = loop {
        let (procs, overfull) = balanced_pass(&flex, &fix, &channels, t_p, cfg.granular_split);
        if procs.len() <= n_proc && !overfull {
            break (procs, t_p);
        }
        relaxations += 1;
        t_p = (t_p as f64 * cfg.alpha).ceil() as u64;
    };

    let alloc = finish_allocation(profile, n_proc, procs, relaxations, final_tp);

    // The reverse greedy walk can lose to the contiguous optimum; borrowing
    // is optional, so never do worse than the baseline.
    let baseline = pipedream_partition(profile, n_proc);
    if baseline.bottleneck() < alloc.bottleneck() {
        let mut fallback = baseline;
        fallback.algorithm = Algorithm::LayerPipe;
        return Ok(fallback);
    }
    Ok(alloc)
}

/// Reverse-allocation scratch to front-to-back processors.
fn finish_allocation(
    profile: &Profile,
    n_proc: usize,
    procs: Vec<ProcScratch>,
    relaxations: u32,
    target_cycles: u64,
) -> Allocation {
    let n_layers = profile.len();
    let used = procs.len();
    let mut processors: Vec<ProcessorAssignment> = Vec::with_capacity(n_proc);
    // Reverse to front-to-back; processor 0 holds the first layers.
    for (front_id, scratch) in procs.into_iter().rev().enumerate() {
        let mut items: Vec<_> = scratch.items;
        items.sort_by_key(|(layer, kind, _, _)| {
            (
                *layer,
                match kind {
                    WorkKind::Fwd => 0,
                    WorkKind::GradW => 1,
                    WorkKind::DeltaPrime => 2,
                    WorkKind::DeltaDoublePrime => 3,
                },
            )
        });
        processors.push(ProcessorAssignment {
            id: front_id,
            items: items
                .into_iter()
                .map(|(layer, kind, cycles, frac)| WorkItem {
                    layer,
                    kind,
                    cycles,
                    borrowed: false,
                    split_fraction: frac,
                })
                .collect(),
            total: scratch.total,
        });
    }
    for id in used..n_proc {
        processors.push(ProcessorAssignment {
            id,
            items: Vec::new(),
            total: 0,
        });
    }

    // The GRAD_W item also stands for the layer's forward time (T_fix);
    // split it into explicit FWD and GRAD_W items for reporting and
    // scheduling.
    let mut stage_of_layer = vec![0usize; n_layers];
    for p in &mut processors {
        let mut expanded = Vec::with_capacity(p.items.len() + 4);
        for it in p.items.drain(..) {
            if it.kind == WorkKind::GradW {
                stage_of_layer[it.layer - 1] = p.id + 1;
                let e = &profile.entries[it.layer - 1];
                expanded.push(WorkItem {
                    layer: it.layer,
                    kind: WorkKind::Fwd,
                    cycles: e.t_fp,
                    borrowed: false,
                    split_fraction: 1.0,
                });
                expanded.push(WorkItem {
                    layer: it.layer,
                    kind: WorkKind::GradW,
                    cycles: e.t_bpg,
                    borrowed: false,
                    split_fraction: 1.0,
                });
                // An immovable delta travels inside the fixed time.
                if it.cycles > e.t_fp + e.t_bpg {
                    expanded.push(WorkItem {
                        layer: it.layer,
                        kind: WorkKind::DeltaPrime,
                        cycles: it.cycles - e.t_fp - e.t_bpg,
                        borrowed: false,
                        split_fraction: 1.0,
                    });
                }
            } else {
                expanded.push(it);
            }
        }
        expanded.sort_by_key(|it| {
            (
                it.layer,
                match it.kind {
                    WorkKind::Fwd => 0,
                    WorkKind::GradW => 1,
                    WorkKind::DeltaPrime => 2,
                    WorkKind::DeltaDoublePrime => 3,
                },
            )
        });
        p.items = expanded;
    }

    // Borrowed = sitting away from the layer's fixed work; weight-slice
    // bytes scale with the borrowed fraction.
    let mut extra_comm_bytes = 0u64;
    for p in &mut processors {
        for it in &mut p.items {
            if matches!(it.kind, WorkKind::DeltaPrime | WorkKind::DeltaDoublePrime) {
                it.borrowed = p.id + 1 != stage_of_layer[it.layer - 1];
                if it.borrowed {
                    let e = &profile.entries[it.layer - 1];
                    if e.t_bpdelta > 0 {
                        extra_comm_bytes += (e.comm_extra_bytes as u128 * it.cycles as u128
                            / e.t_bpdelta as u128) as u64;
                    }
                }
            }
        }
    }

    Allocation {
        algorithm: Algorithm::LayerPipe,
        processors,
        extra_comm_bytes,
        relaxations,
        target_cycles,
        stage_of_layer,
    }
}

/// Optimal contiguous partition of layers into at most `n_proc` stages,
/// minimizing the maximum stage total.
pub fn pipedream_partition(profile: &Profile, n_proc: usize) -> Allocation {
    let n = profile.len();
    let totals: Vec<u64> = profile.entries.iter().map(|e| e.t_total).collect();
    let mut prefix = vec![0u64; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + totals[i];
    }
    let seg = |i: usize, j: usize| prefix[j] - prefix[i];

    const INF: (u64, u128) = (u64::MAX, u128::MAX);
    // best[k][j]: partition of the first j layers into <= k stages,
    // objective (bottleneck, sum of squares).
    let k_max = n_proc.min(n);
    let mut best = vec![vec![INF; n + 1]; k_max + 1];
    let mut cut = vec![vec![usize::MAX; n + 1]; k_max + 1];
    best[0][0] = (0, 0);
    for k in 1..=k_max {
        best[k][0] = (0, 0);
        for j in 1..=n {
            for i in 0..j {
                let (bprev, sqprev) = best[k - 1][i];
                if bprev == u64::MAX {
                    continue;
                }
                let s = seg(i, j);
                let cand = (bprev.max(s), sqprev + (s as u128) * (s as u128));
                if cand < best[k][j] {
                    best[k][j] = cand;
                    cut[k][j] = i;
                }
            }
        }
    }
    let mut stages: Vec<(usize, usize)> = Vec::new();
    let (mut j, mut k) = (n, k_max);
    while j > 0 {
        let i = cut[k][j];
        stages.push((i, j));
        j = i;
        k -= 1;
    }
    stages.reverse();

    let mut stage_of_layer = vec![0usize; n];
    let mut processors = Vec::with_capacity(n_proc);
    for (id, &(i, j)) in stages.iter().enumerate() {
        let mut items = Vec::new();
        for l in i..j {
            stage_of_layer[l] = id + 1;
            let e = &profile.entries[l];
            items.push(WorkItem {
                layer: l + 1,
                kind: WorkKind::Fwd,
                cycles: e.t_fp,
                borrowed: false,
                split_fraction: 1.0,
            });
            items.push(WorkItem {
                layer: l + 1,
                kind: WorkKind::GradW,
                cycles: e.t_bpg,
                borrowed: false,
                split_fraction: 1.0,
            });
            items.push(WorkItem {
                layer: l + 1,
                kind: WorkKind::DeltaPrime,
                cycles: e.t_bpdelta,
                borrowed: false,
                split_fraction: 1.0,
            });
        }
        processors.push(ProcessorAssignment {
            id,
            items,
            total: seg(i, j),
        });
    }
    for id in stages.len()..n_proc {
        processors.push(ProcessorAssignment {
            id,
            items: Vec::new(),
            total: 0,
        });
    }
    let bottleneck = processors.iter().map(|p| p.total).max().unwrap_or(0);
    Allocation {
        algorithm: Algorithm::PipeDream,
        processors,
        extra_comm_bytes: 0,
        relaxations: 0,
        target_cycles: bottleneck,
        stage_of_layer,
    }
}
