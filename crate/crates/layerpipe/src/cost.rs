//! Analytical weight-stationary systolic-array cycle model and
//! communication-byte model.
//!
//! A GEMM mapped onto the array holds a `stat_rows x stat_cols` operand
//! stationary and streams `stream_len` rows through it:
//!
//! ```text
//! cycles = ceil(stat_rows/Ar) * ceil(stat_cols/Ac) * (stream_len + fill)
//! ```
//!
//! The three per-layer training operations map as follows (K = fh*fw*Cin,
//! Kt = fh*fw*Cout, SR = batch * spatial):
//!
//! * forward:   weights stationary, K x Cout tile, streams SR_out
//! * weight gradient: deltas stationary, Cout x SR_out tile, streams K
//! * delta backprop:  transposed weights stationary, Kt x Cin tile, streams SR_in

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::zoo::NetworkSpec;

/// One convolution layer, spatial input dims filled in by propagation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub filter_h: u32,
    pub filter_w: u32,
    pub in_channels: u32,
    pub out_channels: u32,
    pub padding: u32,
    pub stride: u32,
    /// Propagated input spatial dims.
    pub in_h: u32,
    pub in_w: u32,
    /// Spatial divisor applied after this layer (folded max-pool), 1 = none.
    pub pool_after: u32,
}

impl LayerSpec {
    pub fn out_h(&self) -> u32 {
        (self.in_h + 2 * self.padding - self.filter_h) / self.stride + 1
    }

    pub fn out_w(&self) -> u32 {
        (self.in_w + 2 * self.padding - self.filter_w) / self.stride + 1
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| Error::BadLayer {
            layer: self.name.clone(),
            reason: reason.to_string(),
        };
        if self.stride < 1 {
            return Err(bad("stride must be >= 1"));
        }
        if self.filter_h < 1 || self.filter_w < 1 {
            return Err(bad("filter dims must be >= 1"));
        }
        if self.in_channels < 1 || self.out_channels < 1 {
            return Err(bad("channel counts must be >= 1"));
        }
        if self.pool_after < 1 {
            return Err(bad("pool divisor must be >= 1"));
        }
        if self.in_h + 2 * self.padding < self.filter_h || self.in_w + 2 * self.padding < self.filter_w {
            return Err(bad("filter larger than padded input"));
        }
        if self.out_h() < 1 || self.out_w() < 1 {
            return Err(bad("output dims must be >= 1"));
        }
        Ok(())
    }
}

/// Systolic array geometry. `fill` is the pipeline-fill cost per tile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayConfig {
    pub rows: u32,
    pub cols: u32,
    pub fill: u64,
}

impl ArrayConfig {
    pub fn new(rows: u32, cols: u32) -> Self {
        ArrayConfig {
            rows,
            cols,
            fill: Self::default_fill(rows, cols),
        }
    }

    pub fn square(n: u32) -> Self {
        Self::new(n, n)
    }

    pub fn with_fill(mut self, fill: u64) -> Self {
        self.fill = fill;
        self
    }

    /// Standard weight-stationary fill: 2*Ar + Ac - 2 (94 for a 32x32 array).
    pub fn default_fill(rows: u32, cols: u32) -> u64 {
        2 * rows as u64 + cols as u64 - 2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunConfig {
    pub batch: u32,
    pub elem_bytes: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            batch: 32,
            elem_bytes: 1,
        }
    }
}

impl RunConfig {
    pub fn with_batch(batch: u32) -> Self {
        RunConfig {
            batch,
            ..Default::default()
        }
    }
}

/// Per-layer cycle counts and stage-boundary transfer sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileEntry {
    pub t_fp: u64,
    pub t_bpg: u64,
    pub t_bpdelta: u64,
    pub t_total: u64,
    /// Activation bytes crossing a stage boundary placed after this layer.
    pub comm_fp_bytes: u64,
    /// Delta bytes crossing a stage boundary placed before this layer.
    pub comm_bp_bytes: u64,
    /// Weight-slice transfer unit for borrowed delta work.
    pub comm_extra_bytes: u64,
    /// Residual merge point: delta may not be split across processors.
    pub delta_unsplittable: bool,
    /// Input channel count, the granularity of channel-wise delta splits.
    pub in_channels: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Profile {
    pub entries: Vec<ProfileEntry>,
    /// Total network computation time, sum of per-layer totals.
    pub t_tot: u64,
}

impl Profile {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn ceil_div(a: u64, b: u64) -> u64 {
    a.div_ceil(b)
}

/// Cycles for one weight-stationary GEMM: tile count times (stream + fill).
pub fn ws_gemm_cycles(stat_rows: u64, stat_cols: u64, stream_len: u64, array: &ArrayConfig) -> u64 {
    ceil_div(stat_rows, array.rows as u64)
        * ceil_div(stat_cols, array.cols as u64)
        * (stream_len + array.fill)
}

/// Profile a single layer whose input dims have already been propagated.
pub fn profile_layer(layer: &LayerSpec, run: &RunConfig, array: &ArrayConfig) -> Result<ProfileEntry> {
    layer.validate()?;
    let b = run.batch as u64;
    let (oh, ow) = (layer.out_h() as u64, layer.out_w() as u64);
    let (ih, iw) = (layer.in_h as u64, layer.in_w as u64);
    let k = layer.filter_h as u64 * layer.filter_w as u64 * layer.in_channels as u64;
    let kt = layer.filter_h as u64 * layer.filter_w as u64 * layer.out_channels as u64;
    let sr_out = b * oh * ow;
    let sr_in = b * ih * iw;

    let t_fp = ws_gemm_cycles(k, layer.out_channels as u64, sr_out, array);
    let t_bpg = ws_gemm_cycles(layer.out_channels as u64, sr_out, k, array);
    // Dense transposed-filter GEMM over the full input extent, including the
    // stride-dilation zeros and the first layer's delta^0.
    let t_bpdelta = ws_gemm_cycles(kt, layer.in_channels as u64, sr_in, array);

    Ok(ProfileEntry {
        t_fp,
        t_bpg,
        t_bpdelta,
        t_total: t_fp + t_bpg + t_bpdelta,
        comm_fp_bytes: sr_out * layer.out_channels as u64 * run.elem_bytes,
        comm_bp_bytes: sr_in * layer.in_channels as u64 * run.elem_bytes,
        comm_extra_bytes: k * run.elem_bytes,
        delta_unsplittable: false,
        in_channels: layer.in_channels,
    })
}

/// Profile every layer of a network; dims must propagate exactly.
pub fn profile_network(network: &NetworkSpec, run: &RunConfig, array: &ArrayConfig) -> Result<Profile> {
    if network.layers.is_empty() {
        return Err(Error::EmptyNetwork);
    }
    network.check_propagation()?;
    let mut entries = Vec::with_capacity(network.layers.len());
    for (idx, layer) in network.layers.iter().enumerate() {
        let mut entry = profile_layer(layer, run, array)?;
        entry.delta_unsplittable = network.delta_unsplittable(idx);
        entries.push(entry);
    }
    let t_tot = entries.iter().map(|e| e.t_total).sum();
    Ok(Profile { entries, t_tot })
}

/// Thresholds deciding whether a layer's delta computation may move to the
/// adjacent processor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Thresholds {
    pub comm_bytes: u64,
    pub mem_bytes: u64,
}

impl Default for Thresholds {
    fn default() -> Self {
        // Weight-slice transfers are KB-scale for conv layers; 1 MiB admits
        // them all.
        Thresholds {
            comm_bytes: 1 << 20,
            mem_bytes: 1 << 20,
        }
    }
}

/// Per-layer immovable/movable split of the computation time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MovableSplit {
    pub t_fix: u64,
    pub t_flex: u64,
}

/// Classify each layer's delta computation as movable (T_flex) or not.
/// Only movement from layer l to layer l+1 is modeled.
pub fn classify_movable(profile: &Profile, thresholds: &Thresholds) -> Vec<MovableSplit> {
    profile
        .entries
        .iter()
        .map(|e| {
            let movable = !e.delta_unsplittable
                && e.comm_extra_bytes <= thresholds.comm_bytes
                && e.comm_extra_bytes <= thresholds.mem_bytes;
            let t_flex = if movable { e.t_bpdelta } else { 0 };
            MovableSplit {
                t_fix: e.t_total - t_flex,
                t_flex,
            }
        })
        .collect()
}

/// CSV export, one row per layer.
pub fn profile_csv(network: &NetworkSpec, profile: &Profile) -> String {
    let mut out = String::from("layer,t_fp,t_bpg,t_bpdelta,t_total,comm_fp,comm_bp,comm_extra\n");
    for (layer, e) in network.layers.iter().zip(&profile.entries) {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            layer.name, e.t_fp, e.t_bpg, e.t_bpdelta, e.t_total, e.comm_fp_bytes, e.comm_bp_bytes, e.comm_extra_bytes
        ));
    }
    out
}
