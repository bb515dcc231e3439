//! Network builders for the evaluated architectures, plus the network
//! description file parser.
//!
//! File grammar, one layer per line after a header:
//!
//! ```text
//! input 224x224x3 batch=32
//! conv1 type=conv f=5x5 in=3 out=32 pad=2 stride=2
//! conv2 type=conv f=3x3 in=32 out=32 pad=1 stride=1 pool=2 res=1
//! ```
//!
//! `pool=N` folds a max-pool after the layer into the spatial bookkeeping
//! (divides the next layer's input dims by N). `res=J` marks a residual add
//! joining layer J's output into this layer's output.

use serde::{Deserialize, Serialize};

use crate::cost::LayerSpec;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub in_h: u32,
    pub in_w: u32,
    pub in_channels: u32,
    pub batch: u32,
    pub layers: Vec<LayerSpec>,
    /// Residual adds as (source layer, merge layer) pairs, 0-based indices.
    pub residual_pairs: Vec<(usize, usize)>,
}

impl NetworkSpec {
    /// Build a network from layer definitions, propagating spatial dims.
    /// The `in_h`/`in_w` fields of the given layers are overwritten.
    pub fn from_layers(
        input: (u32, u32, u32),
        batch: u32,
        mut layers: Vec<LayerSpec>,
        residual_pairs: Vec<(usize, usize)>,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::EmptyNetwork);
        }
        let (in_h, in_w, in_channels) = input;
        let (mut h, mut w, mut c) = (in_h, in_w, in_channels);
        for layer in &mut layers {
            layer.in_h = h;
            layer.in_w = w;
            if layer.in_channels != c {
                return Err(Error::DimensionMismatch {
                    layer: layer.name.clone(),
                    expected: format!("{} input channels", c),
                    got: format!("{}", layer.in_channels),
                });
            }
            layer.validate()?;
            h = layer.out_h() / layer.pool_after;
            w = layer.out_w() / layer.pool_after;
            c = layer.out_channels;
            if h < 1 || w < 1 {
                return Err(Error::BadLayer {
                    layer: layer.name.clone(),
                    reason: "pooling collapses spatial dims below 1".into(),
                });
            }
        }
        let net = NetworkSpec {
            in_h,
            in_w,
            in_channels,
            batch,
            layers,
            residual_pairs,
        };
        net.validate_residuals()?;
        Ok(net)
    }

    fn validate_residuals(&self) -> Result<()> {
        for &(src, dst) in &self.residual_pairs {
            if src >= dst || dst >= self.layers.len() {
                return Err(Error::Invalid(format!(
                    "residual pair ({}, {}) out of order or range",
                    src + 1,
                    dst + 1
                )));
            }
            let a = &self.layers[src];
            let b = &self.layers[dst];
            let dims_a = (a.out_h() / a.pool_after, a.out_w() / a.pool_after, a.out_channels);
            let dims_b = (b.out_h(), b.out_w(), b.out_channels);
            if dims_a != dims_b {
                return Err(Error::DimensionMismatch {
                    layer: b.name.clone(),
                    expected: format!("residual dims {:?}", dims_a),
                    got: format!("{:?}", dims_b),
                });
            }
        }
        Ok(())
    }

    /// Recheck that stored dims are consistent with propagation.
    pub fn check_propagation(&self) -> Result<()> {
        let (mut h, mut w, mut c) = (self.in_h, self.in_w, self.in_channels);
        for layer in &self.layers {
            if layer.in_h != h || layer.in_w != w || layer.in_channels != c {
                return Err(Error::DimensionMismatch {
                    layer: layer.name.clone(),
                    expected: format!("{}x{}x{}", h, w, c),
                    got: format!("{}x{}x{}", layer.in_h, layer.in_w, layer.in_channels),
                });
            }
            h = layer.out_h() / layer.pool_after;
            w = layer.out_w() / layer.pool_after;
            c = layer.out_channels;
        }
        Ok(())
    }

    /// Delta of this layer may not be split across processors because its
    /// backward input passes a residual summation.
    pub fn delta_unsplittable(&self, layer: usize) -> bool {
        self.residual_pairs.iter().any(|&(_, dst)| dst == layer)
    }
}

fn conv(name: &str, f: u32, cin: u32, cout: u32, pad: u32, stride: u32, pool: u32) -> LayerSpec {
    LayerSpec {
        name: name.to_string(),
        filter_h: f,
        filter_w: f,
        in_channels: cin,
        out_channels: cout,
        padding: pad,
        stride,
        in_h: 0,
        in_w: 0,
        pool_after: pool,
    }
}

/// The four-layer sample network: 224x224x3 input, strided 5x5/3x3 convs.
pub fn sample4() -> NetworkSpec {
    NetworkSpec::from_layers(
        (224, 224, 3),
        32,
        vec![
            conv("conv1", 5, 3, 32, 2, 2, 1),
            conv("conv2", 5, 32, 64, 2, 2, 1),
            conv("conv3", 3, 64, 128, 1, 2, 1),
            conv("conv4", 3, 128, 128, 1, 1, 1),
        ],
        vec![],
    )
    .expect("sample4 is well-formed")
}

/// The 13 convolutional layers of VGG16, max-pools folded into dims.
pub fn vgg16_conv() -> NetworkSpec {
    let cfg: [(u32, u32, u32); 13] = [
        (3, 64, 1),
        (64, 64, 2),
        (64, 128, 1),
        (128, 128, 2),
        (128, 256, 1),
        (256, 256, 1),
        (256, 256, 2),
        (256, 512, 1),
        (512, 512, 1),
        (512, 512, 2),
        (512, 512, 1),
        (512, 512, 1),
        (512, 512, 2),
    ];
    let layers = cfg
        .iter()
        .enumerate()
        .map(|(i, &(cin, cout, pool))| conv(&format!("conv{}", i + 1), 3, cin, cout, 1, 1, pool))
        .collect();
    NetworkSpec::from_layers((224, 224, 3), 32, layers, vec![]).expect("vgg16 is well-formed")
}

/// The 49 convolutional layers of ResNet50, bottleneck main paths
/// sequentialized. Identity-skip merges are marked as residual pairs;
/// projection shortcuts are not materialized as layers.
pub fn resnet50_conv() -> NetworkSpec {
    let mut layers = vec![conv("conv1", 7, 3, 64, 3, 2, 2)];
    let mut residual = Vec::new();
    let mut cin = 64;
    // (mid channels, out channels, blocks, stride of first block)
    let stages: [(u32, u32, u32, u32); 4] = [
        (64, 256, 3, 1),
        (128, 512, 4, 2),
        (256, 1024, 6, 2),
        (512, 2048, 3, 2),
    ];
    for (s, &(mid, out, blocks, stride)) in stages.iter().enumerate() {
        for b in 0..blocks {
            let st = if b == 0 { stride } else { 1 };
            let tag = |part| format!("s{}b{}{}", s + 2, b + 1, part);
            layers.push(conv(&tag("a"), 1, cin, mid, 0, 1, 1));
            layers.push(conv(&tag("b"), 3, mid, mid, 1, st, 1));
            layers.push(conv(&tag("c"), 1, mid, out, 0, 1, 1));
            if b > 0 {
                // Identity skip from the previous block's output.
                let merge = layers.len() - 1;
                residual.push((merge - 3, merge));
            }
            cin = out;
        }
    }
    NetworkSpec::from_layers((224, 224, 3), 32, layers, residual).expect("resnet50 is well-formed")
}

fn parse_dims(s: &str) -> Option<Vec<u32>> {
    s.split(['x', '\u{d7}'])
        .map(|p| p.parse::<u32>().ok())
        .collect()
}

/// Parse a network description file. Diagnostics carry the 1-based line.
pub fn parse_network(text: &str) -> Result<NetworkSpec> {
    let mut header: Option<(u32, u32, u32, u32)> = None;
    let mut layers = Vec::new();
    let mut residual = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let lineno = lineno + 1;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |reason: String| Error::Parse { line: lineno, reason };
        let mut parts = line.split_whitespace();
        let name = parts.next().unwrap().to_string();

        if header.is_none() {
            if name != "input" {
                return Err(err("expected header line `input HxWxC batch=B`".into()));
            }
            let dims = parts
                .next()
                .and_then(parse_dims)
                .filter(|d| d.len() == 3)
                .ok_or_else(|| err("bad input dims, expected HxWxC".into()))?;
            let batch = match parts.next() {
                Some(kv) => kv
                    .strip_prefix("batch=")
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| err("bad batch field".into()))?,
                None => 32,
            };
            if let Some(extra) = parts.next() {
                return Err(err(format!("unexpected token `{}`", extra)));
            }
            header = Some((dims[0], dims[1], dims[2], batch));
            continue;
        }

        let mut ty = None;
        let mut f = None;
        let mut cin = None;
        let mut cout = None;
        let mut pad = None;
        let mut stride = None;
        let mut pool = 1;
        let mut res: Option<usize> = None;
        for kv in parts {
            let (key, value) = kv
                .split_once('=')
                .ok_or_else(|| err(format!("expected key=value, got `{}`", kv)))?;
            let parse_u32 =
                |v: &str| v.parse::<u32>().map_err(|_| err(format!("bad value for `{}`", key)));
            match key {
                "type" => ty = Some(value.to_string()),
                "f" => {
                    let dims = parse_dims(value)
                        .filter(|d| d.len() == 2)
                        .ok_or_else(|| err("bad filter dims, expected FHxFW".into()))?;
                    f = Some((dims[0], dims[1]));
                }
                "in" => cin = Some(parse_u32(value)?),
                "out" => cout = Some(parse_u32(value)?),
                "pad" => pad = Some(parse_u32(value)?),
                "stride" => stride = Some(parse_u32(value)?),
                "pool" => pool = parse_u32(value)?,
                "res" => {
                    let j = parse_u32(value)? as usize;
                    if j < 1 || j > layers.len() {
                        return Err(err(format!("res={} does not name an earlier layer", j)));
                    }
                    res = Some(j - 1);
                }
                other => return Err(err(format!("unknown key `{}`", other))),
            }
        }
        match ty.as_deref() {
            Some("conv") => {}
            Some(other) => return Err(err(format!("unknown layer type `{}`", other))),
            None => return Err(err("missing `type`".into())),
        }
        let missing = |what: &str| err(format!("missing `{}`", what));
        let (fh, fw) = f.ok_or_else(|| missing("f"))?;
        let layer = LayerSpec {
            name,
            filter_h: fh,
            filter_w: fw,
            in_channels: cin.ok_or_else(|| missing("in"))?,
            out_channels: cout.ok_or_else(|| missing("out"))?,
            padding: pad.ok_or_else(|| missing("pad"))?,
            stride: stride.ok_or_else(|| missing("stride"))?,
            in_h: 0,
            in_w: 0,
            pool_after: pool,
        };
        if let Some(src) = res {
            residual.push((src, layers.len()));
        }
        layers.push(layer);
    }

    let (h, w, c, batch) = header.ok_or(Error::Parse {
        line: 1,
        reason: "missing header line".into(),
    })?;
    NetworkSpec::from_layers((h, w, c), batch, layers, residual)
}

/// Serialize in the file grammar; `parse_network` round-trips this exactly.
pub fn serialize_network(net: &NetworkSpec) -> String {
    let mut out = format!(
        "input {}x{}x{} batch={}\n",
        net.in_h, net.in_w, net.in_channels, net.batch
    );
    for (idx, layer) in net.layers.iter().enumerate() {
        out.push_str(&format!(
            "{} type=conv f={}x{} in={} out={} pad={} stride={}",
            layer.name,
            layer.filter_h,
            layer.filter_w,
            layer.in_channels,
            layer.out_channels,
            layer.padding,
            layer.stride
        ));
        if layer.pool_after != 1 {
            out.push_str(&format!(" pool={}", layer.pool_after));
        }
        if let Some(&(src, _)) = net.residual_pairs.iter().find(|&&(_, dst)| dst == idx) {
            out.push_str(&format!(" res={}", src + 1));
        }
        out.push('\n');
    }
    out
}
