//! Model configuration and the `key = value` text format shared by every
//! configurable component.
//!
//! Lines look like `model.channels = 16,32,48,64`; `#` starts a comment and
//! blank lines are ignored. Keys are dotted paths; unknown keys are errors so
//! typos do not pass silently.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::Activation;

/// Parsed `key = value` pairs in key order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KeyValues {
    map: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", lineno + 1)));
            }
            if map.insert(k.to_string(), v.trim().to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key {k}", lineno + 1)));
            }
        }
        Ok(KeyValues { map })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }

    /// Typed value of `key`, or `None` when absent.
    pub fn get<V: FromStr>(&self, key: &str) -> Result<Option<V>> {
        self.raw(key)
            .map(|s| {
                s.parse::<V>()
                    .map_err(|_| Error::Config(format!("{key}: cannot parse {s:?}")))
            })
            .transpose()
    }

    pub fn get_list<V: FromStr>(&self, key: &str) -> Result<Option<Vec<V>>> {
        self.raw(key)
            .map(|s| {
                s.split(',')
                    .map(|p| {
                        p.trim()
                            .parse::<V>()
                            .map_err(|_| Error::Config(format!("{key}: cannot parse {p:?}")))
                    })
                    .collect()
            })
            .transpose()
    }

    /// Reject keys under `prefix` that are not in `known`.
    pub fn check_known(&self, prefix: &str, known: &[&str]) -> Result<()> {
        for k in self.keys() {
            if let Some(rest) = k.strip_prefix(prefix) {
                if !known.contains(&rest) {
                    return Err(Error::Config(format!("unknown key {k}")));
                }
            }
        }
        Ok(())
    }
}

/// Shape and switches of the feature network and restoration backbone.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Channels per encoder scale before the width multiplier.
    pub channels: Vec<usize>,
    pub width: f64,
    pub heads: Vec<usize>,
    /// Key/value pooling factor of the attention at each scale.
    pub sr_ratios: Vec<usize>,
    pub blocks: usize,
    pub intra_blocks: usize,
    pub mlp_ratio: usize,
    pub queries: usize,
    /// Length `D` of the weather vector.
    pub feature_dim: usize,
    pub tail_channels: usize,
    pub adapt_local: bool,
    pub adapt_global: bool,
    pub adapt_channel: bool,
    pub global_residual: bool,
    pub activation: Activation,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            channels: vec![16, 32, 48, 64],
            width: 1.0,
            heads: vec![1, 2, 3, 4],
            sr_ratios: vec![4, 2, 1, 1],
            blocks: 2,
            intra_blocks: 1,
            mlp_ratio: 2,
            queries: 8,
            feature_dim: 64,
            tail_channels: 8,
            adapt_local: true,
            adapt_global: true,
            adapt_channel: true,
            global_residual: true,
            activation: Activation::Gelu,
            seed: 0,
        }
    }
}

const MODEL_KEYS: &[&str] = &[
    "channels",
    "width",
    "heads",
    "sr_ratios",
    "blocks",
    "intra_blocks",
    "mlp_ratio",
    "queries",
    "feature_dim",
    "tail_channels",
    "adapt.local",
    "adapt.global",
    "adapt.channel",
    "global_residual",
    "activation",
    "seed",
];

impl ModelConfig {
    /// Full-width reference channel counts.
    pub fn reference() -> Self {
        ModelConfig {
            channels: vec![64, 128, 320, 512],
            heads: vec![1, 2, 5, 8],
            ..Self::default()
        }
    }

    pub fn with_width(mut self, width: f64) -> Self {
        self.width = width;
        self
    }

    pub fn with_adaptivity(mut self, local: bool, global: bool, channel: bool) -> Self {
        self.adapt_local = local;
        self.adapt_global = global;
        self.adapt_channel = channel;
        self
    }

    pub fn scales(&self) -> usize {
        self.channels.len()
    }

    /// Channels after the width multiplier, rounded to a multiple of
    /// `2·heads` so both the heads and the half-width sub-patch tokens divide.
    pub fn scaled_channels(&self) -> Vec<usize> {
        self.channels
            .iter()
            .zip(&self.heads)
            .map(|(&c, &h)| {
                let unit = 2 * h;
                let c = (c as f64 * self.width / unit as f64).round() as usize * unit;
                c.max(unit)
            })
            .collect()
    }

    /// Width of each per-scale embedding in the feature network.
    pub fn embed_dim(&self) -> usize {
        self.feature_dim.min(64)
    }

    pub fn is_adaptive(&self) -> bool {
        self.adapt_local || self.adapt_global || self.adapt_channel
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.channels.len();
        if n < 2 {
            return Err(Error::Config("at least two scales are required".into()));
        }
        if self.heads.len() != n || self.sr_ratios.len() != n {
            return Err(Error::Config(format!(
                "{n} scales but {} head counts and {} reduction ratios",
                self.heads.len(),
                self.sr_ratios.len()
            )));
        }
        if self.heads.contains(&0) || self.sr_ratios.contains(&0) {
            return Err(Error::Config("head counts and reduction ratios must be positive".into()));
        }
        if !(self.width > 0.0 && self.width.is_finite()) {
            return Err(Error::Config(format!("width multiplier {} must be positive", self.width)));
        }
        let scaled = self.scaled_channels();
        if scaled.windows(2).any(|p| p[0] >= p[1]) {
            return Err(Error::Config(format!(
                "channels {scaled:?} must strictly increase across scales"
            )));
        }
        if self.blocks == 0 || self.mlp_ratio == 0 || self.queries == 0 || self.tail_channels == 0 {
            return Err(Error::Config("blocks, mlp_ratio, queries and tail_channels must be positive".into()));
        }
        if self.feature_dim == 0 {
            return Err(Error::Config("feature_dim must be positive".into()));
        }
        Ok(())
    }

    /// Check that an `h×w` input fits every stride and pooling factor.
    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        let n = self.scales();
        let cumulative = 1usize << n;
        if h == 0 || w == 0 || h % cumulative != 0 || w % cumulative != 0 {
            return Err(Error::Config(format!(
                "input {h}x{w} is not divisible by the cumulative stride {cumulative}"
            )));
        }
        for (s, &sr) in self.sr_ratios.iter().enumerate() {
            let (hs, ws) = (h >> (s + 1), w >> (s + 1));
            if hs % sr != 0 || ws % sr != 0 {
                return Err(Error::Config(format!(
                    "scale {s} grid {hs}x{ws} is not divisible by reduction ratio {sr}"
                )));
            }
        }
        Ok(())
    }

    /// Apply `model.*` keys on top of `self`.
    pub fn apply(mut self, kv: &KeyValues) -> Result<Self> {
        kv.check_known("model.", MODEL_KEYS)?;
        if let Some(v) = kv.get_list("model.channels")? {
            self.channels = v;
        }
        if let Some(v) = kv.get("model.width")? {
            self.width = v;
        }
        if let Some(v) = kv.get_list("model.heads")? {
            self.heads = v;
        }
        if let Some(v) = kv.get_list("model.sr_ratios")? {
            self.sr_ratios = v;
        }
        if let Some(v) = kv.get("model.blocks")? {
            self.blocks = v;
        }
        if let Some(v) = kv.get("model.intra_blocks")? {
            self.intra_blocks = v;
        }
        if let Some(v) = kv.get("model.mlp_ratio")? {
            self.mlp_ratio = v;
        }
        if let Some(v) = kv.get("model.queries")? {
            self.queries = v;
        }
        if let Some(v) = kv.get("model.feature_dim")? {
            self.feature_dim = v;
        }
        if let Some(v) = kv.get("model.tail_channels")? {
            self.tail_channels = v;
        }
        if let Some(v) = kv.get("model.adapt.local")? {
            self.adapt_local = v;
        }
        if let Some(v) = kv.get("model.adapt.global")? {
            self.adapt_global = v;
        }
        if let Some(v) = kv.get("model.adapt.channel")? {
            self.adapt_channel = v;
        }
        if let Some(v) = kv.get("model.global_residual")? {
            self.global_residual = v;
        }
        if let Some(v) = kv.raw("model.activation") {
            self.activation = Activation::parse(v)?;
        }
        if let Some(v) = kv.get("model.seed")? {
            self.seed = v;
        }
        self.validate()?;
        Ok(self)
    }

    /// Canonical text form; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let mut s = String::new();
        let _ = writeln!(s, "model.channels = {}", list(&self.channels));
        let _ = writeln!(s, "model.width = {}", self.width);
        let _ = writeln!(s, "model.heads = {}", list(&self.heads));
        let _ = writeln!(s, "model.sr_ratios = {}", list(&self.sr_ratios));
        let _ = writeln!(s, "model.blocks = {}", self.blocks);
        let _ = writeln!(s, "model.intra_blocks = {}", self.intra_blocks);
        let _ = writeln!(s, "model.mlp_ratio = {}", self.mlp_ratio);
        let _ = writeln!(s, "model.queries = {}", self.queries);
        let _ = writeln!(s, "model.feature_dim = {}", self.feature_dim);
        let _ = writeln!(s, "model.tail_channels = {}", self.tail_channels);
        let _ = writeln!(s, "model.adapt.local = {}", self.adapt_local);
        let _ = writeln!(s, "model.adapt.global = {}", self.adapt_global);
        let _ = writeln!(s, "model.adapt.channel = {}", self.adapt_channel);
        let _ = writeln!(s, "model.global_residual = {}", self.global_residual);
        let _ = writeln!(s, "model.activation = {}", self.activation.name());
        let _ = writeln!(s, "model.seed = {}", self.seed);
        s
    }
}
