//! Analytic parameter and multiply-accumulate accounting.
//!
//! Counts are derived from the configuration alone by walking the same
//! layer structure the model builds. Only matrix products and convolutions
//! contribute MACs; normalization, activations, softmax and elementwise ops
//! are not counted.

use crate::config::ModelConfig;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ComputeCount {
    /// Stored backbone tensors used directly by layers.
    pub backbone_params: u64,
    /// Stored weights of the hyper-networks.
    pub generator_params: u64,
    /// Values produced per input by the hyper-networks.
    pub generated_values: u64,
    pub feature_params: u64,
    /// Backbone MACs for one forward pass, generators excluded.
    pub backbone_macs: u64,
    pub generator_macs: u64,
    pub feature_macs: u64,
}

impl ComputeCount {
    /// Every stored tensor value.
    pub fn total_params(&self) -> u64 {
        self.backbone_params + self.generator_params + self.feature_params
    }

    /// One full adaptive forward: feature pass, generation and restoration.
    pub fn total_macs(&self) -> u64 {
        self.backbone_macs + self.generator_macs + self.feature_macs
    }

    /// A forward that takes `v` from a stored class average.
    pub fn fixed_vector_macs(&self) -> u64 {
        self.backbone_macs + self.generator_macs
    }
}

#[derive(Default)]
struct Tally {
    params: u64,
    generator_params: u64,
    generated: u64,
    macs: u64,
    generator_macs: u64,
    dim: u64,
}

impl Tally {
    fn linear(&mut self, n: usize, din: usize, dout: usize) {
        self.params += (din * dout + dout) as u64;
        self.macs += (n * din * dout) as u64;
    }

    fn layer_norm(&mut self, c: usize) {
        self.params += 2 * c as u64;
    }

    /// Stride `stride`, padding 1, 3×3 kernel, output `h×w`.
    fn conv3(&mut self, cin: usize, cout: usize, h: usize, w: usize) {
        self.params += (cout * cin * 9 + cout) as u64;
        self.macs += (cout * cin * 9 * h * w) as u64;
    }

    /// A layer parameter of `numel` values, generated or stored.
    fn slot(&mut self, numel: usize, adaptive: bool) {
        if adaptive {
            let (d, hidden, n) = (self.dim, 2 * self.dim, numel as u64);
            self.generator_params += d * hidden + hidden + hidden * n + n;
            self.generator_macs += d * hidden + hidden * n;
            self.generated += n;
        } else {
            self.params += numel as u64;
        }
    }

    /// Multi-head attention of `nq` queries over `nk` keys/values with
    /// width `c`, projections from `q_rows`/`kv_rows` source rows.
    #[allow(clippy::too_many_arguments)]
    fn attention(&mut self, q_rows: usize, kv_rows: usize, c: usize, groups: usize, nq: usize, nk: usize, adaptive: bool) {
        for _ in 0..3 {
            self.slot(c * c, adaptive);
        }
        self.macs += (q_rows * c * c + 2 * kv_rows * c * c) as u64;
        self.macs += 2 * (groups * nq * nk * c) as u64;
        self.linear(q_rows, c, c);
    }

    fn ffn(&mut self, n: usize, c: usize, mlp_ratio: usize, adaptive: bool) {
        let hidden = c * mlp_ratio;
        self.linear(n, c, hidden);
        self.slot(hidden * 9, adaptive);
        self.macs += (hidden * 9 * n) as u64;
        self.linear(n, hidden, c);
    }

    #[allow(clippy::too_many_arguments)]
    fn block(&mut self, cfg: &ModelConfig, n: usize, c: usize, kv_rows: usize, groups: usize, window: usize, local: bool, global: bool) {
        self.layer_norm(c);
        let (nq, nk) = if groups == 1 { (n, kv_rows) } else { (window, window) };
        self.attention(n, kv_rows, c, groups, nq, nk, global);
        self.layer_norm(c);
        self.ffn(n, c, cfg.mlp_ratio, local);
    }
}

/// Parameters and MACs of one forward pass on an `h×w` input.
pub fn count_compute(cfg: &ModelConfig, h: usize, w: usize) -> Result<ComputeCount> {
    cfg.validate()?;
    cfg.check_input(h, w)?;
    let channels = cfg.scaled_channels();
    let dim = cfg.feature_dim as u64;

    let mut bb = Tally {
        dim,
        ..Tally::default()
    };
    let mut cin = 3;
    let mut dims = Vec::new();
    for (s, &c) in channels.iter().enumerate() {
        let (hs, ws) = (h >> (s + 1), w >> (s + 1));
        let n = hs * ws;
        if cfg.adapt_channel {
            bb.slot(2 * cin, true);
        }
        bb.conv3(cin, c, hs, ws);
        bb.layer_norm(c);
        for _ in 0..cfg.intra_blocks {
            let sub = c / 2;
            bb.linear(n, c, 4 * sub);
            bb.block(cfg, 4 * n, sub, 4 * n, n, 4, cfg.adapt_local, cfg.adapt_global);
            bb.linear(n, 4 * sub, c);
        }
        let m = n / (cfg.sr_ratios[s] * cfg.sr_ratios[s]);
        for _ in 0..cfg.blocks {
            bb.block(cfg, n, c, m, 1, 0, cfg.adapt_local, cfg.adapt_global);
        }
        bb.layer_norm(c);
        dims.push((hs, ws));
        cin = c;
    }

    let last = channels.len() - 1;
    let c = channels[last];
    let nl = dims[last].0 * dims[last].1;
    let nq = cfg.queries;
    bb.params += (nq * c) as u64;
    bb.layer_norm(c);
    bb.layer_norm(c);
    bb.attention(nq, nl, c, 1, nq, nl, false);
    bb.layer_norm(c);
    bb.linear(nq, c, cfg.mlp_ratio * c);
    bb.linear(nq, cfg.mlp_ratio * c, c);
    bb.layer_norm(c);
    bb.layer_norm(c);
    bb.attention(nl, nq, c, 1, nl, nq, false);
    bb.layer_norm(c);
    bb.ffn(nl, c, cfg.mlp_ratio, false);
    for s in (0..last).rev() {
        bb.conv3(channels[s + 1], channels[s], dims[s].0, dims[s].1);
    }
    let tail = cfg.tail_channels;
    bb.conv3(channels[0], 4 * tail, dims[0].0, dims[0].1);
    bb.conv3(3, tail, h, w);
    bb.conv3(tail, 3, h, w);

    let mut ft = Tally {
        dim,
        ..Tally::default()
    };
    let de = cfg.embed_dim();
    let mut cin = 3;
    for (s, &c) in channels.iter().take(2).enumerate() {
        let (hs, ws) = (h >> (s + 1), w >> (s + 1));
        let n = hs * ws;
        ft.conv3(cin, c, hs, ws);
        let m = n / (cfg.sr_ratios[s] * cfg.sr_ratios[s]);
        ft.block(cfg, n, c, m, 1, 0, false, false);
        // Token mean for centering, then the Gram product.
        ft.macs += (n * c + c * n * c) as u64;
        let tri = c * (c + 1) / 2;
        ft.layer_norm(tri);
        ft.linear(1, tri, de);
        ft.linear(1, de, de);
        cin = c;
    }
    ft.linear(1, 2 * de, cfg.feature_dim);
    ft.layer_norm(cfg.feature_dim);

    Ok(ComputeCount {
        backbone_params: bb.params,
        generator_params: bb.generator_params,
        generated_values: bb.generated,
        feature_params: ft.params,
        backbone_macs: bb.macs,
        generator_macs: bb.generator_macs,
        feature_macs: ft.macs,
    })
}
