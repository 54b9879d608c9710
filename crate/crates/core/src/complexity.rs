//! Parameter, MAC and FLOP counts derived from a [`NetworkConfig`].
//!
//! MACs count one cell step on a batch of one. Transposed convolutions are
//! charged the MACs of their adjoint convolution. Headline FLOPs are exactly
//! `2 * MACs`; elementwise and activation work is listed per row but kept out
//! of the headline figure.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::network::{topology, LayerKind, NetworkConfig, Resolution};
use crate::ops::{conv_out_dim, conv_transpose_out_dim};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerCost {
    pub path: String,
    pub params: u64,
    pub macs: u64,
    /// Elementwise/activation operations, one per output element.
    pub elementwise_flops: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ComplexityReport {
    pub config: NetworkConfig,
    pub input_h: usize,
    pub input_w: usize,
    pub params: u64,
    pub macs: u64,
    pub flops: u64,
    pub rows: Vec<LayerCost>,
}

/// `out * (in * k * k) + out`.
pub fn conv_params(in_channels: usize, out_channels: usize, kernel: usize, bias: bool) -> u64 {
    (out_channels * in_channels * kernel * kernel + if bias { out_channels } else { 0 }) as u64
}

/// `out * H' * W' * in * k * k` for a convolution producing `H' x W'`.
pub fn conv_macs(in_channels: usize, out_channels: usize, kernel: usize, out_h: usize, out_w: usize) -> u64 {
    (out_channels * out_h * out_w * in_channels * kernel * kernel) as u64
}

/// Parameter count with a per-layer breakdown (no spatial size needed).
pub fn count_params(config: &NetworkConfig) -> Result<(u64, Vec<LayerCost>)> {
    let topo = topology(config)?;
    let mut rows = Vec::new();
    for layer in &topo.layers {
        rows.push(LayerCost {
            path: layer.path.clone(),
            params: conv_params(layer.in_channels, layer.out_channels, layer.kernel, true),
            macs: 0,
            elementwise_flops: 0,
        });
        if layer.activation {
            rows.push(LayerCost {
                path: format!("{}.act", layer.path),
                params: 1,
                macs: 0,
                elementwise_flops: 0,
            });
        }
    }
    Ok((rows.iter().map(|r| r.params).sum(), rows))
}

/// Full report for an `input_h x input_w` LR frame.
pub fn report(config: &NetworkConfig, input_h: usize, input_w: usize) -> Result<ComplexityReport> {
    if input_h == 0 || input_w == 0 {
        return Err(Error::geometry("complexity", "input size must be at least 1x1"));
    }
    let topo = topology(config)?;
    let s = config.scale;
    let dims = |res: Resolution| match res {
        Resolution::Low => (input_h, input_w),
        Resolution::High => (input_h * s, input_w * s),
    };
    let mut rows = Vec::new();
    for layer in &topo.layers {
        let (h, w) = dims(layer.input_res);
        let (k, st, p) = (layer.kernel, layer.stride, layer.padding);
        let fail = || Error::geometry("complexity", format!("layer {} does not fit a {h}x{w} input", layer.path));
        let (oh, ow, macs) = match layer.kind {
            LayerKind::Conv => {
                let oh = conv_out_dim(h, k, st, p).ok_or_else(fail)?;
                let ow = conv_out_dim(w, k, st, p).ok_or_else(fail)?;
                (oh, ow, conv_macs(layer.in_channels, layer.out_channels, k, oh, ow))
            }
            LayerKind::ConvTranspose => {
                let oh = conv_transpose_out_dim(h, k, st, p).ok_or_else(fail)?;
                let ow = conv_transpose_out_dim(w, k, st, p).ok_or_else(fail)?;
                // adjoint convolution maps the [out, oh, ow] side back onto [in, h, w]
                (oh, ow, conv_macs(layer.out_channels, layer.in_channels, k, h, w))
            }
        };
        if (oh, ow) != dims(layer.output_res()) {
            return Err(fail());
        }
        rows.push(LayerCost {
            path: layer.path.clone(),
            params: conv_params(layer.in_channels, layer.out_channels, k, true),
            macs,
            elementwise_flops: 0,
        });
        if layer.activation {
            rows.push(LayerCost {
                path: format!("{}.act", layer.path),
                params: 1,
                macs: 0,
                elementwise_flops: (layer.out_channels * oh * ow) as u64,
            });
        }
    }
    for e in &topo.elementwise {
        let (h, w) = dims(e.res);
        rows.push(LayerCost {
            path: e.path.clone(),
            params: 0,
            macs: 0,
            elementwise_flops: (e.channels * h * w) as u64,
        });
    }
    let params = rows.iter().map(|r| r.params).sum();
    let macs: u64 = rows.iter().map(|r| r.macs).sum();
    Ok(ComplexityReport {
        config: *config,
        input_h,
        input_w,
        params,
        macs,
        flops: 2 * macs,
        rows,
    })
}

/// MACs of one cell step with a per-layer breakdown.
pub fn count_macs(config: &NetworkConfig, input_h: usize, input_w: usize) -> Result<(u64, Vec<LayerCost>)> {
    let r = report(config, input_h, input_w)?;
    Ok((r.macs, r.rows))
}

impl ComplexityReport {
    pub fn gmacs(&self) -> f64 {
        self.macs as f64 / 1e9
    }

    pub fn gflops(&self) -> f64 {
        self.flops as f64 / 1e9
    }

    pub fn elementwise_flops(&self) -> u64 {
        self.rows.iter().map(|r| r.elementwise_flops).sum()
    }

    /// Human-readable table: one row per layer followed by totals.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let width = self.rows.iter().map(|r| r.path.len()).max().unwrap_or(5).max(5);
        out.push_str(&format!(
            "{:<width$}  {:>12}  {:>16}  {:>14}\n",
            "layer", "params", "MACs", "elementwise"
        ));
        for r in &self.rows {
            out.push_str(&format!(
                "{:<width$}  {:>12}  {:>16}  {:>14}\n",
                r.path, r.params, r.macs, r.elementwise_flops
            ));
        }
        out.push_str(&format!(
            "input {}x{} (scale x{})\nparameters: {}\nGMACs: {:.4}\nGFLOPs: {:.4}\n",
            self.input_h,
            self.input_w,
            self.config.scale,
            self.params,
            self.gmacs(),
            self.gflops()
        ));
        out
    }

    /// `layer,params,macs,elementwise_flops` rows with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,params,macs,elementwise_flops\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{}\n", r.path, r.params, r.macs, r.elementwise_flops));
        }
        out
    }
}
