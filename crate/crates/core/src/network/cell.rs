use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::{topology, LayerKind, LayerSpec, NetworkConfig, Parameters};
use crate::metrics::{bicubic_resize, ResizeDirection};
use crate::{Error, Result, Scalar, Tape, Tensor, Var};

/// Recurrent carry between time-steps.
#[derive(Clone, Debug, PartialEq)]
pub struct CellState<T> {
    /// `[B, misr_channels, h, w]` latent maps at LR resolution.
    pub hidden: Tensor<T>,
    /// `[B, 1, h*scale, w*scale]` previous super-resolved frame.
    pub prev_sr: Tensor<T>,
}

/// [`CellState`] placed on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StateVars {
    pub hidden: Var,
    pub prev_sr: Var,
}

struct LayerVars {
    spec: LayerSpec,
    weight: Var,
    bias: Var,
    slope: Option<Var>,
}

/// Parameters placed on a tape.
pub struct NetVars {
    config: NetworkConfig,
    layers: BTreeMap<String, LayerVars>,
}

impl NetVars {
    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    /// `(parameter name, var)` for every parameter tensor.
    pub fn params(&self) -> impl Iterator<Item = (String, Var)> + '_ {
        self.layers.values().flat_map(|l| {
            let mut v = alloc::vec![(l.spec.weight_name(), l.weight), (l.spec.bias_name(), l.bias)];
            if let Some(s) = l.slope {
                v.push((l.spec.slope_name(), s));
            }
            v
        })
    }

    fn layer(&self, path: &str) -> Result<&LayerVars> {
        self.layers.get(path).ok_or_else(|| Error::Parameter {
            name: path.into(),
            reason: "layer missing from topology".into(),
        })
    }
}

/// Places every parameter on `tape`; `trainable` selects whether they
/// receive gradients.
pub fn attach<T: Scalar>(tape: &mut Tape<T>, params: &Parameters<T>, trainable: bool) -> Result<NetVars> {
    let config = *params.config();
    let mut layers = BTreeMap::new();
    let leaf = |tape: &mut Tape<T>, name: String| -> Result<Var> {
        let t = params.get(&name)?.clone();
        Ok(if trainable { tape.param(t) } else { tape.constant(t) })
    };
    for spec in topology(&config)?.layers {
        let weight = leaf(tape, spec.weight_name())?;
        let bias = leaf(tape, spec.bias_name())?;
        let slope = if spec.activation {
            Some(leaf(tape, spec.slope_name())?)
        } else {
            None
        };
        layers.insert(
            spec.path.clone(),
            LayerVars {
                spec,
                weight,
                bias,
                slope,
            },
        );
    }
    Ok(NetVars { config, layers })
}

fn apply<T: Scalar>(tape: &mut Tape<T>, net: &NetVars, path: &str, x: Var) -> Result<Var> {
    let l = net.layer(path)?;
    let s = &l.spec;
    let y = match s.kind {
        LayerKind::Conv => tape.conv2d(x, l.weight, Some(l.bias), s.stride, s.padding)?,
        LayerKind::ConvTranspose => tape.conv_transpose2d(x, l.weight, Some(l.bias), s.stride, s.padding)?,
    };
    match l.slope {
        Some(slope) => tape.prelu(y, slope),
        None => Ok(y),
    }
}

/// conv3x3 -> PReLU -> conv3x3, plus the identity skip.
fn residual_block<T: Scalar>(tape: &mut Tape<T>, net: &NetVars, prefix: &str, x: Var) -> Result<Var> {
    let h = apply(tape, net, &format!("{prefix}.conv1"), x)?;
    let h = apply(tape, net, &format!("{prefix}.conv2"), h)?;
    tape.add(x, h)
}

fn up_projection<T: Scalar>(tape: &mut Tape<T>, net: &NetVars, prefix: &str, low: Var) -> Result<Var> {
    let h0 = apply(tape, net, &format!("{prefix}.up1"), low)?;
    let l0 = apply(tape, net, &format!("{prefix}.down"), h0)?;
    let err = tape.sub(l0, low)?;
    let h1 = apply(tape, net, &format!("{prefix}.up2"), err)?;
    tape.add(h1, h0)
}

fn down_projection<T: Scalar>(tape: &mut Tape<T>, net: &NetVars, prefix: &str, high: Var) -> Result<Var> {
    let l0 = apply(tape, net, &format!("{prefix}.down1"), high)?;
    let h0 = apply(tape, net, &format!("{prefix}.up"), l0)?;
    let err = tape.sub(h0, high)?;
    let l1 = apply(tape, net, &format!("{prefix}.down2"), err)?;
    tape.add(l1, l0)
}

/// SISR branch: `[B, 1, h, w]` to `[B, fusion_channels, h*s, w*s]`.
///
/// The returned feature map is consumed twice by the cell: as the subtrahend
/// of the fusion difference and as the addend before reconstruction.
pub fn sisr_forward_on_tape<T: Scalar>(tape: &mut Tape<T>, net: &NetVars, lr: Var) -> Result<Var> {
    let stages = net.config.sisr_stages;
    let x = apply(tape, net, "sisr.feat0", lr)?;
    let mut low = apply(tape, net, "sisr.feat1", x)?;
    let mut highs = Vec::with_capacity(stages + 1);
    for i in 0..stages {
        let high = up_projection(tape, net, &format!("sisr.up{i}"), low)?;
        highs.push(high);
        low = down_projection(tape, net, &format!("sisr.down{i}"), high)?;
    }
    highs.push(up_projection(tape, net, &format!("sisr.up{stages}"), low)?);
    let cat = tape.concat_channels(&highs)?;
    apply(tape, net, "sisr.fuse", cat)
}

fn check_state<T: Scalar>(tape: &Tape<T>, config: &NetworkConfig, lr: Var, state: StateVars) -> Result<()> {
    let [b, c, h, w] = tape.value(lr).dims4("cell")?;
    if c != 1 {
        return Err(Error::invalid_shape("cell", tape.value(lr).shape(), "LR frames must have one channel"));
    }
    let s = config.scale;
    let hidden = [b, config.misr_channels, h, w];
    if tape.value(state.hidden).shape() != hidden {
        return Err(Error::shape("cell state hidden", tape.value(state.hidden).shape(), &hidden));
    }
    let prev = [b, 1, h * s, w * s];
    if tape.value(state.prev_sr).shape() != prev {
        return Err(Error::shape("cell state prev_sr", tape.value(state.prev_sr).shape(), &prev));
    }
    Ok(())
}

/// MISR branch. Returns `(HR features, new hidden state)`.
pub fn misr_forward_on_tape<T: Scalar>(tape: &mut Tape<T>, net: &NetVars, lr: Var, state: StateVars) -> Result<(Var, Var)> {
    check_state(tape, &net.config, lr, state)?;
    let folded = tape.space_to_depth(state.prev_sr, net.config.scale)?;
    let input = tape.concat_channels(&[lr, state.hidden, folded])?;
    let mut x = apply(tape, net, "misr.head", input)?;
    for j in 0..net.config.misr_blocks {
        x = residual_block(tape, net, &format!("misr.block{j}"), x)?;
    }
    let features = apply(tape, net, "misr.up", x)?;
    Ok((features, x))
}

/// One time-step. Returns `(SR frame, next state)`.
pub fn cell_forward_on_tape<T: Scalar>(tape: &mut Tape<T>, net: &NetVars, lr: Var, state: StateVars) -> Result<(Var, StateVars)> {
    let (misr, hidden) = misr_forward_on_tape(tape, net, lr, state)?;
    let sisr = sisr_forward_on_tape(tape, net, lr)?;
    let diff = tape.sub(misr, sisr)?;
    let mut r = apply(tape, net, "residual.head", diff)?;
    for j in 0..net.config.residual_blocks {
        r = residual_block(tape, net, &format!("residual.block{j}"), r)?;
    }
    let r = apply(tape, net, "residual.tail", r)?;
    let fused = tape.add(r, sisr)?;
    let sr = apply(tape, net, "reconstruction", fused)?;
    Ok((sr, StateVars { hidden, prev_sr: sr }))
}

/// Unrolls the cell over `frames`, keeping the whole sequence on one tape so
/// that gradients flow through every step.
pub fn unroll_on_tape<T: Scalar>(tape: &mut Tape<T>, net: &NetVars, frames: &[Var]) -> Result<Vec<Var>> {
    let first = *frames.first().ok_or(Error::Empty("unroll"))?;
    let init = init_state(&net.config, tape.value(first))?;
    let mut state = StateVars {
        hidden: tape.constant(init.hidden),
        prev_sr: tape.constant(init.prev_sr),
    };
    let mut outputs = Vec::with_capacity(frames.len());
    for &frame in frames {
        let (sr, next) = cell_forward_on_tape(tape, net, frame, state)?;
        outputs.push(sr);
        state = next;
    }
    Ok(outputs)
}

/// Zero hidden maps and the bicubic upsample of the first LR frame.
pub fn init_state<T: Scalar>(config: &NetworkConfig, lr_frame: &Tensor<T>) -> Result<CellState<T>> {
    let [b, c, h, w] = lr_frame.dims4("init_state")?;
    if c != 1 {
        return Err(Error::invalid_shape("init_state", lr_frame.shape(), "LR frames must have one channel"));
    }
    Ok(CellState {
        hidden: Tensor::zeros(&[b, config.misr_channels, h, w])?,
        prev_sr: bicubic_resize(lr_frame, config.scale, ResizeDirection::Up)?,
    })
}

fn inference_tape<T: Scalar>(params: &Parameters<T>) -> Result<(Tape<T>, NetVars)> {
    let mut tape = Tape::new();
    let net = attach(&mut tape, params, false)?;
    Ok((tape, net))
}

pub fn sisr_forward<T: Scalar>(params: &Parameters<T>, lr_frame: &Tensor<T>) -> Result<Tensor<T>> {
    let (mut tape, net) = inference_tape(params)?;
    let lr = tape.constant(lr_frame.clone());
    let out = sisr_forward_on_tape(&mut tape, &net, lr)?;
    Ok(tape.value(out).clone())
}

pub fn misr_forward<T: Scalar>(
    params: &Parameters<T>,
    lr_frame: &Tensor<T>,
    state: &CellState<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (mut tape, net) = inference_tape(params)?;
    let lr = tape.constant(lr_frame.clone());
    let sv = StateVars {
        hidden: tape.constant(state.hidden.clone()),
        prev_sr: tape.constant(state.prev_sr.clone()),
    };
    let (features, hidden) = misr_forward_on_tape(&mut tape, &net, lr, sv)?;
    Ok((tape.value(features).clone(), tape.value(hidden).clone()))
}

pub fn cell_forward<T: Scalar>(
    params: &Parameters<T>,
    lr_frame: &Tensor<T>,
    state: &CellState<T>,
) -> Result<(Tensor<T>, CellState<T>)> {
    let (mut tape, net) = inference_tape(params)?;
    let lr = tape.constant(lr_frame.clone());
    let sv = StateVars {
        hidden: tape.constant(state.hidden.clone()),
        prev_sr: tape.constant(state.prev_sr.clone()),
    };
    let (sr, next) = cell_forward_on_tape(&mut tape, &net, lr, sv)?;
    Ok((
        tape.value(sr).clone(),
        CellState {
            hidden: tape.value(next.hidden).clone(),
            prev_sr: tape.value(next.prev_sr).clone(),
        },
    ))
}

/// Inference over a sequence, one short-lived tape per step.
pub fn unroll<T: Scalar>(params: &Parameters<T>, lr_frames: &[Tensor<T>]) -> Result<Vec<Tensor<T>>> {
    let first = lr_frames.first().ok_or(Error::Empty("unroll"))?;
    if let Some(bad) = lr_frames.iter().find(|f| f.shape() != first.shape()) {
        return Err(Error::shape("unroll", first.shape(), bad.shape()));
    }
    let mut state = init_state(params.config(), first)?;
    let mut outputs = Vec::with_capacity(lr_frames.len());
    for frame in lr_frames {
        let (sr, next) = cell_forward(params, frame, &state)?;
        outputs.push(sr);
        state = next;
    }
    Ok(outputs)
}
