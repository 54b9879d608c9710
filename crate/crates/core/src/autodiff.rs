//! Reverse-mode differentiation over a linear tape.
//!
//! Every operator appends one node holding its output value and the ids of
//! its inputs. [`Tape::backward`] walks the nodes once in reverse order;
//! gradients reaching a node from several consumers are summed.

use alloc::vec;
use alloc::vec::Vec;

use crate::ops::{self, BinaryOp};
use crate::{Error, Result, Scalar, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    },
    ConvTranspose2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    },
    SpaceToDepth(Var, usize),
    DepthToSpace(Var, usize),
    Binary(BinaryOp, Var, Var),
    Relu(Var),
    Prelu(Var, Var),
    Concat(Vec<Var>),
    MeanAbsError(Var, Var),
    Scale(Var, f64),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op,
    requires_grad: bool,
}

/// Records executed operators and their outputs.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    macs: u64,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            macs: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Multiply-accumulates executed by convolutions recorded so far.
    pub fn macs(&self) -> u64 {
        self.macs
    }

    /// A leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that does not receive a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|&v| self.nodes[v.0].requires_grad)
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let (out, macs) = ops::conv2d(
            self.value(input),
            self.value(weight),
            bias.map(|b| self.value(b)),
            stride,
            padding,
        )?;
        self.macs += macs;
        let rg = self.any_grad(&[input, weight]) || bias.is_some_and(|b| self.requires_grad(b));
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                padding,
            },
            rg,
        ))
    }

    pub fn conv_transpose2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let (out, macs) = ops::conv_transpose2d(
            self.value(input),
            self.value(weight),
            bias.map(|b| self.value(b)),
            stride,
            padding,
        )?;
        self.macs += macs;
        let rg = self.any_grad(&[input, weight]) || bias.is_some_and(|b| self.requires_grad(b));
        Ok(self.push(
            out,
            Op::ConvTranspose2d {
                input,
                weight,
                bias,
                stride,
                padding,
            },
            rg,
        ))
    }

    pub fn space_to_depth(&mut self, input: Var, block: usize) -> Result<Var> {
        let out = ops::space_to_depth(self.value(input), block)?;
        let rg = self.requires_grad(input);
        Ok(self.push(out, Op::SpaceToDepth(input, block), rg))
    }

    pub fn depth_to_space(&mut self, input: Var, block: usize) -> Result<Var> {
        let out = ops::depth_to_space(self.value(input), block)?;
        let rg = self.requires_grad(input);
        Ok(self.push(out, Op::DepthToSpace(input, block), rg))
    }

    pub fn elementwise(&mut self, op: BinaryOp, a: Var, b: Var) -> Result<Var> {
        let out = ops::elementwise(op, self.value(a), self.value(b))?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Binary(op, a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(BinaryOp::Add, a, b)
    }

    /// `a - b`.
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(BinaryOp::Mul, a, b)
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let out = ops::relu(self.value(input));
        let rg = self.requires_grad(input);
        self.push(out, Op::Relu(input), rg)
    }

    /// PReLU with a single learnable slope stored in a one-element tensor.
    pub fn prelu(&mut self, input: Var, slope: Var) -> Result<Var> {
        let s = self.value(slope).item()?;
        let out = ops::prelu(self.value(input), s)?;
        let rg = self.any_grad(&[input, slope]);
        Ok(self.push(out, Op::Prelu(input, slope), rg))
    }

    pub fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor<T>> = inputs.iter().map(|&v| self.value(v)).collect();
        let out = ops::concat_channels(&values)?;
        let rg = self.any_grad(inputs);
        Ok(self.push(out, Op::Concat(inputs.to_vec()), rg))
    }

    pub fn mean_abs_error(&mut self, pred: Var, target: Var) -> Result<Var> {
        let v = ops::mean_abs_error(self.value(pred), self.value(target))?;
        let rg = self.any_grad(&[pred, target]);
        Ok(self.push(Tensor::scalar(v), Op::MeanAbsError(pred, target), rg))
    }

    /// Multiplies by a constant.
    pub fn scale(&mut self, input: Var, factor: f64) -> Var {
        let f = T::from_f64(factor);
        let out = self.value(input).map(|v| v * f);
        let rg = self.requires_grad(input);
        self.push(out, Op::Scale(input, factor), rg)
    }

    /// Mean of several one-element values.
    pub fn mean_of(&mut self, scalars: &[Var]) -> Result<Var> {
        let (&first, rest) = scalars.split_first().ok_or(Error::Empty("mean_of"))?;
        let mut acc = first;
        for &s in rest {
            acc = self.add(acc, s)?;
        }
        Ok(self.scale(acc, 1.0 / scalars.len() as f64))
    }

    /// Which side of its kink every piecewise-linear input sits on: the
    /// activation inputs and the absolute-error residuals, in tape order.
    ///
    /// Two evaluations with equal signatures ran through the same linear
    /// pieces.
    pub fn kink_signature(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for node in &self.nodes {
            match node.op {
                Op::Relu(x) | Op::Prelu(x, _) => {
                    out.extend(self.value(x).data().iter().map(|v| v.as_f64() > 0.0));
                }
                Op::MeanAbsError(a, b) => {
                    let b = self.value(b).data();
                    out.extend(self.value(a).data().iter().zip(b).map(|(p, t)| p.as_f64() > t.as_f64()));
                }
                _ => {}
            }
        }
        out
    }

    /// Gradients of the one-element `loss` with respect to every node that
    /// requires a gradient.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let loss_value = self.value(loss);
        if loss_value.len() != 1 {
            return Err(Error::NotScalar(loss_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::from_parts(loss_value.shape().to_vec(), vec![T::one()]));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].clone() else { continue };
            match &node.op {
                Op::Leaf => {}
                &Op::Conv2d {
                    input,
                    weight,
                    bias,
                    stride,
                    padding,
                } => {
                    let need = [
                        self.requires_grad(input),
                        self.requires_grad(weight),
                        bias.is_some_and(|b| self.requires_grad(b)),
                    ];
                    let cg = ops::conv2d_backward(self.value(input), self.value(weight), &g, stride, padding, need)?;
                    self.scatter_conv(&mut grads, input, weight, bias, cg);
                }
                &Op::ConvTranspose2d {
                    input,
                    weight,
                    bias,
                    stride,
                    padding,
                } => {
                    let need = [
                        self.requires_grad(input),
                        self.requires_grad(weight),
                        bias.is_some_and(|b| self.requires_grad(b)),
                    ];
                    let cg =
                        ops::conv_transpose2d_backward(self.value(input), self.value(weight), &g, stride, padding, need)?;
                    self.scatter_conv(&mut grads, input, weight, bias, cg);
                }
                &Op::SpaceToDepth(input, block) => {
                    let gi = ops::depth_to_space(&g, block)?;
                    self.accumulate(&mut grads, input, gi);
                }
                &Op::DepthToSpace(input, block) => {
                    let gi = ops::space_to_depth(&g, block)?;
                    self.accumulate(&mut grads, input, gi);
                }
                &Op::Binary(op, a, b) => match op {
                    BinaryOp::Add => {
                        self.accumulate(&mut grads, a, g.clone());
                        self.accumulate(&mut grads, b, g);
                    }
                    BinaryOp::Sub => {
                        self.accumulate(&mut grads, a, g.clone());
                        self.accumulate(&mut grads, b, g.map(|v| -v));
                    }
                    BinaryOp::Mul => {
                        if self.requires_grad(a) {
                            let ga = ops::elementwise(BinaryOp::Mul, &g, self.value(b))?;
                            self.accumulate(&mut grads, a, ga);
                        }
                        if self.requires_grad(b) {
                            let gb = ops::elementwise(BinaryOp::Mul, &g, self.value(a))?;
                            self.accumulate(&mut grads, b, gb);
                        }
                    }
                },
                &Op::Relu(input) => {
                    let x = self.value(input);
                    let data = x
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&v, &gv)| if v > T::zero() { gv } else { T::zero() })
                        .collect();
                    self.accumulate(&mut grads, input, Tensor::from_parts(x.shape().to_vec(), data));
                }
                &Op::Prelu(input, slope) => {
                    let s = self.value(slope).item()?;
                    let (gi, gs) = ops::prelu_backward(self.value(input), s, &g);
                    self.accumulate(&mut grads, input, gi);
                    let shape = self.value(slope).shape().to_vec();
                    self.accumulate(&mut grads, slope, Tensor::from_parts(shape, vec![gs]));
                }
                Op::Concat(inputs) => {
                    let channels: Vec<usize> = inputs.iter().map(|&v| self.value(v).shape()[1]).collect();
                    let parts = ops::split_channels(&g, &channels)?;
                    for (&v, part) in inputs.iter().zip(parts) {
                        self.accumulate(&mut grads, v, part);
                    }
                }
                &Op::MeanAbsError(pred, target) => {
                    let upstream = g.item()?;
                    let gp = ops::mean_abs_error_backward(self.value(pred), self.value(target), upstream);
                    if self.requires_grad(target) {
                        self.accumulate(&mut grads, target, gp.map(|v| -v));
                    }
                    self.accumulate(&mut grads, pred, gp);
                }
                &Op::Scale(input, factor) => {
                    let f = T::from_f64(factor);
                    self.accumulate(&mut grads, input, g.map(|v| v * f));
                }
            }
        }
        grads.resize(self.nodes.len(), None);
        Ok(Gradients { grads })
    }

    fn scatter_conv(
        &self,
        grads: &mut [Option<Tensor<T>>],
        input: Var,
        weight: Var,
        bias: Option<Var>,
        cg: ops::ConvGrads<T>,
    ) {
        if let Some(gi) = cg.input {
            self.accumulate(grads, input, gi);
        }
        if let Some(gw) = cg.weight {
            self.accumulate(grads, weight, gw);
        }
        if let (Some(b), Some(gb)) = (bias, cg.bias) {
            self.accumulate(grads, b, gb);
        }
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], var: Var, g: Tensor<T>) {
        if !self.requires_grad(var) {
            return;
        }
        match &mut grads[var.0] {
            slot @ None => *slot = Some(g),
            Some(existing) => {
                for (e, v) in existing.data_mut().iter_mut().zip(g.data()) {
                    *e += *v;
                }
            }
        }
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for `var`, or `None` when the loss does not depend on it.
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient for `var`, with zeros standing in when the loss does not
    /// depend on it.
    pub fn get_or_zeros(&self, tape: &Tape<T>, var: Var) -> Tensor<T> {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::from_parts(tape.value(var).shape().to_vec(), vec![T::zero(); tape.value(var).len()]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_chain_rule_through_mae() {
        let mut tape = Tape::<f64>::new();
        let w = tape.param(Tensor::scalar(1.0));
        let x = tape.constant(Tensor::scalar(2.0));
        let y = tape.constant(Tensor::scalar(0.0));
        let wx = tape.mul(w, x).unwrap();
        let loss = tape.mean_abs_error(wx, y).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(w).unwrap().data(), &[2.0]);
        assert!(grads.get(x).is_none());
    }

    #[test]
    fn unused_parameter_gets_zero_gradient() {
        let mut tape = Tape::<f64>::new();
        let a = tape.param(Tensor::scalar(3.0));
        let unused = tape.param(Tensor::new(&[2], alloc::vec![1.0, 2.0]).unwrap());
        let b = tape.scale(a, 2.0);
        let grads = tape.backward(b).unwrap();
        assert!(grads.get(unused).is_none());
        assert_eq!(grads.get_or_zeros(&tape, unused).data(), &[0.0, 0.0]);
        assert_eq!(grads.get(a).unwrap().data(), &[2.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::<f64>::new();
        let a = tape.param(Tensor::new(&[2], alloc::vec![1.0, 2.0]).unwrap());
        assert!(matches!(tape.backward(a), Err(Error::NotScalar(_))));
    }

    #[test]
    fn fan_out_gradients_are_summed() {
        // loss = mean(|x + x|) with x > 0 => d/dx = 2 / n per element
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::new(&[1, 1, 1, 2], alloc::vec![1.0, 2.0]).unwrap());
        let zero = tape.constant(Tensor::zeros(&[1, 1, 1, 2]).unwrap());
        let s = tape.add(x, x).unwrap();
        let loss = tape.mean_abs_error(s, zero).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn macs_are_counted() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros(&[1, 4, 8, 8]).unwrap());
        let w = tape.param(Tensor::zeros(&[4, 4, 1, 1]).unwrap());
        tape.conv2d(x, w, None, 1, 0).unwrap();
        assert_eq!(tape.macs(), 1024);
    }
}
