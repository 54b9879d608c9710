//! Forward and backward kernels for the operators the network needs.
//!
//! These are plain functions over [`Tensor`]s; the [`Tape`](crate::Tape)
//! records which of them ran and calls the matching backward kernel.
//! Convolutions lower to im2col followed by a single GEMM per batch item.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::scalar::{matmul, MatRef};
use crate::{Error, Result, Scalar, Tensor};

/// Output extent of a zero-padded convolution along one axis.
pub fn conv_out_dim(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    if stride == 0 || kernel == 0 || kernel > input + 2 * padding {
        return None;
    }
    Some((input + 2 * padding - kernel) / stride + 1)
}

/// Output extent of a transposed convolution along one axis.
pub fn conv_transpose_out_dim(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    if stride == 0 || kernel == 0 || input == 0 {
        return None;
    }
    let full = (input - 1) * stride + kernel;
    if full <= 2 * padding {
        return None;
    }
    Some(full - 2 * padding)
}

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    channels: usize,
    height: usize,
    width: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    out_h: usize,
    out_w: usize,
}

impl ConvGeom {
    fn rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.out_h * self.out_w
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.padding == 0
    }
}

/// Unfold receptive fields of one `[C, H, W]` image into `[C*kh*kw, Ho*Wo]`.
fn im2col<T: Scalar>(src: &[T], g: &ConvGeom, col: &mut [T]) {
    let plane = g.height * g.width;
    let ncols = g.cols();
    for c in 0..g.channels {
        let src_c = &src[c * plane..(c + 1) * plane];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let dst = &mut col[row * ncols..(row + 1) * ncols];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    let dst_row = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.height as isize {
                        dst_row.fill(T::zero());
                        continue;
                    }
                    let src_row = &src_c[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, d) in dst_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        *d = if ix < 0 || ix >= g.width as isize {
                            T::zero()
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add columns back into `[C, H, W]`.
fn col2im<T: Scalar>(col: &[T], g: &ConvGeom, dst: &mut [T]) {
    let plane = g.height * g.width;
    let ncols = g.cols();
    for c in 0..g.channels {
        let dst_c = &mut dst[c * plane..(c + 1) * plane];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let src = &col[row * ncols..(row + 1) * ncols];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst_row = &mut dst_c[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        if ix >= 0 && ix < g.width as isize {
                            dst_row[ix as usize] += src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

fn check_bias<T: Scalar>(op: &'static str, bias: Option<&Tensor<T>>, channels: usize) -> Result<()> {
    if let Some(b) = bias {
        if b.shape() != [channels] {
            return Err(Error::shape(op, b.shape(), &[channels]));
        }
    }
    Ok(())
}

fn add_bias<T: Scalar>(out: &mut [T], bias: &[T], plane: usize) {
    for (chunk, &b) in out.chunks_mut(plane).zip(bias.iter().cycle()) {
        for v in chunk {
            *v += b;
        }
    }
}

fn bias_grad<T: Scalar>(grad_out: &[T], batch: usize, channels: usize, plane: usize) -> Vec<T> {
    let mut g = vec![T::zero(); channels];
    for b in 0..batch {
        for (c, gc) in g.iter_mut().enumerate() {
            let start = (b * channels + c) * plane;
            *gc += grad_out[start..start + plane].iter().copied().sum::<T>();
        }
    }
    g
}

fn conv2d_geom<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, stride: usize, padding: usize) -> Result<(ConvGeom, usize, usize)> {
    let [batch, cin, h, w] = input.dims4("conv2d")?;
    let [cout, wcin, kh, kw] = weight.dims4("conv2d")?;
    if cin != wcin {
        return Err(Error::shape("conv2d", input.shape(), weight.shape()));
    }
    if stride == 0 {
        return Err(Error::geometry("conv2d", "stride must be >= 1"));
    }
    let (out_h, out_w) = match (conv_out_dim(h, kh, stride, padding), conv_out_dim(w, kw, stride, padding)) {
        (Some(oh), Some(ow)) => (oh, ow),
        _ => {
            return Err(Error::geometry(
                "conv2d",
                format!("kernel {kh}x{kw} does not fit padded input {h}x{w} (padding {padding})"),
            ))
        }
    };
    Ok((
        ConvGeom {
            channels: cin,
            height: h,
            width: w,
            kh,
            kw,
            stride,
            padding,
            out_h,
            out_w,
        },
        batch,
        cout,
    ))
}

/// Zero-padded 2-D cross-correlation. Returns the output and its MAC count.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<(Tensor<T>, u64)> {
    let (g, batch, cout) = conv2d_geom(input, weight, stride, padding)?;
    check_bias("conv2d", bias, cout)?;
    let in_plane = g.channels * g.height * g.width;
    let out_plane = cout * g.cols();
    let mut out = vec![T::zero(); batch * out_plane];
    let mut col = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); g.rows() * g.cols()] };
    let wmat = MatRef::new(weight.data(), cout, g.rows());
    for b in 0..batch {
        let x = &input.data()[b * in_plane..(b + 1) * in_plane];
        let cols = if g.is_pointwise() {
            x
        } else {
            im2col(x, &g, &mut col);
            &col
        };
        matmul(
            wmat,
            MatRef::new(cols, g.rows(), g.cols()),
            &mut out[b * out_plane..(b + 1) * out_plane],
            false,
        );
    }
    if let Some(bias) = bias {
        add_bias(&mut out, bias.data(), g.cols());
    }
    let macs = (batch * cout * g.cols() * g.rows()) as u64;
    Ok((Tensor::from_parts(vec![batch, cout, g.out_h, g.out_w], out), macs))
}

/// Gradients of [`conv2d`] with respect to input, weight and bias.
pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Option<Tensor<T>>,
    pub bias: Option<Tensor<T>>,
}

pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    padding: usize,
    need: [bool; 3],
) -> Result<ConvGrads<T>> {
    let (g, batch, cout) = conv2d_geom(input, weight, stride, padding)?;
    let expected = [batch, cout, g.out_h, g.out_w];
    if grad_out.shape() != expected {
        return Err(Error::shape("conv2d_backward", grad_out.shape(), &expected));
    }
    let in_plane = g.channels * g.height * g.width;
    let out_plane = cout * g.cols();
    let wmat = MatRef::new(weight.data(), cout, g.rows());
    let mut dx = if need[0] { vec![T::zero(); input.len()] } else { Vec::new() };
    let mut dw = if need[1] { vec![T::zero(); weight.len()] } else { Vec::new() };
    let mut col = vec![T::zero(); g.rows() * g.cols()];
    for b in 0..batch {
        let gy = MatRef::new(&grad_out.data()[b * out_plane..(b + 1) * out_plane], cout, g.cols());
        if need[1] {
            let x = &input.data()[b * in_plane..(b + 1) * in_plane];
            let cols = if g.is_pointwise() {
                x
            } else {
                im2col(x, &g, &mut col);
                &col
            };
            matmul(gy, MatRef::new(cols, g.rows(), g.cols()).t(), &mut dw, true);
        }
        if need[0] {
            let dxb = &mut dx[b * in_plane..(b + 1) * in_plane];
            if g.is_pointwise() {
                matmul(wmat.t(), gy, dxb, true);
            } else {
                matmul(wmat.t(), gy, &mut col, false);
                col2im(&col, &g, dxb);
            }
        }
    }
    Ok(ConvGrads {
        input: need[0].then(|| Tensor::from_parts(input.shape().to_vec(), dx)),
        weight: need[1].then(|| Tensor::from_parts(weight.shape().to_vec(), dw)),
        bias: need[2].then(|| Tensor::from_parts(vec![cout], bias_grad(grad_out.data(), batch, cout, g.cols()))),
    })
}

/// Geometry of the convolution whose adjoint is the transposed convolution:
/// it maps the transposed output `[Cout, Ho, Wo]` back to `[Cin, H, W]`.
fn conv_transpose_geom<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<(ConvGeom, usize, usize)> {
    let [batch, cin, h, w] = input.dims4("conv_transpose2d")?;
    let [wcin, cout, kh, kw] = weight.dims4("conv_transpose2d")?;
    if cin != wcin {
        return Err(Error::shape("conv_transpose2d", input.shape(), weight.shape()));
    }
    if stride == 0 {
        return Err(Error::geometry("conv_transpose2d", "stride must be >= 1"));
    }
    let (out_h, out_w) = match (
        conv_transpose_out_dim(h, kh, stride, padding),
        conv_transpose_out_dim(w, kw, stride, padding),
    ) {
        (Some(oh), Some(ow)) => (oh, ow),
        _ => {
            return Err(Error::geometry(
                "conv_transpose2d",
                format!("non-positive output for input {h}x{w}, kernel {kh}x{kw}, stride {stride}, padding {padding}"),
            ))
        }
    };
    Ok((
        ConvGeom {
            channels: cout,
            height: out_h,
            width: out_w,
            kh,
            kw,
            stride,
            padding,
            out_h: h,
            out_w: w,
        },
        batch,
        cin,
    ))
}

/// Transposed convolution, the exact adjoint of [`conv2d`] with the same
/// weight and geometry. Weight layout is `[Cin, Cout, kH, kW]`.
pub fn conv_transpose2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<(Tensor<T>, u64)> {
    let (g, batch, cin) = conv_transpose_geom(input, weight, stride, padding)?;
    let cout = g.channels;
    check_bias("conv_transpose2d", bias, cout)?;
    let in_plane = cin * g.cols();
    let out_plane = cout * g.height * g.width;
    let wmat = MatRef::new(weight.data(), cin, g.rows());
    let mut out = vec![T::zero(); batch * out_plane];
    let mut col = vec![T::zero(); g.rows() * g.cols()];
    for b in 0..batch {
        let x = MatRef::new(&input.data()[b * in_plane..(b + 1) * in_plane], cin, g.cols());
        matmul(wmat.t(), x, &mut col, false);
        col2im(&col, &g, &mut out[b * out_plane..(b + 1) * out_plane]);
    }
    if let Some(bias) = bias {
        add_bias(&mut out, bias.data(), g.height * g.width);
    }
    let macs = (batch * cin * g.cols() * g.rows()) as u64;
    Ok((Tensor::from_parts(vec![batch, cout, g.height, g.width], out), macs))
}

pub fn conv_transpose2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    padding: usize,
    need: [bool; 3],
) -> Result<ConvGrads<T>> {
    let (g, batch, cin) = conv_transpose_geom(input, weight, stride, padding)?;
    let cout = g.channels;
    let expected = [batch, cout, g.height, g.width];
    if grad_out.shape() != expected {
        return Err(Error::shape("conv_transpose2d_backward", grad_out.shape(), &expected));
    }
    let in_plane = cin * g.cols();
    let out_plane = cout * g.height * g.width;
    let wmat = MatRef::new(weight.data(), cin, g.rows());
    let mut dx = if need[0] { vec![T::zero(); input.len()] } else { Vec::new() };
    let mut dw = if need[1] { vec![T::zero(); weight.len()] } else { Vec::new() };
    let mut col = vec![T::zero(); g.rows() * g.cols()];
    for b in 0..batch {
        if !(need[0] || need[1]) {
            break;
        }
        im2col(&grad_out.data()[b * out_plane..(b + 1) * out_plane], &g, &mut col);
        let gcol = MatRef::new(&col, g.rows(), g.cols());
        if need[0] {
            matmul(wmat, gcol, &mut dx[b * in_plane..(b + 1) * in_plane], true);
        }
        if need[1] {
            let x = MatRef::new(&input.data()[b * in_plane..(b + 1) * in_plane], cin, g.cols());
            matmul(x, gcol.t(), &mut dw, true);
        }
    }
    Ok(ConvGrads {
        input: need[0].then(|| Tensor::from_parts(input.shape().to_vec(), dx)),
        weight: need[1].then(|| Tensor::from_parts(weight.shape().to_vec(), dw)),
        bias: need[2].then(|| {
            Tensor::from_parts(vec![cout], bias_grad(grad_out.data(), batch, cout, g.height * g.width))
        }),
    })
}

/// Moves each `block x block` spatial patch into channels.
///
/// Output channel `c * block² + dy * block + dx` holds input channel `c` at
/// offset `(dy, dx)` inside each patch.
pub fn space_to_depth<T: Scalar>(input: &Tensor<T>, block: usize) -> Result<Tensor<T>> {
    let [b, c, h, w] = input.dims4("space_to_depth")?;
    if block == 0 || h % block != 0 || w % block != 0 {
        return Err(Error::invalid_shape(
            "space_to_depth",
            input.shape(),
            format!("spatial dims must be divisible by block {block}"),
        ));
    }
    let (oh, ow, bb) = (h / block, w / block, block * block);
    let src = input.data();
    let mut out = vec![T::zero(); input.len()];
    for n in 0..b {
        for ci in 0..c {
            for dy in 0..block {
                for dx in 0..block {
                    let oc = ci * bb + dy * block + dx;
                    let dst = &mut out[((n * c * bb + oc) * oh) * ow..((n * c * bb + oc + 1) * oh) * ow];
                    for y in 0..oh {
                        let row = ((n * c + ci) * h + y * block + dy) * w;
                        for x in 0..ow {
                            dst[y * ow + x] = src[row + x * block + dx];
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![b, c * bb, oh, ow], out))
}

/// Inverse of [`space_to_depth`].
pub fn depth_to_space<T: Scalar>(input: &Tensor<T>, block: usize) -> Result<Tensor<T>> {
    let [b, cin, oh, ow] = input.dims4("depth_to_space")?;
    let bb = block * block;
    if block == 0 || cin % bb != 0 {
        return Err(Error::invalid_shape(
            "depth_to_space",
            input.shape(),
            format!("channels must be divisible by {bb}"),
        ));
    }
    let (c, h, w) = (cin / bb, oh * block, ow * block);
    let src = input.data();
    let mut out = vec![T::zero(); input.len()];
    for n in 0..b {
        for ci in 0..c {
            for dy in 0..block {
                for dx in 0..block {
                    let ic = ci * bb + dy * block + dx;
                    let s = &src[((n * cin + ic) * oh) * ow..((n * cin + ic + 1) * oh) * ow];
                    for y in 0..oh {
                        let row = ((n * c + ci) * h + y * block + dy) * w;
                        for x in 0..ow {
                            out[row + x * block + dx] = s[y * ow + x];
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![b, c, h, w], out))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

/// Pointwise binary op; shapes must match exactly.
pub fn elementwise<T: Scalar>(op: BinaryOp, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        let name = match op {
            BinaryOp::Add => "add",
            BinaryOp::Sub => "sub",
            BinaryOp::Mul => "mul",
        };
        return Err(Error::shape(name, a.shape(), b.shape()));
    }
    let f: fn(T, T) -> T = match op {
        BinaryOp::Add => |x, y| x + y,
        BinaryOp::Sub => |x, y| x - y,
        BinaryOp::Mul => |x, y| x * y,
    };
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Ok(Tensor::from_parts(a.shape().to_vec(), data))
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn prelu<T: Scalar>(x: &Tensor<T>, slope: T) -> Result<Tensor<T>> {
    if !slope.is_finite() {
        return Err(Error::NonFinite("prelu slope".into()));
    }
    Ok(x.map(|v| if v >= T::zero() { v } else { slope * v }))
}

/// Returns `(d input, d slope)`.
pub fn prelu_backward<T: Scalar>(x: &Tensor<T>, slope: T, grad_out: &Tensor<T>) -> (Tensor<T>, T) {
    let mut dslope = T::zero();
    let dx = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| {
            if v >= T::zero() {
                g
            } else {
                dslope += v * g;
                slope * g
            }
        })
        .collect();
    (Tensor::from_parts(x.shape().to_vec(), dx), dslope)
}

/// Concatenates `[B, Ci, H, W]` tensors along channels, in argument order.
pub fn concat_channels<T: Scalar>(tensors: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = tensors.first().ok_or(Error::Empty("concat_channels"))?;
    let [b, _, h, w] = first.dims4("concat_channels")?;
    let mut total = 0;
    for t in tensors {
        let [tb, tc, th, tw] = t.dims4("concat_channels")?;
        if (tb, th, tw) != (b, h, w) {
            return Err(Error::shape("concat_channels", first.shape(), t.shape()));
        }
        total += tc;
    }
    let plane = h * w;
    let mut out = Vec::with_capacity(b * total * plane);
    for n in 0..b {
        for t in tensors {
            let c = t.shape()[1];
            out.extend_from_slice(&t.data()[n * c * plane..(n + 1) * c * plane]);
        }
    }
    Ok(Tensor::from_parts(vec![b, total, h, w], out))
}

/// Splits a channel-concatenated gradient back into per-input pieces.
pub fn split_channels<T: Scalar>(grad: &Tensor<T>, channels: &[usize]) -> Result<Vec<Tensor<T>>> {
    let [b, total, h, w] = grad.dims4("split_channels")?;
    if channels.iter().sum::<usize>() != total {
        return Err(Error::invalid_shape("split_channels", grad.shape(), "channel split does not add up"));
    }
    let plane = h * w;
    let mut parts: Vec<Vec<T>> = channels.iter().map(|&c| Vec::with_capacity(b * c * plane)).collect();
    for n in 0..b {
        let mut offset = n * total * plane;
        for (part, &c) in parts.iter_mut().zip(channels) {
            part.extend_from_slice(&grad.data()[offset..offset + c * plane]);
            offset += c * plane;
        }
    }
    Ok(parts
        .into_iter()
        .zip(channels)
        .map(|(data, &c)| Tensor::from_parts(vec![b, c, h, w], data))
        .collect())
}

/// `(1/N) * sum |pred - target|`, accumulated in `f64`.
pub fn mean_abs_error<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
    if pred.shape() != target.shape() {
        return Err(Error::shape("mean_abs_error", pred.shape(), target.shape()));
    }
    let sum: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| (p.as_f64() - t.as_f64()).abs())
        .sum();
    Ok(T::from_f64(sum / pred.len() as f64))
}

/// Gradient of [`mean_abs_error`] with respect to `pred`, scaled by `upstream`.
/// Exact ties get a zero subgradient.
pub fn mean_abs_error_backward<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, upstream: T) -> Tensor<T> {
    let scale = upstream / T::from_f64(pred.len() as f64);
    let data = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            if p > t {
                scale
            } else if p < t {
                -scale
            } else {
                T::zero()
            }
        })
        .collect();
    Tensor::from_parts(pred.shape().to_vec(), data)
}
