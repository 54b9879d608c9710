#![allow(dead_code)]

use rand::Rng;
use tsr_core::{seed, Result, Scalar, Tape, Tensor, Var};

pub fn rand_tensor<T: Scalar>(shape: &[usize], seed: u64) -> Tensor<T> {
    let mut rng = seed::rng(seed);
    Tensor::from_fn(shape, |_| T::from_f64(rng.gen_range(-1.0..1.0))).unwrap()
}

/// Random values with magnitude at least `gap`, away from activation kinks.
pub fn rand_away_from_zero(shape: &[usize], seed: u64, gap: f64) -> Tensor<f64> {
    let mut rng = seed::rng(seed);
    Tensor::from_fn(shape, |_| {
        let v: f64 = rng.gen_range(gap..1.0);
        if rng.gen::<bool>() {
            v
        } else {
            -v
        }
    })
    .unwrap()
}

pub fn rand_unit<T: Scalar>(shape: &[usize], seed: u64) -> Tensor<T> {
    let mut rng = seed::rng(seed);
    Tensor::from_fn(shape, |_| T::from_f64(rng.gen_range(0.0..1.0))).unwrap()
}

/// Reduces a batch-one image tensor to the scalar `sum(r * v)` for a fixed
/// random `r`. The sum is a full-size all-ones convolution, so gradients stay
/// O(1) and the loss carries no large offset that would swamp finite
/// differences.
pub fn project(tape: &mut Tape<f64>, v: Var, seed: u64) -> Result<Var> {
    let shape = tape.value(v).shape().to_vec();
    assert!(shape.len() == 4 && shape[0] == 1, "project expects [1, C, H, W], got {shape:?}");
    let r = tape.constant(rand_tensor(&shape, seed ^ 0xabcdef));
    let p = tape.mul(v, r)?;
    let ones = tape.constant(Tensor::full(&[1, shape[1], shape[2], shape[3]], 1.0)?);
    tape.conv2d(p, ones, None, 1, 0)
}

/// Direct summation reference for zero-padded cross-correlation.
pub fn naive_conv2d(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    bias: Option<&Tensor<f64>>,
    stride: usize,
    pad: usize,
) -> Tensor<f64> {
    let [b, cin, h, wd] = x.dims4("naive").unwrap();
    let [cout, _, kh, kw] = w.dims4("naive").unwrap();
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; b * cout * oh * ow];
    for n in 0..b {
        for o in 0..cout {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = bias.map_or(0.0, |bv| bv.data()[o]);
                    for c in 0..cin {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (y * stride + ky) as isize - pad as isize;
                                let ix = (xx * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += x.data()[((n * cin + c) * h + iy as usize) * wd + ix as usize]
                                    * w.data()[((o * cin + c) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    out[((n * cout + o) * oh + y) * ow + xx] = acc;
                }
            }
        }
    }
    Tensor::new(&[b, cout, oh, ow], out).unwrap()
}

/// Scatter reference for transposed convolution with weight `[Cin, Cout, k, k]`.
pub fn naive_conv_transpose2d(x: &Tensor<f64>, w: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
    let [b, cin, h, wd] = x.dims4("naive").unwrap();
    let [_, cout, kh, kw] = w.dims4("naive").unwrap();
    let oh = (h - 1) * stride + kh - 2 * pad;
    let ow = (wd - 1) * stride + kw - 2 * pad;
    let mut out = vec![0.0; b * cout * oh * ow];
    for n in 0..b {
        for c in 0..cin {
            for y in 0..h {
                for xx in 0..wd {
                    let v = x.data()[((n * cin + c) * h + y) * wd + xx];
                    for o in 0..cout {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let oy = (y * stride + ky) as isize - pad as isize;
                                let ox = (xx * stride + kx) as isize - pad as isize;
                                if oy < 0 || ox < 0 || oy >= oh as isize || ox >= ow as isize {
                                    continue;
                                }
                                out[((n * cout + o) * oh + oy as usize) * ow + ox as usize] +=
                                    v * w.data()[((c * cout + o) * kh + ky) * kw + kx];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&[b, cout, oh, ow], out).unwrap()
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-12)
}
