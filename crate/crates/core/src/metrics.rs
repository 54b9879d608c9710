//! PSNR, SSIM, the bicubic baseline and mean ± std aggregation.
//!
//! All metrics expect images normalized to `[0, 1]`, so the usual peak is 1.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result, Scalar, Tensor};

/// Peak signal-to-noise ratio in dB. Identical images give `f64::INFINITY`.
pub fn psnr<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, peak: f64) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape("psnr", a.shape(), b.shape()));
    }
    if !(peak > 0.0) {
        return Err(Error::InvalidConfig(alloc::format!("psnr peak must be positive, got {peak}")));
    }
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x.as_f64() - y.as_f64();
            d * d
        })
        .sum::<f64>()
        / a.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * libm::log10(peak * peak / mse))
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

fn gaussian_window_1d(size: usize, sigma: f64) -> Vec<f64> {
    let center = (size / 2) as f64;
    let raw: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - center;
            libm::exp(-d * d / (2.0 * sigma * sigma))
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Separable valid-mode filtering of an `h x w` plane.
fn filter_valid(src: &[f64], h: usize, w: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            tmp[y * ow + x] = k.iter().zip(&row[x..x + n]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = k.iter().enumerate().map(|(i, kv)| kv * tmp[(y + i) * ow + x]).sum();
        }
    }
    (out, oh, ow)
}

/// Mean structural similarity with an 11x11 Gaussian window (σ = 1.5),
/// `C1 = (0.01 peak)²`, `C2 = (0.03 peak)²`, over the valid region only.
pub fn ssim<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, peak: f64) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape("ssim", a.shape(), b.shape()));
    }
    let [nb, nc, h, w] = a.dims4("ssim")?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid_shape("ssim", a.shape(), "image smaller than the 11x11 window"));
    }
    let c1 = (0.01 * peak) * (0.01 * peak);
    let c2 = (0.03 * peak) * (0.03 * peak);
    let k = gaussian_window_1d(SSIM_WINDOW, SSIM_SIGMA);
    let mut total = 0.0;
    let mut count = 0usize;
    for n in 0..nb {
        for c in 0..nc {
            let x: Vec<f64> = a.plane(n, c)?.iter().map(|v| v.as_f64()).collect();
            let y: Vec<f64> = b.plane(n, c)?.iter().map(|v| v.as_f64()).collect();
            let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
            let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
            let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
            let (mx, oh, ow) = filter_valid(&x, h, w, &k);
            let (my, _, _) = filter_valid(&y, h, w, &k);
            let (exx, _, _) = filter_valid(&xx, h, w, &k);
            let (eyy, _, _) = filter_valid(&yy, h, w, &k);
            let (exy, _, _) = filter_valid(&xy, h, w, &k);
            for i in 0..oh * ow {
                let (ux, uy) = (mx[i], my[i]);
                let sxx = exx[i] - ux * ux;
                let syy = eyy[i] - uy * uy;
                let sxy = exy[i] - ux * uy;
                total += ((2.0 * ux * uy + c1) * (2.0 * sxy + c2)) / ((ux * ux + uy * uy + c1) * (sxx + syy + c2));
            }
            count += oh * ow;
        }
    }
    Ok(total / count as f64)
}

/// Cubic convolution kernel with `a = -0.5`.
pub fn cubic_kernel(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

/// Normalized weights of the four taps at offsets `-1, 0, 1, 2` from the
/// sample to the left of a point at fractional position `phase` in `[0, 1)`.
pub fn cubic_weights(phase: f64) -> [f64; 4] {
    let w = [
        cubic_kernel(1.0 + phase),
        cubic_kernel(phase),
        cubic_kernel(1.0 - phase),
        cubic_kernel(2.0 - phase),
    ];
    let total: f64 = w.iter().sum();
    w.map(|v| v / total)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResizeDirection {
    Up,
    Down,
}

/// Per-output-sample taps: `(source indices, weights)`.
fn resize_taps(in_len: usize, out_len: usize, scale: usize, direction: ResizeDirection) -> Vec<(Vec<usize>, Vec<f64>)> {
    let clamp = |i: isize| i.clamp(0, in_len as isize - 1) as usize;
    let s = scale as f64;
    (0..out_len)
        .map(|o| match direction {
            ResizeDirection::Up => {
                let center = (o as f64 + 0.5) / s - 0.5;
                let left = libm::floor(center);
                let w = cubic_weights(center - left);
                let left = left as isize;
                ((-1..=2).map(|d| clamp(left + d)).collect(), w.to_vec())
            }
            ResizeDirection::Down => {
                // Kernel stretched by the scale factor to low-pass before sampling.
                let center = (o as f64 + 0.5) * s - 0.5;
                let lo = libm::floor(center - 2.0 * s) as isize + 1;
                let hi = libm::ceil(center + 2.0 * s) as isize - 1;
                let mut idx = Vec::new();
                let mut w = Vec::new();
                for i in lo..=hi {
                    let k = cubic_kernel((i as f64 - center) / s);
                    if k != 0.0 {
                        idx.push(clamp(i));
                        w.push(k);
                    }
                }
                let total: f64 = w.iter().sum();
                w.iter_mut().for_each(|v| *v /= total);
                (idx, w)
            }
        })
        .collect()
}

/// Separable bicubic resampling by an integer factor, plane by plane, with
/// half-pixel centers and clamped edges.
pub fn bicubic_resize<T: Scalar>(image: &Tensor<T>, scale: usize, direction: ResizeDirection) -> Result<Tensor<T>> {
    let [nb, nc, h, w] = image.dims4("bicubic_resize")?;
    if scale == 0 {
        return Err(Error::InvalidConfig("bicubic scale must be >= 1".into()));
    }
    let (oh, ow) = match direction {
        ResizeDirection::Up => (h * scale, w * scale),
        ResizeDirection::Down => {
            if h % scale != 0 || w % scale != 0 || h < scale || w < scale {
                return Err(Error::invalid_shape(
                    "bicubic_resize",
                    image.shape(),
                    alloc::format!("spatial dims must be divisible by {scale}"),
                ));
            }
            (h / scale, w / scale)
        }
    };
    let tx = resize_taps(w, ow, scale, direction);
    let ty = resize_taps(h, oh, scale, direction);
    let mut out = Vec::with_capacity(nb * nc * oh * ow);
    let mut tmp = vec![0.0f64; h * ow];
    for n in 0..nb {
        for c in 0..nc {
            let src = image.plane(n, c)?;
            for y in 0..h {
                let row = &src[y * w..(y + 1) * w];
                for (x, (idx, wt)) in tx.iter().enumerate() {
                    tmp[y * ow + x] = idx.iter().zip(wt).map(|(&i, &k)| k * row[i].as_f64()).sum();
                }
            }
            for (idx, wt) in &ty {
                for x in 0..ow {
                    let v: f64 = idx.iter().zip(wt).map(|(&i, &k)| k * tmp[i * ow + x]).sum();
                    out.push(T::from_f64(v));
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![nb, nc, oh, ow], out))
}

/// Mean and population standard deviation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
}

pub fn aggregate(values: &[f64]) -> Result<Aggregate> {
    if values.is_empty() {
        return Err(Error::Empty("aggregate"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(Aggregate {
        mean,
        std: libm::sqrt(var),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ItemMetrics {
    pub id: String,
    pub psnr: f64,
    pub ssim: f64,
}

/// Per-item and aggregate quality figures for one method.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub method: String,
    pub items: Vec<ItemMetrics>,
    pub psnr: Aggregate,
    pub ssim: Aggregate,
}

impl MetricReport {
    /// Sorts items by id and computes the aggregates.
    pub fn from_items(method: impl Into<String>, mut items: Vec<ItemMetrics>) -> Result<Self> {
        items.sort_by(|a, b| a.id.cmp(&b.id));
        let psnr = aggregate(&items.iter().map(|i| i.psnr).collect::<Vec<_>>())?;
        let ssim = aggregate(&items.iter().map(|i| i.ssim).collect::<Vec<_>>())?;
        Ok(MetricReport {
            method: method.into(),
            items,
            psnr,
            ssim,
        })
    }
}
