//! Synthetic low-resolution inputs: blur, box downsampling and sensor noise,
//! plus a generator of smooth thermal-like sequences used as ground truth.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::seed;
use crate::{Error, Result, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DegradationParams {
    pub scale: usize,
    /// Gaussian blur standard deviation in HR pixels.
    pub blur_sigma: f64,
    /// Additive Gaussian noise standard deviation, as a fraction of the range.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for DegradationParams {
    fn default() -> Self {
        DegradationParams {
            scale: 4,
            blur_sigma: 1.0,
            noise_sigma: 0.01,
            seed: 0,
        }
    }
}

impl DegradationParams {
    pub fn validate(&self) -> Result<()> {
        if self.scale != 2 && self.scale != 4 {
            return Err(Error::InvalidConfig(format!("scale must be 2 or 4, got {}", self.scale)));
        }
        if !(self.blur_sigma >= 0.0 && self.blur_sigma.is_finite()) {
            return Err(Error::InvalidConfig(format!("blur_sigma must be >= 0, got {}", self.blur_sigma)));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidConfig(format!("noise_sigma must be >= 0, got {}", self.noise_sigma)));
        }
        Ok(())
    }
}

/// HR frames together with the LR frames derived from them.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceSample {
    pub hr_frames: Vec<Tensor<f32>>,
    pub lr_frames: Vec<Tensor<f32>>,
    pub params: DegradationParams,
}

pub const MAX_SEQUENCE_LEN: usize = 10;

/// Normalized 1-D Gaussian taps with radius `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = libm::ceil(3.0 * sigma) as isize;
    let raw: Vec<f64> = (-radius..=radius)
        .map(|i| libm::exp(-((i * i) as f64) / (2.0 * sigma * sigma)))
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Mirror index into `[0, n)` with edge repetition (`-1 -> 0`, `n -> n-1`).
fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

/// Separable Gaussian blur of every `[H, W]` plane with reflected edges.
/// `sigma == 0` returns the input unchanged.
pub fn gaussian_blur<T: Scalar>(image: &Tensor<T>, sigma: f64) -> Result<Tensor<T>> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidConfig(format!("blur sigma must be >= 0, got {sigma}")));
    }
    let [nb, nc, h, w] = image.dims4("gaussian_blur")?;
    if sigma == 0.0 {
        return Ok(image.clone());
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let mut out = Vec::with_capacity(image.len());
    let mut tmp = vec![0.0f64; h * w];
    for n in 0..nb {
        for c in 0..nc {
            let src = image.plane(n, c)?;
            for y in 0..h {
                for x in 0..w {
                    tmp[y * w + x] = k
                        .iter()
                        .enumerate()
                        .map(|(i, kv)| kv * src[y * w + reflect(x as isize + i as isize - r, w)].as_f64())
                        .sum();
                }
            }
            for y in 0..h {
                for x in 0..w {
                    let v: f64 = k
                        .iter()
                        .enumerate()
                        .map(|(i, kv)| kv * tmp[reflect(y as isize + i as isize - r, h) * w + x])
                        .sum();
                    out.push(T::from_f64(v));
                }
            }
        }
    }
    Ok(Tensor::from_parts(image.shape().to_vec(), out))
}

/// Box average over non-overlapping `scale x scale` blocks.
pub fn downsample<T: Scalar>(image: &Tensor<T>, scale: usize) -> Result<Tensor<T>> {
    let [nb, nc, h, w] = image.dims4("downsample")?;
    if scale == 0 || h % scale != 0 || w % scale != 0 {
        return Err(Error::invalid_shape(
            "downsample",
            image.shape(),
            format!("spatial dims must be divisible by {scale}"),
        ));
    }
    let (oh, ow) = (h / scale, w / scale);
    let area = (scale * scale) as f64;
    let mut out = Vec::with_capacity(nb * nc * oh * ow);
    for n in 0..nb {
        for c in 0..nc {
            let src = image.plane(n, c)?;
            for y in 0..oh {
                for x in 0..ow {
                    let mut acc = 0.0f64;
                    for dy in 0..scale {
                        let row = (y * scale + dy) * w + x * scale;
                        acc += src[row..row + scale].iter().map(|v| v.as_f64()).sum::<f64>();
                    }
                    out.push(T::from_f64(acc / area));
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![nb, nc, oh, ow], out))
}

/// I.i.d. `N(0, sigma²)` samples, one per element of `shape`.
pub fn noise_field(shape: &[usize], sigma: f64, seed: u64) -> Result<Tensor<f64>> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidConfig(format!("noise sigma must be >= 0, got {sigma}")));
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidConfig(format!("{e}")))?;
    let mut rng = seed::rng(seed);
    Tensor::from_fn(shape, |_| normal.sample(&mut rng))
}

/// Adds seeded Gaussian noise and clamps to `[0, 1]`.
pub fn add_noise<T: Scalar>(image: &Tensor<T>, sigma: f64, seed: u64) -> Result<Tensor<T>> {
    if sigma == 0.0 {
        return Ok(image.clone());
    }
    let noise = noise_field(image.shape(), sigma, seed)?;
    let data = image
        .data()
        .iter()
        .zip(noise.data())
        .map(|(&v, &n)| T::from_f64((v.as_f64() + n).clamp(0.0, 1.0)))
        .collect();
    Ok(Tensor::from_parts(image.shape().to_vec(), data))
}

/// `[.., H, W]` window with top-left corner `(top, left)`.
pub fn crop<T: Scalar>(image: &Tensor<T>, top: usize, left: usize, height: usize, width: usize) -> Result<Tensor<T>> {
    let [nb, nc, h, w] = image.dims4("crop")?;
    if height == 0 || width == 0 || top + height > h || left + width > w {
        return Err(Error::invalid_shape(
            "crop",
            image.shape(),
            format!("window {height}x{width} at ({top}, {left}) does not fit"),
        ));
    }
    let mut out = Vec::with_capacity(nb * nc * height * width);
    for n in 0..nb {
        for c in 0..nc {
            let src = image.plane(n, c)?;
            for y in top..top + height {
                out.extend_from_slice(&src[y * w + left..y * w + left + width]);
            }
        }
    }
    Ok(Tensor::from_parts(vec![nb, nc, height, width], out))
}

/// The same seeded `size x size` window cut from every frame.
pub fn random_crop_sequence<T: Scalar>(frames: &[Tensor<T>], size: usize, seed: u64) -> Result<Vec<Tensor<T>>> {
    let first = frames.first().ok_or(Error::Empty("random_crop_sequence"))?;
    let [_, _, h, w] = first.dims4("random_crop_sequence")?;
    if frames.iter().any(|f| f.shape() != first.shape()) {
        return Err(Error::invalid_shape("random_crop_sequence", first.shape(), "frames differ in shape"));
    }
    if size == 0 || size > h || size > w {
        return Err(Error::invalid_shape(
            "random_crop_sequence",
            first.shape(),
            format!("frame smaller than crop size {size}"),
        ));
    }
    let mut rng = seed::rng(seed);
    let top = rng.gen_range(0..=h - size);
    let left = rng.gen_range(0..=w - size);
    frames.iter().map(|f| crop(f, top, left, size, size)).collect()
}

/// Blur, downsample, then add noise (seed + frame index) to every frame.
pub fn make_lr_sequence(hr_frames: &[Tensor<f32>], params: DegradationParams) -> Result<SequenceSample> {
    params.validate()?;
    if hr_frames.is_empty() {
        return Err(Error::Empty("make_lr_sequence"));
    }
    let lr_frames = hr_frames
        .iter()
        .enumerate()
        .map(|(i, hr)| {
            let blurred = gaussian_blur(hr, params.blur_sigma)?;
            let small = downsample(&blurred, params.scale)?;
            add_noise(&small, params.noise_sigma, params.seed.wrapping_add(i as u64))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SequenceSample {
        hr_frames: hr_frames.to_vec(),
        lr_frames,
        params,
    })
}

struct Blob {
    cy: f64,
    cx: f64,
    /// Inverse covariance entries of the rotated anisotropic Gaussian.
    a: f64,
    b: f64,
    c: f64,
    amplitude: f64,
}

/// Renders `n_sequences` smooth thermal-like sequences of `frames_per_seq`
/// `[1, 1, size, size]` frames in `[0, 1]`.
///
/// Each sequence is a cool linear gradient with 3 to 6 warm anisotropic
/// Gaussian blobs that drift together with a per-sequence velocity of at
/// most 2 px/frame.
pub fn synth_thermal_corpus(n_sequences: usize, frames_per_seq: usize, size: usize, seed: u64) -> Result<Vec<Vec<Tensor<f32>>>> {
    if n_sequences == 0 || frames_per_seq == 0 || size == 0 {
        return Err(Error::InvalidConfig("corpus dimensions must all be >= 1".into()));
    }
    (0..n_sequences)
        .map(|s| synth_sequence(frames_per_seq, size, seed::derive(seed, s as u64)))
        .collect()
}

fn synth_sequence(frames: usize, size: usize, seed: u64) -> Result<Vec<Tensor<f32>>> {
    let mut rng = seed::rng(seed);
    let n = size as f64;
    let base = rng.gen_range(0.12..0.28);
    let tilt = rng.gen_range(0.0..0.12);
    let angle = rng.gen_range(0.0..core::f64::consts::TAU);
    let (gy, gx) = (libm::sin(angle), libm::cos(angle));

    let speed = rng.gen_range(0.0..2.0);
    let heading = rng.gen_range(0.0..core::f64::consts::TAU);
    let (vy, vx) = (speed * libm::sin(heading), speed * libm::cos(heading));

    let count = rng.gen_range(3..=6);
    let blobs: Vec<Blob> = (0..count)
        .map(|i| {
            // The first blob is a large head-like region; the rest are smaller
            // facial features of varying sharpness.
            let (lo, hi) = if i == 0 { (0.14, 0.24) } else { (0.02, 0.09) };
            let sy = rng.gen_range(lo..hi) * n;
            let sx = rng.gen_range(lo..hi) * n;
            let theta = rng.gen_range(0.0..core::f64::consts::PI);
            let (st, ct) = (libm::sin(theta), libm::cos(theta));
            let (iy, ix) = (1.0 / (sy * sy), 1.0 / (sx * sx));
            Blob {
                cy: rng.gen_range(0.3..0.7) * n,
                cx: rng.gen_range(0.3..0.7) * n,
                a: ct * ct * ix + st * st * iy,
                b: st * ct * (ix - iy),
                c: st * st * ix + ct * ct * iy,
                amplitude: if i == 0 {
                    rng.gen_range(0.35..0.55)
                } else {
                    rng.gen_range(0.1..0.35)
                },
            }
        })
        .collect();

    (0..frames)
        .map(|t| {
            let (oy, ox) = (vy * t as f64, vx * t as f64);
            Tensor::from_fn(&[1, 1, size, size], |i| {
                let (y, x) = ((i / size) as f64, (i % size) as f64);
                let ramp = ((y - n / 2.0) * gy + (x - n / 2.0) * gx) / n;
                let mut v = base + tilt * ramp;
                for blob in &blobs {
                    let dy = y - blob.cy - oy;
                    let dx = x - blob.cx - ox;
                    let q = blob.a * dx * dx + 2.0 * blob.b * dx * dy + blob.c * dy * dy;
                    v += blob.amplitude * libm::exp(-0.5 * q);
                }
                v.clamp(0.0, 1.0) as f32
            })
        })
        .collect()
}
