//! Binary PGM (P5) with 8- or 16-bit samples.
//!
//! 16-bit samples are big-endian, most significant byte first. Writing always
//! emits the canonical header `P5 {width} {height} {maxval}\n`.

use std::fs;
use std::io;
use std::path::Path;

use tsr_core::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum PgmError {
    #[error("not a binary PGM file (magic must be P5)")]
    BadMagic,
    #[error("unsupported maxval {0} (expected 255 or 65535)")]
    UnsupportedMaxval(u64),
    #[error("truncated payload: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("malformed PGM: {0}")]
    Malformed(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PgmImage {
    pub width: usize,
    pub height: usize,
    /// 255 or 65535.
    pub maxval: u16,
    /// Row-major samples, each `<= maxval`.
    pub samples: Vec<u16>,
}

impl PgmImage {
    pub fn new(width: usize, height: usize, maxval: u16, samples: Vec<u16>) -> Result<Self, PgmError> {
        if maxval != 255 && maxval != 65535 {
            return Err(PgmError::UnsupportedMaxval(maxval as u64));
        }
        if width == 0 || height == 0 {
            return Err(PgmError::Malformed(format!("empty image {width}x{height}")));
        }
        if samples.len() != width * height {
            return Err(PgmError::Malformed(format!(
                "{} samples for a {width}x{height} image",
                samples.len()
            )));
        }
        if let Some(s) = samples.iter().find(|&&s| s > maxval) {
            return Err(PgmError::Malformed(format!("sample {s} exceeds maxval {maxval}")));
        }
        Ok(PgmImage {
            width,
            height,
            maxval,
            samples,
        })
    }

    pub fn bytes_per_sample(&self) -> usize {
        if self.maxval > 255 {
            2
        } else {
            1
        }
    }

    /// `[1, 1, height, width]` tensor scaled to `[0, 1]`.
    pub fn to_tensor(&self) -> Tensor<f32> {
        let scale = 1.0 / self.maxval as f32;
        Tensor::new(
            &[1, 1, self.height, self.width],
            self.samples.iter().map(|&s| s as f32 * scale).collect(),
        )
        .expect("dimensions checked on construction")
    }

    /// Quantizes a `[1, 1, H, W]` tensor, clamping to `[0, 1]` first.
    pub fn from_tensor(t: &Tensor<f32>, maxval: u16) -> Result<Self, PgmError> {
        let [b, c, h, w] = t
            .dims4("pgm")
            .map_err(|e| PgmError::Malformed(e.to_string()))?;
        if b != 1 || c != 1 {
            return Err(PgmError::Malformed(format!("expected one grayscale plane, got shape {:?}", t.shape())));
        }
        let m = maxval as f32;
        let samples = t
            .data()
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * m).round() as u16)
            .collect();
        PgmImage::new(w, h, maxval, samples)
    }

    pub fn encode(&self) -> Vec<u8> {
        let header = format!("P5 {} {} {}\n", self.width, self.height, self.maxval);
        let mut out = Vec::with_capacity(header.len() + self.samples.len() * self.bytes_per_sample());
        out.extend_from_slice(header.as_bytes());
        if self.bytes_per_sample() == 2 {
            for s in &self.samples {
                out.extend_from_slice(&s.to_be_bytes());
            }
        } else {
            out.extend(self.samples.iter().map(|&s| s as u8));
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, PgmError> {
        if bytes.len() < 2 || &bytes[..2] != b"P5" {
            return Err(PgmError::BadMagic);
        }
        let mut pos = 2;
        let mut fields = [0u64; 3];
        for (i, field) in fields.iter_mut().enumerate() {
            skip_whitespace_and_comments(bytes, &mut pos);
            let start = pos;
            while pos < bytes.len() && bytes[pos].is_ascii_digit() {
                pos += 1;
            }
            if start == pos {
                return Err(PgmError::Malformed(format!(
                    "expected {} at byte {start}",
                    ["width", "height", "maxval"][i]
                )));
            }
            let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
            *field = text
                .parse()
                .map_err(|_| PgmError::Malformed(format!("header number {text} out of range")))?;
        }
        if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
            return Err(PgmError::Malformed("missing whitespace after maxval".into()));
        }
        pos += 1;
        let [width, height, maxval] = fields;
        if maxval != 255 && maxval != 65535 {
            return Err(PgmError::UnsupportedMaxval(maxval));
        }
        let (width, height) = (width as usize, height as usize);
        let bps = if maxval > 255 { 2 } else { 1 };
        let expected = width
            .checked_mul(height)
            .and_then(|n| n.checked_mul(bps))
            .ok_or_else(|| PgmError::Malformed("image dimensions overflow".into()))?;
        let payload = &bytes[pos..];
        if payload.len() < expected {
            return Err(PgmError::Truncated {
                expected,
                actual: payload.len(),
            });
        }
        if payload.len() > expected {
            return Err(PgmError::Malformed(format!(
                "{} trailing bytes after the raster",
                payload.len() - expected
            )));
        }
        let samples = if bps == 2 {
            payload
                .chunks_exact(2)
                .map(|b| u16::from_be_bytes([b[0], b[1]]))
                .collect()
        } else {
            payload.iter().map(|&b| b as u16).collect()
        };
        PgmImage::new(width, height, maxval as u16, samples)
    }
}

fn skip_whitespace_and_comments(bytes: &[u8], pos: &mut usize) {
    while *pos < bytes.len() {
        match bytes[*pos] {
            b'#' => {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
            }
            b if b.is_ascii_whitespace() => *pos += 1,
            _ => break,
        }
    }
}

pub fn read_pgm(path: &Path) -> Result<PgmImage, PgmError> {
    let bytes = fs::read(path).map_err(|source| PgmError::Io {
        path: path.display().to_string(),
        source,
    })?;
    PgmImage::decode(&bytes)
}

pub fn write_pgm(image: &PgmImage, path: &Path) -> Result<(), PgmError> {
    fs::write(path, image.encode()).map_err(|source| PgmError::Io {
        path: path.display().to_string(),
        source,
    })
}
