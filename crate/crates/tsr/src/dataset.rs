//! On-disk sequence corpora.
//!
//! ```text
//! root/index.txt            one sequence directory per line
//! root/<id>/frame_000.pgm   frames numbered contiguously from 000
//! root/lr_x<scale>/...      degraded mirror with the same layout
//! ```

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use tsr_core::degradation::{make_lr_sequence, DegradationParams};
use tsr_core::training::{id_hash, Sequence};
use tsr_core::{seed, Tensor};

use crate::pgm::{read_pgm, write_pgm, PgmError, PgmImage};

pub const INDEX_FILE: &str = "index.txt";

/// Stream id mixed into the seed for the train/validation shuffle.
const SPLIT_STREAM: u64 = 0x5350_4c49_54;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{0}")]
    Invalid(ValidationReport),
    #[error(transparent)]
    Pgm(#[from] PgmError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Core(#[from] tsr_core::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Issue {
    /// Sequence id, or `index.txt` for problems with the index itself.
    pub sequence: String,
    pub problem: String,
}

/// Every problem found while validating a corpus.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    fn flag(&mut self, sequence: &str, problem: impl Into<String>) {
        self.issues.push(Issue {
            sequence: sequence.to_string(),
            problem: problem.into(),
        });
    }

    /// Ids of the sequences with at least one issue.
    pub fn flagged(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = self.issues.iter().map(|i| i.sequence.as_str()).collect();
        ids.dedup();
        ids
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "dataset validation failed with {} issue(s):", self.issues.len())?;
        for issue in &self.issues {
            writeln!(f, "  {}: {}", issue.sequence, issue.problem)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SequenceEntry {
    pub id: String,
    pub dir: PathBuf,
    pub frames: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub sequences: Vec<SequenceEntry>,
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
}

impl DatasetIndex {
    pub fn ids(&self) -> Vec<String> {
        self.sequences.iter().map(|s| s.id.clone()).collect()
    }

    pub fn total_frames(&self) -> usize {
        self.sequences.iter().map(|s| s.frames).sum()
    }

    pub fn entry(&self, id: &str) -> Option<&SequenceEntry> {
        self.sequences.iter().find(|s| s.id == id)
    }

    /// Loads the listed sequences, in the order given.
    pub fn load(&self, ids: &[String]) -> Result<Vec<Sequence>, DatasetError> {
        ids.iter()
            .map(|id| {
                let entry = self.entry(id).ok_or_else(|| {
                    let mut report = ValidationReport::default();
                    report.flag(id, "not listed in index.txt");
                    DatasetError::Invalid(report)
                })?;
                load_sequence(entry)
            })
            .collect()
    }
}

pub fn frame_name(index: usize) -> String {
    format!("frame_{index:03}.pgm")
}

fn frame_index(file_name: &str) -> Option<usize> {
    let digits = file_name.strip_prefix("frame_")?.strip_suffix(".pgm")?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

pub fn load_sequence(entry: &SequenceEntry) -> Result<Sequence, DatasetError> {
    let frames = (0..entry.frames)
        .map(|i| Ok(read_pgm(&entry.dir.join(frame_name(i)))?.to_tensor()))
        .collect::<Result<Vec<_>, DatasetError>>()?;
    Ok(Sequence {
        id: entry.id.clone(),
        frames,
    })
}

/// Reads `frame_000.pgm, frame_001.pgm, ...` from `dir`, requiring a
/// contiguous run of frames sharing one size and maxval. Returns the frames
/// and their maxval.
pub fn read_frame_dir(dir: &Path) -> Result<(Vec<Tensor<f32>>, u16), DatasetError> {
    let id = dir.display().to_string();
    let mut report = ValidationReport::default();
    let listing = fs::read_dir(dir).map_err(io_err(dir))?;
    let mut indices: Vec<usize> = listing
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().to_str().and_then(frame_index))
        .collect();
    indices.sort_unstable();
    if indices.is_empty() {
        report.flag(&id, "no frame_NNN.pgm files");
        return Err(DatasetError::Invalid(report));
    }
    if indices.iter().enumerate().any(|(i, &f)| i != f) {
        let present: HashSet<usize> = indices.iter().copied().collect();
        let last = *indices.last().expect("non-empty");
        let missing: Vec<String> = (0..=last).filter(|i| !present.contains(i)).map(frame_name).collect();
        report.flag(&id, format!("missing {}", missing.join(", ")));
        return Err(DatasetError::Invalid(report));
    }
    let images = indices
        .iter()
        .map(|&i| read_pgm(&dir.join(frame_name(i))))
        .collect::<Result<Vec<_>, _>>()?;
    let first = &images[0];
    if let Some((i, _)) = images
        .iter()
        .enumerate()
        .find(|(_, img)| (img.width, img.height, img.maxval) != (first.width, first.height, first.maxval))
    {
        report.flag(&id, format!("{} differs in size or maxval from {}", frame_name(i), frame_name(0)));
        return Err(DatasetError::Invalid(report));
    }
    let maxval = first.maxval;
    Ok((images.iter().map(PgmImage::to_tensor).collect(), maxval))
}

/// Checks the whole corpus and returns its index, or every problem found.
pub fn ingest(root: &Path) -> Result<DatasetIndex, DatasetError> {
    let mut report = ValidationReport::default();
    let index_path = root.join(INDEX_FILE);
    let text = match fs::read_to_string(&index_path) {
        Ok(t) => t,
        Err(e) => {
            report.flag(INDEX_FILE, format!("cannot read {}: {e}", index_path.display()));
            return Err(DatasetError::Invalid(report));
        }
    };
    let mut seen = HashSet::new();
    let mut sequences = Vec::new();
    // (width, height, maxval) of the first readable frame and where it came from.
    let mut reference: Option<((usize, usize, u16), String)> = None;
    for line in text.lines() {
        let id = line.trim();
        if id.is_empty() {
            continue;
        }
        if !seen.insert(id.to_string()) {
            report.flag(id, "listed more than once in index.txt");
            continue;
        }
        let dir = root.join(id);
        let listing = match fs::read_dir(&dir) {
            Ok(l) => l,
            Err(_) => {
                report.flag(id, format!("directory {} is missing", dir.display()));
                continue;
            }
        };
        let mut indices: Vec<usize> = listing
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().to_str().and_then(frame_index))
            .collect();
        indices.sort_unstable();
        let Some(&last) = indices.last() else {
            report.flag(id, "sequence has no frames");
            continue;
        };
        let present: HashSet<usize> = indices.iter().copied().collect();
        let missing: Vec<String> = (0..=last).filter(|i| !present.contains(i)).map(frame_name).collect();
        if !missing.is_empty() {
            report.flag(id, format!("missing {}", missing.join(", ")));
        }
        let mut ok = missing.is_empty();
        for i in 0..=last {
            if !present.contains(&i) {
                continue;
            }
            let name = frame_name(i);
            match read_pgm(&dir.join(&name)) {
                Ok(img) => {
                    let dims = (img.width, img.height, img.maxval);
                    match &reference {
                        None => reference = Some((dims, format!("{id}/{name}"))),
                        Some((r, origin)) if *r != dims => {
                            report.flag(
                                id,
                                format!(
                                    "{name} is {}x{} maxval {} but {origin} is {}x{} maxval {}",
                                    dims.0, dims.1, dims.2, r.0, r.1, r.2
                                ),
                            );
                            ok = false;
                        }
                        Some(_) => {}
                    }
                }
                Err(e) => {
                    report.flag(id, format!("{name}: {e}"));
                    ok = false;
                }
            }
        }
        if ok {
            sequences.push(SequenceEntry {
                id: id.to_string(),
                dir,
                frames: last + 1,
            });
        }
    }
    if sequences.is_empty() && report.issues.is_empty() {
        report.flag(INDEX_FILE, "index lists no sequences");
    }
    if !report.issues.is_empty() {
        return Err(DatasetError::Invalid(report));
    }
    let ((width, height, maxval), _) = reference.expect("at least one frame was read");
    Ok(DatasetIndex {
        root: root.to_path_buf(),
        sequences,
        width,
        height,
        maxval,
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<String>,
    pub val: Vec<String>,
}

/// Seeded shuffle of `ids`; the first `round(train_ratio * n)` go to
/// training. Each half is returned sorted.
pub fn split_ids(ids: &[String], train_ratio: f64, seed: u64) -> Split {
    let mut shuffled = ids.to_vec();
    shuffled.sort();
    shuffled.shuffle(&mut seed::rng_for(seed, SPLIT_STREAM));
    let n_train = ((train_ratio * ids.len() as f64).round() as usize).min(ids.len());
    let mut val = shuffled.split_off(n_train);
    shuffled.sort();
    val.sort();
    Split { train: shuffled, val }
}

/// Writes frames as `<root>/<id>/frame_NNN.pgm` plus `index.txt`.
pub fn write_sequences(root: &Path, sequences: &[Sequence], maxval: u16) -> Result<(), DatasetError> {
    fs::create_dir_all(root).map_err(io_err(root))?;
    let mut index = String::new();
    for seq in sequences {
        let dir = root.join(&seq.id);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        for (i, frame) in seq.frames.iter().enumerate() {
            write_pgm(&PgmImage::from_tensor(frame, maxval)?, &dir.join(frame_name(i)))?;
        }
        index.push_str(&seq.id);
        index.push('\n');
    }
    let index_path = root.join(INDEX_FILE);
    fs::write(&index_path, index).map_err(io_err(&index_path))
}

/// Sequence ids used for generated corpora.
pub fn synthetic_id(i: usize) -> String {
    format!("seq_{i:04}")
}

pub fn name_sequences(corpus: Vec<Vec<Tensor<f32>>>) -> Vec<Sequence> {
    corpus
        .into_iter()
        .enumerate()
        .map(|(i, frames)| Sequence {
            id: synthetic_id(i),
            frames,
        })
        .collect()
}

/// Per-sequence degradation seed; also used by validation so that the LR
/// mirror on disk matches what evaluation sees.
pub fn sequence_degradation(params: &DegradationParams, id: &str) -> DegradationParams {
    DegradationParams {
        seed: seed::derive(params.seed, id_hash(id)),
        ..*params
    }
}

pub fn lr_dir(root: &Path, scale: usize) -> PathBuf {
    root.join(format!("lr_x{scale}"))
}

/// Degrades every sequence of `index` and writes the LR mirror. Returns the
/// mirror root.
pub fn write_lr_mirror(index: &DatasetIndex, params: &DegradationParams) -> Result<PathBuf, DatasetError> {
    let out = lr_dir(&index.root, params.scale);
    let mut lr = Vec::with_capacity(index.sequences.len());
    for entry in &index.sequences {
        let seq = load_sequence(entry)?;
        let sample = make_lr_sequence(&seq.frames, sequence_degradation(params, &seq.id))?;
        lr.push(Sequence {
            id: seq.id,
            frames: sample.lr_frames,
        });
    }
    write_sequences(&out, &lr, index.maxval)?;
    Ok(out)
}
