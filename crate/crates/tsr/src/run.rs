//! Training, evaluation and inference drivers that read and write files.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use tsr_core::metrics::{bicubic_resize, psnr, MetricReport, ResizeDirection};
use tsr_core::network::{init_network, unroll, Parameters};
use tsr_core::training::{evaluate, train_epoch, Evaluation, OptimizerState, Sequence, TrainLogRow};
use tsr_core::Tensor;

use crate::checkpoint::{self, Checkpoint, TrainingState};
use crate::config::RunConfig;
use crate::dataset::frame_name;
use crate::pgm::{write_pgm, PgmImage};
use crate::Error;

pub const LOG_FILE: &str = "train_log.csv";
pub const LOG_HEADER: &str = "epoch,train_loss,val_loss,val_psnr_sr,val_psnr_bicubic,lr,wall_time_s";
pub const BEST_CHECKPOINT: &str = "best.tsr";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.csv";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Periodic checkpoint written after `epochs_done` completed epochs.
pub fn epoch_checkpoint_name(epochs_done: usize) -> String {
    format!("epoch_{epochs_done:03}.tsr")
}

pub fn format_log_row(r: &TrainLogRow) -> String {
    format!(
        "{},{},{},{},{},{},{}",
        r.epoch, r.train_loss, r.val_loss, r.val_psnr_sr, r.val_psnr_bicubic, r.lr, r.wall_time_s
    )
}

pub fn parse_log(text: &str) -> Result<Vec<TrainLogRow>, Error> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != LOG_HEADER {
        return Err(Error::Data(format!("unexpected training log header {}", header.join(","))));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let field = |i: usize| -> Result<f64, Error> {
            record[i]
                .parse()
                .map_err(|_| Error::Data(format!("bad number `{}` in training log", &record[i])))
        };
        rows.push(TrainLogRow {
            epoch: record[0]
                .parse()
                .map_err(|_| Error::Data(format!("bad epoch `{}` in training log", &record[0])))?,
            train_loss: field(1)?,
            val_loss: field(2)?,
            val_psnr_sr: field(3)?,
            val_psnr_bicubic: field(4)?,
            lr: field(5)?,
            wall_time_s: field(6)?,
        });
    }
    Ok(rows)
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: Parameters<f32>,
    /// Rows logged by this call (earlier rows of a resumed run excluded).
    pub rows: Vec<TrainLogRow>,
    pub best_val_psnr: f64,
    pub checkpoints: Vec<PathBuf>,
}

/// Runs epochs `start..config.train.epochs`, where `start` is 0 or the epoch
/// stored in `resume`.
///
/// After each epoch the log row is appended to `out_dir/train_log.csv`,
/// `best.tsr` is refreshed when validation PSNR improves and
/// `epoch_NNN.tsr` is written every `checkpoint_every` epochs. Every
/// checkpoint carries the optimizer state needed to resume.
pub fn train(
    config: &RunConfig,
    train_set: &[Sequence],
    val_set: &[Sequence],
    out_dir: &Path,
    resume: Option<Checkpoint>,
    mut on_epoch: impl FnMut(&TrainLogRow),
) -> Result<TrainOutcome, Error> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Data(format!(
            "training needs non-empty train and validation sets, got {} and {}",
            train_set.len(),
            val_set.len()
        )));
    }
    let (mut params, mut opt, start, mut best) = match resume {
        None => {
            let params = init_network(&config.network, config.train.seed)?;
            let opt = OptimizerState::new(&params)?;
            (params, opt, 0, f64::NEG_INFINITY)
        }
        Some(ck) => {
            let found = *ck.params.config();
            if found != config.network {
                return Err(checkpoint::CheckpointError::ConfigMismatch {
                    expected: config.network,
                    found,
                }
                .into());
            }
            let state = ck
                .training
                .ok_or_else(|| Error::Data("checkpoint has no optimizer state to resume from".into()))?;
            (ck.params, state.optimizer, state.next_epoch as usize, state.best_val_psnr)
        }
    };

    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let log_path = out_dir.join(LOG_FILE);
    let mut time_offset = 0.0;
    let mut log_text = format!("{LOG_HEADER}\n");
    if start > 0 {
        if let Ok(existing) = fs::read_to_string(&log_path) {
            for row in parse_log(&existing)?.into_iter().filter(|r| r.epoch < start) {
                time_offset = row.wall_time_s;
                log_text.push_str(&format_log_row(&row));
                log_text.push('\n');
            }
        }
    }
    fs::write(&log_path, &log_text).map_err(io_err(&log_path))?;
    let mut log = fs::OpenOptions::new()
        .append(true)
        .open(&log_path)
        .map_err(io_err(&log_path))?;

    let degradation = config.degradation();
    let clock = Instant::now();
    let mut rows = Vec::new();
    let mut checkpoints = Vec::new();
    for epoch in start..config.train.epochs {
        let stats = train_epoch(&mut params, &mut opt, train_set, &config.train, &degradation, epoch)?;
        let eval = evaluate(&params, val_set, &degradation)?;
        let row = TrainLogRow {
            epoch,
            train_loss: stats.mean_loss,
            val_loss: eval.mean_loss,
            val_psnr_sr: eval.sr.psnr.mean,
            val_psnr_bicubic: eval.bicubic.psnr.mean,
            lr: stats.lr,
            wall_time_s: time_offset + clock.elapsed().as_secs_f64(),
        };
        writeln!(log, "{}", format_log_row(&row)).map_err(io_err(&log_path))?;

        let improved = row.val_psnr_sr > best;
        if improved {
            best = row.val_psnr_sr;
        }
        let snapshot = || Checkpoint {
            params: params.clone(),
            training: Some(TrainingState {
                next_epoch: (epoch + 1) as u32,
                best_val_psnr: best,
                optimizer: opt.clone(),
            }),
        };
        if improved {
            let path = out_dir.join(BEST_CHECKPOINT);
            checkpoint::save(&snapshot(), &path)?;
            if !checkpoints.contains(&path) {
                checkpoints.push(path);
            }
        }
        if (epoch + 1) % config.checkpoint_every == 0 {
            let path = out_dir.join(epoch_checkpoint_name(epoch + 1));
            checkpoint::save(&snapshot(), &path)?;
            checkpoints.push(path);
        }
        on_epoch(&row);
        rows.push(row);
    }
    Ok(TrainOutcome {
        params,
        rows,
        best_val_psnr: best,
        checkpoints,
    })
}

fn write_report_rows(out: &mut csv::Writer<fs::File>, report: &MetricReport) -> Result<(), Error> {
    for item in &report.items {
        out.write_record([
            report.method.as_str(),
            item.id.as_str(),
            &item.psnr.to_string(),
            &item.ssim.to_string(),
        ])?;
    }
    Ok(())
}

/// Scores `dataset` and writes `metrics.csv` (one row per method and
/// sequence) and `summary.csv` (mean and population std per method).
pub fn evaluate_to_files(params: &Parameters<f32>, dataset: &[Sequence], config: &RunConfig, out_dir: &Path) -> Result<Evaluation, Error> {
    let eval = evaluate(params, dataset, &config.degradation())?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;

    let mut items = csv::Writer::from_path(out_dir.join(METRICS_FILE))?;
    items.write_record(["method", "sequence_id", "psnr", "ssim"])?;
    write_report_rows(&mut items, &eval.sr)?;
    write_report_rows(&mut items, &eval.bicubic)?;
    items.flush().map_err(io_err(out_dir))?;

    let mut summary = csv::Writer::from_path(out_dir.join(SUMMARY_FILE))?;
    summary.write_record(["method", "psnr_mean", "psnr_std", "ssim_mean", "ssim_std"])?;
    for r in [&eval.sr, &eval.bicubic] {
        summary.write_record([
            r.method.clone(),
            r.psnr.mean.to_string(),
            r.psnr.std.to_string(),
            r.ssim.mean.to_string(),
            r.ssim.std.to_string(),
        ])?;
    }
    summary.flush().map_err(io_err(out_dir))?;
    Ok(eval)
}

/// Table in the `method  PSNR mean ± std  SSIM mean ± std` shape.
pub fn summary_table(eval: &Evaluation) -> String {
    let mut out = format!("{:<10} {:>20} {:>18}\n", "method", "PSNR (dB)", "SSIM");
    for r in [&eval.bicubic, &eval.sr] {
        out.push_str(&format!(
            "{:<10} {:>11.3} ± {:<6.3} {:>9.3} ± {:<6.3}\n",
            r.method, r.psnr.mean, r.psnr.std, r.ssim.mean, r.ssim.std
        ));
    }
    out
}

/// Min-max normalizes one `[1, 1, H, W]` image to 8-bit samples.
fn normalized_panel(t: &Tensor<f32>) -> Vec<u8> {
    let (lo, hi) = t
        .data()
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    t.data()
        .iter()
        .map(|&v| {
            if range > 0.0 {
                ((v - lo) / range * 255.0).round() as u8
            } else {
                0
            }
        })
        .collect()
}

/// Panels of equal size placed left to right, each min-max normalized.
pub fn side_by_side(panels: &[&Tensor<f32>]) -> Result<PgmImage, Error> {
    let first = panels.first().ok_or_else(|| Error::Data("no panels to compose".into()))?;
    let [_, _, h, w] = first.dims4("side_by_side")?;
    if let Some(p) = panels.iter().find(|p| p.shape() != first.shape()) {
        return Err(Error::Data(format!(
            "comparison panels differ in shape: {:?} vs {:?}",
            p.shape(),
            first.shape()
        )));
    }
    let normalized: Vec<Vec<u8>> = panels.iter().map(|p| normalized_panel(p)).collect();
    let mut samples = Vec::with_capacity(h * w * panels.len());
    for y in 0..h {
        for panel in &normalized {
            samples.extend(panel[y * w..(y + 1) * w].iter().map(|&v| v as u16));
        }
    }
    Ok(PgmImage::new(w * panels.len(), h, 255, samples)?)
}

#[derive(Clone, Debug)]
pub struct InferOutcome {
    pub sr_frames: Vec<Tensor<f32>>,
    /// PSNR of each SR frame against its HR frame, when HR was supplied.
    pub psnr: Option<Vec<f64>>,
}

/// Super-resolves `lr_frames` in order, writing `sr/frame_NNN.pgm` and one
/// `comparison_NNN.pgm` per frame (bicubic | SR | HR when available).
pub fn infer(
    params: &Parameters<f32>,
    lr_frames: &[Tensor<f32>],
    hr_frames: Option<&[Tensor<f32>]>,
    out_dir: &Path,
    maxval: u16,
) -> Result<InferOutcome, Error> {
    let scale = params.config().scale;
    if let Some(hr) = hr_frames {
        if hr.len() != lr_frames.len() {
            return Err(Error::Data(format!("{} LR frames but {} HR frames", lr_frames.len(), hr.len())));
        }
    }
    let sr_frames: Vec<Tensor<f32>> = unroll(params, lr_frames)?
        .into_iter()
        .map(|t| t.map(|v| v.clamp(0.0, 1.0)))
        .collect();
    let sr_dir = out_dir.join("sr");
    fs::create_dir_all(&sr_dir).map_err(io_err(&sr_dir))?;
    let mut scores = hr_frames.map(|_| Vec::new());
    for (i, (sr, lr)) in sr_frames.iter().zip(lr_frames).enumerate() {
        write_pgm(&PgmImage::from_tensor(sr, maxval)?, &sr_dir.join(frame_name(i)))?;
        let bicubic = bicubic_resize(lr, scale, ResizeDirection::Up)?;
        let mut panels = vec![&bicubic, sr];
        if let Some(hr) = hr_frames {
            if hr[i].shape() != sr.shape() {
                return Err(Error::Data(format!(
                    "HR frame {i} has shape {:?}, SR output has {:?}",
                    hr[i].shape(),
                    sr.shape()
                )));
            }
            panels.push(&hr[i]);
            scores.as_mut().expect("hr given").push(psnr(sr, &hr[i], 1.0)?);
        }
        write_pgm(&side_by_side(&panels)?, &out_dir.join(format!("comparison_{i:03}.pgm")))?;
    }
    Ok(InferOutcome {
        sr_frames,
        psnr: scores,
    })
}
