//! The `tsr` command line.
//!
//! Settings come from the `--config` file (or built-in defaults); the global
//! flags and the per-command flags override them.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use tsr_core::complexity;
use tsr_core::degradation::synth_thermal_corpus;

use crate::checkpoint::{self, Checkpoint};
use crate::config::{RunConfig, KEYS};
use crate::dataset::{self, ingest, split_ids, write_lr_mirror, write_sequences};
use crate::run;
use crate::Error;

fn keys_help() -> String {
    let mut out = String::from("Config file keys (`key = value`, one per line, `#` comments):\n");
    let defaults = RunConfig::default().entries();
    for ((key, doc), (_, default)) in KEYS.iter().zip(defaults) {
        out.push_str(&format!("  {key:<18} {doc} [default: {default}]\n"));
    }
    out.push_str("\nExit codes: 0 success, 1 data or validation failure, 2 usage error.");
    out
}

#[derive(Debug, Parser)]
#[command(name = "tsr", version, about = "Recurrent thermal super-resolution", after_long_help = keys_help())]
struct Cli {
    /// Flat key = value configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Upscaling factor, 2 or 4.
    #[arg(long, global = true)]
    scale: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Checkpoint to load (train resumes from it).
    #[arg(long, global = true, value_name = "FILE")]
    checkpoint: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SplitChoice {
    Train,
    Val,
    All,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic thermal-like corpus to the output directory.
    MakeSynthetic {
        #[arg(long)]
        sequences: Option<usize>,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        size: Option<usize>,
        /// 8 or 16.
        #[arg(long)]
        bit_depth: Option<u32>,
    },
    /// Validate a corpus and write its degraded mirror under lr_x<scale>/.
    Degrade {
        /// Corpus root holding index.txt.
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
    },
    /// Train on the corpus, logging to train_log.csv and writing checkpoints.
    Train {
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        checkpoint_every: Option<usize>,
    },
    /// Score a checkpoint and the bicubic baseline; writes metrics.csv and summary.csv.
    Eval {
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = SplitChoice::Val)]
        split: SplitChoice,
    },
    /// Super-resolve a directory of LR frames with a checkpoint.
    Infer {
        /// Directory of frame_NNN.pgm LR frames.
        #[arg(long, value_name = "DIR")]
        input: PathBuf,
        /// Matching HR frames, added to the comparison images.
        #[arg(long, value_name = "DIR")]
        hr: Option<PathBuf>,
    },
    /// Print parameter, MAC and FLOP counts.
    Complexity {
        /// LR input height.
        #[arg(long)]
        height: Option<usize>,
        /// LR input width.
        #[arg(long)]
        width: Option<usize>,
        /// Also write the per-layer breakdown as CSV.
        #[arg(long, value_name = "FILE")]
        csv: Option<PathBuf>,
    },
    /// Print the effective configuration.
    ShowConfig,
}

fn effective_config(cli: &Cli) -> Result<RunConfig, Error> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.train.seed = seed;
    }
    if let Some(scale) = cli.scale {
        config.network.scale = scale;
    }
    if let Some(out) = &cli.out {
        config.out_dir = out.clone();
    }
    if let Some(ck) = &cli.checkpoint {
        config.checkpoint = Some(ck.clone());
    }
    match &cli.command {
        Command::MakeSynthetic {
            sequences,
            frames,
            size,
            bit_depth,
        } => {
            config.synth_sequences = sequences.unwrap_or(config.synth_sequences);
            config.synth_frames = frames.unwrap_or(config.synth_frames);
            config.synth_size = size.unwrap_or(config.synth_size);
            config.bit_depth = bit_depth.unwrap_or(config.bit_depth);
        }
        Command::Degrade { data } | Command::Eval { data, .. } => {
            if data.is_some() {
                config.data_dir = data.clone();
            }
        }
        Command::Train {
            data,
            epochs,
            checkpoint_every,
        } => {
            if data.is_some() {
                config.data_dir = data.clone();
            }
            config.train.epochs = epochs.unwrap_or(config.train.epochs);
            config.checkpoint_every = checkpoint_every.unwrap_or(config.checkpoint_every);
        }
        Command::Complexity { height, width, .. } => {
            config.complexity_height = height.unwrap_or(config.complexity_height);
            config.complexity_width = width.unwrap_or(config.complexity_width);
        }
        Command::Infer { .. } | Command::ShowConfig => {}
    }
    config.validate()?;
    Ok(config)
}

fn data_dir(config: &RunConfig) -> Result<&Path, Error> {
    config
        .data_dir
        .as_deref()
        .ok_or_else(|| Error::Usage("no dataset given: pass --data or set data_dir in the config".into()))
}

fn checkpoint_path(config: &RunConfig) -> Result<&Path, Error> {
    config
        .checkpoint
        .as_deref()
        .ok_or_else(|| Error::Usage("no checkpoint given: pass --checkpoint or set checkpoint in the config".into()))
}

/// Loads the checkpoint for eval/infer. Without an explicit network
/// configuration the checkpoint's own is adopted.
fn load_for_inference(cli: &Cli, config: &mut RunConfig) -> Result<Checkpoint, Error> {
    let path = checkpoint_path(config)?.to_path_buf();
    let ck = if cli.config.is_some() || cli.scale.is_some() {
        checkpoint::load_matching(&path, &config.network)?
    } else {
        checkpoint::load(&path)?
    };
    config.network = *ck.params.config();
    Ok(ck)
}

fn mkdir(path: &Path) -> Result<(), Error> {
    fs::create_dir_all(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn execute(cli: &Cli, out: &mut dyn Write) -> Result<(), Error> {
    let mut config = effective_config(cli)?;
    let say = |out: &mut dyn Write, text: String| {
        let _ = writeln!(out, "{text}");
    };
    match &cli.command {
        Command::ShowConfig => {
            let _ = write!(out, "{}", config.to_text());
        }
        Command::MakeSynthetic { .. } => {
            let corpus = synth_thermal_corpus(
                config.synth_sequences,
                config.synth_frames,
                config.synth_size,
                config.train.seed,
            )?;
            write_sequences(&config.out_dir, &dataset::name_sequences(corpus), config.maxval())?;
            say(
                out,
                format!(
                    "wrote {} sequences of {} frames ({}x{}, {}-bit) to {}",
                    config.synth_sequences,
                    config.synth_frames,
                    config.synth_size,
                    config.synth_size,
                    config.bit_depth,
                    config.out_dir.display()
                ),
            );
        }
        Command::Degrade { .. } => {
            let index = ingest(data_dir(&config)?)?;
            let dir = write_lr_mirror(&index, &config.degradation())?;
            say(
                out,
                format!("degraded {} sequences into {}", index.sequences.len(), dir.display()),
            );
        }
        Command::Train { .. } => {
            let index = ingest(data_dir(&config)?)?;
            let split = split_ids(&index.ids(), config.train_ratio, config.train.seed);
            say(
                out,
                format!(
                    "{} sequences, {} frames: {} train / {} validation",
                    index.sequences.len(),
                    index.total_frames(),
                    split.train.len(),
                    split.val.len()
                ),
            );
            let train_set = index.load(&split.train)?;
            let val_set = index.load(&split.val)?;
            let resume = match &config.checkpoint {
                Some(path) => Some(checkpoint::load(path)?),
                None => None,
            };
            mkdir(&config.out_dir)?;
            config.save(&config.out_dir.join("config.txt"))?;
            let outcome = run::train(&config, &train_set, &val_set, &config.out_dir, resume, |row| {
                say(
                    out,
                    format!(
                        "epoch {:>3}  loss {:.5}  val loss {:.5}  val PSNR {:.3} dB (bicubic {:.3})  lr {:e}",
                        row.epoch, row.train_loss, row.val_loss, row.val_psnr_sr, row.val_psnr_bicubic, row.lr
                    ),
                )
            })?;
            say(
                out,
                format!(
                    "best validation PSNR {:.3} dB; log and checkpoints in {}",
                    outcome.best_val_psnr,
                    config.out_dir.display()
                ),
            );
        }
        Command::Eval { split, .. } => {
            let ck = load_for_inference(cli, &mut config)?;
            let index = ingest(data_dir(&config)?)?;
            let parts = split_ids(&index.ids(), config.train_ratio, config.train.seed);
            let ids = match split {
                SplitChoice::Train => parts.train,
                SplitChoice::Val => parts.val,
                SplitChoice::All => index.ids(),
            };
            if ids.is_empty() {
                return Err(Error::Data("the selected split is empty".into()));
            }
            let sequences = index.load(&ids)?;
            let eval = run::evaluate_to_files(&ck.params, &sequences, &config, &config.out_dir)?;
            let _ = write!(out, "{}", run::summary_table(&eval));
        }
        Command::Infer { input, hr } => {
            let ck = load_for_inference(cli, &mut config)?;
            let (lr_frames, maxval) = dataset::read_frame_dir(input)?;
            let hr_frames = match hr {
                Some(dir) => Some(dataset::read_frame_dir(dir)?.0),
                None => None,
            };
            let outcome = run::infer(&ck.params, &lr_frames, hr_frames.as_deref(), &config.out_dir, maxval)?;
            say(
                out,
                format!(
                    "wrote {} SR frames to {}",
                    outcome.sr_frames.len(),
                    config.out_dir.join("sr").display()
                ),
            );
            if let Some(scores) = outcome.psnr {
                for (i, p) in scores.iter().enumerate() {
                    say(out, format!("frame {i:03}  PSNR {p:.3} dB"));
                }
            }
        }
        Command::Complexity { csv, .. } => {
            let report = complexity::report(&config.network, config.complexity_height, config.complexity_width)?;
            let _ = write!(out, "{}", report.to_table());
            if let Some(path) = csv {
                fs::write(path, report.to_csv()).map_err(|source| Error::Io {
                    path: path.display().to_string(),
                    source,
                })?;
            }
        }
    }
    Ok(())
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Normal output goes to `out`, diagnostics to stderr.
pub fn run_with_args<I, T>(args: I, out: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code as u8;
        }
    };
    match execute(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
