//! Command-line surface: training, encoding/decoding, hit statistics,
//! parameter accounting, gradient checking, and precision sweeps.
//!
//! Exit codes are stable: 0 success, 1 failed check, 2 config/usage error,
//! 3 data error, 4 non-finite loss, 5 bad file format, 6 shape mismatch.

mod config;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use keygrid::analysis::{histogram_csv, usage_csv, usage_report, usage_summary};
use keygrid::img::{read_image, write_image, ImageBuf};
use keygrid::snapshot::{read_keycode_file, write_keycode_file};
use keygrid::trainer::{
    collect_training_hits, curve_csv, end_to_end_gradient_check, precision_sweep, reconstruct,
    synthetic_dataset, tiny_config, train, Checkpoint, TrainConfig,
};
use keygrid::{Error, Real, Result, Wide};

use config::{config_pairs, parse_train_config};
use manifest::RunManifest;

#[derive(Parser)]
#[command(name = "keygrid", version, about = "Hash-grid image codec tools")]
struct Cli {
    /// Cap worker threads (env BRIGHT_THREADS is the fallback).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct DataSource {
    /// Directory of training images (ppm/png), lexicographic order.
    #[arg(long, value_name = "DIR", conflicts_with = "synthetic")]
    data: Option<PathBuf>,
    /// Use N generated images instead of a directory (default N=64).
    #[arg(long, value_name = "N", num_args = 0..=1, default_missing_value = "64")]
    synthetic: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoint + loss curve.
    Train {
        /// key=value config file; defaults apply for unset keys.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        source: DataSource,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's step count.
        #[arg(long)]
        steps: Option<usize>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Project an image to a key-code file.
    Encode {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Output key-code file (.bkey).
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode a key-code file back to an image.
    Decode {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        keys: PathBuf,
        /// Output image (.ppm or .png).
        #[arg(long)]
        out: PathBuf,
    },
    /// Table hit statistics over a dataset's query stream.
    Stats {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        source: DataSource,
        /// Seed for the stream's key perturbations.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Parameter accounting for a grid configuration.
    Params {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Optional output directory for params.csv + manifest.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of the end-to-end gradients.
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 200)]
        probes: usize,
        /// Working precision of the analytic side: 32 or 64.
        #[arg(long, default_value_t = 64)]
        bits: u32,
        /// Central-difference step.
        #[arg(long, default_value_t = 1e-5)]
        h: f64,
        /// Max relative error to pass (default 1e-5 for 64-bit, 1e-3 for 32).
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluation loss under increasing key perturbation amplitudes.
    Sweep {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        source: DataSource,
        /// Comma-separated amplitudes; default 0,1/(4·r_max),1/(2·r_max).
        #[arg(long)]
        amplitudes: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Data(_) | Error::Io(_) => 3,
        Error::NonFinite(_) => 4,
        Error::Format(_) => 5,
        Error::Shape(_) | Error::IndexOutOfRange(_) => 6,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = init_threads(cli.threads) {
        eprintln!("error: {e}");
        return ExitCode::from(exit_code(&e));
    }
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn init_threads(flag: Option<usize>) -> Result<()> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var("BRIGHT_THREADS") {
            Ok(v) => Some(
                v.parse::<usize>()
                    .map_err(|_| Error::Config(format!("BRIGHT_THREADS={v:?} is not a thread count")))?,
            ),
            Err(_) => None,
        },
    };
    if let Some(n) = n {
        if n == 0 {
            return Err(Error::Config("thread count must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn read_config(path: Option<&Path>, default: fn() -> TrainConfig) -> Result<TrainConfig> {
    match path {
        None => Ok(default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?;
            parse_train_config(&text, &p.display().to_string())
        }
    }
}

fn load_dataset(cfg: &TrainConfig, source: &DataSource, manifest: &mut RunManifest) -> Result<Vec<ImageBuf>> {
    match (&source.data, source.synthetic) {
        (Some(dir), None) => {
            let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    matches!(
                        p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
                        Some("ppm") | Some("png")
                    )
                })
                .collect();
            paths.sort();
            if paths.is_empty() {
                return Err(Error::Data(format!("no .ppm/.png images in {}", dir.display())));
            }
            manifest.field("input.data", dir.display());
            manifest.field("input.count", paths.len());
            paths.iter().map(|p| read_image(p)).collect()
        }
        (None, n) => {
            let n = n.unwrap_or(64);
            manifest.field("input.synthetic", n);
            Ok(synthetic_dataset(n, cfg.img_h, cfg.img_w, cfg.img_c, cfg.seed))
        }
        (Some(_), Some(_)) => unreachable!("clap rejects --data with --synthetic"),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn run(cmd: Command) -> Result<ExitCode> {
    match cmd {
        Command::Train { config, source, seed, steps, out } => {
            let mut cfg = read_config(config.as_deref(), TrainConfig::desk_default)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(s) = steps {
                cfg.steps = s;
            }
            let mut manifest = RunManifest::new("train");
            manifest.field("seed", cfg.seed);
            let dataset = load_dataset(&cfg, &source, &mut manifest)?;
            ensure_dir(&out)?;
            let outcome = train::<Real>(&cfg, &dataset)?;

            let ckpt_path = out.join("checkpoint.brht");
            outcome.checkpoint.save_file(&ckpt_path)?;
            let curve_path = out.join("loss.csv");
            std::fs::write(&curve_path, curve_csv(&outcome.curve))?;
            let last = outcome.curve.last().expect("steps >= 1 after validate");
            println!("step {} loss {:.6} psnr {:.2}", last.step, last.loss, last.psnr);

            manifest.path_field("output.checkpoint", &ckpt_path);
            manifest.path_field("output.curve", &curve_path);
            manifest.config(&config_pairs(&cfg));
            manifest.write(&out)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Encode { checkpoint, image, out } => {
            let ck = Checkpoint::<Real>::load_file(&checkpoint)?;
            let img = read_image(&image)?;
            let keys = ck.model.keys(&img)?;
            std::fs::write(&out, write_keycode_file(&keys))?;
            // Round-trip quality of this very code, for the log.
            let (_, psnr) = reconstruct(&ck.model, &img)?;
            eprintln!("psnr {psnr:.2}");

            let mut manifest = RunManifest::new("encode");
            manifest.path_field("input.checkpoint", &checkpoint);
            manifest.path_field("input.image", &image);
            manifest.path_field("output.keys", &out);
            manifest.write(out.parent().unwrap_or(Path::new(".")))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Decode { checkpoint, keys, out } => {
            let ck = Checkpoint::<Real>::load_file(&checkpoint)?;
            let grid = read_keycode_file::<Real>(&std::fs::read(&keys)?)?;
            let raw = ck.model.decode_keys(&grid, None)?;
            let cfg = &ck.model.cfg;
            let img = ImageBuf::new(
                cfg.img_h,
                cfg.img_w,
                cfg.img_c,
                raw.iter().map(|&v| v.clamp(0.0, 1.0)).collect(),
            )?;
            write_image(&out, &img)?;

            let mut manifest = RunManifest::new("decode");
            manifest.path_field("input.checkpoint", &checkpoint);
            manifest.path_field("input.keys", &keys);
            manifest.path_field("output.image", &out);
            manifest.write(out.parent().unwrap_or(Path::new(".")))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Stats { checkpoint, source, seed, out } => {
            let ck = Checkpoint::<Real>::load_file(&checkpoint)?;
            let mut manifest = RunManifest::new("stats");
            let dataset = load_dataset(&ck.model.cfg, &source, &mut manifest)?;
            let seed = seed.unwrap_or(ck.model.cfg.seed);
            ensure_dir(&out)?;
            let stats = collect_training_hits(&ck.model, &dataset, seed)?;
            for (g, s) in stats.iter().enumerate() {
                println!("group {g}:\n{}", usage_summary(s));
                let usage_path = out.join(format!("usage_group{g}.csv"));
                std::fs::write(&usage_path, usage_csv(&usage_report(s)))?;
                manifest.path_field(&format!("output.usage{g}"), &usage_path);
                for lvl in 0..s.levels.len() {
                    let hist_path = out.join(format!("histogram_group{g}_level{lvl}.csv"));
                    std::fs::write(&hist_path, histogram_csv(s, lvl)?)?;
                    manifest.path_field(&format!("output.histogram{g}_{lvl}"), &hist_path);
                }
            }
            manifest.path_field("input.checkpoint", &checkpoint);
            manifest.field("seed", seed);
            manifest.write(&out)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Params { config, out } => {
            let cfg = read_config(config.as_deref(), TrainConfig::desk_default)?;
            let pc = keygrid::grid::param_count(&cfg.grid)?;
            let mut csv = String::from("level,resolution,entries,direct\n");
            for (lvl, lp) in pc.per_level.iter().enumerate() {
                csv.push_str(&format!("{lvl},{},{},{}\n", lp.resolution, lp.entry_count, lp.direct));
            }
            print!("{csv}");
            println!("table_params={}", pc.table_params);
            println!("mlp_params={}", pc.mlp_params);
            println!("total={}", pc.total);
            if let Some(out) = out {
                ensure_dir(&out)?;
                let path = out.join("params.csv");
                std::fs::write(&path, &csv)?;
                let mut manifest = RunManifest::new("params");
                manifest.field("table_params", pc.table_params);
                manifest.field("mlp_params", pc.mlp_params);
                manifest.field("total", pc.total);
                manifest.path_field("output.params", &path);
                manifest.config(&config_pairs(&cfg));
                manifest.write(&out)?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Gradcheck { config, probes, bits, h, tol, seed, out } => {
            let cfg = read_config(config.as_deref(), tiny_config)?;
            let seed = seed.unwrap_or(cfg.seed);
            let tol = match (bits, tol) {
                (64, t) => t.unwrap_or(1e-5),
                (32, t) => t.unwrap_or(1e-3),
                _ => return Err(Error::Config(format!("--bits must be 32 or 64, got {bits}"))),
            };
            let report = if bits == 64 {
                end_to_end_gradient_check::<Wide>(&cfg, probes, h, tol, seed)?
            } else {
                end_to_end_gradient_check::<Real>(&cfg, probes, h, tol, seed)?
            };
            println!(
                "{} max_rel_err {:.3e} ({} probes, {bits}-bit, h {h:.1e}, tol {tol:.1e})",
                if report.passed { "PASS" } else { "FAIL" },
                report.max_rel_err,
                report.probes.len()
            );
            if let Some(out) = out {
                ensure_dir(&out)?;
                let mut csv = String::from("group,index,analytic,numeric,rel_err\n");
                for p in &report.probes {
                    csv.push_str(&format!(
                        "{:?},{},{:.9e},{:.9e},{:.3e}\n",
                        p.group, p.index, p.analytic, p.numeric, p.rel_err
                    ));
                }
                let path = out.join("gradcheck.csv");
                std::fs::write(&path, csv)?;
                let mut manifest = RunManifest::new("gradcheck");
                manifest.field("bits", bits);
                manifest.field("probes", probes);
                manifest.field("h", h);
                manifest.field("tol", tol);
                manifest.field("seed", seed);
                manifest.field("max_rel_err", report.max_rel_err);
                manifest.field("passed", report.passed);
                manifest.path_field("output.report", &path);
                manifest.config(&config_pairs(&cfg));
                manifest.write(&out)?;
            }
            Ok(if report.passed { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Command::Sweep { checkpoint, source, amplitudes, seed, out } => {
            let ck = Checkpoint::<Real>::load_file(&checkpoint)?;
            let mut manifest = RunManifest::new("sweep");
            let dataset = load_dataset(&ck.model.cfg, &source, &mut manifest)?;
            let seed = seed.unwrap_or(ck.model.cfg.seed);
            let amps: Vec<f64> = match &amplitudes {
                Some(list) => list
                    .split(',')
                    .map(|t| {
                        t.trim()
                            .parse::<f64>()
                            .map_err(|_| Error::Config(format!("bad amplitude {t:?}")))
                    })
                    .collect::<Result<_>>()?,
                None => {
                    let r_max = ck.model.cfg.grid.r_max as f64;
                    vec![0.0, 1.0 / (4.0 * r_max), 1.0 / (2.0 * r_max)]
                }
            };
            ensure_dir(&out)?;
            let rows = precision_sweep(&ck.model, &dataset, &amps, seed)?;
            let mut csv = String::from("amplitude,loss\n");
            for (a, l) in &rows {
                csv.push_str(&format!("{a:.9},{l:.9}\n"));
            }
            print!("{csv}");
            let path = out.join("sweep.csv");
            std::fs::write(&path, csv)?;
            manifest.path_field("input.checkpoint", &checkpoint);
            manifest.field("seed", seed);
            manifest.field("amplitudes", amps.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(","));
            manifest.path_field("output.sweep", &path);
            manifest.write(&out)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}
