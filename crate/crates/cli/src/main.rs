use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use headsplat::eval::{evaluate, Protocol};
use headsplat::raster::CameraRecord;
use headsplat::synth::{Dataset, SceneSpec};
use headsplat::trainer::{Ablation, Avatar, TrainConfig};
use headsplat::{Camera, Error, HeadParams};
use serde::de::DeserializeOwned;

#[derive(Parser)]
#[command(
    name = "headsplat",
    version,
    about = "Train, render and evaluate Gaussian head avatars"
)]
struct Cli {
    /// Overrides the seed of the dataset spec or training config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-view dataset.
    GenData {
        /// Scene spec JSON; missing fields take their defaults.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit an avatar to a dataset and write a checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Training config JSON; missing fields take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        ablation: Option<Ablation>,
        #[arg(long)]
        iterations: Option<usize>,
        /// Per-iteration loss log; defaults to the checkpoint path with a .csv extension.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Render one timestamp through a dataset camera or a camera file.
    Render {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        t: u32,
        #[arg(long, conflicts_with = "camera")]
        view: Option<usize>,
        /// Single camera record JSON for a novel viewpoint.
        #[arg(long)]
        camera: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Drive the avatar with a parameter sequence.
    Reenact {
        #[arg(long)]
        ckpt: PathBuf,
        /// JSON list of head parameters, one per output frame.
        #[arg(long)]
        driving: PathBuf,
        /// JSON list of camera records.
        #[arg(long)]
        cams: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score renders against a dataset under one protocol.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        protocol: Protocol,
        /// Report JSON; a CSV table is written next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Print per-timestamp bank means and inter-view variance.
    InspectBank {
        #[arg(long)]
        ckpt: PathBuf,
    },
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    Ok(value)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn load_avatar(path: &Path) -> Result<Avatar> {
    Avatar::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { spec, out } => {
            let mut spec: SceneSpec = match spec {
                Some(p) => read_json(&p)?,
                None => SceneSpec::default(),
            };
            if let Some(seed) = cli.seed {
                spec.seed = seed;
            }
            let data = Dataset::generate(&spec)?;
            data.write(&out)?;
            write_file(
                &out.join("spec.json"),
                &serde_json::to_string_pretty(&spec)?,
            )?;
            println!(
                "wrote {} timestamps x {} views to {}",
                data.timestamps(),
                data.cameras.len(),
                out.display()
            );
        }
        Command::Train {
            data,
            config,
            out,
            ablation,
            iterations,
            log: log_path,
        } => {
            let mut cfg: TrainConfig = match config {
                Some(p) => read_json(&p)?,
                None => TrainConfig::default(),
            };
            if let Some(a) = ablation {
                cfg = cfg.with_ablation(a);
            }
            if let Some(n) = iterations {
                cfg.iterations = n;
            }
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            cfg.validate()?;
            let data = Dataset::read(&data)?;
            let mut avatar = Avatar::new(&data, cfg)?;
            let log = avatar.train(&data)?;
            avatar.save(&out)?;
            let log_path = log_path.unwrap_or_else(|| out.with_extension("csv"));
            write_file(&log_path, &log.to_csv())?;
            let last = log.rows.last().map(|r| r.3.total).unwrap_or(f64::NAN);
            println!(
                "trained {} iterations, final loss {last:.6}; checkpoint {}",
                avatar.iteration,
                out.display()
            );
        }
        Command::Render {
            ckpt,
            t,
            view,
            camera,
            out,
        } => {
            let avatar = load_avatar(&ckpt)?;
            let img = match (view, camera) {
                (Some(v), None) => avatar.render_view(t, v)?,
                (None, Some(p)) => {
                    let rec: CameraRecord = read_json(&p)?;
                    avatar.render_novel_view(t, &Camera::from_record(&rec)?)?
                }
                _ => {
                    return Err(
                        Error::invalid("render", "pass exactly one of --view or --camera").into(),
                    )
                }
            };
            img.write_png(&out)?;
            println!("wrote {}", out.display());
        }
        Command::Reenact {
            ckpt,
            driving,
            cams,
            out,
        } => {
            let avatar = load_avatar(&ckpt)?;
            let driving: Vec<HeadParams> = read_json(&driving)?;
            let recs: Vec<CameraRecord> = read_json(&cams)?;
            let cams = recs
                .iter()
                .map(Camera::from_record)
                .collect::<Result<Vec<_>, _>>()?;
            let frames = avatar.reenact(&driving, &cams, None)?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            for (i, views) in frames.iter().enumerate() {
                for (j, img) in views.iter().enumerate() {
                    img.write_png(&out.join(format!("frame{i:04}_cam{j:02}.png")))?;
                }
            }
            println!(
                "wrote {} frames x {} cameras to {}",
                frames.len(),
                cams.len(),
                out.display()
            );
        }
        Command::Eval {
            ckpt,
            data,
            protocol,
            out,
        } => {
            let avatar = load_avatar(&ckpt)?;
            let data = Dataset::read(&data)?;
            let report = evaluate(&avatar, &data, protocol)?;
            write_file(&out, &report.to_json())?;
            write_file(&out.with_extension("csv"), &report.to_csv())?;
            println!(
                "{protocol}: {} frames, PSNR {:.3} dB, SSIM {:.4}, LPIPS {}",
                report.frame_count, report.mean_psnr, report.mean_ssim, report.lpips
            );
        }
        Command::InspectBank { ckpt } => {
            let avatar = load_avatar(&ckpt)?;
            let Some(bank) = &avatar.bank else {
                println!("no expression bank in this checkpoint");
                return Ok(());
            };
            let header: Vec<String> = (0..bank.n_expr).map(|k| format!("mean_{k}")).collect();
            println!("t,inter_view_variance,{}", header.join(","));
            for &t in bank.entries.keys() {
                let mean: Vec<String> = bank.mean(t).iter().map(|v| v.to_string()).collect();
                println!("{t},{},{}", bank.inter_view_variance(t), mean.join(","));
            }
        }
    }
    Ok(())
}

/// 2 for validation failures anywhere in the chain, 1 otherwise.
fn exit_code(err: &anyhow::Error) -> u8 {
    let validation = err
        .chain()
        .any(|e| e.downcast_ref::<Error>().is_some_and(Error::is_validation));
    if validation {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
