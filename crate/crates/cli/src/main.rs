use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use protorefine::check::{full_suite, CheckScale};
use protorefine::geom::ply::{read_cloud, write_cloud, write_mesh, PlyFormat};
use protorefine::geom::icosphere;
use protorefine::ingest::{fuse, gen_synthetic, load_capture, save_capture, split_counts};
use protorefine::model::Checkpoint;
use protorefine::objective::{eval_metrics_with, DEFAULT_TAU_MM};
use protorefine::train::{train_from_config, TrainConfig};
use protorefine::{Error, Result};

/// Point cloud completion from partial RGB-D views.
#[derive(Parser, Debug)]
#[command(name = "protorefine", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train from a JSON config.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Complete a cloud or a subset of a capture's frames.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, conflicts_with = "capture", required_unless_present = "capture")]
        input: Option<PathBuf>,
        #[arg(long)]
        capture: Option<PathBuf>,
        /// Comma-separated frame indices; all frames when omitted.
        #[arg(long, value_delimiter = ',', requires = "capture")]
        frames: Option<Vec<usize>>,
        #[arg(long)]
        out_coarse: PathBuf,
        #[arg(long)]
        out_fine: PathBuf,
        #[arg(long)]
        out_mesh: PathBuf,
        /// Seed for resampling the input to the network's point count.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Format::Binary)]
        format: Format,
    },
    /// Chamfer distance and F-score of a prediction against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Threshold in millimeters.
        #[arg(long, default_value_t = DEFAULT_TAU_MM)]
        tau: f64,
        /// Average squared distances (mm²) for D_c.
        #[arg(long)]
        squared: bool,
    },
    /// Back-project and merge frames of a capture.
    Fuse {
        #[arg(long)]
        capture: PathBuf,
        #[arg(long, value_delimiter = ',')]
        frames: Option<Vec<usize>>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Binary)]
        format: Format,
    },
    /// Write an icosphere prototype mesh.
    MakeProto {
        #[arg(long)]
        level: u32,
        /// Meters.
        #[arg(long)]
        radius: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Binary)]
        format: Format,
    },
    /// Generate a synthetic dataset with train/ and val/ splits.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Finite-difference check of every operation and the full objective.
    Gradcheck {
        #[arg(long, value_enum, default_value_t = Scale::Tiny)]
        scale: Scale,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Ascii,
    Binary,
}

impl From<Format> for PlyFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Ascii => PlyFormat::Ascii,
            Format::Binary => PlyFormat::BinaryLittleEndian,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Scale {
    Tiny,
    Small,
}

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_numeric_error() {
        EXIT_NUMERIC
    } else if e.is_data_error() {
        EXIT_DATA
    } else if matches!(e, Error::Parameter(_)) {
        EXIT_USAGE
    } else {
        EXIT_DATA
    }
}

fn frames_or_all(frames: Option<Vec<usize>>, n: usize) -> Vec<usize> {
    frames.unwrap_or_else(|| (0..n).collect())
}

fn run(command: Command) -> Result<u8> {
    match command {
        Command::Train { config } => {
            let config = TrainConfig::load(&config)?;
            let out = train_from_config(&config)?;
            println!("log: {}", out.log.display());
            println!("final checkpoint: {}", out.final_checkpoint.display());
            match (&out.best, out.best_val_dc_mm) {
                (Some(dir), Some(dc)) => println!("best checkpoint: {} (val D_c {dc:.4} mm)", dir.display()),
                _ => println!("no validation split: best checkpoint not written"),
            }
        }
        Command::Infer {
            ckpt,
            input,
            capture,
            frames,
            out_coarse,
            out_fine,
            out_mesh,
            seed,
            format,
        } => {
            let net = Checkpoint::load(&ckpt)?.to_network()?;
            let cloud = match (input, capture) {
                (Some(path), _) => read_cloud(&path)?,
                (None, Some(dir)) => {
                    let cap = load_capture(&dir)?;
                    let n = cap.len();
                    fuse(&cap, &frames_or_all(frames, n))?
                }
                (None, None) => unreachable!("clap requires one input"),
            };
            if cloud.is_empty() {
                return Err(Error::EmptyInput("input cloud has no points".into()));
            }
            let pred = net.predict_resampled(&cloud, seed)?;
            let format = PlyFormat::from(format);
            write_cloud(&out_coarse, &pred.coarse, format)?;
            write_cloud(&out_fine, &pred.fine, format)?;
            write_mesh(&out_mesh, &pred.fine_mesh, format)?;
            println!("input: {} points", cloud.len());
            println!("coarse: {} points", pred.coarse.len());
            println!("fine: {} points", pred.fine.len());
            println!(
                "mesh: {} vertices, {} faces",
                pred.fine_mesh.vertex_count(),
                pred.fine_mesh.face_count()
            );
        }
        Command::Eval { pred, gt, tau, squared } => {
            let report = eval_metrics_with(&read_cloud(&pred)?, &read_cloud(&gt)?, tau, squared)?;
            let json = serde_json::to_string_pretty(&report).expect("metrics serialize");
            println!("{json}");
        }
        Command::Fuse {
            capture,
            frames,
            out,
            format,
        } => {
            let cap = load_capture(&capture)?;
            let n = cap.len();
            let cloud = fuse(&cap, &frames_or_all(frames, n))?;
            write_cloud(&out, &cloud, format.into())?;
            println!("fused: {} points", cloud.len());
        }
        Command::MakeProto {
            level,
            radius,
            out,
            format,
        } => {
            let proto = icosphere(level, radius)?;
            write_mesh(&out, &proto.base, format.into())?;
            println!(
                "prototype: {} vertices, {} faces",
                proto.base.vertex_count(),
                proto.base.face_count()
            );
        }
        Command::Synth { out, n, seed } => {
            let captures = gen_synthetic(seed, n)?;
            let (n_train, n_val) = split_counts(n);
            for (i, cap) in captures.iter().enumerate() {
                let dir = if i < n_train {
                    out.join("train").join(format!("{i:04}"))
                } else {
                    out.join("val").join(format!("{:04}", i - n_train))
                };
                save_capture(cap, &dir)?;
            }
            println!("synthetic: {n_train} train, {n_val} val captures in {}", out.display());
        }
        Command::Gradcheck { scale } => {
            let scale = match scale {
                Scale::Tiny => CheckScale::Tiny,
                Scale::Small => CheckScale::Small,
            };
            let results = full_suite(scale)?;
            let mut failed = 0;
            for r in &results {
                let status = if r.passed() { "ok" } else { "FAIL" };
                println!("{:<45} max rel err {:.3e} (tol {:.0e}) {status}", r.name, r.max_rel_err, r.tolerance);
                if !r.passed() {
                    failed += 1;
                    for f in r.report.failures() {
                        println!(
                            "    {}[{}]: analytic {:.6e} numeric {:.6e}",
                            f.name, f.worst_index, f.analytic, f.numeric
                        );
                    }
                }
            }
            if failed > 0 {
                eprintln!("{failed} of {} checks exceeded tolerance", results.len());
                return Ok(EXIT_NUMERIC);
            }
        }
    }
    Ok(0)
}
