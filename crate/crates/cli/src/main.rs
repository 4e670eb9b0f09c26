use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use turbfuse::codec::{bit_score, decode_target, format_bits, CodedTarget};
use turbfuse::dataset::{
    read_meta, read_meta_file, read_payload, simulate_coded, strength_from_seed,
    write_sequence_dir, SequenceMeta, TargetGeometry, META_FILE, PAYLOAD_FILE,
};
use turbfuse::deblur::DeblurMethod;
use turbfuse::eval::{evaluate_dataset, EvalOptions};
use turbfuse::imgio::{load_image, load_sequence, save_image, save_raw};
use turbfuse::pipeline::{restore_sequence, PipelineConfig, Restoration};
use turbfuse::selection::write_scores_csv;
use turbfuse::simulator::{degrade_sequence, Strength, DEFAULT_FRAMES};
use turbfuse::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser)]
#[command(
    name = "turbfuse",
    version,
    about = "Turbulence mitigation for coded-target image sequences"
)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Restore one frame sequence into a single image.
    Restore(RestoreArgs),
    /// Write degraded sequences of a coded target or a given clean image.
    Simulate(SimulateArgs),
    /// Restore and score every sequence under a dataset root.
    Evaluate(EvaluateArgs),
    /// Decode the coded target in an image.
    Decode(DecodeArgs),
}

#[derive(Args)]
struct PipelineFlags {
    /// Pipeline configuration file (TOML). Flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    keep_fraction: Option<f64>,
    /// wiener or richardson_lucy.
    #[arg(long)]
    deblur_method: Option<DeblurMethod>,
    #[arg(long)]
    nsr: Option<f64>,
}

impl PipelineFlags {
    fn resolve(&self) -> Result<PipelineConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        if let Some(k) = self.keep_fraction {
            cfg.selection.keep_fraction = k;
        }
        if let Some(m) = self.deblur_method {
            cfg.deblur.method = m;
        }
        if let Some(n) = self.nsr {
            cfg.deblur.nsr = n;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct RestoreArgs {
    /// Directory of frame_NNNN.png files.
    input: PathBuf,
    /// Output image (PNG).
    #[arg(short, long)]
    output: PathBuf,
    #[command(flatten)]
    pipeline: PipelineFlags,
    /// Directory for intermediate images, exact f64 dumps and frame scores.
    #[arg(long)]
    dump_stages: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Output directory; with --count > 1 it receives seq_NNNN subdirectories.
    #[arg(short, long)]
    output: PathBuf,
    /// Clean image to degrade. Without it a coded target is generated from the seed.
    #[arg(long)]
    clean: Option<PathBuf>,
    /// weak, medium or strong. Drawn from the seed when omitted.
    #[arg(long)]
    strength: Option<Strength>,
    #[arg(long, default_value_t = DEFAULT_FRAMES)]
    frames: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of sequences; sequence i uses seed + i.
    #[arg(long, default_value_t = 1)]
    count: usize,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Directory of sequence subdirectories, each with meta.json and payload.txt.
    dataset: PathBuf,
    /// Report file (JSON).
    #[arg(short, long, default_value = "report.json")]
    output: PathBuf,
    #[command(flatten)]
    pipeline: PipelineFlags,
    /// Record stage wall-clock times (makes reports run-dependent).
    #[arg(long)]
    timings: bool,
}

#[derive(Args)]
struct DecodeArgs {
    image: PathBuf,
    /// meta.json supplying the grid geometry; defaults to the 8x8 layout.
    #[arg(long)]
    meta: Option<PathBuf>,
    /// Ground-truth payload file; prints the bit score when given.
    #[arg(long)]
    truth: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be >= 1");
            return ExitCode::from(EXIT_USAGE);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    }
    let result = match cli.command {
        Command::Restore(a) => restore(a),
        Command::Simulate(a) => simulate(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Decode(a) => decode(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::InvalidParameter(_) | Error::Config(_) => EXIT_USAGE,
        Error::Numeric(_) => EXIT_NUMERIC,
        _ => EXIT_DATA,
    }
}

/// Writes through a sibling temporary file so a failed run leaves no
/// partial output behind.
fn write_atomically(
    path: &Path,
    write: impl FnOnce(&Path) -> Result<(), Error>,
) -> Result<(), Error> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidParameter(format!("{} is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.partial", name.to_string_lossy()));
    if let Err(e) = write(&tmp) {
        let _ = fs::remove_file(&tmp);
        return Err(e);
    }
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::Io {
            path: path.to_path_buf(),
            source: e,
        }
    })
}

fn restore(args: RestoreArgs) -> Result<(), Error> {
    let config = args.pipeline.resolve()?;
    let frames = load_sequence(&args.input)?;
    let r = restore_sequence(&frames, &config)?;
    if let Some(dir) = &args.dump_stages {
        dump_stages(dir, &r)?;
    }
    write_atomically(&args.output, |p| save_image(&r.output, p))?;
    eprintln!(
        "restored {} frames ({} kept) -> {}",
        frames.len(),
        r.fusion.selected.len(),
        args.output.display()
    );
    Ok(())
}

fn dump_stages(dir: &Path, r: &Restoration) -> Result<(), Error> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let stages = [
        ("reference", r.reference()),
        ("fused", r.fused()),
        ("deblurred", &r.deblurred.image),
        ("restored", &r.output),
    ];
    for (name, img) in stages {
        save_image(img, dir.join(format!("{name}.png")))?;
        save_raw(img, dir.join(format!("{name}.f64")))?;
    }
    let csv = dir.join("frame_scores.csv");
    let mut bytes = Vec::new();
    write_scores_csv(&r.fusion.ranking, &mut bytes).expect("writing to memory");
    fs::write(&csv, bytes).map_err(|e| Error::Io {
        path: csv,
        source: e,
    })
}

fn simulate(args: SimulateArgs) -> Result<(), Error> {
    if args.count == 0 {
        return Err(Error::InvalidParameter("--count must be >= 1".into()));
    }
    let clean = args.clean.as_ref().map(load_image).transpose()?;
    for i in 0..args.count {
        let seed = args.seed.wrapping_add(i as u64);
        let dir = if args.count == 1 {
            args.output.clone()
        } else {
            args.output.join(format!("seq_{i:04}"))
        };
        match &clean {
            Some(img) => {
                let strength = args.strength.unwrap_or_else(|| strength_from_seed(seed));
                let sim = degrade_sequence(img, strength, args.frames, seed)?;
                let meta = SequenceMeta::for_simulation(&sim, None);
                write_sequence_dir(&dir, &sim.frames, &meta, None)?;
            }
            None => {
                let coded = simulate_coded(args.strength, args.frames, seed)?;
                let meta = SequenceMeta::for_simulation(&coded.sim, Some(&coded.target));
                write_sequence_dir(&dir, &coded.sim.frames, &meta, Some(&coded.target.payload))?;
            }
        }
        eprintln!("wrote {}", dir.display());
    }
    Ok(())
}

fn evaluate(args: EvaluateArgs) -> Result<(), Error> {
    let config = args.pipeline.resolve()?;
    let options = EvalOptions {
        include_timings: args.timings,
    };
    let report = evaluate_dataset(&args.dataset, &config, &options)?;
    if report.sequences.is_empty() {
        eprintln!(
            "warning: no sequence directories with {META_FILE} under {}",
            args.dataset.display()
        );
    }
    let json = report.to_json()?;
    write_atomically(&args.output, |p| {
        fs::write(p, &json).map_err(|e| Error::Io {
            path: p.to_path_buf(),
            source: e,
        })
    })?;
    print!("{}", report.table());
    Ok(())
}

fn decode(args: DecodeArgs) -> Result<(), Error> {
    let img = load_image(&args.image)?;
    let geometry = match &args.meta {
        Some(path) => {
            let meta = if path.is_dir() {
                read_meta(path)?
            } else {
                read_meta_file(path)?
            };
            meta.target.ok_or_else(|| Error::Metadata {
                path: path.clone(),
                detail: "no target geometry".into(),
            })?
        }
        None => TargetGeometry::of(&CodedTarget::with_payload(vec![false; 64])?),
    };
    let bits = geometry.rows * geometry.cols;
    let target = geometry.with_payload(vec![false; bits])?;
    let decoded = decode_target(&img, &target)?;
    println!("{}", format_bits(&decoded));
    if let Some(truth) = &args.truth {
        let truth_path = if truth.is_dir() {
            truth.join(PAYLOAD_FILE)
        } else {
            truth.clone()
        };
        let expected = read_payload(&truth_path)?;
        println!("bit_score {:.6}", bit_score(&decoded, &expected)?);
    }
    Ok(())
}
