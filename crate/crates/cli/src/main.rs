//! `ep2`: file-based front end to the distillation and detection numerics.
//!
//! Results go to stdout, diagnostics to stderr. Exit codes:
//!
//! | code | meaning                                   |
//! |------|-------------------------------------------|
//! | 0    | success                                   |
//! | 1    | other failure (numerical breakdown)       |
//! | 2    | malformed or unreadable input, bad usage  |
//! | 3    | invalid dimension or configuration        |
//! | 4    | shape mismatch between inputs             |
//! | 5    | training diverged                         |
//! | 6    | keypoint coordinate out of bounds         |
//! | 7    | numeric overflow in the fast loss         |

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ep2_core::archcalc::{build_graph, count_params, estimate_flops, layer_table, receptive_field, ModelConfig};
use ep2_core::detection::{merge_flip_cache, unfold_softmax_fast, unfold_softmax_naive, DEFAULT_KERNEL};
use ep2_core::distill::{lra_compress_matrix, pca_compress_matrix, procrustes_residual};
use ep2_core::formats::{load_heatmap, load_keypoints, load_matrix, load_raster, save_heatmap, save_matrix};
use ep2_core::{
    gram_gap, mnn_match, procrustes_solve, train, Compression, DescriptorSet, DistillConfig, Error, LossWeights,
};

#[derive(Parser)]
#[command(name = "ep2", version, about = "Descriptor distillation and keypoint-detection numerics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compress a descriptor matrix to fewer columns, preserving its Gram matrix.
    Compress(CompressArgs),
    /// Align a target matrix to a source by the best orthogonal map.
    Procrustes(ProcrustesArgs),
    /// Train the toy linear student and write the per-step report.
    DistillDemo(DistillArgs),
    /// Merge detections from an image and its mirror into a keypoint heatmap.
    Cache(CacheArgs),
    /// Evaluate the UnfoldSoftmax detection loss.
    DetectLoss(DetectLossArgs),
    /// Mutual nearest-neighbour matching of two descriptor files.
    Match(MatchArgs),
    /// Per-layer size, parameter and FLOP report for a named model.
    Arch(ArchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Lra,
    Pca,
}

#[derive(Args)]
struct CompressArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    dim: usize,
    #[arg(long, value_enum, default_value_t = Method::Lra)]
    method: Method,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct ProcrustesArgs {
    #[arg(long)]
    target: PathBuf,
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    output_aligned: PathBuf,
}

#[derive(Args)]
struct DistillArgs {
    /// Student descriptor dimension (also the mini-set size).
    #[arg(long, default_value_t = 32)]
    c_desc: usize,
    #[arg(long, default_value_t = 128)]
    teacher_dim: usize,
    /// Intrinsic dimension of the synthetic teachers [default: c-desc].
    #[arg(long)]
    teacher_rank: Option<usize>,
    #[arg(long, default_value_t = 4)]
    views: usize,
    #[arg(long, default_value_t = 0.05)]
    sigma: f64,
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 0.5)]
    w_op: f64,
    #[arg(long, default_value_t = 0.1)]
    w_sim: f64,
    #[arg(long, value_enum, default_value_t = Method::Lra)]
    compression: Method,
    #[arg(long)]
    no_sim_loss: bool,
    /// Reuse the first mini-set for every step.
    #[arg(long)]
    fixed_batch: bool,
    #[arg(long, env = "EP2_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct CacheArgs {
    #[arg(long)]
    kps: PathBuf,
    #[arg(long)]
    kps_flipped: PathBuf,
    #[arg(long)]
    width: usize,
    #[arg(long)]
    height: usize,
    #[arg(long, default_value_t = 2.0)]
    radius: f64,
    #[arg(long)]
    out_heatmap: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossImpl {
    Naive,
    Fast,
    Both,
}

#[derive(Args)]
struct DetectLossArgs {
    #[arg(long)]
    logits: PathBuf,
    #[arg(long)]
    target: PathBuf,
    #[arg(long, default_value_t = DEFAULT_KERNEL)]
    kernel: usize,
    #[arg(long = "impl", value_enum, default_value_t = LossImpl::Both)]
    implementation: LossImpl,
}

#[derive(Args)]
struct MatchArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum TableFormat {
    Text,
    Csv,
}

#[derive(Args)]
struct ArchArgs {
    /// Model size letter: T, S, M, L or E.
    #[arg(long)]
    config: String,
    #[arg(long)]
    dim: usize,
    #[arg(long, default_value_t = 480)]
    height: usize,
    #[arg(long, default_value_t = 640)]
    width: usize,
    #[arg(long, value_enum, default_value_t = TableFormat::Text)]
    format: TableFormat,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Format(_) | Error::Io(_) | Error::NotUnitNorm { .. } | Error::NonFinite { .. } | Error::ZeroRow { .. } => 2,
        Error::BadDimension(_)
        | Error::InvalidConfig(_)
        | Error::EvenKernel(_)
        | Error::KernelTooLarge { .. }
        | Error::BadInputSize { .. } => 3,
        Error::ShapeMismatch { .. } | Error::DimMismatch { .. } | Error::RowCountMismatch { .. } => 4,
        Error::DivergenceDetected { .. } => 5,
        Error::OutOfBounds { .. } => 6,
        Error::NumericOverflow { .. } => 7,
        _ => 1,
    }
}

/// Attaches the offending path to I/O and format errors.
fn with_path<T>(path: &Path, r: Result<T, Error>) -> Result<T, Error> {
    r.map_err(|e| match e {
        Error::Io(io) => Error::Io(io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn create(path: &Path) -> Result<BufWriter<File>, Error> {
    with_path(path, File::create(path).map(BufWriter::new).map_err(Error::from))
}

fn compress(args: CompressArgs) -> Result<(), Error> {
    let input = with_path(&args.input, load_matrix(&args.input))?;
    let out = match args.method {
        Method::Lra => lra_compress_matrix(&input, args.dim)?.target,
        Method::Pca => pca_compress_matrix(&input, args.dim)?,
    };
    let gap = gram_gap(&input, &out)?;
    with_path(&args.output, save_matrix(&args.output, &out))?;
    println!("gram_gap={gap:e}");
    Ok(())
}

fn procrustes(args: ProcrustesArgs) -> Result<(), Error> {
    let target = with_path(&args.target, load_matrix(&args.target))?;
    let source = with_path(&args.source, load_matrix(&args.source))?;
    let omega = procrustes_solve(&target, &source)?;
    let residual = procrustes_residual(&target, &source, &omega)?;
    with_path(&args.output_aligned, save_matrix(&args.output_aligned, &(&target * omega.matrix())))?;
    println!("op_residual={residual:e}");
    Ok(())
}

fn distill_demo(args: DistillArgs) -> Result<(), Error> {
    let config = DistillConfig {
        c_desc: args.c_desc,
        teacher_dim: args.teacher_dim,
        teacher_rank: args.teacher_rank,
        n_views: args.views,
        noise_sigma: args.sigma,
        steps: args.steps,
        learning_rate: args.lr,
        weights: LossWeights::new(args.w_op, args.w_sim, 0.0)?,
        compression: match args.compression {
            Method::Lra => Compression::Lra,
            Method::Pca => Compression::Pca,
        },
        use_sim_loss: !args.no_sim_loss,
        fresh_batches: !args.fixed_batch,
        seed: args.seed,
    };
    let report = train(&config)?;
    let mut w = create(&args.report)?;
    report.write_csv(&mut w)?;
    w.flush()?;
    let (first, last) = (report.first(), report.last());
    eprintln!(
        "seed {}: gram_gap {:e} -> {:e} over {} steps",
        config.seed,
        first.gram_gap,
        last.gram_gap,
        report.records.len()
    );
    println!("gram_gap={:e}", last.gram_gap);
    Ok(())
}

fn cache(args: CacheArgs) -> Result<(), Error> {
    let primary = with_path(&args.kps, load_keypoints(&args.kps))?;
    let flipped = with_path(&args.kps_flipped, load_keypoints(&args.kps_flipped))?;
    if !(args.radius >= 0.0 && args.radius.is_finite()) {
        return Err(Error::InvalidConfig(format!("radius must be >= 0, got {}", args.radius)));
    }
    let (kept, heatmap) = merge_flip_cache(&primary, &flipped, args.width, args.height, args.radius)?;
    with_path(&args.out_heatmap, save_heatmap(&args.out_heatmap, &heatmap))?;
    println!("count={}", kept.len());
    Ok(())
}

fn detect_loss(args: DetectLossArgs) -> Result<(), Error> {
    let logits = with_path(&args.logits, load_raster(&args.logits))?;
    let target = with_path(&args.target, load_heatmap(&args.target))?;
    let k = args.kernel;
    match args.implementation {
        LossImpl::Naive => println!("loss={}", unfold_softmax_naive(&logits, &target, k)?),
        LossImpl::Fast => println!("loss={}", unfold_softmax_fast(&logits, &target, k)?),
        LossImpl::Both => {
            let naive = unfold_softmax_naive(&logits, &target, k)?;
            let fast = unfold_softmax_fast(&logits, &target, k)?;
            println!("loss={naive}");
            println!("loss_fast={fast}");
            println!("abs_diff={:e}", (naive - fast).abs());
        }
    }
    Ok(())
}

fn match_cmd(args: MatchArgs) -> Result<(), Error> {
    let a = DescriptorSet::new(with_path(&args.a, load_matrix(&args.a))?)?;
    let b = DescriptorSet::new(with_path(&args.b, load_matrix(&args.b))?)?;
    let mut matches = mnn_match(&a, &b)?;
    matches.sort_by_similarity();
    let mut w = create(&args.out)?;
    writeln!(w, "i,j,similarity")?;
    for (&(i, j), s) in matches.pairs.iter().zip(&matches.similarities) {
        writeln!(w, "{i},{j},{s}")?;
    }
    w.flush()?;
    println!("matches={}", matches.len());
    Ok(())
}

fn arch(args: ArchArgs) -> Result<(), Error> {
    let config: ModelConfig = format!("{}{}", args.config, args.dim).parse()?;
    let graph = build_graph(&config);
    graph.validate()?;
    let rows = layer_table(&graph, args.height, args.width)?;
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match args.format {
        TableFormat::Csv => {
            writeln!(out, "name,kind,channels,height,width,params,flops")?;
            for r in &rows {
                writeln!(out, "{},{},{},{},{},{},{}", r.name, r.kind, r.channels, r.height, r.width, r.params, r.flops)?;
            }
        }
        TableFormat::Text => {
            let name_w = rows.iter().map(|r| r.name.len()).max().unwrap_or(4).max(4);
            writeln!(out, "{:<name_w$}  {:<13}  {:>16}  {:>9}  {:>13}", "name", "kind", "shape", "params", "flops")?;
            for r in &rows {
                let shape = format!("{}x{}x{}", r.channels, r.height, r.width);
                writeln!(
                    out,
                    "{:<name_w$}  {:<13}  {:>16}  {:>9}  {:>13}",
                    r.name,
                    r.kind.to_string(),
                    shape,
                    r.params,
                    r.flops
                )?;
            }
        }
    }
    writeln!(
        out,
        "params={} flops={} rf={}",
        count_params(&graph),
        estimate_flops(&graph, args.height, args.width)?,
        receptive_field(&graph)
    )?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Compress(a) => compress(a),
        Command::Procrustes(a) => procrustes(a),
        Command::DistillDemo(a) => distill_demo(a),
        Command::Cache(a) => cache(a),
        Command::DetectLoss(a) => detect_loss(a),
        Command::Match(a) => match_cmd(a),
        Command::Arch(a) => arch(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
