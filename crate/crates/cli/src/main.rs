use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ncssd::bench::{bench_kernels, measure_fps, measure_peak_rss_delta};
use ncssd::blocks::ImagePair;
use ncssd::codecs::{
    read_disparity_pfm, read_flow_flo, read_image, read_mask, write_disparity_pfm, write_disparity_visualization,
    write_flow_flo, write_flow_visualization,
};
use ncssd::matching::{FieldEstimate, FieldKind};
use ncssd::metrics::{evaluate, MetricReport};
use ncssd::par::init_global_threads;
use ncssd::pipeline::{Estimation, Model, TaskRequest};
use ncssd::selftest::run_selftest;
use ncssd::weights::{init_weights, load_weights, save_weights};
use ncssd::{Error, ModelConfig, Tensor};

const THREADS_VAR: &str = "NCSSD_THREADS";

#[derive(Parser, Debug)]
#[command(name = "ncssd", version, about = "Dense flow and disparity estimation with non-causal state-space blocks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the built-in invariant and oracle checks.
    Selftest,
    /// Estimate flow or disparity for an image pair.
    Estimate(EstimateArgs),
    /// Score a prediction against ground truth.
    Eval(EvalArgs),
    /// Time the kernels or the full pipeline.
    Bench(BenchArgs),
    /// Write randomly initialised weights for a config.
    InitWeights(InitArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Task {
    Flow,
    Disparity,
}

impl From<Task> for FieldKind {
    fn from(t: Task) -> Self {
        match t {
            Task::Flow => FieldKind::Flow,
            Task::Disparity => FieldKind::Disparity,
        }
    }
}

#[derive(Args, Debug, Clone)]
struct PairArgs {
    /// Reference image (left view or first frame).
    #[arg(long)]
    left: Option<PathBuf>,
    /// Matching image (right view or second frame).
    #[arg(long)]
    right: Option<PathBuf>,
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Refinement iterations; defaults to the config value for the task.
    #[arg(long)]
    iters: Option<usize>,
    /// Lookup radius; must equal the radius in the weights' config.
    #[arg(long)]
    radius: Option<usize>,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    #[arg(long, value_enum)]
    task: Task,
    #[command(flatten)]
    pair: PairArgs,
    /// Output file, `.flo` for flow or `.pfm` for disparity.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Colour-coded PNG of the result.
    #[arg(long)]
    viz: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long, value_enum)]
    task: Task,
    /// Ground truth, `.flo` or `.pfm`.
    #[arg(long)]
    gt: PathBuf,
    /// Validity mask; non-zero pixels are valid.
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Precomputed prediction. Without it the pair options are used to run
    /// the model.
    #[arg(long, conflicts_with_all = ["left", "right", "weights"])]
    pred: Option<PathBuf>,
    #[command(flatten)]
    pair: PairArgs,
}

#[derive(Args, Debug)]
#[command(group = clap::ArgGroup::new("mode").required(true).args(["kernels", "pipeline"]))]
struct BenchArgs {
    /// Scaling benchmark of the linear and quadratic kernels.
    #[arg(long)]
    kernels: bool,
    /// Sequence lengths, ascending.
    #[arg(long, value_delimiter = ',', default_value = "256,512,1024,2048,4096")]
    lengths: Vec<usize>,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 16)]
    state_dim: usize,
    #[arg(long, default_value_t = 5)]
    trials: usize,
    /// Write the scaling table as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,

    /// Throughput and memory of the full pipeline.
    #[arg(long)]
    pipeline: bool,
    /// Input size as HxW.
    #[arg(long, default_value = "128x128", value_parser = parse_size)]
    size: (usize, usize),
    /// Timed runs after one warm-up.
    #[arg(long, default_value_t = 5)]
    repeat: usize,
    #[arg(long, value_enum, default_value = "flow")]
    task: Task,
    /// Weights to time; random weights with the default config otherwise.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    iters: Option<usize>,
    /// Known EPE used to report a somer score.
    #[arg(long)]
    epe: Option<f64>,
}

#[derive(Args, Debug)]
struct InitArgs {
    /// JSON model config; the defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HxW, got {s:?}"))?;
    let h = h.trim().parse().map_err(|e| format!("bad height: {e}"))?;
    let w = w.trim().parse().map_err(|e| format!("bad width: {e}"))?;
    Ok((h, w))
}

enum Failure {
    /// A check or metric came out negative; exit 1.
    Check(String),
    Lib(Error),
    Usage(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Check(_) => 1,
            Failure::Lib(e) if e.is_io() => 2,
            Failure::Lib(e) if matches!(e.root(), Error::Metric(_)) => 1,
            Failure::Lib(_) | Failure::Usage(_) => 3,
        }
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn threads_from_env() -> CliResult<Option<usize>> {
    match std::env::var(THREADS_VAR) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Failure::Usage(format!("{THREADS_VAR} must be a positive integer, got {v:?}"))),
        },
    }
}

fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|source| {
        Failure::Lib(Error::Io {
            path: path.to_path_buf(),
            source,
        })
    })
}

fn required<'a>(opt: &'a Option<PathBuf>, flag: &str) -> CliResult<&'a PathBuf> {
    opt.as_ref().ok_or_else(|| Failure::Usage(format!("--{flag} is required")))
}

fn run_pair(task: Task, pair: &PairArgs) -> CliResult<Estimation<f32>> {
    let left = read_image::<f32>(required(&pair.left, "left")?)?;
    let right = read_image::<f32>(required(&pair.right, "right")?)?;
    let weights = load_weights(required(&pair.weights, "weights")?)?;
    let model = Model::<f32>::new(&weights)?;
    let mut req = TaskRequest::with_defaults(task.into(), ImagePair::new(left, right)?, model.config());
    if let Some(n) = pair.iters {
        req.iterations = n;
    }
    if let Some(r) = pair.radius {
        req.radius = r;
    }
    Ok(model.estimate(&req)?)
}

fn write_field(kind: FieldKind, path: &Path, values: &Tensor<f32>) -> CliResult {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    match (kind, ext) {
        (FieldKind::Flow, "flo") => write_flow_flo(path, values)?,
        (FieldKind::Disparity, "pfm") => write_disparity_pfm(path, values)?,
        _ => {
            return Err(Failure::Usage(format!(
                "{} output must be .{}, got {}",
                kind.name(),
                if kind == FieldKind::Flow { "flo" } else { "pfm" },
                path.display()
            )))
        }
    }
    Ok(())
}

fn read_field(kind: FieldKind, path: &Path) -> CliResult<FieldEstimate<f32>> {
    let values = match kind {
        FieldKind::Flow => read_flow_flo(path)?,
        FieldKind::Disparity => read_disparity_pfm(path)?,
    };
    Ok(FieldEstimate::new(kind, values, 1)?)
}

fn cmd_selftest() -> CliResult {
    let results = run_selftest();
    let failed = results.iter().filter(|r| !r.passed).count();
    for r in &results {
        println!("[{}] {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
    }
    if failed > 0 {
        return Err(Failure::Check(format!("{failed} of {} checks failed", results.len())));
    }
    println!("all {} checks passed", results.len());
    Ok(())
}

fn cmd_estimate(args: &EstimateArgs) -> CliResult {
    let kind = FieldKind::from(args.task);
    let est = run_pair(args.task, &args.pair)?;
    // mean absolute change per iterate, for convergence plots
    let mut prev: Option<&Tensor<f32>> = None;
    for (i, it) in est.iterations.iter().enumerate() {
        let v = it.values();
        let change = match prev {
            Some(p) => v.data().iter().zip(p.data()).map(|(a, b)| (a - b).abs() as f64).sum::<f64>() / v.len() as f64,
            None => v.data().iter().map(|a| a.abs() as f64).sum::<f64>() / v.len() as f64,
        };
        println!("iteration {:>3}  mean |update| {change:.6}", i + 1);
        prev = Some(v);
    }
    let values = est.field.values();
    if let Some(out) = &args.out {
        write_field(kind, out, values)?;
    }
    if let Some(viz) = &args.viz {
        match kind {
            FieldKind::Flow => write_flow_visualization(viz, values)?,
            FieldKind::Disparity => write_disparity_visualization(viz, values)?,
        }
    }
    println!(
        "{} field {}x{}, {} iterations",
        kind.name(),
        est.field.height(),
        est.field.width(),
        est.iterations.len()
    );
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> CliResult {
    let kind = FieldKind::from(args.task);
    let gt = read_field(kind, &args.gt)?;
    let pred = match &args.pred {
        Some(p) => read_field(kind, p)?,
        None => run_pair(args.task, &args.pair)?.field,
    };
    let mask = match &args.mask {
        Some(p) => {
            let (h, w, m) = read_mask(p)?;
            if (h, w) != (gt.height(), gt.width()) {
                return Err(Failure::Lib(Error::Dimension(format!(
                    "mask is {h}x{w} but ground truth is {}x{}",
                    gt.height(),
                    gt.width()
                ))));
            }
            Some(m)
        }
        None => None,
    };
    let report = evaluate(&pred, &gt, mask.as_deref())?;
    print_report(&report);
    Ok(())
}

fn print_report(report: &MetricReport) {
    println!("{}", report.to_json());
    print!("{}", report.to_table());
}

fn cmd_bench(args: &BenchArgs) -> CliResult {
    if args.kernels {
        let report = bench_kernels(&args.lengths, args.width, args.state_dim, args.trials)?;
        print!("{}", report.to_table());
        if let Some(path) = &args.csv {
            std::fs::write(path, report.to_csv()).map_err(|source| {
                Failure::Lib(Error::Io {
                    path: path.clone(),
                    source,
                })
            })?;
        }
    }
    if args.pipeline {
        let weights = match &args.weights {
            Some(p) => load_weights(p)?,
            None => init_weights(&ModelConfig::default(), 0),
        };
        let model = Model::<f32>::new(&weights)?;
        let (h, w) = args.size;
        let img = |phase: f32| {
            Tensor::from_fn([3, h, w], |k| (k as f32 * 0.37 + phase).sin() * 0.8)
        };
        let pair = ImagePair::new(img(0.0)?, img(0.6)?)?;
        let mut req = TaskRequest::with_defaults(args.task.into(), pair, model.config());
        if let Some(n) = args.iters {
            req.iterations = n;
        }
        let (fps, mem) = measure_peak_rss_delta(|| measure_fps(args.repeat, || model.estimate(&req).map(|_| ())));
        let fps = fps?;
        let report = MetricReport {
            epe: args.epe,
            ..Default::default()
        }
        .with_performance(Some(fps.fps), mem);
        println!(
            "{} {h}x{w}: median {:.4} s over {} runs (warm-up {:.4} s excluded)",
            FieldKind::from(args.task).name(),
            fps.median_s,
            fps.runs_s.len(),
            fps.warmup_s
        );
        print_report(&report);
    }
    Ok(())
}

fn cmd_init(args: &InitArgs) -> CliResult {
    let cfg = match &args.config {
        Some(p) => ModelConfig::from_json(&read_text(p)?)?,
        None => ModelConfig::default(),
    };
    let w = init_weights(&cfg, args.seed);
    save_weights(&args.out, &w)?;
    println!("wrote {} tensors to {}", w.len(), args.out.display());
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    let threads = threads_from_env()?;
    // timing defaults to one worker so results are comparable across machines
    let bench = matches!(cli.command, Command::Bench(_));
    match (threads, bench) {
        (Some(n), _) => init_global_threads(n),
        (None, true) => init_global_threads(1),
        (None, false) => {}
    }
    match &cli.command {
        Command::Selftest => cmd_selftest(),
        Command::Estimate(a) => cmd_estimate(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Bench(a) => cmd_bench(a),
        Command::InitWeights(a) => cmd_init(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 3 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let code = f.code();
            match f {
                Failure::Check(msg) | Failure::Usage(msg) => eprintln!("error: {msg}"),
                Failure::Lib(e) => eprintln!("error: {e}"),
            }
            ExitCode::from(code)
        }
    }
}
