use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use imip::compression::{
    pca_fit, pca_project, pca_reconstruct, pq_decode, pq_encode, pq_fit, read_descriptors, representation_size_bytes,
    save_pca, save_pq, Representation,
};
use imip::eval::{
    evaluate_pairs, format_pair_list, format_results_csv, generate_pairs, inlierness_histogram, parse_results_csv,
    read_points_csv, size_accuracy_rows, size_accuracy_svg, write_histogram_csv, write_points_csv, write_size_accuracy_csv,
    AccuracyThresholds, Dataset, EvalConfig, MethodRun,
};
use imip::klt::PairSelectionConfig;
use imip::network::{load_params, save_params};
use imip::training::{train, write_train_log, TrainingFileConfig};
use imip::NetworkParams;

#[derive(Parser)]
#[command(name = "imip", version, about = "Descriptor-free interest points: training, evaluation and reports")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a detector from a TOML config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Output parameter file.
        #[arg(long, default_value = "net.imip")]
        out: PathBuf,
        /// Per-step loss log (CSV).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Evaluate a detector on a dataset and write the results CSV.
    Eval {
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Pair list overriding the dataset's own (`base j` per line).
        #[arg(long)]
        pairs: Option<PathBuf>,
        /// Per-point responses and inlier flags, for histograms.
        #[arg(long)]
        points: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Select frame pairs of a sequence by KLT overlap.
    Pairs {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = PairSelectionConfig::EVALUATION_OVERLAP)]
        o: f64,
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Defaults to standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit a PCA or PQ model to descriptors, or size a representation.
    Compress {
        /// `pca:K` or `pq:M:K` when fitting; any representation with `--size-only`.
        #[arg(long)]
        method: String,
        #[arg(long, required_unless_present = "size_only")]
        descriptors: Option<PathBuf>,
        #[arg(long, required_unless_present = "size_only")]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Print the byte size of a representation such as `pq:128:2:16`.
        #[arg(long)]
        size_only: bool,
    },
    /// Accuracy-versus-size table and plot, and inlierness histograms.
    Report {
        /// `REPRESENTATION=results.csv`, e.g. `ours:128=run128.csv`.
        #[arg(long = "run")]
        runs: Vec<String>,
        /// `kitti` or `euroc`.
        #[arg(long, default_value = "kitti")]
        preset: String,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        svg: Option<PathBuf>,
        /// Points file written by `eval --points`.
        #[arg(long)]
        points: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        bins: usize,
        #[arg(long)]
        histogram: Option<PathBuf>,
    },
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn run_train(config: &Path, out: &Path, log: Option<&Path>) -> Result<()> {
    let cfg = TrainingFileConfig::parse(&read(config)?)?;
    let base = config.parent().unwrap_or(Path::new("."));
    let dataset = Dataset::open(base.join(&cfg.dataset))?;
    let validation = match &cfg.val_dataset {
        Some(p) => Dataset::open(base.join(p))?.training_pairs(PairSelectionConfig::EVALUATION_OVERLAP, cfg.val_pairs, cfg.seed)?,
        None => Vec::new(),
    };
    let initial = NetworkParams::<f32>::init(&cfg.network_config())?;
    let mut source = dataset.training_source(cfg.o_train, cfg.seed)?;
    let outcome = train(initial, source.as_mut(), &validation, &cfg.train_config())?;
    save_params(&outcome.params, out).with_context(|| format!("writing {}", out.display()))?;
    if let Some(path) = log {
        let mut buf = Vec::new();
        write_train_log(&outcome.log, &mut buf)?;
        fs::write(path, buf).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn run_eval(params: &Path, dataset: &Path, out: &Path, pairs: Option<&Path>, points: Option<&Path>, seed: u64) -> Result<()> {
    let net = load_params::<f32>(params).with_context(|| format!("loading {}", params.display()))?;
    let ds = Dataset::open(dataset)?;
    let pair_list = pairs.map(|p| read(p).and_then(|t| Ok(imip::eval::parse_pair_list(&t)?))).transpose()?;
    let mut cfg = EvalConfig::default();
    cfg.ransac.seed = seed;
    let records = evaluate_pairs(&ds, &net, pair_list.as_deref(), &cfg)?;
    write(out, &format_results_csv(&records))?;
    if let Some(p) = points {
        write(p, &write_points_csv(&records))?;
    }
    Ok(())
}

fn run_pairs(dataset: &Path, o: f64, count: usize, seed: u64, out: Option<&Path>) -> Result<()> {
    let Dataset::Sequence(seq) = Dataset::open(dataset)? else {
        bail!("pair selection needs a sequence dataset");
    };
    if !(o > 0.0 && o <= 1.0) {
        bail!("--o must be in (0, 1], got {o}");
    }
    let text = format_pair_list(&generate_pairs(&seq, o, count, seed)?);
    match out {
        Some(p) => write(p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run_compress(method: &str, descriptors: Option<&Path>, out: Option<&Path>, seed: u64, size_only: bool) -> Result<()> {
    if size_only {
        println!("{}", representation_size_bytes(&Representation::parse(method)?));
        return Ok(());
    }
    let (descriptors, out) = descriptors.zip(out).ok_or_else(|| anyhow!("--descriptors and --out are required"))?;
    let data = read_descriptors(descriptors).with_context(|| format!("reading {}", descriptors.display()))?;
    let parts: Vec<&str> = method.split(':').collect();
    let num = |s: &str| s.parse::<usize>().map_err(|_| anyhow!("bad number `{s}` in method `{method}`"));
    let mut sq_err = 0.0;
    match parts.as_slice() {
        ["pca", k] => {
            let p = pca_fit(&data, num(k)?)?;
            for i in 0..data.len() {
                let back = pca_reconstruct(&p, &pca_project(&p, data.row(i))?)?;
                sq_err += back.iter().zip(data.row(i)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            }
            save_pca(&p, out)?;
        }
        ["pq", m, k] => {
            let cb = pq_fit(&data, num(m)?, num(k)?, seed)?;
            for i in 0..data.len() {
                let back = pq_decode(&cb, &pq_encode(&cb, data.row(i))?)?;
                sq_err += back.iter().zip(data.row(i)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            }
            save_pq(&cb, out)?;
        }
        _ => bail!("unknown method `{method}`, expected pca:K or pq:M:K"),
    }
    println!("mean squared reconstruction error {:.6}", sq_err / data.len().max(1) as f64);
    Ok(())
}

struct ReportArgs<'a> {
    runs: &'a [String],
    preset: &'a str,
    csv: Option<&'a Path>,
    svg: Option<&'a Path>,
    points: Option<&'a Path>,
    bins: usize,
    histogram: Option<&'a Path>,
}

fn run_report(a: ReportArgs) -> Result<()> {
    let thresholds = AccuracyThresholds::preset(a.preset).ok_or_else(|| anyhow!("unknown preset `{}`", a.preset))?;
    if !a.runs.is_empty() {
        let runs = a
            .runs
            .iter()
            .map(|spec| {
                let (rep, path) = spec.split_once('=').ok_or_else(|| anyhow!("--run expects REPRESENTATION=FILE, got `{spec}`"))?;
                let records = parse_results_csv(&read(Path::new(path))?).with_context(|| format!("parsing {path}"))?;
                Ok(MethodRun { representation: Representation::parse(rep)?, records })
            })
            .collect::<Result<Vec<_>>>()?;
        let rows = size_accuracy_rows(&runs, thresholds)?;
        let table = write_size_accuracy_csv(&rows);
        match a.csv {
            Some(p) => write(p, &table)?,
            None => print!("{table}"),
        }
        if let Some(p) = a.svg {
            write(p, &size_accuracy_svg(&rows))?;
        }
    }
    if let Some(p) = a.points {
        let bins = inlierness_histogram(&read_points_csv(&read(p)?)?, a.bins)?;
        let text = write_histogram_csv(&bins);
        match a.histogram {
            Some(h) => write(h, &text)?,
            None => print!("{text}"),
        }
    }
    if a.runs.is_empty() && a.points.is_none() {
        bail!("nothing to report: give --run or --points");
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, out, log } => run_train(&config, &out, log.as_deref()),
        Command::Eval { params, dataset, out, pairs, points, seed } => {
            run_eval(&params, &dataset, &out, pairs.as_deref(), points.as_deref(), seed)
        }
        Command::Pairs { dataset, o, count, seed, out } => run_pairs(&dataset, o, count, seed, out.as_deref()),
        Command::Compress { method, descriptors, out, seed, size_only } => {
            run_compress(&method, descriptors.as_deref(), out.as_deref(), seed, size_only)
        }
        Command::Report { runs, preset, csv, svg, points, bins, histogram } => run_report(ReportArgs {
            runs: &runs,
            preset: &preset,
            csv: csv.as_deref(),
            svg: svg.as_deref(),
            points: points.as_deref(),
            bins,
            histogram: histogram.as_deref(),
        }),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            eprintln!("error: usage: {}", first.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
