//! Command-line surface: reproducible generate / fit / eval / summarize
//! experiments driven by a TOML config plus flag overrides.
//!
//! Exit codes: 0 success, 1 usage or bad configuration, 2 data error,
//! 3 internal invariant violation.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tcclust::config::RunConfig;
use tcclust::dataset::{build_context, read_dataset, write_dataset, Dataset, Encoding};
use tcclust::error::{Error, Result};
use tcclust::evaluation::{evaluate, EvalReport};
use tcclust::inference::{fit, FitConfig, Mode};
use tcclust::results::{read_result, write_result, write_trace, ResultFile};
use tcclust::synthesis::{generate_tccrf, generate_tccrp};
use tcclust::types::JUNK_COMPONENT;

#[derive(Parser)]
#[command(name = "tcclust", version, about = "Temporally coherent tracklet clustering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a config file with every default value.
    InitConfig(InitConfigArgs),
    /// Sample a synthetic tracklet dataset with ground truth.
    Generate(GenerateArgs),
    /// Run the sampler on a dataset and write assignments, atoms and trace.
    Fit(FitArgs),
    /// Score a result file against the truth labels of a dataset.
    Eval(EvalArgs),
    /// Summarization metrics only, plus the temporal segment index.
    Summarize(EvalArgs),
}

#[derive(Args)]
struct InitConfigArgs {
    /// Output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    /// Config file; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seating model: tccrp or tccrf.
    #[arg(long)]
    mode: Option<String>,
    /// Number of tracklets.
    #[arg(long)]
    n: Option<usize>,
    /// Feature dimension.
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of temporal segments.
    #[arg(long)]
    segments: Option<usize>,
    /// Dataset output path.
    #[arg(long)]
    out: PathBuf,
    /// Ground-truth assignment output path; defaults to `<out>.truth.tcr`.
    #[arg(long)]
    truth_out: Option<PathBuf>,
    /// Write the binary payload encoding instead of text.
    #[arg(long)]
    binary: bool,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    /// Result output path (trace goes to `<out>.trace.csv`).
    #[arg(long)]
    out: PathBuf,
    /// Seating model: tccrp, tccrf or crp-baseline.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    sweeps: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Single-pass streaming inference.
    #[arg(long)]
    online: bool,
    /// Draws per record in the online pass.
    #[arg(long)]
    samples_per_point: Option<usize>,
    /// Independent seeded chains run in parallel.
    #[arg(long)]
    chains: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Result file produced by `fit` (or the truth file from `generate`).
    #[arg(long)]
    result: PathBuf,
    /// Dataset carrying the ground-truth labels.
    #[arg(long)]
    data: PathBuf,
    /// Report base path: writes `<out>.txt` and `<out>.json`
    /// (and `<out>.segments.csv` for summarize).
    #[arg(long)]
    out: PathBuf,
}

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn cmd_init_config(args: &InitConfigArgs) -> Result<()> {
    let text = RunConfig::default().to_toml();
    match &args.out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| Error::io(path.display().to_string(), e))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_generate(args: &GenerateArgs) -> Result<()> {
    let mut cfg = load_config(&args.config)?;
    if let Some(m) = &args.mode {
        cfg.synthesis.mode = m.parse()?;
    }
    if let Some(n) = args.n {
        cfg.synthesis.n_tracklets = n;
    }
    if let Some(d) = args.dim {
        cfg.synthesis.dim = d;
    }
    if let Some(s) = args.seed {
        cfg.synthesis.seed = s;
    }
    if let Some(k) = args.segments {
        cfg.synthesis.n_segments = k;
    }
    let plan = cfg.synthesis.to_plan();
    let hyper = cfg.hyper.to_hyper(plan.dim);
    let (mut dataset, _ctx, truth) = match cfg.synthesis.mode {
        Mode::Tccrp => generate_tccrp(&plan, &hyper)?,
        Mode::Tccrf => generate_tccrf(&plan, &hyper)?,
        Mode::CrpBaseline => {
            return Err(Error::Config("generate: mode must be tccrp or tccrf".into()));
        }
    };
    if args.binary {
        dataset.encoding = Encoding::Binary;
    }
    write_dataset(&dataset, &args.out)?;
    let truth_path = args
        .truth_out
        .clone()
        .unwrap_or_else(|| args.out.with_extension("truth.tcr"));
    let ids: Vec<usize> = dataset.records.iter().map(|r| r.id).collect();
    let truth_file = ResultFile {
        mode: cfg.synthesis.mode,
        ids,
        z: truth.z.clone(),
        c_flags: truth.c_flags.clone(),
        dim: plan.dim,
        atoms: truth.atoms().into_iter().collect(),
    };
    write_result(&truth_file, &truth_path)?;
    println!(
        "generated {} tracklets, {} entities, {} junk -> {} (truth: {})",
        dataset.len(),
        truth.n_components(),
        truth.junk_n,
        args.out.display(),
        truth_path.display()
    );
    Ok(())
}

fn fit_one(dataset: &Dataset, cfg: &FitConfig) -> Result<(ResultFile, Vec<f64>)> {
    let ctx = build_context(&dataset.records, &cfg.hyper)?;
    let result = fit(&dataset.records, &ctx, cfg)?;
    let ids: Vec<usize> = dataset.records.iter().map(|r| r.id).collect();
    Ok((ResultFile::from_fit(&result, &ids), result.log_prob_trace.clone()))
}

fn chain_path(base: &Path, chain: usize) -> PathBuf {
    let mut name = base.file_name().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(format!(".chain{chain}"));
    base.with_file_name(name)
}

fn cmd_fit(args: &FitArgs) -> Result<()> {
    let mut cfg = load_config(&args.config)?;
    if let Some(m) = &args.mode {
        cfg.fit.mode = m.parse()?;
    }
    if let Some(s) = args.sweeps {
        cfg.fit.n_sweeps = s;
    }
    if let Some(b) = args.burn_in {
        cfg.fit.burn_in = b;
    }
    if let Some(s) = args.seed {
        cfg.fit.seed = s;
    }
    if args.online {
        cfg.fit.online = true;
    }
    if let Some(s) = args.samples_per_point {
        cfg.fit.online_samples_per_point = s;
    }
    let chains = args.chains.unwrap_or(cfg.fit.chains).max(1);

    let dataset = read_dataset(&args.data)?;
    if dataset.is_empty() {
        return Err(Error::Data(format!("{}: dataset is empty", args.data.display())));
    }
    let base_cfg = cfg.fit_config(dataset.dim);
    base_cfg.validate()?;

    let outputs: Vec<(PathBuf, usize)> = if chains == 1 {
        vec![(args.out.clone(), 0)]
    } else {
        (0..chains).map(|c| (chain_path(&args.out, c), c)).collect()
    };
    let results: Vec<Result<(ResultFile, Vec<f64>)>> = std::thread::scope(|scope| {
        let handles: Vec<_> = outputs
            .iter()
            .map(|(_, c)| {
                let mut chain_cfg = base_cfg.clone();
                chain_cfg.seed = base_cfg.seed.wrapping_add(*c as u64);
                let dataset = &dataset;
                scope.spawn(move || fit_one(dataset, &chain_cfg))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("chain thread")).collect()
    });
    for ((path, c), res) in outputs.iter().zip(results) {
        let (result_file, trace) = res?;
        write_result(&result_file, path)?;
        let mut trace_path = path.as_os_str().to_os_string();
        trace_path.push(".trace.csv");
        write_trace(&trace, PathBuf::from(&trace_path))?;
        let junk = result_file.z.iter().filter(|&&z| z == JUNK_COMPONENT).count();
        println!(
            "chain {c}: {} components, {junk} junk, final log-prob {:.4} -> {}",
            result_file.atoms.len(),
            trace.last().copied().unwrap_or(f64::NAN),
            path.display()
        );
    }
    Ok(())
}

fn load_scored(args: &EvalArgs) -> Result<(RunConfig, Dataset, ResultFile, EvalReport)> {
    let cfg = load_config(&args.config)?;
    let dataset = read_dataset(&args.data)?;
    let result = read_result(&args.result)?;
    if !dataset.has_labels() {
        return Err(Error::Data(format!(
            "{}: dataset carries no truth labels",
            args.data.display()
        )));
    }
    let ids: Vec<usize> = dataset.records.iter().map(|r| r.id).collect();
    if result.ids != ids {
        let offending = result
            .ids
            .iter()
            .zip(&ids)
            .find(|(a, b)| a != b)
            .map(|(a, _)| *a)
            .or_else(|| result.ids.get(ids.len()).copied())
            .or_else(|| ids.get(result.ids.len()).copied())
            .unwrap_or_default();
        return Err(Error::Data(format!(
            "result and dataset ids disagree, first offending id: {offending}"
        )));
    }
    let hyper = cfg.hyper.to_hyper(dataset.dim);
    let ctx = build_context(&dataset.records, &hyper)?;
    let report = evaluate(&result.z, &dataset.records, &ctx, dataset.frames, &hyper)?;
    Ok((cfg, dataset, result, report))
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let (_, _, _, report) = load_scored(args)?;
    let txt_path = args.out.with_extension("txt");
    let json_path = args.out.with_extension("json");
    std::fs::write(&txt_path, report.to_flat_text())
        .map_err(|e| Error::io(txt_path.display().to_string(), e))?;
    std::fs::write(&json_path, report.to_json())
        .map_err(|e| Error::io(json_path.display().to_string(), e))?;
    println!(
        "purity {} over {} significant clusters -> {} / {}",
        report.purity.map_or("-".into(), |p| format!("{p:.4}")),
        report.n_significant_clusters,
        txt_path.display(),
        json_path.display()
    );
    Ok(())
}

fn cmd_summarize(args: &EvalArgs) -> Result<()> {
    let (_, _, _, report) = load_scored(args)?;
    let mut out = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(out, "{k} {v}");
    };
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.6}"));
    kv("n_significant_clusters", report.n_significant_clusters.to_string());
    kv("entity_coverage", report.entity_coverage.to_string());
    kv("tracklet_coverage", format!("{:.6}", report.tracklet_coverage));
    kv("conciseness", fmt(report.conciseness));
    kv("representativeness", fmt(report.representativeness));
    kv("representativeness_x100", fmt(report.representativeness_x100));
    kv("shot_n_segments", report.shot.n_segments.to_string());
    kv("shot_n_significant_segments", report.shot.n_significant_segments.to_string());
    kv("shot_coverage", report.shot.shot_coverage.to_string());
    kv("shot_frame_coverage", format!("{:.6}", report.shot.frame_coverage));
    kv("shot_conciseness", fmt(report.shot.conciseness));
    kv("shot_representativeness", fmt(report.shot.representativeness));
    kv(
        "shot_representativeness_x100",
        fmt(report.shot.representativeness.map(|r| r * 100.0)),
    );
    let txt_path = args.out.with_extension("txt");
    std::fs::write(&txt_path, &out).map_err(|e| Error::io(txt_path.display().to_string(), e))?;

    let mut csv = String::from("start_frame,end_frame,significant,labels\n");
    for seg in &report.segments {
        let labels: Vec<String> = seg.labels.iter().map(|l| l.to_string()).collect();
        let _ = writeln!(
            csv,
            "{},{},{},{}",
            seg.start_frame,
            seg.end_frame,
            u8::from(seg.significant),
            labels.join("|")
        );
    }
    let csv_path = args.out.with_extension("segments.csv");
    std::fs::write(&csv_path, csv).map_err(|e| Error::io(csv_path.display().to_string(), e))?;
    println!("summarization -> {} / {}", txt_path.display(), csv_path.display());
    Ok(())
}

fn run() -> Result<()> {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap handles --help/--version as "errors" with success status
            if e.use_stderr() {
                eprint!("{e}");
                std::process::exit(1);
            }
            print!("{e}");
            std::process::exit(0);
        }
    };
    match &cli.command {
        Command::InitConfig(args) => cmd_init_config(args),
        Command::Generate(args) => cmd_generate(args),
        Command::Fit(args) => cmd_fit(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Summarize(args) => cmd_summarize(args),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
