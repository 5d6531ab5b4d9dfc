use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use ocdl::ingest::{write_plane, PreprocessRecord};
use ocdl::persist::{append_metrics, export_dictionary_tiles, load_checkpoint, save_checkpoint};
use ocdl::{
    csc_objective, csc_solve, AdmmSettings, Algorithm, DatasetSource, LambdaRule, PreprocessOptions,
    PreprocessReport, TrainOptions, Trainer,
};

/// Online convolutional dictionary learning.
#[derive(Parser, Debug)]
#[command(name = "ocdl", version, about)]
struct Cli {
    /// Cap on worker threads; results do not depend on it.
    #[arg(long, global = true, env = "OCDL_THREADS")]
    threads: Option<usize>,

    /// File of `key = value` lines supplying any command flag. Flags given on
    /// the command line win.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Learn a dictionary from a directory of images in one pass.
    #[command(args_override_self = true)]
    Train(TrainArgs),
    /// Report coding objectives of a checkpoint's dictionary on a directory.
    #[command(args_override_self = true)]
    Eval(EvalArgs),
    /// Write a checkpoint's dictionary as a PNG tile grid.
    #[command(args_override_self = true)]
    Export(ExportArgs),
    /// Write preprocessed planes and a report for inspection.
    #[command(args_override_self = true)]
    Preprocess(PreprocessArgs),
}

#[derive(Args, Debug, Clone)]
struct SolverArgs {
    /// Initial ADMM penalty.
    #[arg(long, default_value_t = 10.0)]
    rho0: f64,
    #[arg(long, default_value_t = 300)]
    max_iter: usize,
    /// Absolute and relative stopping tolerance.
    #[arg(long, default_value_t = 1e-4)]
    eps: f64,
}

impl SolverArgs {
    fn settings(&self) -> AdmmSettings {
        AdmmSettings {
            rho0: self.rho0,
            max_iter: self.max_iter,
            ..AdmmSettings::default()
        }
        .with_tolerance(self.eps)
    }
}

#[derive(Args, Debug, Clone)]
struct LatticeArgs {
    /// Training lattice height; defaults to the first image's.
    #[arg(long, requires = "width")]
    height: Option<usize>,
    #[arg(long, requires = "height")]
    width: Option<usize>,
    /// Tikhonov high-pass regularization.
    #[arg(long, default_value_t = 5.0)]
    highpass_reg: f64,
    /// Accept 16-bit images (scaled by 1/65535).
    #[arg(long)]
    allow_16bit: bool,
}

impl LatticeArgs {
    fn options(&self) -> PreprocessOptions {
        PreprocessOptions {
            lattice: self.height.zip(self.width),
            highpass_reg: self.highpass_reg,
            allow_16bit: self.allow_16bit,
        }
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Number of filters.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 8)]
    filter_size: usize,
    /// alg1 or alg2 (default alg2).
    #[arg(long)]
    algorithm: Option<Algorithm>,
    /// Sparsity weight as a fraction of the first image's lambda_max.
    #[arg(long, default_value_t = 0.1)]
    lambda_frac: f64,
    /// Absolute sparsity weight; overrides --lambda-frac.
    #[arg(long)]
    lambda: Option<f64>,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    lattice: LatticeArgs,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Also checkpoint after every this many samples.
    #[arg(long)]
    checkpoint_every: Option<u64>,
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Visit images in a seeded random order instead of by name.
    #[arg(long)]
    shuffle_seed: Option<u64>,
    /// Continue from --checkpoint, skipping the samples it has seen.
    #[arg(long, requires = "checkpoint")]
    resume: bool,
    /// Re-randomize filters that stay zero for several samples.
    #[arg(long)]
    rescue_dead_filters: bool,
    /// Samples averaged for the reported trailing objective.
    #[arg(long, default_value_t = 10)]
    summary_window: usize,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Sparsity weight; defaults to the checkpoint's.
    #[arg(long)]
    lambda: Option<f64>,
    #[command(flatten)]
    solver: SolverArgs,
    #[command(flatten)]
    lattice: LatticeArgs,
    /// Per-image objectives as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    cols: usize,
}

#[derive(Args, Debug)]
struct PreprocessArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    lattice: LatticeArgs,
}

/// An error paired with the process exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn usage(error: anyhow::Error) -> Failure {
    Failure { code: 2, error }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        let code = match error.downcast_ref::<ocdl::Error>() {
            Some(ocdl::Error::Config(_) | ocdl::Error::InvalidParameter(_) | ocdl::Error::SupportTooLarge { .. }) => 2,
            _ => 1,
        };
        Failure { code, error }
    }
}

impl From<ocdl::Error> for Failure {
    fn from(e: ocdl::Error) -> Self {
        anyhow::Error::from(e).into()
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn run() -> Result<(), Failure> {
    let raw: Vec<String> = std::env::args().collect();
    let args = with_config_file(raw).map_err(usage)?;
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            let code = if e.use_stderr() { 2 } else { 0 };
            std::process::exit(code);
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(usage(anyhow!("--threads must be at least 1")));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| anyhow!("thread pool: {e}"))?;
    }
    match cli.command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Export(a) => export(a),
        Command::Preprocess(a) => preprocess(a),
    }
}

const COMMANDS: [&str; 4] = ["train", "eval", "export", "preprocess"];

/// Splices `--key value` pairs from the config file in right after the
/// command name, so explicit flags that follow override them.
fn with_config_file(mut args: Vec<String>) -> anyhow::Result<Vec<String>> {
    let mut path = None;
    for (i, a) in args.iter().enumerate() {
        if a == "--config" {
            path = Some(args.get(i + 1).cloned().ok_or_else(|| anyhow!("--config needs a file"))?);
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        }
    }
    let Some(path) = path else { return Ok(args) };
    let text = fs::read_to_string(&path).with_context(|| format!("reading config file {path}"))?;
    let mut injected = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("{path}:{}: expected key = value", n + 1))?;
        let flag = format!("--{}", key.trim().replace('_', "-"));
        match value.trim() {
            "true" => injected.push(flag),
            "false" => {}
            v => {
                injected.push(flag);
                injected.push(v.to_string());
            }
        }
    }
    let pos = args
        .iter()
        .position(|a| COMMANDS.contains(&a.as_str()))
        .ok_or_else(|| anyhow!("no command given"))?;
    args.splice(pos + 1..pos + 1, injected);
    Ok(args)
}

fn open_dataset(data: &Path, options: PreprocessOptions) -> Result<DatasetSource, Failure> {
    DatasetSource::open(data, options).map_err(Failure::from)
}

fn train(a: TrainArgs) -> Result<(), Failure> {
    let settings = a.solver.settings();
    settings.validate()?;
    if let Some(l) = a.lambda {
        if !(l > 0.0 && l.is_finite()) {
            return Err(usage(anyhow!("--lambda must be positive, got {l}")));
        }
    }
    if a.checkpoint_every == Some(0) {
        return Err(usage(anyhow!("--checkpoint-every must be at least 1")));
    }

    let resumed = if a.resume {
        let path = a.checkpoint.as_ref().expect("clap enforces --checkpoint");
        let ck = load_checkpoint(path).with_context(|| format!("resuming from {}", path.display()))?;
        if let Some(alg) = a.algorithm {
            if alg != ck.algorithm {
                return Err(usage(anyhow!("checkpoint was trained with {}, not {alg}", ck.algorithm)));
            }
        }
        if let Some(k) = a.k {
            if k != ck.dict.len() {
                return Err(usage(anyhow!("checkpoint has {} filters, not {k}", ck.dict.len())));
            }
        }
        Some(ck)
    } else {
        None
    };

    let mut options = a.lattice.options();
    if let Some(ck) = &resumed {
        options.lattice = Some(ck.history.dims());
    }
    let mut source = open_dataset(&a.data, options)?;
    if let Some(seed) = a.shuffle_seed {
        source.shuffle(seed);
    }
    let mut stream = source.stream();

    let mut trainer = match resumed {
        Some(ck) => {
            let skip = ck.sample_count();
            let t = Trainer::resume(ck, settings, a.rescue_dead_filters)?;
            for _ in 0..skip {
                if stream.next().transpose()?.is_none() {
                    break;
                }
            }
            t
        }
        None => {
            let k = a.k.ok_or_else(|| usage(anyhow!("--k is required unless resuming")))?;
            let lambda = match a.lambda {
                Some(l) => LambdaRule::Absolute(l),
                None => LambdaRule::Fraction(a.lambda_frac),
            };
            let opts = TrainOptions {
                algorithm: a.algorithm.unwrap_or(Algorithm::Alg2),
                k,
                filter_size: a.filter_size,
                lambda,
                settings,
                seed: a.seed,
                rescue_dead_filters: a.rescue_dead_filters,
            };
            let Some(first) = source.files().first() else {
                return Err(usage(anyhow!("no images in {}", a.data.display())));
            };
            let (s, _) = source.preprocess(first)?;
            if let Some(m) = &a.metrics {
                if m.exists() {
                    fs::remove_file(m).with_context(|| format!("replacing {}", m.display()))?;
                }
            }
            Trainer::start(&opts, &s)?
        }
    };

    let mut recent = Vec::new();
    let mut last = None;
    for s in stream {
        let s = s?;
        let row = trainer.process(&s)?;
        if let Some(m) = &a.metrics {
            append_metrics(&row, m)?;
        }
        if let (Some(path), Some(every)) = (&a.checkpoint, a.checkpoint_every) {
            if row.sample_index % every == 0 {
                save_checkpoint(&trainer.checkpoint(), path)?;
            }
        }
        recent.push(row.csc_objective);
        if recent.len() > a.summary_window.max(1) {
            recent.remove(0);
        }
        last = Some(s);
    }
    if let Some(path) = &a.checkpoint {
        save_checkpoint(&trainer.checkpoint(), path)?;
    }

    println!("algorithm: {}", trainer.algorithm());
    println!("samples: {}", trainer.samples_seen());
    println!("lambda: {:e}", trainer.lambda());
    if !recent.is_empty() {
        let mean = recent.iter().sum::<f64>() / recent.len() as f64;
        println!("trailing_mean_objective: {mean:.17e} (last {} samples)", recent.len());
    }
    if let Some(s) = last {
        let (_, obj) = trainer.code(&s)?;
        println!("final_objective: {obj:.17e}");
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<(), Failure> {
    let ck = load_checkpoint(&a.checkpoint).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let lambda = match a.lambda {
        Some(l) if !(l > 0.0 && l.is_finite()) => {
            return Err(usage(anyhow!("--lambda must be positive, got {l}")));
        }
        Some(l) => l,
        None => ck.lambda,
    };
    let settings = AdmmSettings {
        rho0: ck.rho0,
        ..a.solver.settings()
    };
    settings.validate()?;
    let source = open_dataset(&a.data, a.lattice.options())?;
    let mut objectives = Vec::with_capacity(source.len());
    for path in source.files() {
        let (s, _) = source.preprocess(path)?;
        let (maps, _) = csc_solve(&s, &ck.dict, lambda, &settings)?;
        let obj = csc_objective(&s, &ck.dict, &maps, lambda)?;
        println!("{}: {obj:.17e}", path.display());
        objectives.push((path.clone(), obj));
    }
    let mean = objectives.iter().map(|(_, o)| o).sum::<f64>() / objectives.len() as f64;
    println!("lambda: {lambda:e}");
    println!("mean_objective: {mean:.17e}");
    if let Some(csv) = &a.csv {
        let mut text = String::from("file,objective\n");
        for (p, o) in &objectives {
            text.push_str(&format!("{},{o:e}\n", p.display()));
        }
        fs::write(csv, text).with_context(|| format!("writing {}", csv.display()))?;
    }
    Ok(())
}

fn export(a: ExportArgs) -> Result<(), Failure> {
    if a.cols == 0 {
        return Err(usage(anyhow!("--cols must be at least 1")));
    }
    let ck = load_checkpoint(&a.checkpoint).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    export_dictionary_tiles(&ck.dict, &a.out, a.cols)?;
    let cols = a.cols.min(ck.dict.len());
    println!(
        "wrote {} filters as a {}x{} grid to {}",
        ck.dict.len(),
        ck.dict.len().div_ceil(cols),
        cols,
        a.out.display()
    );
    Ok(())
}

fn preprocess(a: PreprocessArgs) -> Result<(), Failure> {
    let source = open_dataset(&a.data, a.lattice.options())?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut report = PreprocessReport::default();
    for path in source.files() {
        let (plane, record): (_, PreprocessRecord) = source.preprocess(path)?;
        let stem = path
            .file_stem()
            .ok_or_else(|| anyhow!("{} has no file name", path.display()))?;
        let target = a.out.join(stem).with_extension("plane");
        if report.records.iter().any(|r: &PreprocessRecord| Path::new(&r.file).file_stem() == Some(stem)) {
            return Err(usage(anyhow!("two inputs map to {}", target.display())));
        }
        write_plane(&plane, &target)?;
        report.records.push(record);
    }
    let report_path = a.out.join("report.csv");
    report.write_csv(&report_path)?;
    println!(
        "preprocessed {} images at {}x{} into {}",
        report.records.len(),
        source.lattice().0,
        source.lattice().1,
        a.out.display()
    );
    Ok(())
}
