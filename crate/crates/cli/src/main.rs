use std::fs::File;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use linn::config::{parse_overrides, resolve_config, QuatOrder};
use linn::data::{
    load_checkpoint, load_dataset, load_wav, make_chunks, parse_pose_file, save_checkpoint,
    save_wav, synth_dataset, Checkpoint, SynthSpec, TrainingChunk,
};
use linn::efficiency::{count_macs, measure_rtf};
use linn::metrics::evaluate;
use linn::probe::{probe, to_csv, ProbeGrid};
use linn::train::{train_model, EpochLog};
use linn::{Linn, LinnConfig};

#[derive(Parser, Debug)]
#[command(
    name = "linn",
    version,
    about = "Binaural rendering from mono audio and source poses"
)]
struct Cli {
    /// Seed for every random draw of the run.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads; 1 is the deterministic baseline.
    #[arg(long, global = true, env = "LINN_THREADS")]
    threads: Option<usize>,

    /// TOML file with configuration overrides.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Copy, Default)]
struct AblationFlags {
    /// Geometric warp only, no learned warp correction.
    #[arg(long)]
    no_tdw_neural: bool,
    /// Unity gain mask: output equals the warped signal.
    #[arg(long)]
    no_ibc: bool,
    /// Zero the frequency encoding.
    #[arg(long)]
    no_freqpe: bool,
    /// Zero the time encoding.
    #[arg(long)]
    no_timepe: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model on a dataset directory.
    Train {
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        /// Output directory for checkpoints, log and resolved config.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Start from this checkpoint instead of a fresh model.
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        /// Training chunk length in samples.
        #[arg(long)]
        chunk_len: Option<usize>,
        #[command(flatten)]
        ablation: AblationFlags,
    },
    /// Render a mono WAV and pose file to a stereo WAV.
    Render {
        #[arg(long, value_name = "WAV")]
        mono: PathBuf,
        #[arg(long, value_name = "FILE")]
        pose: PathBuf,
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "WAV")]
        out: PathBuf,
        /// Streaming block length in samples (a multiple of the hop).
        #[arg(long, default_value_t = 48_128)]
        block: usize,
        #[command(flatten)]
        ablation: AblationFlags,
    },
    /// Compare a stereo estimate against a stereo reference.
    Eval {
        #[arg(long, value_name = "WAV")]
        estimate: PathBuf,
        #[arg(long, value_name = "WAV")]
        reference: PathBuf,
        /// Also write the report as JSON.
        #[arg(long, value_name = "FILE")]
        json: Option<PathBuf>,
    },
    /// Report parameter count, MAC accounting and real-time factor.
    Bench {
        /// Model to time; a freshly initialized default model otherwise.
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
        /// Audio length rendered per repetition.
        #[arg(long, default_value_t = 10.0)]
        seconds: f64,
        #[arg(long, default_value_t = 3)]
        repetitions: usize,
        /// Also write the report as JSON.
        #[arg(long, value_name = "FILE")]
        json: Option<PathBuf>,
        #[command(flatten)]
        ablation: AblationFlags,
    },
    /// Mean corrections per ear over a grid of source positions.
    Probe {
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        /// `arc:radius=R,start=DEG,end=DEG,steps=N` or
        /// `line:x=X,start=Y0,end=Y1,steps=N` (optional `height=Z`).
        #[arg(long)]
        grid: String,
        #[arg(long, value_name = "CSV")]
        out: PathBuf,
    },
    /// Write a seeded synthetic dataset with an analytic binaural target.
    SynthData {
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        n_items: usize,
        /// Item length in seconds.
        #[arg(long, default_value_t = 1.6)]
        duration: f64,
    },
}

/// Flag-level overrides, the rightmost configuration layer.
#[derive(Default)]
struct Overrides(toml::Table);

impl Overrides {
    fn set(&mut self, section: &str, key: &str, value: impl Into<toml::Value>) {
        let entry = self
            .0
            .entry(section)
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        if let toml::Value::Table(t) = entry {
            t.insert(key.to_string(), value.into());
        }
    }

    fn ablation(&mut self, flags: &AblationFlags) {
        for (key, on) in [
            ("no_tdw_neural", flags.no_tdw_neural),
            ("no_ibc", flags.no_ibc),
            ("no_freqpe", flags.no_freqpe),
            ("no_timepe", flags.no_timepe),
        ] {
            if on {
                self.set("ablation", key, true);
            }
        }
    }
}

fn to_i64(v: usize) -> Result<i64> {
    i64::try_from(v).context("value too large")
}

fn resolve(cli: &Cli, checkpoint: Option<&LinnConfig>, flags: Overrides) -> Result<LinnConfig> {
    let file = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read config file {}", path.display()))?;
            Some(parse_overrides(&text)?)
        }
        None => None,
    };
    let mut flags = flags;
    if let Some(seed) = cli.seed {
        flags.set(
            "train",
            "seed",
            i64::try_from(seed).context("seed must be below 2^63")?,
        );
    }
    let (cfg, warnings) = resolve_config(checkpoint, file.as_ref(), &flags.0)?;
    for w in warnings {
        log::warn!("{w}");
    }
    Ok(cfg)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

/// `{"config": ..., "report": ...}` with the resolved configuration echoed.
fn json_with_config(cfg: &LinnConfig, report: &str) -> Result<String> {
    let report: serde_json::Value = serde_json::from_str(report)?;
    let config = serde_json::to_value(cfg)?;
    Ok(serde_json::to_string_pretty(
        &serde_json::json!({ "config": config, "report": report }),
    )?)
}

fn chunks_of(items: &[linn::data::DatasetItem], cfg: &LinnConfig) -> Result<Vec<TrainingChunk>> {
    let mut out = Vec::new();
    for item in items {
        out.extend(make_chunks(item, cfg.model.chunk_len, cfg.train.chunk_hop)?);
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    cli: &Cli,
    data: &Path,
    out: &Path,
    checkpoint: Option<&Path>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    lr: Option<f64>,
    chunk_len: Option<usize>,
    ablation: &AblationFlags,
) -> Result<()> {
    let start = checkpoint.map(load_checkpoint).transpose()?;
    let mut flags = Overrides::default();
    if let Some(v) = epochs {
        flags.set("train", "epochs", to_i64(v)?);
    }
    if let Some(v) = batch_size {
        flags.set("train", "batch_size", to_i64(v)?);
    }
    if let Some(v) = lr {
        flags.set("train", "lr_max", v);
    }
    if let Some(v) = chunk_len {
        flags.set("model", "chunk_len", to_i64(v)?);
    }
    flags.ablation(ablation);
    let cfg = resolve(cli, start.as_ref().map(|c| &c.config), flags)?;

    let dataset = load_dataset(data, &cfg.data, cfg.model.pose_rate)?;
    let train_chunks = chunks_of(&dataset.train, &cfg)?;
    let valid_chunks = chunks_of(&dataset.valid, &cfg)?;
    log::info!(
        "{} training chunks from {} items, {} validation chunks from {} items",
        train_chunks.len(),
        dataset.train.len(),
        valid_chunks.len(),
        dataset.valid.len()
    );

    std::fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    write_text(&out.join("config.toml"), &cfg.to_toml())?;
    let log_path = out.join("train_log.csv");
    let mut log_file =
        File::create(&log_path).with_context(|| format!("cannot create {}", log_path.display()))?;
    writeln!(log_file, "{}", EpochLog::CSV_HEADER)?;
    let mut log_error = None;
    let model = match start {
        Some(ck) => {
            let mut m = ck.model;
            m.ablation = cfg.ablation;
            m
        }
        None => Linn::new(cfg.model, cfg.ablation, cfg.train.seed)?,
    };
    let outcome = train_model(model, &cfg, &train_chunks, &valid_chunks, |entry| {
        if log_error.is_none() {
            if let Err(e) = writeln!(log_file, "{}", entry.csv_row()).and_then(|_| log_file.flush())
            {
                log_error = Some(e);
            }
        }
    })?;
    if let Some(e) = log_error {
        return Err(e).with_context(|| format!("cannot write {}", log_path.display()));
    }
    save_checkpoint(
        out.join("final.ckpt"),
        &Checkpoint::new(cfg, outcome.final_model),
    )?;
    save_checkpoint(
        out.join("best.ckpt"),
        &Checkpoint::new(cfg, outcome.best_model),
    )?;
    println!("initial_valid_loss={}", outcome.initial_valid);
    println!("best_epoch={}", outcome.best_epoch);
    println!("best_valid_loss={}", outcome.best_valid);
    Ok(())
}

fn load_model(cli: &Cli, path: &Path, ablation: &AblationFlags) -> Result<(LinnConfig, Linn<f32>)> {
    let ck = load_checkpoint(path)?;
    let mut flags = Overrides::default();
    flags.ablation(ablation);
    let cfg = resolve(cli, Some(&ck.config), flags)?;
    let mut model = ck.model;
    model.ablation = cfg.ablation;
    Ok((cfg, model))
}

fn cmd_render(
    cli: &Cli,
    mono: &Path,
    pose: &Path,
    checkpoint: &Path,
    out: &Path,
    block: usize,
    ablation: &AblationFlags,
) -> Result<()> {
    let (cfg, model) = load_model(cli, checkpoint, ablation)?;
    let audio = load_wav(mono, cfg.model.warp.fs)?;
    if audio.num_channels() != 1 {
        bail!(
            "{} has {} channels, expected mono",
            mono.display(),
            audio.num_channels()
        );
    }
    let order: QuatOrder = cfg.data.quat_order;
    let track = parse_pose_file(pose, order, cfg.model.pose_rate)?;
    let y = model.render_streaming(&audio, &track, block)?;
    save_wav(out, &y)?;
    Ok(())
}

fn cmd_eval(cli: &Cli, estimate: &Path, reference: &Path, json: Option<&Path>) -> Result<()> {
    let cfg = resolve(cli, None, Overrides::default())?;
    let y = load_wav(estimate, cfg.data.sample_rate)?;
    let y_ref = load_wav(reference, cfg.data.sample_rate)?;
    if y.num_channels() != 2 || y_ref.num_channels() != 2 {
        bail!(
            "evaluation needs stereo files, got {} and {} channels",
            y.num_channels(),
            y_ref.num_channels()
        );
    }
    if y.len() != y_ref.len() {
        bail!(
            "length mismatch: estimate has {} samples, reference {}",
            y.len(),
            y_ref.len()
        );
    }
    let report = evaluate(&y, &y_ref, &cfg.model.stft, cfg.metrics.energy_floor)?;
    print!("{}", report.to_text());
    if let Some(path) = json {
        write_text(path, &json_with_config(&cfg, &report.to_json())?)?;
    }
    Ok(())
}

fn cmd_bench(
    cli: &Cli,
    checkpoint: Option<&Path>,
    seconds: f64,
    repetitions: usize,
    json: Option<&Path>,
    ablation: &AblationFlags,
) -> Result<()> {
    let (cfg, model) = match checkpoint {
        Some(path) => load_model(cli, path, ablation)?,
        None => {
            let mut flags = Overrides::default();
            flags.ablation(ablation);
            let cfg = resolve(cli, None, flags)?;
            let model = Linn::new(cfg.model, cfg.ablation, cfg.train.seed)?;
            (cfg, model)
        }
    };
    let mut report = count_macs(&cfg.model, &cfg.ablation)?;
    let parallel = cli
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    report.segment_seconds = seconds;
    report.repetitions = repetitions;
    report.rtf_single_thread = Some(measure_rtf(&model, seconds, repetitions, 1)?);
    report.rtf_parallel = Some(measure_rtf(&model, seconds, repetitions, parallel)?);
    report.parallel_threads = parallel;
    print!("{}", report.to_text());
    if let Some(path) = json {
        write_text(path, &json_with_config(&cfg, &report.to_json())?)?;
    }
    Ok(())
}

fn cmd_probe(cli: &Cli, checkpoint: &Path, grid: &str, out: &Path) -> Result<()> {
    let (cfg, model) = load_model(cli, checkpoint, &AblationFlags::default())?;
    let grid: ProbeGrid = grid.parse()?;
    let rows = probe(&model, &grid)?;
    write_text(out, &to_csv(&rows))?;
    let mut sidecar = out.as_os_str().to_owned();
    sidecar.push(".config.toml");
    write_text(Path::new(&sidecar), &cfg.to_toml())?;
    Ok(())
}

fn cmd_synth_data(cli: &Cli, out: &Path, n_items: usize, duration: f64) -> Result<()> {
    let spec = SynthSpec {
        seed: cli.seed.unwrap_or(0),
        n_items,
        duration,
        ..SynthSpec::default()
    };
    let oracle = synth_dataset(out, &spec)?;
    println!("items={}", oracle.items.len());
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("cannot configure the worker pool")?;
    }
    match &cli.command {
        Command::Train {
            data,
            out,
            checkpoint,
            epochs,
            batch_size,
            lr,
            chunk_len,
            ablation,
        } => cmd_train(
            cli,
            data,
            out,
            checkpoint.as_deref(),
            *epochs,
            *batch_size,
            *lr,
            *chunk_len,
            ablation,
        ),
        Command::Render {
            mono,
            pose,
            checkpoint,
            out,
            block,
            ablation,
        } => cmd_render(cli, mono, pose, checkpoint, out, *block, ablation),
        Command::Eval {
            estimate,
            reference,
            json,
        } => cmd_eval(cli, estimate, reference, json.as_deref()),
        Command::Bench {
            checkpoint,
            seconds,
            repetitions,
            json,
            ablation,
        } => cmd_bench(
            cli,
            checkpoint.as_deref(),
            *seconds,
            *repetitions,
            json.as_deref(),
            ablation,
        ),
        Command::Probe {
            checkpoint,
            grid,
            out,
        } => cmd_probe(cli, checkpoint, grid, out),
        Command::SynthData {
            out,
            n_items,
            duration,
        } => cmd_synth_data(cli, out, *n_items, *duration),
    }
}

fn error_kind(err: &anyhow::Error) -> &'static str {
    err.chain()
        .find_map(|e| {
            e.downcast_ref::<linn::Error>()
                .map(linn::Error::kind)
                .or_else(|| e.downcast_ref::<std::io::Error>().map(|_| "io"))
                .or_else(|| e.downcast_ref::<serde_json::Error>().map(|_| "format"))
        })
        .unwrap_or("input")
}

/// Context chain joined by `: `, stopping at the first library error, whose
/// own message already includes its cause.
fn error_message(err: &anyhow::Error) -> String {
    let mut parts = Vec::new();
    for e in err.chain() {
        parts.push(e.to_string());
        if e.downcast_ref::<linn::Error>().is_some() {
            break;
        }
    }
    parts.join(": ")
}

/// `error: kind=<kind> message="<text>"` on a single line.
fn error_line(kind: &str, message: &str) -> String {
    let flat = message.split_whitespace().collect::<Vec<_>>().join(" ");
    format!("error: kind={kind} message={:?}", flat)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            eprintln!(
                "{}",
                error_line("usage", first.trim_start_matches("error: "))
            );
            return ExitCode::from(2);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(error_kind(&e), &error_message(&e)));
            ExitCode::FAILURE
        }
    }
}
