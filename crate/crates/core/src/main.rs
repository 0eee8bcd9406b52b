use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use tendonsense::config::RunConfig;
use tendonsense::fsio::write_atomic;
use tendonsense::motion::{build_corpus, window_and_normalize, Corpus};
use tendonsense::nn::{self, load_model, save_model, Model, ModelKind};
use tendonsense::nonlin::CorruptionConfig;
use tendonsense::par::Exec;
use tendonsense::teleop::{
    pred_vs_truth, read_sink_log, run_pipeline, write_pred_vs_truth, InferenceConfig, LatencyStats, RobotSink,
    SinkClient, SinkMode, StreamSource,
};
use tendonsense::verify;
use tendonsense::{Error, Result};

#[derive(Parser)]
#[command(
    name = "tendonsense",
    version,
    about = "Tendon-suit shoulder angle estimation and teleoperation"
)]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Output root (overrides paths.out_dir).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Force the sequential code path.
    #[arg(long, global = true)]
    sequential: bool,
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesize the corrupted sensor corpus.
    GenData {
        #[arg(long)]
        scale: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Disable hysteresis, creep and noise.
        #[arg(long)]
        clean: bool,
    },
    /// Train one model on the corpus.
    Train {
        #[arg(long)]
        model: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        /// Record test RMSE every N epochs.
        #[arg(long)]
        eval_every: Option<usize>,
    },
    /// Test-set RMSE of every trained model.
    Eval,
    /// Finite-difference gradient check of all architectures.
    GradCheck {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Orientation, nonlinearity and suit self-checks.
    Verify,
    /// Robot stand-in: accept one connection and log commands.
    Sink {
        #[command(flatten)]
        net: NetArgs,
        #[arg(long)]
        ack_delay_ms: Option<u64>,
        /// Log path (default <out>/teleop/sink_log.csv).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Run the real-time pipeline against a sink.
    Stream {
        /// Model slug (lnnet, ennet, mlp) or model file path.
        #[arg(long, default_value = "ennet")]
        model: String,
        #[command(flatten)]
        net: NetArgs,
        #[command(flatten)]
        source: SourceArgs,
        /// Seconds to run; 0 runs until the stream ends or Ctrl-C.
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long)]
        loop_hz: Option<f64>,
    },
    /// Merge a sink log with ground truth into pred_vs_truth.csv.
    Report {
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        stats: Option<PathBuf>,
    },
}

#[derive(Args)]
struct NetArgs {
    #[arg(long)]
    addr: Option<String>,
    #[arg(long)]
    mode: Option<SinkMode>,
}

#[derive(Args)]
struct SourceArgs {
    /// Replay a trajectory CSV instead of the live simulator.
    #[arg(long)]
    replay: Option<PathBuf>,
    /// Loop the replay file.
    #[arg(long = "loop")]
    looping: bool,
    /// Live simulator length in frames.
    #[arg(long, default_value_t = 15_000)]
    frames: usize,
    /// Live simulator trajectory seed.
    #[arg(long, default_value_t = 99)]
    source_seed: u64,
    #[arg(long)]
    rate_hz: Option<f64>,
}

/// How a stream's frames were produced, so `report` can rebuild the truth.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum SourceDesc {
    Replay {
        path: PathBuf,
        looping: bool,
        rate_hz: f64,
    },
    Live {
        layout: Option<PathBuf>,
        corruption: CorruptionConfig,
        frames: usize,
        seed: u64,
        rate_hz: f64,
    },
}

impl SourceDesc {
    fn open(&self) -> Result<StreamSource> {
        match self {
            SourceDesc::Replay { path, looping, rate_hz } => StreamSource::replay_file(path, *rate_hz, *looping),
            SourceDesc::Live {
                layout,
                corruption,
                frames,
                seed,
                rate_hz,
            } => {
                let layout = match layout {
                    Some(p) => tendonsense::suitsim::RoutingLayout::load(p)?,
                    None => tendonsense::suitsim::RoutingLayout::default_layout(),
                };
                StreamSource::live(&layout, corruption, *frames, *seed, *rate_hz)
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
struct StreamRecord {
    model: PathBuf,
    source: SourceDesc,
    stats: LatencyStats,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp_millis()
        .init();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(d) = &cli.out_dir {
        cfg.paths.out_dir = d.clone();
    }
    let exec = if cli.sequential {
        Exec::Sequential
    } else {
        Exec::default()
    };

    match cli.cmd {
        Cmd::GenData { scale, seed, clean } => {
            if let Some(s) = scale {
                cfg.corpus.scale = s;
            }
            if let Some(s) = seed {
                cfg.corpus.seed = s;
            }
            if clean {
                cfg.corruption.enabled = false;
            }
            cfg.validate()?;
            let layout = cfg.layout()?;
            let dir = cfg.corpus_dir();
            std::fs::create_dir_all(&dir)?;
            cfg.write_echo(&dir)?;
            let corpus = build_corpus(&cfg.corpus, &layout, &cfg.corruption, &dir)?;
            println!(
                "wrote {} trajectories, {} frames to {}",
                corpus.trajectories.len(),
                corpus.total_frames(),
                dir.display()
            );
        }
        Cmd::Train {
            model,
            seed,
            epochs,
            batch_size,
            eval_every,
        } => {
            let kind = ModelKind::from_slug(&model)?;
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            if let Some(b) = batch_size {
                cfg.train.batch_size = b;
            }
            if let Some(e) = eval_every {
                cfg.train.eval_every = e;
            }
            cfg.validate()?;
            let corpus = load_corpus(&cfg)?;
            let spec = cfg.model_spec(kind);
            let data = window_and_normalize(&corpus, spec.n_steps, &cfg.split)?;
            let dir = cfg.models_dir();
            std::fs::create_dir_all(&dir)?;
            cfg.write_echo(&dir)?;
            let (params, report) = nn::train(&spec, &data.train, Some(&data.test), &cfg.train, exec)?;
            let model = Model {
                spec,
                scaler: data.train.scaler,
                params,
            };
            save_model(&model_path(&cfg, kind), &model)?;
            let mut progress = String::new();
            for e in &report.epochs {
                progress.push_str(&serde_json::to_string(e)?);
                progress.push('\n');
            }
            write_atomic(
                &dir.join(format!("{}_progress.jsonl", kind.slug())),
                progress.as_bytes(),
            )?;
            write_json(&dir.join(format!("{}_report.json", kind.slug())), &report)?;
            let test = report.test_rmse_deg.unwrap_or([f64::NAN; 2]);
            println!(
                "{kind}: {} epochs (best {}), test RMSE theta {:.3} deg, phi {:.3} deg, {:.1} s",
                report.epochs.len(),
                report.best_epoch,
                test[0],
                test[1],
                report.wall_time_s
            );
        }
        Cmd::Eval => {
            cfg.validate()?;
            let corpus = load_corpus(&cfg)?;
            let mut rows = Vec::new();
            for kind in [ModelKind::BaselineMLP, ModelKind::LNNet, ModelKind::ENNet] {
                let path = model_path(&cfg, kind);
                if !path.exists() {
                    log::warn!("no trained {kind} at {}", path.display());
                    continue;
                }
                let model = load_model(&path, None)?;
                let data = window_and_normalize(&corpus, model.spec.n_steps, &cfg.split)?;
                let test = data.test.rescaled(model.scaler);
                let rmse = nn::evaluate(&model.spec, &model.params, &test)?;
                rows.push(EvalRow {
                    model: kind.to_string(),
                    theta_rmse_deg: rmse[0],
                    phi_rmse_deg: rmse[1],
                    test_windows: test.len(),
                });
            }
            if rows.is_empty() {
                return Err(Error::Validation("no trained models found; run train first".into()));
            }
            let table = eval_table(&rows);
            print!("{table}");
            let out = &cfg.paths.out_dir;
            cfg.write_echo(out)?;
            write_atomic(&out.join("eval.txt"), table.as_bytes())?;
            let mut csv = String::from("model,theta_rmse_deg,phi_rmse_deg,test_windows\n");
            for r in &rows {
                csv.push_str(&format!(
                    "{},{},{},{}\n",
                    r.model, r.theta_rmse_deg, r.phi_rmse_deg, r.test_windows
                ));
            }
            write_atomic(&out.join("eval.csv"), csv.as_bytes())?;
            write_json(&out.join("eval.json"), &rows)?;
        }
        Cmd::GradCheck { seed } => {
            let mut ok = true;
            for kind in ModelKind::ALL {
                let r = nn::grad_check(kind, seed)?;
                println!(
                    "{} {kind}: max relative error {:.3e}",
                    if r.passed { "PASS" } else { "FAIL" },
                    r.max_rel_error
                );
                ok &= r.passed;
            }
            return Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(1) });
        }
        Cmd::Verify => {
            let mut ok = true;
            for c in verify::run_all()? {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                ok &= c.passed;
            }
            return Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(1) });
        }
        Cmd::Sink { net, ack_delay_ms, log } => {
            apply_net(&mut cfg, net);
            if let Some(d) = ack_delay_ms {
                cfg.teleop.ack_delay_ms = d;
            }
            cfg.validate()?;
            let dir = teleop_dir(&cfg);
            std::fs::create_dir_all(&dir)?;
            let log = log.unwrap_or_else(|| dir.join("sink_log.csv"));
            let sink = RobotSink::bind(
                cfg.teleop.addr.as_str(),
                cfg.teleop.mode,
                Duration::from_millis(cfg.teleop.ack_delay_ms),
            )?;
            // Printed for scripts that bind port 0.
            println!("listening on {}", sink.local_addr()?);
            let stats = sink.run(&log)?;
            write_json(&dir.join("sink_stats.json"), &stats)?;
            println!("{}", serde_json::to_string(&stats)?);
        }
        Cmd::Stream {
            model,
            net,
            source,
            duration,
            loop_hz,
        } => {
            apply_net(&mut cfg, net);
            if let Some(d) = duration {
                cfg.teleop.duration_s = d;
            }
            if let Some(h) = loop_hz {
                cfg.teleop.loop_hz = h;
            }
            if let Some(r) = source.rate_hz {
                cfg.teleop.rate_hz = r;
            }
            cfg.validate()?;
            let model_file = resolve_model(&cfg, &model);
            let model = load_model(&model_file, None)?;
            let desc = match source.replay {
                Some(path) => SourceDesc::Replay {
                    path,
                    looping: source.looping,
                    rate_hz: cfg.teleop.rate_hz,
                },
                None => SourceDesc::Live {
                    layout: cfg.paths.layout.clone(),
                    corruption: load_corpus_manifest(&cfg)?.resolved_corruption,
                    frames: source.frames,
                    seed: source.source_seed,
                    rate_hz: cfg.teleop.rate_hz,
                },
            };
            let src = desc.open()?;
            let dir = teleop_dir(&cfg);
            std::fs::create_dir_all(&dir)?;
            cfg.write_echo(&dir)?;

            let addr = cfg
                .teleop
                .addr
                .parse()
                .map_err(|e| Error::InvalidArgument(format!("addr '{}': {e}", cfg.teleop.addr)))?;
            let client = SinkClient::connect(addr, cfg.teleop.mode)?;
            let stop = Arc::new(AtomicBool::new(false));
            {
                let stop = stop.clone();
                if let Err(e) = ctrlc::set_handler(move || stop.store(true, Ordering::Relaxed)) {
                    log::warn!("cannot install Ctrl-C handler: {e}");
                }
            }
            let inf = InferenceConfig {
                loop_hz: cfg.teleop.loop_hz,
                duration: (cfg.teleop.duration_s > 0.0).then(|| Duration::from_secs_f64(cfg.teleop.duration_s)),
                ..InferenceConfig::default()
            };
            let stats = run_pipeline(&model, &src, client, &inf, &stop)?;
            println!(
                "{} commands in {:.1} s ({:.1} Hz), {} send failures, {} torn reads",
                stats.commands_delivered, stats.elapsed_s, stats.command_rate_hz, stats.send_failures, stats.torn_reads
            );
            write_json(
                &dir.join("stream_stats.json"),
                &StreamRecord {
                    model: model_file,
                    source: desc,
                    stats,
                },
            )?;
        }
        Cmd::Report { log, stats } => {
            let dir = teleop_dir(&cfg);
            let log = log.unwrap_or_else(|| dir.join("sink_log.csv"));
            let stats = stats.unwrap_or_else(|| dir.join("stream_stats.json"));
            let bytes = tendonsense::fsio::read(&stats)?;
            let record: StreamRecord =
                serde_json::from_slice(&bytes).map_err(|e| Error::Validation(format!("{}: {e}", stats.display())))?;
            let rows = read_sink_log(&log)?;
            let source = record.source.open()?;
            let paired = pred_vs_truth(&rows, &source)?;
            std::fs::create_dir_all(&dir)?;
            cfg.write_echo(&dir)?;
            write_pred_vs_truth(&dir.join("pred_vs_truth.csv"), &paired)?;
            let summary = latency_summary(&record.stats, &paired);
            print!("{summary}");
            write_atomic(&dir.join("latency_summary.txt"), summary.as_bytes())?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct EvalRow {
    model: String,
    theta_rmse_deg: f64,
    phi_rmse_deg: f64,
    test_windows: usize,
}

fn eval_table(rows: &[EvalRow]) -> String {
    let mut s = String::from("RMSE over the testing set (degrees)\n");
    s.push_str(&format!("{:<8} {:>8} {:>8}\n", "Model", "theta", "phi"));
    for r in rows {
        s.push_str(&format!(
            "{:<8} {:>8.3} {:>8.3}\n",
            r.model, r.theta_rmse_deg, r.phi_rmse_deg
        ));
    }
    s
}

fn latency_summary(stats: &LatencyStats, paired: &[tendonsense::teleop::PredVsTruth]) -> String {
    let mut s = String::new();
    let mode = stats.mode.map_or("?".to_string(), |m| format!("{m:?}").to_lowercase());
    s.push_str(&format!(
        "mode {mode}: {} commands in {:.2} s ({:.1} Hz), {} send failures, {} torn reads\n",
        stats.commands_delivered, stats.elapsed_s, stats.command_rate_hz, stats.send_failures, stats.torn_reads
    ));
    s.push_str(&format!(
        "{:<26} {:>8} {:>8} {:>8} {:>8}\n",
        "stage (ms)", "mean", "p50", "p95", "max"
    ));
    for (name, st) in [
        ("acquisition->inference", &stats.acquisition_to_inference),
        ("inference", &stats.inference),
        ("send", &stats.send),
    ] {
        s.push_str(&format!(
            "{name:<26} {:>8.3} {:>8.3} {:>8.3} {:>8.3}\n",
            st.mean_ms, st.p50_ms, st.p95_ms, st.max_ms
        ));
    }
    s.push_str(&format!("max staleness {:.1} ms\n", stats.max_staleness_s * 1e3));
    if !paired.is_empty() {
        let rmse = |f: fn(&tendonsense::teleop::PredVsTruth) -> f64| {
            (paired.iter().map(|r| f(r).powi(2)).sum::<f64>() / paired.len() as f64).sqrt()
        };
        s.push_str(&format!(
            "tracking RMSE over {} commands: theta {:.3} deg, phi {:.3} deg\n",
            paired.len(),
            rmse(|r| r.theta_pred - r.theta_true),
            rmse(|r| r.phi_pred - r.phi_true)
        ));
    }
    s
}

fn apply_net(cfg: &mut RunConfig, net: NetArgs) {
    if let Some(a) = net.addr {
        cfg.teleop.addr = a;
    }
    if let Some(m) = net.mode {
        cfg.teleop.mode = m;
    }
}

fn load_corpus(cfg: &RunConfig) -> Result<Corpus> {
    let dir = cfg.corpus_dir();
    if !dir.join(tendonsense::motion::corpus::MANIFEST_FILE).exists() {
        return Err(Error::Validation(format!(
            "no corpus in {}; run gen-data first",
            dir.display()
        )));
    }
    Corpus::load(&dir)
}

fn load_corpus_manifest(cfg: &RunConfig) -> Result<tendonsense::motion::CorpusManifest> {
    let dir = cfg.corpus_dir();
    if !dir.join(tendonsense::motion::corpus::MANIFEST_FILE).exists() {
        return Err(Error::Validation(format!(
            "live source needs the corpus corruption in {}; run gen-data first or pass --replay",
            dir.display()
        )));
    }
    tendonsense::motion::corpus::load_manifest(&dir)
}

fn model_path(cfg: &RunConfig, kind: ModelKind) -> PathBuf {
    cfg.models_dir().join(format!("{}.model", kind.slug()))
}

fn resolve_model(cfg: &RunConfig, name: &str) -> PathBuf {
    match ModelKind::from_slug(name) {
        Ok(kind) if !Path::new(name).exists() => model_path(cfg, kind),
        _ => PathBuf::from(name),
    }
}

fn teleop_dir(cfg: &RunConfig) -> PathBuf {
    cfg.paths.out_dir.join("teleop")
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    write_atomic(path, text.as_bytes())
}
