mod config;
mod files;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use proctor_core::face::{FaceGeometryReport, GazeClass, MouthState, PoseZone};
use proctor_core::features::Preprocessor;
use proctor_core::ingest::{read_session, SessionStream};
use proctor_core::metrics::{format_comparison, EvalReport};
use proctor_core::pipeline::{
    evaluate_static, evaluate_temporal, extract_session, fit_preprocessor, train_static,
    train_temporal, FrameExtractor,
};
use proctor_core::static_proctor::GbdtModel;
use proctor_core::synth::{
    benchmark_plan, generate_session, load_scripts, Split, DEFAULT_BENCHMARK_SEED,
};
use proctor_core::temporal::{LstmModel, StreamScorer};

use config::{ConfigArg, ModelFlags, RunConfig};

#[derive(Parser)]
#[command(name = "proctor", version, about = "Exam proctoring from face and hand streams")]
struct Cli {
    #[command(flatten)]
    config: ConfigArg,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate labeled sessions from behavior scripts, or the default benchmark.
    Simulate {
        /// Script file (one script or a list). Omit for the benchmark.
        #[arg(long)]
        script: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Benchmark seed.
        #[arg(long, default_value_t = DEFAULT_BENCHMARK_SEED)]
        seed: u64,
    },
    /// Turn session files into per-frame feature tables.
    Extract {
        /// Session file or directory of `.jsonl` sessions.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a static or temporal model on feature tables.
    Train {
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long)]
        train: PathBuf,
        /// Held-out tables for threshold selection (and LSTM model selection).
        #[arg(long)]
        validation: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Reused when it exists, fitted on `--train` and written otherwise.
        /// Defaults to `preprocessor.json` beside `--out`.
        #[arg(long)]
        preprocessor: Option<PathBuf>,
        #[command(flatten)]
        flags: ModelFlags,
    },
    /// Score feature tables and print the side-by-side comparison.
    Evaluate {
        #[arg(long = "static")]
        static_model: Option<PathBuf>,
        #[arg(long)]
        temporal: Option<PathBuf>,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        preprocessor: PathBuf,
        /// Write the reports as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Replay one session and print a line of scores per frame.
    Stream {
        #[arg(long)]
        session: PathBuf,
        #[arg(long)]
        preprocessor: PathBuf,
        #[arg(long = "static")]
        static_model: Option<PathBuf>,
        #[arg(long)]
        temporal: Option<PathBuf>,
        /// Throttle to this many frames per second.
        #[arg(long)]
        rate: Option<f64>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Kind {
    Static,
    Temporal,
}

/// Usage and configuration problems exit with 2, everything else with 1.
enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn usage<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Usage(e.into())
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = RunConfig::load(cli.config.config.as_deref())
        .map_err(usage)
        .and_then(|cfg| run(cli.cmd, &cfg));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            report(&e);
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            report(&e);
            ExitCode::from(1)
        }
    }
}

/// Prints the error chain, skipping causes already spelled out by an outer
/// message.
fn report(e: &anyhow::Error) {
    let mut msg = e.to_string();
    for cause in e.chain().skip(1) {
        let c = cause.to_string();
        if !msg.contains(&c) {
            msg = format!("{msg}: {c}");
        }
    }
    eprintln!("error: {msg}");
}

fn run(cmd: Cmd, cfg: &RunConfig) -> CmdResult {
    match cmd {
        Cmd::Simulate { script, out, seed } => simulate(script.as_deref(), &out, seed),
        Cmd::Extract { input, out } => extract(&input, &out, cfg),
        Cmd::Train {
            kind,
            train,
            validation,
            out,
            preprocessor,
            flags,
        } => {
            let pre_path = preprocessor
                .unwrap_or_else(|| out.parent().unwrap_or(Path::new(".")).join("preprocessor.json"));
            train_cmd(kind, &train, validation.as_deref(), &out, &pre_path, &flags, cfg)
        }
        Cmd::Evaluate {
            static_model,
            temporal,
            features,
            preprocessor,
            out,
        } => evaluate(static_model.as_deref(), temporal.as_deref(), &features, &preprocessor, out.as_deref()),
        Cmd::Stream {
            session,
            preprocessor,
            static_model,
            temporal,
            rate,
        } => stream(&session, &preprocessor, static_model.as_deref(), temporal.as_deref(), rate, cfg),
    }
}

#[derive(Serialize)]
struct ManifestEntry {
    session_id: String,
    split: Option<&'static str>,
    path: String,
    frames: usize,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest {
    seed: Option<u64>,
    sessions: Vec<ManifestEntry>,
}

fn split_name(s: Split) -> &'static str {
    match s {
        Split::Train => "train",
        Split::Validation => "validation",
        Split::Test => "test",
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| dir.display().to_string())?;
    }
    fs::write(path, bytes).with_context(|| path.display().to_string())
}

fn simulate(script: Option<&Path>, out: &Path, seed: u64) -> CmdResult {
    let planned: Vec<_> = match script {
        Some(p) => load_scripts(p).map_err(usage)?.into_iter().map(|s| (s, None)).collect(),
        None => benchmark_plan(seed)
            .into_iter()
            .map(|p| (p.script, Some(split_name(p.split))))
            .collect(),
    };
    let mut entries = Vec::new();
    for (script, split) in planned {
        let session = generate_session(&script).map_err(usage)?;
        let rel = match split {
            Some(s) => format!("{s}/{}.jsonl", session.session_id),
            None => format!("{}.jsonl", session.session_id),
        };
        let body = session.to_jsonl();
        write_file(&out.join(&rel), body.as_bytes())?;
        entries.push(ManifestEntry {
            session_id: session.session_id.clone(),
            split,
            path: rel,
            frames: session.len(),
            sha256: hex::encode(Sha256::digest(body.as_bytes())),
        });
    }
    let manifest = Manifest {
        seed: script.is_none().then_some(seed),
        sessions: entries,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(anyhow::Error::from)?;
    write_file(&out.join("manifest.json"), text.as_bytes())?;
    println!("wrote {} sessions to {}", manifest.sessions.len(), out.display());
    Ok(())
}

fn load_session(path: &Path) -> Result<SessionStream, Failure> {
    read_session(path).map_err(|e| usage(anyhow::anyhow!("{}: {e}", path.display())))
}

fn extract(input: &Path, out: &Path, cfg: &RunConfig) -> CmdResult {
    let paths = files::collect(input, "jsonl").map_err(usage)?;
    let base = if input.is_dir() { input } else { input.parent().unwrap_or(Path::new("")) };
    for p in &paths {
        let session = load_session(p)?;
        let feats = extract_session(&session, &cfg.face);
        let rel = p.strip_prefix(base).unwrap_or(p).with_extension("csv");
        files::write_features(&out.join(&rel), &feats)?;
        println!(
            "{}: {} frames, {} face failures",
            rel.display(),
            feats.len(),
            feats.face_failures
        );
    }
    Ok(())
}

fn train_cmd(
    kind: Kind,
    train: &Path,
    validation: Option<&Path>,
    out: &Path,
    pre_path: &Path,
    flags: &ModelFlags,
    cfg: &RunConfig,
) -> CmdResult {
    let exp = flags.resolve(cfg);
    let train_sets = files::read_feature_sets(train).map_err(usage)?;
    let val_sets = match validation {
        Some(v) => files::read_feature_sets(v).map_err(usage)?,
        None => Vec::new(),
    };
    let pre = if pre_path.exists() {
        Preprocessor::load(pre_path).map_err(|e| usage(anyhow::anyhow!("{}: {e}", pre_path.display())))?
    } else {
        let pre = fit_preprocessor(&train_sets).map_err(anyhow::Error::from)?;
        write_file(pre_path, pre.to_json().as_bytes())?;
        pre
    };
    let json = match kind {
        Kind::Static => {
            exp.gbdt.validate().map_err(usage)?;
            train_static(&train_sets, &val_sets, &pre, &exp).map_err(anyhow::Error::from)?.to_json()
        }
        Kind::Temporal => {
            exp.lstm.validate().map_err(usage)?;
            let fit = train_temporal(&train_sets, &val_sets, &pre, &exp).map_err(anyhow::Error::from)?;
            for e in &fit.history {
                match e.val_auc {
                    Some(a) => println!("epoch {:>3}  loss {:.5}  val_auc {a:.4}", e.epoch, e.train_loss),
                    None => println!("epoch {:>3}  loss {:.5}", e.epoch, e.train_loss),
                }
            }
            println!("kept epoch {}", fit.best_epoch);
            fit.model.to_json()
        }
    };
    write_file(out, json.as_bytes())?;
    println!("model written to {}", out.display());
    Ok(())
}

fn load_static(p: &Path) -> Result<GbdtModel, Failure> {
    GbdtModel::load(p).map_err(|e| usage(anyhow::anyhow!("{}: {e}", p.display())))
}

fn load_temporal(p: &Path) -> Result<LstmModel, Failure> {
    LstmModel::load(p).map_err(|e| usage(anyhow::anyhow!("{}: {e}", p.display())))
}

fn load_preprocessor(p: &Path) -> Result<Preprocessor, Failure> {
    Preprocessor::load(p).map_err(|e| usage(anyhow::anyhow!("{}: {e}", p.display())))
}

fn evaluate(
    static_path: Option<&Path>,
    temporal_path: Option<&Path>,
    features: &Path,
    pre_path: &Path,
    out: Option<&Path>,
) -> CmdResult {
    if static_path.is_none() && temporal_path.is_none() {
        return Err(usage(anyhow::anyhow!("pass --static and/or --temporal")));
    }
    let pre = load_preprocessor(pre_path)?;
    let sets = files::read_feature_sets(features).map_err(usage)?;
    let mut reports: Vec<EvalReport> = Vec::new();
    if let Some(p) = static_path {
        let m = load_static(p)?;
        check_hash(m.preprocessor_hash.as_deref(), &pre, p)?;
        reports.push(evaluate_static(&m, &sets, &pre).map_err(anyhow::Error::from)?);
    }
    if let Some(p) = temporal_path {
        let m = load_temporal(p)?;
        check_hash(m.preprocessor_hash.as_deref(), &pre, p)?;
        reports.push(evaluate_temporal(&m, &sets, &pre).map_err(anyhow::Error::from)?);
    }
    print!("{}", format_comparison(&reports));
    if let Some(out) = out {
        let text = serde_json::to_string_pretty(&reports).map_err(anyhow::Error::from)?;
        write_file(out, text.as_bytes())?;
    }
    Ok(())
}

fn check_hash(pinned: Option<&str>, pre: &Preprocessor, model: &Path) -> CmdResult {
    match pinned {
        Some(h) if h != pre.hash() => Err(usage(anyhow::anyhow!(
            "{} was trained behind a different preprocessor",
            model.display()
        ))),
        _ => Ok(()),
    }
}

#[derive(Serialize)]
struct StreamLine {
    frame_index: u64,
    static_p: Option<f64>,
    temporal_p: Option<f64>,
    face_count: u32,
    zone: Option<PoseZone>,
    gaze: Option<GazeClass>,
    mouth: Option<MouthState>,
    identity_match: Option<bool>,
}

fn stream_line(report: &FaceGeometryReport, static_p: Option<f64>, temporal_p: Option<f64>) -> StreamLine {
    StreamLine {
        frame_index: report.frame_index,
        static_p,
        temporal_p,
        face_count: report.face_count,
        zone: report.pose.map(|p| p.zone),
        gaze: report.gaze.map(|g| g.gaze_class),
        mouth: report.mouth.map(|m| m.state),
        identity_match: report.identity.map(|i| i.is_match),
    }
}

fn stream(
    session_path: &Path,
    pre_path: &Path,
    static_path: Option<&Path>,
    temporal_path: Option<&Path>,
    rate: Option<f64>,
    cfg: &RunConfig,
) -> CmdResult {
    if static_path.is_none() && temporal_path.is_none() {
        return Err(usage(anyhow::anyhow!("pass --static and/or --temporal")));
    }
    if rate.is_some_and(|r| !(r > 0.0 && r.is_finite())) {
        return Err(usage(anyhow::anyhow!("--rate must be positive")));
    }
    let pre = load_preprocessor(pre_path)?;
    let static_model = static_path.map(load_static).transpose()?;
    if let (Some(m), Some(p)) = (&static_model, static_path) {
        check_hash(m.preprocessor_hash.as_deref(), &pre, p)?;
    }
    let temporal_model = temporal_path.map(load_temporal).transpose()?;
    let mut scorer = temporal_model
        .as_ref()
        .map(|m| StreamScorer::new(m, &pre))
        .transpose()
        .map_err(usage)?;
    let session = load_session(session_path)?;
    let mut extractor = FrameExtractor::new(&cfg.face);
    let start = Instant::now();
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for (i, frame) in session.frames.iter().enumerate() {
        if let Some(r) = rate {
            let due = start + Duration::from_secs_f64(i as f64 / r);
            if let Some(wait) = due.checked_duration_since(Instant::now()) {
                std::thread::sleep(wait);
            }
        }
        let (report, row, _) = extractor.extract(frame);
        let static_p = match &static_model {
            Some(m) => {
                let x = pre.transform(&row).map_err(anyhow::Error::from)?;
                Some(m.predict_proba(&x).map_err(anyhow::Error::from)?)
            }
            None => None,
        };
        let temporal_p = match scorer.as_mut() {
            Some(s) => s.push(&row).map_err(anyhow::Error::from)?,
            None => None,
        };
        let line = serde_json::to_string(&stream_line(&report, static_p, temporal_p))
            .map_err(anyhow::Error::from)?;
        writeln!(out, "{line}").map_err(anyhow::Error::from)?;
    }
    Ok(())
}
