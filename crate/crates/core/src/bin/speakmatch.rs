//! `speakmatch` command-line front end.
//!
//! Every option of `assign` can also be set through an environment variable
//! named `SPEAKMATCH_<FLAG>` (e.g. `SPEAKMATCH_SEED=7`).
//!
//! Exit codes: 0 success, 1 error (JSON report on stderr), 2 non-convergence
//! under `--strict`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::Serialize;

use speakmatch::eval::{PrPoint, RocPoint};
use speakmatch::io::{load_assignments, load_ground_truth, load_pins, load_segments, load_tracks, write_jsonl};
use speakmatch::offscreen::{offscreen_roc, DEFAULT_TAU};
use speakmatch::pipeline::{assign, evaluate, frame_weights, validate_ground_truth, AssignConfig, PartitionReport};
use speakmatch::preprocess::{
    load_shots, load_vad, segment_regions, to_segment_records, ShotBoundaryList, DEFAULT_MAX_DURATION,
};
use speakmatch::solver::{solve_partition, AssignmentProblem};
use speakmatch::synth::{brute_force_oracle, generate_scenario, ScenarioConfig};
use speakmatch::types::build_candidate_map;
use speakmatch::{Choice, DiagonalPolicy, PinSet, SolverConfig};

const EXIT_NOT_CONVERGED: u8 = 2;

#[derive(Parser)]
#[command(
    name = "speakmatch",
    version,
    about = "Active-speaker assignment by cross-modal identity matching"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split voice-activity regions into short segments.
    Segment(SegmentArgs),
    /// Assign a face track (or off-screen) to every speech segment.
    Assign(AssignArgs),
    /// Score assignments against ground truth.
    Eval(EvalArgs),
    /// Generate a synthetic scenario.
    Synth(SynthArgs),
    /// Compare stage 1 with exhaustive search on a small instance.
    Oracle(OracleArgs),
}

#[derive(Args)]
struct SegmentArgs {
    /// JSONL of {"start","end"} voice regions.
    #[arg(long)]
    vad: PathBuf,
    /// JSON {"boundaries": [...]} of shot-change times.
    #[arg(long)]
    shots: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_MAX_DURATION)]
    max_duration: f64,
    #[arg(long, default_value_t = 0.0)]
    min_duration: f64,
    /// Output segments.jsonl (embeddings left empty).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AssignArgs {
    #[arg(long, env = "SPEAKMATCH_SEGMENTS")]
    segments: PathBuf,
    #[arg(long, env = "SPEAKMATCH_TRACKS")]
    tracks: PathBuf,
    /// JSONL of {"segment_id","track_id"} assignments frozen during search.
    #[arg(long, env = "SPEAKMATCH_PINS")]
    pins: Option<PathBuf>,
    /// Labels used to write the stage-2 ROC sweep.
    #[arg(long, env = "SPEAKMATCH_GROUND_TRUTH")]
    ground_truth: Option<PathBuf>,
    #[arg(long, env = "SPEAKMATCH_PARTITION_SIZE", default_value_t = 500)]
    partition_size: usize,
    #[arg(long, env = "SPEAKMATCH_TAU", default_value_t = DEFAULT_TAU, allow_negative_numbers = true)]
    tau: f64,
    #[arg(long, env = "SPEAKMATCH_MIN_OVERLAP", default_value_t = 0.0)]
    min_overlap: f64,
    #[arg(long, env = "SPEAKMATCH_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, env = "SPEAKMATCH_MAX_EPOCHS", default_value_t = 50)]
    max_epochs: usize,
    #[arg(long, env = "SPEAKMATCH_RESTARTS", default_value_t = 1)]
    restarts: usize,
    /// Partition-level worker threads; 0 uses every core.
    #[arg(long, env = "SPEAKMATCH_WORKERS", default_value_t = 1)]
    workers: usize,
    #[arg(long, env = "SPEAKMATCH_NO_STAGE2")]
    no_stage2: bool,
    /// Write each partition's speech and face matrices as CSV.
    #[arg(long, env = "SPEAKMATCH_DUMP_MATRICES")]
    dump_matrices: bool,
    #[arg(long, env = "SPEAKMATCH_EXCLUDE_DIAGONAL")]
    exclude_diagonal: bool,
    /// Exit with status 2 if any partition hits max_epochs.
    #[arg(long, env = "SPEAKMATCH_STRICT")]
    strict: bool,
    #[arg(long, env = "SPEAKMATCH_OUT")]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    assignments: PathBuf,
    #[arg(long)]
    ground_truth: PathBuf,
    /// With --tracks, ranks every candidate pair for mAP.
    #[arg(long, requires = "tracks")]
    segments: Option<PathBuf>,
    #[arg(long)]
    tracks: Option<PathBuf>,
    /// Weight units by track frame counts (needs --tracks).
    #[arg(long, requires = "tracks")]
    frame_weights: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// Base configuration as JSON; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    preset: Option<PresetArg>,
    #[arg(long)]
    num_characters: Option<usize>,
    #[arg(long)]
    num_segments: Option<usize>,
    #[arg(long)]
    candidates: Option<usize>,
    #[arg(long)]
    audio_dim: Option<usize>,
    #[arg(long)]
    visual_dim: Option<usize>,
    #[arg(long)]
    audio_noise: Option<f64>,
    #[arg(long)]
    visual_noise: Option<f64>,
    #[arg(long)]
    offscreen_fraction: Option<f64>,
    #[arg(long)]
    background_face_fraction: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Also write pins.jsonl pinning this fraction of each character's segments.
    #[arg(long)]
    pin_fraction: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum PresetArg {
    Columbia,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    segments: PathBuf,
    #[arg(long)]
    tracks: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    restarts: usize,
    #[arg(long)]
    exclude_diagonal: bool,
    /// Optional JSON summary path.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn policy(exclude: bool) -> DiagonalPolicy {
    if exclude {
        DiagonalPolicy::Exclude
    } else {
        DiagonalPolicy::Include
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let body = serde_json::to_string_pretty(value)?;
    fs::write(path, body + "\n").with_context(|| format!("writing {}", path.display()))
}

fn write_text(path: &Path, body: &str) -> Result<()> {
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

fn roc_csv(points: &[RocPoint]) -> String {
    let mut out = String::from("tau,tpr,fpr\n");
    for p in points {
        let _ = writeln!(out, "{},{},{}", p.threshold, p.tpr, p.fpr);
    }
    out
}

fn pr_csv(points: &[PrPoint]) -> String {
    let mut out = String::from("threshold,precision,recall\n");
    for p in points {
        let _ = writeln!(out, "{},{},{}", p.threshold, p.precision, p.recall);
    }
    out
}

fn run_segment(args: SegmentArgs) -> Result<ExitCode> {
    let regions = load_vad(&args.vad)?;
    let shots = match &args.shots {
        Some(p) => load_shots(p)?,
        None => ShotBoundaryList::default(),
    };
    let intervals = segment_regions(&regions, &shots, args.max_duration, args.min_duration)?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_jsonl(&args.out, &to_segment_records(&intervals))?;
    info!("{} regions -> {} segments", regions.len(), intervals.len());
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct RunMetadata<'a> {
    tool: &'static str,
    version: &'static str,
    inputs: Inputs<'a>,
    config: &'a AssignConfig,
    seed: u64,
    deviations: Vec<String>,
    converged: bool,
    segments_assigned: usize,
    purged: &'a [String],
    partitions: &'a [PartitionReport],
}

#[derive(Serialize)]
struct Inputs<'a> {
    segments: &'a Path,
    tracks: &'a Path,
    pins: Option<&'a Path>,
    ground_truth: Option<&'a Path>,
}

fn run_assign(args: AssignArgs) -> Result<ExitCode> {
    let segments = load_segments(&args.segments)?;
    let tracks = load_tracks(&args.tracks)?;
    let pins = match &args.pins {
        Some(p) => load_pins(p)?,
        None => PinSet::new(),
    };
    let config = AssignConfig {
        solver: SolverConfig {
            partition_size: args.partition_size,
            max_epochs: args.max_epochs,
            seed: args.seed,
            diagonal_policy: policy(args.exclude_diagonal),
            restarts: args.restarts,
            ..SolverConfig::default()
        },
        tau: args.tau,
        stage2: !args.no_stage2,
        min_overlap: args.min_overlap,
        workers: args.workers,
    };
    let out = assign(&segments, &tracks, &pins, &config)?;

    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    write_jsonl(&args.out.join("assignments.jsonl"), &out.records)?;
    let meta = RunMetadata {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        inputs: Inputs {
            segments: &args.segments,
            tracks: &args.tracks,
            pins: args.pins.as_deref(),
            ground_truth: args.ground_truth.as_deref(),
        },
        config: &config,
        seed: args.seed,
        deviations: config.deviations(),
        converged: out.converged(),
        segments_assigned: out.records.len(),
        purged: &out.purged,
        partitions: &out.partitions,
    };
    write_json(&args.out.join("run.json"), &meta)?;

    if args.dump_matrices {
        for (i, (sd, fd)) in out.matrices.iter().enumerate() {
            write_text(&args.out.join(format!("partition_{i:03}_sd.csv")), &sd.to_csv())?;
            write_text(&args.out.join(format!("partition_{i:03}_fd.csv")), &fd.to_csv())?;
        }
    }

    if let Some(path) = &args.ground_truth {
        let gt = load_ground_truth(path)?;
        validate_ground_truth(&gt, &tracks)?;
        let scores: Vec<f64> = out.records.iter().map(|r| r.score).collect();
        let offscreen: Vec<bool> = out
            .records
            .iter()
            .map(|r| gt.get(&r.segment_id) == Some(&Choice::OffScreen))
            .collect();
        match offscreen_roc(&scores, &offscreen) {
            Ok(points) => write_text(&args.out.join("roc.csv"), &roc_csv(&points))?,
            Err(speakmatch::Error::SingleClass) => warn!("ground truth has a single class; roc.csv skipped"),
            Err(e) => return Err(e.into()),
        }
    }

    let removed: usize = out.partitions.iter().map(|p| p.removed_offscreen).sum();
    info!(
        "{} segments in {} partitions, {} purged, {} moved off-screen",
        out.records.len(),
        out.partitions.len(),
        out.purged.len(),
        removed
    );
    if !out.converged() {
        warn!("at least one partition stopped at max_epochs without converging");
        if args.strict {
            return Ok(ExitCode::from(EXIT_NOT_CONVERGED));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn run_eval(args: EvalArgs) -> Result<ExitCode> {
    let records = load_assignments(&args.assignments)?;
    let gt = load_ground_truth(&args.ground_truth)?;
    let tracks = args.tracks.as_deref().map(load_tracks).transpose()?;
    if let Some(tracks) = &tracks {
        validate_ground_truth(&gt, tracks)?;
    }
    let candidates = match (&args.segments, &tracks) {
        (Some(seg_path), Some(tracks)) => Some(build_candidate_map(&load_segments(seg_path)?, tracks, 0.0)?),
        _ => None,
    };
    let weights = match (&tracks, args.frame_weights) {
        (Some(t), true) => frame_weights(t),
        _ => Default::default(),
    };
    let weight = |track: &str| weights.get(track).copied().unwrap_or(1.0);
    let out = evaluate(&records, &gt, candidates.as_ref(), &weight)?;

    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    write_json(&args.out.join("report.json"), &out.report)?;
    write_text(&args.out.join("pr_curve.csv"), &pr_csv(&out.pr_curve))?;
    write_text(&args.out.join("roc_curve.csv"), &roc_csv(&out.roc_curve))?;
    let r = &out.report;
    println!(
        "precision {:.4} recall {:.4} F1 {:.4} mAP {} auROC {}",
        r.precision,
        r.recall,
        r.f1,
        r.map.map_or("n/a".into(), |v| format!("{v:.4}")),
        r.auroc.map_or("n/a".into(), |v| format!("{v:.4}")),
    );
    Ok(ExitCode::SUCCESS)
}

fn run_synth(args: SynthArgs) -> Result<ExitCode> {
    let mut cfg = match (&args.config, args.preset) {
        (Some(_), Some(_)) => bail!("--config and --preset are mutually exclusive"),
        (Some(path), None) => {
            let body = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str::<ScenarioConfig>(&body).with_context(|| format!("parsing {}", path.display()))?
        }
        (None, Some(PresetArg::Columbia)) => ScenarioConfig::columbia_degenerate(args.seed.unwrap_or(0)),
        (None, None) => ScenarioConfig::default(),
    };
    macro_rules! set {
        ($($field:ident <- $arg:expr),* $(,)?) => {
            $(if let Some(v) = $arg { cfg.$field = v; })*
        };
    }
    set!(
        num_characters <- args.num_characters,
        num_segments <- args.num_segments,
        candidates_per_segment <- args.candidates,
        audio_dim <- args.audio_dim,
        visual_dim <- args.visual_dim,
        audio_noise <- args.audio_noise,
        visual_noise <- args.visual_noise,
        offscreen_fraction <- args.offscreen_fraction,
        background_face_fraction <- args.background_face_fraction,
        seed <- args.seed,
    );
    let scenario = generate_scenario(&cfg)?;
    scenario.write_to(&args.out)?;
    if let Some(fraction) = args.pin_fraction {
        if !(0.0..=1.0).contains(&fraction) {
            bail!("--pin-fraction must lie in [0, 1], got {fraction}");
        }
        let pins = scenario.select_pins(fraction, cfg.seed);
        let labels: speakmatch::GroundTruth = pins.into_iter().map(|(s, t)| (s, Choice::Track(t))).collect();
        write_jsonl(&args.out.join("pins.jsonl"), &speakmatch::io::label_records(&labels))?;
    }
    let offscreen = scenario
        .ground_truth
        .values()
        .filter(|c| **c == Choice::OffScreen)
        .count();
    info!(
        "{} segments, {} tracks, {} off-screen",
        scenario.segments.len(),
        scenario.tracks.len(),
        offscreen
    );
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct OracleSummary {
    search_space: u128,
    oracle_objective: f64,
    stage1_objective: f64,
    gap: f64,
    matched: bool,
    restart_objectives: Vec<f64>,
}

fn run_oracle(args: OracleArgs) -> Result<ExitCode> {
    let segments = load_segments(&args.segments)?;
    let tracks = load_tracks(&args.tracks)?;
    let candidates = build_candidate_map(&segments, &tracks, 0.0)?;
    let by_id: std::collections::HashMap<&str, &speakmatch::SpeechSegment> =
        segments.iter().map(|s| (s.id.as_str(), s)).collect();
    let ordered: Vec<&speakmatch::SpeechSegment> = candidates
        .entries()
        .iter()
        .map(|e| by_id[e.segment_id.as_str()])
        .collect();
    let lookup = tracks.iter().map(|t| (t.id.as_str(), t)).collect();
    let problem = AssignmentProblem::new(&ordered, &candidates, &lookup)?;
    let diagonal_policy = policy(args.exclude_diagonal);
    let (_, best) = brute_force_oracle(&problem, diagonal_policy)?;
    let config = SolverConfig {
        seed: args.seed,
        restarts: args.restarts,
        diagonal_policy,
        partition_size: problem.len().max(3),
        ..SolverConfig::default()
    };
    let (state, restart_objectives) = solve_partition(&problem, &PinSet::new(), &config, 0)?;
    let summary = OracleSummary {
        search_space: problem.search_space(),
        oracle_objective: best,
        stage1_objective: state.objective,
        gap: best - state.objective,
        matched: (best - state.objective).abs() <= 1e-9,
        restart_objectives,
    };
    println!(
        "oracle {:.12} stage1 {:.12} gap {:.3e} matched {}",
        summary.oracle_objective, summary.stage1_objective, summary.gap, summary.matched
    );
    if let Some(path) = &args.out {
        write_json(path, &summary)?;
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct ErrorReport {
    error: String,
    causes: Vec<String>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Segment(a) => run_segment(a),
        Command::Assign(a) => run_assign(a),
        Command::Eval(a) => run_eval(a),
        Command::Synth(a) => run_synth(a),
        Command::Oracle(a) => run_oracle(a),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            let report = ErrorReport {
                error: err.to_string(),
                causes: err.chain().skip(1).map(ToString::to_string).collect(),
            };
            eprintln!("{}", serde_json::to_string(&report).unwrap_or_else(|_| err.to_string()));
            ExitCode::FAILURE
        }
    }
}
