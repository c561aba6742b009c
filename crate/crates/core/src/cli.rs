//! `grasp-afford` command line.
//!
//! Exit codes: 0 ok, 1 I/O failure, 2 bad input or format, 3 unknown object,
//! 4 fusion failure, 5 missing truth labels, 6 simulator property violation.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use thiserror::Error;

use crate::affordance::{
    read_records_csv, write_records_csv, AffordanceDb, AffordanceError, UnknownPolicy,
};
use crate::eval::{evaluate, run_pipeline, EvalError, PipelineConfig, PipelineMode, PriorMode};
use crate::io::write_atomic;
use crate::par::Execution;
use crate::scores::{ParseMode, ScoreFile};
use crate::sim::{run_sweep, sample_dataset, SweepConfig, DOMINANCE_TOL, EQ1_TOL};
use crate::taxonomy::GraspTaxonomy;

pub const SUMMARY_FORMAT: &str = "afford-sim-summary/1";

#[derive(Debug, Parser)]
#[command(
    name = "grasp-afford",
    version,
    about = "Grasp-type recognition with object affordance priors"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build an affordance database from `object,grasp` CSV records.
    Build(BuildArgs),
    /// Fuse classifier scores with object affordances and write per-image predictions.
    Fuse(FuseArgs),
    /// Run one pipeline over labelled scores and report precision, recall and accuracy.
    Eval(EvalArgs),
    /// Sweep seeded generative worlds, checking the fusion identity and fused-rule dominance.
    Sim(SimArgs),
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    /// CSV file with header `object,grasp`.
    pub records: PathBuf,
    /// Taxonomy file: one label per line, or a JSON array of labels.
    /// Defaults to the four focus grasp types.
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
    /// Smoothing pseudo-count added to every histogram bin.
    #[arg(long, default_value_t = 0.0)]
    pub alpha: f64,
    /// Output database file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Score file (afford-scores/1).
    #[arg(long)]
    pub scores: PathBuf,
    /// Affordance database file (afford-db/1).
    #[arg(long)]
    pub db: PathBuf,
    /// Prior divided out during fusion.
    #[arg(long, value_enum, default_value_t = PriorMode::Uniform)]
    pub prior: PriorMode,
    /// What to use for objects missing from the database.
    #[arg(long, value_enum, default_value_t = UnknownPolicy::Uniform)]
    pub unknown: UnknownPolicy,
    /// How to treat score vectors that do not sum to one.
    #[arg(long, value_enum, default_value_t = ParseMode::Strict)]
    pub strictness: ParseMode,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Output file, one JSON line per input record.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Pipeline to evaluate.
    #[arg(long, value_enum, default_value_t = PipelineMode::Fused)]
    pub mode: PipelineMode,
    /// Write the JSON report here.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Print the two-decimal precision/recall table.
    #[arg(long)]
    pub table: bool,
}

#[derive(Debug, Args)]
pub struct SimArgs {
    /// Base seed; world k uses seed + k.
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Number of worlds to generate.
    #[arg(long, default_value_t = 1000)]
    pub worlds: usize,
    /// Fixed grasp count (2..=4); drawn per world when omitted.
    #[arg(long)]
    pub gcount: Option<usize>,
    /// Fixed image-symbol count (2..=5); drawn per world when omitted.
    #[arg(long)]
    pub icount: Option<usize>,
    /// Fixed object-symbol count (2..=5); drawn per world when omitted.
    #[arg(long)]
    pub ocount: Option<usize>,
    /// Symmetric Dirichlet concentration for prior and emission rows.
    #[arg(long, default_value_t = 1.0)]
    pub concentration: f64,
    /// Samples drawn from the first world for the score and record files (0 skips them).
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Format(String),
    #[error("{0}")]
    UnknownObject(String),
    #[error("{0}")]
    Fusion(String),
    #[error("{0}")]
    MissingTruth(String),
    #[error("{0}")]
    Property(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Format(_) => 2,
            CliError::UnknownObject(_) => 3,
            CliError::Fusion(_) => 4,
            CliError::MissingTruth(_) => 5,
            CliError::Property(_) => 6,
        }
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match &e {
            EvalError::UnknownObject { .. } => CliError::UnknownObject(e.to_string()),
            EvalError::Fusion { failures } => {
                let ids: Vec<&str> = failures.iter().map(|(id, _)| id.as_str()).collect();
                CliError::Fusion(format!("{e}; failed image_ids: {}", ids.join(", ")))
            }
            EvalError::MissingTruth { .. } => CliError::MissingTruth(e.to_string()),
            _ => CliError::Format(e.to_string()),
        }
    }
}

fn require_file(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Format(format!(
            "{}: no such file",
            path.display()
        )))
    }
}

fn require_parent(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() && !p.is_dir() => Err(CliError::Format(format!(
            "{}: directory does not exist",
            p.display()
        ))),
        _ => Ok(()),
    }
}

/// Parses a taxonomy file: a JSON array of labels, or one label per line
/// with blank lines and `#` comments ignored.
pub fn parse_taxonomy(text: &str) -> Result<GraspTaxonomy, CliError> {
    let labels: Vec<String> = if text.trim_start().starts_with('[') {
        serde_json::from_str(text).map_err(|e| CliError::Format(format!("taxonomy: {e}")))?
    } else {
        text.lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_string)
            .collect()
    };
    GraspTaxonomy::new(labels).map_err(|e| CliError::Format(format!("taxonomy: {e}")))
}

fn load_inputs(input: &InputArgs) -> Result<(ScoreFile, AffordanceDb), CliError> {
    require_file(&input.scores)?;
    require_file(&input.db)?;
    let parsed = ScoreFile::load(&input.scores, input.strictness)
        .map_err(|e| CliError::Format(format!("{}: {e}", input.scores.display())))?;
    if parsed.renormalized > 0 {
        eprintln!(
            "warning: renormalized {} score record(s) that did not sum to 1",
            parsed.renormalized
        );
    }
    let db = AffordanceDb::load(&input.db)
        .map_err(|e| CliError::Format(format!("{}: {e}", input.db.display())))?;
    Ok((parsed.file, db))
}

pub fn cmd_build(args: &BuildArgs) -> Result<(), CliError> {
    require_file(&args.records)?;
    if let Some(t) = &args.taxonomy {
        require_file(t)?;
    }
    require_parent(&args.out)?;

    let taxonomy = match &args.taxonomy {
        Some(p) => parse_taxonomy(&std::fs::read_to_string(p).map_err(io_err(p))?)?,
        None => GraspTaxonomy::focus(),
    };
    let file = std::fs::File::open(&args.records).map_err(io_err(&args.records))?;
    let rows = read_records_csv(file)
        .map_err(|e| CliError::Format(format!("{}: {e}", args.records.display())))?;
    let (lines, records): (Vec<u64>, Vec<_>) = rows.into_iter().unzip();
    let db = AffordanceDb::build(&records, &taxonomy, args.alpha).map_err(|e| {
        let row = match &e {
            AffordanceError::UnknownGraspLabel { record, .. }
            | AffordanceError::EmptyObjectName { record } => Some(lines[*record]),
            _ => None,
        };
        match row {
            Some(line) => CliError::Format(format!("{} line {line}: {e}", args.records.display())),
            None => CliError::Format(format!("{}: {e}", args.records.display())),
        }
    })?;
    db.save(&args.out)
        .map_err(|e| CliError::Io(format!("{}: {e}", args.out.display())))?;
    println!(
        "wrote {}: {} objects, taxonomy size {}",
        args.out.display(),
        db.len(),
        db.taxonomy().len()
    );
    Ok(())
}

pub fn cmd_fuse(args: &FuseArgs) -> Result<(), CliError> {
    require_parent(&args.out)?;
    let (scores, db) = load_inputs(&args.input)?;
    let config = PipelineConfig {
        mode: PipelineMode::Fused,
        prior: args.input.prior,
        unknown: args.input.unknown,
    };
    let preds = run_pipeline(&scores, &db, config, Execution::Parallel)?;
    let mut out = String::new();
    for (rec, p) in scores.records.iter().zip(&preds) {
        let line = json!({
            "image_id": p.image_id,
            "object": rec.object_name,
            "fused": p.dist.probs(),
            "predicted": p.predicted,
            "fallback": p.fallback,
        });
        out.push_str(&line.to_string());
        out.push('\n');
    }
    write_atomic(&args.out, out.as_bytes()).map_err(io_err(&args.out))?;
    let fallbacks = preds.iter().filter(|p| p.fallback).count();
    println!(
        "wrote {}: {} predictions ({} with fallback affordance)",
        args.out.display(),
        preds.len(),
        fallbacks
    );
    Ok(())
}

pub fn cmd_eval(args: &EvalArgs) -> Result<(), CliError> {
    if let Some(r) = &args.report {
        require_parent(r)?;
    }
    let (scores, db) = load_inputs(&args.input)?;
    let missing: Vec<String> = scores
        .records
        .iter()
        .filter(|r| r.true_grasp.is_none())
        .map(|r| r.image_id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(EvalError::MissingTruth { image_ids: missing }.into());
    }
    let config = PipelineConfig {
        mode: args.mode,
        prior: args.input.prior,
        unknown: args.input.unknown,
    };
    let preds = run_pipeline(&scores, &db, config, Execution::Parallel)?;
    let report = evaluate(&preds, &scores)?;
    if let Some(path) = &args.report {
        write_atomic(path, report.to_json().as_bytes()).map_err(io_err(path))?;
    }
    if args.table {
        print!("{}", report.to_table());
    } else if args.report.is_none() {
        print!("{}", report.to_json());
    }
    Ok(())
}

pub fn cmd_sim(args: &SimArgs) -> Result<(), CliError> {
    if args.worlds == 0 {
        return Err(CliError::Format("--worlds must be at least 1".into()));
    }
    require_parent(&args.out)?;
    let config = SweepConfig {
        base_seed: args.seed,
        worlds: args.worlds,
        grasps: args.gcount,
        images: args.icount,
        objects: args.ocount,
        concentration: args.concentration,
    };
    let results =
        run_sweep(&config, Execution::Parallel).map_err(|e| CliError::Format(e.to_string()))?;

    std::fs::create_dir_all(&args.out).map_err(io_err(&args.out))?;
    let mut worlds = String::new();
    for (world, row) in &results {
        worlds.push_str(&world.to_json(Some(row.seed)));
        worlds.push('\n');
    }
    let worlds_path = args.out.join("worlds.jsonl");
    write_atomic(&worlds_path, worlds.as_bytes()).map_err(io_err(&worlds_path))?;

    if args.samples > 0 {
        let (world, row) = &results[0];
        let data = sample_dataset(world, args.samples, row.seed)
            .map_err(|e| CliError::Format(e.to_string()))?;
        let scores_path = args.out.join("scores.jsonl");
        write_atomic(&scores_path, data.scores.to_jsonl().as_bytes())
            .map_err(io_err(&scores_path))?;
        let mut csv = Vec::new();
        write_records_csv(&mut csv, &data.records).map_err(|e| CliError::Io(e.to_string()))?;
        let records_path = args.out.join("records.csv");
        write_atomic(&records_path, &csv).map_err(io_err(&records_path))?;
    }

    let failed: Vec<u64> = results
        .iter()
        .filter(|(_, r)| !r.pass)
        .map(|(_, r)| r.seed)
        .collect();
    let rows: Vec<_> = results.iter().map(|(_, r)| r).collect();
    let summary = json!({
        "format": SUMMARY_FORMAT,
        "base_seed": args.seed,
        "worlds": args.worlds,
        "concentration": args.concentration,
        "eq1_tol": EQ1_TOL,
        "dominance_tol": DOMINANCE_TOL,
        "all_pass": failed.is_empty(),
        "failed_seeds": failed,
        "rows": rows,
    });
    let mut text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    text.push('\n');
    let summary_path = args.out.join("summary.json");
    write_atomic(&summary_path, text.as_bytes()).map_err(io_err(&summary_path))?;

    let worst = rows.iter().map(|r| r.eq1_max_abs_error).fold(0.0, f64::max);
    println!(
        "{} worlds, max fusion identity error {worst:.3e}, {} failing",
        rows.len(),
        failed.len()
    );
    if failed.is_empty() {
        Ok(())
    } else {
        let seeds: Vec<String> = failed.iter().map(u64::to_string).collect();
        Err(CliError::Property(format!(
            "property violated for seeds {}",
            seeds.join(", ")
        )))
    }
}

/// Parses `args` (including the program name) and runs the subcommand,
/// returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match &cli.command {
        Command::Build(a) => cmd_build(a),
        Command::Fuse(a) => cmd_fuse(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sim(a) => cmd_sim(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
