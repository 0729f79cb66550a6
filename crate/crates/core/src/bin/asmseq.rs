//! `asmseq`: simulate, train, decode and evaluate assembly sequences.
//!
//! Exit codes: 0 success, 2 validation error, 3 every sequence infeasible,
//! 4 I/O error.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use asmseq::decoder::DecodeError;
use asmseq::features::{ObservationSequence, PrecomputedScores};
use asmseq::io::{self, Header, IoError, LabelingRecord, RunConfig, Status};
use asmseq::metrics::{self, EvalReport, SequenceScores};
use asmseq::simulator::{segment_actions, simulate_dataset};
use asmseq::training::{
    annotation_records, parse_action_annotations, product_grid, DecodeMode, GridSearch,
    LabeledSegment, LabeledSequence, Objective, Recognizer, TrainingError,
};
use asmseq::{Assembly, PartCatalog};

#[derive(Parser)]
#[command(name = "asmseq", version, about = "Assembly action recognition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Simulate(SimulateArgs),
    /// Estimate a model from annotated observations.
    Train(TrainArgs),
    /// Decode observation sequences with a trained model.
    Decode(DecodeArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ObjectiveArg {
    Frame,
    Edit,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    observations: Option<PathBuf>,
    #[arg(long)]
    annotations: Option<PathBuf>,
    /// Additive transition smoothing.
    #[arg(long)]
    smoothing: Option<f64>,
    #[arg(long, value_enum)]
    objective: Option<ObjectiveArg>,
    /// Duration bound used while scoring grid cells.
    #[arg(long)]
    max_duration: Option<usize>,
}

#[derive(Args)]
struct DecodeArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    observations: Option<PathBuf>,
    /// Decode with the segment boundaries of this labeling file.
    #[arg(long, conflicts_with_all = ["segmental", "max_duration"])]
    boundaries: Option<PathBuf>,
    /// Unbounded segmental decoding (the default).
    #[arg(long)]
    segmental: bool,
    /// Segmental decoding with a maximum segment length.
    #[arg(long, conflicts_with = "segmental")]
    max_duration: Option<usize>,
    /// Precomputed assembly/action scores.
    #[arg(long)]
    scores: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    predictions: Option<PathBuf>,
    #[arg(long)]
    truth: Option<PathBuf>,
}

/// An error with its exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn validation(error: impl Into<anyhow::Error>) -> Self {
        Failure { code: 2, error: error.into() }
    }
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        let code = if matches!(e, IoError::Io { .. }) { 4 } else { 2 };
        Failure { code, error: e.into() }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Failure { code: 2, error }
    }
}

type Result<T, E = Failure> = std::result::Result<T, E>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Train(a) => train(a),
        Command::Decode(a) => decode(a),
        Command::Eval(a) => eval(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn load_config(common: &Common) -> Result<RunConfig> {
    match &common.config {
        Some(p) => Ok(RunConfig::load(p)?),
        None => Ok(RunConfig::default()),
    }
}

fn out_dir(common: &Common, cfg: &RunConfig) -> PathBuf {
    common
        .out_dir
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."))
}

fn required<T: Clone>(value: Option<T>, what: &str) -> Result<T> {
    value.ok_or_else(|| Failure::validation(anyhow!("missing {what} (flag or config)")))
}

fn catalog(cfg: &RunConfig) -> Result<Arc<PartCatalog>> {
    let path = required(cfg.catalog.clone(), "`catalog`")?;
    Ok(io::read_catalog(&path)?)
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let cfg = load_config(&args.common)?;
    let section = required(cfg.simulate.clone(), "[simulate] section")?;
    let mut sim = section.config.clone();
    if let Some(s) = args.seed.or(cfg.seed) {
        sim.seed = s;
    }
    sim.validate().map_err(Failure::validation)?;
    if section.n_sequences == 0 {
        return Err(Failure::validation(anyhow!("`n_sequences` must be at least 1")));
    }
    let catalog = catalog(&cfg)?;
    let scene = sim.build_scene(catalog.clone()).map_err(Failure::validation)?;
    let data = simulate_dataset(&sim, catalog, section.n_sequences).map_err(Failure::validation)?;

    let dir = out_dir(&args.common, &cfg);
    let observations: Vec<ObservationSequence> = data.iter().map(|s| s.observations.clone()).collect();
    let mut annotations = Vec::new();
    let mut truth = Vec::new();
    for s in &data {
        let actions = segment_actions(s).map_err(Failure::validation)?;
        annotations.extend(annotation_records(s.id(), &actions));
        truth.push(LabelingRecord::truth(s).map_err(Failure::validation)?);
    }
    io::write_observations(&dir.join("observations.jsonl"), &scene, &observations)?;
    io::write_annotations(&dir.join("annotations.jsonl"), &scene, &annotations)?;
    io::write_labelings(
        &dir.join("segments.jsonl"),
        &Header::new(io::LABELINGS, scene.catalog(), Some(&scene)),
        &truth,
    )?;
    let frames: usize = data.iter().map(|s| s.frames()).sum();
    let segments: usize = data.iter().map(|s| s.segments.len()).sum();
    println!(
        "simulated {} sequences: {frames} frames, {segments} segments, {} annotation records",
        data.len(),
        annotations.len()
    );
    Ok(())
}

/// Labeled sequences from observation and annotation files. Observed
/// sequences without annotations stay in the empty assembly throughout.
fn labeled_sequences(
    catalog: &Arc<PartCatalog>,
    obs_path: &Path,
    ann_path: &Path,
) -> Result<Vec<LabeledSequence>> {
    let (ann_header, records) = io::read_annotations(ann_path)?;
    ann_header.check_catalog(ann_path, catalog)?;
    let scene = ann_header.scene(ann_path, catalog.clone())?;
    let (obs_header, observations) = io::read_observations(obs_path)?;
    obs_header.check_catalog(obs_path, catalog)?;
    if obs_header.scene.as_deref() != Some(scene.instances()) {
        return Err(Failure::validation(anyhow!(
            "{} and {} describe different scenes",
            obs_path.display(),
            ann_path.display()
        )));
    }
    let replayed = parse_action_annotations(&records, &scene)
        .with_context(|| format!("replaying {}", ann_path.display()))?;
    let mut by_video: BTreeMap<&str, _> = replayed.iter().map(|s| (s.video.as_str(), s)).collect();
    let mut out = Vec::with_capacity(observations.len());
    for obs in observations {
        let labeled = match by_video.remove(obs.id.as_str()) {
            Some(seq) => LabeledSequence::from_annotations(obs, seq)
                .with_context(|| format!("annotations of `{}`", seq.video))?,
            None => {
                let frames = obs.len();
                LabeledSequence::new(
                    obs,
                    vec![LabeledSegment { begin: 0, end: frames, assembly: Assembly::empty(scene.clone()) }],
                )
                .map_err(Failure::validation)?
            }
        };
        out.push(labeled);
    }
    if !by_video.is_empty() {
        let ids: Vec<&str> = by_video.keys().copied().collect();
        return Err(Failure::validation(anyhow!(
            "annotated videos without observations: {}",
            ids.join(", ")
        )));
    }
    Ok(out)
}

fn train(args: TrainArgs) -> Result<()> {
    let cfg = load_config(&args.common)?;
    let section = required(cfg.train.clone(), "[train] section")?;
    let catalog = catalog(&cfg)?;
    let obs_path = args.observations.unwrap_or(section.observations.clone());
    let ann_path = args.annotations.unwrap_or(section.annotations.clone());
    let data = labeled_sequences(&catalog, &obs_path, &ann_path)?;
    let objective = match args.objective {
        Some(ObjectiveArg::Frame) => Objective::FrameAccuracy,
        Some(ObjectiveArg::Edit) => Objective::EditScore,
        None => section.objective,
    };
    let mode = match args.max_duration.or(section.max_duration) {
        Some(k) => DecodeMode::Bounded(k),
        None => DecodeMode::Segmental,
    };
    let g = &section.grid;
    let search = GridSearch {
        grid: product_grid(&g.lambda, &g.alpha, &g.weights, &g.w_seq),
        objective,
        mode,
        smoothing: args.smoothing.unwrap_or(section.smoothing),
        missing_pose_policy: section.missing_pose_policy,
    };
    let outcome = search.run(&data).map_err(Failure::validation)?;
    let dir = out_dir(&args.common, &cfg);
    io::write_model(&dir.join("model.jsonl"), &outcome.model)?;
    let best = &search.grid[outcome.best_index];
    println!(
        "trained on {} sequences: {} states, lambda={} alpha={} w_seq={} weights={:?}, training objective {:.4}",
        data.len(),
        outcome.model.vocabulary.len(),
        best.lambda,
        best.alpha,
        best.w_seq,
        best.weights,
        outcome.cell_scores[outcome.best_index]
    );
    Ok(())
}

fn decode(args: DecodeArgs) -> Result<()> {
    let cfg = load_config(&args.common)?;
    let section = cfg.decode.clone();
    let model_path = required(
        args.model.clone().or(section.as_ref().map(|d| d.model.clone())),
        "`model`",
    )?;
    let obs_path = required(
        args.observations.clone().or(section.as_ref().map(|d| d.observations.clone())),
        "`observations`",
    )?;
    let boundaries_path = args.boundaries.clone().or(if args.segmental || args.max_duration.is_some() {
        None
    } else {
        section.as_ref().and_then(|d| d.boundaries.clone())
    });
    let max_duration = args.max_duration.or(if args.segmental {
        None
    } else {
        section.as_ref().and_then(|d| d.max_duration)
    });
    let scores_path = args.scores.clone().or(section.as_ref().and_then(|d| d.scores.clone()));

    let model = io::read_model(&model_path)?;
    let scene = model.scene().expect("model has states").clone();
    let (obs_header, observations) = io::read_observations(&obs_path)?;
    obs_header.check_catalog(&obs_path, scene.catalog())?;
    if obs_header.scene.as_deref() != Some(scene.instances()) {
        return Err(Failure::validation(anyhow!(
            "{} does not describe the model's scene",
            obs_path.display()
        )));
    }
    let boundaries: Option<BTreeMap<String, Vec<(usize, usize)>>> = match &boundaries_path {
        Some(p) => {
            let (_, recs) = io::read_labelings(p)?;
            Some(recs.into_iter().map(|r| (r.sequence.clone(), r.boundaries())).collect())
        }
        None => None,
    };
    let scores: BTreeMap<String, PrecomputedScores> = match &scores_path {
        Some(p) => {
            let (h, s) = io::read_scores(p)?;
            h.check_catalog(p, scene.catalog())?;
            s
        }
        None => BTreeMap::new(),
    };
    let mode = match (&boundaries, max_duration) {
        (Some(_), _) => DecodeMode::KnownBoundaries,
        (None, Some(k)) => DecodeMode::Bounded(k),
        (None, None) => DecodeMode::Segmental,
    };
    let recognizer = Recognizer::new(&model).map_err(Failure::validation)?;
    let results: Vec<Result<LabelingRecord>> = observations
        .par_iter()
        .map(|obs| {
            let b = match &boundaries {
                Some(map) => Some(map.get(&obs.id).ok_or_else(|| {
                    Failure::validation(anyhow!("no boundaries for sequence `{}`", obs.id))
                })?),
                None => None,
            };
            match recognizer.decode(obs, scores.get(&obs.id), mode, b.map(Vec::as_slice)) {
                Ok(r) => LabelingRecord::prediction(&obs.id, obs.len(), &model.vocabulary, &r)
                    .map_err(Failure::validation),
                Err(TrainingError::Decode(DecodeError::NoFeasiblePath)) => {
                    eprintln!("sequence `{}`: no feasible path", obs.id);
                    Ok(LabelingRecord::infeasible(&obs.id, obs.len()))
                }
                Err(e) => Err(Failure::validation(anyhow!("sequence `{}`: {e}", obs.id))),
            }
        })
        .collect();
    let records = results.into_iter().collect::<Result<Vec<_>>>()?;
    let dir = out_dir(&args.common, &cfg);
    io::write_labelings(
        &dir.join("predictions.jsonl"),
        &Header::new(io::LABELINGS, scene.catalog(), Some(&scene)),
        &records,
    )?;
    let infeasible = records.iter().filter(|r| r.status == Status::Infeasible).count();
    println!("decoded {} sequences ({infeasible} infeasible)", records.len());
    if !records.is_empty() && infeasible == records.len() {
        return Err(Failure { code: 3, error: anyhow!("no sequence has a feasible decoding") });
    }
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let cfg = load_config(&args.common)?;
    let section = cfg.eval.clone();
    let pred_path = required(
        args.predictions.clone().or(section.as_ref().map(|e| e.predictions.clone())),
        "`predictions`",
    )?;
    let truth_path = required(
        args.truth.clone().or(section.as_ref().map(|e| e.truth.clone())),
        "`truth`",
    )?;
    let (_, preds) = io::read_labelings(&pred_path)?;
    let (_, truth) = io::read_labelings(&truth_path)?;
    if preds.is_empty() {
        return Err(Failure::validation(anyhow!("{} has no predictions", pred_path.display())));
    }
    let pred_ids: Vec<&str> = preds.iter().map(|r| r.sequence.as_str()).collect();
    let truth_ids: Vec<&str> = truth.iter().map(|r| r.sequence.as_str()).collect();
    let missing: Vec<&str> = truth_ids.iter().filter(|id| !pred_ids.contains(id)).copied().collect();
    let extra: Vec<&str> = pred_ids.iter().filter(|id| !truth_ids.contains(id)).copied().collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(anyhow!(
            "sequence ids differ; without predictions: [{}]; without truth: [{}]",
            missing.join(", "),
            extra.join(", ")
        )
        .into());
    }
    let by_id: BTreeMap<&str, &LabelingRecord> = preds.iter().map(|r| (r.sequence.as_str(), r)).collect();
    let mut rows = Vec::with_capacity(truth.len());
    for t in &truth {
        let p = by_id[t.sequence.as_str()];
        if p.frames != t.frames {
            return Err(anyhow!(
                "sequence `{}`: {} predicted frames, {} true frames",
                t.sequence,
                p.frames,
                t.frames
            )
            .into());
        }
        rows.push(match p.status {
            Status::Infeasible => SequenceScores {
                sequence: t.sequence.clone(),
                frame_accuracy: 0.0,
                edit_score: 0.0,
                action_edit_score: 0.0,
            },
            Status::Ok => SequenceScores {
                sequence: t.sequence.clone(),
                frame_accuracy: metrics::frame_accuracy(&p.frame_keys(), &t.frame_keys())
                    .map_err(Failure::validation)?,
                edit_score: metrics::edit_score(&p.frame_keys(), &t.frame_keys()),
                action_edit_score: metrics::edit_score(&p.action_keys(), &t.action_keys()),
            },
        });
    }
    let report = EvalReport::from_sequences(rows);
    let dir = out_dir(&args.common, &cfg);
    let table = report.to_table();
    io::write_atomic(&dir.join("report.txt"), table.as_bytes())?;
    let mut json = serde_json::to_vec_pretty(&report).expect("report serializes");
    json.push(b'\n');
    io::write_atomic(&dir.join("report.json"), &json)?;
    print!("{table}");
    Ok(())
}
