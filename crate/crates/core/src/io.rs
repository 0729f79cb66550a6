//! File formats.
//!
//! Data files are JSON lines. The first line is a [`Header`] naming the
//! schema and version and carrying the content hash of the part catalog the
//! data refers to; every following line is one record. Writes go to a
//! temporary file that is renamed into place.
//!
//! Configuration (catalogs, run configs) is TOML.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::{
    Assembly, AssemblyError, CanonicalKey, CatalogDef, InstanceId, Joint, PartCatalog,
    PartInstance, Scene, Sign,
};
use crate::decoder::{DecodeResult, TransitionModel, Vocabulary};
use crate::features::{FeatureConfig, FrameObservation, ObservationSequence, PrecomputedScores};
use crate::kinematics::Pose;
use crate::simulator::SimConfig;
use crate::training::{
    AnnotationRecord, DecodeMode, LabeledSequence, ModelParams, Objective,
};

pub const VERSION: u32 = 1;
pub const OBSERVATIONS: &str = "asmseq.observations";
pub const ANNOTATIONS: &str = "asmseq.annotations";
pub const LABELINGS: &str = "asmseq.labelings";
pub const MODEL: &str = "asmseq.model";
pub const SCORES: &str = "asmseq.scores";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("{path}: expected schema `{expected}` version {VERSION}, found `{found}` version {version}")]
    Schema {
        path: PathBuf,
        expected: &'static str,
        found: String,
        version: u32,
    },
    #[error("{path}: catalog hash {found} does not match {expected}")]
    CatalogMismatch {
        path: PathBuf,
        expected: String,
        found: String,
    },
    #[error("{path}: {reason}")]
    Invalid { path: PathBuf, reason: String },
}

pub type Result<T, E = IoError> = std::result::Result<T, E>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn invalid(path: &Path, reason: impl ToString) -> IoError {
    IoError::Invalid {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub schema: String,
    pub version: u32,
    pub catalog_hash: String,
    /// Part instances the records refer to.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<Vec<PartInstance>>,
}

impl Header {
    pub fn new(schema: &str, catalog: &PartCatalog, scene: Option<&Scene>) -> Self {
        Header {
            schema: schema.to_string(),
            version: VERSION,
            catalog_hash: catalog.content_hash().to_string(),
            scene: scene.map(|s| s.instances().to_vec()),
        }
    }

    pub fn check_catalog(&self, path: &Path, catalog: &PartCatalog) -> Result<()> {
        if self.catalog_hash != catalog.content_hash() {
            return Err(IoError::CatalogMismatch {
                path: path.to_path_buf(),
                expected: catalog.content_hash().to_string(),
                found: self.catalog_hash.clone(),
            });
        }
        Ok(())
    }

    pub fn scene(&self, path: &Path, catalog: Arc<PartCatalog>) -> Result<Arc<Scene>> {
        let parts = self
            .scene
            .clone()
            .ok_or_else(|| invalid(path, "header lists no scene"))?;
        Ok(Arc::new(Scene::new(catalog, parts).map_err(|e| invalid(path, e))?))
    }
}

/// Write a header and records, one JSON document per line, atomically.
pub fn write_jsonl<T: Serialize>(path: &Path, header: &Header, records: &[T]) -> Result<()> {
    let mut buf = serde_json::to_vec(header).expect("header serializes");
    buf.push(b'\n');
    for r in records {
        serde_json::to_writer(&mut buf, r).map_err(|e| invalid(path, e))?;
        buf.push(b'\n');
    }
    write_atomic(path, &buf)
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(bytes).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Read a header of the given schema and its records with 1-based line numbers.
pub fn read_jsonl<T: DeserializeOwned>(
    path: &Path,
    schema: &'static str,
) -> Result<(Header, Vec<(usize, T)>)> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut header: Option<Header> = None;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let lineno = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |e: serde_json::Error| IoError::Parse {
            path: path.to_path_buf(),
            line: lineno,
            reason: e.to_string(),
        };
        match &header {
            None => {
                let h: Header = serde_json::from_str(&line).map_err(parse_err)?;
                if h.schema != schema || h.version != VERSION {
                    return Err(IoError::Schema {
                        path: path.to_path_buf(),
                        expected: schema,
                        found: h.schema,
                        version: h.version,
                    });
                }
                header = Some(h);
            }
            Some(_) => out.push((lineno, serde_json::from_str(&line).map_err(parse_err)?)),
        }
    }
    let header = header.ok_or_else(|| IoError::Parse {
        path: path.to_path_buf(),
        line: 1,
        reason: "missing header".into(),
    })?;
    Ok((header, out))
}

pub fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    toml::from_str(&text).map_err(|e| IoError::Parse {
        path: path.to_path_buf(),
        line: e
            .span()
            .map_or(0, |s| text[..s.start].matches('\n').count() + 1),
        reason: e.message().to_string(),
    })
}

pub fn read_catalog(path: &Path) -> Result<Arc<PartCatalog>> {
    Ok(Arc::new(read_toml::<PartCatalog>(path)?))
}

// Observations.

/// One frame of one sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRecord {
    pub sequence: String,
    pub t: usize,
    pub poses: BTreeMap<InstanceId, Pose>,
    /// `[i, j, p]` with `i < j`.
    pub pairs: Vec<(InstanceId, InstanceId, f64)>,
}

pub fn frame_records(seq: &ObservationSequence) -> Vec<FrameRecord> {
    seq.frames
        .iter()
        .map(|f| FrameRecord {
            sequence: seq.id.clone(),
            t: f.time_index,
            poses: f.part_poses.clone(),
            pairs: f.pair_attributes.iter().map(|(&(i, j), &p)| (i, j, p)).collect(),
        })
        .collect()
}

pub fn write_observations(
    path: &Path,
    scene: &Scene,
    sequences: &[ObservationSequence],
) -> Result<()> {
    let header = Header::new(OBSERVATIONS, scene.catalog(), Some(scene));
    let records: Vec<FrameRecord> = sequences.iter().flat_map(frame_records).collect();
    write_jsonl(path, &header, &records)
}

/// Sequences in first-seen order. Frames of a sequence must be numbered
/// `0, 1, 2, ...` in file order.
pub fn read_observations(path: &Path) -> Result<(Header, Vec<ObservationSequence>)> {
    let (header, records) = read_jsonl::<FrameRecord>(path, OBSERVATIONS)?;
    let mut out: Vec<ObservationSequence> = Vec::new();
    let mut index: BTreeMap<String, usize> = BTreeMap::new();
    for (line, r) in records {
        let n = *index.entry(r.sequence.clone()).or_insert_with(|| {
            out.push(ObservationSequence {
                id: r.sequence.clone(),
                frames: Vec::new(),
            });
            out.len() - 1
        });
        let seq = &mut out[n];
        let parse = |reason: String| IoError::Parse {
            path: path.to_path_buf(),
            line,
            reason,
        };
        if r.t != seq.frames.len() {
            return Err(parse(format!(
                "sequence `{}`: expected frame {}, found {}",
                r.sequence,
                seq.frames.len(),
                r.t
            )));
        }
        let mut frame = FrameObservation::new(r.t);
        frame.part_poses = r.poses;
        for (i, j, p) in r.pairs {
            frame.set_pair(i, j, p).map_err(|e| parse(e.to_string()))?;
        }
        seq.frames.push(frame);
    }
    Ok((header, out))
}

// Annotations.

pub fn write_annotations(path: &Path, scene: &Scene, records: &[AnnotationRecord]) -> Result<()> {
    write_jsonl(path, &Header::new(ANNOTATIONS, scene.catalog(), Some(scene)), records)
}

pub fn read_annotations(path: &Path) -> Result<(Header, Vec<(usize, AnnotationRecord)>)> {
    read_jsonl(path, ANNOTATIONS)
}

// Labelings: ground truth and predictions share one format.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentRecord {
    pub begin: usize,
    pub end: usize,
    pub key: CanonicalKey,
    pub joints: Vec<Joint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionRecord {
    /// First frame of the resulting segment.
    pub start: usize,
    pub sign: Sign,
    pub joints: Vec<Joint>,
    pub key: CanonicalKey,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelingRecord {
    pub sequence: String,
    pub frames: usize,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_score: Option<f64>,
    /// Model state index per frame (predictions only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_labels: Option<Vec<usize>>,
    pub segments: Vec<SegmentRecord>,
    pub actions: Vec<ActionRecord>,
}

impl LabelingRecord {
    pub fn from_segments(
        sequence: &str,
        frames: usize,
        segments: &[(usize, usize, Assembly)],
        actions: &[crate::assembly::AssemblyAction],
    ) -> Result<Self, AssemblyError> {
        let scene = match segments.first() {
            Some((_, _, a)) => a.scene().clone(),
            None => {
                return Ok(LabelingRecord {
                    sequence: sequence.to_string(),
                    frames,
                    status: Status::Ok,
                    total_score: None,
                    frame_labels: None,
                    segments: Vec::new(),
                    actions: Vec::new(),
                })
            }
        };
        let segs = segments
            .iter()
            .map(|(b, e, a)| {
                Ok(SegmentRecord {
                    begin: *b,
                    end: *e,
                    key: a.canonical_key()?,
                    joints: a.joints().iter().copied().collect(),
                })
            })
            .collect::<Result<Vec<_>, AssemblyError>>()?;
        let acts = actions
            .iter()
            .zip(&segments[1..])
            .map(|(a, (b, _, _))| {
                Ok(ActionRecord {
                    start: *b,
                    sign: a.sign,
                    joints: a.delta.iter().copied().collect(),
                    key: a.canonical_key(&scene)?,
                })
            })
            .collect::<Result<Vec<_>, AssemblyError>>()?;
        Ok(LabelingRecord {
            sequence: sequence.to_string(),
            frames,
            status: Status::Ok,
            total_score: None,
            frame_labels: None,
            segments: segs,
            actions: acts,
        })
    }

    pub fn truth(seq: &LabeledSequence) -> Result<Self, AssemblyError> {
        let segments: Vec<(usize, usize, Assembly)> = seq
            .segments
            .iter()
            .map(|s| (s.begin, s.end, s.assembly.clone()))
            .collect();
        let actions = seq
            .segments
            .windows(2)
            .map(|w| w[0].assembly.diff(&w[1].assembly))
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_segments(seq.id(), seq.frames(), &segments, &actions)
    }

    pub fn prediction(
        sequence: &str,
        frames: usize,
        vocab: &Vocabulary,
        r: &DecodeResult,
    ) -> Result<Self, AssemblyError> {
        let segments: Vec<(usize, usize, Assembly)> = r
            .segments
            .iter()
            .map(|s| (s.begin, s.end, vocab.assembly(s.state).clone()))
            .collect();
        let actions = r.actions(vocab).map_err(|e| AssemblyError::NotComparable(e.to_string()))?;
        let mut rec = Self::from_segments(sequence, frames, &segments, &actions)?;
        rec.total_score = Some(r.total_score);
        rec.frame_labels = Some(r.frame_labels.clone());
        Ok(rec)
    }

    pub fn infeasible(sequence: &str, frames: usize) -> Self {
        LabelingRecord {
            sequence: sequence.to_string(),
            frames,
            status: Status::Infeasible,
            total_score: None,
            frame_labels: None,
            segments: Vec::new(),
            actions: Vec::new(),
        }
    }

    /// Canonical key of every frame; empty when infeasible.
    pub fn frame_keys(&self) -> Vec<CanonicalKey> {
        self.segments
            .iter()
            .flat_map(|s| std::iter::repeat_n(s.key.clone(), s.end - s.begin))
            .collect()
    }

    pub fn action_keys(&self) -> Vec<CanonicalKey> {
        self.actions.iter().map(|a| a.key.clone()).collect()
    }

    pub fn boundaries(&self) -> Vec<(usize, usize)> {
        self.segments.iter().map(|s| (s.begin, s.end)).collect()
    }
}

pub fn write_labelings(path: &Path, header: &Header, records: &[LabelingRecord]) -> Result<()> {
    write_jsonl(path, header, records)
}

pub fn read_labelings(path: &Path) -> Result<(Header, Vec<LabelingRecord>)> {
    let (header, records) = read_jsonl::<LabelingRecord>(path, LABELINGS)?;
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::with_capacity(records.len());
    for (line, r) in records {
        if !seen.insert(r.sequence.clone()) {
            return Err(IoError::Parse {
                path: path.to_path_buf(),
                line,
                reason: format!("duplicate sequence `{}`", r.sequence),
            });
        }
        let mut next = 0;
        for s in &r.segments {
            if s.begin != next || s.end <= s.begin {
                return Err(IoError::Parse {
                    path: path.to_path_buf(),
                    line,
                    reason: format!("sequence `{}`: segments do not tile", r.sequence),
                });
            }
            next = s.end;
        }
        if r.status == Status::Ok && next != r.frames {
            return Err(IoError::Parse {
                path: path.to_path_buf(),
                line,
                reason: format!("sequence `{}`: segments cover {next} of {} frames", r.sequence, r.frames),
            });
        }
        out.push(r);
    }
    Ok((header, out))
}

// Precomputed scores.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreRecord {
    pub sequence: String,
    pub frame: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assembly: Option<CanonicalKey>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<Sign>,
    pub score: f64,
}

pub fn read_scores(path: &Path) -> Result<(Header, BTreeMap<String, PrecomputedScores>)> {
    let (header, records) = read_jsonl::<ScoreRecord>(path, SCORES)?;
    let mut out: BTreeMap<String, PrecomputedScores> = BTreeMap::new();
    for (line, r) in records {
        let parse = |reason: String| IoError::Parse {
            path: path.to_path_buf(),
            line,
            reason,
        };
        let entry = out.entry(r.sequence.clone()).or_default();
        match (r.assembly, r.action) {
            (Some(k), None) => entry.insert_assembly(r.frame, k, r.score),
            (None, Some(s)) => entry.insert_action(r.frame, s, r.score),
            _ => return Err(parse("exactly one of `assembly` and `action` is required".into())),
        }
        .map_err(|e| parse(e.to_string()))?;
    }
    Ok((header, out))
}

pub fn write_scores(path: &Path, header: &Header, records: &[ScoreRecord]) -> Result<()> {
    write_jsonl(path, header, records)
}

// Model.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateRecord {
    pub key: CanonicalKey,
    pub joints: Vec<Joint>,
}

/// Finite log transition probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionRecord {
    pub from: usize,
    pub to: usize,
    pub log_prob: f64,
}

/// A trained model. Transitions missing from `transitions` have
/// probability zero; `allowed` lists the structurally valid pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelRecord {
    pub catalog: CatalogDef,
    pub scene: Vec<PartInstance>,
    pub states: Vec<StateRecord>,
    pub transitions: Vec<TransitionRecord>,
    pub allowed: Vec<(usize, usize)>,
    pub feature_config: FeatureConfig,
    pub w_seq: f64,
    pub smoothing: f64,
}

impl ModelRecord {
    pub fn from_model(model: &ModelParams) -> Result<Self, AssemblyError> {
        let scene = model
            .scene()
            .ok_or_else(|| AssemblyError::NotComparable("empty vocabulary".into()))?;
        let n = model.vocabulary.len();
        let mut transitions = Vec::new();
        let mut allowed = Vec::new();
        for u in 0..n {
            for v in 0..n {
                let lp = model.transitions.log_prob(u, v);
                if lp.is_finite() {
                    transitions.push(TransitionRecord { from: u, to: v, log_prob: lp });
                }
                if u != v && model.transitions.allowed(u, v) {
                    allowed.push((u, v));
                }
            }
        }
        Ok(ModelRecord {
            catalog: scene.catalog().to_def(),
            scene: scene.instances().to_vec(),
            states: model
                .vocabulary
                .entries()
                .iter()
                .map(|(k, a)| StateRecord {
                    key: k.clone(),
                    joints: a.joints().iter().copied().collect(),
                })
                .collect(),
            transitions,
            allowed,
            feature_config: model.feature_config.clone(),
            w_seq: model.w_seq,
            smoothing: model.smoothing,
        })
    }

    pub fn into_model(self, path: &Path) -> Result<ModelParams> {
        let catalog = Arc::new(PartCatalog::try_from(self.catalog).map_err(|e| invalid(path, e))?);
        let scene = Arc::new(Scene::new(catalog, self.scene).map_err(|e| invalid(path, e))?);
        let mut entries = Vec::with_capacity(self.states.len());
        for s in self.states {
            let a = Assembly::new(scene.clone(), s.joints).map_err(|e| invalid(path, e))?;
            let key = a.canonical_key().map_err(|e| invalid(path, e))?;
            if key != s.key {
                return Err(invalid(path, format!("state key {} does not match its joints", s.key)));
            }
            entries.push((key, a));
        }
        let n = entries.len();
        if n == 0 {
            return Err(invalid(path, "model has no states"));
        }
        let mut log_prob = vec![f64::NEG_INFINITY; n * n];
        let mut mask = vec![false; n * n];
        for u in 0..n {
            mask[u * n + u] = true;
        }
        for &(u, v) in &self.allowed {
            if u >= n || v >= n {
                return Err(invalid(path, format!("allowed pair ({u}, {v}) out of range")));
            }
            mask[u * n + v] = true;
        }
        for t in &self.transitions {
            if t.from >= n || t.to >= n {
                return Err(invalid(path, format!("transition ({}, {}) out of range", t.from, t.to)));
            }
            log_prob[t.from * n + t.to] = t.log_prob;
        }
        let transitions = TransitionModel::from_parts(n, log_prob, mask).map_err(|e| invalid(path, e))?;
        self.feature_config.validate().map_err(|e| invalid(path, e))?;
        Ok(ModelParams {
            vocabulary: Vocabulary::from_entries(entries),
            transitions,
            feature_config: self.feature_config,
            w_seq: self.w_seq,
            smoothing: self.smoothing,
        })
    }
}

pub fn write_model(path: &Path, model: &ModelParams) -> Result<()> {
    let record = ModelRecord::from_model(model).map_err(|e| invalid(path, e))?;
    let scene = model.scene().expect("nonempty vocabulary");
    write_jsonl(path, &Header::new(MODEL, scene.catalog(), Some(scene)), &[record])
}

pub fn read_model(path: &Path) -> Result<ModelParams> {
    let (header, mut records) = read_jsonl::<ModelRecord>(path, MODEL)?;
    if records.len() != 1 {
        return Err(invalid(path, format!("expected one model record, found {}", records.len())));
    }
    let (_, record) = records.pop().expect("one record");
    let model = record.into_model(path)?;
    header.check_catalog(path, model.scene().expect("nonempty").catalog())?;
    Ok(model)
}

// Run configuration.

/// Hyperparameter grid: the Cartesian product of the lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub lambda: Vec<f64>,
    pub alpha: Vec<f64>,
    pub weights: Vec<BTreeMap<String, f64>>,
    #[serde(default = "default_w_seq")]
    pub w_seq: Vec<f64>,
}

fn default_w_seq() -> Vec<f64> {
    vec![1.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateSection {
    pub n_sequences: usize,
    #[serde(flatten)]
    pub config: SimConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub observations: PathBuf,
    pub annotations: PathBuf,
    #[serde(default)]
    pub smoothing: f64,
    #[serde(default = "default_objective")]
    pub objective: Objective,
    /// Duration bound used while scoring grid cells; unbounded if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_duration: Option<usize>,
    #[serde(default)]
    pub missing_pose_policy: crate::features::MissingPosePolicy,
    pub grid: GridConfig,
}

fn default_objective() -> Objective {
    Objective::EditScore
}

impl TrainSection {
    pub fn mode(&self) -> DecodeMode {
        match self.max_duration {
            Some(k) => DecodeMode::Bounded(k),
            None => DecodeMode::Segmental,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodeSection {
    pub model: PathBuf,
    pub observations: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundaries: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_duration: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub predictions: PathBuf,
    pub truth: PathBuf,
}

/// Everything a CLI run needs; command-line flags override fields.
/// Relative paths are resolved against the config file's directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub catalog: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decode: Option<DecodeSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalSection>,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: RunConfig = read_toml(path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve(base);
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = &mut self.catalog {
            fix(p);
        }
        if let Some(p) = &mut self.out_dir {
            fix(p);
        }
        if let Some(t) = &mut self.train {
            fix(&mut t.observations);
            fix(&mut t.annotations);
        }
        if let Some(d) = &mut self.decode {
            fix(&mut d.model);
            fix(&mut d.observations);
            if let Some(p) = &mut d.boundaries {
                fix(p);
            }
            if let Some(p) = &mut d.scores {
                fix(p);
            }
        }
        if let Some(e) = &mut self.eval {
            fix(&mut e.predictions);
            fix(&mut e.truth);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::tests::{beam_scene, BEAMS};
    use crate::simulator::{simulate_dataset, tests::beams_config};
    use crate::training::estimate_transitions;

    fn catalog() -> Arc<PartCatalog> {
        Arc::new(PartCatalog::from_toml_str(BEAMS).unwrap())
    }

    #[test]
    fn observations_round_trip() {
        let mut cfg = beams_config(4);
        cfg.pose_noise_sigma = 0.01;
        cfg.attribute_flip_noise = 0.1;
        cfg.dropout_prob = 0.2;
        let data = simulate_dataset(&cfg, catalog(), 3).unwrap();
        let scene = data[0].segments[0].assembly.scene().clone();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("obs.jsonl");
        let obs: Vec<_> = data.iter().map(|s| s.observations.clone()).collect();
        write_observations(&path, &scene, &obs).unwrap();
        let (header, back) = read_observations(&path).unwrap();
        assert_eq!(back, obs);
        header.check_catalog(&path, scene.catalog()).unwrap();
        let first = fs::read(&path).unwrap();
        write_observations(&path, &scene, &back).unwrap();
        assert_eq!(fs::read(&path).unwrap(), first);
    }

    #[test]
    fn model_round_trip() {
        let data = simulate_dataset(&beams_config(8), catalog(), 4).unwrap();
        let (vocabulary, transitions) = estimate_transitions(&data, 0.5).unwrap();
        let model = ModelParams {
            vocabulary,
            transitions,
            feature_config: FeatureConfig::default(),
            w_seq: 0.5,
            smoothing: 0.5,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.jsonl");
        write_model(&path, &model).unwrap();
        let back = read_model(&path).unwrap();
        assert_eq!(back.vocabulary.len(), model.vocabulary.len());
        for u in 0..model.vocabulary.len() {
            assert_eq!(back.vocabulary.key(u), model.vocabulary.key(u));
            for v in 0..model.vocabulary.len() {
                assert_eq!(back.transitions.log_prob(u, v), model.transitions.log_prob(u, v));
                if u != v {
                    assert_eq!(back.transitions.allowed(u, v), model.transitions.allowed(u, v));
                }
            }
        }
        let bytes = fs::read(&path).unwrap();
        write_model(&path, &back).unwrap();
        assert_eq!(fs::read(&path).unwrap(), bytes);
    }

    #[test]
    fn schema_and_line_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.jsonl");
        let scene = beam_scene();
        write_annotations(&path, &scene, &[]).unwrap();
        assert!(matches!(read_observations(&path), Err(IoError::Schema { .. })));
        let mut text = fs::read_to_string(&path).unwrap();
        text.push_str("{not json}\n");
        fs::write(&path, text).unwrap();
        match read_annotations(&path) {
            Err(IoError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn run_config_round_trip() {
        let text = r#"
seed = 3
catalog = "catalog.toml"

[simulate]
n_sequences = 2
seed = 1
n_segments = 4
duration_range = [2, 5]
pose_noise_sigma = 0.01
scene = [{ instance = 0, part_type = "side" }, { instance = 1, part_type = "beam" }]

[train]
observations = "obs.jsonl"
annotations = "ann.jsonl"
objective = "frame_accuracy"

[train.grid]
lambda = [1.0, 2.0]
alpha = [0.5]
weights = [{ pose = 1.0 }]
"#;
        let cfg = RunConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.simulate.as_ref().unwrap().config.duration_range, (2, 5));
        let again = RunConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(again, cfg);
    }
}
