//! Model estimation from labeled sequences.
//!
//! The state space is the set of canonical assemblies attested in training
//! data. Transitions are empirical (optionally additively smoothed) over
//! structurally valid successors. Feature hyperparameters and weights are
//! chosen by exhaustive grid search on a decoding metric.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::{
    Assembly, AssemblyAction, AssemblyError, CanonicalKey, ContactId, InstanceId, Joint, Scene,
    Sign,
};
use crate::decoder::{
    DecodeError, DecodeResult, Initial, Problem, ScoreTable, TransitionModel, Vocabulary,
};
use crate::features::{
    action_boundary_scores, FeatureConfig, FeatureError, FeatureTerms, Hypotheses,
    MissingPosePolicy, ObservationSequence, PrecomputedScores,
};
use crate::metrics;

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error("line {line}: {source}")]
    Replay {
        line: usize,
        #[source]
        source: AssemblyError,
    },
    #[error("line {line}: {reason}")]
    BadAnnotation { line: usize, reason: String },
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error("empty parameter grid")]
    EmptyGrid,
    #[error("invalid smoothing {0}")]
    BadSmoothing(f64),
    #[error("sequence `{0}`: segments do not tile its frames")]
    BadSegments(String),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

pub type Result<T, E = TrainingError> = std::result::Result<T, E>;

/// One line of an action annotation: `action(object1, object2, contacts)`
/// over a time span. Consecutive records of one video that share span and
/// action form a single compound action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub video: String,
    /// First frame of the assembly produced by the action.
    pub start: usize,
    /// End of the action interval (inclusive of `start`, `end >= start`).
    pub end: usize,
    pub action: Sign,
    pub object1: InstanceId,
    pub object2: InstanceId,
    /// Contact pairs `[contact on object1, contact on object2]`.
    pub contacts: Vec<[ContactId; 2]>,
}

/// The assemblies visited by one annotated video.
#[derive(Debug, Clone, PartialEq)]
pub struct AssemblySequence {
    pub video: String,
    /// Starts with the empty assembly; one more entry per action.
    pub assemblies: Vec<Assembly>,
    /// `(start frame, action)` for each step.
    pub actions: Vec<(usize, AssemblyAction)>,
}

/// Replay annotations from the empty state. `records` pairs each record with
/// its 1-based line number for diagnostics. Videos appear in first-seen order.
pub fn parse_action_annotations(
    records: &[(usize, AnnotationRecord)],
    scene: &Arc<Scene>,
) -> Result<Vec<AssemblySequence>> {
    let mut order: Vec<String> = Vec::new();
    let mut grouped: BTreeMap<String, Vec<&(usize, AnnotationRecord)>> = BTreeMap::new();
    for r in records {
        if !grouped.contains_key(&r.1.video) {
            order.push(r.1.video.clone());
        }
        grouped.entry(r.1.video.clone()).or_default().push(r);
    }
    let mut out = Vec::with_capacity(order.len());
    for video in order {
        let mut cur = Assembly::empty(scene.clone());
        let mut seq = AssemblySequence {
            video: video.clone(),
            assemblies: vec![cur.clone()],
            actions: Vec::new(),
        };
        let recs = &grouped[&video];
        let mut i = 0;
        while i < recs.len() {
            let (line, head) = recs[i];
            let mut joints = Vec::new();
            let mut j = i;
            while j < recs.len()
                && recs[j].1.start == head.start
                && recs[j].1.end == head.end
                && recs[j].1.action == head.action
            {
                let (l, r) = recs[j];
                if r.end < r.start {
                    return Err(TrainingError::BadAnnotation {
                        line: *l,
                        reason: format!("span {}..{} is reversed", r.start, r.end),
                    });
                }
                if r.contacts.is_empty() {
                    return Err(TrainingError::BadAnnotation {
                        line: *l,
                        reason: "no contact pairs".into(),
                    });
                }
                for [ca, cb] in &r.contacts {
                    joints.push(Joint::new(r.object1, *ca, r.object2, *cb));
                }
                j += 1;
            }
            if let Some((_, prev)) = seq.actions.last() {
                let _ = prev;
            }
            if seq.actions.last().is_some_and(|(s, _)| *s >= head.start) {
                return Err(TrainingError::BadAnnotation {
                    line: *line,
                    reason: "actions must start at increasing frames".into(),
                });
            }
            let action = AssemblyAction::new(head.action, joints)
                .map_err(|source| TrainingError::Replay { line: *line, source })?;
            cur = cur
                .apply(&action)
                .map_err(|source| TrainingError::Replay { line: *line, source })?;
            seq.assemblies.push(cur.clone());
            seq.actions.push((head.start, action));
            i = j;
        }
        out.push(seq);
    }
    Ok(out)
}

/// Flatten an action list back into annotation records, one per joint.
pub fn annotation_records(video: &str, actions: &[(usize, AssemblyAction)]) -> Vec<AnnotationRecord> {
    let mut out = Vec::new();
    for (start, a) in actions {
        for j in &a.delta {
            out.push(AnnotationRecord {
                video: video.to_string(),
                start: *start,
                end: *start,
                action: a.sign,
                object1: j.part_a,
                object2: j.part_b,
                contacts: vec![[j.contact_a, j.contact_b]],
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSegment {
    pub begin: usize,
    pub end: usize,
    pub assembly: Assembly,
}

/// Observations with their ground-truth assembly segments.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSequence {
    pub observations: ObservationSequence,
    pub segments: Vec<LabeledSegment>,
}

impl LabeledSequence {
    pub fn new(observations: ObservationSequence, segments: Vec<LabeledSegment>) -> Result<Self> {
        let mut next = 0;
        for s in &segments {
            if s.begin != next || s.end <= s.begin {
                return Err(TrainingError::BadSegments(observations.id.clone()));
            }
            next = s.end;
        }
        if next != observations.len() {
            return Err(TrainingError::BadSegments(observations.id.clone()));
        }
        Ok(LabeledSequence {
            observations,
            segments,
        })
    }

    /// Segments from an annotated assembly sequence: each action starts a
    /// new segment at its start frame.
    pub fn from_annotations(observations: ObservationSequence, seq: &AssemblySequence) -> Result<Self> {
        let mut segments = Vec::with_capacity(seq.assemblies.len());
        let mut begin = 0;
        for (n, a) in seq.assemblies.iter().enumerate() {
            let end = seq
                .actions
                .get(n)
                .map_or(observations.len(), |(start, _)| *start);
            segments.push(LabeledSegment {
                begin,
                end,
                assembly: a.clone(),
            });
            begin = end;
        }
        Self::new(observations, segments)
    }

    pub fn id(&self) -> &str {
        &self.observations.id
    }

    pub fn frames(&self) -> usize {
        self.observations.len()
    }

    pub fn boundaries(&self) -> Vec<(usize, usize)> {
        self.segments.iter().map(|s| (s.begin, s.end)).collect()
    }

    pub fn segment_keys(&self) -> Result<Vec<CanonicalKey>> {
        Ok(self
            .segments
            .iter()
            .map(|s| s.assembly.canonical_key())
            .collect::<Result<_, _>>()?)
    }

    pub fn frame_keys(&self) -> Result<Vec<CanonicalKey>> {
        let keys = self.segment_keys()?;
        Ok(self
            .segments
            .iter()
            .zip(keys)
            .flat_map(|(s, k)| std::iter::repeat_n(k, s.end - s.begin))
            .collect())
    }

    pub fn actions(&self) -> Result<Vec<AssemblyAction>> {
        let assemblies: Vec<Assembly> = self.segments.iter().map(|s| s.assembly.clone()).collect();
        metrics::actions_from_segments(&assemblies).map_err(|(_, e)| e.into())
    }
}

/// Vocabulary of attested canonical assemblies and their transition model.
/// `log P(v | u) = log((n(u,v) + eps) / (n(u) + eps * |allowed(u)|))` over
/// structurally allowed successors `v != u`; everything else is `-inf`.
pub fn estimate_transitions(
    train: &[LabeledSequence],
    smoothing: f64,
) -> Result<(Vocabulary, TransitionModel)> {
    if train.is_empty() {
        return Err(TrainingError::EmptyTrainingSet);
    }
    if !(smoothing >= 0.0 && smoothing.is_finite()) {
        return Err(TrainingError::BadSmoothing(smoothing));
    }
    let vocab = Vocabulary::from_assemblies(
        train.iter().flat_map(|s| s.segments.iter().map(|seg| &seg.assembly)),
    )?;
    let n = vocab.len();
    let mut counts = vec![0u64; n * n];
    for seq in train {
        let ids: Vec<usize> = seq
            .segment_keys()?
            .iter()
            .map(|k| vocab.id(k).expect("vocabulary covers training"))
            .collect();
        for w in ids.windows(2) {
            if w[0] != w[1] {
                counts[w[0] * n + w[1]] += 1;
            }
        }
    }
    let mut mask = vocab.structural_mask()?;
    for u in 0..n {
        for v in 0..n {
            if counts[u * n + v] > 0 {
                mask[u * n + v] = true;
            }
        }
    }
    let mut log_prob = vec![f64::NEG_INFINITY; n * n];
    for u in 0..n {
        let allowed: Vec<usize> = (0..n).filter(|&v| v != u && mask[u * n + v]).collect();
        let total: u64 = allowed.iter().map(|&v| counts[u * n + v]).sum();
        let denom = total as f64 + smoothing * allowed.len() as f64;
        if denom <= 0.0 {
            continue;
        }
        for &v in &allowed {
            let num = counts[u * n + v] as f64 + smoothing;
            if num > 0.0 {
                log_prob[u * n + v] = (num / denom).ln();
            }
        }
    }
    let model = TransitionModel::from_parts(n, log_prob, mask)?;
    Ok((vocab, model))
}

/// How sequences are decoded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "max_duration")]
pub enum DecodeMode {
    Segmental,
    Bounded(usize),
    /// Use the ground-truth segment boundaries (training/evaluation only).
    KnownBoundaries,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    FrameAccuracy,
    EditScore,
}

/// Everything needed to decode.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub vocabulary: Vocabulary,
    pub transitions: TransitionModel,
    pub feature_config: FeatureConfig,
    pub w_seq: f64,
    pub smoothing: f64,
}

impl ModelParams {
    /// Sequences start in the empty assembly when it is in the vocabulary.
    pub fn initial(&self) -> Initial {
        match self.vocabulary.empty_state() {
            Some(s) => Initial::Forced(s),
            None => Initial::Free,
        }
    }

    pub fn scene(&self) -> Option<&Arc<Scene>> {
        self.vocabulary.entries().first().map(|(_, a)| a.scene())
    }
}

/// A model with its hypothesis geometry prepared.
pub struct Recognizer<'m> {
    pub model: &'m ModelParams,
    hypotheses: Hypotheses,
}

impl<'m> Recognizer<'m> {
    pub fn new(model: &'m ModelParams) -> Result<Self> {
        Ok(Recognizer {
            model,
            hypotheses: Hypotheses::new(&model.vocabulary)?,
        })
    }

    pub fn terms(&self, obs: &ObservationSequence) -> FeatureTerms {
        self.hypotheses
            .terms(obs, self.model.feature_config.missing_pose_policy)
    }

    pub fn score_table(
        &self,
        obs: &ObservationSequence,
        scores: Option<&PrecomputedScores>,
    ) -> Result<ScoreTable> {
        Ok(self
            .hypotheses
            .score_table(obs, scores, &self.model.feature_config)?)
    }

    pub fn decode(
        &self,
        obs: &ObservationSequence,
        scores: Option<&PrecomputedScores>,
        mode: DecodeMode,
        boundaries: Option<&[(usize, usize)]>,
    ) -> Result<DecodeResult> {
        let table = self.score_table(obs, scores)?;
        decode_table(self.model, &table, obs.len(), scores, mode, boundaries)
    }
}

fn decode_table(
    model: &ModelParams,
    table: &ScoreTable,
    frames: usize,
    scores: Option<&PrecomputedScores>,
    mode: DecodeMode,
    boundaries: Option<&[(usize, usize)]>,
) -> Result<DecodeResult> {
    let boundary = match scores {
        Some(s) => action_boundary_scores(&model.vocabulary, frames, s, &model.feature_config)?,
        None => None,
    };
    let mut problem =
        Problem::new(table, &model.transitions, model.w_seq).with_initial(model.initial());
    if let Some(b) = &boundary {
        problem = problem.with_boundary_scores(b);
    }
    Ok(match mode {
        DecodeMode::Segmental => problem.segmental()?,
        DecodeMode::Bounded(k) => problem.segmental_bounded(k)?,
        DecodeMode::KnownBoundaries => {
            let b = boundaries.ok_or_else(|| {
                DecodeError::InvalidSegments {
                    frames,
                    reason: "known-boundary decoding needs boundaries".into(),
                }
            })?;
            problem.known_boundaries(b)?
        }
    })
}

/// Per-frame canonical keys of a decode.
pub fn decoded_keys(vocab: &Vocabulary, r: &DecodeResult) -> Vec<CanonicalKey> {
    r.frame_labels.iter().map(|&s| vocab.key(s).clone()).collect()
}

/// One grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub lambda: f64,
    pub alpha: f64,
    pub weights: BTreeMap<String, f64>,
    pub w_seq: f64,
}

impl Candidate {
    pub fn feature_config(&self, policy: MissingPosePolicy) -> FeatureConfig {
        FeatureConfig {
            lambda: self.lambda,
            alpha: self.alpha,
            weights: self.weights.clone(),
            missing_pose_policy: policy,
        }
    }
}

/// Cartesian product of hyperparameter lists, in row-major order
/// (`lambda` outermost, `w_seq` innermost).
pub fn product_grid(
    lambdas: &[f64],
    alphas: &[f64],
    weights: &[BTreeMap<String, f64>],
    w_seqs: &[f64],
) -> Vec<Candidate> {
    let mut out = Vec::new();
    for &lambda in lambdas {
        for &alpha in alphas {
            for w in weights {
                for &w_seq in w_seqs {
                    out.push(Candidate {
                        lambda,
                        alpha,
                        weights: w.clone(),
                        w_seq,
                    });
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearch {
    pub grid: Vec<Candidate>,
    pub objective: Objective,
    pub mode: DecodeMode,
    pub smoothing: f64,
    #[serde(default)]
    pub missing_pose_policy: MissingPosePolicy,
}

#[derive(Debug, Clone)]
pub struct GridOutcome {
    pub model: ModelParams,
    pub best_index: usize,
    /// Mean objective per grid cell, in grid order.
    pub cell_scores: Vec<f64>,
}

/// Metric of one decode against ground truth; infeasible decodes score 0.
pub fn sequence_metric(
    vocab: &Vocabulary,
    decoded: &Result<DecodeResult, DecodeError>,
    truth: &[CanonicalKey],
    objective: Objective,
) -> f64 {
    let Ok(r) = decoded else { return 0.0 };
    let pred = decoded_keys(vocab, r);
    match objective {
        Objective::FrameAccuracy => metrics::frame_accuracy(&pred, truth).unwrap_or(0.0),
        Objective::EditScore => metrics::edit_score(&pred, truth),
    }
}

/// Everything grid search needs from one evaluation sequence.
pub struct Prepared<'a> {
    pub terms: &'a FeatureTerms,
    pub truth: &'a [CanonicalKey],
    pub boundaries: &'a [(usize, usize)],
}

impl GridSearch {
    /// Fit transitions on `train` and select the grid cell maximizing the
    /// mean objective on the same sequences.
    pub fn run(&self, train: &[LabeledSequence]) -> Result<GridOutcome> {
        self.run_split(train, train)
    }

    /// Fit transitions on `fit`, select hyperparameters on `eval`.
    pub fn run_split(&self, fit: &[LabeledSequence], eval: &[LabeledSequence]) -> Result<GridOutcome> {
        if self.grid.is_empty() {
            return Err(TrainingError::EmptyGrid);
        }
        let (vocabulary, transitions) = estimate_transitions(fit, self.smoothing)?;
        let hypotheses = Hypotheses::new(&vocabulary)?;
        let terms: Vec<FeatureTerms> = eval
            .iter()
            .map(|s| hypotheses.terms(&s.observations, self.missing_pose_policy))
            .collect();
        let truths = eval.iter().map(|s| s.frame_keys()).collect::<Result<Vec<_>>>()?;
        let bounds: Vec<_> = eval.iter().map(|s| s.boundaries()).collect();
        let prepared: Vec<Prepared<'_>> = (0..eval.len())
            .map(|i| Prepared {
                terms: &terms[i],
                truth: &truths[i],
                boundaries: &bounds[i],
            })
            .collect();
        self.select(vocabulary, transitions, &prepared)
    }

    /// Score every grid cell on prepared sequences and keep the best.
    /// Ties go to the earliest cell in grid order.
    pub fn select(
        &self,
        vocabulary: Vocabulary,
        transitions: TransitionModel,
        prepared: &[Prepared<'_>],
    ) -> Result<GridOutcome> {
        if self.grid.is_empty() {
            return Err(TrainingError::EmptyGrid);
        }
        let cell_scores: Vec<f64> = self
            .grid
            .par_iter()
            .map(|cand| {
                let model = self.model(&vocabulary, &transitions, cand);
                let total: f64 = prepared
                    .iter()
                    .map(|p| {
                        let decoded = p
                            .terms
                            .score_table(&model.feature_config, None)
                            .map_err(TrainingError::from)
                            .and_then(|table| {
                                decode_table(&model, &table, p.terms.frames(), None, self.mode, Some(p.boundaries))
                            });
                        match decoded {
                            Ok(r) => sequence_metric(&model.vocabulary, &Ok(r), p.truth, self.objective),
                            Err(_) => 0.0,
                        }
                    })
                    .sum();
                total / prepared.len().max(1) as f64
            })
            .collect();
        let mut best_index = 0;
        for (i, &s) in cell_scores.iter().enumerate() {
            if s > cell_scores[best_index] {
                best_index = i;
            }
        }
        let model = self.model(&vocabulary, &transitions, &self.grid[best_index]);
        Ok(GridOutcome {
            model,
            best_index,
            cell_scores,
        })
    }

    fn model(&self, vocabulary: &Vocabulary, transitions: &TransitionModel, cand: &Candidate) -> ModelParams {
        ModelParams {
            vocabulary: vocabulary.clone(),
            transitions: transitions.clone(),
            feature_config: cand.feature_config(self.missing_pose_policy),
            w_seq: cand.w_seq,
            smoothing: self.smoothing,
        }
    }
}

/// Scores of one sequence decoded with a trained model.
pub fn evaluate(
    recognizer: &Recognizer<'_>,
    seq: &LabeledSequence,
    mode: DecodeMode,
) -> Result<metrics::SequenceScores> {
    let table = recognizer.score_table(&seq.observations, None)?;
    evaluate_table(recognizer.model, &table, seq, mode)
}

/// Like [`evaluate`], from a prepared score table.
pub fn evaluate_table(
    model: &ModelParams,
    table: &ScoreTable,
    seq: &LabeledSequence,
    mode: DecodeMode,
) -> Result<metrics::SequenceScores> {
    let truth = seq.frame_keys()?;
    let decoded = decode_table(model, table, seq.frames(), None, mode, Some(&seq.boundaries()));
    let vocab = &model.vocabulary;
    let (frame_accuracy, edit_score, action_edit_score) = match decoded {
        Ok(r) => {
            let pred = decoded_keys(vocab, &r);
            let scene = seq.segments[0].assembly.scene();
            let pred_actions = metrics::action_keys(&r.actions(vocab)?, scene)?;
            let true_actions = metrics::action_keys(&seq.actions()?, scene)?;
            (
                metrics::frame_accuracy(&pred, &truth).unwrap_or(0.0),
                metrics::edit_score(&pred, &truth),
                metrics::edit_score(&pred_actions, &true_actions),
            )
        }
        Err(TrainingError::Decode(DecodeError::NoFeasiblePath)) => (0.0, 0.0, 0.0),
        Err(e) => return Err(e),
    };
    Ok(metrics::SequenceScores {
        sequence: seq.id().to_string(),
        frame_accuracy,
        edit_score,
        action_edit_score,
    })
}

/// Leave-one-out: for each sequence, estimate transitions and grid-search
/// hyperparameters on the others, then decode it. Feature terms are
/// computed once per distinct fold vocabulary.
pub fn leave_one_out(data: &[LabeledSequence], search: &GridSearch) -> Result<metrics::EvalReport> {
    if data.len() < 2 {
        return Err(TrainingError::EmptyTrainingSet);
    }
    let truths = data.iter().map(|s| s.frame_keys()).collect::<Result<Vec<_>>>()?;
    let bounds: Vec<_> = data.iter().map(|s| s.boundaries()).collect();
    let mut cache: HashMap<Vec<CanonicalKey>, Vec<FeatureTerms>> = HashMap::new();
    let mut scores = Vec::with_capacity(data.len());
    for held in 0..data.len() {
        let train: Vec<LabeledSequence> = data
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != held)
            .map(|(_, s)| s.clone())
            .collect();
        let (vocabulary, transitions) = estimate_transitions(&train, search.smoothing)?;
        let keys: Vec<CanonicalKey> = vocabulary.entries().iter().map(|(k, _)| k.clone()).collect();
        if !cache.contains_key(&keys) {
            let hypotheses = Hypotheses::new(&vocabulary)?;
            let terms = data
                .par_iter()
                .map(|s| hypotheses.terms(&s.observations, search.missing_pose_policy))
                .collect();
            cache.insert(keys.clone(), terms);
        }
        let terms = &cache[&keys];
        let prepared: Vec<Prepared<'_>> = (0..data.len())
            .filter(|&i| i != held)
            .map(|i| Prepared {
                terms: &terms[i],
                truth: &truths[i],
                boundaries: &bounds[i],
            })
            .collect();
        let outcome = search.select(vocabulary, transitions, &prepared)?;
        let table = terms[held].score_table(&outcome.model.feature_config, None)?;
        scores.push(evaluate_table(&outcome.model, &table, &data[held], search.mode)?);
    }
    Ok(metrics::EvalReport::from_sequences(scores))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::tests::beam_scene;
    use crate::features::FrameObservation;

    fn rec(line: usize, start: usize, action: Sign, a: u32, b: u32, c: [u32; 2]) -> (usize, AnnotationRecord) {
        (
            line,
            AnnotationRecord {
                video: "v".into(),
                start,
                end: start,
                action,
                object1: a,
                object2: b,
                contacts: vec![c],
            },
        )
    }

    fn obs(frames: usize) -> ObservationSequence {
        ObservationSequence {
            id: "v".into(),
            frames: (0..frames).map(FrameObservation::new).collect(),
        }
    }

    #[test]
    fn replay_annotations() {
        let scene = beam_scene();
        let one = parse_action_annotations(&[rec(1, 2, Sign::Connect, 0, 1, [0, 0])], &scene).unwrap();
        assert_eq!(one[0].assemblies.len(), 2);
        assert!(one[0].assemblies[0].is_empty());
        assert_eq!(one[0].assemblies[1].joints().len(), 1);

        let round = parse_action_annotations(
            &[rec(1, 2, Sign::Connect, 0, 1, [0, 0]), rec(2, 4, Sign::Disconnect, 0, 1, [0, 0])],
            &scene,
        )
        .unwrap();
        assert!(round[0].assemblies.last().unwrap().is_empty());

        let err = parse_action_annotations(&[rec(1, 2, Sign::Disconnect, 0, 1, [0, 0])], &scene).unwrap_err();
        assert!(matches!(err, TrainingError::Replay { line: 1, .. }));
    }

    #[test]
    fn compound_records_merge() {
        let scene = beam_scene();
        let seqs = parse_action_annotations(
            &[rec(1, 2, Sign::Connect, 0, 1, [0, 0]), rec(2, 2, Sign::Connect, 0, 2, [1, 0])],
            &scene,
        )
        .unwrap();
        assert_eq!(seqs[0].actions.len(), 1);
        assert_eq!(seqs[0].actions[0].1.delta.len(), 2);
        let back = annotation_records("v", &seqs[0].actions);
        let again = parse_action_annotations(
            &back.into_iter().enumerate().collect::<Vec<_>>(),
            &scene,
        )
        .unwrap();
        assert_eq!(again[0].actions, seqs[0].actions);
    }

    fn labeled(scene: &Arc<Scene>, path: &[&[Joint]], len: usize) -> LabeledSequence {
        let segments = path
            .iter()
            .enumerate()
            .map(|(n, js)| LabeledSegment {
                begin: n * len,
                end: (n + 1) * len,
                assembly: Assembly::new(scene.clone(), js.iter().copied()).unwrap(),
            })
            .collect();
        LabeledSequence::new(obs(path.len() * len), segments).unwrap()
    }

    #[test]
    fn transition_counts() {
        let scene = beam_scene();
        let a: &[Joint] = &[Joint::new(0, 0, 1, 0)];
        let b: &[Joint] = &[Joint::new(0, 0, 1, 0), Joint::new(0, 1, 2, 0)];
        let c: &[Joint] = &[Joint::new(0, 0, 1, 0), Joint::new(0, 2, 2, 0)];
        let train = vec![
            labeled(&scene, &[a, b], 2),
            labeled(&scene, &[a, b], 2),
            labeled(&scene, &[a, c], 2),
        ];
        let (vocab, trans) = estimate_transitions(&train, 0.0).unwrap();
        assert_eq!(vocab.len(), 3);
        let ia = vocab.id_of(&train[0].segments[0].assembly).unwrap().unwrap();
        let ib = vocab.id_of(&train[0].segments[1].assembly).unwrap().unwrap();
        let ic = vocab.id_of(&train[2].segments[1].assembly).unwrap().unwrap();
        assert!((trans.log_prob(ia, ib).exp() - 2.0 / 3.0).abs() < 1e-12);
        assert!((trans.log_prob(ia, ic).exp() - 1.0 / 3.0).abs() < 1e-12);
        // b -> a is structurally allowed but never observed.
        assert!(trans.allowed(ib, ia));
        assert_eq!(trans.log_prob(ib, ia), f64::NEG_INFINITY);
        // b and c are incomparable.
        assert!(!trans.allowed(ib, ic));

        let (_, smoothed) = estimate_transitions(&train[2..], 1.0).unwrap();
        // a has two allowed successors (c, and nothing else attested), so
        // vocabulary here is {a, c}: P(c|a) = (1+1)/(1+1) = 1.
        assert!((smoothed.log_prob(0, 1).exp() - 1.0).abs() < 1e-12 || (smoothed.log_prob(1, 0).exp() - 1.0).abs() < 1e-12);
        assert!(matches!(estimate_transitions(&[], 0.0), Err(TrainingError::EmptyTrainingSet)));
    }

    #[test]
    fn laplace_with_two_successors() {
        let scene = beam_scene();
        let a: &[Joint] = &[Joint::new(0, 0, 1, 0)];
        let b: &[Joint] = &[Joint::new(0, 0, 1, 0), Joint::new(0, 1, 2, 0)];
        let empty: &[Joint] = &[];
        // a is seen once going to b; its allowed successors are {empty, b}.
        let train = vec![labeled(&scene, &[empty, a, b], 2)];
        let (vocab, trans) = estimate_transitions(&train, 1.0).unwrap();
        let ia = vocab.id_of(&train[0].segments[1].assembly).unwrap().unwrap();
        let ib = vocab.id_of(&train[0].segments[2].assembly).unwrap().unwrap();
        assert!((trans.log_prob(ia, ib).exp() - 2.0 / 3.0).abs() < 1e-12);
        for u in 0..vocab.len() {
            let row: f64 = (0..vocab.len()).map(|v| trans.log_prob(u, v).exp()).sum();
            assert!((row - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn empty_grid_is_an_error() {
        let scene = beam_scene();
        let empty: &[Joint] = &[];
        let train = vec![labeled(&scene, &[empty], 3)];
        let search = GridSearch {
            grid: vec![],
            objective: Objective::FrameAccuracy,
            mode: DecodeMode::Segmental,
            smoothing: 0.0,
            missing_pose_policy: MissingPosePolicy::SkipPair,
        };
        assert!(matches!(search.run(&train), Err(TrainingError::EmptyGrid)));
    }
}
