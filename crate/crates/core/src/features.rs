//! Observation features scoring how well a frame matches a hypothesis.
//!
//! Three sources are supported and combined linearly with weights:
//!
//! - `pose`: estimated relative part translations compared with those
//!   implied by the hypothesis, plus a constant penalty `alpha` for every
//!   pair the hypothesis leaves disconnected.
//! - `attribute`: estimated same-body probabilities compared with the
//!   hypothesis' connectivity by an inner product of `(-1, 1)`-rescaled
//!   two-entry distributions.
//! - `precomputed` / `action`: externally produced scores looked up by
//!   `(frame, canonical assembly key)` or `(frame, action sign)`.
//!
//! Relative translations are compared in the body frame of the lower-id
//! part of each pair, so features do not depend on where a free-floating
//! sub-assembly sits in the world.

use std::collections::{BTreeMap, HashMap};

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::{Assembly, AssemblyError, CanonicalKey, InstanceId, Scene, Sign};
use crate::decoder::{BoundaryScores, ScoreTable, Vocabulary};
use crate::kinematics::{component_layout, KinematicsError, Layout, Pose};

pub const POSE: &str = "pose";
pub const ATTRIBUTE: &str = "attribute";
pub const PRECOMPUTED: &str = "precomputed";
pub const ACTION: &str = "action";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("missing precomputed score for frame {frame}, key {key}")]
    MissingScore { frame: usize, key: String },
    #[error("invalid feature configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid observation: {0}")]
    InvalidObservation(String),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
}

pub type Result<T, E = FeatureError> = std::result::Result<T, E>;

/// Everything observed at one frame.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrameObservation {
    pub time_index: usize,
    /// Missing entries are unobserved parts.
    pub part_poses: BTreeMap<InstanceId, Pose>,
    /// Probability that `(i, j)`, `i < j`, lie on the same rigid body.
    pub pair_attributes: BTreeMap<(InstanceId, InstanceId), f64>,
}

impl FrameObservation {
    pub fn new(time_index: usize) -> Self {
        FrameObservation {
            time_index,
            ..Default::default()
        }
    }

    /// Insert a pair probability with the key normalized to `i < j`.
    pub fn set_pair(&mut self, i: InstanceId, j: InstanceId, p: f64) -> Result<()> {
        if i == j {
            return Err(FeatureError::InvalidObservation(format!("pair ({i}, {i})")));
        }
        if !(0.0..=1.0).contains(&p) {
            return Err(FeatureError::InvalidObservation(format!(
                "probability {p} for pair ({i}, {j}) is outside [0, 1]"
            )));
        }
        self.pair_attributes.insert((i.min(j), i.max(j)), p);
        Ok(())
    }

    pub fn pair(&self, i: InstanceId, j: InstanceId) -> Option<f64> {
        self.pair_attributes.get(&(i.min(j), i.max(j))).copied()
    }
}

/// A sequence of frames with `frames[t].time_index == t`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSequence {
    pub id: String,
    pub frames: Vec<FrameObservation>,
}

impl ObservationSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Externally computed scores.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PrecomputedScores {
    pub assembly: HashMap<(usize, CanonicalKey), f64>,
    pub action: HashMap<(usize, Sign), f64>,
}

impl PrecomputedScores {
    pub fn insert_assembly(&mut self, frame: usize, key: CanonicalKey, score: f64) -> Result<()> {
        if !score.is_finite() {
            return Err(FeatureError::InvalidObservation(format!(
                "non-finite precomputed score at frame {frame}"
            )));
        }
        self.assembly.insert((frame, key), score);
        Ok(())
    }

    pub fn insert_action(&mut self, frame: usize, sign: Sign, score: f64) -> Result<()> {
        if !score.is_finite() {
            return Err(FeatureError::InvalidObservation(format!(
                "non-finite action score at frame {frame}"
            )));
        }
        self.action.insert((frame, sign), score);
        Ok(())
    }

    fn assembly_score(&self, frame: usize, key: &CanonicalKey) -> Result<f64> {
        self.assembly
            .get(&(frame, key.clone()))
            .copied()
            .ok_or_else(|| FeatureError::MissingScore {
                frame,
                key: key.to_string(),
            })
    }

    fn action_score(&self, frame: usize, sign: Sign) -> Result<f64> {
        self.action
            .get(&(frame, sign))
            .copied()
            .ok_or_else(|| FeatureError::MissingScore {
                frame,
                key: sign.to_string(),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingPosePolicy {
    /// A pair with an unobserved part contributes nothing.
    #[default]
    SkipPair,
    /// An unobserved pair has zero residual but still pays `alpha` when the
    /// hypothesis leaves it disconnected.
    ZeroScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub lambda: f64,
    pub alpha: f64,
    /// Feature name to weight; absent names have weight 0.
    pub weights: BTreeMap<String, f64>,
    #[serde(default)]
    pub missing_pose_policy: MissingPosePolicy,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            lambda: 1.0,
            alpha: 1.0,
            weights: BTreeMap::from([(POSE.to_string(), 1.0)]),
            missing_pose_policy: MissingPosePolicy::SkipPair,
        }
    }
}

impl FeatureConfig {
    pub fn weight(&self, name: &str) -> f64 {
        self.weights.get(name).copied().unwrap_or(0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(FeatureError::InvalidConfig(format!("lambda = {}", self.lambda)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(FeatureError::InvalidConfig(format!("alpha = {}", self.alpha)));
        }
        for (name, w) in &self.weights {
            if ![POSE, ATTRIBUTE, PRECOMPUTED, ACTION].contains(&name.as_str()) {
                return Err(FeatureError::InvalidConfig(format!("unknown feature `{name}`")));
            }
            if !w.is_finite() {
                return Err(FeatureError::InvalidConfig(format!("weight {name} = {w}")));
            }
        }
        Ok(())
    }
}

/// The two sums the pose feature is linear in: `-(lambda * residual + alpha * open_pairs)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PoseTerms {
    pub residual: f64,
    pub open_pairs: f64,
}

impl PoseTerms {
    pub fn value(&self, lambda: f64, alpha: f64) -> f64 {
        -(lambda * self.residual + alpha * self.open_pairs)
    }
}

/// Pose-feature sums for one frame against one laid-out hypothesis.
pub fn pose_terms(
    obs: &FrameObservation,
    scene: &Scene,
    layout: &Layout,
    policy: MissingPosePolicy,
) -> PoseTerms {
    let ids: Vec<InstanceId> = scene.instance_ids().collect();
    let mut terms = PoseTerms::default();
    for (n, &j) in ids.iter().enumerate() {
        for &i in &ids[n + 1..] {
            let connected = layout.same_component(i, j);
            let observed = match (obs.part_poses.get(&i), obs.part_poses.get(&j)) {
                (Some(pi), Some(pj)) => Some(observed_local_delta(pi, pj)),
                _ => None,
            };
            match (observed, connected) {
                (Some(est), true) => {
                    let pred = layout.local_delta(i, j).expect("same component");
                    terms.residual += (est - pred).norm();
                }
                (Some(_), false) => terms.open_pairs += 1.0,
                (None, false) if policy == MissingPosePolicy::ZeroScore => terms.open_pairs += 1.0,
                (None, _) => {}
            }
        }
    }
    terms
}

/// `x_i - x_j` in the body frame of part `j`.
fn observed_local_delta(pi: &Pose, pj: &Pose) -> Vector3<f64> {
    pj.rotation.inverse() * (pi.translation - pj.translation)
}

/// Pose feature of one frame against hypothesis `s`.
pub fn pose_feature(obs: &FrameObservation, s: &Assembly, cfg: &FeatureConfig) -> Result<f64> {
    let layout = component_layout(s)?;
    Ok(pose_terms(obs, s.scene(), &layout, cfg.missing_pose_policy).value(cfg.lambda, cfg.alpha))
}

/// Same-body attribute feature; pairs absent from the observation add 0.
pub fn attribute_feature(obs: &FrameObservation, s: &Assembly) -> f64 {
    let components = s.component_index();
    attribute_with_components(obs, &components)
}

fn attribute_with_components(obs: &FrameObservation, components: &BTreeMap<InstanceId, usize>) -> f64 {
    obs.pair_attributes
        .iter()
        .map(|(&(i, j), &p)| {
            let same = match (components.get(&i), components.get(&j)) {
                (Some(a), Some(b)) => a == b,
                _ => return 0.0,
            };
            pair_agreement(p, same)
        })
        .sum()
}

/// `<2 (1-p, p) - 1, 2 onehot(same) - 1>`, in `[-2, 2]`.
pub fn pair_agreement(p: f64, same: bool) -> f64 {
    let est = [1.0 - 2.0 * p, 2.0 * p - 1.0];
    let hyp = if same { [-1.0, 1.0] } else { [1.0, -1.0] };
    est[0] * hyp[0] + est[1] * hyp[1]
}

/// Weighted sum of enabled features for one frame. Assembly features use
/// `s_cur`; the action feature uses the sign of the change to `s_next`.
pub fn frame_score(
    obs: &FrameObservation,
    scores: Option<&PrecomputedScores>,
    s_cur: &Assembly,
    s_next: Option<&Assembly>,
    cfg: &FeatureConfig,
) -> Result<f64> {
    let mut total = 0.0;
    let w = cfg.weight(POSE);
    if w != 0.0 {
        total += w * pose_feature(obs, s_cur, cfg)?;
    }
    let w = cfg.weight(ATTRIBUTE);
    if w != 0.0 {
        total += w * attribute_feature(obs, s_cur);
    }
    let w = cfg.weight(PRECOMPUTED);
    if w != 0.0 {
        let key = s_cur.canonical_key()?;
        let table = scores.ok_or_else(|| FeatureError::MissingScore {
            frame: obs.time_index,
            key: key.to_string(),
        })?;
        total += w * table.assembly_score(obs.time_index, &key)?;
    }
    let w = cfg.weight(ACTION);
    if w != 0.0 {
        if let Some(next) = s_next {
            if let Ok((_, action)) = s_cur.diff_up_to_symmetry(next) {
                let table = scores.ok_or_else(|| FeatureError::MissingScore {
                    frame: obs.time_index,
                    key: action.sign.to_string(),
                })?;
                total += w * table.action_score(obs.time_index, action.sign)?;
            }
        }
    }
    Ok(total)
}

struct Variant {
    layout: Layout,
    components: BTreeMap<InstanceId, usize>,
}

/// Per-state geometry prepared once: every distinct symmetric relabeling of
/// the state's representative, laid out.
pub struct Hypotheses {
    scene: std::sync::Arc<Scene>,
    states: Vec<Vec<Variant>>,
    keys: Vec<CanonicalKey>,
}

impl Hypotheses {
    pub fn new(vocab: &Vocabulary) -> Result<Self> {
        let scene = vocab
            .entries()
            .first()
            .map(|(_, a)| a.scene().clone())
            .ok_or_else(|| FeatureError::InvalidConfig("empty vocabulary".into()))?;
        let mut states = Vec::with_capacity(vocab.len());
        for (_, a) in vocab.entries() {
            let mut variants = Vec::new();
            for member in a.orbit()? {
                variants.push(Variant {
                    layout: component_layout(&member)?,
                    components: member.component_index(),
                });
            }
            states.push(variants);
        }
        Ok(Hypotheses {
            scene,
            states,
            keys: vocab.entries().iter().map(|(k, _)| k.clone()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Per-frame, per-state, per-variant feature sums that do not depend
    /// on `lambda`, `alpha` or weights.
    pub fn terms(&self, seq: &ObservationSequence, policy: MissingPosePolicy) -> FeatureTerms {
        let frames: Vec<Vec<Vec<VariantTerms>>> = seq
            .frames
            .par_iter()
            .map(|obs| {
                self.states
                    .iter()
                    .map(|variants| {
                        variants
                            .iter()
                            .map(|v| VariantTerms {
                                pose: pose_terms(obs, &self.scene, &v.layout, policy),
                                attribute: attribute_with_components(obs, &v.components),
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        FeatureTerms {
            frames,
            keys: self.keys.clone(),
        }
    }

    pub fn score_table(
        &self,
        seq: &ObservationSequence,
        scores: Option<&PrecomputedScores>,
        cfg: &FeatureConfig,
    ) -> Result<ScoreTable> {
        self.terms(seq, cfg.missing_pose_policy).score_table(cfg, scores)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct VariantTerms {
    pose: PoseTerms,
    attribute: f64,
}

/// Cached feature sums for one sequence; combining them under different
/// hyperparameters is cheap.
#[derive(Debug, Clone)]
pub struct FeatureTerms {
    frames: Vec<Vec<Vec<VariantTerms>>>,
    keys: Vec<CanonicalKey>,
}

impl FeatureTerms {
    pub fn frames(&self) -> usize {
        self.frames.len()
    }

    /// Frame scores per state: the best symmetric relabeling of each state
    /// under the pose and attribute features, plus precomputed scores.
    pub fn score_table(
        &self,
        cfg: &FeatureConfig,
        scores: Option<&PrecomputedScores>,
    ) -> Result<ScoreTable> {
        cfg.validate()?;
        let states = self.keys.len();
        let mut table = ScoreTable::zeros(self.frames.len(), states);
        let (wp, wa, wc) = (cfg.weight(POSE), cfg.weight(ATTRIBUTE), cfg.weight(PRECOMPUTED));
        for (t, per_state) in self.frames.iter().enumerate() {
            for (s, variants) in per_state.iter().enumerate() {
                let mut best = f64::NEG_INFINITY;
                for v in variants {
                    let mut x = 0.0;
                    if wp != 0.0 {
                        x += wp * v.pose.value(cfg.lambda, cfg.alpha);
                    }
                    if wa != 0.0 {
                        x += wa * v.attribute;
                    }
                    best = best.max(x);
                }
                if wc != 0.0 {
                    let table = scores.ok_or_else(|| FeatureError::MissingScore {
                        frame: t,
                        key: self.keys[s].to_string(),
                    })?;
                    best += wc * table.assembly_score(t, &self.keys[s])?;
                }
                table.set(t, s, best);
            }
        }
        Ok(table)
    }
}

/// Action-feature scores at segment boundaries: a segment of state `v`
/// starting at frame `b` after state `u` earns
/// `w_action * score(b, sign(u -> v))`.
pub fn action_boundary_scores(
    vocab: &Vocabulary,
    frames: usize,
    scores: &PrecomputedScores,
    cfg: &FeatureConfig,
) -> Result<Option<BoundaryScores>> {
    let w = cfg.weight(ACTION);
    if w == 0.0 {
        return Ok(None);
    }
    let n = vocab.len();
    let mut signs = vec![None; n * n];
    for u in 0..n {
        for v in 0..n {
            if u != v {
                if let Ok((_, a)) = vocab.assembly(u).diff_up_to_symmetry(vocab.assembly(v)) {
                    signs[u * n + v] = Some(a.sign);
                }
            }
        }
    }
    let mut out = BoundaryScores::zeros(frames, n);
    for b in 1..frames {
        for u in 0..n {
            for v in 0..n {
                if let Some(sign) = signs[u * n + v] {
                    out.set(b, u, v, w * scores.action_score(b, sign)?);
                }
            }
        }
    }
    Ok(Some(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::tests::beam_scene;
    use crate::assembly::Joint;

    fn cfg(lambda: f64, alpha: f64, weights: &[(&str, f64)]) -> FeatureConfig {
        FeatureConfig {
            lambda,
            alpha,
            weights: weights.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            missing_pose_policy: MissingPosePolicy::SkipPair,
        }
    }

    fn observe(s: &Assembly, offset: Vector3<f64>) -> FrameObservation {
        let layout = component_layout(s).unwrap();
        let mut obs = FrameObservation::new(0);
        for (id, pose) in &layout.poses {
            let shift = Pose::new(offset * (layout.component[id] as f64 + 1.0), Default::default());
            obs.part_poses.insert(*id, shift.compose(pose));
        }
        obs
    }

    #[test]
    fn pose_feature_zero_when_predictions_match() {
        let scene = beam_scene();
        let s = Assembly::new(scene, [Joint::new(0, 0, 1, 0), Joint::new(0, 1, 2, 0)]).unwrap();
        let obs = observe(&s, Vector3::new(0.3, 0.0, 0.0));
        assert_eq!(pose_feature(&obs, &s, &cfg(1.0, 0.0, &[])).unwrap(), 0.0);
    }

    #[test]
    fn disconnected_pairs_pay_alpha() {
        let scene = beam_scene();
        let empty = Assembly::empty(scene);
        let obs = observe(&empty, Vector3::new(1.0, 0.0, 0.0));
        assert_eq!(pose_feature(&obs, &empty, &cfg(1.0, 2.0, &[])).unwrap(), -6.0);
    }

    #[test]
    fn residual_is_scaled_by_lambda() {
        let scene = beam_scene();
        let s = Assembly::new(scene, [Joint::new(0, 0, 1, 0)]).unwrap();
        let mut obs = observe(&s, Vector3::zeros());
        // Move beam 1 by 0.5 m; instance 2 is unobserved so it is skipped.
        obs.part_poses.get_mut(&1).unwrap().translation.x += 0.5;
        obs.part_poses.remove(&2);
        assert!((pose_feature(&obs, &s, &cfg(2.0, 0.0, &[])).unwrap() + 1.0).abs() < 1e-12);
        let mut zero = cfg(2.0, 1.0, &[]);
        zero.missing_pose_policy = MissingPosePolicy::ZeroScore;
        // Pairs (0,2) and (1,2) are open and unobserved: alpha each.
        assert!((pose_feature(&obs, &s, &zero).unwrap() + 3.0).abs() < 1e-12);
    }

    #[test]
    fn attribute_pairs() {
        let scene = beam_scene();
        let s = Assembly::new(scene, [Joint::new(0, 0, 1, 0)]).unwrap();
        let mut obs = FrameObservation::new(0);
        obs.set_pair(1, 0, 1.0).unwrap();
        assert_eq!(attribute_feature(&obs, &s), 2.0);
        obs.set_pair(0, 2, 0.5).unwrap();
        assert_eq!(attribute_feature(&obs, &s), 2.0);
        obs.set_pair(1, 2, 1.0).unwrap();
        assert_eq!(attribute_feature(&obs, &s), 0.0);
        assert!(obs.set_pair(1, 2, 1.5).is_err());
    }

    #[test]
    fn frame_score_is_weighted_sum() {
        let scene = beam_scene();
        let s = Assembly::new(scene.clone(), [Joint::new(0, 0, 1, 0)]).unwrap();
        let mut obs = observe(&s, Vector3::new(0.5, 0.2, 0.0));
        obs.part_poses.get_mut(&1).unwrap().translation.y += 0.25;
        obs.set_pair(0, 1, 0.9).unwrap();
        obs.set_pair(0, 2, 0.2).unwrap();
        let pose = pose_feature(&obs, &s, &cfg(1.5, 0.5, &[])).unwrap();
        let attr = attribute_feature(&obs, &s);
        let only_pose = frame_score(&obs, None, &s, None, &cfg(1.5, 0.5, &[(POSE, 1.0)])).unwrap();
        assert_eq!(only_pose, pose);
        assert_eq!(frame_score(&obs, None, &s, None, &cfg(1.5, 0.5, &[])).unwrap(), 0.0);
        let both = frame_score(&obs, None, &s, None, &cfg(1.5, 0.5, &[(POSE, 1.0), (ATTRIBUTE, 2.0)])).unwrap();
        assert_eq!(both, pose + 2.0 * attr);
    }

    #[test]
    fn precomputed_lookup() {
        let scene = beam_scene();
        let s = Assembly::new(scene.clone(), [Joint::new(0, 0, 1, 0)]).unwrap();
        let next = s
            .apply(&crate::assembly::AssemblyAction::connect([Joint::new(0, 1, 2, 0)]).unwrap())
            .unwrap();
        let obs = FrameObservation::new(3);
        let mut pre = PrecomputedScores::default();
        let c = cfg(1.0, 1.0, &[(PRECOMPUTED, 2.0), (ACTION, 1.0)]);
        assert!(matches!(
            frame_score(&obs, Some(&pre), &s, None, &c),
            Err(FeatureError::MissingScore { frame: 3, .. })
        ));
        pre.insert_assembly(3, s.canonical_key().unwrap(), -1.25).unwrap();
        assert_eq!(frame_score(&obs, Some(&pre), &s, None, &c).unwrap(), -2.5);
        assert!(frame_score(&obs, Some(&pre), &s, Some(&next), &c).is_err());
        pre.insert_action(3, Sign::Connect, 0.75).unwrap();
        assert_eq!(frame_score(&obs, Some(&pre), &s, Some(&next), &c).unwrap(), -1.75);
    }

    #[test]
    fn config_validation() {
        assert!(cfg(-1.0, 0.0, &[]).validate().is_err());
        assert!(cfg(1.0, 0.0, &[("colour", 1.0)]).validate().is_err());
        assert!(FeatureConfig::default().validate().is_ok());
    }
}
