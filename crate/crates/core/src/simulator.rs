//! Seeded synthetic assembly sequences with noisy observations.
//!
//! Each sequence starts from the empty assembly and takes random actions.
//! In free mode a connect joins two unused contacts on parts of different
//! components, so every state stays a kinematic forest. With a blueprint,
//! a connect performs one of the steps whose prerequisites are done, and a
//! disconnect undoes the latest step.
//!
//! Every frame draws a fresh global pose for every component, places parts
//! by the component layout, perturbs translations with Gaussian noise,
//! drops part poses at random, and emits biased, jittered same-body
//! probabilities for every pair.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use nalgebra::{UnitQuaternion, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::{
    Assembly, AssemblyAction, AssemblyError, ContactId, InstanceId, Joint, PartCatalog,
    PartInstance, Scene,
};
use crate::features::{FrameObservation, ObservationSequence};
use crate::kinematics::{component_layout, KinematicsError, Pose};
use crate::training::{LabeledSegment, LabeledSequence};

/// Tries per connect proposal before giving up.
const MAX_ATTEMPTS: usize = 10_000;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulator config: `{field}` {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("unsatisfiable scene: {0}")]
    UnsatisfiableScene(String),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
}

pub type Result<T, E = SimError> = std::result::Result<T, E>;

/// One blueprint step: a compound connect that becomes available once all
/// `after` steps are done.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlueprintStep {
    pub joints: Vec<Joint>,
    #[serde(default)]
    pub after: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default)]
    pub seed: u64,
    pub scene: Vec<PartInstance>,
    /// Segments per sequence, including the initial empty one.
    pub n_segments: usize,
    /// Inclusive frame-count range per segment.
    pub duration_range: (usize, usize),
    #[serde(default)]
    pub pose_noise_sigma: f64,
    #[serde(default)]
    pub attribute_flip_noise: f64,
    #[serde(default)]
    pub disconnect_prob: f64,
    #[serde(default)]
    pub dropout_prob: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blueprint: Option<Vec<BlueprintStep>>,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field, reason: &str| {
            Err(SimError::InvalidConfig {
                field,
                reason: reason.to_string(),
            })
        };
        if self.scene.is_empty() {
            return bad("scene", "must list at least one part");
        }
        if self.n_segments == 0 {
            return bad("n_segments", "must be at least 1");
        }
        let (lo, hi) = self.duration_range;
        if lo == 0 || hi < lo {
            return bad("duration_range", "must satisfy 1 <= min <= max");
        }
        if !(self.pose_noise_sigma >= 0.0 && self.pose_noise_sigma.is_finite()) {
            return bad("pose_noise_sigma", "must be a finite value >= 0");
        }
        if !(0.0..0.5).contains(&self.attribute_flip_noise) {
            return bad("attribute_flip_noise", "must lie in [0, 0.5)");
        }
        if !(0.0..=1.0).contains(&self.disconnect_prob) {
            return bad("disconnect_prob", "must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.dropout_prob) {
            return bad("dropout_prob", "must lie in [0, 1]");
        }
        if let Some(steps) = &self.blueprint {
            for (n, s) in steps.iter().enumerate() {
                if s.joints.is_empty() {
                    return bad("blueprint", &format!("step {n} has no joints"));
                }
                if s.after.iter().any(|&p| p >= n) {
                    return bad("blueprint", &format!("step {n} may only depend on earlier steps"));
                }
            }
        }
        Ok(())
    }

    pub fn build_scene(&self, catalog: Arc<PartCatalog>) -> Result<Arc<Scene>> {
        Ok(Arc::new(Scene::new(catalog, self.scene.clone())?))
    }
}

/// SplitMix64 finalizer.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of sequence `index` in a dataset with master seed `seed`.
pub fn derived_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ index)
}

pub fn sequence_id(seed: u64) -> String {
    format!("sim-{seed:016x}")
}

/// One sequence from `cfg.seed`.
pub fn simulate_sequence(cfg: &SimConfig, catalog: Arc<PartCatalog>) -> Result<LabeledSequence> {
    cfg.validate()?;
    let scene = cfg.build_scene(catalog)?;
    if let Some(steps) = &cfg.blueprint {
        for s in steps {
            for j in &s.joints {
                Assembly::new(scene.clone(), [*j]).map_err(SimError::from)?;
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let path = sample_path(cfg, &scene, &mut rng)?;

    let mut frames = Vec::new();
    let mut segments = Vec::with_capacity(path.len());
    for assembly in path {
        let duration = rng.random_range(cfg.duration_range.0..=cfg.duration_range.1);
        let begin = frames.len();
        let layout = component_layout(&assembly)?;
        let components = assembly.connected_components();
        for _ in 0..duration {
            let t = frames.len();
            frames.push(observe(cfg, &scene, &layout, &components, t, &mut rng));
        }
        segments.push(LabeledSegment {
            begin,
            end: frames.len(),
            assembly,
        });
    }
    let observations = ObservationSequence {
        id: sequence_id(cfg.seed),
        frames,
    };
    LabeledSequence::new(observations, segments)
        .map_err(|e| SimError::UnsatisfiableScene(e.to_string()))
}

/// `n` sequences with seeds `splitmix64(seed ^ index)`.
pub fn simulate_dataset(
    cfg: &SimConfig,
    catalog: Arc<PartCatalog>,
    n: usize,
) -> Result<Vec<LabeledSequence>> {
    (0..n as u64)
        .map(|i| {
            let mut c = cfg.clone();
            c.seed = derived_seed(cfg.seed, i);
            simulate_sequence(&c, catalog.clone())
        })
        .collect()
}

/// Raw actions between consecutive ground-truth segments, keyed by the
/// first frame of the resulting segment.
pub fn segment_actions(seq: &LabeledSequence) -> Result<Vec<(usize, AssemblyAction)>> {
    seq.segments
        .windows(2)
        .map(|w| Ok((w[1].begin, w[0].assembly.diff(&w[1].assembly)?)))
        .collect()
}

fn sample_path(cfg: &SimConfig, scene: &Arc<Scene>, rng: &mut ChaCha8Rng) -> Result<Vec<Assembly>> {
    let mut cur = Assembly::empty(scene.clone());
    let mut path = vec![cur.clone()];
    let mut done: Vec<usize> = Vec::new();
    while path.len() < cfg.n_segments {
        let next = match &cfg.blueprint {
            Some(steps) => {
                let Some(next) = blueprint_step(cfg, steps, &cur, &mut done, rng)? else {
                    break;
                };
                next
            }
            None => free_step(cfg, &cur, rng)?,
        };
        cur = next;
        path.push(cur.clone());
    }
    Ok(path)
}

fn blueprint_step(
    cfg: &SimConfig,
    steps: &[BlueprintStep],
    cur: &Assembly,
    done: &mut Vec<usize>,
    rng: &mut ChaCha8Rng,
) -> Result<Option<Assembly>> {
    let ready: Vec<usize> = (0..steps.len())
        .filter(|n| !done.contains(n) && steps[*n].after.iter().all(|p| done.contains(p)))
        .collect();
    if ready.is_empty() {
        if done.is_empty() {
            return Err(SimError::UnsatisfiableScene("blueprint has no initial step".into()));
        }
        return Ok(None);
    }
    if !done.is_empty() && rng.random_bool(cfg.disconnect_prob) {
        let last = done.pop().expect("nonempty");
        let action = AssemblyAction::disconnect(steps[last].joints.iter().copied())?;
        return Ok(Some(cur.apply(&action)?));
    }
    let chosen = *pick(rng, &ready).expect("nonempty");
    let action = AssemblyAction::connect(steps[chosen].joints.iter().copied())?;
    let next = cur.apply(&action)?;
    component_layout(&next)?;
    done.push(chosen);
    Ok(Some(next))
}

fn free_step(cfg: &SimConfig, cur: &Assembly, rng: &mut ChaCha8Rng) -> Result<Assembly> {
    let joints: Vec<Joint> = cur.joints().iter().copied().collect();
    let candidates = connect_candidates(cur);
    let want_disconnect = !joints.is_empty() && rng.random_bool(cfg.disconnect_prob);
    if want_disconnect || candidates.is_empty() {
        let Some(&j) = pick(rng, &joints) else {
            return Err(SimError::UnsatisfiableScene(
                "no connect is possible from the empty assembly".into(),
            ));
        };
        return Ok(cur.apply(&AssemblyAction::disconnect([j])?)?);
    }
    for _ in 0..MAX_ATTEMPTS {
        let &j = pick(rng, &candidates).expect("nonempty");
        if let Ok(next) = cur.apply(&AssemblyAction::connect([j])?) {
            return Ok(next);
        }
    }
    Err(SimError::UnsatisfiableScene("no valid connect found".into()))
}

/// Joints between free contacts of parts in different components.
fn connect_candidates(cur: &Assembly) -> Vec<Joint> {
    let scene = cur.scene();
    let catalog = scene.catalog();
    let comp = cur.component_index();
    let exclusive = catalog.exclusive_contacts();
    let free: Vec<(InstanceId, ContactId)> = scene
        .instances()
        .iter()
        .flat_map(|p| {
            let t = scene.part_type_of(p.instance_id).expect("scene member");
            catalog.part_types()[t]
                .contact_points
                .iter()
                .map(move |c| (p.instance_id, c.id))
        })
        .filter(|&(i, c)| !exclusive || !cur.contact_in_use(i, c))
        .collect();
    let mut out = BTreeSet::new();
    for (n, &(i, ci)) in free.iter().enumerate() {
        for &(j, cj) in &free[n + 1..] {
            if comp[&i] != comp[&j] {
                out.insert(Joint::new(i, ci, j, cj));
            }
        }
    }
    out.into_iter().collect()
}

fn pick<'a, T>(rng: &mut ChaCha8Rng, items: &'a [T]) -> Option<&'a T> {
    if items.is_empty() {
        None
    } else {
        Some(&items[rng.random_range(0..items.len())])
    }
}

fn random_rotation(rng: &mut ChaCha8Rng) -> UnitQuaternion<f64> {
    loop {
        let v = Vector4::from_fn(|_, _| StandardNormal.sample(rng));
        let n: f64 = v.norm();
        if n > 1e-6 {
            let q = v / n;
            return UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]));
        }
    }
}

fn observe(
    cfg: &SimConfig,
    scene: &Scene,
    layout: &crate::kinematics::Layout,
    components: &[Vec<InstanceId>],
    t: usize,
    rng: &mut ChaCha8Rng,
) -> FrameObservation {
    let mut obs = FrameObservation::new(t);
    let noise = Normal::new(0.0, cfg.pose_noise_sigma).expect("validated sigma");
    let mut world: BTreeMap<InstanceId, Pose> = BTreeMap::new();
    for members in components {
        let global = Pose::new(
            Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)),
            random_rotation(rng),
        );
        for &i in members {
            world.insert(i, global.compose(&layout.poses[&i]));
        }
    }
    for (&i, pose) in &world {
        let mut p = *pose;
        if cfg.pose_noise_sigma > 0.0 {
            p.translation += Vector3::from_fn(|_, _| noise.sample(rng));
        }
        if cfg.dropout_prob > 0.0 && rng.random_bool(cfg.dropout_prob) {
            continue;
        }
        obs.part_poses.insert(i, p);
    }
    let beta = cfg.attribute_flip_noise;
    let ids: Vec<InstanceId> = scene.instance_ids().collect();
    for (n, &i) in ids.iter().enumerate() {
        for &j in &ids[n + 1..] {
            let base = if layout.same_component(i, j) { 1.0 - beta } else { beta };
            let jitter = if beta > 0.0 {
                rng.random_range(-beta / 2.0..=beta / 2.0)
            } else {
                0.0
            };
            obs.pair_attributes.insert((i, j), (base + jitter).clamp(0.0, 1.0));
        }
    }
    obs
}
