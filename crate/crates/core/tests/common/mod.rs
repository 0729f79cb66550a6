//! Fixtures and independent reference implementations shared by the
//! integration tests.

#![allow(dead_code)]

use std::collections::BTreeSet;
use std::sync::Arc;

use asmseq::assembly::{ContactId, InstanceId};
use asmseq::decoder::{BoundaryScores, Initial, ScoreTable, Segment, TransitionModel};
use asmseq::io::RunConfig;
use asmseq::simulator::SimConfig;
use asmseq::{Assembly, AssemblyAction, Joint, PartCatalog, PartInstance, Scene};
use nalgebra::Matrix3;
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const BLOCKS: &str = include_str!("../../../../configs/blocks.toml");
pub const DEMO: &str = include_str!("../../../../configs/demo.toml");

/// Catalog with a fourfold-symmetric part, a two-ended rod and an
/// asymmetric hub.
pub const SHAPES: &str = r#"
name = "shapes"

[[part_types]]
name = "square"
contact_points = [
  { id = 0, translation = [0.05, 0.0, 0.0] },
  { id = 1, translation = [0.0, 0.05, 0.0] },
  { id = 2, translation = [-0.05, 0.0, 0.0] },
  { id = 3, translation = [0.0, -0.05, 0.0] },
]
symmetries = [
  { permutation = [1, 2, 3, 0], rotation = [0.7071067811865476, 0.0, 0.0, 0.7071067811865476] },
  { permutation = [2, 3, 0, 1], rotation = [0.0, 0.0, 0.0, 1.0] },
  { permutation = [3, 0, 1, 2], rotation = [-0.7071067811865475, 0.0, 0.0, 0.7071067811865476] },
]

[[part_types]]
name = "rod"
contact_points = [
  { id = 0, translation = [0.1, 0.0, 0.0] },
  { id = 1, translation = [-0.1, 0.0, 0.0] },
]
symmetries = [{ permutation = [1, 0], rotation = [0.0, 0.0, 0.0, 1.0] }]

[[part_types]]
name = "hub"
contact_points = [
  { id = 0, translation = [0.0, 0.0, 0.02] },
  { id = 1, translation = [0.02, 0.0, 0.0] },
  { id = 2, translation = [0.0, 0.02, 0.0], rotation = [0.7071067811865476, 0.7071067811865476, 0.0, 0.0] },
]
"#;

pub fn blocks_catalog() -> Arc<PartCatalog> {
    Arc::new(PartCatalog::from_toml_str(BLOCKS).unwrap())
}

pub fn shapes_catalog() -> Arc<PartCatalog> {
    Arc::new(PartCatalog::from_toml_str(SHAPES).unwrap())
}

/// The demo simulator config (six parts, blueprint with ten reachable
/// states) with the given seed and noise levels.
pub fn demo_sim(seed: u64, sigma: f64, beta: f64, dropout: f64) -> SimConfig {
    let run = RunConfig::from_toml_str(DEMO).unwrap();
    let mut cfg = run.simulate.unwrap().config;
    cfg.seed = seed;
    cfg.pose_noise_sigma = sigma;
    cfg.attribute_flip_noise = beta;
    cfg.dropout_prob = dropout;
    cfg
}

/// A random scene of 2..=6 shapes-catalog parts whose symmetry group has
/// at most `max_group` elements.
pub fn random_scene(rng: &mut ChaCha8Rng, max_group: u128) -> Arc<Scene> {
    let catalog = shapes_catalog();
    loop {
        let n = rng.random_range(2..=6);
        let parts: Vec<PartInstance> = (0..n)
            .map(|i| PartInstance {
                instance_id: i as u32 * 3 + 1,
                part_type: ["square", "rod", "hub"][rng.random_range(0..3)].to_string(),
            })
            .collect();
        let scene = Scene::new(catalog.clone(), parts).unwrap();
        if scene.symmetry_group_size() <= max_group {
            return Arc::new(scene);
        }
    }
}

pub fn contacts(scene: &Scene, inst: InstanceId) -> Vec<ContactId> {
    let t = scene.part_type_of(inst).unwrap();
    scene.catalog().part_types()[t]
        .contact_points
        .iter()
        .map(|c| c.id)
        .collect()
}

/// Joints between free contacts of parts in different components.
pub fn merging_joints(a: &Assembly) -> Vec<Joint> {
    let scene = a.scene();
    let comp = a.component_index();
    let free: Vec<(InstanceId, ContactId)> = scene
        .instance_ids()
        .flat_map(|i| contacts(scene, i).into_iter().map(move |c| (i, c)))
        .filter(|&(i, c)| !a.contact_in_use(i, c))
        .collect();
    let mut out = Vec::new();
    for (n, &(i, ci)) in free.iter().enumerate() {
        for &(j, cj) in &free[n + 1..] {
            if comp[&i] != comp[&j] {
                out.push(Joint::new(i, ci, j, cj));
            }
        }
    }
    out
}

/// A random forest-shaped assembly with up to `max_joints` joints.
pub fn random_assembly(rng: &mut ChaCha8Rng, scene: &Arc<Scene>, max_joints: usize) -> Assembly {
    let target = rng.random_range(0..=max_joints);
    let mut a = Assembly::empty(scene.clone());
    for _ in 0..target {
        let options = merging_joints(&a);
        let Some(j) = options.choose(rng) else { break };
        a = a.apply(&AssemblyAction::connect([*j]).unwrap()).unwrap();
    }
    a
}

// Symmetry group, enumerated directly.

fn permutations(items: &[InstanceId]) -> Vec<Vec<InstanceId>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for k in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(k);
        for mut tail in permutations(&rest) {
            tail.insert(0, head);
            out.push(tail);
        }
    }
    out
}

/// One element of the combined group: an instance relabeling and a
/// contact permutation per (source) instance.
#[derive(Debug, Clone)]
pub struct GroupElement {
    pub relabel: Vec<(InstanceId, InstanceId)>,
    pub contact_maps: Vec<(InstanceId, Vec<ContactId>)>,
}

impl GroupElement {
    pub fn apply(&self, joints: &BTreeSet<Joint>) -> BTreeSet<Joint> {
        let to = |i: InstanceId| self.relabel.iter().find(|(a, _)| *a == i).unwrap().1;
        let map = |i: InstanceId, c: ContactId| {
            self.contact_maps.iter().find(|(a, _)| *a == i).unwrap().1[c as usize]
        };
        joints
            .iter()
            .map(|j| Joint::new(to(j.part_a), map(j.part_a, j.contact_a), to(j.part_b), map(j.part_b, j.contact_b)))
            .collect()
    }
}

pub fn group_elements(scene: &Scene) -> Vec<GroupElement> {
    let catalog = scene.catalog();
    let ids: Vec<InstanceId> = scene.instance_ids().collect();
    // Relabelings: independent permutations within each type.
    let mut relabels: Vec<Vec<(InstanceId, InstanceId)>> = vec![Vec::new()];
    for t in 0..catalog.part_types().len() {
        let members: Vec<InstanceId> = ids.iter().copied().filter(|&i| scene.part_type_of(i) == Some(t)).collect();
        let mut next = Vec::new();
        for r in &relabels {
            for p in permutations(&members) {
                let mut r = r.clone();
                r.extend(members.iter().copied().zip(p));
                next.push(r);
            }
        }
        relabels = next;
    }
    let mut maps: Vec<Vec<(InstanceId, Vec<ContactId>)>> = vec![Vec::new()];
    for &i in &ids {
        let t = scene.part_type_of(i).unwrap();
        let mut next = Vec::new();
        for m in &maps {
            for s in &catalog.part_types()[t].symmetries {
                let mut m = m.clone();
                m.push((i, s.permutation.clone()));
                next.push(m);
            }
        }
        maps = next;
    }
    let mut out = Vec::with_capacity(relabels.len() * maps.len());
    for r in &relabels {
        for m in &maps {
            out.push(GroupElement {
                relabel: r.clone(),
                contact_maps: m.clone(),
            });
        }
    }
    out
}

pub fn equivalent_by_enumeration(a: &Assembly, b: &Assembly) -> bool {
    group_elements(a.scene())
        .iter()
        .any(|g| &g.apply(a.joints()) == b.joints())
}

// Decoder: exhaustive enumeration.

#[derive(Debug, Clone)]
pub struct DecodeInstance {
    pub scores: ScoreTable,
    pub transitions: TransitionModel,
    pub w_seq: f64,
    pub initial: Initial,
    pub boundary: Option<BoundaryScores>,
}

pub fn random_instance(rng: &mut ChaCha8Rng, max_frames: usize, max_states: usize, with_boundary: bool) -> DecodeInstance {
    let frames = rng.random_range(1..=max_frames);
    let states = rng.random_range(1..=max_states);
    let rows: Vec<Vec<f64>> = (0..frames)
        .map(|_| (0..states).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let scores = ScoreTable::from_rows(&rows).unwrap();
    let mut lp = vec![f64::NEG_INFINITY; states * states];
    let mut mask = vec![true; states * states];
    for u in 0..states {
        for v in 0..states {
            if u == v {
                continue;
            }
            let r: f64 = rng.random();
            if r < 0.15 {
                mask[u * states + v] = false;
            } else if r < 0.25 {
                // allowed but never seen
            } else {
                lp[u * states + v] = -rng.random_range(0.0..3.0);
            }
        }
    }
    let transitions = TransitionModel::from_parts(states, lp, mask).unwrap();
    let initial = match rng.random_range(0..3) {
        0 => Initial::Free,
        1 => Initial::Forced(rng.random_range(0..states)),
        _ => Initial::LogScores(
            (0..states)
                .map(|_| if rng.random_bool(0.2) { f64::NEG_INFINITY } else { -rng.random_range(0.0..2.0) })
                .collect(),
        ),
    };
    let boundary = with_boundary.then(|| {
        let mut b = BoundaryScores::zeros(frames, states);
        for t in 0..frames {
            for u in 0..states {
                for v in 0..states {
                    b.set(t, u, v, rng.random_range(-1.0..1.0));
                }
            }
        }
        b
    });
    DecodeInstance {
        scores,
        transitions,
        w_seq: rng.random_range(0.0..2.0),
        initial,
        boundary,
    }
}

impl DecodeInstance {
    /// Objective of a labeled segmentation, summed frame by frame.
    pub fn naive_score(&self, segments: &[Segment]) -> f64 {
        let mut total = 0.0;
        for (m, s) in segments.iter().enumerate() {
            if m == 0 {
                total += match &self.initial {
                    Initial::Free => 0.0,
                    Initial::Forced(f) => {
                        if *f == s.state {
                            0.0
                        } else {
                            f64::NEG_INFINITY
                        }
                    }
                    Initial::LogScores(v) => {
                        if v[s.state] == f64::NEG_INFINITY {
                            f64::NEG_INFINITY
                        } else {
                            self.w_seq * v[s.state]
                        }
                    }
                };
            } else {
                let u = segments[m - 1].state;
                let v = s.state;
                let lp = self.transitions.log_prob(u, v);
                if u == v || !self.transitions.allowed(u, v) || lp == f64::NEG_INFINITY {
                    return f64::NEG_INFINITY;
                }
                total += self.w_seq * lp;
                if let Some(b) = &self.boundary {
                    total += b.get(s.begin, u, v);
                }
            }
            for t in s.begin..s.end {
                total += self.scores.get(t, s.state);
            }
        }
        total
    }

    /// Best score over every labeled segmentation (optionally with fixed
    /// boundaries or a duration cap); `-inf` when none is feasible.
    pub fn brute_force(&self, fixed: Option<&[(usize, usize)]>, max_duration: Option<usize>) -> f64 {
        let frames = self.scores.frames();
        let states = self.scores.states();
        let mut best = f64::NEG_INFINITY;
        let spans: Vec<Vec<(usize, usize)>> = match fixed {
            Some(f) => vec![f.to_vec()],
            None => (0..1u32 << (frames - 1))
                .map(|mask| {
                    let mut cuts = vec![0];
                    cuts.extend((1..frames).filter(|&t| mask & (1 << (t - 1)) != 0));
                    cuts.push(frames);
                    cuts.windows(2).map(|w| (w[0], w[1])).collect()
                })
                .collect(),
        };
        for spans in spans {
            if let Some(k) = max_duration {
                if spans.iter().any(|(b, e)| e - b > k) {
                    continue;
                }
            }
            let m = spans.len();
            let mut labels = vec![0usize; m];
            loop {
                let segs: Vec<Segment> = spans
                    .iter()
                    .zip(&labels)
                    .map(|(&(begin, end), &state)| Segment { begin, end, state })
                    .collect();
                let s = self.naive_score(&segs);
                if s > best {
                    best = s;
                }
                // Odometer increment.
                let mut k = 0;
                while k < m {
                    labels[k] += 1;
                    if labels[k] < states {
                        break;
                    }
                    labels[k] = 0;
                    k += 1;
                }
                if k == m {
                    break;
                }
            }
        }
        best
    }
}

// Rotation averaging: orthogonal polar factor by Newton iteration.

pub fn polar_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let mut x = *m;
    for _ in 0..100 {
        let inv_t = x.try_inverse().expect("nonsingular").transpose();
        let next = (x + inv_t) * 0.5;
        if (next - x).norm() < 1e-15 {
            return next;
        }
        x = next;
    }
    x
}

// Edit distance: full-matrix dynamic program on run-collapsed inputs.

pub fn reference_collapse<T: PartialEq + Clone>(xs: &[T]) -> Vec<T> {
    let mut out = Vec::new();
    for (i, x) in xs.iter().enumerate() {
        if i == 0 || xs[i - 1] != *x {
            out.push(x.clone());
        }
    }
    out
}

pub fn reference_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        d[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let cost = if a[i - 1] == b[j - 1] { 0 } else { 1 };
            d[i][j] = (d[i - 1][j] + 1).min(d[i][j - 1] + 1).min(d[i - 1][j - 1] + cost);
        }
    }
    d[a.len()][b.len()]
}

pub fn reference_edit_score<T: PartialEq + Clone>(a: &[T], b: &[T]) -> f64 {
    let (a, b) = (reference_collapse(a), reference_collapse(b));
    let n = a.len().max(b.len());
    if n == 0 {
        1.0
    } else {
        1.0 - reference_distance(&a, &b) as f64 / n as f64
    }
}

/// Every sequence over `0..symbols` of length `0..=max_len`.
pub fn all_sequences(symbols: u8, max_len: usize) -> Vec<Vec<u8>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &frontier {
            for c in 0..symbols {
                let mut t: Vec<u8> = s.clone();
                t.push(c);
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}
