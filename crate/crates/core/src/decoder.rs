//! Segment-level decoding of assembly label sequences.
//!
//! Every decode maximizes the same objective: the sum over segments of
//! the frame scores inside the segment, plus `w_seq * log_prob(u -> v)` at
//! every boundary between a segment labeled `u` and the next labeled `v`
//! (plus the optional boundary augmentation), plus the initial-state score
//! of the first segment. Adjacent segments always carry different labels.
//!
//! Three search spaces are supported:
//! - fixed segment boundaries (`O(|S|^2 T)`),
//! - all segmentations (`O(|S|^2 T + |S| T^2)`),
//! - all segmentations with segment length at most `k` (`O(k |S| T + |S|^2 T)`).
//!
//! Exact ties are broken by fewer segments, then the lexicographically
//! smallest label sequence, then the lexicographically smallest list of
//! segment begin frames.
//!
//! Frames are 0-based; a [`Segment`] covers `begin..end`.

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::{Assembly, AssemblyAction, AssemblyError, CanonicalKey};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecodeError {
    #[error("no feasible path: every labeling is blocked by the transition mask")]
    NoFeasiblePath,
    #[error("score table entry at frame {frame}, state {state} is not finite")]
    NonFiniteScore { frame: usize, state: usize },
    #[error("segments do not tile 0..{frames}: {reason}")]
    InvalidSegments { frames: usize, reason: String },
    #[error("dimension mismatch: {0}")]
    Shape(String),
    #[error("maximum segment duration must be at least 1")]
    ZeroDuration,
    #[error("empty observation sequence")]
    Empty,
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
}

pub type Result<T, E = DecodeError> = std::result::Result<T, E>;

/// Dense `frames x states` table of per-frame observation scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    frames: usize,
    states: usize,
    data: Vec<f64>,
}

impl ScoreTable {
    pub fn zeros(frames: usize, states: usize) -> Self {
        ScoreTable {
            frames,
            states,
            data: vec![0.0; frames * states],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let states = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * states);
        for (t, r) in rows.iter().enumerate() {
            if r.len() != states {
                return Err(DecodeError::Shape(format!(
                    "row {t} has {} entries, expected {states}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(ScoreTable {
            frames: rows.len(),
            states,
            data,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn get(&self, t: usize, s: usize) -> f64 {
        self.data[t * self.states + s]
    }

    pub fn set(&mut self, t: usize, s: usize, v: f64) {
        self.data[t * self.states + s] = v;
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.states..(t + 1) * self.states]
    }

    pub fn row_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.data[t * self.states..(t + 1) * self.states]
    }

    fn check_finite(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(p) => Err(DecodeError::NonFiniteScore {
                frame: p / self.states,
                state: p % self.states,
            }),
            None => Ok(()),
        }
    }

    /// `cum[t][s]` is the sum of frames `0..t`.
    fn cumulative(&self) -> Vec<f64> {
        let mut cum = vec![0.0; (self.frames + 1) * self.states];
        for t in 0..self.frames {
            for s in 0..self.states {
                cum[(t + 1) * self.states + s] = cum[t * self.states + s] + self.get(t, s);
            }
        }
        cum
    }
}

/// Log transition scores between vocabulary states plus the structural mask.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionModel {
    states: usize,
    log_prob: Vec<f64>,
    mask: Vec<bool>,
}

impl TransitionModel {
    /// All off-diagonal transitions allowed with log score 0.
    pub fn uniform(states: usize) -> Self {
        let mut mask = vec![true; states * states];
        let mut log_prob = vec![0.0; states * states];
        for s in 0..states {
            mask[s * states + s] = true;
            log_prob[s * states + s] = f64::NEG_INFINITY;
        }
        TransitionModel {
            states,
            log_prob,
            mask,
        }
    }

    /// Build from dense row-major tables.
    pub fn from_parts(states: usize, log_prob: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        if log_prob.len() != states * states || mask.len() != states * states {
            return Err(DecodeError::Shape(format!(
                "transition tables must have {} entries",
                states * states
            )));
        }
        if log_prob.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(DecodeError::Shape("transition scores must be < +inf".into()));
        }
        Ok(TransitionModel {
            states,
            log_prob,
            mask,
        })
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn log_prob(&self, from: usize, to: usize) -> f64 {
        self.log_prob[from * self.states + to]
    }

    pub fn allowed(&self, from: usize, to: usize) -> bool {
        self.mask[from * self.states + to]
    }

    pub fn set(&mut self, from: usize, to: usize, log_prob: f64) {
        self.log_prob[from * self.states + to] = log_prob;
    }

    pub fn set_allowed(&mut self, from: usize, to: usize, allowed: bool) {
        self.mask[from * self.states + to] = allowed;
    }

    /// Weighted score of a boundary `from -> to`; `-inf` when the states are
    /// equal, masked out, or the log probability is `-inf` (whatever `w`).
    pub fn score(&self, from: usize, to: usize, w_seq: f64) -> f64 {
        let lp = self.log_prob(from, to);
        if from == to || !self.allowed(from, to) || lp == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            w_seq * lp
        }
    }
}

/// Score of the first segment's state.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Initial {
    /// Every state may start the sequence at no cost.
    #[default]
    Free,
    /// Only this state may start the sequence.
    Forced(usize),
    /// Log scores per state, weighted by `w_seq` like transitions.
    LogScores(Vec<f64>),
}

impl Initial {
    fn score(&self, state: usize, w_seq: f64) -> f64 {
        match self {
            Initial::Free => 0.0,
            Initial::Forced(s) => {
                if *s == state {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
            Initial::LogScores(v) => match v.get(state) {
                Some(&lp) if lp > f64::NEG_INFINITY => w_seq * lp,
                _ => f64::NEG_INFINITY,
            },
        }
    }
}

/// Optional pair-dependent scores `A[b][u][v]`, added when a segment
/// labeled `v` starts at frame `b` right after a segment labeled `u`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryScores {
    frames: usize,
    states: usize,
    data: Vec<f64>,
}

impl BoundaryScores {
    pub fn zeros(frames: usize, states: usize) -> Self {
        BoundaryScores {
            frames,
            states,
            data: vec![0.0; frames * states * states],
        }
    }

    pub fn get(&self, begin: usize, from: usize, to: usize) -> f64 {
        self.data[(begin * self.states + from) * self.states + to]
    }

    pub fn set(&mut self, begin: usize, from: usize, to: usize, v: f64) {
        self.data[(begin * self.states + from) * self.states + to] = v;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub begin: usize,
    pub end: usize,
    pub state: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end - self.begin
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.begin
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    pub frame_labels: Vec<usize>,
    pub segments: Vec<Segment>,
    pub total_score: f64,
}

impl DecodeResult {
    fn from_segments(segments: Vec<Segment>, total_score: f64) -> Self {
        DecodeResult {
            frame_labels: frame_labels(&segments),
            segments,
            total_score,
        }
    }

    /// Actions between consecutive segments, resolved against the
    /// vocabulary's representatives up to symmetry.
    pub fn actions(&self, vocab: &Vocabulary) -> Result<Vec<AssemblyAction>> {
        let assemblies: Vec<Assembly> = self
            .segments
            .iter()
            .map(|s| vocab.assembly(s.state).clone())
            .collect();
        Ok(crate::metrics::actions_from_segments(&assemblies)
            .map_err(|(_, e)| DecodeError::Assembly(e))?)
    }
}

pub fn frame_labels(segments: &[Segment]) -> Vec<usize> {
    segments
        .iter()
        .flat_map(|s| std::iter::repeat_n(s.state, s.len()))
        .collect()
}

/// Run-length encode a frame labeling into segments.
pub fn segments_from_labels(labels: &[usize]) -> Vec<Segment> {
    let mut out: Vec<Segment> = Vec::new();
    for (t, &l) in labels.iter().enumerate() {
        match out.last_mut() {
            Some(seg) if seg.state == l => seg.end = t + 1,
            _ => out.push(Segment {
                begin: t,
                end: t + 1,
                state: l,
            }),
        }
    }
    out
}

/// The ordered state space: distinct canonical assemblies.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    entries: Vec<(CanonicalKey, Assembly)>,
    index: HashMap<CanonicalKey, usize>,
}

impl Vocabulary {
    /// Deduplicate by canonical key; states are ordered by key so the
    /// result does not depend on input order. Each state is represented by
    /// the smallest joint set in its symmetry orbit.
    pub fn from_assemblies<'a>(items: impl IntoIterator<Item = &'a Assembly>) -> Result<Self> {
        let mut by_key: std::collections::BTreeMap<CanonicalKey, Assembly> = Default::default();
        for a in items {
            let key = a.canonical_key()?;
            if !by_key.contains_key(&key) {
                let rep = a
                    .orbit()?
                    .into_iter()
                    .min_by(|x, y| x.joints().cmp(y.joints()))
                    .expect("orbit contains self");
                by_key.insert(key, rep);
            }
        }
        Ok(Self::from_entries(by_key.into_iter().collect()))
    }

    /// Keep the given order and representatives; keys must be distinct.
    pub fn from_entries(entries: Vec<(CanonicalKey, Assembly)>) -> Self {
        let index = entries
            .iter()
            .enumerate()
            .map(|(n, (k, _))| (k.clone(), n))
            .collect();
        Vocabulary { entries, index }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn key(&self, id: usize) -> &CanonicalKey {
        &self.entries[id].0
    }

    pub fn assembly(&self, id: usize) -> &Assembly {
        &self.entries[id].1
    }

    pub fn id(&self, key: &CanonicalKey) -> Option<usize> {
        self.index.get(key).copied()
    }

    pub fn id_of(&self, a: &Assembly) -> Result<Option<usize>> {
        Ok(self.id(&a.canonical_key()?))
    }

    pub fn entries(&self) -> &[(CanonicalKey, Assembly)] {
        &self.entries
    }

    pub fn empty_state(&self) -> Option<usize> {
        self.entries.iter().position(|(_, a)| a.is_empty())
    }

    /// `mask[u][v]` is true when `u == v` or some symmetric relabeling of
    /// `v` differs from `u` by a single signed action.
    pub fn structural_mask(&self) -> Result<Vec<bool>> {
        let n = self.len();
        let mut mask = vec![false; n * n];
        for u in 0..n {
            for v in 0..n {
                mask[u * n + v] = u == v
                    || self
                        .assembly(u)
                        .diff_up_to_symmetry(self.assembly(v))
                        .is_ok();
            }
        }
        Ok(mask)
    }
}

/// One decoding problem: scores, transitions and the initial-state rule.
#[derive(Debug, Clone)]
pub struct Problem<'a> {
    pub scores: &'a ScoreTable,
    pub transitions: &'a TransitionModel,
    pub w_seq: f64,
    pub initial: Initial,
    pub boundary: Option<&'a BoundaryScores>,
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    score: f64,
    nseg: u32,
    /// Begin frame of the last segment and the state before it.
    begin: usize,
    prev: usize,
}

const UNREACHED: Cell = Cell {
    score: f64::NEG_INFINITY,
    nseg: 0,
    begin: 0,
    prev: usize::MAX,
};

enum Starts<'b> {
    Any,
    Bounded(usize),
    Fixed(&'b HashMap<usize, usize>),
}

impl<'a> Problem<'a> {
    pub fn new(scores: &'a ScoreTable, transitions: &'a TransitionModel, w_seq: f64) -> Self {
        Problem {
            scores,
            transitions,
            w_seq,
            initial: Initial::default(),
            boundary: None,
        }
    }

    pub fn with_initial(mut self, initial: Initial) -> Self {
        self.initial = initial;
        self
    }

    pub fn with_boundary_scores(mut self, boundary: &'a BoundaryScores) -> Self {
        self.boundary = Some(boundary);
        self
    }

    fn validate(&self) -> Result<()> {
        if self.scores.frames() == 0 {
            return Err(DecodeError::Empty);
        }
        if self.scores.states() != self.transitions.states() {
            return Err(DecodeError::Shape(format!(
                "score table has {} states, transition model {}",
                self.scores.states(),
                self.transitions.states()
            )));
        }
        if let Some(b) = self.boundary {
            if b.frames != self.scores.frames() || b.states != self.scores.states() {
                return Err(DecodeError::Shape("boundary table shape".into()));
            }
        }
        let states = self.scores.states();
        match &self.initial {
            Initial::Forced(s) if *s >= states => {
                return Err(DecodeError::Shape(format!("initial state {s} out of range")));
            }
            Initial::LogScores(v) if v.len() != states => {
                return Err(DecodeError::Shape(format!(
                    "{} initial scores for {states} states",
                    v.len()
                )));
            }
            _ => {}
        }
        self.scores.check_finite()
    }

    fn edge(&self, begin: usize, from: usize, to: usize) -> f64 {
        let t = self.transitions.score(from, to, self.w_seq);
        match self.boundary {
            Some(b) if t > f64::NEG_INFINITY => t + b.get(begin, from, to),
            _ => t,
        }
    }

    /// Jointly segment and label, with no duration limit.
    pub fn segmental(&self) -> Result<DecodeResult> {
        self.validate()?;
        self.run(Starts::Any)
    }

    /// Jointly segment and label with segments of at most `max_duration` frames.
    pub fn segmental_bounded(&self, max_duration: usize) -> Result<DecodeResult> {
        if max_duration == 0 {
            return Err(DecodeError::ZeroDuration);
        }
        self.validate()?;
        self.run(Starts::Bounded(max_duration))
    }

    /// Label fixed segments given as `(begin, end)` pairs tiling `0..T`.
    pub fn known_boundaries(&self, boundaries: &[(usize, usize)]) -> Result<DecodeResult> {
        self.validate()?;
        check_tiling(boundaries.iter().copied(), self.scores.frames())?;
        let starts: HashMap<usize, usize> = boundaries.iter().map(|&(b, e)| (e, b)).collect();
        self.run(Starts::Fixed(&starts))
    }

    /// Objective value of a given labeled segmentation, accumulated in the
    /// same order as the dynamic program so decodes rescore bit-exactly.
    pub fn score_sequence(&self, segments: &[Segment]) -> Result<f64> {
        self.validate()?;
        check_tiling(segments.iter().map(|s| (s.begin, s.end)), self.scores.frames())?;
        let states = self.scores.states();
        if let Some(s) = segments.iter().find(|s| s.state >= states) {
            return Err(DecodeError::Shape(format!("state {} out of range", s.state)));
        }
        let cum = self.scores.cumulative();
        let mut acc = 0.0;
        for (m, seg) in segments.iter().enumerate() {
            acc += if m == 0 {
                self.initial.score(seg.state, self.w_seq)
            } else {
                self.edge(seg.begin, segments[m - 1].state, seg.state)
            };
            acc += segment_sum(&cum, states, seg.begin, seg.end, seg.state);
        }
        Ok(acc)
    }

    fn run(&self, starts: Starts<'_>) -> Result<DecodeResult> {
        let frames = self.scores.frames();
        let states = self.scores.states();
        let cum = self.scores.cumulative();
        // cells[e * states + v]: best prefix covering 0..e whose last segment is v.
        let mut cells = vec![UNREACHED; (frames + 1) * states];
        // best_into[b * states + v]: best predecessor cell entering state v at frame b.
        let mut best_into = vec![UNREACHED; (frames + 1) * states];

        for e in 1..=frames {
            let begins: Vec<usize> = match &starts {
                Starts::Any => (0..e).collect(),
                Starts::Bounded(k) => (e.saturating_sub(*k)..e).collect(),
                Starts::Fixed(m) => m.get(&e).map(|&b| vec![b]).unwrap_or_default(),
            };
            for v in 0..states {
                let mut best = UNREACHED;
                for &b in &begins {
                    let seg = segment_sum(&cum, states, b, e, v);
                    let cand = if b == 0 {
                        Cell {
                            score: self.initial.score(v, self.w_seq) + seg,
                            nseg: 1,
                            begin: 0,
                            prev: usize::MAX,
                        }
                    } else {
                        let into = best_into[b * states + v];
                        if into.score == f64::NEG_INFINITY {
                            continue;
                        }
                        Cell {
                            score: into.score + seg,
                            nseg: into.nseg + 1,
                            begin: b,
                            prev: into.prev,
                        }
                    };
                    if cand.score == f64::NEG_INFINITY {
                        continue;
                    }
                    if best.score == f64::NEG_INFINITY
                        || self.compare(&cells, &cand, &best) == Ordering::Less
                    {
                        best = cand;
                    }
                }
                cells[e * states + v] = best;
            }
            if e < frames {
                for v in 0..states {
                    let mut best = UNREACHED;
                    for u in 0..states {
                        let from = cells[e * states + u];
                        if from.score == f64::NEG_INFINITY {
                            continue;
                        }
                        let edge = self.edge(e, u, v);
                        if edge == f64::NEG_INFINITY {
                            continue;
                        }
                        // Here `begin` records where the entering prefix ends.
                        let cand = Cell {
                            score: from.score + edge,
                            nseg: from.nseg,
                            begin: e,
                            prev: u,
                        };
                        if best.score == f64::NEG_INFINITY
                            || self.compare_prefixes(&cells, &cand, &best) == Ordering::Less
                        {
                            best = cand;
                        }
                    }
                    best_into[e * states + v] = best;
                }
            }
        }

        let mut best: Option<(usize, Cell)> = None;
        for v in 0..states {
            let c = cells[frames * states + v];
            if c.score == f64::NEG_INFINITY {
                continue;
            }
            let better = match &best {
                None => true,
                Some((bv, bc)) => {
                    let a = (frames, v, c);
                    let b = (frames, *bv, *bc);
                    self.compare_full(&cells, a, b) == Ordering::Less
                }
            };
            if better {
                best = Some((v, c));
            }
        }
        let (v, cell) = best.ok_or(DecodeError::NoFeasiblePath)?;
        let segments = backtrack(&cells, states, frames, v);
        Ok(DecodeResult::from_segments(segments, cell.score))
    }

    /// Order candidates for the same cell: higher score, fewer segments,
    /// then smaller label and begin sequences. `Less` means `a` is better.
    fn compare(&self, cells: &[Cell], a: &Cell, b: &Cell) -> Ordering {
        b.score
            .total_cmp(&a.score)
            .then(a.nseg.cmp(&b.nseg))
            .then_with(|| {
                let states = self.scores.states();
                let pa = prefix(cells, states, a.begin, a.prev);
                let pb = prefix(cells, states, b.begin, b.prev);
                compare_paths(&pa, &pb)
            })
    }

    fn compare_prefixes(&self, cells: &[Cell], a: &Cell, b: &Cell) -> Ordering {
        b.score
            .total_cmp(&a.score)
            .then(a.nseg.cmp(&b.nseg))
            .then_with(|| {
                let states = self.scores.states();
                let pa = backtrack(cells, states, a.begin, a.prev);
                let pb = backtrack(cells, states, b.begin, b.prev);
                compare_paths(&pa, &pb)
            })
    }

    fn compare_full(&self, cells: &[Cell], a: (usize, usize, Cell), b: (usize, usize, Cell)) -> Ordering {
        b.2.score
            .total_cmp(&a.2.score)
            .then(a.2.nseg.cmp(&b.2.nseg))
            .then_with(|| {
                let states = self.scores.states();
                compare_paths(
                    &backtrack(cells, states, a.0, a.1),
                    &backtrack(cells, states, b.0, b.1),
                )
            })
    }
}

fn prefix(cells: &[Cell], states: usize, begin: usize, prev: usize) -> Vec<Segment> {
    if begin == 0 {
        Vec::new()
    } else {
        backtrack(cells, states, begin, prev)
    }
}

fn compare_paths(a: &[Segment], b: &[Segment]) -> Ordering {
    a.iter()
        .map(|s| s.state)
        .cmp(b.iter().map(|s| s.state))
        .then_with(|| a.iter().map(|s| s.begin).cmp(b.iter().map(|s| s.begin)))
}

fn backtrack(cells: &[Cell], states: usize, mut end: usize, mut state: usize) -> Vec<Segment> {
    let mut out = Vec::new();
    while end > 0 {
        let c = cells[end * states + state];
        out.push(Segment {
            begin: c.begin,
            end,
            state,
        });
        end = c.begin;
        state = c.prev;
    }
    out.reverse();
    out
}

fn segment_sum(cum: &[f64], states: usize, begin: usize, end: usize, state: usize) -> f64 {
    cum[end * states + state] - cum[begin * states + state]
}

fn check_tiling(spans: impl Iterator<Item = (usize, usize)>, frames: usize) -> Result<()> {
    let mut next = 0;
    for (b, e) in spans {
        if b != next || e <= b {
            return Err(DecodeError::InvalidSegments {
                frames,
                reason: format!("segment {b}..{e} does not start at {next} or is empty"),
            });
        }
        next = e;
    }
    if next != frames {
        return Err(DecodeError::InvalidSegments {
            frames,
            reason: format!("segments end at {next}"),
        });
    }
    Ok(())
}

/// Viterbi over fixed segments.
pub fn viterbi_known_boundaries(
    scores: &ScoreTable,
    boundaries: &[(usize, usize)],
    transitions: &TransitionModel,
    w_seq: f64,
    initial: Initial,
) -> Result<DecodeResult> {
    Problem::new(scores, transitions, w_seq)
        .with_initial(initial)
        .known_boundaries(boundaries)
}

/// Semi-Markov Viterbi over all segmentations.
pub fn segmental_viterbi(
    scores: &ScoreTable,
    transitions: &TransitionModel,
    w_seq: f64,
    initial: Initial,
) -> Result<DecodeResult> {
    Problem::new(scores, transitions, w_seq)
        .with_initial(initial)
        .segmental()
}

/// Semi-Markov Viterbi restricted to segments of at most `max_duration` frames.
pub fn segmental_viterbi_bounded(
    scores: &ScoreTable,
    transitions: &TransitionModel,
    w_seq: f64,
    initial: Initial,
    max_duration: usize,
) -> Result<DecodeResult> {
    Problem::new(scores, transitions, w_seq)
        .with_initial(initial)
        .segmental_bounded(max_duration)
}

pub fn score_sequence(
    scores: &ScoreTable,
    segments: &[Segment],
    transitions: &TransitionModel,
    w_seq: f64,
    initial: Initial,
) -> Result<f64> {
    Problem::new(scores, transitions, w_seq)
        .with_initial(initial)
        .score_sequence(segments)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(rows: &[&[f64]]) -> ScoreTable {
        ScoreTable::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn single_segment_argmax() {
        let s = table(&[&[0.0, 1.0, 0.2], &[0.0, 1.0, 0.2], &[0.1, 1.0, 0.0]]);
        let t = TransitionModel::uniform(3);
        let r = segmental_viterbi(&s, &t, 1.0, Initial::Free).unwrap();
        assert_eq!(r.frame_labels, vec![1, 1, 1]);
        assert_eq!(r.segments.len(), 1);
        assert_eq!(r.total_score, 3.0);
        let k = viterbi_known_boundaries(&s, &[(0, 3)], &t, 1.0, Initial::Free).unwrap();
        assert_eq!(k.frame_labels, vec![1, 1, 1]);
    }

    #[test]
    fn mask_forces_chain() {
        let s = ScoreTable::zeros(4, 2);
        let mut t = TransitionModel::uniform(2);
        t.set_allowed(1, 0, false);
        let r = viterbi_known_boundaries(&s, &[(0, 2), (2, 4)], &t, 1.0, Initial::Forced(0)).unwrap();
        assert_eq!(r.frame_labels, vec![0, 0, 1, 1]);
    }

    #[test]
    fn ties_prefer_fewer_segments_then_low_ids() {
        // Every labeling scores 0: a single segment of state 0 wins.
        let s = ScoreTable::zeros(3, 3);
        let t = TransitionModel::uniform(3);
        let r = segmental_viterbi(&s, &t, 1.0, Initial::Free).unwrap();
        assert_eq!(r.segments, vec![Segment { begin: 0, end: 3, state: 0 }]);
        // Known boundaries, all tied: 0,1,0 is lexicographically smallest.
        let k = viterbi_known_boundaries(&s, &[(0, 1), (1, 2), (2, 3)], &t, 1.0, Initial::Free).unwrap();
        assert_eq!(k.frame_labels, vec![0, 1, 0]);
    }

    #[test]
    fn blocked_row_is_infeasible() {
        let s = ScoreTable::zeros(3, 2);
        let mut t = TransitionModel::uniform(2);
        t.set(0, 1, f64::NEG_INFINITY);
        // Forced start in 0 is fine with a single segment...
        assert!(segmental_viterbi(&s, &t, 1.0, Initial::Forced(0)).is_ok());
        // ...but not when segments are capped at 2 frames.
        assert_eq!(
            segmental_viterbi_bounded(&s, &t, 1.0, Initial::Forced(0), 2),
            Err(DecodeError::NoFeasiblePath)
        );
    }

    #[test]
    fn zero_weight_does_not_unblock() {
        let s = table(&[&[0.0, 5.0], &[0.0, 5.0]]);
        let mut t = TransitionModel::uniform(2);
        t.set(0, 1, f64::NEG_INFINITY);
        let r = segmental_viterbi(&s, &t, 0.0, Initial::Forced(0)).unwrap();
        assert_eq!(r.frame_labels, vec![0, 0]);
    }

    #[test]
    fn rescoring_is_exact() {
        let s = table(&[&[0.3, -0.1], &[0.2, 0.9], &[-0.4, 0.7], &[0.5, 0.1]]);
        let mut t = TransitionModel::uniform(2);
        t.set(0, 1, (0.3f64).ln());
        t.set(1, 0, (0.6f64).ln());
        let p = Problem::new(&s, &t, 1.5).with_initial(Initial::Free);
        let r = p.segmental().unwrap();
        assert_eq!(p.score_sequence(&r.segments).unwrap(), r.total_score);
        let single = p
            .score_sequence(&[Segment { begin: 0, end: 4, state: 0 }])
            .unwrap();
        assert!((single - 0.6).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        let mut s = ScoreTable::zeros(2, 2);
        s.set(1, 0, f64::NAN);
        let t = TransitionModel::uniform(2);
        assert_eq!(
            segmental_viterbi(&s, &t, 1.0, Initial::Free),
            Err(DecodeError::NonFiniteScore { frame: 1, state: 0 })
        );
        let s = ScoreTable::zeros(2, 2);
        assert!(matches!(
            viterbi_known_boundaries(&s, &[(0, 1)], &t, 1.0, Initial::Free),
            Err(DecodeError::InvalidSegments { .. })
        ));
        assert_eq!(
            segmental_viterbi_bounded(&s, &t, 1.0, Initial::Free, 0),
            Err(DecodeError::ZeroDuration)
        );
        assert_eq!(
            segmental_viterbi(&ScoreTable::zeros(0, 2), &t, 1.0, Initial::Free),
            Err(DecodeError::Empty)
        );
    }

    #[test]
    fn boundary_scores_apply_at_switch() {
        let s = ScoreTable::zeros(2, 2);
        let t = TransitionModel::uniform(2);
        let mut b = BoundaryScores::zeros(2, 2);
        b.set(1, 0, 1, 3.0);
        let r = Problem::new(&s, &t, 1.0)
            .with_initial(Initial::Forced(0))
            .with_boundary_scores(&b)
            .segmental()
            .unwrap();
        assert_eq!(r.frame_labels, vec![0, 1]);
        assert_eq!(r.total_score, 3.0);
    }

    #[test]
    fn run_length_roundtrip() {
        let labels = vec![2, 2, 0, 1, 1, 1];
        let segs = segments_from_labels(&labels);
        assert_eq!(segs.len(), 3);
        assert_eq!(frame_labels(&segs), labels);
    }
}
