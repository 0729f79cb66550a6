//! Frame accuracy and segment-level edit score.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::{Assembly, AssemblyAction, AssemblyError, CanonicalKey, Scene};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("label sequences differ in length ({pred} vs {truth})")]
    LengthMismatch { pred: usize, truth: usize },
    #[error("frame accuracy of an empty sequence is undefined")]
    Empty,
}

/// Fraction of positions where the labels agree.
pub fn frame_accuracy<T: PartialEq>(pred: &[T], truth: &[T]) -> Result<f64, MetricsError> {
    if pred.len() != truth.len() {
        return Err(MetricsError::LengthMismatch {
            pred: pred.len(),
            truth: truth.len(),
        });
    }
    if pred.is_empty() {
        return Err(MetricsError::Empty);
    }
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Drop consecutive repeats.
pub fn collapse_runs<T: PartialEq + Clone>(labels: &[T]) -> Vec<T> {
    let mut out: Vec<T> = Vec::with_capacity(labels.len());
    for l in labels {
        if out.last() != Some(l) {
            out.push(l.clone());
        }
    }
    out
}

/// Unit-cost Levenshtein distance, two-row dynamic program.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `1 - d / max(|a|, |b|)` on run-collapsed sequences; 1 when both are empty.
pub fn edit_score<T: PartialEq + Clone>(pred: &[T], truth: &[T]) -> f64 {
    let p = collapse_runs(pred);
    let t = collapse_runs(truth);
    let longest = p.len().max(t.len());
    if longest == 0 {
        return 1.0;
    }
    1.0 - levenshtein(&p, &t) as f64 / longest as f64
}

/// Actions between consecutive segment assemblies. When the raw joint sets
/// are incomparable, the next assembly may be replaced by a symmetric
/// relabeling; that relabeling is then carried forward. On failure returns
/// the index of the offending pair (`i` means segments `i` and `i + 1`).
pub fn actions_from_segments(
    segments: &[Assembly],
) -> Result<Vec<AssemblyAction>, (usize, AssemblyError)> {
    let mut out = Vec::with_capacity(segments.len().saturating_sub(1));
    let Some(first) = segments.first() else {
        return Ok(out);
    };
    let mut cur = first.clone();
    for (i, next) in segments[1..].iter().enumerate() {
        let (relabeled, action) = cur.diff_up_to_symmetry(next).map_err(|e| (i, e))?;
        out.push(action);
        cur = relabeled;
    }
    Ok(out)
}

/// Canonical action keys, used as labels for action-level metrics.
pub fn action_keys(
    actions: &[AssemblyAction],
    scene: &Arc<Scene>,
) -> Result<Vec<CanonicalKey>, AssemblyError> {
    actions.iter().map(|a| a.canonical_key(scene)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceScores {
    pub sequence: String,
    pub frame_accuracy: f64,
    pub edit_score: f64,
    pub action_edit_score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

/// Sample mean and sample standard deviation (`n - 1`; 0 for one value).
pub fn mean_std(values: &[f64]) -> MeanStd {
    let n = values.len();
    if n == 0 {
        return MeanStd {
            mean: f64::NAN,
            std: f64::NAN,
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    MeanStd { mean, std }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub sequences: Vec<SequenceScores>,
    pub frame_accuracy: MeanStd,
    pub edit_score: MeanStd,
    pub action_edit_score: MeanStd,
}

impl EvalReport {
    pub fn from_sequences(sequences: Vec<SequenceScores>) -> Self {
        let col = |f: fn(&SequenceScores) -> f64| mean_std(&sequences.iter().map(f).collect::<Vec<_>>());
        EvalReport {
            frame_accuracy: col(|s| s.frame_accuracy),
            edit_score: col(|s| s.edit_score),
            action_edit_score: col(|s| s.action_edit_score),
            sequences,
        }
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<24} {:>15} {:>15} {:>15}\n",
            "sequence", "accuracy", "edit", "action edit"
        );
        for s in &self.sequences {
            out += &format!(
                "{:<24} {:>15.4} {:>15.4} {:>15.4}\n",
                s.sequence, s.frame_accuracy, s.edit_score, s.action_edit_score
            );
        }
        let pm = |m: MeanStd| format!("{:.4}±{:.4}", m.mean, m.std);
        out += &format!(
            "{:<24} {:>15} {:>15} {:>15}\n",
            "mean±sd",
            pm(self.frame_accuracy),
            pm(self.edit_score),
            pm(self.action_edit_score)
        );
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::tests::beam_scene;
    use crate::assembly::Joint;

    #[test]
    fn accuracy_cases() {
        assert_eq!(frame_accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(frame_accuracy(&[1, 2, 3, 4], &[1, 2, 0, 0]).unwrap(), 0.5);
        assert_eq!(frame_accuracy(&['a', 'b'], &['c', 'd']).unwrap(), 0.0);
        assert_eq!(
            frame_accuracy(&[1], &[1, 2]),
            Err(MetricsError::LengthMismatch { pred: 1, truth: 2 })
        );
    }

    #[test]
    fn edit_cases() {
        assert_eq!(edit_score(&["A", "A", "B", "B", "C"], &["A", "B", "C"]), 1.0);
        assert!((edit_score(&["A", "B"], &["A", "C", "B"]) - (1.0 - 1.0 / 3.0)).abs() < 1e-15);
        assert_eq!(edit_score(&["X"], &["A", "B", "C"]), 0.0);
        assert_eq!(edit_score::<u8>(&[], &[]), 1.0);
        assert_eq!(levenshtein(b"kitten", b"sitting"), 3);
    }

    #[test]
    fn actions_between_segments() {
        let scene = beam_scene();
        let j1 = Joint::new(0, 0, 1, 0);
        let j2 = Joint::new(0, 1, 2, 0);
        let segs = vec![
            Assembly::empty(scene.clone()),
            Assembly::new(scene.clone(), [j1]).unwrap(),
            Assembly::new(scene.clone(), [j1, j2]).unwrap(),
        ];
        let actions = actions_from_segments(&segs).unwrap();
        assert_eq!(
            actions,
            vec![
                AssemblyAction::connect([j1]).unwrap(),
                AssemblyAction::connect([j2]).unwrap()
            ]
        );
        assert!(actions_from_segments(&segs[..1]).unwrap().is_empty());
        let same = vec![segs[1].clone(), segs[1].clone()];
        assert!(matches!(
            actions_from_segments(&same),
            Err((0, AssemblyError::NotComparable(_)))
        ));
    }

    #[test]
    fn report_aggregates() {
        let r = EvalReport::from_sequences(vec![
            SequenceScores { sequence: "a".into(), frame_accuracy: 1.0, edit_score: 1.0, action_edit_score: 1.0 },
            SequenceScores { sequence: "b".into(), frame_accuracy: 0.5, edit_score: 0.0, action_edit_score: 1.0 },
        ]);
        assert_eq!(r.frame_accuracy.mean, 0.75);
        assert!((r.frame_accuracy.std - (0.125f64).sqrt()).abs() < 1e-15);
        assert_eq!(r.action_edit_score.std, 0.0);
        assert!(r.to_table().contains("mean±sd"));
    }
}
