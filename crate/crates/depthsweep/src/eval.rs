//! Metrics for multi-person 3D pose estimates: percentage of correct
//! parts (PCP), mean per-joint position error (MPJPE), average precision
//! at distance thresholds, and person-level depth recall curves.
//!
//! All metrics are pure functions over completed results. Estimates and
//! ground truth are unordered sets per frame; every metric is invariant
//! to their ordering, except that average precision ranks estimates by
//! confidence (documented below) and so depends on that ranking alone.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Pose3D;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("evaluation input: {0}")]
    Input(String),
    #[error("report format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One estimated person with the confidence the fusion stage assigned it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredPose {
    pub pose: Pose3D,
    pub confidence: f64,
}

/// One frame's worth of inputs to the metrics.
#[derive(Clone, Debug, Default)]
pub struct EvalFrame {
    pub estimates: Vec<ScoredPose>,
    pub ground_truth: Vec<Pose3D>,
}

/// AP is reported at these centre-distance thresholds, millimetres.
pub const AP_THRESHOLDS: [f64; 4] = [25.0, 50.0, 100.0, 150.0];

/// A ground-truth person counts as matched for MPJPE when the nearest
/// estimated hip lies within this radius, millimetres.
pub const MPJPE_MATCH_RADIUS: f64 = 500.0;

/// Correct-parts counts for one actor slot.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PcpCount {
    pub correct: usize,
    pub total: usize,
}

/// PCP over a dataset, bucketed by actor slot (the ground-truth person's
/// index within its frame).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcpSummary {
    pub per_actor: Vec<f64>,
    pub average: f64,
}

/// Accumulates per-bone correctness across frames. For each ground-truth
/// pose the nearest estimate by mean joint distance is selected; a bone
/// is correct when the mean error of its two endpoints is at most half
/// the ground-truth bone length. A ground-truth pose facing an empty
/// estimate set contributes zero correct bones.
#[derive(Clone, Debug, Default)]
pub struct PcpAccumulator {
    counts: Vec<PcpCount>,
}

impl PcpAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_frame(
        &mut self,
        estimates: &[Pose3D],
        ground_truth: &[Pose3D],
        bones: &[(usize, usize)],
    ) {
        for (actor, gt) in ground_truth.iter().enumerate() {
            if self.counts.len() <= actor {
                self.counts.resize(actor + 1, PcpCount::default());
            }
            let slot = &mut self.counts[actor];
            slot.total += bones.len();
            let Some(nearest) = nearest_by_mean_joint_distance(estimates, gt) else {
                continue;
            };
            for &(a, b) in bones {
                let err = 0.5
                    * (nearest.joints[a].distance(gt.joints[a])
                        + nearest.joints[b].distance(gt.joints[b]));
                let length = gt.joints[a].distance(gt.joints[b]);
                if err <= 0.5 * length {
                    slot.correct += 1;
                }
            }
        }
    }

    pub fn counts(&self) -> &[PcpCount] {
        &self.counts
    }

    /// Per-actor fractions and their mean; actor slots that never
    /// appeared are skipped, and an empty accumulator averages to 0.
    pub fn summary(&self) -> PcpSummary {
        let per_actor: Vec<f64> = self
            .counts
            .iter()
            .map(|c| {
                if c.total == 0 {
                    0.0
                } else {
                    c.correct as f64 / c.total as f64
                }
            })
            .collect();
        let seen: Vec<f64> = self
            .counts
            .iter()
            .zip(&per_actor)
            .filter(|(c, _)| c.total > 0)
            .map(|(_, &v)| v)
            .collect();
        let average = if seen.is_empty() {
            0.0
        } else {
            seen.iter().sum::<f64>() / seen.len() as f64
        };
        PcpSummary { per_actor, average }
    }
}

fn nearest_by_mean_joint_distance<'a>(
    estimates: &'a [Pose3D],
    gt: &Pose3D,
) -> Option<&'a Pose3D> {
    estimates
        .iter()
        .map(|e| (e, e.mean_joint_distance(gt)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(e, _)| e)
}

/// PCP over whole frames with a fixed bone list.
pub fn pcp(frames: &[EvalFrame], bones: &[(usize, usize)]) -> PcpSummary {
    let mut acc = PcpAccumulator::new();
    for frame in frames {
        let estimates: Vec<Pose3D> =
            frame.estimates.iter().map(|s| s.pose.clone()).collect();
        acc.add_frame(&estimates, &frame.ground_truth, bones);
    }
    acc.summary()
}

/// MPJPE over matched persons plus miss statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MpjpeSummary {
    /// Mean over all matched persons' mean joint errors, mm; 0 when
    /// nothing matched.
    pub mean_mm: f64,
    /// Median of matched persons' mean joint errors, mm; 0 when nothing
    /// matched.
    pub median_mm: f64,
    pub matched: usize,
    pub missed: usize,
}

/// Assigns each ground-truth person to the nearest estimate by hip
/// distance; persons whose nearest hip is farther than `match_radius`
/// are misses and excluded from the error statistics. No alignment
/// transform is applied.
pub fn mpjpe(frames: &[EvalFrame], match_radius: f64) -> MpjpeSummary {
    let mut errors = Vec::new();
    let mut missed = 0usize;
    for frame in frames {
        for gt in &frame.ground_truth {
            let nearest = frame
                .estimates
                .iter()
                .map(|e| (e, e.pose.root().distance(gt.root())))
                .min_by(|a, b| a.1.total_cmp(&b.1));
            match nearest {
                Some((est, hip_dist)) if hip_dist <= match_radius => {
                    errors.push(est.pose.mean_joint_distance(gt));
                }
                _ => missed += 1,
            }
        }
    }
    let matched = errors.len();
    let mean_mm = if matched == 0 {
        0.0
    } else {
        errors.iter().sum::<f64>() / matched as f64
    };
    MpjpeSummary { mean_mm, median_mm: median(&mut errors), matched, missed }
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Average precision at one centre-distance threshold. Estimates from
/// all frames are ranked by confidence (descending); in that order each
/// estimate greedily claims the unmatched ground-truth person of its own
/// frame with the smallest mean joint distance, and is a true positive
/// when that distance is at most `threshold`. AP is the area under the
/// precision-recall curve with all-points interpolation (precision
/// envelope from the right).
pub fn average_precision(frames: &[EvalFrame], threshold: f64) -> f64 {
    assert!(threshold > 0.0, "threshold must be positive");
    let total_gt: usize = frames.iter().map(|f| f.ground_truth.len()).sum();
    if total_gt == 0 {
        return 0.0;
    }
    // (confidence, frame index, estimate index), ranked by confidence.
    let mut ranked: Vec<(f64, usize, usize)> = frames
        .iter()
        .enumerate()
        .flat_map(|(fi, f)| {
            f.estimates.iter().enumerate().map(move |(ei, e)| (e.confidence, fi, ei))
        })
        .collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut claimed: Vec<Vec<bool>> =
        frames.iter().map(|f| vec![false; f.ground_truth.len()]).collect();
    let mut tp_flags = Vec::with_capacity(ranked.len());
    for &(_, fi, ei) in &ranked {
        let frame = &frames[fi];
        let est = &frame.estimates[ei].pose;
        let best = frame
            .ground_truth
            .iter()
            .enumerate()
            .filter(|(gi, _)| !claimed[fi][*gi])
            .map(|(gi, gt)| (gi, est.mean_joint_distance(gt)))
            .min_by(|a, b| a.1.total_cmp(&b.1));
        match best {
            Some((gi, dist)) if dist <= threshold => {
                claimed[fi][gi] = true;
                tp_flags.push(true);
            }
            _ => tp_flags.push(false),
        }
    }

    let mut precision = Vec::with_capacity(tp_flags.len());
    let mut recall = Vec::with_capacity(tp_flags.len());
    let mut tp = 0usize;
    for (k, &is_tp) in tp_flags.iter().enumerate() {
        if is_tp {
            tp += 1;
        }
        precision.push(tp as f64 / (k + 1) as f64);
        recall.push(tp as f64 / total_gt as f64);
    }
    // Precision envelope: the interpolated precision at a recall level is
    // the best precision at any higher rank.
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, r) in precision.iter().zip(&recall) {
        ap += (r - prev_recall) * p;
        prev_recall = *r;
    }
    ap
}

/// One group of person-level depths sharing a matching pool, typically
/// one (frame, camera) pair: the estimated person depths in that view
/// and the ground-truth person depths visible in it.
#[derive(Clone, Debug, Default)]
pub struct DepthGroup {
    pub estimated: Vec<f64>,
    pub truth: Vec<f64>,
}

/// Recall of person-level depth: for each ground-truth depth the nearest
/// estimated depth in its group sets the error; recall at a threshold is
/// the fraction of ground-truth depths with error at most the threshold.
/// Ground truth in a group with no estimates is never recalled. The
/// curve is monotone nondecreasing in the threshold.
pub fn depth_recall(groups: &[DepthGroup], thresholds: &[f64]) -> Vec<(f64, f64)> {
    let mut errors = Vec::new();
    for group in groups {
        for &truth in &group.truth {
            let err = group
                .estimated
                .iter()
                .map(|&e| (e - truth).abs())
                .min_by(f64::total_cmp)
                .unwrap_or(f64::INFINITY);
            errors.push(err);
        }
    }
    thresholds
        .iter()
        .map(|&t| {
            let recall = if errors.is_empty() {
                0.0
            } else {
                errors.iter().filter(|&&e| e <= t).count() as f64 / errors.len() as f64
            };
            (t, recall)
        })
        .collect()
}

/// Default threshold grid for recall curves: 25 mm steps up to 1 m.
pub fn default_recall_thresholds() -> Vec<f64> {
    (1..=40).map(|i| 25.0 * i as f64).collect()
}

const REPORT_KIND: &str = "depthsweep-eval";

/// Complete evaluation output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub kind: String,
    pub config_hash: String,
    pub frames: usize,
    pub pcp: PcpSummary,
    pub mpjpe: MpjpeSummary,
    /// (threshold mm, AP) pairs.
    pub ap: Vec<(f64, f64)>,
    /// (threshold mm, recall) pairs.
    pub depth_recall: Vec<(f64, f64)>,
}

impl EvalReport {
    /// Runs every metric over the frames and depth groups.
    pub fn compute(
        frames: &[EvalFrame],
        depth_groups: &[DepthGroup],
        bones: &[(usize, usize)],
        config_hash: &str,
    ) -> Self {
        let report = Self {
            kind: REPORT_KIND.to_string(),
            config_hash: config_hash.to_string(),
            frames: frames.len(),
            pcp: pcp(frames, bones),
            mpjpe: mpjpe(frames, MPJPE_MATCH_RADIUS),
            ap: AP_THRESHOLDS
                .iter()
                .map(|&t| (t, average_precision(frames, t)))
                .collect(),
            depth_recall: depth_recall(depth_groups, &default_recall_thresholds()),
        };
        report.validate().expect("freshly computed report is in range");
        report
    }

    /// Range checks: every rate in [0, 1], errors nonnegative, recall
    /// monotone.
    pub fn validate(&self) -> Result<(), EvalError> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !self.pcp.per_actor.iter().all(|&v| unit(v)) || !unit(self.pcp.average) {
            return Err(EvalError::Input("PCP outside [0, 1]".into()));
        }
        if self.mpjpe.mean_mm < 0.0 || self.mpjpe.median_mm < 0.0 {
            return Err(EvalError::Input("MPJPE negative".into()));
        }
        if !self.ap.iter().all(|&(t, v)| t > 0.0 && unit(v)) {
            return Err(EvalError::Input("AP outside [0, 1]".into()));
        }
        if !self.depth_recall.iter().all(|&(_, v)| unit(v)) {
            return Err(EvalError::Input("recall outside [0, 1]".into()));
        }
        for pair in self.depth_recall.windows(2) {
            if pair[0].0 < pair[1].0 && pair[0].1 > pair[1].1 {
                return Err(EvalError::Input("recall curve not monotone".into()));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, EvalError> {
        let report: Self = serde_json::from_str(text)
            .map_err(|e| EvalError::Format(format!("invalid JSON: {e}")))?;
        if report.kind != REPORT_KIND {
            return Err(EvalError::Format(format!(
                "not an evaluation report: kind {:?}",
                report.kind
            )));
        }
        report.validate()?;
        Ok(report)
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<(), EvalError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self, EvalError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Flat metric,value table; one row per scalar.
    pub fn to_csv(&self) -> String {
        let mut out = format!("# config_hash {}\nmetric,value\n", self.config_hash);
        let mut row = |name: &str, value: f64| {
            out.push_str(&format!("{name},{value}\n"));
        };
        for (i, v) in self.pcp.per_actor.iter().enumerate() {
            row(&format!("pcp_actor_{i}"), *v);
        }
        row("pcp_average", self.pcp.average);
        row("mpjpe_mean_mm", self.mpjpe.mean_mm);
        row("mpjpe_median_mm", self.mpjpe.median_mm);
        row("matched", self.mpjpe.matched as f64);
        row("missed", self.mpjpe.missed as f64);
        for &(t, v) in &self.ap {
            row(&format!("ap_{t:.0}"), v);
        }
        out
    }

    /// The recall curve alone, as threshold_mm,recall rows for plotting.
    pub fn recall_csv(&self) -> String {
        let mut out = format!("# config_hash {}\nthreshold_mm,recall\n", self.config_hash);
        for &(t, r) in &self.depth_recall {
            out.push_str(&format!("{t},{r}\n"));
        }
        out
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<(), EvalError> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn save_recall_csv(&self, path: impl AsRef<Path>) -> Result<(), EvalError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.recall_csv().as_bytes())?;
        Ok(())
    }
}
