//! End-to-end orchestration: joint training of the person- and
//! joint-level depth networks on synthetic frames, per-view inference
//! with back-projection to world-frame poses, and cross-view fusion by
//! distance clustering.
//!
//! Training draws supervision from the generating 3D scene: each
//! observed 2D pose in each view becomes one sample whose targets are
//! the true hip depth and per-joint depth offsets in that camera. The
//! two losses are L1 sums and are optimized together; the joint stage is
//! anchored at the ground-truth hip depth during training, while
//! inference anchors it at the regressed estimate.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::depthnets::{
    absolute_joint_depths, local_soft_argmax, score_tensor, soft_argmax, DepthNetsError,
    JointNetConfig, Model, PersonNetConfig,
};
use crate::geometry::{back_project, CameraParams, GeometryError, Point3D, Pose3D};
use crate::nn::{Adam, Grads, NnError, Tape, Tensor};
use crate::sweep::{
    relative_score_matrix, score_matrix, Pose2D, ScoreMatrix, SweepConfig, SweepCounters,
    SweepError,
};
use crate::synth::{Dataset, SceneFrame};

/// Joints estimated below this camera-frame depth are pinned to it so
/// back-projection stays defined even for degenerate regressions.
pub const MIN_JOINT_DEPTH_MM: f64 = 1.0;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("training diverged at step {step}; last good checkpoint: {last_checkpoint:?}")]
    Diverged { step: u64, last_checkpoint: Option<PathBuf> },
    #[error(transparent)]
    Sweep(#[from] SweepError),
    #[error(transparent)]
    Nets(#[from] DepthNetsError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Optimization schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Fraction of frames (from the end of the dataset) held out for the
    /// validation depth error.
    pub val_fraction: f64,
    /// Cap on optimization steps per epoch; unset means a full pass.
    pub steps_per_epoch: Option<usize>,
    /// Periodic checkpoint cadence, steps.
    pub checkpoint_every: usize,
    /// Validation cadence, steps.
    pub val_every: usize,
    /// Cap on validation samples scored per validation pass.
    pub val_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 4,
            batch_size: 16,
            learning_rate: 1e-3,
            seed: 0,
            val_fraction: 0.05,
            steps_per_epoch: None,
            checkpoint_every: 500,
            val_every: 50,
            val_samples: 128,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(PipelineError::Config(
                "epochs and batch size must be positive".into(),
            ));
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(PipelineError::Config(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(PipelineError::Config(format!(
                "validation fraction {} outside [0, 1)",
                self.val_fraction
            )));
        }
        if self.steps_per_epoch == Some(0) {
            return Err(PipelineError::Config("steps per epoch must be positive".into()));
        }
        if self.checkpoint_every == 0 || self.val_every == 0 {
            return Err(PipelineError::Config(
                "checkpoint and validation cadences must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Everything the pipeline needs for one run: sweep geometry, network
/// shapes, the optimization schedule, and the fusion threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub sweep: SweepConfig,
    pub person_net: PersonNetConfig,
    pub joint_net: JointNetConfig,
    pub train: TrainConfig,
    /// Hip-to-hip distance below which per-view estimates merge, mm.
    pub fusion_threshold_mm: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            sweep: SweepConfig::default(),
            person_net: PersonNetConfig::default(),
            joint_net: JointNetConfig::default(),
            train: TrainConfig::default(),
            fusion_threshold_mm: 500.0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        self.sweep.validate()?;
        self.person_net.validate(self.sweep.planes)?;
        self.joint_net.validate(self.sweep.rel_planes)?;
        self.train.validate()?;
        if !self.fusion_threshold_mm.is_finite() || self.fusion_threshold_mm <= 0.0 {
            return Err(PipelineError::Config(format!(
                "fusion threshold {} must be positive",
                self.fusion_threshold_mm
            )));
        }
        Ok(())
    }
}

/// One training sample: an observed 2D pose in a target view plus its
/// depth supervision.
#[derive(Clone, Debug)]
struct Sample {
    frame: usize,
    view: usize,
    obs: usize,
    d_star: f64,
    rel: Vec<f64>,
}

/// Candidate 2D poses per view, with identities stripped: what inference
/// actually sees.
pub fn observed_views(frame: &SceneFrame) -> Vec<Vec<Pose2D>> {
    frame
        .views
        .iter()
        .map(|view| view.iter().map(|o| o.pose.clone()).collect())
        .collect()
}

fn frame_rig(dataset: &Dataset, frame: usize) -> &[CameraParams] {
    dataset.frames[frame].rig.as_deref().unwrap_or(&dataset.rig)
}

/// Enumerates (frame, view, observation) samples with their targets,
/// skipping persons whose hip depth the sweep range cannot represent.
fn collect_samples(dataset: &Dataset, sweep: &SweepConfig) -> Vec<Sample> {
    let mut samples = Vec::new();
    for (fi, frame) in dataset.frames.iter().enumerate() {
        let rig = frame_rig(dataset, fi);
        for (vi, view) in frame.views.iter().enumerate() {
            let camera = &rig[vi];
            for (oi, obs) in view.iter().enumerate() {
                let person = &frame.persons[obs.person];
                let d_star = camera.depth_of(person.root());
                if d_star < sweep.d_min || d_star > sweep.d_max {
                    continue;
                }
                let mut rel: Vec<f64> = person
                    .joints
                    .iter()
                    .map(|&j| camera.depth_of(j) - d_star)
                    .collect();
                rel[0] = 0.0;
                samples.push(Sample { frame: fi, view: vi, obs: oi, d_star, rel });
            }
        }
    }
    samples
}

/// Builds the two score matrices for one sample. The joint-level matrix
/// is anchored at the supplied depth: ground truth during training, the
/// regressed estimate at inference.
fn sample_matrices(
    dataset: &Dataset,
    views: &[Vec<Pose2D>],
    sample: &Sample,
    anchor: f64,
    sweep: &SweepConfig,
) -> Result<(ScoreMatrix, ScoreMatrix), PipelineError> {
    let rig = frame_rig(dataset, sample.frame);
    let target_cam = &rig[sample.view];
    let target_pose = &views[sample.view][sample.obs];
    let refs: Vec<(&CameraParams, &[Pose2D])> = views
        .iter()
        .enumerate()
        .filter(|&(v, _)| v != sample.view)
        .map(|(v, poses)| (&rig[v], poses.as_slice()))
        .collect();
    let person = score_matrix(
        target_pose,
        target_cam,
        &refs,
        &sweep.person_planes(),
        sweep.sigma,
        None,
    )?;
    let joint = relative_score_matrix(
        target_pose,
        anchor,
        target_cam,
        &refs,
        &sweep.rel_offsets(),
        sweep.sigma,
        None,
    )?;
    Ok((person, joint))
}

/// Output of [`train`]: where the artifacts went and the closing losses.
#[derive(Clone, Debug)]
pub struct TrainReport {
    pub model_path: PathBuf,
    pub metrics_path: PathBuf,
    pub steps: u64,
    /// Final per-sample losses (batch sums divided by batch size).
    pub final_person_loss: f64,
    pub final_joint_loss: f64,
    /// Final validation mean absolute hip-depth error, mm; NaN when no
    /// validation split exists.
    pub final_val_mae: f64,
}

/// Validation hip-depth mean absolute error in eval mode (running batch
/// norm statistics), over at most `limit` samples.
fn validation_mae(
    model: &Model,
    dataset: &Dataset,
    frame_views: &[Vec<Vec<Pose2D>>],
    samples: &[Sample],
    sweep: &SweepConfig,
    limit: usize,
) -> Result<f64, PipelineError> {
    let take = samples.len().min(limit);
    if take == 0 {
        return Ok(f64::NAN);
    }
    let person_depths = sweep.person_planes();
    let window = model.person.config().window;
    let mut total = 0.0;
    for chunk in samples[..take].chunks(64) {
        let mut mats = Vec::with_capacity(chunk.len());
        for s in chunk {
            let (p, _) =
                sample_matrices(dataset, &frame_views[s.frame], s, s.d_star, sweep)?;
            mats.push(p);
        }
        let refs: Vec<&ScoreMatrix> = mats.iter().collect();
        let dist = model.person.infer(&model.params, &refs)?;
        for (i, s) in chunk.iter().enumerate() {
            let d = local_soft_argmax(dist.row(i, 0), person_depths.depths(), window)?;
            total += (d - s.d_star).abs();
        }
    }
    Ok(total / take as f64)
}

/// Trains both networks jointly on a synthetic dataset.
///
/// Writes per-step metrics to `metrics.csv` (step, person loss, joint
/// loss, validation MAE), periodic checkpoints, and the final model to
/// `model.ckpt` under `out_dir`. A non-finite loss or gradient aborts
/// with [`PipelineError::Diverged`] carrying the last good checkpoint.
/// The whole procedure is deterministic given the dataset and config.
pub fn train(
    dataset: &Dataset,
    config: &RunConfig,
    out_dir: &Path,
    config_hash: &str,
) -> Result<TrainReport, PipelineError> {
    config.validate()?;
    if dataset.frames.is_empty() {
        return Err(PipelineError::Data("dataset has no frames".into()));
    }
    std::fs::create_dir_all(out_dir)?;

    let frame_views: Vec<Vec<Vec<Pose2D>>> =
        dataset.frames.iter().map(observed_views).collect();
    let samples = collect_samples(dataset, &config.sweep);
    if samples.is_empty() {
        return Err(PipelineError::Data(
            "no trainable samples: every person is outside the sweep depth range".into(),
        ));
    }
    let val_frames = ((dataset.frames.len() as f64 * config.train.val_fraction).ceil()
        as usize)
        .min(dataset.frames.len() - 1);
    let val_start = dataset.frames.len() - val_frames;
    let (train_samples, val_samples): (Vec<Sample>, Vec<Sample>) =
        samples.into_iter().partition(|s| s.frame < val_start);
    if train_samples.len() < config.train.batch_size {
        return Err(PipelineError::Data(format!(
            "{} training samples cannot fill a batch of {}",
            train_samples.len(),
            config.train.batch_size
        )));
    }

    let mut model = Model::new(
        dataset.joints,
        config.sweep.planes,
        config.sweep.rel_planes,
        config.person_net.clone(),
        config.joint_net.clone(),
        config.train.seed,
    )?;
    let mut adam = Adam::new(&model.params, config.train.learning_rate);
    let mut grads = Grads::new(&model.params);
    let person_depths = config.sweep.person_planes().depths().to_vec();
    let rel_depths = config.sweep.rel_offsets().depths().to_vec();
    let window = config.person_net.window;
    let joints = dataset.joints;
    let batch = config.train.batch_size;

    let metrics_path = out_dir.join("metrics.csv");
    let mut metrics = std::io::BufWriter::new(std::fs::File::create(&metrics_path)?);
    writeln!(metrics, "# config_hash {config_hash}")?;
    writeln!(metrics, "step,person_loss,joint_loss,val_mae")?;

    let checkpoint_meta = |step: u64| {
        json!({
            "config_hash": config_hash,
            "step": step,
            "sweep": config.sweep,
            "fusion_threshold_mm": config.fusion_threshold_mm,
        })
    };
    let mut last_checkpoint: Option<PathBuf> = None;
    let mut val_mae = validation_mae(
        &model,
        dataset,
        &frame_views,
        &val_samples,
        &config.sweep,
        config.train.val_samples,
    )?;
    let mut step = 0u64;
    let mut last_person = f64::NAN;
    let mut last_joint = f64::NAN;

    for epoch in 0..config.train.epochs {
        let mut order: Vec<usize> = (0..train_samples.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(config.train.seed);
        rng.set_stream(epoch as u64 + 1);
        order.shuffle(&mut rng);
        let step_cap = config
            .train
            .steps_per_epoch
            .unwrap_or(usize::MAX)
            .min(order.len() / batch);

        for chunk in order.chunks_exact(batch).take(step_cap) {
            step += 1;
            let mut p_mats = Vec::with_capacity(batch);
            let mut j_mats = Vec::with_capacity(batch);
            let mut d_star = Vec::with_capacity(batch);
            let mut rel_flat = Vec::with_capacity(batch * joints);
            for &si in chunk {
                let s = &train_samples[si];
                let (p, j) =
                    sample_matrices(dataset, &frame_views[s.frame], s, s.d_star, &config.sweep)?;
                p_mats.push(p);
                j_mats.push(j);
                d_star.push(s.d_star);
                rel_flat.extend_from_slice(&s.rel);
            }
            let x_p = score_tensor(&p_mats.iter().collect::<Vec<_>>())?;
            let x_j = score_tensor(&j_mats.iter().collect::<Vec<_>>())?;
            let target_p = Tensor::from_vec(batch, 1, 1, d_star);
            let target_j = Tensor::from_vec(batch, joints, 1, rel_flat);

            let mut tape = Tape::new(&model.params);
            let xi_p = tape.input(x_p)?;
            let (dist_p, stats_p) = model.person.forward_train(&mut tape, xi_p)?;
            let est_p = tape.soft_argmax_window(dist_p, &person_depths, window)?;
            let loss_p = tape.l1_sum(est_p, &target_p)?;
            let xi_j = tape.input(x_j)?;
            let (dist_j, stats_j) = model.joint.forward_train(&mut tape, xi_j)?;
            let est_j = tape.soft_argmax_window(dist_j, &rel_depths, rel_depths.len())?;
            let loss_j = tape.l1_sum(est_j, &target_j)?;
            let loss = tape.add(loss_p, loss_j)?;

            let person_loss = tape.value(loss_p).data()[0] / batch as f64;
            let joint_loss = tape.value(loss_j).data()[0] / batch as f64;
            if !person_loss.is_finite() || !joint_loss.is_finite() {
                return Err(PipelineError::Diverged { step, last_checkpoint });
            }

            grads.zero();
            tape.backward(loss, &mut grads)?;
            if adam.step(&mut model.params, &grads).is_err() {
                return Err(PipelineError::Diverged { step, last_checkpoint });
            }
            model.person.apply_batch_stats(&stats_p);
            model.joint.apply_batch_stats(&stats_j);
            last_person = person_loss;
            last_joint = joint_loss;

            if step.is_multiple_of(config.train.val_every as u64) {
                val_mae = validation_mae(
                    &model,
                    dataset,
                    &frame_views,
                    &val_samples,
                    &config.sweep,
                    config.train.val_samples,
                )?;
            }
            if val_mae.is_nan() {
                writeln!(metrics, "{step},{person_loss},{joint_loss},")?;
            } else {
                writeln!(metrics, "{step},{person_loss},{joint_loss},{val_mae}")?;
            }

            if step.is_multiple_of(config.train.checkpoint_every as u64) {
                let path = out_dir.join(format!("checkpoint_{step:06}.ckpt"));
                model.save(&path, &checkpoint_meta(step))?;
                last_checkpoint = Some(path);
            }
        }
        let _ = epoch;
    }
    metrics.flush()?;

    let model_path = out_dir.join("model.ckpt");
    model.save(&model_path, &checkpoint_meta(step))?;
    val_mae = validation_mae(
        &model,
        dataset,
        &frame_views,
        &val_samples,
        &config.sweep,
        config.train.val_samples,
    )?;
    Ok(TrainReport {
        model_path,
        metrics_path,
        steps: step,
        final_person_loss: last_person,
        final_joint_loss: last_joint,
        final_val_mae: val_mae,
    })
}

/// One 3D pose estimated from a single target view.
#[derive(Clone, Debug)]
pub struct ViewEstimate {
    /// Target view index within the rig.
    pub view: usize,
    /// Index of the source 2D pose within that view's candidates.
    pub pose_index: usize,
    /// Regressed hip depth in the target camera, mm.
    pub person_depth: f64,
    /// Absolute per-joint depths in the target camera, mm.
    pub joint_depths: Vec<f64>,
    /// Back-projected world-frame pose.
    pub pose: Pose3D,
    /// Mean 2D detection confidence of the source pose.
    pub confidence: f64,
}

/// Estimates a 3D pose for every candidate 2D pose of one target view:
/// person-level sweep and regression, joint-level sweep anchored at the
/// regressed depth, then back-projection along each joint's pixel ray.
/// An empty target view yields an empty result.
pub fn infer_view(
    model: &Model,
    sweep: &SweepConfig,
    rig: &[CameraParams],
    views: &[Vec<Pose2D>],
    target: usize,
    mut counters: Option<&mut SweepCounters>,
) -> Result<Vec<ViewEstimate>, PipelineError> {
    sweep.validate()?;
    if views.len() != rig.len() {
        return Err(PipelineError::Data(format!(
            "{} observation sets for {} cameras",
            views.len(),
            rig.len()
        )));
    }
    if target >= rig.len() {
        return Err(PipelineError::Data(format!(
            "target view {target} outside rig of {}",
            rig.len()
        )));
    }
    let candidates = &views[target];
    if candidates.is_empty() {
        return Ok(Vec::new());
    }
    let person_planes = sweep.person_planes();
    let rel_offsets = sweep.rel_offsets();
    let window = model.person.config().window;
    let target_cam = &rig[target];
    let refs: Vec<(&CameraParams, &[Pose2D])> = views
        .iter()
        .enumerate()
        .filter(|&(v, _)| v != target)
        .map(|(v, poses)| (&rig[v], poses.as_slice()))
        .collect();

    let mut person_mats = Vec::with_capacity(candidates.len());
    for pose in candidates {
        person_mats.push(score_matrix(
            pose,
            target_cam,
            &refs,
            &person_planes,
            sweep.sigma,
            counters.as_deref_mut(),
        )?);
    }
    let person_dist =
        model.person.infer(&model.params, &person_mats.iter().collect::<Vec<_>>())?;
    let mut depths = Vec::with_capacity(candidates.len());
    for i in 0..candidates.len() {
        depths.push(local_soft_argmax(
            person_dist.row(i, 0),
            person_planes.depths(),
            window,
        )?);
    }

    let mut joint_mats = Vec::with_capacity(candidates.len());
    for (pose, &d_hat) in candidates.iter().zip(&depths) {
        joint_mats.push(relative_score_matrix(
            pose,
            d_hat,
            target_cam,
            &refs,
            &rel_offsets,
            sweep.sigma,
            counters.as_deref_mut(),
        )?);
    }
    let joint_dist =
        model.joint.infer(&model.params, &joint_mats.iter().collect::<Vec<_>>())?;

    let mut estimates = Vec::with_capacity(candidates.len());
    for (i, (pose, &d_hat)) in candidates.iter().zip(&depths).enumerate() {
        let mut rel = Vec::with_capacity(model.joints());
        for j in 0..model.joints() {
            rel.push(soft_argmax(joint_dist.row(i, j), rel_offsets.depths())?);
        }
        let joint_depths: Vec<f64> = absolute_joint_depths(d_hat, &rel)
            .into_iter()
            .map(|d| d.max(MIN_JOINT_DEPTH_MM))
            .collect();
        let joints: Vec<Point3D> = pose
            .joints()
            .iter()
            .zip(&joint_depths)
            .map(|(&px, &d)| back_project(target_cam, px, d))
            .collect::<Result<_, _>>()?;
        estimates.push(ViewEstimate {
            view: target,
            pose_index: i,
            person_depth: d_hat,
            joint_depths,
            pose: Pose3D::new(joints),
            confidence: pose.mean_confidence(),
        });
    }
    Ok(estimates)
}

/// One fused person: the joint-wise mean over its member estimates, the
/// mean of their confidences, and the (view, pose index) provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusedPose {
    pub pose: Pose3D,
    pub confidence: f64,
    /// Contributing (view, pose index) pairs, sorted.
    pub members: Vec<(usize, usize)>,
}

/// Connected components under "any pair within threshold" (single
/// linkage), as sorted member-index lists ordered by smallest member.
pub(crate) fn single_linkage(points: &[Point3D], threshold: f64) -> Vec<Vec<usize>> {
    let n = points.len();
    let mut component = vec![usize::MAX; n];
    let mut next = 0usize;
    for start in 0..n {
        if component[start] != usize::MAX {
            continue;
        }
        let id = next;
        next += 1;
        let mut stack = vec![start];
        component[start] = id;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                if component[j] == usize::MAX && points[i].distance(points[j]) <= threshold {
                    component[j] = id;
                    stack.push(j);
                }
            }
        }
    }
    let mut groups = vec![Vec::new(); next];
    for (i, &c) in component.iter().enumerate() {
        groups[c].push(i);
    }
    groups
}

fn fused_from_members(
    estimates: &[&ViewEstimate],
    mut members: Vec<(usize, usize)>,
) -> FusedPose {
    members.sort_unstable();
    let by_key = |key: (usize, usize)| {
        estimates
            .iter()
            .find(|e| (e.view, e.pose_index) == key)
            .expect("member key traces to an estimate")
    };
    let joints = estimates[0].pose.len();
    let mut sums = vec![(0.0f64, 0.0f64, 0.0f64); joints];
    let mut conf = 0.0;
    for &key in &members {
        let est = by_key(key);
        conf += est.confidence;
        for (acc, j) in sums.iter_mut().zip(&est.pose.joints) {
            acc.0 += j.x;
            acc.1 += j.y;
            acc.2 += j.z;
        }
    }
    let n = members.len() as f64;
    FusedPose {
        pose: Pose3D::new(
            sums.into_iter()
                .map(|(x, y, z)| Point3D::new(x / n, y / n, z / n))
                .collect(),
        ),
        confidence: conf / n,
        members,
    }
}

/// Merges per-view estimates of the same person: single-linkage
/// clustering on hip-to-hip distance, then joint-wise averaging per
/// cluster. Averaged hips can land closer together than the raw members
/// were, so a post-pass keeps merging the closest violating pair until
/// no two outputs are within the threshold. The result is independent of
/// the order in which estimates are given: members are identified by
/// their (view, pose index) labels and all reductions run in sorted
/// label order.
pub fn fuse_views(estimates: &[ViewEstimate], threshold_mm: f64) -> Vec<FusedPose> {
    assert!(threshold_mm > 0.0, "fusion threshold must be positive");
    if estimates.is_empty() {
        return Vec::new();
    }
    // Canonical processing order, independent of input order.
    let mut sorted: Vec<&ViewEstimate> = estimates.iter().collect();
    sorted.sort_unstable_by_key(|e| (e.view, e.pose_index));
    let hips: Vec<Point3D> = sorted.iter().map(|e| e.pose.root()).collect();

    let mut fused: Vec<FusedPose> = single_linkage(&hips, threshold_mm)
        .into_iter()
        .map(|group| {
            let members = group
                .into_iter()
                .map(|i| (sorted[i].view, sorted[i].pose_index))
                .collect();
            fused_from_members(&sorted, members)
        })
        .collect();

    loop {
        let mut closest: Option<(usize, usize, f64)> = None;
        for a in 0..fused.len() {
            for b in a + 1..fused.len() {
                let d = fused[a].pose.root().distance(fused[b].pose.root());
                if d <= threshold_mm && closest.is_none_or(|(_, _, best)| d < best) {
                    closest = Some((a, b, d));
                }
            }
        }
        let Some((a, b, _)) = closest else { break };
        let mut members = fused[a].members.clone();
        members.extend_from_slice(&fused[b].members);
        let merged = fused_from_members(&sorted, members);
        fused.remove(b);
        fused[a] = merged;
    }
    fused.sort_unstable_by_key(|f| f.members[0]);
    fused
}

/// Everything inferred from one frame: the raw per-view estimates and
/// the fused persons.
#[derive(Clone, Debug)]
pub struct FrameInference {
    pub view_estimates: Vec<ViewEstimate>,
    pub fused: Vec<FusedPose>,
}

/// Runs [`infer_view`] with every camera as the target in turn and fuses
/// the results.
pub fn infer_frame(
    model: &Model,
    sweep: &SweepConfig,
    rig: &[CameraParams],
    views: &[Vec<Pose2D>],
    fusion_threshold_mm: f64,
    mut counters: Option<&mut SweepCounters>,
) -> Result<FrameInference, PipelineError> {
    let mut view_estimates = Vec::new();
    for target in 0..rig.len() {
        view_estimates.extend(infer_view(
            model,
            sweep,
            rig,
            views,
            target,
            counters.as_deref_mut(),
        )?);
    }
    let fused = fuse_views(&view_estimates, fusion_threshold_mm);
    Ok(FrameInference { view_estimates, fused })
}

/// Serializable per-frame result: fused persons plus the per-view hip
/// depths (the inputs to depth-recall evaluation).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameResult {
    pub fused: Vec<FusedPose>,
    /// Estimated hip depths per view, in candidate order.
    pub person_depths: Vec<Vec<f64>>,
}

impl FrameInference {
    pub fn to_result(&self, n_views: usize) -> FrameResult {
        let mut person_depths = vec![Vec::new(); n_views];
        for est in &self.view_estimates {
            person_depths[est.view].push(est.person_depth);
        }
        FrameResult { fused: self.fused.clone(), person_depths }
    }
}

/// Converts ground truth into the results shape: each true person as a
/// confidence-1 estimate, and per-view hip depths straight from the
/// scene. Feeding this to evaluation must yield perfect scores; it
/// exists as a sanity check for the metric plumbing.
pub fn ground_truth_results(dataset: &Dataset) -> Vec<FrameResult> {
    dataset
        .frames
        .iter()
        .enumerate()
        .map(|(fi, frame)| {
            let rig = frame_rig(dataset, fi);
            let fused = frame
                .persons
                .iter()
                .map(|p| FusedPose {
                    pose: p.clone(),
                    confidence: 1.0,
                    members: Vec::new(),
                })
                .collect();
            let person_depths = rig
                .iter()
                .map(|cam| {
                    crate::synth::ground_truth_depths(&frame.persons, cam)
                        .into_iter()
                        .map(|d| d.person_depth)
                        .collect()
                })
                .collect();
            FrameResult { fused, person_depths }
        })
        .collect()
}

/// Pairs inference results with their dataset's ground truth for pose
/// metrics (PCP, MPJPE, AP).
pub fn eval_frames(
    dataset: &Dataset,
    results: &[FrameResult],
) -> Result<Vec<crate::eval::EvalFrame>, PipelineError> {
    if results.len() != dataset.frames.len() {
        return Err(PipelineError::Data(format!(
            "{} result frames for {} dataset frames",
            results.len(),
            dataset.frames.len()
        )));
    }
    Ok(dataset
        .frames
        .iter()
        .zip(results)
        .map(|(frame, result)| crate::eval::EvalFrame {
            estimates: result
                .fused
                .iter()
                .map(|f| crate::eval::ScoredPose {
                    pose: f.pose.clone(),
                    confidence: f.confidence,
                })
                .collect(),
            ground_truth: frame.persons.clone(),
        })
        .collect())
}

/// Pairs per-view estimated hip depths with the true hip depths of the
/// persons visible in that view, for depth-recall curves. One group per
/// (frame, view).
pub fn depth_groups(
    dataset: &Dataset,
    results: &[FrameResult],
) -> Result<Vec<crate::eval::DepthGroup>, PipelineError> {
    if results.len() != dataset.frames.len() {
        return Err(PipelineError::Data(format!(
            "{} result frames for {} dataset frames",
            results.len(),
            dataset.frames.len()
        )));
    }
    let mut groups = Vec::new();
    for (fi, (frame, result)) in dataset.frames.iter().zip(results).enumerate() {
        let rig = frame_rig(dataset, fi);
        if result.person_depths.len() != rig.len() {
            return Err(PipelineError::Data(format!(
                "frame {fi}: {} depth lists for {} cameras",
                result.person_depths.len(),
                rig.len()
            )));
        }
        for (cam, estimated) in rig.iter().zip(&result.person_depths) {
            let truth = crate::synth::ground_truth_depths(&frame.persons, cam)
                .into_iter()
                .map(|d| d.person_depth)
                .collect();
            groups.push(crate::eval::DepthGroup { estimated: estimated.clone(), truth });
        }
    }
    Ok(groups)
}

/// Smallest power-of-two dilation ladder whose receptive field covers
/// half the relative plane count, mirroring the default [1, 2, 4, 8] at
/// 64 planes.
pub fn dilation_ladder(kernel: usize, rel_planes: usize) -> Vec<usize> {
    assert!(kernel >= 2, "kernel must span more than one tap");
    let field = |dils: &[usize]| 1 + (kernel - 1) * (1 + dils.iter().sum::<usize>());
    let mut dils = vec![1usize];
    while field(&dils) < rel_planes / 2 {
        dils.push(dils.last().unwrap() * 2);
    }
    dils
}

/// Resizes the plane-count-dependent knobs for a person-level plane
/// ablation: the regression window stays a quarter of the sweep.
pub fn config_for_planes(base: &RunConfig, planes: usize) -> RunConfig {
    let mut config = base.clone();
    config.sweep.planes = planes;
    config.person_net.window = (planes / 4).max(1);
    config
}

/// Resizes the joint network for a relative-plane ablation so its
/// receptive field keeps covering half the sweep.
pub fn config_for_rel_planes(base: &RunConfig, rel_planes: usize) -> RunConfig {
    let mut config = base.clone();
    config.sweep.rel_planes = rel_planes;
    config.joint_net.dilations = dilation_ladder(config.joint_net.kernel, rel_planes);
    config
}

/// Restricts a dataset to its first `cameras` views: rig, per-frame
/// rigs, and observations alike. Ground-truth persons are untouched.
pub fn camera_subset(dataset: &Dataset, cameras: usize) -> Result<Dataset, PipelineError> {
    if cameras < 2 || cameras > dataset.rig.len() {
        return Err(PipelineError::Data(format!(
            "camera subset {cameras} outside 2..={}",
            dataset.rig.len()
        )));
    }
    Ok(Dataset {
        joints: dataset.joints,
        rig: dataset.rig[..cameras].to_vec(),
        frames: dataset
            .frames
            .iter()
            .map(|f| SceneFrame {
                persons: f.persons.clone(),
                views: f.views[..cameras].to_vec(),
                rig: f.rig.as_ref().map(|r| r[..cameras].to_vec()),
            })
            .collect(),
    })
}

const RESULTS_KIND: &str = "depthsweep-results";

/// Writes inference results as JSON lines: a header object, then one
/// frame per line.
pub fn write_results(
    path: impl AsRef<Path>,
    frames: &[FrameResult],
    config_hash: &str,
) -> Result<(), PipelineError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let header = json!({
        "kind": RESULTS_KIND,
        "version": 1,
        "config_hash": config_hash,
        "frames": frames.len(),
    });
    writeln!(out, "{header}")?;
    for frame in frames {
        writeln!(out, "{}", serde_json::to_string(frame).expect("result serializes"))?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a results file written by [`write_results`], returning the
/// frames and the recorded config hash.
pub fn read_results(path: impl AsRef<Path>) -> Result<(Vec<FrameResult>, String), PipelineError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header: serde_json::Value = lines
        .next()
        .ok_or_else(|| PipelineError::Data("empty results file".into()))
        .and_then(|l| {
            serde_json::from_str(l)
                .map_err(|e| PipelineError::Data(format!("results header: {e}")))
        })?;
    if header.get("kind").and_then(|k| k.as_str()) != Some(RESULTS_KIND) {
        return Err(PipelineError::Data(format!(
            "not a results file: kind {:?}",
            header.get("kind")
        )));
    }
    let declared = header
        .get("frames")
        .and_then(|f| f.as_u64())
        .ok_or_else(|| PipelineError::Data("results header misses frame count".into()))?
        as usize;
    let config_hash = header
        .get("config_hash")
        .and_then(|h| h.as_str())
        .unwrap_or_default()
        .to_string();
    let mut frames = Vec::with_capacity(declared);
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        frames.push(
            serde_json::from_str(line)
                .map_err(|e| PipelineError::Data(format!("frame {}: {e}", frames.len())))?,
        );
    }
    if frames.len() != declared {
        return Err(PipelineError::Data(format!(
            "results header declares {declared} frames, file holds {}",
            frames.len()
        )));
    }
    Ok((frames, config_hash))
}
