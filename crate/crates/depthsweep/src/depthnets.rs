//! Depth regression networks on top of plane-sweep scores.
//!
//! Two small 1-D convolutional networks turn score matrices into depth
//! distributions: a person-level network that pools all joints into one
//! distribution over the absolute depth planes, and a joint-level network
//! that emits one distribution per joint over the relative offset planes.
//! A windowed soft-argmax reduces each distribution to a depth estimate,
//! and L1 losses against ground truth drive training. [`Model`] bundles
//! both networks with their shared parameter arena and persists them as a
//! self-describing checkpoint.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::nn::tape::window_soft_argmax_row;
use crate::nn::{
    checkpoint, BatchNorm1D, Conv1D, NnError, Params, Tape, Tensor, VarId,
};
use crate::sweep::ScoreMatrix;

#[derive(Debug, Error)]
pub enum DepthNetsError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("shape: {0}")]
    Shape(String),
    #[error("config: {0}")]
    Config(String),
    #[error("distribution: {0}")]
    Distribution(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// Stacks score matrices into a network input tensor of shape
/// (batch, joints, planes). Score matrices store planes as rows, so each
/// one is transposed: channel j holds joint j's score profile over depth.
pub fn score_tensor(matrices: &[&ScoreMatrix]) -> Result<Tensor, DepthNetsError> {
    let first = matrices
        .first()
        .ok_or_else(|| DepthNetsError::Shape("empty score batch".into()))?;
    let (planes, joints) = (first.planes(), first.joints());
    let mut t = Tensor::zeros(matrices.len(), joints, planes);
    for (b, m) in matrices.iter().enumerate() {
        if m.planes() != planes || m.joints() != joints {
            return Err(DepthNetsError::Shape(format!(
                "score matrix {b} is {}x{}, batch started as {planes}x{joints}",
                m.planes(),
                m.joints()
            )));
        }
        for j in 0..joints {
            for d in 0..planes {
                t.set(b, j, d, m.get(d, j));
            }
        }
    }
    Ok(t)
}

/// A batch of per-channel depth distributions: shape (batch, channels,
/// planes) where every (batch, channel) row is nonnegative and sums to
/// one within [`DepthDistribution::NORM_TOL`]. Construction validates.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthDistribution {
    values: Tensor,
}

impl DepthDistribution {
    pub const NORM_TOL: f64 = 1e-9;

    pub fn from_tensor(values: Tensor) -> Result<Self, DepthNetsError> {
        let (b, c, _) = values.shape();
        for bb in 0..b {
            for ch in 0..c {
                let row = values.row(bb, ch);
                let mut sum = 0.0;
                for &v in row {
                    if v.is_nan() || v < 0.0 {
                        return Err(DepthNetsError::Distribution(format!(
                            "negative or non-finite mass {v} in row ({bb}, {ch})"
                        )));
                    }
                    sum += v;
                }
                if (sum - 1.0).abs() > Self::NORM_TOL {
                    return Err(DepthNetsError::Distribution(format!(
                        "row ({bb}, {ch}) sums to {sum}, expected 1"
                    )));
                }
            }
        }
        Ok(Self { values })
    }

    pub fn tensor(&self) -> &Tensor {
        &self.values
    }

    pub fn batch(&self) -> usize {
        self.values.shape().0
    }

    pub fn channels(&self) -> usize {
        self.values.shape().1
    }

    pub fn planes(&self) -> usize {
        self.values.shape().2
    }

    /// Probability row for one (batch, channel) pair.
    pub fn row(&self, b: usize, c: usize) -> &[f64] {
        self.values.row(b, c)
    }
}

/// Windowed soft-argmax: finds the `window`-wide contiguous span with
/// maximal probability mass (ties pick the lowest start) and returns the
/// mass-weighted mean depth inside it. With `window == depths.len()` this
/// is the standard soft-argmax, the full expectation of depth. The ratio
/// form makes the result invariant to positive rescaling of `dist`.
pub fn local_soft_argmax(
    dist: &[f64],
    depths: &[f64],
    window: usize,
) -> Result<f64, DepthNetsError> {
    if dist.len() != depths.len() {
        return Err(DepthNetsError::Shape(format!(
            "{} probabilities for {} depths",
            dist.len(),
            depths.len()
        )));
    }
    if window == 0 || window > dist.len() {
        return Err(DepthNetsError::Shape(format!(
            "window {window} outside [1, {}]",
            dist.len()
        )));
    }
    let (start, mass, out) = window_soft_argmax_row(dist, depths, window);
    if mass <= 0.0 || !out.is_finite() {
        return Err(DepthNetsError::Distribution(
            "no probability mass in the selected window".into(),
        ));
    }
    // The exact value is a convex combination of the window's depths; the
    // ratio form can leave that span by an ulp, so pin it back inside.
    let (a, b) = (depths[start], depths[start + window - 1]);
    Ok(out.clamp(a.min(b), a.max(b)))
}

/// Standard soft-argmax: expectation of depth under the distribution.
pub fn soft_argmax(dist: &[f64], depths: &[f64]) -> Result<f64, DepthNetsError> {
    local_soft_argmax(dist, depths, dist.len())
}

/// L1 loss summed over a batch of scalar depth estimates (millimetres).
pub fn person_loss(estimates: &[f64], truths: &[f64]) -> f64 {
    assert_eq!(estimates.len(), truths.len(), "batch sizes must match");
    estimates.iter().zip(truths).map(|(&e, &t)| (e - t).abs()).sum()
}

/// L1 loss summed over a batch of per-joint depth estimates.
pub fn joint_loss(estimates: &[Vec<f64>], truths: &[Vec<f64>]) -> f64 {
    assert_eq!(estimates.len(), truths.len(), "batch sizes must match");
    estimates
        .iter()
        .zip(truths)
        .map(|(e, t)| {
            assert_eq!(e.len(), t.len(), "joint counts must match");
            e.iter().zip(t).map(|(&a, &b)| (a - b).abs()).sum::<f64>()
        })
        .sum()
}

/// Combines a person-level depth with per-joint relative offsets into
/// absolute per-joint depths: shifting the person depth by any constant
/// shifts every output by that constant.
pub fn absolute_joint_depths(person_depth: f64, relative: &[f64]) -> Vec<f64> {
    relative.iter().map(|r| person_depth + r).collect()
}

/// Per-layer batch statistics collected during a training forward pass,
/// in network traversal order. Applying them to the network folds each
/// batch's moments into the running statistics; gradient checking skips
/// the apply step so the closure stays side-effect free.
pub type BnStats = Vec<(Vec<f64>, Vec<f64>)>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PersonNetConfig {
    /// Hidden channel width.
    pub hidden: usize,
    /// Number of two-convolution residual blocks.
    pub blocks: usize,
    /// Convolution kernel size (odd).
    pub kernel: usize,
    /// Soft-argmax window width, in planes.
    pub window: usize,
}

impl Default for PersonNetConfig {
    // Width sized for single-thread CPU inference; 32 channels keeps a
    // 5-view, 4-person frame within the real-time budget with margin.
    fn default() -> Self {
        Self { hidden: 32, blocks: 2, kernel: 3, window: 16 }
    }
}

impl PersonNetConfig {
    /// Validates against the absolute plane count the network will see.
    pub fn validate(&self, planes: usize) -> Result<(), DepthNetsError> {
        if self.hidden == 0 || self.blocks == 0 {
            return Err(DepthNetsError::Config(
                "hidden width and block count must be positive".into(),
            ));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(DepthNetsError::Config(format!(
                "kernel {} must be odd to preserve length",
                self.kernel
            )));
        }
        if self.window == 0 || self.window > planes {
            return Err(DepthNetsError::Config(format!(
                "window {} outside [1, {planes}]",
                self.window
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JointNetConfig {
    /// Hidden channel width.
    pub hidden: usize,
    /// Dilation factors, one residual block per entry.
    pub dilations: Vec<usize>,
    /// Convolution kernel size (odd).
    pub kernel: usize,
}

impl Default for JointNetConfig {
    // Same CPU-sized width as the person network; the dilation ladder
    // keeps the receptive field above half the default plane count.
    fn default() -> Self {
        Self { hidden: 32, dilations: vec![1, 2, 4, 8], kernel: 3 }
    }
}

impl JointNetConfig {
    /// Receptive field along the plane axis: the input convolution plus
    /// one dilated convolution per block.
    pub fn receptive_field(&self) -> usize {
        1 + (self.kernel - 1) * (1 + self.dilations.iter().sum::<usize>())
    }

    /// Validates against the relative plane count; the stacked dilations
    /// must cover at least half the planes so the peak can draw on
    /// context from a meaningful share of the offset range.
    pub fn validate(&self, rel_planes: usize) -> Result<(), DepthNetsError> {
        if self.hidden == 0 {
            return Err(DepthNetsError::Config("hidden width must be positive".into()));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(DepthNetsError::Config(format!(
                "kernel {} must be odd to preserve length",
                self.kernel
            )));
        }
        if self.dilations.is_empty() || self.dilations.contains(&0) {
            return Err(DepthNetsError::Config(
                "dilations must be a non-empty list of positive factors".into(),
            ));
        }
        let rf = self.receptive_field();
        if rf < rel_planes / 2 {
            return Err(DepthNetsError::Config(format!(
                "receptive field {rf} below half the relative plane count {rel_planes}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug)]
struct ResidualBlock {
    conv1: Conv1D,
    bn1: BatchNorm1D,
    conv2: Conv1D,
    bn2: BatchNorm1D,
}

/// Person-level depth network: an input convolution lifting the per-joint
/// score profiles to `hidden` channels, residual blocks of two
/// convolution + batch norm + ReLU stages, and a 1x1 head reducing to a
/// single channel whose softmax over planes is the depth distribution.
#[derive(Debug)]
pub struct PersonNet {
    config: PersonNetConfig,
    joints: usize,
    conv_in: Conv1D,
    blocks: Vec<ResidualBlock>,
    conv_out: Conv1D,
}

impl PersonNet {
    pub fn new<R: Rng>(
        params: &mut Params,
        name: &str,
        joints: usize,
        config: PersonNetConfig,
        rng: &mut R,
    ) -> Self {
        let h = config.hidden;
        let k = config.kernel;
        let conv_in = Conv1D::new(params, &format!("{name}.conv_in"), joints, h, k, 1, rng);
        let blocks = (0..config.blocks)
            .map(|i| {
                let p = format!("{name}.block{i}");
                ResidualBlock {
                    conv1: Conv1D::new(params, &format!("{p}.conv1"), h, h, k, 1, rng),
                    bn1: BatchNorm1D::new(params, &format!("{p}.bn1"), h),
                    conv2: Conv1D::new(params, &format!("{p}.conv2"), h, h, k, 1, rng),
                    bn2: BatchNorm1D::new(params, &format!("{p}.bn2"), h),
                }
            })
            .collect();
        let conv_out = Conv1D::new(params, &format!("{name}.conv_out"), h, 1, 1, 1, rng);
        Self { config, joints, conv_in, blocks, conv_out }
    }

    pub fn config(&self) -> &PersonNetConfig {
        &self.config
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    /// Training forward pass: batch-statistics normalization. Returns the
    /// softmax output and the batch moments to fold into running
    /// statistics via [`PersonNet::apply_batch_stats`] once the step is
    /// accepted.
    pub fn forward_train(
        &self,
        tape: &mut Tape,
        x: VarId,
    ) -> Result<(VarId, BnStats), DepthNetsError> {
        let mut stats = BnStats::new();
        let mut h = tape.conv1d(x, &self.conv_in)?;
        for block in &self.blocks {
            let skip = h;
            let t = tape.conv1d(h, &block.conv1)?;
            let b1 = tape.batch_norm_train(t, &block.bn1)?;
            stats.push((b1.mean, b1.var));
            let t = tape.relu(b1.out)?;
            let t = tape.conv1d(t, &block.conv2)?;
            let b2 = tape.batch_norm_train(t, &block.bn2)?;
            stats.push((b2.mean, b2.var));
            let t = tape.relu(b2.out)?;
            h = tape.add(skip, t)?;
        }
        let logits = tape.conv1d(h, &self.conv_out)?;
        Ok((tape.softmax_len(logits)?, stats))
    }

    /// Inference forward pass: running-statistics normalization.
    pub fn forward_eval(&self, tape: &mut Tape, x: VarId) -> Result<VarId, DepthNetsError> {
        let mut h = tape.conv1d(x, &self.conv_in)?;
        for block in &self.blocks {
            let skip = h;
            let t = tape.conv1d(h, &block.conv1)?;
            let t = tape.batch_norm_eval(t, &block.bn1)?;
            let t = tape.relu(t)?;
            let t = tape.conv1d(t, &block.conv2)?;
            let t = tape.batch_norm_eval(t, &block.bn2)?;
            let t = tape.relu(t)?;
            h = tape.add(skip, t)?;
        }
        let logits = tape.conv1d(h, &self.conv_out)?;
        Ok(tape.softmax_len(logits)?)
    }

    /// Folds one training pass's batch moments into running statistics.
    pub fn apply_batch_stats(&mut self, stats: &BnStats) {
        assert_eq!(stats.len(), 2 * self.blocks.len(), "one entry per batch norm layer");
        for (block, pair) in self.blocks.iter_mut().zip(stats.chunks_exact(2)) {
            block.bn1.update_running(&pair[0].0, &pair[0].1);
            block.bn2.update_running(&pair[1].0, &pair[1].1);
        }
    }

    /// Runs eval-mode inference on a batch of score matrices and returns
    /// one depth distribution per matrix (channel count 1).
    pub fn infer(
        &self,
        params: &Params,
        matrices: &[&ScoreMatrix],
    ) -> Result<DepthDistribution, DepthNetsError> {
        let x = score_tensor(matrices)?;
        if x.shape().1 != self.joints {
            return Err(DepthNetsError::Shape(format!(
                "scores carry {} joints, network was built for {}",
                x.shape().1,
                self.joints
            )));
        }
        let mut tape = Tape::new(params);
        let xi = tape.input(x)?;
        let y = self.forward_eval(&mut tape, xi)?;
        DepthDistribution::from_tensor(tape.value(y).clone())
    }

    fn bn_layers_mut(&mut self) -> Vec<&mut BatchNorm1D> {
        self.blocks
            .iter_mut()
            .flat_map(|b| [&mut b.bn1, &mut b.bn2])
            .collect()
    }

    fn bn_layers(&self) -> Vec<&BatchNorm1D> {
        self.blocks.iter().flat_map(|b| [&b.bn1, &b.bn2]).collect()
    }
}

#[derive(Debug)]
struct DilatedBlock {
    conv: Conv1D,
    bn: BatchNorm1D,
}

/// Joint-level depth network over the relative offset planes: an input
/// convolution, one residual dilated block per configured dilation so the
/// receptive field grows geometrically, and a 1x1 head back to one
/// channel per joint, each softmax-normalized over the planes.
#[derive(Debug)]
pub struct JointNet {
    config: JointNetConfig,
    joints: usize,
    conv_in: Conv1D,
    blocks: Vec<DilatedBlock>,
    conv_out: Conv1D,
}

impl JointNet {
    pub fn new<R: Rng>(
        params: &mut Params,
        name: &str,
        joints: usize,
        config: JointNetConfig,
        rng: &mut R,
    ) -> Self {
        let h = config.hidden;
        let k = config.kernel;
        let conv_in = Conv1D::new(params, &format!("{name}.conv_in"), joints, h, k, 1, rng);
        let blocks = config
            .dilations
            .iter()
            .enumerate()
            .map(|(i, &dil)| {
                let p = format!("{name}.block{i}");
                DilatedBlock {
                    conv: Conv1D::new(params, &format!("{p}.conv"), h, h, k, dil, rng),
                    bn: BatchNorm1D::new(params, &format!("{p}.bn"), h),
                }
            })
            .collect();
        let conv_out = Conv1D::new(params, &format!("{name}.conv_out"), h, joints, 1, 1, rng);
        Self { config, joints, conv_in, blocks, conv_out }
    }

    pub fn config(&self) -> &JointNetConfig {
        &self.config
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    /// Training forward pass; see [`PersonNet::forward_train`].
    pub fn forward_train(
        &self,
        tape: &mut Tape,
        x: VarId,
    ) -> Result<(VarId, BnStats), DepthNetsError> {
        let mut stats = BnStats::new();
        let mut h = tape.conv1d(x, &self.conv_in)?;
        for block in &self.blocks {
            let skip = h;
            let t = tape.conv1d(h, &block.conv)?;
            let b = tape.batch_norm_train(t, &block.bn)?;
            stats.push((b.mean, b.var));
            let t = tape.relu(b.out)?;
            h = tape.add(skip, t)?;
        }
        let logits = tape.conv1d(h, &self.conv_out)?;
        Ok((tape.softmax_len(logits)?, stats))
    }

    /// Inference forward pass: running-statistics normalization.
    pub fn forward_eval(&self, tape: &mut Tape, x: VarId) -> Result<VarId, DepthNetsError> {
        let mut h = tape.conv1d(x, &self.conv_in)?;
        for block in &self.blocks {
            let skip = h;
            let t = tape.conv1d(h, &block.conv)?;
            let t = tape.batch_norm_eval(t, &block.bn)?;
            let t = tape.relu(t)?;
            h = tape.add(skip, t)?;
        }
        let logits = tape.conv1d(h, &self.conv_out)?;
        Ok(tape.softmax_len(logits)?)
    }

    /// Folds one training pass's batch moments into running statistics.
    pub fn apply_batch_stats(&mut self, stats: &BnStats) {
        assert_eq!(stats.len(), self.blocks.len(), "one entry per batch norm layer");
        for (block, (mean, var)) in self.blocks.iter_mut().zip(stats) {
            block.bn.update_running(mean, var);
        }
    }

    /// Runs eval-mode inference on a batch of relative score matrices and
    /// returns per-joint depth distributions (one channel per joint).
    pub fn infer(
        &self,
        params: &Params,
        matrices: &[&ScoreMatrix],
    ) -> Result<DepthDistribution, DepthNetsError> {
        let x = score_tensor(matrices)?;
        if x.shape().1 != self.joints {
            return Err(DepthNetsError::Shape(format!(
                "scores carry {} joints, network was built for {}",
                x.shape().1,
                self.joints
            )));
        }
        let mut tape = Tape::new(params);
        let xi = tape.input(x)?;
        let y = self.forward_eval(&mut tape, xi)?;
        DepthDistribution::from_tensor(tape.value(y).clone())
    }

    fn bn_layers_mut(&mut self) -> Vec<&mut BatchNorm1D> {
        self.blocks.iter_mut().map(|b| &mut b.bn).collect()
    }

    fn bn_layers(&self) -> Vec<&BatchNorm1D> {
        self.blocks.iter().map(|b| &b.bn).collect()
    }
}

const CHECKPOINT_KIND: &str = "depthsweep-model";

/// Both depth networks sharing one parameter arena, as trained and
/// persisted together. `planes` and `rel_planes` record the plane counts
/// the configuration was validated against.
#[derive(Debug)]
pub struct Model {
    pub params: Params,
    pub person: PersonNet,
    pub joint: JointNet,
    joints: usize,
    planes: usize,
    rel_planes: usize,
}

impl Model {
    pub fn new(
        joints: usize,
        planes: usize,
        rel_planes: usize,
        person_config: PersonNetConfig,
        joint_config: JointNetConfig,
        seed: u64,
    ) -> Result<Self, DepthNetsError> {
        if joints == 0 {
            return Err(DepthNetsError::Config("joint count must be positive".into()));
        }
        person_config.validate(planes)?;
        joint_config.validate(rel_planes)?;
        let mut params = Params::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let person = PersonNet::new(&mut params, "person", joints, person_config, &mut rng);
        let joint = JointNet::new(&mut params, "joint", joints, joint_config, &mut rng);
        Ok(Self { params, person, joint, joints, planes, rel_planes })
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn planes(&self) -> usize {
        self.planes
    }

    pub fn rel_planes(&self) -> usize {
        self.rel_planes
    }

    /// Writes a self-describing checkpoint: architecture and `extra` in
    /// the metadata, every parameter and batch norm running statistic as
    /// a named record. Loading reproduces the model bit for bit.
    pub fn save(&self, path: &Path, extra: &serde_json::Value) -> Result<(), DepthNetsError> {
        let meta = json!({
            "kind": CHECKPOINT_KIND,
            "joints": self.joints,
            "planes": self.planes,
            "rel_planes": self.rel_planes,
            "person": self.person.config(),
            "joint": self.joint.config(),
            "extra": extra,
        });
        let mut named: Vec<(String, &[f64])> = self
            .params
            .ids()
            .map(|id| (self.params.name(id).to_string(), self.params.data(id)))
            .collect();
        for bn in self.person.bn_layers().into_iter().chain(self.joint.bn_layers()) {
            named.push((format!("{}.running_mean", bn.name()), bn.running_mean()));
            named.push((format!("{}.running_var", bn.name()), bn.running_var()));
        }
        let records: Vec<(&str, &[f64])> =
            named.iter().map(|(n, d)| (n.as_str(), *d)).collect();
        checkpoint::save(path, &meta, &records)?;
        Ok(())
    }

    /// Rebuilds a model from a checkpoint, returning it along with the
    /// caller metadata stored at save time. Every record must map onto
    /// the rebuilt architecture and every parameter must be covered.
    pub fn load(path: &Path) -> Result<(Self, serde_json::Value), DepthNetsError> {
        let (meta, records) = checkpoint::load(path)?;
        if meta.get("kind").and_then(|k| k.as_str()) != Some(CHECKPOINT_KIND) {
            return Err(DepthNetsError::Checkpoint(format!(
                "not a model checkpoint: kind {:?}",
                meta.get("kind")
            )));
        }
        let field = |name: &str| -> Result<usize, DepthNetsError> {
            meta.get(name)
                .and_then(|v| v.as_u64())
                .map(|v| v as usize)
                .ok_or_else(|| {
                    DepthNetsError::Checkpoint(format!("metadata misses integer field {name}"))
                })
        };
        let joints = field("joints")?;
        let planes = field("planes")?;
        let rel_planes = field("rel_planes")?;
        let config = |name: &str| -> Result<serde_json::Value, DepthNetsError> {
            meta.get(name).cloned().ok_or_else(|| {
                DepthNetsError::Checkpoint(format!("metadata misses config field {name}"))
            })
        };
        let person_config: PersonNetConfig = serde_json::from_value(config("person")?)
            .map_err(|e| DepthNetsError::Checkpoint(format!("person config: {e}")))?;
        let joint_config: JointNetConfig = serde_json::from_value(config("joint")?)
            .map_err(|e| DepthNetsError::Checkpoint(format!("joint config: {e}")))?;
        let mut model =
            Self::new(joints, planes, rel_planes, person_config, joint_config, 0)?;

        let mut filled = vec![false; model.params.len()];
        let mut running: std::collections::HashMap<String, Vec<f64>> =
            std::collections::HashMap::new();
        for record in &records {
            if let Some(id) = model.params.id_of(&record.name) {
                let slot = model.params.data_mut(id);
                if slot.len() != record.values.len() {
                    return Err(DepthNetsError::Checkpoint(format!(
                        "record {} holds {} values, parameter wants {}",
                        record.name,
                        record.values.len(),
                        slot.len()
                    )));
                }
                slot.copy_from_slice(&record.values);
                filled[id.0] = true;
            } else if record.name.ends_with(".running_mean")
                || record.name.ends_with(".running_var")
            {
                running.insert(record.name.clone(), record.values.clone());
            } else {
                return Err(DepthNetsError::Checkpoint(format!(
                    "record {} matches no parameter or running statistic",
                    record.name
                )));
            }
        }
        for id in model.params.ids() {
            if !filled[id.0] {
                return Err(DepthNetsError::Checkpoint(format!(
                    "checkpoint misses parameter {}",
                    model.params.name(id)
                )));
            }
        }
        for bn in model
            .person
            .bn_layers_mut()
            .into_iter()
            .chain(model.joint.bn_layers_mut())
        {
            let take = |suffix: &str, map: &mut std::collections::HashMap<String, Vec<f64>>| {
                map.remove(&format!("{}.{suffix}", bn.name())).ok_or_else(|| {
                    DepthNetsError::Checkpoint(format!(
                        "checkpoint misses {}.{suffix}",
                        bn.name()
                    ))
                })
            };
            let mean = take("running_mean", &mut running)?;
            let var = take("running_var", &mut running)?;
            if mean.len() != bn.channels() || var.len() != bn.channels() {
                return Err(DepthNetsError::Checkpoint(format!(
                    "running statistics for {} have wrong channel count",
                    bn.name()
                )));
            }
            bn.set_running(mean, var);
        }
        if let Some(name) = running.keys().next() {
            return Err(DepthNetsError::Checkpoint(format!(
                "record {name} matches no batch norm layer"
            )));
        }
        let extra = meta.get("extra").cloned().unwrap_or(serde_json::Value::Null);
        Ok((model, extra))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::DepthPlaneSet;
    use crate::nn::gradcheck::{check_param, CoordSelection, DEFAULT_STEP};
    use crate::nn::{Grads, Tape};
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use proptest::prelude::*;
    use rand::Rng;

    fn random_scores(planes: usize, joints: usize, seed: u64) -> ScoreMatrix {
        let set = DepthPlaneSet::new(500.0, 13_000.0, planes).unwrap();
        let mut m = ScoreMatrix::zeros(set, joints);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for d in 0..planes {
            for j in 0..joints {
                m.set(d, j, rng.gen::<f64>());
            }
        }
        m
    }

    #[test]
    fn score_tensor_transposes_plane_major_storage() {
        let m = random_scores(8, 3, 1);
        let t = score_tensor(&[&m]).unwrap();
        assert_eq!(t.shape(), (1, 3, 8));
        for j in 0..3 {
            for d in 0..8 {
                assert_eq!(t.get(0, j, d), m.get(d, j));
            }
        }
        let batch = score_tensor(&[&m, &m]).unwrap();
        assert_eq!(batch.shape(), (2, 3, 8));
        assert_eq!(batch.row(1, 2), t.row(0, 2));
    }

    #[test]
    fn score_tensor_rejects_mixed_shapes() {
        let a = random_scores(8, 3, 1);
        let b = random_scores(8, 4, 2);
        assert!(matches!(
            score_tensor(&[&a, &b]),
            Err(DepthNetsError::Shape(_))
        ));
        assert!(matches!(score_tensor(&[]), Err(DepthNetsError::Shape(_))));
    }

    #[test]
    fn distribution_construction_validates_rows() {
        let mut good = Tensor::zeros(1, 2, 4);
        for c in 0..2 {
            for i in 0..4 {
                good.set(0, c, i, 0.25);
            }
        }
        let dist = DepthDistribution::from_tensor(good.clone()).unwrap();
        assert_eq!(dist.row(0, 1), &[0.25; 4]);

        let mut unnormalized = good.clone();
        unnormalized.set(0, 0, 0, 0.5);
        assert!(matches!(
            DepthDistribution::from_tensor(unnormalized),
            Err(DepthNetsError::Distribution(_))
        ));

        let mut negative = good;
        negative.set(0, 1, 0, -0.25);
        negative.set(0, 1, 1, 0.75);
        assert!(matches!(
            DepthDistribution::from_tensor(negative),
            Err(DepthNetsError::Distribution(_))
        ));
    }

    #[test]
    fn point_mass_soft_argmax_returns_that_plane_exactly() {
        let set = DepthPlaneSet::new(500.0, 13_000.0, 64).unwrap();
        let mut dist = vec![0.0; 64];
        dist[23] = 1.0;
        for window in [1, 5, 16, 64] {
            let out = local_soft_argmax(&dist, set.depths(), window).unwrap();
            assert_eq!(out, set.depth(23));
        }
    }

    #[test]
    fn bimodal_distribution_locks_onto_dominant_mode() {
        let set = DepthPlaneSet::new(500.0, 13_000.0, 64).unwrap();
        let mut dist = vec![0.0; 64];
        dist[10] = 0.6;
        dist[50] = 0.4;
        let local = local_soft_argmax(&dist, set.depths(), 16).unwrap();
        assert_eq!(local, set.depth(10));
        let standard = soft_argmax(&dist, set.depths()).unwrap();
        assert_relative_eq!(
            standard,
            0.6 * set.depth(10) + 0.4 * set.depth(50),
            max_relative = 1e-12
        );
        assert!((standard - set.depth(10)).abs() > set.spacing());
    }

    #[test]
    fn full_window_matches_standard_soft_argmax() {
        let set = DepthPlaneSet::new(500.0, 13_000.0, 32).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let raw: Vec<f64> = (0..32).map(|_| rng.gen::<f64>()).collect();
        let z: f64 = raw.iter().sum();
        let dist: Vec<f64> = raw.iter().map(|v| v / z).collect();
        let local = local_soft_argmax(&dist, set.depths(), 32).unwrap();
        let standard = soft_argmax(&dist, set.depths()).unwrap();
        assert_eq!(local, standard);
        let expectation: f64 =
            dist.iter().zip(set.depths()).map(|(&p, &d)| p * d).sum::<f64>()
                / dist.iter().sum::<f64>();
        assert_relative_eq!(standard, expectation, max_relative = 1e-12);
    }

    #[test]
    fn soft_argmax_rejects_bad_shapes_and_empty_mass() {
        let depths = [1.0, 2.0, 3.0];
        assert!(matches!(
            local_soft_argmax(&[0.5, 0.5], &depths, 1),
            Err(DepthNetsError::Shape(_))
        ));
        assert!(matches!(
            local_soft_argmax(&[0.5, 0.25, 0.25], &depths, 0),
            Err(DepthNetsError::Shape(_))
        ));
        assert!(matches!(
            local_soft_argmax(&[0.5, 0.25, 0.25], &depths, 4),
            Err(DepthNetsError::Shape(_))
        ));
        assert!(matches!(
            local_soft_argmax(&[0.0, 0.0, 0.0], &depths, 2),
            Err(DepthNetsError::Distribution(_))
        ));
    }

    proptest! {
        #[test]
        fn soft_argmax_stays_within_plane_range(
            raw in proptest::collection::vec(0.0f64..1.0, 8..64),
            window_frac in 0.01f64..1.0,
            scale in 0.25f64..1e6,
        ) {
            let mut dist = raw;
            dist[0] += 1e-3;
            let set = DepthPlaneSet::new(500.0, 13_000.0, dist.len()).unwrap();
            let window = ((dist.len() as f64 * window_frac) as usize).clamp(1, dist.len());
            let out = local_soft_argmax(&dist, set.depths(), window).unwrap();
            prop_assert!((set.d_min()..=set.d_max()).contains(&out));

            let scaled: Vec<f64> = dist.iter().map(|v| v * scale).collect();
            let out_scaled = local_soft_argmax(&scaled, set.depths(), window).unwrap();
            prop_assert!((out - out_scaled).abs() <= 1e-9 * out.abs().max(1.0));
        }

        #[test]
        fn windowed_and_standard_agree_on_compact_support(
            start in 0usize..48,
            mass in proptest::collection::vec(1e-6f64..1.0, 8),
        ) {
            let set = DepthPlaneSet::new(500.0, 13_000.0, 64).unwrap();
            let mut dist = vec![0.0; 64];
            let z: f64 = mass.iter().sum();
            for (i, &m) in mass.iter().enumerate() {
                dist[start + i] = m / z;
            }
            let local = local_soft_argmax(&dist, set.depths(), 16).unwrap();
            let standard = soft_argmax(&dist, set.depths()).unwrap();
            prop_assert!((local - standard).abs() <= 1e-9 * standard.abs().max(1.0));
        }
    }

    #[test]
    fn l1_losses_match_hand_computed_sums() {
        assert_eq!(person_loss(&[3000.0, 5000.0], &[3100.0, 4800.0]), 300.0);
        assert_eq!(person_loss(&[], &[]), 0.0);
        let est = vec![vec![100.0, -50.0], vec![0.0, 25.0]];
        let truth = vec![vec![90.0, -40.0], vec![5.0, 25.0]];
        assert_eq!(joint_loss(&est, &truth), 10.0 + 10.0 + 5.0 + 0.0);
    }

    proptest! {
        #[test]
        fn losses_match_elementwise_oracle(
            pairs in proptest::collection::vec((-1e4f64..1e4, -1e4f64..1e4), 1..12),
        ) {
            let est: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let truth: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let mut oracle = 0.0;
            for (e, t) in est.iter().zip(&truth) {
                oracle += (e - t).abs();
            }
            prop_assert_eq!(person_loss(&est, &truth), oracle);
            let je = vec![est.clone(), est.iter().map(|v| v * 0.5).collect()];
            let jt = vec![truth.clone(), truth.iter().map(|v| v * 0.5).collect()];
            let mut jo = 0.0;
            for (a, b) in je.iter().zip(&jt) {
                let mut pose = 0.0;
                for (x, y) in a.iter().zip(b) {
                    pose += (x - y).abs();
                }
                jo += pose;
            }
            prop_assert_eq!(joint_loss(&je, &jt), jo);
        }
    }

    #[test]
    fn absolute_depths_add_offsets_and_shift_linearly() {
        let depths = absolute_joint_depths(3000.0, &[-250.5, 0.0, 512.25]);
        assert_eq!(depths, vec![2749.5, 3000.0, 3512.25]);

        let base = absolute_joint_depths(3000.0, &[-250.5, 0.0, 512.25]);
        let shifted = absolute_joint_depths(3000.0 + 256.0, &[-250.5, 0.0, 512.25]);
        for (b, s) in base.iter().zip(&shifted) {
            assert_eq!(s - b, 256.0);
        }

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rel: Vec<f64> = (0..15).map(|_| rng.gen::<f64>() * 2000.0 - 1000.0).collect();
        let c = 137.375;
        let a = absolute_joint_depths(4321.0, &rel);
        let b = absolute_joint_depths(4321.0 + c, &rel);
        for (x, y) in a.iter().zip(&b) {
            assert_relative_eq!(y - x, c, max_relative = 1e-12);
        }
    }

    #[test]
    fn untrained_person_net_emits_valid_distribution() {
        let model = Model::new(
            15,
            64,
            64,
            PersonNetConfig::default(),
            JointNetConfig::default(),
            42,
        )
        .unwrap();
        let m = random_scores(64, 15, 9);
        let dist = model.person.infer(&model.params, &[&m]).unwrap();
        assert_eq!(dist.tensor().shape(), (1, 1, 64));
        let row = dist.row(0, 0);
        assert!(row.iter().all(|&p| p > 0.0));
        assert_abs_diff_eq!(row.iter().sum::<f64>(), 1.0, epsilon = 1e-9);

        let zeros = ScoreMatrix::zeros(DepthPlaneSet::new(500.0, 13_000.0, 64).unwrap(), 15);
        let dist = model.person.infer(&model.params, &[&zeros]).unwrap();
        assert!(dist.row(0, 0).iter().all(|p| p.is_finite()));
    }

    #[test]
    fn untrained_joint_net_normalizes_every_joint_channel() {
        let model = Model::new(
            15,
            64,
            64,
            PersonNetConfig::default(),
            JointNetConfig::default(),
            43,
        )
        .unwrap();
        let m = random_scores(64, 15, 11);
        let dist = model.joint.infer(&model.params, &[&m, &m]).unwrap();
        assert_eq!(dist.tensor().shape(), (2, 15, 64));
        for b in 0..2 {
            for j in 0..15 {
                let row = dist.row(b, j);
                assert!(row.iter().all(|&p| p > 0.0));
                assert_abs_diff_eq!(row.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn infer_rejects_wrong_joint_count() {
        let model = Model::new(
            4,
            16,
            16,
            PersonNetConfig { hidden: 8, blocks: 1, kernel: 3, window: 4 },
            JointNetConfig { hidden: 8, dilations: vec![1, 2], kernel: 3 },
            1,
        )
        .unwrap();
        let m = random_scores(16, 5, 2);
        assert!(matches!(
            model.person.infer(&model.params, &[&m]),
            Err(DepthNetsError::Shape(_))
        ));
        assert!(matches!(
            model.joint.infer(&model.params, &[&m]),
            Err(DepthNetsError::Shape(_))
        ));
    }

    #[test]
    fn config_validation_catches_bad_windows_and_receptive_fields() {
        let person = PersonNetConfig { window: 0, ..PersonNetConfig::default() };
        assert!(matches!(person.validate(64), Err(DepthNetsError::Config(_))));
        let person = PersonNetConfig { window: 65, ..PersonNetConfig::default() };
        assert!(matches!(person.validate(64), Err(DepthNetsError::Config(_))));
        assert!(PersonNetConfig::default().validate(64).is_ok());

        let joint = JointNetConfig { dilations: vec![1], ..JointNetConfig::default() };
        assert_eq!(joint.receptive_field(), 5);
        assert!(matches!(joint.validate(64), Err(DepthNetsError::Config(_))));
        assert!(JointNetConfig::default().validate(64).is_ok());
        assert_eq!(JointNetConfig::default().receptive_field(), 33);

        let even = JointNetConfig { kernel: 4, ..JointNetConfig::default() };
        assert!(matches!(even.validate(64), Err(DepthNetsError::Config(_))));
    }

    #[test]
    fn seeded_model_construction_is_deterministic() {
        let a = Model::new(15, 64, 64, PersonNetConfig::default(), JointNetConfig::default(), 5)
            .unwrap();
        let b = Model::new(15, 64, 64, PersonNetConfig::default(), JointNetConfig::default(), 5)
            .unwrap();
        for (ia, ib) in a.params.ids().zip(b.params.ids()) {
            assert_eq!(a.params.data(ia), b.params.data(ib));
            assert_eq!(a.params.name(ia), b.params.name(ib));
        }
        let c = Model::new(15, 64, 64, PersonNetConfig::default(), JointNetConfig::default(), 6)
            .unwrap();
        let differs = a
            .params
            .ids()
            .zip(c.params.ids())
            .any(|(ia, ic)| a.params.data(ia) != c.params.data(ic));
        assert!(differs);
    }

    /// Person network loss for gradient checking: train-mode forward,
    /// windowed soft-argmax over plane depths, L1 against fixed targets.
    fn person_pipeline_loss(
        params: &Params,
        net: &PersonNet,
        x: &Tensor,
        depths: &[f64],
        window: usize,
        target: &Tensor,
    ) -> (f64, Grads) {
        let mut tape = Tape::new(params);
        let xi = tape.input(x.clone()).unwrap();
        let (dist, _) = net.forward_train(&mut tape, xi).unwrap();
        let est = tape.soft_argmax_window(dist, depths, window).unwrap();
        let loss = tape.l1_sum(est, target).unwrap();
        let mut grads = Grads::new(params);
        let value = tape.value(loss).scalar();
        tape.backward(loss, &mut grads).unwrap();
        (value, grads)
    }

    #[test]
    fn person_net_gradients_pass_finite_difference_check() {
        let config = PersonNetConfig { hidden: 8, blocks: 2, kernel: 3, window: 4 };
        let mut model = Model::new(
            4,
            16,
            16,
            config.clone(),
            JointNetConfig { hidden: 8, dilations: vec![1, 2], kernel: 3 },
            17,
        )
        .unwrap();
        let set = DepthPlaneSet::new(500.0, 13_000.0, 16).unwrap();
        let mats: Vec<ScoreMatrix> =
            (0..3).map(|i| random_scores(16, 4, 100 + i)).collect();
        let refs: Vec<&ScoreMatrix> = mats.iter().collect();
        let x = score_tensor(&refs).unwrap();
        let mut target = Tensor::zeros(3, 1, 1);
        for (b, t) in [3000.0, 7500.0, 11_000.0].iter().enumerate() {
            target.set(b, 0, 0, *t);
        }

        let (_, grads) = person_pipeline_loss(
            &model.params,
            &model.person,
            &x,
            set.depths(),
            config.window,
            &target,
        );
        let person_ids: Vec<_> = model
            .params
            .ids()
            .filter(|&id| model.params.name(id).starts_with("person."))
            .collect();
        assert_eq!(person_ids.len(), 2 + 2 * 4 * 2 + 2);
        let person = &model.person;
        for id in person_ids {
            let report = check_param(
                &mut model.params,
                id,
                grads.get(id),
                DEFAULT_STEP,
                CoordSelection::All,
                |p| {
                    person_pipeline_loss(p, person, &x, set.depths(), config.window, &target).0
                },
            );
            assert!(
                report.passed(),
                "param {id:?}: {} of {} coordinates failed, worst {:?}",
                report.failures,
                report.checked,
                report.worst
            );
        }
    }

    /// Joint network loss: per-joint distributions reduced over the
    /// relative offsets with a full-length soft-argmax, L1 to targets.
    fn joint_pipeline_loss(
        params: &Params,
        net: &JointNet,
        x: &Tensor,
        offsets: &[f64],
        target: &Tensor,
    ) -> (f64, Grads) {
        let mut tape = Tape::new(params);
        let xi = tape.input(x.clone()).unwrap();
        let (dist, _) = net.forward_train(&mut tape, xi).unwrap();
        let est = tape.soft_argmax_window(dist, offsets, offsets.len()).unwrap();
        let loss = tape.l1_sum(est, target).unwrap();
        let mut grads = Grads::new(params);
        let value = tape.value(loss).scalar();
        tape.backward(loss, &mut grads).unwrap();
        (value, grads)
    }

    #[test]
    fn joint_net_gradients_pass_finite_difference_check() {
        let config = JointNetConfig { hidden: 8, dilations: vec![1, 2], kernel: 3 };
        let mut model = Model::new(
            3,
            16,
            16,
            PersonNetConfig { hidden: 8, blocks: 1, kernel: 3, window: 4 },
            config,
            19,
        )
        .unwrap();
        let set = DepthPlaneSet::new(-1000.0, 1000.0, 16).unwrap();
        let mats: Vec<ScoreMatrix> = (0..2).map(|i| random_scores(16, 3, 200 + i)).collect();
        let refs: Vec<&ScoreMatrix> = mats.iter().collect();
        let x = score_tensor(&refs).unwrap();
        let mut target = Tensor::zeros(2, 3, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for b in 0..2 {
            for j in 0..3 {
                target.set(b, j, 0, rng.gen::<f64>() * 1600.0 - 800.0);
            }
        }

        let (_, grads) =
            joint_pipeline_loss(&model.params, &model.joint, &x, set.depths(), &target);
        let joint_ids: Vec<_> = model
            .params
            .ids()
            .filter(|&id| model.params.name(id).starts_with("joint."))
            .collect();
        assert_eq!(joint_ids.len(), 2 + 2 * 2 * 2 + 2);
        let joint = &model.joint;
        for id in joint_ids {
            let report = check_param(
                &mut model.params,
                id,
                grads.get(id),
                DEFAULT_STEP,
                CoordSelection::All,
                |p| joint_pipeline_loss(p, joint, &x, set.depths(), &target).0,
            );
            assert!(
                report.passed(),
                "param {id:?}: {} of {} coordinates failed, worst {:?}",
                report.failures,
                report.checked,
                report.worst
            );
        }
    }

    #[test]
    fn batch_stats_update_running_statistics_in_layer_order() {
        let mut model = Model::new(
            3,
            16,
            16,
            PersonNetConfig { hidden: 8, blocks: 1, kernel: 3, window: 4 },
            JointNetConfig { hidden: 8, dilations: vec![1, 2], kernel: 3 },
            29,
        )
        .unwrap();
        let m = random_scores(16, 3, 31);
        let x = score_tensor(&[&m]).unwrap();
        let before: Vec<Vec<f64>> = model
            .person
            .bn_layers()
            .iter()
            .map(|bn| bn.running_mean().to_vec())
            .collect();

        let mut tape = Tape::new(&model.params);
        let xi = tape.input(x).unwrap();
        let (_, stats) = model.person.forward_train(&mut tape, xi).unwrap();
        assert_eq!(stats.len(), 2);
        drop(tape);
        model.person.apply_batch_stats(&stats);

        for ((bn, old), (mean, _)) in
            model.person.bn_layers().iter().zip(&before).zip(&stats)
        {
            for ((&rm, &om), &bm) in
                bn.running_mean().iter().zip(old).zip(mean)
            {
                assert_relative_eq!(rm, 0.9 * om + 0.1 * bm, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn checkpoint_roundtrip_reproduces_model_bit_for_bit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut model = Model::new(
            5,
            32,
            24,
            PersonNetConfig { hidden: 8, blocks: 2, kernel: 3, window: 8 },
            JointNetConfig { hidden: 8, dilations: vec![1, 2, 4], kernel: 3 },
            101,
        )
        .unwrap();
        let m = random_scores(32, 5, 55);
        let x = score_tensor(&[&m]).unwrap();
        let mut tape = Tape::new(&model.params);
        let xi = tape.input(x).unwrap();
        let (_, person_stats) = model.person.forward_train(&mut tape, xi).unwrap();
        let (_, joint_stats) = model.joint.forward_train(&mut tape, xi).unwrap();
        drop(tape);
        model.person.apply_batch_stats(&person_stats);
        model.joint.apply_batch_stats(&joint_stats);

        let extra = json!({"step": 7, "metric": 123.456});
        model.save(&path, &extra).unwrap();
        let (loaded, loaded_extra) = Model::load(&path).unwrap();
        assert_eq!(loaded_extra, extra);
        assert_eq!(loaded.joints(), 5);
        assert_eq!(loaded.planes(), 32);
        assert_eq!(loaded.rel_planes(), 24);
        assert_eq!(loaded.params.len(), model.params.len());
        for (a, b) in model.params.ids().zip(loaded.params.ids()) {
            assert_eq!(model.params.name(a), loaded.params.name(b));
            let left = model.params.data(a);
            let right = loaded.params.data(b);
            assert!(left.iter().zip(right).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        for (a, b) in model.person.bn_layers().iter().zip(loaded.person.bn_layers()) {
            assert_eq!(a.running_mean(), b.running_mean());
            assert_eq!(a.running_var(), b.running_var());
        }

        let original = model.person.infer(&model.params, &[&m]).unwrap();
        let reloaded = loaded.person.infer(&loaded.params, &[&m]).unwrap();
        assert!(original
            .row(0, 0)
            .iter()
            .zip(reloaded.row(0, 0))
            .all(|(x, y)| x.to_bits() == y.to_bits()));

        let jo = model.joint.infer(&model.params, &[&m]).unwrap();
        let jr = loaded.joint.infer(&loaded.params, &[&m]).unwrap();
        assert_eq!(jo.tensor().data(), jr.tensor().data());
    }

    #[test]
    fn checkpoint_saved_twice_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.ckpt");
        let b = dir.path().join("b.ckpt");
        let model = Model::new(
            4,
            16,
            16,
            PersonNetConfig { hidden: 8, blocks: 1, kernel: 3, window: 4 },
            JointNetConfig { hidden: 8, dilations: vec![1, 2], kernel: 3 },
            7,
        )
        .unwrap();
        model.save(&a, &serde_json::Value::Null).unwrap();
        model.save(&b, &serde_json::Value::Null).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn load_rejects_foreign_and_incomplete_checkpoints() {
        let dir = tempfile::tempdir().unwrap();

        let foreign = dir.path().join("foreign.ckpt");
        checkpoint::save(&foreign, &json!({"kind": "something-else"}), &[("w", &[1.0])])
            .unwrap();
        assert!(matches!(
            Model::load(&foreign),
            Err(DepthNetsError::Checkpoint(_))
        ));

        let incomplete = dir.path().join("incomplete.ckpt");
        let meta = json!({
            "kind": CHECKPOINT_KIND,
            "joints": 4,
            "planes": 16,
            "rel_planes": 16,
            "person": PersonNetConfig { hidden: 8, blocks: 1, kernel: 3, window: 4 },
            "joint": JointNetConfig { hidden: 8, dilations: vec![1, 2], kernel: 3 },
            "extra": null,
        });
        checkpoint::save(&incomplete, &meta, &[("person.conv_in.weight", &[0.0; 96])])
            .unwrap();
        let err = Model::load(&incomplete).unwrap_err();
        assert!(matches!(err, DepthNetsError::Checkpoint(_)));
        assert!(err.to_string().contains("misses"));

        let unknown = dir.path().join("unknown.ckpt");
        checkpoint::save(&unknown, &meta, &[("person.mystery", &[0.0])]).unwrap();
        let err = Model::load(&unknown).unwrap_err();
        assert!(err.to_string().contains("matches no parameter"));
    }
}
