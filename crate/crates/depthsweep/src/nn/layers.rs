//! Trainable parameter storage and the two layer kinds the networks use.

use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Handle into a [`Params`] arena.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Arena of named float64 parameter tensors.
///
/// Layers register their parameters here and keep only [`ParamId`]
/// handles, so a [`crate::nn::Tape`] can borrow the whole arena immutably
/// during forward/backward while the optimizer later mutates it.
#[derive(Debug, Default)]
pub struct Params {
    entries: Vec<ParamEntry>,
}

impl Params {
    pub fn new() -> Self {
        Params::default()
    }

    /// Registers a named parameter; names must be unique within the arena.
    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], data: Vec<f64>) -> ParamId {
        let name = name.into();
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "parameter data length must match shape for {name}"
        );
        assert!(
            self.entries.iter().all(|e| e.name != name),
            "duplicate parameter name {name}"
        );
        self.entries.push(ParamEntry { name, shape: shape.to_vec(), data });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn shape(&self, id: ParamId) -> &[usize] {
        &self.entries[id.0].shape
    }

    pub fn data(&self, id: ParamId) -> &[f64] {
        &self.entries[id.0].data
    }

    pub fn data_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.entries[id.0].data
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    /// Total float64 count across all parameters.
    pub fn total_values(&self) -> usize {
        self.entries.iter().map(|e| e.data.len()).sum()
    }
}

/// Per-parameter gradient buffers shaped like their [`Params`] arena.
pub struct Grads {
    slots: Vec<Vec<f64>>,
}

impl Grads {
    /// Zeroed gradients for every parameter currently in `params`.
    pub fn new(params: &Params) -> Self {
        Grads { slots: params.entries.iter().map(|e| vec![0.0; e.data.len()]).collect() }
    }

    pub fn zero(&mut self) {
        for slot in &mut self.slots {
            slot.fill(0.0);
        }
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.slots[id.0]
    }

    pub(crate) fn slot_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.slots[id.0]
    }

    pub fn all_finite(&self) -> bool {
        self.slots.iter().all(|s| s.iter().all(|v| v.is_finite()))
    }
}

/// Length-preserving dilated 1D convolution (cross-correlation, no kernel
/// flip). The kernel size must be odd so `padding = dilation * (k - 1) / 2`
/// keeps the output length equal to the input length.
///
/// Weights are He-initialized (std = sqrt(2 / (in_channels * kernel))),
/// biases start at zero.
#[derive(Debug, Clone, Copy)]
pub struct Conv1D {
    w: ParamId,
    b: ParamId,
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    dilation: usize,
}

impl Conv1D {
    pub fn new<R: Rng>(
        params: &mut Params,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        dilation: usize,
        rng: &mut R,
    ) -> Self {
        assert!(in_channels > 0 && out_channels > 0, "channel counts must be positive");
        assert!(kernel % 2 == 1, "kernel size must be odd to preserve length");
        assert!(dilation >= 1, "dilation must be at least 1");
        let std = (2.0 / (in_channels * kernel) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("std is finite and positive");
        let weights: Vec<f64> =
            (0..out_channels * in_channels * kernel).map(|_| normal.sample(rng)).collect();
        let w = params.add(
            format!("{name}.weight"),
            &[out_channels, in_channels, kernel],
            weights,
        );
        let b = params.add(format!("{name}.bias"), &[out_channels], vec![0.0; out_channels]);
        Conv1D { w, b, in_channels, out_channels, kernel, dilation }
    }

    pub fn weight_id(&self) -> ParamId {
        self.w
    }

    pub fn bias_id(&self) -> ParamId {
        self.b
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn dilation(&self) -> usize {
        self.dilation
    }

    /// Padding that keeps output length equal to input length.
    pub fn padding(&self) -> usize {
        self.dilation * (self.kernel - 1) / 2
    }

    /// Receptive field span of this single layer, in input samples.
    pub fn receptive_field(&self) -> usize {
        self.dilation * (self.kernel - 1) + 1
    }
}

/// Per-channel batch normalization.
///
/// Training mode normalizes with batch statistics (biased variance) and
/// reports the unbiased variance for the running estimate; inference uses
/// the running statistics. Running stats live in the layer itself, not in
/// [`Params`], because the optimizer never touches them.
#[derive(Debug)]
pub struct BatchNorm1D {
    gamma: ParamId,
    beta: ParamId,
    channels: usize,
    name: String,
    running_mean: Vec<f64>,
    running_var: Vec<f64>,
}

impl BatchNorm1D {
    pub const MOMENTUM: f64 = 0.9;
    pub const EPS: f64 = 1e-5;

    /// Fresh layer: gamma 1, beta 0, running mean 0, running variance 1.
    pub fn new(params: &mut Params, name: &str, channels: usize) -> Self {
        assert!(channels > 0, "channel count must be positive");
        let gamma = params.add(format!("{name}.gamma"), &[channels], vec![1.0; channels]);
        let beta = params.add(format!("{name}.beta"), &[channels], vec![0.0; channels]);
        BatchNorm1D {
            gamma,
            beta,
            channels,
            name: name.to_string(),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
        }
    }

    pub fn gamma_id(&self) -> ParamId {
        self.gamma
    }

    pub fn beta_id(&self) -> ParamId {
        self.beta
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn running_mean(&self) -> &[f64] {
        &self.running_mean
    }

    pub fn running_var(&self) -> &[f64] {
        &self.running_var
    }

    /// Folds batch statistics into the running estimates:
    /// `new = MOMENTUM * old + (1 - MOMENTUM) * batch`.
    pub fn update_running(&mut self, batch_mean: &[f64], batch_var: &[f64]) {
        assert_eq!(batch_mean.len(), self.channels);
        assert_eq!(batch_var.len(), self.channels);
        for c in 0..self.channels {
            self.running_mean[c] =
                Self::MOMENTUM * self.running_mean[c] + (1.0 - Self::MOMENTUM) * batch_mean[c];
            self.running_var[c] =
                Self::MOMENTUM * self.running_var[c] + (1.0 - Self::MOMENTUM) * batch_var[c];
        }
    }

    /// Overwrites running statistics, e.g. when restoring a checkpoint.
    pub fn set_running(&mut self, mean: Vec<f64>, var: Vec<f64>) {
        assert_eq!(mean.len(), self.channels);
        assert_eq!(var.len(), self.channels);
        assert!(var.iter().all(|v| *v >= 0.0), "running variance must be nonnegative");
        self.running_mean = mean;
        self.running_var = var;
    }
}
