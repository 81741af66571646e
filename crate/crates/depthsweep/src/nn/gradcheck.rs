//! Central finite-difference verification of analytic gradients.
//!
//! Comparison rule: a coordinate passes when `|analytic - numeric|` is
//! within `REL_TOL` relatively, or under `ABS_FLOOR`, or under the
//! oracle's own roundoff resolution (`NOISE_FACTOR * eps * |loss| / (2h)`,
//! which is what central differencing of a large loss can resolve at all).
//! So the relative test governs every coordinate with a real gradient,
//! while near-zero gradients are not failed on finite-difference noise.

use crate::nn::layers::{ParamId, Params};
use crate::nn::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Default central-difference step.
pub const DEFAULT_STEP: f64 = 1e-5;
/// Relative tolerance on the gradient comparison.
pub const REL_TOL: f64 = 1e-4;
/// Absolute difference under which coordinates always pass.
pub const ABS_FLOOR: f64 = 1e-7;
/// Multiplier on the finite-difference oracle's own roundoff resolution,
/// `eps * |loss| / (2h)`: the quotient of two nearly equal loss values
/// carries that much noise regardless of the analytic gradient, so
/// near-zero gradients cannot be resolved below it.
pub const NOISE_FACTOR: f64 = 64.0;

/// Which coordinates of the checked buffer to probe.
pub enum CoordSelection {
    All,
    /// Random subset without replacement.
    Sample { count: usize, seed: u64 },
}

/// Outcome of one finite-difference comparison run.
#[derive(Debug)]
pub struct GradReport {
    pub checked: usize,
    pub failures: usize,
    /// Largest `|a - n| / max(ABS_FLOOR, REL_TOL * max(|a|, |n|))`;
    /// values above 1 are failures.
    pub max_violation: f64,
    /// (flat index, analytic, numeric) of the worst coordinate.
    pub worst: Option<(usize, f64, f64)>,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.failures == 0
    }
}

/// Single-coordinate pass rule; exposed so tests can assert on it directly.
pub fn agrees(analytic: f64, numeric: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff <= ABS_FLOOR || diff <= REL_TOL * analytic.abs().max(numeric.abs())
}

fn select(total: usize, coords: &CoordSelection) -> Vec<usize> {
    match coords {
        CoordSelection::All => (0..total).collect(),
        CoordSelection::Sample { count, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            rand::seq::index::sample(&mut rng, total, (*count).min(total)).into_vec()
        }
    }
}

fn run_check(
    analytic: &[f64],
    indices: &[usize],
    h: f64,
    mut eval: impl FnMut(usize, f64) -> f64,
) -> GradReport {
    let mut report = GradReport { checked: 0, failures: 0, max_violation: 0.0, worst: None };
    for &idx in indices {
        let plus = eval(idx, h);
        let minus = eval(idx, -h);
        let numeric = (plus - minus) / (2.0 * h);
        let a = analytic[idx];
        let oracle_noise =
            NOISE_FACTOR * f64::EPSILON * plus.abs().max(minus.abs()) / (2.0 * h);
        let tolerance = ABS_FLOOR.max(oracle_noise).max(REL_TOL * a.abs().max(numeric.abs()));
        let violation = (a - numeric).abs() / tolerance;
        report.checked += 1;
        if violation > 1.0 {
            report.failures += 1;
        }
        if violation > report.max_violation || report.worst.is_none() {
            report.max_violation = violation;
            report.worst = Some((idx, a, numeric));
        }
    }
    report
}

/// Checks the analytic gradient of one parameter against central
/// differences of `loss`, which must recompute the full forward pass from
/// the given parameters. Parameters are restored exactly after probing.
pub fn check_param<F: FnMut(&Params) -> f64>(
    params: &mut Params,
    id: ParamId,
    analytic: &[f64],
    h: f64,
    coords: CoordSelection,
    mut loss: F,
) -> GradReport {
    let total = params.data(id).len();
    assert_eq!(analytic.len(), total, "analytic gradient length mismatch");
    let indices = select(total, &coords);
    run_check(analytic, &indices, h, |idx, delta| {
        let original = params.data(id)[idx];
        params.data_mut(id)[idx] = original + delta;
        let value = loss(params);
        params.data_mut(id)[idx] = original;
        value
    })
}

/// Checks the gradient with respect to an input tensor.
pub fn check_input<F: FnMut(&Tensor) -> f64>(
    input: &Tensor,
    analytic: &Tensor,
    h: f64,
    coords: CoordSelection,
    mut loss: F,
) -> GradReport {
    assert_eq!(input.shape(), analytic.shape(), "analytic gradient shape mismatch");
    let mut probe = input.clone();
    let indices = select(input.data().len(), &coords);
    run_check(analytic.data(), &indices, h, |idx, delta| {
        let original = probe.data()[idx];
        probe.data_mut()[idx] = original + delta;
        let value = loss(&probe);
        probe.data_mut()[idx] = original;
        value
    })
}
