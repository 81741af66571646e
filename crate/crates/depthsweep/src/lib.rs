//! Multi-view multi-person 3D pose estimation by plane-sweep depth
//! regression.
//!
//! Given calibrated cameras and per-view 2D pose detections, the pipeline
//! hypothesizes a set of depth planes in a target camera, warps each target
//! pose onto every plane and into every other view, scores cross-view
//! alignment into a depth-by-joint score matrix, and regresses depth from
//! that matrix with small 1D convolutional networks: a person-level network
//! picks the depth of the skeleton root, then a joint-level network refines
//! each joint with an offset around that anchor. Back-projecting every joint
//! at its regressed depth and fusing the per-view results by clustering
//! yields world-frame 3D poses.
//!
//! The crate is self-contained: it generates its own synthetic training
//! scenes, trains with a built-in reverse-mode autodiff engine, and ships an
//! evaluation harness (PCP, MPJPE, AP, depth recall).
//!
//! # Examples
//!
//! Each major capability has a runnable example under `examples/`:
//!
//! - `camera_roundtrip` — pinhole projection, back-projection, cross-view
//!   warping.
//! - `score_sweep` — build a score matrix for a hand-made scene and dump it.
//! - `generate_dataset` — synthesize a training dataset and a camera rig.
//! - `train_small` — train the two depth regressors on a small dataset.
//! - `infer_and_fuse` — run per-view inference and cross-view fusion.
//! - `evaluate_metrics` — score results against ground truth.
//! - `benchmark_scaling` — per-stage timings and linear-scaling counters.
//!
//! Run one with `cargo run --release --example score_sweep`.

pub mod cli;
pub mod config;
pub mod depthnets;
pub mod eval;
pub mod geometry;
pub mod nn;
pub mod pipeline;
pub mod sweep;
pub mod synth;
