//! Desk-scale toolkit for bounding-box-driven sphere grasping.
//!
//! The crate is organized as a pipeline of small, independently testable
//! modules:
//!
//! - [`geometry`] — pinhole cameras, the sphere-to-bbox forward model, and
//!   two-view sphere triangulation (center, radius, and per-ray depths from a
//!   pair of normalized bounding boxes).
//! - [`reward`] — the ten-term dense grasp reward suite with its weight table.
//! - [`sim`] — a deterministic kinematic grasp environment (delta end-effector
//!   control, snap-grasp predicate), domain-randomization presets, a scripted
//!   expert, rollouts, and episode files.
//! - [`observe`] — the three-camera rig, bbox rendering, detector failure
//!   models (masking and noise), and observation assembly.
//! - [`policy`] — a recurrent student policy (stacked LSTM + GELU head)
//!   trained by behavior cloning with manual backpropagation through time,
//!   an adaptive-moment optimizer, and a finite-difference gradient checker.
//! - [`fit`] — Levenberg–Marquardt fitting for the scaling-law curve families
//!   and a sample-complexity lower bound.
//! - [`harness`] — dataset generation, data-volume / mask / noise sweeps,
//!   ablations, and CSV reporting.
//!
//! All numeric state is `f64`, all randomness flows through explicitly seeded
//! ChaCha generators, and every experiment is reproducible from its
//! configuration and seed alone.

pub mod config;
pub mod fit;
pub mod geometry;
pub mod harness;
pub mod observe;
pub mod policy;
pub mod reward;
pub mod sim;
