//! Streaming distribution-shift detection and adaptation at desk scale.
//!
//! The pipeline couples two pieces:
//!
//! 1. **Detection** — per-sample non-conformity scores feed an exponential
//!    supermartingale kept in the log domain; Ville's inequality turns a
//!    threshold crossing into an anytime-valid alarm with a time-uniform
//!    false alarm bound, and a bootstrap correction of the log-MGF keeps
//!    the guarantee honest under finite calibration data.
//! 2. **Adaptation** — on alarm, a small softmax classifier over frozen
//!    features takes natural-gradient steps preconditioned by a damped
//!    diagonal Fisher estimate, with a differentiable calibration-error
//!    penalty computed on the held-out calibration buffer.
//!
//! A Monte Carlo harness verifies the statistical guarantees end to end:
//! false-alarm control, `ln(τ)/Γ` delay scaling, the supermartingale mean
//! audit, and adaptation benefit on shifted streams.
//!
//! # Examples
//!
//! Each major capability has a runnable example:
//!
//! | Example | Shows |
//! |---|---|
//! | `scores` | the non-conformity score and its logit gradient |
//! | `calibrate` | μ̂/ψ̂/ψ̄ fitting and why the bootstrap bound exists |
//! | `detect` | e-process alarms, the null "hole", reset policies |
//! | `simulate` | reproducible streams with a change point |
//! | `natural_gradient` | Fisher preconditioning and its geometry |
//! | `calibration_penalty` | differentiable calibration error + gradient |
//! | `false_alarm` | Monte Carlo check of the α + 1/τ budget |
//! | `delay_scaling` | detection delay against ln(τ)/Γ |
//! | `audit` | `E[M_t] ≤ 1` checkpoints and a negative control |
//! | `pipeline` | the full detect-then-adapt loop, paired arms |
//!
//! ```bash
//! cargo run --example pipeline
//! cargo run --example detect
//! ```
//!
//! The thin `driftguard` binary wires the same building blocks into four
//! subcommands (`calibrate`, `detect`, `experiment`, `simulate`) for use
//! from shell pipelines; see the README.

pub mod calibration;
pub mod cli;
pub mod eprocess;
pub mod error;
pub mod fisher;
pub mod harness;
pub mod model;
pub mod numerics;
pub mod score;
pub mod stream;
pub mod wire;
