//! Best-option-set search for a budget-constrained grid-world learner.
//!
//! The library wires together five pieces:
//!
//! - [`gridworld`]: the food-source domain — a 7x7 four-room map by default,
//!   two food sources in corners, double-tap movement with a 10% slip, 392
//!   states, 12 tasks.
//! - [`options`]: the option space — four fixed two-step low-level options,
//!   goal-reaching options pretrained with Q-learning, the doorway/bottleneck
//!   baseline set, and a value-iteration oracle for expected steps-to-goal.
//! - [`smdp`]: budgeted SMDP Q-learning over primitive actions plus options,
//!   charging every primitive step against the learning budget.
//! - [`eval`]: low-variance empirical evaluation of frozen greedy policies
//!   over fixed start states, and aggregation across the 12 tasks.
//! - [`search`]: exhaustive enumeration and ranking of candidate option sets
//!   by estimated performance under a given budget.
//!
//! [`experiments`] adds the batch front end: baseline conditions, budget
//! sweeps, CSV emission, goal-distribution heatmaps, and reproducibility
//! manifests. The `boss` binary exposes the same functionality as
//! subcommands; the `examples/` directory shows library usage piece by piece.
//!
//! Reproducibility: all randomness flows through [`streams`], which derives
//! independent ChaCha streams per work item from a single master seed, so
//! results are identical regardless of worker count or execution order.

pub mod eval;
pub mod experiments;
pub mod gridworld;
pub mod options;
pub mod search;
pub mod smdp;
pub mod streams;
