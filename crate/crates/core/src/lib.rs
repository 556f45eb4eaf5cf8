//! Location-privacy mechanisms for spatial crowdsourcing.
//!
//! The crate implements four families of protection for workers who must
//! travel to tasks, plus the attacks and metrics used to compare them:
//!
//! - [`dp`] and [`geocast`]: a trusted cellular provider publishes an
//!   adaptive-grid private spatial decomposition of worker locations under
//!   ε-differential privacy; the server picks a geocast region that reaches
//!   enough workers to meet an expected-utility target.
//! - [`piri`]: pull-mode k-anonymous cloaking over Voronoi cells, with
//!   range-independent query radii and set-cover query selection.
//! - [`stac`]: push-mode assignment over cloaked areas (global greedy on
//!   estimated distances, then per-worker refinement on true distances).
//! - [`exchange`]: entropy-driven trajectory exchange before reporting.
//! - [`adversary`]: triangulation of repeated cloaks and leak detectors.
//! - [`sim`]: scenario generation, a non-private baseline and the experiment
//!   runner; [`cli`] wraps it for the `scpriv` binary.
//!
//! See the `examples/` directory of this crate for one runnable program per
//! capability.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adversary;
pub mod cli;
pub mod dp;
pub mod error;
pub mod exchange;
pub mod geocast;
pub mod geometry;
pub mod model;
pub mod piri;
pub mod sim;
pub mod stac;

pub use error::{Error, Result};
pub use geometry::{Disc, Location, Rect};
pub use model::{
    AcceptanceModel, Assignment, DisclosureLedger, InfoKind, MetricsRecord, Party, Subject, Task, TaskId, Worker,
    WorkerId,
};
