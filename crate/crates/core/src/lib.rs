//! Segment-level preference optimization for structured reasoning traces.
//!
//! The crate is `no_std` (with `alloc`) and holds the algorithmic pieces:
//!
//! - [`longcot`]: parser/renderer for sectioned reasoning traces and the
//!   description/reasoning split.
//! - [`rewards`]: aggregation of judge sub-scores into the four rewards and
//!   the two composite segment scores.
//! - [`judge`]: the judge contract, the rule-based mock judge and the reward
//!   prompt template.
//! - [`fdpo`]: the fine-grained DPO objective, a tabular bigram reference
//!   policy with exact gradients, and a gradient-descent trainer.
//! - [`m3cts`]: multi-model tree search over reasoning steps.
//! - [`pairgen`]: candidate pooling, best/worst selection and
//!   conclusion-perturbation negatives.
//! - [`eval`] and [`experiment`]: success metrics and the DPO vs fDPO
//!   desk-scale comparison.
//!
//! File formats, remote/replay judges and the command-line tool live in the
//! companion `segpref` crate.

#![no_std]

extern crate alloc;

#[cfg(any(test, feature = "std"))]
extern crate std;

pub mod eval;
pub mod experiment;
pub mod fdpo;
pub mod judge;
pub mod longcot;
pub mod m3cts;
pub mod pairgen;
pub mod rewards;
pub mod synth;
pub mod task;
mod text;

pub use text::sha256_hex;

pub use longcot::{LongCoTResponse, Segment};
pub use rewards::SegmentScores;
pub use task::TaskInstance;
