//! A toy decoder-only transformer whose KV cache is an explicit, bounded
//! multi-state: each layer keeps a list of per-token key/value states, and a
//! pluggable compression policy (Window, Window+i, H2O, TOVA) evicts states
//! to keep that list at a fixed capacity.
//!
//! The crate also contains the evaluation harness (sequential decoding,
//! masked-parallel perplexity, scripted simulation), positional-gap
//! remapping for decoding past the training length, and analyses over the
//! append/evict log.

pub mod analysis;
pub mod error;
pub mod eval;
mod fmt;
pub mod model;
pub mod policy;
pub mod remap;
pub mod rope;
pub mod state;
pub mod tensor;
pub mod trace;
pub mod weights_io;

pub use error::{Error, Result};
pub use fmt::fmt_g6;
pub use model::{init_random_model, AttentionRow, Model, ModelConfig, ModelWeights, PositionMode};
pub use policy::{PolicyDecision, PolicyKind, PolicySpec};
pub use state::{Growth, MultiState, StateMeta};
pub use trace::{Action, RetentionTrace, TraceEvent};
