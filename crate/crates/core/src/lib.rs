//! Longest-prefix matching with Bloom filters steered by a binary search
//! tree over prefix lengths.

pub mod addr;
pub mod bloom;
pub mod engine;
pub mod error;
pub mod fib;
pub mod hash;
pub mod stats;
pub mod tree;

pub use addr::{encode_key, mask_address, parse_address, parse_prefix, Address, EncodedKey, Prefix, Width};
pub use bloom::{FilterParams, GuidedFilter};
pub use engine::{Engine, GuidedConfig, LinearConfig, Lookup, LookupPath, Scheme, TreeShape};
pub use error::{Error, Result};
pub use fib::{FibTable, Match, NextHopId};
pub use hash::HashSeed;
pub use stats::{LookupStats, StatsTotals};
pub use tree::{LengthIndex, LengthTree};
pub mod bench;
pub mod synth;
pub mod traffic;

pub use bench::{run_experiment, EngineConfig, Report};
pub use traffic::{Pattern, TrafficSpec};
