//! Approximate VCG double auction with immediate one-shot penalties.
//!
//! The crate is organised bottom-up:
//!
//! * [`market`]: agents, allocations, welfare and utilities.
//! * [`allocator`]: exact clearing oracle and the α-approximate allocator.
//! * [`mechanism`]: Clarke-pivot payments on the approximate allocation.
//! * [`enforcement`]: deviation detection and the penalized utility.
//! * [`grid`]: the stochastic prosumer environment that runs one market per slot.
//! * [`learning`]: a dependency-free multi-agent PPO.
//! * [`incentive`]: learning-free checks of the incentive gap and penalty threshold.
//! * [`experiments`]: sweep plans, metrics and manifests.
//! * [`io`]: atomic result files, CSV and SVG output.
//!
//! The guide under `book/` walks through each layer; its code blocks are
//! compiled as doc-tests of this crate.

// `!(x > 0.0)` rejects NaN as well; index loops mirror the math.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod allocator;
pub mod enforcement;
pub mod error;
pub mod experiments;
pub mod grid;
pub mod incentive;
pub mod io;
pub mod learning;
pub mod market;
pub mod mechanism;
pub mod rng;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub struct Introduction;
    #[doc = include_str!("../../../book/src/market.md")]
    pub struct Market;
    #[doc = include_str!("../../../book/src/allocator.md")]
    pub struct Allocator;
    #[doc = include_str!("../../../book/src/mechanism.md")]
    pub struct Mechanism;
    #[doc = include_str!("../../../book/src/enforcement.md")]
    pub struct Enforcement;
    #[doc = include_str!("../../../book/src/grid.md")]
    pub struct Grid;
    #[doc = include_str!("../../../book/src/learning.md")]
    pub struct Learning;
    #[doc = include_str!("../../../book/src/incentive.md")]
    pub struct Incentive;
    #[doc = include_str!("../../../book/src/experiments.md")]
    pub struct Experiments;
    #[doc = include_str!("../../../book/src/cli.md")]
    pub struct Cli;
}
