//! Heuristic dynamic programming (HDP) neuro-control of a switched DC–DC boost
//! converter.
//!
//! * [`plant`]: switched converter model integrated with RK4.
//! * [`mlp`]: small feedforward networks with weight and input gradients.
//! * [`hdp`]: critic and action networks trained by temporal differences.
//! * [`baseline`]: the PI regulator the HDP controller is compared against.
//! * [`sim`]: closed-loop harness, scenarios, metrics and offline pretraining.
//! * [`config`] and [`cli`]: TOML run configuration and the command line.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baseline;
pub mod cli;
pub mod config;
pub mod hdp;
pub mod mlp;
pub mod plant;
pub mod sim;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/plant.md")]
    mod plant {}
    #[doc = include_str!("../../../book/src/networks.md")]
    mod networks {}
    #[doc = include_str!("../../../book/src/hdp.md")]
    mod hdp {}
    #[doc = include_str!("../../../book/src/pretraining.md")]
    mod pretraining {}
    #[doc = include_str!("../../../book/src/scenarios.md")]
    mod scenarios {}
    #[doc = include_str!("../../../book/src/configuration.md")]
    mod configuration {}
    #[doc = include_str!("../../../book/src/results.md")]
    mod results {}
}
