//! LT fountain codes under inactivation decoding.
//!
//! - [`gf2`]: sparse and dense binary matrices.
//! - [`degree_dist`]: output degree distributions (robust soliton, truncated,
//!   linear random fountain).
//! - [`lt_codec`]: encoder and inactivation decoder.
//! - [`ripple_model`]: expected number of inactivations, without simulation.
//! - [`failure_bound`]: extended-precision lower bound on decoding failure.
//! - [`sa_optimizer`]: simulated-annealing distribution design.
//! - [`harness`]: seeded Monte Carlo runs and CSV output.
//!
//! ```
//! use ltinact::degree_dist::make_rsd;
//! use ltinact::ripple_model::predict_inactivations;
//!
//! let d = make_rsd(1000, 0.09266, 0.001993).unwrap();
//! let p = predict_inactivations(1000, 0.2, &d);
//! assert!(p.n_inact_total > 50.0 && p.n_inact_total < 150.0);
//! ```

pub mod degree_dist;
pub mod failure_bound;
pub mod gf2;
pub mod harness;
pub mod lt_codec;
pub mod ripple_model;
pub mod sa_optimizer;

// The guide's snippets run as doc-tests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/decoding.md")]
    mod decoding {}
    #[doc = include_str!("../../../book/src/distributions.md")]
    mod distributions {}
    #[doc = include_str!("../../../book/src/ripple-model.md")]
    mod ripple_model {}
    #[doc = include_str!("../../../book/src/failure-bound.md")]
    mod failure_bound {}
    #[doc = include_str!("../../../book/src/annealing.md")]
    mod annealing {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
