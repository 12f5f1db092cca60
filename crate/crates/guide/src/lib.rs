//! The book chapters under `book/src`, included as module docs so that
//! `cargo test` compiles and runs every snippet in them.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/signal-model.md")]
pub mod signal_model {}

#[doc = include_str!("../../../book/src/receivers.md")]
pub mod receivers {}

#[doc = include_str!("../../../book/src/games.md")]
pub mod games {}

#[doc = include_str!("../../../book/src/monte-carlo.md")]
pub mod monte_carlo {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
