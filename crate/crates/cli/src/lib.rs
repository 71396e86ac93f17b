//! Pipeline driver behind the `quasirb` binary: configuration, offline build,
//! online queries, verification against truth solves and timing.

pub mod bench;
pub mod config;
pub mod pipeline;
pub mod verify;

pub use config::RunConfig;
