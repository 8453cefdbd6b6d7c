//! Report emission and 2-D projection for the `stereoprobe` command-line
//! tool: the binary's subcommands live in `main.rs`, while this library
//! carries the pieces integration tests drive directly.

pub mod reports;
pub mod tsne;
