//! Library surface of the command-line tool, exposed so integration tests
//! drive the same code paths as the binary.

pub mod commands;
pub mod config;
