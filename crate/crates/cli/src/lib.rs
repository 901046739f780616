//! The `stars` command line tool and session server.

pub mod commands;
pub mod files;
pub mod server;
