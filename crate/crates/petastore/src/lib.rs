//! File formats, servers, the scenario harness and the command line for
//! petastore. Algorithms live in `petastore-core`.

pub mod catalog;
pub mod cdbfile;
pub mod cli;
pub mod files;
pub mod harness;
pub mod server;
