//! Protocol services and their TCP front ends.

pub mod lock;
pub mod redir;
pub mod tcp;
