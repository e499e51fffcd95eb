//! Core data model and algorithms for petastore, a desk-scale federated
//! event store.
//!
//! Everything here is deterministic and allocation-only (`no_std` + `alloc`):
//! time is always passed in explicitly as a [`Timestamp`], and no module
//! touches the filesystem or the network. The `petastore` crate layers file
//! formats, wire servers, the scenario harness and the CLI on top.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod bridge;
pub mod conditions;
mod hash;
pub mod header;
pub mod lock;
pub mod model;
pub mod redirect;
pub mod state_id;
pub mod storage;
pub mod store;
pub mod time;

pub use header::{decode_event_header, encode_event_header, HeaderError};
pub use model::{ComponentKind, DataClass, EventHeader, EventRef, FederationId, Locator, ParseIdError};
pub use state_id::{compute_state_id, StateId, StateIdError};
pub use time::Timestamp;
