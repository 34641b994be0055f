// SPDX-License-Identifier: Apache-2.0

//! A transactional table store that doubles as a network control plane.
//!
//! Device state is mirrored into tables. Stored procedures and triggers
//! react to changes, every effect is recorded in a queryable provenance
//! log, and committed device-backed rows are pushed to the fleet through
//! an outbox.

pub mod acl;
pub mod api;
pub mod error;
pub mod expr;
pub mod journal;
pub mod policy;
pub mod provenance;
pub mod proxy;
pub mod store;
pub mod syntax;
pub mod telemetry;
pub mod txn;
pub mod value;

pub use error::{Error, Result};
pub use txn::{Command, CommandResult, Kernel, Origin, TxnId};
pub use value::{Cells, Value, ValueKind};
