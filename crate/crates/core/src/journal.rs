// SPDX-License-Identifier: Apache-2.0

//! Append-only journal of committed mutation batches.
//!
//! File layout: the magic line `DBN1\n`, then one record per batch, each
//! `<decimal byte length>:<json>\n`. A record cut short at the end of the
//! file is a torn write and is dropped; damage anywhere else is an error.

use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{prepare_trigger, Procedure, TriggerDef};
use crate::store::{Database, RowId, TableDef, TableRef};
use crate::value::Cells;

pub const MAGIC: &[u8] = b"DBN1\n";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op")]
pub enum JournalOp {
    CreateSchema {
        name: String,
    },
    CreateTable {
        def: TableDef,
    },
    PutProcedure {
        source: String,
    },
    PutTrigger {
        def: TriggerDef,
    },
    Insert {
        table: TableRef,
        row_id: RowId,
        cells: Cells,
    },
    Update {
        table: TableRef,
        row_id: RowId,
        cells: Cells,
    },
    Delete {
        table: TableRef,
        row_id: RowId,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Batch {
    pub txn: u64,
    pub ops: Vec<JournalOp>,
}

pub fn encode_record(batch: &Batch) -> Vec<u8> {
    let json = serde_json::to_vec(batch).expect("batches always serialize");
    let mut out = format!("{}:", json.len()).into_bytes();
    out.extend_from_slice(&json);
    out.push(b'\n');
    out
}

/// Decoded journal contents plus the length of the well-formed prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub batches: Vec<Batch>,
    pub valid_len: usize,
}

pub fn decode(bytes: &[u8]) -> Result<Decoded> {
    if bytes.len() < MAGIC.len() {
        return if MAGIC.starts_with(bytes) {
            Ok(Decoded {
                batches: Vec::new(),
                valid_len: 0,
            })
        } else {
            Err(Error::Journal("bad magic".into()))
        };
    }
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Journal("bad magic".into()));
    }
    let mut pos = MAGIC.len();
    let mut batches = Vec::new();
    while pos < bytes.len() {
        let rest = &bytes[pos..];
        let Some(colon) = rest.iter().position(|b| !b.is_ascii_digit()) else {
            break; // torn inside the length prefix
        };
        if rest[colon] != b':' || colon == 0 || colon > 19 {
            return Err(Error::Journal(format!("bad record header at byte {pos}")));
        }
        let len: usize = std::str::from_utf8(&rest[..colon])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Journal(format!("bad record length at byte {pos}")))?;
        let body_start = colon + 1;
        let Some(body_end) = body_start.checked_add(len) else {
            return Err(Error::Journal(format!("record length overflow at byte {pos}")));
        };
        if body_end >= rest.len() {
            break; // torn inside the body or before the newline
        }
        if rest[body_end] != b'\n' {
            return Err(Error::Journal(format!("missing record terminator at byte {pos}")));
        }
        let batch: Batch = serde_json::from_slice(&rest[body_start..body_end])
            .map_err(|e| Error::Journal(format!("corrupt record at byte {pos}: {e}")))?;
        batches.push(batch);
        pos += body_end + 1;
    }
    Ok(Decoded {
        batches,
        valid_len: pos,
    })
}

pub fn apply(db: &mut Database, op: &JournalOp) -> Result<()> {
    match op {
        JournalOp::CreateSchema { name } => db.create_schema(name),
        JournalOp::CreateTable { def } => db.create_table(def.clone()).map(|_| ()),
        JournalOp::PutProcedure { source } => {
            db.put_procedure(Arc::new(Procedure::parse(source)?));
            Ok(())
        }
        JournalOp::PutTrigger { def } => {
            let t = prepare_trigger(db, def.clone())?;
            db.push_trigger(Arc::new(t));
            Ok(())
        }
        JournalOp::Insert { table, row_id, cells } | JournalOp::Update { table, row_id, cells } => {
            db.table_mut(table)?.put(*row_id, cells.clone());
            Ok(())
        }
        JournalOp::Delete { table, row_id } => {
            db.table_mut(table)?.remove(*row_id);
            Ok(())
        }
    }
}

/// Rebuilds a database from decoded batches.
pub fn replay(batches: &[Batch]) -> Result<Database> {
    let mut db = Database::new();
    for (i, b) in batches.iter().enumerate() {
        for op in &b.ops {
            apply(&mut db, op).map_err(|e| Error::Journal(format!("replaying batch {i} (txn {}): {e}", b.txn)))?;
        }
    }
    Ok(db)
}

#[derive(Debug)]
pub struct Journal {
    file: File,
    path: PathBuf,
}

impl Journal {
    /// Opens or creates a journal, returning it with its existing batches.
    /// A torn tail is cut off so later appends stay well-formed.
    pub fn open(path: &Path) -> Result<(Journal, Vec<Batch>)> {
        let mut file = OpenOptions::new().read(true).append(true).create(true).open(path)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)?;
        let decoded = decode(&bytes)?;
        if decoded.valid_len < bytes.len() {
            tracing::warn!(
                path = %path.display(),
                dropped = bytes.len() - decoded.valid_len,
                "discarding torn journal tail"
            );
            file.set_len(decoded.valid_len as u64)?;
        }
        if decoded.valid_len == 0 {
            file.set_len(0)?;
            file.seek(SeekFrom::End(0))?;
            file.write_all(MAGIC)?;
            file.sync_data()?;
        }
        Ok((
            Journal {
                file,
                path: path.to_owned(),
            },
            decoded.batches,
        ))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, batch: &Batch) -> Result<()> {
        self.file.write_all(&encode_record(batch))?;
        self.file.sync_data()?;
        Ok(())
    }
}
