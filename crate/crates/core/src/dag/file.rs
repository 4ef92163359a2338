//! Line-oriented DAG file format.
//!
//! ```text
//! #conflux-dag v1
//! {"id":0,"parent":null,"refs":[],"txs":[],"timestamp":0.0}
//! {"id":1,"parent":0,"refs":[],"txs":[],"timestamp":1.0,"label":"A"}
//! ```
//!
//! The first non-blank line must be the version header. Other lines starting
//! with `#` are comments. Records may appear in any order; exactly one must
//! have a null parent.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Block, BlockId, DagError, DagState, Miner};
use crate::ledger::Transaction;

pub const DAG_FILE_HEADER: &str = "#conflux-dag v1";

#[derive(Debug, Error)]
pub enum DagFileError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("missing `{DAG_FILE_HEADER}` header line")]
    MissingHeader,
    #[error("no genesis record (a record with a null parent)")]
    MissingGenesis,
    #[error("line {line}: second genesis record")]
    MultipleGenesis { line: usize },
    #[error("line {line}: {source}")]
    Invalid { line: usize, source: DagError },
    #[error("blocks with missing ancestry: {}", join(.0))]
    Unresolved(Vec<BlockId>),
}

fn join(ids: &[BlockId]) -> String {
    ids.iter().map(|b| b.to_string()).collect::<Vec<_>>().join(", ")
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: u64,
    parent: Option<u64>,
    #[serde(default)]
    refs: Vec<u64>,
    #[serde(default)]
    txs: Vec<Transaction>,
    #[serde(default)]
    timestamp: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    miner: Option<Miner>,
}

/// Parsed file contents: the blocks in file order plus optional labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DagFile {
    pub blocks: Vec<Block>,
    pub labels: BTreeMap<BlockId, String>,
    lines: Vec<usize>,
}

impl DagFile {
    /// Builds the graph. Insertion follows file order, so out-of-order
    /// records go through the pending buffer.
    pub fn into_state(&self) -> Result<DagState, DagFileError> {
        let gpos = self
            .blocks
            .iter()
            .position(|b| b.parent.is_none())
            .ok_or(DagFileError::MissingGenesis)?;
        let mut state = DagState::new(self.blocks[gpos].clone()).map_err(|source| DagFileError::Invalid {
            line: self.lines[gpos],
            source,
        })?;
        for (k, b) in self.blocks.iter().enumerate() {
            if k == gpos {
                continue;
            }
            if b.parent.is_none() {
                return Err(DagFileError::MultipleGenesis { line: self.lines[k] });
            }
            state.insert_block(b.clone()).map_err(|source| DagFileError::Invalid {
                line: self.lines[k],
                source,
            })?;
        }
        let pending = state.pending_ids();
        if !pending.is_empty() {
            return Err(DagFileError::Unresolved(pending.into_iter().collect()));
        }
        Ok(state)
    }

    /// Label of a block, or its numeric id.
    pub fn name(&self, id: BlockId) -> String {
        self.labels.get(&id).cloned().unwrap_or_else(|| id.to_string())
    }
}

pub fn parse_dag_file(text: &str) -> Result<DagFile, DagFileError> {
    let mut blocks = Vec::new();
    let mut labels = BTreeMap::new();
    let mut lines = Vec::new();
    let mut seen_header = false;
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        if !seen_header {
            if trimmed != DAG_FILE_HEADER {
                return Err(DagFileError::MissingHeader);
            }
            seen_header = true;
            continue;
        }
        if trimmed.starts_with('#') {
            continue;
        }
        let rec: Record = serde_json::from_str(trimmed).map_err(|e| DagFileError::Parse {
            line,
            message: e.to_string(),
        })?;
        let id = BlockId(rec.id);
        if let Some(label) = rec.label {
            labels.insert(id, label);
        }
        blocks.push(Block {
            id,
            parent: rec.parent.map(BlockId),
            references: rec.refs.into_iter().map(BlockId).collect(),
            transactions: rec.txs,
            timestamp: rec.timestamp,
            miner: rec.miner.unwrap_or(Miner::Honest(0)),
        });
        lines.push(line);
    }
    if !seen_header {
        return Err(DagFileError::MissingHeader);
    }
    Ok(DagFile { blocks, labels, lines })
}

/// Serializes a state in topological order.
pub fn write_dag_file(state: &DagState, labels: &BTreeMap<BlockId, String>) -> String {
    let mut out = String::from(DAG_FILE_HEADER);
    out.push('\n');
    for b in state.blocks() {
        let rec = Record {
            id: b.id.0,
            parent: b.parent.map(|p| p.0),
            refs: b.references.iter().map(|r| r.0).collect(),
            txs: b.transactions.clone(),
            timestamp: b.timestamp,
            label: labels.get(&b.id).cloned(),
            miner: Some(b.miner),
        };
        out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
        out.push('\n');
    }
    out
}
