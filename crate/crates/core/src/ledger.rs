//! Balance-model ledger and the transaction order derived from a block order.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dag::{BlockId, DagError, DagState};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AccountId(pub String);

impl From<&str> for AccountId {
    fn from(s: &str) -> Self {
        AccountId(s.to_string())
    }
}

impl fmt::Display for AccountId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TxKind {
    Transfer,
    Coinbase,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub txid: u64,
    pub kind: TxKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payer: Option<AccountId>,
    pub payee: AccountId,
    pub amount: u64,
}

impl Transaction {
    pub fn transfer(txid: u64, payer: impl Into<AccountId>, payee: impl Into<AccountId>, amount: u64) -> Self {
        Transaction {
            txid,
            kind: TxKind::Transfer,
            payer: Some(payer.into()),
            payee: payee.into(),
            amount,
        }
    }

    pub fn coinbase(txid: u64, payee: impl Into<AccountId>, amount: u64) -> Self {
        Transaction {
            txid,
            kind: TxKind::Coinbase,
            payer: None,
            payee: payee.into(),
            amount,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TxStatus {
    Applied,
    Duplicate,
    Conflict,
}

impl fmt::Display for TxStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TxStatus::Applied => "applied",
            TxStatus::Duplicate => "duplicate",
            TxStatus::Conflict => "conflict",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxVerdict {
    pub txid: u64,
    pub status: TxStatus,
    /// Index in the global transaction order.
    pub position: usize,
    pub block: BlockId,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerState {
    pub balances: BTreeMap<AccountId, u64>,
    pub applied: BTreeSet<u64>,
}

impl LedgerState {
    pub fn balance(&self, account: &AccountId) -> u64 {
        self.balances.get(account).copied().unwrap_or(0)
    }

    pub fn total_balance(&self) -> u128 {
        self.balances.values().map(|&v| v as u128).sum()
    }

    /// In-place form of [`apply_tx`].
    pub fn apply(&mut self, tx: &Transaction) -> TxStatus {
        if self.applied.contains(&tx.txid) {
            return TxStatus::Duplicate;
        }
        match tx.kind {
            TxKind::Coinbase => {}
            TxKind::Transfer => {
                // A transfer without a payer or with a zero amount is malformed;
                // it is discarded the same way as an unaffordable one.
                let Some(payer) = &tx.payer else {
                    return TxStatus::Conflict;
                };
                let held = self.balance(payer);
                if tx.amount == 0 || held < tx.amount {
                    return TxStatus::Conflict;
                }
                self.balances.insert(payer.clone(), held - tx.amount);
            }
        }
        *self.balances.entry(tx.payee.clone()).or_insert(0) += tx.amount;
        self.applied.insert(tx.txid);
        TxStatus::Applied
    }
}

/// Applies one transaction. A conflicting transaction is not recorded as
/// applied, so a later copy may still succeed.
pub fn apply_tx(ledger: &LedgerState, tx: &Transaction) -> (LedgerState, TxStatus) {
    let mut next = ledger.clone();
    let status = next.apply(tx);
    (next, status)
}

/// Walks the blocks in `block_order` and classifies every transaction in
/// appearance order.
pub fn derive_tx_order(
    block_order: &[BlockId],
    state: &DagState,
) -> Result<(Vec<TxVerdict>, LedgerState), DagError> {
    let mut ledger = LedgerState::default();
    let mut verdicts = Vec::new();
    for &b in block_order {
        let block = state.block(b).ok_or(DagError::UnknownBlock(b))?;
        for tx in &block.transactions {
            let status = ledger.apply(tx);
            verdicts.push(TxVerdict {
                txid: tx.txid,
                status,
                position: verdicts.len(),
                block: b,
            });
        }
    }
    Ok((verdicts, ledger))
}

/// CSV with columns `txid,status,position,block`.
pub fn verdicts_csv(verdicts: &[TxVerdict]) -> String {
    let mut out = String::from("txid,status,position,block\n");
    for v in verdicts {
        out.push_str(&format!("{},{},{},{}\n", v.txid, v.status, v.position, v.block));
    }
    out
}
