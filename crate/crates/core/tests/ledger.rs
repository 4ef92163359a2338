mod common;

use common::*;
use conflux::dag::BlockId;
use conflux::ledger::{apply_tx, derive_tx_order, verdicts_csv, AccountId, LedgerState, Transaction, TxStatus};
use proptest::prelude::*;

#[test]
fn sample_verdicts() {
    let (file, s) = sample();
    let (verdicts, ledger) = derive_tx_order(&s.total_order(), &s).unwrap();
    let got: Vec<(u64, TxStatus, String)> = verdicts
        .iter()
        .map(|v| (v.txid, v.status, file.name(v.block)))
        .collect();
    assert_eq!(
        got,
        vec![
            (0, TxStatus::Applied, "Genesis".into()),
            (1, TxStatus::Applied, "A".into()),
            (2, TxStatus::Applied, "A".into()),
            (3, TxStatus::Conflict, "B".into()),
            (4, TxStatus::Applied, "B".into()),
            (4, TxStatus::Duplicate, "G".into()),
        ]
    );
    assert_eq!(ledger.balance(&"alice".into()), 10);
    assert_eq!(ledger.balance(&"dave".into()), 0);
    assert_eq!(ledger.total_balance(), 100);
    assert_eq!(
        verdicts_csv(&verdicts[3..4]),
        "txid,status,position,block\n3,conflict,3,2\n"
    );
}

#[test]
fn conflict_does_not_consume_the_txid() {
    let l = LedgerState::default();
    let (l, _) = apply_tx(&l, &Transaction::coinbase(1, "a", 5));
    let (l, s) = apply_tx(&l, &Transaction::transfer(2, "a", "b", 9));
    assert_eq!(s, TxStatus::Conflict);
    let (l, _) = apply_tx(&l, &Transaction::coinbase(3, "a", 5));
    let (l, s) = apply_tx(&l, &Transaction::transfer(2, "a", "b", 9));
    assert_eq!(s, TxStatus::Applied);
    assert_eq!(l.balance(&"b".into()), 9);
}

#[test]
fn degenerate_transfers_conflict() {
    let (l, _) = apply_tx(&LedgerState::default(), &Transaction::coinbase(1, "a", 5));
    assert_eq!(apply_tx(&l, &Transaction::transfer(2, "a", "b", 0)).1, TxStatus::Conflict);
    let mut no_payer = Transaction::transfer(3, "a", "b", 1);
    no_payer.payer = None;
    assert_eq!(apply_tx(&l, &no_payer).1, TxStatus::Conflict);
    let (l2, s) = apply_tx(&l, &Transaction::transfer(4, "a", "a", 5));
    assert_eq!(s, TxStatus::Applied);
    assert_eq!(l2.balance(&AccountId::from("a")), 5);
}

#[test]
fn unknown_block_in_order_is_an_error() {
    let (_, s) = sample();
    assert!(derive_tx_order(&[BlockId(0), BlockId(99)], &s).is_err());
}

fn tx_strategy() -> impl Strategy<Value = Transaction> {
    let acct = prop::sample::select(vec!["a", "b", "c", "d"]);
    prop_oneof![
        (0u64..30, acct.clone(), 0u64..50).prop_map(|(id, p, x)| Transaction::coinbase(id, p, x)),
        (0u64..30, acct.clone(), acct, 0u64..50).prop_map(|(id, f, t, x)| Transaction::transfer(id, f, t, x)),
    ]
}

proptest! {
    #[test]
    fn balances_are_conserved(txs in prop::collection::vec(tx_strategy(), 0..60)) {
        let mut l = LedgerState::default();
        let mut minted: u128 = 0;
        for tx in &txs {
            let before = l.clone();
            let status = l.apply(tx);
            match status {
                TxStatus::Applied => {
                    prop_assert!(!before.applied.contains(&tx.txid));
                    if tx.payer.is_none() {
                        minted += tx.amount as u128;
                    }
                }
                TxStatus::Duplicate => {
                    prop_assert!(before.applied.contains(&tx.txid));
                    prop_assert_eq!(&l, &before);
                }
                TxStatus::Conflict => prop_assert_eq!(&l, &before),
            }
            prop_assert_eq!(l.total_balance(), minted);
        }
    }
}
