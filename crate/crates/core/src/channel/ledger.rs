//! One participant's running view of one channel.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use super::{fold_channel, ChannelSpec, FinalState, Receipt, SubReceipt};
use crate::crypto::{Address, Digest, KeyPair};
use crate::types::Amount;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LedgerError {
    #[error("insufficient channel balance")]
    Overspend,
    #[error("receipt does not belong to this channel")]
    Foreign,
    #[error("bad receipt signature")]
    BadSignature,
    #[error("receipt reuses sequence number {0}")]
    SeqReuse(u64),
    #[error("only the funder may pay in a sub-channel")]
    NotFunder,
    #[error("sub-channel receipt already issued for this transfer")]
    DuplicateSr,
    #[error("sub-channel receipt is invalid")]
    BadSr,
}

#[derive(Clone, Debug)]
pub struct ChannelLedger {
    pub spec: ChannelSpec,
    pub me: Address,
    next_seq: u64,
    balances: BTreeMap<Address, Amount>,
    receipts: BTreeMap<Digest, Receipt>,
    seen: BTreeSet<(Address, u64)>,
    srs: BTreeMap<Digest, SubReceipt>,
    /// The `Sr` this channel was opened with, for sub-channels.
    pub funding: Option<SubReceipt>,
}

impl ChannelLedger {
    pub fn new(spec: ChannelSpec, me: Address, funding: Option<SubReceipt>) -> Self {
        let balances = spec.initial.clone();
        ChannelLedger {
            spec,
            me,
            next_seq: 0,
            balances,
            receipts: BTreeMap::new(),
            seen: BTreeSet::new(),
            srs: BTreeMap::new(),
            funding,
        }
    }

    pub fn balance(&self, a: &Address) -> Amount {
        self.balances.get(a).copied().unwrap_or(0)
    }

    pub fn balances(&self) -> &BTreeMap<Address, Amount> {
        &self.balances
    }

    pub fn receipts(&self) -> impl Iterator<Item = &Receipt> {
        self.receipts.values()
    }

    pub fn receipt_count(&self) -> usize {
        self.receipts.len()
    }

    pub fn srs(&self) -> impl Iterator<Item = &SubReceipt> {
        self.srs.values()
    }

    pub fn counterparty(&self) -> Address {
        *self.spec.participants().find(|a| **a != self.me).expect("two participants")
    }

    fn record(&mut self, r: Receipt) {
        *self.balances.get_mut(&r.snd).expect("participant") -= r.v;
        *self.balances.get_mut(&r.rcv).expect("participant") += r.v;
        self.seen.insert((r.snd, r.seq));
        self.receipts.insert(r.id(), r);
    }

    /// Signs a payment to the counterparty. Honest callers keep `checked`.
    pub fn pay(&mut self, key: &KeyPair, v: Amount, checked: bool) -> Result<Receipt, LedgerError> {
        if self.spec.funder_only.is_some_and(|f| f != self.me) {
            return Err(LedgerError::NotFunder);
        }
        let have = self.balance(&self.me);
        if checked && have < v {
            return Err(LedgerError::Overspend);
        }
        let r = Receipt::new_signed(key, self.spec.path, self.next_seq, self.counterparty(), v);
        self.next_seq += 1;
        if have >= v {
            self.record(r.clone());
        } else {
            self.seen.insert((r.snd, r.seq));
            self.receipts.insert(r.id(), r.clone());
        }
        Ok(r)
    }

    /// Checks and records an incoming receipt.
    pub fn accept(&mut self, r: Receipt) -> Result<(), LedgerError> {
        if r.channel != self.spec.path || r.rcv != self.me || r.snd != self.counterparty() {
            return Err(LedgerError::Foreign);
        }
        if self.spec.funder_only.is_some_and(|f| f != r.snd) {
            return Err(LedgerError::NotFunder);
        }
        if !r.verify() {
            return Err(LedgerError::BadSignature);
        }
        if self.seen.contains(&(r.snd, r.seq)) {
            return Err(LedgerError::SeqReuse(r.seq));
        }
        if self.balance(&r.snd) < r.v {
            return Err(LedgerError::Overspend);
        }
        self.record(r);
        Ok(())
    }

    pub fn has_sr(&self, tr: &Digest) -> bool {
        self.srs.contains_key(tr)
    }

    /// Registers an `Sr` over one of this channel's applied receipts; the
    /// payee's share of it leaves this channel.
    pub fn delegate(&mut self, sr: SubReceipt) -> Result<(), LedgerError> {
        let id = sr.tr.id();
        if !sr.verify() || sr.tr.channel != self.spec.path || !self.receipts.contains_key(&id) {
            return Err(LedgerError::BadSr);
        }
        if self.srs.contains_key(&id) {
            return Err(LedgerError::DuplicateSr);
        }
        let payee = self.balances.get_mut(&sr.tr.rcv).ok_or(LedgerError::BadSr)?;
        *payee = payee.checked_sub(sr.tr.v).ok_or(LedgerError::Overspend)?;
        self.srs.insert(id, sr);
        Ok(())
    }

    /// Deterministic recomputation, the same fold the contract runs.
    pub fn recompute(&self) -> BTreeMap<Address, Amount> {
        let delegated: BTreeSet<Digest> = self.srs.keys().copied().collect();
        fold_channel(&self.spec, self.receipts.values(), &delegated)
            .map(|f| f.balances)
            .unwrap_or_else(|_| self.spec.initial.clone())
    }

    pub fn final_state(&self, key: &KeyPair) -> FinalState {
        FinalState::new_signed(key, self.spec.path, &self.recompute())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ChannelPath;
    use crate::types::{ChainId, SessionId};

    fn pair() -> (KeyPair, KeyPair, ChannelLedger, ChannelLedger) {
        let s = KeyPair::derive("S", 9);
        let r = KeyPair::derive("R", 9);
        let spec = ChannelSpec {
            path: ChannelPath::root(ChainId::Alpha, SessionId(1)),
            initial: BTreeMap::from([(s.address(), 100), (r.address(), 0)]),
            funder_only: None,
        };
        let ls = ChannelLedger::new(spec.clone(), s.address(), None);
        let lr = ChannelLedger::new(spec, r.address(), None);
        (s, r, ls, lr)
    }

    #[test]
    fn pay_updates_both_views() {
        let (s, r, mut ls, mut lr) = pair();
        let tr = ls.pay(&s, 30, true).unwrap();
        lr.accept(tr).unwrap();
        assert_eq!(ls.balance(&s.address()), 70);
        assert_eq!(lr.balance(&r.address()), 30);
        assert_eq!(ls.recompute(), *ls.balances());
    }

    #[test]
    fn zero_payment_is_legal() {
        let (s, _, mut ls, mut lr) = pair();
        lr.accept(ls.pay(&s, 0, true).unwrap()).unwrap();
        assert_eq!(ls.balances(), lr.balances());
    }

    #[test]
    fn overspend_is_refused_then_rejected() {
        let (s, _, mut ls, mut lr) = pair();
        assert_eq!(ls.pay(&s, 101, true), Err(LedgerError::Overspend));
        let forced = ls.pay(&s, 101, false).unwrap();
        assert_eq!(lr.accept(forced), Err(LedgerError::Overspend));
    }

    #[test]
    fn replayed_sequence_is_rejected() {
        let (s, _, mut ls, mut lr) = pair();
        let tr = ls.pay(&s, 1, true).unwrap();
        lr.accept(tr.clone()).unwrap();
        assert_eq!(lr.accept(tr), Err(LedgerError::SeqReuse(0)));
    }

    #[test]
    fn second_sr_on_same_receipt_is_refused() {
        let (s, r, mut ls, _) = pair();
        let d = KeyPair::derive("D", 9);
        let q = KeyPair::derive("Q", 9);
        let tr = ls.pay(&s, 30, true).unwrap();
        ls.delegate(SubReceipt::new_signed(&s, d.address(), tr.clone())).unwrap();
        assert_eq!(ls.balance(&r.address()), 0);
        assert_eq!(
            ls.delegate(SubReceipt::new_signed(&s, q.address(), tr.clone())),
            Err(LedgerError::DuplicateSr)
        );
        let forged = SubReceipt::new_signed(&r, d.address(), tr);
        assert!(!forged.verify());
    }
}
