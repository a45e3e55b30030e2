//! Level-by-level settlement of a channel tree from the parties' Close data.
//!
//! Level 0 is checked first, then every sub-channel one level at a time. A
//! failure anywhere in level `l >= 1` fails every channel at level `l` and
//! above; the funding receipt of each failed level-`l` channel is credited
//! back to its payee in the parent. A failure at level 0 fails the session.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::channel::{fold_channel, ChannelPath, ChannelSpec, FinalState, Receipt, SubReceipt};
use crate::codec::{Canonical, CodecError, Decode, Decoder, Encoder};
use crate::crypto::{Address, Digest};
use crate::types::Amount;

/// Everything one participant hands the contract at Close.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CloseSubmission {
    pub finals: Vec<FinalState>,
    pub sr_list: Vec<SubReceipt>,
    pub tr_list: Vec<Receipt>,
}

impl Canonical for CloseSubmission {
    fn encode(&self, enc: &mut Encoder) {
        enc.list(&self.finals).list(&self.sr_list).list(&self.tr_list);
    }
}

impl Decode for CloseSubmission {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(CloseSubmission {
            finals: dec.list()?,
            sr_list: dec.list()?,
            tr_list: dec.list()?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ChannelFailure {
    Equivocation { snd: Address, seq: u64 },
    DuplicateSr,
    FundingNotApplied,
    MissingFinal(Address),
    /// Another channel at this level or below failed.
    LevelFailed,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SettlementError {
    #[error("level-0 final state missing from {0}")]
    MissingFinal(Address),
    #[error("level-0 equivocation by {snd} at seq {seq}")]
    Equivocation { snd: Address, seq: u64 },
    #[error("settlement does not conserve funds: {got} != {expected}")]
    Conservation { got: Amount, expected: Amount },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChannelOutcome {
    pub path: ChannelPath,
    pub balances: BTreeMap<Address, Amount>,
    pub failure: Option<ChannelFailure>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SettlementReport {
    pub allocations: BTreeMap<Address, Amount>,
    pub channels: Vec<ChannelOutcome>,
    pub failed_level: Option<u32>,
    /// Signed claims whose balances disagree with the recomputation.
    pub overridden_claims: u32,
}

struct Node {
    spec: ChannelSpec,
    parent: Option<usize>,
    funding: Option<SubReceipt>,
}

/// Recomputes every channel's balances from the submitted receipts.
/// Claimed final states only matter as proof that a participant closed.
pub fn settle_levels(
    root: &ChannelSpec,
    submissions: &BTreeMap<Address, CloseSubmission>,
) -> Result<SettlementReport, SettlementError> {
    let mut pool: BTreeMap<Digest, &Receipt> = BTreeMap::new();
    let mut srs: BTreeMap<Digest, BTreeMap<Digest, &SubReceipt>> = BTreeMap::new();
    let mut finals: BTreeMap<(ChannelPath, Address), &FinalState> = BTreeMap::new();
    for (sender, sub) in submissions {
        for tr in &sub.tr_list {
            pool.entry(tr.id()).or_insert(tr);
        }
        for sr in &sub.sr_list {
            pool.entry(sr.tr.id()).or_insert(&sr.tr);
            if sr.verify() {
                srs.entry(sr.tr.id()).or_default().insert(sr.id(), sr);
            }
        }
        for f in &sub.finals {
            if f.submitter == *sender && f.verify() {
                finals.entry((f.channel, f.submitter)).or_insert(f);
            }
        }
    }
    // Signature-valid receipts are kept even if their content is odd; the
    // fold decides what counts.
    let receipts: Vec<&Receipt> = pool.values().copied().collect();

    let mut nodes: Vec<Node> = vec![Node {
        spec: root.clone(),
        parent: None,
        funding: None,
    }];
    let mut outcomes: Vec<ChannelOutcome> = Vec::new();
    let mut applied: Vec<BTreeSet<Digest>> = Vec::new();
    let mut level_start = 0usize;
    let mut failed_level = None;

    loop {
        let level_end = nodes.len();
        let level = nodes[level_start].spec.path.level;
        let mut level_failed = false;
        for idx in level_start..level_end {
            let node = &nodes[idx];
            let path = node.spec.path;
            let delegated: BTreeSet<Digest> = srs
                .iter()
                .filter(|(_, by_id)| by_id.values().next().is_some_and(|sr| sr.tr.channel == path))
                .map(|(tr_id, _)| *tr_id)
                .collect();
            let mut failure = None;
            if let (Some(sr), Some(parent)) = (&node.funding, node.parent) {
                let tr_id = sr.tr.id();
                if srs[&tr_id].len() > 1 {
                    failure = Some(ChannelFailure::DuplicateSr);
                } else if !applied[parent].contains(&tr_id) {
                    failure = Some(ChannelFailure::FundingNotApplied);
                }
            }
            if failure.is_none() {
                if let Some(p) = node.spec.participants().find(|p| !finals.contains_key(&(path, **p))) {
                    if level == 0 {
                        return Err(SettlementError::MissingFinal(*p));
                    }
                    failure = Some(ChannelFailure::MissingFinal(*p));
                }
            }
            let mut balances = node.spec.initial.clone();
            let mut this_applied = BTreeSet::new();
            if failure.is_none() {
                match fold_channel(&node.spec, receipts.iter().copied(), &delegated) {
                    Ok(res) => {
                        balances = res.balances;
                        this_applied = res.applied.into_iter().collect();
                    }
                    Err(e) if level == 0 => {
                        return Err(SettlementError::Equivocation { snd: e.snd, seq: e.seq })
                    }
                    Err(e) => failure = Some(ChannelFailure::Equivocation { snd: e.snd, seq: e.seq }),
                }
            }
            level_failed |= failure.is_some();
            outcomes.push(ChannelOutcome {
                path,
                balances,
                failure,
            });
            applied.push(this_applied);
        }

        if level_failed {
            failed_level = Some(level);
            for idx in level_start..level_end {
                let outcome = &mut outcomes[idx];
                if outcome.failure.is_none() {
                    outcome.failure = Some(ChannelFailure::LevelFailed);
                }
                let node = &nodes[idx];
                let (Some(sr), Some(parent)) = (&node.funding, node.parent) else {
                    continue;
                };
                if applied[parent].contains(&sr.tr.id()) {
                    *outcomes[parent].balances.get_mut(&sr.tr.rcv).expect("payee in parent") += sr.tr.v;
                }
            }
            break;
        }

        for idx in level_start..level_end {
            let path = nodes[idx].spec.path;
            for by_id in srs.values() {
                let sr = by_id.values().next().expect("non-empty");
                if sr.tr.channel != path {
                    continue;
                }
                nodes.push(Node {
                    spec: ChannelSpec {
                        path: sr.child_path(),
                        initial: sr.child_funding(),
                        funder_only: Some(sr.tr.rcv),
                    },
                    parent: Some(idx),
                    funding: Some((*sr).clone()),
                });
            }
        }
        if nodes.len() == level_end {
            break;
        }
        level_start = level_end;
    }

    let mut allocations: BTreeMap<Address, Amount> = BTreeMap::new();
    let mut overridden_claims = 0;
    for (o, node) in outcomes.iter_mut().zip(&nodes) {
        if o.failure.is_some() {
            // Failed channels hand nothing out directly.
            for a in o.balances.keys() {
                allocations.entry(*a).or_default();
            }
            continue;
        }
        for (a, v) in &o.balances {
            *allocations.entry(*a).or_default() += v;
        }
        for p in node.spec.participants() {
            if let Some(f) = finals.get(&(o.path, *p)) {
                let claimed: BTreeMap<Address, Amount> = f.balances.iter().copied().collect();
                if claimed != o.balances {
                    overridden_claims += 1;
                }
            }
        }
    }
    let got: Amount = allocations.values().sum();
    let expected = root.funding();
    if got != expected {
        return Err(SettlementError::Conservation { got, expected });
    }
    Ok(SettlementReport {
        allocations,
        channels: outcomes,
        failed_level,
        overridden_claims,
    })
}
