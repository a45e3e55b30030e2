//! Random channel trees and a replay oracle that settles them from the
//! generator's own model, without looking at the Close submissions.

use std::collections::{BTreeMap, BTreeSet};

use crosschannel::channel::{ChannelPath, ChannelSpec, FinalState, Receipt, SubReceipt};
use crosschannel::contract::{settle_levels, ChannelFailure, CloseSubmission, SettlementError};
use crosschannel::crypto::{Address, KeyPair};
use crosschannel::types::{Amount, ChainId, SessionId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

const PARTICIPANTS: usize = 5;
const MAX_LEVEL: u32 = 2;
const MAX_RECEIPTS: usize = 10;

#[derive(Clone, Copy, Debug, Default)]
struct Flags {
    missing_final: bool,
    equivocate: bool,
    duplicate_sr: bool,
    overspend: bool,
    forged: bool,
    inflate: bool,
}

impl Flags {
    fn sample(rng: &mut ChaCha20Rng, p: f64) -> Self {
        Flags {
            missing_final: rng.gen_bool(p),
            equivocate: rng.gen_bool(p),
            duplicate_sr: rng.gen_bool(p),
            overspend: rng.gen_bool(p * 2.0),
            forged: rng.gen_bool(p),
            inflate: rng.gen_bool(p * 2.0),
        }
    }
}

struct Rec {
    snd: usize,
    rcv: usize,
    seq: u64,
    v: Amount,
    forged: bool,
    receipt: Receipt,
}

struct Child {
    /// Index of the funding receipt in the parent.
    funding: usize,
    srs: Vec<(usize, SubReceipt)>,
    chan: Chan,
}

struct Chan {
    path: ChannelPath,
    initial: BTreeMap<usize, Amount>,
    funder_only: Option<usize>,
    recs: Vec<Rec>,
    children: Vec<Child>,
    missing_final: Option<usize>,
    inflate: bool,
}

pub struct Tree {
    keys: Vec<KeyPair>,
    root: Chan,
}

fn gen_chan(
    rng: &mut ChaCha20Rng,
    keys: &[KeyPair],
    path: ChannelPath,
    initial: BTreeMap<usize, Amount>,
    funder_only: Option<usize>,
) -> Chan {
    let flags = Flags::sample(rng, 0.06);
    let parts: Vec<usize> = initial.keys().copied().collect();
    let n = rng.gen_range(0..=MAX_RECEIPTS);
    let mut seqs: BTreeMap<usize, u64> = BTreeMap::new();
    let mut recs = Vec::new();
    let top: Amount = initial.values().sum::<Amount>().max(1);
    for _ in 0..n {
        let snd = funder_only.unwrap_or_else(|| parts[rng.gen_range(0..parts.len())]);
        let rcv = *parts.iter().find(|p| **p != snd).expect("two participants");
        let v = if flags.overspend && rng.gen_bool(0.3) {
            top + rng.gen_range(1..5)
        } else {
            rng.gen_range(0..=top / 3)
        };
        let seq = *seqs.entry(snd).and_modify(|s| *s += 1).or_insert(0);
        let receipt = Receipt::new_signed(&keys[snd], path, seq, keys[rcv].address(), v);
        recs.push(Rec {
            snd,
            rcv,
            seq,
            v,
            forged: false,
            receipt,
        });
    }
    if flags.equivocate && !recs.is_empty() {
        let i = rng.gen_range(0..recs.len());
        let (snd, rcv, seq, v) = (recs[i].snd, recs[i].rcv, recs[i].seq, recs[i].v + 1);
        let receipt = Receipt::new_signed(&keys[snd], path, seq, keys[rcv].address(), v);
        recs.push(Rec {
            snd,
            rcv,
            seq,
            v,
            forged: false,
            receipt,
        });
    }
    if flags.forged {
        let snd = funder_only.unwrap_or(parts[0]);
        let rcv = *parts.iter().find(|p| **p != snd).expect("two participants");
        let seq = seqs.get(&snd).map_or(0, |s| s + 1);
        let mut receipt = Receipt::new_signed(&keys[rcv], path, seq, keys[rcv].address(), 1);
        receipt.snd = keys[snd].address();
        recs.push(Rec {
            snd,
            rcv,
            seq,
            v: 1,
            forged: true,
            receipt,
        });
    }

    let mut children = Vec::new();
    if path.level < MAX_LEVEL {
        let real = recs.len() - usize::from(flags.equivocate && n > 0) - usize::from(flags.forged);
        for i in 0..real {
            if !rng.gen_bool(0.25) {
                continue;
            }
            let payee = recs[i].rcv;
            let pick = |rng: &mut ChaCha20Rng, not: &[usize]| loop {
                let c = rng.gen_range(0..PARTICIPANTS);
                if !not.contains(&c) {
                    return c;
                }
            };
            let cp = pick(rng, &[payee]);
            let mut srs = vec![(cp, SubReceipt::new_signed(&keys[recs[i].snd], keys[cp].address(), recs[i].receipt.clone()))];
            if flags.duplicate_sr {
                let decoy = pick(rng, &[payee, cp]);
                srs.push((decoy, SubReceipt::new_signed(&keys[recs[i].snd], keys[decoy].address(), recs[i].receipt.clone())));
            }
            let child_path = path.child(&recs[i].receipt);
            let init = BTreeMap::from([(payee, recs[i].v), (cp, 0)]);
            let chan = gen_chan(rng, keys, child_path, init, Some(payee));
            children.push(Child { funding: i, srs, chan });
        }
    }
    let missing_final = flags.missing_final.then(|| parts[rng.gen_range(0..parts.len())]);
    Chan {
        path,
        initial,
        funder_only,
        recs,
        children,
        missing_final,
        inflate: flags.inflate,
    }
}

pub fn gen_tree(seed: u64) -> Tree {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let keys: Vec<KeyPair> = (0..PARTICIPANTS).map(|i| KeyPair::derive(&format!("p{i}"), seed)).collect();
    let path = ChannelPath::root(ChainId::Alpha, SessionId(seed));
    let initial = BTreeMap::from([(0, rng.gen_range(0..200)), (1, rng.gen_range(0..200))]);
    let root = gen_chan(&mut rng, &keys, path, initial, None);
    Tree { keys, root }
}

fn addr_map(keys: &[KeyPair], m: &BTreeMap<usize, Amount>) -> BTreeMap<Address, Amount> {
    m.iter().map(|(i, v)| (keys[*i].address(), *v)).collect()
}

pub fn submissions(tree: &Tree) -> BTreeMap<Address, CloseSubmission> {
    fn walk(keys: &[KeyPair], ch: &Chan, out: &mut BTreeMap<Address, CloseSubmission>) {
        let mut claim = addr_map(keys, &ch.initial);
        if ch.inflate {
            for v in claim.values_mut() {
                *v += 7;
            }
        }
        let trs: Vec<Receipt> = ch.recs.iter().map(|r| r.receipt.clone()).collect();
        let srs: Vec<SubReceipt> = ch.children.iter().flat_map(|c| c.srs.iter().map(|s| s.1.clone())).collect();
        for p in ch.initial.keys() {
            let sub = out.entry(keys[*p].address()).or_default();
            if ch.missing_final != Some(*p) {
                sub.finals.push(FinalState::new_signed(&keys[*p], ch.path, &claim));
            }
            sub.tr_list.extend(trs.iter().cloned());
            sub.sr_list.extend(srs.iter().cloned());
        }
        for c in &ch.children {
            walk(keys, &c.chan, out);
        }
    }
    let mut out = BTreeMap::new();
    walk(&tree.keys, &tree.root, &mut out);
    out
}

pub type Expected = (
    BTreeMap<Address, Amount>,
    BTreeMap<ChannelPath, (BTreeMap<Address, Amount>, Option<ChannelFailure>)>,
    Option<u32>,
);

/// Replays one channel in `(seq, sender address)` order. Returns balances
/// and the indices of receipts that moved value.
fn replay(
    keys: &[KeyPair],
    ch: &Chan,
    initial: &BTreeMap<usize, Amount>,
) -> Result<(BTreeMap<usize, Amount>, BTreeSet<usize>), (usize, u64)> {
    let delegated: BTreeSet<usize> = ch.children.iter().map(|c| c.funding).collect();
    let mut order: Vec<usize> = (0..ch.recs.len()).filter(|i| !ch.recs[*i].forged).collect();
    order.sort_by_key(|i| (ch.recs[*i].seq, keys[ch.recs[*i].snd].address()));
    for w in order.windows(2) {
        let (a, b) = (&ch.recs[w[0]], &ch.recs[w[1]]);
        if a.seq == b.seq && a.snd == b.snd && a.receipt != b.receipt {
            return Err((a.snd, a.seq));
        }
    }
    let mut bal = initial.clone();
    let mut applied = BTreeSet::new();
    for i in order {
        let r = &ch.recs[i];
        if bal[&r.snd] < r.v {
            continue;
        }
        *bal.get_mut(&r.snd).unwrap() -= r.v;
        if !delegated.contains(&i) {
            *bal.get_mut(&r.rcv).unwrap() += r.v;
        }
        applied.insert(i);
    }
    Ok((bal, applied))
}

pub fn oracle(tree: &Tree) -> Result<Expected, SettlementError> {
    let keys = &tree.keys;
    struct Work<'a> {
        ch: &'a Chan,
        initial: BTreeMap<usize, Amount>,
        parent: Option<(usize, usize, Amount, usize)>,
        dup: bool,
    }
    struct Done {
        path: ChannelPath,
        bal: BTreeMap<usize, Amount>,
        failure: Option<ChannelFailure>,
        applied: BTreeSet<usize>,
    }
    let mut done: Vec<Done> = Vec::new();
    let mut level: Vec<Work> = vec![Work {
        ch: &tree.root,
        initial: tree.root.initial.clone(),
        parent: None,
        dup: false,
    }];
    let mut failed_level = None;
    loop {
        let base = done.len();
        let mut any_failed = false;
        for w in &level {
            let lvl = w.ch.path.level;
            let mut failure = None;
            if let Some((p, funding, _, _)) = w.parent {
                if w.dup {
                    failure = Some(ChannelFailure::DuplicateSr);
                } else if !done[p].applied.contains(&funding) {
                    failure = Some(ChannelFailure::FundingNotApplied);
                }
            }
            if failure.is_none() {
                if let Some(m) = w.ch.missing_final {
                    if lvl == 0 {
                        return Err(SettlementError::MissingFinal(keys[m].address()));
                    }
                    failure = Some(ChannelFailure::MissingFinal(keys[m].address()));
                }
            }
            let mut bal = w.initial.clone();
            let mut applied = BTreeSet::new();
            if failure.is_none() {
                match replay(keys, w.ch, &w.initial) {
                    Ok((b, a)) => {
                        bal = b;
                        applied = a;
                    }
                    Err((snd, seq)) if lvl == 0 => {
                        return Err(SettlementError::Equivocation {
                            snd: keys[snd].address(),
                            seq,
                        })
                    }
                    Err((snd, seq)) => {
                        failure = Some(ChannelFailure::Equivocation {
                            snd: keys[snd].address(),
                            seq,
                        })
                    }
                }
            }
            any_failed |= failure.is_some();
            done.push(Done {
                path: w.ch.path,
                bal,
                failure,
                applied,
            });
        }
        if any_failed {
            failed_level = Some(level[0].ch.path.level);
            for (k, w) in level.iter().enumerate() {
                let d = &mut done[base + k];
                d.failure.get_or_insert(ChannelFailure::LevelFailed);
                if let Some((p, funding, v, payee)) = w.parent {
                    if done[p].applied.contains(&funding) {
                        *done[p].bal.get_mut(&payee).unwrap() += v;
                    }
                }
            }
            break;
        }
        let mut next = Vec::new();
        for (k, w) in level.iter().enumerate() {
            for c in &w.ch.children {
                let first = c.srs.iter().min_by_key(|s| s.1.id()).expect("one Sr");
                let payee = w.ch.recs[c.funding].rcv;
                let v = w.ch.recs[c.funding].v;
                next.push(Work {
                    ch: &c.chan,
                    initial: BTreeMap::from([(payee, v), (first.0, 0)]),
                    parent: Some((base + k, c.funding, v, payee)),
                    dup: c.srs.len() > 1,
                });
            }
        }
        if next.is_empty() {
            break;
        }
        level = next;
    }
    let mut alloc: BTreeMap<Address, Amount> = BTreeMap::new();
    let mut channels = BTreeMap::new();
    for d in done {
        let bal = addr_map(keys, &d.bal);
        for (a, v) in &bal {
            *alloc.entry(*a).or_default() += if d.failure.is_some() { 0 } else { *v };
        }
        channels.insert(d.path, (bal, d.failure));
    }
    Ok((alloc, channels, failed_level))
}

pub fn root_spec(tree: &Tree) -> ChannelSpec {
    ChannelSpec {
        path: tree.root.path,
        initial: addr_map(&tree.keys, &tree.root.initial),
        funder_only: tree.root.funder_only.map(|i| tree.keys[i].address()),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum TreeKind {
    Clean,
    Cascade,
    LevelZeroFailure,
}

/// Settles tree `seed` both ways. `Err` describes the first disagreement.
pub fn check_tree(seed: u64) -> Result<(TreeKind, String), String> {
    let tree = gen_tree(seed);
    let spec = root_spec(&tree);
    let got = settle_levels(&spec, &submissions(&tree));
    let want = oracle(&tree);
    match (&got, &want) {
        (Ok(report), Ok((alloc, channels, failed_level))) => {
            if &report.allocations != alloc {
                return Err(format!("seed {seed}: allocations {:?} vs {:?}", report.allocations, alloc));
            }
            if &report.failed_level != failed_level {
                return Err(format!("seed {seed}: failed level {:?} vs {:?}", report.failed_level, failed_level));
            }
            let mine: BTreeMap<_, _> = report
                .channels
                .iter()
                .map(|c| (c.path, (c.balances.clone(), c.failure.clone())))
                .collect();
            if &mine != channels {
                return Err(format!("seed {seed}: channel outcomes differ"));
            }
            let total: Amount = alloc.values().sum();
            if total != spec.funding() {
                return Err(format!("seed {seed}: {total} allocated of {}", spec.funding()));
            }
            let kind = if failed_level.is_some() { TreeKind::Cascade } else { TreeKind::Clean };
            Ok((kind, format!("{alloc:?}")))
        }
        (Err(a), Err(b)) if a == b => Ok((TreeKind::LevelZeroFailure, a.to_string())),
        _ => Err(format!("seed {seed}: contract {got:?} vs oracle {want:?}")),
    }
}
