//! Two chains, a network and every actor of a scenario, advanced together.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use super::baseline::HtlcActor;
use super::config::{AmountDist, Baseline, Phase, ScenarioConfig};
use crate::chain::{Chain, ChainConfig, ChainEvent};
use crate::channel::{
    Action, ChannelPath, ChannelSpec, ChildPlan, Commodity, Ctx, ExchangeSetup, MinerActor, Mode, Notice,
    OffChain, PartyActor, PartyFlags, ShareMsg, SideRole, SideSetup,
};
use crate::codec::Canonical;
use crate::contract::{share_message, ContractConfig, ContractEvent, OnChainTx, SessionState, TxKind};
use crate::crypto::{hash, hash_parts, Address, Digest, GroupParams, KeyPair, Plaintext};
use crate::proof::{MacBackend, ProofBackend, Relation};
use crate::simnet::{ChoiceSource, Latency, LatencyModel, NetStats, Network, NodeId, Simulated};
use crate::types::{Amount, ChainId, SessionId, Tick};
use crate::vss::{self, KeyShare};

/// Bytes charged for a contract event delivery.
const NOTICE_SIZE: u64 = 64;
/// Spare on-chain balance every level-0 party starts with.
const SPARE: Amount = 100;

pub fn chain_node(c: ChainId) -> NodeId {
    c.index() as NodeId
}

#[derive(Clone, Debug)]
pub enum Msg {
    Tx(Box<OnChainTx>),
    Notice(Arc<Notice>),
    Off(OffChain),
    Wake(u64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Role {
    Chain(ChainId),
    Sender,
    Receiver,
    Member,
    Miner(ChainId),
}

#[derive(Clone, Copy, Debug)]
enum Slot {
    Chain(ChainId),
    Party(usize),
    Miner(usize),
    Htlc(usize),
}

#[derive(Clone, Debug, Serialize)]
#[serde(untagged)]
pub enum TraceRecord {
    Chain(ChainEvent),
    Note { tick: Tick, actor: String, note: String },
}

/// What the Byzantine miners of one chain held of one dealt key.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct CoalitionStat {
    pub chain: Option<ChainId>,
    pub session: u64,
    pub t: u32,
    /// Largest number of distinct shares the coalition held at any tick
    /// before recovery was requested.
    pub max_before_recover: u32,
    /// The coalition could reconstruct the key before recovery.
    pub early_recovery: bool,
    pub recover_requested: bool,
    #[serde(skip)]
    h_k: Option<Digest>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RunViolation {
    pub event_index: usize,
    pub message: String,
}

#[derive(Clone)]
pub struct World {
    cfg: Arc<ScenarioConfig>,
    params: &'static GroupParams,
    now: Tick,
    chains: [Chain; 2],
    net: Network<Msg>,
    slots: Vec<Slot>,
    roles: Vec<Role>,
    names: Vec<String>,
    parties: Vec<PartyActor>,
    miners: Vec<MinerActor>,
    htlc: Vec<HtlcActor>,
    watchers: [BTreeMap<SessionId, Vec<NodeId>>; 2],
    miner_nodes: [Vec<NodeId>; 2],
    sessions: Vec<SessionId>,
    genesis: [BTreeMap<Address, Amount>; 2],
    trace: Vec<TraceRecord>,
    steering: Option<Vec<Tick>>,
    deferred: Vec<(NodeId, NodeId, Latency)>,
    coalition: BTreeMap<(ChainId, SessionId), CoalitionStat>,
    violations: Vec<RunViolation>,
    first_receipt: Option<Tick>,
    last_receipt: Option<Tick>,
}

struct Builder {
    slots: Vec<Slot>,
    roles: Vec<Role>,
    names: Vec<String>,
}

impl Builder {
    fn add(&mut self, slot: Slot, role: Role, name: String) -> NodeId {
        self.slots.push(slot);
        self.roles.push(role);
        self.names.push(name);
        (self.slots.len() - 1) as NodeId
    }
}

fn sub_rng(seed: u64, label: &str) -> ChaCha20Rng {
    ChaCha20Rng::from_seed(hash_parts(&[b"crosschannel/rng", &seed.to_be_bytes(), label.as_bytes()]).0)
}

fn amounts(dist: AmountDist, n: u64, rng: &mut ChaCha20Rng) -> Vec<Amount> {
    (0..n)
        .map(|_| match dist {
            AmountDist::Fixed { value } => value,
            AmountDist::Uniform { min, max } => rng.gen_range(min..=max.max(min)),
        })
        .collect()
}

impl World {
    /// Builds the scenario without checking the protocol inequalities.
    pub fn build(cfg: &ScenarioConfig) -> World {
        let cfg = Arc::new(cfg.clone());
        let params = cfg.group.params();
        let seed = cfg.seed;
        let key = |label: &str| KeyPair::derive(label, seed);
        let mut b = Builder {
            slots: Vec::new(),
            roles: Vec::new(),
            names: Vec::new(),
        };
        for c in ChainId::BOTH {
            b.add(Slot::Chain(c), Role::Chain(c), c.name().to_string());
        }

        // Miners first so parties can address them.
        let n_node = cfg.byzantine.n_node as usize;
        let ell = cfg.byzantine.ell as usize;
        let byz: BTreeSet<usize> = match &cfg.byzantine.placement {
            Some(p) => p.iter().map(|i| *i as usize).collect(),
            None => sample(&mut sub_rng(seed, "placement"), n_node, ell.min(n_node))
                .into_iter()
                .collect(),
        };
        let mut miners = Vec::new();
        let mut miner_nodes: [Vec<NodeId>; 2] = [Vec::new(), Vec::new()];
        let mut miner_dirs: [BTreeMap<Address, NodeId>; 2] = [BTreeMap::new(), BTreeMap::new()];
        for c in ChainId::BOTH {
            for i in 0..n_node {
                let name = format!("miner.{}.{i}", c.name());
                let k = key(&name);
                let node = b.add(Slot::Miner(miners.len()), Role::Miner(c), name.clone());
                miner_dirs[c.index()].insert(k.address(), node);
                miner_nodes[c.index()].push(node);
                let assist = c == ChainId::Alpha && cfg.timers.t5.is_some();
                miners.push(MinerActor::new(
                    name,
                    node,
                    c,
                    k,
                    byz.contains(&i),
                    cfg.byzantine.behavior,
                    params,
                    assist,
                ));
            }
        }
        let miner_dirs = miner_dirs.map(Arc::new);

        let mut genesis: [BTreeMap<Address, Amount>; 2] = [BTreeMap::new(), BTreeMap::new()];
        for m in &miners {
            genesis[m.chain.index()].insert(m.address(), 0);
        }
        let mut parties = Vec::new();
        let mut htlc = Vec::new();
        let mut watchers: [BTreeMap<SessionId, Vec<NodeId>>; 2] = [BTreeMap::new(), BTreeMap::new()];
        let mut sessions = Vec::new();
        let mut amount_rng = sub_rng(seed, "amounts");
        let n = cfg.workload.receipts;

        for ch in 0..cfg.topology.channels {
            let sk = [key(&format!("S{ch}.alpha")), key(&format!("S{ch}.beta"))];
            let rk = [key(&format!("R{ch}.alpha")), key(&format!("R{ch}.beta"))];
            let plans = [
                amounts(cfg.workload.amount, n, &mut amount_rng),
                amounts(cfg.workload.amount, n, &mut amount_rng),
            ];

            if cfg.baseline == Baseline::PlainHtlc {
                let first = 1 + ch as u64 * n;
                let s_node = b.add(Slot::Htlc(htlc.len()), Role::Sender, format!("S{ch}"));
                let r_node = b.add(Slot::Htlc(htlc.len() + 1), Role::Receiver, format!("R{ch}"));
                let total: Amount = plans[0].iter().sum();
                genesis[0].insert(sk[0].address(), total + SPARE);
                genesis[1].insert(sk[1].address(), SPARE);
                genesis[0].insert(rk[0].address(), SPARE);
                genesis[1].insert(rk[1].address(), total + SPARE);
                let s_addr = [sk[0].address(), sk[1].address()];
                let r_addr = [rk[0].address(), rk[1].address()];
                htlc.push(HtlcActor::new(
                    format!("S{ch}"),
                    true,
                    sk,
                    r_addr,
                    first,
                    &plans[0],
                    sub_rng(seed, &format!("S{ch}")),
                ));
                htlc.push(HtlcActor::new(
                    format!("R{ch}"),
                    false,
                    rk,
                    s_addr,
                    first,
                    &plans[0],
                    sub_rng(seed, &format!("R{ch}")),
                ));
                for i in 0..n {
                    let sid = SessionId(first + i);
                    sessions.push(sid);
                    for c in ChainId::BOTH {
                        watchers[c.index()].entry(sid).or_default().extend([s_node, r_node]);
                    }
                }
                continue;
            }

            let sid = SessionId(ch as u64 + 1);
            sessions.push(sid);
            let s_node = b.add(Slot::Party(parties.len()), Role::Sender, format!("S{ch}"));
            let r_node = b.add(Slot::Party(parties.len() + 1), Role::Receiver, format!("R{ch}"));
            // Sub-channel members hang under the level-0 payee of each chain.
            let mut members: [Vec<(NodeId, KeyPair)>; 2] = [Vec::new(), Vec::new()];
            for c in ChainId::BOTH {
                for j in 1..cfg.topology.levels {
                    let name = format!("D{ch}.{}.{j}", c.name());
                    let k = key(&name);
                    let node = b.add(Slot::Party(parties.len() + 2 + members[0].len() + members[1].len()), Role::Member, name);
                    genesis[c.index()].insert(k.address(), 0);
                    members[c.index()].push((node, k));
                }
            }
            let (s_flags, r_flags) = (cfg.adversary.sender, cfg.adversary.receiver);
            let mut sides: [Vec<SideSetup>; 2] = [Vec::new(), Vec::new()];
            for c in ChainId::BOTH {
                let (payer, payee) = match c {
                    ChainId::Alpha => (&sk[0], &rk[0]),
                    ChainId::Beta => (&rk[1], &sk[1]),
                };
                let (payer_node, payee_node) = match c {
                    ChainId::Alpha => (s_node, r_node),
                    ChainId::Beta => (r_node, s_node),
                };
                let spec = ChannelSpec {
                    path: ChannelPath::root(c, sid),
                    initial: BTreeMap::from([
                        (payer.address(), cfg.topology.funding),
                        (payee.address(), cfg.topology.counter_deposit),
                    ]),
                    funder_only: None,
                };
                genesis[c.index()].insert(payer.address(), cfg.topology.funding + SPARE);
                genesis[c.index()].insert(payee.address(), cfg.topology.counter_deposit + SPARE);
                let child = |j: usize| {
                    members[c.index()].get(j).map(|(node, k)| ChildPlan {
                        member: *node,
                        member_addr: k.address(),
                        receipts: cfg.topology.sub_receipts,
                    })
                };
                let payer_side = SideSetup {
                    chain: c,
                    key: payer.clone(),
                    session: sid,
                    role: SideRole::Payer {
                        peer: payee_node,
                        spec: spec.clone(),
                        plan: plans[c.index()].clone(),
                    },
                    child: None,
                };
                let payee_side = SideSetup {
                    chain: c,
                    key: payee.clone(),
                    session: sid,
                    role: SideRole::Payee {
                        peer: payer_node,
                        spec,
                        expect: n as usize,
                    },
                    child: child(0),
                };
                // Index 0 collects S's sides, index 1 R's.
                let (s_side, r_side) = match c {
                    ChainId::Alpha => (payer_side, payee_side),
                    ChainId::Beta => (payee_side, payer_side),
                };
                sides[0].push(s_side);
                sides[1].push(r_side);
            }

            let relation = Relation::new(params);
            let crs_s = MacBackend.setup(128, &relation, hash_parts(&[b"crs", format!("S{ch}").as_bytes(), &seed.to_be_bytes()]).prefix_u64());
            let crs_r = MacBackend.setup(128, &relation, hash_parts(&[b"crs", format!("R{ch}").as_bytes(), &seed.to_be_bytes()]).prefix_u64());
            let mut s_rng = sub_rng(seed, &format!("S{ch}"));
            let mut r_rng = sub_rng(seed, &format!("R{ch}"));
            let commodity = |rng: &mut ChaCha20Rng, t: u32, n: u32| {
                let m = Plaintext::random(rng, cfg.workload.plaintext_blocks as usize, cfg.workload.block_bits);
                let k = params.random_scalar(rng);
                let dealing = vss::share(params, &k, t, n, rng).expect("validated (t, n)");
                Commodity { m, k, dealing }
            };
            let (t, vn) = (cfg.vss.t, cfg.vss.n);
            let (s_com, r_com) = match cfg.mode {
                Mode::CE => (None, None),
                Mode::FE => (Some(commodity(&mut s_rng, 1, 1)), None),
                Mode::EIE => (Some(commodity(&mut s_rng, t, vn)), Some(commodity(&mut r_rng, t, vn))),
            };
            let s_ex = ExchangeSetup {
                home: ChainId::Alpha,
                counterpart: r_node,
                commodity: s_com,
                expect_commodity: cfg.mode == Mode::EIE,
                pk: crs_s.pk,
                counter_vk: crs_r.vk.clone(),
                miners: miner_dirs[0].clone(),
                params,
            };
            let r_ex = ExchangeSetup {
                home: ChainId::Beta,
                counterpart: s_node,
                commodity: r_com,
                expect_commodity: cfg.mode != Mode::CE,
                pk: crs_r.pk,
                counter_vk: crs_s.vk,
                miners: miner_dirs[1].clone(),
                params,
            };
            if cfg.byzantine.behavior.stale_sn_replay && cfg.mode == Mode::EIE {
                let uploaders = [&sk[0], &rk[1]];
                for m in miners.iter_mut().filter(|m| m.byzantine) {
                    let c = m.chain;
                    let msg = stale_share(params, uploaders[c.index()], c, sid, seed);
                    m.give_stale_evidence(sid, msg);
                }
            }
            let [s_sides, r_sides] = sides;
            parties.push(PartyActor::new(format!("S{ch}"), s_node, cfg.mode, s_flags, s_sides, Some(s_ex), s_rng));
            parties.push(PartyActor::new(format!("R{ch}"), r_node, cfg.mode, r_flags, r_sides, Some(r_ex), r_rng));
            for c in ChainId::BOTH {
                let list = &members[c.index()];
                for (j, (node, k)) in list.iter().enumerate() {
                    let (funder, funder_addr) = if j == 0 {
                        match c {
                            ChainId::Alpha => (r_node, rk[0].address()),
                            ChainId::Beta => (s_node, sk[1].address()),
                        }
                    } else {
                        (list[j - 1].0, list[j - 1].1.address())
                    };
                    let child = list.get(j + 1).map(|(nn, kk)| ChildPlan {
                        member: *nn,
                        member_addr: kk.address(),
                        receipts: cfg.topology.sub_receipts,
                    });
                    let side = SideSetup {
                        chain: c,
                        key: k.clone(),
                        session: sid,
                        role: SideRole::Member {
                            funder,
                            funder_addr,
                            expect: cfg.topology.sub_receipts as usize,
                        },
                        child,
                    };
                    parties.push(PartyActor::new(
                        b.names[*node as usize].clone(),
                        *node,
                        cfg.mode,
                        PartyFlags::default(),
                        vec![side],
                        None,
                        sub_rng(seed, &b.names[*node as usize]),
                    ));
                }
            }
            for p in &parties[parties.len() - 2 - members[0].len() - members[1].len()..] {
                for (c, s) in p.sessions() {
                    watchers[c.index()].entry(s).or_default().push(p.node);
                }
            }
        }

        let chains = ChainId::BOTH.map(|c| {
            let contract = ContractConfig {
                t1: cfg.timers.t1,
                t2: cfg.timers.t2,
                lock_window: match c {
                    ChainId::Alpha => cfg.timers.t3,
                    ChainId::Beta => cfg.timers.t4,
                },
                assist_window: if c == ChainId::Alpha { cfg.timers.t5 } else { None },
                assist_reward_bps: cfg.assist_reward_bps,
                cross_chain: true,
                params,
            };
            Chain::new(ChainConfig {
                id: c,
                block_interval: match c {
                    ChainId::Alpha => cfg.chains.alpha_block_interval,
                    ChainId::Beta => cfg.chains.beta_block_interval,
                },
                miners: miners.iter().filter(|m| m.chain == c).map(|m| m.address()).collect(),
                genesis: genesis[c.index()].clone(),
                contract,
            })
        });

        let mut latency = LatencyModel {
            default: cfg.network.latency,
            overrides: BTreeMap::new(),
        };
        let mut deferred = Vec::new();
        for o in &cfg.network.overrides {
            for src in 0..b.roles.len() {
                for dst in 0..b.roles.len() {
                    if src == dst || !role_matches(&o.from, b.roles[src]) || !role_matches(&o.to, b.roles[dst]) {
                        continue;
                    }
                    let (s, d) = (src as NodeId, dst as NodeId);
                    match o.phase {
                        Phase::All => latency = latency.with_override(s, d, o.latency),
                        Phase::Htlc => deferred.push((s, d, o.latency)),
                    }
                }
            }
        }

        let mut world = World {
            net: Network::new(latency, cfg.network.bandwidth, hash_parts(&[b"net", &seed.to_be_bytes()]).prefix_u64()),
            cfg,
            params,
            now: 0,
            chains,
            slots: b.slots,
            roles: b.roles,
            names: b.names,
            parties,
            miners,
            htlc,
            watchers,
            miner_nodes,
            sessions,
            genesis,
            trace: Vec::new(),
            steering: None,
            deferred,
            coalition: BTreeMap::new(),
            violations: Vec::new(),
            first_receipt: None,
            last_receipt: None,
        };
        world.start();
        world
    }

    fn start(&mut self) {
        let mut none = NoChoice;
        for i in 0..self.parties.len() {
            let mut ctx = Ctx::new(0);
            self.parties[i].start(&mut ctx);
            let node = self.parties[i].node;
            self.apply(node, ctx.out, &mut none);
        }
        for i in 0..self.htlc.len() {
            let mut ctx = Ctx::new(0);
            self.htlc[i].start(&mut ctx);
            let node = self
                .slots
                .iter()
                .position(|s| matches!(s, Slot::Htlc(j) if *j == i))
                .expect("registered") as NodeId;
            self.apply(node, ctx.out, &mut none);
        }
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn chain(&self, c: ChainId) -> &Chain {
        &self.chains[c.index()]
    }

    pub fn parties(&self) -> &[PartyActor] {
        &self.parties
    }

    pub fn sessions(&self) -> &[SessionId] {
        &self.sessions
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    pub fn violations(&self) -> &[RunViolation] {
        &self.violations
    }

    pub fn coalition(&self) -> impl Iterator<Item = &CoalitionStat> {
        self.coalition.values()
    }

    pub fn genesis(&self, c: ChainId) -> &BTreeMap<Address, Amount> {
        &self.genesis[c.index()]
    }

    /// Notes every message still in flight; used when a run hits max_tick.
    pub fn report_undelivered(&mut self) {
        let pending: Vec<(NodeId, NodeId, Tick)> = self
            .net
            .undelivered()
            .map(|e| (e.src, e.dst, e.deliver_at))
            .collect();
        for (src, dst, at) in pending {
            let note = format!("undelivered to {} (due at tick {at})", self.names[dst as usize]);
            self.note(src, note);
        }
    }

    pub fn net_stats(&self) -> &NetStats {
        self.net.stats()
    }

    pub fn receipt_window(&self) -> Option<(Tick, Tick)> {
        Some((self.first_receipt?, self.last_receipt?))
    }

    pub fn trace_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.trace {
            out.push_str(&serde_json::to_string(r).expect("trace records serialise"));
            out.push('\n');
        }
        out
    }

    /// Every level-0 session on both chains has reached Close or beyond.
    pub fn close_phase_reached(&self) -> bool {
        self.sessions.iter().all(|sid| {
            ChainId::BOTH.iter().all(|c| {
                self.chains[c.index()]
                    .session_state(*sid)
                    .is_some_and(|s| s >= SessionState::Close)
            })
        })
    }

    /// Makes close-phase messages of level-0 parties choice points, each
    /// taking one of `delays`.
    pub fn steer(&mut self, delays: Vec<Tick>) {
        self.steering = Some(delays);
    }

    pub fn finished(&self) -> bool {
        if !self.violations.is_empty() {
            return true;
        }
        if !self.htlc.is_empty() {
            return self.htlc.iter().all(|h| h.finished());
        }
        let settled = self.sessions.iter().all(|sid| {
            ChainId::BOTH
                .iter()
                .all(|c| self.chains[c.index()].session_state(*sid).is_some_and(|s| s.is_terminal()))
        });
        settled && self.parties.iter().all(|p| p.finished())
    }

    fn next_block(&self) -> Tick {
        self.chains
            .iter()
            .map(|ch| {
                let iv = ch.block_interval();
                (self.now / iv + 1) * iv
            })
            .min()
            .expect("two chains")
    }

    /// One tick: arrivals, then blocks, then whatever they trigger.
    pub fn step(&mut self, tick: Tick, choices: &mut dyn ChoiceSource) {
        self.now = tick;
        self.deliver_due(choices);
        for c in ChainId::BOTH {
            if self.chains[c.index()].is_block_tick(tick) {
                self.produce(c, choices);
            }
        }
        self.deliver_due(choices);
        if !self.deferred.is_empty() && self.close_phase_reached() {
            let mut model = self.net.latency_model().clone();
            for (s, d, lat) in self.deferred.drain(..) {
                model = model.with_override(s, d, lat);
            }
            self.net.set_latency_model(model);
        }
        if self.cfg.mode == Mode::EIE {
            self.watch_coalition();
        }
    }

    fn deliver_due(&mut self, choices: &mut dyn ChoiceSource) {
        while let Some(env) = self.net.pop_due(self.now) {
            self.deliver(env.src, env.dst, env.msg, choices);
        }
    }

    fn deliver(&mut self, src: NodeId, dst: NodeId, msg: Msg, choices: &mut dyn ChoiceSource) {
        let now = self.now;
        let mut ctx = Ctx::new(now);
        match (self.slots[dst as usize], msg) {
            (Slot::Chain(c), Msg::Tx(tx)) => {
                if let Err(e) = self.chains[c.index()].submit(*tx) {
                    self.note(dst, format!("rejected at submission: {e}"));
                }
                return;
            }
            (Slot::Party(i), Msg::Notice(n)) => self.parties[i].on_notice(&n, &mut ctx),
            (Slot::Party(i), Msg::Off(m)) => {
                if matches!(m, OffChain::Receipt(_)) {
                    self.last_receipt = Some(now);
                }
                self.parties[i].on_message(src, m, &mut ctx);
            }
            (Slot::Miner(i), Msg::Notice(n)) => self.miners[i].on_notice(&n, &mut ctx),
            (Slot::Miner(i), Msg::Off(OffChain::Share(m))) => self.miners[i].on_share(*m, &mut ctx),
            (Slot::Miner(i), Msg::Wake(tag)) => self.miners[i].on_wake(tag, &mut ctx),
            (Slot::Htlc(i), Msg::Notice(n)) => self.htlc[i].on_notice(&n, &mut ctx),
            _ => return,
        }
        self.apply(dst, ctx.out, choices);
    }

    fn note(&mut self, node: NodeId, note: String) {
        self.trace.push(TraceRecord::Note {
            tick: self.now,
            actor: self.names[node as usize].clone(),
            note,
        });
    }

    fn level0(&self, node: NodeId) -> bool {
        matches!(self.roles[node as usize], Role::Sender | Role::Receiver)
    }

    fn emit(&mut self, src: NodeId, dst: NodeId, msg: Msg, size: u64, choosable: bool, choices: &mut dyn ChoiceSource) {
        let overridden = self.net.latency_model().overrides.contains_key(&(src, dst));
        match &self.steering {
            Some(delays) if choosable && !overridden => {
                let d = delays[choices.choose(delays.len())];
                self.net.send_with_delay(self.now, src, dst, msg, size, d);
            }
            _ => {
                self.net.send(self.now, src, dst, msg, size);
            }
        }
    }

    fn apply(&mut self, src: NodeId, actions: Vec<Action>, choices: &mut dyn ChoiceSource) {
        for a in actions {
            match a {
                Action::Send { to, msg } => {
                    let size = match &msg {
                        OffChain::Receipt(_) => {
                            self.first_receipt.get_or_insert(self.now);
                            self.cfg.receipt_size()
                        }
                        other => other.to_canonical_bytes().len() as u64,
                    };
                    self.emit(src, to, Msg::Off(msg), size, false, choices);
                }
                Action::Submit(tx) => {
                    let dst = chain_node(tx.chain);
                    let size = tx.wire_len() as u64;
                    let choosable = self.level0(src)
                        && matches!(tx.kind(), TxKind::Lock | TxKind::Update | TxKind::UpdateEIE);
                    self.emit(src, dst, Msg::Tx(Box::new(tx)), size, choosable, choices);
                }
                Action::Wake { at, tag } => {
                    self.net.schedule(self.now, src, at, Msg::Wake(tag));
                }
                Action::Note(s) => self.note(src, s),
            }
        }
    }

    fn produce(&mut self, c: ChainId, choices: &mut dyn ChoiceSource) {
        let events: Vec<ChainEvent> = self.chains[c.index()].produce_block(self.now).to_vec();
        let height = self.chains[c.index()].height();
        if self.chains[c.index()].conservation_failures().last() == Some(&height) {
            self.violations.push(RunViolation {
                event_index: self.trace.len(),
                message: format!("{c} block {height} broke value conservation"),
            });
        }
        for ev in events {
            let index = self.trace.len();
            let sid = ev.session_id;
            let detail = ev.detail.clone();
            self.trace.push(TraceRecord::Chain(ev));
            let Some(detail) = detail else {
                continue;
            };
            if let Some(s) = self.chains[c.index()].contract().session(sid) {
                if s.history.windows(2).any(|w| !w[0].1.can_move_to(w[1].1)) {
                    self.violations.push(RunViolation {
                        event_index: index,
                        message: format!("{c} session {sid} took an illegal transition"),
                    });
                }
            }
            self.observe(c, sid, &detail);
            self.dispatch(c, sid, detail, choices);
        }
    }

    fn observe(&mut self, c: ChainId, sid: SessionId, ev: &ContractEvent) {
        match ev {
            ContractEvent::UploadBound { upload, .. } => {
                let stat = self.coalition.entry((c, sid)).or_default();
                stat.chain = Some(c);
                stat.session = sid.0;
                stat.t = upload.t;
                stat.h_k = Some(upload.h_k);
            }
            ContractEvent::RecoveryRequested { .. } => {
                self.coalition.entry((c, sid)).or_default().recover_requested = true;
            }
            _ => {}
        }
    }

    fn dispatch(&mut self, c: ChainId, sid: SessionId, event: ContractEvent, choices: &mut dyn ChoiceSource) {
        let pivotal = matches!(event, ContractEvent::Locked { .. } | ContractEvent::Success { .. });
        let for_miners = matches!(
            event,
            ContractEvent::UploadBound { .. }
                | ContractEvent::Locked { .. }
                | ContractEvent::Success { .. }
                | ContractEvent::Refunded
                | ContractEvent::Terminated { .. }
                | ContractEvent::RecoveryRequested { .. }
        );
        let cross = c == ChainId::Beta && self.cfg.timers.t5.is_some() && matches!(event, ContractEvent::Success { .. });
        let party_wants = !matches!(
            event,
            ContractEvent::OpenRecorded { .. } | ContractEvent::CloseSubmitted { .. } | ContractEvent::ShareAccepted { .. }
        );
        let member_wants = matches!(event, ContractEvent::CloseStarted { .. });
        let notice = Arc::new(Notice {
            chain: c,
            session: sid,
            tick: self.now,
            event,
        });
        let src = chain_node(c);
        let watchers = self.watchers[c.index()].get(&sid).cloned().unwrap_or_default();
        for node in watchers {
            let wants = match self.roles[node as usize] {
                Role::Member => member_wants,
                _ => party_wants,
            };
            if wants {
                let choosable = pivotal && self.level0(node);
                self.emit(src, node, Msg::Notice(notice.clone()), NOTICE_SIZE, choosable, choices);
            }
        }
        if for_miners {
            for node in self.miner_nodes[c.index()].clone() {
                self.emit(src, node, Msg::Notice(notice.clone()), NOTICE_SIZE, false, choices);
            }
        }
        if cross {
            for node in self.miner_nodes[ChainId::Alpha.index()].clone() {
                self.emit(src, node, Msg::Notice(notice.clone()), NOTICE_SIZE, false, choices);
            }
        }
    }

    fn watch_coalition(&mut self) {
        for ((c, sid), stat) in self.coalition.iter_mut() {
            if stat.recover_requested {
                continue;
            }
            let held: BTreeMap<u32, &KeyShare> = self
                .miners
                .iter()
                .filter(|m| m.byzantine && m.chain == *c)
                .filter_map(|m| m.received.get(sid))
                .map(|s| (s.index, s))
                .collect();
            let count = held.len() as u32;
            stat.max_before_recover = stat.max_before_recover.max(count);
            if !stat.early_recovery && stat.t > 0 && count >= stat.t {
                let shares: Vec<KeyShare> = held.values().map(|s| (*s).clone()).collect();
                if let Ok(k) = vss::recover(self.params, &shares, stat.t) {
                    stat.early_recovery = Some(hash(&k.to_bytes32())) == stat.h_k;
                }
            }
        }
    }
}

/// Answers every question with the first option; used when not steering.
struct NoChoice;

impl ChoiceSource for NoChoice {
    fn choose(&mut self, _options: usize) -> usize {
        0
    }
}

impl Simulated for World {
    fn now(&self) -> Tick {
        self.now
    }

    fn next_activity(&self) -> Option<Tick> {
        let block = self.next_block();
        Some(self.net.next_due().map_or(block, |t| t.min(block)).max(self.now + 1))
    }

    fn advance_to(&mut self, tick: Tick) {
        self.step(tick, &mut NoChoice);
    }
}

/// A world whose choice points are answered by `choices`.
pub struct Steered<'a> {
    pub world: &'a mut World,
    pub choices: &'a mut dyn ChoiceSource,
}

impl Simulated for Steered<'_> {
    fn now(&self) -> Tick {
        self.world.now
    }

    fn next_activity(&self) -> Option<Tick> {
        self.world.next_activity()
    }

    fn advance_to(&mut self, tick: Tick) {
        self.world.step(tick, self.choices);
    }
}

fn role_matches(pattern: &str, role: Role) -> bool {
    match pattern {
        "*" => true,
        "alpha" => role == Role::Chain(ChainId::Alpha),
        "beta" => role == Role::Chain(ChainId::Beta),
        "S" => role == Role::Sender,
        "R" => role == Role::Receiver,
        "D" => role == Role::Member,
        "miner" => matches!(role, Role::Miner(_)),
        "miner.alpha" => role == Role::Miner(ChainId::Alpha),
        "miner.beta" => role == Role::Miner(ChainId::Beta),
        _ => false,
    }
}

/// A share the uploader signed for an earlier exchange, with that
/// exchange's serial number.
fn stale_share(params: &'static GroupParams, uploader: &KeyPair, c: ChainId, sid: SessionId, seed: u64) -> ShareMsg {
    let mut rng = sub_rng(seed, &format!("stale/{}/{}", c.name(), sid.0));
    let k = params.random_scalar(&mut rng);
    let old = vss::share(params, &k, 1, 1, &mut rng).expect("1-of-1 dealing");
    let share = old.shares[0].clone();
    let sn = hash_parts(&[b"crosschannel/stale-sn", &seed.to_be_bytes(), &sid.0.to_be_bytes()]).prefix_u64();
    ShareMsg {
        chain: c,
        session: sid,
        sig: uploader.sign(&share_message(&share, sn)),
        share,
        sn,
    }
}
