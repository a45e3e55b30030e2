//! Seeded discrete-event message fabric.
//!
//! Messages are never lost, only delayed. Pending deliveries are ordered by
//! `(deliver_at, insertion index)`, so a run is a pure function of the seed
//! and the choices made at each send.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::Tick;

pub type NodeId = u32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Latency {
    Fixed { ticks: Tick },
    Uniform { min: Tick, max: Tick },
}

impl Latency {
    fn sample(&self, rng: &mut ChaCha20Rng) -> Tick {
        match *self {
            Latency::Fixed { ticks } => ticks,
            Latency::Uniform { min, max } => rng.gen_range(min..=max.max(min)),
        }
    }
}

impl Default for Latency {
    fn default() -> Self {
        Latency::Fixed { ticks: 1 }
    }
}

/// Default latency plus targeted per-link overrides.
#[derive(Clone, Debug, Default)]
pub struct LatencyModel {
    pub default: Latency,
    pub overrides: BTreeMap<(NodeId, NodeId), Latency>,
}

impl LatencyModel {
    pub fn fixed(ticks: Tick) -> Self {
        LatencyModel {
            default: Latency::Fixed { ticks },
            overrides: BTreeMap::new(),
        }
    }

    pub fn with_override(mut self, src: NodeId, dst: NodeId, lat: Latency) -> Self {
        self.overrides.insert((src, dst), lat);
        self
    }

    pub fn for_link(&self, src: NodeId, dst: NodeId) -> &Latency {
        self.overrides.get(&(src, dst)).unwrap_or(&self.default)
    }
}

/// Where nondeterministic choices come from. Sampled runs never ask;
/// exhaustive exploration answers each question in turn.
pub trait ChoiceSource {
    /// Picks one of `options` alternatives.
    fn choose(&mut self, options: usize) -> usize;
}

#[derive(Clone, Debug)]
pub struct Envelope<M> {
    pub deliver_at: Tick,
    pub seq: u64,
    pub sent_at: Tick,
    pub src: NodeId,
    pub dst: NodeId,
    pub msg: M,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NetStats {
    pub sent: u64,
    pub delivered: u64,
    pub bytes: u64,
}

#[derive(Clone, Debug)]
pub struct Network<M> {
    latency: LatencyModel,
    /// Bytes per tick on each directed link; `None` means unlimited.
    bandwidth: Option<u64>,
    rng: ChaCha20Rng,
    queue: BinaryHeap<Reverse<(Tick, u64)>>,
    pending: BTreeMap<u64, Envelope<M>>,
    link_free_at: BTreeMap<(NodeId, NodeId), Tick>,
    next_seq: u64,
    stats: NetStats,
}

impl<M> Network<M> {
    pub fn new(latency: LatencyModel, bandwidth: Option<u64>, seed: u64) -> Self {
        Network {
            latency,
            bandwidth,
            rng: ChaCha20Rng::seed_from_u64(seed),
            queue: BinaryHeap::new(),
            pending: BTreeMap::new(),
            link_free_at: BTreeMap::new(),
            next_seq: 0,
            stats: NetStats::default(),
        }
    }

    pub fn latency_model(&self) -> &LatencyModel {
        &self.latency
    }

    /// Replaces the latency model for messages sent from now on.
    pub fn set_latency_model(&mut self, latency: LatencyModel) {
        self.latency = latency;
    }

    pub fn stats(&self) -> &NetStats {
        &self.stats
    }

    /// Delay the latency model would give this link, consuming randomness.
    pub fn sample_latency(&mut self, src: NodeId, dst: NodeId) -> Tick {
        let lat = *self.latency.for_link(src, dst);
        lat.sample(&mut self.rng)
    }

    /// Sends with a sampled delay. Returns the delivery tick.
    pub fn send(&mut self, now: Tick, src: NodeId, dst: NodeId, msg: M, size: u64) -> Tick {
        let delay = self.sample_latency(src, dst);
        self.send_with_delay(now, src, dst, msg, size, delay)
    }

    /// Sends with an explicit propagation delay; transmission time on a
    /// bandwidth-limited link is added on top.
    pub fn send_with_delay(&mut self, now: Tick, src: NodeId, dst: NodeId, msg: M, size: u64, delay: Tick) -> Tick {
        let mut start = now;
        let mut tx_time = 0;
        if let Some(bw) = self.bandwidth.filter(|_| src != dst) {
            let free = self.link_free_at.entry((src, dst)).or_insert(0);
            start = start.max(*free);
            tx_time = size.div_ceil(bw.max(1));
            *free = start + tx_time;
        }
        let deliver_at = start + tx_time + delay;
        self.stats.sent += 1;
        self.stats.bytes += size;
        self.push(Envelope {
            deliver_at,
            seq: 0,
            sent_at: now,
            src,
            dst,
            msg,
        })
    }

    /// A message from a node to itself at an absolute tick.
    pub fn schedule(&mut self, now: Tick, node: NodeId, at: Tick, msg: M) -> Tick {
        self.push(Envelope {
            deliver_at: at.max(now),
            seq: 0,
            sent_at: now,
            src: node,
            dst: node,
            msg,
        })
    }

    fn push(&mut self, mut env: Envelope<M>) -> Tick {
        env.seq = self.next_seq;
        self.next_seq += 1;
        let at = env.deliver_at;
        self.queue.push(Reverse((at, env.seq)));
        self.pending.insert(env.seq, env);
        at
    }

    pub fn next_due(&self) -> Option<Tick> {
        self.queue.peek().map(|Reverse((t, _))| *t)
    }

    /// Removes the next envelope due at or before `now`.
    pub fn pop_due(&mut self, now: Tick) -> Option<Envelope<M>> {
        let Reverse((t, seq)) = *self.queue.peek()?;
        if t > now {
            return None;
        }
        self.queue.pop();
        self.stats.delivered += 1;
        self.pending.remove(&seq)
    }

    pub fn in_flight(&self) -> usize {
        self.pending.len()
    }

    pub fn undelivered(&self) -> impl Iterator<Item = &Envelope<M>> {
        self.pending.values()
    }
}

/// A system advanced tick by tick by [`run_until`].
pub trait Simulated {
    fn now(&self) -> Tick;
    /// Earliest tick after `now` at which anything happens.
    fn next_activity(&self) -> Option<Tick>;
    /// Moves the clock to `tick` and processes everything due there.
    fn advance_to(&mut self, tick: Tick);
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct RunStatus {
    pub stopped_at: Tick,
    /// The predicate never held; the run was cut off at `max_tick`.
    pub partial: bool,
}

/// Advances until `done` holds or `max_tick` is reached, skipping idle ticks.
pub fn run_until<S: Simulated>(sim: &mut S, mut done: impl FnMut(&S) -> bool, max_tick: Tick) -> RunStatus {
    loop {
        if done(sim) {
            return RunStatus {
                stopped_at: sim.now(),
                partial: false,
            };
        }
        let next = sim.next_activity().map_or(max_tick, |t| t.min(max_tick));
        if next <= sim.now() {
            return RunStatus {
                stopped_at: sim.now(),
                partial: true,
            };
        }
        sim.advance_to(next);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EnumBounds {
    /// Choice points allowed in one run.
    pub max_choice_points: usize,
    /// Runs allowed in total.
    pub max_runs: usize,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EnumError {
    #[error("a run made {0} choices, more than the bound allows")]
    TooManyChoices(usize),
    #[error("exploration needs more than {0} runs")]
    TooManyRuns(usize),
}

/// Replays a fixed prefix of answers, then answers 0 and records how many
/// alternatives each new question had.
#[derive(Debug, Default)]
struct Replay {
    prefix: Vec<usize>,
    taken: Vec<(usize, usize)>,
}

impl ChoiceSource for Replay {
    fn choose(&mut self, options: usize) -> usize {
        assert!(options > 0, "a choice needs at least one option");
        let i = self.taken.len();
        let pick = self.prefix.get(i).copied().unwrap_or(0).min(options - 1);
        self.taken.push((pick, options));
        pick
    }
}

/// Runs `run` once per distinct sequence of answers, depth first. Every
/// complete sequence is returned with the run's result.
pub fn explore<O>(
    bounds: EnumBounds,
    mut run: impl FnMut(&mut dyn ChoiceSource) -> O,
) -> Result<Vec<(Vec<usize>, O)>, EnumError> {
    let mut out = Vec::new();
    let mut prefix: Vec<usize> = Vec::new();
    loop {
        if out.len() >= bounds.max_runs {
            return Err(EnumError::TooManyRuns(bounds.max_runs));
        }
        let mut replay = Replay {
            prefix: prefix.clone(),
            taken: Vec::new(),
        };
        let result = run(&mut replay);
        if replay.taken.len() > bounds.max_choice_points {
            return Err(EnumError::TooManyChoices(replay.taken.len()));
        }
        out.push((replay.taken.iter().map(|(p, _)| *p).collect(), result));
        // Backtrack to the deepest choice with an untried alternative.
        let mut taken = replay.taken;
        loop {
            match taken.pop() {
                None => return Ok(out),
                Some((pick, options)) if pick + 1 < options => {
                    prefix = taken.iter().map(|(p, _)| *p).collect();
                    prefix.push(pick + 1);
                    break;
                }
                Some(_) => {}
            }
        }
    }
}

/// All orderings of `n` events consistent with `before` (pairs `(a, b)`
/// meaning `a` precedes `b`).
pub fn linear_extensions(n: usize, before: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let mut preds = vec![0u64; n];
    for &(a, b) in before {
        preds[b] |= 1 << a;
    }
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(n);
    fn go(n: usize, preds: &[u64], placed: u64, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == n {
            out.push(cur.clone());
            return;
        }
        for e in 0..n {
            if placed & (1 << e) == 0 && preds[e] & !placed == 0 {
                cur.push(e);
                go(n, preds, placed | (1 << e), cur, out);
                cur.pop();
            }
        }
    }
    assert!(n <= 64, "at most 64 events");
    go(n, &preds, 0, &mut cur, &mut out);
    out
}

/// Interleavings of independent per-sender FIFO streams of the given lengths.
pub fn stream_interleavings(lengths: &[usize]) -> Vec<Vec<usize>> {
    let mut before = Vec::new();
    let mut base = 0;
    for &len in lengths {
        for i in 1..len {
            before.push((base + i - 1, base + i));
        }
        base += len;
    }
    linear_extensions(base, &before)
}
