//! Deterministic in-process message passing.
//!
//! Each rank is an `async` state machine. `recv` parks the rank until a
//! matching message is queued; `send` never blocks. Channels are FIFO per
//! (source, destination, communicator, tag). The executor can step ranks
//! round-robin, in a seeded random order, or one OS thread per rank; since
//! ranks share nothing but messages, all three give identical results.
//!
//! Collectives are built from point-to-point messages with fixed linear
//! algorithms so that their byte counts are exactly predictable:
//!
//! - `allgather`: members send their block to member 0, which returns to each
//!   member the blocks of all the others.
//! - `allreduce_sum`: gather to member 0, sum in member order, broadcast.
//! - `exscan_sum`: a chain; member `k` receives the inclusive prefix of
//!   members `0..k` from `k - 1` and forwards its own to `k + 1`.

use crate::decomp::{Coords, ProcessGrid};
use crate::error::{BlockedRank, Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};
use std::collections::{BTreeMap, HashMap, VecDeque};
use std::future::Future;
use std::pin::Pin;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::task::{Context, Poll, Wake, Waker};

/// Bytes per payload element.
pub const ELEMENT_BYTES: u64 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CommKind {
    Global,
    X,
    Y,
    Z,
}

impl CommKind {
    pub const ALL: [CommKind; 4] = [CommKind::Global, CommKind::X, CommKind::Y, CommKind::Z];

    pub fn name(self) -> &'static str {
        match self {
            CommKind::Global => "global",
            CommKind::X => "x",
            CommKind::Y => "y",
            CommKind::Z => "z",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// An ordered group of global ranks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Communicator {
    pub kind: CommKind,
    pub members: Vec<usize>,
    pub my_index: usize,
}

impl Communicator {
    pub fn world(size: usize, rank: usize) -> Self {
        Self {
            kind: CommKind::Global,
            members: (0..size).collect(),
            my_index: rank,
        }
    }

    /// The X, Y or Z sub-communicator of `rank`: every rank sharing the other
    /// two coordinates, ordered by the varying one.
    pub fn along(pgrid: &ProcessGrid, rank: usize, kind: CommKind) -> Result<Self> {
        let c = pgrid.coords_of(rank)?;
        let (count, mine) = match kind {
            CommKind::Global => return Ok(Self::world(pgrid.size(), rank)),
            CommKind::X => (pgrid.px, c.lx),
            CommKind::Y => (pgrid.py, c.ly),
            CommKind::Z => (pgrid.pz, c.lz),
        };
        let members = (0..count)
            .map(|i| {
                let at = match kind {
                    CommKind::X => Coords { lx: i, ..c },
                    CommKind::Y => Coords { ly: i, ..c },
                    _ => Coords { lz: i, ..c },
                };
                pgrid.rank_of(at)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            kind,
            members,
            my_index: mine,
        })
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }

    pub fn rank_of_member(&self, index: usize) -> usize {
        self.members[index]
    }
}

/// Message tag: `id` separates streams, `label` names the traffic in the stats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Tag {
    pub id: u64,
    pub label: &'static str,
}

impl Tag {
    pub const fn new(id: u64, label: &'static str) -> Self {
        Self { id, label }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Class {
    P2p,
    Collective,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct Key {
    src: usize,
    dst: usize,
    comm: CommKind,
    class: Class,
    id: u64,
}

/// Intra-/inter-node split of one counter.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Split {
    pub intra: u64,
    pub inter: u64,
}

impl Split {
    pub fn total(&self) -> u64 {
        self.intra + self.inter
    }

    fn add(&mut self, intra: bool, v: u64) {
        if intra {
            self.intra += v;
        } else {
            self.inter += v;
        }
    }

    fn merge(&mut self, o: &Split) {
        self.intra += o.intra;
        self.inter += o.inter;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CommCounters {
    pub p2p_messages: Split,
    pub p2p_bytes: Split,
    pub coll_operations: Split,
    pub coll_bytes: Split,
}

impl CommCounters {
    pub fn merge(&mut self, o: &CommCounters) {
        self.p2p_messages.merge(&o.p2p_messages);
        self.p2p_bytes.merge(&o.p2p_bytes);
        self.coll_operations.merge(&o.coll_operations);
        self.coll_bytes.merge(&o.coll_bytes);
    }

    fn to_json(self) -> Value {
        json!({
            "p2p_msgs": self.p2p_messages.total(),
            "p2p_bytes": self.p2p_bytes.total(),
            "coll_ops": self.coll_operations.total(),
            "coll_bytes": self.coll_bytes.total(),
            "intra_bytes": self.p2p_bytes.intra + self.coll_bytes.intra,
            "inter_bytes": self.p2p_bytes.inter + self.coll_bytes.inter,
        })
    }
}

/// Bytes one rank moved on one communicator.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct RankTraffic {
    pub p2p_sent: u64,
    pub p2p_received: u64,
    pub coll_sent: u64,
    pub coll_received: u64,
}

impl RankTraffic {
    fn merge(&mut self, o: &RankTraffic) {
        self.p2p_sent += o.p2p_sent;
        self.p2p_received += o.p2p_received;
        self.coll_sent += o.coll_sent;
        self.coll_received += o.coll_received;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CommStats {
    pub total: CommCounters,
    pub per_comm: BTreeMap<CommKind, CommCounters>,
    pub per_label: BTreeMap<String, CommCounters>,
    /// Indexed by global rank.
    pub per_rank: Vec<BTreeMap<CommKind, RankTraffic>>,
}

impl CommStats {
    fn with_ranks(n: usize) -> Self {
        Self {
            per_rank: vec![BTreeMap::new(); n],
            ..Default::default()
        }
    }

    pub fn comm(&self, kind: CommKind) -> CommCounters {
        self.per_comm.get(&kind).copied().unwrap_or_default()
    }

    pub fn label(&self, label: &str) -> CommCounters {
        self.per_label.get(label).copied().unwrap_or_default()
    }

    pub fn rank(&self, rank: usize, kind: CommKind) -> RankTraffic {
        self.per_rank
            .get(rank)
            .and_then(|m| m.get(&kind))
            .copied()
            .unwrap_or_default()
    }

    pub fn merge(&mut self, o: &CommStats) {
        self.total.merge(&o.total);
        for (k, v) in &o.per_comm {
            self.per_comm.entry(*k).or_default().merge(v);
        }
        for (k, v) in &o.per_label {
            self.per_label.entry(k.clone()).or_default().merge(v);
        }
        if self.per_rank.len() < o.per_rank.len() {
            self.per_rank.resize(o.per_rank.len(), BTreeMap::new());
        }
        for (mine, theirs) in self.per_rank.iter_mut().zip(&o.per_rank) {
            for (k, v) in theirs {
                mine.entry(*k).or_default().merge(v);
            }
        }
    }

    /// `{per_comm: {global|x|y|z: {p2p_msgs, p2p_bytes, coll_ops, coll_bytes, intra_bytes, inter_bytes}}, ...}`
    pub fn to_json(&self) -> Value {
        let per_comm: serde_json::Map<String, Value> = CommKind::ALL
            .iter()
            .map(|k| (k.name().to_string(), self.comm(*k).to_json()))
            .collect();
        let per_label: serde_json::Map<String, Value> = self
            .per_label
            .iter()
            .map(|(k, v)| (k.clone(), v.to_json()))
            .collect();
        json!({
            "per_comm": per_comm,
            "per_label": per_label,
            "total": self.total.to_json(),
        })
    }

    fn count(&mut self, kind: CommKind, label: &str, class: Class, intra: bool, bytes: u64) {
        let apply = |c: &mut CommCounters| match class {
            Class::P2p => {
                c.p2p_messages.add(intra, 1);
                c.p2p_bytes.add(intra, bytes);
            }
            Class::Collective => c.coll_bytes.add(intra, bytes),
        };
        apply(&mut self.total);
        apply(self.per_comm.entry(kind).or_default());
        apply(self.per_label.entry(label.to_string()).or_default());
    }

    fn count_collective(&mut self, kind: CommKind, label: &str, intra: bool) {
        self.total.coll_operations.add(intra, 1);
        self.per_comm.entry(kind).or_default().coll_operations.add(intra, 1);
        self.per_label
            .entry(label.to_string())
            .or_default()
            .coll_operations
            .add(intra, 1);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum TraceEvent {
    Send { to: usize, comm: CommKind, tag: u64, len: usize },
    Recv { from: usize, comm: CommKind, tag: u64, len: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RankState {
    Runnable,
    Waiting(Key),
    Done,
}

struct World {
    cores_per_node: usize,
    mailboxes: HashMap<Key, VecDeque<Vec<f64>>>,
    states: Vec<RankState>,
    wakers: Vec<Option<Waker>>,
    labels: HashMap<Key, &'static str>,
    stats: CommStats,
    traces: Vec<Vec<TraceEvent>>,
    failure: Option<Error>,
}

impl World {
    fn intra(&self, a: usize, b: usize) -> bool {
        a / self.cores_per_node == b / self.cores_per_node
    }

    fn fail(&mut self, err: Error) -> Error {
        let err = self.failure.get_or_insert(err).clone();
        for w in self.wakers.iter_mut().filter_map(Option::take) {
            w.wake();
        }
        err
    }

    fn check_deadlock(&mut self) -> Option<Error> {
        if self.failure.is_some() {
            return self.failure.clone();
        }
        let mut blocked = Vec::new();
        for (rank, state) in self.states.iter().enumerate() {
            match state {
                RankState::Runnable => return None,
                RankState::Done => {}
                RankState::Waiting(key) => {
                    if self.mailboxes.get(key).is_some_and(|q| !q.is_empty()) {
                        return None;
                    }
                    blocked.push(BlockedRank {
                        rank,
                        waiting_on: key.src,
                        tag: format!(
                            "{}:{}",
                            key.comm.name(),
                            self.labels.get(key).copied().unwrap_or("?")
                        ),
                    });
                }
            }
        }
        if blocked.is_empty() {
            return None;
        }
        Some(self.fail(Error::Deadlock { blocked }))
    }
}

type Shared = Arc<Mutex<World>>;

fn lock(shared: &Shared) -> MutexGuard<'_, World> {
    shared.lock().unwrap_or_else(|p| p.into_inner())
}

/// Handle a rank uses to talk to the others.
pub struct RankCtx {
    rank: usize,
    size: usize,
    shared: Shared,
    coll_seq: [AtomicU64; 4],
}

impl RankCtx {
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn world(&self) -> Communicator {
        Communicator::world(self.size, self.rank)
    }

    /// Queue `payload` for member `dst` of `comm`. Never blocks.
    pub fn send(&self, comm: &Communicator, dst: usize, tag: Tag, payload: Vec<f64>) -> Result<()> {
        self.post(comm, dst, tag, Class::P2p, payload)
    }

    pub async fn recv(&self, comm: &Communicator, src: usize, tag: Tag) -> Result<Vec<f64>> {
        self.take(comm, src, tag, Class::P2p).await
    }

    /// Stop every rank with `err`.
    pub fn abort(&self, err: Error) -> Error {
        lock(&self.shared).fail(err)
    }

    fn post(&self, comm: &Communicator, dst: usize, tag: Tag, class: Class, payload: Vec<f64>) -> Result<()> {
        let to = *comm
            .members
            .get(dst)
            .ok_or_else(|| Error::Domain(format!("member {dst} outside {:?} communicator", comm.kind)))?;
        let key = Key {
            src: self.rank,
            dst: to,
            comm: comm.kind,
            class,
            id: tag.id,
        };
        let bytes = payload.len() as u64 * ELEMENT_BYTES;
        let mut w = lock(&self.shared);
        if let Some(err) = &w.failure {
            return Err(err.clone());
        }
        let intra = w.intra(self.rank, to);
        w.stats.count(comm.kind, tag.label, class, intra, bytes);
        let traffic = w.stats.per_rank[self.rank].entry(comm.kind).or_default();
        match class {
            Class::P2p => traffic.p2p_sent += bytes,
            Class::Collective => traffic.coll_sent += bytes,
        }
        w.traces[self.rank].push(TraceEvent::Send {
            to,
            comm: comm.kind,
            tag: tag.id,
            len: payload.len(),
        });
        w.labels.entry(key).or_insert(tag.label);
        w.mailboxes.entry(key).or_default().push_back(payload);
        if w.states[to] == RankState::Waiting(key) {
            w.states[to] = RankState::Runnable;
            if let Some(waker) = w.wakers[to].take() {
                waker.wake();
            }
        }
        Ok(())
    }

    async fn take(&self, comm: &Communicator, src: usize, tag: Tag, class: Class) -> Result<Vec<f64>> {
        let from = *comm
            .members
            .get(src)
            .ok_or_else(|| Error::Domain(format!("member {src} outside {:?} communicator", comm.kind)))?;
        let key = Key {
            src: from,
            dst: self.rank,
            comm: comm.kind,
            class,
            id: tag.id,
        };
        lock(&self.shared).labels.entry(key).or_insert(tag.label);
        RecvFuture {
            shared: &self.shared,
            me: self.rank,
            key,
        }
        .await
    }

    fn next_collective(&self, comm: &Communicator, label: &'static str) -> Tag {
        let seq = self.coll_seq[comm.kind.index()].fetch_add(1, Ordering::Relaxed);
        if comm.my_index == 0 {
            let mut w = lock(&self.shared);
            let node = comm.members[0] / w.cores_per_node;
            let intra = comm.members.iter().all(|m| m / w.cores_per_node == node);
            w.stats.count_collective(comm.kind, label, intra);
        }
        Tag::new(seq, label)
    }

    fn collective_error(&self, comm: &Communicator, detail: String) -> Error {
        self.abort(Error::Collective {
            comm: comm.kind.name().to_string(),
            detail,
        })
    }

    /// Every member receives all blocks, concatenated in member order.
    pub async fn allgather(&self, comm: &Communicator, block: &[f64]) -> Result<Vec<f64>> {
        self.allgather_labeled(comm, block, "allgather").await
    }

    pub async fn allgather_labeled(&self, comm: &Communicator, block: &[f64], label: &'static str) -> Result<Vec<f64>> {
        let tag = self.next_collective(comm, label);
        let p = comm.size();
        if p == 1 {
            return Ok(block.to_vec());
        }
        let k = block.len();
        if comm.my_index == 0 {
            let mut blocks = vec![block.to_vec()];
            for m in 1..p {
                blocks.push(self.take(comm, m, tag, Class::Collective).await?);
            }
            if let Some((m, b)) = blocks.iter().enumerate().find(|(_, b)| b.len() != k) {
                return Err(self.collective_error(
                    comm,
                    format!("allgather block of member {m} has {} elements, expected {k}", b.len()),
                ));
            }
            for m in 1..p {
                let others: Vec<f64> = blocks
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| *i != m)
                    .flat_map(|(_, b)| b.iter().copied())
                    .collect();
                self.post(comm, m, tag, Class::Collective, others)?;
            }
            Ok(blocks.concat())
        } else {
            self.post(comm, 0, tag, Class::Collective, block.to_vec())?;
            let others = self.take(comm, 0, tag, Class::Collective).await?;
            let me = comm.my_index;
            let mut out = Vec::with_capacity(p * k);
            out.extend_from_slice(&others[..me * k]);
            out.extend_from_slice(block);
            out.extend_from_slice(&others[me * k..]);
            Ok(out)
        }
    }

    /// Element-wise sum over members, accumulated in member order.
    pub async fn allreduce_sum(&self, comm: &Communicator, values: &[f64]) -> Result<Vec<f64>> {
        self.allreduce_sum_labeled(comm, values, "allreduce").await
    }

    pub async fn allreduce_sum_labeled(&self, comm: &Communicator, values: &[f64], label: &'static str) -> Result<Vec<f64>> {
        let tag = self.next_collective(comm, label);
        let p = comm.size();
        if p == 1 {
            return Ok(values.to_vec());
        }
        if comm.my_index == 0 {
            let mut acc = values.to_vec();
            for m in 1..p {
                let v = self.take(comm, m, tag, Class::Collective).await?;
                if v.len() != acc.len() {
                    return Err(self.collective_error(
                        comm,
                        format!("allreduce member {m} sent {} elements, expected {}", v.len(), acc.len()),
                    ));
                }
                for (a, b) in acc.iter_mut().zip(&v) {
                    *a += b;
                }
            }
            for m in 1..p {
                self.post(comm, m, tag, Class::Collective, acc.clone())?;
            }
            Ok(acc)
        } else {
            self.post(comm, 0, tag, Class::Collective, values.to_vec())?;
            self.take(comm, 0, tag, Class::Collective).await
        }
    }

    /// Exclusive prefix sum; member 0 receives zeros.
    pub async fn exscan_sum(&self, comm: &Communicator, values: &[f64]) -> Result<Vec<f64>> {
        self.exscan_sum_labeled(comm, values, "exscan").await
    }

    pub async fn exscan_sum_labeled(&self, comm: &Communicator, values: &[f64], label: &'static str) -> Result<Vec<f64>> {
        let tag = self.next_collective(comm, label);
        let p = comm.size();
        let me = comm.my_index;
        let prefix = if me == 0 {
            vec![0.0; values.len()]
        } else {
            let prefix = self.take(comm, me - 1, tag, Class::Collective).await?;
            if prefix.len() != values.len() {
                return Err(self.collective_error(
                    comm,
                    format!("exscan member {me} holds {} elements, prefix has {}", values.len(), prefix.len()),
                ));
            }
            prefix
        };
        if me + 1 < p {
            let inclusive: Vec<f64> = if me == 0 {
                values.to_vec()
            } else {
                prefix.iter().zip(values).map(|(a, b)| a + b).collect()
            };
            self.post(comm, me + 1, tag, Class::Collective, inclusive)?;
        }
        Ok(prefix)
    }
}

struct RecvFuture<'a> {
    shared: &'a Shared,
    me: usize,
    key: Key,
}

impl Future for RecvFuture<'_> {
    type Output = Result<Vec<f64>>;

    fn poll(self: Pin<&mut Self>, cx: &mut Context<'_>) -> Poll<Self::Output> {
        let mut w = lock(self.shared);
        if let Some(msg) = w.mailboxes.get_mut(&self.key).and_then(VecDeque::pop_front) {
            w.states[self.me] = RankState::Runnable;
            let bytes = msg.len() as u64 * ELEMENT_BYTES;
            let traffic = w.stats.per_rank[self.me].entry(self.key.comm).or_default();
            match self.key.class {
                Class::P2p => traffic.p2p_received += bytes,
                Class::Collective => traffic.coll_received += bytes,
            }
            w.traces[self.me].push(TraceEvent::Recv {
                from: self.key.src,
                comm: self.key.comm,
                tag: self.key.id,
                len: msg.len(),
            });
            return Poll::Ready(Ok(msg));
        }
        if let Some(err) = &w.failure {
            return Poll::Ready(Err(err.clone()));
        }
        w.states[self.me] = RankState::Waiting(self.key);
        w.wakers[self.me] = Some(cx.waker().clone());
        match w.check_deadlock() {
            Some(err) => Poll::Ready(Err(err)),
            None => Poll::Pending,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    RoundRobin,
    /// Ready ranks stepped in a seeded random order.
    Shuffled(u64),
    /// One OS thread per rank.
    Threaded,
}

#[derive(Debug, Clone)]
pub struct RunOutput<T> {
    pub results: Vec<T>,
    pub stats: CommStats,
    pub traces: Vec<Vec<TraceEvent>>,
}

#[derive(Debug, Clone, Copy)]
pub struct Runtime {
    pub cores_per_node: usize,
    pub schedule: Schedule,
}

struct ReadyQueue {
    queue: VecDeque<usize>,
    queued: Vec<bool>,
}

struct QueueWaker {
    rank: usize,
    ready: Arc<Mutex<ReadyQueue>>,
}

impl Wake for QueueWaker {
    fn wake(self: Arc<Self>) {
        let mut q = self.ready.lock().unwrap_or_else(|p| p.into_inner());
        if !q.queued[self.rank] {
            q.queued[self.rank] = true;
            q.queue.push_back(self.rank);
        }
    }
}

struct ThreadWaker(std::thread::Thread);

impl Wake for ThreadWaker {
    fn wake(self: Arc<Self>) {
        self.0.unpark();
    }
}

type RankFuture<'a, T> = Pin<Box<dyn Future<Output = Result<T>> + Send + 'a>>;

impl Runtime {
    pub fn new(cores_per_node: usize, schedule: Schedule) -> Self {
        Self {
            cores_per_node: cores_per_node.max(1),
            schedule,
        }
    }

    /// Run `body` once per rank and collect the per-rank results.
    ///
    /// A failing rank aborts the whole run; the first failure is returned.
    pub fn run<'a, F, Fut, T>(&self, n_ranks: usize, body: F) -> Result<RunOutput<T>>
    where
        F: Fn(RankCtx) -> Fut,
        Fut: Future<Output = Result<T>> + Send + 'a,
        T: Send,
    {
        let shared: Shared = Arc::new(Mutex::new(World {
            cores_per_node: self.cores_per_node,
            mailboxes: HashMap::new(),
            states: vec![RankState::Runnable; n_ranks],
            wakers: vec![None; n_ranks],
            labels: HashMap::new(),
            stats: CommStats::with_ranks(n_ranks),
            traces: vec![Vec::new(); n_ranks],
            failure: None,
        }));
        let futures: Vec<RankFuture<'a, T>> = (0..n_ranks)
            .map(|rank| {
                let ctx = RankCtx {
                    rank,
                    size: n_ranks,
                    shared: shared.clone(),
                    coll_seq: Default::default(),
                };
                Box::pin(body(ctx)) as RankFuture<'a, T>
            })
            .collect();

        let results = match self.schedule {
            Schedule::Threaded => run_threaded(&shared, futures),
            Schedule::RoundRobin => run_stepped(&shared, futures, None),
            Schedule::Shuffled(seed) => run_stepped(&shared, futures, Some(seed)),
        };

        let mut w = lock(&shared);
        if let Some(err) = w.failure.clone() {
            return Err(err);
        }
        let mut out = Vec::with_capacity(n_ranks);
        for r in results {
            out.push(r?);
        }
        Ok(RunOutput {
            results: out,
            stats: std::mem::take(&mut w.stats),
            traces: std::mem::take(&mut w.traces),
        })
    }
}

fn finish(shared: &Shared, rank: usize) {
    let mut w = lock(shared);
    w.states[rank] = RankState::Done;
    w.check_deadlock();
}

fn run_stepped<T>(shared: &Shared, mut futures: Vec<RankFuture<'_, T>>, seed: Option<u64>) -> Vec<Result<T>> {
    let n = futures.len();
    let ready = Arc::new(Mutex::new(ReadyQueue {
        queue: (0..n).collect(),
        queued: vec![true; n],
    }));
    let wakers: Vec<Waker> = (0..n)
        .map(|rank| {
            Waker::from(Arc::new(QueueWaker {
                rank,
                ready: ready.clone(),
            }))
        })
        .collect();
    let mut rng = seed.map(ChaCha8Rng::seed_from_u64);
    let mut results: Vec<Option<Result<T>>> = (0..n).map(|_| None).collect();
    loop {
        let next = {
            let mut q = ready.lock().unwrap_or_else(|p| p.into_inner());
            let picked = match rng.as_mut() {
                Some(rng) if !q.queue.is_empty() => {
                    let i = rng.gen_range(0..q.queue.len());
                    q.queue.remove(i)
                }
                _ => q.queue.pop_front(),
            };
            if let Some(r) = picked {
                q.queued[r] = false;
            }
            picked
        };
        let Some(rank) = next else { break };
        if results[rank].is_some() {
            continue;
        }
        let mut cx = Context::from_waker(&wakers[rank]);
        if let Poll::Ready(r) = futures[rank].as_mut().poll(&mut cx) {
            results[rank] = Some(r);
            finish(shared, rank);
        }
    }
    results
        .into_iter()
        .map(|r| {
            r.unwrap_or_else(|| {
                let mut w = lock(shared);
                Err(w.check_deadlock().unwrap_or_else(|| Error::Deadlock { blocked: Vec::new() }))
            })
        })
        .collect()
}

fn run_threaded<T: Send>(shared: &Shared, futures: Vec<RankFuture<'_, T>>) -> Vec<Result<T>> {
    std::thread::scope(|scope| {
        let handles: Vec<_> = futures
            .into_iter()
            .enumerate()
            .map(|(rank, mut fut)| {
                scope.spawn(move || {
                    let waker = Waker::from(Arc::new(ThreadWaker(std::thread::current())));
                    let mut cx = Context::from_waker(&waker);
                    let out = loop {
                        match fut.as_mut().poll(&mut cx) {
                            Poll::Ready(r) => break r,
                            Poll::Pending => std::thread::park(),
                        }
                    };
                    finish(shared, rank);
                    out
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("rank thread panicked"))
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decomp::RankOrder;

    const T0: Tag = Tag::new(0, "test");

    fn schedules() -> Vec<Schedule> {
        vec![
            Schedule::RoundRobin,
            Schedule::Shuffled(1),
            Schedule::Shuffled(99),
            Schedule::Threaded,
        ]
    }

    #[test]
    fn point_to_point_identity_and_bytes() {
        for s in schedules() {
            let out = Runtime::new(1, s)
                .run(2, |ctx| async move {
                    let w = ctx.world();
                    if ctx.rank() == 0 {
                        ctx.send(&w, 1, T0, vec![1.0, 2.0, 3.0])?;
                        Ok(vec![])
                    } else {
                        ctx.recv(&w, 0, T0).await
                    }
                })
                .unwrap();
            assert_eq!(out.results[1], vec![1.0, 2.0, 3.0]);
            assert_eq!(out.stats.total.p2p_bytes.total(), 24);
            assert_eq!(out.stats.total.p2p_messages.total(), 1);
        }
    }

    #[test]
    fn fifo_per_channel() {
        for s in schedules() {
            let out = Runtime::new(4, s)
                .run(2, |ctx| async move {
                    let w = ctx.world();
                    if ctx.rank() == 0 {
                        for i in 0..5 {
                            ctx.send(&w, 1, T0, vec![i as f64])?;
                        }
                        Ok(vec![])
                    } else {
                        let mut got = Vec::new();
                        for _ in 0..5 {
                            got.extend(ctx.recv(&w, 0, T0).await?);
                        }
                        Ok(got)
                    }
                })
                .unwrap();
            assert_eq!(out.results[1], vec![0.0, 1.0, 2.0, 3.0, 4.0]);
        }
    }

    #[test]
    fn deadlock_is_reported() {
        for s in schedules() {
            let err = Runtime::new(1, s)
                .run(3, |ctx| async move {
                    let w = ctx.world();
                    let from = (ctx.rank() + 1) % 3;
                    ctx.recv(&w, from, T0).await
                })
                .unwrap_err();
            match err {
                Error::Deadlock { blocked } => {
                    let mut ranks: Vec<usize> = blocked.iter().map(|b| b.rank).collect();
                    ranks.sort();
                    assert_eq!(ranks, vec![0, 1, 2]);
                }
                other => panic!("expected deadlock, got {other:?}"),
            }
        }
    }

    #[test]
    fn deadlock_after_partial_completion() {
        let err = Runtime::new(1, Schedule::RoundRobin)
            .run(2, |ctx| async move {
                let w = ctx.world();
                if ctx.rank() == 0 {
                    return Ok(vec![]);
                }
                ctx.recv(&w, 0, T0).await
            })
            .unwrap_err();
        assert!(err.to_string().contains("rank 1 waits on rank 0"));
    }

    #[test]
    fn allgather_examples() {
        for s in schedules() {
            for p in [1usize, 4, 5] {
                let k = 3;
                let out = Runtime::new(64, s)
                    .run(p, |ctx| async move {
                        let w = ctx.world();
                        let block = vec![ctx.rank() as f64; k];
                        ctx.allgather(&w, &block).await
                    })
                    .unwrap();
                let expect: Vec<f64> = (0..p).flat_map(|r| vec![r as f64; k]).collect();
                assert!(out.results.iter().all(|r| *r == expect));
                let total = (p * (p - 1) * 8 * k) as u64;
                assert_eq!(out.stats.total.coll_bytes.total(), total);
                for r in 0..p {
                    assert_eq!(out.stats.rank(r, CommKind::Global).coll_received, ((p - 1) * k * 8) as u64);
                }
                assert_eq!(out.stats.total.p2p_bytes.total(), 0);
            }
        }
    }

    #[test]
    fn allgather_rejects_mismatched_blocks() {
        let err = Runtime::new(1, Schedule::RoundRobin)
            .run(3, |ctx| async move {
                let w = ctx.world();
                let block = vec![1.0; if ctx.rank() == 2 { 2 } else { 1 }];
                ctx.allgather(&w, &block).await
            })
            .unwrap_err();
        assert!(matches!(err, Error::Collective { .. }));
    }

    #[test]
    fn allreduce_and_exscan_examples() {
        for s in schedules() {
            let out = Runtime::new(2, s)
                .run(4, |ctx| async move {
                    let w = ctx.world();
                    let v = [ctx.rank() as f64 + 1.0];
                    let sum = ctx.allreduce_sum(&w, &v).await?;
                    let ex = ctx.exscan_sum(&w, &v).await?;
                    Ok((sum[0], ex[0], v[0]))
                })
                .unwrap();
            let sums: Vec<f64> = out.results.iter().map(|r| r.0).collect();
            let scans: Vec<f64> = out.results.iter().map(|r| r.1).collect();
            assert_eq!(sums, vec![10.0; 4]);
            assert_eq!(scans, vec![0.0, 1.0, 3.0, 6.0]);
            let last = out.results[3];
            assert_eq!(last.1 + last.2, last.0);
        }
        let single = Runtime::new(1, Schedule::RoundRobin)
            .run(1, |ctx| async move {
                let w = ctx.world();
                Ok((ctx.allreduce_sum(&w, &[7.0]).await?, ctx.exscan_sum(&w, &[7.0]).await?))
            })
            .unwrap();
        assert_eq!(single.results[0], (vec![7.0], vec![0.0]));
    }

    #[test]
    fn allreduce_rejects_mismatched_lengths() {
        let err = Runtime::new(1, Schedule::Threaded)
            .run(3, |ctx| async move {
                let w = ctx.world();
                ctx.allreduce_sum(&w, &vec![1.0; ctx.rank() + 1]).await
            })
            .unwrap_err();
        assert!(matches!(err, Error::Collective { .. }));
    }

    #[test]
    fn reductions_are_bitwise_reproducible() {
        let values = [0.1, 1e16, -1e16, 0.3, 0.7];
        let mut first = None;
        for s in schedules() {
            let out = Runtime::new(1, s)
                .run(5, |ctx| async move {
                    let w = ctx.world();
                    ctx.allreduce_sum(&w, &[values[ctx.rank()]]).await
                })
                .unwrap();
            let bits: Vec<u64> = out.results.iter().map(|v| v[0].to_bits()).collect();
            assert!(bits.iter().all(|b| *b == bits[0]));
            match first {
                None => first = Some(bits[0]),
                Some(b) => assert_eq!(b, bits[0]),
            }
        }
    }

    #[test]
    fn sub_communicators_partition_ranks() {
        let g = ProcessGrid {
            px: 2,
            py: 3,
            pz: 2,
            order: RankOrder::YPrior,
            cores_per_node: 4,
        };
        for kind in [CommKind::X, CommKind::Y, CommKind::Z] {
            let mut count = vec![0; g.size()];
            for r in 0..g.size() {
                let c = Communicator::along(&g, r, kind).unwrap();
                assert_eq!(c.members[c.my_index], r);
                if c.my_index == 0 {
                    for m in &c.members {
                        count[*m] += 1;
                    }
                }
            }
            assert!(count.iter().all(|&c| c == 1));
        }
    }

    #[test]
    fn traces_and_counters_agree_across_schedules() {
        let run = |s| {
            Runtime::new(2, s)
                .run(6, |ctx| async move {
                    let w = ctx.world();
                    let me = ctx.rank();
                    ctx.send(&w, (me + 1) % 6, T0, vec![me as f64; me + 1])?;
                    let got = ctx.recv(&w, (me + 5) % 6, T0).await?;
                    let g = ctx.allgather(&w, &got[..1]).await?;
                    Ok(g.iter().sum::<f64>())
                })
                .unwrap()
        };
        let base = run(Schedule::RoundRobin);
        for s in schedules() {
            let o = run(s);
            assert_eq!(o.results, base.results);
            assert_eq!(o.traces, base.traces);
            assert_eq!(o.stats, base.stats);
        }
        let sent: u64 = (0..6).map(|r| base.stats.rank(r, CommKind::Global).p2p_sent).sum();
        let recv: u64 = (0..6).map(|r| base.stats.rank(r, CommKind::Global).p2p_received).sum();
        assert_eq!(sent, recv);
        assert_eq!(
            base.stats.total.p2p_bytes.intra + base.stats.total.p2p_bytes.inter,
            base.stats.total.p2p_bytes.total()
        );
    }

    #[test]
    fn stats_json_schema() {
        let out = Runtime::new(1, Schedule::RoundRobin)
            .run(2, |ctx| async move {
                let w = ctx.world();
                ctx.allreduce_sum(&w, &[1.0]).await
            })
            .unwrap();
        let j = out.stats.to_json();
        for k in ["global", "x", "y", "z"] {
            let c = &j["per_comm"][k];
            for f in ["p2p_msgs", "p2p_bytes", "coll_ops", "coll_bytes", "intra_bytes", "inter_bytes"] {
                assert!(c[f].is_u64(), "{k}.{f}");
            }
        }
        assert_eq!(j["per_comm"]["global"]["coll_ops"], 1);
        assert_eq!(j["per_comm"]["global"]["coll_bytes"], 16);
        assert_eq!(j["per_comm"]["global"]["inter_bytes"], 16);
    }
}
