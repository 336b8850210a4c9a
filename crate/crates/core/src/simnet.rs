//! In-memory message bus with byte accounting and scheduled dropout.
//!
//! Entities exchange opaque byte payloads. Every delivery is charged to the
//! sender and the recipient under the current round and the message kind; a
//! message addressed to a dropped entity is discarded and reported back to
//! the sender, which is how the protocol layer observes dropout.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::time::{Duration, Instant};

use rand::seq::index::sample;

use crate::error::{Error, Result};
use crate::{stream_rng, UserId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Entity {
    Server,
    User(UserId),
}

impl fmt::Display for Entity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Entity::Server => f.write_str("server"),
            Entity::User(u) => write!(f, "{u}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MessageKind {
    PublicKeys,
    KeyDirectory,
    ShareCiphertext,
    PublishedTree,
    CandidateList,
    MaskedVector,
    ActiveList,
    SeedReveal,
    /// Not a message: handler time charged to an entity.
    Compute,
}

impl MessageKind {
    pub fn name(self) -> &'static str {
        match self {
            MessageKind::PublicKeys => "public_keys",
            MessageKind::KeyDirectory => "key_directory",
            MessageKind::ShareCiphertext => "share_ciphertext",
            MessageKind::PublishedTree => "published_tree",
            MessageKind::CandidateList => "candidate_list",
            MessageKind::MaskedVector => "masked_vector",
            MessageKind::ActiveList => "active_list",
            MessageKind::SeedReveal => "seed_reveal",
            MessageKind::Compute => "compute",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Envelope {
    pub from: Entity,
    pub to: Entity,
    pub kind: MessageKind,
    pub round: u32,
    pub payload: Vec<u8>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Delivery {
    Delivered,
    RecipientDropped,
}

/// Tells a sender that its message was discarded.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DropNotice {
    pub sender: Entity,
    pub recipient: Entity,
    pub kind: MessageKind,
    pub round: u32,
    pub bytes: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counter {
    pub bytes_sent: u64,
    pub bytes_recv: u64,
    pub bytes_dropped: u64,
    pub messages: u64,
    pub cpu: Duration,
}

/// Accounting keyed by `(round, entity, kind)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RoundMetrics {
    pub cells: BTreeMap<(u32, Entity, MessageKind), Counter>,
}

impl RoundMetrics {
    fn cell(&mut self, round: u32, entity: Entity, kind: MessageKind) -> &mut Counter {
        self.cells.entry((round, entity, kind)).or_default()
    }

    pub fn total_sent(&self) -> u64 {
        self.cells.values().map(|c| c.bytes_sent).sum()
    }

    pub fn total_received(&self) -> u64 {
        self.cells.values().map(|c| c.bytes_recv).sum()
    }

    pub fn total_dropped(&self) -> u64 {
        self.cells.values().map(|c| c.bytes_dropped).sum()
    }

    /// `(sent, received)` of one entity across all rounds and kinds.
    pub fn entity_bytes(&self, entity: Entity) -> (u64, u64) {
        self.cells
            .iter()
            .filter(|((_, e, _), _)| *e == entity)
            .fold((0, 0), |(s, r), (_, c)| (s + c.bytes_sent, r + c.bytes_recv))
    }

    pub fn entity_cpu(&self, entity: Entity) -> Duration {
        self.cells.iter().filter(|((_, e, _), _)| *e == entity).map(|(_, c)| c.cpu).sum()
    }

    pub fn kind_bytes(&self, kind: MessageKind) -> u64 {
        self.cells.iter().filter(|((_, _, k), _)| *k == kind).map(|(_, c)| c.bytes_sent).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.values().all(|c| *c == Counter::default())
    }

    /// Rows of `run_id,round,entity,kind,bytes_sent,bytes_recv,cpu_ms`.
    pub fn csv_rows(&self, run_id: &str) -> Vec<String> {
        self.cells
            .iter()
            .map(|((round, entity, kind), c)| {
                format!(
                    "{run_id},{round},{entity},{},{},{},{:.3}",
                    kind.name(),
                    c.bytes_sent,
                    c.bytes_recv,
                    c.cpu.as_secs_f64() * 1e3
                )
            })
            .collect()
    }
}

pub const METRICS_CSV_HEADER: &str = "run_id,round,entity,kind,bytes_sent,bytes_recv,cpu_ms";

#[derive(Debug, Default)]
pub struct Bus {
    registered: BTreeSet<Entity>,
    dropped: BTreeSet<Entity>,
    inboxes: BTreeMap<Entity, VecDeque<Envelope>>,
    notices: Vec<DropNotice>,
    metrics: RoundMetrics,
    round: u32,
    measure_time: bool,
    log: Option<Vec<Envelope>>,
}

impl Bus {
    pub fn new() -> Self {
        Bus::default()
    }

    /// Charge real handler time through [`Bus::timed`]; off by default so
    /// that metrics are reproducible.
    pub fn with_timing(mut self, on: bool) -> Self {
        self.measure_time = on;
        self
    }

    /// Keeps a copy of every envelope handed to [`Bus::deliver`].
    pub fn with_log(mut self, on: bool) -> Self {
        self.log = on.then(Vec::new);
        self
    }

    pub fn log(&self) -> &[Envelope] {
        self.log.as_deref().unwrap_or(&[])
    }

    pub fn register(&mut self, entity: Entity) {
        self.registered.insert(entity);
        self.dropped.remove(&entity);
        self.inboxes.entry(entity).or_default();
    }

    pub fn is_registered(&self, entity: Entity) -> bool {
        self.registered.contains(&entity)
    }

    /// Disconnects an entity and discards whatever was waiting for it.
    pub fn drop_entity(&mut self, entity: Entity) {
        self.dropped.insert(entity);
        if let Some(inbox) = self.inboxes.get_mut(&entity) {
            inbox.clear();
        }
    }

    pub fn reconnect(&mut self, entity: Entity) {
        self.dropped.remove(&entity);
    }

    pub fn is_dropped(&self, entity: Entity) -> bool {
        self.dropped.contains(&entity)
    }

    pub fn set_round(&mut self, round: u32) {
        self.round = round;
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn send(
        &mut self,
        from: Entity,
        to: Entity,
        kind: MessageKind,
        payload: Vec<u8>,
    ) -> Result<Delivery> {
        let round = self.round;
        self.deliver(Envelope { from, to, kind, round, payload })
    }

    pub fn deliver(&mut self, env: Envelope) -> Result<Delivery> {
        if !self.registered.contains(&env.from) {
            return Err(Error::Registration(format!("{} is not registered", env.from)));
        }
        if !self.registered.contains(&env.to) {
            return Err(Error::Registration(format!("{} is not registered", env.to)));
        }
        if self.dropped.contains(&env.from) {
            return Err(Error::SenderDropped(env.from.to_string()));
        }
        if let Some(log) = self.log.as_mut() {
            log.push(env.clone());
        }
        let bytes = env.payload.len() as u64;
        let sender = self.metrics.cell(env.round, env.from, env.kind);
        sender.bytes_sent += bytes;
        sender.messages += 1;
        if self.dropped.contains(&env.to) {
            self.metrics.cell(env.round, env.to, env.kind).bytes_dropped += bytes;
            self.notices.push(DropNotice {
                sender: env.from,
                recipient: env.to,
                kind: env.kind,
                round: env.round,
                bytes: env.payload.len(),
            });
            return Ok(Delivery::RecipientDropped);
        }
        self.metrics.cell(env.round, env.to, env.kind).bytes_recv += bytes;
        self.inboxes.entry(env.to).or_default().push_back(env);
        Ok(Delivery::Delivered)
    }

    /// Takes every queued message for `entity`, in arrival order.
    pub fn recv_all(&mut self, entity: Entity) -> Vec<Envelope> {
        self.inboxes.get_mut(&entity).map(|q| q.drain(..).collect()).unwrap_or_default()
    }

    /// Takes the queued messages of one kind, leaving the rest.
    pub fn recv_kind(&mut self, entity: Entity, kind: MessageKind) -> Vec<Envelope> {
        let Some(q) = self.inboxes.get_mut(&entity) else { return Vec::new() };
        let (hit, keep): (Vec<_>, Vec<_>) = q.drain(..).partition(|e| e.kind == kind);
        q.extend(keep);
        hit
    }

    pub fn take_notices(&mut self) -> Vec<DropNotice> {
        std::mem::take(&mut self.notices)
    }

    /// Runs `f` on behalf of `entity`, charging its duration when timing is on.
    pub fn timed<T>(&mut self, entity: Entity, f: impl FnOnce() -> T) -> T {
        if !self.measure_time {
            return f();
        }
        let start = Instant::now();
        let out = f();
        let round = self.round;
        self.metrics.cell(round, entity, MessageKind::Compute).cpu += start.elapsed();
        out
    }

    pub fn metrics(&self) -> &RoundMetrics {
        &self.metrics
    }

    pub fn snapshot_metrics(&self) -> RoundMetrics {
        self.metrics.clone()
    }
}

/// Disconnects `round(rate * n)` users, chosen uniformly without
/// replacement, at every round that is a positive multiple of `period`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DropoutSchedule {
    pub period: u32,
    pub rate: f64,
    pub seed: u64,
}

impl DropoutSchedule {
    pub fn none() -> Self {
        DropoutSchedule { period: 10, rate: 0.0, seed: 0 }
    }

    pub fn count(&self, n: usize) -> usize {
        ((self.rate * n as f64).round() as usize).min(n)
    }

    pub fn apply(&self, round: u32, users: &[UserId]) -> Vec<UserId> {
        if self.rate <= 0.0 || self.period == 0 || round == 0 || !round.is_multiple_of(self.period) {
            return Vec::new();
        }
        let mut rng = stream_rng(self.seed, &format!("dropout-round-{round}"));
        let mut picked: Vec<UserId> =
            sample(&mut rng, users.len(), self.count(users.len())).into_iter().map(|i| users[i]).collect();
        picked.sort_unstable();
        picked
    }
}
