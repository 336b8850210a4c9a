//! Federated training: users and the server as message-passing state
//! machines over [`crate::simnet::Bus`].
//!
//! Every tree runs in a key epoch. Users publish transport and fresh mask
//! public keys, the server answers with the key directory, and each user
//! Shamir-shares its private mask key to every other member through the
//! server, sealed under the pairwise transport key. The tree then grows one
//! level at a time: the server publishes the partial tree and the sampled
//! candidates, every member routes its own rows, and one secure aggregation
//! returns the level's gradient totals.
//!
//! Dropout is handled in two ways. A member that vanishes during key
//! sharing is excluded from the epoch (and replaced from the standby pool
//! when possible), after which key sharing restarts. A member that vanishes
//! inside an aggregation is left out of the active list and its mask key is
//! rebuilt from the shares the remaining members reveal.

pub mod user;
pub mod wire;

use std::collections::{BTreeMap, BTreeSet};

use num_bigint::BigUint;
use rand_chacha::ChaCha20Rng;

use crate::bresson::{key_gen, KeyPair};
use crate::codec::FixedPointConfig;
use crate::data_io::Row;
use crate::error::{Error, Result};
use crate::group_math::GroupParams;
use crate::secagg::{aggregate_unmask, AggregationState, MaskedVector, SeedReveal};
use crate::simnet::{Bus, Delivery, DropoutSchedule, Entity, MessageKind, RoundMetrics};
use crate::xgboost::grower::{grow_tree, LevelPlan, LevelRecord, LevelStatsSource};
use crate::xgboost::split::enumerate_candidates;
use crate::xgboost::{BaseScore, BoostConfig, BoostModel, CartTree, FeatureCandidates};
use crate::{stream_rng, UserId};

pub use user::UserState;
pub use wire::{KeyEntry, Message, StatsRequest, TreeStage};

/// When scheduled users disconnect within their tree.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DropoutPhase {
    /// After publishing keys, before sending shares.
    KeySharing,
    /// Before uploading the first masked vector of the tree.
    Upload,
    /// After uploading, before revealing the seed.
    Reveal,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FedConfig {
    pub boost: BoostConfig,
    pub threshold: usize,
    pub dropout: DropoutSchedule,
    pub dropout_phase: DropoutPhase,
    /// The last `standby` users hold data but only join as replacements.
    pub standby: usize,
    /// Run key sharing for every tree instead of only when membership changes.
    pub rekey_per_tree: bool,
    /// Disconnected users come back at the next tree.
    pub rejoin: bool,
    pub measure_time: bool,
    /// Keep every envelope on the bus for inspection.
    pub log_messages: bool,
}

impl FedConfig {
    pub fn new(boost: BoostConfig, threshold: usize) -> Self {
        FedConfig {
            boost,
            threshold,
            dropout: DropoutSchedule::none(),
            dropout_phase: DropoutPhase::Upload,
            standby: 0,
            rekey_per_tree: true,
            rejoin: true,
            measure_time: false,
            log_messages: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DropoutEvent {
    Disconnected {
        round: u32,
        user: UserId,
        phase: DropoutPhase,
    },
    /// Left out of a key epoch; `replacement` came from the standby pool.
    Excluded {
        round: u32,
        user: UserId,
        replacement: Option<UserId>,
    },
    /// A sealed share failed authentication; its owner was excluded.
    ShareRejected {
        round: u32,
        owner: UserId,
        holder: UserId,
    },
    Recovered {
        round: u32,
        session: u64,
        user: UserId,
    },
    Demoted {
        round: u32,
        session: u64,
        user: UserId,
    },
    Aborted {
        round: u32,
        active: usize,
        threshold: usize,
    },
    Rejoined {
        round: u32,
        user: UserId,
    },
}

/// One secure aggregation as seen by the server.
#[derive(Clone, Debug)]
pub struct RoundOutcome {
    pub round: u32,
    pub session: u64,
    pub registered: Vec<UserId>,
    pub active: Vec<UserId>,
    pub recovered: Vec<UserId>,
    pub sums: Vec<BigUint>,
    pub values: Vec<f64>,
}

#[derive(Debug)]
pub struct FedRun {
    pub model: BoostModel,
    pub trace: Vec<Vec<LevelRecord>>,
    pub aborted_trees: Vec<usize>,
    pub events: Vec<DropoutEvent>,
    pub metrics: RoundMetrics,
}

struct ServerState {
    keys: KeyPair,
    directory: BTreeMap<UserId, KeyEntry>,
    session: u64,
    final_delivered: BTreeMap<UserId, usize>,
    base_delivered: BTreeSet<UserId>,
}

pub struct Federation {
    params: GroupParams,
    cfg: FedConfig,
    codec: FixedPointConfig,
    pub bus: Bus,
    server: ServerState,
    users: BTreeMap<UserId, UserState>,
    participants: Vec<UserId>,
    standby: Vec<UserId>,
    members: Vec<UserId>,
    epoch_ready: bool,
    offline: BTreeSet<UserId>,
    pending_drops: BTreeMap<UserId, DropoutPhase>,
    base_margin: Option<f64>,
    published: Vec<String>,
    candidates: Vec<FeatureCandidates>,
    feature_rng: ChaCha20Rng,
    round: u32,
    tamper: Option<(UserId, UserId)>,
    pub events: Vec<DropoutEvent>,
    pub outcomes: Vec<RoundOutcome>,
}

impl Federation {
    /// Registers the server and one user per shard.
    pub fn new(
        params: GroupParams,
        shards: Vec<(UserId, Vec<Row>, Vec<f64>)>,
        domains: &[(f64, f64)],
        cfg: FedConfig,
    ) -> Result<Self> {
        let n_total = shards.len();
        if cfg.standby >= n_total {
            return Err(Error::InvalidParameter(format!(
                "{} standby users leave no participants among {n_total}",
                cfg.standby
            )));
        }
        let n = n_total - cfg.standby;
        if cfg.threshold == 0 || cfg.threshold > n {
            return Err(Error::InvalidParameter(format!("threshold {} must be in [1, {n}]", cfg.threshold)));
        }
        let codec = FixedPointConfig::new(cfg.boost.frac_bits, params.n.clone());
        let total_rows: usize = shards.iter().map(|s| s.1.len()).sum();
        codec.check_headroom(total_rows as f64 + 1.0)?;

        let seed = cfg.boost.seed;
        let mut bus = Bus::new().with_timing(cfg.measure_time).with_log(cfg.log_messages);
        bus.register(Entity::Server);
        let mut users = BTreeMap::new();
        let mut order = Vec::with_capacity(n_total);
        for (id, rows, labels) in shards {
            if id.0 == 0 {
                return Err(Error::Registration("user index 0 is reserved".into()));
            }
            if users.contains_key(&id) {
                return Err(Error::Registration(format!("duplicate user index {}", id.0)));
            }
            if rows.len() != labels.len() {
                return Err(Error::InvalidParameter(format!("{id}: rows and labels differ in length")));
            }
            bus.register(Entity::User(id));
            let u = UserState::new(id, rows, labels, &params, codec.clone(), cfg.boost.learning_rate, seed);
            users.insert(id, u);
            order.push(id);
        }
        let standby = order.split_off(n);
        let mut server_rng = stream_rng(seed, "server");
        let keys = key_gen(&params, &mut server_rng);
        let (candidates, _) = enumerate_candidates(domains, cfg.boost.bins);
        let feature_rng = cfg.boost.feature_rng();
        Ok(Federation {
            params,
            codec,
            bus,
            server: ServerState {
                keys,
                directory: BTreeMap::new(),
                session: 0,
                final_delivered: BTreeMap::new(),
                base_delivered: BTreeSet::new(),
            },
            users,
            members: order.clone(),
            participants: order,
            standby,
            epoch_ready: false,
            offline: BTreeSet::new(),
            pending_drops: BTreeMap::new(),
            base_margin: None,
            published: Vec::new(),
            candidates,
            feature_rng,
            round: 0,
            tamper: None,
            events: Vec::new(),
            outcomes: Vec::new(),
            cfg,
        })
    }

    pub fn params(&self) -> &GroupParams {
        &self.params
    }

    pub fn user(&self, id: UserId) -> Option<&UserState> {
        self.users.get(&id)
    }

    pub fn user_mut(&mut self, id: UserId) -> Option<&mut UserState> {
        self.users.get_mut(&id)
    }

    /// Members of the current key epoch.
    pub fn members(&self) -> &[UserId] {
        &self.members
    }

    pub fn server_public(&self) -> &BigUint {
        &self.server.keys.public
    }

    pub fn set_round(&mut self, round: u32) {
        self.round = round;
        self.bus.set_round(round);
    }

    /// Flips one byte of the next share sealed by `owner` for `holder` while
    /// the server relays it.
    pub fn tamper_next_share(&mut self, owner: UserId, holder: UserId) {
        self.tamper = Some((owner, holder));
    }

    /// Schedules `user` to disconnect at `phase` of the current tree.
    pub fn schedule_drop(&mut self, user: UserId, phase: DropoutPhase) {
        self.pending_drops.insert(user, phase);
    }

    pub fn disconnect(&mut self, user: UserId) {
        let phase = self.pending_drops.remove(&user).unwrap_or(DropoutPhase::Upload);
        if self.offline.insert(user) {
            self.bus.drop_entity(Entity::User(user));
            self.events.push(DropoutEvent::Disconnected { round: self.round, user, phase });
        }
    }

    fn fire_drops(&mut self, phase: DropoutPhase) {
        let due: Vec<UserId> =
            self.pending_drops.iter().filter(|(_, p)| **p == phase).map(|(u, _)| *u).collect();
        for u in due {
            self.disconnect(u);
        }
    }

    fn online(&self, u: UserId) -> bool {
        !self.offline.contains(&u)
    }

    fn send(&mut self, from: Entity, to: Entity, msg: &Message) -> Result<Delivery> {
        let bytes = msg.encode(&self.params);
        self.bus.send(from, to, msg.kind(), bytes)
    }

    fn take(&mut self, at: Entity, kind: MessageKind) -> Result<Vec<(Entity, Message)>> {
        self.bus
            .recv_kind(at, kind)
            .into_iter()
            .map(|env| Ok((env.from, Message::decode(env.kind, &env.payload, &self.params)?)))
            .collect()
    }

    fn check_threshold(&mut self, active: usize) -> Result<()> {
        if active < self.cfg.threshold.max(1) {
            self.events.push(DropoutEvent::Aborted {
                round: self.round,
                active,
                threshold: self.cfg.threshold,
            });
            return Err(Error::RoundAbort { active, threshold: self.cfg.threshold });
        }
        Ok(())
    }

    /// Step 1: members publish keys and receive the directory. Returns the
    /// members that took part.
    pub fn run_setup(&mut self) -> Result<Vec<UserId>> {
        let members = self.members.clone();
        for &u in &members {
            if !self.online(u) {
                continue;
            }
            let e = Entity::User(u);
            let user = self.users.get_mut(&u).expect("member exists");
            let msg = self.bus.timed(e, || user.begin_epoch());
            self.send(e, Entity::Server, &msg)?;
        }
        self.fire_drops(DropoutPhase::KeySharing);
        let mut directory = BTreeMap::new();
        for (from, msg) in self.take(Entity::Server, MessageKind::PublicKeys)? {
            let Message::PublicKeys(entry) = msg else { unreachable!("filtered by kind") };
            if from != Entity::User(entry.user) || !members.contains(&entry.user) {
                return Err(Error::Registration(format!("unexpected key registration from {from}")));
            }
            if directory.insert(entry.user, entry).is_some() {
                return Err(Error::Registration(format!("{from} registered twice")));
            }
        }
        let listed: Vec<UserId> = directory.keys().copied().collect();
        let msg = Message::KeyDirectory {
            server_mask: self.server.keys.public.clone(),
            threshold: self.cfg.threshold as u32,
            entries: directory.values().cloned().collect(),
        };
        for &u in &listed {
            self.send(Entity::Server, Entity::User(u), &msg)?;
        }
        self.server.directory = directory;
        Ok(listed)
    }

    /// Step 2: shares of every listed member's mask key travel sealed through
    /// the server. Returns members that must leave the epoch.
    pub fn run_mask_key_sharing(&mut self, listed: &[UserId]) -> Result<BTreeSet<UserId>> {
        let round = self.round;
        for &u in listed {
            if !self.online(u) {
                continue;
            }
            let e = Entity::User(u);
            let inbox = self.take(e, MessageKind::KeyDirectory)?;
            let Some((_, Message::KeyDirectory { server_mask, threshold, entries })) =
                inbox.into_iter().last()
            else {
                continue;
            };
            let user = self.users.get_mut(&u).expect("member exists");
            let out = self.bus.timed(e, || user.on_directory(server_mask, threshold, entries, round))?;
            for msg in out {
                self.send(e, Entity::Server, &msg)?;
            }
        }
        for (_, msg) in self.take(Entity::Server, MessageKind::ShareCiphertext)? {
            let Message::ShareCiphertext { owner, holder, mut sealed } = msg else { unreachable!() };
            if self.tamper == Some((owner, holder)) {
                self.tamper = None;
                let mid = sealed.len() / 2;
                sealed[mid] ^= 0x01;
            }
            self.send(
                Entity::Server,
                Entity::User(holder),
                &Message::ShareCiphertext { owner, holder, sealed },
            )?;
        }
        let mut leaving: BTreeSet<UserId> = BTreeSet::new();
        for &u in listed {
            if !self.online(u) {
                leaving.insert(u);
                continue;
            }
            let e = Entity::User(u);
            for (_, msg) in self.take(e, MessageKind::ShareCiphertext)? {
                let Message::ShareCiphertext { owner, holder, sealed } = msg else { unreachable!() };
                let user = self.users.get_mut(&u).expect("member exists");
                match self.bus.timed(e, || user.on_share(owner, holder, &sealed)) {
                    Ok(()) => {}
                    Err(Error::AuthenticationFailed) => {
                        self.events.push(DropoutEvent::ShareRejected { round, owner, holder });
                        leaving.insert(owner);
                    }
                    Err(e) => return Err(e),
                }
            }
        }
        for &u in listed {
            let held = self.users[&u].foreign_shares().count();
            if self.online(u) && held + 1 < listed.len() {
                // some owner's share never arrived; that owner is the one to drop
                for &owner in listed {
                    if owner != u && !self.users[&u].foreign_shares().any(|s| s.owner == owner) {
                        leaving.insert(owner);
                    }
                }
            }
        }
        Ok(leaving)
    }

    /// Runs setup and key sharing until every member completed both,
    /// excluding (and replacing) members that did not.
    pub fn start_epoch(&mut self) -> Result<()> {
        self.epoch_ready = false;
        let limit = self.participants.len() + self.standby.len() + 1;
        for _ in 0..limit {
            self.members.retain(|u| !self.offline.contains(u));
            self.check_threshold(self.members.len())?;
            let listed = self.run_setup()?;
            let mut leaving = self.run_mask_key_sharing(&listed)?;
            leaving.extend(self.members.iter().filter(|u| !listed.contains(u)));
            if leaving.is_empty() {
                self.server.session = 0;
                self.epoch_ready = true;
                return Ok(());
            }
            for u in leaving {
                self.members.retain(|m| *m != u);
                let replacement =
                    self.standby.iter().copied().find(|s| self.online(*s) && !self.members.contains(s));
                if let Some(r) = replacement {
                    self.members.push(r);
                    self.members.sort_unstable();
                }
                self.events.push(DropoutEvent::Excluded { round: self.round, user: u, replacement });
            }
        }
        Err(Error::ProtocolIncomplete("key sharing did not settle".into()))
    }

    /// One secure aggregation over the inputs the members currently hold.
    pub fn secure_aggregate(&mut self) -> Result<RoundOutcome> {
        if !self.epoch_ready {
            return Err(Error::ProtocolIncomplete("no key epoch".into()));
        }
        let session = self.server.session;
        self.server.session += 1;
        self.fire_drops(DropoutPhase::Upload);

        for u in self.members.clone() {
            if !self.online(u) {
                continue;
            }
            let e = Entity::User(u);
            let user = self.users.get_mut(&u).expect("member exists");
            let msg = self.bus.timed(e, || user.upload())?;
            self.send(e, Entity::Server, &msg)?;
        }
        let mut vectors: Vec<MaskedVector> = Vec::new();
        for (from, msg) in self.take(Entity::Server, MessageKind::MaskedVector)? {
            let Message::MaskedVector(v) = msg else { unreachable!() };
            if from != Entity::User(v.sender) || !self.members.contains(&v.sender) {
                return Err(Error::Registration(format!("masked vector from non-member {from}")));
            }
            vectors.push(v);
        }
        let mut active: Vec<UserId> = vectors.iter().map(|v| v.sender).collect();
        active.sort_unstable();
        self.check_threshold(active.len())?;

        self.fire_drops(DropoutPhase::Reveal);
        let reveals: Vec<SeedReveal> = loop {
            let list = Message::ActiveList(active.clone());
            for &u in &active {
                self.send(Entity::Server, Entity::User(u), &list)?;
            }
            for &u in &active {
                if !self.online(u) {
                    continue;
                }
                let e = Entity::User(u);
                let Some((_, Message::ActiveList(ids))) =
                    self.take(e, MessageKind::ActiveList)?.into_iter().last()
                else {
                    continue;
                };
                let user = self.users.get_mut(&u).expect("member exists");
                let msg = self.bus.timed(e, || user.reveal(&ids))?;
                self.send(e, Entity::Server, &msg)?;
            }
            let got: Vec<SeedReveal> = self
                .take(Entity::Server, MessageKind::SeedReveal)?
                .into_iter()
                .map(|(_, m)| match m {
                    Message::SeedReveal(r) => r,
                    _ => unreachable!(),
                })
                .collect();
            let demoted: Vec<UserId> =
                active.iter().filter(|u| !got.iter().any(|r| r.sender == **u)).copied().collect();
            if demoted.is_empty() {
                break got;
            }
            for u in demoted {
                self.events.push(DropoutEvent::Demoted { round: self.round, session, user: u });
                active.retain(|a| *a != u);
            }
            self.check_threshold(active.len())?;
        };
        vectors.retain(|v| active.contains(&v.sender));

        let state = AggregationState {
            params: self.params.clone(),
            server_keys: self.server.keys.clone(),
            registered: self.members.clone(),
            active: active.clone(),
            threshold: self.cfg.threshold,
            mask_publics: self.server.directory.iter().map(|(u, e)| (*u, e.mask.clone())).collect(),
            session,
            codec: self.codec.clone(),
        };
        let agg = self.bus.timed(Entity::Server, || aggregate_unmask(&state, &vectors, &reveals))?;
        let recovered: Vec<UserId> = agg.recovered_keys.keys().copied().collect();
        for &u in &recovered {
            self.events.push(DropoutEvent::Recovered { round: self.round, session, user: u });
        }
        let outcome = RoundOutcome {
            round: self.round,
            session,
            registered: self.members.clone(),
            active,
            recovered,
            sums: agg.sums,
            values: agg.values,
        };
        self.outcomes.push(outcome.clone());
        Ok(outcome)
    }

    /// Sends a stats request to every online member and lets them compute it.
    fn request_stats(
        &mut self,
        request: StatsRequest,
        tree: Option<&CartTree>,
        candidates: Vec<(u32, f64)>,
    ) -> Result<()> {
        let index = self.published.len() as u32;
        let tree_msg =
            tree.map(|t| Message::PublishedTree { stage: TreeStage::Partial, index, text: t.dump() });
        let cand_msg = Message::CandidateList { request, candidates };
        for u in self.members.clone() {
            if !self.online(u) {
                continue;
            }
            if let Some(m) = &tree_msg {
                self.send(Entity::Server, Entity::User(u), m)?;
            }
            self.send(Entity::Server, Entity::User(u), &cand_msg)?;
        }
        for u in self.members.clone() {
            if self.online(u) {
                self.process_user_inbox(u)?;
            }
        }
        Ok(())
    }

    fn process_user_inbox(&mut self, u: UserId) -> Result<()> {
        let e = Entity::User(u);
        let mut msgs = self.take(e, MessageKind::PublishedTree)?;
        msgs.extend(self.take(e, MessageKind::CandidateList)?);
        let user = self.users.get_mut(&u).expect("user exists");
        for (_, msg) in msgs {
            match msg {
                Message::BaseMargin(b) => user.on_base_margin(b),
                Message::PublishedTree { stage, index, text } => {
                    self.bus.timed(e, || user.on_tree(stage, index, &text))?
                }
                Message::CandidateList { request, candidates } => {
                    self.bus.timed(e, || user.on_candidates(request, &candidates))?
                }
                _ => unreachable!("filtered by kind"),
            }
        }
        Ok(())
    }

    /// Brings every online user up to date with the base margin and the
    /// published trees it has not received yet.
    fn sync_users(&mut self) -> Result<()> {
        let everyone: Vec<UserId> = self.users.keys().copied().collect();
        for u in everyone {
            if !self.online(u) {
                continue;
            }
            let to = Entity::User(u);
            if let Some(base) = self.base_margin {
                if !self.server.base_delivered.contains(&u)
                    && self.send(Entity::Server, to, &Message::BaseMargin(base))? == Delivery::Delivered
                {
                    self.server.base_delivered.insert(u);
                }
            }
            let from = self.server.final_delivered.get(&u).copied().unwrap_or(0);
            for index in from..self.published.len() {
                let msg = Message::PublishedTree {
                    stage: TreeStage::Final,
                    index: index as u32,
                    text: self.published[index].clone(),
                };
                if self.send(Entity::Server, to, &msg)? == Delivery::Delivered {
                    self.server.final_delivered.insert(u, index + 1);
                }
            }
            self.process_user_inbox(u)?;
        }
        Ok(())
    }

    fn compute_base_margin(&mut self) -> Result<f64> {
        match self.cfg.boost.base_score {
            BaseScore::Fixed(v) => Ok(v),
            BaseScore::Prior => {
                self.request_stats(StatsRequest::LabelPrior, None, Vec::new())?;
                let out = self.secure_aggregate()?;
                Ok(self.cfg.boost.base_margin(out.values[1], out.values[0]))
            }
        }
    }

    /// Builds one tree; aggregation aborts close it early.
    pub fn build_tree(&mut self) -> Result<(CartTree, Vec<LevelRecord>, bool)> {
        let grow = self.cfg.boost.grow_config();
        if self.members.is_empty() || !self.epoch_ready {
            return Ok((self.empty_tree(), Vec::new(), true));
        }
        let candidates = self.candidates.clone();
        let mut rng = self.feature_rng.clone();
        let grown = grow_tree(&mut FedLevels { fed: self }, &candidates, &grow, &mut rng);
        self.feature_rng = rng;
        let grown = grown?;
        Ok((grown.tree, grown.levels, grown.aborted.is_some()))
    }

    fn empty_tree(&self) -> CartTree {
        let b = &self.cfg.boost;
        let mut t = CartTree::new(b.max_depth, b.lambda, b.gamma);
        t.set_leaf(0, 0.0);
        t
    }

    /// Full training run.
    pub fn train(&mut self) -> Result<FedRun> {
        let b = self.cfg.boost.clone();
        let mut model = BoostModel::new(b.learning_rate, 0.0);
        let mut trace = Vec::with_capacity(b.rounds);
        let mut aborted_trees = Vec::new();
        if b.rounds == 0 {
            self.set_round(1);
            self.members = self.participants.clone();
            let base = self.start_epoch().and_then(|()| self.compute_base_margin());
            model.base_score = match base {
                Ok(v) => v,
                Err(Error::RoundAbort { .. }) => b.base_margin(0.0, 0.0),
                Err(e) => return Err(e),
            };
            self.base_margin = Some(model.base_score);
        }
        for k in 0..b.rounds {
            let round = k as u32 + 1;
            self.set_round(round);
            if self.cfg.rejoin {
                for u in std::mem::take(&mut self.offline) {
                    self.bus.reconnect(Entity::User(u));
                    self.events.push(DropoutEvent::Rejoined { round, user: u });
                }
            }
            self.sync_users()?;

            let online: Vec<UserId> = self.participants.iter().copied().filter(|u| self.online(*u)).collect();
            for u in self.cfg.dropout.apply(round, &online) {
                self.pending_drops.insert(u, self.cfg.dropout_phase);
            }
            let mut ok = true;
            if self.cfg.rekey_per_tree || !self.epoch_ready || self.members != online {
                self.members = online;
                match self.start_epoch() {
                    Ok(()) => {}
                    Err(Error::RoundAbort { .. }) => ok = false,
                    Err(e) => return Err(e),
                }
            }
            if ok && self.base_margin.is_none() {
                match self.compute_base_margin() {
                    Ok(base) => self.base_margin = Some(base),
                    Err(Error::RoundAbort { .. }) => ok = false,
                    Err(e) => return Err(e),
                }
            }
            if self.base_margin.is_none() {
                self.base_margin = Some(b.base_margin(0.0, 0.0));
            }
            model.base_score = self.base_margin.expect("set above");
            self.sync_users()?;

            let (tree, levels, aborted) =
                if ok { self.build_tree()? } else { (self.empty_tree(), Vec::new(), true) };
            if aborted {
                aborted_trees.push(k);
            }
            self.published.push(tree.dump());
            model.trees.push(tree);
            trace.push(levels);

            let leftover: Vec<UserId> = self.pending_drops.keys().copied().collect();
            for u in leftover {
                self.disconnect(u);
            }
            if !self.offline.is_empty() {
                self.epoch_ready = false;
            }
            self.sync_users()?;
        }
        Ok(FedRun {
            model,
            trace,
            aborted_trees,
            events: self.events.clone(),
            metrics: self.bus.snapshot_metrics(),
        })
    }
}

/// Level statistics obtained through secure aggregation.
struct FedLevels<'a> {
    fed: &'a mut Federation,
}

impl LevelStatsSource for FedLevels<'_> {
    fn level_stats(&mut self, tree: &CartTree, plan: &LevelPlan) -> Result<Vec<f64>> {
        let candidates: Vec<(u32, f64)> = plan
            .candidates
            .iter()
            .flat_map(|fc| fc.thresholds.iter().map(move |&t| (fc.feature as u32, t)))
            .collect();
        self.fed.request_stats(StatsRequest::Level, Some(tree), candidates)?;
        let out = self.fed.secure_aggregate()?;
        Ok(out.values)
    }
}

/// Splits `rows`/`labels` by a partition into per-user shards.
pub fn shards_from_partition(
    rows: &[Row],
    labels: &[f64],
    partition: &crate::data_io::Partition,
) -> Vec<(UserId, Vec<Row>, Vec<f64>)> {
    partition
        .shards
        .iter()
        .map(|(u, idx)| {
            (*u, idx.iter().map(|&i| rows[i].clone()).collect(), idx.iter().map(|&i| labels[i]).collect())
        })
        .collect()
}
