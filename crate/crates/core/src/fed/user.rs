//! One data holder.

use std::collections::BTreeMap;

use num_bigint::{BigUint, RandBigInt};
use num_traits::One;
use rand_chacha::ChaCha20Rng;

use super::wire::{KeyEntry, Message, StatsRequest, TreeStage};
use crate::bresson::{key_agree, key_gen, KeyPair};
use crate::codec::{encode, FixedPointConfig};
use crate::data_io::Row;
use crate::error::{Error, Result};
use crate::group_math::GroupParams;
use crate::secagg::{mask_encoded, open_seed};
use crate::shamir::{self, KeyShare};
use crate::transport::{aead_decrypt, aead_encrypt, derive_sym_key, Nonce};
use crate::xgboost::grower::{local_level_stats, LevelPlan};
use crate::xgboost::train::compute_gradients;
use crate::xgboost::{CartTree, FeatureCandidates, GradientPair};
use crate::{stream_rng, UserId};

pub struct UserState {
    pub id: UserId,
    params: GroupParams,
    codec: FixedPointConfig,
    rows: Vec<Row>,
    labels: Vec<f64>,
    learning_rate: f64,
    transport: KeyPair,
    mask: KeyPair,
    server_mask: Option<BigUint>,
    threshold: usize,
    directory: BTreeMap<UserId, KeyEntry>,
    pair_keys: BTreeMap<UserId, BigUint>,
    /// Share of each owner's mask key held here, own share included.
    stored_shares: BTreeMap<UserId, KeyShare>,
    session: u64,
    r_u: Option<BigUint>,
    input: Option<Vec<BigUint>>,
    partial_tree: Option<CartTree>,
    margins: Option<Vec<f64>>,
    trees_applied: u32,
    grads: Option<(u32, Vec<GradientPair>)>,
    rng: ChaCha20Rng,
}

impl UserState {
    pub fn new(
        id: UserId,
        rows: Vec<Row>,
        labels: Vec<f64>,
        params: &GroupParams,
        codec: FixedPointConfig,
        learning_rate: f64,
        seed: u64,
    ) -> Self {
        let mut rng = stream_rng(seed, &format!("user-{}", id.0));
        let transport = key_gen(params, &mut rng);
        let mask = key_gen(params, &mut rng);
        UserState {
            id,
            params: params.clone(),
            codec,
            rows,
            labels,
            learning_rate,
            transport,
            mask,
            server_mask: None,
            threshold: 0,
            directory: BTreeMap::new(),
            pair_keys: BTreeMap::new(),
            stored_shares: BTreeMap::new(),
            session: 0,
            r_u: None,
            input: None,
            partial_tree: None,
            margins: None,
            trees_applied: 0,
            grads: None,
            rng,
        }
    }

    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    pub fn trees_applied(&self) -> u32 {
        self.trees_applied
    }

    pub fn has_base_margin(&self) -> bool {
        self.margins.is_some()
    }

    pub fn transport_public(&self) -> &BigUint {
        &self.transport.public
    }

    pub fn mask_public(&self) -> &BigUint {
        &self.mask.public
    }

    /// Private mask key; used by tests that check recovery.
    pub fn mask_private(&self) -> &BigUint {
        &self.mask.private
    }

    pub fn peer_count(&self) -> usize {
        self.directory.keys().filter(|u| **u != self.id).count()
    }

    /// Foreign shares held for the current key epoch.
    pub fn foreign_shares(&self) -> impl Iterator<Item = &KeyShare> {
        self.stored_shares.values().filter(move |s| s.owner != self.id)
    }

    /// Starts a key epoch with a fresh mask key pair.
    pub fn begin_epoch(&mut self) -> Message {
        self.mask = key_gen(&self.params, &mut self.rng);
        self.directory.clear();
        self.pair_keys.clear();
        self.stored_shares.clear();
        self.server_mask = None;
        self.session = 0;
        self.r_u = None;
        Message::PublicKeys(KeyEntry {
            user: self.id,
            transport: self.transport.public.clone(),
            mask: self.mask.public.clone(),
        })
    }

    /// Stores the directory and returns one sealed share per peer.
    pub fn on_directory(
        &mut self,
        server_mask: BigUint,
        threshold: u32,
        entries: Vec<KeyEntry>,
        round: u32,
    ) -> Result<Vec<Message>> {
        let mut directory = BTreeMap::new();
        for e in entries {
            if directory.insert(e.user, e).is_some() {
                return Err(Error::Registration("duplicate user in key directory".into()));
            }
        }
        if !directory.contains_key(&self.id) {
            return Err(Error::Registration(format!("{} missing from key directory", self.id)));
        }
        self.pair_keys = directory
            .iter()
            .filter(|(u, _)| **u != self.id)
            .map(|(u, e)| (*u, key_agree(&self.params, &self.mask.private, &e.mask)))
            .collect();
        self.server_mask = Some(server_mask);
        self.threshold = threshold as usize;
        let holders: Vec<UserId> = directory.keys().copied().collect();
        let shares = shamir::share(
            self.id,
            &self.mask.private,
            self.threshold,
            &holders,
            &self.params.p,
            &mut self.rng,
        )?;
        let mut out = Vec::with_capacity(shares.len());
        for s in shares {
            if s.holder == self.id {
                self.stored_shares.insert(self.id, s);
                continue;
            }
            let key = self.sym_key(&directory[&s.holder]);
            let sealed =
                aead_encrypt(&key, &s.to_bytes(&self.params.p), Nonce::new(round, self.id.0, s.holder.0));
            out.push(Message::ShareCiphertext { owner: self.id, holder: s.holder, sealed });
        }
        self.directory = directory;
        Ok(out)
    }

    fn sym_key(&self, peer: &KeyEntry) -> crate::transport::SymKey {
        derive_sym_key(&self.params, &key_agree(&self.params, &self.transport.private, &peer.transport))
    }

    pub fn on_share(&mut self, owner: UserId, holder: UserId, sealed: &[u8]) -> Result<()> {
        if holder != self.id {
            return Err(Error::Registration(format!("share for {holder} delivered to {}", self.id)));
        }
        let peer = self
            .directory
            .get(&owner)
            .ok_or_else(|| Error::Registration(format!("share from unknown user {owner}")))?;
        let plain = aead_decrypt(&self.sym_key(peer), sealed)?;
        let share = KeyShare::from_bytes(&plain, &self.params.p)?;
        if share.owner != owner || share.holder != self.id {
            return Err(Error::AuthenticationFailed);
        }
        self.stored_shares.insert(owner, share);
        Ok(())
    }

    pub fn on_tree(&mut self, stage: TreeStage, index: u32, text: &str) -> Result<()> {
        let tree = CartTree::parse(text)?;
        match stage {
            TreeStage::Partial => self.partial_tree = Some(tree),
            TreeStage::Final => {
                if index != self.trees_applied {
                    return Err(Error::ProtocolIncomplete(format!(
                        "{} expected tree {}, got {index}",
                        self.id, self.trees_applied
                    )));
                }
                let margins = self
                    .margins
                    .as_mut()
                    .ok_or_else(|| Error::ProtocolIncomplete("tree before base margin".into()))?;
                for (m, x) in margins.iter_mut().zip(&self.rows) {
                    *m += self.learning_rate * tree.output(x);
                }
                self.trees_applied += 1;
                self.partial_tree = None;
            }
        }
        Ok(())
    }

    pub fn on_base_margin(&mut self, base: f64) {
        if self.margins.is_none() {
            self.margins = Some(vec![base; self.rows.len()]);
        }
    }

    fn gradients(&mut self) -> Result<&[GradientPair]> {
        let stale = self.grads.as_ref().is_none_or(|(k, _)| *k != self.trees_applied);
        if stale {
            let margins = self
                .margins
                .as_ref()
                .ok_or_else(|| Error::ProtocolIncomplete("gradients before base margin".into()))?;
            let g = compute_gradients(margins, &self.labels, self.codec.frac_bits);
            self.grads = Some((self.trees_applied, g));
        }
        Ok(&self.grads.as_ref().expect("set above").1)
    }

    /// Computes this user's contribution for the requested statistics.
    pub fn on_candidates(&mut self, request: StatsRequest, candidates: &[(u32, f64)]) -> Result<()> {
        let values = match request {
            StatsRequest::LabelPrior => vec![self.rows.len() as f64, self.labels.iter().sum()],
            StatsRequest::Level => {
                let tree = self
                    .partial_tree
                    .clone()
                    .ok_or_else(|| Error::ProtocolIncomplete("candidates before partial tree".into()))?;
                let mut grouped: Vec<FeatureCandidates> = Vec::new();
                for &(f, t) in candidates {
                    match grouped.last_mut() {
                        Some(g) if g.feature == f as usize => g.thresholds.push(t),
                        _ => grouped.push(FeatureCandidates { feature: f as usize, thresholds: vec![t] }),
                    }
                }
                let plan = LevelPlan { depth: 0, nodes: tree.pending(), candidates: grouped };
                self.gradients()?;
                let grads = &self.grads.as_ref().expect("computed").1;
                local_level_stats(&self.rows, grads, &tree, &plan)
            }
        };
        let encoded = values.iter().map(|&v| encode(v, &self.codec)).collect::<Result<Vec<_>>>()?;
        self.input = Some(encoded);
        Ok(())
    }

    /// Installs an already encoded input vector.
    pub fn set_input(&mut self, encoded: Vec<BigUint>) {
        self.input = Some(encoded);
    }

    pub fn upload(&mut self) -> Result<Message> {
        let input = self
            .input
            .take()
            .ok_or_else(|| Error::ProtocolIncomplete(format!("{} has no input", self.id)))?;
        let server =
            self.server_mask.clone().ok_or_else(|| Error::ProtocolIncomplete("no server key".into()))?;
        let r_u = self.rng.gen_biguint_range(&BigUint::one(), &self.params.ord_g);
        let v = mask_encoded(&self.params, self.id, &input, &r_u, &self.pair_keys, &server, self.session);
        self.r_u = Some(r_u);
        self.session += 1;
        Ok(Message::MaskedVector(v))
    }

    pub fn reveal(&mut self, active: &[UserId]) -> Result<Message> {
        let r_u = self
            .r_u
            .as_ref()
            .ok_or_else(|| Error::ProtocolIncomplete(format!("{} has not uploaded", self.id)))?;
        let registered: Vec<UserId> = self.directory.keys().copied().collect();
        let reveal = open_seed(&self.params, self.id, r_u, &registered, active, &self.stored_shares)?;
        Ok(Message::SeedReveal(reveal))
    }
}
